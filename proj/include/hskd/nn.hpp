#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hskd/autodiff.hpp"
#include "hskd/rng.hpp"
#include "hskd/tensor.hpp"

namespace hskd {

// Widths of an MLP backbone plus the classifier size. An empty `hidden` list
// makes the backbone a single linear map input_dim -> embedding_dim.
struct Architecture {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden;
    std::size_t embedding_dim = 0;
    std::size_t num_classes = 0;

    std::string describe() const;
    void validate() const;
    bool operator==(const Architecture&) const = default;
};

// y = x W^T + b with W [out x in], b [out].
class LinearLayer {
public:
    LinearLayer() = default;
    // Uniform init in [-1/sqrt(in), 1/sqrt(in)] for both W and b.
    LinearLayer(std::size_t in_dim, std::size_t out_dim, Rng& rng, const std::string& name);
    LinearLayer(Tensor weight, Tensor bias, const std::string& name);

    std::size_t in_dim() const { return weight_.value.cols(); }
    std::size_t out_dim() const { return weight_.value.rows(); }

    Parameter& weight() { return weight_; }
    Parameter& bias() { return bias_; }
    const Parameter& weight() const { return weight_; }
    const Parameter& bias() const { return bias_; }

    bool trainable() const { return weight_.trainable && bias_.trainable; }
    void set_trainable(bool trainable);
    void rename(const std::string& name);

    Var apply(Graph& g, Var x);
    Var apply(Graph& g, Var x) const;

private:
    Parameter weight_;
    Parameter bias_;
};

// Same shapes and bit-identical W and b.
bool bitwise_equal(const LinearLayer& a, const LinearLayer& b);

class MlpBackbone {
public:
    MlpBackbone() = default;
    MlpBackbone(const Architecture& arch, Rng& rng);

    std::vector<LinearLayer>& layers() { return layers_; }
    const std::vector<LinearLayer>& layers() const { return layers_; }
    std::size_t input_dim() const { return layers_.front().in_dim(); }
    std::size_t embedding_dim() const { return layers_.back().out_dim(); }

    // ReLU between layers, none after the last.
    Var embed(Graph& g, Var x);
    Var embed(Graph& g, Var x) const;

private:
    std::vector<LinearLayer> layers_;
};

struct ClassifierHead {
    LinearLayer layer;

    std::size_t in_dim() const { return layer.in_dim(); }
    std::size_t num_classes() const { return layer.out_dim(); }
    Var logits(Graph& g, Var z) { return layer.apply(g, z); }
    Var logits(Graph& g, Var z) const { return layer.apply(g, z); }
};

// Linear map from the student embedding width to the teacher's. With equal
// widths and identity_if_equal it carries no parameters and returns its input.
class DimensionAdapter {
public:
    DimensionAdapter() = default;
    DimensionAdapter(std::size_t in_dim, std::size_t out_dim, Rng& rng, bool identity_if_equal = true);
    explicit DimensionAdapter(LinearLayer layer) : layer_(std::move(layer)), in_(layer_->in_dim()), out_(layer_->out_dim()) {}

    bool is_identity() const { return !layer_.has_value(); }
    std::size_t in_dim() const { return in_; }
    std::size_t out_dim() const { return out_; }
    std::optional<LinearLayer>& layer() { return layer_; }
    const std::optional<LinearLayer>& layer() const { return layer_; }

    Var apply(Graph& g, Var z);
    Var apply(Graph& g, Var z) const;

private:
    std::optional<LinearLayer> layer_;
    std::size_t in_ = 0;
    std::size_t out_ = 0;
};

// Backbone + classifier. `adapter` maps the embedding into the teacher's
// embedding space (used by the representation loss and the auxiliary head);
// `head_projection` sits in front of a transplanted head whose input width
// differs from the backbone's; `aux_head` is a frozen copy of a teacher head.
struct ModelBundle {
    Architecture arch;
    MlpBackbone backbone;
    ClassifierHead head;
    std::optional<LinearLayer> head_projection;
    std::optional<DimensionAdapter> adapter;
    std::optional<ClassifierHead> aux_head;

    std::size_t aligned_dim() const { return adapter ? adapter->out_dim() : arch.embedding_dim; }

    // Stable order: backbone layers, head_projection, head, adapter, aux_head.
    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;
};

ModelBundle make_bundle(const Architecture& arch, std::uint64_t seed);

// Installs (or replaces) the student-side adapter to `teacher_dim`.
void add_adapter(ModelBundle& bundle, std::size_t teacher_dim, std::uint64_t seed, bool identity_if_equal = true);

class ModelError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Copy of `student` whose aux_head is a frozen deep copy of `teacher_head`.
// A second call replaces the previous aux head.
ModelBundle attach_teacher_head(const ModelBundle& student, const ClassifierHead& teacher_head);

// Copy of `target` whose main head holds `source_head`'s weights, trainable
// iff !freeze. When widths differ, allow_projection inserts a trainable
// head_projection (seeded by `seed`); otherwise it is an error.
ModelBundle transplant_head(const ModelBundle& target, const ClassifierHead& source_head, bool freeze,
                            bool allow_projection = false, std::uint64_t seed = 0);

void freeze(LinearLayer& layer);

struct BundleVars {
    Var embedding;
    Var aligned;
    Var head_input;  // embedding, or its head_projection image
    Var logits;
    std::optional<Var> aux_logits;
};

// Non-const bundles contribute trainable parameters; const bundles enter the
// graph as constants.
BundleVars forward_bundle(Graph& g, ModelBundle& bundle, Var x);
BundleVars forward_bundle(Graph& g, const ModelBundle& bundle, Var x);

struct BundleOutputs {
    Tensor embedding;
    Tensor aligned;
    Tensor head_input;
    Tensor logits;
    Tensor probs;
    std::optional<Tensor> aux_logits;
    std::optional<Tensor> aux_probs;
};

BundleOutputs evaluate(const ModelBundle& bundle, const Tensor& x);
Tensor embed(const ModelBundle& bundle, const Tensor& x);
// The vectors the main head classifies; this is what a teacher exposes to a
// student as its representation.
Tensor head_input(const ModelBundle& bundle, const Tensor& x);
// Softmax of head(z), rows summing to one.
Tensor predict(const ClassifierHead& head, const Tensor& z);

// Row-wise softmax / log-softmax with max subtraction.
Tensor softmax_rows(const Tensor& logits);
Tensor log_softmax_rows(const Tensor& logits);

}  // namespace hskd
