#include "hskd/nn.hpp"

#include <cmath>

namespace hskd {

std::string Architecture::describe() const {
    std::string out = "in" + std::to_string(input_dim);
    for (auto w : hidden) out += "-h" + std::to_string(w);
    out += "-e" + std::to_string(embedding_dim) + "-c" + std::to_string(num_classes);
    return out;
}

void Architecture::validate() const {
    std::string problems;
    if (input_dim == 0) problems += " input_dim must be positive;";
    for (std::size_t i = 0; i < hidden.size(); ++i)
        if (hidden[i] == 0) problems += " hidden[" + std::to_string(i) + "] must be positive;";
    if (embedding_dim == 0) problems += " embedding_dim must be positive;";
    if (num_classes < 2) problems += " num_classes must be >= 2;";
    if (!problems.empty()) throw ModelError("invalid architecture " + describe() + ":" + problems);
}

LinearLayer::LinearLayer(std::size_t in_dim, std::size_t out_dim, Rng& rng, const std::string& name) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
    weight_.value = Tensor(Shape{out_dim, in_dim});
    bias_.value = Tensor(Shape{out_dim});
    for (auto& w : weight_.value.data()) w = rng.uniform(-bound, bound);
    for (auto& b : bias_.value.data()) b = rng.uniform(-bound, bound);
    rename(name);
}

LinearLayer::LinearLayer(Tensor weight, Tensor bias, const std::string& name) {
    if (weight.rank() != 2 || bias.rank() != 1 || bias.size() != weight.rows()) {
        throw ShapeError("linear layer '" + name + "': weight " + shape_to_string(weight.shape()) +
                         " does not match bias " + shape_to_string(bias.shape()));
    }
    weight_.value = std::move(weight);
    bias_.value = std::move(bias);
    rename(name);
}

void LinearLayer::set_trainable(bool trainable) {
    weight_.trainable = trainable;
    bias_.trainable = trainable;
}

void LinearLayer::rename(const std::string& name) {
    weight_.name = name + ".weight";
    bias_.name = name + ".bias";
}

Var LinearLayer::apply(Graph& g, Var x) {
    return g.add_row_vector(g.matmul_bt(x, g.parameter(weight_)), g.parameter(bias_));
}

Var LinearLayer::apply(Graph& g, Var x) const {
    return g.add_row_vector(g.matmul_bt(x, g.constant_ref(weight_.value)), g.constant_ref(bias_.value));
}

bool bitwise_equal(const LinearLayer& a, const LinearLayer& b) {
    return bitwise_equal(a.weight().value, b.weight().value) && bitwise_equal(a.bias().value, b.bias().value);
}

void freeze(LinearLayer& layer) { layer.set_trainable(false); }

MlpBackbone::MlpBackbone(const Architecture& arch, Rng& rng) {
    std::size_t in = arch.input_dim;
    for (std::size_t i = 0; i < arch.hidden.size(); ++i) {
        layers_.emplace_back(in, arch.hidden[i], rng, "backbone." + std::to_string(i));
        in = arch.hidden[i];
    }
    layers_.emplace_back(in, arch.embedding_dim, rng, "backbone." + std::to_string(arch.hidden.size()));
}

namespace {

template <class Layers>
Var embed_through(Graph& g, Layers& layers, Var x) {
    Var h = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        h = layers[i].apply(g, h);
        if (i + 1 < layers.size()) h = g.relu(h);
    }
    return h;
}

}  // namespace

Var MlpBackbone::embed(Graph& g, Var x) { return embed_through(g, layers_, x); }
Var MlpBackbone::embed(Graph& g, Var x) const { return embed_through(g, layers_, x); }

DimensionAdapter::DimensionAdapter(std::size_t in_dim, std::size_t out_dim, Rng& rng, bool identity_if_equal)
    : in_(in_dim), out_(out_dim) {
    if (!(identity_if_equal && in_dim == out_dim)) layer_.emplace(in_dim, out_dim, rng, "adapter");
}

Var DimensionAdapter::apply(Graph& g, Var z) { return layer_ ? layer_->apply(g, z) : z; }
Var DimensionAdapter::apply(Graph& g, Var z) const { return layer_ ? layer_->apply(g, z) : z; }

namespace {

template <class Bundle, class Ptr>
std::vector<Ptr> collect(Bundle& b) {
    std::vector<Ptr> out;
    auto add = [&out](auto& layer) {
        out.push_back(&layer.weight());
        out.push_back(&layer.bias());
    };
    for (auto& layer : b.backbone.layers()) add(layer);
    if (b.head_projection) add(*b.head_projection);
    add(b.head.layer);
    if (b.adapter && b.adapter->layer()) add(*b.adapter->layer());
    if (b.aux_head) add(b.aux_head->layer);
    return out;
}

}  // namespace

std::vector<Parameter*> ModelBundle::parameters() { return collect<ModelBundle, Parameter*>(*this); }
std::vector<const Parameter*> ModelBundle::parameters() const {
    return collect<const ModelBundle, const Parameter*>(*this);
}

ModelBundle make_bundle(const Architecture& arch, std::uint64_t seed) {
    arch.validate();
    ModelBundle b;
    b.arch = arch;
    Rng backbone_rng(derive_seed(seed, "init.backbone"));
    b.backbone = MlpBackbone(arch, backbone_rng);
    Rng head_rng(derive_seed(seed, "init.head"));
    b.head.layer = LinearLayer(arch.embedding_dim, arch.num_classes, head_rng, "head");
    return b;
}

void add_adapter(ModelBundle& bundle, std::size_t teacher_dim, std::uint64_t seed, bool identity_if_equal) {
    if (teacher_dim == 0) throw ModelError("adapter target width must be positive");
    Rng rng(derive_seed(seed, "init.adapter"));
    bundle.adapter = DimensionAdapter(bundle.arch.embedding_dim, teacher_dim, rng, identity_if_equal);
}

ModelBundle attach_teacher_head(const ModelBundle& student, const ClassifierHead& teacher_head) {
    if (teacher_head.in_dim() != student.aligned_dim()) {
        throw ModelError("teacher head expects width " + std::to_string(teacher_head.in_dim()) +
                         " but the student provides " + std::to_string(student.aligned_dim()) +
                         (student.adapter ? " after its adapter" : " and has no adapter"));
    }
    if (teacher_head.num_classes() != student.arch.num_classes) {
        throw ModelError("teacher head has " + std::to_string(teacher_head.num_classes()) +
                         " classes, student has " + std::to_string(student.arch.num_classes));
    }
    ModelBundle out = student;
    out.aux_head = teacher_head;
    out.aux_head->layer.rename("aux_head");
    freeze(out.aux_head->layer);
    return out;
}

ModelBundle transplant_head(const ModelBundle& target, const ClassifierHead& source_head, bool freeze_head,
                            bool allow_projection, std::uint64_t seed) {
    if (source_head.num_classes() != target.arch.num_classes) {
        throw ModelError("source head has " + std::to_string(source_head.num_classes()) + " classes, target has " +
                         std::to_string(target.arch.num_classes));
    }
    ModelBundle out = target;
    out.head_projection.reset();
    if (source_head.in_dim() != target.arch.embedding_dim) {
        if (!allow_projection) {
            throw ModelError("cannot transplant head of width " + std::to_string(source_head.in_dim()) +
                             " onto embedding width " + std::to_string(target.arch.embedding_dim) +
                             " without a projection");
        }
        Rng rng(derive_seed(seed, "init.head_projection"));
        out.head_projection = LinearLayer(target.arch.embedding_dim, source_head.in_dim(), rng, "head_projection");
    }
    out.head = source_head;
    out.head.layer.rename("head");
    out.head.layer.set_trainable(!freeze_head);
    return out;
}

namespace {

template <class Bundle>
BundleVars forward_impl(Graph& g, Bundle& b, Var x) {
    BundleVars v;
    v.embedding = b.backbone.embed(g, x);
    v.aligned = b.adapter ? b.adapter->apply(g, v.embedding) : v.embedding;
    v.head_input = b.head_projection ? b.head_projection->apply(g, v.embedding) : v.embedding;
    v.logits = b.head.logits(g, v.head_input);
    if (b.aux_head) v.aux_logits = b.aux_head->logits(g, v.aligned);
    return v;
}

}  // namespace

BundleVars forward_bundle(Graph& g, ModelBundle& bundle, Var x) { return forward_impl(g, bundle, x); }
BundleVars forward_bundle(Graph& g, const ModelBundle& bundle, Var x) { return forward_impl(g, bundle, x); }

Tensor softmax_rows(const Tensor& logits) {
    Graph g;
    return g.forward(g.softmax(g.constant_ref(logits)));
}

Tensor log_softmax_rows(const Tensor& logits) {
    Graph g;
    return g.forward(g.log_softmax(g.constant_ref(logits)));
}

BundleOutputs evaluate(const ModelBundle& bundle, const Tensor& x) {
    if (x.rank() != 2 || x.cols() != bundle.arch.input_dim) {
        throw ShapeError("model " + bundle.arch.describe() + " expects input [batch x " +
                         std::to_string(bundle.arch.input_dim) + "], got " + shape_to_string(x.shape()));
    }
    Graph g;
    const auto v = forward_bundle(g, bundle, g.constant_ref(x));
    const Var probs = g.softmax(v.logits);
    std::optional<Var> aux_probs;
    if (v.aux_logits) aux_probs = g.softmax(*v.aux_logits);

    BundleOutputs out;
    out.probs = g.forward(probs);
    if (aux_probs) out.aux_probs = g.forward(*aux_probs);
    g.forward(v.aligned);
    out.embedding = g.value(v.embedding);
    out.aligned = g.value(v.aligned);
    out.head_input = g.value(v.head_input);
    out.logits = g.value(v.logits);
    if (v.aux_logits) out.aux_logits = g.value(*v.aux_logits);
    return out;
}

Tensor embed(const ModelBundle& bundle, const Tensor& x) {
    if (x.rank() != 2 || x.cols() != bundle.arch.input_dim) {
        throw ShapeError("model " + bundle.arch.describe() + " expects input [batch x " +
                         std::to_string(bundle.arch.input_dim) + "], got " + shape_to_string(x.shape()));
    }
    Graph g;
    return g.forward(bundle.backbone.embed(g, g.constant_ref(x)));
}

Tensor predict(const ClassifierHead& head, const Tensor& z) {
    if (z.rank() != 2 || z.cols() != head.in_dim()) {
        throw ShapeError("head expects [batch x " + std::to_string(head.in_dim()) + "], got " +
                         shape_to_string(z.shape()));
    }
    Graph g;
    return g.forward(g.softmax(head.logits(g, g.constant_ref(z))));
}

}  // namespace hskd

namespace hskd {

Tensor head_input(const ModelBundle& bundle, const Tensor& x) {
    if (x.rank() != 2 || x.cols() != bundle.arch.input_dim) {
        throw ShapeError("model " + bundle.arch.describe() + " expects input [batch x " +
                         std::to_string(bundle.arch.input_dim) + "], got " + shape_to_string(x.shape()));
    }
    Graph g;
    const Var z = bundle.backbone.embed(g, g.constant_ref(x));
    return g.forward(bundle.head_projection ? bundle.head_projection->apply(g, z) : z);
}

}  // namespace hskd
