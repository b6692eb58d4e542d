#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hskd/data.hpp"
#include "hskd/nn.hpp"
#include "hskd/tensor.hpp"

namespace hskd::metrics {

// Angle in radians between two nonzero vectors, in [0, pi]. Evaluated as
// 2 atan2(|a^ - b^|, |a^ + b^|) on the unit vectors, which is arccos of the
// cosine similarity without its loss of precision near 0 and pi.
double embedding_angle(std::span<const double> z_teacher, std::span<const double> z_student);

// Row-wise angles between teacher embeddings and (adapted) student embeddings.
std::vector<double> sample_angles(const Tensor& z_teacher, const Tensor& z_student);

// Mean teacher/student angle over a split. The student's adapter maps it into
// the teacher's embedding space; without one the widths must already agree.
double mean_angle(const ModelBundle& teacher, const ModelBundle& student, const LabeledDataset& data,
                  Split split = Split::Test);

struct EmbeddingSet {
    Tensor vectors;                   // [N x d]
    std::vector<std::size_t> labels;  // [N]
};

struct MscResult {
    double score = 0.0;
    // Members of single-sample classes; their intra-class distance is taken as 0.
    std::size_t singleton_members = 0;
};

// Mean silhouette with centroid separation: per sample
//   s = (delta - sigma) / max(delta, sigma)
// sigma = mean distance to the other members of its class,
// delta = min distance to the centroid of any other class, and 0/0 -> 0.
MscResult msc_score(const EmbeddingSet& set);

// Fraction of rows whose argmax (lowest index on ties) equals the label.
double accuracy(const Tensor& probs, std::span<const std::size_t> labels);

}  // namespace hskd::metrics
