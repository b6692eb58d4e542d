#include "hskd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>

namespace hskd::metrics {

namespace {

double norm_of(std::span<const double> v) {
    double sq = 0.0;
    for (double x : v) sq += x * x;
    return std::sqrt(sq);
}

double distance(std::span<const double> a, std::span<const double> b) {
    double sq = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = a[k] - b[k];
        sq += d * d;
    }
    return std::sqrt(sq);
}

}  // namespace

double embedding_angle(std::span<const double> z_teacher, std::span<const double> z_student) {
    if (z_teacher.size() != z_student.size()) {
        throw ShapeError("embedding_angle: widths " + std::to_string(z_teacher.size()) + " and " +
                         std::to_string(z_student.size()) + " differ");
    }
    const double na = norm_of(z_teacher);
    const double nb = norm_of(z_student);
    if (na == 0.0 || nb == 0.0) throw std::domain_error("embedding_angle: zero vector");
    double minus = 0.0, plus = 0.0;
    for (std::size_t k = 0; k < z_teacher.size(); ++k) {
        const double a = z_teacher[k] / na;
        const double b = z_student[k] / nb;
        minus += (a - b) * (a - b);
        plus += (a + b) * (a + b);
    }
    return 2.0 * std::atan2(std::sqrt(minus), std::sqrt(plus));
}

std::vector<double> sample_angles(const Tensor& z_teacher, const Tensor& z_student) {
    if (z_teacher.shape() != z_student.shape()) {
        throw ShapeError("sample_angles: teacher " + shape_to_string(z_teacher.shape()) + " vs student " +
                         shape_to_string(z_student.shape()));
    }
    std::vector<double> out;
    out.reserve(z_teacher.rows());
    for (std::size_t i = 0; i < z_teacher.rows(); ++i) {
        try {
            out.push_back(embedding_angle(z_teacher.row(i), z_student.row(i)));
        } catch (const std::domain_error&) {
            throw std::domain_error("embedding_angle: zero vector at sample " + std::to_string(i));
        }
    }
    return out;
}

double mean_angle(const ModelBundle& teacher, const ModelBundle& student, const LabeledDataset& data, Split split) {
    const auto idx = data.indices(split);
    if (idx.empty()) throw std::invalid_argument("mean_angle: empty split");
    if (student.aligned_dim() != teacher.head.in_dim()) {
        throw ShapeError("mean_angle: student provides width " + std::to_string(student.aligned_dim()) +
                         " but teacher embeddings have width " + std::to_string(teacher.head.in_dim()));
    }
    const Tensor x = data.features_of(idx);
    const Tensor z_t = head_input(teacher, x);
    const Tensor z_s = evaluate(student, x).aligned;
    double total = 0.0;
    for (double a : sample_angles(z_t, z_s)) total += a;
    return total / static_cast<double>(idx.size());
}

MscResult msc_score(const EmbeddingSet& set) {
    const Tensor& z = set.vectors;
    const std::size_t n = set.labels.size();
    if (n == 0 || z.rank() != 2 || z.rows() != n) {
        throw ShapeError("msc_score: " + std::to_string(n) + " labels for vectors " + shape_to_string(z.shape()));
    }

    std::map<std::size_t, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < n; ++i) members[set.labels[i]].push_back(i);
    if (members.size() < 2) throw std::invalid_argument("msc_score needs at least two distinct labels");

    const std::size_t d = z.cols();
    std::map<std::size_t, std::vector<double>> centroids;
    for (const auto& [label, idx] : members) {
        std::vector<double> c(d, 0.0);
        for (auto i : idx)
            for (std::size_t k = 0; k < d; ++k) c[k] += z.at(i, k);
        for (auto& v : c) v /= static_cast<double>(idx.size());
        centroids.emplace(label, std::move(c));
    }

    MscResult result;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& own = members.at(set.labels[i]);
        double sigma = 0.0;
        if (own.size() == 1) {
            ++result.singleton_members;
        } else {
            for (auto j : own)
                if (j != i) sigma += distance(z.row(i), z.row(j));
            sigma /= static_cast<double>(own.size() - 1);
        }
        double delta = std::numeric_limits<double>::infinity();
        for (const auto& [label, c] : centroids) {
            if (label == set.labels[i]) continue;
            delta = std::min(delta, distance(z.row(i), c));
        }
        const double denom = std::max(delta, sigma);
        total += denom == 0.0 ? 0.0 : (delta - sigma) / denom;
    }
    result.score = total / static_cast<double>(n);
    return result;
}

double accuracy(const Tensor& probs, std::span<const std::size_t> labels) {
    if (labels.empty() || probs.rows() != labels.size()) {
        throw ShapeError("accuracy: " + std::to_string(labels.size()) + " labels for probabilities " +
                         shape_to_string(probs.shape()));
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto row = probs.row(i);
        std::size_t best = 0;
        for (std::size_t j = 1; j < row.size(); ++j)
            if (row[j] > row[best]) best = j;
        if (best == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

}  // namespace hskd::metrics
