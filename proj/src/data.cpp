#include "hskd/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "hskd/csv.hpp"
#include "hskd/rng.hpp"

namespace hskd {

std::string to_string(SyntheticKind kind) {
    return kind == SyntheticKind::GaussianBlobs ? "gaussian_blobs" : "concentric_rings";
}

SyntheticKind parse_synthetic_kind(const std::string& text) {
    if (text == "gaussian_blobs" || text == "blobs") return SyntheticKind::GaussianBlobs;
    if (text == "concentric_rings" || text == "rings") return SyntheticKind::ConcentricRings;
    throw std::invalid_argument("kind: unknown dataset kind '" + text + "'");
}

LabeledDataset::LabeledDataset(Tensor features, std::vector<std::size_t> labels, std::vector<long long> label_values)
    : features_(std::move(features)),
      labels_(std::move(labels)),
      splits_(labels_.size(), Split::Train),
      label_values_(std::move(label_values)) {
    if (features_.rank() != 2 || features_.rows() != labels_.size()) {
        throw DataError("dataset has " + std::to_string(labels_.size()) + " labels but features of shape " +
                        shape_to_string(features_.shape()));
    }
    for (auto y : labels_) {
        if (y >= label_values_.size()) throw DataError("label index out of range");
    }
}

std::vector<std::size_t> LabeledDataset::indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < splits_.size(); ++i)
        if (splits_[i] == split) out.push_back(i);
    return out;
}

std::vector<std::size_t> LabeledDataset::labels_of(std::span<const std::size_t> indices) const {
    std::vector<std::size_t> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(labels_.at(i));
    return out;
}

namespace {

template <class T>
void shuffle(std::vector<T>& items, Rng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const std::size_t j = rng.index(i);
        std::swap(items[i - 1], items[j]);
    }
}

}  // namespace

void LabeledDataset::assign_split(std::uint64_t seed, double test_fraction) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw std::invalid_argument("test_fraction must be in (0, 1)");
    Rng rng(seed);
    std::vector<std::vector<std::size_t>> members(num_classes());
    for (std::size_t i = 0; i < labels_.size(); ++i) members[labels_[i]].push_back(i);
    std::fill(splits_.begin(), splits_.end(), Split::Train);
    for (std::size_t c = 0; c < members.size(); ++c) {
        auto& m = members[c];
        if (m.size() < 2) {
            throw DataError("class " + std::to_string(label_values_[c]) +
                            " needs at least 2 samples to appear in both splits");
        }
        shuffle(m, rng);
        auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(m.size()) * test_fraction));
        n_test = std::clamp<std::size_t>(n_test, 1, m.size() - 1);
        for (std::size_t k = 0; k < n_test; ++k) splits_[m[k]] = Split::Test;
    }
}

std::vector<std::string> violations(const SyntheticSpec& spec) {
    std::vector<std::string> out;
    if (spec.num_classes < 2) out.push_back("num_classes: must be >= 2");
    if (spec.dim < 2) out.push_back("dim: must be >= 2");
    if (spec.samples_per_class < 2) out.push_back("samples_per_class: must be >= 2");
    if (!(spec.noise_std > 0.0) || !std::isfinite(spec.noise_std)) out.push_back("noise_std: must be > 0");
    if (!(spec.test_fraction > 0.0 && spec.test_fraction < 1.0)) out.push_back("test_fraction: must be in (0, 1)");
    return out;
}

void validate(const SyntheticSpec& spec) {
    const auto problems = violations(spec);
    if (!problems.empty()) throw std::invalid_argument(problems.front());
}

namespace {

// Rejection-sampled centroids on a sphere; pairwise distance >= 10 sigma.
std::vector<std::vector<double>> blob_centroids(const SyntheticSpec& spec, Rng& rng) {
    const double min_gap = 10.0 * spec.noise_std;
    const double radius = min_gap * static_cast<double>(spec.num_classes);
    std::vector<std::vector<double>> centroids;
    for (int attempt = 0; centroids.size() < spec.num_classes; ++attempt) {
        if (attempt > 100000) throw DataError("could not place separated blob centroids");
        std::vector<double> c(spec.dim);
        double norm = 0.0;
        for (auto& v : c) {
            v = rng.normal();
            norm += v * v;
        }
        norm = std::sqrt(norm);
        if (norm == 0.0) continue;
        for (auto& v : c) v *= radius / norm;
        const bool separated = std::all_of(centroids.begin(), centroids.end(), [&](const auto& other) {
            double d2 = 0.0;
            for (std::size_t k = 0; k < c.size(); ++k) d2 += (c[k] - other[k]) * (c[k] - other[k]);
            return std::sqrt(d2) >= min_gap;
        });
        if (separated) centroids.push_back(std::move(c));
    }
    return centroids;
}

}  // namespace

LabeledDataset generate(const SyntheticSpec& spec) {
    validate(spec);
    Rng rng(derive_seed(spec.seed, "data.generate"));
    const std::size_t n = spec.num_classes * spec.samples_per_class;
    Tensor x(Shape{n, spec.dim});
    std::vector<std::size_t> labels(n);
    std::vector<long long> values(spec.num_classes);
    for (std::size_t c = 0; c < spec.num_classes; ++c) values[c] = static_cast<long long>(c);

    if (spec.kind == SyntheticKind::GaussianBlobs) {
        const auto centroids = blob_centroids(spec, rng);
        for (std::size_t c = 0; c < spec.num_classes; ++c) {
            for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
                const std::size_t i = c * spec.samples_per_class + s;
                labels[i] = c;
                for (std::size_t k = 0; k < spec.dim; ++k) x.at(i, k) = centroids[c][k] + spec.noise_std * rng.normal();
            }
        }
    } else {
        // Class c lives on the circle of radius c + 1 in the first two coordinates;
        // the remaining coordinates are pure noise.
        for (std::size_t c = 0; c < spec.num_classes; ++c) {
            const double radius = 1.0 + static_cast<double>(c);
            for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
                const std::size_t i = c * spec.samples_per_class + s;
                labels[i] = c;
                const double angle = 2.0 * std::numbers::pi * rng.uniform();
                const double r = radius + spec.noise_std * rng.normal();
                x.at(i, 0) = r * std::cos(angle);
                x.at(i, 1) = r * std::sin(angle);
                for (std::size_t k = 2; k < spec.dim; ++k) x.at(i, k) = spec.noise_std * rng.normal();
            }
        }
    }

    LabeledDataset data(std::move(x), std::move(labels), std::move(values));
    data.assign_split(derive_seed(spec.seed, "data.split"), spec.test_fraction);
    return data;
}

LabeledDataset parse_csv(std::istream& in, std::uint64_t split_seed, double test_fraction) {
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw DataError("line 1: empty file, expected header f0,...,label");
    ++line_no;
    const auto header = split_csv_line(line);
    if (header.size() < 2 || header.back() != "label") {
        throw DataError("line 1: header must be f0,...,f{d-1},label");
    }
    for (std::size_t k = 0; k + 1 < header.size(); ++k) {
        if (header[k] != "f" + std::to_string(k)) {
            throw DataError("line 1: expected column 'f" + std::to_string(k) + "', got '" + std::string(header[k]) +
                            "'");
        }
    }
    const std::size_t dim = header.size() - 1;

    std::vector<double> values;
    std::vector<long long> raw_labels;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != dim + 1) {
            throw DataError("line " + std::to_string(line_no) + ": expected " + std::to_string(dim + 1) +
                            " cells, got " + std::to_string(cells.size()));
        }
        for (std::size_t k = 0; k < dim; ++k) {
            double v = 0.0;
            if (!parse_double(cells[k], v)) {
                throw DataError("line " + std::to_string(line_no) + ": non-numeric value '" + std::string(cells[k]) +
                                "' in column f" + std::to_string(k));
            }
            values.push_back(v);
        }
        long long y = 0;
        if (!parse_int64(cells[dim], y)) {
            throw DataError("line " + std::to_string(line_no) + ": label '" + std::string(cells[dim]) +
                            "' is not an integer");
        }
        raw_labels.push_back(y);
    }
    if (raw_labels.empty()) throw DataError("no data rows after header");

    std::map<long long, std::size_t> remap;
    for (auto y : raw_labels) remap.emplace(y, 0);
    std::vector<long long> label_values;
    for (auto& [value, index] : remap) {
        index = label_values.size();
        label_values.push_back(value);
    }
    std::vector<std::size_t> labels;
    labels.reserve(raw_labels.size());
    for (auto y : raw_labels) labels.push_back(remap.at(y));

    LabeledDataset data(Tensor(Shape{raw_labels.size(), dim}, std::move(values)), std::move(labels),
                        std::move(label_values));
    data.assign_split(split_seed, test_fraction);
    return data;
}

LabeledDataset load_csv(const std::filesystem::path& path, std::uint64_t split_seed, double test_fraction) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset " + path.string());
    return parse_csv(in, split_seed, test_fraction);
}

void write_csv(const LabeledDataset& data, std::ostream& out) {
    for (std::size_t k = 0; k < data.dim(); ++k) out << 'f' << k << ',';
    out << "label\n";
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (double v : data.features().row(i)) out << format_double(v) << ',';
        out << data.label_values()[data.labels()[i]] << '\n';
    }
}

void write_csv(const LabeledDataset& data, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write dataset " + path.string());
    write_csv(data, out);
    if (!out) throw DataError("failed writing dataset " + path.string());
}

std::vector<std::vector<std::size_t>> batches(const LabeledDataset& data, Split split, std::size_t batch_size,
                                              std::uint64_t epoch_seed) {
    if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
    auto order = data.indices(split);
    if (order.empty()) throw DataError("cannot batch an empty split");
    Rng rng(epoch_seed);
    shuffle(order, rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t end = std::min(order.size(), start + batch_size);
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

}  // namespace hskd
