#include "hskd/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>

#include "json.hpp"

namespace hskd {

namespace {

using json = nlohmann::json;

void put_u64(std::ostream& out, std::uint64_t v) {
    std::array<char, 8> b;
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b.data(), 8);
}

void put_u32(std::ostream& out, std::uint32_t v) {
    std::array<char, 4> b;
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b.data(), 4);
}

void put_string(std::ostream& out, const std::string& s) {
    put_u64(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void read_exact(std::istream& in, char* dst, std::size_t n, const char* what) {
    in.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) throw CheckpointError(std::string("truncated checkpoint reading ") + what);
}

std::uint64_t get_u64(std::istream& in, const char* what) {
    std::array<unsigned char, 8> b;
    read_exact(in, reinterpret_cast<char*>(b.data()), 8, what);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

std::uint32_t get_u32(std::istream& in, const char* what) {
    std::array<unsigned char, 4> b;
    read_exact(in, reinterpret_cast<char*>(b.data()), 4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

std::string get_string(std::istream& in, const char* what, std::uint64_t limit = 1u << 26) {
    const auto n = get_u64(in, what);
    if (n > limit) throw CheckpointError(std::string("implausible length for ") + what);
    std::string s(n, '\0');
    read_exact(in, s.data(), n, what);
    return s;
}

json architecture_json(const ModelBundle& b) {
    json j;
    j["input_dim"] = b.arch.input_dim;
    j["hidden"] = b.arch.hidden;
    j["embedding_dim"] = b.arch.embedding_dim;
    j["num_classes"] = b.arch.num_classes;
    j["head_input_dim"] = b.head.in_dim();
    j["head_projection"] = b.head_projection.has_value();
    if (b.adapter) {
        j["adapter"] = {{"in", b.adapter->in_dim()}, {"out", b.adapter->out_dim()}, {"identity", b.adapter->is_identity()}};
    } else {
        j["adapter"] = nullptr;
    }
    j["aux_head"] = b.aux_head.has_value();
    return j;
}

void write_tensor(std::ostream& out, const Parameter& p) {
    put_string(out, p.name);
    out.put(p.trainable ? 1 : 0);
    put_u32(out, static_cast<std::uint32_t>(p.value.rank()));
    for (auto d : p.value.shape()) put_u64(out, d);
    for (double v : p.value.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
}

}  // namespace

void save_checkpoint(const ModelBundle& bundle, const Provenance& provenance, std::ostream& out) {
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    put_u32(out, kCheckpointVersion);
    put_string(out, architecture_json(bundle).dump());
    put_string(out, json{{"config_hash", provenance.config_hash}, {"phase", provenance.phase}}.dump());
    const auto params = bundle.parameters();
    put_u64(out, params.size());
    for (const Parameter* p : params) write_tensor(out, *p);
    if (!out) throw CheckpointError("failed writing checkpoint");
}

void save_checkpoint(const ModelBundle& bundle, const Provenance& provenance, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open '" + path.string() + "' for writing");
    save_checkpoint(bundle, provenance, out);
}

Checkpoint load_checkpoint(std::istream& in) {
    char magic[8];
    read_exact(in, magic, 8, "magic");
    if (std::memcmp(magic, kCheckpointMagic, 8) != 0) throw CheckpointError("not a checkpoint (bad magic bytes)");
    const auto version = get_u32(in, "version");
    if (version != kCheckpointVersion) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    }

    json arch_j, prov_j;
    try {
        arch_j = json::parse(get_string(in, "architecture"));
        prov_j = json::parse(get_string(in, "provenance"));
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
    }

    std::map<std::string, Parameter> tensors;
    const auto count = get_u64(in, "tensor count");
    for (std::uint64_t t = 0; t < count; ++t) {
        Parameter p;
        p.name = get_string(in, "tensor name", 4096);
        char flag = 0;
        read_exact(in, &flag, 1, "trainable flag");
        if (flag != 0 && flag != 1) throw CheckpointError("bad trainable flag for " + p.name);
        p.trainable = flag == 1;
        const auto rank = get_u32(in, "rank");
        if (rank > 2) throw CheckpointError("tensor " + p.name + " has unsupported rank " + std::to_string(rank));
        Shape shape;
        for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(get_u64(in, "dims"));
        std::vector<double> values(shape_numel(shape));
        for (auto& v : values) v = std::bit_cast<double>(get_u64(in, "tensor data"));
        p.value = Tensor(shape, std::move(values));
        if (!tensors.emplace(p.name, std::move(p)).second) throw CheckpointError("duplicate tensor in checkpoint");
    }

    Checkpoint ck;
    try {
        ck.provenance.config_hash = prov_j.at("config_hash").get<std::string>();
        ck.provenance.phase = prov_j.at("phase").get<std::string>();

        ModelBundle& b = ck.bundle;
        b.arch.input_dim = arch_j.at("input_dim").get<std::size_t>();
        b.arch.hidden = arch_j.at("hidden").get<std::vector<std::size_t>>();
        b.arch.embedding_dim = arch_j.at("embedding_dim").get<std::size_t>();
        b.arch.num_classes = arch_j.at("num_classes").get<std::size_t>();
        b.arch.validate();

        auto take = [&](const std::string& name) {
            auto w = tensors.find(name + ".weight");
            auto bias = tensors.find(name + ".bias");
            if (w == tensors.end() || bias == tensors.end()) throw CheckpointError("checkpoint lacks tensors for " + name);
            LinearLayer layer(w->second.value, bias->second.value, name);
            layer.weight().trainable = w->second.trainable;
            layer.bias().trainable = bias->second.trainable;
            tensors.erase(w);
            tensors.erase(bias);
            return layer;
        };

        const std::size_t n_layers = b.arch.hidden.size() + 1;
        for (std::size_t i = 0; i < n_layers; ++i) b.backbone.layers().push_back(take("backbone." + std::to_string(i)));
        if (arch_j.at("head_projection").get<bool>()) b.head_projection = take("head_projection");
        b.head.layer = take("head");
        const auto& a = arch_j.at("adapter");
        if (!a.is_null()) {
            if (a.at("identity").get<bool>()) {
                Rng unused(0);
                b.adapter = DimensionAdapter(a.at("in").get<std::size_t>(), a.at("out").get<std::size_t>(), unused, true);
            } else {
                b.adapter = DimensionAdapter(take("adapter"));
            }
        }
        if (arch_j.at("aux_head").get<bool>()) b.aux_head = ClassifierHead{take("aux_head")};
        if (!tensors.empty()) throw CheckpointError("unexpected tensor '" + tensors.begin()->first + "' in checkpoint");

        // Shapes must chain exactly as the description says.
        std::size_t width = b.arch.input_dim;
        for (std::size_t i = 0; i < n_layers; ++i) {
            const auto& l = b.backbone.layers()[i];
            const std::size_t out = i < b.arch.hidden.size() ? b.arch.hidden[i] : b.arch.embedding_dim;
            if (l.in_dim() != width || l.out_dim() != out) throw CheckpointError("backbone layer " + std::to_string(i) + " has wrong shape");
            width = out;
        }
        const std::size_t head_in = b.head_projection ? b.head_projection->out_dim() : b.arch.embedding_dim;
        if (b.head_projection && b.head_projection->in_dim() != b.arch.embedding_dim) throw CheckpointError("head_projection has wrong shape");
        if (b.head.in_dim() != head_in || b.head.num_classes() != b.arch.num_classes) throw CheckpointError("head has wrong shape");
        if (b.adapter && (b.adapter->in_dim() != b.arch.embedding_dim)) throw CheckpointError("adapter has wrong shape");
        if (b.aux_head && (b.aux_head->in_dim() != b.aligned_dim() || b.aux_head->num_classes() != b.arch.num_classes)) {
            throw CheckpointError("aux_head has wrong shape");
        }
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw CheckpointError(std::string("inconsistent checkpoint: ") + e.what());
    }
    return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
    return load_checkpoint(in);
}

void expect_architecture(const Checkpoint& ckpt, const Architecture& expected, const std::string& what) {
    if (!(ckpt.bundle.arch == expected)) {
        throw CheckpointError(what + " checkpoint holds " + ckpt.bundle.arch.describe() + " but the configuration expects " +
                              expected.describe());
    }
}

}  // namespace hskd
