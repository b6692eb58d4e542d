#include "hskd/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "hskd/rng.hpp"
#include "json.hpp"

namespace hskd {

using json = nlohmann::json;

Architecture ArchSpec::resolve(std::size_t input_dim, std::size_t num_classes) const {
    return Architecture{input_dim, hidden, embedding_dim, num_classes};
}

namespace {

// Reads typed fields out of one JSON object, recording problems instead of
// throwing and flagging keys nobody asked for.
class Reader {
public:
    Reader(const json& obj, std::string path, std::vector<std::string>& problems)
        : obj_(obj), path_(std::move(path)), problems_(problems) {
        if (!obj_.is_object()) problem("", "must be an object");
    }

    bool has(const std::string& key) const { return obj_.is_object() && obj_.contains(key); }

    const json* raw(const std::string& key) {
        seen_.insert(key);
        if (!has(key)) return nullptr;
        return &obj_.at(key);
    }

    template <class T>
    void read(const std::string& key, T& out) {
        const json* v = raw(key);
        if (!v) return;
        if (!matches<T>(*v)) {
            problem(key, std::string("expected ") + type_name<T>());
            return;
        }
        out = v->get<T>();
    }

    void require(const std::string& key) {
        if (!has(key)) problem(key, "is required");
    }

    // Call after all reads.
    void finish() {
        if (!obj_.is_object()) return;
        for (const auto& [key, _] : obj_.items()) {
            if (!seen_.count(key)) problem(key, "unknown key");
        }
    }

    std::string field(const std::string& key) const { return path_.empty() ? key : key.empty() ? path_ : path_ + "." + key; }
    void problem(const std::string& key, const std::string& reason) { problems_.push_back(field(key) + ": " + reason); }

private:
    template <class T>
    static bool matches(const json& v) {
        if constexpr (std::is_same_v<T, bool>) return v.is_boolean();
        else if constexpr (std::is_same_v<T, std::string>) return v.is_string();
        else if constexpr (std::is_same_v<T, double>) return v.is_number();
        else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
            if (!v.is_array()) return false;
            for (const auto& e : v)
                if (!e.is_number_unsigned()) return false;
            return true;
        } else if constexpr (std::is_same_v<T, std::vector<std::uint64_t>>) {
            if (!v.is_array()) return false;
            for (const auto& e : v)
                if (!e.is_number_unsigned()) return false;
            return true;
        } else return v.is_number_unsigned();
    }

    template <class T>
    static const char* type_name() {
        if constexpr (std::is_same_v<T, bool>) return "a boolean";
        else if constexpr (std::is_same_v<T, std::string>) return "a string";
        else if constexpr (std::is_same_v<T, double>) return "a number";
        else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) return "an array of non-negative integers";
        else if constexpr (std::is_same_v<T, std::vector<std::uint64_t>>) return "an array of non-negative integers";
        else return "a non-negative integer";
    }

    const json& obj_;
    std::string path_;
    std::vector<std::string>& problems_;
    std::set<std::string> seen_;
};

template <class Enum, class Parse>
void read_enum(Reader& r, const std::string& key, Enum& out, Parse parse) {
    const json* v = r.raw(key);
    if (!v) return;
    if (!v->is_string()) {
        r.problem(key, "expected a string");
        return;
    }
    try {
        out = parse(v->get<std::string>());
    } catch (const std::invalid_argument& e) {
        std::string msg = e.what();
        const auto colon = msg.find(": ");
        r.problem(key, colon == std::string::npos ? msg : msg.substr(colon + 2));
    }
}

void read_distill(const json& j, const std::string& path, DistillConfig& c, std::vector<std::string>& problems) {
    Reader r(j, path, problems);
    read_enum(r, "mode", c.mode, parse_distill_mode);
    r.read("alpha", c.alpha);
    r.read("beta", c.beta);
    r.read("alpha_th", c.alpha_th);
    r.read("tau", c.tau);
    r.read("squared_l2e", c.squared_l2e);
    read_enum(r, "optimizer", c.optimizer, parse_optimizer);
    r.read("lr", c.lr);
    read_enum(r, "lr_schedule", c.lr_schedule, parse_lr_schedule);
    r.read("epochs", c.epochs);
    r.read("batch_size", c.batch_size);
    r.read("seed", c.seed);
    r.read("freeze_student_head", c.freeze_student_head);
    r.finish();
}

json distill_json(const DistillConfig& c) {
    return json{{"mode", to_string(c.mode)},
                {"alpha", c.alpha},
                {"beta", c.beta},
                {"alpha_th", c.alpha_th},
                {"tau", c.tau},
                {"squared_l2e", c.squared_l2e},
                {"optimizer", to_string(c.optimizer)},
                {"lr", c.lr},
                {"lr_schedule", to_string(c.lr_schedule)},
                {"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"seed", c.seed},
                {"freeze_student_head", c.freeze_student_head}};
}

void read_arch(const json& j, const std::string& path, ArchSpec& a, std::vector<std::string>& problems) {
    Reader r(j, path, problems);
    r.require("hidden");
    r.require("embedding_dim");
    r.read("hidden", a.hidden);
    r.read("embedding_dim", a.embedding_dim);
    r.finish();
}

json arch_json(const ArchSpec& a) { return json{{"hidden", a.hidden}, {"embedding_dim", a.embedding_dim}}; }

void arch_violations(const ArchSpec& a, const std::string& path, std::vector<std::string>& out) {
    if (a.embedding_dim == 0) out.push_back(path + ".embedding_dim: must be >= 1");
    for (std::size_t i = 0; i < a.hidden.size(); ++i) {
        if (a.hidden[i] == 0) out.push_back(path + ".hidden[" + std::to_string(i) + "]: must be >= 1");
    }
}

}  // namespace

std::vector<std::string> ExperimentConfig::violations() const {
    std::vector<std::string> out;
    if (synthetic.has_value() == csv_path.has_value()) out.push_back("data: give either a synthetic spec or a csv path");
    if (synthetic) {
        for (const auto& v : hskd::violations(*synthetic)) out.push_back("data." + v);
    } else if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
        out.push_back("data.test_fraction: must be in (0, 1)");
    }
    arch_violations(teacher_arch, "teacher_arch", out);
    arch_violations(student_arch, "student_arch", out);
    if (final_student_arch) arch_violations(*final_student_arch, "final_student_arch", out);
    for (const auto& v : training.violations()) out.push_back("training." + v);
    if (shkd) {
        for (const auto& v : shkd->violations(teacher_checkpoint.has_value())) out.push_back("shkd." + v);
    }
    for (std::size_t i = 0; i < ablation_widths.size(); ++i) {
        if (ablation_widths[i] == 0) out.push_back("ablation.widths[" + std::to_string(i) + "]: must be >= 1");
    }
    if (output_dir.empty()) out.push_back("output_dir: must not be empty");
    if (metric_every == 0) out.push_back("metric_every: must be >= 1");
    return out;
}

std::vector<std::uint64_t> ExperimentConfig::run_seeds() const {
    return seeds.empty() ? std::vector<std::uint64_t>{training.seed} : seeds;
}

void ExperimentConfig::override_seed(std::uint64_t seed) {
    training.seed = seed;
    if (shkd) {
        shkd->initial.seed = seed;
        shkd->teacher.seed = seed;
        shkd->final_student.seed = seed;
    }
    seeds.clear();
}

bool ExperimentConfig::operator==(const ExperimentConfig& o) const { return dump_config(*this) == dump_config(o); }

ExperimentConfig parse_config(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError({std::string("config: not valid JSON (") + e.what() + ")"});
    }

    std::vector<std::string> problems;
    ExperimentConfig cfg;
    Reader r(root, "", problems);

    std::size_t version = 0;
    r.require("version");
    r.read("version", version);
    if (r.has("version") && version != static_cast<std::size_t>(kConfigVersion)) {
        problems.push_back("version: unsupported version " + std::to_string(version) + ", expected " +
                           std::to_string(kConfigVersion));
    }

    r.require("data");
    if (const json* d = r.raw("data")) {
        Reader dr(*d, "data", problems);
        if (dr.has("csv")) {
            std::string path;
            dr.read("csv", path);
            cfg.csv_path = path;
            dr.read("split_seed", cfg.split_seed);
            dr.read("test_fraction", cfg.test_fraction);
        } else {
            SyntheticSpec s;
            dr.require("kind");
            read_enum(dr, "kind", s.kind, parse_synthetic_kind);
            dr.read("num_classes", s.num_classes);
            dr.read("dim", s.dim);
            dr.read("samples_per_class", s.samples_per_class);
            dr.read("noise_std", s.noise_std);
            dr.read("seed", s.seed);
            dr.read("test_fraction", s.test_fraction);
            cfg.synthetic = s;
            cfg.test_fraction = s.test_fraction;
        }
        dr.finish();
    }

    if (const json* a = r.raw("teacher_arch")) read_arch(*a, "teacher_arch", cfg.teacher_arch, problems);
    if (const json* a = r.raw("student_arch")) read_arch(*a, "student_arch", cfg.student_arch, problems);
    if (const json* a = r.raw("final_student_arch")) {
        ArchSpec spec;
        read_arch(*a, "final_student_arch", spec, problems);
        cfg.final_student_arch = spec;
    }
    if (const json* t = r.raw("training")) read_distill(*t, "training", cfg.training, problems);

    if (const json* role = r.raw("train_role")) {
        if (*role == "student") cfg.train_role = TrainRole::Student;
        else if (*role == "teacher") cfg.train_role = TrainRole::Teacher;
        else problems.push_back("train_role: expected student or teacher");
    }
    std::string path;
    if (r.has("teacher_checkpoint")) {
        r.read("teacher_checkpoint", path);
        cfg.teacher_checkpoint = path;
    }

    if (const json* s = r.raw("shkd")) {
        Reader sr(*s, "shkd", problems);
        ShkdConfig shkd{cfg.training, cfg.training, cfg.training};
        const std::pair<const char*, DistillConfig*> phases[] = {
            {"initial", &shkd.initial}, {"teacher", &shkd.teacher}, {"final_student", &shkd.final_student}};
        for (const auto& [name, target] : phases) {
            if (const json* p = sr.raw(name)) {
                read_distill(*p, sr.field(name), *target, problems);
            } else {
                sr.problem(name, "missing phase section");
            }
        }
        sr.finish();
        cfg.shkd = shkd;
    }

    if (const json* a = r.raw("ablation")) {
        Reader ar(*a, "ablation", problems);
        ar.require("widths");
        ar.read("widths", cfg.ablation_widths);
        ar.finish();
    }

    if (const json* a = r.raw("analyze")) {
        Reader ar(*a, "analyze", problems);
        std::string p;
        if (ar.has("teacher")) {
            ar.read("teacher", p);
            cfg.analyze_teacher = p;
        }
        if (ar.has("student")) {
            ar.read("student", p);
            cfg.analyze_student = p;
        }
        ar.finish();
    }

    r.read("output_dir", cfg.output_dir);
    r.read("metric_every", cfg.metric_every);
    r.read("seeds", cfg.seeds);
    r.finish();

    // Semantic checks on fields already reported (or under a reported parent) add only noise.
    auto field_of = [](const std::string& p) { return p.substr(0, p.find(": ")); };
    const std::size_t structural = problems.size();
    for (auto& v : cfg.violations()) {
        const std::string f = field_of(v);
        const bool covered = std::any_of(problems.begin(), problems.begin() + structural, [&](const std::string& p) {
            const std::string g = field_of(p);
            return f == g || (f.size() > g.size() && f.compare(0, g.size(), g) == 0 && f[g.size()] == '.');
        });
        if (!covered) problems.push_back(v);
    }
    if (!problems.empty()) throw ConfigError(std::move(problems));
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError({"config: cannot read '" + path.string() + "'"});
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config(text.str());
}

std::string dump_config(const ExperimentConfig& cfg) {
    json root;
    root["version"] = kConfigVersion;
    if (cfg.synthetic) {
        const auto& s = *cfg.synthetic;
        root["data"] = json{{"kind", to_string(s.kind)},
                            {"num_classes", s.num_classes},
                            {"dim", s.dim},
                            {"samples_per_class", s.samples_per_class},
                            {"noise_std", s.noise_std},
                            {"seed", s.seed},
                            {"test_fraction", s.test_fraction}};
    } else {
        root["data"] = json{{"csv", cfg.csv_path.value_or("")},
                            {"split_seed", cfg.split_seed},
                            {"test_fraction", cfg.test_fraction}};
    }
    root["teacher_arch"] = arch_json(cfg.teacher_arch);
    root["student_arch"] = arch_json(cfg.student_arch);
    if (cfg.final_student_arch) root["final_student_arch"] = arch_json(*cfg.final_student_arch);
    root["training"] = distill_json(cfg.training);
    root["train_role"] = cfg.train_role == TrainRole::Student ? "student" : "teacher";
    if (cfg.teacher_checkpoint) root["teacher_checkpoint"] = *cfg.teacher_checkpoint;
    if (cfg.shkd) {
        root["shkd"] = json{{"initial", distill_json(cfg.shkd->initial)},
                            {"teacher", distill_json(cfg.shkd->teacher)},
                            {"final_student", distill_json(cfg.shkd->final_student)}};
    }
    if (!cfg.ablation_widths.empty()) root["ablation"] = json{{"widths", cfg.ablation_widths}};
    if (cfg.analyze_teacher || cfg.analyze_student) {
        json a = json::object();
        if (cfg.analyze_teacher) a["teacher"] = *cfg.analyze_teacher;
        if (cfg.analyze_student) a["student"] = *cfg.analyze_student;
        root["analyze"] = a;
    }
    root["output_dir"] = cfg.output_dir;
    root["metric_every"] = cfg.metric_every;
    if (!cfg.seeds.empty()) root["seeds"] = cfg.seeds;
    return root.dump(2) + "\n";
}

std::string config_hash(const ExperimentConfig& cfg) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(dump_config(cfg))));
    return buf;
}

LabeledDataset load_data(const ExperimentConfig& cfg) {
    if (cfg.synthetic) return generate(*cfg.synthetic);
    if (!cfg.csv_path) throw ConfigError({"data: no data source"});
    return load_csv(*cfg.csv_path, cfg.split_seed, cfg.test_fraction);
}

}  // namespace hskd
