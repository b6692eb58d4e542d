#include "hskd/cli.hpp"

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "hskd/checkpoint.hpp"
#include "hskd/config.hpp"
#include "hskd/csv.hpp"
#include "hskd/metrics.hpp"
#include "hskd/pipeline.hpp"
#include "json.hpp"

namespace hskd::cli {

namespace fs = std::filesystem;

namespace {

struct Options {
    std::string config_path;
    std::optional<std::string> out_dir;
    std::optional<std::uint64_t> seed;
    // gen-data
    std::optional<std::string> kind;
    std::optional<std::size_t> classes, dim, per_class;
    std::optional<double> noise;
    // analyze
    std::optional<std::string> teacher, student;
};

class RuntimeFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw RuntimeFailure("failed writing '" + path.string() + "'");
}

fs::path prepare_out(const ExperimentConfig& cfg) {
    fs::path dir(cfg.output_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw RuntimeFailure("cannot create output directory '" + dir.string() + "'");
    return dir;
}

std::string seed_suffix(const ExperimentConfig& cfg, std::uint64_t seed) {
    return cfg.run_seeds().size() > 1 ? "_seed" + std::to_string(seed) : "";
}

void apply_overrides(ExperimentConfig& cfg, const Options& o) {
    if (o.out_dir) cfg.output_dir = *o.out_dir;
    if (o.seed) cfg.override_seed(*o.seed);
}

ExperimentConfig load(const Options& o) {
    ExperimentConfig cfg = load_config(o.config_path);
    apply_overrides(cfg, o);
    return cfg;
}

void fail_if(std::vector<std::string> problems) {
    if (!problems.empty()) throw ConfigError(std::move(problems));
}

ModelBundle load_teacher(const ExperimentConfig& cfg, const LabeledDataset& data, const std::string& path) {
    auto ck = load_checkpoint(fs::path(path));
    expect_architecture(ck, cfg.teacher_arch.resolve(data.dim(), data.num_classes()), "teacher");
    return std::move(ck.bundle);
}

double test_accuracy(const ModelBundle& m, const LabeledDataset& data, double alpha_th) {
    const auto idx = data.indices(Split::Test);
    return metrics::accuracy(predict_probs(m, data.features_of(idx), alpha_th), data.labels_of(idx));
}

int cmd_gen_data(const Options& o, std::ostream& out) {
    ExperimentConfig cfg;
    SyntheticSpec spec;
    std::vector<std::string> problems;
    if (!o.config_path.empty()) {
        cfg = load_config(o.config_path);
        if (!cfg.synthetic) problems.push_back("data: gen-data needs a synthetic spec, not a csv path");
        else spec = *cfg.synthetic;
    } else if (!o.kind) {
        problems.push_back("kind: required when no config is given");
    }
    if (o.kind) {
        try {
            spec.kind = parse_synthetic_kind(*o.kind);
        } catch (const std::invalid_argument& e) {
            problems.push_back(e.what());
        }
    }
    if (o.classes) spec.num_classes = *o.classes;
    if (o.dim) spec.dim = *o.dim;
    if (o.per_class) spec.samples_per_class = *o.per_class;
    if (o.noise) spec.noise_std = *o.noise;
    if (o.seed) spec.seed = *o.seed;
    if (o.out_dir) cfg.output_dir = *o.out_dir;
    for (const auto& v : violations(spec)) problems.push_back(v);
    fail_if(std::move(problems));

    const auto dir = prepare_out(cfg);
    std::ostringstream csv;
    write_csv(generate(spec), csv);
    write_text(dir / "data.csv", csv.str());
    out << "wrote " << (dir / "data.csv").string() << " (" << spec.num_classes * spec.samples_per_class << " rows)\n";
    return kExitOk;
}

int cmd_train(const Options& o, std::ostream& out) {
    ExperimentConfig cfg = load(o);
    std::vector<std::string> problems;
    if (cfg.train_role == TrainRole::Teacher && cfg.training.mode != DistillMode::Vanilla) {
        problems.push_back("training.mode: a teacher is trained with vanilla only");
    }
    if (cfg.train_role == TrainRole::Student && cfg.training.mode != DistillMode::Vanilla && !cfg.teacher_checkpoint) {
        problems.push_back("teacher_checkpoint: required for mode " + to_string(cfg.training.mode));
    }
    fail_if(std::move(problems));

    const auto data = load_data(cfg);
    const auto dir = prepare_out(cfg);
    const auto& spec = cfg.train_role == TrainRole::Teacher ? cfg.teacher_arch : cfg.student_arch;
    const Architecture arch = spec.resolve(data.dim(), data.num_classes());

    std::optional<ModelBundle> teacher;
    if (cfg.train_role == TrainRole::Student && cfg.teacher_checkpoint) {
        teacher = load_teacher(cfg, data, *cfg.teacher_checkpoint);
    }
    const std::string hash = config_hash(cfg);
    for (auto seed : cfg.run_seeds()) {
        DistillConfig run = cfg.training;
        run.seed = seed;
        TrainOptions opts;
        opts.metric_every = cfg.metric_every;
        const ModelBundle* t = teacher ? &*teacher : nullptr;
        if (run.mode == DistillMode::Vanilla) {
            opts.reference = t;
            t = nullptr;
        }
        auto result = train_student(run, data, t, arch, opts);
        const std::string sfx = seed_suffix(cfg, seed);
        save_checkpoint(result.student, Provenance{hash, "train"}, dir / ("model" + sfx + ".ckpt"));
        write_text(dir / ("report" + sfx + ".csv"), result.report.to_csv());
        const double acc = result.report.epochs.empty() ? test_accuracy(result.student, data, run.alpha_th)
                                                        : result.report.epochs.back().test_acc;
        out << "seed " << seed << ": " << to_string(run.mode) << " " << arch.describe()
            << " test_acc=" << format_double(acc) << "\n";
    }
    return kExitOk;
}

int cmd_shkd(const Options& o, std::ostream& out) {
    ExperimentConfig cfg = load(o);
    if (!cfg.shkd) throw ConfigError({"shkd: section with phases initial, teacher, final_student is required"});
    const auto data = load_data(cfg);
    const auto dir = prepare_out(cfg);
    const Architecture student_arch = cfg.student_arch.resolve(data.dim(), data.num_classes());
    const Architecture teacher_arch = cfg.teacher_arch.resolve(data.dim(), data.num_classes());
    std::optional<Architecture> final_arch;
    if (cfg.final_student_arch) final_arch = cfg.final_student_arch->resolve(data.dim(), data.num_classes());
    std::optional<ModelBundle> pretrained;
    if (cfg.teacher_checkpoint) pretrained = load_teacher(cfg, data, *cfg.teacher_checkpoint);

    const std::string hash = config_hash(cfg);
    for (auto seed : cfg.run_seeds()) {
        ShkdConfig phases = *cfg.shkd;
        if (cfg.run_seeds().size() > 1) phases.initial.seed = phases.teacher.seed = phases.final_student.seed = seed;
        TrainOptions opts;
        opts.metric_every = cfg.metric_every;
        auto r = shkd_pipeline(phases, data, student_arch, teacher_arch, pretrained ? &*pretrained : nullptr, final_arch, opts);
        const std::string sfx = seed_suffix(cfg, seed);
        const std::pair<const char*, const ModelBundle*> models[] = {
            {"I0", &r.initial_student}, {"I1", &r.teacher}, {"I2", &r.student}};
        for (std::size_t k = 0; k < 3; ++k) {
            const std::string tag = models[k].first;
            save_checkpoint(*models[k].second, Provenance{hash, "shkd-step-" + tag}, dir / ("shkd_step_" + tag + sfx + ".ckpt"));
            write_text(dir / ("report_" + tag + sfx + ".csv"), r.reports[k].to_csv());
        }
        nlohmann::json summary{
            {"config_hash", hash},
            {"head_chain_ok", r.head_chain_ok},
            {"initial_student_test_acc", test_accuracy(r.initial_student, data, phases.initial.alpha_th)},
            {"teacher_test_acc", test_accuracy(r.teacher, data, phases.teacher.alpha_th)},
            {"final_student_test_acc", test_accuracy(r.student, data, phases.final_student.alpha_th)}};
        write_text(dir / ("summary" + sfx + ".json"), summary.dump(2) + "\n");
        out << "seed " << seed << ": head_chain_ok=" << (r.head_chain_ok ? "true" : "false")
            << " final_student_test_acc=" << format_double(summary["final_student_test_acc"].get<double>()) << "\n";
    }
    return kExitOk;
}

int cmd_analyze(const Options& o, std::ostream& out) {
    ExperimentConfig cfg = load(o);
    const auto teacher_path = o.teacher ? o.teacher : cfg.analyze_teacher;
    const auto student_path = o.student ? o.student : cfg.analyze_student;
    std::vector<std::string> problems;
    if (!teacher_path) problems.push_back("analyze.teacher: checkpoint path required");
    if (!student_path) problems.push_back("analyze.student: checkpoint path required");
    fail_if(std::move(problems));

    const auto data = load_data(cfg);
    const auto dir = prepare_out(cfg);
    auto teacher = load_checkpoint(fs::path(*teacher_path));
    auto student = load_checkpoint(fs::path(*student_path));
    for (const auto* ck : {&teacher, &student}) {
        if (ck->bundle.arch.input_dim != data.dim() || ck->bundle.arch.num_classes != data.num_classes()) {
            throw CheckpointError("checkpoint holds " + ck->bundle.arch.describe() + " but the data needs input " +
                                  std::to_string(data.dim()) + " and " + std::to_string(data.num_classes()) + " classes");
        }
    }
    if (student.bundle.aligned_dim() != teacher.bundle.head.in_dim()) {
        throw CheckpointError("student " + student.bundle.arch.describe() + " provides width " +
                              std::to_string(student.bundle.aligned_dim()) + " but teacher " +
                              teacher.bundle.arch.describe() + " exposes width " +
                              std::to_string(teacher.bundle.head.in_dim()));
    }

    const auto idx = data.indices(Split::Test);
    const Tensor x = data.features_of(idx);
    const auto y = data.labels_of(idx);
    const Tensor z_t = head_input(teacher.bundle, x);
    const auto s_out = evaluate(student.bundle, x);
    const auto angles = metrics::sample_angles(z_t, s_out.aligned);

    std::ostringstream samples;
    samples << "index,label,angle_rad,angle_deg\n";
    double total = 0.0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        total += angles[k];
        samples << idx[k] << ',' << data.label_values()[y[k]] << ',' << format_double(angles[k]) << ','
                << format_double(angles[k] * 180.0 / std::numbers::pi) << '\n';
    }
    const double mean = total / static_cast<double>(idx.size());
    write_text(dir / "analysis_samples.csv", samples.str());

    const double alpha_th = cfg.training.alpha_th;
    std::ostringstream summary;
    summary << "metric,value\n"
            << "n_samples," << idx.size() << '\n'
            << "mean_angle_rad," << format_double(mean) << '\n'
            << "mean_angle_deg," << format_double(mean * 180.0 / std::numbers::pi) << '\n'
            << "student_msc," << format_double(metrics::msc_score({s_out.aligned, y}).score) << '\n'
            << "teacher_msc," << format_double(metrics::msc_score({z_t, y}).score) << '\n'
            << "student_test_acc," << format_double(test_accuracy(student.bundle, data, alpha_th)) << '\n'
            << "teacher_test_acc," << format_double(test_accuracy(teacher.bundle, data, alpha_th)) << '\n';
    write_text(dir / "analysis_summary.csv", summary.str());
    out << "mean_angle_rad=" << format_double(mean) << "\n";
    return kExitOk;
}

int cmd_ablate(const Options& o, std::ostream& out) {
    ExperimentConfig cfg = load(o);
    std::vector<std::string> problems;
    if (!cfg.shkd) problems.push_back("shkd: section with phases initial, teacher, final_student is required");
    if (cfg.ablation_widths.empty()) problems.push_back("ablation.widths: at least one width is required");
    fail_if(std::move(problems));

    const auto data = load_data(cfg);
    const auto dir = prepare_out(cfg);
    std::vector<Architecture> initial;
    for (auto w : cfg.ablation_widths) {
        initial.push_back(Architecture{data.dim(), {w}, cfg.student_arch.embedding_dim, data.num_classes()});
    }
    const Architecture teacher_arch = cfg.teacher_arch.resolve(data.dim(), data.num_classes());
    const Architecture final_arch =
        cfg.final_student_arch.value_or(cfg.student_arch).resolve(data.dim(), data.num_classes());
    TrainOptions opts;
    opts.metric_every = cfg.metric_every;
    const auto rows = capacity_ablation(initial, teacher_arch, final_arch, data, *cfg.shkd, opts);

    std::ostringstream csv;
    csv << "width,teacher_test_acc,final_student_test_acc\n";
    for (std::size_t k = 0; k < rows.size(); ++k) {
        csv << cfg.ablation_widths[k] << ',' << format_double(rows[k].teacher_test_acc) << ','
            << format_double(rows[k].final_student_test_acc) << '\n';
    }
    write_text(dir / "ablation.csv", csv.str());
    out << csv.str();
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Teacher/student head-sharing distillation experiments"};
    app.require_subcommand(1);
    Options o;

    auto common = [&](CLI::App* sub, bool config_required) {
        auto* c = sub->add_option("config", o.config_path, "experiment config (JSON)");
        if (config_required) c->required();
        sub->add_option("--out", o.out_dir, "output directory");
        sub->add_option("--seed", o.seed, "seed override");
    };
    auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset as CSV");
    common(gen, false);
    gen->add_option("--kind", o.kind, "gaussian_blobs or concentric_rings");
    gen->add_option("--classes", o.classes, "number of classes");
    gen->add_option("--dim", o.dim, "feature dimension");
    gen->add_option("--per-class", o.per_class, "samples per class");
    gen->add_option("--noise", o.noise, "noise standard deviation");
    auto* train = app.add_subcommand("train", "train one model and write checkpoint + report");
    common(train, true);
    auto* shkd = app.add_subcommand("shkd", "run the three-step student-head pipeline");
    common(shkd, true);
    auto* analyze = app.add_subcommand("analyze", "angle and clustering analysis of two checkpoints");
    common(analyze, true);
    analyze->add_option("--teacher", o.teacher, "teacher checkpoint");
    analyze->add_option("--student", o.student, "student checkpoint");
    auto* ablate = app.add_subcommand("ablate", "initial-student capacity ablation");
    common(ablate, true);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitValidation;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(o, out);
        if (train->parsed()) return cmd_train(o, out);
        if (shkd->parsed()) return cmd_shkd(o, out);
        if (analyze->parsed()) return cmd_analyze(o, out);
        if (ablate->parsed()) return cmd_ablate(o, out);
    } catch (const ConfigError& e) {
        err << "invalid configuration:\n";
        for (const auto& p : e.problems()) err << "  " << p << "\n";
        return kExitValidation;
    } catch (const ModelError& e) {
        err << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitValidation;
}

}  // namespace hskd::cli
