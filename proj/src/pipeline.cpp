#include "hskd/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <ostream>
#include <sstream>

#include "hskd/csv.hpp"
#include "hskd/metrics.hpp"
#include "hskd/rng.hpp"

namespace hskd {

std::string to_string(DistillMode mode) {
    switch (mode) {
        case DistillMode::Vanilla: return "vanilla";
        case DistillMode::Kd: return "kd";
        case DistillMode::L2e: return "l2e";
        case DistillMode::ThKd: return "th_kd";
    }
    return "unknown";
}

DistillMode parse_distill_mode(const std::string& text) {
    if (text == "vanilla") return DistillMode::Vanilla;
    if (text == "kd") return DistillMode::Kd;
    if (text == "l2e") return DistillMode::L2e;
    if (text == "th_kd") return DistillMode::ThKd;
    throw std::invalid_argument("mode: expected vanilla, kd, l2e or th_kd, got '" + text + "'");
}

namespace {

std::string join(const std::vector<std::string>& parts) {
    std::string out;
    for (const auto& p : parts) {
        if (!out.empty()) out += "; ";
        out += p;
    }
    return out;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::invalid_argument("invalid configuration: " + join(problems)), problems_(std::move(problems)) {}

std::vector<std::string> DistillConfig::violations() const {
    std::vector<std::string> out;
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) out.push_back("alpha: must be finite and >= 0");
    if (!(beta >= 0.0) || !std::isfinite(beta)) out.push_back("beta: must be finite and >= 0");
    if (!(alpha_th >= 0.0 && alpha_th <= 1.0)) out.push_back("alpha_th: must lie in [0, 1]");
    if (!(tau > 0.0) || !std::isfinite(tau)) out.push_back("tau: must be finite and > 0");
    if (!(lr > 0.0) || !std::isfinite(lr)) out.push_back("lr: must be finite and > 0");
    if (batch_size == 0) out.push_back("batch_size: must be >= 1");
    return out;
}

void DistillConfig::validate() const {
    auto problems = violations();
    if (!problems.empty()) throw ConfigError(std::move(problems));
}

losses::ObjectiveSettings DistillConfig::objective() const {
    losses::ObjectiveSettings s;
    s.alpha = mode == DistillMode::Vanilla ? 0.0 : alpha;
    s.beta = (mode == DistillMode::Vanilla || mode == DistillMode::Kd) ? 0.0 : beta;
    s.alpha_th = alpha_th;
    s.tau = tau;
    s.squared_l2e = squared_l2e;
    return s;
}

void TrainReport::write_csv(std::ostream& out) const {
    out << kCsvHeader << '\n';
    for (const auto& r : epochs) {
        out << r.epoch << ',' << format_double(r.ce) << ',' << format_double(r.kd) << ',' << format_double(r.rep)
            << ',' << format_double(r.total) << ',' << format_double(r.train_acc) << ','
            << format_double(r.test_acc) << ',' << format_double(r.mean_angle) << ','
            << format_double(r.mean_angle * 180.0 / std::numbers::pi) << ',' << format_double(r.msc) << '\n';
    }
}

std::string TrainReport::to_csv() const {
    std::ostringstream out;
    write_csv(out);
    return out.str();
}

Tensor combine_head_predictions(const Tensor& p_s, const Tensor& p_s_th, double alpha_th) {
    if (p_s.shape() != p_s_th.shape()) {
        throw ShapeError("combine_head_predictions: shapes " + shape_to_string(p_s.shape()) + " and " +
                         shape_to_string(p_s_th.shape()) + " differ");
    }
    if (!(alpha_th >= 0.0 && alpha_th <= 1.0)) throw std::invalid_argument("alpha_th must lie in [0, 1]");
    Tensor out = p_s;
    auto o = out.data();
    auto t = p_s_th.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = (1.0 - alpha_th) * o[i] + alpha_th * t[i];
    return out;
}

Tensor predict_probs(const ModelBundle& bundle, const Tensor& x, double alpha_th) {
    auto out = evaluate(bundle, x);
    if (out.aux_probs) return combine_head_predictions(out.probs, *out.aux_probs, alpha_th);
    return out.probs;
}

ModelBundle prepare_student(const DistillConfig& cfg, const Architecture& student_arch, const ModelBundle* teacher,
                            const ModelBundle* reference) {
    cfg.validate();
    if (cfg.mode != DistillMode::Vanilla && !teacher) {
        throw ConfigError({"teacher: mode " + to_string(cfg.mode) + " needs a teacher"});
    }
    ModelBundle student = make_bundle(student_arch, cfg.seed);
    if (const ModelBundle* target = teacher ? teacher : reference) {
        if (target->arch.input_dim != student_arch.input_dim || target->arch.num_classes != student_arch.num_classes) {
            throw ModelError("teacher " + target->arch.describe() + " and student " + student_arch.describe() +
                             " disagree on input or class count");
        }
        add_adapter(student, target->head.in_dim(), cfg.seed);
    }
    if (cfg.mode == DistillMode::ThKd) {
        student = attach_teacher_head(student, teacher->head);
        if (cfg.freeze_student_head) student.head.layer.set_trainable(false);
    }
    return student;
}

TrainResult train_student(const DistillConfig& cfg, const LabeledDataset& data, const ModelBundle* teacher,
                          const Architecture& student_arch, const TrainOptions& options) {
    return train_bundle(cfg, data, teacher, prepare_student(cfg, student_arch, teacher, options.reference), options);
}

TrainResult train_bundle(const DistillConfig& cfg, const LabeledDataset& data, const ModelBundle* teacher,
                         ModelBundle student, const TrainOptions& options) {
    cfg.validate();
    if (cfg.mode != DistillMode::Vanilla && !teacher) {
        throw ConfigError({"teacher: mode " + to_string(cfg.mode) + " needs a teacher"});
    }
    if (cfg.mode == DistillMode::ThKd && !student.aux_head) {
        throw ModelError("th_kd needs a student with the teacher head attached");
    }
    if (student.arch.input_dim != data.dim() || student.arch.num_classes != data.num_classes()) {
        throw ModelError("student " + student.arch.describe() + " does not fit data with " +
                         std::to_string(data.dim()) + " features and " + std::to_string(data.num_classes()) +
                         " classes");
    }
    if (teacher && student.aligned_dim() != teacher->head.in_dim()) {
        throw ModelError("student " + student.arch.describe() + " provides width " +
                         std::to_string(student.aligned_dim()) + " but teacher " + teacher->arch.describe() +
                         " exposes width " + std::to_string(teacher->head.in_dim()));
    }
    const ModelBundle* angle_ref = teacher ? teacher : options.reference;
    if (angle_ref && student.aligned_dim() != angle_ref->head.in_dim()) {
        throw ModelError("reference model exposes width " + std::to_string(angle_ref->head.in_dim()) +
                         " but the student provides " + std::to_string(student.aligned_dim()));
    }

    const auto start = std::chrono::steady_clock::now();
    const auto settings = cfg.objective();
    const std::size_t num_classes = data.num_classes();

    Tensor teacher_logits, teacher_embedding;
    if (teacher) {
        auto out = evaluate(*teacher, data.features());
        teacher_logits = std::move(out.logits);
        teacher_embedding = std::move(out.head_input);
    }

    const auto train_idx = data.indices(Split::Train);
    const auto test_idx = data.indices(Split::Test);
    const Tensor x_train = data.features_of(train_idx);
    const Tensor x_test = data.features_of(test_idx);
    const auto y_train = data.labels_of(train_idx);
    const auto y_test = data.labels_of(test_idx);

    const std::size_t steps_per_epoch = (train_idx.size() + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_steps = steps_per_epoch * cfg.epochs;
    const std::size_t every = options.metric_every == 0 ? 1 : options.metric_every;

    Optimizer optimizer(cfg.optimizer, student.parameters());
    TrainResult result;
    std::size_t step = 0;
    double angle = 0.0, msc = 0.0;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch;
        std::size_t seen = 0;
        for (const auto& batch : batches(data, Split::Train, cfg.batch_size, derive_seed(cfg.seed, "data.batches", epoch))) {
            const std::vector<std::size_t> labels = data.labels_of(batch);
            Graph g;
            const Var x = g.constant(data.features_of(batch));
            const BundleVars vars = forward_bundle(g, student, x);
            std::optional<losses::TeacherTargets> targets;
            if (teacher) targets = losses::TeacherTargets{teacher_logits.gather_rows(batch), teacher_embedding.gather_rows(batch)};
            const auto obj = losses::build_objective(g, vars, labels, num_classes, targets ? &*targets : nullptr, settings);

            optimizer.zero_grad();
            losses::LossBreakdown loss;
            loss.total = g.forward(obj.total).item();
            loss.ce = g.value(obj.ce).item();
            loss.kd = teacher ? g.value(obj.kd).item() : 0.0;
            loss.rep = teacher ? g.value(obj.rep).item() : 0.0;
            if (!std::isfinite(loss.total)) {
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                   std::to_string(step));
            }
            if (options.on_step) options.on_step(StepRecord{epoch, step, batch.size(), loss, settings.alpha, settings.beta});
            g.backward(obj.total);
            optimizer.step(scheduled_lr(cfg.lr_schedule, cfg.lr, step, total_steps));
            ++step;

            const double w = static_cast<double>(batch.size());
            rec.ce += w * loss.ce;
            rec.kd += w * loss.kd;
            rec.rep += w * loss.rep;
            rec.total += w * loss.total;
            seen += batch.size();
        }
        const double n = static_cast<double>(seen);
        rec.ce /= n;
        rec.kd /= n;
        rec.rep /= n;
        rec.total /= n;
        rec.train_acc = metrics::accuracy(predict_probs(student, x_train, cfg.alpha_th), y_train);
        rec.test_acc = metrics::accuracy(predict_probs(student, x_test, cfg.alpha_th), y_test);
        if ((epoch - 1) % every == 0 || epoch == cfg.epochs) {
            if (angle_ref) angle = metrics::mean_angle(*angle_ref, student, data, Split::Test);
            msc = metrics::msc_score({evaluate(student, x_test).aligned, y_test}).score;
        }
        rec.mean_angle = angle;
        rec.msc = msc;
        result.report.epochs.push_back(rec);
    }

    result.report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.student = std::move(student);
    return result;
}

std::vector<std::string> ShkdConfig::violations(bool has_pretrained_teacher) const {
    std::vector<std::string> out;
    auto prefixed = [&](const char* phase, const DistillConfig& c) {
        for (const auto& v : c.violations()) out.push_back(std::string(phase) + "." + v);
    };
    prefixed("initial", initial);
    prefixed("teacher", teacher);
    prefixed("final_student", final_student);
    if (initial.mode == DistillMode::L2e || initial.mode == DistillMode::ThKd) {
        out.push_back("initial.mode: must be vanilla or kd");
    } else if (initial.mode == DistillMode::Kd && !has_pretrained_teacher) {
        out.push_back("initial.mode: kd needs a pretrained teacher");
    }
    if (teacher.mode != DistillMode::Vanilla) out.push_back("teacher.mode: the teacher is trained with vanilla only");
    if (final_student.mode != DistillMode::Kd && final_student.mode != DistillMode::L2e) {
        out.push_back("final_student.mode: must be kd or l2e");
    }
    return out;
}

ShkdResult shkd_pipeline(const ShkdConfig& cfg, const LabeledDataset& data, const Architecture& student_arch,
                         const Architecture& teacher_arch, const ModelBundle* pretrained_teacher,
                         std::optional<Architecture> final_student_arch, const TrainOptions& options) {
    if (auto problems = cfg.violations(pretrained_teacher != nullptr); !problems.empty()) {
        throw ConfigError(std::move(problems));
    }
    const Architecture final_arch = final_student_arch.value_or(student_arch);
    student_arch.validate();
    teacher_arch.validate();
    final_arch.validate();
    if (teacher_arch.input_dim != student_arch.input_dim || teacher_arch.num_classes != student_arch.num_classes ||
        final_arch.input_dim != student_arch.input_dim || final_arch.num_classes != student_arch.num_classes) {
        throw ModelError("architectures " + student_arch.describe() + ", " + teacher_arch.describe() + " and " +
                         final_arch.describe() + " disagree on input or class count");
    }
    if (final_arch.embedding_dim != student_arch.embedding_dim) {
        throw ModelError("final student " + final_arch.describe() + " cannot carry the head of initial student " +
                         student_arch.describe() + ": embedding widths differ");
    }

    TrainOptions plain = options;
    plain.reference = nullptr;

    ShkdResult out;
    // I0: temporary student {phi_s0, theta_s}.
    TrainOptions opts0 = plain;
    if (pretrained_teacher) opts0.reference = pretrained_teacher;
    auto r0 = train_student(cfg.initial, data, cfg.initial.mode == DistillMode::Kd ? pretrained_teacher : nullptr,
                            student_arch, opts0);
    out.initial_student = std::move(r0.student);
    out.reports[0] = std::move(r0.report);

    // I1: teacher {phi_t, theta_s}, theta_s frozen.
    ModelBundle teacher = transplant_head(make_bundle(teacher_arch, cfg.teacher.seed), out.initial_student.head,
                                          true, true, cfg.teacher.seed);
    auto r1 = train_bundle(cfg.teacher, data, nullptr, std::move(teacher), plain);
    out.teacher = std::move(r1.student);
    out.reports[1] = std::move(r1.report);

    // I2: final student {phi_s1, theta_s}.
    ModelBundle student = transplant_head(make_bundle(final_arch, cfg.final_student.seed), out.initial_student.head,
                                          cfg.final_student.freeze_student_head);
    auto r2 = train_bundle(cfg.final_student, data, &out.teacher, std::move(student), plain);
    out.student = std::move(r2.student);
    out.reports[2] = std::move(r2.report);

    out.head_chain_ok = bitwise_equal(out.initial_student.head.layer, out.teacher.head.layer) &&
                        bitwise_equal(out.teacher.head.layer, out.student.head.layer);
    return out;
}

std::vector<AblationRow> capacity_ablation(const std::vector<Architecture>& initial_archs,
                                           const Architecture& teacher_arch, const Architecture& final_student_arch,
                                           const LabeledDataset& data, const ShkdConfig& cfg,
                                           const TrainOptions& options) {
    if (initial_archs.empty()) throw std::invalid_argument("capacity_ablation: no initial architectures");
    const auto test_idx = data.indices(Split::Test);
    const Tensor x_test = data.features_of(test_idx);
    const auto y_test = data.labels_of(test_idx);
    std::vector<AblationRow> rows;
    for (const auto& arch : initial_archs) {
        auto run = shkd_pipeline(cfg, data, arch, teacher_arch, nullptr, final_student_arch, options);
        AblationRow row;
        row.initial = arch;
        row.teacher_test_acc = metrics::accuracy(predict_probs(run.teacher, x_test, cfg.teacher.alpha_th), y_test);
        row.final_student_test_acc =
            metrics::accuracy(predict_probs(run.student, x_test, cfg.final_student.alpha_th), y_test);
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace hskd
