#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "hskd/data.hpp"
#include "hskd/metrics.hpp"
#include "hskd/pipeline.hpp"

using namespace hskd;

namespace {

LabeledDataset blobs() {
    SyntheticSpec s;
    s.num_classes = 2;
    s.dim = 2;
    s.samples_per_class = 100;
    s.noise_std = 0.5;
    s.seed = 1;
    return generate(s);
}

LabeledDataset small_rings() {
    SyntheticSpec s;
    s.kind = SyntheticKind::ConcentricRings;
    s.num_classes = 3;
    s.dim = 4;
    s.samples_per_class = 40;
    s.noise_std = 0.1;
    s.seed = 2;
    return generate(s);
}

DistillConfig quick(DistillMode mode, std::size_t epochs = 3) {
    DistillConfig c;
    c.mode = mode;
    c.epochs = epochs;
    c.lr = 0.05;
    c.beta = 1.0;
    c.seed = 4;
    return c;
}

const Architecture kTeacher{4, {16}, 8, 3};
const Architecture kStudent{4, {6}, 4, 3};

bool params_equal(const ModelBundle& a, const ModelBundle& b) {
    const auto pa = a.parameters();
    const auto pb = b.parameters();
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i)
        if (pa[i]->name != pb[i]->name || !bitwise_equal(pa[i]->value, pb[i]->value)) return false;
    return true;
}

}  // namespace

TEST(DistillConfig, ReportsEveryViolation) {
    DistillConfig c;
    c.alpha = -1;
    c.beta = -1;
    c.alpha_th = 2;
    c.tau = 0;
    c.lr = 0;
    c.batch_size = 0;
    const auto v = c.violations();
    EXPECT_EQ(v.size(), 6u);
    try {
        c.validate();
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.problems(), v);
    }
    EXPECT_THROW(parse_distill_mode("fitnet"), std::invalid_argument);
    EXPECT_EQ(parse_distill_mode("th_kd"), DistillMode::ThKd);
}

TEST(DistillConfig, ModeWeights) {
    DistillConfig c;
    c.alpha = 2;
    c.beta = 3;
    EXPECT_EQ(c.objective().alpha, 0.0);
    EXPECT_EQ(c.objective().beta, 0.0);
    c.mode = DistillMode::Kd;
    EXPECT_EQ(c.objective().alpha, 2.0);
    EXPECT_EQ(c.objective().beta, 0.0);
    c.mode = DistillMode::L2e;
    EXPECT_EQ(c.objective().beta, 3.0);
}

TEST(Train, VanillaBlobsReachesPerfectAccuracy) {
    DistillConfig c = quick(DistillMode::Vanilla, 30);
    const auto r = train_student(c, blobs(), nullptr, Architecture{2, {8}, 8, 2});
    ASSERT_EQ(r.report.epochs.size(), 30u);
    EXPECT_EQ(r.report.epochs.back().test_acc, 1.0);
    EXPECT_EQ(r.report.epochs.back().kd, 0.0);
    EXPECT_EQ(r.report.epochs.back().rep, 0.0);
}

TEST(Train, DistillationNeedsTeacher) {
    for (auto m : {DistillMode::Kd, DistillMode::L2e, DistillMode::ThKd})
        EXPECT_THROW(train_student(quick(m), small_rings(), nullptr, kStudent), ConfigError);
}

TEST(Train, SelfDistillationStartsAtZero) {
    const auto data = small_rings();
    DistillConfig c = quick(DistillMode::L2e, 1);
    const ModelBundle teacher = make_bundle(kStudent, c.seed);
    std::vector<StepRecord> steps;
    TrainOptions opts;
    opts.on_step = [&](const StepRecord& s) { steps.push_back(s); };
    train_student(c, data, &teacher, kStudent, opts);
    ASSERT_FALSE(steps.empty());
    EXPECT_LT(steps[0].loss.kd, 1e-10);
    EXPECT_LT(steps[0].loss.rep, 1e-10);
}

TEST(Train, StepLossesReconstructAndTeacherStaysPut) {
    const auto data = small_rings();
    const ModelBundle teacher = train_student(quick(DistillMode::Vanilla, 2), data, nullptr, kTeacher).student;
    const ModelBundle before = teacher;
    for (auto mode : {DistillMode::Kd, DistillMode::L2e, DistillMode::ThKd}) {
        DistillConfig c = quick(mode);
        c.alpha = 0.7;
        c.alpha_th = 0.5;
        TrainOptions opts;
        std::size_t n = 0;
        opts.on_step = [&](const StepRecord& s) {
            ++n;
            EXPECT_NEAR(s.loss.total, s.loss.ce + s.alpha * s.loss.kd + s.beta * s.loss.rep, 1e-12);
        };
        const auto r = train_student(c, data, &teacher, kStudent, opts);
        EXPECT_GT(n, 0u);
        EXPECT_EQ(r.student.aligned_dim(), teacher.head.in_dim());
        EXPECT_TRUE(params_equal(teacher, before)) << to_string(mode);
    }
}

TEST(Train, ThKdFrozenHeadIsBitIdentical) {
    const auto data = small_rings();
    const ModelBundle teacher = train_student(quick(DistillMode::Vanilla, 2), data, nullptr, kTeacher).student;
    DistillConfig c = quick(DistillMode::ThKd, 4);
    const ModelBundle initial = prepare_student(c, kStudent, &teacher);
    const auto r = train_student(c, data, &teacher, kStudent);
    EXPECT_TRUE(bitwise_equal(r.student.head.layer, initial.head.layer));
    ASSERT_TRUE(r.student.aux_head.has_value());
    EXPECT_TRUE(bitwise_equal(r.student.aux_head->layer, teacher.head.layer));
    EXPECT_FALSE(bitwise_equal(r.student.backbone.layers()[0], initial.backbone.layers()[0]));
}

TEST(Train, ThKdWithZeroAlphaMatchesL2eStepByStep) {
    const auto data = small_rings();
    const ModelBundle teacher = train_student(quick(DistillMode::Vanilla, 2), data, nullptr, kTeacher).student;
    DistillConfig th = quick(DistillMode::ThKd, 1);
    th.alpha_th = 0.0;
    th.freeze_student_head = false;
    DistillConfig l2 = quick(DistillMode::L2e, 1);
    std::vector<double> a, b;
    TrainOptions oa, ob;
    oa.on_step = [&](const StepRecord& s) { a.push_back(s.loss.total); };
    ob.on_step = [&](const StepRecord& s) { b.push_back(s.loss.total); };
    train_student(th, data, &teacher, kStudent, oa);
    train_student(l2, data, &teacher, kStudent, ob);
    ASSERT_EQ(a.size(), b.size());
    EXPECT_NEAR(a[0], b[0], 1e-12);
}

TEST(Train, ReportIsDeterministic) {
    const auto data = small_rings();
    const ModelBundle teacher = train_student(quick(DistillMode::Vanilla, 2), data, nullptr, kTeacher).student;
    const auto a = train_student(quick(DistillMode::L2e), data, &teacher, kStudent);
    const auto b = train_student(quick(DistillMode::L2e), data, &teacher, kStudent);
    EXPECT_EQ(a.report.to_csv(), b.report.to_csv());
    EXPECT_TRUE(params_equal(a.student, b.student));
    EXPECT_EQ(a.report.to_csv().substr(0, a.report.to_csv().find('\n')), TrainReport::kCsvHeader);
}

TEST(Train, MetricCadenceCarriesForward) {
    const auto data = small_rings();
    const ModelBundle teacher = train_student(quick(DistillMode::Vanilla, 2), data, nullptr, kTeacher).student;
    TrainOptions opts;
    opts.metric_every = 3;
    const auto r = train_student(quick(DistillMode::L2e, 5), data, &teacher, kStudent, opts);
    const auto& e = r.report.epochs;
    EXPECT_EQ(e[1].mean_angle, e[0].mean_angle);
    EXPECT_EQ(e[2].msc, e[0].msc);
    EXPECT_NE(e[3].mean_angle, e[2].mean_angle);
    EXPECT_NE(e[4].mean_angle, e[3].mean_angle);
}

TEST(Train, NonFiniteLossAbortsWithContext) {
    LabeledDataset bad = small_rings();
    Tensor x = bad.features();
    for (std::size_t i = 0; i < x.rows(); ++i) x.at(i, 0) = std::numeric_limits<double>::quiet_NaN();
    LabeledDataset poisoned(x, bad.labels(), bad.label_values());
    poisoned.assign_split(1);
    try {
        train_student(quick(DistillMode::Vanilla, 2), poisoned, nullptr, kStudent);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("step"), std::string::npos) << e.what();
    }
}

TEST(Train, ZeroEpochsLeavesInitialization) {
    const auto data = small_rings();
    DistillConfig c = quick(DistillMode::Vanilla, 0);
    const auto r = train_student(c, data, nullptr, kStudent);
    EXPECT_TRUE(r.report.epochs.empty());
    EXPECT_TRUE(params_equal(r.student, prepare_student(c, kStudent, nullptr)));
}

TEST(HeadCombination, Reductions) {
    const Tensor a = Tensor::matrix({{1, 0}});
    const Tensor b = Tensor::matrix({{0, 1}});
    EXPECT_TRUE(bitwise_equal(combine_head_predictions(a, b, 0.5), Tensor::matrix({{0.5, 0.5}})));
    EXPECT_TRUE(bitwise_equal(combine_head_predictions(a, b, 0.0), a));
    EXPECT_TRUE(bitwise_equal(combine_head_predictions(a, b, 1.0), b));
    EXPECT_THROW(combine_head_predictions(a, Tensor::matrix({{0, 1, 0}}), 0.5), ShapeError);
}

TEST(Shkd, HeadChainHoldsAndPhasesAreChecked) {
    const auto data = small_rings();
    ShkdConfig cfg{quick(DistillMode::Vanilla), quick(DistillMode::Vanilla), quick(DistillMode::L2e)};
    const auto r = shkd_pipeline(cfg, data, kStudent, kTeacher);
    EXPECT_TRUE(r.head_chain_ok);
    EXPECT_TRUE(bitwise_equal(r.initial_student.head.layer, r.teacher.head.layer));
    EXPECT_TRUE(bitwise_equal(r.teacher.head.layer, r.student.head.layer));
    EXPECT_TRUE(r.teacher.head_projection.has_value());
    for (const auto& rep : r.reports) EXPECT_EQ(rep.epochs.size(), 3u);

    ShkdConfig bad = cfg;
    bad.teacher.mode = DistillMode::Kd;
    bad.final_student.mode = DistillMode::Vanilla;
    EXPECT_EQ(bad.violations(false).size(), 2u);
    EXPECT_THROW(shkd_pipeline(bad, data, kStudent, kTeacher), ConfigError);

    ShkdConfig kd_first = cfg;
    kd_first.initial.mode = DistillMode::Kd;
    EXPECT_FALSE(kd_first.violations(false).empty());
    EXPECT_TRUE(kd_first.violations(true).empty());
}

TEST(Shkd, ZeroEpochsIsANoOp) {
    const auto data = small_rings();
    ShkdConfig cfg{quick(DistillMode::Vanilla, 0), quick(DistillMode::Vanilla, 0), quick(DistillMode::L2e, 0)};
    const auto r = shkd_pipeline(cfg, data, kStudent, kTeacher);
    EXPECT_TRUE(r.head_chain_ok);
    EXPECT_TRUE(params_equal(r.initial_student, make_bundle(kStudent, cfg.initial.seed)));
    const auto t0 = make_bundle(kTeacher, cfg.teacher.seed);
    for (std::size_t i = 0; i < t0.backbone.layers().size(); ++i)
        EXPECT_TRUE(bitwise_equal(r.teacher.backbone.layers()[i], t0.backbone.layers()[i]));
}

TEST(Shkd, IncompatibleArchitecturesFailBeforeTraining) {
    const auto data = small_rings();
    ShkdConfig cfg{quick(DistillMode::Vanilla), quick(DistillMode::Vanilla), quick(DistillMode::L2e)};
    EXPECT_THROW(shkd_pipeline(cfg, data, kStudent, Architecture{4, {16}, 8, 5}), ModelError);
    EXPECT_THROW(shkd_pipeline(cfg, data, kStudent, kTeacher, nullptr, Architecture{4, {6}, 5, 3}), ModelError);
}

TEST(Ablation, OneRowPerWidthAndDeterministic) {
    const auto data = small_rings();
    ShkdConfig cfg{quick(DistillMode::Vanilla, 2), quick(DistillMode::Vanilla, 2), quick(DistillMode::L2e, 2)};
    const Architecture w4{4, {4}, 4, 3};
    const auto one = capacity_ablation({w4}, kTeacher, kStudent, data, cfg);
    ASSERT_EQ(one.size(), 1u);
    const auto two = capacity_ablation({w4, w4}, kTeacher, kStudent, data, cfg);
    ASSERT_EQ(two.size(), 2u);
    EXPECT_EQ(two[0].teacher_test_acc, two[1].teacher_test_acc);
    EXPECT_EQ(two[0].final_student_test_acc, two[1].final_student_test_acc);
    EXPECT_EQ(two[0].teacher_test_acc, one[0].teacher_test_acc);
    EXPECT_THROW(capacity_ablation({}, kTeacher, kStudent, data, cfg), std::invalid_argument);
}

TEST(Capacity, RingsSeparateNarrowFromWide) {
    SyntheticSpec s;
    s.kind = SyntheticKind::ConcentricRings;
    s.num_classes = 4;
    s.dim = 8;
    s.samples_per_class = 200;
    s.noise_std = 0.1;
    s.seed = 1;
    const auto data = generate(s);
    DistillConfig c = quick(DistillMode::Vanilla, 40);
    c.seed = 1;
    const auto narrow = train_student(c, data, nullptr, Architecture{8, {2}, 2, 4});
    const auto wide = train_student(c, data, nullptr, Architecture{8, {128, 128}, 16, 4});
    EXPECT_LT(narrow.report.epochs.back().test_acc, 0.9);
    EXPECT_GT(wide.report.epochs.back().test_acc, 0.99);
}
