#include <gtest/gtest.h>

#include <cmath>

#include "hskd/nn.hpp"
#include "hskd/optim.hpp"
#include "hskd/rng.hpp"

using namespace hskd;

namespace {

Tensor random_matrix(std::size_t n, std::size_t d, std::uint64_t seed) {
    Rng rng(seed);
    Tensor t(Shape{n, d});
    for (auto& v : t.storage()) v = rng.normal();
    return t;
}

// Several SGD steps on a squared-logit objective through every trainable parameter.
void train_steps(ModelBundle& m, const Tensor& x, int steps) {
    Optimizer opt(OptimizerKind::Sgd, m.parameters());
    for (int s = 0; s < steps; ++s) {
        opt.zero_grad();
        Graph g;
        auto v = forward_bundle(g, m, g.constant(x));
        Var loss = g.mean(g.mul(v.logits, v.logits));
        if (v.aux_logits) loss = g.add(loss, g.mean(g.mul(*v.aux_logits, *v.aux_logits)));
        g.forward(loss);
        g.backward(loss);
        opt.step(0.1);
    }
}

}  // namespace

TEST(Architecture, ValidateAndDescribe) {
    Architecture a{8, {128, 128}, 16, 4};
    EXPECT_EQ(a.describe(), "in8-h128-h128-e16-c4");
    EXPECT_NO_THROW(a.validate());
    EXPECT_THROW((Architecture{0, {}, 4, 2}.validate()), ModelError);
    EXPECT_THROW((Architecture{2, {0}, 4, 2}.validate()), ModelError);
    EXPECT_THROW((Architecture{2, {}, 4, 1}.validate()), ModelError);
}

TEST(Backbone, ZeroAndIdentityLayers) {
    LinearLayer zero(Tensor(Shape{3, 2}, 0.0), Tensor(Shape{3}, 0.0), "z");
    Graph g;
    Var out = zero.apply(g, g.constant(Tensor::matrix({{1, 2}})));
    EXPECT_TRUE(bitwise_equal(g.forward(out), Tensor::matrix({{0, 0, 0}})));

    LinearLayer id(Tensor::matrix({{1, 0}, {0, 1}}), Tensor::vector({0, 0}), "id");
    Graph h;
    Var y = id.apply(h, h.constant(Tensor::matrix({{1, 2}})));
    EXPECT_TRUE(bitwise_equal(h.forward(y), Tensor::matrix({{1, 2}})));
    EXPECT_THROW(LinearLayer(Tensor::matrix({{1, 0}}), Tensor::vector({0, 0}), "bad"), ShapeError);
}

TEST(Backbone, SeededInitIsReproducible) {
    const Architecture a{4, {6}, 3, 2};
    const Tensor x = random_matrix(5, 4, 1);
    EXPECT_TRUE(bitwise_equal(embed(make_bundle(a, 7), x), embed(make_bundle(a, 7), x)));
    EXPECT_FALSE(bitwise_equal(embed(make_bundle(a, 7), x), embed(make_bundle(a, 8), x)));
    const ModelBundle m = make_bundle(a, 7);
    const double bound = 1.0 / std::sqrt(4.0);
    for (double v : m.backbone.layers()[0].weight().value.data()) EXPECT_LE(std::abs(v), bound);
    EXPECT_THROW(evaluate(m, random_matrix(2, 5, 1)), ShapeError);
}

TEST(Head, SoftmaxProperties) {
    const Tensor p = softmax_rows(Tensor::matrix({{0, 0, 0}, {std::log(2.0), 0, -50}}));
    EXPECT_NEAR(p.at(0, 1), 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(p.at(1, 0) / p.at(1, 1), 2.0, 1e-12);
    for (double v : p.data()) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
    }
    const Tensor lp = log_softmax_rows(Tensor::matrix({{1, 2, 3}}));
    const Tensor sp = softmax_rows(Tensor::matrix({{1, 2, 3}}));
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(std::exp(lp[k]), sp[k], 1e-15);
}

TEST(Adapter, IdentityWhenWidthsMatch) {
    Rng rng(1);
    DimensionAdapter same(8, 8, rng);
    EXPECT_TRUE(same.is_identity());
    DimensionAdapter forced(8, 8, rng, false);
    EXPECT_FALSE(forced.is_identity());
    DimensionAdapter wide(8, 16, rng);
    EXPECT_EQ(wide.out_dim(), 16u);

    ModelBundle m = make_bundle(Architecture{4, {8}, 8, 3}, 1);
    add_adapter(m, 16, 2);
    EXPECT_EQ(m.aligned_dim(), 16u);
    EXPECT_EQ(evaluate(m, random_matrix(3, 4, 1)).aligned.cols(), 16u);
}

TEST(TeacherHead, AttachFreezesAndReplaces) {
    const ModelBundle teacher = make_bundle(Architecture{4, {12}, 16, 3}, 5);
    ModelBundle student = make_bundle(Architecture{4, {6}, 8, 3}, 6);
    EXPECT_THROW(attach_teacher_head(student, teacher.head), ModelError);

    add_adapter(student, 16, 7);
    ModelBundle with = attach_teacher_head(student, teacher.head);
    ASSERT_TRUE(with.aux_head.has_value());
    const auto out = evaluate(with, random_matrix(5, 4, 3));
    ASSERT_TRUE(out.aux_probs.has_value());
    EXPECT_EQ(out.aux_probs->rows(), 5u);
    EXPECT_EQ(out.aux_probs->cols(), 3u);

    const ModelBundle other = make_bundle(Architecture{4, {12}, 16, 3}, 50);
    ModelBundle twice = attach_teacher_head(with, other.head);
    EXPECT_TRUE(bitwise_equal(twice.aux_head->layer, other.head.layer));
    std::size_t aux_params = 0;
    for (auto* p : twice.parameters())
        if (p->name.rfind("aux_head", 0) == 0) ++aux_params;
    EXPECT_EQ(aux_params, 2u);

    train_steps(with, random_matrix(10, 4, 4), 100);
    EXPECT_TRUE(bitwise_equal(with.aux_head->layer, teacher.head.layer));
}

TEST(Transplant, FrozenStaysAndUnfrozenMoves) {
    const ModelBundle source = make_bundle(Architecture{4, {6}, 8, 3}, 1);
    const ModelBundle target = make_bundle(Architecture{4, {10}, 8, 3}, 2);
    const Tensor x = random_matrix(10, 4, 3);

    ModelBundle frozen = transplant_head(target, source.head, true);
    train_steps(frozen, x, 20);
    EXPECT_TRUE(bitwise_equal(frozen.head.layer, source.head.layer));
    EXPECT_FALSE(bitwise_equal(frozen.backbone.layers()[0], target.backbone.layers()[0]));

    ModelBundle loose = transplant_head(target, source.head, false);
    EXPECT_TRUE(bitwise_equal(loose.head.layer, source.head.layer));
    train_steps(loose, x, 20);
    EXPECT_FALSE(bitwise_equal(loose.head.layer, source.head.layer));
}

TEST(Transplant, WidthMismatchNeedsProjection) {
    const ModelBundle source = make_bundle(Architecture{4, {6}, 8, 3}, 1);
    const ModelBundle wide = make_bundle(Architecture{4, {10}, 16, 3}, 2);
    EXPECT_THROW(transplant_head(wide, source.head, true), ModelError);
    ModelBundle projected = transplant_head(wide, source.head, true, true, 3);
    ASSERT_TRUE(projected.head_projection.has_value());
    const auto out = evaluate(projected, random_matrix(2, 4, 1));
    EXPECT_EQ(out.head_input.cols(), 8u);
    EXPECT_EQ(out.embedding.cols(), 16u);
    EXPECT_TRUE(bitwise_equal(head_input(projected, random_matrix(2, 4, 1)), out.head_input));

    const ModelBundle four = make_bundle(Architecture{4, {6}, 8, 4}, 1);
    EXPECT_THROW(transplant_head(wide, four.head, true, true), ModelError);
}

TEST(Gradients, BundleParametersPassGradCheck) {
    ModelBundle m = make_bundle(Architecture{3, {5, 4}, 4, 3}, 11);
    add_adapter(m, 6, 12);
    const ModelBundle t = make_bundle(Architecture{3, {7}, 6, 3}, 13);
    m = attach_teacher_head(m, t.head);
    const Tensor x = random_matrix(4, 3, 14);
    const auto params = m.parameters();
    const double err = grad_check_parameters(params, [&](Graph& g) {
        auto v = forward_bundle(g, m, g.constant(x));
        Var a = g.mean(g.mul(g.log_softmax(v.logits), g.softmax(*v.aux_logits)));
        return g.add(a, g.mean(g.row_l2_norm(v.aligned)));
    });
    EXPECT_LT(err, 1e-6);
}

TEST(Optimizer, ScheduleAndFrozenParams) {
    EXPECT_EQ(scheduled_lr(LrSchedule::Constant, 0.1, 5, 10), 0.1);
    EXPECT_NEAR(scheduled_lr(LrSchedule::Cosine, 0.1, 0, 10), 0.1, 1e-15);
    EXPECT_NEAR(scheduled_lr(LrSchedule::Cosine, 0.1, 5, 10), 0.05, 1e-15);
    EXPECT_NEAR(scheduled_lr(LrSchedule::Cosine, 0.1, 10, 10), 0.0, 1e-15);
    EXPECT_THROW(parse_optimizer("rmsprop"), std::invalid_argument);
    EXPECT_EQ(parse_lr_schedule("cosine"), LrSchedule::Cosine);

    Parameter w{"w", Tensor::vector({1.0}), Tensor::vector({0.5}), true};
    Parameter f{"f", Tensor::vector({1.0}), Tensor::vector({0.5}), false};
    Optimizer sgd(OptimizerKind::Sgd, {&w, &f});
    sgd.step(0.1);
    EXPECT_DOUBLE_EQ(w.value[0], 0.95);
    EXPECT_EQ(f.value[0], 1.0);

    // First Adam step moves by lr * g / (|g| + eps) after bias correction.
    Parameter a{"a", Tensor::vector({1.0}), Tensor::vector({0.5}), true};
    Optimizer adam(OptimizerKind::Adam, {&a});
    adam.step(0.01);
    EXPECT_NEAR(a.value[0], 1.0 - 0.01 * 0.5 / (0.5 + 1e-8), 1e-15);
}
