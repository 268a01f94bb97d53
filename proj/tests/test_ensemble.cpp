#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "bisida/ensemble.hpp"

using namespace bisida;

namespace {

float max_gap(const SegNet& a, const SegNet& b)
{
    float m = 0;
    for (std::size_t k = 0; k < a.params.size(); ++k) {
        const auto& x = a.params.entries()[k].tensor;
        const auto& y = b.params.entries()[k].tensor;
        for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
    }
    return m;
}

SegNet single_weight(float v)
{
    SegNet n;
    n.num_classes = 2;
    n.params.add("w", TensorF({1}, v));
    return n;
}

}  // namespace

TEST(InitTeacher, ExactCopyWithoutGradients)
{
    auto student = build_segnet(5, 3, 8);
    const auto teacher = init_teacher(student);
    EXPECT_TRUE(teacher.params.same_values(student.params));
    for (const auto& p : teacher.params.entries()) EXPECT_FALSE(p.tensor.requires_grad()) << p.name;

    student.params.at("conv1.weight")[0] += 1.0f;
    EXPECT_FALSE(teacher.params.same_values(student.params));

    RngStream rng(1, "x");
    TensorF x({1, 3, 8, 8});
    for (auto& v : x.data()) v = static_cast<float>(rng.uniform());
    const auto fresh = build_segnet(5, 3, 8);
    EXPECT_EQ(seg_probs(init_teacher(fresh), x).data(), seg_probs(fresh, x).data());
}

TEST(EmaUpdate, Endpoints)
{
    const auto student = build_segnet(5, 1, 4);
    auto teacher = init_teacher(build_segnet(5, 2, 4));
    const auto before = teacher;
    ema_update(teacher, student, 1.0);
    EXPECT_TRUE(teacher.params.same_values(before.params));
    ema_update(teacher, student, 0.0);
    EXPECT_TRUE(teacher.params.same_values(student.params));
}

TEST(EmaUpdate, ScalarExample)
{
    auto t = single_weight(1.0f);
    ema_update(t, single_weight(0.0f), 0.999);
    EXPECT_NEAR(t.params.at("w")[0], 0.999, 1e-7);
}

TEST(EmaUpdate, ConvexCombinationStaysBetweenEndpoints)
{
    const auto student = build_segnet(5, 1, 4);
    auto teacher = init_teacher(build_segnet(5, 2, 4));
    for (double eta : {0.0, 0.3, 0.9, 0.999, 1.0}) {
        const auto prev = teacher;
        ema_update(teacher, student, eta);
        for (std::size_t k = 0; k < teacher.params.size(); ++k) {
            const auto& t = teacher.params.entries()[k].tensor;
            const auto& p = prev.params.entries()[k].tensor;
            const auto& s = student.params.entries()[k].tensor;
            for (std::size_t i = 0; i < t.size(); ++i) {
                EXPECT_GE(t[i], std::min(p[i], s[i]));
                EXPECT_LE(t[i], std::max(p[i], s[i]));
            }
        }
    }
}

TEST(EmaUpdate, ContractsTowardFrozenStudent)
{
    auto t = single_weight(1.0f);
    const auto s = single_weight(0.0f);
    const double eta = 0.99;
    for (int n = 1; n <= 1000; ++n) {
        ema_update(t, s, eta);
        EXPECT_NEAR(t.params.at("w")[0], std::pow(eta, n), 1e-6);
    }
    const auto student = build_segnet(5, 1, 4);
    auto teacher = init_teacher(build_segnet(5, 2, 4));
    const float gap0 = max_gap(teacher, student);
    for (int n = 1; n <= 200; ++n) {
        ema_update(teacher, student, 0.95);
        EXPECT_LE(max_gap(teacher, student), std::pow(0.95, n) * gap0 + 1e-6);
    }
}

TEST(EmaUpdate, RejectsMismatchAndBadEta)
{
    auto teacher = init_teacher(build_segnet(5, 1, 4));
    EXPECT_THROW(ema_update(teacher, build_segnet(5, 1, 8), 0.5), ShapeError);
    EXPECT_THROW(ema_update(teacher, build_segnet(3, 1, 4), 0.5), ShapeError);
    EXPECT_THROW(ema_update(teacher, build_segnet(5, 1, 4), 1.5), ValidationError);
}
