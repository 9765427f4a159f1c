#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "csgd/regularizers.hpp"
#include "support/reference.hpp"

using namespace csgd;
using csgd::testing::random_laminar;
using csgd::testing::random_overlapping;
using csgd::testing::random_vector;
using csgd::testing::reference_prox;

namespace {

GroupStructure pair_with_parent() {
    return GroupStructure(2, {{0}, {1}, {0, 1}}, {1.0, 1.0, std::sqrt(2.0)});
}

// psi(x) = (1/eta)(<x, g> + h(x)); three-point inequality at the prox output.
double psi(const Regularizer& reg, const Vector& g, double eta, const Vector& x) {
    return (dot(x, g) + evaluate(reg, x)) / eta;
}

}  // namespace

TEST(Evaluate, Examples) {
    EXPECT_NEAR(evaluate(Regularizer::l1(0.1, 2), {1, -2}), 0.3, 1e-15);
    const auto s = GroupStructure(2, {{0, 1}}, {std::sqrt(2.0)});
    EXPECT_NEAR(evaluate(Regularizer::group_norm(1.0, s), {3, 4}), 5.0 * std::sqrt(2.0), 1e-12);
    EXPECT_EQ(evaluate(Regularizer::l1(0.7, 3), {0, 0, 0}), 0.0);
    EXPECT_EQ(evaluate(Regularizer::group_norm(0.7, build_hierarchical(3)), Vector(8, 0.0)), 0.0);
}

TEST(Evaluate, DimensionMismatch) {
    EXPECT_THROW(evaluate(Regularizer::l1(0.1, 3), {1, 2}), DimensionError);
}

TEST(Evaluate, EqualsDualMaximum) {
    // h(beta) = max_{alpha in Q} alpha^T A beta, attained at alpha_g = beta_g / ||beta_g||.
    RngStream rng(5);
    const auto reg = Regularizer::group_norm(0.3, build_hierarchical(4));
    const LinearMapA a(reg);
    for (int trial = 0; trial < 50; ++trial) {
        const Vector beta = random_vector(rng, 16);
        const DualVector ab = a.apply(beta);
        double value = 0.0;
        for (std::size_t g = 0; g < reg.structure->size(); ++g) {
            const auto& idx = reg.structure->group(g);
            double nrm = 0.0;
            for (std::size_t j : idx) nrm += beta[j] * beta[j];
            nrm = std::sqrt(nrm);
            const auto blk = ab.block(g);
            for (std::size_t k = 0; k < idx.size(); ++k) value += (beta[idx[k]] / nrm) * blk[k];
        }
        EXPECT_NEAR(value, evaluate(reg, beta), 1e-10);
    }
}

TEST(Prox, L1Example) {
    const auto reg = Regularizer::l1(0.5, 2);
    const Vector g{0, 0}, z{1.0, -0.3};
    const Vector x = prox(reg, g, z, 1.0);
    EXPECT_NEAR(x[0], 0.5, 1e-15);
    EXPECT_EQ(x[1], 0.0);
    // 0 in g + eta (x - z) + lambda d||x||_1
    for (std::size_t i = 0; i < 2; ++i) {
        const double r = g[i] + (x[i] - z[i]);
        if (x[i] != 0.0)
            EXPECT_NEAR(r + 0.5 * std::copysign(1.0, x[i]), 0.0, 1e-14);
        else
            EXPECT_LE(std::abs(r), 0.5);
    }
}

TEST(Prox, ZeroLambdaIsGradientStep) {
    const Vector g{1, -2, 0.5}, z{0.1, 0.2, 0.3};
    const Vector expected{0.1 - 0.25, 0.2 + 0.5, 0.3 - 0.125};
    for (const auto& reg : {Regularizer::l1(0.0, 3),
                            Regularizer::group_norm(0.0, GroupStructure(3, {{0, 1}, {1, 2}}, {1, 1}))}) {
        const Vector x = prox(reg, g, z, 4.0);
        for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(x[i], expected[i], 1e-15);
    }
}

TEST(Prox, GroupExampleMatchesReference) {
    const auto reg = Regularizer::group_norm(0.1, pair_with_parent());
    ASSERT_TRUE(reg.structure->is_laminar());
    const Vector g{0, 0}, z{1, 1};
    const Vector x = prox(reg, g, z, 1.0);
    const auto ref = reference_prox(reg, g, z, 1.0);
    ASSERT_LE(ref.gap, 1e-13);
    for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(x[i], ref.x[i], 1e-6);
    // singletons shrink 1 -> 0.9, then the pair shrinks by 0.1 sqrt(2) in norm
    const double expected = 0.9 * (1.0 - 0.1 * std::sqrt(2.0) / (0.9 * std::sqrt(2.0)));
    EXPECT_NEAR(x[0], expected, 1e-14);
    EXPECT_NEAR(x[1], expected, 1e-14);
}

TEST(Prox, RejectsNonPositiveEta) {
    const auto reg = Regularizer::l1(0.1, 2);
    EXPECT_THROW(prox(reg, {0, 0}, {1, 1}, 0.0), ParameterError);
    EXPECT_THROW(prox(reg, {0, 0}, {1, 1}, -1.0), ParameterError);
    EXPECT_THROW(prox(reg, {0, 0}, {1}, 1.0), DimensionError);
}

TEST(Prox, ZeroBlockStaysZero) {
    const auto reg = Regularizer::group_norm(1.0, GroupStructure(3, {{0, 1}, {2}}, {1.0, 1.0}));
    const Vector x = prox(reg, {0, 0, 0}, {0, 0, 5}, 1.0);
    EXPECT_EQ(x[0], 0.0);
    EXPECT_EQ(x[1], 0.0);
    EXPECT_NEAR(x[2], 4.0, 1e-15);
}

TEST(ProxProperties, ThreePointInequality) {
    RngStream rng(17);
    for (int inst = 0; inst < 40; ++inst) {
        const std::size_t p = 2 + rng.uniform_index(15);
        const bool use_l1 = inst % 2 == 0;
        const auto reg = use_l1 ? Regularizer::l1(0.05 + rng.uniform(), p)
                                : Regularizer::group_norm(0.05 + rng.uniform(), random_laminar(p, rng));
        const double eta = 0.2 + 5.0 * rng.uniform();
        const Vector g = random_vector(rng, p), z = random_vector(rng, p);
        const Vector zs = prox(reg, g, z, eta);
        const double lhs = psi(reg, g, eta, zs) + 0.5 * squared_norm(subtract(zs, z));
        for (int probe = 0; probe < 100; ++probe) {
            const Vector x = random_vector(rng, p, 2.0);
            const double rhs =
                psi(reg, g, eta, x) + 0.5 * squared_norm(subtract(x, z)) - 0.5 * squared_norm(subtract(x, zs));
            EXPECT_LE(lhs, rhs + 1e-9);
        }
    }
}

TEST(ProxProperties, Nonexpansive) {
    RngStream rng(19);
    for (int inst = 0; inst < 200; ++inst) {
        const std::size_t p = 1 + rng.uniform_index(16);
        const auto reg = inst % 2 ? Regularizer::l1(rng.uniform(), p)
                                  : Regularizer::group_norm(rng.uniform(), random_laminar(p, rng));
        const double eta = 0.1 + 3.0 * rng.uniform();
        const Vector g = random_vector(rng, p);
        const Vector z1 = random_vector(rng, p), z2 = random_vector(rng, p);
        const double d_out = norm2(subtract(prox(reg, g, z1, eta), prox(reg, g, z2, eta)));
        EXPECT_LE(d_out, norm2(subtract(z1, z2)) + 1e-12);
    }
}

TEST(ProxProperties, L1EqualsSingletonGroupNorm) {
    RngStream rng(23);
    for (int inst = 0; inst < 100; ++inst) {
        const std::size_t p = 1 + rng.uniform_index(16);
        const double lambda = rng.uniform();
        const double eta = 0.1 + rng.uniform();
        const Vector g = random_vector(rng, p), z = random_vector(rng, p);
        const Vector a = prox(Regularizer::l1(lambda, p), g, z, eta);
        const Vector b = prox(Regularizer::group_norm(lambda, GroupStructure::singletons(p)), g, z, eta);
        for (std::size_t i = 0; i < p; ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
        EXPECT_NEAR(evaluate(Regularizer::l1(lambda, p), z),
                    evaluate(Regularizer::group_norm(lambda, GroupStructure::singletons(p)), z), 1e-12);
    }
}

TEST(ProxProperties, LaminarPassEqualsDualAscent) {
    RngStream rng(29);
    for (int inst = 0; inst < 100; ++inst) {
        const std::size_t p = 1 + rng.uniform_index(16);
        const auto s = random_laminar(p, rng);
        ASSERT_TRUE(s.is_laminar());
        const double lambda = 0.05 + rng.uniform();
        const double eta = 0.2 + 2.0 * rng.uniform();
        const Vector g = random_vector(rng, p), z = random_vector(rng, p);
        const Vector fast = prox(Regularizer::group_norm(lambda, s), g, z, eta);
        Vector u(p);
        for (std::size_t i = 0; i < p; ++i) u[i] = z[i] - g[i] / eta;
        const Vector slow = prox_group_dual_ascent(s, u, lambda, eta);
        for (std::size_t i = 0; i < p; ++i) EXPECT_NEAR(fast[i], slow[i], 1e-6);
    }
}

TEST(ProxProperties, OverlappingMatchesReference) {
    RngStream rng(31);
    int non_laminar = 0;
    for (int inst = 0; inst < 30; ++inst) {
        const std::size_t p = 3 + rng.uniform_index(10);
        const auto s = random_overlapping(p, 2 + rng.uniform_index(6), rng);
        non_laminar += s.is_laminar() ? 0 : 1;
        const auto reg = Regularizer::group_norm(0.05 + 0.5 * rng.uniform(), s);
        const double eta = 0.5 + rng.uniform();
        const Vector g = random_vector(rng, p), z = random_vector(rng, p);
        const Vector x = prox(reg, g, z, eta);
        const auto ref = reference_prox(reg, g, z, eta);
        ASSERT_LE(ref.gap, 1e-13);
        for (std::size_t i = 0; i < p; ++i) EXPECT_NEAR(x[i], ref.x[i], 1e-6);
    }
    EXPECT_GT(non_laminar, 20);
}

TEST(ProxProperties, DualAscentReportsNonConvergence) {
    const GroupStructure s(3, {{0, 1}, {1, 2}, {0, 2}}, {1.0, 1.0, 1.0});
    ASSERT_FALSE(s.is_laminar());
    const auto reg = Regularizer::group_norm(0.3, s);
    ProxOptions opts;
    opts.max_sweeps = 1;
    opts.tol = 1e-300;
    try {
        prox(reg, {0, 0, 0}, {1.0, 2.0, 3.0}, 1.0, opts);
        FAIL() << "expected ConvergenceError";
    } catch (const ConvergenceError& e) {
        EXPECT_EQ(e.last_iterate.size(), 3u);
    }
}

TEST(GroupStructure, LaminarFlag) {
    EXPECT_TRUE(GroupStructure(4, {{0, 1}, {2, 3}}, {1, 1}).is_laminar());
    EXPECT_TRUE(GroupStructure(4, {{0, 1, 2, 3}, {0, 1}, {1}}, {1, 1, 1}).is_laminar());
    EXPECT_FALSE(GroupStructure(3, {{0, 1}, {1, 2}}, {1, 1}).is_laminar());
    EXPECT_FALSE(GroupStructure(4, {{0, 1, 2}, {2, 3}}, {1, 1}).is_laminar());
}

TEST(GroupStructure, LaminarFlagMatchesPairwiseCheck) {
    RngStream rng(37);
    for (int inst = 0; inst < 300; ++inst) {
        const std::size_t p = 2 + rng.uniform_index(8);
        const auto s = random_overlapping(p, 1 + rng.uniform_index(5), rng);
        bool pairwise = true;
        for (std::size_t a = 0; a < s.size(); ++a)
            for (std::size_t b = a + 1; b < s.size(); ++b) {
                const auto& ga = s.group(a);
                const auto& gb = s.group(b);
                std::vector<std::size_t> common;
                std::set_intersection(ga.begin(), ga.end(), gb.begin(), gb.end(), std::back_inserter(common));
                if (!common.empty() && common.size() != ga.size() && common.size() != gb.size()) pairwise = false;
            }
        EXPECT_EQ(s.is_laminar(), pairwise);
    }
}

TEST(GroupStructure, Validation) {
    EXPECT_THROW(GroupStructure(2, {{0, 2}}, {1.0}), ParameterError);
    EXPECT_THROW(GroupStructure(2, {{0}}, {0.0}), ParameterError);
    EXPECT_THROW(GroupStructure(2, {{0}}, {-1.0}), ParameterError);
    EXPECT_THROW(GroupStructure(2, {{}}, {1.0}), ParameterError);
    EXPECT_THROW(GroupStructure(2, {{0, 0}}, {1.0}), ParameterError);
}

TEST(BuildHierarchical, Examples) {
    const auto s0 = build_hierarchical(0);
    ASSERT_EQ(s0.size(), 1u);
    EXPECT_EQ(s0.group(0), (std::vector<std::size_t>{0}));
    EXPECT_EQ(s0.weight(0), 1.0);

    const auto s2 = build_hierarchical(2);
    EXPECT_EQ(s2.dimension(), 4u);
    ASSERT_EQ(s2.size(), 7u);
    // g_{1,2} = {3, 4} in 1-based indexing: level 1 starts after the 4 leaves
    EXPECT_EQ(s2.group(5), (std::vector<std::size_t>{2, 3}));
    EXPECT_DOUBLE_EQ(s2.weight(5), std::sqrt(2.0));
    EXPECT_TRUE(s2.is_laminar());

    const auto s5 = build_hierarchical(5);
    EXPECT_EQ(s5.size(), 63u);
    EXPECT_EQ(s5.dimension(), 32u);
    EXPECT_TRUE(s5.is_laminar());
    for (std::size_t g = 0; g < s5.size(); ++g)
        EXPECT_DOUBLE_EQ(s5.weight(g), std::sqrt(static_cast<double>(s5.group(g).size())));

    EXPECT_THROW(build_hierarchical(-1), ParameterError);
    EXPECT_THROW(build_hierarchical(40), CapacityError);
}

TEST(OperatorNorm, Examples) {
    EXPECT_NEAR(operator_norm(Regularizer::l1(0.1, 5)), 0.1, 1e-16);
    const auto tree = Regularizer::group_norm(0.1, build_hierarchical(2));
    EXPECT_NEAR(operator_norm(tree), 0.1 * std::sqrt(7.0), 1e-15);
    EXPECT_NEAR(operator_norm(tree), csgd::testing::power_iteration_norm(csgd::testing::materialize_a(tree)), 1e-9);
    EXPECT_EQ(operator_norm(Regularizer::group_norm(0.0, build_hierarchical(3))), 0.0);
}

TEST(OperatorNorm, MatchesDenseSingularValue) {
    RngStream rng(41);
    for (int inst = 0; inst < 30; ++inst) {
        const std::size_t p = 1 + rng.uniform_index(12);
        const auto reg = Regularizer::group_norm(0.05 + rng.uniform(), random_overlapping(p, 1 + rng.uniform_index(6), rng));
        const Eigen::JacobiSVD<Eigen::MatrixXd> svd(csgd::testing::materialize_a(reg));
        const double dense = svd.singularValues()(0);
        EXPECT_NEAR(operator_norm(reg), dense, 1e-12 * dense);
        EXPECT_NEAR(csgd::testing::power_iteration_norm(csgd::testing::materialize_a(reg)), dense, 1e-6 * dense);
    }
}

TEST(LinearMapA, ApplyAdjointMatchDenseAndScaleDiagonally) {
    RngStream rng(43);
    const auto reg = Regularizer::group_norm(0.3, random_overlapping(7, 4, rng));
    const LinearMapA a(reg);
    const Eigen::MatrixXd dense = csgd::testing::materialize_a(reg);
    const Vector beta = random_vector(rng, 7);
    const DualVector ab = a.apply(beta);
    const Eigen::VectorXd dense_ab = dense * Eigen::Map<const Eigen::VectorXd>(beta.data(), 7);
    ASSERT_EQ(ab.values.size(), static_cast<std::size_t>(dense_ab.size()));
    for (std::size_t r = 0; r < ab.values.size(); ++r) EXPECT_NEAR(ab.values[r], dense_ab[static_cast<long>(r)], 1e-14);
    const Vector back = a.adjoint(ab);
    for (std::size_t j = 0; j < 7; ++j)
        EXPECT_NEAR(back[j], 0.09 * reg.structure->weight_sq_at(j) * beta[j], 1e-13);
}

TEST(GroupsFile, ParseAndWrite) {
    std::istringstream in("# tree over 4\n1: 1\n1: 2\n1.4142135623730951: 1,2\n\n2: 1, 2, 3, 4\n");
    const auto s = parse_groups(in, 4);
    ASSERT_EQ(s.size(), 4u);
    EXPECT_EQ(s.group(2), (std::vector<std::size_t>{0, 1}));
    EXPECT_EQ(s.weight(3), 2.0);
    EXPECT_TRUE(s.is_laminar());

    std::ostringstream out;
    write_groups(out, build_hierarchical(3));
    std::istringstream again(out.str());
    const auto t = parse_groups(again, 8);
    const auto ref = build_hierarchical(3);
    ASSERT_EQ(t.size(), ref.size());
    for (std::size_t g = 0; g < t.size(); ++g) {
        EXPECT_EQ(t.group(g), ref.group(g));
        EXPECT_EQ(t.weight(g), ref.weight(g));
    }
}

TEST(GroupsFile, RejectsBadInput) {
    std::istringstream missing_colon("1 1,2\n");
    EXPECT_THROW(parse_groups(missing_colon, 2), ParameterError);
    std::istringstream zero_index("1: 0,1\n");
    EXPECT_THROW(parse_groups(zero_index, 2), ParameterError);
    std::istringstream out_of_range("1: 1,3\n");
    EXPECT_THROW(parse_groups(out_of_range, 2), ParameterError);
    std::istringstream bad_weight("abc: 1\n");
    EXPECT_THROW(parse_groups(bad_weight, 2), ParameterError);
}
