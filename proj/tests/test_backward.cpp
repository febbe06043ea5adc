#include <cmath>

#include <gtest/gtest.h>

#include "bdsdep/backward.hpp"
#include "bdsdep/catalog.hpp"
#include "bdsdep/oracle.hpp"

using namespace bdsdep;

namespace {

BackwardConfig small_config(std::size_t innerPaths = 2000) {
    BackwardConfig cfg;
    cfg.innerPaths = innerPaths;
    return cfg;
}

BackwardSolution solve_catalog(const std::string& name, std::size_t steps, const BackwardConfig& cfg,
                               std::uint64_t seed = 1) {
    const Problem pb = builtin_driver(name);
    const TimeGrid grid = TimeGrid::make(0.0, pb.T, steps);
    const Eigen::MatrixXd dB = generate_backward_slice(grid, pb.driver.l, seed, 0);
    return solve_backward(pb.forward, pb.driver, pb.terminal, cfg, grid, dB, seed + 1);
}

/// X = x0 + W + compensated jumps of size z; f = g = 0; xi = X_T. Then P = X, Q = 1, K(z) = z.
Problem martingale_problem() {
    Problem pb = builtin_driver("zero");
    pb.driver.marks = MarkSpace::make({0.5, -0.8}, {1.0, 2.0});
    pb.driver.mu_t = [](double) { return 1.0; };
    pb.driver.refresh_mu_bar();
    pb.terminal.xi = [](const ForwardPath& p) { return Eigen::VectorXd(p.exit_state()); };
    return pb;
}

}  // namespace

TEST(PolynomialBasis, SizesAreBinomialCoefficients) {
    EXPECT_EQ(PolynomialBasis{0}.size(3), 1u);
    EXPECT_EQ(PolynomialBasis{2}.size(1), 3u);
    EXPECT_EQ(PolynomialBasis{2}.size(2), 6u);
    EXPECT_EQ(PolynomialBasis{3}.size(3), 20u);
    const auto e = PolynomialBasis{2}.exponents(2);
    EXPECT_EQ(e.front(), (std::vector<int>{0, 0}));
}

TEST(Regression, ReproducesPolynomialsInTheBasis) {
    PhiloxEngine eng(1, 0, 0);
    Eigen::MatrixXd X(200, 2);
    for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = 4.0 * eng.uniform_open() - 2.0;
    Eigen::MatrixXd y(200, 1);
    y.col(0) = 1.0 + 2.0 * X.col(0).array() - X.col(0).array() * X.col(1).array() + 0.5 * X.col(1).array().square();
    const Regression reg(X, PolynomialBasis{2}, 0);
    EXPECT_FALSE(reg.used_ridge());
    EXPECT_LT((reg.fit(y) - y).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Regression, DropsConstantCoordinatesAndFallsBackToRidge) {
    Eigen::MatrixXd X(50, 2);
    for (Eigen::Index i = 0; i < 50; ++i) {
        X(i, 0) = static_cast<double>(i) / 10.0;
        X(i, 1) = 3.0;
    }
    const Regression dropped(X, PolynomialBasis{2}, 0);
    EXPECT_EQ(dropped.basis_size(), 3);
    EXPECT_FALSE(dropped.used_ridge());

    // duplicated coordinate makes the design rank deficient
    Eigen::MatrixXd dup(50, 2);
    dup.col(0) = X.col(0);
    dup.col(1) = X.col(0);
    const Regression ridge(dup, PolynomialBasis{1}, 4);
    EXPECT_TRUE(ridge.used_ridge());
    Eigen::MatrixXd y(50, 1);
    y.col(0) = 2.0 * X.col(0).array() + 1.0;
    EXPECT_LT((ridge.fit(y) - y).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Regression, ConstantTargetIsReturnedExactly) {
    Eigen::MatrixXd X(30, 1);
    for (Eigen::Index i = 0; i < 30; ++i) X(i, 0) = std::sin(static_cast<double>(i));
    const Eigen::MatrixXd y = Eigen::MatrixXd::Constant(30, 1, 0.1);
    EXPECT_EQ(Regression(X, PolynomialBasis{3}, 0).fit(y), y);
}

TEST(BackwardConfig, Validation) {
    BackwardConfig cfg = small_config(29);
    EXPECT_THROW(cfg.validate(1), ValidationError);
    cfg.innerPaths = 30;
    EXPECT_NO_THROW(cfg.validate(1));
    EXPECT_THROW(cfg.validate(2), ValidationError);
    cfg.picardTol = 0.0;
    EXPECT_THROW(cfg.validate(1), ValidationError);
    cfg = small_config();
    cfg.picardMaxIter = 0;
    EXPECT_THROW(cfg.validate(1), ValidationError);
    cfg = small_config();
    cfg.mollifyOrder = 0;
    EXPECT_THROW(cfg.validate(1), ValidationError);
}

TEST(PicardStep, ContractsAtRateMuDt) {
    DriverSpec s = builtin_driver("linear-scalar").driver;
    const double dt = 0.05;
    const Eigen::MatrixXd X = Eigen::MatrixXd::Zero(3, 1);
    const Eigen::MatrixXd ce = Eigen::MatrixXd::Constant(3, 1, 2.0);
    const Eigen::MatrixXd QK = Eigen::MatrixXd::Zero(3, 1);
    PicardContext ctx{0.0, dt, &s, &X, &ce, &QK, &QK, Eigen::VectorXd::Zero(1)};
    const PicardResult r1 = picard_step(Eigen::MatrixXd::Zero(3, 1), ctx);
    EXPECT_TRUE(r1.next.isApprox(ce));
    EXPECT_DOUBLE_EQ(r1.residual, 2.0);
    const PicardResult r2 = picard_step(r1.next, ctx);
    EXPECT_NEAR(r2.residual / r1.residual, dt, 1e-14);
    const PicardResult r3 = picard_step(r2.next, ctx);
    EXPECT_NEAR(r3.residual / r2.residual, dt, 1e-12);
}

TEST(PicardStep, PIndependentDriverConvergesInOneUpdate) {
    DriverSpec s = builtin_driver("zero").driver;
    s.f2 = [](double, const Eigen::VectorXd&, const Eigen::VectorXd& p, const Eigen::MatrixXd&, const Eigen::MatrixXd&) {
        return Eigen::VectorXd::Constant(p.size(), 3.0);
    };
    s.g = [](double, const Eigen::VectorXd&, const Eigen::VectorXd& p, const Eigen::MatrixXd&, const Eigen::MatrixXd&) {
        return Eigen::MatrixXd::Constant(p.size(), 1, 0.5);
    };
    const Eigen::MatrixXd X = Eigen::MatrixXd::Zero(2, 1);
    const Eigen::MatrixXd ce = Eigen::MatrixXd::Constant(2, 1, 1.0);
    const Eigen::MatrixXd QK = Eigen::MatrixXd::Zero(2, 1);
    PicardContext ctx{0.0, 0.1, &s, &X, &ce, &QK, &QK, Eigen::VectorXd::Constant(1, 0.2)};
    const PicardResult r1 = picard_step(Eigen::MatrixXd::Constant(2, 1, -7.0), ctx);
    EXPECT_NEAR(r1.next(0, 0), 1.0 + 0.3 + 0.1, 1e-15);
    EXPECT_EQ(picard_step(r1.next, ctx).residual, 0.0);
}

TEST(SolveBackward, ZeroDriverKeepsTheTerminalConstant) {
    const BackwardSolution sol = solve_catalog("zero", 20, small_config(500));
    for (const auto& P : sol.P) EXPECT_LT((P.array() - 1.5).abs().maxCoeff(), 1e-10);
    for (const auto& Q : sol.Q) EXPECT_LT(Q.cwiseAbs().maxCoeff(), 1e-10);
    for (const auto& K : sol.K) EXPECT_LT(K.cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_EQ(sol.p0()[0], 1.5);
}

TEST(SolveBackward, LinearDriverFollowsTheImplicitRecursionAndTheExactSolution) {
    const std::size_t steps = 100;
    const BackwardSolution sol = solve_catalog("linear-scalar", steps, small_config(500));
    const double dt = 1.0 / steps;
    // P_i = P_{i+1} + P_i dt
    EXPECT_NEAR(sol.p0()[0], std::pow(1.0 - dt, -static_cast<double>(steps)), 1e-10);
    const double exact = oracle::analytic_linear(1.0, 1.0, 1.0, 0.0);
    EXPECT_LT(std::abs(sol.p0()[0] - exact) / exact, 0.02);
    for (std::size_t i = 0; i <= steps; ++i)
        EXPECT_NEAR(sol.P[i].mean(), oracle::analytic_linear(1.0, 1.0, 1.0, sol.grid.time(i)), 0.02 * std::exp(1.0));
}

TEST(SolveBackward, TerminalRowEqualsXiOnEveryPath) {
    const Problem pb = builtin_driver("jump-coupled");
    const TimeGrid grid = TimeGrid::make(0.0, 1.0, 20);
    const BackwardConfig cfg = small_config(400);
    const InnerSample inner = simulate_inner(pb.forward, grid, pb.driver.marks, cfg.innerPaths, 3);
    const BackwardSolution sol = solve_backward_paths(inner.paths, inner.bundles, pb.driver, pb.terminal, cfg,
                                                      generate_backward_slice(grid, 1, 4, 0));
    for (std::size_t p = 0; p < sol.paths; ++p) {
        EXPECT_EQ(sol.P.back()(static_cast<Eigen::Index>(p), 0), pb.terminal.xi(inner.paths[p])[0]);
        EXPECT_EQ(sol.tauIndex[p], inner.paths[p].exitIndex);
    }
}

TEST(SolveBackward, StoppedPathsKeepTheTerminalValueAndZeroIntegrands) {
    Problem pb = builtin_driver("jump-coupled");
    pb.forward.domain = pb.forward.domain->scaled(0.2);  // (-0.4, 0.4): many paths exit
    const TimeGrid grid = TimeGrid::make(0.0, 1.0, 25);
    const BackwardConfig cfg = small_config(600);
    const InnerSample inner = simulate_inner(pb.forward, grid, pb.driver.marks, cfg.innerPaths, 5);
    const BackwardSolution sol = solve_backward_paths(inner.paths, inner.bundles, pb.driver, pb.terminal, cfg,
                                                      generate_backward_slice(grid, 1, 6, 0));
    std::size_t stopped = 0;
    for (std::size_t p = 0; p < sol.paths; ++p) {
        const auto row = static_cast<Eigen::Index>(p);
        const std::size_t tau = sol.tauIndex[p];
        if (tau >= grid.steps) continue;
        ++stopped;
        for (std::size_t i = tau; i < grid.steps; ++i) {
            EXPECT_EQ(sol.P[i](row, 0), sol.P.back()(row, 0));
            EXPECT_EQ(sol.Q[i].row(row).cwiseAbs().maxCoeff(), 0.0);
            EXPECT_EQ(sol.K[i].row(row).cwiseAbs().maxCoeff(), 0.0);
        }
    }
    EXPECT_GT(stopped, sol.paths / 4);
    EXPECT_LT(sol.diagnostics.back().alive, sol.diagnostics.front().alive + 1);
}

TEST(SolveBackward, DriftFreeSolutionAgreesWithNestedConditionalExpectation) {
    Problem pb = builtin_driver("zero");
    pb.forward = pb.forward.started_at(0.0, Eigen::VectorXd::Constant(1, 0.3));
    pb.forward.b = [](double, const Eigen::VectorXd& x) { return Eigen::VectorXd::Constant(x.size(), 0.4); };
    pb.terminal.xi = [](const ForwardPath& p) { return Eigen::VectorXd::Constant(1, std::cos(p.exit_state()[0])); };
    const std::size_t steps = 20;
    const TimeGrid grid = TimeGrid::make(0.0, 1.0, steps);
    const BackwardConfig cfg = small_config(4000);
    const BackwardSolution sol = solve_backward(pb.forward, pb.driver, pb.terminal, cfg, grid,
                                                generate_backward_slice(grid, 1, 7, 0), 8);
    // mean preservation of the projections makes P_0 the sample mean of xi
    EXPECT_NEAR(sol.p0()[0], sol.P.back().mean(), 1e-12);
    const oracle::Estimate ref = oracle::nested_ce(
        pb.forward, pb.driver.marks, [](const Eigen::VectorXd& x) { return std::cos(x[0]); }, 0.0, pb.forward.x0, 1.0,
        steps, 100000, 9);
    Eigen::ArrayXd xi = sol.P.back().col(0).array();
    const double se = std::sqrt((xi - xi.mean()).square().sum() / (xi.size() - 1.0) / xi.size());
    EXPECT_NEAR(sol.p0()[0], ref.mean, 4.0 * std::hypot(se, ref.stdError));
}

TEST(SolveBackward, RecoversTheMartingaleRepresentation) {
    const Problem pb = martingale_problem();
    const TimeGrid grid = TimeGrid::make(0.0, 1.0, 10);
    const BackwardSolution sol = solve_backward(pb.forward, pb.driver, pb.terminal, small_config(8000), grid,
                                                generate_backward_slice(grid, 1, 1, 0), 2);
    double q = 0.0;
    double k0 = 0.0;
    double k1 = 0.0;
    for (std::size_t i = 0; i < grid.steps; ++i) {
        q += sol.Q[i].mean();
        k0 += sol.K[i].col(0).mean();
        k1 += sol.K[i].col(1).mean();
    }
    const double s = static_cast<double>(grid.steps);
    EXPECT_NEAR(q / s, 1.0, 0.05);
    EXPECT_NEAR(k0 / s, 0.5, 0.1);
    EXPECT_NEAR(k1 / s, -0.8, 0.1);
    EXPECT_NEAR(sol.P[0].mean(), 0.0, 0.05);
}

TEST(SolveBackward, RandomPicardStartReachesTheSameFixedPoint) {
    BackwardConfig zero = small_config(400);
    BackwardConfig rnd = zero;
    rnd.picardInit = PicardInit::Random;
    const BackwardSolution a = solve_catalog("jump-coupled", 20, zero, 11);
    const BackwardSolution b = solve_catalog("jump-coupled", 20, rnd, 11);
    double gap = 0.0;
    for (std::size_t i = 0; i < a.P.size(); ++i) gap = std::max(gap, (a.P[i] - b.P[i]).cwiseAbs().maxCoeff());
    EXPECT_LT(gap, 1e-11);
    EXPECT_GT(b.max_picard_iterations(), a.max_picard_iterations());
}

TEST(SolveBackward, IsDeterministicAndDependsOnTheBackwardSlice) {
    const BackwardSolution a = solve_catalog("jump-coupled", 20, small_config(400), 21);
    const BackwardSolution b = solve_catalog("jump-coupled", 20, small_config(400), 21);
    for (std::size_t i = 0; i < a.P.size(); ++i) EXPECT_EQ(a.P[i], b.P[i]);
    const Problem pb = builtin_driver("jump-coupled");
    const TimeGrid grid = TimeGrid::make(0.0, 1.0, 20);
    const BackwardSolution c = solve_backward(pb.forward, pb.driver, pb.terminal, small_config(400), grid,
                                              generate_backward_slice(grid, 1, 99, 0), 22);
    EXPECT_NE(a.p0()[0], c.p0()[0]);
    EXPECT_FALSE(a.gDependsOnK);
}

TEST(SolveBackward, RejectsBadInputs) {
    const Problem pb = builtin_driver("linear-scalar");
    const TimeGrid one = TimeGrid::make(0.0, 1.0, 1);
    // mu dt = 1 breaks the stepwise contraction
    EXPECT_THROW(solve_backward(pb.forward, pb.driver, pb.terminal, small_config(100), one,
                                generate_backward_slice(one, 1, 1, 0), 2),
                 ValidationError);
    const TimeGrid grid = TimeGrid::make(0.0, 1.0, 10);
    EXPECT_THROW(solve_backward(pb.forward, pb.driver, pb.terminal, small_config(100), grid,
                                Eigen::MatrixXd::Zero(9, 1), 2),
                 ValidationError);
    const InnerSample inner = simulate_inner(pb.forward, grid, pb.driver.marks, 100, 1);
    std::vector<NoiseBundle> fewer(inner.bundles.begin(), inner.bundles.end() - 1);
    EXPECT_THROW(solve_backward_paths(inner.paths, fewer, pb.driver, pb.terminal, small_config(100),
                                      Eigen::MatrixXd::Zero(10, 1)),
                 ValidationError);
}

TEST(SolveBackward, ReportsPicardDivergenceWithResidualHistory) {
    BackwardConfig cfg = small_config(100);
    cfg.picardMaxIter = 2;
    try {
        solve_catalog("linear-scalar", 10, cfg);
        FAIL() << "expected DivergenceError";
    } catch (const DivergenceError& e) {
        EXPECT_EQ(e.step(), 9u);
        ASSERT_EQ(e.residuals().size(), 2u);
        EXPECT_NEAR(e.residuals()[1] / e.residuals()[0], 0.1, 1e-12);
    }
}

TEST(SolutionNorms, HandComputedExample) {
    BackwardSolution sol;
    sol.grid = TimeGrid::make(0.0, 1.0, 2);
    sol.marks = MarkSpace::make({1.0, 2.0}, {2.0, 0.5});
    sol.paths = 2;
    sol.P = {Eigen::MatrixXd(2, 1), Eigen::MatrixXd(2, 1), Eigen::MatrixXd(2, 1)};
    sol.P[0] << 1.0, -3.0;
    sol.P[1] << 2.0, 0.0;
    sol.P[2] << -1.0, 1.0;
    sol.Q = {Eigen::MatrixXd(2, 1), Eigen::MatrixXd(2, 1)};
    sol.Q[0] << 1.0, 2.0;
    sol.Q[1] << 0.0, 1.0;
    sol.K = {Eigen::MatrixXd(2, 2), Eigen::MatrixXd(2, 2)};
    sol.K[0] << 1.0, 2.0, 0.0, 0.0;
    sol.K[1] << 0.0, 0.0, 1.0, 4.0;
    const SolutionNorms nrm = solution_norms(sol);
    EXPECT_DOUBLE_EQ(nrm.sSq, (4.0 + 9.0) / 2.0);
    EXPECT_DOUBLE_EQ(nrm.mSq, (1.0 + 4.0 + 1.0) * 0.5 / 2.0);
    EXPECT_DOUBLE_EQ(nrm.fSq, ((1.0 * 2.0 + 4.0 * 0.5) + (1.0 * 2.0 + 16.0 * 0.5)) * 0.5 / 2.0);
    EXPECT_DOUBLE_EQ(nrm.total(), nrm.sSq + nrm.mSq + nrm.fSq);
    EXPECT_DOUBLE_EQ(terminal_second_moment(sol), 1.0);
}

TEST(SolveOuter, SummarisesIndependentRuns) {
    const Problem pb = builtin_driver("jump-coupled");
    const OuterSummary s = solve_outer(pb, small_config(300), 10, 4, 5);
    ASSERT_EQ(s.runs.size(), 4u);
    double mean = 0.0;
    for (const auto& r : s.runs) mean += r.p0[0];
    mean /= 4.0;
    EXPECT_NEAR(s.mean[0], mean, 1e-15);
    double var = 0.0;
    for (const auto& r : s.runs) var += (r.p0[0] - mean) * (r.p0[0] - mean);
    EXPECT_NEAR(s.std[0], std::sqrt(var / 3.0), 1e-15);
    EXPECT_GT(s.std[0], 0.0);
    EXPECT_EQ(s.runs[0].meanP.rows(), 11);
    EXPECT_FALSE(s.mollifyOrder.has_value());
    EXPECT_THROW(solve_outer(pb, small_config(300), 10, 0, 5), ValidationError);
    const OuterSummary again = solve_outer(pb, small_config(300), 10, 4, 5);
    EXPECT_EQ(again.mean, s.mean);
}

TEST(SolveOuter, SqrtLogIsMollifiedByDefault) {
    const Problem pb = builtin_driver("dissipative-sqrtlog");
    BackwardConfig cfg = small_config(300);
    const OuterSummary s = solve_outer(pb, cfg, 10, 1, 3);
    EXPECT_EQ(s.mollifyOrder, std::optional<int>(8));
    cfg.mollifyOrder = 2;
    EXPECT_EQ(solve_outer(pb, cfg, 10, 1, 3).mollifyOrder, std::optional<int>(2));
    EXPECT_TRUE(std::isfinite(s.mean[0]));
}
