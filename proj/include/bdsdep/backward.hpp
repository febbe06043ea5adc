#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bdsdep/drivers.hpp"
#include "bdsdep/errors.hpp"
#include "bdsdep/forward.hpp"
#include "bdsdep/mollify.hpp"
#include "bdsdep/noise.hpp"
#include "bdsdep/problem.hpp"
#include "bdsdep/regression.hpp"
#include "bdsdep/rng.hpp"

namespace bdsdep {

enum class PicardInit { Zero, Random };

struct BackwardConfig {
    std::size_t innerPaths = 10000;
    PolynomialBasis basis{2};
    double picardTol = 1e-13;
    std::size_t picardMaxIter = 200;
    std::optional<int> mollifyOrder;
    MollifierConfig mollifier;
    PicardInit picardInit = PicardInit::Zero;
    std::uint64_t picardInitSeed = 7;

    void validate(std::size_t m) const {
        const std::size_t nb = basis.size(m);
        if (innerPaths < 10 * nb) {
            throw ValidationError("innerPaths (" + std::to_string(innerPaths) + ") must be >= 10 x basis size (" +
                                  std::to_string(nb) + ")");
        }
        if (basis.degree < 0) throw ValidationError("basis degree must be >= 0");
        if (!(picardTol > 0.0)) throw ValidationError("picardTol must be > 0");
        if (picardMaxIter == 0) throw ValidationError("picardMaxIter must be >= 1");
        if (mollifyOrder && *mollifyOrder < 1) throw ValidationError("mollifyOrder must be >= 1");
    }
};

struct StepDiagnostics {
    std::size_t iterations = 0;
    double residual = 0.0;
    std::size_t alive = 0;
    bool ridge = false;
};

/// Pathwise discrete solution. P[i] is paths x n; Q[i] is paths x (n d) with entry (a, b)
/// of the n x d matrix stored at column a + n b; K[i] is paths x (n r) laid out the same way.
struct BackwardSolution {
    TimeGrid grid;
    MarkSpace marks;
    std::size_t n = 1;
    std::size_t d = 1;
    std::size_t paths = 0;
    std::vector<Eigen::MatrixXd> P;
    std::vector<Eigen::MatrixXd> Q;
    std::vector<Eigen::MatrixXd> K;
    std::vector<std::size_t> tauIndex;
    std::vector<StepDiagnostics> diagnostics;
    std::optional<int> mollifyOrder;
    bool gDependsOnK = false;

    std::size_t r() const noexcept { return marks.size(); }

    /// Mean of P at the initial time (all paths share X_0, so rows agree up to rounding).
    Eigen::VectorXd p0() const { return P.front().colwise().mean().transpose(); }

    std::size_t max_picard_iterations() const {
        std::size_t k = 0;
        for (const auto& s : diagnostics) k = std::max(k, s.iterations);
        return k;
    }
};

/// Step-local data for one Picard application: conditional expectation of P_{i+1},
/// the already estimated Q_i, K_i and the backward increment dB_i.
struct PicardContext {
    double t = 0.0;
    double dt = 0.0;
    const DriverSpec* driver = nullptr;
    const Eigen::MatrixXd* X = nullptr;         ///< rows x m
    const Eigen::MatrixXd* condExp = nullptr;   ///< rows x n
    const Eigen::MatrixXd* Q = nullptr;         ///< rows x (n d)
    const Eigen::MatrixXd* K = nullptr;         ///< rows x (n r)
    Eigen::VectorXd dB;                         ///< l
};

struct PicardResult {
    Eigen::MatrixXd next;
    double residual = 0.0;
};

/// One application of P -> E_i[P_{i+1}] + f(t_i, X, P, Q_i, K_i) dt + g(t_i, X, P, Q_i, K_i) dB_i
/// on every row; residual is the max-norm change.
inline PicardResult picard_step(const Eigen::MatrixXd& prev, const PicardContext& ctx) {
    const DriverSpec& drv = *ctx.driver;
    const auto n = static_cast<Eigen::Index>(drv.n);
    const auto d = static_cast<Eigen::Index>(drv.d);
    const auto r = static_cast<Eigen::Index>(drv.marks.size());
    PicardResult out{Eigen::MatrixXd(prev.rows(), prev.cols()), 0.0};
    Eigen::VectorXd x(ctx.X->cols()), p(prev.cols());
    Eigen::MatrixXd q(n, d), k(n, r);
    Eigen::VectorXd gdB(n);
    for (Eigen::Index row = 0; row < prev.rows(); ++row) {
        x = ctx.X->row(row).transpose();
        p = prev.row(row).transpose();
        for (Eigen::Index c = 0; c < n * d; ++c) q.data()[c] = (*ctx.Q)(row, c);
        for (Eigen::Index c = 0; c < n * r; ++c) k.data()[c] = (*ctx.K)(row, c);
        out.next.row(row) = ctx.condExp->row(row) + ctx.dt * drv.f1(ctx.t, x, p, q, k).transpose();
        out.next.row(row) += ctx.dt * drv.f2(ctx.t, x, p, q, k).transpose();
        if (ctx.dB.size() > 0) {
            gdB.noalias() = drv.g(ctx.t, x, p, q, k) * ctx.dB;
            out.next.row(row) += gdB.transpose();
        }
    }
    out.residual = prev.rows() > 0 ? (out.next - prev).cwiseAbs().maxCoeff() : 0.0;
    return out;
}

/// Two-level regression solver on pre-simulated inner paths with one fixed backward
/// Brownian slice dB (steps x l).
///
/// For i = steps-1 .. 0, on paths still inside the domain (i < tau):
///   E_i[.]  = least-squares projection onto the polynomial basis of X_{t_i},
///   Q_i     = E_i[(P_{i+1} - E_i P_{i+1}) dW_i^T] / dt,
///   K_i(z_j)= E_i[(P_{i+1} - E_i P_{i+1}) dN~_{i,j}] / (lambda_j dt),
///   P_i     = fixed point of the Picard map above.
/// Paths with i >= tau keep P_i = xi and Q_i = K_i = 0.
inline BackwardSolution solve_backward_paths(const std::vector<ForwardPath>& paths,
                                             const std::vector<NoiseBundle>& bundles, const DriverSpec& driver,
                                             const TerminalSpec& terminal, const BackwardConfig& cfg,
                                             const Eigen::MatrixXd& dB) {
    if (paths.empty() || paths.size() != bundles.size()) {
        throw ValidationError("solve_backward: need one noise bundle per path");
    }
    driver.validate();
    const TimeGrid grid = paths.front().grid;
    const std::size_t m = static_cast<std::size_t>(paths.front().X.cols());
    cfg.validate(m);
    if (paths.size() < 10 * cfg.basis.size(m)) {
        throw ValidationError("solve_backward: fewer paths than 10 x basis size");
    }
    if (static_cast<std::size_t>(dB.rows()) != grid.steps || static_cast<std::size_t>(dB.cols()) != driver.l) {
        throw ValidationError("solve_backward: dB slice must be steps x l");
    }
    if (!(driver.mu * grid.dt < 1.0)) {
        throw ValidationError("solve_backward: stepwise contraction needs mu * dt < 1 (mu=" + std::to_string(driver.mu) +
                              ", dt=" + std::to_string(grid.dt) + ")");
    }

    const std::size_t M = paths.size();
    const auto n = static_cast<Eigen::Index>(driver.n);
    const auto d = static_cast<Eigen::Index>(driver.d);
    const auto r = static_cast<Eigen::Index>(driver.marks.size());
    const double dt = grid.dt;

    BackwardSolution sol;
    sol.grid = grid;
    sol.marks = driver.marks;
    sol.n = driver.n;
    sol.d = driver.d;
    sol.paths = M;
    sol.mollifyOrder = driver.mollifiedOrder;
    sol.gDependsOnK = g_depends_on_k(driver);
    sol.P.assign(grid.steps + 1, Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(M), n));
    sol.Q.assign(grid.steps, Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(M), n * d));
    sol.K.assign(grid.steps, Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(M), n * r));
    sol.diagnostics.assign(grid.steps, StepDiagnostics{});
    sol.tauIndex.resize(M);

    Eigen::MatrixXd xi(static_cast<Eigen::Index>(M), n);
    for (std::size_t p = 0; p < M; ++p) {
        if (!(paths[p].grid == grid)) throw ValidationError("solve_backward: paths on different grids");
        sol.tauIndex[p] = paths[p].exitIndex;
        const Eigen::VectorXd v = terminal.xi(paths[p]);
        if (v.size() != n || !v.allFinite()) throw BlowUpError("terminal value invalid on path " + std::to_string(p), grid.steps);
        xi.row(static_cast<Eigen::Index>(p)) = v.transpose();
    }
    sol.P[grid.steps] = xi;

    PhiloxEngine initEng(cfg.picardInitSeed, 0, 13);
    std::normal_distribution<double> normal(0.0, 1.0);

    for (std::size_t step = grid.steps; step-- > 0;) {
        const auto si = static_cast<Eigen::Index>(step);
        std::vector<Eigen::Index> alive;
        for (std::size_t p = 0; p < M; ++p) {
            if (step >= sol.tauIndex[p]) {
                sol.P[step].row(static_cast<Eigen::Index>(p)) = xi.row(static_cast<Eigen::Index>(p));
            } else {
                alive.push_back(static_cast<Eigen::Index>(p));
            }
        }
        StepDiagnostics& diag = sol.diagnostics[step];
        diag.alive = alive.size();
        if (alive.empty()) continue;

        const auto A = static_cast<Eigen::Index>(alive.size());
        Eigen::MatrixXd X(A, static_cast<Eigen::Index>(m));
        Eigen::MatrixXd next(A, n);
        for (Eigen::Index a = 0; a < A; ++a) {
            const auto p = static_cast<std::size_t>(alive[static_cast<std::size_t>(a)]);
            X.row(a) = paths[p].X.row(si);
            next.row(a) = sol.P[step + 1].row(alive[static_cast<std::size_t>(a)]);
        }

        const Regression reg(X, cfg.basis, step);
        diag.ridge = reg.used_ridge();
        const Eigen::MatrixXd condExp = reg.fit(next);
        const Eigen::MatrixXd resid = next - condExp;

        Eigen::MatrixXd products(A, n * d + n * r);
        for (Eigen::Index a = 0; a < A; ++a) {
            const NoiseBundle& nb = bundles[static_cast<std::size_t>(alive[static_cast<std::size_t>(a)])];
            for (Eigen::Index b = 0; b < d; ++b)
                for (Eigen::Index c = 0; c < n; ++c) products(a, c + n * b) = resid(a, c) * nb.dW(si, b);
            for (Eigen::Index j = 0; j < r; ++j) {
                const double dn = static_cast<double>(nb.jumpCounts(si, j)) -
                                  driver.marks.weights[static_cast<std::size_t>(j)] * dt;
                for (Eigen::Index c = 0; c < n; ++c) products(a, n * d + c + n * j) = resid(a, c) * dn;
            }
        }
        const Eigen::MatrixXd fitted = reg.fit(products);
        Eigen::MatrixXd Qa = fitted.leftCols(n * d) / dt;
        Eigen::MatrixXd Ka = fitted.rightCols(n * r);
        for (Eigen::Index j = 0; j < r; ++j)
            Ka.middleCols(n * j, n) /= driver.marks.weights[static_cast<std::size_t>(j)] * dt;

        PicardContext ctx;
        ctx.t = grid.time(step);
        ctx.dt = dt;
        ctx.driver = &driver;
        ctx.X = &X;
        ctx.condExp = &condExp;
        ctx.Q = &Qa;
        ctx.K = &Ka;
        ctx.dB = dB.row(si).transpose();

        Eigen::MatrixXd current = Eigen::MatrixXd::Zero(A, n);
        if (cfg.picardInit == PicardInit::Random) {
            for (Eigen::Index i = 0; i < current.size(); ++i) current.data()[i] = 10.0 * normal(initEng);
        }
        std::vector<double> history;
        bool converged = false;
        for (std::size_t it = 0; it < cfg.picardMaxIter; ++it) {
            PicardResult res = picard_step(current, ctx);
            if (!res.next.allFinite()) throw BlowUpError("solve_backward: non-finite Picard iterate", step);
            current = std::move(res.next);
            history.push_back(res.residual);
            const double scale = std::max(1.0, current.cwiseAbs().maxCoeff());
            if (res.residual <= cfg.picardTol * scale) {
                converged = true;
                break;
            }
        }
        diag.iterations = history.size();
        diag.residual = history.back();
        if (!converged) throw DivergenceError("Picard iteration did not converge", step, std::move(history));

        for (Eigen::Index a = 0; a < A; ++a) {
            const Eigen::Index p = alive[static_cast<std::size_t>(a)];
            sol.P[step].row(p) = current.row(a);
            sol.Q[step].row(p) = Qa.row(a);
            sol.K[step].row(p) = Ka.row(a);
        }
    }
    return sol;
}

/// Driver actually used by the solver: mollified when the config (or the problem default) asks for it.
inline DriverSpec effective_driver(const DriverSpec& driver, const BackwardConfig& cfg,
                                   std::optional<int> problemDefault = std::nullopt) {
    const std::optional<int> order = cfg.mollifyOrder ? cfg.mollifyOrder : problemDefault;
    if (!order || driver.mollifiedOrder) return driver;
    MollifierConfig mc = cfg.mollifier;
    mc.order = *order;
    return mollify_driver(driver, mc);
}

struct InnerSample {
    std::vector<NoiseBundle> bundles;
    std::vector<ForwardPath> paths;
};

/// Simulates `count` forward paths; bundle p uses Philox stream (seed, p) without a B block.
inline InnerSample simulate_inner(const ForwardModel& model, const TimeGrid& grid, const MarkSpace& marks,
                                  std::size_t count, std::uint64_t seed) {
    InnerSample s;
    s.bundles.reserve(count);
    s.paths.reserve(count);
    for (std::size_t p = 0; p < count; ++p) {
        s.bundles.push_back(generate_bundle(grid, NoiseDims{model.d, 0}, marks, seed, static_cast<std::uint32_t>(p)));
        s.paths.push_back(simulate_forward(model, s.bundles.back()));
    }
    return s;
}

/// One solve for a fixed backward slice dB; inner W/N paths are drawn from `innerSeed`.
inline BackwardSolution solve_backward(const ForwardModel& model, const DriverSpec& driver,
                                       const TerminalSpec& terminal, const BackwardConfig& cfg, const TimeGrid& grid,
                                       const Eigen::MatrixXd& dB, std::uint64_t innerSeed) {
    if (model.d != driver.d) throw ValidationError("solve_backward: forward and driver disagree on d");
    const DriverSpec used = effective_driver(driver, cfg);
    const InnerSample inner = simulate_inner(model, grid, driver.marks, cfg.innerPaths, innerSeed);
    return solve_backward_paths(inner.paths, inner.bundles, used, terminal, cfg, dB);
}

struct SolutionNorms {
    double sSq = 0.0;  ///< mean over paths of max_i |P_i|^2
    double mSq = 0.0;  ///< mean of sum_i |Q_i|^2 dt
    double fSq = 0.0;  ///< mean of sum_i sum_j |K_i(z_j)|^2 lambda_j dt

    double total() const noexcept { return sSq + mSq + fSq; }
};

inline SolutionNorms solution_norms(const BackwardSolution& sol) {
    SolutionNorms out;
    if (sol.paths == 0) return out;
    const auto n = static_cast<Eigen::Index>(sol.n);
    const double dt = sol.grid.dt;
    for (std::size_t p = 0; p < sol.paths; ++p) {
        const auto row = static_cast<Eigen::Index>(p);
        double sup = 0.0;
        for (const auto& P : sol.P) sup = std::max(sup, P.row(row).squaredNorm());
        out.sSq += sup;
        for (std::size_t i = 0; i < sol.Q.size(); ++i) {
            out.mSq += sol.Q[i].row(row).squaredNorm() * dt;
            for (std::size_t j = 0; j < sol.r(); ++j)
                out.fSq += sol.K[i].row(row).segment(n * static_cast<Eigen::Index>(j), n).squaredNorm() *
                           sol.marks.weights[j] * dt;
        }
    }
    const double inv = 1.0 / static_cast<double>(sol.paths);
    out.sSq *= inv;
    out.mSq *= inv;
    out.fSq *= inv;
    return out;
}

/// Sample mean of |xi|^2 over the paths of a solution.
inline double terminal_second_moment(const BackwardSolution& sol) {
    return sol.P.back().rowwise().squaredNorm().mean();
}

/// Seeds for outer run `run`: the backward slice and the inner W/N sample.
struct RunSeeds {
    std::uint64_t backward;
    std::uint64_t inner;
};

inline RunSeeds outer_run_seeds(std::uint64_t seed, std::size_t run) {
    return {mix_seed(seed, 0xB000'0000ull + run), mix_seed(seed, run)};
}

struct OuterRun {
    Eigen::VectorXd p0;
    SolutionNorms norms;
    double xiSecondMoment = 0.0;
    std::size_t maxPicardIterations = 0;
    std::size_t ridgeSteps = 0;
    std::vector<StepDiagnostics> diagnostics;
    Eigen::MatrixXd meanP;  ///< (steps+1) x n, path average of P_i
};

struct OuterSummary {
    std::vector<OuterRun> runs;
    Eigen::VectorXd mean;
    Eigen::VectorXd std;  ///< sample standard deviation over runs (0 for a single run)
    std::optional<int> mollifyOrder;
    bool gDependsOnK = false;
};

inline Eigen::VectorXd sample_std(const std::vector<Eigen::VectorXd>& xs, const Eigen::VectorXd& mean) {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(mean.size());
    if (xs.size() < 2) return s;
    for (const auto& x : xs) s += (x - mean).cwiseAbs2();
    return (s / static_cast<double>(xs.size() - 1)).cwiseSqrt();
}

/// Outer loop over independent backward Brownian slices; each run gets its own inner sample.
inline OuterSummary solve_outer(const Problem& problem, const BackwardConfig& cfg, std::size_t steps,
                                std::size_t outerRuns, std::uint64_t seed) {
    if (outerRuns == 0) throw ValidationError("outerRuns must be >= 1");
    const TimeGrid grid = TimeGrid::make(problem.forward.tStart, problem.T, steps);
    const DriverSpec used = effective_driver(problem.driver, cfg, problem.mollifyOrder);
    OuterSummary out;
    out.mollifyOrder = used.mollifiedOrder;
    std::vector<Eigen::VectorXd> p0s;
    for (std::size_t run = 0; run < outerRuns; ++run) {
        const RunSeeds seeds = outer_run_seeds(seed, run);
        const Eigen::MatrixXd dB = generate_backward_slice(grid, used.l, seeds.backward, 0);
        const InnerSample inner = simulate_inner(problem.forward, grid, used.marks, cfg.innerPaths, seeds.inner);
        const BackwardSolution sol = solve_backward_paths(inner.paths, inner.bundles, used, problem.terminal, cfg, dB);
        OuterRun rec;
        rec.p0 = sol.p0();
        rec.norms = solution_norms(sol);
        rec.xiSecondMoment = terminal_second_moment(sol);
        rec.maxPicardIterations = sol.max_picard_iterations();
        for (const auto& s : sol.diagnostics) rec.ridgeSteps += s.ridge ? 1 : 0;
        rec.diagnostics = sol.diagnostics;
        rec.meanP.resize(static_cast<Eigen::Index>(sol.P.size()), static_cast<Eigen::Index>(sol.n));
        for (std::size_t i = 0; i < sol.P.size(); ++i)
            rec.meanP.row(static_cast<Eigen::Index>(i)) = sol.P[i].colwise().mean();
        out.gDependsOnK = sol.gDependsOnK;
        p0s.push_back(rec.p0);
        out.runs.push_back(std::move(rec));
    }
    out.mean = Eigen::VectorXd::Zero(p0s.front().size());
    for (const auto& v : p0s) out.mean += v;
    out.mean /= static_cast<double>(p0s.size());
    out.std = sample_std(p0s, out.mean);
    return out;
}

}  // namespace bdsdep
