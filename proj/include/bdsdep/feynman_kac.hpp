#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bdsdep/backward.hpp"
#include "bdsdep/drivers.hpp"
#include "bdsdep/errors.hpp"
#include "bdsdep/forward.hpp"
#include "bdsdep/problem.hpp"

namespace bdsdep {

using BoundaryFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
using SurfaceFn = std::function<double(double, const Eigen::VectorXd&)>;

/// Data of the quasilinear backward equation u(t, x) = P_t^{t,x}: forward coefficients
/// (b, sigma, h, D), driver (f, g) and the single function Phi used both as terminal
/// value at T and as boundary value on leaving D.
struct FKProblem {
    std::string name;
    ForwardModel forward;
    DriverSpec driver;
    BoundaryFn Phi;
    double T = 1.0;
    SurfaceFn reference;  ///< closed-form u when known
    std::optional<int> mollifyOrder;

    /// The backward problem started at (t, x) with xi = Phi(X_tau).
    Problem at(double t, const Eigen::VectorXd& x) const {
        Problem p;
        p.name = name;
        p.forward = forward.started_at(t, x);
        p.driver = driver;
        p.driver.horizon = T - t;
        p.T = T;
        p.mollifyOrder = mollifyOrder;
        auto phi = Phi;
        p.terminal.xi = [phi](const ForwardPath& path) { return phi(path.exit_state()); };
        return p;
    }
};

inline const std::vector<std::string>& fk_names() {
    static const std::vector<std::string> names{"heat-quadratic", "jump-linear", "brownian-linear", "stochastic-heat",
                                                "drift-exit"};
    return names;
}

namespace detail {

inline ForwardModel scalar_forward(double drift, double vol, double jumpScale) {
    ForwardModel fm;
    fm.m = 1;
    fm.d = 1;
    fm.b = [drift](double, const Eigen::VectorXd&) { return Eigen::VectorXd::Constant(1, drift); };
    fm.sigma = [vol](double, const Eigen::VectorXd&) { return Eigen::MatrixXd::Constant(1, 1, vol); };
    fm.h = [jumpScale](double, const Eigen::VectorXd&, double z) { return Eigen::VectorXd::Constant(1, jumpScale * z); };
    fm.x0 = Eigen::VectorXd::Zero(1);
    return fm;
}

inline DriverSpec null_driver(const std::string& name, MarkSpace marks, double gValue = 0.0) {
    DriverSpec s;
    s.name = name;
    s.marks = std::move(marks);
    auto zero = [](double, const Eigen::VectorXd&, const Eigen::VectorXd& p, const Eigen::MatrixXd&,
                   const Eigen::MatrixXd&) { return Eigen::VectorXd::Zero(p.size()); };
    s.f1 = zero;
    s.f2 = zero;
    s.g = [gValue](double, const Eigen::VectorXd&, const Eigen::VectorXd& p, const Eigen::MatrixXd&,
                   const Eigen::MatrixXd&) { return Eigen::MatrixXd::Constant(p.size(), 1, gValue); };
    s.mu_t = [gValue](double) { return std::abs(gValue); };
    s.mu = 1.0;
    return s;
}

}  // namespace detail

/// Reference problems (scalar, T = 1, f = 0):
///  - heat-quadratic:  b = 0, sigma = 1, no jumps, D = R, Phi = x^2; u = x^2 + T - t
///  - jump-linear:     pure jumps h = z, marks {-0.3, 0.6} at rates {1, 1}, D = (-2, 2),
///                     Phi = x; u = x (compensated jumps make X a martingale)
///  - brownian-linear: b = 0, sigma = 1, D = R, Phi = x; u = x
///  - stochastic-heat: heat-quadratic with g = 1/2, so u is random through B
///  - drift-exit:      b = 10, sigma = 0.1, D = (-1, 1), Phi = x
inline FKProblem builtin_fk(const std::string& name) {
    FKProblem fk;
    fk.name = name;
    fk.T = 1.0;
    const double T = fk.T;
    const MarkSpace inert = MarkSpace::make({1.0}, {1.0});
    auto identity = [](const Eigen::VectorXd& x) { return Eigen::VectorXd::Constant(1, x[0]); };
    auto square = [](const Eigen::VectorXd& x) { return Eigen::VectorXd::Constant(1, x.squaredNorm()); };
    if (name == "heat-quadratic") {
        fk.forward = detail::scalar_forward(0.0, 1.0, 0.0);
        fk.driver = detail::null_driver(name, inert);
        fk.Phi = square;
        fk.reference = [T](double t, const Eigen::VectorXd& x) { return x.squaredNorm() + (T - t); };
    } else if (name == "jump-linear") {
        fk.forward = detail::scalar_forward(0.0, 0.0, 1.0);
        fk.forward.domain = Box{Eigen::VectorXd::Constant(1, -2.0), Eigen::VectorXd::Constant(1, 2.0)};
        fk.driver = detail::null_driver(name, MarkSpace::make({-0.3, 0.6}, {1.0, 1.0}));
        fk.Phi = identity;
        fk.reference = [](double, const Eigen::VectorXd& x) { return x[0]; };
    } else if (name == "brownian-linear") {
        fk.forward = detail::scalar_forward(0.0, 1.0, 0.0);
        fk.driver = detail::null_driver(name, inert);
        fk.Phi = identity;
        fk.reference = [](double, const Eigen::VectorXd& x) { return x[0]; };
    } else if (name == "stochastic-heat") {
        fk.forward = detail::scalar_forward(0.0, 1.0, 0.0);
        fk.driver = detail::null_driver(name, inert, 0.5);
        fk.Phi = square;
    } else if (name == "drift-exit") {
        fk.forward = detail::scalar_forward(10.0, 0.1, 0.0);
        fk.forward.domain = Box{Eigen::VectorXd::Constant(1, -1.0), Eigen::VectorXd::Constant(1, 1.0)};
        fk.driver = detail::null_driver(name, inert);
        fk.Phi = identity;
    } else {
        throw ValidationError("unknown Feynman-Kac problem '" + name + "'");
    }
    fk.driver.horizon = T;
    fk.driver.refresh_mu_bar();
    return fk;
}

struct UEstimate {
    Eigen::VectorXd mean;
    Eigen::VectorXd std;       ///< spread of P_t over outer runs
    Eigen::VectorXd stdError;  ///< std / sqrt(outerRuns)
    std::size_t outerRuns = 0;
};

/// u(t, x) as P_t of the backward problem started at (t, x); t = T returns Phi(x) without simulating.
inline UEstimate estimate_u(const FKProblem& fk, double t, const Eigen::VectorXd& x, const BackwardConfig& cfg,
                            std::size_t steps, std::size_t outerRuns, std::uint64_t seed) {
    if (!(t >= 0.0) || t > fk.T) throw ValidationError("estimate_u: t must lie in [0, T]");
    if (static_cast<std::size_t>(x.size()) != fk.forward.m) throw ValidationError("estimate_u: x has wrong dimension");
    if (!fk.forward.in_domain(x)) throw ValidationError("estimate_u: x lies outside the domain");
    UEstimate out;
    out.outerRuns = outerRuns;
    if (t == fk.T) {
        out.mean = fk.Phi(x);
        out.std = Eigen::VectorXd::Zero(out.mean.size());
        out.stdError = out.std;
        return out;
    }
    const OuterSummary s = solve_outer(fk.at(t, x), cfg, steps, outerRuns, seed);
    out.mean = s.mean;
    out.std = s.std;
    out.stdError = s.std / std::sqrt(static_cast<double>(outerRuns));
    return out;
}

struct SurfaceRow {
    double t = 0.0;
    Eigen::VectorXd x;
    UEstimate u;
};

/// estimate_u on every (t, x) cell, all cells sharing `seed` (common random numbers).
inline std::vector<SurfaceRow> u_surface(const FKProblem& fk, const std::vector<double>& tGrid,
                                         const std::vector<Eigen::VectorXd>& xGrid, const BackwardConfig& cfg,
                                         std::size_t steps, std::size_t outerRuns, std::uint64_t seed) {
    if (tGrid.empty() || xGrid.empty()) throw ValidationError("u_surface: grids must be nonempty");
    std::vector<SurfaceRow> rows;
    rows.reserve(tGrid.size() * xGrid.size());
    for (double t : tGrid)
        for (const auto& x : xGrid) rows.push_back({t, x, estimate_u(fk, t, x, cfg, steps, outerRuns, seed)});
    return rows;
}

/// sum_j lambda_j (u(t, x + h_j) - u(t, x) - h_j . grad u(t, x)), gradient by central differences.
inline double jump_term(const FKProblem& fk, const SurfaceFn& u, double t, const Eigen::VectorXd& x,
                        double fd = 1e-4) {
    const Eigen::Index m = x.size();
    Eigen::VectorXd grad(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        Eigen::VectorXd xp = x, xm = x;
        xp[i] += fd;
        xm[i] -= fd;
        grad[i] = (u(t, xp) - u(t, xm)) / (2.0 * fd);
    }
    const double u0 = u(t, x);
    double acc = 0.0;
    const MarkSpace& marks = fk.driver.marks;
    for (std::size_t j = 0; j < marks.size(); ++j) {
        const Eigen::VectorXd hj = fk.forward.h(t, x, marks.marks[j]);
        acc += marks.weights[j] * (u(t, x + hj) - u0 - hj.dot(grad));
    }
    return acc;
}

/// (L u)(t, x) = b . grad u + tr(sigma sigma^T D^2 u) / 2 + jump_term, derivatives by central differences.
inline double apply_generator(const FKProblem& fk, const SurfaceFn& u, double t, const Eigen::VectorXd& x,
                              double fd = 1e-3) {
    const Eigen::Index m = x.size();
    const double u0 = u(t, x);
    Eigen::VectorXd grad(m);
    Eigen::MatrixXd hess(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
        Eigen::VectorXd xp = x, xm = x;
        xp[i] += fd;
        xm[i] -= fd;
        const double up = u(t, xp);
        const double um = u(t, xm);
        grad[i] = (up - um) / (2.0 * fd);
        hess(i, i) = (up - 2.0 * u0 + um) / (fd * fd);
        for (Eigen::Index k = 0; k < i; ++k) {
            Eigen::VectorXd a = x, b = x, c = x, e = x;
            a[i] += fd; a[k] += fd;
            b[i] += fd; b[k] -= fd;
            c[i] -= fd; c[k] += fd;
            e[i] -= fd; e[k] -= fd;
            hess(i, k) = hess(k, i) = (u(t, a) - u(t, b) - u(t, c) + u(t, e)) / (4.0 * fd * fd);
        }
    }
    const Eigen::MatrixXd sig = fk.forward.sigma(t, x);
    const double diffusion = 0.5 * (sig * sig.transpose()).cwiseProduct(hess).sum();
    return fk.forward.b(t, x).dot(grad) + diffusion + jump_term(fk, u, t, x, fd);
}

struct ConvergenceRow {
    std::size_t seedIndex = 0;
    std::uint64_t seed = 0;
    std::size_t steps = 0;
    double p0 = 0.0;
    double u0Error = 0.0;    ///< |P_0 - u(t0, x0)| / max(1, |u(t0, x0)|)
    double pathError = 0.0;  ///< sqrt(E max_s |P(s) - u(s, X_s)|^2) over the reference grid
};

struct ConvergenceStudy {
    std::vector<ConvergenceRow> rows;
    std::vector<bool> decreasing;  ///< per seed: pathError strictly decreasing in steps

    std::size_t decreasing_count() const {
        return static_cast<std::size_t>(std::count(decreasing.begin(), decreasing.end(), true));
    }
};

/// Time-discretization study against the closed-form surface of `fk`.
///
/// Per seed, one set of innerPaths noise bundles is drawn on a reference grid with
/// referenceFactor x max(stepsList) intervals; every coarse run uses the same noise summed
/// onto its own grid. The solver's P, held constant on each coarse interval, is compared
/// with u(s, X_s) along the reference-grid path, so the error includes the time
/// discretization of the solution process and not just the value at the start point.
inline ConvergenceStudy convergence_study(const FKProblem& fk, const std::vector<std::size_t>& stepsList,
                                          const BackwardConfig& cfg, const std::vector<std::uint64_t>& seeds,
                                          std::size_t referenceFactor) {
    if (!fk.reference) throw ValidationError("convergence_study: problem '" + fk.name + "' has no reference surface");
    if (stepsList.empty() || seeds.empty()) throw ValidationError("convergence_study: need steps and seeds");
    if (referenceFactor == 0) throw ValidationError("convergence_study: referenceFactor must be >= 1");
    const std::size_t fine = referenceFactor * *std::max_element(stepsList.begin(), stepsList.end());
    for (std::size_t s : stepsList)
        if (s == 0 || fine % s != 0) throw ValidationError("convergence_study: steps must divide the reference grid");

    const Problem problem = fk.at(fk.forward.tStart, fk.forward.x0);
    const DriverSpec used = effective_driver(problem.driver, cfg, problem.mollifyOrder);
    const TimeGrid fineGrid = TimeGrid::make(problem.forward.tStart, problem.T, fine);
    const double u0 = fk.reference(fineGrid.t0, problem.forward.x0);

    ConvergenceStudy study;
    for (std::size_t si = 0; si < seeds.size(); ++si) {
        const InnerSample ref = simulate_inner(problem.forward, fineGrid, used.marks, cfg.innerPaths, seeds[si]);
        const Eigen::MatrixXd fineDB = generate_backward_slice(fineGrid, used.l, mix_seed(seeds[si], 0xB), 0);
        double previous = std::numeric_limits<double>::infinity();
        bool decreasing = true;
        for (std::size_t steps : stepsList) {
            const std::size_t factor = fine / steps;
            InnerSample coarse;
            coarse.bundles.reserve(ref.bundles.size());
            coarse.paths.reserve(ref.bundles.size());
            for (const auto& b : ref.bundles) {
                coarse.bundles.push_back(coarsen(b, factor));
                coarse.paths.push_back(simulate_forward(problem.forward, coarse.bundles.back()));
            }
            Eigen::MatrixXd dB = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(steps), fineDB.cols());
            for (Eigen::Index i = 0; i < fineDB.rows(); ++i) dB.row(i / static_cast<Eigen::Index>(factor)) += fineDB.row(i);
            const BackwardSolution sol =
                solve_backward_paths(coarse.paths, coarse.bundles, used, problem.terminal, cfg, dB);

            double acc = 0.0;
            for (std::size_t p = 0; p < sol.paths; ++p) {
                const auto row = static_cast<Eigen::Index>(p);
                double worst = 0.0;
                for (std::size_t k = 0; k <= fine; ++k) {
                    const double s = fineGrid.time(k);
                    const double exact = fk.reference(s, ref.paths[p].state(k));
                    const double approx = sol.P[k / factor](row, 0);
                    worst = std::max(worst, (approx - exact) * (approx - exact));
                }
                acc += worst;
            }
            ConvergenceRow r;
            r.seedIndex = si;
            r.seed = seeds[si];
            r.steps = steps;
            r.p0 = sol.p0()[0];
            r.u0Error = std::abs(r.p0 - u0) / std::max(1.0, std::abs(u0));
            r.pathError = std::sqrt(acc / static_cast<double>(sol.paths));
            decreasing = decreasing && r.pathError < previous;
            previous = r.pathError;
            study.rows.push_back(r);
        }
        study.decreasing.push_back(decreasing);
    }
    return study;
}

}  // namespace bdsdep
