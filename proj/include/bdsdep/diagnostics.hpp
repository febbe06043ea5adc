#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <boost/numeric/odeint.hpp>
#include <Eigen/Dense>

#include "bdsdep/backward.hpp"
#include "bdsdep/drivers.hpp"
#include "bdsdep/errors.hpp"
#include "bdsdep/problem.hpp"
#include "bdsdep/quadrature.hpp"

namespace bdsdep {

// ---------------------------------------------------------------- a priori bound

/// 4 (E|xi|^2 + T + 2 muBar) exp(int_0^T (4 mu(s) + 2 mu(s)^2) ds), muBar = int_0^T mu^2.
/// The factor 4 (`slack`) covers the sup-in-time version of the estimate.
inline double apriori_bound(const std::function<double(double)>& mu_t, double xiSecondMoment, double T,
                            double slack = 4.0) {
    if (!(T >= 0.0) || !(xiSecondMoment >= 0.0)) throw ValidationError("apriori_bound: need T >= 0, E|xi|^2 >= 0");
    if (T == 0.0) return slack * xiSecondMoment;
    const double muBar = integrate([&](double s) { return mu_t(s) * mu_t(s); }, 0.0, T, 32, 16);
    const double expo = integrate([&](double s) { return 4.0 * mu_t(s) + 2.0 * mu_t(s) * mu_t(s); }, 0.0, T, 32, 16);
    return slack * (xiSecondMoment + T + 2.0 * muBar) * std::exp(expo);
}

inline double apriori_bound(const DriverSpec& spec, double xiSecondMoment, double slack = 4.0) {
    return apriori_bound(spec.mu_t, xiSecondMoment, spec.horizon, slack);
}

// ---------------------------------------------------------------- Bihari bound

/// rho1(u) = rhoScale rho(u) + linear u.
struct BihariModulus {
    ConcaveModulus rho = ConcaveModulus::linear(1.0);
    double rhoScale = 1.0;
    double linear = 1.0;

    double operator()(double u) const { return rhoScale * rho(u) + linear * u; }
};

/// x(horizon) for x' = coeff rho1(x), x(0) = a, integrated with adaptive Dormand-Prince.
/// a = 0 is a fixed point because int_{0+} du / rho1(u) diverges for both modulus kinds.
inline double bihari_bound(double a, const BihariModulus& rho1, double horizon, double coeff) {
    if (!(a >= 0.0)) throw ValidationError("bihari_bound: initial gap must be >= 0");
    if (!(horizon >= 0.0) || !(coeff >= 0.0)) throw ValidationError("bihari_bound: need horizon, coeff >= 0");
    if (a == 0.0 || horizon == 0.0) return a;
    namespace odeint = boost::numeric::odeint;
    double x = a;
    auto rhs = [&](const double& u, double& du, double) { du = coeff * rho1(std::max(u, 0.0)); };
    odeint::integrate_adaptive(odeint::make_controlled(1e-14, 1e-14, odeint::runge_kutta_dopri5<double>()), rhs, x,
                               0.0, horizon, horizon * 1e-4);
    if (!std::isfinite(x)) throw BlowUpError("bihari_bound: solution left the finite range", 0);
    return x;
}

// ---------------------------------------------------------------- shared-noise solves

/// One backward slice plus one inner sample, reused across the solves of an experiment.
struct SharedNoise {
    TimeGrid grid;
    Eigen::MatrixXd dB;
    InnerSample inner;
};

inline SharedNoise draw_shared_noise(const Problem& problem, const BackwardConfig& cfg, std::size_t steps,
                                     std::uint64_t seed, std::size_t run) {
    SharedNoise s;
    s.grid = TimeGrid::make(problem.forward.tStart, problem.T, steps);
    const RunSeeds seeds = outer_run_seeds(seed, run);
    s.dB = generate_backward_slice(s.grid, problem.driver.l, seeds.backward, 0);
    s.inner = simulate_inner(problem.forward, s.grid, problem.driver.marks, cfg.innerPaths, seeds.inner);
    return s;
}

inline BackwardSolution solve_shared(const Problem& problem, const BackwardConfig& cfg, const SharedNoise& noise) {
    const DriverSpec used = effective_driver(problem.driver, cfg, problem.mollifyOrder);
    return solve_backward_paths(noise.inner.paths, noise.inner.bundles, used, problem.terminal, cfg, noise.dB);
}

// ---------------------------------------------------------------- uniqueness

struct UniquenessReport {
    double maxGap = 0.0;  ///< max over runs, grid and paths of |P^(zero init) - P^(random init)|
    double scale = 0.0;   ///< max |P| seen, the denominator of relGap
    double relGap = 0.0;
    std::size_t runs = 0;

    bool passed(double tol = 1e-8) const noexcept { return relGap < tol; }
};

/// Solves twice on identical noise, starting the per-step Picard iteration from zero and
/// from a random point, and compares the full P tables.
inline UniquenessReport uniqueness_probe(const Problem& problem, const BackwardConfig& cfg, std::size_t steps,
                                         std::uint64_t seed, std::size_t runs = 1) {
    UniquenessReport rep;
    rep.runs = runs;
    BackwardConfig zero = cfg;
    zero.picardInit = PicardInit::Zero;
    BackwardConfig random = cfg;
    random.picardInit = PicardInit::Random;
    random.picardInitSeed = mix_seed(seed, 0xA11CE);
    for (std::size_t run = 0; run < runs; ++run) {
        const SharedNoise noise = draw_shared_noise(problem, cfg, steps, seed, run);
        const BackwardSolution a = solve_shared(problem, zero, noise);
        const BackwardSolution b = solve_shared(problem, random, noise);
        for (std::size_t i = 0; i < a.P.size(); ++i) {
            rep.maxGap = std::max(rep.maxGap, (a.P[i] - b.P[i]).cwiseAbs().maxCoeff());
            rep.scale = std::max(rep.scale, a.P[i].cwiseAbs().maxCoeff());
        }
    }
    rep.relGap = rep.maxGap == 0.0 ? 0.0 : rep.maxGap / std::max(rep.scale, 1e-300);
    return rep;
}

// ---------------------------------------------------------------- continuous dependence

enum class PerturbationFamily { None, ConstantShift, DriverShift, TerminalPerturbation, PointwiseBump };

inline std::string family_name(PerturbationFamily f) {
    switch (f) {
        case PerturbationFamily::None: return "none";
        case PerturbationFamily::ConstantShift: return "constant-shift";
        case PerturbationFamily::DriverShift: return "driver-shift";
        case PerturbationFamily::TerminalPerturbation: return "terminal-perturbation";
        case PerturbationFamily::PointwiseBump: return "pointwise-bump";
    }
    return "none";
}

inline PerturbationFamily parse_family(const std::string& s) {
    for (auto f : {PerturbationFamily::None, PerturbationFamily::ConstantShift, PerturbationFamily::DriverShift,
                   PerturbationFamily::TerminalPerturbation, PerturbationFamily::PointwiseBump}) {
        if (family_name(f) == s) return f;
    }
    throw ValidationError("unknown perturbation family '" + s + "'");
}

/// Base problem each family is meant to perturb (the constant shift needs f = g = 0).
inline std::string default_family_base(PerturbationFamily f) {
    switch (f) {
        case PerturbationFamily::ConstantShift: return "zero";
        case PerturbationFamily::TerminalPerturbation: return "jump-coupled";
        default: return "linear-scalar";
    }
}

/// Whether supGap is expected to scale like the square of the uniform perturbation size 1/m.
inline bool family_is_uniform(PerturbationFamily f) {
    return f == PerturbationFamily::ConstantShift || f == PerturbationFamily::DriverShift ||
           f == PerturbationFamily::TerminalPerturbation;
}

/// Member m of a perturbation family around `base`, delta_m = 1/m:
///   constant-shift:        xi^m = xi^0 + delta_m
///   driver-shift:          f^m  = f^0 + delta_m (every component)
///   terminal-perturbation: xi^m = xi^0 + delta_m sin(X_tau,1)
///   pointwise-bump:        f1^m = f1^0 - sgn(p) max(0, |p| - m/4) componentwise; nonincreasing in p,
///                          so the monotonicity constant is unchanged, and f1^m -> f1^0 pointwise only
inline Problem perturb(const Problem& base, PerturbationFamily fam, double m) {
    if (!(m > 0.0)) throw ValidationError("perturbation level m must be > 0");
    Problem out = base;
    const double delta = 1.0 / m;
    switch (fam) {
        case PerturbationFamily::None: break;
        case PerturbationFamily::ConstantShift: {
            auto xi = base.terminal.xi;
            out.terminal.xi = [xi, delta](const ForwardPath& p) {
                return Eigen::VectorXd(xi(p).array() + delta);
            };
            break;
        }
        case PerturbationFamily::DriverShift: {
            auto f2 = base.driver.f2;
            out.driver.f2 = [f2, delta](double t, const Eigen::VectorXd& x, const Eigen::VectorXd& p,
                                        const Eigen::MatrixXd& q, const Eigen::MatrixXd& k) {
                return Eigen::VectorXd(f2(t, x, p, q, k).array() + delta);
            };
            break;
        }
        case PerturbationFamily::TerminalPerturbation: {
            auto xi = base.terminal.xi;
            out.terminal.xi = [xi, delta](const ForwardPath& p) {
                return Eigen::VectorXd(xi(p).array() + delta * std::sin(p.exit_state()[0]));
            };
            break;
        }
        case PerturbationFamily::PointwiseBump: {
            auto f1 = base.driver.f1;
            const double cut = m / 4.0;
            out.driver.f1 = [f1, cut](double t, const Eigen::VectorXd& x, const Eigen::VectorXd& p,
                                      const Eigen::MatrixXd& q, const Eigen::MatrixXd& k) {
                Eigen::VectorXd v = f1(t, x, p, q, k);
                for (Eigen::Index i = 0; i < p.size(); ++i) {
                    const double excess = std::max(0.0, std::abs(p[i]) - cut);
                    v[i] -= p[i] < 0.0 ? -excess : excess;
                }
                return v;
            };
            break;
        }
    }
    out.name = base.name + "+" + family_name(fam) + "(" + std::to_string(m) + ")";
    return out;
}

struct DependenceRow {
    double m = 0.0;
    double supGap = 0.0;    ///< mean over paths and runs of max_i |P^m_i - P^0_i|^2
    double qkGap = 0.0;     ///< mean of sum_i (|Q^m_i - Q^0_i|^2 + ||K^m_i - K^0_i||^2) dt
    double inputGap = 0.0;  ///< E|xi^m - xi^0|^2 + T delta_m^2 (driver part only for the driver shift)
    std::optional<double> envelope;
};

struct DependenceTable {
    PerturbationFamily family = PerturbationFamily::None;
    std::string base;
    std::vector<DependenceRow> rows;
};

/// Runs the base problem and every family member on identical noise (one backward slice and
/// one inner sample per outer run) and records the solution gaps. For the uniform families the
/// envelope is the Bihari majorant with linear rho1, coefficient 2 mu + 1, started at inputGap.
inline DependenceTable continuous_dependence(const Problem& base, PerturbationFamily fam,
                                             const std::vector<double>& levels, const BackwardConfig& cfg,
                                             std::size_t steps, std::size_t outerRuns, std::uint64_t seed) {
    if (levels.empty()) throw ValidationError("continuous_dependence: no levels");
    if (outerRuns == 0) throw ValidationError("continuous_dependence: outerRuns must be >= 1");
    DependenceTable table;
    table.family = fam;
    table.base = base.name;
    table.rows.resize(levels.size());
    for (std::size_t li = 0; li < levels.size(); ++li) table.rows[li].m = levels[li];

    for (std::size_t run = 0; run < outerRuns; ++run) {
        const SharedNoise noise = draw_shared_noise(base, cfg, steps, seed, run);
        const BackwardSolution ref = solve_shared(base, cfg, noise);
        const double dt = ref.grid.dt;
        const auto n = static_cast<Eigen::Index>(ref.n);
        for (std::size_t li = 0; li < levels.size(); ++li) {
            const Problem member = perturb(base, fam, levels[li]);
            const BackwardSolution sol = solve_shared(member, cfg, noise);
            DependenceRow& row = table.rows[li];
            double sup = 0.0;
            double qk = 0.0;
            double xiGap = 0.0;
            for (std::size_t p = 0; p < ref.paths; ++p) {
                const auto r = static_cast<Eigen::Index>(p);
                double worst = 0.0;
                for (std::size_t i = 0; i < ref.P.size(); ++i)
                    worst = std::max(worst, (sol.P[i].row(r) - ref.P[i].row(r)).squaredNorm());
                sup += worst;
                for (std::size_t i = 0; i < ref.Q.size(); ++i) {
                    qk += (sol.Q[i].row(r) - ref.Q[i].row(r)).squaredNorm() * dt;
                    for (std::size_t j = 0; j < ref.r(); ++j) {
                        const auto c = n * static_cast<Eigen::Index>(j);
                        qk += (sol.K[i].row(r).segment(c, n) - ref.K[i].row(r).segment(c, n)).squaredNorm() *
                              ref.marks.weights[j] * dt;
                    }
                }
                xiGap += (sol.P.back().row(r) - ref.P.back().row(r)).squaredNorm();
            }
            const double inv = 1.0 / static_cast<double>(ref.paths * outerRuns);
            row.supGap += sup * inv;
            row.qkGap += qk * inv;
            row.inputGap += xiGap * inv;
        }
    }
    for (auto& row : table.rows) {
        if (fam == PerturbationFamily::DriverShift) {
            const double delta = 1.0 / row.m;
            row.inputGap += base.T * delta * delta * static_cast<double>(base.driver.n);
        }
        if (family_is_uniform(fam)) {
            row.envelope = bihari_bound(row.inputGap, BihariModulus{ConcaveModulus::linear(1.0), 0.0, 1.0}, base.T,
                                        2.0 * base.driver.mu + 1.0);
        }
    }
    return table;
}

// ---------------------------------------------------------------- B-measurability

/// P_0 over an outer x inner grid of runs: run (o, i) uses backward slice o and inner sample i.
/// If P is a functional of the backward path, between-slice variance dominates and the
/// within-slice variance is pure inner Monte Carlo noise.
struct VarianceDecomposition {
    Eigen::MatrixXd p0;  ///< outer x inner, first component of P_0
    double betweenOuter = 0.0;
    double withinOuter = 0.0;
};

inline VarianceDecomposition b_measurability(const Problem& problem, const BackwardConfig& cfg, std::size_t steps,
                                             std::size_t outer, std::size_t inner, std::uint64_t seed) {
    if (outer < 2 || inner < 2) throw ValidationError("b_measurability: need at least 2 x 2 runs");
    const TimeGrid grid = TimeGrid::make(problem.forward.tStart, problem.T, steps);
    const DriverSpec used = effective_driver(problem.driver, cfg, problem.mollifyOrder);
    VarianceDecomposition out;
    out.p0.resize(static_cast<Eigen::Index>(outer), static_cast<Eigen::Index>(inner));
    std::vector<InnerSample> samples;
    for (std::size_t i = 0; i < inner; ++i)
        samples.push_back(simulate_inner(problem.forward, grid, used.marks, cfg.innerPaths,
                                         outer_run_seeds(seed, 1000 + i).inner));
    for (std::size_t o = 0; o < outer; ++o) {
        const Eigen::MatrixXd dB = generate_backward_slice(grid, used.l, outer_run_seeds(seed, o).backward, 0);
        for (std::size_t i = 0; i < inner; ++i) {
            const BackwardSolution sol =
                solve_backward_paths(samples[i].paths, samples[i].bundles, used, problem.terminal, cfg, dB);
            out.p0(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(i)) = sol.p0()[0];
        }
    }
    const Eigen::VectorXd rowMean = out.p0.rowwise().mean();
    const double grand = rowMean.mean();
    out.betweenOuter = (rowMean.array() - grand).square().sum() / static_cast<double>(outer - 1);
    double within = 0.0;
    for (Eigen::Index o = 0; o < out.p0.rows(); ++o)
        within += (out.p0.row(o).array() - rowMean[o]).square().sum();
    out.withinOuter = within / static_cast<double>(outer * (inner - 1));
    return out;
}

}  // namespace bdsdep
