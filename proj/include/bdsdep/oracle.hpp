#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "bdsdep/errors.hpp"
#include "bdsdep/forward.hpp"
#include "bdsdep/noise.hpp"

// Reference values used to validate the solver. Nothing here calls into the
// backward solver or the Philox noise layer: paths are re-simulated with a
// separate Mersenne Twister stream.

namespace bdsdep::oracle {

/// c e^{a (T - t)}: the solution of P' = -a P, P_T = c.
inline double analytic_linear(double a, double c, double T, double t) { return c * std::exp(a * (T - t)); }

struct Estimate {
    double mean = 0.0;
    double stdError = 0.0;
};

using Payoff = std::function<double(const Eigen::VectorXd&)>;

/// Plain Monte Carlo estimate of E[payoff(X_{tau ^ T}) | X_t = x] by restarting an Euler
/// scheme with `steps` intervals on [t, T]. Paths are stopped at the first grid time outside
/// the model's domain.
inline Estimate nested_ce(const ForwardModel& model, const MarkSpace& marks, const Payoff& payoff, double t,
                          const Eigen::VectorXd& x, double T, std::size_t steps, std::size_t innerSamples,
                          std::uint64_t seed) {
    if (innerSamples < 100) throw ValidationError("nested_ce: innerSamples must be >= 100");
    if (steps == 0 || !(T > t)) throw ValidationError("nested_ce: need steps >= 1 and t < T");
    if (!model.in_domain(x)) throw ValidationError("nested_ce: start point outside the domain");
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double dt = (T - t) / static_cast<double>(steps);
    const double sq = std::sqrt(dt);
    std::vector<std::poisson_distribution<int>> poisson;
    for (double w : marks.weights) poisson.emplace_back(w * dt);

    double sum = 0.0;
    double sumSq = 0.0;
    Eigen::VectorXd dW(static_cast<Eigen::Index>(model.d));
    for (std::size_t s = 0; s < innerSamples; ++s) {
        Eigen::VectorXd X = x;
        bool stopped = false;
        for (std::size_t i = 0; i < steps && !stopped; ++i) {
            const double ti = t + static_cast<double>(i) * dt;
            for (Eigen::Index k = 0; k < dW.size(); ++k) dW[k] = sq * normal(gen);
            Eigen::VectorXd next = X + model.b(ti, X) * dt;
            if (model.d > 0) next += model.sigma(ti, X) * dW;
            for (std::size_t j = 0; j < marks.size(); ++j) {
                const double dn = poisson[j](gen) - marks.weights[j] * dt;
                next += model.h(ti, X, marks.marks[j]) * dn;
            }
            if (!next.allFinite()) throw BlowUpError("nested_ce: non-finite state", i + 1);
            X = std::move(next);
            stopped = !model.in_domain(X);
        }
        const double v = payoff(X);
        sum += v;
        sumSq += v * v;
    }
    const double n = static_cast<double>(innerSamples);
    const double mean = sum / n;
    const double var = std::max(0.0, (sumSq - n * mean * mean) / (n - 1.0));
    return {mean, std::sqrt(var / n)};
}

/// Closed-form solutions of the deterministic (g = 0) reference problems on [0, T]:
///   heat-quadratic: u_t + u_xx / 2 = 0, u(T, x) = x^2      ->  u = x^2 + (T - t)
///   jump-linear:    pure compensated jumps, u(T, x) = x    ->  u = x
inline double pide_reference(const std::string& name, double t, const Eigen::VectorXd& x, double T = 1.0) {
    if (name == "heat-quadratic") return x.squaredNorm() + (T - t);
    if (name == "jump-linear") return x[0];
    throw ValidationError("pide_reference: unknown reference '" + name + "'");
}

}  // namespace bdsdep::oracle
