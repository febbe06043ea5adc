#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bdsdep/drivers.hpp"
#include "bdsdep/errors.hpp"
#include "bdsdep/forward.hpp"
#include "bdsdep/problem.hpp"

namespace bdsdep {

inline const std::vector<std::string>& catalog_names() {
    static const std::vector<std::string> names{"zero", "linear-scalar", "dissipative-sqrtlog", "jump-coupled"};
    return names;
}

namespace detail {

inline Eigen::VectorXd scalar_vec(double v) { return Eigen::VectorXd::Constant(1, v); }
inline Eigen::MatrixXd scalar_mat(double v) { return Eigen::MatrixXd::Constant(1, 1, v); }

/// 1-d Brownian motion with jumps of size z, started at 0.
inline ForwardModel brownian_with_jumps(double drift = 0.0, double vol = 1.0) {
    ForwardModel fm;
    fm.m = 1;
    fm.d = 1;
    fm.b = [drift](double, const Eigen::VectorXd& x) { return Eigen::VectorXd(drift * x); };
    fm.sigma = [vol](double, const Eigen::VectorXd&) { return scalar_mat(vol); };
    fm.h = [](double, const Eigen::VectorXd&, double z) { return scalar_vec(z); };
    fm.x0 = Eigen::VectorXd::Zero(1);
    return fm;
}

inline DriverSpec scalar_driver(std::string name, MarkSpace marks) {
    DriverSpec s;
    s.name = std::move(name);
    s.n = 1;
    s.d = 1;
    s.l = 1;
    s.m = 1;
    s.marks = std::move(marks);
    auto zero_f = [](double, const Eigen::VectorXd&, const Eigen::VectorXd& p, const Eigen::MatrixXd&,
                     const Eigen::MatrixXd&) { return Eigen::VectorXd::Zero(p.size()); };
    s.f1 = zero_f;
    s.f2 = zero_f;
    s.g = [](double, const Eigen::VectorXd&, const Eigen::VectorXd& p, const Eigen::MatrixXd&,
             const Eigen::MatrixXd&) { return Eigen::MatrixXd::Zero(p.size(), 1); };
    s.mu_t = [](double) { return 1.0; };
    s.mu = 1.0;
    s.rho = ConcaveModulus::linear(1.0);
    return s;
}

/// phi(u) = u ln(1/u) clamped at u* = 1/e; sign-odd extension.
inline double sqrtlog_profile(double p) {
    const double uStar = std::exp(-1.0);
    const double u = std::min(std::abs(p), uStar);
    const double v = u > 0.0 ? u * std::log(1.0 / u) : 0.0;
    return p < 0.0 ? -v : v;
}

}  // namespace detail

/// Catalog problems (all scalar, n = d = l = 1, T = 1):
///  - zero:               f = g = 0, xi = 1.5; P = 1.5, Q = K = 0.
///  - linear-scalar:      f = p, g = 0, xi = 1; P_t = e^{T-t}.
///  - dissipative-sqrtlog: f1 = -sgn(p) phi(min(|p|, 1/e)), phi(u) = u ln(1/u) (bounded,
///                        non-Lipschitz at 0, nonincreasing), f2 = q/2, g = sin(p)/5,
///                        xi = sin(X_T)/2, log-modulus rho; solved after mollification (order 8).
///  - jump-coupled:       f2 = -p/2 + 0.3 k(z1) + 0.2 k(z2), g = cos(p)/10, xi = cos(X_tau),
///                        OU-type forward with two jump marks killed on leaving (-2, 2).
inline Problem builtin_driver(const std::string& name) {
    using detail::scalar_mat;
    using detail::scalar_vec;
    Problem pb;
    pb.name = name;
    pb.T = 1.0;
    if (name == "zero") {
        const double c = 1.5;
        pb.forward = detail::brownian_with_jumps();
        pb.driver = detail::scalar_driver(name, MarkSpace::make({0.5}, {1.0}));
        pb.driver.mu_t = [](double) { return 0.0; };
        pb.terminal.xi = [c](const ForwardPath&) { return scalar_vec(c); };
        pb.analytic = [c](double) { return c; };
    } else if (name == "linear-scalar") {
        const double a = 1.0;
        const double c = 1.0;
        const double T = pb.T;
        pb.forward = detail::brownian_with_jumps();
        pb.driver = detail::scalar_driver(name, MarkSpace::make({0.5}, {1.0}));
        pb.driver.f2 = [a](double, const Eigen::VectorXd&, const Eigen::VectorXd& p, const Eigen::MatrixXd&,
                           const Eigen::MatrixXd&) { return Eigen::VectorXd(a * p); };
        pb.driver.mu_t = [a](double) { return std::abs(a); };
        pb.driver.mu = std::abs(a);
        pb.terminal.xi = [c](const ForwardPath&) { return scalar_vec(c); };
        pb.analytic = [a, c, T](double t) { return c * std::exp(a * (T - t)); };
    } else if (name == "dissipative-sqrtlog") {
        pb.forward = detail::brownian_with_jumps();
        pb.driver = detail::scalar_driver(name, MarkSpace::make({0.5}, {1.0}));
        pb.driver.f1 = [](double, const Eigen::VectorXd&, const Eigen::VectorXd& p, const Eigen::MatrixXd&,
                          const Eigen::MatrixXd&) {
            Eigen::VectorXd out(p.size());
            for (Eigen::Index i = 0; i < p.size(); ++i) out[i] = -detail::sqrtlog_profile(p[i]);
            return out;
        };
        pb.driver.f2 = [](double, const Eigen::VectorXd&, const Eigen::VectorXd&, const Eigen::MatrixXd& q,
                          const Eigen::MatrixXd&) { return Eigen::VectorXd(0.5 * q.rowwise().sum()); };
        pb.driver.g = [](double, const Eigen::VectorXd&, const Eigen::VectorXd& p, const Eigen::MatrixXd&,
                         const Eigen::MatrixXd&) { return Eigen::MatrixXd(0.2 * p.array().sin().matrix()); };
        pb.driver.f1DependsOnQ = false;
        pb.driver.rho = ConcaveModulus::log_modulus();
        pb.terminal.xi = [](const ForwardPath& path) { return scalar_vec(0.5 * std::sin(path.exit_state()[0])); };
        pb.mollifyOrder = 8;
    } else if (name == "jump-coupled") {
        pb.forward = detail::brownian_with_jumps(-0.5, 0.5);
        pb.forward.domain = Box{Eigen::VectorXd::Constant(1, -2.0), Eigen::VectorXd::Constant(1, 2.0)};
        pb.driver = detail::scalar_driver(name, MarkSpace::make({-0.3, 0.4}, {1.0, 0.5}));
        pb.driver.f2 = [](double, const Eigen::VectorXd&, const Eigen::VectorXd& p, const Eigen::MatrixXd&,
                          const Eigen::MatrixXd& k) {
            return Eigen::VectorXd(-0.5 * p + 0.3 * k.col(0) + 0.2 * k.col(1));
        };
        pb.driver.g = [](double, const Eigen::VectorXd&, const Eigen::VectorXd& p, const Eigen::MatrixXd&,
                         const Eigen::MatrixXd&) { return Eigen::MatrixXd(0.1 * p.array().cos().matrix()); };
        pb.terminal.xi = [](const ForwardPath& path) { return scalar_vec(std::cos(path.exit_state()[0])); };
    } else {
        throw ValidationError("unknown catalog driver '" + name + "'");
    }
    pb.driver.horizon = pb.T;
    pb.driver.refresh_mu_bar();
    return pb;
}

}  // namespace bdsdep
