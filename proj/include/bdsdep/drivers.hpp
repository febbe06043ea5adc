#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bdsdep/errors.hpp"
#include "bdsdep/forward.hpp"
#include "bdsdep/noise.hpp"
#include "bdsdep/quadrature.hpp"
#include "bdsdep/rng.hpp"

namespace bdsdep {

/// Concave modulus rho with rho(0) = 0 and int_{0+} du / rho(u) = +inf.
///
/// Linear: rho(u) = a u. LogModulus: rho(u) = u ln(1/u) on (0, u*], continued
/// by its tangent line at u* (for the default u* = 1/e the tangent is flat).
struct ConcaveModulus {
    enum class Kind { Linear, LogModulus };

    Kind kind = Kind::Linear;
    double slope = 1.0;
    double threshold = std::exp(-1.0);

    static ConcaveModulus linear(double a = 1.0) { return {Kind::Linear, a, std::exp(-1.0)}; }
    static ConcaveModulus log_modulus(double uStar = std::exp(-1.0)) { return {Kind::LogModulus, 1.0, uStar}; }

    double operator()(double u) const noexcept {
        if (!(u > 0.0)) return 0.0;
        if (kind == Kind::Linear) return slope * u;
        if (u <= threshold) return u * std::log(1.0 / u);
        const double value = threshold * std::log(1.0 / threshold);
        const double tangent = std::log(1.0 / threshold) - 1.0;
        return value + tangent * (u - threshold);
    }

    std::string name() const { return kind == Kind::Linear ? "linear" : "log-modulus"; }
};

using DriverFn = std::function<Eigen::VectorXd(double t, const Eigen::VectorXd& x, const Eigen::VectorXd& p,
                                               const Eigen::MatrixXd& q, const Eigen::MatrixXd& k)>;
using NoiseCoeffFn = std::function<Eigen::MatrixXd(double t, const Eigen::VectorXd& x, const Eigen::VectorXd& p,
                                                   const Eigen::MatrixXd& q, const Eigen::MatrixXd& k)>;

/// Coefficients of the backward equation, f = f1 + f2 and g, with the constants of
/// the growth/monotonicity assumptions. Shapes: p in R^n, q in R^{n x d},
/// k in R^{n x r} (column j is k(z_j)), g in R^{n x l}. `x` is the forward state
/// (dimension m; drivers that ignore it accept any size).
struct DriverSpec {
    std::string name;
    std::size_t n = 1;
    std::size_t d = 1;
    std::size_t l = 1;
    std::size_t m = 1;
    MarkSpace marks = MarkSpace::make({1.0}, {1.0});
    DriverFn f1;
    DriverFn f2;
    NoiseCoeffFn g;
    std::function<double(double)> mu_t;
    double muBar = 0.0;
    double mu = 1.0;
    ConcaveModulus rho;
    double horizon = 1.0;
    std::optional<int> mollifiedOrder;
    /// False when f1 ignores q; the mollifier then skips the q block, whose kernel has unit mass.
    bool f1DependsOnQ = true;

    Eigen::VectorXd f(double t, const Eigen::VectorXd& x, const Eigen::VectorXd& p, const Eigen::MatrixXd& q,
                      const Eigen::MatrixXd& k) const {
        return f1(t, x, p, q, k) + f2(t, x, p, q, k);
    }

    /// Recomputes muBar = int_0^T mu(t)^2 dt.
    void refresh_mu_bar() {
        const auto& mt = mu_t;
        muBar = integrate([&](double s) { return mt(s) * mt(s); }, 0.0, horizon, 32, 8);
    }

    void validate() const {
        marks.validate();
        if (!f1 || !f2 || !g || !mu_t) throw ValidationError("driver '" + name + "' has unset coefficients");
        if (!(mu > 0.0) || !std::isfinite(mu)) throw ValidationError("driver '" + name + "': mu must be > 0");
        if (!std::isfinite(muBar) || muBar < 0.0) throw ValidationError("driver '" + name + "': muBar not finite");
    }
};

/// Terminal value xi as a functional of the forward path (finite second moment assumed).
struct TerminalSpec {
    std::function<Eigen::VectorXd(const ForwardPath&)> xi;
};

/// L^2_lambda norm over the finite mark set: (sum_j |k_j|^2 lambda_j)^{1/2}.
inline double k_norm(const Eigen::MatrixXd& k, const MarkSpace& marks) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < k.cols(); ++j) s += k.col(j).squaredNorm() * marks.weights[static_cast<std::size_t>(j)];
    return std::sqrt(s);
}

struct DriverPoint {
    double t = 0.0;
    Eigen::VectorXd x;
    Eigen::VectorXd p;
    Eigen::MatrixXd q;
    Eigen::MatrixXd k;

    std::string to_string() const {
        std::ostringstream os;
        os.precision(17);
        const Eigen::IOFormat fmt(Eigen::FullPrecision, Eigen::DontAlignCols, ", ", "; ", "", "", "[", "]");
        os << "t=" << t << " p=" << p.transpose().format(fmt) << " q=" << q.format(fmt) << " k=" << k.format(fmt);
        return os.str();
    }
};

struct Witness {
    std::string condition;
    double ratio = 0.0;
    DriverPoint point;
    std::optional<DriverPoint> partner;
};

struct CheckReport {
    double maxViolation = 0.0;
    std::vector<Witness> witnesses;  ///< worst few, largest ratio first
    std::size_t samples = 0;

    bool passed(double tol = 1e-12) const noexcept { return maxViolation <= 1.0 + tol; }
};

/// Argument sampler for the assumption checkers.
///
/// Each real coordinate is drawn from one of three laws picked per point with equal
/// probability: U(-10, 10); N(0, s^2) with s = 10^U(-8, 1); standard Cauchy clipped
/// to +-1e8. t ~ U(0, horizon). Pairs come in four kinds with equal probability:
/// an independent redraw; a near-duplicate in every coordinate; a near-duplicate in p
/// only; a near-duplicate in k only. Near-duplicates move each coordinate by
/// delta * N(0,1) with delta = max(|coord|_inf, 1e-8) * 10^-U(0, 4), so |p1 - p2|
/// reaches 1e-8 and below around small base points.
class ArgumentSampler {
public:
    ArgumentSampler(const DriverSpec& spec, std::uint64_t seed, std::uint32_t stream = 0)
        : spec_(spec), eng_(seed, stream, 7) {}

    DriverPoint draw() {
        DriverPoint pt;
        pt.t = uni01() * spec_.horizon;
        pt.x = vec(spec_.m);
        pt.p = vec(spec_.n);
        pt.q = mat(spec_.n, spec_.d);
        pt.k = mat(spec_.n, spec_.marks.size());
        return pt;
    }

    enum class PairKind { Independent, NearAll, NearP, NearK };

    std::pair<DriverPoint, PairKind> partner(const DriverPoint& a) {
        const auto kind = static_cast<PairKind>(eng_() % 4u);
        DriverPoint b = a;
        switch (kind) {
            case PairKind::Independent: {
                DriverPoint fresh = draw();
                b.p = fresh.p;
                b.q = fresh.q;
                b.k = fresh.k;
                break;
            }
            case PairKind::NearAll:
                nudge(b.p);
                nudge(b.q);
                nudge(b.k);
                break;
            case PairKind::NearP:
                nudge(b.p);
                break;
            case PairKind::NearK:
                nudge(b.k);
                break;
        }
        return {std::move(b), kind};
    }

    double uni01() { return eng_.uniform_open(); }

private:
    double scalar(int law) {
        switch (law) {
            case 0:
                return -10.0 + 20.0 * uni01();
            case 1: {
                const double s = std::pow(10.0, -8.0 + 9.0 * uni01());
                return s * normal_(eng_);
            }
            default: {
                const double c = std::tan(std::numbers::pi * (uni01() - 0.5));
                return std::clamp(c, -1e8, 1e8);
            }
        }
    }

    Eigen::VectorXd vec(std::size_t n) {
        const int law = static_cast<int>(eng_() % 3u);
        Eigen::VectorXd v(static_cast<Eigen::Index>(n));
        for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = scalar(law);
        return v;
    }

    Eigen::MatrixXd mat(std::size_t rows, std::size_t cols) {
        const int law = static_cast<int>(eng_() % 3u);
        Eigen::MatrixXd a(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = scalar(law);
        return a;
    }

    template <class Derived>
    void nudge(Eigen::MatrixBase<Derived>& a) {
        if (a.size() == 0) return;
        const double base = std::max(a.cwiseAbs().maxCoeff(), 1e-8);
        const double delta = base * std::pow(10.0, -4.0 * uni01());
        for (Eigen::Index i = 0; i < a.size(); ++i) a.derived().data()[i] += delta * normal_(eng_);
    }

    const DriverSpec& spec_;
    PhiloxEngine eng_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

namespace detail {

inline double violation_ratio(double lhs, double rhs) {
    if (!(lhs > 0.0)) return 0.0;
    if (!(rhs > 0.0)) return std::numeric_limits<double>::infinity();
    return lhs / rhs;
}

class WitnessLog {
public:
    explicit WitnessLog(std::size_t keep = 5) : keep_(keep) {}

    void offer(const std::string& condition, double ratio, const DriverPoint& a,
               const std::optional<DriverPoint>& b = std::nullopt) {
        if (ratio <= 0.0) return;
        report.maxViolation = std::max(report.maxViolation, ratio);
        auto& w = report.witnesses;
        if (w.size() == keep_ && ratio <= w.back().ratio) return;
        auto pos = std::find_if(w.begin(), w.end(), [&](const Witness& x) { return x.ratio < ratio; });
        w.insert(pos, Witness{condition, ratio, a, b});
        if (w.size() > keep_) w.pop_back();
    }

    CheckReport report;

private:
    std::size_t keep_;
};

template <class M>
void require_finite(const M& value, const char* what, const DriverPoint& pt) {
    if (!value.allFinite()) throw EvaluationError(std::string("non-finite ") + what, pt.to_string());
}

}  // namespace detail

/// Falsification check of the growth bounds |f1| <= mu(t), |f2| <= mu(t)(1+|p|+|q|+||k||),
/// |g| <= mu(t). maxViolation is the worst ratio of |coefficient| to its bound.
inline CheckReport check_growth(const DriverSpec& spec, std::size_t samples, std::uint64_t seed) {
    if (samples == 0) throw ValidationError("check_growth: samples must be >= 1");
    ArgumentSampler sampler(spec, seed);
    detail::WitnessLog log;
    for (std::size_t s = 0; s < samples; ++s) {
        const DriverPoint pt = sampler.draw();
        const double mut = spec.mu_t(pt.t);
        const Eigen::VectorXd f1 = spec.f1(pt.t, pt.x, pt.p, pt.q, pt.k);
        const Eigen::VectorXd f2 = spec.f2(pt.t, pt.x, pt.p, pt.q, pt.k);
        const Eigen::MatrixXd g = spec.g(pt.t, pt.x, pt.p, pt.q, pt.k);
        detail::require_finite(f1, "f1", pt);
        detail::require_finite(f2, "f2", pt);
        detail::require_finite(g, "g", pt);
        const double growth = 1.0 + pt.p.norm() + pt.q.norm() + k_norm(pt.k, spec.marks);
        log.offer("|f1| <= mu(t)", detail::violation_ratio(f1.norm(), mut), pt);
        log.offer("|f2| <= mu(t)(1+|p|+|q|+||k||)", detail::violation_ratio(f2.norm(), mut * growth), pt);
        log.offer("|g| <= mu(t)", detail::violation_ratio(g.norm(), mut), pt);
    }
    log.report.samples = samples;
    return log.report;
}

/// Falsification check of the four monotonicity/Lipschitz conditions on sampled pairs:
///   <dp, df1> <= mu (rho(|dp|^2) + |dp|(|dq| + ||dk||))
///   |f1(p,q,k1) - f1(p,q,k2)| <= mu ||dk||
///   |df2| <= mu (|dp| + |dq| + ||dk||)
///   |dg|^2 <= mu (|dp|^2 + |dp|(|dq| + ||dk||))
inline CheckReport check_monotone(const DriverSpec& spec, std::size_t samples, std::uint64_t seed) {
    if (samples == 0) throw ValidationError("check_monotone: samples must be >= 1");
    ArgumentSampler sampler(spec, seed, 1);
    detail::WitnessLog log;
    const double mu = spec.mu;
    for (std::size_t s = 0; s < samples; ++s) {
        const DriverPoint a = sampler.draw();
        const DriverPoint b = sampler.partner(a).first;

        const Eigen::VectorXd f1a = spec.f1(a.t, a.x, a.p, a.q, a.k);
        const Eigen::VectorXd f1b = spec.f1(b.t, b.x, b.p, b.q, b.k);
        const Eigen::VectorXd f1k = spec.f1(a.t, a.x, a.p, a.q, b.k);
        const Eigen::VectorXd f2a = spec.f2(a.t, a.x, a.p, a.q, a.k);
        const Eigen::VectorXd f2b = spec.f2(b.t, b.x, b.p, b.q, b.k);
        const Eigen::MatrixXd ga = spec.g(a.t, a.x, a.p, a.q, a.k);
        const Eigen::MatrixXd gb = spec.g(b.t, b.x, b.p, b.q, b.k);
        detail::require_finite(f1a, "f1", a);
        detail::require_finite(f1b, "f1", b);
        detail::require_finite(f1k, "f1", a);
        detail::require_finite(f2a, "f2", a);
        detail::require_finite(f2b, "f2", b);
        detail::require_finite(ga, "g", a);
        detail::require_finite(gb, "g", b);

        const Eigen::VectorXd dp = a.p - b.p;
        const double np = dp.norm();
        const double nq = (a.q - b.q).norm();
        const double nk = k_norm(a.k - b.k, spec.marks);

        log.offer("<dp, df1> <= mu(rho(|dp|^2) + |dp|(|dq|+||dk||))",
                  detail::violation_ratio(dp.dot(f1a - f1b), mu * (spec.rho(np * np) + np * (nq + nk))), a, b);
        log.offer("|f1(k1) - f1(k2)| <= mu ||dk||", detail::violation_ratio((f1a - f1k).norm(), mu * nk), a, b);
        log.offer("|df2| <= mu(|dp|+|dq|+||dk||)", detail::violation_ratio((f2a - f2b).norm(), mu * (np + nq + nk)),
                  a, b);
        log.offer("|dg|^2 <= mu(|dp|^2 + |dp|(|dq|+||dk||))",
                  detail::violation_ratio((ga - gb).squaredNorm(), mu * (np * np + np * (nq + nk))), a, b);
    }
    log.report.samples = samples;
    return log.report;
}

/// True when g visibly depends on k at a few sampled points.
inline bool g_depends_on_k(const DriverSpec& spec, std::uint64_t seed = 99, std::size_t probes = 16) {
    ArgumentSampler sampler(spec, seed, 2);
    for (std::size_t s = 0; s < probes; ++s) {
        const DriverPoint a = sampler.draw();
        DriverPoint b = sampler.draw();
        const Eigen::MatrixXd ga = spec.g(a.t, a.x, a.p, a.q, a.k);
        const Eigen::MatrixXd gb = spec.g(a.t, a.x, a.p, a.q, b.k);
        if ((ga - gb).norm() > 0.0) return true;
    }
    return false;
}

}  // namespace bdsdep
