#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "bdsdep/drivers.hpp"
#include "bdsdep/errors.hpp"
#include "bdsdep/quadrature.hpp"
#include "bdsdep/rng.hpp"

namespace bdsdep {

struct MollifierConfig {
    int order = 1;                       ///< smoothing radius is 1/order
    std::size_t quadNodes = 32;          ///< Gauss-Legendre nodes per axis
    std::size_t mcFallbackSamples = 4096;
    std::size_t tensorDimCap = 4;        ///< blocks above this dimension use Monte Carlo
    std::uint64_t seed = 20240501;

    void validate() const {
        if (order < 1) throw ValidationError("mollifier order must be >= 1");
        if (quadNodes < 3) throw ValidationError("mollifier quadNodes must be >= 3");
        if (mcFallbackSamples == 0) throw ValidationError("mollifier mcFallbackSamples must be >= 1");
    }
};

namespace detail {

/// int_{|x|<1} exp(-1/(1-|x|^2)) dx in R^dim, via the radial integral.
inline double bump_mass(std::size_t dim) {
    if (dim == 0) return 1.0;
    const double dd = static_cast<double>(dim);
    const double sphere = 2.0 * std::pow(std::numbers::pi, 0.5 * dd) / std::tgamma(0.5 * dd);
    const double radial = integrate(
        [dd](double r) {
            const double s = 1.0 - r * r;
            return s > 0.0 ? std::pow(r, dd - 1.0) * std::exp(-1.0 / s) : 0.0;
        },
        0.0, 1.0, 40, 32);
    return sphere * radial;
}

}  // namespace detail

/// Normalizing constant c0 so that the bump kernel has unit mass in R^dim.
inline double bump_normalizer(std::size_t dim) {
    static constexpr std::size_t kCached = 32;
    static std::array<double, kCached> table{};
    static std::once_flag once;
    std::call_once(once, [] {
        for (std::size_t k = 0; k < kCached; ++k) table[k] = 1.0 / detail::bump_mass(k);
    });
    return dim < kCached ? table[dim] : 1.0 / detail::bump_mass(dim);
}

/// c0 exp(-1/(1-|x|^2)) inside the unit ball, 0 outside.
inline double bump_kernel(const Eigen::Ref<const Eigen::VectorXd>& x, std::size_t dim) {
    const double r2 = x.squaredNorm();
    if (r2 >= 1.0) return 0.0;
    return bump_normalizer(dim) * std::exp(-1.0 / (1.0 - r2));
}

/// Discretized product kernel J(pbar, qbar) = J1(pbar) J2(qbar): nodes and weights.
struct KernelTable {
    std::vector<Eigen::VectorXd> pShift;
    std::vector<Eigen::MatrixXd> qShift;
    std::vector<double> weights;  ///< normalized to sum to 1
    double rawMass = 0.0;         ///< quadrature estimate of the kernel integral before normalization
};

namespace detail {

struct BlockNodes {
    std::vector<Eigen::VectorXd> points;
    std::vector<double> weights;
};

inline BlockNodes kernel_block(std::size_t dim, const MollifierConfig& cfg, std::uint32_t stream) {
    BlockNodes out;
    if (dim == 0) {
        out.points.emplace_back(0);
        out.weights.push_back(1.0);
        return out;
    }
    if (dim <= cfg.tensorDimCap) {
        const QuadratureRule rule = gauss_legendre(cfg.quadNodes);
        const std::size_t q = rule.nodes.size();
        std::vector<std::size_t> idx(dim, 0);
        Eigen::VectorXd pt(static_cast<Eigen::Index>(dim));
        while (true) {
            double w = 1.0;
            for (std::size_t a = 0; a < dim; ++a) {
                pt[static_cast<Eigen::Index>(a)] = rule.nodes[idx[a]];
                w *= rule.weights[idx[a]];
            }
            const double kv = bump_kernel(pt, dim);
            if (kv * w > 0.0) {
                out.points.push_back(pt);
                out.weights.push_back(kv * w);
            }
            std::size_t a = 0;
            while (a < dim && ++idx[a] == q) idx[a++] = 0;
            if (a == dim) break;
        }
        return out;
    }
    // uniform sampling of the bounding cube, weighted by the kernel
    PhiloxEngine eng(cfg.seed, stream, 11);
    const double cube = std::pow(2.0, static_cast<double>(dim));
    const double scale = cube / static_cast<double>(cfg.mcFallbackSamples);
    Eigen::VectorXd pt(static_cast<Eigen::Index>(dim));
    for (std::size_t s = 0; s < cfg.mcFallbackSamples; ++s) {
        for (Eigen::Index a = 0; a < pt.size(); ++a) pt[a] = 2.0 * eng.uniform_open() - 1.0;
        const double kv = bump_kernel(pt, dim);
        if (kv > 0.0) {
            out.points.push_back(pt);
            out.weights.push_back(kv * scale);
        }
    }
    return out;
}

}  // namespace detail

/// withQ = false integrates over p only (for f1 independent of q).
inline KernelTable build_kernel_table(std::size_t n, std::size_t d, const MollifierConfig& cfg, bool withQ = true) {
    cfg.validate();
    const detail::BlockNodes pBlock = detail::kernel_block(n, cfg, 1);
    const detail::BlockNodes qBlock = detail::kernel_block(withQ ? n * d : 0, cfg, 2);
    KernelTable table;
    double pMass = 0.0;
    double qMass = 0.0;
    for (double w : pBlock.weights) pMass += w;
    for (double w : qBlock.weights) qMass += w;
    table.rawMass = pMass * qMass;
    if (!(table.rawMass > 0.0) || !std::isfinite(table.rawMass)) {
        throw ValidationError("mollifier config error: kernel quadrature has zero mass");
    }
    const auto rows = static_cast<Eigen::Index>(n);
    const auto cols = static_cast<Eigen::Index>(d);
    for (std::size_t i = 0; i < pBlock.points.size(); ++i) {
        for (std::size_t j = 0; j < qBlock.points.size(); ++j) {
            table.pShift.push_back(pBlock.points[i]);
            if (withQ) {
                table.qShift.push_back(Eigen::Map<const Eigen::MatrixXd>(qBlock.points[j].data(), rows, cols));
            } else {
                table.qShift.push_back(Eigen::MatrixXd::Zero(rows, cols));
            }
            table.weights.push_back(pBlock.weights[i] * qBlock.weights[j] / table.rawMass);
        }
    }
    return table;
}

/// Replaces f1 by its mollification
///   f1^n(t,x,p,q,k) = int f1(t, x, p - pbar/n, q - qbar/n, k) J1(pbar) J2(qbar) dpbar dqbar,
/// discretized with the kernel table. f2 and g pass through; k is not smoothed.
inline DriverSpec mollify_driver(const DriverSpec& spec, const MollifierConfig& cfg) {
    cfg.validate();
    auto table = std::make_shared<const KernelTable>(build_kernel_table(spec.n, spec.d, cfg, spec.f1DependsOnQ));
    DriverSpec out = spec;
    const double inv = 1.0 / static_cast<double>(cfg.order);
    out.f1 = [f1 = spec.f1, table, inv](double t, const Eigen::VectorXd& x, const Eigen::VectorXd& p,
                                         const Eigen::MatrixXd& q, const Eigen::MatrixXd& k) {
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(p.size());
        Eigen::VectorXd ps(p.size());
        Eigen::MatrixXd qs(q.rows(), q.cols());
        for (std::size_t i = 0; i < table->weights.size(); ++i) {
            ps = p - inv * table->pShift[i];
            qs = q - inv * table->qShift[i];
            acc += table->weights[i] * f1(t, x, ps, qs, k);
        }
        return acc;
    };
    out.mollifiedOrder = cfg.order;
    out.name = spec.name + "@mollified(" + std::to_string(cfg.order) + ")";
    return out;
}

/// Largest sampled quotient |f(a) - f(b)| / (|dp| + |dq| + ||dk||) for f = f1 + f2,
/// over the same pair sampler the assumption checkers use.
inline double estimate_lipschitz(const DriverSpec& spec, std::size_t samples, std::uint64_t seed) {
    if (samples == 0) throw ValidationError("estimate_lipschitz: samples must be >= 1");
    ArgumentSampler sampler(spec, seed, 3);
    double worst = 0.0;
    for (std::size_t s = 0; s < samples; ++s) {
        const DriverPoint a = sampler.draw();
        const DriverPoint b = sampler.partner(a).first;
        const double dist = (a.p - b.p).norm() + (a.q - b.q).norm() + k_norm(a.k - b.k, spec.marks);
        if (!(dist > 0.0)) continue;
        const double num = (spec.f(a.t, a.x, a.p, a.q, a.k) - spec.f(b.t, b.x, b.p, b.q, b.k)).norm();
        if (!std::isfinite(num)) throw EvaluationError("non-finite driver value", a.to_string());
        worst = std::max(worst, num / dist);
    }
    return worst;
}

}  // namespace bdsdep
