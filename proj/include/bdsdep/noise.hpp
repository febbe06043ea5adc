#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bdsdep/errors.hpp"
#include "bdsdep/rng.hpp"

namespace bdsdep {

/// Uniform partition of [t0, T].
struct TimeGrid {
    double t0 = 0.0;
    double T = 1.0;
    std::size_t steps = 1;
    double dt = 1.0;

    static TimeGrid make(double t0, double T, std::size_t steps) {
        if (steps == 0) throw ValidationError("invalid grid: steps must be >= 1");
        if (!(std::isfinite(t0) && std::isfinite(T)) || t0 < 0.0 || !(T > t0)) {
            throw ValidationError("invalid grid: need 0 <= t0 < T, got t0=" + std::to_string(t0) +
                                  " T=" + std::to_string(T));
        }
        return TimeGrid{t0, T, steps, (T - t0) / static_cast<double>(steps)};
    }

    /// Grid time t_i; the last node is pinned to T exactly.
    double time(std::size_t i) const noexcept {
        return i >= steps ? T : t0 + static_cast<double>(i) * dt;
    }

    bool operator==(const TimeGrid&) const = default;
};

/// Finite mark set {z_1..z_r} with intensities lambda_j; lambda(Z) = sum_j lambda_j.
struct MarkSpace {
    std::vector<double> marks;
    std::vector<double> weights;

    static MarkSpace make(std::vector<double> marks, std::vector<double> weights) {
        MarkSpace ms{std::move(marks), std::move(weights)};
        ms.validate();
        return ms;
    }

    void validate() const {
        if (marks.empty()) throw ValidationError("mark space needs at least one mark");
        if (marks.size() != weights.size()) throw ValidationError("marks/weights size mismatch");
        for (double w : weights) {
            if (!(w > 0.0) || !std::isfinite(w)) {
                throw ValidationError("mark intensities must be positive and finite");
            }
        }
    }

    std::size_t size() const noexcept { return marks.size(); }
    double total() const noexcept { return std::accumulate(weights.begin(), weights.end(), 0.0); }
};

struct NoiseDims {
    std::size_t d = 1;  ///< forward Brownian dimension
    std::size_t l = 1;  ///< backward Brownian dimension
};

/// One joint realization of (W, B, N) increments on a grid. Row i holds the
/// increment over [t_i, t_{i+1}]. dB is stored forward in time like dW.
struct NoiseBundle {
    TimeGrid grid;
    MarkSpace marks;
    Eigen::MatrixXd dW;          ///< steps x d
    Eigen::MatrixXd dB;          ///< steps x l
    Eigen::MatrixXi jumpCounts;  ///< steps x r

    std::size_t steps() const noexcept { return grid.steps; }
};

namespace detail {

enum class NoiseBlock : std::uint32_t { ForwardBrownian = 0, BackwardBrownian = 1, Jumps = 2 };

inline Eigen::MatrixXd gaussian_block(const TimeGrid& grid, std::size_t dim, std::uint64_t seed,
                                      std::uint32_t streamId, NoiseBlock block) {
    Eigen::MatrixXd out(grid.steps, dim);
    if (dim == 0) return out;
    PhiloxEngine eng(seed, streamId, static_cast<std::uint32_t>(block));
    std::normal_distribution<double> normal(0.0, std::sqrt(grid.dt));
    for (std::size_t i = 0; i < grid.steps; ++i)
        for (std::size_t k = 0; k < dim; ++k) out(i, k) = normal(eng);
    return out;
}

}  // namespace detail

/// Draws dW ~ N(0, dt I_d), dB ~ N(0, dt I_l) and jump counts ~ Poisson(lambda_j dt)
/// from three disjoint Philox substreams keyed by (seed, streamId, block).
inline NoiseBundle generate_bundle(const TimeGrid& grid, NoiseDims dims, const MarkSpace& marks,
                                   std::uint64_t seed, std::uint32_t streamId) {
    if (grid.steps == 0 || !(grid.dt > 0.0)) throw ValidationError("invalid grid: zero length");
    marks.validate();
    NoiseBundle b{grid, marks, {}, {}, {}};
    b.dW = detail::gaussian_block(grid, dims.d, seed, streamId, detail::NoiseBlock::ForwardBrownian);
    b.dB = detail::gaussian_block(grid, dims.l, seed, streamId, detail::NoiseBlock::BackwardBrownian);

    const std::size_t r = marks.size();
    b.jumpCounts.resize(grid.steps, r);
    PhiloxEngine eng(seed, streamId, static_cast<std::uint32_t>(detail::NoiseBlock::Jumps));
    std::vector<std::poisson_distribution<int>> poisson;
    poisson.reserve(r);
    for (double w : marks.weights) poisson.emplace_back(w * grid.dt);
    for (std::size_t i = 0; i < grid.steps; ++i)
        for (std::size_t j = 0; j < r; ++j) b.jumpCounts(i, j) = poisson[j](eng);
    return b;
}

/// Backward Brownian increments alone; identical to generate_bundle(...).dB for the same key.
inline Eigen::MatrixXd generate_backward_slice(const TimeGrid& grid, std::size_t l, std::uint64_t seed,
                                               std::uint32_t streamId) {
    if (grid.steps == 0 || !(grid.dt > 0.0)) throw ValidationError("invalid grid: zero length");
    return detail::gaussian_block(grid, l, seed, streamId, detail::NoiseBlock::BackwardBrownian);
}

/// Compensated Poisson increment: count - lambda_j dt.
inline double compensated_increment(const NoiseBundle& bundle, std::size_t step, std::size_t mark) {
    if (step >= bundle.grid.steps || mark >= bundle.marks.size()) {
        throw ValidationError("compensated_increment: index out of range (step " + std::to_string(step) +
                              ", mark " + std::to_string(mark) + ")");
    }
    return static_cast<double>(bundle.jumpCounts(static_cast<Eigen::Index>(step),
                                                 static_cast<Eigen::Index>(mark))) -
           bundle.marks.weights[mark] * bundle.grid.dt;
}

/// Sums consecutive blocks of `factor` increments: the same noise seen on a grid
/// with steps/factor intervals.
inline NoiseBundle coarsen(const NoiseBundle& fine, std::size_t factor) {
    if (factor == 0 || fine.grid.steps % factor != 0) {
        throw ValidationError("coarsen: factor must divide the step count");
    }
    const std::size_t steps = fine.grid.steps / factor;
    NoiseBundle c{TimeGrid::make(fine.grid.t0, fine.grid.T, steps), fine.marks, {}, {}, {}};
    c.dW = Eigen::MatrixXd::Zero(steps, fine.dW.cols());
    c.dB = Eigen::MatrixXd::Zero(steps, fine.dB.cols());
    c.jumpCounts = Eigen::MatrixXi::Zero(steps, fine.jumpCounts.cols());
    for (std::size_t i = 0; i < fine.grid.steps; ++i) {
        const auto ci = static_cast<Eigen::Index>(i / factor);
        const auto fi = static_cast<Eigen::Index>(i);
        c.dW.row(ci) += fine.dW.row(fi);
        c.dB.row(ci) += fine.dB.row(fi);
        c.jumpCounts.row(ci) += fine.jumpCounts.row(fi);
    }
    return c;
}

}  // namespace bdsdep
