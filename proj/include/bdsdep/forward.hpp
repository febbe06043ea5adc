#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <ostream>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "bdsdep/errors.hpp"
#include "bdsdep/noise.hpp"

namespace bdsdep {

/// Open axis-aligned box lo < x < hi.
struct Box {
    Eigen::VectorXd lo;
    Eigen::VectorXd hi;

    bool contains(const Eigen::Ref<const Eigen::VectorXd>& x) const {
        for (Eigen::Index i = 0; i < x.size(); ++i)
            if (!(x[i] > lo[i] && x[i] < hi[i])) return false;
        return true;
    }

    Box scaled(double factor) const {
        const Eigen::VectorXd mid = 0.5 * (lo + hi);
        return Box{mid + factor * (lo - mid), mid + factor * (hi - mid)};
    }
};

using DriftFn = std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)>;
using DiffusionFn = std::function<Eigen::MatrixXd(double, const Eigen::VectorXd&)>;
using JumpFn = std::function<Eigen::VectorXd(double, const Eigen::VectorXd&, double)>;

/// Jump diffusion dX = b dt + sigma dW + int h(X-, z) N~(dz dt) started at (tStart, x0),
/// killed on leaving `domain` (nullopt means the whole space).
struct ForwardModel {
    std::size_t m = 1;
    std::size_t d = 1;
    DriftFn b;
    DiffusionFn sigma;
    JumpFn h;
    std::optional<Box> domain;
    Eigen::VectorXd x0;
    double tStart = 0.0;

    bool in_domain(const Eigen::Ref<const Eigen::VectorXd>& x) const {
        return !domain || domain->contains(x);
    }

    ForwardModel started_at(double t, const Eigen::VectorXd& x) const {
        ForwardModel copy = *this;
        copy.tStart = t;
        copy.x0 = x;
        return copy;
    }
};

struct JumpEvent {
    std::size_t step;
    std::size_t mark;
    int count;
};

struct ForwardPath {
    TimeGrid grid;
    Eigen::MatrixXd X;  ///< (steps+1) x m
    std::size_t exitIndex = 0;
    std::vector<JumpEvent> jumpLog;

    Eigen::VectorXd state(std::size_t i) const { return X.row(static_cast<Eigen::Index>(i)).transpose(); }
    Eigen::VectorXd exit_state() const { return state(exitIndex); }
};

/// Euler step X_{i+1} = X_i + b dt + sigma dW_i + sum_j h(z_j) dN~_{i,j}; exitIndex is the
/// first grid index with X outside the domain, or `steps` when the path never leaves.
/// The path keeps being integrated after exit so X covers the whole grid.
inline ForwardPath simulate_forward(const ForwardModel& model, const NoiseBundle& bundle) {
    const TimeGrid& grid = bundle.grid;
    if (std::abs(grid.t0 - model.tStart) > 1e-12 * std::max(1.0, grid.T)) {
        throw ValidationError("simulate_forward: bundle grid starts at " + std::to_string(grid.t0) +
                              " but model starts at " + std::to_string(model.tStart));
    }
    if (static_cast<std::size_t>(bundle.dW.cols()) != model.d) {
        throw ValidationError("simulate_forward: bundle has " + std::to_string(bundle.dW.cols()) +
                              " forward Brownian coordinates, model expects " + std::to_string(model.d));
    }
    if (static_cast<std::size_t>(model.x0.size()) != model.m) {
        throw ValidationError("simulate_forward: x0 dimension mismatch");
    }
    if (!model.in_domain(model.x0)) throw ValidationError("simulate_forward: x0 outside the domain");

    const auto m = static_cast<Eigen::Index>(model.m);
    ForwardPath path{grid, Eigen::MatrixXd(grid.steps + 1, m), grid.steps, {}};
    path.X.row(0) = model.x0.transpose();
    bool exited = false;
    Eigen::VectorXd x = model.x0;
    Eigen::VectorXd next(m);
    for (std::size_t i = 0; i < grid.steps; ++i) {
        const double t = grid.time(i);
        const auto row = static_cast<Eigen::Index>(i);
        next = x;
        next += grid.dt * model.b(t, x);
        if (model.d > 0) next.noalias() += model.sigma(t, x) * bundle.dW.row(row).transpose();
        for (std::size_t j = 0; j < bundle.marks.size(); ++j) {
            const int count = bundle.jumpCounts(row, static_cast<Eigen::Index>(j));
            const double dn = static_cast<double>(count) - bundle.marks.weights[j] * grid.dt;
            next += model.h(t, x, bundle.marks.marks[j]) * dn;
            if (count != 0) path.jumpLog.push_back({i, j, count});
        }
        if (!next.allFinite()) throw BlowUpError("simulate_forward: non-finite state", i + 1);
        x.swap(next);
        path.X.row(row + 1) = x.transpose();
        if (!exited && !model.in_domain(x)) {
            path.exitIndex = i + 1;
            exited = true;
        }
    }
    return path;
}

inline double exit_time(const ForwardPath& path) { return path.grid.time(path.exitIndex); }

/// Largest sampled difference quotient of b, sigma, h in x, points drawn
/// N(0, scale^2) around the origin, pairs at relative distance 10^-U[0,3].
inline double check_forward_lipschitz(const ForwardModel& model, const MarkSpace& marks, std::size_t samples,
                                      std::uint64_t seed, double scale = 1.0) {
    PhiloxEngine eng(seed, 0, 0);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> expo(0.0, 3.0);
    const auto m = static_cast<Eigen::Index>(model.m);
    double worst = 0.0;
    for (std::size_t s = 0; s < samples; ++s) {
        Eigen::VectorXd x1(m), dir(m);
        for (Eigen::Index i = 0; i < m; ++i) {
            x1[i] = scale * normal(eng);
            dir[i] = normal(eng);
        }
        const double dist = scale * std::pow(10.0, -expo(eng));
        const Eigen::VectorXd x2 = x1 + dist * dir.normalized();
        const double t = model.tStart;
        const double dx = (x1 - x2).norm();
        if (dx == 0.0) continue;
        worst = std::max(worst, (model.b(t, x1) - model.b(t, x2)).norm() / dx);
        if (model.d > 0) worst = std::max(worst, (model.sigma(t, x1) - model.sigma(t, x2)).norm() / dx);
        for (double z : marks.marks) worst = std::max(worst, (model.h(t, x1, z) - model.h(t, x2, z)).norm() / dx);
    }
    return worst;
}

/// CSV: t, x0..x{m-1}, inD
inline void write_path_csv(std::ostream& os, const ForwardPath& path, const ForwardModel& model,
                           bool header = true, std::optional<std::size_t> pathId = std::nullopt) {
    const auto m = path.X.cols();
    if (header) {
        if (pathId) os << "path,";
        os << "t";
        for (Eigen::Index k = 0; k < m; ++k) os << ",x" << k;
        os << ",inD\n";
    }
    for (std::size_t i = 0; i <= path.grid.steps; ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        if (pathId) os << *pathId << ',';
        os << path.grid.time(i);
        for (Eigen::Index k = 0; k < m; ++k) os << ',' << path.X(row, k);
        os << ',' << (model.in_domain(path.X.row(row).transpose()) ? 1 : 0) << '\n';
    }
}

}  // namespace bdsdep
