#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "bdsdep/errors.hpp"

namespace bdsdep {

/// Monomials of the (standardized) state with total degree <= degree.
struct PolynomialBasis {
    int degree = 2;

    /// Exponent vectors, constant term first, ordered by total degree.
    std::vector<std::vector<int>> exponents(std::size_t m) const {
        std::vector<std::vector<int>> out;
        std::vector<int> e(m, 0);
        for (int total = 0; total <= degree; ++total) enumerate(e, 0, total, out);
        return out;
    }

    std::size_t size(std::size_t m) const { return exponents(m).size(); }

private:
    static void enumerate(std::vector<int>& e, std::size_t pos, int remaining, std::vector<std::vector<int>>& out) {
        if (pos + 1 >= e.size()) {
            if (!e.empty()) e[pos] = remaining;
            if (!e.empty() || remaining == 0) out.push_back(e);
            return;
        }
        for (int k = remaining; k >= 0; --k) {
            e[pos] = k;
            enumerate(e, pos + 1, remaining - k, out);
        }
        e[pos] = 0;
    }
};

/// Least-squares projection of several target columns onto a polynomial basis in X.
///
/// Coordinates with zero sample spread are treated as constants and every monomial
/// touching them is dropped. The design is solved by column-pivoted QR; if it is
/// rank deficient, a ridge system with penalty 1e-10 * trace(A^T A) is solved instead.
class Regression {
public:
    Regression(const Eigen::MatrixXd& X, const PolynomialBasis& basis, std::size_t step) : step_(step) {
        const Eigen::Index rows = X.rows();
        const auto m = static_cast<std::size_t>(X.cols());
        if (rows == 0) throw BasisError("regression with no samples", step);
        Eigen::RowVectorXd mean = X.colwise().mean();
        Eigen::RowVectorXd scale(X.cols());
        std::vector<bool> live(m, true);
        for (Eigen::Index c = 0; c < X.cols(); ++c) {
            const double var = (X.col(c).array() - mean[c]).square().sum() / static_cast<double>(rows);
            const double sd = std::sqrt(var);
            if (!(sd > 1e-12 * (1.0 + std::abs(mean[c])))) {
                live[static_cast<std::size_t>(c)] = false;
                scale[c] = 1.0;
            } else {
                scale[c] = sd;
            }
        }
        std::vector<std::vector<int>> kept;
        for (auto& e : basis.exponents(m)) {
            bool ok = true;
            for (std::size_t c = 0; c < m; ++c)
                if (e[c] > 0 && !live[c]) ok = false;
            if (ok) kept.push_back(e);
        }
        design_.resize(rows, static_cast<Eigen::Index>(kept.size()));
        for (Eigen::Index r = 0; r < rows; ++r) {
            for (std::size_t b = 0; b < kept.size(); ++b) {
                double v = 1.0;
                for (std::size_t c = 0; c < m; ++c) {
                    const auto cc = static_cast<Eigen::Index>(c);
                    for (int pw = 0; pw < kept[b][c]; ++pw) v *= (X(r, cc) - mean[cc]) / scale[cc];
                }
                design_(r, static_cast<Eigen::Index>(b)) = v;
            }
        }
        qr_.compute(design_);
        ridge_ = qr_.rank() < design_.cols();
        if (ridge_) {
            Eigen::MatrixXd gram = design_.transpose() * design_;
            const double penalty = 1e-10 * gram.trace();
            gram.diagonal().array() += penalty;
            ldlt_.compute(gram);
            if (ldlt_.info() != Eigen::Success) throw BasisError("ridge regression failed", step);
        }
    }

    /// Fitted values of each target column (same row order as X). A constant column lies in
    /// the span and is returned as is, without rounding noise.
    Eigen::MatrixXd fit(const Eigen::MatrixXd& targets) const {
        Eigen::MatrixXd coef = ridge_ ? Eigen::MatrixXd(ldlt_.solve(design_.transpose() * targets))
                                      : Eigen::MatrixXd(qr_.solve(targets));
        if (!coef.allFinite()) throw BasisError("regression produced non-finite coefficients", step_);
        Eigen::MatrixXd fitted = design_ * coef;
        for (Eigen::Index c = 0; c < targets.cols(); ++c) {
            if (targets.rows() > 0 && targets.col(c).maxCoeff() == targets.col(c).minCoeff())
                fitted.col(c) = targets.col(c);
        }
        return fitted;
    }

    bool used_ridge() const noexcept { return ridge_; }
    Eigen::Index basis_size() const noexcept { return design_.cols(); }

private:
    std::size_t step_;
    Eigen::MatrixXd design_;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_;
    Eigen::LDLT<Eigen::MatrixXd> ldlt_;
    bool ridge_ = false;
};

}  // namespace bdsdep
