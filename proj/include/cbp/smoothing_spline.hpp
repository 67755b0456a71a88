#pragma once

// Weighted natural cubic smoothing spline with the penalty chosen by
// generalized cross-validation.
//
// With knots at the distinct x values the fit is g = (W + lambda K)^-1 W y,
// K = Q R^-1 Q^T. Diagonalizing W^-1/2 K W^-1/2 once makes every lambda O(n).

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <vector>

#include <Eigen/Dense>

#include "cbp/error.hpp"
#include "cbp/model.hpp"
#include "cbp/optimizer.hpp"

namespace cbp {

struct SplineFit {
    /// Fitted values at the original observations, in input order.
    VectorXd fitted;
    double lambda = 0.0;
    double edf = 0.0;
    double gcv = 0.0;
    /// Fewer than four distinct x values: a weighted straight-line fit was used.
    bool linear_fallback = false;
};

class SmoothingSpline {
public:
    SmoothingSpline(const VectorXd& x, const VectorXd& y, const VectorXd& w) {
        const Index n = x.size();
        if (n == 0 || y.size() != n || w.size() != n) throw InvalidInputError("spline inputs must have equal nonzero length");
        for (Index i = 0; i < n; ++i) {
            if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw InvalidInputError("non-finite spline input");
            if (!(w[i] > 0.0) || !std::isfinite(w[i])) throw InvalidInputError("spline weights must be positive");
        }

        // Tied x values collapse into one knot with summed weight and weighted-mean response.
        std::map<double, std::pair<double, double>> agg;
        for (Index i = 0; i < n; ++i) {
            auto& [sw, swy] = agg[x[i]];
            sw += w[i];
            swy += w[i] * y[i];
        }
        const Index m = static_cast<Index>(agg.size());
        knots_.resize(m);
        ybar_.resize(m);
        wsum_.resize(m);
        Index j = 0;
        for (const auto& [xv, sums] : agg) {
            knots_[j] = xv;
            wsum_[j] = sums.first;
            ybar_[j] = sums.second / sums.first;
            ++j;
        }
        index_.resize(n);
        for (Index i = 0; i < n; ++i)
            index_[i] = static_cast<Index>(std::lower_bound(knots_.data(), knots_.data() + m, x[i]) - knots_.data());

        if (m >= 4) decompose();
    }

    Index distinct() const noexcept { return knots_.size(); }
    bool linear_only() const noexcept { return knots_.size() < 4; }

    /// Eigenvalues of the scaled penalty, ascending; the first two are zero.
    const VectorXd& penalty_eigenvalues() const noexcept { return d_; }

    double trace(double lambda) const { return (1.0 / (1.0 + lambda * d_.array())).sum(); }

    /// (1/m) sum w (ybar - g)^2 / (1 - tr(S)/m)^2 over the distinct knots.
    double gcv(double lambda) const {
        const double m = static_cast<double>(knots_.size());
        const ArrayXd shrink = lambda * d_.array() / (1.0 + lambda * d_.array());
        const double rss = (shrink * c_.array()).square().sum();
        const double denom = 1.0 - trace(lambda) / m;
        return (rss / m) / (denom * denom);
    }

    /// 100 log-spaced values from 1e-3 / d_max to 1e3 / d_min, d_min the smallest positive eigenvalue.
    std::vector<double> lambda_grid(int points = 100) const {
        const double dmax = d_.maxCoeff();
        double dmin = dmax;
        for (Index i = 0; i < d_.size(); ++i)
            if (d_[i] > 1e-12 * dmax) dmin = std::min(dmin, d_[i]);
        const double lo = std::log(1e-3 / dmax);
        const double hi = std::log(1e3 / dmin);
        std::vector<double> grid;
        for (int i = 0; i < points; ++i) grid.push_back(std::exp(lo + (hi - lo) * i / (points - 1)));
        return grid;
    }

    SplineFit fit(double lambda) const {
        if (linear_only()) return linear_fit();
        if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidInputError("smoothing parameter must be finite and nonnegative");
        const VectorXd coef = (c_.array() / (1.0 + lambda * d_.array())).matrix();
        const VectorXd g = (gamma_ * coef).cwiseQuotient(wsum_.cwiseSqrt());
        return expand(g, lambda, trace(lambda), gcv(lambda), false);
    }

    /// Grid scan of GCV in log(lambda) followed by bracketed refinement.
    SplineFit fit_gcv() const {
        if (linear_only()) return linear_fit();
        BoxSpec box;
        const auto grid = lambda_grid();
        std::vector<double> logs;
        for (double l : grid) logs.push_back(std::log(l));
        box.lower = {logs.front()};
        box.upper = {logs.back()};
        box.seed_values = {logs};
        const auto r = minimize_1d([this](double ll) { return gcv(std::exp(ll)); }, box);
        return fit(std::exp(r.x[0]));
    }

private:
    using ArrayXd = Eigen::ArrayXd;

    void decompose() {
        const Index m = knots_.size();
        VectorXd h(m - 1);
        for (Index i = 0; i + 1 < m; ++i) h[i] = knots_[i + 1] - knots_[i];
        MatrixXd q = MatrixXd::Zero(m, m - 2);
        MatrixXd r = MatrixXd::Zero(m - 2, m - 2);
        for (Index c = 0; c < m - 2; ++c) {
            const Index j = c + 1;
            q(j - 1, c) = 1.0 / h[j - 1];
            q(j, c) = -1.0 / h[j - 1] - 1.0 / h[j];
            q(j + 1, c) = 1.0 / h[j];
            r(c, c) = (h[j - 1] + h[j]) / 3.0;
            if (c + 1 < m - 2) {
                r(c, c + 1) = h[j] / 6.0;
                r(c + 1, c) = h[j] / 6.0;
            }
        }
        const MatrixXd k = q * r.ldlt().solve(q.transpose());
        const VectorXd wis = wsum_.cwiseSqrt().cwiseInverse();
        MatrixXd ks = wis.asDiagonal() * k * wis.asDiagonal();
        ks = 0.5 * (ks + ks.transpose());
        Eigen::SelfAdjointEigenSolver<MatrixXd> eig(ks);
        if (eig.info() != Eigen::Success) throw NumericalError("spline penalty eigendecomposition failed");
        d_ = eig.eigenvalues().cwiseMax(0.0);
        // Constants and straight lines are unpenalized.
        d_.head(2).setZero();
        gamma_ = eig.eigenvectors();
        c_ = gamma_.transpose() * (wsum_.cwiseSqrt().cwiseProduct(ybar_));
    }

    SplineFit expand(const VectorXd& g_knots, double lambda, double edf, double gcv_value, bool fallback) const {
        SplineFit out;
        out.fitted.resize(index_.size());
        for (Index i = 0; i < index_.size(); ++i) out.fitted[i] = g_knots[index_[i]];
        out.lambda = lambda;
        out.edf = edf;
        out.gcv = gcv_value;
        out.linear_fallback = fallback;
        return out;
    }

    SplineFit linear_fit() const {
        const Index m = knots_.size();
        MatrixXd x(m, m >= 2 ? 2 : 1);
        x.col(0).setOnes();
        if (m >= 2) x.col(1) = knots_;
        const auto fit = detail::wls_fit(x, ybar_, wsum_, false);
        return expand(fit.fitted, std::numeric_limits<double>::infinity(), static_cast<double>(x.cols()),
                      std::numeric_limits<double>::quiet_NaN(), true);
    }

    VectorXd knots_, ybar_, wsum_;
    Eigen::Matrix<Index, Eigen::Dynamic, 1> index_;
    VectorXd d_, c_;
    MatrixXd gamma_;
};

}  // namespace cbp
