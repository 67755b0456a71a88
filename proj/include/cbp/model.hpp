#pragma once

// Fay-Herriot area-level data model: direct estimates Y_k with known sampling
// variances, the shrinkage factors B_k = sigma_k^2 / (sigma_k^2 + tau^2),
// weighted least squares, and the linear predictor (U + I) Y.

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cbp/error.hpp"

namespace cbp {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class WeightFamily { Mle, Bpe, Compromise, PlugIn, MultiTau, Custom };

inline const char* to_string(WeightFamily f) {
    switch (f) {
        case WeightFamily::Mle: return "MLE";
        case WeightFamily::Bpe: return "BPE";
        case WeightFamily::Compromise: return "Compromise";
        case WeightFamily::PlugIn: return "PlugIn";
        case WeightFamily::MultiTau: return "MultiTau";
        case WeightFamily::Custom: return "Custom";
    }
    return "Custom";
}

/// Which family produced a weight vector, and with which parameters.
/// Parameters not used by the family stay NaN.
struct WeightKind {
    WeightFamily family = WeightFamily::Custom;
    double alpha = std::numeric_limits<double>::quiet_NaN();
    double tau = std::numeric_limits<double>::quiet_NaN();
    double tau0 = std::numeric_limits<double>::quiet_NaN();
    double tau1 = std::numeric_limits<double>::quiet_NaN();
};

/// Nonnegative regression weights, renormalized to sum to one on construction.
class WeightVector {
public:
    explicit WeightVector(VectorXd w, WeightKind kind = {}) : w_(std::move(w)), kind_(kind) {
        if (w_.size() == 0) throw InvalidInputError("weight vector is empty");
        double total = 0.0;
        for (Index k = 0; k < w_.size(); ++k) {
            if (!std::isfinite(w_[k]) || w_[k] < 0.0)
                throw InvalidInputError("weight " + std::to_string(k) + " is negative or not finite");
            total += w_[k];
        }
        if (!(total > 0.0)) throw InvalidInputError("weights sum to zero");
        w_ /= total;
    }

    const VectorXd& values() const noexcept { return w_; }
    Index size() const noexcept { return w_.size(); }
    double operator[](Index k) const { return w_[k]; }
    const WeightKind& kind() const noexcept { return kind_; }

private:
    VectorXd w_;
    WeightKind kind_;
};

/// Shrinkage factors B_k in [0, 1]; weight placed on the regression prediction.
class ShrinkageVector {
public:
    ShrinkageVector() = default;
    explicit ShrinkageVector(VectorXd b) : b_(std::move(b)) {
        for (Index k = 0; k < b_.size(); ++k) {
            if (!(b_[k] >= 0.0 && b_[k] <= 1.0))
                throw InvalidInputError("shrinkage factor " + std::to_string(k) + " outside [0,1]");
        }
    }

    const VectorXd& values() const noexcept { return b_; }
    Index size() const noexcept { return b_.size(); }
    double operator[](Index k) const { return b_[k]; }

private:
    VectorXd b_;
};

/// The K x K matrix U with theta_hat = (U + I) Y.
struct LinearPredictorMatrix {
    MatrixXd u;
};

struct BetaEstimate {
    VectorXd beta;
    WeightVector weights_used;
    std::optional<double> tau_used;
};

inline MatrixXd intercept_design(Index k) { return MatrixXd::Ones(k, 1); }

/// Area-level data: direct estimates, covariate rows, known sampling variances
/// and optional unit sample sizes.
class AreaDataset {
public:
    AreaDataset(std::vector<std::string> area_ids, VectorXd y, MatrixXd x, VectorXd sigma2,
                std::optional<VectorXd> n = std::nullopt)
        : ids_(std::move(area_ids)), y_(std::move(y)), x_(std::move(x)), sigma2_(std::move(sigma2)),
          n_(std::move(n)) {
        validate();
    }

    AreaDataset(const VectorXd& y, MatrixXd x, VectorXd sigma2, std::optional<VectorXd> n = std::nullopt)
        : AreaDataset(default_ids(y.size()), y, std::move(x), std::move(sigma2), std::move(n)) {}

    Index size() const noexcept { return y_.size(); }
    Index num_covariates() const noexcept { return x_.cols(); }
    const std::vector<std::string>& area_ids() const noexcept { return ids_; }
    const VectorXd& y() const noexcept { return y_; }
    const MatrixXd& x() const noexcept { return x_; }
    const VectorXd& sigma2() const noexcept { return sigma2_; }
    const std::optional<VectorXd>& n() const noexcept { return n_; }

    /// Same design and variances, different responses.
    AreaDataset with_y(VectorXd y) const {
        return AreaDataset(ids_, std::move(y), x_, sigma2_, n_);
    }

private:
    static std::vector<std::string> default_ids(Index k) {
        std::vector<std::string> ids;
        ids.reserve(static_cast<std::size_t>(k));
        for (Index i = 0; i < k; ++i) ids.push_back(std::to_string(i + 1));
        return ids;
    }

    void validate() const {
        const Index k = y_.size();
        if (k < 1) throw InvalidInputError("dataset needs at least one area");
        if (x_.rows() != k) throw InvalidInputError("design matrix rows do not match number of areas");
        if (x_.cols() < 1) throw InvalidInputError("design matrix has no columns");
        if (x_.cols() > k) throw InsufficientDataError("more covariates than areas");
        if (sigma2_.size() != k) throw InvalidInputError("sigma2 length does not match number of areas");
        if (static_cast<Index>(ids_.size()) != k) throw InvalidInputError("area id count does not match");
        if (!y_.allFinite()) throw InvalidInputError("non-finite direct estimate");
        if (!x_.allFinite()) throw InvalidInputError("non-finite covariate");
        for (Index i = 0; i < k; ++i) {
            if (!(sigma2_[i] > 0.0) || !std::isfinite(sigma2_[i]))
                throw InvalidInputError("sampling variance for area " + ids_[i] + " must be positive");
        }
        if (n_) {
            if (n_->size() != k) throw InvalidInputError("sample size length does not match");
            for (Index i = 0; i < k; ++i)
                if (!((*n_)[i] > 0.0) || !std::isfinite((*n_)[i]))
                    throw InvalidInputError("sample size for area " + ids_[i] + " must be positive");
        }
    }

    std::vector<std::string> ids_;
    VectorXd y_;
    MatrixXd x_;
    VectorXd sigma2_;
    std::optional<VectorXd> n_;
};

inline ShrinkageVector shrinkage_factors(const VectorXd& sigma2, double tau) {
    if (!(tau >= 0.0) || !std::isfinite(tau)) throw InvalidInputError("tau must be finite and nonnegative");
    const double t2 = tau * tau;
    VectorXd b(sigma2.size());
    for (Index k = 0; k < sigma2.size(); ++k) {
        if (!(sigma2[k] > 0.0) || !std::isfinite(sigma2[k]))
            throw InvalidInputError("sampling variance must be positive and finite");
        b[k] = sigma2[k] / (sigma2[k] + t2);
    }
    return ShrinkageVector(std::move(b));
}

namespace detail {

inline constexpr double kRankTolerance = 1e-10;

/// Pivoted LDL^T of a p x p normal matrix; throws SingularDesignError when a
/// pivot falls below kRankTolerance times the largest pivot.
inline Eigen::LDLT<MatrixXd> factor_normal_matrix(const MatrixXd& normal) {
    Eigen::LDLT<MatrixXd> ldlt(normal);
    const VectorXd d = ldlt.vectorD();
    const double largest = d.size() ? d.cwiseAbs().maxCoeff() : 0.0;
    std::vector<int> bad;
    Eigen::PermutationMatrix<Eigen::Dynamic> perm(ldlt.transpositionsP());
    for (Index j = 0; j < normal.cols(); ++j) {
        const Index pivot = perm.indices()[j];
        const double dj = d[pivot];
        if (!(largest > 0.0) || !(dj > kRankTolerance * largest) || !std::isfinite(dj))
            bad.push_back(static_cast<int>(j));
    }
    if (ldlt.info() != Eigen::Success || !bad.empty()) {
        std::string cols;
        for (int c : bad) cols += (cols.empty() ? "" : ",") + std::to_string(c);
        throw SingularDesignError("X^T W X is rank deficient (columns " + cols + ")", bad);
    }
    return ldlt;
}

/// Weighted least-squares pieces shared by the predictors and the risk
/// estimate: coefficients, fitted values and leverages h_kk = w_k x_k^T (X^T W X)^-1 x_k.
struct WlsFit {
    VectorXd beta;
    VectorXd fitted;
    VectorXd leverage;
};

inline WlsFit wls_fit(const MatrixXd& x, const VectorXd& y, const VectorXd& w, bool with_leverage) {
    const MatrixXd xw = x.transpose() * w.asDiagonal();
    const MatrixXd normal = xw * x;
    const auto ldlt = factor_normal_matrix(normal);
    WlsFit fit;
    fit.beta = ldlt.solve(xw * y);
    fit.fitted = x * fit.beta;
    if (with_leverage) {
        const MatrixXd z = ldlt.solve(x.transpose());
        fit.leverage = w.cwiseProduct((x.cwiseProduct(z.transpose())).rowwise().sum());
    }
    return fit;
}

}  // namespace detail

inline BetaEstimate wls_beta(const AreaDataset& data, const WeightVector& w) {
    if (w.size() != data.size()) throw InvalidInputError("weight length does not match number of areas");
    auto fit = detail::wls_fit(data.x(), data.y(), w.values(), false);
    std::optional<double> tau;
    if (std::isfinite(w.kind().tau)) tau = w.kind().tau;
    return BetaEstimate{std::move(fit.beta), w, tau};
}

/// U = diag(b) (X (X^T W X)^-1 X^T W - I) for explicit shrinkage factors.
inline LinearPredictorMatrix predictor_matrix(const AreaDataset& data, const WeightVector& w,
                                              const ShrinkageVector& b) {
    const Index k = data.size();
    if (w.size() != k || b.size() != k) throw InvalidInputError("weight/shrinkage length mismatch");
    const MatrixXd& x = data.x();
    const MatrixXd xw = x.transpose() * w.values().asDiagonal();
    const auto ldlt = detail::factor_normal_matrix(xw * x);
    MatrixXd hat = x * ldlt.solve(xw);
    hat.diagonal().array() -= 1.0;
    return LinearPredictorMatrix{b.values().asDiagonal() * hat};
}

inline LinearPredictorMatrix predictor_matrix(const AreaDataset& data, const WeightVector& w, double tau) {
    return predictor_matrix(data, w, shrinkage_factors(data.sigma2(), tau));
}

/// theta_k = B_k x_k^T beta + (1 - B_k) Y_k.
inline VectorXd combine(const AreaDataset& data, const VectorXd& beta, const ShrinkageVector& b) {
    if (beta.size() != data.num_covariates()) throw InvalidInputError("beta dimension does not match design");
    if (b.size() != data.size()) throw InvalidInputError("shrinkage length mismatch");
    const VectorXd fitted = data.x() * beta;
    const VectorXd& bv = b.values();
    return (bv.array() * fitted.array() + (1.0 - bv.array()) * data.y().array()).matrix();
}

inline VectorXd combine(const AreaDataset& data, const BetaEstimate& beta, double tau) {
    return combine(data, beta.beta, shrinkage_factors(data.sigma2(), tau));
}

/// Sample standard deviation (K - 1 denominator); zero for a single value.
inline double sample_sd(const VectorXd& v) {
    const Index k = v.size();
    if (k < 2) return 0.0;
    const double mean = v.mean();
    return std::sqrt((v.array() - mean).square().sum() / static_cast<double>(k - 1));
}

/// Upper bound for tau searches: ten sample SDs of Y, or 1 when Y is constant.
inline double tau_upper_bound(const VectorXd& y) {
    const double sd = sample_sd(y);
    return sd > 0.0 ? 10.0 * sd : 1.0;
}

}  // namespace cbp
