#pragma once

// Grid-seeded bounded minimization in one to four dimensions.
//
// Every seed point is evaluated; the grid's local minima (plus any caller
// supplied seeds) are refined, and the best point seen anywhere is returned,
// so the result never exceeds the objective at any seed. Ties go to the
// lexicographically smallest coordinates.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/tools/minima.hpp>

#include "cbp/error.hpp"

namespace cbp {

struct BoxSpec {
    std::vector<double> lower;
    std::vector<double> upper;
    /// Uniform grid size per coordinate (>= 2); ignored for coordinates that
    /// have explicit seed values.
    std::vector<int> grid_seeds;
    /// Optional explicit seed values per coordinate.
    std::vector<std::vector<double>> seed_values;

    std::size_t dims() const noexcept { return lower.size(); }

    void validate() const {
        const auto n = lower.size();
        if (n == 0 || n > 4) throw InvalidInputError("box must have 1 to 4 coordinates");
        if (upper.size() != n) throw InvalidInputError("box bound sizes differ");
        if (!seed_values.empty() && seed_values.size() != n) throw InvalidInputError("seed_values size mismatch");
        if (seed_values.empty() && grid_seeds.size() != n) throw InvalidInputError("grid_seeds size mismatch");
        for (std::size_t i = 0; i < n; ++i) {
            if (!std::isfinite(lower[i]) || !std::isfinite(upper[i]) || !(lower[i] <= upper[i]))
                throw InvalidInputError("box needs finite lower <= upper");
            const bool explicit_seeds = !seed_values.empty() && !seed_values[i].empty();
            if (!explicit_seeds && (grid_seeds.size() != n || grid_seeds[i] < 2))
                throw InvalidInputError("grid_seeds must be >= 2");
        }
    }

    /// Seed values for coordinate i, sorted, unique and clamped into the box.
    std::vector<double> seeds_for(std::size_t i) const {
        std::vector<double> s;
        if (!seed_values.empty() && !seed_values[i].empty()) {
            s = seed_values[i];
        } else {
            const int m = grid_seeds[i];
            for (int j = 0; j < m; ++j)
                s.push_back(lower[i] + (upper[i] - lower[i]) * static_cast<double>(j) / (m - 1));
        }
        for (auto& v : s) v = std::clamp(v, lower[i], upper[i]);
        std::sort(s.begin(), s.end());
        s.erase(std::unique(s.begin(), s.end()), s.end());
        return s;
    }
};

struct OptResult {
    std::vector<double> x;
    double value = std::numeric_limits<double>::infinity();
    int evaluations = 0;
    bool converged = false;
};

struct OptOptions {
    /// Grid local minima refined, best first.
    int max_starts = 4;
    int max_iterations = 500;
};

inline std::vector<double> linspace(double a, double b, int m) {
    std::vector<double> v;
    for (int j = 0; j < m; ++j) v.push_back(m == 1 ? a : a + (b - a) * j / (m - 1));
    return v;
}

/// Zero followed by m log-spaced points on [upper * 10^-decades, upper].
inline std::vector<double> zero_and_logspace(double upper, int m, double decades = 4.0) {
    std::vector<double> v{0.0};
    for (int j = 0; j < m; ++j) {
        const double e = -decades + decades * (m == 1 ? 1.0 : static_cast<double>(j) / (m - 1));
        v.push_back(upper * std::pow(10.0, e));
    }
    return v;
}

namespace detail {

using Point = std::vector<double>;

/// Lower objective wins; equal objectives go to the lexicographically smaller point.
inline bool better(double fa, const Point& a, double fb, const Point& b) {
    if (fa < fb) return true;
    if (fb < fa) return false;
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

class CountingObjective {
public:
    /// Strict objectives throw on a non-finite value; lenient ones map it to +inf.
    CountingObjective(const std::function<double(const std::vector<double>&)>& f, bool strict)
        : f_(f), strict_(strict) {}

    double operator()(const Point& x) {
        ++count_;
        const double v = f_(x);
        if (!std::isfinite(v)) {
            if (!strict_) return std::numeric_limits<double>::infinity();
            std::ostringstream msg;
            msg << "objective is not finite at (";
            for (std::size_t i = 0; i < x.size(); ++i) msg << (i ? ", " : "") << x[i];
            msg << ")";
            throw NumericalError(msg.str());
        }
        return v;
    }

    int count() const noexcept { return count_; }

private:
    const std::function<double(const std::vector<double>&)>& f_;
    bool strict_;
    int count_ = 0;
};

/// Projected quasi-Newton (BFGS inverse Hessian on the free coordinates)
/// with central-difference gradients and Armijo backtracking along the
/// projected path.
class ProjectedQuasiNewton {
public:
    ProjectedQuasiNewton(CountingObjective& f, const BoxSpec& box, int max_iterations)
        : f_(f), lo_(box.lower), hi_(box.upper), max_iter_(max_iterations) {}

    std::pair<Point, double> run(Point x, double fx, bool& converged) {
        const std::size_t n = x.size();
        std::vector<double> width(n);
        for (std::size_t i = 0; i < n; ++i) width[i] = hi_[i] - lo_[i];

        // Work in unit coordinates u = (x - lo) / width.
        Point u(n);
        for (std::size_t i = 0; i < n; ++i) u[i] = width[i] > 0 ? (x[i] - lo_[i]) / width[i] : 0.0;

        auto to_x = [&](const Point& uu) {
            Point xx(n);
            for (std::size_t i = 0; i < n; ++i)
                xx[i] = width[i] > 0 ? std::clamp(lo_[i] + uu[i] * width[i], lo_[i], hi_[i]) : lo_[i];
            return xx;
        };

        auto gradient = [&](const Point& uu) {
            Point g(n, 0.0);
            const Point xx = to_x(uu);
            for (std::size_t i = 0; i < n; ++i) {
                if (!(width[i] > 0)) continue;
                const double h = 1e-6 * (1.0 + std::abs(xx[i]));
                Point xp = xx, xm = xx;
                xp[i] = std::min(xx[i] + h, hi_[i]);
                xm[i] = std::max(xx[i] - h, lo_[i]);
                if (!(xp[i] > xm[i])) continue;
                const double d = (f_(xp) - f_(xm)) / (xp[i] - xm[i]) * width[i];
                g[i] = std::isfinite(d) ? d : 0.0;
            }
            return g;
        };

        auto identity = [n] {
            std::vector<double> h(n * n, 0.0);
            for (std::size_t i = 0; i < n; ++i) h[i * n + i] = 1.0;
            return h;
        };

        std::vector<double> H = identity();
        bool h_is_identity = true;
        bool first_update = true;
        Point g = gradient(u);
        converged = false;
        int stalled = 0;

        for (int it = 0; it < max_iter_; ++it) {
            std::vector<bool> free(n);
            double pg_norm = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const bool fixed = !(width[i] > 0);
                const bool at_lo = u[i] <= 0.0 && g[i] > 0.0;
                const bool at_hi = u[i] >= 1.0 && g[i] < 0.0;
                free[i] = !(fixed || at_lo || at_hi);
                const double pg = std::clamp(u[i] - g[i], 0.0, 1.0) - u[i];
                if (!fixed) pg_norm = std::max(pg_norm, std::abs(pg));
            }
            // Central differences in unit coordinates resolve gradients to about 1e-10 |f| width.
            if (pg_norm <= 1e-7 * (1.0 + std::abs(fx))) {
                converged = true;
                break;
            }

            // Newton step on the free coordinates: the free block of the Hessian
            // approximation H^-1, not the free block of H.
            Point d(n, 0.0);
            double slope = 0.0;
            std::vector<std::size_t> fidx;
            for (std::size_t i = 0; i < n; ++i)
                if (free[i]) fidx.push_back(i);
            if (fidx.size() == n) {
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < n; ++j) d[i] -= H[i * n + j] * g[j];
            } else if (!fidx.empty()) {
                Eigen::MatrixXd hm(n, n);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < n; ++j) hm(i, j) = H[i * n + j];
                const Eigen::MatrixXd bm = hm.inverse();
                const auto m = static_cast<Eigen::Index>(fidx.size());
                Eigen::MatrixXd bf(m, m);
                Eigen::VectorXd gf(m);
                for (Eigen::Index i = 0; i < m; ++i) {
                    gf[i] = g[fidx[i]];
                    for (Eigen::Index j = 0; j < m; ++j) bf(i, j) = bm(fidx[i], fidx[j]);
                }
                const Eigen::VectorXd df = -bf.ldlt().solve(gf);
                for (Eigen::Index i = 0; i < m; ++i) d[fidx[i]] = std::isfinite(df[i]) ? df[i] : 0.0;
            }
            for (std::size_t i = 0; i < n; ++i) slope += d[i] * g[i];
            if (!(slope < 0.0)) {
                H = identity();
                h_is_identity = true;
                first_update = true;
                for (std::size_t i = 0; i < n; ++i) d[i] = free[i] ? -g[i] : 0.0;
            }
            double dmax = 0.0;
            for (double v : d) dmax = std::max(dmax, std::abs(v));
            if (dmax == 0.0) {
                converged = true;
                break;
            }
            if (dmax > 1.0)
                for (auto& v : d) v /= dmax;

            bool accepted = false;
            Point un(n), s(n);
            double fn = fx;
            auto trial = [&](double t, Point& ut, Point& st) {
                double smax = 0.0, gs = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    ut[i] = std::clamp(u[i] + t * d[i], 0.0, 1.0);
                    st[i] = ut[i] - u[i];
                    smax = std::max(smax, std::abs(st[i]));
                    gs += g[i] * st[i];
                }
                return std::make_pair(smax, gs);
            };
            double t = 1.0;
            for (; t > 1e-14; t *= 0.5) {
                const auto [smax, gs] = trial(t, un, s);
                if (smax == 0.0) break;
                fn = f_(to_x(un));
                if (fn <= fx + 1e-4 * gs && fn <= fx) {
                    accepted = true;
                    break;
                }
            }
            // A full step that was accepted may be too short on nearly linear stretches: extend it.
            if (accepted && t == 1.0) {
                Point ut(n), st(n);
                for (double te = 2.0; te * dmax <= 2.0; te *= 2.0) {
                    const auto [smax, gs] = trial(te, ut, st);
                    if (smax <= 0.0) break;
                    const double ft = f_(to_x(ut));
                    if (!(ft < fn && ft <= fx + 1e-4 * gs)) break;
                    un = ut;
                    s = st;
                    fn = ft;
                }
            }
            if (!accepted) {
                if (!h_is_identity) {
                    H = identity();
                    h_is_identity = true;
                    first_update = true;
                    continue;
                }
                // No descent along the projected gradient at working precision.
                converged = true;
                break;
            }

            const Point gn = gradient(un);
            Point y(n);
            double sy = 0.0, yy = 0.0, ss = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                y[i] = gn[i] - g[i];
                sy += s[i] * y[i];
                yy += y[i] * y[i];
                ss += s[i] * s[i];
            }
            if (sy > 1e-12 * std::sqrt(ss * yy)) {
                if (first_update) {
                    H = identity();
                    for (std::size_t i = 0; i < n; ++i) H[i * n + i] = sy / yy;
                    first_update = false;
                }
                // H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
                const double rho = 1.0 / sy;
                std::vector<double> hy(n, 0.0);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < n; ++j) hy[i] += H[i * n + j] * y[j];
                double yhy = 0.0;
                for (std::size_t i = 0; i < n; ++i) yhy += y[i] * hy[i];
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < n; ++j)
                        H[i * n + j] += -rho * (s[i] * hy[j] + hy[i] * s[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                h_is_identity = false;
            }

            const double decrease = fx - fn;
            double smax = 0.0;
            for (double v : s) smax = std::max(smax, std::abs(v));
            u = un;
            fx = fn;
            g = gn;
            if (decrease <= 1e-15 * (1.0 + std::abs(fx)) && smax < 1e-10) {
                converged = true;
                break;
            }
            // Relative-reduction test with L-BFGS-B's default factr (1e7 machine epsilons), held for three steps.
            stalled = decrease <= 1e7 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(fx)) ? stalled + 1 : 0;
            if (stalled >= 3) {
                converged = true;
                break;
            }
        }
        return {to_x(u), fx};
    }

private:
    CountingObjective& f_;
    std::vector<double> lo_, hi_;
    int max_iter_;
};

}  // namespace detail

/// Scalar minimization: seed scan, then Brent refinement inside the bracket
/// around each of the best grid local minima.
inline OptResult minimize_1d(const std::function<double(double)>& f, const BoxSpec& box,
                             const OptOptions& options = {}) {
    box.validate();
    if (box.dims() != 1) throw InvalidInputError("minimize_1d needs a one-dimensional box");
    const std::function<double(const std::vector<double>&)> fv = [&](const std::vector<double>& x) {
        return f(x[0]);
    };
    detail::CountingObjective obj(fv, true);
    const auto seeds = box.seeds_for(0);
    std::vector<double> vals(seeds.size());
    for (std::size_t i = 0; i < seeds.size(); ++i) vals[i] = obj({seeds[i]});

    OptResult best;
    best.x = {seeds[0]};
    best.value = vals[0];
    for (std::size_t i = 1; i < seeds.size(); ++i)
        if (vals[i] < best.value) best = OptResult{{seeds[i]}, vals[i], 0, false};

    std::vector<std::size_t> minima;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        const bool left = i == 0 || vals[i] <= vals[i - 1];
        const bool right = i + 1 == seeds.size() || vals[i] <= vals[i + 1];
        if (left && right) minima.push_back(i);
    }
    std::stable_sort(minima.begin(), minima.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
    if (static_cast<int>(minima.size()) > options.max_starts) minima.resize(static_cast<std::size_t>(options.max_starts));

    for (std::size_t i : minima) {
        const double a = seeds[i == 0 ? 0 : i - 1];
        const double b = seeds[i + 1 == seeds.size() ? i : i + 1];
        if (!(b > a)) continue;
        std::uintmax_t max_iter = 200;
        const auto [xr, fr] = boost::math::tools::brent_find_minima(
            [&](double x) { return obj({x}); }, a, b, std::numeric_limits<double>::digits / 2, max_iter);
        if (detail::better(fr, {xr}, best.value, best.x)) {
            best.x = {xr};
            best.value = fr;
        }
    }
    best.evaluations = obj.count();
    best.converged = true;
    return best;
}

/// Box minimization over 1-4 coordinates.
inline OptResult minimize_box(const std::function<double(const std::vector<double>&)>& f, const BoxSpec& box,
                              const std::vector<std::vector<double>>& extra_seeds = {},
                              const OptOptions& options = {}) {
    box.validate();
    const std::size_t n = box.dims();
    detail::CountingObjective obj(f, false);

    std::vector<std::vector<double>> axes(n);
    std::size_t total = 1;
    for (std::size_t i = 0; i < n; ++i) {
        axes[i] = box.seeds_for(i);
        total *= axes[i].size();
    }

    std::vector<detail::Point> points(total, detail::Point(n));
    std::vector<double> vals(total);
    std::vector<std::size_t> stride(n, 1);
    for (std::size_t i = n; i-- > 1;) stride[i - 1] = stride[i] * axes[i].size();
    for (std::size_t idx = 0; idx < total; ++idx) {
        for (std::size_t i = 0; i < n; ++i) points[idx][i] = axes[i][(idx / stride[i]) % axes[i].size()];
        vals[idx] = obj(points[idx]);
    }

    OptResult best;
    best.x = points[0];
    best.value = vals[0];
    for (std::size_t idx = 1; idx < total; ++idx)
        if (detail::better(vals[idx], points[idx], best.value, best.x)) {
            best.x = points[idx];
            best.value = vals[idx];
        }

    if (!std::isfinite(best.value))
        throw OptimizationError("objective is not finite at any seed point", best.x, best.value);

    std::vector<std::size_t> minima;
    for (std::size_t idx = 0; idx < total; ++idx) {
        if (!std::isfinite(vals[idx])) continue;
        bool is_min = true;
        for (std::size_t i = 0; i < n && is_min; ++i) {
            const std::size_t c = (idx / stride[i]) % axes[i].size();
            if (c > 0 && vals[idx - stride[i]] < vals[idx]) is_min = false;
            if (c + 1 < axes[i].size() && vals[idx + stride[i]] < vals[idx]) is_min = false;
        }
        if (is_min) minima.push_back(idx);
    }
    std::stable_sort(minima.begin(), minima.end(), [&](std::size_t a, std::size_t b) {
        return detail::better(vals[a], points[a], vals[b], points[b]);
    });
    if (static_cast<int>(minima.size()) > options.max_starts) minima.resize(static_cast<std::size_t>(options.max_starts));

    std::vector<std::pair<detail::Point, double>> starts;
    for (std::size_t idx : minima) starts.emplace_back(points[idx], vals[idx]);
    for (auto s : extra_seeds) {
        if (s.size() != n) throw InvalidInputError("extra seed has wrong dimension");
        for (std::size_t i = 0; i < n; ++i) s[i] = std::clamp(s[i], box.lower[i], box.upper[i]);
        const double v = obj(s);
        if (detail::better(v, s, best.value, best.x)) {
            best.x = s;
            best.value = v;
        }
        starts.emplace_back(std::move(s), v);
    }

    bool all_converged = true;
    detail::ProjectedQuasiNewton solver(obj, box, options.max_iterations);
    for (auto& [x0, f0] : starts) {
        bool converged = false;
        auto [xr, fr] = solver.run(x0, f0, converged);
        all_converged = all_converged && converged;
        if (detail::better(fr, xr, best.value, best.x)) {
            best.x = std::move(xr);
            best.value = fr;
        }
    }
    best.evaluations = obj.count();
    best.converged = all_converged;
    if (!all_converged)
        throw OptimizationError("iteration limit reached before convergence", best.x, best.value);
    return best;
}

}  // namespace cbp
