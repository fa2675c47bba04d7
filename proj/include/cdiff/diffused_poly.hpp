#pragma once

// Diffused local polynomials.
//
// The data density is rescaled onto the unit cube, replaced by local Taylor
// polynomials on a grid of N cells per axis (with trapezoid partitions of
// unity in y), and pushed through the forward Gaussian kernel. The kernel's
// exponential is replaced by its order-p Taylor series and the integration
// domain is clipped to |standardized offset| <= c, so every basis function
// (a "diffused local monomial") has a closed form built from the moments
//
//   g(x, n, v, k) = 1/(sigma sqrt(2 pi)) * integral over the clipped cell of
//                   (z/R + 1/2 - v/N)^n (1/k!) (-(x - alpha z)^2 / (2 sigma^2))^k dz.
//
// f1 approximates p_t(x|y), f2 approximates sigma_t grad p_t(x|y), and the
// score approximation f3 divides the two after flooring f1 at eps_low and
// clamps the result. The fast-rate variant applies the same machinery to
// f = p exp(C2 |x|^2 / 2) under the (alpha_hat, sigma_hat) kernel.

#include "cdiff/common.hpp"
#include "cdiff/densities.hpp"
#include "cdiff/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

namespace cdiff {

/// Trapezoid bump: 1 on |a| < 1, linear to 0 on [1, 2], 0 beyond.
inline double trapezoid(double a) {
  const double m = std::abs(a);
  if (m < 1.0) return 1.0;
  if (m <= 2.0) return 2.0 - m;
  return 0.0;
}

using MultiIndex = std::vector<int>;

/// All multi-indices of length m with total degree <= s, graded then
/// lexicographic (so the zero index comes first).
inline std::vector<MultiIndex> multi_indices(int m, int s) {
  std::vector<MultiIndex> out;
  for (int deg = 0; deg <= s; ++deg) {
    MultiIndex cur(m, 0);
    std::function<void(int, int)> rec = [&](int pos, int left) {
      if (pos == m - 1) {
        cur[pos] = left;
        out.push_back(cur);
        return;
      }
      for (int a = left; a >= 0; --a) {
        cur[pos] = a;
        rec(pos + 1, left - a);
      }
    };
    if (m == 0) {
      if (deg == 0) out.emplace_back();
      continue;
    }
    rec(0, deg);
  }
  return out;
}

namespace detail {

inline double factorial(int n) {
  double f = 1.0;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

inline double binomial(int n, int k) {
  double b = 1.0;
  for (int i = 1; i <= k; ++i) b = b * (n - k + i) / i;
  return b;
}

}  // namespace detail

struct TaylorCoefficient {
  MultiIndex order;
  double value;  // d^order f (center) / order!
};

/// Taylor coefficients of f at center up to total order s by nested central
/// differences with step h (the order-k stencil uses offsets (k/2 - j) h).
template <class F>
std::vector<TaylorCoefficient> taylor_coeffs(F&& f, const Vec& center, int s, double h) {
  require(s >= 0, "taylor_coeffs: order must be nonnegative");
  require(h > 0.0, "taylor_coeffs: step must be positive");
  const int m = static_cast<int>(center.size());
  std::vector<TaylorCoefficient> out;
  for (const auto& alpha : multi_indices(m, s)) {
    // Tensor-product stencil over the axes with nonzero order.
    double acc = 0.0;
    std::vector<int> j(m, 0);
    Vec pt(m);
    while (true) {
      double w = 1.0;
      for (int a = 0; a < m; ++a) {
        pt[a] = center[a] + (0.5 * alpha[a] - j[a]) * h;
        w *= ((j[a] % 2) ? -1.0 : 1.0) * detail::binomial(alpha[a], j[a]);
      }
      acc += w * f(pt);
      int a = 0;
      for (; a < m; ++a) {
        if (++j[a] <= alpha[a]) break;
        j[a] = 0;
      }
      if (a == m) break;
    }
    double denom = 1.0;
    int total = 0;
    for (int a = 0; a < m; ++a) {
      denom *= detail::factorial(alpha[a]);
      total += alpha[a];
    }
    const double value = acc / std::pow(h, total) / denom;
    if (!std::isfinite(value))
      throw numerical_abort("taylor_coeffs: non-finite derivative estimate");
    out.push_back({alpha, value});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Configuration

struct PolyApproxConfig {
  int N = 8;              // cells per axis
  int s = 2;              // Taylor order
  int p = 12;             // terms of the exponential series
  double R = 4.0;         // side of the rescaled support [-R/2, R/2]^d
  double trunc = 2.0;     // clip on the standardized kernel offset
  double eps_low = 0.0;   // floor of f1 in the score ratio; <= 0 means "calibrate"
  double Cx = 2.0;        // evaluation cube is [-Cx sqrt(log N), Cx sqrt(log N)]^d
  double C5 = 0.0;        // score-clamp constant; <= 0 means "fit from the oracle"

  double cube_radius() const { return Cx * std::sqrt(std::log(static_cast<double>(N))); }

  void validate() const {
    require(N >= 2, "PolyApproxConfig: N must be at least 2");
    require(s >= 0, "PolyApproxConfig: s must be nonnegative");
    require(p >= 1, "PolyApproxConfig: p must be at least 1");
    require(R > 0.0 && trunc > 0.0 && Cx > 0.0, "PolyApproxConfig: radii must be positive");
    require(eps_low < 1.0, "PolyApproxConfig: eps_low must be below 1");
  }

  static int default_p(int N, double beta) {
    return std::min(60, static_cast<int>(std::ceil(4.0 * beta * std::log(static_cast<double>(N)))));
  }

  /// Defaults for the forward kernel: s = floor(beta), p = ceil(4 beta log N)
  /// capped at 60, R = 2 sqrt(2 beta log N), Cx = sqrt(2 beta), clip at R/2.
  static PolyApproxConfig defaults(int N, double beta) {
    require(N >= 2 && beta > 0, "PolyApproxConfig::defaults: need N >= 2 and beta > 0");
    PolyApproxConfig c;
    c.N = N;
    c.s = static_cast<int>(std::floor(beta));
    c.p = default_p(N, beta);
    c.trunc = std::sqrt(2.0 * beta * std::log(static_cast<double>(N)));
    c.R = 2.0 * c.trunc;
    c.Cx = std::sqrt(2.0 * beta);
    return c;
  }

  /// Defaults for the (alpha_hat, sigma_hat) kernel. The rescaled support has
  /// to hold alpha_hat x + sigma_hat u for x in the cube and |u| <= trunc.
  static PolyApproxConfig fast_defaults(int N, double beta, double C2) {
    require(C2 > 0, "fast_defaults: C2 must be positive");
    PolyApproxConfig c = defaults(N, beta);
    const double half = std::max(1.0 / C2, 1.0) * c.cube_radius() +
                        std::max(1.0 / std::sqrt(C2), 1.0) * c.trunc;
    c.R = 2.0 * half;
    return c;
  }
};

/// (alpha_hat, sigma_hat) of the fast-rate decomposition.
struct HatSchedule {
  double alpha_hat;
  double sigma_hat;
};

inline HatSchedule hat_schedule(double t, double C2) {
  require(C2 > 0.0, "hat_schedule: C2 must be positive");
  const auto [alpha, sigma] = alpha_sigma(t);
  const double q = alpha * alpha + C2 * sigma * sigma;
  return {alpha / q, sigma / std::sqrt(q)};
}

// ---------------------------------------------------------------------------
// Closed-form clipped moments

enum class KernelKind { forward, fast_rate };

/// Affine change of variables z = center + scale u between the rescaled
/// support coordinate z and the standardized kernel offset u; `jacobian`
/// carries the constant left after the substitution.
struct MomentGeometry {
  double center;
  double scale;
  double jacobian;
};

inline MomentGeometry moment_geometry(KernelKind kind, double x, double t, double C2 = 1.0) {
  if (kind == KernelKind::forward) {
    const auto [alpha, sigma] = alpha_sigma(t);
    return {x / alpha, sigma / alpha, 1.0 / alpha};
  }
  const auto [ah, sh] = hat_schedule(t, C2);
  return {ah * x, sh, 1.0};
}

namespace detail {

/// Integrals of u^m over [L, U] for m = 0..M, via
/// (U^{m+1} - L^{m+1}) / (m+1) = (U - L) S_m / (m+1), S_m = U^m + L S_{m-1}.
inline void power_integrals(long double L, long double U, int M, std::vector<long double>& out) {
  out.assign(M + 1, 0.0L);
  const long double width = U - L;
  long double S = 1.0L;
  long double Um = 1.0L;
  out[0] = width;
  for (int m = 1; m <= M; ++m) {
    Um *= U;
    S = Um + L * S;
    out[m] = width * S / (m + 1);
  }
}

/// Clipped u-interval of cell v (1-based) or an empty range.
inline bool cell_interval(const MomentGeometry& g, int v, int N, double R, double trunc,
                          long double& L, long double& U) {
  const double zlo = ((v - 1.0) / N - 0.5) * R;
  const double zhi = (static_cast<double>(v) / N - 0.5) * R;
  L = std::max<long double>(-trunc, (zlo - g.center) / g.scale);
  U = std::min<long double>(trunc, (zhi - g.center) / g.scale);
  return L < U;
}

}  // namespace detail

/// One diffused moment g(x, n, v, k) of the forward kernel, with v the 1-based
/// cell index. `extra_offset` multiplies the integrand by the standardized
/// offset u once more, which is the ingredient of the gradient polynomial.
inline double g_moment(double x, int n, int v, int k, double t, const PolyApproxConfig& cfg,
                       bool extra_offset = false, KernelKind kind = KernelKind::forward,
                       double C2 = 1.0) {
  require(t > 0.0, "g_moment: t must be positive");
  require(n >= 0 && k >= 0, "g_moment: orders must be nonnegative");
  require(v >= 1 && v <= cfg.N, "g_moment: cell index out of range");
  const auto geo = moment_geometry(kind, x, t, C2);
  long double L, U;
  if (!detail::cell_interval(geo, v, cfg.N, cfg.R, cfg.trunc, L, U)) return 0.0;
  const int e = extra_offset ? 1 : 0;
  std::vector<long double> I;
  detail::power_integrals(L, U, n + 2 * k + e, I);
  // z/R + 1/2 - v/N = a + b u
  const long double a = geo.center / cfg.R + 0.5L - static_cast<long double>(v) / cfg.N;
  const long double b = geo.scale / cfg.R;
  long double acc = 0.0L;
  for (int j = 0; j <= n; ++j)
    acc += detail::binomial(n, j) * std::pow(a, n - j) * std::pow(b, j) * I[j + 2 * k + e];
  long double coef = 1.0L;
  for (int i = 1; i <= k; ++i) coef *= -0.5L / i;
  return static_cast<double>(geo.jacobian * coef * acc / std::sqrt(2.0L * kPi));
}

// ---------------------------------------------------------------------------
// The polynomial itself

class DiffusedPolynomial {
 public:
  /// Density on original coordinates; must accept y slightly outside the
  /// unit cube (finite-difference stencils at the boundary).
  using Source = std::function<double(const Vec& x, const Vec& y)>;

  struct Value {
    double f1;
    Vec f2;
  };

  /// Tabulates Taylor coefficients of the rescaled source
  /// r(xi, y) = source(R (xi - 1/2), y) at every grid point (v/N, w/N),
  /// v in {1..N}^d, w in {0..N}^{d_y}.
  static DiffusedPolynomial build(const Source& source, int d, int d_y, const PolyApproxConfig& cfg,
                                  KernelKind kind = KernelKind::forward, double C2 = 1.0) {
    cfg.validate();
    require(d >= 1 && d <= 2, "diffused polynomial supports d in {1, 2}");
    require(d_y >= 0 && d_y <= 1, "diffused polynomial supports d_y in {0, 1}");
    DiffusedPolynomial P(d, d_y, cfg, kind, C2);
    const int m = d + d_y;
    const double h = 1e-3;  // rescaled domain has unit width
    auto rescaled = [&](const Vec& pt) {
      Vec x = cfg.R * (pt.head(d).array() - 0.5).matrix();
      Vec y = pt.tail(d_y);
      return source(x, y);
    };
    P.coef_.resize(P.cell_count() * P.orders_.size());
    Vec center(m);
    for (std::size_t c = 0; c < P.cell_count(); ++c) {
      const auto [v, w] = P.unpack(c);
      for (int i = 0; i < d; ++i) center[i] = static_cast<double>(v[i]) / cfg.N;
      for (int j = 0; j < d_y; ++j) center[d + j] = static_cast<double>(w[j]) / cfg.N;
      const auto tc = taylor_coeffs(rescaled, center, cfg.s, h);
      for (std::size_t o = 0; o < tc.size(); ++o) P.coef_[c * P.orders_.size() + o] = tc[o].value;
    }
    return P;
  }

  int dim() const { return d_; }
  int guidance_dim() const { return d_y_; }
  const PolyApproxConfig& config() const { return cfg_; }
  KernelKind kernel() const { return kind_; }
  const std::vector<MultiIndex>& orders() const { return orders_; }
  const std::vector<double>& coefficients() const { return coef_; }

  std::size_t cell_count() const {
    std::size_t n = 1;
    for (int i = 0; i < d_; ++i) n *= cfg_.N;
    for (int j = 0; j < d_y_; ++j) n *= cfg_.N + 1;
    return n;
  }

  std::size_t nonzero_count() const {
    return static_cast<std::size_t>(
        std::count_if(coef_.begin(), coef_.end(), [](double c) { return c != 0.0; }));
  }

  /// Same grid and config with a replaced coefficient table.
  DiffusedPolynomial with_coefficients(std::vector<double> coef) const {
    require(coef.size() == coef_.size(), "with_coefficients: table size mismatch");
    DiffusedPolynomial P = *this;
    P.coef_ = std::move(coef);
    return P;
  }

  void check_domain(const Vec& x, const Vec& y, double t) const {
    require(x.size() == d_ && y.size() == d_y_, "diffused polynomial: dimension mismatch");
    require(std::isfinite(t) && t > 0.0, "diffused polynomial: t must be positive");
    const double r = cfg_.cube_radius();
    for (Eigen::Index i = 0; i < x.size(); ++i)
      require(std::abs(x[i]) <= r * (1 + 1e-12),
              "diffused polynomial: x outside the evaluation cube");
    for (Eigen::Index j = 0; j < y.size(); ++j)
      require(y[j] >= 0.0 && y[j] <= 1.0, "diffused polynomial: y outside the unit cube");
  }

  /// f1 and f2 at (x, y, t). f2 approximates sigma_t grad p_t for the forward
  /// kernel and (sigma_hat/alpha_hat) grad h for the fast-rate kernel.
  Value evaluate(const Vec& x, const Vec& y, double t, bool with_gradient = true) const {
    check_domain(x, y, t);
    const int N = cfg_.N;
    const int S = cfg_.s;
    // Per axis: G[i][v][n] = sum_k<p g(x_i, n, v, k), G1 with the extra offset.
    std::vector<std::vector<double>> G(d_), G1(d_);
    std::vector<std::vector<char>> live(d_);
    std::vector<long double> I;
    for (int i = 0; i < d_; ++i) {
      G[i].assign(static_cast<std::size_t>(N) * (S + 1), 0.0);
      G1[i].assign(static_cast<std::size_t>(N) * (S + 1), 0.0);
      live[i].assign(N, 0);
      const auto geo = moment_geometry(kind_, x[i], t, C2_);
      const long double b = geo.scale / cfg_.R;
      for (int v = 1; v <= N; ++v) {
        long double L, U;
        if (!detail::cell_interval(geo, v, N, cfg_.R, cfg_.trunc, L, U)) continue;
        live[i][v - 1] = 1;
        detail::power_integrals(L, U, S + 2 * (cfg_.p - 1) + 1, I);
        const long double a = geo.center / cfg_.R + 0.5L - static_cast<long double>(v) / N;
        // sum_k (-1/2)^k / k! * I[m + 2k], for each shift m needed.
        std::vector<long double> E(S + 2, 0.0L);
        for (int mm = 0; mm <= S + 1; ++mm) {
          long double coef = 1.0L, acc = 0.0L;
          for (int k = 0; k < cfg_.p; ++k) {
            acc += coef * I[mm + 2 * k];
            coef *= -0.5L / (k + 1);
          }
          E[mm] = acc;
        }
        const long double pref = geo.jacobian / std::sqrt(2.0L * kPi);
        for (int n = 0; n <= S; ++n) {
          long double g0 = 0.0L, g1 = 0.0L;
          for (int j = 0; j <= n; ++j) {
            const long double bc = detail::binomial(n, j) * std::pow(a, n - j) * std::pow(b, j);
            g0 += bc * E[j];
            g1 += bc * E[j + 1];
          }
          G[i][(v - 1) * (S + 1) + n] = static_cast<double>(pref * g0);
          G1[i][(v - 1) * (S + 1) + n] = static_cast<double>(pref * g1);
        }
      }
    }

    // Active y-cells and their trapezoid weights.
    struct YCell {
      int w;
      double psi;
      double offset;
    };
    std::vector<YCell> ycells;
    if (d_y_ == 0) {
      ycells.push_back({0, 1.0, 0.0});
    } else {
      for (int w = 0; w <= N; ++w) {
        const double off = y[0] - static_cast<double>(w) / N;
        const double psi = trapezoid(3.0 * N * off);
        if (psi > 0.0) ycells.push_back({w, psi, off});
      }
    }

    Value out{0.0, Vec::Zero(d_)};
    const std::size_t no = orders_.size();
    std::vector<int> v(d_, 1);
    for (const auto& yc : ycells) {
      std::vector<double> ypow(S + 1, 1.0);
      for (int q = 1; q <= S; ++q) ypow[q] = ypow[q - 1] * yc.offset;
      // Iterate over live x-cells.
      std::fill(v.begin(), v.end(), 1);
      while (true) {
        bool active = true;
        for (int i = 0; i < d_; ++i) active = active && live[i][v[i] - 1];
        if (active) {
          const std::size_t c = pack(v, yc.w);
          const double* cf = &coef_[c * no];
          for (std::size_t o = 0; o < no; ++o) {
            if (cf[o] == 0.0) continue;
            const auto& ord = orders_[o];
            const double base = cf[o] * yc.psi * (d_y_ ? ypow[ord[d_]] : 1.0);
            double prod = base;
            for (int i = 0; i < d_; ++i) prod *= G[i][(v[i] - 1) * (S + 1) + ord[i]];
            out.f1 += prod;
            if (with_gradient) {
              for (int gi = 0; gi < d_; ++gi) {
                double pg = base;
                for (int i = 0; i < d_; ++i)
                  pg *= (i == gi ? G1[i] : G[i])[(v[i] - 1) * (S + 1) + ord[i]];
                out.f2[gi] += pg;
              }
            }
          }
        }
        int i = 0;
        for (; i < d_; ++i) {
          if (++v[i] <= N) break;
          v[i] = 1;
        }
        if (i == d_) break;
      }
    }
    return out;
  }

  double f1(const Vec& x, const Vec& y, double t) const { return evaluate(x, y, t, false).f1; }
  Vec f2(const Vec& x, const Vec& y, double t) const { return evaluate(x, y, t, true).f2; }

  /// One CSV row per coefficient: v indices, w index, order, value.
  void write_csv(std::ostream& os) const {
    os << "cell";
    for (int i = 0; i < d_; ++i) os << ",v" << i;
    for (int j = 0; j < d_y_; ++j) os << ",w" << j;
    for (int a = 0; a < d_ + d_y_; ++a) os << ",order" << a;
    os << ",coefficient\n";
    const auto prec = os.precision(17);
    for (std::size_t c = 0; c < cell_count(); ++c) {
      const auto [v, w] = unpack(c);
      for (std::size_t o = 0; o < orders_.size(); ++o) {
        os << c;
        for (int vi : v) os << ',' << vi;
        for (int wj : w) os << ',' << wj;
        for (int a : orders_[o]) os << ',' << a;
        os << ',' << coef_[c * orders_.size() + o] << '\n';
      }
    }
    os.precision(prec);
  }

 private:
  DiffusedPolynomial(int d, int d_y, PolyApproxConfig cfg, KernelKind kind, double C2)
      : d_(d), d_y_(d_y), cfg_(cfg), kind_(kind), C2_(C2), orders_(multi_indices(d + d_y, cfg.s)) {}

  // Cells are ordered with v axes fastest, then w.
  std::size_t pack(const std::vector<int>& v, int w) const {
    std::size_t c = 0, stride = 1;
    for (int i = 0; i < d_; ++i) {
      c += static_cast<std::size_t>(v[i] - 1) * stride;
      stride *= cfg_.N;
    }
    if (d_y_) c += static_cast<std::size_t>(w) * stride;
    return c;
  }

  std::pair<std::vector<int>, std::vector<int>> unpack(std::size_t c) const {
    std::vector<int> v(d_), w(d_y_);
    for (int i = 0; i < d_; ++i) {
      v[i] = static_cast<int>(c % cfg_.N) + 1;
      c /= cfg_.N;
    }
    for (int j = 0; j < d_y_; ++j) {
      w[j] = static_cast<int>(c % (cfg_.N + 1));
      c /= cfg_.N + 1;
    }
    return {v, w};
  }

  int d_;
  int d_y_;
  PolyApproxConfig cfg_;
  KernelKind kind_;
  double C2_;
  std::vector<MultiIndex> orders_;
  std::vector<double> coef_;
};

// ---------------------------------------------------------------------------
// Score approximators

/// f3 = clamp(f2 / (sigma_t max(f1, eps_low)), +-(C5/sigma_t^2)(Cx sqrt(d log N) + 1)).
class ClippedScoreApproximator {
 public:
  ClippedScoreApproximator(DiffusedPolynomial poly, double eps_low, double C5)
      : poly_(std::move(poly)), eps_low_(eps_low), C5_(C5) {
    require(eps_low_ > 0.0 && eps_low_ < 1.0, "eps_low must lie in (0, 1)");
    require(C5_ > 0.0, "C5 must be positive");
  }

  double bound(double t) const {
    const double s2 = -std::expm1(-t);
    const auto& c = poly_.config();
    return C5_ / s2 * (c.Cx * std::sqrt(poly_.dim() * std::log(static_cast<double>(c.N))) + 1.0);
  }

  Vec operator()(const Vec& x, const Vec& y, double t) const {
    const auto val = poly_.evaluate(x, y, t);
    const double sigma = alpha_sigma(t).sigma;
    const double floor = std::max(val.f1, eps_low_);
    const double b = bound(t);
    Vec s = val.f2 / (sigma * floor);
    for (Eigen::Index i = 0; i < s.size(); ++i) s[i] = std::clamp(s[i], -b, b);
    return s;
  }

  const DiffusedPolynomial& polynomial() const { return poly_; }
  double eps_low() const { return eps_low_; }
  double C5() const { return C5_; }

 private:
  DiffusedPolynomial poly_;
  double eps_low_;
  double C5_;
};

/// -C2 x / (alpha^2 + C2 sigma^2) + (alpha_hat / sigma_hat) f2 / max(f1, C/2).
class FastScoreApproximator {
 public:
  FastScoreApproximator(DiffusedPolynomial poly, double C2, double C)
      : poly_(std::move(poly)), C2_(C2), C_(C) {
    require(C2_ > 0.0 && C_ > 0.0, "fast approximator needs C2 > 0 and C > 0");
    require(poly_.kernel() == KernelKind::fast_rate, "fast approximator needs the hat kernel");
  }

  Vec operator()(const Vec& x, const Vec& y, double t) const {
    const auto val = poly_.evaluate(x, y, t);
    const auto [alpha, sigma] = alpha_sigma(t);
    const auto [ah, sh] = hat_schedule(t, C2_);
    const double q = alpha * alpha + C2_ * sigma * sigma;
    return -C2_ * x / q + (ah / sh) * val.f2 / std::max(val.f1, 0.5 * C_);
  }

  const DiffusedPolynomial& polynomial() const { return poly_; }

 private:
  DiffusedPolynomial poly_;
  double C2_;
  double C_;
};

namespace detail {

inline std::vector<Vec> cube_points(int d, double r, int res) { return cube_grid(d, -r, r, res); }

}  // namespace detail

/// 2 * sup |f1 - p_t| over a grid of the evaluation cube, y grid and times.
inline double calibrate_eps_low(const DiffusedPolynomial& poly, const ConditionalDensitySpec& spec,
                                const std::vector<double>& ts, int res = 41) {
  const double r = poly.config().cube_radius();
  const auto xs = detail::cube_points(poly.dim(), r, poly.dim() == 1 ? res : std::min(res, 21));
  const auto ys = detail::cube_grid(poly.guidance_dim(), 0.0, 1.0, 9);
  double worst = 0.0;
  for (double t : ts)
    for (const auto& y : ys)
      for (const auto& x : xs)
        worst = std::max(worst, std::abs(poly.f1(x, y, t) - spec.diffused_density(x, y, t)));
  return 2.0 * worst;
}

/// Builds f3 for a density spec, calibrating eps_low and C5 when the config
/// leaves them unset. eps_low is capped just below 1.
inline ClippedScoreApproximator make_score_approximator(const ConditionalDensitySpec& spec,
                                                        PolyApproxConfig cfg,
                                                        const std::vector<double>& calibration_ts) {
  require(!calibration_ts.empty(), "make_score_approximator: need calibration times");
  auto source = [&spec](const Vec& x, const Vec& y) {
    return std::exp(spec.log_diffused_unchecked(x, y, 0.0));
  };
  auto poly = DiffusedPolynomial::build(source, spec.dim(), spec.guidance_dim(), cfg);
  if (cfg.eps_low <= 0.0)
    cfg.eps_low = std::min(0.999, std::max(calibrate_eps_low(poly, spec, calibration_ts), 1e-12));
  if (cfg.C5 <= 0.0)
    cfg.C5 = 1.5 * fit_score_envelope(spec, calibration_ts, cfg.cube_radius(), 41);
  return {std::move(poly), cfg.eps_low, cfg.C5};
}

inline FastScoreApproximator make_fast_score_approximator(const FastRateDensitySpec& spec,
                                                          const PolyApproxConfig& cfg) {
  auto source = [&spec](const Vec& x, const Vec& y) { return spec.f(x, y); };
  auto poly = DiffusedPolynomial::build(source, spec.base.dim(), spec.base.guidance_dim(), cfg,
                                        KernelKind::fast_rate, spec.C2);
  return {std::move(poly), spec.C2, spec.C};
}

}  // namespace cdiff
