#pragma once

// Fixed Gauss-Legendre rules on an interval, backed by Boost.Math's tables.

#include <boost/math/quadrature/gauss.hpp>

#include <cstddef>
#include <vector>

namespace cdiff {

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// N-point Gauss-Legendre rule mapped onto [a, b].
template <unsigned N>
QuadratureRule gauss_legendre(double a, double b) {
  using Rule = boost::math::quadrature::gauss<double, N>;
  const auto& x = Rule::abscissa();
  const auto& w = Rule::weights();
  const double mid = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  QuadratureRule out;
  out.nodes.reserve(N);
  out.weights.reserve(N);
  // Boost stores the nonnegative half; an odd rule has the origin first.
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] == 0.0) {
      out.nodes.push_back(mid);
      out.weights.push_back(half * w[i]);
      continue;
    }
    out.nodes.push_back(mid - half * x[i]);
    out.weights.push_back(half * w[i]);
    out.nodes.push_back(mid + half * x[i]);
    out.weights.push_back(half * w[i]);
  }
  return out;
}

/// Composite rule: `panels` equal panels of an N-point rule each.
template <unsigned N>
QuadratureRule composite_gauss_legendre(double a, double b, std::size_t panels) {
  QuadratureRule out;
  const double h = (b - a) / static_cast<double>(panels);
  for (std::size_t p = 0; p < panels; ++p) {
    auto r = gauss_legendre<N>(a + h * p, a + h * (p + 1));
    out.nodes.insert(out.nodes.end(), r.nodes.begin(), r.nodes.end());
    out.weights.insert(out.weights.end(), r.weights.begin(), r.weights.end());
  }
  return out;
}

}  // namespace cdiff
