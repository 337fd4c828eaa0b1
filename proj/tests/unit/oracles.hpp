#pragma once

// Independent reference computations for tests. Nothing here calls into the
// implementation paths under test.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "cat/geometry/types.hpp"

namespace cat::test {

// Point-in-oriented-box by explicit inverse rotation.
inline bool mc_inside(const geom::Box3D& b, double x, double y, double z) {
  const double dx = x - b.cx, dy = y - b.cy;
  const double c = std::cos(-b.yaw), s = std::sin(-b.yaw);
  const double lx = c * dx - s * dy;
  const double ly = s * dx + c * dy;
  return std::abs(lx) <= 0.5 * b.width && std::abs(ly) <= 0.5 * b.length &&
         std::abs(z - b.cz) <= 0.5 * b.height;
}

// Monte-Carlo IoU: uniform samples inside `a`, fraction landing inside `b`.
inline double monte_carlo_iou(const geom::Box3D& a, const geom::Box3D& b, std::size_t samples,
                              std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-0.5, 0.5);
  const double c = std::cos(a.yaw), s = std::sin(a.yaw);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < samples; ++i) {
    const double lx = unit(rng) * a.width;
    const double ly = unit(rng) * a.length;
    const double lz = unit(rng) * a.height;
    const double x = a.cx + c * lx - s * ly;
    const double y = a.cy + s * lx + c * ly;
    if (mc_inside(b, x, y, a.cz + lz)) ++hits;
  }
  const double va = a.width * a.length * a.height;
  const double vb = b.width * b.length * b.height;
  const double inter = va * static_cast<double>(hits) / static_cast<double>(samples);
  return inter / (va + vb - inter);
}

// Central finite difference of f along coordinate i of x.
inline double central_difference(const std::function<double(const std::vector<double>&)>& f,
                                 std::vector<double> x, std::size_t i, double h) {
  const double x0 = x[i];
  x[i] = x0 + h;
  const double fp = f(x);
  x[i] = x0 - h;
  const double fm = f(x);
  return (fp - fm) / (2.0 * h);
}

inline double relative_error(double analytic, double numeric, double floor = 1e-10) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

}  // namespace cat::test
