#pragma once

#include "clpoison/poison.hpp"
#include "clpoison/rng.hpp"

#include <cmath>
#include <string>

namespace testing {

// Randomized PGD/ball cases on a dyadic grid (multiples of 2^-10), where every
// sum, difference and clamp is exact in double precision, so the assertions
// compare with ==. Returns the number of failed cases; the first failure is
// described in `first_failure`.
inline int check_pgd_properties(int cases, std::uint64_t seed, std::string& first_failure) {
  using namespace clpoison;
  constexpr double q = 1.0 / 1024.0;
  Rng rng(seed);
  int failures = 0;
  auto fail = [&](int c, const std::string& what) {
    if (failures++ == 0) first_failure = "case " + std::to_string(c) + ": " + what;
  };
  auto grid = [&](int lo, int hi) { return q * static_cast<double>(lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)))); };
  for (int c = 0; c < cases; ++c) {
    const int n = 1 + static_cast<int>(rng.below(12));
    PgdConfig cfg;
    cfg.epsilon = q * static_cast<double>(1 + rng.below(64));
    cfg.alpha = q * static_cast<double>(1 + rng.below(static_cast<std::uint64_t>(cfg.epsilon / q)));
    cfg.direction = rng.bernoulli(0.5) ? Direction::Maximize : Direction::Minimize;
    Matrix anchor(1, n), z(1, n), g(1, n);
    for (int i = 0; i < n; ++i) {
      anchor(0, i) = grid(0, 1024);
      z(0, i) = grid(-200, 1224);
      const double r = rng.uniform();
      g(0, i) = r < 0.1 ? 0.0 : (r < 0.55 ? -1.0 : 1.0) * std::exp(rng.normal(0.0, 3.0));
    }

    const Matrix p = project_ball(z, anchor, cfg.epsilon);
    if (!(project_ball(p, anchor, cfg.epsilon) == p)) fail(c, "projection is not idempotent");
    if (!(((p - anchor).cwiseAbs().array() <= cfg.epsilon).all())) fail(c, "projection leaves the epsilon ball");
    if (!((p.array() >= 0.0).all() && (p.array() <= 1.0).all())) fail(c, "projection leaves [0, 1]");
    // Points already inside the feasible set are fixed.
    const Matrix inside = anchor.array().max(0.0).min(1.0).matrix();
    if (!(project_ball(inside, anchor, cfg.epsilon) == inside)) fail(c, "projection moves a feasible point");

    // Start the step from a feasible point.
    const Matrix x = p;
    const Matrix s = pgd_step(x, g, cfg, anchor);
    if (!(((s - anchor).cwiseAbs().array() <= cfg.epsilon).all())) fail(c, "step leaves the epsilon ball");
    if (!((s.array() >= 0.0).all() && (s.array() <= 1.0).all())) fail(c, "step leaves [0, 1]");
    const double dir = cfg.direction == Direction::Maximize ? 1.0 : -1.0;
    for (int i = 0; i < n; ++i) {
      const double sign = (g(0, i) > 0.0) - (g(0, i) < 0.0);
      const double lo = std::max(0.0, anchor(0, i) - cfg.epsilon), hi = std::min(1.0, anchor(0, i) + cfg.epsilon);
      const double raw = x(0, i) + dir * cfg.alpha * sign;
      const double d = s(0, i) - x(0, i);
      if (sign == 0.0) {
        if (d != 0.0) fail(c, "zero gradient moved a pixel");
      } else if (raw >= lo && raw <= hi) {
        // Unclipped coordinates move by exactly alpha in the signed direction.
        if (d != dir * cfg.alpha * sign) fail(c, "unclipped step is not exactly +-alpha");
      } else if (s(0, i) != (raw < lo ? lo : hi)) {
        fail(c, "clipped step does not land on the boundary");
      }
      // Quantization: the step never moves a pixel by more than alpha.
      if (std::abs(d) > cfg.alpha) fail(c, "step larger than alpha");
    }
  }
  return failures;
}

}  // namespace testing
