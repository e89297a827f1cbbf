// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "arlab/core/error.hpp"

namespace arlab {

enum class ScheduleKind { cosine };

inline ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "cosine") return ScheduleKind::cosine;
  throw ContractError("unknown schedule kind " + s);
}
inline const char* to_string(ScheduleKind) { return "cosine"; }

/// Variance-preserving noise schedule over integer timesteps 0..T.
/// alpha[t]^2 + sigma[t]^2 == 1, alpha[0] == 1, alpha non-increasing.
struct DiffusionSchedule {
  int steps = 0;  // T
  ScheduleKind kind = ScheduleKind::cosine;
  double shift = 1.0;  // m in the rational time remap; 1 means no shift
  std::vector<double> alpha_bar;
  std::vector<double> alpha;
  std::vector<double> sigma;
};

namespace detail {
inline double cosine_alpha_bar(double u) {
  constexpr double s = 0.008;
  const auto f = [](double v) {
    const double c = std::cos((v + s) / (1.0 + s) * std::numbers::pi / 2.0);
    return c * c;
  };
  return f(u) / f(0.0);
}

inline void build_schedule(DiffusionSchedule& sch) {
  const int T = sch.steps;
  const double m = sch.shift;
  sch.alpha_bar.assign(static_cast<std::size_t>(T) + 1, 1.0);
  double prev_raw = 1.0;
  for (int t = 1; t <= T; ++t) {
    const double u = static_cast<double>(t) / T;
    const double us = m * u / (1.0 + (m - 1.0) * u);
    const double raw = cosine_alpha_bar(us);
    // per-step beta clipped at 0.999 keeps the terminal step invertible
    const double beta = std::min(1.0 - raw / prev_raw, 0.999);
    sch.alpha_bar[t] = sch.alpha_bar[t - 1] * (1.0 - beta);
    prev_raw = raw;
  }
  sch.alpha.resize(sch.alpha_bar.size());
  sch.sigma.resize(sch.alpha_bar.size());
  for (std::size_t t = 0; t < sch.alpha_bar.size(); ++t) {
    sch.alpha[t] = std::sqrt(sch.alpha_bar[t]);
    sch.sigma[t] = std::sqrt(1.0 - sch.alpha_bar[t]);
  }
}
}  // namespace detail

inline DiffusionSchedule make_schedule(int T, ScheduleKind kind = ScheduleKind::cosine) {
  ARLAB_REQUIRE(T >= 2, "schedule needs T >= 2");
  DiffusionSchedule s;
  s.steps = T;
  s.kind = kind;
  detail::build_schedule(s);
  return s;
}

inline DiffusionSchedule make_schedule(int T, const std::string& kind) {
  return make_schedule(T, schedule_kind_from_string(kind));
}

/// Rational time remap u' = m u / (1 + (m - 1) u) with m = sqrt(d / d_base).
inline double shift_time(double u, double m) { return m * u / (1.0 + (m - 1.0) * u); }

/// Dimension-dependent timestep shift; d == d_base returns the schedule unchanged.
inline DiffusionSchedule shift_timesteps(const DiffusionSchedule& base, int d, int d_base) {
  ARLAB_REQUIRE(d >= 1 && d_base >= 1, "shift needs d, d_base >= 1");
  DiffusionSchedule s = base;
  s.shift = std::sqrt(static_cast<double>(d) / d_base);
  if (s.shift == base.shift) return s;
  detail::build_schedule(s);
  return s;
}

/// x_t = alpha_t x0 + sigma_t eps for one token.
struct DiffusionDraw {
  std::vector<double> x0;
  int t = 0;
  std::vector<double> eps;
  std::vector<double> xt;
};

inline DiffusionDraw forward_noise(std::span<const double> x0, int t, std::span<const double> eps,
                                   const DiffusionSchedule& sch) {
  ARLAB_REQUIRE(t >= 1 && t <= sch.steps, "timestep out of range");
  ARLAB_REQUIRE(x0.size() == eps.size(), "x0 and eps must have the same length");
  DiffusionDraw d{std::vector<double>(x0.begin(), x0.end()), t, std::vector<double>(eps.begin(), eps.end()), {}};
  d.xt.resize(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) d.xt[i] = sch.alpha[t] * x0[i] + sch.sigma[t] * eps[i];
  return d;
}

/// Uniformly strided timesteps 1 = tau_1 < ... < tau_k <= T (leading spacing).
inline std::vector<int> strided_timesteps(const DiffusionSchedule& sch, int k) {
  ARLAB_REQUIRE(k >= 1 && k <= sch.steps, "sampling steps must be in [1, T]");
  std::vector<int> out(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j)
    out[j] = static_cast<int>(static_cast<long long>(j) * sch.steps / k) + 1;
  return out;
}

}  // namespace arlab
