#pragma once

// Fisher randomization tests of the sharp null under independent Bernoulli
// designs, and their propagation as the maximum p-value over regeneration runs.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "psprop/dataset.hpp"
#include "psprop/error.hpp"
#include "psprop/interval.hpp"
#include "psprop/numkit.hpp"
#include "psprop/regen.hpp"

namespace psprop {

class TestStatistic {
 public:
  using Fn = std::function<double(std::span<const std::uint8_t>, std::span<const double>)>;

  TestStatistic(std::string label, Fn fn) : label_(std::move(label)), fn_(std::move(fn)) {}

  /// |mean(y | z = 1) - mean(y | z = 0)|, defined as 0 when a group is empty.
  static TestStatistic abs_difference_in_means() {
    return {"abs_difference_in_means", [](std::span<const std::uint8_t> z, std::span<const double> y) {
              double s1 = 0.0, s0 = 0.0;
              std::size_t n1 = 0, n0 = 0;
              for (std::size_t i = 0; i < z.size(); ++i) {
                if (z[i]) {
                  s1 += y[i];
                  ++n1;
                } else {
                  s0 += y[i];
                  ++n0;
                }
              }
              if (n1 == 0 || n0 == 0) return 0.0;
              return std::abs(s1 / static_cast<double>(n1) - s0 / static_cast<double>(n0));
            }};
  }

  static TestStatistic treated_sum() {
    return {"treated_sum", [](std::span<const std::uint8_t> z, std::span<const double> y) {
              double s = 0.0;
              for (std::size_t i = 0; i < z.size(); ++i) {
                if (z[i]) s += y[i];
              }
              return s;
            }};
  }

  static TestStatistic custom(std::string label, Fn fn) { return {std::move(label), std::move(fn)}; }

  static TestStatistic from_name(const std::string& name) {
    if (name == "abs_difference_in_means") return abs_difference_in_means();
    if (name == "treated_sum") return treated_sum();
    throw Error(ErrorCode::ConfigError, "unknown test statistic '" + name + "'");
  }

  double operator()(std::span<const std::uint8_t> z, std::span<const double> y) const { return fn_(z, y); }
  const std::string& label() const noexcept { return label_; }

 private:
  std::string label_;
  Fn fn_;
};

inline constexpr std::size_t kMaxExactUnits = 20;

namespace detail {

// T >= t up to relative rounding, so recomputing the observed assignment
// always counts.
inline bool at_least(double value, double observed) {
  return value >= observed - 1e-10 * std::max(1.0, std::abs(observed));
}

inline const std::vector<double>& fully_observed(const Dataset& ds) {
  ds.validate();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!ds.is_observed(i)) {
      throw Error(ErrorCode::MissingOutcome, "randomization tests need every outcome; unit " + std::to_string(i));
    }
  }
  return ds.y;
}

}  // namespace detail

/// Monte Carlo p-value (1 + #{b : T(z_b, y) >= t}) / (B + 1) with z_b drawn
/// componentwise Bernoulli(p_i) and y held fixed under the sharp null.
inline double fisher_p_value(const Dataset& ds, const PropensityVector& p, const TestStatistic& stat,
                             std::size_t draws, RngStream stream) {
  if (draws < 1) throw Error(ErrorCode::InvalidArgument, "need at least one Monte Carlo draw");
  const auto& y = detail::fully_observed(ds);
  check_length(ds, p);
  const double t = stat(ds.z, y);
  const std::size_t n = ds.size();
  BitVector zb(n);
  std::size_t count = 0;
  for (std::size_t b = 0; b < draws; ++b) {
    for (std::size_t i = 0; i < n; ++i) zb[i] = stream.uniform01() < p[i] ? 1 : 0;
    if (detail::at_least(stat(zb, y), t)) ++count;
  }
  return (1.0 + static_cast<double>(count)) / (static_cast<double>(draws) + 1.0);
}

/// Exact p-value: sum over all 2^N assignments of prod p^z (1-p)^(1-z) 1{T >= t}.
inline double fisher_p_exact(const Dataset& ds, const PropensityVector& p, const TestStatistic& stat) {
  const auto& y = detail::fully_observed(ds);
  check_length(ds, p);
  const std::size_t n = ds.size();
  if (n > kMaxExactUnits) {
    throw Error(ErrorCode::TooLarge, std::to_string(n) + " units exceed the exact-enumeration limit of " +
                                         std::to_string(kMaxExactUnits));
  }
  const double t = stat(ds.z, y);
  BitVector zb(n);
  double total = 0.0;
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
    double w = 1.0;
    for (std::size_t i = 0; i < n && w > 0.0; ++i) {
      zb[i] = static_cast<std::uint8_t>((mask >> i) & 1U);
      w *= zb[i] ? p[i] : 1.0 - p[i];
    }
    if (w == 0.0) continue;
    if (detail::at_least(stat(zb, y), t)) total += w;
  }
  return std::min(total, 1.0);
}

struct FisherResult {
  double p_value = 1.0;
  std::vector<double> per_run_p_values;
  double statistic_observed = 0.0;
};

/// p_F = max over runs of the per-run p-values. Every run reuses the same
/// draw stream, so runs with equal propensities get equal p-values.
inline FisherResult fisher_propagate(const Dataset& ds, const RegenOutput& regen, const TestStatistic& stat,
                                     std::size_t draws, const RngStream& stream, std::size_t threads = 1) {
  if (regen.runs() == 0) throw Error(ErrorCode::EmptyInput, "no regeneration runs");
  FisherResult out;
  out.statistic_observed = stat(ds.z, detail::fully_observed(ds));
  out.per_run_p_values.resize(regen.runs());
  parallel_for(regen.runs(), threads, [&](std::size_t m) {
    out.per_run_p_values[m] = fisher_p_value(ds, regen.propensity_vectors[m], stat, draws, stream);
  });
  out.p_value = *std::max_element(out.per_run_p_values.begin(), out.per_run_p_values.end());
  return out;
}

/// Same as fisher_propagate with exact per-run p-values.
inline FisherResult fisher_propagate_exact(const Dataset& ds, const RegenOutput& regen, const TestStatistic& stat) {
  if (regen.runs() == 0) throw Error(ErrorCode::EmptyInput, "no regeneration runs");
  FisherResult out;
  out.statistic_observed = stat(ds.z, detail::fully_observed(ds));
  for (const auto& p : regen.propensity_vectors) out.per_run_p_values.push_back(fisher_p_exact(ds, p, stat));
  out.p_value = *std::max_element(out.per_run_p_values.begin(), out.per_run_p_values.end());
  return out;
}

struct InversionPoint {
  double tau0 = 0.0;
  double p_value = 1.0;
  bool rejected = false;
};

/// Tests the constant-effect sharp nulls Y(1) = Y(0) + tau0 over a caller
/// grid: each null is tested as no effect on y - tau0 z.
inline std::vector<InversionPoint> fisher_invert(const Dataset& ds, const RegenOutput& regen,
                                                 const TestStatistic& stat, std::span<const double> grid,
                                                 double alpha, std::size_t draws, const RngStream& stream) {
  std::vector<InversionPoint> out;
  out.reserve(grid.size());
  for (double tau0 : grid) {
    Dataset shifted = ds;
    for (std::size_t i = 0; i < shifted.size(); ++i) {
      if (shifted.z[i]) shifted.y[i] -= tau0;
    }
    const auto res = fisher_propagate(shifted, regen, stat, draws, stream);
    out.push_back({tau0, res.p_value, res.p_value <= alpha});
  }
  return out;
}

}  // namespace psprop
