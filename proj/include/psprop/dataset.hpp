#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "psprop/error.hpp"
#include "psprop/numkit.hpp"

namespace psprop {

using BitVector = std::vector<std::uint8_t>;

/// Per-unit probabilities of the design variable. Entries are finite and in
/// [0, 1]; estimators state their own stricter requirements.
class PropensityVector {
 public:
  PropensityVector() = default;
  explicit PropensityVector(std::vector<double> p) : p_(std::move(p)) {
    for (std::size_t i = 0; i < p_.size(); ++i) {
      if (!(p_[i] >= 0.0 && p_[i] <= 1.0)) {
        throw Error(ErrorCode::OutOfRange,
                    "propensity " + std::to_string(p_[i]) + " at unit " + std::to_string(i));
      }
    }
  }

  std::size_t size() const noexcept { return p_.size(); }
  double operator[](std::size_t i) const { return p_[i]; }
  std::span<const double> values() const noexcept { return p_; }
  const std::vector<double>& vector() const noexcept { return p_; }

  auto begin() const noexcept { return p_.begin(); }
  auto end() const noexcept { return p_.end(); }

  friend bool operator==(const PropensityVector&, const PropensityVector&) = default;

 private:
  std::vector<double> p_;
};

/// The finite population slice visible to inference.
///
/// `z` is the design variable (treatment, inclusion or non-missingness).
/// `y` holds outcomes; entries are meaningful only where `observed` is set, so
/// an unobserved outcome never enters arithmetic. `treat` carries treatment
/// bits for randomized experiments with missing outcomes, and `baseline` the
/// pre-period outcome of a two-period panel.
struct Dataset {
  BitVector z;
  Matrix x;
  std::vector<double> y;
  BitVector observed;
  std::optional<BitVector> treat;
  std::optional<std::vector<double>> baseline;

  std::size_t size() const noexcept { return z.size(); }

  bool is_observed(std::size_t i) const { return observed.empty() || observed[i] != 0; }

  /// Throws DimensionMismatch when any column disagrees with z in length.
  void validate() const {
    const std::size_t n = z.size();
    auto check = [n](std::size_t m, const char* what) {
      if (m != n) {
        throw Error(ErrorCode::DimensionMismatch,
                    std::string(what) + " has length " + std::to_string(m) + ", expected " +
                        std::to_string(n));
      }
    };
    check(static_cast<std::size_t>(x.rows()), "covariate matrix");
    check(y.size(), "outcome vector");
    if (!observed.empty()) check(observed.size(), "observed flags");
    if (treat) check(treat->size(), "treatment bits");
    if (baseline) check(baseline->size(), "baseline outcomes");
  }

  /// Dataset with every outcome observed.
  static Dataset complete(BitVector z, Matrix x, std::vector<double> y) {
    Dataset ds;
    ds.observed.assign(z.size(), 1);
    ds.z = std::move(z);
    ds.x = std::move(x);
    ds.y = std::move(y);
    ds.validate();
    return ds;
  }
};

inline void check_length(const Dataset& ds, const PropensityVector& p) {
  if (p.size() != ds.size()) {
    throw Error(ErrorCode::DimensionMismatch, "propensity vector has length " + std::to_string(p.size()) +
                                                  ", dataset has " + std::to_string(ds.size()) + " units");
  }
}

}  // namespace psprop
