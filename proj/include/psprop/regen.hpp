#pragma once

// Regeneration of plausible propensity vectors: parametric coefficient
// sampling around a GLM fit, two-fold cross-fitting, and subsampling. Run m
// always draws from the stream (master_seed, m), so results do not depend on
// the order or thread in which runs execute.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "psprop/dataset.hpp"
#include "psprop/error.hpp"
#include "psprop/glm.hpp"
#include "psprop/learners.hpp"
#include "psprop/numkit.hpp"
#include "psprop/parallel.hpp"

namespace psprop {

enum class RegenMode { Parametric, Crossfit, Subsample };

inline std::string to_string(RegenMode mode) {
  switch (mode) {
    case RegenMode::Parametric: return "parametric";
    case RegenMode::Crossfit: return "crossfit";
    case RegenMode::Subsample: return "subsample";
  }
  return "unknown";
}

inline RegenMode regen_mode_from_string(const std::string& name) {
  if (name == "parametric") return RegenMode::Parametric;
  if (name == "crossfit") return RegenMode::Crossfit;
  if (name == "subsample") return RegenMode::Subsample;
  throw Error(ErrorCode::ConfigError, "unknown regeneration mode '" + name + "'");
}

inline constexpr int kMaxPartitionAttempts = 100;

struct RegenConfig {
  RegenMode mode = RegenMode::Crossfit;
  std::size_t m_runs = 100;
  std::optional<double> alpha_prime;
  LearnerSpec learner_a = LearnerSpec::glm();
  LearnerSpec learner_b = LearnerSpec::glm();
  double subsample_rate = 0.5;
  double clip_delta = kDefaultClipDelta;
  std::uint64_t master_seed = 0;
  std::size_t threads = 1;

  void validate() const {
    if (m_runs < 1) throw Error(ErrorCode::ConfigError, "m_runs must be at least 1");
    if (alpha_prime && mode != RegenMode::Parametric) {
      throw Error(ErrorCode::ConfigError, "alpha_prime only applies to parametric regeneration");
    }
    if (alpha_prime && !(*alpha_prime > 0.0 && *alpha_prime < 1.0)) {
      throw Error(ErrorCode::ConfigError, "alpha_prime must lie in (0, 1)");
    }
    if (!(clip_delta > 0.0 && clip_delta < 0.5)) throw Error(ErrorCode::ConfigError, "clip_delta must lie in (0, 0.5)");
    if (mode == RegenMode::Subsample && !(subsample_rate > 0.0 && subsample_rate <= 1.0)) {
      throw Error(ErrorCode::ConfigError, "subsample_rate must lie in (0, 1]");
    }
  }
};

struct RegenOutput {
  RegenMode mode = RegenMode::Crossfit;
  std::vector<PropensityVector> propensity_vectors;
  std::vector<Vector> coefficient_draws;  // parametric mode only
  std::vector<BitVector> partitions;      // crossfit: S_i = 1 puts unit i in fold A; subsample: inclusion
  std::optional<GlmFit> source_fit;       // parametric mode only
  double clip_delta = kDefaultClipDelta;

  std::size_t runs() const noexcept { return propensity_vectors.size(); }
};

namespace detail {

inline PropensityVector clipped(std::vector<double> p, double delta) {
  for (double& v : p) v = std::clamp(v, delta, 1.0 - delta);
  return PropensityVector(std::move(p));
}

inline Matrix select_rows(const Matrix& x, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = x.row(static_cast<Eigen::Index>(rows[k]));
  return out;
}

inline BitVector select_bits(std::span<const std::uint8_t> z, const std::vector<std::size_t>& rows) {
  BitVector out(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) out[k] = z[rows[k]];
  return out;
}

inline bool usable_fold(std::span<const std::uint8_t> z, const std::vector<std::size_t>& rows) {
  if (rows.size() < 2) return false;
  std::size_t ones = 0;
  for (auto r : rows) ones += z[r];
  return ones > 0 && ones < rows.size();
}

}  // namespace detail

/// beta_m = beta_hat + L g_m / sqrt(N) with L L' = omega_hat and g_m standard
/// normal from stream (master_seed, m); propensities link(beta_m' x), clipped.
inline RegenOutput regen_parametric(const GlmFit& fit, const Matrix& x, const RegenConfig& cfg) {
  cfg.validate();
  if (cfg.mode != RegenMode::Parametric) throw Error(ErrorCode::ConfigError, "config mode is not parametric");
  if (x.cols() != fit.beta_hat.size()) throw Error(ErrorCode::DimensionMismatch, "design does not match the fit");
  const Matrix chol = cholesky_factor(fit.omega_hat);
  const double root_n = std::sqrt(static_cast<double>(fit.n_units));
  const Eigen::Index p = fit.beta_hat.size();

  RegenOutput out;
  out.mode = RegenMode::Parametric;
  out.clip_delta = cfg.clip_delta;
  out.source_fit = fit;
  out.coefficient_draws.resize(cfg.m_runs);
  out.propensity_vectors.resize(cfg.m_runs);
  parallel_for(cfg.m_runs, cfg.threads, [&](std::size_t m) {
    RngStream rng(cfg.master_seed, m);
    Vector g(p);
    for (Eigen::Index k = 0; k < p; ++k) g(k) = rng.standard_normal();
    Vector beta = fit.beta_hat + chol * g / root_n;
    const Vector eta = x * beta;
    std::vector<double> prob(static_cast<std::size_t>(eta.size()));
    for (Eigen::Index i = 0; i < eta.size(); ++i) prob[i] = link_inverse(fit.link, eta(i));
    out.propensity_vectors[m] = detail::clipped(std::move(prob), cfg.clip_delta);
    out.coefficient_draws[m] = std::move(beta);
  });
  return out;
}

/// Threshold 1.01 * z_{1 - alpha'/(2p)} used to screen coefficient draws.
inline double restricted_threshold(double alpha_prime, std::size_t p) {
  return 1.01 * std_normal_quantile(1.0 - alpha_prime / (2.0 * static_cast<double>(p)));
}

/// Indices m whose draw satisfies
/// max_k |beta_mk - beta_hat_k| / sqrt(omega_kk / N) <= 1.01 z_{1 - alpha'/(2p)}.
inline std::vector<std::size_t> restricted_indices(const std::vector<Vector>& draws, const GlmFit& fit,
                                                   double alpha_prime) {
  if (!(alpha_prime > 0.0 && alpha_prime < 1.0)) throw Error(ErrorCode::OutOfRange, "alpha_prime must lie in (0, 1)");
  const auto p = static_cast<std::size_t>(fit.beta_hat.size());
  const double threshold = restricted_threshold(alpha_prime, p);
  const double n = static_cast<double>(fit.n_units);
  std::vector<std::size_t> keep;
  for (std::size_t m = 0; m < draws.size(); ++m) {
    if (static_cast<std::size_t>(draws[m].size()) != p) {
      throw Error(ErrorCode::DimensionMismatch, "coefficient draw has the wrong length");
    }
    double stat = 0.0;
    for (std::size_t k = 0; k < p; ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      const double dev = std::abs(draws[m](kk) - fit.beta_hat(kk));
      const double se = std::sqrt(std::max(fit.omega_hat(kk, kk), 0.0) / n);
      const double z = se > 0.0 ? dev / se : (dev > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
      stat = std::max(stat, z);
    }
    if (stat <= threshold) keep.push_back(m);
  }
  return keep;
}

/// Two-fold cross-fitting: S_i ~ Bernoulli(1/2) splits the units, learner A
/// trained on fold A predicts fold B and learner B trained on fold B predicts
/// fold A. Folds with fewer than two units or a single class are redrawn.
inline RegenOutput regen_crossfit(const Dataset& ds, const RegenConfig& cfg) {
  cfg.validate();
  if (cfg.mode != RegenMode::Crossfit) throw Error(ErrorCode::ConfigError, "config mode is not crossfit");
  ds.validate();
  const std::size_t n = ds.size();
  if (n < 4) throw Error(ErrorCode::PartitionFailure, "cross-fitting needs at least four units");

  RegenOutput out;
  out.mode = RegenMode::Crossfit;
  out.clip_delta = cfg.clip_delta;
  out.propensity_vectors.resize(cfg.m_runs);
  out.partitions.resize(cfg.m_runs);
  parallel_for(cfg.m_runs, cfg.threads, [&](std::size_t m) {
    const RngStream run(cfg.master_seed, m);
    for (int attempt = 0; attempt < kMaxPartitionAttempts; ++attempt) {
      RngStream rng = run.child(static_cast<std::uint64_t>(attempt));
      BitVector s(n);
      std::vector<std::size_t> fold_a, fold_b;
      for (std::size_t i = 0; i < n; ++i) {
        s[i] = static_cast<std::uint8_t>(rng.bernoulli(0.5));
        (s[i] ? fold_a : fold_b).push_back(i);
      }
      if (!detail::usable_fold(ds.z, fold_a) || !detail::usable_fold(ds.z, fold_b)) continue;

      std::vector<double> prob(n);
      RngStream learner_rng = run.child(1'000'000);
      const auto model_a = train(cfg.learner_a, detail::select_rows(ds.x, fold_a), detail::select_bits(ds.z, fold_a),
                                 learner_rng);
      const auto model_b = train(cfg.learner_b, detail::select_rows(ds.x, fold_b), detail::select_bits(ds.z, fold_b),
                                 learner_rng);
      const auto pred_b = model_a.predict(detail::select_rows(ds.x, fold_b));
      const auto pred_a = model_b.predict(detail::select_rows(ds.x, fold_a));
      for (std::size_t k = 0; k < fold_b.size(); ++k) prob[fold_b[k]] = pred_b[k];
      for (std::size_t k = 0; k < fold_a.size(); ++k) prob[fold_a[k]] = pred_a[k];
      out.propensity_vectors[m] = detail::clipped(std::move(prob), cfg.clip_delta);
      out.partitions[m] = std::move(s);
      return;
    }
    throw Error(ErrorCode::PartitionFailure,
                "run " + std::to_string(m) + ": no usable partition in " + std::to_string(kMaxPartitionAttempts) +
                    " draws");
  });
  return out;
}

/// Repeated subsampling: units enter the training set with probability
/// subsample_rate; the learner trained there predicts all N units.
inline RegenOutput regen_subsample(const Dataset& ds, const RegenConfig& cfg) {
  cfg.validate();
  if (cfg.mode != RegenMode::Subsample) throw Error(ErrorCode::ConfigError, "config mode is not subsample");
  ds.validate();
  const std::size_t n = ds.size();

  RegenOutput out;
  out.mode = RegenMode::Subsample;
  out.clip_delta = cfg.clip_delta;
  out.propensity_vectors.resize(cfg.m_runs);
  out.partitions.resize(cfg.m_runs);
  parallel_for(cfg.m_runs, cfg.threads, [&](std::size_t m) {
    const RngStream run(cfg.master_seed, m);
    for (int attempt = 0; attempt < kMaxPartitionAttempts; ++attempt) {
      RngStream rng = run.child(static_cast<std::uint64_t>(attempt));
      BitVector s(n);
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < n; ++i) {
        s[i] = static_cast<std::uint8_t>(rng.bernoulli(cfg.subsample_rate));
        if (s[i]) rows.push_back(i);
      }
      if (!detail::usable_fold(ds.z, rows)) continue;
      RngStream learner_rng = run.child(1'000'000);
      const auto model = train(cfg.learner_a, detail::select_rows(ds.x, rows), detail::select_bits(ds.z, rows),
                               learner_rng);
      out.propensity_vectors[m] = detail::clipped(model.predict(ds.x), cfg.clip_delta);
      out.partitions[m] = std::move(s);
      return;
    }
    throw Error(ErrorCode::PartitionFailure,
                "run " + std::to_string(m) + ": no usable subsample in " + std::to_string(kMaxPartitionAttempts) +
                    " draws");
  });
  return out;
}

/// Dispatches on cfg.mode. Parametric mode fits `link` on the design matrix
/// ds.x as given (include an intercept column there if one is wanted).
inline RegenOutput regenerate(const Dataset& ds, const RegenConfig& cfg, Link link = Link::Logistic) {
  switch (cfg.mode) {
    case RegenMode::Parametric: return regen_parametric(fit_glm(ds.x, ds.z, link), ds.x, cfg);
    case RegenMode::Crossfit: return regen_crossfit(ds, cfg);
    case RegenMode::Subsample: return regen_subsample(ds, cfg);
  }
  throw Error(ErrorCode::ConfigError, "unknown regeneration mode");
}

}  // namespace psprop
