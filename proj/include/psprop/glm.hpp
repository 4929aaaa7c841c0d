#pragma once

// Maximum-likelihood fits of binary GLMs e(x) = link(beta' x) under a fixed
// design, with the averaged Fisher information used for coefficient
// regeneration.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "psprop/dataset.hpp"
#include "psprop/error.hpp"
#include "psprop/numkit.hpp"

namespace psprop {

enum class Link { Logistic, Probit, LinearProbability };

inline constexpr double kLinearProbabilityClamp = 1e-6;

inline std::string to_string(Link link) {
  switch (link) {
    case Link::Logistic: return "logistic";
    case Link::Probit: return "probit";
    case Link::LinearProbability: return "linear_probability";
  }
  return "unknown";
}

inline Link link_from_string(const std::string& name) {
  if (name == "logistic" || name == "logit") return Link::Logistic;
  if (name == "probit") return Link::Probit;
  if (name == "linear_probability" || name == "linear") return Link::LinearProbability;
  throw Error(ErrorCode::ConfigError, "unknown link '" + name + "'");
}

/// Probability for a linear predictor; linear-probability outputs are clamped
/// into (eps, 1 - eps).
inline double link_inverse(Link link, double eta) {
  switch (link) {
    case Link::Logistic: return sigmoid(eta);
    case Link::Probit: return normal_cdf(eta);
    case Link::LinearProbability:
      return std::clamp(eta, kLinearProbabilityClamp, 1.0 - kLinearProbabilityClamp);
  }
  return 0.5;
}

inline double link_derivative(Link link, double eta) {
  switch (link) {
    case Link::Logistic: {
      const double p = sigmoid(eta);
      return p * (1.0 - p);
    }
    case Link::Probit: return normal_pdf(eta);
    case Link::LinearProbability:
      return (eta > kLinearProbabilityClamp && eta < 1.0 - kLinearProbabilityClamp) ? 1.0 : 0.0;
  }
  return 0.0;
}

struct GlmFit {
  Vector beta_hat;
  Matrix omega_hat;  // inverse of the averaged information at beta_hat
  Link link = Link::Logistic;
  std::size_t n_units = 0;
  bool converged = false;
  int iterations = 0;
};

namespace detail {

inline void check_design(const Matrix& x, std::span<const std::uint8_t> z) {
  if (static_cast<std::size_t>(x.rows()) != z.size()) {
    throw Error(ErrorCode::DimensionMismatch, "design has " + std::to_string(x.rows()) +
                                                  " rows but " + std::to_string(z.size()) + " labels");
  }
}

// Probabilities clipped away from {0, 1} so the likelihood stays finite.
inline double safe_probability(Link link, double eta) {
  return std::clamp(link_inverse(link, eta), 1e-300, 1.0 - 1e-16);
}

}  // namespace detail

/// Averaged log-likelihood (1/N) sum z log p + (1 - z) log(1 - p).
inline double glm_log_likelihood(const Matrix& x, std::span<const std::uint8_t> z, const Vector& beta,
                                 Link link) {
  detail::check_design(x, z);
  const Vector eta = x * beta;
  double total = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const double p = detail::safe_probability(link, eta(i));
    total += z[i] ? std::log(p) : std::log1p(-p);
  }
  return total / static_cast<double>(x.rows());
}

/// Gradient of glm_log_likelihood in beta.
inline Vector glm_score(const Matrix& x, std::span<const std::uint8_t> z, const Vector& beta, Link link) {
  detail::check_design(x, z);
  const Vector eta = x * beta;
  Vector resid(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const double p = detail::safe_probability(link, eta(i));
    const double d = link_derivative(link, eta(i));
    resid(i) = (z[i] - p) * d / (p * (1.0 - p));
  }
  return x.transpose() * resid / static_cast<double>(x.rows());
}

/// (1/N) sum_i w(beta' x_i) x_i x_i' with w = link'^2 / (p (1 - p)).
inline Matrix fisher_information(const Matrix& x, const Vector& beta, Link link) {
  if (x.cols() != beta.size()) {
    throw Error(ErrorCode::DimensionMismatch, "coefficient length does not match design columns");
  }
  const Eigen::Index n = x.rows();
  if (n == 0) return Matrix::Zero(x.cols(), x.cols());
  const Vector eta = x * beta;
  Vector w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double p = detail::safe_probability(link, eta(i));
    const double d = link_derivative(link, eta(i));
    w(i) = d * d / (p * (1.0 - p));
  }
  Matrix info = x.transpose() * w.asDiagonal() * x / static_cast<double>(n);
  return 0.5 * (info + info.transpose());
}

namespace detail {

// A coefficient vector that strictly classifies every unit proves complete
// separation: the likelihood has no maximizer.
inline bool strictly_separates(const Matrix& x, std::span<const std::uint8_t> z, const Vector& beta,
                               Link link) {
  if (link == Link::LinearProbability) return false;
  const Vector eta = x * beta;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    if (z[i] ? !(eta(i) > 0.0) : !(eta(i) < 0.0)) return false;
  }
  return true;
}

inline Eigen::LLT<Matrix> factor_information(const Matrix& info) {
  Eigen::LLT<Matrix> llt(info);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::RankDeficient, "information matrix is singular");
  }
  const Matrix l = llt.matrixL();
  const double max_diag = info.diagonal().cwiseAbs().maxCoeff();
  const double min_pivot = l.diagonal().minCoeff();
  if (!(max_diag > 0.0) || min_pivot * min_pivot < 1e-13 * max_diag) {
    throw Error(ErrorCode::RankDeficient, "design matrix is not of full column rank");
  }
  return llt;
}

}  // namespace detail

struct GlmOptions {
  int max_iterations = 100;
  int max_halvings = 30;
  double score_tolerance = 1e-11;
  double step_tolerance = 1e-10;
  double separation_norm = 1e3;
};

/// Newton / Fisher-scoring fit with step-halving on the averaged likelihood.
inline GlmFit fit_glm(const Matrix& x, std::span<const std::uint8_t> z, Link link,
                      const GlmOptions& opts = {}) {
  detail::check_design(x, z);
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  if (n <= p) {
    throw Error(ErrorCode::RankDeficient, "need more units than coefficients");
  }

  Vector beta = Vector::Zero(p);
  if (link == Link::LinearProbability) {
    // Least-squares start keeps the linear predictor inside (0, 1) in practice.
    Vector zz(n);
    for (Eigen::Index i = 0; i < n; ++i) zz(i) = z[i];
    Eigen::ColPivHouseholderQR<Matrix> qr(x);
    if (qr.rank() < p) throw Error(ErrorCode::RankDeficient, "design matrix is not of full column rank");
    beta = qr.solve(zz);
  }

  GlmFit fit;
  fit.link = link;
  fit.n_units = static_cast<std::size_t>(n);

  double loglik = glm_log_likelihood(x, z, beta, link);
  for (int iter = 1; iter <= opts.max_iterations; ++iter) {
    fit.iterations = iter;
    const Vector score = glm_score(x, z, beta, link);
    if (score.cwiseAbs().maxCoeff() < opts.score_tolerance) {
      fit.converged = true;
      break;
    }
    const Matrix info = fisher_information(x, beta, link);
    const Vector step = detail::factor_information(info).solve(score);

    double scale = 1.0;
    Vector candidate = beta + step;
    double cand_loglik = glm_log_likelihood(x, z, candidate, link);
    for (int h = 0; h < opts.max_halvings && !(cand_loglik >= loglik); ++h) {
      scale *= 0.5;
      candidate = beta + scale * step;
      cand_loglik = glm_log_likelihood(x, z, candidate, link);
    }
    const double rel_change = (candidate - beta).norm() / std::max(1.0, beta.norm());
    beta = candidate;
    loglik = cand_loglik;

    if (!beta.allFinite() || beta.norm() > opts.separation_norm ||
        detail::strictly_separates(x, z, beta, link)) {
      throw Error(ErrorCode::Separation, "coefficients diverge; the labels are (quasi-)separated");
    }
    if (rel_change < opts.step_tolerance) {
      fit.converged = glm_score(x, z, beta, link).cwiseAbs().maxCoeff() < 1e-6;
      if (fit.converged) break;
    }
  }
  if (!fit.converged) {
    throw Error(ErrorCode::NoConvergence,
                "no convergence after " + std::to_string(opts.max_iterations) + " iterations");
  }

  const Matrix info = fisher_information(x, beta, link);
  const auto llt = detail::factor_information(info);
  fit.beta_hat = beta;
  Matrix omega = llt.solve(Matrix::Identity(p, p));
  fit.omega_hat = 0.5 * (omega + omega.transpose());
  return fit;
}

inline Vector predict_linear(const GlmFit& fit, const Matrix& x) {
  if (x.cols() != fit.beta_hat.size()) {
    throw Error(ErrorCode::DimensionMismatch, "design has " + std::to_string(x.cols()) +
                                                  " columns, fit has " +
                                                  std::to_string(fit.beta_hat.size()));
  }
  return x * fit.beta_hat;
}

inline PropensityVector predict_propensity(const GlmFit& fit, const Matrix& x) {
  const Vector eta = predict_linear(fit, x);
  std::vector<double> out(static_cast<std::size_t>(eta.size()));
  for (Eigen::Index i = 0; i < eta.size(); ++i) out[i] = link_inverse(fit.link, eta(i));
  return PropensityVector(std::move(out));
}

}  // namespace psprop
