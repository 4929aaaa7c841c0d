#pragma once

// Propensity learners for the nonparametric regeneration modes: a GLM
// delegate and gradient-boosted regression trees on the logistic loss, plus
// ROC-AUC, Monte Carlo cross-validation tuning and propensity clipping.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "psprop/dataset.hpp"
#include "psprop/error.hpp"
#include "psprop/glm.hpp"
#include "psprop/numkit.hpp"
#include "psprop/parallel.hpp"

namespace psprop {

inline constexpr double kDefaultClipDelta = 0.1;

struct BoostParams {
  int rounds = 100;
  int max_depth = 3;
  double learning_rate = 0.1;
  double min_child_weight = 1.0;
  double gamma = 0.0;
  double lambda = 1.0;  // L2 penalty on leaf weights

  friend bool operator==(const BoostParams&, const BoostParams&) = default;
};

enum class LearnerKind { Glm, BoostedTrees };

/// Which learner to train and with what hyperparameters. Construct through
/// the factories so invariants are checked once.
class LearnerSpec {
 public:
  static LearnerSpec glm(Link link = Link::Logistic) {
    LearnerSpec s;
    s.kind_ = LearnerKind::Glm;
    s.link_ = link;
    return s;
  }

  static LearnerSpec boosted(const BoostParams& params) {
    if (params.rounds < 1) throw Error(ErrorCode::InvalidArgument, "boosting needs rounds >= 1");
    if (params.max_depth < 1) throw Error(ErrorCode::InvalidArgument, "boosting needs max_depth >= 1");
    if (!(params.learning_rate > 0.0 && params.learning_rate <= 1.0)) {
      throw Error(ErrorCode::InvalidArgument, "learning rate must lie in (0, 1]");
    }
    if (params.gamma < 0.0 || params.min_child_weight < 0.0 || params.lambda < 0.0) {
      throw Error(ErrorCode::InvalidArgument, "gamma, min_child_weight and lambda must be nonnegative");
    }
    LearnerSpec s;
    s.kind_ = LearnerKind::BoostedTrees;
    s.boost_ = params;
    return s;
  }

  LearnerKind kind() const noexcept { return kind_; }
  Link link() const noexcept { return link_; }
  const BoostParams& boost() const noexcept { return boost_; }

  std::string describe() const {
    if (kind_ == LearnerKind::Glm) return "glm(" + to_string(link_) + ")";
    return "boosted(rounds=" + std::to_string(boost_.rounds) + ",depth=" + std::to_string(boost_.max_depth) +
           ",eta=" + std::to_string(boost_.learning_rate) + ",gamma=" + std::to_string(boost_.gamma) +
           ",min_child_weight=" + std::to_string(boost_.min_child_weight) + ")";
  }

  friend bool operator==(const LearnerSpec&, const LearnerSpec&) = default;

 private:
  LearnerSpec() = default;
  LearnerKind kind_ = LearnerKind::Glm;
  Link link_ = Link::Logistic;
  BoostParams boost_{};
};

/// The hyperparameter grid used for tuning the boosted learner: 324 cells.
inline std::vector<LearnerSpec> default_boosting_grid() {
  std::vector<LearnerSpec> grid;
  for (int rounds : {100, 200, 500}) {
    for (int depth : {1, 3, 5, 7}) {
      for (double eta : {0.05, 0.10, 0.20}) {
        for (double gamma : {0.0, 1.0, 5.0}) {
          for (double mcw : {1.0, 3.0, 5.0}) {
            grid.push_back(LearnerSpec::boosted({rounds, depth, eta, mcw, gamma, 1.0}));
          }
        }
      }
    }
  }
  return grid;
}

// ---------------------------------------------------------------------------
// Gradient-boosted trees

class BoostedTrees {
 public:
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
  };

  /// Exact greedy second-order boosting on the logistic loss.
  static BoostedTrees fit(const Matrix& x, std::span<const std::uint8_t> z, const BoostParams& params) {
    const std::size_t n = z.size();
    const auto p = static_cast<std::size_t>(x.cols());
    BoostedTrees model;
    model.n_features_ = p;

    const double mean = std::accumulate(z.begin(), z.end(), 0.0) / static_cast<double>(n);
    model.base_margin_ = logit(std::clamp(mean, 1e-6, 1.0 - 1e-6));

    std::vector<std::vector<double>> cols(p, std::vector<double>(n));
    std::vector<std::vector<std::uint32_t>> order(p, std::vector<std::uint32_t>(n));
    for (std::size_t f = 0; f < p; ++f) {
      for (std::size_t i = 0; i < n; ++i) cols[f][i] = x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(f));
      std::iota(order[f].begin(), order[f].end(), 0u);
      std::stable_sort(order[f].begin(), order[f].end(),
                       [&c = cols[f]](std::uint32_t a, std::uint32_t b) { return c[a] < c[b]; });
    }

    std::vector<double> margin(n, model.base_margin_);
    std::vector<double> grad(n);
    std::vector<double> hess(n);
    std::vector<int> node_of(n);
    const double lambda = params.lambda;

    struct Stats {
      double g = 0.0;
      double h = 0.0;
    };
    struct Candidate {
      double gain = 0.0;
      int feature = -1;
      double threshold = 0.0;
    };

    for (int round = 0; round < params.rounds; ++round) {
      for (std::size_t i = 0; i < n; ++i) {
        const double prob = sigmoid(margin[i]);
        grad[i] = prob - z[i];
        hess[i] = std::max(prob * (1.0 - prob), 1e-16);
      }

      std::vector<Node> tree(1);
      std::vector<Stats> stats(1);
      for (std::size_t i = 0; i < n; ++i) {
        stats[0].g += grad[i];
        stats[0].h += hess[i];
      }
      std::fill(node_of.begin(), node_of.end(), 0);

      std::vector<int> active{0};
      for (int depth = 0; depth < params.max_depth && !active.empty(); ++depth) {
        std::vector<int> slot(tree.size(), -1);
        for (std::size_t s = 0; s < active.size(); ++s) slot[active[s]] = static_cast<int>(s);

        std::vector<Candidate> best(active.size());
        std::vector<Stats> left(active.size());
        std::vector<double> last(active.size());
        std::vector<char> seen(active.size());
        for (std::size_t f = 0; f < p; ++f) {
          std::fill(left.begin(), left.end(), Stats{});
          std::fill(seen.begin(), seen.end(), 0);
          const auto& col = cols[f];
          for (std::uint32_t i : order[f]) {
            const int s = slot[node_of[i]];
            if (s < 0) continue;
            const double v = col[i];
            if (seen[s] && v > last[s]) {
              const Stats& total = stats[active[s]];
              const double hl = left[s].h;
              const double hr = total.h - hl;
              if (hl >= params.min_child_weight && hr >= params.min_child_weight) {
                const double gl = left[s].g;
                const double gr = total.g - gl;
                const double gain = gl * gl / (hl + lambda) + gr * gr / (hr + lambda) -
                                    total.g * total.g / (total.h + lambda);
                if (gain > best[s].gain) {
                  double thr = 0.5 * (last[s] + v);
                  if (!(thr > last[s])) thr = v;
                  best[s] = {gain, static_cast<int>(f), thr};
                }
              }
            }
            left[s].g += grad[i];
            left[s].h += hess[i];
            last[s] = v;
            seen[s] = 1;
          }
        }

        std::vector<int> next;
        std::vector<char> split(tree.size(), 0);
        for (std::size_t s = 0; s < active.size(); ++s) {
          const int k = active[s];
          if (best[s].feature < 0 || !(best[s].gain > params.gamma) || best[s].gain <= 1e-12) continue;
          tree[k].feature = best[s].feature;
          tree[k].threshold = best[s].threshold;
          tree[k].left = static_cast<int>(tree.size());
          tree[k].right = static_cast<int>(tree.size()) + 1;
          tree.resize(tree.size() + 2);
          stats.resize(stats.size() + 2);
          split.resize(tree.size(), 0);
          split[k] = 1;
          next.push_back(tree[k].left);
          next.push_back(tree[k].right);
        }
        if (next.empty()) break;
        for (std::size_t i = 0; i < n; ++i) {
          const int k = node_of[i];
          if (!split[k]) continue;
          const Node& nd = tree[k];
          const int child = cols[nd.feature][i] < nd.threshold ? nd.left : nd.right;
          node_of[i] = child;
          stats[child].g += grad[i];
          stats[child].h += hess[i];
        }
        active = std::move(next);
      }

      for (std::size_t k = 0; k < tree.size(); ++k) {
        if (tree[k].feature < 0) {
          tree[k].value = -params.learning_rate * stats[k].g / (stats[k].h + lambda);
        }
      }
      for (std::size_t i = 0; i < n; ++i) margin[i] += tree[node_of[i]].value;

      model.roots_.push_back(static_cast<int>(model.nodes_.size()));
      const int offset = static_cast<int>(model.nodes_.size());
      for (Node nd : tree) {
        if (nd.feature >= 0) {
          nd.left += offset;
          nd.right += offset;
        }
        model.nodes_.push_back(nd);
      }
    }
    return model;
  }

  double margin(const Matrix& x, Eigen::Index row) const {
    double m = base_margin_;
    for (int root : roots_) {
      int k = root;
      while (nodes_[k].feature >= 0) {
        const Node& nd = nodes_[k];
        k = x(row, nd.feature) < nd.threshold ? nd.left : nd.right;
      }
      m += nodes_[k].value;
    }
    return m;
  }

  std::size_t tree_count() const noexcept { return roots_.size(); }
  std::size_t feature_count() const noexcept { return n_features_; }

 private:
  std::vector<Node> nodes_;
  std::vector<int> roots_;
  double base_margin_ = 0.0;
  std::size_t n_features_ = 0;
};

// ---------------------------------------------------------------------------
// Fitted learners

namespace detail {

// Intercept plus every non-constant covariate column.
inline std::vector<Eigen::Index> varying_columns(const Matrix& x) {
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    if (x.rows() > 0 && (x.col(j).array() != x(0, j)).any()) keep.push_back(j);
  }
  return keep;
}

inline Matrix glm_design(const Matrix& x, const std::vector<Eigen::Index>& keep) {
  Matrix d(x.rows(), static_cast<Eigen::Index>(keep.size()) + 1);
  d.col(0).setOnes();
  for (std::size_t k = 0; k < keep.size(); ++k) d.col(static_cast<Eigen::Index>(k) + 1) = x.col(keep[k]);
  return d;
}

}  // namespace detail

class FittedLearner {
 public:
  struct GlmModel {
    GlmFit fit;
    std::vector<Eigen::Index> columns;
  };
  struct ConstantModel {
    double probability = 0.5;
  };
  using Model = std::variant<GlmModel, BoostedTrees, ConstantModel>;

  explicit FittedLearner(Model model) : model_(std::move(model)) {}

  /// Probabilities in (0, 1) for each row of x.
  std::vector<double> predict(const Matrix& x) const {
    std::vector<double> out(static_cast<std::size_t>(x.rows()));
    std::visit(
        [&](const auto& m) {
          using T = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<T, GlmModel>) {
            const Matrix d = detail::glm_design(x, m.columns);
            const Vector eta = d * m.fit.beta_hat;
            for (Eigen::Index i = 0; i < eta.size(); ++i) out[i] = interior(link_inverse(m.fit.link, eta(i)));
          } else if constexpr (std::is_same_v<T, BoostedTrees>) {
            for (Eigen::Index i = 0; i < x.rows(); ++i) out[i] = interior(sigmoid(m.margin(x, i)));
          } else {
            std::fill(out.begin(), out.end(), m.probability);
          }
        },
        model_);
    return out;
  }

  const Model& model() const noexcept { return model_; }

 private:
  static double interior(double p) { return std::clamp(p, 1e-12, 1.0 - 1e-12); }
  Model model_;
};

/// Trains `spec` on (x, z). Throws DegenerateLabels when z has one class.
/// The stream is accepted for learners with internal randomness; the current
/// learners are deterministic given the data.
inline FittedLearner train(const LearnerSpec& spec, const Matrix& x, std::span<const std::uint8_t> z,
                           RngStream& stream) {
  (void)stream;
  if (static_cast<std::size_t>(x.rows()) != z.size()) {
    throw Error(ErrorCode::DimensionMismatch, "training rows and labels differ in count");
  }
  if (z.size() < 2) throw Error(ErrorCode::DegenerateLabels, "need at least two training units");
  const auto ones = std::count(z.begin(), z.end(), std::uint8_t{1});
  if (ones == 0 || static_cast<std::size_t>(ones) == z.size()) {
    throw Error(ErrorCode::DegenerateLabels, "training labels contain a single class");
  }
  if (spec.kind() == LearnerKind::Glm) {
    auto cols = detail::varying_columns(x);
    auto fit = fit_glm(detail::glm_design(x, cols), z, spec.link());
    return FittedLearner(FittedLearner::GlmModel{std::move(fit), std::move(cols)});
  }
  return FittedLearner(BoostedTrees::fit(x, z, spec.boost()));
}

/// Pooled label mean clamped into [delta, 1 - delta]; the fallback for
/// one-class training sets.
inline FittedLearner fallback_learner(std::span<const std::uint8_t> z, double delta = kDefaultClipDelta) {
  const double mean =
      z.empty() ? 0.5 : std::accumulate(z.begin(), z.end(), 0.0) / static_cast<double>(z.size());
  return FittedLearner(FittedLearner::ConstantModel{std::clamp(mean, delta, 1.0 - delta)});
}

// ---------------------------------------------------------------------------
// Evaluation and tuning

/// Probability that a random positive outscores a random negative, ties
/// counting one half (Mann-Whitney form, computed with mid-ranks).
inline double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw Error(ErrorCode::DimensionMismatch, "scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[idx[k]]) {
        pos_rank_sum += mid_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw Error(ErrorCode::SingleClass, "ROC-AUC needs both classes");
  const double np = static_cast<double>(n_pos);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

struct TuningResult {
  LearnerSpec best;
  std::size_t best_index = 0;
  std::vector<double> mean_auc;  // per grid element
  std::size_t splits_used = 0;
};

/// Monte Carlo cross-validation with 50/50 splits: picks the grid element
/// with the highest mean held-out ROC-AUC, earliest element on ties. Splits
/// with a single class on either side are skipped.
inline TuningResult tune_by_mccv(const std::vector<LearnerSpec>& grid, const Matrix& x,
                                 std::span<const std::uint8_t> z, std::size_t splits, const RngStream& stream,
                                 std::size_t threads = 1) {
  if (grid.empty()) throw Error(ErrorCode::EmptyInput, "tuning grid is empty");
  const std::size_t n = z.size();
  if (static_cast<std::size_t>(x.rows()) != n) throw Error(ErrorCode::DimensionMismatch, "rows and labels differ");
  if (grid.size() == 1) return {grid.front(), 0, {std::numeric_limits<double>::quiet_NaN()}, 0};

  struct Split {
    Matrix x_train, x_test;
    BitVector z_train, z_test;
  };
  std::vector<Split> folds;
  for (std::size_t s = 0; s < splits; ++s) {
    RngStream rng = stream.child(s);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_index(i)]);
    const std::size_t n_train = n / 2;
    Split sp;
    sp.x_train.resize(static_cast<Eigen::Index>(n_train), x.cols());
    sp.x_test.resize(static_cast<Eigen::Index>(n - n_train), x.cols());
    for (std::size_t k = 0; k < n; ++k) {
      const auto src = static_cast<Eigen::Index>(perm[k]);
      if (k < n_train) {
        sp.x_train.row(static_cast<Eigen::Index>(k)) = x.row(src);
        sp.z_train.push_back(z[perm[k]]);
      } else {
        sp.x_test.row(static_cast<Eigen::Index>(k - n_train)) = x.row(src);
        sp.z_test.push_back(z[perm[k]]);
      }
    }
    auto two_class = [](const BitVector& b) {
      const auto ones = std::count(b.begin(), b.end(), std::uint8_t{1});
      return ones > 0 && static_cast<std::size_t>(ones) < b.size();
    };
    if (two_class(sp.z_train) && two_class(sp.z_test)) folds.push_back(std::move(sp));
  }
  if (folds.empty()) throw Error(ErrorCode::SingleClass, "every tuning split had a single class");

  std::vector<double> mean_auc(grid.size(), 0.0);
  parallel_for(grid.size(), threads, [&](std::size_t g) {
    double total = 0.0;
    for (std::size_t s = 0; s < folds.size(); ++s) {
      RngStream rng = stream.child(1'000'000 + s);
      const auto model = train(grid[g], folds[s].x_train, folds[s].z_train, rng);
      const auto scores = model.predict(folds[s].x_test);
      total += roc_auc(scores, folds[s].z_test);
    }
    mean_auc[g] = total / static_cast<double>(folds.size());
  });

  std::size_t best = 0;
  for (std::size_t g = 1; g < grid.size(); ++g) {
    if (mean_auc[g] > mean_auc[best]) best = g;
  }
  return {grid[best], best, std::move(mean_auc), folds.size()};
}

/// Maps every entry to max(delta, min(1 - delta, p)).
inline PropensityVector clip_propensities(const PropensityVector& p, double delta) {
  if (!(delta > 0.0 && delta < 0.5)) throw Error(ErrorCode::OutOfRange, "clip delta must lie in (0, 0.5)");
  std::vector<double> out(p.begin(), p.end());
  for (double& v : out) v = std::clamp(v, delta, 1.0 - delta);
  return PropensityVector(std::move(out));
}

}  // namespace psprop
