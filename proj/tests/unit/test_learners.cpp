#include <catch_amalgamated.hpp>

#include "psprop/harness.hpp"
#include "psprop/learners.hpp"

using namespace psprop;
using Catch::Approx;

namespace {

bool has_code(const std::function<void()>& f, ErrorCode code) {
  try {
    f();
  } catch (const Error& e) {
    return e.code() == code;
  }
  return false;
}

// O(n^2) pairwise Mann-Whitney count
double pairwise_auc(const std::vector<double>& s, const BitVector& y) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] && !y[j]) {
        den += 1;
        num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return num / den;
}

}  // namespace

TEST_CASE("glm learner on intercept-only data") {
  Matrix x = Matrix::Ones(10, 1);
  BitVector z{1, 0, 1, 0, 1, 0, 1, 0, 1, 0};
  RngStream rng(1, 0);
  const auto model = train(LearnerSpec::glm(), x, z, rng);
  for (double p : model.predict(x)) CHECK(p == Approx(0.5).margin(1e-12));
  CHECK(has_code([&] { train(LearnerSpec::glm(), x, BitVector(10, 1), rng); }, ErrorCode::DegenerateLabels));
}

TEST_CASE("boosted spec validation") {
  CHECK(has_code([] { LearnerSpec::boosted({0, 3, 0.1, 1, 0, 1}); }, ErrorCode::InvalidArgument));
  CHECK(has_code([] { LearnerSpec::boosted({10, 0, 0.1, 1, 0, 1}); }, ErrorCode::InvalidArgument));
  CHECK(has_code([] { LearnerSpec::boosted({10, 2, 0.0, 1, 0, 1}); }, ErrorCode::InvalidArgument));
  CHECK(has_code([] { LearnerSpec::boosted({10, 2, 0.1, 1, -1, 1}); }, ErrorCode::InvalidArgument));
  CHECK(default_boosting_grid().size() == 324);
}

TEST_CASE("boosted learner separates 1-d data") {
  const int n = 200;
  Matrix x(n, 1);
  BitVector z(n);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = (i - 100) / 10.0;
    z[i] = x(i, 0) > 0.35 ? 1 : 0;
  }
  RngStream rng(2, 0);
  const auto model = train(LearnerSpec::boosted({100, 3, 0.1, 1, 0, 1}), x, z, rng);
  const auto p = model.predict(x);
  CHECK(roc_auc(p, z) >= 0.95);
  for (double v : p) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  // same inputs, same model
  RngStream rng2(99, 5);
  CHECK(train(LearnerSpec::boosted({100, 3, 0.1, 1, 0, 1}), x, z, rng2).predict(x) == p);
}

TEST_CASE("boosted learner beats a constant predictor on a smooth logistic truth") {
  RngStream gen(3, 0);
  const int n = 2000;
  Matrix x(n, 3);
  BitVector z(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < 3; ++j) x(i, j) = gen.standard_normal();
    z[i] = static_cast<std::uint8_t>(gen.bernoulli(sigmoid(0.8 * x(i, 0) - 0.6 * x(i, 1) + 0.3 * x(i, 0) * x(i, 2))));
  }
  Matrix xa = x.topRows(n / 2), xb = x.bottomRows(n / 2);
  BitVector za(z.begin(), z.begin() + n / 2), zb(z.begin() + n / 2, z.end());
  RngStream rng(3, 1);
  const auto model = train(LearnerSpec::boosted({100, 3, 0.1, 1, 0, 1}), xa, za, rng);
  CHECK(roc_auc(model.predict(xb), zb) >= 0.6);
}

TEST_CASE("roc_auc examples and tie convention") {
  CHECK(roc_auc(std::vector<double>{0.9, 0.1}, BitVector{1, 0}) == 1.0);
  CHECK(roc_auc(std::vector<double>{0.1, 0.9}, BitVector{1, 0}) == 0.0);
  CHECK(roc_auc(std::vector<double>{0.3, 0.3}, BitVector{1, 0}) == 0.5);
  CHECK(has_code([] { roc_auc(std::vector<double>{0.3, 0.4}, BitVector{1, 1}); }, ErrorCode::SingleClass));

  std::mt19937_64 gen(7);
  std::uniform_int_distribution<int> level(0, 5);
  std::bernoulli_distribution coin(0.4);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> s(40);
    BitVector y(40);
    for (int i = 0; i < 40; ++i) {
      s[i] = level(gen);  // many ties
      y[i] = coin(gen) ? 1 : 0;
    }
    y[0] = 1;
    y[1] = 0;
    CHECK(roc_auc(s, y) == Approx(pairwise_auc(s, y)).margin(1e-12));
  }
}

TEST_CASE("roc_auc is invariant under strictly monotone maps") {
  std::mt19937_64 gen(13);
  std::normal_distribution<double> nd;
  std::bernoulli_distribution coin(0.5);
  std::uniform_real_distribution<double> coef(0.1, 3.0);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> s(60);
    BitVector y(60);
    for (int i = 0; i < 60; ++i) {
      s[i] = std::round(nd(gen) * 4) / 4;
      y[i] = coin(gen) ? 1 : 0;
    }
    y[0] = 1;
    y[1] = 0;
    const double a = coef(gen), b = coef(gen), c = nd(gen);
    std::vector<double> t(60);
    for (int i = 0; i < 60; ++i) t[i] = a * std::exp(s[i] / b) + c + std::atan(s[i]);
    CHECK(roc_auc(s, y) == roc_auc(t, y));
  }
}

TEST_CASE("tuning picks the best grid element and breaks ties by position") {
  Matrix x = Matrix::Ones(20, 1);
  BitVector z(20);
  for (int i = 0; i < 20; ++i) z[i] = i % 2;
  RngStream s(4, 0);
  const auto single = tune_by_mccv({LearnerSpec::glm(Link::Probit)}, x, z, 10, s);
  CHECK(single.best == LearnerSpec::glm(Link::Probit));

  const auto twin = LearnerSpec::boosted({10, 1, 0.1, 1, 0, 1});
  const auto tie = tune_by_mccv({twin, twin}, x, z, 5, s);
  CHECK(tie.best_index == 0);

  PopulationSpec ps;
  ps.n_units = 1000;
  ps.propensity = PropensitySetting::LogisticModel;
  ps.seed = 5;
  const auto pop = generate_population(ps);
  RngStream a(5, 1);
  const auto zz = draw_assignment(pop, a);
  const auto picked = tune_by_mccv({LearnerSpec::glm(), LearnerSpec::boosted({100, 3, 0.1, 1, 0, 1})}, pop.x, zz, 10,
                                   RngStream(5, 2));
  INFO("auc glm " << picked.mean_auc[0] << " boosted " << picked.mean_auc[1]);
  CHECK(picked.best_index == (picked.mean_auc[1] > picked.mean_auc[0] ? 1u : 0u));
  CHECK(picked.best.kind() == LearnerKind::BoostedTrees);
  CHECK(picked.splits_used == 10);
}

TEST_CASE("clip_propensities") {
  const auto c = clip_propensities(PropensityVector({0.05, 0.5, 0.99, 0.0, 1.0}), 0.1);
  CHECK(c.vector() == std::vector<double>{0.1, 0.5, 0.9, 0.1, 0.9});
  CHECK(has_code([] { clip_propensities(PropensityVector({0.5}), 0.5); }, ErrorCode::OutOfRange));

  std::mt19937_64 gen(19);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> p(30);
    for (auto& v : p) v = ud(gen);
    const double delta = 0.01 + 0.4 * ud(gen);
    const auto once = clip_propensities(PropensityVector(p), delta);
    CHECK(clip_propensities(once, delta) == once);
    for (std::size_t i = 0; i < p.size(); ++i)
      for (std::size_t j = 0; j < p.size(); ++j)
        if (p[i] <= p[j]) CHECK(once[i] <= once[j]);
  }
}

TEST_CASE("fallback learner predicts the clamped pooled mean") {
  const auto f = fallback_learner(BitVector{1, 1, 1, 1});
  for (double v : f.predict(Matrix::Zero(3, 2))) CHECK(v == 0.9);
  const auto g = fallback_learner(BitVector{1, 0, 0, 0});
  for (double v : g.predict(Matrix::Zero(2, 2))) CHECK(v == 0.25);
}
