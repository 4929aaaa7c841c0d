#include <catch_amalgamated.hpp>

#include "psprop/numkit.hpp"
#include "support.hpp"

using namespace psprop;
using Catch::Approx;

TEST_CASE("cholesky of identity and diagonal matrices") {
  CHECK(cholesky_factor(Matrix::Identity(2, 2)).isApprox(Matrix::Identity(2, 2)));
  Matrix d(2, 2);
  d << 4, 0, 0, 9;
  Matrix expect(2, 2);
  expect << 2, 0, 0, 3;
  CHECK((cholesky_factor(d) - expect).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("cholesky reproduces its input") {
  Matrix a(2, 2);
  a << 4, 2, 2, 3;
  const Matrix l = cholesky_factor(a);
  CHECK((l * l.transpose() - a).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(l(0, 1) == 0.0);
  CHECK(l(0, 0) >= 0.0);
  CHECK(l(1, 1) >= 0.0);
}

TEST_CASE("cholesky of random A^T A matrices, including rank-deficient ones") {
  std::mt19937_64 gen(11);
  std::normal_distribution<double> nd;
  for (int rep = 0; rep < 200; ++rep) {
    const int n = 1 + rep % 6;
    const int rows = 1 + (rep * 7) % 8;  // rows < n gives a singular product
    Matrix a(rows, n);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < n; ++j) a(i, j) = nd(gen);
    const Matrix s = a.transpose() * a;
    const Matrix l = cholesky_factor(s);
    INFO("rep " << rep);
    CHECK((l * l.transpose() - s).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(l.diagonal().minCoeff() >= 0.0);
    CHECK(l.isLowerTriangular());
  }
}

TEST_CASE("cholesky rejects asymmetric and indefinite input") {
  Matrix asym(2, 2);
  asym << 1, 0.5, 0.4, 1;
  CHECK_THROWS_MATCHES(cholesky_factor(asym), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) { return e.code() == ErrorCode::AsymmetricInput; }));
  Matrix indef(2, 2);
  indef << 1, 2, 2, 1;
  CHECK_THROWS_MATCHES(cholesky_factor(indef), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) { return e.code() == ErrorCode::NotPositiveDefinite; }));
  CHECK(cholesky_factor(Matrix::Zero(3, 3)).isZero());
}

TEST_CASE("normal quantile against an independent series-and-bisection oracle") {
  CHECK(std_normal_quantile(0.5) == Approx(0.0).margin(1e-12));
  CHECK(std_normal_quantile(0.975) == Approx(1.959964).margin(1e-5));
  CHECK(std_normal_quantile(0.995) == Approx(2.575829).margin(1e-5));
  for (double q : {0.001, 0.01, 0.1, 0.3, 0.6, 0.9, 0.99, 0.999}) {
    CHECK(std_normal_quantile(q) == Approx(oracle::normal_quantile(q)).margin(1e-9));
  }
  CHECK_THROWS_AS(std_normal_quantile(0.0), Error);
  CHECK_THROWS_AS(std_normal_quantile(1.0), Error);
}

TEST_CASE("normal quantile is monotone and antisymmetric") {
  double prev = -1e300;
  for (int k = 1; k < 1000; ++k) {
    const double q = k / 1000.0;
    const double v = std_normal_quantile(q);
    CHECK(v > prev);
    CHECK(v == Approx(-std_normal_quantile(1.0 - q)).margin(1e-10));
    prev = v;
  }
}

TEST_CASE("normal cdf / quantile round trip") {
  for (int k = 1; k < 999; ++k) {
    const double q = k / 1000.0;
    CHECK(std::abs(normal_cdf(std_normal_quantile(q)) - q) < 1e-8);
  }
}

TEST_CASE("noncentral chi-square(1) quantile") {
  CHECK(noncentral_chisq1_quantile(0.95, 0.0) == Approx(3.8415).margin(1e-3));
  CHECK(noncentral_chisq1_quantile(0.5, 0.0) == Approx(0.4549).margin(1e-3));
  const double z = std_normal_quantile(0.975);
  CHECK(noncentral_chisq1_quantile(0.95, 0.0) == Approx(z * z).margin(1e-8));
  CHECK(noncentral_chisq1_quantile(0.95, 4.0) > noncentral_chisq1_quantile(0.95, 0.0));
  double prev = 0.0;
  for (double lambda : {0.0, 0.1, 0.5, 1.0, 4.0, 9.0, 25.0, 100.0}) {
    const double v = noncentral_chisq1_quantile(0.95, lambda);
    CHECK(v >= prev);
    prev = v;
    // closed form: X = (Z + sqrt(lambda))^2
    CHECK(oracle::ncx2_1_cdf(v, lambda) == Approx(0.95).margin(1e-8));
  }
  CHECK_THROWS_AS(noncentral_chisq1_quantile(0.95, -1.0), Error);
  CHECK_THROWS_AS(noncentral_chisq1_quantile(1.5, 0.0), Error);
}

TEST_CASE("noncentral chi-square(1) cdf matches the closed form") {
  for (double lambda : {0.0, 0.3, 2.0, 10.0, 50.0}) {
    for (double x : {0.01, 0.5, 1.0, 3.0, 10.0, 40.0, 120.0}) {
      CHECK(noncentral_chisq1_cdf(x, lambda) == Approx(oracle::ncx2_1_cdf(x, lambda)).margin(1e-10));
    }
  }
}

TEST_CASE("rng streams replay and separate") {
  RngStream a(42, 7), b(42, 7), c(42, 8), d(43, 7);
  bool differs_c = false, differs_d = false;
  for (int i = 0; i < 10000; ++i) {
    const auto va = a.next_u64();
    REQUIRE(va == b.next_u64());
    differs_c = differs_c || va != c.next_u64();
    differs_d = differs_d || va != d.next_u64();
  }
  CHECK(differs_c);
  CHECK(differs_d);
  CHECK(RngStream(1, 2).child(3).next_u64() == RngStream(1, 2).child(3).next_u64());
  CHECK(RngStream(1, 2).child(3).next_u64() != RngStream(1, 2).child(4).next_u64());
}

TEST_CASE("rng distributions") {
  RngStream s(5, 0);
  for (int i = 0; i < 100; ++i) {
    CHECK(s.bernoulli(1.0) == 1);
    CHECK(s.bernoulli(0.0) == 0);
  }
  const double b = std::sqrt(2.0) / 2.0;
  const int n = 100000;
  double m1 = 0, m2 = 0, n1 = 0, n2 = 0, u1 = 0;
  for (int i = 0; i < n; ++i) {
    const double v = s.laplace(b);
    m1 += v;
    m2 += v * v;
    const double g = s.standard_normal();
    n1 += g;
    n2 += g * g;
    const double u = s.uniform01();
    REQUIRE(u > 0.0);
    REQUIRE(u < 1.0);
    u1 += u;
  }
  CHECK(m2 / n - (m1 / n) * (m1 / n) == Approx(1.0).margin(0.05));
  CHECK(n1 / n == Approx(0.0).margin(0.02));
  CHECK(n2 / n == Approx(1.0).margin(0.02));
  CHECK(u1 / n == Approx(0.5).margin(0.01));
}

TEST_CASE("sigmoid and logit") {
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(-1.0) == Approx(0.26894).margin(1e-5));
  CHECK(sigmoid(-800.0) >= 0.0);
  CHECK(sigmoid(800.0) == 1.0);
  for (double p : {0.01, 0.3, 0.5, 0.77, 0.99}) CHECK(sigmoid(logit(p)) == Approx(p).epsilon(1e-14));
}
