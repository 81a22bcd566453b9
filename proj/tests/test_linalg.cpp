#include "fisherflow/error.hpp"
#include "fisherflow/linalg.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace fisherflow;
using testsupport::loop_gram;
using testsupport::max_abs_diff;
using testsupport::random_matrix;

namespace {

Mat diag2(double a, double b) {
  Mat m = Mat::Zero(2, 2);
  m(0, 0) = a;
  m(1, 1) = b;
  return m;
}

double min_eigen(const Mat& A) { return jacobi_eigen(A).values.minCoeff(); }

// SPD with eigenvalues in [1, kappa], kappa log-uniform in [1e3, 1e4].
Mat conditioned_spd(std::mt19937_64& rng, Eigen::Index d) {
  std::uniform_real_distribution<double> lk(3.0, 4.0);
  return random_spd(rng, d, 1.0, std::pow(10.0, lk(rng)));
}

}  // namespace

TEST_SUITE("gram") {
  TEST_CASE("mean of two basis outer products") {
    Mat X(2, 2);
    X << 1, 0, 0, 1;
    CHECK(max_abs_diff(gram_mean(X), diag2(0.5, 0.5)) == 0.0);
  }

  TEST_CASE("single column is its outer product") {
    Mat X(2, 1);
    X << 1, 2;
    Mat expect(2, 2);
    expect << 1, 2, 2, 4;
    CHECK(max_abs_diff(gram_mean(X), expect) == 0.0);
  }

  TEST_CASE("random batch matches the loop oracle") {
    std::mt19937_64 rng(3);
    const Mat X = random_matrix(rng, 3, 8);
    CHECK(max_abs_diff(gram_mean(X), loop_gram(X)) < 1e-12);
  }

  TEST_CASE("empty batch is rejected") {
    Mat X(3, 0);
    CHECK_THROWS_WITH_AS(gram_mean(X), doctest::Contains("empty batch"), Error);
  }

  TEST_CASE("property: output is symmetric and positive-semidefinite") {
    std::mt19937_64 rng(11);
    for (int t = 0; t < 40; ++t) {
      const auto d = 1 + static_cast<Eigen::Index>(rng() % 12);
      const auto B = 1 + static_cast<Eigen::Index>(rng() % 10);
      const Mat G = gram_mean(random_matrix(rng, d, B, 3.0));
      CHECK(asymmetry(G) <= 1e-12);
      CHECK(min_eigen(G) >= -1e-10);
    }
  }

  TEST_CASE("float instantiation") {
    Matrix<float> X(2, 1);
    X << 1.0f, 2.0f;
    CHECK(gram_mean(X)(1, 1) == doctest::Approx(4.0f));
  }
}

TEST_SUITE("gram_channels") {
  TEST_CASE("single pixel gives the channel outer product") {
    Tensor4<double> F(1, 2, 1, 1, {3.0, 4.0});
    const auto g = gram_channels(F);
    REQUIRE(g.size() == 1);
    Mat expect(2, 2);
    expect << 9, 12, 12, 16;
    CHECK(max_abs_diff(g[0], expect) == 0.0);
  }

  TEST_CASE("zero tensor gives zero Grams") {
    Tensor4<double> F(3, 2, 2, 2);
    for (const auto& g : gram_channels(F)) CHECK(g.cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("random tensor matches the nested-loop oracle") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0, 1);
    Tensor4<double> F(2, 3, 4, 4);
    for (auto& v : F.data) v = n(rng);
    const auto g = gram_channels(F);
    REQUIRE(g.size() == 2);
    for (std::size_t s = 0; s < 2; ++s) {
      Mat ref = Mat::Zero(3, 3);
      for (std::size_t a = 0; a < 3; ++a)
        for (std::size_t b = 0; b < 3; ++b)
          for (std::size_t h = 0; h < 4; ++h)
            for (std::size_t w = 0; w < 4; ++w)
              ref(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) +=
                  F.at(s, a, h, w) * F.at(s, b, h, w);
      CHECK(max_abs_diff(g[s], ref) < 1e-12);
      CHECK(asymmetry(g[s]) == 0.0);
    }
  }

  TEST_CASE("malformed tensor is rejected") {
    CHECK_THROWS_AS(Tensor4<double>(1, 2, 2, 2, std::vector<double>(7)), ShapeError);
    CHECK_THROWS_AS(Tensor4<double>(0, 2, 2, 2), ShapeError);
  }
}

TEST_SUITE("damp_spd") {
  TEST_CASE("zero matrix keeps only the floor") {
    const Mat out = damp_spd(Mat(Mat::Zero(2, 2)), 0.1, 1e-8);
    CHECK(max_abs_diff(out, Mat(1e-8 * Mat::Identity(2, 2))) == 0.0);
  }

  TEST_CASE("identity with zero floor") {
    const Mat out = damp_spd(Mat(Mat::Identity(3, 3)), 0.1, 0.0);
    CHECK(max_abs_diff(out, Mat(1.1 * Mat::Identity(3, 3))) < 1e-15);
  }

  TEST_CASE("asymmetric input is rejected") {
    Mat G(2, 2);
    G << 1, 0.5, 0, 1;
    CHECK_THROWS_AS(damp_spd(G, 0.1, 1e-8), Error);
  }

  TEST_CASE("property: rank-one input becomes PD above the floor") {
    std::mt19937_64 rng(17);
    for (int t = 0; t < 30; ++t) {
      const auto d = 2 + static_cast<Eigen::Index>(rng() % 10);
      const Mat v = random_matrix(rng, d, 1);
      const Mat G = v * v.transpose();
      for (double floor_abs : {1e-8, 1e-3, 1.0}) {
        const Mat D = damp_spd(G, 0.1, floor_abs);
        CHECK(min_eigen(D) >= floor_abs * (1 - 1e-9));
      }
    }
  }
}

TEST_SUITE("db_sqrt") {
  TEST_CASE("identity is a fixed point after one iteration") {
    const auto r = db_sqrt(Mat(Mat::Identity(3, 3)));
    CHECK(r.report.iterations_used == 1);
    CHECK(r.report.converged);
    CHECK(max_abs_diff(r.sqrt, Mat::Identity(3, 3)) == 0.0);
    CHECK(max_abs_diff(r.inv_sqrt, Mat::Identity(3, 3)) == 0.0);
  }

  TEST_CASE("diagonal case") {
    const auto r = db_sqrt(diag2(4, 9));
    CHECK(max_abs_diff(r.sqrt, diag2(2, 3)) < 1e-10);
    CHECK(max_abs_diff(r.inv_sqrt, diag2(0.5, 1.0 / 3)) < 1e-10);
  }

  TEST_CASE("random 8x8 converges in tens of iterations") {
    std::mt19937_64 rng(8);
    for (int t = 0; t < 20; ++t) {
      const Mat A = conditioned_spd(rng, 8);
      const auto r = db_sqrt(A, 50, 1e-10);
      CHECK(r.report.converged);
      CHECK(r.report.iterations_used >= 10);
      CHECK(r.report.iterations_used <= 30);
    }
  }

  TEST_CASE("singular iterate names the iteration") {
    Mat A = Mat::Zero(2, 2);
    A(0, 0) = 1.0;
    CHECK_THROWS_WITH_AS(db_sqrt(A), doctest::Contains("iteration"), NumericError);
  }

  TEST_CASE("property: roots invert each other and whiten A") {
    std::mt19937_64 rng(21);
    for (int t = 0; t < 25; ++t) {
      const auto d = 1 + static_cast<Eigen::Index>(rng() % 64);
      const Mat A = conditioned_spd(rng, d);
      const auto r = db_sqrt(A);
      const Mat I = Mat::Identity(d, d);
      CHECK((r.sqrt * r.inv_sqrt - I).norm() < 1e-6);
      CHECK(invsqrt_residual(A, r.inv_sqrt) < 1e-6);
      CHECK(r.report.residual == doctest::Approx(invsqrt_residual(A, r.inv_sqrt)));
      // converged implies residual within tolerance
      CHECK((!r.report.converged || r.report.residual <= 1e-6));
    }
  }
}

TEST_SUITE("ns_invsqrt") {
  TEST_CASE("scalar one is exact") {
    const auto r = ns_invsqrt(Mat(Mat::Identity(1, 1)));
    CHECK(r.inv_sqrt(0, 0) == 1.0);
    CHECK(r.report.residual == 0.0);
  }

  TEST_CASE("diagonal case at 15 iterations") {
    const auto r = ns_invsqrt(diag2(4, 9), 15);
    CHECK(max_abs_diff(r.inv_sqrt, diag2(0.5, 1.0 / 3)) < 1e-8);
  }

  TEST_CASE("non-positive trace is rejected") {
    CHECK_THROWS_WITH_AS(ns_invsqrt(Mat(Mat::Zero(2, 2))),
                         doctest::Contains("not positive-definite"), NumericError);
    CHECK_THROWS_AS(ns_invsqrt(Mat(-Mat::Identity(2, 2))), NumericError);
  }

  TEST_CASE("random 64x64 matches the oracle") {
    std::mt19937_64 rng(64);
    for (int t = 0; t < 5; ++t) {
      const Mat A = conditioned_spd(rng, 64);
      const Mat ref = spd_invsqrt_oracle(A);
      const auto r = ns_invsqrt(A, 20);
      CHECK((r.inv_sqrt - ref).norm() / ref.norm() < 1e-6);
    }
  }

  TEST_CASE("property: scaling by c divides the root by sqrt(c)") {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> lc(-3, 3);
    for (int t = 0; t < 20; ++t) {
      const auto d = 1 + static_cast<Eigen::Index>(rng() % 20);
      const Mat A = random_spd(rng, d, 1.0, 100.0);
      const double c = std::pow(10.0, lc(rng));
      const Mat lhs = ns_invsqrt(Mat(c * A), 20).inv_sqrt;
      const Mat rhs = ns_invsqrt(A, 20).inv_sqrt / std::sqrt(c);
      CHECK(max_abs_diff(lhs, rhs) < 1e-8);
    }
  }

  TEST_CASE("property: residual below 1e-6 across dims and conditioning") {
    std::mt19937_64 rng(4242);
    for (int t = 0; t < 25; ++t) {
      const auto d = 1 + static_cast<Eigen::Index>(rng() % 64);
      const Mat A = conditioned_spd(rng, d);
      const auto r = ns_invsqrt(A, 20);
      CHECK(invsqrt_residual(A, r.inv_sqrt) < 1e-6);
      CHECK((!r.report.converged || r.report.residual <= 1e-6));
    }
  }

  TEST_CASE("float instantiation converges") {
    Matrix<float> A(2, 2);
    A << 4.0f, 0.0f, 0.0f, 9.0f;
    const auto r = ns_invsqrt(A, 20, 1e-4);
    CHECK(r.inv_sqrt(1, 1) == doctest::Approx(1.0f / 3).epsilon(1e-5));
  }
}

TEST_SUITE("oracle") {
  TEST_CASE("identity and diagonal") {
    CHECK(max_abs_diff(spd_invsqrt_oracle(Mat(Mat::Identity(3, 3))), Mat::Identity(3, 3)) <
          1e-15);
    CHECK(max_abs_diff(spd_invsqrt_oracle(diag2(4, 9)), diag2(0.5, 1.0 / 3)) < 1e-15);
    CHECK(max_abs_diff(spd_sqrt_oracle(diag2(4, 9)), diag2(2, 3)) < 1e-15);
  }

  TEST_CASE("reconstruction Q diag(lambda) Q^T equals A") {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 10; ++t) {
      const auto d = 1 + static_cast<Eigen::Index>(rng() % 30);
      const Mat A = random_spd(rng, d, 0.01, 100.0);
      const auto e = jacobi_eigen(A);
      const Mat R = e.vectors * e.values.asDiagonal() * e.vectors.transpose();
      CHECK(max_abs_diff(R, A) < 1e-10);
      CHECK((e.vectors.transpose() * e.vectors - Mat::Identity(d, d)).norm() < 1e-12);
    }
  }

  TEST_CASE("indefinite input is rejected") {
    CHECK_THROWS_AS(spd_invsqrt_oracle(diag2(1, -1)), NumericError);
  }

  TEST_CASE("random_spd pins its spectrum") {
    std::mt19937_64 rng(1);
    const Mat A = random_spd(rng, 6, 2.0, 50.0);
    const auto e = jacobi_eigen(A);
    CHECK(e.values.minCoeff() == doctest::Approx(2.0));
    CHECK(e.values.maxCoeff() == doctest::Approx(50.0));
    CHECK(asymmetry(A) == 0.0);
  }
}

TEST_CASE("require_finite flags NaN and Inf") {
  Mat m = Mat::Zero(2, 2);
  CHECK_NOTHROW(require_finite(m, "m"));
  m(1, 0) = std::nan("");
  CHECK_THROWS_WITH_AS(require_finite(m, "probe"), doctest::Contains("probe"), NumericError);
  m(1, 0) = INFINITY;
  CHECK_THROWS_AS(require_finite(m, "probe"), NumericError);
}

TEST_CASE("damp_spd rejects a zero total shift") {
  CHECK_THROWS_AS(damp_spd(Mat(Mat::Zero(2, 2)), 0.1, 0.0), NumericError);
  CHECK_THROWS_AS(damp_spd(Mat(Mat::Identity(2, 2)), -1.0, 1e-8), NumericError);
}
