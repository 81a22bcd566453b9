#include "fisherflow/error.hpp"
#include "fisherflow/fisher.hpp"
#include "support.hpp"

#include <doctest.h>

#include <random>

using namespace fisherflow;
using testsupport::loop_gram;
using testsupport::loop_matmul;
using testsupport::max_abs_diff;
using testsupport::random_matrix;

namespace {

FisherConfig every(int interval) {
  FisherConfig c;
  c.interval = interval;
  return c;
}

}  // namespace

TEST_SUITE("local_fisher") {
  TEST_CASE("zero sensitivities leave only the floor") {
    std::mt19937_64 rng(1);
    const auto est = local_fisher(random_matrix(rng, 3, 4), Mat(Mat::Zero(2, 4)), 0.1, 1e-8);
    CHECK(est.scalar_v == 0.0);
    CHECK(max_abs_diff(est.g_damped, Mat(1e-8 * Mat::Identity(3, 3))) == 0.0);
  }

  TEST_CASE("constant half sensitivity on the basis batch") {
    Mat X(2, 2);
    X << 1, 0, 0, 1;
    const auto est = local_fisher(X, Mat(Mat::Constant(3, 2, 0.5)), 0.0, 1e-8);
    CHECK(est.scalar_v == 0.25);
    const Mat expect = 0.25 * loop_gram(X) + 1e-8 * Mat::Identity(2, 2);
    CHECK(max_abs_diff(est.g_damped, expect) < 1e-18);
    CHECK(est.g_damped(0, 0) == doctest::Approx(0.125 + 1e-8).epsilon(1e-15));
  }

  TEST_CASE("shape contract") {
    std::mt19937_64 rng(2);
    const auto est = local_fisher(random_matrix(rng, 5, 7), random_matrix(rng, 3, 7), 0.1, 1e-8);
    CHECK(est.g_damped.rows() == 5);
    CHECK(est.g_damped.cols() == 5);
  }

  TEST_CASE("batch mismatch is rejected") {
    CHECK_THROWS_WITH_AS(local_fisher(Mat(Mat::Ones(5, 7)), Mat(Mat::Ones(3, 6)), 0.1, 1e-8),
                         doctest::Contains("batch mismatch"), ShapeError);
  }

  TEST_CASE("scalar_v is the mean square over units and batch") {
    std::mt19937_64 rng(3);
    const Mat V = random_matrix(rng, 4, 6);
    double s = 0;
    for (Eigen::Index i = 0; i < V.rows(); ++i)
      for (Eigen::Index j = 0; j < V.cols(); ++j) s += V(i, j) * V(i, j);
    const auto est = local_fisher(random_matrix(rng, 2, 6), V, 0.1, 1e-8);
    CHECK(est.scalar_v == doctest::Approx(s / 24).epsilon(1e-14));
  }
}

TEST_SUITE("FisherState") {
  TEST_CASE("starts at the identity") {
    FisherState<double> st(4, FisherConfig{});
    CHECK(st.is_identity());
    CHECK(st.S() == Mat::Identity(4, 4));
    CHECK(st.step_counter() == 0);
  }

  TEST_CASE("first refresh from initialization replaces S") {
    std::mt19937_64 rng(4);
    FisherState<double> st(3, every(1));
    const Mat X = random_matrix(rng, 3, 5);
    const Mat Z = random_matrix(rng, 2, 5);
    CHECK(fisher_refresh(st, X, Z, ActivationKind::Sigmoid) == RefreshOutcome::Refreshed);
    const auto est = local_fisher(X, activation_v(ActivationKind::Sigmoid, Z), 0.1, 1e-8);
    const Mat ref = spd_invsqrt_oracle(est.g_damped);
    CHECK(!st.is_identity());
    CHECK((st.S() - ref).norm() / ref.norm() < 1e-6);
    CHECK(st.refreshes() == 1);
  }

  TEST_CASE("schedule miss leaves S and bumps the counter") {
    std::mt19937_64 rng(5);
    FisherState<double> st(2, every(10));
    const Mat X = random_matrix(rng, 2, 3), Z = random_matrix(rng, 2, 3);
    for (int i = 0; i < 3; ++i) fisher_refresh(st, X, Z, ActivationKind::ReLU);
    CHECK(st.step_counter() == 3);
    CHECK(fisher_refresh(st, X, Z, ActivationKind::ReLU) == RefreshOutcome::Skipped);
    CHECK(st.step_counter() == 4);
    CHECK(st.is_identity());
  }

  TEST_CASE("ema zero is a hard replace by the solver output") {
    std::mt19937_64 rng(6);
    FisherConfig cfg;
    cfg.solver = SpdSolver::DenmanBeavers;
    cfg.solver_iters = 50;
    FisherState<double> st(3, cfg);
    const Mat X = random_matrix(rng, 3, 8), Z = random_matrix(rng, 4, 8);
    refresh_now(st, X, Z, ActivationKind::Sigmoid);
    const Mat S1 = st.S();
    const Mat X2 = random_matrix(rng, 3, 8);
    refresh_now(st, X2, Z, ActivationKind::Sigmoid);
    const auto est = local_fisher(X2, activation_v(ActivationKind::Sigmoid, Z), 0.1, 1e-8);
    const Mat direct = solve_invsqrt(est.g_damped, SpdSolver::DenmanBeavers, 50).inv_sqrt;
    CHECK(max_abs_diff(st.S(), Mat(0.5 * (direct + direct.transpose()))) == 0.0);
    CHECK(max_abs_diff(st.S(), S1) > 0.0);
  }

  TEST_CASE("ema blends old and new") {
    std::mt19937_64 rng(7);
    FisherConfig cfg;
    cfg.ema = 0.75;
    cfg.solver = SpdSolver::Oracle;
    FisherState<double> st(2, cfg);
    const Mat X = random_matrix(rng, 2, 4), Z = random_matrix(rng, 1, 4);
    refresh_now(st, X, Z, ActivationKind::Identity);
    const auto est = local_fisher(X, Mat(Mat::Ones(1, 4)), 0.1, 1e-8);
    const Mat S_new = spd_invsqrt_oracle(est.g_damped);
    const Mat expect = 0.25 * S_new + 0.75 * Mat::Identity(2, 2);
    CHECK(max_abs_diff(st.S(), expect) < 1e-14);
  }

  TEST_CASE("frozen state never changes") {
    std::mt19937_64 rng(8);
    FisherConfig cfg;
    cfg.frozen = true;
    FisherState<double> st(3, cfg);
    const Mat X = random_matrix(rng, 3, 4), Z = random_matrix(rng, 3, 4);
    for (int i = 0; i < 20; ++i) {
      CHECK(fisher_refresh(st, X, Z, ActivationKind::ReLU) == RefreshOutcome::Skipped);
    }
    CHECK(st.S() == Mat::Identity(3, 3));
    CHECK(st.refreshes() == 0);
    CHECK_THROWS_AS(st.set_matrix(Mat::Identity(3, 3)), Error);
  }

  TEST_CASE("failed solve keeps S and counts the failure") {
    std::mt19937_64 rng(9);
    FisherConfig cfg;
    cfg.solver_iters = 1;  // one Newton-Schulz step cannot reach the residual limit
    cfg.eps_rel = 0.0;
    FisherState<double> st(4, cfg);
    const Mat X = random_matrix(rng, 4, 2, 10.0);
    CHECK(refresh_now(st, X, Mat(Mat::Ones(1, 2)), ActivationKind::Identity) ==
          RefreshOutcome::Failed);
    CHECK(st.is_identity());
    CHECK(st.failures() == 1);
    CHECK(!st.last_failure().empty());
  }

  TEST_CASE("input dimension mismatch is rejected") {
    FisherState<double> st(3, FisherConfig{});
    CHECK_THROWS_AS(refresh_now(st, Mat(Mat::Ones(2, 4)), Mat(Mat::Ones(1, 4)),
                                ActivationKind::Identity),
                    ShapeError);
  }

  TEST_CASE("config validation") {
    FisherConfig c;
    c.interval = 0;
    CHECK_THROWS_AS(FisherState<double>(2, c), Error);
    c = {};
    c.ema = 1.0;
    CHECK_THROWS_AS(FisherState<double>(2, c), Error);
    c = {};
    c.floor_abs = 0.0;
    CHECK_THROWS_AS(FisherState<double>(2, c), Error);
  }

  TEST_CASE("solver names round-trip") {
    for (auto s : {SpdSolver::NewtonSchulz, SpdSolver::DenmanBeavers, SpdSolver::Oracle}) {
      CHECK(parse_solver(to_string(s)) == s);
    }
    CHECK(parse_solver("NS") == SpdSolver::NewtonSchulz);
    CHECK(parse_solver("db") == SpdSolver::DenmanBeavers);
    CHECK_THROWS_AS(parse_solver("svd"), Error);
  }

  TEST_CASE("property: S symmetric and PD after every refresh") {
    std::mt19937_64 rng(10);
    for (auto solver : {SpdSolver::NewtonSchulz, SpdSolver::DenmanBeavers, SpdSolver::Oracle}) {
      FisherConfig cfg;
      cfg.solver = solver;
      cfg.solver_iters = solver == SpdSolver::DenmanBeavers ? 50 : 15;
      cfg.ema = 0.5;
      FisherState<double> st(6, cfg);
      for (int t = 0; t < 15; ++t) {
        const auto B = 1 + static_cast<Eigen::Index>(rng() % 10);
        const auto act = t % 2 ? ActivationKind::ReLU : ActivationKind::Sigmoid;
        refresh_now(st, random_matrix(rng, 6, B), random_matrix(rng, 4, B), act);
        CHECK((st.S() - st.S().transpose()).norm() < 1e-8);
        CHECK(jacobi_eigen(st.S()).values.minCoeff() > 0.0);
      }
    }
  }

  TEST_CASE("property: floor(T / k) refreshes over T steps") {
    std::mt19937_64 rng(12);
    const Mat X = random_matrix(rng, 2, 3), Z = random_matrix(rng, 2, 3);
    for (int k : {1, 2, 3, 7, 10}) {
      for (std::size_t T : {0u, 1u, 9u, 10u, 25u}) {
        FisherState<double> st(2, every(k));
        for (std::size_t i = 0; i < T; ++i) fisher_refresh(st, X, Z, ActivationKind::Sigmoid);
        CHECK(st.refreshes() == T / static_cast<std::size_t>(k));
      }
    }
  }

  TEST_CASE("property: identical inputs give a bitwise-identical S sequence") {
    auto run = [] {
      std::mt19937_64 rng(13);
      FisherState<double> st(5, every(2));
      std::vector<Mat> seq;
      for (int t = 0; t < 10; ++t) {
        fisher_refresh(st, random_matrix(rng, 5, 6), random_matrix(rng, 3, 6),
                       ActivationKind::Sigmoid);
        seq.push_back(st.S());
      }
      return seq;
    };
    CHECK(run() == run());
  }
}

TEST_SUITE("whiten") {
  TEST_CASE("identity leaves X unchanged") {
    std::mt19937_64 rng(14);
    const Mat X = random_matrix(rng, 3, 4);
    CHECK(whiten(FisherState<double>(3, FisherConfig{}), X) == X);
  }

  TEST_CASE("diagonal scaling") {
    Mat S = Mat::Zero(2, 2);
    S(0, 0) = 0.5;
    S(1, 1) = 2.0;
    Mat X(2, 1);
    X << 2, 1;
    const Mat u = whiten(FisherState<double>(S, FisherConfig{}), X);
    CHECK(u(0, 0) == 1.0);
    CHECK(u(1, 0) == 2.0);
  }

  TEST_CASE("random S matches the loop multiply") {
    std::mt19937_64 rng(15);
    const Mat S = random_spd(rng, 6, 0.5, 2.0);
    const Mat X = random_matrix(rng, 6, 9);
    CHECK(max_abs_diff(whiten(FisherState<double>(S, FisherConfig{}), X), loop_matmul(S, X)) <
          1e-12);
  }

  TEST_CASE("dimension mismatch is rejected") {
    CHECK_THROWS_AS(whiten(FisherState<double>(3, FisherConfig{}), Mat(Mat::Ones(2, 2))),
                    ShapeError);
  }
}
