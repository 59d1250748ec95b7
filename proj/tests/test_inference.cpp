#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "support.hpp"

using namespace crfreid;

namespace {

double logistic_oracle(double t) { return 1.0 / (1.0 + std::exp(-t)); }

// Two points at squared distance -sigma * ln(kappa), so the kernel between them is kappa.
CrfProblem two_node_problem(double u0, double u1, double kappa, double alpha) {
  CrfProblem p;
  p.unary_cost = Vector(2);
  p.unary_cost << u0, u1;
  FeatureMatrix pts = FeatureMatrix::Zero(2, 1);
  pts(1, 0) = std::sqrt(-std::log(kappa));
  p.kernels.push_back({pts, 1.0, 1.0});
  p.alpha = alpha;
  return p;
}

CrfProblem random_problem(std::mt19937_64& rng, Index n, Index d, double alpha, int kernels = 2) {
  CrfProblem p;
  p.unary_cost = testing::random_uniform(rng, n, 0.0, 3.0);
  const Vector w = testing::random_uniform(rng, kernels, 0.1, 1.0);
  std::uniform_real_distribution<double> sig(0.3, 3.0);
  for (int k = 0; k < kernels; ++k) p.kernels.push_back({testing::random_points(rng, n, d), sig(rng), w[k] / w.sum()});
  p.alpha = alpha;
  return p;
}

// The undamped update evaluated with a plain double loop over kappa.
Vector update_oracle(const CrfProblem& p, const Vector& q) {
  const Index n = p.size();
  Vector out(n);
  for (Index i = 0; i < n; ++i) {
    double s = 0.0, t = 0.0;
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      double kappa = 0.0;
      for (const auto& k : p.kernels) kappa += k.weight * std::exp(-(k.points.row(i) - k.points.row(j)).squaredNorm() / k.sigma);
      s += kappa * q[j];
      t += kappa * (1.0 - q[j]);
    }
    const double a = -p.unary_cost[i] - p.alpha * t;
    const double b = -p.alpha * s;
    const double m = std::max(a, b);
    out[i] = std::exp(a - m) / (std::exp(a - m) + std::exp(b - m));
  }
  return out;
}

// Brute force over all labelings, written independently of the library.
Vector enumerate_oracle(const CrfProblem& p) {
  const Index n = p.size();
  std::vector<double> energies;
  for (unsigned x = 0; x < (1u << n); ++x) {
    double e = 0.0;
    for (Index i = 0; i < n; ++i) {
      if (x & (1u << i)) e += p.unary_cost[i];
      for (Index j = 0; j < i; ++j)
        if (((x >> i) & 1u) != ((x >> j) & 1u)) e += p.alpha * pairwise_similarity(p, i, j);
    }
    energies.push_back(e);
  }
  const double emin = *std::min_element(energies.begin(), energies.end());
  double z = 0.0;
  Vector m = Vector::Zero(n);
  for (unsigned x = 0; x < energies.size(); ++x) {
    const double w = std::exp(-(energies[x] - emin));
    z += w;
    for (Index i = 0; i < n; ++i)
      if (x & (1u << i)) m[i] += w;
  }
  return m / z;
}

}  // namespace

TEST_CASE("init_marginals") {
  CrfProblem p;
  p.unary_cost = Vector(4);
  p.unary_cost << 0.0, 50.0, 0.2, 1.0;
  const Vector q = init_marginals(p).q;
  CHECK(q[0] == 0.5);
  CHECK(q[1] > 0.0);
  CHECK(q[1] < 1e-20);
  CHECK(std::abs(q[2] - std::exp(-0.2) / (1 + std::exp(-0.2))) < 1e-15);
  CHECK(std::abs(q[2] - 0.450166) < 1e-6);
  CHECK(std::abs(q[3] - 0.268941) < 1e-6);
  p.unary_cost[1] = 1e6;
  CHECK(init_marginals(p).q[1] == 0.0);
  CHECK_FALSE(std::isnan(init_marginals(p).q[1]));
}

TEST_CASE("exact_filter") {
  SUBCASE("single edge") {
    FeatureMatrix pts(2, 1);
    pts << 0.0, 0.7;
    Vector v(2);
    v << 2.0, 3.0;
    const double k = std::exp(-0.49 / 1.3);
    const Vector out = exact_filter(pts, v, 1.3);
    CHECK(std::abs(out[0] - k * 3.0) < 1e-15);
    CHECK(std::abs(out[1] - k * 2.0) < 1e-15);
  }
  SUBCASE("identical points sum the others") {
    const FeatureMatrix pts = FeatureMatrix::Constant(6, 2, 0.4);
    const Vector v = Vector::LinSpaced(6, 1.0, 6.0);
    const Vector out = exact_filter(pts, v, 0.5);
    for (Index i = 0; i < 6; ++i) CHECK(out[i] == doctest::Approx(v.sum() - v[i]));
  }
  SUBCASE("matches a reverse-ordered summation") {
    std::mt19937_64 rng(9);
    const FeatureMatrix pts = testing::random_points(rng, 50, 3);
    const Vector v = testing::random_uniform(rng, 50, -1.0, 1.0);
    const Vector out = exact_filter(pts, v, 0.8);
    for (Index i = 0; i < 50; ++i) {
      double acc = 0.0;
      for (Index j = 49; j >= 0; --j) {
        if (j == i) continue;
        double sq = 0.0;
        for (Index c = 2; c >= 0; --c) sq += (pts(i, c) - pts(j, c)) * (pts(i, c) - pts(j, c));
        acc += std::exp(-sq / 0.8) * v[j];
      }
      CHECK(std::abs(out[i] - acc) < 1e-10);
    }
  }
  CHECK_THROWS_AS(exact_filter(FeatureMatrix::Zero(2, 1), Vector::Zero(2), 0.0), Error);
  CHECK_THROWS_AS(exact_filter(FeatureMatrix::Zero(2, 1), Vector::Zero(3), 1.0), Error);
}

TEST_CASE("lattice filtering") {
  SUBCASE("all points at one location") {
    const FeatureMatrix pts = FeatureMatrix::Constant(40, 3, 0.25);
    PermutohedralLattice lat(pts, 1.0);
    const Vector out = lat.filter(Vector::Ones(40));
    for (Index i = 0; i < 40; ++i) CHECK(std::abs(out[i] - 39.0) < 1e-6);
  }
  SUBCASE("coincident pairs inside a spread cloud use the exact kernel") {
    std::mt19937_64 rng(21);
    FeatureMatrix pts = testing::random_points(rng, 300, 2);
    pts.row(7) = pts.row(3);
    pts.row(100) = pts.row(3);
    const Vector v = testing::random_uniform(rng, 300, 0.0, 1.0);
    const Vector exact = exact_filter(pts, v, 1.0);
    const Vector approx = PermutohedralLattice(pts, 1.0).filter(v);
    double mean = 0.0;
    for (Index i = 0; i < 300; ++i) mean += std::abs(approx[i] - exact[i]) / exact[i];
    CHECK(mean / 300 < 0.05);
  }
  SUBCASE("accuracy on standardized gaussian points") {
    std::mt19937_64 rng(22);
    for (const Index d : {1, 2, 3}) {
      const FeatureMatrix pts = testing::random_points(rng, 600, d);
      const Vector v = testing::random_uniform(rng, 600);
      const Vector exact = exact_filter(pts, v, 1.0);
      const Vector approx = PermutohedralLattice(pts, 1.0).filter(v);
      double mean = 0.0;
      for (Index i = 0; i < 600; ++i) mean += std::abs(approx[i] - exact[i]) / exact[i];
      CHECK(mean / 600 <= 0.05);
    }
  }
  SUBCASE("repeated application is bitwise identical") {
    std::mt19937_64 rng(23);
    const FeatureMatrix pts = testing::random_points(rng, 400, 3);
    const PermutohedralLattice lat(pts, 0.7);
    const Vector a = testing::random_uniform(rng, 400);
    const Vector b = testing::random_uniform(rng, 400);
    const Vector fa = lat.filter(a);
    (void)lat.filter(b);
    const Vector fa2 = lat.filter(a);
    CHECK(std::memcmp(fa.data(), fa2.data(), sizeof(double) * 400) == 0);
    CHECK(lat.filter(b) == lat.filter(b));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(PermutohedralLattice(FeatureMatrix::Zero(5, 9), 1.0), Error);
    CHECK_THROWS_AS(PermutohedralLattice(FeatureMatrix::Zero(5, 2), 0.0), Error);
    const PermutohedralLattice lat(FeatureMatrix::Zero(5, 2), 1.0);
    CHECK_THROWS_AS(lat.filter(Vector::Zero(4)), Error);
  }
}

TEST_CASE("mean_field_sweep") {
  SUBCASE("alpha zero returns the unary marginals for any input") {
    std::mt19937_64 rng(1);
    CrfProblem p = random_problem(rng, 6, 2, 0.0);
    Marginals q;
    q.q = testing::random_uniform(rng, 6);
    const Vector out = mean_field_sweep(p, q, {}).q;
    CHECK((out - init_marginals(p).q).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("symmetric fixed point") {
    const CrfProblem p = two_node_problem(0.0, 0.0, 1.0, 1.0);
    Marginals q;
    q.q = Vector::Constant(2, 0.5);
    const Vector out = mean_field_sweep(p, q, {}).q;
    CHECK(std::abs(out[0] - 0.5) < 1e-15);
    CHECK(std::abs(out[1] - 0.5) < 1e-15);
  }
  SUBCASE("one hand-evaluated step") {
    const CrfProblem p = two_node_problem(0.0, 2.0, 0.8, 1.0);
    const Marginals q = init_marginals(p);
    const double q0 = 0.5, q1 = std::exp(-2.0) / (1.0 + std::exp(-2.0));
    const double s0 = 0.8 * q1, t0 = 0.8 * (1 - q1), s1 = 0.8 * q0, t1 = 0.8 * (1 - q0);
    const double e0 = std::exp(-0.0 - t0) / (std::exp(-0.0 - t0) + std::exp(-s0));
    const double e1 = std::exp(-2.0 - t1) / (std::exp(-2.0 - t1) + std::exp(-s1));
    const Vector out = mean_field_sweep(p, q, {}).q;
    CHECK(std::abs(out[0] - e0) < 1e-14);
    CHECK(std::abs(out[1] - e1) < 1e-14);
  }
  SUBCASE("damping mixes with the previous marginals") {
    std::mt19937_64 rng(2);
    const CrfProblem p = random_problem(rng, 5, 2, 1.0);
    const Marginals q = init_marginals(p);
    InferenceSettings damped;
    damped.damping = 0.3;
    const Vector plain = mean_field_sweep(p, q, {}).q;
    const Vector mixed = mean_field_sweep(p, q, damped).q;
    CHECK(((0.7 * plain + 0.3 * q.q) - mixed).cwiseAbs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("infer_marginals") {
  SUBCASE("alpha zero converges in one sweep") {
    std::mt19937_64 rng(3);
    const CrfProblem p = random_problem(rng, 7, 2, 0.0);
    const InferenceResult r = infer_marginals(p, {});
    CHECK(r.converged);
    CHECK(r.iterations == 1);
    for (Index i = 0; i < 7; ++i) CHECK(std::abs(r.marginals.q[i] - logistic_oracle(-p.unary_cost[i])) < 1e-12);
  }
  SUBCASE("single node") {
    CrfProblem p;
    p.unary_cost = Vector::Constant(1, 0.7);
    p.alpha = 3.0;
    const InferenceResult r = infer_marginals(p, {});
    CHECK(r.converged);
    CHECK(r.marginals.q[0] == init_marginals(p).q[0]);
    CHECK(std::abs(r.marginals.q[0] - std::exp(-0.7) / (1 + std::exp(-0.7))) < 1e-15);
  }
  SUBCASE("converged marginals satisfy the update equations") {
    std::mt19937_64 rng(4);
    for (int t = 0; t < 10; ++t) {
      const CrfProblem p = random_problem(rng, 10, 3, 1.5);
      InferenceSettings s;
      s.convergence_tol = 1e-9;
      s.damping = 0.5;
      s.max_iterations = 2000;
      const InferenceResult r = infer_marginals(p, s);
      REQUIRE(r.converged);
      CHECK((update_oracle(p, r.marginals.q) - r.marginals.q).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
  SUBCASE("non-convergence is reported, not thrown") {
    std::mt19937_64 rng(5);
    const CrfProblem p = random_problem(rng, 10, 2, 4.0);
    InferenceSettings s;
    s.max_iterations = 1;
    s.convergence_tol = 1e-300;
    const InferenceResult r = infer_marginals(p, s);
    CHECK_FALSE(r.converged);
    CHECK(r.iterations == 1);
  }
  SUBCASE("settings are validated") {
    const CrfProblem p = two_node_problem(0, 1, 0.5, 1);
    InferenceSettings s;
    s.damping = 1.0;
    CHECK_THROWS_AS(infer_marginals(p, s), Error);
    s = {};
    s.convergence_tol = 0.0;
    CHECK_THROWS_AS(infer_marginals(p, s), Error);
    s = {};
    s.max_iterations = 0;
    CHECK_THROWS_AS(infer_marginals(p, s), Error);
  }
}

TEST_CASE("permutation equivariance") {
  std::mt19937_64 rng(6);
  const CrfProblem p = random_problem(rng, 12, 2, 1.0);
  std::vector<Index> perm(12);
  std::iota(perm.begin(), perm.end(), Index{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  CrfProblem q = p;
  for (Index r = 0; r < 12; ++r) {
    q.unary_cost[r] = p.unary_cost[perm[static_cast<std::size_t>(r)]];
    for (std::size_t k = 0; k < p.kernels.size(); ++k)
      q.kernels[k].points.row(r) = p.kernels[k].points.row(perm[static_cast<std::size_t>(r)]);
  }
  InferenceSettings s;
  s.damping = 0.5;
  s.convergence_tol = 1e-12;
  s.max_iterations = 1000;
  const Vector a = infer_marginals(p, s).marginals.q;
  const Vector b = infer_marginals(q, s).marginals.q;
  for (Index r = 0; r < 12; ++r) CHECK(std::abs(b[r] - a[perm[static_cast<std::size_t>(r)]]) < 1e-12);
}

TEST_CASE("attraction: identical nodes move together as alpha grows") {
  CrfProblem p;
  p.unary_cost = Vector(4);
  p.unary_cost << 0.2, 2.5, 1.0, 1.5;
  FeatureMatrix pts(4, 2);
  pts << 0, 0, 0, 0, 50, 0, 0, 50;
  p.kernels.push_back({pts, 1.0, 1.0});
  InferenceSettings s;
  s.damping = 0.5;
  s.convergence_tol = 1e-12;
  s.max_iterations = 5000;
  double prev = 1.0;
  for (double alpha = 0.0; alpha <= 4.0; alpha += 0.25) {
    p.alpha = alpha;
    const Vector q = infer_marginals(p, s).marginals.q;
    const double gap = std::abs(q[0] - q[1]);
    CHECK(gap <= prev + 1e-12);
    prev = gap;
  }
}

TEST_CASE("exact_joint_enumeration") {
  SUBCASE("alpha zero gives the logistic marginals") {
    std::mt19937_64 rng(7);
    const CrfProblem p = random_problem(rng, 9, 2, 0.0);
    const Vector m = exact_joint_enumeration(p);
    for (Index i = 0; i < 9; ++i) CHECK(std::abs(m[i] - logistic_oracle(-p.unary_cost[i])) < 1e-12);
  }
  SUBCASE("label-swap symmetry") {
    for (const double kappa : {0.1, 0.5, 0.99})
      for (const double alpha : {0.0, 1.0, 7.0}) {
        const Vector m = exact_joint_enumeration(two_node_problem(0.0, 0.0, kappa, alpha));
        CHECK(std::abs(m[0] - 0.5) < 1e-15);
        CHECK(std::abs(m[1] - 0.5) < 1e-15);
      }
  }
  SUBCASE("matches an independent brute force") {
    std::mt19937_64 rng(8);
    for (int t = 0; t < 20; ++t) {
      const CrfProblem p = random_problem(rng, 3 + t % 4, 2, 2.0 * (t % 3));
      CHECK((exact_joint_enumeration(p) - enumerate_oracle(p)).cwiseAbs().maxCoeff() < 1e-10);
    }
  }
  SUBCASE("size limit") {
    CrfProblem p;
    p.unary_cost = Vector::Zero(kMaxEnumerationNodes + 1);
    CHECK_THROWS_AS(exact_joint_enumeration(p), Error);
  }
}

TEST_CASE("filtered and exact backends agree") {
  std::mt19937_64 rng(10);
  for (const Index d : {1, 2, 3}) {
    const CrfProblem p = random_problem(rng, 400, d, 0.05, 2);
    InferenceSettings exact, filtered;
    exact.damping = filtered.damping = 0.5;
    exact.convergence_tol = filtered.convergence_tol = 1e-8;
    filtered.backend = Backend::filtered;
    const MessagePasser passer(p, filtered);
    CHECK(passer.lattice_kernels() == 2);
    const Vector a = infer_marginals(p, exact).marginals.q;
    const Vector b = infer_marginals(p, filtered).marginals.q;
    CHECK((a - b).cwiseAbs().maxCoeff() <= 0.02);
  }
}

TEST_CASE("filtered backend falls back to exact filtering above the lattice dimension limit") {
  std::mt19937_64 rng(11);
  const CrfProblem p = random_problem(rng, 30, 9, 1.0, 1);
  InferenceSettings filtered;
  filtered.backend = Backend::filtered;
  const MessagePasser passer(p, filtered);
  CHECK(passer.lattice_kernels() == 0);
  const Vector a = infer_marginals(p, {}).marginals.q;
  const Vector b = infer_marginals(p, filtered).marginals.q;
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("backend names") {
  CHECK(parse_backend("exact") == Backend::exact);
  CHECK(parse_backend("filtered") == Backend::filtered);
  CHECK(to_string(Backend::filtered) == "filtered");
  CHECK_THROWS_AS(parse_backend("fast"), Error);
}
