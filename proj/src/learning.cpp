#include "crfreid/learning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <tuple>

#include <Eigen/Dense>

namespace crfreid {

void WidthGridSpec::validate() const {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw Error("width grid: lambda must be positive");
  if (i_low < 0 || j_high < 0) throw Error("width grid: exponent bounds must be non-negative");
}

std::vector<double> width_grid(const WidthGridSpec& spec) {
  spec.validate();
  std::vector<double> widths;
  for (int k = -spec.i_low; k <= spec.j_high; ++k) widths.push_back(std::ldexp(spec.lambda, k));
  return widths;
}

std::vector<TrainingPair> sample_training_pairs(const Dataset& ds, std::span<const std::string> persons,
                                                std::uint64_t seed) {
  const auto known = ds.persons();
  std::vector<Index> images;
  for (const auto& p : persons) {
    if (std::find(known.begin(), known.end(), p) == known.end())
      throw Error("sample_training_pairs: unknown person '" + p + "'");
    const auto imgs = ds.images_of(p);
    images.insert(images.end(), imgs.begin(), imgs.end());
  }
  std::sort(images.begin(), images.end());
  images.erase(std::unique(images.begin(), images.end()), images.end());

  auto person = [&](Index i) -> const std::string& { return ds.images[static_cast<std::size_t>(i)].person_id; };

  std::vector<TrainingPair> pairs;
  for (std::size_t a = 0; a < images.size(); ++a)
    for (std::size_t b = a + 1; b < images.size(); ++b)
      if (person(images[a]) == person(images[b])) pairs.push_back({images[a], images[b], 1});
  const std::size_t positives = pairs.size();
  if (positives == 0) throw Error("sample_training_pairs: no positive pairs (every person has a single image)");

  const std::size_t n = images.size();
  const std::size_t negatives_total = n * (n - 1) / 2 - positives;
  if (negatives_total < positives)
    throw Error("sample_training_pairs: only " + std::to_string(negatives_total) + " negative pairs for " +
                std::to_string(positives) + " positives");

  std::mt19937_64 rng(seed);
  std::vector<TrainingPair> negatives;
  if (negatives_total <= 4 * positives) {
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = a + 1; b < n; ++b)
        if (person(images[a]) != person(images[b])) negatives.push_back({images[a], images[b], 0});
    // Partial Fisher-Yates: the first `positives` entries are a uniform sample.
    for (std::size_t k = 0; k < positives; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, negatives.size() - 1);
      std::swap(negatives[k], negatives[pick(rng)]);
    }
    negatives.resize(positives);
  } else {
    std::set<std::pair<Index, Index>> chosen;
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    while (chosen.size() < positives) {
      std::size_t a = pick(rng);
      std::size_t b = pick(rng);
      if (a == b) continue;
      if (a > b) std::swap(a, b);
      if (person(images[a]) == person(images[b])) continue;
      chosen.insert({images[a], images[b]});
    }
    for (const auto& [i, j] : chosen) negatives.push_back({i, j, 0});
  }
  std::sort(negatives.begin(), negatives.end(),
            [](const TrainingPair& x, const TrainingPair& y) { return std::tie(x.i, x.j) < std::tie(y.i, y.j); });
  pairs.insert(pairs.end(), negatives.begin(), negatives.end());
  return pairs;
}

std::vector<CandidateKernel> candidate_kernels(const Dataset& ds, const WidthGridSpec& grid,
                                               const std::map<std::string, WidthGridSpec>& overrides) {
  for (const auto& [name, spec] : overrides) {
    if (ds.channel(name).kind != ChannelKind::vector)
      throw Error("width grid override for '" + name + "': not a vector channel");
  }
  std::vector<CandidateKernel> out;
  for (const auto& ch : ds.channels) {
    if (ch.kind != ChannelKind::vector) continue;
    const auto it = overrides.find(ch.name);
    for (const double sigma : width_grid(it == overrides.end() ? grid : it->second)) out.push_back({ch.name, sigma});
  }
  return out;
}

FeatureMatrix kernel_design_matrix(const Dataset& ds, std::span<const TrainingPair> pairs,
                                   std::span<const CandidateKernel> candidates) {
  FeatureMatrix design(static_cast<Index>(pairs.size()), static_cast<Index>(candidates.size()));
  for (std::size_t m = 0; m < candidates.size(); ++m) {
    const ChannelSpec& ch = ds.channel(candidates[m].channel);
    if (ch.kind != ChannelKind::vector)
      throw Error("kernel_design_matrix: channel '" + ch.name + "' has no feature vectors");
    const FeatureMatrix& f = ds.features.at(ch.name);
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      const auto& pr = pairs[p];
      if (pr.i < 0 || pr.j < 0 || pr.i >= ds.size() || pr.j >= ds.size() || pr.i == pr.j)
        throw Error("kernel_design_matrix: invalid pair");
      design(static_cast<Index>(p), static_cast<Index>(m)) =
          gaussian_kernel(row_span(f, pr.i), row_span(f, pr.j), candidates[m].sigma);
    }
  }
  return design;
}

Vector project_to_simplex(const Vector& v) {
  const Index m = v.size();
  if (m == 0) throw Error("project_to_simplex: empty vector");
  std::vector<double> u(v.data(), v.data() + m);
  std::sort(u.begin(), u.end(), std::greater<>());
  double css = 0.0;
  double theta = 0.0;
  for (Index j = 0; j < m; ++j) {
    css += u[static_cast<std::size_t>(j)];
    const double t = (css - 1.0) / static_cast<double>(j + 1);
    if (u[static_cast<std::size_t>(j)] - t > 0.0) theta = t;
  }
  return (v.array() - theta).cwiseMax(0.0).matrix();
}

namespace {

struct Quadratic {
  Eigen::MatrixXd h;  // D^T D + ridge I
  Eigen::VectorXd b;  // D^T gt

  Eigen::VectorXd gradient(const Eigen::VectorXd& w) const { return 2.0 * (h * w - b); }
  // Objective up to the constant |gt|^2.
  double value(const Eigen::VectorXd& w) const { return w.dot(h * w) - 2.0 * b.dot(w); }
  double residual(const Eigen::VectorXd& w) const {
    return (w - project_to_simplex(w - gradient(w))).cwiseAbs().maxCoeff();
  }
};

Quadratic make_quadratic(const FeatureMatrix& design, const Vector& gt, double ridge) {
  Quadratic q;
  q.h = design.transpose() * design;
  q.h.diagonal().array() += ridge;
  q.b = design.transpose() * gt;
  return q;
}

void check_inputs(const FeatureMatrix& design, const Vector& gt) {
  if (design.rows() < 1 || design.cols() < 1) throw Error("learn_kernel_weights: empty design matrix");
  if (gt.size() != design.rows()) throw Error("learn_kernel_weights: target length does not match design rows");
  if (!design.allFinite() || !gt.allFinite()) throw Error("learn_kernel_weights: non-finite design or target entries");
}

// Solve the equality-constrained problem on a fixed support; empty if the
// solution leaves the simplex.
std::optional<Eigen::VectorXd> solve_on_support(const Quadratic& q, const std::vector<Index>& support) {
  const auto s = static_cast<Index>(support.size());
  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(s + 1, s + 1);
  Eigen::VectorXd rhs(s + 1);
  for (Index a = 0; a < s; ++a) {
    for (Index c = 0; c < s; ++c)
      kkt(a, c) = 2.0 * q.h(support[static_cast<std::size_t>(a)], support[static_cast<std::size_t>(c)]);
    kkt(a, s) = 1.0;
    kkt(s, a) = 1.0;
    rhs[a] = 2.0 * q.b[support[static_cast<std::size_t>(a)]];
  }
  rhs[s] = 1.0;
  const Eigen::VectorXd sol = kkt.fullPivLu().solve(rhs);
  if (!sol.allFinite()) return std::nullopt;
  Eigen::VectorXd w = Eigen::VectorXd::Zero(q.b.size());
  for (Index a = 0; a < s; ++a) {
    if (sol[a] < 0.0) return std::nullopt;
    w[support[static_cast<std::size_t>(a)]] = sol[a];
  }
  return w;
}

}  // namespace

double simplex_kkt_residual(const FeatureMatrix& design, const Vector& gt, const Vector& w, double ridge) {
  check_inputs(design, gt);
  return make_quadratic(design, gt, ridge).residual(w);
}

Vector learn_kernel_weights(const FeatureMatrix& design, const Vector& gt, const SimplexLsqOptions& options) {
  check_inputs(design, gt);
  const Index m = design.cols();
  if (m == 1) return Vector::Ones(1);

  const Quadratic q = make_quadratic(design, gt, options.ridge);
  const double lipschitz = 2.0 * Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(q.h).eigenvalues().maxCoeff();

  // Accelerated projected gradient with function-value restart.
  Eigen::VectorXd w = Eigen::VectorXd::Constant(m, 1.0 / static_cast<double>(m));
  Eigen::VectorXd y = w;
  double t = 1.0;
  double fw = q.value(w);
  for (int it = 1; it <= options.max_iterations; ++it) {
    const Eigen::VectorXd next = project_to_simplex(y - q.gradient(y) / lipschitz);
    const double fnext = q.value(next);
    if (fnext > fw) {
      y = w;
      t = 1.0;
      continue;
    }
    const double tnext = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    y = next + ((t - 1.0) / tnext) * (next - w);
    t = tnext;
    w = next;
    fw = fnext;
    if (it % 64 == 0 && q.residual(w) <= options.kkt_tolerance) break;
  }

  // Polish on the identified support.
  std::vector<Index> support;
  for (Index k = 0; k < m; ++k)
    if (w[k] > 1e-10) support.push_back(k);
  if (!support.empty()) {
    if (const auto polished = solve_on_support(q, support)) {
      if (q.residual(*polished) <= q.residual(w)) w = *polished;
    }
  }
  return w;
}

std::vector<double> default_alpha_grid() { return {0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0}; }

AlphaSelection select_alpha(const Dataset& ds, std::span<const std::string> train_persons, const UnaryConfig& unary,
                            const PairwiseConfig& pairwise, std::span<const double> alpha_grid, int folds,
                            std::uint64_t seed, const InferenceSettings& settings) {
  if (alpha_grid.empty()) throw Error("select_alpha: empty alpha grid");
  for (const double a : alpha_grid)
    if (!(a >= 0.0) || !std::isfinite(a)) throw Error("select_alpha: alpha values must be finite and >= 0");
  if (folds < 2) throw Error("select_alpha: need at least 2 folds");
  if (train_persons.size() < static_cast<std::size_t>(folds))
    throw Error("select_alpha: infeasible split, " + std::to_string(train_persons.size()) + " persons for " +
                std::to_string(folds) + " folds");

  std::vector<std::string> persons(train_persons.begin(), train_persons.end());
  std::mt19937_64 rng(seed);
  std::shuffle(persons.begin(), persons.end(), rng);

  AlphaSelection sel;
  sel.grid.assign(alpha_grid.begin(), alpha_grid.end());
  sel.mean_max_f.assign(alpha_grid.size(), 0.0);

  for (int f = 0; f < folds; ++f) {
    std::vector<std::string> held_out;
    for (std::size_t k = static_cast<std::size_t>(f); k < persons.size(); k += static_cast<std::size_t>(folds))
      held_out.push_back(persons[k]);
    std::vector<ProbeTrial> trials;
    try {
      trials = make_probe_trials(ds, held_out, mix_seed(seed, static_cast<std::uint64_t>(f)));
    } catch (const Error& e) {
      throw Error("select_alpha: infeasible split, fold " + std::to_string(f) + ": " + e.what());
    }

    std::vector<double> fold_sum(alpha_grid.size(), 0.0);
    for (const auto& trial : trials) {
      const ProbeQuery probe = probe_from_dataset(ds, trial.probe);
      CrfProblem problem = build_crf_problem(probe, ds, unary, pairwise, 0.0, trial.gallery);
      const MessagePasser messages(problem, settings);
      std::vector<std::size_t> positions;
      for (const Index r : trial.relevant)
        positions.push_back(static_cast<std::size_t>(
            std::lower_bound(trial.gallery.begin(), trial.gallery.end(), r) - trial.gallery.begin()));
      for (std::size_t a = 0; a < alpha_grid.size(); ++a) {
        problem.alpha = alpha_grid[a];
        const InferenceResult res = infer_marginals(problem, messages, settings);
        fold_sum[a] += max_f_score(precision_recall_curve(as_span(res.marginals.q), positions));
      }
    }
    for (std::size_t a = 0; a < alpha_grid.size(); ++a)
      sel.mean_max_f[a] += fold_sum[a] / static_cast<double>(trials.size()) / static_cast<double>(folds);
  }

  std::size_t best = 0;
  for (std::size_t a = 1; a < alpha_grid.size(); ++a) {
    const bool better = sel.mean_max_f[a] > sel.mean_max_f[best];
    const bool tie_smaller = sel.mean_max_f[a] == sel.mean_max_f[best] && alpha_grid[a] < alpha_grid[best];
    if (better || tie_smaller) best = a;
  }
  sel.alpha = alpha_grid[best];
  return sel;
}

}  // namespace crfreid
