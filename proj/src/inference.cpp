#include "crfreid/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace crfreid {

namespace {

// Above this node count the exact backend stops caching the dense kappa matrix.
constexpr Index kDenseCacheLimit = 4096;

double logistic(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

}  // namespace

Backend parse_backend(const std::string& name) {
  if (name == "exact") return Backend::exact;
  if (name == "filtered") return Backend::filtered;
  throw Error("unknown backend '" + name + "' (expected exact or filtered)");
}

std::string to_string(Backend backend) { return backend == Backend::exact ? "exact" : "filtered"; }

void InferenceSettings::validate() const {
  if (max_iterations < 1) throw Error("inference: max_iterations must be positive");
  if (!(convergence_tol > 0.0)) throw Error("inference: convergence_tol must be positive");
  if (!(damping >= 0.0 && damping < 1.0)) throw Error("inference: damping must lie in [0, 1)");
}

Marginals init_marginals(const CrfProblem& problem) {
  Marginals m;
  m.q.resize(problem.size());
  for (Index i = 0; i < problem.size(); ++i) m.q[i] = logistic(-problem.unary_cost[i]);
  return m;
}

Vector exact_filter(const FeatureMatrix& points, const Vector& values, double sigma) {
  if (!(sigma > 0.0)) throw Error("exact_filter: sigma must be positive");
  if (values.size() != points.rows()) throw Error("exact_filter: value vector length does not match point count");
  const Index n = points.rows();
  Vector out = Vector::Zero(n);
  for (Index i = 0; i < n; ++i) {
    double acc = 0.0;
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      acc += std::exp(-(points.row(i) - points.row(j)).squaredNorm() / sigma) * values[j];
    }
    out[i] = acc;
  }
  return out;
}

MessagePasser::MessagePasser(const CrfProblem& problem, const InferenceSettings& settings) : n_(problem.size()) {
  if (settings.backend == Backend::exact && n_ <= kDenseCacheLimit) {
    FeatureMatrix kappa = FeatureMatrix::Zero(n_, n_);
    for (const auto& k : problem.kernels) {
      for (Index i = 0; i < n_; ++i)
        for (Index j = i + 1; j < n_; ++j) {
          const double v = k.weight * std::exp(-(k.points.row(i) - k.points.row(j)).squaredNorm() / k.sigma);
          kappa(i, j) += v;
          kappa(j, i) += v;
        }
    }
    dense_ = std::move(kappa);
    return;
  }
  for (const auto& k : problem.kernels) {
    Term term;
    term.kernel = &k;
    if (settings.backend == Backend::filtered && n_ > 1 && k.weight != 0.0 && k.points.cols() <= settings.lattice.max_dim)
      term.lattice.emplace(k.points, k.sigma, settings.lattice);
    terms_.push_back(std::move(term));
  }
}

int MessagePasser::lattice_kernels() const {
  return static_cast<int>(std::count_if(terms_.begin(), terms_.end(), [](const Term& t) { return t.lattice.has_value(); }));
}

Vector MessagePasser::apply(const Vector& values) const {
  if (values.size() != n_) throw Error("message passing: value vector length does not match node count");
  if (dense_) return *dense_ * values;
  Vector out = Vector::Zero(n_);
  for (const auto& t : terms_) {
    if (t.kernel->weight == 0.0) continue;
    if (t.lattice)
      out += t.kernel->weight * t.lattice->filter(values);
    else
      out += t.kernel->weight * exact_filter(t.kernel->points, values, t.kernel->sigma);
  }
  return out;
}

Marginals mean_field_sweep(const CrfProblem& problem, const Marginals& q, const InferenceSettings& settings) {
  return mean_field_sweep(problem, MessagePasser(problem, settings), q, settings);
}

Marginals mean_field_sweep(const CrfProblem& problem, const MessagePasser& messages, const Marginals& q,
                           const InferenceSettings& settings) {
  const Index n = problem.size();
  if (q.q.size() != n) throw Error("mean_field_sweep: marginals do not match node count");
  Marginals next;
  next.q.resize(n);
  if (problem.alpha == 0.0 || problem.kernels.empty() || n == 1) {
    for (Index i = 0; i < n; ++i) next.q[i] = logistic(-problem.unary_cost[i]);
  } else {
    // S: expected similarity to nodes labelled 1, T: to nodes labelled 0.
    // log Q(1) = -u - alpha T, log Q(0) = -alpha S, up to the shared normalizer.
    const Vector s = messages.apply(q.q);
    const Vector t = messages.apply((1.0 - q.q.array()).matrix());
    for (Index i = 0; i < n; ++i)
      next.q[i] = logistic(-problem.unary_cost[i] - problem.alpha * t[i] + problem.alpha * s[i]);
  }
  if (settings.damping > 0.0) next.q = (1.0 - settings.damping) * next.q + settings.damping * q.q;
  return next;
}

InferenceResult infer_marginals(const CrfProblem& problem, const InferenceSettings& settings) {
  settings.validate();
  problem.validate();
  return infer_marginals(problem, MessagePasser(problem, settings), settings);
}

InferenceResult infer_marginals(const CrfProblem& problem, const MessagePasser& messages,
                                const InferenceSettings& settings) {
  settings.validate();
  problem.validate();
  if (messages.size() != problem.size()) throw Error("infer_marginals: message operator does not match node count");
  InferenceResult result;
  result.marginals = init_marginals(problem);
  for (int it = 1; it <= settings.max_iterations; ++it) {
    Marginals next = mean_field_sweep(problem, messages, result.marginals, settings);
    const double change = next.q.size() ? (next.q - result.marginals.q).cwiseAbs().maxCoeff() : 0.0;
    result.marginals = std::move(next);
    result.iterations = it;
    if (change < settings.convergence_tol) {
      result.converged = true;
      break;
    }
  }
  return result;
}

Vector exact_joint_enumeration(const CrfProblem& problem) {
  const Index n = problem.size();
  if (n > kMaxEnumerationNodes)
    throw Error("exact_joint_enumeration: " + std::to_string(n) + " nodes exceeds the limit of " +
                std::to_string(kMaxEnumerationNodes));
  if (n == 0) return Vector();

  FeatureMatrix kappa = FeatureMatrix::Zero(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) kappa(i, j) = pairwise_similarity(problem, i, j);

  const std::uint64_t states = std::uint64_t{1} << n;
  std::vector<double> log_weight(states);
  double max_log = -std::numeric_limits<double>::infinity();
  for (std::uint64_t x = 0; x < states; ++x) {
    double energy = 0.0;
    for (Index i = 0; i < n; ++i)
      if ((x >> i) & 1U) energy += problem.unary_cost[i];
    double cut = 0.0;
    for (Index i = 0; i < n; ++i)
      for (Index j = i + 1; j < n; ++j)
        if (((x >> i) ^ (x >> j)) & 1U) cut += kappa(i, j);
    log_weight[x] = -energy - problem.alpha * cut;
    max_log = std::max(max_log, log_weight[x]);
  }

  double z = 0.0;
  Vector ones = Vector::Zero(n);
  for (std::uint64_t x = 0; x < states; ++x) {
    const double w = std::exp(log_weight[x] - max_log);
    z += w;
    for (Index i = 0; i < n; ++i)
      if ((x >> i) & 1U) ones[i] += w;
  }
  return ones / z;
}

}  // namespace crfreid
