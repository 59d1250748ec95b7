#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "crfreid/lattice.hpp"
#include "crfreid/potentials.hpp"

namespace crfreid {

enum class Backend { exact, filtered };

Backend parse_backend(const std::string& name);
std::string to_string(Backend backend);

struct InferenceSettings {
  Backend backend = Backend::exact;
  int max_iterations = 100;
  /// Stop once the largest per-node change in a sweep drops below this.
  double convergence_tol = 1e-5;
  /// Returned marginals are (1 - damping) * update + damping * previous.
  double damping = 0.0;
  LatticeOptions lattice;

  void validate() const;
};

/// q[i] = Q_i(x_i = 1). Q_i(x_i = 0) is 1 - q[i].
struct Marginals {
  Vector q;
};

struct InferenceResult {
  Marginals marginals;
  int iterations = 0;
  bool converged = false;
};

/// Unary-only start: q_i = exp(-u_i) / (exp(-u_i) + 1).
Marginals init_marginals(const CrfProblem& problem);

/// out_i = sum_{j != i} exp(-|p_i - p_j|^2 / sigma) * values_j, by direct double loop.
Vector exact_filter(const FeatureMatrix& points, const Vector& values, double sigma);

/// The pairwise message operator (K v)_i = sum_{j != i} kappa(i, j) v_j of one
/// problem. Built once and reused across sweeps; the exact backend caches the
/// dense kappa matrix, the filtered backend one lattice per kernel (kernels whose
/// dimension exceeds the lattice limit fall back to the exact filter).
class MessagePasser {
 public:
  MessagePasser(const CrfProblem& problem, const InferenceSettings& settings);

  Vector apply(const Vector& values) const;

  /// Number of kernels that are served by a lattice.
  int lattice_kernels() const;
  Index size() const { return n_; }

 private:
  struct Term {
    const ResolvedKernel* kernel = nullptr;
    std::optional<PermutohedralLattice> lattice;
  };

  Index n_ = 0;
  std::optional<FeatureMatrix> dense_;
  std::vector<Term> terms_;
};

/// One synchronous update of every node.
Marginals mean_field_sweep(const CrfProblem& problem, const Marginals& q, const InferenceSettings& settings);
Marginals mean_field_sweep(const CrfProblem& problem, const MessagePasser& messages, const Marginals& q,
                           const InferenceSettings& settings);

/// Sweeps from init_marginals until the max-norm change is below tolerance or
/// the iteration budget is spent. Non-convergence is reported, not thrown.
InferenceResult infer_marginals(const CrfProblem& problem, const InferenceSettings& settings);
/// Same, with a prebuilt operator. `messages` must come from a problem with the
/// same kernels; only `alpha` and the unary costs may differ.
InferenceResult infer_marginals(const CrfProblem& problem, const MessagePasser& messages,
                                const InferenceSettings& settings);

/// True marginals P(x_i = 1) of the joint distribution by enumerating all 2^N
/// labelings (log-sum-exp). Limited to N <= 20.
Vector exact_joint_enumeration(const CrfProblem& problem);

inline constexpr Index kMaxEnumerationNodes = 20;

}  // namespace crfreid
