#pragma once

#include <cstdint>
#include <vector>

#include "crfreid/types.hpp"

namespace crfreid {

/// Approximate Gaussian filtering on a permutohedral (simplicial) lattice.
///
/// Points are embedded with a per-kernel scale so that splat, a [1 2 1]/4 blur
/// along each of the d+1 lattice axes, and slice together approximate
///
///   out_i = sum_{j != i} exp(-|p_i - p_j|^2 / sigma) * v_j
///
/// in time linear in the number of points. The lattice is built once and can
/// then filter any number of value vectors; filtering is a pure function of the
/// lattice and the input.
/// Resolution knobs. With `blur_passes` = p the lattice is refined by
/// sqrt((3p + 1) / 4) and blurred p times per axis, which keeps the total
/// variance fixed while tightening the Gaussian fit. `dilation` adds that many
/// rings of empty vertices around the occupied ones so sparse regions still
/// receive blur mass. Zero / negative values select per-dimension defaults.
struct LatticeOptions {
  int max_dim = 8;
  int blur_passes = 0;
  int dilation = -1;
  /// Points whose lattice estimate of sum_{j != i} k(p_i, p_j) falls below this
  /// are filtered exactly (an O(N) row each).
  double isolation_threshold = 0.5;

  /// Refined lattice up to d = 3; the classic single-pass lattice beyond,
  /// where the refined vertex count grows too quickly.
  static LatticeOptions resolved(int dim, LatticeOptions options);
};

inline LatticeOptions LatticeOptions::resolved(int dim, LatticeOptions options) {
  if (options.blur_passes <= 0) options.blur_passes = dim <= 3 ? 8 : 1;
  if (options.dilation < 0) options.dilation = dim <= 3 ? 5 : 1;
  return options;
}

class PermutohedralLattice {
 public:
  PermutohedralLattice(const FeatureMatrix& points, double sigma, const LatticeOptions& options = {});

  /// Filtered response with the self term removed. Pairs of exactly
  /// coincident points use the exact kernel value 1.
  Vector filter(const Vector& values) const;

  /// Full splat/blur/slice response, self contribution included.
  Vector apply(const Vector& values) const;

  Index size() const { return n_; }
  int dim() const { return d_; }
  double sigma() const { return sigma_; }
  Index vertex_count() const { return static_cast<Index>(keys_.size() / static_cast<std::size_t>(d_)); }

  /// Response of point i to its own unit splat: on an untruncated lattice, or
  /// through the actual vertex set for points that share their location.
  double self_weight(Index i) const { return self_weight_[static_cast<std::size_t>(i)]; }

  /// Points filtered exactly because the lattice sees almost no neighbour mass.
  const std::vector<Index>& isolated() const { return isolated_; }

 private:
  class KeyTable;

  /// Self response of point p through the blur as built, missing vertices included.
  double truncated_self_response(std::size_t p) const;

  int d_ = 0;
  Index n_ = 0;
  double sigma_ = 0.0;
  double normalization_ = 1.0;
  int passes_ = 1;
  std::vector<int> keys_;                 // vertex_count * d
  std::vector<std::int32_t> offsets_;     // n * (d + 1) vertex ids
  std::vector<double> barycentric_;       // n * (d + 1)
  std::vector<std::int32_t> neighbors_;   // (d + 1) * vertex_count * 2, -1 if absent
  std::vector<double> self_weight_;       // n
  std::vector<std::int32_t> group_;       // n, coincident-point group ids (empty if none coincide)
  std::size_t group_count_ = 0;
  FeatureMatrix points_;
  std::vector<Index> isolated_;           // ascending
};

}  // namespace crfreid
