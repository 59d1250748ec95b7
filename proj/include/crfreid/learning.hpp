#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "crfreid/evaluation.hpp"

namespace crfreid {

struct TrainingPair {
  Index i = 0;
  Index j = 0;
  int gt = 0;  // 1: same person
};

/// Widths lambda * 2^k for k = -i_low .. j_high.
struct WidthGridSpec {
  double lambda = 1.0;
  int i_low = 2;
  int j_high = 2;

  void validate() const;
};

std::vector<double> width_grid(const WidthGridSpec& spec);

/// Every positive pair among the given persons' images, plus an equal number
/// of negative pairs drawn uniformly without replacement. Pairs are (i < j),
/// positives first, each block sorted.
std::vector<TrainingPair> sample_training_pairs(const Dataset& dataset, std::span<const std::string> persons,
                                                std::uint64_t seed);

struct CandidateKernel {
  std::string channel;
  double sigma = 1.0;
};

/// Candidate kernels: every vector channel crossed with its width grid.
/// `overrides` replaces the grid for individual channels.
std::vector<CandidateKernel> candidate_kernels(const Dataset& dataset, const WidthGridSpec& grid,
                                               const std::map<std::string, WidthGridSpec>& overrides = {});

/// Row p, column m: k(f_i, f_j; sigma_m) for pair p on channel c_m.
FeatureMatrix kernel_design_matrix(const Dataset& dataset, std::span<const TrainingPair> pairs,
                                   std::span<const CandidateKernel> candidates);

struct SimplexLsqOptions {
  double ridge = 1e-8;
  double kkt_tolerance = 1e-8;
  int max_iterations = 200000;
};

/// argmin |D w - gt|^2 + ridge |w|^2 over the probability simplex.
Vector learn_kernel_weights(const FeatureMatrix& design, const Vector& gt, const SimplexLsqOptions& options = {});

/// |w - P(w - grad f(w))|_inf, zero exactly at the constrained optimum.
double simplex_kkt_residual(const FeatureMatrix& design, const Vector& gt, const Vector& w, double ridge = 1e-8);

/// Euclidean projection onto { w >= 0, sum w = 1 }.
Vector project_to_simplex(const Vector& v);

std::vector<double> default_alpha_grid();

struct AlphaSelection {
  double alpha = 0.0;
  std::vector<double> grid;
  std::vector<double> mean_max_f;  // aligned with grid
};

/// Person-disjoint k-fold cross-validation of alpha: each fold's persons are
/// probed against each other, max-F is averaged within a fold, then across
/// folds. Ties go to the smallest alpha.
AlphaSelection select_alpha(const Dataset& dataset, std::span<const std::string> train_persons,
                            const UnaryConfig& unary, const PairwiseConfig& pairwise,
                            std::span<const double> alpha_grid, int folds, std::uint64_t seed,
                            const InferenceSettings& settings = {});

}  // namespace crfreid
