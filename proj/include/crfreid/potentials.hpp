#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "crfreid/data_model.hpp"

namespace crfreid {

double euclidean_distance(std::span<const double> a, std::span<const double> b);

/// sqrt(1 - BC), BC clamped to [0, 1]. Both inputs must be normalized histograms.
double bhattacharyya_distance(std::span<const double> h1, std::span<const double> h2);

/// exp(-|a - b|^2 / sigma). sigma divides the squared norm directly.
double gaussian_kernel(std::span<const double> a, std::span<const double> b, double sigma);

inline std::span<const double> as_span(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }
inline std::span<const double> row_span(const FeatureMatrix& m, Index r) {
  return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

/// Weights of the probe-to-gallery distance per channel. Must sum to one.
struct UnaryConfig {
  std::map<std::string, double> channel_weights;

  void validate() const;
  static UnaryConfig uniform(const std::vector<std::string>& channels);
};

struct KernelSpec {
  std::string channel;
  double sigma = 1.0;
  double weight = 1.0;
};

/// Convex combination of Gaussian kernels over vector channels.
struct PairwiseConfig {
  std::vector<KernelSpec> kernels;

  void validate() const;
  void validate(const Dataset& dataset) const;
};

/// A kernel bound to the gallery features it runs on.
struct ResolvedKernel {
  FeatureMatrix points;
  double sigma = 1.0;
  double weight = 1.0;
};

/// Fully materialized inference instance. The x=0 unary cost and the
/// equal-label pairwise cost are both identically zero and are not stored.
struct CrfProblem {
  Vector unary_cost;
  std::vector<ResolvedKernel> kernels;
  double alpha = 0.0;

  Index size() const { return unary_cost.size(); }
  void validate() const;
};

/// Everything a trained model persists: unary weights, kernels, alpha.
struct ModelParams {
  UnaryConfig unary;
  PairwiseConfig pairwise;
  double alpha = 0.0;

  void validate() const;
};

double unary_cost(const ProbeQuery& probe, const Dataset& dataset, const UnaryConfig& config, Index i);

/// kappa(i, j) = sum_m w_m k(f_i, f_j; sigma_m), the pairwise cost for differing labels.
double pairwise_similarity(const CrfProblem& problem, Index i, Index j);

/// Builds the problem over `gallery` (dataset indices, ascending by convention);
/// an empty span means the whole dataset.
CrfProblem build_crf_problem(const ProbeQuery& probe, const Dataset& dataset, const UnaryConfig& unary,
                             const PairwiseConfig& pairwise, double alpha, std::span<const Index> gallery = {});

ModelParams load_params(const std::filesystem::path& path);
void save_params(const ModelParams& params, const std::filesystem::path& path);
std::string params_to_json(const ModelParams& params);
ModelParams params_from_json(const std::string& text);

}  // namespace crfreid
