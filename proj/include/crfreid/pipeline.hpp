#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "crfreid/evaluation.hpp"
#include "crfreid/learning.hpp"

namespace crfreid {

struct SyntheticChannel {
  std::string name;
  int dim = 4;
  Metric metric = Metric::euclidean;
  /// Multiplies `within_person_spread` for this channel only.
  double within_scale = 1.0;
};

/// Clustered identities: each person is a center drawn with sd
/// `between_person_spread`, each image adds noise with sd `within_person_spread`.
/// The defaults give overlapping identities: a tight texture channel next to a
/// noisy color channel, so unary-only ranking is mediocre while gallery-side
/// similarity still carries identity.
struct SyntheticSpec {
  int persons = 40;
  int images_per_person = 5;
  std::vector<SyntheticChannel> channels = {{"texture", 8, Metric::euclidean, 0.35}, {"color", 4, Metric::euclidean, 1.0}};
  double within_person_spread = 2.0;
  double between_person_spread = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Euclidean channels hold raw coordinates (flagged for standardization);
/// bhattacharyya channels hold the softmax of the coordinates.
Dataset synth_generate(const SyntheticSpec& spec);

/// Options shared by the commands. Seeds are always explicit.
struct RunConfig {
  std::filesystem::path manifest;
  std::filesystem::path params;
  std::filesystem::path out;
  std::uint64_t seed = 0;
  InferenceSettings inference;
  WidthGridSpec grid;
  std::vector<double> alpha_grid = default_alpha_grid();
  int folds = 3;
  int runs = 5;
  bool rotating_folds = false;
};

struct TrainResult {
  ModelParams params;
  std::vector<std::string> train_persons;
  std::size_t pairs = 0;
  AlphaSelection alpha;
};

/// Pairs, width grid, design matrix, kernel weights and cross-validated alpha
/// for the given persons. Unary weights are uniform over every channel.
TrainResult train_model(const Dataset& dataset, std::span<const std::string> train_persons, const RunConfig& config);

/// Persons left for training once the first evaluation run's test persons
/// (under the same seed) are held out.
std::vector<std::string> default_train_persons(const Dataset& dataset, const RunConfig& config);

std::filesystem::path cmd_synth(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

/// Writes the parameter file (config.params, or out/params.json) and
/// out/train_summary.json; returns the parameter path.
std::filesystem::path cmd_train(const RunConfig& config);

/// `probe` is an image id of the dataset (excluded from its own gallery) or a
/// path to a probe file. Writes out/ranking.csv and returns the inference result.
InferenceResult cmd_infer(const RunConfig& config, const std::string& probe);

/// Writes report.json, baseline_report.json, rankings/*.csv and pr_curves/*.csv
/// (the baseline's under baseline/). Returns {model, baseline} mean max-F.
std::pair<double, double> cmd_eval(const RunConfig& config);

struct FilterBenchRow {
  Index n = 0;
  double exact_seconds = 0.0;
  double lattice_seconds = 0.0;
  double mean_relative_error = 0.0;
};

/// Standard normal points in `dim` dimensions, uniform [0, 1] values. Lattice
/// time excludes the build and is the best of `repeats` passes.
std::vector<FilterBenchRow> filter_bench(std::span<const Index> sizes, int dim, double sigma, std::uint64_t seed,
                                         const LatticeOptions& lattice = {}, int repeats = 3);

/// Writes out/filter_bench.csv.
std::filesystem::path cmd_filter_bench(const RunConfig& config, std::span<const Index> sizes, int dim, double sigma);

}  // namespace crfreid
