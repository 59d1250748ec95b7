#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "crfreid/inference.hpp"

namespace crfreid {

/// Person-disjoint train/test split; about one fifth of the persons are test.
struct SplitPlan {
  std::vector<std::string> train_persons;
  std::vector<std::string> test_persons;
  std::uint64_t seed = 0;
};

SplitPlan split_by_person(const Dataset& dataset, std::uint64_t seed);

/// round(persons / 5), at least 1.
std::size_t test_person_count(std::size_t persons);

struct ProbeTrial {
  Index probe = 0;
  std::vector<Index> gallery;   // dataset indices, ascending
  std::vector<Index> relevant;  // dataset indices, subset of gallery
};

/// One probe per test person with at least two images (or every image of such
/// persons when `all_probes` is set); the gallery is every other test image.
std::vector<ProbeTrial> make_probe_trials(const Dataset& dataset, std::span<const std::string> test_persons,
                                          std::uint64_t seed, bool all_probes = false);

struct PrPoint {
  std::size_t prefix = 0;
  double precision = 0.0;
  double recall = 0.0;
};

struct PrCurve {
  std::vector<PrPoint> points;
  std::size_t relevant_total = 0;
};

/// Positions of `scores` sorted by descending score, ties by ascending position.
std::vector<std::size_t> rank_order(std::span<const double> scores);

/// `relevant` holds positions into `scores`.
PrCurve precision_recall_curve(std::span<const double> scores, std::span<const std::size_t> relevant);

/// max over the curve of 2PR / (P + R), with F = 0 where P + R = 0.
double max_f_score(const PrCurve& curve);

struct EvalOptions {
  int runs = 5;
  std::uint64_t seed = 0;
  InferenceSettings inference;
  /// Rotate through a fixed 5-way person partition instead of drawing a fresh
  /// random split per run.
  bool rotating_folds = false;
  bool all_probes = false;
};

struct ProbeOutcome {
  int run = 0;
  std::string probe_id;
  Index probe = 0;
  std::vector<Index> gallery;
  std::vector<Index> relevant;
  Vector marginals;
  PrCurve curve;
  double max_f = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct EvalReport {
  std::vector<ProbeOutcome> probes;
  double mean_max_f = 0.0;
  int runs = 0;
  double alpha = 0.0;
  EvalOptions options;
};

/// Scores one trial: builds its problem, runs inference, ranks the gallery by marginal.
ProbeOutcome run_trial(const Dataset& dataset, const ModelParams& params, const ProbeTrial& trial,
                       const InferenceSettings& settings);

EvalReport evaluate_method(const Dataset& dataset, const ModelParams& params, const EvalOptions& options);

/// Persons of each run's test split, following `options` (shared by evaluate_method).
std::vector<std::vector<std::string>> evaluation_test_sets(const Dataset& dataset, const EvalOptions& options);

std::string report_to_json(const EvalReport& report);
/// probe_id,gallery_image_id,marginal,rank
std::string ranking_csv(const Dataset& dataset, const ProbeOutcome& outcome);
/// prefix,precision,recall,f
std::string pr_curve_csv(const PrCurve& curve);

}  // namespace crfreid
