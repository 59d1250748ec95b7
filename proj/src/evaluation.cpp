#include "crfreid/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

namespace crfreid {

namespace {

constexpr std::uint64_t kRunSplitStream = 100;
constexpr std::uint64_t kRunProbeStream = 200;
constexpr int kRotatingFolds = 5;

std::vector<std::string> in_dataset_order(const Dataset& ds, const std::set<std::string>& chosen) {
  std::vector<std::string> out;
  for (const auto& p : ds.persons())
    if (chosen.count(p)) out.push_back(p);
  return out;
}

}  // namespace

std::size_t test_person_count(std::size_t persons) {
  const auto k = static_cast<std::size_t>(std::llround(static_cast<double>(persons) / 5.0));
  return std::max<std::size_t>(1, k);
}

SplitPlan split_by_person(const Dataset& ds, std::uint64_t seed) {
  std::vector<std::string> persons = ds.persons();
  if (persons.size() < 2) throw Error("split_by_person: need at least 2 persons, have " + std::to_string(persons.size()));
  std::mt19937_64 rng(seed);
  std::shuffle(persons.begin(), persons.end(), rng);
  const std::size_t k = test_person_count(persons.size());
  SplitPlan plan;
  plan.seed = seed;
  plan.test_persons = in_dataset_order(ds, {persons.begin(), persons.begin() + static_cast<std::ptrdiff_t>(k)});
  plan.train_persons = in_dataset_order(ds, {persons.begin() + static_cast<std::ptrdiff_t>(k), persons.end()});
  return plan;
}

std::vector<ProbeTrial> make_probe_trials(const Dataset& ds, std::span<const std::string> test_persons,
                                          std::uint64_t seed, bool all_probes) {
  std::vector<Index> pool;
  for (const auto& p : test_persons) {
    const auto imgs = ds.images_of(p);
    if (imgs.empty()) throw Error("make_probe_trials: person '" + p + "' has no images");
    pool.insert(pool.end(), imgs.begin(), imgs.end());
  }
  std::sort(pool.begin(), pool.end());

  std::mt19937_64 rng(seed);
  std::vector<ProbeTrial> trials;
  for (const auto& p : test_persons) {
    const auto imgs = ds.images_of(p);
    if (imgs.size() < 2) continue;
    std::vector<Index> probes;
    if (all_probes) {
      probes = imgs;
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, imgs.size() - 1);
      probes.push_back(imgs[pick(rng)]);
    }
    for (const Index probe : probes) {
      ProbeTrial t;
      t.probe = probe;
      for (const Index g : pool)
        if (g != probe) t.gallery.push_back(g);
      for (const Index g : imgs)
        if (g != probe) t.relevant.push_back(g);
      trials.push_back(std::move(t));
    }
  }
  if (trials.empty()) throw Error("make_probe_trials: no test person has two or more images");
  return trials;
}

std::vector<std::size_t> rank_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

PrCurve precision_recall_curve(std::span<const double> scores, std::span<const std::size_t> relevant) {
  if (relevant.empty()) throw Error("precision_recall_curve: empty relevant set");
  for (const double s : scores)
    if (!std::isfinite(s)) throw Error("precision_recall_curve: non-finite score");
  std::vector<char> is_relevant(scores.size(), 0);
  for (const std::size_t r : relevant) {
    if (r >= scores.size()) throw Error("precision_recall_curve: relevant position out of range");
    is_relevant[r] = 1;
  }
  PrCurve curve;
  curve.relevant_total = static_cast<std::size_t>(std::count(is_relevant.begin(), is_relevant.end(), 1));
  std::size_t hits = 0;
  const auto order = rank_order(scores);
  for (std::size_t k = 0; k < order.size(); ++k) {
    hits += static_cast<std::size_t>(is_relevant[order[k]]);
    curve.points.push_back({k + 1, static_cast<double>(hits) / static_cast<double>(k + 1),
                            static_cast<double>(hits) / static_cast<double>(curve.relevant_total)});
  }
  return curve;
}

double max_f_score(const PrCurve& curve) {
  double best = 0.0;
  for (const auto& p : curve.points) {
    const double denom = p.precision + p.recall;
    if (denom > 0.0) best = std::max(best, 2.0 * p.precision * p.recall / denom);
  }
  return best;
}

ProbeOutcome run_trial(const Dataset& ds, const ModelParams& params, const ProbeTrial& trial,
                       const InferenceSettings& settings) {
  const ProbeQuery probe = probe_from_dataset(ds, trial.probe);
  const CrfProblem problem = build_crf_problem(probe, ds, params.unary, params.pairwise, params.alpha, trial.gallery);
  const InferenceResult result = infer_marginals(problem, settings);

  ProbeOutcome out;
  out.probe_id = probe.probe_id;
  out.probe = trial.probe;
  out.gallery = trial.gallery;
  out.relevant = trial.relevant;
  out.marginals = result.marginals.q;
  out.iterations = result.iterations;
  out.converged = result.converged;

  std::vector<std::size_t> positions;
  for (const Index r : trial.relevant) {
    const auto it = std::lower_bound(trial.gallery.begin(), trial.gallery.end(), r);
    if (it == trial.gallery.end() || *it != r) throw Error("run_trial: relevant image missing from gallery");
    positions.push_back(static_cast<std::size_t>(it - trial.gallery.begin()));
  }
  out.curve = precision_recall_curve(as_span(out.marginals), positions);
  out.max_f = max_f_score(out.curve);
  return out;
}

std::vector<std::vector<std::string>> evaluation_test_sets(const Dataset& ds, const EvalOptions& options) {
  if (options.runs < 1) throw Error("evaluate: need at least one run");
  std::vector<std::vector<std::string>> sets;
  if (!options.rotating_folds) {
    for (int r = 0; r < options.runs; ++r)
      sets.push_back(split_by_person(ds, mix_seed(options.seed, kRunSplitStream + static_cast<std::uint64_t>(r))).test_persons);
    return sets;
  }
  std::vector<std::string> persons = ds.persons();
  if (persons.size() < kRotatingFolds)
    throw Error("evaluate: rotating folds need at least " + std::to_string(kRotatingFolds) + " persons");
  std::mt19937_64 rng(mix_seed(options.seed, kRunSplitStream));
  std::shuffle(persons.begin(), persons.end(), rng);
  for (int r = 0; r < options.runs; ++r) {
    std::set<std::string> fold;
    for (std::size_t k = 0; k < persons.size(); ++k)
      if (static_cast<int>(k % kRotatingFolds) == r % kRotatingFolds) fold.insert(persons[k]);
    sets.push_back(in_dataset_order(ds, fold));
  }
  return sets;
}

EvalReport evaluate_method(const Dataset& ds, const ModelParams& params, const EvalOptions& options) {
  params.validate();
  options.inference.validate();
  EvalReport report;
  report.options = options;
  report.runs = options.runs;
  report.alpha = params.alpha;

  const auto test_sets = evaluation_test_sets(ds, options);
  double sum = 0.0;
  for (int r = 0; r < options.runs; ++r) {
    const auto trials = make_probe_trials(ds, test_sets[static_cast<std::size_t>(r)],
                                          mix_seed(options.seed, kRunProbeStream + static_cast<std::uint64_t>(r)),
                                          options.all_probes);
    for (const auto& trial : trials) {
      ProbeOutcome outcome = run_trial(ds, params, trial, options.inference);
      outcome.run = r;
      sum += outcome.max_f;
      report.probes.push_back(std::move(outcome));
    }
  }
  report.mean_max_f = sum / static_cast<double>(report.probes.size());
  return report;
}

std::string report_to_json(const EvalReport& report) {
  nlohmann::ordered_json doc;
  doc["mean_max_f"] = report.mean_max_f;
  doc["runs"] = report.runs;
  doc["probes"] = report.probes.size();
  doc["settings"] = {
      {"alpha", report.alpha},
      {"seed", report.options.seed},
      {"backend", to_string(report.options.inference.backend)},
      {"max_iterations", report.options.inference.max_iterations},
      {"convergence_tol", report.options.inference.convergence_tol},
      {"damping", report.options.inference.damping},
      {"rotating_folds", report.options.rotating_folds},
      {"all_probes", report.options.all_probes},
  };
  doc["per_probe"] = nlohmann::ordered_json::array();
  for (const auto& p : report.probes) {
    doc["per_probe"].push_back({{"run", p.run},
                                {"probe_id", p.probe_id},
                                {"max_f", p.max_f},
                                {"gallery_size", p.gallery.size()},
                                {"relevant", p.relevant.size()},
                                {"iterations", p.iterations},
                                {"converged", p.converged}});
  }
  return doc.dump(2) + "\n";
}

std::string ranking_csv(const Dataset& ds, const ProbeOutcome& outcome) {
  std::ostringstream out;
  out << "probe_id,gallery_image_id,marginal,rank\n";
  const auto order = rank_order(as_span(outcome.marginals));
  for (std::size_t k = 0; k < order.size(); ++k) {
    const Index g = outcome.gallery[order[k]];
    out << outcome.probe_id << ',' << ds.images[static_cast<std::size_t>(g)].image_id << ','
        << format_double(outcome.marginals[static_cast<Index>(order[k])]) << ',' << k + 1 << '\n';
  }
  return out.str();
}

std::string pr_curve_csv(const PrCurve& curve) {
  std::ostringstream out;
  out << "prefix,precision,recall,f\n";
  for (const auto& p : curve.points) {
    const double denom = p.precision + p.recall;
    const double f = denom > 0.0 ? 2.0 * p.precision * p.recall / denom : 0.0;
    out << p.prefix << ',' << format_double(p.precision) << ',' << format_double(p.recall) << ','
        << format_double(f) << '\n';
  }
  return out.str();
}

}  // namespace crfreid
