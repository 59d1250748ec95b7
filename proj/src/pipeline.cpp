#include "crfreid/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <set>

#include <json.hpp>

namespace crfreid {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kPairStream = 1;
constexpr std::uint64_t kAlphaStream = 2;
constexpr std::uint64_t kBenchStream = 3;

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

fs::path require_out(const RunConfig& config, const char* command) {
  if (config.out.empty()) throw Error(std::string(command) + ": --out is required");
  fs::create_directories(config.out);
  return config.out;
}

std::string safe_name(std::string s) {
  for (char& c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) c = '_';
  return s;
}

template <class F>
double seconds(F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

void SyntheticSpec::validate() const {
  if (persons < 1) throw Error("synth: persons must be positive");
  if (images_per_person < 1) throw Error("synth: images_per_person must be positive");
  if (channels.empty()) throw Error("synth: at least one channel is required");
  std::set<std::string> names;
  for (const auto& c : channels) {
    if (c.name.empty()) throw Error("synth: channel name must not be empty");
    if (!names.insert(c.name).second) throw Error("synth: duplicate channel '" + c.name + "'");
    if (c.dim < 1) throw Error("synth: channel '" + c.name + "' needs dim >= 1");
    if (!(c.within_scale >= 0.0)) throw Error("synth: channel '" + c.name + "' needs within_scale >= 0");
  }
  if (!(within_person_spread >= 0.0) || !(between_person_spread > 0.0))
    throw Error("synth: spreads must be non-negative (between strictly positive)");
}

Dataset synth_generate(const SyntheticSpec& spec) {
  spec.validate();
  Dataset ds;
  const int n = spec.persons * spec.images_per_person;
  const int pid_width = static_cast<int>(std::to_string(spec.persons - 1).size());
  const int img_width = static_cast<int>(std::to_string(n - 1).size());
  auto padded = [](int v, int width) {
    std::string s = std::to_string(v);
    return std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(s.size()))), '0') + s;
  };
  for (int p = 0; p < spec.persons; ++p)
    for (int k = 0; k < spec.images_per_person; ++k)
      ds.images.push_back({"img" + padded(p * spec.images_per_person + k, img_width), "p" + padded(p, pid_width)});

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (const auto& c : spec.channels) {
    FeatureMatrix centers(spec.persons, c.dim);
    for (Index p = 0; p < centers.rows(); ++p)
      for (Index j = 0; j < c.dim; ++j) centers(p, j) = spec.between_person_spread * gauss(rng);
    FeatureMatrix m(n, c.dim);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < c.dim; ++j)
        m(i, j) = centers(i / spec.images_per_person, j) + spec.within_person_spread * c.within_scale * gauss(rng);
    if (c.metric == Metric::bhattacharyya) {
      for (Index i = 0; i < n; ++i) {
        const double top = m.row(i).maxCoeff();
        m.row(i) = (m.row(i).array() - top).exp().matrix();
        m.row(i) /= m.row(i).sum();
      }
    }
    ChannelSpec ch;
    ch.name = c.name;
    ch.kind = ChannelKind::vector;
    ch.dim = c.dim;
    ch.metric = c.metric;
    ch.standardize = c.metric == Metric::euclidean;
    ch.file = c.name + ".csv";
    ds.channels.push_back(ch);
    ds.matrices[c.name] = std::move(m);
  }
  finalize_dataset(ds);
  return ds;
}

std::vector<std::string> default_train_persons(const Dataset& ds, const RunConfig& config) {
  EvalOptions first;
  first.runs = 1;
  first.seed = config.seed;
  first.rotating_folds = config.rotating_folds;
  const auto held_out = evaluation_test_sets(ds, first).front();
  const std::set<std::string> test(held_out.begin(), held_out.end());
  std::vector<std::string> train;
  for (const auto& p : ds.persons())
    if (!test.count(p)) train.push_back(p);
  return train;
}

TrainResult train_model(const Dataset& ds, std::span<const std::string> train_persons, const RunConfig& config) {
  TrainResult result;
  result.train_persons.assign(train_persons.begin(), train_persons.end());

  std::vector<std::string> channel_names;
  for (const auto& c : ds.channels) channel_names.push_back(c.name);
  result.params.unary = UnaryConfig::uniform(channel_names);

  const auto candidates = candidate_kernels(ds, config.grid);
  if (candidates.empty()) throw Error("train: the dataset has no vector channel to build kernels on");
  const auto pairs = sample_training_pairs(ds, train_persons, mix_seed(config.seed, kPairStream));
  result.pairs = pairs.size();
  const FeatureMatrix design = kernel_design_matrix(ds, pairs, candidates);
  Vector gt(static_cast<Index>(pairs.size()));
  for (std::size_t p = 0; p < pairs.size(); ++p) gt[static_cast<Index>(p)] = pairs[p].gt;
  const Vector w = learn_kernel_weights(design, gt);
  for (std::size_t m = 0; m < candidates.size(); ++m)
    result.params.pairwise.kernels.push_back(
        {candidates[m].channel, candidates[m].sigma, std::max(0.0, w[static_cast<Index>(m)])});

  result.alpha = select_alpha(ds, train_persons, result.params.unary, result.params.pairwise, config.alpha_grid,
                              config.folds, mix_seed(config.seed, kAlphaStream), config.inference);
  result.params.alpha = result.alpha.alpha;
  result.params.validate();
  return result;
}

fs::path cmd_synth(const SyntheticSpec& spec, const fs::path& out_dir) {
  if (out_dir.empty()) throw Error("synth: --out is required");
  return save_dataset(synth_generate(spec), out_dir);
}

fs::path cmd_train(const RunConfig& config) {
  const fs::path out = require_out(config, "train");
  const Dataset ds = load_dataset(config.manifest);
  const auto persons = default_train_persons(ds, config);
  const TrainResult tr = train_model(ds, persons, config);

  const fs::path params_path = config.params.empty() ? out / "params.json" : config.params;
  save_params(tr.params, params_path);

  ojson summary;
  summary["seed"] = config.seed;
  summary["train_persons"] = tr.train_persons;
  summary["pairs"] = tr.pairs;
  summary["alpha_grid"] = tr.alpha.grid;
  summary["cv_mean_max_f"] = tr.alpha.mean_max_f;
  summary["alpha"] = tr.alpha.alpha;
  summary["folds"] = config.folds;
  write_text(out / "train_summary.json", summary.dump(2) + "\n");
  return params_path;
}

InferenceResult cmd_infer(const RunConfig& config, const std::string& probe_arg) {
  const fs::path out = require_out(config, "infer");
  const Dataset ds = load_dataset(config.manifest);
  const ModelParams params = load_params(config.params);

  ProbeQuery probe;
  std::vector<Index> gallery;
  const auto it = std::find_if(ds.images.begin(), ds.images.end(),
                               [&](const ImageRecord& r) { return r.image_id == probe_arg; });
  if (it != ds.images.end()) {
    const auto self = static_cast<Index>(it - ds.images.begin());
    probe = probe_from_dataset(ds, self);
    for (Index i = 0; i < ds.size(); ++i)
      if (i != self) gallery.push_back(i);
  } else if (fs::is_regular_file(probe_arg)) {
    probe = load_probe(probe_arg);
    for (Index i = 0; i < ds.size(); ++i) gallery.push_back(i);
  } else {
    throw Error("infer: unknown probe '" + probe_arg + "' (neither an image id nor a probe file)");
  }
  if (gallery.empty()) throw Error("infer: the gallery is empty");

  const CrfProblem problem = build_crf_problem(probe, ds, params.unary, params.pairwise, params.alpha, gallery);
  const InferenceResult result = infer_marginals(problem, config.inference);

  ProbeOutcome outcome;
  outcome.probe_id = probe.probe_id;
  outcome.gallery = gallery;
  outcome.marginals = result.marginals.q;
  write_text(out / "ranking.csv", ranking_csv(ds, outcome));
  return result;
}

std::pair<double, double> cmd_eval(const RunConfig& config) {
  const fs::path out = require_out(config, "eval");
  const Dataset ds = load_dataset(config.manifest);
  const ModelParams params = load_params(config.params);
  ModelParams baseline = params;
  baseline.alpha = 0.0;

  EvalOptions options;
  options.runs = config.runs;
  options.seed = config.seed;
  options.inference = config.inference;
  options.rotating_folds = config.rotating_folds;

  auto write_report = [&](const EvalReport& report, const fs::path& json_path, const fs::path& dir) {
    write_text(json_path, report_to_json(report));
    for (const auto& p : report.probes) {
      const std::string stem = "run" + std::to_string(p.run) + "_" + safe_name(p.probe_id) + ".csv";
      write_text(dir / "rankings" / stem, ranking_csv(ds, p));
      write_text(dir / "pr_curves" / stem, pr_curve_csv(p.curve));
    }
  };
  const EvalReport model = evaluate_method(ds, params, options);
  write_report(model, out / "report.json", out);
  const EvalReport base = evaluate_method(ds, baseline, options);
  write_report(base, out / "baseline_report.json", out / "baseline");
  return {model.mean_max_f, base.mean_max_f};
}

std::vector<FilterBenchRow> filter_bench(std::span<const Index> sizes, int dim, double sigma, std::uint64_t seed,
                                         const LatticeOptions& lattice, int repeats) {
  if (dim < 1) throw Error("filter-bench: dim must be positive");
  if (repeats < 1) throw Error("filter-bench: repeats must be positive");
  std::vector<FilterBenchRow> rows;
  for (std::size_t s = 0; s < sizes.size(); ++s) {
    const Index n = sizes[s];
    if (n < 2) throw Error("filter-bench: sizes must be at least 2");
    std::mt19937_64 rng(mix_seed(seed, kBenchStream + static_cast<std::uint64_t>(n)));
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    FeatureMatrix points(n, dim);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < dim; ++j) points(i, j) = gauss(rng);
    Vector values(n);
    for (Index i = 0; i < n; ++i) values[i] = unit(rng);

    FilterBenchRow row;
    row.n = n;
    Vector exact;
    Vector approx;
    row.exact_seconds = seconds([&] { exact = exact_filter(points, values, sigma); });
    const PermutohedralLattice lat(points, sigma, lattice);
    row.lattice_seconds = std::numeric_limits<double>::infinity();
    for (int r = 0; r < repeats; ++r)
      row.lattice_seconds = std::min(row.lattice_seconds, seconds([&] { approx = lat.filter(values); }));
    double err = 0.0;
    for (Index i = 0; i < n; ++i) err += std::abs(approx[i] - exact[i]) / exact[i];
    row.mean_relative_error = err / static_cast<double>(n);
    rows.push_back(row);
  }
  return rows;
}

fs::path cmd_filter_bench(const RunConfig& config, std::span<const Index> sizes, int dim, double sigma) {
  const fs::path out = require_out(config, "filter-bench");
  const auto rows = filter_bench(sizes, dim, sigma, config.seed, config.inference.lattice);
  std::string text = "N,exact_seconds,lattice_seconds,mean_relative_error\n";
  for (const auto& r : rows)
    text += std::to_string(r.n) + "," + format_double(r.exact_seconds) + "," + format_double(r.lattice_seconds) + "," +
            format_double(r.mean_relative_error) + "\n";
  const fs::path path = out / "filter_bench.csv";
  write_text(path, text);
  return path;
}

}  // namespace crfreid
