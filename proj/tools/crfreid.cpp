// Command-line front end: synth, train, infer, eval, filter-bench.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "crfreid/pipeline.hpp"

namespace {

using namespace crfreid;

struct Flags {
  std::string manifest;
  std::string params;
  std::string out;
  std::uint64_t seed = 0;
  std::vector<double> alpha_grid = default_alpha_grid();
  double lambda = 1.0;
  int grid_low = 2;
  int grid_high = 2;
  std::string backend = "exact";
  int folds = 3;
  int runs = 5;
  bool rotating_folds = false;
  double damping = 0.0;
  int max_iter = 100;
  double tol = 1e-5;
};

void add_common(CLI::App* cmd, Flags& f, bool needs_manifest) {
  auto* m = cmd->add_option("--manifest", f.manifest, "Dataset manifest (JSON)");
  if (needs_manifest) m->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", f.out, "Output directory")->required();
  cmd->add_option("--seed", f.seed, "Random seed")->required();
  cmd->add_option("--backend", f.backend, "Message passing backend")
      ->check(CLI::IsMember({"exact", "filtered"}))
      ->capture_default_str();
  cmd->add_option("--damping", f.damping, "Mean-field damping in [0, 1)")->capture_default_str();
  cmd->add_option("--max-iter", f.max_iter, "Mean-field iteration budget")->capture_default_str();
  cmd->add_option("--tol", f.tol, "Mean-field convergence tolerance")->capture_default_str();
}

RunConfig to_config(const Flags& f) {
  RunConfig c;
  c.manifest = f.manifest;
  c.params = f.params;
  c.out = f.out;
  c.seed = f.seed;
  c.inference.backend = parse_backend(f.backend);
  c.inference.damping = f.damping;
  c.inference.max_iterations = f.max_iter;
  c.inference.convergence_tol = f.tol;
  c.inference.validate();
  c.grid = {f.lambda, f.grid_low, f.grid_high};
  c.grid.validate();
  c.alpha_grid = f.alpha_grid;
  c.folds = f.folds;
  c.runs = f.runs;
  c.rotating_folds = f.rotating_folds;
  return c;
}

// name:dim:metric[:within_scale]
SyntheticChannel parse_channel(const std::string& text) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (std::size_t pos; (pos = text.find(':', start)) != std::string::npos; start = pos + 1)
    parts.push_back(text.substr(start, pos - start));
  parts.push_back(text.substr(start));
  if (parts.size() != 3 && parts.size() != 4)
    throw Error("synth: channel '" + text + "' must look like name:dim:metric[:within_scale]");
  SyntheticChannel c;
  c.name = parts[0];
  try {
    c.dim = std::stoi(parts[1]);
    if (parts.size() == 4) c.within_scale = std::stod(parts[3]);
  } catch (const std::exception&) {
    throw Error("synth: channel '" + text + "' has a bad number");
  }
  const std::string& metric = parts[2];
  if (metric == "euclidean")
    c.metric = Metric::euclidean;
  else if (metric == "bhattacharyya")
    c.metric = Metric::bhattacharyya;
  else
    throw Error("synth: unknown metric '" + metric + "'");
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CRF-based person re-identification ranking"};
  app.require_subcommand(1);
  Flags f;

  SyntheticSpec spec;
  std::vector<std::string> channel_specs;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic clustered dataset");
  synth->add_option("--out", f.out, "Output directory")->required();
  synth->add_option("--seed", f.seed, "Random seed")->required();
  synth->add_option("--persons", spec.persons)->capture_default_str();
  synth->add_option("--images-per-person", spec.images_per_person)->capture_default_str();
  synth->add_option("--within", spec.within_person_spread, "Within-person spread")->capture_default_str();
  synth->add_option("--between", spec.between_person_spread, "Between-person spread")->capture_default_str();
  synth->add_option("--channel", channel_specs, "Channel as name:dim:metric[:within_scale] (repeatable)");

  auto* train = app.add_subcommand("train", "Learn kernel weights and alpha");
  add_common(train, f, true);
  train->add_option("--params", f.params, "Parameter file to write (default: <out>/params.json)");
  train->add_option("--alpha-grid", f.alpha_grid, "Candidate alpha values")->delimiter(',')->capture_default_str();
  train->add_option("--lambda", f.lambda, "Kernel width scale")->capture_default_str();
  train->add_option("--grid-low", f.grid_low, "Widths from lambda * 2^-low")->capture_default_str();
  train->add_option("--grid-high", f.grid_high, "Widths up to lambda * 2^high")->capture_default_str();
  train->add_option("--folds", f.folds, "Cross-validation folds for alpha")->capture_default_str();
  train->add_flag("--rotating-folds", f.rotating_folds, "Hold out a rotating-fold test split instead of a random one");

  std::string probe;
  auto* infer = app.add_subcommand("infer", "Rank the gallery for one probe");
  add_common(infer, f, true);
  infer->add_option("--params", f.params, "Parameter file")->required()->check(CLI::ExistingFile);
  infer->add_option("probe", probe, "Image id of the dataset or a probe JSON file")->required();

  auto* eval = app.add_subcommand("eval", "Evaluate mean max-F against the alpha = 0 baseline");
  add_common(eval, f, true);
  eval->add_option("--params", f.params, "Parameter file")->required()->check(CLI::ExistingFile);
  eval->add_option("--runs", f.runs, "Evaluation runs")->capture_default_str();
  eval->add_flag("--rotating-folds", f.rotating_folds, "Rotate through a fixed 5-way person partition");

  std::vector<Index> sizes = {1000, 2000};
  int dim = 3;
  double sigma = 1.0;
  auto* bench = app.add_subcommand("filter-bench", "Time exact versus lattice filtering");
  add_common(bench, f, false);
  bench->add_option("--sizes", sizes, "Point counts")->delimiter(',')->capture_default_str();
  bench->add_option("--dim", dim)->capture_default_str();
  bench->add_option("--sigma", sigma)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      if (!channel_specs.empty()) {
        spec.channels.clear();
        for (const auto& c : channel_specs) spec.channels.push_back(parse_channel(c));
      }
      spec.seed = f.seed;
      std::cerr << "wrote " << cmd_synth(spec, f.out).string() << '\n';
    } else if (train->parsed()) {
      std::cerr << "wrote " << cmd_train(to_config(f)).string() << '\n';
    } else if (infer->parsed()) {
      const auto result = cmd_infer(to_config(f), probe);
      std::cerr << "iterations=" << result.iterations << " converged=" << (result.converged ? "true" : "false")
                << '\n';
    } else if (eval->parsed()) {
      const auto [model, baseline] = cmd_eval(to_config(f));
      std::cerr << "mean_max_f=" << format_double(model) << " baseline_mean_max_f=" << format_double(baseline)
                << '\n';
    } else if (bench->parsed()) {
      std::cerr << "wrote " << cmd_filter_bench(to_config(f), sizes, dim, sigma).string() << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
