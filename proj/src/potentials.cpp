#include "crfreid/potentials.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace crfreid {

namespace {

constexpr double kWeightSumTolerance = 1e-9;
constexpr double kHistogramTolerance = 1e-6;

void check_dims(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size())
    throw Error(std::string(what) + ": dimension mismatch (" + std::to_string(a.size()) + " vs " +
                std::to_string(b.size()) + ")");
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double diff = a[k] - b[k];
    s += diff * diff;
  }
  return s;
}

void check_histogram(std::span<const double> h) {
  double sum = 0.0;
  for (const double x : h) {
    if (!(x >= 0.0)) throw Error("bhattacharyya: histogram has a negative or non-finite entry");
    sum += x;
  }
  if (std::abs(sum - 1.0) > kHistogramTolerance) throw Error("bhattacharyya: histogram not normalized");
}

// Probe vectors mapped into the dataset's working representation, plus the
// precomputed rows, for the channels a unary config uses.
struct PreparedProbe {
  std::map<std::string, Vector> vectors;
  std::map<std::string, const Vector*> precomputed;
};

PreparedProbe prepare_probe(const ProbeQuery& probe, const Dataset& ds, const UnaryConfig& config) {
  PreparedProbe out;
  for (const auto& [name, w] : config.channel_weights) {
    const ChannelSpec& ch = ds.channel(name);
    if (ch.kind == ChannelKind::precomputed_distance) {
      const auto it = probe.precomputed.find(name);
      if (it == probe.precomputed.end())
        throw Error("probe '" + probe.probe_id + "' has no distances for channel '" + name + "'");
      if (it->second.size() != ds.size())
        throw Error("probe '" + probe.probe_id + "' channel '" + name + "': expected " + std::to_string(ds.size()) +
                    " distances");
      out.precomputed[name] = &it->second;
      continue;
    }
    const auto it = probe.vectors.find(name);
    if (it == probe.vectors.end()) throw Error("probe '" + probe.probe_id + "' is missing channel '" + name + "'");
    if (it->second.size() != ch.dim)
      throw Error("probe '" + probe.probe_id + "' channel '" + name + "': expected dim " + std::to_string(ch.dim));
    const auto stats = ds.stats.find(name);
    out.vectors[name] = stats == ds.stats.end() ? it->second : apply_stats(stats->second, it->second);
  }
  return out;
}

double prepared_cost(const PreparedProbe& probe, const Dataset& ds, const UnaryConfig& config, Index i) {
  double cost = 0.0;
  for (const auto& [name, w] : config.channel_weights) {
    const ChannelSpec& ch = ds.channel(name);
    double d = 0.0;
    if (ch.kind == ChannelKind::precomputed_distance) {
      d = (*probe.precomputed.at(name))[i];
    } else {
      const auto a = as_span(probe.vectors.at(name));
      const auto b = row_span(ds.features.at(name), i);
      d = ch.metric == Metric::bhattacharyya ? bhattacharyya_distance(a, b) : euclidean_distance(a, b);
    }
    cost += w * d;
  }
  return cost;
}

}  // namespace

double euclidean_distance(std::span<const double> a, std::span<const double> b) {
  check_dims(a, b, "euclidean_distance");
  return std::sqrt(squared_distance(a, b));
}

double bhattacharyya_distance(std::span<const double> h1, std::span<const double> h2) {
  check_dims(h1, h2, "bhattacharyya_distance");
  check_histogram(h1);
  check_histogram(h2);
  double bc = 0.0;
  for (std::size_t k = 0; k < h1.size(); ++k) bc += std::sqrt(h1[k] * h2[k]);
  bc = std::clamp(bc, 0.0, 1.0);
  return std::sqrt(1.0 - bc);
}

double gaussian_kernel(std::span<const double> a, std::span<const double> b, double sigma) {
  check_dims(a, b, "gaussian_kernel");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw Error("gaussian_kernel: sigma must be positive and finite");
  return std::exp(-squared_distance(a, b) / sigma);
}

void UnaryConfig::validate() const {
  if (channel_weights.empty()) throw Error("unary config: no channels");
  double sum = 0.0;
  for (const auto& [name, w] : channel_weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw Error("unary config: weight of '" + name + "' must be >= 0");
    sum += w;
  }
  if (std::abs(sum - 1.0) > kWeightSumTolerance) throw Error("unary config: weights must sum to 1");
}

UnaryConfig UnaryConfig::uniform(const std::vector<std::string>& channels) {
  UnaryConfig config;
  for (const auto& c : channels) config.channel_weights[c] = 1.0 / static_cast<double>(channels.size());
  return config;
}

void PairwiseConfig::validate() const {
  double sum = 0.0;
  for (const auto& k : kernels) {
    if (!(k.sigma > 0.0) || !std::isfinite(k.sigma))
      throw Error("pairwise config: kernel on '" + k.channel + "' needs a positive finite sigma");
    if (!(k.weight >= 0.0) || !std::isfinite(k.weight))
      throw Error("pairwise config: kernel on '" + k.channel + "' needs a non-negative weight");
    sum += k.weight;
  }
  if (!kernels.empty() && std::abs(sum - 1.0) > kWeightSumTolerance)
    throw Error("pairwise config: kernel weights must sum to 1");
}

void PairwiseConfig::validate(const Dataset& dataset) const {
  validate();
  for (const auto& k : kernels) {
    const ChannelSpec& ch = dataset.channel(k.channel);
    if (ch.kind != ChannelKind::vector)
      throw Error("pairwise config: channel '" + k.channel + "' holds precomputed distances, kernels need vectors");
  }
}

void CrfProblem::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw Error("crf problem: alpha must be >= 0");
  for (Index i = 0; i < unary_cost.size(); ++i)
    if (!(unary_cost[i] >= 0.0) || !std::isfinite(unary_cost[i]))
      throw Error("crf problem: unary costs must be finite and >= 0");
  for (const auto& k : kernels)
    if (k.points.rows() != unary_cost.size()) throw Error("crf problem: kernel points do not match node count");
}

void ModelParams::validate() const {
  unary.validate();
  pairwise.validate();
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw Error("params: alpha must be >= 0");
}

double unary_cost(const ProbeQuery& probe, const Dataset& dataset, const UnaryConfig& config, Index i) {
  config.validate();
  if (i < 0 || i >= dataset.size()) throw Error("unary_cost: index out of range");
  return prepared_cost(prepare_probe(probe, dataset, config), dataset, config, i);
}

double pairwise_similarity(const CrfProblem& problem, Index i, Index j) {
  if (i == j) throw Error("pairwise_similarity: i == j");
  if (i < 0 || j < 0 || i >= problem.size() || j >= problem.size())
    throw Error("pairwise_similarity: index out of range");
  double kappa = 0.0;
  for (const auto& k : problem.kernels)
    kappa += k.weight * gaussian_kernel(row_span(k.points, i), row_span(k.points, j), k.sigma);
  return kappa;
}

CrfProblem build_crf_problem(const ProbeQuery& probe, const Dataset& dataset, const UnaryConfig& unary,
                             const PairwiseConfig& pairwise, double alpha, std::span<const Index> gallery) {
  unary.validate();
  pairwise.validate(dataset);
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw Error("build_crf_problem: alpha must be >= 0");

  std::vector<Index> all;
  if (gallery.empty()) {
    all.resize(static_cast<std::size_t>(dataset.size()));
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<Index>(i);
    gallery = all;
  }
  if (gallery.empty()) throw Error("build_crf_problem: empty gallery");

  CrfProblem problem;
  problem.alpha = alpha;
  const auto n = static_cast<Index>(gallery.size());
  problem.unary_cost.resize(n);
  const PreparedProbe prepared = prepare_probe(probe, dataset, unary);
  for (Index r = 0; r < n; ++r) {
    const Index i = gallery[static_cast<std::size_t>(r)];
    if (i < 0 || i >= dataset.size()) throw Error("build_crf_problem: gallery index out of range");
    problem.unary_cost[r] = prepared_cost(prepared, dataset, unary, i);
  }

  for (const auto& spec : pairwise.kernels) {
    const FeatureMatrix& source = dataset.features.at(spec.channel);
    ResolvedKernel k;
    k.sigma = spec.sigma;
    k.weight = spec.weight;
    k.points.resize(n, source.cols());
    for (Index r = 0; r < n; ++r) k.points.row(r) = source.row(gallery[static_cast<std::size_t>(r)]);
    problem.kernels.push_back(std::move(k));
  }
  return problem;
}

std::string params_to_json(const ModelParams& params) {
  nlohmann::ordered_json doc;
  doc["unary_weights"] = nlohmann::ordered_json::object();
  for (const auto& [name, w] : params.unary.channel_weights) doc["unary_weights"][name] = w;
  doc["kernels"] = nlohmann::ordered_json::array();
  for (const auto& k : params.pairwise.kernels)
    doc["kernels"].push_back({{"channel", k.channel}, {"sigma", k.sigma}, {"weight", k.weight}});
  doc["alpha"] = params.alpha;
  return doc.dump(2) + "\n";
}

ModelParams params_from_json(const std::string& text) {
  ModelParams params;
  try {
    const auto doc = nlohmann::json::parse(text);
    for (const auto& [name, w] : doc.at("unary_weights").items()) params.unary.channel_weights[name] = w.get<double>();
    for (const auto& k : doc.at("kernels"))
      params.pairwise.kernels.push_back(
          {k.at("channel").get<std::string>(), k.at("sigma").get<double>(), k.at("weight").get<double>()});
    params.alpha = doc.at("alpha").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("params: ") + e.what());
  }
  params.validate();
  return params;
}

ModelParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open params file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return params_from_json(ss.str());
}

void save_params(const ModelParams& params, const std::filesystem::path& path) {
  params.validate();
  std::ofstream out(path);
  if (!out) throw Error("cannot write params file: " + path.string());
  out << params_to_json(params);
}

}  // namespace crfreid
