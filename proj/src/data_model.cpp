#include "crfreid/data_model.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace crfreid {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kHistogramTolerance = 1e-6;
constexpr double kDegenerateSd = 1e-12;

std::string row_tag(const std::string& channel, Index row) {
  return "channel '" + channel + "' row " + std::to_string(row);
}

double parse_double(std::string_view text, const fs::path& path, std::size_t line) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) text.remove_suffix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw Error(path.string() + ":" + std::to_string(line) + ": cannot parse number '" + std::string(text) + "'");
  return value;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    fields.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

std::ifstream open_input(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open file: " + path.string());
  return in;
}

ChannelKind parse_kind(const std::string& s) {
  if (s == "vector") return ChannelKind::vector;
  if (s == "precomputed_distance") return ChannelKind::precomputed_distance;
  throw Error("unknown channel kind '" + s + "'");
}

Metric parse_metric(const std::string& s) {
  if (s == "euclidean") return Metric::euclidean;
  if (s == "bhattacharyya") return Metric::bhattacharyya;
  throw Error("unknown metric '" + s + "'");
}

// Precomputed-distance file: probe_id, then N distances per line.
std::map<std::string, Vector> read_distance_rows(const fs::path& path, const std::string& channel, Index n) {
  auto in = open_input(path);
  std::map<std::string, Vector> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_commas(line);
    if (static_cast<Index>(fields.size()) != n + 1)
      throw Error("channel '" + channel + "' line " + std::to_string(lineno) + ": expected probe id and " +
                  std::to_string(n) + " distances, got " + std::to_string(fields.size()) + " fields");
    std::string probe(fields[0]);
    if (rows.count(probe)) throw Error("channel '" + channel + "': duplicate probe row '" + probe + "'");
    Vector d(n);
    for (Index k = 0; k < n; ++k) {
      d[k] = parse_double(fields[static_cast<std::size_t>(k + 1)], path, lineno);
      if (!std::isfinite(d[k]) || d[k] < 0.0)
        throw Error("channel '" + channel + "' probe '" + probe + "': distances must be finite and non-negative");
    }
    rows.emplace(std::move(probe), std::move(d));
  }
  return rows;
}

}  // namespace

std::string to_string(ChannelKind kind) {
  return kind == ChannelKind::vector ? "vector" : "precomputed_distance";
}

std::string to_string(Metric metric) {
  return metric == Metric::euclidean ? "euclidean" : "bhattacharyya";
}

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

const ChannelSpec& Dataset::channel(const std::string& name) const {
  for (const auto& c : channels)
    if (c.name == name) return c;
  throw Error("unknown channel '" + name + "'");
}

bool Dataset::has_channel(const std::string& name) const {
  for (const auto& c : channels)
    if (c.name == name) return true;
  return false;
}

Index Dataset::index_of(const std::string& image_id) const {
  for (std::size_t i = 0; i < images.size(); ++i)
    if (images[i].image_id == image_id) return static_cast<Index>(i);
  throw Error("unknown image id '" + image_id + "'");
}

std::vector<std::string> Dataset::persons() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& img : images)
    if (seen.insert(img.person_id).second) out.push_back(img.person_id);
  return out;
}

std::vector<Index> Dataset::images_of(const std::string& person_id) const {
  std::vector<Index> out;
  for (std::size_t i = 0; i < images.size(); ++i)
    if (images[i].person_id == person_id) out.push_back(static_cast<Index>(i));
  return out;
}

ChannelStats channel_stats(const FeatureMatrix& matrix) {
  const Index n = matrix.rows();
  ChannelStats stats;
  stats.mean = Vector::Zero(matrix.cols());
  stats.scale = Vector::Ones(matrix.cols());
  if (n == 0) return stats;
  for (Index c = 0; c < matrix.cols(); ++c) {
    double sum = 0.0;
    for (Index r = 0; r < n; ++r) sum += matrix(r, c);
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (Index r = 0; r < n; ++r) ss += (matrix(r, c) - mean) * (matrix(r, c) - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n));
    stats.mean[c] = mean;
    stats.scale[c] = sd < kDegenerateSd ? 1.0 : sd;
  }
  return stats;
}

Vector apply_stats(const ChannelStats& stats, const Vector& v) {
  if (v.size() != stats.mean.size()) throw Error("standardize: dimension mismatch");
  return ((v - stats.mean).array() / stats.scale.array()).matrix();
}

std::pair<FeatureMatrix, Vector> standardize_channel(const FeatureMatrix& matrix, const Vector& probe) {
  const ChannelStats stats = channel_stats(matrix);
  FeatureMatrix out(matrix.rows(), matrix.cols());
  for (Index r = 0; r < matrix.rows(); ++r)
    out.row(r) = ((matrix.row(r).transpose() - stats.mean).array() / stats.scale.array()).matrix().transpose();
  return {std::move(out), apply_stats(stats, probe)};
}

void finalize_dataset(Dataset& ds) {
  const Index n = ds.size();
  std::set<std::string> ids;
  for (const auto& img : ds.images) {
    if (img.image_id.empty()) throw Error("image with empty id");
    if (img.person_id.empty()) throw Error("image '" + img.image_id + "' has an empty person id");
    if (!ids.insert(img.image_id).second) throw Error("duplicate image id '" + img.image_id + "'");
  }

  std::set<std::string> names;
  ds.stats.clear();
  ds.features.clear();
  for (const auto& ch : ds.channels) {
    if (!names.insert(ch.name).second) throw Error("duplicate channel '" + ch.name + "'");
    if (ch.kind == ChannelKind::precomputed_distance) {
      for (const auto& [probe, row] : ds.distance_columns[ch.name]) {
        if (row.size() != n)
          throw Error("channel '" + ch.name + "' probe '" + probe + "': row count mismatch (" +
                      std::to_string(row.size()) + " distances, " + std::to_string(n) + " images)");
        for (Index k = 0; k < n; ++k)
          if (!std::isfinite(row[k]) || row[k] < 0.0)
            throw Error("channel '" + ch.name + "' probe '" + probe + "': distances must be finite and non-negative");
      }
      continue;
    }

    const auto it = ds.matrices.find(ch.name);
    if (it == ds.matrices.end()) throw Error("channel '" + ch.name + "': missing matrix");
    const FeatureMatrix& m = it->second;
    if (ch.dim <= 0) throw Error("channel '" + ch.name + "': dim must be positive");
    if (m.rows() != n)
      throw Error("channel '" + ch.name + "': row count mismatch (" + std::to_string(m.rows()) + " rows, " +
                  std::to_string(n) + " images)");
    if (m.cols() != ch.dim)
      throw Error("channel '" + ch.name + "': expected dim " + std::to_string(ch.dim) + ", matrix has " +
                  std::to_string(m.cols()) + " columns");
    for (Index r = 0; r < n; ++r)
      for (Index c = 0; c < m.cols(); ++c)
        if (!std::isfinite(m(r, c))) throw Error(row_tag(ch.name, r) + ": non-finite value");

    if (ch.metric == Metric::bhattacharyya) {
      if (ch.standardize) throw Error("channel '" + ch.name + "': bhattacharyya channels cannot be standardized");
      for (Index r = 0; r < n; ++r) {
        double sum = 0.0;
        for (Index c = 0; c < m.cols(); ++c) {
          if (m(r, c) < 0.0) throw Error(row_tag(ch.name, r) + ": histogram has a negative entry");
          sum += m(r, c);
        }
        if (std::abs(sum - 1.0) > kHistogramTolerance)
          throw Error(row_tag(ch.name, r) + ": histogram not normalized (sum " + format_double(sum) + ")");
      }
    }

    if (ch.standardize) {
      ChannelStats stats = channel_stats(m);
      FeatureMatrix z(m.rows(), m.cols());
      for (Index r = 0; r < n; ++r) z.row(r) = apply_stats(stats, m.row(r).transpose()).transpose();
      ds.stats[ch.name] = std::move(stats);
      ds.features[ch.name] = std::move(z);
    } else {
      ds.features[ch.name] = m;
    }
  }
}

Dataset load_dataset(const fs::path& manifest_path) {
  json manifest;
  {
    auto in = open_input(manifest_path);
    try {
      in >> manifest;
    } catch (const json::exception& e) {
      throw Error("manifest " + manifest_path.string() + ": " + e.what());
    }
  }
  const fs::path base = manifest_path.parent_path();

  Dataset ds;
  try {
    for (const auto& img : manifest.at("images"))
      ds.images.push_back({img.at("id").get<std::string>(), img.at("person").get<std::string>()});
    for (const auto& c : manifest.at("channels")) {
      ChannelSpec spec;
      spec.name = c.at("name").get<std::string>();
      spec.kind = parse_kind(c.value("kind", std::string("vector")));
      spec.file = c.at("file").get<std::string>();
      if (spec.kind == ChannelKind::vector) {
        spec.dim = c.at("dim").get<int>();
        spec.metric = parse_metric(c.value("metric", std::string("euclidean")));
        spec.standardize = c.value("standardize", false);
      }
      ds.channels.push_back(std::move(spec));
    }
  } catch (const json::exception& e) {
    throw Error("manifest " + manifest_path.string() + ": " + e.what());
  }

  for (const auto& ch : ds.channels) {
    const fs::path file = base / ch.file;
    if (ch.kind == ChannelKind::vector)
      ds.matrices[ch.name] = read_matrix_csv(file);
    else
      ds.distance_columns[ch.name] = read_distance_rows(file, ch.name, ds.size());
  }
  finalize_dataset(ds);
  return ds;
}

fs::path save_dataset(const Dataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["images"] = json::array();
  for (const auto& img : ds.images) manifest["images"].push_back({{"id", img.image_id}, {"person", img.person_id}});
  manifest["channels"] = json::array();
  for (const auto& ch : ds.channels) {
    const std::string file = ch.file.empty() ? ch.name + ".csv" : ch.file;
    json c = {{"name", ch.name}, {"kind", to_string(ch.kind)}, {"file", file}};
    if (ch.kind == ChannelKind::vector) {
      c["dim"] = ch.dim;
      c["metric"] = to_string(ch.metric);
      c["standardize"] = ch.standardize;
      write_matrix_csv(dir / file, ds.matrices.at(ch.name));
    } else {
      std::ofstream out(dir / file);
      if (!out) throw Error("cannot write " + (dir / file).string());
      const auto it = ds.distance_columns.find(ch.name);
      if (it != ds.distance_columns.end()) {
        for (const auto& [probe, row] : it->second) {
          out << probe;
          for (Index k = 0; k < row.size(); ++k) out << ',' << format_double(row[k]);
          out << '\n';
        }
      }
    }
    manifest["channels"].push_back(std::move(c));
  }
  const fs::path path = dir / "manifest.json";
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << manifest.dump(2) << '\n';
  return path;
}

FeatureMatrix read_matrix_csv(const fs::path& path) {
  auto in = open_input(path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::vector<double> row;
    for (const auto field : split_commas(line)) row.push_back(parse_double(field, path, lineno));
    if (!rows.empty() && row.size() != rows.front().size())
      throw Error(path.string() + ":" + std::to_string(lineno) + ": ragged row");
    rows.push_back(std::move(row));
  }
  const Index cols = rows.empty() ? 0 : static_cast<Index>(rows.front().size());
  FeatureMatrix m(static_cast<Index>(rows.size()), cols);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (Index c = 0; c < cols; ++c) m(static_cast<Index>(r), c) = rows[r][static_cast<std::size_t>(c)];
  return m;
}

void write_matrix_csv(const fs::path& path, const FeatureMatrix& m) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      if (c) out << ',';
      out << format_double(m(r, c));
    }
    out << '\n';
  }
}

ProbeQuery probe_from_dataset(const Dataset& ds, Index index) {
  if (index < 0 || index >= ds.size()) throw Error("probe index out of range");
  ProbeQuery probe;
  probe.probe_id = ds.images[static_cast<std::size_t>(index)].image_id;
  for (const auto& ch : ds.channels) {
    if (ch.kind == ChannelKind::vector) {
      probe.vectors[ch.name] = ds.matrices.at(ch.name).row(index).transpose();
    } else {
      const auto cols = ds.distance_columns.find(ch.name);
      if (cols == ds.distance_columns.end()) continue;
      const auto row = cols->second.find(probe.probe_id);
      if (row != cols->second.end()) probe.precomputed[ch.name] = row->second;
    }
  }
  return probe;
}

ProbeQuery load_probe(const fs::path& path) {
  json doc;
  {
    auto in = open_input(path);
    try {
      in >> doc;
    } catch (const json::exception& e) {
      throw Error("probe file " + path.string() + ": " + e.what());
    }
  }
  ProbeQuery probe;
  try {
    probe.probe_id = doc.at("probe_id").get<std::string>();
    const json vectors = doc.value("vectors", json::object());
    const json precomputed = doc.value("precomputed", json::object());
    for (const auto& [name, values] : vectors.items()) {
      const auto v = values.get<std::vector<double>>();
      probe.vectors[name] = Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
    }
    for (const auto& [name, values] : precomputed.items()) {
      const auto v = values.get<std::vector<double>>();
      probe.precomputed[name] = Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
    }
  } catch (const json::exception& e) {
    throw Error("probe file " + path.string() + ": " + e.what());
  }
  return probe;
}

}  // namespace crfreid
