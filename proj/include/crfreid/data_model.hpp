#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "crfreid/types.hpp"

namespace crfreid {

enum class ChannelKind { vector, precomputed_distance };
enum class Metric { euclidean, bhattacharyya };

struct ImageRecord {
  std::string image_id;
  std::string person_id;
};

/// A named feature channel. Vector channels carry an N x dim matrix; precomputed
/// channels carry probe-to-gallery distance rows and can only feed the unary term.
struct ChannelSpec {
  std::string name;
  ChannelKind kind = ChannelKind::vector;
  int dim = 0;
  Metric metric = Metric::euclidean;
  bool standardize = false;
  std::string file;  // relative to the manifest directory
};

/// Gallery statistics used to standardize a channel. `scale` holds the
/// population standard deviation, or 1 for degenerate dimensions.
struct ChannelStats {
  Vector mean;
  Vector scale;
};

struct Dataset {
  std::vector<ImageRecord> images;
  std::vector<ChannelSpec> channels;
  /// Raw matrices exactly as loaded, one per vector channel.
  std::map<std::string, FeatureMatrix> matrices;
  /// Standardization statistics, for channels flagged `standardize`.
  std::map<std::string, ChannelStats> stats;
  /// Working representation: standardized copy when flagged, raw otherwise.
  std::map<std::string, FeatureMatrix> features;
  /// channel -> probe id -> distances to every gallery image, in image order.
  std::map<std::string, std::map<std::string, Vector>> distance_columns;

  Index size() const { return static_cast<Index>(images.size()); }
  const ChannelSpec& channel(const std::string& name) const;
  bool has_channel(const std::string& name) const;
  Index index_of(const std::string& image_id) const;
  /// Distinct person ids in order of first appearance.
  std::vector<std::string> persons() const;
  /// Image indices of one person, ascending.
  std::vector<Index> images_of(const std::string& person_id) const;
};

/// Probe record. Vectors are raw; they are mapped through the dataset's
/// channel statistics when a problem is built.
struct ProbeQuery {
  std::string probe_id;
  std::map<std::string, Vector> vectors;
  std::map<std::string, Vector> precomputed;
};

/// Validates the invariants and derives `stats` and `features`.
/// Throws Error naming the channel (and row) at fault.
void finalize_dataset(Dataset& dataset);

Dataset load_dataset(const std::filesystem::path& manifest_path);

/// Writes manifest.json plus one CSV per channel into `dir`; returns the manifest path.
std::filesystem::path save_dataset(const Dataset& dataset, const std::filesystem::path& dir);

/// Centers and scales gallery columns (population sd over gallery rows);
/// the probe is mapped with the same statistics. Dimensions with sd < 1e-12
/// are centered but left unscaled.
std::pair<FeatureMatrix, Vector> standardize_channel(const FeatureMatrix& matrix, const Vector& probe);
ChannelStats channel_stats(const FeatureMatrix& matrix);
Vector apply_stats(const ChannelStats& stats, const Vector& v);

/// Probe taken from gallery row `index` (its precomputed rows, if any, are
/// looked up by image id).
ProbeQuery probe_from_dataset(const Dataset& dataset, Index index);

/// External probe file: JSON {"probe_id", "vectors": {name: [...]}, "precomputed": {name: [...]}}.
ProbeQuery load_probe(const std::filesystem::path& path);

FeatureMatrix read_matrix_csv(const std::filesystem::path& path);
void write_matrix_csv(const std::filesystem::path& path, const FeatureMatrix& matrix);

/// Shortest decimal text that parses back to exactly `value`.
std::string format_double(double value);

std::string to_string(ChannelKind kind);
std::string to_string(Metric metric);

}  // namespace crfreid
