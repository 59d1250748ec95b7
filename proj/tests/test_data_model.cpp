#include <doctest.h>

#include <cmath>
#include <cstring>

#include "support.hpp"

using namespace crfreid;
using testing::TempDir;
using testing::write_file;

namespace {

const char* kThreeImageManifest = R"({
  "images": [{"id": "a", "person": "p1"}, {"id": "b", "person": "p1"}, {"id": "c", "person": "p2"}],
  "channels": [{"name": "f", "kind": "vector", "dim": 2, "metric": "euclidean", "standardize": false, "file": "f.csv"}]
})";

std::string load_error(const std::filesystem::path& manifest) {
  try {
    load_dataset(manifest);
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("load a well-formed three image manifest") {
  TempDir dir;
  write_file(dir / "manifest.json", kThreeImageManifest);
  write_file(dir / "f.csv", "0,1\n2,3\n4,5\n");
  const Dataset ds = load_dataset(dir / "manifest.json");
  CHECK(ds.size() == 3);
  CHECK(ds.channel("f").dim == 2);
  CHECK(ds.matrices.at("f")(2, 1) == 5.0);
  CHECK(ds.persons() == std::vector<std::string>{"p1", "p2"});
  CHECK(ds.images_of("p1") == std::vector<Index>{0, 1});
  CHECK(ds.index_of("c") == 2);
}

TEST_CASE("matrix with too few rows is a row count mismatch") {
  TempDir dir;
  write_file(dir / "manifest.json", kThreeImageManifest);
  write_file(dir / "f.csv", "0,1\n2,3\n");
  const std::string msg = load_error(dir / "manifest.json");
  CHECK(msg.find("row count mismatch") != std::string::npos);
  CHECK(msg.find("'f'") != std::string::npos);
}

TEST_CASE("unnormalized histogram is rejected with channel and row") {
  TempDir dir;
  write_file(dir / "manifest.json", R"({
    "images": [{"id": "a", "person": "p1"}, {"id": "b", "person": "p2"}],
    "channels": [{"name": "h", "kind": "vector", "dim": 2, "metric": "bhattacharyya", "file": "h.csv"}]})");
  write_file(dir / "h.csv", "0.5,0.5\n0.5,0.6\n");
  const std::string msg = load_error(dir / "manifest.json");
  CHECK(msg.find("histogram not normalized") != std::string::npos);
  CHECK(msg.find("row 1") != std::string::npos);
}

TEST_CASE("negative histogram entries and non-finite values are rejected") {
  TempDir dir;
  write_file(dir / "manifest.json", R"({
    "images": [{"id": "a", "person": "p1"}],
    "channels": [{"name": "h", "kind": "vector", "dim": 2, "metric": "bhattacharyya", "file": "h.csv"}]})");
  write_file(dir / "h.csv", "1.5,-0.5\n");
  CHECK(load_error(dir / "manifest.json").find("negative") != std::string::npos);
  write_file(dir / "h.csv", "nan,1\n");
  CHECK(load_error(dir / "manifest.json").find("non-finite") != std::string::npos);
}

TEST_CASE("missing files and malformed manifests are errors") {
  TempDir dir;
  CHECK(load_error(dir / "nope.json").find("cannot open") != std::string::npos);
  write_file(dir / "manifest.json", kThreeImageManifest);
  CHECK(load_error(dir / "manifest.json").find("f.csv") != std::string::npos);
  write_file(dir / "manifest.json", "{\"images\": [");
  CHECK_FALSE(load_error(dir / "manifest.json").empty());
  write_file(dir / "manifest.json", R"({"images": [{"id": "a", "person": "p"}, {"id": "a", "person": "q"}], "channels": []})");
  CHECK(load_error(dir / "manifest.json").find("duplicate image id") != std::string::npos);
  write_file(dir / "manifest.json", R"({"images": [{"id": "a", "person": ""}], "channels": []})");
  CHECK(load_error(dir / "manifest.json").find("empty person id") != std::string::npos);
}

TEST_CASE("standardizing a histogram channel is an error") {
  TempDir dir;
  write_file(dir / "manifest.json", R"({
    "images": [{"id": "a", "person": "p1"}],
    "channels": [{"name": "h", "kind": "vector", "dim": 2, "metric": "bhattacharyya", "standardize": true, "file": "h.csv"}]})");
  write_file(dir / "h.csv", "0.5,0.5\n");
  CHECK(load_error(dir / "manifest.json").find("cannot be standardized") != std::string::npos);
}

TEST_CASE("standardize_channel examples") {
  SUBCASE("two rows, mean 1, sd 1") {
    FeatureMatrix g(2, 1);
    g << 0, 2;
    Vector p(1);
    p << 1;
    const auto [z, zp] = standardize_channel(g, p);
    CHECK(z(0, 0) == doctest::Approx(-1.0));
    CHECK(z(1, 0) == doctest::Approx(1.0));
    CHECK(zp[0] == doctest::Approx(0.0));
  }
  SUBCASE("constant column is centered, not scaled") {
    FeatureMatrix g(3, 1);
    g << 5, 5, 5;
    Vector p(1);
    p << 7;
    const auto [z, zp] = standardize_channel(g, p);
    CHECK(z.isZero(0.0));
    CHECK(zp[0] == 2.0);
  }
  SUBCASE("two-pass mean and sd oracle") {
    FeatureMatrix g(2, 2);
    g << 1, 0, 3, 4;
    Vector p(2);
    p << 2, 2;
    const auto [z, zp] = standardize_channel(g, p);
    for (Index c = 0; c < 2; ++c) {
      const double mean = (g(0, c) + g(1, c)) / 2.0;
      const double sd = std::sqrt(((g(0, c) - mean) * (g(0, c) - mean) + (g(1, c) - mean) * (g(1, c) - mean)) / 2.0);
      for (Index r = 0; r < 2; ++r) CHECK(std::abs(z(r, c) - (g(r, c) - mean) / sd) < 1e-12);
      CHECK(std::abs(zp[c] - (p[c] - mean) / sd) < 1e-12);
    }
  }
}

TEST_CASE("standardization is idempotent") {
  std::mt19937_64 rng(3);
  FeatureMatrix g = testing::random_points(rng, 30, 4, 3.0);
  g.col(1).array() += 10.0;
  const auto [z1, p1] = standardize_channel(g, Vector::Zero(4));
  const auto [z2, p2] = standardize_channel(z1, p1);
  CHECK((z2 - z1).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((p2 - p1).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("save then load round-trips matrices bitwise and reproduces statistics") {
  std::mt19937_64 rng(11);
  Dataset ds;
  for (int i = 0; i < 6; ++i) ds.images.push_back({"i" + std::to_string(i), "p" + std::to_string(i / 2)});
  ds.channels.push_back({"v", ChannelKind::vector, 3, Metric::euclidean, true, "v.csv"});
  ds.channels.push_back({"h", ChannelKind::vector, 4, Metric::bhattacharyya, false, "h.csv"});
  ds.channels.push_back({"m", ChannelKind::precomputed_distance, 0, Metric::euclidean, false, "m.csv"});
  ds.matrices["v"] = testing::random_points(rng, 6, 3, 1.7);
  FeatureMatrix h = testing::random_points(rng, 6, 4).array().exp().matrix();
  for (Index r = 0; r < 6; ++r) h.row(r) /= h.row(r).sum();
  ds.matrices["h"] = h;
  ds.distance_columns["m"]["i0"] = testing::random_uniform(rng, 6);
  ds.distance_columns["m"]["i3"] = testing::random_uniform(rng, 6);
  finalize_dataset(ds);

  TempDir dir;
  const auto manifest = save_dataset(ds, dir.path());
  const Dataset back = load_dataset(manifest);
  REQUIRE(back.size() == ds.size());
  for (const auto& name : {"v", "h"}) {
    const auto& a = ds.matrices.at(name);
    const auto& b = back.matrices.at(name);
    REQUIRE(a.rows() == b.rows());
    CHECK(std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0);
  }
  CHECK(back.stats.at("v").mean == ds.stats.at("v").mean);
  CHECK(back.stats.at("v").scale == ds.stats.at("v").scale);
  CHECK(back.distance_columns.at("m").at("i3") == ds.distance_columns.at("m").at("i3"));
  CHECK(back.channel("v").standardize);
  CHECK(back.channel("m").kind == ChannelKind::precomputed_distance);

  const ProbeQuery probe = probe_from_dataset(back, 3);
  CHECK(probe.probe_id == "i3");
  CHECK(probe.precomputed.at("m") == ds.distance_columns.at("m").at("i3"));
  CHECK(probe.vectors.at("v") == ds.matrices.at("v").row(3).transpose());
}

TEST_CASE("precomputed rows with the wrong length are rejected") {
  TempDir dir;
  write_file(dir / "manifest.json", R"({
    "images": [{"id": "a", "person": "p1"}, {"id": "b", "person": "p2"}],
    "channels": [{"name": "m", "kind": "precomputed_distance", "file": "m.csv"}]})");
  write_file(dir / "m.csv", "a,0.1\n");
  CHECK(load_error(dir / "manifest.json").find("expected probe id and 2 distances") != std::string::npos);
  write_file(dir / "m.csv", "a,0.1,-1\n");
  CHECK(load_error(dir / "manifest.json").find("non-negative") != std::string::npos);
}

TEST_CASE("probe files") {
  TempDir dir;
  write_file(dir / "probe.json", R"({"probe_id": "q", "vectors": {"f": [1, 2]}, "precomputed": {"m": [0.5, 0.25]}})");
  const ProbeQuery p = load_probe(dir / "probe.json");
  CHECK(p.probe_id == "q");
  CHECK(p.vectors.at("f")[1] == 2.0);
  CHECK(p.precomputed.at("m")[1] == 0.25);
  write_file(dir / "bad.json", R"({"vectors": {}})");
  CHECK_THROWS_AS(load_probe(dir / "bad.json"), Error);
}

TEST_CASE("format_double round-trips") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int k = 0; k < 1000; ++k) {
    const double x = u(rng) * std::pow(10.0, k % 20 - 10);
    CHECK(std::stod(format_double(x)) == x);
  }
}
