#include "crfreid/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <string>
#include <unordered_map>

namespace crfreid {

// Open-addressing table from lattice keys (first d coordinates of an elevated
// lattice point) to dense vertex ids. Ids are handed out in insertion order, so
// the vertex numbering only depends on the point order.
class PermutohedralLattice::KeyTable {
 public:
  KeyTable(int d, std::vector<int>& keys, std::size_t expected)
      : d_(d), keys_(keys) {
    std::size_t cap = 64;
    while (cap < 2 * expected) cap <<= 1;
    slots_.assign(cap, -1);
  }

  std::int32_t find(const int* key, bool create) {
    if (2 * size() + 1 >= slots_.size()) grow();
    std::size_t h = hash(key) & (slots_.size() - 1);
    while (true) {
      const std::int32_t id = slots_[h];
      if (id < 0) {
        if (!create) return -1;
        const auto new_id = static_cast<std::int32_t>(size());
        keys_.insert(keys_.end(), key, key + d_);
        slots_[h] = new_id;
        return new_id;
      }
      if (equal(id, key)) return id;
      h = (h + 1) & (slots_.size() - 1);
    }
  }

  std::size_t size() const { return keys_.size() / static_cast<std::size_t>(d_); }

 private:
  std::size_t hash(const int* key) const {
    std::size_t h = 0;
    for (int k = 0; k < d_; ++k) {
      h += static_cast<std::size_t>(static_cast<std::uint32_t>(key[k]));
      h *= 2531011;
    }
    return h ^ (h >> 17);
  }

  bool equal(std::int32_t id, const int* key) const {
    const int* stored = keys_.data() + static_cast<std::size_t>(id) * static_cast<std::size_t>(d_);
    for (int k = 0; k < d_; ++k)
      if (stored[k] != key[k]) return false;
    return true;
  }

  void grow() {
    std::vector<std::int32_t> old(slots_.size() * 2, -1);
    slots_.swap(old);
    for (std::size_t id = 0; id < size(); ++id) {
      std::size_t h = hash(keys_.data() + id * static_cast<std::size_t>(d_)) & (slots_.size() - 1);
      while (slots_[h] >= 0) h = (h + 1) & (slots_.size() - 1);
      slots_[h] = static_cast<std::int32_t>(id);
    }
  }

  int d_;
  std::vector<int>& keys_;
  std::vector<std::int32_t> slots_;
};

namespace {

// Response at vertex c of the simplex to a unit impulse at vertex r, after
// `passes` rounds of the axis blurs on an infinite lattice. The blur commutes
// with coordinate permutations, so the canonical simplex serves every point.
// Coordinates stay within passes * (d + 1) * d of the origin, which lets a
// key pack into one integer.
std::vector<double> compute_blur_gram(int d, const std::vector<int>& canonical, int passes) {
  const int d1 = d + 1;
  const std::int64_t span = 2 * static_cast<std::int64_t>(passes) * d1 * d + 2 * d1 + 1;
  const std::int64_t origin = span / 2;
  if (std::pow(static_cast<double>(span), d) > 9.0e18)
    throw Error("lattice: " + std::to_string(passes) + " blur passes are too many for dimension " + std::to_string(d));
  auto pack = [&](const int* key) {
    std::int64_t code = 0;
    for (int i = 0; i < d; ++i) code = code * span + (key[i] + origin);
    return code;
  };
  std::vector<std::int64_t> stride(static_cast<std::size_t>(d), 1);
  for (int i = d - 2; i >= 0; --i) stride[static_cast<std::size_t>(i)] = stride[static_cast<std::size_t>(i + 1)] * span;
  std::int64_t all_minus = 0;
  for (int i = 0; i < d; ++i) all_minus += stride[static_cast<std::size_t>(i)];

  std::vector<std::int64_t> corner(static_cast<std::size_t>(d1));
  for (int r = 0; r <= d; ++r) corner[static_cast<std::size_t>(r)] = pack(canonical.data() + r * d1);

  std::vector<double> gram(static_cast<std::size_t>(d1 * d1), 0.0);
  for (int r = 0; r <= d; ++r) {
    std::unordered_map<std::int64_t, double> field{{corner[static_cast<std::size_t>(r)], 1.0}};
    for (int pass = 0; pass < passes; ++pass) {
      for (int j = 0; j <= d; ++j) {
        // Neighbour along axis j: every coordinate -1 (+1), coordinate j +d (-d).
        const std::int64_t step = j < d ? -all_minus + static_cast<std::int64_t>(d1) * stride[static_cast<std::size_t>(j)]
                                        : -all_minus;
        std::unordered_map<std::int64_t, double> next;
        next.reserve(field.size() * 3);
        for (const auto& [code, w] : field) {
          next[code] += 0.5 * w;
          next[code + step] += 0.25 * w;
          next[code - step] += 0.25 * w;
        }
        field.swap(next);
      }
    }
    for (int c = 0; c <= d; ++c) {
      const auto it = field.find(corner[static_cast<std::size_t>(c)]);
      gram[static_cast<std::size_t>(r * d1 + c)] = it == field.end() ? 0.0 : it->second;
    }
  }
  return gram;
}

std::vector<double> blur_gram(int d, const std::vector<int>& canonical, int passes) {
  static std::mutex mutex;
  static std::map<std::pair<int, int>, std::vector<double>> cache;
  const std::lock_guard<std::mutex> lock(mutex);
  auto it = cache.find({d, passes});
  if (it == cache.end()) it = cache.emplace(std::make_pair(d, passes), compute_blur_gram(d, canonical, passes)).first;
  return it->second;
}

}  // namespace

PermutohedralLattice::PermutohedralLattice(const FeatureMatrix& points, double sigma, const LatticeOptions& requested)
    : d_(static_cast<int>(points.cols())), n_(points.rows()), sigma_(sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw Error("lattice: sigma must be positive and finite");
  if (d_ < 1) throw Error("lattice: points need at least one dimension");
  if (d_ > requested.max_dim)
    throw Error("lattice: feature dimension " + std::to_string(d_) + " exceeds the filtering limit of " +
                std::to_string(requested.max_dim) + "; project the channel or use the exact backend");

  const int d = d_;
  const int d1 = d + 1;
  const auto n = static_cast<std::size_t>(n_);
  const LatticeOptions options = LatticeOptions::resolved(d, requested);

  // exp(-|x|^2 / sigma) is a Gaussian with per-axis variance sigma / 2. The blur
  // plus splat/slice give per-axis variance 2/3 (d+1)^2 in elevated units.
  std::vector<double> scale(static_cast<std::size_t>(d));
  passes_ = options.blur_passes;
  const double rho = std::sqrt((3.0 * passes_ + 1.0) / 4.0);
  const double inv_std = rho * std::sqrt(2.0 / 3.0) * d1 * std::sqrt(2.0 / sigma);
  for (int i = 0; i < d; ++i) scale[static_cast<std::size_t>(i)] = inv_std / std::sqrt((i + 1.0) * (i + 2.0));

  // Peak-one normalization: ratio of the Gaussian's integral to the feature-space
  // volume owned by one lattice vertex. Independent of sigma.
  normalization_ = std::pow(rho, d) * std::pow(4.0 * std::numbers::pi / 3.0, d / 2.0) * std::sqrt(static_cast<double>(d1));

  std::vector<int> canonical(static_cast<std::size_t>(d1 * d1));
  for (int i = 0; i <= d; ++i) {
    for (int j = 0; j <= d - i; ++j) canonical[static_cast<std::size_t>(i * d1 + j)] = i;
    for (int j = d - i + 1; j <= d; ++j) canonical[static_cast<std::size_t>(i * d1 + j)] = i - d1;
  }

  KeyTable table(d, keys_, n * static_cast<std::size_t>(d1));
  offsets_.resize(n * static_cast<std::size_t>(d1));
  barycentric_.resize(n * static_cast<std::size_t>(d1));

  std::vector<double> elevated(static_cast<std::size_t>(d1));
  std::vector<int> rem0(static_cast<std::size_t>(d1));
  std::vector<int> rank(static_cast<std::size_t>(d1));
  std::vector<double> bary(static_cast<std::size_t>(d + 2));
  std::vector<int> key(static_cast<std::size_t>(d));

  for (std::size_t p = 0; p < n; ++p) {
    // Elevate onto the hyperplane sum(x) = 0 of R^{d+1}.
    double sm = 0.0;
    for (int j = d; j > 0; --j) {
      const double cf = points(static_cast<Index>(p), j - 1) * scale[static_cast<std::size_t>(j - 1)];
      elevated[static_cast<std::size_t>(j)] = sm - j * cf;
      sm += cf;
    }
    elevated[0] = sm;

    // Closest remainder-0 lattice point.
    int sum = 0;
    for (int i = 0; i <= d; ++i) {
      const double v = elevated[static_cast<std::size_t>(i)] / d1;
      const double up = std::ceil(v) * d1;
      const double down = std::floor(v) * d1;
      const double e = elevated[static_cast<std::size_t>(i)];
      rem0[static_cast<std::size_t>(i)] = static_cast<int>(up - e < e - down ? up : down);
      sum += rem0[static_cast<std::size_t>(i)];
    }
    sum /= d1;

    // Rank the differential to find the enclosing simplex.
    std::fill(rank.begin(), rank.end(), 0);
    for (int i = 0; i < d; ++i) {
      const double di = elevated[static_cast<std::size_t>(i)] - rem0[static_cast<std::size_t>(i)];
      for (int j = i + 1; j <= d; ++j) {
        if (di < elevated[static_cast<std::size_t>(j)] - rem0[static_cast<std::size_t>(j)])
          ++rank[static_cast<std::size_t>(i)];
        else
          ++rank[static_cast<std::size_t>(j)];
      }
    }
    for (int i = 0; i <= d; ++i) {
      auto& r = rank[static_cast<std::size_t>(i)];
      r += sum;
      if (r < 0) {
        r += d1;
        rem0[static_cast<std::size_t>(i)] += d1;
      } else if (r > d) {
        r -= d1;
        rem0[static_cast<std::size_t>(i)] -= d1;
      }
    }

    std::fill(bary.begin(), bary.end(), 0.0);
    for (int i = 0; i <= d; ++i) {
      const double v = (elevated[static_cast<std::size_t>(i)] - rem0[static_cast<std::size_t>(i)]) / d1;
      bary[static_cast<std::size_t>(d - rank[static_cast<std::size_t>(i)])] += v;
      bary[static_cast<std::size_t>(d - rank[static_cast<std::size_t>(i)] + 1)] -= v;
    }
    bary[0] += 1.0 + bary[static_cast<std::size_t>(d1)];

    for (int r = 0; r <= d; ++r) {
      for (int i = 0; i < d; ++i)
        key[static_cast<std::size_t>(i)] =
            rem0[static_cast<std::size_t>(i)] + canonical[static_cast<std::size_t>(r * d1 + rank[static_cast<std::size_t>(i)])];
      offsets_[p * static_cast<std::size_t>(d1) + static_cast<std::size_t>(r)] = table.find(key.data(), true);
      barycentric_[p * static_cast<std::size_t>(d1) + static_cast<std::size_t>(r)] = bary[static_cast<std::size_t>(r)];
    }
  }

  // Dilate: ring by ring, add the axis neighbours of the newest vertices.
  {
    std::vector<int> ring(static_cast<std::size_t>(d));
    std::size_t begin = 0;
    for (int round = 0; round < options.dilation; ++round) {
      const std::size_t end = table.size();
      for (std::size_t v = begin; v < end; ++v) {
        for (int j = 0; j <= d; ++j) {
          for (const int step : {-1, 1}) {
            const int* k = keys_.data() + v * static_cast<std::size_t>(d);
            for (int i = 0; i < d; ++i) ring[static_cast<std::size_t>(i)] = k[i] - step;
            if (j < d) ring[static_cast<std::size_t>(j)] = k[j] + step * d;
            table.find(ring.data(), true);
          }
        }
      }
      begin = end;
    }
  }

  // Blur neighbours along each axis. Axis j steps by (d+1) e_j - 1 in the
  // elevated coordinates; only the first d coordinates are stored in keys.
  const std::size_t m = table.size();
  neighbors_.assign(static_cast<std::size_t>(d1) * m * 2, -1);
  std::vector<int> n1(static_cast<std::size_t>(d));
  std::vector<int> n2(static_cast<std::size_t>(d));
  for (int j = 0; j <= d; ++j) {
    for (std::size_t v = 0; v < m; ++v) {
      const int* k = keys_.data() + v * static_cast<std::size_t>(d);
      for (int i = 0; i < d; ++i) {
        n1[static_cast<std::size_t>(i)] = k[i] - 1;
        n2[static_cast<std::size_t>(i)] = k[i] + 1;
      }
      if (j < d) {
        n1[static_cast<std::size_t>(j)] = k[j] + d;
        n2[static_cast<std::size_t>(j)] = k[j] - d;
      }
      const std::size_t slot = (static_cast<std::size_t>(j) * m + v) * 2;
      neighbors_[slot] = table.find(n1.data(), false);
      neighbors_[slot + 1] = table.find(n2.data(), false);
    }
  }

  // Groups of exactly coincident points, recorded only if any exist.
  {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    auto row_less = [&](std::size_t a, std::size_t b) {
      for (int j = 0; j < d; ++j) {
        if (points(static_cast<Index>(a), j) != points(static_cast<Index>(b), j))
          return points(static_cast<Index>(a), j) < points(static_cast<Index>(b), j);
      }
      return a < b;
    };
    std::sort(order.begin(), order.end(), row_less);
    std::vector<std::int32_t> group(n, 0);
    std::int32_t groups = 0;
    bool duplicates = false;
    for (std::size_t k = 0; k < n; ++k) {
      const bool same = k > 0 && points.row(static_cast<Index>(order[k])) == points.row(static_cast<Index>(order[k - 1]));
      if (k > 0 && !same) ++groups;
      duplicates = duplicates || same;
      group[order[k]] = groups;
    }
    if (duplicates) {
      group_ = std::move(group);
      group_count_ = static_cast<std::size_t>(groups) + 1;
    }
  }

  // Self response of every point: b^T G b, with G the vertex-to-vertex blur
  // response of the point's simplex on an untruncated lattice.
  const std::vector<double> gram = blur_gram(d, canonical, passes_);
  self_weight_.assign(n, 0.0);
  for (std::size_t p = 0; p < n; ++p) {
    const double* b = barycentric_.data() + p * static_cast<std::size_t>(d1);
    double self = 0.0;
    for (int r = 0; r <= d; ++r)
      for (int c = 0; c <= d; ++c) self += b[r] * b[c] * gram[static_cast<std::size_t>(r * d1 + c)];
    self_weight_[p] = normalization_ * self;
  }

  // Coincident groups cancel the lattice's own response to the whole group in
  // `filter`, so they need the self response with truncation included.
  if (group_count_ > 0) {
    std::vector<double> group_self(group_count_, -1.0);
    std::vector<std::size_t> group_size(group_count_, 0);
    for (std::size_t p = 0; p < n; ++p) ++group_size[static_cast<std::size_t>(group_[p])];
    for (std::size_t p = 0; p < n; ++p) {
      const auto g = static_cast<std::size_t>(group_[p]);
      if (group_size[g] < 2) continue;
      if (group_self[g] < 0.0) group_self[g] = truncated_self_response(p);
      self_weight_[p] = group_self[g];
    }
  }

  // Points with little neighbour mass get most of their response from the
  // kernel tail, which the finite blur truncates. Those rows are filtered exactly.
  points_ = points;
  const Vector density = filter(Vector::Ones(n_));
  for (Index i = 0; i < n_; ++i)
    if (density[i] < options.isolation_threshold) isolated_.push_back(i);
}

double PermutohedralLattice::truncated_self_response(std::size_t p) const {
  const int d1 = d_ + 1;
  const std::size_t m = keys_.size() / static_cast<std::size_t>(d_);
  const std::int32_t* verts = offsets_.data() + p * static_cast<std::size_t>(d1);
  const double* b = barycentric_.data() + p * static_cast<std::size_t>(d1);
  std::unordered_map<std::int32_t, double> field;
  for (int r = 0; r < d1; ++r) field[verts[r]] += b[r];
  for (int pass = 0; pass < passes_; ++pass) {
    for (int j = 0; j < d1; ++j) {
      std::unordered_map<std::int32_t, double> next;
      next.reserve(field.size() * 3);
      for (const auto& [v, w] : field) {
        const std::size_t slot = (static_cast<std::size_t>(j) * m + static_cast<std::size_t>(v)) * 2;
        next[v] += 0.5 * w;
        if (neighbors_[slot] >= 0) next[neighbors_[slot]] += 0.25 * w;
        if (neighbors_[slot + 1] >= 0) next[neighbors_[slot + 1]] += 0.25 * w;
      }
      field.swap(next);
    }
  }
  double self = 0.0;
  for (int r = 0; r < d1; ++r) {
    const auto it = field.find(verts[r]);
    if (it != field.end()) self += b[r] * it->second;
  }
  return normalization_ * self;
}

Vector PermutohedralLattice::apply(const Vector& values) const {
  if (values.size() != n_) throw Error("lattice: value vector length does not match point count");
  const int d1 = d_ + 1;
  const std::size_t m = keys_.size() / static_cast<std::size_t>(d_);
  const auto n = static_cast<std::size_t>(n_);

  std::vector<double> grid(m, 0.0);
  for (std::size_t p = 0; p < n; ++p) {
    const double v = values[static_cast<Index>(p)];
    for (int r = 0; r < d1; ++r) {
      const std::size_t at = p * static_cast<std::size_t>(d1) + static_cast<std::size_t>(r);
      grid[static_cast<std::size_t>(offsets_[at])] += barycentric_[at] * v;
    }
  }

  std::vector<double> scratch(m);
  for (int pass = 0; pass < passes_; ++pass)
  for (int j = 0; j < d1; ++j) {
    const std::int32_t* nb = neighbors_.data() + static_cast<std::size_t>(j) * m * 2;
    for (std::size_t v = 0; v < m; ++v) {
      const double a = nb[2 * v] >= 0 ? grid[static_cast<std::size_t>(nb[2 * v])] : 0.0;
      const double c = nb[2 * v + 1] >= 0 ? grid[static_cast<std::size_t>(nb[2 * v + 1])] : 0.0;
      scratch[v] = 0.5 * grid[v] + 0.25 * (a + c);
    }
    grid.swap(scratch);
  }

  Vector out(n_);
  for (std::size_t p = 0; p < n; ++p) {
    double acc = 0.0;
    for (int r = 0; r < d1; ++r) {
      const std::size_t at = p * static_cast<std::size_t>(d1) + static_cast<std::size_t>(r);
      acc += barycentric_[at] * grid[static_cast<std::size_t>(offsets_[at])];
    }
    out[static_cast<Index>(p)] = normalization_ * acc;
  }
  return out;
}

Vector PermutohedralLattice::filter(const Vector& values) const {
  Vector out = apply(values);
  for (const Index i : isolated_) {
    double acc = 0.0;
    for (Index j = 0; j < n_; ++j) {
      if (j == i) continue;
      acc += std::exp(-(points_.row(i) - points_.row(j)).squaredNorm() / sigma_) * values[j];
    }
    out[i] = acc;
  }
  auto exact_row = [&](Index i) { return !isolated_.empty() && std::binary_search(isolated_.begin(), isolated_.end(), i); };
  if (group_count_ == 0) {
    for (Index i = 0; i < n_; ++i)
      if (!exact_row(i)) out[i] -= self_weight_[static_cast<std::size_t>(i)] * values[i];
    return out;
  }
  // Coincident points see each other through the lattice with the self weight;
  // swap that for the exact kernel value 1.
  std::vector<double> sums(group_count_, 0.0);
  for (Index i = 0; i < n_; ++i) sums[static_cast<std::size_t>(group_[static_cast<std::size_t>(i)])] += values[i];
  for (Index i = 0; i < n_; ++i) {
    if (exact_row(i)) continue;
    const double g = sums[static_cast<std::size_t>(group_[static_cast<std::size_t>(i)])];
    out[i] += (g - values[i]) - self_weight_[static_cast<std::size_t>(i)] * g;
  }
  return out;
}

}  // namespace crfreid
