#include "mdgr/codebook.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "mdgr/error.hpp"

namespace mdgr {

namespace {

double squared_distance(const float* a, const float* b, int n) {
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double diff = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += diff * diff;
  }
  return acc;
}

std::vector<float> rotate(std::span<const float> x, const Tensor<float>& rotation) {
  const int d = rotation.dim(0);
  std::vector<float> out(static_cast<std::size_t>(d));
  for (int r = 0; r < d; ++r) {
    double acc = 0.0;
    const float* row = rotation.data() + static_cast<std::size_t>(r) * d;
    for (int c = 0; c < d; ++c) acc += static_cast<double>(row[c]) * x[c];
    out[r] = static_cast<float>(acc);
  }
  return out;
}

void append_float(std::string& out, float value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.8e", static_cast<double>(value));
  out += buf;
}

void append_floats(std::string& out, std::span<const float> values) {
  out += "[";
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out += ",";
    append_float(out, values[i]);
  }
  out += "]";
}

}  // namespace

RotationKind parse_rotation_kind(const std::string& text) {
  if (text == "random") return RotationKind::kRandom;
  if (text == "identity") return RotationKind::kIdentity;
  fail(ErrorKind::kInvalidArgument, "unknown rotation kind '" + text + "'");
}

std::string to_string(RotationKind kind) {
  return kind == RotationKind::kRandom ? "random" : "identity";
}

std::vector<int> CodebookSet::vocab_sizes() const {
  std::vector<int> out;
  for (const auto& cb : codebooks) out.push_back(cb.dim(0));
  return out;
}

int CodebookSet::offset(int subspace) const {
  int off = 0;
  for (int i = 0; i < subspace; ++i) off += sub_dims[static_cast<std::size_t>(i)];
  return off;
}

void CodebookSet::validate() const {
  const int d = dim();
  require(rotation.rank() == 2 && rotation.dim(0) == rotation.dim(1), ErrorKind::kFormat,
          "codebook rotation must be square, got " + shape_string(rotation.shape()));
  require(!sub_dims.empty() && sub_dims.size() == codebooks.size(), ErrorKind::kFormat,
          "codebook: sub_dims and codebooks disagree on L");
  int total = 0;
  for (std::size_t l = 0; l < sub_dims.size(); ++l) {
    require(sub_dims[l] > 0, ErrorKind::kFormat, "codebook: sub-dimension must be positive");
    total += sub_dims[l];
    const Tensor<float>& cb = codebooks[l];
    require(cb.rank() == 2 && cb.dim(1) == sub_dims[l], ErrorKind::kFormat,
            "codebook " + std::to_string(l) + " has shape " + shape_string(cb.shape()));
    require(cb.dim(0) >= 2, ErrorKind::kFormat, "codebook vocabulary must have at least 2 words");
    for (float v : cb.values()) {
      require(std::isfinite(v), ErrorKind::kFormat, "codebook contains a non-finite codeword");
    }
  }
  require(total == d, ErrorKind::kFormat,
          "codebook: sub_dims sum to " + std::to_string(total) + ", rotation is " +
              std::to_string(d));
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      double acc = 0.0;
      for (int r = 0; r < d; ++r) acc += static_cast<double>(rotation.at(r, i)) * rotation.at(r, j);
      const double expected = i == j ? 1.0 : 0.0;
      require(std::abs(acc - expected) <= 1e-5, ErrorKind::kFormat,
              "codebook rotation is not orthonormal");
    }
  }
}

std::vector<int> equal_sub_dims(int dim, int num_subspaces) {
  require(num_subspaces >= 1 && dim >= num_subspaces, ErrorKind::kInvalidArgument,
          "cannot split dimension " + std::to_string(dim) + " into " +
              std::to_string(num_subspaces) + " subspaces");
  std::vector<int> dims(static_cast<std::size_t>(num_subspaces), dim / num_subspaces);
  dims.back() = dim - (num_subspaces - 1) * (dim / num_subspaces);
  return dims;
}

Tensor<float> fit_rotation(int dim, int num_subspaces, Rng& rng, RotationKind kind) {
  require(dim >= num_subspaces, ErrorKind::kInvalidArgument,
          "fit_rotation: dimension " + std::to_string(dim) + " smaller than L=" +
              std::to_string(num_subspaces));
  Tensor<float> out({dim, dim});
  if (kind == RotationKind::kIdentity) {
    for (int i = 0; i < dim; ++i) out.at(i, i) = 1.0f;
    return out;
  }
  // Modified Gram-Schmidt over rows, in double.
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(dim),
                                        std::vector<double>(static_cast<std::size_t>(dim)));
  for (auto& row : rows) {
    for (double& v : row) v = rng.normal();
  }
  for (int i = 0; i < dim; ++i) {
    auto& ri = rows[static_cast<std::size_t>(i)];
    for (int pass = 0; pass < 2; ++pass) {
      for (int j = 0; j < i; ++j) {
        const auto& rj = rows[static_cast<std::size_t>(j)];
        double proj = 0.0;
        for (int c = 0; c < dim; ++c) proj += ri[c] * rj[c];
        for (int c = 0; c < dim; ++c) ri[c] -= proj * rj[c];
      }
    }
    double norm = 0.0;
    for (double v : ri) norm += v * v;
    norm = std::sqrt(norm);
    require(norm > 1e-12, ErrorKind::kNumericOverflow, "fit_rotation: degenerate Gaussian draw");
    for (double& v : ri) v /= norm;
  }
  for (int i = 0; i < dim; ++i) {
    for (int j = 0; j < dim; ++j) out.at(i, j) = static_cast<float>(rows[i][j]);
  }
  return out;
}

std::vector<std::vector<float>> split_subspaces(std::span<const float> x, const CodebookSet& cs) {
  require(static_cast<int>(x.size()) == cs.dim(), ErrorKind::kShapeMismatch,
          "split_subspaces: vector of length " + std::to_string(x.size()) +
              " for codebook dimension " + std::to_string(cs.dim()));
  const std::vector<float> rotated = rotate(x, cs.rotation);
  std::vector<std::vector<float>> parts;
  int off = 0;
  for (int width : cs.sub_dims) {
    parts.emplace_back(rotated.begin() + off, rotated.begin() + off + width);
    off += width;
  }
  return parts;
}

int nearest_codeword(std::span<const float> x, const Tensor<float>& codebook) {
  require(static_cast<int>(x.size()) == codebook.dim(1), ErrorKind::kShapeMismatch,
          "nearest_codeword: vector of length " + std::to_string(x.size()) + " for codebook " +
              shape_string(codebook.shape()));
  int best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (int j = 0; j < codebook.dim(0); ++j) {
    const double dist = squared_distance(x.data(), codebook.row(j).data(), codebook.dim(1));
    if (dist < best_dist) {
      best_dist = dist;
      best = j;
    }
  }
  return best;
}

KMeansResult kmeans_fit(const Tensor<float>& points, int clusters, int iters, Rng& rng) {
  require(points.rank() == 2, ErrorKind::kShapeMismatch, "kmeans_fit: points must be a matrix");
  const int n = points.dim(0), d = points.dim(1);
  require(clusters >= 1 && n >= clusters, ErrorKind::kInvalidArgument,
          "kmeans_fit: need at least K=" + std::to_string(clusters) + " points, got " +
              std::to_string(n));
  require(iters >= 1, ErrorKind::kInvalidArgument, "kmeans_fit: iters must be >= 1");

  KMeansResult result;
  Tensor<float> centroids({clusters, d});

  // Greedy k-means++ seeding: each step samples 2 + ln K candidates by D^2
  // and keeps the one that lowers the potential most.
  const int trials = 2 + static_cast<int>(std::log(static_cast<double>(clusters)));
  std::vector<double> nearest(static_cast<std::size_t>(n));
  std::vector<double> candidate_nearest(static_cast<std::size_t>(n));
  std::vector<double> best_nearest;
  int chosen = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n)));
  for (int i = 0; i < n; ++i) {
    nearest[i] = squared_distance(points.row(i).data(), points.row(chosen).data(), d);
  }
  std::copy(points.row(chosen).begin(), points.row(chosen).end(), centroids.row(0).begin());
  for (int c = 1; c < clusters; ++c) {
    double total = 0.0;
    for (double v : nearest) total += v;
    double best_potential = std::numeric_limits<double>::infinity();
    int best = 0;
    for (int t = 0; t < trials; ++t) {
      // Every point coincides with a centroid already; duplicates are fine.
      const int cand = total > 0.0 ? static_cast<int>(rng.categorical(nearest))
                                   : static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n)));
      double potential = 0.0;
      for (int i = 0; i < n; ++i) {
        candidate_nearest[i] = std::min(
            nearest[i], squared_distance(points.row(i).data(), points.row(cand).data(), d));
        potential += candidate_nearest[i];
      }
      if (potential < best_potential) {
        best_potential = potential;
        best = cand;
        best_nearest = candidate_nearest;
      }
    }
    nearest = best_nearest;
    std::copy(points.row(best).begin(), points.row(best).end(), centroids.row(c).begin());
  }

  std::vector<int> assignment(static_cast<std::size_t>(n), -1);
  std::vector<double> dist(static_cast<std::size_t>(n));
  auto assign = [&]() {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      const int best = nearest_codeword(points.row(i), centroids);
      dist[i] = squared_distance(points.row(i).data(), centroids.row(best).data(), d);
      changed = changed || best != assignment[i];
      assignment[i] = best;
    }
    return changed;
  };
  auto distortion = [&]() {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      total += squared_distance(points.row(i).data(), centroids.row(assignment[i]).data(), d);
    }
    return total;
  };

  assign();
  result.initial_distortion = distortion();

  for (int it = 0; it < iters; ++it) {
    if (it > 0) {
      const bool changed = assign();
      if (!changed) {
        result.distortion.push_back(distortion());
        break;
      }
    }
    std::vector<double> sums(static_cast<std::size_t>(clusters) * d, 0.0);
    std::vector<int> counts(static_cast<std::size_t>(clusters), 0);
    for (int i = 0; i < n; ++i) {
      const int c = assignment[i];
      counts[c] += 1;
      for (int j = 0; j < d; ++j) sums[static_cast<std::size_t>(c) * d + j] += points.at(i, j);
    }
    for (int c = 0; c < clusters; ++c) {
      if (counts[c] == 0) continue;
      for (int j = 0; j < d; ++j) {
        centroids.at(c, j) = static_cast<float>(sums[static_cast<std::size_t>(c) * d + j] / counts[c]);
      }
    }
    for (int i = 0; i < n; ++i) {
      dist[i] = squared_distance(points.row(i).data(), centroids.row(assignment[i]).data(), d);
    }
    for (int c = 0; c < clusters; ++c) {
      if (counts[c] != 0) continue;
      int far = -1;
      for (int i = 0; i < n; ++i) {
        if (counts[assignment[i]] <= 1) continue;
        if (far < 0 || dist[i] > dist[far]) far = i;
      }
      if (far < 0) continue;
      counts[assignment[far]] -= 1;
      assignment[far] = c;
      counts[c] = 1;
      std::copy(points.row(far).begin(), points.row(far).end(), centroids.row(c).begin());
      dist[far] = 0.0;
    }
    result.distortion.push_back(distortion());
  }

  result.centroids = std::move(centroids);
  result.assignment = std::move(assignment);
  return result;
}

Sid quantize_item(std::span<const float> x, const CodebookSet& cs) {
  const auto parts = split_subspaces(x, cs);
  Sid sid;
  sid.tokens.reserve(parts.size());
  for (std::size_t l = 0; l < parts.size(); ++l) {
    sid.tokens.push_back(nearest_codeword(parts[l], cs.codebooks[l]));
  }
  return sid;
}

std::vector<float> reconstruct_sid(const Sid& sid, const CodebookSet& cs) {
  require(sid.length() == cs.num_subspaces(), ErrorKind::kShapeMismatch,
          "reconstruct_sid: SID length " + std::to_string(sid.length()) + " for L=" +
              std::to_string(cs.num_subspaces()));
  const int d = cs.dim();
  std::vector<double> rotated;
  rotated.reserve(static_cast<std::size_t>(d));
  for (int l = 0; l < cs.num_subspaces(); ++l) {
    const Tensor<float>& cb = cs.codebooks[static_cast<std::size_t>(l)];
    const int token = sid[l];
    require(token >= 0 && token < cb.dim(0), ErrorKind::kOutOfRange,
            "reconstruct_sid: token " + std::to_string(token) + " at position " +
                std::to_string(l) + " outside vocabulary " + std::to_string(cb.dim(0)));
    for (float v : cb.row(token)) rotated.push_back(v);
  }
  // x = R^T y
  std::vector<float> out(static_cast<std::size_t>(d));
  for (int c = 0; c < d; ++c) {
    double acc = 0.0;
    for (int r = 0; r < d; ++r) acc += static_cast<double>(cs.rotation.at(r, c)) * rotated[r];
    out[c] = static_cast<float>(acc);
  }
  return out;
}

double reconstruction_distance(std::span<const float> x, const Sid& sid, const CodebookSet& cs) {
  const auto parts = split_subspaces(x, cs);
  double total = 0.0;
  for (std::size_t l = 0; l < parts.size(); ++l) {
    total += squared_distance(parts[l].data(), cs.codebooks[l].row(sid.tokens[l]).data(),
                              cs.sub_dims[l]);
  }
  return total;
}

CodebookSet fit_codebooks(const Tensor<float>& embeddings, const CodebookOptions& options,
                          Rng& rng) {
  require(embeddings.rank() == 2, ErrorKind::kShapeMismatch,
          "fit_codebooks: embeddings must be an n x d matrix");
  const int n = embeddings.dim(0), d = embeddings.dim(1);
  CodebookSet cs;
  Rng rotation_rng = rng.derive("rotation");
  cs.rotation = fit_rotation(d, options.num_subspaces, rotation_rng, options.rotation);
  cs.sub_dims = equal_sub_dims(d, options.num_subspaces);

  Tensor<float> rotated({n, d});
  for (int i = 0; i < n; ++i) {
    const auto r = rotate(embeddings.row(i), cs.rotation);
    std::copy(r.begin(), r.end(), rotated.row(i).begin());
  }
  int off = 0;
  for (int l = 0; l < options.num_subspaces; ++l) {
    const int width = cs.sub_dims[static_cast<std::size_t>(l)];
    Tensor<float> slice({n, width});
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < width; ++j) slice.at(i, j) = rotated.at(i, off + j);
    }
    Rng sub_rng = rng.derive("subspace-" + std::to_string(l));
    cs.codebooks.push_back(
        kmeans_fit(slice, options.vocab_size, options.kmeans_iters, sub_rng).centroids);
    off += width;
  }
  return cs;
}

InverseIndex InverseIndex::build(const ItemEmbeddings& items, const CodebookSet& cs) {
  require(!items.empty(), ErrorKind::kInvalidArgument, "build_inverse_index: no items");
  struct Entry {
    double distance;
    std::string id;
  };
  std::map<Sid, std::vector<Entry>> grouped;
  std::map<std::string, Sid> seen;
  for (const auto& [id, embedding] : items) {
    if (seen.contains(id)) {
      fail(ErrorKind::kInvalidArgument, "build_inverse_index: duplicate item id '" + id + "'");
    }
    Sid sid = quantize_item(embedding, cs);
    grouped[sid].push_back(Entry{reconstruction_distance(embedding, sid, cs), id});
    seen.emplace(id, std::move(sid));
  }
  InverseIndex index;
  for (auto& [sid, entries] : grouped) {
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
      if (a.distance != b.distance) return a.distance < b.distance;
      return a.id < b.id;
    });
    std::vector<std::string> ids;
    for (auto& e : entries) ids.push_back(std::move(e.id));
    index.add_bucket(sid, std::move(ids));
  }
  return index;
}

void InverseIndex::add_bucket(const Sid& sid, std::vector<std::string> items) {
  require(!buckets_.contains(sid), ErrorKind::kFormat,
          "inverse index: SID " + to_string(sid.tokens) + " listed twice");
  require(buckets_.empty() || buckets_.begin()->first.length() == sid.length(),
          ErrorKind::kFormat, "inverse index: SID lengths differ");
  for (const auto& item : items) {
    require(!item_to_sid_.contains(item), ErrorKind::kFormat,
            "inverse index: item '" + item + "' appears in more than one bucket");
    item_to_sid_.emplace(item, sid);
  }
  buckets_.emplace(sid, std::move(items));
}

const std::vector<std::string>& InverseIndex::lookup(const Sid& sid) const {
  static const std::vector<std::string> kEmpty;
  auto it = buckets_.find(sid);
  return it == buckets_.end() ? kEmpty : it->second;
}

const Sid& InverseIndex::sid_of(const std::string& item) const {
  auto it = item_to_sid_.find(item);
  require(it != item_to_sid_.end(), ErrorKind::kOutOfRange,
          "inverse index has no item '" + item + "'");
  return it->second;
}

int InverseIndex::sid_length() const {
  return buckets_.empty() ? 0 : buckets_.begin()->first.length();
}

CollisionStats collision_stats(const InverseIndex& index) {
  CollisionStats stats;
  stats.items = index.item_count();
  stats.distinct_sids = index.bucket_count();
  for (const auto& [sid, items] : index.buckets()) {
    stats.max_bucket = std::max(stats.max_bucket, items.size());
  }
  if (stats.distinct_sids > 0) {
    stats.mean_bucket = static_cast<double>(stats.items) / static_cast<double>(stats.distinct_sids);
  }
  if (stats.items > 0) {
    stats.collision_rate =
        1.0 - static_cast<double>(stats.distinct_sids) / static_cast<double>(stats.items);
  }
  return stats;
}

std::string codebook_to_json(const CodebookSet& cs) {
  std::string out = "{\"version\":1,\"L\":" + std::to_string(cs.num_subspaces());
  auto ints = [&](const std::vector<int>& values) {
    out += "[";
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i > 0) out += ",";
      out += std::to_string(values[i]);
    }
    out += "]";
  };
  out += ",\"sub_dims\":";
  ints(cs.sub_dims);
  out += ",\"vocab_sizes\":";
  ints(cs.vocab_sizes());
  out += ",\"rotation\":";
  append_floats(out, cs.rotation.values());
  out += ",\"codebooks\":[";
  for (std::size_t l = 0; l < cs.codebooks.size(); ++l) {
    if (l > 0) out += ",";
    append_floats(out, cs.codebooks[l].values());
  }
  out += "]}\n";
  return out;
}

CodebookSet codebook_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kParse, std::string("codebook JSON: ") + e.what());
  }
  try {
    require(doc.at("version").get<int>() == 1, ErrorKind::kFormat,
            "codebook JSON: unsupported version");
    const int L = doc.at("L").get<int>();
    CodebookSet cs;
    cs.sub_dims = doc.at("sub_dims").get<std::vector<int>>();
    const auto vocab = doc.at("vocab_sizes").get<std::vector<int>>();
    require(static_cast<int>(cs.sub_dims.size()) == L && static_cast<int>(vocab.size()) == L,
            ErrorKind::kFormat, "codebook JSON: L disagrees with sub_dims/vocab_sizes");
    int d = 0;
    for (int w : cs.sub_dims) d += w;
    auto rot = doc.at("rotation").get<std::vector<double>>();
    require(rot.size() == static_cast<std::size_t>(d) * d && d > 0, ErrorKind::kFormat,
            "codebook JSON: rotation has " + std::to_string(rot.size()) + " values, expected " +
                std::to_string(d * d));
    cs.rotation = Tensor<float>({d, d}, std::vector<float>(rot.begin(), rot.end()));
    const auto& books = doc.at("codebooks");
    require(books.is_array() && static_cast<int>(books.size()) == L, ErrorKind::kFormat,
            "codebook JSON: expected " + std::to_string(L) + " codebooks");
    for (int l = 0; l < L; ++l) {
      auto values = books[static_cast<std::size_t>(l)].get<std::vector<double>>();
      const int rows = vocab[static_cast<std::size_t>(l)];
      const int cols = cs.sub_dims[static_cast<std::size_t>(l)];
      require(rows > 0 && values.size() == static_cast<std::size_t>(rows) * cols,
              ErrorKind::kFormat,
              "codebook JSON: codebook " + std::to_string(l) + " has wrong size");
      cs.codebooks.emplace_back(Shape{rows, cols}, std::vector<float>(values.begin(), values.end()));
    }
    cs.validate();
    return cs;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, std::string("codebook JSON: ") + e.what());
  }
}

void save_codebook(const CodebookSet& cs, const std::string& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write codebook to " + path);
  out << codebook_to_json(cs);
  require(static_cast<bool>(out), ErrorKind::kIo, "failed writing codebook to " + path);
}

CodebookSet load_codebook(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot read codebook " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return codebook_from_json(buffer.str());
}

void save_inverse_index(const InverseIndex& index, const std::string& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write index to " + path);
  for (const auto& [sid, items] : index.buckets()) {
    nlohmann::json line = {{"sid", sid.tokens}, {"items", items}};
    out << line.dump() << "\n";
  }
}

InverseIndex load_inverse_index(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot read index " + path);
  InverseIndex index;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto doc = nlohmann::json::parse(line);
      index.add_bucket(Sid{doc.at("sid").get<std::vector<int>>()},
                       doc.at("items").get<std::vector<std::string>>());
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kParse, path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return index;
}

}  // namespace mdgr
