#pragma once

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mdgr/rng.hpp"
#include "mdgr/sid.hpp"
#include "mdgr/tensor.hpp"

namespace mdgr {

enum class RotationKind { kRandom, kIdentity };

RotationKind parse_rotation_kind(const std::string& text);
std::string to_string(RotationKind kind);

// Parallel codebooks: a d x d orthonormal rotation, then L contiguous
// slices of the rotated vector, each quantized against its own codebook.
struct CodebookSet {
  Tensor<float> rotation;              // d x d, row-major
  std::vector<int> sub_dims;           // d_l, sums to d
  std::vector<Tensor<float>> codebooks;  // |V_l| x d_l each

  int num_subspaces() const { return static_cast<int>(sub_dims.size()); }
  int dim() const { return rotation.empty() ? 0 : rotation.dim(0); }
  std::vector<int> vocab_sizes() const;
  int offset(int subspace) const;

  // Throws when any structural invariant is violated.
  void validate() const;
};

struct KMeansResult {
  Tensor<float> centroids;
  std::vector<int> assignment;
  // Distortion after each completed iteration; non-increasing.
  std::vector<double> distortion;
  double initial_distortion = 0.0;
};

// Orthonormal d x d matrix (Gram-Schmidt of a Gaussian matrix), or identity.
Tensor<float> fit_rotation(int dim, int num_subspaces, Rng& rng,
                           RotationKind kind = RotationKind::kRandom);

// Equal-width slicing; the last slice takes the remainder.
std::vector<int> equal_sub_dims(int dim, int num_subspaces);

std::vector<std::vector<float>> split_subspaces(std::span<const float> x, const CodebookSet& cs);

// Lloyd's algorithm with greedy k-means++ seeding. Empty clusters are reseeded at
// the point farthest from its current centroid.
KMeansResult kmeans_fit(const Tensor<float>& points, int clusters, int iters, Rng& rng);

// Index of the nearest codeword; ties go to the lowest index.
int nearest_codeword(std::span<const float> x, const Tensor<float>& codebook);

Sid quantize_item(std::span<const float> x, const CodebookSet& cs);
std::vector<float> reconstruct_sid(const Sid& sid, const CodebookSet& cs);
double reconstruction_distance(std::span<const float> x, const Sid& sid, const CodebookSet& cs);

struct CodebookOptions {
  int num_subspaces = 4;
  int vocab_size = 32;
  int kmeans_iters = 25;
  RotationKind rotation = RotationKind::kRandom;
};

// Fits rotation and every sub-codebook from an n x d embedding matrix.
CodebookSet fit_codebooks(const Tensor<float>& embeddings, const CodebookOptions& options,
                          Rng& rng);

using ItemEmbeddings = std::vector<std::pair<std::string, std::vector<float>>>;

// SID -> items, each bucket ordered by reconstruction distance then item id.
class InverseIndex {
 public:
  InverseIndex() = default;

  static InverseIndex build(const ItemEmbeddings& items, const CodebookSet& cs);

  // Appends a bucket in the given order (used when loading from disk).
  void add_bucket(const Sid& sid, std::vector<std::string> items);

  const std::vector<std::string>& lookup(const Sid& sid) const;
  const Sid& sid_of(const std::string& item) const;
  bool contains_item(const std::string& item) const { return item_to_sid_.contains(item); }

  std::size_t item_count() const { return item_to_sid_.size(); }
  std::size_t bucket_count() const { return buckets_.size(); }
  const std::map<Sid, std::vector<std::string>>& buckets() const { return buckets_; }
  int sid_length() const;

 private:
  std::map<Sid, std::vector<std::string>> buckets_;
  std::map<std::string, Sid> item_to_sid_;
};

struct CollisionStats {
  std::size_t items = 0;
  std::size_t distinct_sids = 0;
  std::size_t max_bucket = 0;
  double mean_bucket = 0.0;
  double collision_rate = 0.0;
};

CollisionStats collision_stats(const InverseIndex& index);

// Codebook artifact: {version, L, sub_dims, vocab_sizes, rotation, codebooks}.
std::string codebook_to_json(const CodebookSet& cs);
CodebookSet codebook_from_json(const std::string& text);
void save_codebook(const CodebookSet& cs, const std::string& path);
CodebookSet load_codebook(const std::string& path);

// One JSON object per line: {"sid": [...], "items": [...]}.
void save_inverse_index(const InverseIndex& index, const std::string& path);
InverseIndex load_inverse_index(const std::string& path);

}  // namespace mdgr
