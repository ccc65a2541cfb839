#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sslada/tensor.hpp"

namespace sslada::data {

constexpr int kUnlabeled = -1;

/// A set of samples sharing one feature dimensionality. Labels are 0/1 or
/// kUnlabeled; ids are unique within a pool.
struct Pool {
  std::vector<std::int64_t> ids;
  Tensor features;  // [n, d]
  std::vector<int> labels;
  std::vector<std::string> domains;

  static Pool empty(std::size_t dim);

  std::size_t size() const { return ids.size(); }
  std::size_t dim() const { return features.cols(); }
  std::size_t labeled_count() const;
  std::size_t positive_count() const;
  bool is_labeled(std::size_t i) const { return labels[i] != kUnlabeled; }

  /// Row index of `id`; throws ArgumentError when absent.
  std::size_t index_of(std::int64_t id) const;
  Pool subset(std::span<const std::size_t> indices) const;
  Pool subset_ids(std::span<const std::int64_t> ids) const;
  /// Same samples with every label removed.
  Pool unlabeled_copy() const;
  void append(const Pool& other);
  /// Checks row counts agree, ids are unique and labels are valid.
  void validate() const;

  bool operator==(const Pool& other) const;
};

enum class DomainRole { source, target };

/// Rigid map applied to generated features: rotation by `rotation` radians in
/// the plane of the first two latent embedding directions, then translation.
/// `noise_scale` multiplies the base distribution's isotropic noise.
struct Shift {
  double rotation = 0.0;
  std::vector<double> translation;  // empty = zero
  double noise_scale = 1.0;

  bool is_identity() const;
};

struct DomainSpec {
  std::string name;
  std::size_t n_samples = 0;
  double positive_ratio = 0.1;
  /// Literal positive count; overrides round(n_samples * positive_ratio).
  std::optional<std::size_t> n_positive;
  Shift shift;
  DomainRole role = DomainRole::target;

  std::size_t positive_count() const;
};

enum class BaseKind { blobs, moons };

/// Two-class distribution in a low-dimensional latent space, embedded in
/// `dim` ambient dimensions by a seeded random orthonormal map plus isotropic
/// noise. Blobs: each class is an equal-weight mixture of Gaussian clusters.
struct BaseDistribution {
  BaseKind kind = BaseKind::blobs;
  std::size_t dim = 16;
  std::size_t latent_dim = 4;
  std::size_t negative_clusters = 3;
  std::size_t positive_clusters = 2;
  double cluster_separation = 1.5;
  double cluster_spread = 1.0;
  double noise = 1.0;
};

struct DomainFamily {
  std::vector<DomainSpec> domains;
  BaseDistribution base;
  std::uint64_t seed = 0;

  void validate() const;
  const DomainSpec& source() const;
  std::size_t index_of(const std::string& name) const;
};

struct GeneratedDomain {
  DomainSpec spec;
  Pool pool;
};

/// Fixed geometry of a family: latent cluster centers and the embedding.
struct FamilyGeometry {
  Tensor embedding;            // [latent_dim, dim], orthonormal rows
  Tensor negative_centers;     // [negative_clusters, latent_dim]
  Tensor positive_centers;     // [positive_clusters, latent_dim]
};

FamilyGeometry family_geometry(const DomainFamily& family);

/// Applies `shift` in place to rows of `features` (ambient space).
void apply_shift(Tensor& features, const Shift& shift, const FamilyGeometry& geometry);
/// Exact algebraic inverse of apply_shift (up to rounding).
void invert_shift(Tensor& features, const Shift& shift, const FamilyGeometry& geometry);

/// Draws every domain with exact, stratified label counts. Sample ids are
/// domain_index * 1'000'000 + row. Deterministic for a given family.
std::vector<GeneratedDomain> gen_family(const DomainFamily& family);

/// Eleven-domain family shaped like the dermoscopy benchmark: one large
/// source and ten shifted targets with the benchmark's sizes and melanoma
/// counts. Shift intensity grows with the origin (H < M < B) and trait.
DomainFamily default_family(std::size_t dim = 16, std::uint64_t seed = 7);

/// A generic unlabeled corpus unrelated to any family, used as the
/// "natural data" stand-in for initial self-supervised pretraining.
Tensor generic_corpus(std::size_t n, std::size_t dim, std::size_t clusters, std::uint64_t seed);

/// Delimited text dataset. Header row names the columns: `id` (required),
/// `label` (optional; empty cell = unlabeled, otherwise 0 or 1), `domain`
/// (optional) and any number of feature columns in header order.
Pool load_csv(const std::filesystem::path& path);
Pool parse_csv(const std::string& text);
std::string format_csv(const Pool& pool);
void write_csv(const Pool& pool, const std::filesystem::path& path);

/// Stratified split into (train, eval) with `train_fraction` + `eval_fraction`
/// = 1. Unlabeled samples form their own stratum. Original order is kept
/// within each part.
std::pair<Pool, Pool> split(const Pool& pool, double train_fraction, double eval_fraction,
                            std::uint64_t seed);

}  // namespace sslada::data
