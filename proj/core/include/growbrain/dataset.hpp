#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "growbrain/error.hpp"
#include "growbrain/layers.hpp"
#include "growbrain/matrix.hpp"
#include "growbrain/rng.hpp"

namespace growbrain {

struct Dataset {
  Matrix features;
  std::vector<Label> labels;
  std::size_t class_count = 0;
  std::string name;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return features.cols(); }

  /// Rows `indices`, in order.
  Dataset subset(std::span<const std::size_t> indices) const;

  /// Throws ConfigError unless labels lie in [0, class_count) and match the row count.
  void validate() const;
};

/// Keeps classes `keep` (in that order) and relabels them 0..keep.size()-1.
Dataset select_classes(const Dataset& d, std::span<const Label> keep, std::string name);

/// At most `per_class` samples of each class (first in a seeded shuffle).
Dataset limit_per_class(const Dataset& d, std::size_t per_class, std::uint64_t seed);

/// Two related classification tasks on low-dimensional manifolds in R^dim.
///
/// The source task lives in a random `latent_dim`-dimensional subspace. Each
/// class is a mixture of `modes_per_class` Gaussian blobs. The target task's
/// subspace keeps round(overlap * latent_dim) source directions and fills the
/// rest with directions orthogonal to the source subspace. In the shared
/// directions target class c reuses the mode centres of source class
/// perm(c mod source_classes); in the new directions its centres are fresh.
/// With overlap = 1 and equal class counts the target is the source with
/// permuted labels; with overlap = 0 the two tasks share nothing.
struct TransferTaskSpec {
  std::size_t source_classes = 5;
  std::size_t target_classes = 10;
  std::size_t dim = 32;
  std::size_t latent_dim = 8;
  std::size_t modes_per_class = 3;
  std::size_t source_samples_per_class = 200;
  std::size_t target_samples_per_class = 200;
  double overlap = 0.25;
  double center_scale = 2.0;
  double mode_noise = 1.0;
  double ambient_noise = 0.1;

  void validate() const;
};

std::pair<Dataset, Dataset> synth_transfer_tasks(std::uint64_t seed, const TransferTaskSpec& spec);

/// A chain of tasks; task i+1 overlaps task i by overlaps[i] (same
/// construction as synth_transfer_tasks applied link by link). Tasks share
/// class count spec.target_classes except the first (spec.source_classes).
std::vector<Dataset> synth_task_sequence(std::uint64_t seed, const TransferTaskSpec& spec,
                                         std::span<const double> overlaps);

class IdxError : public Error {
 public:
  enum class Kind { Io, BadMagic, Truncated, CountMismatch };
  IdxError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// MNIST-style IDX pair: images (ubyte, 3 dims) and labels (ubyte, 1 dim).
/// Pixels are scaled to [0, 1] and each image is flattened row-major.
/// class_count = max label + 1.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
Dataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels);

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

struct SplitSets {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Stratified split. Each class is shuffled with a seeded Rng and cut into
/// floor(n * fraction) parts; the remainder goes one sample at a time to
/// train, val, test in turn. Indices in each part are ascending.
SplitIndices split_indices(const Dataset& d, std::array<double, 3> fractions, std::uint64_t seed);
SplitSets split(const Dataset& d, std::array<double, 3> fractions, std::uint64_t seed);

inline constexpr std::array<double, 3> kDefaultSplit{0.5, 0.1, 0.4};

}  // namespace growbrain
