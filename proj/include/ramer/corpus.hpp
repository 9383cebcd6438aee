// Copyright 2026 The ramer Authors
// SPDX-License-Identifier: Apache-2.0
//
// Multi-party clip samples, the on-disk feature container, the synthetic
// corpus generator and training-time modality dropout.

#pragma once

#include "ramer/autodiff.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace ramer {

enum class Modality : int { Visual = 0, Textual = 1, Acoustic = 2, Personality = 3 };

/// The three modalities that are classified; indices 0..2 follow this order.
inline constexpr std::array<Modality, 3> kCoreModalities = {Modality::Visual, Modality::Textual,
                                                            Modality::Acoustic};
inline constexpr std::array<Modality, 4> kAllModalities = {Modality::Visual, Modality::Textual,
                                                           Modality::Acoustic, Modality::Personality};

std::string_view modality_name(Modality m);
/// Throws DataError for unknown names.
Modality parse_modality(std::string_view name);
inline int core_index(Modality m) { return static_cast<int>(m); }

struct BlockKey {
  Modality modality = Modality::Visual;
  int person = 0;
  int segment = 0;

  auto operator<=>(const BlockKey&) const = default;
};

/// Row-major float32 matrix, stored exactly as on disk.
struct FeatureBlock {
  int rows = 0;
  int cols = 0;
  std::vector<float> data;

  float at(int r, int c) const { return data[static_cast<std::size_t>(r * cols + c)]; }
  bool operator==(const FeatureBlock&) const = default;
};

enum class Split { Train, Val, Test };
std::string_view split_name(Split s);
Split parse_split(std::string_view name);

/// One annotated moment. A key is present in `features` iff that
/// (modality, person, segment) block was recorded.
struct ClipSample {
  std::string id;
  int persons = 0;
  int segments = 0;
  int target_person = 0;
  int target_segment = 0;
  std::vector<std::uint8_t> labels;
  std::vector<std::vector<std::uint8_t>> speaker_flags;  // [person][segment]
  std::map<BlockKey, FeatureBlock> features;

  bool present(Modality m, int person, int segment) const {
    return features.contains(BlockKey{m, person, segment});
  }
  /// True when any segment of the target person carries modality m.
  bool target_has(Modality m) const;
  bool speaks(int person, int segment) const { return speaker_flags[person][segment] != 0; }
  bool operator==(const ClipSample&) const = default;
};

struct Corpus {
  std::vector<ClipSample> samples;
  std::map<Modality, int> dims;
  std::map<Modality, int> seq_lens;
  int zeta = 0;
  std::map<std::string, Split> split_tags;

  /// Indices of samples tagged with `s`, in corpus order.
  std::vector<int> split_indices(Split s) const;
  bool has_modality(Modality m) const { return dims.contains(m); }
  /// Checks id uniqueness, label width, block shapes and flag geometry.
  void validate() const;
  bool operator==(const Corpus&) const = default;
};

struct DropoutPolicy {
  double p_nonspeaker_drop = 0.0;
  double p_random_drop = 0.0;
  std::set<Modality> protected_modalities = {Modality::Visual, Modality::Personality};

  void validate() const;
};

struct TiedLabel {
  int label = 0;
  Modality modality = Modality::Acoustic;
};

struct GenConfig {
  int n_samples = 2000;
  int persons = 2;
  int segments = 3;
  int zeta = 6;
  int d_common = 6;
  int d_specific = 2;
  std::map<Modality, int> feature_dims = {{Modality::Visual, 6},
                                          {Modality::Textual, 6},
                                          {Modality::Acoustic, 6},
                                          {Modality::Personality, 4}};
  int seq_len = 2;
  double noise_std = 0.0;
  std::vector<double> label_thresholds;  // empty => 0.5 for every label
  std::optional<TiedLabel> modality_tied_label = TiedLabel{};
  double train_fraction = 0.7;
  double val_fraction = 0.15;
  std::uint64_t seed = 0;

  void validate() const;
  double threshold(int label) const;
};

/// Latent factors and projections behind a generated corpus.
struct GenerationTrace {
  Mat label_weights;         // zeta x d_common, unit rows
  Eigen::VectorXd tied_weights;  // d_specific, unit norm
  std::map<Modality, Mat> common_proj;    // d_m x d_common
  std::map<Modality, Mat> specific_proj;  // d_m x d_specific
  /// Per sample: the target person's common latent and specific latents.
  std::vector<Eigen::VectorXd> common;
  std::vector<std::map<Modality, Eigen::VectorXd>> specific;
};

/// Label rule of the generator: label j is on iff w_j . c > threshold_j, except
/// the tied label, which uses w' . s^{tied modality}.
std::vector<std::uint8_t> latent_labels(const GenConfig& cfg, const GenerationTrace& trace,
                                        const Eigen::VectorXd& common,
                                        const std::map<Modality, Eigen::VectorXd>& specific);

Corpus generate_synthetic(const GenConfig& cfg, GenerationTrace* trace = nullptr);

GenConfig gen_config_from_json(const std::string& text);

/// Writes `manifest.json` and `features.bin` under `dir` (created if needed).
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus read_corpus(const std::filesystem::path& dir);

using Batch = std::vector<ClipSample>;

/// Removes target-person blocks according to `policy`. Deterministic in seed.
Batch apply_modality_dropout(const Batch& batch, const DropoutPolicy& policy, std::uint64_t seed);

/// Removes every block of modality m from every sample (inference-time masking).
Batch mask_modality(const Batch& batch, Modality m);

/// Deterministic partition of `indices` into batches after a seeded shuffle.
std::vector<std::vector<int>> batch_iter(const std::vector<int>& indices, int batch_size,
                                         std::uint64_t shuffle_seed);
std::vector<std::vector<int>> batch_iter(const Corpus& corpus, Split split, int batch_size,
                                         std::uint64_t shuffle_seed);

Batch gather_batch(const Corpus& corpus, const std::vector<int>& indices);

}  // namespace ramer
