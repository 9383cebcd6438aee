// Copyright 2026 The ramer Authors
// SPDX-License-Identifier: Apache-2.0
//
// Per-modality contextual encoders with the personality auxiliary path:
// sequence encoder per (person, segment) cell, personality fusion, then
// inter-person and intra-person attention over the clip grid.

#pragma once

#include "ramer/autodiff.hpp"
#include "ramer/corpus.hpp"
#include "ramer/nn.hpp"

#include <array>
#include <map>
#include <vector>

namespace ramer {

struct EncoderConfig {
  int d_model = 16;
  std::map<Modality, int> n_layers = {{Modality::Visual, 1},
                                      {Modality::Textual, 1},
                                      {Modality::Acoustic, 1},
                                      {Modality::Personality, 1}};
  int n_heads = 2;
  double dropout_rate = 0.0;
  bool use_personality = true;

  void validate() const;
  int layers(Modality m) const { return n_layers.contains(m) ? n_layers.at(m) : 1; }
};

/// Row bookkeeping for a batch laid out as a flattened (sample, person, segment) grid.
struct GridLayout {
  std::vector<int> cell_offset;  // first cell of each sample
  std::vector<int> persons, segments, target_person;
  int cells = 0;
  /// Rows sharing a (sample, segment): attention over persons.
  std::vector<std::vector<int>> inter_groups;
  /// Rows sharing a (sample, person): attention over segments.
  std::vector<std::vector<int>> intra_groups;
  /// Target person's rows, one group per sample.
  std::vector<std::vector<int>> target_groups;
  std::vector<int> segment_of_cell;

  static GridLayout from_batch(const Batch& batch);
  int cell(int sample, int person, int segment) const {
    return cell_offset[static_cast<std::size_t>(sample)] + person * segments[static_cast<std::size_t>(sample)] + segment;
  }
  std::size_t samples() const { return cell_offset.size(); }
};

/// Personality-enhanced features for the three classified modalities.
struct AlphaFeatures {
  GridLayout layout;
  std::array<ad::Var, 3> grid;    // cells x d, per modality (v, t, a)
  std::array<ad::Var, 3> pooled;  // samples x d, max over the target person's segments
  std::array<std::vector<std::uint8_t>, 3> presence;  // per cell
};

class Embedding {
 public:
  Embedding(ParameterStore& store, const EncoderConfig& cfg, const std::map<Modality, int>& dims,
            const std::map<Modality, int>& seq_lens, int max_segments, nn::Rng& rng);

  /// Full path: encode every modality, fuse personality, inter then intra attention, pool.
  AlphaFeatures forward(ad::Tape& tape, const Batch& batch, bool train, std::uint64_t dropout_seed) const;

  /// Token-level contextual matrix (cells * l_m rows x d). Absent cells take the
  /// modality's learned placeholder row.
  ad::Var encode_tokens(ad::Tape& tape, Modality m, const Batch& batch, const GridLayout& layout, bool train,
                        std::uint64_t dropout_seed) const;
  /// encode_tokens followed by mean pooling over each cell's tokens.
  ad::Var encode_modality(ad::Tape& tape, Modality m, const Batch& batch, const GridLayout& layout, bool train,
                          std::uint64_t dropout_seed) const;
  /// concat(modality row, personality row) -> linear back to d_model. Identity
  /// when personality is disabled.
  ad::Var fuse_personality(ad::Tape& tape, Modality m, ad::Var grid, ad::Var personality) const;
  ad::Var inter_person_attention(ad::Tape& tape, Modality m, ad::Var grid, const GridLayout& layout,
                                 const std::vector<std::uint8_t>& presence) const;
  ad::Var intra_person_attention(ad::Tape& tape, Modality m, ad::Var grid, const GridLayout& layout,
                                 const std::vector<std::uint8_t>& presence) const;

  const EncoderConfig& config() const { return cfg_; }
  const nn::Linear& fuse_map(Modality m) const { return fuse_[static_cast<std::size_t>(core_index(m))]; }
  const nn::AttentionBlock& inter_block(Modality m) const { return inter_[static_cast<std::size_t>(core_index(m))]; }
  const nn::AttentionBlock& intra_block(Modality m) const { return intra_[static_cast<std::size_t>(core_index(m))]; }
  Parameter& placeholder(Modality m) const { return *encoders_.at(m).placeholder; }

 private:
  struct ModalityEncoder {
    nn::Linear input;
    std::vector<nn::TransformerLayer> layers;
    Parameter* placeholder = nullptr;
    Parameter* position = nullptr;  // max_segments x d, null for personality
    int dim = 0;
    int seq_len = 1;
  };

  EncoderConfig cfg_;
  std::map<Modality, ModalityEncoder> encoders_;
  std::array<nn::Linear, 3> fuse_;
  std::array<nn::AttentionBlock, 3> inter_, intra_;
};

}  // namespace ramer
