// Copyright 2026 The ramer Authors
// SPDX-License-Identifier: Apache-2.0

#include "ramer/embedding.hpp"

#include "ramer/errors.hpp"
#include "ramer/random.hpp"

namespace ramer {

void EncoderConfig::validate() const {
  if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0)
    throw ConfigError("encoder: d_model must be a positive multiple of n_heads");
  for (const auto& [m, n] : n_layers)
    if (n < 1) throw ConfigError("encoder: every modality needs n_layers >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("encoder: dropout_rate must lie in [0, 1)");
}

GridLayout GridLayout::from_batch(const Batch& batch) {
  GridLayout g;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const ClipSample& s = batch[b];
    g.cell_offset.push_back(g.cells);
    g.persons.push_back(s.persons);
    g.segments.push_back(s.segments);
    g.target_person.push_back(s.target_person);
    for (int p = 0; p < s.persons; ++p)
      for (int r = 0; r < s.segments; ++r) g.segment_of_cell.push_back(r);
    const int base = g.cells;
    for (int r = 0; r < s.segments; ++r) {
      std::vector<int> grp;
      for (int p = 0; p < s.persons; ++p) grp.push_back(base + p * s.segments + r);
      g.inter_groups.push_back(std::move(grp));
    }
    for (int p = 0; p < s.persons; ++p) {
      std::vector<int> grp;
      for (int r = 0; r < s.segments; ++r) grp.push_back(base + p * s.segments + r);
      if (p == s.target_person) g.target_groups.push_back(grp);
      g.intra_groups.push_back(std::move(grp));
    }
    g.cells += s.persons * s.segments;
  }
  return g;
}

Embedding::Embedding(ParameterStore& store, const EncoderConfig& cfg, const std::map<Modality, int>& dims,
                     const std::map<Modality, int>& seq_lens, int max_segments, nn::Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  if (cfg_.use_personality && !dims.contains(Modality::Personality))
    throw DataError("personality fusion enabled but the corpus has no personality features");
  const Eigen::Index d = cfg_.d_model;
  for (Modality m : kAllModalities) {
    if (!dims.contains(m)) {
      if (m != Modality::Personality) throw DataError("corpus lacks modality " + std::string(modality_name(m)));
      continue;
    }
    if (m == Modality::Personality && !cfg_.use_personality) continue;
    const std::string name = "embed." + std::string(modality_name(m));
    ModalityEncoder e;
    e.dim = dims.at(m);
    e.seq_len = seq_lens.contains(m) ? seq_lens.at(m) : 1;
    e.input = nn::Linear(store, name + ".input", e.dim, d, rng);
    for (int l = 0; l < cfg_.layers(m); ++l)
      e.layers.emplace_back(store, name + ".layer" + std::to_string(l), d, cfg_.n_heads, rng);
    Mat ph(1, e.dim);
    for (Eigen::Index i = 0; i < ph.size(); ++i) ph(i) = 0.1 * random::normal(rng);
    e.placeholder = &store.add(name + ".placeholder", ph);
    if (m != Modality::Personality) {
      Mat pos(std::max(1, max_segments), d);
      for (Eigen::Index i = 0; i < pos.size(); ++i) pos(i) = 0.02 * random::normal(rng);
      e.position = &store.add(name + ".position", pos);
    }
    encoders_.emplace(m, std::move(e));
  }
  for (Modality m : kCoreModalities) {
    const auto i = static_cast<std::size_t>(core_index(m));
    const std::string name = "embed." + std::string(modality_name(m));
    if (cfg_.use_personality) fuse_[i] = nn::Linear(store, name + ".fuse", 2 * d, d, rng);
    inter_[i] = nn::AttentionBlock(store, name + ".inter", d, cfg_.n_heads, rng);
    intra_[i] = nn::AttentionBlock(store, name + ".intra", d, cfg_.n_heads, rng);
  }
}

ad::Var Embedding::encode_tokens(ad::Tape& tape, Modality m, const Batch& batch, const GridLayout& layout, bool train,
                                 std::uint64_t dropout_seed) const {
  const ModalityEncoder& e = encoders_.at(m);
  const int l = e.seq_len;
  const Eigen::Index rows = static_cast<Eigen::Index>(layout.cells) * l;
  Mat raw = Mat::Zero(rows, e.dim);
  Mat absent = Mat::Zero(rows, 1);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const ClipSample& s = batch[b];
    for (int p = 0; p < s.persons; ++p)
      for (int r = 0; r < s.segments; ++r) {
        const Eigen::Index row0 = static_cast<Eigen::Index>(layout.cell(static_cast<int>(b), p, r)) * l;
        auto it = s.features.find(BlockKey{m, p, r});
        if (it == s.features.end()) {
          absent.middleRows(row0, l).setOnes();
          continue;
        }
        const FeatureBlock& blk = it->second;
        if (blk.cols != e.dim || blk.rows != l)
          throw DataError("sample '" + s.id + "': " + std::string(modality_name(m)) + " block is " +
                          std::to_string(blk.rows) + "x" + std::to_string(blk.cols) + ", expected " +
                          std::to_string(l) + "x" + std::to_string(e.dim));
        for (int t = 0; t < l; ++t)
          for (int c = 0; c < e.dim; ++c) raw(row0 + t, c) = blk.at(t, c);
      }
  }
  ad::Var x = ad::add(tape.constant(std::move(raw)),
                      ad::matmul(tape.constant(std::move(absent)), tape.param(*e.placeholder)));
  x = e.input(tape, x);

  std::vector<std::vector<int>> groups(static_cast<std::size_t>(layout.cells));
  for (int c = 0; c < layout.cells; ++c)
    for (int t = 0; t < l; ++t) groups[static_cast<std::size_t>(c)].push_back(c * l + t);
  const std::vector<std::uint8_t> all(static_cast<std::size_t>(rows), 1);

  const bool drop = train && cfg_.dropout_rate > 0.0;
  for (std::size_t li = 0; li < e.layers.size(); ++li) {
    Mat m1, m2;
    if (drop) {
      random::Engine rng(random::derive(dropout_seed, static_cast<std::uint64_t>(m) * 97 + li));
      const double keep = 1.0 - cfg_.dropout_rate;
      auto mask = [&](Mat& mk) {
        mk.resize(rows, cfg_.d_model);
        for (Eigen::Index i = 0; i < mk.size(); ++i) mk(i) = random::bernoulli(rng, keep) ? 1.0 / keep : 0.0;
      };
      mask(m1);
      mask(m2);
    }
    x = e.layers[li](tape, x, groups, all, m1, m2);
  }
  return x;
}

ad::Var Embedding::encode_modality(ad::Tape& tape, Modality m, const Batch& batch, const GridLayout& layout,
                                   bool train, std::uint64_t dropout_seed) const {
  const int l = encoders_.at(m).seq_len;
  ad::Var tokens = encode_tokens(tape, m, batch, layout, train, dropout_seed);
  if (l == 1) return tokens;
  std::vector<std::vector<int>> groups(static_cast<std::size_t>(layout.cells));
  for (int c = 0; c < layout.cells; ++c)
    for (int t = 0; t < l; ++t) groups[static_cast<std::size_t>(c)].push_back(c * l + t);
  return ad::group_mean_rows(tokens, groups);
}

ad::Var Embedding::fuse_personality(ad::Tape& tape, Modality m, ad::Var grid, ad::Var personality) const {
  if (!cfg_.use_personality) return grid;
  if (!personality.valid()) throw DataError("personality fusion requires personality features");
  return fuse_map(m)(tape, ad::concat_cols({grid, personality}));
}

ad::Var Embedding::inter_person_attention(ad::Tape& tape, Modality m, ad::Var grid, const GridLayout& layout,
                                          const std::vector<std::uint8_t>& presence) const {
  return inter_block(m)(tape, grid, layout.inter_groups, presence);
}

ad::Var Embedding::intra_person_attention(ad::Tape& tape, Modality m, ad::Var grid, const GridLayout& layout,
                                          const std::vector<std::uint8_t>& presence) const {
  return intra_block(m)(tape, grid, layout.intra_groups, presence);
}

AlphaFeatures Embedding::forward(ad::Tape& tape, const Batch& batch, bool train, std::uint64_t dropout_seed) const {
  AlphaFeatures out;
  out.layout = GridLayout::from_batch(batch);
  const GridLayout& layout = out.layout;

  ad::Var personality;
  if (cfg_.use_personality)
    personality = encode_modality(tape, Modality::Personality, batch, layout, train, dropout_seed);

  for (Modality m : kCoreModalities) {
    const auto i = static_cast<std::size_t>(core_index(m));
    auto& presence = out.presence[i];
    presence.assign(static_cast<std::size_t>(layout.cells), 0);
    for (std::size_t b = 0; b < batch.size(); ++b)
      for (int p = 0; p < batch[b].persons; ++p)
        for (int r = 0; r < batch[b].segments; ++r)
          presence[static_cast<std::size_t>(layout.cell(static_cast<int>(b), p, r))] = batch[b].present(m, p, r) ? 1 : 0;

    ad::Var grid = encode_modality(tape, m, batch, layout, train, dropout_seed);
    grid = ad::add(grid, ad::gather_rows(tape.param(*encoders_.at(m).position), layout.segment_of_cell));
    grid = fuse_personality(tape, m, grid, personality);
    grid = inter_person_attention(tape, m, grid, layout, presence);
    grid = intra_person_attention(tape, m, grid, layout, presence);
    out.grid[i] = grid;
    out.pooled[i] = ad::group_max_rows(grid, layout.target_groups);
  }
  return out;
}

}  // namespace ramer
