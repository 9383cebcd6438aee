// Copyright 2026 The ramer Authors
// SPDX-License-Identifier: Apache-2.0

#include "ramer/corpus.hpp"

#include "ramer/errors.hpp"
#include "ramer/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace ramer {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

static_assert(std::endian::native == std::endian::little, "features.bin I/O assumes a little-endian host");

std::string_view modality_name(Modality m) {
  switch (m) {
    case Modality::Visual: return "visual";
    case Modality::Textual: return "textual";
    case Modality::Acoustic: return "acoustic";
    case Modality::Personality: return "personality";
  }
  return "?";
}

Modality parse_modality(std::string_view name) {
  for (Modality m : kAllModalities)
    if (modality_name(m) == name) return m;
  throw DataError("unknown modality '" + std::string(name) + "'");
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw DataError("unknown split tag '" + std::string(name) + "'");
}

bool ClipSample::target_has(Modality m) const {
  for (int r = 0; r < segments; ++r)
    if (present(m, target_person, r)) return true;
  return false;
}

std::vector<int> Corpus::split_indices(Split s) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto it = split_tags.find(samples[i].id);
    if (it != split_tags.end() && it->second == s) out.push_back(static_cast<int>(i));
  }
  return out;
}

void Corpus::validate() const {
  if (zeta < 1) throw DataError("corpus: zeta must be >= 1");
  std::set<std::string> ids;
  for (const auto& s : samples) {
    if (!ids.insert(s.id).second) throw DataError("corpus: duplicate sample id '" + s.id + "'");
    if (static_cast<int>(s.labels.size()) != zeta) throw DataError("corpus: sample '" + s.id + "' label width");
    for (auto y : s.labels)
      if (y > 1) throw DataError("corpus: sample '" + s.id + "' has a non-binary label");
    if (s.persons < 1 || s.segments < 1) throw DataError("corpus: sample '" + s.id + "' needs >=1 person and segment");
    if (s.target_person < 0 || s.target_person >= s.persons || s.target_segment < 0 ||
        s.target_segment >= s.segments)
      throw DataError("corpus: sample '" + s.id + "' target out of range");
    if (static_cast<int>(s.speaker_flags.size()) != s.persons)
      throw DataError("corpus: sample '" + s.id + "' speaker_flags rows");
    for (const auto& row : s.speaker_flags)
      if (static_cast<int>(row.size()) != s.segments) throw DataError("corpus: sample '" + s.id + "' speaker_flags cols");
    for (const auto& [key, block] : s.features) {
      auto d = dims.find(key.modality);
      auto l = seq_lens.find(key.modality);
      if (d == dims.end() || l == seq_lens.end())
        throw DataError("corpus: sample '" + s.id + "' uses undeclared modality " +
                        std::string(modality_name(key.modality)));
      if (key.person < 0 || key.person >= s.persons || key.segment < 0 || key.segment >= s.segments)
        throw DataError("corpus: sample '" + s.id + "' block key out of range");
      if (block.rows != l->second || block.cols != d->second ||
          block.data.size() != static_cast<std::size_t>(block.rows) * static_cast<std::size_t>(block.cols))
        throw DataError("corpus: sample '" + s.id + "' block shape mismatch");
    }
  }
}

void DropoutPolicy::validate() const {
  if (!(p_nonspeaker_drop >= 0.0 && p_nonspeaker_drop <= 1.0) || !(p_random_drop >= 0.0 && p_random_drop <= 1.0))
    throw ConfigError("dropout probabilities must lie in [0, 1]");
}

void GenConfig::validate() const {
  if (n_samples < 0 || persons < 1 || segments < 1 || zeta < 1 || d_common < 1 || d_specific < 1 || seq_len < 1)
    throw ConfigError("gen config: counts must be >= 1");
  if (!(noise_std >= 0.0)) throw ConfigError("gen config: noise_std must be >= 0");
  if (!label_thresholds.empty() && static_cast<int>(label_thresholds.size()) != zeta)
    throw ConfigError("gen config: label_thresholds must have zeta entries");
  for (Modality m : kCoreModalities)
    if (!feature_dims.contains(m) || feature_dims.at(m) < 1)
      throw ConfigError("gen config: feature_dims must cover visual, textual and acoustic");
  for (const auto& [m, d] : feature_dims)
    if (d < 1) throw ConfigError("gen config: feature dims must be >= 1");
  if (modality_tied_label) {
    if (modality_tied_label->label < 0 || modality_tied_label->label >= zeta)
      throw ConfigError("gen config: tied label out of range");
    if (modality_tied_label->modality == Modality::Personality)
      throw ConfigError("gen config: tied modality must be visual, textual or acoustic");
  }
  if (train_fraction < 0 || val_fraction < 0 || train_fraction + val_fraction > 1.0)
    throw ConfigError("gen config: split fractions must be non-negative and sum to <= 1");
}

double GenConfig::threshold(int label) const {
  return label_thresholds.empty() ? 0.5 : label_thresholds[static_cast<std::size_t>(label)];
}

std::vector<std::uint8_t> latent_labels(const GenConfig& cfg, const GenerationTrace& trace,
                                        const Eigen::VectorXd& common,
                                        const std::map<Modality, Eigen::VectorXd>& specific) {
  std::vector<std::uint8_t> y(static_cast<std::size_t>(cfg.zeta));
  for (int j = 0; j < cfg.zeta; ++j) {
    double score = 0.0;
    if (cfg.modality_tied_label && cfg.modality_tied_label->label == j)
      score = trace.tied_weights.dot(specific.at(cfg.modality_tied_label->modality));
    else
      score = trace.label_weights.row(j).dot(common);
    y[static_cast<std::size_t>(j)] = score > cfg.threshold(j) ? 1 : 0;
  }
  return y;
}

namespace {

Eigen::VectorXd normal_vector(int n, random::Engine& rng) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = random::normal(rng);
  return v;
}

Mat normal_matrix(int r, int c, double stddev, random::Engine& rng) {
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = stddev * random::normal(rng);
  return m;
}

}  // namespace

Corpus generate_synthetic(const GenConfig& cfg, GenerationTrace* trace_out) {
  cfg.validate();
  random::Engine global(random::derive(cfg.seed, 0));
  GenerationTrace trace;
  trace.label_weights = normal_matrix(cfg.zeta, cfg.d_common, 1.0, global);
  for (int j = 0; j < cfg.zeta; ++j) trace.label_weights.row(j).normalize();
  trace.tied_weights = normal_vector(cfg.d_specific, global).normalized();
  for (Modality m : kCoreModalities) {
    const int d = cfg.feature_dims.at(m);
    trace.common_proj[m] = normal_matrix(d, cfg.d_common, 1.0 / std::sqrt(cfg.d_common), global);
    trace.specific_proj[m] = normal_matrix(d, cfg.d_specific, 1.0 / std::sqrt(cfg.d_specific), global);
  }

  Corpus corpus;
  corpus.zeta = cfg.zeta;
  for (const auto& [m, d] : cfg.feature_dims) {
    corpus.dims[m] = d;
    corpus.seq_lens[m] = m == Modality::Personality ? 1 : cfg.seq_len;
  }
  const bool with_personality = cfg.feature_dims.contains(Modality::Personality);
  const int n_train = static_cast<int>(cfg.train_fraction * cfg.n_samples);
  const int n_val = static_cast<int>(cfg.val_fraction * cfg.n_samples);

  corpus.samples.reserve(static_cast<std::size_t>(cfg.n_samples));
  for (int i = 0; i < cfg.n_samples; ++i) {
    random::Engine rng(random::derive(cfg.seed, 1, static_cast<std::uint64_t>(i)));
    ClipSample s;
    char id[32];
    std::snprintf(id, sizeof id, "s%06d", i);
    s.id = id;
    s.persons = cfg.persons;
    s.segments = cfg.segments;
    s.target_person = static_cast<int>(random::below(rng, static_cast<std::uint64_t>(cfg.persons)));
    s.target_segment = static_cast<int>(random::below(rng, static_cast<std::uint64_t>(cfg.segments)));
    s.speaker_flags.assign(static_cast<std::size_t>(cfg.persons),
                           std::vector<std::uint8_t>(static_cast<std::size_t>(cfg.segments), 0));
    for (int r = 0; r < cfg.segments; ++r)
      s.speaker_flags[random::below(rng, static_cast<std::uint64_t>(cfg.persons))][static_cast<std::size_t>(r)] = 1;

    Eigen::VectorXd target_common;
    std::map<Modality, Eigen::VectorXd> target_specific;
    for (int p = 0; p < cfg.persons; ++p) {
      const Eigen::VectorXd c = normal_vector(cfg.d_common, rng);
      std::map<Modality, Eigen::VectorXd> spec;
      for (Modality m : kCoreModalities) spec[m] = normal_vector(cfg.d_specific, rng);
      Eigen::VectorXd trait;
      if (with_personality) trait = normal_vector(cfg.feature_dims.at(Modality::Personality), rng);
      if (p == s.target_person) {
        target_common = c;
        target_specific = spec;
      }
      for (int r = 0; r < cfg.segments; ++r) {
        for (Modality m : kCoreModalities) {
          const Eigen::VectorXd clean = trace.common_proj[m] * c + trace.specific_proj[m] * spec[m];
          FeatureBlock b;
          b.rows = cfg.seq_len;
          b.cols = static_cast<int>(clean.size());
          b.data.resize(static_cast<std::size_t>(b.rows * b.cols));
          for (int l = 0; l < b.rows; ++l)
            for (int k = 0; k < b.cols; ++k)
              b.data[static_cast<std::size_t>(l * b.cols + k)] =
                  static_cast<float>(clean(k) + (cfg.noise_std > 0 ? cfg.noise_std * random::normal(rng) : 0.0));
          s.features[BlockKey{m, p, r}] = std::move(b);
        }
        if (with_personality) {
          FeatureBlock b;
          b.rows = 1;
          b.cols = static_cast<int>(trait.size());
          for (int k = 0; k < b.cols; ++k) b.data.push_back(static_cast<float>(trait(k)));
          s.features[BlockKey{Modality::Personality, p, r}] = std::move(b);
        }
      }
    }
    s.labels = latent_labels(cfg, trace, target_common, target_specific);
    trace.common.push_back(target_common);
    trace.specific.push_back(target_specific);
    corpus.split_tags[s.id] = i < n_train ? Split::Train : (i < n_train + n_val ? Split::Val : Split::Test);
    corpus.samples.push_back(std::move(s));
  }
  if (trace_out != nullptr) *trace_out = std::move(trace);
  return corpus;
}

GenConfig gen_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("gen config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("gen config: top level must be an object");
  GenConfig cfg;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "n_samples") cfg.n_samples = v.get<int>();
      else if (key == "persons") cfg.persons = v.get<int>();
      else if (key == "segments") cfg.segments = v.get<int>();
      else if (key == "zeta") cfg.zeta = v.get<int>();
      else if (key == "d_common") cfg.d_common = v.get<int>();
      else if (key == "d_specific") cfg.d_specific = v.get<int>();
      else if (key == "seq_len") cfg.seq_len = v.get<int>();
      else if (key == "noise_std") cfg.noise_std = v.get<double>();
      else if (key == "label_thresholds") cfg.label_thresholds = v.get<std::vector<double>>();
      else if (key == "train_fraction") cfg.train_fraction = v.get<double>();
      else if (key == "val_fraction") cfg.val_fraction = v.get<double>();
      else if (key == "seed") cfg.seed = v.get<std::uint64_t>();
      else if (key == "feature_dims") {
        cfg.feature_dims.clear();
        for (const auto& [mk, mv] : v.items()) cfg.feature_dims[parse_modality(mk)] = mv.get<int>();
      } else if (key == "modality_tied_label") {
        if (v.is_null()) cfg.modality_tied_label.reset();
        else cfg.modality_tied_label = TiedLabel{v.at("label").get<int>(), parse_modality(v.at("modality").get<std::string>())};
      } else {
        throw ConfigError("gen config: unknown key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("gen config: ") + e.what());
  } catch (const DataError& e) {
    throw ConfigError(std::string("gen config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream bin(dir / "features.bin", std::ios::binary | std::ios::trunc);
  if (!bin) throw DataError("cannot open " + (dir / "features.bin").string() + " for writing");

  ojson manifest;
  manifest["version"] = 1;
  manifest["zeta"] = corpus.zeta;
  manifest["dims"] = ojson::object();
  manifest["seq_lens"] = ojson::object();
  for (const auto& [m, d] : corpus.dims) manifest["dims"][std::string(modality_name(m))] = d;
  for (const auto& [m, l] : corpus.seq_lens) manifest["seq_lens"][std::string(modality_name(m))] = l;
  manifest["samples"] = ojson::array();

  std::uint64_t offset = 0;
  for (const auto& s : corpus.samples) {
    ojson js;
    js["id"] = s.id;
    js["persons"] = s.persons;
    js["segments"] = s.segments;
    js["target_person"] = s.target_person;
    js["target_segment"] = s.target_segment;
    js["labels"] = ojson::array();
    for (auto y : s.labels) js["labels"].push_back(static_cast<int>(y));
    js["speaker_flags"] = ojson::array();
    for (const auto& row : s.speaker_flags) {
      ojson r = ojson::array();
      for (auto f : row) r.push_back(f != 0);
      js["speaker_flags"].push_back(r);
    }
    js["tensors"] = ojson::object();
    for (const auto& [key, block] : s.features) {
      const std::string k = std::string(modality_name(key.modality)) + "/" + std::to_string(key.person) + "/" +
                            std::to_string(key.segment);
      js["tensors"][k] = ojson{{"offset", offset}, {"rows", block.rows}, {"cols", block.cols}};
      const auto bytes = block.data.size() * sizeof(float);
      bin.write(reinterpret_cast<const char*>(block.data.data()), static_cast<std::streamsize>(bytes));
      offset += bytes;
    }
    if (auto it = corpus.split_tags.find(s.id); it != corpus.split_tags.end())
      js["split"] = std::string(split_name(it->second));
    manifest["samples"].push_back(std::move(js));
  }
  if (!bin) throw DataError("failed writing features.bin");
  std::ofstream mf(dir / "manifest.json", std::ios::trunc);
  if (!mf) throw DataError("cannot open manifest.json for writing");
  mf << manifest.dump(1) << "\n";
}

Corpus read_corpus(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw DataError("cannot open " + (dir / "manifest.json").string());
  std::ifstream bin(dir / "features.bin", std::ios::binary);
  if (!bin) throw DataError("cannot open " + (dir / "features.bin").string());
  std::vector<char> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

  json j;
  try {
    j = json::parse(mf);
  } catch (const json::exception& e) {
    throw DataError(std::string("manifest.json: ") + e.what());
  }
  Corpus c;
  try {
    if (j.at("version").get<int>() != 1) throw DataError("manifest.json: unsupported version");
    c.zeta = j.at("zeta").get<int>();
    for (const auto& [k, v] : j.at("dims").items()) c.dims[parse_modality(k)] = v.get<int>();
    for (const auto& [k, v] : j.at("seq_lens").items()) c.seq_lens[parse_modality(k)] = v.get<int>();
    for (const auto& js : j.at("samples")) {
      ClipSample s;
      s.id = js.at("id").get<std::string>();
      s.persons = js.at("persons").get<int>();
      s.segments = js.at("segments").get<int>();
      s.target_person = js.at("target_person").get<int>();
      s.target_segment = js.at("target_segment").get<int>();
      for (const auto& y : js.at("labels")) {
        const int v = y.get<int>();
        if (v != 0 && v != 1) throw DataError("manifest.json: labels must be 0 or 1");
        s.labels.push_back(static_cast<std::uint8_t>(v));
      }
      for (const auto& row : js.at("speaker_flags")) {
        std::vector<std::uint8_t> r;
        for (const auto& f : row) r.push_back(f.get<bool>() ? 1 : 0);
        s.speaker_flags.push_back(std::move(r));
      }
      for (const auto& [k, t] : js.at("tensors").items()) {
        const auto p1 = k.find('/');
        const auto p2 = k.find('/', p1 == std::string::npos ? p1 : p1 + 1);
        if (p1 == std::string::npos || p2 == std::string::npos) throw DataError("manifest.json: bad tensor key '" + k + "'");
        BlockKey key{parse_modality(k.substr(0, p1)), std::stoi(k.substr(p1 + 1, p2 - p1 - 1)), std::stoi(k.substr(p2 + 1))};
        FeatureBlock b;
        const auto offset = t.at("offset").get<std::uint64_t>();
        b.rows = t.at("rows").get<int>();
        b.cols = t.at("cols").get<int>();
        if (b.rows < 0 || b.cols < 0) throw DataError("manifest.json: negative tensor shape");
        const std::uint64_t bytes = static_cast<std::uint64_t>(b.rows) * static_cast<std::uint64_t>(b.cols) * sizeof(float);
        if (offset > blob.size() || bytes > blob.size() - offset)
          throw DataError("manifest.json: tensor '" + k + "' of sample '" + s.id + "' extends past features.bin");
        b.data.resize(static_cast<std::size_t>(b.rows) * static_cast<std::size_t>(b.cols));
        std::memcpy(b.data.data(), blob.data() + offset, bytes);
        s.features[key] = std::move(b);
      }
      if (js.contains("split")) c.split_tags[s.id] = parse_split(js.at("split").get<std::string>());
      c.samples.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("manifest.json: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw DataError("manifest.json: bad tensor key");
  }
  c.validate();
  return c;
}

Batch apply_modality_dropout(const Batch& batch, const DropoutPolicy& policy, std::uint64_t seed) {
  policy.validate();
  Batch out = batch;
  for (std::size_t i = 0; i < out.size(); ++i) {
    ClipSample& s = out[i];
    random::Engine rng(random::derive(seed, 2, i));
    auto drop_target = [&](Modality m, bool only_silent) {
      if (policy.protected_modalities.contains(m)) return;
      for (int r = 0; r < s.segments; ++r)
        if (!only_silent || !s.speaks(s.target_person, r)) s.features.erase(BlockKey{m, s.target_person, r});
    };
    // Draw both coins unconditionally so the stream layout does not depend on flags.
    const bool nonspeaker_coin = random::bernoulli(rng, policy.p_nonspeaker_drop);
    if (!s.speaks(s.target_person, s.target_segment) && nonspeaker_coin) {
      drop_target(Modality::Acoustic, true);
      drop_target(Modality::Textual, true);
    }
    for (Modality m : kAllModalities) {
      const bool coin = random::bernoulli(rng, policy.p_random_drop);
      if (coin) drop_target(m, false);
    }
    bool any = false;
    for (Modality m : kAllModalities) any = any || s.target_has(m);
    if (!any) throw DataError("modality dropout removed every modality of sample '" + s.id + "'");
  }
  return out;
}

Batch mask_modality(const Batch& batch, Modality m) {
  Batch out = batch;
  for (auto& s : out)
    std::erase_if(s.features, [m](const auto& kv) { return kv.first.modality == m; });
  return out;
}

std::vector<std::vector<int>> batch_iter(const std::vector<int>& indices, int batch_size,
                                         std::uint64_t shuffle_seed) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  std::vector<int> order = indices;
  random::Engine rng(random::derive(shuffle_seed, 3));
  random::shuffle(order, rng);
  std::vector<std::vector<int>> out;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(order.size(), i + static_cast<std::size_t>(batch_size));
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

std::vector<std::vector<int>> batch_iter(const Corpus& corpus, Split split, int batch_size,
                                         std::uint64_t shuffle_seed) {
  return batch_iter(corpus.split_indices(split), batch_size, shuffle_seed);
}

Batch gather_batch(const Corpus& corpus, const std::vector<int>& indices) {
  Batch b;
  b.reserve(indices.size());
  for (int i : indices) b.push_back(corpus.samples.at(static_cast<std::size_t>(i)));
  return b;
}

}  // namespace ramer
