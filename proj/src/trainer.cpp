// Copyright 2026 The ramer Authors
// SPDX-License-Identifier: Apache-2.0

#include "ramer/trainer.hpp"

#include "ramer/errors.hpp"
#include "ramer/metrics.hpp"
#include "ramer/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

namespace ramer {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

// -- toggles ------------------------------------------------------------------

const std::vector<std::string>& toggle_names() {
  static const std::vector<std::string> names = {"no_Lsc",    "no_C",      "no_S",
                                                 "no_Lscl",   "no_enc_dec", "no_Xbeta",
                                                 "no_Xgamma", "no_Xbeta_Xgamma", "fusion_order_A",
                                                 "fusion_order_B"};
  return names;
}

namespace {

bool* toggle_slot(Toggles& t, std::string_view name) {
  if (name == "no_Lsc") return &t.no_Lsc;
  if (name == "no_C") return &t.no_C;
  if (name == "no_S") return &t.no_S;
  if (name == "no_Lscl") return &t.no_Lscl;
  if (name == "no_enc_dec") return &t.no_enc_dec;
  if (name == "no_Xbeta") return &t.no_Xbeta;
  if (name == "no_Xgamma") return &t.no_Xgamma;
  if (name == "no_Xbeta_Xgamma") return &t.no_Xbeta_Xgamma;
  if (name == "fusion_order_A") return &t.fusion_order_A;
  if (name == "fusion_order_B") return &t.fusion_order_B;
  return nullptr;
}

}  // namespace

void Toggles::set(std::string_view name) {
  bool* slot = toggle_slot(*this, name);
  if (slot == nullptr) throw ConfigError("unknown ablation toggle '" + std::string(name) + "'");
  *slot = true;
}

std::vector<std::string> Toggles::names() const {
  std::vector<std::string> out;
  Toggles copy = *this;
  for (const auto& n : toggle_names())
    if (*toggle_slot(copy, n)) out.push_back(n);
  return out;
}

void Toggles::validate() const {
  if (no_C && no_S) throw ConfigError("toggles no_C and no_S cannot be combined");
  if (fusion_order_A && fusion_order_B) throw ConfigError("toggles fusion_order_A and fusion_order_B cannot be combined");
  if (no_Xbeta_Xgamma && (no_Xbeta || no_Xgamma))
    throw ConfigError("toggle no_Xbeta_Xgamma already covers no_Xbeta and no_Xgamma");
}

FusionOrder Toggles::fusion() const {
  FusionOrder f;
  if (fusion_order_A) f.intrinsic_last = true;
  if (fusion_order_B) {
    f.order = {Modality::Textual, Modality::Acoustic, Modality::Visual};
    f.intrinsic_last = true;
  }
  return f;
}

// -- config -------------------------------------------------------------------

void TrainConfig::validate() const {
  const double lambdas[] = {lambda_r, lambda_s, lambda_a, lambda_o, lambda_c, lambda_alpha, lambda_beta, lambda_gamma};
  for (double l : lambdas)
    if (!(l >= 0.0) || !std::isfinite(l)) throw ConfigError("train config: every lambda must be a finite value >= 0");
  if (!(eta > 0.0)) throw ConfigError("train config: eta must be > 0");
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw ConfigError("train config: momentum must lie in [0, 1]");
  if (!std::isfinite(rho)) throw ConfigError("train config: rho must be finite");
  if (k < 1) throw ConfigError("train config: k must be >= 1");
  if (shuffle_rounds < 0) throw ConfigError("train config: shuffle_rounds must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("train config: learning_rate must be > 0");
  if (lr_schedule != "constant" && lr_schedule != "cosine")
    throw ConfigError("train config: lr_schedule must be constant or cosine");
  if (epochs < 0) throw ConfigError("train config: epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("train config: threshold must lie in (0, 1)");
  if (latent_dim < 0) throw ConfigError("train config: latent_dim must be >= 0");
  if (latent() < 1) throw ConfigError("train config: latent width must be >= 1");
  dropout.validate();
  encoder.validate();
  toggles.validate();
}

AdversarialWeights TrainConfig::adversarial_weights() const {
  return AdversarialWeights{toggles.no_Lsc ? 0.0 : lambda_a, lambda_o, lambda_c};
}

ShuffleSpec TrainConfig::shuffle_spec() const {
  return ShuffleSpec{k, shuffle_rounds, sample_wise_shuffle, modality_wise_shuffle};
}

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError("train config: '" + where + "' must be an object");
  for (const auto& [key, v] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("train config: unknown key '" + (where.empty() ? key : where + "." + key) + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

TrainConfig train_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  TrainConfig c;
  try {
    check_keys(j,
               {"lambda_r", "lambda_s", "lambda_a", "lambda_o", "lambda_c", "lambda_alpha", "lambda_beta",
                "lambda_gamma", "eta", "momentum", "rho", "k", "shuffle_rounds", "sample_wise_shuffle",
                "modality_wise_shuffle", "learning_rate", "lr_schedule", "epochs", "batch_size", "threshold", "seed", "dropout",
                "encoder", "latent_dim", "positive_rule", "alternating", "ablation"},
               "");
    read(j, "lambda_r", c.lambda_r);
    read(j, "lambda_s", c.lambda_s);
    read(j, "lambda_a", c.lambda_a);
    read(j, "lambda_o", c.lambda_o);
    read(j, "lambda_c", c.lambda_c);
    read(j, "lambda_alpha", c.lambda_alpha);
    read(j, "lambda_beta", c.lambda_beta);
    read(j, "lambda_gamma", c.lambda_gamma);
    read(j, "eta", c.eta);
    read(j, "momentum", c.momentum);
    read(j, "rho", c.rho);
    read(j, "k", c.k);
    read(j, "shuffle_rounds", c.shuffle_rounds);
    read(j, "sample_wise_shuffle", c.sample_wise_shuffle);
    read(j, "modality_wise_shuffle", c.modality_wise_shuffle);
    read(j, "learning_rate", c.learning_rate);
    read(j, "lr_schedule", c.lr_schedule);
    read(j, "epochs", c.epochs);
    read(j, "batch_size", c.batch_size);
    read(j, "threshold", c.threshold);
    read(j, "seed", c.seed);
    read(j, "latent_dim", c.latent_dim);
    read(j, "alternating", c.alternating);
    if (j.contains("positive_rule")) {
      const auto rule = j.at("positive_rule").get<std::string>();
      if (rule == "share_any") c.positive_rule = PositiveRule::ShareAny;
      else if (rule == "exact_match") c.positive_rule = PositiveRule::ExactMatch;
      else throw ConfigError("train config: positive_rule must be share_any or exact_match");
    }
    if (j.contains("dropout")) {
      const json& d = j.at("dropout");
      check_keys(d, {"p_nonspeaker_drop", "p_random_drop", "protected"}, "dropout");
      read(d, "p_nonspeaker_drop", c.dropout.p_nonspeaker_drop);
      read(d, "p_random_drop", c.dropout.p_random_drop);
      if (d.contains("protected")) {
        c.dropout.protected_modalities.clear();
        for (const auto& m : d.at("protected")) c.dropout.protected_modalities.insert(parse_modality(m.get<std::string>()));
      }
    }
    if (j.contains("encoder")) {
      const json& e = j.at("encoder");
      check_keys(e, {"d_model", "n_layers", "n_heads", "dropout_rate", "use_personality"}, "encoder");
      read(e, "d_model", c.encoder.d_model);
      read(e, "n_heads", c.encoder.n_heads);
      read(e, "dropout_rate", c.encoder.dropout_rate);
      read(e, "use_personality", c.encoder.use_personality);
      if (e.contains("n_layers"))
        for (const auto& [mk, mv] : e.at("n_layers").items()) c.encoder.n_layers[parse_modality(mk)] = mv.get<int>();
    }
    if (j.contains("ablation"))
      for (const auto& t : j.at("ablation")) c.toggles.set(t.get<std::string>());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  } catch (const DataError& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string train_config_to_json(const TrainConfig& c) {
  ojson j;
  j["lambda_r"] = c.lambda_r;
  j["lambda_s"] = c.lambda_s;
  j["lambda_a"] = c.lambda_a;
  j["lambda_o"] = c.lambda_o;
  j["lambda_c"] = c.lambda_c;
  j["lambda_alpha"] = c.lambda_alpha;
  j["lambda_beta"] = c.lambda_beta;
  j["lambda_gamma"] = c.lambda_gamma;
  j["eta"] = c.eta;
  j["momentum"] = c.momentum;
  j["rho"] = c.rho;
  j["k"] = c.k;
  j["shuffle_rounds"] = c.shuffle_rounds;
  j["sample_wise_shuffle"] = c.sample_wise_shuffle;
  j["modality_wise_shuffle"] = c.modality_wise_shuffle;
  j["learning_rate"] = c.learning_rate;
  j["lr_schedule"] = c.lr_schedule;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["threshold"] = c.threshold;
  j["seed"] = c.seed;
  ojson prot = ojson::array();
  for (Modality m : c.dropout.protected_modalities) prot.push_back(std::string(modality_name(m)));
  j["dropout"] = ojson{{"p_nonspeaker_drop", c.dropout.p_nonspeaker_drop},
                       {"p_random_drop", c.dropout.p_random_drop},
                       {"protected", prot}};
  ojson layers = ojson::object();
  for (const auto& [m, n] : c.encoder.n_layers) layers[std::string(modality_name(m))] = n;
  j["encoder"] = ojson{{"d_model", c.encoder.d_model},
                       {"n_layers", layers},
                       {"n_heads", c.encoder.n_heads},
                       {"dropout_rate", c.encoder.dropout_rate},
                       {"use_personality", c.encoder.use_personality}};
  j["latent_dim"] = c.latent_dim;
  j["positive_rule"] = c.positive_rule == PositiveRule::ShareAny ? "share_any" : "exact_match";
  j["alternating"] = c.alternating;
  j["ablation"] = c.toggles.names();
  return j.dump(1);
}

ModelShape ModelShape::of(const Corpus& corpus) {
  ModelShape s;
  s.dims = corpus.dims;
  s.seq_lens = corpus.seq_lens;
  s.zeta = corpus.zeta;
  for (const auto& c : corpus.samples) s.max_segments = std::max(s.max_segments, c.segments);
  return s;
}

// -- losses -------------------------------------------------------------------

double total_loss(const LossComponents& c, double lambda_r, double lambda_s) {
  const std::pair<const char*, double> parts[] = {
      {"cls_suf", c.cls_suf}, {"cls_lsr", c.cls_lsr}, {"rec", c.rec}, {"scl", c.scl}, {"adv", c.adv}};
  for (const auto& [name, v] : parts)
    if (!std::isfinite(v)) throw NumericError(std::string("loss component '") + name + "' is not finite");
  return c.cls_suf + c.cls_lsr + lambda_r * c.rec + lambda_s * c.scl + c.adv;
}

LossReport ForwardOutput::report() const {
  auto v = [](const ad::Var& x) { return x.valid() ? x.scalar() : 0.0; };
  LossReport r;
  r.cls_suf = v(cls_suf);
  r.cls_lsr = v(cls_lsr);
  r.rec = v(rec);
  r.scl = v(scl);
  r.adv = v(adv);
  r.adv_C = v(adv_C);
  r.adv_S = v(adv_S);
  r.orth = v(orth);
  r.cml = v(cml);
  r.total = v(total);
  return r;
}

// -- optimiser ----------------------------------------------------------------

void Adam::step(const std::vector<Parameter*>& params) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (Parameter* p : params) {
    auto it = moments_.find(p->name);
    if (it == moments_.end())
      it = moments_.emplace(p->name, std::make_pair(Mat::Zero(p->value.rows(), p->value.cols()),
                                                    Mat::Zero(p->value.rows(), p->value.cols())))
               .first;
    auto& [m, v] = it->second;
    m = beta1_ * m + (1.0 - beta1_) * p->grad;
    v = beta2_ * v + (1.0 - beta2_) * p->grad.cwiseProduct(p->grad);
    p->value.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
  }
}

// -- model --------------------------------------------------------------------

Model::Model(const TrainConfig& cfg, const ModelShape& shape) : cfg_(cfg), shape_(shape) {
  cfg_.validate();
  if (shape.zeta < 1) throw DataError("model: corpus has no labels");
  for (Modality m : kCoreModalities)
    if (!shape.dims.contains(m)) throw DataError("model: corpus lacks modality " + std::string(modality_name(m)));
  nn::Rng rng(random::derive(cfg_.seed, 0x5eed));
  const Eigen::Index d = cfg_.encoder.d_model, dz = cfg_.latent();
  emb_ = std::make_unique<Embedding>(store_, cfg_.encoder, shape.dims, shape.seq_lens, shape.max_segments, rng);
  ReconConfig rc;
  rc.width = d;
  rc.latent = dz;
  rc.zeta = shape.zeta;
  rc.fusion = cfg_.toggles.fusion();
  rec_ = std::make_unique<Reconstructor>(store_, rc, rng);
  adv_ = std::make_unique<Adversary>(store_, d, shape.zeta, rng);
  intrinsic_ = IntrinsicHead(store_, shape.zeta, bank_dim(), dz, rng);
  clf_ = ShuffleClassifier(store_, 2 * d, shape.zeta, rng);
  bank_ = PrototypeBank(shape.zeta, bank_dim(), cfg_.momentum);
}

Eigen::Index Model::bank_dim() const {
  return cfg_.toggles.no_enc_dec ? cfg_.encoder.d_model : cfg_.latent();
}

std::vector<Parameter*> Model::all_params() {
  std::vector<Parameter*> out;
  for (auto& p : store_.all()) out.push_back(&p);
  return out;
}

std::vector<Parameter*> Model::discriminator_params() {
  std::vector<Parameter*> out;
  for (auto& p : store_.all())
    if (p.name.starts_with("adv.discriminator")) out.push_back(&p);
  return out;
}

ad::Var Model::latent_of(ad::Tape& tape, Modality m, ad::Var x) const {
  return cfg_.toggles.no_enc_dec ? x : rec_->encode_latent(tape, m, x);
}

Mat labels_matrix(const Batch& batch, int zeta) {
  Mat y(static_cast<Eigen::Index>(batch.size()), zeta);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].labels.size() != static_cast<std::size_t>(zeta)) throw DataError("label width mismatch in " + batch[i].id);
    for (int j = 0; j < zeta; ++j) y(static_cast<Eigen::Index>(i), j) = batch[i].labels[static_cast<std::size_t>(j)];
  }
  return y;
}

Mat threshold_predictions(const Mat& probs, double threshold) {
  return (probs.array() >= threshold).cast<double>().matrix();
}

std::array<Mat, 3> Model::alpha_values(const Batch& batch) {
  ad::Tape tape;
  AlphaFeatures a = emb_->forward(tape, batch, false, 0);
  std::array<Mat, 3> out;
  for (std::size_t m = 0; m < 3; ++m) out[m] = a.pooled[m].value();
  return out;
}

std::array<Mat, 3> Model::bank_embeddings(const Batch& batch) {
  ad::Tape tape;
  AlphaFeatures a = emb_->forward(tape, batch, false, 0);
  std::array<Mat, 3> out;
  for (Modality m : kCoreModalities) {
    const auto i = static_cast<std::size_t>(core_index(m));
    out[i] = ad::l2_normalize_rows(latent_of(tape, m, a.pooled[i])).value();
  }
  return out;
}

ForwardOutput Model::forward(ad::Tape& tape, const Batch& batch, const ForwardOptions& opt) {
  if (batch.empty()) throw DataError("forward: empty batch");
  const auto& tg = cfg_.toggles;
  const Eigen::Index n = static_cast<Eigen::Index>(batch.size());
  const Eigen::Index d = cfg_.encoder.d_model;
  ForwardOutput out;
  out.labels = labels_matrix(batch, shape_.zeta);
  out.alpha = emb_->forward(tape, batch, opt.train, opt.seed);
  const ModalityVars& xa = out.alpha.pooled;

  ModalityVars zn, intrinsic, common_in;
  for (Modality m : kCoreModalities) {
    const auto i = static_cast<std::size_t>(core_index(m));
    if (tg.no_enc_dec) {
      out.latent[i] = xa[i];
      out.decoded[i] = xa[i];
    } else {
      out.latent[i] = rec_->encode_latent(tape, m, xa[i]);
      out.decoded[i] = rec_->decode(tape, m, out.latent[i]);
    }
    zn[i] = ad::l2_normalize_rows(out.latent[i]);
  }
  for (Modality m : kCoreModalities) {
    const auto i = static_cast<std::size_t>(core_index(m));
    intrinsic[i] = intrinsic_(tape, m, attend_polarity(tape, zn[i], bank_, m));
  }
  const bool use_beta = !(tg.no_Xbeta || tg.no_Xbeta_Xgamma);
  const bool use_gamma = !(tg.no_Xgamma || tg.no_Xbeta_Xgamma);
  for (Modality m : kCoreModalities) {
    const auto i = static_cast<std::size_t>(core_index(m));
    if (use_beta) out.beta[i] = rec_->reconstruct_level1(tape, m, intrinsic[i], out.decoded);
    const ad::Var before_gamma = use_beta ? out.beta[i] : out.decoded[i];
    if (use_gamma) out.gamma[i] = rec_->reconstruct_level2(tape, m, before_gamma);
    common_in[i] = use_gamma ? out.gamma[i] : before_gamma;
  }
  const ad::Var zeros = tape.constant(Mat::Zero(n, d));
  for (Modality m : kCoreModalities) {
    const auto i = static_cast<std::size_t>(core_index(m));
    out.spec[i] = tg.no_S ? zeros : adv_->extract_specificity(tape, m, xa[i]);
    out.common[i] = tg.no_C ? zeros : adv_->generate_commonality(tape, common_in[i]);
  }
  out.bank_embeddings = {zn[0].value(), zn[1].value(), zn[2].value()};
  if (!opt.losses) return out;

  // Reconstruction targets come from the pre-dropout batch and are constants.
  const Batch& clean = opt.clean != nullptr ? *opt.clean : batch;
  std::array<Mat, 3> targets;
  if (opt.fixed_targets != nullptr) targets = *opt.fixed_targets;
  else if (opt.clean != nullptr && opt.clean != &batch) targets = alpha_values(clean);
  else
    for (std::size_t m = 0; m < 3; ++m) targets[m] = xa[m].value();
  Mat include(n, 3);
  for (Eigen::Index b = 0; b < n; ++b)
    for (Modality m : kCoreModalities)
      include(b, core_index(m)) = clean[static_cast<std::size_t>(b)].target_has(m) ? 1.0 : 0.0;
  for (std::size_t m = 0; m < 3; ++m) out.target[m] = tape.constant(targets[m]);
  ModalityVars rec_decoded;
  if (!tg.no_enc_dec) rec_decoded = out.decoded;
  out.rec = reconstruction_loss(out.target, rec_decoded, out.beta, include);

  const std::array<ModalityVars, 3> spaces = {xa, out.beta, out.gamma};
  out.cls_lsr = classify_three_spaces(tape, *rec_, spaces, out.labels,
                                      SpaceWeights{cfg_.lambda_alpha, cfg_.lambda_beta, cfg_.lambda_gamma})
                    .loss;

  if (!tg.no_Lscl && cfg_.lambda_s > 0.0) {
    std::vector<ad::Var> set;
    std::vector<Mat> lab;
    for (Modality m : kCoreModalities) {
      const auto i = static_cast<std::size_t>(core_index(m));
      set.push_back(zn[i]);
      lab.push_back(out.labels);
      if (out.beta[i].valid()) {
        set.push_back(ad::l2_normalize_rows(latent_of(tape, m, out.beta[i])));
        lab.push_back(out.labels);
      }
      if (out.gamma[i].valid()) {
        set.push_back(ad::l2_normalize_rows(latent_of(tape, m, out.gamma[i])));
        lab.push_back(out.labels);
      }
    }
    Mat all_labels(static_cast<Eigen::Index>(lab.size()) * n, shape_.zeta);
    for (std::size_t s = 0; s < lab.size(); ++s) all_labels.middleRows(static_cast<Eigen::Index>(s) * n, n) = lab[s];
    out.scl = supcon_loss(ad::concat_rows(set), all_labels, cfg_.eta, cfg_.positive_rule);
  } else {
    out.scl = tape.constant(Mat::Zero(1, 1));
  }

  const ad::Var zero = tape.constant(Mat::Zero(1, 1));
  if (!tg.no_C) {
    for (std::size_t m = 0; m < 3; ++m)
      out.disc_common[m] = adv_->discriminator_logits(tape, ad::grad_reverse(out.common[m], cfg_.rho));
    out.adv_C = modality_adversarial_loss(out.disc_common);
    ModalityVars cml_probs;
    for (std::size_t m = 0; m < 3; ++m) cml_probs[m] = adv_->common_label_probs(tape, out.common[m]);
    out.cml = common_semantic_loss(cml_probs, out.labels);
  } else {
    out.adv_C = zero;
    out.cml = zero;
  }
  if (!tg.no_S) {
    for (std::size_t m = 0; m < 3; ++m) out.disc_spec[m] = adv_->discriminator_logits(tape, out.spec[m]);
    out.adv_S = modality_adversarial_loss(out.disc_spec);
  } else {
    out.adv_S = zero;
  }
  out.orth = (tg.no_C || tg.no_S) ? zero : orthogonality_loss(out.common, out.spec);
  out.adv = adversarial_objective(out.adv_C, out.adv_S, out.orth, out.cml, cfg_.adversarial_weights());

  const FusionOrder fusion = tg.fusion();
  const std::vector<Modality> slots(fusion.order.begin(), fusion.order.end());
  std::vector<ad::Var> rows;
  for (Modality m : slots) {
    const auto i = static_cast<std::size_t>(core_index(m));
    rows.push_back(ad::concat_cols({out.common[i], out.spec[i]}));
  }
  ShuffleSpec spec = cfg_.shuffle_spec();
  spec.k = static_cast<int>(std::min<Eigen::Index>(spec.k, n));
  out.views = opt.train ? plan_shuffle(slots, n, spec) : identity_views(slots, n);
  out.cls_suf = shuffle_classification_loss(tape, clf_, out.views, rows, out.labels);

  out.total = ad::add(ad::add(ad::add(out.cls_suf, out.cls_lsr), ad::add(ad::scale(out.rec, cfg_.lambda_r),
                                                                         ad::scale(out.scl, cfg_.lambda_s))),
                      out.adv);
  return out;
}

Mat Model::predict_proba(const Batch& batch) {
  ad::Tape tape;
  ForwardOptions opt;
  opt.train = false;
  opt.losses = false;
  ForwardOutput out = forward(tape, batch, opt);
  Mat best;
  for (std::size_t m = 0; m < 3; ++m) {
    const Mat p = clf_.probs(tape, ad::concat_cols({out.common[m], out.spec[m]})).value();
    best = m == 0 ? p : best.cwiseMax(p);
  }
  return best;
}

// -- training -----------------------------------------------------------------

TrainState::TrainState(const TrainConfig& cfg, const ModelShape& shape)
    : model(std::make_unique<Model>(cfg, shape)), optimizer(cfg.learning_rate), disc_optimizer(cfg.learning_rate) {}

void prime_bank(Model& model, const Corpus& corpus, const std::vector<int>& indices) {
  PrototypeBank& bank = model.bank();
  bool complete = true;
  for (Modality m : kCoreModalities) complete = complete && bank.complete(m);
  if (complete) return;
  const int bs = model.config().batch_size;
  for (std::size_t start = 0; start < indices.size(); start += static_cast<std::size_t>(bs)) {
    const std::vector<int> idx(indices.begin() + static_cast<std::ptrdiff_t>(start),
                               indices.begin() + static_cast<std::ptrdiff_t>(std::min(indices.size(), start + bs)));
    const Batch batch = gather_batch(corpus, idx);
    const auto emb = model.bank_embeddings(batch);
    const Mat y = labels_matrix(batch, corpus.zeta);
    for (Modality m : kCoreModalities)
      if (!bank.complete(m)) bank.update(m, emb[static_cast<std::size_t>(core_index(m))], y);
  }
  // Cells never observed (a label that is always on or always off) get a fixed basis direction.
  for (Modality m : kCoreModalities)
    for (int j = 0; j < bank.zeta(); ++j)
      for (Polarity k : {Polarity::Pos, Polarity::Neg})
        if (!bank.initialized(m, j, k)) {
          RowVec e = RowVec::Zero(bank.dim());
          e((2 * j + static_cast<int>(k)) % bank.dim()) = 1.0;
          bank.set_prototype(m, j, k, e);
        }
}

namespace {

void check_finite(const LossReport& r) {
  const std::pair<const char*, double> parts[] = {{"adv_C", r.adv_C}, {"adv_S", r.adv_S}, {"orth", r.orth},
                                                  {"cml", r.cml},     {"total", r.total}};
  total_loss(LossComponents{r.cls_suf, r.cls_lsr, r.rec, r.scl, r.adv}, 1.0, 1.0);
  for (const auto& [name, v] : parts)
    if (!std::isfinite(v)) throw NumericError(std::string("loss component '") + name + "' is not finite");
}

}  // namespace

LossReport train_step(TrainState& state, const Batch& batch) {
  Model& model = *state.model;
  const TrainConfig& cfg = model.config();
  const auto step = static_cast<std::uint64_t>(state.step);
  const Batch dropped = apply_modality_dropout(batch, cfg.dropout, random::derive(cfg.seed, 0xD0, step));

  ad::Tape tape;
  ForwardOptions opt;
  opt.train = true;
  opt.seed = random::derive(cfg.seed, 0xE0, step);
  opt.clean = dropped == batch ? nullptr : &batch;
  ForwardOutput out = model.forward(tape, dropped, opt);
  const LossReport report = out.report();
  check_finite(report);

  model.store().zero_grad();
  tape.backward(out.total);
  if (cfg.alternating) {
    const auto disc = model.discriminator_params();
    std::vector<Parameter*> rest;
    for (Parameter* p : model.all_params())
      if (std::find(disc.begin(), disc.end(), p) == disc.end()) rest.push_back(p);
    state.optimizer.step(rest);

    // Discriminator pass on detached features.
    model.store().zero_grad();
    ad::Tape dt;
    ModalityVars lc, ls;
    for (std::size_t m = 0; m < 3; ++m) {
      lc[m] = model.adversary().discriminator_logits(dt, dt.constant(out.common[m].value()));
      ls[m] = model.adversary().discriminator_logits(dt, dt.constant(out.spec[m].value()));
    }
    ad::Var d_loss = ad::scale(ad::add(modality_adversarial_loss(lc), modality_adversarial_loss(ls)),
                               cfg.adversarial_weights().lambda_a);
    dt.backward(d_loss);
    state.disc_optimizer.step(disc);
  } else {
    state.optimizer.step(model.all_params());
  }

  const Mat y = labels_matrix(dropped, model.shape().zeta);
  for (Modality m : kCoreModalities)
    model.bank().update(m, out.bank_embeddings[static_cast<std::size_t>(core_index(m))], y);
  ++state.step;
  return report;
}

void train_epochs(TrainState& state, const Corpus& corpus, int epochs, const EpochCallback& cb,
                  std::vector<LossReport>* step_reports) {
  const auto train_idx = corpus.split_indices(Split::Train);
  if (train_idx.empty()) throw DataError("training split is empty");
  const auto val_idx = corpus.split_indices(Split::Val);
  Model& model = *state.model;
  const TrainConfig& cfg = model.config();
  prime_bank(model, corpus, train_idx);
  const double steps_per_epoch =
      std::ceil(static_cast<double>(train_idx.size()) / static_cast<double>(cfg.batch_size));
  const double total_steps = std::max(1.0, steps_per_epoch * cfg.epochs);
  for (int e = 0; e < epochs; ++e) {
    const auto batches =
        batch_iter(train_idx, cfg.batch_size, random::derive(cfg.seed, 0xBA, static_cast<std::uint64_t>(state.epoch)));
    EpochLog log;
    for (const auto& idx : batches) {
      if (cfg.lr_schedule == "cosine") {
        const double progress = std::min(1.0, static_cast<double>(state.step) / total_steps);
        const double lr = cfg.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
        state.optimizer.set_lr(lr);
        state.disc_optimizer.set_lr(lr);
      }
      const LossReport r = train_step(state, gather_batch(corpus, idx));
      if (step_reports != nullptr) step_reports->push_back(r);
      log.mean_loss.cls_suf += r.cls_suf;
      log.mean_loss.cls_lsr += r.cls_lsr;
      log.mean_loss.rec += r.rec;
      log.mean_loss.scl += r.scl;
      log.mean_loss.adv += r.adv;
      log.mean_loss.adv_C += r.adv_C;
      log.mean_loss.adv_S += r.adv_S;
      log.mean_loss.orth += r.orth;
      log.mean_loss.cml += r.cml;
      log.mean_loss.total += r.total;
    }
    const double nb = static_cast<double>(batches.size());
    for (double* v : {&log.mean_loss.cls_suf, &log.mean_loss.cls_lsr, &log.mean_loss.rec, &log.mean_loss.scl,
                      &log.mean_loss.adv, &log.mean_loss.adv_C, &log.mean_loss.adv_S, &log.mean_loss.orth,
                      &log.mean_loss.cml, &log.mean_loss.total})
      *v /= nb;
    ++state.epoch;
    log.epoch = state.epoch;
    if (cb) {
      if (!val_idx.empty()) {
        const Prediction p = predict(model, corpus, val_idx);
        log.val_micro_f1 = compute_metrics(p.binary, labels_matrix(gather_batch(corpus, val_idx), corpus.zeta)).micro_f1;
      }
      cb(log);
    }
  }
}

std::unique_ptr<TrainState> fit(const Corpus& corpus, const TrainConfig& cfg, const EpochCallback& cb) {
  corpus.validate();
  auto state = std::make_unique<TrainState>(cfg, ModelShape::of(corpus));
  train_epochs(*state, corpus, cfg.epochs, cb);
  return state;
}

Prediction predict(Model& model, const Corpus& corpus, const std::vector<int>& indices, std::optional<Modality> masked) {
  Prediction out;
  out.probs.resize(static_cast<Eigen::Index>(indices.size()), corpus.zeta);
  const int bs = std::max(model.config().batch_size, 64);
  for (std::size_t start = 0; start < indices.size(); start += static_cast<std::size_t>(bs)) {
    const std::size_t end = std::min(indices.size(), start + static_cast<std::size_t>(bs));
    const std::vector<int> idx(indices.begin() + static_cast<std::ptrdiff_t>(start),
                               indices.begin() + static_cast<std::ptrdiff_t>(end));
    Batch batch = gather_batch(corpus, idx);
    if (masked) batch = mask_modality(batch, *masked);
    out.probs.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) =
        model.predict_proba(batch);
  }
  out.binary = threshold_predictions(out.probs, model.config().threshold);
  return out;
}

DiscriminatorAccuracy discriminator_accuracy(Model& model, const Corpus& corpus, const std::vector<int>& indices) {
  long hit_c = 0, hit_s = 0, total = 0;
  const int bs = 64;
  for (std::size_t start = 0; start < indices.size(); start += bs) {
    const std::vector<int> idx(indices.begin() + static_cast<std::ptrdiff_t>(start),
                               indices.begin() + static_cast<std::ptrdiff_t>(std::min(indices.size(), start + bs)));
    const Batch batch = gather_batch(corpus, idx);
    ad::Tape tape;
    ForwardOptions opt;
    opt.train = false;
    opt.losses = false;
    ForwardOutput out = model.forward(tape, batch, opt);
    for (int m = 0; m < 3; ++m) {
      const auto mi = static_cast<std::size_t>(m);
      const Mat lc = model.adversary().discriminator_logits(tape, out.common[mi]).value();
      const Mat ls = model.adversary().discriminator_logits(tape, out.spec[mi]).value();
      for (Eigen::Index r = 0; r < lc.rows(); ++r) {
        Eigen::Index ac = 0, as = 0;
        lc.row(r).maxCoeff(&ac);
        ls.row(r).maxCoeff(&as);
        hit_c += ac == m ? 1 : 0;
        hit_s += as == m ? 1 : 0;
        ++total;
      }
    }
  }
  if (total == 0) return {};
  return {static_cast<double>(hit_c) / static_cast<double>(total), static_cast<double>(hit_s) / static_cast<double>(total)};
}

// -- checkpoints --------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'R', 'A', 'M', 'E', 'R', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  template <typename T>
  void pod(const T& v) {
    out_.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    out_.append(s);
  }
  void mat(const Mat& m) {
    pod<std::int64_t>(m.rows());
    pod<std::int64_t>(m.cols());
    out_.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}
  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  Mat mat() {
    const auto r = pod<std::int64_t>(), c = pod<std::int64_t>();
    if (r < 0 || c < 0) throw DataError("checkpoint: negative matrix shape");
    const auto bytes = static_cast<std::size_t>(r) * static_cast<std::size_t>(c) * sizeof(double);
    need(bytes);
    Mat m(r, c);
    std::memcpy(m.data(), in_.data() + pos_, bytes);
    pos_ += bytes;
    return m;
  }
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw DataError("checkpoint: file is truncated");
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::string& in_;
  std::size_t pos_ = 0;
};

std::string shape_to_json(const ModelShape& s) {
  ojson j;
  ojson dims = ojson::object(), lens = ojson::object();
  for (const auto& [m, v] : s.dims) dims[std::string(modality_name(m))] = v;
  for (const auto& [m, v] : s.seq_lens) lens[std::string(modality_name(m))] = v;
  j["dims"] = dims;
  j["seq_lens"] = lens;
  j["zeta"] = s.zeta;
  j["max_segments"] = s.max_segments;
  return j.dump();
}

ModelShape shape_from_json(const std::string& text) {
  ModelShape s;
  const json j = json::parse(text);
  for (const auto& [k, v] : j.at("dims").items()) s.dims[parse_modality(k)] = v.get<int>();
  for (const auto& [k, v] : j.at("seq_lens").items()) s.seq_lens[parse_modality(k)] = v.get<int>();
  s.zeta = j.at("zeta").get<int>();
  s.max_segments = j.at("max_segments").get<int>();
  return s;
}

void write_adam(Writer& w, const Adam& a) {
  w.pod<std::int64_t>(a.t());
  w.pod<std::uint64_t>(a.moments().size());
  for (const auto& [name, mv] : a.moments()) {
    w.str(name);
    w.mat(mv.first);
    w.mat(mv.second);
  }
}

void read_adam(Reader& r, Adam& a) {
  a.set_t(r.pod<std::int64_t>());
  const auto n = r.pod<std::uint64_t>();
  a.moments().clear();
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string name = r.str();
    Mat m = r.mat();
    Mat v = r.mat();
    a.moments().emplace(std::move(name), std::make_pair(std::move(m), std::move(v)));
  }
}

}  // namespace

std::string checkpoint_bytes(const TrainState& state) {
  const Model& model = *state.model;
  Writer w;
  for (char c : kMagic) w.pod(c);
  w.pod(kVersion);
  w.str(train_config_to_json(model.config()));
  w.str(shape_to_json(model.shape()));
  w.pod<std::int32_t>(state.epoch);
  w.pod<std::int64_t>(state.step);
  w.pod<std::uint64_t>(model.store().all().size());
  for (const auto& p : model.store().all()) {
    w.str(p.name);
    w.mat(p.value);
  }
  const PrototypeBank& bank = model.bank();
  for (Modality m : kCoreModalities) {
    w.mat(bank.table(m));
    for (auto f : bank.init_flags(m)) w.pod(f);
  }
  write_adam(w, state.optimizer);
  write_adam(w, state.disc_optimizer);
  return w.take();
}

std::unique_ptr<TrainState> checkpoint_from_bytes(const std::string& bytes) {
  Reader r(bytes);
  for (char c : kMagic)
    if (r.pod<char>() != c) throw DataError("checkpoint: bad magic");
  const auto version = r.pod<std::uint32_t>();
  if (version != kVersion) throw DataError("checkpoint: unsupported version " + std::to_string(version));
  TrainConfig cfg;
  ModelShape shape;
  try {
    cfg = train_config_from_json(r.str());
    shape = shape_from_json(r.str());
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
  auto state = std::make_unique<TrainState>(cfg, shape);
  state->epoch = r.pod<std::int32_t>();
  state->step = r.pod<std::int64_t>();
  Model& model = *state->model;
  const auto count = r.pod<std::uint64_t>();
  if (count != model.store().all().size()) throw DataError("checkpoint: parameter count mismatch");
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    Mat value = r.mat();
    Parameter* p = model.store().find(name);
    if (p == nullptr) throw DataError("checkpoint: unknown parameter '" + name + "'");
    if (p->value.rows() != value.rows() || p->value.cols() != value.cols())
      throw DataError("checkpoint: shape mismatch for '" + name + "'");
    p->value = std::move(value);
  }
  for (Modality m : kCoreModalities) {
    Mat table = r.mat();
    std::vector<std::uint8_t> flags(static_cast<std::size_t>(2 * shape.zeta));
    for (auto& f : flags) f = r.pod<std::uint8_t>();
    model.bank().restore(m, std::move(table), std::move(flags));
  }
  read_adam(r, state->optimizer);
  read_adam(r, state->disc_optimizer);
  if (!r.done()) throw DataError("checkpoint: trailing bytes");
  return state;
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  const std::string bytes = checkpoint_bytes(state);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("failed writing " + path.string());
}

std::unique_ptr<TrainState> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return checkpoint_from_bytes(ss.str());
}

}  // namespace ramer
