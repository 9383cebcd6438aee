// Copyright 2026 The ramer Authors
// SPDX-License-Identifier: Apache-2.0
//
// Model assembly, the composite objective, optimisation, prediction and
// checkpointing.

#pragma once

#include "ramer/adversary.hpp"
#include "ramer/autodiff.hpp"
#include "ramer/corpus.hpp"
#include "ramer/embedding.hpp"
#include "ramer/prototypes.hpp"
#include "ramer/reconstructor.hpp"
#include "ramer/shuffler.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace ramer {

/// Component switches used by the ablation runner. All false is the full model.
struct Toggles {
  bool no_Lsc = false;
  bool no_C = false;
  bool no_S = false;
  bool no_Lscl = false;
  bool no_enc_dec = false;
  bool no_Xbeta = false;
  bool no_Xgamma = false;
  bool no_Xbeta_Xgamma = false;
  bool fusion_order_A = false;
  bool fusion_order_B = false;

  void validate() const;
  void set(std::string_view name);
  std::vector<std::string> names() const;
  FusionOrder fusion() const;
  bool operator==(const Toggles&) const = default;
};

/// Names accepted by Toggles::set, in table order.
const std::vector<std::string>& toggle_names();

struct TrainConfig {
  double lambda_r = 0.3;
  double lambda_s = 1.0;
  double lambda_a = 1.0;
  double lambda_o = 0.1;
  double lambda_c = 1.0;
  double lambda_alpha = 1.0;
  double lambda_beta = 1.0;
  double lambda_gamma = 1.0;
  double eta = 0.1;
  double momentum = 0.9;
  double rho = 2.0;
  int k = 4;
  int shuffle_rounds = 1;
  bool sample_wise_shuffle = true;
  bool modality_wise_shuffle = true;
  double learning_rate = 6e-3;
  /// "constant" or "cosine" (decay to zero over `epochs`).
  std::string lr_schedule = "cosine";
  int epochs = 30;
  int batch_size = 32;
  double threshold = 0.5;
  std::uint64_t seed = 0;
  DropoutPolicy dropout;
  EncoderConfig encoder;
  int latent_dim = 0;  // 0 => d_model / 2
  PositiveRule positive_rule = PositiveRule::ShareAny;
  bool alternating = false;
  Toggles toggles;

  void validate() const;
  int latent() const { return latent_dim > 0 ? latent_dim : encoder.d_model / 2; }
  AdversarialWeights adversarial_weights() const;
  ShuffleSpec shuffle_spec() const;
};

TrainConfig train_config_from_json(const std::string& text);
std::string train_config_to_json(const TrainConfig& cfg);

/// Input shapes a model is built for.
struct ModelShape {
  std::map<Modality, int> dims;
  std::map<Modality, int> seq_lens;
  int zeta = 0;
  int max_segments = 1;

  static ModelShape of(const Corpus& corpus);
  bool operator==(const ModelShape&) const = default;
};

struct LossReport {
  double cls_suf = 0.0;
  double cls_lsr = 0.0;
  double rec = 0.0;
  double scl = 0.0;
  double adv = 0.0;
  double adv_C = 0.0;
  double adv_S = 0.0;
  double orth = 0.0;
  double cml = 0.0;
  double total = 0.0;

  bool operator==(const LossReport&) const = default;
};

struct LossComponents {
  double cls_suf = 0.0;
  double cls_lsr = 0.0;
  double rec = 0.0;
  double scl = 0.0;
  double adv = 0.0;
};

/// cls_suf + cls_lsr + lambda_r * rec + lambda_s * scl + adv. Non-finite
/// components raise NumericError naming the component.
double total_loss(const LossComponents& c, double lambda_r, double lambda_s);

struct ForwardOptions {
  bool train = true;
  std::uint64_t seed = 0;
  /// Pre-dropout batch supplying reconstruction targets; null means the input itself.
  const Batch* clean = nullptr;
  /// Fixed reconstruction targets (bypasses `clean`).
  const std::array<Mat, 3>* fixed_targets = nullptr;
  bool losses = true;
};

struct ForwardOutput {
  AlphaFeatures alpha;
  ModalityVars target, latent, decoded, beta, gamma;
  ModalityVars spec, common;
  ModalityVars disc_common, disc_spec;  // discriminator logits
  ShuffledViews views;
  std::array<Mat, 3> bank_embeddings;  // detached, normalized alpha latents
  ad::Var cls_suf, cls_lsr, rec, scl, adv_C, adv_S, orth, cml, adv, total;
  Mat labels;

  LossReport report() const;
};

class Adam {
 public:
  Adam() = default;
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Parameter*>& params);

  long long t() const { return t_; }
  std::map<std::string, std::pair<Mat, Mat>>& moments() { return moments_; }
  const std::map<std::string, std::pair<Mat, Mat>>& moments() const { return moments_; }
  void set_t(long long t) { t_ = t; }
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long long t_ = 0;
  std::map<std::string, std::pair<Mat, Mat>> moments_;
};

/// All trainable modules plus the prototype bank.
class Model {
 public:
  Model(const TrainConfig& cfg, const ModelShape& shape);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  ForwardOutput forward(ad::Tape& tape, const Batch& batch, const ForwardOptions& opt);

  /// Eval-mode pooled alpha features of the batch as plain matrices.
  std::array<Mat, 3> alpha_values(const Batch& batch);
  /// L2-normalized alpha latents used for prototype updates.
  std::array<Mat, 3> bank_embeddings(const Batch& batch);

  /// Inference path: no modality dropout, no shuffling. Per-modality
  /// probabilities of the shuffle classifier, max-pooled over modalities.
  Mat predict_proba(const Batch& batch);

  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }
  PrototypeBank& bank() { return bank_; }
  const PrototypeBank& bank() const { return bank_; }
  const TrainConfig& config() const { return cfg_; }
  const ModelShape& shape() const { return shape_; }
  const Embedding& embedding() const { return *emb_; }
  const Reconstructor& reconstructor() const { return *rec_; }
  const Adversary& adversary() const { return *adv_; }
  const IntrinsicHead& intrinsic() const { return intrinsic_; }
  const ShuffleClassifier& classifier() const { return clf_; }
  Eigen::Index bank_dim() const;

  /// Parameters owned by the modality discriminator.
  std::vector<Parameter*> discriminator_params();
  std::vector<Parameter*> all_params();

 private:
  ad::Var latent_of(ad::Tape& tape, Modality m, ad::Var x) const;

  TrainConfig cfg_;
  ModelShape shape_;
  ParameterStore store_;
  std::unique_ptr<Embedding> emb_;
  std::unique_ptr<Reconstructor> rec_;
  std::unique_ptr<Adversary> adv_;
  IntrinsicHead intrinsic_;
  ShuffleClassifier clf_;
  PrototypeBank bank_;
};

Mat labels_matrix(const Batch& batch, int zeta);
Mat threshold_predictions(const Mat& probs, double threshold);

/// Complete training state.
struct TrainState {
  std::unique_ptr<Model> model;
  Adam optimizer;
  Adam disc_optimizer;
  int epoch = 0;
  long long step = 0;

  explicit TrainState(const TrainConfig& cfg, const ModelShape& shape);
};

/// Fills the bank from one eval pass over `indices` when it is not yet complete.
void prime_bank(Model& model, const Corpus& corpus, const std::vector<int>& indices);

/// One optimisation step on `batch` following the documented order.
LossReport train_step(TrainState& state, const Batch& batch);

struct EpochLog {
  int epoch = 0;
  LossReport mean_loss;
  double val_micro_f1 = 0.0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Runs `epochs` more epochs (resuming from state.epoch).
void train_epochs(TrainState& state, const Corpus& corpus, int epochs, const EpochCallback& cb = {},
                  std::vector<LossReport>* step_reports = nullptr);

std::unique_ptr<TrainState> fit(const Corpus& corpus, const TrainConfig& cfg, const EpochCallback& cb = {});

struct Prediction {
  Mat probs;
  Mat binary;
};

Prediction predict(Model& model, const Corpus& corpus, const std::vector<int>& indices,
                   std::optional<Modality> masked = std::nullopt);

struct DiscriminatorAccuracy {
  double on_common = 0.0;
  double on_specific = 0.0;
};

DiscriminatorAccuracy discriminator_accuracy(Model& model, const Corpus& corpus, const std::vector<int>& indices);

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
std::unique_ptr<TrainState> load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_bytes(const TrainState& state);
std::unique_ptr<TrainState> checkpoint_from_bytes(const std::string& bytes);

}  // namespace ramer
