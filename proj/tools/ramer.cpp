// Copyright 2026 The ramer Authors
// SPDX-License-Identifier: Apache-2.0
//
// ramer command-line entry point: gen, train, eval, ablate, viz.

#include "ramer/errors.hpp"
#include "ramer/harness.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace ramer;

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write " + path);
  f << text;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ','))
    if (!part.empty()) out.push_back(part);
  return out;
}

void log_epoch(const EpochLog& l) {
  std::cerr << "epoch " << l.epoch << " loss " << l.mean_loss.total << " (suf " << l.mean_loss.cls_suf << ", lsr "
            << l.mean_loss.cls_lsr << ", rec " << l.mean_loss.rec << ", scl " << l.mean_loss.scl << ", adv "
            << l.mean_loss.adv << ") val micro_f1 " << l.val_micro_f1 << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ramer: multi-party multimodal multi-label emotion recognition"};
  app.require_subcommand(1);

  std::string out_dir, gen_config, data, config, out, ckpt, report, variants, what;
  std::uint64_t seed = 0;
  int seeds = 3;
  bool pca = false;
  double test_nonspeaker = 0.0;
  std::string split = "test";

  auto* gen = app.add_subcommand("gen", "Generate a synthetic corpus");
  gen->add_option("--out", out_dir, "Output directory")->required();
  gen->add_option("--gen-config", gen_config, "Generator config JSON");
  auto* gen_seed = gen->add_option("--seed", seed, "Generator seed");

  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--data", data, "Corpus directory")->required();
  train->add_option("--config", config, "Training config JSON")->required();
  train->add_option("--out", out, "Checkpoint path")->required();
  auto* train_seed = train->add_option("--seed", seed, "Override the config seed");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--data", data, "Corpus directory")->required();
  eval->add_option("--ckpt", ckpt, "Checkpoint path")->required();
  eval->add_option("--report", report, "Report JSON path")->required();
  eval->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--test-nonspeaker-drop", test_nonspeaker, "Non-speaker corruption probability at evaluation");

  auto* ablate = app.add_subcommand("ablate", "Run ablation variants");
  ablate->add_option("--data", data, "Corpus directory")->required();
  ablate->add_option("--config", config, "Training config JSON")->required();
  ablate->add_option("--variants", variants, "Comma-separated variant names");
  ablate->add_option("--seeds", seeds, "Number of seeds")->check(CLI::PositiveNumber);
  ablate->add_option("--report", report, "Report JSON path")->required();
  ablate->add_option("--test-nonspeaker-drop", test_nonspeaker, "Non-speaker corruption probability at evaluation");

  auto* viz = app.add_subcommand("viz", "Export projections or modality-to-label correlations");
  viz->add_option("--ckpt", ckpt, "Checkpoint path")->required();
  viz->add_option("--data", data, "Corpus directory")->required();
  viz->add_option("--what", what, "spec_common, recon or mod2label")
      ->required()
      ->check(CLI::IsMember({"spec_common", "recon", "mod2label"}));
  viz->add_option("--out", out, "CSV path")->required();
  viz->add_flag("--pca", pca, "Use PCA instead of t-SNE");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) {
      GenConfig g = gen_config.empty() ? GenConfig{} : gen_config_from_json(slurp(gen_config));
      if (gen_seed->count() > 0) g.seed = seed;
      write_corpus(generate_synthetic(g), out_dir);
    } else if (train->parsed()) {
      TrainConfig cfg = train_config_from_json(slurp(config));
      if (train_seed->count() > 0) cfg.seed = seed;
      const Corpus corpus = read_corpus(data);
      auto state = fit(corpus, cfg, log_epoch);
      save_checkpoint(*state, out);
    } else if (eval->parsed()) {
      const Corpus corpus = read_corpus(data);
      auto state = load_checkpoint(ckpt);
      EvalOptions opt;
      opt.split = parse_split(split);
      opt.corruption.p_nonspeaker_drop = test_nonspeaker;
      opt.corruption_seed = state->model->config().seed;
      write_text(report, metrics_to_json(evaluate(*state->model, corpus, opt)).dump(2) + "\n");
    } else if (ablate->parsed()) {
      const TrainConfig cfg = train_config_from_json(slurp(config));
      const Corpus corpus = read_corpus(data);
      std::vector<AblationVariant> vs;
      for (const auto& n : split_list(variants)) vs.push_back(variant_from_name(n));
      std::vector<std::uint64_t> seed_list;
      for (int i = 0; i < seeds; ++i) seed_list.push_back(cfg.seed + static_cast<std::uint64_t>(i));
      EvalOptions opt;
      opt.corruption.p_nonspeaker_drop = test_nonspeaker;
      const auto table = run_ablation(corpus, cfg, vs, seed_list, opt,
                                      [](const std::string& v, std::uint64_t s, const MetricsReport& r) {
                                        std::cerr << v << " seed " << s << " micro_f1 " << r.micro_f1 << '\n';
                                      });
      write_text(report, ablation_to_json(table).dump(2) + "\n");
    } else if (viz->parsed()) {
      const Corpus corpus = read_corpus(data);
      auto state = load_checkpoint(ckpt);
      if (what == "mod2label") {
        write_text(out, correlation_csv(modality_label_correlation(*state->model, corpus)));
      } else {
        ProjectionOptions opt;
        opt.pca = pca;
        opt.seed = state->model->config().seed;
        const auto kind = what == "spec_common" ? ProjectionKind::SpecCommon : ProjectionKind::Recon;
        write_text(out, projection_csv(export_projection(*state->model, corpus, kind, opt)));
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
