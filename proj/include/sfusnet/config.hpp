#pragma once

#include <array>
#include <fstream>
#include <string>

#include <json.hpp>

#include "sfusnet/adam.hpp"
#include "sfusnet/model.hpp"

namespace sfus {

inline nlohmann::json to_json(const ModelConfig& m) {
  return {{"base_channels", m.base_channels},
          {"stage_depths", m.stage_depths},
          {"num_classes", m.num_classes},
          {"input_size", m.input_size},
          {"dropblock_block_size", m.dropblock_block_size},
          {"dropblock_drop_rate", m.dropblock_drop_rate},
          {"fft_branch_enabled", m.fft_branch_enabled}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {}) {
  base.base_channels = j.value("base_channels", base.base_channels);
  if (j.contains("stage_depths")) {
    const auto d = j.at("stage_depths").get<std::vector<index_t>>();
    SFUS_CHECK(d.size() == 4, "stage_depths must list exactly 4 stages, got " << d.size());
    std::copy(d.begin(), d.end(), base.stage_depths.begin());
  }
  base.num_classes = j.value("num_classes", base.num_classes);
  base.input_size = j.value("input_size", base.input_size);
  base.dropblock_block_size = j.value("dropblock_block_size", base.dropblock_block_size);
  base.dropblock_drop_rate = j.value("dropblock_drop_rate", base.dropblock_drop_rate);
  base.fft_branch_enabled = j.value("fft_branch_enabled", base.fft_branch_enabled);
  return base;
}

inline nlohmann::json to_json(const OptimizerConfig& o) {
  return {{"learning_rate", o.learning_rate},
          {"beta1", o.beta1},
          {"beta2", o.beta2},
          {"weight_decay", o.weight_decay},
          {"epsilon", o.epsilon}};
}

inline OptimizerConfig optimizer_config_from_json(const nlohmann::json& j,
                                                  OptimizerConfig base = {}) {
  base.learning_rate = j.value("learning_rate", base.learning_rate);
  base.beta1 = j.value("beta1", base.beta1);
  base.beta2 = j.value("beta2", base.beta2);
  base.weight_decay = j.value("weight_decay", base.weight_decay);
  base.epsilon = j.value("epsilon", base.epsilon);
  return base;
}

// Every stream of randomness gets an explicit seed; no wall-clock entropy.
struct SeedPack {
  std::uint64_t init = 101;
  std::uint64_t fold = 202;
  std::uint64_t batch = 303;
  std::uint64_t dropblock = 404;
  std::uint64_t data = 505;

  static SeedPack from_base(std::uint64_t base) {
    SeedPack s;
    s.init = seed_mix({base, 1});
    s.fold = seed_mix({base, 2});
    s.batch = seed_mix({base, 3});
    s.dropblock = seed_mix({base, 4});
    s.data = seed_mix({base, 5});
    return s;
  }
};

inline nlohmann::json to_json(const SeedPack& s) {
  return {{"init", s.init},
          {"fold", s.fold},
          {"batch", s.batch},
          {"dropblock", s.dropblock},
          {"data", s.data}};
}

inline SeedPack seeds_from_json(const nlohmann::json& j, SeedPack base = {}) {
  base.init = j.value("init", base.init);
  base.fold = j.value("fold", base.fold);
  base.batch = j.value("batch", base.batch);
  base.dropblock = j.value("dropblock", base.dropblock);
  base.data = j.value("data", base.data);
  return base;
}

struct SynthSpec {
  index_t per_class = 500;
  index_t size = 64;
};

inline ModelConfig desk_model_config() {
  ModelConfig m;
  m.base_channels = 16;
  m.stage_depths = {1, 1, 1, 1};
  m.num_classes = 4;
  m.input_size = 64;
  return m;
}

// Full experiment description. The default profile is the desk-scale one:
// reduced model on the 64x64 synthetic dataset.
struct ExperimentConfig {
  std::string model_name = "sfusnet";
  ModelConfig model = desk_model_config();
  OptimizerConfig optimizer;
  index_t epochs = 20;
  index_t batch_size = 64;
  index_t folds = 5;
  SeedPack seeds;
  std::string dataset = "synthetic";  // "synthetic" or a directory path
  SynthSpec synth;
  std::string out_dir = "out";
  std::string precision = "f64";  // "f64" | "f32" (opt-in training mode)
  int threads = 0;                // 0 = hardware concurrency
  bool deterministic = true;

  void validate() const {
    model.validate();
    optimizer.validate();
    SFUS_CHECK(epochs >= 1 && batch_size >= 1, "epochs and batch_size must be positive");
    SFUS_CHECK(folds >= 1, "folds must be positive");
    SFUS_CHECK(precision == "f64" || precision == "f32",
               "precision must be f64 or f32, got " << precision);
    SFUS_CHECK(!dataset.empty(), "dataset must be a path or 'synthetic'");
    SFUS_CHECK(synth.per_class >= 1 && synth.size >= 16 && synth.size % 16 == 0,
               "synth size must be a positive multiple of 16");
  }
};

inline ExperimentConfig desk_preset() { return ExperimentConfig{}; }

inline ExperimentConfig paper_preset() {
  ExperimentConfig cfg;
  cfg.model = ModelConfig{};  // base 32, depths [3,6,3,3], 224 input
  cfg.epochs = 150;
  cfg.batch_size = 128;
  cfg.folds = 5;
  cfg.synth.size = 224;
  return cfg;
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  return {{"model_name", c.model_name},
          {"model", to_json(c.model)},
          {"optimizer", to_json(c.optimizer)},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"folds", c.folds},
          {"seeds", to_json(c.seeds)},
          {"dataset", c.dataset},
          {"synth", {{"per_class", c.synth.per_class}, {"size", c.synth.size}}},
          {"out_dir", c.out_dir},
          {"precision", c.precision},
          {"threads", c.threads},
          {"deterministic", c.deterministic}};
}

inline ExperimentConfig experiment_from_json(const nlohmann::json& j,
                                             ExperimentConfig base = {}) {
  base.model_name = j.value("model_name", base.model_name);
  if (j.contains("model")) base.model = model_config_from_json(j.at("model"), base.model);
  if (j.contains("optimizer"))
    base.optimizer = optimizer_config_from_json(j.at("optimizer"), base.optimizer);
  base.epochs = j.value("epochs", base.epochs);
  base.batch_size = j.value("batch_size", base.batch_size);
  base.folds = j.value("folds", base.folds);
  if (j.contains("seeds")) base.seeds = seeds_from_json(j.at("seeds"), base.seeds);
  base.dataset = j.value("dataset", base.dataset);
  if (j.contains("synth")) {
    base.synth.per_class = j.at("synth").value("per_class", base.synth.per_class);
    base.synth.size = j.at("synth").value("size", base.synth.size);
  }
  base.out_dir = j.value("out_dir", base.out_dir);
  base.precision = j.value("precision", base.precision);
  base.threads = j.value("threads", base.threads);
  base.deterministic = j.value("deterministic", base.deterministic);
  return base;
}

inline ExperimentConfig load_config_file(const std::string& path, ExperimentConfig base = {}) {
  std::ifstream in(path);
  if (!in) SFUS_THROW(ConfigError, "cannot open config file: " << path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    SFUS_THROW(ConfigError, "config parse error in " << path << ": " << e.what());
  }
  try {
    return experiment_from_json(j, std::move(base));
  } catch (const nlohmann::json::exception& e) {
    SFUS_THROW(ConfigError, "bad config value in " << path << ": " << e.what());
  }
}

}  // namespace sfus
