#pragma once

// Run configuration: INI-style "key = value" under [section] headers.
// Unknown sections or keys are errors.

#include <cstdint>
#include <filesystem>
#include <string>

#include "cadgd/losses.hpp"
#include "cadgd/model.hpp"
#include "cadgd/scene.hpp"

namespace cadgd {

struct DataConfig {
  int train_scenes = 160;
  int val_scenes = 40;
  std::uint64_t seed = 1;
};

struct InferConfig {
  double cls_threshold = 0.25;
  double token_threshold = 0.35;
  double crop_trigger = 600.0;
  double tau = 15.0;  // localization match radius, pixels
};

struct TrainConfig {
  int epochs = 200;
  double learning_rate = 1e-3;
  int decay_epoch = 0;  // 0: half of epochs
  double decay_factor = 0.1;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 1;
};

struct Config {
  SceneConfig scene;
  DataConfig data;
  ModelConfig model;
  LossWeights loss;
  InferConfig infer;
  TrainConfig train;
};

// Throws std::invalid_argument naming the offending value.
void validate(const Config& config);

Config parse_config(const std::string& text);
Config load_config(const std::filesystem::path& path);
// Canonical text form; parse_config(config_to_string(c)) reproduces c.
std::string config_to_string(const Config& config);

}  // namespace cadgd
