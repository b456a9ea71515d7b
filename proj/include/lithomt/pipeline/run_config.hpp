#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "lithomt/config.hpp"
#include "lithomt/detmodel/detector.hpp"
#include "lithomt/genmodel/generator.hpp"
#include "lithomt/objectives/detection.hpp"
#include "lithomt/objectives/generation.hpp"

namespace lmt {

enum class Phase { gen_pretrain, det_pretrain, joint_finetune };
std::string to_string(Phase p);
Phase parse_phase(const std::string& name);

struct OptimConfig {
  double lr = 2e-4;
  long warmup = 100;
  double min_ratio = 0.05;
  double clip = 1.0;
  double weight_decay = 0.0;
};

struct RunConfig {
  Phase phase = Phase::gen_pretrain;
  Task task = Task::drc;  // detector phases
  std::filesystem::path corpus;
  std::filesystem::path gen_checkpoint, det_checkpoint;  // joint fine-tuning inputs
  long steps = 2000;
  int batch = 2;
  std::uint64_t seed = 1;
  long checkpoint_every = 500;
  long log_every = 50;
  bool aux_loss = true;  // detection loss on every decoder layer
  OptimConfig optim;
  GenConfig gen;
  DetConfig det;
  GenLossWeights gen_loss;
  DetLossWeights det_loss;

  void validate() const;
  static RunConfig from_config(const KeyValueConfig& kv);
  // Every setting, including defaults, as a flat key set.
  KeyValueConfig echo() const;
};

// Default learning rate per phase when the config does not set one.
double default_learning_rate(Phase p);

void read_loss_weights(const KeyValueConfig& kv, GenLossWeights& g, DetLossWeights& d);
void write_loss_weights(KeyValueConfig& kv, const GenLossWeights& g, const DetLossWeights& d);

// Applies the LITHOMT_DETERMINISTIC environment toggle; returns whether it is on.
bool deterministic_mode();

}  // namespace lmt
