#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "lithomt/corpus/corpus.hpp"
#include "lithomt/pipeline/checkpoint.hpp"
#include "lithomt/pipeline/run_config.hpp"

namespace lmt {

struct StepLog {
  long step = 0;
  double lr = 0, total = 0, grad_norm = 0;
  std::map<std::string, double> terms;
};

struct TrainOptions {
  std::filesystem::path out_dir;
  bool resume = false;                 // continue from out_dir/last.ckpt when present
  long stop_after = -1;                // stop early at this step (the schedule still spans cfg.steps)
  std::function<void(const StepLog&)> on_step;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<StepLog> log;
  std::filesystem::path final_path;
  std::string generator_hash_before, generator_hash_after;  // joint fine-tuning only
};

// Samples of one split together with their layout groups.
struct TrainingSet {
  std::vector<Sample> samples;
  std::vector<int> group;
  std::string corpus_hash;
  int size = 0;
};
TrainingSet load_training_set(const std::filesystem::path& corpus, Split split);

// Entries are B anchors followed by their cross-process partners; SAC takes
// the partner as positive and every other-layout entry as negative, PAC
// pairs each prediction with its partner's ground truth.
struct GenBatchPlan {
  std::vector<int> entries;  // sample indices
  std::vector<SacItem> sac;
  std::vector<std::pair<int, int>> pac;
};
GenBatchPlan plan_generator_batch(const std::vector<int>& group, int batch, std::uint64_t seed, long step);
std::vector<int> plan_detector_batch(int n, int batch, std::uint64_t seed, long step);

// Oracle rasters the detector consumes for a task, in forward() order.
std::vector<const BinaryRaster*> detector_inputs(const Sample& s, Task task);
std::vector<GtBox> ground_truth(const Sample& s, Task task);

// Raster stack [N, H, W, 1].
Tensor<float> raster_batch(const std::vector<const BinaryRaster*>& rs);

TrainResult pretrain_generator(const RunConfig& cfg, const TrainOptions& opt);
TrainResult pretrain_detector(const RunConfig& cfg, const TrainOptions& opt);
TrainResult joint_finetune(const RunConfig& cfg, const TrainOptions& opt);
TrainResult run_training(const RunConfig& cfg, const TrainOptions& opt);

// Model construction from checkpoints.
Generator<float> generator_from(const Checkpoint& c);
Detector<float> detector_from(const Checkpoint& c);

}  // namespace lmt
