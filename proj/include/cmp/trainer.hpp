#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "cmp/data.hpp"
#include "cmp/guidance.hpp"
#include "cmp/model.hpp"
#include "cmp/nn/optim.hpp"

namespace cmp {

struct SyntheticSpec {
  int corpus_size = 2000;
  int image_size = 64;
  std::uint64_t seed = 17;
};

struct TrainConfig {
  CmpArchConfig arch;
  nn::OptimizerConfig optimizer{0.1, 0.9, 1e-4, 6000};
  SamplingConfig sampling = SamplingConfig::desk_scale();
  std::optional<std::string> manifest;  // when empty the synthetic corpus is generated
  SyntheticSpec synthetic;
  // Probability that a training item keeps only a random non-empty subset of
  // its sampled guidance points.
  double sparse_guidance = 0.0;
  int batch_size = 8;
  int short_side = 72;
  int crop = 64;
  std::int64_t checkpoint_every = 1000;  // 0 disables periodic checkpoints
  std::int64_t log_every = 20;
  std::uint64_t seed = 1;
  std::string output_dir = "runs/desk";

  void validate() const;

  // 2000 synthetic 64x64 scenes, C = 19, B = 8, strides {1, 2, 4}, batch 8, I = 6000,
  // half of the items trained with thinned guidance.
  static TrainConfig desk();
  // 416 -> 384 crops, K = 81, G = 200, B = 48, encoder width 256.
  static TrainConfig paper_scale();
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
TrainConfig load_train_config(const std::string& path);

struct TrainMetrics {
  std::int64_t iteration = 0;
  double loss = 0.0;  // loss_x + loss_y
  double loss_x = 0.0;
  double loss_y = 0.0;
  double accuracy_x = 0.0;
  double accuracy_y = 0.0;
  double epe = 0.0;
  double lr = 0.0;
};

void to_json(nlohmann::json& j, const TrainMetrics& m);
void from_json(const nlohmann::json& j, TrainMetrics& m);

// Items split by `is_held_out`.
struct Dataset {
  std::vector<ImageFlowPair> train;
  std::vector<ImageFlowPair> held_out;
};

Dataset load_dataset(const TrainConfig& cfg);

struct TrainOptions {
  std::optional<std::string> resume;        // checkpoint to continue from
  std::optional<std::int64_t> stop_after;   // stop once this many iterations are done
  bool write_files = true;                  // metrics.jsonl and checkpoints under output_dir
  std::function<void(const TrainMetrics&)> on_log;
};

struct TrainResult {
  CmpModel model;
  std::vector<TrainMetrics> log;
};

// Runs iterations [start, I) where start is 0 or the resumed iteration.
TrainResult train(const TrainConfig& cfg, const Dataset& data, const TrainOptions& options = {});

// Checkpoint file name for iteration t under the output directory.
std::string checkpoint_path(const TrainConfig& cfg, std::int64_t iteration);
std::string final_checkpoint_path(const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Evaluation

struct EvalRow {
  std::string label;
  double mean_points = 0.0;
  double accuracy_x = 0.0;
  double accuracy_y = 0.0;
  double epe = 0.0;
};

struct EvalReport {
  EvalRow guided;                 // sampling config as given
  EvalRow zero_guidance;          // empty guidance set
  std::vector<EvalRow> sweep;     // K / G variations
};

void to_json(nlohmann::json& j, const EvalRow& r);
void to_json(nlohmann::json& j, const EvalReport& r);

// Guidance for every item is sampled from its own ground-truth flow.
EvalRow evaluate_with(const CmpModel& model, std::span<const ImageFlowPair> items,
                      const std::function<GuidanceSet(const ImageFlowPair&)>& guidance, const std::string& label);

EvalReport evaluate(const CmpModel& model, std::span<const ImageFlowPair> items, const SamplingConfig& sampling,
                    bool sweep_guidance);

// Sweep configurations scaled from `base`: denser to sparser guidance.
std::vector<SamplingConfig> guidance_sweep_configs(const SamplingConfig& base);

// ---------------------------------------------------------------------------
// Propagation-stride ablation

struct AblationRow {
  std::vector<int> strides;
  std::size_t parameters = 0;
  double seconds = 0.0;
  double final_loss = 0.0;
  EvalRow held_out;
};

// Trains one model per stride set for `iterations` steps (files are not
// written) and evaluates each on the held-out split.
std::vector<AblationRow> run_stride_ablation(const TrainConfig& base, const Dataset& data,
                                             std::span<const std::vector<int>> stride_sets, std::int64_t iterations);

std::string format_ablation_table(std::span<const AblationRow> rows);

}  // namespace cmp
