// Copyright 2026  muquant authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// muquant/training.hpp
//
// Corpus segmentation, the self-supervised pre-training loop, the three
// downstream regimes (FE, FT1, FT2), pooled feature extraction and
// classification.

#ifndef MUQUANT_TRAINING_HPP_
#define MUQUANT_TRAINING_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "muquant/audio.hpp"
#include "muquant/checkpoint.hpp"
#include "muquant/model.hpp"
#include "muquant/optimizer.hpp"

namespace muquant {

// ---------------------------------------------------------------------------
// Segmentation

struct SegmentEntry {
  std::string source;
  double start_seconds = 0.0;
  double duration_seconds = 0.0;
};

struct SegmentManifest {
  double window_seconds = 20.0;
  double hop_seconds = 10.0;
  std::vector<SegmentEntry> entries;
};

void to_json(nlohmann::json& j, const SegmentManifest& m);
void from_json(const nlohmann::json& j, SegmentManifest& m);
void save_manifest(const std::filesystem::path& path, const SegmentManifest& manifest);
SegmentManifest load_manifest(const std::filesystem::path& path);

/// Number of full windows: max(0, floor((total - window) / hop) + 1).
std::size_t segment_count(std::size_t total_samples, std::size_t window_samples,
                          std::size_t hop_samples);

/// Splits every decodable WAV under `dir` (recursive, sorted by path) into
/// overlapping full windows. Unreadable files are skipped with a warning;
/// zero segments in total is an error.
SegmentManifest segment_corpus(const std::filesystem::path& dir, double window_seconds = 20.0,
                               double hop_seconds = 10.0);

/// Loads the audio of every manifest entry.
std::vector<Waveform> load_segments(const SegmentManifest& manifest);

// ---------------------------------------------------------------------------
// Configuration

struct TrainConfig {
  // Pre-training.
  double learning_rate = 5e-4;
  std::size_t batch_size = 8;
  std::size_t max_epochs = 50;
  ObjectiveSettings objective;
  std::size_t checkpoint_every = 0;  // epochs; 0 disables periodic checkpoints

  // Downstream.
  double backbone_learning_rate = 1e-5;
  double head_learning_rate = 1e-4;
  double fe_learning_rate = 1e-3;
  std::size_t patience = 10;
  double clip_seconds = 4.0;
  /// Stop once the epoch's training accuracy reaches this value (0 = off).
  double target_train_accuracy = 0.0;

  std::uint64_t seed = 0;
  std::size_t threads = 0;  // 0: worker_count()

  static TrainConfig paper();
  static TrainConfig desk();
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One line of the JSON-lines training log.
struct EpochRecord {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0;
  std::optional<double> accuracy;
  std::optional<double> perplexity;
};

nlohmann::json to_json_line(const EpochRecord& record);
void append_log(const std::filesystem::path& path, const EpochRecord& record);

// ---------------------------------------------------------------------------
// Pre-training

Checkpoint make_checkpoint(const Model<float>& model, nlohmann::json config);
Model<float> model_from_checkpoint(const Checkpoint& ckpt);
ModelConfig model_config_from_checkpoint(const Checkpoint& ckpt);

class Pretrainer {
 public:
  Pretrainer(std::vector<Waveform> segments, ModelConfig model_config, TrainConfig config);
  /// Continues from a checkpoint written by checkpoint(); segments must be the
  /// same as in the original run.
  Pretrainer(std::vector<Waveform> segments, const Checkpoint& resume);

  /// One optimizer step; returns the batch-mean total loss.
  double step();
  /// Runs until max_epochs, calling on_epoch after each completed epoch.
  std::vector<EpochRecord> run(const std::function<void(const EpochRecord&)>& on_epoch = {});

  Checkpoint checkpoint() const;
  const Model<float>& model() const { return model_; }
  const TrainConfig& config() const { return config_; }
  std::uint64_t global_step() const { return step_; }
  std::size_t steps_per_epoch() const;
  bool finished() const { return step_ >= steps_per_epoch() * config_.max_epochs; }

 private:
  std::vector<std::size_t> epoch_order(std::size_t epoch) const;

  std::vector<Waveform> segments_;
  TrainConfig config_;
  Model<float> model_;
  Adam optimizer_;
  std::uint64_t step_ = 0;

  // Running sums for the current epoch.
  double epoch_loss_ = 0.0;
  double epoch_accuracy_ = 0.0;
  double epoch_perplexity_ = 0.0;
  std::size_t epoch_items_ = 0;
};

/// Convenience wrapper: loads the manifest audio, trains, appends epoch
/// records to `log_path` (when non-empty) and writes periodic checkpoints
/// into `checkpoint_dir` (when non-empty).
Checkpoint pretrain(const SegmentManifest& manifest, const ModelConfig& model_config,
                    const TrainConfig& config, const std::filesystem::path& log_path = {},
                    const std::filesystem::path& checkpoint_dir = {});

// ---------------------------------------------------------------------------
// Downstream

enum class FinetuneMode { kFE, kFT1, kFT2 };

std::string mode_name(FinetuneMode mode);
FinetuneMode parse_mode(const std::string& name);

struct LabeledClip {
  std::string name;
  Waveform wave;
  std::size_t label = 0;
};

using LabeledDataset = std::vector<LabeledClip>;

/// Reads `dir`/labels.json ({"clips": [{"file", "pitch", "instrument"}]}) and
/// the referenced WAVs, labelling each clip for `task`.
LabeledDataset load_labeled_dataset(const std::filesystem::path& dir, Task task);
LabeledDataset labeled_from_synthetic(const std::vector<SyntheticClip>& clips, Task task);

struct FinetuneResult {
  Checkpoint best;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
};

/// Trains the head (and, per mode, the backbone) with cross-entropy; stops
/// when validation loss has not improved for `patience` epochs and returns
/// the best-validation checkpoint. Clips are center-cropped or zero-padded to
/// clip_seconds.
FinetuneResult finetune(const Checkpoint& pretrained, const LabeledDataset& train,
                        const LabeledDataset& validation, FinetuneMode mode,
                        const HeadConfig& head_config, const TrainConfig& config,
                        const std::function<void(const EpochRecord&)>& on_epoch = {});

Head<float> head_from_checkpoint(const Checkpoint& ckpt);

/// Time-averaged final-block features of the checkpoint's model.
std::vector<float> extract_features(const Checkpoint& ckpt, const Waveform& wave);
std::vector<float> extract_features(const Model<float>& model, const Waveform& wave);

struct Classification {
  std::size_t predicted = 0;
  std::vector<double> probabilities;
};

/// argmax of softmax(head(features)); the lowest class index wins ties.
Classification classify(const Model<float>& model, const Head<float>& head,
                        const Waveform& wave);
Classification classify(const Checkpoint& finetuned, const Waveform& wave);

}  // namespace muquant

#endif  // MUQUANT_TRAINING_HPP_
