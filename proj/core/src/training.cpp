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

#include "muquant/training.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "muquant/log.hpp"
#include "muquant/ops.hpp"
#include "muquant/parallel.hpp"

namespace muquant {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Segmentation

void to_json(nlohmann::json& j, const SegmentManifest& m) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : m.entries) {
    entries.push_back({{"source", e.source},
                       {"start_seconds", e.start_seconds},
                       {"duration_seconds", e.duration_seconds}});
  }
  j = {{"window_seconds", m.window_seconds}, {"hop_seconds", m.hop_seconds}, {"entries", entries}};
}

void from_json(const nlohmann::json& j, SegmentManifest& m) {
  m.window_seconds = j.at("window_seconds").get<double>();
  m.hop_seconds = j.at("hop_seconds").get<double>();
  m.entries.clear();
  for (const auto& e : j.at("entries")) {
    m.entries.push_back({e.at("source").get<std::string>(), e.at("start_seconds").get<double>(),
                         e.at("duration_seconds").get<double>()});
  }
}

void save_manifest(const fs::path& path, const SegmentManifest& manifest) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
  out << nlohmann::json(manifest).dump(2) << '\n';
}

SegmentManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  return nlohmann::json::parse(in).get<SegmentManifest>();
}

std::size_t segment_count(std::size_t total_samples, std::size_t window_samples,
                          std::size_t hop_samples) {
  if (window_samples == 0 || hop_samples == 0) {
    throw std::invalid_argument("segment_count: window and hop must be positive");
  }
  if (total_samples < window_samples) return 0;
  return (total_samples - window_samples) / hop_samples + 1;
}

namespace {

bool is_wav(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".wav";
}

std::size_t seconds_to_samples(double seconds, int rate) {
  return static_cast<std::size_t>(std::llround(seconds * rate));
}

}  // namespace

SegmentManifest segment_corpus(const fs::path& dir, double window_seconds, double hop_seconds) {
  if (!(window_seconds > 0) || !(hop_seconds > 0)) {
    throw std::invalid_argument("segment_corpus: window and hop must be positive");
  }
  if (!fs::is_directory(dir)) {
    throw std::invalid_argument("segment_corpus: not a directory: " + dir.string());
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && is_wav(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  SegmentManifest manifest;
  manifest.window_seconds = window_seconds;
  manifest.hop_seconds = hop_seconds;
  for (const auto& file : files) {
    std::size_t frames = 0;
    int rate = 0;
    try {
      std::tie(frames, rate) = probe_wav(file);
    } catch (const WavError& e) {
      log_warning(std::string("skipping unreadable file: ") + e.what());
      continue;
    }
    const std::size_t window = seconds_to_samples(window_seconds, rate);
    const std::size_t hop = seconds_to_samples(hop_seconds, rate);
    const std::size_t count = segment_count(frames, window, hop);
    for (std::size_t k = 0; k < count; ++k) {
      manifest.entries.push_back(
          {file.string(), static_cast<double>(k * hop) / rate, window_seconds});
    }
  }
  if (manifest.entries.empty()) {
    throw std::runtime_error("segment_corpus: no full " + std::to_string(window_seconds) +
                             " s windows found under " + dir.string());
  }
  return manifest;
}

std::vector<Waveform> load_segments(const SegmentManifest& manifest) {
  std::map<std::string, Waveform> cache;
  std::vector<Waveform> out;
  out.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    auto it = cache.find(e.source);
    if (it == cache.end()) it = cache.emplace(e.source, read_wav(e.source)).first;
    const Waveform& wave = it->second;
    const std::size_t start = seconds_to_samples(e.start_seconds, wave.sample_rate);
    const std::size_t count = seconds_to_samples(e.duration_seconds, wave.sample_rate);
    if (start + count > wave.samples.size()) {
      throw std::runtime_error("manifest entry exceeds source length: " + e.source);
    }
    out.push_back(crop(wave, start, count));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Configuration

TrainConfig TrainConfig::paper() {
  TrainConfig c;
  c.objective.num_negatives = 100;
  return c;
}

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.learning_rate = 2e-3;
  c.objective.num_negatives = 10;
  return c;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0) || !(backbone_learning_rate > 0) || !(head_learning_rate > 0) ||
      !(fe_learning_rate > 0)) {
    throw std::invalid_argument("train: learning rates must be > 0");
  }
  if (batch_size == 0) throw std::invalid_argument("train: batch_size must be >= 1");
  if (patience == 0) throw std::invalid_argument("train: patience must be >= 1");
  if (!(clip_seconds > 0)) throw std::invalid_argument("train: clip_seconds must be > 0");
  if (!(objective.kappa > 0)) throw std::invalid_argument("train: kappa must be > 0");
  if (objective.mask_span == 0 || objective.num_negatives == 0) {
    throw std::invalid_argument("train: mask_span and num_negatives must be >= 1");
  }
  if (objective.mask_prob < 0 || objective.mask_prob > 1) {
    throw std::invalid_argument("train: mask_prob must be in [0, 1]");
  }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"learning_rate", c.learning_rate},
       {"batch_size", c.batch_size},
       {"max_epochs", c.max_epochs},
       {"mask_prob", c.objective.mask_prob},
       {"mask_span", c.objective.mask_span},
       {"num_negatives", c.objective.num_negatives},
       {"kappa", c.objective.kappa},
       {"checkpoint_every", c.checkpoint_every},
       {"backbone_learning_rate", c.backbone_learning_rate},
       {"head_learning_rate", c.head_learning_rate},
       {"fe_learning_rate", c.fe_learning_rate},
       {"patience", c.patience},
       {"clip_seconds", c.clip_seconds},
       {"target_train_accuracy", c.target_train_accuracy},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.learning_rate = j.at("learning_rate").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.max_epochs = j.at("max_epochs").get<std::size_t>();
  c.objective.mask_prob = j.at("mask_prob").get<double>();
  c.objective.mask_span = j.at("mask_span").get<std::size_t>();
  c.objective.num_negatives = j.at("num_negatives").get<std::size_t>();
  c.objective.kappa = j.at("kappa").get<double>();
  c.checkpoint_every = j.at("checkpoint_every").get<std::size_t>();
  c.backbone_learning_rate = j.at("backbone_learning_rate").get<double>();
  c.head_learning_rate = j.at("head_learning_rate").get<double>();
  c.fe_learning_rate = j.at("fe_learning_rate").get<double>();
  c.patience = j.at("patience").get<std::size_t>();
  c.clip_seconds = j.at("clip_seconds").get<double>();
  c.target_train_accuracy = j.at("target_train_accuracy").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
}

nlohmann::json to_json_line(const EpochRecord& r) {
  nlohmann::json j = {{"epoch", r.epoch}, {"split", r.split}, {"loss", r.loss}};
  j["accuracy"] = r.accuracy ? nlohmann::json(*r.accuracy) : nlohmann::json(nullptr);
  j["perplexity"] = r.perplexity ? nlohmann::json(*r.perplexity) : nlohmann::json(nullptr);
  return j;
}

void append_log(const fs::path& path, const EpochRecord& record) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot append to log " + path.string());
  out << to_json_line(record).dump() << '\n';
}

// ---------------------------------------------------------------------------
// Checkpoint <-> model

Checkpoint make_checkpoint(const Model<float>& model, nlohmann::json config) {
  Checkpoint ckpt;
  config["model"] = model.config();
  ckpt.config = std::move(config);
  for (const auto& p : model.parameters()) {
    const auto d = p.tensor.data();
    ckpt.put({p.name, p.tensor.shape(), std::vector<float>(d.begin(), d.end())});
  }
  return ckpt;
}

ModelConfig model_config_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.config.contains("model")) throw CheckpointError("checkpoint: missing model config");
  return ckpt.config.at("model").get<ModelConfig>();
}

Model<float> model_from_checkpoint(const Checkpoint& ckpt) {
  Model<float> model(model_config_from_checkpoint(ckpt), 0);
  model.load_values(ckpt.values());
  return model;
}

namespace {

std::vector<std::vector<float>> grads_of(const ParamList<float>& params) {
  std::vector<std::vector<float>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.tensor.grad());
  return out;
}

void add_into(std::vector<std::vector<float>>& acc, const std::vector<std::vector<float>>& g) {
  if (acc.empty()) {
    acc = g;
    return;
  }
  for (std::size_t i = 0; i < acc.size(); ++i) {
    for (std::size_t k = 0; k < acc[i].size(); ++k) acc[i][k] += g[i][k];
  }
}

void scale_all(std::vector<std::vector<float>>& acc, float factor) {
  for (auto& g : acc) {
    for (auto& v : g) v *= factor;
  }
}

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(i)]);
  return order;
}

std::size_t resolve_threads(const TrainConfig& c) {
  return c.threads ? c.threads : worker_count();
}

}  // namespace

// ---------------------------------------------------------------------------
// Pre-training

Pretrainer::Pretrainer(std::vector<Waveform> segments, ModelConfig model_config,
                       TrainConfig config)
    : segments_(std::move(segments)), config_(std::move(config)) {
  config_.validate();
  if (segments_.empty()) throw std::invalid_argument("pretrain: empty manifest");
  model_ = Model<float>(std::move(model_config), derive_seed(config_.seed, {1}));
}

Pretrainer::Pretrainer(std::vector<Waveform> segments, const Checkpoint& resume)
    : segments_(std::move(segments)) {
  if (segments_.empty()) throw std::invalid_argument("pretrain: empty manifest");
  if (resume.config.value("kind", std::string()) != "pretrain") {
    throw CheckpointError("resume: checkpoint is not a pre-training checkpoint");
  }
  config_ = resume.config.at("train").get<TrainConfig>();
  model_ = model_from_checkpoint(resume);
  const auto& state = resume.config.at("state");
  step_ = state.at("step").get<std::uint64_t>();
  epoch_loss_ = state.at("epoch_loss").get<double>();
  epoch_accuracy_ = state.at("epoch_accuracy").get<double>();
  epoch_perplexity_ = state.at("epoch_perplexity").get<double>();
  epoch_items_ = state.at("epoch_items").get<std::size_t>();
  optimizer_.set_steps(step_);
  for (const auto& p : model_.parameters()) {
    const auto* m = resume.find("adam.m." + p.name);
    const auto* v = resume.find("adam.v." + p.name);
    if (m && v) optimizer_.moments()[p.name] = {m->values, v->values};
  }
}

std::size_t Pretrainer::steps_per_epoch() const {
  return (segments_.size() + config_.batch_size - 1) / config_.batch_size;
}

std::vector<std::size_t> Pretrainer::epoch_order(std::size_t epoch) const {
  return permutation(segments_.size(), derive_seed(config_.seed, {100, epoch}));
}

double Pretrainer::step() {
  const std::size_t spe = steps_per_epoch();
  const std::size_t epoch = step_ / spe;
  const std::size_t offset = step_ % spe;
  const auto order = epoch_order(epoch);
  const std::size_t begin = offset * config_.batch_size;
  const std::size_t end = std::min(order.size(), begin + config_.batch_size);
  const std::size_t count = end - begin;
  const float tau = static_cast<float>(model_.config().quantizer.temperature_at(step_));

  struct ItemResult {
    std::vector<std::vector<float>> grads;
    double loss = 0, accuracy = 0, perplexity = 0;
    std::uint64_t seed = 0;
  };
  std::vector<ItemResult> results(count);
  parallel_for(count, resolve_threads(config_), [&](std::size_t i) {
    const Model<float> local = model_.clone();
    auto& r = results[i];
    r.seed = derive_seed(config_.seed, {200, step_, i});
    auto fwd = local.pretrain_forward(segments_[order[begin + i]], config_.objective, tau, r.seed);
    r.loss = fwd.loss.total_value();
    r.accuracy = fwd.loss.accuracy;
    double perp = 0;
    for (double p : fwd.perplexity) perp += p;
    r.perplexity = perp / static_cast<double>(fwd.perplexity.size());
    if (!std::isfinite(r.loss)) return;
    backward(fwd.loss.total);
    r.grads = grads_of(local.parameters());
  });

  std::vector<std::vector<float>> grads;
  double loss = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const auto& r = results[i];
    if (!std::isfinite(r.loss)) {
      std::ostringstream msg;
      msg << "non-finite loss at step " << step_ << " (epoch " << epoch << ", batch " << offset
          << ", segment " << order[begin + i] << ", seed " << r.seed << ")";
      throw TrainingError(msg.str());
    }
    add_into(grads, r.grads);
    loss += r.loss;
    epoch_loss_ += r.loss;
    epoch_accuracy_ += r.accuracy;
    epoch_perplexity_ += r.perplexity;
    ++epoch_items_;
  }
  scale_all(grads, 1.0f / static_cast<float>(count));
  const auto params = model_.parameters();
  optimizer_.step(params, grads, std::vector<double>(params.size(), config_.learning_rate));
  ++step_;
  return loss / static_cast<double>(count);
}

std::vector<EpochRecord> Pretrainer::run(const std::function<void(const EpochRecord&)>& on_epoch) {
  std::vector<EpochRecord> records;
  const std::size_t spe = steps_per_epoch();
  while (!finished()) {
    step();
    if (step_ % spe == 0) {
      const double n = static_cast<double>(epoch_items_);
      EpochRecord rec{step_ / spe, "train", epoch_loss_ / n, epoch_accuracy_ / n,
                      epoch_perplexity_ / n};
      epoch_loss_ = epoch_accuracy_ = epoch_perplexity_ = 0;
      epoch_items_ = 0;
      records.push_back(rec);
      if (on_epoch) on_epoch(rec);
    }
  }
  return records;
}

Checkpoint Pretrainer::checkpoint() const {
  nlohmann::json config = {{"kind", "pretrain"}, {"train", config_}};
  config["state"] = {{"step", step_},
                     {"epoch", step_ / steps_per_epoch()},
                     {"epoch_loss", epoch_loss_},
                     {"epoch_accuracy", epoch_accuracy_},
                     {"epoch_perplexity", epoch_perplexity_},
                     {"epoch_items", epoch_items_}};
  Checkpoint ckpt = make_checkpoint(model_, std::move(config));
  for (const auto& p : model_.parameters()) {
    auto it = optimizer_.moments().find(p.name);
    if (it == optimizer_.moments().end()) continue;
    ckpt.put({"adam.m." + p.name, p.tensor.shape(), it->second.m});
    ckpt.put({"adam.v." + p.name, p.tensor.shape(), it->second.v});
  }
  return ckpt;
}

Checkpoint pretrain(const SegmentManifest& manifest, const ModelConfig& model_config,
                    const TrainConfig& config, const fs::path& log_path,
                    const fs::path& checkpoint_dir) {
  if (manifest.entries.empty()) throw std::invalid_argument("pretrain: empty manifest");
  Pretrainer trainer(load_segments(manifest), model_config, config);
  trainer.run([&](const EpochRecord& rec) {
    if (!log_path.empty()) append_log(log_path, rec);
    log_info("pretrain epoch " + std::to_string(rec.epoch) + " loss " + std::to_string(rec.loss) +
             " perplexity " + std::to_string(rec.perplexity.value_or(0)));
    if (!checkpoint_dir.empty() && config.checkpoint_every &&
        rec.epoch % config.checkpoint_every == 0) {
      save_checkpoint(checkpoint_dir / ("epoch" + std::to_string(rec.epoch) + ".mqw"),
                      trainer.checkpoint());
    }
  });
  return trainer.checkpoint();
}

// ---------------------------------------------------------------------------
// Downstream

std::string mode_name(FinetuneMode mode) {
  switch (mode) {
    case FinetuneMode::kFE: return "FE";
    case FinetuneMode::kFT1: return "FT1";
    case FinetuneMode::kFT2: return "FT2";
  }
  return "?";
}

FinetuneMode parse_mode(const std::string& name) {
  if (name == "FE" || name == "fe") return FinetuneMode::kFE;
  if (name == "FT1" || name == "ft1") return FinetuneMode::kFT1;
  if (name == "FT2" || name == "ft2") return FinetuneMode::kFT2;
  throw std::invalid_argument("unknown finetuning mode '" + name + "' (expected FE|FT1|FT2)");
}

LabeledDataset load_labeled_dataset(const fs::path& dir, Task task) {
  std::ifstream in(dir / "labels.json");
  if (!in) throw std::runtime_error("cannot open " + (dir / "labels.json").string());
  const auto labels = nlohmann::json::parse(in);
  LabeledDataset out;
  for (const auto& c : labels.at("clips")) {
    LabeledClip clip;
    clip.name = c.at("file").get<std::string>();
    clip.wave = read_wav(dir / clip.name);
    const auto key = task == Task::kPitch ? "pitch" : "instrument";
    const auto value = c.at(key).get<long long>();
    if (value < 0) throw std::invalid_argument("negative label in " + clip.name);
    clip.label = static_cast<std::size_t>(value);
    out.push_back(std::move(clip));
  }
  return out;
}

LabeledDataset labeled_from_synthetic(const std::vector<SyntheticClip>& clips, Task task) {
  LabeledDataset out;
  for (const auto& c : clips) {
    out.push_back({c.name, c.wave,
                   static_cast<std::size_t>(task == Task::kPitch ? c.midi : c.timbre)});
  }
  return out;
}

Head<float> head_from_checkpoint(const Checkpoint& ckpt) {
  const auto config = ckpt.config.at("head").get<HeadConfig>();
  const auto& w = ckpt.at("head.weight");
  Rng rng(0);
  Head<float> head(config, w.shape.at(0), rng);
  head.load_values(ckpt.values("head."));
  return head;
}

namespace {

struct ItemOutcome {
  std::vector<std::vector<float>> grads;
  double loss = 0;
  bool correct = false;
};

std::size_t argmax_first(std::span<const float> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

FinetuneResult finetune(const Checkpoint& pretrained, const LabeledDataset& train,
                        const LabeledDataset& validation, FinetuneMode mode,
                        const HeadConfig& head_config, const TrainConfig& config,
                        const std::function<void(const EpochRecord&)>& on_epoch) {
  config.validate();
  if (train.empty()) throw std::invalid_argument("finetune: empty training set");
  for (const auto* set : {&train, &validation}) {
    for (const auto& clip : *set) {
      if (clip.label >= head_config.num_classes) {
        throw std::invalid_argument("finetune: label " + std::to_string(clip.label) + " of '" +
                                    clip.name + "' is out of range for " +
                                    std::to_string(head_config.num_classes) + " classes");
      }
    }
  }

  Model<float> model = model_from_checkpoint(pretrained);
  Rng head_rng(derive_seed(config.seed, {300}));
  Head<float> head(head_config, model.config().context.model_dim, head_rng);
  const std::size_t clip_samples = static_cast<std::size_t>(
      std::llround(config.clip_seconds * model.config().encoder.sample_rate));
  const std::size_t workers = resolve_threads(config);

  auto prepare = [&](const LabeledDataset& set) {
    std::vector<Waveform> waves;
    for (const auto& clip : set) waves.push_back(center_crop(clip.wave, clip_samples));
    return waves;
  };
  const auto train_waves = prepare(train);
  const auto val_waves = prepare(validation);

  // Frozen parts are evaluated once: pooled features for FE, encoder
  // outputs for FT2.
  auto cache_inputs = [&](const std::vector<Waveform>& waves) {
    std::vector<Tensor<float>> cache(waves.size());
    if (mode == FinetuneMode::kFT1) return cache;
    NoGradGuard guard;
    parallel_for(waves.size(), workers, [&](std::size_t i) {
      cache[i] = mode == FinetuneMode::kFE ? model.pooled_features(waves[i])
                                           : model.encoder().encode(waves[i]).values;
    });
    return cache;
  };
  const auto train_cache = cache_inputs(train_waves);
  const auto val_cache = cache_inputs(val_waves);

  // Trainable set per mode; everything else keeps a zero learning rate.
  ParamList<float> params = model.parameters();
  std::vector<double> rates;
  for (const auto& p : params) {
    const bool encoder = p.name.rfind("encoder.", 0) == 0;
    const bool context = p.name.rfind("context.", 0) == 0;
    double lr = 0.0;
    if (mode == FinetuneMode::kFT1 && (encoder || context)) lr = config.backbone_learning_rate;
    if (mode == FinetuneMode::kFT2 && context) lr = config.backbone_learning_rate;
    rates.push_back(lr);
  }
  const std::size_t model_param_count = params.size();
  for (const auto& p : head.parameters()) {
    params.push_back(p);
    rates.push_back(mode == FinetuneMode::kFE ? config.fe_learning_rate : config.head_learning_rate);
  }

  auto forward = [&](const Model<float>& m, const Head<float>& h, std::size_t i,
                     const std::vector<Waveform>& waves,
                     const std::vector<Tensor<float>>& cache) -> Tensor<float> {
    Tensor<float> features;
    switch (mode) {
      case FinetuneMode::kFE: features = cache[i]; break;
      case FinetuneMode::kFT2:
        features = mean_over_axis(m.context().contextualize(cache[i], {}, false).values, 0);
        break;
      case FinetuneMode::kFT1: features = m.pooled_features(waves[i]); break;
    }
    return h.logits(features);
  };

  auto evaluate = [&](const std::vector<Waveform>& waves, const std::vector<Tensor<float>>& cache,
                      const LabeledDataset& set) {
    std::vector<double> losses(set.size());
    std::vector<char> correct(set.size());
    NoGradGuard guard;
    parallel_for(set.size(), workers, [&](std::size_t i) {
      auto logits = forward(model, head, i, waves, cache);
      const std::size_t label = set[i].label;
      losses[i] = cross_entropy(logits, std::span<const std::size_t>(&label, 1)).item();
      correct[i] = argmax_first(logits.data()) == label;
    });
    double loss = 0, acc = 0;
    for (std::size_t i = 0; i < set.size(); ++i) {
      loss += losses[i];
      acc += correct[i];
    }
    const double n = static_cast<double>(std::max<std::size_t>(1, set.size()));
    return std::pair{loss / n, acc / n};
  };

  Adam optimizer;
  FinetuneResult result;
  double best_loss = std::numeric_limits<double>::infinity();
  std::map<std::string, std::vector<float>> best_values;
  std::size_t since_best = 0;

  auto snapshot = [&] {
    auto values = model.float_values();
    for (const auto& p : head.parameters()) {
      const auto d = p.tensor.data();
      values[p.name] = std::vector<float>(d.begin(), d.end());
    }
    return values;
  };

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto order = permutation(train.size(), derive_seed(config.seed, {400, epoch}));
    double epoch_loss = 0, epoch_correct = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, order.size() - begin);
      std::vector<ItemOutcome> outcomes(count);
      parallel_for(count, workers, [&](std::size_t k) {
        const std::size_t i = order[begin + k];
        Model<float> local = mode == FinetuneMode::kFE ? model : model.clone();
        if (mode != FinetuneMode::kFE) {
          std::size_t idx = 0;
          for (const auto& p : local.parameters()) {
            auto t = p.tensor;
            t.set_requires_grad(rates[idx++] > 0);
          }
        }
        const Head<float> local_head = head.clone();
        auto logits = forward(local, local_head, i, train_waves, train_cache);
        const std::size_t label = train[i].label;
        auto loss = cross_entropy(logits, std::span<const std::size_t>(&label, 1));
        auto& out = outcomes[k];
        out.loss = loss.item();
        out.correct = argmax_first(logits.data()) == label;
        backward(loss);
        if (mode == FinetuneMode::kFE) {
          out.grads.assign(model_param_count, {});
          for (std::size_t p = 0; p < model_param_count; ++p) {
            out.grads[p].assign(params[p].tensor.size(), 0.0f);
          }
        } else {
          out.grads = grads_of(local.parameters());
        }
        for (const auto& p : local_head.parameters()) out.grads.push_back(p.tensor.grad());
      });
      std::vector<std::vector<float>> grads;
      for (const auto& o : outcomes) {
        if (!std::isfinite(o.loss)) throw TrainingError("finetune: non-finite loss");
        add_into(grads, o.grads);
        epoch_loss += o.loss;
        epoch_correct += o.correct;
      }
      scale_all(grads, 1.0f / static_cast<float>(count));
      optimizer.step(params, grads, rates);
    }

    const double n = static_cast<double>(train.size());
    EpochRecord train_rec{epoch, "train", epoch_loss / n, epoch_correct / n, std::nullopt};
    result.history.push_back(train_rec);
    if (on_epoch) on_epoch(train_rec);

    const auto& val_set = validation.empty() ? train : validation;
    const auto& val_w = validation.empty() ? train_waves : val_waves;
    const auto& val_c = validation.empty() ? train_cache : val_cache;
    const auto [val_loss, val_acc] = evaluate(val_w, val_c, val_set);
    EpochRecord val_rec{epoch, "val", val_loss, val_acc, std::nullopt};
    result.history.push_back(val_rec);
    if (on_epoch) on_epoch(val_rec);
    result.epochs_run = epoch;

    if (val_loss < best_loss) {
      best_loss = val_loss;
      best_values = snapshot();
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
    if (config.target_train_accuracy > 0 && train_rec.accuracy >= config.target_train_accuracy) {
      break;
    }
  }

  if (best_values.empty()) best_values = snapshot();
  model.load_values(best_values);
  head.load_values(best_values);
  nlohmann::json ckpt_config = {{"kind", "finetune"},
                                {"mode", mode_name(mode)},
                                {"head", head_config},
                                {"train", config},
                                {"state", {{"best_epoch", result.best_epoch},
                                           {"epochs_run", result.epochs_run}}}};
  result.best = make_checkpoint(model, std::move(ckpt_config));
  for (const auto& p : head.parameters()) {
    const auto d = p.tensor.data();
    result.best.put({p.name, p.tensor.shape(), std::vector<float>(d.begin(), d.end())});
  }
  return result;
}

std::vector<float> extract_features(const Model<float>& model, const Waveform& wave) {
  NoGradGuard guard;
  const auto pooled = model.pooled_features(wave);
  const auto f = pooled.data();
  return {f.begin(), f.end()};
}

std::vector<float> extract_features(const Checkpoint& ckpt, const Waveform& wave) {
  return extract_features(model_from_checkpoint(ckpt), wave);
}

Classification classify(const Model<float>& model, const Head<float>& head, const Waveform& wave) {
  if (head.feature_dim() != model.config().context.model_dim) {
    throw ShapeError("classify", "head feature dim", model.config().context.model_dim,
                     head.feature_dim());
  }
  NoGradGuard guard;
  const auto out_logits = head.logits(model.pooled_features(wave));
  const auto logits = out_logits.data();
  Classification out;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double total = 0;
  for (float l : logits) {
    out.probabilities.push_back(std::exp(double(l) - mx));
    total += out.probabilities.back();
  }
  for (auto& p : out.probabilities) p /= total;
  out.predicted = argmax_first(logits);
  return out;
}

Classification classify(const Checkpoint& finetuned, const Waveform& wave) {
  if (!finetuned.config.contains("head")) {
    throw CheckpointError("classify: checkpoint has no classification head");
  }
  return classify(model_from_checkpoint(finetuned), head_from_checkpoint(finetuned), wave);
}

}  // namespace muquant
