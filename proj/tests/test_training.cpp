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

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <map>

#include "gradient_suite.hpp"
#include "muquant/audio.hpp"
#include "muquant/checkpoint.hpp"
#include "muquant/log.hpp"
#include "muquant/ops.hpp"
#include "muquant/optimizer.hpp"
#include "muquant/training.hpp"
#include "test_util.hpp"

using namespace muquant;
using muquant::testing::read_bytes;
using muquant::testing::TempDir;
using muquant::testing::test_tone;

namespace {

// Direct enumeration of window starts.
std::size_t enumerate_windows(std::size_t total, std::size_t window, std::size_t hop) {
  std::size_t n = 0;
  for (std::size_t start = 0; start + window <= total; start += hop) ++n;
  return n;
}

Waveform silence(double seconds) {
  Waveform w;
  w.samples.assign(static_cast<std::size_t>(seconds * 16000), 0.0f);
  return w;
}

std::vector<Waveform> short_segments(std::size_t count, std::uint64_t seed) {
  std::vector<Waveform> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(test_tone(8000, derive_seed(seed, {i})));
  return out;
}

TrainConfig small_train_config() {
  TrainConfig c = TrainConfig::desk();
  c.batch_size = 2;
  c.max_epochs = 2;
  c.seed = 11;
  c.objective.mask_prob = 0.2;
  c.objective.mask_span = 4;
  c.objective.num_negatives = 5;
  return c;
}

std::map<std::string, std::vector<float>> snapshot(const Checkpoint& c) { return c.values(); }

bool same_prefix(const std::map<std::string, std::vector<float>>& a,
                 const std::map<std::string, std::vector<float>>& b, const std::string& prefix) {
  for (const auto& [name, v] : a) {
    if (name.rfind(prefix, 0) != 0) continue;
    if (b.at(name) != v) return false;
  }
  return true;
}

bool all_changed(const std::map<std::string, std::vector<float>>& a,
                 const std::map<std::string, std::vector<float>>& b, const std::string& prefix) {
  bool any = false;
  for (const auto& [name, v] : a) {
    if (name.rfind(prefix, 0) != 0) continue;
    any = true;
    if (b.at(name) == v) return false;
  }
  return any;
}

}  // namespace

TEST_CASE("segment count formula") {
  CHECK(segment_count(34 * 16000, 20 * 16000, 10 * 16000) == 2);
  CHECK(segment_count(65 * 16000, 20 * 16000, 10 * 16000) == 5);
  CHECK(segment_count(19 * 16000, 20 * 16000, 10 * 16000) == 0);
  CHECK(segment_count(20 * 16000, 20 * 16000, 10 * 16000) == 1);
  Rng rng(1);
  for (int i = 0; i < 2000; ++i) {
    const std::size_t total = rng.uniform_int(2000000);
    const std::size_t window = 1 + rng.uniform_int(400000);
    const std::size_t hop = 1 + rng.uniform_int(200000);
    CHECK(segment_count(total, window, hop) == enumerate_windows(total, window, hop));
  }
  CHECK_THROWS(segment_count(10, 0, 1));
}

TEST_CASE("segment_corpus on real files") {
  TempDir dir("segment");
  std::filesystem::create_directories(dir / "sub");
  write_wav(dir / "b.wav", silence(34));
  write_wav(dir / "sub" / "a.wav", silence(65));
  write_wav(dir / "c.wav", silence(19));
  std::ofstream(dir / "broken.wav") << "not a wav file";
  set_log_quiet(true);
  const auto before = warning_count();
  const auto m = segment_corpus(dir.path(), 20, 10);
  CHECK(warning_count() == before + 1);
  set_log_quiet(false);
  REQUIRE(m.entries.size() == 7);
  CHECK(m.entries[0].source == (dir / "b.wav").string());
  CHECK(m.entries[1].start_seconds == 10.0);
  CHECK(m.entries[2].source == (dir / "sub" / "a.wav").string());
  CHECK(m.entries[6].start_seconds == 40.0);
  for (const auto& e : m.entries) CHECK(e.duration_seconds == 20.0);

  save_manifest(dir / "m.json", m);
  const auto loaded = load_manifest(dir / "m.json");
  CHECK(loaded.entries.size() == 7);
  const auto segs = load_segments(loaded);
  CHECK(segs[0].samples.size() == 320000);

  TempDir empty("segment_empty");
  write_wav(empty / "short.wav", silence(3));
  CHECK_THROWS(segment_corpus(empty.path(), 20, 10));
}

TEST_CASE("checkpoint save-load-save is byte identical and rejects bad input") {
  Model<float> model(ModelConfig::desk(), 3);
  Checkpoint ckpt = make_checkpoint(model, {{"kind", "pretrain"}});
  const std::string bytes = serialize_checkpoint(ckpt);
  const Checkpoint back = deserialize_checkpoint(bytes);
  CHECK(serialize_checkpoint(back) == bytes);

  TempDir dir("ckpt");
  save_checkpoint(dir / "a.mqw", ckpt);
  save_checkpoint(dir / "b.mqw", load_checkpoint(dir / "a.mqw"));
  CHECK(read_bytes(dir / "a.mqw") == read_bytes(dir / "b.mqw"));
  CHECK(bytes.substr(0, 4) == "MQW1");

  CHECK_THROWS_AS(deserialize_checkpoint(bytes + "x"), CheckpointError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), CheckpointError);
  CHECK_THROWS_AS(deserialize_checkpoint("XXXX" + bytes.substr(4)), CheckpointError);

  const auto restored = model_from_checkpoint(back);
  CHECK(restored.float_values() == model.float_values());
}

TEST_CASE("pretrainer resume reproduces the next step bit-exactly") {
  const auto segs = short_segments(5, 1);
  Pretrainer a(segs, ModelConfig::desk(), small_train_config());
  a.step();
  a.step();
  const Checkpoint mid = deserialize_checkpoint(serialize_checkpoint(a.checkpoint()));
  const double next = a.step();
  const double after = a.step();

  Pretrainer b(segs, mid);
  CHECK(b.global_step() == 2);
  CHECK(b.step() == next);
  CHECK(b.step() == after);
  CHECK(b.model().float_values() == a.model().float_values());
}

TEST_CASE("pretraining is deterministic and logs every epoch") {
  const auto segs = short_segments(4, 2);
  std::vector<EpochRecord> ra, rb;
  Pretrainer a(segs, ModelConfig::desk(), small_train_config());
  Pretrainer b(segs, ModelConfig::desk(), small_train_config());
  a.run([&](const EpochRecord& r) { ra.push_back(r); });
  b.run([&](const EpochRecord& r) { rb.push_back(r); });
  REQUIRE(ra.size() == 2);
  CHECK(serialize_checkpoint(a.checkpoint()) == serialize_checkpoint(b.checkpoint()));
  for (std::size_t i = 0; i < ra.size(); ++i) {
    CHECK(to_json_line(ra[i]).dump() == to_json_line(rb[i]).dump());
    CHECK(ra[i].perplexity.value() >= 1.0);
    CHECK(ra[i].perplexity.value() <= 16.0);
  }
}

TEST_CASE("non-finite loss aborts with batch and seed") {
  std::vector<Waveform> segs = short_segments(2, 3);
  segs[1].samples[100] = std::numeric_limits<float>::quiet_NaN();
  TrainConfig c = small_train_config();
  Pretrainer p(segs, ModelConfig::desk(), c);
  try {
    p.step();
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("batch 0") != std::string::npos);
    CHECK(msg.find("seed") != std::string::npos);
  }
}

TEST_CASE("one-batch overfit: loss falls over ten steps for most seeds") {
  // Mask, negatives and Gumbel noise are held fixed. The relaxed quantizer
  // keeps the targets a smooth function of the weights; with hard codes a
  // single code flip moves the loss by a discrete amount.
  int monotone = 0;
  ObjectiveSettings s;
  s.mask_prob = 0.2;
  s.mask_span = 4;
  s.num_negatives = 5;
  s.quantize_mode = QuantizeMode::kSoft;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Model<float> model(ModelConfig::desk(), seed);
    const auto wave = test_tone(8000, seed);
    Adam adam;
    double prev = std::numeric_limits<double>::infinity();
    int decreases = 0;
    for (int step = 0; step < 10; ++step) {
      const Model<float> local = model.clone();
      auto fwd = local.pretrain_forward(wave, s, 2.0f, derive_seed(seed, {42}));
      const double loss = fwd.loss.total_value();
      backward(fwd.loss.total);
      std::vector<std::vector<float>> grads;
      for (const auto& p : local.parameters()) grads.push_back(p.tensor.grad());
      const auto params = model.parameters();
      adam.step(params, grads, std::vector<double>(params.size(), 1e-4));
      if (loss < prev) ++decreases;
      prev = loss;
    }
    if (decreases == 10) ++monotone;
  }
  CHECK(monotone >= 8);
}

// ---------------------------------------------------------------------------
// Downstream

namespace {

struct Downstream {
  Checkpoint pretrained;
  LabeledDataset train;
  LabeledDataset val;
  TrainConfig config;
};

Downstream downstream_fixture() {
  Downstream d;
  d.pretrained = make_checkpoint(Model<float>(ModelConfig::desk(), 5), {{"kind", "pretrain"}});
  SyntheticCorpusSpec spec;
  spec.num_timbres = 2;
  spec.num_pitches = 4;
  spec.seconds = 1.0;
  spec.seed = 1;
  d.train = labeled_from_synthetic(synthesize_corpus(spec), Task::kPitch);
  spec.seed = 2;
  d.val = labeled_from_synthetic(synthesize_corpus(spec), Task::kPitch);
  d.config = TrainConfig::desk();
  d.config.clip_seconds = 1.0;
  d.config.batch_size = 4;
  d.config.max_epochs = 3;
  d.config.seed = 3;
  return d;
}

}  // namespace

TEST_CASE("freeze contracts per finetuning mode") {
  const auto d = downstream_fixture();
  const auto before = snapshot(d.pretrained);
  const auto head = HeadConfig::for_task(Task::kPitch);

  const auto fe = snapshot(finetune(d.pretrained, d.train, d.val, FinetuneMode::kFE, head, d.config).best);
  CHECK(same_prefix(before, fe, "encoder."));
  CHECK(same_prefix(before, fe, "context."));
  CHECK(same_prefix(before, fe, "quantizer."));

  const auto ft2 = snapshot(finetune(d.pretrained, d.train, d.val, FinetuneMode::kFT2, head, d.config).best);
  CHECK(same_prefix(before, ft2, "encoder."));
  CHECK_FALSE(same_prefix(before, ft2, "context."));

  const auto ft1 = snapshot(finetune(d.pretrained, d.train, d.val, FinetuneMode::kFT1, head, d.config).best);
  CHECK_FALSE(same_prefix(before, ft1, "encoder."));
  CHECK_FALSE(same_prefix(before, ft1, "context."));
}

TEST_CASE("finetune rejects out-of-range labels before training") {
  auto d = downstream_fixture();
  d.train[0].label = 200;
  CHECK_THROWS_AS(finetune(d.pretrained, d.train, d.val, FinetuneMode::kFE,
                           HeadConfig::for_task(Task::kPitch), d.config),
                  std::invalid_argument);
  CHECK(HeadConfig::for_task(Task::kPitch).num_classes == 112);
  CHECK(HeadConfig::for_task(Task::kInstrument).num_classes == 11);
}

TEST_CASE("early stopping never runs more than patience epochs past the best") {
  auto d = downstream_fixture();
  d.config.max_epochs = 40;
  d.config.patience = 2;
  d.config.fe_learning_rate = 0.5;  // large steps make validation loss oscillate
  const auto r = finetune(d.pretrained, d.train, d.val, FinetuneMode::kFE,
                          HeadConfig::for_task(Task::kPitch), d.config);
  CHECK(r.epochs_run - r.best_epoch <= 2);
  CHECK(r.history.size() == 2 * r.epochs_run);
  double best = 1e300;
  std::size_t best_epoch = 0;
  for (const auto& h : r.history) {
    if (h.split == "val" && h.loss < best) {
      best = h.loss;
      best_epoch = h.epoch;
    }
  }
  CHECK(best_epoch == r.best_epoch);
}

TEST_CASE("classification contracts") {
  const auto d = downstream_fixture();
  const auto r = finetune(d.pretrained, d.train, d.val, FinetuneMode::kFE,
                          HeadConfig::for_task(Task::kPitch), d.config);
  const auto c = classify(r.best, d.val[0].wave);
  double total = 0;
  for (double p : c.probabilities) total += p;
  CHECK(std::abs(total - 1.0) < 1e-6);
  CHECK(c.probabilities.size() == 112);

  Model<float> model(ModelConfig::desk(), 1);
  Rng rng(0);
  Head<float> zero(HeadConfig::for_task(Task::kInstrument), 64, rng);
  std::map<std::string, std::vector<float>> zeros = {{"head.weight", std::vector<float>(64 * 11, 0.0f)},
                                                     {"head.bias", std::vector<float>(11, 0.0f)}};
  zero.load_values(zeros);
  const auto u = classify(model, zero, test_tone(16000, 1));
  CHECK(u.predicted == 0);
  for (double p : u.probabilities) CHECK(p == doctest::Approx(1.0 / 11).epsilon(1e-12));

  Head<float> wrong(HeadConfig::for_task(Task::kPitch), 32, rng);
  CHECK_THROWS_AS(classify(model, wrong, test_tone(16000, 1)), ShapeError);
}

TEST_CASE("feature extraction") {
  Model<float> model(ModelConfig::desk(), 2);
  const auto f = extract_features(model, test_tone(16000, 2));
  CHECK(f.size() == 64);
  CHECK(extract_features(model, test_tone(16000, 2)) == f);
  CHECK_THROWS_AS(extract_features(model, test_tone(100, 1)), std::invalid_argument);

  // Without positional convolution, a tone whose period divides the hop gives
  // identical frames; doubling the clip then leaves the mean unchanged.
  ModelConfig c = ModelConfig::desk();
  c.context.positional = false;
  Model<float> flat(c, 3);
  Waveform one;
  for (int i = 0; i < 16000; ++i) one.samples.push_back(static_cast<float>(0.5 * std::sin(2 * M_PI * i / 40.0)));
  Waveform two = one;
  two.samples.insert(two.samples.end(), one.samples.begin(), one.samples.end());
  const auto a = extract_features(flat, one);
  const auto b = extract_features(flat, two);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-5);
}

TEST_CASE("full-size preset features are 768-dimensional") {
  Model<float> model(ModelConfig::paper(), 1);
  CHECK(extract_features(model, test_tone(16000, 1)).size() == 768);
  const auto layers = model.layer_activations(test_tone(16000, 1));
  CHECK(layers.size() == 13);
  CHECK(layers[0].dim(1) == 512);
}

TEST_CASE("labeled dataset round trip through disk") {
  TempDir dir("labels");
  SyntheticCorpusSpec spec;
  spec.num_timbres = 2;
  spec.num_pitches = 2;
  spec.seconds = 0.5;
  const auto clips = synthesize_corpus(spec);
  write_synthetic_corpus(dir.path(), clips);
  const auto pitch = load_labeled_dataset(dir.path(), Task::kPitch);
  const auto inst = load_labeled_dataset(dir.path(), Task::kInstrument);
  REQUIRE(pitch.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(pitch[i].label == static_cast<std::size_t>(clips[i].midi));
    CHECK(inst[i].label == static_cast<std::size_t>(clips[i].timbre));
    CHECK(pitch[i].wave.samples.size() == clips[i].wave.samples.size());
  }
}
