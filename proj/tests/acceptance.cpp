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

// Acceptance suite: one PASS/FAIL line per criterion.
//
// Usage: muquant_acceptance [--workdir DIR] [criterion ...]
// With no criteria listed, all ten run. Exit status is 0 only if every
// selected criterion passes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cca_oracle.hpp"
#include "gradient_suite.hpp"
#include "muquant/analysis.hpp"
#include "muquant/audio.hpp"
#include "muquant/checkpoint.hpp"
#include "muquant/log.hpp"
#include "muquant/objective.hpp"
#include "muquant/training.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace muquant;
using muquant::testing::read_bytes;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, double a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, a);
  return buf;
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

fs::path g_workdir;

fs::path fresh_dir(const std::string& name) {
  const auto p = g_workdir / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// ---------------------------------------------------------------------------
// 1. Gradient suite

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_name;
  std::size_t checked = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto cases = muquant::testing::op_gradient_checks(seed);
    for (auto& c : muquant::testing::model_gradient_checks(seed, 4)) cases.push_back(c);
    for (const auto& c : cases) {
      checked += c.result.checked;
      if (c.result.max_rel_error > worst) {
        worst = c.result.max_rel_error;
        worst_name = c.name;
      }
    }
  }
  const double secs = seconds_since(t0);
  std::ostringstream os;
  os << "max rel err " << fmt("%.2e", worst) << " (" << worst_name << ") over 10 seeds, "
     << checked << " coordinates, " << fmt("%.1f", secs) << " s";
  return {worst < 1e-4 && secs < 300.0, os.str()};
}

// ---------------------------------------------------------------------------
// 2. Closed-form contrastive losses

Outcome closed_forms() {
  double worst = 0.0;
  for (std::size_t k : {1, 10, 100}) {
    auto c = Tensor<double>::from({1 + k, 3}, std::vector<double>(3 * (1 + k), 0.7));
    auto q = Tensor<double>::from({1 + k, 3}, std::vector<double>(3 * (1 + k), -2.0));
    NegativeSet ns;
    ns.per_anchor = k;
    ns.anchors = {0};
    for (std::size_t j = 1; j <= k; ++j) ns.negatives.push_back(j);
    const double got = contrastive_loss(c, q, ns, 0.1).contrastive_value();
    worst = std::max(worst, std::abs(got - std::log(double(k) + 1.0)));
  }
  // cos = 1 to the positive and 0 to the single negative, kappa = 0.1.
  auto c1 = Tensor<double>::from({2, 2}, {1, 0, 0, 0});
  auto q1 = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
  NegativeSet one;
  one.per_anchor = 1;
  one.anchors = {0};
  one.negatives = {1};
  const double single = contrastive_loss(c1, q1, one, 0.1).contrastive_value();
  worst = std::max(worst, std::abs(single - std::log1p(std::exp(-10.0))));
  return {worst < 1e-9, "max abs deviation " + fmt("%.2e", worst)};
}

// ---------------------------------------------------------------------------
// 3. CCA against an independent generalized eigensolver

Outcome cca_oracle_check() {
  using muquant::testing::cca_oracle;
  using muquant::testing::from_eigen;
  using muquant::testing::random_matrix;
  using muquant::testing::to_eigen;
  double oracle_err = 0.0, self_err = 0.0, invariance_err = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(derive_seed(7, {seed}));
    const auto w = random_matrix(200, 4, rng);
    const auto y = random_matrix(200, 6, rng);
    const auto r = cca(w, y);
    const auto o = cca_oracle(w, y);
    for (std::size_t i = 0; i < o.size(); ++i) {
      oracle_err = std::max(oracle_err, std::abs(r.coefficients[i] - o[i]));
    }
    for (double rho : cca(w, w).coefficients) self_err = std::max(self_err, std::abs(rho - 1.0));

    Eigen::MatrixXd a(4, 4), b(6, 6);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = rng.normal();
    a += 5.0 * Eigen::MatrixXd::Identity(4, 4);
    b += 5.0 * Eigen::MatrixXd::Identity(6, 6);
    const auto moved = cca(from_eigen(to_eigen(w) * a), from_eigen(to_eigen(y) * b));
    for (std::size_t i = 0; i < o.size(); ++i) {
      invariance_err = std::max(invariance_err, std::abs(moved.coefficients[i] - r.coefficients[i]));
    }
  }
  std::ostringstream os;
  os << "oracle " << fmt("%.2e", oracle_err) << ", cca(W,W) " << fmt("%.2e", self_err)
     << ", invariance " << fmt("%.2e", invariance_err) << " (10 draws)";
  return {oracle_err < 1e-6 && self_err < 1e-6 && invariance_err < 1e-6, os.str()};
}

// ---------------------------------------------------------------------------
// 4. Segmentation arithmetic

Outcome segmentation() {
  const auto dir = fresh_dir("segmentation");
  // Low sample rate keeps the files small; the arithmetic is in samples.
  const int rate = 100;
  std::vector<double> durations = {34.0, 65.0, 20.0, 19.99, 0.5};
  Rng rng(404);
  for (int i = 0; i < 40; ++i) durations.push_back(std::floor(rng.uniform() * 20000.0) / 100.0);
  std::map<std::string, std::size_t> expected;
  for (std::size_t i = 0; i < durations.size(); ++i) {
    Waveform w;
    w.sample_rate = rate;
    const auto n = static_cast<std::size_t>(std::llround(durations[i] * rate));
    w.samples.assign(n, 0.0f);
    char name[32];
    std::snprintf(name, sizeof(name), "clip_%03zu.wav", i);
    write_wav(dir / name, w);
    // Direct enumeration of window starts.
    std::size_t count = 0;
    for (std::size_t start = 0; start + 20 * rate <= n; start += 10 * rate) ++count;
    expected[(dir / name).string()] = count;
  }
  const auto manifest = segment_corpus(dir, 20.0, 10.0);
  std::map<std::string, std::size_t> got;
  for (const auto& e : manifest.entries) ++got[e.source];
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < durations.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "clip_%03zu.wav", i);
    const auto key = (dir / name).string();
    const double d = durations[i];
    const std::size_t formula =
        d < 20.0 ? 0 : static_cast<std::size_t>(std::floor((d - 20.0) / 10.0 + 1e-9)) + 1;
    if (got[key] != expected[key] || formula != expected[key]) ++mismatches;
  }
  const bool hand = got[(dir / "clip_000.wav").string()] == 2 &&
                    got[(dir / "clip_001.wav").string()] == 5;
  std::ostringstream os;
  os << durations.size() << " files, " << mismatches << " mismatches, D=34 -> "
     << got[(dir / "clip_000.wav").string()] << ", D=65 -> " << got[(dir / "clip_001.wav").string()];
  return {mismatches == 0 && hand, os.str()};
}

// ---------------------------------------------------------------------------
// 5. Freeze contracts

using Values = std::map<std::string, std::vector<float>>;

bool prefix_identical(const Values& a, const Values& b, const std::string& prefix) {
  for (const auto& [name, v] : a) {
    if (name.rfind(prefix, 0) == 0 && b.at(name) != v) return false;
  }
  return true;
}

// Every tensor under `prefix` differs, except names listed in `skip`.
std::vector<std::string> unchanged(const Values& a, const Values& b, const std::string& prefix,
                                   const std::set<std::string>& skip) {
  std::vector<std::string> out;
  for (const auto& [name, v] : a) {
    if (name.rfind(prefix, 0) == 0 && !skip.count(name) && b.at(name) == v) out.push_back(name);
  }
  return out;
}

Outcome freeze_contracts() {
  const auto pretrained =
      make_checkpoint(Model<float>(ModelConfig::desk(), 21), {{"kind", "pretrain"}});
  SyntheticCorpusSpec spec;
  spec.num_timbres = 2;
  spec.num_pitches = 4;
  spec.seconds = 1.0;
  spec.seed = 31;
  const auto train = labeled_from_synthetic(synthesize_corpus(spec), Task::kPitch);
  spec.seed = 32;
  const auto val = labeled_from_synthetic(synthesize_corpus(spec), Task::kPitch);
  auto config = TrainConfig::desk();
  config.clip_seconds = 1.0;
  config.batch_size = 4;
  config.max_epochs = 5;
  config.patience = 100;
  config.seed = 33;
  const auto head_cfg = HeadConfig::for_task(Task::kPitch);
  const Values before = pretrained.values();

  // The head's initial values, drawn exactly as finetune draws them.
  Values initial_head;
  {
    Rng head_rng(derive_seed(config.seed, {300}));
    Head<float> head(head_cfg, ModelConfig::desk().context.model_dim, head_rng);
    for (const auto& p : head.parameters()) initial_head[p.name].assign(p.tensor.data().begin(), p.tensor.data().end());
  }

  const Values fe = finetune(pretrained, train, val, FinetuneMode::kFE, head_cfg, config).best.values();
  const Values ft2 = finetune(pretrained, train, val, FinetuneMode::kFT2, head_cfg, config).best.values();
  const Values ft1 = finetune(pretrained, train, val, FinetuneMode::kFT1, head_cfg, config).best.values();

  const bool fe_ok = prefix_identical(before, fe, "encoder.") && prefix_identical(before, fe, "context.");
  const bool ft2_ok = prefix_identical(before, ft2, "encoder.") &&
                      unchanged(before, ft2, "context.", {"context.mask_embedding"}).empty();
  // The mask embedding only enters the pre-training graph, so no downstream
  // mode can move it.
  auto stale = unchanged(before, ft1, "encoder.", {});
  for (auto& n : unchanged(before, ft1, "context.", {"context.mask_embedding"})) stale.push_back(n);
  for (auto& n : unchanged(initial_head, ft1, "head.", {})) stale.push_back(n);
  const bool ft1_ok = stale.empty();

  std::ostringstream os;
  os << "FE frozen " << (fe_ok ? "yes" : "NO") << ", FT2 encoder frozen and context trained "
     << (ft2_ok ? "yes" : "NO") << ", FT1 tensors left unchanged " << stale.size();
  if (!stale.empty()) os << " (first " << stale.front() << ")";
  return {fe_ok && ft2_ok && ft1_ok, os.str()};
}

// ---------------------------------------------------------------------------
// 6. FT1 overfit

Outcome overfit() {
  const auto t0 = Clock::now();
  const auto pretrained =
      make_checkpoint(Model<float>(ModelConfig::desk(), 41), {{"kind", "pretrain"}});
  SyntheticCorpusSpec spec;
  spec.num_timbres = 2;
  spec.num_pitches = 16;
  spec.seconds = 1.0;
  spec.seed = 42;
  const auto train = labeled_from_synthetic(synthesize_corpus(spec), Task::kPitch);
  auto config = TrainConfig::desk();
  config.clip_seconds = 1.0;
  config.max_epochs = 200;
  config.patience = 200;
  config.target_train_accuracy = 1.0;
  config.seed = 43;
  double best_acc = 0.0;
  std::size_t reached = 0;
  const auto r = finetune(pretrained, train, {}, FinetuneMode::kFT1,
                          HeadConfig::for_task(Task::kPitch), config, [&](const EpochRecord& e) {
                            if (e.split != "train" || !e.accuracy) return;
                            best_acc = std::max(best_acc, *e.accuracy);
                            if (*e.accuracy >= 1.0 && reached == 0) reached = e.epoch;
                          });
  const double secs = seconds_since(t0);
  std::ostringstream os;
  os << train.size() << " clips, best train accuracy " << fmt("%.3f", best_acc);
  if (reached) os << " (100% at epoch " << reached << ")";
  os << ", " << r.epochs_run << " epochs, " << fmt("%.1f", secs) << " s";
  return {reached > 0 && reached <= 200 && secs < 900.0, os.str()};
}

// ---------------------------------------------------------------------------
// 7 and 8. Desk-scale pre-training, probes and layer profile

struct DeskRun {
  bool ready = false;
  Checkpoint ckpt;
  double pretrain_seconds = 0.0;
  std::string error;
};

constexpr std::uint64_t kDeskSeed = 2024;

DeskRun& desk_run() {
  static DeskRun run;
  if (run.ready || !run.error.empty()) return run;
  try {
    const auto t0 = Clock::now();
    const auto dir = fresh_dir("desk");
    MelodyCorpusSpec corpus;
    corpus.count = 32;
    corpus.seconds = 8.0;
    corpus.min_note_seconds = 0.1;
    corpus.max_note_seconds = 0.3;
    corpus.seed = kDeskSeed;
    write_melodies(dir / "melodies", synthesize_melodies(corpus));
    const auto manifest = segment_corpus(dir / "melodies", 2.0, 2.0);
    auto config = TrainConfig::desk();
    config.max_epochs = 60;
    config.seed = kDeskSeed;
    run.ckpt = pretrain(manifest, ModelConfig::desk(), config, dir / "pretrain.log");
    save_checkpoint(dir / "pretrained.mqw", run.ckpt);
    run.pretrain_seconds = seconds_since(t0);
    run.ready = true;
  } catch (const std::exception& e) {
    run.error = e.what();
  }
  return run;
}

std::vector<SyntheticClip> grid(std::uint64_t seed) {
  SyntheticCorpusSpec spec;  // 4 timbres x 16 pitches
  spec.seconds = 2.0;
  spec.seed = seed;
  return synthesize_corpus(spec);
}

Outcome ssl_signal() {
  const auto t0 = Clock::now();
  auto& run = desk_run();
  if (!run.ready) return {false, "pre-training failed: " + run.error};

  // (a) FE linear probe on pitch, evaluated on held-out clips.
  const auto train = labeled_from_synthetic(grid(derive_seed(kDeskSeed, {1})), Task::kPitch);
  const auto val = labeled_from_synthetic(grid(derive_seed(kDeskSeed, {2})), Task::kPitch);
  const auto test_clips = grid(derive_seed(kDeskSeed, {3}));
  const auto test = labeled_from_synthetic(test_clips, Task::kPitch);
  auto config = TrainConfig::desk();
  config.clip_seconds = 2.0;
  config.max_epochs = 300;
  config.patience = 30;
  config.seed = kDeskSeed;
  const auto probe = finetune(run.ckpt, train, val, FinetuneMode::kFE,
                              HeadConfig::for_task(Task::kPitch), config);
  const auto model = model_from_checkpoint(probe.best);
  const auto head = head_from_checkpoint(probe.best);
  std::size_t correct = 0;
  for (const auto& clip : test) correct += classify(model, head, clip.wave).predicted == clip.label;
  const double accuracy = double(correct) / double(test.size());
  const double chance = 1.0 / 16.0;

  // (b) Joint-code / pitch co-occurrence against a label-shuffled baseline.
  std::vector<LabeledCodes> coded;
  for (const auto& clip : test_clips) {
    coded.push_back({model.codes(clip.wave), static_cast<std::size_t>(clip.midi - 48)});
  }
  const auto perm = label_entropy_permutation_test(coded, 16, 1000, derive_seed(kDeskSeed, {500}));

  const double secs = run.pretrain_seconds + seconds_since(t0);
  std::ostringstream os;
  os << "probe accuracy " << fmt("%.3f", accuracy) << " (chance " << fmt("%.4f", chance)
     << ", need >= " << fmt("%.4f", 3 * chance) << "); label entropy " << fmt("%.3f", perm.observed)
     << " vs shuffled " << fmt("%.3f", perm.baseline_mean) << ", p = " << fmt("%.4f", perm.p_value)
     << "; " << fmt("%.0f", secs) << " s";
  return {accuracy >= 3 * chance && perm.p_value < 0.05 && perm.observed < perm.baseline_mean &&
              secs < 3600.0,
          os.str()};
}

Outcome layer_profile() {
  auto& run = desk_run();
  if (!run.ready) return {false, "pre-training failed: " + run.error};
  MelodyCorpusSpec corpus;
  corpus.count = 8;
  corpus.seconds = 8.0;
  corpus.min_note_seconds = 0.1;
  corpus.max_note_seconds = 0.3;
  corpus.seed = derive_seed(kDeskSeed, {4});
  const auto profile = layer_similarity_profile(run.ckpt, synthesize_melodies(corpus), 4.0);
  write_profile_csv(g_workdir / "desk" / "profile.csv", profile);
  bool bounded = true;
  std::ostringstream os;
  os << "pwcca by block:";
  for (const auto& p : profile) {
    os << " " << fmt("%.4f", p.pwcca);
    bounded = bounded && p.pwcca >= 0.0 && p.pwcca <= 1.0 && p.mean_cca >= 0.0 && p.mean_cca <= 1.0;
  }
  if (profile.size() < 2) return {false, os.str() + " (need at least two blocks)"};
  double mid_min = 1.0;
  for (std::size_t b = 0; b + 1 < profile.size(); ++b) mid_min = std::min(mid_min, profile[b].pwcca);
  const double last = profile.back().pwcca;
  os << "; final " << fmt("%.4f", last) << " vs mid minimum " << fmt("%.4f", mid_min);
  return {bounded && last > mid_min, os.str()};
}

// ---------------------------------------------------------------------------
// 9. Reproducibility

struct Artifacts {
  std::string checkpoint, log, cooccurrence, profile;
};

Artifacts small_pipeline(const fs::path& dir) {
  fs::create_directories(dir);
  MelodyCorpusSpec corpus;
  corpus.count = 4;
  corpus.seconds = 4.0;
  corpus.seed = 91;
  write_melodies(dir / "audio", synthesize_melodies(corpus));
  const auto manifest = segment_corpus(dir / "audio", 2.0, 2.0);
  auto config = TrainConfig::desk();
  config.max_epochs = 2;
  config.batch_size = 4;
  config.seed = 92;
  const auto ckpt = pretrain(manifest, ModelConfig::desk(), config, dir / "pretrain.log");
  save_checkpoint(dir / "model.mqw", ckpt);

  SyntheticCorpusSpec spec;
  spec.num_pitches = 4;
  spec.seconds = 1.0;
  spec.seed = 93;
  const auto model = model_from_checkpoint(ckpt);
  std::vector<LabeledCodes> coded;
  for (const auto& clip : synthesize_corpus(spec)) {
    coded.push_back({model.codes(clip.wave), static_cast<std::size_t>(clip.midi - 48)});
  }
  write_cooccurrence_csv(dir / "cooc.csv", cooccurrence(coded, 4));
  write_profile_csv(dir / "profile.csv",
                    layer_similarity_profile(ckpt, load_segments(manifest), 2.0));
  return {read_bytes(dir / "model.mqw"), read_bytes(dir / "pretrain.log"),
          read_bytes(dir / "cooc.csv"), read_bytes(dir / "profile.csv")};
}

Outcome reproducibility() {
  const auto root = fresh_dir("repro");
  const auto a = small_pipeline(root / "a");
  const auto b = small_pipeline(root / "b");
  std::ostringstream os;
  os << "checkpoint " << (a.checkpoint == b.checkpoint ? "same" : "DIFFERS") << ", log "
     << (a.log == b.log ? "same" : "DIFFERS") << ", co-occurrence CSV "
     << (a.cooccurrence == b.cooccurrence ? "same" : "DIFFERS") << ", profile CSV "
     << (a.profile == b.profile ? "same" : "DIFFERS");
  const bool nonempty = !a.checkpoint.empty() && !a.log.empty() && !a.cooccurrence.empty() &&
                        !a.profile.empty();
  return {nonempty && a.checkpoint == b.checkpoint && a.log == b.log &&
              a.cooccurrence == b.cooccurrence && a.profile == b.profile,
          os.str()};
}

// ---------------------------------------------------------------------------
// 10. Checkpoint round trip and resume

Outcome checkpoint_roundtrip() {
  const auto dir = fresh_dir("roundtrip");
  std::vector<Waveform> segments;
  for (std::uint64_t i = 0; i < 4; ++i) segments.push_back(muquant::testing::test_tone(16000, 60 + i));
  auto config = TrainConfig::desk();
  config.batch_size = 2;
  config.max_epochs = 3;
  config.seed = 61;
  Pretrainer a(segments, ModelConfig::desk(), config);
  a.step();
  a.step();
  save_checkpoint(dir / "first.mqw", a.checkpoint());
  save_checkpoint(dir / "second.mqw", load_checkpoint(dir / "first.mqw"));
  const bool same_bytes = read_bytes(dir / "first.mqw") == read_bytes(dir / "second.mqw");
  const double next = a.step();

  Pretrainer b(segments, load_checkpoint(dir / "second.mqw"));
  const double resumed = b.step();
  std::ostringstream os;
  os << "save-load-save " << (same_bytes ? "identical" : "DIFFERS") << "; next-step loss "
     << fmt("%.17g", next) << " vs resumed " << fmt("%.17g", resumed);
  return {same_bytes && next == resumed, os.str()};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  g_workdir = fs::temp_directory_path() / "muquant_acceptance";
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--workdir" && i + 1 < argc) {
      g_workdir = argv[++i];
    } else {
      selected.insert(std::atoi(arg.c_str()));
    }
  }
  fs::create_directories(g_workdir);
  set_log_quiet(true);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient suite", gradient_suite},
      {"closed-form losses", closed_forms},
      {"CCA oracle", cca_oracle_check},
      {"segmentation arithmetic", segmentation},
      {"freeze contracts", freeze_contracts},
      {"FT1 overfit", overfit},
      {"desk-scale SSL signal", ssl_signal},
      {"layer-profile shape", layer_profile},
      {"reproducibility", reproducibility},
      {"checkpoint round trip", checkpoint_roundtrip},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome out;
    try {
      out = criteria[i].second();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    if (!out.pass) ++failures;
    std::printf("criterion %2d %s  %s: %s\n", id, out.pass ? "PASS" : "FAIL",
                criteria[i].first.c_str(), out.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
