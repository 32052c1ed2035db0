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

// muquant command-line tool.
//
// Exit codes: 0 success, 1 configuration or runtime failure (one JSON line on
// stderr), 2 usage error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <list>
#include <string>
#include <vector>

#include "muquant/analysis.hpp"
#include "muquant/audio.hpp"
#include "muquant/checkpoint.hpp"
#include "muquant/config.hpp"
#include "muquant/log.hpp"
#include "muquant/parallel.hpp"
#include "muquant/random.hpp"
#include "muquant/training.hpp"

namespace fs = std::filesystem;
using namespace muquant;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Binding {
  CLI::App* app = nullptr;
  CLI::Option* option = nullptr;
  std::string key;
  std::string value;
};

void fail_line(const std::string& kind, const std::string& key, const std::string& message) {
  nlohmann::json j = {{"error", kind}, {"message", message}};
  if (!key.empty()) j["key"] = key;
  std::cerr << j.dump() << std::endl;
}

std::string required_path(const RunConfig& rc, const std::string& name, const std::string& flag) {
  auto p = rc.path(name);
  if (p.empty()) throw UsageError("missing required option " + flag);
  return p;
}

void truncate_file(const fs::path& p) {
  if (p.empty()) return;
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::trunc);
}

std::vector<fs::path> wav_files(const fs::path& input) {
  std::vector<fs::path> files;
  if (fs::is_directory(input)) {
    for (const auto& e : fs::recursive_directory_iterator(input)) {
      if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(input);
  }
  return files;
}

std::size_t clip_samples(const RunConfig& rc, const Model<float>& model) {
  return static_cast<std::size_t>(
      std::llround(rc.train().clip_seconds * model.config().encoder.sample_rate));
}

// ---------------------------------------------------------------------------

void run_gen_synthetic(const RunConfig& rc) {
  const fs::path out = required_path(rc, "output", "--out");
  const auto& s = rc.at("synthetic");
  SyntheticCorpusSpec spec;
  spec.num_timbres = s.at("timbres").get<int>();
  spec.num_pitches = s.at("pitches").get<int>();
  spec.base_midi = s.at("base_midi").get<int>();
  spec.pitch_step = s.at("pitch_step").get<int>();
  spec.clips_per_cell = s.at("clips_per_cell").get<int>();
  spec.seconds = s.at("seconds").get<double>();
  spec.noise_level = s.at("noise_level").get<double>();
  spec.seed = rc.at("seed").get<std::uint64_t>();
  if (spec.num_timbres < 1 || spec.num_timbres > kNumTimbres) {
    throw ConfigError("synthetic.timbres", "synthetic.timbres must lie in [1, " +
                                               std::to_string(kNumTimbres) + "]");
  }
  if (s.at("kind").get<std::string>() == "melody") {
    MelodyCorpusSpec m;
    m.num_timbres = spec.num_timbres;
    m.num_pitches = spec.num_pitches;
    m.base_midi = spec.base_midi;
    m.pitch_step = spec.pitch_step;
    m.count = s.at("melodies").get<int>();
    m.seconds = s.at("melody_seconds").get<double>();
    m.min_note_seconds = s.at("min_note_seconds").get<double>();
    m.max_note_seconds = s.at("max_note_seconds").get<double>();
    m.noise_level = spec.noise_level;
    m.seed = spec.seed;
    write_melodies(out, synthesize_melodies(m));
    log_info("wrote " + std::to_string(m.count) + " melodies to " + out.string());
    return;
  }
  const auto clips = synthesize_corpus(spec);
  write_synthetic_corpus(out, clips);
  log_info("wrote " + std::to_string(clips.size()) + " clips to " + out.string());
}

void run_segment(const RunConfig& rc) {
  const fs::path in = required_path(rc, "input", "--in");
  const fs::path out = required_path(rc, "output", "--out");
  const auto manifest = segment_corpus(in, rc.at("segment.window_seconds").get<double>(),
                                       rc.at("segment.hop_seconds").get<double>());
  save_manifest(out, manifest);
  log_info("wrote " + std::to_string(manifest.entries.size()) + " segments to " + out.string());
}

void run_pretrain(const RunConfig& rc, const std::string& resume) {
  const fs::path manifest_path = required_path(rc, "manifest", "--manifest");
  const fs::path out = required_path(rc, "output", "--out");
  const fs::path log_path = rc.path("log");
  const fs::path ckpt_dir = rc.path("checkpoint_dir");
  const auto manifest = load_manifest(manifest_path);
  if (manifest.entries.empty()) throw std::runtime_error("manifest has no entries");

  if (!resume.empty()) {
    Pretrainer trainer(load_segments(manifest), load_checkpoint(resume));
    trainer.run([&](const EpochRecord& rec) {
      if (!log_path.empty()) append_log(log_path, rec);
    });
    save_checkpoint(out, trainer.checkpoint());
    return;
  }
  truncate_file(log_path);
  const auto ckpt = pretrain(manifest, rc.model(), rc.train(), log_path, ckpt_dir);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_checkpoint(out, ckpt);
  log_info("saved " + out.string());
}

void run_finetune(const RunConfig& rc) {
  const fs::path ckpt_path = required_path(rc, "checkpoint", "--ckpt");
  const fs::path data = required_path(rc, "data", "--data");
  const fs::path out = required_path(rc, "output", "--out");
  const fs::path val = rc.path("validation");
  const fs::path log_path = rc.path("log");
  const Task task = parse_task(rc.at("task").get<std::string>());
  const FinetuneMode mode = parse_mode(rc.at("mode").get<std::string>());

  const auto pretrained = load_checkpoint(ckpt_path);
  const auto train = load_labeled_dataset(data, task);
  const auto validation = val.empty() ? LabeledDataset{} : load_labeled_dataset(val, task);
  truncate_file(log_path);
  const auto result =
      finetune(pretrained, train, validation, mode, HeadConfig::for_task(task), rc.train(),
               [&](const EpochRecord& rec) {
                 if (!log_path.empty()) append_log(log_path, rec);
               });
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_checkpoint(out, result.best);
  log_info("best epoch " + std::to_string(result.best_epoch) + " of " +
           std::to_string(result.epochs_run) + "; saved " + out.string());
}

void run_extract(const RunConfig& rc) {
  const fs::path ckpt_path = required_path(rc, "checkpoint", "--ckpt");
  const fs::path in = required_path(rc, "input", "--in");
  const fs::path out = required_path(rc, "output", "--out");
  const auto model = model_from_checkpoint(load_checkpoint(ckpt_path));
  const auto files = wav_files(in);
  std::vector<std::vector<float>> features(files.size());
  parallel_for(files.size(), worker_count(),
               [&](std::size_t i) { features[i] = extract_features(model, read_wav(files[i])); });
  std::ofstream os(out);
  if (!os) throw std::runtime_error("cannot write " + out.string());
  os << "file";
  for (std::size_t d = 0; d < model.config().context.model_dim; ++d) os << ",f" << d;
  os << '\n';
  char buf[32];
  for (std::size_t i = 0; i < files.size(); ++i) {
    os << files[i].filename().string();
    for (float v : features[i]) {
      std::snprintf(buf, sizeof(buf), ",%.9g", static_cast<double>(v));
      os << buf;
    }
    os << '\n';
  }
}

void run_classify(const RunConfig& rc) {
  const fs::path ckpt_path = required_path(rc, "checkpoint", "--ckpt");
  const fs::path in = required_path(rc, "input", "--in");
  const fs::path out = rc.path("output");
  const auto ckpt = load_checkpoint(ckpt_path);
  if (!ckpt.config.contains("head")) throw std::runtime_error("checkpoint has no classification head");
  const auto model = model_from_checkpoint(ckpt);
  const auto head = head_from_checkpoint(ckpt);
  std::string lines;
  for (const auto& file : wav_files(in)) {
    const auto c = classify(model, head, read_wav(file));
    nlohmann::json j = {{"file", file.filename().string()},
                        {"predicted", c.predicted},
                        {"probabilities", c.probabilities}};
    lines += j.dump() + "\n";
  }
  if (out.empty()) {
    std::cout << lines;
  } else {
    std::ofstream(out) << lines;
  }
}

void run_analyze_codes(const RunConfig& rc) {
  const fs::path ckpt_path = required_path(rc, "checkpoint", "--ckpt");
  const fs::path data = required_path(rc, "data", "--data");
  const std::string out = required_path(rc, "output", "--out");
  const Task task = parse_task(rc.at("task").get<std::string>());
  const auto head = HeadConfig::for_task(task);
  const auto model = model_from_checkpoint(load_checkpoint(ckpt_path));
  const auto dataset = load_labeled_dataset(data, task);
  const std::size_t samples = clip_samples(rc, model);

  std::vector<LabeledCodes> clips(dataset.size());
  parallel_for(dataset.size(), worker_count(), [&](std::size_t i) {
    clips[i] = {model.codes(center_crop(dataset[i].wave, samples)), dataset[i].label};
  });
  const auto& q = model.config().quantizer;
  const auto joint = cooccurrence(clips, head.num_classes);
  write_cooccurrence_csv(out + "_joint.csv", joint);
  nlohmann::json sidecar;
  sidecar["joint"] = cooccurrence_sidecar(joint, "joint", task_name(task), q.groups,
                                          q.entries_per_group);
  sidecar["joint"]["file"] = fs::path(out + "_joint.csv").filename().string();
  sidecar["groups"] = nlohmann::json::array();
  for (std::size_t g = 0; g < q.groups; ++g) {
    const auto m = cooccurrence_group(clips, head.num_classes, g);
    const std::string file = out + "_group" + std::to_string(g) + ".csv";
    write_cooccurrence_csv(file, m);
    auto meta = cooccurrence_sidecar(m, "group" + std::to_string(g), task_name(task), q.groups,
                                     q.entries_per_group);
    meta["file"] = fs::path(file).filename().string();
    sidecar["groups"].push_back(meta);
  }
  const auto test = label_entropy_permutation_test(
      clips, head.num_classes, rc.at("analysis.permutations").get<std::size_t>(),
      derive_seed(rc.at("seed").get<std::uint64_t>(), {500}));
  sidecar["permutation_test"] = {{"observed", test.observed},
                                 {"baseline_mean", test.baseline_mean},
                                 {"p_value", test.p_value},
                                 {"permutations", test.permutations}};
  std::ofstream(out + ".json") << sidecar.dump(2) << '\n';
}

void run_analyze_layers(const RunConfig& rc) {
  const fs::path ckpt_path = required_path(rc, "checkpoint", "--ckpt");
  const fs::path manifest_path = required_path(rc, "manifest", "--manifest");
  const fs::path out = required_path(rc, "output", "--out");
  const auto clips = load_segments(load_manifest(manifest_path));
  const auto profile = layer_similarity_profile(load_checkpoint(ckpt_path), clips,
                                                rc.at("analysis.segment_seconds").get<double>());
  write_profile_csv(out, profile);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"muquant: self-supervised music representation learning and analysis"};
  app.require_subcommand(1, 1);
  app.fallthrough();

  std::string config_path;
  std::vector<std::string> sets;
  std::string resume;
  bool quiet = false;
  std::list<Binding> bindings;

  app.add_option("--config", config_path, "JSON run configuration file");
  app.add_option("--set", sets, "Override a configuration key: dotted.key=value");
  app.add_flag("--quiet", quiet, "Suppress informational logging");

  auto bind = [&](CLI::App* target, const std::string& flag, const std::string& key,
                  const std::string& help) {
    auto& b = bindings.emplace_back();
    b.app = target;
    b.key = key;
    b.option = target->add_option(flag, b.value, help + " [" + key + "]");
  };
  bind(&app, "--preset", "preset", "Model preset (desk|paper)");
  bind(&app, "--seed", "seed", "Base random seed");
  bind(&app, "--threads", "threads", "Worker threads (0 = MUQUANT_THREADS or hardware)");

  auto* gen = app.add_subcommand("gen-synthetic", "Write the synthetic tone corpus");
  bind(gen, "--out", "paths.output", "Output directory");
  bind(gen, "--timbres", "synthetic.timbres", "Number of timbres");
  bind(gen, "--pitches", "synthetic.pitches", "Number of pitches");
  bind(gen, "--base-midi", "synthetic.base_midi", "Lowest MIDI note");
  bind(gen, "--clips-per-cell", "synthetic.clips_per_cell", "Clips per timbre/pitch pair");
  bind(gen, "--seconds", "synthetic.seconds", "Clip duration");
  bind(gen, "--noise", "synthetic.noise_level", "Additive noise level");
  bind(gen, "--kind", "synthetic.kind", "grid (labelled notes) or melody (unlabelled sequences)");
  bind(gen, "--melodies", "synthetic.melodies", "Number of melody files");
  bind(gen, "--melody-seconds", "synthetic.melody_seconds", "Melody duration");

  auto* seg = app.add_subcommand("segment", "Split a WAV corpus into overlapping windows");
  bind(seg, "--in", "paths.input", "Corpus directory");
  bind(seg, "--out", "paths.output", "Manifest path");
  bind(seg, "--window", "segment.window_seconds", "Window length in seconds");
  bind(seg, "--hop", "segment.hop_seconds", "Hop in seconds");

  auto* pre = app.add_subcommand("pretrain", "Self-supervised pre-training");
  bind(pre, "--manifest", "paths.manifest", "Segment manifest");
  bind(pre, "--out", "paths.output", "Output checkpoint");
  bind(pre, "--log", "paths.log", "JSON-lines training log");
  bind(pre, "--checkpoint-dir", "paths.checkpoint_dir", "Directory for periodic checkpoints");
  bind(pre, "--epochs", "train.max_epochs", "Epochs");
  bind(pre, "--batch-size", "train.batch_size", "Segments per step");
  bind(pre, "--lr", "train.learning_rate", "Learning rate");
  bind(pre, "--checkpoint-every", "train.checkpoint_every", "Epochs between checkpoints");
  pre->add_option("--resume", resume, "Continue from a pre-training checkpoint");

  auto* ft = app.add_subcommand("finetune", "Train a classification head (FE|FT1|FT2)");
  bind(ft, "--ckpt", "paths.checkpoint", "Pre-trained checkpoint");
  bind(ft, "--data", "paths.data", "Training directory with labels.json");
  bind(ft, "--val", "paths.validation", "Validation directory with labels.json");
  bind(ft, "--task", "task", "pitch|instrument");
  bind(ft, "--mode", "mode", "FE|FT1|FT2");
  bind(ft, "--out", "paths.output", "Output checkpoint");
  bind(ft, "--log", "paths.log", "JSON-lines training log");
  bind(ft, "--epochs", "train.max_epochs", "Maximum epochs");
  bind(ft, "--patience", "train.patience", "Early-stopping patience");
  bind(ft, "--batch-size", "train.batch_size", "Clips per step");
  bind(ft, "--clip-seconds", "train.clip_seconds", "Crop/pad length in seconds");

  auto* ex = app.add_subcommand("extract", "Write time-averaged features as CSV");
  bind(ex, "--ckpt", "paths.checkpoint", "Checkpoint");
  bind(ex, "--in", "paths.input", "WAV file or directory");
  bind(ex, "--out", "paths.output", "Output CSV");

  auto* cl = app.add_subcommand("classify", "Classify WAV files with a finetuned checkpoint");
  bind(cl, "--ckpt", "paths.checkpoint", "Finetuned checkpoint");
  bind(cl, "--in", "paths.input", "WAV file or directory");
  bind(cl, "--out", "paths.output", "Output JSON lines (default stdout)");

  auto* ac = app.add_subcommand("analyze-codes", "Codebook/label co-occurrence tables");
  bind(ac, "--ckpt", "paths.checkpoint", "Checkpoint");
  bind(ac, "--data", "paths.data", "Directory with labels.json");
  bind(ac, "--task", "task", "pitch|instrument");
  bind(ac, "--out", "paths.output", "Output prefix");
  bind(ac, "--permutations", "analysis.permutations", "Label shuffles for the baseline");
  bind(ac, "--clip-seconds", "train.clip_seconds", "Crop/pad length in seconds");

  auto* al = app.add_subcommand("analyze-layers", "Layer-wise CCA/PWCCA profile");
  bind(al, "--ckpt", "paths.checkpoint", "Checkpoint");
  bind(al, "--manifest", "paths.manifest", "Evaluation manifest");
  bind(al, "--out", "paths.output", "Output CSV");
  bind(al, "--segment-seconds", "analysis.segment_seconds", "Middle excerpt length");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help() << '\n';
    fail_line("usage", "", e.what());
    return 2;
  }
  set_log_quiet(quiet);

  try {
    std::vector<Override> overrides;
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + s + "'");
      overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& b : bindings) {
      if (b.option->count() > 0) overrides.emplace_back(b.key, b.value);
    }
    const nlohmann::json file = config_path.empty() ? nlohmann::json() : RunConfig::load_file(config_path);
    const RunConfig rc = RunConfig::resolve(file, overrides);
    CLI::App* sub = app.get_subcommands().front();
    log_info(sub->get_name() + " config " + rc.json().dump());

    const std::string name = sub->get_name();
    if (name == "gen-synthetic") run_gen_synthetic(rc);
    else if (name == "segment") run_segment(rc);
    else if (name == "pretrain") run_pretrain(rc, resume);
    else if (name == "finetune") run_finetune(rc);
    else if (name == "extract") run_extract(rc);
    else if (name == "classify") run_classify(rc);
    else if (name == "analyze-codes") run_analyze_codes(rc);
    else if (name == "analyze-layers") run_analyze_layers(rc);
  } catch (const UsageError& e) {
    std::cerr << app.get_subcommands().front()->help() << '\n';
    fail_line("usage", "", e.what());
    return 2;
  } catch (const ConfigError& e) {
    fail_line("config", e.key(), e.what());
    return 1;
  } catch (const std::exception& e) {
    fail_line("runtime", "", e.what());
    return 1;
  }
  return 0;
}
