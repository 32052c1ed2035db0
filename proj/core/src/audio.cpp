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

#include "muquant/audio.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>

#include "json.hpp"
#include "muquant/random.hpp"

namespace muquant {

namespace {

struct WavFormat {
  std::size_t frames = 0;
  int sample_rate = 0;
  std::streamoff data_offset = 0;
};

std::uint32_t read_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
         (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}
std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b{char(v & 0xff), char((v >> 8) & 0xff),
                              char((v >> 16) & 0xff), char((v >> 24) & 0xff)};
  os.write(b.data(), 4);
}
void put_u16(std::ostream& os, std::uint16_t v) {
  const std::array<char, 2> b{char(v & 0xff), char((v >> 8) & 0xff)};
  os.write(b.data(), 2);
}

WavFormat parse_header(std::istream& in, const std::filesystem::path& path) {
  const std::string where = path.string() + ": ";
  unsigned char riff[12];
  if (!in.read(reinterpret_cast<char*>(riff), 12) ||
      std::memcmp(riff, "RIFF", 4) != 0 || std::memcmp(riff + 8, "WAVE", 4) != 0) {
    throw WavError(where + "not a RIFF/WAVE file");
  }
  WavFormat fmt;
  bool have_fmt = false;
  unsigned char chunk[8];
  while (in.read(reinterpret_cast<char*>(chunk), 8)) {
    const std::uint32_t size = read_u32(chunk + 4);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw WavError(where + "truncated fmt chunk");
      std::vector<unsigned char> body(size);
      if (!in.read(reinterpret_cast<char*>(body.data()), size)) {
        throw WavError(where + "truncated fmt chunk");
      }
      const std::uint16_t format = read_u16(body.data());
      const std::uint16_t channels = read_u16(body.data() + 2);
      const std::uint16_t bits = read_u16(body.data() + 14);
      if (format != 1) throw WavError(where + "only PCM WAV is supported");
      if (channels != 1) {
        throw WavError(where + "expected mono audio, got " +
                       std::to_string(channels) + " channels");
      }
      if (bits != 16) {
        throw WavError(where + "expected 16-bit samples, got " + std::to_string(bits));
      }
      fmt.sample_rate = static_cast<int>(read_u32(body.data() + 4));
      have_fmt = true;
      if (size % 2) in.ignore(1);
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw WavError(where + "data chunk before fmt chunk");
      fmt.frames = size / 2;
      fmt.data_offset = in.tellg();
      return fmt;
    } else {
      in.ignore(size + (size % 2));
    }
  }
  throw WavError(where + "missing data chunk");
}

}  // namespace

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw WavError(path.string() + ": cannot open");
  const WavFormat fmt = parse_header(in, path);
  std::vector<unsigned char> raw(fmt.frames * 2);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
    throw WavError(path.string() + ": truncated data chunk");
  }
  Waveform wave;
  wave.sample_rate = fmt.sample_rate;
  wave.samples.resize(fmt.frames);
  for (std::size_t i = 0; i < fmt.frames; ++i) {
    const auto v = static_cast<std::int16_t>(read_u16(raw.data() + 2 * i));
    wave.samples[i] = static_cast<float>(v) / 32768.0f;
  }
  return wave;
}

std::pair<std::size_t, int> probe_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw WavError(path.string() + ": cannot open");
  const WavFormat fmt = parse_header(in, path);
  return {fmt.frames, fmt.sample_rate};
}

void write_wav(const std::filesystem::path& path, const Waveform& wave) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw WavError(path.string() + ": cannot open for writing");
  const auto data_bytes = static_cast<std::uint32_t>(wave.samples.size() * 2);
  out.write("RIFF", 4);
  put_u32(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(wave.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(wave.sample_rate * 2));
  put_u16(out, 2);
  put_u16(out, 16);
  out.write("data", 4);
  put_u32(out, data_bytes);
  for (float s : wave.samples) {
    const float c = std::clamp(s, -1.0f, 1.0f);
    const auto v = static_cast<std::int16_t>(std::lround(c * 32767.0f));
    put_u16(out, static_cast<std::uint16_t>(v));
  }
  if (!out) throw WavError(path.string() + ": write failed");
}

Waveform crop(const Waveform& wave, std::size_t start, std::size_t count) {
  Waveform out;
  out.sample_rate = wave.sample_rate;
  out.samples.assign(count, 0.0f);
  for (std::size_t i = 0; i < count && start + i < wave.samples.size(); ++i) {
    out.samples[i] = wave.samples[start + i];
  }
  return out;
}

Waveform center_crop(const Waveform& wave, std::size_t count) {
  const std::size_t n = wave.samples.size();
  const std::size_t start = n > count ? (n - count) / 2 : 0;
  return crop(wave, start, count);
}

std::string_view timbre_name(Timbre timbre) {
  switch (timbre) {
    case Timbre::kSine: return "sine";
    case Timbre::kSquare: return "square";
    case Timbre::kSaw: return "saw";
    case Timbre::kTriangle: return "triangle";
  }
  return "unknown";
}

double midi_to_hz(int midi) { return 440.0 * std::pow(2.0, (midi - 69) / 12.0); }

Waveform synthesize_tone(const ToneSpec& spec, int sample_rate) {
  Rng rng(spec.seed);
  const auto n = static_cast<std::size_t>(std::llround(spec.seconds * sample_rate));
  const double f0 = midi_to_hz(spec.midi);
  const double phase0 = rng.uniform();
  const std::size_t ramp = std::min<std::size_t>(n / 4, sample_rate / 100);
  Waveform wave;
  wave.sample_rate = sample_rate;
  wave.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double ph = phase0 + f0 * static_cast<double>(i) / sample_rate;
    ph -= std::floor(ph);
    double v = 0.0;
    switch (spec.timbre) {
      case Timbre::kSine: v = std::sin(2.0 * std::numbers::pi * ph); break;
      case Timbre::kSquare: v = ph < 0.5 ? 1.0 : -1.0; break;
      case Timbre::kSaw: v = 2.0 * ph - 1.0; break;
      case Timbre::kTriangle: v = ph < 0.5 ? 4.0 * ph - 1.0 : 3.0 - 4.0 * ph; break;
    }
    double env = 1.0;
    if (ramp > 0) {
      if (i < ramp) env = static_cast<double>(i) / ramp;
      if (n - 1 - i < ramp) env = std::min(env, static_cast<double>(n - 1 - i) / ramp);
    }
    wave.samples[i] =
        static_cast<float>(spec.amplitude * env * v + spec.noise_level * rng.normal());
  }
  return wave;
}

std::vector<SyntheticClip> synthesize_corpus(const SyntheticCorpusSpec& spec,
                                             int sample_rate) {
  if (spec.num_timbres < 1 || spec.num_timbres > kNumTimbres) {
    throw std::invalid_argument("synthesize_corpus: num_timbres must be in [1, 4]");
  }
  if (spec.num_pitches < 1 || spec.clips_per_cell < 1 || spec.seconds <= 0) {
    throw std::invalid_argument("synthesize_corpus: empty grid");
  }
  std::vector<SyntheticClip> clips;
  for (int t = 0; t < spec.num_timbres; ++t) {
    for (int p = 0; p < spec.num_pitches; ++p) {
      for (int c = 0; c < spec.clips_per_cell; ++c) {
        ToneSpec tone;
        tone.timbre = static_cast<Timbre>(t);
        tone.midi = spec.base_midi + p * spec.pitch_step;
        tone.seconds = spec.seconds;
        tone.noise_level = spec.noise_level;
        tone.seed = derive_seed(spec.seed, {std::uint64_t(t), std::uint64_t(p),
                                            std::uint64_t(c)});
        Rng amp_rng(tone.seed ^ 0xa5a5a5a5ULL);
        tone.amplitude = 0.3 + 0.4 * amp_rng.uniform();
        SyntheticClip clip;
        clip.timbre = t;
        clip.midi = tone.midi;
        clip.name = std::string(timbre_name(tone.timbre)) + "_" +
                    std::to_string(tone.midi) + "_" + std::to_string(c);
        clip.wave = synthesize_tone(tone, sample_rate);
        clips.push_back(std::move(clip));
      }
    }
  }
  return clips;
}

void write_synthetic_corpus(const std::filesystem::path& dir,
                            const std::vector<SyntheticClip>& clips) {
  std::filesystem::create_directories(dir);
  nlohmann::json labels;
  labels["clips"] = nlohmann::json::array();
  for (const auto& clip : clips) {
    const std::string file = clip.name + ".wav";
    write_wav(dir / file, clip.wave);
    labels["clips"].push_back(
        {{"file", file}, {"pitch", clip.midi}, {"instrument", clip.timbre}});
  }
  std::ofstream out(dir / "labels.json");
  out << labels.dump(2) << '\n';
}

std::vector<Waveform> synthesize_melodies(const MelodyCorpusSpec& spec, int sample_rate) {
  if (spec.num_timbres < 1 || spec.num_timbres > kNumTimbres) {
    throw std::invalid_argument("synthesize_melodies: num_timbres must be in [1, 4]");
  }
  if (spec.num_pitches < 1 || spec.count < 0 || !(spec.seconds > 0) ||
      !(spec.min_note_seconds > 0) || spec.max_note_seconds < spec.min_note_seconds) {
    throw std::invalid_argument("synthesize_melodies: invalid spec");
  }
  const auto total = static_cast<std::size_t>(std::llround(spec.seconds * sample_rate));
  std::vector<Waveform> out;
  for (int i = 0; i < spec.count; ++i) {
    Rng rng(derive_seed(spec.seed, {1000, std::uint64_t(i)}));
    const auto timbre = static_cast<Timbre>(rng.uniform_int(spec.num_timbres));
    Waveform wave;
    wave.sample_rate = sample_rate;
    std::uint64_t note = 0;
    while (wave.samples.size() < total) {
      ToneSpec tone;
      tone.timbre = timbre;
      tone.midi = spec.base_midi +
                  static_cast<int>(rng.uniform_int(spec.num_pitches)) * spec.pitch_step;
      tone.seconds = spec.min_note_seconds +
                     (spec.max_note_seconds - spec.min_note_seconds) * rng.uniform();
      tone.amplitude = 0.3 + 0.4 * rng.uniform();
      tone.noise_level = spec.noise_level;
      tone.seed = derive_seed(spec.seed, {2000, std::uint64_t(i), note++});
      const auto w = synthesize_tone(tone, sample_rate);
      wave.samples.insert(wave.samples.end(), w.samples.begin(), w.samples.end());
    }
    wave.samples.resize(total);
    out.push_back(std::move(wave));
  }
  return out;
}

void write_melodies(const std::filesystem::path& dir, const std::vector<Waveform>& melodies) {
  std::filesystem::create_directories(dir);
  char name[32];
  for (std::size_t i = 0; i < melodies.size(); ++i) {
    std::snprintf(name, sizeof(name), "melody_%03zu.wav", i);
    write_wav(dir / name, melodies[i]);
  }
}

}  // namespace muquant
