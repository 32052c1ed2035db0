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

// muquant/audio.hpp
//
// Mono waveforms, 16-bit PCM WAV I/O, and the seeded synthetic tone corpus.

#ifndef MUQUANT_AUDIO_HPP_
#define MUQUANT_AUDIO_HPP_

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace muquant {

inline constexpr int kDefaultSampleRate = 16000;

struct Waveform {
  std::vector<float> samples;
  int sample_rate = kDefaultSampleRate;

  double duration_seconds() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

class WavError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reads a RIFF/WAVE file holding 16-bit PCM mono audio.
Waveform read_wav(const std::filesystem::path& path);
/// Reads only the header; returns (frame count, sample rate).
std::pair<std::size_t, int> probe_wav(const std::filesystem::path& path);
/// Writes 16-bit PCM mono; samples are clipped to [-1, 1].
void write_wav(const std::filesystem::path& path, const Waveform& wave);

/// Copy of samples [start, start + count), zero-padded past the end.
Waveform crop(const Waveform& wave, std::size_t start, std::size_t count);
/// The middle `count` samples (or the whole clip zero-padded when shorter).
Waveform center_crop(const Waveform& wave, std::size_t count);

enum class Timbre { kSine = 0, kSquare = 1, kSaw = 2, kTriangle = 3 };
inline constexpr int kNumTimbres = 4;

std::string_view timbre_name(Timbre timbre);
double midi_to_hz(int midi);

struct ToneSpec {
  Timbre timbre = Timbre::kSine;
  int midi = 60;
  double seconds = 1.0;
  double amplitude = 0.5;
  double noise_level = 0.01;
  std::uint64_t seed = 0;
};

/// One synthetic note with a short attack/release envelope, random phase and
/// seeded additive noise.
Waveform synthesize_tone(const ToneSpec& spec, int sample_rate = kDefaultSampleRate);

struct SyntheticClip {
  std::string name;
  int timbre = 0;
  int midi = 0;
  Waveform wave;
};

struct SyntheticCorpusSpec {
  int num_timbres = kNumTimbres;
  int num_pitches = 16;
  int base_midi = 48;
  int pitch_step = 1;
  int clips_per_cell = 1;
  double seconds = 4.0;
  double noise_level = 0.01;
  std::uint64_t seed = 0;
};

/// Timbre x pitch grid of clips, ordered timbre-major then pitch then copy.
std::vector<SyntheticClip> synthesize_corpus(const SyntheticCorpusSpec& spec,
                                             int sample_rate = kDefaultSampleRate);

/// Writes clips as WAVs plus a labels.json ({"clips": [{file, pitch,
/// instrument}]}) into `dir`.
void write_synthetic_corpus(const std::filesystem::path& dir,
                            const std::vector<SyntheticClip>& clips);

/// Unlabeled pre-training material: each file is one timbre playing a random
/// sequence of grid pitches with random note lengths.
struct MelodyCorpusSpec {
  int num_timbres = kNumTimbres;
  int num_pitches = 16;
  int base_midi = 48;
  int pitch_step = 1;
  int count = 32;
  double seconds = 8.0;
  double min_note_seconds = 0.1;
  double max_note_seconds = 0.3;
  double noise_level = 0.01;
  std::uint64_t seed = 0;
};

std::vector<Waveform> synthesize_melodies(const MelodyCorpusSpec& spec,
                                          int sample_rate = kDefaultSampleRate);
/// Writes melody_NNN.wav files into `dir`.
void write_melodies(const std::filesystem::path& dir, const std::vector<Waveform>& melodies);

}  // namespace muquant

#endif  // MUQUANT_AUDIO_HPP_
