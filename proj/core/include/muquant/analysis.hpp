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

// muquant/analysis.hpp
//
// Codebook/label co-occurrence counts and canonical correlation analysis
// (mean CCA and projection-weighted CCA) between layer activations.

#ifndef MUQUANT_ANALYSIS_HPP_
#define MUQUANT_ANALYSIS_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "muquant/audio.hpp"
#include "muquant/checkpoint.hpp"
#include "muquant/model.hpp"
#include "muquant/quantizer.hpp"

namespace muquant {

// ---------------------------------------------------------------------------
// Co-occurrence

/// Integer counts [num_codes x num_labels], row-major.
struct CoOccurrenceMatrix {
  std::size_t num_codes = 0;
  std::size_t num_labels = 0;
  std::vector<std::uint64_t> counts;

  std::uint64_t at(std::size_t code, std::size_t label) const {
    return counts[code * num_labels + label];
  }
  std::uint64_t total() const;
  std::vector<std::uint64_t> column_sums() const;
  /// Rows divided by their sums; empty rows stay all-zero.
  std::vector<double> row_normalized() const;
};

/// The codes of one clip plus its clip-level label (applied to every frame).
struct LabeledCodes {
  CodeIndices codes;
  std::size_t label = 0;
};

/// Joint code id (V^G bins) against label.
CoOccurrenceMatrix cooccurrence(const std::vector<LabeledCodes>& clips, std::size_t num_labels);
/// Entry index of a single group (V bins) against label.
CoOccurrenceMatrix cooccurrence_group(const std::vector<LabeledCodes>& clips,
                                      std::size_t num_labels, std::size_t group);

/// Frame-weighted mean over non-empty rows of the label entropy (nats),
/// i.e. H(label | code).
double mean_label_entropy(const CoOccurrenceMatrix& m);

struct PermutationTest {
  double observed = 0.0;
  double baseline_mean = 0.0;
  double p_value = 1.0;
  std::size_t permutations = 0;
};

/// Compares mean_label_entropy of the joint matrix with the same statistic
/// after shuffling clip labels. p = (1 + #{shuffled <= observed}) / (1 + P).
PermutationTest label_entropy_permutation_test(const std::vector<LabeledCodes>& clips,
                                               std::size_t num_labels, std::size_t permutations,
                                               std::uint64_t seed);

/// CSV with a header row of labels and one row per code.
void write_cooccurrence_csv(const std::filesystem::path& path, const CoOccurrenceMatrix& m);
nlohmann::json cooccurrence_sidecar(const CoOccurrenceMatrix& m, const std::string& code_axis,
                                    const std::string& label_axis, std::size_t groups,
                                    std::size_t entries_per_group);

// ---------------------------------------------------------------------------
// CCA

/// Dense row-major matrix of doubles; rows are observations.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

class AnalysisError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CCAResult {
  std::vector<double> coefficients;  // descending, k = min(cols)
  Matrix directions_w;               // [cols(W) x k]
  Matrix directions_y;               // [cols(Y) x k]
  double mean_cca = 0.0;
  std::vector<double> pwcca_weights;
  double pwcca = 0.0;
};

/// Canonical correlations of the centered inputs through whitening plus SVD.
/// A ridge of 1e-8 * trace / dim is added to each covariance diagonal.
/// Throws AnalysisError when rows <= k or an input is non-finite.
CCAResult cca(const Matrix& w, const Matrix& y);
double pwcca(const Matrix& w, const Matrix& y);

// ---------------------------------------------------------------------------
// Layer profiles

/// Unmasked activations at `layer` (0 = encoder output, b = block b) as a
/// [frames x dim] matrix. Throws std::out_of_range for layer > num_blocks.
Matrix extract_layer_activations(const Checkpoint& ckpt, const Waveform& wave, std::size_t layer);

struct LayerSimilarity {
  std::size_t layer = 0;
  double mean_cca = 0.0;
  double pwcca = 0.0;
};

/// For each block b: CCA of its activations against the encoder output, with
/// frames pooled over the middle `segment_seconds` of every clip. Shorter
/// clips are skipped with a warning; if all are skipped, AnalysisError.
std::vector<LayerSimilarity> layer_similarity_profile(const Model<float>& model,
                                                      const std::vector<Waveform>& clips,
                                                      double segment_seconds = 4.0);
std::vector<LayerSimilarity> layer_similarity_profile(const Checkpoint& ckpt,
                                                      const std::vector<Waveform>& clips,
                                                      double segment_seconds = 4.0);

void write_profile_csv(const std::filesystem::path& path,
                       const std::vector<LayerSimilarity>& profile);

}  // namespace muquant

#endif  // MUQUANT_ANALYSIS_HPP_
