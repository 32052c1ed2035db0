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

#include "muquant/analysis.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "muquant/log.hpp"
#include "muquant/parallel.hpp"
#include "muquant/random.hpp"
#include "muquant/training.hpp"

namespace muquant {

// ---------------------------------------------------------------------------
// Co-occurrence

std::uint64_t CoOccurrenceMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

std::vector<std::uint64_t> CoOccurrenceMatrix::column_sums() const {
  std::vector<std::uint64_t> out(num_labels, 0);
  for (std::size_t c = 0; c < num_codes; ++c) {
    for (std::size_t y = 0; y < num_labels; ++y) out[y] += at(c, y);
  }
  return out;
}

std::vector<double> CoOccurrenceMatrix::row_normalized() const {
  std::vector<double> out(counts.size(), 0.0);
  for (std::size_t c = 0; c < num_codes; ++c) {
    std::uint64_t row = 0;
    for (std::size_t y = 0; y < num_labels; ++y) row += at(c, y);
    if (row == 0) continue;
    for (std::size_t y = 0; y < num_labels; ++y) {
      out[c * num_labels + y] = static_cast<double>(at(c, y)) / static_cast<double>(row);
    }
  }
  return out;
}

namespace {

void check_labels(const std::vector<LabeledCodes>& clips, std::size_t num_labels) {
  if (num_labels == 0) throw std::invalid_argument("cooccurrence: num_labels must be >= 1");
  for (const auto& clip : clips) {
    if (clip.label >= num_labels) {
      throw std::out_of_range("cooccurrence: label " + std::to_string(clip.label) +
                              " outside [0, " + std::to_string(num_labels) + ")");
    }
  }
}

std::size_t joint_size(const CodeIndices& codes) {
  std::size_t n = 1;
  for (std::size_t g = 0; g < codes.groups; ++g) n *= codes.entries_per_group;
  return n;
}

}  // namespace

CoOccurrenceMatrix cooccurrence(const std::vector<LabeledCodes>& clips, std::size_t num_labels) {
  check_labels(clips, num_labels);
  CoOccurrenceMatrix m;
  m.num_labels = num_labels;
  if (clips.empty()) return m;
  m.num_codes = joint_size(clips.front().codes);
  m.counts.assign(m.num_codes * num_labels, 0);
  for (const auto& clip : clips) {
    if (joint_size(clip.codes) != m.num_codes) {
      throw std::invalid_argument("cooccurrence: clips use different codebook sizes");
    }
    for (std::size_t t = 0; t < clip.codes.frames(); ++t) {
      ++m.counts[clip.codes.joint(t) * num_labels + clip.label];
    }
  }
  return m;
}

CoOccurrenceMatrix cooccurrence_group(const std::vector<LabeledCodes>& clips,
                                      std::size_t num_labels, std::size_t group) {
  check_labels(clips, num_labels);
  CoOccurrenceMatrix m;
  m.num_labels = num_labels;
  if (clips.empty()) return m;
  m.num_codes = clips.front().codes.entries_per_group;
  m.counts.assign(m.num_codes * num_labels, 0);
  for (const auto& clip : clips) {
    if (group >= clip.codes.groups) throw std::out_of_range("cooccurrence_group: bad group");
    for (std::size_t t = 0; t < clip.codes.frames(); ++t) {
      ++m.counts[clip.codes.at(t, group) * num_labels + clip.label];
    }
  }
  return m;
}

double mean_label_entropy(const CoOccurrenceMatrix& m) {
  const double total = static_cast<double>(m.total());
  if (total == 0) return 0.0;
  double h = 0.0;
  for (std::size_t c = 0; c < m.num_codes; ++c) {
    std::uint64_t row = 0;
    for (std::size_t y = 0; y < m.num_labels; ++y) row += m.at(c, y);
    if (row == 0) continue;
    double row_h = 0.0;
    for (std::size_t y = 0; y < m.num_labels; ++y) {
      if (m.at(c, y) == 0) continue;
      const double p = static_cast<double>(m.at(c, y)) / static_cast<double>(row);
      row_h -= p * std::log(p);
    }
    h += static_cast<double>(row) / total * row_h;
  }
  return h;
}

PermutationTest label_entropy_permutation_test(const std::vector<LabeledCodes>& clips,
                                               std::size_t num_labels, std::size_t permutations,
                                               std::uint64_t seed) {
  PermutationTest out;
  out.permutations = permutations;
  out.observed = mean_label_entropy(cooccurrence(clips, num_labels));
  if (permutations == 0) return out;
  Rng rng(seed);
  auto shuffled = clips;
  std::vector<std::size_t> labels;
  for (const auto& c : clips) labels.push_back(c.label);
  std::size_t at_or_below = 0;
  double sum = 0.0;
  for (std::size_t p = 0; p < permutations; ++p) {
    for (std::size_t i = labels.size(); i > 1; --i) {
      std::swap(labels[i - 1], labels[rng.uniform_int(i)]);
    }
    for (std::size_t i = 0; i < labels.size(); ++i) shuffled[i].label = labels[i];
    const double h = mean_label_entropy(cooccurrence(shuffled, num_labels));
    sum += h;
    if (h <= out.observed) ++at_or_below;
  }
  out.baseline_mean = sum / static_cast<double>(permutations);
  out.p_value = static_cast<double>(1 + at_or_below) / static_cast<double>(1 + permutations);
  return out;
}

void write_cooccurrence_csv(const std::filesystem::path& path, const CoOccurrenceMatrix& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "code";
  for (std::size_t y = 0; y < m.num_labels; ++y) out << ',' << y;
  out << '\n';
  for (std::size_t c = 0; c < m.num_codes; ++c) {
    out << c;
    for (std::size_t y = 0; y < m.num_labels; ++y) out << ',' << m.at(c, y);
    out << '\n';
  }
}

nlohmann::json cooccurrence_sidecar(const CoOccurrenceMatrix& m, const std::string& code_axis,
                                    const std::string& label_axis, std::size_t groups,
                                    std::size_t entries_per_group) {
  return {{"code_axis", code_axis},     {"label_axis", label_axis},
          {"num_codes", m.num_codes},   {"num_labels", m.num_labels},
          {"groups", groups},           {"entries_per_group", entries_per_group},
          {"total", m.total()},         {"mean_label_entropy", mean_label_entropy(m)}};
}

// ---------------------------------------------------------------------------
// CCA

namespace {

using Mat = Eigen::MatrixXd;

Mat centered(const Matrix& m, const char* which) {
  Mat out(m.rows, m.cols);
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) {
      const double v = m(r, c);
      if (!std::isfinite(v)) throw AnalysisError(std::string("cca: non-finite value in ") + which);
      out(r, c) = v;
    }
  }
  out.rowwise() -= out.colwise().mean();
  return out;
}

// Inverse square root of a ridge-regularized covariance.
Mat inverse_sqrt(Mat cov, const char* which) {
  const double trace = cov.trace();
  if (!(trace > 0)) throw AnalysisError(std::string("cca: zero variance in ") + which);
  cov.diagonal().array() += 1e-8 * trace / static_cast<double>(cov.rows());
  Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
  const auto& vals = eig.eigenvalues();
  Eigen::VectorXd inv = vals.unaryExpr([](double v) { return 1.0 / std::sqrt(std::max(v, 1e-300)); });
  return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
}

Matrix to_matrix(const Mat& m) {
  Matrix out(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out(r, c) = m(r, c);
  }
  return out;
}

}  // namespace

CCAResult cca(const Matrix& w, const Matrix& y) {
  if (w.rows != y.rows) {
    throw AnalysisError("cca: row counts differ (" + std::to_string(w.rows) + " vs " +
                        std::to_string(y.rows) + ")");
  }
  if (w.cols == 0 || y.cols == 0) throw AnalysisError("cca: empty input");
  const std::size_t k = std::min(w.cols, y.cols);
  if (w.rows <= k) {
    throw AnalysisError("cca: need more rows than k (rows " + std::to_string(w.rows) + ", k " +
                        std::to_string(k) + ")");
  }
  const Mat wc = centered(w, "W");
  const Mat yc = centered(y, "Y");
  const double denom = static_cast<double>(w.rows - 1);
  const Mat cww = wc.transpose() * wc / denom;
  const Mat cyy = yc.transpose() * yc / denom;
  const Mat cwy = wc.transpose() * yc / denom;
  const Mat sw = inverse_sqrt(cww, "W");
  const Mat sy = inverse_sqrt(cyy, "Y");

  Eigen::JacobiSVD<Mat> svd(sw * cwy * sy, Eigen::ComputeThinU | Eigen::ComputeThinV);
  CCAResult out;
  const auto& sv = svd.singularValues();
  for (std::size_t i = 0; i < k; ++i) out.coefficients.push_back(std::clamp(sv(i), 0.0, 1.0));
  const Mat aw = sw * svd.matrixU().leftCols(k);
  const Mat ay = sy * svd.matrixV().leftCols(k);
  out.directions_w = to_matrix(aw);
  out.directions_y = to_matrix(ay);
  out.mean_cca = std::accumulate(out.coefficients.begin(), out.coefficients.end(), 0.0) /
                 static_cast<double>(k);

  // Projection weights: how much of W each canonical variable accounts for.
  const Mat h = wc * aw;                // [n x k] canonical variables
  const Mat overlap = h.transpose() * wc;  // [k x cols(W)]
  std::vector<double> alpha(k);
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    alpha[i] = overlap.row(static_cast<Eigen::Index>(i)).cwiseAbs().sum();
    total += alpha[i];
  }
  for (auto& a : alpha) a = total > 0 ? a / total : 1.0 / static_cast<double>(k);
  out.pwcca_weights = alpha;
  out.pwcca = 0.0;
  for (std::size_t i = 0; i < k; ++i) out.pwcca += alpha[i] * out.coefficients[i];
  return out;
}

double pwcca(const Matrix& w, const Matrix& y) { return cca(w, y).pwcca; }

// ---------------------------------------------------------------------------
// Layer profiles

namespace {

Matrix tensor_to_matrix(const Tensor<float>& t) {
  Matrix out(t.dim(0), t.dim(1));
  const auto d = t.data();
  std::copy(d.begin(), d.end(), out.data.begin());
  return out;
}

}  // namespace

Matrix extract_layer_activations(const Checkpoint& ckpt, const Waveform& wave, std::size_t layer) {
  const Model<float> model = model_from_checkpoint(ckpt);
  const std::size_t blocks = model.config().context.num_blocks;
  if (layer > blocks) {
    throw std::out_of_range("layer " + std::to_string(layer) + " outside [0, " +
                            std::to_string(blocks) + "]");
  }
  return tensor_to_matrix(model.layer_activations(wave).at(layer));
}

std::vector<LayerSimilarity> layer_similarity_profile(const Model<float>& model,
                                                      const std::vector<Waveform>& clips,
                                                      double segment_seconds) {
  if (!(segment_seconds > 0)) throw std::invalid_argument("segment_seconds must be > 0");
  const std::size_t blocks = model.config().context.num_blocks;
  std::vector<const Waveform*> usable;
  std::vector<std::size_t> lengths;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const auto need =
        static_cast<std::size_t>(std::llround(segment_seconds * clips[i].sample_rate));
    if (clips[i].samples.size() < need) {
      log_warning("clip " + std::to_string(i) + " shorter than " + std::to_string(segment_seconds) +
                  " s; skipped");
      continue;
    }
    usable.push_back(&clips[i]);
    lengths.push_back(need);
  }
  if (usable.empty()) throw AnalysisError("layer profile: every clip was skipped");

  const std::size_t workers = worker_count();
  std::vector<std::vector<Tensor<float>>> acts(usable.size());
  parallel_for(usable.size(), workers, [&](std::size_t i) {
    acts[i] = model.layer_activations(center_crop(*usable[i], lengths[i]));
  });

  std::size_t rows = 0;
  for (const auto& a : acts) rows += a.front().dim(0);
  std::vector<Matrix> pooled(blocks + 1);
  for (std::size_t l = 0; l <= blocks; ++l) {
    pooled[l] = Matrix(rows, acts.front()[l].dim(1));
    std::size_t offset = 0;
    for (const auto& a : acts) {
      const auto d = a[l].data();
      std::copy(d.begin(), d.end(), pooled[l].data.begin() + offset * pooled[l].cols);
      offset += a[l].dim(0);
    }
  }

  std::vector<LayerSimilarity> profile(blocks);
  parallel_for(blocks, workers, [&](std::size_t b) {
    const auto r = cca(pooled[b + 1], pooled[0]);
    profile[b] = {b + 1, r.mean_cca, r.pwcca};
  });
  return profile;
}

std::vector<LayerSimilarity> layer_similarity_profile(const Checkpoint& ckpt,
                                                      const std::vector<Waveform>& clips,
                                                      double segment_seconds) {
  return layer_similarity_profile(model_from_checkpoint(ckpt), clips, segment_seconds);
}

void write_profile_csv(const std::filesystem::path& path,
                       const std::vector<LayerSimilarity>& profile) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "layer,mean_cca,pwcca\n";
  char line[96];
  for (const auto& p : profile) {
    std::snprintf(line, sizeof(line), "%zu,%.10f,%.10f\n", p.layer, p.mean_cca, p.pwcca);
    out << line;
  }
}

}  // namespace muquant
