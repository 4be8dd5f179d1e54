#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "angdiff/common.hpp"
#include "angdiff/param.hpp"
#include "angdiff/rng.hpp"
#include "angdiff/schedule.hpp"

namespace angdiff {

enum class DatasetKind { gmm2d, checkerboard, correlated_grid };

std::string to_string(DatasetKind kind);
DatasetKind dataset_kind_from_string(std::string_view name);

struct GmmComponent {
  Vec mean;
  Vec stddev;  // diagonal
  double weight = 1.0;
};

struct CheckerboardSpec {
  int cells = 4;
  double half_width = 2.0;
};

// Grid of n tokens sharing a latent mode k (the label) and a per-grid offset:
//   token_i = m_k + o + c_i + token_std * noise_i
// with m_k on a circle of `radius`, o ~ N(0, offset_std^2 I) and c_i a small
// position-dependent displacement of magnitude position_amp.
struct CorrelatedGridSpec {
  int n = 16;
  int modes = 8;
  double radius = 3.0;
  double offset_std = 0.5;
  double token_std = 0.15;
  double position_amp = 0.3;
};

// Synthetic continuous-token distribution with known ground truth. Samples
// are whitened with closed-form moments so every component has zero mean and
// unit variance.
class ToyDataset {
 public:
  static ToyDataset gmm2d(std::vector<GmmComponent> components, bool labeled = false);
  // Eight isotropic modes on a circle of radius 4, std 0.35.
  static ToyDataset default_gmm2d(bool labeled = false);
  static ToyDataset checkerboard(CheckerboardSpec spec = {});
  static ToyDataset correlated_grid(CorrelatedGridSpec spec = {});
  static ToyDataset from_manifest(const nlohmann::json& j);

  DatasetKind kind() const { return kind_; }
  int dim() const { return dim_; }
  int tokens_per_sample() const { return tokens_; }
  // 0 for unlabeled data.
  int num_labels() const { return num_labels_; }

  const Vec& norm_mean() const { return mean_; }
  const Vec& norm_std() const { return std_; }
  const std::vector<GmmComponent>& components() const { return components_; }
  const CheckerboardSpec& checkerboard_spec() const { return board_; }
  const CorrelatedGridSpec& grid_spec() const { return grid_; }

  void whiten_inplace(Eigen::Ref<Eigen::MatrixXd> tokens) const;
  void unwhiten_inplace(Eigen::Ref<Eigen::MatrixXd> tokens) const;

  // Raw (unwhitened) draw of one sample: dim x tokens_per_sample.
  Eigen::MatrixXd draw_raw(Rng& rng, int* label) const;
  // Raw draw with the label fixed.
  Eigen::MatrixXd draw_raw_with_label(Rng& rng, int label) const;

  nlohmann::json manifest() const;

 private:
  ToyDataset() = default;
  void finalize_moments();

  DatasetKind kind_ = DatasetKind::gmm2d;
  int dim_ = 2;
  int tokens_ = 1;
  int num_labels_ = 0;
  bool labeled_ = false;
  std::vector<GmmComponent> components_;
  CheckerboardSpec board_;
  CorrelatedGridSpec grid_;
  Vec mean_;
  Vec std_;
};

struct GridSample {
  Eigen::MatrixXd tokens;  // whitened, dim x n
  int label = -1;
};

std::vector<GridSample> sample_dataset(const ToyDataset& ds, int count, Rng& rng);
// Same, every sample drawn with `label`.
std::vector<GridSample> sample_dataset_with_label(const ToyDataset& ds, int count, int label,
                                                  Rng& rng);

// `count` whitened tokens (dim x count). Grid datasets contribute whole grids,
// so consecutive columns can be correlated.
Eigen::MatrixXd sample_tokens(const ToyDataset& ds, int count, Rng& rng,
                              std::vector<int>* labels = nullptr);

// KL(P_a || P_b) between 2D (or 1D) histograms of the two sample sets, each
// cell smoothed with +0.5 counts. The grid spans the reference set `b`
// padded by 10% per side; points outside are clamped to the border cells.
// Asymmetric: pass generated samples as `a`, reference as `b`.
double hist_kl(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, int bins);

// Unbiased MMD^2 with k(x, y) = exp(-|x - y|^2 / (2 bandwidth^2)).
double mmd_rbf(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double bandwidth);

// Standard deviation of mmd_rbf under random relabelling of the pooled sets.
double mmd_permutation_std(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double bandwidth,
                           int permutations, Rng& rng);

// Exact posterior-mean denoiser for a Gaussian-mixture dataset, in whitened
// coordinates. Inputs may hold several tokens back to back.
class GmmOracle {
 public:
  GmmOracle(const ToyDataset& ds, Schedule schedule);

  // E[x | x_t], restricted to component `label` when label >= 0.
  Vec posterior_mean(int t, ConstSpan x_t, int label = -1) const;
  // Posterior mean expressed as a model output under `p`.
  Vec predict(const Parameterization& p, int t, ConstSpan x_t, int label = -1) const;

 private:
  Schedule schedule_;
  int dim_;
  std::vector<Vec> means_;
  std::vector<Vec> vars_;
  Vec log_weights_;
};

}  // namespace angdiff
