#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "angdiff/head.hpp"
#include "angdiff/optim.hpp"
#include "angdiff/param.hpp"
#include "angdiff/precision.hpp"
#include "angdiff/rng.hpp"
#include "angdiff/sampler.hpp"
#include "angdiff/schedule.hpp"
#include "angdiff/toyspace.hpp"

namespace angdiff {

// Label value selecting the learned null condition.
inline constexpr int kNullLabel = -1;

// n continuous tokens with mask state. Column j of `values` holds the token
// whose position id is positions[j]; storage order carries no meaning.
struct TokenGrid {
  int n = 0;
  int d = 0;
  Eigen::MatrixXd values;          // d x n
  std::vector<std::uint8_t> mask;  // 1 = unknown
  std::vector<int> positions;      // permutation of 0..n-1
  int label = kNullLabel;

  static TokenGrid all_masked(int n, int d, int label = kNullLabel);
  static TokenGrid from_tokens(const Eigen::MatrixXd& tokens, int label);

  void validate() const;
  int masked_count() const;
  // Storage index of every position id.
  std::vector<int> index_of_position() const;
};

enum class MaskStage { stage1, stage2, custom };

// Mask-ratio distribution: ratio ~ U(lo, hi], so a ratio of exactly `lo` is
// never drawn and stage 2's (0, 1] never masks zero tokens.
struct MaskSchedule {
  double lo = 0.7;
  double hi = 1.0;
  MaskStage stage = MaskStage::stage1;

  static MaskSchedule stage1() { return {0.7, 1.0, MaskStage::stage1}; }
  static MaskSchedule stage2() { return {0.0, 1.0, MaskStage::stage2}; }
};

double draw_mask_ratio(const MaskSchedule& ms, Rng& rng);
// ceil(ratio * n) positions masked, chosen uniformly without replacement.
std::vector<std::uint8_t> draw_mask(const MaskSchedule& ms, int n, Rng& rng,
                                    double* ratio_out = nullptr);

struct ConditionerConfig {
  int token_dim = 2;
  int positions = 16;
  int num_labels = 8;
  int width = 128;
  int layers = 2;
  int ffn_mult = 2;
  int cond_dim = 128;

  nlohmann::json to_json() const;
  static ConditionerConfig from_json(const nlohmann::json& j);
};

struct ConditionerLayerLayout {
  Slot wq, wk, wv, wo, bo;
  Slot w1, b1, w2, b2;
};

struct ConditionerLayout {
  Slot tok_w, tok_b;
  Slot mask_embed;
  Slot pos_embed;    // width x positions
  Slot label_embed;  // width x (num_labels + 1); the last column is the null label
  std::vector<ConditionerLayerLayout> layers;
  Slot out_w, out_b;
  std::size_t total = 0;

  explicit ConditionerLayout(const ConditionerConfig& cfg);
};

// Set-attention encoder standing in for the language-model backbone. Inputs
// are a label token plus one token per position: the projected value for
// known positions or the learned mask embedding, plus a learned positional
// embedding. Each layer is pre-norm single-head bidirectional attention
// followed by a SiLU MLP; the output at each masked position is projected to
// the head's condition vector z.
class ConditionerParams {
 public:
  explicit ConditionerParams(ConditionerConfig cfg);
  static ConditionerParams init(const ConditionerConfig& cfg, Rng& rng);

  const ConditionerConfig& config() const { return cfg_; }
  const ConditionerLayout& layout() const { return layout_; }
  Vec& data() { return data_; }
  const Vec& data() const { return data_; }

  Eigen::Map<Eigen::MatrixXd> mat(const Slot& s) { return {data_.data() + s.offset, s.rows, s.cols}; }
  Eigen::Map<const Eigen::MatrixXd> mat(const Slot& s) const {
    return {data_.data() + s.offset, s.rows, s.cols};
  }

 private:
  ConditionerConfig cfg_;
  ConditionerLayout layout_;
  Vec data_;
};

struct ConditionerLayerCache {
  Eigen::MatrixXd n1;
  Eigen::RowVectorXd inv1;
  Eigen::MatrixXd q, k, v, attn, o;
  Eigen::MatrixXd n2;
  Eigen::RowVectorXd inv2;
  Eigen::MatrixXd pre, act;
};

struct ConditionerCache {
  std::vector<int> order;  // storage index per position id
  std::vector<std::uint8_t> masked_by_position;
  Eigen::MatrixXd tokens_by_position;
  int label_column = 0;
  std::vector<ConditionerLayerCache> layers;
  Eigen::MatrixXd final_normed;
  Eigen::RowVectorXd final_inv;
};

struct ConditionerOutput {
  Eigen::MatrixXd z;           // cond_dim x masked count
  std::vector<int> positions;  // position id of each column, increasing
};

// Condition vectors for every masked position, computed in position-id order
// so the result does not depend on how the grid is stored.
ConditionerOutput conditioner_forward(const ConditionerParams& cp, const TokenGrid& grid, int label,
                                      ConditionerCache* cache = nullptr);

// Parameter gradient given dL/dz for the columns of the forward output.
Vec conditioner_backward(const ConditionerParams& cp, const ConditionerCache& cache,
                         const Eigen::MatrixXd& dz);

struct ArgenModel {
  ConditionerParams conditioner;
  HeadParams head;
};

struct ArgenStageConfig {
  MaskSchedule mask = MaskSchedule::stage1();
  int steps = 1000;
  int timestep_samples = 1;  // K
};

struct ArgenTrainConfig {
  ConditionerConfig conditioner;
  HeadConfig head;
  Parameterization param = Parameterization::v_pred();
  ScheduleKind schedule_kind = ScheduleKind::cosine;
  ArgenStageConfig stage1{MaskSchedule::stage1(), 1000, 1};
  ArgenStageConfig stage2{MaskSchedule::stage2(), 1000, 4};
  int batch_grids = 32;
  // Fraction of examples trained with the null label (the 9:1 task mix).
  double uncond_prob = 0.1;
  AdamWConfig optimizer;
  double ema_momentum = 0.9999;
  int log_every = 100;
  int t_buckets = 10;
  int ratio_buckets = 10;
  PrecisionModel precision;
  std::uint64_t seed = 0;
};

struct RatioCurveRow {
  long step = 0;
  int ratio_bucket = 0;
  double mse = 0.0;
  long count = 0;
};

struct ArgenTrainResult {
  ArgenModel live;
  ArgenModel ema;
  std::vector<LossCurveRow> curve;
  std::vector<RatioCurveRow> ratio_curve;
  long steps_done = 0;
};

ArgenModel init_argen_model(const ArgenTrainConfig& cfg);

// One training stage starting from `start` (live) and `start_ema`. Fresh
// optimizer state; RNG streams derive from (seed, stage_index).
ArgenTrainResult train_argen_stage(const ArgenTrainConfig& cfg, const ToyDataset& ds,
                                   const ArgenStageConfig& stage, int stage_index,
                                   const ArgenModel& start, const ArgenModel& start_ema,
                                   long step_offset = 0);

// Stage 1 then stage 2.
ArgenTrainResult train_argen(const ArgenTrainConfig& cfg, const ToyDataset& ds);

// Condition vectors for `positions` (all masked in `grid`): cond_dim x |positions|.
using ConditionFn =
    std::function<Eigen::MatrixXd(const TokenGrid& grid, int label, std::span<const int> positions)>;
// Batched denoiser over tokens: x_t is d x M, z is cond_dim x M.
using TokenDenoiseFn =
    std::function<Eigen::MatrixXd(const Eigen::MatrixXd& x_t, int t, const Eigen::MatrixXd& z)>;

struct GenerateConfig {
  int n = 16;
  int d = 2;
  GuidanceConfig guidance;
  int tokens_per_step = 4;  // N
  SamplerConfig sampler;
  PrecisionModel precision;
  Parameterization param = Parameterization::v_pred();
};

// Iterative masked generation of one grid per entry of `labels`. Each grid
// draws a random position order and fills N positions per round with the
// diffusion sampler, guided when omega != 1. Grid i uses RNG stream i of
// `seed`, so a grid does not depend on the rest of the batch.
std::vector<TokenGrid> generate_batch(const ConditionFn& condition, const TokenDenoiseFn& denoise,
                                      const Schedule& s, std::span<const int> labels,
                                      const GenerateConfig& cfg, std::uint64_t seed);

std::vector<TokenGrid> generate_batch(const ArgenModel& model, const Schedule& s,
                                      std::span<const int> labels, const GenerateConfig& cfg,
                                      std::uint64_t seed);

TokenGrid generate(const ArgenModel& model, const Schedule& s, int label, const GenerateConfig& cfg,
                   std::uint64_t seed);

// Masked-token training loss of `model` on fixed grids, masks and noise draws,
// with masked positions visited in position-id order.
double argen_eval_loss(const ArgenModel& model, const Parameterization& p, const Schedule& s,
                       const std::vector<TokenGrid>& grids, const std::vector<int>& labels,
                       std::uint64_t noise_seed, int timestep_samples = 1);

}  // namespace angdiff
