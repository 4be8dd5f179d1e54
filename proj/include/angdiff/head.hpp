#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "angdiff/common.hpp"
#include "angdiff/optim.hpp"
#include "angdiff/param.hpp"
#include "angdiff/precision.hpp"
#include "angdiff/rng.hpp"
#include "angdiff/sampler.hpp"
#include "angdiff/schedule.hpp"

namespace angdiff {

class ToyDataset;

// Test hook: `linearized` replaces SiLU and the block layer norm by identity.
enum class HeadNonlinearity { standard, linearized };

struct HeadConfig {
  int token_dim = 2;
  int cond_dim = 0;
  int width = 128;
  int depth = 4;
  int steps = 1000;  // T; the time-embedding table has T + 1 rows
  HeadNonlinearity nonlinearity = HeadNonlinearity::standard;

  nlohmann::json to_json() const;
  static HeadConfig from_json(const nlohmann::json& j);
};

// Location of one tensor inside a flat parameter buffer (column-major).
struct Slot {
  std::size_t offset = 0;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows * cols); }
};

struct HeadBlockLayout {
  Slot ada_w, ada_b;  // condition embedding -> [scale; shift]
  Slot lin1_w, lin1_b;
  Slot lin2_w, lin2_b;
};

struct HeadLayout {
  Slot time_embed;  // width x (T + 1), column t is the embedding of step t
  Slot cond_w, cond_b;
  Slot in_w, in_b;
  std::vector<HeadBlockLayout> blocks;
  Slot out_w, out_b;
  std::size_t total = 0;

  explicit HeadLayout(const HeadConfig& cfg);
};

// Weights of the diffusion MLP: in_proj, `depth` AdaLN residual blocks
// (layer norm, condition-derived scale/shift, linear, SiLU, linear), out_proj.
// The condition vector z is projected and added to the time embedding; SiLU
// of that sum drives every block's scale/shift projection.
//
// All tensors live in one flat buffer so optimizers, EMA and checkpoints see a
// single vector.
class HeadParams {
 public:
  explicit HeadParams(HeadConfig cfg);  // all zeros
  static HeadParams init(const HeadConfig& cfg, Rng& rng);

  const HeadConfig& config() const { return cfg_; }
  const HeadLayout& layout() const { return layout_; }
  Vec& data() { return data_; }
  const Vec& data() const { return data_; }

  Eigen::Map<Eigen::MatrixXd> mat(const Slot& s) {
    return {data_.data() + s.offset, s.rows, s.cols};
  }
  Eigen::Map<const Eigen::MatrixXd> mat(const Slot& s) const {
    return {data_.data() + s.offset, s.rows, s.cols};
  }

 private:
  HeadConfig cfg_;
  HeadLayout layout_;
  Vec data_;
};

struct HeadBlockCache {
  Eigen::MatrixXd normed;   // layer-normed input
  Eigen::RowVectorXd inv_std;
  Eigen::MatrixXd mod;      // [scale; shift]
  Eigen::MatrixXd modulated;
  Eigen::MatrixXd pre_act;
  Eigen::MatrixXd act;
};

struct HeadCache {
  Eigen::MatrixXd x_t;
  Eigen::MatrixXd z;
  std::vector<int> t;
  Eigen::MatrixXd cond_pre;  // time embedding + projected z
  Eigen::MatrixXd cond_emb;  // SiLU of the above
  std::vector<HeadBlockCache> blocks;
  Eigen::MatrixXd hidden;    // input of out_proj
};

// Batched forward. x_t is token_dim x B, z is cond_dim x B, t has B entries.
// With pm in bf16-round mode every affine output and activation is rounded;
// other modes leave the forward untouched (output corruption is applied by
// the caller).
Eigen::MatrixXd head_forward(const HeadParams& hp, const Eigen::MatrixXd& x_t,
                             std::span<const int> t, const Eigen::MatrixXd& z,
                             const PrecisionModel& pm, HeadCache* cache = nullptr);

Vec head_forward(const HeadParams& hp, ConstSpan x_t, int t, ConstSpan z, const PrecisionModel& pm);

struct HeadGrads {
  Vec params;
  Eigen::MatrixXd x_t;
  Eigen::MatrixXd z;
};

// Reverse-mode gradients of the forward graph recorded in `cache`.
HeadGrads head_backward(const HeadParams& hp, const HeadCache& cache, const Eigen::MatrixXd& dout);

struct LossResult {
  double loss = 0.0;
  // Mean squared error of each (token, timestep) column.
  Vec per_sample;
  std::vector<int> t;
  HeadGrads grads;
};

// Mean over all entries of (outputs - targets)^2 and its gradient
// with respect to `outputs`.
double mse(const Eigen::MatrixXd& outputs, const Eigen::MatrixXd& targets,
           Eigen::MatrixXd* d_outputs = nullptr, Vec* per_column = nullptr);

// Diffusion loss with unit weights. x is token_dim x B and z cond_dim x B;
// each clean token is used with K = t_samples.size() / B timesteps, laid out
// as consecutive columns of eps_samples (token_dim x B*K). The head output is
// corrupted by `pm` before the loss; its backward treats rounding as identity
// and multiplicative corruption by its factor.
LossResult diffusion_loss(const HeadParams& hp, const Parameterization& p, const Schedule& s,
                          const Eigen::MatrixXd& x, const Eigen::MatrixXd& z,
                          std::span<const int> t_samples, const Eigen::MatrixXd& eps_samples,
                          const PrecisionModel& pm, Rng& rng, bool with_grads = true);

// diffusion_loss under v-prediction.
LossResult v_loss(const HeadParams& hp, const Schedule& s, const Eigen::MatrixXd& x,
                  const Eigen::MatrixXd& z, std::span<const int> t_samples,
                  const Eigen::MatrixXd& eps_samples, const PrecisionModel& pm, Rng& rng,
                  bool with_grads = true);

struct EmaState {
  HeadParams shadow;
  double momentum = 0.9999;
};

void ema_update(EmaState& e, const HeadParams& live);

struct HeadTrainConfig {
  HeadConfig head;
  Parameterization param = Parameterization::v_pred();
  ScheduleKind schedule_kind = ScheduleKind::cosine;
  int steps = 20000;
  int batch = 256;
  int timestep_samples = 1;  // K
  AdamWConfig optimizer;
  double ema_momentum = 0.9999;
  int t_buckets = 10;
  int log_every = 500;
  PrecisionModel precision;
  std::uint64_t seed = 0;
};

struct LossCurveRow {
  long step = 0;
  int t_bucket = -1;  // -1: all timesteps
  double mse = 0.0;
  long count = 0;
};

struct HeadTrainResult {
  HeadParams params;
  EmaState ema;
  std::vector<LossCurveRow> curve;
};

// Minibatch training of an unconditional head on dataset tokens. Aborts with
// std::runtime_error on a non-finite loss.
HeadTrainResult train_head(const HeadTrainConfig& cfg, const ToyDataset& ds);

// Bucket index of step t among `buckets` equal-width buckets over [1, T].
int t_bucket_of(int t, int T, int buckets);

// v-space MSE of a head trained under `p`, per timestep: the corrupted output
// is converted to v and compared to the true v of fresh (x, eps) draws.
Vec vspace_loss_by_t(const HeadParams& hp, const Parameterization& p, const Schedule& s,
                     const ToyDataset& ds, std::span<const int> ts, int samples_per_t,
                     const PrecisionModel& pm, Rng& rng);

// Draws `count` samples from an unconditional head with the given sampler,
// whitened space, token_dim x count.
Eigen::MatrixXd sample_head(const HeadParams& hp, const Parameterization& p, const Schedule& s,
                            int count, const SamplerConfig& sampler,
                            const PrecisionModel& pm, Rng& rng);

}  // namespace angdiff
