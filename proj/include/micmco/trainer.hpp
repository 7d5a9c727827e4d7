#pragma once

#include "micmco/objectives.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace micmco {

struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.0;  // first moment disabled
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Eigen::ArrayXd> m;
  std::vector<Eigen::ArrayXd> v;
  int64_t t = 0;

  void init(const ModelParams& params);
};

/// One bias-corrected Adam update. Validates every gradient before touching
/// the parameters; a non-finite gradient raises TrainError naming the tensor.
void adam_step(AdamState& state, ModelParams& params, std::span<const Tensor> grads,
               const AdamConfig& cfg);

/// coeff * sum of squared weight entries; biases excluded.
Var l2_penalty(const ModelOnTape& m, double coeff);

enum class DatasetKind { synthetic_uniform, file };

/// The data distribution p_D(x): i.i.d. uniform symbols, or an empirical list.
struct Dataset {
  DatasetKind kind = DatasetKind::synthetic_uniform;
  int vocab = 0;
  std::vector<int> symbols;

  static Dataset synthetic(int vocab);
  static Dataset from_symbols(int vocab, std::vector<int> symbols);
  std::vector<int> sample(int n, RngStream& rng) const;
};

std::vector<int> make_synthetic_batch(int vocab, int n, RngStream& rng);

/// The canonical evaluation sample: a fixed draw from p_D shared by every run
/// so that metric trajectories are comparable and re-evaluations differ only
/// in their latent sampling.
std::vector<int> eval_symbols(const Dataset& data, int n);

struct MetricsRow {
  int64_t step = 0;
  double nll = 0.0;
  double avg_kl = 0.0;
  double lambda = 0.0;
  double alpha = 0.0;
  std::string base;
  int k_lik = 1;
  int k_mi = 1;
  uint64_t seed = 0;
  double wall_time_s = 0.0;
};

struct TrainConfig {
  LatentSpec spec;
  int vocab = 10000;
  int hidden = 128;
  int emb = 128;
  ObjectiveConfig objective;
  double lr = 1e-3;
  int batch_size = 256;
  int64_t steps = 40000;
  uint64_t seed = 1;
  double l2 = 0.0;
  int64_t eval_every = 1000;
  int eval_k = 100;
  int eval_examples = 1024;
  Dataset data;  // defaults to synthetic_uniform over vocab
};

struct TrainResult {
  std::vector<MetricsRow> history;
  ModelParams params;
  bool aborted = false;
  std::string abort_reason;
  int64_t abort_step = -1;
  double elapsed_s = 0.0;
};

/// Adam loop over minibatches: draw batch, build the configured objective,
/// backprop the negated surrogate plus L2, update. Metrics are recorded every
/// eval_every steps and at the final step. Fully deterministic under
/// (config, seed); rows carry wall_time_s = 0 for that reason, and measured
/// time is reported through `log` and TrainResult::elapsed_s.
TrainResult train(const TrainConfig& cfg, std::ostream* log = nullptr);

}  // namespace micmco
