#pragma once

#include "micmco/trainer.hpp"

#include <optional>
#include <string>

namespace micmco {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Flat key=value run configuration ('#' comments, one pair per line).
/// Unknown keys are rejected; missing keys take the documented defaults;
/// ObjectiveConfig constraints are enforced at parse time.
struct ConfigFile {
  LatentKind latent_kind = LatentKind::continuous;
  std::optional<int> n_latents;             // default 40 continuous / 8 categorical
  int n_categories = 10;
  int vocab_size = 10000;
  int hidden_size = 128;
  int emb_size = 128;
  std::optional<BaseEstimator> base;        // default dreg continuous / vimco categorical
  int k_lik = 16;
  int k_mi = 16;
  ObjectiveKind objective = ObjectiveKind::kl;
  double lambda = 0.0;
  double alpha = 2.0;
  double lr = 1e-3;
  int batch_size = 256;
  int64_t steps = 40000;
  uint64_t seed = 1;
  double l2 = 0.0;
  int64_t eval_every = 1000;
  int eval_k = 100;
  std::string out_dir = "runs/out";

  bool lambda_was_set = false;
  bool alpha_was_set = false;

  static ConfigFile parse_string(const std::string& text);
  static ConfigFile parse_file(const std::string& path);

  LatentSpec latent_spec() const;
  ObjectiveConfig objective_config() const;
  TrainConfig train_config() const;
};

}  // namespace micmco
