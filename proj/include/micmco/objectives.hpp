#pragma once

#include "micmco/model.hpp"

#include <map>
#include <string>

namespace micmco {

/// The base choice couples the marginal-likelihood estimator form with its
/// gradient estimator: elbo_* and iwae use plain reparameterization, stl and
/// dreg block the proposal's direct score term, reinforce and vimco are
/// score-function estimators for categorical latents.
enum class BaseEstimator {
  elbo_analytic,
  elbo_sampled,
  iwae,
  stl,
  dreg,
  reinforce,
  vimco,
};

enum class ObjectiveKind { none, kl, renyi, power };

std::string to_string(BaseEstimator b);
std::string to_string(ObjectiveKind k);
BaseEstimator base_from_string(const std::string& s);
ObjectiveKind objective_from_string(const std::string& s);

constexpr double kLambdaMin = -0.05;
constexpr double kLambdaMax = 0.9999;
constexpr double kAlphaSingularity = 1e-6;

struct ObjectiveConfig {
  BaseEstimator base = BaseEstimator::iwae;
  int k_lik = 1;
  int k_mi = 1;
  ObjectiveKind objective = ObjectiveKind::none;
  double lambda = 0.0;
  double alpha = 2.0;

  /// For the power objective lambda is tied to alpha as (alpha-1)/alpha.
  double effective_lambda() const {
    return objective == ObjectiveKind::power ? (alpha - 1.0) / alpha : lambda;
  }
  bool uses_mi_batch() const {
    return objective == ObjectiveKind::kl || objective == ObjectiveKind::renyi;
  }
  /// Throws std::invalid_argument on any inconsistent combination.
  void validate(LatentKind kind) const;
};

/// Which auxiliary views draw_log_weights must materialize for the estimator.
struct SurrogateNeeds {
  bool prop_pdet = false;    // ln q with proposal parameters detached, z live
  bool zdet = false;         // decoder/prior re-evaluated on detached z
  bool thdet = false;        // decoder re-evaluated with theta detached, z live
  bool kl_analytic = false;  // analytic KL(q || prior)
};

SurrogateNeeds surrogate_needs(BaseEstimator base, LatentKind kind);

/// K proposal samples for a batch of B examples: the (B,K) log-weight triples
/// ln p(x|z_i), ln p(z_i), ln q(z_i|x) as tape nodes, the derived
/// ell = ln p(x|z) + ln p(z) - ln q(z|x), and any estimator-specific views.
struct LogWeightBatch {
  int batch = 0;
  int k = 0;
  Var log_lik;
  Var log_prior;
  Var log_prop;
  Var ell;
  Tensor noise;  // the reparameterization draw (continuous latents)

  Var kl_analytic;  // (B); continuous + elbo_analytic only

  // stop-gradient views; identical values, different gradient flow
  Var log_prop_pdet;   // q-params blocked, path through z kept
  Var log_lik_zdet;    // z blocked, theta live
  Var log_prior_zdet;  // z blocked
  Var log_prop_dead;   // fully blocked ln q
  Var log_lik_thdet;   // theta blocked, z live
};

LogWeightBatch draw_log_weights(const ModelOnTape& m, std::span<const int> xs, int k,
                                RngStream& rng, const SurrogateNeeds& needs = {});

/// Multi-sample importance-weighted evidence estimate per row:
/// logsumexp_i(ell_i) - ln K.
Var s_hat_iwae(const LogWeightBatch& b);
/// Same with the likelihood raised to alpha: estimates ln p^alpha(x).
Var s_hat_alpha(const LogWeightBatch& b, double alpha);
/// Self-normalized importance-sampling estimate of E_{p(z|x)}[ln p(x|z)]:
/// sum_i softmax(ell)_i * ln p(x|z_i), computed in the log domain.
Var u_hat(const LogWeightBatch& b);
/// u_hat minus the evidence estimate on the designated batch.
Var kl_estimate(const LogWeightBatch& b, Var base_rows);

struct EstimatorOutput {
  /// Mean over the batch of the objective estimate. Never includes
  /// score-function or baseline terms.
  double value = 0.0;
  /// Per-example objective rows (B) on the tape.
  Var value_rows;
  /// Scalar whose tape gradient implements the configured estimator.
  Var surrogate;
  std::map<std::string, double> diagnostics;
};

EstimatorOutput objective_none(const ObjectiveConfig& cfg, const LogWeightBatch& lik);
/// (1-lambda)*S(lik) + lambda*U(mi); pass the same batch twice for same-sample reuse.
EstimatorOutput objective_kl(const ObjectiveConfig& cfg, const LogWeightBatch& lik,
                             const LogWeightBatch& mi);
/// (lambda/(alpha-1))*S_alpha(alpha_batch) - (lambda*alpha/(alpha-1) - 1)*S(lik).
EstimatorOutput objective_renyi(const ObjectiveConfig& cfg, const LogWeightBatch& lik,
                                const LogWeightBatch& alpha_batch);
/// alpha^-1 * S_alpha; lambda is implied as (alpha-1)/alpha.
EstimatorOutput objective_power(const ObjectiveConfig& cfg,
                                const LogWeightBatch& alpha_batch);

/// Draws the batches per the config (one draw when K values coincide) and
/// dispatches to the objective builders.
EstimatorOutput build_objective(const ObjectiveConfig& cfg, const ModelOnTape& m,
                                std::span<const int> xs, RngStream& rng);

struct EvalResult {
  double nll = 0.0;
  double avg_kl = 0.0;
};

/// IWAE-K NLL and the recycled-sample mutual-information estimate
/// mean(u_hat - s_hat) over the given examples, sharing one set of draws.
EvalResult eval_nll_mi(const ModelParams& params, std::span<const int> xs, int k,
                       RngStream& rng);
/// Mean of -s_hat_iwae over fresh K-sample batches.
double nll_estimate(const ModelParams& params, std::span<const int> xs, RngStream& rng,
                    int k = 100);
/// Mean of u_hat - s_hat_iwae over fresh K-sample batches.
double mi_estimate(const ModelParams& params, std::span<const int> xs, RngStream& rng,
                   int k = 100);

}  // namespace micmco
