#pragma once

#include "micmco/objectives.hpp"

#include <utility>

namespace micmco::oracle {

/// Explicit probability tables for exact enumeration. All entries strictly
/// positive so every log is finite.
struct TinyModel {
  Eigen::VectorXd prior;  // |Z|
  Eigen::MatrixXd lik;    // |Z| x |X|, rows sum to 1
  Eigen::MatrixXd prop;   // |X| x |Z|, rows sum to 1

  int nz() const { return int(prior.size()); }
  int nx() const { return int(lik.cols()); }
  void validate() const;
};

/// Dirichlet(1,...,1) rows from the seeded stream, floored at `floor` and
/// renormalized so the tables stay strictly positive.
TinyModel random_tiny_model(RngStream& rng, int nz, int nx, double floor = 1e-9);

/// q(.|x) as a contiguous vector (the tables are column-major inside Eigen).
std::vector<double> proposal_row(const TinyModel& m, int x);

double exact_marginal(const TinyModel& m, int x);       // ln p(x)
double exact_posterior_kl(const TinyModel& m, int x);   // KL(p(z|x)||p(z))
double exact_p_alpha(const TinyModel& m, int x, double alpha);  // ln p^alpha(x)
double exact_renyi(const TinyModel& m, int x, double alpha);    // D_alpha(p(z|x)||p(z))
double exact_representational_kl(const TinyModel& m, int x);    // KL(q(z|x)||p(z))
/// E_q[ln p(x|z)] - beta * KL(q(z|x)||p(z)).
double exact_beta_vae(const TinyModel& m, int x, double beta);

enum class Stat { s_hat, u_hat, kl_est, s_alpha, objective_value };

/// Exact expectation of the chosen statistic over all proposal tuples
/// (independent tuples per batch when k_lik != k_mi). The estimator values are
/// recomputed here from the raw tables, independent of the tape-based
/// implementations they are used to check. Throws when the enumeration
/// exceeds 1e6 tuples; use mc_estimator_stat instead.
double exact_estimator_stat(const TinyModel& m, int x, const ObjectiveConfig& cfg,
                            Stat stat);
/// Monte-Carlo fallback: mean and standard error over n sampled tuples.
std::pair<double, double> mc_estimator_stat(const TinyModel& m, int x,
                                            const ObjectiveConfig& cfg, Stat stat,
                                            int64_t n, RngStream& rng);
/// Exact variance of u_hat over the K-sample tuple distribution.
double exact_u_variance(const TinyModel& m, int x, int k);

/// Tables as softmax rows of an unconstrained parameter vector, for
/// analytic-gradient checks. Layout of w: prior logits (nz), likelihood
/// logits (nz*nx row-major), proposal logits (nx*nz row-major).
struct ParamTinyModel {
  int nz = 0;
  int nx = 0;
  Eigen::VectorXd w;

  static ParamTinyModel random(RngStream& rng, int nz, int nx);
  TinyModel tables() const;
  int dim() const { return int(w.size()); }
};

/// Central finite differences of exact_estimator_stat(objective_value) on w.
Eigen::VectorXd exact_gradient_fd(const ParamTinyModel& pm, int x,
                                  const ObjectiveConfig& cfg, double h = 1e-6);
/// Exact sum over tuples of grad[ prod_i q(z_i|x) * value(tuple) ], assembled
/// on a tape so the value gradient is exact to rounding.
Eigen::VectorXd exact_gradient_enumeration(const ParamTinyModel& pm, int x,
                                           const ObjectiveConfig& cfg);
/// E over tuples of the surrogate's tape gradient - what the configured
/// gradient estimator actually delivers in expectation.
Eigen::VectorXd expected_surrogate_gradient(const ParamTinyModel& pm, int x,
                                            const ObjectiveConfig& cfg);

}  // namespace micmco::oracle
