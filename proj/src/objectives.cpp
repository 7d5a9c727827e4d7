#include "micmco/objectives.hpp"

#include <cmath>
#include <stdexcept>

namespace micmco {

namespace {

using Eigen::ArrayXd;
using Eigen::Index;
using RowArr = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

std::string to_string(BaseEstimator b) {
  switch (b) {
    case BaseEstimator::elbo_analytic: return "elbo_analytic";
    case BaseEstimator::elbo_sampled: return "elbo_sampled";
    case BaseEstimator::iwae: return "iwae";
    case BaseEstimator::stl: return "stl";
    case BaseEstimator::dreg: return "dreg";
    case BaseEstimator::reinforce: return "reinforce";
    case BaseEstimator::vimco: return "vimco";
  }
  return "?";
}

std::string to_string(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::none: return "none";
    case ObjectiveKind::kl: return "kl";
    case ObjectiveKind::renyi: return "renyi";
    case ObjectiveKind::power: return "power";
  }
  return "?";
}

BaseEstimator base_from_string(const std::string& s) {
  for (BaseEstimator b :
       {BaseEstimator::elbo_analytic, BaseEstimator::elbo_sampled, BaseEstimator::iwae,
        BaseEstimator::stl, BaseEstimator::dreg, BaseEstimator::reinforce,
        BaseEstimator::vimco})
    if (to_string(b) == s) return b;
  throw std::invalid_argument("unknown base estimator '" + s + "'");
}

ObjectiveKind objective_from_string(const std::string& s) {
  for (ObjectiveKind k : {ObjectiveKind::none, ObjectiveKind::kl, ObjectiveKind::renyi,
                          ObjectiveKind::power})
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown objective '" + s + "'");
}

void ObjectiveConfig::validate(LatentKind kind) const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument(msg); };
  if (k_lik < 1 || k_mi < 1) fail("k_lik and k_mi must be >= 1");
  if (alpha <= 0.0) fail("alpha must be positive");
  bool cont = kind == LatentKind::continuous;
  switch (base) {
    case BaseEstimator::elbo_analytic:
      if (!cont) fail("elbo_analytic requires continuous latents");
      break;
    case BaseEstimator::stl:
      if (!cont) fail("stl requires continuous latents");
      if (k_lik != 1 || k_mi != 1) fail("stl is single-sample; use dreg for K > 1");
      break;
    case BaseEstimator::dreg:
      if (!cont) fail("dreg requires continuous latents");
      break;
    case BaseEstimator::reinforce:
      if (cont) fail("reinforce requires categorical latents");
      break;
    case BaseEstimator::vimco:
      if (cont) fail("vimco requires categorical latents");
      if (k_lik < 2) fail("vimco requires k_lik >= 2");
      break;
    case BaseEstimator::elbo_sampled:
    case BaseEstimator::iwae:
      if (!cont) fail(to_string(base) + " has no gradient estimator for categorical "
                      "latents; use reinforce or vimco");
      break;
  }
  switch (objective) {
    case ObjectiveKind::none:
      if (lambda != 0.0) fail("lambda requires objective kl or renyi");
      break;
    case ObjectiveKind::kl:
      if (lambda < kLambdaMin || lambda > kLambdaMax)
        fail("lambda outside [" + std::to_string(kLambdaMin) + ", " +
             std::to_string(kLambdaMax) + "]");
      break;
    case ObjectiveKind::renyi:
      if (std::fabs(alpha - 1.0) < kAlphaSingularity)
        fail("renyi objective is singular at alpha=1; use objective=kl");
      if (lambda < kLambdaMin || lambda > kLambdaMax)
        fail("lambda outside [" + std::to_string(kLambdaMin) + ", " +
             std::to_string(kLambdaMax) + "]");
      break;
    case ObjectiveKind::power:
      break;  // lambda is derived; the config layer rejects explicit settings
  }
}

SurrogateNeeds surrogate_needs(BaseEstimator base, LatentKind kind) {
  SurrogateNeeds n;
  if (base == BaseEstimator::elbo_analytic) n.kl_analytic = true;
  if (base == BaseEstimator::stl) n.prop_pdet = true;
  if (base == BaseEstimator::dreg) {
    n.prop_pdet = true;
    n.zdet = true;
    n.thdet = true;
  }
  (void)kind;
  return n;
}

// ---------------------------------------------------------------------------
// log-weight assembly

LogWeightBatch draw_log_weights(const ModelOnTape& m, std::span<const int> xs, int k,
                                RngStream& rng, const SurrogateNeeds& needs) {
  if (k < 1) throw std::invalid_argument("draw_log_weights: k must be >= 1");
  const ModelParams& p = m.params();
  Index b = static_cast<Index>(xs.size());
  if (b == 0) throw std::invalid_argument("draw_log_weights: empty batch");
  Tape& tape = *m.leaves()[0].tape;

  std::vector<int> xs_rep(size_t(b) * k);
  for (Index i = 0; i < b; ++i)
    for (int j = 0; j < k; ++j) xs_rep[size_t(i) * k + j] = xs[i];

  LogWeightBatch out;
  out.batch = int(b);
  out.k = k;

  Proposal prop = encode(m, xs);
  if (p.spec.kind == LatentKind::continuous) {
    const auto& q = std::get<DiagGaussian>(prop);
    DiagGaussian q_rep{repeat_rows(q.mean, k), repeat_rows(q.log_var, k)};
    GaussianSample s = sample_gaussian_reparam(q_rep, rng);
    Var z = s.z;
    out.noise = s.noise;

    out.log_lik = reshape(decode_log_likelihood(m, z, xs_rep), {b, k});
    out.log_prior = reshape(log_density_standard_normal(z), {b, k});
    out.log_prop = reshape(log_density_gaussian(q_rep, z), {b, k});
    if (needs.kl_analytic) out.kl_analytic = kl_gaussian_to_standard(q);
    if (needs.prop_pdet) {
      DiagGaussian q_det{tape.stop_gradient(q_rep.mean), tape.stop_gradient(q_rep.log_var)};
      out.log_prop_pdet = reshape(log_density_gaussian(q_det, z), {b, k});
    }
    if (needs.zdet) {
      Var z_sg = tape.stop_gradient(z);
      out.log_lik_zdet = reshape(decode_log_likelihood(m, z_sg, xs_rep), {b, k});
      out.log_prior_zdet = reshape(log_density_standard_normal(z_sg), {b, k});
      out.log_prop_dead = tape.stop_gradient(out.log_prop);
    }
    if (needs.thdet)
      out.log_lik_thdet =
          reshape(decode_log_likelihood(m, z, xs_rep, Detach::theta), {b, k});
  } else {
    const auto& q = std::get<CategoricalSet>(prop);
    CategoricalSet q_rep{repeat_rows(q.logits, k), q.n_latents, q.n_categories};
    std::vector<int> z = sample_categorical(q_rep, rng);

    out.log_lik = reshape(decode_log_likelihood(m, z, xs_rep), {b, k});
    double lp = -double(q.n_latents) * std::log(double(q.n_categories));
    out.log_prior = tape.constant(Tensor::full({b, k}, lp));  // uniform prior
    out.log_prop = reshape(log_mass_categorical(q_rep, z), {b, k});
  }
  out.ell = sub(add(out.log_lik, out.log_prior), out.log_prop);
  return out;
}

// ---------------------------------------------------------------------------
// estimator expressions

namespace {

// Which gradient view of ell an expression is built from. Values coincide;
// only the gradient flow differs.
enum class EllView { live, stl, zdet, phipath };

Var need(Var v, const char* what) {
  if (!v.valid())
    throw TapeError(std::string("estimator requires the ") + what +
                    " view; draw_log_weights was called without it");
  return v;
}

Var prop_of(const LogWeightBatch& b, EllView v) {
  switch (v) {
    case EllView::live: return b.log_prop;
    case EllView::stl: return need(b.log_prop_pdet, "detached-proposal");
    case EllView::zdet: return need(b.log_prop_dead, "detached-z");
    case EllView::phipath: return need(b.log_prop_pdet, "detached-proposal");
  }
  return b.log_prop;
}

Var lik_of(const LogWeightBatch& b, EllView v) {
  switch (v) {
    case EllView::live: return b.log_lik;
    case EllView::stl: return b.log_lik;
    case EllView::zdet: return need(b.log_lik_zdet, "detached-z");
    case EllView::phipath: return need(b.log_lik_thdet, "detached-theta");
  }
  return b.log_lik;
}

Var prior_of(const LogWeightBatch& b, EllView v) {
  return v == EllView::zdet ? b.log_prior_zdet : b.log_prior;
}

Var ell_of(const LogWeightBatch& b, EllView v) {
  if (v == EllView::live) return b.ell;
  return sub(add(lik_of(b, v), prior_of(b, v)), prop_of(b, v));
}

Var ell_alpha_of(const LogWeightBatch& b, double alpha, EllView v) {
  return sub(add(scale(lik_of(b, v), alpha), prior_of(b, v)), prop_of(b, v));
}

Var s_multi_rows(Var ell, int k) {
  return add_scalar(logsumexp_rows(ell), -std::log(double(k)));
}

Var u_rows(Var ell, Var log_lik) {
  return sum_rows(mul(exp(softmax_log(ell)), log_lik));
}

// Base evidence estimate S (rows) under the configured base form.
Var s_rows(const ObjectiveConfig& cfg, const LogWeightBatch& b, EllView v) {
  switch (cfg.base) {
    case BaseEstimator::elbo_analytic:
      return sub(mean_rows(b.log_lik), need(b.kl_analytic, "analytic-KL"));
    case BaseEstimator::elbo_sampled:
      return mean_rows(ell_of(b, v));
    default:
      return s_multi_rows(ell_of(b, v), b.k);
  }
}

Var s_alpha_rows_impl(const ObjectiveConfig& cfg, const LogWeightBatch& b, double alpha,
                      EllView v) {
  switch (cfg.base) {
    case BaseEstimator::elbo_analytic:
      return sub(scale(mean_rows(b.log_lik), alpha), need(b.kl_analytic, "analytic-KL"));
    case BaseEstimator::elbo_sampled:
      return mean_rows(ell_alpha_of(b, alpha, v));
    default:
      return s_multi_rows(ell_alpha_of(b, alpha, v), b.k);
  }
}

// Per-example objective estimate rows built from the given gradient view.
Var objective_rows(const ObjectiveConfig& cfg, const LogWeightBatch& lik,
                   const LogWeightBatch* mi, EllView v) {
  switch (cfg.objective) {
    case ObjectiveKind::none:
      return s_rows(cfg, lik, v);
    case ObjectiveKind::kl: {
      Var s = s_rows(cfg, lik, v);
      Var u = u_rows(ell_of(*mi, v), lik_of(*mi, v));
      return add(scale(s, 1.0 - cfg.lambda), scale(u, cfg.lambda));
    }
    case ObjectiveKind::renyi: {
      Var s = s_rows(cfg, lik, v);
      Var sa = s_alpha_rows_impl(cfg, *mi, cfg.alpha, v);
      double ca = cfg.lambda / (cfg.alpha - 1.0);
      double cs = cfg.lambda * cfg.alpha / (cfg.alpha - 1.0) - 1.0;
      return sub(scale(sa, ca), scale(s, cs));
    }
    case ObjectiveKind::power:
      return scale(s_alpha_rows_impl(cfg, lik, cfg.alpha, v), 1.0 / cfg.alpha);
  }
  throw std::logic_error("objective_rows: unreachable");
}

// ---------------------------------------------------------------------------
// numeric mirrors (leave-one-out baselines are plain numbers inside
// stop-gradients, so they are computed off-tape)

RowArr values_as_rows(Var v) {
  const Tensor& t = v.value();
  return Eigen::Map<const RowArr>(t.data(), t.rows(), t.cols());
}

double lse_row(const RowArr& m, Index i) {
  double mx = m.row(i).maxCoeff();
  if (!std::isfinite(mx)) return mx;
  return mx + std::log((m.row(i) - mx).exp().sum());
}

struct NumericBatch {
  RowArr ell;
  RowArr ell_alpha;
  RowArr loglik;
  int k = 1;
};

NumericBatch numeric_of(const LogWeightBatch& b, double alpha) {
  NumericBatch n;
  n.ell = values_as_rows(b.ell);
  n.loglik = values_as_rows(b.log_lik);
  RowArr prior = values_as_rows(b.log_prior);
  RowArr prop = values_as_rows(b.log_prop);
  n.ell_alpha = alpha * n.loglik + prior - prop;
  n.k = b.k;
  return n;
}

ArrayXd s_numeric(const RowArr& ell, int k) {
  ArrayXd out(ell.rows());
  for (Index i = 0; i < ell.rows(); ++i) out(i) = lse_row(ell, i) - std::log(double(k));
  return out;
}

ArrayXd u_numeric(const RowArr& ell, const RowArr& loglik) {
  ArrayXd out(ell.rows());
  for (Index i = 0; i < ell.rows(); ++i) {
    double lse = lse_row(ell, i);
    out(i) = ((ell.row(i) - lse).exp() * loglik.row(i)).sum();
  }
  return out;
}

// Objective rows from plain numbers. Only used for the score-function bases,
// whose S is the multi-sample form.
ArrayXd objective_rows_numeric(const ObjectiveConfig& cfg, const NumericBatch& lik,
                               const NumericBatch* mi) {
  switch (cfg.objective) {
    case ObjectiveKind::none:
      return s_numeric(lik.ell, lik.k);
    case ObjectiveKind::kl:
      return (1.0 - cfg.lambda) * s_numeric(lik.ell, lik.k) +
             cfg.lambda * u_numeric(mi->ell, mi->loglik);
    case ObjectiveKind::renyi: {
      double ca = cfg.lambda / (cfg.alpha - 1.0);
      double cs = cfg.lambda * cfg.alpha / (cfg.alpha - 1.0) - 1.0;
      return ca * s_numeric(mi->ell_alpha, mi->k) - cs * s_numeric(lik.ell, lik.k);
    }
    case ObjectiveKind::power:
      return s_numeric(lik.ell_alpha, lik.k) / cfg.alpha;
  }
  throw std::logic_error("objective_rows_numeric: unreachable");
}

// Replace column i of every per-sample matrix by the mean of the other
// columns; the VIMCO baseline must not depend on sample i.
NumericBatch loo_replaced(const NumericBatch& b, Index i) {
  NumericBatch r = b;
  double k = double(b.k);
  auto patch = [&](RowArr& m, const RowArr& src) {
    m.col(i) = (src.rowwise().sum() - src.col(i)) / (k - 1.0);
  };
  patch(r.ell, b.ell);
  patch(r.ell_alpha, b.ell_alpha);
  patch(r.loglik, b.loglik);
  return r;
}

// ---------------------------------------------------------------------------
// surrogate construction

Tensor rows_tensor(const RowArr& m) {
  ArrayXd flat(m.size());
  Eigen::Map<RowArr>(flat.data(), m.rows(), m.cols()) = m;
  return Tensor::from_array({m.rows(), m.cols()}, std::move(flat));
}

// REINFORCE / VIMCO: surrogate = O + sum_i sg(O - b_i) ln q(z_i|x), with b_i
// the leave-one-out recomputation of the composite O (zero baseline when a
// batch has a single sample).
Var score_surrogate_rows(const ObjectiveConfig& cfg, const LogWeightBatch& lik,
                         const LogWeightBatch* mi, Var value_rows) {
  Tape& tape = *value_rows.tape;
  bool same = mi == nullptr || (mi->ell.id == lik.ell.id);
  NumericBatch nlik = numeric_of(lik, cfg.alpha);
  NumericBatch nmi_store;
  const NumericBatch* nmi = &nlik;
  if (!same) {
    nmi_store = numeric_of(*mi, cfg.alpha);
    nmi = &nmi_store;
  }
  const NumericBatch* mi_arg = cfg.uses_mi_batch() ? nmi : nullptr;
  ArrayXd ohat = objective_rows_numeric(cfg, nlik, mi_arg);

  Var total = value_rows;
  auto add_batch_score = [&](const LogWeightBatch& b, const NumericBatch& nb,
                             bool is_lik) {
    RowArr coef(b.batch, b.k);
    bool loo = cfg.base == BaseEstimator::vimco && b.k >= 2;
    for (Index i = 0; i < b.k; ++i) {
      if (!loo) {
        coef.col(i) = ohat;
        continue;
      }
      NumericBatch rep = loo_replaced(nb, i);
      ArrayXd baseline =
          is_lik ? objective_rows_numeric(cfg, rep, same ? &rep : mi_arg)
                 : objective_rows_numeric(cfg, nlik, &rep);
      coef.col(i) = ohat - baseline;
    }
    Var c = tape.constant(rows_tensor(coef));
    total = add(total, sum_rows(mul(c, b.log_prop)));
  };

  add_batch_score(lik, nlik, true);
  if (!same && cfg.uses_mi_batch()) add_batch_score(*mi, *nmi, false);
  return total;
}

// DReG: per log-mean-exp term, theta flows through sg(w)·ell with z detached
// and phi through sg(w^2)·ell with theta and the direct ln q dependence
// blocked; the U term keeps plain reparameterization.
Var dreg_surrogate_rows(const ObjectiveConfig& cfg, const LogWeightBatch& lik,
                        const LogWeightBatch* mi) {
  Tape& tape = *lik.ell.tape;

  auto softmax_rows_of = [](const RowArr& m) {
    RowArr w(m.rows(), m.cols());
    for (Index i = 0; i < m.rows(); ++i) {
      double mx = m.row(i).maxCoeff();
      w.row(i) = (m.row(i) - mx).exp();
      w.row(i) /= w.row(i).sum();
    }
    return w;
  };

  // one log-mean-exp term: coef * logsumexp-style estimate with weights from
  // the term's own log-weights
  auto term_rows = [&](const LogWeightBatch& b, bool alpha_term) -> Var {
    RowArr lw = alpha_term ? numeric_of(b, cfg.alpha).ell_alpha : values_as_rows(b.ell);
    RowArr w = softmax_rows_of(lw);
    Var cw = tape.constant(rows_tensor(w));
    Var cw2 = tape.constant(rows_tensor((w * w).eval()));
    Var theta_ell = alpha_term ? ell_alpha_of(b, cfg.alpha, EllView::zdet)
                               : ell_of(b, EllView::zdet);
    Var phi_ell = alpha_term ? ell_alpha_of(b, cfg.alpha, EllView::phipath)
                             : ell_of(b, EllView::phipath);
    return add(sum_rows(mul(cw, theta_ell)), sum_rows(mul(cw2, phi_ell)));
  };

  switch (cfg.objective) {
    case ObjectiveKind::none:
      return term_rows(lik, false);
    case ObjectiveKind::kl: {
      Var s = term_rows(lik, false);
      Var u = u_rows(ell_of(*mi, EllView::live), lik_of(*mi, EllView::live));
      return add(scale(s, 1.0 - cfg.lambda), scale(u, cfg.lambda));
    }
    case ObjectiveKind::renyi: {
      double ca = cfg.lambda / (cfg.alpha - 1.0);
      double cs = cfg.lambda * cfg.alpha / (cfg.alpha - 1.0) - 1.0;
      return sub(scale(term_rows(*mi, true), ca), scale(term_rows(lik, false), cs));
    }
    case ObjectiveKind::power:
      return scale(term_rows(lik, true), 1.0 / cfg.alpha);
  }
  throw std::logic_error("dreg_surrogate_rows: unreachable");
}

EstimatorOutput finish(const ObjectiveConfig& cfg, const LogWeightBatch& lik,
                       const LogWeightBatch* mi) {
  EstimatorOutput out;
  switch (cfg.base) {
    case BaseEstimator::stl:
      // identical values to the live view, score term of ln q blocked
      out.value_rows = objective_rows(cfg, lik, mi, EllView::stl);
      out.surrogate = mean(out.value_rows);
      break;
    case BaseEstimator::dreg:
      out.value_rows = objective_rows(cfg, lik, mi, EllView::live);
      out.surrogate = mean(dreg_surrogate_rows(cfg, lik, mi));
      break;
    case BaseEstimator::reinforce:
    case BaseEstimator::vimco:
      out.value_rows = objective_rows(cfg, lik, mi, EllView::live);
      out.surrogate = mean(score_surrogate_rows(cfg, lik, mi, out.value_rows));
      break;
    default:
      out.value_rows = objective_rows(cfg, lik, mi, EllView::live);
      out.surrogate = mean(out.value_rows);
      break;
  }
  out.value = out.value_rows.value().array().mean();

  auto put_mean = [&](const std::string& key, Var rows) {
    out.diagnostics[key] = rows.value().array().mean();
  };
  put_mean("s_hat", s_rows(cfg, lik, EllView::live));
  if (cfg.objective == ObjectiveKind::kl) {
    put_mean("u_hat", u_rows(mi->ell, mi->log_lik));
    out.diagnostics["kl_est"] = out.diagnostics["u_hat"] - out.diagnostics["s_hat"];
  }
  if (cfg.objective == ObjectiveKind::renyi) {
    put_mean("s_alpha_hat", s_alpha_rows_impl(cfg, *mi, cfg.alpha, EllView::live));
    out.diagnostics["renyi_est"] =
        (out.diagnostics["s_alpha_hat"] - cfg.alpha * out.diagnostics["s_hat"]) /
        (cfg.alpha - 1.0);
  }
  if (cfg.objective == ObjectiveKind::power) {
    put_mean("s_alpha_hat", s_alpha_rows_impl(cfg, lik, cfg.alpha, EllView::live));
    out.diagnostics["lambda"] = cfg.effective_lambda();
  }
  return out;
}

}  // namespace

Var s_hat_iwae(const LogWeightBatch& b) { return s_multi_rows(b.ell, b.k); }

Var s_hat_alpha(const LogWeightBatch& b, double alpha) {
  if (alpha <= 0.0) throw std::invalid_argument("s_hat_alpha: alpha must be positive");
  return s_multi_rows(ell_alpha_of(b, alpha, EllView::live), b.k);
}

Var u_hat(const LogWeightBatch& b) { return u_rows(b.ell, b.log_lik); }

Var kl_estimate(const LogWeightBatch& b, Var base_rows) {
  return sub(u_hat(b), base_rows);
}

EstimatorOutput objective_none(const ObjectiveConfig& cfg, const LogWeightBatch& lik) {
  return finish(cfg, lik, nullptr);
}

EstimatorOutput objective_kl(const ObjectiveConfig& cfg, const LogWeightBatch& lik,
                             const LogWeightBatch& mi) {
  return finish(cfg, lik, &mi);
}

EstimatorOutput objective_renyi(const ObjectiveConfig& cfg, const LogWeightBatch& lik,
                                const LogWeightBatch& alpha_batch) {
  if (std::fabs(cfg.alpha - 1.0) < kAlphaSingularity)
    throw std::invalid_argument("objective_renyi: alpha too close to 1");
  return finish(cfg, lik, &alpha_batch);
}

EstimatorOutput objective_power(const ObjectiveConfig& cfg,
                                const LogWeightBatch& alpha_batch) {
  return finish(cfg, alpha_batch, nullptr);
}

EstimatorOutput build_objective(const ObjectiveConfig& cfg, const ModelOnTape& m,
                                std::span<const int> xs, RngStream& rng) {
  const LatentKind kind = m.params().spec.kind;
  cfg.validate(kind);
  SurrogateNeeds needs = surrogate_needs(cfg.base, kind);
  LogWeightBatch lik = draw_log_weights(m, xs, cfg.k_lik, rng, needs);
  switch (cfg.objective) {
    case ObjectiveKind::none:
      return objective_none(cfg, lik);
    case ObjectiveKind::power:
      return objective_power(cfg, lik);
    case ObjectiveKind::kl:
    case ObjectiveKind::renyi: {
      // same samples feed both terms when the counts coincide; the KL
      // objective's U term is plain reparameterization, so an independent
      // mi batch needs no estimator views
      SurrogateNeeds mi_needs =
          cfg.objective == ObjectiveKind::renyi ? needs : SurrogateNeeds{};
      LogWeightBatch mi = cfg.k_mi == cfg.k_lik
                              ? lik
                              : draw_log_weights(m, xs, cfg.k_mi, rng, mi_needs);
      return cfg.objective == ObjectiveKind::kl ? objective_kl(cfg, lik, mi)
                                                : objective_renyi(cfg, lik, mi);
    }
  }
  throw std::logic_error("build_objective: unreachable");
}

// ---------------------------------------------------------------------------
// evaluation

namespace {

EvalResult eval_impl(const ModelParams& params, std::span<const int> xs, int k,
                     RngStream& rng, bool want_nll, bool want_mi) {
  if (k < 1) throw std::invalid_argument("eval: k must be >= 1");
  if (xs.empty()) throw std::invalid_argument("eval: empty example set");
  // chunked so the (rows x vocab) decoder activations stay bounded
  size_t chunk = std::max<size_t>(1, 2048 / size_t(k));
  double s_sum = 0.0, kl_sum = 0.0;
  for (size_t off = 0; off < xs.size(); off += chunk) {
    size_t n = std::min(chunk, xs.size() - off);
    Tape tape;
    ModelOnTape m(tape, params);
    LogWeightBatch b = draw_log_weights(m, xs.subspan(off, n), k, rng);
    ArrayXd s = s_hat_iwae(b).value().array();
    s_sum += s.sum();
    if (want_mi) kl_sum += (u_hat(b).value().array() - s).sum();
  }
  EvalResult r;
  if (want_nll) r.nll = -s_sum / double(xs.size());
  if (want_mi) r.avg_kl = kl_sum / double(xs.size());
  return r;
}

}  // namespace

EvalResult eval_nll_mi(const ModelParams& params, std::span<const int> xs, int k,
                       RngStream& rng) {
  return eval_impl(params, xs, k, rng, true, true);
}

double nll_estimate(const ModelParams& params, std::span<const int> xs, RngStream& rng,
                    int k) {
  return eval_impl(params, xs, k, rng, true, false).nll;
}

double mi_estimate(const ModelParams& params, std::span<const int> xs, RngStream& rng,
                   int k) {
  return eval_impl(params, xs, k, rng, false, true).avg_kl;
}

}  // namespace micmco
