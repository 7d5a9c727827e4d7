#include "micmco/oracle.hpp"

#include <cmath>
#include <stdexcept>

namespace micmco::oracle {

namespace {

using Eigen::ArrayXd;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr int64_t kMaxTuples = 1'000'000;

int64_t ipow(int64_t b, int e) {
  int64_t r = 1;
  while (e-- > 0) r *= b;
  return r;
}

// Iterate all |Z|^k tuples; fn(tuple, prod_q). Weights come from q(.|x).
template <class Fn>
void for_each_tuple(const TinyModel& m, int x, int k, Fn fn) {
  int nz = m.nz();
  std::vector<int> z(k, 0);
  for (;;) {
    double w = 1.0;
    for (int i = 0; i < k; ++i) w *= m.prop(x, z[i]);
    fn(std::span<const int>(z), w);
    int pos = k - 1;
    while (pos >= 0 && ++z[pos] == nz) z[pos--] = 0;
    if (pos < 0) break;
  }
}

// Estimator values recomputed directly from the tables; intentionally kept
// independent of the tape-based implementations under test.
struct TupleEval {
  const TinyModel& m;
  int x;
  double alpha;
  bool sampled_elbo;  // base form: mean of ell instead of log-mean-exp

  double s(std::span<const int> z) const {
    double acc = 0.0;
    if (sampled_elbo) {
      for (int zi : z)
        acc += std::log(m.lik(zi, x)) + std::log(m.prior(zi)) - std::log(m.prop(x, zi));
      return acc / double(z.size());
    }
    for (int zi : z) acc += m.prior(zi) * m.lik(zi, x) / m.prop(x, zi);
    return std::log(acc / double(z.size()));
  }
  double s_alpha(std::span<const int> z) const {
    double acc = 0.0;
    if (sampled_elbo) {
      for (int zi : z)
        acc += alpha * std::log(m.lik(zi, x)) + std::log(m.prior(zi)) -
               std::log(m.prop(x, zi));
      return acc / double(z.size());
    }
    for (int zi : z) acc += m.prior(zi) * std::pow(m.lik(zi, x), alpha) / m.prop(x, zi);
    return std::log(acc / double(z.size()));
  }
  double u(std::span<const int> z) const {
    double num = 0.0, den = 0.0;
    for (int zi : z) {
      double w = m.prior(zi) * m.lik(zi, x) / m.prop(x, zi);
      num += w * std::log(m.lik(zi, x));
      den += w;
    }
    return num / den;
  }
};

double combine_terms(const ObjectiveConfig& cfg, double s, double u, double sa) {
  double lam = cfg.effective_lambda();
  switch (cfg.objective) {
    case ObjectiveKind::none:
      return s;
    case ObjectiveKind::kl:
      return (1.0 - lam) * s + lam * u;
    case ObjectiveKind::renyi:
      return lam / (cfg.alpha - 1.0) * sa -
             (lam * cfg.alpha / (cfg.alpha - 1.0) - 1.0) * s;
    case ObjectiveKind::power:
      return sa / cfg.alpha;
  }
  return 0.0;
}

}  // namespace

void TinyModel::validate() const {
  auto check_simplex = [](const Eigen::VectorXd& v, const char* what) {
    if ((v.array() <= 0.0).any())
      throw std::invalid_argument(std::string("TinyModel: non-positive entry in ") + what);
    if (std::fabs(v.sum() - 1.0) > 1e-12)
      throw std::invalid_argument(std::string("TinyModel: ") + what +
                                  " does not sum to 1");
  };
  check_simplex(prior, "prior");
  if (lik.rows() != prior.size() || prop.cols() != prior.size() ||
      prop.rows() != lik.cols())
    throw std::invalid_argument("TinyModel: inconsistent table shapes");
  for (Index z = 0; z < lik.rows(); ++z)
    check_simplex(lik.row(z).transpose(), "likelihood row");
  for (Index x = 0; x < prop.rows(); ++x)
    check_simplex(prop.row(x).transpose(), "proposal row");
}

TinyModel random_tiny_model(RngStream& rng, int nz, int nx, double floor) {
  if (nz < 2 || nx < 1 || nz > 16 || nx > 16)
    throw std::invalid_argument("random_tiny_model: sizes out of range");
  auto simplex = [&](Index n) {
    VectorXd v(n);
    for (Index i = 0; i < n; ++i) v(i) = -std::log(rng.next_uniform());  // Dirichlet(1,..,1)
    v /= v.sum();
    v = v.array().max(floor);
    v /= v.sum();
    return v;
  };
  TinyModel m;
  m.prior = simplex(nz);
  m.lik.resize(nz, nx);
  for (int z = 0; z < nz; ++z) m.lik.row(z) = simplex(nx).transpose();
  m.prop.resize(nx, nz);
  for (int x = 0; x < nx; ++x) m.prop.row(x) = simplex(nz).transpose();
  m.validate();
  return m;
}

std::vector<double> proposal_row(const TinyModel& m, int x) {
  std::vector<double> out(size_t(m.nz()));
  for (int z = 0; z < m.nz(); ++z) out[size_t(z)] = m.prop(x, z);
  return out;
}

double exact_marginal(const TinyModel& m, int x) {
  return std::log((m.prior.array() * m.lik.col(x).array()).sum());
}

double exact_posterior_kl(const TinyModel& m, int x) {
  double px = std::exp(exact_marginal(m, x));
  double kl = 0.0;
  for (int z = 0; z < m.nz(); ++z) {
    double post = m.prior(z) * m.lik(z, x) / px;
    kl += post * std::log(post / m.prior(z));
  }
  return kl;
}

double exact_p_alpha(const TinyModel& m, int x, double alpha) {
  return std::log((m.prior.array() * m.lik.col(x).array().pow(alpha)).sum());
}

double exact_renyi(const TinyModel& m, int x, double alpha) {
  if (alpha <= 0.0 || alpha == 1.0)
    throw std::invalid_argument("exact_renyi: alpha must be positive and != 1");
  return (exact_p_alpha(m, x, alpha) - alpha * exact_marginal(m, x)) / (alpha - 1.0);
}

double exact_representational_kl(const TinyModel& m, int x) {
  double kl = 0.0;
  for (int z = 0; z < m.nz(); ++z)
    kl += m.prop(x, z) * std::log(m.prop(x, z) / m.prior(z));
  return kl;
}

double exact_beta_vae(const TinyModel& m, int x, double beta) {
  double rec = 0.0;
  for (int z = 0; z < m.nz(); ++z) rec += m.prop(x, z) * std::log(m.lik(z, x));
  return rec - beta * exact_representational_kl(m, x);
}

double exact_estimator_stat(const TinyModel& m, int x, const ObjectiveConfig& cfg,
                            Stat stat) {
  if (cfg.base == BaseEstimator::elbo_analytic)
    throw std::invalid_argument("exact_estimator_stat: elbo_analytic is continuous-only");
  TupleEval ev{m, x, cfg.alpha, cfg.base == BaseEstimator::elbo_sampled};

  auto expectation = [&](int k, auto fn) {
    if (ipow(m.nz(), k) > kMaxTuples)
      throw std::invalid_argument(
          "enumeration too large; use mc_estimator_stat for this K");
    double acc = 0.0;
    for_each_tuple(m, x, k, [&](std::span<const int> z, double w) { acc += w * fn(z); });
    return acc;
  };

  switch (stat) {
    case Stat::s_hat:
      return expectation(cfg.k_lik, [&](auto z) { return ev.s(z); });
    case Stat::u_hat:
      return expectation(cfg.k_mi, [&](auto z) { return ev.u(z); });
    case Stat::kl_est:
      return expectation(cfg.k_mi, [&](auto z) { return ev.u(z); }) -
             expectation(cfg.k_lik, [&](auto z) { return ev.s(z); });
    case Stat::s_alpha: {
      int k = cfg.objective == ObjectiveKind::power ? cfg.k_lik : cfg.k_mi;
      return expectation(k, [&](auto z) { return ev.s_alpha(z); });
    }
    case Stat::objective_value: {
      // the objective is linear in its terms, so expectations combine directly
      double s = expectation(cfg.k_lik, [&](auto z) { return ev.s(z); });
      double u = cfg.objective == ObjectiveKind::kl
                     ? expectation(cfg.k_mi, [&](auto z) { return ev.u(z); })
                     : 0.0;
      double sa = 0.0;
      if (cfg.objective == ObjectiveKind::renyi)
        sa = expectation(cfg.k_mi, [&](auto z) { return ev.s_alpha(z); });
      else if (cfg.objective == ObjectiveKind::power)
        sa = expectation(cfg.k_lik, [&](auto z) { return ev.s_alpha(z); });
      return combine_terms(cfg, s, u, sa);
    }
  }
  throw std::logic_error("exact_estimator_stat: unreachable");
}

std::pair<double, double> mc_estimator_stat(const TinyModel& m, int x,
                                            const ObjectiveConfig& cfg, Stat stat,
                                            int64_t n, RngStream& rng) {
  TupleEval ev{m, x, cfg.alpha, cfg.base == BaseEstimator::elbo_sampled};
  std::vector<double> probs = proposal_row(m, x);
  auto draw = [&](std::vector<int>& z) {
    for (auto& zi : z) zi = rng.next_categorical(probs);
  };
  std::vector<int> z1(cfg.k_lik), z2(cfg.k_mi);
  double sum = 0.0, sumsq = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    draw(z1);
    bool same = cfg.k_lik == cfg.k_mi;
    if (same)
      z2 = z1;
    else
      draw(z2);
    double v = 0.0;
    switch (stat) {
      case Stat::s_hat: v = ev.s(z1); break;
      case Stat::u_hat: v = ev.u(z2); break;
      case Stat::kl_est: v = ev.u(z2) - ev.s(z1); break;
      case Stat::s_alpha: v = ev.s_alpha(z2); break;
      case Stat::objective_value: {
        double u = cfg.objective == ObjectiveKind::kl ? ev.u(z2) : 0.0;
        double sa = cfg.objective == ObjectiveKind::renyi ? ev.s_alpha(z2)
                    : cfg.objective == ObjectiveKind::power ? ev.s_alpha(z1)
                                                            : 0.0;
        v = combine_terms(cfg, ev.s(z1), u, sa);
        break;
      }
    }
    sum += v;
    sumsq += v * v;
  }
  double mean = sum / double(n);
  double var = std::max(0.0, sumsq / double(n) - mean * mean);
  return {mean, std::sqrt(var / double(n))};
}

double exact_u_variance(const TinyModel& m, int x, int k) {
  if (ipow(m.nz(), k) > kMaxTuples)
    throw std::invalid_argument("exact_u_variance: enumeration too large");
  TupleEval ev{m, x, 1.0, false};
  double e = 0.0, e2 = 0.0;
  for_each_tuple(m, x, k, [&](std::span<const int> z, double w) {
    double u = ev.u(z);
    e += w * u;
    e2 += w * u * u;
  });
  return e2 - e * e;
}

// ---------------------------------------------------------------------------
// parameterized models and gradient routes

ParamTinyModel ParamTinyModel::random(RngStream& rng, int nz, int nx) {
  ParamTinyModel pm;
  pm.nz = nz;
  pm.nx = nx;
  pm.w.resize(nz + nz * nx + nx * nz);
  for (Index i = 0; i < pm.w.size(); ++i) pm.w(i) = 0.7 * rng.next_gaussian();
  return pm;
}

TinyModel ParamTinyModel::tables() const {
  auto softmax = [](const VectorXd& v) {
    ArrayXd e = (v.array() - v.maxCoeff()).exp();
    return (e / e.sum()).matrix().eval();
  };
  TinyModel m;
  m.prior = softmax(w.segment(0, nz));
  m.lik.resize(nz, nx);
  for (int z = 0; z < nz; ++z)
    m.lik.row(z) = softmax(w.segment(nz + z * nx, nx)).transpose();
  m.prop.resize(nx, nz);
  for (int x = 0; x < nx; ++x)
    m.prop.row(x) = softmax(w.segment(nz + nz * nx + x * nz, nz)).transpose();
  return m;
}

Eigen::VectorXd exact_gradient_fd(const ParamTinyModel& pm, int x,
                                  const ObjectiveConfig& cfg, double h) {
  VectorXd g(pm.dim());
  ParamTinyModel p = pm;
  for (int i = 0; i < pm.dim(); ++i) {
    double w0 = p.w(i);
    p.w(i) = w0 + h;
    double up = exact_estimator_stat(p.tables(), x, cfg, Stat::objective_value);
    p.w(i) = w0 - h;
    double dn = exact_estimator_stat(p.tables(), x, cfg, Stat::objective_value);
    p.w(i) = w0;
    g(i) = (up - dn) / (2.0 * h);
  }
  return g;
}

namespace {

struct TinyOnTape {
  Var prior_w, lik_w, prop_w;             // leaves
  Var log_prior, log_lik, log_prop;       // normalized log tables
};

TinyOnTape bind_tiny(Tape& t, const ParamTinyModel& pm) {
  TinyOnTape b;
  ArrayXd pw = pm.w.segment(0, pm.nz).array();
  ArrayXd lw = pm.w.segment(pm.nz, pm.nz * pm.nx).array();
  ArrayXd qw = pm.w.segment(pm.nz + pm.nz * pm.nx, pm.nx * pm.nz).array();
  b.prior_w = t.param(Tensor::from_array({pm.nz}, pw));
  b.lik_w = t.param(Tensor::from_array({pm.nz, pm.nx}, lw));
  b.prop_w = t.param(Tensor::from_array({pm.nx, pm.nz}, qw));
  b.log_prior = softmax_log(b.prior_w);
  b.log_lik = softmax_log(b.lik_w);
  b.log_prop = softmax_log(b.prop_w);
  return b;
}

LogWeightBatch tuple_batch(Tape& t, const TinyOnTape& b, int nz, int x,
                           std::span<const int> z) {
  int k = int(z.size());
  std::vector<int> xs(k, x);
  LogWeightBatch out;
  out.batch = 1;
  out.k = k;
  Var lik_rows = embedding_lookup(b.log_lik, z);                  // (k, nx)
  out.log_lik = reshape(take_rowwise(lik_rows, xs), {1, k});
  Var prior_col = reshape(b.log_prior, {Eigen::Index(nz), 1});
  out.log_prior = reshape(embedding_lookup(prior_col, z), {1, k});
  Var prop_rows = embedding_lookup(b.log_prop, xs);               // (k, nz)
  out.log_prop = reshape(take_rowwise(prop_rows, z), {1, k});
  out.ell = sub(add(out.log_lik, out.log_prior), out.log_prop);
  (void)t;
  return out;
}

EstimatorOutput run_objective(const ObjectiveConfig& cfg, const LogWeightBatch& lik,
                              const LogWeightBatch* mi) {
  switch (cfg.objective) {
    case ObjectiveKind::none: return objective_none(cfg, lik);
    case ObjectiveKind::power: return objective_power(cfg, lik);
    case ObjectiveKind::kl: return objective_kl(cfg, lik, mi ? *mi : lik);
    case ObjectiveKind::renyi: return objective_renyi(cfg, lik, mi ? *mi : lik);
  }
  throw std::logic_error("run_objective: unreachable");
}

VectorXd collect_grads(Tape& t, const TinyOnTape& b, const Gradients& g, int dim) {
  VectorXd out(dim);
  Tensor gp = g.grad(b.prior_w);
  Tensor gl = g.grad(b.lik_w);
  Tensor gq = g.grad(b.prop_w);
  out << Eigen::Map<const VectorXd>(gp.data(), gp.size()),
      Eigen::Map<const VectorXd>(gl.data(), gl.size()),
      Eigen::Map<const VectorXd>(gq.data(), gq.size());
  (void)t;
  return out;
}

// Enumerate tuples for both batches (shared when K matches), weight by the
// proposal mass, and apply fn(weight, lik_tuple, mi_tuple_or_empty).
template <class Fn>
void for_each_joint(const TinyModel& m, int x, const ObjectiveConfig& cfg, Fn fn) {
  bool two = cfg.uses_mi_batch() && cfg.k_mi != cfg.k_lik;
  int64_t total = ipow(m.nz(), cfg.k_lik + (two ? cfg.k_mi : 0));
  if (total > kMaxTuples)
    throw std::invalid_argument("gradient enumeration too large");
  for_each_tuple(m, x, cfg.k_lik, [&](std::span<const int> z1, double w1) {
    if (!two) {
      fn(w1, z1, z1);
      return;
    }
    for_each_tuple(m, x, cfg.k_mi,
                   [&](std::span<const int> z2, double w2) { fn(w1 * w2, z1, z2); });
  });
}

}  // namespace

Eigen::VectorXd exact_gradient_enumeration(const ParamTinyModel& pm, int x,
                                           const ObjectiveConfig& cfg) {
  TinyModel m = pm.tables();
  Tape t;
  TinyOnTape b = bind_tiny(t, pm);
  Var total;
  bool two = cfg.uses_mi_batch() && cfg.k_mi != cfg.k_lik;
  for_each_joint(m, x, cfg, [&](double, std::span<const int> z1,
                                std::span<const int> z2) {
    LogWeightBatch lik = tuple_batch(t, b, pm.nz, x, z1);
    LogWeightBatch mi;
    const LogWeightBatch* mi_ptr = nullptr;
    if (cfg.uses_mi_batch() && two) {
      mi = tuple_batch(t, b, pm.nz, x, z2);
      mi_ptr = &mi;
    }
    EstimatorOutput out = run_objective(cfg, lik, mi_ptr);
    Var logq = sum(lik.log_prop);
    if (mi_ptr) logq = add(logq, sum(mi_ptr->log_prop));
    Var contrib = mul(exp(logq), sum(out.value_rows));
    total = total.valid() ? add(total, contrib) : contrib;
  });
  Gradients g = t.backward(total);
  return collect_grads(t, b, g, pm.dim());
}

Eigen::VectorXd expected_surrogate_gradient(const ParamTinyModel& pm, int x,
                                            const ObjectiveConfig& cfg) {
  TinyModel m = pm.tables();
  VectorXd acc = VectorXd::Zero(pm.dim());
  bool two = cfg.uses_mi_batch() && cfg.k_mi != cfg.k_lik;
  for_each_joint(m, x, cfg, [&](double w, std::span<const int> z1,
                                std::span<const int> z2) {
    Tape t;
    TinyOnTape b = bind_tiny(t, pm);
    LogWeightBatch lik = tuple_batch(t, b, pm.nz, x, z1);
    LogWeightBatch mi;
    const LogWeightBatch* mi_ptr = nullptr;
    if (cfg.uses_mi_batch() && two) {
      mi = tuple_batch(t, b, pm.nz, x, z2);
      mi_ptr = &mi;
    }
    EstimatorOutput out = run_objective(cfg, lik, mi_ptr);
    Gradients g = t.backward(out.surrogate);
    acc += w * collect_grads(t, b, g, pm.dim());
  });
  return acc;
}

}  // namespace micmco::oracle
