#include "micmco/trainer.hpp"

#include <chrono>
#include <cmath>
#include <ostream>

namespace micmco {

namespace {

// stream purposes; each derives an independent substream of the run seed so
// e.g. changing the eval cadence never perturbs the training trajectory
constexpr uint64_t kInitPurpose = 1;
constexpr uint64_t kDataPurpose = 2;
constexpr uint64_t kLatentPurpose = 3;
constexpr uint64_t kEvalPurpose = 4;
// the canonical eval sample is shared by all runs
constexpr uint64_t kEvalDataSeed = 0x45564c4441544121ull;

}  // namespace

void AdamState::init(const ModelParams& params) {
  m.clear();
  v.clear();
  for (const auto& t : params.tensors) {
    m.push_back(Eigen::ArrayXd::Zero(t.value.size()));
    v.push_back(Eigen::ArrayXd::Zero(t.value.size()));
  }
  t = 0;
}

void adam_step(AdamState& state, ModelParams& params, std::span<const Tensor> grads,
               const AdamConfig& cfg) {
  size_t n = params.tensors.size();
  if (grads.size() != n || state.m.size() != n)
    throw TrainError("adam_step: gradients not aligned with parameters");
  for (size_t i = 0; i < n; ++i) {
    if (!grads[i].same_shape(params.tensors[i].value))
      throw TrainError("adam_step: gradient shape mismatch for " +
                       params.tensors[i].name);
    if (!grads[i].all_finite())
      throw TrainError("non-finite gradient for parameter " + params.tensors[i].name);
  }
  state.t += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, double(state.t));
  double bc2 = 1.0 - std::pow(cfg.beta2, double(state.t));
  for (size_t i = 0; i < n; ++i) {
    const Eigen::ArrayXd& g = grads[i].array();
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g.square();
    Eigen::ArrayXd mhat = state.m[i] / bc1;
    Eigen::ArrayXd vhat = state.v[i] / bc2;
    Eigen::ArrayXd next =
        params.tensors[i].value.array() - cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
    params.tensors[i].value =
        Tensor::from_array(params.tensors[i].value.shape(), std::move(next));
  }
}

Var l2_penalty(const ModelOnTape& m, double coeff) {
  if (coeff < 0.0) throw std::invalid_argument("l2_penalty: negative coefficient");
  Tape& tape = *m.leaves()[0].tape;
  if (coeff == 0.0) return tape.constant(Tensor::scalar(0.0));
  Var total;
  const auto& tensors = m.params().tensors;
  for (size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].name.ends_with(".b")) continue;
    Var s = sum(square(m.leaf(int(i))));
    total = total.valid() ? add(total, s) : s;
  }
  return scale(total, coeff);
}

Dataset Dataset::synthetic(int vocab) {
  if (vocab < 1) throw std::invalid_argument("Dataset: vocab must be >= 1");
  Dataset d;
  d.kind = DatasetKind::synthetic_uniform;
  d.vocab = vocab;
  return d;
}

Dataset Dataset::from_symbols(int vocab, std::vector<int> symbols) {
  if (symbols.empty()) throw std::invalid_argument("Dataset: empty symbol list");
  for (int s : symbols)
    if (s < 0 || s >= vocab) throw std::invalid_argument("Dataset: symbol out of range");
  Dataset d;
  d.kind = DatasetKind::file;
  d.vocab = vocab;
  d.symbols = std::move(symbols);
  return d;
}

std::vector<int> Dataset::sample(int n, RngStream& rng) const {
  if (kind == DatasetKind::synthetic_uniform) return make_synthetic_batch(vocab, n, rng);
  std::vector<int> out(n);
  for (int i = 0; i < n; ++i)
    out[i] = symbols[size_t(rng.next_u64() % symbols.size())];
  return out;
}

std::vector<int> make_synthetic_batch(int vocab, int n, RngStream& rng) {
  if (n < 1) throw std::invalid_argument("make_synthetic_batch: n must be >= 1");
  std::vector<int> out(n);
  for (int i = 0; i < n; ++i)
    out[i] = int(double(vocab) * rng.next_uniform());  // uniform over [0, vocab)
  return out;
}

std::vector<int> eval_symbols(const Dataset& data, int n) {
  if (data.kind == DatasetKind::file) {
    std::vector<int> out;
    out.reserve(size_t(n));
    for (int i = 0; i < n; ++i) out.push_back(data.symbols[size_t(i) % data.symbols.size()]);
    return out;
  }
  RngStream rng(kEvalDataSeed, 0);
  return make_synthetic_batch(data.vocab, n, rng);
}

TrainResult train(const TrainConfig& cfg, std::ostream* log) {
  cfg.objective.validate(cfg.spec.kind);
  if (cfg.batch_size < 1 || cfg.steps < 0 || cfg.eval_every < 1 || cfg.eval_k < 1)
    throw std::invalid_argument("train: invalid run configuration");
  Dataset data = cfg.data.vocab > 0 ? cfg.data : Dataset::synthetic(cfg.vocab);
  if (data.vocab != cfg.vocab)
    throw std::invalid_argument("train: dataset vocab disagrees with model vocab");

  RngStream init_rng(cfg.seed, derive_stream_id(cfg.seed, kInitPurpose));
  RngStream data_rng(cfg.seed, derive_stream_id(cfg.seed, kDataPurpose));
  RngStream latent_rng(cfg.seed, derive_stream_id(cfg.seed, kLatentPurpose));

  TrainResult res;
  res.params = init_model(cfg.spec, cfg.vocab, cfg.hidden, cfg.emb, init_rng);
  AdamState adam;
  adam.init(res.params);
  AdamConfig acfg;
  acfg.lr = cfg.lr;

  std::vector<int> eval_xs = eval_symbols(data, cfg.eval_examples);
  auto t0 = std::chrono::steady_clock::now();

  auto record = [&](int64_t step) {
    // a fresh substream per step, so the eval cadence cannot shift later evals
    RngStream eval_rng(cfg.seed,
                       derive_stream_id(cfg.seed, kEvalPurpose + uint64_t(step)));
    EvalResult er = eval_nll_mi(res.params, eval_xs, cfg.eval_k, eval_rng);
    MetricsRow row;
    row.step = step;
    row.nll = er.nll;
    row.avg_kl = er.avg_kl;
    row.lambda = cfg.objective.effective_lambda();
    row.alpha = cfg.objective.alpha;
    row.base = to_string(cfg.objective.base);
    row.k_lik = cfg.objective.k_lik;
    row.k_mi = cfg.objective.k_mi;
    row.seed = cfg.seed;
    row.wall_time_s = 0.0;  // kept deterministic; see TrainResult::elapsed_s
    res.history.push_back(row);
    if (log) {
      double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                      .count();
      *log << "step " << step << "  nll " << er.nll << "  avg_kl " << er.avg_kl
           << "  elapsed_s " << el << "\n";
    }
  };

  std::vector<Tensor> grads(res.params.tensors.size());
  for (int64_t step = 1; step <= cfg.steps; ++step) {
    std::vector<int> xs = data.sample(cfg.batch_size, data_rng);
    Tape tape;
    ModelOnTape m(tape, res.params);
    EstimatorOutput out = build_objective(cfg.objective, m, xs, latent_rng);
    Var loss = negate(out.surrogate);
    if (cfg.l2 > 0.0) loss = add(loss, l2_penalty(m, cfg.l2));
    if (!std::isfinite(loss.value().value()) || !std::isfinite(out.value)) {
      res.aborted = true;
      res.abort_step = step;
      res.abort_reason = "loss is not finite at step " + std::to_string(step);
      break;
    }
    Gradients g = tape.backward(loss);
    for (size_t i = 0; i < grads.size(); ++i) grads[i] = g.grad(m.leaf(int(i)));
    try {
      adam_step(adam, res.params, grads, acfg);
    } catch (const TrainError& e) {
      res.aborted = true;
      res.abort_step = step;
      res.abort_reason = std::string(e.what()) + " at step " + std::to_string(step);
      break;
    }
    if (step % cfg.eval_every == 0 || step == cfg.steps) record(step);
  }
  res.elapsed_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (res.aborted && log) *log << "aborted: " << res.abort_reason << "\n";
  return res;
}

}  // namespace micmco
