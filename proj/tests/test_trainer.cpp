#include "micmco/trainer.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <cmath>

using namespace micmco;

namespace {

ModelParams single_param(double w) {
  ModelParams p;
  p.spec = {LatentKind::continuous, 1, 0};
  p.tensors.push_back({"w", Tensor::scalar(w), true});
  return p;
}

}  // namespace

TEST_CASE("adam first-step magnitude and zero-gradient fixpoint") {
  ModelParams p = single_param(0.0);
  AdamState st;
  st.init(p);
  AdamConfig cfg;
  cfg.lr = 0.01;
  std::vector<Tensor> g{Tensor::scalar(1.0)};
  adam_step(st, p, g, cfg);
  CHECK(p.tensors[0].value.value()
        == doctest::Approx(-0.01 / (1.0 + 1e-8)).epsilon(1e-12));

  ModelParams q = single_param(0.7);
  AdamState st2;
  st2.init(q);
  std::vector<Tensor> zero{Tensor::scalar(0.0)};
  adam_step(st2, q, zero, cfg);
  CHECK(q.tensors[0].value.value() == 0.7);
}

TEST_CASE("adam drives a quadratic bowl toward zero monotonically") {
  ModelParams p = single_param(1.0);
  AdamState st;
  st.init(p);
  AdamConfig cfg;
  cfg.lr = 0.05;
  double prev = 1.0;
  bool monotone = true;
  for (int i = 0; i < 100; ++i) {
    double w = p.tensors[0].value.value();
    std::vector<Tensor> g{Tensor::scalar(2.0 * w)};
    adam_step(st, p, g, cfg);
    double now = std::fabs(p.tensors[0].value.value());
    monotone = monotone && now <= prev + 1e-12;
    prev = now;
  }
  CHECK(monotone);
  CHECK(prev < 0.1);
}

TEST_CASE("adam rejects non-finite gradients naming the parameter") {
  ModelParams p = single_param(0.0);
  AdamState st;
  st.init(p);
  std::vector<Tensor> g{Tensor::scalar(std::nan(""))};
  CHECK_THROWS_WITH_AS(adam_step(st, p, g, AdamConfig{}), doctest::Contains("w"),
                       TrainError);
}

TEST_CASE("l2 penalty value and gradient") {
  RngStream rng(1, 0);
  ModelParams p = init_model({LatentKind::continuous, 2, 0}, 8, 4, 4, rng);
  {
    Tape t;
    ModelOnTape m(t, p);
    CHECK(l2_penalty(m, 0.0).value().value() == 0.0);
  }
  // value: coeff * sum of squared weights, biases excluded
  double expect = 0;
  for (const auto& pt : p.tensors)
    if (!pt.name.ends_with(".b")) expect += pt.value.array().square().sum();
  Tape t;
  ModelOnTape m(t, p);
  CHECK(l2_penalty(m, 0.5).value().value() == doctest::Approx(0.5 * expect));
  // gradient 2*c*w on a weight, zero on a bias
  Gradients g = t.backward(l2_penalty(m, 0.5));
  const Tensor& w = p.get("enc.h1.w");
  Tensor gw = g.grad(m.leaf("enc.h1.w"));
  CHECK((gw.array() - 2 * 0.5 * w.array()).abs().maxCoeff() <= 1e-12);
  CHECK(g.grad(m.leaf("enc.h1.b")).array().abs().maxCoeff() == 0.0);

  // the trivial one-weight case: w=2, c=0.5 -> penalty 2.0
  ModelParams sp = single_param(2.0);
  sp.tensors[0].name = "w";
  Tape t2;
  ModelOnTape m2(t2, sp);
  CHECK(l2_penalty(m2, 0.5).value().value() == doctest::Approx(2.0));
}

TEST_CASE("synthetic batches: edge cases, determinism, uniformity") {
  RngStream rng(3, 0);
  std::vector<int> ones = make_synthetic_batch(1, 100, rng);
  for (int v : ones) CHECK(v == 0);

  RngStream a(4, 0), b(4, 0);
  CHECK(make_synthetic_batch(1000, 64, a) == make_synthetic_batch(1000, 64, b));

  // chi-square uniformity over 1e6 draws at vocab 100 (threshold ~ p=0.001)
  RngStream c(5, 0);
  std::vector<int> counts(100, 0);
  int n = 1000000;
  std::vector<int> draws = make_synthetic_batch(100, n, c);
  for (int v : draws) counts[size_t(v)]++;
  double expect = double(n) / 100.0, chi2 = 0;
  for (int cnt : counts) chi2 += (cnt - expect) * (cnt - expect) / expect;
  CHECK(chi2 < 148.23);  // chi^2_{0.999, 99 dof}
}

TEST_CASE("zero-step run returns the initial model and empty history") {
  TrainConfig cfg;
  cfg.spec = {LatentKind::continuous, 4, 0};
  cfg.vocab = 50;
  cfg.hidden = 8;
  cfg.emb = 8;
  cfg.objective.base = BaseEstimator::elbo_analytic;
  cfg.objective.k_lik = cfg.objective.k_mi = 1;
  cfg.steps = 0;
  cfg.batch_size = 4;
  cfg.eval_examples = 8;
  cfg.data = Dataset::synthetic(50);
  TrainResult res = train(cfg);
  CHECK(res.history.empty());
  CHECK_FALSE(res.aborted);
  RngStream init(cfg.seed, derive_stream_id(cfg.seed, 1));
  ModelParams expect = init_model(cfg.spec, 50, 8, 8, init);
  for (size_t i = 0; i < expect.tensors.size(); ++i)
    CHECK((res.params.tensors[i].value.array() == expect.tensors[i].value.array()).all());
}

TEST_CASE("identical configs produce bit-identical metric histories") {
  TrainConfig cfg;
  cfg.spec = {LatentKind::categorical, 2, 4};
  cfg.vocab = 30;
  cfg.hidden = 8;
  cfg.emb = 8;
  cfg.objective.base = BaseEstimator::vimco;
  cfg.objective.k_lik = cfg.objective.k_mi = 3;
  cfg.objective.objective = ObjectiveKind::kl;
  cfg.objective.lambda = 0.5;
  cfg.steps = 25;
  cfg.batch_size = 8;
  cfg.eval_every = 10;
  cfg.eval_k = 8;
  cfg.eval_examples = 16;
  cfg.seed = 17;
  cfg.data = Dataset::synthetic(30);
  TrainResult a = train(cfg);
  TrainResult b = train(cfg);
  REQUIRE(a.history.size() == b.history.size());
  REQUIRE(a.history.size() == 3);  // steps 10, 20, 25
  for (size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].step == b.history[i].step);
    CHECK(a.history[i].nll == b.history[i].nll);        // bit identical
    CHECK(a.history[i].avg_kl == b.history[i].avg_kl);  // bit identical
  }
  for (size_t i = 0; i < a.params.tensors.size(); ++i)
    CHECK((a.params.tensors[i].value.array() == b.params.tensors[i].value.array()).all());

  // eval cadence does not perturb the training trajectory
  TrainConfig dense = cfg;
  dense.eval_every = 5;
  TrainResult c = train(dense);
  CHECK(c.history.back().nll == a.history.back().nll);
}

TEST_CASE("training reduces the loss on a tiny skewed task") {
  // skewed data: the uniform-init model starts at ln(20) nats, well above the
  // data entropy, so learning shows as a clear NLL drop
  std::vector<int> symbols;
  for (int i = 0; i < 64; ++i) symbols.push_back(i % 5);
  TrainConfig cfg;
  cfg.spec = {LatentKind::continuous, 2, 0};
  cfg.vocab = 20;
  cfg.hidden = 8;
  cfg.emb = 8;
  cfg.objective.base = BaseEstimator::elbo_analytic;
  cfg.objective.k_lik = cfg.objective.k_mi = 1;
  cfg.lr = 3e-3;
  cfg.steps = 600;
  cfg.batch_size = 16;
  cfg.eval_every = 100;
  cfg.eval_k = 16;
  cfg.eval_examples = 64;
  cfg.data = Dataset::from_symbols(20, symbols);
  TrainResult res = train(cfg);
  REQUIRE_FALSE(res.aborted);
  REQUIRE(res.history.size() >= 2);
  // starts at the uniform ln(20) = 3.0 nats; converges toward the data
  // entropy ln(5) = 1.61, the floor
  CHECK(res.history.back().nll < 2.0);
  CHECK(res.history.back().nll >= std::log(5.0) - 0.05);
}

TEST_CASE("divergent runs abort with the failing step reported") {
  TrainConfig cfg;
  cfg.spec = {LatentKind::continuous, 2, 0};
  cfg.vocab = 20;
  cfg.hidden = 8;
  cfg.emb = 8;
  cfg.objective.base = BaseEstimator::iwae;
  cfg.objective.k_lik = cfg.objective.k_mi = 2;
  cfg.lr = 1e155;  // forces overflow within a few steps
  cfg.steps = 50;
  cfg.batch_size = 8;
  cfg.eval_examples = 8;
  cfg.data = Dataset::synthetic(20);
  TrainResult res = train(cfg);
  CHECK(res.aborted);
  CHECK(res.abort_step >= 1);
  CHECK_FALSE(res.abort_reason.empty());
}

TEST_CASE("iwae-100 evaluation agrees with enumeration on a tiny trained model") {
  // categorical latents make the marginal exactly enumerable
  TrainConfig cfg;
  cfg.spec = {LatentKind::categorical, 2, 3};
  cfg.vocab = 5;
  cfg.hidden = 8;
  cfg.emb = 8;
  cfg.objective.base = BaseEstimator::vimco;
  cfg.objective.k_lik = cfg.objective.k_mi = 4;
  cfg.lr = 3e-3;
  cfg.steps = 500;
  cfg.batch_size = 16;
  cfg.eval_every = 500;
  cfg.eval_k = 16;
  cfg.eval_examples = 32;
  cfg.data = Dataset::synthetic(5);
  TrainResult res = train(cfg);
  REQUIRE_FALSE(res.aborted);

  std::vector<int> xs = eval_symbols(cfg.data, 64);
  // exact -ln p(x) per example by enumerating the 9 latent configurations
  std::vector<double> exact;
  {
    Tape t;
    ModelOnTape m(t, res.params);
    for (int x : xs) {
      double px = 0;
      std::vector<int> one{x};
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) {
          std::vector<int> z{a, b};
          px += std::exp(decode_log_likelihood(m, z, one).value().value()) / 9.0;
        }
      exact.push_back(-std::log(px));
    }
  }
  // per-example IWAE-100 estimates; their bias at K=100 on a trained model is
  // far below the Monte-Carlo noise
  RngStream rng(123, 0);
  double dsum = 0, dsq = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    std::vector<int> one{xs[i]};
    double est = nll_estimate(res.params, one, rng, 100);
    double d = est - exact[i];
    dsum += d;
    dsq += d * d;
  }
  double n = double(xs.size());
  double mean = dsum / n;
  double se = std::sqrt(std::max(0.0, dsq / n - mean * mean) / n);
  CHECK(std::fabs(mean) <= 3 * se + 1e-3);
  CHECK(mean >= -3 * se - 1e-6);  // the bound direction: estimate >= exact NLL
}

TEST_CASE("file datasets sample only their symbols") {
  Dataset d = Dataset::from_symbols(10, {1, 3, 5});
  RngStream rng(9, 0);
  std::vector<int> batch = d.sample(200, rng);
  for (int v : batch) CHECK((v == 1 || v == 3 || v == 5));
  std::vector<int> ev = eval_symbols(d, 7);
  CHECK(ev == std::vector<int>{1, 3, 5, 1, 3, 5, 1});
  CHECK_THROWS(Dataset::from_symbols(4, {1, 7}));
}
