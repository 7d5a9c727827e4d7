#include "micmco/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace micmco {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void fail(int line, const std::string& msg) {
  throw ConfigError("line " + std::to_string(line) + ": " + msg);
}

template <class T>
T parse_num(const std::string& v, int line, const std::string& key) {
  T out{};
  const char* b = v.data();
  const char* e = v.data() + v.size();
  std::from_chars_result r;
  if constexpr (std::is_floating_point_v<T>)
    r = std::from_chars(b, e, out, std::chars_format::general);
  else
    r = std::from_chars(b, e, out);
  if (r.ec != std::errc{} || r.ptr != e)
    fail(line, "invalid value '" + v + "' for key '" + key + "'");
  return out;
}

}  // namespace

ConfigFile ConfigFile::parse_string(const std::string& text) {
  ConfigFile c;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  std::vector<std::string> seen;
  while (std::getline(in, raw)) {
    ++line;
    std::string s = raw;
    size_t hash = s.find('#');
    if (hash != std::string::npos) s = s.substr(0, hash);
    s = trim(s);
    if (s.empty()) continue;
    size_t eq = s.find('=');
    if (eq == std::string::npos) fail(line, "expected key=value, got '" + trim(raw) + "'");
    std::string key = trim(s.substr(0, eq));
    std::string val = trim(s.substr(eq + 1));
    if (key.empty() || val.empty()) fail(line, "empty key or value");
    for (const auto& k : seen)
      if (k == key) fail(line, "duplicate key '" + key + "'");
    seen.push_back(key);

    try {
      if (key == "latent_kind") {
        if (val == "continuous")
          c.latent_kind = LatentKind::continuous;
        else if (val == "categorical")
          c.latent_kind = LatentKind::categorical;
        else
          fail(line, "latent_kind must be continuous or categorical");
      } else if (key == "n_latents")
        c.n_latents = parse_num<int>(val, line, key);
      else if (key == "n_categories")
        c.n_categories = parse_num<int>(val, line, key);
      else if (key == "vocab_size")
        c.vocab_size = parse_num<int>(val, line, key);
      else if (key == "hidden_size")
        c.hidden_size = parse_num<int>(val, line, key);
      else if (key == "emb_size")
        c.emb_size = parse_num<int>(val, line, key);
      else if (key == "base")
        c.base = base_from_string(val);
      else if (key == "k_lik")
        c.k_lik = parse_num<int>(val, line, key);
      else if (key == "k_mi")
        c.k_mi = parse_num<int>(val, line, key);
      else if (key == "objective")
        c.objective = objective_from_string(val);
      else if (key == "lambda") {
        c.lambda = parse_num<double>(val, line, key);
        c.lambda_was_set = true;
      } else if (key == "alpha") {
        c.alpha = parse_num<double>(val, line, key);
        c.alpha_was_set = true;
      } else if (key == "lr")
        c.lr = parse_num<double>(val, line, key);
      else if (key == "batch_size")
        c.batch_size = parse_num<int>(val, line, key);
      else if (key == "steps")
        c.steps = parse_num<int64_t>(val, line, key);
      else if (key == "seed")
        c.seed = parse_num<uint64_t>(val, line, key);
      else if (key == "l2")
        c.l2 = parse_num<double>(val, line, key);
      else if (key == "eval_every")
        c.eval_every = parse_num<int64_t>(val, line, key);
      else if (key == "eval_k")
        c.eval_k = parse_num<int>(val, line, key);
      else if (key == "out_dir")
        c.out_dir = val;
      else
        fail(line, "unknown key '" + key + "'");
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      fail(line, e.what());
    }
  }

  // defaults that depend on other keys, then full validation
  if (!c.n_latents)
    c.n_latents = c.latent_kind == LatentKind::continuous ? 40 : 8;
  if (!c.base)
    c.base = c.latent_kind == LatentKind::continuous ? BaseEstimator::dreg
                                                     : BaseEstimator::vimco;
  if (c.vocab_size < 1 || c.hidden_size < 1 || c.emb_size < 1 || *c.n_latents < 1)
    throw ConfigError("sizes must be positive");
  if (c.latent_kind == LatentKind::categorical && c.n_categories < 2)
    throw ConfigError("n_categories must be >= 2");
  if (c.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (c.steps < 0) throw ConfigError("steps must be >= 0");
  if (c.eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (c.eval_k < 1) throw ConfigError("eval_k must be >= 1");
  if (c.lr <= 0.0) throw ConfigError("lr must be positive");
  if (c.l2 < 0.0) throw ConfigError("l2 must be >= 0");
  if (c.objective == ObjectiveKind::power && c.lambda_was_set)
    throw ConfigError(
        "lambda may not be set with objective=power; it is derived as (alpha-1)/alpha");
  try {
    c.objective_config().validate(c.latent_kind);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return c;
}

ConfigFile ConfigFile::parse_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_string(ss.str());
}

LatentSpec ConfigFile::latent_spec() const {
  LatentSpec s;
  s.kind = latent_kind;
  s.n_latents = *n_latents;
  s.n_categories = latent_kind == LatentKind::categorical ? n_categories : 0;
  return s;
}

ObjectiveConfig ConfigFile::objective_config() const {
  ObjectiveConfig o;
  o.base = *base;
  o.k_lik = k_lik;
  o.k_mi = k_mi;
  o.objective = objective;
  o.lambda = lambda;
  o.alpha = alpha;
  return o;
}

TrainConfig ConfigFile::train_config() const {
  TrainConfig t;
  t.spec = latent_spec();
  t.vocab = vocab_size;
  t.hidden = hidden_size;
  t.emb = emb_size;
  t.objective = objective_config();
  t.lr = lr;
  t.batch_size = batch_size;
  t.steps = steps;
  t.seed = seed;
  t.l2 = l2;
  t.eval_every = eval_every;
  t.eval_k = eval_k;
  t.data = Dataset::synthetic(vocab_size);
  return t;
}

}  // namespace micmco
