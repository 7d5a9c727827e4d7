#include "micmco/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace micmco {

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

LatentSpec default_latent_spec(LatentKind kind) {
  if (kind == LatentKind::continuous) return {LatentKind::continuous, 40, 0};
  return {LatentKind::categorical, 8, 10};
}

int ModelParams::index_of(const std::string& name) const {
  for (size_t i = 0; i < tensors.size(); ++i)
    if (tensors[i].name == name) return static_cast<int>(i);
  throw std::out_of_range("ModelParams: no tensor named " + name);
}

const Tensor& ModelParams::get(const std::string& name) const {
  return tensors[index_of(name)].value;
}

void ModelParams::set(const std::string& name, Tensor t) {
  ParamTensor& pt = tensors[index_of(name)];
  if (!pt.value.same_shape(t))
    throw std::invalid_argument("ModelParams::set: shape mismatch for " + name);
  pt.value = std::move(t);
}

int64_t ModelParams::parameter_count() const {
  int64_t n = 0;
  for (const auto& t : tensors) n += t.value.size();
  return n;
}

namespace {

Tensor glorot(Shape shape, RngStream& rng) {
  Eigen::Index fan_in = shape.size() == 2 ? shape[0] : shape[0];
  Eigen::Index fan_out = shape.size() == 2 ? shape[1] : shape[0];
  double s = std::sqrt(6.0 / double(fan_in + fan_out));
  Eigen::ArrayXd a(shape_size(shape));
  for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = (2.0 * rng.next_uniform() - 1.0) * s;
  return Tensor::from_array(std::move(shape), std::move(a));
}

}  // namespace

ModelParams init_model(const LatentSpec& spec, int vocab, int hidden, int emb,
                       RngStream& rng) {
  if (vocab <= 0 || hidden <= 0 || emb <= 0)
    throw std::invalid_argument("init_model: sizes must be positive");
  if (spec.n_latents <= 0 ||
      (spec.kind == LatentKind::categorical && spec.n_categories <= 0))
    throw std::invalid_argument("init_model: invalid latent spec");

  ModelParams p;
  p.spec = spec;
  p.vocab = vocab;
  p.hidden = hidden;
  p.emb = emb;

  auto w = [&](const std::string& name, Shape shape, bool theta) {
    p.tensors.push_back({name, glorot(std::move(shape), rng), theta});
  };
  auto b = [&](const std::string& name, Eigen::Index n, bool theta) {
    p.tensors.push_back({name, Tensor::zeros({n}), theta});
  };

  // encoder (phi)
  w("enc.embed", {vocab, emb}, false);
  w("enc.h1.w", {emb, hidden}, false);
  b("enc.h1.b", hidden, false);
  w("enc.h2.w", {hidden, hidden}, false);
  b("enc.h2.b", hidden, false);
  if (spec.kind == LatentKind::continuous) {
    w("enc.mean.w", {hidden, spec.n_latents}, false);
    b("enc.mean.b", spec.n_latents, false);
    w("enc.logvar.w", {hidden, spec.n_latents}, false);
    b("enc.logvar.b", spec.n_latents, false);
  } else {
    Eigen::Index lc = Eigen::Index(spec.n_latents) * spec.n_categories;
    w("enc.logits.w", {hidden, lc}, false);
    b("enc.logits.b", lc, false);
  }

  // decoder (theta); categorical decoders embed the latents and have a
  // single hidden layer, continuous decoders take z directly with two
  if (spec.kind == LatentKind::continuous) {
    w("dec.h1.w", {spec.n_latents, hidden}, true);
    b("dec.h1.b", hidden, true);
    w("dec.h2.w", {hidden, hidden}, true);
    b("dec.h2.b", hidden, true);
  } else {
    Eigen::Index lc = Eigen::Index(spec.n_latents) * spec.n_categories;
    w("dec.embed", {lc, emb}, true);
    w("dec.h1.w", {emb, hidden}, true);
    b("dec.h1.b", hidden, true);
  }
  w("dec.out.w", {hidden, vocab}, true);
  b("dec.out.b", vocab, true);
  return p;
}

ModelOnTape::ModelOnTape(Tape& tape, const ModelParams& params)
    : tape_(&tape), params_(&params) {
  leaves_.reserve(params.tensors.size());
  for (const auto& t : params.tensors) leaves_.push_back(tape.param(t.value));
  detached_.assign(params.tensors.size(), Var{});
}

Var ModelOnTape::leaf(const std::string& name) const {
  return leaves_[params_->index_of(name)];
}

Var ModelOnTape::get(const std::string& name, Detach d) const {
  int i = params_->index_of(name);
  bool want_detach = (d == Detach::theta && params_->tensors[i].theta) ||
                     (d == Detach::phi && !params_->tensors[i].theta);
  if (!want_detach) return leaves_[i];
  if (!detached_[i].valid()) detached_[i] = tape_->stop_gradient(leaves_[i]);
  return detached_[i];
}

namespace {

Var dense(const ModelOnTape& m, Var x, const std::string& prefix, Detach d) {
  return add(matmul(x, m.get(prefix + ".w", d)), m.get(prefix + ".b", d));
}

Var encoder_hidden(const ModelOnTape& m, std::span<const int> xs, Detach d) {
  const ModelParams& p = m.params();
  for (int x : xs)
    if (x < 0 || x >= p.vocab)
      throw std::out_of_range("encode: symbol " + std::to_string(x) +
                              " out of range [0," + std::to_string(p.vocab) + ")");
  Var e = embedding_lookup(m.get("enc.embed", d), xs);
  Var h1 = tanh(dense(m, e, "enc.h1", d));
  return tanh(dense(m, h1, "enc.h2", d));
}

constexpr double kLogVarClamp = 20.0;

}  // namespace

Proposal encode(const ModelOnTape& m, std::span<const int> xs, Detach d) {
  const ModelParams& p = m.params();
  Var h = encoder_hidden(m, xs, d);
  if (p.spec.kind == LatentKind::continuous) {
    Var mean = dense(m, h, "enc.mean", d);
    Var log_var = clamp(dense(m, h, "enc.logvar", d), -kLogVarClamp, kLogVarClamp);
    return DiagGaussian{mean, log_var};
  }
  Var logits = dense(m, h, "enc.logits", d);
  return CategoricalSet{logits, p.spec.n_latents, p.spec.n_categories};
}

namespace {

Var decode_logits_to_loglik(const ModelOnTape& m, Var hidden, std::span<const int> xs,
                            Detach d) {
  const ModelParams& p = m.params();
  for (int x : xs)
    if (x < 0 || x >= p.vocab)
      throw std::out_of_range("decode: symbol " + std::to_string(x) + " out of range");
  Var logits = dense(m, hidden, "dec.out", d);
  if (static_cast<Eigen::Index>(xs.size()) != logits.value().rows())
    throw TapeError("decode_log_likelihood: target count " + std::to_string(xs.size()) +
                    " != rows " + std::to_string(logits.value().rows()));
  return sub(take_rowwise(logits, xs), logsumexp_rows(logits));
}

}  // namespace

Var decode_log_likelihood(const ModelOnTape& m, Var z, std::span<const int> xs,
                          Detach d) {
  const ModelParams& p = m.params();
  if (p.spec.kind != LatentKind::continuous)
    throw TapeError("decode_log_likelihood: tensor z requires continuous latents");
  if (z.value().rank() != 2 || z.value().cols() != p.spec.n_latents)
    throw TapeError("decode_log_likelihood: z shape " + z.value().shape_string() +
                    " does not match latent dim " + std::to_string(p.spec.n_latents));
  Var h1 = tanh(dense(m, z, "dec.h1", d));
  Var h2 = tanh(dense(m, h1, "dec.h2", d));
  return decode_logits_to_loglik(m, h2, xs, d);
}

Var decode_log_likelihood(const ModelOnTape& m, std::span<const int> z,
                          std::span<const int> xs, Detach d) {
  const ModelParams& p = m.params();
  if (p.spec.kind != LatentKind::categorical)
    throw TapeError("decode_log_likelihood: index z requires categorical latents");
  Eigen::Index n = static_cast<Eigen::Index>(xs.size());
  int L = p.spec.n_latents, C = p.spec.n_categories;
  if (static_cast<Eigen::Index>(z.size()) != n * L)
    throw TapeError("decode_log_likelihood: z index count mismatch");
  // per-latent embeddings summed; latent l owns rows [l*C, (l+1)*C) of the table
  Var table = m.get("dec.embed", d);
  Var esum;
  std::vector<int> idx(n);
  for (int l = 0; l < L; ++l) {
    for (Eigen::Index i = 0; i < n; ++i) {
      int c = z[i * L + l];
      if (c < 0 || c >= C)
        throw TapeError("decode_log_likelihood: category index out of range");
      idx[i] = l * C + c;
    }
    Var e = embedding_lookup(table, idx);
    esum = l == 0 ? e : add(esum, e);
  }
  Var h1 = tanh(dense(m, esum, "dec.h1", d));
  return decode_logits_to_loglik(m, h1, xs, d);
}

// ---------------------------------------------------------------------------
// checkpoint serialization

namespace {

constexpr char kMagic[8] = {'M', 'I', 'C', 'M', 'C', 'O', '0', '1'};

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(v & 0xff);
  out.push_back((v >> 8) & 0xff);
  out.push_back((v >> 16) & 0xff);
  out.push_back((v >> 24) & 0xff);
}

struct Reader {
  std::span<const uint8_t> b;
  size_t pos = 0;

  void need(size_t n, const char* what) {
    if (pos + n > b.size())
      throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
  }
  uint8_t u8(const char* what) {
    need(1, what);
    return b[pos++];
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = uint32_t(b[pos]) | uint32_t(b[pos + 1]) << 8 |
                 uint32_t(b[pos + 2]) << 16 | uint32_t(b[pos + 3]) << 24;
    pos += 4;
    return v;
  }
  std::string str(size_t n) {
    need(n, "name");
    std::string s(reinterpret_cast<const char*>(b.data() + pos), n);
    pos += n;
    return s;
  }
};

}  // namespace

std::vector<uint8_t> save_checkpoint(const ModelParams& p) {
  std::vector<uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 8);
  out.push_back(p.spec.kind == LatentKind::continuous ? 0 : 1);
  put_u32(out, uint32_t(p.spec.n_latents));
  put_u32(out, uint32_t(p.spec.n_categories));
  put_u32(out, uint32_t(p.tensors.size()));
  for (const auto& t : p.tensors) {
    put_u32(out, uint32_t(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    put_u32(out, uint32_t(t.value.rank()));
    for (Eigen::Index d : t.value.shape()) put_u32(out, uint32_t(d));
    out.push_back(t.theta ? 0 : 1);
  }
  for (const auto& t : p.tensors) {
    size_t off = out.size();
    out.resize(off + size_t(t.value.size()) * 8);
    std::memcpy(out.data() + off, t.value.data(), size_t(t.value.size()) * 8);
  }
  return out;
}

ModelParams load_checkpoint(std::span<const uint8_t> bytes, const LatentSpec* expect) {
  Reader r{bytes};
  r.need(8, "magic");
  if (std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw CheckpointError("bad magic or unsupported checkpoint version");
  r.pos = 8;

  ModelParams p;
  uint8_t kind = r.u8("latent kind");
  if (kind > 1) throw CheckpointError("invalid latent kind byte");
  p.spec.kind = kind == 0 ? LatentKind::continuous : LatentKind::categorical;
  p.spec.n_latents = int(r.u32("n_latents"));
  p.spec.n_categories = int(r.u32("n_categories"));

  uint32_t count = r.u32("tensor count");
  if (count > 1u << 16) throw CheckpointError("implausible tensor count");
  struct Entry {
    std::string name;
    Shape shape;
    bool theta;
  };
  std::vector<Entry> entries;
  size_t total = 0;
  for (uint32_t i = 0; i < count; ++i) {
    Entry e;
    uint32_t nl = r.u32("name length");
    e.name = r.str(nl);
    uint32_t rank = r.u32("rank");
    if (rank > 2) throw CheckpointError("tensor rank > 2 in table");
    for (uint32_t k = 0; k < rank; ++k) e.shape.push_back(Eigen::Index(r.u32("dim")));
    e.theta = r.u8("tag") == 0;
    total += size_t(shape_size(e.shape));
    entries.push_back(std::move(e));
  }
  if (bytes.size() - r.pos != total * 8)
    throw CheckpointError("payload length disagrees with shape table: expected " +
                          std::to_string(total * 8) + " bytes, found " +
                          std::to_string(bytes.size() - r.pos));
  for (auto& e : entries) {
    Eigen::ArrayXd a(shape_size(e.shape));
    std::memcpy(a.data(), bytes.data() + r.pos, size_t(a.size()) * 8);
    r.pos += size_t(a.size()) * 8;
    p.tensors.push_back({e.name, Tensor::from_array(std::move(e.shape), std::move(a)),
                         e.theta});
  }

  // recover sizes from canonical tensor shapes
  const Tensor& emb = p.get("enc.embed");
  p.vocab = int(emb.rows());
  p.emb = int(emb.cols());
  p.hidden = int(p.get("enc.h1.w").cols());

  if (expect && !(p.spec == *expect))
    throw CheckpointError("checkpoint latent spec does not match the requested spec");
  return p;
}

void write_checkpoint_file(const ModelParams& p, const std::string& path) {
  std::vector<uint8_t> bytes = save_checkpoint(p);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!f) throw CheckpointError("write failed for " + path);
}

ModelParams load_checkpoint_file(const std::string& path, const LatentSpec* expect) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  return load_checkpoint(bytes, expect);
}

}  // namespace micmco
