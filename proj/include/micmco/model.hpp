#pragma once

#include "micmco/distributions.hpp"
#include "micmco/rng.hpp"
#include "micmco/tape.hpp"

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

namespace micmco {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class LatentKind { continuous, categorical };

struct LatentSpec {
  LatentKind kind = LatentKind::continuous;
  int n_latents = 40;     // 8 is the categorical default
  int n_categories = 10;  // categorical only

  /// Width of a latent draw: d for continuous, n_latents index slots for categorical.
  int draw_dim() const {
    return kind == LatentKind::continuous ? n_latents : n_latents;
  }
  bool operator==(const LatentSpec&) const = default;
};

LatentSpec default_latent_spec(LatentKind kind);

struct ParamTensor {
  std::string name;
  Tensor value;
  bool theta = false;  // decoder side; false means phi (encoder side)
};

/// Named parameter store with an explicit, total theta/phi partition.
struct ModelParams {
  LatentSpec spec;
  int vocab = 0;
  int hidden = 0;
  int emb = 0;
  std::vector<ParamTensor> tensors;

  int index_of(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
  void set(const std::string& name, Tensor t);
  int64_t parameter_count() const;
};

/// Glorot-uniform weights, zero biases; deterministic under the stream.
ModelParams init_model(const LatentSpec& spec, int vocab, int hidden, int emb,
                       RngStream& rng);

enum class Detach { none, theta, phi };

/// Parameter leaves bound to one tape, with cached stop-gradient views of the
/// theta or phi side for estimators that block one partition.
class ModelOnTape {
 public:
  ModelOnTape(Tape& tape, const ModelParams& params);

  Var leaf(const std::string& name) const;
  Var leaf(int index) const { return leaves_[index]; }
  Var get(const std::string& name, Detach d) const;
  const ModelParams& params() const { return *params_; }
  const std::vector<Var>& leaves() const { return leaves_; }

 private:
  Tape* tape_;
  const ModelParams* params_;
  std::vector<Var> leaves_;
  mutable std::vector<Var> detached_;  // lazily created stop_gradient wrappers
};

using Proposal = std::variant<DiagGaussian, CategoricalSet>;

/// q(z|x) for a batch of symbols. log_var is clamped to [-20,20].
Proposal encode(const ModelOnTape& m, std::span<const int> xs, Detach d = Detach::none);

/// ln p(x|z) rows for continuous z (N, d); xs has one target symbol per row.
Var decode_log_likelihood(const ModelOnTape& m, Var z, std::span<const int> xs,
                          Detach d = Detach::none);
/// ln p(x|z) rows for categorical z given as indices (N*n_latents).
Var decode_log_likelihood(const ModelOnTape& m, std::span<const int> z,
                          std::span<const int> xs, Detach d = Detach::none);

// Checkpoint serialization: magic "MICMCO01", latent spec, a length-prefixed
// table of (name, dims, theta/phi tag), then the row-major float64 payload,
// all little-endian. Round trips are bit exact.
std::vector<uint8_t> save_checkpoint(const ModelParams& params);
ModelParams load_checkpoint(std::span<const uint8_t> bytes,
                            const LatentSpec* expect = nullptr);
void write_checkpoint_file(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint_file(const std::string& path,
                                 const LatentSpec* expect = nullptr);

}  // namespace micmco
