#pragma once

#include <cstdint>
#include <span>

namespace micmco {

/// Deterministic counter-based random stream. The sequence is a pure function
/// of (seed, stream_id): the state is derived by mixing both, and each draw
/// advances a counter through the splitmix64 output function. Identical on
/// every platform; distinct stream_ids give independent streams.
class RngStream {
 public:
  RngStream(uint64_t seed, uint64_t stream_id);

  uint64_t next_u64();
  /// Uniform on (0,1), never exactly 0 or 1.
  double next_uniform();
  /// Standard normal via the inverse CDF (Wichura's AS 241, double precision).
  double next_gaussian();
  /// Inverse-CDF draw from a normalized probability vector; a draw landing
  /// exactly on a boundary resolves to the lower index.
  int next_categorical(std::span<const double> probs);

  uint64_t seed() const { return seed_; }
  uint64_t stream_id() const { return stream_id_; }

 private:
  uint64_t seed_;
  uint64_t stream_id_;
  uint64_t counter_;
};

/// High-precision inverse of the standard normal CDF (AS 241 PPND16).
double inverse_normal_cdf(double p);

/// Stable stream-id derivation for named substreams.
uint64_t derive_stream_id(uint64_t base, uint64_t purpose);

}  // namespace micmco
