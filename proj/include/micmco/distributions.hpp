#pragma once

#include "micmco/rng.hpp"
#include "micmco/tape.hpp"

#include <vector>

namespace micmco {

/// Diagonal Gaussian with parameters as tape nodes of shape (B,d).
/// The standard-normal prior is the mean=0, log_var=0 case.
struct DiagGaussian {
  Var mean;
  Var log_var;

  Eigen::Index batch() const { return mean.value().rows(); }
  Eigen::Index dim() const { return mean.value().cols(); }
};

struct GaussianSample {
  Var z;         // (B,d), differentiable through mean and log_var
  Tensor noise;  // the N(0,I) draw used, retained for replay
};

/// z = mean + exp(log_var/2) * noise with noise ~ N(0,I).
GaussianSample sample_gaussian_reparam(const DiagGaussian& d, RngStream& rng);
/// Reparameterized sample with caller-supplied noise.
Var gaussian_from_noise(const DiagGaussian& d, const Tensor& noise);

/// Row-wise log density of z (B,d) under d; returns (B).
Var log_density_gaussian(const DiagGaussian& d, Var z);
/// Row-wise log density under the standard normal prior; returns (B).
Var log_density_standard_normal(Var z);
/// Row-wise analytic KL(d || N(0,I)); returns (B).
Var kl_gaussian_to_standard(const DiagGaussian& d);

/// Set of independent categorical latents; logits is a (B, n_latents*n_categories)
/// tape node, one block of n_categories logits per latent.
struct CategoricalSet {
  Var logits;
  Eigen::Index n_latents = 0;
  Eigen::Index n_categories = 0;

  Eigen::Index batch() const { return logits.value().rows(); }
};

/// One category index per (row, latent), flattened row-major to length B*n_latents.
/// Inverse-CDF over the normalized probabilities; boundary ties resolve to the
/// lower index. No gradient path.
std::vector<int> sample_categorical(const CategoricalSet& d, RngStream& rng);

/// Row-wise log mass of the index assignment z (length B*n_latents); returns (B).
Var log_mass_categorical(const CategoricalSet& d, std::span<const int> z);

}  // namespace micmco
