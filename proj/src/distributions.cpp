#include "micmco/distributions.hpp"

#include <cmath>
#include <numbers>

namespace micmco {

namespace {
constexpr double kLogTwoPi = 1.8378770664093454836;  // ln(2*pi)
}

GaussianSample sample_gaussian_reparam(const DiagGaussian& d, RngStream& rng) {
  Eigen::Index n = d.mean.value().size();
  Eigen::ArrayXd noise(n);
  for (Eigen::Index i = 0; i < n; ++i) noise(i) = rng.next_gaussian();
  Tensor nt = Tensor::from_array(d.mean.value().shape(), std::move(noise));
  return {gaussian_from_noise(d, nt), nt};
}

Var gaussian_from_noise(const DiagGaussian& d, const Tensor& noise) {
  if (!noise.same_shape(d.mean.value()))
    throw TapeError("gaussian_from_noise: noise shape " + noise.shape_string() +
                    " != mean shape " + d.mean.value().shape_string());
  Tape& t = *d.mean.tape;
  Var eps = t.constant(noise);
  return d.mean + mul(exp(scale(d.log_var, 0.5)), eps);
}

Var log_density_gaussian(const DiagGaussian& d, Var z) {
  if (!z.value().same_shape(d.mean.value()))
    throw TapeError("log_density_gaussian: z shape " + z.value().shape_string() +
                    " != mean shape " + d.mean.value().shape_string());
  Var diff = z - d.mean;
  Var quad = mul(square(diff), exp(negate(d.log_var)));
  Var per_dim = add(quad, d.log_var);  // log_var + (z-mu)^2 / var
  double dconst = -0.5 * kLogTwoPi * double(d.dim());
  return add_scalar(scale(sum_rows(per_dim), -0.5), dconst);
}

Var log_density_standard_normal(Var z) {
  const Tensor& zv = z.value();
  if (zv.rank() != 2) throw TapeError("log_density_standard_normal: expected rank-2 z");
  double dconst = -0.5 * kLogTwoPi * double(zv.cols());
  return add_scalar(scale(sum_rows(square(z)), -0.5), dconst);
}

Var kl_gaussian_to_standard(const DiagGaussian& d) {
  Var term = add_scalar(sub(add(square(d.mean), exp(d.log_var)), d.log_var), -1.0);
  return scale(sum_rows(term), 0.5);
}

std::vector<int> sample_categorical(const CategoricalSet& d, RngStream& rng) {
  const Tensor& lv = d.logits.value();
  Eigen::Index b = lv.rows();
  Eigen::Index lc = lv.cols();
  if (lc != d.n_latents * d.n_categories)
    throw TapeError("sample_categorical: logits cols " + std::to_string(lc) +
                    " != n_latents*n_categories");
  std::vector<int> out;
  out.reserve(b * d.n_latents);
  std::vector<double> probs(d.n_categories);
  const double* p = lv.data();
  for (Eigen::Index i = 0; i < b; ++i) {
    for (Eigen::Index l = 0; l < d.n_latents; ++l) {
      const double* row = p + i * lc + l * d.n_categories;
      double m = row[0];
      for (Eigen::Index c = 1; c < d.n_categories; ++c) m = std::max(m, row[c]);
      double s = 0.0;
      for (Eigen::Index c = 0; c < d.n_categories; ++c) {
        probs[c] = std::exp(row[c] - m);
        s += probs[c];
      }
      for (auto& v : probs) v /= s;
      out.push_back(rng.next_categorical(probs));
    }
  }
  return out;
}

Var log_mass_categorical(const CategoricalSet& d, std::span<const int> z) {
  const Tensor& lv = d.logits.value();
  Eigen::Index b = lv.rows();
  if (static_cast<Eigen::Index>(z.size()) != b * d.n_latents)
    throw TapeError("log_mass_categorical: index count " + std::to_string(z.size()) +
                    " != batch*n_latents");
  for (int c : z)
    if (c < 0 || c >= d.n_categories)
      throw TapeError("log_mass_categorical: category index " + std::to_string(c) +
                      " out of range [0," + std::to_string(d.n_categories) + ")");
  Var per_latent = reshape(d.logits, {b * d.n_latents, d.n_categories});
  Var lognorm = softmax_log(per_latent);
  Var picked = take_rowwise(lognorm, z);  // (b*n_latents)
  return sum_rows(reshape(picked, {b, d.n_latents}));
}

}  // namespace micmco
