#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "latentface/common.hpp"
#include "latentface/tensor.hpp"

// Forward diffusion over latent vectors: linear-beta DDPM schedule,
// q_sample, the SNR loss weights, and the deterministic DDIM sampler used to
// generate identity latents from a trained denoiser.
namespace lf::diffusion {

inline constexpr double kBetaStart = 1e-4;
inline constexpr double kBetaEnd = 0.02;
inline constexpr double kWeightMax = 1000.0;

// 1-indexed by timestep; index 0 holds the empty-product conventions
// (alpha_bar[0] = 1).
struct Schedule {
  int64_t T = 0;
  std::vector<double> beta;       // beta[0] unused
  std::vector<double> alpha;      // 1 - beta
  std::vector<double> alpha_bar;  // running product, alpha_bar[0] = 1
  std::vector<double> weight;     // alpha_bar/(1-alpha_bar), clamped
};

inline Schedule make_schedule(int64_t T) {
  if (T < 1) throw InvalidInputError("schedule needs T >= 1");
  Schedule s;
  s.T = T;
  s.beta.resize(T + 1);
  s.alpha.resize(T + 1);
  s.alpha_bar.resize(T + 1);
  s.weight.resize(T + 1);
  s.alpha_bar[0] = 1.0;
  s.weight[0] = kWeightMax;
  for (int64_t t = 1; t <= T; ++t) {
    s.beta[t] = T == 1 ? kBetaStart
                       : kBetaStart + (kBetaEnd - kBetaStart) * static_cast<double>(t - 1) /
                             static_cast<double>(T - 1);
    s.alpha[t] = 1.0 - s.beta[t];
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
    s.weight[t] = std::min(kWeightMax, s.alpha_bar[t] / (1.0 - s.alpha_bar[t]));
  }
  return s;
}

// Z_tau = sqrt(abar)*Z0 + sqrt(1-abar)*eps. tau = 0 is the identity limit.
template <class T>
TensorT<T> q_sample(const TensorT<T>& z0, int64_t tau, const TensorT<T>& eps,
                    const Schedule& sched) {
  if (tau < 0 || tau > sched.T) throw InvalidInputError("q_sample: tau out of range");
  if (!z0.same_shape(eps)) throw InvalidInputError("q_sample: shape mismatch");
  T a = static_cast<T>(std::sqrt(sched.alpha_bar[tau]));
  T b = static_cast<T>(std::sqrt(1.0 - sched.alpha_bar[tau]));
  TensorT<T> out(z0.shape);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a * z0[i] + b * eps[i];
  return out;
}

// S timesteps uniformly spaced over [1, T], descending from T.
inline std::vector<int64_t> ddim_timesteps(int64_t T, int64_t S) {
  if (S < 1) throw InvalidInputError("ddim: S >= 1 required");
  if (S > T) throw InvalidInputError("ddim: S > T");
  std::vector<int64_t> taus(S);
  for (int64_t i = 0; i < S; ++i) {
    double t = static_cast<double>(T) - static_cast<double>(i) * static_cast<double>(T) /
                                            static_cast<double>(S);
    taus[i] = std::max<int64_t>(1, static_cast<int64_t>(std::llround(t)));
  }
  return taus;
}

// Deterministic (eta = 0) sampler over a batch of conditions. `denoise` maps
// (z [N,L], tau) -> predicted clean latents [N,L]; the condition is bound
// into it. Every row starts from the same seeded z_T draw so a sample's
// output depends only on its own condition and the seed.
template <class T>
TensorT<T> ddim_sample(const std::function<TensorT<T>(const TensorT<T>&, int64_t)>& denoise,
                       int64_t n, int64_t latent_dim, const Schedule& sched, int64_t S,
                       uint64_t seed) {
  std::vector<int64_t> taus = ddim_timesteps(sched.T, S);
  Rng rng(seed);
  TensorT<T> z({n, latent_dim});
  {
    std::vector<T> row(latent_dim);
    for (int64_t j = 0; j < latent_dim; ++j) row[j] = static_cast<T>(rng.normal());
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < latent_dim; ++j) z.at2(i, j) = row[j];
  }
  TensorT<T> z0_hat;
  for (int64_t i = 0; i < S; ++i) {
    int64_t tau = taus[i];
    int64_t tau_prev = i + 1 < S ? taus[i + 1] : 0;
    z0_hat = denoise(z, tau);
    if (!z0_hat.same_shape(z)) throw InvalidInputError("ddim: denoiser shape mismatch");
    T a = static_cast<T>(std::sqrt(sched.alpha_bar[tau]));
    T b = static_cast<T>(std::sqrt(1.0 - sched.alpha_bar[tau]));
    T ap = static_cast<T>(std::sqrt(sched.alpha_bar[tau_prev]));
    T bp = static_cast<T>(std::sqrt(1.0 - sched.alpha_bar[tau_prev]));
    for (int64_t k = 0; k < z.numel(); ++k) {
      T eps_hat = (z[k] - a * z0_hat[k]) / b;
      z[k] = ap * z0_hat[k] + bp * eps_hat;
    }
  }
  return z0_hat;
}

// Delta_exp = Z_exp - Z_id_hat
template <class T>
TensorT<T> expression_delta(const TensorT<T>& z_exp, const TensorT<T>& z0_hat) {
  if (!z_exp.same_shape(z0_hat)) throw InvalidInputError("expression_delta: shape mismatch");
  TensorT<T> out(z_exp.shape);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = z_exp[i] - z0_hat[i];
  return out;
}

}  // namespace lf::diffusion
