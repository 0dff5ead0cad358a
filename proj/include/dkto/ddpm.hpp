// SPDX-License-Identifier: Apache-2.0
//
// DDPM machinery for 2-D point data: linear variance schedule, closed-form
// forward noising, the epsilon-parameterized reverse step, the ancestral
// sampler and the simple (unweighted) denoising loss.
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "dkto/adam.hpp"
#include "dkto/nn.hpp"
#include "dkto/rng.hpp"

namespace dkto {

inline constexpr int kDataDim = 2;

using Point = Eigen::Vector2d;
using Cloud = std::vector<Point>;

struct ScheduleSpec {
  int T = 100;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  bool operator==(const ScheduleSpec&) const = default;
};

// Per-step constants, indexed by t in 1..T.
class NoiseSchedule {
 public:
  const ScheduleSpec& spec() const { return spec_; }
  int T() const { return spec_.T; }

  double beta(int t) const { return beta_[index(t)]; }
  double alpha(int t) const { return alpha_[index(t)]; }
  double alpha_bar(int t) const { return alpha_bar_[index(t)]; }
  // 1 at t = 1.
  double alpha_bar_prev(int t) const { return t == 1 ? 1.0 : alpha_bar_[index(t - 1)]; }
  // Variance of q(x_{t-1} | x_t, x_0); exactly 0 at t = 1.
  double posterior_variance(int t) const { return posterior_variance_[index(t)]; }
  double posterior_coef_x0(int t) const { return coef_x0_[index(t)]; }
  double posterior_coef_xt(int t) const { return coef_xt_[index(t)]; }
  // Reverse-step std of the model policy. sqrt(posterior_variance) for
  // t >= 2; at t = 1 the posterior variance vanishes, so the value from
  // t = 2 is reused (the sampler still adds no noise on that step).
  double sigma(int t) const { return sigma_[index(t)]; }

  bool operator==(const NoiseSchedule& o) const { return spec_ == o.spec_; }

 private:
  friend NoiseSchedule make_linear_schedule(int, double, double);
  std::size_t index(int t) const;

  ScheduleSpec spec_;
  std::vector<double> beta_, alpha_, alpha_bar_, posterior_variance_, coef_x0_, coef_xt_, sigma_;
};

// beta_t = beta_start + (beta_end - beta_start) (t-1)/(T-1).
NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end);
inline NoiseSchedule make_linear_schedule(const ScheduleSpec& s) {
  return make_linear_schedule(s.T, s.beta_start, s.beta_end);
}

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
Point forward_noise(const NoiseSchedule& schedule, const Point& x0, int t, const Point& eps);

// Mean of q(x_{t-1} | x_t, x_0).
Point posterior_mean(const NoiseSchedule& schedule, const Point& x0, const Point& x_t, int t);

// mu = (x_t - beta_t / sqrt(1 - abar_t) eps_hat) / sqrt(alpha_t).
Point reverse_mean_from_eps(const NoiseSchedule& schedule, const Point& x_t, int t, const Point& eps_hat);
// d mu / d eps_hat is this scalar times the identity.
double reverse_mean_eps_coef(const NoiseSchedule& schedule, int t);

double gaussian_logpdf(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& mean,
                       double std);

enum class Cond : std::int8_t { none = -1, bad = 0, good = 1 };

// Noise predictor eps_theta(x_t, t[, cond]). The optional condition table
// (embedding.dim x 2, column per token) is added to the time embedding.
struct DenoiserModel {
  MlpParams mlp;
  NoiseSchedule schedule;
  TimeEmbedding embedding;
  std::optional<Eigen::MatrixXd> cond_vocab;

  void validate() const;
  bool has_cond() const { return cond_vocab.has_value(); }
};

struct DenoiserArch {
  std::vector<int> hidden = {128, 128, 128};
  Activation activation = Activation::silu;
  TimeEmbedding embedding{};
};

DenoiserModel make_denoiser(const DenoiserArch& arch, const ScheduleSpec& schedule, Rng& init_rng);

// Adds a zero-initialized good/bad token table (a model with a zero table
// computes exactly the same function as without one).
void add_cond_vocab(DenoiserModel& model);

// Batched noise prediction. `cond` is empty (no conditioning) or one token
// per column of `x_t`.
struct DenoiserPass {
  ForwardCache cache;
  std::vector<Cond> cond;
  const Eigen::MatrixXd& eps_hat() const { return cache.output; }
};

DenoiserPass predict_noise(const DenoiserModel& model, const Eigen::Matrix2Xd& x_t, std::span<const int> t,
                           std::span<const Cond> cond = {});
Point predict_noise(const DenoiserModel& model, const Point& x_t, int t, Cond cond = Cond::none);

struct ModelGradient {
  MlpGradient mlp;
  std::optional<Eigen::MatrixXd> cond_vocab;

  double squared_norm() const;
};

ModelGradient zero_gradient(const DenoiserModel& model);

// Back-propagates d loss / d eps_hat (2 x batch) into model parameters.
ModelGradient denoiser_backward(const DenoiserModel& model, const Eigen::MatrixXd& upstream,
                                const DenoiserPass& pass);

void accumulate(ModelGradient& into, const ModelGradient& g);

std::vector<TensorView> tensor_views(DenoiserModel& model);
std::vector<ConstTensorView> tensor_views(const DenoiserModel& model);
std::vector<ConstTensorView> tensor_views(const ModelGradient& grad);

// FNV-1a over the raw parameter bytes; used to prove a model was not mutated.
std::uint64_t parameter_checksum(const DenoiserModel& model);

bool parameters_equal(const DenoiserModel& a, const DenoiserModel& b);

// mu_theta(x_t, t) for a single point; t must be >= 1.
Point reverse_step_mean(const DenoiserModel& model, const Point& x_t, int t, Cond cond = Cond::none);

struct LossResult {
  double loss = 0.0;
  ModelGradient grad;
};

// Random inputs of one denoising-loss evaluation.
struct NoiseDraws {
  std::vector<int> t;
  std::vector<Point> eps;
};

NoiseDraws draw_noise(const NoiseSchedule& schedule, std::size_t n, Rng& rng);

// mean_i ||eps_i - eps_hat_i||^2 and its gradient w.r.t. eps_hat.
struct ResidualLoss {
  double loss;
  Eigen::MatrixXd d_eps_hat;
};
ResidualLoss denoising_residual(const Eigen::Matrix2Xd& eps, const Eigen::MatrixXd& eps_hat);

// Simple DDPM loss (lambda(t) = 1) for fixed draws.
LossResult ddpm_loss_at(const DenoiserModel& model, std::span<const Point> x0, const NoiseDraws& draws,
                        std::span<const Cond> cond = {});

LossResult ddpm_loss(const DenoiserModel& model, std::span<const Point> x0, Rng& rng,
                     std::span<const Cond> cond = {});

// Ancestral sampling: x_T ~ N(0, I), x_{t-1} = mu_theta + sigma_t z for
// t >= 2, and x_0 = mu_theta(x_1, 1) without noise.
Cloud sample(const DenoiserModel& model, std::size_t n, std::uint64_t seed, Cond cond = Cond::none);

struct PretrainConfig {
  int steps = 20000;
  int batch_size = 128;
  AdamConfig adam{1e-3, 0.9, 0.999, 1e-8};
};

// Fits the denoiser to `data` with the simple loss; minibatches are drawn
// uniformly with replacement. Returns the per-step loss.
std::vector<double> pretrain(DenoiserModel& model, std::span<const Point> data, const PretrainConfig& cfg, Rng& rng);

Eigen::Matrix2Xd to_matrix(std::span<const Point> points);

}  // namespace dkto
