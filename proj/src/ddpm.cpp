// SPDX-License-Identifier: Apache-2.0
#include "dkto/ddpm.hpp"

#include <cmath>
#include <cstring>
#include <numbers>
#include <string>

#include "dkto/errors.hpp"

namespace dkto {

std::size_t NoiseSchedule::index(int t) const {
  if (t < 1 || t > spec_.T)
    throw UsageError("time step " + std::to_string(t) + " outside 1.." + std::to_string(spec_.T));
  return static_cast<std::size_t>(t - 1);
}

NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end) {
  if (T < 2) throw ConfigError("schedule needs T >= 2");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw ConfigError("schedule needs 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.spec_ = {T, beta_start, beta_end};
  const auto n = static_cast<std::size_t>(T);
  s.beta_.resize(n);
  s.alpha_.resize(n);
  s.alpha_bar_.resize(n);
  s.posterior_variance_.resize(n);
  s.coef_x0_.resize(n);
  s.coef_xt_.resize(n);
  s.sigma_.resize(n);
  double abar = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double b = beta_start + (beta_end - beta_start) * static_cast<double>(i) / static_cast<double>(T - 1);
    const double abar_prev = abar;
    abar *= 1.0 - b;
    s.beta_[i] = b;
    s.alpha_[i] = 1.0 - b;
    s.alpha_bar_[i] = abar;
    s.posterior_variance_[i] = b * (1.0 - abar_prev) / (1.0 - abar);
    s.coef_x0_[i] = b * std::sqrt(abar_prev) / (1.0 - abar);
    s.coef_xt_[i] = std::sqrt(1.0 - b) * (1.0 - abar_prev) / (1.0 - abar);
  }
  for (std::size_t i = 0; i < n; ++i) s.sigma_[i] = std::sqrt(s.posterior_variance_[i == 0 ? 1 : i]);
  return s;
}

Point forward_noise(const NoiseSchedule& schedule, const Point& x0, int t, const Point& eps) {
  const double ab = schedule.alpha_bar(t);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

Point posterior_mean(const NoiseSchedule& schedule, const Point& x0, const Point& x_t, int t) {
  return schedule.posterior_coef_x0(t) * x0 + schedule.posterior_coef_xt(t) * x_t;
}

double reverse_mean_eps_coef(const NoiseSchedule& schedule, int t) {
  return -schedule.beta(t) / (std::sqrt(1.0 - schedule.alpha_bar(t)) * std::sqrt(schedule.alpha(t)));
}

Point reverse_mean_from_eps(const NoiseSchedule& schedule, const Point& x_t, int t, const Point& eps_hat) {
  const double k = schedule.beta(t) / std::sqrt(1.0 - schedule.alpha_bar(t));
  return (x_t - k * eps_hat) / std::sqrt(schedule.alpha(t));
}

double gaussian_logpdf(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& mean,
                       double std) {
  if (!(std > 0.0)) throw UsageError("gaussian_logpdf needs std > 0");
  if (x.size() != mean.size()) throw UsageError("gaussian_logpdf: dimension mismatch");
  const double d = static_cast<double>(x.size());
  return -0.5 * d * std::log(2.0 * std::numbers::pi) - d * std::log(std) -
         (x - mean).squaredNorm() / (2.0 * std * std);
}

void DenoiserModel::validate() const {
  mlp.validate();
  if (mlp.output_dim() != kDataDim) throw ConfigError("denoiser output_dim must be 2");
  if (mlp.input_dim() != kDataDim + embedding.dim)
    throw ConfigError("denoiser input_dim must equal 2 + time embedding dim");
  if (cond_vocab && (cond_vocab->rows() != embedding.dim || cond_vocab->cols() != 2))
    throw ConfigError("condition table must be (embedding dim) x 2");
}

DenoiserModel make_denoiser(const DenoiserArch& arch, const ScheduleSpec& schedule, Rng& init_rng) {
  if (arch.embedding.dim <= 0 || arch.embedding.dim % 2 != 0)
    throw ConfigError("time embedding dim must be a positive even number");
  MlpArch mlp{kDataDim + arch.embedding.dim, kDataDim, arch.hidden, arch.activation};
  return DenoiserModel{init_mlp(mlp, init_rng), make_linear_schedule(schedule), arch.embedding, std::nullopt};
}

void add_cond_vocab(DenoiserModel& model) {
  model.cond_vocab = Eigen::MatrixXd::Zero(model.embedding.dim, 2);
}

namespace {

void check_cond(const DenoiserModel& model, std::span<const Cond> cond, Eigen::Index batch) {
  if (cond.empty()) return;
  if (static_cast<Eigen::Index>(cond.size()) != batch) throw UsageError("one condition token per sample required");
  for (Cond c : cond)
    if (c != Cond::none && !model.cond_vocab)
      throw ConfigError("conditioned evaluation on a model without a condition table");
}

}  // namespace

DenoiserPass predict_noise(const DenoiserModel& model, const Eigen::Matrix2Xd& x_t, std::span<const int> t,
                           std::span<const Cond> cond) {
  const Eigen::Index n = x_t.cols();
  if (static_cast<Eigen::Index>(t.size()) != n) throw UsageError("one time step per sample required");
  check_cond(model, cond, n);
  const int d = model.embedding.dim;
  Eigen::MatrixXd in(kDataDim + d, n);
  in.topRows<kDataDim>() = x_t;
  for (Eigen::Index i = 0; i < n; ++i) {
    in.col(i).tail(d) = time_embed(t[static_cast<std::size_t>(i)], model.embedding);
    if (!cond.empty() && cond[static_cast<std::size_t>(i)] != Cond::none)
      in.col(i).tail(d) += model.cond_vocab->col(static_cast<int>(cond[static_cast<std::size_t>(i)]));
  }
  return DenoiserPass{mlp_forward_batch(model.mlp, in), std::vector<Cond>(cond.begin(), cond.end())};
}

Point predict_noise(const DenoiserModel& model, const Point& x_t, int t, Cond cond) {
  const int ts[1] = {t};
  const Cond cs[1] = {cond};
  auto pass = predict_noise(model, Eigen::Matrix2Xd(x_t), ts,
                            cond == Cond::none ? std::span<const Cond>{} : std::span<const Cond>(cs));
  return pass.eps_hat().col(0);
}

double ModelGradient::squared_norm() const {
  double s = 0.0;
  for (const auto& l : mlp.layers) s += l.weights.squaredNorm() + l.biases.squaredNorm();
  if (cond_vocab) s += cond_vocab->squaredNorm();
  return s;
}

ModelGradient zero_gradient(const DenoiserModel& model) {
  ModelGradient g{zero_gradient(model.mlp), std::nullopt};
  if (model.cond_vocab) g.cond_vocab = Eigen::MatrixXd::Zero(model.cond_vocab->rows(), model.cond_vocab->cols());
  return g;
}

ModelGradient denoiser_backward(const DenoiserModel& model, const Eigen::MatrixXd& upstream,
                                const DenoiserPass& pass) {
  ModelGradient g{mlp_backward(model.mlp, upstream, pass.cache), std::nullopt};
  if (model.cond_vocab) {
    g.cond_vocab = Eigen::MatrixXd::Zero(model.cond_vocab->rows(), 2);
    const int d = model.embedding.dim;
    for (std::size_t i = 0; i < pass.cond.size(); ++i)
      if (pass.cond[i] != Cond::none)
        g.cond_vocab->col(static_cast<int>(pass.cond[i])) +=
            g.mlp.input_grad.col(static_cast<Eigen::Index>(i)).tail(d);
  }
  return g;
}

void accumulate(ModelGradient& into, const ModelGradient& g) {
  for (std::size_t k = 0; k < into.mlp.layers.size(); ++k) {
    into.mlp.layers[k].weights += g.mlp.layers[k].weights;
    into.mlp.layers[k].biases += g.mlp.layers[k].biases;
  }
  if (into.cond_vocab && g.cond_vocab) *into.cond_vocab += *g.cond_vocab;
}

std::vector<TensorView> tensor_views(DenoiserModel& model) {
  auto v = tensor_views(model.mlp);
  if (model.cond_vocab)
    v.push_back({"cond_vocab", {model.cond_vocab->data(), static_cast<std::size_t>(model.cond_vocab->size())}});
  return v;
}

std::vector<ConstTensorView> tensor_views(const DenoiserModel& model) {
  auto v = tensor_views(model.mlp);
  if (model.cond_vocab)
    v.push_back({"cond_vocab", {model.cond_vocab->data(), static_cast<std::size_t>(model.cond_vocab->size())}});
  return v;
}

std::vector<ConstTensorView> tensor_views(const ModelGradient& grad) {
  auto v = tensor_views(grad.mlp);
  if (grad.cond_vocab)
    v.push_back({"cond_vocab", {grad.cond_vocab->data(), static_cast<std::size_t>(grad.cond_vocab->size())}});
  return v;
}

std::uint64_t parameter_checksum(const DenoiserModel& model) {
  std::uint64_t h = fnv1a64("");
  for (const auto& t : tensor_views(model))
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(t.data.data()), t.data.size_bytes()), h);
  return h;
}

bool parameters_equal(const DenoiserModel& a, const DenoiserModel& b) {
  const auto va = tensor_views(a);
  const auto vb = tensor_views(b);
  if (va.size() != vb.size()) return false;
  for (std::size_t i = 0; i < va.size(); ++i) {
    if (va[i].data.size() != vb[i].data.size()) return false;
    if (std::memcmp(va[i].data.data(), vb[i].data.data(), va[i].data.size_bytes()) != 0) return false;
  }
  return true;
}

Point reverse_step_mean(const DenoiserModel& model, const Point& x_t, int t, Cond cond) {
  if (t < 1) throw UsageError("no reverse step below t = 1");
  return reverse_mean_from_eps(model.schedule, x_t, t, predict_noise(model, x_t, t, cond));
}

NoiseDraws draw_noise(const NoiseSchedule& schedule, std::size_t n, Rng& rng) {
  NoiseDraws d;
  d.t.resize(n);
  d.eps.resize(n);
  std::uniform_int_distribution<int> step(1, schedule.T());
  for (std::size_t i = 0; i < n; ++i) {
    d.t[i] = step(rng);
    d.eps[i] = Point(standard_normal(rng), standard_normal(rng));
  }
  return d;
}

ResidualLoss denoising_residual(const Eigen::Matrix2Xd& eps, const Eigen::MatrixXd& eps_hat) {
  const double n = static_cast<double>(eps.cols());
  Eigen::MatrixXd diff = eps_hat - eps;
  return {diff.squaredNorm() / n, (2.0 / n) * diff};
}

LossResult ddpm_loss_at(const DenoiserModel& model, std::span<const Point> x0, const NoiseDraws& draws,
                        std::span<const Cond> cond) {
  if (x0.empty()) throw UsageError("denoising loss needs a non-empty batch");
  if (draws.t.size() != x0.size() || draws.eps.size() != x0.size()) throw UsageError("draws do not match batch");
  const auto n = static_cast<Eigen::Index>(x0.size());
  Eigen::Matrix2Xd x_t(2, n), eps(2, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    eps.col(i) = draws.eps[k];
    x_t.col(i) = forward_noise(model.schedule, x0[k], draws.t[k], draws.eps[k]);
  }
  auto pass = predict_noise(model, x_t, draws.t, cond);
  auto r = denoising_residual(eps, pass.eps_hat());
  if (!std::isfinite(r.loss)) throw NumericalError("non-finite denoising loss");
  return {r.loss, denoiser_backward(model, r.d_eps_hat, pass)};
}

LossResult ddpm_loss(const DenoiserModel& model, std::span<const Point> x0, Rng& rng, std::span<const Cond> cond) {
  return ddpm_loss_at(model, x0, draw_noise(model.schedule, x0.size(), rng), cond);
}

Cloud sample(const DenoiserModel& model, std::size_t n, std::uint64_t seed, Cond cond) {
  Rng rng(seed);
  const auto cols = static_cast<Eigen::Index>(n);
  Eigen::Matrix2Xd x(2, cols);
  for (Eigen::Index i = 0; i < cols; ++i) x.col(i) = Point(standard_normal(rng), standard_normal(rng));
  std::vector<Cond> conds(cond == Cond::none ? 0 : n, cond);
  std::vector<int> ts(n);
  const auto& s = model.schedule;
  for (int t = s.T(); t >= 1 && n > 0; --t) {
    std::fill(ts.begin(), ts.end(), t);
    auto pass = predict_noise(model, x, ts, conds);
    const double k = s.beta(t) / std::sqrt(1.0 - s.alpha_bar(t));
    x = (x - k * pass.eps_hat()) / std::sqrt(s.alpha(t));
    if (t > 1) {
      const double sd = s.sigma(t);
      for (Eigen::Index i = 0; i < cols; ++i) {
        x(0, i) += sd * standard_normal(rng);
        x(1, i) += sd * standard_normal(rng);
      }
    }
  }
  Cloud out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = x.col(static_cast<Eigen::Index>(i));
  return out;
}

std::vector<double> pretrain(DenoiserModel& model, std::span<const Point> data, const PretrainConfig& cfg, Rng& rng) {
  if (cfg.steps < 0 || cfg.batch_size < 1) throw ConfigError("pretraining needs steps >= 0 and batch_size >= 1");
  if (data.empty() && cfg.steps > 0) throw UsageError("pretraining needs data");
  std::vector<std::size_t> sizes;
  for (const auto& t : tensor_views(model)) sizes.push_back(t.data.size());
  AdamState adam(cfg.adam, sizes);
  const auto params = tensor_views(model);
  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(cfg.steps));
  std::vector<Point> batch(static_cast<std::size_t>(cfg.batch_size));
  for (int step = 0; step < cfg.steps; ++step) {
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
    for (auto& p : batch) p = data[pick(rng)];
    auto r = ddpm_loss(model, batch, rng);
    adam.step(params, tensor_views(r.grad));
    losses.push_back(r.loss);
  }
  return losses;
}

Eigen::Matrix2Xd to_matrix(std::span<const Point> points) {
  Eigen::Matrix2Xd m(2, static_cast<Eigen::Index>(points.size()));
  for (std::size_t i = 0; i < points.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = points[i];
  return m;
}

}  // namespace dkto
