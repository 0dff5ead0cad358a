// SPDX-License-Identifier: Apache-2.0
#include "dkto/alignment.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace dkto {

std::string_view to_string(UtilityKind k) {
  switch (k) {
    case UtilityKind::loss_averse: return "loss_averse";
    case UtilityKind::risk_seeking: return "risk_seeking";
    case UtilityKind::kahneman_tversky: return "kahneman_tversky";
  }
  return "?";
}

UtilityKind parse_utility(std::string_view name) {
  if (name == "loss_averse") return UtilityKind::loss_averse;
  if (name == "risk_seeking") return UtilityKind::risk_seeking;
  if (name == "kahneman_tversky") return UtilityKind::kahneman_tversky;
  throw ConfigError("unknown utility '" + std::string(name) + "'");
}

std::string_view to_string(Objective o) {
  switch (o) {
    case Objective::kto: return "kto";
    case Objective::dpo_pair: return "dpo_pair";
    case Objective::sft: return "sft";
    case Objective::csft: return "csft";
  }
  return "?";
}

double sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

double log_sigmoid(double v) {
  if (v >= 0) return -std::log1p(std::exp(-v));
  return v - std::log1p(std::exp(v));
}

double utility_value(UtilityKind kind, double v) {
  switch (kind) {
    case UtilityKind::loss_averse: return log_sigmoid(v) + std::numbers::ln2;
    case UtilityKind::risk_seeking: return -log_sigmoid(-v) - std::numbers::ln2;
    case UtilityKind::kahneman_tversky: return sigmoid(v) - 0.5;
  }
  return 0.0;
}

double utility_derivative(UtilityKind kind, double v) {
  switch (kind) {
    case UtilityKind::loss_averse: return sigmoid(-v);
    case UtilityKind::risk_seeking: return sigmoid(v);
    case UtilityKind::kahneman_tversky: return sigmoid(v) * sigmoid(-v);
  }
  return 0.0;
}

void AlignmentConfig::validate() const {
  if (!(beta > 0.0)) throw ConfigError("beta must be positive");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in (0, 1)");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (kl_batch < 2) throw ConfigError("kl_batch must be at least 2");
  if (kl_batch > batch_size) throw ConfigError("kl_batch cannot exceed batch_size");
  if (steps < 0) throw ConfigError("steps must be non-negative");
  if (log_every < 1) throw ConfigError("log_every must be positive");
}

StepContext make_step_context(const NoiseSchedule& schedule, const Point& x0, int t, const Point& eps,
                              const Point& posterior_noise) {
  StepContext c{x0, t, eps, forward_noise(schedule, x0, t, eps), {}};
  c.x_prev = posterior_mean(schedule, x0, c.x_t, t) + std::sqrt(schedule.posterior_variance(t)) * posterior_noise;
  return c;
}

std::vector<StepContext> draw_step_contexts(const NoiseSchedule& schedule, std::span<const Point> x0, Rng& rng) {
  std::uniform_int_distribution<int> step(1, schedule.T());
  std::vector<StepContext> out;
  out.reserve(x0.size());
  for (const auto& p : x0) {
    const int t = step(rng);
    const Point eps(standard_normal(rng), standard_normal(rng));
    const Point z(standard_normal(rng), standard_normal(rng));
    out.push_back(make_step_context(schedule, p, t, eps, z));
  }
  return out;
}

std::vector<StepContext> mismatch_contexts(std::span<const StepContext> contexts, std::size_t m) {
  const std::size_t n = contexts.size();
  if (m < 2) throw ConfigError("Q_ref needs at least 2 mismatched pairs");
  if (n < 2) throw ConfigError("mismatched pairs need at least 2 contexts");
  if (m > n) throw UsageError("more mismatched pairs requested than contexts");
  std::vector<StepContext> out;
  out.reserve(m);
  for (std::size_t k = 0; k < m; ++k) {
    const auto& action = contexts[k];
    const auto& state = contexts[(k + 1) % n];
    StepContext c = state;
    c.x_prev = action.x_prev;
    out.push_back(c);
  }
  return out;
}

void check_compatible(const DenoiserModel& theta, const DenoiserModel& ref) {
  if (!(theta.schedule == ref.schedule)) throw ConfigError("theta and ref use different noise schedules");
  if (theta.embedding.dim != ref.embedding.dim || theta.embedding.max_period != ref.embedding.max_period)
    throw ConfigError("theta and ref use different time embeddings");
  if (theta.mlp.layers.size() != ref.mlp.layers.size() || theta.mlp.activation != ref.mlp.activation)
    throw ConfigError("theta and ref have different architectures");
  for (std::size_t k = 0; k < theta.mlp.layers.size(); ++k)
    if (theta.mlp.layers[k].weights.rows() != ref.mlp.layers[k].weights.rows() ||
        theta.mlp.layers[k].weights.cols() != ref.mlp.layers[k].weights.cols())
      throw ConfigError("theta and ref have different layer shapes");
}

double step_log_ratio(const DenoiserModel& theta, const DenoiserModel& ref, const StepContext& ctx, Cond cond) {
  check_compatible(theta, ref);
  const double sd = theta.schedule.sigma(ctx.t);
  const Point mu_theta = reverse_step_mean(theta, ctx.x_t, ctx.t, cond);
  const Point mu_ref = reverse_step_mean(ref, ctx.x_t, ctx.t, cond);
  return gaussian_logpdf(ctx.x_prev, mu_theta, sd) - gaussian_logpdf(ctx.x_prev, mu_ref, sd);
}

double log_ratio_from_means(const Point& x_prev, const Point& mu_theta, const Point& mu_ref, double sigma) {
  return ((x_prev - mu_ref).squaredNorm() - (x_prev - mu_theta).squaredNorm()) / (2.0 * sigma * sigma);
}

double step_log_ratio_sq(const DenoiserModel& theta, const DenoiserModel& ref, const StepContext& ctx, Cond cond) {
  check_compatible(theta, ref);
  return log_ratio_from_means(ctx.x_prev, reverse_step_mean(theta, ctx.x_t, ctx.t, cond),
                              reverse_step_mean(ref, ctx.x_t, ctx.t, cond), theta.schedule.sigma(ctx.t));
}

namespace {

// Reverse means of theta and ref at a batch of states.
struct MeanPass {
  DenoiserPass theta;
  Eigen::Matrix2Xd mu_theta;
  Eigen::Matrix2Xd mu_ref;
};

Eigen::Matrix2Xd means_from_eps(const NoiseSchedule& s, const Eigen::Matrix2Xd& x_t, std::span<const int> t,
                                const Eigen::MatrixXd& eps_hat) {
  Eigen::Matrix2Xd mu(2, x_t.cols());
  for (Eigen::Index i = 0; i < x_t.cols(); ++i)
    mu.col(i) = reverse_mean_from_eps(s, x_t.col(i), t[static_cast<std::size_t>(i)], eps_hat.col(i));
  return mu;
}

MeanPass policy_means(const DenoiserModel& theta, const DenoiserModel& ref, const Eigen::Matrix2Xd& x_t,
                      std::span<const int> t, std::span<const Cond> cond) {
  MeanPass p{predict_noise(theta, x_t, t, cond), {}, {}};
  p.mu_theta = means_from_eps(theta.schedule, x_t, t, p.theta.eps_hat());
  auto ref_pass = predict_noise(ref, x_t, t, cond);
  p.mu_ref = means_from_eps(ref.schedule, x_t, t, ref_pass.eps_hat());
  return p;
}

std::vector<Cond> batch_conds(std::span<const LabeledSample> batch) {
  bool any = false;
  for (const auto& s : batch) any = any || s.cond != Cond::none;
  if (!any) return {};
  std::vector<Cond> c;
  for (const auto& s : batch) c.push_back(s.cond);
  return c;
}

void check_labels(std::span<const LabeledSample> batch) {
  for (const auto& s : batch)
    if (s.w != 1 && s.w != -1) throw UsageError("labels must be +1 or -1, got " + std::to_string(s.w));
}

}  // namespace

double kl_reference(const DenoiserModel& theta, const DenoiserModel& ref, std::span<const StepContext> mismatched,
                    double beta, bool beta_scaling) {
  if (mismatched.size() < 2) throw ConfigError("Q_ref needs at least 2 mismatched pairs");
  double sum = 0.0;
  for (const auto& c : mismatched) sum += step_log_ratio_sq(theta, ref, c);
  const double clamped = std::max(0.0, sum / static_cast<double>(mismatched.size()));
  return beta_scaling ? beta * clamped : clamped;
}

KtoResult kto_loss_at(const DenoiserModel& theta, const DenoiserModel& ref, std::span<const LabeledSample> batch,
                      std::span<const StepContext> contexts, const AlignmentConfig& cfg, const KtoOptions& opts) {
  check_compatible(theta, ref);
  if (batch.empty()) throw UsageError("KTO loss needs a non-empty batch");
  if (batch.size() != contexts.size()) throw UsageError("one step context per sample required");
  check_labels(batch);
  const std::size_t n = batch.size();
  const auto cols = static_cast<Eigen::Index>(n);
  const auto& s = theta.schedule;

  Eigen::Matrix2Xd x_t(2, cols);
  std::vector<int> ts(n);
  for (std::size_t i = 0; i < n; ++i) {
    x_t.col(static_cast<Eigen::Index>(i)) = contexts[i].x_t;
    ts[i] = contexts[i].t;
  }
  const auto conds = batch_conds(batch);
  auto pass = policy_means(theta, ref, x_t, ts, conds);

  KtoResult r;
  r.log_ratios.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    r.log_ratios[i] = log_ratio_from_means(contexts[i].x_prev, pass.mu_theta.col(c), pass.mu_ref.col(c), s.sigma(ts[i]));
  }

  if (opts.q_ref_override) {
    r.q_ref = *opts.q_ref_override;
  } else {
    // Same estimate as kl_reference(mismatch_contexts(contexts, m)), reusing
    // the means already computed at every state.
    const std::size_t m = std::min<std::size_t>(static_cast<std::size_t>(cfg.kl_batch), n);
    if (m < 2) throw ConfigError("Q_ref needs at least 2 mismatched pairs");
    double sum = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      const std::size_t j = (k + 1) % n;
      const auto c = static_cast<Eigen::Index>(j);
      sum += log_ratio_from_means(contexts[k].x_prev, pass.mu_theta.col(c), pass.mu_ref.col(c), s.sigma(ts[j]));
    }
    const double clamped = std::max(0.0, sum / static_cast<double>(m));
    r.q_ref = cfg.kl_beta_scaling ? cfg.beta * clamped : clamped;
  }

  Eigen::MatrixXd upstream(2, cols);
  double total = 0.0;
  double lr_sum = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    const double w = batch[i].w;
    const double v = w * (cfg.beta * r.log_ratios[i] - r.q_ref);
    const double u = utility_value(cfg.utility, v) + opts.utility_offset;
    if (!std::isfinite(u)) {
      std::ostringstream msg;
      msg << "non-finite KTO term at sample " << i << ": w=" << w << " t=" << ts[i]
          << " log_ratio=" << r.log_ratios[i] << " q_ref=" << r.q_ref;
      throw NumericalError(msg.str());
    }
    total += u;
    lr_sum += r.log_ratios[i];
    const double sd = s.sigma(ts[i]);
    // d loss/d logratio_i, then through mu_theta into eps_hat.
    const double dlr = -inv_n * utility_derivative(cfg.utility, v) * w * cfg.beta;
    const Point dmu = dlr * (contexts[i].x_prev - Point(pass.mu_theta.col(c))) / (sd * sd);
    upstream.col(c) = reverse_mean_eps_coef(s, ts[i]) * dmu;
  }
  r.loss = -total * inv_n;
  r.mean_log_ratio = lr_sum * inv_n;
  if (!std::isfinite(r.loss)) throw NumericalError("non-finite KTO loss");
  r.grad = denoiser_backward(theta, upstream, pass.theta);
  return r;
}

KtoResult kto_loss(const DenoiserModel& theta, const DenoiserModel& ref, std::span<const LabeledSample> batch,
                   const AlignmentConfig& cfg, Rng& rng) {
  std::vector<Point> x0;
  for (const auto& s : batch) x0.push_back(s.x0);
  const auto ctx = draw_step_contexts(theta.schedule, x0, rng);
  return kto_loss_at(theta, ref, batch, ctx, cfg);
}

PairContexts draw_pair_contexts(const NoiseSchedule& schedule, std::span<const PreferencePair> pairs, Rng& rng) {
  std::uniform_int_distribution<int> step(1, schedule.T());
  PairContexts pc;
  for (const auto& p : pairs) {
    const int t = step(rng);
    const Point eps_w(standard_normal(rng), standard_normal(rng));
    const Point z_w(standard_normal(rng), standard_normal(rng));
    const Point eps_l(standard_normal(rng), standard_normal(rng));
    const Point z_l(standard_normal(rng), standard_normal(rng));
    pc.winner.push_back(make_step_context(schedule, p.winner, t, eps_w, z_w));
    pc.loser.push_back(make_step_context(schedule, p.loser, t, eps_l, z_l));
  }
  return pc;
}

DpoResult dpo_pair_loss_at(const DenoiserModel& theta, const DenoiserModel& ref,
                           std::span<const PreferencePair> pairs, const PairContexts& ctx, double beta) {
  check_compatible(theta, ref);
  if (pairs.empty()) throw UsageError("paired loss needs at least one pair");
  if (ctx.winner.size() != pairs.size() || ctx.loser.size() != pairs.size())
    throw UsageError("contexts do not match pairs");
  if (!(beta > 0)) throw ConfigError("beta must be positive");
  const std::size_t n = pairs.size();
  const auto& s = theta.schedule;
  // Columns [0, n) are winners, [n, 2n) losers.
  Eigen::Matrix2Xd x_t(2, static_cast<Eigen::Index>(2 * n));
  std::vector<int> ts(2 * n);
  std::vector<const StepContext*> all(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    all[i] = &ctx.winner[i];
    all[n + i] = &ctx.loser[i];
  }
  for (std::size_t i = 0; i < 2 * n; ++i) {
    x_t.col(static_cast<Eigen::Index>(i)) = all[i]->x_t;
    ts[i] = all[i]->t;
  }
  auto pass = policy_means(theta, ref, x_t, ts, {});
  std::vector<double> lr(2 * n);
  for (std::size_t i = 0; i < 2 * n; ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    lr[i] = log_ratio_from_means(all[i]->x_prev, pass.mu_theta.col(c), pass.mu_ref.col(c), s.sigma(ts[i]));
  }

  DpoResult r;
  Eigen::MatrixXd upstream(2, static_cast<Eigen::Index>(2 * n));
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  double margin_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double margin = lr[i] - lr[n + i];
    total += -log_sigmoid(beta * margin);
    margin_sum += margin;
    const double dmargin = -inv_n * beta * sigmoid(-beta * margin);
    for (std::size_t side : {i, n + i}) {
      const auto c = static_cast<Eigen::Index>(side);
      const double sign = side == i ? 1.0 : -1.0;
      const double sd = s.sigma(ts[side]);
      const Point dmu = sign * dmargin * (all[side]->x_prev - Point(pass.mu_theta.col(c))) / (sd * sd);
      upstream.col(c) = reverse_mean_eps_coef(s, ts[side]) * dmu;
    }
  }
  r.loss = total * inv_n;
  r.mean_margin = margin_sum * inv_n;
  if (!std::isfinite(r.loss)) throw NumericalError("non-finite paired loss");
  r.grad = denoiser_backward(theta, upstream, pass.theta);
  return r;
}

DpoResult dpo_pair_loss(const DenoiserModel& theta, const DenoiserModel& ref, std::span<const PreferencePair> pairs,
                        double beta, Rng& rng) {
  return dpo_pair_loss_at(theta, ref, pairs, draw_pair_contexts(theta.schedule, pairs, rng), beta);
}

LossResult sft_loss_at(const DenoiserModel& theta, std::span<const LabeledSample> batch, const NoiseDraws& draws) {
  std::vector<Point> x0;
  for (const auto& s : batch) {
    if (s.w != 1) throw UsageError("SFT batch contains an undesirable sample");
    x0.push_back(s.x0);
  }
  return ddpm_loss_at(theta, x0, draws);
}

LossResult sft_loss(const DenoiserModel& theta, std::span<const LabeledSample> batch, Rng& rng) {
  return sft_loss_at(theta, batch, draw_noise(theta.schedule, batch.size(), rng));
}

LossResult csft_loss_at(const DenoiserModel& theta, std::span<const LabeledSample> batch, const NoiseDraws& draws) {
  if (!theta.has_cond()) throw ConfigError("CSFT needs a model with a condition table");
  check_labels(batch);
  std::vector<Point> x0;
  std::vector<Cond> cond;
  for (const auto& s : batch) {
    x0.push_back(s.x0);
    cond.push_back(s.w == 1 ? Cond::good : Cond::bad);
  }
  return ddpm_loss_at(theta, x0, draws, cond);
}

LossResult csft_loss(const DenoiserModel& theta, std::span<const LabeledSample> batch, Rng& rng) {
  return csft_loss_at(theta, batch, draw_noise(theta.schedule, batch.size(), rng));
}

BiasedSampler::BiasedSampler(std::span<const LabeledSample> dataset, double gamma) : dataset_(dataset), gamma_(gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (dataset[i].w == 1)
      desirable_.push_back(i);
    else if (dataset[i].w == -1)
      undesirable_.push_back(i);
    else
      throw UsageError("labels must be +1 or -1");
  }
  if (desirable_.empty() || undesirable_.empty())
    throw ConfigError("biased sampling needs at least one desirable and one undesirable sample");
}

std::vector<LabeledSample> BiasedSampler::draw(std::size_t batch_size, Rng& rng) const {
  std::bernoulli_distribution pick_desirable(gamma_);
  std::uniform_int_distribution<std::size_t> d(0, desirable_.size() - 1);
  std::uniform_int_distribution<std::size_t> u(0, undesirable_.size() - 1);
  std::vector<LabeledSample> out;
  out.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i)
    out.push_back(pick_desirable(rng) ? dataset_[desirable_[d(rng)]] : dataset_[undesirable_[u(rng)]]);
  return out;
}

std::vector<LabeledSample> biased_batch(std::span<const LabeledSample> dataset, double gamma,
                                        std::size_t batch_size, Rng& rng) {
  return BiasedSampler(dataset, gamma).draw(batch_size, rng);
}

namespace {

bool mlp_equal(const MlpParams& a, const MlpParams& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t k = 0; k < a.layers.size(); ++k)
    if (a.layers[k].weights != b.layers[k].weights || a.layers[k].biases != b.layers[k].biases) return false;
  return true;
}

}  // namespace

TrainLog align_train(DenoiserModel& theta, const DenoiserModel& ref, std::span<const LabeledSample> dataset,
                     const AlignmentConfig& cfg, Objective objective) {
  cfg.validate();
  check_compatible(theta, ref);
  if (!mlp_equal(theta.mlp, ref.mlp)) throw UsageError("theta must start parameter-equal to ref");
  if (objective == Objective::csft && !theta.has_cond()) add_cond_vocab(theta);

  TrainLog log;
  log.objective = objective;
  log.ref_checksum_before = parameter_checksum(ref);

  const BiasedSampler sampler(dataset, objective == Objective::kto ? cfg.gamma : 0.5);
  const auto batch_n = static_cast<std::size_t>(cfg.batch_size);
  Rng rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick_d(0, sampler.desirable().size() - 1);
  std::uniform_int_distribution<std::size_t> pick_u(0, sampler.undesirable().size() - 1);
  std::uniform_int_distribution<std::size_t> pick_any(0, dataset.size() - 1);

  std::vector<std::size_t> sizes;
  for (const auto& t : tensor_views(theta)) sizes.push_back(t.data.size());
  AdamState adam(cfg.adam, sizes);
  const auto params = tensor_views(theta);

  for (int step = 1; step <= cfg.steps; ++step) {
    TrainLogRow row{step, 0.0, 0.0, 0.0, 0.0};
    try {
      ModelGradient grad;
      switch (objective) {
        case Objective::kto: {
          const auto batch = sampler.draw(batch_n, rng);
          for (const auto& s : batch) (s.w == 1 ? log.desirable_consumed : log.undesirable_consumed)++;
          auto r = kto_loss(theta, ref, batch, cfg, rng);
          row.loss = r.loss;
          row.q_ref = r.q_ref;
          row.mean_log_ratio = r.mean_log_ratio;
          grad = std::move(r.grad);
          break;
        }
        case Objective::dpo_pair: {
          std::vector<PreferencePair> pairs;
          for (std::size_t i = 0; i < batch_n; ++i)
            pairs.push_back({dataset[sampler.desirable()[pick_d(rng)]].x0, dataset[sampler.undesirable()[pick_u(rng)]].x0});
          log.desirable_consumed += batch_n;
          log.undesirable_consumed += batch_n;
          auto r = dpo_pair_loss(theta, ref, pairs, cfg.beta, rng);
          row.loss = r.loss;
          row.mean_log_ratio = r.mean_margin;
          grad = std::move(r.grad);
          break;
        }
        case Objective::sft: {
          std::vector<LabeledSample> batch;
          for (std::size_t i = 0; i < batch_n; ++i) batch.push_back(dataset[sampler.desirable()[pick_d(rng)]]);
          log.desirable_consumed += batch_n;
          auto r = sft_loss(theta, batch, rng);
          row.loss = r.loss;
          grad = std::move(r.grad);
          break;
        }
        case Objective::csft: {
          std::vector<LabeledSample> batch;
          for (std::size_t i = 0; i < batch_n; ++i) batch.push_back(dataset[pick_any(rng)]);
          for (const auto& s : batch) (s.w == 1 ? log.desirable_consumed : log.undesirable_consumed)++;
          auto r = csft_loss(theta, batch, rng);
          row.loss = r.loss;
          grad = std::move(r.grad);
          break;
        }
      }
      row.grad_norm = std::sqrt(grad.squared_norm());
      if (!std::isfinite(row.grad_norm)) throw NumericalError("non-finite gradient norm");
      adam.step(params, tensor_views(grad));
    } catch (const NumericalError& e) {
      log.ref_checksum_after = parameter_checksum(ref);
      throw DivergenceError("diverged at step " + std::to_string(step) + ": " + e.what(), std::move(log));
    }
    if (step % cfg.log_every == 0 || step == cfg.steps) log.rows.push_back(row);
  }

  log.ref_checksum_after = parameter_checksum(ref);
  if (log.ref_checksum_after != log.ref_checksum_before) throw std::logic_error("reference model was mutated");
  return log;
}

void write_train_log_csv(const TrainLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write training log " + path);
  out.precision(17);
  out << "step,objective,loss,q_ref,mean_log_ratio,grad_norm\n";
  for (const auto& r : log.rows)
    out << r.step << ',' << to_string(log.objective) << ',' << r.loss << ',' << r.q_ref << ',' << r.mean_log_ratio
        << ',' << r.grad_norm << '\n';
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace dkto
