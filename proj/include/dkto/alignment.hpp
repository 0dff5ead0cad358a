// SPDX-License-Identifier: Apache-2.0
//
// Per-step utility-maximization alignment of a denoiser against a frozen
// reference copy, plus the supervised and paired-preference baselines.
//
// The implicit reward of one reverse step is the log-ratio of the two
// Gaussian transition densities, evaluated at an action x_{t-1} drawn from
// the forward posterior q(x_{t-1} | x_t, x_0). Both policies use the
// schedule's sigma_t, so the ratio depends only on the two means.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dkto/adam.hpp"
#include "dkto/ddpm.hpp"
#include "dkto/errors.hpp"

namespace dkto {

enum class UtilityKind { loss_averse, risk_seeking, kahneman_tversky };

std::string_view to_string(UtilityKind k);
UtilityKind parse_utility(std::string_view name);

double sigmoid(double v);
double log_sigmoid(double v);

// Centered so that U(0) = 0:
//   loss_averse       log sigma(v) + log 2
//   risk_seeking     -log sigma(-v) - log 2
//   kahneman_tversky  sigma(v) - 1/2
double utility_value(UtilityKind kind, double v);
double utility_derivative(UtilityKind kind, double v);

struct LabeledSample {
  Point x0;
  int w = 1;  // +1 desirable, -1 undesirable
  Cond cond = Cond::none;
};

enum class Objective { kto, dpo_pair, sft, csft };

std::string_view to_string(Objective o);

struct AlignmentConfig {
  double beta = 50.0;
  double gamma = 0.8;
  UtilityKind utility = UtilityKind::kahneman_tversky;
  int batch_size = 1024;
  // Mismatched pairs in the Q_ref estimate; at most batch_size.
  int kl_batch = 1024;
  int steps = 300;
  AdamConfig adam{3e-5, 0.9, 0.999, 1e-8};
  std::uint64_t seed = 0;
  // Q_ref = beta * max(0, mean log-ratio) when on, max(0, mean log-ratio) when off.
  bool kl_beta_scaling = true;
  int log_every = 1;

  void validate() const;
};

// One sampled reverse transition: state (x_t, t) and action x_prev drawn
// from the forward posterior around x0.
struct StepContext {
  Point x0;
  int t = 1;
  Point eps;
  Point x_t;
  Point x_prev;
};

StepContext make_step_context(const NoiseSchedule& schedule, const Point& x0, int t, const Point& eps,
                              const Point& posterior_noise);
std::vector<StepContext> draw_step_contexts(const NoiseSchedule& schedule, std::span<const Point> x0, Rng& rng);

// Cyclic re-pairing: entry k keeps the action of context k and takes the
// state (x_t, t) of context (k + 1) mod n. Returns the first m entries.
std::vector<StepContext> mismatch_contexts(std::span<const StepContext> contexts, std::size_t m);

// Throws ConfigError unless theta and ref share schedule and architecture.
void check_compatible(const DenoiserModel& theta, const DenoiserModel& ref);

// log pi_theta(x_prev | x_t) - log pi_ref(x_prev | x_t), as a difference of
// Gaussian log-densities.
double step_log_ratio(const DenoiserModel& theta, const DenoiserModel& ref, const StepContext& ctx,
                      Cond cond = Cond::none);
// Same quantity via (||x_prev - mu_ref||^2 - ||x_prev - mu_theta||^2) / (2 sigma_t^2).
double step_log_ratio_sq(const DenoiserModel& theta, const DenoiserModel& ref, const StepContext& ctx,
                         Cond cond = Cond::none);
double log_ratio_from_means(const Point& x_prev, const Point& mu_theta, const Point& mu_ref, double sigma);

// Q_ref = beta * max(0, mean of step_log_ratio over the mismatched batch).
// The value is a plain number: losses treat it as a constant.
double kl_reference(const DenoiserModel& theta, const DenoiserModel& ref, std::span<const StepContext> mismatched,
                    double beta, bool beta_scaling = true);

struct KtoResult {
  double loss = 0.0;
  ModelGradient grad;
  double q_ref = 0.0;
  double mean_log_ratio = 0.0;
  std::vector<double> log_ratios;
};

struct KtoOptions {
  // Replaces the estimated Q_ref by a fixed number.
  std::optional<double> q_ref_override;
  // Constant added to every utility value; must not change gradients.
  double utility_offset = 0.0;
};

// loss = -(1/n) sum_i U(w_i (beta * logratio_i - Q_ref)) for fixed contexts.
KtoResult kto_loss_at(const DenoiserModel& theta, const DenoiserModel& ref, std::span<const LabeledSample> batch,
                      std::span<const StepContext> contexts, const AlignmentConfig& cfg,
                      const KtoOptions& opts = {});
KtoResult kto_loss(const DenoiserModel& theta, const DenoiserModel& ref, std::span<const LabeledSample> batch,
                   const AlignmentConfig& cfg, Rng& rng);

struct PreferencePair {
  Point winner;
  Point loser;
};

// Random inputs of one paired evaluation: t shared by both branches,
// noise drawn independently per branch.
struct PairContexts {
  std::vector<StepContext> winner;
  std::vector<StepContext> loser;
};
PairContexts draw_pair_contexts(const NoiseSchedule& schedule, std::span<const PreferencePair> pairs, Rng& rng);

struct DpoResult {
  double loss = 0.0;
  ModelGradient grad;
  double mean_margin = 0.0;  // mean of logratio_w - logratio_l
};

// loss = -mean log sigma(beta (logratio_w - logratio_l)).
DpoResult dpo_pair_loss_at(const DenoiserModel& theta, const DenoiserModel& ref,
                           std::span<const PreferencePair> pairs, const PairContexts& ctx, double beta);
DpoResult dpo_pair_loss(const DenoiserModel& theta, const DenoiserModel& ref, std::span<const PreferencePair> pairs,
                        double beta, Rng& rng);

// Denoising loss on desirable samples only; any w = -1 is a UsageError.
LossResult sft_loss_at(const DenoiserModel& theta, std::span<const LabeledSample> batch, const NoiseDraws& draws);
LossResult sft_loss(const DenoiserModel& theta, std::span<const LabeledSample> batch, Rng& rng);

// Denoising loss on all samples with the good/bad token selected by w.
LossResult csft_loss_at(const DenoiserModel& theta, std::span<const LabeledSample> batch, const NoiseDraws& draws);
LossResult csft_loss(const DenoiserModel& theta, std::span<const LabeledSample> batch, Rng& rng);

// Each slot is desirable with probability gamma, then uniform within the
// chosen label class.
class BiasedSampler {
 public:
  BiasedSampler(std::span<const LabeledSample> dataset, double gamma);
  std::vector<LabeledSample> draw(std::size_t batch_size, Rng& rng) const;

  std::span<const std::size_t> desirable() const { return desirable_; }
  std::span<const std::size_t> undesirable() const { return undesirable_; }

 private:
  std::span<const LabeledSample> dataset_;
  double gamma_;
  std::vector<std::size_t> desirable_;
  std::vector<std::size_t> undesirable_;
};

std::vector<LabeledSample> biased_batch(std::span<const LabeledSample> dataset, double gamma,
                                        std::size_t batch_size, Rng& rng);

struct TrainLogRow {
  int step = 0;
  double loss = 0.0;
  double q_ref = 0.0;
  double mean_log_ratio = 0.0;
  double grad_norm = 0.0;
};

struct TrainLog {
  Objective objective = Objective::kto;
  std::vector<TrainLogRow> rows;
  std::size_t desirable_consumed = 0;
  std::size_t undesirable_consumed = 0;
  std::uint64_t ref_checksum_before = 0;
  std::uint64_t ref_checksum_after = 0;
};

// Thrown by align_train when a loss or gradient turns non-finite; theta is
// left at the last finite parameters and `log` holds the steps completed.
struct DivergenceError : NumericalError {
  DivergenceError(const std::string& what, TrainLog log) : NumericalError(what), log(std::move(log)) {}
  TrainLog log;
};

// Runs cfg.steps Adam updates of theta against the frozen ref. theta must
// start parameter-equal to ref (a zero condition table is allowed for csft
// and is added if missing).
TrainLog align_train(DenoiserModel& theta, const DenoiserModel& ref, std::span<const LabeledSample> dataset,
                     const AlignmentConfig& cfg, Objective objective);

void write_train_log_csv(const TrainLog& log, const std::string& path);

}  // namespace dkto
