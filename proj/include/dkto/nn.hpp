// SPDX-License-Identifier: Apache-2.0
//
// Fixed-shape feed-forward network with explicit layer-by-layer
// backpropagation. Batched evaluation keeps one sample per column.
#pragma once

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dkto/rng.hpp"

namespace dkto {

enum class Activation { silu, relu, identity };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view name);

struct DenseLayer {
  Eigen::MatrixXd weights;  // out x in
  Eigen::VectorXd biases;   // out

  Eigen::Index in_dim() const { return weights.cols(); }
  Eigen::Index out_dim() const { return weights.rows(); }
};

// Hidden layers apply `activation`; the last layer is affine.
struct MlpParams {
  std::vector<DenseLayer> layers;
  Activation activation = Activation::silu;

  int input_dim() const;
  int output_dim() const;
  std::size_t parameter_count() const;

  // Throws ConfigError on empty/unchained layers or non-finite entries.
  void validate() const;
};

struct MlpArch {
  int input_dim = 34;
  int output_dim = 2;
  std::vector<int> hidden = {128, 128, 128};
  Activation activation = Activation::silu;
};

// He-style scaled uniform fan-in init, zero biases.
MlpParams init_mlp(const MlpArch& arch, Rng& rng);

// Activations saved by the forward pass; `inputs[k]` feeds layer k and
// `pre[k]` is its affine output before the nonlinearity.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;
  std::vector<Eigen::MatrixXd> pre;
  Eigen::MatrixXd output;

  bool empty() const { return inputs.empty(); }
};

ForwardCache mlp_forward_batch(const MlpParams& params, const Eigen::MatrixXd& input);

// Single-point evaluation on the concatenation [x, t_embed (+ cond_embed)].
// The condition embedding is added to the time embedding, so it must have
// the same length.
Eigen::VectorXd mlp_forward(const MlpParams& params, std::span<const double> x,
                            std::span<const double> t_embed,
                            std::optional<std::span<const double>> cond_embed = std::nullopt);

struct MlpGradient {
  std::vector<DenseLayer> layers;  // same shapes as the parameters
  Eigen::MatrixXd input_grad;      // d loss / d input, one column per sample
};

// Reverse pass for a scalar loss whose gradient w.r.t. the network output is
// `upstream` (output_dim x batch). Gradients are summed over the batch.
MlpGradient mlp_backward(const MlpParams& params, const Eigen::MatrixXd& upstream,
                         const ForwardCache& cache);

MlpGradient zero_gradient(const MlpParams& params);

// Sinusoidal step embedding: [sin(t f_0..f_{h-1}), cos(t f_0..f_{h-1})]
// with f_k = max_period^(-k/h), h = dim/2.
struct TimeEmbedding {
  int dim = 32;
  double max_period = 10000.0;
};

Eigen::VectorXd time_embed(int t, const TimeEmbedding& spec);

// Mutable / read-only views used by the optimizer and checkpointing.
struct TensorView {
  std::string name;
  std::span<double> data;
};
struct ConstTensorView {
  std::string name;
  std::span<const double> data;
};

std::vector<TensorView> tensor_views(MlpParams& params);
std::vector<ConstTensorView> tensor_views(const MlpParams& params);
std::vector<ConstTensorView> tensor_views(const MlpGradient& grad);

}  // namespace dkto
