// SPDX-License-Identifier: Apache-2.0
#include "dkto/nn.hpp"

#include <cmath>

#include "dkto/errors.hpp"

namespace dkto {

namespace {

void apply_activation(Activation a, const Eigen::MatrixXd& z, Eigen::MatrixXd& out) {
  switch (a) {
    case Activation::silu:
      out = z.array() / (1.0 + (-z.array()).exp());
      break;
    case Activation::relu:
      out = z.array().max(0.0);
      break;
    case Activation::identity:
      out = z;
      break;
  }
}

// dL/dz given dL/da and the pre-activation z.
void activation_backward(Activation a, const Eigen::MatrixXd& z, Eigen::MatrixXd& grad) {
  switch (a) {
    case Activation::silu: {
      Eigen::ArrayXXd s = 1.0 / (1.0 + (-z.array()).exp());
      grad.array() *= s * (1.0 + z.array() * (1.0 - s));
      break;
    }
    case Activation::relu:
      grad.array() *= (z.array() > 0.0).cast<double>();
      break;
    case Activation::identity:
      break;
  }
}

}  // namespace

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::silu: return "silu";
    case Activation::relu: return "relu";
    case Activation::identity: return "identity";
  }
  return "?";
}

Activation parse_activation(std::string_view name) {
  if (name == "silu") return Activation::silu;
  if (name == "relu") return Activation::relu;
  if (name == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

int MlpParams::input_dim() const {
  return layers.empty() ? 0 : static_cast<int>(layers.front().in_dim());
}

int MlpParams::output_dim() const {
  return layers.empty() ? 0 : static_cast<int>(layers.back().out_dim());
}

std::size_t MlpParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weights.size() + l.biases.size());
  return n;
}

void MlpParams::validate() const {
  if (layers.empty()) throw ConfigError("network has no layers");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto& l = layers[k];
    if (l.biases.size() != l.out_dim())
      throw ConfigError("layer " + std::to_string(k) + ": bias length does not match output width");
    if (k > 0 && layers[k - 1].out_dim() != l.in_dim())
      throw ConfigError("layer " + std::to_string(k) + ": input width " + std::to_string(l.in_dim()) +
                        " does not chain with previous output " + std::to_string(layers[k - 1].out_dim()));
    if (!l.weights.allFinite() || !l.biases.allFinite())
      throw ConfigError("layer " + std::to_string(k) + ": non-finite parameter");
  }
}

MlpParams init_mlp(const MlpArch& arch, Rng& rng) {
  if (arch.input_dim <= 0 || arch.output_dim <= 0) throw ConfigError("network dimensions must be positive");
  MlpParams p;
  p.activation = arch.activation;
  std::vector<int> widths;
  widths.push_back(arch.input_dim);
  for (int h : arch.hidden) {
    if (h <= 0) throw ConfigError("hidden width must be positive");
    widths.push_back(h);
  }
  widths.push_back(arch.output_dim);
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
    const int in = widths[k];
    const int out = widths[k + 1];
    const double limit = std::sqrt(6.0 / in);
    std::uniform_real_distribution<double> u(-limit, limit);
    DenseLayer l{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
    // Row-major fill so the draw order matches the checkpoint layout.
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) l.weights(r, c) = u(rng);
    p.layers.push_back(std::move(l));
  }
  return p;
}

ForwardCache mlp_forward_batch(const MlpParams& params, const Eigen::MatrixXd& input) {
  if (params.layers.empty()) throw ConfigError("network has no layers");
  if (input.rows() != params.input_dim())
    throw ConfigError("input length " + std::to_string(input.rows()) + " does not match network input_dim " +
                      std::to_string(params.input_dim()));
  ForwardCache cache;
  const std::size_t n = params.layers.size();
  cache.inputs.resize(n);
  cache.pre.resize(n);
  cache.inputs[0] = input;
  for (std::size_t k = 0; k < n; ++k) {
    const auto& l = params.layers[k];
    cache.pre[k].noalias() = l.weights * cache.inputs[k];
    cache.pre[k].colwise() += l.biases;
    if (k + 1 < n)
      apply_activation(params.activation, cache.pre[k], cache.inputs[k + 1]);
  }
  cache.output = cache.pre[n - 1];
  return cache;
}

Eigen::VectorXd mlp_forward(const MlpParams& params, std::span<const double> x,
                            std::span<const double> t_embed,
                            std::optional<std::span<const double>> cond_embed) {
  if (cond_embed && cond_embed->size() != t_embed.size())
    throw ConfigError("condition embedding length does not match time embedding length");
  const auto total = static_cast<Eigen::Index>(x.size() + t_embed.size());
  if (total != params.input_dim())
    throw ConfigError("concatenated input length " + std::to_string(total) +
                      " does not match network input_dim " + std::to_string(params.input_dim()));
  Eigen::MatrixXd in(total, 1);
  Eigen::Index r = 0;
  for (double v : x) in(r++, 0) = v;
  for (std::size_t i = 0; i < t_embed.size(); ++i)
    in(r++, 0) = t_embed[i] + (cond_embed ? (*cond_embed)[i] : 0.0);
  return mlp_forward_batch(params, in).output.col(0);
}

MlpGradient zero_gradient(const MlpParams& params) {
  MlpGradient g;
  for (const auto& l : params.layers)
    g.layers.push_back({Eigen::MatrixXd::Zero(l.out_dim(), l.in_dim()), Eigen::VectorXd::Zero(l.out_dim())});
  return g;
}

MlpGradient mlp_backward(const MlpParams& params, const Eigen::MatrixXd& upstream, const ForwardCache& cache) {
  if (cache.empty()) throw UsageError("mlp_backward called without a forward cache");
  const std::size_t n = params.layers.size();
  if (cache.inputs.size() != n || cache.pre.size() != n)
    throw UsageError("forward cache does not match the network depth");
  if (upstream.rows() != params.output_dim() || upstream.cols() != cache.output.cols())
    throw UsageError("upstream gradient shape does not match the cached forward output");

  MlpGradient g;
  g.layers.resize(n);
  Eigen::MatrixXd delta = upstream;  // dL/d pre[k]
  for (std::size_t k = n; k-- > 0;) {
    const auto& l = params.layers[k];
    g.layers[k].weights.noalias() = delta * cache.inputs[k].transpose();
    g.layers[k].biases = delta.rowwise().sum();
    Eigen::MatrixXd back = l.weights.transpose() * delta;
    if (k > 0) {
      activation_backward(params.activation, cache.pre[k - 1], back);
      delta = std::move(back);
    } else {
      g.input_grad = std::move(back);
    }
  }
  return g;
}

Eigen::VectorXd time_embed(int t, const TimeEmbedding& spec) {
  if (spec.dim <= 0 || spec.dim % 2 != 0)
    throw ConfigError("time embedding dim must be a positive even number, got " + std::to_string(spec.dim));
  if (t < 0) throw UsageError("time step must be non-negative");
  const int half = spec.dim / 2;
  Eigen::VectorXd e(spec.dim);
  for (int k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(spec.max_period) * k / half);
    e(k) = std::sin(t * freq);
    e(half + k) = std::cos(t * freq);
  }
  return e;
}

std::vector<TensorView> tensor_views(MlpParams& params) {
  std::vector<TensorView> v;
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    auto& l = params.layers[k];
    v.push_back({"layer" + std::to_string(k) + ".weights", {l.weights.data(), static_cast<std::size_t>(l.weights.size())}});
    v.push_back({"layer" + std::to_string(k) + ".biases", {l.biases.data(), static_cast<std::size_t>(l.biases.size())}});
  }
  return v;
}

std::vector<ConstTensorView> tensor_views(const MlpParams& params) {
  std::vector<ConstTensorView> v;
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    const auto& l = params.layers[k];
    v.push_back({"layer" + std::to_string(k) + ".weights", {l.weights.data(), static_cast<std::size_t>(l.weights.size())}});
    v.push_back({"layer" + std::to_string(k) + ".biases", {l.biases.data(), static_cast<std::size_t>(l.biases.size())}});
  }
  return v;
}

std::vector<ConstTensorView> tensor_views(const MlpGradient& grad) {
  std::vector<ConstTensorView> v;
  for (std::size_t k = 0; k < grad.layers.size(); ++k) {
    const auto& l = grad.layers[k];
    v.push_back({"layer" + std::to_string(k) + ".weights", {l.weights.data(), static_cast<std::size_t>(l.weights.size())}});
    v.push_back({"layer" + std::to_string(k) + ".biases", {l.biases.data(), static_cast<std::size_t>(l.biases.size())}});
  }
  return v;
}

}  // namespace dkto
