// SPDX-License-Identifier: Apache-2.0
#include "dkto/checkpoint.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "dkto/errors.hpp"

namespace dkto {

namespace {

nlohmann::json row_major(const Eigen::MatrixXd& m) {
  auto a = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) a.push_back(m(r, c));
  return a;
}

Eigen::MatrixXd read_matrix(const nlohmann::json& values, Eigen::Index rows, Eigen::Index cols) {
  if (!values.is_array() || static_cast<Eigen::Index>(values.size()) != rows * cols)
    throw ConfigError("checkpoint: array length does not match declared shape");
  Eigen::MatrixXd m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = values[k++].get<double>();
  return m;
}

}  // namespace

nlohmann::json checkpoint_to_json(const DenoiserModel& model, const CheckpointMeta& meta) {
  nlohmann::json j;
  j["format"] = "dkto-denoiser";
  j["version"] = kCheckpointVersion;
  j["seed"] = meta.seed;
  j["step_count"] = meta.step_count;
  std::vector<int> hidden;
  for (std::size_t k = 0; k + 1 < model.mlp.layers.size(); ++k)
    hidden.push_back(static_cast<int>(model.mlp.layers[k].out_dim()));
  j["arch"] = {{"input_dim", model.mlp.input_dim()},
               {"output_dim", model.mlp.output_dim()},
               {"hidden", hidden},
               {"activation", std::string(to_string(model.mlp.activation))},
               {"time_embed_dim", model.embedding.dim},
               {"max_period", model.embedding.max_period}};
  const auto& s = model.schedule.spec();
  j["schedule"] = {{"T", s.T}, {"beta_start", s.beta_start}, {"beta_end", s.beta_end}};
  auto layers = nlohmann::json::array();
  for (const auto& l : model.mlp.layers) {
    layers.push_back({{"rows", l.out_dim()},
                      {"cols", l.in_dim()},
                      {"weights", row_major(l.weights)},
                      {"biases", std::vector<double>(l.biases.data(), l.biases.data() + l.biases.size())}});
  }
  j["layers"] = std::move(layers);
  if (model.cond_vocab)
    j["cond_vocab"] = {{"rows", model.cond_vocab->rows()},
                       {"cols", model.cond_vocab->cols()},
                       {"values", row_major(*model.cond_vocab)}};
  else
    j["cond_vocab"] = nullptr;
  return j;
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "dkto-denoiser") throw ConfigError("not a denoiser checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw ConfigError("unsupported checkpoint version " + j.at("version").dump());
    Checkpoint ck;
    ck.meta.seed = j.at("seed").get<std::uint64_t>();
    ck.meta.step_count = j.at("step_count").get<std::int64_t>();
    const auto& arch = j.at("arch");
    ck.model.mlp.activation = parse_activation(arch.at("activation").get<std::string>());
    ck.model.embedding = {arch.at("time_embed_dim").get<int>(), arch.at("max_period").get<double>()};
    const auto& s = j.at("schedule");
    ck.model.schedule =
        make_linear_schedule(s.at("T").get<int>(), s.at("beta_start").get<double>(), s.at("beta_end").get<double>());
    for (const auto& l : j.at("layers")) {
      const auto rows = l.at("rows").get<Eigen::Index>();
      const auto cols = l.at("cols").get<Eigen::Index>();
      DenseLayer layer{read_matrix(l.at("weights"), rows, cols), read_matrix(l.at("biases"), rows, 1)};
      ck.model.mlp.layers.push_back(std::move(layer));
    }
    const auto& cv = j.at("cond_vocab");
    if (!cv.is_null())
      ck.model.cond_vocab =
          read_matrix(cv.at("values"), cv.at("rows").get<Eigen::Index>(), cv.at("cols").get<Eigen::Index>());
    ck.model.validate();
    if (arch.at("input_dim").get<int>() != ck.model.mlp.input_dim() ||
        arch.at("output_dim").get<int>() != ck.model.mlp.output_dim())
      throw ConfigError("checkpoint header does not match layer shapes");
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const DenoiserModel& model, const CheckpointMeta& meta) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << checkpoint_to_json(model, meta).dump() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_json(read_json_file(path));
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    const auto end = text.begin() + static_cast<std::ptrdiff_t>(std::min(e.byte, text.size()));
    const auto line = 1 + static_cast<std::size_t>(std::count(text.begin(), end, '\n'));
    throw ParseError(path.string(), line, "invalid JSON");
  }
}

}  // namespace dkto
