#include "roiattn/checkpoint.hpp"

#include <json.hpp>

#include <fstream>

namespace roiattn {

namespace {

using nlohmann::json;

constexpr int kFormatVersion = 1;

json config_to_json(const ModelConfig& cfg) {
  return json{{"a", cfg.a},
              {"d", cfg.d},
              {"H", cfg.H},
              {"L", cfg.L},
              {"mlp_ratio", cfg.mlp_ratio},
              {"rope_base", cfg.rope_base},
              {"rope_scale", cfg.rope_scale},
              {"readout", to_string(cfg.readout)},
              {"use_rope", cfg.use_rope}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig cfg;
  try {
    cfg.a = j.at("a").get<std::size_t>();
    cfg.d = j.at("d").get<std::size_t>();
    cfg.H = j.at("H").get<std::size_t>();
    cfg.L = j.at("L").get<std::size_t>();
    cfg.mlp_ratio = j.at("mlp_ratio").get<std::size_t>();
    cfg.rope_base = j.at("rope_base").get<double>();
    cfg.rope_scale = j.at("rope_scale").get<double>();
    cfg.readout = parse_readout(j.at("readout").get<std::string>());
    cfg.use_rope = j.at("use_rope").get<bool>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad checkpoint config: ") + e.what());
  }
  validate(cfg);
  return cfg;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const ModelParams& params) {
  json tensors = json::object();
  for (const auto& t : tensor_refs(params)) {
    json data = json::array();
    for (std::size_t i = 0; i < t.rows; ++i)
      for (std::size_t j = 0; j < t.cols; ++j)
        data.push_back(t.data[j * t.rows + i]);  // storage is column-major
    tensors[t.name] = json{{"shape", {t.rows, t.cols}}, {"data", data}};
  }
  json j{{"format_version", kFormatVersion},
         {"config", config_to_json(cfg)},
         {"params", tensors}};

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open checkpoint path: " + path);
  out << j.dump() << '\n';
  if (!out) throw ValidationError("failed writing checkpoint to " + path);
}

std::pair<ModelConfig, ModelParams> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint file: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("malformed checkpoint: ") + e.what());
  }
  if (!j.contains("format_version"))
    throw ValidationError("checkpoint missing format_version");
  if (j["format_version"].get<int>() != kFormatVersion)
    throw ValidationError("unsupported checkpoint format_version");
  if (!j.contains("config") || !j.contains("params"))
    throw ValidationError("checkpoint missing config or params");

  ModelConfig cfg = config_from_json(j["config"]);
  ModelParams params = make_params(cfg);
  for (auto& t : tensor_refs(params)) {
    if (!j["params"].contains(t.name))
      throw ValidationError("checkpoint missing tensor " + t.name);
    const json& tj = j["params"][t.name];
    const auto& shape = tj.at("shape");
    if (shape.size() != 2 || shape[0].get<std::size_t>() != t.rows ||
        shape[1].get<std::size_t>() != t.cols)
      throw ValidationError("checkpoint shape mismatch for " + t.name);
    const auto& data = tj.at("data");
    if (data.size() != t.size)
      throw ValidationError("checkpoint size mismatch for " + t.name);
    std::size_t flat = 0;
    for (std::size_t i = 0; i < t.rows; ++i)
      for (std::size_t j2 = 0; j2 < t.cols; ++j2)
        t.data[j2 * t.rows + i] = data[flat++].get<double>();
  }
  return {cfg, std::move(params)};
}

}  // namespace roiattn
