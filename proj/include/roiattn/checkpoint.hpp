#pragma once

#include <string>
#include <utility>

#include "roiattn/model.hpp"

namespace roiattn {

// JSON checkpoint: {"format_version": 1, "config": {...}, "params": {name:
// {"shape": [rows, cols], "data": [row-major floats]}}}. Doubles survive the
// round trip bit-exactly.
void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const ModelParams& params);

std::pair<ModelConfig, ModelParams> load_checkpoint(const std::string& path);

}  // namespace roiattn
