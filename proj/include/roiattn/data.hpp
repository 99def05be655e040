#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "roiattn/common.hpp"
#include "roiattn/geometry.hpp"

namespace roiattn {

struct RoiRecord {
  RoiProposal proposal;
  Vector embedding;
  bool padded = false;
};

struct ImageRecord {
  std::string id;
  int label = 0;  // 0 or 1
  std::vector<RoiRecord> rois;  // fixed length k, index 0 is the anchor
};

using Dataset = std::vector<ImageRecord>;

// JSONL, one image per line:
//   {"id": str, "label": 0|1,
//    "rois": [{"bbox":[x1,y1,x2,y2], "confidence": f, "embedding": [...],
//              "padded": bool}, ...]}
// The loader validates uniform embedding width and uniform k across the file,
// then moves the largest-area RoI of each record to index 0 (stable order for
// the rest). Errors carry 1-based line numbers.
Dataset load_dataset(const std::string& path);

// Floats are written with 17 significant digits, so load(write(r)) reproduces
// every double bit-exactly. LF line endings.
void write_dataset(const Dataset& records, const std::string& path);

struct SynthConfig {
  std::size_t n = 1000;
  std::size_t k = 8;
  std::size_t a = 32;
  double signal_strength = 2.0;  // mu, >= 0
  double noise_std = 1.0;        // sigma, > 0
  double positive_rate = 0.5;    // in (0,1)
  std::uint64_t seed = 0;
};

void validate(const SynthConfig& cfg);

// Planted-signal generator. Per image: Bernoulli(positive_rate) label; anchor
// RoI is the unit box with a pure-noise embedding; k-1 fine RoIs get small
// random boxes and noise embeddings; on positives exactly one fine RoI gains
// mu * v, where v is a unit direction drawn once from stream 0 of the seed.
// Image i uses stream i+1, so the dataset is a pure function of cfg.
Dataset generate_synthetic(const SynthConfig& cfg);

}  // namespace roiattn
