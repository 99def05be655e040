#include "roiattn/data.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "roiattn/prng.hpp"

namespace roiattn {

namespace {

using nlohmann::json;

std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double require_number(const json& j, const char* what, std::size_t line) {
  if (!j.is_number())
    throw ValidationError("line " + std::to_string(line) + ": " + what +
                          " must be a number");
  double v = j.get<double>();
  if (!std::isfinite(v))
    throw ValidationError("line " + std::to_string(line) + ": " + what +
                          " must be finite");
  return v;
}

RoiRecord parse_roi(const json& j, std::size_t line) {
  if (!j.is_object())
    throw ValidationError("line " + std::to_string(line) +
                          ": roi must be an object");
  if (!j.contains("bbox") || !j["bbox"].is_array() || j["bbox"].size() != 4)
    throw ValidationError("line " + std::to_string(line) +
                          ": bbox must be an array of 4 numbers");
  RoiRecord roi;
  roi.proposal.bbox = {require_number(j["bbox"][0], "bbox.x1", line),
                       require_number(j["bbox"][1], "bbox.y1", line),
                       require_number(j["bbox"][2], "bbox.x2", line),
                       require_number(j["bbox"][3], "bbox.y2", line)};
  if (!j.contains("confidence"))
    throw ValidationError("line " + std::to_string(line) +
                          ": roi missing confidence");
  roi.proposal.confidence = require_number(j["confidence"], "confidence", line);
  try {
    validate(roi.proposal);
  } catch (const ValidationError& e) {
    throw ValidationError("line " + std::to_string(line) + ": " + e.what());
  }
  if (!j.contains("embedding") || !j["embedding"].is_array() ||
      j["embedding"].empty())
    throw ValidationError("line " + std::to_string(line) +
                          ": embedding must be a nonempty array");
  const auto& emb = j["embedding"];
  roi.embedding.resize(static_cast<Eigen::Index>(emb.size()));
  for (std::size_t t = 0; t < emb.size(); ++t)
    roi.embedding[static_cast<Eigen::Index>(t)] =
        require_number(emb[t], "embedding entry", line);
  if (j.contains("padded")) {
    if (!j["padded"].is_boolean())
      throw ValidationError("line " + std::to_string(line) +
                            ": padded must be a boolean");
    roi.padded = j["padded"].get<bool>();
  }
  return roi;
}

}  // namespace

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open dataset file: " + path);

  Dataset records;
  std::string text;
  std::size_t line_no = 0;
  Eigen::Index dim = -1;
  std::size_t k = 0;

  while (std::getline(in, text)) {
    ++line_no;
    if (text.empty()) continue;

    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ValidationError("line " + std::to_string(line_no) +
                            ": malformed JSON: " + e.what());
    }
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string())
      throw ValidationError("line " + std::to_string(line_no) +
                            ": record must be an object with a string id");
    if (!j.contains("label") || !j["label"].is_number_integer() ||
        (j["label"].get<int>() != 0 && j["label"].get<int>() != 1))
      throw ValidationError("line " + std::to_string(line_no) +
                            ": label must be 0 or 1");
    if (!j.contains("rois") || !j["rois"].is_array() || j["rois"].empty())
      throw ValidationError("line " + std::to_string(line_no) +
                            ": rois must be a nonempty array");

    ImageRecord rec;
    rec.id = j["id"].get<std::string>();
    rec.label = j["label"].get<int>();
    for (const auto& rj : j["rois"]) {
      RoiRecord roi = parse_roi(rj, line_no);
      if (dim < 0) dim = roi.embedding.size();
      if (roi.embedding.size() != dim)
        throw ValidationError(
            "line " + std::to_string(line_no) +
            ": embedding dimension mismatch: expected " + std::to_string(dim) +
            ", got " + std::to_string(roi.embedding.size()));
      rec.rois.push_back(std::move(roi));
    }
    if (k == 0) k = rec.rois.size();
    if (rec.rois.size() != k)
      throw ValidationError("line " + std::to_string(line_no) +
                            ": roi count mismatch: expected " +
                            std::to_string(k) + ", got " +
                            std::to_string(rec.rois.size()));

    // Put the largest-area RoI first, keeping the remaining order stable.
    std::vector<RoiProposal> props;
    props.reserve(rec.rois.size());
    for (const auto& r : rec.rois) props.push_back(r.proposal);
    std::size_t anchor = identify_anchor(props);
    if (anchor != 0) {
      RoiRecord a = std::move(rec.rois[anchor]);
      rec.rois.erase(rec.rois.begin() + static_cast<std::ptrdiff_t>(anchor));
      rec.rois.insert(rec.rois.begin(), std::move(a));
    }
    records.push_back(std::move(rec));
  }
  return records;
}

void write_dataset(const Dataset& records, const std::string& path) {
  std::ofstream out(path, std::ios::binary);  // binary keeps LF on any platform
  if (!out) throw ValidationError("cannot open output file: " + path);

  for (const auto& rec : records) {
    std::ostringstream line;
    line << "{\"id\":" << nlohmann::json(rec.id).dump()
         << ",\"label\":" << rec.label << ",\"rois\":[";
    for (std::size_t r = 0; r < rec.rois.size(); ++r) {
      const auto& roi = rec.rois[r];
      if (r) line << ',';
      line << "{\"bbox\":[" << fmt17(roi.proposal.bbox.x1) << ','
           << fmt17(roi.proposal.bbox.y1) << ',' << fmt17(roi.proposal.bbox.x2)
           << ',' << fmt17(roi.proposal.bbox.y2) << "],\"confidence\":"
           << fmt17(roi.proposal.confidence) << ",\"embedding\":[";
      for (Eigen::Index t = 0; t < roi.embedding.size(); ++t) {
        if (t) line << ',';
        line << fmt17(roi.embedding[t]);
      }
      line << "],\"padded\":" << (roi.padded ? "true" : "false") << '}';
    }
    line << "]}";
    out << line.str() << '\n';
  }
  if (!out) throw ValidationError("failed writing dataset to " + path);
}

void validate(const SynthConfig& cfg) {
  if (cfg.n < 1) throw ValidationError("n >= 1 required");
  if (cfg.k < 2) throw ValidationError("k >= 2 required");
  if (cfg.a < 2) throw ValidationError("a >= 2 required");
  if (!(cfg.signal_strength >= 0.0))
    throw ValidationError("signal_strength >= 0 required");
  if (!(cfg.noise_std > 0.0)) throw ValidationError("noise_std > 0 required");
  if (!(cfg.positive_rate > 0.0 && cfg.positive_rate < 1.0))
    throw ValidationError("positive_rate must lie in (0,1)");
}

Dataset generate_synthetic(const SynthConfig& cfg) {
  validate(cfg);

  // Stream 0: the planted unit direction v.
  Vector v(static_cast<Eigen::Index>(cfg.a));
  {
    Rng rng(cfg.seed, 0);
    for (Eigen::Index t = 0; t < v.size(); ++t) v[t] = rng.normal();
    v /= v.norm();
  }

  Dataset records;
  records.reserve(cfg.n);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    // Stream i+1, draw order per image: label; anchor embedding; then per fine
    // RoI (width, height, x1, y1, confidence, embedding); then signal slot.
    Rng rng(cfg.seed, i + 1);
    ImageRecord rec;
    rec.id = "synth-" + std::to_string(i);
    rec.label = rng.uniform() < cfg.positive_rate ? 1 : 0;

    RoiRecord anchor;
    anchor.proposal.bbox = {0.0, 0.0, 1.0, 1.0};
    anchor.proposal.confidence = 1.0;
    anchor.embedding.resize(static_cast<Eigen::Index>(cfg.a));
    for (Eigen::Index t = 0; t < anchor.embedding.size(); ++t)
      anchor.embedding[t] = cfg.noise_std * rng.normal();
    rec.rois.push_back(std::move(anchor));

    for (std::size_t r = 1; r < cfg.k; ++r) {
      RoiRecord roi;
      const double w = rng.uniform(0.02, 0.12);
      const double h = rng.uniform(0.02, 0.12);
      const double x1 = rng.uniform(0.0, 1.0 - w);
      const double y1 = rng.uniform(0.0, 1.0 - h);
      roi.proposal.bbox = {x1, y1, x1 + w, y1 + h};
      roi.proposal.confidence = rng.uniform();
      roi.embedding.resize(static_cast<Eigen::Index>(cfg.a));
      for (Eigen::Index t = 0; t < roi.embedding.size(); ++t)
        roi.embedding[t] = cfg.noise_std * rng.normal();
      rec.rois.push_back(std::move(roi));
    }

    if (rec.label == 1) {
      std::size_t slot = 1 + rng.uniform_index(cfg.k - 1);
      rec.rois[slot].embedding += cfg.signal_strength * v;
    }
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace roiattn
