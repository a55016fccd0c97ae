#pragma once

#include <nlohmann/json.hpp>

#include <string>

#include "stylus/tensor.hpp"

namespace stylus::nn {

using json = nlohmann::ordered_json;

// Versioned binary container: 8-byte magic, u64 header length, JSON header
// (kind, config echo, tensor index, free-form extras), then raw little-endian
// float64 blobs in index order.
struct Checkpoint {
  std::string kind;  // "vae" | "writer_id" | "htr" | "argen"
  json config;
  json extras;

  static void save(const std::string& path, const std::string& kind, const json& config, const json& extras,
                   const ParamStore& params);

  // Loads header + blobs; `params` must already hold identically-named and
  // -shaped tensors (built from the config echo).
  static Checkpoint load_into(const std::string& path, ParamStore& params);

  // Reads only the header, for config-driven model reconstruction.
  static Checkpoint peek(const std::string& path);
};

}  // namespace stylus::nn
