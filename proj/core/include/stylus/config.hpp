#pragma once

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

#include "stylus/argen.hpp"
#include "stylus/dataset.hpp"
#include "stylus/raster.hpp"
#include "stylus/vae.hpp"

namespace stylus::config {

using json = nlohmann::ordered_json;

// Fully resolved run configuration: profile preset, then config file, then
// --set overrides (flags win). Unknown keys are rejected, all at once.
class RunConfig {
 public:
  // profile: "toy" (desk scale) or "full" (paper-scale hyperparameters).
  static json defaults(const std::string& profile);
  static RunConfig load(const std::string& config_path /* empty: none */, const std::string& profile_override,
                        const std::vector<std::pair<std::string, std::string>>& sets);

  const json& data() const { return data_; }
  std::string dump() const { return data_.dump(2); }
  std::string hash() const;

  // typed accessors
  std::uint64_t seed() const { return data_.at("seed").get<std::uint64_t>(); }
  std::string work_dir() const { return data_.at("work_dir").get<std::string>(); }
  std::string profile() const { return data_.at("profile").get<std::string>(); }

  // section views
  json corpus() const { return data_.at("corpus"); }
  json raster_section() const { return data_.at("raster"); }
  json datastore() const { return data_.at("datastore"); }
  json auxnets_section() const { return data_.at("auxnets"); }
  json inference() const { return data_.at("inference"); }
  json evalsuite() const { return data_.at("evalsuite"); }

  raster::RenderOptions render_options() const;
  raster::TransformRecipe transform_recipe() const;
  vae::VaeConfig vae_config() const;
  ar::ArConfig ar_config() const;
  data::EvalBuildConfig eval_build_config() const;

  // well-known paths under work_dir
  std::string dataset_root() const { return work_dir() + "/dataset"; }
  std::string eval_root() const { return work_dir() + "/eval"; }
  std::string corpus_out_dir() const { return work_dir() + "/corpus"; }
  std::string ckpt_dir() const { return work_dir() + "/ckpt"; }
  std::string log_dir() const { return work_dir() + "/logs"; }
  std::string out_dir() const { return work_dir() + "/out"; }

 private:
  json data_;
};

// Collects every unknown key (dotted paths) of `user` relative to `schema`.
std::vector<std::string> unknown_keys(const json& schema, const json& user, const std::string& prefix = "");

}  // namespace stylus::config
