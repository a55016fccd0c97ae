#pragma once

#include <memory>
#include <optional>
#include <string>

#include "stylus/argen.hpp"
#include "stylus/config.hpp"
#include "stylus/dataset.hpp"
#include "stylus/infer.hpp"
#include "stylus/metrics.hpp"
#include "stylus/vae.hpp"

namespace stylus::pipeline {

using config::RunConfig;

// ---------------------------------------------------------------------------
// Stage entry points (one per CLI subcommand)
// ---------------------------------------------------------------------------

// Ingests the corpus directory, writes ngrams.tsv + lexicon.tsv.
void build_corpus(const RunConfig& cfg);

// Samples weighted text lines, forges samples, writes the training dataset,
// the white-background eval set, and the fixed prompt file.
data::DatasetManifest render_dataset(const RunConfig& cfg);

struct AuxReport {
  double wid_accuracy = 0.0;
  int wid_iterations = 0;
  double htr_cer = 1.0;
  int htr_iterations = 0;
};
AuxReport train_aux(const RunConfig& cfg);

struct VaeReport {
  double holdout_mae_initial = 0.0;
  double holdout_mae_final = 0.0;
  double padding_decode_mean = 0.0;  // mean pixel value of the decoded padding latent
  int iterations = 0;
};
VaeReport train_vae(const RunConfig& cfg);

struct ArReport {
  double s1_final_mse = 0.0;
  double s2_final_mse = 0.0;
  double holdout_mse = 0.0;
  int s1_iterations = 0;
  int s2_iterations = 0;
};
// resume_stage1_from: path of a stage-1 checkpoint to continue from (skips
// stage 1); empty runs both stages.
ArReport train_ar(const RunConfig& cfg, const std::string& resume_stage1_from = "");

// ---------------------------------------------------------------------------
// Trained-model access
// ---------------------------------------------------------------------------

struct TrainedModels {
  std::shared_ptr<vae::Vae> vae_model;
  std::shared_ptr<auxnets::WriterIdModel> writer_id;
  std::shared_ptr<auxnets::HtrModel> htr;
  std::shared_ptr<ar::ArGenerator> generator;
  std::shared_ptr<infer::PaddingDetector> detector;
  text::CharSet charset;
  std::string wid_provenance;
};

// which: any subset of {"vae", "aux", "ar"}; missing checkpoints fail.
TrainedModels load_models(const RunConfig& cfg, bool need_vae, bool need_aux, bool need_ar,
                          const std::string& ar_ckpt_override = "");

// Production ModelBundle over the trained VAE + generator.
class RealBundle : public infer::ModelBundle {
 public:
  RealBundle(std::shared_ptr<const vae::Vae> vae_model, std::shared_ptr<const ar::ArGenerator> generator,
             std::shared_ptr<const infer::PaddingDetector> detector, text::CharSet charset);

  vae::LatentSequence encode_style(const Image& rgb) const override;
  std::array<double, 8> predict_next(const vae::LatentSequence& context,
                                     const std::u32string& condition_text) const override;
  Image decode(const vae::LatentSequence& latents) const override;
  const infer::PaddingDetector& detector() const override { return *detector_; }

 private:
  std::shared_ptr<const vae::Vae> vae_;
  std::shared_ptr<const ar::ArGenerator> generator_;
  std::shared_ptr<const infer::PaddingDetector> detector_;
  text::CharSet charset_;
};

// ---------------------------------------------------------------------------
// Evaluation helpers
// ---------------------------------------------------------------------------

metrics::MetricReport evaluate(const RunConfig& cfg, bool self_comparison, const std::string& report_path);

metrics::SweepTables sweep(const RunConfig& cfg);

struct StopStats {
  int prompts = 0;
  int natural_stops = 0;
  double natural_rate = 0.0;
  double mean_content_slices = 0.0;
};
// Runs `generate` over the prompt file and counts natural stops.
StopStats stop_statistics(const RunConfig& cfg, const TrainedModels& models, int max_prompts);

// Nearest-centroid detector accuracy over held-out latent slices labelled by
// the clean image's pixel mask.
double detector_accuracy(const RunConfig& cfg, const TrainedModels& models, int max_records);

// Teacher-forced MSE of a generator checkpoint on held-out stage-2 examples.
double ar_holdout_mse(const RunConfig& cfg, const TrainedModels& models, int max_examples);

}  // namespace stylus::pipeline
