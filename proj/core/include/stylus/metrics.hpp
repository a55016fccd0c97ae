#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "stylus/auxnets.hpp"
#include "stylus/dataset.hpp"
#include "stylus/image.hpp"
#include "stylus/infer.hpp"

namespace stylus::metrics {

using json = nlohmann::ordered_json;
using FeatureMatrix = Eigen::MatrixXd;  // [n, d]

// Frozen convolutional embedder: the font classifier's penultimate
// global-average-pooled features. Provenance rides along so scores are never
// confused with Inception-based numbers.
class FeatureEmbedder {
 public:
  FeatureEmbedder(std::shared_ptr<const auxnets::WriterIdModel> model, std::string provenance);

  int dim() const { return model_->config().feature_dim; }
  const std::string& provenance() const { return provenance_; }

  Eigen::VectorXd embed(const Image& img) const;  // any size; GAP makes it width-agnostic
  FeatureMatrix embed_all(const std::vector<Image>& images) const;

 private:
  std::shared_ptr<const auxnets::WriterIdModel> model_;
  std::string provenance_;
};

// Non-overlapping 64x64 crops, left to right; remainder under 64 px is
// dropped. Images narrower than 64 yield one white-padded crop.
std::vector<Image> extract_crops(const Image& img);

// ||mu_a - mu_b||^2 + tr(Sa + Sb - 2 (Sa Sb)^{1/2}), matrix square root via
// eigendecomposition of the symmetrized product.
double frechet_distance(const FeatureMatrix& a, const FeatureMatrix& b);

// Unbiased MMD^2 with the polynomial kernel (degree 3, gamma 1/d, coef 1).
// Equal-sized sets use the full U-statistic, which is exactly zero on
// duplicated sets.
double kernel_distance(const FeatureMatrix& a, const FeatureMatrix& b);

// Otsu binarization; constant images become all-background.
int otsu_threshold(const Image& grey);
Image binarize(const Image& img);

// Corpus-level CER of a recognizer over an image set.
double set_cer(const std::vector<Image>& images, const std::vector<std::u32string>& transcripts,
               const auxnets::HtrModel& recognizer, const text::CharSet& charset);

double delta_cer(const std::vector<Image>& real_set, const std::vector<std::u32string>& real_texts,
                 const std::vector<Image>& generated_set, const std::vector<std::u32string>& generated_texts,
                 const auxnets::HtrModel& recognizer, const text::CharSet& charset);

// Mean pairwise feature distance over all crop pairs of one image.
double intra_crop_distance(const Image& img, const FeatureEmbedder& embedder);
double delta_i_lpips_lite(const Image& real_image, const Image& generated_image, const FeatureEmbedder& embedder);

// Euclidean distance between per-set mean style features.
double hwd_lite(const std::vector<Image>& real_set, const std::vector<Image>& generated_set,
                const FeatureEmbedder& style_embedder);

struct MetricReport {
  std::map<std::string, double> values;  // fid, bfid, kid, bkid, delta_cer, delta_i_lpips, hwd_lite
  int real_crops = 0;
  int generated_crops = 0;
  std::string embedder_provenance;
  std::string recognizer_provenance;
  std::string prompt_hash;
  double wall_seconds = 0.0;

  json to_json() const;
  static MetricReport from_json(const json& j);
  void save(const std::string& path) const;           // line-delimited records
  static MetricReport load(const std::string& path);
  std::string table() const;  // rendered text table (KID/BKID scaled x1e3)
};

// Full scoring of one (real, generated) pair of sets with all metrics.
MetricReport score_sets(const std::vector<Image>& real_images, const std::vector<std::u32string>& real_texts,
                        const std::vector<Image>& generated_images,
                        const std::vector<std::u32string>& generated_texts, const FeatureEmbedder& embedder,
                        const auxnets::HtrModel& recognizer, const text::CharSet& charset);

// ---------------------------------------------------------------------------
// Protocol runners
// ---------------------------------------------------------------------------

struct ProtocolModels {
  const infer::ModelBundle* bundle = nullptr;  // null: self-comparison (generated := real)
  const FeatureEmbedder* embedder = nullptr;
  const auxnets::HtrModel* recognizer = nullptr;
  const text::CharSet* charset = nullptr;
  int stop_patience = 10;
  int max_slices = 4096;
};

MetricReport run_protocol(const ProtocolModels& models, const data::DatasetManifest& eval_manifest,
                          const std::vector<data::PromptTriple>& prompts);

// Style-input width buckets: +-25 px around centers 125..1025 step 50.
std::vector<int> input_bucket_centers();
bool bucket_contains(int center, int width_px, int half_width = 25);

struct InputSweepRow {
  int center = 0;
  int count = 0;
  double fid = 0.0;
};
struct OutputSweepRow {
  int char_count = 0;
  int count = 0;
  double fid = 0.0;
  double cer = 0.0;
};

struct SweepTables {
  std::vector<InputSweepRow> by_input_width;
  std::vector<OutputSweepRow> by_output_chars;

  void save(const std::string& input_path, const std::string& output_path) const;
};

struct SweepConfig {
  std::vector<int> output_char_counts = {10, 20, 30, 40, 60, 80};
  int prompts_per_bucket = 8;
  int min_bucket_size = 3;
};

SweepTables run_sweeps(const ProtocolModels& models, const data::DatasetManifest& eval_manifest,
                       const std::vector<data::PromptTriple>& prompts, const SweepConfig& cfg);

}  // namespace stylus::metrics
