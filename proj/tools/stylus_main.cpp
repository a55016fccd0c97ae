#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "stylus/common.hpp"
#include "stylus/pipeline.hpp"
#include "stylus/png_io.hpp"

namespace {

using stylus::config::RunConfig;

struct CommonArgs {
  std::string config_path;
  std::string profile;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON config file (or $STYLUS_CONFIG)");
  cmd->add_option("--profile", args.profile, "Preset: toy | full");
  cmd->add_option("--set", args.sets, "Override a config key, e.g. --set vae.iterations=100")->take_all();
  cmd->add_option("--seed", args.seed, "Global seed override");
}

RunConfig resolve_config(const CommonArgs& args) {
  std::string path = args.config_path;
  if (path.empty()) {
    if (const char* env = std::getenv("STYLUS_CONFIG")) path = env;
  }
  std::vector<std::pair<std::string, std::string>> sets;
  for (const auto& s : args.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      stylus::fail(stylus::ErrorClass::config, "--set expects key=value, got: " + s);
    }
    sets.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  if (args.seed) sets.emplace_back("seed", std::to_string(*args.seed));
  return RunConfig::load(path, args.profile, sets);
}

void log_resolved(const RunConfig& cfg) {
  std::filesystem::create_directories(cfg.log_dir());
  stylus::write_text_file(cfg.log_dir() + "/resolved_config.json", cfg.dump() + "\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"styled text-line image generation: dataset forge, latent models, evaluation"};
  app.require_subcommand(1);

  CommonArgs common;

  auto* cmd_corpus = app.add_subcommand("build-corpus", "Ingest the corpus and build the weighted lexicon");
  add_common(cmd_corpus, common);

  auto* cmd_render = app.add_subcommand("render-dataset", "Forge the synthetic dataset and the eval set");
  add_common(cmd_render, common);

  auto* cmd_aux = app.add_subcommand("train-aux", "Train the font classifier and the recognizer");
  add_common(cmd_aux, common);

  auto* cmd_vae = app.add_subcommand("train-vae", "Train the latent representation model");
  add_common(cmd_vae, common);

  auto* cmd_ar = app.add_subcommand("train-ar", "Train the autoregressive generator (both stages)");
  add_common(cmd_ar, common);
  std::string resume_path;
  cmd_ar->add_option("--resume-stage1", resume_path, "Continue stage 2 from a stage-1 checkpoint");

  auto* cmd_gen = app.add_subcommand("generate", "Generate styled text from a style image");
  add_common(cmd_gen, common);
  std::string style_path, style_text, out_text, out_path = "out.png", correct_ref, overlay_doc, overlay_at = "0,0";
  bool word_by_word = false;
  cmd_gen->add_option("--style", style_path, "Style image (RGB PNG, height 64)")->required();
  cmd_gen->add_option("--style-text", style_text, "Transcription of the style image")->required();
  cmd_gen->add_option("--text", out_text, "Text to generate")->required();
  cmd_gen->add_flag("--word-by-word", word_by_word, "Generate one word at a time");
  cmd_gen->add_option("--color-correct", correct_ref, "Reference image for ink color transfer");
  cmd_gen->add_option("--overlay", overlay_doc, "Document image to blend the result onto");
  cmd_gen->add_option("--at", overlay_at, "Overlay position x,y");
  cmd_gen->add_option("-o,--output", out_path, "Output PNG path");

  auto* cmd_eval = app.add_subcommand("evaluate", "Score generated images against the eval set");
  add_common(cmd_eval, common);
  bool self_comparison = false;
  std::string report_path;
  cmd_eval->add_flag("--self", self_comparison, "Self-comparison gate: score the real set against itself");
  cmd_eval->add_option("--report", report_path, "Report output path (default work/out/report.jsonl)");

  auto* cmd_sweep = app.add_subcommand("sweep", "Input-width and output-length sweeps");
  add_common(cmd_sweep, common);

  auto* cmd_overlay = app.add_subcommand("overlay", "Blend a white-background image onto a document");
  add_common(cmd_overlay, common);
  std::string ov_src, ov_doc, ov_out = "overlay.png", ov_at = "0,0";
  cmd_overlay->add_option("--image", ov_src, "White-background source PNG")->required();
  cmd_overlay->add_option("--document", ov_doc, "Document PNG")->required();
  cmd_overlay->add_option("--at", ov_at, "Position x,y");
  cmd_overlay->add_option("-o,--output", ov_out, "Output PNG path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (cmd_corpus->parsed()) {
      const auto cfg = resolve_config(common);
      log_resolved(cfg);
      stylus::pipeline::build_corpus(cfg);
    } else if (cmd_render->parsed()) {
      const auto cfg = resolve_config(common);
      log_resolved(cfg);
      stylus::pipeline::render_dataset(cfg);
    } else if (cmd_aux->parsed()) {
      const auto cfg = resolve_config(common);
      log_resolved(cfg);
      const auto report = stylus::pipeline::train_aux(cfg);
      std::cout << "writer-id holdout accuracy: " << report.wid_accuracy << " (" << report.wid_iterations
                << " iterations)\nhtr holdout cer: " << report.htr_cer << " (" << report.htr_iterations
                << " iterations)\n";
    } else if (cmd_vae->parsed()) {
      const auto cfg = resolve_config(common);
      log_resolved(cfg);
      const auto report = stylus::pipeline::train_vae(cfg);
      std::cout << "holdout mae: " << report.holdout_mae_initial << " -> " << report.holdout_mae_final
                << "\npadding latent decodes to mean pixel " << report.padding_decode_mean << "\n";
    } else if (cmd_ar->parsed()) {
      const auto cfg = resolve_config(common);
      log_resolved(cfg);
      const auto report = stylus::pipeline::train_ar(cfg, resume_path);
      std::cout << "stage1 mse " << report.s1_final_mse << ", stage2 mse " << report.s2_final_mse
                << ", holdout mse " << report.holdout_mse << "\n";
    } else if (cmd_gen->parsed()) {
      const auto cfg = resolve_config(common);
      const auto models = stylus::pipeline::load_models(cfg, true, false, true);
      stylus::pipeline::RealBundle bundle(models.vae_model, models.generator, models.detector, models.charset);

      stylus::infer::GenerationRequest req;
      req.style_image = stylus::read_png(style_path).to_rgb();
      req.style_text = style_text;
      req.out_text = out_text;
      req.stop_patience = cfg.inference().at("stop_patience").get<int>();
      req.max_slices = cfg.inference().at("max_slices").get<int>();

      stylus::Image result;
      if (word_by_word) {
        const auto r = stylus::infer::generate_word_by_word(req, bundle);
        result = r.image;
        for (const auto& w : r.per_word) {
          std::cout << "word '" << w.word << "': " << w.slices << " slices, " << w.seconds << " s\n";
        }
      } else {
        const auto r = stylus::infer::generate(req, bundle);
        result = r.image;
        std::cout << "emitted " << r.slices_emitted << " slices, "
                  << (r.stopped_naturally ? "natural stop" : "hit max_slices") << "\n";
      }
      if (!correct_ref.empty()) {
        result = stylus::infer::color_correct(result, stylus::read_png(correct_ref),
                                              static_cast<std::uint8_t>(cfg.inference().at("white_threshold").get<int>()));
      }
      if (!overlay_doc.empty()) {
        int x = 0, y = 0;
        if (std::sscanf(overlay_at.c_str(), "%d,%d", &x, &y) != 2) {
          stylus::fail(stylus::ErrorClass::config, "--at expects x,y");
        }
        result = stylus::infer::overlay(result, stylus::read_png(overlay_doc).to_rgb(), x, y);
      }
      stylus::write_png(out_path, result);
      std::cout << "wrote " << out_path << "\n";
    } else if (cmd_eval->parsed()) {
      const auto cfg = resolve_config(common);
      log_resolved(cfg);
      std::filesystem::create_directories(cfg.out_dir());
      if (report_path.empty()) report_path = cfg.out_dir() + "/report.jsonl";
      const auto report = stylus::pipeline::evaluate(cfg, self_comparison, report_path);
      std::cout << report.table();
    } else if (cmd_sweep->parsed()) {
      const auto cfg = resolve_config(common);
      log_resolved(cfg);
      const auto tables = stylus::pipeline::sweep(cfg);
      std::cout << "input-width rows: " << tables.by_input_width.size()
                << ", output-length rows: " << tables.by_output_chars.size() << "\n";
    } else if (cmd_overlay->parsed()) {
      int x = 0, y = 0;
      if (std::sscanf(ov_at.c_str(), "%d,%d", &x, &y) != 2) {
        stylus::fail(stylus::ErrorClass::config, "--at expects x,y");
      }
      const auto out = stylus::infer::overlay(stylus::read_png(ov_src), stylus::read_png(ov_doc).to_rgb(), x, y);
      stylus::write_png(ov_out, out);
      std::cout << "wrote " << ov_out << "\n";
    }
  } catch (const stylus::Error& e) {
    std::cerr << "error[" << stylus::to_string(e.cls()) << "]: " << e.what() << "\n";
    return e.cls() == stylus::ErrorClass::config ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
