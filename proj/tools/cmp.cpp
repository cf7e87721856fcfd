// Command-line front end: training, evaluation, guidance sampling, flow
// visualization, synthetic corpus generation and the HTTP service.

#include <csignal>
#include <cstdio>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "cmp/data.hpp"
#include "cmp/error.hpp"
#include "cmp/flow.hpp"
#include "cmp/guidance.hpp"
#include "cmp/model.hpp"
#include "cmp/service.hpp"
#include "cmp/trainer.hpp"

namespace {

using nlohmann::json;

int fail(const std::string& code, const std::string& message, int exit_code = 1) {
  std::cerr << json{{"error", {{"code", code}, {"message", message}}}}.dump() << std::endl;
  return exit_code;
}

cmp::HttpServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditional motion propagation toolkit"};
  app.require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model from a JSON config");
  std::string config_path;
  std::optional<std::string> resume;
  std::optional<std::int64_t> stop_after;
  bool quiet = false;
  train_cmd->add_option("--config", config_path, "Training config JSON")->required();
  train_cmd->add_option("--resume", resume, "Checkpoint to resume from");
  train_cmd->add_option("--stop-after", stop_after, "Stop once this many iterations are done");
  train_cmd->add_flag("--quiet", quiet, "Do not echo metrics to stdout");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a corpus manifest");
  std::string eval_ckpt;
  std::string corpus;
  bool sweep = false;
  bool held_out_only = false;
  cmp::SamplingConfig eval_sampling = cmp::SamplingConfig::desk_scale();
  eval_cmd->add_option("--ckpt", eval_ckpt, "Model checkpoint")->required();
  eval_cmd->add_option("--corpus", corpus, "Corpus manifest JSON")->required();
  eval_cmd->add_flag("--sweep-guidance", sweep, "Also evaluate a K/G guidance sweep");
  eval_cmd->add_flag("--held-out-only", held_out_only, "Restrict to the held-out split");
  eval_cmd->add_option("--k", eval_sampling.kernel, "NMS kernel size");
  eval_cmd->add_option("--g", eval_sampling.grid_stride, "Grid stride");
  eval_cmd->add_option("--edge-threshold", eval_sampling.edge_threshold, "Motion edge threshold");
  eval_cmd->add_option("--border-margin", eval_sampling.border_margin, "Keypoint border margin");

  // sample-guidance
  auto* sample_cmd = app.add_subcommand("sample-guidance", "Sample watershed and grid guidance from a .flo file");
  std::string flo_in;
  std::string points_out;
  cmp::SamplingConfig sampling = cmp::SamplingConfig::paper_scale();
  sample_cmd->add_option("--flo", flo_in, "Input flow")->required();
  sample_cmd->add_option("--k", sampling.kernel, "NMS kernel size");
  sample_cmd->add_option("--g", sampling.grid_stride, "Grid stride");
  sample_cmd->add_option("--edge-threshold", sampling.edge_threshold, "Motion edge threshold");
  sample_cmd->add_option("--border-margin", sampling.border_margin, "Keypoint border margin");
  sample_cmd->add_option("--out", points_out, "Output JSON")->required();

  // visualize
  auto* vis_cmd = app.add_subcommand("visualize", "Render a .flo file with the Middlebury color wheel");
  std::string vis_flo;
  std::string vis_out;
  std::optional<float> max_magnitude;
  vis_cmd->add_option("--flo", vis_flo, "Input flow")->required();
  vis_cmd->add_option("--out", vis_out, "Output PNG")->required();
  vis_cmd->add_option("--max-magnitude", max_magnitude, "Saturation reference magnitude");

  // generate-corpus
  auto* gen_cmd = app.add_subcommand("generate-corpus", "Write a synthetic rigid-motion corpus");
  std::string gen_out;
  int gen_count = 200;
  int gen_size = 64;
  std::uint64_t gen_seed = 17;
  gen_cmd->add_option("--out", gen_out, "Output directory")->required();
  gen_cmd->add_option("--count", gen_count, "Number of scenes");
  gen_cmd->add_option("--size", gen_size, "Image side in pixels");
  gen_cmd->add_option("--seed", gen_seed, "Corpus seed");

  // ablate
  auto* ablate_cmd = app.add_subcommand("ablate", "Train every propagation-stride combination and compare");
  std::string ablate_config;
  double fraction = 0.25;
  ablate_cmd->add_option("--config", ablate_config, "Base training config JSON")->required();
  ablate_cmd->add_option("--fraction", fraction, "Fraction of the iteration budget per run");

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP annotation service");
  std::string serve_ckpt;
  std::string host = "127.0.0.1";
  int port = 8750;
  int max_side = 512;
  serve_cmd->add_option("--ckpt", serve_ckpt, "Model checkpoint")->envname("CMP_CKPT");
  serve_cmd->add_option("--host", host, "Bind address")->envname("CMP_HOST");
  serve_cmd->add_option("--port", port, "Port")->envname("CMP_PORT");
  serve_cmd->add_option("--max-image-side", max_side, "Largest accepted image side")->envname("CMP_MAX_IMAGE_SIDE");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (train_cmd->parsed()) {
      const cmp::TrainConfig cfg = cmp::load_train_config(config_path);
      const cmp::Dataset data = cmp::load_dataset(cfg);
      cmp::TrainOptions options;
      options.resume = resume;
      options.stop_after = stop_after;
      if (!quiet) options.on_log = [](const cmp::TrainMetrics& m) { std::cout << json(m).dump() << std::endl; };
      const cmp::TrainResult result = cmp::train(cfg, data, options);
      const cmp::EvalReport report = cmp::evaluate(result.model, data.held_out, cfg.sampling, false);
      std::cout << json{{"held_out", report}, {"iteration", result.model.iteration()}}.dump() << std::endl;
    } else if (eval_cmd->parsed()) {
      const cmp::CmpModel model = cmp::load_model(eval_ckpt);
      std::vector<cmp::ImageFlowPair> items = cmp::load_corpus(corpus);
      if (held_out_only) std::erase_if(items, [](const cmp::ImageFlowPair& p) { return !cmp::is_held_out(p.id); });
      const cmp::EvalReport report = cmp::evaluate(model, items, eval_sampling, sweep);
      std::cout << json(report).dump(2) << std::endl;
    } else if (sample_cmd->parsed()) {
      const cmp::FlowField flow = cmp::load_flo(flo_in);
      const cmp::GuidanceSet set = cmp::sample_guidance(flow, sampling);
      const std::string text = cmp::guidance_to_json(set).dump(2) + "\n";
      cmp::write_file(points_out, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
      std::cout << json{{"points", set.points.size()},
                        {"watershed", set.count(cmp::GuidanceKind::Watershed)},
                        {"grid", set.count(cmp::GuidanceKind::Grid)}}
                       .dump()
                << std::endl;
    } else if (vis_cmd->parsed()) {
      cmp::save_png(vis_out, cmp::flow_to_color(cmp::load_flo(vis_flo), max_magnitude));
    } else if (gen_cmd->parsed()) {
      const auto items = cmp::generate_synthetic(gen_count, gen_size, gen_seed);
      cmp::write_synthetic_corpus(gen_out, items);
      std::cout << json{{"items", items.size()}, {"manifest", gen_out + "/manifest.json"}}.dump() << std::endl;
    } else if (ablate_cmd->parsed()) {
      const cmp::TrainConfig cfg = cmp::load_train_config(ablate_config);
      const cmp::Dataset data = cmp::load_dataset(cfg);
      const std::vector<std::vector<int>> sets{{1}, {1, 2}, {1, 2, 4}, {1, 2, 4, 8}};
      const auto iterations =
          std::max<std::int64_t>(1, static_cast<std::int64_t>(cfg.optimizer.total_iterations * fraction));
      std::cout << cmp::format_ablation_table(cmp::run_stride_ablation(cfg, data, sets, iterations));
    } else if (serve_cmd->parsed()) {
      std::shared_ptr<const cmp::CmpModel> model;
      if (!serve_ckpt.empty()) model = std::make_shared<const cmp::CmpModel>(cmp::load_model(serve_ckpt));
      cmp::AnnotateService service(model, {max_side});
      cmp::HttpServer server(service);
      const int bound = server.bind(host, port);
      if (bound < 0) return fail("bind_failed", "cannot bind " + host + ":" + std::to_string(port));
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cerr << json{{"listening", host + ":" + std::to_string(bound)}, {"model_loaded", model != nullptr}}.dump()
                << std::endl;
      server.run();
      g_server = nullptr;
    }
  } catch (const cmp::Error& e) {
    return fail(e.code(), e.what());
  } catch (const std::exception& e) {
    return fail("internal_error", e.what());
  }
  return 0;
}
