#include "cmp/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "cmp/error.hpp"

namespace cmp {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  arch.validate();
  optimizer.validate();
  sampling.validate();
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (crop < 1 || crop > short_side) throw InvalidArgument("need 1 <= crop <= short_side");
  if (checkpoint_every < 0) throw InvalidArgument("checkpoint_every must be >= 0");
  if (log_every < 1) throw InvalidArgument("log_every must be >= 1");
  if (!(sparse_guidance >= 0.0 && sparse_guidance <= 1.0)) throw InvalidArgument("sparse_guidance must lie in [0, 1]");
  if (!manifest && (synthetic.corpus_size < 1 || synthetic.image_size < 32)) {
    throw InvalidArgument("synthetic corpus needs >= 1 item of side >= 32");
  }
}

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.sparse_guidance = 0.5;
  return c;
}

TrainConfig TrainConfig::paper_scale() {
  TrainConfig c;
  c.arch.encoder_stride = 8;
  c.arch.encoder_channels = {32, 64, 128, 256};
  c.arch.encoder_out_channels = 256;
  c.arch.quantization = {19, 48.0f};
  c.optimizer.total_iterations = 35000;
  c.sampling = SamplingConfig::paper_scale();
  c.synthetic.image_size = 416;
  c.short_side = 416;
  c.crop = 384;
  c.batch_size = 16;
  c.output_dir = "runs/paper";
  return c;
}

namespace {

nlohmann::json sampling_json(const SamplingConfig& s) {
  return {{"kernel", s.kernel},
          {"grid_stride", s.grid_stride},
          {"edge_threshold", s.edge_threshold},
          {"border_margin", s.border_margin}};
}

SamplingConfig sampling_from(const nlohmann::json& j, SamplingConfig s) {
  s.kernel = j.value("kernel", s.kernel);
  s.grid_stride = j.value("grid_stride", s.grid_stride);
  s.edge_threshold = j.value("edge_threshold", s.edge_threshold);
  s.border_margin = j.value("border_margin", s.border_margin);
  return s;
}

}  // namespace

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"arch", c.arch},
                     {"optimizer",
                      {{"base_lr", c.optimizer.base_lr},
                       {"momentum", c.optimizer.momentum},
                       {"weight_decay", c.optimizer.weight_decay},
                       {"total_iterations", c.optimizer.total_iterations}}},
                     {"sampling", sampling_json(c.sampling)},
                     {"sparse_guidance", c.sparse_guidance},
                     {"batch_size", c.batch_size},
                     {"short_side", c.short_side},
                     {"crop", c.crop},
                     {"checkpoint_every", c.checkpoint_every},
                     {"log_every", c.log_every},
                     {"seed", c.seed},
                     {"output_dir", c.output_dir}};
  if (c.manifest) {
    j["data"] = {{"manifest", *c.manifest}};
  } else {
    j["data"] = {{"synthetic",
                  {{"corpus_size", c.synthetic.corpus_size},
                   {"image_size", c.synthetic.image_size},
                   {"seed", c.synthetic.seed}}}};
  }
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const std::string preset = j.value("preset", std::string("desk"));
  if (preset == "desk") {
    c = TrainConfig::desk();
  } else if (preset == "paper") {
    c = TrainConfig::paper_scale();
  } else {
    throw InvalidArgument("unknown preset '" + preset + "'");
  }
  if (j.contains("arch")) {
    nlohmann::json arch = c.arch;
    arch.update(j.at("arch"));
    c.arch = arch.get<CmpArchConfig>();
  }
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    c.optimizer.base_lr = o.value("base_lr", c.optimizer.base_lr);
    c.optimizer.momentum = o.value("momentum", c.optimizer.momentum);
    c.optimizer.weight_decay = o.value("weight_decay", c.optimizer.weight_decay);
    c.optimizer.total_iterations = o.value("total_iterations", c.optimizer.total_iterations);
  }
  if (j.contains("sampling")) c.sampling = sampling_from(j.at("sampling"), c.sampling);
  if (j.contains("data")) {
    const auto& d = j.at("data");
    if (d.contains("manifest")) {
      c.manifest = d.at("manifest").get<std::string>();
    } else if (d.contains("synthetic")) {
      const auto& s = d.at("synthetic");
      c.manifest.reset();
      c.synthetic.corpus_size = s.value("corpus_size", c.synthetic.corpus_size);
      c.synthetic.image_size = s.value("image_size", c.synthetic.image_size);
      c.synthetic.seed = s.value("seed", c.synthetic.seed);
    }
  }
  c.sparse_guidance = j.value("sparse_guidance", c.sparse_guidance);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.short_side = j.value("short_side", c.short_side);
  c.crop = j.value("crop", c.crop);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.log_every = j.value("log_every", c.log_every);
  c.seed = j.value("seed", c.seed);
  c.output_dir = j.value("output_dir", c.output_dir);
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  TrainConfig cfg;
  try {
    cfg = nlohmann::json::parse(in).get<TrainConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("config_invalid", "config '" + path + "': " + e.what());
  }
  if (cfg.manifest && fs::path(*cfg.manifest).is_relative()) {
    cfg.manifest = (fs::path(path).parent_path() / *cfg.manifest).string();
  }
  cfg.validate();
  return cfg;
}

void to_json(nlohmann::json& j, const TrainMetrics& m) {
  j = nlohmann::json{{"iteration", m.iteration}, {"loss", m.loss},         {"loss_x", m.loss_x},
                     {"loss_y", m.loss_y},       {"accuracy_x", m.accuracy_x}, {"accuracy_y", m.accuracy_y},
                     {"epe", m.epe},             {"lr", m.lr}};
}

void from_json(const nlohmann::json& j, TrainMetrics& m) {
  m.iteration = j.at("iteration").get<std::int64_t>();
  m.loss = j.at("loss").get<double>();
  m.loss_x = j.at("loss_x").get<double>();
  m.loss_y = j.at("loss_y").get<double>();
  m.accuracy_x = j.at("accuracy_x").get<double>();
  m.accuracy_y = j.at("accuracy_y").get<double>();
  m.epe = j.at("epe").get<double>();
  m.lr = j.at("lr").get<double>();
}

// ---------------------------------------------------------------------------
// Data

Dataset load_dataset(const TrainConfig& cfg) {
  Dataset data;
  auto add = [&](ImageFlowPair&& pair) {
    (is_held_out(pair.id) ? data.held_out : data.train).push_back(std::move(pair));
  };
  if (cfg.manifest) {
    for (ImageFlowPair& p : load_corpus(*cfg.manifest)) add(std::move(p));
  } else {
    for (SyntheticItem& item :
         generate_synthetic(cfg.synthetic.corpus_size, cfg.synthetic.image_size, cfg.synthetic.seed)) {
      add(std::move(item.pair));
    }
  }
  if (data.train.empty()) throw InvalidArgument("training split is empty");
  return data;
}

std::string checkpoint_path(const TrainConfig& cfg, std::int64_t iteration) {
  return (fs::path(cfg.output_dir) / ("ckpt_" + std::to_string(iteration) + ".cmpw")).string();
}

std::string final_checkpoint_path(const TrainConfig& cfg) {
  return (fs::path(cfg.output_dir) / "model.cmpw").string();
}

namespace {

struct Batch {
  std::vector<ImageFlowPair> items;
  std::vector<SparseGuidanceMap> guidance;
  std::vector<QuantizedFlow> targets;
};

// Per-epoch shuffles seeded by (seed, epoch) so any iteration can be
// reconstructed without replaying earlier ones.
class EpochOrder {
 public:
  EpochOrder(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {}

  std::size_t at(std::uint64_t position) {
    const std::uint64_t epoch = position / n_;
    if (epoch != epoch_) {
      order_.resize(n_);
      std::iota(order_.begin(), order_.end(), std::size_t{0});
      std::mt19937_64 rng(mix_seed(seed_, epoch, 0x65706f6368ULL));
      for (std::size_t i = n_ - 1; i > 0; --i) std::swap(order_[i], order_[rng() % (i + 1)]);
      epoch_ = epoch;
    }
    return order_[position % n_];
  }

 private:
  std::size_t n_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = ~std::uint64_t{0};
  std::vector<std::size_t> order_;
};

Batch make_batch(const TrainConfig& cfg, const Dataset& data, EpochOrder& order, std::int64_t iteration) {
  Batch batch;
  for (int slot = 0; slot < cfg.batch_size; ++slot) {
    const auto position = static_cast<std::uint64_t>(iteration) * cfg.batch_size + slot;
    const ImageFlowPair& src = data.train[order.at(position)];
    const std::uint64_t crop_seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(iteration), slot);
    ImageFlowPair item = preprocess(src, cfg.short_side, cfg.crop, crop_seed);
    if (!item.flow.all_finite()) throw FormatError("non_finite_flow", "item '" + src.id + "' has non-finite flow");
    GuidanceSet guidance = sample_guidance(item.flow, cfg.sampling);
    if (cfg.sparse_guidance > 0.0 && !guidance.points.empty()) {
      std::mt19937_64 rng(mix_seed(mix_seed(cfg.seed, static_cast<std::uint64_t>(iteration), slot), 0x737061727365ULL));
      if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg.sparse_guidance) {
        auto& pts = guidance.points;
        for (std::size_t i = pts.size() - 1; i > 0; --i) std::swap(pts[i], pts[rng() % (i + 1)]);
        pts.resize(1 + rng() % pts.size());
      }
    }
    batch.guidance.push_back(rasterize_guidance(guidance, cfg.crop, cfg.crop));
    batch.targets.push_back(quantize_flow(item.flow, cfg.arch.quantization));
    batch.items.push_back(std::move(item));
  }
  return batch;
}

struct Scores {
  double accuracy_x = 0.0;
  double accuracy_y = 0.0;
  double epe = 0.0;
};

// Bin accuracy against the quantized targets; EPE of the dequantized argmax
// against the raw (unclipped) flow.
Scores score(std::span<const QuantizedFlow> predicted, std::span<const QuantizedFlow> targets,
             std::span<const FlowField* const> truth) {
  Scores s;
  std::size_t pixels = 0;
  std::size_t hits_x = 0;
  std::size_t hits_y = 0;
  double epe_sum = 0.0;
  for (std::size_t n = 0; n < predicted.size(); ++n) {
    const QuantizedFlow& p = predicted[n];
    const QuantizedFlow& t = targets[n];
    for (std::size_t i = 0; i < p.xbins.size(); ++i) {
      hits_x += p.xbins[i] == t.xbins[i];
      hits_y += p.ybins[i] == t.ybins[i];
    }
    pixels += p.xbins.size();
    epe_sum += end_point_error(dequantize_flow(p), *truth[n]) * static_cast<double>(p.xbins.size());
  }
  if (pixels > 0) {
    s.accuracy_x = static_cast<double>(hits_x) / pixels;
    s.accuracy_y = static_cast<double>(hits_y) / pixels;
    s.epe = epe_sum / pixels;
  }
  return s;
}

template <class T>
std::vector<const T*> pointers(const std::vector<T>& v) {
  std::vector<const T*> out;
  for (const T& x : v) out.push_back(&x);
  return out;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const Dataset& data, const TrainOptions& options) {
  cfg.validate();
  if (data.train.empty()) throw InvalidArgument("training split is empty");
  TrainResult result{options.resume ? load_model(*options.resume) : CmpModel(cfg.arch, mix_seed(cfg.seed, 0x6d6f64656cULL)),
                     {}};
  CmpModel& model = result.model;
  if (options.resume) {
    nlohmann::json a = model.arch();
    nlohmann::json b = cfg.arch;
    if (a != b) throw InvalidArgument("resumed checkpoint architecture differs from the config");
  }
  const std::int64_t total = cfg.optimizer.total_iterations;
  const std::int64_t start = model.iteration();
  const std::int64_t stop = options.stop_after ? std::min(total, *options.stop_after) : total;

  std::ofstream metrics_out;
  if (options.write_files) {
    fs::create_directories(cfg.output_dir);
    const auto mode = start > 0 ? std::ios::app : std::ios::trunc;
    metrics_out.open(fs::path(cfg.output_dir) / "metrics.jsonl", std::ios::out | mode);
    if (!metrics_out) throw IoError("cannot write metrics under '" + cfg.output_dir + "'");
  }
  const nlohmann::json extra{{"train_config", cfg}};
  auto params = model.parameters();
  EpochOrder order(data.train.size(), cfg.seed);
  ForwardState<float> state;

  for (std::int64_t it = start; it < stop; ++it) {
    Batch batch = make_batch(cfg, data, order, it);
    std::vector<const RgbImage*> images;
    std::vector<const FlowField*> flows;
    for (const auto& item : batch.items) {
      images.push_back(&item.image);
      flows.push_back(&item.flow);
    }
    const auto guidance_ptrs = pointers(batch.guidance);
    const auto x = images_to_tensor<float>(images);
    const auto g = guidance_to_tensor<float>(guidance_ptrs, cfg.arch.quantization.boundary);

    const CmpPrediction<float> pred = model.forward_train(x, g, state);
    CmpLoss<float> loss = cmp_loss(pred, batch.targets);
    model.zero_grad();
    model.backward(state, loss.grad_x, loss.grad_y);
    nn::sgd_step<float>(params, cfg.optimizer, it);
    model.set_iteration(it + 1);

    if (it % cfg.log_every == 0 || it + 1 == total) {
      const Scores s = score(prediction_bins(pred, cfg.arch.quantization), batch.targets, flows);
      TrainMetrics m{it, loss.x + loss.y, loss.x, loss.y, s.accuracy_x, s.accuracy_y, s.epe,
                     nn::scheduled_lr(cfg.optimizer, it)};
      result.log.push_back(m);
      if (metrics_out.is_open()) metrics_out << nlohmann::json(m).dump() << '\n' << std::flush;
      if (options.on_log) options.on_log(m);
    }
    if (options.write_files && cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0) {
      save_model(checkpoint_path(cfg, it + 1), model, extra);
    }
  }
  if (options.write_files && model.iteration() == total) save_model(final_checkpoint_path(cfg), model, extra);
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

void to_json(nlohmann::json& j, const EvalRow& r) {
  j = nlohmann::json{{"label", r.label},
                     {"mean_points", r.mean_points},
                     {"accuracy_x", r.accuracy_x},
                     {"accuracy_y", r.accuracy_y},
                     {"epe", r.epe}};
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  j = nlohmann::json{{"guided", r.guided}, {"zero_guidance", r.zero_guidance}, {"sweep", r.sweep}};
}

EvalRow evaluate_with(const CmpModel& model, std::span<const ImageFlowPair> items,
                      const std::function<GuidanceSet(const ImageFlowPair&)>& guidance, const std::string& label) {
  constexpr std::size_t kBatch = 16;
  const QuantizationSpec& spec = model.arch().quantization;
  EvalRow row;
  row.label = label;
  double pixels = 0.0;
  double hits_x = 0.0;
  double hits_y = 0.0;
  double epe_sum = 0.0;
  double points = 0.0;
  std::size_t begin = 0;
  while (begin < items.size()) {
    // Batch consecutive items of equal size.
    std::size_t end = begin + 1;
    while (end < items.size() && end - begin < kBatch && items[end].image.width() == items[begin].image.width() &&
           items[end].image.height() == items[begin].image.height()) {
      ++end;
    }
    std::vector<SparseGuidanceMap> maps;
    std::vector<QuantizedFlow> targets;
    std::vector<const RgbImage*> images;
    std::vector<const FlowField*> flows;
    for (std::size_t i = begin; i < end; ++i) {
      const GuidanceSet set = guidance(items[i]);
      points += static_cast<double>(set.points.size());
      maps.push_back(rasterize_guidance(set, items[i].image.width(), items[i].image.height()));
      targets.push_back(quantize_flow(items[i].flow, spec));
      images.push_back(&items[i].image);
      flows.push_back(&items[i].flow);
    }
    const auto pred = model.forward(images_to_tensor<float>(images),
                                    guidance_to_tensor<float>(pointers(maps), spec.boundary));
    const Scores s = score(prediction_bins(pred, spec), targets, flows);
    const double n = static_cast<double>(targets.size()) * targets.front().xbins.size();
    pixels += n;
    hits_x += s.accuracy_x * n;
    hits_y += s.accuracy_y * n;
    epe_sum += s.epe * n;
    begin = end;
  }
  if (!items.empty()) {
    row.mean_points = points / static_cast<double>(items.size());
    row.accuracy_x = hits_x / pixels;
    row.accuracy_y = hits_y / pixels;
    row.epe = epe_sum / pixels;
  }
  return row;
}

std::vector<SamplingConfig> guidance_sweep_configs(const SamplingConfig& base) {
  auto odd = [](double k) {
    int v = std::max(3, static_cast<int>(std::lround(k)));
    return v % 2 == 0 ? v + 1 : v;
  };
  std::vector<SamplingConfig> out;
  for (double kf : {0.5, 1.0, 2.0, 4.0}) {
    for (double gf : {0.5, 1.0, 2.0}) {
      SamplingConfig c = base;
      c.kernel = odd(base.kernel * kf);
      c.grid_stride = std::max(1, static_cast<int>(std::lround(base.grid_stride * gf)));
      out.push_back(c);
    }
  }
  return out;
}

EvalReport evaluate(const CmpModel& model, std::span<const ImageFlowPair> items, const SamplingConfig& sampling,
                    bool sweep_guidance) {
  auto sampled = [](const SamplingConfig& c) {
    return [c](const ImageFlowPair& item) { return sample_guidance(item.flow, c); };
  };
  auto label = [](const SamplingConfig& c) {
    return "K=" + std::to_string(c.kernel) + " G=" + std::to_string(c.grid_stride);
  };
  EvalReport report;
  report.guided = evaluate_with(model, items, sampled(sampling), label(sampling));
  report.zero_guidance = evaluate_with(model, items, [](const ImageFlowPair&) { return GuidanceSet{}; }, "zero");
  if (sweep_guidance) {
    for (const SamplingConfig& c : guidance_sweep_configs(sampling)) {
      report.sweep.push_back(evaluate_with(model, items, sampled(c), label(c)));
    }
    std::stable_sort(report.sweep.begin(), report.sweep.end(),
                     [](const EvalRow& a, const EvalRow& b) { return a.mean_points < b.mean_points; });
  }
  return report;
}

// ---------------------------------------------------------------------------
// Ablation

std::vector<AblationRow> run_stride_ablation(const TrainConfig& base, const Dataset& data,
                                             std::span<const std::vector<int>> stride_sets, std::int64_t iterations) {
  std::vector<AblationRow> rows;
  for (const std::vector<int>& strides : stride_sets) {
    TrainConfig cfg = base;
    cfg.arch.propagation_strides = strides;
    cfg.optimizer.total_iterations = iterations;
    cfg.checkpoint_every = 0;
    TrainOptions options;
    options.write_files = false;
    const auto t0 = std::chrono::steady_clock::now();
    TrainResult r = train(cfg, data, options);
    AblationRow row;
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    row.strides = strides;
    row.parameters = r.model.parameter_count();
    row.final_loss = r.log.empty() ? 0.0 : r.log.back().loss;
    row.held_out = evaluate(r.model, data.held_out, cfg.sampling, false).guided;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_ablation_table(std::span<const AblationRow> rows) {
  std::string out = "| strides | params | train s | final loss | acc x | acc y | EPE |\n";
  out += "|---|---|---|---|---|---|---|\n";
  for (const AblationRow& r : rows) {
    std::string strides = "{";
    for (std::size_t i = 0; i < r.strides.size(); ++i) strides += (i ? "," : "") + std::to_string(r.strides[i]);
    strides += "}";
    char line[256];
    std::snprintf(line, sizeof line, "| %s | %zu | %.1f | %.4f | %.4f | %.4f | %.4f |\n", strides.c_str(),
                  r.parameters, r.seconds, r.final_loss, r.held_out.accuracy_x, r.held_out.accuracy_y,
                  r.held_out.epe);
    out += line;
  }
  return out;
}

}  // namespace cmp
