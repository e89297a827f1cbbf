// SPDX-License-Identifier: Apache-2.0
//
// End-to-end runs: world -> (decoder) -> backbone + head training ->
// generation -> metrics, plus the noise sweep and the {norm} x {noise} grid
// built from repeated runs. Every stage draws from seeds in the config only.
#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <mutex>
#include <thread>

#include "arlab/eval/drift.hpp"
#include "arlab/experiment/checkpoint.hpp"
#include "arlab/experiment/csv.hpp"
#include "arlab/world/decoder.hpp"

namespace arlab {

namespace fs = std::filesystem;

using Logger = std::function<void(const std::string&)>;

inline void no_log(const std::string&) {}

struct World {
  EncoderConfig encoder;
  TokenStatsSummary calibrated;
  std::vector<SyntheticImage> train_images, eval_images;
  LatentCorpus train, eval;
  std::vector<int> train_labels, eval_labels;
};

inline World build_world(const ExperimentConfig& cfg) {
  const auto& w = cfg.world;
  World out;
  const auto calib = make_image_corpus(derive_seed(w.seed, 1), w.calibration_images, w.image_size, w.classes);
  auto res = calibrate_profile_detailed(profile_by_name(w.profile),
                                        make_encoder_config(w.dim, w.encoder_seed, w.image_size, w.patch), calib);
  out.encoder = res.config;
  out.calibrated = res.achieved;
  out.train_images = make_image_corpus(derive_seed(w.seed, 2), w.train_images, w.image_size, w.classes);
  out.eval_images = make_image_corpus(derive_seed(w.seed, 3), w.eval_images, w.image_size, w.classes);
  out.train = encode_corpus(out.train_images, out.encoder);
  out.eval = encode_corpus(out.eval_images, out.encoder);
  for (const auto& img : out.train_images) out.train_labels.push_back(img.class_id);
  for (const auto& img : out.eval_images) out.eval_labels.push_back(img.class_id);
  return out;
}

inline DiffusionSchedule build_schedule(const ExperimentConfig& cfg) {
  auto s = make_schedule(cfg.model.schedule_steps, cfg.model.schedule);
  if (cfg.model.shift) s = shift_timesteps(s, cfg.world.dim, cfg.model.d_base);
  return s;
}

struct LossPoint {
  int step = 0;
  double loss = 0.0;      // raw step loss
  double smoothed = 0.0;  // bias-corrected EMA, factor 0.98
};

struct TrainedModel {
  BackboneParams backbone;
  DenoiserParams<float> head;
  DiffusionSchedule schedule;
  std::vector<LossPoint> curve;
  int steps_done = 0;

  std::map<std::string, Tensor> tensors() const { return model_tensors(backbone.params, head.params); }
};

inline TrainedModel init_model(const ExperimentConfig& cfg) {
  const auto bc = cfg.backbone();
  DenoiserConfig dc;
  dc.dim = cfg.world.dim;
  dc.cond_dim = bc.cond_dim();
  dc.width = cfg.model.head_width;
  dc.blocks = cfg.model.head_blocks;
  dc.seed = derive_seed(cfg.model.seed, 5);
  return {make_backbone(bc), make_denoiser<float>(dc), build_schedule(cfg), {}, 0};
}

/// Trains from initialization. On a non-finite loss the last finite
/// parameters are written to `rescue_path` (when given) before rethrowing.
inline TrainedModel train_model(const ExperimentConfig& cfg, const World& world, const Logger& log = no_log,
                                const std::string& rescue_path = "") {
  const auto& t = cfg.training;
  TrainedModel m = init_model(cfg);
  auto state = make_trainer_state(m.backbone, m.head, AdamWConfig{.lr = t.lr, .weight_decay = t.weight_decay});
  const TrainStepOptions opt{t.diffusion_multiplicity, t.grad_clip};
  Rng rng(derive_seed(t.seed, 77));
  const auto n = static_cast<std::int64_t>(world.train.size());
  double ema = 0.0;
  LatentCorpus batch;
  std::vector<int> labels;
  for (int s = 0; s < t.steps; ++s) {
    batch.clear();
    labels.clear();
    for (int b = 0; b < t.batch; ++b) {
      const auto i = static_cast<std::size_t>(rng.integer(0, n - 1));
      batch.push_back(world.train[i]);
      labels.push_back(world.train_labels[i]);
    }
    double loss = 0.0;
    try {
      loss = train_step(batch, labels, m.backbone, m.head, m.schedule, state, rng.next_seed(), opt);
    } catch (const TrainingError&) {
      if (!rescue_path.empty()) save_checkpoint(m.tensors(), cfg, rescue_path, s);
      throw;
    }
    ema = 0.98 * ema + 0.02 * loss;
    m.steps_done = s + 1;
    if (s % t.log_every == 0 || s + 1 == t.steps) {
      const double smoothed = ema / (1.0 - std::pow(0.98, s + 1));
      m.curve.push_back({s + 1, loss, smoothed});
      log("step " + std::to_string(s + 1) + " loss " + format_number(loss) + " smoothed " + format_number(smoothed));
    }
  }
  return m;
}

struct SampleSet {
  LatentCorpus grids;
  std::vector<int> labels;
};

inline SampleSet generate_samples(const ExperimentConfig& cfg, const TrainedModel& m) {
  const auto& g = cfg.generation;
  SampleSet out;
  const int total = g.samples_per_class * cfg.world.classes;
  for (int i = 0; i < total; ++i) out.labels.push_back(i % cfg.world.classes);
  constexpr int kChunk = 128;
  for (int c0 = 0; c0 < total; c0 += kChunk) {
    std::span<const int> lab(out.labels.data() + c0, static_cast<std::size_t>(std::min(kChunk, total - c0)));
    const auto seed = derive_seed(g.seed, static_cast<std::uint64_t>(c0));
    auto part = m.backbone.cfg.mode == ArMode::causal
                    ? generate_causal_batch(lab, m.backbone, m.head, m.schedule, g.steps, seed)
                    : generate_masked_batch(lab, m.backbone, m.head, m.schedule, g.steps, g.mask_rounds, seed);
    out.grids.insert(out.grids.end(), part.begin(), part.end());
  }
  return out;
}

struct Evaluation {
  std::vector<MetricsRow> rows;
  DriftCurve drift;
  std::vector<double> var_map;  // mean over generated grids
};

inline MetricsRow metrics_row(const ExperimentConfig& cfg, const std::string& metric, double value) {
  return {cfg.name, cfg.world.profile, cfg.model.mode, cfg.training.alpha, cfg.training.normalize, cfg.training.seed,
          metric, value};
}

inline bool wants(const ExperimentConfig& cfg, const std::string& metric) {
  const auto& m = cfg.eval.metrics;
  return std::find(m.begin(), m.end(), metric) != m.end();
}

/// Metrics of generated grids against the held-out corpus, both in the
/// space the model was trained in.
inline Evaluation evaluate(const ExperimentConfig& cfg, const World& world, const SampleSet& samples) {
  Evaluation ev;
  const auto ref = model_space(world.eval, cfg.backbone());
  auto add = [&](const std::string& name, double v) { ev.rows.push_back(metrics_row(cfg, name, v)); };
  if (wants(cfg, "gfid")) add("gfid_proxy", frechet_proxy(ref, samples.grids, cfg.eval.proxy_features));
  if (wants(cfg, "precision") || wants(cfg, "recall")) {
    auto pr = precision_recall(project_corpus(ref, cfg.eval.proxy_features),
                               project_corpus(samples.grids, cfg.eval.proxy_features), cfg.eval.k);
    if (wants(cfg, "precision")) add("precision", pr.precision);
    if (wants(cfg, "recall")) add("recall", pr.recall);
  }
  if (wants(cfg, "drift")) {
    ev.drift = drift_curve(samples.grids, ref);
    add("drift_auc", ev.drift.area());
  }
  if (wants(cfg, "token_stats")) {
    auto s = summary_stats(samples.grids);
    add("gen_stat_a", s.a);
    add("gen_stat_b", s.b);
    add("gen_stat_c", s.c);
  }
  ev.var_map.assign(static_cast<std::size_t>(samples.grids.front().tokens()), 0.0);
  for (const auto& g : samples.grids) {
    auto v = var_map(g);
    for (std::size_t i = 0; i < v.size(); ++i) ev.var_map[i] += v[i] / static_cast<double>(samples.grids.size());
  }
  return ev;
}

inline std::string loss_csv(const std::string& series, const std::vector<LossPoint>& curve) {
  std::string out = "series,step,loss,raw\n";
  for (const auto& p : curve)
    out += series + "," + std::to_string(p.step) + "," + format_number(p.smoothed) + "," + format_number(p.loss) + "\n";
  return out;
}

inline std::string drift_csv(const std::string& series, const DriftCurve& c) {
  std::string out = "series,position,drift\n";
  for (std::size_t i = 0; i < c.values.size(); ++i)
    out += series + "," + std::to_string(i) + "," + format_number(c.values[i]) + "\n";
  return out;
}

inline std::string map_csv(const std::vector<double>& values, int side) {
  std::string out = "row,col,value\n";
  for (std::size_t i = 0; i < values.size(); ++i)
    out += std::to_string(static_cast<int>(i) / side) + "," + std::to_string(static_cast<int>(i) % side) + "," +
           format_number(values[i]) + "\n";
  return out;
}

/// Samples travel in the checkpoint container: "samples" [S*N, d] and
/// "labels" [S].
inline void save_samples(const SampleSet& s, const ExperimentConfig& cfg, const std::string& path) {
  const auto n = static_cast<std::int64_t>(s.grids.size());
  const int tokens = s.grids.front().tokens(), d = s.grids.front().dim();
  Tensor x({n * tokens, d}), lab({n});
  for (std::int64_t i = 0; i < n; ++i) {
    std::copy(s.grids[i].data().begin(), s.grids[i].data().end(),
              x.data().begin() + static_cast<std::ptrdiff_t>(i * tokens * d));
    lab[static_cast<std::size_t>(i)] = static_cast<float>(s.labels[i]);
  }
  save_checkpoint({{"samples", x}, {"labels", lab}}, cfg, path);
}

inline SampleSet load_samples(const std::string& path) {
  auto ck = load_checkpoint(path);
  auto xs = ck.tensors.find("samples"), ls = ck.tensors.find("labels");
  if (xs == ck.tensors.end() || ls == ck.tensors.end()) throw IntegrityError(path + " holds no samples");
  const auto cfg = ck.config();
  const int tokens = cfg.world.tokens(), d = cfg.world.dim, side = cfg.world.image_size / cfg.world.patch;
  const auto n = ls->second.dim(0);
  if (xs->second.dim(0) != n * tokens || xs->second.dim(1) != d) throw IntegrityError(path + " has inconsistent shapes");
  SampleSet s;
  for (std::int64_t i = 0; i < n; ++i) {
    auto r = xs->second.data().subspan(static_cast<std::size_t>(i * tokens * d), static_cast<std::size_t>(tokens * d));
    s.grids.emplace_back(side, d, std::vector<float>(r.begin(), r.end()));
    s.labels.push_back(static_cast<int>(ls->second[static_cast<std::size_t>(i)]));
  }
  return s;
}

struct RunResult {
  std::vector<MetricsRow> rows;
  std::vector<LossPoint> curve;
  DriftCurve drift;
};

inline double final_smoothed_loss(const RunResult& r) { return r.curve.empty() ? 0.0 : r.curve.back().smoothed; }

inline double metric_value(const std::vector<MetricsRow>& rows, const std::string& metric) {
  for (const auto& r : rows)
    if (r.metric == metric) return r.value;
  throw InputError("no metric " + metric);
}

/// Full pipeline into `out_dir`: config.json, checkpoint.bin, loss.csv,
/// samples.bin, metrics.csv, drift.csv, varmap.csv (and decoder.bin when
/// decoder training is on).
inline RunResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir, const Logger& log = no_log) {
  validate(cfg);
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  write_text((dir / "config.json").string(), to_text(cfg));
  log("world: profile " + cfg.world.profile + " d=" + std::to_string(cfg.world.dim));
  const World world = build_world(cfg);
  RunResult res;
  auto add = [&](const std::string& name, double v) { res.rows.push_back(metrics_row(cfg, name, v)); };
  add("calib_stat_a", world.calibrated.a);
  add("calib_stat_b", world.calibrated.b);
  add("calib_stat_c", world.calibrated.c);

  if (cfg.world.decoder_epochs > 0) {
    log("decoder: " + std::to_string(cfg.world.decoder_epochs) + " epochs");
    const auto lat = model_space(world.train, cfg.backbone());
    DecoderConfig dc;
    dc.side = cfg.world.image_size / cfg.world.patch;
    dc.patch = cfg.world.patch;
    dc.dim = cfg.world.dim;
    dc.seed = derive_seed(cfg.model.seed, 9);
    auto dec = train_decoder(lat, world.train_images, dc, cfg.world.decoder_epochs, cfg.world.decoder_lr);
    save_checkpoint(dec.params.tensors(), cfg, (dir / "decoder.bin").string(), cfg.world.decoder_epochs);
    const auto held = model_space(world.eval, cfg.backbone());
    const std::size_t count = std::min<std::size_t>(64, held.size());
    double p = 0.0, s = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
      auto img = decode(held[i], dec);
      p += psnr(img, world.eval_images[i]);
      s += ssim(img, world.eval_images[i]);
    }
    add("recon_psnr", p / static_cast<double>(count));
    add("recon_ssim", s / static_cast<double>(count));
  }

  log("train: " + std::to_string(cfg.training.steps) + " steps");
  const auto model = train_model(cfg, world, log, (dir / "checkpoint.bin").string());
  save_checkpoint(model.tensors(), cfg, (dir / "checkpoint.bin").string(), model.steps_done);
  write_text((dir / "loss.csv").string(), loss_csv(cfg.name, model.curve));
  res.curve = model.curve;
  if (!model.curve.empty()) {
    add("loss_first", model.curve.front().loss);
    add("loss_smoothed_final", model.curve.back().smoothed);
  }

  log("sample: " + std::to_string(cfg.generation.samples_per_class * cfg.world.classes) + " grids");
  const auto samples = generate_samples(cfg, model);
  save_samples(samples, cfg, (dir / "samples.bin").string());

  log("eval");
  auto ev = evaluate(cfg, world, samples);
  res.rows.insert(res.rows.end(), ev.rows.begin(), ev.rows.end());
  res.drift = ev.drift;
  write_text((dir / "metrics.csv").string(), metrics_csv(res.rows));
  if (!ev.drift.values.empty()) write_text((dir / "drift.csv").string(), drift_csv(cfg.name, ev.drift));
  write_text((dir / "varmap.csv").string(), map_csv(ev.var_map, cfg.world.image_size / cfg.world.patch));
  return res;
}

/// Worker count for grids and sweeps from ARLAB_WORKERS (default 1).
inline int worker_count() {
  const char* v = std::getenv("ARLAB_WORKERS");
  if (!v || !*v) return 1;
  const int n = std::atoi(v);
  if (n < 1) throw ContractError("ARLAB_WORKERS must be a positive integer");
  return n;
}

struct Cell {
  std::string id;  // also the output subdirectory
  ExperimentConfig cfg;
};

inline std::string alpha_tag(double a) { return "a" + format_number(a); }

/// One cell per (alpha, seed), alphas outermost.
inline std::vector<Cell> sweep_cells(const ExperimentConfig& base) {
  std::vector<Cell> out;
  for (double a : base.sweep.alphas)
    for (auto seed : base.sweep.seeds) {
      Cell c{alpha_tag(a) + "_s" + std::to_string(seed), base};
      c.cfg.training.alpha = a;
      c.cfg.override_seed(seed);
      c.cfg.name = base.name + "_" + c.id;
      out.push_back(std::move(c));
    }
  return out;
}

/// {baseline, +norm, +noise, +norm+noise} x seeds, strategies outermost.
inline std::vector<Cell> grid_cells(const ExperimentConfig& base) {
  struct Strategy {
    const char* tag;
    bool norm;
    bool noise;
  };
  static const Strategy strategies[] = {
      {"baseline", false, false}, {"norm", true, false}, {"noise", false, true}, {"norm_noise", true, true}};
  std::vector<Cell> out;
  for (const auto& st : strategies)
    for (auto seed : base.sweep.seeds) {
      Cell c{std::string(st.tag) + "_s" + std::to_string(seed), base};
      c.cfg.training.normalize = st.norm;
      c.cfg.training.alpha = st.noise ? base.sweep.grid_alpha : 0.0;
      c.cfg.override_seed(seed);
      c.cfg.name = base.name + "_" + c.id;
      out.push_back(std::move(c));
    }
  return out;
}

/// Runs the cells (optionally only index `only`) on `workers` threads, each
/// into its own subdirectory of `out_dir`, and writes the combined metrics
/// CSV in cell order.
inline std::vector<RunResult> run_cells(const std::vector<Cell>& cells, const std::string& out_dir,
                                        const std::string& combined_name, int workers, int only = -1,
                                        const Logger& log = no_log) {
  ARLAB_REQUIRE(only < static_cast<int>(cells.size()), "cell index out of range");
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < cells.size(); ++i)
    if (only < 0 || static_cast<int>(i) == only) todo.push_back(i);
  std::vector<RunResult> results(cells.size());
  std::vector<std::exception_ptr> errors(cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mu;
  auto worker = [&] {
    for (std::size_t k = next++; k < todo.size(); k = next++) {
      const auto i = todo[k];
      const auto& cell = cells[i];
      Logger cell_log = [&](const std::string& line) {
        std::lock_guard<std::mutex> lock(log_mu);
        log("[" + cell.id + "] " + line);
      };
      try {
        results[i] = run_experiment(cell.cfg, (fs::path(out_dir) / cell.id).string(), cell_log);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n = std::max(1, std::min<int>(workers, static_cast<int>(todo.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < n; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<MetricsRow> all;
  for (auto i : todo) all.insert(all.end(), results[i].rows.begin(), results[i].rows.end());
  fs::create_directories(out_dir);
  write_text((fs::path(out_dir) / combined_name).string(), metrics_csv(all));
  return results;
}

inline std::vector<RunResult> ablation_noise_sweep(const ExperimentConfig& base, const std::string& out_dir,
                                                   int workers = 1, int only = -1, const Logger& log = no_log) {
  return run_cells(sweep_cells(base), out_dir, "sweep.csv", workers, only, log);
}

inline std::vector<RunResult> run_grid(const ExperimentConfig& base, const std::string& out_dir, int workers = 1,
                                       int only = -1, const Logger& log = no_log) {
  return run_cells(grid_cells(base), out_dir, "grid.csv", workers, only, log);
}

}  // namespace arlab
