// SPDX-License-Identifier: Apache-2.0
#include <CLI11.hpp>
#include <iostream>

#include "arlab/core/alloc.hpp"
#include "arlab/experiment/plot.hpp"
#include "arlab/experiment/runner.hpp"

using namespace arlab;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::int64_t seed_override = -1;
  int cell = -1;
};

void add_common(CLI::App* cmd, Common& c, bool with_cell = false) {
  cmd->add_option("--config", c.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", c.out, "output directory (defaults to the config's output)");
  cmd->add_option("--seed-override", c.seed_override, "replace every seed in the config")->check(CLI::NonNegativeNumber);
  if (with_cell) cmd->add_option("--cell", c.cell, "run only this cell index")->check(CLI::NonNegativeNumber);
}

ExperimentConfig resolve(const Common& c) {
  auto cfg = load_config(c.config);
  if (c.seed_override >= 0) cfg.override_seed(static_cast<std::uint64_t>(c.seed_override));
  if (!c.out.empty()) cfg.output = c.out;
  return cfg;
}

void log_line(const std::string& s) { std::cerr << s << '\n'; }

void print_rows(const std::vector<MetricsRow>& rows) {
  for (const auto& r : rows) std::cout << r.run_id << " " << r.metric << " " << format_number(r.value) << '\n';
}

void cmd_calibrate(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.output);
  const auto world = build_world(cfg);
  const fs::path dir(cfg.output);
  std::vector<MetricsRow> rows = {metrics_row(cfg, "calib_stat_a", world.calibrated.a),
                                  metrics_row(cfg, "calib_stat_b", world.calibrated.b),
                                  metrics_row(cfg, "calib_stat_c", world.calibrated.c)};
  const auto target = profile_by_name(cfg.world.profile);
  rows.push_back(metrics_row(cfg, "target_stat_a", target.a));
  rows.push_back(metrics_row(cfg, "target_stat_b", target.b));
  rows.push_back(metrics_row(cfg, "target_stat_c", target.c));
  write_text((dir / "calibration.csv").string(), metrics_csv(rows));
  std::vector<double> vm(static_cast<std::size_t>(cfg.world.tokens()), 0.0);
  for (const auto& g : world.train) {
    auto v = var_map(g);
    for (std::size_t i = 0; i < v.size(); ++i) vm[i] += v[i] / static_cast<double>(world.train.size());
  }
  write_text((dir / "varmap.csv").string(), map_csv(vm, cfg.world.image_size / cfg.world.patch));
  write_text((dir / "config.json").string(), to_text(cfg));
  print_rows(rows);
}

void cmd_train_decoder(ExperimentConfig cfg) {
  if (cfg.world.decoder_epochs == 0) cfg.world.decoder_epochs = 30;
  fs::create_directories(cfg.output);
  const auto world = build_world(cfg);
  const auto lat = model_space(world.train, cfg.backbone());
  DecoderConfig dc;
  dc.side = cfg.world.image_size / cfg.world.patch;
  dc.patch = cfg.world.patch;
  dc.dim = cfg.world.dim;
  dc.seed = derive_seed(cfg.model.seed, 9);
  DecoderTrainReport rep;
  auto dec = train_decoder(lat, world.train_images, dc, cfg.world.decoder_epochs, cfg.world.decoder_lr, &rep);
  const fs::path dir(cfg.output);
  save_checkpoint(dec.params.tensors(), cfg, (dir / "decoder.bin").string(), cfg.world.decoder_epochs);
  const auto held = model_space(world.eval, cfg.backbone());
  double p = 0.0, s = 0.0;
  for (std::size_t i = 0; i < held.size(); ++i) {
    auto img = decode(held[i], dec);
    p += psnr(img, world.eval_images[i]);
    s += ssim(img, world.eval_images[i]);
  }
  std::vector<MetricsRow> rows = {metrics_row(cfg, "decoder_l1_baseline", rep.baseline_l1),
                                  metrics_row(cfg, "decoder_l1_final", rep.final_l1),
                                  metrics_row(cfg, "recon_psnr", p / static_cast<double>(held.size())),
                                  metrics_row(cfg, "recon_ssim", s / static_cast<double>(held.size()))};
  write_text((dir / "decoder_metrics.csv").string(), metrics_csv(rows));
  print_rows(rows);
}

void cmd_train(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.output);
  const fs::path dir(cfg.output);
  write_text((dir / "config.json").string(), to_text(cfg));
  const auto world = build_world(cfg);
  const auto model = train_model(cfg, world, log_line, (dir / "checkpoint.bin").string());
  save_checkpoint(model.tensors(), cfg, (dir / "checkpoint.bin").string(), model.steps_done);
  write_text((dir / "loss.csv").string(), loss_csv(cfg.name, model.curve));
}

TrainedModel load_model(const std::string& path) {
  auto ck = load_checkpoint(path);
  const auto cfg = ck.config();
  auto m = init_model(cfg);
  restore_params(m.backbone.params, ck);
  restore_params(m.head.params, ck);
  m.steps_done = static_cast<int>(ck.step);
  return m;
}

void cmd_sample(const std::string& dir) {
  const fs::path d(dir);
  auto ck = load_checkpoint((d / "checkpoint.bin").string());
  const auto cfg = ck.config();
  const auto model = load_model((d / "checkpoint.bin").string());
  save_samples(generate_samples(cfg, model), cfg, (d / "samples.bin").string());
}

void cmd_eval(const std::string& dir) {
  const fs::path d(dir);
  const auto samples = load_samples((d / "samples.bin").string());
  const auto cfg = load_checkpoint((d / "samples.bin").string()).config();
  const auto world = build_world(cfg);
  auto ev = evaluate(cfg, world, samples);
  write_text((d / "metrics.csv").string(), metrics_csv(ev.rows));
  if (!ev.drift.values.empty()) write_text((d / "drift.csv").string(), drift_csv(cfg.name, ev.drift));
  write_text((d / "varmap.csv").string(), map_csv(ev.var_map, cfg.world.image_size / cfg.world.patch));
  print_rows(ev.rows);
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"arlab: autoregressive generation over frozen-representation token grids"};
  app.require_subcommand(1);
  Common c;
  auto* calibrate = app.add_subcommand("calibrate", "calibrate the world and report token statistics");
  auto* train_decoder_cmd = app.add_subcommand("train-decoder", "train the pixel decoder on the world's latents");
  auto* train = app.add_subcommand("train", "train backbone and head; writes checkpoint.bin and loss.csv");
  auto* run = app.add_subcommand("run", "train, sample and evaluate in one go");
  auto* sweep = app.add_subcommand("sweep", "noise-level sweep over sweep.alphas x sweep.seeds");
  auto* grid = app.add_subcommand("grid", "{norm} x {noise} grid over sweep.seeds");
  for (auto* cmd : {calibrate, train_decoder_cmd, train, run}) add_common(cmd, c);
  for (auto* cmd : {sweep, grid}) add_common(cmd, c, true);

  std::string dir;
  auto* sample = app.add_subcommand("sample", "generate from <dir>/checkpoint.bin into <dir>/samples.bin");
  auto* eval = app.add_subcommand("eval", "score <dir>/samples.bin into <dir>/metrics.csv");
  for (auto* cmd : {sample, eval}) cmd->add_option("--out", dir, "run directory")->required();

  std::string csv, kind, svg, metric;
  auto* plot = app.add_subcommand("plot", "render a CSV as SVG");
  plot->add_option("--csv", csv, "input CSV")->required();
  plot->add_option("--kind", kind, "loss-curve | sweep-curve | drift-curve | heatmap")->required();
  plot->add_option("--out", svg, "output SVG path")->required();
  plot->add_option("--metric", metric, "sweep-curve: plot only this metric");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*calibrate) cmd_calibrate(resolve(c));
    if (*train_decoder_cmd) cmd_train_decoder(resolve(c));
    if (*train) cmd_train(resolve(c));
    if (*run) print_rows(run_experiment(resolve(c), resolve(c).output, log_line).rows);
    if (*sweep) {
      const auto cfg = resolve(c);
      ablation_noise_sweep(cfg, cfg.output, worker_count(), c.cell, log_line);
    }
    if (*grid) {
      const auto cfg = resolve(c);
      run_grid(cfg, cfg.output, worker_count(), c.cell, log_line);
    }
    if (*sample) cmd_sample(dir);
    if (*eval) cmd_eval(dir);
    if (*plot) emit_plot(csv, plot_kind_from_string(kind), svg, metric);
  } catch (const ParseError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
