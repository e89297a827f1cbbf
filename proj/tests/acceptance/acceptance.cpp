// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one PASS/FAIL line per criterion on stdout, progress on
// stderr. Trend criteria train the full desk-scale grids (about an hour on
// one core); finished cells are reused when their directory holds the same
// config, since every run is deterministic.
#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <set>
#include <sstream>

#include "arlab/core/alloc.hpp"
#include "arlab/experiment/plot.hpp"
#include "arlab/experiment/runner.hpp"
#include "support/primitive_gradcheck.hpp"
#include "support/toy_heads.hpp"

using namespace arlab;
using Clock = std::chrono::steady_clock;

namespace {

struct Options {
  std::string cli;
  std::string configs;
  std::string work;
  std::set<int> only;
  int workers = 1;
};

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
  return buf;
}

void progress(const std::string& s) { std::cerr << s << std::endl; }

// ---- 1 ----

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  int checks = 0, failed = 0;
  std::string worst;
  for (std::uint64_t draw = 0; draw < 20; ++draw) {
    for (auto& c : test_support::primitive_cases(1000 + draw)) {
      auto rep = grad_check<double>(c.fn, c.params);
      ++checks;
      if (!rep.passed) {
        ++failed;
        worst = c.name + " draw " + std::to_string(draw) + " rel " + num(rep.worst);
      }
    }
    for (bool pre : {false, true}) {
      DenoiserConfig cfg{.dim = 3, .cond_dim = 4, .width = 16, .blocks = 2, .time_features = 8, .seed = 100 + draw};
      cfg.precondition = pre;
      auto head = make_denoiser<double>(cfg);
      auto sch = make_schedule(1000);
      Rng rng(derive_seed(draw, 1));
      auto x = Tensor::uniform({5, 3}, rng, -1.0, 1.0);
      auto batch = draw_diffusion_batch(x, sch, rng, 2);
      ParamStore<double> params = head.params;
      params.add("z", BasicTensor<double>::uniform({5, 4}, rng, -1.0, 1.0));
      auto fn = [&](Tape<double>& tape, const ParamStore<double>& p) {
        DenoiserParams<double> h{cfg, {}};
        for (const auto& [n, t] : p.tensors())
          if (n != "z") h.params.add(n, t);
        return diffusion_loss(tape, h, sch, batch, p.var(tape, "z"));
      };
      auto rep = grad_check<double>(fn, params);
      ++checks;
      if (!rep.passed) {
        ++failed;
        worst = "diffusion_loss draw " + std::to_string(draw) + " rel " + num(rep.worst);
      }
    }
  }
  const double secs = seconds_since(t0);
  return {failed == 0 && secs < 60.0, std::to_string(checks - failed) + "/" + std::to_string(checks) +
                                          " checks at rel 1e-4 over 20 draws, " + num(secs, 3) + " s" +
                                          (worst.empty() ? "" : "; failing: " + worst)};
}

// ---- 2 ----

Outcome normalization_invariant() {
  std::vector<LatentCorpus> corpora;
  const auto calib = make_image_corpus(41, 500, 32);
  const auto imgs = make_image_corpus(42, 200, 32);
  for (const auto& p : known_profiles())
    for (int d : {8, 64})
      corpora.push_back(encode_corpus(imgs, calibrate_profile(p.name, make_encoder_config(d, 4), calib)));
  Rng rng(5);
  LatentCorpus wild;
  for (int i = 0; i < 100; ++i) {
    LatentGrid g(4, 16);
    for (int t = 0; t < g.tokens(); ++t) {
      const double s = std::exp(0.75 * rng.normal()), m = 2.0 * rng.normal();
      for (auto& v : g.row(t)) v = static_cast<float>(m + s * rng.normal());
    }
    wild.push_back(std::move(g));
  }
  corpora.push_back(std::move(wild));
  // float32 storage: the absolute round trip stays under 1e-5 only while
  // |x| is below about 64, so the scales here stay in that range
  double worst_b = 0.0, worst_c = 0.0, worst_rt = 0.0, largest = 0.0;
  for (const auto& c : corpora) {
    const auto s = summary_stats(normalize_corpus(c));
    worst_b = std::max(worst_b, std::abs(s.b - 1.0));
    worst_c = std::max(worst_c, s.c);
    for (const auto& g : c) {
      auto [n, rec] = normalize_tokens(g);
      const auto back = denormalize_tokens(n, rec);
      for (std::size_t i = 0; i < g.data().size(); ++i) {
        worst_rt = std::max(worst_rt, std::abs(static_cast<double>(back.data()[i]) - g.data()[i]));
        largest = std::max(largest, static_cast<double>(std::abs(g.data()[i])));
      }
    }
  }
  return {worst_b <= 1e-5 && worst_c < 1e-10 && worst_rt < 1e-5,
          std::to_string(corpora.size()) + " corpora: max |b-1| " + num(worst_b) + ", max c " + num(worst_c) +
              ", max round-trip error " + num(worst_rt) + " (largest |x| " + num(largest, 3) + ")"};
}

// ---- 3 ----

Outcome perturbation_calibration() {
  Rng rng(9);
  LatentGrid g(4, 64);
  for (auto& v : g.data()) v = static_cast<float>(rng.normal());
  const double n_d = static_cast<double>(g.tokens() * g.dim());
  std::string detail;
  bool ok = true;
  for (double alpha : {0.05, 0.1, 0.3}) {
    double energy = 0.0;
    for (int r = 0; r < 10000; ++r) {
      const auto p = perturb_tokens(g, alpha, derive_seed(1234, r));
      double e = 0.0;
      for (std::size_t i = 0; i < g.data().size(); ++i) {
        const double dlt = static_cast<double>(p.data()[i]) - g.data()[i];
        e += dlt * dlt;
      }
      energy += e / n_d;
    }
    energy /= 10000.0;
    const double ratio = energy / (alpha * alpha);
    ok = ok && std::abs(ratio - 1.0) <= 0.03;
    detail += "a=" + num(alpha) + " ratio " + num(ratio, 5) + "; ";
  }
  bool identity = perturb_tokens(g, 0.0, 77) == g;
  auto copy = g.data();
  std::vector<float> buf(copy.begin(), copy.end());
  Rng r0(3);
  perturb_in_place(buf, 0.0, r0);
  identity = identity && std::equal(buf.begin(), buf.end(), g.data().begin());
  return {ok && identity, detail + (identity ? "alpha=0 bit-exact" : "alpha=0 changed the tokens")};
}

// ---- 4 ----

Outcome table_calibration() {
  const auto t0 = Clock::now();
  const auto calib = make_image_corpus(41, 500, 32);
  bool ok = true;
  std::string detail;
  for (int d : {8, 64}) {
    std::map<std::string, double> c;
    double worst = 0.0;
    std::string worst_name;
    for (const auto& p : known_profiles()) {
      const auto res = calibrate_profile_detailed(p, make_encoder_config(d, 4), calib);
      c[p.name] = res.achieved.c;
      for (auto [got, want, stat] : {std::tuple{res.achieved.a, p.a, "a"}, std::tuple{res.achieved.b, p.b, "b"}}) {
        const double rel = std::abs(got - want) / std::abs(want);
        if (rel > worst) worst = rel, worst_name = p.name + "(" + stat + ")";
      }
    }
    const bool order = c["va-vae"] > c["vae"] && c["vae"] > c["siglip2"] && c["siglip2"] >= c["mae"] &&
                       c["mae"] > c["dinov2"];
    ok = ok && worst <= 0.10 && order;
    detail += "d=" + std::to_string(d) + ": worst rel error " + num(worst) + " at " + worst_name + ", c ordering " +
              (order ? "kept" : "BROKEN") + "; ";
  }
  const double secs = seconds_since(t0);
  return {ok && secs < 120.0, detail + num(secs, 3) + " s"};
}

// ---- 5 ----

FeatureRows gaussian_rows(std::uint64_t seed, int rows, int cols, double shift = 0.0, double scale = 1.0) {
  Rng rng(seed);
  FeatureRows f(rows, cols);
  for (auto& v : f.data) v = shift + scale * rng.normal();
  return f;
}

Outcome frechet_correctness() {
  auto a = gaussian_rows(1, 500, 6, 0.0, 1.0);
  for (std::int64_t r = 0; r < a.rows; ++r) a.at(r, 1) += 0.7 * a.at(r, 0);
  const double same = frechet_distance(a, a);
  const double one_d = frechet_distance(gaussian_rows(2, 100000, 1), gaussian_rows(3, 100000, 1, 1.0));
  auto b = gaussian_rows(4, 500, 6, 0.4, 1.3);
  Rng rng(5);
  Eigen::MatrixXd m(6, 6);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) m(i, j) = rng.normal();
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(m).householderQ();
  auto rotate = [&](const FeatureRows& x) {
    FeatureRows out(x.rows, x.cols);
    for (std::int64_t r = 0; r < x.rows; ++r)
      for (std::int64_t i = 0; i < x.cols; ++i)
        for (std::int64_t j = 0; j < x.cols; ++j) out.at(r, i) += q(i, j) * x.at(r, j);
    return out;
  };
  const double rot_gap = std::abs(frechet_distance(rotate(a), rotate(b)) - frechet_distance(a, b));
  return {std::abs(same) <= 1e-6 && std::abs(one_d - 1.0) <= 0.05 && rot_gap <= 1e-5,
          "identical " + num(same) + ", N(0,1) vs N(1,1) " + num(one_d, 5) + ", rotation gap " + num(rot_gap)};
}

// ---- 6 ----

Outcome sampler_fidelity() {
  using namespace test_support;
  auto toy = train_toy_head(ToyTarget::gaussian, 4);
  bool ok = true;
  std::string detail;
  for (int c : {0, 1, 2, 3}) {
    const auto m = sample_moments(toy, c, 1000, 1000, 50 + c);
    const auto want = toy_mean(c);
    double worst = 0.0;
    for (int k = 0; k < 2; ++k) {
      worst = std::max(worst, std::abs(m.mean[k] - want[k]) / std::abs(want[k]));
      worst = std::max(worst, std::abs(m.var[k] - 0.01) / 0.01);
    }
    ok = ok && worst <= 0.10;
    detail += "class " + std::to_string(c) + " worst rel " + num(worst, 3) + "; ";
  }
  auto mix = train_toy_head(ToyTarget::mixture, 5);
  const double frac = sample_moments(mix, 0, 1000, 1000, 60).positive_fraction;
  ok = ok && frac >= 0.3 && frac <= 0.7;
  return {ok, detail + "mixture mode share " + num(frac, 3)};
}

// ---- trend runs ----

class Runs {
 public:
  Runs(Options opt) : opt_(std::move(opt)) {}

  ExperimentConfig config(const std::string& file) const {
    return load_config((fs::path(opt_.configs) / file).string());
  }

  /// Metrics of each cell, running the ones without a finished directory.
  std::vector<std::vector<MetricsRow>> rows(const std::string& group, const std::vector<Cell>& cells) {
    std::vector<std::vector<MetricsRow>> out(cells.size());
    std::vector<std::size_t> todo;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const auto dir = fs::path(opt_.work) / group / cells[i].id;
      if (finished(dir, cells[i].cfg))
        out[i] = parse_metrics(read_text((dir / "metrics.csv").string()));
      else
        todo.push_back(i);
    }
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::exception_ptr error;
    auto worker = [&] {
      for (std::size_t k = next++; k < todo.size(); k = next++) {
        const auto i = todo[k];
        const auto dir = fs::path(opt_.work) / group / cells[i].id;
        try {
          fs::remove(dir / "metrics.csv");
          const auto t0 = Clock::now();
          auto res = run_experiment(cells[i].cfg, dir.string());
          const double secs = seconds_since(t0);
          std::lock_guard<std::mutex> lock(mu);
          out[i] = res.rows;
          run_seconds_ = std::max(run_seconds_, secs);
          progress(group + "/" + cells[i].id + ": " + num(secs, 3) + " s, gfid_proxy " +
                   num(metric_value(res.rows, "gfid_proxy")) + ", loss " +
                   num(metric_value(res.rows, "loss_smoothed_final")));
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          error = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    for (int w = 1; w < std::min<int>(opt_.workers, static_cast<int>(todo.size())); ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
    return out;
  }

  /// Longest single run executed by this process (0 when all were reused).
  double longest_run() const { return run_seconds_; }

  const std::vector<std::vector<MetricsRow>>& grid(const std::string& file) {
    auto it = grids_.find(file);
    if (it == grids_.end()) it = grids_.emplace(file, rows(fs::path(file).stem().string(), grid_cells(config(file)))).first;
    return it->second;
  }

 private:
  static bool finished(const fs::path& dir, const ExperimentConfig& cfg) {
    if (!fs::exists(dir / "metrics.csv") || !fs::exists(dir / "config.json")) return false;
    return read_text((dir / "config.json").string()) == to_text(cfg);
  }

  Options opt_;
  double run_seconds_ = 0.0;
  std::map<std::string, std::vector<std::vector<MetricsRow>>> grids_;
};

// Grid cells are strategy-major: baseline, norm, noise, norm_noise, each
// over the config's seeds.
struct GridView {
  const std::vector<std::vector<MetricsRow>>& rows;
  std::size_t seeds;

  double value(int strategy, std::size_t seed, const std::string& metric) const {
    return metric_value(rows[static_cast<std::size_t>(strategy) * seeds + seed], metric);
  }
};

enum Strategy { kBaseline = 0, kNorm = 1, kNoise = 2, kNormNoise = 3 };

Outcome ordering(const GridView& g) {
  int wins = 0;
  std::string detail;
  for (std::size_t s = 0; s < g.seeds; ++s) {
    const double b = g.value(kBaseline, s, "gfid_proxy"), n = g.value(kNoise, s, "gfid_proxy"),
                 nn = g.value(kNormNoise, s, "gfid_proxy");
    const bool ok = b > n && n >= nn;
    wins += ok;
    detail += "seed " + std::to_string(s + 1) + ": " + num(b) + " / " + num(n) + " / " + num(nn) +
              (ok ? " ok" : " no") + "; ";
  }
  return {wins * 3 >= static_cast<int>(g.seeds) * 2,
          std::to_string(wins) + "/" + std::to_string(g.seeds) +
              " seeds with baseline > +Noise >= +Norm+Noise (gfid_proxy " + detail.substr(0, detail.size() - 2) + ")"};
}

Outcome loss_trend(Runs& runs) {
  const auto cfg = runs.config("siglip2_d64.json");
  GridView g{runs.grid("siglip2_d64.json"), cfg.sweep.seeds.size()};
  int wins = 0;
  std::string detail;
  for (std::size_t s = 0; s < g.seeds; ++s) {
    const double base = g.value(kBaseline, s, "loss_smoothed_final"), norm = g.value(kNorm, s, "loss_smoothed_final");
    wins += norm < base;
    detail += "seed " + std::to_string(s + 1) + ": " + num(base, 5) + " vs " + num(norm, 5) + "; ";
  }
  const double longest = runs.longest_run();
  return {wins * 3 >= static_cast<int>(g.seeds) * 2 && longest < 600.0,
          std::to_string(wins) + "/" + std::to_string(g.seeds) + " seeds with lower smoothed loss at step " +
              std::to_string(cfg.training.steps) + " under normalization (without vs with: " + detail +
              "longest run " + (longest > 0 ? num(longest, 3) + " s" : "reused") + ")"};
}

Outcome sweep_trend(Runs& runs) {
  const auto base = runs.config("siglip2_d64.json");
  const auto& grid = runs.grid("siglip2_d64.json");
  const auto& alphas = base.sweep.alphas;
  const std::size_t seeds = base.sweep.seeds.size();
  // alpha = 0 and alpha = grid_alpha are the grid's baseline and +Noise cells
  std::vector<Cell> extra;
  for (const auto& c : sweep_cells(base))
    if (c.cfg.training.alpha != 0.0 && c.cfg.training.alpha != base.sweep.grid_alpha) extra.push_back(c);
  const auto extra_rows = runs.rows("siglip2_d64_sweep", extra);
  int wins = 0;
  std::string detail;
  for (std::size_t s = 0; s < seeds; ++s) {
    std::vector<double> g;
    for (double a : alphas) {
      if (a == 0.0) {
        g.push_back(metric_value(grid[kBaseline * seeds + s], "gfid_proxy"));
      } else if (a == base.sweep.grid_alpha) {
        g.push_back(metric_value(grid[kNoise * seeds + s], "gfid_proxy"));
      } else {
        std::size_t k = 0;
        while (extra[k].cfg.training.alpha != a || extra[k].cfg.training.seed != base.sweep.seeds[s]) ++k;
        g.push_back(metric_value(extra_rows[k], "gfid_proxy"));
      }
    }
    const auto best = static_cast<std::size_t>(std::min_element(g.begin(), g.end()) - g.begin());
    const bool interior = best != 0 && best + 1 != g.size();
    wins += interior;
    detail += "seed " + std::to_string(base.sweep.seeds[s]) + " argmin alpha " + num(alphas[best]) + " [";
    for (std::size_t i = 0; i < g.size(); ++i) detail += (i ? " " : "") + num(g[i]);
    detail += "]; ";
  }
  return {wins * 3 >= static_cast<int>(seeds) * 2,
          std::to_string(wins) + "/" + std::to_string(seeds) + " seeds with an interior minimum (" +
              detail.substr(0, detail.size() - 2) + ")"};
}

// Relative drift-area reduction of +Noise over baseline, per seed.
std::vector<double> drift_gaps(const GridView& g) {
  std::vector<double> out;
  for (std::size_t s = 0; s < g.seeds; ++s) {
    const double a0 = g.value(kBaseline, s, "drift_auc"), a1 = g.value(kNoise, s, "drift_auc");
    out.push_back((a0 - a1) / a0);
  }
  return out;
}

Outcome exposure_trend(Runs& runs) {
  const auto cfg64 = runs.config("siglip2_d64.json");
  const auto gap64 = drift_gaps({runs.grid("siglip2_d64.json"), cfg64.sweep.seeds.size()});
  // the d=8 world only needs the baseline and +Noise cells
  const auto cfg8 = runs.config("siglip2_d8.json");
  auto cells8 = grid_cells(cfg8);
  const std::size_t seeds8 = cfg8.sweep.seeds.size();
  std::vector<Cell> needed(cells8.begin(), cells8.begin() + static_cast<std::ptrdiff_t>(seeds8));
  needed.insert(needed.end(), cells8.begin() + static_cast<std::ptrdiff_t>(kNoise * seeds8),
                cells8.begin() + static_cast<std::ptrdiff_t>((kNoise + 1) * seeds8));
  auto r8 = runs.rows("siglip2_d8", needed);
  std::vector<std::vector<MetricsRow>> full8(cells8.size());
  for (std::size_t s = 0; s < seeds8; ++s) {
    full8[s] = r8[s];
    full8[kNoise * seeds8 + s] = r8[seeds8 + s];
  }
  const auto gap8 = drift_gaps({full8, seeds8});
  int wins = 0;
  for (double g : gap64) wins += g > 0.0;
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  auto list = [](const std::vector<double>& v) {
    std::string s;
    for (double x : v) s += (s.empty() ? "" : " ") + num(x, 3);
    return s;
  };
  const bool amplified = mean(gap8) < mean(gap64);
  return {wins * 3 >= static_cast<int>(gap64.size()) * 2 && amplified,
          std::to_string(wins) + "/" + std::to_string(gap64.size()) +
              " seeds with lower drift area under noise on d=64; relative gap d=64 [" + list(gap64) + "] mean " +
              num(mean(gap64), 3) + " vs d=8 [" + list(gap8) + "] mean " + num(mean(gap8), 3)};
}

// ---- 12 ----

bool same_files(const fs::path& a, const fs::path& b, std::string& why) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++n;
    const auto other = b / e.path().filename();
    if (!fs::exists(other) || read_text(e.path().string()) != read_text(other.string())) {
      why = e.path().filename().string() + " differs";
      return false;
    }
  }
  if (n == 0) why = "no files";
  return n > 0;
}

int sh(const std::string& cmd) {
  progress("$ " + cmd);
  return std::system((cmd + " >/dev/null 2>&1").c_str());
}

Outcome baseline_and_determinism(const Options& opt) {
  std::vector<std::string> problems;
  // hand-written plain pipeline vs train_step with alpha = 0, norm off
  {
    const auto corpus = encode_corpus(make_image_corpus(7, 8, 32),
                                      calibrate_profile("siglip2", make_encoder_config(8, 3), make_image_corpus(6, 500, 32)));
    BackboneConfig bc;
    bc.depth = 2;
    bc.width = 32;
    bc.dim = 8;
    bc.seed = 4;
    auto bb1 = make_backbone(bc), bb2 = bb1;
    auto h1 = make_denoiser<float>({.dim = 8, .cond_dim = bc.cond_dim(), .width = 32, .blocks = 2, .seed = 5}), h2 = h1;
    auto s1 = make_trainer_state(bb1, h1, {}), s2 = s1;
    auto sch = make_schedule(1000);
    const int labels[4] = {0, 3, 5, 7};
    bool same = true;
    for (int step = 0; step < 5; ++step) {
      std::span<const LatentGrid> batch(corpus.data() + (step % 2) * 4, 4);
      const auto seed = derive_seed(11, static_cast<std::uint64_t>(step));
      const double l1 = train_step(batch, labels, bb1, h1, sch, s1, seed);
      Rng rng(seed);
      const Tensor x = pack_tokens(batch, false);
      Tape<float> tape;
      auto z = causal_forward(tape, bb2, x, labels);
      Rng diff_rng(rng.next_seed());
      auto loss = diffusion_loss(tape, h2, sch, draw_diffusion_batch(x, sch, diff_rng, 4), z);
      auto grads = tape.backward(loss);
      clip_grad_norm(grads, 1.0);
      adamw_step(bb2.params, gradients_for(bb2.params, grads), s2.backbone);
      adamw_step(h2.params, gradients_for(h2.params, grads), s2.head);
      same = same && l1 == loss.value()[0] && bb1.params == bb2.params && h1.params == h2.params;
    }
    const int gl[3] = {1, 2, 3};
    same = same && generate_causal_batch(gl, bb1, h1, sch, 20, 3) == generate_causal_batch(gl, bb2, h2, sch, 20, 3);
    if (!same) problems.push_back("alpha=0 step differs from the plain pipeline");
  }
  // an alpha = {0} sweep cell reproduces the baseline run
  const auto work = fs::path(opt.work) / "determinism";
  fs::remove_all(work);
  auto minimal = load_config((fs::path(opt.configs) / "minimal.json").string());
  {
    auto base = minimal;
    base.sweep.alphas = {0.0};
    base.sweep.seeds = {minimal.training.seed};
    auto sweep = ablation_noise_sweep(base, (work / "sweep").string());
    auto single = run_experiment(minimal, (work / "single").string());
    bool same = sweep[0].rows.size() == single.rows.size();
    for (std::size_t i = 0; same && i < single.rows.size(); ++i)
      same = sweep[0].rows[i].metric == single.rows[i].metric && sweep[0].rows[i].value == single.rows[i].value;
    if (!same) problems.push_back("alpha={0} sweep differs from the baseline run");
  }
  // CLI verbs, each twice into the same place
  const std::string cli = "\"" + opt.cli + "\"";
  const std::string cfg = "\"" + (fs::path(opt.configs) / "minimal.json").string() + "\"";
  const auto run_dir = work / "cli_run", snap = work / "cli_run_first";
  auto twice = [&](const std::string& label, const std::string& cmd, const fs::path& dir) {
    if (sh(cmd) != 0) return problems.push_back(label + " failed");
    fs::remove_all(snap);
    fs::copy(dir, snap, fs::copy_options::recursive);
    if (sh(cmd) != 0) return problems.push_back(label + " failed on rerun");
    std::string why;
    if (!same_files(snap, dir, why)) problems.push_back(label + ": " + why);
  };
  twice("run", cli + " run --config " + cfg + " --out \"" + run_dir.string() + "\"", run_dir);
  const auto run_metrics = parse_metrics(read_text((run_dir / "metrics.csv").string()));
  const auto run_samples = read_text((run_dir / "samples.bin").string());
  twice("sample", cli + " sample --out \"" + run_dir.string() + "\"", run_dir);
  if (read_text((run_dir / "samples.bin").string()) != run_samples) problems.push_back("sample differs from run");
  twice("eval", cli + " eval --out \"" + run_dir.string() + "\"", run_dir);
  for (const auto& r : parse_metrics(read_text((run_dir / "metrics.csv").string())))
    if (r.value != metric_value(run_metrics, r.metric)) problems.push_back("eval differs from run on " + r.metric);
  const auto seed_dir = work / "cli_seed";
  twice("run --seed-override", cli + " run --config " + cfg + " --seed-override 2 --out \"" + seed_dir.string() + "\"",
        seed_dir);
  if (read_text((seed_dir / "metrics.csv").string()) == read_text((run_dir / "metrics.csv").string()))
    problems.push_back("--seed-override had no effect");
  const auto cal_dir = work / "cli_calibrate";
  twice("calibrate", cli + " calibrate --config " + cfg + " --out \"" + cal_dir.string() + "\"", cal_dir);
  const auto grid_dir = work / "cli_grid";
  twice("grid --cell", cli + " grid --config " + cfg + " --cell 5 --out \"" + grid_dir.string() + "\"", grid_dir);
  if (!fs::exists(grid_dir / "norm_s3" / "metrics.csv")) problems.push_back("grid --cell 5 did not run norm_s3");
  const auto plot_dir = work / "cli_plot";
  fs::create_directories(plot_dir);
  twice("plot", cli + " plot --kind loss-curve --csv \"" + (run_dir / "loss.csv").string() + "\" --out \"" +
                    (plot_dir / "loss.svg").string() + "\"",
        plot_dir);
  if (problems.empty()) return {true, "plain pipeline bit-identical over 5 steps and generation; alpha={0} sweep = "
                                      "baseline; run, sample, eval, seed override, calibrate, grid --cell and plot "
                                      "byte-identical on rerun"};
  std::string s;
  for (const auto& p : problems) s += (s.empty() ? "" : "; ") + p;
  return {false, s};
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  Options opt;
  CLI::App app{"acceptance criteria"};
  app.add_option("--cli", opt.cli, "path to the arlab binary")->required();
  app.add_option("--configs", opt.configs, "directory holding the shipped configs")->required();
  app.add_option("--work", opt.work, "directory for run outputs (reused between invocations)")->required();
  app.add_option("--only", opt.only, "criteria to evaluate (default: all)");
  CLI11_PARSE(app, argc, argv);
  try {
    opt.workers = worker_count();
  } catch (const std::exception& e) {
    std::cerr << e.what() << '\n';
    return 2;
  }
  fs::create_directories(opt.work);

  Runs runs(opt);
  struct Criterion {
    int id;
    const char* title;
    std::function<Outcome()> check;
  };
  const std::vector<Criterion> criteria = {
      {1, "gradient suite", gradient_suite},
      {2, "normalization invariant", normalization_invariant},
      {3, "perturbation calibration", perturbation_calibration},
      {4, "profile calibration", table_calibration},
      {5, "Frechet proxy correctness", frechet_correctness},
      {6, "sampler fidelity", sampler_fidelity},
      {7, "normalization lowers training loss (d=64)", [&] { return loss_trend(runs); }},
      {8, "strategy ordering, causal (d=64 siglip2)",
       [&] { return ordering({runs.grid("siglip2_d64.json"), runs.config("siglip2_d64.json").sweep.seeds.size()}); }},
      {9, "noise sweep has an interior optimum", [&] { return sweep_trend(runs); }},
      {10, "strategy ordering, masked (d=64 siglip2)",
       [&] {
         return ordering(
             {runs.grid("siglip2_d64_masked.json"), runs.config("siglip2_d64_masked.json").sweep.seeds.size()});
       }},
      {11, "noise shrinks exposure drift, more so at d=64", [&] { return exposure_trend(runs); }},
      {12, "baseline equivalence and byte-reproducible CLI", [&] { return baseline_and_determinism(opt); }},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    if (!opt.only.empty() && !opt.only.count(c.id)) continue;
    progress("criterion " + std::to_string(c.id) + ": " + c.title);
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << c.id << " " << c.title << " | " << o.detail << " ["
              << num(seconds_since(t0), 3) << " s]" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
