// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration: JSON text with one object per section plus a
// run name and output directory. Every key is optional, unknown keys are
// errors.
#pragma once

#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "arlab/backbone/backbone.hpp"
#include "arlab/core/error.hpp"
#include "arlab/world/encoder.hpp"

namespace arlab {

struct WorldSection {
  std::string profile = "siglip2";
  int dim = 64;
  int image_size = 32;
  int patch = 8;
  int classes = kDefaultClasses;
  int calibration_images = 500;
  int train_images = 2048;
  int eval_images = 512;
  std::uint64_t seed = 1;          // image corpora
  std::uint64_t encoder_seed = 3;  // frozen projection
  int decoder_epochs = 0;          // 0 skips decoder training
  double decoder_lr = 2e-3;

  int tokens() const { return (image_size / patch) * (image_size / patch); }
  friend bool operator==(const WorldSection&, const WorldSection&) = default;
};

struct ModelSection {
  int depth = 2;
  int width = 64;
  int heads = 4;
  std::string mode = "causal";
  int head_width = 64;
  int head_blocks = 3;
  std::string schedule = "cosine";
  int schedule_steps = 1000;
  bool shift = false;
  int d_base = 8;
  std::uint64_t seed = 1;
  friend bool operator==(const ModelSection&, const ModelSection&) = default;
};

struct TrainingSection {
  int steps = 2000;
  int batch = 16;
  double lr = 1e-3;
  double weight_decay = 0.02;
  double alpha = 0.0;
  bool normalize = false;
  double grad_clip = 1.0;
  int diffusion_multiplicity = 4;
  int log_every = 50;
  std::uint64_t seed = 1;
  friend bool operator==(const TrainingSection&, const TrainingSection&) = default;
};

struct GenerationSection {
  int samples_per_class = 64;
  int steps = 50;
  int mask_rounds = 4;
  std::uint64_t seed = 1;
  friend bool operator==(const GenerationSection&, const GenerationSection&) = default;
};

struct EvalSection {
  std::vector<std::string> metrics = {"gfid", "precision", "recall", "drift"};
  int k = 3;
  int proxy_features = 32;
  friend bool operator==(const EvalSection&, const EvalSection&) = default;
};

/// Grid and sweep layout: the noise sweep runs every alpha, the grid
/// crosses {norm off, on} x {0, grid_alpha}; both repeat over seeds.
struct SweepSection {
  std::vector<double> alphas = {0.0, 0.05, 0.1, 0.2, 0.3, 0.5};
  double grid_alpha = 0.1;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  friend bool operator==(const SweepSection&, const SweepSection&) = default;
};

struct ExperimentConfig {
  std::string name = "run";
  WorldSection world;
  ModelSection model;
  TrainingSection training;
  GenerationSection generation;
  EvalSection eval;
  SweepSection sweep;
  std::string output = "runs/run";

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;

  /// Every seed in one place, in the order the runner consumes them.
  void override_seed(std::uint64_t s) {
    world.seed = s;
    model.seed = s;
    training.seed = s;
    generation.seed = s;
  }

  BackboneConfig backbone() const {
    BackboneConfig b;
    b.depth = model.depth;
    b.width = model.width;
    b.heads = model.heads;
    b.mode = ar_mode_from_string(model.mode);
    b.dim = world.dim;
    b.tokens = world.tokens();
    b.classes = world.classes;
    b.alpha = training.alpha;
    b.normalize = training.normalize;
    b.seed = model.seed;
    return b;
  }
};

inline const std::set<std::string>& known_metrics() {
  static const std::set<std::string> m = {"gfid", "precision", "recall", "drift", "token_stats"};
  return m;
}

namespace detail {

using json = nlohmann::ordered_json;

class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ParseError(path_, "expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    const std::string where = child(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ParseError(where, "expected true or false");
      } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer()) throw ParseError(where, "expected an integer");
        if constexpr (std::is_unsigned_v<T>)
          if (it->is_number_integer() && !it->is_number_unsigned() && it->template get<long long>() < 0)
            throw ParseError(where, "expected a non-negative integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw ParseError(where, "expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!it->is_string()) throw ParseError(where, "expected a string");
      }
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ParseError(where, e.what());
    }
  }

  Section sub(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    static const json empty = json::object();
    return Section(it == j_.end() ? empty : *it, child(key));
  }

  /// Throws on the first key that no get()/sub() asked for.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ParseError(child(it.key()), "unknown key");
  }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void require(bool ok, const std::string& path, const std::string& what) {
  if (!ok) throw ParseError(path, what);
}

}  // namespace detail

/// Range and cross-field checks; field paths name the offending key.
inline void validate(const ExperimentConfig& c) {
  using detail::require;
  const auto& w = c.world;
  require(c.name.find_first_of(",\n\"") == std::string::npos, "name", "must not contain commas, quotes or newlines");
  try {
    profile_by_name(w.profile);
  } catch (const ContractError&) {
    throw ParseError("world.profile", "unknown profile " + w.profile);
  }
  require(w.dim >= 2, "world.dim", "must be >= 2");
  require(w.patch > 0 && w.image_size > 0 && w.image_size % w.patch == 0, "world.patch",
          "must divide world.image_size");
  require(w.classes >= 1, "world.classes", "must be >= 1");
  require(w.calibration_images >= 500, "world.calibration_images", "must be >= 500");
  require(w.train_images >= 1, "world.train_images", "must be >= 1");
  require(w.eval_images >= 2, "world.eval_images", "must be >= 2");
  require(w.decoder_epochs >= 0, "world.decoder_epochs", "must be >= 0");
  require(w.decoder_lr > 0, "world.decoder_lr", "must be > 0");
  const auto& m = c.model;
  require(m.depth >= 1, "model.depth", "must be >= 1");
  require(m.width >= 1 && m.heads >= 1 && m.width % m.heads == 0, "model.heads", "must divide model.width");
  require(m.mode == "causal" || m.mode == "masked", "model.mode", "must be causal or masked");
  require(m.head_width >= 1 && m.head_blocks >= 1, "model.head_width", "head width and blocks must be >= 1");
  require(m.schedule == "cosine", "model.schedule", "only cosine is supported");
  require(m.schedule_steps >= 1, "model.schedule_steps", "must be >= 1");
  require(m.d_base >= 1, "model.d_base", "must be >= 1");
  const auto& t = c.training;
  require(t.steps >= 0, "training.steps", "must be >= 0");
  require(t.batch >= 1, "training.batch", "must be >= 1");
  require(t.lr > 0, "training.lr", "must be > 0");
  require(t.weight_decay >= 0, "training.weight_decay", "must be >= 0");
  require(t.alpha >= 0, "training.alpha", "must be >= 0");
  require(t.diffusion_multiplicity >= 1, "training.diffusion_multiplicity", "must be >= 1");
  require(t.log_every >= 1, "training.log_every", "must be >= 1");
  const auto& g = c.generation;
  require(g.samples_per_class >= 1, "generation.samples_per_class", "must be >= 1");
  require(g.steps >= 1 && g.steps <= m.schedule_steps, "generation.steps", "must be in [1, model.schedule_steps]");
  require(g.mask_rounds >= 1 && g.mask_rounds <= w.tokens(), "generation.mask_rounds", "must be in [1, N]");
  const auto& e = c.eval;
  for (std::size_t i = 0; i < e.metrics.size(); ++i)
    require(known_metrics().count(e.metrics[i]) != 0, "eval.metrics[" + std::to_string(i) + "]",
            "unknown metric " + e.metrics[i]);
  require(e.k >= 1, "eval.k", "must be >= 1");
  require(e.proxy_features >= 1, "eval.proxy_features", "must be >= 1");
  require(!c.sweep.alphas.empty(), "sweep.alphas", "must not be empty");
  for (std::size_t i = 0; i < c.sweep.alphas.size(); ++i)
    require(c.sweep.alphas[i] >= 0, "sweep.alphas[" + std::to_string(i) + "]", "must be >= 0");
  require(c.sweep.grid_alpha > 0, "sweep.grid_alpha", "must be > 0");
  require(!c.sweep.seeds.empty(), "sweep.seeds", "must not be empty");
  require(!c.output.empty(), "output", "must not be empty");
}

inline ExperimentConfig parse_config(const std::string& text) {
  detail::json j;
  try {
    j = detail::json::parse(text);
  } catch (const detail::json::parse_error& e) {
    throw ParseError("", std::string("malformed config: ") + e.what());
  }
  ExperimentConfig c;
  detail::Section root(j, "");
  root.get("name", c.name);
  root.get("output", c.output);
  {
    auto s = root.sub("world");
    auto& w = c.world;
    s.get("profile", w.profile);
    s.get("dim", w.dim);
    s.get("image_size", w.image_size);
    s.get("patch", w.patch);
    s.get("classes", w.classes);
    s.get("calibration_images", w.calibration_images);
    s.get("train_images", w.train_images);
    s.get("eval_images", w.eval_images);
    s.get("seed", w.seed);
    s.get("encoder_seed", w.encoder_seed);
    s.get("decoder_epochs", w.decoder_epochs);
    s.get("decoder_lr", w.decoder_lr);
    s.finish();
  }
  {
    auto s = root.sub("model");
    auto& m = c.model;
    s.get("depth", m.depth);
    s.get("width", m.width);
    s.get("heads", m.heads);
    s.get("mode", m.mode);
    s.get("head_width", m.head_width);
    s.get("head_blocks", m.head_blocks);
    s.get("schedule", m.schedule);
    s.get("schedule_steps", m.schedule_steps);
    s.get("shift", m.shift);
    s.get("d_base", m.d_base);
    s.get("seed", m.seed);
    s.finish();
  }
  {
    auto s = root.sub("training");
    auto& t = c.training;
    s.get("steps", t.steps);
    s.get("batch", t.batch);
    s.get("lr", t.lr);
    s.get("weight_decay", t.weight_decay);
    s.get("alpha", t.alpha);
    s.get("normalize", t.normalize);
    s.get("grad_clip", t.grad_clip);
    s.get("diffusion_multiplicity", t.diffusion_multiplicity);
    s.get("log_every", t.log_every);
    s.get("seed", t.seed);
    s.finish();
  }
  {
    auto s = root.sub("generation");
    auto& g = c.generation;
    s.get("samples_per_class", g.samples_per_class);
    s.get("steps", g.steps);
    s.get("mask_rounds", g.mask_rounds);
    s.get("seed", g.seed);
    s.finish();
  }
  {
    auto s = root.sub("eval");
    auto& e = c.eval;
    s.get("metrics", e.metrics);
    s.get("k", e.k);
    s.get("proxy_features", e.proxy_features);
    s.finish();
  }
  {
    auto s = root.sub("sweep");
    s.get("alphas", c.sweep.alphas);
    s.get("grid_alpha", c.sweep.grid_alpha);
    s.get("seeds", c.sweep.seeds);
    s.finish();
  }
  root.finish();
  validate(c);
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

/// Canonical text form; parse_config(to_text(c)) == c.
inline std::string to_text(const ExperimentConfig& c) {
  detail::json j;
  j["name"] = c.name;
  const auto& w = c.world;
  j["world"] = {{"profile", w.profile},
                {"dim", w.dim},
                {"image_size", w.image_size},
                {"patch", w.patch},
                {"classes", w.classes},
                {"calibration_images", w.calibration_images},
                {"train_images", w.train_images},
                {"eval_images", w.eval_images},
                {"seed", w.seed},
                {"encoder_seed", w.encoder_seed},
                {"decoder_epochs", w.decoder_epochs},
                {"decoder_lr", w.decoder_lr}};
  const auto& m = c.model;
  j["model"] = {{"depth", m.depth},
                {"width", m.width},
                {"heads", m.heads},
                {"mode", m.mode},
                {"head_width", m.head_width},
                {"head_blocks", m.head_blocks},
                {"schedule", m.schedule},
                {"schedule_steps", m.schedule_steps},
                {"shift", m.shift},
                {"d_base", m.d_base},
                {"seed", m.seed}};
  const auto& t = c.training;
  j["training"] = {{"steps", t.steps},
                   {"batch", t.batch},
                   {"lr", t.lr},
                   {"weight_decay", t.weight_decay},
                   {"alpha", t.alpha},
                   {"normalize", t.normalize},
                   {"grad_clip", t.grad_clip},
                   {"diffusion_multiplicity", t.diffusion_multiplicity},
                   {"log_every", t.log_every},
                   {"seed", t.seed}};
  const auto& g = c.generation;
  j["generation"] = {{"samples_per_class", g.samples_per_class},
                     {"steps", g.steps},
                     {"mask_rounds", g.mask_rounds},
                     {"seed", g.seed}};
  j["eval"] = {{"metrics", c.eval.metrics}, {"k", c.eval.k}, {"proxy_features", c.eval.proxy_features}};
  j["sweep"] = {{"alphas", c.sweep.alphas}, {"grid_alpha", c.sweep.grid_alpha}, {"seeds", c.sweep.seeds}};
  j["output"] = c.output;
  return j.dump(2) + "\n";
}

}  // namespace arlab
