#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stochmatch/noise.hpp"
#include "stochmatch/stats.hpp"
#include "stochmatch/string_method.hpp"

namespace stochmatch {

inline constexpr const char* kVersion = "stochmatch 0.1.0";

enum class Command { match, image_match, sample, mean, infer, em };

inline const char* command_name(Command c) {
  switch (c) {
    case Command::match: return "match";
    case Command::image_match: return "image-match";
    case Command::sample: return "sample";
    case Command::mean: return "mean";
    case Command::infer: return "infer";
    case Command::em: return "em";
  }
  return "?";
}

struct NoiseSpec {
  NoiseBasis basis;
  bool pou_normalize = false;
};

// Fully resolved run description. One JSON document; unknown keys are
// rejected so that typos cannot silently drop a parameter.
struct RunConfig {
  Command command = Command::match;
  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 0;
  bool figures = true;
  nlohmann::json snapshot;

  // landmark / image problem
  std::filesystem::path source_csv, target_csv;
  std::filesystem::path source_image, target_image;
  double lambda = 1.0;
  double kernel_scale = 1.0;
  std::size_t n_t = 20;
  NoiseSpec noise;

  OptimizerConfig optimizer;

  // sample / infer
  std::filesystem::path template_csv, momentum_csv;
  std::size_t n_samples = 100;

  // mean / infer
  std::vector<std::filesystem::path> observations;
  std::filesystem::path init_csv;  // empty: start from the Euclidean mean
  double outer_epsilon = 0.5;
  std::size_t max_outer = 50;
  double outer_tol = 1e-5;

  InferenceSpec inference;

  // em
  std::size_t em_samples = 10;
  std::size_t em_iterations = 100;
};

namespace detail {

[[noreturn]] inline void config_error(const std::string& msg) {
  throw std::invalid_argument("config: " + msg);
}

inline void require_keys(const nlohmann::json& obj, const char* ctx,
                         std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) config_error(std::string(ctx) + " must be an object");
  for (const auto& item : obj.items()) {
    bool ok = false;
    for (const char* k : allowed)
      if (item.key() == k) {
        ok = true;
        break;
      }
    if (!ok) config_error("unknown key '" + item.key() + "' in " + ctx);
  }
}

template <class T>
T get_req(const nlohmann::json& obj, const char* ctx, const char* key) {
  if (!obj.contains(key)) config_error(std::string(ctx) + " is missing required key '" + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    config_error(std::string(ctx) + ": key '" + key + "' has the wrong type");
  }
}

template <class T>
T get_opt(const nlohmann::json& obj, const char* ctx, const char* key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    config_error(std::string(ctx) + ": key '" + key + "' has the wrong type");
  }
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

inline NoiseSpec parse_noise(const nlohmann::json& j) {
  require_keys(j, "noise", {"grid", "entries", "pou_normalize"});
  NoiseSpec spec;
  spec.pou_normalize = get_opt<bool>(j, "noise", "pou_normalize", false);
  const bool has_grid = j.contains("grid"), has_entries = j.contains("entries");
  if (has_grid == has_entries)
    config_error("noise needs exactly one of 'grid' or 'entries'");
  if (has_grid) {
    const auto& g = j.at("grid");
    require_keys(g, "noise.grid", {"bbox", "n_per_axis", "scale", "amplitude", "kind"});
    const auto bbox = get_req<std::vector<double>>(g, "noise.grid", "bbox");
    if (bbox.size() != 4) config_error("noise.grid.bbox must be [x0, y0, x1, y1]");
    const auto amp = get_req<std::vector<double>>(g, "noise.grid", "amplitude");
    if (amp.size() != 2) config_error("noise.grid.amplitude must be [ax, ay]");
    const std::string kind = get_opt<std::string>(g, "noise.grid", "kind", "gaussian");
    KernelKind kk;
    if (kind == "gaussian") kk = KernelKind::gaussian;
    else if (kind == "bspline") kk = KernelKind::bspline;
    else config_error("noise.grid.kind must be 'gaussian' or 'bspline'");
    spec.basis = make_grid_basis(Rect{{bbox[0], bbox[1]}, {bbox[2], bbox[3]}},
                                 get_req<int>(g, "noise.grid", "n_per_axis"),
                                 get_req<double>(g, "noise.grid", "scale"),
                                 Vec2{amp[0], amp[1]}, kk);
  } else {
    spec.basis = noise_basis_from_json(j);
  }
  return spec;
}

inline OptimizerConfig parse_optimizer(const nlohmann::json& j, std::uint64_t seed) {
  require_keys(j, "optimizer",
               {"epsilon", "n_s", "tol", "temperature", "ensemble_size", "avg_window"});
  OptimizerConfig cfg;
  cfg.epsilon = get_req<double>(j, "optimizer", "epsilon");
  cfg.n_s = get_req<std::size_t>(j, "optimizer", "n_s");
  cfg.tol = get_opt<double>(j, "optimizer", "tol", 1e-4);
  const std::string temp = get_opt<std::string>(j, "optimizer", "temperature", "zero");
  if (temp == "zero") cfg.temperature = Temperature::zero;
  else if (temp == "finite") cfg.temperature = Temperature::finite;
  else config_error("optimizer.temperature must be 'zero' or 'finite'");
  cfg.ensemble_size = get_opt<std::size_t>(j, "optimizer", "ensemble_size", 1);
  cfg.avg_window = get_opt<std::size_t>(j, "optimizer", "avg_window", 0);
  cfg.seed = seed;
  cfg.validate();
  return cfg;
}

inline InferParam parse_infer_param(const std::string& s) {
  if (s == "noise_amplitude") return InferParam::noise_amplitude;
  if (s == "noise_scale") return InferParam::noise_scale;
  if (s == "kernel_scale") return InferParam::kernel_scale;
  config_error("inference parameter must be one of noise_amplitude, noise_scale, kernel_scale");
}

}  // namespace detail

/**
 * Parses and validates a run configuration. Relative file paths are resolved
 * against base_dir (usually the directory of the config file).
 */
inline RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  using namespace detail;
  require_keys(j, "config",
               {"command", "output_dir", "seed", "figures", "problem", "optimizer", "outer",
                "sampling", "inference", "em"});
  RunConfig cfg;
  cfg.snapshot = j;
  const std::string cmd = get_req<std::string>(j, "config", "command");
  if (cmd == "match") cfg.command = Command::match;
  else if (cmd == "image-match") cfg.command = Command::image_match;
  else if (cmd == "sample") cfg.command = Command::sample;
  else if (cmd == "mean") cfg.command = Command::mean;
  else if (cmd == "infer") cfg.command = Command::infer;
  else if (cmd == "em") cfg.command = Command::em;
  else config_error("unknown command '" + cmd + "'");

  cfg.output_dir = resolve(base_dir, get_opt<std::string>(j, "config", "output_dir", "out"));
  cfg.seed = get_opt<std::uint64_t>(j, "config", "seed", 0);
  cfg.figures = get_opt<bool>(j, "config", "figures", true);

  if (!j.contains("problem")) config_error("missing 'problem'");
  const auto& p = j.at("problem");

  auto parse_common = [&](std::initializer_list<const char*> extra) {
    std::vector<const char*> keys{"lambda", "kernel_scale", "n_t", "noise"};
    keys.insert(keys.end(), extra.begin(), extra.end());
    if (!p.is_object()) config_error("problem must be an object");
    for (const auto& item : p.items()) {
      bool ok = false;
      for (const char* k : keys)
        if (item.key() == k) { ok = true; break; }
      if (!ok) config_error("unknown key '" + item.key() + "' in problem");
    }
    cfg.lambda = get_opt<double>(p, "problem", "lambda", 1.0);
    cfg.kernel_scale = get_req<double>(p, "problem", "kernel_scale");
    cfg.n_t = get_opt<std::size_t>(p, "problem", "n_t", 20);
    if (cfg.n_t < 2) config_error("problem.n_t must be >= 2");
    if (!(cfg.lambda > 0.0)) config_error("problem.lambda must be positive");
    if (!(cfg.kernel_scale > 0.0)) config_error("problem.kernel_scale must be positive");
    if (p.contains("noise")) cfg.noise = parse_noise(p.at("noise"));
  };

  switch (cfg.command) {
    case Command::match:
    case Command::em:
      parse_common({"source", "target"});
      cfg.source_csv = resolve(base_dir, get_req<std::string>(p, "problem", "source"));
      cfg.target_csv = resolve(base_dir, get_req<std::string>(p, "problem", "target"));
      break;
    case Command::image_match:
      parse_common({"source_image", "target_image"});
      cfg.source_image = resolve(base_dir, get_req<std::string>(p, "problem", "source_image"));
      cfg.target_image = resolve(base_dir, get_req<std::string>(p, "problem", "target_image"));
      break;
    case Command::sample:
      parse_common({"template", "momentum"});
      cfg.template_csv = resolve(base_dir, get_req<std::string>(p, "problem", "template"));
      cfg.momentum_csv = resolve(base_dir, get_req<std::string>(p, "problem", "momentum"));
      break;
    case Command::mean: {
      parse_common({"observations", "init"});
      for (const std::string& o : get_req<std::vector<std::string>>(p, "problem", "observations"))
        cfg.observations.push_back(resolve(base_dir, o));
      if (p.contains("init"))
        cfg.init_csv = resolve(base_dir, get_req<std::string>(p, "problem", "init"));
      break;
    }
    case Command::infer: {
      parse_common({"observations", "template", "momentum"});
      for (const std::string& o : get_req<std::vector<std::string>>(p, "problem", "observations"))
        cfg.observations.push_back(resolve(base_dir, o));
      cfg.template_csv = resolve(base_dir, get_req<std::string>(p, "problem", "template"));
      cfg.momentum_csv = resolve(base_dir, get_req<std::string>(p, "problem", "momentum"));
      break;
    }
  }

  if (cfg.command == Command::match || cfg.command == Command::image_match ||
      cfg.command == Command::mean || cfg.command == Command::em) {
    if (!j.contains("optimizer")) config_error("missing 'optimizer'");
    cfg.optimizer = parse_optimizer(j.at("optimizer"), cfg.seed);
  } else if (j.contains("optimizer")) {
    cfg.optimizer = parse_optimizer(j.at("optimizer"), cfg.seed);
  }

  if (j.contains("outer")) {
    if (cfg.command != Command::mean) config_error("'outer' only applies to the mean command");
    const auto& o = j.at("outer");
    require_keys(o, "outer", {"epsilon", "max_iterations", "tol"});
    cfg.outer_epsilon = get_req<double>(o, "outer", "epsilon");
    cfg.max_outer = get_req<std::size_t>(o, "outer", "max_iterations");
    cfg.outer_tol = get_opt<double>(o, "outer", "tol", 1e-5);
  }

  if (j.contains("sampling")) {
    if (cfg.command != Command::sample) config_error("'sampling' only applies to sample");
    const auto& s = j.at("sampling");
    require_keys(s, "sampling", {"n_samples"});
    cfg.n_samples = get_req<std::size_t>(s, "sampling", "n_samples");
  }

  if (cfg.command == Command::infer) {
    if (!j.contains("inference")) config_error("missing 'inference'");
    const auto& inf = j.at("inference");
    require_keys(inf, "inference", {"ranges", "sample_budget", "n_t"});
    cfg.inference.sample_budget = get_req<std::size_t>(inf, "inference", "sample_budget");
    cfg.inference.n_t = get_opt<std::size_t>(inf, "inference", "n_t", cfg.n_t);
    cfg.inference.seed = derive_seed(cfg.seed, 0x1FE5ull);
    if (!inf.contains("ranges")) config_error("inference is missing 'ranges'");
    for (const auto& r : inf.at("ranges")) {
      require_keys(r, "inference.ranges[]", {"param", "lo", "hi", "count"});
      ParamRange range;
      range.param = parse_infer_param(get_req<std::string>(r, "range", "param"));
      range.lo = get_req<double>(r, "range", "lo");
      range.hi = get_req<double>(r, "range", "hi");
      range.count = get_req<std::size_t>(r, "range", "count");
      cfg.inference.ranges.push_back(range);
    }
    cfg.inference.validate();
  } else if (j.contains("inference")) {
    config_error("'inference' only applies to infer");
  }

  if (j.contains("em")) {
    if (cfg.command != Command::em) config_error("'em' only applies to the em command");
    const auto& e = j.at("em");
    require_keys(e, "em", {"samples", "iterations"});
    cfg.em_samples = get_req<std::size_t>(e, "em", "samples");
    cfg.em_iterations = get_req<std::size_t>(e, "em", "iterations");
  }
  return cfg;
}

/// Applies a command-line seed override to every derived stream.
inline void override_seed(RunConfig& cfg, std::uint64_t seed) {
  cfg.seed = seed;
  cfg.optimizer.seed = seed;
  cfg.inference.seed = derive_seed(seed, 0x1FE5ull);
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path.string() + ": cannot open config file");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(path.string() + ": invalid JSON: " + e.what());
  }
  return parse_run_config(j, path.parent_path());
}

}  // namespace stochmatch
