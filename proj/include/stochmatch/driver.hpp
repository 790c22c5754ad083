#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "stochmatch/config.hpp"
#include "stochmatch/image_match.hpp"
#include "stochmatch/io.hpp"
#include "stochmatch/stats.hpp"
#include "stochmatch/string_method.hpp"
#include "stochmatch/svg.hpp"

namespace stochmatch {

namespace detail {

// Collects every produced file so the manifest can list paths and content
// hashes; the manifest itself is always the last write of a run.
class RunWriter {
 public:
  explicit RunWriter(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }

  const std::filesystem::path& dir() const { return dir_; }

  std::filesystem::path path(const std::string& name) const { return dir_ / name; }

  void record(const std::string& name) {
    char hex[19];
    std::snprintf(hex, sizeof(hex), "0x%016llx",
                  static_cast<unsigned long long>(fnv1a64(read_file_bytes(dir_ / name))));
    inventory_.push_back({{"path", name}, {"fnv1a64", std::string(hex)}});
  }

  void write_text(const std::string& name, const std::string& body) {
    std::ofstream out(path(name), std::ios::binary);
    if (!out) throw std::runtime_error(path(name).string() + ": cannot open for writing");
    out << body;
    out.close();
    record(name);
  }

  nlohmann::json inventory() const { return inventory_; }

 private:
  std::filesystem::path dir_;
  nlohmann::json inventory_ = nlohmann::json::array();
};

inline std::string diagnostics_csv(const std::vector<IterateDiagnostics>& iterates) {
  std::string out = "s,energy,residual\n";
  for (std::size_t s = 0; s < iterates.size(); ++s)
    out += std::to_string(s) + ',' + format_double(iterates[s].energy) + ',' +
           format_double(iterates[s].residual) + '\n';
  return out;
}

inline std::string trajectory_csv(std::size_t s_index, const Trajectory& q,
                                  const MomentumPath* p) {
  std::ostringstream out;
  out << "s,t,i,qx,qy,px,py\n";
  append_trajectory_csv(out, s_index, q, p);
  return out.str();
}

inline std::string configs_csv(const std::vector<LandmarkConfig>& configs, const char* id_col) {
  std::string out = std::string(id_col) + ",i,x,y\n";
  for (std::size_t s = 0; s < configs.size(); ++s)
    for (std::size_t i = 0; i < configs[s].size(); ++i)
      out += std::to_string(s) + ',' + std::to_string(i) + ',' +
             format_double(configs[s][i].x) + ',' + format_double(configs[s][i].y) + '\n';
  return out;
}

inline std::string statistics_csv(const PathStatistics& st) {
  std::string out = "t,i,mean_x,mean_y,cov_xx,cov_xy,cov_yy\n";
  const double dt = 1.0 / static_cast<double>(st.mean.n_t - 1);
  for (std::size_t k = 0; k < st.mean.n_t; ++k)
    for (std::size_t i = 0; i < st.mean.n_points; ++i) {
      const Vec2 m = st.mean.at(k, i);
      const Mat2& c = st.covariance.at(k, i);
      out += format_double(k * dt) + ',' + std::to_string(i) + ',' + format_double(m.x) + ',' +
             format_double(m.y) + ',' + format_double(c.a) + ',' + format_double(c.b) + ',' +
             format_double(c.d) + '\n';
    }
  return out;
}

inline std::vector<std::size_t> t_slices(std::size_t n_t, std::size_t count) {
  std::vector<std::size_t> idx;
  if (count < 2) count = 2;
  for (std::size_t s = 0; s < count; ++s) idx.push_back((s * (n_t - 1)) / (count - 1));
  return idx;
}

inline MatchProblem build_problem(const RunConfig& cfg, LandmarkConfig source,
                                  LandmarkConfig target) {
  return MatchProblem{std::move(source), std::move(target), cfg.lambda,
                      GaussianKernel(cfg.kernel_scale), cfg.noise.basis, cfg.n_t};
}

inline void emit_match_outputs(const RunConfig& cfg, const MatchProblem& problem,
                               const StringRun& run, RunWriter& writer,
                               nlohmann::json& manifest) {
  const std::size_t final_s = run.iterates.empty() ? 0 : run.iterates.size() - 1;
  writer.write_text("string_final.csv", trajectory_csv(final_s, run.final.q, &run.final.p));
  writer.write_text("diagnostics.csv", diagnostics_csv(run.iterates));
  if (!run.endpoint_samples.empty())
    writer.write_text("endpoint_samples.csv", configs_csv(run.endpoint_samples, "sample"));

  StringFigure fig;
  fig.source = problem.source;
  fig.target = problem.target;
  if (run.history.size() >= 2) {
    const PathStatistics st = endpoint_statistics(run);
    writer.write_text("statistics.csv", statistics_csv(st));
    fig.statistics = st;
    fig.ellipse_t_indices = t_slices(problem.n_t, 5);
    const std::size_t stride = std::max<std::size_t>(1, run.history.size() / 12);
    for (std::size_t s = 0; s < run.history.size(); s += stride)
      fig.strings.push_back(run.history[s]);
    fig.mean_string = run.mean_string;
    fig.endpoint_samples = run.endpoint_samples;
  } else {
    fig.strings.push_back(run.final.q);
    fig.mean_string = run.final.q;
  }
  if (cfg.figures) {
    emit_svg_strings(writer.path("strings.svg"), fig);
    writer.record("strings.svg");
  }

  manifest["converged"] = run.converged;
  manifest["final_energy"] = run.final.energy;
  nlohmann::json iters = nlohmann::json::array();
  for (std::size_t s = 0; s < run.iterates.size(); ++s)
    iters.push_back({{"s", s},
                     {"energy", run.iterates[s].energy},
                     {"residual", run.iterates[s].residual}});
  manifest["iterations"] = iters;
}

inline void run_match(const RunConfig& cfg, RunWriter& writer, nlohmann::json& manifest) {
  const MatchProblem problem =
      build_problem(cfg, load_landmarks(cfg.source_csv), load_landmarks(cfg.target_csv));
  const StringRun run = cfg.optimizer.temperature == Temperature::finite
                            ? run_finite_temperature(problem, cfg.optimizer)
                            : run_zero_temperature(problem, cfg.optimizer);
  emit_match_outputs(cfg, problem, run, writer, manifest);
}

inline void run_em(const RunConfig& cfg, RunWriter& writer, nlohmann::json& manifest) {
  const MatchProblem problem =
      build_problem(cfg, load_landmarks(cfg.source_csv), load_landmarks(cfg.target_csv));
  problem.validate();

  OptimizerConfig step_cfg = cfg.optimizer;
  const BrownianPath init_path = path_for(problem, derive_seed(cfg.seed, 0));
  StringState state =
      make_string_state(problem.source, MomentumPath(problem.n_t, problem.source.size()),
                        problem.basis, init_path, problem.kernel, problem.target, problem.lambda);
  StringRun run;
  for (std::size_t k = 0; k < cfg.em_iterations; ++k) {
    step_cfg.seed = derive_seed(cfg.seed, 0xE3A0ull + k);
    const BrownianPath path = path_for(problem, derive_seed(step_cfg.seed, 0));
    run.iterates.push_back({state.energy, momentum_residual(state, problem.target, problem.lambda,
                                                            problem.basis, path, problem.kernel)});
    state = em_step(state, problem, step_cfg, cfg.em_samples);
  }
  run.final = state;
  emit_match_outputs(cfg, problem, run, writer, manifest);
}

inline void run_image_match(const RunConfig& cfg, RunWriter& writer, nlohmann::json& manifest) {
  const ImageField i0 = load_pgm(cfg.source_image);
  const ImageField i1 = load_pgm(cfg.target_image);
  ImageMatchConfig mcfg;
  mcfg.epsilon = cfg.optimizer.epsilon;
  mcfg.n_s = cfg.optimizer.n_s;
  mcfg.tol = cfg.optimizer.tol;
  mcfg.temperature = cfg.optimizer.temperature;
  mcfg.seed = cfg.seed;
  mcfg.pou_normalize = cfg.noise.pou_normalize;
  const GaussianKernel kernel(cfg.kernel_scale);
  const ImageMatchRun run =
      run_image_matching(i0, i1, cfg.lambda, kernel, cfg.noise.basis, mcfg, cfg.n_t);

  save_pgm(writer.path("warped.pgm"), run.warped);
  writer.record("warped.pgm");
  const std::vector<std::size_t> slices = t_slices(cfg.n_t, 5);
  const std::vector<ImageField> snaps = image_string_snapshots(run.final, i0, slices);
  for (std::size_t s = 0; s < snaps.size(); ++s) {
    const std::string name = "snapshot_" + std::to_string(s) + ".pgm";
    save_pgm(writer.path(name), snaps[s]);
    writer.record(name);
  }

  std::string diag = "s,energy,ssd,running_mean_ssd\n";
  for (std::size_t s = 0; s < run.ssd.size(); ++s)
    diag += std::to_string(s) + ',' + format_double(run.energy[s]) + ',' +
            format_double(run.ssd[s]) + ',' + format_double(run.running_mean_ssd[s]) + '\n';
  writer.write_text("diagnostics.csv", diag);

  std::string vel = "t,k,x,y,ux,uy\n";
  const GridShape& g = i0.grid;
  const double dt = 1.0 / static_cast<double>(cfg.n_t - 1);
  for (std::size_t k = 0; k < run.final.n_t(); ++k)
    for (std::size_t iy = 0; iy < g.ny; ++iy)
      for (std::size_t ix = 0; ix < g.nx; ++ix) {
        const Vec2 pos = g.node(ix, iy);
        const Vec2 u = run.final.velocity[k].at(ix, iy);
        vel += format_double(k * dt) + ',' + std::to_string(iy * g.nx + ix) + ',' +
               format_double(pos.x) + ',' + format_double(pos.y) + ',' + format_double(u.x) +
               ',' + format_double(u.y) + '\n';
      }
  writer.write_text("velocity_string.csv", vel);

  manifest["converged"] = run.converged;
  manifest["final_ssd"] = run.ssd.empty() ? 0.0 : run.ssd.back();
  nlohmann::json iters = nlohmann::json::array();
  for (std::size_t s = 0; s < run.ssd.size(); ++s)
    iters.push_back({{"s", s},
                     {"energy", run.energy[s]},
                     {"ssd", run.ssd[s]},
                     {"running_mean_ssd", run.running_mean_ssd[s]}});
  manifest["iterations"] = iters;
}

inline void run_sample(const RunConfig& cfg, RunWriter& writer, nlohmann::json& manifest) {
  const LandmarkConfig q0 = load_landmarks(cfg.template_csv);
  const LandmarkConfig p0 = load_landmarks(cfg.momentum_csv);
  if (p0.size() != q0.size())
    throw std::invalid_argument("sample: template and momentum sizes differ");
  const GaussianKernel kernel(cfg.kernel_scale);
  const ObservationSet obs = sample_endpoints(q0, std::span<const Vec2>(p0.points),
                                              cfg.noise.basis, cfg.n_samples, cfg.seed, kernel,
                                              cfg.n_t);
  writer.write_text("endpoints.csv", configs_csv(obs.configs, "sample"));

  if (cfg.figures) {
    StringFigure fig;
    fig.source = q0;
    fig.target = q0;
    fig.endpoint_samples = obs.configs;
    emit_svg_strings(writer.path("endpoints.svg"), fig);
    writer.record("endpoints.svg");
  }
  manifest["n_samples"] = cfg.n_samples;
}

inline void run_mean(const RunConfig& cfg, RunWriter& writer, nlohmann::json& manifest) {
  ObservationSet obs;
  for (const auto& path : cfg.observations) obs.configs.push_back(load_landmarks(path));
  obs.validate();

  LandmarkConfig init;
  if (!cfg.init_csv.empty()) {
    init = load_landmarks(cfg.init_csv);
  } else {
    init.points.assign(obs.configs.front().size(), Vec2{});
    for (const LandmarkConfig& c : obs.configs)
      for (std::size_t i = 0; i < c.size(); ++i) init[i] += c[i];
    for (Vec2& v : init.points) v = v / static_cast<double>(obs.size());
  }

  FrechetConfig fcfg;
  fcfg.model = StatModel{cfg.lambda, GaussianKernel(cfg.kernel_scale), cfg.noise.basis, cfg.n_t};
  fcfg.inner = cfg.optimizer;
  fcfg.outer_epsilon = cfg.outer_epsilon;
  fcfg.max_outer = cfg.max_outer;
  fcfg.outer_tol = cfg.outer_tol;
  const FrechetResult result = frechet_mean(obs, init, fcfg);

  std::ostringstream mean_csv;
  mean_csv << "i,x,y\n";
  for (std::size_t i = 0; i < result.mean.size(); ++i)
    mean_csv << i << ',' << format_double(result.mean[i].x) << ','
             << format_double(result.mean[i].y) << '\n';
  writer.write_text("mean.csv", mean_csv.str());
  writer.write_text("mean_history.csv", configs_csv(result.iterate_history, "outer"));

  std::string energy_csv = "outer,energy\n";
  for (std::size_t s = 0; s < result.energies.size(); ++s)
    energy_csv += std::to_string(s) + ',' + format_double(result.energies[s]) + '\n';
  writer.write_text("outer_diagnostics.csv", energy_csv);

  if (cfg.figures) {
    emit_svg_mean_evolution(writer.path("mean_evolution.svg"), obs.configs, init,
                            result.iterate_history);
    writer.record("mean_evolution.svg");
  }
  manifest["converged"] = result.converged;
  manifest["outer_iterations"] = result.energies.size();
}

inline void run_infer(const RunConfig& cfg, RunWriter& writer, nlohmann::json& manifest) {
  ObservationSet obs;
  for (const auto& path : cfg.observations) obs.configs.push_back(load_landmarks(path));
  obs.validate();
  const LandmarkConfig q0 = load_landmarks(cfg.template_csv);
  const LandmarkConfig p0 = load_landmarks(cfg.momentum_csv);
  const GaussianKernel kernel(cfg.kernel_scale);

  const InferenceResult result = moment_inference(obs, q0, std::span<const Vec2>(p0.points),
                                                  cfg.inference, cfg.noise.basis, kernel);

  std::string table = "";
  for (std::size_t d = 0; d < cfg.inference.ranges.size(); ++d)
    table += "param_" + std::to_string(d) + ',';
  table += "objective\n";
  for (const InferenceCandidate& c : result.table) {
    for (double v : c.values) table += format_double(v) + ',';
    table += format_double(c.objective) + '\n';
  }
  writer.write_text("inference.csv", table);

  nlohmann::json est = nlohmann::json::array();
  for (double v : result.estimate) est.push_back(v);
  manifest["estimate"] = est;
  manifest["objective"] = result.objective;
}

}  // namespace detail

/**
 * Executes one configured run: produces the command's CSV/PGM/SVG artifacts in
 * cfg.output_dir and writes manifest.json last. Reruns with an identical
 * configuration are byte-identical. Returns the process exit code.
 */
inline int run(const RunConfig& cfg) {
  detail::RunWriter writer(cfg.output_dir);
  nlohmann::json manifest;
  manifest["version"] = kVersion;
  manifest["command"] = command_name(cfg.command);
  manifest["seed"] = cfg.seed;
  manifest["config"] = cfg.snapshot;
  try {
    switch (cfg.command) {
      case Command::match: detail::run_match(cfg, writer, manifest); break;
      case Command::em: detail::run_em(cfg, writer, manifest); break;
      case Command::image_match: detail::run_image_match(cfg, writer, manifest); break;
      case Command::sample: detail::run_sample(cfg, writer, manifest); break;
      case Command::mean: detail::run_mean(cfg, writer, manifest); break;
      case Command::infer: detail::run_infer(cfg, writer, manifest); break;
    }
    manifest["status"] = "ok";
  } catch (const std::exception& e) {
    // flag the partial run, keep whatever was already produced on disk
    manifest["status"] = "error";
    manifest["error"] = e.what();
    manifest["files"] = writer.inventory();
    std::ofstream out(writer.path("manifest.json"));
    out << manifest.dump(2) << '\n';
    throw;
  }
  manifest["files"] = writer.inventory();
  std::ofstream out(writer.path("manifest.json"));
  if (!out) throw std::runtime_error("cannot write manifest.json");
  out << manifest.dump(2) << '\n';
  return 0;
}

}  // namespace stochmatch
