#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "stochmatch/driver.hpp"

namespace {

struct CommandArgs {
  std::string config_path;
  std::string out_dir;
  long long seed = -1;
  bool has_seed = false;
};

void add_command(CLI::App& app, const char* name, const char* desc, CommandArgs& args,
                 std::vector<std::pair<std::string, CLI::App*>>& subs) {
  CLI::App* sub = app.add_subcommand(name, desc);
  sub->add_option("--config", args.config_path, "JSON run configuration")->required();
  sub->add_option("--out", args.out_dir, "output directory (overrides the config)");
  sub->add_option("--seed", args.seed, "root seed (overrides the config)");
  subs.emplace_back(name, sub);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stochmatch: stochastic LDDMM landmark and image matching"};
  app.require_subcommand(1);

  CommandArgs args;
  std::vector<std::pair<std::string, CLI::App*>> subs;
  add_command(app, "match", "landmark string matching", args, subs);
  add_command(app, "image-match", "image string matching", args, subs);
  add_command(app, "sample", "sample endpoint configurations", args, subs);
  add_command(app, "mean", "estimate the mean configuration", args, subs);
  add_command(app, "infer", "moment-based parameter inference", args, subs);
  add_command(app, "em", "importance-weighted EM string iteration", args, subs);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    std::fprintf(stderr, "usage: stochmatch <command> --config <file> [--seed N] [--out DIR]\n");
    return 2;
  }

  std::string requested;
  for (const auto& [name, sub] : subs)
    if (sub->parsed()) requested = name;

  try {
    stochmatch::RunConfig cfg = stochmatch::load_run_config(args.config_path);
    if (stochmatch::command_name(cfg.command) != requested) {
      std::fprintf(stderr, "config command '%s' does not match subcommand '%s'\n",
                   stochmatch::command_name(cfg.command), requested.c_str());
      return 2;
    }
    for (const auto& [name, sub] : subs) {
      if (!sub->parsed()) continue;
      if (sub->count("--seed") > 0)
        stochmatch::override_seed(cfg, static_cast<std::uint64_t>(args.seed));
      if (sub->count("--out") > 0) cfg.output_dir = args.out_dir;
    }
    return stochmatch::run(cfg);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
