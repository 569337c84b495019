// Command-line front end. Parses the subcommand and shared flags, then
// hands off to the runner; exit codes are 0 (success), 1 (runtime failure,
// stage printed), 2 (configuration rejected, offending key printed).
#include <CLI11.hpp>

#include "affr/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Task-conditioned affordance detection workbench"};
  app.require_subcommand(1);

  affr::RunOptions opts;
  uint64_t seed_flag = 0;

  const char* commands[] = {"build-data", "train-teacher", "train-student", "distill",
                            "eval",       "sweep-threshold", "sweep-k",     "eliminate",
                            "gradcheck"};
  for (const char* name : commands) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", opts.config_path, "key = value configuration file");
    sub->add_option("--seed", seed_flag, "seed override");
    sub->add_option("--out", opts.out, "output root directory");
    sub->add_flag("--force", opts.force, "bypass the checkpoint config-hash check");
    sub->add_option("--data", opts.data_dir, "dataset directory (build-data output)");
    sub->add_option("--teacher", opts.teacher_path, "teacher checkpoint path");
    sub->add_option("--checkpoint", opts.checkpoint_path, "model checkpoint path");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  opts.command = sub->get_name();
  if (sub->count("--seed") > 0) opts.seed = seed_flag;
  return affr::run_command(opts);
}
