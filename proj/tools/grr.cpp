// grr: canonical representation generation, pose solving, gradient checks,
// noise ablations and loss evaluation.

#include "grr/commands.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <iostream>
#include <string>

namespace {

void setup_logging() {
  auto logger = spdlog::stderr_logger_st("grr");
  logger->set_pattern("[grr] [%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::level::level_enum level = spdlog::level::warn;
  if (const char* env = std::getenv("GRR_LOG")) {
    const std::string v = env;
    if (v == "error") level = spdlog::level::err;
    else if (v == "warn") level = spdlog::level::warn;
    else if (v == "info") level = spdlog::level::info;
    else if (v == "debug") level = spdlog::level::debug;
  }
  spdlog::set_level(level);
}

void add_common(CLI::App* cmd, grr::CliOptions& opt) {
  cmd->add_option("--config", opt.config, "JSON run configuration");
  cmd->add_option("--seed", opt.seed, "Override the configured seed");
  cmd->add_option("--out", opt.out, "Output directory");
  cmd->add_option("--threads", opt.threads, "Worker threads (0 = auto)");
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Geometric representation pose solver toolkit"};
  app.require_subcommand(1);

  grr::CliOptions gen_opt, solve_opt, grad_opt, ablate_opt, loss_opt;
  std::string grad_op;

  auto* gen = app.add_subcommand("gen", "Write canonical and per-frame world representations");
  add_common(gen, gen_opt);
  auto* solve = app.add_subcommand("solve", "Recover poses from representation files");
  add_common(solve, solve_opt);
  auto* grad = app.add_subcommand("gradcheck", "Compare analytic VJPs against finite differences");
  add_common(grad, grad_opt);
  grad->add_option("--op", grad_op, "rotation | rigid | loss_total (overrides config)")
      ->check(CLI::IsMember({"rotation", "rigid", "loss_total"}));
  auto* ablate = app.add_subcommand("ablate", "Run a noise sweep over the decoupled solver");
  add_common(ablate, ablate_opt);
  auto* loss = app.add_subcommand("loss", "Evaluate the training objective on predictions");
  add_common(loss, loss_opt);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : grr::kExitConfig;
  }

  if (*gen) return grr::cmd_gen(gen_opt, std::cout);
  if (*solve) return grr::cmd_solve(solve_opt, std::cout);
  if (*grad) {
    std::optional<grr::GradOp> op;
    if (!grad_op.empty()) op = grr::parse_grad_op(grad_op);
    return grr::cmd_gradcheck(grad_opt, std::cout, op);
  }
  if (*ablate) return grr::cmd_ablate(ablate_opt, std::cout);
  if (*loss) return grr::cmd_loss(loss_opt, std::cout);
  return grr::kExitConfig;
}
