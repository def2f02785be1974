#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "trajguard/image_io.hpp"
#include "trajguard/pipeline.hpp"
#include "trajguard/remote.hpp"
#include "trajguard/toy_data.hpp"

namespace trajguard {

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string out_dir;
};

void add_common(CLI::App* cmd, CommonFlags& f, const std::string& config_help) {
  cmd->add_option("--config", f.config, config_help)->required();
  cmd->add_option("--seed", f.seed, "Override the global seed");
  cmd->add_option("--workers", f.workers, "Images processed in parallel")->check(CLI::PositiveNumber);
  cmd->add_option("--out-dir", f.out_dir, "Override the output directory");
}

void apply(const CommonFlags& f, RunConfig& cfg) {
  if (f.seed) cfg.seed = *f.seed;
  if (f.workers) cfg.workers = *f.workers;
  if (!f.out_dir.empty()) cfg.out_dir = f.out_dir;
  cfg.validate();
}

RunConfig load(const CommonFlags& f) {
  RunConfig cfg = load_run_config(f.config);
  apply(f, cfg);
  return cfg;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Trajectory-level adversarial protection for images against learned manipulators"};
  app.name("trajguard");
  app.require_subcommand(1);

  CommonFlags protect_f, evaluate_f, sweep_f, ablate_f, serve_f;
  auto* protect = app.add_subcommand("protect", "Write protected PNGs and per-image traces");
  add_common(protect, protect_f, "Run config (JSON)");
  auto* evaluate = app.add_subcommand("evaluate", "Score protected images against clean ones");
  add_common(evaluate, evaluate_f, "Run config (JSON)");
  auto* sweep = app.add_subcommand("sweep", "DSR under JPEG, blur and downscaling; AUC table");
  add_common(sweep, sweep_f, "Run config (JSON)");
  auto* ablate = app.add_subcommand("ablate", "Protect and evaluate across one parameter axis");
  add_common(ablate, ablate_f, "Ablation plan (JSON)");

  auto* toy = app.add_subcommand("toy-images", "Write a seeded batch of synthetic faces");
  std::string toy_dir;
  int toy_count = 20, toy_size = 32;
  std::uint64_t toy_seed = 42;
  toy->add_option("--out-dir", toy_dir, "Destination directory")->required();
  toy->add_option("--count", toy_count, "Number of images")->check(CLI::PositiveNumber);
  toy->add_option("--seed", toy_seed, "Batch seed");
  toy->add_option("--size", toy_size, "Width and height in pixels")->check(CLI::Range(8, 1024));

  auto* serve = app.add_subcommand("serve", "Expose the configured manipulator over HTTP until stdin closes");
  serve->add_option("--config", serve_f.config, "Run config (JSON)")->required();
  std::string host = "127.0.0.1";
  int port = 0;
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port (0 picks a free one)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 1;
  }

  try {
    if (*protect) {
      const auto summary = run_protect(load(protect_f), &err);
      if (summary.failed() > 0) {
        err << "error: " << summary.failed() << " of " << summary.files.size()
            << " images failed (see *.error files)\n";
        return 2;
      }
    } else if (*evaluate) {
      const auto report = run_evaluate(load(evaluate_f), &err);
      out << "DSR " << report.dsr << " over " << report.rows.size() << " images\n";
    } else if (*sweep) {
      const auto result = run_sweep(load(sweep_f), &err);
      write_auc_csv(out, {result.auc});
    } else if (*ablate) {
      AblationPlan plan = load_ablation_plan(ablate_f.config);
      apply(ablate_f, plan.base);
      write_ablation_csv(out, run_ablate(plan, &err));
    } else if (*toy) {
      fs::create_directories(toy_dir);
      const auto batch = make_toy_batch(toy_seed, toy_count, {3, toy_size, toy_size});
      for (std::size_t i = 0; i < batch.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "toy_%03zu.png", i);
        write_png(fs::path(toy_dir) / name, batch[i]);
      }
      err << "wrote " << batch.size() << " images to " << toy_dir << '\n';
    } else if (*serve) {
      const RunConfig cfg = load_run_config(serve_f.config);
      const ModelSet models = build_models(cfg);
      ManipulatorServer server(models.manipulator);
      const int bound = server.start(host, port);
      out << "listening on " << host << ':' << bound << '\n' << std::flush;
      std::string line;
      while (std::getline(std::cin, line)) {
      }
      server.stop();
    }
  } catch (const ParameterError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const CapabilityError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace trajguard
