// Command-line frontend: train / sweep / eval and the three figure emitters.

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "cvae/figures.hpp"
#include "cvae/metrics.hpp"
#include "cvae/mnist.hpp"
#include "cvae/train.hpp"
#include "cvae/version.hpp"

namespace fs = std::filesystem;

namespace {

struct TrainFlags {
  cvae::RunConfig config;
  std::string resume_path;
};

void add_train_options(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--kappa-d", f.config.kappa_d, "Coupling of the latent noise (1/DoF)")
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--kappa-l", f.config.kappa_l, "Coupling of the reconstruction loss")
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--z-dim", f.config.z_dim, "Latent dimensionality");
  cmd->add_option("--epochs", f.config.epochs, "Training epochs");
  cmd->add_option("--batch-size", f.config.batch_size, "Batch size");
  cmd->add_option("--lr", f.config.lr, "Learning rate");
  cmd->add_option("--dropout", f.config.dropout, "Dropout rate for all hidden layers");
  cmd->add_option("--seed", f.config.seed, "Run seed; every random draw derives from it");
  cmd->add_option("--hidden-units", f.config.hidden_units, "Width of the dense layers");
  cmd->add_option("--train-limit", f.config.train_limit,
                  "Use only the first N training images (0 = all)");
  cmd->add_option("--data-dir", f.config.data_dir, "Directory with the MNIST IDX files")
      ->envname("CVAE_DATA_DIR");
  cmd->add_option("--out-dir", f.config.out_dir, "Directory for run artifacts");
}

cvae::Dataset load_train(const cvae::RunConfig& cfg) {
  return cvae::load_dataset(cfg.data_dir, "train", cfg.train_limit);
}

void print_run_summary(const cvae::TrainResult& r) {
  const auto& log = r.log;
  std::printf("run %s: %zu epochs", r.checkpoint.config.run_tag().c_str(),
              r.checkpoint.epoch);
  if (!log.empty()) {
    std::printf(", final loss %.4f (recon %.4f, kl %.4f)", log.back().total,
                log.back().recon, log.back().kl);
  }
  if (!r.checkpoint_path.empty()) {
    std::printf("\n  checkpoint: %s\n  train log:  %s\n", r.checkpoint_path.c_str(),
                r.log_path.c_str());
  } else {
    std::printf("\n");
  }
}

int run_train(const TrainFlags& f, const CLI::App* cmd) {
  if (!f.resume_path.empty()) {
    const cvae::Checkpoint ck = cvae::load_checkpoint(f.resume_path);
    // Only flags given explicitly are overlaid on the checkpoint config;
    // any that differ reject the resume.
    cvae::RunConfig requested = ck.config;
    const auto set = [&](const char* name) { return cmd->count(name) > 0; };
    if (set("--kappa-d")) requested.kappa_d = f.config.kappa_d;
    if (set("--kappa-l")) requested.kappa_l = f.config.kappa_l;
    if (set("--z-dim")) requested.z_dim = f.config.z_dim;
    if (set("--batch-size")) requested.batch_size = f.config.batch_size;
    if (set("--lr")) requested.lr = f.config.lr;
    if (set("--dropout")) requested.dropout = f.config.dropout;
    if (set("--seed")) requested.seed = f.config.seed;
    if (set("--hidden-units")) requested.hidden_units = f.config.hidden_units;
    if (set("--train-limit")) requested.train_limit = f.config.train_limit;
    cvae::validate_resume_config(ck.config, requested);
    cvae::RunConfig cfg = ck.config;
    cfg.data_dir = f.config.data_dir;
    cfg.out_dir = f.config.out_dir;
    cvae::Checkpoint start = ck;
    start.config = cfg;
    const std::size_t additional = cmd->count("--epochs") ? f.config.epochs : 0;
    const cvae::Dataset train_ds = load_train(cfg);
    const cvae::TrainResult r = cvae::resume(start, additional, train_ds);
    print_run_summary(r);
    return 0;
  }
  const cvae::Dataset train_ds = load_train(f.config);
  const cvae::TrainResult r = cvae::train(f.config, train_ds);
  print_run_summary(r);
  return 0;
}

int run_sweep(const TrainFlags& base, std::vector<double> kds, std::vector<double> kls,
              std::size_t parallel) {
  if (kds.empty()) kds = {0.0, 0.15};
  if (kls.empty()) kls = {0.0, 0.15};
  std::vector<cvae::RunConfig> configs;
  for (double kd : kds) {
    for (double kl : kls) {
      cvae::RunConfig c = base.config;
      c.kappa_d = kd;
      c.kappa_l = kl;
      configs.push_back(c);
    }
  }
  const cvae::Dataset train_ds = load_train(base.config);
  const cvae::Dataset test_ds = cvae::load_dataset(base.config.data_dir, "test");
  const auto outcomes = cvae::sweep(configs, train_ds, parallel);

  std::vector<cvae::MetricsReport> reports;
  bool any_failed = false;
  for (const auto& o : outcomes) {
    if (!o.result) {
      any_failed = true;
      std::fprintf(stderr, "sweep: config %s failed: %s\n", o.config.run_tag().c_str(),
                   o.error.c_str());
      continue;
    }
    print_run_summary(*o.result);
    const cvae::MetricsReport rep =
        cvae::evaluate(o.result->checkpoint.params, test_ds,
                       cvae::EvalMode::kDeterministic, o.config.kappa_d,
                       o.config.kappa_l, o.config.seed);
    reports.push_back(rep);
    const fs::path run_dir = o.result->checkpoint_path.parent_path();
    if (!run_dir.empty()) {
      cvae::write_metrics_csv(run_dir / "metrics.csv", {&rep, 1});
    }
  }
  if (!reports.empty()) {
    std::printf("%s", cvae::metrics_table(reports).c_str());
    if (!base.config.out_dir.empty()) {
      fs::create_directories(base.config.out_dir);
      cvae::write_metrics_csv(fs::path(base.config.out_dir) / "sweep_metrics.csv",
                              reports);
    }
  }
  return any_failed ? 1 : 0;
}

struct EvalFlags {
  std::string checkpoint;
  std::string data_dir = "data";
  std::string mode = "deterministic";
  std::string out_dir;
  std::size_t test_limit = 0;
  std::size_t bins = 40;
  std::string out;
};

cvae::Checkpoint load_ckpt(const EvalFlags& f) {
  return cvae::load_checkpoint(f.checkpoint);
}

int run_eval(const EvalFlags& f) {
  const cvae::Checkpoint ck = load_ckpt(f);
  const cvae::Dataset test_ds = cvae::load_dataset(f.data_dir, "test", f.test_limit);
  const cvae::EvalMode mode = cvae::eval_mode_from_string(f.mode);
  const std::vector<double> lls = cvae::reconstruction_log_likelihoods(
      ck.params, test_ds.images, mode, ck.config.kappa_d, ck.config.seed);
  cvae::MetricsReport rep = cvae::metrics_from_log_likelihoods(lls);
  rep.mode = mode;
  rep.kappa_d = ck.config.kappa_d;
  rep.kappa_l = ck.config.kappa_l;
  rep.z_dim = ck.params.z_dim;
  rep.seed = ck.config.seed;

  std::printf("%s\n%s\n", cvae::metrics_csv_header().c_str(),
              cvae::metrics_csv_row(rep).c_str());
  const fs::path dir = f.out_dir.empty()
                           ? fs::path(f.checkpoint).parent_path()
                           : fs::path(f.out_dir);
  if (!dir.empty()) fs::create_directories(dir);
  cvae::write_metrics_csv(dir / "metrics.csv", {&rep, 1});
  cvae::write_likelihoods_csv(dir / "likelihoods.csv", lls);
  std::printf("metrics: %s\nlikelihoods: %s\n", (dir / "metrics.csv").c_str(),
              (dir / "likelihoods.csv").c_str());
  return 0;
}

int run_fig_latent(const EvalFlags& f) {
  const cvae::Checkpoint ck = load_ckpt(f);
  const cvae::Dataset test_ds = cvae::load_dataset(f.data_dir, "test", f.test_limit);
  const fs::path out = f.out.empty() ? fs::path("latent.svg") : fs::path(f.out);
  const cvae::LatentScatter info = cvae::fig_latent(ck.params, test_ds, out);
  std::printf("latent scatter: %s (%zu points, bbox [%g, %g] x [%g, %g])\n",
              out.c_str(), info.points, info.xmin, info.xmax, info.ymin, info.ymax);
  return 0;
}

int run_fig_hist(const EvalFlags& f) {
  const cvae::Checkpoint ck = load_ckpt(f);
  const cvae::Dataset test_ds = cvae::load_dataset(f.data_dir, "test", f.test_limit);
  const cvae::EvalMode mode = cvae::eval_mode_from_string(f.mode);
  const std::vector<double> lls = cvae::reconstruction_log_likelihoods(
      ck.params, test_ds.images, mode, ck.config.kappa_d, ck.config.seed);
  cvae::MetricsReport rep = cvae::metrics_from_log_likelihoods(lls);
  rep.mode = mode;
  rep.kappa_d = ck.config.kappa_d;
  rep.kappa_l = ck.config.kappa_l;
  constexpr double kLn10 = 2.302585092994045684;
  std::vector<double> log10_lls(lls.size());
  for (std::size_t i = 0; i < lls.size(); ++i) log10_lls[i] = lls[i] / kLn10;
  const fs::path out = f.out.empty() ? fs::path("hist.svg") : fs::path(f.out);
  cvae::fig_hist(log10_lls, rep, f.bins, out);
  std::printf("likelihood histogram: %s (%zu bins)\n", out.c_str(), f.bins);
  return 0;
}

struct GridFlags {
  std::string checkpoint;
  std::string data_dir = "data";
  std::string source = "reconstructions";
  std::size_t rows = 4;
  std::size_t cols = 8;
  std::uint64_t seed = 0;
  std::size_t test_limit = 0;
  std::string out;
};

int run_fig_grid(const GridFlags& f) {
  const cvae::GridSource source = cvae::grid_source_from_string(f.source);
  const fs::path out = f.out.empty() ? fs::path("grid.pgm") : fs::path(f.out);
  if (source == cvae::GridSource::kOriginals) {
    const cvae::Dataset test_ds = cvae::load_dataset(f.data_dir, "test", f.test_limit);
    cvae::fig_grid_originals(test_ds, f.rows, f.cols, out);
  } else {
    if (f.checkpoint.empty()) {
      throw std::invalid_argument("fig-grid: --checkpoint is required for source '" +
                                  f.source + "'");
    }
    const cvae::Checkpoint ck = cvae::load_checkpoint(f.checkpoint);
    if (source == cvae::GridSource::kReconstructions) {
      const cvae::Dataset test_ds = cvae::load_dataset(f.data_dir, "test", f.test_limit);
      cvae::fig_grid_reconstructions(ck.params, test_ds, f.rows, f.cols, out);
    } else {
      cvae::fig_grid_samples(ck.params, ck.config.kappa_d, f.seed, f.rows, f.cols, out);
    }
  }
  std::printf("image grid: %s (%zux%zu, %s)\n", out.c_str(), f.rows, f.cols,
              f.source.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coupled variational autoencoder laboratory"};
  app.require_subcommand(1);
  app.set_config("--config", "",
                 "key=value config file; command-line flags take precedence");

  TrainFlags train_flags;
  CLI::App* train_cmd = app.add_subcommand("train", "Train one configuration");
  add_train_options(train_cmd, train_flags);
  train_cmd->add_option("--resume", train_flags.resume_path,
                        "Continue from a checkpoint; --epochs counts additional epochs");

  TrainFlags sweep_flags;
  std::vector<double> sweep_kds, sweep_kls;
  std::size_t sweep_parallel = 0;
  CLI::App* sweep_cmd =
      app.add_subcommand("sweep", "Train a grid of (kappa-d, kappa-l) configurations");
  sweep_cmd->add_option("--z-dim", sweep_flags.config.z_dim, "Latent dimensionality");
  sweep_cmd->add_option("--epochs", sweep_flags.config.epochs, "Training epochs");
  sweep_cmd->add_option("--batch-size", sweep_flags.config.batch_size, "Batch size");
  sweep_cmd->add_option("--lr", sweep_flags.config.lr, "Learning rate");
  sweep_cmd->add_option("--dropout", sweep_flags.config.dropout, "Dropout rate");
  sweep_cmd->add_option("--seed", sweep_flags.config.seed, "Run seed");
  sweep_cmd->add_option("--hidden-units", sweep_flags.config.hidden_units,
                        "Width of the dense layers");
  sweep_cmd->add_option("--train-limit", sweep_flags.config.train_limit,
                        "Use only the first N training images (0 = all)");
  sweep_cmd->add_option("--data-dir", sweep_flags.config.data_dir,
                        "Directory with the MNIST IDX files")
      ->envname("CVAE_DATA_DIR");
  sweep_cmd->add_option("--out-dir", sweep_flags.config.out_dir,
                        "Directory for run artifacts");
  sweep_cmd->add_option("--kappa-d", sweep_kds,
                        "kappa-d grid values (default 0 0.15)");
  sweep_cmd->add_option("--kappa-l", sweep_kls,
                        "kappa-l grid values (default 0 0.15)");
  sweep_cmd->add_option("--parallel", sweep_parallel,
                        "Configs to train concurrently (0 = hardware threads)");

  EvalFlags eval_flags;
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  eval_cmd->add_option("--checkpoint", eval_flags.checkpoint, "Checkpoint file")
      ->required();
  eval_cmd->add_option("--data-dir", eval_flags.data_dir, "MNIST directory")
      ->envname("CVAE_DATA_DIR");
  eval_cmd->add_option("--mode", eval_flags.mode, "deterministic | sampled");
  eval_cmd->add_option("--out-dir", eval_flags.out_dir,
                       "Where to write metrics.csv / likelihoods.csv");
  eval_cmd->add_option("--test-limit", eval_flags.test_limit,
                       "Use only the first N test images (0 = all)");

  EvalFlags latent_flags;
  CLI::App* latent_cmd =
      app.add_subcommand("fig-latent", "Scatter plot of the 2-D latent means");
  latent_cmd->add_option("--checkpoint", latent_flags.checkpoint, "Checkpoint file")
      ->required();
  latent_cmd->add_option("--data-dir", latent_flags.data_dir, "MNIST directory")
      ->envname("CVAE_DATA_DIR");
  latent_cmd->add_option("--test-limit", latent_flags.test_limit,
                         "Use only the first N test images (0 = all)");
  latent_cmd->add_option("--out", latent_flags.out, "Output SVG path");

  EvalFlags hist_flags;
  CLI::App* hist_cmd =
      app.add_subcommand("fig-hist", "Likelihood histogram with metric lines");
  hist_cmd->add_option("--checkpoint", hist_flags.checkpoint, "Checkpoint file")
      ->required();
  hist_cmd->add_option("--data-dir", hist_flags.data_dir, "MNIST directory")
      ->envname("CVAE_DATA_DIR");
  hist_cmd->add_option("--mode", hist_flags.mode, "deterministic | sampled");
  hist_cmd->add_option("--bins", hist_flags.bins, "Histogram bin count");
  hist_cmd->add_option("--test-limit", hist_flags.test_limit,
                       "Use only the first N test images (0 = all)");
  hist_cmd->add_option("--out", hist_flags.out, "Output SVG path");

  GridFlags grid_flags;
  CLI::App* grid_cmd = app.add_subcommand(
      "fig-grid", "Grid of originals, reconstructions, or prior samples");
  grid_cmd->add_option("--checkpoint", grid_flags.checkpoint,
                       "Checkpoint file (not needed for originals)");
  grid_cmd->add_option("--data-dir", grid_flags.data_dir, "MNIST directory")
      ->envname("CVAE_DATA_DIR");
  grid_cmd->add_option("--rows", grid_flags.rows, "Grid rows");
  grid_cmd->add_option("--cols", grid_flags.cols, "Grid columns");
  grid_cmd->add_option("--source", grid_flags.source,
                       "originals | reconstructions | samples");
  grid_cmd->add_option("--seed", grid_flags.seed, "Seed for prior samples");
  grid_cmd->add_option("--test-limit", grid_flags.test_limit,
                       "Use only the first N test images (0 = all)");
  grid_cmd->add_option("--out", grid_flags.out, "Output PGM path");

  CLI::App* version_cmd = app.add_subcommand("version", "Print the version");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 2;
  }

  try {
    if (version_cmd->parsed()) {
      std::printf("cvae %s\n", std::string(cvae::kVersion).c_str());
      return 0;
    }
    if (train_cmd->parsed()) return run_train(train_flags, train_cmd);
    if (sweep_cmd->parsed()) {
      return run_sweep(sweep_flags, sweep_kds, sweep_kls, sweep_parallel);
    }
    if (eval_cmd->parsed()) return run_eval(eval_flags);
    if (latent_cmd->parsed()) return run_fig_latent(latent_flags);
    if (hist_cmd->parsed()) return run_fig_hist(hist_flags);
    if (grid_cmd->parsed()) return run_fig_grid(grid_flags);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "cvae: %s\n", e.what());
    return 1;
  }
  return 2;
}
