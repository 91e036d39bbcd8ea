#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "conda/harness.hpp"

namespace {

using namespace conda;

struct CommonOpts {
  std::string config_path;
  std::string out_override;
  std::vector<std::string> sets;
  std::int64_t seed = -1;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "JSON experiment config")->required();
  cmd->add_option("--out", opts.out_override, "output directory override");
  cmd->add_option("--seed", opts.seed, "run a single seed instead of the config's list");
  cmd->add_option("--set", opts.sets, "override config values, e.g. hyperparams.gamma1=0");
}

ExperimentConfig load_config(const CommonOpts& opts) {
  std::ifstream in(opts.config_path);
  if (!in) throw std::runtime_error("cannot open config: " + opts.config_path);
  std::stringstream ss;
  ss << in.rdbuf();
  std::string text = ss.str();
  for (const auto& kv : opts.sets) text = ExperimentConfig::apply_override(text, kv);
  ExperimentConfig cfg = ExperimentConfig::from_json_text(text);
  if (!opts.out_override.empty()) cfg.out_dir = opts.out_override;
  if (opts.seed >= 0) cfg.seeds = {static_cast<std::uint64_t>(opts.seed)};
  return cfg;
}

std::vector<std::size_t> parse_size_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoull(item));
  return out;
}

int run_variant(const CommonOpts& opts, Method method, bool force_method) {
  ExperimentConfig cfg = load_config(opts);
  if (force_method) cfg.method = method;
  const ExperimentResult res = run_experiment(cfg);
  std::printf("method=%s seeds=%zu mean_final_accuracy=%.6f std=%.6f\n",
              method_name(cfg.method).c_str(), res.per_seed.size(), res.mean_final_accuracy,
              res.std_final_accuracy);
  for (const auto& r : res.per_seed)
    std::printf("  seed=%llu final_accuracy=%.6f (%.1fs)\n",
                static_cast<unsigned long long>(r.seed), r.final_accuracy,
                r.wall_clock_seconds);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ConDA: continual source-free domain adaptation on synthetic domain pairs"};
  app.require_subcommand(1);

  CommonOpts train_opts, full_opts, cont_opts, gbs_opts, gbuf_opts, eval_opts;
  std::string grid_sizes = "25,100";
  std::string grid_slots = "0,2,8";
  std::string eval_checkpoint;

  CLI::App* train = app.add_subcommand("train-source", "train the source model per seed");
  add_common(train, train_opts);
  CLI::App* full = app.add_subcommand("adapt-full", "full-target adaptation baseline");
  add_common(full, full_opts);
  CLI::App* cont = app.add_subcommand("adapt-continual", "continual adaptation per config");
  add_common(cont, cont_opts);
  CLI::App* gbs = app.add_subcommand("grid-batchsize", "batch-size sweep");
  add_common(gbs, gbs_opts);
  gbs->add_option("--sizes", grid_sizes, "comma-separated continual batch sizes");
  CLI::App* gbuf = app.add_subcommand("grid-buffersize", "buffer-size sweep");
  add_common(gbuf, gbuf_opts);
  gbuf->add_option("--slots", grid_slots, "comma-separated slots-per-class values");
  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpointed model");
  add_common(ev, eval_opts);
  ev->add_option("--checkpoint", eval_checkpoint, "checkpoint to evaluate")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      ExperimentConfig cfg = load_config(train_opts);
      std::filesystem::create_directories(cfg.out_dir);
      for (std::uint64_t seed : cfg.seeds) {
        DomainPairConfig dc = cfg.dataset;
        dc.seed = seed;
        auto [source, target] = make_domain_pair(dc);
        SourceConfig sc = cfg.source;
        sc.generator = cfg.model;
        Model model = train_source(source, sc, seed);
        const double src_acc = evaluate(model, source);
        const double tgt_acc = evaluate(model, target);
        const std::string path = cfg.out_dir + "/source_seed" + std::to_string(seed) + ".ckpt";
        Buffer empty(0, source.num_classes());
        save_checkpoint(path, model, empty, Rng::substream(seed, 0x6164617074ULL), 0);
        std::printf("seed=%llu source_acc=%.6f target_acc=%.6f checkpoint=%s\n",
                    static_cast<unsigned long long>(seed), src_acc, tgt_acc, path.c_str());
      }
      return 0;
    }
    if (full->parsed()) return run_variant(full_opts, Method::kFullTarget, true);
    if (cont->parsed()) return run_variant(cont_opts, Method::kConda, false);
    if (gbs->parsed()) {
      ExperimentConfig cfg = load_config(gbs_opts);
      const auto rows = grid_batchsize(cfg, parse_size_list(grid_sizes));
      std::filesystem::create_directories(cfg.out_dir);
      write_grid_csv(rows, "batch_size", cfg.out_dir + "/grid_batchsize.csv");
      std::printf("wrote %zu rows to %s/grid_batchsize.csv\n", rows.size(),
                  cfg.out_dir.c_str());
      return 0;
    }
    if (gbuf->parsed()) {
      ExperimentConfig cfg = load_config(gbuf_opts);
      const auto rows = grid_buffersize(cfg, parse_size_list(grid_slots));
      std::filesystem::create_directories(cfg.out_dir);
      write_grid_csv(rows, "slots_per_class", cfg.out_dir + "/grid_buffersize.csv");
      std::printf("wrote %zu rows to %s/grid_buffersize.csv\n", rows.size(),
                  cfg.out_dir.c_str());
      return 0;
    }
    if (ev->parsed()) {
      ExperimentConfig cfg = load_config(eval_opts);
      Checkpoint ckpt = load_checkpoint(eval_checkpoint);
      for (std::uint64_t seed : cfg.seeds) {
        DomainPairConfig dc = cfg.dataset;
        dc.seed = seed;
        auto [source, target] = make_domain_pair(dc);
        std::printf("seed=%llu source_acc=%.6f target_acc=%.6f\n",
                    static_cast<unsigned long long>(seed), evaluate(ckpt.model, source),
                    evaluate(ckpt.model, target));
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
