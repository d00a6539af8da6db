#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "ctcloud/checkpoint.hpp"
#include "ctcloud/config.hpp"
#include "ctcloud/data.hpp"
#include "ctcloud/errors.hpp"
#include "ctcloud/gradcheck.hpp"
#include "ctcloud/metrics.hpp"
#include "ctcloud/networks.hpp"
#include "ctcloud/training.hpp"

namespace fs = std::filesystem;
using namespace ctcloud;

namespace {

struct Args {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
};

void write_effective_config(const fs::path& out, const RunConfig& cfg) {
  fs::create_directories(out);
  std::ofstream f(out / "config.txt");
  if (!f) throw DataError("cannot write to " + out.string());
  f << cfg.dump();
}

Dataset load_dataset(const RunConfig& cfg) {
  if (cfg.manifest.empty()) throw ConfigError("data.manifest is not set");
  if (!fs::exists(cfg.manifest)) throw DataError("manifest not found: " + cfg.manifest.string());
  return load_manifest(cfg.manifest);
}

int cmd_synth(const RunConfig& cfg, const fs::path& out) {
  const std::uint64_t seed = cfg.synth.seed.value_or(cfg.seed);
  Dataset ds = cfg.task == Task::Classification
                   ? gen_shapes(cfg.synth.n_per_class, cfg.synth.n_points, seed)
                   : gen_part_shapes(cfg.synth.n_per_class, cfg.synth.n_points, seed);
  if (cfg.synth.n_train != 0 || cfg.synth.n_test != 0) {
    const std::size_t n_train =
        cfg.synth.n_train != 0 ? cfg.synth.n_train : ds.items.size() - std::min(ds.items.size(), cfg.synth.n_test);
    assign_split(ds, n_train, cfg.synth.n_test, seed);
  }
  save_dataset(out, ds);
  std::cout << "wrote " << ds.items.size() << " clouds (" << ds.train.size() << " train, " << ds.test.size()
            << " test) to " << (out / "manifest.json").string() << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, const fs::path& out) {
  const Dataset ds = load_dataset(cfg);
  const NetworkConfig net = model_config_for(cfg, ds);
  auto model = make_model(net, cfg.seed);
  TrainOptions opts;
  opts.out_dir = out;
  opts.resume = cfg.resume;
  opts.stop_after = cfg.stop_after;
  const TrainResult r = train_loop(*model, ds, cfg.train_config(), opts);
  for (const auto& m : r.history) std::cout << metrics_csv_row(ds.task, m) << "\n";
  std::cout << "next epoch " << r.next_epoch << "; checkpoints in " << out.string() << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const fs::path& out) {
  const Dataset ds = load_dataset(cfg);
  const NetworkConfig net = model_config_for(cfg, ds);
  auto model = make_model(net, cfg.seed);
  const fs::path ckpt_path = cfg.eval.checkpoint.empty() ? out / "checkpoint_best.ckpt" : cfg.eval.checkpoint;
  restore_parameters(model->parameters(), load_checkpoint(ckpt_path));

  std::vector<std::size_t> items;
  if (cfg.eval.split == "test") {
    items = ds.test;
  } else if (cfg.eval.split == "train") {
    items = ds.train;
  } else {
    items.resize(ds.items.size());
    std::iota(items.begin(), items.end(), std::size_t{0});
  }
  EvalOptions opts;
  if (cfg.eval.multi_scale) {
    MultiScaleOptions ms;
    ms.scales = cfg.eval.scales;
    ms.anisotropic = cfg.eval.anisotropic;
    ms.seed = cfg.seed;
    opts.multi_scale = ms;
  }
  const EvalReport report = evaluate(*model, ds, items, opts);
  const std::string json = report.to_json(ds);
  std::ofstream f(out / "metrics.json");
  if (!f) throw DataError("cannot write " + (out / "metrics.json").string());
  f << json << "\n";
  std::cout << json << "\n";
  return 0;
}

int cmd_gradcheck(const RunConfig& cfg, const fs::path& out) {
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < cfg.gradcheck.seeds; ++i) seeds.push_back(cfg.seed + i);
  const GradcheckReport report = run_gradcheck_suite(seeds, cfg.gradcheck.filter);
  const std::string table = report.table();
  std::ofstream f(out / "gradcheck.txt");
  f << table;
  std::cout << table << (report.passed() ? "gradcheck passed\n" : "gradcheck FAILED\n");
  return report.passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
  // Keep freed tensor buffers in the heap instead of returning them to the OS.
  mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
#endif
  CLI::App app{"ctcloud: point-cloud CT-block networks"};
  app.require_subcommand(1);
  Args args;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"synth", "generate a synthetic dataset and its manifest"},
      {"train", "train a model on a dataset manifest"},
      {"eval", "evaluate a checkpoint and write metrics.json"},
      {"gradcheck", "finite-difference gradient checks of every op and composite"}};
  std::vector<CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", args.config, "config file of key = value lines")->check(CLI::ExistingFile);
    sub->add_option("--set", args.sets, "override a config key (key=value), repeatable")->allow_extra_args(false);
    sub->add_option("--out", args.out, "output directory")->required();
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  std::string command;
  for (std::size_t i = 0; i < subs.size(); ++i) {
    if (subs[i]->parsed()) command = commands[i].first;
  }
  RunConfig cfg;
  try {
    std::optional<fs::path> config_path;
    if (!args.config.empty()) config_path = args.config;
    cfg = resolve_config(config_path, args.sets);
  } catch (const Error& e) {
    // Unknown keys and malformed values are mistakes in the invocation.
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  }
  try {
    const fs::path out = args.out;
    write_effective_config(out, cfg);
    if (command == "synth") return cmd_synth(cfg, out);
    if (command == "train") return cmd_train(cfg, out);
    if (command == "eval") return cmd_eval(cfg, out);
    return cmd_gradcheck(cfg, out);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
