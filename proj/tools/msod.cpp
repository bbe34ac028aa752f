// Command line front end: dataset generation, training, evaluation, ablation
// sweeps and run reports. Every output directory gets the resolved config so
// runs stay reproducible from their artifacts alone.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "msod/checkpoint.hpp"
#include "msod/config_io.hpp"
#include "msod/dataset_io.hpp"
#include "msod/evaluator.hpp"
#include "msod/report.hpp"
#include "msod/synthworld.hpp"
#include "msod/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

msod::FullConfig resolve_config(const std::string& path) {
  if (path.empty()) return msod::FullConfig{};
  return msod::load_config(path);
}

int count_weak(const msod::Dataset& ds) {
  int weak = 0;
  for (const auto& s : ds.train)
    if (s.tier == msod::Tier::weak) ++weak;
  return weak;
}

std::string flags_name(const msod::AblationFlags& f) {
  std::string name;
  if (f.se) name += "+SE";
  if (f.oam) name += "+OAM";
  if (f.bba) name += "+BBA";
  return name.empty() ? "base" : name;
}

int run_gen_data(const std::string& config_path, uint64_t seed, const std::string& out) {
  msod::FullConfig cfg = resolve_config(config_path);
  const msod::Dataset ds = msod::generate_dataset(cfg.world, cfg.proposals, cfg.dataset, seed);
  if (const fs::path parent = fs::path(out).parent_path(); !parent.empty())
    fs::create_directories(parent);
  msod::write_dataset(ds, out);
  int strong = 0;
  for (const auto& s : ds.train)
    if (s.tier == msod::Tier::strong) ++strong;
  std::cout << "wrote " << out << ": " << ds.train.size() << " train (" << strong
            << " strong), " << ds.test.size() << " test, " << ds.world.num_classes
            << " classes, seed " << seed << "\n";
  return 0;
}

int run_train(const std::string& data_path, const std::string& config_path,
              const std::string& out, uint64_t seed_override, bool has_seed) {
  const msod::Dataset ds = msod::read_dataset(data_path);
  msod::FullConfig cfg = resolve_config(config_path);
  if (has_seed) cfg.train.seed = seed_override;
  // The dataset file wins on world/proposal shape; keep the echoed config honest.
  cfg.world = ds.world;
  cfg.proposals = ds.proposals_cfg;
  cfg.dataset = ds.spec;
  fs::create_directories(out);
  msod::save_config(cfg, (fs::path(out) / "config.json").string());
  const std::string config_json = msod::full_config_to_json(cfg).dump();

  const msod::EpochCallback on_epoch = [&](const msod::EpochTelemetry& tel,
                                           const msod::ModelParams& params,
                                           const msod::ParamSet& velocity) {
    std::cout << "epoch " << tel.epoch << "/" << cfg.train.epochs << "  lr " << tel.lr
              << "  L1B " << tel.loss_1b << "  L2B " << tel.loss_2b << "  pool "
              << tel.pool_size;
    if (tel.val_map50 >= 0.0) std::cout << "  val mAP50 " << tel.val_map50;
    std::cout << "\n";
    if (cfg.train.checkpoint_period > 0 && tel.epoch % cfg.train.checkpoint_period == 0 &&
        tel.epoch != cfg.train.epochs) {
      msod::Checkpoint ck{params, velocity, true, cfg.train.flags, cfg.train.seed, tel.epoch};
      msod::write_checkpoint(
          ck, (fs::path(out) / ("checkpoint_epoch" + std::to_string(tel.epoch) + ".ckpt")).string());
    }
  };

  const msod::TrainResult res = msod::train(ds, cfg.train, on_epoch);

  msod::Checkpoint final_ck{res.params, res.velocity, true, cfg.train.flags, cfg.train.seed,
                            cfg.train.epochs};
  msod::write_checkpoint(final_ck, (fs::path(out) / "checkpoint.ckpt").string());
  msod::write_text_file((fs::path(out) / "telemetry.csv").string(),
                        msod::telemetry_csv(res.telemetry, config_json));
  msod::write_text_file((fs::path(out) / "telemetry.json").string(),
                        msod::telemetry_json(res.telemetry, config_json));
  msod::write_text_file((fs::path(out) / "pool_trajectory.json").string(),
                        msod::pool_trajectory_json(res.telemetry, count_weak(ds)));

  const msod::EvalResult ev =
      msod::evaluate(res.params, ds.world, ds.test, ds.test_proposals, cfg.train.detect);
  msod::write_metrics(ev, ds.world.num_classes, (fs::path(out) / "metrics.json").string(),
                      (fs::path(out) / "ap_table.csv").string(), config_json);
  std::cout << "final test mAP50 " << ev.map50 << "  mAP50:95 " << ev.map50_95 << "\n";
  std::cout << "artifacts in " << out << "\n";
  return 0;
}

int run_eval(const std::string& data_path, const std::string& ckpt_path, const std::string& out) {
  const msod::Dataset ds = msod::read_dataset(data_path);
  const msod::Checkpoint ck = msod::read_checkpoint(ckpt_path);
  fs::create_directories(out);
  const msod::DetectConfig detect{};
  const msod::EvalResult ev =
      msod::evaluate(ck.params, ds.world, ds.test, ds.test_proposals, detect);
  json cfg_json = {{"data", data_path},
                   {"checkpoint", ckpt_path},
                   {"seed", ck.seed},
                   {"epoch", ck.epoch},
                   {"flags", {{"se", ck.flags.se}, {"bba", ck.flags.bba}, {"oam", ck.flags.oam}}},
                   {"detect",
                    {{"score_threshold", detect.score_threshold},
                     {"nms_threshold", detect.nms_threshold},
                     {"max_dets", detect.max_dets}}}};
  msod::write_metrics(ev, ds.world.num_classes, (fs::path(out) / "metrics.json").string(),
                      (fs::path(out) / "ap_table.csv").string(), cfg_json.dump());
  std::cout << "mAP50 " << ev.map50 << "  mAP50:95 " << ev.map50_95 << "\n";
  return 0;
}

int run_ablate(const std::string& data_path, const std::string& config_path,
               const std::vector<uint64_t>& seeds, const std::string& out) {
  const msod::Dataset ds = msod::read_dataset(data_path);
  msod::FullConfig cfg = resolve_config(config_path);
  cfg.world = ds.world;
  cfg.proposals = ds.proposals_cfg;
  cfg.dataset = ds.spec;
  fs::create_directories(out);
  msod::save_config(cfg, (fs::path(out) / "config.json").string());

  // Cumulative chain: each step enables one more component.
  const std::vector<msod::AblationFlags> combos = {
      {false, false, false}, {true, false, false}, {true, false, true}, {true, true, true}};
  const std::vector<msod::AblationRow> rows =
      msod::run_ablation_matrix(ds, cfg.train, combos, seeds);
  msod::write_text_file((fs::path(out) / "ablation.csv").string(),
                        msod::ablation_csv(rows, msod::full_config_to_json(cfg).dump()));
  for (const auto& row : rows)
    std::cout << flags_name(row.flags) << "  seed " << row.seed << "  mAP50 " << row.map50
              << "  mAP50:95 " << row.map50_95 << "\n";
  std::cout << "wrote " << (fs::path(out) / "ablation.csv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixed-supervision detection on a synthetic world"};
  app.require_subcommand(1);

  std::string config_path, data_path, ckpt_path, run_dir, out;
  uint64_t seed = 1;
  std::vector<uint64_t> seeds = {1, 2, 3};

  CLI::App* gen = app.add_subcommand("gen-data", "Generate a dataset file");
  gen->add_option("--config", config_path, "JSON config (defaults when omitted)");
  gen->add_option("--seed", seed, "Generation seed")->capture_default_str();
  gen->add_option("--out", out, "Output dataset file")->required();

  CLI::App* train = app.add_subcommand("train", "Train on a dataset file");
  train->add_option("--data", data_path, "Dataset file")->required();
  train->add_option("--config", config_path, "JSON config (defaults when omitted)");
  CLI::Option* train_seed = train->add_option("--seed", seed, "Overrides train.seed");
  train->add_option("--out", out, "Output run directory")->required();

  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  eval->add_option("--data", data_path, "Dataset file")->required();
  eval->add_option("--ckpt", ckpt_path, "Checkpoint file")->required();
  eval->add_option("--out", out, "Output directory")->required();

  CLI::App* ablate = app.add_subcommand("ablate", "Flag-combination sweep over seeds");
  ablate->add_option("--data", data_path, "Dataset file")->required();
  ablate->add_option("--config", config_path, "JSON config (defaults when omitted)");
  ablate->add_option("--seeds", seeds, "Comma separated seeds")
      ->delimiter(',')
      ->capture_default_str();
  ablate->add_option("--out", out, "Output directory")->required();

  CLI::App* report = app.add_subcommand("report", "Render charts and tables for a run");
  report->add_option("--run", run_dir, "Run directory (from train)")->required();
  report->add_option("--out", out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return run_gen_data(config_path, seed, out);
    if (train->parsed())
      return run_train(data_path, config_path, out, seed, train_seed->count() > 0);
    if (eval->parsed()) return run_eval(data_path, ckpt_path, out);
    if (ablate->parsed()) return run_ablate(data_path, config_path, seeds, out);
    if (report->parsed()) {
      msod::write_run_report(run_dir, out);
      std::cout << "report in " << out << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
