#pragma once

// Joint training loop: every iteration runs the annotation branch on a mixed
// weak/strong batch, re-annotates the batch's weak images against the current
// snapshot to update the semi-strong pool, runs the supervised branch on a
// strong/semi-strong batch, and takes one combined SGD step.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "msod/evaluator.hpp"
#include "msod/netcore.hpp"
#include "msod/oam_losses.hpp"
#include "msod/pseudogen.hpp"
#include "msod/supervised_branch.hpp"
#include "msod/synthworld.hpp"

namespace msod {

struct AblationFlags {
  bool se = true;   // branches share one encoder
  bool bba = true;  // second (box-adjusted) pass in the annotation branch
  bool oam = true;  // semi-strong images feed the supervised branch
};

struct TrainConfig {
  int epochs = 20;
  double lr = 1e-3;
  int lr_drop_epoch = 14;      // first epoch running at lr * lr_drop_factor
  double lr_drop_factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int oam_weak = 2, oam_strong = 2;   // annotation-branch batch composition
  int sup_strong = 2, sup_semi = 2;   // supervised-branch batch composition
  ProposalLossConfig proposal;        // sampling M, fg cap, fg IoU, M_top
  int encoder_dim = 32;
  int pool_grid = 3;
  AblationFlags flags;
  uint64_t seed = 1;
  PseudoGenConfig pseudogen;
  DetectConfig detect;
  int eval_period = 0;        // epochs between validation scoring, 0 = off
  int checkpoint_period = 0;  // epochs between checkpoints, 0 = final only

  void validate() const;
};

struct EpochTelemetry {
  int epoch = 0;
  double lr = 0.0;
  int iterations = 0;
  double loss_1b = 0.0, loss_gc1 = 0.0, loss_p1 = 0.0, loss_gc2 = 0.0, loss_p2 = 0.0;
  double loss_2b = 0.0, loss_2b_cls = 0.0, loss_2b_reg = 0.0;
  double enc_grad_norm_1b = 0.0, enc_grad_norm_2b = 0.0;  // epoch means
  int pool_size = 0;
  double pool_fraction = 0.0;
  PoolEpochStats pool_stats;
  double val_map50 = -1.0;  // -1 when not evaluated
};

struct TrainResult {
  ModelParams params;
  ParamSet velocity;
  std::vector<EpochTelemetry> telemetry;
};

// Called after each completed epoch; the params/velocity references are only
// valid for the duration of the call.
using EpochCallback = std::function<void(const EpochTelemetry&, const ModelParams&, const ParamSet&)>;

// Deterministic for a fixed dataset and config. Throws on a non-finite loss
// or gradient, naming the tensor. With flags.oam off the pool stays unused
// and semi-strong slots fall back to strong images (they also fall back while
// the pool is still empty).
TrainResult train(const Dataset& ds, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

std::string telemetry_csv(const std::vector<EpochTelemetry>& rows, const std::string& config_json);
std::string telemetry_json(const std::vector<EpochTelemetry>& rows,
                           const std::string& config_json);
std::string pool_trajectory_json(const std::vector<EpochTelemetry>& rows, int weak_total);

struct AblationRow {
  AblationFlags flags;
  uint64_t seed = 0;
  double map50 = 0.0;
  double map50_95 = 0.0;
};

// Trains and evaluates each flag combination at each seed on one dataset.
// Row order: combos outer, seeds inner.
std::vector<AblationRow> run_ablation_matrix(const Dataset& ds, const TrainConfig& base,
                                             const std::vector<AblationFlags>& combos,
                                             const std::vector<uint64_t>& seeds);

std::string ablation_csv(const std::vector<AblationRow>& rows, const std::string& config_json);

}  // namespace msod
