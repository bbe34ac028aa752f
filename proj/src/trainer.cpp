#include "msod/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace msod {

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (lr <= 0.0) throw std::invalid_argument("lr must be positive");
  if (lr_drop_epoch < 1) throw std::invalid_argument("lr_drop_epoch must be >= 1");
  if (lr_drop_factor <= 0.0) throw std::invalid_argument("lr_drop_factor must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum must be in [0, 1)");
  if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be >= 0");
  if (oam_weak < 1) throw std::invalid_argument("oam_weak must be >= 1");
  if (oam_strong < 0 || sup_semi < 0) throw std::invalid_argument("batch sizes must be >= 0");
  if (sup_strong < 1) throw std::invalid_argument("sup_strong must be >= 1");
  if (proposal.sample_size < 1) throw std::invalid_argument("sample_size must be >= 1");
  if (proposal.fg_cap < 0.0 || proposal.fg_cap > 1.0)
    throw std::invalid_argument("fg_cap must be in [0, 1]");
  if (proposal.second_pass_top < 1) throw std::invalid_argument("second_pass_top must be >= 1");
  if (encoder_dim < 1 || pool_grid < 1)
    throw std::invalid_argument("encoder_dim and pool_grid must be >= 1");
  if (eval_period < 0 || checkpoint_period < 0)
    throw std::invalid_argument("periods must be >= 0");
}

namespace {

void add_grads(ParamSet& dst, const ParamSet& src) {
#define MSOD_ADD(field)                                                        \
  if (!dst.field.empty()) {                                                    \
    for (size_t i = 0; i < dst.field.w.a.size(); ++i)                          \
      dst.field.w.a[i] += src.field.w.a[i];                                    \
    for (size_t i = 0; i < dst.field.b.size(); ++i)                            \
      dst.field.b[i] += src.field.b[i];                                        \
  }
  MSOD_PARAMSET_FIELDS(MSOD_ADD)
#undef MSOD_ADD
}

double layer_norm_sq(const LinearLayer& l) {
  double s = 0.0;
  for (double v : l.w.a) s += v * v;
  for (double v : l.b) s += v * v;
  return s;
}

int pick(const std::vector<int>& ids, std::mt19937_64& rng) {
  std::uniform_int_distribution<size_t> d(0, ids.size() - 1);
  return ids[d(rng)];
}

}  // namespace

TrainResult train(const Dataset& ds, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (ds.train.empty()) throw std::invalid_argument("train: empty training split");

  std::vector<int> strong_idx, weak_idx;
  std::map<int, int> index_of_id;
  for (size_t i = 0; i < ds.train.size(); ++i) {
    (ds.train[i].tier == Tier::strong ? strong_idx : weak_idx).push_back(static_cast<int>(i));
    index_of_id[ds.train[i].id] = static_cast<int>(i);
  }
  if (strong_idx.empty()) throw std::invalid_argument("train: no strong images");

  ModelConfig mc;
  mc.channels = ds.world.channels;
  mc.pool_grid = cfg.pool_grid;
  mc.encoder_dim = cfg.encoder_dim;
  mc.num_classes = ds.world.num_classes;
  mc.shared_encoder = cfg.flags.se;

  std::mt19937_64 rng(cfg.seed);
  TrainResult res{ModelParams::init(mc, rng), {}, {}};
  res.velocity = zeros_like(res.params.t);

  std::vector<FeatureGrid> grids;
  grids.reserve(ds.train.size());
  for (const auto& scene : ds.train) grids.push_back(make_feature_grid(ds.world, scene));

  SemiStrongPool pool;
  const int weak_total = static_cast<int>(weak_idx.size());
  const int iters_per_epoch =
      weak_idx.empty() ? 1 : (weak_total + cfg.oam_weak - 1) / cfg.oam_weak;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochTelemetry tel;
    tel.epoch = epoch;
    tel.lr = epoch >= cfg.lr_drop_epoch ? cfg.lr * cfg.lr_drop_factor : cfg.lr;
    const SgdConfig sgd{tel.lr, cfg.momentum, cfg.weight_decay};

    std::vector<int> weak_order = weak_idx;
    std::shuffle(weak_order.begin(), weak_order.end(), rng);

    for (int it = 0; it < iters_per_epoch; ++it) {
      // Annotation-branch batch: the next slice of weak images plus random
      // strong ones.
      std::vector<int> batch_weak, batch_strong;
      for (int k = 0; k < cfg.oam_weak; ++k) {
        const size_t pos = static_cast<size_t>(it) * cfg.oam_weak + k;
        if (pos < weak_order.size()) batch_weak.push_back(weak_order[pos]);
      }
      for (int k = 0; k < cfg.oam_strong && !strong_idx.empty(); ++k)
        batch_strong.push_back(pick(strong_idx, rng));

      std::vector<OamImagePlan> oam_batch;
      for (int i : batch_weak)
        oam_batch.push_back(plan_oam_image(res.params, grids[i], ds.train[i],
                                           ds.train_proposals[i], cfg.proposal, cfg.flags.bba,
                                           rng));
      for (int i : batch_strong)
        oam_batch.push_back(plan_oam_image(res.params, grids[i], ds.train[i],
                                           ds.train_proposals[i], cfg.proposal, cfg.flags.bba,
                                           rng));

      ParamSet g1 = zeros_like(res.params.t);
      const OamLossBreakdown l1 = oam_branch_loss(res.params, oam_batch, &g1);

      // Re-annotate the batch's weak images with the current parameters.
      if (cfg.flags.oam) {
        for (int i : batch_weak) {
          const JointModuleScorer scorer(res.params, grids[i], cfg.pseudogen.score_threshold);
          const AnnotationOutcome outcome =
              generate_annotation(ds.train[i], ds.train_proposals[i], scorer, cfg.pseudogen);
          pool.apply(outcome, ds.train[i].id, epoch, tel.pool_stats);
        }
      }

      // Supervised batch: strong images plus semi-strong pool entries;
      // missing semi-strong slots fall back to strong images.
      std::vector<SupImagePlan> sup_batch;
      for (int k = 0; k < cfg.sup_strong; ++k) {
        const int i = pick(strong_idx, rng);
        sup_batch.push_back(plan_strong_image(grids[i], ds.train[i], ds.train_proposals[i],
                                              cfg.proposal, cfg.pool_grid, rng));
      }
      std::vector<int> semi_ids;
      if (cfg.flags.oam)
        for (const auto& [id, entry] : pool.entries()) semi_ids.push_back(id);
      std::shuffle(semi_ids.begin(), semi_ids.end(), rng);
      for (int k = 0; k < cfg.sup_semi; ++k) {
        if (k < static_cast<int>(semi_ids.size())) {
          const int id = semi_ids[k];
          const int i = index_of_id.at(id);
          sup_batch.push_back(plan_semi_strong_image(grids[i], *pool.find(id),
                                                     ds.train_proposals[i], cfg.proposal,
                                                     cfg.pool_grid, rng));
        } else {
          const int i = pick(strong_idx, rng);
          sup_batch.push_back(plan_strong_image(grids[i], ds.train[i], ds.train_proposals[i],
                                                cfg.proposal, cfg.pool_grid, rng));
        }
      }

      ParamSet g2 = zeros_like(res.params.t);
      const SupLossBreakdown l2 = l2b_loss(res.params, sup_batch, &g2);

      const double total = l1.total() + l2.total();
      if (!std::isfinite(total)) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch << " iteration " << it;
        throw std::runtime_error(msg.str());
      }

      tel.loss_1b += l1.total();
      tel.loss_gc1 += l1.gc1;
      tel.loss_p1 += l1.cls1 + l1.reg1;
      tel.loss_gc2 += l1.gc2;
      tel.loss_p2 += l1.cls2 + l1.reg2;
      tel.loss_2b += l2.total();
      tel.loss_2b_cls += l2.cls;
      tel.loss_2b_reg += l2.reg;
      tel.enc_grad_norm_1b += std::sqrt(layer_norm_sq(g1.enc_oam));
      tel.enc_grad_norm_2b +=
          std::sqrt(layer_norm_sq(mc.shared_encoder ? g2.enc_oam : g2.enc_sup));

      add_grads(g1, g2);
      std::ostringstream ctx;
      ctx << "gradients at epoch " << epoch << " iteration " << it;
      check_finite(g1, ctx.str());
      sgd_step(res.params.t, g1, res.velocity, sgd);
      ++tel.iterations;
    }

    const double n = std::max(1, tel.iterations);
    tel.loss_1b /= n;
    tel.loss_gc1 /= n;
    tel.loss_p1 /= n;
    tel.loss_gc2 /= n;
    tel.loss_p2 /= n;
    tel.loss_2b /= n;
    tel.loss_2b_cls /= n;
    tel.loss_2b_reg /= n;
    tel.enc_grad_norm_1b /= n;
    tel.enc_grad_norm_2b /= n;
    tel.pool_size = static_cast<int>(pool.size());
    tel.pool_fraction = weak_total > 0 ? static_cast<double>(pool.size()) / weak_total : 0.0;

    if (cfg.eval_period > 0 && (epoch % cfg.eval_period == 0 || epoch == cfg.epochs))
      tel.val_map50 =
          evaluate(res.params, ds.world, ds.test, ds.test_proposals, cfg.detect).map50;

    res.telemetry.push_back(std::move(tel));
    if (on_epoch) on_epoch(res.telemetry.back(), res.params, res.velocity);
  }

  check_finite(res.params.t, "final parameters");
  return res;
}

namespace {

nlohmann::json telemetry_row_json(const EpochTelemetry& t) {
  nlohmann::json j;
  j["epoch"] = t.epoch;
  j["lr"] = t.lr;
  j["iterations"] = t.iterations;
  j["loss_1b"] = t.loss_1b;
  j["loss_gc1"] = t.loss_gc1;
  j["loss_p1"] = t.loss_p1;
  j["loss_gc2"] = t.loss_gc2;
  j["loss_p2"] = t.loss_p2;
  j["loss_2b"] = t.loss_2b;
  j["loss_2b_cls"] = t.loss_2b_cls;
  j["loss_2b_reg"] = t.loss_2b_reg;
  j["enc_grad_norm_1b"] = t.enc_grad_norm_1b;
  j["enc_grad_norm_2b"] = t.enc_grad_norm_2b;
  j["pool_size"] = t.pool_size;
  j["pool_fraction"] = t.pool_fraction;
  j["pool_attempts"] = t.pool_stats.attempts;
  j["pool_accepted"] = t.pool_stats.accepted;
  j["pool_rejected_no_detections"] = t.pool_stats.rejected_no_detections;
  j["pool_rejected_no_convergence"] = t.pool_stats.rejected_no_convergence;
  j["pool_rejected_class_mismatch"] = t.pool_stats.rejected_class_mismatch;
  if (t.val_map50 >= 0.0) j["val_map50"] = t.val_map50;
  return j;
}

}  // namespace

std::string telemetry_csv(const std::vector<EpochTelemetry>& rows,
                          const std::string& config_json) {
  std::ostringstream out;
  if (!config_json.empty()) out << "# " << config_json << "\n";
  out << "epoch,lr,iterations,loss_1b,loss_gc1,loss_p1,loss_gc2,loss_p2,"
         "loss_2b,loss_2b_cls,loss_2b_reg,enc_grad_norm_1b,enc_grad_norm_2b,"
         "pool_size,pool_fraction,pool_attempts,pool_accepted,val_map50\n";
  for (const auto& t : rows) {
    out << t.epoch << "," << t.lr << "," << t.iterations << "," << t.loss_1b << "," << t.loss_gc1
        << "," << t.loss_p1 << "," << t.loss_gc2 << "," << t.loss_p2 << "," << t.loss_2b << ","
        << t.loss_2b_cls << "," << t.loss_2b_reg << "," << t.enc_grad_norm_1b << ","
        << t.enc_grad_norm_2b << "," << t.pool_size << "," << t.pool_fraction << ","
        << t.pool_stats.attempts << "," << t.pool_stats.accepted << "," << t.val_map50 << "\n";
  }
  return out.str();
}

std::string telemetry_json(const std::vector<EpochTelemetry>& rows,
                           const std::string& config_json) {
  nlohmann::json j;
  if (!config_json.empty()) j["config"] = nlohmann::json::parse(config_json);
  nlohmann::json eps = nlohmann::json::array();
  for (const auto& t : rows) eps.push_back(telemetry_row_json(t));
  j["epochs"] = eps;
  return j.dump(2);
}

std::string pool_trajectory_json(const std::vector<EpochTelemetry>& rows, int weak_total) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& t : rows) {
    nlohmann::json j;
    j["epoch"] = t.epoch;
    j["pool_size"] = t.pool_size;
    j["weak_total"] = weak_total;
    j["fraction"] = t.pool_fraction;
    j["attempts"] = t.pool_stats.attempts;
    j["accepted"] = t.pool_stats.accepted;
    j["rejected"] = {{"no_detections", t.pool_stats.rejected_no_detections},
                     {"no_convergence", t.pool_stats.rejected_no_convergence},
                     {"class_mismatch", t.pool_stats.rejected_class_mismatch}};
    nlohmann::json hist = nlohmann::json::object();
    for (const auto& [tt, n] : t.pool_stats.t_histogram) hist[std::to_string(tt)] = n;
    j["t_histogram"] = hist;
    arr.push_back(j);
  }
  return arr.dump(2);
}

std::vector<AblationRow> run_ablation_matrix(const Dataset& ds, const TrainConfig& base,
                                             const std::vector<AblationFlags>& combos,
                                             const std::vector<uint64_t>& seeds) {
  std::vector<AblationRow> rows;
  for (const auto& flags : combos)
    for (uint64_t seed : seeds) {
      TrainConfig cfg = base;
      cfg.flags = flags;
      cfg.seed = seed;
      const TrainResult r = train(ds, cfg);
      const EvalResult e = evaluate(r.params, ds.world, ds.test, ds.test_proposals, cfg.detect);
      rows.push_back({flags, seed, e.map50, e.map50_95});
    }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows, const std::string& config_json) {
  std::ostringstream out;
  if (!config_json.empty()) out << "# " << config_json << "\n";
  out << "se,bba,oam,seed,map50,map50_95\n";
  for (const auto& r : rows)
    out << (r.flags.se ? 1 : 0) << "," << (r.flags.bba ? 1 : 0) << "," << (r.flags.oam ? 1 : 0)
        << "," << r.seed << "," << r.map50 << "," << r.map50_95 << "\n";
  return out.str();
}

}  // namespace msod
