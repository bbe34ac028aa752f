#include "msod/supervised_branch.hpp"

#include <algorithm>
#include <cmath>

namespace msod {

SupImagePlan plan_strong_image(const FeatureGrid& grid, const SceneRecord& scene,
                               const ProposalSet& proposals, const ProposalLossConfig& cfg,
                               int pool_grid, std::mt19937_64& rng) {
  SupImagePlan plan;
  plan.feats = pool_features(grid, proposals.boxes, pool_grid);
  plan.targets = assign_targets(proposals.boxes, scene.gt, cfg.fg_iou);
  plan.sample = sample_proposals(plan.targets, cfg.sample_size, cfg.fg_cap, rng);
  plan.weights.assign(plan.targets.size(), 1.0);
  plan.inv_t = 1.0;
  plan.regression = true;
  return plan;
}

SupImagePlan plan_semi_strong_image(const FeatureGrid& grid, const SemiStrongEntry& entry,
                                    const ProposalSet& proposals, const ProposalLossConfig& cfg,
                                    int pool_grid, std::mt19937_64& rng) {
  std::vector<GtObject> pseudo;
  for (const auto& pb : entry.boxes) pseudo.push_back({pb.class_id, pb.box});
  SupImagePlan plan;
  plan.feats = pool_features(grid, proposals.boxes, pool_grid);
  plan.targets = assign_targets(proposals.boxes, pseudo, cfg.fg_iou);
  plan.sample = sample_proposals(plan.targets, cfg.sample_size, cfg.fg_cap, rng);
  plan.weights.assign(plan.targets.size(), 1.0);
  for (size_t i = 0; i < plan.targets.size(); ++i)
    if (plan.targets[i].u > 0) plan.weights[i] = entry.boxes[plan.targets[i].matched_gt].weight;
  plan.inv_t = entry.global_weight();
  plan.regression = false;
  return plan;
}

SupLossBreakdown l2b_loss(const ModelParams& m, const std::vector<SupImagePlan>& batch,
                          ParamSet* grads) {
  SupLossBreakdown out;
  const int C = m.cfg.num_classes;
  for (const auto& plan : batch) {
    if (plan.sample.indices.empty()) continue;
    const SupForward f = supervised_forward(m, plan.feats);
    Matrix d_cls(f.cls_logits.rows, f.cls_logits.cols);
    Matrix d_reg(f.reg.rows, f.reg.cols);
    const double inv_m = 1.0 / static_cast<double>(plan.sample.indices.size());

    for (int idx : plan.sample.indices) {
      const ProposalTarget& tgt = plan.targets[idx];
      const double w = plan.weights[idx];
      const double pu = f.p(tgt.u, idx);
      out.cls += -plan.inv_t * inv_m * w * std::log(std::max(pu, kLogEps));
      if (pu > kLogEps) {
        const double scale = plan.inv_t * inv_m * w;
        for (int k = 0; k <= C; ++k)
          d_cls(k, idx) += scale * (f.p(k, idx) - (k == tgt.u ? 1.0 : 0.0));
      }
      if (plan.regression && tgt.u > 0) {
        const int block = 4 * (tgt.u - 1);
        const double t[4] = {tgt.v.tx, tgt.v.ty, tgt.v.th, tgt.v.tw};
        for (int k = 0; k < 4; ++k) {
          const double diff = f.reg(block + k, idx) - t[k];
          out.reg += smooth_l1(diff);
          d_reg(block + k, idx) += smooth_l1_grad(diff);
        }
      }
    }
    if (grads) supervised_backward(m, plan.feats, f, d_cls, d_reg, *grads);
  }
  return out;
}

std::vector<Detection> detect(const ModelParams& m, const FeatureGrid& grid,
                              const std::vector<Box>& proposals, const DetectConfig& cfg) {
  if (proposals.empty()) return {};
  const Matrix feats = pool_features(grid, proposals, m.cfg.pool_grid);
  const SupForward f = supervised_forward(m, feats);
  const int C = m.cfg.num_classes;
  std::vector<Detection> cands;
  for (int c = 0; c < C; ++c) {
    const int block = 4 * c;
    for (size_t r = 0; r < proposals.size(); ++r) {
      const int col = static_cast<int>(r);
      const double s = f.p(c + 1, col);
      if (s < cfg.score_threshold) continue;
      const Offset t{f.reg(block, col), f.reg(block + 1, col), f.reg(block + 2, col),
                     f.reg(block + 3, col)};
      const auto moved = decode_offset(proposals[r], t)
                             .clip(static_cast<double>(grid.width),
                                   static_cast<double>(grid.height));
      if (moved) cands.push_back({c, *moved, s});
    }
  }
  std::vector<Detection> kept = nms(cands, cfg.nms_threshold);
  if (static_cast<int>(kept.size()) > cfg.max_dets) kept.resize(cfg.max_dets);
  return kept;
}

}  // namespace msod
