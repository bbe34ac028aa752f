#include "msod/oam_losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace msod {

ImageLabel ImageLabel::from_classes(const std::vector<int>& classes, int num_classes) {
  ImageLabel label;
  label.y.assign(num_classes, 0);
  for (int c : classes) {
    if (c < 0 || c >= num_classes)
      throw std::invalid_argument("ImageLabel: class out of range");
    label.y[c] = 1;
  }
  return label;
}

double image_level_loss(const std::vector<double>& alpha, const ImageLabel& label,
                        std::vector<double>* d_alpha) {
  if (alpha.size() != label.y.size())
    throw std::invalid_argument("image_level_loss: alpha/label size mismatch");
  if (d_alpha) d_alpha->assign(alpha.size(), 0.0);
  double loss = 0.0;
  for (size_t c = 0; c < alpha.size(); ++c) {
    const double arg = label.y[c] ? alpha[c] : 1.0 - alpha[c];
    if (arg < kLogEps) {
      loss -= std::log(kLogEps);  // clamped, no gradient
      continue;
    }
    loss -= std::log(arg);
    if (d_alpha) (*d_alpha)[c] = label.y[c] ? -1.0 / arg : 1.0 / arg;
  }
  return loss;
}

std::vector<ProposalTarget> assign_targets(const std::vector<Box>& proposals,
                                           const std::vector<GtObject>& gt, double fg_iou) {
  std::vector<ProposalTarget> out(proposals.size());
  for (size_t i = 0; i < proposals.size(); ++i) {
    ProposalTarget& t = out[i];
    for (size_t g = 0; g < gt.size(); ++g) {
      const double ov = iou(proposals[i], gt[g].box);
      if (ov > t.max_iou) {
        t.max_iou = ov;
        t.matched_gt = static_cast<int>(g);
      }
    }
    if (t.matched_gt >= 0 && t.max_iou >= fg_iou) {
      t.u = gt[t.matched_gt].class_id + 1;
      t.v = encode_offset(proposals[i], gt[t.matched_gt].box);
    } else {
      t.u = 0;
      t.matched_gt = -1;
    }
  }
  return out;
}

SampledBatch sample_proposals(const std::vector<ProposalTarget>& targets, int M, double fg_cap,
                              std::mt19937_64& rng) {
  std::vector<int> fg, bg;
  for (size_t i = 0; i < targets.size(); ++i)
    (targets[i].u >= 1 ? fg : bg).push_back(static_cast<int>(i));
  std::shuffle(fg.begin(), fg.end(), rng);
  std::shuffle(bg.begin(), bg.end(), rng);
  const int want = std::min<int>(M, static_cast<int>(targets.size()));
  const int max_fg = static_cast<int>(std::floor(fg_cap * M));
  const int n_fg = std::min<int>(max_fg, static_cast<int>(fg.size()));
  const int n_bg = std::min<int>(want - n_fg, static_cast<int>(bg.size()));

  SampledBatch batch;
  batch.indices.assign(fg.begin(), fg.begin() + n_fg);
  batch.indices.insert(batch.indices.end(), bg.begin(), bg.begin() + n_bg);
  if (static_cast<int>(batch.indices.size()) < want) {
    std::vector<int> leftovers(fg.begin() + n_fg, fg.end());
    leftovers.insert(leftovers.end(), bg.begin() + n_bg, bg.end());
    std::shuffle(leftovers.begin(), leftovers.end(), rng);
    const int need = want - static_cast<int>(batch.indices.size());
    batch.indices.insert(batch.indices.end(), leftovers.begin(), leftovers.begin() + need);
  }
  for (int idx : batch.indices)
    if (targets[idx].u >= 1) ++batch.fg_count;
  return batch;
}

ProposalLossOut proposal_loss(const Matrix& p, const Matrix& reg,
                              const std::vector<ProposalTarget>& targets,
                              const SampledBatch& sample, Matrix* d_cls_logits, Matrix* d_reg) {
  ProposalLossOut out;
  const int M = static_cast<int>(sample.indices.size());
  if (M == 0) return out;
  const int K = p.rows;  // C + 1
  for (int idx : sample.indices) {
    const int u = targets[idx].u;
    const double pu = p(u, idx);
    if (pu < kLogEps) {
      out.cls -= std::log(kLogEps) / M;  // clamped, no gradient
    } else {
      out.cls -= std::log(pu) / M;
      if (d_cls_logits)
        for (int k = 0; k < K; ++k)
          (*d_cls_logits)(k, idx) += (p(k, idx) - (k == u ? 1.0 : 0.0)) / M;
    }
    if (u >= 1) {
      const int block = 4 * (u - 1);
      const double tv[4] = {targets[idx].v.tx, targets[idx].v.ty, targets[idx].v.th,
                            targets[idx].v.tw};
      for (int i = 0; i < 4; ++i) {
        const double x = reg(block + i, idx) - tv[i];
        out.reg += smooth_l1(x);
        if (d_reg) (*d_reg)(block + i, idx) += smooth_l1_grad(x);
      }
    }
  }
  return out;
}

std::optional<SecondPassBoxes> select_second_pass_boxes(const OamForward& f,
                                                        const std::vector<Box>& proposals,
                                                        const ImageLabel& label,
                                                        int top_per_class, double grid_w,
                                                        double grid_h) {
  const int B = static_cast<int>(proposals.size());
  SecondPassBoxes out;
  for (size_t c = 0; c < label.y.size(); ++c) {
    if (!label.y[c]) continue;
    std::vector<int> order(B);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      const double pa = f.phi(static_cast<int>(c), a), pb = f.phi(static_cast<int>(c), b);
      if (pa != pb) return pa > pb;
      return a < b;
    });
    const int take = std::min(top_per_class, B);
    const int block = 4 * static_cast<int>(c);
    for (int k = 0; k < take; ++k) {
      const int r = order[k];
      const Offset t{f.reg(block, r), f.reg(block + 1, r), f.reg(block + 2, r),
                     f.reg(block + 3, r)};
      const auto moved = decode_offset(proposals[r], t).clip(grid_w, grid_h);
      if (moved) out.boxes.push_back(*moved);
    }
  }
  if (out.boxes.empty()) return std::nullopt;
  return out;
}

OamImagePlan plan_oam_image(const ModelParams& m, const FeatureGrid& grid,
                            const SceneRecord& scene, const ProposalSet& proposals,
                            const ProposalLossConfig& cfg, bool second_pass,
                            std::mt19937_64& rng) {
  OamImagePlan plan;
  plan.label = ImageLabel::from_classes(scene.labels, m.cfg.num_classes);
  plan.strong = scene.tier == Tier::strong;
  plan.feats1 = pool_features(grid, proposals.boxes, m.cfg.pool_grid);
  if (plan.strong) {
    plan.targets1 = assign_targets(proposals.boxes, scene.gt, cfg.fg_iou);
    plan.sample1 = sample_proposals(plan.targets1, cfg.sample_size, cfg.fg_cap, rng);
  }
  if (second_pass) {
    const OamForward f = oam_forward(m, plan.feats1);
    const auto sel = select_second_pass_boxes(f, proposals.boxes, plan.label,
                                              cfg.second_pass_top, grid.width, grid.height);
    if (sel) {
      plan.has_pass2 = true;
      plan.feats2 = pool_features(grid, sel->boxes, m.cfg.pool_grid);
      if (plan.strong) {
        plan.targets2 = assign_targets(sel->boxes, scene.gt, cfg.fg_iou);
        plan.sample2 = sample_proposals(plan.targets2, cfg.sample_size, cfg.fg_cap, rng);
      }
    }
  }
  return plan;
}

namespace {

// One forward/backward over one proposal set; returns (L_gc, L_cls, L_reg).
void oam_pass(const ModelParams& m, const Matrix& feats, const ImageLabel& label, bool strong,
              const std::vector<ProposalTarget>& targets, const SampledBatch& sample,
              ParamSet* grads, double& gc, double& cls, double& reg_loss) {
  const OamForward f = oam_forward(m, feats);
  std::vector<double> d_alpha;
  gc += image_level_loss(f.alpha, label, grads ? &d_alpha : nullptr);
  Matrix d_score, d_cls, d_reg;
  if (grads) {
    d_score = Matrix(f.score.rows, f.score.cols);
    d_cls = Matrix(f.cls_logits.rows, f.cls_logits.cols);
    d_reg = Matrix(f.reg.rows, f.reg.cols);
    alpha_backward(f, d_alpha, d_score, d_cls);
  }
  if (strong) {
    const auto out = proposal_loss(f.p, f.reg, targets, sample, grads ? &d_cls : nullptr,
                                   grads ? &d_reg : nullptr);
    cls += out.cls;
    reg_loss += out.reg;
  }
  if (grads) oam_backward(m, feats, f, d_score, d_cls, d_reg, *grads);
}

}  // namespace

OamLossBreakdown oam_branch_loss(const ModelParams& m, const std::vector<OamImagePlan>& batch,
                                 ParamSet* grads) {
  OamLossBreakdown out;
  for (const auto& plan : batch) {
    oam_pass(m, plan.feats1, plan.label, plan.strong, plan.targets1, plan.sample1, grads,
             out.gc1, out.cls1, out.reg1);
    if (plan.has_pass2)
      oam_pass(m, plan.feats2, plan.label, plan.strong, plan.targets2, plan.sample2, grads,
               out.gc2, out.cls2, out.reg2);
  }
  return out;
}

}  // namespace msod
