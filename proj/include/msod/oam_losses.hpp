#pragma once

// Losses of the annotation branch: the image-level MIL term on alpha, the
// proposal-level classification/regression term, and the box-adjusted second
// pass. Discrete decisions (target assignment, proposal sampling, second-pass
// box selection and movement) are precomputed into a plan, so the loss itself
// is a pure differentiable function of the parameters given that plan.

#include <optional>
#include <random>
#include <vector>

#include "msod/geometry.hpp"
#include "msod/netcore.hpp"
#include "msod/synthworld.hpp"

namespace msod {

struct ImageLabel {
  std::vector<uint8_t> y;  // size C, 1 when the class is present

  static ImageLabel from_classes(const std::vector<int>& classes, int num_classes);
};

// Binary cross entropy of alpha against the image label, summed over classes.
// Log arguments are clamped at kLogEps (clamped entries get zero gradient).
// When d_alpha is given it is filled (not accumulated).
double image_level_loss(const std::vector<double>& alpha, const ImageLabel& label,
                        std::vector<double>* d_alpha);

// Per-proposal target: u = 0 for background, c + 1 for foreground class c.
struct ProposalTarget {
  int u = 0;
  Offset v;            // encoded gt offsets, foreground only
  int matched_gt = -1; // index into the gt list the proposal matched
  double max_iou = 0.0;
};

// Max-IoU assignment (ties to the lowest gt index); foreground at IoU >= fg_iou.
std::vector<ProposalTarget> assign_targets(const std::vector<Box>& proposals,
                                           const std::vector<GtObject>& gt, double fg_iou = 0.5);

struct SampledBatch {
  std::vector<int> indices;  // into the proposal list
  int fg_count = 0;
};

// Samples min(M, B) proposals: foreground capped at fg_cap * M, background
// next, leftover slots filled from whatever remains.
SampledBatch sample_proposals(const std::vector<ProposalTarget>& targets, int M, double fg_cap,
                              std::mt19937_64& rng);

struct ProposalLossConfig {
  int sample_size = 32;    // M
  double fg_cap = 0.25;
  double fg_iou = 0.5;
  int second_pass_top = 16;  // proposals moved per labeled class (M_top)
};

// L_cls = -(1/M) sum over sampled proposals of log p[u]; L_reg = sum over
// sampled foreground proposals of smooth L1 on (t - v), using the reg block of
// the target class. Gradients are accumulated into the logit grad matrices.
struct ProposalLossOut {
  double cls = 0.0, reg = 0.0;
};
ProposalLossOut proposal_loss(const Matrix& p, const Matrix& reg,
                              const std::vector<ProposalTarget>& targets,
                              const SampledBatch& sample, Matrix* d_cls_logits, Matrix* d_reg);

// Everything the branch loss needs about one image, with discrete decisions
// frozen. Pass-two boxes were already moved by the class offsets of the
// planning-time parameters and are treated as constants.
struct OamImagePlan {
  ImageLabel label;
  bool strong = false;
  Matrix feats1;                          // pooled dataset proposals
  std::vector<ProposalTarget> targets1;   // strong images only
  SampledBatch sample1;
  bool has_pass2 = false;
  Matrix feats2;                          // pooled moved boxes
  std::vector<ProposalTarget> targets2;   // strong images only, fresh assignment
  SampledBatch sample2;
};

// Runs a planning forward, selects per labeled class the second_pass_top
// proposals with the highest phi, applies that class's offsets, clips to the
// grid and drops degenerate boxes. Returns nullopt when every moved box
// degenerates (the second pass then contributes zero loss).
struct SecondPassBoxes {
  std::vector<Box> boxes;
};
std::optional<SecondPassBoxes> select_second_pass_boxes(const OamForward& f,
                                                        const std::vector<Box>& proposals,
                                                        const ImageLabel& label,
                                                        int top_per_class, double grid_w,
                                                        double grid_h);

OamImagePlan plan_oam_image(const ModelParams& m, const FeatureGrid& grid,
                            const SceneRecord& scene, const ProposalSet& proposals,
                            const ProposalLossConfig& cfg, bool second_pass,
                            std::mt19937_64& rng);

struct OamLossBreakdown {
  double gc1 = 0.0, cls1 = 0.0, reg1 = 0.0;
  double gc2 = 0.0, cls2 = 0.0, reg2 = 0.0;
  double total() const { return gc1 + cls1 + reg1 + gc2 + cls2 + reg2; }
};

// Sum over the batch: weak images contribute the image-level term, strong
// images additionally the proposal term; both passes when planned.
// Gradients accumulate into grads when given.
OamLossBreakdown oam_branch_loss(const ModelParams& m, const std::vector<OamImagePlan>& batch,
                                 ParamSet* grads);

}  // namespace msod
