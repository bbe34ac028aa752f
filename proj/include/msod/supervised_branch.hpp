#pragma once

// Second branch: Fast R-CNN style training on strong images plus weighted
// classification on pseudo-annotated (semi-strong) images, and the detector
// that serves evaluation.

#include <random>
#include <vector>

#include "msod/geometry.hpp"
#include "msod/netcore.hpp"
#include "msod/oam_losses.hpp"
#include "msod/pseudogen.hpp"
#include "msod/synthworld.hpp"

namespace msod {

struct DetectConfig {
  double score_threshold = 0.05;
  double nms_threshold = 0.5;
  int max_dets = 100;
};

// One image of a supervised batch with frozen target assignment. Strong
// images: targets from gt, unit weights, inv_t = 1, regression on. Semi-strong
// images: targets from the pseudo boxes, foreground weights from the matched
// pseudo box, background weight 1, inv_t = 1/T, no regression.
struct SupImagePlan {
  Matrix feats;
  std::vector<ProposalTarget> targets;
  SampledBatch sample;
  std::vector<double> weights;  // per proposal, parallel to targets
  double inv_t = 1.0;
  bool regression = false;
};

SupImagePlan plan_strong_image(const FeatureGrid& grid, const SceneRecord& scene,
                               const ProposalSet& proposals, const ProposalLossConfig& cfg,
                               int pool_grid, std::mt19937_64& rng);
SupImagePlan plan_semi_strong_image(const FeatureGrid& grid, const SemiStrongEntry& entry,
                                    const ProposalSet& proposals, const ProposalLossConfig& cfg,
                                    int pool_grid, std::mt19937_64& rng);

struct SupLossBreakdown {
  double cls = 0.0, reg = 0.0;
  double total() const { return cls + reg; }
};

// Sum over the batch of
//   -(inv_t / M) sum_i w_i log p_i[u_i]   (+ smooth L1 regression when on).
// Gradients accumulate into grads when given.
SupLossBreakdown l2b_loss(const ModelParams& m, const std::vector<SupImagePlan>& batch,
                          ParamSet* grads);

// Supervised detector on one image's proposals: per foreground class, every
// proposal with p(class) >= score_threshold becomes a detection through that
// class's offsets (clipped); per-class NMS, then the top max_dets by score.
std::vector<Detection> detect(const ModelParams& m, const FeatureGrid& grid,
                              const std::vector<Box>& proposals, const DetectConfig& cfg);

}  // namespace msod
