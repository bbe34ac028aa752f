#pragma once

// Online pseudo-annotation: iterative self-refinement of the annotation
// branch's detections on a weak image, with acceptance gated on stability and
// class coverage. Accepted entries carry per-box and global confidence
// weights and live in the semi-strong pool.

#include <map>
#include <vector>

#include "msod/geometry.hpp"
#include "msod/netcore.hpp"
#include "msod/synthworld.hpp"

namespace msod {

struct PseudoGenConfig {
  double score_threshold = 0.05;  // on phi, per class and proposal
  double nms_threshold = 0.5;
  double match_iou = 0.5;   // stability matching and averageOverlap cutoff
  int max_updates = 30;     // K
  int stable_needed = 3;    // consecutive stable comparisons to accept
};

// Scores a set of boxes on one image. Implementations must be deterministic
// and must not mutate shared state; offsets are already applied to the
// returned boxes.
class BoxScorer {
 public:
  virtual ~BoxScorer() = default;
  virtual std::vector<Detection> score_boxes(const std::vector<Box>& boxes) const = 0;
};

// Detections from the annotation branch: every (class, proposal) pair with
// phi >= score_threshold, box decoded through that class's offsets and
// clipped to the grid.
class JointModuleScorer : public BoxScorer {
 public:
  JointModuleScorer(const ModelParams& m, const FeatureGrid& grid, double score_threshold)
      : m_(m), grid_(grid), score_threshold_(score_threshold) {}
  std::vector<Detection> score_boxes(const std::vector<Box>& boxes) const override;

 private:
  const ModelParams& m_;
  const FeatureGrid& grid_;
  double score_threshold_;
};

// Bidirectional one-to-one match: equal sizes and a greedy same-class
// matching (descending IoU) covering every box at IoU >= match_iou.
bool converged(const std::vector<Detection>& curr, const std::vector<Detection>& prev,
               double match_iou);

// Per-box mean over the history sets of the best same-class IoU, counting 0
// whenever that best IoU falls below match_iou.
std::vector<double> average_overlap(const std::vector<Detection>& boxes,
                                    const std::vector<std::vector<Detection>>& history,
                                    double match_iou);

struct PseudoBox {
  int class_id = 0;
  Box box;
  double weight = 0.0;  // w_r in [0, 1]
};

struct SemiStrongEntry {
  int image_id = 0;
  std::vector<PseudoBox> boxes;
  int T = 0;  // first stable refinement iteration
  int epoch = 0;

  double global_weight() const { return 1.0 / T; }
};

enum class AnnotationStatus { accepted, no_detections, no_convergence, class_mismatch };
const char* to_string(AnnotationStatus s);

struct AnnotationOutcome {
  AnnotationStatus status = AnnotationStatus::no_detections;
  SemiStrongEntry entry;  // valid only when accepted
};

// D_1 = NMS over the class-filtered scorer output on the dataset proposals;
// each following iteration rescores the previous set's boxes. Stops on an
// empty set (no_detections), on stable_needed consecutive stable comparisons
// (accept with T = first stable one), or after max_updates (no_convergence).
// The accepted boxes are D_1's, weighted by average_overlap over iterations
// 2..T+2; acceptance also requires D_1 to cover every labeled class
// (class_mismatch otherwise).
AnnotationOutcome generate_annotation(const SceneRecord& scene, const ProposalSet& proposals,
                                      const BoxScorer& scorer, const PseudoGenConfig& cfg);

struct PoolEpochStats {
  int attempts = 0;
  int accepted = 0;
  int rejected_no_detections = 0;
  int rejected_no_convergence = 0;
  int rejected_class_mismatch = 0;
  std::map<int, int> t_histogram;  // T of accepted entries
};

// Keyed by image id. Acceptance inserts or replaces; rejection removes a
// previously accepted entry for that image.
class SemiStrongPool {
 public:
  void apply(const AnnotationOutcome& outcome, int image_id, int epoch, PoolEpochStats& stats);
  const SemiStrongEntry* find(int image_id) const;
  size_t size() const { return entries_.size(); }
  const std::map<int, SemiStrongEntry>& entries() const { return entries_; }

 private:
  std::map<int, SemiStrongEntry> entries_;
};

// One JSON object per epoch: pool size, fraction, outcome counts, T histogram.
std::string pool_snapshot_json(const SemiStrongPool& pool, const PoolEpochStats& stats, int epoch,
                               int weak_total);

}  // namespace msod
