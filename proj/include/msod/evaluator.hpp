#pragma once

// Detection metrics: continuous-area average precision per class, mAP at IoU
// 0.5 and averaged over 0.50:0.05:0.95.

#include <string>
#include <vector>

#include "msod/geometry.hpp"
#include "msod/supervised_branch.hpp"
#include "msod/synthworld.hpp"

namespace msod {

struct EvalDetection {
  int image_id = 0;
  Detection det;
};

// Detections of one class, matched greedily in descending score order (ties
// by insertion index) to the highest-IoU unmatched gt box of the same image.
// gt_by_image holds that class's gt boxes. Returns AP as the area under the
// precision-envelope PR curve; 0 when there are detections but no gt.
double average_precision(const std::vector<EvalDetection>& dets,
                         const std::vector<std::pair<int, std::vector<Box>>>& gt_by_image,
                         double iou_threshold);

struct EvalResult {
  std::vector<double> ap50;          // per class, NaN when the class has no gt
  std::vector<double> ap50_95;       // per class, NaN when the class has no gt
  std::vector<int> gt_counts;        // per class
  double map50 = 0.0;
  double map50_95 = 0.0;
  std::vector<int> skipped_classes;  // zero-gt classes excluded from the means
};

// AP over explicit per-image detections (image ids parallel to scenes).
EvalResult evaluate_detections(const std::vector<std::vector<Detection>>& dets_per_image,
                               const std::vector<SceneRecord>& scenes, int num_classes);

// Runs the supervised detector over the scenes and scores it.
EvalResult evaluate(const ModelParams& m, const WorldConfig& world,
                    const std::vector<SceneRecord>& scenes,
                    const std::vector<ProposalSet>& proposals, const DetectConfig& cfg);

// metrics.json plus a per-class CSV table.
void write_metrics(const EvalResult& r, int num_classes, const std::string& json_path,
                   const std::string& csv_path, const std::string& config_json);

}  // namespace msod
