#include "msod/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>

#include <json.hpp>

namespace msod {

double average_precision(const std::vector<EvalDetection>& dets,
                         const std::vector<std::pair<int, std::vector<Box>>>& gt_by_image,
                         double iou_threshold) {
  int total_gt = 0;
  std::map<int, const std::vector<Box>*> gt_of;
  std::map<int, std::vector<char>> taken;
  for (const auto& [image_id, boxes] : gt_by_image) {
    total_gt += static_cast<int>(boxes.size());
    gt_of[image_id] = &boxes;
    taken[image_id].assign(boxes.size(), 0);
  }
  if (total_gt == 0 || dets.empty()) return 0.0;

  std::vector<int> order(dets.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return dets[a].det.score > dets[b].det.score; });

  std::vector<double> precision, recall;
  int tp = 0, fp = 0;
  for (int idx : order) {
    const EvalDetection& d = dets[idx];
    bool hit = false;
    const auto it = gt_of.find(d.image_id);
    if (it != gt_of.end()) {
      const std::vector<Box>& boxes = *it->second;
      std::vector<char>& used = taken[d.image_id];
      int best = -1;
      double best_iou = 0.0;
      for (size_t g = 0; g < boxes.size(); ++g) {
        if (used[g]) continue;
        const double ov = iou(d.det.box, boxes[g]);
        if (ov > best_iou) {
          best_iou = ov;
          best = static_cast<int>(g);
        }
      }
      if (best >= 0 && best_iou >= iou_threshold) {
        used[best] = 1;
        hit = true;
      }
    }
    hit ? ++tp : ++fp;
    precision.push_back(static_cast<double>(tp) / (tp + fp));
    recall.push_back(static_cast<double>(tp) / total_gt);
  }

  // Precision envelope, then the area under the stepwise PR curve.
  for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i)
    precision[i] = std::max(precision[i], precision[i + 1]);
  double ap = 0.0, prev_r = 0.0;
  for (size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_r) * precision[i];
    prev_r = recall[i];
  }
  return ap;
}

EvalResult evaluate_detections(const std::vector<std::vector<Detection>>& dets_per_image,
                               const std::vector<SceneRecord>& scenes, int num_classes) {
  if (dets_per_image.size() != scenes.size())
    throw std::invalid_argument("evaluate_detections: detections/scenes size mismatch");
  const double nan = std::numeric_limits<double>::quiet_NaN();
  EvalResult r;
  r.ap50.assign(num_classes, nan);
  r.ap50_95.assign(num_classes, nan);
  r.gt_counts.assign(num_classes, 0);

  std::vector<std::vector<EvalDetection>> dets_of(num_classes);
  std::vector<std::vector<std::pair<int, std::vector<Box>>>> gt_of(num_classes);
  for (size_t s = 0; s < scenes.size(); ++s) {
    const int image_id = scenes[s].id;
    std::vector<std::vector<Box>> by_class(num_classes);
    for (const auto& g : scenes[s].gt) {
      by_class[g.class_id].push_back(g.box);
      ++r.gt_counts[g.class_id];
    }
    for (int c = 0; c < num_classes; ++c)
      if (!by_class[c].empty()) gt_of[c].push_back({image_id, std::move(by_class[c])});
    for (const auto& d : dets_per_image[s]) dets_of[d.class_id].push_back({image_id, d});
  }

  double sum50 = 0.0, sum50_95 = 0.0;
  int counted = 0;
  for (int c = 0; c < num_classes; ++c) {
    if (r.gt_counts[c] == 0) {
      r.skipped_classes.push_back(c);
      continue;
    }
    r.ap50[c] = average_precision(dets_of[c], gt_of[c], 0.5);
    double acc = 0.0;
    for (int k = 0; k < 10; ++k) acc += average_precision(dets_of[c], gt_of[c], 0.5 + 0.05 * k);
    r.ap50_95[c] = acc / 10.0;
    sum50 += r.ap50[c];
    sum50_95 += r.ap50_95[c];
    ++counted;
  }
  if (counted > 0) {
    r.map50 = sum50 / counted;
    r.map50_95 = sum50_95 / counted;
  }
  return r;
}

EvalResult evaluate(const ModelParams& m, const WorldConfig& world,
                    const std::vector<SceneRecord>& scenes,
                    const std::vector<ProposalSet>& proposals, const DetectConfig& cfg) {
  if (scenes.size() != proposals.size())
    throw std::invalid_argument("evaluate: scenes/proposals size mismatch");
  std::vector<std::vector<Detection>> dets(scenes.size());
  for (size_t s = 0; s < scenes.size(); ++s) {
    const FeatureGrid grid = make_feature_grid(world, scenes[s]);
    dets[s] = detect(m, grid, proposals[s].boxes, cfg);
  }
  return evaluate_detections(dets, scenes, m.cfg.num_classes);
}

void write_metrics(const EvalResult& r, int num_classes, const std::string& json_path,
                   const std::string& csv_path, const std::string& config_json) {
  nlohmann::json j;
  j["map50"] = r.map50;
  j["map50_95"] = r.map50_95;
  j["skipped_classes"] = r.skipped_classes;
  nlohmann::json per = nlohmann::json::array();
  for (int c = 0; c < num_classes; ++c) {
    nlohmann::json row;
    row["class"] = c;
    row["gt_count"] = r.gt_counts[c];
    if (std::isnan(r.ap50[c])) {
      row["ap50"] = nullptr;
      row["ap50_95"] = nullptr;
    } else {
      row["ap50"] = r.ap50[c];
      row["ap50_95"] = r.ap50_95[c];
    }
    per.push_back(row);
  }
  j["per_class"] = per;
  if (!config_json.empty()) j["config"] = nlohmann::json::parse(config_json);

  std::ofstream jf(json_path);
  if (!jf) throw std::runtime_error("cannot write " + json_path);
  jf << j.dump(2) << "\n";

  std::ofstream cf(csv_path);
  if (!cf) throw std::runtime_error("cannot write " + csv_path);
  cf << "class,ap50,ap50_95,gt_count\n";
  for (int c = 0; c < num_classes; ++c) {
    cf << c << ",";
    if (std::isnan(r.ap50[c]))
      cf << ",";
    else
      cf << r.ap50[c] << "," << r.ap50_95[c];
    cf << "," << r.gt_counts[c] << "\n";
  }
}

}  // namespace msod
