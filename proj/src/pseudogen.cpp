#include "msod/pseudogen.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace msod {

const char* to_string(AnnotationStatus s) {
  switch (s) {
    case AnnotationStatus::accepted: return "accepted";
    case AnnotationStatus::no_detections: return "no_detections";
    case AnnotationStatus::no_convergence: return "no_convergence";
    case AnnotationStatus::class_mismatch: return "class_mismatch";
  }
  return "unknown";
}

std::vector<Detection> JointModuleScorer::score_boxes(const std::vector<Box>& boxes) const {
  std::vector<Detection> out;
  if (boxes.empty()) return out;
  const Matrix feats = pool_features(grid_, boxes, m_.cfg.pool_grid);
  const OamForward f = oam_forward(m_, feats);
  const int C = m_.cfg.num_classes;
  for (int c = 0; c < C; ++c) {
    const int block = 4 * c;
    for (size_t r = 0; r < boxes.size(); ++r) {
      const double score = f.phi(c, static_cast<int>(r));
      if (score < score_threshold_) continue;
      const Offset t{f.reg(block, static_cast<int>(r)), f.reg(block + 1, static_cast<int>(r)),
                     f.reg(block + 2, static_cast<int>(r)),
                     f.reg(block + 3, static_cast<int>(r))};
      const auto moved = decode_offset(boxes[r], t)
                             .clip(static_cast<double>(grid_.width),
                                   static_cast<double>(grid_.height));
      if (moved) out.push_back({c, *moved, score});
    }
  }
  return out;
}

bool converged(const std::vector<Detection>& curr, const std::vector<Detection>& prev,
               double match_iou) {
  if (curr.size() != prev.size()) return false;
  struct Pair {
    double ov;
    int i, j;
  };
  std::vector<Pair> pairs;
  for (size_t i = 0; i < curr.size(); ++i)
    for (size_t j = 0; j < prev.size(); ++j) {
      if (curr[i].class_id != prev[j].class_id) continue;
      const double ov = iou(curr[i].box, prev[j].box);
      if (ov >= match_iou) pairs.push_back({ov, static_cast<int>(i), static_cast<int>(j)});
    }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    if (a.ov != b.ov) return a.ov > b.ov;
    if (a.i != b.i) return a.i < b.i;
    return a.j < b.j;
  });
  std::vector<char> used_i(curr.size(), 0), used_j(prev.size(), 0);
  size_t matched = 0;
  for (const auto& p : pairs) {
    if (used_i[p.i] || used_j[p.j]) continue;
    used_i[p.i] = used_j[p.j] = 1;
    ++matched;
  }
  return matched == curr.size();
}

std::vector<double> average_overlap(const std::vector<Detection>& boxes,
                                    const std::vector<std::vector<Detection>>& history,
                                    double match_iou) {
  std::vector<double> weights(boxes.size(), 0.0);
  if (history.empty()) return weights;
  for (size_t i = 0; i < boxes.size(); ++i) {
    double acc = 0.0;
    for (const auto& iter : history) {
      double best = 0.0;
      for (const auto& d : iter)
        if (d.class_id == boxes[i].class_id) best = std::max(best, iou(d.box, boxes[i].box));
      if (best >= match_iou) acc += best;
    }
    weights[i] = acc / static_cast<double>(history.size());
  }
  return weights;
}

AnnotationOutcome generate_annotation(const SceneRecord& scene, const ProposalSet& proposals,
                                      const BoxScorer& scorer, const PseudoGenConfig& cfg) {
  AnnotationOutcome out;

  // Detections of unlabeled classes are dropped before anything else.
  std::vector<Detection> raw = scorer.score_boxes(proposals.boxes);
  std::vector<Detection> filtered;
  for (const auto& d : raw)
    if (std::find(scene.labels.begin(), scene.labels.end(), d.class_id) != scene.labels.end())
      filtered.push_back(d);
  const std::vector<Detection> d1 = nms(filtered, cfg.nms_threshold);
  if (d1.empty()) {
    out.status = AnnotationStatus::no_detections;
    return out;
  }

  std::vector<std::vector<Detection>> history;  // history[i] holds D_{i+2}
  std::vector<Detection> prev = d1;
  int counter = 0;
  int T = -1;
  for (int t = 2; t <= cfg.max_updates; ++t) {
    std::vector<Box> boxes;
    for (const auto& d : prev) boxes.push_back(d.box);
    const std::vector<Detection> dt = nms(scorer.score_boxes(boxes), cfg.nms_threshold);
    if (dt.empty()) {
      out.status = AnnotationStatus::no_detections;
      return out;
    }
    history.push_back(dt);
    counter = converged(dt, prev, cfg.match_iou) ? counter + 1 : 0;
    prev = dt;
    if (counter == cfg.stable_needed) {
      T = t - cfg.stable_needed;
      break;
    }
  }
  if (T < 0) {
    out.status = AnnotationStatus::no_convergence;
    return out;
  }

  std::set<int> covered;
  for (const auto& d : d1) covered.insert(d.class_id);
  for (int c : scene.labels)
    if (!covered.count(c)) {
      out.status = AnnotationStatus::class_mismatch;
      return out;
    }

  // Weights average the best same-class IoU over iterations 2..T+2.
  const std::vector<std::vector<Detection>> window(history.begin(),
                                                   history.begin() + std::min<size_t>(T + 1,
                                                                                      history.size()));
  const std::vector<double> w = average_overlap(d1, window, cfg.match_iou);
  out.status = AnnotationStatus::accepted;
  out.entry.image_id = scene.id;
  out.entry.T = T;
  for (size_t i = 0; i < d1.size(); ++i)
    out.entry.boxes.push_back({d1[i].class_id, d1[i].box, w[i]});
  return out;
}

void SemiStrongPool::apply(const AnnotationOutcome& outcome, int image_id, int epoch,
                           PoolEpochStats& stats) {
  ++stats.attempts;
  switch (outcome.status) {
    case AnnotationStatus::accepted: {
      ++stats.accepted;
      SemiStrongEntry entry = outcome.entry;
      entry.image_id = image_id;
      entry.epoch = epoch;
      ++stats.t_histogram[entry.T];
      entries_[image_id] = std::move(entry);
      break;
    }
    case AnnotationStatus::no_detections:
      ++stats.rejected_no_detections;
      entries_.erase(image_id);
      break;
    case AnnotationStatus::no_convergence:
      ++stats.rejected_no_convergence;
      entries_.erase(image_id);
      break;
    case AnnotationStatus::class_mismatch:
      ++stats.rejected_class_mismatch;
      entries_.erase(image_id);
      break;
  }
}

const SemiStrongEntry* SemiStrongPool::find(int image_id) const {
  const auto it = entries_.find(image_id);
  return it == entries_.end() ? nullptr : &it->second;
}

std::string pool_snapshot_json(const SemiStrongPool& pool, const PoolEpochStats& stats, int epoch,
                               int weak_total) {
  nlohmann::json j;
  j["epoch"] = epoch;
  j["pool_size"] = pool.size();
  j["weak_total"] = weak_total;
  j["fraction"] = weak_total > 0 ? static_cast<double>(pool.size()) / weak_total : 0.0;
  j["attempts"] = stats.attempts;
  j["accepted"] = stats.accepted;
  j["rejected"] = {{"no_detections", stats.rejected_no_detections},
                   {"no_convergence", stats.rejected_no_convergence},
                   {"class_mismatch", stats.rejected_class_mismatch}};
  nlohmann::json hist = nlohmann::json::object();
  for (const auto& [t, n] : stats.t_histogram) hist[std::to_string(t)] = n;
  j["t_histogram"] = hist;
  return j.dump();
}

}  // namespace msod
