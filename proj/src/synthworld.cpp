#include "msod/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace msod {

WorldConfig WorldConfig::preset(Difficulty d) {
  WorldConfig cfg;
  cfg.difficulty = d;
  switch (d) {
    case Difficulty::easy:
      cfg.min_objects = 1;
      cfg.max_objects = 2;
      cfg.noise_sigma = 0.6;
      cfg.overlap_cap = 0.2;
      cfg.appearance_jitter = 0.35;
      cfg.signature_amplitude = 1.0;
      break;
    case Difficulty::standard:
      break;
    case Difficulty::hard:
      cfg.noise_sigma = 1.8;
      cfg.appearance_jitter = 0.9;
      cfg.signature_amplitude = 0.6;
      break;
  }
  return cfg;
}

void WorldConfig::validate() const {
  if (height < 4 || width < 4) throw std::invalid_argument("WorldConfig: grid too small");
  if (channels < 1) throw std::invalid_argument("WorldConfig: channels must be positive");
  if (num_classes < 1) throw std::invalid_argument("WorldConfig: num_classes must be positive");
  if (min_objects < 1 || max_objects < min_objects)
    throw std::invalid_argument("WorldConfig: bad objects-per-image range");
  if (min_side < 2.0 || max_side < min_side || max_side > std::min(height, width))
    throw std::invalid_argument("WorldConfig: bad object side range");
  if (overlap_cap < 0.0 || overlap_cap >= 1.0)
    throw std::invalid_argument("WorldConfig: overlap_cap must lie in [0, 1)");
  if (noise_sigma < 0.0) throw std::invalid_argument("WorldConfig: noise_sigma must be >= 0");
  if (appearance_jitter < 0.0 || appearance_jitter >= 1.0)
    throw std::invalid_argument("WorldConfig: appearance_jitter must lie in [0, 1)");
  if (signature_amplitude <= 0.0)
    throw std::invalid_argument("WorldConfig: signature_amplitude must be positive");
}

void ProposalConfig::validate() const {
  if (count < 8) throw std::invalid_argument("ProposalConfig: count must be >= 8");
  if (jitter_sigma < 0.0) throw std::invalid_argument("ProposalConfig: jitter_sigma must be >= 0");
  if (fg_fraction < 0.0 || fg_fraction > 1.0)
    throw std::invalid_argument("ProposalConfig: fg_fraction must lie in [0, 1]");
}

void DatasetSpec::validate() const {
  if (train_images < 1) throw std::invalid_argument("DatasetSpec: need at least one train image");
  if (test_images < 0) throw std::invalid_argument("DatasetSpec: test_images must be >= 0");
  if (shots < 0) throw std::invalid_argument("DatasetSpec: shots must be >= 0");
}

std::vector<double> class_signature(const WorldConfig& cfg, int class_id) {
  if (class_id < 0 || class_id >= cfg.num_classes)
    throw std::invalid_argument("class_signature: class_id out of range");
  std::vector<double> sig(cfg.channels, 0.0);
  if (class_id < 2 * cfg.channels) {
    sig[class_id / 2] = (class_id % 2 == 0) ? 1.0 : -1.0;
  } else {
    // Extra classes: greedy farthest-point unit vectors from a fixed stream,
    // independent of the dataset seed so signatures are world constants.
    std::mt19937_64 rng(0x5eed0 + class_id);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<std::vector<double>> taken;
    for (int c = 0; c < class_id; ++c) taken.push_back(class_signature(cfg, c));
    double best_score = -1.0;
    for (int cand = 0; cand < 64; ++cand) {
      std::vector<double> v(cfg.channels);
      double norm = 0.0;
      for (double& x : v) {
        x = n(rng);
        norm += x * x;
      }
      norm = std::sqrt(std::max(norm, 1e-12));
      for (double& x : v) x /= norm;
      double dmin = 1e30;
      for (const auto& t : taken) {
        double d = 0.0;
        for (int i = 0; i < cfg.channels; ++i) d += (v[i] - t[i] / cfg.signature_amplitude) *
                                                   (v[i] - t[i] / cfg.signature_amplitude);
        dmin = std::min(dmin, d);
      }
      if (dmin > best_score) {
        best_score = dmin;
        sig = v;
      }
    }
  }
  for (double& x : sig) x *= cfg.signature_amplitude;
  return sig;
}

std::vector<PlacedObject> place_objects(const WorldConfig& cfg, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> count_dist(cfg.min_objects, cfg.max_objects);
  int target = count_dist(rng);
  if (cfg.distinct_classes) target = std::min(target, cfg.num_classes);

  std::vector<int> classes;
  if (cfg.distinct_classes) {
    std::vector<int> all(cfg.num_classes);
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng);
    classes.assign(all.begin(), all.begin() + target);
  } else {
    std::uniform_int_distribution<int> cls(0, cfg.num_classes - 1);
    for (int i = 0; i < target; ++i) classes.push_back(cls(rng));
  }

  std::uniform_real_distribution<double> side(cfg.min_side, cfg.max_side);
  std::uniform_real_distribution<double> amp(1.0 - cfg.appearance_jitter,
                                             1.0 + cfg.appearance_jitter);
  std::vector<PlacedObject> placed;
  for (int i = 0; i < target; ++i) {
    for (int attempt = 0; attempt < 50; ++attempt) {
      const double w = std::min(side(rng), static_cast<double>(cfg.width));
      const double h = std::min(side(rng), static_cast<double>(cfg.height));
      std::uniform_real_distribution<double> px(0.0, cfg.width - w), py(0.0, cfg.height - h);
      const double x = px(rng), y = py(rng);
      const Box box(x, y, x + w, y + h);
      bool ok = true;
      for (const auto& p : placed)
        if (iou(p.box, box) > cfg.overlap_cap) {
          ok = false;
          break;
        }
      if (ok) {
        placed.push_back({classes[i], box, amp(rng)});
        break;
      }
    }
  }
  return placed;
}

std::vector<double> render(const WorldConfig& cfg, const std::vector<PlacedObject>& objects,
                           std::mt19937_64& rng) {
  const int H = cfg.height, W = cfg.width, C = cfg.channels;
  std::vector<double> grid(static_cast<size_t>(H) * W * C, 0.0);
  for (const auto& obj : objects) {
    const auto sig = class_signature(cfg, obj.class_id);
    const int x0 = std::max(0, static_cast<int>(std::ceil(obj.box.x1 - 0.5)));
    const int x1 = std::min(W, static_cast<int>(std::ceil(obj.box.x2 - 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(obj.box.y1 - 0.5)));
    const int y1 = std::min(H, static_cast<int>(std::ceil(obj.box.y2 - 0.5)));
    for (int c = 0; c < C; ++c) {
      const double v = sig[c] * obj.amplitude;
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) grid[(static_cast<size_t>(c) * H + y) * W + x] = v;
    }
  }
  if (cfg.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
    for (double& v : grid) v += noise(rng);
  }
  return grid;
}

namespace {

// Deterministic repair instead of resampling keeps the rng stream fixed.
double clamp_span(double& lo, double& hi, double limit) {
  lo = std::clamp(lo, 0.0, limit);
  hi = std::clamp(hi, 0.0, limit);
  if (hi - lo < 1.0) {
    const double c = std::clamp(0.5 * (lo + hi), 0.5, limit - 0.5);
    lo = c - 0.5;
    hi = c + 0.5;
  }
  return hi - lo;
}

}  // namespace

ProposalSet propose(const WorldConfig& cfg, const SceneRecord& scene, const ProposalConfig& pcfg,
                    std::mt19937_64& rng) {
  pcfg.validate();
  if (pcfg.count < 2 * static_cast<int>(scene.gt.size()))
    throw std::invalid_argument("propose: need at least 2 proposals per gt object");
  ProposalSet out;
  out.image_id = scene.id;
  const double W = cfg.width, H = cfg.height;
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> ux(0.0, W), uy(0.0, H);
  const int n_fg = scene.gt.empty()
                       ? 0
                       : static_cast<int>(std::lround(pcfg.fg_fraction * pcfg.count));
  for (int k = 0; k < n_fg; ++k) {
    const Box& g = scene.gt[k % scene.gt.size()].box;
    double x1 = g.x1 + n(rng) * pcfg.jitter_sigma * g.width();
    double x2 = g.x2 + n(rng) * pcfg.jitter_sigma * g.width();
    double y1 = g.y1 + n(rng) * pcfg.jitter_sigma * g.height();
    double y2 = g.y2 + n(rng) * pcfg.jitter_sigma * g.height();
    if (x1 > x2) std::swap(x1, x2);
    if (y1 > y2) std::swap(y1, y2);
    clamp_span(x1, x2, W);
    clamp_span(y1, y2, H);
    out.boxes.emplace_back(x1, y1, x2, y2);
  }
  while (static_cast<int>(out.boxes.size()) < pcfg.count) {
    double x1 = ux(rng), x2 = ux(rng), y1 = uy(rng), y2 = uy(rng);
    if (x1 > x2) std::swap(x1, x2);
    if (y1 > y2) std::swap(y1, y2);
    clamp_span(x1, x2, W);
    clamp_span(y1, y2, H);
    out.boxes.emplace_back(x1, y1, x2, y2);
  }
  return out;
}

Dataset generate_dataset(const WorldConfig& cfg, const ProposalConfig& pcfg,
                         const DatasetSpec& spec, uint64_t seed) {
  cfg.validate();
  pcfg.validate();
  spec.validate();
  if (spec.shots * cfg.num_classes > spec.train_images)
    throw std::invalid_argument("generate_dataset: shots * num_classes exceeds train_images");

  Dataset ds;
  ds.world = cfg;
  ds.proposals_cfg = pcfg;
  ds.spec = spec;
  ds.seed = seed;
  std::mt19937_64 rng(seed);

  const int total = spec.train_images + spec.test_images;
  for (int id = 0; id < total; ++id) {
    SceneRecord scene;
    scene.id = id;
    scene.tier = Tier::weak;
    const auto placed = place_objects(cfg, rng);
    scene.grid = render(cfg, placed, rng);
    for (const auto& p : placed) scene.gt.push_back({p.class_id, p.box});
    for (const auto& p : placed) scene.labels.push_back(p.class_id);
    std::sort(scene.labels.begin(), scene.labels.end());
    scene.labels.erase(std::unique(scene.labels.begin(), scene.labels.end()),
                       scene.labels.end());
    ProposalSet props = propose(cfg, scene, pcfg, rng);
    if (id < spec.train_images) {
      ds.train.push_back(std::move(scene));
      ds.train_proposals.push_back(std::move(props));
    } else {
      ds.test.push_back(std::move(scene));
      ds.test_proposals.push_back(std::move(props));
    }
  }

  if (spec.shots > 0) {
    std::vector<int> avail(cfg.num_classes, 0);
    for (const auto& s : ds.train)
      for (int c : s.labels) ++avail[c];
    for (int c = 0; c < cfg.num_classes; ++c)
      if (avail[c] < spec.shots)
        throw std::runtime_error("generate_dataset: class " + std::to_string(c) + " appears in " +
                                 std::to_string(avail[c]) + " train images, need " +
                                 std::to_string(spec.shots) + " shots");
    std::vector<int> order(cfg.num_classes);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (avail[a] != avail[b]) return avail[a] < avail[b];
      return a < b;
    });
    std::vector<int> strong_count(cfg.num_classes, 0);
    for (int c : order) {
      for (size_t i = 0; i < ds.train.size() && strong_count[c] < spec.shots; ++i) {
        SceneRecord& s = ds.train[i];
        if (s.tier == Tier::strong) continue;
        if (std::find(s.labels.begin(), s.labels.end(), c) == s.labels.end()) continue;
        s.tier = Tier::strong;
        for (int c2 : s.labels) ++strong_count[c2];
      }
      if (strong_count[c] < spec.shots)
        throw std::runtime_error("generate_dataset: infeasible shot assignment for class " +
                                 std::to_string(c));
    }
  }
  return ds;
}

FeatureGrid make_feature_grid(const WorldConfig& cfg, const SceneRecord& scene) {
  return FeatureGrid::from_values(cfg.height, cfg.width, cfg.channels, scene.grid);
}

}  // namespace msod
