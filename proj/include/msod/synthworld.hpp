#pragma once

// Synthetic detection world. Scenes are dense feature grids with rectangular
// objects; each class paints a fixed channel signature (scaled per object),
// i.i.d. Gaussian noise goes on top. The generator also produces the proposal
// boxes and the strong/weak tier split so a dataset is one self-contained,
// seed-reproducible unit.

#include <cstdint>
#include <random>
#include <vector>

#include "msod/geometry.hpp"
#include "msod/netcore.hpp"

namespace msod {

enum class Difficulty { easy, standard, hard };

struct WorldConfig {
  int height = 64, width = 64;
  int channels = 3;
  int num_classes = 6;
  int min_objects = 1, max_objects = 4;
  double min_side = 8.0, max_side = 28.0;
  // Placement rejects a candidate whose IoU with an already placed object
  // exceeds this.
  double overlap_cap = 0.4;
  double noise_sigma = 1.2;
  // Per-object amplitude scale drawn from U[1 - j, 1 + j].
  double appearance_jitter = 0.7;
  double signature_amplitude = 0.7;
  // Forces the objects of one scene to carry distinct classes.
  bool distinct_classes = false;
  Difficulty difficulty = Difficulty::standard;

  static WorldConfig preset(Difficulty d);
  void validate() const;
};

// Fixed per-class channel pattern: axis vectors +/-e_i for the first
// 2 * channels classes, then deterministic max-min-distance unit vectors.
// Scaled by signature_amplitude. The background signature is all zeros.
std::vector<double> class_signature(const WorldConfig& cfg, int class_id);

struct GtObject {
  int class_id = 0;
  Box box;
};

struct PlacedObject {
  int class_id = 0;
  Box box;
  double amplitude = 1.0;
};

enum class Tier : uint8_t { strong = 0, weak = 1 };

struct SceneRecord {
  int id = 0;
  Tier tier = Tier::weak;
  std::vector<double> grid;  // [c][y][x], dims from the world config
  std::vector<GtObject> gt;
  std::vector<int> labels;  // sorted unique classes present
};

struct ProposalSet {
  int image_id = 0;
  std::vector<Box> boxes;
};

struct ProposalConfig {
  int count = 64;            // B
  double jitter_sigma = 0.1;  // sigma_p, corner noise relative to box size
  double fg_fraction = 0.5;   // share of proposals jittered off gt boxes
  void validate() const;
};

struct DatasetSpec {
  int train_images = 600;
  int test_images = 150;
  int shots = 10;  // strong images required per class
  void validate() const;
};

// Paints objects in order (later ones overwrite) onto a zero background and
// adds noise. A pixel belongs to a box when its center lies inside.
std::vector<double> render(const WorldConfig& cfg, const std::vector<PlacedObject>& objects,
                           std::mt19937_64& rng);

// Place objects for one scene; count drawn from [min_objects, max_objects],
// rejection sampling under the overlap cap (a candidate that cannot be placed
// after 50 tries is dropped, at least one object always lands).
std::vector<PlacedObject> place_objects(const WorldConfig& cfg, std::mt19937_64& rng);

// round(fg_fraction * B) proposals jitter the gt boxes round-robin (corner
// noise scaled by jitter_sigma times the box side, clipped to the grid); the
// remainder are uniform random boxes. Requires B >= 2 * object count.
ProposalSet propose(const WorldConfig& cfg, const SceneRecord& scene, const ProposalConfig& pcfg,
                    std::mt19937_64& rng);

struct Dataset {
  WorldConfig world;
  ProposalConfig proposals_cfg;
  DatasetSpec spec;
  uint64_t seed = 0;
  std::vector<SceneRecord> train;
  std::vector<SceneRecord> test;
  std::vector<ProposalSet> train_proposals;  // parallel to train
  std::vector<ProposalSet> test_proposals;   // parallel to test
};

// Deterministic per seed. Strong tiers are assigned greedily, rarest class
// first, scanning scenes in id order until every class is covered by at least
// `shots` strong images (an image counts for every class it contains).
// Throws when shots * num_classes > train_images or a class lacks coverage.
Dataset generate_dataset(const WorldConfig& cfg, const ProposalConfig& pcfg,
                         const DatasetSpec& spec, uint64_t seed);

FeatureGrid make_feature_grid(const WorldConfig& cfg, const SceneRecord& scene);

}  // namespace msod
