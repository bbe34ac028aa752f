#include "msod/config_io.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace msod {

namespace {

void require_keys(const nlohmann::json& j, const std::set<std::string>& known,
                  const std::string& section) {
  if (!j.is_object()) throw std::invalid_argument("config section " + section + " must be an object");
  for (const auto& [key, value] : j.items())
    if (!known.count(key))
      throw std::invalid_argument("unknown config key \"" + key + "\" in " + section);
}

template <class T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

const char* difficulty_name(Difficulty d) {
  switch (d) {
    case Difficulty::easy: return "easy";
    case Difficulty::standard: return "standard";
    case Difficulty::hard: return "hard";
  }
  return "standard";
}

Difficulty difficulty_from_name(const std::string& s) {
  if (s == "easy") return Difficulty::easy;
  if (s == "standard") return Difficulty::standard;
  if (s == "hard") return Difficulty::hard;
  throw std::invalid_argument("unknown difficulty \"" + s + "\"");
}

}  // namespace

nlohmann::json world_to_json(const WorldConfig& cfg) {
  return {{"difficulty", difficulty_name(cfg.difficulty)},
          {"height", cfg.height},
          {"width", cfg.width},
          {"channels", cfg.channels},
          {"num_classes", cfg.num_classes},
          {"min_objects", cfg.min_objects},
          {"max_objects", cfg.max_objects},
          {"min_side", cfg.min_side},
          {"max_side", cfg.max_side},
          {"overlap_cap", cfg.overlap_cap},
          {"noise_sigma", cfg.noise_sigma},
          {"appearance_jitter", cfg.appearance_jitter},
          {"signature_amplitude", cfg.signature_amplitude},
          {"distinct_classes", cfg.distinct_classes}};
}

WorldConfig world_from_json(const nlohmann::json& j) {
  require_keys(j, {"difficulty", "height", "width", "channels", "num_classes", "min_objects",
                   "max_objects", "min_side", "max_side", "overlap_cap", "noise_sigma",
                   "appearance_jitter", "signature_amplitude", "distinct_classes"},
               "world");
  WorldConfig cfg;
  if (j.contains("difficulty"))
    cfg = WorldConfig::preset(difficulty_from_name(j.at("difficulty").get<std::string>()));
  get_if(j, "height", cfg.height);
  get_if(j, "width", cfg.width);
  get_if(j, "channels", cfg.channels);
  get_if(j, "num_classes", cfg.num_classes);
  get_if(j, "min_objects", cfg.min_objects);
  get_if(j, "max_objects", cfg.max_objects);
  get_if(j, "min_side", cfg.min_side);
  get_if(j, "max_side", cfg.max_side);
  get_if(j, "overlap_cap", cfg.overlap_cap);
  get_if(j, "noise_sigma", cfg.noise_sigma);
  get_if(j, "appearance_jitter", cfg.appearance_jitter);
  get_if(j, "signature_amplitude", cfg.signature_amplitude);
  get_if(j, "distinct_classes", cfg.distinct_classes);
  return cfg;
}

nlohmann::json proposals_to_json(const ProposalConfig& cfg) {
  return {{"count", cfg.count},
          {"jitter_sigma", cfg.jitter_sigma},
          {"fg_fraction", cfg.fg_fraction}};
}

ProposalConfig proposals_from_json(const nlohmann::json& j) {
  require_keys(j, {"count", "jitter_sigma", "fg_fraction"}, "proposals");
  ProposalConfig cfg;
  get_if(j, "count", cfg.count);
  get_if(j, "jitter_sigma", cfg.jitter_sigma);
  get_if(j, "fg_fraction", cfg.fg_fraction);
  return cfg;
}

nlohmann::json dataset_spec_to_json(const DatasetSpec& spec) {
  return {{"train_images", spec.train_images},
          {"test_images", spec.test_images},
          {"shots", spec.shots}};
}

DatasetSpec dataset_spec_from_json(const nlohmann::json& j) {
  require_keys(j, {"train_images", "test_images", "shots"}, "dataset");
  DatasetSpec spec;
  get_if(j, "train_images", spec.train_images);
  get_if(j, "test_images", spec.test_images);
  get_if(j, "shots", spec.shots);
  return spec;
}

nlohmann::json train_to_json(const TrainConfig& cfg) {
  return {{"epochs", cfg.epochs},
          {"lr", cfg.lr},
          {"lr_drop_epoch", cfg.lr_drop_epoch},
          {"lr_drop_factor", cfg.lr_drop_factor},
          {"momentum", cfg.momentum},
          {"weight_decay", cfg.weight_decay},
          {"oam_weak", cfg.oam_weak},
          {"oam_strong", cfg.oam_strong},
          {"sup_strong", cfg.sup_strong},
          {"sup_semi", cfg.sup_semi},
          {"proposal",
           {{"sample_size", cfg.proposal.sample_size},
            {"fg_cap", cfg.proposal.fg_cap},
            {"fg_iou", cfg.proposal.fg_iou},
            {"second_pass_top", cfg.proposal.second_pass_top}}},
          {"encoder_dim", cfg.encoder_dim},
          {"pool_grid", cfg.pool_grid},
          {"flags", {{"se", cfg.flags.se}, {"bba", cfg.flags.bba}, {"oam", cfg.flags.oam}}},
          {"seed", cfg.seed},
          {"pseudogen",
           {{"score_threshold", cfg.pseudogen.score_threshold},
            {"nms_threshold", cfg.pseudogen.nms_threshold},
            {"match_iou", cfg.pseudogen.match_iou},
            {"max_updates", cfg.pseudogen.max_updates},
            {"stable_needed", cfg.pseudogen.stable_needed}}},
          {"detect",
           {{"score_threshold", cfg.detect.score_threshold},
            {"nms_threshold", cfg.detect.nms_threshold},
            {"max_dets", cfg.detect.max_dets}}},
          {"eval_period", cfg.eval_period},
          {"checkpoint_period", cfg.checkpoint_period}};
}

TrainConfig train_from_json(const nlohmann::json& j) {
  require_keys(j, {"epochs", "lr", "lr_drop_epoch", "lr_drop_factor", "momentum", "weight_decay",
                   "oam_weak", "oam_strong", "sup_strong", "sup_semi", "proposal", "encoder_dim",
                   "pool_grid", "flags", "seed", "pseudogen", "detect", "eval_period",
                   "checkpoint_period"},
               "train");
  TrainConfig cfg;
  get_if(j, "epochs", cfg.epochs);
  get_if(j, "lr", cfg.lr);
  get_if(j, "lr_drop_epoch", cfg.lr_drop_epoch);
  get_if(j, "lr_drop_factor", cfg.lr_drop_factor);
  get_if(j, "momentum", cfg.momentum);
  get_if(j, "weight_decay", cfg.weight_decay);
  get_if(j, "oam_weak", cfg.oam_weak);
  get_if(j, "oam_strong", cfg.oam_strong);
  get_if(j, "sup_strong", cfg.sup_strong);
  get_if(j, "sup_semi", cfg.sup_semi);
  if (j.contains("proposal")) {
    const auto& p = j.at("proposal");
    require_keys(p, {"sample_size", "fg_cap", "fg_iou", "second_pass_top"}, "train.proposal");
    get_if(p, "sample_size", cfg.proposal.sample_size);
    get_if(p, "fg_cap", cfg.proposal.fg_cap);
    get_if(p, "fg_iou", cfg.proposal.fg_iou);
    get_if(p, "second_pass_top", cfg.proposal.second_pass_top);
  }
  get_if(j, "encoder_dim", cfg.encoder_dim);
  get_if(j, "pool_grid", cfg.pool_grid);
  if (j.contains("flags")) {
    const auto& f = j.at("flags");
    require_keys(f, {"se", "bba", "oam"}, "train.flags");
    get_if(f, "se", cfg.flags.se);
    get_if(f, "bba", cfg.flags.bba);
    get_if(f, "oam", cfg.flags.oam);
  }
  get_if(j, "seed", cfg.seed);
  if (j.contains("pseudogen")) {
    const auto& p = j.at("pseudogen");
    require_keys(p, {"score_threshold", "nms_threshold", "match_iou", "max_updates",
                     "stable_needed"},
                 "train.pseudogen");
    get_if(p, "score_threshold", cfg.pseudogen.score_threshold);
    get_if(p, "nms_threshold", cfg.pseudogen.nms_threshold);
    get_if(p, "match_iou", cfg.pseudogen.match_iou);
    get_if(p, "max_updates", cfg.pseudogen.max_updates);
    get_if(p, "stable_needed", cfg.pseudogen.stable_needed);
  }
  if (j.contains("detect")) {
    const auto& d = j.at("detect");
    require_keys(d, {"score_threshold", "nms_threshold", "max_dets"}, "train.detect");
    get_if(d, "score_threshold", cfg.detect.score_threshold);
    get_if(d, "nms_threshold", cfg.detect.nms_threshold);
    get_if(d, "max_dets", cfg.detect.max_dets);
  }
  get_if(j, "eval_period", cfg.eval_period);
  get_if(j, "checkpoint_period", cfg.checkpoint_period);
  return cfg;
}

nlohmann::json full_config_to_json(const FullConfig& cfg) {
  return {{"config_version", kConfigVersion},
          {"world", world_to_json(cfg.world)},
          {"proposals", proposals_to_json(cfg.proposals)},
          {"dataset", dataset_spec_to_json(cfg.dataset)},
          {"train", train_to_json(cfg.train)}};
}

FullConfig load_config(const std::string& path) {
  const std::string text = read_text_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
  require_keys(j, {"config_version", "world", "proposals", "dataset", "train"}, "top level");
  if (j.contains("config_version") && j.at("config_version").get<int>() != kConfigVersion) {
    std::ostringstream msg;
    msg << path << ": config_version " << j.at("config_version").get<int>() << " != "
        << kConfigVersion;
    throw std::invalid_argument(msg.str());
  }
  FullConfig cfg;
  if (j.contains("world")) cfg.world = world_from_json(j.at("world"));
  if (j.contains("proposals")) cfg.proposals = proposals_from_json(j.at("proposals"));
  if (j.contains("dataset")) cfg.dataset = dataset_spec_from_json(j.at("dataset"));
  if (j.contains("train")) cfg.train = train_from_json(j.at("train"));
  return cfg;
}

void save_config(const FullConfig& cfg, const std::string& path) {
  write_text_file(path, full_config_to_json(cfg).dump(2) + "\n");
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << content;
  if (!f) throw std::runtime_error("write failed for " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

}  // namespace msod
