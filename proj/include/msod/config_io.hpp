#pragma once

// JSON config file handling. Parsing is strict: unknown keys anywhere are an
// error, as is a config_version mismatch.

#include <string>

#include <json.hpp>

#include "msod/synthworld.hpp"
#include "msod/trainer.hpp"

namespace msod {

constexpr int kConfigVersion = 1;

struct FullConfig {
  WorldConfig world;
  ProposalConfig proposals;
  DatasetSpec dataset;
  TrainConfig train;
};

nlohmann::json world_to_json(const WorldConfig& cfg);
nlohmann::json proposals_to_json(const ProposalConfig& cfg);
nlohmann::json dataset_spec_to_json(const DatasetSpec& spec);
nlohmann::json train_to_json(const TrainConfig& cfg);
nlohmann::json full_config_to_json(const FullConfig& cfg);

WorldConfig world_from_json(const nlohmann::json& j);
ProposalConfig proposals_from_json(const nlohmann::json& j);
DatasetSpec dataset_spec_from_json(const nlohmann::json& j);
TrainConfig train_from_json(const nlohmann::json& j);

// Missing sections fall back to defaults; present sections may be partial,
// but any unknown key is rejected.
FullConfig load_config(const std::string& path);
void save_config(const FullConfig& cfg, const std::string& path);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace msod
