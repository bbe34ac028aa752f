#include "msod/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace msod {

namespace {

constexpr char kMagic[4] = {'M', 'S', 'C', '1'};
constexpr uint32_t kVersion = 1;

template <class T>
void write_pod(std::ostream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& f) {
  T v;
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw std::runtime_error("checkpoint file truncated");
  return v;
}

nlohmann::json manifest_of(const ParamSet& t) {
  nlohmann::json m = nlohmann::json::array();
  for_each_tensor(const_cast<ParamSet&>(t), [&](const char* name, std::vector<double>& v) {
    m.push_back({{"name", name}, {"count", v.size()}});
  });
  return m;
}

void write_tensors(std::ostream& f, const ParamSet& t) {
  for_each_tensor(const_cast<ParamSet&>(t), [&](const char*, std::vector<double>& v) {
    f.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
  });
}

void read_tensors(std::istream& f, ParamSet& t, const nlohmann::json& manifest) {
  size_t entry = 0;
  for_each_tensor(t, [&](const char* name, std::vector<double>& v) {
    if (entry >= manifest.size())
      throw std::runtime_error("checkpoint manifest too short at " + std::string(name));
    const auto& m = manifest.at(entry++);
    if (m.at("name").get<std::string>() != name || m.at("count").get<size_t>() != v.size())
      throw std::runtime_error("checkpoint manifest mismatch at " + std::string(name));
    f.read(reinterpret_cast<char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(double)));
  });
  if (!f) throw std::runtime_error("checkpoint file truncated");
  if (entry != manifest.size()) throw std::runtime_error("checkpoint manifest too long");
}

}  // namespace

void write_checkpoint(const Checkpoint& ck, const std::string& path) {
  nlohmann::json header;
  header["version"] = kVersion;
  header["model"] = {{"channels", ck.params.cfg.channels},
                     {"pool_grid", ck.params.cfg.pool_grid},
                     {"encoder_dim", ck.params.cfg.encoder_dim},
                     {"num_classes", ck.params.cfg.num_classes},
                     {"shared_encoder", ck.params.cfg.shared_encoder}};
  header["flags"] = {{"se", ck.flags.se}, {"bba", ck.flags.bba}, {"oam", ck.flags.oam}};
  header["seed"] = ck.seed;
  header["epoch"] = ck.epoch;
  header["has_velocity"] = ck.has_velocity;
  header["tensors"] = manifest_of(ck.params.t);
  const std::string hs = header.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.write(kMagic, 4);
  write_pod<uint32_t>(f, kVersion);
  write_pod<uint64_t>(f, hs.size());
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  write_tensors(f, ck.params.t);
  if (ck.has_velocity) write_tensors(f, ck.velocity);
  if (!f) throw std::runtime_error("write failed for " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error(path + ": not a checkpoint file");
  const uint32_t version = read_pod<uint32_t>(f);
  if (version != kVersion)
    throw std::runtime_error(path + ": unsupported checkpoint version " +
                             std::to_string(version));
  const uint64_t hlen = read_pod<uint64_t>(f);
  std::string hs(hlen, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw std::runtime_error("checkpoint file truncated");
  const nlohmann::json header = nlohmann::json::parse(hs);

  Checkpoint ck;
  const auto& m = header.at("model");
  ck.params.cfg.channels = m.at("channels").get<int>();
  ck.params.cfg.pool_grid = m.at("pool_grid").get<int>();
  ck.params.cfg.encoder_dim = m.at("encoder_dim").get<int>();
  ck.params.cfg.num_classes = m.at("num_classes").get<int>();
  ck.params.cfg.shared_encoder = m.at("shared_encoder").get<bool>();
  ck.params.cfg.validate();
  const auto& fl = header.at("flags");
  ck.flags.se = fl.at("se").get<bool>();
  ck.flags.bba = fl.at("bba").get<bool>();
  ck.flags.oam = fl.at("oam").get<bool>();
  ck.seed = header.at("seed").get<uint64_t>();
  ck.epoch = header.at("epoch").get<int>();
  ck.has_velocity = header.at("has_velocity").get<bool>();

  // Allocate the tensors at their configured shapes, then overwrite.
  std::mt19937_64 shape_rng(0);
  ck.params.t = ModelParams::init(ck.params.cfg, shape_rng).t;
  read_tensors(f, ck.params.t, header.at("tensors"));
  if (ck.has_velocity) {
    ck.velocity = zeros_like(ck.params.t);
    read_tensors(f, ck.velocity, header.at("tensors"));
  }
  return ck;
}

}  // namespace msod
