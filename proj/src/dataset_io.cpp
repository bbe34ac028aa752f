#include "msod/dataset_io.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "msod/config_io.hpp"

namespace msod {

namespace {

constexpr char kMagic[4] = {'M', 'S', 'D', '1'};
constexpr uint32_t kVersion = 1;

template <class T>
void write_pod(std::ostream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& f) {
  T v;
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw std::runtime_error("dataset file truncated");
  return v;
}

void write_box(std::ostream& f, const Box& b) {
  write_pod(f, b.x1);
  write_pod(f, b.y1);
  write_pod(f, b.x2);
  write_pod(f, b.y2);
}

Box read_box(std::istream& f) {
  const double x1 = read_pod<double>(f);
  const double y1 = read_pod<double>(f);
  const double x2 = read_pod<double>(f);
  const double y2 = read_pod<double>(f);
  const auto b = Box::make(x1, y1, x2, y2);
  if (!b) throw std::runtime_error("dataset file holds an invalid box");
  return *b;
}

void write_scene(std::ostream& f, const SceneRecord& s) {
  write_pod<int32_t>(f, s.id);
  write_pod<uint8_t>(f, static_cast<uint8_t>(s.tier));
  write_pod<uint32_t>(f, static_cast<uint32_t>(s.gt.size()));
  for (const auto& g : s.gt) {
    write_pod<int32_t>(f, g.class_id);
    write_box(f, g.box);
  }
  write_pod<uint32_t>(f, static_cast<uint32_t>(s.labels.size()));
  for (int c : s.labels) write_pod<int32_t>(f, c);
  write_pod<uint64_t>(f, s.grid.size());
  f.write(reinterpret_cast<const char*>(s.grid.data()),
          static_cast<std::streamsize>(s.grid.size() * sizeof(double)));
}

SceneRecord read_scene(std::istream& f) {
  SceneRecord s;
  s.id = read_pod<int32_t>(f);
  s.tier = static_cast<Tier>(read_pod<uint8_t>(f));
  const uint32_t n_gt = read_pod<uint32_t>(f);
  for (uint32_t i = 0; i < n_gt; ++i) {
    GtObject g;
    g.class_id = read_pod<int32_t>(f);
    g.box = read_box(f);
    s.gt.push_back(g);
  }
  const uint32_t n_labels = read_pod<uint32_t>(f);
  for (uint32_t i = 0; i < n_labels; ++i) s.labels.push_back(read_pod<int32_t>(f));
  const uint64_t n_grid = read_pod<uint64_t>(f);
  s.grid.resize(n_grid);
  f.read(reinterpret_cast<char*>(s.grid.data()),
         static_cast<std::streamsize>(n_grid * sizeof(double)));
  if (!f) throw std::runtime_error("dataset file truncated");
  return s;
}

void write_proposals(std::ostream& f, const ProposalSet& p) {
  write_pod<int32_t>(f, p.image_id);
  write_pod<uint32_t>(f, static_cast<uint32_t>(p.boxes.size()));
  for (const auto& b : p.boxes) write_box(f, b);
}

ProposalSet read_proposals(std::istream& f) {
  ProposalSet p;
  p.image_id = read_pod<int32_t>(f);
  const uint32_t n = read_pod<uint32_t>(f);
  for (uint32_t i = 0; i < n; ++i) p.boxes.push_back(read_box(f));
  return p;
}

}  // namespace

void write_dataset(const Dataset& ds, const std::string& path) {
  nlohmann::json header;
  header["version"] = kVersion;
  header["seed"] = ds.seed;
  header["world"] = world_to_json(ds.world);
  header["proposals"] = proposals_to_json(ds.proposals_cfg);
  header["spec"] = dataset_spec_to_json(ds.spec);
  header["train_count"] = ds.train.size();
  header["test_count"] = ds.test.size();
  const std::string hs = header.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.write(kMagic, 4);
  write_pod<uint32_t>(f, kVersion);
  write_pod<uint64_t>(f, hs.size());
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& s : ds.train) write_scene(f, s);
  for (const auto& s : ds.test) write_scene(f, s);
  for (const auto& p : ds.train_proposals) write_proposals(f, p);
  for (const auto& p : ds.test_proposals) write_proposals(f, p);
  if (!f) throw std::runtime_error("write failed for " + path);
}

Dataset read_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error(path + ": not a dataset file");
  const uint32_t version = read_pod<uint32_t>(f);
  if (version != kVersion)
    throw std::runtime_error(path + ": unsupported dataset version " + std::to_string(version));
  const uint64_t hlen = read_pod<uint64_t>(f);
  std::string hs(hlen, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw std::runtime_error("dataset file truncated");
  const nlohmann::json header = nlohmann::json::parse(hs);

  Dataset ds;
  ds.seed = header.at("seed").get<uint64_t>();
  ds.world = world_from_json(header.at("world"));
  ds.proposals_cfg = proposals_from_json(header.at("proposals"));
  ds.spec = dataset_spec_from_json(header.at("spec"));
  const auto train_count = header.at("train_count").get<size_t>();
  const auto test_count = header.at("test_count").get<size_t>();
  for (size_t i = 0; i < train_count; ++i) ds.train.push_back(read_scene(f));
  for (size_t i = 0; i < test_count; ++i) ds.test.push_back(read_scene(f));
  for (size_t i = 0; i < train_count; ++i) ds.train_proposals.push_back(read_proposals(f));
  for (size_t i = 0; i < test_count; ++i) ds.test_proposals.push_back(read_proposals(f));
  return ds;
}

}  // namespace msod
