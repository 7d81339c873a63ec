#include "mops/dataset.hpp"

#include <filesystem>
#include <stdexcept>

namespace mops::data {

namespace {

nlohmann::json centers_to_json(const std::vector<sim::Vec2>& centers) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : centers) arr.push_back({c.x, c.y});
  return arr;
}

std::vector<sim::Vec2> centers_from_json(const nlohmann::json& arr) {
  std::vector<sim::Vec2> out;
  out.reserve(arr.size());
  for (const auto& p : arr) out.push_back({p[0].get<double>(), p[1].get<double>()});
  return out;
}

}  // namespace

DatasetWriter::DatasetWriter(const std::string& dir, nlohmann::json meta)
    : dir_(dir), meta_(std::move(meta)) {
  std::filesystem::create_directories(dir);
  index_.open(dir + "/index.jsonl", std::ios::binary);
  blob_.open(dir + "/obs.bin", std::ios::binary);
  if (!index_ || !blob_) throw std::runtime_error("DatasetWriter: cannot open files in " + dir);
}

DatasetWriter::~DatasetWriter() {
  if (!finalized_) {
    try {
      finalize();
    } catch (...) {
    }
  }
}

uint64_t DatasetWriter::add_observation(const render::Observation& obs) {
  const std::vector<uint8_t> bytes = render::quantize(obs);
  const uint64_t offset = blob_offset_;
  blob_.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  blob_offset_ += bytes.size();
  return offset;
}

void DatasetWriter::add_record(const DatasetRecord& rec) {
  nlohmann::json j;
  j["s"] = centers_to_json(rec.state_t);
  j["s1"] = centers_to_json(rec.state_t1);
  j["a"] = rec.action;
  j["o"] = rec.obs_t;
  j["o1"] = rec.obs_t1;
  j["c"] = rec.canon_t;
  j["c1"] = rec.canon_t1;
  j["rp"] = rec.rand_seed;
  index_ << j.dump() << "\n";
  ++n_records_;
}

void DatasetWriter::finalize() {
  if (finalized_) return;
  finalized_ = true;
  meta_["n_records"] = n_records_;
  meta_["blob_bytes"] = blob_offset_;
  meta_["format_version"] = 1;
  std::ofstream meta_out(dir_ + "/meta.json", std::ios::binary);
  meta_out << meta_.dump(2) << "\n";
  index_.close();
  blob_.close();
  if (!meta_out) throw std::runtime_error("DatasetWriter: failed writing meta.json");
}

Dataset Dataset::open(const std::string& dir) {
  Dataset d;
  {
    std::ifstream meta_in(dir + "/meta.json");
    if (!meta_in) throw std::runtime_error("Dataset::open: missing meta.json in " + dir);
    meta_in >> d.meta_;
  }
  std::ifstream index(dir + "/index.jsonl");
  if (!index) throw std::runtime_error("Dataset::open: missing index.jsonl in " + dir);
  std::string line;
  while (std::getline(index, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    DatasetRecord rec;
    rec.state_t = centers_from_json(j.at("s"));
    rec.state_t1 = centers_from_json(j.at("s1"));
    const auto& a = j.at("a");
    for (int i = 0; i < 4; ++i) rec.action[i] = a[i].get<double>();
    rec.obs_t = j.at("o").get<uint64_t>();
    rec.obs_t1 = j.at("o1").get<uint64_t>();
    rec.canon_t = j.at("c").get<int64_t>();
    rec.canon_t1 = j.at("c1").get<int64_t>();
    rec.rand_seed = j.at("rp").get<uint64_t>();
    d.records_.push_back(std::move(rec));
  }
  d.blob_path_ = dir + "/obs.bin";
  d.blob_.open(d.blob_path_, std::ios::binary);
  if (!d.blob_) throw std::runtime_error("Dataset::open: missing obs.bin in " + dir);
  return d;
}

render::Observation Dataset::load_observation(uint64_t offset) const {
  constexpr size_t kBytes = static_cast<size_t>(render::kImageSize) * render::kImageSize * 3;
  std::vector<uint8_t> buf(kBytes);
  blob_.seekg(static_cast<std::streamoff>(offset));
  blob_.read(reinterpret_cast<char*>(buf.data()), kBytes);
  if (!blob_) throw std::runtime_error("Dataset: truncated observation blob");
  return render::dequantize(buf.data());
}

sim::EnvConfig Dataset::env_config() const {
  sim::EnvConfig cfg;
  const auto& e = meta_.at("env");
  cfg.n_objects = e.at("n_objects").get<int>();
  cfg.table_w = e.at("table_w").get<double>();
  cfg.table_h = e.at("table_h").get<double>();
  cfg.object_radius = e.at("object_radius").get<double>();
  cfg.paddle_width = e.at("paddle_width").get<double>();
  cfg.d_min = e.at("d_min").get<double>();
  cfg.d_max = e.at("d_max").get<double>();
  cfg.cluster_side = e.at("cluster_side").get<double>();
  cfg.seed = e.at("seed").get<uint64_t>();
  return cfg;
}

}  // namespace mops::data
