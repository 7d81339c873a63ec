#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "mops/render.hpp"
#include "mops/sim.hpp"

namespace mops::data {

// One scripted transition. Observation fields are byte offsets into the
// dataset's blob file; canonical offsets are -1 when not stored.
struct DatasetRecord {
  std::vector<sim::Vec2> state_t, state_t1;
  std::array<double, 4> action{};  // raw (x, y, theta, d)
  uint64_t obs_t = 0, obs_t1 = 0;
  int64_t canon_t = -1, canon_t1 = -1;
  uint64_t rand_seed = 0;  // seed of the episode's RandParams draw
};

// JSON-Lines index + u8 observation blob writer. The index is written
// deterministically so identical configs produce byte-identical files.
class DatasetWriter {
 public:
  DatasetWriter(const std::string& dir, nlohmann::json meta);
  ~DatasetWriter();

  uint64_t add_observation(const render::Observation& obs);
  void add_record(const DatasetRecord& rec);
  void finalize();
  size_t records_written() const { return n_records_; }

 private:
  std::string dir_;
  nlohmann::json meta_;
  std::ofstream index_, blob_;
  uint64_t blob_offset_ = 0;
  size_t n_records_ = 0;
  bool finalized_ = false;
};

class Dataset {
 public:
  static Dataset open(const std::string& dir);

  size_t size() const { return records_.size(); }
  const DatasetRecord& record(size_t i) const { return records_[i]; }
  render::Observation load_observation(uint64_t offset) const;
  const nlohmann::json& meta() const { return meta_; }
  sim::EnvConfig env_config() const;

 private:
  std::vector<DatasetRecord> records_;
  nlohmann::json meta_;
  std::string blob_path_;
  mutable std::ifstream blob_;
};

}  // namespace mops::data
