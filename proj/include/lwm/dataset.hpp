#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lwm/params.hpp"
#include "lwm/signal.hpp"

namespace lwm {

/// On-disk window container: manifest.json plus one little-endian f32 blob
/// per field. windows is [N,512,6]; the per-window label/id fields are [N].
/// String-valued ids are stored as indices into manifest string tables.
struct Dataset {
  Tensorf windows;                     // [N,512,6]
  std::vector<float> fall_mask;        // 0/1
  std::vector<float> fall_direction;   // -1 none, else FallDirection
  std::vector<float> cohort_ids;       // index into cohorts
  std::vector<float> subject_ids;      // index into subjects
  std::vector<float> recording_ids;    // index of source recording
  std::vector<float> start_samples;    // window start in canonical samples
  std::vector<std::string> cohorts, subjects;
  std::string dataset_id;

  Index size() const { return windows.numel() ? windows.dim(0) : 0; }

  void validate() const {
    const Index n = size();
    auto chk = [&](const std::vector<float>& v, const char* name) {
      if (static_cast<Index>(v.size()) != n)
        throw std::runtime_error(std::string("dataset field length mismatch: ") + name);
    };
    chk(fall_mask, "fall_mask");
    chk(fall_direction, "fall_direction");
    chk(cohort_ids, "cohort_ids");
    chk(subject_ids, "subject_ids");
    chk(recording_ids, "recording_ids");
    chk(start_samples, "start_samples");
    for (Index i = 0; i < n; ++i)
      if (fall_direction[static_cast<size_t>(i)] >= 0 &&
          fall_mask[static_cast<size_t>(i)] == 0)
        throw std::runtime_error("dataset: fall_direction set without fall_mask");
  }
};

namespace detail {

inline Index table_index(std::vector<std::string>& table, const std::string& v) {
  for (size_t i = 0; i < table.size(); ++i)
    if (table[i] == v) return static_cast<Index>(i);
  table.push_back(v);
  return static_cast<Index>(table.size()) - 1;
}

}  // namespace detail

/// Accumulates harmonized windows into a container.
class DatasetBuilder {
 public:
  explicit DatasetBuilder(std::string dataset_id) { ds_.dataset_id = std::move(dataset_id); }

  void add_recording(const std::vector<CanonicalWindow>& windows, Index recording_id) {
    for (const auto& w : windows) {
      rows_.push_back(w.values);
      ds_.fall_mask.push_back(w.fall_mask ? 1.0f : 0.0f);
      ds_.fall_direction.push_back(static_cast<float>(w.fall_direction));
      ds_.cohort_ids.push_back(
          static_cast<float>(detail::table_index(ds_.cohorts, w.cohort_label)));
      ds_.subject_ids.push_back(
          static_cast<float>(detail::table_index(ds_.subjects, w.subject_id)));
      ds_.recording_ids.push_back(static_cast<float>(recording_id));
      ds_.start_samples.push_back(
          static_cast<float>(std::llround(w.start_time * kCanonicalHz)));
    }
  }

  Dataset finish() {
    const Index n = static_cast<Index>(rows_.size());
    ds_.windows = Tensorf({n, kWindowLen, kChannels});
    for (Index i = 0; i < n; ++i)
      std::copy(rows_[static_cast<size_t>(i)].data(),
                rows_[static_cast<size_t>(i)].data() + kWindowLen * kChannels,
                ds_.windows.data() + i * kWindowLen * kChannels);
    ds_.validate();
    return std::move(ds_);
  }

 private:
  Dataset ds_;
  std::vector<Tensorf> rows_;
};

inline void save_dataset(const fs::path& dir, const Dataset& ds) {
  ds.validate();
  fs::create_directories(dir);
  const Index n = ds.size();
  nlohmann::json manifest;
  manifest["format"] = "lwm-window-container-v1";
  manifest["dataset_id"] = ds.dataset_id;
  manifest["count"] = n;
  manifest["window_len"] = kWindowLen;
  manifest["channels"] = kChannels;
  manifest["sample_hz"] = kCanonicalHz;
  manifest["cohorts"] = ds.cohorts;
  manifest["subjects"] = ds.subjects;
  manifest["fields"] = {"windows", "fall_mask", "fall_direction",
                        "cohort_ids", "subject_ids", "recording_ids", "start_samples"};
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";
  write_f32_blob(dir / "windows.f32", ds.windows.data(),
                 static_cast<size_t>(ds.windows.numel()));
  auto blob = [&](const char* name, const std::vector<float>& v) {
    write_f32_blob(dir / (std::string(name) + ".f32"), v.data(), v.size());
  };
  blob("fall_mask", ds.fall_mask);
  blob("fall_direction", ds.fall_direction);
  blob("cohort_ids", ds.cohort_ids);
  blob("subject_ids", ds.subject_ids);
  blob("recording_ids", ds.recording_ids);
  blob("start_samples", ds.start_samples);
}

inline Dataset load_dataset(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("no dataset manifest in " + dir.string());
  nlohmann::json manifest = nlohmann::json::parse(in);
  Dataset ds;
  ds.dataset_id = manifest.value("dataset_id", "");
  ds.cohorts = manifest.value("cohorts", std::vector<std::string>{});
  ds.subjects = manifest.value("subjects", std::vector<std::string>{});
  const Index n = manifest.at("count");
  auto w = read_f32_blob(dir / "windows.f32",
                         static_cast<size_t>(n * kWindowLen * kChannels));
  ds.windows = Tensorf({n, kWindowLen, kChannels});
  std::copy(w.begin(), w.end(), ds.windows.data());
  auto blob = [&](const char* name) {
    return read_f32_blob(dir / (std::string(name) + ".f32"), static_cast<size_t>(n));
  };
  ds.fall_mask = blob("fall_mask");
  ds.fall_direction = blob("fall_direction");
  ds.cohort_ids = blob("cohort_ids");
  ds.subject_ids = blob("subject_ids");
  ds.recording_ids = blob("recording_ids");
  ds.start_samples = blob("start_samples");
  ds.validate();
  return ds;
}

/// Consecutive, non-overlapping window pairs within one recording: context
/// window starting at s pairs with the window starting at s + 512. Pairs
/// never cross recordings (and hence never cross subjects).
inline std::vector<std::pair<Index, Index>> consecutive_pairs(const Dataset& ds) {
  std::map<std::pair<long, long>, Index> by_pos;  // (recording, start) -> window
  const Index n = ds.size();
  for (Index i = 0; i < n; ++i)
    by_pos[{std::lround(ds.recording_ids[static_cast<size_t>(i)]),
            std::lround(ds.start_samples[static_cast<size_t>(i)])}] = i;
  std::vector<std::pair<Index, Index>> pairs;
  for (const auto& [key, i] : by_pos) {
    auto it = by_pos.find({key.first, key.second + kWindowLen});
    if (it != by_pos.end()) pairs.emplace_back(i, it->second);
  }
  return pairs;
}

// ---- raw recording store (harmonize input) ---------------------------------

/// Raw input layout for the harmonize command: manifest.json listing
/// recordings (metadata, source rate, fall intervals, rotation matrix) and
/// one f32 blob [N,6] per recording.
inline void save_raw_store(const fs::path& dir,
                           const std::vector<RawRecording>& recs,
                           const Eigen::Matrix3d& rotation) {
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "lwm-raw-store-v1";
  std::vector<double> rot(9);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) rot[static_cast<size_t>(i * 3 + j)] = rotation(i, j);
  manifest["rotation"] = rot;
  nlohmann::json list = nlohmann::json::array();
  for (size_t r = 0; r < recs.size(); ++r) {
    const auto& rec = recs[r];
    nlohmann::json j;
    j["file"] = "rec" + std::to_string(r) + ".f32";
    j["samples"] = rec.samples.dim(0);
    j["source_hz"] = rec.source_hz;
    j["placement"] = rec.placement;
    j["subject_id"] = rec.subject_id;
    j["dataset_id"] = rec.dataset_id;
    j["cohort_label"] = rec.cohort_label;
    nlohmann::json falls = nlohmann::json::array();
    for (const auto& fi : rec.fall_intervals)
      falls.push_back({{"start", fi.start},
                       {"end", fi.end},
                       {"direction", static_cast<int>(fi.direction)}});
    j["fall_intervals"] = falls;
    list.push_back(j);
    std::vector<float> buf(static_cast<size_t>(rec.samples.numel()));
    for (Index i = 0; i < rec.samples.numel(); ++i)
      buf[static_cast<size_t>(i)] = static_cast<float>(rec.samples[i]);
    write_f32_blob(dir / j["file"].get<std::string>(), buf.data(), buf.size());
  }
  manifest["recordings"] = list;
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";
}

inline std::vector<RawRecording> load_raw_store(const fs::path& dir,
                                                Eigen::Matrix3d& rotation) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("no raw-store manifest in " + dir.string());
  nlohmann::json manifest = nlohmann::json::parse(in);
  auto rot = manifest.at("rotation").get<std::vector<double>>();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) rotation(i, j) = rot[static_cast<size_t>(i * 3 + j)];
  std::vector<RawRecording> recs;
  for (const auto& j : manifest.at("recordings")) {
    RawRecording rec;
    const Index n = j.at("samples");
    auto buf = read_f32_blob(dir / j.at("file").get<std::string>(),
                             static_cast<size_t>(n * kChannels));
    rec.samples = Tensord({n, kChannels});
    for (Index i = 0; i < rec.samples.numel(); ++i)
      rec.samples[i] = static_cast<double>(buf[static_cast<size_t>(i)]);
    rec.source_hz = j.at("source_hz");
    rec.placement = j.value("placement", "lower_back");
    rec.subject_id = j.at("subject_id");
    rec.dataset_id = j.at("dataset_id");
    rec.cohort_label = j.value("cohort_label", "");
    for (const auto& f : j.value("fall_intervals", nlohmann::json::array())) {
      FallInterval fi;
      fi.start = f.at("start");
      fi.end = f.at("end");
      fi.direction = static_cast<FallDirection>(f.at("direction").get<int>());
      rec.fall_intervals.push_back(fi);
    }
    recs.push_back(std::move(rec));
  }
  return recs;
}

}  // namespace lwm
