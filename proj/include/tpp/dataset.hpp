#ifndef TPP_DATASET_HPP
#define TPP_DATASET_HPP

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tpp/binio.hpp"
#include "tpp/fusion.hpp"
#include "tpp/matrix.hpp"

namespace tpp {

// Frame feature file (TPPF): magic "TPPF", u32 version = 1, u32 n, u32 d,
// then n*d little-endian f32, row-major.
inline Matrix load_frame_features(const std::filesystem::path& path) {
  auto in = open_input(path);
  expect_magic(in, "TPPF", path);
  const std::uint32_t version = read_u32(in, path);
  if (version != 1) throw io_error(path, "unsupported version " + std::to_string(version));
  const std::uint32_t n = read_u32(in, path);
  const std::uint32_t d = read_u32(in, path);
  std::vector<float> payload(static_cast<std::size_t>(n) * d);
  read_f32(in, payload, path);
  expect_eof(in, path);

  Matrix m(n, d);
  for (std::size_t i = 0; i < payload.size(); ++i) {
    if (!std::isfinite(payload[i])) throw io_error(path, "non-finite value in payload");
    m.data()[i] = static_cast<double>(payload[i]);
  }
  return m;
}

inline void save_frame_features(const std::filesystem::path& path, const Matrix& m) {
  auto out = open_output(path);
  write_magic(out, "TPPF");
  write_u32(out, 1);
  write_u32(out, static_cast<std::uint32_t>(m.rows()));
  write_u32(out, static_cast<std::uint32_t>(m.cols()));
  std::vector<float> payload(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) payload[i] = static_cast<float>(m.data()[i]);
  write_f32(out, payload);
  if (!out) throw io_error(path, "write failed");
}

enum class Split { train, test };

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + s + "' (expected train|test)");
}

struct ManifestVideo {
  std::string id;
  std::vector<std::string> labels;  // at least one, each a known class name
  std::filesystem::path frame_feature_path;
  std::optional<std::filesystem::path> trajectory_path;
  Split split = Split::train;
};

struct DatasetManifest {
  std::vector<std::string> classes;  // class index = position in this list
  std::vector<ManifestVideo> videos;
  std::filesystem::path base_dir;  // relative paths resolve against this

  std::size_t class_index(const std::string& name) const {
    const auto it = std::find(classes.begin(), classes.end(), name);
    if (it == classes.end()) throw std::invalid_argument("unknown class '" + name + "'");
    return static_cast<std::size_t>(it - classes.begin());
  }

  std::filesystem::path resolve(const std::filesystem::path& p) const {
    return p.is_absolute() ? p : base_dir / p;
  }

  std::vector<const ManifestVideo*> split_videos(Split split) const {
    std::vector<const ManifestVideo*> out;
    for (const auto& v : videos)
      if (v.split == split) out.push_back(&v);
    return out;
  }
};

// Manifest JSON: top-level "classes" (array of names) and "videos" (array of
// objects with id, labels, frame_feature_path, optional trajectory_path,
// split). Relative paths resolve against the manifest's directory and are
// checked for existence here.
inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  auto fail = [&](const std::string& what) { return io_error(path, what); };

  std::ifstream in(path);
  if (!in) throw fail("cannot open for reading");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw fail(std::string("manifest parse error: ") + e.what());
  }

  DatasetManifest manifest;
  manifest.base_dir = path.has_parent_path() ? path.parent_path() : ".";
  if (!doc.contains("classes") || !doc["classes"].is_array())
    throw fail("manifest needs a 'classes' array");
  for (const auto& c : doc["classes"]) manifest.classes.push_back(c.get<std::string>());
  if (manifest.classes.empty()) throw fail("manifest lists no classes");
  {
    std::set<std::string> unique(manifest.classes.begin(), manifest.classes.end());
    if (unique.size() != manifest.classes.size()) throw fail("duplicate class name");
  }

  if (!doc.contains("videos") || !doc["videos"].is_array())
    throw fail("manifest needs a 'videos' array");
  std::set<std::string> seen_ids;
  for (const auto& entry : doc["videos"]) {
    ManifestVideo v;
    try {
      v.id = entry.at("id").get<std::string>();
      for (const auto& label : entry.at("labels")) {
        const std::string name = label.get<std::string>();
        if (std::find(manifest.classes.begin(), manifest.classes.end(), name) ==
            manifest.classes.end())
          throw fail("video '" + v.id + "': label '" + name + "' not in classes");
        v.labels.push_back(name);
      }
      v.frame_feature_path = entry.at("frame_feature_path").get<std::string>();
      if (entry.contains("trajectory_path") && !entry["trajectory_path"].is_null())
        v.trajectory_path = entry["trajectory_path"].get<std::string>();
      v.split = split_from_string(entry.at("split").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw fail("video entry " + std::to_string(manifest.videos.size()) + ": " + e.what());
    }
    if (v.labels.empty()) throw fail("video '" + v.id + "': needs at least one label");
    if (!seen_ids.insert(v.id).second) throw fail("duplicate video id '" + v.id + "'");
    if (!std::filesystem::exists(manifest.resolve(v.frame_feature_path)))
      throw fail("video '" + v.id + "': missing feature file " + v.frame_feature_path.string());
    if (v.trajectory_path && !std::filesystem::exists(manifest.resolve(*v.trajectory_path)))
      throw fail("video '" + v.id + "': missing trajectory file " + v.trajectory_path->string());
    manifest.videos.push_back(std::move(v));
  }
  return manifest;
}

inline void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  nlohmann::json doc;
  doc["classes"] = manifest.classes;
  doc["videos"] = nlohmann::json::array();
  for (const auto& v : manifest.videos) {
    nlohmann::json entry;
    entry["id"] = v.id;
    entry["labels"] = v.labels;
    entry["frame_feature_path"] = v.frame_feature_path.generic_string();
    if (v.trajectory_path) entry["trajectory_path"] = v.trajectory_path->generic_string();
    entry["split"] = v.split == Split::train ? "train" : "test";
    doc["videos"].push_back(std::move(entry));
  }
  std::ofstream out(path);
  if (!out) throw io_error(path, "cannot open for writing");
  out << doc.dump(2) << "\n";
  if (!out) throw io_error(path, "write failed");
}

enum class Modality { appearance, motion, early_fusion };

inline Modality modality_from_string(const std::string& s) {
  if (s == "appearance") return Modality::appearance;
  if (s == "motion") return Modality::motion;
  if (s == "early-fusion") return Modality::early_fusion;
  throw std::invalid_argument("unknown modality '" + s +
                              "' (expected appearance|motion|early-fusion)");
}

struct VideoSample {
  std::string id;
  std::optional<Matrix> appearance;
  std::optional<Matrix> motion;
  std::vector<std::size_t> label_indices;
};

// Loads the features a modality needs. Motion features are the per-frame
// encodings written by the encode stage, looked up as <motion_dir>/<id>.tppf.
inline VideoSample load_video_sample(const DatasetManifest& manifest, const ManifestVideo& video,
                                     Modality modality,
                                     const std::optional<std::filesystem::path>& motion_dir) {
  VideoSample sample;
  sample.id = video.id;
  for (const auto& label : video.labels)
    sample.label_indices.push_back(manifest.class_index(label));

  if (modality == Modality::appearance || modality == Modality::early_fusion)
    sample.appearance = load_frame_features(manifest.resolve(video.frame_feature_path));
  if (modality == Modality::motion || modality == Modality::early_fusion) {
    if (!motion_dir)
      throw std::invalid_argument("video '" + video.id +
                                  "': motion features requested but no motion directory given");
    const auto path = *motion_dir / (video.id + ".tppf");
    if (!std::filesystem::exists(path))
      throw std::runtime_error("video '" + video.id + "': missing encoded motion features " +
                               path.string() + " (run encode-motion first)");
    sample.motion = load_frame_features(path);
  }

  const std::size_t n = sample.appearance ? sample.appearance->rows() : sample.motion->rows();
  if (n == 0) throw std::runtime_error("video '" + video.id + "': empty feature sequence");
  if (sample.appearance && sample.motion && sample.appearance->rows() != sample.motion->rows())
    throw std::runtime_error("video '" + video.id + "': modalities disagree on frame count (" +
                             std::to_string(sample.appearance->rows()) + " vs " +
                             std::to_string(sample.motion->rows()) + ")");
  return sample;
}

// The matrix a net consumes for this modality.
inline Matrix sample_features(const VideoSample& sample, Modality modality) {
  switch (modality) {
    case Modality::appearance:
      return *sample.appearance;
    case Modality::motion:
      return *sample.motion;
    case Modality::early_fusion:
      return early_fuse(*sample.appearance, *sample.motion);
  }
  throw std::logic_error("sample_features: bad modality");
}

}  // namespace tpp

#endif  // TPP_DATASET_HPP
