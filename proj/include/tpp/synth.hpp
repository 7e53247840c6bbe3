#ifndef TPP_SYNTH_HPP
#define TPP_SYNTH_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tpp/dataset.hpp"
#include "tpp/fisher.hpp"
#include "tpp/matrix.hpp"
#include "tpp/rng.hpp"

namespace tpp {

// Synthetic dataset for demos and smoke runs. Each class gets an early and a
// late appearance motif (so temporal order carries signal) and its own
// trajectory descriptor cluster. Writes manifest.json, features/*.tppf and
// traj/*.txt under `dir`.
struct SynthSpec {
  std::size_t num_classes = 2;
  std::size_t train_per_class = 6;
  std::size_t test_per_class = 2;
  std::size_t appearance_dim = 8;
  std::size_t descriptor_dim = 5;
  std::size_t min_frames = 10;
  std::size_t max_frames = 20;
  std::size_t descriptors_per_frame = 2;
  double noise = 0.25;
  std::uint64_t seed = 1;
};

inline DatasetManifest write_synthetic_dataset(const std::filesystem::path& dir,
                                               const SynthSpec& spec) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "features");
  fs::create_directories(dir / "traj");
  Rng rng(spec.seed);

  Matrix early_motifs(spec.num_classes, spec.appearance_dim);
  Matrix late_motifs(spec.num_classes, spec.appearance_dim);
  Matrix descriptor_centers(spec.num_classes, spec.descriptor_dim);
  for (double& v : early_motifs.data()) v = 2.0 * rng.next_gaussian();
  for (double& v : late_motifs.data()) v = 2.0 * rng.next_gaussian();
  for (double& v : descriptor_centers.data()) v = 3.0 * rng.next_gaussian();

  DatasetManifest manifest;
  manifest.base_dir = dir;
  for (std::size_t c = 0; c < spec.num_classes; ++c)
    manifest.classes.push_back("class" + std::to_string(c));

  const std::size_t per_class = spec.train_per_class + spec.test_per_class;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t v = 0; v < per_class; ++v) {
      const std::string id = "c" + std::to_string(c) + "_v" + std::to_string(v);
      const std::size_t span = spec.max_frames - spec.min_frames + 1;
      const std::size_t n = spec.min_frames + static_cast<std::size_t>(rng.next_below(span));

      Matrix appearance(n, spec.appearance_dim);
      for (std::size_t t = 0; t < n; ++t) {
        const auto motif = t < n / 2 ? early_motifs.row(c) : late_motifs.row(c);
        auto row = appearance.row(t);
        for (std::size_t j = 0; j < spec.appearance_dim; ++j)
          row[j] = motif[j] + spec.noise * rng.next_gaussian();
      }
      save_frame_features(dir / "features" / (id + ".tppf"), appearance);

      std::vector<TrajectoryRecord> records;
      records.reserve(n * spec.descriptors_per_frame);
      for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t k = 0; k < spec.descriptors_per_frame; ++k) {
          TrajectoryRecord rec;
          rec.frame_index = t;
          rec.descriptor.resize(spec.descriptor_dim);
          for (std::size_t j = 0; j < spec.descriptor_dim; ++j)
            rec.descriptor[j] = descriptor_centers(c, j) + spec.noise * rng.next_gaussian();
          records.push_back(std::move(rec));
        }
      }
      save_trajectories(dir / "traj" / (id + ".txt"), records, spec.descriptor_dim);

      ManifestVideo video;
      video.id = id;
      video.labels = {manifest.classes[c]};
      video.frame_feature_path = fs::path("features") / (id + ".tppf");
      video.trajectory_path = fs::path("traj") / (id + ".txt");
      video.split = v < spec.train_per_class ? Split::train : Split::test;
      manifest.videos.push_back(std::move(video));
    }
  }

  save_manifest(dir / "manifest.json", manifest);
  return manifest;
}

}  // namespace tpp

#endif  // TPP_SYNTH_HPP
