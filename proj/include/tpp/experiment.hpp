#ifndef TPP_EXPERIMENT_HPP
#define TPP_EXPERIMENT_HPP

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tpp/dataset.hpp"
#include "tpp/featmerge.hpp"
#include "tpp/fisher.hpp"
#include "tpp/fusion.hpp"
#include "tpp/gmm.hpp"
#include "tpp/metrics.hpp"
#include "tpp/parallel.hpp"
#include "tpp/tppnet.hpp"

namespace tpp {

// Seed streams per stage; combined with the root seed through Rng::derive so
// every stage is independently reproducible.
enum class SeedStream : std::uint64_t {
  gmm = 1,
  merger = 2,
  train = 3,
  train_appearance = 4,
  train_motion = 5,
  svm = 6,
};

inline std::uint64_t stage_seed(std::uint64_t root, SeedStream stream) {
  return Rng::derive(root, static_cast<std::uint64_t>(stream));
}

// Keeps a deterministic uniform subset (ascending original order) when more
// than `cap` items are available.
inline std::vector<std::size_t> sample_indices(std::size_t total, std::size_t cap,
                                               std::uint64_t seed) {
  std::vector<std::size_t> idx(total);
  for (std::size_t i = 0; i < total; ++i) idx[i] = i;
  if (total <= cap) return idx;
  Rng rng(seed);
  rng.shuffle(idx);
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  return idx;
}

// Fits the mixture on up to max_descriptors of the pooled descriptors, drawn
// uniformly at random with the given seed. The codebook sampling policy is
// ours; nothing upstream prescribes one.
inline GmmModel fit_gmm_sampled(std::vector<std::vector<double>> pool, std::size_t dim,
                                std::size_t components, std::size_t max_descriptors,
                                std::uint64_t seed, std::size_t max_iters = 100) {
  if (pool.empty()) throw std::runtime_error("fit-gmm: no trajectory descriptors");
  const auto keep = sample_indices(pool.size(), max_descriptors, Rng::derive(seed, 0));
  Matrix points(keep.size(), dim);
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (pool[keep[i]].size() != dim)
      throw std::runtime_error("fit-gmm: descriptor dimension changes across inputs");
    std::copy(pool[keep[i]].begin(), pool[keep[i]].end(), points.row(i).begin());
  }
  return fit_gmm(points, components, Rng::derive(seed, 1), max_iters);
}

inline GmmModel stage_fit_gmm(const DatasetManifest& manifest, std::size_t components,
                              std::size_t max_descriptors, std::uint64_t seed,
                              std::size_t max_iters = 100) {
  std::vector<std::vector<double>> pool;
  std::size_t dim = 0;
  for (const auto* video : manifest.split_videos(Split::train)) {
    if (!video->trajectory_path) continue;
    auto records = load_trajectories(manifest.resolve(*video->trajectory_path));
    for (auto& rec : records) {
      if (dim == 0) dim = rec.descriptor.size();
      pool.push_back(std::move(rec.descriptor));
    }
  }
  if (pool.empty()) throw std::runtime_error("fit-gmm: no trajectory descriptors in train split");
  return fit_gmm_sampled(std::move(pool), dim, components, max_descriptors,
                         stage_seed(seed, SeedStream::gmm), max_iters);
}

// Builds the merge map from frame-level Fisher vectors of the train split:
// up to max_samples frames, each labelled with its video's first label.
inline MergeMap stage_fit_merger(const DatasetManifest& manifest, const GmmModel& gmm,
                                 std::size_t target_dim, std::size_t max_samples,
                                 std::uint64_t seed) {
  struct FrameRef {
    const ManifestVideo* video;
    std::size_t frame;
  };
  std::vector<FrameRef> frames;
  for (const auto* video : manifest.split_videos(Split::train)) {
    if (!video->trajectory_path) continue;
    const Matrix appearance = load_frame_features(manifest.resolve(video->frame_feature_path));
    for (std::size_t t = 0; t < appearance.rows(); ++t) frames.push_back({video, t});
  }
  if (frames.empty()) throw std::runtime_error("fit-merger: no usable train frames");

  const std::uint64_t s = stage_seed(seed, SeedStream::merger);
  const auto keep = sample_indices(frames.size(), max_samples, Rng::derive(s, 0));
  const std::size_t full_dim = 2 * gmm.components() * gmm.dim();
  Matrix samples(keep.size(), full_dim);
  std::vector<std::size_t> labels(keep.size());

  // Trajectories are reloaded per video, grouped so each file is read once.
  const ManifestVideo* current = nullptr;
  std::vector<TrajectoryRecord> records;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    const FrameRef& ref = frames[keep[i]];
    if (ref.video != current) {
      records = load_trajectories(manifest.resolve(*ref.video->trajectory_path));
      current = ref.video;
    }
    const FisherVector fv = frame_motion_feature(records, ref.frame, gmm);
    std::copy(fv.values.begin(), fv.values.end(), samples.row(i).begin());
    labels[i] = manifest.class_index(ref.video->labels.front());
  }

  // Classes can drop out of a subsample; remap to the classes present.
  std::vector<std::size_t> remap(manifest.classes.size(), SIZE_MAX);
  std::size_t next = 0;
  for (std::size_t& l : labels) {
    if (remap[l] == SIZE_MAX) remap[l] = next++;
    l = remap[l];
  }
  return fit_merger(samples, labels, target_dim, Rng::derive(s, 1));
}

// Encodes per-frame motion features for every video that has trajectories,
// writing <out_dir>/<id>.tppf. The frame count comes from the appearance
// file so the two modalities always align. Returns the encoded video count.
inline std::size_t stage_encode_motion(const DatasetManifest& manifest, const GmmModel& gmm,
                                       const MergeMap* merger,
                                       const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::size_t encoded = 0;
  for (const auto& video : manifest.videos) {
    if (!video.trajectory_path) continue;
    const Matrix appearance = load_frame_features(manifest.resolve(video.frame_feature_path));
    const auto records = load_trajectories(manifest.resolve(*video.trajectory_path));
    const Matrix features =
        build_video_motion_features(records, appearance.rows(), gmm, merger);
    save_frame_features(out_dir / (video.id + ".tppf"), features);
    ++encoded;
  }
  if (encoded == 0) throw std::runtime_error("encode-motion: no video has trajectories");
  return encoded;
}

inline std::vector<LabeledSequence> gather_split(
    const DatasetManifest& manifest, Split split, Modality modality,
    const std::optional<std::filesystem::path>& motion_dir) {
  std::vector<LabeledSequence> sequences;
  for (const auto* video : manifest.split_videos(split)) {
    VideoSample sample = load_video_sample(manifest, *video, modality, motion_dir);
    // Training is single-label; multi-label videos contribute their first label.
    sequences.push_back({sample_features(sample, modality), sample.label_indices.front()});
  }
  if (sequences.empty())
    throw std::runtime_error(split == Split::train ? "no train videos" : "no test videos");
  return sequences;
}

inline TrainResult stage_train(const DatasetManifest& manifest, Modality modality,
                               const std::optional<std::filesystem::path>& motion_dir,
                               TrainConfig cfg) {
  const auto sequences = gather_split(manifest, Split::train, modality, motion_dir);
  return train(sequences, manifest.classes.size(), cfg);
}

// Scores every test video with `score` (a distribution per video) and
// evaluates the requested metric.
template <typename ScoreFn>
inline EvalReport evaluate_scored(const DatasetManifest& manifest, const std::string& metric,
                                  ScoreFn&& score) {
  const auto videos = manifest.split_videos(Split::test);
  if (videos.empty()) throw std::runtime_error("eval: no test videos");
  const std::size_t c = manifest.classes.size();

  Matrix scores(videos.size(), c);
  std::vector<std::vector<std::size_t>> label_sets(videos.size());
  std::vector<std::string> ids(videos.size());
  parallel_for(videos.size(), [&](std::size_t i) {
    const std::vector<double> probs = score(*videos[i]);
    if (probs.size() != c) throw std::runtime_error("eval: scorer returned wrong class count");
    std::copy(probs.begin(), probs.end(), scores.row(i).begin());
    for (const auto& label : videos[i]->labels)
      label_sets[i].push_back(manifest.class_index(label));
    ids[i] = videos[i]->id;
  });

  if (metric == "map") return evaluate_map(scores, label_sets, ids, manifest.classes);
  if (metric == "accuracy") {
    std::vector<std::size_t> predictions(videos.size());
    std::vector<std::size_t> truth(videos.size());
    for (std::size_t i = 0; i < videos.size(); ++i) {
      const auto row = scores.row(i);
      predictions[i] =
          static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      truth[i] = label_sets[i].front();
    }
    return evaluate_accuracy(predictions, truth, manifest.classes);
  }
  throw std::invalid_argument("unknown metric '" + metric + "' (expected map|accuracy)");
}

inline EvalReport stage_eval(const DatasetManifest& manifest, const NetParams& net,
                             Modality modality,
                             const std::optional<std::filesystem::path>& motion_dir,
                             const std::string& metric) {
  return evaluate_scored(manifest, metric, [&](const ManifestVideo& video) {
    const VideoSample sample = load_video_sample(manifest, video, modality, motion_dir);
    return predict(net, sample_features(sample, modality));
  });
}

inline EvalReport stage_eval_late_fusion(const DatasetManifest& manifest,
                                         const NetParams& appearance_net,
                                         const NetParams& motion_net, FusionWeights weights,
                                         const std::optional<std::filesystem::path>& motion_dir,
                                         const std::string& metric) {
  return evaluate_scored(manifest, metric, [&](const ManifestVideo& video) {
    const VideoSample sample =
        load_video_sample(manifest, video, Modality::early_fusion, motion_dir);
    const auto p_a = predict(appearance_net, *sample.appearance);
    const auto p_m = predict(motion_net, *sample.motion);
    return late_fuse(p_a, p_m, weights);
  });
}

// Video-level Fisher vector over all of a video's trajectories (the global
// encoding used next to the per-frame motion net).
inline std::vector<double> video_global_fv(const DatasetManifest& manifest,
                                           const ManifestVideo& video, const GmmModel& gmm,
                                           const MergeMap* merger) {
  if (!video.trajectory_path)
    throw std::runtime_error("video '" + video.id + "': no trajectories for global encoding");
  const auto records = load_trajectories(manifest.resolve(*video.trajectory_path));
  FisherVector fv;
  if (records.empty()) {
    fv.values.assign(2 * gmm.components() * gmm.dim(), 0.0);
    fv.normalized = true;
  } else {
    Matrix descriptors(records.size(), gmm.dim());
    for (std::size_t i = 0; i < records.size(); ++i)
      std::copy(records[i].descriptor.begin(), records[i].descriptor.end(),
                descriptors.row(i).begin());
    fv = fv_normalize(fv_encode(gmm, descriptors));
  }
  if (merger) return apply_merger(*merger, fv.values);
  return fv.values;
}

// ---------------------------------------------------------------------------
// run: declarative experiment driver. Stages execute in pipeline order with
// one root seed; later stages consume earlier outputs unless the config names
// an explicit artifact instead.

struct ExperimentOutcome {
  std::optional<EvalReport> eval;
  std::optional<EvalReport> fusion;
  std::filesystem::path out_dir;
};

namespace detail {

inline std::filesystem::path resolve_against(const std::filesystem::path& base,
                                             const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

inline TrainConfig parse_train_config(const nlohmann::json& j, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.momentum = j.value("momentum", cfg.momentum);
  cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.hidden_dim = j.value("hidden", cfg.hidden_dim);
  cfg.pyramid.fine_segments = j.value("b", cfg.pyramid.fine_segments);
  cfg.pyramid.pool = pool_op_from_string(j.value("pool", std::string("mean")));
  cfg.seed = seed;
  cfg.validate();
  return cfg;
}

inline nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json j;
  j["metric"] = report.metric;
  j["aggregate"] = report.aggregate;
  nlohmann::json per_class = nlohmann::json::object();
  for (std::size_t i = 0; i < report.class_names.size(); ++i)
    if (report.per_class[i] >= 0.0) per_class[report.class_names[i]] = report.per_class[i];
  j["per_class"] = std::move(per_class);
  if (!report.excluded_classes.empty()) j["excluded_classes"] = report.excluded_classes;
  if (report.confusion.rows() > 0) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < report.confusion.rows(); ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (std::size_t c = 0; c < report.confusion.cols(); ++c)
        row.push_back(static_cast<std::uint64_t>(report.confusion(r, c)));
      rows.push_back(std::move(row));
    }
    j["confusion"] = std::move(rows);
  }
  return j;
}

}  // namespace detail

// Executes the stages declared in a JSON experiment config. Models, encoded
// features, metrics.json and run.log land in the config's out_dir; reruns
// with the same config and seed are byte-identical.
inline ExperimentOutcome run_experiment(const std::filesystem::path& config_path) {
  std::ifstream in(config_path);
  if (!in) throw io_error(config_path, "cannot open for reading");
  nlohmann::json cfg;
  try {
    cfg = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw io_error(config_path, std::string("config parse error: ") + e.what());
  }

  const std::filesystem::path base =
      config_path.has_parent_path() ? config_path.parent_path() : ".";
  if (!cfg.contains("manifest")) throw io_error(config_path, "config needs 'manifest'");
  if (!cfg.contains("out_dir")) throw io_error(config_path, "config needs 'out_dir'");
  const std::uint64_t root_seed = cfg.value("seed", 0ULL);
  const auto out_dir = detail::resolve_against(base, cfg["out_dir"].get<std::string>());
  std::filesystem::create_directories(out_dir);

  const DatasetManifest manifest =
      load_manifest(detail::resolve_against(base, cfg["manifest"].get<std::string>()));

  std::ostringstream log;
  log << "experiment seed=" << root_seed << " manifest=" << cfg["manifest"].get<std::string>()
      << " classes=" << manifest.classes.size() << " videos=" << manifest.videos.size() << "\n";

  ExperimentOutcome outcome;
  outcome.out_dir = out_dir;

  std::optional<GmmModel> gmm;
  std::optional<MergeMap> merger;
  std::optional<std::filesystem::path> motion_dir;
  std::optional<NetParams> net;
  std::optional<Modality> net_modality;

  // Stages may also point at pre-built artifacts instead of an earlier stage.
  auto gmm_for = [&](const nlohmann::json& j, const char* who) -> const GmmModel& {
    if (j.contains("gmm")) {
      gmm = load_gmm(detail::resolve_against(base, j["gmm"].get<std::string>()));
      return *gmm;
    }
    if (!gmm)
      throw std::runtime_error(std::string(who) +
                               ": needs a mixture model (add a fit_gmm stage or a 'gmm' path)");
    return *gmm;
  };
  auto merger_for = [&](const nlohmann::json& j) -> const MergeMap* {
    if (j.contains("merger")) {
      merger = load_merger(detail::resolve_against(base, j["merger"].get<std::string>()));
      return &*merger;
    }
    return merger ? &*merger : nullptr;
  };

  if (cfg.contains("fit_gmm")) {
    const auto& j = cfg["fit_gmm"];
    gmm = stage_fit_gmm(manifest, j.value("components", 256u),
                        j.value("max_descriptors", 100000u), root_seed,
                        j.value("max_iters", 100u));
    save_gmm(out_dir / "model.gmm", *gmm);
    log << "fit_gmm: K=" << gmm->components() << " p=" << gmm->dim() << " -> model.gmm\n";
  }

  if (cfg.contains("fit_merger")) {
    const auto& j = cfg["fit_merger"];
    if (!j.contains("k")) throw std::runtime_error("fit_merger: needs 'k'");
    const auto& g = gmm_for(j, "fit_merger");
    merger = stage_fit_merger(manifest, g, j["k"].get<std::size_t>(),
                              j.value("max_samples", 5000u), root_seed);
    save_merger(out_dir / "merger.tpmm", *merger);
    log << "fit_merger: " << merger->source_dim << " -> " << merger->target_dim
        << " dims -> merger.tpmm\n";
  }

  if (cfg.contains("encode_motion")) {
    const auto& j = cfg["encode_motion"];
    const auto& g = gmm_for(j, "encode_motion");
    motion_dir = out_dir / "motion";
    const std::size_t encoded = stage_encode_motion(manifest, g, merger_for(j), *motion_dir);
    log << "encode_motion: " << encoded << " videos -> motion/\n";
  }

  auto motion_dir_for = [&](const nlohmann::json& j,
                            Modality modality) -> std::optional<std::filesystem::path> {
    if (modality == Modality::appearance) return std::nullopt;
    if (j.contains("motion_dir"))
      return detail::resolve_against(base, j["motion_dir"].get<std::string>());
    if (!motion_dir)
      throw std::runtime_error(
          "train/eval: motion features required (add an encode_motion stage or a 'motion_dir')");
    return motion_dir;
  };

  if (cfg.contains("train")) {
    const auto& j = cfg["train"];
    const Modality modality = modality_from_string(j.value("modality", std::string("appearance")));
    const TrainConfig tc =
        detail::parse_train_config(j, stage_seed(root_seed, SeedStream::train));
    const TrainResult result = stage_train(manifest, modality, motion_dir_for(j, modality), tc);
    net = result.params;
    net_modality = modality;
    save_net(out_dir / "net.tpnp", *net);
    log << "train: modality=" << j.value("modality", std::string("appearance"))
        << " epochs=" << tc.epochs << " final_loss=" << result.epoch_losses.back()
        << " -> net.tpnp\n";
  }

  nlohmann::json metrics = nlohmann::json::object();

  if (cfg.contains("eval")) {
    const auto& j = cfg["eval"];
    if (j.contains("net")) {
      net = load_net(detail::resolve_against(base, j["net"].get<std::string>()));
      net_modality = modality_from_string(j.value("modality", std::string("appearance")));
    }
    if (!net)
      throw std::runtime_error("eval: needs a trained net (add a train stage or a 'net' path)");
    const Modality modality =
        j.contains("modality") ? modality_from_string(j["modality"].get<std::string>())
                               : *net_modality;
    const std::string metric = j.value("metric", std::string("map"));
    outcome.eval = stage_eval(manifest, *net, modality, motion_dir_for(j, modality), metric);
    metrics["eval"] = detail::report_to_json(*outcome.eval);
    log << "eval: metric=" << metric << " aggregate=" << outcome.eval->aggregate << "\n";
  }

  if (cfg.contains("fuse")) {
    const auto& j = cfg["fuse"];
    const std::string mode = j.value("mode", std::string("late"));
    if (mode != "late")
      throw std::runtime_error("fuse stage: only 'late' is declarative; use the CLI for "
                               "score-avg fusion");
    const FusionWeights weights(j.value("w_appearance", 1.0 / 3.0));
    const nlohmann::json train_params = j.contains("train") ? j["train"] : nlohmann::json::object();
    const auto mdir = motion_dir_for(j, Modality::motion);

    const TrainConfig cfg_a = detail::parse_train_config(
        train_params, stage_seed(root_seed, SeedStream::train_appearance));
    const TrainConfig cfg_m = detail::parse_train_config(
        train_params, stage_seed(root_seed, SeedStream::train_motion));
    const TrainResult net_a = stage_train(manifest, Modality::appearance, std::nullopt, cfg_a);
    const TrainResult net_m = stage_train(manifest, Modality::motion, mdir, cfg_m);
    save_net(out_dir / "net_appearance.tpnp", net_a.params);
    save_net(out_dir / "net_motion.tpnp", net_m.params);

    const std::string metric = j.value("metric", std::string("map"));
    outcome.fusion =
        stage_eval_late_fusion(manifest, net_a.params, net_m.params, weights, mdir, metric);
    metrics["fuse"] = detail::report_to_json(*outcome.fusion);
    log << "fuse: mode=late w_appearance=" << weights.appearance << " metric=" << metric
        << " aggregate=" << outcome.fusion->aggregate << "\n";
  }

  if (!metrics.empty()) {
    std::ofstream mout(out_dir / "metrics.json");
    mout << metrics.dump(2) << "\n";
    if (!mout) throw io_error(out_dir / "metrics.json", "write failed");
  }
  {
    std::ofstream lout(out_dir / "run.log");
    lout << log.str();
    if (!lout) throw io_error(out_dir / "run.log", "write failed");
  }
  return outcome;
}

}  // namespace tpp

#endif  // TPP_EXPERIMENT_HPP
