// Command line front end for the pipeline: Fisher-vector motion encoding,
// feature-merging reduction, temporal-pyramid network training, fusion,
// pooled-feature SVM baselines and evaluation.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tpp/tpp.hpp"

namespace fs = std::filesystem;

namespace {

tpp::TrainConfig load_train_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw tpp::io_error(path, "cannot open for reading");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw tpp::io_error(path, std::string("config parse error: ") + e.what());
  }
  return tpp::detail::parse_train_config(j, j.value("seed", 0ULL));
}

std::vector<std::size_t> load_label_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw tpp::io_error(path, "cannot open for reading");
  std::vector<std::size_t> labels;
  long long value = 0;
  while (in >> value) {
    if (value < 0) throw tpp::io_error(path, "labels must be non-negative integers");
    labels.push_back(static_cast<std::size_t>(value));
  }
  if (labels.empty()) throw tpp::io_error(path, "no labels");
  return labels;
}

void print_report(const tpp::EvalReport& report) {
  std::cout << "metric: " << report.metric << "\n";
  for (std::size_t i = 0; i < report.class_names.size(); ++i) {
    if (report.per_class[i] < 0.0) continue;
    std::cout << "  " << report.class_names[i] << ": " << report.per_class[i] << "\n";
  }
  for (const auto& name : report.excluded_classes)
    std::cout << "  " << name << ": excluded (no positives)\n";
  std::cout << "aggregate: " << report.aggregate << "\n";
}

std::optional<fs::path> opt_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return fs::path(s);
}

// Pooled-feature vector for a baseline mode; gfv is the whole-video encoding.
struct BaselineSetup {
  tpp::Modality modality = tpp::Modality::appearance;
  bool pyramid = false;
  bool global_fv = false;
};

BaselineSetup baseline_setup(const std::string& mode) {
  if (mode == "aap") return {tpp::Modality::appearance, false, false};
  if (mode == "atp") return {tpp::Modality::appearance, true, false};
  if (mode == "tap") return {tpp::Modality::motion, false, false};
  if (mode == "ttp") return {tpp::Modality::motion, true, false};
  if (mode == "gfv") return {tpp::Modality::motion, false, true};
  throw std::invalid_argument("unknown baseline mode '" + mode +
                              "' (expected aap|atp|tap|ttp|gfv)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"temporal pyramid pooling video classification pipeline"};
  app.require_subcommand(1);

  int exit_code = 0;
  try {
    // fit-gmm ---------------------------------------------------------------
    auto* fit_gmm_cmd = app.add_subcommand("fit-gmm", "fit a diagonal GMM on trajectory files");
    std::vector<std::string> gmm_inputs;
    std::size_t gmm_k = 256;
    std::uint64_t gmm_seed = 0;
    std::size_t gmm_cap = 100000;
    std::size_t gmm_iters = 100;
    std::string gmm_out;
    fit_gmm_cmd->add_option("--input", gmm_inputs, "trajectory file(s)")->required();
    fit_gmm_cmd->add_option("--k", gmm_k, "number of mixture components");
    fit_gmm_cmd->add_option("--seed", gmm_seed, "random seed");
    fit_gmm_cmd->add_option("--max-descriptors", gmm_cap, "descriptor sample cap");
    fit_gmm_cmd->add_option("--max-iters", gmm_iters, "EM iteration cap");
    fit_gmm_cmd->add_option("--out", gmm_out, "output model path")->required();
    fit_gmm_cmd->callback([&] {
      std::vector<std::vector<double>> pool;
      std::size_t dim = 0;
      for (const auto& input : gmm_inputs) {
        auto records = tpp::load_trajectories(input);
        for (auto& rec : records) {
          if (dim == 0) dim = rec.descriptor.size();
          pool.push_back(std::move(rec.descriptor));
        }
      }
      const tpp::GmmModel model =
          tpp::fit_gmm_sampled(std::move(pool), dim, gmm_k, gmm_cap, gmm_seed, gmm_iters);
      tpp::save_gmm(gmm_out, model);
      std::cout << "wrote " << gmm_out << " (K=" << model.components() << ", p=" << model.dim()
                << ")\n";
    });

    // fit-merger ------------------------------------------------------------
    auto* merger_cmd =
        app.add_subcommand("fit-merger", "fit the feature-merging reduction on labelled vectors");
    std::string merger_features, merger_labels, merger_out;
    std::size_t merger_k = 4096;
    std::uint64_t merger_seed = 0;
    merger_cmd->add_option("--features", merger_features, "feature matrix (.tppf, one row per sample)")
        ->required();
    merger_cmd->add_option("--labels", merger_labels, "text file with one class index per row")
        ->required();
    merger_cmd->add_option("--k", merger_k, "target dimension");
    merger_cmd->add_option("--seed", merger_seed, "random seed");
    merger_cmd->add_option("--out", merger_out, "output map path")->required();
    merger_cmd->callback([&] {
      const tpp::Matrix features = tpp::load_frame_features(merger_features);
      const auto labels = load_label_file(merger_labels);
      const tpp::MergeMap map = tpp::fit_merger(features, labels, merger_k, merger_seed);
      tpp::save_merger(merger_out, map);
      std::cout << "wrote " << merger_out << " (" << map.source_dim << " -> " << map.target_dim
                << ")\n";
    });

    // encode-motion ----------------------------------------------------------
    auto* encode_cmd =
        app.add_subcommand("encode-motion", "encode per-frame motion features for a manifest");
    std::string encode_manifest, encode_gmm, encode_merger, encode_out;
    encode_cmd->add_option("--manifest", encode_manifest, "dataset manifest")->required();
    encode_cmd->add_option("--gmm", encode_gmm, "mixture model")->required();
    encode_cmd->add_option("--merger", encode_merger, "optional merge map");
    encode_cmd->add_option("--out-dir", encode_out, "output directory")->required();
    encode_cmd->callback([&] {
      const auto manifest = tpp::load_manifest(encode_manifest);
      const auto gmm = tpp::load_gmm(encode_gmm);
      std::optional<tpp::MergeMap> merger;
      if (!encode_merger.empty()) merger = tpp::load_merger(encode_merger);
      const std::size_t encoded =
          tpp::stage_encode_motion(manifest, gmm, merger ? &*merger : nullptr, encode_out);
      std::cout << "encoded " << encoded << " videos into " << encode_out << "\n";
    });

    // train -------------------------------------------------------------------
    auto* train_cmd = app.add_subcommand("train", "train the encoding + pyramid pooling net");
    std::string train_manifest, train_config, train_modality = "appearance", train_out;
    std::string train_motion_dir;
    train_cmd->add_option("--manifest", train_manifest, "dataset manifest")->required();
    train_cmd->add_option("--config", train_config, "training config JSON")->required();
    train_cmd->add_option("--modality", train_modality, "appearance|motion|early-fusion");
    train_cmd->add_option("--motion-dir", train_motion_dir, "encoded motion feature directory");
    train_cmd->add_option("--out", train_out, "output net path")->required();
    train_cmd->callback([&] {
      const auto manifest = tpp::load_manifest(train_manifest);
      const auto cfg = load_train_config(train_config);
      const auto modality = tpp::modality_from_string(train_modality);
      const tpp::TrainResult result =
          tpp::stage_train(manifest, modality, opt_path(train_motion_dir), cfg);
      tpp::save_net(train_out, result.params);
      std::cout << "wrote " << train_out << " (final epoch loss " << result.epoch_losses.back()
                << ")\n";
    });

    // eval ---------------------------------------------------------------------
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a trained net on the test split");
    std::string eval_manifest, eval_net, eval_metric = "map", eval_modality = "appearance";
    std::string eval_motion_dir;
    eval_cmd->add_option("--manifest", eval_manifest, "dataset manifest")->required();
    eval_cmd->add_option("--net", eval_net, "trained net")->required();
    eval_cmd->add_option("--metric", eval_metric, "map|accuracy");
    eval_cmd->add_option("--modality", eval_modality, "appearance|motion|early-fusion");
    eval_cmd->add_option("--motion-dir", eval_motion_dir, "encoded motion feature directory");
    eval_cmd->callback([&] {
      const auto manifest = tpp::load_manifest(eval_manifest);
      const auto net = tpp::load_net(eval_net);
      const auto report =
          tpp::stage_eval(manifest, net, tpp::modality_from_string(eval_modality),
                          opt_path(eval_motion_dir), eval_metric);
      print_report(report);
    });

    // baseline -------------------------------------------------------------------
    auto* baseline_cmd =
        app.add_subcommand("baseline", "pooled-feature linear SVM baselines (aap|atp|tap|ttp|gfv)");
    std::string bl_manifest, bl_mode = "aap", bl_metric = "map", bl_motion_dir, bl_gmm, bl_merger;
    std::string bl_svm_out, bl_pool = "mean";
    std::size_t bl_b = 5;
    double bl_lambda = 1e-4;
    std::size_t bl_epochs = 20;
    std::uint64_t bl_seed = 0;
    baseline_cmd->add_option("--manifest", bl_manifest, "dataset manifest")->required();
    baseline_cmd->add_option("--mode", bl_mode, "aap|atp|tap|ttp|gfv");
    baseline_cmd->add_option("--b", bl_b, "fine segment count for pyramid modes");
    baseline_cmd->add_option("--pool", bl_pool, "pool op for pyramid modes (mean|max)");
    baseline_cmd->add_option("--metric", bl_metric, "map|accuracy");
    baseline_cmd->add_option("--motion-dir", bl_motion_dir, "encoded motion features (tap|ttp)");
    baseline_cmd->add_option("--gmm", bl_gmm, "mixture model (gfv)");
    baseline_cmd->add_option("--merger", bl_merger, "optional merge map (gfv)");
    baseline_cmd->add_option("--lambda", bl_lambda, "SVM regularisation strength");
    baseline_cmd->add_option("--epochs", bl_epochs, "SVM training epochs");
    baseline_cmd->add_option("--seed", bl_seed, "random seed");
    baseline_cmd->add_option("--svm-out", bl_svm_out, "save the trained SVM here");
    baseline_cmd->callback([&] {
      const auto manifest = tpp::load_manifest(bl_manifest);
      const BaselineSetup setup = baseline_setup(bl_mode);
      std::optional<tpp::GmmModel> gmm;
      std::optional<tpp::MergeMap> merger;
      if (setup.global_fv) {
        if (bl_gmm.empty()) throw std::runtime_error("baseline gfv: --gmm is required");
        gmm = tpp::load_gmm(bl_gmm);
        if (!bl_merger.empty()) merger = tpp::load_merger(bl_merger);
      }
      std::optional<tpp::PyramidSpec> pyramid;
      if (setup.pyramid) pyramid = tpp::PyramidSpec{bl_b, tpp::pool_op_from_string(bl_pool)};
      const auto motion_dir = opt_path(bl_motion_dir);

      auto pooled_features = [&](const tpp::ManifestVideo& video) {
        if (setup.global_fv)
          return tpp::video_global_fv(manifest, video, *gmm, merger ? &*merger : nullptr);
        const auto sample = tpp::load_video_sample(manifest, video, setup.modality, motion_dir);
        return tpp::pool_baseline(tpp::sample_features(sample, setup.modality), pyramid);
      };

      const auto train_videos = manifest.split_videos(tpp::Split::train);
      if (train_videos.empty()) throw std::runtime_error("baseline: no train videos");
      std::vector<std::vector<double>> rows(train_videos.size());
      std::vector<std::size_t> labels(train_videos.size());
      tpp::parallel_for(train_videos.size(), [&](std::size_t i) {
        rows[i] = pooled_features(*train_videos[i]);
        labels[i] = manifest.class_index(train_videos[i]->labels.front());
      });
      tpp::Matrix features(rows.size(), rows.front().size());
      for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy(rows[i].begin(), rows[i].end(), features.row(i).begin());

      const tpp::SvmModel svm = tpp::train_linear_svm(
          features, labels, manifest.classes.size(), bl_lambda, bl_epochs,
          tpp::stage_seed(bl_seed, tpp::SeedStream::svm));
      if (!bl_svm_out.empty()) {
        tpp::save_svm(bl_svm_out, svm);
        std::cout << "wrote " << bl_svm_out << "\n";
      }

      const auto report =
          tpp::evaluate_scored(manifest, bl_metric, [&](const tpp::ManifestVideo& video) {
            return tpp::svm_scores(svm, pooled_features(video));
          });
      print_report(report);
    });

    // fuse ----------------------------------------------------------------------
    auto* fuse_cmd = app.add_subcommand("fuse", "late fusion of two nets or net+SVM score fusion");
    std::string fu_manifest, fu_mode = "late", fu_metric = "map";
    std::string fu_net_app, fu_net_motion, fu_net, fu_svm, fu_gmm, fu_merger, fu_motion_dir;
    double fu_w_appearance = 1.0 / 3.0;
    fuse_cmd->add_option("--manifest", fu_manifest, "dataset manifest")->required();
    fuse_cmd->add_option("--mode", fu_mode, "late|score-avg");
    fuse_cmd->add_option("--w-appearance", fu_w_appearance,
                         "appearance weight for late fusion (motion gets the rest)");
    fuse_cmd->add_option("--net-appearance", fu_net_app, "appearance net (late)");
    fuse_cmd->add_option("--net-motion", fu_net_motion, "motion net (late)");
    fuse_cmd->add_option("--net", fu_net, "motion net (score-avg)");
    fuse_cmd->add_option("--svm", fu_svm, "global-encoding SVM (score-avg)");
    fuse_cmd->add_option("--gmm", fu_gmm, "mixture model (score-avg)");
    fuse_cmd->add_option("--merger", fu_merger, "optional merge map (score-avg)");
    fuse_cmd->add_option("--motion-dir", fu_motion_dir, "encoded motion feature directory");
    fuse_cmd->add_option("--metric", fu_metric, "map|accuracy");
    fuse_cmd->callback([&] {
      const auto manifest = tpp::load_manifest(fu_manifest);
      if (fu_mode == "late") {
        if (fu_net_app.empty() || fu_net_motion.empty())
          throw std::runtime_error("fuse late: --net-appearance and --net-motion are required");
        const auto net_a = tpp::load_net(fu_net_app);
        const auto net_m = tpp::load_net(fu_net_motion);
        const auto report = tpp::stage_eval_late_fusion(
            manifest, net_a, net_m, tpp::FusionWeights(fu_w_appearance),
            opt_path(fu_motion_dir), fu_metric);
        print_report(report);
      } else if (fu_mode == "score-avg") {
        if (fu_net.empty() || fu_svm.empty() || fu_gmm.empty())
          throw std::runtime_error("fuse score-avg: --net, --svm and --gmm are required");
        const auto net = tpp::load_net(fu_net);
        const auto svm = tpp::load_svm(fu_svm);
        const auto gmm = tpp::load_gmm(fu_gmm);
        std::optional<tpp::MergeMap> merger;
        if (!fu_merger.empty()) merger = tpp::load_merger(fu_merger);
        const auto motion_dir = opt_path(fu_motion_dir);
        const auto report =
            tpp::evaluate_scored(manifest, fu_metric, [&](const tpp::ManifestVideo& video) {
              const auto sample =
                  tpp::load_video_sample(manifest, video, tpp::Modality::motion, motion_dir);
              const auto net_probs = tpp::predict(net, *sample.motion);
              const auto svm_probs = tpp::svm_scores(
                  svm, tpp::video_global_fv(manifest, video, gmm, merger ? &*merger : nullptr));
              return tpp::score_fuse_avg(net_probs, svm_probs);
            });
        print_report(report);
      } else {
        throw std::runtime_error("unknown fuse mode '" + fu_mode + "' (expected late|score-avg)");
      }
    });

    // run -----------------------------------------------------------------------
    auto* run_cmd = app.add_subcommand("run", "run a declarative experiment config");
    std::string run_config;
    run_cmd->add_option("--config", run_config, "experiment config JSON")->required();
    run_cmd->callback([&] {
      const tpp::ExperimentOutcome outcome = tpp::run_experiment(run_config);
      if (outcome.eval) {
        std::cout << "eval\n";
        print_report(*outcome.eval);
      }
      if (outcome.fusion) {
        std::cout << "fuse\n";
        print_report(*outcome.fusion);
      }
      std::cout << "artifacts in " << outcome.out_dir.string() << "\n";
    });

    // synth ---------------------------------------------------------------------
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset for smoke runs");
    std::string synth_out;
    tpp::SynthSpec synth_spec;
    synth_cmd->add_option("--out-dir", synth_out, "dataset directory")->required();
    synth_cmd->add_option("--classes", synth_spec.num_classes, "number of classes");
    synth_cmd->add_option("--train-per-class", synth_spec.train_per_class, "train videos per class");
    synth_cmd->add_option("--test-per-class", synth_spec.test_per_class, "test videos per class");
    synth_cmd->add_option("--appearance-dim", synth_spec.appearance_dim, "appearance feature width");
    synth_cmd->add_option("--descriptor-dim", synth_spec.descriptor_dim, "trajectory descriptor width");
    synth_cmd->add_option("--min-frames", synth_spec.min_frames, "minimum frames per video");
    synth_cmd->add_option("--max-frames", synth_spec.max_frames, "maximum frames per video");
    synth_cmd->add_option("--seed", synth_spec.seed, "random seed");
    synth_cmd->callback([&] {
      const auto manifest = tpp::write_synthetic_dataset(synth_out, synth_spec);
      std::cout << "wrote " << manifest.videos.size() << " videos under " << synth_out << "\n";
    });

    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return exit_code;
}
