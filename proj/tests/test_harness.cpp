#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <fstream>

#include "oracles.hpp"
#include "testutil.hpp"
#include "tpp/dataset.hpp"
#include "tpp/experiment.hpp"
#include "tpp/metrics.hpp"
#include "tpp/synth.hpp"

using tpp::Matrix;

TEST_CASE("frame feature files") {
  testutil::TempDir dir("tppf");
  tpp::Rng rng(1);
  Matrix m(4, 3);
  for (double& v : m.data()) v = static_cast<float>(rng.next_gaussian());

  const auto path = dir.path() / "a.tppf";
  tpp::save_frame_features(path, m);

  SECTION("write-then-read round trips bitwise") {
    const Matrix loaded = tpp::load_frame_features(path);
    CHECK(loaded == m);  // values were float-representable
    const auto copy = dir.path() / "b.tppf";
    tpp::save_frame_features(copy, loaded);
    CHECK(testutil::file_bytes_equal(path, copy));
  }

  SECTION("bad magic") {
    std::ofstream out(dir.path() / "bad.tppf", std::ios::binary);
    out << "JUNKxxxxxxxxxxxxxxxx";
    out.close();
    CHECK_THROWS(tpp::load_frame_features(dir.path() / "bad.tppf"));
  }

  SECTION("truncated payload") {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream out(dir.path() / "short.tppf", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 4));
    out.close();
    CHECK_THROWS(tpp::load_frame_features(dir.path() / "short.tppf"));
  }

  SECTION("payload size mismatch: header promises more than stored") {
    // header says n=3, d=2 but only 5 floats follow
    std::ofstream out(dir.path() / "mismatch.tppf", std::ios::binary);
    out.write("TPPF", 4);
    const std::uint32_t header[3] = {1, 3, 2};
    out.write(reinterpret_cast<const char*>(header), sizeof header);
    const float values[5] = {1, 2, 3, 4, 5};
    out.write(reinterpret_cast<const char*>(values), sizeof values);
    out.close();
    CHECK_THROWS(tpp::load_frame_features(dir.path() / "mismatch.tppf"));
  }

  SECTION("non-finite payload is rejected") {
    std::ofstream out(dir.path() / "nan.tppf", std::ios::binary);
    out.write("TPPF", 4);
    const std::uint32_t header[3] = {1, 1, 2};
    out.write(reinterpret_cast<const char*>(header), sizeof header);
    const float values[2] = {1.0f, std::numeric_limits<float>::quiet_NaN()};
    out.write(reinterpret_cast<const char*>(values), sizeof values);
    out.close();
    CHECK_THROWS(tpp::load_frame_features(dir.path() / "nan.tppf"));
  }
}

namespace {

// Writes a tiny manifest with feature files in place; returns its path.
std::filesystem::path write_fixture_manifest(const std::filesystem::path& dir) {
  for (const char* id : {"vid_a", "vid_b", "vid_c"})
    tpp::save_frame_features(dir / (std::string(id) + ".tppf"), Matrix(3, 2, 1.0));
  std::ofstream out(dir / "manifest.json");
  out << R"({
  "classes": ["run", "jump"],
  "videos": [
    {"id": "vid_a", "labels": ["run"], "frame_feature_path": "vid_a.tppf", "split": "train"},
    {"id": "vid_b", "labels": ["jump", "run"], "frame_feature_path": "vid_b.tppf", "split": "train"},
    {"id": "vid_c", "labels": ["jump"], "frame_feature_path": "vid_c.tppf", "split": "test"}
  ]
})";
  out.close();
  return dir / "manifest.json";
}

}  // namespace

TEST_CASE("manifest loading") {
  testutil::TempDir dir("manifest");
  const auto path = write_fixture_manifest(dir.path());

  SECTION("fixture splits into 2 train / 1 test") {
    const auto manifest = tpp::load_manifest(path);
    CHECK(manifest.classes == std::vector<std::string>{"run", "jump"});
    CHECK(manifest.split_videos(tpp::Split::train).size() == 2);
    CHECK(manifest.split_videos(tpp::Split::test).size() == 1);
    CHECK(manifest.class_index("jump") == 1);
    CHECK(manifest.videos[1].labels.size() == 2);
  }

  SECTION("round trips through save_manifest") {
    const auto manifest = tpp::load_manifest(path);
    tpp::save_manifest(dir.path() / "copy.json", manifest);
    const auto again = tpp::load_manifest(dir.path() / "copy.json");
    CHECK(again.classes == manifest.classes);
    REQUIRE(again.videos.size() == manifest.videos.size());
    for (std::size_t i = 0; i < again.videos.size(); ++i) {
      CHECK(again.videos[i].id == manifest.videos[i].id);
      CHECK(again.videos[i].labels == manifest.videos[i].labels);
      CHECK(again.videos[i].split == manifest.videos[i].split);
    }
  }

  SECTION("unknown label is rejected with the offending id") {
    std::ofstream out(dir.path() / "badlabel.json");
    out << R"({"classes": ["run"], "videos": [
      {"id": "vid_a", "labels": ["fly"], "frame_feature_path": "vid_a.tppf", "split": "train"}]})";
    out.close();
    try {
      tpp::load_manifest(dir.path() / "badlabel.json");
      FAIL("expected rejection");
    } catch (const std::exception& e) {
      const std::string what = e.what();
      CHECK(what.find("vid_a") != std::string::npos);
      CHECK(what.find("fly") != std::string::npos);
    }
  }

  SECTION("duplicate id is rejected") {
    std::ofstream out(dir.path() / "dup.json");
    out << R"({"classes": ["run"], "videos": [
      {"id": "vid_a", "labels": ["run"], "frame_feature_path": "vid_a.tppf", "split": "train"},
      {"id": "vid_a", "labels": ["run"], "frame_feature_path": "vid_b.tppf", "split": "test"}]})";
    out.close();
    CHECK_THROWS(tpp::load_manifest(dir.path() / "dup.json"));
  }

  SECTION("missing feature file is rejected") {
    std::ofstream out(dir.path() / "missing.json");
    out << R"({"classes": ["run"], "videos": [
      {"id": "vid_z", "labels": ["run"], "frame_feature_path": "vid_z.tppf", "split": "train"}]})";
    out.close();
    CHECK_THROWS(tpp::load_manifest(dir.path() / "missing.json"));
  }
}

using oracles::oracle_ap;

TEST_CASE("evaluate_map") {
  const std::vector<std::string> classes{"only"};

  SECTION("worked example reproduces exactly") {
    Matrix scores(3, 1);
    scores(0, 0) = 0.9;
    scores(1, 0) = 0.8;
    scores(2, 0) = 0.7;
    const std::vector<std::vector<std::size_t>> labels{{0}, {}, {0}};
    const std::vector<std::string> ids{"a", "b", "c"};
    const auto report = tpp::evaluate_map(scores, labels, ids, classes);
    CHECK(report.aggregate == (1.0 + 2.0 / 3.0) / 2.0);
  }

  SECTION("perfect ranking has AP 1") {
    Matrix scores(4, 1);
    scores(0, 0) = 0.9;
    scores(1, 0) = 0.8;
    scores(2, 0) = 0.2;
    scores(3, 0) = 0.1;
    const std::vector<std::vector<std::size_t>> labels{{0}, {0}, {}, {}};
    const std::vector<std::string> ids{"a", "b", "c", "d"};
    CHECK(tpp::evaluate_map(scores, labels, ids, classes).aggregate == 1.0);
  }

  SECTION("single positive ranked last is 1/N") {
    const std::size_t N = 7;
    Matrix scores(N, 1);
    std::vector<std::vector<std::size_t>> labels(N);
    std::vector<std::string> ids(N);
    for (std::size_t i = 0; i < N; ++i) {
      scores(i, 0) = 1.0 - 0.1 * static_cast<double>(i);
      ids[i] = std::string("v") + std::to_string(i);
    }
    labels[N - 1] = {0};
    CHECK(tpp::evaluate_map(scores, labels, ids, classes).aggregate ==
          Catch::Approx(1.0 / 7.0).margin(1e-15));
  }

  SECTION("classes without positives are excluded and reported") {
    Matrix scores(2, 2);
    scores(0, 0) = 0.9;
    scores(1, 0) = 0.1;
    scores(0, 1) = 0.4;
    scores(1, 1) = 0.6;
    const std::vector<std::vector<std::size_t>> labels{{0}, {0}};
    const std::vector<std::string> ids{"a", "b"};
    const std::vector<std::string> two_classes{"present", "absent"};
    const auto report = tpp::evaluate_map(scores, labels, ids, two_classes);
    CHECK(report.excluded_classes == std::vector<std::string>{"absent"});
    CHECK(report.per_class[1] == -1.0);
    CHECK(report.aggregate == 1.0);
  }

  SECTION("matches the brute-force oracle on random instances") {
    tpp::Rng rng(2);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t n = 3 + static_cast<std::size_t>(rng.next_below(8));
      const std::size_t c = 1 + static_cast<std::size_t>(rng.next_below(3));
      Matrix scores(n, c);
      // scores from a small discrete set so ties actually happen
      for (double& v : scores.data())
        v = 0.1 * static_cast<double>(rng.next_below(6));
      std::vector<std::vector<std::size_t>> labels(n);
      std::vector<std::string> ids(n);
      for (std::size_t i = 0; i < n; ++i) {
        ids[i] = std::string("video_") + std::to_string(i);
        for (std::size_t cls = 0; cls < c; ++cls)
          if (rng.next_double() < 0.4) labels[i].push_back(cls);
      }

      std::vector<double> oracle_per_class(c, -1.0);
      double oracle_sum = 0.0;
      std::size_t oracle_count = 0;
      bool any = false;
      for (std::size_t cls = 0; cls < c; ++cls) {
        std::vector<double> col(n);
        std::vector<bool> rel(n, false);
        for (std::size_t i = 0; i < n; ++i) {
          col[i] = scores(i, cls);
          rel[i] =
              std::find(labels[i].begin(), labels[i].end(), cls) != labels[i].end();
        }
        oracle_per_class[cls] = oracle_ap(col, rel, ids);
        if (oracle_per_class[cls] >= 0.0) {
          oracle_sum += oracle_per_class[cls];
          ++oracle_count;
          any = true;
        }
      }
      std::vector<std::string> names(c);
      for (std::size_t cls = 0; cls < c; ++cls) names[cls] = "c" + std::to_string(cls);
      if (!any) continue;

      const auto report = tpp::evaluate_map(scores, labels, ids, names);
      for (std::size_t cls = 0; cls < c; ++cls) {
        if (oracle_per_class[cls] < 0.0)
          CHECK(report.per_class[cls] == -1.0);
        else
          CHECK(report.per_class[cls] ==
                Catch::Approx(oracle_per_class[cls]).margin(1e-12));
      }
      CHECK(report.aggregate ==
            Catch::Approx(oracle_sum / static_cast<double>(oracle_count)).margin(1e-12));
    }
  }
}

TEST_CASE("evaluate_accuracy") {
  const std::vector<std::string> classes{"a", "b"};

  SECTION("all correct") {
    const std::vector<std::size_t> truth{0, 1, 0};
    CHECK(tpp::evaluate_accuracy(truth, truth, classes).aggregate == 1.0);
  }

  SECTION("class-balanced mean differs from overall accuracy") {
    // class a: 2/2 correct, class b: 0/1 -> balanced 0.5, overall 2/3
    const std::vector<std::size_t> predictions{0, 0, 0};
    const std::vector<std::size_t> truth{0, 0, 1};
    const auto report = tpp::evaluate_accuracy(predictions, truth, classes);
    CHECK(report.aggregate == 0.5);
    CHECK(report.per_class[0] == 1.0);
    CHECK(report.per_class[1] == 0.0);
    CHECK(report.confusion(1, 0) == 1.0);
  }

  SECTION("invariant under relabelling both sides") {
    const std::vector<std::size_t> predictions{0, 1, 1, 0, 1};
    const std::vector<std::size_t> truth{0, 1, 0, 0, 1};
    const double base = tpp::evaluate_accuracy(predictions, truth, classes).aggregate;
    std::vector<std::size_t> swapped_p(predictions), swapped_t(truth);
    for (auto& v : swapped_p) v = 1 - v;
    for (auto& v : swapped_t) v = 1 - v;
    CHECK(tpp::evaluate_accuracy(swapped_p, swapped_t, classes).aggregate == base);
  }

  SECTION("equals overall accuracy when class counts match") {
    const std::vector<std::size_t> predictions{0, 1, 1, 0};
    const std::vector<std::size_t> truth{0, 1, 0, 1};
    const auto report = tpp::evaluate_accuracy(predictions, truth, classes);
    double overall = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i)
      if (predictions[i] == truth[i]) overall += 1.0;
    overall /= static_cast<double>(truth.size());
    CHECK(report.aggregate == overall);
  }

  SECTION("a class with no samples is an error") {
    const std::vector<std::size_t> predictions{0, 0};
    const std::vector<std::size_t> truth{0, 0};
    CHECK_THROWS_AS(tpp::evaluate_accuracy(predictions, truth, classes),
                    std::invalid_argument);
  }
}

namespace {

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_experiment_config(const std::filesystem::path& path,
                             const std::string& dataset_dir, const std::string& out_dir) {
  std::ofstream out(path);
  out << R"({
  "seed": 11,
  "manifest": ")" << dataset_dir
      << R"(/manifest.json",
  "out_dir": ")" << out_dir
      << R"(",
  "fit_gmm": {"components": 3, "max_descriptors": 2000, "max_iters": 20},
  "fit_merger": {"k": 8, "max_samples": 200},
  "encode_motion": {},
  "train": {"modality": "motion", "epochs": 4, "learning_rate": 0.01, "b": 2,
            "hidden": 8, "pool": "mean"},
  "eval": {"metric": "accuracy"}
})";
}

}  // namespace

TEST_CASE("run_experiment end to end") {
  testutil::TempDir dir("experiment");
  tpp::SynthSpec spec;
  spec.num_classes = 2;
  spec.train_per_class = 4;
  spec.test_per_class = 2;
  spec.min_frames = 8;
  spec.max_frames = 12;
  spec.seed = 3;
  tpp::write_synthetic_dataset(dir.path() / "data", spec);

  const auto config = dir.path() / "exp.json";
  write_experiment_config(config, "data", "out");

  const auto outcome = tpp::run_experiment(config);
  REQUIRE(outcome.eval.has_value());
  CHECK(outcome.eval->metric == "accuracy");
  CHECK(std::filesystem::exists(dir.path() / "out" / "model.gmm"));
  CHECK(std::filesystem::exists(dir.path() / "out" / "merger.tpmm"));
  CHECK(std::filesystem::exists(dir.path() / "out" / "metrics.json"));
  CHECK(std::filesystem::exists(dir.path() / "out" / "run.log"));

  // the trained net's classifier operates on the (1+b)*hidden pooled vector
  const tpp::NetParams net = tpp::load_net(dir.path() / "out" / "net.tpnp");
  CHECK(net.pyramid.fine_segments == 2);
  CHECK(net.w_b.rows() == (1 + 2) * 8);

  SECTION("rerunning the same config reproduces every artifact bitwise") {
    const std::string gmm_bytes = slurp(dir.path() / "out" / "model.gmm");
    const std::string merger_bytes = slurp(dir.path() / "out" / "merger.tpmm");
    const std::string net_bytes = slurp(dir.path() / "out" / "net.tpnp");
    const std::string metrics_bytes = slurp(dir.path() / "out" / "metrics.json");
    const std::string log_bytes = slurp(dir.path() / "out" / "run.log");

    tpp::run_experiment(config);
    CHECK(slurp(dir.path() / "out" / "model.gmm") == gmm_bytes);
    CHECK(slurp(dir.path() / "out" / "merger.tpmm") == merger_bytes);
    CHECK(slurp(dir.path() / "out" / "net.tpnp") == net_bytes);
    CHECK(slurp(dir.path() / "out" / "metrics.json") == metrics_bytes);
    CHECK(slurp(dir.path() / "out" / "run.log") == log_bytes);
  }
}

TEST_CASE("run_experiment reports missing prerequisites") {
  testutil::TempDir dir("deps");
  tpp::SynthSpec spec;
  spec.train_per_class = 2;
  spec.test_per_class = 1;
  spec.seed = 4;
  tpp::write_synthetic_dataset(dir.path() / "data", spec);

  const auto config = dir.path() / "bad.json";
  {
    std::ofstream out(config);
    out << R"({"seed": 1, "manifest": "data/manifest.json", "out_dir": "out",
               "encode_motion": {}})";
  }
  try {
    tpp::run_experiment(config);
    FAIL("expected a dependency error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("fit_gmm") != std::string::npos);
  }
}

TEST_CASE("thread cap does not change encoded features") {
  tpp::Rng rng(5);
  tpp::GmmModel g;
  g.weights = {0.5, 0.5};
  g.means = testutil::random_matrix(2, 3, rng);
  g.variances = Matrix(2, 3, 1.0);

  std::vector<tpp::TrajectoryRecord> records(30);
  for (std::size_t i = 0; i < records.size(); ++i) {
    records[i].frame_index = i % 12;
    records[i].descriptor = {rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian()};
  }

  setenv("TPP_THREADS", "1", 1);
  const Matrix serial = tpp::build_video_motion_features(records, 12, g);
  setenv("TPP_THREADS", "4", 1);
  const Matrix parallel = tpp::build_video_motion_features(records, 12, g);
  unsetenv("TPP_THREADS");
  CHECK(serial == parallel);
}
