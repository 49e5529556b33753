#include <catch2/catch_amalgamated.hpp>

#include <unistd.h>

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "arcnet/experiments.hpp"

using namespace arcnet;

namespace {

struct TempDir {
  std::filesystem::path path;

  TempDir() {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("arcnet_exp_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::vector<ImuWindow> random_windows(int count, int n_imu, int n_classes, Rng& rng) {
  std::vector<ImuWindow> out;
  for (int i = 0; i < count; ++i) {
    ImuWindow w;
    w.label = i % n_classes;
    w.subject = i % 10;
    w.data = Tensor({n_imu, kImuRows, kWindowLen});
    for (auto& v : w.data.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    out.push_back(std::move(w));
  }
  return out;
}

Checkpoint random_checkpoint(int n_imu, int n_classes, int d_out, int r, float eta,
                             std::uint64_t seed) {
  Checkpoint ckpt;
  ckpt.config.n_imu = n_imu;
  ckpt.config.n_classes = n_classes;
  ckpt.config.d_out = d_out;
  ckpt.config.r = r;
  ckpt.config.eta = eta;
  Rng rng(seed);
  ckpt.params = ModelParams::init(ckpt.config, rng);
  return ckpt;
}

}  // namespace

TEST_CASE("modality corruption") {
  Rng data_rng(21);

  SECTION("exactly one slab is zeroed, the rest is bit-identical") {
    const auto batch = random_windows(12, 3, 4, data_rng);
    Rng rng(7);
    std::vector<int> chosen;
    const auto corrupted = corrupt_modality(batch, rng, 1.0, &chosen);
    REQUIRE(corrupted.size() == batch.size());
    REQUIRE(chosen.size() == batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      REQUIRE(chosen[i] >= 0);
      REQUIRE(chosen[i] < 3);
      CHECK(corrupted[i].label == batch[i].label);
      CHECK(corrupted[i].subject == batch[i].subject);
      for (int imu = 0; imu < 3; ++imu)
        for (int row = 0; row < kImuRows; ++row)
          for (int t = 0; t < kWindowLen; ++t) {
            const float got = corrupted[i].data(imu, row, t);
            if (imu == chosen[i])
              REQUIRE(got == 0.0f);
            else
              REQUIRE(got == batch[i].data(imu, row, t));
          }
    }
  }

  SECTION("the corrupted index is uniform over the IMUs") {
    const auto batch = random_windows(1000, 3, 4, data_rng);
    Rng rng(99);
    std::array<std::size_t, 3> counts{};
    for (int rep = 0; rep < 10; ++rep) {
      std::vector<int> chosen;
      corrupt_modality(batch, rng, 1.0, &chosen);
      for (const int c : chosen) ++counts[static_cast<std::size_t>(c)];
    }
    for (const auto c : counts) {
      const double freq = static_cast<double>(c) / 10000.0;
      CHECK(std::abs(freq - 1.0 / 3.0) < 0.02);
    }
  }

  SECTION("a fixed seed reproduces the pattern") {
    const auto batch = random_windows(50, 2, 4, data_rng);
    std::vector<int> first, second;
    Rng a(5), b(5);
    corrupt_modality(batch, a, 0.7, &first);
    corrupt_modality(batch, b, 0.7, &second);
    CHECK(first == second);
    bool some_skipped = false, some_corrupted = false;
    for (const int c : first) (c == -1 ? some_skipped : some_corrupted) = true;
    CHECK(some_skipped);
    CHECK(some_corrupted);
  }

  SECTION("probability zero is a no-op") {
    const auto batch = random_windows(8, 2, 4, data_rng);
    Rng rng(3);
    std::vector<int> chosen;
    const auto untouched = corrupt_modality(batch, rng, 0.0, &chosen);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      CHECK(untouched[i].data.data == batch[i].data.data);
      CHECK(chosen[i] == -1);
    }
  }

  SECTION("bad inputs") {
    Rng rng(1);
    CHECK_THROWS_AS(corrupt_modality({}, rng), DataError);
    const auto single = random_windows(4, 1, 2, data_rng);
    CHECK_THROWS_AS(corrupt_modality(single, rng), DataError);
    const auto batch = random_windows(4, 2, 2, data_rng);
    CHECK_THROWS_AS(corrupt_modality(batch, rng, -0.1), ConfigError);
    CHECK_THROWS_AS(corrupt_modality(batch, rng, 1.5), ConfigError);
  }
}

TEST_CASE("prior heatmap") {
  const std::vector<std::string> imus = {"hand", "chest", "ankle"};
  const std::vector<std::string> classes = {"a", "b", "c", "d", "e"};

  SECTION("matches a scripted mean plus min-max oracle") {
    Rng rng(31);
    Tensor b({3 * kCapsPerImu, 5});
    for (auto& v : b.data) v = static_cast<float>(rng.uniform(-2.0, 2.0));

    std::vector<std::vector<double>> want(3, std::vector<double>(5, 0.0));
    for (int m = 0; m < 3; ++m)
      for (int j = 0; j < 5; ++j) {
        double s = 0.0;
        for (int k = 0; k < kCapsPerImu; ++k) s += b(m * kCapsPerImu + k, j);
        want[static_cast<std::size_t>(m)][static_cast<std::size_t>(j)] = s / kCapsPerImu;
      }
    for (int j = 0; j < 5; ++j) {
      double lo = want[0][static_cast<std::size_t>(j)], hi = lo;
      for (int m = 1; m < 3; ++m) {
        lo = std::min(lo, want[static_cast<std::size_t>(m)][static_cast<std::size_t>(j)]);
        hi = std::max(hi, want[static_cast<std::size_t>(m)][static_cast<std::size_t>(j)]);
      }
      for (int m = 0; m < 3; ++m) {
        auto& v = want[static_cast<std::size_t>(m)][static_cast<std::size_t>(j)];
        v = (v - lo) / (hi - lo);
      }
    }

    const auto map = prior_heatmap(b, imus, classes);
    for (int m = 0; m < 3; ++m)
      for (int j = 0; j < 5; ++j)
        REQUIRE(map.values(m, j) ==
                Catch::Approx(want[static_cast<std::size_t>(m)][static_cast<std::size_t>(j)])
                    .margin(1e-6));
  }

  SECTION("max aggregation picks the spike the mean dilutes") {
    Tensor b({2 * kCapsPerImu, 2});
    // IMU 0 has one strong row for class 0, IMU 1 twelve mild ones whose
    // mean is larger but whose max is smaller.
    b(0, 0) = 6.0f;
    for (int k = 0; k < kCapsPerImu; ++k) b(kCapsPerImu + k, 0) = 1.0f;
    const auto mean_map = prior_heatmap(b, {"a", "b"}, {"x", "y"}, HeatmapAggregate::kMean);
    const auto max_map = prior_heatmap(b, {"a", "b"}, {"x", "y"}, HeatmapAggregate::kMax);
    CHECK(mean_map.values(0, 0) == 0.0f);  // mean 0.5 vs 1.0
    CHECK(mean_map.values(1, 0) == 1.0f);
    CHECK(max_map.values(0, 0) == 1.0f);  // max 6 vs 1
    CHECK(max_map.values(1, 0) == 0.0f);
  }

  SECTION("degenerate columns map to zero") {
    Tensor zeros({2 * kCapsPerImu, 3});
    const auto map = prior_heatmap(zeros, {"a", "b"}, {"x", "y", "z"});
    for (const float v : map.values.data) CHECK(v == 0.0f);
  }

  SECTION("a single hot IMU owns its class column") {
    Tensor b({3 * kCapsPerImu, 2});
    for (int k = 0; k < kCapsPerImu; ++k) b(kCapsPerImu + k, 1) = 1.0f;
    const auto map = prior_heatmap(b, imus, {"x", "y"});
    CHECK(map.values(0, 1) == 0.0f);
    CHECK(map.values(1, 1) == 1.0f);
    CHECK(map.values(2, 1) == 0.0f);
    CHECK(map.values(1, 0) == 0.0f);  // column 0 is constant
  }

  SECTION("validation") {
    Tensor b({3 * kCapsPerImu, 5});
    CHECK_THROWS_AS(prior_heatmap(b, {"one", "two"}, classes), ShapeError);
    CHECK_THROWS_AS(prior_heatmap(b, imus, {"a", "b"}), ShapeError);
    Tensor ragged({3 * kCapsPerImu + 1, 5});
    CHECK_THROWS_AS(prior_heatmap(ragged, imus, classes), ShapeError);
    Tensor flat({5});
    CHECK_THROWS_AS(prior_heatmap(flat, imus, classes), ShapeError);
  }

  SECTION("csv and graymap files") {
    TempDir tmp;
    Tensor b({2 * kCapsPerImu, 2});
    for (int k = 0; k < kCapsPerImu; ++k) {
      b(k, 0) = 1.0f;
      b(kCapsPerImu + k, 1) = 0.5f;
    }
    const auto map = prior_heatmap(b, {"hand", "chest"}, {"walk", "run"});

    const auto csv = (tmp.path / "prior.csv").string();
    write_heatmap_csv(csv, map);
    std::ifstream is(csv);
    std::string line;
    REQUIRE(std::getline(is, line));
    CHECK(line == "imu,walk,run");
    REQUIRE(std::getline(is, line));
    CHECK(line == "hand,1,0");
    REQUIRE(std::getline(is, line));
    CHECK(line == "chest,0,1");
    CHECK_FALSE(std::getline(is, line));

    const auto pgm = (tmp.path / "prior.pgm").string();
    write_heatmap_pgm(pgm, map);
    const auto bytes = slurp(pgm);
    const std::string header = "P5\n2 2\n255\n";
    REQUIRE(bytes.size() == header.size() + 4);
    CHECK(bytes.substr(0, header.size()) == header);
    CHECK(static_cast<unsigned char>(bytes[header.size() + 0]) == 255);
    CHECK(static_cast<unsigned char>(bytes[header.size() + 1]) == 0);
    CHECK(static_cast<unsigned char>(bytes[header.size() + 2]) == 0);
    CHECK(static_cast<unsigned char>(bytes[header.size() + 3]) == 255);
  }
}

TEST_CASE("evaluation and the corruption experiment") {
  const auto split = synth_generate(SyntheticSpec::defaults(2, 4, 50, 23));
  const auto ckpt = random_checkpoint(2, 4, 8, 1, 0.1f, 77);

  SECTION("single-checkpoint evaluation equals plain inference") {
    const auto report = evaluate({ckpt}, split.test, split.class_names);
    const auto plain = infer_windows(ckpt.params, ckpt.config, split.test);
    CHECK(report.accuracy == Catch::Approx(plain.accuracy).epsilon(1e-12));
    CHECK(report.samples == static_cast<std::int64_t>(split.test.size()));
    std::int64_t diagonal = 0;
    for (std::size_t c = 0; c < report.confusion.size(); ++c) diagonal += report.confusion[c][c];
    std::int64_t correct = 0;
    for (std::size_t i = 0; i < split.test.size(); ++i)
      if (plain.predictions[i] == split.test[i].label) ++correct;
    CHECK(diagonal == correct);
  }

  SECTION("incompatible checkpoints are rejected") {
    CHECK_THROWS_AS(evaluate({ckpt}, split.test, {"a", "b"}), ShapeError);
    const auto narrow = synth_generate(SyntheticSpec::defaults(1, 4, 10, 23));
    CHECK_THROWS_AS(evaluate({ckpt}, narrow.test, narrow.class_names), ShapeError);
    CHECK_THROWS_AS(evaluate({}, split.test, split.class_names), ConfigError);
    CHECK_THROWS_AS(evaluate({ckpt}, {}, split.class_names), DataError);
  }

  SECTION("probability zero collapses the deltas to exactly zero") {
    const auto result = run_corruption_test(ckpt, split.test, split.class_names, 13, 0.0);
    CHECK(result.delta_accuracy_points == 0.0);
    CHECK(result.delta_wf1_points == 0.0);
    CHECK(result.clean.confusion == result.corrupted.confusion);
    for (const int c : result.chosen) CHECK(c == -1);
  }

  SECTION("untrained model, corruption barely moves the needle") {
    const auto result = run_corruption_test(ckpt, split.test, split.class_names, 13);
    for (const int c : result.chosen) CHECK(c != -1);
    CHECK(result.delta_accuracy_points ==
          Catch::Approx(100.0 * (result.clean.accuracy - result.corrupted.accuracy))
              .margin(1e-12));
    // An untrained model has nothing to lose; the pinned seed keeps the
    // small residual delta reproducible.
    CHECK(std::abs(result.delta_accuracy_points) < 25.0);
    CHECK(std::abs(result.delta_wf1_points) < 25.0);

    TempDir tmp;
    const auto csv = (tmp.path / "corruption.csv").string();
    write_corruption_csv(csv, result);
    const auto text = slurp(csv);
    CHECK(text.rfind("# deltas\n", 0) == 0);
    CHECK(text.find("delta_accuracy_points,") != std::string::npos);
    CHECK(text.find("delta_weighted_f1_points,") != std::string::npos);
    CHECK(text.find("# clean\n") != std::string::npos);
    CHECK(text.find("# corrupted\n") != std::string::npos);
    CHECK(text.find("accuracy,") != std::string::npos);
  }
}
