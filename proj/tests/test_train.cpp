#include <catch2/catch_amalgamated.hpp>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "arcnet/checkpoint.hpp"
#include "arcnet/dataset.hpp"
#include "arcnet/train.hpp"
#include "support/oracles.hpp"

using namespace arcnet;

namespace {

struct TempDir {
  std::filesystem::path path;

  TempDir() {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("arcnet_train_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
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

// Small, fast and cleanly separable: one IMU, two classes.
DatasetSplit tiny_split() { return synth_generate(SyntheticSpec::defaults(1, 2, 10, 17)); }

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.epochs = 11;
  cfg.initial_lr = 1e-3;
  cfg.r = 1;
  cfg.eta = 0.1f;
  cfg.d_out = 4;
  cfg.seed = 3;
  cfg.ensemble_k = 3;
  return cfg;
}

}  // namespace

TEST_CASE("optimizer") {
  SECTION("matches the scripted update rule over 100 steps") {
    Rng rng(11);
    std::vector<TensorT<double>> params;
    params.push_back(TensorT<double>({7}));
    params.push_back(TensorT<double>({3, 2}));
    params.push_back(TensorT<double>({1}));
    std::vector<std::vector<double>> flat(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      for (auto& v : params[i].data) v = rng.uniform(-1.0, 1.0);
      flat[i] = params[i].data;
    }

    AdamT<double> adam;
    std::vector<oracles::AdamNaive> naive(params.size());
    std::vector<TensorT<double>*> ptrs;
    for (auto& p : params) ptrs.push_back(&p);

    for (int step = 0; step < 100; ++step) {
      std::vector<TensorT<double>> grads;
      for (const auto& p : params) {
        TensorT<double> g(p.shape);
        for (auto& v : g.data) v = rng.gauss();
        grads.push_back(std::move(g));
      }
      const double lr = 1e-3 * (1.0 + 0.5 * std::sin(0.2 * step));
      adam.step(ptrs, grads, lr);
      for (std::size_t i = 0; i < params.size(); ++i) {
        naive[i].step(flat[i], grads[i].data, lr);
        for (std::size_t k = 0; k < flat[i].size(); ++k)
          REQUIRE(params[i].data[k] == Catch::Approx(flat[i][k]).margin(1e-7));
      }
    }
  }

  SECTION("zero gradient leaves parameters untouched") {
    TensorT<double> p({4});
    p.data = {1.0, -2.0, 0.5, 3.0};
    const auto before = p.data;
    AdamT<double> adam;
    std::vector<TensorT<double>*> ptrs{&p};
    for (int step = 0; step < 10; ++step) adam.step(ptrs, {TensorT<double>({4})}, 1e-2);
    CHECK(p.data == before);
  }

  SECTION("constant gradient drives the step magnitude to lr") {
    TensorT<double> p({1});
    TensorT<double> g({1});
    g.data[0] = 0.5;
    AdamT<double> adam;
    std::vector<TensorT<double>*> ptrs{&p};
    const double lr = 1e-3;
    double previous = p.data[0];
    double delta = 0.0;
    for (int step = 0; step < 5000; ++step) {
      adam.step(ptrs, {g}, lr);
      delta = previous - p.data[0];
      previous = p.data[0];
    }
    CHECK(delta == Catch::Approx(lr).epsilon(1e-3));
  }

  SECTION("shape mismatches are rejected") {
    TensorT<double> p({4});
    AdamT<double> adam;
    std::vector<TensorT<double>*> ptrs{&p};
    CHECK_THROWS_AS(adam.step(ptrs, {}, 1e-3), ShapeError);
    CHECK_THROWS_AS(adam.step(ptrs, {TensorT<double>({3})}, 1e-3), ShapeError);
    adam.step(ptrs, {TensorT<double>({4})}, 1e-3);
    std::vector<TensorT<double>*> two{&p, &p};
    CHECK_THROWS_AS(adam.step(two, {TensorT<double>({4}), TensorT<double>({4})}, 1e-3),
                    ShapeError);
  }
}

TEST_CASE("checkpoint roundtrip") {
  TempDir tmp;
  const auto path = (tmp.path / "model.arcc").string();

  ModelConfig cfg;
  cfg.n_imu = 2;
  cfg.n_classes = 4;
  cfg.d_out = 8;
  cfg.r = 3;
  cfg.eta = 0.1f;
  Rng rng(5);

  Checkpoint ckpt;
  ckpt.config = cfg;
  ckpt.params = ModelParams::init(cfg, rng);
  ckpt.epoch = 42;
  ckpt.val_loss = 0.125f;
  ckpt.rng_state = rng.state();
  ckpt.config_hash = sha256(std::string("settings"));

  save_checkpoint(path, ckpt);
  const auto back = load_checkpoint(path);

  CHECK(back.config.n_imu == 2);
  CHECK(back.config.n_classes == 4);
  CHECK(back.config.d_out == 8);
  CHECK(back.config.r == 3);
  CHECK(back.config.eta == 0.1f);
  CHECK(back.params.caps.r == 3);
  CHECK(back.params.caps.eta == 0.1f);
  CHECK(back.epoch == 42);
  CHECK(back.val_loss == 0.125f);
  CHECK(back.rng_state == ckpt.rng_state);
  CHECK(back.config_hash == ckpt.config_hash);
  for (const auto& [name, tensor] : ckpt.params.named_tensors()) {
    bool matched = false;
    for (const auto& [name2, tensor2] : back.params.named_tensors())
      if (name2 == name) {
        REQUIRE(tensor2->shape == tensor->shape);
        REQUIRE(tensor2->data == tensor->data);
        matched = true;
      }
    CHECK(matched);
  }

  SECTION("save, load, save is byte-identical") {
    const auto path2 = (tmp.path / "model2.arcc").string();
    save_checkpoint(path2, back);
    CHECK(slurp(path) == slurp(path2));
  }

  SECTION("corrupted files are rejected") {
    const auto bad = (tmp.path / "bad.arcc").string();
    const std::string bytes = slurp(path);

    std::string wrong_magic = bytes;
    wrong_magic[0] = 'X';
    std::ofstream(bad, std::ios::binary) << wrong_magic;
    CHECK_THROWS_AS(load_checkpoint(bad), DataError);

    std::ofstream(bad, std::ios::binary) << bytes.substr(0, bytes.size() - 11);
    CHECK_THROWS_AS(load_checkpoint(bad), DataError);

    std::ofstream(bad, std::ios::binary) << (bytes + "x");
    CHECK_THROWS_AS(load_checkpoint(bad), DataError);

    CHECK_THROWS_AS(load_checkpoint((tmp.path / "absent.arcc").string()), DataError);
  }

  SECTION("rng state words must be 16-bit") {
    std::array<float, 16> halves{};
    halves[3] = 0.5f;
    CHECK_THROWS_AS(rng_state_from_f32(halves), DataError);
    halves[3] = 70000.0f;
    CHECK_THROWS_AS(rng_state_from_f32(halves), DataError);
    halves[3] = 65535.0f;
    CHECK(rng_state_from_f32(halves)[0] == (static_cast<std::uint64_t>(0xffff) << 48));
  }

  SECTION("state encoding is lossless for arbitrary words") {
    Rng r2(999);
    for (int i = 0; i < 50; ++i) {
      std::array<std::uint64_t, 4> state = {r2.next_u64(), r2.next_u64(), r2.next_u64(),
                                            r2.next_u64()};
      CHECK(rng_state_from_f32(rng_state_to_f32(state)) == state);
    }
  }
}

TEST_CASE("training loop") {
  TempDir tmp;
  const auto split = tiny_split();
  const auto cfg = tiny_config();
  const auto out = (tmp.path / "run").string();
  const auto result = train(cfg, split, out);

  SECTION("learning rate follows the exponential schedule") {
    REQUIRE(result.history.size() == 11);
    for (int e = 0; e < 11; ++e)
      CHECK(result.history[static_cast<std::size_t>(e)].lr ==
            Catch::Approx(1e-3 * std::pow(0.98, e)).epsilon(1e-12));
  }

  SECTION("metrics log has the documented layout") {
    std::ifstream is(result.metrics_path);
    REQUIRE(is);
    std::string line;
    REQUIRE(std::getline(is, line));
    CHECK(line == "epoch,train_loss,val_loss,val_acc,lr");
    int rows = 0;
    while (std::getline(is, line)) {
      CHECK(line.rfind(std::to_string(rows) + ",", 0) == 0);
      ++rows;
    }
    CHECK(rows == 11);
  }

  SECTION("loss improves on the tiny problem") {
    CHECK(result.history.back().train_loss < result.history.front().train_loss);
  }

  SECTION("top-k checkpoints are retained, ordered by validation loss") {
    REQUIRE(result.checkpoints.size() == 3);
    std::size_t files = 0;
    for (const auto& entry : std::filesystem::directory_iterator(out))
      if (entry.path().extension() == ".arcc") ++files;
    CHECK(files == 3);
    double previous = -1.0;
    for (const auto& path : result.checkpoints) {
      const auto ckpt = load_checkpoint(path);
      CHECK(ckpt.val_loss >= previous);
      previous = ckpt.val_loss;
      CHECK(ckpt.config_hash == sha256(cfg.canonical()));
      // File name encodes the epoch the checkpoint was written at.
      std::ostringstream want;
      want << "epoch_" << std::setw(4) << std::setfill('0') << ckpt.epoch << ".arcc";
      CHECK(std::filesystem::path(path).filename().string() == want.str());
    }
  }

  SECTION("identical seed and config reproduce the run byte for byte") {
    const auto out2 = (tmp.path / "run2").string();
    const auto result2 = train(cfg, split, out2);
    REQUIRE(result2.checkpoints.size() == result.checkpoints.size());
    for (std::size_t i = 0; i < result.checkpoints.size(); ++i)
      CHECK(slurp(result.checkpoints[i]) == slurp(result2.checkpoints[i]));
    CHECK(slurp(result.metrics_path) == slurp(result2.metrics_path));

    auto other = cfg;
    other.seed = 4;
    const auto result3 = train(other, split, (tmp.path / "run3").string());
    CHECK(slurp(result.checkpoints[0]) != slurp(result3.checkpoints[0]));
  }

  SECTION("single checkpoint vote equals plain prediction") {
    const auto ckpt = load_checkpoint(result.checkpoints[0]);
    const auto voted = ensemble_vote({ckpt}, split.validation);
    const auto plain = infer_windows(ckpt.params, ckpt.config, split.validation);
    CHECK(voted == plain.predictions);

    const auto doubled = ensemble_vote({ckpt, ckpt}, split.validation);
    CHECK(doubled == plain.predictions);
  }
}

TEST_CASE("training reaches a target accuracy and stops") {
  TempDir tmp;
  auto cfg = tiny_config();
  cfg.epochs = 60;
  cfg.target_train_acc = 1.0f;
  const auto result = train(cfg, tiny_split(), (tmp.path / "run").string());
  CHECK(result.reached_target);
  CHECK(result.final_epoch < 59);
  CHECK(result.history.size() == static_cast<std::size_t>(result.final_epoch) + 1);
}

TEST_CASE("training aborts on numeric blow-up with a batch diagnostic") {
  TempDir tmp;
  auto cfg = tiny_config();
  cfg.initial_lr = 1e14;
  cfg.epochs = 5;
  try {
    train(cfg, tiny_split(), (tmp.path / "run").string());
    FAIL("expected a numeric abort");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch") != std::string::npos);
    CHECK(msg.find("batch") != std::string::npos);
  }
}

TEST_CASE("training configuration validation") {
  auto cfg = tiny_config();
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.lr_decay = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.lr_decay = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.ensemble_k = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.threads = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  CHECK(tiny_config().canonical().find("lr_decay = 0.98") != std::string::npos);

  TempDir tmp;
  DatasetSplit empty_val = tiny_split();
  empty_val.validation.clear();
  CHECK_THROWS_AS(train(tiny_config(), empty_val, (tmp.path / "x").string()), DataError);
  DatasetSplit empty_train = tiny_split();
  empty_train.train.clear();
  CHECK_THROWS_AS(train(tiny_config(), empty_train, (tmp.path / "x").string()), DataError);
}

TEST_CASE("vote rule") {
  SECTION("summed scores beat the per-model majority") {
    // Two lukewarm votes for class 0, one confident vote for class 1.
    const std::vector<std::vector<float>> scores = {
        {0.60f, 0.40f}, {0.55f, 0.45f}, {0.10f, 0.90f}};
    int majority_zero = 0;
    for (const auto& s : scores)
      if (s[0] > s[1]) ++majority_zero;
    CHECK(majority_zero == 2);
    CHECK(sum_vote(scores) == 1);
  }

  SECTION("ties go to the lowest index") {
    CHECK(sum_vote({{0.5f, 0.5f, 0.2f}}) == 0);
    CHECK(sum_vote({{0.2f, 0.5f, 0.5f}}) == 1);
  }

  SECTION("bad inputs") {
    CHECK_THROWS_AS(sum_vote({}), ConfigError);
    CHECK_THROWS_AS(sum_vote({{0.5f, 0.5f}, {0.1f}}), ShapeError);
  }

  SECTION("mismatched ensemble shapes are rejected") {
    ModelConfig a;
    a.n_imu = 1;
    a.n_classes = 2;
    a.d_out = 4;
    a.r = 1;
    ModelConfig b = a;
    b.n_classes = 3;
    Rng rng(1);
    Checkpoint ca;
    ca.config = a;
    ca.params = ModelParams::init(a, rng);
    Checkpoint cb;
    cb.config = b;
    cb.params = ModelParams::init(b, rng);
    ImuWindow w;
    w.data = Tensor({1, kImuRows, kWindowLen});
    CHECK_THROWS_AS(ensemble_vote({ca, cb}, {w}), ShapeError);
    CHECK_THROWS_AS(ensemble_vote({}, {w}), ConfigError);
  }
}
