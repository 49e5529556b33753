#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "arcnet/loss.hpp"
#include "arcnet/metrics.hpp"
#include "arcnet/rng.hpp"
#include "arcnet/tape.hpp"
#include "arcnet/tensor.hpp"
#include "support/oracles.hpp"

using namespace arcnet;

namespace {

double margin_oracle(const std::vector<double>& norms, int label) {
  double loss = 0;
  for (std::size_t k = 0; k < norms.size(); ++k) {
    if (static_cast<int>(k) == label) {
      const double hi = std::max(0.0, 0.95 - norms[k]);
      loss += hi * hi;
    } else {
      const double lo = std::max(0.0, norms[k] - 0.05);
      loss += 0.5 * lo * lo;
    }
  }
  return loss;
}

TapeT<double>::NodeId norms_leaf(TapeT<double>& t, const std::vector<double>& norms,
                                 bool needs_grad = false) {
  TensorT<double> n({static_cast<int>(norms.size())});
  n.data = norms;
  return t.leaf(std::move(n), needs_grad);
}

}  // namespace

TEST_CASE("margin loss fixtures") {
  SECTION("norms exactly at the margins give zero loss") {
    TapeT<double> t;
    const auto loss = ops::margin_loss(t, norms_leaf(t, {0.95, 0.05, 0.05}), 0, MarginConfig{});
    CHECK(t.value(loss)(0) == 0.0);
  }

  SECTION("all-zero norms leave only the present-class penalty") {
    TapeT<double> t;
    const auto loss = ops::margin_loss(t, norms_leaf(t, {0.0, 0.0, 0.0, 0.0}), 2, MarginConfig{});
    // Margin constants are stored in single precision, hence the loose margin.
    CHECK(t.value(loss)(0) == Catch::Approx(0.95 * 0.95).margin(1e-6));
  }

  SECTION("confident correct prediction costs nothing") {
    TapeT<double> t;
    const auto loss = ops::margin_loss(t, norms_leaf(t, {0.99, 0.01, 0.02}), 0, MarginConfig{});
    CHECK(t.value(loss)(0) == 0.0);
  }

  SECTION("random norms match the per-term oracle") {
    Rng rng(71);
    for (int inst = 0; inst < 200; ++inst) {
      const int c = 2 + static_cast<int>(rng.below(10));
      std::vector<double> norms(static_cast<std::size_t>(c));
      for (auto& v : norms) v = rng.uniform();
      const int label = static_cast<int>(rng.below(static_cast<std::uint64_t>(c)));
      TapeT<double> t;
      const auto loss = ops::margin_loss(t, norms_leaf(t, norms), label, MarginConfig{});
      REQUIRE(t.value(loss)(0) == Catch::Approx(margin_oracle(norms, label)).margin(1e-6));
    }
  }

  SECTION("backward matches the closed-form derivative") {
    TapeT<double> t;
    const std::vector<double> norms = {0.3, 0.6, 0.02, 0.95};
    const auto id = norms_leaf(t, norms, true);
    const auto loss = ops::margin_loss(t, id, 0, MarginConfig{});
    t.backward(loss);
    const auto& g = t.grad(id);
    CHECK(g(0) == Catch::Approx(-2.0 * (0.95 - 0.3)).margin(1e-6));
    CHECK(g(1) == Catch::Approx(2.0 * 0.5 * (0.6 - 0.05)).margin(1e-6));
    CHECK(g(2) == 0.0);  // below the absent margin, clamped
    CHECK(g(3) == Catch::Approx(2.0 * 0.5 * (0.95 - 0.05)).margin(1e-6));
  }

  SECTION("label out of range") {
    TapeT<double> t;
    const auto id = norms_leaf(t, {0.5, 0.5});
    CHECK_THROWS_AS(ops::margin_loss(t, id, 2, MarginConfig{}), DataError);
    CHECK_THROWS_AS(ops::margin_loss(t, id, -1, MarginConfig{}), DataError);
  }
}

TEST_CASE("classification report fixtures") {
  SECTION("perfect predictions") {
    const std::vector<int> y = {0, 1, 2, 0, 1, 2, 2};
    const auto rep = classification_report(y, y, 3);
    CHECK(rep.accuracy == 1.0);
    CHECK(rep.weighted_precision == Catch::Approx(1.0));
    CHECK(rep.weighted_recall == Catch::Approx(1.0));
    CHECK(rep.weighted_f1 == Catch::Approx(1.0));
    CHECK(rep.samples == 7);
    for (int c = 0; c < 3; ++c)
      for (int d = 0; d < 3; ++d)
        CHECK(rep.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(d)] ==
              (c == d ? std::count(y.begin(), y.end(), c) : 0));
  }

  SECTION("everything predicted as class 0 on a balanced two-class set") {
    // Accuracy 1/2; class 0 has precision 1/2, recall 1, f1 2/3; class 1
    // contributes 0. Weighted f1 is 0.5 * 2/3 = 1/3.
    const std::vector<int> labels = {0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
    const std::vector<int> preds(10, 0);
    const auto rep = classification_report(preds, labels, 2);
    CHECK(rep.accuracy == Catch::Approx(0.5));
    CHECK(rep.weighted_f1 == Catch::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(rep.confusion[0][0] == 5);
    CHECK(rep.confusion[1][0] == 5);
    CHECK(rep.confusion[0][1] == 0);
    CHECK(rep.confusion[1][1] == 0);
  }

  SECTION("a single confusion lands in the right cell") {
    std::vector<int> labels, preds;
    for (int c = 0; c < 8; ++c) {
      labels.push_back(c);
      preds.push_back(c);
    }
    labels.push_back(2);
    preds.push_back(5);
    const auto rep = classification_report(preds, labels, 8);
    CHECK(rep.confusion[2][5] == 1);
    CHECK(rep.confusion[2][2] == 1);
    CHECK(rep.accuracy == Catch::Approx(8.0 / 9.0));
  }

  SECTION("confusion rows sum to class support") {
    Rng rng(72);
    std::vector<int> labels(500), preds(500);
    std::vector<std::int64_t> support(6, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      labels[i] = static_cast<int>(rng.below(6));
      preds[i] = static_cast<int>(rng.below(6));
      ++support[static_cast<std::size_t>(labels[i])];
    }
    const auto rep = classification_report(preds, labels, 6);
    for (std::size_t c = 0; c < 6; ++c) {
      std::int64_t row = 0;
      for (const auto v : rep.confusion[c]) row += v;
      CHECK(row == support[c]);
    }
  }

  SECTION("input validation") {
    CHECK_THROWS_AS(classification_report({0, 1}, {0}, 2), DataError);
    CHECK_THROWS_AS(classification_report({}, {}, 2), DataError);
    CHECK_THROWS_AS(classification_report({0, 2}, {0, 1}, 2), DataError);
    CHECK_THROWS_AS(classification_report({0, 1}, {0, -1}, 2), DataError);
  }
}

TEST_CASE("weighted metrics agree with an independent oracle") {
  Rng rng(73);
  for (int inst = 0; inst < 1000; ++inst) {
    const int c = 2 + static_cast<int>(rng.below(11));
    const std::size_t n = 1 + rng.below(60);
    std::vector<int> labels(n), preds(n);
    for (std::size_t i = 0; i < n; ++i) {
      // Skewed draw so small sets regularly miss some classes entirely.
      labels[i] = static_cast<int>(rng.below(static_cast<std::uint64_t>(c)));
      preds[i] = rng.uniform() < 0.6 ? labels[i]
                                     : static_cast<int>(rng.below(static_cast<std::uint64_t>(c)));
    }
    const auto rep = classification_report(preds, labels, c);
    const auto ref = oracles::metrics_naive(preds, labels, c);
    REQUIRE(std::abs(rep.accuracy - ref.accuracy) < 1e-9);
    REQUIRE(std::abs(rep.weighted_precision - ref.precision) < 1e-9);
    REQUIRE(std::abs(rep.weighted_recall - ref.recall) < 1e-9);
    REQUIRE(std::abs(rep.weighted_f1 - ref.f1) < 1e-9);
  }
}

TEST_CASE("accuracy equals weighted f1 on diagonal predictions") {
  Rng rng(74);
  std::vector<int> labels(200);
  for (auto& v : labels) v = static_cast<int>(rng.below(4));
  const auto rep = classification_report(labels, labels, 4);
  CHECK(rep.accuracy == Catch::Approx(rep.weighted_f1).epsilon(1e-12));
}

TEST_CASE("report CSV layout") {
  const std::vector<int> labels = {0, 0, 1, 1};
  const std::vector<int> preds = {0, 1, 1, 1};
  const auto rep = classification_report(preds, labels, 2, {"walk", "run"});
  const auto csv = report_to_csv(rep);

  std::istringstream is(csv);
  std::string line;
  REQUIRE(std::getline(is, line));
  CHECK(line == "walk,run");
  REQUIRE(std::getline(is, line));
  CHECK(line == "1,1");
  REQUIRE(std::getline(is, line));
  CHECK(line == "0,2");
  REQUIRE(std::getline(is, line));
  CHECK(line.rfind("accuracy,0.75", 0) == 0);
  REQUIRE(std::getline(is, line));
  CHECK(line.rfind("weighted_precision,", 0) == 0);
  REQUIRE(std::getline(is, line));
  CHECK(line.rfind("weighted_recall,", 0) == 0);
  REQUIRE(std::getline(is, line));
  CHECK(line.rfind("weighted_f1,", 0) == 0);
  REQUIRE(std::getline(is, line));
  CHECK(line == "samples,4");
  CHECK_FALSE(std::getline(is, line));
}
