#include <cmath>
#include <fstream>

#include "doctest.h"
#include "spot/errors.hpp"
#include "spot/oracle.hpp"
#include "test_util.hpp"

using namespace spot;

namespace {

struct Fixture {
  EncoderConfig cfg;
  TokenizerConfig tc;
  EncoderParams params;
  Fixture() : params(make()) {}

  EncoderParams make() {
    cfg.depth = 2;
    cfg.width = 16;
    cfg.heads = 2;
    cfg.mlp_ratio = 2;
    cfg.num_classes = 6;
    cfg.token_dim = 4 * 4 * 3;
    tc.window = 4;
    tc.embed_dim = 16;
    tc.num_freqs = 4;
    auto p = EncoderParams::initialize(cfg, 3);
    CounterRng rng(4);
    for (auto& v : p.mutable_values()) v += 0.2 * rng.normal();
    return p;
  }
};

bool is_center(double v, int extent, int g) {
  for (int j = 0; j < g; ++j)
    if (v == grid_center(j, extent, g)) return true;
  return false;
}

}  // namespace

TEST_CASE("zero steps return the initial placements") {
  Fixture f;
  const Image img = test::smooth_image(32, 32, 3, 1);
  const Tokenizer tok(32, 32, f.tc);
  const auto s0 = sample_uniform(5, 32, 32, 2);
  OracleConfig oc;
  oc.steps = 0;
  const auto t = spot_on_search(f.params, img, 2, s0, tok, oc);
  REQUIRE(t.positions.size() == 1u);
  CHECK(t.positions[0] == s0);
  REQUIRE(t.losses.size() == 1u);
  const auto c = classify(f.params, img, s0, 2, tok);
  CHECK(t.losses[0] == c.loss);
  CHECK(t.final_prediction == c.prediction);
  CHECK(t.steps() == 0);
}

TEST_CASE("descent records losses and stays in bounds") {
  Fixture f;
  const Image img = test::smooth_image(32, 32, 3, 5);
  const Tokenizer tok(32, 32, f.tc);
  const auto s0 = sample_uniform(6, 32, 32, 6);
  OracleConfig oc;
  oc.lr = 1e-2;
  oc.steps = 10;
  const auto before = f.params.digest();
  const auto t = spot_on_search(f.params, img, 1, s0, tok, oc);
  CHECK(f.params.digest() == before);
  REQUIRE(t.positions.size() == 11u);
  REQUIRE(t.losses.size() == 11u);
  CHECK(t.initial() == s0);
  for (const auto& row : t.positions) CHECK_NOTHROW(validate_placements(row, 32, 32));
  for (std::size_t r = 0; r < t.positions.size(); ++r) CHECK(t.losses[r] == classify(f.params, img, t.positions[r], 1, tok).loss);
  CHECK(t.final() != s0);
}

TEST_CASE("a constant image only moves through the embedding path") {
  Fixture f;
  const Image flat(32, 32, 3, std::vector<double>(32 * 32 * 3, 0.3));
  const Tokenizer tok(32, 32, f.tc);
  const auto s0 = sample_uniform(4, 32, 32, 7);
  OracleConfig oc;
  oc.steps = 5;
  oc.lr = 0.1;
  oc.gradient.embedding_path = false;
  const auto still = spot_on_search(f.params, flat, 0, s0, tok, oc);
  for (const auto& row : still.positions) CHECK(row == s0);
  oc.gradient.embedding_path = true;
  CHECK(spot_on_search(f.params, flat, 0, s0, tok, oc).final() != s0);
}

TEST_CASE("grid snap") {
  const PlacementSet s{{100, 60}};
  CHECK(grid_snap(s, 224, 224, 14)[0] == Point{103.5, 55.5});
  CHECK(grid_snap(PlacementSet{{87.5, 7.5}}, 224, 224, 14)[0] == Point{87.5, 7.5});
  CHECK(grid_snap(PlacementSet{{95.5, 95.5}}, 224, 224, 14)[0] == Point{87.5, 87.5});
  CHECK(grid_snap(PlacementSet{{0, 223}}, 224, 224, 14)[0] == Point{7.5, 215.5});

  const auto u = sample_uniform(500, 64, 48, 3);
  const auto once = grid_snap(u, 64, 48, 8);
  CHECK(grid_snap(once, 64, 48, 8) == once);
  for (std::size_t i = 0; i < u.size(); ++i) {
    CHECK(is_center(once[i].x, 48, 8));
    CHECK(is_center(once[i].y, 64, 8));
    // Nearest center: no other center is strictly closer.
    for (int j = 0; j < 8; ++j) CHECK(std::abs(u[i].x - once[i].x) <= std::abs(u[i].x - grid_center(j, 48, 8)));
  }
  CHECK_THROWS_AS(grid_snap(u, 64, 48, 0), std::invalid_argument);
}

TEST_CASE("grid-mode trajectories sit on the lattice") {
  Fixture f;
  const Image img = test::smooth_image(32, 32, 3, 8);
  const Tokenizer tok(32, 32, f.tc);
  OracleConfig oc;
  oc.mode = OracleMode::grid_snap;
  oc.grid_g = 4;
  oc.steps = 4;
  oc.lr = 0.2;
  const auto s0 = sample_isotropic(4, 32, 32);
  const auto t = spot_on_search(f.params, img, 3, s0, tok, oc);
  for (int r = 1; r <= t.steps(); ++r)
    for (const auto& p : t.positions[r]) {
      CHECK(is_center(p.x, 32, 4));
      CHECK(is_center(p.y, 32, 4));
    }

  oc.snap_when = SnapWhen::final;
  const auto late = spot_on_search(f.params, img, 3, s0, tok, oc);
  for (const auto& p : late.final()) CHECK(is_center(p.x, 32, 4));
}

TEST_CASE("ascent mirrors descent for one step") {
  Fixture f;
  const Image img = test::smooth_image(32, 32, 3, 9);
  const Tokenizer tok(32, 32, f.tc);
  const PlacementSet s0{{12.3, 14.1}, {20.2, 9.7}, {15.5, 18.8}};
  OracleConfig oc;
  oc.steps = 1;
  oc.lr = 1e-4;
  const auto down = spot_on_search(f.params, img, 4, s0, tok, oc);
  oc.objective = OracleObjective::ascent;
  const auto up = spot_on_search(f.params, img, 4, s0, tok, oc);
  for (std::size_t i = 0; i < s0.size(); ++i) {
    const double dx = down.final()[i].x - s0[i].x, ux = up.final()[i].x - s0[i].x;
    const double dy = down.final()[i].y - s0[i].y, uy = up.final()[i].y - s0[i].y;
    CHECK(dx != 0.0);
    CHECK(dx == doctest::Approx(-ux).epsilon(1e-9));
    CHECK(dy == doctest::Approx(-uy).epsilon(1e-9));
  }
  // The step itself is −lr·∂L/∂u in normalized units.
  const auto g = position_gradient(f.params, img, s0, 4, tok);
  CHECK(down.final()[0].x == doctest::Approx(s0[0].x - 1e-4 * g.gradient[0].x * 31 * 31).epsilon(1e-12));
}

TEST_CASE("obfuscated label never equals the true label") {
  for (int label = 0; label < 8; ++label) {
    std::vector<int> hits(8, 0);
    for (std::uint64_t seed = 0; seed < 2000; ++seed) {
      const int l = obfuscated_label(label, 8, seed);
      REQUIRE(l != label);
      REQUIRE(l >= 0);
      REQUIRE(l < 8);
      hits[l]++;
    }
    for (int c = 0; c < 8; ++c)
      if (c != label) CHECK(hits[c] > 200);
  }
  Fixture f;
  const Image img = test::smooth_image(32, 32, 3, 10);
  const Tokenizer tok(32, 32, f.tc);
  OracleConfig oc;
  oc.objective = OracleObjective::obfuscated;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    oc.seed = seed;
    const auto t = spot_on_search(f.params, img, 2, sample_uniform(3, 32, 32, seed), tok, oc);
    CHECK(t.target_label != 2);
    // Losses are still reported against the true label.
    CHECK(t.losses.back() == classify(f.params, img, t.final(), 2, tok).loss);
  }
}

TEST_CASE("search input validation") {
  Fixture f;
  const Image img = test::smooth_image(32, 32, 3, 11);
  const Tokenizer tok(32, 32, f.tc);
  OracleConfig oc;
  CHECK_THROWS_AS(spot_on_search(f.params, img, 0, PlacementSet{{40, 3}}, tok, oc), DataError);
  CHECK_THROWS_AS(spot_on_search(f.params, img, 0, PlacementSet{}, tok, oc), DataError);
  CHECK_THROWS_AS(spot_on_search(f.params, img, 9, PlacementSet{{4, 3}}, tok, oc), std::invalid_argument);
  oc.lr = 0;
  CHECK_THROWS_AS(spot_on_search(f.params, img, 0, PlacementSet{{4, 3}}, tok, oc), std::invalid_argument);
  oc.lr = 1e-3;
  oc.steps = -1;
  CHECK_THROWS_AS(oc.validate(), std::invalid_argument);
}

TEST_CASE("transfer to the same model reproduces the oracle accuracy") {
  Fixture f;
  const Tokenizer tok(32, 32, f.tc);
  std::vector<Image> images;
  std::vector<int> labels;
  std::vector<Trajectory> trajs;
  OracleConfig oc;
  oc.lr = 1e-2;
  oc.steps = 5;
  int correct = 0;
  for (int i = 0; i < 12; ++i) {
    images.push_back(test::smooth_image(32, 32, 3, 100 + i));
    labels.push_back(i % f.cfg.num_classes);
    trajs.push_back(spot_on_search(f.params, images.back(), labels.back(), sample_uniform(4, 32, 32, i), tok, oc));
    correct += trajs.back().final_prediction == labels.back();
  }
  CHECK(transfer_positions(f.params, images, labels, trajs, tok) == correct / 12.0);
  CHECK_THROWS_AS(transfer_positions(f.params, std::span<const Image>{}, std::span<const int>{},
                                     std::span<const Trajectory>{}, tok),
                  DataError);
  labels.pop_back();
  CHECK_THROWS_AS(transfer_positions(f.params, images, labels, trajs, tok), DataError);
}

TEST_CASE("trajectory files") {
  Fixture f;
  const Image img = test::smooth_image(32, 32, 3, 12);
  const Tokenizer tok(32, 32, f.tc);
  OracleConfig oc;
  oc.steps = 3;
  const auto t = spot_on_search(f.params, img, 1, sample_uniform(3, 32, 32, 1), tok, oc);
  test::TempDir dir("oracle");
  write_trajectory(dir / "t.csv", dir / "t_loss.csv", t);
  CHECK(read_placements_csv(dir / "t.csv") == t.positions);
  std::ifstream in(dir / "t_loss.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "step,loss");
  int rows = 0;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    CHECK(std::stod(line.substr(comma + 1)) == t.losses[rows]);
    ++rows;
  }
  CHECK(rows == 4);
}
