#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "spot/encoder.hpp"
#include "spot/errors.hpp"
#include "test_util.hpp"

using namespace spot;

namespace {

EncoderConfig small_config() {
  EncoderConfig c;
  c.depth = 2;
  c.width = 16;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.num_classes = 5;
  c.token_dim = 12;  // k = 2, RGB
  return c;
}

TokenizerConfig small_tokenizer() {
  TokenizerConfig t;
  t.window = 2;
  t.embed_dim = 16;
  t.num_freqs = 3;
  t.freq_seed = 4;
  return t;
}

// Initialized weights plus noise, so layer norms and biases are not at
// special values where gradients could vanish by symmetry.
EncoderParams noisy_params(const EncoderConfig& cfg, std::uint64_t seed) {
  auto p = EncoderParams::initialize(cfg, seed);
  CounterRng rng(seed + 100);
  for (auto& v : p.mutable_values()) v += 0.1 * rng.normal();
  return p;
}

std::vector<Token> random_tokens(int m, int token_dim, int d, std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<Token> t(m);
  for (auto& tok : t) {
    tok.features.resize(token_dim);
    tok.pos_embedding.resize(d);
    for (auto& v : tok.features) v = rng.uniform();
    for (auto& v : tok.pos_embedding) v = rng.normal();
    tok.position = {rng.uniform(0, 10), rng.uniform(0, 10)};
  }
  return t;
}

double loss_of(const EncoderParams& p, std::span<const Token> t, int label) {
  return cross_entropy(forward(p, t).logits, label, p.config().label_smoothing);
}

double rel(double a, double b, double floor) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor}); }

}  // namespace

TEST_CASE("zero parameters give a uniform softmax") {
  auto cfg = small_config();
  const EncoderParams zero(cfg);
  const auto tr = forward(zero, random_tokens(4, cfg.token_dim, cfg.width, 1));
  for (double p : tr.probabilities) CHECK(p == doctest::Approx(1.0 / cfg.num_classes).epsilon(1e-15));
  for (double l : tr.logits) CHECK(l == 0.0);
}

TEST_CASE("forward is invariant to token order") {
  auto cfg = small_config();
  const auto p = noisy_params(cfg, 2);
  auto tokens = random_tokens(7, cfg.token_dim, cfg.width, 3);
  const auto a = forward(p, tokens);
  std::vector<Token> perm{tokens[3], tokens[6], tokens[0], tokens[5], tokens[1], tokens[4], tokens[2]};
  const auto b = forward(p, perm);
  for (int c = 0; c < cfg.num_classes; ++c) CHECK(std::abs(a.logits[c] - b.logits[c]) <= 1e-12);
  for (int i = 0; i < cfg.width; ++i) CHECK(std::abs(a.cls_feature[i] - b.cls_feature[i]) <= 1e-12);
  CHECK(std::accumulate(a.probabilities.begin(), a.probabilities.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));

  // Token gradients permute with the tokens.
  const auto ga = backward_tokens(a, 1);
  const auto gb = backward_tokens(b, 1);
  const int order[] = {3, 6, 0, 5, 1, 4, 2};
  for (int i = 0; i < 7; ++i) {
    for (int j = 0; j < cfg.token_dim; ++j) CHECK(std::abs(gb.features[i][j] - ga.features[order[i]][j]) <= 1e-12);
  }
}

TEST_CASE("cross entropy") {
  const std::vector<double> flat(10, 0.3);
  CHECK(cross_entropy(flat, 4, 0.0) == doctest::Approx(std::log(10.0)).epsilon(1e-14));
  CHECK(cross_entropy(flat, 4, 0.1) == doctest::Approx(std::log(10.0)).epsilon(1e-14));
  CHECK(cross_entropy(flat, 4, 0.0) == doctest::Approx(2.302585).epsilon(1e-6));
  std::vector<double> sharp(10, 0.0);
  double last = 1e9;
  for (double margin : {1.0, 5.0, 20.0, 60.0}) {
    sharp[2] = margin;
    const double l = cross_entropy(sharp, 2, 0.0);
    CHECK(l < last);
    last = l;
  }
  CHECK(last < 1e-20);
  CHECK_THROWS_AS(cross_entropy(flat, 10, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(cross_entropy(flat, -1, 0.0), std::invalid_argument);
  CHECK(softmax(std::vector<double>{1000.0, 1000.0})[0] == 0.5);
}

TEST_CASE("parameter gradients match central differences") {
  auto cfg = small_config();
  cfg.label_smoothing = 0.1;
  auto p = noisy_params(cfg, 5);
  const auto tokens = random_tokens(5, cfg.token_dim, cfg.width, 6);
  const int label = 3;
  const auto grad = backward_params(forward(p, tokens), label);
  REQUIRE(grad.size() == p.values().size());

  constexpr double h = 1e-5;
  double worst = 0.0;
  std::string worst_name;
  for (const auto& t : p.layout().tensors) {
    for (std::size_t k = 0; k < t.size; ++k) {
      const std::size_t i = t.offset + k;
      EncoderParams a = p, b = p;
      a.mutable_values()[i] += h;
      b.mutable_values()[i] -= h;
      const double fd = (loss_of(a, tokens, label) - loss_of(b, tokens, label)) / (2 * h);
      // Key biases have an exactly zero gradient, so their difference
      // quotient is pure roundoff, about 1e-16·|L|/h ≈ 4e-11. The floor
      // sits above that.
      const double r = rel(grad[i], fd, 1e-5);
      if (r > worst) {
        worst = r;
        worst_name = t.name;
      }
    }
  }
  INFO("worst " << worst << " in " << worst_name);
  CHECK(worst <= 1e-5);
}

TEST_CASE("token gradients match central differences") {
  auto cfg = small_config();
  const auto p = noisy_params(cfg, 7);
  auto tokens = random_tokens(4, cfg.token_dim, cfg.width, 8);
  const int label = 1;
  const auto g = backward_tokens(forward(p, tokens), label);
  constexpr double h = 1e-5;
  double worst = 0.0;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < cfg.token_dim; ++j) {
      auto a = tokens, b = tokens;
      a[i].features[j] += h;
      b[i].features[j] -= h;
      worst = std::max(worst, rel(g.features[i][j], (loss_of(p, a, label) - loss_of(p, b, label)) / (2 * h), 1e-6));
    }
    for (int j = 0; j < cfg.width; ++j) {
      auto a = tokens, b = tokens;
      a[i].pos_embedding[j] += h;
      b[i].pos_embedding[j] -= h;
      worst = std::max(worst, rel(g.pos_embedding[i][j], (loss_of(p, a, label) - loss_of(p, b, label)) / (2 * h), 1e-6));
    }
  }
  INFO("worst " << worst);
  CHECK(worst <= 1e-5);
}

TEST_CASE("a zero head blocks every upstream gradient") {
  auto cfg = small_config();
  auto p = noisy_params(cfg, 9);
  const auto& L = p.layout();
  {
    auto v = p.mutable_values();
    std::fill_n(v.begin() + L.head_w, cfg.num_classes * cfg.width, 0.0);
  }
  const auto tokens = random_tokens(3, cfg.token_dim, cfg.width, 10);
  const auto g = backward_params(forward(p, tokens), 2);
  for (std::size_t i = 0; i < L.head_b; ++i) {
    if (i >= L.head_w && i < L.head_w + static_cast<std::size_t>(cfg.num_classes * cfg.width)) continue;
    REQUIRE(g[i] == 0.0);
  }
  // The head itself still learns.
  double head = 0.0;
  for (int i = 0; i < cfg.num_classes * cfg.width; ++i) head += std::abs(g[L.head_w + i]);
  CHECK(head > 0.0);
  for (const auto& row : backward_tokens(forward(p, tokens), 2).features)
    for (double v : row) CHECK(v == 0.0);
}

TEST_CASE("identical attention heads receive identical gradients") {
  auto cfg = small_config();
  auto p = noisy_params(cfg, 11);
  const int d = cfg.width, dh = cfg.head_dim();
  const auto& B = p.layout().blocks[0];
  {
    auto v = p.mutable_values();
    for (int part = 0; part < 3; ++part) {
      for (int r = 0; r < dh; ++r) {
        const int src = part * d + r, dst = part * d + dh + r;
        std::copy_n(v.begin() + B.qkv_w + static_cast<std::size_t>(src) * d, d, v.begin() + B.qkv_w + static_cast<std::size_t>(dst) * d);
        v[B.qkv_b + dst] = v[B.qkv_b + src];
      }
    }
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < dh; ++c) v[B.proj_w + r * d + dh + c] = v[B.proj_w + r * d + c];
  }
  const auto g = backward_params(forward(p, random_tokens(4, cfg.token_dim, d, 12)), 0);
  for (int part = 0; part < 3; ++part) {
    for (int r = 0; r < dh; ++r) {
      const int src = part * d + r, dst = part * d + dh + r;
      for (int c = 0; c < d; ++c) CHECK(g[B.qkv_w + src * d + c] == doctest::Approx(g[B.qkv_w + dst * d + c]).epsilon(1e-12));
      CHECK(g[B.qkv_b + src] == doctest::Approx(g[B.qkv_b + dst]).epsilon(1e-12));
    }
  }
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < dh; ++c) CHECK(g[B.proj_w + r * d + c] == doctest::Approx(g[B.proj_w + r * d + dh + c]).epsilon(1e-12));
}

TEST_CASE("backward rejects a stale trace") {
  auto cfg = small_config();
  auto p = noisy_params(cfg, 13);
  const auto tr = forward(p, random_tokens(2, cfg.token_dim, cfg.width, 14));
  CHECK_NOTHROW(backward_params(tr, 0));
  p.mutable_values()[0] += 1.0;
  CHECK_THROWS_AS(backward_params(tr, 0), std::logic_error);
  CHECK_THROWS_AS(backward_tokens(tr, 0), std::logic_error);
}

TEST_CASE("forward validates its input") {
  auto cfg = small_config();
  const auto p = noisy_params(cfg, 15);
  CHECK_THROWS_AS(forward(p, std::vector<Token>{}), std::invalid_argument);
  auto bad = random_tokens(2, cfg.token_dim + 1, cfg.width, 16);
  CHECK_THROWS_AS(forward(p, bad), DataError);
  auto bad_pe = random_tokens(2, cfg.token_dim, cfg.width - 4, 16);
  CHECK_THROWS_AS(forward(p, bad_pe), DataError);
  EncoderConfig odd = cfg;
  odd.heads = 3;
  CHECK_THROWS_AS(odd.validate(), std::invalid_argument);
}

TEST_CASE("position gradients match central differences") {
  auto cfg = small_config();
  auto tc = small_tokenizer();
  const auto p = noisy_params(cfg, 17);
  const Image img = test::smooth_image(24, 24, 3, 18);
  const Tokenizer tok(24, 24, tc);
  CounterRng rng(19);
  constexpr double eps = 1e-3;
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    PlacementSet s(3);
    for (auto& q : s) {
      // k = 2: samples at s ± 0.5, so keep frac(s + 0.5) away from 0 and 1.
      q.x = std::floor(rng.uniform(2, 20)) + rng.uniform(0.1, 0.9) - 0.5;
      q.y = std::floor(rng.uniform(2, 20)) + rng.uniform(0.1, 0.9) - 0.5;
    }
    const int label = static_cast<int>(rng.below(cfg.num_classes));
    const auto pg = position_gradient(p, img, s, label, tok);
    REQUIRE(pg.gradient.size() == 3u);
    double gmax = 0.0, emax = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      for (int axis = 0; axis < 2; ++axis) {
        auto a = s, b = s;
        (axis ? a[i].y : a[i].x) += eps;
        (axis ? b[i].y : b[i].x) -= eps;
        const double fd = (classify(p, img, a, label, tok).loss - classify(p, img, b, label, tok).loss) / (2 * eps);
        const double an = axis ? pg.gradient[i].y : pg.gradient[i].x;
        gmax = std::max(gmax, std::abs(fd));
        emax = std::max(emax, std::abs(fd - an));
      }
    }
    worst = std::max(worst, emax / gmax);
  }
  INFO("worst " << worst);
  CHECK(worst <= 1e-4);
}

TEST_CASE("position gradient paths") {
  auto cfg = small_config();
  const auto p = noisy_params(cfg, 21);
  const Image flat(16, 16, 3, std::vector<double>(768, 0.4));
  const Tokenizer tok(16, 16, small_tokenizer());
  const PlacementSet s{{4.3, 5.2}, {9.9, 2.2}};

  const auto feat_only = position_gradient(p, flat, s, 1, tok, {true, false});
  for (const auto& g : feat_only.gradient) {
    CHECK(g.x == 0.0);
    CHECK(g.y == 0.0);
  }
  // The feature gradient itself is not zero, the patch jacobian is.
  const auto tg = backward_tokens(forward(p, tok(flat, s)), 1);
  double mass = 0.0;
  for (const auto& f : tg.features)
    for (double v : f) mass += std::abs(v);
  CHECK(mass > 0.0);
  const auto both = position_gradient(p, flat, s, 1, tok);
  const auto emb = position_gradient(p, flat, s, 1, tok, {false, true});
  CHECK(both.gradient == emb.gradient);

  const auto one = position_gradient(p, flat, PlacementSet{{3.0, 3.0}}, 0, tok);
  CHECK(one.gradient.size() == 1u);
}

TEST_CASE("position gradient leaves the parameters alone") {
  auto cfg = small_config();
  const auto p = noisy_params(cfg, 23);
  const auto before = p.digest();
  const auto gen = p.generation();
  const Image img = test::smooth_image(16, 16, 3, 1);
  const Tokenizer tok(16, 16, small_tokenizer());
  position_gradient(p, img, PlacementSet{{3.3, 4.4}, {8.0, 8.0}}, 2, tok);
  CHECK(p.digest() == before);
  CHECK(p.generation() == gen);
}

TEST_CASE("duplicated token snapshot") {
  EncoderConfig cfg = small_config();
  const auto p = EncoderParams::initialize(cfg, 31);
  const Image img = test::smooth_image(16, 16, 3, 2);
  const Tokenizer tok(16, 16, small_tokenizer());
  const auto single = forward(p, tok(img, PlacementSet{{6.5, 7.5}}));
  const auto pair = forward(p, tok(img, PlacementSet{{6.5, 7.5}, {6.5, 7.5}}));
  // Reference values from the implementation at the time this test was written.
  const std::vector<double> single_ref{-0.15175976722123635, -0.11474485107729986, 0.12796040672832398,
                                         -0.046807910214311868, -0.060310633797657984};
  const std::vector<double> pair_ref{-0.12257829295833972, -0.10833825474920993, 0.12311885299626801,
                                       -0.0040401885718539809, -0.051969284554520413};
  for (int c = 0; c < cfg.num_classes; ++c) {
    CHECK(single.logits[c] == doctest::Approx(single_ref[c]).epsilon(1e-9));
    CHECK(pair.logits[c] == doctest::Approx(pair_ref[c]).epsilon(1e-9));
  }
  double diff = 0.0;
  for (int c = 0; c < cfg.num_classes; ++c) diff = std::max(diff, std::abs(single.logits[c] - pair.logits[c]));
  CHECK(diff > 0.0);
}

TEST_CASE("parameter files round-trip") {
  test::TempDir dir("enc");
  auto cfg = small_config();
  const auto p = noisy_params(cfg, 25);
  const auto tc = small_tokenizer();
  save_params(dir / "m.sptb", p, tc);
  const auto back = load_params(dir / "m.sptb");
  CHECK(back.params.config() == cfg);
  CHECK(back.tokenizer == tc);
  REQUIRE(back.params.values().size() == p.values().size());
  CHECK(std::equal(back.params.values().begin(), back.params.values().end(), p.values().begin()));
  const auto tokens = random_tokens(3, cfg.token_dim, cfg.width, 26);
  CHECK(forward(back.params, tokens).logits == forward(p, tokens).logits);

  EncoderConfig other = cfg;
  other.depth = 3;
  CHECK_THROWS_AS(load_params(dir / "m.sptb", other), DataError);
  CHECK_NOTHROW(load_params(dir / "m.sptb", cfg));

  auto bytes = read_file_bytes(dir / "m.sptb");
  bytes.resize(bytes.size() - 8);
  write_file_bytes(dir / "cut.sptb", bytes);
  CHECK_THROWS_AS(load_params(dir / "cut.sptb"), DataError);
}
