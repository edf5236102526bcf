#include <cstring>
#include <string>

#include "doctest.h"
#include "spot/errors.hpp"
#include "spot/imagery.hpp"
#include "test_util.hpp"

using namespace spot;

namespace {

std::vector<std::uint8_t> pnm(const std::string& header, std::vector<std::uint8_t> payload) {
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

}  // namespace

TEST_CASE("P6 with all bytes 255 loads as ones") {
  test::TempDir dir("img");
  write_file_bytes(dir / "a.ppm", pnm("P6\n2 2\n255\n", std::vector<std::uint8_t>(12, 255)));
  const Image img = load_image(dir / "a.ppm");
  CHECK(img.height() == 2);
  CHECK(img.width() == 2);
  CHECK(img.channels() == 3);
  for (double v : img.data()) CHECK(v == 1.0);
}

TEST_CASE("P6 byte 128 maps to 128/255") {
  test::TempDir dir("img");
  std::vector<std::uint8_t> px(12, 0);
  px[4] = 128;
  write_file_bytes(dir / "a.ppm", pnm("P6\n# a comment\n2 2\n255\n", px));
  const Image img = load_image(dir / "a.ppm");
  CHECK(img.at(0, 1, 1) == 128.0 / 255.0);
  CHECK(img.at(0, 1, 1) == doctest::Approx(0.50196).epsilon(1e-5));
}

TEST_CASE("PPM header errors") {
  test::TempDir dir("img");
  write_file_bytes(dir / "max.ppm", pnm("P6\n2 2\n65535\n", std::vector<std::uint8_t>(24, 0)));
  CHECK_THROWS_AS(load_image(dir / "max.ppm"), DataError);
  write_file_bytes(dir / "small.ppm", pnm("P6\n1 2\n255\n", std::vector<std::uint8_t>(6, 0)));
  CHECK_THROWS_AS(load_image(dir / "small.ppm"), DataError);
  write_file_bytes(dir / "junk.ppm", pnm("P6\nx 2\n255\n", std::vector<std::uint8_t>(12, 0)));
  CHECK_THROWS_AS(load_image(dir / "junk.ppm"), DataError);
  write_file_bytes(dir / "short.ppm", pnm("P6\n2 2\n255\n", std::vector<std::uint8_t>(11, 0)));
  CHECK_THROWS_AS(load_image(dir / "short.ppm"), DataError);
  CHECK_THROWS_AS(load_image(dir / "missing.ppm"), DataError);
}

TEST_CASE("TensorFile with ndim 2 is not an image") {
  test::TempDir dir("img");
  save_tensor(dir / "t.sptf", Tensor{{2, 3}, {0, 0.1, 0.2, 0.3, 0.4, 0.5}, DType::f64});
  try {
    load_image(dir / "t.sptf");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("not an image") != std::string::npos);
  }
  const SaliencyMask m = load_mask(dir / "t.sptf");
  CHECK(m.height() == 2);
  CHECK(m.at(1, 2) == 0.5);
}

TEST_CASE("TensorFile with ndim 3 loads as an image") {
  test::TempDir dir("img");
  const Image src = test::random_image(3, 4, 3, 5);
  save_tensor(dir / "i.sptf", Tensor{{3, 4, 3}, {src.data().begin(), src.data().end()}, DType::f64});
  CHECK(load_image(dir / "i.sptf") == src);
}

TEST_CASE("PGM masks") {
  test::TempDir dir("img");
  write_file_bytes(dir / "z.pgm", pnm("P5\n3 2\n255\n", std::vector<std::uint8_t>(6, 0)));
  const auto zeros = load_mask(dir / "z.pgm");
  for (double v : zeros.data()) CHECK(v == 0.0);
  write_file_bytes(dir / "o.pgm", pnm("P5\n3 2\n255\n", std::vector<std::uint8_t>(6, 255)));
  const auto ones = load_mask(dir / "o.pgm");
  for (double v : ones.data()) CHECK(v == 1.0);
  write_file_bytes(dir / "t.pgm", pnm("P5\n3 2\n255\n", std::vector<std::uint8_t>(5, 0)));
  CHECK_THROWS_AS(load_mask(dir / "t.pgm"), DataError);
  // A color image is not a mask.
  write_file_bytes(dir / "c.ppm", pnm("P6\n2 2\n255\n", std::vector<std::uint8_t>(12, 0)));
  CHECK_THROWS_AS(load_mask(dir / "c.ppm"), DataError);
}

TEST_CASE("tensor round-trips are bit-exact") {
  test::TempDir dir("img");
  const Tensor small{{2, 3}, {0, 1, 2, 3, 4, 5}, DType::f64};
  save_tensor(dir / "a.sptf", small);
  CHECK(load_tensor(dir / "a.sptf") == small);

  CounterRng rng(11);
  Tensor wide{{4, 5, 6}, {}, DType::f64};
  for (int i = 0; i < 120; ++i) wide.values.push_back((rng.uniform() - 0.5) * std::ldexp(1.0, static_cast<int>(rng.below(40)) - 20));
  save_tensor(dir / "b.sptf", wide);
  const Tensor back = load_tensor(dir / "b.sptf");
  REQUIRE(back.values.size() == wide.values.size());
  CHECK(std::memcmp(back.values.data(), wide.values.data(), wide.values.size() * sizeof(double)) == 0);

  // f32 stores exactly representable values unchanged.
  const Tensor f32{{3}, {0.5, -1.25, 3.0}, DType::f32};
  save_tensor(dir / "c.sptf", f32);
  CHECK(load_tensor(dir / "c.sptf") == f32);
}

TEST_CASE("tensor layout is little-endian with the documented header") {
  const auto bytes = encode_tensor(Tensor{{2}, {1.0, -2.0}, DType::f64});
  REQUIRE(bytes.size() == 4 + 4 * 3 + 4 + 16);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "SPTF");
  CHECK(bytes[4] == 1);   // version
  CHECK(bytes[8] == 1);   // dtype f64
  CHECK(bytes[12] == 1);  // ndim
  CHECK(bytes[16] == 2);  // dims[0]
  // 1.0 = 0x3ff0000000000000, least significant byte first.
  CHECK(bytes[20] == 0x00);
  CHECK(bytes[27] == 0x3f);
  CHECK(bytes[26] == 0xf0);
}

TEST_CASE("tensor decoding errors") {
  test::TempDir dir("img");
  auto bytes = encode_tensor(Tensor{{2}, {1.0, 2.0}, DType::f64});
  auto bad = bytes;
  bad[0] = 'X';
  write_file_bytes(dir / "magic.sptf", bad);
  CHECK_THROWS_AS(load_tensor(dir / "magic.sptf"), DataError);
  auto cut = bytes;
  cut.pop_back();
  write_file_bytes(dir / "cut.sptf", cut);
  CHECK_THROWS_AS(load_tensor(dir / "cut.sptf"), DataError);
  auto ver = bytes;
  ver[4] = 9;
  write_file_bytes(dir / "ver.sptf", ver);
  CHECK_THROWS_AS(load_tensor(dir / "ver.sptf"), DataError);
  CHECK_THROWS_AS(encode_tensor(Tensor{{}, {}, DType::f64}), std::invalid_argument);
  CHECK_THROWS_AS(encode_tensor(Tensor{{1}, {std::nan("")}, DType::f64}), std::invalid_argument);
}

TEST_CASE("image invariants") {
  CHECK_THROWS_AS(Image(2, 2, 1, {0, 0.5, 1.0, 1.5}), DataError);
  CHECK_THROWS_AS(Image(2, 2, 1, {0, 0.5, 1.0}), DataError);
  CHECK_THROWS_AS(Image(1, 2, 1, {0, 0}), DataError);
  CHECK_THROWS_AS(Image(2, 2, 2, std::vector<double>(8, 0)), DataError);
  CHECK_THROWS_AS(SaliencyMask(2, 2, {0, 0, std::nan(""), 0}), DataError);
}

TEST_CASE("PPM import is lossless with respect to bytes") {
  test::TempDir dir("img");
  std::vector<std::uint8_t> px(5 * 7 * 3);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<std::uint8_t>((i * 37) % 256);
  write_file_bytes(dir / "a.ppm", pnm("P6\n7 5\n255\n", px));
  const Image img = load_image(dir / "a.ppm");
  CHECK(img.to_bytes() == px);
  save_ppm(dir / "b.ppm", img);
  CHECK(read_file_bytes(dir / "b.ppm") == read_file_bytes(dir / "a.ppm"));
  CHECK(load_image(dir / "b.ppm") == img);

  std::vector<std::uint8_t> mb(6);
  for (std::size_t i = 0; i < mb.size(); ++i) mb[i] = static_cast<std::uint8_t>(i * 50);
  const SaliencyMask m = SaliencyMask::from_bytes(2, 3, mb);
  save_pgm(dir / "m.pgm", m);
  CHECK(load_mask(dir / "m.pgm") == m);
}
