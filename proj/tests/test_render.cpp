#include <zlib.h>

#include <algorithm>
#include <fstream>
#include <regex>
#include <sstream>

#include "doctest.h"
#include "spot/errors.hpp"
#include "spot/render.hpp"
#include "test_util.hpp"

using namespace spot;

namespace {

int count(const std::string& s, const std::string& needle) {
  int n = 0;
  for (auto pos = s.find(needle); pos != std::string::npos; pos = s.find(needle, pos + 1)) ++n;
  return n;
}

std::vector<std::uint8_t> base64_decode(const std::string& in) {
  static const std::string alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::vector<std::uint8_t> out;
  std::uint32_t buf = 0;
  int bits = 0;
  for (char c : in) {
    if (c == '=') break;
    buf = (buf << 6) | static_cast<std::uint32_t>(alphabet.find(c));
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<std::uint8_t>((buf >> bits) & 0xff));
    }
  }
  return out;
}

std::uint32_t be32(const std::uint8_t* p) { return (p[0] << 24) | (p[1] << 16) | (p[2] << 8) | p[3]; }

std::vector<PlacementSet> walk(int m, int steps, std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<PlacementSet> rows{sample_uniform(m, 64, 64, seed)};
  for (int t = 0; t < steps; ++t) {
    auto next = rows.back();
    for (auto& p : next) {
      p.x = std::clamp(p.x + rng.normal(), 0.0, 63.0);
      p.y = std::clamp(p.y + rng.normal(), 0.0, 63.0);
    }
    rows.push_back(next);
  }
  return rows;
}

}  // namespace

TEST_CASE("base64") {
  const std::string text = "any carnal pleas";
  for (std::size_t n = 0; n <= text.size(); ++n) {
    const std::vector<std::uint8_t> bytes(text.begin(), text.begin() + n);
    const auto enc = base64_encode(bytes);
    CHECK(enc.size() == (n + 2) / 3 * 4);
    CHECK(base64_decode(enc) == bytes);
  }
  CHECK(base64_encode(std::vector<std::uint8_t>{'M', 'a', 'n'}) == "TWFu");
  CHECK(base64_encode(std::vector<std::uint8_t>{'M', 'a'}) == "TWE=");
}

TEST_CASE("png encoding decodes back to the image bytes") {
  const Image img = test::random_image(5, 7, 3, 4);
  const auto png = encode_png(img);
  REQUIRE(png.size() > 8 + 25);
  CHECK(png[1] == 'P');
  CHECK(be32(png.data() + 16) == 7u);
  CHECK(be32(png.data() + 20) == 5u);
  CHECK(png[25] == 2);
  // IHDR chunk CRC.
  CHECK(be32(png.data() + 29) == crc32(0, png.data() + 12, 17));
  const std::uint32_t idat_len = be32(png.data() + 33);
  REQUIRE(std::string(png.begin() + 37, png.begin() + 41) == "IDAT");
  std::vector<std::uint8_t> raw(5 * (1 + 7 * 3));
  uLongf raw_len = raw.size();
  REQUIRE(uncompress(raw.data(), &raw_len, png.data() + 41, idat_len) == Z_OK);
  REQUIRE(raw_len == raw.size());
  const auto bytes = img.to_bytes();
  for (int y = 0; y < 5; ++y) {
    CHECK(raw[y * 22] == 0);
    for (int i = 0; i < 21; ++i) CHECK(raw[y * 22 + 1 + i] == bytes[y * 21 + i]);
  }
}

TEST_CASE("viridis ramp runs dark to bright") {
  CHECK(viridis_hex(0.0) == "#440154");
  CHECK(viridis_hex(1.0) == "#fde725");
  auto luma = [](const std::string& hex) {
    const int r = std::stoi(hex.substr(1, 2), nullptr, 16), g = std::stoi(hex.substr(3, 2), nullptr, 16),
              b = std::stoi(hex.substr(5, 2), nullptr, 16);
    return 0.2126 * r + 0.7152 * g + 0.0722 * b;
  };
  double last = -1.0;
  for (int i = 0; i <= 20; ++i) {
    const double l = luma(viridis_hex(i / 20.0));
    CHECK(l > last);
    last = l;
  }
}

TEST_CASE("svg element counts") {
  const Image img = test::random_image(64, 64, 3, 1);
  const auto rows = walk(25, 5, 2);
  const auto svg = render_trajectory_svg(img, rows, 8);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(count(svg, "<polyline") == 25);
  CHECK(count(svg, "<rect") == 25);
  CHECK(count(svg, "class=\"start\"") == 25);
  CHECK(count(svg, "class=\"step\"") == 25 * 5);
  CHECK(count(svg, "data:image/png;base64,") == 1);
  CHECK(svg.find("</svg>") != std::string::npos);
  // Step markers run from the dark end of the ramp to the bright end.
  const auto steps = svg.find("class=\"steps\"");
  REQUIRE(steps != std::string::npos);
  CHECK(svg.find(viridis_hex(1.0 / 5), steps) < svg.find(viridis_hex(5.0 / 5), steps));
}

TEST_CASE("zero-step trajectories still render") {
  const Image img = test::random_image(64, 64, 3, 3);
  const auto svg = render_trajectory_svg(img, walk(4, 0, 4), 8);
  CHECK(count(svg, "<polyline") == 4);
  CHECK(count(svg, "<rect") == 4);
  CHECK(count(svg, "class=\"step\"") == 0);
  // Each polyline is a single point.
  const std::regex poly("points=\"([^\"]*)\"");
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), poly); it != std::sregex_iterator(); ++it) {
    CHECK((*it)[1].str().find(' ') == std::string::npos);
  }
}

TEST_CASE("svg coordinates match the trajectory") {
  const Image img = test::random_image(64, 64, 3, 5);
  const auto rows = walk(6, 7, 6);
  const auto svg = render_trajectory_svg(img, rows, 8);
  const std::regex poly("points=\"([^\"]*)\"");
  std::size_t token = 0;
  double worst = 0.0;
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), poly); it != std::sregex_iterator(); ++it, ++token) {
    std::istringstream in((*it)[1].str());
    std::string pair;
    std::size_t t = 0;
    while (in >> pair) {
      const auto comma = pair.find(',');
      worst = std::max(worst, std::abs(std::stod(pair.substr(0, comma)) - rows[t][token].x));
      worst = std::max(worst, std::abs(std::stod(pair.substr(comma + 1)) - rows[t][token].y));
      ++t;
    }
    CHECK(t == rows.size());
  }
  CHECK(token == 6u);
  CHECK(worst <= 1e-3);

  const std::regex rect("<rect x=\"([^\"]*)\" y=\"([^\"]*)\" width=\"8\" height=\"8\"");
  token = 0;
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), rect); it != std::sregex_iterator(); ++it, ++token) {
    CHECK(std::abs(std::stod((*it)[1].str()) + 4 - rows.back()[token].x) <= 1e-3);
    CHECK(std::abs(std::stod((*it)[2].str()) + 4 - rows.back()[token].y) <= 1e-3);
  }
  CHECK(token == 6u);
}

TEST_CASE("render input errors") {
  test::TempDir dir("render");
  const Image img = test::random_image(64, 64, 3, 7);
  save_ppm(dir / "i.ppm", img);
  write_placements_csv(dir / "ok.csv", walk(3, 2, 8));
  render_trajectory_file(dir / "ok.csv", dir / "i.ppm", dir / "ok.svg", 8);
  CHECK(std::filesystem::file_size(dir / "ok.svg") > 0);

  std::ofstream(dir / "odd.csv") << "x0,y0,x1\n1,2,3\n";
  CHECK_THROWS_AS(render_trajectory_file(dir / "odd.csv", dir / "i.ppm", dir / "x.svg", 8), DataError);
  std::ofstream(dir / "short.csv") << "x0,y0,x1,y1\n1,2,3,4\n1,2\n";
  CHECK_THROWS_AS(render_trajectory_file(dir / "short.csv", dir / "i.ppm", dir / "x.svg", 8), DataError);
  std::ofstream(dir / "far.csv") << "x0,y0\n1,200\n";
  CHECK_THROWS_AS(render_trajectory_file(dir / "far.csv", dir / "i.ppm", dir / "x.svg", 8), DataError);
  CHECK_THROWS_AS(render_trajectory_svg(img, std::vector<PlacementSet>{}, 8), DataError);
}
