#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "zhoi/errors.hpp"
#include "zhoi/label_space.hpp"
#include "zhoi/rng.hpp"
#include "zhoi/visual_frontend.hpp"

using namespace zhoi;
namespace fs = std::filesystem;

namespace {

Image random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  Image img(3, h, w);
  for (auto& p : img.pixels) p = rng.uniform();
  return img;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Bilinear value of channel c at continuous grid coordinate (gx, gy), clamped.
double bilinear(const FeatureGrid& g, std::size_t c, double gx, double gy) {
  gx = std::clamp(gx, 0.0, g.width - 1.0);
  gy = std::clamp(gy, 0.0, g.height - 1.0);
  double acc = 0;
  for (std::size_t y = 0; y < g.height; ++y) {
    for (std::size_t x = 0; x < g.width; ++x) {
      const double wx = std::max(0.0, 1.0 - std::abs(gx - x));
      const double wy = std::max(0.0, 1.0 - std::abs(gy - y));
      acc += wx * wy * g.values(y * g.width + x, c);
    }
  }
  return acc;
}

FeatureGrid random_grid(std::size_t h, std::size_t w, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  FeatureGrid g;
  g.height = h;
  g.width = w;
  g.values = Matrix(h * w, c);
  for (auto& v : g.values.storage()) v = rng.normal();
  return g;
}

}  // namespace

TEST_CASE("backbone stub") {
  BackboneStub bb({.channels = 64, .stride = 8, .pool = 2, .seed = 4});
  auto img = random_image(64, 64, 1);
  auto g = bb(img);
  CHECK(g.height == 8);
  CHECK(g.width == 8);
  CHECK(g.channels() == 64);
  CHECK(g.stride == 8);
  CHECK(bb(img).values == g.values);

  // Cell (2, 5), channel 7 by explicit pixel loops.
  double expect = 0;
  for (std::size_t sy = 0; sy < 2; ++sy) {
    for (std::size_t sx = 0; sx < 2; ++sx) {
      for (std::size_t c = 0; c < 3; ++c) {
        double mean = 0;
        for (std::size_t y = 0; y < 4; ++y) {
          for (std::size_t x = 0; x < 4; ++x) mean += img.at(c, 16 + sy * 4 + y, 40 + sx * 4 + x);
        }
        expect += mean / 16 * bb.projection()((sy * 2 + sx) * 3 + c, 7);
      }
    }
  }
  CHECK(g.values(2 * 8 + 5, 7) == doctest::Approx(expect).epsilon(1e-12));

  BackboneStub zero({.channels = 64, .init_scale = 0.0});
  const FeatureGrid zg = zero(Image(3, 64, 64, 0.0));
  for (double v : zg.values.storage()) CHECK(v == 0.0);
  CHECK_THROWS_AS(bb(Image(3, 8, 64)), ValidationError);
}

TEST_CASE("roi_align") {
  SUBCASE("constant grid stays constant") {
    FeatureGrid g;
    g.height = g.width = 8;
    g.values = Matrix(64, 3, 2.5);
    auto r = roi_align(g, {0.1, 0.2, 0.7, 0.9});
    CHECK(r.height == 7);
    for (double v : r.values.storage()) CHECK(v == doctest::Approx(2.5));
  }
  SUBCASE("full box on 7x7 is the identity") {
    auto g = random_grid(7, 7, 4, 3);
    auto r = roi_align(g, {0, 0, 1, 1});
    for (std::size_t i = 0; i < g.values.size(); ++i) CHECK(r.values[i] == doctest::Approx(g.values[i]).epsilon(1e-12));
  }
  SUBCASE("dense bilinear oracle") {
    auto g = random_grid(8, 8, 5, 9);
    const geometry::CornerBox box{0.13, 0.07, 0.81, 0.66};
    auto r = roi_align(g, box);
    for (std::size_t i = 0; i < 7; ++i) {
      for (std::size_t j = 0; j < 7; ++j) {
        const double gx = (box.x1 + (j + 0.5) / 7 * (box.x2 - box.x1)) * 8 - 0.5;
        const double gy = (box.y1 + (i + 0.5) / 7 * (box.y2 - box.y1)) * 8 - 0.5;
        for (std::size_t c = 0; c < 5; ++c) {
          CHECK(r.values(i * 7 + j, c) == doctest::Approx(bilinear(g, c, gx, gy)).epsilon(1e-12));
        }
      }
    }
  }
  SUBCASE("affine ramp stays affine") {
    FeatureGrid g;
    g.height = g.width = 8;
    g.values = Matrix(64, 1);
    for (std::size_t y = 0; y < 8; ++y) {
      for (std::size_t x = 0; x < 8; ++x) g.values(y * 8 + x, 0) = 0.3 * x - 1.7 * y + 2.0;
    }
    const geometry::CornerBox box{0.2, 0.25, 0.8, 0.75};  // samples stay inside the grid
    auto r = roi_align(g, box);
    for (std::size_t i = 0; i < 7; ++i) {
      for (std::size_t j = 0; j < 7; ++j) {
        const double gx = (box.x1 + (j + 0.5) / 7 * 0.6) * 8 - 0.5;
        const double gy = (box.y1 + (i + 0.5) / 7 * 0.5) * 8 - 0.5;
        CHECK(r.values(i * 7 + j, 0) == doctest::Approx(0.3 * gx - 1.7 * gy + 2.0).epsilon(1e-12));
      }
    }
  }
  CHECK_THROWS_AS(roi_align(random_grid(8, 8, 1, 1), {0.5, 0.1, 0.5, 0.4}), ValidationError);
}

TEST_CASE("clip visual stub") {
  ClipVisualStub clip({.dim = 512, .patch = 32, .pool = 4, .seed = 6});
  auto img = random_image(64, 64, 2);
  auto t = clip(img);
  CHECK(t.tokens.rows() == 4);
  CHECK(t.tokens.cols() == 512);
  CHECK(t.pad_bottom == 0);
  CHECK(clip(img).tokens == t.tokens);

  // Independent pool + projection with explicit zero padding.
  auto odd = random_image(70, 40, 3);
  auto to = clip(odd);
  CHECK(to.grid_h == 3);
  CHECK(to.grid_w == 2);
  CHECK(to.pad_bottom == 26);
  CHECK(to.pad_right == 24);
  std::vector<double> padded(3 * 96 * 64, 0.0);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < 70; ++y) {
      for (std::size_t x = 0; x < 40; ++x) padded[(c * 96 + y) * 64 + x] = odd.at(c, y, x);
    }
  }
  for (std::size_t py = 0; py < 3; ++py) {
    for (std::size_t px = 0; px < 2; ++px) {
      std::vector<double> feat;
      for (std::size_t sy = 0; sy < 4; ++sy) {
        for (std::size_t sx = 0; sx < 4; ++sx) {
          for (std::size_t c = 0; c < 3; ++c) {
            double m = 0;
            for (std::size_t y = 0; y < 8; ++y) {
              for (std::size_t x = 0; x < 8; ++x) m += padded[(c * 96 + py * 32 + sy * 8 + y) * 64 + px * 32 + sx * 8 + x];
            }
            feat.push_back(m / 64);
          }
        }
      }
      for (std::size_t d = 0; d < 512; d += 37) {
        double e = 0;
        for (std::size_t k = 0; k < feat.size(); ++k) e += feat[k] * clip.projection()(k, d);
        CHECK(to.tokens(py * 2 + px, d) == doctest::Approx(e).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("text embedders") {
  SUBCASE("hash stub golden vectors") {
    std::ifstream in(fs::path(ZHOI_TEST_DATA_DIR) / "hash_text_golden.json");
    REQUIRE(in.good());
    auto doc = nlohmann::json::parse(in);
    HashTextEmbedder h(doc["dim"].get<std::size_t>(), doc["seed"].get<std::uint64_t>());
    for (const auto& [prompt, vec] : doc["embeddings"].items()) {
      auto v = h.embed(prompt);
      auto g = vec.get<std::vector<double>>();
      REQUIRE(v.size() == g.size());
      for (std::size_t i = 0; i < v.size(); ++i) CHECK(v[i] == doctest::Approx(g[i]).epsilon(1e-12));
      CHECK(dot(v, v) == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK_THROWS_AS(h.embed(""), ValidationError);
  }
  SUBCASE("compositional stub structure") {
    std::vector<std::string> verbs{"above", "below", "left_of", "right_of", "overlapping"};
    std::vector<std::string> objects{"red_ball", "green", "blue", "orange"};
    CompositionalTextEmbedder e(verbs, objects, 32, 5, 0.1);
    auto a = e.embed(hoi_prompt("left_of", "red_ball"));
    auto b = e.embed(hoi_prompt("left_of", "blue"));
    auto c = e.embed(hoi_prompt("below", "orange"));
    CHECK(dot(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(a[2] > 0.7);
    CHECK(a[2] == doctest::Approx(b[2]));
    for (std::size_t v = 0; v < 5; ++v) CHECK((v == 2 ? a[v] > 0 : a[v] == 0.0));
    CHECK(a[5 + 0] > 0.7);
    CHECK(dot(a, b) > dot(a, c));
    auto o = e.embed(object_prompt("orange"));
    for (std::size_t v = 0; v < 5; ++v) CHECK(o[v] == 0.0);
    CHECK(o[5 + 3] > 0.9);
    CHECK_THROWS_AS(e.embed("A photo of a person kick a ball"), ValidationError);
    CHECK_THROWS_AS(CompositionalTextEmbedder(verbs, objects, 8, 1), ValidationError);
  }
  SUBCASE("external directory") {
    const fs::path dir = fs::temp_directory_path() / "zhoi_ext_text";
    fs::create_directories(dir);
    write_npy(dir / "a.npy", Matrix(1, 3, std::vector<double>{3, 0, 4}));
    {
      // float32 1-D array written by hand
      std::ofstream f(dir / "b.npy", std::ios::binary);
      std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (3,), }";
      while ((10 + header.size() + 1) % 64) header.push_back(' ');
      header.push_back('\n');
      f.write("\x93NUMPY\x01\x00", 8);
      const char len[2] = {static_cast<char>(header.size()), 0};
      f.write(len, 2);
      f << header;
      const float vals[3] = {0.f, 2.f, 0.f};
      f.write(reinterpret_cast<const char*>(vals), sizeof vals);
    }
    std::ofstream(dir / "index.json") << R"({"A photo of a cat": "a.npy", "A photo of a dog": "b.npy"})";
    ExternalTextEmbedder ext(dir);
    CHECK(ext.dim() == 3);
    auto v = ext.embed("A photo of a cat");
    CHECK(v[0] == doctest::Approx(0.6));
    CHECK(v[2] == doctest::Approx(0.8));
    CHECK(ext.embed("A photo of a dog")[1] == doctest::Approx(1.0));
    CHECK_THROWS_AS(ext.embed("A photo of a cow"), ValidationError);
    fs::remove_all(dir);
  }
}
