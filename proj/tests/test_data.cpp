#include "clbench/data.hpp"

#include "clbench/rng.hpp"

#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

using namespace clbench;
namespace fs = std::filesystem;

namespace {

void write_be32(std::ofstream& f, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  f.write(reinterpret_cast<char*>(b), 4);
}

fs::path tmp_dir() {
  fs::path dir = fs::temp_directory_path() / "clbench_data_test";
  fs::create_directories(dir);
  return dir;
}

std::string write_idx_images(const std::string& name, int n, int h, int w,
                             const std::vector<std::uint8_t>& pixels,
                             std::uint32_t magic = 0x00000803) {
  fs::path p = tmp_dir() / name;
  std::ofstream f(p, std::ios::binary);
  write_be32(f, magic);
  write_be32(f, static_cast<std::uint32_t>(n));
  write_be32(f, static_cast<std::uint32_t>(h));
  write_be32(f, static_cast<std::uint32_t>(w));
  f.write(reinterpret_cast<const char*>(pixels.data()),
          static_cast<std::streamsize>(pixels.size()));
  return p.string();
}

std::string write_idx_labels(const std::string& name, const std::vector<std::uint8_t>& labels,
                             std::uint32_t magic = 0x00000801) {
  fs::path p = tmp_dir() / name;
  std::ofstream f(p, std::ios::binary);
  write_be32(f, magic);
  write_be32(f, static_cast<std::uint32_t>(labels.size()));
  f.write(reinterpret_cast<const char*>(labels.data()),
          static_cast<std::streamsize>(labels.size()));
  return p.string();
}

std::string write_cifar(const std::string& name, int records) {
  fs::path p = tmp_dir() / name;
  std::ofstream f(p, std::ios::binary);
  auto g = rng::make_stream(7, rng::Stream::misc);
  for (int i = 0; i < records; ++i) {
    unsigned char coarse = static_cast<unsigned char>(i % 20);
    unsigned char fine = static_cast<unsigned char>(i % 100);
    f.put(static_cast<char>(coarse));
    f.put(static_cast<char>(fine));
    for (int j = 0; j < 3072; ++j) f.put(static_cast<char>(rng::next_below(g, 256)));
  }
  return p.string();
}

}  // namespace

TEST_CASE("idx round trip with synthetic files") {
  const int n = 5, h = 4, w = 3;
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(n * h * w));
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = static_cast<std::uint8_t>(i * 7 % 256);
  std::vector<std::uint8_t> labels{0, 1, 2, 1, 0};
  auto ip = write_idx_images("img_ok", n, h, w, pixels);
  auto lp = write_idx_labels("lab_ok", labels);
  ImageSet set = load_idx(ip, lp);
  CHECK(set.count() == n);
  CHECK(set.height == h);
  CHECK(set.width == w);
  CHECK(set.class_count == 3);
  CHECK(set.pixels == pixels);
  CHECK(set.labels == std::vector<int>{0, 1, 2, 1, 0});
}

TEST_CASE("idx error paths are distinct") {
  std::vector<std::uint8_t> pixels(12, 0);
  std::vector<std::uint8_t> labels{0, 1};

  SUBCASE("images magic on the labels file") {
    auto ip = write_idx_images("img_m", 1, 4, 3, pixels);
    auto lp = write_idx_labels("lab_m", labels, 0x00000803);
    CHECK_THROWS_WITH_AS(load_idx(ip, lp), doctest::Contains("bad magic"), std::runtime_error);
  }
  SUBCASE("count mismatch") {
    auto ip = write_idx_images("img_c", 1, 4, 3, pixels);
    auto lp = write_idx_labels("lab_c", labels);
    CHECK_THROWS_WITH_AS(load_idx(ip, lp), doctest::Contains("count mismatch"),
                         std::runtime_error);
  }
  SUBCASE("truncated image payload") {
    std::vector<std::uint8_t> short_pixels(5, 0);
    auto ip = write_idx_images("img_t", 2, 4, 3, short_pixels);
    auto lp = write_idx_labels("lab_t", labels);
    CHECK_THROWS_WITH_AS(load_idx(ip, lp), doctest::Contains("truncated"), std::runtime_error);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_WITH_AS(load_idx("/nonexistent/img", "/nonexistent/lab"),
                         doctest::Contains("cannot open"), std::runtime_error);
  }
}

TEST_CASE("idx transpose option flips stored images") {
  // 2x3 image stored row-major [1 2 3; 4 5 6]
  std::vector<std::uint8_t> pixels{1, 2, 3, 4, 5, 6};
  auto ip = write_idx_images("img_tr", 1, 2, 3, pixels);
  auto lp = write_idx_labels("lab_tr", {1});
  IdxOptions opt;
  opt.transpose_hw = true;
  opt.label_offset = -1;
  ImageSet set = load_idx(ip, lp, opt);
  CHECK(set.height == 3);
  CHECK(set.width == 2);
  CHECK(set.pixels == std::vector<std::uint8_t>{1, 4, 2, 5, 3, 6});
  CHECK(set.labels[0] == 0);
}

TEST_CASE("cifar100 binary record parsing") {
  SUBCASE("record count comes from the file size") {
    auto p = write_cifar("cifar_ok.bin", 7);
    ImageSet set = load_cifar100_binary(p);
    CHECK(set.count() == 7);
    CHECK(set.height == 32);
    CHECK(set.channels == 3);
    CHECK(set.labels[3] == 3);  // fine label byte
  }
  SUBCASE("empty file is valid with zero records") {
    auto p = write_cifar("cifar_empty.bin", 0);
    ImageSet set = load_cifar100_binary(p);
    CHECK(set.count() == 0);
    CHECK(set.class_count == 0);
  }
  SUBCASE("misaligned file size is an error") {
    auto p = write_cifar("cifar_bad.bin", 2);
    std::ofstream f(p, std::ios::binary | std::ios::app);
    f.put(0);
    f.close();
    CHECK_THROWS_WITH_AS(load_cifar100_binary(p), doctest::Contains("record"),
                         std::runtime_error);
  }
}

TEST_CASE("padding centers the image in a zero border") {
  ImageSet set;
  set.name = "pad";
  set.height = set.width = 28;
  set.channels = 1;
  set.class_count = 1;
  set.labels = {0};
  set.pixels.assign(28 * 28, 200);
  PreprocessPolicy policy;
  policy.pad_to = 32;
  policy.normalize = false;
  ProcessedSet out = preprocess(set, policy);
  CHECK(out.side == 32);
  // 2-pixel zero border
  for (int r = 0; r < 32; ++r)
    for (int c = 0; c < 32; ++c) {
      float v = out.pix01[r * 32 + c];
      if (r < 2 || r >= 30 || c < 2 || c >= 30)
        CHECK(v == 0.0f);
      else
        CHECK(v == doctest::Approx(200.0f / 255.0f));
    }
}

TEST_CASE("all-zero image normalizes to the constant -mean/std") {
  ImageSet set;
  set.height = set.width = 4;
  set.channels = 1;
  set.class_count = 2;
  set.labels = {0, 1};
  set.pixels.assign(2 * 16, 0);
  set.pixels[16 + 3] = 255;  // second image gives nonzero stats
  PreprocessPolicy policy;
  ProcessedSet out = preprocess(set, policy);
  Tensor x = out.normalized();
  const float expect = (0.0f - out.stats.mean) / out.stats.stddev;
  for (int j = 0; j < 16; ++j) CHECK(x[j] == doctest::Approx(expect));
}

TEST_CASE("normalization statistics hit zero mean unit variance") {
  auto g = rng::make_stream(3, rng::Stream::misc);
  ImageSet set;
  set.height = set.width = 8;
  set.channels = 1;
  set.class_count = 2;
  for (int i = 0; i < 50; ++i) {
    set.labels.push_back(i % 2);
    for (int j = 0; j < 64; ++j)
      set.pixels.push_back(static_cast<std::uint8_t>(rng::next_below(g, 256)));
  }
  ProcessedSet out = preprocess(set, PreprocessPolicy{});
  Tensor x = out.normalized();
  PixelStats post = compute_pixel_stats(x);
  CHECK(post.mean >= -0.05f);
  CHECK(post.mean <= 0.05f);
  CHECK(post.stddev >= 0.95f);
  CHECK(post.stddev <= 1.05f);
}

TEST_CASE("preprocessing is deterministic (bitwise)") {
  auto g = rng::make_stream(11, rng::Stream::misc);
  ImageSet set;
  set.height = set.width = 28;
  set.channels = 1;
  set.class_count = 2;
  for (int i = 0; i < 6; ++i) {
    set.labels.push_back(i % 2);
    for (int j = 0; j < 784; ++j)
      set.pixels.push_back(static_cast<std::uint8_t>(rng::next_below(g, 256)));
  }
  PreprocessPolicy policy;
  policy.pad_to = 32;
  ProcessedSet a = preprocess(set, policy);
  ProcessedSet b = preprocess(set, policy);
  CHECK(a.pix01.data == b.pix01.data);
  CHECK(a.stats.mean == b.stats.mean);
  CHECK(a.stats.stddev == b.stats.stddev);
}

TEST_CASE("grayscale uses luminosity weights and resize keeps constants") {
  ImageSet set;
  set.height = set.width = 32;
  set.channels = 3;
  set.class_count = 1;
  set.labels = {0};
  set.pixels.resize(32 * 32 * 3);
  for (int p = 0; p < 32 * 32; ++p) {
    set.pixels[static_cast<std::size_t>(p) * 3 + 0] = 255;  // pure red
    set.pixels[static_cast<std::size_t>(p) * 3 + 1] = 0;
    set.pixels[static_cast<std::size_t>(p) * 3 + 2] = 0;
  }
  PreprocessPolicy policy;
  policy.grayscale = true;
  policy.resize_to = 28;
  policy.normalize = false;
  ProcessedSet out = preprocess(set, policy);
  CHECK(out.side == 28);
  for (int j = 0; j < out.dim; ++j)
    CHECK(out.pix01[j] == doctest::Approx(0.299f * 255.0f / 255.0f).epsilon(1e-5));
}

TEST_CASE("policy validation") {
  ImageSet rgb;
  rgb.height = rgb.width = 32;
  rgb.channels = 3;
  rgb.class_count = 1;
  rgb.labels = {0};
  rgb.pixels.assign(32 * 32 * 3, 0);
  PreprocessPolicy both;
  both.pad_to = 32;
  both.resize_to = 28;
  CHECK_THROWS(preprocess(rgb, both));
  PreprocessPolicy color_passthrough;  // 3-channel input needs grayscale
  CHECK_THROWS(preprocess(rgb, color_passthrough));
}
