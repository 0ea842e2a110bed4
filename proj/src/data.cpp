#include "clbench/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace clbench {

namespace {

std::uint32_t read_u32_be(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("idx: truncated header in " + path);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
         std::uint32_t(b[3]);
}

std::ifstream open_binary(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  return f;
}

int max_label(const std::vector<int>& labels) {
  int m = -1;
  for (int v : labels) m = std::max(m, v);
  return m;
}

}  // namespace

ImageSet load_idx(const std::string& images_path, const std::string& labels_path,
                  const IdxOptions& options) {
  constexpr std::uint32_t kImagesMagic = 0x00000803;
  constexpr std::uint32_t kLabelsMagic = 0x00000801;

  auto imgf = open_binary(images_path);
  std::uint32_t magic = read_u32_be(imgf, images_path);
  if (magic != kImagesMagic)
    throw std::runtime_error("idx: bad magic in " + images_path + " (expected 0x803 u8 images)");
  const std::uint32_t n = read_u32_be(imgf, images_path);
  const std::uint32_t h = read_u32_be(imgf, images_path);
  const std::uint32_t w = read_u32_be(imgf, images_path);

  ImageSet set;
  set.height = static_cast<int>(h);
  set.width = static_cast<int>(w);
  set.channels = 1;
  set.pixels.resize(static_cast<std::size_t>(n) * h * w);
  imgf.read(reinterpret_cast<char*>(set.pixels.data()),
            static_cast<std::streamsize>(set.pixels.size()));
  if (imgf.gcount() != static_cast<std::streamsize>(set.pixels.size()))
    throw std::runtime_error("idx: truncated image data in " + images_path);

  auto labf = open_binary(labels_path);
  magic = read_u32_be(labf, labels_path);
  if (magic != kLabelsMagic)
    throw std::runtime_error("idx: bad magic in " + labels_path + " (expected 0x801 u8 labels)");
  const std::uint32_t ln = read_u32_be(labf, labels_path);
  if (ln != n)
    throw std::runtime_error("idx: count mismatch: " + std::to_string(n) + " images vs " +
                             std::to_string(ln) + " labels");
  std::vector<std::uint8_t> raw(ln);
  labf.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (labf.gcount() != static_cast<std::streamsize>(raw.size()))
    throw std::runtime_error("idx: truncated label data in " + labels_path);

  set.labels.resize(ln);
  for (std::size_t i = 0; i < raw.size(); ++i) set.labels[i] = int(raw[i]) + options.label_offset;

  if (options.transpose_hw) {
    std::vector<std::uint8_t> t(set.pixels.size());
    const int hh = set.height, ww = set.width;
    for (std::uint32_t i = 0; i < n; ++i) {
      const std::uint8_t* src = set.pixels.data() + static_cast<std::size_t>(i) * hh * ww;
      std::uint8_t* dst = t.data() + static_cast<std::size_t>(i) * hh * ww;
      for (int r = 0; r < hh; ++r)
        for (int c = 0; c < ww; ++c) dst[c * hh + r] = src[r * ww + c];
    }
    set.pixels = std::move(t);
    std::swap(set.height, set.width);
  }

  set.class_count = max_label(set.labels) + 1;
  return set;
}

ImageSet load_cifar100_binary(const std::string& path) {
  constexpr std::int64_t kRecord = 2 + 3 * 32 * 32;
  auto f = open_binary(path);
  f.seekg(0, std::ios::end);
  const std::int64_t size = f.tellg();
  f.seekg(0);
  if (size % kRecord != 0)
    throw std::runtime_error("cifar100: file size " + std::to_string(size) +
                             " is not a multiple of the " + std::to_string(kRecord) +
                             "-byte record in " + path);
  const std::int64_t n = size / kRecord;

  ImageSet set;
  set.height = 32;
  set.width = 32;
  set.channels = 3;
  set.labels.resize(static_cast<std::size_t>(n));
  set.pixels.resize(static_cast<std::size_t>(n) * 32 * 32 * 3);

  std::vector<std::uint8_t> rec(kRecord);
  for (std::int64_t i = 0; i < n; ++i) {
    f.read(reinterpret_cast<char*>(rec.data()), kRecord);
    if (!f) throw std::runtime_error("cifar100: truncated record in " + path);
    set.labels[static_cast<std::size_t>(i)] = rec[1];  // fine label
    // channel planes -> interleaved HWC
    std::uint8_t* dst = set.pixels.data() + static_cast<std::size_t>(i) * 32 * 32 * 3;
    for (int p = 0; p < 32 * 32; ++p) {
      dst[p * 3 + 0] = rec[2 + p];
      dst[p * 3 + 1] = rec[2 + 1024 + p];
      dst[p * 3 + 2] = rec[2 + 2048 + p];
    }
  }
  set.class_count = n == 0 ? 0 : max_label(set.labels) + 1;
  return set;
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

PixelStats compute_pixel_stats(const Tensor& pix01) {
  double sum = 0, sumsq = 0;
  for (float v : pix01.data) {
    sum += v;
    sumsq += double(v) * v;
  }
  const double n = static_cast<double>(pix01.numel());
  const double mean = sum / n;
  const double var = std::max(0.0, sumsq / n - mean * mean);
  PixelStats s;
  s.mean = static_cast<float>(mean);
  s.stddev = static_cast<float>(std::sqrt(var));
  if (s.stddev <= 0) s.stddev = 1.0f;
  return s;
}

namespace {

// One image -> single-channel float plane in 0..255 space.
void to_gray(const std::uint8_t* src, int h, int w, int c, std::vector<float>& out) {
  out.resize(static_cast<std::size_t>(h) * w);
  if (c == 1) {
    for (int i = 0; i < h * w; ++i) out[static_cast<std::size_t>(i)] = src[i];
  } else {
    for (int i = 0; i < h * w; ++i)
      out[static_cast<std::size_t>(i)] =
          0.299f * src[i * c] + 0.587f * src[i * c + 1] + 0.114f * src[i * c + 2];
  }
}

void bilinear_resize(const std::vector<float>& src, int sh, int sw, int th, int tw,
                     std::vector<float>& dst) {
  dst.resize(static_cast<std::size_t>(th) * tw);
  const float ry = static_cast<float>(sh) / th;
  const float rx = static_cast<float>(sw) / tw;
  for (int y = 0; y < th; ++y) {
    float fy = (y + 0.5f) * ry - 0.5f;
    int y0 = static_cast<int>(std::floor(fy));
    float wy = fy - y0;
    int y1 = std::min(y0 + 1, sh - 1);
    y0 = std::max(y0, 0);
    for (int x = 0; x < tw; ++x) {
      float fx = (x + 0.5f) * rx - 0.5f;
      int x0 = static_cast<int>(std::floor(fx));
      float wx = fx - x0;
      int x1 = std::min(x0 + 1, sw - 1);
      x0 = std::max(x0, 0);
      float top = src[static_cast<std::size_t>(y0) * sw + x0] * (1 - wx) +
                  src[static_cast<std::size_t>(y0) * sw + x1] * wx;
      float bot = src[static_cast<std::size_t>(y1) * sw + x0] * (1 - wx) +
                  src[static_cast<std::size_t>(y1) * sw + x1] * wx;
      dst[static_cast<std::size_t>(y) * tw + x] = top * (1 - wy) + bot * wy;
    }
  }
}

}  // namespace

ProcessedSet preprocess(const ImageSet& set, const PreprocessPolicy& policy,
                        const PixelStats* train_stats) {
  if (policy.pad_to && policy.resize_to)
    throw std::invalid_argument("preprocess: pad_to and resize_to are mutually exclusive");
  if (policy.pad_to && *policy.pad_to < std::max(set.height, set.width))
    throw std::invalid_argument("preprocess: pad_to smaller than image");
  if (set.channels == 3 && !policy.grayscale)
    throw std::invalid_argument("preprocess: color input requires grayscale=true");

  const int n = static_cast<int>(set.count());
  int side = set.height;
  if (policy.pad_to) side = *policy.pad_to;
  if (policy.resize_to) side = *policy.resize_to;
  if (!policy.pad_to && !policy.resize_to && set.height != set.width)
    throw std::invalid_argument("preprocess: non-square image without a target size");

  ProcessedSet out;
  out.name = set.name;
  out.side = side;
  out.dim = side * side;
  out.labels = set.labels;
  out.class_count = set.class_count;
  // empty sets keep a 1-row placeholder; count()==0 governs use
  out.pix01 = Tensor({std::max(n, 1), out.dim});

  std::vector<float> gray, resized;
  for (int i = 0; i < n; ++i) {
    const std::uint8_t* src = set.pixels.data() + static_cast<std::size_t>(i) *
                                                      set.pixels_per_image();
    to_gray(src, set.height, set.width, set.channels, gray);
    float* dst = out.pix01.ptr() + static_cast<std::int64_t>(i) * out.dim;
    if (policy.pad_to) {
      const int off_y = (side - set.height) / 2;
      const int off_x = (side - set.width) / 2;
      std::fill(dst, dst + out.dim, 0.0f);
      for (int r = 0; r < set.height; ++r)
        for (int c = 0; c < set.width; ++c)
          dst[(r + off_y) * side + (c + off_x)] = gray[static_cast<std::size_t>(r) * set.width + c] / 255.0f;
    } else if (policy.resize_to) {
      bilinear_resize(gray, set.height, set.width, side, side, resized);
      for (int j = 0; j < out.dim; ++j)
        dst[j] = std::clamp(resized[static_cast<std::size_t>(j)], 0.0f, 255.0f) / 255.0f;
    } else {
      for (int j = 0; j < out.dim; ++j) dst[j] = gray[static_cast<std::size_t>(j)] / 255.0f;
    }
  }

  if (policy.normalize) {
    out.stats = train_stats ? *train_stats : compute_pixel_stats(out.pix01);
  } else {
    out.stats = PixelStats{};  // identity
  }
  return out;
}

// ---------------------------------------------------------------------------
// Named datasets
// ---------------------------------------------------------------------------

namespace {

namespace fs = std::filesystem;

struct DatasetFiles {
  std::string train_images, train_labels, test_images, test_labels;  // idx
  std::string train_bin, test_bin;                                   // cifar
  IdxOptions idx;
};

DatasetFiles files_for(const std::string& name, const std::string& dir) {
  DatasetFiles f;
  if (name == "mnist" || name == "fashion") {
    fs::path base = fs::path(dir) / name;
    f.train_images = (base / "train-images-idx3-ubyte").string();
    f.train_labels = (base / "train-labels-idx1-ubyte").string();
    f.test_images = (base / "t10k-images-idx3-ubyte").string();
    f.test_labels = (base / "t10k-labels-idx1-ubyte").string();
  } else if (name == "emnist_letters") {
    fs::path base = fs::path(dir) / "emnist-letters";
    f.train_images = (base / "emnist-letters-train-images-idx3-ubyte").string();
    f.train_labels = (base / "emnist-letters-train-labels-idx1-ubyte").string();
    f.test_images = (base / "emnist-letters-test-images-idx3-ubyte").string();
    f.test_labels = (base / "emnist-letters-test-labels-idx1-ubyte").string();
    f.idx.transpose_hw = true;  // official files store transposed images
    f.idx.label_offset = -1;    // official labels are 1..26
  } else if (name == "cifar100") {
    fs::path base = fs::path(dir) / "cifar100";
    f.train_bin = (base / "train.bin").string();
    f.test_bin = (base / "test.bin").string();
  } else {
    throw std::invalid_argument("unknown dataset '" + name +
                                "' (expected mnist, fashion, emnist_letters, or cifar100)");
  }
  return f;
}

}  // namespace

bool dataset_available(const std::string& name, const std::string& data_dir) {
  DatasetFiles f = files_for(name, data_dir);
  if (!f.train_bin.empty()) return fs::exists(f.train_bin) && fs::exists(f.test_bin);
  return fs::exists(f.train_images) && fs::exists(f.train_labels) && fs::exists(f.test_images) &&
         fs::exists(f.test_labels);
}

LoadedDataset load_dataset(const std::string& name, const std::string& data_dir) {
  DatasetFiles f = files_for(name, data_dir);
  LoadedDataset d;
  if (!f.train_bin.empty()) {
    d.train = load_cifar100_binary(f.train_bin);
    d.test = load_cifar100_binary(f.test_bin);
  } else {
    d.train = load_idx(f.train_images, f.train_labels, f.idx);
    d.test = load_idx(f.test_images, f.test_labels, f.idx);
  }
  d.train.name = name;
  d.test.name = name;
  // test labels may not cover every class; use the wider count
  d.train.class_count = d.test.class_count = std::max(d.train.class_count, d.test.class_count);
  return d;
}

PreprocessPolicy policy_for(PolicyKind kind, const ImageSet& set) {
  PreprocessPolicy p;
  if (kind == PolicyKind::pad32) {
    p.pad_to = 32;
  } else {
    p.grayscale = set.channels == 3;
    if (set.height != 28 || set.width != 28) p.resize_to = 28;
  }
  p.normalize = true;
  return p;
}

}  // namespace clbench
