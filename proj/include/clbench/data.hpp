#pragma once

// Dataset ingestion (IDX and CIFAR-100 binary) and deterministic
// preprocessing into model-ready tensors.

#include "clbench/tensor.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace clbench {

struct ImageSet {
  std::string name;
  int height = 0;
  int width = 0;
  int channels = 1;
  int class_count = 0;
  std::vector<std::uint8_t> pixels;  // N x H x W x C, row-major
  std::vector<int> labels;

  std::int64_t count() const { return static_cast<std::int64_t>(labels.size()); }
  std::int64_t pixels_per_image() const {
    return static_cast<std::int64_t>(height) * width * channels;
  }
};

struct IdxOptions {
  // EMNIST ships images transposed relative to MNIST; set to flip H/W on load.
  bool transpose_hw = false;
  // Added to every label on load (EMNIST letters are 1-based in the files).
  int label_offset = 0;
};

ImageSet load_idx(const std::string& images_path, const std::string& labels_path,
                  const IdxOptions& options = {});

// CIFAR-100 binary records: coarse label byte, fine label byte, 3072 pixel
// bytes (three 32x32 channel planes). Fine labels are kept.
ImageSet load_cifar100_binary(const std::string& path);

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

struct PreprocessPolicy {
  std::optional<int> pad_to;     // zero padding, centered
  std::optional<int> resize_to;  // bilinear
  bool grayscale = false;        // luminosity weights 0.299 / 0.587 / 0.114
  bool normalize = true;         // (x - mean) / std after scaling to [0, 1]
};

struct PixelStats {
  float mean = 0.0f;
  float stddev = 1.0f;
};

// Output of preprocessing: post-geometry pixels in [0, 1] plus the
// normalization statistics. Normalized model inputs are produced on demand
// so that rehearsal can store the pre-normalization pixels.
struct ProcessedSet {
  std::string name;
  int side = 0;  // output images are side x side, single channel
  int dim = 0;   // side * side
  Tensor pix01;  // [N, dim], values in [0, 1]
  std::vector<int> labels;
  int class_count = 0;
  PixelStats stats;  // statistics applied by normalize_row

  std::int64_t count() const { return static_cast<std::int64_t>(labels.size()); }

  // Writes the normalized row `i` into dst (dim floats).
  void normalize_row(std::int64_t i, float* dst) const {
    const float* src = pix01.ptr() + i * dim;
    const float inv = 1.0f / stats.stddev;
    for (int j = 0; j < dim; ++j) dst[j] = (src[j] - stats.mean) * inv;
  }

  // Full normalized tensor (used for evaluation sets).
  Tensor normalized() const {
    Tensor out({static_cast<int>(count()), dim});
    for (std::int64_t i = 0; i < count(); ++i) normalize_row(i, out.ptr() + i * dim);
    return out;
  }
};

// Deterministic preprocessing. When `train_stats` is null the normalization
// statistics are computed from this set (training split); pass the training
// statistics when processing a test split.
ProcessedSet preprocess(const ImageSet& set, const PreprocessPolicy& policy,
                        const PixelStats* train_stats = nullptr);

// Mean/std over every pixel of the [0,1]-scaled set.
PixelStats compute_pixel_stats(const Tensor& pix01);

// ---------------------------------------------------------------------------
// Named datasets
// ---------------------------------------------------------------------------

// Known datasets: "mnist", "fashion", "emnist_letters", "cifar100".
// Directory layout under `data_dir` is documented in the README; the loader
// applies the per-dataset quirks (EMNIST transpose and 1-based labels).
struct LoadedDataset {
  ImageSet train;
  ImageSet test;
};

bool dataset_available(const std::string& name, const std::string& data_dir);
LoadedDataset load_dataset(const std::string& name, const std::string& data_dir);

// The policy the benchmark scenarios use for a dataset:
//   pad32   — zero-pad 28x28 to 32x32, normalize (split / permuted runs)
//   gray28  — grayscale + bilinear resize to 28x28, normalize (task queues)
enum class PolicyKind { pad32, gray28 };
PreprocessPolicy policy_for(PolicyKind kind, const ImageSet& set);

}  // namespace clbench
