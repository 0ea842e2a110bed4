#pragma once

// Feed-forward network engine: dense / conv2d / maxpool2x2 / relu layers,
// task-masked softmax cross-entropy, exact reverse-mode gradients, and a
// central-difference gradient checker.
//
// Conventions:
//   * batches are row-major [N, features] or [N, C, H, W]
//   * dense weights are [out, in]; conv weights are [out_c, in_c*k*k]
//   * the output layer is a set of dense "heads" over the trunk output;
//     logits are the concatenation of all heads

#include "clbench/rng.hpp"
#include "clbench/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace clbench {

// ---------------------------------------------------------------------------
// Layer specifications
// ---------------------------------------------------------------------------

enum class LayerKind { dense, conv2d, maxpool2x2, relu };

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  // dense
  int in_features = 0;
  int out_features = 0;
  // conv2d
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 5;
  int padding = 0;
  int stride = 1;
  // spatial extent of the input, filled in at build time for conv/pool
  int in_h = 0;
  int in_w = 0;

  int out_h() const { return (in_h + 2 * padding - kernel) / stride + 1; }
  int out_w() const { return (in_w + 2 * padding - kernel) / stride + 1; }
};

template <typename T>
struct LayerVars {
  TensorT<T> W;
  TensorT<T> b;
  bool has_params() const { return W.numel() > 0; }
};

// ---------------------------------------------------------------------------
// Output heads
// ---------------------------------------------------------------------------

enum class HeadLayoutKind { multi_head, single_head_fixed, single_head_growing, single_head_preallocated };
enum class HeadInit { random, zeros };

struct HeadLayout {
  HeadLayoutKind kind = HeadLayoutKind::single_head_fixed;
  std::vector<int> sizes;  // per head; single-head layouts have exactly one entry

  int total() const {
    int s = 0;
    for (int v : sizes) s += v;
    return s;
  }
};

// Contiguous slice of active logits: [offset, offset+length) out of `total`.
struct OutputMask {
  int offset = 0;
  int length = 0;
  int total = 0;

  bool active(int i) const { return i >= offset && i < offset + length; }
  std::vector<char> as_bools() const {
    std::vector<char> m(static_cast<std::size_t>(total), 0);
    for (int i = offset; i < offset + length; ++i) m[static_cast<std::size_t>(i)] = 1;
    return m;
  }
  static OutputMask full(int total) { return {0, total, total}; }
};

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

template <typename T>
struct LayerCache {
  TensorT<T> input;            // dense: input rows; conv/pool: input shape holder
  std::vector<TensorT<T>> im2col;  // conv: one column matrix per sample
  std::vector<std::int32_t> argmax;  // maxpool: flat input index per output cell
  TensorT<T> output;           // relu: output (mask source)
};

template <typename T>
struct NetCache {
  std::vector<LayerCache<T>> layers;
  TensorT<T> trunk_out;  // input to the heads
  int batch = 0;
};

template <typename T>
struct GradientsT {
  std::vector<LayerVars<T>> trunk;  // aligned with NetworkT::vars
  std::vector<LayerVars<T>> heads;

  TensorT<T>* by_name(const std::string& name);
};

template <typename T>
struct NetworkT {
  int input_dim = 0;
  std::vector<LayerSpec> specs;
  std::vector<LayerVars<T>> vars;  // aligned with specs; empty vars for relu/pool
  int trunk_output_dim = 0;
  HeadLayout head_layout;
  std::vector<LayerVars<T>> heads;

  int output_dim() const { return head_layout.total(); }

  // Visits every parameter as (stable name, tensor). Trunk first, in layer
  // order, W before b; then heads in layout order. Names: "trunk.<i>.W",
  // "trunk.<i>.b", and "head.<t>.W"/"head.<t>.b" (multi-head, t 1-based) or
  // "head.W"/"head.b" (single head).
  template <typename F>
  void for_each_param(F&& f) {
    for (std::size_t i = 0; i < vars.size(); ++i) {
      if (!vars[i].has_params()) continue;
      std::string base = "trunk." + std::to_string(i) + ".";
      f(base + "W", vars[i].W);
      f(base + "b", vars[i].b);
    }
    for (std::size_t h = 0; h < heads.size(); ++h) {
      std::string base = head_layout.kind == HeadLayoutKind::multi_head
                             ? "head." + std::to_string(h + 1) + "."
                             : "head.";
      f(base + "W", heads[h].W);
      f(base + "b", heads[h].b);
    }
  }
  template <typename F>
  void for_each_param(F&& f) const {
    const_cast<NetworkT*>(this)->for_each_param(
        [&](const std::string& n, TensorT<T>& t) { f(n, static_cast<const TensorT<T>&>(t)); });
  }

  std::int64_t param_count() const {
    std::int64_t n = 0;
    for_each_param([&](const std::string&, const TensorT<T>& t) { n += t.numel(); });
    return n;
  }

  // Sum of trunk weight-matrix sizes (biases and heads excluded); the basis
  // of the consolidation memory-overhead accounting.
  std::int64_t trunk_weight_count() const {
    std::int64_t n = 0;
    for (const auto& v : vars) n += v.W.numel();
    return n;
  }

  GradientsT<T> zero_gradients() const {
    GradientsT<T> g;
    g.trunk.resize(vars.size());
    for (std::size_t i = 0; i < vars.size(); ++i) {
      if (!vars[i].has_params()) continue;
      g.trunk[i].W = TensorT<T>::zeros(vars[i].W.shape);
      g.trunk[i].b = TensorT<T>::zeros(vars[i].b.shape);
    }
    g.heads.resize(heads.size());
    for (std::size_t h = 0; h < heads.size(); ++h) {
      g.heads[h].W = TensorT<T>::zeros(heads[h].W.shape);
      g.heads[h].b = TensorT<T>::zeros(heads[h].b.shape);
    }
    return g;
  }

  TensorT<T> forward(const TensorT<T>& x, NetCache<T>* cache = nullptr) const;
  GradientsT<T> backward(const NetCache<T>& cache, const TensorT<T>& dlogits) const;

  // Appends `extra` output units to a single head, preserving existing rows.
  void grow_single_head(int extra, HeadInit init, rng::Generator& g);

  TensorT<T>* param_by_name(const std::string& name) {
    TensorT<T>* found = nullptr;
    for_each_param([&](const std::string& n, TensorT<T>& t) {
      if (n == name) found = &t;
    });
    return found;
  }
};

using Network = NetworkT<float>;
using Gradients = GradientsT<float>;

template <typename T>
TensorT<T>* GradientsT<T>::by_name(const std::string& name) {
  auto parse = [&](const std::string& prefix, std::vector<LayerVars<T>>& vec) -> TensorT<T>* {
    if (name.rfind(prefix, 0) != 0) return nullptr;
    std::string rest = name.substr(prefix.size());
    auto dot = rest.find('.');
    if (dot == std::string::npos) return nullptr;
    std::size_t idx = static_cast<std::size_t>(std::stoi(rest.substr(0, dot)));
    if (idx >= vec.size()) return nullptr;
    return rest.substr(dot + 1) == "W" ? &vec[idx].W : &vec[idx].b;
  };
  if (auto* t = parse("trunk.", trunk)) return t;
  if (name.rfind("head.", 0) == 0) {
    std::string rest = name.substr(5);
    if (rest == "W") return heads.empty() ? nullptr : &heads[0].W;
    if (rest == "b") return heads.empty() ? nullptr : &heads[0].b;
    auto dot = rest.find('.');
    if (dot != std::string::npos) {
      std::size_t t = static_cast<std::size_t>(std::stoi(rest.substr(0, dot)));
      if (t >= 1 && t <= heads.size())
        return rest.substr(dot + 1) == "W" ? &heads[t - 1].W : &heads[t - 1].b;
    }
  }
  return nullptr;
}

// ---------------------------------------------------------------------------
// Layer forward / backward
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void dense_forward(const LayerSpec& s, const LayerVars<T>& v, const TensorT<T>& x, TensorT<T>& y) {
  const int n = x.dim(0);
  std::int64_t per_sample = x.numel() / n;
  if (per_sample != s.in_features)
    throw std::invalid_argument("dense: input " + x.shape_str() + " does not provide " +
                                std::to_string(s.in_features) + " features");
  y = TensorT<T>({n, s.out_features});
  gemm<T>(false, true, n, s.out_features, s.in_features, T(1), x.ptr(), s.in_features, v.W.ptr(),
          s.in_features, T(0), y.ptr(), s.out_features);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < s.out_features; ++c) y.at(r, c) += v.b[c];
}

template <typename T>
void dense_backward(const LayerSpec& s, const LayerVars<T>& v, const TensorT<T>& x,
                    const TensorT<T>& dy, LayerVars<T>& grad, TensorT<T>& dx) {
  const int n = dy.dim(0);
  // dW += dY^T X ; db += column sums of dY ; dX = dY W
  gemm<T>(true, false, s.out_features, s.in_features, n, T(1), dy.ptr(), s.out_features, x.ptr(),
          s.in_features, T(1), grad.W.ptr(), s.in_features);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < s.out_features; ++c) grad.b[c] += dy.at(r, c);
  dx = TensorT<T>({n, s.in_features});
  gemm<T>(false, false, n, s.in_features, s.out_features, T(1), dy.ptr(), s.out_features,
          v.W.ptr(), s.in_features, T(0), dx.ptr(), s.in_features);
}

// im2col for one sample: out[ck, p] where ck indexes (channel, ki, kj) and p
// indexes output positions row-major.
template <typename T>
void im2col(const T* img, int c_in, int h, int w, int k, int pad, int stride, int oh, int ow,
            TensorT<T>& cols) {
  cols = TensorT<T>({c_in * k * k, oh * ow});
  T* out = cols.ptr();
  for (int c = 0; c < c_in; ++c) {
    const T* plane = img + static_cast<std::int64_t>(c) * h * w;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy * stride + ki - pad;
          for (int ox = 0; ox < ow; ++ox) {
            int ix = ox * stride + kj - pad;
            T val = (iy >= 0 && iy < h && ix >= 0 && ix < w) ? plane[iy * w + ix] : T(0);
            *out++ = val;
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const TensorT<T>& cols, int c_in, int h, int w, int k, int pad, int stride, int oh,
                int ow, T* img) {
  const T* in = cols.ptr();
  for (int c = 0; c < c_in; ++c) {
    T* plane = img + static_cast<std::int64_t>(c) * h * w;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy * stride + ki - pad;
          for (int ox = 0; ox < ow; ++ox) {
            int ix = ox * stride + kj - pad;
            if (iy >= 0 && iy < h && ix >= 0 && ix < w) plane[iy * w + ix] += *in;
            ++in;
          }
        }
      }
    }
  }
}

template <typename T>
void conv_forward(const LayerSpec& s, const LayerVars<T>& v, const TensorT<T>& x, TensorT<T>& y,
                  LayerCache<T>* cache) {
  const int n = x.dim(0);
  const std::int64_t plane = static_cast<std::int64_t>(s.in_channels) * s.in_h * s.in_w;
  if (x.numel() / n != plane)
    throw std::invalid_argument("conv2d: input " + x.shape_str() + " does not match " +
                                std::to_string(s.in_channels) + "x" + std::to_string(s.in_h) +
                                "x" + std::to_string(s.in_w));
  const int oh = s.out_h(), ow = s.out_w();
  y = TensorT<T>({n, s.out_channels, oh, ow});
  if (cache) cache->im2col.resize(static_cast<std::size_t>(n));
  TensorT<T> cols;
  for (int i = 0; i < n; ++i) {
    TensorT<T>& c = cache ? cache->im2col[static_cast<std::size_t>(i)] : cols;
    im2col(x.ptr() + i * plane, s.in_channels, s.in_h, s.in_w, s.kernel, s.padding, s.stride, oh,
           ow, c);
    T* yp = y.ptr() + static_cast<std::int64_t>(i) * s.out_channels * oh * ow;
    gemm<T>(false, false, s.out_channels, oh * ow, s.in_channels * s.kernel * s.kernel, T(1),
            v.W.ptr(), s.in_channels * s.kernel * s.kernel, c.ptr(), oh * ow, T(0), yp, oh * ow);
    for (int oc = 0; oc < s.out_channels; ++oc) {
      T bias = v.b[oc];
      T* row = yp + static_cast<std::int64_t>(oc) * oh * ow;
      for (int p = 0; p < oh * ow; ++p) row[p] += bias;
    }
  }
}

template <typename T>
void conv_backward(const LayerSpec& s, const LayerVars<T>& v, const LayerCache<T>& cache,
                   const TensorT<T>& dy, LayerVars<T>& grad, TensorT<T>& dx) {
  const int n = dy.dim(0);
  const int oh = s.out_h(), ow = s.out_w();
  const int ck = s.in_channels * s.kernel * s.kernel;
  const std::int64_t plane = static_cast<std::int64_t>(s.in_channels) * s.in_h * s.in_w;
  dx = TensorT<T>({n, s.in_channels, s.in_h, s.in_w});
  std::fill(dx.data.begin(), dx.data.end(), T(0));
  TensorT<T> dcols({ck, oh * ow});
  for (int i = 0; i < n; ++i) {
    const TensorT<T>& cols = cache.im2col[static_cast<std::size_t>(i)];
    const T* dyp = dy.ptr() + static_cast<std::int64_t>(i) * s.out_channels * oh * ow;
    // dW += dY_s cols^T
    gemm<T>(false, true, s.out_channels, ck, oh * ow, T(1), dyp, oh * ow, cols.ptr(), oh * ow,
            T(1), grad.W.ptr(), ck);
    for (int oc = 0; oc < s.out_channels; ++oc) {
      const T* row = dyp + static_cast<std::int64_t>(oc) * oh * ow;
      T sum = 0;
      for (int p = 0; p < oh * ow; ++p) sum += row[p];
      grad.b[oc] += sum;
    }
    // dcols = W^T dY_s, scattered back to the input image
    gemm<T>(true, false, ck, oh * ow, s.out_channels, T(1), v.W.ptr(), ck, dyp, oh * ow, T(0),
            dcols.ptr(), oh * ow);
    col2im_add(dcols, s.in_channels, s.in_h, s.in_w, s.kernel, s.padding, s.stride, oh, ow,
               dx.ptr() + i * plane);
  }
}

template <typename T>
void maxpool_forward(const LayerSpec& s, const TensorT<T>& x, TensorT<T>& y,
                     LayerCache<T>* cache) {
  const int n = x.dim(0);
  const int c = s.in_channels, h = s.in_h, w = s.in_w;
  if (x.numel() / n != static_cast<std::int64_t>(c) * h * w)
    throw std::invalid_argument("maxpool2x2: input " + x.shape_str() + " does not match " +
                                std::to_string(c) + "x" + std::to_string(h) + "x" +
                                std::to_string(w));
  const int oh = h / 2, ow = w / 2;
  y = TensorT<T>({n, c, oh, ow});
  if (cache) cache->argmax.assign(static_cast<std::size_t>(y.numel()), 0);
  std::int64_t out_i = 0;
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const T* plane = x.ptr() + (static_cast<std::int64_t>(i) * c + ch) * h * w;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          // ties keep the first maximal element in scan order
          int base = (oy * 2) * w + ox * 2;
          int best = base;
          T bv = plane[base];
          const int cand[3] = {base + 1, base + w, base + w + 1};
          for (int k = 0; k < 3; ++k)
            if (plane[cand[k]] > bv) {
              bv = plane[cand[k]];
              best = cand[k];
            }
          y[out_i] = bv;
          if (cache) cache->argmax[static_cast<std::size_t>(out_i)] = best;
          ++out_i;
        }
      }
    }
  }
}

template <typename T>
void maxpool_backward(const LayerSpec& s, const LayerCache<T>& cache, const TensorT<T>& dy,
                      TensorT<T>& dx) {
  const int n = dy.dim(0);
  const int c = s.in_channels, h = s.in_h, w = s.in_w;
  dx = TensorT<T>({n, c, h, w});
  std::fill(dx.data.begin(), dx.data.end(), T(0));
  std::int64_t out_i = 0;
  const int oh = h / 2, ow = w / 2;
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      T* plane = dx.ptr() + (static_cast<std::int64_t>(i) * c + ch) * h * w;
      for (int p = 0; p < oh * ow; ++p) {
        plane[cache.argmax[static_cast<std::size_t>(out_i)]] += dy[out_i];
        ++out_i;
      }
    }
}

}  // namespace detail

// Single-layer forward exposed for tests and composition; returns the output
// and fills the cache needed by the matching backward.
template <typename T>
TensorT<T> layer_forward(const LayerSpec& spec, const LayerVars<T>& vars, const TensorT<T>& x,
                         LayerCache<T>* cache = nullptr) {
  TensorT<T> y;
  switch (spec.kind) {
    case LayerKind::dense:
      detail::dense_forward(spec, vars, x, y);
      if (cache) cache->input = x;
      break;
    case LayerKind::conv2d:
      detail::conv_forward(spec, vars, x, y, cache);
      break;
    case LayerKind::maxpool2x2:
      detail::maxpool_forward(spec, x, y, cache);
      break;
    case LayerKind::relu: {
      y = x;
      for (auto& v : y.data) v = v > T(0) ? v : T(0);
      if (cache) cache->output = y;
      break;
    }
  }
  return y;
}

template <typename T>
TensorT<T> NetworkT<T>::forward(const TensorT<T>& x, NetCache<T>* cache) const {
  if (x.rank() < 2 || x.numel() / x.dim(0) != input_dim)
    throw std::invalid_argument("network: input " + x.shape_str() + " does not provide " +
                                std::to_string(input_dim) + " features per sample");
  const int n = x.dim(0);
  if (cache) {
    cache->layers.assign(specs.size(), LayerCache<T>{});
    cache->batch = n;
  }
  TensorT<T> cur = x;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    LayerCache<T>* lc = cache ? &cache->layers[i] : nullptr;
    cur = layer_forward(specs[i], vars[i], cur, lc);
  }
  if (cache) cache->trunk_out = cur;
  // heads: logits = concat_h (trunk_out * W_h^T + b_h)
  const int total = output_dim();
  TensorT<T> logits({n, total});
  int off = 0;
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const int hs = head_layout.sizes[h];
    gemm<T>(false, true, n, hs, trunk_output_dim, T(1), cur.ptr(), trunk_output_dim,
            heads[h].W.ptr(), trunk_output_dim, T(0), logits.ptr() + off, total);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < hs; ++c) logits[static_cast<std::int64_t>(r) * total + off + c] +=
          heads[h].b[c];
    off += hs;
  }
  return logits;
}

template <typename T>
GradientsT<T> NetworkT<T>::backward(const NetCache<T>& cache, const TensorT<T>& dlogits) const {
  if (cache.batch != dlogits.dim(0) || dlogits.dim(1) != output_dim())
    throw std::invalid_argument("backward: dlogits " + dlogits.shape_str() +
                                " does not match cached forward batch");
  const int n = cache.batch;
  const int total = output_dim();
  GradientsT<T> g = zero_gradients();

  // Head gradients and the gradient flowing into the trunk output.
  TensorT<T> dtrunk({n, trunk_output_dim});
  std::fill(dtrunk.data.begin(), dtrunk.data.end(), T(0));
  int off = 0;
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const int hs = head_layout.sizes[h];
    // dW_h += dY_slice^T A
    gemm<T>(true, false, hs, trunk_output_dim, n, T(1), dlogits.ptr() + off, total,
            cache.trunk_out.ptr(), trunk_output_dim, T(1), g.heads[h].W.ptr(), trunk_output_dim);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < hs; ++c)
        g.heads[h].b[c] += dlogits[static_cast<std::int64_t>(r) * total + off + c];
    // dA += dY_slice W_h
    gemm<T>(false, false, n, trunk_output_dim, hs, T(1), dlogits.ptr() + off, total,
            heads[h].W.ptr(), trunk_output_dim, T(1), dtrunk.ptr(), trunk_output_dim);
    off += hs;
  }

  // Trunk, in reverse.
  TensorT<T> cur = std::move(dtrunk);
  for (std::size_t ri = specs.size(); ri-- > 0;) {
    const LayerSpec& s = specs[ri];
    const LayerCache<T>& lc = cache.layers[ri];
    TensorT<T> dx;
    switch (s.kind) {
      case LayerKind::dense: {
        if (lc.input.numel() == 0)
          throw std::invalid_argument("backward: missing cache for dense layer " +
                                      std::to_string(ri));
        TensorT<T> dy = cur;
        dy.shape = {n, s.out_features};
        detail::dense_backward(s, vars[ri], lc.input, dy, g.trunk[ri], dx);
        break;
      }
      case LayerKind::conv2d: {
        if (lc.im2col.size() != static_cast<std::size_t>(n))
          throw std::invalid_argument("backward: missing cache for conv layer " +
                                      std::to_string(ri));
        detail::conv_backward(s, vars[ri], lc, cur, g.trunk[ri], dx);
        break;
      }
      case LayerKind::maxpool2x2: {
        if (lc.argmax.empty())
          throw std::invalid_argument("backward: missing cache for maxpool layer " +
                                      std::to_string(ri));
        detail::maxpool_backward(s, lc, cur, dx);
        break;
      }
      case LayerKind::relu: {
        if (lc.output.numel() != cur.numel())
          throw std::invalid_argument("backward: missing cache for relu layer " +
                                      std::to_string(ri));
        dx = cur;
        for (std::int64_t i = 0; i < dx.numel(); ++i)
          if (!(lc.output[i] > T(0))) dx[i] = T(0);
        break;
      }
    }
    cur = std::move(dx);
  }
  return g;
}

// Accumulates f(per-sample parameter gradient) into `out`, where f is
// elementwise square (absolute=false) or absolute value. Per-sample dense
// gradients are rank-1 outer products, so the batch reduces to one GEMM over
// transformed factors; conv layers fall back to a per-sample loop. The
// caller divides by the sample count.
template <typename T>
void backward_accumulate_per_sample(const NetworkT<T>& net, const NetCache<T>& cache,
                                    const TensorT<T>& dlogits, bool absolute,
                                    GradientsT<T>& out) {
  const int n = cache.batch;
  const int total = net.output_dim();
  auto f = [absolute](T v) { return absolute ? std::abs(v) : v * v; };

  // per-sample rank-1 accumulation for a dense map y = x W^T + b
  auto dense_accum = [&](const TensorT<T>& x_in, const T* dy, int dy_ld, int out_f, int in_f,
                         LayerVars<T>& acc) {
    TensorT<T> dyt({n, out_f});
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < out_f; ++c)
        dyt.at(r, c) = f(dy[static_cast<std::int64_t>(r) * dy_ld + c]);
    TensorT<T> xt({n, in_f});
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < in_f; ++c) {
        T v = x_in[static_cast<std::int64_t>(r) * in_f + c];
        xt.at(r, c) = absolute ? std::abs(v) : v * v;
      }
    gemm<T>(true, false, out_f, in_f, n, T(1), dyt.ptr(), out_f, xt.ptr(), in_f, T(1),
            acc.W.ptr(), in_f);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < out_f; ++c) acc.b[c] += dyt.at(r, c);
  };

  // heads
  TensorT<T> dtrunk({n, net.trunk_output_dim});
  std::fill(dtrunk.data.begin(), dtrunk.data.end(), T(0));
  int off = 0;
  for (std::size_t h = 0; h < net.heads.size(); ++h) {
    const int hs = net.head_layout.sizes[h];
    dense_accum(cache.trunk_out, dlogits.ptr() + off, total, hs, net.trunk_output_dim,
                out.heads[h]);
    gemm<T>(false, false, n, net.trunk_output_dim, hs, T(1), dlogits.ptr() + off, total,
            net.heads[h].W.ptr(), net.trunk_output_dim, T(1), dtrunk.ptr(),
            net.trunk_output_dim);
    off += hs;
  }

  TensorT<T> cur = std::move(dtrunk);
  for (std::size_t ri = net.specs.size(); ri-- > 0;) {
    const LayerSpec& s = net.specs[ri];
    const LayerCache<T>& lc = cache.layers[ri];
    TensorT<T> dx;
    switch (s.kind) {
      case LayerKind::dense: {
        dense_accum(lc.input, cur.ptr(), s.out_features, s.out_features, s.in_features,
                    out.trunk[ri]);
        dx = TensorT<T>({n, s.in_features});
        gemm<T>(false, false, n, s.in_features, s.out_features, T(1), cur.ptr(), s.out_features,
                net.vars[ri].W.ptr(), s.in_features, T(0), dx.ptr(), s.in_features);
        break;
      }
      case LayerKind::conv2d: {
        const int oh = s.out_h(), ow = s.out_w();
        const int ck = s.in_channels * s.kernel * s.kernel;
        const std::int64_t plane = static_cast<std::int64_t>(s.in_channels) * s.in_h * s.in_w;
        dx = TensorT<T>({n, s.in_channels, s.in_h, s.in_w});
        std::fill(dx.data.begin(), dx.data.end(), T(0));
        TensorT<T> dw_s({s.out_channels, ck});
        TensorT<T> dcols({ck, oh * ow});
        for (int i = 0; i < n; ++i) {
          const TensorT<T>& cols = lc.im2col[static_cast<std::size_t>(i)];
          const T* dyp = cur.ptr() + static_cast<std::int64_t>(i) * s.out_channels * oh * ow;
          gemm<T>(false, true, s.out_channels, ck, oh * ow, T(1), dyp, oh * ow, cols.ptr(),
                  oh * ow, T(0), dw_s.ptr(), ck);
          for (std::int64_t j = 0; j < dw_s.numel(); ++j) out.trunk[ri].W[j] += f(dw_s[j]);
          for (int oc = 0; oc < s.out_channels; ++oc) {
            T sum = 0;
            for (int p = 0; p < oh * ow; ++p) sum += dyp[static_cast<std::int64_t>(oc) * oh * ow + p];
            out.trunk[ri].b[oc] += f(sum);
          }
          gemm<T>(true, false, ck, oh * ow, s.out_channels, T(1), net.vars[ri].W.ptr(), ck, dyp,
                  oh * ow, T(0), dcols.ptr(), oh * ow);
          detail::col2im_add(dcols, s.in_channels, s.in_h, s.in_w, s.kernel, s.padding, s.stride,
                             oh, ow, dx.ptr() + i * plane);
        }
        break;
      }
      case LayerKind::maxpool2x2:
        detail::maxpool_backward(s, lc, cur, dx);
        break;
      case LayerKind::relu: {
        dx = cur;
        for (std::int64_t i = 0; i < dx.numel(); ++i)
          if (!(lc.output[i] > T(0))) dx[i] = T(0);
        break;
      }
    }
    cur = std::move(dx);
  }
}

template <typename T>
void NetworkT<T>::grow_single_head(int extra, HeadInit init, rng::Generator& g) {
  if (head_layout.kind == HeadLayoutKind::multi_head)
    throw std::invalid_argument("grow_single_head: layout is multi-head");
  if (extra <= 0) return;
  LayerVars<T>& h = heads[0];
  int old_out = head_layout.sizes[0];
  TensorT<T> w({old_out + extra, trunk_output_dim});
  std::copy(h.W.data.begin(), h.W.data.end(), w.data.begin());
  TensorT<T> b({old_out + extra});
  std::copy(h.b.data.begin(), h.b.data.end(), b.data.begin());
  if (init == HeadInit::random) {
    float bound = std::sqrt(6.0f / static_cast<float>(trunk_output_dim + old_out + extra));
    for (std::int64_t i = static_cast<std::int64_t>(old_out) * trunk_output_dim; i < w.numel();
         ++i)
      w[i] = static_cast<T>(rng::uniform(g, -bound, bound));
  }
  h.W = std::move(w);
  h.b = std::move(b);
  head_layout.sizes[0] = old_out + extra;
}

// ---------------------------------------------------------------------------
// Masked softmax cross-entropy
// ---------------------------------------------------------------------------

// Softmax restricted to active entries; loss = -log p(target). Gradients of
// inactive entries are exactly zero. `mask` is a boolean vector over classes.
template <typename T>
std::pair<T, TensorT<T>> masked_softmax_xent(const TensorT<T>& logits, int target,
                                             const std::vector<char>& mask) {
  const int c = static_cast<int>(logits.numel());
  if (static_cast<int>(mask.size()) != c)
    throw std::invalid_argument("masked_softmax_xent: mask size does not match logits");
  if (target < 0 || target >= c || !mask[static_cast<std::size_t>(target)])
    throw std::invalid_argument("masked_softmax_xent: target " + std::to_string(target) +
                                " is not active (head routing bug)");
  T mx = -std::numeric_limits<T>::infinity();
  for (int i = 0; i < c; ++i)
    if (mask[static_cast<std::size_t>(i)]) mx = std::max(mx, logits[i]);
  T denom = 0;
  for (int i = 0; i < c; ++i)
    if (mask[static_cast<std::size_t>(i)]) denom += std::exp(logits[i] - mx);
  TensorT<T> d({c});
  for (int i = 0; i < c; ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    T p = std::exp(logits[i] - mx) / denom;
    d[i] = p - (i == target ? T(1) : T(0));
  }
  T loss = -(logits[target] - mx - std::log(denom));
  return {loss, std::move(d)};
}

// Batched version over contiguous masks; returns mean loss, writes
// d(mean loss)/dlogits. Rows may carry different masks (mixed-task batches).
template <typename T>
T batched_masked_xent(const TensorT<T>& logits, const std::vector<int>& targets,
                      const std::vector<OutputMask>& masks, TensorT<T>& dlogits) {
  const int n = logits.dim(0), c = logits.dim(1);
  dlogits = TensorT<T>::zeros({n, c});
  T total_loss = 0;
  const T inv_n = T(1) / static_cast<T>(n);
  for (int r = 0; r < n; ++r) {
    const OutputMask& m = masks[static_cast<std::size_t>(r)];
    const int t = targets[static_cast<std::size_t>(r)];
    if (t < m.offset || t >= m.offset + m.length)
      throw std::invalid_argument("batched_masked_xent: target " + std::to_string(t) +
                                  " outside active segment (head routing bug)");
    const T* row = logits.ptr() + static_cast<std::int64_t>(r) * c;
    T mx = row[m.offset];
    for (int i = m.offset + 1; i < m.offset + m.length; ++i) mx = std::max(mx, row[i]);
    T denom = 0;
    for (int i = m.offset; i < m.offset + m.length; ++i) denom += std::exp(row[i] - mx);
    T* drow = dlogits.ptr() + static_cast<std::int64_t>(r) * c;
    for (int i = m.offset; i < m.offset + m.length; ++i) {
      T p = std::exp(row[i] - mx) / denom;
      drow[i] = (p - (i == t ? T(1) : T(0))) * inv_n;
    }
    total_loss += -(row[t] - mx - std::log(denom));
  }
  return total_loss * inv_n;
}

// ---------------------------------------------------------------------------
// Model construction
// ---------------------------------------------------------------------------

enum class Arch { mlp400, mlp1000, mlp256x2, cnn_small };

inline const char* arch_name(Arch a) {
  switch (a) {
    case Arch::mlp400: return "mlp400";
    case Arch::mlp1000: return "mlp1000";
    case Arch::mlp256x2: return "mlp256x2";
    case Arch::cnn_small: return "cnn_small";
  }
  return "?";
}

namespace detail {

template <typename T>
void glorot_init(TensorT<T>& w, int fan_in, int fan_out, rng::Generator& g) {
  float bound = std::sqrt(6.0f / static_cast<float>(fan_in + fan_out));
  for (auto& v : w.data) v = static_cast<T>(rng::uniform(g, -bound, bound));
}

}  // namespace detail

// Builds the trunk for `arch`, validates `input_dim`, attaches heads per the
// layout. Trunk weights are Glorot-uniform, biases zero; head weights follow
// `head_init`. All draws come from `init_stream` in layer order.
template <typename T = float>
NetworkT<T> build_model(Arch arch, int input_dim, const HeadLayout& layout, HeadInit head_init,
                        rng::Generator& init_stream) {
  NetworkT<T> net;
  net.input_dim = input_dim;
  net.head_layout = layout;

  auto expect_dim = [&](int want) {
    if (input_dim != want)
      throw std::invalid_argument(std::string("build_model: ") + arch_name(arch) + " expects " +
                                  std::to_string(want) + " input features, got " +
                                  std::to_string(input_dim));
  };

  auto add_dense = [&](int in, int out) {
    LayerSpec s;
    s.kind = LayerKind::dense;
    s.in_features = in;
    s.out_features = out;
    net.specs.push_back(s);
    LayerVars<T> v;
    v.W = TensorT<T>({out, in});
    detail::glorot_init(v.W, in, out, init_stream);
    v.b = TensorT<T>::zeros({out});
    net.vars.push_back(std::move(v));
    net.specs.push_back({LayerKind::relu});
    net.vars.push_back({});
  };
  auto add_conv = [&](int in_c, int out_c, int pad, int in_h, int in_w, bool pool) -> int {
    LayerSpec s;
    s.kind = LayerKind::conv2d;
    s.in_channels = in_c;
    s.out_channels = out_c;
    s.kernel = 5;
    s.padding = pad;
    s.stride = 1;
    s.in_h = in_h;
    s.in_w = in_w;
    net.specs.push_back(s);
    LayerVars<T> v;
    v.W = TensorT<T>({out_c, in_c * 25});
    detail::glorot_init(v.W, in_c * 25, out_c * 25, init_stream);
    v.b = TensorT<T>::zeros({out_c});
    net.vars.push_back(std::move(v));
    int oh = s.out_h();
    net.specs.push_back({LayerKind::relu});
    net.vars.push_back({});
    if (pool) {
      LayerSpec p;
      p.kind = LayerKind::maxpool2x2;
      p.in_channels = out_c;
      p.in_h = oh;
      p.in_w = oh;
      net.specs.push_back(p);
      net.vars.push_back({});
      oh /= 2;
    }
    return oh;
  };

  switch (arch) {
    case Arch::mlp400:
      expect_dim(1024);
      add_dense(1024, 400);
      add_dense(400, 400);
      net.trunk_output_dim = 400;
      break;
    case Arch::mlp1000:
      expect_dim(1024);
      add_dense(1024, 1000);
      add_dense(1000, 1000);
      net.trunk_output_dim = 1000;
      break;
    case Arch::mlp256x2:
      expect_dim(784);
      add_dense(784, 256);
      add_dense(256, 256);
      net.trunk_output_dim = 256;
      break;
    case Arch::cnn_small: {
      expect_dim(784);
      int s1 = add_conv(1, 10, 2, 28, 28, true);    // 28x28x10 -> 14x14x10
      int s2 = add_conv(10, 20, 2, s1, s1, true);   // 14x14x20 -> 7x7x20
      int s3 = add_conv(20, 40, 0, s2, s2, false);  // 3x3x40
      int s4 = add_conv(40, 70, 2, s3, s3, false);  // 3x3x70
      add_dense(70 * s4 * s4, 256);
      net.trunk_output_dim = 256;
      break;
    }
  }

  for (int hs : layout.sizes) {
    LayerVars<T> h;
    h.W = TensorT<T>({hs, net.trunk_output_dim});
    if (head_init == HeadInit::random)
      detail::glorot_init(h.W, net.trunk_output_dim, hs, init_stream);
    h.b = TensorT<T>::zeros({hs});
    net.heads.push_back(std::move(h));
  }
  return net;
}

// Activation shape (excluding batch) after each trunk layer; used to audit
// the CNN stack against its reference table.
template <typename T>
std::vector<std::vector<int>> activation_shapes(const NetworkT<T>& net) {
  std::vector<std::vector<int>> out;
  for (const auto& s : net.specs) {
    switch (s.kind) {
      case LayerKind::dense: out.push_back({s.out_features}); break;
      case LayerKind::conv2d: out.push_back({s.out_channels, s.out_h(), s.out_w()}); break;
      case LayerKind::maxpool2x2: out.push_back({s.in_channels, s.in_h / 2, s.in_w / 2}); break;
      case LayerKind::relu: out.push_back(out.empty() ? std::vector<int>{} : out.back()); break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient checking (use the double instantiation)
// ---------------------------------------------------------------------------

// Central differences on a sample of coordinates of every parameter tensor.
// Returns max |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
template <typename T>
double gradient_check(NetworkT<T>& net, const TensorT<T>& x, const std::vector<int>& targets,
                      const std::vector<OutputMask>& masks, double eps,
                      rng::Generator& coord_stream, int coords_per_tensor = 24) {
  auto loss_of = [&]() {
    TensorT<T> d;
    TensorT<T> logits = net.forward(x);
    return static_cast<double>(batched_masked_xent(logits, targets, masks, d));
  };
  NetCache<T> cache;
  TensorT<T> logits = net.forward(x, &cache);
  TensorT<T> dlogits;
  batched_masked_xent(logits, targets, masks, dlogits);
  GradientsT<T> analytic = net.backward(cache, dlogits);

  double worst = 0;
  net.for_each_param([&](const std::string& name, TensorT<T>& p) {
    TensorT<T>* g = analytic.by_name(name);
    const std::int64_t n = p.numel();
    std::vector<int> coords;
    if (n <= coords_per_tensor) {
      for (int i = 0; i < n; ++i) coords.push_back(i);
    } else {
      coords = rng::sample_without_replacement(static_cast<int>(n), coords_per_tensor,
                                               coord_stream);
    }
    for (int ci : coords) {
      const T saved = p[ci];
      p[ci] = saved + static_cast<T>(eps);
      double lp = loss_of();
      p[ci] = saved - static_cast<T>(eps);
      double lm = loss_of();
      p[ci] = saved;
      double numeric = (lp - lm) / (2 * eps);
      double a = static_cast<double>((*g)[ci]);
      double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, rel);
    }
  });
  return worst;
}

}  // namespace clbench
