#include "clbench/methods.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace clbench {

const char* method_name(MethodKind k) {
  switch (k) {
    case MethodKind::finetune: return "finetune";
    case MethodKind::l2: return "l2";
    case MethodKind::ewc: return "ewc";
    case MethodKind::ewc_online: return "ewc_online";
    case MethodKind::si: return "si";
    case MethodKind::mas: return "mas";
    case MethodKind::lwf: return "lwf";
    case MethodKind::rehearsal: return "rehearsal";
  }
  return "?";
}

MethodKind method_from_name(const std::string& s) {
  for (MethodKind k : {MethodKind::finetune, MethodKind::l2, MethodKind::ewc,
                       MethodKind::ewc_online, MethodKind::si, MethodKind::mas, MethodKind::lwf,
                       MethodKind::rehearsal})
    if (s == method_name(k)) return k;
  throw std::invalid_argument("unknown method '" + s + "'");
}

// ---------------------------------------------------------------------------
// Penalty state
// ---------------------------------------------------------------------------

namespace {

ParamBlock* find_block(BlockList& list, const std::string& name) {
  for (auto& b : list)
    if (b.name == name) return &b;
  return nullptr;
}

bool head_param(const std::string& name) { return name.rfind("head.", 0) == 0; }

}  // namespace

BlockList snapshot_params(Network& net, bool include_heads, float omega_fill) {
  BlockList out;
  net.for_each_param([&](const std::string& name, Tensor& p) {
    if (!include_heads && head_param(name)) return;
    ParamBlock b;
    b.name = name;
    b.anchor = p;
    b.omega = Tensor::full(p.shape, omega_fill);
    out.push_back(std::move(b));
  });
  return out;
}

double penalty_loss(Network& net, const PenaltyState& state, float lambda) {
  if (lambda == 0.0f) return 0.0;
  double total = 0;
  for (const auto& term : state.terms) {
    for (const auto& blk : term) {
      Tensor* p = net.param_by_name(blk.name);
      if (p == nullptr)
        throw std::invalid_argument("penalty: unknown parameter " + blk.name);
      const std::int64_t n = std::min(p->numel(), blk.omega.numel());
      for (std::int64_t i = 0; i < n; ++i) {
        const double d = double((*p)[i]) - double(blk.anchor[i]);
        total += double(blk.omega[i]) * d * d;
      }
    }
  }
  return 0.5 * double(lambda) * total;
}

void add_penalty_gradient(Network& net, const PenaltyState& state, float lambda, Gradients& g) {
  if (lambda == 0.0f || state.terms.empty()) return;
  for (const auto& term : state.terms) {
    for (const auto& blk : term) {
      Tensor* p = net.param_by_name(blk.name);
      Tensor* gp = g.by_name(blk.name);
      if (p == nullptr || gp == nullptr)
        throw std::invalid_argument("penalty: unknown parameter " + blk.name);
      const std::int64_t n = std::min(p->numel(), blk.omega.numel());
      for (std::int64_t i = 0; i < n; ++i)
        (*gp)[i] += lambda * blk.omega[i] * ((*p)[i] - blk.anchor[i]);
    }
  }
}

// ---------------------------------------------------------------------------
// Importance estimates
// ---------------------------------------------------------------------------

namespace {

// Shared chunked loop over sampled rows; `fill_dlogits` writes the per-row
// seed gradient at the logits.
BlockList importance_accumulate(
    Network& net, const Tensor& x, int n_samples, bool include_heads, bool absolute,
    rng::Generator& g,
    const std::function<void(const float* logits_row, float* drow)>& fill_dlogits) {
  const int total_rows = x.dim(0);
  const int dim = static_cast<int>(x.numel() / total_rows);
  int use = total_rows;
  if (n_samples >= 0 && n_samples < total_rows) use = n_samples;
  if (n_samples > total_rows)
    std::fprintf(stderr, "importance: %d samples requested, clamping to %d\n", n_samples,
                 total_rows);
  std::vector<int> rows;
  if (use < total_rows) {
    rows = rng::sample_without_replacement(total_rows, use, g);
  } else {
    rows = rng::identity_permutation(total_rows);
  }

  Gradients accum = net.zero_gradients();
  const int out_dim = net.output_dim();
  constexpr int kChunk = 256;
  Tensor xb, dlogits;
  for (int start = 0; start < use; start += kChunk) {
    const int nb = std::min(kChunk, use - start);
    xb = Tensor({nb, dim});
    for (int i = 0; i < nb; ++i)
      std::copy_n(x.ptr() + static_cast<std::int64_t>(rows[static_cast<std::size_t>(start + i)]) * dim,
                  dim, xb.ptr() + static_cast<std::int64_t>(i) * dim);
    NetCache<float> cache;
    Tensor logits = net.forward(xb, &cache);
    dlogits = Tensor::zeros({nb, out_dim});
    for (int i = 0; i < nb; ++i)
      fill_dlogits(logits.ptr() + static_cast<std::int64_t>(i) * out_dim,
                   dlogits.ptr() + static_cast<std::int64_t>(i) * out_dim);
    backward_accumulate_per_sample(net, cache, dlogits, absolute, accum);
  }

  BlockList out;
  const float scale = use > 0 ? 1.0f / static_cast<float>(use) : 0.0f;
  net.for_each_param([&](const std::string& name, Tensor&) {
    if (!include_heads && head_param(name)) return;
    Tensor* a = accum.by_name(name);
    ParamBlock b;
    b.name = name;
    b.omega = *a;
    for (auto& v : b.omega.data) v *= scale;
    out.push_back(std::move(b));
  });
  return out;
}

}  // namespace

BlockList fisher_diag(Network& net, const Tensor& x, const OutputMask& mask, int n_samples,
                      bool include_heads, rng::Generator& g) {
  return importance_accumulate(
      net, x, n_samples, include_heads, /*absolute=*/false, g,
      [&](const float* row, float* drow) {
        // label sampled from the model's predictive distribution
        float mx = row[mask.offset];
        for (int i = mask.offset + 1; i < mask.offset + mask.length; ++i)
          mx = std::max(mx, row[i]);
        float denom = 0;
        for (int i = mask.offset; i < mask.offset + mask.length; ++i)
          denom += std::exp(row[i] - mx);
        const double r = rng::real01(g);
        double cum = 0;
        int sampled = mask.offset + mask.length - 1;
        for (int i = mask.offset; i < mask.offset + mask.length; ++i) {
          cum += double(std::exp(row[i] - mx) / denom);
          if (r < cum) {
            sampled = i;
            break;
          }
        }
        for (int i = mask.offset; i < mask.offset + mask.length; ++i) {
          const float p = std::exp(row[i] - mx) / denom;
          drow[i] = p - (i == sampled ? 1.0f : 0.0f);
        }
      });
}

BlockList mas_importance(Network& net, const Tensor& x, const OutputMask& mask, int n_samples,
                         bool include_heads, rng::Generator& g) {
  return importance_accumulate(net, x, n_samples, include_heads, /*absolute=*/true, g,
                               [&](const float* row, float* drow) {
                                 // gradient of ||active logits||^2
                                 for (int i = mask.offset; i < mask.offset + mask.length; ++i)
                                   drow[i] = 2.0f * row[i];
                               });
}

// ---------------------------------------------------------------------------
// Consolidation
// ---------------------------------------------------------------------------

namespace {

// omega sized to the current parameter: coef_old * old (prefix) + add.
Tensor blend_omega(const Tensor* old_omega, float coef_old, const Tensor& add) {
  Tensor out = Tensor::zeros(add.shape);
  if (old_omega != nullptr) {
    const std::int64_t n = std::min(out.numel(), old_omega->numel());
    for (std::int64_t i = 0; i < n; ++i) out[i] = coef_old * (*old_omega)[i];
  }
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += add[i];
  return out;
}

}  // namespace

void ewc_consolidate(PenaltyState& state, Network& net, BlockList fisher, EwcMode mode,
                     float gamma, bool include_heads) {
  if (mode == EwcMode::multi_anchor) {
    BlockList term;
    for (auto& f : fisher) {
      ParamBlock b;
      b.name = f.name;
      b.anchor = *net.param_by_name(f.name);
      b.omega = std::move(f.omega);
      term.push_back(std::move(b));
    }
    state.terms.push_back(std::move(term));
    return;
  }
  // online: single running term
  if (state.terms.empty()) state.terms.emplace_back();
  BlockList& term = state.terms[0];
  for (auto& f : fisher) {
    ParamBlock* existing = find_block(term, f.name);
    Tensor omega = blend_omega(existing ? &existing->omega : nullptr, gamma, f.omega);
    if (existing == nullptr) {
      term.push_back({f.name, *net.param_by_name(f.name), std::move(omega)});
    } else {
      existing->omega = std::move(omega);
      existing->anchor = *net.param_by_name(f.name);
    }
  }
}

void accumulate_importance(PenaltyState& state, Network& net, BlockList importance,
                           bool include_heads) {
  if (state.terms.empty()) state.terms.emplace_back();
  BlockList& term = state.terms[0];
  for (auto& f : importance) {
    ParamBlock* existing = find_block(term, f.name);
    Tensor omega = blend_omega(existing ? &existing->omega : nullptr, 1.0f, f.omega);
    if (existing == nullptr) {
      term.push_back({f.name, *net.param_by_name(f.name), std::move(omega)});
    } else {
      existing->omega = std::move(omega);
      existing->anchor = *net.param_by_name(f.name);
    }
  }
}

void si_begin_task(PenaltyState& state, Network& net, bool include_heads) {
  state.si_path = snapshot_params(net, include_heads, 0.0f);  // omega holds w
}

void si_track_step(PenaltyState& state, Network& net, Gradients& grads,
                   const std::vector<float>& theta_before) {
  std::size_t cursor = 0;
  net.for_each_param([&](const std::string& name, Tensor& p) {
    const float* before = theta_before.data() + cursor;
    cursor += static_cast<std::size_t>(p.numel());
    ParamBlock* blk = find_block(state.si_path, name);
    if (blk == nullptr) return;
    Tensor* g = grads.by_name(name);
    for (std::int64_t i = 0; i < p.numel(); ++i)
      blk->omega[i] -= (*g)[i] * (p[i] - before[i]);  // w -= g * realized step
  });
}

void si_consolidate(PenaltyState& state, Network& net, float xi, bool include_heads) {
  if (xi <= 0) throw std::invalid_argument("si: xi must be positive");
  if (state.terms.empty()) state.terms.emplace_back();
  BlockList& term = state.terms[0];
  for (auto& path : state.si_path) {
    Tensor* p = net.param_by_name(path.name);
    Tensor contrib = Tensor::zeros(p->shape);
    for (std::int64_t i = 0; i < p->numel(); ++i) {
      const float delta = (*p)[i] - path.anchor[i];
      const float c = path.omega[i] / (delta * delta + xi);
      contrib[i] = c > 0 ? c : 0.0f;  // negative contributions clamp to zero
    }
    ParamBlock* existing = find_block(term, path.name);
    Tensor omega = blend_omega(existing ? &existing->omega : nullptr, 1.0f, contrib);
    if (existing == nullptr) {
      term.push_back({path.name, *p, std::move(omega)});
    } else {
      existing->omega = std::move(omega);
      existing->anchor = *p;
    }
  }
  state.si_path.clear();
}

// ---------------------------------------------------------------------------
// Learning without Forgetting
// ---------------------------------------------------------------------------

float lwf_loss(const Tensor& new_logits, const Tensor& old_logits, int target, float temperature,
               float alpha, const OutputMask& cur_mask, const OutputMask& prev_units,
               Tensor* dlogits) {
  const bool has_teacher = prev_units.length > 0;
  const float ce_weight = has_teacher ? 1.0f - alpha : 1.0f;

  auto [ce, dce] = masked_softmax_xent(new_logits, target, cur_mask.as_bools());
  if (dlogits != nullptr) {
    *dlogits = Tensor::zeros({static_cast<int>(new_logits.numel())});
    for (std::int64_t i = 0; i < dce.numel(); ++i) (*dlogits)[i] = ce_weight * dce[i];
  }
  float loss = ce_weight * ce;
  if (!has_teacher) return loss;

  const int a = prev_units.offset, b = prev_units.offset + prev_units.length;
  auto tempered = [&](const Tensor& v, std::vector<float>& out) {
    float mx = -std::numeric_limits<float>::infinity();
    for (int i = a; i < b; ++i) mx = std::max(mx, v[i] / temperature);
    float denom = 0;
    for (int i = a; i < b; ++i) denom += std::exp(v[i] / temperature - mx);
    out.resize(static_cast<std::size_t>(b - a));
    for (int i = a; i < b; ++i) out[static_cast<std::size_t>(i - a)] =
        std::exp(v[i] / temperature - mx) / denom;
  };
  std::vector<float> q_old, q_new;
  tempered(old_logits, q_old);
  tempered(new_logits, q_new);
  float kl = 0;
  for (std::size_t i = 0; i < q_old.size(); ++i)
    if (q_old[i] > 0) kl += q_old[i] * (std::log(q_old[i]) - std::log(q_new[i]));
  loss += alpha * temperature * temperature * kl;
  if (dlogits != nullptr)
    for (int i = a; i < b; ++i)
      (*dlogits)[i] += alpha * temperature *
                       (q_new[static_cast<std::size_t>(i - a)] - q_old[static_cast<std::size_t>(i - a)]);
  return loss;
}

// ---------------------------------------------------------------------------
// Rehearsal
// ---------------------------------------------------------------------------

std::int64_t capacity_from_overhead(std::int64_t overhead_params, int floats_per_image,
                                    Compression c) {
  if (overhead_params <= 0 || floats_per_image <= 0)
    throw std::invalid_argument("capacity_from_overhead: inputs must be positive");
  const std::int64_t overhead_bytes = overhead_params * 4;
  const std::int64_t bytes_per_image =
      static_cast<std::int64_t>(floats_per_image) * (c == Compression::float32 ? 4 : 1);
  return overhead_bytes / bytes_per_image;
}

std::int64_t ReplayBuffer::size() const {
  std::int64_t n = 0;
  for (const auto& s : slots_) n += static_cast<std::int64_t>(s.size());
  return n;
}

std::vector<int> ReplayBuffer::per_task_counts() const {
  std::vector<int> out;
  for (const auto& s : slots_) out.push_back(static_cast<int>(s.size()));
  return out;
}

void ReplayBuffer::update_after_task(int finished_task, const Tensor& pix01,
                                     const std::vector<int>& labels, const PixelStats& stats,
                                     rng::Generator& g) {
  if (capacity_ <= 0) return;
  if (static_cast<int>(slots_.size()) < finished_task) {
    slots_.resize(static_cast<std::size_t>(finished_task));
    stats_.resize(static_cast<std::size_t>(finished_task));
  }
  stats_[static_cast<std::size_t>(finished_task - 1)] = stats;

  const int tasks_seen = finished_task;
  const std::int64_t base = capacity_ / tasks_seen;
  const std::int64_t rem = capacity_ % tasks_seen;
  auto target = [&](int slot) { return base + (slot < rem ? 1 : 0); };

  // shrink earlier tasks by seeded random eviction
  for (int s = 0; s < tasks_seen - 1; ++s) {
    auto& slot = slots_[static_cast<std::size_t>(s)];
    const std::int64_t want = target(s);
    if (static_cast<std::int64_t>(slot.size()) <= want) continue;
    std::vector<int> keep = rng::sample_without_replacement(static_cast<int>(slot.size()),
                                                            static_cast<int>(want), g);
    std::sort(keep.begin(), keep.end());
    std::vector<Item> kept;
    kept.reserve(keep.size());
    for (int i : keep) kept.push_back(std::move(slot[static_cast<std::size_t>(i)]));
    slot = std::move(kept);
  }

  // fill the finished task's slot by seeded random sampling
  const int n = pix01.dim(0);
  const int dim = pix01.dim(1);
  const std::int64_t want = std::min<std::int64_t>(target(tasks_seen - 1), n);
  std::vector<int> picks = rng::sample_without_replacement(n, static_cast<int>(want), g);
  std::sort(picks.begin(), picks.end());
  auto& slot = slots_[static_cast<std::size_t>(finished_task - 1)];
  slot.clear();
  slot.reserve(picks.size());
  for (int row : picks) {
    Item item;
    item.label = labels[static_cast<std::size_t>(row)];
    item.task = finished_task;
    const float* src = pix01.ptr() + static_cast<std::int64_t>(row) * dim;
    if (comp_ == Compression::float32) {
      item.f32.assign(src, src + dim);
    } else {
      item.u8.resize(static_cast<std::size_t>(dim));
      for (int j = 0; j < dim; ++j)
        item.u8[static_cast<std::size_t>(j)] =
            static_cast<std::uint8_t>(std::lround(std::clamp(src[j], 0.0f, 1.0f) * 255.0f));
    }
    slot.push_back(std::move(item));
  }
}

std::vector<const ReplayBuffer::Item*> ReplayBuffer::sample(int n, rng::Generator& g) const {
  std::vector<const Item*> flat;
  flat.reserve(static_cast<std::size_t>(size()));
  for (const auto& s : slots_)
    for (const auto& item : s) flat.push_back(&item);
  std::vector<const Item*> out;
  out.reserve(static_cast<std::size_t>(n));
  if (flat.empty()) return out;
  if (static_cast<int>(flat.size()) >= n) {
    std::vector<int> picks =
        rng::sample_without_replacement(static_cast<int>(flat.size()), n, g);
    for (int i : picks) out.push_back(flat[static_cast<std::size_t>(i)]);
  } else {
    for (int i = 0; i < n; ++i)
      out.push_back(flat[static_cast<std::size_t>(rng::next_below(g, flat.size()))]);
  }
  return out;
}

void ReplayBuffer::decode(const Item& item, float* dst) const {
  const PixelStats& st = stats_.at(static_cast<std::size_t>(item.task - 1));
  const float inv = 1.0f / st.stddev;
  if (comp_ == Compression::float32) {
    for (std::size_t j = 0; j < item.f32.size(); ++j) dst[j] = (item.f32[j] - st.mean) * inv;
  } else {
    for (std::size_t j = 0; j < item.u8.size(); ++j)
      dst[j] = (static_cast<float>(item.u8[j]) / 255.0f - st.mean) * inv;
  }
}

// ---------------------------------------------------------------------------
// Method implementations
// ---------------------------------------------------------------------------

float Method::batch_loss(Network& net, const Tensor& logits, const Batch& batch,
                         Tensor& dlogits) {
  return batched_masked_xent(logits, batch.targets, batch.masks, dlogits);
}

namespace {

class FinetuneMethod final : public Method {
 public:
  FinetuneMethod(PenaltyConfig cfg, std::uint64_t seed) : Method(cfg, seed) {}
  MethodKind kind() const override { return MethodKind::finetune; }
};

class PenaltyMethod final : public Method {
 public:
  PenaltyMethod(MethodKind kind, PenaltyConfig cfg, std::uint64_t seed, bool include_heads)
      : Method(cfg, seed), kind_(kind), include_heads_(include_heads) {}

  MethodKind kind() const override { return kind_; }

  void on_task_start(Network& net, const TaskRuntime& task) override {
    if (kind_ == MethodKind::si) si_begin_task(state_, net, include_heads_);
  }

  void augment_gradients(Network& net, Gradients& grads) override {
    add_penalty_gradient(net, state_, cfg_.lambda, grads);
  }

  bool needs_param_snapshot() const override { return kind_ == MethodKind::si; }

  void after_step(Network& net, Gradients& grads, const std::vector<float>& theta_before) override {
    if (kind_ == MethodKind::si) si_track_step(state_, net, grads, theta_before);
  }

  void on_task_end(Network& net, const TaskRuntime& task) override {
    switch (kind_) {
      case MethodKind::l2:
        // single running anchor with identity importance
        state_.terms.assign(1, snapshot_params(net, include_heads_, 1.0f));
        break;
      case MethodKind::ewc:
      case MethodKind::ewc_online: {
        auto g = rng::make_stream(master_seed_, rng::Stream::fisher,
                                  static_cast<std::uint64_t>(task.t));
        Tensor x = normalized_inputs(task);
        BlockList f = fisher_diag(net, x, task.mask, cfg_.fisher_samples, include_heads_, g);
        ewc_consolidate(state_, net, std::move(f),
                        kind_ == MethodKind::ewc ? EwcMode::multi_anchor : EwcMode::online,
                        cfg_.gamma, include_heads_);
        break;
      }
      case MethodKind::si:
        si_consolidate(state_, net, cfg_.xi, include_heads_);
        break;
      case MethodKind::mas: {
        auto g = rng::make_stream(master_seed_, rng::Stream::fisher,
                                  static_cast<std::uint64_t>(task.t));
        Tensor x = normalized_inputs(task);
        BlockList imp = mas_importance(net, x, task.mask, cfg_.fisher_samples, include_heads_, g);
        accumulate_importance(state_, net, std::move(imp), include_heads_);
        break;
      }
      default: break;
    }
  }

  const PenaltyState& state() const { return state_; }
  PenaltyState& state() { return state_; }

 private:
  static Tensor normalized_inputs(const TaskRuntime& task) {
    const int n = task.pix01.dim(0), dim = task.pix01.dim(1);
    Tensor x({n, dim});
    const float inv = 1.0f / task.stats.stddev;
    for (std::int64_t i = 0; i < task.pix01.numel(); ++i)
      x[i] = (task.pix01[i] - task.stats.mean) * inv;
    return x;
  }

  MethodKind kind_;
  bool include_heads_;
  PenaltyState state_;
};

class LwfMethod final : public Method {
 public:
  LwfMethod(PenaltyConfig cfg, std::uint64_t seed) : Method(cfg, seed) {}
  MethodKind kind() const override { return MethodKind::lwf; }

  void on_task_start(Network& net, const TaskRuntime& task) override {
    prev_units_ = OutputMask{0, task.prev_outputs, net.output_dim()};
    if (task.prev_outputs > 0) {
      teacher_ = net;  // snapshot of the pre-task model
      has_teacher_ = true;
    } else {
      has_teacher_ = false;
    }
  }

  float batch_loss(Network& net, const Tensor& logits, const Batch& batch,
                   Tensor& dlogits) override {
    if (!has_teacher_) return Method::batch_loss(net, logits, batch, dlogits);
    const int n = logits.dim(0), c = logits.dim(1);
    Tensor old_logits = teacher_.forward(batch.x);
    dlogits = Tensor::zeros({n, c});
    float total = 0;
    Tensor new_row({c}), old_row({teacher_.output_dim()});
    Tensor drow;
    const float inv_n = 1.0f / static_cast<float>(n);
    for (int r = 0; r < n; ++r) {
      std::copy_n(logits.ptr() + static_cast<std::int64_t>(r) * c, c, new_row.ptr());
      std::copy_n(old_logits.ptr() + static_cast<std::int64_t>(r) * teacher_.output_dim(),
                  teacher_.output_dim(), old_row.ptr());
      total += lwf_loss(new_row, old_row, batch.targets[static_cast<std::size_t>(r)],
                        cfg_.lwf_temperature, cfg_.lwf_alpha,
                        batch.masks[static_cast<std::size_t>(r)], prev_units_, &drow);
      for (int j = 0; j < c; ++j)
        dlogits[static_cast<std::int64_t>(r) * c + j] = drow[j] * inv_n;
    }
    return total * inv_n;
  }

 private:
  Network teacher_;
  bool has_teacher_ = false;
  OutputMask prev_units_;
};

class RehearsalMethod final : public Method {
 public:
  RehearsalMethod(PenaltyConfig cfg, std::uint64_t seed, std::int64_t capacity, Compression comp)
      : Method(cfg, seed), buffer_(capacity, comp) {
    if (capacity <= 0)
      std::fprintf(stderr,
                   "rehearsal: zero buffer capacity; method degenerates to fine-tuning\n");
  }

  MethodKind kind() const override { return MethodKind::rehearsal; }

  void on_task_start(Network& net, const TaskRuntime& task) override {
    sample_stream_ = rng::make_stream(master_seed_, rng::Stream::buffer,
                                      (static_cast<std::uint64_t>(task.t) << 32) | 0u);
  }

  int fresh_per_batch(int batch_size) const override {
    return buffer_.empty() ? batch_size : batch_size / 2;
  }

  void extend_batch(Batch& batch, int start_row, int n_replay,
                    const std::function<OutputMask(int)>& mask_for_task) override {
    if (n_replay <= 0 || buffer_.empty()) return;
    const int dim = batch.x.dim(1);
    auto items = buffer_.sample(n_replay, sample_stream_);
    for (int i = 0; i < n_replay; ++i) {
      const auto* item = items[static_cast<std::size_t>(i)];
      buffer_.decode(*item, batch.x.ptr() + static_cast<std::int64_t>(start_row + i) * dim);
      OutputMask m = mask_for_task(item->task);
      batch.targets.push_back(m.offset + item->label);
      batch.masks.push_back(m);
    }
  }

  void on_task_end(Network& net, const TaskRuntime& task) override {
    auto g = rng::make_stream(master_seed_, rng::Stream::buffer,
                              (static_cast<std::uint64_t>(task.t) << 32) | 1u);
    buffer_.update_after_task(task.t, task.pix01, task.labels, task.stats, g);
  }

  const ReplayBuffer& buffer() const { return buffer_; }

 private:
  ReplayBuffer buffer_;
  rng::Generator sample_stream_;
};

}  // namespace

std::unique_ptr<Method> make_method(MethodKind kind, const PenaltyConfig& cfg,
                                    std::uint64_t master_seed, bool include_heads,
                                    std::int64_t buffer_capacity, Compression compression) {
  switch (kind) {
    case MethodKind::finetune:
      return std::make_unique<FinetuneMethod>(cfg, master_seed);
    case MethodKind::l2:
    case MethodKind::ewc:
    case MethodKind::ewc_online:
    case MethodKind::si:
    case MethodKind::mas:
      return std::make_unique<PenaltyMethod>(kind, cfg, master_seed, include_heads);
    case MethodKind::lwf:
      return std::make_unique<LwfMethod>(cfg, master_seed);
    case MethodKind::rehearsal:
      return std::make_unique<RehearsalMethod>(cfg, master_seed, buffer_capacity, compression);
  }
  throw std::invalid_argument("make_method: unknown kind");
}

const ReplayBuffer* method_buffer(const Method& m) {
  const auto* r = dynamic_cast<const RehearsalMethod*>(&m);
  return r == nullptr ? nullptr : &r->buffer();
}

const PenaltyState* method_penalty_state(const Method& m) {
  const auto* p = dynamic_cast<const PenaltyMethod*>(&m);
  return p == nullptr ? nullptr : &p->state();
}

// ---------------------------------------------------------------------------
// Shared training loop
// ---------------------------------------------------------------------------

void train_task(Method& method, Network& net, Optimizer<float>& opt, const TaskRuntime& task,
                const TrainSettings& settings,
                const std::function<OutputMask(int)>& mask_for_task) {
  method.on_task_start(net, task);

  const int n = static_cast<int>(task.count());
  const int dim = task.pix01.dim(1);
  std::vector<int> order = rng::identity_permutation(n);
  std::vector<float> theta_before;

  for (int epoch = 0; epoch < settings.epochs; ++epoch) {
    auto shuffle_stream = rng::make_stream(
        settings.master_seed, rng::Stream::shuffle,
        (static_cast<std::uint64_t>(task.t) << 32) | static_cast<std::uint64_t>(epoch));
    rng::shuffle(order, shuffle_stream);

    for (int pos = 0; pos < n;) {
      const int fresh_cap = method.fresh_per_batch(settings.batch_size);
      const int fresh = std::min(fresh_cap, n - pos);
      const int replay = fresh_cap < settings.batch_size ? fresh : 0;  // equal fresh/replay mix

      Batch batch;
      batch.x = Tensor({fresh + replay, dim});
      batch.targets.reserve(static_cast<std::size_t>(fresh + replay));
      batch.masks.reserve(static_cast<std::size_t>(fresh + replay));
      const float inv = 1.0f / task.stats.stddev;
      for (int i = 0; i < fresh; ++i) {
        const int row = order[static_cast<std::size_t>(pos + i)];
        const float* src = task.pix01.ptr() + static_cast<std::int64_t>(row) * dim;
        float* dst = batch.x.ptr() + static_cast<std::int64_t>(i) * dim;
        for (int j = 0; j < dim; ++j) dst[j] = (src[j] - task.stats.mean) * inv;
        const OutputMask m = task.row_task.empty()
                                 ? task.mask
                                 : mask_for_task(task.row_task[static_cast<std::size_t>(row)]);
        batch.targets.push_back(m.offset + task.labels[static_cast<std::size_t>(row)]);
        batch.masks.push_back(m);
      }
      method.extend_batch(batch, fresh, replay, mask_for_task);
      pos += fresh;

      NetCache<float> cache;
      Tensor logits = net.forward(batch.x, &cache);
      Tensor dlogits;
      method.batch_loss(net, logits, batch, dlogits);
      Gradients grads = net.backward(cache, dlogits);
      method.augment_gradients(net, grads);

      if (method.needs_param_snapshot()) {
        theta_before.clear();
        net.for_each_param([&](const std::string&, Tensor& p) {
          theta_before.insert(theta_before.end(), p.data.begin(), p.data.end());
        });
      }
      opt.step(net, grads);
      method.after_step(net, grads, theta_before);
    }
  }
  method.on_task_end(net, task);
}

}  // namespace clbench
