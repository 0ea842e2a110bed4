#pragma once

// Continual-learning trainer plug-ins: fine-tuning, quadratic-penalty
// consolidation (L2, EWC, online EWC, SI, MAS), distillation (LwF), and
// naive rehearsal with budget-derived replay buffers. All methods share one
// mini-batch training loop (train_task) and differ only in its hooks.

#include "clbench/data.hpp"
#include "clbench/nn.hpp"
#include "clbench/optim.hpp"
#include "clbench/rng.hpp"
#include "clbench/scenario.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace clbench {

enum class MethodKind { finetune, l2, ewc, ewc_online, si, mas, lwf, rehearsal };

const char* method_name(MethodKind k);
MethodKind method_from_name(const std::string& s);

struct PenaltyConfig {
  float lambda = 0.0f;     // regularization coefficient
  float gamma = 1.0f;      // online-EWC running-average weight, (0, 1]
  float xi = 0.1f;         // SI damping, > 0
  int fisher_samples = -1; // examples used for importance estimates; -1 = full task set
  float lwf_temperature = 2.0f;
  float lwf_alpha = 0.5f;
};

// ---------------------------------------------------------------------------
// Penalty state
// ---------------------------------------------------------------------------

// Anchor/importance snapshot of one parameter. `omega` and `anchor` may
// cover only a prefix of the current parameter (heads grown later are not
// constrained).
struct ParamBlock {
  std::string name;
  Tensor anchor;
  Tensor omega;
};
using BlockList = std::vector<ParamBlock>;

struct PenaltyState {
  std::vector<BlockList> terms;  // one per consolidation (EWC) or a single running term
  // SI scratch: anchor = parameters at task start, omega = path accumulator w
  BlockList si_path;
};

// lambda/2 * sum_i omega_i (theta_i - anchor_i)^2, over every stored term.
double penalty_loss(Network& net, const PenaltyState& state, float lambda);
// Adds lambda * omega_i (theta_i - anchor_i) to the matching gradients.
// Exact no-op when lambda == 0.
void add_penalty_gradient(Network& net, const PenaltyState& state, float lambda, Gradients& g);

// Parameter snapshot to seed anchors; omega filled with `omega_fill`.
// Heads are excluded for multi-head layouts (include_heads=false).
BlockList snapshot_params(Network& net, bool include_heads, float omega_fill);

// ---------------------------------------------------------------------------
// Importance estimates (computed on normalized model inputs)
// ---------------------------------------------------------------------------

// Empirical diagonal Fisher: mean squared gradient of -log p(y|x) with y
// sampled from the model's predictive distribution over the active outputs.
BlockList fisher_diag(Network& net, const Tensor& x, const OutputMask& mask, int n_samples,
                      bool include_heads, rng::Generator& g);

// Mean absolute gradient of ||active logits||^2 per parameter.
BlockList mas_importance(Network& net, const Tensor& x, const OutputMask& mask, int n_samples,
                         bool include_heads, rng::Generator& g);

enum class EwcMode { multi_anchor, online };

// End-of-task consolidation for Fisher-based penalties. multi_anchor appends
// an (anchor, Fisher) term; online keeps a single term with
// omega <- gamma * omega + fisher and a refreshed anchor.
void ewc_consolidate(PenaltyState& state, Network& net, BlockList fisher, EwcMode mode,
                     float gamma, bool include_heads);

// SI path tracking: w -= grad * realized parameter step, called after every
// optimizer update. `theta_before` holds the pre-step parameters, flattened
// in registry order.
void si_track_step(PenaltyState& state, Network& net, Gradients& grads,
                   const std::vector<float>& theta_before);
void si_begin_task(PenaltyState& state, Network& net, bool include_heads);
// omega += max(0, w) / ((theta - theta_pre)^2 + xi); resets w, moves anchors.
void si_consolidate(PenaltyState& state, Network& net, float xi, bool include_heads);

// Additive accumulation (MAS): omega += importance, anchor <- theta.
void accumulate_importance(PenaltyState& state, Network& net, BlockList importance,
                           bool include_heads);

// ---------------------------------------------------------------------------
// Learning without Forgetting
// ---------------------------------------------------------------------------

// (1-alpha) * CE(new, target over cur_mask) +
// alpha * T^2 * KL(softmax(old/T) || softmax(new/T)) over `prev_units`.
// With no previous units the loss reduces to plain cross-entropy. `target`
// is an absolute logit index inside cur_mask. If dlogits is non-null it
// receives the gradient (unreduced).
float lwf_loss(const Tensor& new_logits, const Tensor& old_logits, int target, float temperature,
               float alpha, const OutputMask& cur_mask, const OutputMask& prev_units,
               Tensor* dlogits = nullptr);

// ---------------------------------------------------------------------------
// Rehearsal
// ---------------------------------------------------------------------------

enum class Compression { float32, uint8 };

// Image capacity of a buffer matching the static memory overhead of
// `overhead_params` float32 parameters: floor(4*overhead / bytes-per-image).
std::int64_t capacity_from_overhead(std::int64_t overhead_params, int floats_per_image,
                                    Compression c);

class ReplayBuffer {
 public:
  struct Item {
    std::vector<float> f32;     // pre-normalization pixels (float32 mode)
    std::vector<std::uint8_t> u8;  // quantized pixels (uint8 mode)
    int label = 0;  // presented label, relative to its task's mask
    int task = 0;
  };

  ReplayBuffer(std::int64_t capacity, Compression comp) : capacity_(capacity), comp_(comp) {}

  std::int64_t capacity() const { return capacity_; }
  Compression compression() const { return comp_; }
  std::int64_t size() const;
  bool empty() const { return size() == 0; }
  std::vector<int> per_task_counts() const;
  const PixelStats& task_stats(int task) const { return stats_.at(static_cast<std::size_t>(task - 1)); }

  // Rebalances every stored task to an equal share of the capacity (first
  // slots take the remainder) and fills the finished task's slot by seeded
  // random sampling from its training data.
  void update_after_task(int finished_task, const Tensor& pix01, const std::vector<int>& labels,
                         const PixelStats& stats, rng::Generator& g);

  // n items drawn uniformly over the stored examples, without replacement
  // when enough are stored, with replacement otherwise.
  std::vector<const Item*> sample(int n, rng::Generator& g) const;

  // Normalized model input of an item (uses its task's statistics).
  void decode(const Item& item, float* dst) const;

 private:
  std::int64_t capacity_ = 0;
  Compression comp_ = Compression::float32;
  std::vector<std::vector<Item>> slots_;  // slot t-1 holds task t
  std::vector<PixelStats> stats_;
};

// ---------------------------------------------------------------------------
// Shared training loop
// ---------------------------------------------------------------------------

// One task's training material, already routed through the scenario rules:
// pix01 rows are post-geometry, post-permutation, pre-normalization.
struct TaskRuntime {
  int t = 0;
  Tensor pix01;              // [N, dim]
  std::vector<int> labels;   // presented labels (relative to mask)
  OutputMask mask;           // training-time mask
  PixelStats stats;
  int prev_outputs = 0;      // logit width allocated before this task (LwF teacher span)
  // offline (merged) runs: per-row task identity; rows are then routed
  // through mask_for_task instead of the shared mask
  std::vector<int> row_task;
  std::int64_t count() const { return static_cast<std::int64_t>(labels.size()); }
};

struct TrainSettings {
  int epochs = 4;
  int batch_size = 128;
  std::uint64_t master_seed = 0;
};

struct Batch {
  Tensor x;
  std::vector<int> targets;  // absolute logit indices
  std::vector<OutputMask> masks;
};

class Method {
 public:
  virtual ~Method() = default;
  virtual MethodKind kind() const = 0;

  virtual void on_task_start(Network& net, const TaskRuntime& task) {}
  virtual void on_task_end(Network& net, const TaskRuntime& task) {}

  // Batch loss and dlogits; the default is plain masked cross-entropy.
  virtual float batch_loss(Network& net, const Tensor& logits, const Batch& batch,
                           Tensor& dlogits);
  // Penalty contributions added to parameter gradients.
  virtual void augment_gradients(Network& net, Gradients& grads) {}
  // SI tracking needs the realized parameter change.
  virtual bool needs_param_snapshot() const { return false; }
  virtual void after_step(Network& net, Gradients& grads, const std::vector<float>& theta_before) {}

  // Rehearsal: how many fresh examples a batch takes (the rest is replay).
  virtual int fresh_per_batch(int batch_size) const { return batch_size; }
  // Fills batch rows [start_row, start_row + n_replay) with stored examples.
  virtual void extend_batch(Batch& batch, int start_row, int n_replay,
                            const std::function<OutputMask(int)>& mask_for_task) {}

  const PenaltyConfig& config() const { return cfg_; }

 protected:
  explicit Method(PenaltyConfig cfg, std::uint64_t master_seed)
      : cfg_(cfg), master_seed_(master_seed) {}
  PenaltyConfig cfg_;
  std::uint64_t master_seed_ = 0;
};

// include_heads: whether penalties cover head parameters (single-head
// layouts) or only the shared trunk (multi-head layouts).
std::unique_ptr<Method> make_method(MethodKind kind, const PenaltyConfig& cfg,
                                    std::uint64_t master_seed, bool include_heads,
                                    std::int64_t buffer_capacity, Compression compression);

// Runs the shared mini-batch loop: per-epoch seeded shuffling, method hooks
// for loss augmentation, batch composition, and end-of-task consolidation.
// The head layout for this task must already be applied to `net`.
void train_task(Method& method, Network& net, Optimizer<float>& opt, const TaskRuntime& task,
                const TrainSettings& settings,
                const std::function<OutputMask(int)>& mask_for_task);

// Direct access to a rehearsal method's buffer (tests, audits).
const ReplayBuffer* method_buffer(const Method& m);
// Direct access to a penalty method's state (tests, audits).
const PenaltyState* method_penalty_state(const Method& m);

}  // namespace clbench
