#pragma once

// Task-sequence generation: compiles datasets into ordered task lists for
// the three canonical settings (incremental task / domain / class), with
// label remapping, head layout, and task-identity routing.

#include "clbench/data.hpp"
#include "clbench/nn.hpp"
#include "clbench/rng.hpp"

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace clbench {

enum class ScenarioKind { incremental_task, incremental_domain, incremental_class };

const char* kind_name(ScenarioKind k);
ScenarioKind kind_from_name(const std::string& s);
const char* head_layout_name(HeadLayoutKind k);
HeadLayoutKind head_layout_from_name(const std::string& s);

struct HeadPolicy {
  HeadLayoutKind layout = HeadLayoutKind::single_head_fixed;
  HeadInit head_init = HeadInit::random;
};

// The layout the scenario's kind implies when not specified explicitly.
HeadPolicy default_head_policy(ScenarioKind kind);

struct TaskSpec {
  int t = 0;                       // 1-based task identity
  std::string source;              // dataset name
  std::vector<int> class_subset;   // ordered source classes (split-style tasks)
  std::vector<int> permutation;    // pixel bijection (permuted tasks; empty otherwise)
  std::uint64_t perm_index = 0;    // substream index the permutation was drawn from
  std::map<int, int> label_map;    // source class -> presented label

  bool permuted() const { return !permutation.empty(); }
};

struct Scenario {
  std::vector<TaskSpec> tasks;
  ScenarioKind kind = ScenarioKind::incremental_task;
  HeadPolicy head_policy;
  std::uint64_t seed = 0;

  int task_count() const { return static_cast<int>(tasks.size()); }
  // Total presented classes across the sequence (the class-incremental
  // output-space size).
  int total_classes() const;
  // Presented classes introduced by tasks 1..k.
  int classes_through(int k) const;
};

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

// Partitions a dataset's classes, in ascending order, into tasks of
// `classes_per_task`. Requires an even partition and at least two tasks.
Scenario split_tasks(const ImageSet& dataset, int classes_per_task, ScenarioKind kind,
                     const HeadPolicy& policy);
Scenario split_tasks(const std::string& dataset_name, int class_count, int classes_per_task,
                     ScenarioKind kind, const HeadPolicy& policy);

// Pixel-permutation tasks over one dataset. Task 1 is the identity
// permutation; tasks 2..n draw from the seeded permutation stream. For
// incremental_class the presented label of task i, class c is (i-1)*C + c.
Scenario permuted_tasks(const std::string& dataset_name, int class_count, int input_dim,
                        int n_tasks, std::uint64_t seed, ScenarioKind kind,
                        const HeadPolicy& policy);

// Incremental-task queue over several datasets: each dataset's classes are
// enumerated in ascending pairs (or `classes_per_task`-tuples), datasets in
// the given order; every class appears exactly once.
struct DatasetHandle {
  std::string name;
  int class_count = 0;
};
Scenario multi_dataset_queue(const std::vector<DatasetHandle>& datasets, int classes_per_task = 2);

// ---------------------------------------------------------------------------
// Presentation and head layout
// ---------------------------------------------------------------------------

// Allocated output layout after `tasks_seen` tasks.
HeadLayout output_layout(const Scenario& sc, int tasks_seen);

// Presented label and active-logit mask for a source class of `task`, given
// how many tasks have been seen (governs the growing-head mask width).
// The label is relative to the active segment: its position among the
// concatenated logits is mask.offset + label.
struct Presented {
  int label = 0;
  OutputMask mask;

  int logit_target() const { return mask.offset + label; }
};
Presented present_label(const Scenario& sc, const TaskSpec& task, int source_class,
                        int tasks_seen);

// Full presentation of one sample: applies the task's pixel permutation and
// the label/mask mapping.
struct PresentedSample {
  Tensor input;
  int label = 0;
  OutputMask mask;
};
PresentedSample present(const Scenario& sc, const TaskSpec& task, const Tensor& input_row,
                        int source_class, int tasks_seen);

// ---------------------------------------------------------------------------
// Manifest (line-oriented, for audit and cross-implementation comparison)
// ---------------------------------------------------------------------------

void write_manifest(const Scenario& sc, std::ostream& out);
Scenario read_manifest(std::istream& in);

}  // namespace clbench
