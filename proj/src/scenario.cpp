#include "clbench/scenario.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace clbench {

const char* kind_name(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::incremental_task: return "incremental_task";
    case ScenarioKind::incremental_domain: return "incremental_domain";
    case ScenarioKind::incremental_class: return "incremental_class";
  }
  return "?";
}

ScenarioKind kind_from_name(const std::string& s) {
  if (s == "incremental_task") return ScenarioKind::incremental_task;
  if (s == "incremental_domain") return ScenarioKind::incremental_domain;
  if (s == "incremental_class") return ScenarioKind::incremental_class;
  throw std::invalid_argument("unknown scenario kind '" + s + "'");
}

const char* head_layout_name(HeadLayoutKind k) {
  switch (k) {
    case HeadLayoutKind::multi_head: return "multi_head";
    case HeadLayoutKind::single_head_fixed: return "single_head_fixed";
    case HeadLayoutKind::single_head_growing: return "single_head_growing";
    case HeadLayoutKind::single_head_preallocated: return "single_head_preallocated";
  }
  return "?";
}

HeadLayoutKind head_layout_from_name(const std::string& s) {
  if (s == "multi_head") return HeadLayoutKind::multi_head;
  if (s == "single_head_fixed") return HeadLayoutKind::single_head_fixed;
  if (s == "single_head_growing") return HeadLayoutKind::single_head_growing;
  if (s == "single_head_preallocated") return HeadLayoutKind::single_head_preallocated;
  throw std::invalid_argument("unknown head layout '" + s + "'");
}

HeadPolicy default_head_policy(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::incremental_task:
      return {HeadLayoutKind::multi_head, HeadInit::random};
    case ScenarioKind::incremental_domain:
      return {HeadLayoutKind::single_head_fixed, HeadInit::random};
    case ScenarioKind::incremental_class:
      return {HeadLayoutKind::single_head_growing, HeadInit::random};
  }
  return {};
}

namespace {

void validate_policy(ScenarioKind kind, const HeadPolicy& policy) {
  const bool multi = policy.layout == HeadLayoutKind::multi_head;
  const bool classy = policy.layout == HeadLayoutKind::single_head_growing ||
                      policy.layout == HeadLayoutKind::single_head_preallocated;
  if (multi && kind != ScenarioKind::incremental_task)
    throw std::invalid_argument("multi_head layout requires incremental_task");
  if (classy && kind != ScenarioKind::incremental_class)
    throw std::invalid_argument(std::string(head_layout_name(policy.layout)) +
                                " layout requires incremental_class");
  if (kind == ScenarioKind::incremental_task && !multi)
    throw std::invalid_argument("incremental_task requires multi_head layout");
  if (kind == ScenarioKind::incremental_class && !classy)
    throw std::invalid_argument("incremental_class requires a growing or preallocated head");
  if (kind == ScenarioKind::incremental_domain &&
      policy.layout != HeadLayoutKind::single_head_fixed)
    throw std::invalid_argument("incremental_domain requires single_head_fixed layout");
}

void validate_scenario(const Scenario& sc) {
  if (sc.task_count() < 2)
    throw std::invalid_argument("scenario must contain at least two tasks, got " +
                                std::to_string(sc.task_count()));
  validate_policy(sc.kind, sc.head_policy);
  for (int i = 0; i < sc.task_count(); ++i)
    if (sc.tasks[static_cast<std::size_t>(i)].t != i + 1)
      throw std::invalid_argument("task identities must be consecutive from 1");
  // class subsets within one source must be pairwise disjoint
  std::map<std::string, std::vector<char>> seen;
  for (const auto& task : sc.tasks) {
    if (task.permuted()) continue;
    auto& used = seen[task.source];
    for (int c : task.class_subset) {
      if (c >= static_cast<int>(used.size())) used.resize(static_cast<std::size_t>(c) + 1, 0);
      if (used[static_cast<std::size_t>(c)])
        throw std::invalid_argument("class " + std::to_string(c) + " of " + task.source +
                                    " appears in more than one task");
      used[static_cast<std::size_t>(c)] = 1;
    }
  }
}

}  // namespace

int Scenario::total_classes() const { return classes_through(task_count()); }

// Width of the presented label space over tasks 1..k: with global class ids
// this is the cumulative class count; with per-task ids it is the shared
// (or per-head) width.
int Scenario::classes_through(int k) const {
  int n = 0;
  for (int i = 0; i < k; ++i)
    for (const auto& [src, dst] : tasks[static_cast<std::size_t>(i)].label_map)
      n = std::max(n, dst + 1);
  return n;
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

Scenario split_tasks(const std::string& dataset_name, int class_count, int classes_per_task,
                     ScenarioKind kind, const HeadPolicy& policy) {
  if (classes_per_task <= 0 || class_count % classes_per_task != 0)
    throw std::invalid_argument("split_tasks: " + std::to_string(class_count) +
                                " classes not divisible by " + std::to_string(classes_per_task));
  const int k = class_count / classes_per_task;
  Scenario sc;
  sc.kind = kind;
  sc.head_policy = policy;
  for (int i = 0; i < k; ++i) {
    TaskSpec task;
    task.t = i + 1;
    task.source = dataset_name;
    for (int j = 0; j < classes_per_task; ++j) {
      int cls = i * classes_per_task + j;
      task.class_subset.push_back(cls);
      switch (kind) {
        case ScenarioKind::incremental_task:
        case ScenarioKind::incremental_domain:
          task.label_map[cls] = j;  // index within the task's subset
          break;
        case ScenarioKind::incremental_class:
          task.label_map[cls] = cls;  // global naming space
          break;
      }
    }
    sc.tasks.push_back(std::move(task));
  }
  validate_scenario(sc);
  return sc;
}

Scenario split_tasks(const ImageSet& dataset, int classes_per_task, ScenarioKind kind,
                     const HeadPolicy& policy) {
  return split_tasks(dataset.name, dataset.class_count, classes_per_task, kind, policy);
}

Scenario permuted_tasks(const std::string& dataset_name, int class_count, int input_dim,
                        int n_tasks, std::uint64_t seed, ScenarioKind kind,
                        const HeadPolicy& policy) {
  if (n_tasks < 2) throw std::invalid_argument("permuted_tasks: need at least two tasks");
  Scenario sc;
  sc.kind = kind;
  sc.head_policy = policy;
  sc.seed = seed;
  for (int i = 0; i < n_tasks; ++i) {
    TaskSpec task;
    task.t = i + 1;
    task.source = dataset_name;
    task.perm_index = static_cast<std::uint64_t>(i);
    if (i == 0) {
      task.permutation = rng::identity_permutation(input_dim);
    } else {
      auto g = rng::make_stream(seed, rng::Stream::permutation, task.perm_index);
      task.permutation = rng::random_permutation(input_dim, g);
    }
    for (int c = 0; c < class_count; ++c) {
      task.class_subset.push_back(c);
      task.label_map[c] =
          kind == ScenarioKind::incremental_class ? i * class_count + c : c;
    }
    sc.tasks.push_back(std::move(task));
  }
  validate_scenario(sc);
  return sc;
}

Scenario multi_dataset_queue(const std::vector<DatasetHandle>& datasets, int classes_per_task) {
  Scenario sc;
  sc.kind = ScenarioKind::incremental_task;
  sc.head_policy = default_head_policy(sc.kind);
  int t = 0;
  for (const auto& ds : datasets) {
    if (ds.class_count % classes_per_task != 0)
      throw std::invalid_argument("multi_dataset_queue: " + ds.name + " has " +
                                  std::to_string(ds.class_count) +
                                  " classes, not divisible by " +
                                  std::to_string(classes_per_task));
    for (int base = 0; base < ds.class_count; base += classes_per_task) {
      TaskSpec task;
      task.t = ++t;
      task.source = ds.name;
      for (int j = 0; j < classes_per_task; ++j) {
        task.class_subset.push_back(base + j);
        task.label_map[base + j] = j;
      }
      sc.tasks.push_back(std::move(task));
    }
  }
  validate_scenario(sc);
  return sc;
}

// ---------------------------------------------------------------------------
// Presentation
// ---------------------------------------------------------------------------

HeadLayout output_layout(const Scenario& sc, int tasks_seen) {
  if (tasks_seen < 1 || tasks_seen > sc.task_count())
    throw std::invalid_argument("output_layout: tasks_seen out of range");
  HeadLayout layout;
  layout.kind = sc.head_policy.layout;
  switch (layout.kind) {
    case HeadLayoutKind::multi_head:
      for (int i = 0; i < tasks_seen; ++i)
        layout.sizes.push_back(
            static_cast<int>(sc.tasks[static_cast<std::size_t>(i)].class_subset.size()));
      break;
    case HeadLayoutKind::single_head_fixed: {
      int width = 0;
      for (const auto& [src, dst] : sc.tasks[0].label_map) width = std::max(width, dst + 1);
      layout.sizes.push_back(width);
      break;
    }
    case HeadLayoutKind::single_head_growing:
      layout.sizes.push_back(sc.classes_through(tasks_seen));
      break;
    case HeadLayoutKind::single_head_preallocated:
      layout.sizes.push_back(sc.total_classes());
      break;
  }
  return layout;
}

Presented present_label(const Scenario& sc, const TaskSpec& task, int source_class,
                        int tasks_seen) {
  auto it = task.label_map.find(source_class);
  if (it == task.label_map.end())
    throw std::invalid_argument("present: class " + std::to_string(source_class) +
                                " does not belong to task " + std::to_string(task.t));
  Presented p;
  p.label = it->second;
  switch (sc.head_policy.layout) {
    case HeadLayoutKind::multi_head: {
      // logits hold every task's head; activate only head t
      HeadLayout full = output_layout(sc, sc.task_count());
      int off = 0;
      for (int i = 0; i < task.t - 1; ++i) off += full.sizes[static_cast<std::size_t>(i)];
      p.mask = {off, full.sizes[static_cast<std::size_t>(task.t - 1)], full.total()};
      break;
    }
    case HeadLayoutKind::single_head_fixed: {
      int width = output_layout(sc, 1).total();
      p.mask = OutputMask::full(width);
      break;
    }
    case HeadLayoutKind::single_head_growing: {
      int width = sc.classes_through(tasks_seen);
      p.mask = OutputMask::full(width);
      break;
    }
    case HeadLayoutKind::single_head_preallocated: {
      p.mask = OutputMask::full(sc.total_classes());
      break;
    }
  }
  return p;
}

PresentedSample present(const Scenario& sc, const TaskSpec& task, const Tensor& input_row,
                        int source_class, int tasks_seen) {
  PresentedSample out;
  Presented p = present_label(sc, task, source_class, tasks_seen);
  out.label = p.label;
  out.mask = p.mask;
  if (task.permuted()) {
    if (input_row.numel() != static_cast<std::int64_t>(task.permutation.size()))
      throw std::invalid_argument("present: input size " + std::to_string(input_row.numel()) +
                                  " does not match permutation length " +
                                  std::to_string(task.permutation.size()));
    out.input = Tensor(input_row.shape);
    for (std::int64_t i = 0; i < input_row.numel(); ++i)
      out.input[i] = input_row[task.permutation[static_cast<std::size_t>(i)]];
  } else {
    out.input = input_row;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
  return out;
}

}  // namespace

void write_manifest(const Scenario& sc, std::ostream& out) {
  out << "clbench-scenario v1\n";
  out << "kind " << kind_name(sc.kind) << "\n";
  out << "head_layout " << head_layout_name(sc.head_policy.layout) << "\n";
  out << "head_init " << (sc.head_policy.head_init == HeadInit::random ? "random" : "zeros")
      << "\n";
  out << "seed " << sc.seed << "\n";
  if (!sc.tasks.empty() && sc.tasks[0].permuted())
    out << "input_dim " << sc.tasks[0].permutation.size() << "\n";
  out << "tasks " << sc.task_count() << "\n";
  for (const auto& task : sc.tasks) {
    out << "task " << task.t << " source=" << task.source;
    out << " classes=" << join_ints(task.class_subset);
    std::vector<int> lm;
    for (int c : task.class_subset) lm.push_back(task.label_map.at(c));
    out << " labels=" << join_ints(lm);
    if (task.permuted()) out << " perm_index=" << task.perm_index;
    out << "\n";
  }
}

Scenario read_manifest(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "clbench-scenario v1")
    throw std::runtime_error("manifest: missing or unsupported header");
  Scenario sc;
  int expected_tasks = 0;
  int input_dim_hint = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "kind") {
      std::string v;
      ls >> v;
      sc.kind = kind_from_name(v);
    } else if (tag == "head_layout") {
      std::string v;
      ls >> v;
      sc.head_policy.layout = head_layout_from_name(v);
    } else if (tag == "head_init") {
      std::string v;
      ls >> v;
      sc.head_policy.head_init = v == "zeros" ? HeadInit::zeros : HeadInit::random;
    } else if (tag == "seed") {
      ls >> sc.seed;
    } else if (tag == "input_dim") {
      ls >> input_dim_hint;
    } else if (tag == "tasks") {
      ls >> expected_tasks;
    } else if (tag == "task") {
      TaskSpec task;
      ls >> task.t;
      std::string field;
      std::vector<int> labels;
      bool is_permuted = false;
      while (ls >> field) {
        auto eq = field.find('=');
        if (eq == std::string::npos) continue;
        std::string key = field.substr(0, eq), val = field.substr(eq + 1);
        if (key == "source") task.source = val;
        else if (key == "classes") task.class_subset = parse_ints(val);
        else if (key == "labels") labels = parse_ints(val);
        else if (key == "perm_index") {
          task.perm_index = std::stoull(val);
          is_permuted = true;
        }
      }
      if (labels.size() != task.class_subset.size())
        throw std::runtime_error("manifest: task " + std::to_string(task.t) +
                                 " labels do not match classes");
      for (std::size_t i = 0; i < labels.size(); ++i)
        task.label_map[task.class_subset[i]] = labels[i];
      if (is_permuted) {
        if (input_dim_hint <= 0)
          throw std::runtime_error("manifest: permuted task without input_dim header");
        if (task.perm_index == 0) {
          task.permutation = rng::identity_permutation(input_dim_hint);
        } else {
          auto g = rng::make_stream(sc.seed, rng::Stream::permutation, task.perm_index);
          task.permutation = rng::random_permutation(input_dim_hint, g);
        }
      }
      sc.tasks.push_back(std::move(task));
    } else {
      throw std::runtime_error("manifest: unknown line '" + line + "'");
    }
  }
  if (expected_tasks != sc.task_count())
    throw std::runtime_error("manifest: task count mismatch");
  validate_scenario(sc);
  return sc;
}

}  // namespace clbench
