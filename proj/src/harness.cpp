#include "clbench/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace clbench {

std::string ExperimentConfig::scenario_label() const {
  std::string data = dataset;
  if (generator == "multi_dataset") {
    data.clear();
    for (std::size_t i = 0; i < datasets.size(); ++i) data += (i ? "+" : "") + datasets[i];
  }
  std::string label = generator + ":" + data + ":" + kind_name(kind);
  if (offline) label = "offline:" + label;
  return label;
}

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

KeyValues parse_ini(std::istream& in) {
  KeyValues kv;
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string s) {
      const char* ws = " \t\r\n";
      auto a = s.find_first_not_of(ws);
      if (a == std::string::npos) return std::string();
      auto b = s.find_last_not_of(ws);
      return s.substr(a, b - a + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw std::invalid_argument("config line " + std::to_string(lineno) +
                                    ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (section.empty())
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": key outside a section");
    kv[section + "." + key] = value;
  }
  return kv;
}

KeyValues load_config_keys(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file " + path);
  return parse_ini(f);
}

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto a = item.find_first_not_of(" \t");
    auto b = item.find_last_not_of(" \t");
    if (a != std::string::npos) out.push_back(item.substr(a, b - a + 1));
  }
  return out;
}

Arch arch_from_name(const std::string& s) {
  for (Arch a : {Arch::mlp400, Arch::mlp1000, Arch::mlp256x2, Arch::cnn_small})
    if (s == arch_name(a)) return a;
  throw std::invalid_argument("model.arch: unknown architecture '" + s + "'");
}

OptKind opt_from_name(const std::string& s) {
  for (OptKind k : {OptKind::sgd, OptKind::adagrad, OptKind::adam})
    if (s == opt_name(k)) return k;
  throw std::invalid_argument("optimizer.name: unknown optimizer '" + s + "'");
}

}  // namespace

ExperimentConfig config_from_keys(const KeyValues& kv) {
  ExperimentConfig c;
  auto get = [&](const char* key) -> const std::string* {
    auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  auto geti = [&](const char* key, int def) {
    const std::string* v = get(key);
    if (!v) return def;
    try {
      return std::stoi(*v);
    } catch (...) {
      throw std::invalid_argument(std::string(key) + ": expected an integer, got '" + *v + "'");
    }
  };
  auto getf = [&](const char* key, float def) {
    const std::string* v = get(key);
    if (!v) return def;
    try {
      return std::stof(*v);
    } catch (...) {
      throw std::invalid_argument(std::string(key) + ": expected a number, got '" + *v + "'");
    }
  };
  auto getb = [&](const char* key, bool def) {
    const std::string* v = get(key);
    if (!v) return def;
    if (*v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "no") return false;
    throw std::invalid_argument(std::string(key) + ": expected a boolean, got '" + *v + "'");
  };

  static const std::set<std::string> known = {
      "scenario.generator",  "scenario.dataset",        "scenario.datasets",
      "scenario.kind",       "scenario.classes_per_task", "scenario.n_tasks",
      "scenario.head_layout", "scenario.head_init",     "scenario.offline",
      "model.arch",          "method.name",             "method.lambda",
      "method.gamma",        "method.xi",               "method.fisher_samples",
      "method.lwf_temperature", "method.lwf_alpha",     "method.buffer_capacity",
      "method.compression",  "optimizer.name",          "optimizer.lr",
      "run.epochs",          "run.batch_size",          "run.seeds",
      "run.data_dir",        "run.output",              "run.parallel"};
  for (const auto& [key, _] : kv)
    if (!known.count(key)) throw std::invalid_argument("unknown config key '" + key + "'");

  if (const auto* v = get("scenario.generator")) c.generator = *v;
  if (c.generator != "split" && c.generator != "permuted" && c.generator != "multi_dataset")
    throw std::invalid_argument("scenario.generator: expected split, permuted, or multi_dataset");
  if (const auto* v = get("scenario.dataset")) c.dataset = *v;
  if (const auto* v = get("scenario.datasets")) c.datasets = split_list(*v);
  if (const auto* v = get("scenario.kind")) c.kind = kind_from_name(*v);
  c.classes_per_task = geti("scenario.classes_per_task", c.classes_per_task);
  c.n_tasks = geti("scenario.n_tasks", c.n_tasks);
  if (const auto* v = get("scenario.head_layout")) c.head_layout = *v;
  if (const auto* v = get("scenario.head_init"))
    c.head_init = *v == "zeros" ? HeadInit::zeros : HeadInit::random;
  c.offline = getb("scenario.offline", c.offline);

  if (const auto* v = get("model.arch")) c.arch = arch_from_name(*v);

  if (const auto* v = get("method.name")) c.method = method_from_name(*v);
  c.penalty.lambda = getf("method.lambda", c.penalty.lambda);
  c.penalty.gamma = getf("method.gamma", c.penalty.gamma);
  c.penalty.xi = getf("method.xi", c.penalty.xi);
  c.penalty.fisher_samples = geti("method.fisher_samples", c.penalty.fisher_samples);
  c.penalty.lwf_temperature = getf("method.lwf_temperature", c.penalty.lwf_temperature);
  c.penalty.lwf_alpha = getf("method.lwf_alpha", c.penalty.lwf_alpha);
  if (const auto* v = get("method.buffer_capacity")) c.buffer_capacity = *v;
  if (const auto* v = get("method.compression")) {
    if (*v == "float32") c.compression = Compression::float32;
    else if (*v == "uint8") c.compression = Compression::uint8;
    else throw std::invalid_argument("method.compression: expected float32 or uint8");
  }
  if (c.penalty.lambda < 0) throw std::invalid_argument("method.lambda: must be >= 0");
  if (!(c.penalty.gamma > 0 && c.penalty.gamma <= 1))
    throw std::invalid_argument("method.gamma: must be in (0, 1]");
  if (c.penalty.xi <= 0) throw std::invalid_argument("method.xi: must be > 0");

  if (const auto* v = get("optimizer.name")) c.optimizer.kind = opt_from_name(*v);
  // paper defaults: adam 0.001; sgd / adagrad 0.01
  c.optimizer.lr = c.optimizer.kind == OptKind::adam ? 0.001f : 0.01f;
  c.optimizer.lr = getf("optimizer.lr", c.optimizer.lr);
  if (c.optimizer.lr < 0) throw std::invalid_argument("optimizer.lr: must be >= 0");

  c.epochs = geti("run.epochs", c.epochs);
  c.batch_size = geti("run.batch_size", c.batch_size);
  if (c.epochs <= 0) throw std::invalid_argument("run.epochs: must be positive");
  if (c.batch_size <= 0) throw std::invalid_argument("run.batch_size: must be positive");
  if (const auto* v = get("run.seeds")) {
    c.seeds.clear();
    for (const auto& s : split_list(*v)) c.seeds.push_back(std::stoull(s));
  }
  if (c.seeds.empty()) throw std::invalid_argument("run.seeds: at least one seed required");
  if (const auto* v = get("run.data_dir")) c.data_dir = *v;
  if (const char* env = std::getenv("CLBENCH_DATA_DIR")) c.data_dir = env;
  if (const auto* v = get("run.output")) c.output = *v;
  c.parallel = geti("run.parallel", c.parallel);
  if (c.parallel < 1) throw std::invalid_argument("run.parallel: must be >= 1");

  if (c.generator == "multi_dataset" && c.datasets.empty())
    throw std::invalid_argument("scenario.datasets: required for the multi_dataset generator");
  return c;
}

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

double average_accuracy(const ResultMatrix& m, int after_task) {
  if (after_task < 1 || after_task > m.rows())
    throw std::invalid_argument("average_accuracy: after_task " + std::to_string(after_task) +
                                " out of range (trained " + std::to_string(m.rows()) + ")");
  const auto& row = m.acc[static_cast<std::size_t>(after_task - 1)];
  double s = 0;
  for (double v : row) s += v;
  return row.empty() ? 0.0 : s / static_cast<double>(row.size());
}

double RunResult::mean_after(int task) const {
  double s = 0;
  for (const auto& m : per_seed) s += average_accuracy(m, task);
  return per_seed.empty() ? 0.0 : s / static_cast<double>(per_seed.size());
}

// ---------------------------------------------------------------------------
// Data cache
// ---------------------------------------------------------------------------

const DataCache::Entry& DataCache::get(const std::string& name, PolicyKind kind) {
  std::string key = name + (kind == PolicyKind::pad32 ? "|pad32" : "|gray28");
  auto it = entries_.find(key);
  if (it != entries_.end()) return *it->second;
  if (!dataset_available(name, data_dir_))
    throw std::runtime_error("dataset '" + name + "' not found under '" + data_dir_ +
                             "' (fetch it or point run.data_dir / CLBENCH_DATA_DIR at it)");
  LoadedDataset raw = load_dataset(name, data_dir_);
  auto entry = std::make_unique<Entry>();
  PreprocessPolicy policy = policy_for(kind, raw.train);
  entry->train = preprocess(raw.train, policy);
  entry->test = preprocess(raw.test, policy, &entry->train.stats);
  entry->class_count = raw.train.class_count;
  it = entries_.emplace(key, std::move(entry)).first;
  return *it->second;
}

// ---------------------------------------------------------------------------
// Per-seed experiment
// ---------------------------------------------------------------------------

namespace {

struct PreparedScenario {
  Scenario sc;
  PolicyKind policy = PolicyKind::pad32;
  // entry + per-class row indices for every source dataset used
  struct Source {
    const DataCache::Entry* entry = nullptr;
    std::vector<std::vector<int>> train_rows_by_class;
    std::vector<std::vector<int>> test_rows_by_class;
  };
  std::map<std::string, Source> sources;
  int input_dim = 0;

  const Source& source_of(const TaskSpec& task) const { return sources.at(task.source); }
};

HeadPolicy resolve_head_policy(const ExperimentConfig& config) {
  HeadPolicy p = default_head_policy(config.kind);
  if (config.head_layout != "auto") p.layout = head_layout_from_name(config.head_layout);
  p.head_init = config.head_init;
  return p;
}

PreparedScenario build_scenario(const ExperimentConfig& config, DataCache& cache,
                                std::uint64_t seed) {
  PreparedScenario prep;
  prep.policy = config.generator == "multi_dataset" ? PolicyKind::gray28 : PolicyKind::pad32;
  HeadPolicy policy = resolve_head_policy(config);

  auto add_source = [&](const std::string& name) {
    const DataCache::Entry& entry = cache.get(name, prep.policy);
    PreparedScenario::Source src;
    src.entry = &entry;
    src.train_rows_by_class.resize(static_cast<std::size_t>(entry.class_count));
    src.test_rows_by_class.resize(static_cast<std::size_t>(entry.class_count));
    for (int i = 0; i < entry.train.count(); ++i)
      src.train_rows_by_class[static_cast<std::size_t>(entry.train.labels[static_cast<std::size_t>(i)])]
          .push_back(i);
    for (int i = 0; i < entry.test.count(); ++i)
      src.test_rows_by_class[static_cast<std::size_t>(entry.test.labels[static_cast<std::size_t>(i)])]
          .push_back(i);
    prep.sources.emplace(name, std::move(src));
    return &prep.sources.at(name);
  };

  if (config.generator == "split") {
    auto* src = add_source(config.dataset);
    prep.input_dim = src->entry->train.dim;
    prep.sc = split_tasks(config.dataset, src->entry->class_count, config.classes_per_task,
                          config.kind, policy);
  } else if (config.generator == "permuted") {
    auto* src = add_source(config.dataset);
    prep.input_dim = src->entry->train.dim;
    prep.sc = permuted_tasks(config.dataset, src->entry->class_count, prep.input_dim,
                             config.n_tasks, seed, config.kind, policy);
  } else {
    std::vector<DatasetHandle> handles;
    for (const auto& name : config.datasets) {
      auto* src = add_source(name);
      prep.input_dim = src->entry->train.dim;
      handles.push_back({name, src->entry->class_count});
    }
    prep.sc = multi_dataset_queue(handles, config.classes_per_task);
    prep.sc.head_policy.head_init = config.head_init;
  }
  prep.sc.seed = seed;
  return prep;
}

// Gathers one task's training rows (permuted when the task says so) as
// pre-normalization pixels with presented labels.
TaskRuntime materialize_train(const PreparedScenario& prep, int t, int tasks_seen) {
  const TaskSpec& task = prep.sc.tasks[static_cast<std::size_t>(t - 1)];
  const auto& src = prep.source_of(task);
  const ProcessedSet& train = src.entry->train;
  TaskRuntime rt;
  rt.t = t;
  rt.stats = train.stats;
  rt.mask = present_label(prep.sc, task, task.class_subset[0], tasks_seen).mask;

  std::vector<std::pair<int, int>> rows;  // (row, presented label)
  for (int cls : task.class_subset) {
    const int presented = task.label_map.at(cls);
    for (int row : src.train_rows_by_class[static_cast<std::size_t>(cls)])
      rows.emplace_back(row, presented);
  }
  std::sort(rows.begin(), rows.end());  // dataset order, deterministic

  const int dim = train.dim;
  rt.pix01 = Tensor({static_cast<int>(rows.size()), dim});
  rt.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const float* srcrow = train.pix01.ptr() + static_cast<std::int64_t>(rows[i].first) * dim;
    float* dst = rt.pix01.ptr() + static_cast<std::int64_t>(i) * dim;
    if (task.permuted()) {
      for (int j = 0; j < dim; ++j) dst[j] = srcrow[task.permutation[static_cast<std::size_t>(j)]];
    } else {
      std::copy_n(srcrow, dim, dst);
    }
    rt.labels.push_back(rows[i].second);
  }
  return rt;
}

// All tasks merged into one round of training (the offline upper bound).
TaskRuntime materialize_offline(const PreparedScenario& prep) {
  const int k = prep.sc.task_count();
  std::int64_t total = 0;
  int dim = 0;
  std::vector<TaskRuntime> parts;
  parts.reserve(static_cast<std::size_t>(k));
  for (int t = 1; t <= k; ++t) {
    parts.push_back(materialize_train(prep, t, k));
    total += parts.back().count();
    dim = parts.back().pix01.dim(1);
  }
  TaskRuntime rt;
  rt.t = 1;
  rt.stats = parts[0].stats;
  rt.mask = OutputMask::full(output_layout(prep.sc, k).total());
  rt.pix01 = Tensor({static_cast<int>(total), dim});
  rt.labels.reserve(static_cast<std::size_t>(total));
  rt.row_task.reserve(static_cast<std::size_t>(total));
  std::int64_t at = 0;
  for (int t = 1; t <= k; ++t) {
    const TaskRuntime& p = parts[static_cast<std::size_t>(t - 1)];
    std::copy_n(p.pix01.ptr(), p.pix01.numel(), rt.pix01.ptr() + at * dim);
    for (std::size_t i = 0; i < p.labels.size(); ++i) {
      rt.labels.push_back(p.labels[i]);
      rt.row_task.push_back(t);
    }
    at += p.count();
  }
  return rt;
}

double evaluate_task(const Network& net, const PreparedScenario& prep, int eval_t,
                     int tasks_seen) {
  const TaskSpec& task = prep.sc.tasks[static_cast<std::size_t>(eval_t - 1)];
  const auto& src = prep.source_of(task);
  const ProcessedSet& test = src.entry->test;
  const OutputMask mask = present_label(prep.sc, task, task.class_subset[0], tasks_seen).mask;
  const int dim = test.dim;

  std::vector<std::pair<int, int>> rows;
  for (int cls : task.class_subset) {
    const int presented = task.label_map.at(cls);
    for (int row : src.test_rows_by_class[static_cast<std::size_t>(cls)])
      rows.emplace_back(row, presented);
  }
  std::sort(rows.begin(), rows.end());
  if (rows.empty()) return 0.0;

  constexpr int kChunk = 1024;
  std::int64_t correct = 0;
  Tensor xb;
  const float inv = 1.0f / test.stats.stddev;
  for (std::size_t start = 0; start < rows.size(); start += kChunk) {
    const int nb = static_cast<int>(std::min<std::size_t>(kChunk, rows.size() - start));
    xb = Tensor({nb, dim});
    for (int i = 0; i < nb; ++i) {
      const float* srcrow =
          test.pix01.ptr() + static_cast<std::int64_t>(rows[start + static_cast<std::size_t>(i)].first) * dim;
      float* dst = xb.ptr() + static_cast<std::int64_t>(i) * dim;
      if (task.permuted()) {
        for (int j = 0; j < dim; ++j)
          dst[j] = (srcrow[task.permutation[static_cast<std::size_t>(j)]] - test.stats.mean) * inv;
      } else {
        for (int j = 0; j < dim; ++j) dst[j] = (srcrow[j] - test.stats.mean) * inv;
      }
    }
    Tensor logits = net.forward(xb);
    const int total = logits.dim(1);
    for (int i = 0; i < nb; ++i) {
      const float* row = logits.ptr() + static_cast<std::int64_t>(i) * total;
      int best = mask.offset;
      for (int j = mask.offset + 1; j < mask.offset + mask.length; ++j)
        if (row[j] > row[best]) best = j;
      if (best == mask.offset + rows[start + static_cast<std::size_t>(i)].second) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(rows.size());
}

ResultMatrix run_one_seed(const ExperimentConfig& config, DataCache& cache, std::uint64_t seed) {
  PreparedScenario prep = build_scenario(config, cache, seed);
  const Scenario& sc = prep.sc;
  const int k = sc.task_count();
  const bool growing = sc.head_policy.layout == HeadLayoutKind::single_head_growing;
  const bool include_heads = sc.head_policy.layout != HeadLayoutKind::multi_head;

  auto init_stream = rng::make_stream(seed, rng::Stream::init);
  HeadLayout initial = (growing && !config.offline) ? output_layout(sc, 1) : output_layout(sc, k);
  Network net = build_model<float>(config.arch, prep.input_dim, initial,
                                   sc.head_policy.head_init, init_stream);
  Optimizer<float> opt(config.optimizer);

  std::int64_t capacity = 0;
  if (config.method == MethodKind::rehearsal) {
    if (config.buffer_capacity == "auto") {
      capacity = capacity_from_overhead(2 * net.trunk_weight_count(), prep.input_dim,
                                        config.compression);
    } else {
      capacity = std::stoll(config.buffer_capacity);
    }
  }
  std::unique_ptr<Method> method = make_method(config.method, config.penalty, seed,
                                               include_heads, capacity, config.compression);

  TrainSettings settings{config.epochs, config.batch_size, seed};
  ResultMatrix matrix;

  if (config.offline) {
    TaskRuntime merged = materialize_offline(prep);
    auto mask_for_task = [&](int tt) {
      return present_label(sc, sc.tasks[static_cast<std::size_t>(tt - 1)],
                           sc.tasks[static_cast<std::size_t>(tt - 1)].class_subset[0], k)
          .mask;
    };
    train_task(*method, net, opt, merged, settings, mask_for_task);
    std::vector<double> row;
    for (int j = 1; j <= k; ++j) row.push_back(evaluate_task(net, prep, j, k));
    matrix.acc.push_back(std::move(row));
    return matrix;
  }

  for (int t = 1; t <= k; ++t) {
    if (growing && t > 1)
      net.grow_single_head(sc.classes_through(t) - sc.classes_through(t - 1),
                           sc.head_policy.head_init, init_stream);
    TaskRuntime task = materialize_train(prep, t, t);
    task.prev_outputs = t == 1 ? 0 : output_layout(sc, t - 1).total();
    auto mask_for_task = [&, t](int tt) {
      return present_label(sc, sc.tasks[static_cast<std::size_t>(tt - 1)],
                           sc.tasks[static_cast<std::size_t>(tt - 1)].class_subset[0], t)
          .mask;
    };
    train_task(*method, net, opt, task, settings, mask_for_task);
    std::vector<double> row;
    for (int j = 1; j <= t; ++j) row.push_back(evaluate_task(net, prep, j, t));
    matrix.acc.push_back(std::move(row));
  }
  return matrix;
}

}  // namespace

// ---------------------------------------------------------------------------
// Experiment driver
// ---------------------------------------------------------------------------

RunResult run_experiment(const ExperimentConfig& config) {
  DataCache cache(config.data_dir);
  return run_experiment(config, cache);
}

RunResult run_experiment(const ExperimentConfig& config, DataCache& cache) {
  // touch every dataset once so worker threads only read the cache
  const PolicyKind policy =
      config.generator == "multi_dataset" ? PolicyKind::gray28 : PolicyKind::pad32;
  if (config.generator == "multi_dataset") {
    for (const auto& name : config.datasets) cache.get(name, policy);
  } else {
    cache.get(config.dataset, policy);
  }

  RunResult result;
  result.config = config;
  result.per_seed.resize(config.seeds.size());

  const int workers = std::min<int>(config.parallel, static_cast<int>(config.seeds.size()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < config.seeds.size(); ++i)
      result.per_seed[i] = run_one_seed(config, cache, config.seeds[i]);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    std::atomic<std::size_t> next{0};
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w]() {
        try {
          for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= config.seeds.size()) break;
            result.per_seed[i] = run_one_seed(config, cache, config.seeds[i]);
          }
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  std::vector<double> finals;
  for (const auto& m : result.per_seed) finals.push_back(average_accuracy(m, m.rows()));
  double mean = 0;
  for (double v : finals) mean += v;
  mean /= static_cast<double>(finals.size());
  double var = 0;
  for (double v : finals) var += (v - mean) * (v - mean);
  result.mean_final = mean;
  result.std_final = finals.size() > 1 ? std::sqrt(var / static_cast<double>(finals.size() - 1)) : 0.0;
  return result;
}

GridResult grid_search(const ExperimentConfig& config, const std::vector<float>& lambdas,
                       DataCache& cache) {
  if (lambdas.empty()) throw std::invalid_argument("grid_search: empty lambda grid");
  GridResult grid;
  grid.lambdas = lambdas;
  for (float l : lambdas) {
    ExperimentConfig c = config;
    c.penalty.lambda = l;
    grid.runs.push_back(run_experiment(c, cache));
  }
  grid.best_index = 0;
  for (std::size_t i = 1; i < grid.runs.size(); ++i) {
    const auto& cur = grid.runs[i];
    const auto& best = grid.runs[static_cast<std::size_t>(grid.best_index)];
    // highest final mean accuracy; ties go to the smaller lambda
    if (cur.mean_final > best.mean_final ||
        (cur.mean_final == best.mean_final &&
         grid.lambdas[i] < grid.lambdas[static_cast<std::size_t>(grid.best_index)]))
      grid.best_index = static_cast<int>(i);
  }
  return grid;
}

// ---------------------------------------------------------------------------
// CSV output
// ---------------------------------------------------------------------------

namespace {

std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string fmtg(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

void emit_results(const std::vector<RunResult>& runs, const std::string& path) {
  std::ofstream detail(path);
  if (!detail) throw std::runtime_error("cannot write results to " + path);
  detail << "method,scenario,arch,seed,lambda,after_task,eval_task,accuracy\n";
  for (const auto& run : runs) {
    const std::string scenario = run.config.scenario_label();
    for (std::size_t si = 0; si < run.per_seed.size(); ++si) {
      const ResultMatrix& m = run.per_seed[si];
      for (int i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.acc[static_cast<std::size_t>(i)].size(); ++j)
          detail << method_name(run.config.method) << ',' << scenario << ','
                 << arch_name(run.config.arch) << ',' << run.config.seeds[si] << ','
                 << fmtg(run.config.penalty.lambda) << ',' << i + 1 << ',' << j + 1 << ','
                 << fmt4(m.acc[static_cast<std::size_t>(i)][j]) << '\n';
    }
  }
  detail.close();

  std::string summary_path = path;
  if (summary_path.size() > 4 && summary_path.substr(summary_path.size() - 4) == ".csv")
    summary_path = summary_path.substr(0, summary_path.size() - 4);
  summary_path += ".summary.csv";
  std::ofstream summary(summary_path);
  if (!summary) throw std::runtime_error("cannot write results to " + summary_path);
  summary << "method,scenario,mean_avg_acc,std_avg_acc,n_seeds\n";
  for (const auto& run : runs)
    summary << method_name(run.config.method) << ',' << run.config.scenario_label() << ','
            << fmt4(run.mean_final) << ',' << fmt4(run.std_final) << ','
            << run.per_seed.size() << '\n';
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

int report_results(const std::vector<std::string>& csv_paths, std::ostream& out,
                   const std::string& sensitivity_csv) {
  struct Key {
    std::string method, scenario, arch, lambda;
    bool operator<(const Key& o) const {
      return std::tie(method, scenario, arch, lambda) <
             std::tie(o.method, o.scenario, o.arch, o.lambda);
    }
  };
  // per key, per seed: (after_task -> accuracies)
  std::map<Key, std::map<std::string, std::map<int, std::vector<double>>>> data;

  for (const auto& path : csv_paths) {
    std::ifstream f(path);
    if (!f) {
      out << "report: cannot open " << path << "\n";
      return 1;
    }
    std::string line;
    if (!std::getline(f, line)) continue;  // header
    while (std::getline(f, line)) {
      std::vector<std::string> cols;
      std::stringstream ss(line);
      std::string c;
      while (std::getline(ss, c, ',')) cols.push_back(c);
      if (cols.size() != 8) continue;
      Key key{cols[0], cols[1], cols[2], cols[4]};
      data[key][cols[3]][std::stoi(cols[5])].push_back(std::stod(cols[7]));
    }
  }

  auto final_averages = [](const std::map<std::string, std::map<int, std::vector<double>>>& seeds) {
    std::vector<double> finals;
    for (const auto& [seed, per_after] : seeds) {
      const auto& last = per_after.rbegin()->second;
      double s = 0;
      for (double v : last) s += v;
      finals.push_back(s / static_cast<double>(last.size()));
    }
    return finals;
  };
  auto mean_std = [](const std::vector<double>& v) {
    double mean = 0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0;
    for (double x : v) var += (x - mean) * (x - mean);
    double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
    return std::pair<double, double>(mean, sd);
  };

  out << "method            scenario                                   lambda   avg_acc%          seeds\n";
  for (const auto& [key, seeds] : data) {
    auto [mean, sd] = mean_std(final_averages(seeds));
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-17s %-42s %-8s %6.2f +/- %-6.2f %zu\n", key.method.c_str(),
                  key.scenario.c_str(), key.lambda.c_str(), mean * 100, sd * 100, seeds.size());
    out << buf;
  }
  out << "(+/- is the sample standard deviation over seeds; the reference tables do not state "
         "whether their spread is std or SEM)\n";

  if (!sensitivity_csv.empty()) {
    std::ofstream f(sensitivity_csv);
    if (!f) {
      out << "report: cannot write " << sensitivity_csv << "\n";
      return 1;
    }
    f << "method,scenario,arch,lambda,mean_avg_acc,std_avg_acc,n_seeds\n";
    for (const auto& [key, seeds] : data) {
      auto [mean, sd] = mean_std(final_averages(seeds));
      f << key.method << ',' << key.scenario << ',' << key.arch << ',' << key.lambda << ','
        << fmt4(mean) << ',' << fmt4(sd) << ',' << seeds.size() << '\n';
    }
  }
  return 0;
}

}  // namespace clbench
