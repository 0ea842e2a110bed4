#pragma once

// Experiment orchestration: config parsing, seeded runs, per-task accuracy
// matrices, grid search over the regularization coefficient, and CSV output.

#include "clbench/data.hpp"
#include "clbench/methods.hpp"
#include "clbench/nn.hpp"
#include "clbench/optim.hpp"
#include "clbench/scenario.hpp"

#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace clbench {

struct ExperimentConfig {
  // [scenario]
  std::string generator = "split";  // split | permuted | multi_dataset
  std::string dataset = "mnist";
  std::vector<std::string> datasets;  // multi_dataset queue, in order
  ScenarioKind kind = ScenarioKind::incremental_task;
  int classes_per_task = 2;
  int n_tasks = 10;                    // permuted
  std::string head_layout = "auto";    // auto or explicit layout name
  HeadInit head_init = HeadInit::random;
  bool offline = false;                // merge all tasks into one (upper bound)

  // [model]
  Arch arch = Arch::mlp400;

  // [method]
  MethodKind method = MethodKind::finetune;
  PenaltyConfig penalty;
  std::string buffer_capacity = "auto";  // auto = memory-overhead formula
  Compression compression = Compression::float32;

  // [optimizer]
  OptimizerConfig optimizer;

  // [run]
  int epochs = 4;
  int batch_size = 128;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::string data_dir = "data";
  std::string output;
  int parallel = 1;

  std::string scenario_label() const;
};

// Flat "section.key" -> value map; sections come from an INI-style file.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_ini(std::istream& in);
KeyValues load_config_keys(const std::string& path);

// Materializes a config; unknown keys or invalid values throw with the key
// name. The CLBENCH_DATA_DIR environment variable overrides run.data_dir.
ExperimentConfig config_from_keys(const KeyValues& kv);

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

// acc[i][j]: test accuracy on task j+1 after training i+1 tasks (sequential
// runs are lower-triangular; offline runs have one row covering every task).
struct ResultMatrix {
  std::vector<std::vector<double>> acc;

  int rows() const { return static_cast<int>(acc.size()); }
};

// Unweighted mean of the accuracies recorded after training `after_task`
// tasks (1-based row).
double average_accuracy(const ResultMatrix& m, int after_task);

struct RunResult {
  ExperimentConfig config;
  std::vector<ResultMatrix> per_seed;
  double mean_final = 0.0;  // mean over seeds of the final average accuracy
  double std_final = 0.0;   // sample standard deviation over seeds

  double mean_after(int task) const;
};

// Shared dataset cache: each (dataset, policy) pair is loaded and
// preprocessed once and reused across seeds and grid points.
class DataCache {
 public:
  explicit DataCache(std::string data_dir) : data_dir_(std::move(data_dir)) {}

  struct Entry {
    ProcessedSet train;
    ProcessedSet test;
    int class_count = 0;
  };
  const Entry& get(const std::string& name, PolicyKind kind);
  const std::string& data_dir() const { return data_dir_; }

 private:
  std::string data_dir_;
  std::map<std::string, std::unique_ptr<Entry>> entries_;
};

RunResult run_experiment(const ExperimentConfig& config);
RunResult run_experiment(const ExperimentConfig& config, DataCache& cache);

struct GridResult {
  std::vector<float> lambdas;
  std::vector<RunResult> runs;   // aligned with lambdas
  int best_index = -1;           // highest final mean accuracy; ties -> smaller lambda
};

GridResult grid_search(const ExperimentConfig& config, const std::vector<float>& lambdas,
                       DataCache& cache);

// Detail CSV (method,scenario,arch,seed,lambda,after_task,eval_task,accuracy)
// at `path` plus a <path minus .csv>.summary.csv
// (method,scenario,mean_avg_acc,std_avg_acc,n_seeds). Deterministic order,
// accuracies with four decimals.
void emit_results(const std::vector<RunResult>& runs, const std::string& path);

// Table-style summary of detail CSVs; optionally writes the per-coefficient
// sensitivity series to `sensitivity_csv`.
int report_results(const std::vector<std::string>& csv_paths, std::ostream& out,
                   const std::string& sensitivity_csv = "");

}  // namespace clbench
