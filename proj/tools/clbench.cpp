// Command-line driver: `run` executes one experiment from a config file,
// `grid` sweeps the regularization coefficient, `report` summarizes result
// CSVs. Exit code 0 on success, nonzero with a diagnostic on config or data
// errors.

#include "clbench/harness.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

clbench::ExperimentConfig load_config(const std::string& path,
                                      const std::vector<std::string>& overrides,
                                      const std::string& data_dir, const std::string& seeds,
                                      const std::string& output) {
  clbench::KeyValues kv = clbench::load_config_keys(path);
  for (const auto& ov : overrides) {
    auto eq = ov.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("--set expects section.key=value, got '" + ov + "'");
    kv[ov.substr(0, eq)] = ov.substr(eq + 1);
  }
  if (!data_dir.empty()) kv["run.data_dir"] = data_dir;
  if (!seeds.empty()) kv["run.seeds"] = seeds;
  if (!output.empty()) kv["run.output"] = output;
  return clbench::config_from_keys(kv);
}

void ensure_parent_dir(const std::string& path) {
  auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
}

void print_summary(const clbench::RunResult& run) {
  std::cout << clbench::method_name(run.config.method) << " on " << run.config.scenario_label()
            << ": final average accuracy " << run.mean_final * 100 << "% +/- "
            << run.std_final * 100 << " over " << run.per_seed.size() << " seeds\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual-learning benchmark runner"};
  app.require_subcommand(1);

  std::string config_path, data_dir, seeds, output, lambdas_arg, sensitivity;
  std::vector<std::string> overrides;
  std::vector<std::string> csvs;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("config", config_path, "experiment config file")->required();
    cmd->add_option("--set", overrides, "override a config key (section.key=value)");
    cmd->add_option("--data-dir", data_dir, "dataset directory (overrides run.data_dir)");
    cmd->add_option("--seeds", seeds, "comma-separated seed list");
    cmd->add_option("--output", output, "detail CSV path (overrides run.output)");
  };

  CLI::App* run_cmd = app.add_subcommand("run", "run one experiment");
  add_common(run_cmd);

  CLI::App* grid_cmd = app.add_subcommand("grid", "sweep the regularization coefficient");
  add_common(grid_cmd);
  grid_cmd->add_option("--lambdas", lambdas_arg, "comma-separated lambda grid")
      ->default_val("0.01,0.1,1,10,100,1000");

  CLI::App* report_cmd = app.add_subcommand("report", "summarize result CSVs");
  report_cmd->add_option("csv", csvs, "detail CSV files")->required();
  report_cmd->add_option("--sensitivity", sensitivity, "write per-lambda series to this CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) {
      clbench::ExperimentConfig cfg = load_config(config_path, overrides, data_dir, seeds, output);
      clbench::RunResult result = clbench::run_experiment(cfg);
      print_summary(result);
      if (!cfg.output.empty()) {
        ensure_parent_dir(cfg.output);
        clbench::emit_results({result}, cfg.output);
        std::cout << "wrote " << cfg.output << "\n";
      }
    } else if (grid_cmd->parsed()) {
      clbench::ExperimentConfig cfg = load_config(config_path, overrides, data_dir, seeds, output);
      std::vector<float> lambdas;
      std::stringstream ss(lambdas_arg);
      std::string item;
      while (std::getline(ss, item, ',')) lambdas.push_back(std::stof(item));
      clbench::DataCache cache(cfg.data_dir);
      clbench::GridResult grid = clbench::grid_search(cfg, lambdas, cache);
      for (std::size_t i = 0; i < grid.runs.size(); ++i) {
        std::cout << (static_cast<int>(i) == grid.best_index ? "* " : "  ") << "lambda="
                  << grid.lambdas[i] << "  ";
        print_summary(grid.runs[i]);
      }
      if (!cfg.output.empty()) {
        ensure_parent_dir(cfg.output);
        clbench::emit_results(grid.runs, cfg.output);
        std::cout << "wrote " << cfg.output << "\n";
      }
    } else if (report_cmd->parsed()) {
      return clbench::report_results(csvs, std::cout, sensitivity);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
