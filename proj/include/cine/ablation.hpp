#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "cine/config.hpp"
#include "cine/stats.hpp"
#include "cine/training.hpp"

namespace cine {

struct MatrixCell {
  std::string name;
  std::vector<std::pair<std::string, std::string>> overrides;  // dotted key -> YAML value
};

struct ExperimentMatrix {
  std::string name;
  ExperimentConfig base;
  std::vector<double> accelerations{4.0, 8.0};
  std::vector<MatrixCell> cells;
  /// Cell pairs compared with paired t-tests (first is the reference).
  std::vector<std::pair<std::string, std::string>> pairs;

  /// Unique names, known override keys, pairs naming existing cells, and
  /// every cell config valid. Nothing is trained before this passes.
  void validate() const;
  ExperimentConfig cell_config(std::size_t index, double acceleration) const;
};

/// Matrix file: name, base (config sections), accelerations, cells (name +
/// overrides mapping), pairs (list of two-name lists).
ExperimentMatrix parse_matrix(const std::string& yaml_text);
ExperimentMatrix load_matrix(const std::filesystem::path& path);

// Built-in ablation matrices.
ExperimentMatrix table3_matrix(const ExperimentConfig& base);  // MGDA / MRF toggles
ExperimentMatrix table4_matrix(const ExperimentConfig& base);  // FOGP vs SOGP
ExperimentMatrix table5_matrix(const ExperimentConfig& base);  // CNN / Transformer / hybrid

struct SplitInputs {
  std::vector<NetInput> train, val, test;
};

/// Supplies measured data for a cell configuration (acceleration is already
/// written into config.data.acceleration).
using DataProvider = std::function<SplitInputs(const ExperimentConfig& config)>;

/// Measured inputs for one split of config.data.manifest. Records are
/// re-masked (per data.* mask settings) when data.acceleration differs from
/// the prepared acceleration.
std::vector<NetInput> load_inputs(const ExperimentConfig& config, Split split);
SplitInputs load_split_inputs(const ExperimentConfig& config);

struct CellResult {
  std::string cell;
  double acceleration = 0.0;
  bool failed = false;
  std::string error;
  std::string config_hash;
  RunRecord run;
  Evaluation evaluation;
};

struct PairTest {
  std::string reference, other;
  double acceleration = 0.0;
  std::string metric;  // psnr | ssim | nmse
  bool valid = false;
  std::string error;
  TTestResult result;
};

struct MatrixResult {
  std::string matrix;
  std::vector<CellResult> cells;
  std::vector<PairTest> tests;

  const CellResult* find(const std::string& cell, double acceleration) const;
  /// One row per cell and acceleration.
  std::string results_csv() const;
  std::string tests_csv() const;
  /// Cells as rows, (PSNR, SSIM, NMSE) column groups per acceleration.
  std::string text_table() const;
};

struct MatrixOptions {
  std::filesystem::path out_root;  // empty: nothing written; else runs/<matrix>/<cell>/
  std::function<void(const std::string&)> log;
};

MatrixResult run_matrix(const ExperimentMatrix& matrix, const DataProvider& data, const MatrixOptions& options = {});

}  // namespace cine
