#include "cine/ablation.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace cine {

namespace {

std::string accel_label(double a) {
  std::ostringstream os;
  os << "x" << a;
  return os.str();
}

std::string fmt(double v, int precision) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

std::string fmt_sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(6) << v;
  return os.str();
}

}  // namespace

void ExperimentMatrix::validate() const {
  if (name.empty()) throw std::invalid_argument("matrix: missing name");
  if (cells.empty()) throw std::invalid_argument("matrix '" + name + "': no cells");
  if (accelerations.empty()) throw std::invalid_argument("matrix '" + name + "': no accelerations");
  std::set<std::string> names;
  for (const auto& c : cells) {
    if (c.name.empty()) throw std::invalid_argument("matrix '" + name + "': cell without a name");
    if (!names.insert(c.name).second) throw std::invalid_argument("matrix '" + name + "': duplicate cell name '" + c.name + "'");
    for (const auto& [key, value] : c.overrides)
      if (!schema_has_key(key)) throw ConfigError(key, "unknown configuration key in cell '" + c.name + "'");
  }
  for (const auto& [a, b] : pairs)
    if (!names.count(a) || !names.count(b))
      throw std::invalid_argument("matrix '" + name + "': pair (" + a + ", " + b + ") names an unknown cell");
  for (std::size_t i = 0; i < cells.size(); ++i)
    for (double acc : accelerations) (void)cell_config(i, acc);
}

ExperimentConfig ExperimentMatrix::cell_config(std::size_t index, double acceleration) const {
  ExperimentConfig c = with_overrides(base, cells.at(index).overrides);
  c.data.acceleration = acceleration;
  c.validate();
  return c;
}

ExperimentMatrix parse_matrix(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ConfigError("<yaml>", e.what());
  }
  if (!root.IsMap()) throw ConfigError("<root>", "matrix file must be a mapping");
  static const std::set<std::string> known{"name", "base", "accelerations", "cells", "pairs"};
  for (const auto& kv : root)
    if (!known.count(kv.first.as<std::string>())) throw ConfigError(kv.first.as<std::string>(), "unknown matrix key");
  ExperimentMatrix m;
  try {
    m.name = root["name"] ? root["name"].as<std::string>() : std::string();
    if (root["base"]) {
      YAML::Emitter e;
      e << root["base"];
      m.base = parse_config(e.c_str());
    }
    if (root["accelerations"]) m.accelerations = root["accelerations"].as<std::vector<double>>();
    for (const auto& c : root["cells"]) {
      MatrixCell cell;
      cell.name = c["name"].as<std::string>();
      if (c["overrides"])
        for (const auto& kv : c["overrides"]) {
          YAML::Emitter e;
          e << YAML::Flow << kv.second;
          cell.overrides.emplace_back(kv.first.as<std::string>(), e.c_str());
        }
      m.cells.push_back(std::move(cell));
    }
    for (const auto& p : root["pairs"]) {
      const auto v = p.as<std::vector<std::string>>();
      if (v.size() != 2) throw ConfigError("pairs", "each pair needs exactly two cell names");
      m.pairs.emplace_back(v[0], v[1]);
    }
  } catch (const YAML::Exception& e) {
    throw ConfigError("<matrix>", e.what());
  }
  m.validate();
  return m;
}

ExperimentMatrix load_matrix(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open matrix " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_matrix(ss.str());
}

ExperimentMatrix table3_matrix(const ExperimentConfig& base) {
  ExperimentMatrix m;
  m.name = "table3";
  m.base = base;
  m.cells = {{"MGDA", {{"mgda.enabled", "true"}, {"mrf.enabled", "false"}}},
             {"MRF", {{"mgda.enabled", "false"}, {"mrf.enabled", "true"}}},
             {"MGDA+MRF", {{"mgda.enabled", "true"}, {"mrf.enabled", "true"}}}};
  m.pairs = {{"MGDA+MRF", "MGDA"}, {"MGDA+MRF", "MRF"}};
  return m;
}

ExperimentMatrix table4_matrix(const ExperimentConfig& base) {
  ExperimentMatrix m;
  m.name = "table4";
  m.base = base;
  m.cells = {{"FOGP", {{"mgda.propagation", "FOGP"}}}, {"SOGP", {{"mgda.propagation", "SOGP"}}}};
  m.pairs = {{"SOGP", "FOGP"}};
  return m;
}

ExperimentMatrix table5_matrix(const ExperimentConfig& base) {
  ExperimentMatrix m;
  m.name = "table5";
  m.base = base;
  m.cells = {{"CNN", {{"mrf.block_type", "conv"}}}, {"Trans", {{"mrf.block_type", "attention"}}}, {"Hybrid", {{"mrf.block_type", "hybrid"}}}};
  m.pairs = {{"Hybrid", "CNN"}, {"Hybrid", "Trans"}};
  return m;
}

std::vector<NetInput> load_inputs(const ExperimentConfig& config, Split split) {
  if (config.data.manifest.empty()) throw ConfigError("data.manifest", "no prepared manifest configured");
  const Manifest manifest = read_manifest(config.data.manifest);
  const bool redraw = manifest.acceleration != config.data.acceleration;
  MaskSpec spec{config.data.acceleration, config.data.center_lines, config.data.mask_seed, config.data.noise_sigma,
                config.data.per_frame_masks};
  std::vector<NetInput> out;
  for (auto& r : load_split(config.data.manifest, split)) out.push_back(make_input(redraw ? remask(std::move(r), spec) : r));
  return out;
}

SplitInputs load_split_inputs(const ExperimentConfig& config) {
  return {load_inputs(config, Split::train), load_inputs(config, Split::val), load_inputs(config, Split::test)};
}

const CellResult* MatrixResult::find(const std::string& cell, double acceleration) const {
  for (const auto& c : cells)
    if (c.cell == cell && c.acceleration == acceleration) return &c;
  return nullptr;
}

std::string MatrixResult::results_csv() const {
  std::ostringstream os;
  os << "matrix,cell,acceleration,status,n,psnr_mean,psnr_std,ssim_mean,ssim_std,nmse_mean,nmse_std,"
        "zf_psnr_mean,zf_ssim_mean,zf_nmse_mean,steps,config_hash,error\n";
  for (const auto& c : cells) {
    os << matrix << ',' << c.cell << ',' << c.acceleration << ',' << (c.failed ? "failed" : "ok") << ',';
    if (c.failed) {
      os << ",,,,,,,,,,," << c.config_hash << ",\"" << c.error << "\"\n";
      continue;
    }
    const auto& r = c.evaluation.model_report;
    const auto& z = c.evaluation.baseline_report;
    os << r.count << ',' << fmt_sci(r.psnr.mean) << ',' << fmt_sci(r.psnr.std) << ',' << fmt_sci(r.ssim.mean) << ','
       << fmt_sci(r.ssim.std) << ',' << fmt_sci(r.nmse.mean) << ',' << fmt_sci(r.nmse.std) << ',' << fmt_sci(z.psnr.mean) << ','
       << fmt_sci(z.ssim.mean) << ',' << fmt_sci(z.nmse.mean) << ',' << c.run.steps << ',' << c.config_hash << ",\n";
  }
  return os.str();
}

std::string MatrixResult::tests_csv() const {
  std::ostringstream os;
  os << "matrix,reference,other,acceleration,metric,t,dof,p_value,status\n";
  for (const auto& t : tests) {
    os << matrix << ',' << t.reference << ',' << t.other << ',' << t.acceleration << ',' << t.metric << ',';
    if (t.valid)
      os << fmt_sci(t.result.t) << ',' << t.result.dof << ',' << fmt_sci(t.result.p_value) << ",ok\n";
    else
      os << ",,,\"" << t.error << "\"\n";
  }
  return os.str();
}

std::string MatrixResult::text_table() const {
  std::vector<double> accs;
  std::vector<std::string> names;
  for (const auto& c : cells) {
    if (std::find(accs.begin(), accs.end(), c.acceleration) == accs.end()) accs.push_back(c.acceleration);
    if (std::find(names.begin(), names.end(), c.cell) == names.end()) names.push_back(c.cell);
  }
  std::size_t w0 = 8;
  for (const auto& n : names) w0 = std::max(w0, n.size() + 2);
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(w0)) << matrix;
  for (double a : accs) os << std::setw(42) << (accel_label(a) + ": PSNR / SSIM / NMSE");
  os << "\n";
  for (const auto& n : names) {
    os << std::setw(static_cast<int>(w0)) << n;
    for (double a : accs) {
      const CellResult* c = find(n, a);
      std::string s = "-";
      if (c && c->failed)
        s = "failed";
      else if (c) {
        const auto& r = c->evaluation.model_report;
        s = fmt(r.psnr.mean, 2) + "±" + fmt(r.psnr.std, 2) + " / " + fmt(r.ssim.mean, 2) + " / " + fmt(r.nmse.mean, 4);
      }
      os << std::setw(42) << s;
    }
    os << "\n";
  }
  for (const auto& t : tests)
    if (t.valid && t.metric == "psnr")
      os << t.reference << " vs " << t.other << " " << accel_label(t.acceleration) << ": p = " << fmt_sci(t.result.p_value) << "\n";
  return os.str();
}

namespace {

std::vector<double> metric_values(const CellResult& c, const std::string& metric) {
  std::vector<double> v;
  for (const auto& r : c.evaluation.model) v.push_back(metric == "psnr" ? r.psnr_db : metric == "ssim" ? r.ssim_pct : r.nmse);
  return v;
}

}  // namespace

MatrixResult run_matrix(const ExperimentMatrix& matrix, const DataProvider& data, const MatrixOptions& options) {
  matrix.validate();
  auto log = [&](const std::string& s) {
    if (options.log) options.log(s);
  };
  MatrixResult result;
  result.matrix = matrix.name;
  for (double acc : matrix.accelerations) {
    for (std::size_t i = 0; i < matrix.cells.size(); ++i) {
      CellResult cr;
      cr.cell = matrix.cells[i].name;
      cr.acceleration = acc;
      try {
        const ExperimentConfig cfg = matrix.cell_config(i, acc);
        cr.config_hash = config_hash(cfg);
        std::filesystem::path dir;
        if (!options.out_root.empty()) {
          dir = options.out_root / matrix.name / cr.cell / accel_label(acc);
          std::filesystem::create_directories(dir);
          std::ofstream(dir / "config.yaml") << to_yaml(cfg);
        }
        log(matrix.name + "/" + cr.cell + " " + accel_label(acc) + ": training");
        const SplitInputs inputs = data(cfg);
        nn::CineReconNet model(cfg.net, cfg.train.seed);
        TrainOptions to;
        to.config_hash = cr.config_hash;
        to.out_dir = dir;
        cr.run = train(model, inputs.train, inputs.val, cfg.train, to);
        cr.evaluation = evaluate(model, inputs.test);
        if (!dir.empty()) {
          std::ofstream out(dir / "metrics.csv");
          write_metrics_csv(out, cr.evaluation.model);
          std::ofstream zf(dir / "zero_filled_metrics.csv");
          write_metrics_csv(zf, cr.evaluation.baseline);
        }
        log(matrix.name + "/" + cr.cell + " " + accel_label(acc) + ": PSNR " + fmt(cr.evaluation.model_report.psnr.mean, 3));
      } catch (const std::exception& e) {
        cr.failed = true;
        cr.error = e.what();
        log(matrix.name + "/" + cr.cell + " " + accel_label(acc) + ": failed: " + cr.error);
      }
      result.cells.push_back(std::move(cr));
    }
    for (const auto& [a, b] : matrix.pairs)
      for (const char* metric : {"psnr", "ssim", "nmse"}) {
        PairTest t;
        t.reference = a;
        t.other = b;
        t.acceleration = acc;
        t.metric = metric;
        const CellResult* ca = result.find(a, acc);
        const CellResult* cb = result.find(b, acc);
        try {
          if (!ca || !cb || ca->failed || cb->failed) throw std::runtime_error("cell failed");
          const auto va = metric_values(*ca, metric), vb = metric_values(*cb, metric);
          t.result = paired_ttest(va, vb);
          t.valid = true;
        } catch (const std::exception& e) {
          t.error = e.what();
        }
        result.tests.push_back(std::move(t));
      }
  }
  if (!options.out_root.empty()) {
    const auto dir = options.out_root / matrix.name;
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "results.csv") << result.results_csv();
    std::ofstream(dir / "tests.csv") << result.tests_csv();
    std::ofstream(dir / "table.txt") << result.text_table();
  }
  return result;
}

}  // namespace cine
