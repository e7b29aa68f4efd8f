// cinerecon: prepare | train | eval | ablate | plot
#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>

#include "cine/ablation.hpp"
#include "cine/config.hpp"
#include "cine/dataset.hpp"
#include "cine/nifti.hpp"
#include "cine/plot.hpp"
#include "cine/sequence_io.hpp"
#include "cine/training.hpp"

namespace fs = std::filesystem;
using namespace cine;

namespace {

constexpr const char* kDataRootEnv = "CINERECON_DATA_ROOT";

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void log_line(const std::string& s) { std::cerr << s << std::endl; }

std::vector<std::pair<std::string, std::string>> parse_sets(const std::vector<std::string>& sets) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + s + "'");
    out.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  return out;
}

// ---------------------------------------------------------------- prepare

struct PrepareArgs {
  std::string data_root;
  std::string out;
  std::uint64_t split_seed = 0;
  double acceleration = 4.0;
  std::uint64_t mask_seed = 0;
  std::uint64_t phase_seed = 0;
  int center_lines = 0;
  int height = 0, width = 0;
  double noise_sigma = 0.0;
  bool per_frame = false;
  int synthetic = 0;
  int synthetic_size = 64;
  int synthetic_frames = 8;
};

int run_prepare(const PrepareArgs& a) {
  fs::path root = a.data_root;
  if (a.synthetic > 0) {
    root = fs::path(a.out) / "synthetic_raw";
    write_synthetic_root(root, a.synthetic, 1, a.synthetic_frames, a.synthetic_size, a.synthetic_size, a.split_seed);
  }
  if (root.empty()) {
    const char* env = std::getenv(kDataRootEnv);
    if (!env) throw UsageError(std::string("no --data-root given and ") + kDataRootEnv + " is unset");
    root = env;
  }
  if (!fs::is_directory(root)) throw std::runtime_error("data root does not exist: " + root.string());

  SplitSpec split;
  split.seed = a.split_seed;
  IngestOptions opts;
  if (a.height > 0) opts.height = a.height;
  if (a.width > 0) opts.width = a.width;
  opts.phase_seed = a.phase_seed;
  const IngestedDataset ds = ingest_dataset(root, split, opts);

  const MaskSpec spec{a.acceleration, a.center_lines, a.mask_seed, a.noise_sigma, a.per_frame};
  Manifest manifest;
  manifest.acceleration = a.acceleration;
  manifest.split_seed = a.split_seed;
  manifest.mask_seed = a.mask_seed;
  const fs::path out = a.out;
  for (std::size_t i = 0; i < ds.sequences.size(); ++i) {
    const auto& seq = ds.sequences[i];
    const Split s = ds.splits[i];
    const auto seed = sequence_phase_seed(a.phase_seed, seq.subject_id, seq.slice_index);
    const SequenceRecord rec = make_record(seq, s, seed, spec);
    const fs::path rel = fs::path("sequences") / to_string(s) / (rec.id() + ".cseq");
    fs::create_directories(out / rel.parent_path());
    write_sequence(out / rel, rec);
    (s == Split::train ? manifest.train : s == Split::val ? manifest.val : manifest.test).push_back(rel.generic_string());
  }
  write_manifest(out / "manifest.json", manifest);
  std::cout << "prepared " << ds.sequences.size() << " sequences from " << ds.subjects.size() << " subjects (train "
            << manifest.train.size() << ", val " << manifest.val.size() << ", test " << manifest.test.size() << ") -> "
            << (out / "manifest.json").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------- train

int run_train(const std::string& config_path, const std::string& out, const std::vector<std::string>& sets) {
  const ExperimentConfig cfg = with_overrides(load_config(config_path), parse_sets(sets));
  const SplitInputs data = load_split_inputs(cfg);
  nn::CineReconNet model(cfg.net, cfg.train.seed);
  fs::create_directories(out);
  std::ofstream(fs::path(out) / "config.yaml") << to_yaml(cfg);
  TrainOptions opts;
  opts.config_hash = config_hash(cfg);
  opts.out_dir = out;
  opts.log = log_line;
  const RunRecord rec = train(model, data.train, data.val, cfg.train, opts);
  std::cout << "trained " << rec.steps << " steps; best validation loss " << rec.best_val_loss << " at epoch " << rec.best_epoch
            << "; checkpoint " << rec.best_checkpoint << "\n";
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint;
  std::string config;
  std::string split = "test";
  double acceleration = 0.0;
  std::string manifest;
  std::string out;
  std::string method = "model";
  bool save_reconstructions = false;
};

void write_sequence_nifti(const fs::path& path, const RealSequence& frames) {
  NiftiVolume v;
  const int H = static_cast<int>(frames.front().rows()), W = static_cast<int>(frames.front().cols());
  // NIfTI x runs along image rows, as in ingest_dataset.
  v.dims = {H, W, 1, static_cast<int>(frames.size())};
  for (const auto& f : frames)
    for (int y = 0; y < W; ++y)
      for (int x = 0; x < H; ++x) v.data.push_back(f(x, y));
  write_nifti(path, v);
}

int run_eval(const EvalArgs& a) {
  fs::path config_path = a.config;
  if (config_path.empty()) {
    if (a.checkpoint.empty()) throw UsageError("eval needs --checkpoint (or --method zero-filled with --config)");
    config_path = fs::path(a.checkpoint).parent_path() / "config.yaml";
  }
  ExperimentConfig cfg = load_config(config_path);
  if (!a.manifest.empty()) cfg.data.manifest = a.manifest;
  if (a.acceleration > 0) cfg.data.acceleration = a.acceleration;
  const Split split = split_from_string(a.split);
  const auto inputs = load_inputs(cfg, split);
  if (inputs.empty()) throw std::runtime_error("split '" + a.split + "' is empty");

  std::unique_ptr<nn::CineReconNet> model;
  Reconstructor recon;
  if (a.method == "model") {
    if (a.checkpoint.empty()) throw UsageError("--method model needs --checkpoint");
    model = std::make_unique<nn::CineReconNet>(cfg.net, cfg.train.seed);
    nn::restore(*model, nn::load_params(a.checkpoint));
    recon = [&](const NetInput& in) { return model->reconstruct(in); };
  } else if (a.method == "zero-filled") {
    recon = [](const NetInput& in) { return in.zero_filled; };
  } else {
    throw UsageError("unknown --method '" + a.method + "' (expected model|zero-filled)");
  }
  const Evaluation ev = evaluate(recon, inputs);
  const auto& r = ev.model_report;
  const auto& z = ev.baseline_report;
  std::cout << a.method << " x" << cfg.data.acceleration << " " << a.split << " (n=" << r.count << "): PSNR " << r.psnr.mean << " ± "
            << r.psnr.std << " dB, SSIM " << r.ssim.mean << " ± " << r.ssim.std << " %, NMSE " << r.nmse.mean << " ± " << r.nmse.std
            << "\n";
  std::cout << "zero-filled: PSNR " << z.psnr.mean << " ± " << z.psnr.std << " dB, SSIM " << z.ssim.mean << " %, NMSE " << z.nmse.mean
            << "\n";
  if (!a.out.empty()) {
    const fs::path out = a.out;
    fs::create_directories(out);
    std::ofstream m(out / "metrics.csv");
    write_metrics_csv(m, ev.model);
    std::ofstream zf(out / "zero_filled_metrics.csv");
    write_metrics_csv(zf, ev.baseline);
    std::ofstream(out / "report.json") << metrics_json(ev.model, ev.model_report) << "\n";
    std::ofstream(out / "zero_filled_report.json") << metrics_json(ev.baseline, ev.baseline_report) << "\n";
    if (a.save_reconstructions) {
      fs::create_directories(out / "reconstructions");
      for (const auto& in : inputs) {
        write_sequence_nifti(out / "reconstructions" / (in.id + "_recon.nii.gz"), recon(in));
        write_sequence_nifti(out / "reconstructions" / (in.id + "_truth.nii.gz"), in.target);
        write_sequence_nifti(out / "reconstructions" / (in.id + "_zero_filled.nii.gz"), in.zero_filled);
      }
    }
  }
  return 0;
}

// ---------------------------------------------------------------- ablate

int run_ablate(const std::string& matrix_path, int table, const std::string& config_path, const std::string& out) {
  ExperimentMatrix m;
  if (!matrix_path.empty()) {
    m = load_matrix(matrix_path);
  } else {
    if (config_path.empty()) throw UsageError("--table needs --config for the base configuration");
    const ExperimentConfig base = load_config(config_path);
    if (table == 3)
      m = table3_matrix(base);
    else if (table == 4)
      m = table4_matrix(base);
    else if (table == 5)
      m = table5_matrix(base);
    else
      throw UsageError("--table must be 3, 4 or 5");
  }
  MatrixOptions opts;
  opts.out_root = out;
  opts.log = log_line;
  const MatrixResult r = run_matrix(m, load_split_inputs, opts);
  std::cout << r.text_table();
  int failed = 0;
  for (const auto& c : r.cells) failed += c.failed;
  if (failed) std::cerr << failed << " cell(s) failed; see " << (fs::path(out) / m.name / "results.csv").string() << "\n";
  return failed == static_cast<int>(r.cells.size()) ? 2 : 0;
}

// ---------------------------------------------------------------- plot

double acceleration_from_path(const fs::path& p) {
  for (auto it = p.begin(); it != p.end(); ++it) {
    const std::string s = it->string();
    if (s.size() > 1 && s[0] == 'x') try {
        return std::stod(s.substr(1));
      } catch (...) {
      }
  }
  return 0.0;
}

std::vector<plot::MethodMetrics> collect_metrics(const std::vector<std::string>& results) {
  std::vector<plot::MethodMetrics> out;
  auto add_file = [&](const std::string& name, const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot open " + file.string());
    plot::MethodMetrics m;
    m.method = name;
    m.acceleration = acceleration_from_path(file);
    m.records = read_metrics_csv(in);
    out.push_back(std::move(m));
  };
  for (const auto& spec : results) {
    // name=path, a metrics CSV, or an ablation directory holding <cell>/x<acc>/metrics.csv
    std::string name;
    fs::path path = spec;
    if (const auto eq = spec.find('='); eq != std::string::npos) {
      name = spec.substr(0, eq);
      path = spec.substr(eq + 1);
    }
    if (fs::is_directory(path)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::recursive_directory_iterator(path))
        if (e.path().filename() == "metrics.csv") files.push_back(e.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) add_file(f.parent_path().parent_path().filename().string(), f);
    } else {
      add_file(name.empty() ? path.parent_path().filename().string() : name, path);
    }
  }
  return out;
}

RealImage frame_of(const fs::path& path, int frame) {
  const NiftiVolume v = read_nifti(path);
  if (frame < 0 || frame >= v.dims[3]) throw std::runtime_error("frame " + std::to_string(frame) + " out of range in " + path.string());
  RealImage img(v.dims[0], v.dims[1]);
  for (int y = 0; y < v.dims[1]; ++y)
    for (int x = 0; x < v.dims[0]; ++x) img(x, y) = v.at(x, y, 0, frame);
  return img;
}

struct PlotArgs {
  std::vector<std::string> results;
  std::string kind;
  std::string out;
  std::string truth;
  int frame = 0;
  std::string colormap = "hot";
  int scale = 4;
};

int run_plot(const PlotArgs& a) {
  plot::PlotStyle style;
  style.colormap = plot::colormap_from_string(a.colormap);
  style.scale = a.scale;
  std::vector<fs::path> written;
  if (a.kind == "boxplot") {
    const auto metrics = collect_metrics(a.results);
    std::size_t n = 0;
    for (const auto& m : metrics) n += m.records.size();
    if (metrics.empty() || n == 0) throw std::runtime_error("no results to plot");
    written = plot::boxplots(metrics, a.out, style);
  } else {
    if (a.truth.empty()) throw UsageError("errormap needs --truth");
    std::vector<plot::ErrorMapInput> methods;
    for (const auto& spec : a.results) {
      const auto eq = spec.find('=');
      const std::string name = eq == std::string::npos ? fs::path(spec).stem().stem().string() : spec.substr(0, eq);
      methods.push_back({name, frame_of(eq == std::string::npos ? spec : spec.substr(eq + 1), a.frame)});
    }
    if (methods.empty()) throw std::runtime_error("no reconstructions to plot");
    written = plot::error_maps(frame_of(a.truth, a.frame), methods, a.out, style);
  }
  for (const auto& p : written) std::cout << p.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cardiac cine MRI reconstruction: data preparation, training, evaluation, ablations and figures."};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  PrepareArgs pa;
  auto* prepare = app.add_subcommand("prepare", "Ingest a dataset, draw masks and phase, write sequences and a split manifest");
  prepare->add_option("--data-root", pa.data_root, std::string("Dataset root (default: $") + kDataRootEnv + ")");
  prepare->add_option("--out", pa.out, "Output directory")->required();
  prepare->add_option("--split-seed", pa.split_seed, "Seed of the subject split")->capture_default_str();
  prepare->add_option("--acceleration", pa.acceleration, "Undersampling factor")->capture_default_str();
  prepare->add_option("--mask-seed", pa.mask_seed, "Base seed of the sampling masks")->capture_default_str();
  prepare->add_option("--phase-seed", pa.phase_seed, "Base seed of the synthetic phase")->capture_default_str();
  prepare->add_option("--center-lines", pa.center_lines, "Always-sampled central lines (0: default)")->capture_default_str();
  prepare->add_option("--height", pa.height, "Crop/pad frames to this height (0: native)")->capture_default_str();
  prepare->add_option("--width", pa.width, "Crop/pad frames to this width (0: native)")->capture_default_str();
  prepare->add_option("--noise-sigma", pa.noise_sigma, "Complex k-space noise std")->capture_default_str();
  prepare->add_flag("--per-frame-masks", pa.per_frame, "Draw an independent mask for every frame");
  prepare->add_option("--synthetic", pa.synthetic, "Generate this many synthetic subjects instead of reading --data-root");
  prepare->add_option("--synthetic-size", pa.synthetic_size, "Synthetic frame size")->capture_default_str();
  prepare->add_option("--synthetic-frames", pa.synthetic_frames, "Synthetic frames per sequence")->capture_default_str();

  std::string train_config, train_out;
  std::vector<std::string> train_sets;
  auto* trainc = app.add_subcommand("train", "Train the network from a config file");
  trainc->add_option("--config", train_config, "Experiment config (YAML)")->required()->check(CLI::ExistingFile);
  trainc->add_option("--out", train_out, "Run directory")->required();
  trainc->add_option("--set", train_sets, "Override a config entry, key=value (repeatable)");

  EvalArgs ea;
  auto* evalc = app.add_subcommand("eval", "Evaluate a checkpoint (or the zero-filled baseline) on a split");
  evalc->add_option("--checkpoint", ea.checkpoint, "Parameter file written by train");
  evalc->add_option("--config", ea.config, "Config (default: config.yaml beside the checkpoint)");
  evalc->add_option("--split", ea.split, "train|val|test")->capture_default_str()->check(CLI::IsMember({"train", "val", "test"}));
  evalc->add_option("--acceleration", ea.acceleration, "Re-mask at this acceleration (default: config)");
  evalc->add_option("--manifest", ea.manifest, "Manifest overriding data.manifest");
  evalc->add_option("--method", ea.method, "model|zero-filled")->capture_default_str();
  evalc->add_option("--out", ea.out, "Write metrics CSV/JSON here");
  evalc->add_flag("--save-reconstructions", ea.save_reconstructions, "Also write NIfTI reconstructions under --out");

  std::string matrix_path, ablate_config, ablate_out = "runs";
  int table = 0;
  auto* ablate = app.add_subcommand("ablate", "Run an experiment matrix");
  ablate->add_option("--matrix", matrix_path, "Matrix file (YAML)")->check(CLI::ExistingFile);
  ablate->add_option("--table", table, "Built-in matrix: 3 (MGDA/MRF), 4 (FOGP/SOGP), 5 (MRF block types)");
  ablate->add_option("--config", ablate_config, "Base config for --table");
  ablate->add_option("--out", ablate_out, "Output root; cells go to <out>/<matrix>/<cell>/")->capture_default_str();

  PlotArgs pl;
  auto* plotc = app.add_subcommand("plot", "Write boxplots or error maps with JSON sidecars");
  plotc->add_option("--results", pl.results, "Metrics CSV / ablation dir (boxplot) or reconstruction NIfTI (errormap); name=path allowed")
      ->required();
  plotc->add_option("--kind", pl.kind, "boxplot|errormap")->required()->check(CLI::IsMember({"boxplot", "errormap"}));
  plotc->add_option("--out", pl.out, "Output directory")->required();
  plotc->add_option("--truth", pl.truth, "Ground-truth NIfTI (errormap)");
  plotc->add_option("--frame", pl.frame, "Frame index (errormap)")->capture_default_str();
  plotc->add_option("--colormap", pl.colormap, "gray|hot")->capture_default_str();
  plotc->add_option("--scale", pl.scale, "Pixels per image pixel (errormap)")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*prepare) return run_prepare(pa);
    if (*trainc) return run_train(train_config, train_out, train_sets);
    if (*evalc) return run_eval(ea);
    if (*ablate) {
      if (matrix_path.empty() == (table == 0)) throw UsageError("ablate needs exactly one of --matrix or --table");
      return run_ablate(matrix_path, table, ablate_config, ablate_out);
    }
    if (*plotc) return run_plot(pl);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
