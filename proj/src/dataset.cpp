#include "cine/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>
#include <stdexcept>

#include "cine/hash.hpp"
#include "cine/nifti.hpp"
#include "cine/random.hpp"

namespace cine {

namespace fs = std::filesystem;

const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + s + "' (expected train|val|test)");
}

std::vector<ComplexCineSequence> IngestedDataset::of(Split s) const {
  std::vector<ComplexCineSequence> out;
  for (std::size_t i = 0; i < sequences.size(); ++i)
    if (splits[i] == s) out.push_back(sequences[i]);
  return out;
}

std::map<std::string, Split> assign_splits(std::vector<std::string> subjects, const SplitSpec& spec) {
  std::sort(subjects.begin(), subjects.end());
  subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
  const int n = static_cast<int>(subjects.size());
  if (n < 3) throw std::invalid_argument("assign_splits: need at least 3 subjects so that no split is empty");
  const int total = spec.train_weight + spec.val_weight + spec.test_weight;
  if (spec.train_weight <= 0 || spec.val_weight <= 0 || spec.test_weight <= 0)
    throw std::invalid_argument("assign_splits: split weights must be positive");
  const int n_val = std::max(1, static_cast<int>(std::lround(static_cast<double>(n) * spec.val_weight / total)));
  const int n_test = std::max(1, static_cast<int>(std::lround(static_cast<double>(n) * spec.test_weight / total)));
  if (n - n_val - n_test < 1) throw std::invalid_argument("assign_splits: training split would be empty");

  Rng rng(spec.seed);
  for (int i = n - 1; i > 0; --i) std::swap(subjects[static_cast<std::size_t>(i)], subjects[rng.below(static_cast<std::uint64_t>(i) + 1)]);

  std::map<std::string, Split> out;
  for (int i = 0; i < n; ++i) {
    Split s = Split::train;
    if (i < n_test)
      s = Split::test;
    else if (i < n_test + n_val)
      s = Split::val;
    out[subjects[static_cast<std::size_t>(i)]] = s;
  }
  return out;
}

std::uint64_t sequence_phase_seed(std::uint64_t phase_seed, const std::string& subject, int slice) {
  return mix_seed(phase_seed, fnv1a(subject) + static_cast<std::uint64_t>(slice));
}

RealImage crop_or_pad(const RealImage& image, int height, int width) {
  RealImage out = RealImage::Zero(height, width);
  const int src_r0 = std::max(0, static_cast<int>(image.rows() - height) / 2);
  const int src_c0 = std::max(0, static_cast<int>(image.cols() - width) / 2);
  const int dst_r0 = std::max(0, height - static_cast<int>(image.rows())) / 2;
  const int dst_c0 = std::max(0, width - static_cast<int>(image.cols())) / 2;
  const int rows = std::min<int>(height, static_cast<int>(image.rows()));
  const int cols = std::min<int>(width, static_cast<int>(image.cols()));
  out.block(dst_r0, dst_c0, rows, cols) = image.block(src_r0, src_c0, rows, cols);
  return out;
}

namespace {

bool is_nifti(const fs::path& p) {
  const std::string name = p.filename().string();
  auto ends = [&](const std::string& suffix) {
    return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  return ends(".nii") || ends(".nii.gz");
}

std::string subject_of(const fs::path& p) {
  std::string name = p.filename().string();
  for (const std::string suffix : {".gz", ".nii"})
    if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
      name.erase(name.size() - suffix.size());
  if (name.size() > 3 && name.compare(name.size() - 3, 3, "_4d") == 0) name.erase(name.size() - 3);
  return name;
}

}  // namespace

IngestedDataset ingest_dataset(const fs::path& root, const SplitSpec& split, const IngestOptions& options) {
  if (!fs::is_directory(root)) throw std::invalid_argument("ingest_dataset: not a directory: " + root.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(root))
    if (entry.is_regular_file() && is_nifti(entry.path())) files.push_back(entry.path());
  // Prefer explicit 4D cine files when a subject directory also holds frame volumes.
  const bool has_4d = std::any_of(files.begin(), files.end(), [](const fs::path& p) {
    return p.filename().string().find("_4d.nii") != std::string::npos;
  });
  if (has_4d)
    files.erase(std::remove_if(files.begin(), files.end(),
                               [](const fs::path& p) { return p.filename().string().find("_4d.nii") == std::string::npos; }),
                files.end());
  std::sort(files.begin(), files.end());

  IngestedDataset out;
  struct Loaded {
    std::string subject;
    NiftiVolume volume;
  };
  std::vector<Loaded> volumes;
  for (const auto& f : files) {
    try {
      NiftiVolume v = read_nifti(f);
      if (v.dims[3] < 2) {
        out.warnings.push_back(f.string() + ": not a cine volume (fewer than 2 frames), skipped");
        continue;
      }
      volumes.push_back({subject_of(f), std::move(v)});
    } catch (const std::exception& e) {
      out.warnings.push_back(f.string() + ": " + e.what() + ", skipped");
    }
  }
  std::vector<std::string> subjects;
  for (const auto& v : volumes) subjects.push_back(v.subject);
  if (subjects.empty()) throw std::invalid_argument("ingest_dataset: no readable cine volumes under " + root.string());
  out.subjects = assign_splits(subjects, split);

  for (const auto& [subject, vol] : volumes) {
    const int h = vol.dims[0];
    const int w = vol.dims[1];
    for (int z = 0; z < vol.dims[2]; ++z) {
      RealSequence mags;
      for (int t = 0; t < vol.dims[3]; ++t) {
        RealImage frame(h, w);
        for (int y = 0; y < w; ++y)
          for (int x = 0; x < h; ++x) frame(x, y) = std::max(0.0, vol.at(x, y, z, t));
        if (options.height || options.width)
          frame = crop_or_pad(frame, options.height.value_or(h), options.width.value_or(w));
        mags.push_back(std::move(frame));
      }
      double peak = 0.0;
      for (const auto& m : mags) peak = std::max(peak, m.maxCoeff());
      if (!(peak > 0.0) || !std::isfinite(peak)) {
        out.warnings.push_back(subject + " slice " + std::to_string(z) + ": empty slice, skipped");
        continue;
      }
      for (auto& m : mags) m /= peak;
      const auto phase =
          synthesize_phase(static_cast<int>(mags[0].rows()), static_cast<int>(mags[0].cols()), sequence_phase_seed(options.phase_seed, subject, z));
      ComplexCineSequence seq = attach_phase(mags, phase);
      seq.subject_id = subject;
      seq.slice_index = z;
      seq.spacing = PixelSpacing{vol.spacing[0], vol.spacing[1], vol.spacing[2]};
      out.sequences.push_back(std::move(seq));
      out.splits.push_back(out.subjects.at(subject));
    }
  }
  for (const auto& w : out.warnings) std::cerr << "warning: " << w << '\n';
  return out;
}

namespace {

constexpr double kPi = std::numbers::pi;

/// Soft indicator of (value < 0) with a transition about one pixel wide.
double soft_inside(double signed_distance) { return 1.0 / (1.0 + std::exp(signed_distance / 0.35)); }

double ellipse_distance(double r, double c, double r0, double c0, double a, double b) {
  const double dr = (r - r0) / a;
  const double dc = (c - c0) / b;
  return (std::sqrt(dr * dr + dc * dc) - 1.0) * std::min(a, b);
}

}  // namespace

RealSequence synthetic_cine(int height, int width, int frames, std::uint64_t seed) {
  if (height < 16 || width < 16 || frames < 2) throw std::invalid_argument("synthetic_cine: need H, W >= 16 and T >= 2");
  Rng rng(seed);
  const double H = height;
  const double W = width;
  const double body_a = H * rng.uniform(0.36, 0.44);
  const double body_b = W * rng.uniform(0.34, 0.44);
  const double heart_r = H * rng.uniform(0.45, 0.52);
  const double heart_c = W * rng.uniform(0.42, 0.52);
  const double cavity = std::min(H, W) * rng.uniform(0.09, 0.12);
  const double wall = std::min(H, W) * rng.uniform(0.045, 0.06);
  const double squeeze = rng.uniform(0.2, 0.35);
  const double breath_amp = H * rng.uniform(0.03, 0.05);
  const double breath_phase = rng.uniform(0.0, 2.0 * kPi);
  const double cardiac_phase = rng.uniform(0.0, 2.0 * kPi);
  const double rv_angle = rng.uniform(-0.4, 0.4);

  struct Wave {
    double fr, fc, ph, amp;
  };
  std::vector<Wave> texture;
  for (int i = 0; i < 4; ++i) texture.push_back({rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0), rng.uniform(0.0, 2 * kPi), rng.uniform(0.02, 0.05)});
  struct Blob {
    double r, c, radius, value;
  };
  std::vector<Blob> vessels;
  for (int i = 0; i < 3; ++i)
    vessels.push_back({H * rng.uniform(0.3, 0.7), W * rng.uniform(0.25, 0.75), std::min(H, W) * rng.uniform(0.02, 0.04), rng.uniform(0.6, 1.0)});

  RealSequence out;
  for (int t = 0; t < frames; ++t) {
    const double cycle = 2.0 * kPi * t / frames;
    const double contraction = 0.5 * (1.0 - std::cos(cycle + cardiac_phase));
    const double drift = breath_amp * std::sin(cycle + breath_phase);
    const double r_cav = cavity * (1.0 - squeeze * contraction);
    const double r_wall = r_cav + wall * (1.0 + 0.4 * squeeze * contraction);
    RealImage img(height, width);
    for (int c = 0; c < width; ++c)
      for (int r = 0; r < height; ++r) {
        const double rr = r - drift;
        double tex = 0.0;
        for (const auto& w : texture) tex += w.amp * std::sin(2 * kPi * (w.fr * rr / H + w.fc * c / W) + w.ph);
        double v = (0.3 + tex) * soft_inside(ellipse_distance(rr, c, H / 2, W / 2, body_a, body_b));
        const double d = std::hypot(rr - heart_r, c - heart_c);
        const double myo = soft_inside(d - r_wall) * (1.0 - soft_inside(d - r_cav));
        v = v * (1.0 - myo) + 0.18 * myo;
        v = v * (1.0 - soft_inside(d - r_cav)) + 0.92 * soft_inside(d - r_cav);
        const double rv_r = heart_r + (r_wall + 0.6 * cavity) * std::sin(rv_angle);
        const double rv_c = heart_c - (r_wall + 0.6 * cavity) * std::cos(rv_angle);
        const double rv = soft_inside(ellipse_distance(rr, c, rv_r, rv_c, 0.9 * cavity * (1.0 - 0.5 * squeeze * contraction), 0.55 * cavity)) *
                          (1.0 - soft_inside(d - r_wall));
        v = v * (1.0 - rv) + 0.7 * rv;
        for (const auto& b : vessels) {
          const double inside = soft_inside(std::hypot(rr - b.r, c - b.c) - b.radius);
          v = v * (1.0 - inside) + b.value * inside;
        }
        img(r, c) = std::clamp(v, 0.0, 1.0);
      }
    out.push_back(std::move(img));
  }
  double peak = 0.0;
  for (const auto& f : out) peak = std::max(peak, f.maxCoeff());
  for (auto& f : out) f /= peak;
  return out;
}

ComplexCineSequence synthetic_sequence(int height, int width, int frames, std::uint64_t seed) {
  auto seq = attach_phase(synthetic_cine(height, width, frames, seed), synthesize_phase(height, width, mix_seed(seed, 7)));
  seq.subject_id = "synthetic" + std::to_string(seed);
  seq.normalize();
  return seq;
}

void write_synthetic_root(const fs::path& root, int subjects, int slices, int frames, int height, int width, std::uint64_t seed) {
  for (int s = 0; s < subjects; ++s) {
    char name[32];
    std::snprintf(name, sizeof(name), "patient%03d", s + 1);
    const fs::path dir = root / name;
    fs::create_directories(dir);
    NiftiVolume vol;
    vol.dims = {height, width, slices, frames};
    vol.spacing = {1.5, 1.5, 8.0, 1.0};
    vol.data.assign(static_cast<std::size_t>(height) * width * slices * frames, 0.0);
    for (int z = 0; z < slices; ++z) {
      const auto cine = synthetic_cine(height, width, frames, mix_seed(seed, static_cast<std::uint64_t>(s * 1000 + z)));
      for (int t = 0; t < frames; ++t)
        for (int y = 0; y < width; ++y)
          for (int x = 0; x < height; ++x)
            vol.data[static_cast<std::size_t>(((t * slices + z) * width + y)) * height + x] = 1000.0 * cine[static_cast<std::size_t>(t)](x, y);
    }
    write_nifti(dir / (std::string(name) + "_4d.nii.gz"), vol);
  }
}

}  // namespace cine
