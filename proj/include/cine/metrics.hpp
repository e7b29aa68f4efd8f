#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "cine/types.hpp"

namespace cine {

/// PSNR in dB. Identical inputs have no finite PSNR and are flagged instead.
struct Psnr {
  double db = 0.0;
  bool identical = false;
};

/// 10 log10(range^2 / MSE), MSE over all pixels of all frames.
Psnr psnr(const RealSequence& ref, const RealSequence& test, double data_range = 1.0);

/// ||test - ref||^2 / ||ref||^2 over the whole sequence.
double nmse(const RealSequence& ref, const RealSequence& test);

/// Mean SSIM of one frame: 11x11 Gaussian window (sigma 1.5) over valid
/// positions, C1 = (0.01 L)^2, C2 = (0.03 L)^2.
double ssim(const RealImage& ref, const RealImage& test, double data_range = 1.0);
/// Frame-averaged SSIM in [-1, 1].
double ssim(const RealSequence& ref, const RealSequence& test, double data_range = 1.0);

struct MetricsRecord {
  std::string sequence_id;
  double psnr_db = 0.0;
  bool psnr_identical = false;
  double ssim_pct = 0.0;
  double nmse = 0.0;
};

MetricsRecord compute_metrics(const std::string& id, const RealSequence& ref, const RealSequence& test, double data_range = 1.0);

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  ///< sample standard deviation (n - 1)
  int count = 0;
};

struct AggregateReport {
  MetricSummary psnr;
  MetricSummary ssim;
  MetricSummary nmse;
  int count = 0;
  /// Records whose PSNR was the "identical" sentinel; excluded from the PSNR summary.
  int psnr_identical = 0;
};

/// Mean and sample std per metric. A single record yields std 0 unless
/// `reject_single` is set.
AggregateReport aggregate(const std::vector<MetricsRecord>& records, bool reject_single = false);

/// Column names: sequence_id,psnr_db,ssim_pct,nmse
void write_metrics_csv(std::ostream& os, const std::vector<MetricsRecord>& records);
std::vector<MetricsRecord> read_metrics_csv(std::istream& is);
std::string metrics_json(const std::vector<MetricsRecord>& records, const AggregateReport& report);

std::string format_psnr(const MetricsRecord& r);

}  // namespace cine
