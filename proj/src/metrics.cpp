#include "cine/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace cine {

namespace {

void require_same_shape(const RealSequence& ref, const RealSequence& test, const char* what) {
  if (ref.size() != test.size() || ref.empty())
    throw std::invalid_argument(std::string(what) + ": sequences differ in frame count or are empty");
  for (std::size_t t = 0; t < ref.size(); ++t)
    if (ref[t].rows() != test[t].rows() || ref[t].cols() != test[t].cols())
      throw std::invalid_argument(std::string(what) + ": frame shapes differ");
}

Eigen::VectorXd gaussian_window(int size, double sigma) {
  Eigen::VectorXd g(size);
  const double center = (size - 1) / 2.0;
  for (int i = 0; i < size; ++i) g(i) = std::exp(-(i - center) * (i - center) / (2.0 * sigma * sigma));
  return g / g.sum();
}

// Separable "valid" filtering with a symmetric kernel.
RealImage filter_valid(const RealImage& img, const Eigen::VectorXd& k) {
  const Eigen::Index n = k.size();
  const Eigen::Index rows = img.rows() - n + 1;
  const Eigen::Index cols = img.cols() - n + 1;
  RealImage tmp = RealImage::Zero(rows, img.cols());
  for (Eigen::Index i = 0; i < n; ++i) tmp += k(i) * img.middleRows(i, rows);
  RealImage out = RealImage::Zero(rows, cols);
  for (Eigen::Index i = 0; i < n; ++i) out += k(i) * tmp.middleCols(i, cols);
  return out;
}

}  // namespace

Psnr psnr(const RealSequence& ref, const RealSequence& test, double data_range) {
  require_same_shape(ref, test, "psnr");
  if (!(data_range > 0)) throw std::invalid_argument("psnr: data_range must be positive");
  double sse = 0.0;
  double count = 0.0;
  for (std::size_t t = 0; t < ref.size(); ++t) {
    sse += (test[t] - ref[t]).squaredNorm();
    count += static_cast<double>(ref[t].size());
  }
  if (sse == 0.0) return {0.0, true};
  return {10.0 * std::log10(data_range * data_range / (sse / count)), false};
}

double nmse(const RealSequence& ref, const RealSequence& test) {
  require_same_shape(ref, test, "nmse");
  double err = 0.0;
  double energy = 0.0;
  for (std::size_t t = 0; t < ref.size(); ++t) {
    err += (test[t] - ref[t]).squaredNorm();
    energy += ref[t].squaredNorm();
  }
  if (energy == 0.0) throw std::invalid_argument("nmse: reference is all zero");
  return err / energy;
}

double ssim(const RealImage& ref, const RealImage& test, double data_range) {
  constexpr int kWindow = 11;
  constexpr double kSigma = 1.5;
  if (ref.rows() != test.rows() || ref.cols() != test.cols()) throw std::invalid_argument("ssim: frame shapes differ");
  if (ref.rows() < kWindow || ref.cols() < kWindow) throw std::invalid_argument("ssim: image smaller than the 11x11 window");
  if (!(data_range > 0)) throw std::invalid_argument("ssim: data_range must be positive");
  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);
  const Eigen::VectorXd g = gaussian_window(kWindow, kSigma);

  const RealImage mu_x = filter_valid(ref, g);
  const RealImage mu_y = filter_valid(test, g);
  const RealImage xx = filter_valid(ref.cwiseProduct(ref), g);
  const RealImage yy = filter_valid(test.cwiseProduct(test), g);
  const RealImage xy = filter_valid(ref.cwiseProduct(test), g);

  const auto mx = mu_x.array();
  const auto my = mu_y.array();
  const auto var_x = xx.array() - mx * mx;
  const auto var_y = yy.array() - my * my;
  const auto cov = xy.array() - mx * my;
  const auto map = ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (var_x + var_y + c2));
  return map.mean();
}

double ssim(const RealSequence& ref, const RealSequence& test, double data_range) {
  require_same_shape(ref, test, "ssim");
  double sum = 0.0;
  for (std::size_t t = 0; t < ref.size(); ++t) sum += ssim(ref[t], test[t], data_range);
  return sum / static_cast<double>(ref.size());
}

MetricsRecord compute_metrics(const std::string& id, const RealSequence& ref, const RealSequence& test, double data_range) {
  MetricsRecord r;
  r.sequence_id = id;
  const Psnr p = psnr(ref, test, data_range);
  r.psnr_db = p.db;
  r.psnr_identical = p.identical;
  r.ssim_pct = 100.0 * ssim(ref, test, data_range);
  r.nmse = nmse(ref, test);
  return r;
}

namespace {

MetricSummary summarize(const std::vector<double>& v) {
  MetricSummary s;
  s.count = static_cast<int>(v.size());
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

}  // namespace

AggregateReport aggregate(const std::vector<MetricsRecord>& records, bool reject_single) {
  if (records.empty()) throw std::invalid_argument("aggregate: no records");
  if (reject_single && records.size() == 1) throw std::invalid_argument("aggregate: std undefined for a single record");
  std::vector<double> p, s, n;
  AggregateReport rep;
  for (const auto& r : records) {
    if (r.psnr_identical)
      ++rep.psnr_identical;
    else
      p.push_back(r.psnr_db);
    s.push_back(r.ssim_pct);
    n.push_back(r.nmse);
  }
  rep.psnr = summarize(p);
  rep.ssim = summarize(s);
  rep.nmse = summarize(n);
  rep.count = static_cast<int>(records.size());
  return rep;
}

std::string format_psnr(const MetricsRecord& r) {
  if (r.psnr_identical) return "identical";
  std::ostringstream os;
  os << std::setprecision(17) << r.psnr_db;
  return os.str();
}

void write_metrics_csv(std::ostream& os, const std::vector<MetricsRecord>& records) {
  os << "sequence_id,psnr_db,ssim_pct,nmse\n";
  os << std::setprecision(17);
  for (const auto& r : records) os << r.sequence_id << ',' << format_psnr(r) << ',' << r.ssim_pct << ',' << r.nmse << '\n';
}

std::vector<MetricsRecord> read_metrics_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("sequence_id,psnr_db,ssim_pct,nmse", 0) != 0)
    throw std::runtime_error("metrics csv: missing header 'sequence_id,psnr_db,ssim_pct,nmse'");
  std::vector<MetricsRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, p, s, n;
    if (!std::getline(ss, id, ',') || !std::getline(ss, p, ',') || !std::getline(ss, s, ',') || !std::getline(ss, n, ','))
      throw std::runtime_error("metrics csv: malformed row '" + line + "'");
    MetricsRecord r;
    r.sequence_id = id;
    r.psnr_identical = p == "identical";
    r.psnr_db = r.psnr_identical ? 0.0 : std::stod(p);
    r.ssim_pct = std::stod(s);
    r.nmse = std::stod(n);
    out.push_back(r);
  }
  return out;
}

std::string metrics_json(const std::vector<MetricsRecord>& records, const AggregateReport& report) {
  using nlohmann::json;
  json rows = json::array();
  for (const auto& r : records) {
    json row = {{"sequence_id", r.sequence_id}, {"ssim_pct", r.ssim_pct}, {"nmse", r.nmse}};
    if (r.psnr_identical)
      row["psnr_db"] = "identical";
    else
      row["psnr_db"] = r.psnr_db;
    rows.push_back(row);
  }
  auto summary = [](const MetricSummary& s) { return json{{"mean", s.mean}, {"std", s.std}, {"count", s.count}}; };
  json j = {{"records", rows},
            {"aggregate",
             {{"psnr_db", summary(report.psnr)},
              {"ssim_pct", summary(report.ssim)},
              {"nmse", summary(report.nmse)},
              {"count", report.count},
              {"psnr_identical", report.psnr_identical}}}};
  return j.dump(2);
}

}  // namespace cine
