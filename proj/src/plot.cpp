#include "cine/plot.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <map>
#include <sstream>
#include <stdexcept>

namespace cine::plot {

namespace fs = std::filesystem;

Canvas::Canvas(int width, int height, Rgb background) : w_(width), h_(height) {
  if (width < 1 || height < 1) throw std::invalid_argument("Canvas: empty size");
  rgb_.resize(static_cast<std::size_t>(width) * height * 3);
  for (std::size_t i = 0; i < rgb_.size(); i += 3) std::copy(background.begin(), background.end(), rgb_.begin() + static_cast<long>(i));
}

void Canvas::set(int x, int y, Rgb c) {
  if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
  const auto i = (static_cast<std::size_t>(y) * w_ + x) * 3;
  std::copy(c.begin(), c.end(), rgb_.begin() + static_cast<long>(i));
}

Rgb Canvas::get(int x, int y) const {
  const auto i = (static_cast<std::size_t>(y) * w_ + x) * 3;
  return {rgb_[i], rgb_[i + 1], rgb_[i + 2]};
}

void Canvas::fill_rect(int x0, int y0, int x1, int y1, Rgb c) {
  for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y)
    for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) set(x, y, c);
}

void Canvas::hline(int x0, int x1, int y, Rgb c) { fill_rect(x0, y, x1, y, c); }
void Canvas::vline(int x, int y0, int y1, Rgb c) { fill_rect(x, y0, x, y1, c); }

namespace {

void put_u32(std::string& s, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) s.push_back(static_cast<char>((v >> shift) & 0xff));
}

void chunk(std::ofstream& out, const char* type, const std::string& data) {
  std::string buf;
  put_u32(buf, static_cast<std::uint32_t>(data.size()));
  buf.append(type, 4);
  buf += data;
  const auto crc = crc32(0, reinterpret_cast<const Bytef*>(buf.data() + 4), static_cast<uInt>(buf.size() - 4));
  put_u32(buf, static_cast<std::uint32_t>(crc));
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

}  // namespace

void write_png(const fs::path& path, const Canvas& canvas) {
  std::string raw;
  const int w = canvas.width(), h = canvas.height();
  raw.reserve(static_cast<std::size_t>(h) * (w * 3 + 1));
  for (int y = 0; y < h; ++y) {
    raw.push_back('\0');  // filter: none
    raw.append(reinterpret_cast<const char*>(canvas.pixels().data()) + static_cast<std::size_t>(y) * w * 3, static_cast<std::size_t>(w) * 3);
  }
  uLongf len = compressBound(static_cast<uLong>(raw.size()));
  std::string packed(len, '\0');
  if (compress2(reinterpret_cast<Bytef*>(packed.data()), &len, reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw std::runtime_error("write_png: compression failed");
  packed.resize(len);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_png: cannot open " + path.string());
  out.write("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(w));
  put_u32(ihdr, static_cast<std::uint32_t>(h));
  ihdr += std::string{8, 2, 0, 0, 0};  // depth 8, RGB
  chunk(out, "IHDR", ihdr);
  chunk(out, "IDAT", packed);
  chunk(out, "IEND", "");
}

double quantile(std::vector<double> sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile: empty input");
  std::sort(sorted.begin(), sorted.end());
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

BoxStats box_stats(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("box_stats: empty input");
  std::sort(values.begin(), values.end());
  BoxStats b;
  b.q1 = quantile(values, 0.25);
  b.median = quantile(values, 0.5);
  b.q3 = quantile(values, 0.75);
  const double iqr = b.q3 - b.q1;
  const double lo = b.q1 - 1.5 * iqr, hi = b.q3 + 1.5 * iqr;
  b.whisker_low = b.q1;
  b.whisker_high = b.q3;
  bool have_lo = false, have_hi = false;
  for (double v : values) {
    if (v < lo || v > hi) {
      b.outliers.push_back(v);
      continue;
    }
    if (!have_lo || v < b.whisker_low) b.whisker_low = v, have_lo = true;
    if (!have_hi || v > b.whisker_high) b.whisker_high = v, have_hi = true;
  }
  return b;
}

Colormap colormap_from_string(const std::string& s) {
  if (s == "gray") return Colormap::gray;
  if (s == "hot") return Colormap::hot;
  throw std::invalid_argument("unknown colormap '" + s + "' (expected gray|hot)");
}

Rgb map_color(Colormap map, double t) {
  t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0);
  auto byte = [](double v) { return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0))); };
  if (map == Colormap::gray) return {byte(t), byte(t), byte(t)};
  return {byte(3 * t), byte(3 * t - 1), byte(3 * t - 2)};
}

namespace {

std::string accel_tag(double a) {
  std::ostringstream os;
  os << "x" << a;
  return os.str();
}

double metric_of(const MetricsRecord& r, const std::string& m) { return m == "psnr" ? r.psnr_db : m == "ssim" ? r.ssim_pct : r.nmse; }

}  // namespace

std::vector<fs::path> boxplots(const std::vector<MethodMetrics>& results, const fs::path& out_dir, const PlotStyle& style) {
  if (results.empty()) throw std::invalid_argument("boxplot: no results");
  std::map<double, std::vector<const MethodMetrics*>> by_acc;
  for (const auto& r : results) {
    if (r.records.empty()) throw std::invalid_argument("boxplot: method '" + r.method + "' has no records");
    by_acc[r.acceleration].push_back(&r);
  }
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  const Rgb axis{0, 0, 0}, box{70, 110, 180}, med{200, 40, 40};
  for (const auto& [acc, methods] : by_acc)
    for (const std::string metric : {"psnr", "ssim", "nmse"}) {
      nlohmann::ordered_json side;
      side["metric"] = metric;
      side["acceleration"] = acc;
      side["methods"] = nlohmann::ordered_json::array();
      std::vector<BoxStats> stats;
      double lo = INFINITY, hi = -INFINITY;
      for (const auto* m : methods) {
        std::vector<double> v;
        for (const auto& r : m->records)
          if (!(metric == "psnr" && r.psnr_identical)) v.push_back(metric_of(r, metric));
        if (v.empty()) throw std::invalid_argument("boxplot: no finite " + metric + " values for '" + m->method + "'");
        stats.push_back(box_stats(v));
        for (double x : v) lo = std::min(lo, x), hi = std::max(hi, x);
        const auto& b = stats.back();
        side["methods"].push_back({{"name", m->method}, {"values", v}, {"q1", b.q1}, {"median", b.median}, {"q3", b.q3},
                                   {"whisker_low", b.whisker_low}, {"whisker_high", b.whisker_high}, {"outliers", b.outliers}});
      }
      if (hi - lo < 1e-12) hi = lo + 1.0, lo -= 1.0;
      const double pad = 0.05 * (hi - lo);
      lo -= pad, hi += pad;
      side["y_range"] = {lo, hi};

      const int W = style.panel_width, H = style.panel_height, margin = 30;
      Canvas c(W, H);
      c.vline(margin, margin, H - margin, axis);
      c.hline(margin, W - margin, H - margin, axis);
      auto y_of = [&](double v) { return static_cast<int>(std::lround(H - margin - (v - lo) / (hi - lo) * (H - 2 * margin))); };
      const int n = static_cast<int>(stats.size());
      const double slot = static_cast<double>(W - 2 * margin) / n;
      for (int i = 0; i < n; ++i) {
        const auto& b = stats[static_cast<std::size_t>(i)];
        const int cx = margin + static_cast<int>((i + 0.5) * slot), half = std::max(2, static_cast<int>(slot * 0.25));
        c.vline(cx, y_of(b.whisker_high), y_of(b.q3), axis);
        c.vline(cx, y_of(b.q1), y_of(b.whisker_low), axis);
        c.hline(cx - half / 2, cx + half / 2, y_of(b.whisker_high), axis);
        c.hline(cx - half / 2, cx + half / 2, y_of(b.whisker_low), axis);
        c.fill_rect(cx - half, y_of(b.q3), cx + half, y_of(b.q1), box);
        c.hline(cx - half, cx + half, y_of(b.median), med);
        for (double o : b.outliers) c.fill_rect(cx - 1, y_of(o) - 1, cx + 1, y_of(o) + 1, axis);
      }
      const std::string stem = "boxplot_" + metric + "_" + accel_tag(acc);
      write_png(out_dir / (stem + ".png"), c);
      std::ofstream(out_dir / (stem + ".json")) << side.dump(2) << "\n";
      written.push_back(out_dir / (stem + ".png"));
    }
  return written;
}

std::vector<fs::path> error_maps(const RealImage& truth, const std::vector<ErrorMapInput>& methods, const fs::path& out_dir,
                                 const PlotStyle& style) {
  if (methods.empty()) throw std::invalid_argument("errormap: no reconstructions");
  std::vector<RealImage> errors;
  double scale_max = 0.0;
  for (const auto& m : methods) {
    if (m.reconstruction.rows() != truth.rows() || m.reconstruction.cols() != truth.cols())
      throw std::invalid_argument("errormap: '" + m.method + "' does not match the reference size");
    errors.push_back((m.reconstruction - truth).cwiseAbs());
    scale_max = std::max(scale_max, errors.back().maxCoeff());
  }
  fs::create_directories(out_dir);
  nlohmann::ordered_json side;
  side["scale_max"] = scale_max;
  side["colormap"] = style.colormap == Colormap::gray ? "gray" : "hot";
  side["methods"] = nlohmann::ordered_json::array();
  std::vector<fs::path> written;
  const int s = std::max(1, style.scale);
  for (std::size_t i = 0; i < methods.size(); ++i) {
    const auto& e = errors[i];
    Canvas c(static_cast<int>(e.cols()) * s, static_cast<int>(e.rows()) * s);
    for (int y = 0; y < e.rows(); ++y)
      for (int x = 0; x < e.cols(); ++x) {
        const Rgb col = map_color(style.colormap, scale_max > 0 ? e(y, x) / scale_max : 0.0);
        c.fill_rect(x * s, y * s, x * s + s - 1, y * s + s - 1, col);
      }
    std::string name = methods[i].method;
    std::replace_if(name.begin(), name.end(), [](char ch) { return !std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_'; }, '_');
    const auto png = out_dir / ("errormap_" + name + ".png");
    write_png(png, c);
    written.push_back(png);
    side["methods"].push_back({{"name", methods[i].method}, {"file", png.filename().string()}, {"max_error", e.maxCoeff()}, {"mean_error", e.mean()}});
  }
  std::ofstream(out_dir / "errormap.json") << side.dump(2) << "\n";
  return written;
}

}  // namespace cine::plot
