#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cine/metrics.hpp"
#include "cine/types.hpp"

namespace cine::plot {

using Rgb = std::array<std::uint8_t, 3>;

class Canvas {
 public:
  Canvas(int width, int height, Rgb background = {255, 255, 255});
  int width() const { return w_; }
  int height() const { return h_; }
  void set(int x, int y, Rgb c);
  Rgb get(int x, int y) const;
  void fill_rect(int x0, int y0, int x1, int y1, Rgb c);
  void hline(int x0, int x1, int y, Rgb c);
  void vline(int x, int y0, int y1, Rgb c);
  const std::vector<std::uint8_t>& pixels() const { return rgb_; }

 private:
  int w_, h_;
  std::vector<std::uint8_t> rgb_;
};

/// 8-bit RGB PNG, no interlace.
void write_png(const std::filesystem::path& path, const Canvas& canvas);

/// Tukey box: linear-interpolated quartiles, whiskers at the most extreme
/// values within 1.5 IQR of the box.
struct BoxStats {
  double q1 = 0, median = 0, q3 = 0, whisker_low = 0, whisker_high = 0;
  std::vector<double> outliers;
};
BoxStats box_stats(std::vector<double> values);
double quantile(std::vector<double> sorted, double q);

enum class Colormap { gray, hot };
Colormap colormap_from_string(const std::string& s);
Rgb map_color(Colormap map, double t);

struct MethodMetrics {
  std::string method;
  double acceleration = 0.0;
  std::vector<MetricsRecord> records;
};

struct PlotStyle {
  int panel_width = 480;
  int panel_height = 320;
  int scale = 4;  // pixels per image pixel in error maps
  Colormap colormap = Colormap::hot;
};

/// One PNG per metric and acceleration (boxplot_<metric>_x<acc>.png), each
/// with a JSON sidecar holding the plotted statistics. Returns the written
/// image paths.
std::vector<std::filesystem::path> boxplots(const std::vector<MethodMetrics>& results, const std::filesystem::path& out_dir,
                                            const PlotStyle& style = {});

struct ErrorMapInput {
  std::string method;
  RealImage reconstruction;
};

/// |reconstruction - truth| per method, drawn on one shared scale whose
/// maximum is the largest error over all methods; errormap_<method>.png plus
/// errormap.json.
std::vector<std::filesystem::path> error_maps(const RealImage& truth, const std::vector<ErrorMapInput>& methods,
                                              const std::filesystem::path& out_dir, const PlotStyle& style = {});

}  // namespace cine::plot
