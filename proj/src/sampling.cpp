#include "cine/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "cine/random.hpp"

namespace cine {

int SamplingMask::sampled_count() const {
  return static_cast<int>(std::count(lines.begin(), lines.end(), std::uint8_t{1}));
}

Eigen::MatrixXd SamplingMask::broadcast(int cols) const {
  Eigen::MatrixXd m(size(), cols);
  for (int r = 0; r < size(); ++r) m.row(r).setConstant(sampled(r) ? 1.0 : 0.0);
  return m;
}

int default_center_lines(int height, double acceleration) {
  if (acceleration <= 0) throw std::invalid_argument("default_center_lines: acceleration must be positive");
  return std::max(1, static_cast<int>(std::lround(height / (4.0 * acceleration))));
}

SamplingMask make_vd_mask(int height, double acceleration, int center_lines, std::uint64_t seed) {
  if (height <= 0) throw std::invalid_argument("make_vd_mask: height must be positive");
  if (!(acceleration >= 1.0)) throw std::invalid_argument("make_vd_mask: acceleration must be >= 1");
  if (center_lines < 0 || center_lines > height)
    throw std::invalid_argument("make_vd_mask: center_lines must lie in [0, H]");

  SamplingMask mask;
  mask.lines.assign(static_cast<std::size_t>(height), 0);
  mask.acceleration = acceleration;
  mask.center_lines = center_lines;
  mask.seed = seed;

  const int begin = mask.center_begin();
  for (int r = begin; r < begin + center_lines; ++r) mask.lines[static_cast<std::size_t>(r)] = 1;

  const int target = std::max(center_lines, static_cast<int>(std::lround(height / acceleration)));
  const int remaining = target - center_lines;
  if (remaining <= 0) return mask;

  // Weighted sampling without replacement (Efraimidis-Spirakis): keep the
  // lines with the largest log(u)/w keys.
  const double sigma = height / 6.0;
  const double center = height / 2;
  Rng rng(seed);
  std::vector<std::pair<double, int>> keys;
  keys.reserve(static_cast<std::size_t>(height));
  for (int r = 0; r < height; ++r) {
    const double u = rng.uniform();
    if (mask.sampled(r)) continue;
    const double d = r - center;
    const double log_weight = -d * d / (2.0 * sigma * sigma);
    const double key = std::log(std::max(u, 1e-300)) * std::exp(-log_weight);
    keys.emplace_back(key, r);
  }
  std::partial_sort(keys.begin(), keys.begin() + remaining, keys.end(),
                    [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
  for (int i = 0; i < remaining; ++i) mask.lines[static_cast<std::size_t>(keys[static_cast<std::size_t>(i)].second)] = 1;
  return mask;
}

}  // namespace cine
