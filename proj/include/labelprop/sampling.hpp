#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "labelprop/core.hpp"

namespace labelprop {

// True when (x, y) lies inside the closed pixel-center rectangle
// [0, w-1] x [0, h-1].
inline bool inside_grid(double x, double y, int width, int height) {
  return x >= 0.0 && y >= 0.0 && x <= width - 1.0 && y <= height - 1.0;
}

// Bilinear lookup with clamp-to-edge. Integer coordinates return the stored
// value exactly.
template <typename T>
double sample_bilinear(const Raster<T>& r, double x, double y) {
  x = std::clamp(x, 0.0, r.width - 1.0);
  y = std::clamp(y, 0.0, r.height - 1.0);
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, r.width - 1);
  const int y1 = std::min(y0 + 1, r.height - 1);
  const double ax = x - x0;
  const double ay = y - y0;
  if (ax == 0.0 && ay == 0.0) return static_cast<double>(r.at(x0, y0));
  const double top = (1.0 - ax) * r.at(x0, y0) + ax * r.at(x1, y0);
  const double bot = (1.0 - ax) * r.at(x0, y1) + ax * r.at(x1, y1);
  return (1.0 - ay) * top + ay * bot;
}

// Nearest pixel with ties rounded up (floor(x + 0.5)).
inline int round_half_up(double v) {
  return static_cast<int>(std::floor(v + 0.5));
}

inline std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable Gaussian blur with replicated borders.
inline GrayImage gaussian_blur(const GrayImage& in, double sigma) {
  if (sigma <= 0.0 || in.empty()) return in;
  const auto k = gaussian_kernel(sigma);
  const int radius = static_cast<int>(k.size() / 2);
  GrayImage tmp(in.width, in.height);
  GrayImage out(in.width, in.height);
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x) {
      double s = 0;
      for (int i = -radius; i <= radius; ++i)
        s += k[i + radius] * in.at(std::clamp(x + i, 0, in.width - 1), y);
      tmp.at(x, y) = static_cast<float>(s);
    }
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x) {
      double s = 0;
      for (int i = -radius; i <= radius; ++i)
        s += k[i + radius] * tmp.at(x, std::clamp(y + i, 0, in.height - 1));
      out.at(x, y) = static_cast<float>(s);
    }
  return out;
}

// Resamples to (w, h) treating pixels as unit cells (center alignment).
inline GrayImage resize_bilinear(const GrayImage& in, int w, int h) {
  GrayImage out(w, h);
  const double sx = static_cast<double>(in.width) / w;
  const double sy = static_cast<double>(in.height) / h;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out.at(x, y) = static_cast<float>(
          sample_bilinear(in, (x + 0.5) * sx - 0.5, (y + 0.5) * sy - 0.5));
  return out;
}

}  // namespace labelprop
