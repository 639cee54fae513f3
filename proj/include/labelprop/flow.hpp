#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "labelprop/core.hpp"
#include "labelprop/sampling.hpp"

namespace labelprop {

enum class FlowMethod { kHornSchunck, kPyramidalLucasKanade };

inline std::string to_string(FlowMethod m) {
  return m == FlowMethod::kHornSchunck ? "horn_schunck" : "pyramidal_lk";
}

inline FlowMethod parse_flow_method(const std::string& s) {
  if (s == "horn_schunck" || s == "hs") return FlowMethod::kHornSchunck;
  if (s == "pyramidal_lk" || s == "lk") return FlowMethod::kPyramidalLucasKanade;
  throw ValidationError("unknown flow method '" + s + "'");
}

struct FlowParams {
  FlowMethod method = FlowMethod::kHornSchunck;
  double smoothness_alpha = 15.0;
  int iterations = 200;
  int pyramid_levels = 4;
  double pyramid_scale = 0.5;
  int window = 7;
  // Relinearizations per pyramid level.
  int warps = 3;
  // Charbonnier reweighting of the data and smoothness terms (IRLS) for
  // sharper motion boundaries; false gives the plain quadratic model.
  bool robust = true;
  double charbonnier_data = 4.0;     // intensity levels
  double charbonnier_smooth = 0.01;  // pixels
  // Image-driven smoothness: neighbour pairs differing by dI intensity
  // levels are coupled with weight 1 / (1 + (dI / edge_kappa)^2); 0 disables.
  double edge_kappa = 0.0;
  // Gaussian prefilter applied to both inputs before building the pyramid.
  double presmooth_sigma = 0.0;
  // Median filter applied to the field after every relinearization; 0 skips.
  int median_radius = 1;

  void validate() const {
    if (iterations < 1) throw ValidationError("iterations must be >= 1");
    if (pyramid_levels < 1) throw ValidationError("pyramid_levels must be >= 1");
    if (!(pyramid_scale > 0.0 && pyramid_scale < 1.0))
      throw ValidationError("pyramid_scale must be in (0, 1)");
    if (!(smoothness_alpha > 0.0))
      throw ValidationError("smoothness_alpha must be > 0");
    if (window < 1) throw ValidationError("window must be >= 1");
    if (warps < 1) throw ValidationError("warps must be >= 1");
    if (median_radius < 0) throw ValidationError("median_radius must be >= 0");
  }
};

struct ConsistencyParams {
  double alpha = 0.01;
  double beta = 0.5;
  double sigma = 1.0;

  void validate() const {
    if (!(alpha >= 0.0)) throw ValidationError("consistency alpha must be >= 0");
    if (!(beta >= 0.0)) throw ValidationError("consistency beta must be >= 0");
    if (!(sigma > 0.0)) throw ValidationError("consistency sigma must be > 0");
  }
};

struct FlowEstimate {
  FlowField flow;
  // Set when the input pair carries no gradient information.
  bool under_constrained = false;
};

namespace detail {

struct Gradients {
  GrayImage ix, iy;
};

// Central differences, replicated border.
inline Gradients gradients(const GrayImage& im) {
  Gradients g{GrayImage(im.width, im.height), GrayImage(im.width, im.height)};
  for (int y = 0; y < im.height; ++y)
    for (int x = 0; x < im.width; ++x) {
      const int xl = std::max(x - 1, 0), xr = std::min(x + 1, im.width - 1);
      const int yu = std::max(y - 1, 0), yd = std::min(y + 1, im.height - 1);
      g.ix.at(x, y) = (im.at(xr, y) - im.at(xl, y)) / float(std::max(1, xr - xl));
      g.iy.at(x, y) = (im.at(x, yd) - im.at(x, yu)) / float(std::max(1, yd - yu));
    }
  return g;
}

// Iw(q) = I(q + flow(q)); `inside` records whether the lookup stayed on the
// grid.
inline GrayImage warp_image(const GrayImage& im, const FlowField& f,
                            Raster<std::uint8_t>* inside = nullptr) {
  GrayImage out(im.width, im.height);
  if (inside) *inside = Raster<std::uint8_t>(im.width, im.height, 1);
  for (int y = 0; y < im.height; ++y)
    for (int x = 0; x < im.width; ++x) {
      const double sx = x + f.fx.at(x, y), sy = y + f.fy.at(x, y);
      out.at(x, y) = static_cast<float>(sample_bilinear(im, sx, sy));
      if (inside && !inside_grid(sx, sy, im.width, im.height))
        inside->at(x, y) = 0;
    }
  return out;
}

inline FlowField resize_flow(const FlowField& f, int w, int h) {
  FlowField out(w, h, f.direction);
  const double sx = static_cast<double>(f.width()) / w;
  const double sy = static_cast<double>(f.height()) / h;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double px = (x + 0.5) * sx - 0.5, py = (y + 0.5) * sy - 0.5;
      out.fx.at(x, y) = static_cast<float>(sample_bilinear(f.fx, px, py) / sx);
      out.fy.at(x, y) = static_cast<float>(sample_bilinear(f.fy, px, py) / sy);
    }
  return out;
}

inline Raster<float> median_filter(const Raster<float>& in, int radius) {
  Raster<float> out(in.width, in.height);
  std::vector<float> win;
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x) {
      win.clear();
      for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
          if (in.contains(x + dx, y + dy)) win.push_back(in.at(x + dx, y + dy));
      auto mid = win.begin() + win.size() / 2;
      std::nth_element(win.begin(), mid, win.end());
      out.at(x, y) = *mid;
    }
  return out;
}

struct Pyramid {
  std::vector<GrayImage> levels;  // [0] is full resolution
};

// Levels narrower than this alias typical textures badly enough for the
// coarse solve to lock onto a wrong displacement that finer levels cannot undo.
inline constexpr int kMinPyramidSide = 24;

inline Pyramid build_pyramid(const GrayImage& im, int levels, double scale) {
  Pyramid p;
  p.levels.push_back(im);
  const double sigma = 0.6 * std::sqrt(1.0 / (scale * scale) - 1.0);
  for (int l = 1; l < levels; ++l) {
    const GrayImage& prev = p.levels.back();
    const int w = static_cast<int>(std::lround(prev.width * scale));
    const int h = static_cast<int>(std::lround(prev.height * scale));
    if (w < kMinPyramidSide || h < kMinPyramidSide) break;
    p.levels.push_back(resize_bilinear(gaussian_blur(prev, sigma), w, h));
  }
  return p;
}

}  // namespace detail

// One linearization of the Horn-Schunck energy
//
//   E(u, v) = sum_p wd_p (Ix (u - u0) + Iy (v - v0) + It)^2
//           + alpha^2 sum_{p~q} ws_pq ((u_p - u_q)^2 + (v_p - v_q)^2)
//
// over 4-neighbour pairs. All weights start at 1 (the classic quadratic
// model); reweight() switches them to Charbonnier IRLS weights. Pixels with
// zero derivatives carry no data term.
class HornSchunckProblem {
 public:
  HornSchunckProblem(GrayImage ix, GrayImage iy, GrayImage it, FlowField base,
                     double alpha)
      : ix_(std::move(ix)),
        iy_(std::move(iy)),
        it_(std::move(it)),
        base_(std::move(base)),
        alpha2_(alpha * alpha),
        wd_(ix_.width, ix_.height, 1.f),
        wx_(ix_.width, ix_.height, 1.f),
        wy_(ix_.width, ix_.height, 1.f),
        gx_(wx_),
        gy_(wy_) {}

  // Scales smoothness across each neighbour pair by 1 / (1 + (dI / kappa)^2)
  // so the field may break along intensity edges of `image`.
  void set_edge_weights(const GrayImage& image, double kappa) {
    const int w = image.width, h = image.height;
    auto g = [kappa](double d) {
      return static_cast<float>(1.0 / (1.0 + (d * d) / (kappa * kappa)));
    };
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (x + 1 < w) gx_.at(x, y) = g(image.at(x + 1, y) - image.at(x, y));
        if (y + 1 < h) gy_.at(x, y) = g(image.at(x, y + 1) - image.at(x, y));
      }
    wx_ = gx_;
    wy_ = gy_;
  }

  double energy(const FlowField& f) const {
    double e = 0;
    const int w = f.width(), h = f.height();
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double r = residual(f, x, y);
        e += wd_.at(x, y) * r * r;
        if (x + 1 < w) {
          const double du = f.fx.at(x, y) - f.fx.at(x + 1, y);
          const double dv = f.fy.at(x, y) - f.fy.at(x + 1, y);
          e += alpha2_ * wx_.at(x, y) * (du * du + dv * dv);
        }
        if (y + 1 < h) {
          const double du = f.fx.at(x, y) - f.fx.at(x, y + 1);
          const double dv = f.fy.at(x, y) - f.fy.at(x, y + 1);
          e += alpha2_ * wy_.at(x, y) * (du * du + dv * dv);
        }
      }
    return e;
  }

  // One over-relaxed Gauss-Seidel sweep. Each pixel update is the exact
  // minimizer of E in (u_p, v_p) blended by omega; for 0 < omega < 2 the
  // energy cannot increase.
  void sweep(FlowField& f, double omega) const {
    const int w = f.width(), h = f.height();
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double su = 0, sv = 0, sw = 0;
        auto add = [&](int qx, int qy, double wt) {
          su += wt * f.fx.at(qx, qy);
          sv += wt * f.fy.at(qx, qy);
          sw += wt;
        };
        if (x > 0) add(x - 1, y, wx_.at(x - 1, y));
        if (x + 1 < w) add(x + 1, y, wx_.at(x, y));
        if (y > 0) add(x, y - 1, wy_.at(x, y - 1));
        if (y + 1 < h) add(x, y + 1, wy_.at(x, y));
        if (sw <= 0) continue;
        const double ubar = su / sw, vbar = sv / sw;
        const double gx = ix_.at(x, y), gy = iy_.at(x, y), wd = wd_.at(x, y);
        const double rbar = gx * (ubar - base_.fx.at(x, y)) +
                            gy * (vbar - base_.fy.at(x, y)) + it_.at(x, y);
        const double denom = alpha2_ * sw + wd * (gx * gx + gy * gy);
        const double u_star = ubar - wd * gx * rbar / denom;
        const double v_star = vbar - wd * gy * rbar / denom;
        float& u = f.fx.at(x, y);
        float& v = f.fy.at(x, y);
        u = static_cast<float>(u + omega * (u_star - u));
        v = static_cast<float>(v + omega * (v_star - v));
      }
  }

  // Charbonnier weights psi'(s^2) = 1 / sqrt(1 + s^2 / eps^2) evaluated at f.
  void reweight(const FlowField& f, double eps_data, double eps_smooth) {
    const int w = f.width(), h = f.height();
    auto psi = [](double s2, double eps) {
      return static_cast<float>(1.0 / std::sqrt(1.0 + s2 / (eps * eps)));
    };
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double r = residual(f, x, y);
        wd_.at(x, y) = psi(r * r, eps_data);
        if (x + 1 < w) {
          const double du = f.fx.at(x, y) - f.fx.at(x + 1, y);
          const double dv = f.fy.at(x, y) - f.fy.at(x + 1, y);
          wx_.at(x, y) = gx_.at(x, y) * psi(du * du + dv * dv, eps_smooth);
        }
        if (y + 1 < h) {
          const double du = f.fx.at(x, y) - f.fx.at(x, y + 1);
          const double dv = f.fy.at(x, y) - f.fy.at(x, y + 1);
          wy_.at(x, y) = gy_.at(x, y) * psi(du * du + dv * dv, eps_smooth);
        }
      }
  }

  const FlowField& base() const { return base_; }

 private:
  double residual(const FlowField& f, int x, int y) const {
    return ix_.at(x, y) * (f.fx.at(x, y) - base_.fx.at(x, y)) +
           iy_.at(x, y) * (f.fy.at(x, y) - base_.fy.at(x, y)) + it_.at(x, y);
  }

  GrayImage ix_, iy_, it_;
  FlowField base_;
  double alpha2_;
  Raster<float> wd_, wx_, wy_;
  Raster<float> gx_, gy_;  // image-edge factors of the smoothness weights
};

inline constexpr double kSorRelaxation = 1.8;
inline constexpr int kReweightPeriod = 20;

// Linearizes I_b around `base` relative to I_a. Data terms whose lookup
// leaves the grid are dropped.
inline HornSchunckProblem linearize_horn_schunck(const GrayImage& a,
                                                 const GrayImage& b,
                                                 const FlowField& base,
                                                 double alpha) {
  Raster<std::uint8_t> inside;
  const GrayImage warped = detail::warp_image(b, base, &inside);
  const auto ga = detail::gradients(a);
  const auto gw = detail::gradients(warped);
  GrayImage ix(a.width, a.height), iy(a.width, a.height), it(a.width, a.height);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!inside.data[i]) continue;
    ix.data[i] = 0.5f * (ga.ix.data[i] + gw.ix.data[i]);
    iy.data[i] = 0.5f * (ga.iy.data[i] + gw.iy.data[i]);
    it.data[i] = warped.data[i] - a.data[i];
  }
  return HornSchunckProblem(std::move(ix), std::move(iy), std::move(it), base,
                            alpha);
}

namespace detail {

inline void horn_schunck_level(const GrayImage& a, const GrayImage& b,
                               FlowField& flow, const FlowParams& p) {
  for (int w = 0; w < p.warps; ++w) {
    auto problem = linearize_horn_schunck(a, b, flow, p.smoothness_alpha);
    if (p.edge_kappa > 0) problem.set_edge_weights(a, p.edge_kappa);
    for (int i = 0; i < p.iterations; ++i) {
      if (p.robust && i % kReweightPeriod == 0 && (i > 0 || w > 0))
        problem.reweight(flow, p.charbonnier_data, p.charbonnier_smooth);
      problem.sweep(flow, kSorRelaxation);
    }
    if (p.median_radius > 0) {
      flow.fx = median_filter(flow.fx, p.median_radius);
      flow.fy = median_filter(flow.fy, p.median_radius);
    }
  }
}

// Dense Lucas-Kanade: every pixel solves its own (2r+1)^2-window least
// squares problem, resampling the second image at that pixel's displacement.
// The normal matrix uses the first image's gradients, so it is fixed per pixel.
inline void lucas_kanade_level(const GrayImage& a, const GrayImage& b,
                               FlowField& flow, const FlowParams& p) {
  const int w = a.width, h = a.height, r = p.window;
  const auto ga = gradients(a);
  const int iters = std::min(p.iterations, 20);
  FlowField out = flow;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int x0 = std::max(x - r, 0), x1 = std::min(x + r, w - 1);
      const int y0 = std::max(y - r, 0), y1 = std::min(y + r, h - 1);
      double gxx = 0, gxy = 0, gyy = 0;
      for (int j = y0; j <= y1; ++j)
        for (int i = x0; i <= x1; ++i) {
          const double gx = ga.ix.at(i, j), gy = ga.iy.at(i, j);
          gxx += gx * gx;
          gxy += gx * gy;
          gyy += gy * gy;
        }
      const double det = gxx * gyy - gxy * gxy;
      const double tr = gxx + gyy;
      if (!(tr > 0) || det <= 1e-6 * tr * tr) continue;
      double u = flow.fx.at(x, y), v = flow.fy.at(x, y);
      for (int it = 0; it < iters; ++it) {
        double bx = 0, by = 0;
        for (int j = y0; j <= y1; ++j)
          for (int i = x0; i <= x1; ++i) {
            const double e = sample_bilinear(b, i + u, j + v) - a.at(i, j);
            bx += ga.ix.at(i, j) * e;
            by += ga.iy.at(i, j) * e;
          }
        const double du = -(gyy * bx - gxy * by) / det;
        const double dv = -(-gxy * bx + gxx * by) / det;
        u += du;
        v += dv;
        if (std::hypot(du, dv) < 1e-3) break;
      }
      out.fx.at(x, y) = static_cast<float>(u);
      out.fy.at(x, y) = static_cast<float>(v);
    }
  flow = std::move(out);
}

}  // namespace detail

// Coarse-to-fine estimate of the a -> b field.
inline FlowEstimate estimate_flow(const GrayImage& a, const GrayImage& b,
                                  const FlowParams& p,
                                  FlowDirection direction = {0, 1}) {
  p.validate();
  if (!a.same_shape(b)) throw ValidationError("flow input dimension mismatch");
  if (a.width < 8 || a.height < 8)
    throw ValidationError("flow input must be at least 8x8 pixels");

  FlowEstimate out;
  out.flow = FlowField(a.width, a.height, direction);
  auto [amin, amax] = std::minmax_element(a.data.begin(), a.data.end());
  auto [bmin, bmax] = std::minmax_element(b.data.begin(), b.data.end());
  if (*amax - *amin < 1e-6f && *bmax - *bmin < 1e-6f) {
    out.under_constrained = true;
    return out;
  }

  const auto pa = detail::build_pyramid(gaussian_blur(a, p.presmooth_sigma),
                                        p.pyramid_levels, p.pyramid_scale);
  const auto pb = detail::build_pyramid(gaussian_blur(b, p.presmooth_sigma),
                                        p.pyramid_levels, p.pyramid_scale);
  const int top = static_cast<int>(pa.levels.size()) - 1;
  FlowField flow(pa.levels[top].width, pa.levels[top].height, direction);
  for (int l = top; l >= 0; --l) {
    const GrayImage& la = pa.levels[l];
    const GrayImage& lb = pb.levels[l];
    if (flow.width() != la.width || flow.height() != la.height)
      flow = detail::resize_flow(flow, la.width, la.height);
    if (p.method == FlowMethod::kHornSchunck)
      detail::horn_schunck_level(la, lb, flow, p);
    else
      detail::lucas_kanade_level(la, lb, flow, p);
  }
  flow.direction = direction;
  out.flow = std::move(flow);
  return out;
}

struct ConsistencyResult {
  ConfidenceMap confidence;      // exp(-d^2 / sigma^2), 0 when out of view
  Raster<std::uint8_t> valid;    // hard forward-backward test
  Raster<float> discrepancy;     // d(q); NaN when out of view
};

// Per pixel q of frame a: d(q) = |F_ab(q) + F_ba(q + F_ab(q))| with F_ba
// sampled bilinearly.
inline ConsistencyResult forward_backward_confidence(const FlowField& f_ab,
                                                     const FlowField& f_ba,
                                                     const ConsistencyParams& p) {
  p.validate();
  if (!f_ab.fx.same_shape(f_ba.fx))
    throw ValidationError("forward/backward flow dimension mismatch");
  if (f_ab.direction.source != f_ba.direction.target ||
      f_ab.direction.target != f_ba.direction.source)
    throw ValidationError("forward/backward flows are not mutual inverses");
  const int w = f_ab.width(), h = f_ab.height();
  ConsistencyResult r{ConfidenceMap(w, h, 0.f), Raster<std::uint8_t>(w, h, 0),
                      Raster<float>(w, h, std::numeric_limits<float>::quiet_NaN())};
  const double s2 = p.sigma * p.sigma;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double u = f_ab.fx.at(x, y), v = f_ab.fy.at(x, y);
      const double qx = x + u, qy = y + v;
      if (!inside_grid(qx, qy, w, h)) continue;
      const double bu = sample_bilinear(f_ba.fx, qx, qy);
      const double bv = sample_bilinear(f_ba.fy, qx, qy);
      const double dx = u + bu, dy = v + bv;
      const double d2 = dx * dx + dy * dy;
      r.discrepancy.at(x, y) = static_cast<float>(std::sqrt(d2));
      r.confidence.at(x, y) = static_cast<float>(std::exp(-d2 / s2));
      r.valid.at(x, y) =
          d2 <= p.alpha * (u * u + v * v + bu * bu + bv * bv) + p.beta;
    }
  return r;
}

struct ComposedFlow {
  FlowField flow;
  Raster<std::uint8_t> valid;  // 0 where the intermediate lookup was clamped
};

// F_ac(q) = F_ab(q) + F_bc(q + F_ab(q)).
inline ComposedFlow compose_flows(const FlowField& f_ab, const FlowField& f_bc) {
  if (!f_ab.fx.same_shape(f_bc.fx))
    throw ValidationError("composed flows have different dimensions");
  if (f_ab.direction.target != f_bc.direction.source)
    throw ValidationError("flows are not chainable: " +
                          std::to_string(f_ab.direction.target) +
                          " != " + std::to_string(f_bc.direction.source));
  const int w = f_ab.width(), h = f_ab.height();
  ComposedFlow out{FlowField(w, h, {f_ab.direction.source, f_bc.direction.target}),
                   Raster<std::uint8_t>(w, h, 1)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double u = f_ab.fx.at(x, y), v = f_ab.fy.at(x, y);
      const double qx = x + u, qy = y + v;
      if (!inside_grid(qx, qy, w, h)) out.valid.at(x, y) = 0;
      out.flow.fx.at(x, y) = static_cast<float>(u + sample_bilinear(f_bc.fx, qx, qy));
      out.flow.fy.at(x, y) = static_cast<float>(v + sample_bilinear(f_bc.fy, qx, qy));
    }
  return out;
}

// Fixed-point inversion G(q) = -F(q + G(q)), giving the b -> a field from an
// a -> b field.
inline FlowField invert_flow(const FlowField& f, int iterations = 20) {
  const int w = f.width(), h = f.height();
  FlowField g(w, h, {f.direction.target, f.direction.source});
  for (std::size_t i = 0; i < f.fx.size(); ++i) {
    g.fx.data[i] = -f.fx.data[i];
    g.fy.data[i] = -f.fy.data[i];
  }
  for (int it = 0; it < iterations; ++it) {
    FlowField next(w, h, g.direction);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double qx = x + g.fx.at(x, y), qy = y + g.fy.at(x, y);
        next.fx.at(x, y) = static_cast<float>(-sample_bilinear(f.fx, qx, qy));
        next.fy.at(x, y) = static_cast<float>(-sample_bilinear(f.fy, qx, qy));
      }
    g = std::move(next);
  }
  return g;
}

// Mean endpoint error over pixels at least `margin` from every border.
inline double interior_epe(const FlowField& est, const FlowField& truth,
                           int margin) {
  double s = 0;
  int n = 0;
  for (int y = margin; y < est.height() - margin; ++y)
    for (int x = margin; x < est.width() - margin; ++x) {
      s += std::hypot(est.fx.at(x, y) - truth.fx.at(x, y),
                      est.fy.at(x, y) - truth.fy.at(x, y));
      ++n;
    }
  return n ? s / n : 0.0;
}

}  // namespace labelprop
