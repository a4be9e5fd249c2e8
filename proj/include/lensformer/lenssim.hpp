#pragma once
/*
 * Mock multi-band lens generator.
 *
 * Foreground: bulge (Sersic) + disc (exponential) galaxy. Background: an
 * elliptical Gaussian source seen through a singular isothermal sphere by
 * inverse ray shooting. Each band is the colour-scaled sum, blurred by a
 * Gaussian PSF, plus white Gaussian noise.
 *
 * Pixel values are surface brightness sampled at pixel centres, in flux
 * units per pixel. Angles are arcsec unless a name says otherwise.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "lensformer/errors.hpp"
#include "lensformer/init.hpp"
#include "lensformer/json_util.hpp"
#include "lensformer/stamp.hpp"

namespace lensformer {

/// Image plane sampling: S x S pixels centred on the optical axis.
struct PixelGrid {
  std::size_t size = 101;
  double pixel_scale = 0.2;  // arcsec / pixel

  /// Angular position of pixel (row, col) centre.
  double x(std::size_t col) const { return (static_cast<double>(col) - 0.5 * static_cast<double>(size - 1)) * pixel_scale; }
  double y(std::size_t row) const { return (static_cast<double>(row) - 0.5 * static_cast<double>(size - 1)) * pixel_scale; }
};

using Image = std::vector<double>;  // row-major S*S

struct SersicParams {
  double i0 = 1.0;            // central intensity, flux per pixel
  double n = 1.0;             // Sersic index
  double k = 1.0;             // I = i0 exp(-k (R/r_scale)^(1/n))
  double r_scale = 1.0;       // arcsec, along the major axis
  double axis_ratio = 1.0;    // minor/major
  double orientation = 0.0;   // radians, major axis from +x
  double cx = 0.0, cy = 0.0;  // centre offset
};

/// b_n so that r_scale is the half-light radius (Ciotti & Bertin series).
inline double sersic_b(double n) {
  return 2.0 * n - 1.0 / 3.0 + 4.0 / (405.0 * n) + 46.0 / (25515.0 * n * n) + 131.0 / (1148175.0 * n * n * n);
}

/// Elliptical radius in units of the major axis.
inline double elliptical_radius(double dx, double dy, double axis_ratio, double orientation) {
  const double c = std::cos(orientation), s = std::sin(orientation);
  const double u = dx * c + dy * s;
  const double v = -dx * s + dy * c;
  return std::sqrt(u * u + (v / axis_ratio) * (v / axis_ratio));
}

inline double sersic_intensity(const SersicParams& p, double radius) {
  return p.i0 * std::exp(-p.k * std::pow(radius / p.r_scale, 1.0 / p.n));
}

inline Image render_sersic(const SersicParams& p, const PixelGrid& g) {
  if (!(p.n > 0) || !(p.r_scale > 0) || !(p.axis_ratio > 0)) throw ContractError("render_sersic: n, r_scale and axis_ratio must be positive");
  Image img(g.size * g.size);
  for (std::size_t r = 0; r < g.size; ++r)
    for (std::size_t c = 0; c < g.size; ++c)
      img[r * g.size + c] = sersic_intensity(p, elliptical_radius(g.x(c) - p.cx, g.y(r) - p.cy, p.axis_ratio, p.orientation));
  return img;
}

/// Integral of the profile over the whole plane, in the same units as a
/// pixel sum: i0 * 2 pi q (r/pix)^2 n Gamma(2n) / k^(2n).
inline double sersic_total_flux(const SersicParams& p, double pixel_scale) {
  const double rs = p.r_scale / pixel_scale;
  return p.i0 * 2.0 * M_PI * p.axis_ratio * rs * rs * p.n * std::exp(std::lgamma(2.0 * p.n) - 2.0 * p.n * std::log(p.k));
}

/// log10(n_s) = 0.4 log10(max(B/T, 0.03)) + 0.1 x.
inline double sersic_index(double bulge_to_total, double x) {
  if (!(x >= -1.0 && x <= 1.0)) throw ContractError("sersic_index: x must lie in [-1,1], got " + std::to_string(x));
  if (!(bulge_to_total >= 0.0 && bulge_to_total <= 1.0)) throw ContractError("sersic_index: B/T must lie in [0,1]");
  return std::pow(10.0, 0.4 * std::log10(std::max(bulge_to_total, 0.03)) + 0.1 * x);
}

struct GalaxyParams {
  double flux = 1.0;            // total, flux units
  double bulge_to_total = 0.5;
  double sersic_x = 0.0;        // uniform draw in [-1,1] feeding sersic_index
  double bulge_radius = 0.5;    // half-light radius
  double bulge_axis_ratio = 1.0;
  double disc_scale = 1.0;      // exponential scale length
  double inclination_deg = 0.0;
  double orientation = 0.0;
  double cx = 0.0, cy = 0.0;
};

/// Bulge + disc with total flux `flux` split by B/T. The disc is an
/// exponential whose projected axis ratio is cos(inclination).
inline Image render_galaxy(const GalaxyParams& g, const PixelGrid& grid) {
  Image img(grid.size * grid.size, 0.0);
  const double bt = std::clamp(g.bulge_to_total, 0.0, 1.0);
  if (bt > 0) {
    SersicParams b;
    b.n = sersic_index(bt, g.sersic_x);
    b.k = sersic_b(b.n);
    b.r_scale = g.bulge_radius;
    b.axis_ratio = g.bulge_axis_ratio;
    b.orientation = g.orientation;
    b.cx = g.cx;
    b.cy = g.cy;
    b.i0 = bt * g.flux / sersic_total_flux(b, grid.pixel_scale);
    auto part = render_sersic(b, grid);
    for (std::size_t i = 0; i < img.size(); ++i) img[i] += part[i];
  }
  if (bt < 1) {
    SersicParams d;
    d.n = 1.0;
    d.k = 1.0;
    d.r_scale = g.disc_scale;
    d.axis_ratio = std::max(std::cos(g.inclination_deg * M_PI / 180.0), 0.1);
    d.orientation = g.orientation;
    d.cx = g.cx;
    d.cy = g.cy;
    d.i0 = (1.0 - bt) * g.flux / sersic_total_flux(d, grid.pixel_scale);
    auto part = render_sersic(d, grid);
    for (std::size_t i = 0; i < img.size(); ++i) img[i] += part[i];
  }
  return img;
}

struct SourceParams {
  double amplitude = 1.0;  // peak surface brightness, flux per pixel
  double sigma = 0.1;      // Gaussian width along the major axis
  double axis_ratio = 1.0;
  double orientation = 0.0;
  double bx = 0.0, by = 0.0;  // source-plane position relative to the lens
};

inline double source_brightness(const SourceParams& s, double bx, double by) {
  const double r = elliptical_radius(bx - s.bx, by - s.by, s.axis_ratio, s.orientation) / s.sigma;
  return s.amplitude * std::exp(-0.5 * r * r);
}

/// Unlensed flux of the source, as a pixel sum on an infinite grid.
inline double source_total_flux(const SourceParams& s, double pixel_scale) {
  const double sp = s.sigma / pixel_scale;
  return s.amplitude * 2.0 * M_PI * sp * sp * s.axis_ratio;
}

/// Inverse ray shooting through an SIS centred at (lx, ly):
/// beta = theta - theta_e * theta_hat. Each pixel averages a
/// supersample x supersample sub-grid.
inline Image render_lensed_source(const SourceParams& src, double theta_e, const PixelGrid& g, int supersample = 3,
                                  double lx = 0.0, double ly = 0.0) {
  if (theta_e < 0) throw ContractError("render_lensed_source: theta_e must be non-negative");
  if (supersample < 1) throw ContractError("render_lensed_source: supersample must be >= 1");
  Image img(g.size * g.size);
  const double step = g.pixel_scale / supersample;
  const double inv = 1.0 / (supersample * supersample);
  for (std::size_t r = 0; r < g.size; ++r)
    for (std::size_t c = 0; c < g.size; ++c) {
      double acc = 0.0;
      for (int sy = 0; sy < supersample; ++sy)
        for (int sx = 0; sx < supersample; ++sx) {
          const double tx = g.x(c) + (sx - 0.5 * (supersample - 1)) * step - lx;
          const double ty = g.y(r) + (sy - 0.5 * (supersample - 1)) * step - ly;
          const double rad = std::hypot(tx, ty);
          double bx = tx, by = ty;
          if (rad > 0) {
            bx -= theta_e * tx / rad;
            by -= theta_e * ty / rad;
          }
          acc += source_brightness(src, bx, by);
        }
      img[r * g.size + c] = acc * inv;
    }
  return img;
}

/// Normalised 1-D Gaussian taps, truncated at 4 sigma.
inline std::vector<double> gaussian_kernel(double fwhm_arcsec, double pixel_scale) {
  const double sigma = fwhm_arcsec / (2.0 * std::sqrt(2.0 * std::log(2.0))) / pixel_scale;
  if (!(sigma > 0)) return {1.0};
  const int half = std::max(1, static_cast<int>(std::ceil(4.0 * sigma)));
  std::vector<double> k(2 * half + 1);
  double sum = 0.0;
  for (int i = -half; i <= half; ++i) sum += k[i + half] = std::exp(-0.5 * (i * i) / (sigma * sigma));
  for (auto& v : k) v /= sum;
  return k;
}

/// Separable 'same'-size convolution with zero padding. Flux that spreads
/// past the border is lost.
inline Image convolve_separable(const Image& img, std::size_t size, const std::vector<double>& k) {
  const int half = static_cast<int>(k.size() / 2), s = static_cast<int>(size);
  Image tmp(img.size(), 0.0), out(img.size(), 0.0);
  for (int r = 0; r < s; ++r)
    for (int c = 0; c < s; ++c) {
      double acc = 0.0;
      for (int t = -half; t <= half; ++t) {
        const int cc = c + t;
        if (cc >= 0 && cc < s) acc += k[t + half] * img[r * s + cc];
      }
      tmp[r * s + c] = acc;
    }
  for (int r = 0; r < s; ++r)
    for (int c = 0; c < s; ++c) {
      double acc = 0.0;
      for (int t = -half; t <= half; ++t) {
        const int rr = r + t;
        if (rr >= 0 && rr < s) acc += k[t + half] * tmp[rr * s + c];
      }
      out[r * s + c] = acc;
    }
  return out;
}

inline double image_sum(const Image& img) { return std::accumulate(img.begin(), img.end(), 0.0); }

// ------------------------------------------------------------------ scenes

struct Range {
  double lo = 0.0, hi = 0.0;
};

inline void to_json(json& j, const Range& r) { j = json::array({r.lo, r.hi}); }

/// Knobs of the mock population. Per-band vectors have one entry per band.
struct SimConfig {
  std::size_t bands = 4;
  std::size_t size = 101;
  double pixel_scale = 0.2;
  std::vector<double> lens_colors{0.3, 0.6, 1.0, 1.3};    // u g r i multipliers
  std::vector<double> source_colors{1.2, 1.1, 1.0, 0.8};
  std::vector<double> psf_fwhm{1.0, 0.9, 0.7, 0.8};
  std::vector<double> noise_sigma{1.0, 1.0, 1.0, 1.0};
  Range theta_e{0.3, 10.08};
  Range flux_ratio{0.01, 0.5};      // log-uniform target for lenses
  Range lens_flux{2000.0, 6000.0};  // r-band total flux
  Range bulge_radius{0.3, 1.0};
  Range disc_scale{0.4, 1.2};
  Range source_sigma{0.1, 0.3};
  double source_offset = 0.6;       // source position within this fraction of theta_e
  double hard_negative_fraction = 0.5;
  double z_s_median = 1.81;
  int supersample = 3;

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("simulator: " + m); };
    if (bands == 0) fail("bands must be positive");
    if (size < 8) fail("size must be at least 8");
    if (!(pixel_scale > 0)) fail("pixel_scale must be positive");
    for (const auto* v : {&lens_colors, &source_colors, &psf_fwhm, &noise_sigma})
      if (v->size() != bands) fail("per-band lists need " + std::to_string(bands) + " entries");
    for (auto s : noise_sigma)
      if (s < 0) fail("noise_sigma must be non-negative");
    for (const auto& [name, r] : {std::pair{"theta_e", theta_e}, {"flux_ratio", flux_ratio}, {"lens_flux", lens_flux},
                                  {"bulge_radius", bulge_radius}, {"disc_scale", disc_scale}, {"source_sigma", source_sigma}})
      if (!(r.lo > 0) || r.hi < r.lo) fail(std::string(name) + " range must satisfy 0 < lo <= hi");
    if (flux_ratio.hi >= 1) fail("flux_ratio must stay below 1");
    if (!(source_offset >= 0)) fail("source_offset must be non-negative");
    if (hard_negative_fraction < 0 || hard_negative_fraction > 1) fail("hard_negative_fraction must lie in [0,1]");
    if (supersample < 1) fail("supersample must be >= 1");
  }

  /// Keeps only the r band (index 2 of u,g,r,i) for single-band mode.
  SimConfig single_band() const {
    SimConfig s = *this;
    if (bands == 1) return s;
    const std::size_t r = std::min<std::size_t>(2, bands - 1);
    s.bands = 1;
    s.lens_colors = {lens_colors[r]};
    s.source_colors = {source_colors[r]};
    s.psf_fwhm = {psf_fwhm[r]};
    s.noise_sigma = {noise_sigma[r]};
    return s;
  }
};

inline void to_json(json& j, const SimConfig& c) {
  j = json{{"bands", c.bands},
           {"size", c.size},
           {"pixel_scale", c.pixel_scale},
           {"lens_colors", c.lens_colors},
           {"source_colors", c.source_colors},
           {"psf_fwhm", c.psf_fwhm},
           {"noise_sigma", c.noise_sigma},
           {"theta_e", c.theta_e},
           {"flux_ratio", c.flux_ratio},
           {"lens_flux", c.lens_flux},
           {"bulge_radius", c.bulge_radius},
           {"disc_scale", c.disc_scale},
           {"source_sigma", c.source_sigma},
           {"source_offset", c.source_offset},
           {"hard_negative_fraction", c.hard_negative_fraction},
           {"z_s_median", c.z_s_median},
           {"supersample", c.supersample}};
}

inline SimConfig sim_config_from_json(const json& j, const std::string& path = "", SimConfig c = {}) {
  jsonutil::require_known_keys(j,
                               {"bands", "size", "pixel_scale", "lens_colors", "source_colors", "psf_fwhm", "noise_sigma",
                                "theta_e", "flux_ratio", "lens_flux", "bulge_radius", "disc_scale", "source_sigma",
                                "source_offset", "hard_negative_fraction", "z_s_median", "supersample"},
                               path);
  auto range = [&](const char* key, Range& r) {
    auto it = j.find(key);
    if (it == j.end()) return;
    if (!it->is_array() || it->size() != 2 || !(*it)[0].is_number() || !(*it)[1].is_number())
      throw ConfigError("config error at " + path + "/" + key + ": expected [lo, hi]");
    r = {(*it)[0].get<double>(), (*it)[1].get<double>()};
  };
  jsonutil::read(j, "bands", c.bands, path);
  jsonutil::read(j, "size", c.size, path);
  jsonutil::read(j, "pixel_scale", c.pixel_scale, path);
  jsonutil::read(j, "lens_colors", c.lens_colors, path);
  jsonutil::read(j, "source_colors", c.source_colors, path);
  jsonutil::read(j, "psf_fwhm", c.psf_fwhm, path);
  jsonutil::read(j, "noise_sigma", c.noise_sigma, path);
  range("theta_e", c.theta_e);
  range("flux_ratio", c.flux_ratio);
  range("lens_flux", c.lens_flux);
  range("bulge_radius", c.bulge_radius);
  range("disc_scale", c.disc_scale);
  range("source_sigma", c.source_sigma);
  jsonutil::read(j, "source_offset", c.source_offset, path);
  jsonutil::read(j, "hard_negative_fraction", c.hard_negative_fraction, path);
  jsonutil::read(j, "z_s_median", c.z_s_median, path);
  jsonutil::read(j, "supersample", c.supersample, path);
  return c;
}

/// Small stamps for quick experiments: 32x32, theta_e up to 2.4".
inline SimConfig desk_sim_config() {
  SimConfig c;
  c.size = 32;
  c.theta_e = {1.0, 2.4};
  c.lens_flux = {4000.0, 12000.0};
  c.flux_ratio = {0.1, 0.5};
  c.bulge_radius = {0.2, 0.6};
  c.disc_scale = {0.3, 0.8};
  return c;
}

struct MockScene {
  GalaxyParams lens;
  bool is_lens = false;
  double theta_e = 0.0;
  SourceParams source;        // amplitude fixed later to hit the flux-ratio target
  double target_flux_ratio = 0.0;
  double z_s = 0.0;
  bool has_companion = false;
  GalaxyParams companion;
  double companion_blend = 0.0;  // 0 = lens colours, 1 = source colours
};

namespace detail {
inline double uniform(std::mt19937_64& rng, const Range& r) { return std::uniform_real_distribution<double>(r.lo, r.hi)(rng); }
inline double log_uniform(std::mt19937_64& rng, const Range& r) { return std::exp(uniform(rng, {std::log(r.lo), std::log(r.hi)})); }
}  // namespace detail

inline MockScene sample_scene(const SimConfig& cfg, bool is_lens, std::mt19937_64& rng) {
  using detail::uniform;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  MockScene s;
  s.is_lens = is_lens;
  auto& g = s.lens;
  g.flux = uniform(rng, cfg.lens_flux);
  g.bulge_to_total = u01(rng);
  g.sersic_x = uniform(rng, {-1.0, 1.0});
  g.bulge_radius = uniform(rng, cfg.bulge_radius);
  g.bulge_axis_ratio = uniform(rng, {0.5, 1.0});
  g.disc_scale = uniform(rng, cfg.disc_scale);
  g.inclination_deg = uniform(rng, {0.0, 80.0});
  g.orientation = uniform(rng, {0.0, M_PI});
  g.cx = uniform(rng, {-0.5, 0.5}) * cfg.pixel_scale;
  g.cy = uniform(rng, {-0.5, 0.5}) * cfg.pixel_scale;

  // Drawn for every scene so lens and non-lens stamps consume the stream alike.
  const double theta_e = uniform(rng, cfg.theta_e);
  const double rad = cfg.source_offset * theta_e * std::sqrt(u01(rng));
  const double phi = uniform(rng, {0.0, 2.0 * M_PI});
  s.source.sigma = uniform(rng, cfg.source_sigma);
  s.source.axis_ratio = uniform(rng, {0.5, 1.0});
  s.source.orientation = uniform(rng, {0.0, M_PI});
  s.source.bx = g.cx + rad * std::cos(phi);
  s.source.by = g.cy + rad * std::sin(phi);
  const double target = detail::log_uniform(rng, cfg.flux_ratio);
  const double z = std::clamp(cfg.z_s_median * std::exp(0.35 * std::normal_distribution<double>(0.0, 1.0)(rng)), 0.3, 6.0);

  const bool companion = u01(rng) < cfg.hard_negative_fraction;
  GalaxyParams c;
  c.flux = g.flux * target / (1.0 - target);
  c.bulge_to_total = u01(rng);
  c.sersic_x = uniform(rng, {-1.0, 1.0});
  c.bulge_radius = uniform(rng, cfg.source_sigma);
  c.bulge_axis_ratio = uniform(rng, {0.5, 1.0});
  c.disc_scale = uniform(rng, cfg.source_sigma);
  c.inclination_deg = uniform(rng, {0.0, 80.0});
  c.orientation = uniform(rng, {0.0, M_PI});
  const double crad = uniform(rng, {0.5 * cfg.theta_e.lo, cfg.theta_e.hi});
  const double cphi = uniform(rng, {0.0, 2.0 * M_PI});
  c.cx = g.cx + crad * std::cos(cphi);
  c.cy = g.cy + crad * std::sin(cphi);
  const double blend = u01(rng);

  if (is_lens) {
    s.theta_e = theta_e;
    s.target_flux_ratio = target;
    s.z_s = z;
  } else if (companion) {
    s.has_companion = true;
    s.companion = c;
    s.companion_blend = blend;
  }
  return s;
}

/// Noise-free, PSF-blurred components of one band.
struct BandComponents {
  Image lens, source, companion;
};

struct SynthResult {
  ImageStamp stamp;
  std::vector<BandComponents> bands;  // noiseless parts, for checks
};

/// Renders the scene; the lensed source is scaled so that its share of
/// the total (all bands, after PSF) equals the scene's target flux ratio.
inline SynthResult synthesize(const SimConfig& cfg, const MockScene& scene, std::uint64_t seed) {
  cfg.validate();
  const PixelGrid grid{cfg.size, cfg.pixel_scale};
  const std::size_t npix = cfg.size * cfg.size;
  const Image lens_shape = render_galaxy(scene.lens, grid);
  Image src_shape, comp_shape;
  if (scene.is_lens) {
    SourceParams unit = scene.source;
    unit.amplitude = 1.0;
    src_shape = render_lensed_source(unit, scene.theta_e, grid, cfg.supersample, scene.lens.cx, scene.lens.cy);
  }
  if (scene.has_companion) comp_shape = render_galaxy(scene.companion, grid);

  SynthResult out;
  out.bands.resize(cfg.bands);
  double lens_total = 0.0, src_total = 0.0;
  for (std::size_t b = 0; b < cfg.bands; ++b) {
    const auto k = gaussian_kernel(cfg.psf_fwhm[b], cfg.pixel_scale);
    auto& bc = out.bands[b];
    bc.lens = convolve_separable(lens_shape, cfg.size, k);
    for (auto& v : bc.lens) v *= cfg.lens_colors[b];
    lens_total += image_sum(bc.lens);
    if (scene.is_lens) {
      bc.source = convolve_separable(src_shape, cfg.size, k);
      for (auto& v : bc.source) v *= cfg.source_colors[b];
      src_total += image_sum(bc.source);
    }
    if (scene.has_companion) {
      bc.companion = convolve_separable(comp_shape, cfg.size, k);
      const double color = (1.0 - scene.companion_blend) * cfg.lens_colors[b] + scene.companion_blend * cfg.source_colors[b];
      for (auto& v : bc.companion) v *= color;
    }
  }
  double realized = 0.0;
  if (scene.is_lens && src_total > 0) {
    const double f = scene.target_flux_ratio;
    const double amp = f * lens_total / ((1.0 - f) * src_total);
    for (auto& bc : out.bands)
      for (auto& v : bc.source) v *= amp;
    src_total *= amp;
    realized = src_total / (src_total + lens_total);
  }

  std::mt19937_64 rng(seed);
  Tensor<float> pixels({cfg.bands, cfg.size, cfg.size});
  for (std::size_t b = 0; b < cfg.bands; ++b) {
    std::normal_distribution<double> noise(0.0, 1.0);
    const auto& bc = out.bands[b];
    for (std::size_t i = 0; i < npix; ++i) {
      double v = bc.lens[i];
      if (!bc.source.empty()) v += bc.source[i];
      if (!bc.companion.empty()) v += bc.companion[i];
      if (cfg.noise_sigma[b] > 0) v += cfg.noise_sigma[b] * noise(rng);
      pixels[b * npix + i] = static_cast<float>(v);
    }
  }
  out.stamp.pixels = std::move(pixels);
  out.stamp.label = scene.is_lens ? 1 : 0;
  out.stamp.meta.theta_e = scene.is_lens ? scene.theta_e : 0.0;
  out.stamp.meta.flux_ratio = realized;
  out.stamp.meta.z_s = scene.is_lens ? scene.z_s : 0.0;
  out.stamp.meta.seed = seed;
  return out;
}

/// Labels for n stamps with exactly round(n * lens_fraction) lenses, in a
/// seeded random order.
inline std::vector<int> assign_labels(std::size_t n, double lens_fraction, std::uint64_t seed) {
  if (n < 2) throw ConfigError("dataset needs n >= 2");
  if (!(lens_fraction > 0.0 && lens_fraction < 1.0)) throw ConfigError("lens_fraction must lie in (0,1)");
  const auto lenses = static_cast<std::size_t>(std::llround(static_cast<double>(n) * lens_fraction));
  std::vector<int> labels(n, 0);
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(lenses), 1);
  std::mt19937_64 rng(mix_seed(seed, 0xA55A));
  std::shuffle(labels.begin(), labels.end(), rng);
  return labels;
}

inline std::string stamp_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "stamp_%06zu", i);
  return buf;
}

/// Stamp i uses seed mix_seed(seed, i) for both its scene and its noise.
inline ImageStamp simulate_stamp(const SimConfig& cfg, bool is_lens, std::uint64_t seed, std::size_t index) {
  const std::uint64_t s = mix_seed(seed, index);
  std::mt19937_64 rng(s);
  auto scene = sample_scene(cfg, is_lens, rng);
  auto stamp = synthesize(cfg, scene, mix_seed(s, 1)).stamp;
  stamp.meta.id = stamp_id(index);
  stamp.meta.seed = s;
  return stamp;
}

inline Dataset simulate_dataset(const SimConfig& cfg, std::size_t n, double lens_fraction, std::uint64_t seed) {
  cfg.validate();
  const auto labels = assign_labels(n, lens_fraction, seed);
  Dataset out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(simulate_stamp(cfg, labels[i] == 1, seed, i));
  return out;
}

/// Writes stamps/<id>.lfs and manifest.jsonl under out_dir.
inline std::vector<ManifestRow> write_dataset(const Dataset& data, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "stamps", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "stamps").string() + ": " + ec.message());
  std::vector<ManifestRow> rows;
  rows.reserve(data.size());
  for (const auto& s : data) {
    ManifestRow r{s.meta.id, "stamps/" + s.meta.id + ".lfs", s.label, s.meta.theta_e, s.meta.flux_ratio, s.meta.z_s, s.meta.seed};
    write_stamp(out_dir / r.path, s.pixels);
    rows.push_back(std::move(r));
  }
  write_manifest(out_dir / "manifest.jsonl", rows);
  return rows;
}

inline std::vector<ManifestRow> generate_dataset(const SimConfig& cfg, std::size_t n, double lens_fraction, std::uint64_t seed,
                                                 const std::filesystem::path& out_dir) {
  return write_dataset(simulate_dataset(cfg, n, lens_fraction, seed), out_dir);
}

}  // namespace lensformer
