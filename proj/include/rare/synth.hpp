#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "rare/dataset.hpp"
#include "rare/font5x7.hpp"
#include "rare/image_io.hpp"
#include "rare/linalg.hpp"
#include "rare/rng.hpp"
#include "rare/tensor.hpp"

namespace rare {

/// Ranges for the irregularity classes: loose bounding (padding jitter),
/// rotation, perspective, and curved baselines. Every field is an upper
/// bound; the renderer samples per-image amounts from the seed.
struct DistortionSpec {
  double rotation_deg = 0.0;        // orientation sampled in [-r, r]
  double perspective_jitter = 0.0;  // corner shift, fraction of frame size
  double curve_amplitude = 0.0;     // baseline shift, fraction of text height
  double curve_period = 1.0;        // sine cycles across the text
  double noise_stddev = 0.0;
  double padding_jitter = 0.0;      // extra margin, fraction of frame size
  int out_h = 32, out_w = 100;

  void validate() const {
    if (rotation_deg < 0 || perspective_jitter < 0 || curve_amplitude < 0 || curve_period < 0 ||
        noise_stddev < 0 || padding_jitter < 0)
      throw std::invalid_argument("distortion spec: ranges must be nonnegative");
    if (curve_amplitude > 0.5)
      throw std::invalid_argument("distortion spec: curve amplitude above 0.5");
  }
};

/// The amounts actually sampled for one image (kept for stratified
/// evaluation and exact re-rendering).
struct DistortionRecord {
  uint64_t seed = 0;
  double rotation_deg = 0.0;
  double curve_amplitude = 0.0;
  double curve_phase = 0.0;
  double perspective = 0.0;  // mean absolute corner shift fraction
  double noise_stddev = 0.0;
};

struct GlyphPlacement {
  char ch = 0;
  double canvas_x = 0.0, canvas_y = 0.0;  // glyph center before warping
  double image_x = 0.0, image_y = 0.0;    // glyph center in the output image
};

struct RenderedSample {
  Tensor<double> image;  // values in [0, 1]
  std::string label;
  DistortionRecord record;
  std::vector<GlyphPlacement> placements;
};

namespace detail {

inline Mat homography_from_corners(const std::array<std::pair<double, double>, 4>& src,
                                   const std::array<std::pair<double, double>, 4>& dst) {
  // 8 unknowns h11..h32, h33 = 1
  Mat a(8, 8);
  std::vector<double> b(8, 0.0);
  for (int i = 0; i < 4; ++i) {
    auto [x, y] = src[static_cast<size_t>(i)];
    auto [u, v] = dst[static_cast<size_t>(i)];
    int r = 2 * i;
    a(r, 0) = x; a(r, 1) = y; a(r, 2) = 1;
    a(r, 6) = -u * x; a(r, 7) = -u * y;
    b[static_cast<size_t>(r)] = u;
    a(r + 1, 3) = x; a(r + 1, 4) = y; a(r + 1, 5) = 1;
    a(r + 1, 6) = -v * x; a(r + 1, 7) = -v * y;
    b[static_cast<size_t>(r + 1)] = v;
  }
  std::vector<double> h = solve(a, b);
  Mat m(3, 3);
  m(0, 0) = h[0]; m(0, 1) = h[1]; m(0, 2) = h[2];
  m(1, 0) = h[3]; m(1, 1) = h[4]; m(1, 2) = h[5];
  m(2, 0) = h[6]; m(2, 1) = h[7]; m(2, 2) = 1.0;
  return m;
}

inline std::pair<double, double> apply_homography(const Mat& m, double x, double y) {
  double w = m(2, 0) * x + m(2, 1) * y + m(2, 2);
  return {(m(0, 0) * x + m(0, 1) * y + m(0, 2)) / w,
          (m(1, 0) * x + m(1, 1) * y + m(1, 2)) / w};
}

inline double sample_canvas(const Tensor<double>& canvas, double x, double y) {
  int x0 = static_cast<int>(std::floor(x));
  int y0 = static_cast<int>(std::floor(y));
  double wx = x - x0, wy = y - y0;
  auto pix = [&](int yy, int xx) -> double {
    return (yy >= 0 && yy < canvas.shape[0] && xx >= 0 && xx < canvas.shape[1])
               ? canvas.at(yy, xx)
               : 0.0;
  };
  return (1 - wy) * ((1 - wx) * pix(y0, x0) + wx * pix(y0, x0 + 1)) +
         wy * ((1 - wx) * pix(y0 + 1, x0) + wx * pix(y0 + 1, x0 + 1));
}

}  // namespace detail

/// Rasterizes `text` along a sinusoidal baseline, then applies rotation,
/// a 4-corner perspective warp, padding jitter and Gaussian noise.
/// Deterministic per (text, spec, seed).
inline RenderedSample render_sample(const std::string& text, const DistortionSpec& spec,
                                    uint64_t seed) {
  spec.validate();
  if (text.empty()) throw std::invalid_argument("render: empty text");
  for (char c : text)
    if (!char_valid(c))
      throw std::invalid_argument(std::string("render: invalid character '") + c + "'");
  Rng rng(seed);

  RenderedSample out;
  out.label = text;
  out.record.seed = seed;
  out.record.rotation_deg = rng.uniform(-spec.rotation_deg, spec.rotation_deg);
  out.record.curve_amplitude = rng.uniform(0.0, spec.curve_amplitude);
  out.record.curve_phase = rng.uniform(0.0, 2.0 * M_PI);
  out.record.noise_stddev = spec.noise_stddev;

  // 1. text canvas with the curved baseline
  const int scale = 2;
  int n = static_cast<int>(text.size());
  int gw = kGlyphW * scale, gh = kGlyphH * scale, gap = scale;
  int text_w = n * gw + (n - 1) * gap;
  int amp_px = static_cast<int>(std::ceil(out.record.curve_amplitude * gh)) + 1;
  int margin = scale;
  int cw = text_w + 2 * margin;
  int ch = gh + 2 * (amp_px + margin);
  Tensor<double> canvas = Tensor<double>::zeros({ch, cw});
  for (int k = 0; k < n; ++k) {
    int label = char_to_label(text[static_cast<size_t>(k)]);
    double cx = margin + k * (gw + gap) + gw / 2.0;
    double u = text_w > gw ? (cx - margin - gw / 2.0) / (text_w - gw) : 0.5;
    double cy = ch / 2.0 + out.record.curve_amplitude * gh *
                               std::sin(2.0 * M_PI * spec.curve_period * u +
                                        out.record.curve_phase);
    const char* const* rows = glyph_rows(label);
    int top = static_cast<int>(std::lround(cy - gh / 2.0));
    int left = static_cast<int>(std::lround(cx - gw / 2.0));
    for (int y = 0; y < kGlyphH; ++y)
      for (int x = 0; x < kGlyphW; ++x) {
        if (rows[y][x] != '1' && rows[y][x] != '#') continue;
        for (int sy = 0; sy < scale; ++sy)
          for (int sx = 0; sx < scale; ++sx)
            canvas.at(top + y * scale + sy, left + x * scale + sx) = 1.0;
      }
    GlyphPlacement p;
    p.ch = text[static_cast<size_t>(k)];
    p.canvas_x = left + gw / 2.0;
    p.canvas_y = top + gh / 2.0;
    out.placements.push_back(p);
  }

  // 2. placement into a working frame (2x supersampled output aspect)
  int fw = spec.out_w * 2, fh = spec.out_h * 2;
  double theta = out.record.rotation_deg * M_PI / 180.0;
  double rot_w = cw * std::fabs(std::cos(theta)) + ch * std::fabs(std::sin(theta));
  double rot_h = cw * std::fabs(std::sin(theta)) + ch * std::fabs(std::cos(theta));
  double mx = fw * (0.06 + spec.perspective_jitter + spec.padding_jitter * rng.uniform());
  double my = fh * (0.06 + spec.perspective_jitter + spec.padding_jitter * rng.uniform());
  double fit = std::min((fw - 2 * mx) / rot_w, (fh - 2 * my) / rot_h);
  // off-center placement only under loose bounding; zero jitter centers
  double loose = std::min(1.0, spec.padding_jitter * 4.0);
  double jx = (fw - fit * rot_w - 2 * mx) * rng.uniform(-0.5, 0.5) * loose;
  double jy = (fh - fit * rot_h - 2 * my) * rng.uniform(-0.5, 0.5) * loose;

  // canvas -> frame: scale about canvas center, rotate, recenter
  double cosr = std::cos(theta), sinr = std::sin(theta);
  Mat place(3, 3);
  place(0, 0) = fit * cosr;  place(0, 1) = -fit * sinr;
  place(1, 0) = fit * sinr;  place(1, 1) = fit * cosr;
  place(0, 2) = fw / 2.0 + jx - (place(0, 0) * cw / 2.0 + place(0, 1) * ch / 2.0);
  place(1, 2) = fh / 2.0 + jy - (place(1, 0) * cw / 2.0 + place(1, 1) * ch / 2.0);
  place(2, 2) = 1.0;

  // perspective: frame corners move to jittered positions
  std::array<std::pair<double, double>, 4> src = {
      {{0, 0}, {static_cast<double>(fw), 0}, {static_cast<double>(fw), static_cast<double>(fh)},
       {0, static_cast<double>(fh)}}};
  std::array<std::pair<double, double>, 4> dst = src;
  double pj_total = 0.0;
  for (auto& [x, y] : dst) {
    double dx = rng.uniform(-spec.perspective_jitter, spec.perspective_jitter);
    double dy = rng.uniform(-spec.perspective_jitter, spec.perspective_jitter);
    x += dx * fw;
    y += dy * fh;
    pj_total += (std::fabs(dx) + std::fabs(dy)) / 2.0;
  }
  out.record.perspective = pj_total / 4.0;
  Mat persp = detail::homography_from_corners(src, dst);
  Mat full = matmul(persp, place);
  Mat inv = invert(full);

  // 3. rasterize the frame by inverse mapping, then box-downsample 2x
  Tensor<double> frame = Tensor<double>::zeros({fh, fw});
  for (int y = 0; y < fh; ++y)
    for (int x = 0; x < fw; ++x) {
      auto [sx, sy] = detail::apply_homography(inv, x + 0.5, y + 0.5);
      frame.at(y, x) = detail::sample_canvas(canvas, sx - 0.5, sy - 0.5);
    }
  out.image = Tensor<double>::zeros({spec.out_h, spec.out_w});
  for (int y = 0; y < spec.out_h; ++y)
    for (int x = 0; x < spec.out_w; ++x)
      out.image.at(y, x) = 0.25 * (frame.at(2 * y, 2 * x) + frame.at(2 * y, 2 * x + 1) +
                                   frame.at(2 * y + 1, 2 * x) + frame.at(2 * y + 1, 2 * x + 1));

  for (GlyphPlacement& p : out.placements) {
    auto [ix, iy] = detail::apply_homography(full, p.canvas_x, p.canvas_y);
    p.image_x = ix / 2.0;
    p.image_y = iy / 2.0;
  }

  // 4. sensor noise
  if (spec.noise_stddev > 0.0)
    for (double& v : out.image.values) v += spec.noise_stddev * rng.normal();
  for (double& v : out.image.values) v = std::clamp(v, 0.0, 1.0);
  return out;
}

// ---------------------------------------------------------------------------
// dataset generation

struct DatasetSpec {
  int size = 1000;
  std::string alphabet = "0123456789";
  int min_len = 1, max_len = 5;
  DistortionSpec distortion;
  uint64_t seed = 0;
  int workers = 1;
};

/// Writes images, a manifest (`<path>\t<label>`), and a strata sidecar
/// (`strata.csv`) into out_dir. Per-sample seeds derive from the dataset
/// seed, so files are bit-identical across runs and any sample can be
/// re-rendered from its strata row. Returns the manifest path.
inline std::string make_dataset(const DatasetSpec& ds, const std::string& out_dir) {
  if (ds.size < 1) throw std::invalid_argument("make_dataset: size must be >= 1");
  if (ds.alphabet.empty() || ds.min_len < 1 || ds.max_len < ds.min_len)
    throw std::invalid_argument("make_dataset: bad alphabet or length range");
  ds.distortion.validate();
  std::filesystem::create_directories(out_dir);

  // labels and per-sample seeds first, in index order
  std::vector<std::string> labels(static_cast<size_t>(ds.size));
  std::vector<uint64_t> seeds(static_cast<size_t>(ds.size));
  Rng rng(ds.seed);
  for (int i = 0; i < ds.size; ++i) {
    int len = ds.min_len + rng.uniform_int(ds.max_len - ds.min_len + 1);
    std::string label;
    for (int j = 0; j < len; ++j)
      label.push_back(ds.alphabet[static_cast<size_t>(rng.uniform_int(
          static_cast<int>(ds.alphabet.size())))]);
    labels[static_cast<size_t>(i)] = label;
    seeds[static_cast<size_t>(i)] = mix_seed(ds.seed, static_cast<uint64_t>(i));
  }

  std::vector<DistortionRecord> records(static_cast<size_t>(ds.size));
  auto render_range = [&](int begin, int end) {
    char name[32];
    for (int i = begin; i < end; ++i) {
      RenderedSample s =
          render_sample(labels[static_cast<size_t>(i)], ds.distortion, seeds[static_cast<size_t>(i)]);
      std::snprintf(name, sizeof(name), "img_%06d.pgm", i);
      save_pgm(out_dir + "/" + name, s.image);
      records[static_cast<size_t>(i)] = s.record;
    }
  };
  int workers = std::max(1, ds.workers);
  if (workers == 1) {
    render_range(0, ds.size);
  } else {
    std::vector<std::thread> pool;
    int chunk = (ds.size + workers - 1) / workers;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back(render_range, w * chunk, std::min(ds.size, (w + 1) * chunk));
    for (auto& t : pool) t.join();
  }

  std::string manifest_path = out_dir + "/manifest.tsv";
  std::ofstream manifest(manifest_path);
  std::ofstream strata(out_dir + "/strata.csv");
  strata.precision(17);  // records must round-trip exactly
  strata << "path,label,seed,rotation_deg,curve_amplitude,curve_phase,perspective,noise_stddev\n";
  char name[32];
  for (int i = 0; i < ds.size; ++i) {
    std::snprintf(name, sizeof(name), "img_%06d.pgm", i);
    manifest << name << "\t" << labels[static_cast<size_t>(i)] << "\n";
    const DistortionRecord& r = records[static_cast<size_t>(i)];
    strata << name << "," << labels[static_cast<size_t>(i)] << "," << r.seed << ","
           << r.rotation_deg << "," << r.curve_amplitude << "," << r.curve_phase << ","
           << r.perspective << "," << r.noise_stddev << "\n";
  }
  if (!manifest || !strata) throw std::runtime_error("make_dataset: cannot write " + out_dir);
  return manifest_path;
}

/// Parses strata.csv next to a manifest; returns per-path records.
inline std::map<std::string, DistortionRecord> read_strata(const std::string& manifest_path) {
  std::string path = dirname_of(manifest_path) + "/strata.csv";
  std::ifstream f(path);
  if (!f) throw std::runtime_error("strata: cannot open " + path);
  std::map<std::string, DistortionRecord> out;
  std::string line;
  std::getline(f, line);  // header
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) cols.push_back(col);
    if (cols.size() != 8) throw std::runtime_error("strata: bad row: " + line);
    DistortionRecord r;
    r.seed = std::stoull(cols[2]);
    r.rotation_deg = std::stod(cols[3]);
    r.curve_amplitude = std::stod(cols[4]);
    r.curve_phase = std::stod(cols[5]);
    r.perspective = std::stod(cols[6]);
    r.noise_stddev = std::stod(cols[7]);
    out[cols[0]] = r;
  }
  return out;
}

}  // namespace rare
