#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "rare/synth.hpp"

using namespace rare;
namespace fs = std::filesystem;

TEST(Render, ZeroDistortionCenteredHorizontal) {
  DistortionSpec spec;
  spec.out_h = 32;
  spec.out_w = 100;
  RenderedSample s = render_sample("404", spec, 9);
  // ink bounding box
  int min_x = 1000, max_x = -1, min_y = 1000, max_y = -1;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 100; ++x)
      if (s.image.at(y, x) > 0.5) {
        min_x = std::min(min_x, x);
        max_x = std::max(max_x, x);
        min_y = std::min(min_y, y);
        max_y = std::max(max_y, y);
      }
  ASSERT_GE(max_x, 0) << "no ink rendered";
  EXPECT_NEAR((min_x + max_x) / 2.0, 50.0, 3.0);
  EXPECT_NEAR((min_y + max_y) / 2.0, 16.0, 3.0);
  // horizontal: all glyph centers on one row
  for (const GlyphPlacement& p : s.placements)
    EXPECT_NEAR(p.image_y, s.placements.front().image_y, 1e-6);
  EXPECT_DOUBLE_EQ(s.record.rotation_deg, 0.0);
  EXPECT_DOUBLE_EQ(s.record.curve_amplitude, 0.0);
}

TEST(Render, DeterministicPerSeed) {
  DistortionSpec spec;
  spec.rotation_deg = 20;
  spec.perspective_jitter = 0.1;
  spec.curve_amplitude = 0.3;
  spec.noise_stddev = 0.05;
  RenderedSample a = render_sample("7a1", spec, 1234);
  RenderedSample b = render_sample("7a1", spec, 1234);
  EXPECT_EQ(a.image.values, b.image.values);
  RenderedSample c = render_sample("7a1", spec, 1235);
  EXPECT_NE(a.image.values, c.image.values);
}

TEST(Render, GlyphCentersFollowSineBaseline) {
  DistortionSpec spec;
  spec.curve_amplitude = 0.3;
  RenderedSample s = render_sample("00000", spec, 77);
  const double gh = 14.0;  // glyph height at canvas scale
  double ch = 0.0;
  // canvas height reconstruction: glyph centers must satisfy the logged sine
  for (size_t k = 0; k < s.placements.size(); ++k) {
    double u = static_cast<double>(k) / 4.0;
    double expect_rel = s.record.curve_amplitude * gh *
                        std::sin(2.0 * M_PI * spec.curve_period * u + s.record.curve_phase);
    if (k == 0) ch = s.placements[k].canvas_y - expect_rel;  // center line
    EXPECT_NEAR(s.placements[k].canvas_y, ch + expect_rel, 1.0) << "glyph " << k;
  }
}

TEST(Render, InvalidCharacterFails) {
  DistortionSpec spec;
  EXPECT_THROW(render_sample("a b", spec, 1), std::invalid_argument);
  EXPECT_THROW(render_sample("", spec, 1), std::invalid_argument);
}

TEST(Render, AmplitudeBoundValidated) {
  DistortionSpec spec;
  spec.curve_amplitude = 0.6;
  EXPECT_THROW(render_sample("a", spec, 1), std::invalid_argument);
}

TEST(MakeDataset, ManifestFilesAndGrammar) {
  fs::path dir = fs::temp_directory_path() / "rare_synth_test";
  fs::remove_all(dir);
  DatasetSpec ds;
  ds.size = 50;
  ds.alphabet = "0123456789";
  ds.min_len = 1;
  ds.max_len = 5;
  ds.seed = 3;
  std::string manifest = make_dataset(ds, dir.string());
  std::ifstream f(manifest);
  std::string line;
  int count = 0;
  while (std::getline(f, line)) {
    size_t tab = line.find('\t');
    ASSERT_NE(tab, std::string::npos);
    std::string path = line.substr(0, tab), label = line.substr(tab + 1);
    EXPECT_TRUE(fs::exists(dir / path));
    EXPECT_GE(label.size(), 1u);
    EXPECT_LE(label.size(), 5u);
    for (char c : label) EXPECT_TRUE(c >= '0' && c <= '9') << label;
    ++count;
  }
  EXPECT_EQ(count, 50);
  fs::remove_all(dir);
}

TEST(MakeDataset, FixedSeedBitIdentical) {
  fs::path dir1 = fs::temp_directory_path() / "rare_synth_a";
  fs::path dir2 = fs::temp_directory_path() / "rare_synth_b";
  fs::remove_all(dir1);
  fs::remove_all(dir2);
  DatasetSpec ds;
  ds.size = 8;
  ds.seed = 11;
  ds.distortion.rotation_deg = 15;
  ds.distortion.curve_amplitude = 0.25;
  ds.distortion.noise_stddev = 0.03;
  ds.workers = 2;
  make_dataset(ds, dir1.string());
  ds.workers = 1;
  make_dataset(ds, dir2.string());
  auto slurp = [](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  };
  for (const char* name : {"manifest.tsv", "strata.csv", "img_000003.pgm", "img_000007.pgm"})
    EXPECT_EQ(slurp(dir1 / name), slurp(dir2 / name)) << name;
  fs::remove_all(dir1);
  fs::remove_all(dir2);
}

// Re-rendering a sample from its manifest label and recorded seed
// reproduces the stored image exactly.
TEST(MakeDataset, StrataReRenderReproduces) {
  fs::path dir = fs::temp_directory_path() / "rare_synth_rerender";
  fs::remove_all(dir);
  DatasetSpec ds;
  ds.size = 5;
  ds.seed = 21;
  ds.distortion.rotation_deg = 25;
  ds.distortion.perspective_jitter = 0.12;
  ds.distortion.curve_amplitude = 0.3;
  ds.distortion.noise_stddev = 0.05;
  std::string manifest = make_dataset(ds, dir.string());
  auto strata = read_strata(manifest);
  auto samples = read_manifest(manifest);
  for (const Sample& s : samples) {
    std::string name = s.path.substr(s.path.find_last_of('/') + 1);
    const DistortionRecord& r = strata.at(name);
    RenderedSample re = render_sample(s.label, ds.distortion, r.seed);
    Tensor<double> stored = load_image<double>(s.path);
    ASSERT_EQ(stored.shape, re.image.shape);
    for (int i = 0; i < stored.size(); ++i) {
      double quantized = std::round(std::clamp(re.image[i], 0.0, 1.0) * 255.0) / 255.0;
      EXPECT_NEAR(stored[i], quantized, 1e-9);
    }
    EXPECT_EQ(re.record.curve_amplitude, r.curve_amplitude);
  }
  fs::remove_all(dir);
}
