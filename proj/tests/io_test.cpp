#include <gtest/gtest.h>
#include <zlib.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "rare/dataset.hpp"
#include "rare/image_io.hpp"
#include "test_util.hpp"

using namespace rare;
using rare::testing::random_tensor;
namespace fs = std::filesystem;

TEST(Pgm, RoundTripQuantized) {
  Rng rng(51);
  Tensor<double> img = random_tensor<double>(rng, {7, 11}, 0.0, 1.0);
  std::string path = (fs::temp_directory_path() / "io_test.pgm").string();
  save_pgm(path, img);
  Tensor<double> back = load_image<double>(path);
  ASSERT_EQ(back.shape, img.shape);
  for (int i = 0; i < img.size(); ++i) EXPECT_NEAR(back[i], img[i], 0.5 / 255.0 + 1e-9);
  // second round trip is exact (already quantized)
  save_pgm(path, back);
  Tensor<double> again = load_image<double>(path);
  EXPECT_EQ(again.values, back.values);
  std::remove(path.c_str());
}

namespace {

void put_be32(std::string& s, uint32_t v) {
  s.push_back(static_cast<char>(v >> 24));
  s.push_back(static_cast<char>((v >> 16) & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
  s.push_back(static_cast<char>(v & 0xff));
}

void put_chunk(std::string& s, const char* type, const std::string& data) {
  put_be32(s, static_cast<uint32_t>(data.size()));
  s.append(type, 4);
  s += data;
  put_be32(s, 0);  // crc unchecked by the loader
}

std::string make_gray_png(int w, int h, const std::vector<unsigned char>& pixels,
                          int color_type = 0) {
  std::string png("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  put_be32(ihdr, static_cast<uint32_t>(w));
  put_be32(ihdr, static_cast<uint32_t>(h));
  ihdr.push_back(8);                             // bit depth
  ihdr.push_back(static_cast<char>(color_type));  // 0 = grayscale
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);  // no interlace
  put_chunk(png, "IHDR", ihdr);
  std::string raw;
  for (int y = 0; y < h; ++y) {
    raw.push_back(0);  // filter: none
    for (int x = 0; x < w; ++x)
      raw.push_back(static_cast<char>(pixels[static_cast<size_t>(y * w + x)]));
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> comp(bound);
  compress(comp.data(), &bound, reinterpret_cast<const Bytef*>(raw.data()),
           static_cast<uLong>(raw.size()));
  put_chunk(png, "IDAT", std::string(reinterpret_cast<char*>(comp.data()), bound));
  put_chunk(png, "IEND", "");
  return png;
}

}  // namespace

TEST(Png, GrayscaleDecode) {
  std::vector<unsigned char> pixels = {0, 64, 128, 255, 10, 20};
  std::string path = (fs::temp_directory_path() / "io_test.png").string();
  std::ofstream(path, std::ios::binary) << make_gray_png(3, 2, pixels);
  Tensor<double> img = load_image<double>(path);
  ASSERT_EQ(img.shape, (Shape{2, 3}));
  for (int i = 0; i < 6; ++i) EXPECT_NEAR(img[i], pixels[static_cast<size_t>(i)] / 255.0, 1e-12);
  std::remove(path.c_str());
}

TEST(Png, ColorRejected) {
  std::vector<unsigned char> pixels(12, 0);
  std::string path = (fs::temp_directory_path() / "io_color.png").string();
  std::ofstream(path, std::ios::binary) << make_gray_png(2, 2, pixels, /*color_type=*/2);
  EXPECT_THROW(load_image<double>(path), std::runtime_error);
  std::remove(path.c_str());
}

TEST(Manifest, ParsesAndValidates) {
  fs::path dir = fs::temp_directory_path() / "rare_manifest_test";
  fs::create_directories(dir);
  {
    std::ofstream m(dir / "ok.tsv");
    m << "a.pgm\tab1\n/abs/b.pgm\tz9\n";
  }
  auto samples = read_manifest((dir / "ok.tsv").string());
  ASSERT_EQ(samples.size(), 2u);
  EXPECT_EQ(samples[0].path, (dir / "a.pgm").string());
  EXPECT_EQ(samples[1].path, "/abs/b.pgm");  // absolute kept as-is

  {
    std::ofstream m(dir / "badchar.tsv");
    m << "a.pgm\thi there\n";
  }
  try {
    read_manifest((dir / "badchar.tsv").string());
    FAIL() << "expected alphabet failure";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("a.pgm"), std::string::npos);
  }

  {
    std::ofstream m(dir / "notab.tsv");
    m << "just-a-path\n";
  }
  EXPECT_THROW(read_manifest((dir / "notab.tsv").string()), std::runtime_error);
  EXPECT_THROW(read_manifest((dir / "missing.tsv").string()), std::runtime_error);
  fs::remove_all(dir);
}

TEST(Dataset, SkipsUnreadableWarnsLoadsRest) {
  fs::path dir = fs::temp_directory_path() / "rare_ds_test";
  fs::create_directories(dir);
  save_pgm((dir / "good.pgm").string(), Tensor<double>::full({4, 6}, 0.5));
  std::ofstream(dir / "broken.pgm") << "not an image";
  {
    std::ofstream m(dir / "m.tsv");
    m << "good.pgm\tok\nbroken.pgm\tbad\nmissing.pgm\tgone\n";
  }
  LoadedDataset<double> ds = load_dataset<double>((dir / "m.tsv").string(), 4, 6);
  EXPECT_EQ(ds.samples.size(), 1u);
  EXPECT_EQ(ds.samples[0].label, "ok");
  // [0,1] -> [-1,1] normalization
  EXPECT_NEAR(ds.images[0].values[0], 0.0, 0.01);
  fs::remove_all(dir);
}

TEST(Dataset, ResizePreservesConstant) {
  Tensor<double> img = Tensor<double>::full({10, 20}, 0.7);
  Tensor<double> small = resize_bilinear(img, 4, 8);
  for (double v : small.values) EXPECT_NEAR(v, 0.7, 1e-12);
}
