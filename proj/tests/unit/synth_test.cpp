#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "fringe/dataset.hpp"
#include "fringe/png_io.hpp"
#include "fringe/synth.hpp"

using namespace fringe;
namespace fs = std::filesystem;

namespace {

// Power series for J0, independent of the library's cyl_bessel_j.
double j0_series(double x) {
  double term = 1, sum = 1;
  for (int k = 1; k < 80; ++k) {
    term *= -(x * x / 4) / (static_cast<double>(k) * k);
    sum += term;
  }
  return sum;
}

SynthSpec clean_spec(double rings, double theta, double a = 100) {
  SynthSpec s;
  s.speckle_strength = 0;
  s.blur_sigma = 0;
  s.antinodes.push_back({{256, 192, a, 0.8 * a, theta, rings}, 1.0, FringeProfile::cosine});
  return s;
}

// Strict local minima along a ray from the center out to (not including) the boundary.
std::vector<int> minima_along(const Image& img, int cx, int cy, int dx, int dy, int len) {
  std::vector<double> v;
  for (int i = 0; i < len; ++i) v.push_back(img(cx + i * dx, cy + i * dy));
  std::vector<int> out;
  for (int i = 1; i + 1 < len; ++i)
    if (v[i] < v[i - 1] && v[i] <= v[i + 1]) out.push_back(i);
  return out;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("fringe_synth_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) { return read_file(p); }

}  // namespace

TEST(Profile, CosineExamples) {
  EXPECT_DOUBLE_EQ(fringe_profile(1.0, 4, FringeProfile::cosine), 1.0);
  EXPECT_NEAR(fringe_profile(7.0 / 8.0, 4, FringeProfile::cosine), 0.0, 1e-12);
  EXPECT_NEAR(fringe_profile(0.0, 4, FringeProfile::cosine), 1.0, 1e-12);
}

TEST(Profile, BesselZerosMatchTables) {
  const double table[] = {2.404825557695773, 5.520078110286311, 8.653727912911013,
                          11.79153443901428, 14.93091770848779};
  for (int k = 1; k <= 5; ++k) {
    EXPECT_NEAR(bessel_j0_zero(k), table[k - 1], 1e-12);
    EXPECT_NEAR(j0_series(bessel_j0_zero(k)), 0.0, 1e-10);  // series cancellation
  }
}

TEST(Profile, BesselShape) {
  EXPECT_NEAR(fringe_profile(1.0, 3, FringeProfile::bessel), 1.0, 1e-15);
  // Dark fringe where the argument reaches the first zero.
  const double u = 1.0 - bessel_j0_zero(1) / bessel_j0_zero(3);
  EXPECT_NEAR(fringe_profile(u, 3, FringeProfile::bessel), 0.0, 1e-20);
  for (double uu : {0.1, 0.35, 0.8}) {
    const double x = bessel_j0_zero(3) * (1 - uu);
    EXPECT_NEAR(fringe_profile(uu, 3, FringeProfile::bessel), j0_series(x) * j0_series(x), 1e-12);
  }
}

TEST(Render, EmptyFrameIsBackground) {
  SynthSpec s;
  s.speckle_strength = 0;
  s.background = 0.4;
  const auto f = render_frame(s);
  EXPECT_EQ(f.image.width(), 512);
  EXPECT_EQ(f.image.height(), 384);
  for (float v : f.image.pixels()) ASSERT_NEAR(v, 0.4, 1e-6);
  EXPECT_TRUE(f.truth.annotations.empty());
}

TEST(Render, DeterministicInSeed) {
  SynthSpec s = clean_spec(5, 30);
  s.speckle_strength = 0.6;
  s.blur_sigma = 0.7;
  s.seed = 99;
  const auto a = render_frame(s);
  const auto b = render_frame(s);
  EXPECT_EQ(a.image, b.image);
  s.seed = 100;
  EXPECT_NE(render_frame(s).image, a.image);
}

TEST(Render, ValuesStayInUnitRange) {
  SynthSpec s = clean_spec(6, 10);
  s.speckle_strength = 1.0;
  s.speckle_scale = 0;
  s.seed = 5;
  const auto f = render_frame(s);
  for (float v : f.image.pixels()) {
    ASSERT_GE(v, 0.0f);
    ASSERT_LE(v, 1.0f);
  }
}

TEST(Render, DarkFringesAlongMajorAxis) {
  // theta = 0 runs along +x, theta = 90 along -y (counterclockwise on screen).
  for (int R = 1; R <= 11; ++R) {
    for (double theta : {0.0, 90.0}) {
      const auto f = render_frame(clean_spec(R, theta));
      const int dx = theta == 0.0 ? 1 : 0;
      const int dy = theta == 0.0 ? 0 : -1;
      const auto mins = minima_along(f.image, 256, 192, dx, dy, 100);
      ASSERT_EQ(static_cast<int>(mins.size()), R) << "R=" << R << " theta=" << theta;
      for (int k = 0; k < R; ++k) {
        const double expected = 100.0 * (1.0 - (R - k - 0.5) / R);
        EXPECT_NEAR(mins[k], expected, 1.0) << "R=" << R << " k=" << k;
      }
    }
  }
}

TEST(Render, TruthIsTheSpec) {
  SynthSpec s = clean_spec(4.5, 42);
  s.antinodes.push_back({{60, 60, 30, 25, 0, 2}, 0.7, FringeProfile::bessel});
  const auto f = render_frame(s);
  ASSERT_EQ(f.truth.annotations.size(), 2u);
  EXPECT_EQ(f.truth.annotations[0], s.antinodes[0].ellipse);
  EXPECT_EQ(f.truth.annotations[1], s.antinodes[1].ellipse);
}

TEST(Render, RejectsOverlapAndOutOfFrame) {
  SynthSpec s = clean_spec(4, 0);
  s.antinodes.push_back({{300, 192, 60, 50, 0, 3}, 1.0, FringeProfile::cosine});
  EXPECT_THROW(render_frame(s), DataError);

  SynthSpec t = clean_spec(4, 0);
  t.antinodes[0].ellipse.cx = 50;
  EXPECT_THROW(render_frame(t), DataError);

  SynthSpec u = clean_spec(4, 0);
  u.antinodes[0].contrast = 0;
  EXPECT_THROW(render_frame(u), DataError);
}

TEST(Sampler, ProducesValidNonOverlappingFrames) {
  FrameSampler fs;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto spec = sample_frame(fs, seed, "f");
    ASSERT_LE(spec.antinodes.size(), 4u);
    for (const auto& an : spec.antinodes) {
      const auto& e = an.ellipse;
      EXPECT_GE(e.rings, fs.rings_min);
      EXPECT_LE(e.rings, fs.rings_max);
      EXPECT_GE(e.a, e.b);
      EXPECT_GE(e.b, fs.px_per_ring * e.rings - 1e-9);
    }
    ASSERT_NO_THROW(render_frame(spec)) << "seed " << seed;
  }
  EXPECT_EQ(sample_frame(fs, 17, "x").antinodes.size(), sample_frame(fs, 17, "x").antinodes.size());
}

TEST(Sampler, IntegerRings) {
  FrameSampler fs;
  fs.integer_rings = true;
  fs.min_antinodes = 1;
  for (std::uint64_t seed = 0; seed < 50; ++seed)
    for (const auto& an : sample_frame(fs, seed, "f").antinodes)
      EXPECT_EQ(an.ellipse.rings, std::floor(an.ellipse.rings));
}

TEST(Dataset, FrameNamesAndSeeds) {
  EXPECT_EQ(frame_name(0), "frame_00000.png");
  EXPECT_EQ(frame_name(123), "frame_00123.png");
  EXPECT_NE(frame_seed(1, 0), frame_seed(1, 1));
  EXPECT_NE(frame_seed(1, 0), frame_seed(2, 0));
}

TEST(Dataset, RenderWritesImagesAnnotationsManifest) {
  TempDir a("a"), b("b");
  FrameSampler fs;
  fs.width = 160;
  fs.height = 128;
  fs.a_min = 20;
  fs.a_max = 30;
  fs.rings_max = 3;
  const auto m = render_dataset(fs, 6, 7, a.path, 2);
  render_dataset(fs, 6, 7, b.path, 1);
  const DatasetPaths pa{a.path}, pb{b.path};
  EXPECT_EQ(list_pngs(pa.images()).size(), 6u);
  EXPECT_EQ(m.files.size(), 6u);
  for (const auto& f : m.files) {
    const Image img = decode_png(slurp(pa.images() / f));
    EXPECT_EQ(img.width(), 160);
    EXPECT_EQ(slurp(pa.images() / f), slurp(pb.images() / f));
  }
  EXPECT_EQ(slurp(pa.annotations()), slurp(pb.annotations()));
  EXPECT_EQ(slurp(pa.manifest()), slurp(pb.manifest()));
  for (const auto& rec : parse_annotations(slurp(pa.annotations()))) EXPECT_FALSE(rec.annotations.empty());
}

TEST(Dataset, ZeroFramesGivesHeaderOnly) {
  TempDir d("zero");
  render_dataset(FrameSampler{}, 0, 1, d.path);
  EXPECT_EQ(slurp(DatasetPaths{d.path}.annotations()), std::string(kAnnotationHeader) + "\n");
  EXPECT_TRUE(list_pngs(DatasetPaths{d.path}.images()).empty());
}

TEST(Dataset, ListPngsRejectsMissingDir) {
  EXPECT_THROW(list_pngs("/nonexistent/fringe/images"), DataError);
}
