#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "lithomt/corpus/corpus.hpp"
#include "lithomt/corpus/litho.hpp"
#include "lithomt/error.hpp"
#include "lithomt/morphology.hpp"

using namespace lmt;
namespace fs = std::filesystem;

namespace {

Bits brute_erode(const Bits& x, int k, bool pad_one) {
  const int lo = -(k / 2), hi = k - 1 - k / 2;
  Bits out = Bits::Zero(x.rows(), x.cols());
  for (int r = 0; r < x.rows(); ++r)
    for (int c = 0; c < x.cols(); ++c) {
      bool all = true;
      for (int dr = lo; dr <= hi && all; ++dr)
        for (int dc = lo; dc <= hi && all; ++dc) {
          const int rr = r + dr, cc = c + dc;
          const bool v = (rr < 0 || cc < 0 || rr >= x.rows() || cc >= x.cols()) ? pad_one : x(rr, cc) != 0;
          all = v;
        }
      out(r, c) = all;
    }
  return out;
}

// Opening as the union of every k x k square that fits inside x.
Bits brute_open(const Bits& x, int k) {
  Bits out = Bits::Zero(x.rows(), x.cols());
  for (int r = 0; r + k <= x.rows(); ++r)
    for (int c = 0; c + k <= x.cols(); ++c)
      if ((x.block(r, c, k, k) != 0).all()) out.block(r, c, k, k).setOnes();
  return out;
}

Bits random_bits(int n, std::mt19937_64& rng, double p) {
  std::bernoulli_distribution b(p);
  Bits x(n, n);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = b(rng);
  return x;
}

IntensityRaster brute_conv(const Bits& m, const IntensityRaster& k) {
  const int h = static_cast<int>(k.rows()) / 2;
  IntensityRaster out = IntensityRaster::Zero(m.rows(), m.cols());
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c)
      for (int i = -h; i <= h; ++i)
        for (int j = -h; j <= h; ++j) {
          const int rr = r + i, cc = c + j;
          if (rr >= 0 && cc >= 0 && rr < m.rows() && cc < m.cols() && m(rr, cc)) out(r, c) += k(h - i, h - j);
        }
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string tree_digest(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), root));
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) all += f.string() + ":" + slurp(root / f) + "\n";
  return all;
}

CorpusConfig small_config(int count) {
  CorpusConfig c;
  c.count = count;
  c.seed = 99;
  c.layout.size = 64;
  c.sources = {SourceType::circular, SourceType::annular};
  c.thresholds = {0.0923125};
  c.foci = {0, 50};
  c.doses = {1.0, 1.2};
  return c;
}

}  // namespace

TEST_CASE("morphology matches brute force") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Bits x = random_bits(20, rng, 0.7);
    for (int k : {2, 3, 4, 5}) {
      CHECK((morph::erode(x, k) == brute_erode(x, k, false)).all());
      CHECK((morph::erode(x, k, morph::Pad::one) == brute_erode(x, k, true)).all());
      CHECK((morph::open(x, k) == brute_open(x, k)).all());
    }
  }
}

TEST_CASE("distance transform matches brute force") {
  std::mt19937_64 rng(4);
  const Bits f = random_bits(24, rng, 0.05);
  const auto d = morph::distance_transform(f);
  for (int r = 0; r < 24; ++r)
    for (int c = 0; c < 24; ++c) {
      double best = 1e9;
      for (int i = 0; i < 24; ++i)
        for (int j = 0; j < 24; ++j)
          if (f(i, j)) best = std::min(best, std::hypot(double(i - r), double(j - c)));
      CHECK(d(r, c) == doctest::Approx(best).epsilon(1e-9));
    }
}

TEST_CASE("component labelling") {
  Bits x = Bits::Zero(8, 8);
  x.block(0, 0, 2, 2).setOnes();
  x(2, 2) = 1;  // diagonal only: separate under 4-connectivity
  x.block(5, 1, 1, 6).setOnes();
  const auto cc = morph::label_components(x);
  CHECK(cc.count() == 3);
  long total = 0;
  for (long s : cc.sizes) total += s;
  CHECK(total == 11);
}

TEST_CASE("source kernels") {
  OpticsConfig optics;
  for (auto s : {SourceType::annular, SourceType::circular, SourceType::bullseye})
    for (double focus : {0.0, 50.0}) {
      const auto cond = make_condition(s, 0.0923125, focus, 1.0);
      const int n = default_kernel_size(cond, optics);
      const auto k = source_kernel(cond, n, optics);
      CHECK(k.sum() == doctest::Approx(1.0).epsilon(1e-9));
      CHECK((k >= 0).all());
      CHECK((k - k.transpose()).abs().maxCoeff() < 1e-15);
      CHECK((k - k.rowwise().reverse()).abs().maxCoeff() < 1e-15);
    }
  const auto moment = [&](double focus) {
    const auto cond = make_condition(SourceType::circular, 0.1, focus, 1.0);
    const auto k = source_kernel(cond, 31, optics);
    double m = 0;
    for (int r = 0; r < 31; ++r)
      for (int c = 0; c < 31; ++c) m += k(r, c) * ((r - 15) * (r - 15) + (c - 15) * (c - 15));
    return m;
  };
  CHECK(moment(50) > moment(0));
  // Circular kernel is a sampled Gaussian.
  const auto cond = make_condition(SourceType::circular, 0.1, 0.0, 1.0);
  const auto k = source_kernel(cond, 9, optics);
  const double s = kernel_sigma(cond, optics);
  CHECK(s == doctest::Approx(1.5));
  CHECK(k(4, 6) / k(4, 4) == doctest::Approx(std::exp(-4.0 / (2 * s * s))));
  CHECK_THROWS_AS(source_kernel(cond, 8, optics), ConfigError);
}

TEST_CASE("contour simulation against a direct convolution") {
  OpticsConfig optics;
  optics.sigma0 = 1.0;
  optics.calibration = 1.0;
  const auto cond = make_condition(SourceType::circular, 0.5, 0.0, 1.0);
  BinaryRaster mask(64, 1.0);
  mask.pixels.block(20, 20, 21, 21).setOnes();
  const auto k = source_kernel(cond, default_kernel_size(cond, optics), optics);
  const auto conv = brute_conv(mask.pixels, k);
  const Bits expect = (conv >= 0.5).cast<std::uint8_t>();
  const auto got = simulate_contour(mask, cond, optics);
  CHECK((got.pixels == expect).all());
  CHECK(got.count() == expect.cast<long>().sum());

  CHECK(simulate_contour(BinaryRaster(64, 1.0), cond, optics).empty());

  std::mt19937_64 rng(8);
  OpticsConfig def;
  for (int t = 0; t < 5; ++t) {
    BinaryRaster m(random_bits(48, rng, 0.5));
    for (auto s : {SourceType::annular, SourceType::bullseye}) {
      const auto lo = simulate_contour(m, make_condition(s, 0.1436665, 50, 1.0), def);
      const auto hi = simulate_contour(m, make_condition(s, 0.1436665, 50, 1.2), def);
      CHECK(((lo.pixels != 0) <= (hi.pixels != 0)).all());
    }
  }
}

TEST_CASE("opc") {
  const auto cond = make_condition(SourceType::annular, 0.1436665, 50, 1.0);
  LayoutConfig lc;
  lc.injection_rate = 0;
  const auto layout = generate_layout(5, lc).raster;
  CHECK(run_opc(layout, cond, 0) == layout);
  const long before = print_error(simulate_contour(layout, cond), layout);
  const long after = print_error(simulate_contour(run_opc(layout, cond, 10), cond), layout);
  CHECK(after <= before);
  CHECK(run_opc(BinaryRaster(64, 1.0), cond, 10).empty());
}

TEST_CASE("drc examples") {
  RuleSet rules;
  rules.min_width = 4;
  rules.min_spacing = 4;
  rules.min_area = 16;
  rules.min_box = 1;
  BinaryRaster sq(32, 1.0);
  sq.pixels.block(5, 5, 10, 10).setOnes();
  CHECK(check_drc(sq, rules).empty());

  BinaryRaster two(40, 1.0);
  two.pixels.block(5, 5, 10, 10).setOnes();
  two.pixels.block(5, 17, 10, 10).setOnes();
  const auto sp = check_drc(two, rules);
  REQUIRE(sp.size() == 1);
  CHECK(sp[0].klass == HotspotClass::spacing);
  // Gap pixels: background pixels with foreground of distinct components on both sides closer than the rule.
  PixelBox gap{15, 5, 17, 15};
  CHECK(sp[0].bbox == gap);

  BinaryRaster island(32, 1.0);
  island.pixels.block(10, 12, 2, 2).setOnes();
  rules.min_width = 2;
  const auto ar = check_drc(island, rules);
  REQUIRE(ar.size() == 1);
  CHECK(ar[0].klass == HotspotClass::area);
  CHECK(ar[0].bbox == PixelBox{12, 10, 14, 12});

  // Default box growth keeps the cluster inside the reported box.
  rules.min_box = 12;
  const auto grown = check_drc(island, rules);
  REQUIRE(grown.size() == 1);
  CHECK(grown[0].bbox.width() == 12);
  CHECK(grown[0].bbox.x_min <= 12);
  CHECK(grown[0].bbox.x_max >= 14);

  rules.min_width = 0;
  CHECK_THROWS_AS(check_drc(island, rules), ConfigError);
}

TEST_CASE("spacing agrees with a pairwise distance oracle") {
  std::mt19937_64 rng(17);
  RuleSet rules;
  rules.min_width = 1;
  rules.min_area = 1;
  rules.min_spacing = 5;
  rules.min_box = 1;
  for (int trial = 0; trial < 20; ++trial) {
    BinaryRaster r(48, 1.0);
    std::uniform_int_distribution<int> pos(2, 30), gap(1, 8);
    const int row = pos(rng), col = pos(rng), g = gap(rng);
    r.pixels.block(row, 2, 8, col).setOnes();
    if (col + g + 6 < 48) r.pixels.block(row, col + 2 + g, 8, 48 - (col + 2 + g)).setOnes();
    // Oracle: horizontal pixel gap between the two rectangles.
    const bool close = col + g + 6 < 48 && g < rules.min_spacing;
    const auto v = check_drc(r, rules);
    int spacing = 0;
    for (const auto& a : v)
      if (a.klass == HotspotClass::spacing) {
        ++spacing;
        CHECK(a.bbox.x_min == col + 2);
        CHECK(a.bbox.x_max == col + 2 + g);
      }
    CHECK(spacing == (close ? 1 : 0));
  }
}

TEST_CASE("mrc examples") {
  RuleSet rules{3, 4, 16};
  BinaryRaster ones(Bits::Ones(32, 32));
  CHECK(check_mrc(ones, rules).empty());
  LayoutConfig lc;
  lc.injection_rate = 0;
  const auto clean = generate_layout(11, lc).raster;
  CHECK(check_drc(clean, lc.rules).empty());
  CHECK(check_mrc(clean, rules).empty());
  BinaryRaster serif(32, 1.0);
  serif.pixels.block(8, 8, 12, 12).setOnes();
  serif.pixels.block(6, 19, 2, 1).setOnes();
  const auto v = check_mrc(serif, rules);
  bool hit = false;
  for (const auto& a : v) hit |= a.klass == HotspotClass::width && a.bbox.overlaps(PixelBox{19, 6, 20, 8});
  CHECK(hit);
}

TEST_CASE("lrc examples") {
  RuleSet rules;
  rules.pinch_width = 3;
  rules.min_box = 1;
  BinaryRaster layout(40, 1.0);
  layout.pixels.block(10, 4, 6, 30).setOnes();
  layout.pixels.block(24, 4, 6, 30).setOnes();
  CHECK(check_lrc(layout, layout, rules).empty());

  BinaryRaster pinch = layout;
  pinch.pixels.block(10, 15, 6, 5).setZero();
  pinch.pixels.block(12, 15, 1, 5).setOnes();
  int pinches = 0;
  for (const auto& a : check_lrc(pinch, layout, rules))
    if (a.klass == HotspotClass::pinch) {
      ++pinches;
      CHECK(a.bbox.x_min == 15);
      CHECK(a.bbox.x_max == 20);
    }
  CHECK(pinches == 1);

  BinaryRaster fat(morph::dilate(layout.pixels, 7));
  const auto epe = check_lrc(fat, layout, rules);
  CHECK(!epe.empty());
  const auto edges = morph::edge_regions(layout.pixels);
  for (int r = 0; r < 40; ++r)
    for (int c = 0; c < 40; ++c)
      if (edges(r, c)) {
        bool covered = false;
        for (const auto& a : epe)
          covered |= a.klass == HotspotClass::epe && c >= a.bbox.x_min - 4 && c < a.bbox.x_max + 4 &&
                     r >= a.bbox.y_min - 4 && r < a.bbox.y_max + 4;
        CHECK(covered);
      }
  CHECK_THROWS_AS(check_lrc(BinaryRaster(20, 1.0), layout, rules), InputError);
}

TEST_CASE("layout generator") {
  LayoutConfig lc;
  const auto a = generate_layout(7, lc), b = generate_layout(7, lc);
  CHECK(a.raster == b.raster);
  lc.density = 0;
  const auto empty = generate_layout(7, lc);
  CHECK(empty.raster.empty());
  CHECK(empty.defects.empty());
  lc = LayoutConfig{};
  int planted = 0;
  for (int s = 0; s < 1000; ++s) {
    const auto g = generate_layout(1000 + s, lc);
    planted += !g.defects.empty();
    if (s % 50 == 0 && !g.defects.empty()) {
      const auto v = check_drc(g.raster, lc.rules);
      for (const auto& d : g.defects) {
        bool hit = false;
        for (const auto& x : v) hit |= box_iou(x.bbox, d.bbox) > 0;
        CHECK(hit);
      }
    }
  }
  CHECK(planted >= 250);
  CHECK(planted <= 350);
  lc.size = 0;
  CHECK_THROWS_AS(generate_layout(1, lc), ConfigError);
}

TEST_CASE("split quota and grid") {
  const auto s = assign_splits(42, 200, 0.85);
  CHECK(std::count(s.begin(), s.end(), Split::train) == 170);
  CHECK(assign_splits(42, 200, 0.85) == s);
  CorpusConfig c;
  c.sources = {SourceType::annular, SourceType::circular};
  CHECK(c.condition_grid().size() == 16);
  CHECK(CorpusConfig{}.condition_grid().size() == 24);
}

TEST_CASE("corpus build is deterministic across worker counts") {
  const fs::path root = fs::temp_directory_path() / "lithomt_test_corpus";
  fs::remove_all(root);
  auto cfg = small_config(12);
  cfg.workers = 1;
  const auto m1 = build_corpus(cfg, root / "a");
  cfg.workers = 3;
  const auto m2 = build_corpus(cfg, root / "b");
  CHECK(m1.content_hash == m2.content_hash);
  CHECK(tree_digest(root / "a") == tree_digest(root / "b"));
  CHECK(m1.condition_grid.size() == 8);
  CHECK(m1.count(Split::train) + m1.count(Split::test) == 12);

  const auto loaded = load_manifest(root / "a");
  CHECK(loaded.records.size() == 12);
  CHECK(loaded.content_hash == m1.content_hash);
  for (const auto& r : loaded.records) {
    const auto s = load_sample(root / "a", loaded, r);
    CHECK(simulate_contour(s.mask, s.condition, cfg.optics) == s.contour);
    CHECK(s.layout.same_shape(s.mask));
    CHECK(fs::exists(root / "a" / to_string(r.split) / (r.id + "_layout.png")));
  }
  CHECK_THROWS_AS(build_corpus(cfg, "/proc/lithomt_cannot_write"), IoError);
  fs::remove_all(root);
}

TEST_CASE("process conditions are distinguishable") {
  LayoutConfig lc;
  const auto c0 = make_condition(SourceType::circular, 0.0923125, 0, 1.0);
  const auto c1 = make_condition(SourceType::circular, 0.0923125, 50, 1.2);
  int nonempty = 0, differ = 0;
  for (int s = 0; s < 40; ++s) {
    const auto l = generate_layout(300 + s, lc).raster;
    if (l.empty()) continue;
    ++nonempty;
    differ += !(simulate_contour(l, c0) == simulate_contour(l, c1));
  }
  CHECK(differ >= 0.9 * nonempty);
}
