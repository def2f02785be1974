#include <cmath>
#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "fd_oracle.hpp"
#include "trajguard/distortions.hpp"
#include "trajguard/filters.hpp"
#include "trajguard/image_io.hpp"
#include "trajguard/metrics.hpp"
#include "trajguard/models.hpp"
#include "trajguard/toy_data.hpp"

using namespace trajguard;
using trajguard::testing::uniform_tensor;

namespace {

// Same pattern the reference values below were generated from (OpenCV, float64).
Tensor wave(int h, int w) {
  Tensor t(Shape{1, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      t.at(0, y, x) = std::sin(0.7 * x + 0.3 * y) * 0.6 + 0.1 * std::cos(1.3 * y);
  return t;
}

double sum(const Tensor& t) {
  double s = 0.0;
  for (double v : t.raw()) s += v;
  return s;
}

SweepMetric attribute_dsr(double threshold = 0.05) {
  return [threshold](const SweepBatch& b) {
    int hits = 0;
    for (std::size_t i = 0; i < b.clean_outputs.size(); ++i)
      hits += l2_distance(b.clean_outputs[i], b.distorted_outputs[i]) > threshold;
    return static_cast<double>(hits) / static_cast<double>(b.clean_outputs.size());
  };
}

}  // namespace

TEST_CASE("byte mapping") {
  CHECK(to_byte(-1.0) == 0);
  CHECK(to_byte(1.0) == 255);
  CHECK(to_byte(-7.0) == 0);
  CHECK(to_byte(3.0) == 255);
  CHECK(to_byte(std::nan("")) == 0);
  for (int b = 0; b < 256; ++b) CHECK(to_byte(from_byte(static_cast<std::uint8_t>(b))) == b);
  Rng rng(1);
  const Tensor x = uniform_tensor(rng, {3, 5, 5});
  CHECK(max_abs_diff(quantize_8bit(x), x) <= 1.0 / 255.0 + 1e-12);
}

TEST_CASE("png round trip is exact after quantization") {
  Rng rng(2);
  for (int c : {1, 3}) {
    const Tensor x = quantize_8bit(uniform_tensor(rng, {c, 7, 13}));
    const Tensor y = decode_png(encode_png(x));
    CHECK(y.shape() == x.shape());
    CHECK(max_abs_diff(x, y) == 0.0);
  }
  const auto dir = std::filesystem::temp_directory_path() / "trajguard_png_test";
  std::filesystem::create_directories(dir);
  const Tensor face = quantize_8bit(make_toy_face(4));
  write_png(dir / "face.png", face);
  CHECK(read_png(dir / "face.png") == face);
  CHECK_FALSE(std::filesystem::exists(dir / "face.png.tmp"));
  CHECK_THROWS_AS(decode_png(Bytes{1, 2, 3}), ImageError);
  CHECK_THROWS_AS(read_png(dir / "missing.png"), ImageError);
  CHECK_THROWS_AS(encode_png(Tensor(Shape{2, 4, 4})), ParameterError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("png text chunks") {
  const Tensor x = quantize_8bit(make_toy_face(1));
  const TextChunks text{{"config_hash", "00ff12ab"}, {"seed", "42"}};
  const Bytes png = encode_png(x, text);
  CHECK(read_png_text(png) == text);
  CHECK(decode_png(png) == x);
  CHECK(read_png_text(encode_png(x)).empty());
  CHECK(encode_png(x, text) == png);
  CHECK_THROWS_AS(read_png_text(Bytes{0x89, 'P', 'N', 'G'}), ImageError);
}

TEST_CASE("jpeg codec") {
  const Tensor face = make_toy_face(5);
  const Tensor q100 = jpeg_round_trip(face, 100);
  CHECK(q100.shape() == face.shape());
  CHECK(max_abs_diff(q100, face) <= 0.05);
  const double e90 = l2_distance(jpeg_round_trip(face, 90), face);
  const double e10 = l2_distance(jpeg_round_trip(face, 10), face);
  CHECK(e10 > e90);
  CHECK(jpeg_round_trip(face, 70) == jpeg_round_trip(face, 70));
  const Tensor gray = quantize_8bit(wave(9, 11));
  CHECK(max_abs_diff(jpeg_round_trip(gray, 100), gray) <= 0.05);
  CHECK_THROWS_AS(encode_jpeg(face, 0), ParameterError);
  CHECK_THROWS_AS(decode_jpeg(Bytes{0, 1, 2, 3}), ImageError);
  CHECK(codec_versions().find("libpng") != std::string::npos);
}

TEST_CASE("distortion parameter validation") {
  const auto validate = [](DistortionKind k, double p) { DistortionSpec{k, p}.validate(); };
  CHECK_NOTHROW(validate(DistortionKind::jpeg, 10));
  CHECK_THROWS_AS(validate(DistortionKind::jpeg, 9), ParameterError);
  CHECK_THROWS_AS(validate(DistortionKind::jpeg, 70.5), ParameterError);
  CHECK_THROWS_AS(validate(DistortionKind::gaussian_blur, 4), ParameterError);
  CHECK_THROWS_AS(validate(DistortionKind::average_blur, 21), ParameterError);
  CHECK_THROWS_AS(validate(DistortionKind::downscale, 0.0), ParameterError);
  CHECK_THROWS_AS(validate(DistortionKind::downscale, 1.5), ParameterError);
  CHECK(parse_distortion_kind("average_blur") == DistortionKind::average_blur);
  CHECK_THROWS_AS(parse_distortion_kind("median"), ParameterError);
}

TEST_CASE("identities and shapes") {
  Rng rng(6);
  const Tensor x = uniform_tensor(rng, {3, 12, 10});
  CHECK(apply_distortion(x, {DistortionKind::gaussian_blur, 1}) == x);
  CHECK(apply_distortion(x, {DistortionKind::average_blur, 1}) == x);
  CHECK(max_abs_diff(apply_distortion(x, {DistortionKind::downscale, 1.0}), x) <= 1e-6);
  for (DistortionKind k : all_distortion_kinds())
    for (double p : default_grid(k)) {
      CHECK(apply_distortion(x, {k, p}).shape() == x.shape());
      CHECK(apply({x, 7}, {k, p}).timestep == 7);
    }
}

TEST_CASE("average blur plateau") {
  Tensor impulse(Shape{1, 7, 7});
  impulse.at(0, 3, 3) = 1.0;
  const Tensor y = apply_distortion(impulse, {DistortionKind::average_blur, 3});
  for (int r = 0; r < 7; ++r)
    for (int c = 0; c < 7; ++c) {
      const bool inside = std::abs(r - 3) <= 1 && std::abs(c - 3) <= 1;
      CHECK(y.at(0, r, c) == doctest::Approx(inside ? 1.0 / 9.0 : 0.0).epsilon(1e-12));
    }
}

TEST_CASE("filters match OpenCV reference values") {
  const Tensor a = wave(9, 11);
  CHECK(gaussian_sigma_for_kernel(5) == doctest::Approx(1.1));
  const Tensor g = apply_distortion(a, {DistortionKind::gaussian_blur, 5});
  CHECK(g.at(0, 0, 0) == doctest::Approx(0.3975468617407068).epsilon(1e-9));
  CHECK(g.at(0, 4, 5) == doctest::Approx(-0.42771469172371296).epsilon(1e-9));
  CHECK(g.at(0, 8, 10) == doctest::Approx(0.299143381693049).epsilon(1e-9));
  CHECK(sum(g) == doctest::Approx(6.689755820220235).epsilon(1e-9));
  const Tensor g9 = apply_distortion(a, {DistortionKind::gaussian_blur, 9});
  CHECK(g9.at(0, 0, 0) == doctest::Approx(0.4256706199237914).epsilon(1e-9));
  CHECK(g9.at(0, 4, 5) == doctest::Approx(-0.2601212737092483).epsilon(1e-9));
  CHECK(sum(g9) == doctest::Approx(5.91827843239798).epsilon(1e-9));
  CHECK(gaussian_blur_kernel(11)[0] == doctest::Approx(0.008812229292562288).epsilon(1e-12));
  CHECK(gaussian_blur_kernel(11)[5] == doctest::Approx(0.20056541423882085).epsilon(1e-12));
  const Tensor b = apply_distortion(a, {DistortionKind::average_blur, 7});
  CHECK(b.at(0, 0, 0) == doctest::Approx(0.4059336413777043).epsilon(1e-9));
  CHECK(b.at(0, 4, 5) == doctest::Approx(-0.1431005959960964).epsilon(1e-9));
  CHECK(b.at(0, 8, 10) == doctest::Approx(0.421752612144385).epsilon(1e-9));
  CHECK(sum(b) == doctest::Approx(5.288765104890966).epsilon(1e-9));
  const Tensor d = resize_bilinear(resize_bilinear(a, 4, 6), 9, 11);
  CHECK(d.at(0, 0, 0) == doctest::Approx(0.3107389715509721).epsilon(1e-5));
  CHECK(d.at(0, 4, 5) == doctest::Approx(-0.4360116468020616).epsilon(1e-5));
  CHECK(d.at(0, 8, 10) == doctest::Approx(0.18846947627695732).epsilon(1e-5));
  CHECK(sum(d) == doctest::Approx(6.451368302637352).epsilon(1e-5));
}

TEST_CASE("auc") {
  CHECK(auc({{0.0, 1.0}, {1.0, 1.0}}) == doctest::Approx(1.0));
  CHECK(auc({{0.0, 0.5}, {0.3, 0.5}, {1.0, 0.5}}) == doctest::Approx(0.5));
  CHECK(auc({{0.0, 1.0}, {0.5, 0.0}, {1.0, 1.0}}) == doctest::Approx(0.5));
  CHECK(auc({{1.0, 1.0}, {0.0, 1.0}, {0.5, 0.0}}) == doctest::Approx(0.5));
  CHECK_THROWS_AS(auc({{0.0, 1.0}}), ParameterError);

  RobustnessCurve flat{DistortionKind::jpeg, "dsr", {}};
  for (double q : default_grid(DistortionKind::jpeg))
    flat.points.push_back({q, normalized_parameter(DistortionKind::jpeg, q), 1.0});
  CHECK(auc(flat) == doctest::Approx(1.0).epsilon(1e-12));
  flat.points.resize(4);  // QF 10..40 covers a third of the axis
  CHECK(auc(flat) == doctest::Approx(1.0).epsilon(1e-12));
  const RobustnessCurve single{DistortionKind::downscale, "dsr", {{1.0, 0.0, 0.35}}};
  CHECK(auc(single) == 0.35);
  CHECK_THROWS_AS(auc(RobustnessCurve{}), ParameterError);

  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::pair<double, double>> a, b, m;
    for (int i = 0; i <= 10; ++i) {
      const double x = i / 10.0;
      const double ya = rng.uniform(), yb = rng.uniform();
      a.emplace_back(x, ya);
      b.emplace_back(x, yb);
      m.emplace_back(x, std::max(ya, yb));
    }
    CHECK(auc(m) >= auc(a) - 1e-15);
    CHECK(auc(m) >= auc(b) - 1e-15);
  }
}

TEST_CASE("normalized axes") {
  for (DistortionKind k : all_distortion_kinds()) {
    const auto grid = default_grid(k);
    CHECK(grid.size() == 10u);
    std::vector<double> xs;
    for (double p : grid) xs.push_back(normalized_parameter(k, p));
    CHECK(*std::min_element(xs.begin(), xs.end()) == doctest::Approx(0.0));
    CHECK(*std::max_element(xs.begin(), xs.end()) == doctest::Approx(1.0));
  }
  CHECK(normalized_parameter(DistortionKind::jpeg, 100) == 0.0);
  CHECK(normalized_parameter(DistortionKind::average_blur, 19) == 1.0);
}

TEST_CASE("sweep") {
  const Shape s{3, 16, 16};
  const auto m = make_toy_manipulator(2, ManipulatorKind::attribute_editor, {.shape = s});
  const auto clean = make_toy_batch(3, 4, s);
  std::vector<Tensor> adv;
  Rng rng(10);
  for (const auto& x : clean) adv.push_back(clamp(x + rng.normal_tensor(s, 0.2), -1.0, 1.0));

  SUBCASE("constant metric gives a flat curve") {
    const auto c = sweep(adv, clean, *m, DistortionKind::gaussian_blur,
                         default_grid(DistortionKind::gaussian_blur),
                         [](const SweepBatch&) { return 1.0; });
    CHECK(c.points.size() == 10u);
    for (const auto& p : c.points) CHECK(p.value == 1.0);
    CHECK(auc(c) == doctest::Approx(1.0));
  }
  SUBCASE("identity grid matches the undistorted metric") {
    const auto metric = [&](const SweepBatch& b) {
      double t = 0.0;
      for (std::size_t i = 0; i < b.clean_outputs.size(); ++i)
        t += l2_distance(b.clean_outputs[i], b.distorted_outputs[i]);
      return t;
    };
    double direct = 0.0;
    for (std::size_t i = 0; i < clean.size(); ++i)
      direct += l2_distance(m->forward(clean[i]), m->forward(adv[i]));
    const auto c = sweep(adv, clean, *m, DistortionKind::average_blur, {1, 1, 1}, metric, "l2");
    for (const auto& p : c.points) CHECK(p.value == doctest::Approx(direct).epsilon(1e-12));
    const auto d = sweep(adv, clean, *m, DistortionKind::downscale, {1.0}, metric, "l2");
    CHECK(d.points[0].value == doctest::Approx(direct).epsilon(1e-6));
  }
  SUBCASE("stronger blur never raises DSR for a linear manipulator") {
    const Shape v{1, 12, 12};
    const auto lin = LinearManipulator::identity(v);
    std::vector<Tensor> cl, ad;
    for (int i = 0; i < 30; ++i) {
      Tensor base(v, 0.1 * (i % 5) - 0.2);
      cl.push_back(base);
      Tensor pert = base;
      for (int y = 0; y < 12; ++y)
        for (int x = 0; x < 12; ++x) pert.at(0, y, x) += 0.004 * (i + 1) * ((x + y) % 2 ? 1 : -1);
      ad.push_back(pert);
    }
    const auto c = sweep(ad, cl, *lin, DistortionKind::average_blur,
                         default_grid(DistortionKind::average_blur), attribute_dsr());
    for (std::size_t i = 1; i < c.points.size(); ++i)
      CHECK(c.points[i].value <= c.points[i - 1].value);
    CHECK(c.points.front().value > c.points.back().value);
  }
  SUBCASE("distorted clean outputs") {
    const DistortionSpec spec{DistortionKind::gaussian_blur, 5};
    const auto metric = [&](const SweepBatch& b) {
      double worst = 0.0;
      for (std::size_t i = 0; i < clean.size(); ++i)
        worst = std::max(worst, max_abs_diff(b.distorted_clean_outputs[i],
                                             m->forward(apply_distortion(clean[i], spec))));
      return worst;
    };
    const auto c = sweep(adv, clean, *m, spec.kind, {spec.parameter}, metric, "check");
    CHECK(c.points[0].value == 0.0);
  }
  SUBCASE("workers do not change the curve") {
    const auto grid = default_grid(DistortionKind::jpeg);
    const auto a = sweep(adv, clean, *m, DistortionKind::jpeg, grid, attribute_dsr(), "dsr", 1);
    const auto b = sweep(adv, clean, *m, DistortionKind::jpeg, grid, attribute_dsr(), "dsr", 3);
    for (std::size_t i = 0; i < grid.size(); ++i) CHECK(a.points[i].value == b.points[i].value);
  }
  SUBCASE("csv") {
    const auto c = sweep(adv, clean, *m, DistortionKind::downscale, {0.5, 1.0}, attribute_dsr());
    std::ostringstream os;
    write_curves_csv(os, {c});
    const std::string s0 = os.str();
    CHECK(s0.rfind("kind,parameter,metric,value\ndownscale,0.5,dsr,", 0) == 0);
  }
  CHECK_THROWS_AS(sweep(adv, {}, *m, DistortionKind::jpeg, {70}, attribute_dsr()),
                  ParameterError);
  CHECK_THROWS_AS(sweep(adv, clean, *m, DistortionKind::jpeg, {5}, attribute_dsr()),
                  ParameterError);
}
