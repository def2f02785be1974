#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "fd_oracle.hpp"
#include "trajguard/metrics.hpp"
#include "trajguard/models.hpp"
#include "trajguard/toy_data.hpp"
#include "trajguard/whitebox.hpp"

using namespace trajguard;
using trajguard::testing::uniform_tensor;

namespace {

Tensor vec2(double a, double b) { return Tensor(Shape{1, 1, 2}, {a, b}); }

// NaN wherever the input is positive.
class Exploding final : public DifferentiableMap {
 public:
  Tensor forward(const Tensor& x) const override {
    Tensor y = x;
    for (double& v : y.raw())
      if (v > 0.0) v = std::nan("");
    return y;
  }
  Tensor vjp(const Tensor&, const Tensor& up) const override { return up; }
  std::string name() const override { return "exploding"; }
};

}  // namespace

TEST_CASE("adversarial loss") {
  CHECK(adversarial_loss(vec2(0, 0), vec2(1, 1)) == doctest::Approx(1.0));
  CHECK(adversarial_loss(vec2(1, 2), vec2(1, 2)) == 0.0);
  Rng rng(3);
  const Tensor a = uniform_tensor(rng, {2, 4, 4});
  const Tensor b = uniform_tensor(rng, {2, 4, 4});
  Tensor a3 = a, b3 = b;
  a3 *= 3.0;
  b3 *= 3.0;
  CHECK(adversarial_loss(a3, b3) == doctest::Approx(9.0 * adversarial_loss(a, b)).epsilon(1e-12));
}

TEST_CASE("gradient projection worked examples") {
  SUBCASE("conflicting") {
    const Tensor g1 = vec2(1, 0), g2 = vec2(-1, 1);
    CHECK(project_orthogonal(g1, g2) == vec2(0.5, 0.5));
    CHECK(project_orthogonal(g2, g1) == vec2(0, 1));
    const auto G = gradient_projection(g1, g2, {});
    CHECK(G.branch == ProjectionBranch::conflicting);
    CHECK(G.direction == vec2(-0.5, 0.5));
  }
  SUBCASE("aligned") {
    const auto G = gradient_projection(vec2(1, 0), vec2(1, 1), {1.0, 1.0, 2.0, 3.0});
    CHECK(G.branch == ProjectionBranch::aligned);
    CHECK(G.direction == vec2(1, 3));
  }
  SUBCASE("orthogonal pair takes the conflicting branch and is unchanged by projection") {
    const auto G = gradient_projection(vec2(2, 0), vec2(0, 5), {});
    CHECK(G.branch == ProjectionBranch::conflicting);
    CHECK(G.direction == vec2(-2, 5));
  }
  SUBCASE("zero gradient is degenerate") {
    const auto G = gradient_projection(vec2(0, 0), vec2(1, 1), {1, 1, 2, 3});
    CHECK(G.branch == ProjectionBranch::degenerate);
    CHECK(G.direction == vec2(3, 3));
  }
  SUBCASE("disabled always combines plainly") {
    const auto G = gradient_projection(vec2(1, 0), vec2(-1, 1), {}, false);
    CHECK(G.branch == ProjectionBranch::aligned);
    CHECK(G.direction == vec2(-2, 1));
  }
  CHECK_THROWS_AS(gradient_projection(vec2(1, 0), Tensor(Shape{1, 1, 3}), {}), ParameterError);
}

TEST_CASE("projection invariants over random pairs") {
  Rng rng(2024);
  int conflicting = 0;
  for (int i = 0; i < 1000; ++i) {
    const Shape s{1, 1, 2 + static_cast<int>(rng.next() % 30)};
    const Tensor g1 = rng.normal_tensor(s);
    const Tensor g2 = rng.normal_tensor(s);
    const Tensor p12 = project_orthogonal(g1, g2);
    const Tensor p21 = project_orthogonal(g2, g1);
    CHECK(std::abs(dot(p12, g2)) <= 1e-6 * norm(g1) * norm(g2));
    CHECK(std::abs(dot(p21, g1)) <= 1e-6 * norm(g1) * norm(g2));
    CHECK(max_abs_diff(project_orthogonal(p12, g2), p12) <= 1e-6);
    CHECK(max_abs_diff(project_orthogonal(p21, g1), p21) <= 1e-6);
    const auto G = gradient_projection(g1, g2, {});
    if (G.branch == ProjectionBranch::conflicting) {
      ++conflicting;
      CHECK(dot(g1, g2) <= 0.0);
    } else {
      CHECK(dot(g1, g2) > 0.0);
    }
  }
  CHECK(conflicting > 300);
  CHECK(conflicting < 700);
}

TEST_CASE("projection is continuous across the branch boundary with equal weights") {
  const ProjectionWeights w{1.0, 1.0, 1.0, 1.0};
  for (double eps : {1e-3, 1e-6, 1e-9}) {
    const auto a = gradient_projection(vec2(1, eps), vec2(0, 1), w);
    const auto b = gradient_projection(vec2(1, -eps), vec2(0, 1), w);
    CHECK(a.branch == ProjectionBranch::aligned);
    CHECK(b.branch == ProjectionBranch::conflicting);
    CHECK(max_abs_diff(a.direction, b.direction) <= 3 * eps);
  }
}

TEST_CASE("noise layer") {
  Rng rng(5);
  const LatentImage x{uniform_tensor(rng, {3, 6, 7}), 4};
  CHECK(noise_layer(x, 1, 1.0).data == x.data);
  const LatentImage flat{Tensor(Shape{3, 6, 7}, 0.25), 0};
  CHECK(max_abs_diff(noise_layer(flat, 3, 1.0).data, flat.data) <= 1e-15);

  Tensor impulse(Shape{1, 1, 5});
  impulse[2] = 1.0;
  const Tensor y = noise_layer({impulse, 0}, 3, 1.0).data;
  const double e = std::exp(-0.5);
  const double z = 1.0 + 2.0 * e;
  CHECK(y[0] == doctest::Approx(0.0));
  CHECK(y[1] == doctest::Approx(e / z).epsilon(1e-12));
  CHECK(y[2] == doctest::Approx(1.0 / z).epsilon(1e-12));
  CHECK(y[3] == doctest::Approx(e / z).epsilon(1e-12));
  CHECK(noise_layer(x, 3, 1.0).timestep == 4);
  CHECK_THROWS_AS(noise_layer(x, 4, 1.0), ParameterError);
}

TEST_CASE("guidance gradients") {
  const auto m = LinearManipulator::identity({1, 1, 3});
  const Tensor x(Shape{1, 1, 3}, {0.0, 0.0, 0.0});
  const Tensor xp(Shape{1, 1, 3}, {0.3, 0.0, -0.6});
  const auto gg = guidance_gradients(x, xp, *m, m->forward(x));
  CHECK(gg.g2 == Tensor(Shape{1, 1, 3}, {1.0 / 3, 0.0, -1.0 / 3}));
  CHECK(gg.fidelity_loss == doctest::Approx(0.3));
  CHECK(gg.adversarial_loss == doctest::Approx(0.15));
  for (int i = 0; i < 3; ++i) CHECK(gg.g1[i] == doctest::Approx(2.0 * xp[i] / 3.0));
}

TEST_CASE("inject step") {
  const auto sched = build_linear_schedule();
  const auto den = make_toy_denoiser(1, DenoiserKind::convolutional);
  const Shape s{3, 6, 6};
  const auto m = make_random_linear_manipulator(9, s, 0.3);
  Rng rng(11);
  const Tensor x_clean = uniform_tensor(rng, s);
  const Tensor clean_out = m->forward(x_clean);
  const LatentImage xt{uniform_tensor(rng, s), 20};
  const LatentImage plain = ddim_step(xt, *den, 20, 15, sched);

  SUBCASE("alpha = 0 and inactive steps are plain DDIM") {
    CHECK(inject_step(xt, *den, *m, clean_out, 20, 15, 0.0, sched, true).data == plain.data);
    CHECK(inject_step(xt, *den, *m, clean_out, 20, 15, 5.0, sched, false).data == plain.data);
  }
  SUBCASE("closed form for a linear manipulator") {
    const double alpha = 0.7;
    const auto& B = m->matrix();
    const std::size_t n = s.numel();
    std::vector<double> r(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) r[i] += B[i * n + j] * (plain.data[j] - x_clean[j]);
    Tensor expected = plain.data;
    for (std::size_t j = 0; j < n; ++j) {
      double g = 0.0;
      for (std::size_t i = 0; i < n; ++i) g += B[i * n + j] * r[i];
      expected[j] += alpha * 2.0 * g / static_cast<double>(n);
    }
    TraceRecord rec;
    const auto got = inject_step(xt, *den, *m, clean_out, 20, 15, alpha, sched, true, &rec);
    CHECK(max_abs_diff(got.data, expected) <= 1e-6);
    CHECK(got.timestep == 15);
    CHECK(rec.active);
    CHECK(rec.timestep == 20);
    CHECK(rec.gradient_norm > 0.0);
  }
  SUBCASE("small steps ascend the adversarial loss") {
    const double base = adversarial_loss(clean_out, m->forward(plain.data));
    for (double alpha : {1e-3, 1e-2, 1e-1}) {
      const auto got = inject_step(xt, *den, *m, clean_out, 20, 15, alpha, sched, true);
      CHECK(adversarial_loss(clean_out, m->forward(got.data)) > base);
    }
  }
}

TEST_CASE("config validation") {
  WhiteBoxConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  auto bad = [&](auto mutate) {
    WhiteBoxConfig c;
    mutate(c);
    CHECK_THROWS_AS(c.validate(), ParameterError);
  };
  bad([](WhiteBoxConfig& c) { c.t2 = 60; });
  bad([](WhiteBoxConfig& c) { c.t2 = 0; });
  bad([](WhiteBoxConfig& c) { c.inject_steps = 11; });
  bad([](WhiteBoxConfig& c) { c.inject_steps = 0; });
  bad([](WhiteBoxConfig& c) { c.iterations = 0; });
  bad([](WhiteBoxConfig& c) { c.alpha = -1.0; });
  bad([](WhiteBoxConfig& c) { c.mu2 = -1.0; });
  bad([](WhiteBoxConfig& c) { c.noise_layer.kernel = 2; });
  CHECK(parse_outer_update_sign("ascent") == OuterUpdateSign::ascent);
  CHECK_THROWS_AS(parse_outer_update_sign("up"), ParameterError);
}

TEST_CASE("protect_whitebox") {
  const auto sched = build_linear_schedule();
  const auto den = make_toy_denoiser(1, DenoiserKind::convolutional);
  const auto m = make_toy_manipulator(2, ManipulatorKind::attribute_editor, {.shape = {3, 16, 16}});
  const Tensor x = make_toy_face(7, {3, 16, 16});

  SUBCASE("zero step and zero weights reproduce the plain reconstruction") {
    WhiteBoxConfig cfg;
    cfg.alpha = 0.0;
    cfg.lambda1 = cfg.mu1 = cfg.lambda2 = cfg.mu2 = 0.0;
    const auto r = protect_whitebox(x, *m, *den, cfg, sched);
    const auto rec = reconstruct(x, *den, sched, make_timestep_plan(cfg.t1, cfg.t2));
    CHECK(r.adversarial_image.data == clamp(rec.data, -1.0, 1.0));
  }
  SUBCASE("trace layout") {
    WhiteBoxConfig cfg;
    cfg.iterations = 2;
    cfg.inject_steps = 4;
    const auto r = protect_whitebox(x, *m, *den, cfg, sched);
    REQUIRE(r.trace.size() == 2u * (10 + 1));
    int active = 0, projections = 0;
    for (const auto& rec : r.trace) {
      if (rec.kind == RecordKind::projection) {
        ++projections;
        CHECK(rec.branch != ProjectionBranch::none);
      } else if (rec.active) {
        ++active;
        CHECK(rec.step >= 6);
      }
    }
    CHECK(active == 8);
    CHECK(projections == 2);
    std::ostringstream os;
    write_trace_jsonl(os, r.trace);
    const std::string s = os.str();
    CHECK(std::count(s.begin(), s.end(), '\n') == 22);
  }
  SUBCASE("deterministic") {
    const WhiteBoxConfig cfg;
    CHECK(protect_whitebox(x, *m, *den, cfg, sched).adversarial_image.data ==
          protect_whitebox(x, *m, *den, cfg, sched).adversarial_image.data);
  }
  SUBCASE("default config disrupts the editor more than reconstruction alone") {
    const auto r = protect_whitebox(x, *m, *den, {}, sched);
    const auto rec = reconstruct(x, *den, sched, make_timestep_plan(50, 10));
    const double clean_gap = l2_distance(m->forward(x), m->forward(rec.data));
    const double adv_gap = l2_distance(m->forward(x), m->forward(r.adversarial_image.data));
    CHECK(adv_gap > 10 * clean_gap);
    CHECK(all_finite(r.adversarial_image.data));
    CHECK(max_abs_diff(r.adversarial_image.data, Tensor(x.shape())) <= 1.0);
  }
  SUBCASE("non-finite loss aborts with the partial trace") {
    Exploding boom;
    WhiteBoxConfig cfg;
    try {
      protect_whitebox(Tensor(Shape{3, 16, 16}, 0.5), boom, *den, cfg, sched);
      FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
      CHECK_FALSE(e.trace().empty());
    }
  }
}
