// Acceptance suite: one PASS/FAIL line per criterion, thresholds fixed below.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "fd_oracle.hpp"
#include "trajguard/blackbox.hpp"
#include "trajguard/image_io.hpp"
#include "trajguard/metrics.hpp"
#include "trajguard/models.hpp"
#include "trajguard/parallel.hpp"
#include "trajguard/pipeline.hpp"
#include "trajguard/toy_data.hpp"
#include "trajguard/whitebox.hpp"

using namespace trajguard;
using trajguard::testing::central_difference;
using trajguard::testing::relative_error;
using trajguard::testing::uniform_tensor;

namespace {

// Tolerances and limits.
constexpr double kReparamTol = 1e-10;
constexpr double kRoundTripTol = 1e-4;
constexpr double kProjectionTol = 1e-6;
constexpr int kProjectionPairs = 1000;
constexpr double kFdTol = 1e-3;
constexpr int kFdProbes = 10;
constexpr double kNesLinearCos = 0.95;
constexpr double kNesQuadCos = 0.9;
constexpr int kNesQuadMinGood = 95;  // of 100 seeds
constexpr double kWhiteboxDsr = 0.90;
constexpr double kWhiteboxSsim = 0.85;
constexpr double kBlackboxDsr = 0.60;
constexpr double kAvgTol = 1e-9;
constexpr double kFlatAucTol = 1e-12;

constexpr double kLimit1 = 5, kLimit2 = 1, kLimit3 = 30, kLimit4 = 60, kLimit5 = 600,
                 kLimit6 = 1800, kLimit8 = 900;

constexpr std::uint64_t kBatchSeed = 42;
constexpr int kBatchSize = 20;
constexpr std::uint64_t kDenoiserSeed = 1;
constexpr std::uint64_t kEditorSeed = 2;

int failures = 0;

void report(int id, const std::string& title, bool ok, const std::string& detail) {
  std::printf("%s [%d] %s: %s\n", ok ? "PASS" : "FAIL", id, title.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

template <typename Fn>
double timed(Fn&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  fn();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string runtime(double secs, double limit) { return fmt("%.2f s (< %g s)", secs, limit); }

int workers() { return std::max(1, static_cast<int>(std::thread::hardware_concurrency())); }

// Runs one criterion; an escaped exception counts as a failure with its message.
void criterion(int id, const std::string& title, const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    report(id, title, false, std::string("exception: ") + e.what());
  }
}

Tensor vec2(double a, double b) { return Tensor(Shape{1, 1, 2}, {a, b}); }

struct Scratch {
  explicit Scratch(const std::string& name)
      : root(fs::temp_directory_path() / ("trajguard_acceptance_" + name)) {
    fs::remove_all(root);
    fs::create_directories(root / "in");
    const auto batch = make_toy_batch(kBatchSeed, kBatchSize);
    for (int i = 0; i < kBatchSize; ++i) {
      char n[32];
      std::snprintf(n, sizeof n, "toy_%03d.png", i);
      write_png(root / "in" / n, batch[i]);
    }
  }
  ~Scratch() { fs::remove_all(root); }

  RunConfig config(DefenseMode mode) const {
    RunConfig cfg;
    cfg.mode = mode;
    cfg.seed = kBatchSeed;
    cfg.input_dir = root / "in";
    cfg.out_dir = root / "out";
    cfg.workers = workers();
    cfg.denoiser.seed = kDenoiserSeed;
    cfg.manipulator.seed = kEditorSeed;
    return cfg;
  }

  fs::path root;
};

void ddim_exactness() {
  double reparam = 0.0, round_trip = 0.0;
  const double secs = timed([&] {
    const auto sched = build_linear_schedule();
    Rng rng(1);
    for (int t : {1, 10, 50, 100, 250, 500, 750, 999, 1000}) {
      const Tensor x0 = uniform_tensor(rng, {3, 16, 16});
      const Tensor eps = rng.normal_tensor(x0.shape());
      const auto xt = forward_diffuse({x0, 0}, t, eps, sched);
      reparam = std::max(reparam, max_abs_diff(predict_x0(xt, eps, t, sched), x0));
    }
    for (double c : {-0.2, -0.1, 0.0, 0.05, 0.2})
      for (int t1 : {10, 50, 100}) {
        const Tensor x0 = uniform_tensor(rng, {3, 16, 16});
        const LinearDenoiser d(c);
        const auto rec = reconstruct(x0, d, sched, make_timestep_plan(t1, t1));
        round_trip = std::max(round_trip, max_abs_diff(rec.data, x0));
      }
  });
  report(1, "DDIM exactness", reparam <= kReparamTol && round_trip <= kRoundTripTol && secs < kLimit1,
         fmt("reparameterization max err %.2e (<= %g), linear round trip max err %.2e (<= %g), ",
             reparam, kReparamTol, round_trip, kRoundTripTol) +
             runtime(secs, kLimit1));
}

void projection() {
  bool examples = false;
  double worst = 0.0;
  const double secs = timed([&] {
    const Tensor g1 = vec2(1, 0), g2 = vec2(-1, 1);
    const auto aligned = gradient_projection(vec2(1, 0), vec2(1, 1), {1.0, 1.0, 2.0, 3.0});
    examples = project_orthogonal(g1, g2) == vec2(0.5, 0.5) &&
               project_orthogonal(g2, g1) == vec2(0, 1) &&
               gradient_projection(g1, g2, {}).branch == ProjectionBranch::conflicting &&
               aligned.branch == ProjectionBranch::aligned && aligned.direction == vec2(1, 3);
    Rng rng(2);
    for (int i = 0; i < kProjectionPairs; ++i) {
      const Tensor a = rng.normal_tensor({1, 1, 8}), b = rng.normal_tensor({1, 1, 8});
      const Tensor p = project_orthogonal(a, b);
      const double scale = norm(a) * norm(b);
      worst = std::max(worst, std::abs(dot(p, b)) / scale);
      worst = std::max(worst, max_abs_diff(project_orthogonal(p, b), p) / norm(a));
    }
  });
  report(2, "gradient projection", examples && worst <= kProjectionTol && secs < kLimit2,
         fmt("worked examples %s, worst orthogonality/idempotence %.2e over %d pairs (<= %g), ",
             examples ? "exact" : "MISMATCH", worst, kProjectionPairs, kProjectionTol) +
             runtime(secs, kLimit2));
}

void finite_differences() {
  std::vector<std::pair<std::string, double>> errors;
  const double secs = timed([&] {
    const Shape s{3, 8, 8};
    ManipulatorOptions opt;
    opt.shape = s;
    const auto conv = make_toy_denoiser(4, DenoiserKind::convolutional);
    const auto lin = make_toy_denoiser(4, DenoiserKind::linear);
    std::vector<std::pair<std::string, std::shared_ptr<const DifferentiableMap>>> maps{
        {"attribute-editor", make_toy_manipulator(1, ManipulatorKind::attribute_editor, opt)},
        {"face-swapper", make_toy_manipulator(1, ManipulatorKind::face_swapper, opt)},
        {"identity-encoder", make_toy_identity_encoder(2, 32, s)},
        {"linear-manipulator", make_random_linear_manipulator(3, s)},
        {"conv-denoiser@25", std::make_shared<TimestepBound>(*conv, 25)},
        {"linear-denoiser@25", std::make_shared<TimestepBound>(*lin, 25)}};
    Rng rng(3);
    for (const auto& [name, m] : maps) {
      double worst = 0.0;
      for (int p = 0; p < kFdProbes; ++p) {
        const Tensor x = uniform_tensor(rng, s, -0.9, 0.9);
        const Tensor w = rng.normal_tensor(m->forward(x).shape());
        const Tensor numeric =
            central_difference([&](const Tensor& z) { return dot(w, m->forward(z)); }, x);
        worst = std::max(worst, relative_error(m->vjp(x, w), numeric));
      }
      errors.emplace_back(name, worst);
    }
  });
  double worst = 0.0;
  std::string which;
  for (const auto& [name, e] : errors)
    if (e >= worst) {
      worst = e;
      which = name;
    }
  report(3, "finite-difference audit", worst <= kFdTol && secs < kLimit3,
         fmt("%zu maps x %d probes, worst relative error %.2e (%s, <= %g), ", errors.size(),
             kFdProbes, worst, which.c_str(), kFdTol) +
             runtime(secs, kLimit3));
}

void nes() {
  double linear_cos = 0.0;
  int good = 0;
  bool counts = true;
  const double secs = timed([&] {
    const Shape v{1, 1, 16};
    auto cosine = [](const Tensor& a, const Tensor& b) { return dot(a, b) / (norm(a) * norm(b)); };
    Rng wr(7);
    const Tensor w = wr.normal_tensor(v);
    const Tensor x = uniform_tensor(wr, v);
    Tensor mean(v);
    Rng rng(99);
    for (int e = 0; e < 200; ++e)
      mean += nes_gradient([&](const Tensor& z) { return dot(w, z); }, x, {.samples = 64}, rng);
    linear_cos = cosine(mean, w);

    Tensor e1(v);
    e1[0] = 1.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Rng r(seed);
      std::uint64_t calls = 0;
      const ScalarQuery loss = [&](const Tensor& z) {
        ++calls;
        return 0.5 * dot(z, z);
      };
      good += cosine(nes_gradient(loss, e1, {.samples = 256, .sigma = 1e-3}, r), e1) >= kNesQuadCos;
      counts = counts && calls == 2 * 256;
    }
  });
  report(4, "NES estimator",
         linear_cos >= kNesLinearCos && good >= kNesQuadMinGood && counts && secs < kLimit4,
         fmt("linear mean-of-200 cosine %.4f (>= %g), quadratic %d/100 seeds >= %g (>= %d), "
             "queries per estimate %s, ",
             linear_cos, kNesLinearCos, good, kNesQuadCos, kNesQuadMinGood,
             counts ? "= 2n" : "WRONG") +
             runtime(secs, kLimit4));
}

struct BatchScore {
  double dsr = 0.0;
  double ssim = 0.0;
};

// Scores 8-bit stored protected images against the clean batch.
BatchScore score(const std::vector<Tensor>& clean, const std::vector<Tensor>& adv, const Model& m) {
  EvaluationReport rep;
  const MetricsConfig mc;
  for (std::size_t i = 0; i < clean.size(); ++i)
    rep.rows.push_back(evaluate_pair(std::to_string(i), clean[i], quantize_8bit(adv[i]), m,
                                     Task::attribute_editing, mc));
  aggregate(rep, mc);
  return {rep.dsr, rep.mean_in_ssim};
}

void whitebox_efficacy() {
  BatchScore s;
  const double secs = timed([&] {
    const auto batch = make_toy_batch(kBatchSeed, kBatchSize);
    const auto denoiser = make_toy_denoiser(kDenoiserSeed, DenoiserKind::convolutional);
    const auto editor = make_toy_manipulator(kEditorSeed, ManipulatorKind::attribute_editor);
    const auto sched = build_linear_schedule();
    const WhiteBoxConfig cfg;
    std::vector<Tensor> adv(batch.size());
    parallel_for(batch.size(), workers(), [&](std::size_t i) {
      adv[i] = protect_whitebox(batch[i], *editor, *denoiser, cfg, sched).adversarial_image.data;
    });
    s = score(batch, adv, *editor);
  });
  report(5, "white-box efficacy", s.dsr >= kWhiteboxDsr && s.ssim >= kWhiteboxSsim && secs < kLimit5,
         fmt("DSR %.1f%% (>= %.0f%%), input SSIM %.4f (>= %g) on %d toy images, ", 100 * s.dsr,
             100 * kWhiteboxDsr, s.ssim, kWhiteboxSsim, kBatchSize) +
             runtime(secs, kLimit5));
}

void blackbox_efficacy() {
  BatchScore s;
  bool exact = true;
  std::uint64_t expected = 0;
  const double secs = timed([&] {
    const auto batch = make_toy_batch(kBatchSeed, kBatchSize);
    const auto denoiser = make_toy_denoiser(kDenoiserSeed, DenoiserKind::convolutional);
    const std::shared_ptr<const Model> editor =
        make_toy_manipulator(kEditorSeed, ManipulatorKind::attribute_editor);
    const auto sched = build_linear_schedule();
    const BlackBoxConfig base;
    expected = expected_blackbox_queries(base);
    std::vector<Tensor> adv(batch.size());
    std::vector<char> ok(batch.size(), 0);
    parallel_for(batch.size(), workers(), [&](std::size_t i) {
      BlackBoxConfig cfg = base;
      char name[32];
      std::snprintf(name, sizeof name, "toy_%03zu.png", i);
      cfg.nes.seed = derive_seed(kBatchSeed, fnv1a64(name));
      const auto oracle = wrap_black_box(editor);
      const auto r = protect_blackbox(batch[i], *oracle, *denoiser, cfg, sched);
      adv[i] = r.adversarial_image.data;
      ok[i] = r.queries == expected && oracle->query_count() == expected;
    });
    for (char c : ok) exact = exact && c;
    s = score(batch, adv, *editor);
  });
  report(6, "black-box efficacy", s.dsr >= kBlackboxDsr && exact && secs < kLimit6,
         fmt("DSR %.1f%% (>= %.0f%%), input SSIM %.4f, queries per image %s %llu = K*t*2n+K+1, ",
             100 * s.dsr, 100 * kBlackboxDsr, s.ssim, exact ? "all" : "NOT all",
             static_cast<unsigned long long>(expected)) +
             runtime(secs, kLimit6));
}

bool non_decreasing(const AblationTable& t) {
  for (std::size_t i = 1; i < t.rows.size(); ++i)
    if (t.rows[i].l2 < t.rows[i - 1].l2) return false;
  return true;
}

std::string l2_column(const AblationTable& t) {
  std::string s;
  for (const auto& r : t.rows) s += (s.empty() ? "" : "/") + fmt("%.3f", r.l2);
  return s;
}

void ablation_trends() {
  Scratch ws("ablate");
  AblationTable t2, t, gp;
  int conflicting = 0, projections = 0;
  const double secs = timed([&] {
    AblationPlan plan;
    plan.base = ws.config(DefenseMode::whitebox);
    plan.axis = AblationAxis::t2;
    plan.values = {6, 10, 15, 20};
    t2 = run_ablate(plan);
    plan.axis = AblationAxis::inject_step_t;
    plan.values = {1, 3, 5, 7, 10};
    t = run_ablate(plan);
    plan.axis = AblationAxis::gradient_projection;
    plan.values = {0, 1};
    gp = run_ablate(plan);
    const auto summary = run_protect(plan.base);
    for (const auto& f : summary.files) {
      const Bytes b = read_file(plan.base.out_dir / "traces" / (fs::path(f.name).stem().string() + ".jsonl"));
      const std::string text(b.begin(), b.end());
      for (std::size_t p = text.find("\"branch\""); p != std::string::npos;
           p = text.find("\"branch\"", p + 1)) {
        ++projections;
        conflicting += text.compare(p, 22, "\"branch\":\"conflicting") == 0;
      }
    }
  });
  const double off = gp.rows[0].distorted_dsr.at(DistortionKind::jpeg);
  const double on = gp.rows[1].distorted_dsr.at(DistortionKind::jpeg);
  const bool ok = non_decreasing(t2) && non_decreasing(t) && on >= off;
  report(7, "ablation trends", ok,
         fmt("L2 over T2 {6,10,15,20}: %s (%s); over t {1,3,5,7,10}: %s (%s); "
             "DSR at JPEG 70 GP off %.1f%% / on %.1f%% (on >= off; conflicting branch taken in "
             "%d of %d projections), %.1f s",
             l2_column(t2).c_str(), non_decreasing(t2) ? "non-decreasing" : "DECREASES",
             l2_column(t).c_str(), non_decreasing(t) ? "non-decreasing" : "DECREASES", 100 * off,
             100 * on, conflicting, projections, secs));
}

void sweep_harness() {
  Scratch ws("sweep");
  SweepResult r;
  double flat = 0.0;
  const double secs = timed([&] {
    const RunConfig cfg = ws.config(DefenseMode::whitebox);
    run_protect(cfg);
    r = run_sweep(cfg);
    RobustnessCurve unit{DistortionKind::jpeg, "dsr", {}};
    for (double q : default_grid(DistortionKind::jpeg))
      unit.points.push_back({q, normalized_parameter(DistortionKind::jpeg, q), 1.0});
    flat = auc(unit);
  });
  const double mean = (r.auc.p[0] + r.auc.p[1] + r.auc.p[2] + r.auc.p[3]) / 4.0;
  const double avg_err = std::abs(r.auc.avg - mean);
  report(8, "robustness harness",
         avg_err <= kAvgTol && std::abs(flat - 1.0) <= kFlatAucTol && secs < kLimit8,
         fmt("AUC P1..P4 %.4f %.4f %.4f %.4f, Avg %.4f (|Avg - mean| %.1e <= %g), flat unit AUC "
             "%.12f, full sweep incl. protect ",
             r.auc.p[0], r.auc.p[1], r.auc.p[2], r.auc.p[3], r.auc.avg, avg_err, kAvgTol, flat) +
             runtime(secs, kLimit8));
}

// Every regular file under dir, keyed by relative path.
std::map<std::string, Bytes> snapshot(const fs::path& dir) {
  std::map<std::string, Bytes> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = read_file(e.path());
  return files;
}

void determinism() {
  Scratch ws("determinism");
  std::size_t compared = 0;
  bool same = true;
  const double secs = timed([&] {
    write_file_atomic(ws.root / "white.json",
                      std::string(R"({"schema_version": 1, "mode": "whitebox", "seed": 42,
                                      "input_dir": "in"})"));
    write_file_atomic(ws.root / "black.json",
                      std::string(R"({"schema_version": 1, "mode": "blackbox", "seed": 42,
                                      "input_dir": "in", "blackbox": {"nes": {"samples": 4}}})"));
    for (const char* mode : {"white", "black"}) {
      std::map<std::string, Bytes> runs[2];
      for (int run = 0; run < 2; ++run) {
        const std::string cfg = (ws.root / (std::string(mode) + ".json")).string();
        const std::string out = (ws.root / fmt("%s_%d", mode, run)).string();
        for (const char* cmd : {"protect", "evaluate"}) {
          const char* argv[] = {"trajguard", cmd, "--config", cfg.c_str(), "--out-dir", out.c_str()};
          std::ostringstream o, e;
          if (run_cli(6, argv, o, e) != 0) throw std::runtime_error(std::string(cmd) + ": " + e.str());
        }
        runs[run] = snapshot(out);
      }
      same = same && runs[0] == runs[1];
      compared += runs[0].size();
    }
  });
  report(9, "determinism", same && compared > 0,
         fmt("protect+evaluate rerun (white-box and black-box): %zu output files %s, %.1f s",
             compared, same ? "byte-identical" : "DIFFER", secs));
}

}  // namespace

int main() {
  criterion(1, "DDIM exactness", ddim_exactness);
  criterion(2, "gradient projection", projection);
  criterion(3, "finite-difference audit", finite_differences);
  criterion(4, "NES estimator", nes);
  criterion(5, "white-box efficacy", whitebox_efficacy);
  criterion(6, "black-box efficacy", blackbox_efficacy);
  criterion(7, "ablation trends", ablation_trends);
  criterion(8, "robustness harness", sweep_harness);
  criterion(9, "determinism", determinism);
  std::printf("%d of 9 criteria passed\n", 9 - failures);
  return failures == 0 ? 0 : 1;
}
