#include "trajguard/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "trajguard/filters.hpp"

namespace trajguard {

double l2_distance(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "l2_distance");
  if (a.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s / static_cast<double>(a.size()));
}

double l1_distance(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "l1_distance");
  if (a.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

double psnr(const Tensor& a, const Tensor& b, double peak) {
  require_same_shape(a, b, "psnr");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
  mse /= static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

namespace {

// Valid-mode separable correlation of one channel plane.
std::vector<double> filter_valid(const std::vector<double>& plane, int h, int w,
                                 const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int ow = w - n + 1;
  const int oh = h - n + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += k[i] * plane[y * w + x + i];
      rows[y * ow + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow, 0.0);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += k[i] * rows[(y + i) * ow + x];
      out[y * ow + x] = acc;
    }
  return out;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b, int window, double data_range) {
  require_same_shape(a, b, "ssim");
  const Shape s = a.shape();
  if (window < 1 || window % 2 == 0) throw ParameterError("SSIM window must be odd");
  if (window > s.height || window > s.width)
    throw ParameterError("SSIM window " + std::to_string(window) + " exceeds image size " +
                         s.str());
  const auto k = gaussian_kernel(window, 1.5);
  const double c1 = std::pow(0.01 * data_range, 2);
  const double c2 = std::pow(0.03 * data_range, 2);
  const std::size_t plane = static_cast<std::size_t>(s.height) * s.width;
  double total = 0.0;
  std::size_t count = 0;
  for (int c = 0; c < s.channels; ++c) {
    std::vector<double> pa(plane), pb(plane), paa(plane), pbb(plane), pab(plane);
    for (std::size_t i = 0; i < plane; ++i) {
      pa[i] = a[c * plane + i];
      pb[i] = b[c * plane + i];
      paa[i] = pa[i] * pa[i];
      pbb[i] = pb[i] * pb[i];
      pab[i] = pa[i] * pb[i];
    }
    const auto ma = filter_valid(pa, s.height, s.width, k);
    const auto mb = filter_valid(pb, s.height, s.width, k);
    const auto maa = filter_valid(paa, s.height, s.width, k);
    const auto mbb = filter_valid(pbb, s.height, s.width, k);
    const auto mab = filter_valid(pab, s.height, s.width, k);
    for (std::size_t i = 0; i < ma.size(); ++i) {
      const double va = maa[i] - ma[i] * ma[i];
      const double vb = mbb[i] - mb[i] * mb[i];
      const double cov = mab[i] - ma[i] * mb[i];
      total += ((2 * ma[i] * mb[i] + c1) * (2 * cov + c2)) /
               ((ma[i] * ma[i] + mb[i] * mb[i] + c1) * (va + vb + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

double id_similarity(const Tensor& a, const Tensor& b, const IdentityEncoder& encoder) {
  return cosine_similarity(encoder.embed(a), encoder.embed(b));
}

Task parse_task(const std::string& s) {
  if (s == "attribute_editing" || s == "attribute-editing") return Task::attribute_editing;
  if (s == "face_swapping" || s == "face-swapping") return Task::face_swapping;
  throw ParameterError("unknown task '" + s + "'");
}

std::string to_string(Task t) {
  return t == Task::attribute_editing ? "attribute_editing" : "face_swapping";
}

void MetricsConfig::validate() const {
  if (!(dsr_l2_threshold > 0) || !(dsr_idsim_threshold > 0))
    throw ParameterError("DSR thresholds must be > 0");
  if (!(psnr_peak > 0)) throw ParameterError("PSNR peak must be > 0");
  if (ssim_window < 1 || ssim_window % 2 == 0) throw ParameterError("SSIM window must be odd");
}

bool row_success(const MetricRow& row, Task task, const MetricsConfig& cfg) {
  if (task == Task::attribute_editing) return row.out_l2 > cfg.dsr_l2_threshold;
  if (!row.id_sim) throw ParameterError("face-swapping DSR needs id_sim on every row");
  return *row.id_sim < cfg.dsr_idsim_threshold;
}

double dsr(const std::vector<MetricRow>& rows, Task task, const MetricsConfig& cfg) {
  if (rows.empty()) throw ParameterError("DSR over an empty set of rows");
  std::size_t hits = 0;
  for (const auto& r : rows) hits += row_success(r, task, cfg);
  return static_cast<double>(hits) / static_cast<double>(rows.size());
}

MetricRow evaluate_pair(const std::string& name, const Tensor& clean, const Tensor& adversarial,
                        const Model& manipulator, Task task, const MetricsConfig& cfg) {
  require_same_shape(clean, adversarial, "evaluate_pair");
  MetricRow row;
  row.name = name;
  const Tensor out_clean = manipulator.forward(clean);
  const Tensor out_adv = manipulator.forward(adversarial);
  row.out_l2 = l2_distance(out_clean, out_adv);
  row.out_l1 = l1_distance(out_clean, out_adv);
  const int win = std::min({cfg.ssim_window, clean.shape().height, clean.shape().width});
  const int w = win % 2 == 0 ? win - 1 : win;
  row.out_ssim = ssim(out_clean, out_adv, w, cfg.psnr_peak);
  row.in_l1 = l1_distance(clean, adversarial);
  row.in_l2 = l2_distance(clean, adversarial);
  row.in_psnr = psnr(clean, adversarial, cfg.psnr_peak);
  row.in_ssim = ssim(clean, adversarial, w, cfg.psnr_peak);
  if (cfg.identity_encoder) row.id_sim = id_similarity(clean, out_adv, *cfg.identity_encoder);
  row.success = row_success(row, task, cfg);
  return row;
}

void aggregate(EvaluationReport& report, const MetricsConfig& cfg) {
  const auto& rows = report.rows;
  report.dsr = dsr(rows, report.task, cfg);
  const double n = static_cast<double>(rows.size());
  auto mean = [&](auto field) {
    double s = 0.0;
    for (const auto& r : rows) s += field(r);
    return s / n;
  };
  report.mean_out_l2 = mean([](const MetricRow& r) { return r.out_l2; });
  report.mean_out_l1 = mean([](const MetricRow& r) { return r.out_l1; });
  report.mean_out_ssim = mean([](const MetricRow& r) { return r.out_ssim; });
  report.mean_in_l1 = mean([](const MetricRow& r) { return r.in_l1; });
  report.mean_in_l2 = mean([](const MetricRow& r) { return r.in_l2; });
  report.mean_in_ssim = mean([](const MetricRow& r) { return r.in_ssim; });
  double psum = 0.0;
  std::size_t pcount = 0;
  for (const auto& r : rows)
    if (std::isfinite(r.in_psnr)) {
      psum += r.in_psnr;
      ++pcount;
    }
  report.mean_in_psnr = pcount ? psum / pcount : std::numeric_limits<double>::infinity();
  if (!rows.empty() && rows.front().id_sim) {
    double s = 0.0;
    for (const auto& r : rows) s += r.id_sim.value_or(0.0);
    report.mean_id_sim = s / n;
  } else {
    report.mean_id_sim.reset();
  }
}

EvaluationReport build_report(const std::vector<std::string>& names,
                              const std::vector<Tensor>& clean_batch,
                              const std::vector<Tensor>& adv_batch, const Model& manipulator,
                              Task task, const MetricsConfig& cfg) {
  cfg.validate();
  if (clean_batch.size() != adv_batch.size() || names.size() != clean_batch.size())
    throw ParameterError("clean and adversarial batches are not aligned");
  if (task == Task::face_swapping && !cfg.identity_encoder)
    throw ParameterError("face-swapping evaluation needs an identity encoder");
  EvaluationReport report;
  report.task = task;
  report.manipulator = manipulator.name();
  for (std::size_t i = 0; i < clean_batch.size(); ++i)
    report.rows.push_back(
        evaluate_pair(names[i], clean_batch[i], adv_batch[i], manipulator, task, cfg));
  aggregate(report, cfg);
  return report;
}

namespace {

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

double parse_double(const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "nan" || s.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::stod(s);
}

constexpr const char* kCsvHeader =
    "name,out_l2,out_l1,out_ssim,in_l1,in_l2,in_psnr,in_ssim,id_sim,success";

}  // namespace

void write_report_csv(std::ostream& out, const EvaluationReport& report) {
  if (!report.config_hash.empty())
    out << "# config_hash=" << report.config_hash << " seed=" << report.seed << '\n';
  out << kCsvHeader << '\n';
  for (const auto& r : report.rows) {
    out << r.name << ',' << fmt(r.out_l2) << ',' << fmt(r.out_l1) << ',' << fmt(r.out_ssim) << ','
        << fmt(r.in_l1) << ',' << fmt(r.in_l2) << ',' << fmt(r.in_psnr) << ',' << fmt(r.in_ssim)
        << ',' << (r.id_sim ? fmt(*r.id_sim) : "") << ',' << (r.success ? 1 : 0) << '\n';
  }
}

std::vector<MetricRow> read_report_csv(std::istream& in) {
  std::string line;
  while (std::getline(in, line) && !line.empty() && line.front() == '#') {
  }
  if (line != kCsvHeader)
    throw ParameterError("unexpected report CSV header");
  std::vector<MetricRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cols.push_back(cell);
    if (!line.empty() && line.back() == ',') cols.emplace_back();
    if (cols.size() != 10) throw ParameterError("malformed report CSV row: " + line);
    MetricRow r;
    r.name = cols[0];
    r.out_l2 = parse_double(cols[1]);
    r.out_l1 = parse_double(cols[2]);
    r.out_ssim = parse_double(cols[3]);
    r.in_l1 = parse_double(cols[4]);
    r.in_l2 = parse_double(cols[5]);
    r.in_psnr = parse_double(cols[6]);
    r.in_ssim = parse_double(cols[7]);
    if (!cols[8].empty()) r.id_sim = parse_double(cols[8]);
    r.success = cols[9] == "1";
    rows.push_back(r);
  }
  return rows;
}

void write_report_summary(std::ostream& out, const EvaluationReport& report) {
  auto num = [](double v) -> nlohmann::ordered_json {
    if (std::isfinite(v)) return v;
    return fmt(v);
  };
  nlohmann::ordered_json j;
  j["schema_version"] = EvaluationReport::kSchemaVersion;
  j["task"] = to_string(report.task);
  j["images"] = report.rows.size();
  j["dsr"] = report.dsr;
  j["mean"] = {
      {"out_l2 [M(x) vs M(x_adv)]", num(report.mean_out_l2)},
      {"out_l1 [M(x) vs M(x_adv)]", num(report.mean_out_l1)},
      {"out_ssim [M(x) vs M(x_adv)]", num(report.mean_out_ssim)},
      {"in_l1 [x vs x_adv]", num(report.mean_in_l1)},
      {"in_l2 [x vs x_adv]", num(report.mean_in_l2)},
      {"in_psnr [x vs x_adv]", num(report.mean_in_psnr)},
      {"in_ssim [x vs x_adv]", num(report.mean_in_ssim)},
  };
  if (report.mean_id_sim) j["mean"]["id_sim [x vs M(x_adv)]"] = num(*report.mean_id_sim);
  j["metadata"] = {{"config_hash", report.config_hash},
                   {"seed", report.seed},
                   {"manipulator", report.manipulator},
                   {"codec_versions", report.codec_versions},
                   {"note", "adversarial images pass through 8-bit PNG quantization before "
                            "evaluation"}};
  out << j.dump(2) << '\n';
}

}  // namespace trajguard
