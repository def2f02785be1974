#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "trajguard/model.hpp"
#include "trajguard/models.hpp"
#include "trajguard/tensor.hpp"

namespace trajguard {

// Root-mean-square difference.
double l2_distance(const Tensor& a, const Tensor& b);
// Mean absolute difference.
double l1_distance(const Tensor& a, const Tensor& b);

// 10 log10(peak^2 / MSE); +infinity for identical inputs.
double psnr(const Tensor& a, const Tensor& b, double peak = 2.0);

// Single-scale SSIM with a normalized Gaussian window (sigma 1.5), evaluated at every
// position where the window fits, averaged over positions and channels.
// Stabilizers C1 = (0.01 L)^2, C2 = (0.03 L)^2 for dynamic range L.
double ssim(const Tensor& a, const Tensor& b, int window = 11, double data_range = 2.0);

double id_similarity(const Tensor& a, const Tensor& b, const IdentityEncoder& encoder);

enum class Task { attribute_editing, face_swapping };
Task parse_task(const std::string& s);
std::string to_string(Task t);

struct MetricsConfig {
  double dsr_l2_threshold = 0.05;
  double dsr_idsim_threshold = 0.4;
  double psnr_peak = 2.0;
  int ssim_window = 11;
  std::shared_ptr<const IdentityEncoder> identity_encoder;  // required for face swapping

  void validate() const;
};

// Per-image evaluation. "in_*" columns compare the clean input x with the protected
// input x_adv (fidelity, higher SSIM/PSNR is better); "out_*" columns compare M(x) with
// M(x_adv) (disruption, larger distance is better); id_sim compares x with M(x_adv).
struct MetricRow {
  std::string name;
  double out_l2 = 0.0;
  double out_l1 = 0.0;
  double out_ssim = 1.0;
  double in_l1 = 0.0;
  double in_l2 = 0.0;
  double in_psnr = 0.0;
  double in_ssim = 1.0;
  std::optional<double> id_sim;
  bool success = false;
};

bool row_success(const MetricRow& row, Task task, const MetricsConfig& cfg);

// Fraction of successful rows under the task's strict threshold rule.
double dsr(const std::vector<MetricRow>& rows, Task task, const MetricsConfig& cfg);

struct EvaluationReport {
  static constexpr int kSchemaVersion = 1;
  Task task = Task::attribute_editing;
  std::vector<MetricRow> rows;
  double dsr = 0.0;
  double mean_out_l2 = 0.0;
  double mean_out_l1 = 0.0;
  double mean_out_ssim = 0.0;
  double mean_in_l1 = 0.0;
  double mean_in_l2 = 0.0;
  double mean_in_psnr = 0.0;  // over finite values; infinite rows excluded
  double mean_in_ssim = 0.0;
  std::optional<double> mean_id_sim;
  // metadata
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string manipulator;
  std::string codec_versions;
};

MetricRow evaluate_pair(const std::string& name, const Tensor& clean, const Tensor& adversarial,
                        const Model& manipulator, Task task, const MetricsConfig& cfg);

EvaluationReport build_report(const std::vector<std::string>& names,
                              const std::vector<Tensor>& clean_batch,
                              const std::vector<Tensor>& adv_batch, const Model& manipulator,
                              Task task, const MetricsConfig& cfg);

// Recomputes the aggregates from the rows.
void aggregate(EvaluationReport& report, const MetricsConfig& cfg);

// A leading '# config_hash=... seed=...' line is written when the hash is set and
// skipped on read.
void write_report_csv(std::ostream& out, const EvaluationReport& report);
void write_report_summary(std::ostream& out, const EvaluationReport& report);
std::vector<MetricRow> read_report_csv(std::istream& in);

// Display helper: infinite PSNR is shown capped at this value.
constexpr double kPsnrDisplayCap = 100.0;

}  // namespace trajguard
