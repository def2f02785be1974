#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "trajguard/blackbox.hpp"
#include "trajguard/distortions.hpp"
#include "trajguard/metrics.hpp"
#include "trajguard/models.hpp"
#include "trajguard/whitebox.hpp"

namespace trajguard {

namespace fs = std::filesystem;

// Bad config, bad plan, missing inputs. Maps to exit status 1.
class ConfigError : public ParameterError {
 public:
  using ParameterError::ParameterError;
};

// Clean and adversarial sets disagree on file names.
class AlignmentError : public ParameterError {
 public:
  AlignmentError(const std::string& what, std::vector<std::string> missing,
                 std::vector<std::string> unexpected)
      : ParameterError(what), missing(std::move(missing)), unexpected(std::move(unexpected)) {}
  std::vector<std::string> missing;     // clean files without an adversarial counterpart
  std::vector<std::string> unexpected;  // adversarial files without a clean counterpart
};

enum class DefenseMode { whitebox, blackbox };

// What a distorted protected output is compared with under post-processing:
// M(distort(x)) isolates the protection from the distortion's own effect on M;
// M(x) counts that effect as disruption.
enum class SweepReference { distorted_clean, clean };
SweepReference parse_sweep_reference(const std::string& s);
std::string to_string(SweepReference r);
DefenseMode parse_defense_mode(const std::string& s);
std::string to_string(DefenseMode m);

struct RemoteEndpoint {
  std::string host = "127.0.0.1";
  int port = 0;
  std::string path = "/manipulate";
  double timeout = 30.0;
};

struct DenoiserSpec {
  DenoiserKind kind = DenoiserKind::convolutional;
  std::uint64_t seed = 1;
  fs::path weights;  // overrides kind/seed when set
  DenoiserOptions options;
};

struct ManipulatorSpec {
  ManipulatorKind kind = ManipulatorKind::attribute_editor;
  std::uint64_t seed = 2;
  fs::path weights;
  std::optional<RemoteEndpoint> remote;  // black-box only
  ManipulatorOptions options;
};

struct IdentityEncoderSpec {
  std::uint64_t seed = 3;
  int dim = 32;
};

struct RunConfig {
  static constexpr int kSchemaVersion = 1;

  DefenseMode mode = DefenseMode::whitebox;
  Task task = Task::attribute_editing;
  std::uint64_t seed = 0;
  std::string label = "trajguard";  // row name in the AUC table
  fs::path input_dir;
  fs::path adversarial_dir;  // defaults to <out_dir>/adversarial
  fs::path out_dir = "out";
  int workers = 1;
  DenoiserSpec denoiser;
  ManipulatorSpec manipulator;
  IdentityEncoderSpec identity_encoder;
  WhiteBoxConfig whitebox;
  BlackBoxConfig blackbox;
  std::optional<std::uint64_t> nes_seed;      // defaults to seed; mixed with each file name
  std::optional<std::uint64_t> query_budget;  // per image
  double dsr_l2_threshold = 0.05;
  double dsr_idsim_threshold = 0.4;
  std::map<DistortionKind, std::vector<double>> grids;  // missing kinds use default_grid
  SweepReference sweep_reference = SweepReference::distorted_clean;

  fs::path adversarial_location() const;
  std::vector<double> grid(DistortionKind kind) const;
  MetricsConfig metrics() const;
  void validate() const;
};

// `base_dir` anchors relative paths (normally the config file's directory).
RunConfig parse_run_config(const std::string& json_text, const fs::path& base_dir = {});
RunConfig load_run_config(const fs::path& path);

// Fully resolved settings as sorted JSON. Paths and the worker count are left out:
// they say where files live and how fast they are produced, not what is computed.
std::string canonical_config(const RunConfig& cfg);
// FNV-1a 64 of canonical_config, 16 hex digits.
std::string config_hash(const RunConfig& cfg);

std::uint64_t fnv1a64(const std::string& s);

struct ModelSet {
  std::shared_ptr<const Denoiser> denoiser;
  std::shared_ptr<const Model> manipulator;
  std::shared_ptr<const DifferentiableMap> differentiable;  // null for remote models
  std::shared_ptr<const IdentityEncoder> identity_encoder;
};

ModelSet build_models(const RunConfig& cfg);

// Sorted *.png file names directly inside dir.
std::vector<std::string> list_png(const fs::path& dir);

// Runs the configured defense on one image. NES streams are keyed by the file name.
ProtectionResult protect_image(const Tensor& x, const std::string& name, const RunConfig& cfg,
                               const ModelSet& models, const NoiseSchedule& sched);

struct FileStatus {
  std::string name;
  bool ok = false;
  std::string error;
  std::uint64_t queries = 0;
};

struct ProtectSummary {
  std::string config_hash;
  std::vector<FileStatus> files;
  int failed() const;
};

// out_dir/adversarial/<name> PNGs, out_dir/traces/<stem>.jsonl, out_dir/protect.json.
// A failed file leaves <name>.error next to where its PNG would be.
ProtectSummary run_protect(const RunConfig& cfg, std::ostream* log = nullptr);

// out_dir/report.csv and out_dir/summary.json.
EvaluationReport run_evaluate(const RunConfig& cfg, std::ostream* log = nullptr);

struct AucRow {
  std::string method;
  double p[4] = {0, 0, 0, 0};  // P1..P4
  double avg = 0.0;
};

struct SweepResult {
  std::vector<RobustnessCurve> curves;
  AucRow auc;
};

// DSR under every distortion kind over its grid. out_dir/curves.csv and out_dir/auc.csv.
SweepResult run_sweep(const RunConfig& cfg, std::ostream* log = nullptr);

void write_auc_csv(std::ostream& out, const std::vector<AucRow>& rows);

enum class AblationAxis { t1, t2, inject_step_t, gradient_projection };
AblationAxis parse_ablation_axis(const std::string& s);
std::string to_string(AblationAxis a);

struct AblationPlan {
  AblationAxis axis = AblationAxis::t2;
  std::vector<double> values;  // gradient_projection: 0 = off, 1 = on
  RunConfig base;
  // One setting per kind for the per-distortion columns.
  std::map<DistortionKind, double> distortions{{DistortionKind::jpeg, 70},
                                               {DistortionKind::gaussian_blur, 5},
                                               {DistortionKind::average_blur, 5},
                                               {DistortionKind::downscale, 0.5}};

  // The base config with the axis set to `value`.
  RunConfig at(double value) const;
  void validate() const;
};

// "base" is a path to a run config or an inline object.
AblationPlan parse_ablation_plan(const std::string& json_text, const fs::path& base_dir = {});
AblationPlan load_ablation_plan(const fs::path& path);

struct AblationRow {
  std::string value;
  double dsr = 0, l2 = 0, psnr = 0, ssim = 0;
  std::map<DistortionKind, double> distorted_dsr;
  std::map<DistortionKind, double> distorted_l2;
};

struct AblationTable {
  AblationAxis axis = AblationAxis::t2;
  std::vector<AblationRow> rows;
};

// Protects the base inputs at every axis value (8-bit quantized in memory, as if
// written and re-read) and evaluates them. Writes out_dir/ablation.csv.
AblationTable run_ablate(const AblationPlan& plan, std::ostream* log = nullptr);

void write_ablation_csv(std::ostream& out, const AblationTable& table,
                        const std::string& comment = {});

// Command-line entry point: protect | evaluate | sweep | ablate | toy-images.
// Exit status 0 on success, 1 on invalid input, 2 on runtime failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace trajguard
