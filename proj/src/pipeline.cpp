#include "trajguard/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "trajguard/image_io.hpp"
#include "trajguard/parallel.hpp"
#include "trajguard/remote.hpp"

namespace trajguard {

using json = nlohmann::json;

namespace {

// Strict reader over one JSON object: typed getters, and finish() rejects any key
// nobody asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("'" + label() + "' must be an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json* take(const std::string& key) {
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    seen_.insert(key);
    return &*it;
  }

  void get(const std::string& key, int& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer()) fail(key, "an integer");
      out = v->get<int>();
    }
  }
  void get(const std::string& key, std::uint64_t& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_unsigned()) fail(key, "a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void get(const std::string& key, double& out) {
    if (const json* v = take(key)) {
      if (!v->is_number()) fail(key, "a number");
      out = v->get<double>();
    }
  }
  void get(const std::string& key, bool& out) {
    if (const json* v = take(key)) {
      if (!v->is_boolean()) fail(key, "true or false");
      out = v->get<bool>();
    }
  }
  void get(const std::string& key, std::string& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) fail(key, "a string");
      out = v->get<std::string>();
    }
  }
  void get_path(const std::string& key, fs::path& out, const fs::path& base) {
    std::string s;
    if (has(key)) {
      get(key, s);
      out = s.empty() ? fs::path{} : (base / s).lexically_normal();
    }
  }
  std::vector<double> numbers(const std::string& key) {
    const json* v = take(key);
    if (!v->is_array()) fail(key, "an array of numbers");
    std::vector<double> out;
    for (const auto& e : *v) {
      if (!e.is_number()) fail(key, "an array of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }
  Section child(const std::string& key) { return Section(*take(key), label(key)); }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.contains(k)) throw ConfigError("unknown key '" + label(k) + "'");
  }

  std::string label(const std::string& key = {}) const {
    if (key.empty()) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ConfigError("'" + label(key) + "' must be " + what);
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json parse_json(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void check_schema(Section& s) {
  int version = 0;
  if (!s.has("schema_version")) throw ConfigError("missing 'schema_version'");
  s.get("schema_version", version);
  if (version != RunConfig::kSchemaVersion)
    throw ConfigError("unsupported schema_version " + std::to_string(version) + " (expected " +
                      std::to_string(RunConfig::kSchemaVersion) + ")");
}

void read_noise_layer(Section s, NoiseLayerConfig& n) {
  s.get("kernel", n.kernel);
  s.get("sigma", n.sigma);
  s.finish();
}

// Settings shared by both defenses.
template <typename Cfg>
void read_common(Section& s, Cfg& c) {
  s.get("t1", c.t1);
  s.get("t2", c.t2);
  s.get("iterations", c.iterations);
  s.get("alpha", c.alpha);
  s.get("inject_steps", c.inject_steps);
  s.get("clamp_final", c.clamp_final);
  if (s.has("noise_layer")) read_noise_layer(s.child("noise_layer"), c.noise_layer);
}

const std::vector<std::string> kWhiteboxOnly{"lambda1", "mu1", "lambda2", "mu2",
                                             "gradient_projection", "outer_sign"};

void read_whitebox(Section s, WhiteBoxConfig& c) {
  read_common(s, c);
  s.get("lambda1", c.lambda1);
  s.get("mu1", c.mu1);
  s.get("lambda2", c.lambda2);
  s.get("mu2", c.mu2);
  s.get("gradient_projection", c.gradient_projection);
  std::string sign;
  s.get("outer_sign", sign);
  if (!sign.empty()) c.outer_sign = parse_outer_update_sign(sign);
  s.finish();
}

void read_blackbox(Section s, RunConfig& cfg) {
  for (const auto& k : kWhiteboxOnly)
    if (s.has(k))
      throw ConfigError("'" + s.label(k) + "' is a white-box setting and is not valid in blackbox mode");
  BlackBoxConfig& c = cfg.blackbox;
  read_common(s, c);
  if (s.has("query_budget")) {
    std::uint64_t b = 0;
    s.get("query_budget", b);
    cfg.query_budget = b;
  }
  if (s.has("nes")) {
    Section n = s.child("nes");
    n.get("samples", c.nes.samples);
    n.get("sigma", c.nes.sigma);
    n.get("antithetic", c.nes.antithetic);
    if (n.has("seed")) {
      std::uint64_t seed = 0;
      n.get("seed", seed);
      cfg.nes_seed = seed;
    }
    n.finish();
  }
  s.finish();
}

void read_denoiser(Section s, DenoiserSpec& d, const fs::path& base) {
  std::string kind;
  s.get("kind", kind);
  if (!kind.empty()) d.kind = parse_denoiser_kind(kind);
  s.get("seed", d.seed);
  s.get_path("weights", d.weights, base);
  s.get("linear_coefficient", d.options.linear_coefficient);
  s.get("channels", d.options.channels);
  s.get("hidden", d.options.hidden);
  s.get("output_scale", d.options.output_scale);
  s.finish();
}

void read_manipulator(Section s, ManipulatorSpec& m, const fs::path& base) {
  std::string kind;
  s.get("kind", kind);
  if (!kind.empty()) m.kind = parse_manipulator_kind(kind);
  s.get("seed", m.seed);
  s.get_path("weights", m.weights, base);
  if (s.has("shape")) {
    const auto dims = s.numbers("shape");
    if (dims.size() != 3) throw ConfigError("'" + s.label("shape") + "' must be [c, h, w]");
    m.options.shape = {static_cast<int>(dims[0]), static_cast<int>(dims[1]),
                       static_cast<int>(dims[2])};
  }
  s.get("hidden", m.options.hidden);
  s.get("gain", m.options.gain);
  s.get("swap_weight", m.options.swap_weight);
  s.get("identity_dim", m.options.identity_dim);
  if (s.has("remote")) {
    Section r = s.child("remote");
    RemoteEndpoint e;
    r.get("host", e.host);
    r.get("port", e.port);
    r.get("path", e.path);
    r.get("timeout", e.timeout);
    r.finish();
    m.remote = e;
  }
  s.finish();
}

void read_run_config(Section& s, RunConfig& cfg, const fs::path& base) {
  check_schema(s);
  std::string mode, task;
  if (!s.has("mode")) throw ConfigError("missing 'mode' (whitebox|blackbox)");
  s.get("mode", mode);
  cfg.mode = parse_defense_mode(mode);
  s.get("task", task);
  if (!task.empty()) cfg.task = parse_task(task);
  s.get("seed", cfg.seed);
  s.get("label", cfg.label);
  s.get_path("input_dir", cfg.input_dir, base);
  s.get_path("adversarial_dir", cfg.adversarial_dir, base);
  s.get_path("out_dir", cfg.out_dir, base);
  s.get("workers", cfg.workers);
  if (s.has("denoiser")) read_denoiser(s.child("denoiser"), cfg.denoiser, base);
  if (s.has("manipulator")) read_manipulator(s.child("manipulator"), cfg.manipulator, base);
  if (s.has("identity_encoder")) {
    Section e = s.child("identity_encoder");
    e.get("seed", cfg.identity_encoder.seed);
    e.get("dim", cfg.identity_encoder.dim);
    e.finish();
  }
  if (cfg.mode == DefenseMode::whitebox) {
    if (s.has("blackbox")) throw ConfigError("'blackbox' section given in whitebox mode");
    if (s.has("whitebox")) read_whitebox(s.child("whitebox"), cfg.whitebox);
  } else {
    if (s.has("whitebox")) throw ConfigError("'whitebox' section given in blackbox mode");
    if (s.has("blackbox")) read_blackbox(s.child("blackbox"), cfg);
  }
  if (s.has("metrics")) {
    Section m = s.child("metrics");
    m.get("dsr_l2_threshold", cfg.dsr_l2_threshold);
    m.get("dsr_idsim_threshold", cfg.dsr_idsim_threshold);
    m.finish();
  }
  if (s.has("sweep")) {
    Section g = s.child("sweep");
    std::string ref;
    g.get("reference", ref);
    if (!ref.empty()) cfg.sweep_reference = parse_sweep_reference(ref);
    for (DistortionKind k : all_distortion_kinds())
      if (g.has(to_string(k))) cfg.grids[k] = g.numbers(to_string(k));
    g.finish();
  }
  s.finish();
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string file_digest(const fs::path& path) {
  return hex64(fnv1a64(read_text(path)));
}

template <typename Cfg>
json common_json(const Cfg& c) {
  return {{"t1", c.t1},
          {"t2", c.t2},
          {"iterations", c.iterations},
          {"alpha", c.alpha},
          {"inject_steps", c.inject_steps},
          {"clamp_final", c.clamp_final},
          {"noise_layer", {{"kernel", c.noise_layer.kernel}, {"sigma", c.noise_layer.sigma}}}};
}

json canonical_json(const RunConfig& cfg) {
  json j;
  j["schema_version"] = RunConfig::kSchemaVersion;
  j["mode"] = to_string(cfg.mode);
  j["task"] = to_string(cfg.task);
  j["seed"] = cfg.seed;
  j["label"] = cfg.label;
  const auto& d = cfg.denoiser;
  if (!d.weights.empty()) {
    j["denoiser"] = {{"weights_fnv1a", file_digest(d.weights)}};
  } else {
    j["denoiser"] = {{"kind", to_string(d.kind)},
                     {"seed", d.seed},
                     {"linear_coefficient", d.options.linear_coefficient},
                     {"channels", d.options.channels},
                     {"hidden", d.options.hidden},
                     {"output_scale", d.options.output_scale}};
  }
  const auto& m = cfg.manipulator;
  if (m.remote) {
    j["manipulator"] = {{"remote", {{"host", m.remote->host},
                                    {"port", m.remote->port},
                                    {"path", m.remote->path}}}};
  } else if (!m.weights.empty()) {
    j["manipulator"] = {{"weights_fnv1a", file_digest(m.weights)}};
  } else {
    const Shape& s = m.options.shape;
    j["manipulator"] = {{"kind", to_string(m.kind)},
                        {"seed", m.seed},
                        {"shape", {s.channels, s.height, s.width}},
                        {"hidden", m.options.hidden},
                        {"gain", m.options.gain},
                        {"swap_weight", m.options.swap_weight},
                        {"identity_dim", m.options.identity_dim}};
  }
  if (cfg.task == Task::face_swapping)
    j["identity_encoder"] = {{"seed", cfg.identity_encoder.seed},
                             {"dim", cfg.identity_encoder.dim}};
  if (cfg.mode == DefenseMode::whitebox) {
    const auto& w = cfg.whitebox;
    json s = common_json(w);
    s["lambda1"] = w.lambda1;
    s["mu1"] = w.mu1;
    s["lambda2"] = w.lambda2;
    s["mu2"] = w.mu2;
    s["gradient_projection"] = w.gradient_projection;
    s["outer_sign"] = to_string(w.outer_sign);
    j["whitebox"] = s;
  } else {
    const auto& b = cfg.blackbox;
    json s = common_json(b);
    s["nes"] = {{"samples", b.nes.samples},
                {"sigma", b.nes.sigma},
                {"antithetic", b.nes.antithetic},
                {"seed", cfg.nes_seed.value_or(cfg.seed)}};
    if (cfg.query_budget) s["query_budget"] = *cfg.query_budget;
    j["blackbox"] = s;
  }
  j["metrics"] = {{"dsr_l2_threshold", cfg.dsr_l2_threshold},
                  {"dsr_idsim_threshold", cfg.dsr_idsim_threshold}};
  json grids;
  for (DistortionKind k : all_distortion_kinds()) grids[to_string(k)] = cfg.grid(k);
  grids["reference"] = to_string(cfg.sweep_reference);
  j["sweep"] = grids;
  return j;
}

void require_dir(const fs::path& dir, const std::string& what) {
  if (dir.empty()) throw ConfigError(what + " is not set");
  if (!fs::is_directory(dir)) throw ConfigError(what + " '" + dir.string() + "' is not a directory");
}

std::string comment_line(const std::string& hash, std::uint64_t seed) {
  return "# config_hash=" + hash + " seed=" + std::to_string(seed) + "\n";
}

class Logger {
 public:
  explicit Logger(std::ostream* out) : out_(out) {}
  void operator()(const std::string& line) {
    if (!out_) return;
    std::lock_guard lock(mu_);
    *out_ << line << '\n';
  }

 private:
  std::ostream* out_;
  std::mutex mu_;
};

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

// Writes `path` via `produce`; on failure leaves <path>.error with the message and rethrows.
template <typename Fn>
void with_error_sidecar(const fs::path& path, Fn&& produce) {
  fs::path sidecar = path;
  sidecar += ".error";
  try {
    produce();
    fs::remove(sidecar);
  } catch (const std::exception& e) {
    write_file_atomic(sidecar, std::string(e.what()) + "\n");
    throw;
  }
}

struct AlignedSets {
  std::vector<std::string> names;
  std::vector<Tensor> clean;
  std::vector<Tensor> adversarial;
};

AlignedSets load_aligned(const RunConfig& cfg) {
  require_dir(cfg.input_dir, "input_dir");
  const fs::path adv_dir = cfg.adversarial_location();
  require_dir(adv_dir, "adversarial_dir");
  AlignedSets sets;
  sets.names = list_png(cfg.input_dir);
  if (sets.names.empty()) throw ConfigError("no inputs: '" + cfg.input_dir.string() + "' has no .png files");
  const auto adv_names = list_png(adv_dir);
  std::vector<std::string> missing, unexpected;
  std::set_difference(sets.names.begin(), sets.names.end(), adv_names.begin(), adv_names.end(),
                      std::back_inserter(missing));
  std::set_difference(adv_names.begin(), adv_names.end(), sets.names.begin(), sets.names.end(),
                      std::back_inserter(unexpected));
  if (!missing.empty() || !unexpected.empty()) {
    auto join = [](const std::vector<std::string>& v) {
      std::string s;
      for (const auto& n : v) s += (s.empty() ? "" : ", ") + n;
      return s;
    };
    std::string msg = "clean and adversarial sets are misaligned";
    if (!missing.empty()) msg += "; missing adversarial: " + join(missing);
    if (!unexpected.empty()) msg += "; no clean counterpart: " + join(unexpected);
    throw AlignmentError(msg, missing, unexpected);
  }
  const std::size_t n = sets.names.size();
  sets.clean.resize(n);
  sets.adversarial.resize(n);
  parallel_for(n, cfg.workers, [&](std::size_t i) {
    sets.clean[i] = read_png(cfg.input_dir / sets.names[i]);
    sets.adversarial[i] = read_png(adv_dir / sets.names[i]);
  });
  return sets;
}

bool is_integer(double v) { return std::floor(v) == v && std::isfinite(v); }

}  // namespace

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

DefenseMode parse_defense_mode(const std::string& s) {
  if (s == "whitebox") return DefenseMode::whitebox;
  if (s == "blackbox") return DefenseMode::blackbox;
  throw ConfigError("unknown mode '" + s + "' (expected whitebox|blackbox)");
}

std::string to_string(DefenseMode m) { return m == DefenseMode::whitebox ? "whitebox" : "blackbox"; }

SweepReference parse_sweep_reference(const std::string& s) {
  if (s == "distorted_clean") return SweepReference::distorted_clean;
  if (s == "clean") return SweepReference::clean;
  throw ConfigError("unknown sweep reference '" + s + "' (expected distorted_clean|clean)");
}

std::string to_string(SweepReference r) {
  return r == SweepReference::distorted_clean ? "distorted_clean" : "clean";
}

fs::path RunConfig::adversarial_location() const {
  return adversarial_dir.empty() ? out_dir / "adversarial" : adversarial_dir;
}

std::vector<double> RunConfig::grid(DistortionKind kind) const {
  auto it = grids.find(kind);
  return it == grids.end() ? default_grid(kind) : it->second;
}

MetricsConfig RunConfig::metrics() const {
  MetricsConfig m;
  m.dsr_l2_threshold = dsr_l2_threshold;
  m.dsr_idsim_threshold = dsr_idsim_threshold;
  return m;
}

void RunConfig::validate() const {
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (mode == DefenseMode::whitebox) {
    whitebox.validate();
    if (manipulator.remote)
      throw ConfigError("whitebox mode needs input gradients; a remote manipulator has none");
    if (query_budget) throw ConfigError("query_budget applies to blackbox mode only");
  } else {
    blackbox.validate();
  }
  metrics().validate();
  for (const auto& [kind, g] : grids) {
    if (g.empty()) throw ConfigError("sweep grid for " + to_string(kind) + " is empty");
    for (double p : g) DistortionSpec{kind, p}.validate();
  }
  if (identity_encoder.dim < 1) throw ConfigError("identity_encoder.dim must be >= 1");
  if (manipulator.remote && (manipulator.remote->port < 1 || manipulator.remote->port > 65535))
    throw ConfigError("manipulator.remote.port must be in [1, 65535]");
}

RunConfig parse_run_config(const std::string& json_text, const fs::path& base_dir) {
  const json j = parse_json(json_text);
  Section root(j, "");
  RunConfig cfg;
  cfg.out_dir = (base_dir / "out").lexically_normal();
  read_run_config(root, cfg, base_dir);
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  return parse_run_config(read_text(path), path.parent_path());
}

std::string canonical_config(const RunConfig& cfg) { return canonical_json(cfg).dump(); }

std::string config_hash(const RunConfig& cfg) { return hex64(fnv1a64(canonical_config(cfg))); }

ModelSet build_models(const RunConfig& cfg) {
  ModelSet set;
  const auto& d = cfg.denoiser;
  if (!d.weights.empty()) {
    if (!fs::exists(d.weights)) throw ConfigError("denoiser weights '" + d.weights.string() + "' not found");
    set.denoiser = denoiser_from_weights(load_weights(d.weights.string()));
  } else {
    set.denoiser = make_toy_denoiser(d.seed, d.kind, d.options);
  }
  const auto& m = cfg.manipulator;
  if (m.remote) {
    set.manipulator = std::make_shared<RemoteManipulator>(m.remote->host, m.remote->port,
                                                          m.remote->path, m.remote->timeout);
  } else {
    std::shared_ptr<DifferentiableMap> dm;
    if (!m.weights.empty()) {
      if (!fs::exists(m.weights))
        throw ConfigError("manipulator weights '" + m.weights.string() + "' not found");
      dm = manipulator_from_weights(load_weights(m.weights.string()));
    } else {
      dm = make_toy_manipulator(m.seed, m.kind, m.options);
    }
    set.differentiable = dm;
    set.manipulator = dm;
  }
  if (cfg.task == Task::face_swapping)
    set.identity_encoder = make_toy_identity_encoder(cfg.identity_encoder.seed,
                                                     cfg.identity_encoder.dim, m.options.shape);
  return set;
}

std::vector<std::string> list_png(const fs::path& dir) {
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

ProtectionResult protect_image(const Tensor& x, const std::string& name, const RunConfig& cfg,
                               const ModelSet& models, const NoiseSchedule& sched) {
  if (cfg.mode == DefenseMode::whitebox) {
    if (!models.differentiable)
      throw CapabilityError("whitebox mode needs a manipulator with input gradients");
    return protect_whitebox(x, *models.differentiable, *models.denoiser, cfg.whitebox, sched);
  }
  BlackBoxConfig b = cfg.blackbox;
  b.nes.seed = derive_seed(cfg.nes_seed.value_or(cfg.seed), fnv1a64(name));
  const auto oracle = wrap_black_box(models.manipulator, cfg.query_budget);
  return protect_blackbox(x, *oracle, *models.denoiser, b, sched);
}

int ProtectSummary::failed() const {
  return static_cast<int>(std::count_if(files.begin(), files.end(),
                                        [](const FileStatus& f) { return !f.ok; }));
}

ProtectSummary run_protect(const RunConfig& cfg, std::ostream* log_stream) {
  cfg.validate();
  require_dir(cfg.input_dir, "input_dir");
  const auto names = list_png(cfg.input_dir);
  if (names.empty()) throw ConfigError("no inputs: '" + cfg.input_dir.string() + "' has no .png files");
  const ModelSet models = build_models(cfg);
  const NoiseSchedule sched = build_linear_schedule();
  const std::string hash = config_hash(cfg);
  const fs::path adv_dir = cfg.adversarial_location();
  const fs::path trace_dir = cfg.out_dir / "traces";
  fs::create_directories(adv_dir);
  fs::create_directories(trace_dir);

  Logger log(log_stream);
  ProtectSummary summary{hash, std::vector<FileStatus>(names.size())};
  const TextChunks text{{"config_hash", hash},
                        {"seed", std::to_string(cfg.seed)},
                        {"mode", to_string(cfg.mode)}};

  parallel_for(names.size(), cfg.workers, [&](std::size_t i) {
    const std::string& name = names[i];
    FileStatus& status = summary.files[i];
    status.name = name;
    const fs::path png = adv_dir / name;
    fs::path error_file = png;
    error_file += ".error";
    const fs::path trace_path = trace_dir / (fs::path(name).stem().string() + ".jsonl");
    auto write_trace = [&](const Trace& trace, std::uint64_t queries, const std::string& error) {
      nlohmann::ordered_json header{{"kind", "header"},
                                    {"file", name},
                                    {"mode", to_string(cfg.mode)},
                                    {"config_hash", hash},
                                    {"seed", cfg.seed},
                                    {"queries", queries},
                                    {"storage", "8-bit PNG"}};
      if (!error.empty()) header["error"] = error;
      std::ostringstream os;
      os << header.dump() << '\n';
      write_trace_jsonl(os, trace);
      write_file_atomic(trace_path, os.str());
    };
    auto fail = [&](const std::string& msg) {
      status.error = msg;
      fs::remove(png);
      write_file_atomic(error_file, name + ": " + msg + "\n");
      log("protect: " + name + " FAILED: " + msg);
    };
    try {
      const Tensor x = read_png(cfg.input_dir / name);
      const ProtectionResult r = protect_image(x, name, cfg, models, sched);
      write_file_atomic(png, encode_png(r.adversarial_image.data, text));
      write_trace(r.trace, r.queries, {});
      fs::remove(error_file);
      status.ok = true;
      status.queries = r.queries;
      log("protect: " + name + " ok");
    } catch (const NumericalError& e) {
      write_trace(e.trace(), 0, e.what());
      fail(e.what());
    } catch (const std::exception& e) {
      fail(e.what());
    }
  });

  nlohmann::ordered_json j;
  j["schema_version"] = RunConfig::kSchemaVersion;
  j["config_hash"] = hash;
  j["seed"] = cfg.seed;
  j["mode"] = to_string(cfg.mode);
  j["images"] = names.size();
  j["failed"] = summary.failed();
  if (cfg.mode == DefenseMode::blackbox)
    j["expected_queries_per_image"] = expected_blackbox_queries(cfg.blackbox);
  auto files = nlohmann::ordered_json::array();
  for (const auto& f : summary.files) {
    nlohmann::ordered_json e{{"name", f.name}, {"status", f.ok ? "ok" : "error"}};
    if (cfg.mode == DefenseMode::blackbox) e["queries"] = f.queries;
    if (!f.ok) e["error"] = f.error;
    files.push_back(e);
  }
  j["files"] = files;
  write_file_atomic(cfg.out_dir / "protect.json", j.dump(2) + "\n");
  return summary;
}

EvaluationReport run_evaluate(const RunConfig& cfg, std::ostream* log_stream) {
  cfg.validate();
  Logger log(log_stream);
  const AlignedSets sets = load_aligned(cfg);
  const ModelSet models = build_models(cfg);
  MetricsConfig mc = cfg.metrics();
  mc.identity_encoder = models.identity_encoder;

  EvaluationReport report;
  report.task = cfg.task;
  report.rows.resize(sets.names.size());
  parallel_for(sets.names.size(), cfg.workers, [&](std::size_t i) {
    report.rows[i] = evaluate_pair(sets.names[i], sets.clean[i], sets.adversarial[i],
                                   *models.manipulator, cfg.task, mc);
  });
  aggregate(report, mc);
  report.config_hash = config_hash(cfg);
  report.seed = cfg.seed;
  report.manipulator = models.manipulator->name();
  report.codec_versions = codec_versions();

  fs::create_directories(cfg.out_dir);
  std::ostringstream csv, summary;
  write_report_csv(csv, report);
  write_report_summary(summary, report);
  write_file_atomic(cfg.out_dir / "report.csv", csv.str());
  write_file_atomic(cfg.out_dir / "summary.json", summary.str());
  log("evaluate: " + std::to_string(report.rows.size()) + " images, DSR " + fmt(report.dsr));
  return report;
}

void write_auc_csv(std::ostream& out, const std::vector<AucRow>& rows) {
  out << "method,P1,P2,P3,P4,Avg\n";
  for (const auto& r : rows) {
    out << r.method;
    for (double p : r.p) out << ',' << fmt(p);
    out << ',' << fmt(r.avg) << '\n';
  }
}

SweepResult run_sweep(const RunConfig& cfg, std::ostream* log_stream) {
  cfg.validate();
  Logger log(log_stream);
  const AlignedSets sets = load_aligned(cfg);
  const ModelSet models = build_models(cfg);
  MetricsConfig mc = cfg.metrics();
  mc.identity_encoder = models.identity_encoder;
  const SweepMetric metric = [&](const SweepBatch& b) {
    std::vector<MetricRow> rows(b.distorted_outputs.size());
    const auto& reference = cfg.sweep_reference == SweepReference::distorted_clean
                                ? b.distorted_clean_outputs
                                : b.clean_outputs;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      rows[i].out_l2 = l2_distance(reference[i], b.distorted_outputs[i]);
      if (cfg.task == Task::face_swapping)
        rows[i].id_sim = id_similarity(b.clean_inputs[i], b.distorted_outputs[i], *mc.identity_encoder);
    }
    return dsr(rows, cfg.task, mc);
  };

  const std::string hash = config_hash(cfg);
  fs::create_directories(cfg.out_dir);
  const fs::path curves_path = cfg.out_dir / "curves.csv";
  const fs::path auc_path = cfg.out_dir / "auc.csv";
  SweepResult result;
  with_error_sidecar(curves_path, [&] {
    result.auc.method = cfg.label;
    const auto& kinds = all_distortion_kinds();
    for (std::size_t k = 0; k < kinds.size(); ++k) {
      result.curves.push_back(sweep(sets.adversarial, sets.clean, *models.manipulator, kinds[k],
                                    cfg.grid(kinds[k]), metric, "dsr", cfg.workers));
      result.auc.p[k] = auc(result.curves.back());
      log("sweep: " + to_string(kinds[k]) + " AUC " + fmt(result.auc.p[k]));
    }
    result.auc.avg = (result.auc.p[0] + result.auc.p[1] + result.auc.p[2] + result.auc.p[3]) / 4.0;
    std::ostringstream curves;
    curves << comment_line(hash, cfg.seed);
    write_curves_csv(curves, result.curves);
    write_file_atomic(curves_path, curves.str());
  });
  std::ostringstream table;
  table << comment_line(hash, cfg.seed);
  write_auc_csv(table, {result.auc});
  write_file_atomic(auc_path, table.str());
  return result;
}

AblationAxis parse_ablation_axis(const std::string& s) {
  if (s == "T1" || s == "t1") return AblationAxis::t1;
  if (s == "T2" || s == "t2") return AblationAxis::t2;
  if (s == "inject_step_t" || s == "t") return AblationAxis::inject_step_t;
  if (s == "gradient_projection" || s == "GP") return AblationAxis::gradient_projection;
  throw ConfigError("unknown ablation axis '" + s +
                    "' (expected T1|T2|inject_step_t|gradient_projection)");
}

std::string to_string(AblationAxis a) {
  switch (a) {
    case AblationAxis::t1: return "T1";
    case AblationAxis::t2: return "T2";
    case AblationAxis::inject_step_t: return "inject_step_t";
    case AblationAxis::gradient_projection: return "gradient_projection";
  }
  return "T2";
}

namespace {

template <typename Cfg>
void set_axis(Cfg& c, AblationAxis axis, int v) {
  switch (axis) {
    case AblationAxis::t1: c.t1 = v; break;
    // Injection covers every denoise step, so the step count is the only thing that moves.
    case AblationAxis::t2: c.t2 = v; c.inject_steps = v; break;
    case AblationAxis::inject_step_t: c.inject_steps = v; break;
    case AblationAxis::gradient_projection: break;
  }
}

std::string axis_value_label(AblationAxis axis, double v) {
  if (axis == AblationAxis::gradient_projection) return v != 0 ? "on" : "off";
  return fmt(v);
}

}  // namespace

RunConfig AblationPlan::at(double value) const {
  RunConfig cfg = base;
  if (axis == AblationAxis::gradient_projection) {
    cfg.whitebox.gradient_projection = value != 0;
  } else {
    set_axis(cfg.whitebox, axis, static_cast<int>(value));
    set_axis(cfg.blackbox, axis, static_cast<int>(value));
  }
  return cfg;
}

void AblationPlan::validate() const {
  base.validate();
  if (values.empty()) throw ConfigError("ablation plan has no values");
  if (axis == AblationAxis::gradient_projection && base.mode != DefenseMode::whitebox)
    throw ConfigError("the gradient_projection axis needs whitebox mode");
  for (double v : values) {
    if (axis == AblationAxis::gradient_projection) {
      if (v != 0 && v != 1) throw ConfigError("gradient_projection values must be off/on");
      continue;
    }
    if (!is_integer(v)) throw ConfigError(to_string(axis) + " values must be integers");
    try {
      at(v).validate();
    } catch (const ParameterError& e) {
      throw ConfigError(to_string(axis) + "=" + fmt(v) + ": " + e.what());
    }
  }
  for (const auto& [kind, p] : distortions) DistortionSpec{kind, p}.validate();
}

AblationPlan parse_ablation_plan(const std::string& json_text, const fs::path& base_dir) {
  const json j = parse_json(json_text);
  Section root(j, "");
  check_schema(root);
  AblationPlan plan;
  std::string axis;
  if (!root.has("axis")) throw ConfigError("missing 'axis'");
  root.get("axis", axis);
  plan.axis = parse_ablation_axis(axis);
  if (!root.has("base")) throw ConfigError("missing 'base'");
  const json* base = root.take("base");
  if (base->is_string()) {
    plan.base = load_run_config(base_dir / base->get<std::string>());
  } else {
    Section b(*base, "base");
    plan.base.out_dir = (base_dir / "out").lexically_normal();
    read_run_config(b, plan.base, base_dir);
  }
  if (!root.has("values")) throw ConfigError("missing 'values'");
  const json* values = root.take("values");
  if (!values->is_array()) throw ConfigError("'values' must be an array");
  for (const auto& v : *values) {
    if (v.is_number()) {
      plan.values.push_back(v.get<double>());
    } else if (v.is_string() && plan.axis == AblationAxis::gradient_projection &&
               (v == "on" || v == "off")) {
      plan.values.push_back(v == "on" ? 1.0 : 0.0);
    } else if (v.is_boolean() && plan.axis == AblationAxis::gradient_projection) {
      plan.values.push_back(v.get<bool>() ? 1.0 : 0.0);
    } else {
      throw ConfigError("bad ablation value " + v.dump());
    }
  }
  if (root.has("distortions")) {
    Section d = root.child("distortions");
    for (DistortionKind k : all_distortion_kinds())
      if (d.has(to_string(k))) d.get(to_string(k), plan.distortions[k]);
    d.finish();
  }
  root.finish();
  plan.validate();
  return plan;
}

AblationPlan load_ablation_plan(const fs::path& path) {
  return parse_ablation_plan(read_text(path), path.parent_path());
}

void write_ablation_csv(std::ostream& out, const AblationTable& table, const std::string& comment) {
  if (!comment.empty()) out << comment;
  out << "axis,value,dsr,l2,psnr,ssim";
  std::vector<DistortionKind> kinds;
  if (!table.rows.empty())
    for (const auto& [k, v] : table.rows.front().distorted_dsr) kinds.push_back(k);
  for (DistortionKind k : kinds) out << ",dsr_" << to_string(k) << ",l2_" << to_string(k);
  out << '\n';
  for (const auto& r : table.rows) {
    out << to_string(table.axis) << ',' << r.value << ',' << fmt(r.dsr) << ',' << fmt(r.l2) << ','
        << fmt(r.psnr) << ',' << fmt(r.ssim);
    for (DistortionKind k : kinds)
      out << ',' << fmt(r.distorted_dsr.at(k)) << ',' << fmt(r.distorted_l2.at(k));
    out << '\n';
  }
}

AblationTable run_ablate(const AblationPlan& plan, std::ostream* log_stream) {
  plan.validate();
  Logger log(log_stream);
  const RunConfig& base = plan.base;
  require_dir(base.input_dir, "input_dir");
  const auto names = list_png(base.input_dir);
  if (names.empty()) throw ConfigError("no inputs: '" + base.input_dir.string() + "' has no .png files");
  std::vector<Tensor> clean(names.size());
  parallel_for(names.size(), base.workers,
               [&](std::size_t i) { clean[i] = read_png(base.input_dir / names[i]); });
  const ModelSet models = build_models(base);
  const NoiseSchedule sched = build_linear_schedule();
  MetricsConfig mc = base.metrics();
  mc.identity_encoder = models.identity_encoder;

  std::string plan_key = canonical_config(base) + "|" + to_string(plan.axis);
  for (double v : plan.values) plan_key += "|" + fmt(v);
  std::string comment = "# config_hash=" + hex64(fnv1a64(plan_key)) +
                        " seed=" + std::to_string(base.seed);
  for (const auto& [k, p] : plan.distortions) comment += " " + to_string(k) + "=" + fmt(p);
  comment += "\n";

  AblationTable table;
  table.axis = plan.axis;
  fs::create_directories(base.out_dir);
  const fs::path out_path = base.out_dir / "ablation.csv";
  with_error_sidecar(out_path, [&] {
    for (double value : plan.values) {
      const RunConfig cfg = plan.at(value);
      EvaluationReport report;
      report.task = cfg.task;
      report.rows.resize(names.size());
      std::vector<std::map<DistortionKind, MetricRow>> distorted(names.size());
      parallel_for(names.size(), cfg.workers, [&](std::size_t i) {
        const Tensor adv =
            quantize_8bit(protect_image(clean[i], names[i], cfg, models, sched).adversarial_image.data);
        report.rows[i] = evaluate_pair(names[i], clean[i], adv, *models.manipulator, cfg.task, mc);
        for (const auto& [kind, p] : plan.distortions) {
          const DistortionSpec spec{kind, p};
          const Tensor reference = cfg.sweep_reference == SweepReference::distorted_clean
                                       ? apply_distortion(clean[i], spec)
                                       : clean[i];
          distorted[i][kind] = evaluate_pair(names[i], reference, apply_distortion(adv, spec),
                                             *models.manipulator, cfg.task, mc);
        }
      });
      aggregate(report, mc);
      AblationRow row;
      row.value = axis_value_label(plan.axis, value);
      row.dsr = report.dsr;
      row.l2 = report.mean_out_l2;
      row.psnr = report.mean_in_psnr;
      row.ssim = report.mean_in_ssim;
      for (const auto& [kind, p] : plan.distortions) {
        std::vector<MetricRow> rows;
        double l2 = 0.0;
        for (const auto& d : distorted) {
          rows.push_back(d.at(kind));
          l2 += d.at(kind).out_l2;
        }
        row.distorted_dsr[kind] = dsr(rows, cfg.task, mc);
        row.distorted_l2[kind] = l2 / static_cast<double>(rows.size());
      }
      log("ablate: " + to_string(plan.axis) + "=" + row.value + " DSR " + fmt(row.dsr) + " L2 " +
          fmt(row.l2));
      table.rows.push_back(std::move(row));
    }
    std::ostringstream os;
    write_ablation_csv(os, table, comment);
    write_file_atomic(out_path, os.str());
  });
  return table;
}

}  // namespace trajguard
