#include "trajguard/models.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

#include "trajguard/rng.hpp"

namespace trajguard {

// ---------------------------------------------------------------------------
// Weight files
//
//   trajguard-weights 1
//   kind <kind>
//   seed <seed>
//   array <name> <rank> <dim0> ... <dimN-1>
//   <values, whitespace separated, 17 significant digits>
//   ...
//   end
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kWeightMagic = "trajguard-weights";
constexpr int kWeightVersion = 1;

std::size_t product(const std::vector<int>& dims) {
  std::size_t n = 1;
  for (int d : dims) n *= static_cast<std::size_t>(d);
  return n;
}

const NamedArray& array_at(const WeightFile& w, const std::string& name) {
  auto it = w.arrays.find(name);
  if (it == w.arrays.end())
    throw ModelError("weight file for '" + w.kind + "' is missing array '" + name + "'");
  return it->second;
}

double scalar_at(const WeightFile& w, const std::string& name) {
  const auto& a = array_at(w, name);
  if (a.values.size() != 1) throw ModelError("array '" + name + "' is not a scalar");
  return a.values[0];
}

}  // namespace

void write_weights(std::ostream& out, const WeightFile& weights) {
  out << kWeightMagic << ' ' << kWeightVersion << '\n';
  out << "kind " << weights.kind << '\n';
  out << "seed " << weights.seed << '\n';
  out << std::setprecision(17);
  for (const auto& [name, arr] : weights.arrays) {
    out << "array " << name << ' ' << arr.dims.size();
    for (int d : arr.dims) out << ' ' << d;
    out << '\n';
    for (std::size_t i = 0; i < arr.values.size(); ++i)
      out << arr.values[i] << ((i + 1) % 8 == 0 || i + 1 == arr.values.size() ? '\n' : ' ');
  }
  out << "end\n";
}

WeightFile read_weights(std::istream& in) {
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != kWeightMagic)
    throw ModelError("not a trajguard weight file");
  if (version != kWeightVersion)
    throw ModelError("unsupported weight file version " + std::to_string(version));
  WeightFile w;
  std::string tag;
  while (in >> tag) {
    if (tag == "kind") {
      in >> w.kind;
    } else if (tag == "seed") {
      in >> w.seed;
    } else if (tag == "array") {
      std::string name;
      std::size_t rank = 0;
      in >> name >> rank;
      NamedArray arr;
      arr.dims.resize(rank);
      for (auto& d : arr.dims) in >> d;
      arr.values.resize(product(arr.dims));
      for (auto& v : arr.values) in >> v;
      if (!in) throw ModelError("truncated array '" + name + "' in weight file");
      w.arrays.emplace(name, std::move(arr));
    } else if (tag == "end") {
      return w;
    } else {
      throw ModelError("unexpected token '" + tag + "' in weight file");
    }
  }
  throw ModelError("weight file has no end marker");
}

void save_weights(const std::string& path, const WeightFile& weights) {
  std::ofstream f(path);
  if (!f) throw ModelError("cannot write weight file " + path);
  write_weights(f, weights);
}

WeightFile load_weights(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ModelError("cannot read weight file " + path);
  return read_weights(f);
}

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, std::vector<double> weight,
               std::vector<double> bias)
    : in_(in_channels), out_(out_channels), k_(kernel),
      weight_(std::move(weight)), bias_(std::move(bias)) {
  if (kernel < 1 || kernel % 2 == 0) throw ParameterError("conv kernel must be odd");
  if (weight_.size() != static_cast<std::size_t>(out_) * in_ * k_ * k_ ||
      bias_.size() != static_cast<std::size_t>(out_))
    throw ParameterError("conv weight/bias size mismatch");
}

Conv2d Conv2d::random(int in_channels, int out_channels, int kernel, double gain,
                      std::uint64_t seed) {
  Rng rng(seed);
  const double std_w = gain / std::sqrt(static_cast<double>(in_channels * kernel * kernel));
  std::vector<double> w(static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel);
  for (auto& v : w) v = std_w * rng.normal();
  std::vector<double> b(out_channels);
  for (auto& v : b) v = 0.1 * rng.normal();
  return Conv2d(in_channels, out_channels, kernel, std::move(w), std::move(b));
}

Tensor Conv2d::forward(const Tensor& x) const {
  const Shape s = x.shape();
  if (s.channels != in_)
    throw ParameterError("conv expects " + std::to_string(in_) + " channels, got " +
                         std::to_string(s.channels));
  const int r = k_ / 2;
  Tensor y({out_, s.height, s.width});
  for (int o = 0; o < out_; ++o) {
    for (int yy = 0; yy < s.height; ++yy)
      for (int xx = 0; xx < s.width; ++xx) y.at(o, yy, xx) = bias_[o];
    for (int i = 0; i < in_; ++i) {
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx) {
          const double w = weight_[((static_cast<std::size_t>(o) * in_ + i) * k_ + ky) * k_ + kx];
          const int dy = ky - r;
          const int dx = kx - r;
          for (int yy = std::max(0, -dy); yy < std::min(s.height, s.height - dy); ++yy)
            for (int xx = std::max(0, -dx); xx < std::min(s.width, s.width - dx); ++xx)
              y.at(o, yy, xx) += w * x.at(i, yy + dy, xx + dx);
        }
      }
    }
  }
  return y;
}

Tensor Conv2d::backward_input(const Tensor& grad_out) const {
  const Shape s = grad_out.shape();
  if (s.channels != out_) throw ParameterError("conv backward: channel mismatch");
  const int r = k_ / 2;
  Tensor g({in_, s.height, s.width});
  for (int o = 0; o < out_; ++o) {
    for (int i = 0; i < in_; ++i) {
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx) {
          const double w = weight_[((static_cast<std::size_t>(o) * in_ + i) * k_ + ky) * k_ + kx];
          const int dy = ky - r;
          const int dx = kx - r;
          for (int yy = std::max(0, -dy); yy < std::min(s.height, s.height - dy); ++yy)
            for (int xx = std::max(0, -dx); xx < std::min(s.width, s.width - dx); ++xx)
              g.at(i, yy + dy, xx + dx) += w * grad_out.at(o, yy, xx);
        }
      }
    }
  }
  return g;
}

void Conv2d::export_to(WeightFile& w, const std::string& prefix) const {
  w.arrays[prefix + ".weight"] = {{out_, in_, k_, k_}, weight_};
  w.arrays[prefix + ".bias"] = {{out_}, bias_};
}

Conv2d Conv2d::import_from(const WeightFile& w, const std::string& prefix) {
  const auto& wt = array_at(w, prefix + ".weight");
  const auto& b = array_at(w, prefix + ".bias");
  if (wt.dims.size() != 4 || wt.dims[2] != wt.dims[3])
    throw ModelError("array '" + prefix + ".weight' is not a square conv kernel");
  return Conv2d(wt.dims[1], wt.dims[0], wt.dims[2], wt.values, b.values);
}

namespace {

void tanh_inplace(Tensor& t) {
  for (double& v : t.raw()) v = std::tanh(v);
}

// g *= (1 - y^2) elementwise, y = tanh output
void tanh_backward(Tensor& g, const Tensor& y) {
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 1.0 - y[i] * y[i];
}

}  // namespace

// ---------------------------------------------------------------------------
// Denoisers
// ---------------------------------------------------------------------------

Tensor LinearDenoiser::predict_noise(const Tensor& x, int) const { return c_ * x; }

Tensor LinearDenoiser::vjp(const Tensor& x, int, const Tensor& upstream) const {
  require_same_shape(x, upstream, "linear denoiser vjp");
  return c_ * upstream;
}

WeightFile LinearDenoiser::export_weights() const {
  WeightFile w{"linear-denoiser", 0, {}};
  w.arrays["coefficient"] = {{1}, {c_}};
  return w;
}

std::vector<double> sinusoidal_embedding(int timestep, int dim) {
  std::vector<double> e(dim);
  for (int j = 0; j < dim; ++j) {
    const double freq = std::pow(10000.0, -static_cast<double>(2 * (j / 2)) / dim);
    e[j] = (j % 2 == 0) ? std::sin(timestep * freq) : std::cos(timestep * freq);
  }
  return e;
}

ConvDenoiser::ConvDenoiser(std::uint64_t seed, Conv2d conv1, Conv2d conv2, double output_scale)
    : seed_(seed), conv1_(std::move(conv1)), conv2_(std::move(conv2)), scale_(output_scale) {
  if (conv1_.out_channels() != conv2_.in_channels() ||
      conv2_.out_channels() != conv1_.in_channels())
    throw ParameterError("conv denoiser layer shapes do not chain");
}

Tensor ConvDenoiser::hidden(const Tensor& x, int timestep) const {
  Tensor h = conv1_.forward(x);
  const auto emb = sinusoidal_embedding(timestep, h.shape().channels);
  const Shape s = h.shape();
  for (int c = 0; c < s.channels; ++c)
    for (int y = 0; y < s.height; ++y)
      for (int xx = 0; xx < s.width; ++xx) h.at(c, y, xx) += emb[c];
  tanh_inplace(h);
  return h;
}

Tensor ConvDenoiser::predict_noise(const Tensor& x, int timestep) const {
  Tensor o = conv2_.forward(hidden(x, timestep));
  tanh_inplace(o);
  return scale_ * std::move(o);
}

Tensor ConvDenoiser::vjp(const Tensor& x, int timestep, const Tensor& upstream) const {
  const Tensor h = hidden(x, timestep);
  Tensor o = conv2_.forward(h);
  tanh_inplace(o);
  require_same_shape(o, upstream, "conv denoiser vjp");
  Tensor g = scale_ * upstream;
  tanh_backward(g, o);
  Tensor gh = conv2_.backward_input(g);
  tanh_backward(gh, h);
  return conv1_.backward_input(gh);
}

WeightFile ConvDenoiser::export_weights() const {
  WeightFile w{"conv-denoiser", seed_, {}};
  conv1_.export_to(w, "conv1");
  conv2_.export_to(w, "conv2");
  w.arrays["output_scale"] = {{1}, {scale_}};
  return w;
}

// ---------------------------------------------------------------------------
// Identity encoder
// ---------------------------------------------------------------------------

IdentityEncoder::IdentityEncoder(std::uint64_t seed, Shape input_shape, int dim,
                                 std::vector<double> projection)
    : seed_(seed), input_shape_(input_shape), dim_(dim), projection_(std::move(projection)) {
  if (dim < 2) throw ParameterError("identity embedding dimension must be >= 2");
  if (projection_.size() != static_cast<std::size_t>(dim) * input_shape.numel())
    throw ParameterError("identity projection size mismatch");
}

std::vector<double> IdentityEncoder::preactivation(const Tensor& x) const {
  if (!(x.shape() == input_shape_))
    throw ParameterError("identity encoder expects shape " + input_shape_.str() + ", got " +
                         x.shape().str());
  const std::size_t n = x.size();
  std::vector<double> u(dim_, 0.0);
  for (int j = 0; j < dim_; ++j) {
    const double* row = projection_.data() + static_cast<std::size_t>(j) * n;
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += row[i] * x[i];
    u[j] = s;
  }
  return u;
}

std::vector<double> IdentityEncoder::embed(const Tensor& x) const {
  auto v = preactivation(x);
  double nrm = 0.0;
  for (double& a : v) {
    a = std::tanh(a);
    nrm += a * a;
  }
  nrm = std::sqrt(nrm);
  if (nrm == 0.0) {
    // Degenerate input: fall back to a fixed unit vector.
    std::fill(v.begin(), v.end(), 0.0);
    v[0] = 1.0;
    return v;
  }
  for (double& a : v) a /= nrm;
  return v;
}

Tensor IdentityEncoder::forward(const Tensor& x) const {
  return Tensor({dim_, 1, 1}, embed(x));
}

Tensor IdentityEncoder::vjp(const Tensor& x, const Tensor& upstream) const {
  if (upstream.size() != static_cast<std::size_t>(dim_))
    throw ParameterError("identity encoder vjp: upstream size mismatch");
  auto v = preactivation(x);
  double nrm = 0.0;
  for (double& a : v) {
    a = std::tanh(a);
    nrm += a * a;
  }
  nrm = std::sqrt(nrm);
  Tensor g(input_shape_);
  if (nrm == 0.0) return g;
  // e = v/|v|; de/dv = (I - e e^T)/|v|; dv/du = 1 - v^2; du/dx = P.
  double e_dot_g = 0.0;
  for (int j = 0; j < dim_; ++j) e_dot_g += (v[j] / nrm) * upstream[j];
  const std::size_t n = g.size();
  for (int j = 0; j < dim_; ++j) {
    const double gv = (upstream[j] - (v[j] / nrm) * e_dot_g) / nrm;
    const double gu = gv * (1.0 - v[j] * v[j]);
    const double* row = projection_.data() + static_cast<std::size_t>(j) * n;
    for (std::size_t i = 0; i < n; ++i) g[i] += gu * row[i];
  }
  return g;
}

void IdentityEncoder::export_to(WeightFile& w, const std::string& prefix) const {
  w.arrays[prefix + ".projection"] = {
      {dim_, input_shape_.channels, input_shape_.height, input_shape_.width}, projection_};
  w.arrays[prefix + ".seed"] = {{1}, {static_cast<double>(seed_)}};
}

std::shared_ptr<IdentityEncoder> IdentityEncoder::import_from(const WeightFile& w,
                                                              const std::string& prefix) {
  const auto& p = array_at(w, prefix + ".projection");
  if (p.dims.size() != 4) throw ModelError("identity projection must have rank 4");
  const auto seed = static_cast<std::uint64_t>(scalar_at(w, prefix + ".seed"));
  return std::make_shared<IdentityEncoder>(seed, Shape{p.dims[1], p.dims[2], p.dims[3]},
                                           p.dims[0], p.values);
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ParameterError("cosine similarity: size mismatch");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

// ---------------------------------------------------------------------------
// Manipulators
// ---------------------------------------------------------------------------

AttributeEditor::AttributeEditor(std::uint64_t seed, Conv2d conv1, Conv2d conv2, double gain)
    : seed_(seed), conv1_(std::move(conv1)), conv2_(std::move(conv2)), gain_(gain) {
  if (conv1_.out_channels() != conv2_.in_channels() ||
      conv2_.out_channels() != conv1_.in_channels())
    throw ParameterError("attribute editor layer shapes do not chain");
}

Tensor AttributeEditor::forward(const Tensor& x) const {
  Tensor h = conv1_.forward(x);
  tanh_inplace(h);
  Tensor z = x;
  z.axpy(gain_, conv2_.forward(h));
  tanh_inplace(z);
  return z;
}

Tensor AttributeEditor::vjp(const Tensor& x, const Tensor& upstream) const {
  Tensor h = conv1_.forward(x);
  tanh_inplace(h);
  Tensor y = x;
  y.axpy(gain_, conv2_.forward(h));
  tanh_inplace(y);
  require_same_shape(y, upstream, "attribute editor vjp");
  Tensor gz = upstream;
  tanh_backward(gz, y);
  Tensor gh = conv2_.backward_input(gz);
  tanh_backward(gh, h);
  Tensor gx = conv1_.backward_input(gh);
  gx *= gain_;
  gx += gz;
  return gx;
}

WeightFile AttributeEditor::export_weights() const {
  WeightFile w{"attribute-editor", seed_, {}};
  conv1_.export_to(w, "conv1");
  conv2_.export_to(w, "conv2");
  w.arrays["gain"] = {{1}, {gain_}};
  return w;
}

FaceSwapper::FaceSwapper(std::uint64_t seed, std::shared_ptr<const IdentityEncoder> encoder,
                         Tensor target, std::vector<double> decoder, double weight)
    : seed_(seed), encoder_(std::move(encoder)), target_(std::move(target)),
      decoder_(std::move(decoder)), weight_(weight) {
  if (!encoder_) throw ParameterError("face swapper needs an identity encoder");
  if (!(target_.shape() == encoder_->input_shape()))
    throw ParameterError("face swapper target shape must match the encoder input");
  if (decoder_.size() != target_.size() * static_cast<std::size_t>(encoder_->dimension()))
    throw ParameterError("face swapper decoder size mismatch");
}

Tensor FaceSwapper::decode(const Tensor& source, std::vector<double>* embedding) const {
  const auto e = encoder_->embed(source);
  const int d = encoder_->dimension();
  Tensor out(target_.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += decoder_[i * d + j] * e[j];
    out[i] = std::tanh(s);
  }
  if (embedding) *embedding = e;
  return out;
}

Tensor FaceSwapper::swap(const Tensor& source, const Tensor& target) const {
  require_same_shape(source, target, "face swap");
  Tensor y = (1.0 - weight_) * target;
  y.axpy(weight_, decode(source));
  return y;
}

Tensor FaceSwapper::forward(const Tensor& x) const { return swap(x, target_); }

Tensor FaceSwapper::vjp(const Tensor& x, const Tensor& upstream) const {
  require_same_shape(x, upstream, "face swapper vjp");
  const Tensor dec = decode(x);
  const int d = encoder_->dimension();
  std::vector<double> ge(d, 0.0);
  for (std::size_t i = 0; i < dec.size(); ++i) {
    const double gpre = weight_ * upstream[i] * (1.0 - dec[i] * dec[i]);
    for (int j = 0; j < d; ++j) ge[j] += decoder_[i * d + j] * gpre;
  }
  return encoder_->vjp(x, Tensor({d, 1, 1}, std::move(ge)));
}

WeightFile FaceSwapper::export_weights() const {
  WeightFile w{"face-swapper", seed_, {}};
  encoder_->export_to(w, "encoder");
  const Shape s = target_.shape();
  w.arrays["target"] = {{s.channels, s.height, s.width}, target_.raw()};
  w.arrays["decoder"] = {{static_cast<int>(target_.size()), encoder_->dimension()}, decoder_};
  w.arrays["weight"] = {{1}, {weight_}};
  return w;
}

LinearManipulator::LinearManipulator(Shape input_shape, Shape output_shape,
                                     std::vector<double> matrix)
    : in_(input_shape), out_(output_shape), matrix_(std::move(matrix)) {
  if (matrix_.size() != in_.numel() * out_.numel())
    throw ParameterError("linear manipulator matrix size mismatch");
}

std::shared_ptr<LinearManipulator> LinearManipulator::identity(Shape shape) {
  const std::size_t n = shape.numel();
  std::vector<double> m(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) m[i * n + i] = 1.0;
  return std::make_shared<LinearManipulator>(shape, shape, std::move(m));
}

Tensor LinearManipulator::forward(const Tensor& x) const {
  if (!(x.shape() == in_))
    throw ParameterError("linear manipulator expects shape " + in_.str());
  const std::size_t n = in_.numel();
  Tensor y(out_);
  for (std::size_t r = 0; r < y.size(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += matrix_[r * n + c] * x[c];
    y[r] = s;
  }
  return y;
}

Tensor LinearManipulator::vjp(const Tensor& x, const Tensor& upstream) const {
  if (!(x.shape() == in_) || !(upstream.shape() == out_))
    throw ParameterError("linear manipulator vjp: shape mismatch");
  const std::size_t n = in_.numel();
  Tensor g(in_);
  for (std::size_t r = 0; r < upstream.size(); ++r)
    for (std::size_t c = 0; c < n; ++c) g[c] += matrix_[r * n + c] * upstream[r];
  return g;
}

WeightFile LinearManipulator::export_weights() const {
  WeightFile w{"linear-manipulator", 0, {}};
  w.arrays["input_shape"] = {{3}, {double(in_.channels), double(in_.height), double(in_.width)}};
  w.arrays["matrix"] = {{static_cast<int>(out_.numel()), static_cast<int>(in_.numel())}, matrix_};
  w.arrays["output_shape"] = {{3},
                              {double(out_.channels), double(out_.height), double(out_.width)}};
  return w;
}

// ---------------------------------------------------------------------------
// Factories
// ---------------------------------------------------------------------------

DenoiserKind parse_denoiser_kind(const std::string& s) {
  if (s == "linear") return DenoiserKind::linear;
  if (s == "convolutional" || s == "small-convolutional") return DenoiserKind::convolutional;
  throw ParameterError("unknown denoiser kind '" + s + "'");
}

ManipulatorKind parse_manipulator_kind(const std::string& s) {
  if (s == "attribute-editor") return ManipulatorKind::attribute_editor;
  if (s == "face-swapper") return ManipulatorKind::face_swapper;
  throw ParameterError("unknown manipulator kind '" + s + "'");
}

std::string to_string(DenoiserKind k) {
  return k == DenoiserKind::linear ? "linear" : "convolutional";
}

std::string to_string(ManipulatorKind k) {
  return k == ManipulatorKind::attribute_editor ? "attribute-editor" : "face-swapper";
}

std::shared_ptr<Denoiser> make_toy_denoiser(std::uint64_t seed, DenoiserKind kind,
                                            const DenoiserOptions& options) {
  if (kind == DenoiserKind::linear)
    return std::make_shared<LinearDenoiser>(options.linear_coefficient);
  return std::make_shared<ConvDenoiser>(
      seed, Conv2d::random(options.channels, options.hidden, 3, 1.0, derive_seed(seed, 1)),
      Conv2d::random(options.hidden, options.channels, 3, 1.0, derive_seed(seed, 2)),
      options.output_scale);
}

std::shared_ptr<IdentityEncoder> make_toy_identity_encoder(std::uint64_t seed, int dim,
                                                           Shape input_shape) {
  if (dim < 2) throw ParameterError("identity embedding dimension must be >= 2");
  Rng rng(derive_seed(seed, 0x1d));
  const std::size_t n = input_shape.numel();
  std::vector<double> p(static_cast<std::size_t>(dim) * n);
  const double sd = 1.0 / std::sqrt(static_cast<double>(n));
  for (auto& v : p) v = sd * rng.normal();
  return std::make_shared<IdentityEncoder>(seed, input_shape, dim, std::move(p));
}

std::shared_ptr<DifferentiableMap> make_toy_manipulator(std::uint64_t seed, ManipulatorKind kind,
                                                        const ManipulatorOptions& options) {
  const int channels = options.shape.channels;
  if (kind == ManipulatorKind::attribute_editor) {
    return std::make_shared<AttributeEditor>(
        seed, Conv2d::random(channels, options.hidden, 3, 1.5, derive_seed(seed, 11)),
        Conv2d::random(options.hidden, channels, 3, 1.0, derive_seed(seed, 12)), options.gain);
  }
  auto encoder = make_toy_identity_encoder(derive_seed(seed, 21), options.identity_dim,
                                           options.shape);
  Rng rng(derive_seed(seed, 22));
  Tensor target(options.shape);
  // Smooth seeded target face: a few low-frequency waves per channel.
  for (int c = 0; c < options.shape.channels; ++c) {
    const double fx = 1.0 + 2.0 * rng.uniform();
    const double fy = 1.0 + 2.0 * rng.uniform();
    const double ph = 2.0 * std::numbers::pi * rng.uniform();
    for (int y = 0; y < options.shape.height; ++y)
      for (int x = 0; x < options.shape.width; ++x)
        target.at(c, y, x) =
            0.6 * std::sin(fx * x * std::numbers::pi / options.shape.width +
                           fy * y * std::numbers::pi / options.shape.height + ph);
  }
  // Decoder = scaled transpose of the encoder projection, so decode(embed(s)) re-embeds near s.
  const std::size_t n = options.shape.numel();
  const int d = options.identity_dim;
  const double scale = 1.5 * std::sqrt(static_cast<double>(n));
  std::vector<double> dec(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) dec[i * d + j] = scale * encoder->projection()[j * n + i];
  return std::make_shared<FaceSwapper>(seed, std::move(encoder), std::move(target),
                                       std::move(dec), options.swap_weight);
}

std::shared_ptr<LinearManipulator> make_random_linear_manipulator(std::uint64_t seed, Shape shape,
                                                                  double scale) {
  Rng rng(seed);
  const std::size_t n = shape.numel();
  std::vector<double> m(n * n);
  const double sd = scale / std::sqrt(static_cast<double>(n));
  for (auto& v : m) v = sd * rng.normal();
  return std::make_shared<LinearManipulator>(shape, shape, std::move(m));
}

WeightFile export_weights(const Denoiser& d) {
  if (auto* p = dynamic_cast<const LinearDenoiser*>(&d)) return p->export_weights();
  if (auto* p = dynamic_cast<const ConvDenoiser*>(&d)) return p->export_weights();
  throw ModelError("denoiser '" + d.name() + "' is not serializable");
}

WeightFile export_weights(const Model& m) {
  if (auto* p = dynamic_cast<const AttributeEditor*>(&m)) return p->export_weights();
  if (auto* p = dynamic_cast<const FaceSwapper*>(&m)) return p->export_weights();
  if (auto* p = dynamic_cast<const LinearManipulator*>(&m)) return p->export_weights();
  throw ModelError("model '" + m.name() + "' is not serializable");
}

std::shared_ptr<Denoiser> denoiser_from_weights(const WeightFile& w) {
  if (w.kind == "linear-denoiser")
    return std::make_shared<LinearDenoiser>(scalar_at(w, "coefficient"));
  if (w.kind == "conv-denoiser")
    return std::make_shared<ConvDenoiser>(w.seed, Conv2d::import_from(w, "conv1"),
                                          Conv2d::import_from(w, "conv2"),
                                          scalar_at(w, "output_scale"));
  throw ModelError("weight file kind '" + w.kind + "' is not a denoiser");
}

std::shared_ptr<DifferentiableMap> manipulator_from_weights(const WeightFile& w) {
  auto shape_of = [&](const std::string& name) {
    const auto& a = array_at(w, name);
    if (a.values.size() != 3) throw ModelError("array '" + name + "' is not a shape");
    return Shape{int(a.values[0]), int(a.values[1]), int(a.values[2])};
  };
  if (w.kind == "attribute-editor")
    return std::make_shared<AttributeEditor>(w.seed, Conv2d::import_from(w, "conv1"),
                                             Conv2d::import_from(w, "conv2"),
                                             scalar_at(w, "gain"));
  if (w.kind == "face-swapper") {
    const auto& t = array_at(w, "target");
    if (t.dims.size() != 3) throw ModelError("face swapper target must have rank 3");
    return std::make_shared<FaceSwapper>(
        w.seed, IdentityEncoder::import_from(w, "encoder"),
        Tensor({t.dims[0], t.dims[1], t.dims[2]}, t.values), array_at(w, "decoder").values,
        scalar_at(w, "weight"));
  }
  if (w.kind == "linear-manipulator")
    return std::make_shared<LinearManipulator>(shape_of("input_shape"), shape_of("output_shape"),
                                               array_at(w, "matrix").values);
  throw ModelError("weight file kind '" + w.kind + "' is not a manipulator");
}

}  // namespace trajguard
