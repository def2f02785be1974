#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "trajguard/model.hpp"
#include "trajguard/tensor.hpp"

namespace trajguard {

// Flat weight container used for serialization: seed + named arrays (shape + raw values).
struct NamedArray {
  std::vector<int> dims;
  std::vector<double> values;
};

struct WeightFile {
  std::string kind;
  std::uint64_t seed = 0;
  std::map<std::string, NamedArray> arrays;
};

void write_weights(std::ostream& out, const WeightFile& weights);
WeightFile read_weights(std::istream& in);
void save_weights(const std::string& path, const WeightFile& weights);
WeightFile load_weights(const std::string& path);

// 2-D convolution over (channels, H, W) with zero "same" padding.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, std::vector<double> weight,
         std::vector<double> bias);
  static Conv2d random(int in_channels, int out_channels, int kernel, double gain,
                       std::uint64_t seed);

  Tensor forward(const Tensor& x) const;
  // Gradient w.r.t. the input of forward, given the gradient w.r.t. its output.
  Tensor backward_input(const Tensor& grad_out) const;

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int kernel() const { return k_; }
  void export_to(WeightFile& w, const std::string& prefix) const;
  static Conv2d import_from(const WeightFile& w, const std::string& prefix);

 private:
  int in_ = 0;
  int out_ = 0;
  int k_ = 1;
  std::vector<double> weight_;  // (out, in, k, k)
  std::vector<double> bias_;    // (out)
};

class LinearDenoiser final : public Denoiser {
 public:
  explicit LinearDenoiser(double coefficient) : c_(coefficient) {}
  Tensor predict_noise(const Tensor& x, int timestep) const override;
  Tensor vjp(const Tensor& x, int timestep, const Tensor& upstream) const override;
  std::string name() const override { return "linear-denoiser"; }
  double coefficient() const { return c_; }
  WeightFile export_weights() const;

 private:
  double c_;
};

// eps(x, t) = scale * tanh(conv2(tanh(conv1(x) + emb(t))))
// where emb(t) is a sinusoidal embedding added per hidden channel.
class ConvDenoiser final : public Denoiser {
 public:
  ConvDenoiser(std::uint64_t seed, Conv2d conv1, Conv2d conv2, double output_scale);
  Tensor predict_noise(const Tensor& x, int timestep) const override;
  Tensor vjp(const Tensor& x, int timestep, const Tensor& upstream) const override;
  std::string name() const override { return "conv-denoiser"; }
  std::uint64_t seed() const override { return seed_; }
  WeightFile export_weights() const;

 private:
  Tensor hidden(const Tensor& x, int timestep) const;
  std::uint64_t seed_;
  Conv2d conv1_;
  Conv2d conv2_;
  double scale_;
};

std::vector<double> sinusoidal_embedding(int timestep, int dim);

// Unit-norm identity embedding: normalize(tanh(P x)). Output shape (d, 1, 1).
class IdentityEncoder final : public DifferentiableMap {
 public:
  IdentityEncoder(std::uint64_t seed, Shape input_shape, int dim, std::vector<double> projection);
  Tensor forward(const Tensor& x) const override;
  Tensor vjp(const Tensor& x, const Tensor& upstream) const override;
  std::string name() const override { return "identity-encoder"; }
  std::uint64_t seed() const override { return seed_; }

  std::vector<double> embed(const Tensor& x) const;
  int dimension() const { return dim_; }
  const Shape& input_shape() const { return input_shape_; }
  const std::vector<double>& projection() const { return projection_; }
  void export_to(WeightFile& w, const std::string& prefix) const;
  static std::shared_ptr<IdentityEncoder> import_from(const WeightFile& w,
                                                      const std::string& prefix);

 private:
  std::vector<double> preactivation(const Tensor& x) const;
  std::uint64_t seed_;
  Shape input_shape_;
  int dim_;
  std::vector<double> projection_;  // (dim, numel)
};

double cosine_similarity(std::span<const double> a, std::span<const double> b);

// y = tanh(x + gain * conv2(tanh(conv1(x))))
class AttributeEditor final : public DifferentiableMap {
 public:
  AttributeEditor(std::uint64_t seed, Conv2d conv1, Conv2d conv2, double gain);
  Tensor forward(const Tensor& x) const override;
  Tensor vjp(const Tensor& x, const Tensor& upstream) const override;
  std::string name() const override { return "attribute-editor"; }
  std::uint64_t seed() const override { return seed_; }
  WeightFile export_weights() const;

 private:
  std::uint64_t seed_;
  Conv2d conv1_;
  Conv2d conv2_;
  double gain_;
};

// Swaps the identity of the input (source) into a fixed target face:
// y = (1 - w) * target + w * tanh(D * embed(source)).
class FaceSwapper final : public DifferentiableMap {
 public:
  FaceSwapper(std::uint64_t seed, std::shared_ptr<const IdentityEncoder> encoder, Tensor target,
              std::vector<double> decoder, double weight);
  Tensor forward(const Tensor& x) const override;
  Tensor vjp(const Tensor& x, const Tensor& upstream) const override;
  std::string name() const override { return "face-swapper"; }
  std::uint64_t seed() const override { return seed_; }
  const IdentityEncoder& encoder() const { return *encoder_; }
  const Tensor& target() const { return target_; }
  WeightFile export_weights() const;

  // Swap with an explicit target instead of the bound one.
  Tensor swap(const Tensor& source, const Tensor& target) const;

 private:
  Tensor decode(const Tensor& source, std::vector<double>* embedding = nullptr) const;
  std::uint64_t seed_;
  std::shared_ptr<const IdentityEncoder> encoder_;
  Tensor target_;
  std::vector<double> decoder_;  // (numel, dim)
  double weight_;
};

// y = B vec(x), reshaped to the output shape.
class LinearManipulator final : public DifferentiableMap {
 public:
  LinearManipulator(Shape input_shape, Shape output_shape, std::vector<double> matrix);
  static std::shared_ptr<LinearManipulator> identity(Shape shape);
  Tensor forward(const Tensor& x) const override;
  Tensor vjp(const Tensor& x, const Tensor& upstream) const override;
  std::string name() const override { return "linear-manipulator"; }
  const std::vector<double>& matrix() const { return matrix_; }
  WeightFile export_weights() const;

 private:
  Shape in_;
  Shape out_;
  std::vector<double> matrix_;  // (out numel, in numel)
};

enum class DenoiserKind { linear, convolutional };
enum class ManipulatorKind { attribute_editor, face_swapper };

DenoiserKind parse_denoiser_kind(const std::string& s);
ManipulatorKind parse_manipulator_kind(const std::string& s);
std::string to_string(DenoiserKind k);
std::string to_string(ManipulatorKind k);

struct DenoiserOptions {
  double linear_coefficient = 0.1;
  int channels = 3;
  int hidden = 8;
  double output_scale = 0.1;
};

struct ManipulatorOptions {
  Shape shape{3, 32, 32};  // face-swapper needs the image shape up front
  int hidden = 8;
  double gain = 1.5;
  double swap_weight = 0.7;
  int identity_dim = 32;
};

std::shared_ptr<Denoiser> make_toy_denoiser(std::uint64_t seed, DenoiserKind kind,
                                            const DenoiserOptions& options = {});
std::shared_ptr<DifferentiableMap> make_toy_manipulator(std::uint64_t seed, ManipulatorKind kind,
                                                        const ManipulatorOptions& options = {});
std::shared_ptr<IdentityEncoder> make_toy_identity_encoder(std::uint64_t seed, int dim,
                                                           Shape input_shape);
std::shared_ptr<LinearManipulator> make_random_linear_manipulator(std::uint64_t seed, Shape shape,
                                                                  double scale = 1.0);

WeightFile export_weights(const Denoiser& d);
WeightFile export_weights(const Model& m);
std::shared_ptr<Denoiser> denoiser_from_weights(const WeightFile& w);
std::shared_ptr<DifferentiableMap> manipulator_from_weights(const WeightFile& w);

}  // namespace trajguard
