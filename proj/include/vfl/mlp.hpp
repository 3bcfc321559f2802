#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vfl/rng.hpp"
#include "vfl/vec.hpp"

namespace vfl {

enum class Activation { Tanh, Relu };

// widths lists every layer size including input and output,
// e.g. {1, 8, 8, 2} is a net with two 8-wide hidden layers and 2 heads.
struct MlpSpec {
  std::vector<int> widths;
  Activation act = Activation::Tanh;

  int input_dim() const { return widths.front(); }
  int output_dim() const { return widths.back(); }
  int num_layers() const { return static_cast<int>(widths.size()) - 1; }
  std::size_t param_count() const;
  void validate() const;
};

struct MlpParams {
  MlpSpec spec;
  std::vector<Mat> weights;  // per layer, out x in
  std::vector<Vec> biases;   // per layer

  Vec flatten() const;
  void unflatten(const Vec& flat);
  std::size_t param_count() const { return spec.param_count(); }
};

// Pre-activations and activations captured during a forward pass.
struct ForwardTape {
  std::size_t batch = 0;
  Mat input;
  std::vector<Mat> pre;   // per layer, batch x width
  std::vector<Mat> post;  // per layer, batch x width (post == pre for last layer)
};

struct MlpForwardResult {
  Mat output;  // batch x out
  ForwardTape tape;
};

struct MlpBackwardResult {
  Vec param_grads;  // flattened, same layout as MlpParams::flatten
  Mat input_grads;  // batch x in
};

// Weights ~ N(0, 1/sqrt(fan_in)), biases 0.
MlpParams mlp_init(const MlpSpec& spec, RngStream& stream);

MlpForwardResult mlp_forward(const MlpParams& params, const Mat& inputs);

// Gradients of <upstream, output> w.r.t. parameters and inputs.
MlpBackwardResult mlp_backward(const MlpParams& params, const ForwardTape& tape,
                               const Mat& upstream);

// Flat little-endian float64 array with a JSON shape header.
std::string mlp_shape_header(const MlpSpec& spec);
MlpSpec mlp_spec_from_header(const std::string& json_text);

Activation activation_from_name(const std::string& name);
std::string activation_name(Activation a);

}  // namespace vfl
