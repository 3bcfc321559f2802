#include "vfl/mlp.hpp"

#include <cmath>

#include "json.hpp"

namespace vfl {

namespace {

double activate(Activation a, double x) {
  switch (a) {
    case Activation::Tanh:
      return std::tanh(x);
    case Activation::Relu:
      return x > 0 ? x : 0.0;
  }
  return 0.0;
}

double activate_prime_from_pre(Activation a, double pre, double post) {
  switch (a) {
    case Activation::Tanh:
      return 1.0 - post * post;
    case Activation::Relu:
      return pre > 0 ? 1.0 : 0.0;
  }
  return 0.0;
}

}  // namespace

void MlpSpec::validate() const {
  if (widths.size() < 3) throw ConfigError("mlp: need at least one hidden layer");
  for (int w : widths) {
    if (w < 1) throw ConfigError("mlp: layer widths must be >= 1");
  }
}

std::size_t MlpSpec::param_count() const {
  std::size_t count = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    count += static_cast<std::size_t>(widths[l] + 1) * widths[l + 1];
  }
  return count;
}

Vec MlpParams::flatten() const {
  Vec flat;
  flat.reserve(param_count());
  for (std::size_t l = 0; l < weights.size(); ++l) {
    flat.insert(flat.end(), weights[l].data.begin(), weights[l].data.end());
    flat.insert(flat.end(), biases[l].begin(), biases[l].end());
  }
  return flat;
}

void MlpParams::unflatten(const Vec& flat) {
  if (flat.size() != param_count()) throw ShapeError("mlp unflatten: wrong parameter count");
  std::size_t at = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    for (double& w : weights[l].data) w = flat[at++];
    for (double& b : biases[l]) b = flat[at++];
  }
}

MlpParams mlp_init(const MlpSpec& spec, RngStream& stream) {
  spec.validate();
  MlpParams p;
  p.spec = spec;
  for (int l = 0; l < spec.num_layers(); ++l) {
    const int fan_in = spec.widths[l];
    const int fan_out = spec.widths[l + 1];
    const double sd = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Mat w(fan_out, fan_in);
    for (double& v : w.data) v = sd * stream.standard_normal();
    p.weights.push_back(std::move(w));
    p.biases.emplace_back(fan_out, 0.0);
  }
  return p;
}

MlpForwardResult mlp_forward(const MlpParams& params, const Mat& inputs) {
  const MlpSpec& spec = params.spec;
  if (static_cast<int>(inputs.cols) != spec.input_dim()) {
    throw ShapeError("mlp_forward: input dim mismatch");
  }
  MlpForwardResult res;
  res.tape.batch = inputs.rows;
  res.tape.input = inputs;
  Mat cur = inputs;
  for (int l = 0; l < spec.num_layers(); ++l) {
    const Mat& w = params.weights[l];
    const Vec& b = params.biases[l];
    Mat pre(cur.rows, w.rows);
    for (std::size_t i = 0; i < cur.rows; ++i) {
      for (std::size_t o = 0; o < w.rows; ++o) {
        double s = b[o];
        const double* wrow = w.row_ptr(o);
        const double* xrow = cur.row_ptr(i);
        for (std::size_t k = 0; k < w.cols; ++k) s += wrow[k] * xrow[k];
        pre(i, o) = s;
      }
    }
    const bool last = (l + 1 == spec.num_layers());
    Mat post = pre;
    if (!last) {
      for (double& v : post.data) v = activate(spec.act, v);
    }
    res.tape.pre.push_back(pre);
    res.tape.post.push_back(post);
    cur = std::move(post);
  }
  res.output = res.tape.post.back();
  return res;
}

MlpBackwardResult mlp_backward(const MlpParams& params, const ForwardTape& tape,
                               const Mat& upstream) {
  const MlpSpec& spec = params.spec;
  if (tape.pre.size() != static_cast<std::size_t>(spec.num_layers())) {
    throw ProtocolError("mlp_backward: tape does not match network depth");
  }
  if (upstream.rows != tape.batch || static_cast<int>(upstream.cols) != spec.output_dim()) {
    throw ShapeError("mlp_backward: upstream shape mismatch");
  }

  MlpBackwardResult res;
  std::vector<Mat> wgrads(spec.num_layers());
  std::vector<Vec> bgrads(spec.num_layers());

  Mat delta = upstream;  // d<loss>/d(pre activation of current layer), last layer is linear
  for (int l = spec.num_layers() - 1; l >= 0; --l) {
    const Mat& w = params.weights[l];
    const Mat& layer_in = (l == 0) ? tape.input : tape.post[l - 1];
    if (delta.rows != layer_in.rows) throw ProtocolError("mlp_backward: stale tape");

    Mat wg(w.rows, w.cols, 0.0);
    Vec bg(w.rows, 0.0);
    for (std::size_t i = 0; i < delta.rows; ++i) {
      const double* drow = delta.row_ptr(i);
      const double* xrow = layer_in.row_ptr(i);
      for (std::size_t o = 0; o < w.rows; ++o) {
        const double d = drow[o];
        bg[o] += d;
        double* wgrow = wg.row_ptr(o);
        for (std::size_t k = 0; k < w.cols; ++k) wgrow[k] += d * xrow[k];
      }
    }
    wgrads[l] = std::move(wg);
    bgrads[l] = std::move(bg);

    // Propagate to the previous layer's activations.
    Mat prev(delta.rows, w.cols, 0.0);
    for (std::size_t i = 0; i < delta.rows; ++i) {
      const double* drow = delta.row_ptr(i);
      double* prow = prev.row_ptr(i);
      for (std::size_t o = 0; o < w.rows; ++o) {
        const double d = drow[o];
        const double* wrow = w.row_ptr(o);
        for (std::size_t k = 0; k < w.cols; ++k) prow[k] += d * wrow[k];
      }
    }
    if (l > 0) {
      // Through the previous layer's activation.
      const Mat& pre = tape.pre[l - 1];
      const Mat& post = tape.post[l - 1];
      for (std::size_t i = 0; i < prev.rows; ++i)
        for (std::size_t k = 0; k < prev.cols; ++k)
          prev(i, k) *= activate_prime_from_pre(spec.act, pre(i, k), post(i, k));
    }
    delta = std::move(prev);
  }

  res.input_grads = std::move(delta);
  res.param_grads.reserve(spec.param_count());
  for (int l = 0; l < spec.num_layers(); ++l) {
    res.param_grads.insert(res.param_grads.end(), wgrads[l].data.begin(), wgrads[l].data.end());
    res.param_grads.insert(res.param_grads.end(), bgrads[l].begin(), bgrads[l].end());
  }
  return res;
}

std::string mlp_shape_header(const MlpSpec& spec) {
  nlohmann::json j;
  j["widths"] = spec.widths;
  j["activation"] = activation_name(spec.act);
  j["dtype"] = "float64le";
  return j.dump();
}

MlpSpec mlp_spec_from_header(const std::string& json_text) {
  const auto j = nlohmann::json::parse(json_text);
  MlpSpec spec;
  spec.widths = j.at("widths").get<std::vector<int>>();
  spec.act = activation_from_name(j.at("activation").get<std::string>());
  return spec;
}

Activation activation_from_name(const std::string& name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::Relu;
  throw ConfigError("unknown activation: " + name);
}

std::string activation_name(Activation a) {
  return a == Activation::Tanh ? "tanh" : "relu";
}

}  // namespace vfl
