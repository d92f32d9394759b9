#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tlf/checkpoint.hpp"
#include "tlf/ops.hpp"
#include "tlf/rng.hpp"
#include "tlf/tensor.hpp"

namespace tlf {

// He-initialized convolution kernel [kh,kw,cin,cout].
inline Tensor he_kernel(int kh, int kw, int cin, int cout, Rng& rng) {
  const double stddev = std::sqrt(2.0 / (static_cast<double>(kh) * kw * cin));
  return Tensor::randn({kh, kw, cin, cout}, rng, stddev, true);
}

struct Conv2dLayer {
  Tensor kernel;
  Tensor bias;  // undefined when the layer has no bias
  Conv2dSpec spec;

  static Conv2dLayer make(int k, int cin, int cout, bool with_bias, Conv2dSpec spec, Rng& rng) {
    Conv2dLayer l;
    l.kernel = he_kernel(k, k, cin, cout, rng);
    if (with_bias) l.bias = Tensor::zeros({cout}, true);
    l.spec = spec;
    return l;
  }

  Tensor forward(const Tensor& x) const { return conv2d(x, kernel, bias, spec); }

  void register_into(Registry& reg, const std::string& prefix, bool trainable) const {
    reg.add_param(prefix + ".k", kernel, /*decay=*/true, trainable);
    if (bias.defined()) reg.add_param(prefix + ".b", bias, /*decay=*/false, trainable);
  }
};

struct BatchNormLayer {
  Tensor gamma;
  Tensor beta;
  mutable BnStats stats;

  static BatchNormLayer make(int channels) {
    BatchNormLayer l;
    l.gamma = Tensor::full({channels}, 1.0, true);
    l.beta = Tensor::zeros({channels}, true);
    l.stats.init(channels);
    return l;
  }

  Tensor forward(const Tensor& x, Mode mode) const {
    return batch_norm(x, gamma, beta, mode, stats);
  }

  void register_into(Registry& reg, const std::string& prefix, bool trainable) {
    reg.add_param(prefix + ".gamma", gamma, /*decay=*/false, trainable);
    reg.add_param(prefix + ".beta", beta, /*decay=*/false, trainable);
    reg.add_buffer(prefix + ".rmean", &stats.mean);
    reg.add_buffer(prefix + ".rvar", &stats.var);
  }
};

struct DenseLayer {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out]

  static DenseLayer make(int in, int out, Rng& rng) {
    DenseLayer l;
    l.weight = Tensor::randn({out, in}, rng, std::sqrt(2.0 / in), true);
    l.bias = Tensor::zeros({out}, true);
    return l;
  }

  Tensor forward(const Tensor& x) const { return dense(x, weight, bias); }

  void register_into(Registry& reg, const std::string& prefix, bool trainable) const {
    reg.add_param(prefix + ".w", weight, /*decay=*/false, trainable);
    reg.add_param(prefix + ".b", bias, /*decay=*/false, trainable);
  }
};

// Convolutional LSTM cell:
//   i = sigmoid(Wxi*x + Whi*h + bi)      f = sigmoid(Wxf*x + Whf*h + bf)
//   g = tanh  (Wxg*x + Whg*h + bg)      o = sigmoid(Wxo*x + Who*h + bo)
//   c_t = f.*c + i.*g                   h_t = o.*tanh(c_t)
// where * is a same-padded convolution and .* is elementwise. Gate kernels
// are packed along the output-channel axis in order [i, f, g, o]; the forget
// slice of the bias starts at +1.
struct ConvLstmCell {
  Tensor wx;    // [k,k,in,4f]
  Tensor wh;    // [k,k,f,4f]
  Tensor bias;  // [4f]
  int filters = 0;

  struct State {
    Tensor h;
    Tensor c;
  };

  static ConvLstmCell make(int k, int in_channels, int filters, Rng& rng) {
    ConvLstmCell cell;
    cell.filters = filters;
    cell.wx = he_kernel(k, k, in_channels, 4 * filters, rng);
    cell.wh = he_kernel(k, k, filters, 4 * filters, rng);
    std::vector<double> b(static_cast<std::size_t>(4 * filters), 0.0);
    for (int i = filters; i < 2 * filters; ++i) b[static_cast<std::size_t>(i)] = 1.0;
    cell.bias = Tensor::leaf({4 * filters}, std::move(b), true);
    return cell;
  }

  State initial_state(int batch, int h, int w) const {
    return {Tensor::zeros({batch, h, w, filters}), Tensor::zeros({batch, h, w, filters})};
  }

  std::pair<Tensor, State> forward(const Tensor& x, const State& prev) const {
    if (!same_shape(prev.h.shape(), prev.c.shape()))
      throw std::invalid_argument("convlstm: hidden/cell state shape mismatch");
    Tensor gates = add(conv2d(x, wx, bias), conv2d(prev.h, wh, Tensor{}));
    const Tensor i = sigmoid(narrow_last(gates, 0, filters));
    const Tensor f = sigmoid(narrow_last(gates, filters, filters));
    const Tensor g = tanh_op(narrow_last(gates, 2 * filters, filters));
    const Tensor o = sigmoid(narrow_last(gates, 3 * filters, filters));
    Tensor c_t = add(mul(f, prev.c), mul(i, g));
    Tensor h_t = mul(o, tanh_op(c_t));
    return {h_t, State{h_t, c_t}};
  }

  void register_into(Registry& reg, const std::string& prefix, bool trainable) const {
    reg.add_param(prefix + ".wx", wx, /*decay=*/true, trainable);
    reg.add_param(prefix + ".wh", wh, /*decay=*/true, trainable);
    reg.add_param(prefix + ".b", bias, /*decay=*/false, trainable);
  }
};

}  // namespace tlf
