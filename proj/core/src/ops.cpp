#include "pneumo/ops.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace pneumo::ops {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

int conv_extent(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// k=3 / stride 1 / same padding is the only configuration the networks
// run hot; one pass per (channel, kernel row) with the three taps fused.
void conv3x3_s1_p1(const double* in, int ci, int h, int w, const double* wt, const double* bias,
                   double* out, int co) {
  for (int o = 0; o < co; ++o) {
    double* obase = out + static_cast<std::size_t>(o) * h * w;
    const double b = bias[o];
    for (int i = 0; i < h * w; ++i) obase[i] = b;
    for (int c = 0; c < ci; ++c) {
      const double* wp = wt + (static_cast<std::size_t>(o) * ci + c) * 9;
      const double* ibase = in + static_cast<std::size_t>(c) * h * w;
      for (int ky = 0; ky < 3; ++ky) {
        const double w0 = wp[ky * 3], w1 = wp[ky * 3 + 1], w2 = wp[ky * 3 + 2];
        for (int y = 0; y < h; ++y) {
          const int iy = y + ky - 1;
          if (iy < 0 || iy >= h) continue;
          const double* ir = ibase + static_cast<std::size_t>(iy) * w;
          double* orow = obase + static_cast<std::size_t>(y) * w;
          orow[0] += w1 * ir[0] + w2 * ir[1];
          for (int x = 1; x < w - 1; ++x)
            orow[x] += w0 * ir[x - 1] + w1 * ir[x] + w2 * ir[x + 1];
          orow[w - 1] += w0 * ir[w - 2] + w1 * ir[w - 1];
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, int stride, int pad) {
  require(input.rank() == 3, "conv2d: input must be C x H x W, got " + input.shape_str());
  require(weights.rank() == 4, "conv2d: weights must be Co x Ci x k x k, got " + weights.shape_str());
  const int ci = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int co = weights.dim(0), k = weights.dim(2);
  require(weights.dim(1) == ci, "conv2d: weight channels " + weights.shape_str() +
                                    " do not match input " + input.shape_str());
  require(weights.dim(3) == k, "conv2d: kernel must be square");
  require(bias.rank() == 1 && bias.dim(0) == co, "conv2d: bias length must equal output channels");
  if (stride < 1) throw ParameterError("conv2d: stride must be >= 1");
  if (pad < 0) throw ParameterError("conv2d: padding must be >= 0");
  if (k > h + 2 * pad || k > w + 2 * pad)
    throw ParameterError("conv2d: kernel larger than padded input");

  const int oh = conv_extent(h, k, stride, pad);
  const int ow = conv_extent(w, k, stride, pad);
  Tensor out({co, oh, ow});

  const double* in = input.data();
  const double* wt = weights.data();
  double* op = out.data();
  if (k == 3 && stride == 1 && pad == 1 && w >= 2 && h >= 2) {
    conv3x3_s1_p1(in, ci, h, w, wt, bias.data(), op, co);
    return out;
  }
  for (int o = 0; o < co; ++o) {
    const double b = bias.at(o);
    for (int i = 0; i < oh * ow; ++i) op[o * oh * ow + i] = b;
    for (int c = 0; c < ci; ++c) {
      const double* wbase = wt + (static_cast<std::size_t>(o) * ci + c) * k * k;
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const double wv = wbase[ky * k + kx];
          if (wv == 0.0) continue;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) continue;
            const double* irow = in + (static_cast<std::size_t>(c) * h + iy) * w;
            double* orow = op + (static_cast<std::size_t>(o) * oh + oy) * ow;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= w) continue;
              orow[ox] += wv * irow[ix];
            }
          }
        }
      }
    }
  }
  return out;
}

ConvGrads conv2d_backward(const Tensor& input, const Tensor& weights, int stride, int pad,
                          const Tensor& grad_out) {
  const int ci = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int co = weights.dim(0), k = weights.dim(2);
  const int oh = grad_out.dim(1), ow = grad_out.dim(2);
  require(grad_out.rank() == 3 && grad_out.dim(0) == co &&
              oh == conv_extent(h, k, stride, pad) && ow == conv_extent(w, k, stride, pad),
          "conv2d_backward: grad shape " + grad_out.shape_str() + " does not match forward output");

  ConvGrads g{Tensor(input.shape()), Tensor(weights.shape()), Tensor({co})};
  const double* in = input.data();
  const double* wt = weights.data();
  const double* go = grad_out.data();
  double* gi = g.input.data();
  double* gw = g.weights.data();

  for (int o = 0; o < co; ++o) {
    double gb = 0.0;
    for (int i = 0; i < oh * ow; ++i) gb += go[o * oh * ow + i];
    g.bias.at(o) = gb;
    for (int c = 0; c < ci; ++c) {
      const std::size_t wbase = (static_cast<std::size_t>(o) * ci + c) * k * k;
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const double wv = wt[wbase + ky * k + kx];
          double gwv = 0.0;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) continue;
            const double* irow = in + (static_cast<std::size_t>(c) * h + iy) * w;
            double* girow = gi + (static_cast<std::size_t>(c) * h + iy) * w;
            const double* grow = go + (static_cast<std::size_t>(o) * oh + oy) * ow;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= w) continue;
              gwv += grow[ox] * irow[ix];
              girow[ix] += grow[ox] * wv;
            }
          }
          gw[wbase + ky * k + kx] = gwv;
        }
      }
    }
  }
  return g;
}

MaxPool2Out maxpool2(const Tensor& input) {
  require(input.rank() == 3, "maxpool2: input must be C x H x W");
  const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (h % 2 != 0 || w % 2 != 0)
    throw DimensionError("maxpool2: spatial dims must be even, got " + input.shape_str());
  const int oh = h / 2, ow = w / 2;
  MaxPool2Out out{Tensor({c, oh, ow}), std::vector<std::int32_t>(static_cast<std::size_t>(c) * oh * ow)};
  for (int ch = 0; ch < c; ++ch) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        std::int32_t best_idx = 0;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const int iy = oy * 2 + dy, ix = ox * 2 + dx;
            const auto idx = static_cast<std::int32_t>((static_cast<std::size_t>(ch) * h + iy) * w + ix);
            const double v = input[static_cast<std::size_t>(idx)];
            if (v > best) {  // strict: ties keep the first (row-major) position
              best = v;
              best_idx = idx;
            }
          }
        }
        out.output.at(ch, oy, ox) = best;
        out.argmax[(static_cast<std::size_t>(ch) * oh + oy) * ow + ox] = best_idx;
      }
    }
  }
  return out;
}

Tensor maxpool2_backward(const std::vector<std::int32_t>& argmax,
                         const std::vector<int>& input_shape, const Tensor& grad_out) {
  require(argmax.size() == grad_out.size(), "maxpool2_backward: argmax/grad size mismatch");
  Tensor gi(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i)
    gi[static_cast<std::size_t>(argmax[i])] += grad_out[i];
  return gi;
}

Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  require(input.rank() == 1, "dense: input must be a vector");
  require(weights.rank() == 2, "dense: weights must be m x n");
  const int n = input.dim(0), m = weights.dim(0);
  require(weights.dim(1) == n, "dense: weights " + weights.shape_str() + " do not match input length " +
                                   std::to_string(n));
  require(bias.rank() == 1 && bias.dim(0) == m, "dense: bias length must equal output length");
  Tensor out({m});
  for (int i = 0; i < m; ++i) {
    double acc = bias.at(i);
    const double* wrow = weights.data() + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) acc += wrow[j] * input.at(j);
    out.at(i) = acc;
  }
  return out;
}

DenseGrads dense_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out) {
  const int n = input.dim(0), m = weights.dim(0);
  require(grad_out.rank() == 1 && grad_out.dim(0) == m, "dense_backward: grad length mismatch");
  DenseGrads g{Tensor({n}), Tensor(weights.shape()), Tensor({m})};
  for (int i = 0; i < m; ++i) {
    const double gv = grad_out.at(i);
    g.bias.at(i) = gv;
    const double* wrow = weights.data() + static_cast<std::size_t>(i) * n;
    double* gwrow = g.weights.data() + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      gwrow[j] = gv * input.at(j);
      g.input.at(j) += gv * wrow[j];
    }
  }
  return g;
}

double sigmoid(double z) {
  double s;
  if (z >= 0.0) {
    s = 1.0 / (1.0 + std::exp(-z));
  } else {
    const double e = std::exp(z);
    s = e / (1.0 + e);
  }
  // Keep the output inside the open interval even where the quotient
  // rounds to an endpoint.
  if (s >= 1.0) s = std::nextafter(1.0, 0.0);
  if (s <= 0.0) s = std::nextafter(0.0, 1.0);
  return s;
}

Tensor activation(const Tensor& input, Activation kind) {
  Tensor out(input.shape());
  if (kind == Activation::relu) {
    for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0.0 ? input[i] : 0.0;
  } else {
    for (std::size_t i = 0; i < input.size(); ++i) out[i] = sigmoid(input[i]);
  }
  return out;
}

Tensor activation_backward(const Tensor& output, Activation kind, const Tensor& grad_out) {
  if (!output.same_shape(grad_out))
    throw DimensionError("activation_backward: shape mismatch");
  Tensor gi(output.shape());
  if (kind == Activation::relu) {
    for (std::size_t i = 0; i < output.size(); ++i) gi[i] = output[i] > 0.0 ? grad_out[i] : 0.0;
  } else {
    for (std::size_t i = 0; i < output.size(); ++i) gi[i] = grad_out[i] * output[i] * (1.0 - output[i]);
  }
  return gi;
}

DropoutOut dropout(const Tensor& input, double rate, Rng& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0)
    throw ParameterError("dropout: rate must lie in [0,1), got " + std::to_string(rate));
  DropoutOut out{input, {}};
  if (!training || rate == 0.0) return out;
  out.scale.resize(input.size());
  const double keep_scale = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < input.size(); ++i) {
    const double s = rng.bernoulli(rate) ? 0.0 : keep_scale;
    out.scale[i] = s;
    out.output[i] = input[i] * s;
  }
  return out;
}

Tensor dropout_backward(const std::vector<double>& scale, const Tensor& grad_out) {
  if (scale.empty()) return grad_out;  // identity pass
  if (scale.size() != grad_out.size())
    throw DimensionError("dropout_backward: mask/grad size mismatch");
  Tensor gi(grad_out.shape());
  for (std::size_t i = 0; i < scale.size(); ++i) gi[i] = grad_out[i] * scale[i];
  return gi;
}

BceOut bce_loss(double p, int y) {
  if (y != 0 && y != 1) throw ParameterError("bce_loss: label must be 0 or 1");
  double pc = p;
  if (pc < kBceEps) pc = kBceEps;
  if (pc > 1.0 - kBceEps) pc = 1.0 - kBceEps;
  const double loss = y == 1 ? -std::log(pc) : -std::log(1.0 - pc);
  const double grad = y == 1 ? -1.0 / pc : 1.0 / (1.0 - pc);
  return {loss, grad};
}

}  // namespace pneumo::ops
