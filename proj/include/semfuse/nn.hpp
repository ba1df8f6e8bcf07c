#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "semfuse/tensor.hpp"

namespace semfuse {

enum class Activation { Identity, Relu, Sigmoid };

// One serializable state buffer (a weight tensor's storage, or batchnorm
// running statistics). Checkpoint containers are flat ordered lists of these.
struct StateEntry {
  Shape shape;
  std::vector<double>* data = nullptr;
};

inline Tensor apply_activation(const Tensor& x, Activation act) {
  switch (act) {
    case Activation::Identity: return x;
    case Activation::Relu: return relu(x);
    case Activation::Sigmoid: return sigmoid(x);
  }
  throw std::logic_error("unknown activation");
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

struct BatchNorm {
  Tensor gamma;  // scale [C]
  Tensor beta;   // shift [C]
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  static BatchNorm make(std::size_t channels) {
    BatchNorm bn;
    bn.gamma = Tensor::full({channels}, 1.0).set_requires_grad(true);
    bn.beta = Tensor::zeros({channels}).set_requires_grad(true);
    bn.running_mean.assign(channels, 0.0);
    bn.running_var.assign(channels, 1.0);
    return bn;
  }

  std::size_t channels() const { return running_mean.size(); }

  std::vector<StateEntry> state_entries() {
    const std::size_t c = channels();
    return {{{c}, &gamma.values()},
            {{c}, &beta.values()},
            {{c}, &running_mean},
            {{c}, &running_var}};
  }
};

namespace detail {

// Shared batchnorm core. Elements are laid out as [outer, C, inner]; the
// statistics pool over outer*inner samples per channel.
inline Tensor batchnorm_core(const Tensor& x, BatchNorm& bn, bool training, std::size_t outer,
                             std::size_t C, std::size_t inner) {
  if (C != bn.channels()) {
    throw std::invalid_argument("batchnorm: input " + shape_str(x.shape()) + " has " +
                                std::to_string(C) + " channels, layer has " +
                                std::to_string(bn.channels()));
  }
  const std::size_t n = outer * inner;  // samples per channel
  if (training && n < 2) {
    throw std::invalid_argument(
        "batchnorm: training mode needs at least 2 samples per channel (batch variance is "
        "undefined), got " +
        std::to_string(n));
  }
  std::vector<double> mean(C, 0.0), var(C, 0.0);
  const double* p = x.data();
  auto idx = [C, inner](std::size_t o, std::size_t c, std::size_t in) {
    return (o * C + c) * inner + in;
  };
  if (training) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) s += p[idx(o, c, in)];
      mean[c] = s / static_cast<double>(n);
      double v = 0.0;
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
          const double d = p[idx(o, c, in)] - mean[c];
          v += d * d;
        }
      var[c] = v / static_cast<double>(n);  // biased, used for normalization
    }
    // running stats use the unbiased variance (momentum convention: new = m*batch + (1-m)*old)
    for (std::size_t c = 0; c < C; ++c) {
      const double unbiased = var[c] * static_cast<double>(n) / static_cast<double>(n - 1);
      bn.running_mean[c] = (1.0 - bn.momentum) * bn.running_mean[c] + bn.momentum * mean[c];
      bn.running_var[c] = (1.0 - bn.momentum) * bn.running_var[c] + bn.momentum * unbiased;
    }
  } else {
    mean = bn.running_mean;
    var = bn.running_var;
  }

  std::vector<double> inv_std(C);
  for (std::size_t c = 0; c < C; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + bn.eps);

  std::vector<double> xhat(x.numel());
  std::vector<double> out(x.numel());
  const double* g = bn.gamma.data();
  const double* b = bn.beta.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t i = idx(o, c, in);
        xhat[i] = (p[i] - mean[c]) * inv_std[c];
        out[i] = g[c] * xhat[i] + b[c];
      }

  return detail::make_result(
      x.shape(), std::move(out), {x.impl(), bn.gamma.impl(), bn.beta.impl()},
      [outer, C, inner, n, training, inv_std = std::move(inv_std),
       xhat = std::move(xhat)](TensorImpl& self) {
        TensorImpl& X = *self.parents[0];
        TensorImpl& G = *self.parents[1];
        TensorImpl& B = *self.parents[2];
        auto idx = [C, inner](std::size_t o, std::size_t c, std::size_t in) {
          return (o * C + c) * inner + in;
        };
        std::vector<double> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t in = 0; in < inner; ++in) {
              const std::size_t i = idx(o, c, in);
              sum_dy[c] += self.grad[i];
              sum_dy_xhat[c] += self.grad[i] * xhat[i];
            }
        if (G.requires_grad) {
          G.ensure_grad();
          for (std::size_t c = 0; c < C; ++c) G.grad[c] += sum_dy_xhat[c];
        }
        if (B.requires_grad) {
          B.ensure_grad();
          for (std::size_t c = 0; c < C; ++c) B.grad[c] += sum_dy[c];
        }
        if (X.requires_grad) {
          X.ensure_grad();
          const double invn = 1.0 / static_cast<double>(n);
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t i = idx(o, c, in);
                const double gc = G.data[c] * inv_std[c];
                if (training) {
                  X.grad[i] += gc * (self.grad[i] - sum_dy[c] * invn -
                                     xhat[i] * sum_dy_xhat[c] * invn);
                } else {
                  X.grad[i] += gc * self.grad[i];
                }
              }
        }
      });
}

}  // namespace detail

// Batch norm over rows of [B x C]. Training mode uses batch statistics and
// updates the running estimates; eval mode uses the running estimates.
inline Tensor batchnorm_forward(const Tensor& x, BatchNorm& bn, bool training) {
  if (x.rank() != 2) {
    throw std::invalid_argument("batchnorm_forward: expected [B x C], got " +
                                shape_str(x.shape()));
  }
  return detail::batchnorm_core(x, bn, training, x.dim(0), x.dim(1), 1);
}

// Batch norm over [B x C x H x W], statistics pooled over (B, H, W) per channel.
inline Tensor batchnorm_nchw_forward(const Tensor& x, BatchNorm& bn, bool training) {
  if (x.rank() != 4) {
    throw std::invalid_argument("batchnorm_nchw_forward: expected [B x C x H x W], got " +
                                shape_str(x.shape()));
  }
  return detail::batchnorm_core(x, bn, training, x.dim(0), x.dim(1), x.dim(2) * x.dim(3));
}

// ---------------------------------------------------------------------------
// Dense layers / MLP
// ---------------------------------------------------------------------------

struct DenseLayer {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]
  bool has_bn = false;
  BatchNorm bn;
  Activation act = Activation::Identity;

  std::size_t in_dim() const { return weight.dim(0); }
  std::size_t out_dim() const { return weight.dim(1); }
};

// y = x * W + b. The batchnorm/activation stages of a layer are applied by
// Mlp::forward, not here.
inline Tensor linear_forward(const Tensor& x, const DenseLayer& layer) {
  if (x.rank() != 2 || x.dim(1) != layer.in_dim()) {
    throw std::invalid_argument("linear_forward: input " + shape_str(x.shape()) +
                                " incompatible with weight " + shape_str(layer.weight.shape()));
  }
  return add(matmul(x, layer.weight), layer.bias);
}

struct Mlp {
  std::vector<DenseLayer> layers;

  Tensor forward(const Tensor& x, bool training) {
    Tensor h = x;
    for (auto& layer : layers) {
      h = linear_forward(h, layer);
      if (layer.has_bn) h = batchnorm_forward(h, layer.bn, training);
      h = apply_activation(h, layer.act);
    }
    return h;
  }

  std::size_t in_dim() const { return layers.front().in_dim(); }
  std::size_t out_dim() const { return layers.back().out_dim(); }

  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> ps;
    for (auto& l : layers) {
      ps.push_back(&l.weight);
      ps.push_back(&l.bias);
      if (l.has_bn) {
        ps.push_back(&l.bn.gamma);
        ps.push_back(&l.bn.beta);
      }
    }
    return ps;
  }

  // Checkpoint order: per layer weight, bias, then batchnorm state if present.
  std::vector<StateEntry> state_entries() {
    std::vector<StateEntry> es;
    for (auto& l : layers) {
      es.push_back({l.weight.shape(), &l.weight.values()});
      es.push_back({l.bias.shape(), &l.bias.values()});
      if (l.has_bn) {
        for (auto& e : l.bn.state_entries()) es.push_back(e);
      }
    }
    return es;
  }
};

inline DenseLayer make_dense_layer(std::size_t in, std::size_t out, bool with_bn, Activation act,
                                   Rng& rng) {
  DenseLayer l;
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  l.weight = Tensor::uniform({in, out}, rng, -a, a).set_requires_grad(true);
  l.bias = Tensor::zeros({out}).set_requires_grad(true);
  l.has_bn = with_bn;
  if (with_bn) l.bn = BatchNorm::make(out);
  l.act = act;
  return l;
}

// dims = {in, h1, ..., out}. Hidden layers are linear+BN+ReLU. When
// `feature_output` is set the last layer is a feature stage too (BN+ReLU);
// otherwise it is a plain linear head.
inline Mlp make_mlp(const std::vector<std::size_t>& dims, Rng& rng, bool feature_output) {
  if (dims.size() < 2) throw std::invalid_argument("make_mlp: need at least in/out dims");
  Mlp mlp;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const bool last = (i + 2 == dims.size());
    const bool feature = !last || feature_output;
    mlp.layers.push_back(
        make_dense_layer(dims[i], dims[i + 1], feature, feature ? Activation::Relu : Activation::Identity, rng));
  }
  return mlp;
}

inline void zero_layer(DenseLayer& layer) {
  std::fill(layer.weight.values().begin(), layer.weight.values().end(), 0.0);
  std::fill(layer.bias.values().begin(), layer.bias.values().end(), 0.0);
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

// Direct convolution. x [B x C x H x W], weight [Co x C x k x k]. Output
// spatial size floor((H + 2p - k)/s) + 1.
inline Tensor conv2d_forward(const Tensor& x, const Tensor& weight, std::size_t stride,
                             std::size_t padding) {
  if (x.rank() != 4 || weight.rank() != 4) {
    throw std::invalid_argument("conv2d_forward: expected 4-d input/weight, got " +
                                shape_str(x.shape()) + " and " + shape_str(weight.shape()));
  }
  if (x.dim(1) != weight.dim(1)) {
    throw std::invalid_argument("conv2d_forward: input channels " + std::to_string(x.dim(1)) +
                                " != weight channels " + std::to_string(weight.dim(1)));
  }
  if (stride < 1) throw std::invalid_argument("conv2d_forward: stride must be >= 1");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Co = weight.dim(0), k = weight.dim(2);
  if (weight.dim(3) != k) throw std::invalid_argument("conv2d_forward: kernel must be square");
  const long long oh_ll = (static_cast<long long>(H) + 2 * static_cast<long long>(padding) -
                           static_cast<long long>(k)) / static_cast<long long>(stride) + 1;
  const long long ow_ll = (static_cast<long long>(W) + 2 * static_cast<long long>(padding) -
                           static_cast<long long>(k)) / static_cast<long long>(stride) + 1;
  if (oh_ll <= 0 || ow_ll <= 0) {
    throw std::invalid_argument("conv2d_forward: non-positive output size for input " +
                                shape_str(x.shape()) + ", k=" + std::to_string(k) +
                                ", stride=" + std::to_string(stride) +
                                ", padding=" + std::to_string(padding));
  }
  const std::size_t OH = static_cast<std::size_t>(oh_ll), OW = static_cast<std::size_t>(ow_ll);

  std::vector<double> out(B * Co * OH * OW, 0.0);
  const double* px = x.data();
  const double* pw = weight.data();
  const long long p = static_cast<long long>(padding);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t co = 0; co < Co; ++co)
      for (std::size_t oh = 0; oh < OH; ++oh)
        for (std::size_t ow = 0; ow < OW; ++ow) {
          double acc = 0.0;
          for (std::size_t ci = 0; ci < C; ++ci)
            for (std::size_t kh = 0; kh < k; ++kh) {
              const long long ih = static_cast<long long>(oh * stride + kh) - p;
              if (ih < 0 || ih >= static_cast<long long>(H)) continue;
              for (std::size_t kw = 0; kw < k; ++kw) {
                const long long iw = static_cast<long long>(ow * stride + kw) - p;
                if (iw < 0 || iw >= static_cast<long long>(W)) continue;
                acc += px[((b * C + ci) * H + ih) * W + iw] *
                       pw[((co * C + ci) * k + kh) * k + kw];
              }
            }
          out[((b * Co + co) * OH + oh) * OW + ow] = acc;
        }

  return detail::make_result(
      {B, Co, OH, OW}, std::move(out), {x.impl(), weight.impl()},
      [B, C, H, W, Co, k, OH, OW, stride, p](TensorImpl& self) {
        TensorImpl& X = *self.parents[0];
        TensorImpl& Wt = *self.parents[1];
        const bool gx = X.requires_grad, gw = Wt.requires_grad;
        if (gx) X.ensure_grad();
        if (gw) Wt.ensure_grad();
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t co = 0; co < Co; ++co)
            for (std::size_t oh = 0; oh < OH; ++oh)
              for (std::size_t ow = 0; ow < OW; ++ow) {
                const double g = self.grad[((b * Co + co) * OH + oh) * OW + ow];
                if (g == 0.0) continue;
                for (std::size_t ci = 0; ci < C; ++ci)
                  for (std::size_t kh = 0; kh < k; ++kh) {
                    const long long ih = static_cast<long long>(oh * stride + kh) - p;
                    if (ih < 0 || ih >= static_cast<long long>(H)) continue;
                    for (std::size_t kw = 0; kw < k; ++kw) {
                      const long long iw = static_cast<long long>(ow * stride + kw) - p;
                      if (iw < 0 || iw >= static_cast<long long>(W)) continue;
                      const std::size_t xi = ((b * C + ci) * H + ih) * W + iw;
                      const std::size_t wi = ((co * C + ci) * k + kh) * k + kw;
                      if (gx) X.grad[xi] += g * Wt.data[wi];
                      if (gw) Wt.grad[wi] += g * X.data[xi];
                    }
                  }
              }
      });
}

// Transposed convolution. x [B x Ci x H x W], weight [Ci x Co x k x k].
// Output spatial size (H - 1) * stride + k.
inline Tensor deconv2d_forward(const Tensor& x, const Tensor& weight, std::size_t stride) {
  if (x.rank() != 4 || weight.rank() != 4) {
    throw std::invalid_argument("deconv2d_forward: expected 4-d input/weight, got " +
                                shape_str(x.shape()) + " and " + shape_str(weight.shape()));
  }
  if (x.dim(1) != weight.dim(0)) {
    throw std::invalid_argument("deconv2d_forward: input channels " + std::to_string(x.dim(1)) +
                                " != weight in-channels " + std::to_string(weight.dim(0)));
  }
  if (stride < 1) throw std::invalid_argument("deconv2d_forward: stride must be >= 1");
  const std::size_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Co = weight.dim(1), k = weight.dim(2);
  if (weight.dim(3) != k) throw std::invalid_argument("deconv2d_forward: kernel must be square");
  const std::size_t OH = (H - 1) * stride + k;
  const std::size_t OW = (W - 1) * stride + k;

  std::vector<double> out(B * Co * OH * OW, 0.0);
  const double* px = x.data();
  const double* pw = weight.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t ci = 0; ci < Ci; ++ci)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) {
          const double xv = px[((b * Ci + ci) * H + h) * W + w];
          if (xv == 0.0) continue;
          for (std::size_t co = 0; co < Co; ++co)
            for (std::size_t kh = 0; kh < k; ++kh)
              for (std::size_t kw = 0; kw < k; ++kw) {
                out[((b * Co + co) * OH + h * stride + kh) * OW + w * stride + kw] +=
                    xv * pw[((ci * Co + co) * k + kh) * k + kw];
              }
        }

  return detail::make_result(
      {B, Co, OH, OW}, std::move(out), {x.impl(), weight.impl()},
      [B, Ci, H, W, Co, k, OH, OW, stride](TensorImpl& self) {
        TensorImpl& X = *self.parents[0];
        TensorImpl& Wt = *self.parents[1];
        const bool gx = X.requires_grad, gw = Wt.requires_grad;
        if (gx) X.ensure_grad();
        if (gw) Wt.ensure_grad();
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t ci = 0; ci < Ci; ++ci)
            for (std::size_t h = 0; h < H; ++h)
              for (std::size_t w = 0; w < W; ++w) {
                const std::size_t xi = ((b * Ci + ci) * H + h) * W + w;
                for (std::size_t co = 0; co < Co; ++co)
                  for (std::size_t kh = 0; kh < k; ++kh)
                    for (std::size_t kw = 0; kw < k; ++kw) {
                      const std::size_t oi =
                          ((b * Co + co) * OH + h * stride + kh) * OW + w * stride + kw;
                      const std::size_t wi = ((ci * Co + co) * k + kh) * k + kw;
                      if (gx) X.grad[xi] += self.grad[oi] * Wt.data[wi];
                      if (gw) Wt.grad[wi] += self.grad[oi] * X.data[xi];
                    }
              }
      });
}

// Conv (or transposed conv) + optional BN + activation, the "conv module" unit.
struct ConvUnit {
  Tensor weight;
  Tensor bias;  // used only when has_bn is false
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool transposed = false;
  bool has_bn = true;
  BatchNorm bn;
  Activation act = Activation::Relu;

  Tensor forward(const Tensor& x, bool training) {
    Tensor h = transposed ? deconv2d_forward(x, weight, stride)
                          : conv2d_forward(x, weight, stride, padding);
    if (has_bn) {
      h = batchnorm_nchw_forward(h, bn, training);
    } else {
      h = add(h, reshape(bias, {bias.dim(0), 1, 1}));
    }
    return apply_activation(h, act);
  }

  std::size_t out_channels() const { return transposed ? weight.dim(1) : weight.dim(0); }

  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> ps{&weight};
    if (has_bn) {
      ps.push_back(&bn.gamma);
      ps.push_back(&bn.beta);
    } else {
      ps.push_back(&bias);
    }
    return ps;
  }

  std::vector<StateEntry> state_entries() {
    std::vector<StateEntry> es{{weight.shape(), &weight.values()}};
    if (has_bn) {
      for (auto& e : bn.state_entries()) es.push_back(e);
    } else {
      es.push_back({bias.shape(), &bias.values()});
    }
    return es;
  }
};

inline ConvUnit make_conv_unit(std::size_t in_ch, std::size_t out_ch, std::size_t k,
                               std::size_t stride, std::size_t padding, Rng& rng,
                               bool transposed = false) {
  ConvUnit u;
  const double fan_in = static_cast<double>(in_ch * k * k);
  const double a = std::sqrt(3.0 / fan_in);
  u.weight = transposed ? Tensor::uniform({in_ch, out_ch, k, k}, rng, -a, a)
                        : Tensor::uniform({out_ch, in_ch, k, k}, rng, -a, a);
  u.weight.set_requires_grad(true);
  u.bias = Tensor::zeros({out_ch}).set_requires_grad(true);
  u.stride = stride;
  u.padding = padding;
  u.transposed = transposed;
  u.bn = BatchNorm::make(out_ch);
  return u;
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

// Class-weighted cross entropy over logit rows. loss = sum_i w[y_i] * nll_i / sum_i w[y_i].
inline Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels,
                            const std::vector<double>& class_weights) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size() ||
      logits.dim(1) != class_weights.size()) {
    throw std::invalid_argument("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                                std::to_string(labels.size()) + " labels, " +
                                std::to_string(class_weights.size()) + " class weights");
  }
  const std::size_t E = logits.dim(0), m = logits.dim(1);
  const double* p = logits.data();
  double wsum = 0.0, loss = 0.0;
  std::vector<double> softmax_buf(E * m);
  for (std::size_t i = 0; i < E; ++i) {
    const double* row = p + i * m;
    double mx = row[0];
    for (std::size_t c = 1; c < m; ++c) mx = std::max(mx, row[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      softmax_buf[i * m + c] = std::exp(row[c] - mx);
      sum += softmax_buf[i * m + c];
    }
    for (std::size_t c = 0; c < m; ++c) softmax_buf[i * m + c] /= sum;
    const std::size_t y = labels[i];
    if (y >= m) throw std::invalid_argument("cross_entropy: label out of range");
    const double w = class_weights[y];
    loss += w * (std::log(sum) + mx - row[y]);
    wsum += w;
  }
  if (wsum <= 0.0) throw std::invalid_argument("cross_entropy: non-positive total weight");
  loss /= wsum;

  return detail::make_result(
      {1}, {loss}, {logits.impl()},
      [E, m, labels, class_weights, wsum, softmax_buf = std::move(softmax_buf)](TensorImpl& self) {
        TensorImpl& Z = *self.parents[0];
        if (!Z.requires_grad) return;
        Z.ensure_grad();
        const double g = self.grad[0];
        for (std::size_t i = 0; i < E; ++i) {
          const double w = class_weights[labels[i]] / wsum;
          for (std::size_t c = 0; c < m; ++c) {
            const double onehot = (c == labels[i]) ? 1.0 : 0.0;
            Z.grad[i * m + c] += g * w * (softmax_buf[i * m + c] - onehot);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Grid scatter / gather (for routing voxel features through a BEV conv stack)
// ---------------------------------------------------------------------------

// Mean-scatters row vectors onto grid cells: values [E x d] -> [1 x d x H x W].
// Rows sharing a cell are averaged; empty cells stay zero.
inline Tensor scatter_mean_to_grid(const Tensor& values, const std::vector<std::size_t>& cells,
                                   std::size_t H, std::size_t W) {
  if (values.rank() != 2 || values.dim(0) != cells.size()) {
    throw std::invalid_argument("scatter_mean_to_grid: values " + shape_str(values.shape()) +
                                " vs " + std::to_string(cells.size()) + " cells");
  }
  const std::size_t E = values.dim(0), d = values.dim(1);
  std::vector<double> count(H * W, 0.0);
  for (auto c : cells) {
    if (c >= H * W) throw std::invalid_argument("scatter_mean_to_grid: cell index out of range");
    count[c] += 1.0;
  }
  std::vector<double> out(d * H * W, 0.0);
  const double* pv = values.data();
  for (std::size_t e = 0; e < E; ++e)
    for (std::size_t c = 0; c < d; ++c) out[c * H * W + cells[e]] += pv[e * d + c];
  for (std::size_t c = 0; c < d; ++c)
    for (std::size_t i = 0; i < H * W; ++i)
      if (count[i] > 0.0) out[c * H * W + i] /= count[i];

  return detail::make_result({1, d, H, W}, std::move(out), {values.impl()},
                             [E, d, H, W, cells, count = std::move(count)](TensorImpl& self) {
                               TensorImpl& V = *self.parents[0];
                               if (!V.requires_grad) return;
                               V.ensure_grad();
                               for (std::size_t e = 0; e < E; ++e)
                                 for (std::size_t c = 0; c < d; ++c)
                                   V.grad[e * d + c] +=
                                       self.grad[c * H * W + cells[e]] / count[cells[e]];
                             });
}

// Reads one grid cell per row: map [1 x d x H x W] -> [E x d].
inline Tensor gather_cells(const Tensor& map, const std::vector<std::size_t>& cells) {
  if (map.rank() != 4 || map.dim(0) != 1) {
    throw std::invalid_argument("gather_cells: expected [1 x d x H x W], got " +
                                shape_str(map.shape()));
  }
  const std::size_t d = map.dim(1), HW = map.dim(2) * map.dim(3);
  const std::size_t E = cells.size();
  std::vector<double> out(E * d);
  const double* pm = map.data();
  for (std::size_t e = 0; e < E; ++e) {
    if (cells[e] >= HW) throw std::invalid_argument("gather_cells: cell index out of range");
    for (std::size_t c = 0; c < d; ++c) out[e * d + c] = pm[c * HW + cells[e]];
  }
  return detail::make_result({E, d}, std::move(out), {map.impl()},
                             [E, d, HW, cells](TensorImpl& self) {
                               TensorImpl& M = *self.parents[0];
                               if (!M.requires_grad) return;
                               M.ensure_grad();
                               for (std::size_t e = 0; e < E; ++e)
                                 for (std::size_t c = 0; c < d; ++c)
                                   M.grad[c * HW + cells[e]] += self.grad[e * d + c];
                             });
}

}  // namespace semfuse
