#pragma once

#include <cstddef>
#include <stdexcept>
#include <utility>
#include <vector>

#include "semfuse/nn.hpp"
#include "semfuse/tensor.hpp"

namespace semfuse {

struct DffConfig {
  std::size_t in_channels = 16;    // C
  std::size_t base_channels = 128; // Conv_block1 width
  std::size_t out_channels = 32;   // C'
  std::size_t k_main = 3;          // stride-1 convs, padding k/2
  std::size_t k_resample = 2;      // stride-2 down/up pair
};

// Deep feature fusion block: a 4-unit conv stem, a downsample/upsample branch
// and a same-resolution branch (different receptive fields), element-wise
// addition, and a channel-attention refinement with learnable scale beta.
struct DffParams {
  std::vector<ConvUnit> conv_block1;  // C -> base, then base -> base x3
  ConvUnit conv_block2;               // base -> base, stride 2 (downsample)
  ConvUnit conv2;                     // base -> C'
  ConvUnit deconv2;                   // C' -> C', transposed, stride 2 (upsample)
  ConvUnit conv3;                     // base -> C'
  ConvUnit conv4;                     // C' -> C'
  Tensor beta;                        // scalar, starts at 0
  std::size_t in_channels = 0, out_channels = 0;

  static DffParams make(const DffConfig& cfg, Rng& rng) {
    DffParams p;
    p.in_channels = cfg.in_channels;
    p.out_channels = cfg.out_channels;
    const std::size_t k = cfg.k_main;
    const std::size_t pad = k / 2;
    p.conv_block1.push_back(make_conv_unit(cfg.in_channels, cfg.base_channels, k, 1, pad, rng));
    for (int i = 0; i < 3; ++i) {
      p.conv_block1.push_back(make_conv_unit(cfg.base_channels, cfg.base_channels, k, 1, pad, rng));
    }
    p.conv_block2 = make_conv_unit(cfg.base_channels, cfg.base_channels, cfg.k_resample, 2, 0, rng);
    p.conv2 = make_conv_unit(cfg.base_channels, cfg.out_channels, k, 1, pad, rng);
    p.deconv2 = make_conv_unit(cfg.out_channels, cfg.out_channels, cfg.k_resample, 2, 0, rng,
                               /*transposed=*/true);
    p.conv3 = make_conv_unit(cfg.base_channels, cfg.out_channels, k, 1, pad, rng);
    p.conv4 = make_conv_unit(cfg.out_channels, cfg.out_channels, k, 1, pad, rng);
    p.beta = Tensor::zeros({1}).set_requires_grad(true);
    return p;
  }

  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> ps;
    auto take = [&ps](ConvUnit& u) {
      for (auto* t : u.parameters()) ps.push_back(t);
    };
    for (auto& u : conv_block1) take(u);
    take(conv_block2);
    take(conv2);
    take(deconv2);
    take(conv3);
    take(conv4);
    ps.push_back(&beta);
    return ps;
  }

  // "DFF1" checkpoint order: conv_block1 units, conv_block2, conv2, deconv2,
  // conv3, conv4, then beta.
  std::vector<StateEntry> state_entries() {
    std::vector<StateEntry> es;
    auto take = [&es](ConvUnit& u) {
      for (auto& e : u.state_entries()) es.push_back(e);
    };
    for (auto& u : conv_block1) take(u);
    take(conv_block2);
    take(conv2);
    take(deconv2);
    take(conv3);
    take(conv4);
    es.push_back({beta.shape(), &beta.values()});
    return es;
  }
};

// Runs the stem plus both receptive-field branches. Requires even H and W so
// that the stride-2 round trip restores the spatial size.
inline std::pair<Tensor, Tensor> dff_branches(const Tensor& f0, DffParams& params, bool training) {
  if (f0.rank() != 4) {
    throw std::invalid_argument("dff_branches: expected [B x C x H x W], got " +
                                shape_str(f0.shape()));
  }
  if (f0.dim(2) % 2 != 0 || f0.dim(3) % 2 != 0) {
    throw std::invalid_argument("dff_branches: H and W must be even, got " +
                                shape_str(f0.shape()));
  }
  Tensor h = f0;
  for (auto& u : params.conv_block1) h = u.forward(h, training);  // F1_B
  Tensor long_branch =
      params.deconv2.forward(params.conv2.forward(params.conv_block2.forward(h, training), training), training);
  Tensor short_branch = params.conv4.forward(params.conv3.forward(h, training), training);
  return {long_branch, short_branch};
}

// Channel attention on a single feature map: softmax-normalized Gram weights
// over channels, applied as a beta-scaled residual. At beta == 0 this is the
// identity on its input.
inline Tensor channel_attention(const Tensor& f, const Tensor& beta) {
  if (f.rank() != 4 || f.dim(0) != 1) {
    throw std::invalid_argument("channel_attention: expected [1 x C x H x W], got " +
                                shape_str(f.shape()));
  }
  const std::size_t C = f.dim(1);
  const std::size_t N = f.dim(2) * f.dim(3);
  Tensor flat = reshape(f, {C, N});
  Tensor gram = matmul(flat, transpose(flat));   // gram[j][i] = <channel_j, channel_i>
  Tensor weights = softmax(gram, 1);             // row j sums to 1 over contributors i
  Tensor attended = matmul(weights, flat);       // out_j = sum_i x_ji * channel_i
  Tensor out = add(mul(attended, beta), flat);
  return reshape(out, f.shape());
}

// F_fused = F_long + F_short, then channel attention. Gradients reach every
// conv weight and beta.
inline Tensor dff_forward(const Tensor& f0, DffParams& params, bool training) {
  auto [long_branch, short_branch] = dff_branches(f0, params, training);
  Tensor fused = add(long_branch, short_branch);
  return channel_attention(fused, params.beta);
}

}  // namespace semfuse
