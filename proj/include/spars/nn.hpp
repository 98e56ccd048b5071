// nn.hpp — the shared network trunk: 4 convolutional blocks
// (conv3d -> batchnorm3d -> relu -> maxpool3d) followed by 5 fully connected
// layers. The classifier and the policy differ only in the width of the final
// layer and the head applied to it.
#pragma once

#include <array>
#include <random>

#include "spars/adam.hpp"
#include "spars/checkpoint.hpp"
#include "spars/geometry.hpp"
#include "spars/ops.hpp"
#include "spars/rng.hpp"
#include "spars/tensor.hpp"

namespace spars::nn {

using ad::BNMode;
using ad::ParameterSet;
using ad::Tensor;
using ad::Var;

inline constexpr std::array<int, 4> kChannels = {8, 16, 32, 64};
inline constexpr std::array<int, 4> kFcHidden = {256, 128, 64, 32};

inline int ceil_half(int d) { return (d + 1) / 2; }

// Flattened feature count after the 4 pooled blocks for a given input size.
inline int flat_features(Dims3 input_dims) {
  int dx = input_dims.x, dy = input_dims.y, dz = input_dims.z;
  for (int i = 0; i < 4; ++i) {
    dx = ceil_half(dx);
    dy = ceil_half(dy);
    dz = ceil_half(dz);
  }
  return kChannels.back() * dx * dy * dz;
}

template <class S>
Tensor<S> kaiming_uniform(std::vector<int> shape, int fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<S> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<S>(dist(rng));
  return t;
}

template <class S>
struct TrunkNet {
  Dims3 input_dims;  // network input resolution (x,y,z)
  int out_dim = 1;   // 1 for the classifier, 6 for the policy

  struct Block {
    Var<S> conv_w, conv_b, bn_gamma, bn_beta;
    ad::RunningStats<S> stats;
  };
  std::array<Block, 4> blocks;
  struct Fc {
    Var<S> w, b;
  };
  std::array<Fc, 5> fcs;
  ParameterSet<S> params;

  TrunkNet() = default;

  TrunkNet(Dims3 input, int out, std::mt19937_64 rng) : input_dims(input), out_dim(out) {
    int in_ch = 1;
    for (int i = 0; i < 4; ++i) {
      const int out_ch = kChannels[i];
      const int fan_in = in_ch * 27;
      auto& blk = blocks[i];
      const std::string p = "block" + std::to_string(i) + ".";
      blk.conv_w = params.add(p + "conv.weight",
                              ad::make_var(kaiming_uniform<S>({out_ch, in_ch, 3, 3, 3}, fan_in, rng), true));
      blk.conv_b = params.add(p + "conv.bias", ad::make_leaf<S>({out_ch}));
      blk.bn_gamma = params.add(p + "bn.gamma", ad::make_var(Tensor<S>({out_ch}, S(1)), true));
      blk.bn_beta = params.add(p + "bn.beta", ad::make_leaf<S>({out_ch}));
      blk.stats = ad::RunningStats<S>(out_ch);
      in_ch = out_ch;
    }
    int in_f = flat_features(input_dims);
    for (int i = 0; i < 5; ++i) {
      const int out_f = i < 4 ? kFcHidden[i] : out_dim;
      const std::string p = "fc" + std::to_string(i) + ".";
      fcs[i].w = params.add(p + "weight",
                            ad::make_var(kaiming_uniform<S>({out_f, in_f}, in_f, rng), true));
      fcs[i].b = params.add(p + "bias", ad::make_leaf<S>({out_f}));
      in_f = out_f;
    }
  }

  // x: [N,1,D,H,W] with (D,H,W) = (z,y,x) of input_dims -> logits [N,out_dim]
  Var<S> forward_logits(Var<S> x, BNMode mode) {
    for (auto& blk : blocks) {
      x = ad::conv3d(x, blk.conv_w, blk.conv_b);
      x = ad::batchnorm3d(x, blk.bn_gamma, blk.bn_beta, blk.stats, mode);
      x = ad::relu(x);
      x = ad::maxpool3d(x);
    }
    x = ad::flatten(x);
    for (int i = 0; i < 5; ++i) {
      x = ad::linear(x, fcs[i].w, fcs[i].b);
      if (i < 4) x = ad::relu(x);
    }
    return x;
  }

  io::NamedTensors named_tensors() const {
    io::NamedTensors out;
    for (const auto& [name, p] : params)
      out.emplace_back(name, p->value.template cast<float>());
    for (int i = 0; i < 4; ++i) {
      const std::string p = "block" + std::to_string(i) + ".bn.";
      out.emplace_back(p + "running_mean", blocks[i].stats.mean.template cast<float>());
      out.emplace_back(p + "running_var", blocks[i].stats.var.template cast<float>());
    }
    out.emplace_back("meta.input_dims",
                     Tensor<float>({3}, {static_cast<float>(input_dims.x),
                                         static_cast<float>(input_dims.y),
                                         static_cast<float>(input_dims.z)}));
    out.emplace_back("meta.out_dim", Tensor<float>({1}, {static_cast<float>(out_dim)}));
    return out;
  }

  void load_named_tensors(const io::NamedTensors& tensors) {
    for (const auto& [name, t] : tensors) {
      if (name.rfind("meta.", 0) == 0) continue;
      if (name.find(".bn.running_mean") != std::string::npos) {
        const int i = name[5] - '0';
        blocks[i].stats.mean = t.template cast<S>();
      } else if (name.find(".bn.running_var") != std::string::npos) {
        const int i = name[5] - '0';
        blocks[i].stats.var = t.template cast<S>();
      } else {
        auto& p = params.at(name);
        if (p->value.shape != t.shape)
          throw io::format_error("checkpoint tensor " + name + " has shape " +
                                 ad::shape_str(t.shape) + ", expected " +
                                 ad::shape_str(p->value.shape));
        p->value = t.template cast<S>();
      }
    }
  }

  void save(const std::string& path) const { io::write_checkpoint(path, named_tensors()); }

  static TrunkNet load(const std::string& path) {
    const auto tensors = io::read_checkpoint(path);
    Dims3 dims;
    int out_dim = 1;
    for (const auto& [name, t] : tensors) {
      if (name == "meta.input_dims") {
        dims = {static_cast<int>(t.data[0]), static_cast<int>(t.data[1]),
                static_cast<int>(t.data[2])};
      } else if (name == "meta.out_dim") {
        out_dim = static_cast<int>(t.data[0]);
      }
    }
    if (dims.count() == 0) throw io::format_error(path + ": missing meta.input_dims");
    TrunkNet net(dims, out_dim, std::mt19937_64(0));
    net.load_named_tensors(tensors);
    return net;
  }
};

}  // namespace spars::nn
