#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fer/errors.hpp"
#include "fer/nn.hpp"
#include "fer/rng.hpp"
#include "fer/tensor.hpp"

namespace fer {

/// Order of activation and normalization inside a conv block. The default
/// is conv -> ReLU -> batch norm; conv -> BN -> ReLU stays available for
/// ablation.
enum class BlockOrder { ConvReluBn, ConvBnRelu };

struct VggConfig {
  std::array<std::size_t, 4> stage_widths{64, 128, 256, 512};
  std::array<std::size_t, 2> fc_widths{4096, 1024};
  std::size_t n_classes = 7;
  double dropout_p = 0.5;
  BlockOrder block_order = BlockOrder::ConvReluBn;
  bool dropout_after_fc1 = true;
  bool dropout_after_fc2 = true;
  std::size_t input_hw = 40;  // network input is [n,1,40,40]
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  /// Spatial extent after the four 2x2/2 pools: 40 -> 20 -> 10 -> 5 -> 2.
  std::size_t final_spatial() const {
    std::size_t s = input_hw;
    for (int i = 0; i < 4; ++i) s /= 2;
    return s;
  }

  std::size_t flatten_extent() const {
    return stage_widths[3] * final_spatial() * final_spatial();
  }
};

namespace detail {

template <typename T>
struct ConvBlock {
  ConvLayer<T> conv;
  BatchNormLayer<T> bn;
  Tensor<T> relu_in;  // cached activation input for the backward pass
};

template <typename T>
struct Stage {
  ConvBlock<T> block1;
  ConvBlock<T> block2;
  MaxPoolLayer<T> pool;
};

}  // namespace detail

template <typename T>
struct BackwardResult {
  std::map<std::string, Tensor<T>> grads;  // one entry per parameter name
  Tensor<T> input_grad;                    // gradient at the network input
};

/// Four conv stages of two conv blocks plus a max pool each, followed by
/// three fully connected layers with ReLU (and optional dropout) after the
/// first two. Parameters live in a stable named registry so optimizers and
/// checkpoints address them uniformly.
template <typename T>
class VggModel {
 public:
  VggModel() = default;

  /// He-normal weights, zero biases, unit gamma / zero beta.
  static VggModel build(const VggConfig& cfg, SeededRng& rng) {
    VggModel m;
    m.cfg_ = cfg;
    std::size_t in_ch = 1;
    for (std::size_t s = 0; s < 4; ++s) {
      const std::size_t out_ch = cfg.stage_widths[s];
      m.stages_[s].block1.conv = ConvLayer<T>(out_ch, in_ch, 3, 1, 1);
      m.stages_[s].block1.conv.init_he(rng);
      m.stages_[s].block1.bn = BatchNormLayer<T>(out_ch);
      m.stages_[s].block1.bn.epsilon = cfg.bn_eps;
      m.stages_[s].block1.bn.momentum = cfg.bn_momentum;
      m.stages_[s].block2.conv = ConvLayer<T>(out_ch, out_ch, 3, 1, 1);
      m.stages_[s].block2.conv.init_he(rng);
      m.stages_[s].block2.bn = BatchNormLayer<T>(out_ch);
      m.stages_[s].block2.bn.epsilon = cfg.bn_eps;
      m.stages_[s].block2.bn.momentum = cfg.bn_momentum;
      in_ch = out_ch;
    }
    m.fc1_ = LinearLayer<T>(cfg.fc_widths[0], cfg.flatten_extent());
    m.fc1_.init_he(rng);
    m.fc2_ = LinearLayer<T>(cfg.fc_widths[1], cfg.fc_widths[0]);
    m.fc2_.init_he(rng);
    m.fc3_ = LinearLayer<T>(cfg.n_classes, cfg.fc_widths[1]);
    m.fc3_.init_he(rng);
    m.drop1_ = DropoutLayer<T>(cfg.dropout_p);
    m.drop2_ = DropoutLayer<T>(cfg.dropout_p);
    return m;
  }

  const VggConfig& config() const { return cfg_; }

  /// [n,1,40,40] -> logits [n,n_classes]. Train mode uses batch statistics
  /// and dropout (rng required); eval mode uses running stats and no dropout.
  Tensor<T> forward(const Tensor<T>& x, Mode mode, SeededRng* rng = nullptr) {
    if (x.rank() != 4 || x.shape()[1] != 1 || x.shape()[2] != cfg_.input_hw ||
        x.shape()[3] != cfg_.input_hw) {
      throw ShapeError("model: input must be [n,1," +
                       std::to_string(cfg_.input_hw) + "," +
                       std::to_string(cfg_.input_hw) + "], got " +
                       Tensor<T>::shape_string(x.shape()));
    }
    Tensor<T> h = x;
    for (auto& stage : stages_) {
      h = forward_block(stage.block1, h, mode);
      h = forward_block(stage.block2, h, mode);
      h = stage.pool.forward(h);
    }
    const std::size_t n = h.shape()[0];
    h = h.reshaped({n, cfg_.flatten_extent()});

    h = fc1_.forward(h);
    fc1_relu_in_ = h;
    h = relu(h);
    if (cfg_.dropout_after_fc1) h = drop1_.forward(h, mode, rng);

    h = fc2_.forward(h);
    fc2_relu_in_ = h;
    h = relu(h);
    if (cfg_.dropout_after_fc2) h = drop2_.forward(h, mode, rng);

    h = fc3_.forward(h);
    cached_mode_ = mode;
    has_cache_ = true;
    return h;
  }

  /// Gradients w.r.t. every registered parameter plus the network input,
  /// for the batch of the preceding forward call.
  BackwardResult<T> backward(const Tensor<T>& logit_grad) {
    if (!has_cache_) {
      throw StateError("model backward without a cached forward pass");
    }
    BackwardResult<T> out;
    Tensor<T> g = logit_grad;

    {
      auto lg = fc3_.backward(g);
      out.grads["fc3.weight"] = std::move(lg.weight);
      out.grads["fc3.bias"] = std::move(lg.bias);
      g = std::move(lg.input);
    }
    if (cfg_.dropout_after_fc2) g = drop2_.backward(g);
    g = relu_backward(fc2_relu_in_, g);
    {
      auto lg = fc2_.backward(g);
      out.grads["fc2.weight"] = std::move(lg.weight);
      out.grads["fc2.bias"] = std::move(lg.bias);
      g = std::move(lg.input);
    }
    if (cfg_.dropout_after_fc1) g = drop1_.backward(g);
    g = relu_backward(fc1_relu_in_, g);
    {
      auto lg = fc1_.backward(g);
      out.grads["fc1.weight"] = std::move(lg.weight);
      out.grads["fc1.bias"] = std::move(lg.bias);
      g = std::move(lg.input);
    }

    const std::size_t n = g.shape()[0];
    const std::size_t sp = cfg_.final_spatial();
    g = g.reshaped({n, cfg_.stage_widths[3], sp, sp});

    for (int s = 3; s >= 0; --s) {
      auto& stage = stages_[static_cast<std::size_t>(s)];
      g = stage.pool.backward(g);
      g = backward_block(stage.block2, g, stage_prefix(s) + ".conv2",
                         stage_prefix(s) + ".bn2", out.grads);
      g = backward_block(stage.block1, g, stage_prefix(s) + ".conv1",
                         stage_prefix(s) + ".bn1", out.grads);
    }
    out.input_grad = std::move(g);
    return out;
  }

  /// Trainable parameters in a stable order; names are checkpoint keys.
  std::vector<std::pair<std::string, Tensor<T>*>> parameters() {
    std::vector<std::pair<std::string, Tensor<T>*>> ps;
    for (int s = 0; s < 4; ++s) {
      auto& st = stages_[static_cast<std::size_t>(s)];
      const std::string p = stage_prefix(s);
      ps.emplace_back(p + ".conv1.weight", &st.block1.conv.weight);
      ps.emplace_back(p + ".conv1.bias", &st.block1.conv.bias);
      ps.emplace_back(p + ".bn1.gamma", &st.block1.bn.gamma);
      ps.emplace_back(p + ".bn1.beta", &st.block1.bn.beta);
      ps.emplace_back(p + ".conv2.weight", &st.block2.conv.weight);
      ps.emplace_back(p + ".conv2.bias", &st.block2.conv.bias);
      ps.emplace_back(p + ".bn2.gamma", &st.block2.bn.gamma);
      ps.emplace_back(p + ".bn2.beta", &st.block2.bn.beta);
    }
    ps.emplace_back("fc1.weight", &fc1_.weight);
    ps.emplace_back("fc1.bias", &fc1_.bias);
    ps.emplace_back("fc2.weight", &fc2_.weight);
    ps.emplace_back("fc2.bias", &fc2_.bias);
    ps.emplace_back("fc3.weight", &fc3_.weight);
    ps.emplace_back("fc3.bias", &fc3_.bias);
    return ps;
  }

  /// Non-trainable persistent state (batch-norm running statistics).
  std::vector<std::pair<std::string, Tensor<T>*>> buffers() {
    std::vector<std::pair<std::string, Tensor<T>*>> bs;
    for (int s = 0; s < 4; ++s) {
      auto& st = stages_[static_cast<std::size_t>(s)];
      const std::string p = stage_prefix(s);
      bs.emplace_back(p + ".bn1.running_mean", &st.block1.bn.running_mean);
      bs.emplace_back(p + ".bn1.running_var", &st.block1.bn.running_var);
      bs.emplace_back(p + ".bn2.running_mean", &st.block2.bn.running_mean);
      bs.emplace_back(p + ".bn2.running_var", &st.block2.bn.running_var);
    }
    return bs;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto& [name, t] : parameters()) n += t->size();
    return n;
  }

  std::size_t conv_layer_count() const { return 8; }
  std::size_t batchnorm_layer_count() const { return 8; }
  std::size_t linear_layer_count() const { return 3; }

 private:
  static std::string stage_prefix(int s) {
    return "stage" + std::to_string(s + 1);
  }

  Tensor<T> forward_block(detail::ConvBlock<T>& block, const Tensor<T>& x,
                          Mode mode) {
    Tensor<T> h = block.conv.forward(x);
    if (cfg_.block_order == BlockOrder::ConvReluBn) {
      block.relu_in = h;
      h = relu(h);
      h = block.bn.forward(h, mode);
    } else {
      h = block.bn.forward(h, mode);
      block.relu_in = h;
      h = relu(h);
    }
    return h;
  }

  Tensor<T> backward_block(detail::ConvBlock<T>& block, const Tensor<T>& up,
                           const std::string& conv_name,
                           const std::string& bn_name,
                           std::map<std::string, Tensor<T>>& grads) {
    Tensor<T> g = up;
    if (cfg_.block_order == BlockOrder::ConvReluBn) {
      auto bg = block.bn.backward(g);
      grads[bn_name + ".gamma"] = std::move(bg.gamma);
      grads[bn_name + ".beta"] = std::move(bg.beta);
      g = relu_backward(block.relu_in, bg.input);
    } else {
      g = relu_backward(block.relu_in, g);
      auto bg = block.bn.backward(g);
      grads[bn_name + ".gamma"] = std::move(bg.gamma);
      grads[bn_name + ".beta"] = std::move(bg.beta);
      g = std::move(bg.input);
    }
    auto cg = block.conv.backward(g);
    grads[conv_name + ".weight"] = std::move(cg.weight);
    grads[conv_name + ".bias"] = std::move(cg.bias);
    return std::move(cg.input);
  }

  VggConfig cfg_;
  std::array<detail::Stage<T>, 4> stages_;
  LinearLayer<T> fc1_, fc2_, fc3_;
  DropoutLayer<T> drop1_, drop2_;
  Tensor<T> fc1_relu_in_, fc2_relu_in_;
  Mode cached_mode_ = Mode::Train;
  bool has_cache_ = false;
};

}  // namespace fer
