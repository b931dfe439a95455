#pragma once

#include <array>
#include <optional>

#include "xvt/tensor.hpp"

namespace xvt {

// Convolution parameter bundle. Weight layout (out_ch, in_ch, kh, kw);
// output spatial size is floor((in + 2p - k)/s) + 1 per axis.
template <typename T>
struct Conv2dParams {
  Tensor<T> weight;
  Tensor<T> bias;  // undefined = no bias
  int stride_y = 1, stride_x = 1;
  int pad_y = 0, pad_x = 0;

  int out_channels() const { return weight.dim(0); }
  int in_channels() const { return weight.dim(1); }
};

enum class NormMode { kBatchNorm, kLayerNorm };

// Affine normalization parameters. Batch norm additionally carries running
// statistics, updated as a side effect of training-mode forwards.
template <typename T>
struct NormParams {
  NormMode mode = NormMode::kBatchNorm;
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;  // batch norm only
  Tensor<T> running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

// Kaiming-uniform weight, zero bias.
template <typename T>
Conv2dParams<T> make_conv2d(int in_ch, int out_ch, int kernel, int stride, int pad, bool bias,
                            Rng& rng);
template <typename T> NormParams<T> make_batch_norm(int channels);
template <typename T> NormParams<T> make_layer_norm(int channels);

// Cross-correlation with zero padding over (N,C,H,W) input.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Conv2dParams<T>& params);

// Training mode normalizes per channel over (batch, h, w) with biased
// variance and updates the running statistics; eval mode applies the running
// statistics. Training requires a batch of at least 2 samples.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, NormParams<T>& params, bool training);

// Normalizes the trailing axis of a rank-2/3 tensor to mean 0, variance 1
// (eps inside the square root), then applies the per-channel affine.
template <typename T>
Tensor<T> layer_norm_rows(const Tensor<T>& x, const NormParams<T>& params);

// Per-pixel channel-vector layer norm of a (N,C,H,W) feature map.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& input, const NormParams<T>& params);

// Fixed 3x3 stride-2 pad-1 max pooling (the only max pool the backbone uses).
template <typename T> Tensor<T> max_pool_3x3_s2(const Tensor<T>& input);

// Per-channel mean over all pixels: (N,C,H,W) -> (N,C).
template <typename T> Tensor<T> global_avg_pool(const Tensor<T>& input);

// Basic residual block: conv-bn-relu-conv-bn + shortcut, then relu. The
// projection shortcut (1x1 conv with the block's stride) exists iff channels
// or stride change.
template <typename T>
struct ResnetBlock {
  Conv2dParams<T> conv1, conv2;
  NormParams<T> bn1, bn2;
  std::optional<Conv2dParams<T>> shortcut;

  Tensor<T> forward(const Tensor<T>& x, bool training);
};

template <typename T>
ResnetBlock<T> make_resnet_block(int in_ch, int out_ch, int stride, Rng& rng);

// The single-view convolutional trunk: 7x7/2 conv, batch norm, relu, 3x3/2
// max pool, then four residual blocks with channel plan (64,64,128,256,512)
// scaled by a width multiplier. Stage boundaries are exposed so a fusion
// module can be inserted between blocks.
template <typename T>
struct Backbone {
  Conv2dParams<T> conv1;
  NormParams<T> bn1;
  std::array<ResnetBlock<T>, 4> blocks;

  Tensor<T> stem(const Tensor<T>& x, bool training);
  Tensor<T> block(int index, const Tensor<T>& x, bool training);  // 1-based
  // Runs stem and blocks [1, upto].
  Tensor<T> forward_through(const Tensor<T>& x, int upto, bool training);
  int out_channels_after(int block_index) const;
};

template <typename T>
Backbone<T> make_backbone(int in_channels, double width_mult, Rng& rng);

// Channel width after applying the multiplier (never below 1).
int scaled_width(int base, double mult);

extern template struct ResnetBlock<float>;
extern template struct ResnetBlock<double>;
extern template struct Backbone<float>;
extern template struct Backbone<double>;

}  // namespace xvt
