#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "difforge/autograd.hpp"

namespace difforge::ops {

// Elementwise. Operands must have identical shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);

/// x: (B,C,H,W), bias: (C).
Var add_channel_bias(const Var& x, const Var& bias);
/// x: (B,C,H,W), v: (B,C). Broadcasts v over the spatial extent.
Var add_batch_channel(const Var& x, const Var& v);
/// x (B,C,H,W) times v (B,C), broadcast over space.
Var mul_batch_channel(const Var& x, const Var& v);

/// x: (B,Cin,H,W), kernel: (Cout,Cin,KH,KW) with odd KH, KW.
/// Output extent floor((H + 2*padding - KH)/stride) + 1.
Var conv2d(const Var& x, const Var& kernel, std::size_t stride = 1, std::size_t padding = 0);

/// x: (B,In), weight: (Out,In), bias: (Out) → (B,Out).
/// Same data, new shape (element count must match).
Var reshape(const Var& x, Shape shape);

Var dense(const Var& x, const Var& weight, const Var& bias);

Var concat_channels(std::span<const Var> parts);
std::vector<Var> split_channels(const Var& x, std::span<const std::size_t> sizes);

Var upsample_nearest2x(const Var& x);
/// Requires even height and width.
Var avg_pool2x2(const Var& x);

/// gamma, beta: (C). Channel count must be divisible by groups.
Var group_norm(const Var& x, std::size_t groups, const Var& gamma, const Var& beta, double eps = 1e-5);

/// x * sigmoid(x)
Var silu(const Var& x);

Var sum(const Var& x);
Var mean(const Var& x);
/// mean((a - b)^2)
Var mse(const Var& a, const Var& b);

/// Softmax over the channel axis of a (B,C,H,W) grid.
Var softmax_channels(const Var& scores);

/// Sum over pixels of w[y] * -log softmax(scores)[y], divided by the pixel
/// count. `labels` holds one class index per (b,h,w) in row-major order.
Var weighted_cross_entropy(const Var& scores, std::span<const std::uint8_t> labels, std::span<const double> class_weights);

/// 1 - mean over classes of (2 sum(p*g) + smooth) / (sum(p) + sum(g) + smooth),
/// pooled over the whole batch. `probs` is a (B,C,H,W) probability map.
Var soft_dice_loss(const Var& probs, std::span<const std::uint8_t> labels, double smooth = 1.0);

}  // namespace difforge::ops
