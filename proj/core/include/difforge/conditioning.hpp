#pragma once

#include <span>

#include "difforge/class_mask.hpp"
#include "difforge/grid.hpp"

namespace difforge {

/// One-hot planes for a batch of masks: (B, num_classes, H, W).
/// Throws std::out_of_range for a label >= num_classes.
Grid one_hot(std::span<const ClassMask> masks, std::size_t num_classes);

/// Network input for the mask-conditioned denoiser: the noisy image xt
/// (B,1,H,W) followed by num_classes one-hot mask channels. The timestep is
/// not encoded here; the network embeds it separately.
Grid condition_input(const Grid& xt, std::span<const ClassMask> masks, std::size_t num_classes);

/// Per-pixel argmax over channels of a (B,C,H,W) grid.
std::vector<ClassMask> argmax_channels(const Grid& scores);

}  // namespace difforge
