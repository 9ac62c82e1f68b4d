#include "difforge/conditioning.hpp"

#include <stdexcept>
#include <string>

namespace difforge {

Grid one_hot(std::span<const ClassMask> masks, std::size_t num_classes) {
    if (masks.empty()) throw ShapeError("one_hot: empty mask batch");
    const std::size_t H = masks[0].height, W = masks[0].width, HW = H * W;
    Grid out(Shape{masks.size(), num_classes, H, W});
    for (std::size_t b = 0; b < masks.size(); ++b) {
        if (masks[b].height != H || masks[b].width != W) throw ShapeError("one_hot: masks in a batch must share one size");
        for (std::size_t i = 0; i < HW; ++i) {
            const std::uint8_t label = masks[b].labels[i];
            if (label >= num_classes)
                throw std::out_of_range("mask label " + std::to_string(label) + " is not a known class (C=" + std::to_string(num_classes) + ")");
            out[(b * num_classes + label) * HW + i] = 1.0;
        }
    }
    return out;
}

Grid condition_input(const Grid& xt, std::span<const ClassMask> masks, std::size_t num_classes) {
    const Shape s = xt.shape();
    if (s.rank() != 4 || s[1] != 1) throw ShapeError("condition_input: xt must be (B,1,H,W), got " + s.str());
    if (masks.size() != s[0]) throw ShapeError("condition_input: batch size mismatch between image and masks");
    if (masks[0].height != s[2] || masks[0].width != s[3]) throw ShapeError("condition_input: mask spatial extent differs from image");
    const Grid planes = one_hot(masks, num_classes);
    const std::size_t B = s[0], HW = s[2] * s[3], C = num_classes + 1;
    Grid out(Shape{B, C, s[2], s[3]});
    for (std::size_t b = 0; b < B; ++b) {
        std::copy(xt.data() + b * HW, xt.data() + (b + 1) * HW, out.data() + b * C * HW);
        std::copy(planes.data() + b * num_classes * HW, planes.data() + (b + 1) * num_classes * HW, out.data() + (b * C + 1) * HW);
    }
    return out;
}

std::vector<ClassMask> argmax_channels(const Grid& scores) {
    const Shape s = scores.shape();
    if (s.rank() != 4) throw ShapeError("argmax_channels expects (B,C,H,W)");
    const std::size_t B = s[0], C = s[1], HW = s[2] * s[3];
    std::vector<ClassMask> out;
    out.reserve(B);
    for (std::size_t b = 0; b < B; ++b) {
        ClassMask m(s[2], s[3]);
        for (std::size_t i = 0; i < HW; ++i) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < C; ++c)
                if (scores[(b * C + c) * HW + i] > scores[(b * C + best) * HW + i]) best = c;
            m.labels[i] = static_cast<std::uint8_t>(best);
        }
        out.push_back(std::move(m));
    }
    return out;
}

}  // namespace difforge
