#include "difforge/metrics.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace difforge::metrics {

double psnr(const Grid& reference, const Grid& test, double data_range) {
    require_same_shape(reference.shape(), test.shape(), "psnr");
    if (!(data_range > 0.0)) throw std::invalid_argument("psnr: data_range must be positive");
    if (reference.empty()) throw ShapeError("psnr: empty images");
    double acc = 0.0;
    for (std::size_t i = 0; i < reference.size(); ++i) {
        const double d = reference[i] - test[i];
        acc += d * d;
    }
    const double mse = acc / static_cast<double>(reference.size());
    if (mse == 0.0) return kIdenticalPsnr;
    return 10.0 * std::log10(data_range * data_range / mse);
}

double ssim(const Grid& reference, const Grid& test, double data_range, const SsimOptions& options) {
    require_same_shape(reference.shape(), test.shape(), "ssim");
    const Shape s = reference.shape();
    if (s.rank() < 2) throw ShapeError("ssim: need at least two axes");
    if (options.window % 2 == 0) throw std::invalid_argument("ssim: window must be odd");
    const std::size_t H = s[s.rank() - 2], W = s[s.rank() - 1];
    const std::size_t win = options.window;
    if (H < win || W < win) throw ShapeError("ssim: image " + s.str() + " smaller than window " + std::to_string(win));

    std::vector<double> kernel(win * win);
    const long half = static_cast<long>(win / 2);
    double ksum = 0.0;
    for (long y = -half; y <= half; ++y)
        for (long x = -half; x <= half; ++x) {
            const double v = std::exp(-static_cast<double>(x * x + y * y) / (2.0 * options.sigma * options.sigma));
            kernel[static_cast<std::size_t>((y + half) * static_cast<long>(win) + x + half)] = v;
            ksum += v;
        }
    for (double& v : kernel) v /= ksum;

    const double c1 = (options.k1 * data_range) * (options.k1 * data_range);
    const double c2 = (options.k2 * data_range) * (options.k2 * data_range);
    const std::size_t planes = reference.size() / (H * W);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t p = 0; p < planes; ++p) {
        const double* a = reference.data() + p * H * W;
        const double* b = test.data() + p * H * W;
        for (std::size_t y0 = 0; y0 + win <= H; ++y0)
            for (std::size_t x0 = 0; x0 + win <= W; ++x0) {
                double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
                for (std::size_t y = 0; y < win; ++y)
                    for (std::size_t x = 0; x < win; ++x) {
                        const double k = kernel[y * win + x];
                        const double va = a[(y0 + y) * W + x0 + x];
                        const double vb = b[(y0 + y) * W + x0 + x];
                        mx += k * va;
                        my += k * vb;
                        sxx += k * va * va;
                        syy += k * vb * vb;
                        sxy += k * va * vb;
                    }
                const double vx = sxx - mx * mx;
                const double vy = syy - my * my;
                const double cxy = sxy - mx * my;
                total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                ++count;
            }
    }
    return total / static_cast<double>(count);
}

namespace {
struct Overlap {
    std::size_t a = 0, b = 0, both = 0;
    void add(const ClassMask& pred, const ClassMask& target, std::uint8_t c) {
        if (pred.height != target.height || pred.width != target.width) throw ShapeError("dice: mask shapes differ");
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const bool in_a = pred.labels[i] == c, in_b = target.labels[i] == c;
            a += in_a;
            b += in_b;
            both += in_a && in_b;
        }
    }
    std::optional<double> value() const {
        if (a + b == 0) return std::nullopt;
        return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
    }
};
}  // namespace

std::optional<double> dice(const ClassMask& prediction, const ClassMask& target, std::uint8_t class_id) {
    Overlap o;
    o.add(prediction, target, class_id);
    return o.value();
}

std::optional<double> dice(std::span<const ClassMask> predictions, std::span<const ClassMask> targets, std::uint8_t class_id) {
    if (predictions.size() != targets.size()) throw ShapeError("dice: collection sizes differ");
    Overlap o;
    for (std::size_t i = 0; i < predictions.size(); ++i) o.add(predictions[i], targets[i], class_id);
    return o.value();
}

std::optional<double> mean_defined(std::span<const std::optional<double>> values) {
    double acc = 0.0;
    std::size_t n = 0;
    for (const auto& v : values)
        if (v) {
            acc += *v;
            ++n;
        }
    if (n == 0) return std::nullopt;
    return acc / static_cast<double>(n);
}

}  // namespace difforge::metrics
