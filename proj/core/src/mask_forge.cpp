#include "difforge/mask_forge.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>


namespace difforge::forge {
namespace {

void normalize(Region& r) {
    std::sort(r.pixels.begin(), r.pixels.end());
    r.pixels.erase(std::unique(r.pixels.begin(), r.pixels.end()), r.pixels.end());
}

std::size_t lung_total(std::span<const std::size_t> hist) {
    return hist[tissue::kNormalLung] + hist[tissue::kEmphysema] + hist[tissue::kIld];
}

double share_of(std::span<const std::size_t> hist, std::uint8_t c) {
    const std::size_t lung = lung_total(hist);
    return lung == 0 ? 0.0 : static_cast<double>(hist[c]) / static_cast<double>(lung);
}

}  // namespace

std::vector<Region> connected_components(const ClassMask& mask, std::uint8_t class_id) {
    std::vector<Region> regions;
    std::vector<bool> seen(mask.size(), false);
    std::vector<Pixel> stack;
    for (std::size_t r = 0; r < mask.height; ++r)
        for (std::size_t c = 0; c < mask.width; ++c) {
            const std::size_t idx = r * mask.width + c;
            if (seen[idx] || mask.labels[idx] != class_id) continue;
            Region region{class_id, {}};
            seen[idx] = true;
            stack.push_back({static_cast<long>(r), static_cast<long>(c)});
            while (!stack.empty()) {
                const Pixel p = stack.back();
                stack.pop_back();
                region.pixels.push_back(p);
                for (long dr = -1; dr <= 1; ++dr)
                    for (long dc = -1; dc <= 1; ++dc) {
                        const long nr = p.row + dr, nc = p.col + dc;
                        if (!mask.contains(nr, nc)) continue;
                        const std::size_t n = static_cast<std::size_t>(nr) * mask.width + static_cast<std::size_t>(nc);
                        if (!seen[n] && mask.labels[n] == class_id) {
                            seen[n] = true;
                            stack.push_back({nr, nc});
                        }
                    }
            }
            normalize(region);
            regions.push_back(std::move(region));
        }
    return regions;
}

Region rotate_region(const Region& region, double degrees) {
    if (region.empty()) return region;
    double cr = 0.0, cc = 0.0;
    for (const auto& p : region.pixels) {
        cr += static_cast<double>(p.row);
        cc += static_cast<double>(p.col);
    }
    cr /= static_cast<double>(region.size());
    cc /= static_cast<double>(region.size());

    // Exact sin/cos for quarter turns keeps 90/180/270 free of drift.
    const double turns = degrees / 90.0;
    double cs, sn;
    if (std::abs(turns - std::round(turns)) < 1e-12) {
        const long q = ((static_cast<long>(std::lround(turns)) % 4) + 4) % 4;
        static constexpr double kCos[] = {1, 0, -1, 0};
        static constexpr double kSin[] = {0, 1, 0, -1};
        cs = kCos[q];
        sn = kSin[q];
    } else {
        const double rad = degrees * std::numbers::pi / 180.0;
        cs = std::cos(rad);
        sn = std::sin(rad);
    }

    Region out{region.class_id, {}};
    out.pixels.reserve(region.size());
    for (const auto& p : region.pixels) {
        const double dr = static_cast<double>(p.row) - cr;
        const double dc = static_cast<double>(p.col) - cc;
        const double nr = cr + dr * cs - dc * sn;
        const double nc = cc + dr * sn + dc * cs;
        out.pixels.push_back({static_cast<long>(std::floor(nr + 0.5 + 1e-9)), static_cast<long>(std::floor(nc + 0.5 + 1e-9))});
    }
    normalize(out);
    return out;
}

std::optional<Placement> paste_region(const ClassMask& mask, const Region& region, Rng& rng, std::uint8_t host) {
    if (region.empty()) throw std::invalid_argument("paste_region: empty region");
    long rmin = region.pixels.front().row, rmax = rmin, cmin = region.pixels.front().col, cmax = cmin;
    for (const auto& p : region.pixels) {
        rmin = std::min(rmin, p.row);
        rmax = std::max(rmax, p.row);
        cmin = std::min(cmin, p.col);
        cmax = std::max(cmax, p.col);
    }
    const long h = rmax - rmin + 1, w = cmax - cmin + 1;
    const long H = static_cast<long>(mask.height), W = static_cast<long>(mask.width);
    if (h > H || w > W) return std::nullopt;

    std::vector<Pixel> valid;
    for (long oy = 0; oy + h <= H; ++oy)
        for (long ox = 0; ox + w <= W; ++ox) {
            const bool fits = std::all_of(region.pixels.begin(), region.pixels.end(), [&](const Pixel& p) {
                return mask.at(static_cast<std::size_t>(p.row - rmin + oy), static_cast<std::size_t>(p.col - cmin + ox)) == host;
            });
            if (fits) valid.push_back({oy, ox});
        }
    if (valid.empty()) return std::nullopt;

    const Pixel offset = valid[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(valid.size()) - 1))];
    Placement placement{mask, Region{region.class_id, {}}};
    for (const auto& p : region.pixels) {
        const Pixel dst{p.row - rmin + offset.row, p.col - cmin + offset.col};
        placement.mask.at(static_cast<std::size_t>(dst.row), static_cast<std::size_t>(dst.col)) = region.class_id;
        placement.placed.pixels.push_back(dst);
    }
    normalize(placement.placed);
    return placement;
}

ClassMask dilate_region(const ClassMask& mask, const Region& region, std::size_t radius, StructuringElement element, std::uint8_t host) {
    if (radius < 1) throw std::invalid_argument("dilate_region: radius must be at least 1");
    ClassMask out = mask;
    const long r = static_cast<long>(radius);
    for (const auto& p : region.pixels)
        for (long dy = -r; dy <= r; ++dy)
            for (long dx = -r; dx <= r; ++dx) {
                if (element == StructuringElement::disc && dy * dy + dx * dx > r * r) continue;
                const long y = p.row + dy, x = p.col + dx;
                if (!mask.contains(y, x)) continue;
                // Test against the input so growth does not chain within one call.
                if (mask.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) == host)
                    out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = region.class_id;
            }
    return out;
}

std::vector<double> lung_shares(std::span<const ClassMask> masks, std::size_t num_classes) {
    const auto hist = class_histogram(masks, num_classes);
    std::vector<double> out(num_classes, 0.0);
    for (std::size_t c = tissue::kNormalLung; c < num_classes; ++c) out[c] = share_of(hist, static_cast<std::uint8_t>(c));
    return out;
}

BalanceResult balance_dataset(std::span<const ClassMask> masks, const BalanceConfig& config, Rng& rng, std::uint64_t seed) {
    for (double p : {config.p_rotate, config.p_paste, config.p_dilate})
        if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("balance probabilities must lie in [0, 1]");
    if (config.max_iterations < 1) throw std::invalid_argument("max_iterations must be at least 1");
    if (config.rotation_angles.empty()) throw std::invalid_argument("rotation_angles must not be empty");

    const std::size_t C = tissue::kNumClasses;
    BalanceResult result;
    result.masks.assign(masks.begin(), masks.end());
    BalanceReport& report = result.report;
    report.seed = seed;

    std::vector<std::size_t> hist = class_histogram(masks, C);
    const auto all_share = [&](std::uint8_t c) {
        std::size_t total = 0;
        for (auto n : hist) total += n;
        return total == 0 ? 0.0 : static_cast<double>(hist[c]) / static_cast<double>(total);
    };
    for (std::uint8_t c = 0; c < C; ++c) {
        report.pixel_share[c].before = all_share(c);
        if (c >= tissue::kNormalLung) report.lung_share[c].before = share_of(hist, c);
    }

    // Donors: originals holding each balanced class.
    std::map<std::uint8_t, std::vector<std::size_t>> donors;
    std::vector<std::uint8_t> balanced;
    for (const auto& [c, _] : config.target_threshold) {
        if (c < tissue::kNormalLung || c >= C) throw std::invalid_argument("only lung classes can be balanced");
        for (std::size_t i = 0; i < masks.size(); ++i)
            if (masks[i].count(c) > 0) donors[c].push_back(i);
        if (donors[c].empty())
            report.unbalanceable.push_back(c);
        else
            balanced.push_back(c);
    }

    while (report.iterations < config.max_iterations) {
        std::optional<std::uint8_t> target;
        for (std::uint8_t c : balanced) {
            const double s = share_of(hist, c);
            if (s < config.target_threshold.at(c) && (!target || s < share_of(hist, *target))) target = c;
        }
        if (!target) break;
        ++report.iterations;

        const std::uint8_t c = *target;
        const auto& pool = donors[c];
        const std::size_t donor = pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))];
        const auto regions = connected_components(masks[donor], c);
        ClassMask work = masks[donor];

        for (std::size_t k = 0; k < config.regions_per_sample; ++k) {
            Region region = regions[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(regions.size()) - 1))];
            bool moved = false;
            if (rng.uniform() < config.p_rotate) {
                const double angle =
                    config.rotation_angles[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(config.rotation_angles.size()) - 1))];
                region = rotate_region(region, angle);
                moved = true;
            }
            if (rng.uniform() < config.p_paste) {
                auto placement = paste_region(work, region, rng);
                if (!placement) continue;
                work = std::move(placement->mask);
                region = std::move(placement->placed);
            } else if (moved) {
                // Rotation in place: only in-bounds normal-lung pixels take the label.
                Region kept{c, {}};
                for (const auto& p : region.pixels)
                    if (work.contains(p.row, p.col)) {
                        auto& label = work.at(static_cast<std::size_t>(p.row), static_cast<std::size_t>(p.col));
                        if (label == tissue::kNormalLung) label = c;
                        if (label == c) kept.pixels.push_back(p);
                    }
                region = std::move(kept);
            }
            if (!region.empty() && rng.uniform() < config.p_dilate) work = dilate_region(work, region, config.dilation_radius, config.element);
        }

        if (work == masks[donor]) continue;
        // Appending must not lower the target's share.
        const auto add = class_histogram(std::span<const ClassMask>(&work, 1), C);
        const std::size_t add_lung = lung_total(add);
        const double before = share_of(hist, c);
        if (add_lung == 0 || static_cast<double>(add[c]) / static_cast<double>(add_lung) < before) continue;

        for (std::size_t i = 0; i < C; ++i) hist[i] += add[i];
        result.masks.push_back(std::move(work));
        result.source.push_back(donor);
        report.history.push_back({report.iterations, c, donor, before, share_of(hist, c)});
    }

    report.added_samples = result.source.size();
    report.reached_threshold = true;
    for (std::uint8_t c : balanced)
        if (share_of(hist, c) < config.target_threshold.at(c)) report.reached_threshold = false;
    if (!report.unbalanceable.empty()) report.reached_threshold = false;
    for (std::uint8_t c = 0; c < C; ++c) {
        report.pixel_share[c].after = all_share(c);
        if (c >= tissue::kNormalLung) report.lung_share[c].after = share_of(hist, c);
    }
    return result;
}

}  // namespace difforge::forge
