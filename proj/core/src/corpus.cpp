#include "difforge/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "difforge/pgm.hpp"
#include "difforge/serialize.hpp"

namespace difforge::corpus {

using json = nlohmann::json;

void CorpusSpec::validate() const {
    if (size < 8 || size % 4) throw std::invalid_argument("corpus size must be a multiple of 4 and at least 8");
    if (slices_per_patient == 0) throw std::invalid_argument("slices_per_patient must be positive");
    double total = 0.0;
    for (double f : target_frequencies) {
        if (f < 0.0) throw std::invalid_argument("target frequencies must be non-negative");
        total += f;
    }
    if (std::abs(total - 1.0) > 1e-6) throw std::invalid_argument("target frequencies must sum to 1");
    const double disease = target_frequencies[tissue::kEmphysema] + target_frequencies[tissue::kIld];
    if (disease > target_frequencies[tissue::kNormalLung])
        throw std::invalid_argument("infeasible frequencies: disease share exceeds the normal-lung share it is carved from");
    const double body = 1.0 - target_frequencies[tissue::kBackground];
    const double lung = target_frequencies[tissue::kNormalLung] + disease;
    if (lung > 0.6 * body) throw std::invalid_argument("infeasible frequencies: lungs cannot fit inside the body region");
    for (const auto& p : palette)
        if (p.mean_hu < kMinHu || p.mean_hu > kMaxHu || p.spread_hu < 0.0 || p.correlation_length <= 0.0)
            throw std::invalid_argument("palette entries need mean HU in [-1000, 1000], non-negative spread, positive correlation length");
    for (double r : {emphysema_slice_rate, ild_slice_rate})
        if (!(r > 0.0 && r <= 1.0)) throw std::invalid_argument("disease slice rates must lie in (0, 1]");
}

namespace {

struct Ellipse {
    double cy, cx, ry, rx;
    bool contains(double y, double x) const {
        const double dy = (y - cy) / ry, dx = (x - cx) / rx;
        return dy * dy + dx * dx <= 1.0;
    }
};

// Unit-variance Gaussian random field: white noise blurred by a separable
// Gaussian, then standardized.
Grid smooth_field(std::size_t n, double sigma, Rng& rng) {
    Grid noise = randn(Shape{n, n}, rng);
    const long radius = std::max<long>(1, static_cast<long>(std::ceil(2.5 * sigma)));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double ks = 0.0;
    for (long i = -radius; i <= radius; ++i) {
        k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
        ks += k[static_cast<std::size_t>(i + radius)];
    }
    for (double& v : k) v /= ks;
    const long N = static_cast<long>(n);
    auto wrap = [N](long i) { return ((i % N) + N) % N; };
    Grid tmp(Shape{n, n}), out(Shape{n, n});
    for (long y = 0; y < N; ++y)
        for (long x = 0; x < N; ++x) {
            double acc = 0.0;
            for (long i = -radius; i <= radius; ++i) acc += k[static_cast<std::size_t>(i + radius)] * noise[static_cast<std::size_t>(y * N + wrap(x + i))];
            tmp[static_cast<std::size_t>(y * N + x)] = acc;
        }
    for (long y = 0; y < N; ++y)
        for (long x = 0; x < N; ++x) {
            double acc = 0.0;
            for (long i = -radius; i <= radius; ++i) acc += k[static_cast<std::size_t>(i + radius)] * tmp[static_cast<std::size_t>(wrap(y + i) * N + x)];
            out[static_cast<std::size_t>(y * N + x)] = acc;
        }
    const double mu = mean(out);
    double var = 0.0;
    for (double v : out.values()) var += (v - mu) * (v - mu);
    const double sd = std::sqrt(var / static_cast<double>(out.size()));
    for (double& v : out.values()) v = sd > 0 ? (v - mu) / sd : 0.0;
    return out;
}

// Eden growth: start at a random host pixel and repeatedly absorb a random
// 4-neighbour of the blob until `target` pixels carry `label`.
std::size_t grow_blob(ClassMask& mask, std::uint8_t host, std::uint8_t label, std::size_t target, Rng& rng) {
    std::vector<std::size_t> hosts;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask.labels[i] == host) hosts.push_back(i);
    if (hosts.empty() || target == 0) return 0;
    const std::size_t W = mask.width, H = mask.height;
    std::vector<std::size_t> frontier{hosts[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(hosts.size()) - 1))]};
    std::set<std::size_t> queued{frontier[0]};
    std::size_t grown = 0;
    while (grown < target && !frontier.empty()) {
        const std::size_t pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(frontier.size()) - 1));
        const std::size_t idx = frontier[pick];
        frontier[pick] = frontier.back();
        frontier.pop_back();
        if (mask.labels[idx] != host) continue;
        mask.labels[idx] = label;
        ++grown;
        const std::size_t r = idx / W, c = idx % W;
        const std::size_t nbr[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
        for (const auto& n : nbr) {
            if (n[0] >= H || n[1] >= W) continue;  // unsigned wrap covers -1
            const std::size_t j = n[0] * W + n[1];
            if (mask.labels[j] == host && queued.insert(j).second) frontier.push_back(j);
        }
    }
    return grown;
}

Ellipse ellipse_with_area(double cy, double cx, double area, double aspect) {
    // aspect = ry / rx
    const double rx = std::sqrt(area / (std::numbers::pi * aspect));
    return {cy, cx, rx * aspect, rx};
}

SliceRecord generate_slice(const CorpusSpec& spec, std::size_t index, Rng& rng) {
    const std::size_t n = spec.size;
    const double N = static_cast<double>(n);
    const double area = N * N;
    const auto& f = spec.target_frequencies;
    ClassMask mask(n, n, tissue::kBackground);

    const double body_area = (1.0 - f[tissue::kBackground]) * area * (0.95 + 0.1 * rng.uniform());
    const Ellipse body = ellipse_with_area(N / 2 - 0.5 + (rng.uniform() - 0.5), N / 2 - 0.5 + (rng.uniform() - 0.5), body_area, 0.7 + 0.15 * rng.uniform());
    const double lung_share = f[tissue::kNormalLung] + f[tissue::kEmphysema] + f[tissue::kIld];
    const double lung_area = 0.5 * lung_share * area * (0.9 + 0.2 * rng.uniform());
    const double lung_aspect = 1.4 + 0.4 * rng.uniform();
    const double offset = 0.45 * body.rx;
    const Ellipse left = ellipse_with_area(body.cy + 0.5 * (rng.uniform() - 0.5), body.cx - offset, lung_area, lung_aspect);
    const Ellipse right = ellipse_with_area(body.cy + 0.5 * (rng.uniform() - 0.5), body.cx + offset, lung_area, lung_aspect);

    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) {
            const double y = static_cast<double>(r), x = static_cast<double>(c);
            if (!body.contains(y, x)) continue;
            mask.at(r, c) = (left.contains(y, x) || right.contains(y, x)) ? tissue::kNormalLung : tissue::kSurrounding;
        }

    if (rng.uniform() < spec.ild_slice_rate) {
        const double mean_px = f[tissue::kIld] * area / spec.ild_slice_rate;
        grow_blob(mask, tissue::kNormalLung, tissue::kIld, static_cast<std::size_t>(std::lround(mean_px * (0.5 + rng.uniform()))), rng);
    }
    if (rng.uniform() < spec.emphysema_slice_rate) {
        const double mean_px = f[tissue::kEmphysema] * area / spec.emphysema_slice_rate;
        grow_blob(mask, tissue::kNormalLung, tissue::kEmphysema, static_cast<std::size_t>(std::lround(mean_px * (0.5 + rng.uniform()))), rng);
    }

    Grid hu(Shape{n, n});
    for (std::size_t c = 0; c < tissue::kNumClasses; ++c) {
        const auto& p = spec.palette[c];
        const Grid field = smooth_field(n, p.correlation_length, rng);
        for (std::size_t i = 0; i < hu.size(); ++i)
            if (mask.labels[i] == c) hu[i] = std::clamp(std::round(p.mean_hu + p.spread_hu * field[i]), kMinHu, kMaxHu);
    }

    char pid[32];
    std::snprintf(pid, sizeof pid, "P%04zu", index / spec.slices_per_patient);
    return {std::move(hu), std::move(mask), pid};
}

}  // namespace

std::vector<SliceRecord> generate_corpus(const CorpusSpec& spec) {
    spec.validate();
    const Rng root(spec.seed);
    std::vector<SliceRecord> out;
    out.reserve(spec.n_samples);
    for (std::size_t i = 0; i < spec.n_samples; ++i) {
        Rng rng = root.fork(i);
        out.push_back(generate_slice(spec, i, rng));
    }
    return out;
}

Grid clip_and_mask(const Grid& hu, const ClassMask& mask) {
    if (hu.shape() != Shape{mask.height, mask.width}) throw ShapeError("preprocess: image " + hu.shape().str() + " does not match mask");
    Grid out(hu.shape());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = mask.labels[i] == tissue::kBackground ? kMinHu : std::clamp(hu[i], kMinHu, kMaxHu);
    return out;
}

Grid preprocess(const Grid& hu, const ClassMask& mask) {
    Grid out = clip_and_mask(hu, mask);
    for (double& v : out.values()) v = normalize_hu(v);
    return out;
}

Grid to_hu(const Grid& normalized) {
    Grid out = normalized;
    for (double& v : out.values()) v = denormalize_hu(v);
    return out;
}

Grid stack_images(std::span<const SliceRecord> records) {
    if (records.empty()) return Grid{};
    const std::size_t H = records[0].mask.height, W = records[0].mask.width;
    Grid out(Shape{records.size(), 1, H, W});
    for (std::size_t b = 0; b < records.size(); ++b) {
        const Grid img = preprocess(records[b].hu, records[b].mask);
        std::copy(img.values().begin(), img.values().end(), out.data() + b * H * W);
    }
    return out;
}

std::vector<ClassMask> masks_of(std::span<const SliceRecord> records) {
    std::vector<ClassMask> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(r.mask);
    return out;
}

std::vector<std::string> patient_ids(std::span<const SliceRecord> records) {
    std::vector<std::string> ids;
    for (const auto& r : records)
        if (std::find(ids.begin(), ids.end(), r.patient_id) == ids.end()) ids.push_back(r.patient_id);
    return ids;
}

std::pair<std::vector<SliceRecord>, std::vector<SliceRecord>> split_by_patient(std::span<const SliceRecord> records, double train_fraction, Rng& rng) {
    std::vector<std::string> ids = patient_ids(records);
    if (ids.size() < 2) throw std::invalid_argument("split_by_patient: need at least two patients, found " + std::to_string(ids.size()));
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw std::invalid_argument("train_fraction must lie in (0, 1)");
    for (std::size_t i = ids.size() - 1; i > 0; --i) std::swap(ids[i], ids[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
    const auto n_train = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(ids.size()))), 1, ids.size() - 1);
    const std::set<std::string> train_ids(ids.begin(), ids.begin() + static_cast<long>(n_train));
    std::pair<std::vector<SliceRecord>, std::vector<SliceRecord>> out;
    for (const auto& r : records) (train_ids.count(r.patient_id) ? out.first : out.second).push_back(r);
    return out;
}

void save_corpus(const std::filesystem::path& dir, std::span<const SliceRecord> records, const std::string& extra_json) {
    std::filesystem::create_directories(dir / "images");
    std::filesystem::create_directories(dir / "masks");
    json manifest = json::parse(extra_json);
    json entries = json::array();
    for (std::size_t i = 0; i < records.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "%05zu.pgm", i);
        pgm::write_hu(dir / "images" / name, records[i].hu);
        pgm::write_mask(dir / "masks" / name, records[i].mask);
        entries.push_back({{"image", std::string("images/") + name}, {"mask", std::string("masks/") + name}, {"patient_id", records[i].patient_id}});
    }
    manifest["slices"] = entries;
    manifest["count"] = records.size();
    manifest["hash"] = corpus_hash(records);
    std::ofstream os(dir / "corpus.json");
    os << manifest.dump(2) << '\n';
    if (!os) throw FormatError("failed writing corpus manifest in " + dir.string());
}

std::vector<SliceRecord> load_corpus(const std::filesystem::path& dir) {
    std::ifstream is(dir / "corpus.json");
    if (!is) throw FormatError("no corpus.json in " + dir.string());
    json manifest;
    try {
        manifest = json::parse(is);
    } catch (const json::exception& e) {
        throw FormatError("malformed corpus.json in " + dir.string() + ": " + e.what());
    }
    std::vector<SliceRecord> out;
    for (const auto& e : manifest.at("slices")) {
        SliceRecord r{pgm::read_hu(dir / e.at("image").get<std::string>()), pgm::read_mask(dir / e.at("mask").get<std::string>()),
                      e.at("patient_id").get<std::string>()};
        out.push_back(std::move(r));
    }
    return out;
}

std::uint64_t corpus_hash(std::span<const SliceRecord> records) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& r : records) {
        for (double v : r.hu.values()) {
            const std::int64_t q = std::llround(v);
            mix(&q, sizeof q);
        }
        mix(r.mask.labels.data(), r.mask.labels.size());
        mix(r.patient_id.data(), r.patient_id.size());
    }
    return h;
}

}  // namespace difforge::corpus
