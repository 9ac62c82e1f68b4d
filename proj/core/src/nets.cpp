#include "difforge/nets.hpp"

#include <cmath>
#include <stdexcept>

#include "difforge/conditioning.hpp"
#include "difforge/ops.hpp"

namespace difforge {

Var ParameterSet::add(std::string name, Grid init) {
    for (const auto& [n, _] : entries_)
        if (n == name) throw std::invalid_argument("duplicate parameter name " + name);
    Var v = parameter(std::move(init));
    entries_.emplace_back(std::move(name), v);
    return v;
}

const Var& ParameterSet::get(const std::string& name) const {
    for (const auto& [n, v] : entries_)
        if (n == name) return v;
    throw std::out_of_range("no parameter named " + name);
}

std::size_t ParameterSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, v] : entries_) n += v.value().size();
    return n;
}

void ParameterSet::zero_grad() {
    for (auto& [_, v] : entries_) v.zero_grad();
}

namespace {

Grid lecun_normal(Shape shape, std::size_t fan_in, Rng& rng) {
    Grid g = randn(shape, rng);
    g *= 1.0 / std::sqrt(static_cast<double>(fan_in));
    return g;
}

std::size_t channels_at(const UNetArch& arch, std::size_t level) { return arch.base_channels << level; }

}  // namespace

Grid sinusoidal_embedding(std::span<const std::size_t> timesteps, std::size_t dim) {
    const std::size_t half = dim / 2;
    Grid out(Shape{timesteps.size(), dim});
    for (std::size_t b = 0; b < timesteps.size(); ++b)
        for (std::size_t i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
            const double arg = static_cast<double>(timesteps[b]) * freq;
            out[b * dim + i] = std::sin(arg);
            out[b * dim + half + i] = std::cos(arg);
        }
    return out;
}

UNet::UNet(const UNetArch& arch, Rng& rng) : arch_(arch) {
    if (arch.levels == 0 || arch.base_channels == 0 || arch.convs_per_block == 0) throw std::invalid_argument("UNet: levels, base_channels and convs_per_block must be positive");
    if (arch.base_channels % arch.groups) throw std::invalid_argument("UNet: base_channels must be divisible by groups");

    const std::size_t c0 = arch.base_channels;
    if (arch.time_conditioned) {
        temb_dim_ = 4 * c0;
        params_.add("time.fc1.w", lecun_normal(Shape{temb_dim_, c0}, c0, rng));
        params_.add("time.fc1.b", Grid::zeros(Shape{temb_dim_}));
        params_.add("time.fc2.w", lecun_normal(Shape{temb_dim_, temb_dim_}, temb_dim_, rng));
        params_.add("time.fc2.b", Grid::zeros(Shape{temb_dim_}));
    }

    params_.add("in.w", lecun_normal(Shape{c0, arch.in_channels, 3, 3}, arch.in_channels * 9, rng));
    params_.add("in.b", Grid::zeros(Shape{c0}));

    std::size_t cin = c0;
    for (std::size_t l = 0; l < arch.levels; ++l) {
        const std::size_t cout = channels_at(arch, l);
        down_.push_back(make_block("down" + std::to_string(l), cin, cout, rng));
        cin = cout;
    }
    const std::size_t cmid = channels_at(arch, arch.levels);
    mid_ = make_block("mid", cin, cmid, rng);
    cin = cmid;
    for (std::size_t l = arch.levels; l-- > 0;) {
        const std::size_t cout = channels_at(arch, l);
        up_.push_back(make_block("up" + std::to_string(l), cin + cout, cout, rng));
        cin = cout;
    }

    Grid out_w = arch.zero_init_output ? Grid::zeros(Shape{arch.out_channels, c0, 3, 3})
                                       : lecun_normal(Shape{arch.out_channels, c0, 3, 3}, c0 * 9, rng);
    params_.add("out.w", std::move(out_w));
    params_.add("out.b", Grid::zeros(Shape{arch.out_channels}));
    if (arch.input_skip) {
        if (!arch.time_conditioned) throw std::invalid_argument("UNet: input_skip needs time conditioning");
        const std::size_t gates = arch.out_channels * arch.in_channels;
        params_.add("skip.w", Grid::zeros(Shape{gates, temb_dim_}));
        params_.add("skip.b", Grid::zeros(Shape{gates}));
    }
}

UNet::Block UNet::make_block(const std::string& name, std::size_t cin, std::size_t cout, Rng& rng) {
    Block block;
    for (std::size_t k = 0; k < arch_.convs_per_block; ++k) {
        const std::string conv = name + ".conv" + std::to_string(k);
        const std::size_t ci = k == 0 ? cin : cout;
        params_.add(conv + ".w", lecun_normal(Shape{cout, ci, 3, 3}, ci * 9, rng));
        params_.add(conv + ".b", Grid::zeros(Shape{cout}));
        params_.add(conv + ".gn.g", Grid::ones(Shape{cout}));
        params_.add(conv + ".gn.b", Grid::zeros(Shape{cout}));
        block.convs.push_back(conv);
    }
    if (arch_.time_conditioned) {
        block.time_proj = name + ".time";
        params_.add(block.time_proj + ".w", lecun_normal(Shape{cout, temb_dim_}, temb_dim_, rng));
        params_.add(block.time_proj + ".b", Grid::zeros(Shape{cout}));
    }
    return block;
}

Var UNet::conv(const std::string& name, const Var& x) const {
    return ops::add_channel_bias(ops::conv2d(x, params_.get(name + ".w"), 1, 1), params_.get(name + ".b"));
}

Var UNet::run_block(const Block& block, Var h, const Var* temb) const {
    for (std::size_t k = 0; k < block.convs.size(); ++k) {
        const std::string& name = block.convs[k];
        h = conv(name, h);
        h = ops::group_norm(h, arch_.groups, params_.get(name + ".gn.g"), params_.get(name + ".gn.b"));
        if (k == 0 && temb) {
            Var shift = ops::dense(*temb, params_.get(block.time_proj + ".w"), params_.get(block.time_proj + ".b"));
            h = ops::add_batch_channel(h, shift);
        }
        h = ops::silu(h);
    }
    return h;
}

Var UNet::time_embedding(std::span<const std::size_t> timesteps) const {
    Var e = constant(sinusoidal_embedding(timesteps, arch_.base_channels));
    e = ops::silu(ops::dense(e, params_.get("time.fc1.w"), params_.get("time.fc1.b")));
    return ops::dense(e, params_.get("time.fc2.w"), params_.get("time.fc2.b"));
}

Var UNet::forward(const Var& x, std::span<const std::size_t> timesteps) const {
    const Shape s = x.shape();
    if (s.rank() != 4 || s[1] != arch_.in_channels)
        throw ShapeError("UNet: expected (B," + std::to_string(arch_.in_channels) + ",H,W) input, got " + s.str());
    const std::size_t factor = std::size_t{1} << arch_.levels;
    if (s[2] % factor || s[3] % factor) throw ShapeError("UNet: spatial extent must be divisible by " + std::to_string(factor));

    Var temb;
    if (arch_.time_conditioned) {
        if (timesteps.size() != s[0]) throw ShapeError("UNet: need one timestep per batch entry");
        temb = time_embedding(timesteps);
    }
    const Var* tp = arch_.time_conditioned ? &temb : nullptr;

    Var h = conv("in", x);
    std::vector<Var> skips;
    for (const auto& block : down_) {
        h = run_block(block, h, tp);
        skips.push_back(h);
        h = ops::avg_pool2x2(h);
    }
    h = run_block(mid_, h, tp);
    for (const auto& block : up_) {
        h = ops::upsample_nearest2x(h);
        const Var parts[] = {h, skips.back()};
        skips.pop_back();
        h = run_block(block, ops::concat_channels(parts), tp);
    }
    Var out = conv("out", h);
    if (arch_.input_skip) {
        const std::size_t O = arch_.out_channels, I = arch_.in_channels;
        Var gate = ops::dense(temb, params_.get("skip.w"), params_.get("skip.b"));
        const std::vector<Var> copies(O, x);
        Var scaled = ops::mul_batch_channel(O == 1 ? x : ops::concat_channels(copies), gate);
        Grid group_sum = Grid::zeros(Shape{O, O * I, 1, 1});
        for (std::size_t o = 0; o < O; ++o)
            for (std::size_t k = 0; k < I; ++k) group_sum[o * O * I + o * I + k] = 1.0;
        out = ops::add(out, ops::conv2d(scaled, constant(std::move(group_sum))));
    }
    return out;
}

UNetArch Denoiser::default_arch(std::size_t num_classes) {
    UNetArch a;
    a.in_channels = 1 + num_classes;
    a.out_channels = 1;
    a.time_conditioned = true;
    a.zero_init_output = true;
    a.input_skip = true;
    return a;
}

namespace {
UNetArch checked_denoiser_arch(UNetArch arch, std::size_t num_classes) {
    arch.in_channels = 1 + num_classes;
    if (arch.out_channels != 1 || !arch.time_conditioned) throw std::invalid_argument("Denoiser: needs one output channel and time conditioning");
    return arch;
}

UNetArch checked_segnet_arch(UNetArch arch, std::size_t num_classes) {
    arch.out_channels = num_classes;
    if (arch.in_channels != 1 || arch.time_conditioned) throw std::invalid_argument("SegNet: expects a single input channel and no time conditioning");
    return arch;
}
}  // namespace

Denoiser::Denoiser(std::size_t num_classes, UNetArch arch, Rng& init_rng)
    : num_classes_(num_classes), unet_(checked_denoiser_arch(arch, num_classes), init_rng) {}

Var Denoiser::forward(const Grid& xt, std::span<const std::size_t> timesteps, std::span<const ClassMask> masks) const {
    return unet_.forward(constant(condition_input(xt, masks, num_classes_)), timesteps);
}

UNetArch SegNet::default_arch(std::size_t num_classes) {
    UNetArch a;
    a.in_channels = 1;
    a.out_channels = num_classes;
    return a;
}

SegNet::SegNet(std::size_t num_classes, UNetArch arch, Rng& init_rng)
    : num_classes_(num_classes), unet_(checked_segnet_arch(arch, num_classes), init_rng) {}

Var SegNet::forward(const Grid& image) const { return unet_.forward(constant(image)); }

std::vector<ClassMask> SegNet::predict(const Grid& image) const { return argmax_channels(forward(image).value()); }

Var seg_loss(const Var& scores, std::span<const ClassMask> target, std::span<const double> class_weights, double dice_weight) {
    const auto labels = flatten_labels(target);
    Var ce = ops::weighted_cross_entropy(scores, labels, class_weights);
    if (dice_weight == 0.0) return ce;
    Var dice = ops::soft_dice_loss(ops::softmax_channels(scores), labels);
    return ops::add(ce, ops::scale(dice, dice_weight));
}

}  // namespace difforge
