#include "difforge/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <thread>

#include "difforge/config.hpp"
#include "difforge/metrics.hpp"
#include "difforge/ops.hpp"
#include "difforge/serialize.hpp"

namespace difforge::train {

using json = nlohmann::json;

namespace {

// Stream ids for Rng::fork; keeps the consumers of one seed independent.
constexpr std::uint64_t kInitStream = 0;
constexpr std::uint64_t kShuffleStream = 1;
constexpr std::uint64_t kDrawStream = 2;

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
    workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

std::vector<std::size_t> permutation(std::size_t n, Rng rng) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    return p;
}

struct LoopState {
    std::size_t epoch = 0;
    std::size_t step_in_epoch = 0;
    std::size_t step = 0;
    double epoch_loss_sum = 0.0;
    std::vector<double> curve;
    double best = std::numeric_limits<double>::infinity();
    std::size_t bad_epochs = 0;
    bool early_stopped = false;
    bool finished = false;
};

json loop_to_json(const LoopState& s) {
    return {{"epoch", s.epoch},
            {"step_in_epoch", s.step_in_epoch},
            {"step", s.step},
            {"epoch_loss_sum", s.epoch_loss_sum},
            {"curve", s.curve},
            {"best", std::isfinite(s.best) ? json(s.best) : json(nullptr)},
            {"bad_epochs", s.bad_epochs},
            {"early_stopped", s.early_stopped},
            {"finished", s.finished}};
}

LoopState loop_from_json(const json& j) {
    LoopState s;
    s.epoch = j.at("epoch").get<std::size_t>();
    s.step_in_epoch = j.at("step_in_epoch").get<std::size_t>();
    s.step = j.at("step").get<std::size_t>();
    s.epoch_loss_sum = j.at("epoch_loss_sum").get<double>();
    s.curve = j.at("curve").get<std::vector<double>>();
    s.best = j.at("best").is_null() ? std::numeric_limits<double>::infinity() : j.at("best").get<double>();
    s.bad_epochs = j.at("bad_epochs").get<std::size_t>();
    s.early_stopped = j.at("early_stopped").get<bool>();
    s.finished = j.at("finished").get<bool>();
    return s;
}

struct LoopSpec {
    std::size_t n_items = 0;
    std::size_t epochs = 0;
    std::size_t batch_size = 0;
    std::size_t max_steps = 0;
    std::size_t checkpoint_interval = 0;
    EarlyStop early_stop;
    std::uint64_t seed = 0;
};

/// Epoch loop shared by both trainers. `step` consumes the item indices of
/// one batch and returns its loss; `save` writes a checkpoint under a tag.
void run_loop(const LoopSpec& spec, LoopState& st, const std::function<double(std::size_t epoch, std::size_t step, std::span<const std::size_t>)>& step,
              const std::function<void(const std::string&)>& save) {
    const std::size_t per_epoch = (spec.n_items + spec.batch_size - 1) / spec.batch_size;
    const Rng shuffle_root = Rng(spec.seed).fork(kShuffleStream);
    std::vector<std::size_t> idx(spec.batch_size);
    while (!st.finished && st.epoch < spec.epochs) {
        const std::vector<std::size_t> perm = permutation(spec.n_items, shuffle_root.fork(st.epoch));
        while (st.step_in_epoch < per_epoch) {
            if (spec.max_steps && st.step >= spec.max_steps) break;
            for (std::size_t k = 0; k < spec.batch_size; ++k) idx[k] = perm[(st.step_in_epoch * spec.batch_size + k) % spec.n_items];
            st.epoch_loss_sum += step(st.epoch, st.step, idx);
            ++st.step_in_epoch;
            ++st.step;
        }
        if (st.step_in_epoch > 0) st.curve.push_back(st.epoch_loss_sum / static_cast<double>(st.step_in_epoch));
        const bool partial = st.step_in_epoch < per_epoch;
        st.epoch_loss_sum = 0.0;
        st.step_in_epoch = 0;
        ++st.epoch;
        if (partial) {
            st.finished = true;
            break;
        }
        if (spec.early_stop.enabled) {
            if (st.curve.back() < st.best - spec.early_stop.min_delta) {
                st.best = st.curve.back();
                st.bad_epochs = 0;
            } else if (++st.bad_epochs >= spec.early_stop.patience) {
                st.early_stopped = true;
                st.finished = true;
            }
        }
        if (spec.checkpoint_interval && st.epoch % spec.checkpoint_interval == 0 && !st.finished && st.epoch < spec.epochs) {
            char tag[32];
            std::snprintf(tag, sizeof tag, "epoch%04zu", st.epoch);
            save(tag);
        }
    }
    st.finished = true;
    save("final");
}

void check_finite_loss(double loss, const LoopState& st, std::size_t epoch, std::size_t step, json extra,
                       const std::function<void(const std::string&)>& save) {
    if (std::isfinite(loss)) return;
    extra["epoch"] = epoch;
    extra["step"] = step;
    extra["loss"] = std::isnan(loss) ? "nan" : "inf";
    extra["loss_curve"] = st.curve;
    try {
        save("diverged");
        extra["dump"] = "diverged";
    } catch (const std::exception&) {
    }
    throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(step), std::move(extra));
}

std::filesystem::path ckpt_path(const CheckpointPolicy& p, const std::string& tag) { return *p.dir / (p.prefix + "_" + tag + ".dfck"); }

std::vector<std::size_t> present_classes(std::span<const ClassMask> masks, std::size_t num_classes) {
    std::vector<std::size_t> counts(num_classes, 0);
    for (const auto& m : masks)
        for (auto l : m.labels) ++counts.at(l);
    std::vector<std::size_t> out;
    for (std::size_t c = 0; c < num_classes; ++c)
        if (counts[c]) out.push_back(c);
    return out;
}

}  // namespace

std::string hex_hash(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

json RunManifest::to_json() const {
    return {{"command", command},   {"config", config}, {"corpus_hash", corpus_hash},   {"loss_curve", loss_curve},
            {"metrics", metrics}, {"steps", steps},   {"early_stopped", early_stopped}, {"wall_clock_s", wall_clock_s}};
}

void DiffusionConfig::validate() const {
    if (epochs < 1 || batch_size < 1) throw std::invalid_argument("diffusion: epochs and batch_size must be at least 1");
    if (!(cbmat.delta0 >= 0.0 && cbmat.delta0 <= 1.0)) throw std::invalid_argument("diffusion: cbmat.delta0 must lie in [0, 1]");
    if (!(optimizer.lr > 0.0)) throw std::invalid_argument("diffusion: learning rate must be positive");
    if (workers < 1) throw std::invalid_argument("diffusion: workers must be at least 1");
    schedule.build();
}

void SegConfig::validate() const {
    if (epochs < 1 || batch_size < 1) throw std::invalid_argument("segmentation: epochs and batch_size must be at least 1");
    if (!class_weights.empty() && class_weights.size() != arch.out_channels)
        throw std::invalid_argument("segmentation: class_weights needs one entry per class");
    for (double w : class_weights)
        if (!(w >= 0.0)) throw std::invalid_argument("segmentation: class weights must be non-negative");
    if (!(dice_weight >= 0.0)) throw std::invalid_argument("segmentation: dice_weight must be non-negative");
}

// ---------------------------------------------------------------------------
// checkpoints

Checkpoint pack(const ParameterSet& params, const optim::Optimizer* opt) {
    Checkpoint ck;
    for (const auto& [name, v] : params.entries()) ck.put("param/" + name, v.value());
    if (opt) {
        const auto& vel = opt->sgd().velocity();
        const auto& slow = opt->lookahead().slow();
        for (std::size_t i = 0; i < params.size(); ++i) {
            const std::string& name = params.entries()[i].first;
            if (i < vel.size() && !vel[i].empty()) ck.put("velocity/" + name, vel[i]);
            if (i < slow.size() && !slow[i].empty()) ck.put("slow/" + name, slow[i]);
        }
        ck.header["optimizer"] = {{"config", opt->config()}, {"iteration", opt->iteration()}, {"lookahead_steps", opt->lookahead().step_count()}};
    }
    return ck;
}

void unpack_params(const Checkpoint& ck, ParameterSet& params) {
    for (const auto& [name, v] : params.entries()) {
        const Grid& g = ck.tensor("param/" + name);
        if (g.shape() != v.shape()) throw FormatError("checkpoint tensor " + name + " has shape " + g.shape().str() + ", expected " + v.shape().str());
        Var var = v;
        var.mutable_value() = g;
    }
}

void unpack_optimizer(const Checkpoint& ck, const ParameterSet& params, optim::Optimizer& opt) {
    if (!ck.header.contains("optimizer")) throw FormatError("checkpoint carries no optimizer state");
    const json& o = ck.header.at("optimizer");
    opt.set_iteration(o.at("iteration").get<std::size_t>());
    opt.lookahead().set_step_count(o.at("lookahead_steps").get<std::size_t>());
    auto& vel = opt.sgd().velocity();
    auto& slow = opt.lookahead().slow();
    vel.assign(params.size(), Grid{});
    bool any_slow = false;
    std::vector<Grid> slow_in(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::string& name = params.entries()[i].first;
        if (ck.has("velocity/" + name)) vel[i] = ck.tensor("velocity/" + name);
        if (ck.has("slow/" + name)) {
            slow_in[i] = ck.tensor("slow/" + name);
            any_slow = true;
        }
    }
    if (any_slow)
        slow = std::move(slow_in);
    else
        slow.clear();
}

Checkpoint save_denoiser(const Denoiser& net, const NoiseSchedule& schedule) {
    Checkpoint ck = pack(net.params(), nullptr);
    ck.header["kind"] = "denoiser";
    ck.header["num_classes"] = net.num_classes();
    ck.header["arch"] = net.arch();
    ck.put("schedule/betas", Grid(Shape{schedule.betas().size()}, schedule.betas()));
    return ck;
}

std::pair<Denoiser, NoiseSchedule> load_denoiser(const Checkpoint& ck) {
    if (ck.header.value("kind", "") != "denoiser") throw FormatError("checkpoint does not hold a denoiser");
    Rng dummy(0);
    Denoiser net(ck.header.at("num_classes").get<std::size_t>(), ck.header.at("arch").get<UNetArch>(), dummy);
    unpack_params(ck, net.params());
    const Grid& b = ck.tensor("schedule/betas");
    return {std::move(net), NoiseSchedule::from_betas(std::vector<double>(b.values().begin(), b.values().end()))};
}

Checkpoint save_segnet(const SegNet& net) {
    Checkpoint ck = pack(net.params(), nullptr);
    ck.header["kind"] = "segnet";
    ck.header["num_classes"] = net.num_classes();
    ck.header["arch"] = net.arch();
    return ck;
}

SegNet load_segnet(const Checkpoint& ck) {
    if (ck.header.value("kind", "") != "segnet") throw FormatError("checkpoint does not hold a segmentation net");
    Rng dummy(0);
    SegNet net(ck.header.at("num_classes").get<std::size_t>(), ck.header.at("arch").get<UNetArch>(), dummy);
    unpack_params(ck, net.params());
    return net;
}

// ---------------------------------------------------------------------------
// diffusion

DiffusionRun train_diffusion(std::span<const corpus::SliceRecord> records, const DiffusionConfig& config, const CheckpointPolicy& ckpt) {
    if (records.empty()) throw std::invalid_argument("train_diffusion: empty corpus");
    config.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t C = tissue::kNumClasses;
    const NoiseSchedule schedule = config.schedule.build();
    const Grid images = corpus::stack_images(records);
    const std::vector<ClassMask> masks = corpus::masks_of(records);
    const std::size_t H = masks[0].height, W = masks[0].width, HW = H * W;

    const std::size_t per_epoch = (records.size() + config.batch_size - 1) / config.batch_size;
    std::size_t total_steps = config.epochs * per_epoch;
    if (config.max_steps) total_steps = std::min(total_steps, config.max_steps);
    const cbmat::AblationPolicy policy =
        cbmat::init_policy(cbmat::compute_frequencies(masks, C), config.cbmat.delta0, config.cbmat.protected_classes,
                           config.cbmat.step_indexed ? total_steps : config.epochs, config.cbmat.law, config.cbmat.annealing);

    const Rng root(config.seed);
    Rng init_rng = root.fork(kInitStream);
    Denoiser net(C, config.arch, init_rng);
    optim::Optimizer opt(config.optimizer);
    const NoiseModel model = as_noise_model(net);
    const Rng draw_root = root.fork(kDrawStream);

    const json config_json = config;
    const std::string hash = hex_hash(corpus::corpus_hash(records));
    LoopState st;

    auto save = [&](const std::string& tag) {
        if (!ckpt.dir) return;
        Checkpoint ck = pack(net.params(), &opt);
        ck.header["kind"] = "denoiser";
        ck.header["num_classes"] = C;
        ck.header["arch"] = net.arch();
        ck.header["config"] = config_json;
        ck.header["corpus_hash"] = hash;
        ck.header["loop"] = loop_to_json(st);
        ck.put("schedule/betas", Grid(Shape{schedule.betas().size()}, schedule.betas()));
        save_checkpoint(ckpt_path(ckpt, tag), ck);
    };

    if (ckpt.resume_from) {
        const Checkpoint ck = load_checkpoint(*ckpt.resume_from);
        if (ck.header.value("kind", "") != "denoiser" || !ck.header.contains("loop")) throw FormatError("resume: not a diffusion training checkpoint");
        if (ck.header.at("arch") != json(net.arch())) throw FormatError("resume: architecture differs from the configuration");
        if (ck.header.value("corpus_hash", "") != hash) throw FormatError("resume: checkpoint was trained on a different corpus");
        unpack_params(ck, net.params());
        unpack_optimizer(ck, net.params(), opt);
        st = loop_from_json(ck.header.at("loop"));
        st.finished = false;
    }

    const LoopSpec spec{records.size(), config.epochs, config.batch_size, config.max_steps, config.checkpoint_interval, config.early_stop, config.seed};
    const std::size_t B = config.batch_size;
    run_loop(
        spec, st,
        [&](std::size_t epoch, std::size_t step, std::span<const std::size_t> idx) {
            Grid x0(Shape{B, 1, H, W});
            Grid eps(Shape{B, 1, H, W});
            std::vector<ClassMask> cond(B);
            std::vector<std::size_t> t(B);
            const std::size_t anneal_at = config.cbmat.step_indexed ? step : epoch;
            parallel_for(B, config.workers, [&](std::size_t k) {
                Rng rng = draw_root.fork(step * B + k);
                // Ablation comes first within each draw, then t, then the noise.
                cond[k] = cbmat::ablate(masks[idx[k]], policy, std::min(anneal_at, policy.max_epoch), rng);
                t[k] = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(schedule.steps())));
                std::copy_n(images.data() + idx[k] * HW, HW, x0.data() + k * HW);
                for (std::size_t i = 0; i < HW; ++i) eps[k * HW + i] = rng.normal();
            });
            const DiffusionBatch batch = DiffusionBatch::from_parts(std::move(x0), std::move(cond), std::move(t), std::move(eps), schedule);
            Var loss = training_loss(batch, model);
            const double value = loss.value()[0];
            check_finite_loss(value, st, epoch, step, {{"timesteps", batch.t}}, save);
            backward(loss);
            opt.step(net.params());
            return value;
        },
        save);

    RunManifest m;
    m.command = "train-diffusion";
    m.config = config_json;
    m.corpus_hash = hash;
    m.loss_curve = st.curve;
    m.steps = st.step;
    m.early_stopped = st.early_stopped;
    m.metrics = {{"final_loss", st.curve.empty() ? json(nullptr) : json(st.curve.back())}};
    m.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {std::move(net), schedule, std::move(m)};
}

std::vector<corpus::SliceRecord> generate_augmentations(const Denoiser& net, const NoiseSchedule& schedule, std::span<const ClassMask> masks,
                                                        const AugmentOptions& options) {
    std::vector<corpus::SliceRecord> out(masks.size());
    if (masks.empty()) return out;
    if (options.chunk < 1) throw std::invalid_argument("augment: chunk must be at least 1");
    const NoiseModel model = as_noise_model(net);
    const Rng root(options.seed);
    const std::size_t n_chunks = (masks.size() + options.chunk - 1) / options.chunk;
    parallel_for(n_chunks, options.workers, [&](std::size_t c) {
        NoGradGuard no_grad;
        const std::size_t lo = c * options.chunk, hi = std::min(masks.size(), lo + options.chunk);
        const std::size_t H = masks[lo].height, W = masks[lo].width, HW = H * W;
        Grid xT(Shape{hi - lo, 1, H, W});
        for (std::size_t i = lo; i < hi; ++i) {
            Rng rng = root.fork(i);
            for (std::size_t p = 0; p < HW; ++p) xT[(i - lo) * HW + p] = rng.normal();
        }
        const Grid x0 = ddim_sample_from(model, masks.subspan(lo, hi - lo), schedule, options.ddim_steps, std::move(xT), options.sampler);
        for (std::size_t i = lo; i < hi; ++i) {
            Grid hu(Shape{H, W});
            for (std::size_t p = 0; p < HW; ++p)
                hu[p] = std::clamp(std::round(corpus::denormalize_hu(x0[(i - lo) * HW + p])), corpus::kMinHu, corpus::kMaxHu);
            out[i] = {std::move(hu), masks[i], "synthetic"};
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// segmentation

SegRun train_segmentation(std::span<const corpus::SliceRecord> train_set, const SegConfig& config, std::span<const corpus::SliceRecord> augment,
                          const CheckpointPolicy& ckpt) {
    if (train_set.empty()) throw std::invalid_argument("train_segmentation: empty training set");
    config.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t C = config.arch.out_channels;

    std::vector<corpus::SliceRecord> pool(train_set.begin(), train_set.end());
    pool.insert(pool.end(), augment.begin(), augment.end());
    const Grid images = corpus::stack_images(pool);
    const std::vector<ClassMask> masks = corpus::masks_of(pool);
    const std::size_t H = masks[0].height, W = masks[0].width, HW = H * W;
    const std::vector<double> weights = config.class_weights.empty() ? std::vector<double>(C, 1.0) : config.class_weights;

    const Rng root(config.seed);
    Rng init_rng = root.fork(kInitStream);
    SegNet net(C, config.arch, init_rng);
    optim::Optimizer opt(config.optimizer);
    const Rng draw_root = root.fork(kDrawStream);

    const json config_json = config;
    const std::string hash = hex_hash(corpus::corpus_hash(pool));
    LoopState st;

    auto save = [&](const std::string& tag) {
        if (!ckpt.dir) return;
        Checkpoint ck = pack(net.params(), &opt);
        ck.header["kind"] = "segnet";
        ck.header["num_classes"] = C;
        ck.header["arch"] = net.arch();
        ck.header["config"] = config_json;
        ck.header["corpus_hash"] = hash;
        ck.header["loop"] = loop_to_json(st);
        save_checkpoint(ckpt_path(ckpt, tag), ck);
    };

    if (ckpt.resume_from) {
        const Checkpoint ck = load_checkpoint(*ckpt.resume_from);
        if (ck.header.value("kind", "") != "segnet" || !ck.header.contains("loop")) throw FormatError("resume: not a segmentation training checkpoint");
        if (ck.header.at("arch") != json(net.arch())) throw FormatError("resume: architecture differs from the configuration");
        if (ck.header.value("corpus_hash", "") != hash) throw FormatError("resume: checkpoint was trained on a different pool");
        unpack_params(ck, net.params());
        unpack_optimizer(ck, net.params(), opt);
        st = loop_from_json(ck.header.at("loop"));
        st.finished = false;
    }

    const LoopSpec spec{pool.size(), config.epochs, config.batch_size, config.max_steps, config.checkpoint_interval, config.early_stop, config.seed};
    const std::size_t B = config.batch_size;
    run_loop(
        spec, st,
        [&](std::size_t epoch, std::size_t step, std::span<const std::size_t> idx) {
            Grid x(Shape{B, 1, H, W});
            std::vector<ClassMask> target(B);
            for (std::size_t k = 0; k < B; ++k) {
                Rng rng = draw_root.fork(step * B + k);
                const bool flip = config.flip_augment && rng.uniform() < 0.5;
                const ClassMask& m = masks[idx[k]];
                target[k] = m;
                const double* src = images.data() + idx[k] * HW;
                for (std::size_t r = 0; r < H; ++r)
                    for (std::size_t c = 0; c < W; ++c) {
                        const std::size_t sc = flip ? W - 1 - c : c;
                        x[k * HW + r * W + c] = src[r * W + sc];
                        target[k].at(r, c) = m.at(r, sc);
                    }
            }
            Var loss = seg_loss(net.forward(x), target, weights, config.dice_weight);
            const double value = loss.value()[0];
            check_finite_loss(value, st, epoch, step, json::object(), save);
            backward(loss);
            opt.step(net.params());
            return value;
        },
        save);

    RunManifest m;
    m.command = "train-seg";
    m.config = config_json;
    m.corpus_hash = hash;
    m.loss_curve = st.curve;
    m.steps = st.step;
    m.early_stopped = st.early_stopped;
    m.metrics = {{"final_loss", st.curve.empty() ? json(nullptr) : json(st.curve.back())},
                 {"train_pool", pool.size()},
                 {"augmented", augment.size()},
                 {"present_classes", present_classes(masks, C)}};
    m.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {std::move(net), std::move(m)};
}

std::vector<ClassMask> predict_masks(const SegNet& net, std::span<const corpus::SliceRecord> records, std::size_t batch) {
    NoGradGuard no_grad;
    std::vector<ClassMask> out;
    out.reserve(records.size());
    for (std::size_t lo = 0; lo < records.size(); lo += batch) {
        const auto part = records.subspan(lo, std::min(batch, records.size() - lo));
        for (auto& m : net.predict(corpus::stack_images(part))) out.push_back(std::move(m));
    }
    return out;
}

json dice_summary(std::span<const ClassMask> predictions, std::span<const ClassMask> targets, std::size_t num_classes, const std::string& test_hash) {
    json per_class = json::object();
    for (std::size_t c = 0; c < num_classes; ++c) {
        const auto d = metrics::dice(predictions, targets, static_cast<std::uint8_t>(c));
        per_class[tissue::name(c)] = d ? json(*d) : json(nullptr);
    }
    return {{"dice", per_class}, {"n_slices", targets.size()}, {"test_hash", test_hash}};
}

json evaluate_segmentation(const SegNet& net, std::span<const corpus::SliceRecord> test_set, std::size_t batch) {
    const std::vector<ClassMask> pred = predict_masks(net, test_set, batch);
    return dice_summary(pred, corpus::masks_of(test_set), net.num_classes(), hex_hash(corpus::corpus_hash(test_set)));
}

}  // namespace difforge::train
