#include "commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>

#include "artifacts.hpp"
#include "difforge/cbmat.hpp"
#include "difforge/config.hpp"
#include "difforge/diffusion.hpp"
#include "difforge/mask_forge.hpp"
#include "difforge/metrics.hpp"
#include "difforge/report.hpp"
#include "difforge/trainer.hpp"

namespace difforge::cli {

namespace {

constexpr std::uint64_t kSplitStream = 0x5917;

class Stopwatch {
   public:
    double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

   private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

template <typename T>
T load_config(const Common& c, const char* what) {
    if (c.config.empty()) return T{};
    json j;
    try {
        j = read_json_file(c.config);
    } catch (const InputError& e) {
        if (!std::filesystem::exists(c.config)) throw;
        throw ConfigError(e.what());
    }
    return config_from_json<T>(j, what);
}

json base_manifest(const std::string& command, const Common& c, const json& config, const json& inputs) {
    return {{"command", command},
            {"version", DIFFORGE_VERSION},
            {"seed", c.seed ? json(*c.seed) : json(nullptr)},
            {"workers", c.workers},
            {"config", config},
            {"inputs", inputs}};
}

void finish_manifest(const fs::path& out, json manifest, const json& outputs, const Stopwatch& clock) {
    manifest["outputs"] = outputs;
    manifest["wall_clock_s"] = clock.seconds();
    write_json_file(out / "manifest.json", manifest);
}

json frequencies_json(const std::vector<corpus::SliceRecord>& recs) {
    const auto masks = corpus::masks_of(recs);
    const auto f = cbmat::compute_frequencies(masks, tissue::kNumClasses);
    const auto lung = forge::lung_shares(masks);
    json pixel = json::object(), share = json::object();
    for (std::size_t c = 0; c < tissue::kNumClasses; ++c) {
        pixel[tissue::name(c)] = f.f[c];
        if (c >= tissue::kNormalLung) share[tissue::name(c)] = lung[c];
    }
    return {{"slices", recs.size()}, {"pixel_frequency", pixel}, {"lung_share", share}};
}

std::vector<corpus::SliceRecord> to_records(const Grid& x, const std::vector<ClassMask>& masks) {
    const std::size_t H = x.shape()[2], W = x.shape()[3];
    std::vector<corpus::SliceRecord> out;
    for (std::size_t b = 0; b < masks.size(); ++b) {
        Grid hu(Shape{H, W});
        for (std::size_t i = 0; i < H * W; ++i) hu[i] = std::clamp(std::round(corpus::denormalize_hu(x[b * H * W + i])), -corpus::kMaxHu, corpus::kMaxHu);
        out.push_back({hu, masks[b], "synthetic"});
    }
    return out;
}

std::uint8_t class_by_name(const std::string& name) {
    for (std::uint8_t c = 0; c < tissue::kNumClasses; ++c)
        if (tissue::name(c) == name) return c;
    for (const auto& col : report::dice_columns())
        if (col.name == name) return col.class_id;
    throw ConfigError("unknown class name '" + name + "'");
}

void say(const std::string& line) { std::printf("%s\n", line.c_str()); }

}  // namespace

fs::path output_dir(const Common& common, const std::string& command) {
    if (!common.out.empty()) return common.out;
    if (const char* env = std::getenv("DIFFORGE_OUT"); env && *env) return fs::path(env) / command;
    return fs::path("runs") / command;
}

int gen_corpus(const Common& c, const GenCorpusArgs& a) {
    Stopwatch clock;
    auto spec = load_config<corpus::CorpusSpec>(c, "corpus");
    if (c.seed) spec.seed = *c.seed;
    if (a.n) spec.n_samples = *a.n;
    if (a.size) spec.size = *a.size;
    if (!(a.train_fraction > 0.0 && a.train_fraction < 1.0)) throw ConfigError("train-fraction must lie in (0, 1)");
    spec.validate();
    const fs::path out = output_dir(c, "gen-corpus");

    const auto recs = corpus::generate_corpus(spec);
    Rng split_rng = Rng(spec.seed).fork(kSplitStream);
    auto [train, test] = corpus::split_by_patient(recs, a.train_fraction, split_rng);
    corpus::save_corpus(out / "train", train, json{{"split", "train"}}.dump());
    corpus::save_corpus(out / "test", test, json{{"split", "test"}}.dump());
    write_previews(out / "previews", train, 8, "train");

    const json metrics = {{"all", frequencies_json(recs)}, {"train", frequencies_json(train)}, {"test", frequencies_json(test)},
                          {"train_hash", train::hex_hash(corpus::corpus_hash(train))}, {"test_hash", train::hex_hash(corpus::corpus_hash(test))}};
    write_json_file(out / "metrics.json", metrics);

    std::string csv = "class,target,observed\n";
    const auto f = cbmat::compute_frequencies(corpus::masks_of(recs), tissue::kNumClasses);
    for (std::size_t k = 0; k < tissue::kNumClasses; ++k)
        csv += std::string(tissue::name(k)) + "," + std::to_string(spec.target_frequencies[k]) + "," + std::to_string(f.f[k]) + "\n";
    write_text_file(out / "frequencies.csv", csv);

    json cfg = spec;
    json manifest = base_manifest("gen-corpus", c, {{"corpus", cfg}, {"train_fraction", a.train_fraction}}, json::object());
    manifest["metrics"] = metrics;
    finish_manifest(out, manifest, {"train", "test", "previews", "metrics.json", "frequencies.csv"}, clock);
    say("gen-corpus: " + std::to_string(train.size()) + " train / " + std::to_string(test.size()) + " test slices -> " + out.string());
    return 0;
}

int train_diffusion(const Common& c, const TrainArgs& a) {
    Stopwatch clock;
    auto cfg = load_config<train::DiffusionConfig>(c, "diffusion");
    if (c.seed) cfg.seed = *c.seed;
    cfg.workers = c.workers;
    if (a.epochs) cfg.epochs = *a.epochs;
    if (a.max_steps) cfg.max_steps = *a.max_steps;
    cfg.validate();
    const auto recs = read_corpus(a.corpus);
    if (!a.resume.empty()) require_exists(a.resume, "resume checkpoint");
    const fs::path out = output_dir(c, "train-diffusion");
    fs::create_directories(out / "checkpoints");

    train::CheckpointPolicy policy{.dir = out / "checkpoints"};
    if (!a.resume.empty()) policy.resume_from = fs::path(a.resume);
    auto run = train::train_diffusion(recs, cfg, policy);
    save_checkpoint(out / "model.dfck", train::save_denoiser(run.net, run.schedule));
    write_loss_csv(out / "loss.csv", run.manifest.loss_curve);

    json manifest = run.manifest.to_json();
    const json common = base_manifest("train-diffusion", c, run.manifest.config, {{"corpus", a.corpus}, {"resume", a.resume}});
    manifest.update(common);
    finish_manifest(out, manifest, {"model.dfck", "checkpoints", "loss.csv"}, clock);
    char line[160];
    std::snprintf(line, sizeof line, "train-diffusion: %zu steps, final epoch loss %.5f -> %s", run.manifest.steps,
                  run.manifest.loss_curve.empty() ? 0.0 : run.manifest.loss_curve.back(), out.string().c_str());
    say(line);
    return 0;
}

int sample(const Common& c, const SampleArgs& a) {
    Stopwatch clock;
    if (!c.config.empty()) throw ConfigError("sample takes no config file; use its flags");
    require_exists(a.model, "model");
    const auto [net, schedule] = train::load_denoiser(load_checkpoint(a.model));
    const auto recs = read_corpus(a.corpus);
    if (a.n < 1) throw ConfigError("n must be at least 1");
    if (!a.ddpm && (a.ddim_steps < 1 || a.ddim_steps > schedule.steps()))
        throw ConfigError("ddim-steps must lie in [1, " + std::to_string(schedule.steps()) + "]");
    const std::size_t n = std::min(a.n, recs.size());
    const std::vector<corpus::SliceRecord> real(recs.begin(), recs.begin() + static_cast<std::ptrdiff_t>(n));
    const auto masks = corpus::masks_of(real);
    const fs::path out = output_dir(c, "sample");

    Rng rng = Rng(c.seed.value_or(1)).fork(0);
    const NoiseModel model = as_noise_model(net);
    Grid x;
    {
        NoGradGuard guard;
        x = a.ddpm ? ddpm_sample(model, masks, schedule, rng) : ddim_sample(model, masks, schedule, a.ddim_steps, rng, {.clip_x0 = !a.no_clip});
    }
    const auto synth = to_records(x, masks);
    corpus::save_corpus(out / "samples", synth, json{{"source", "synthetic"}}.dump());
    write_previews(out / "previews", synth, 16, "sample");
    write_previews(out / "previews", real, 16, "real");

    double psnr_sum = 0.0, ssim_sum = 0.0;
    std::size_t psnr_n = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const Grid r = corpus::preprocess(real[i].hu, real[i].mask), s = corpus::preprocess(synth[i].hu, synth[i].mask);
        const double p = metrics::psnr(r, s, 2.0);
        if (std::isfinite(p)) {
            psnr_sum += p;
            ++psnr_n;
        }
        ssim_sum += metrics::ssim(r, s, 2.0);
    }
    const json m = {{"n", n},
                    {"sampler", a.ddpm ? "ddpm" : "ddim"},
                    {"steps", a.ddpm ? schedule.steps() : a.ddim_steps},
                    {"psnr_db", psnr_n ? json(psnr_sum / static_cast<double>(psnr_n)) : json(nullptr)},
                    {"ssim", ssim_sum / static_cast<double>(n)}};
    write_json_file(out / "metrics.json", m);
    char row[128];
    std::snprintf(row, sizeof row, "difforge,%s,%.4f\n", psnr_n ? std::to_string(psnr_sum / static_cast<double>(psnr_n)).c_str() : "", ssim_sum / static_cast<double>(n));
    write_text_file(out / "quality.csv", std::string("model,psnr_db,ssim\n") + row);

    const json cfg = {{"n", n}, {"sampler", m.at("sampler")}, {"steps", m.at("steps")}, {"clip_x0", !a.no_clip}};
    json manifest = base_manifest("sample", c, cfg, {{"model", a.model}, {"corpus", a.corpus}});
    manifest["metrics"] = m;
    finish_manifest(out, manifest, {"samples", "previews", "metrics.json", "quality.csv"}, clock);
    say("sample: " + std::to_string(n) + " images (" + m.at("sampler").get<std::string>() + ") -> " + out.string());
    return 0;
}

int balance_masks(const Common& c, const BalanceArgs& a) {
    Stopwatch clock;
    const auto cfg = load_config<forge::BalanceConfig>(c, "balance");
    const auto recs = read_corpus(a.corpus);
    const fs::path out = output_dir(c, "balance-masks");
    const std::uint64_t seed = c.seed.value_or(1);
    Rng rng(seed);
    const auto masks = corpus::masks_of(recs);
    const auto res = forge::balance_dataset(masks, cfg, rng, seed);

    const std::vector<ClassMask> added(res.added().begin(), res.added().end());
    json per_mask = json::array();
    for (std::size_t s : res.source) per_mask.push_back({{"source", s}});
    write_mask_set(out / "masks", added, per_mask);
    write_mask_previews(out / "previews", added, 8, "balanced");
    const json rep = res.report;
    write_json_file(out / "balance_report.json", rep);

    std::string csv = "class,lung_share_before,lung_share_after,target\n";
    for (const auto& [cls, s] : res.report.lung_share) {
        const auto t = cfg.target_threshold.find(cls);
        csv += std::string(tissue::name(cls)) + "," + std::to_string(s.before) + "," + std::to_string(s.after) + "," +
               (t == cfg.target_threshold.end() ? std::string() : std::to_string(t->second)) + "\n";
    }
    write_text_file(out / "shares.csv", csv);

    json manifest = base_manifest("balance-masks", c, json(cfg), {{"corpus", a.corpus}});
    manifest["corpus_hash"] = train::hex_hash(corpus::corpus_hash(recs));
    manifest["metrics"] = {{"added_samples", res.report.added_samples}, {"iterations", res.report.iterations},
                           {"reached_threshold", res.report.reached_threshold}, {"lung_share", rep.at("lung_share")}};
    finish_manifest(out, manifest, {"masks", "previews", "balance_report.json", "shares.csv"}, clock);
    say("balance-masks: " + std::to_string(added.size()) + " new masks in " + std::to_string(res.report.iterations) + " iterations" +
        (res.report.reached_threshold ? "" : " (thresholds not reached)") + " -> " + out.string());
    return 0;
}

int augment(const Common& c, const AugmentArgs& a) {
    Stopwatch clock;
    auto opts = load_config<train::AugmentOptions>(c, "augment");
    if (c.seed) opts.seed = *c.seed;
    opts.workers = c.workers;
    if (a.ddim_steps) opts.ddim_steps = *a.ddim_steps;
    require_exists(a.model, "model");
    const auto [net, schedule] = train::load_denoiser(load_checkpoint(a.model));
    if (opts.ddim_steps < 1 || opts.ddim_steps > schedule.steps())
        throw ConfigError("ddim_steps must lie in [1, " + std::to_string(schedule.steps()) + "]");
    const auto masks = read_mask_set(a.masks);
    const fs::path out = output_dir(c, "augment");

    const auto aug = train::generate_augmentations(net, schedule, masks, opts);
    corpus::save_corpus(out / "augmented", aug, json{{"source", "synthetic"}}.dump());
    write_previews(out / "previews", aug, 16, "augmented");

    json manifest = base_manifest("augment", c, json(opts), {{"model", a.model}, {"masks", a.masks}});
    manifest["corpus_hash"] = train::hex_hash(corpus::corpus_hash(aug));
    manifest["metrics"] = {{"samples", aug.size()}};
    finish_manifest(out, manifest, {"augmented", "previews"}, clock);
    say("augment: " + std::to_string(aug.size()) + " synthetic slices -> " + out.string());
    return 0;
}

int train_seg(const Common& c, const TrainArgs& a) {
    Stopwatch clock;
    auto cfg = load_config<train::SegConfig>(c, "segmentation");
    if (c.seed) cfg.seed = *c.seed;
    if (a.epochs) cfg.epochs = *a.epochs;
    if (a.max_steps) cfg.max_steps = *a.max_steps;
    cfg.validate();
    const auto recs = read_corpus(a.corpus);
    const auto extra = a.augment.empty() ? std::vector<corpus::SliceRecord>{} : read_corpus(a.augment);
    if (!a.resume.empty()) require_exists(a.resume, "resume checkpoint");
    const fs::path out = output_dir(c, "train-seg");
    fs::create_directories(out / "checkpoints");

    train::CheckpointPolicy policy{.dir = out / "checkpoints"};
    if (!a.resume.empty()) policy.resume_from = fs::path(a.resume);
    auto run = train::train_segmentation(recs, cfg, extra, policy);
    save_checkpoint(out / "model.dfck", train::save_segnet(run.net));
    write_loss_csv(out / "loss.csv", run.manifest.loss_curve);

    json manifest = run.manifest.to_json();
    const json common = base_manifest("train-seg", c, run.manifest.config, {{"corpus", a.corpus}, {"augment", a.augment}, {"resume", a.resume}});
    manifest.update(common);
    if (!extra.empty()) manifest["augment_hash"] = train::hex_hash(corpus::corpus_hash(extra));
    finish_manifest(out, manifest, {"model.dfck", "checkpoints", "loss.csv"}, clock);
    char line[160];
    std::snprintf(line, sizeof line, "train-seg: %zu steps on %zu + %zu slices, final epoch loss %.5f -> %s", run.manifest.steps, recs.size(), extra.size(),
                  run.manifest.loss_curve.empty() ? 0.0 : run.manifest.loss_curve.back(), out.string().c_str());
    say(line);
    return 0;
}

int eval(const Common& c, const EvalArgs& a) {
    Stopwatch clock;
    if (!c.config.empty()) throw ConfigError("eval takes no config file; use its flags");
    const bool with_model = !a.model.empty();
    if (with_model == (!a.pred.empty() || !a.target.empty()))
        throw ConfigError("eval needs either --model with --corpus, or --pred with --target");
    const fs::path out = output_dir(c, "eval");
    json m;
    json inputs;
    if (with_model) {
        require_exists(a.model, "model");
        const SegNet net = train::load_segnet(load_checkpoint(a.model));
        const auto test = read_corpus(a.corpus);
        const auto pred = train::predict_masks(net, test);
        m = train::dice_summary(pred, corpus::masks_of(test), net.num_classes(), train::hex_hash(corpus::corpus_hash(test)));
        write_mask_set(out / "predictions", pred);
        write_mask_previews(out / "previews", pred, 8, "pred");
        inputs = {{"model", a.model}, {"corpus", a.corpus}};
    } else {
        const auto pred = read_mask_set(a.pred);
        const auto target = read_mask_set(a.target);
        if (pred.size() != target.size()) throw InputError("prediction and target sets differ in size");
        const std::string hash = fs::exists(fs::path(a.target) / "corpus.json") ? train::hex_hash(corpus::corpus_hash(read_corpus(a.target)))
                                                                                 : mask_set_hash(target);
        try {
            m = train::dice_summary(pred, target, tissue::kNumClasses, hash);
        } catch (const ShapeError& e) {
            throw InputError(e.what());
        }
        inputs = {{"pred", a.pred}, {"target", a.target}};
    }
    write_json_file(out / "metrics.json", m);
    write_text_file(out / "dice.csv", report::dice_table_csv({{"eval", m}}));
    json manifest = base_manifest("eval", c, json::object(), inputs);
    manifest["metrics"] = m;
    finish_manifest(out, manifest, with_model ? json{"metrics.json", "dice.csv", "predictions", "previews"} : json{"metrics.json", "dice.csv"}, clock);
    say("eval: " + m.at("dice").dump());
    return 0;
}

int report(const Common& c, const ReportArgs& a) {
    Stopwatch clock;
    if (!c.config.empty()) throw ConfigError("report takes no config file; use its flags");
    const std::uint8_t rare = class_by_name(a.rare_class);
    const json base = read_json_file(a.baseline), aug = read_json_file(a.augmented);
    for (const json* j : {&base, &aug})
        if (!j->contains("dice") || !j->contains("test_hash")) throw InputError("not an eval metrics file");
    json delta;
    try {
        delta = report::compare_runs(base, aug, rare);
    } catch (const std::invalid_argument& e) {
        throw InputError(e.what());
    }
    if (const auto problems = report::validate_delta_report(delta); !problems.empty())
        throw std::runtime_error("delta report failed schema validation: " + problems.front());
    const fs::path out = output_dir(c, "report");
    write_json_file(out / "delta_report.json", delta);
    write_json_file(out / "delta_report.schema.json", report::delta_report_schema());
    write_text_file(out / "table.csv", report::dice_table_csv({{"baseline", base}, {"augmented", aug}}));
    json manifest = base_manifest("report", c, {{"rare_class", a.rare_class}}, {{"baseline", a.baseline}, {"augmented", a.augmented}});
    manifest["metrics"] = delta;
    finish_manifest(out, manifest, {"delta_report.json", "delta_report.schema.json", "table.csv"}, clock);
    const json& rd = delta.at("rare_delta");
    char line[160];
    std::snprintf(line, sizeof line, "report: %s dice delta %s", a.rare_class.c_str(), rd.is_null() ? "undefined" : std::to_string(rd.get<double>()).c_str());
    say(line);
    return 0;
}

}  // namespace difforge::cli
