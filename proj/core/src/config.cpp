#include "difforge/config.hpp"

#include <set>

namespace difforge {

using json = nlohmann::json;

namespace {

class Reader {
   public:
    Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j.is_object()) throw ConfigError(where_ + ": expected an object");
    }
    template <typename T>
    Reader& opt(const char* key, T& out) {
        seen_.insert(key);
        if (j_.contains(key)) {
            try {
                j_.at(key).get_to(out);
            } catch (const ConfigError&) {
                throw;
            } catch (const std::exception& e) {
                throw ConfigError(where_ + "." + key + ": " + e.what());
            }
        }
        return *this;
    }
    void finish() const {
        for (const auto& [k, _] : j_.items())
            if (!seen_.count(k)) throw ConfigError(where_ + ": unknown key '" + k + "'");
    }

   private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

}  // namespace

void to_json(json& j, const UNetArch& a) {
    j = {{"in_channels", a.in_channels},        {"out_channels", a.out_channels},         {"base_channels", a.base_channels},
         {"levels", a.levels},                  {"groups", a.groups},                     {"convs_per_block", a.convs_per_block},
         {"time_conditioned", a.time_conditioned}, {"zero_init_output", a.zero_init_output}, {"input_skip", a.input_skip}};
}
void from_json(const json& j, UNetArch& a) {
    Reader(j, "arch")
        .opt("in_channels", a.in_channels)
        .opt("out_channels", a.out_channels)
        .opt("base_channels", a.base_channels)
        .opt("levels", a.levels)
        .opt("groups", a.groups)
        .opt("convs_per_block", a.convs_per_block)
        .opt("time_conditioned", a.time_conditioned)
        .opt("zero_init_output", a.zero_init_output)
        .opt("input_skip", a.input_skip)
        .finish();
}

namespace optim {
void to_json(json& j, const CyclicLr& c) {
    j = {{"base_lr", c.base_lr}, {"max_lr", c.max_lr}, {"step_size", c.step_size}, {"gamma", c.gamma}};
}
void from_json(const json& j, CyclicLr& c) {
    Reader(j, "cyclic").opt("base_lr", c.base_lr).opt("max_lr", c.max_lr).opt("step_size", c.step_size).opt("gamma", c.gamma).finish();
}
void to_json(json& j, const OptimizerConfig& c) {
    j = {{"lr", c.lr},
         {"momentum", c.momentum},
         {"clip_norm", c.clip_norm},
         {"use_cyclic_lr", c.use_cyclic_lr},
         {"cyclic", c.cyclic},
         {"use_lookahead", c.use_lookahead},
         {"lookahead_k", c.lookahead_k},
         {"lookahead_alpha", c.lookahead_alpha}};
}
void from_json(const json& j, OptimizerConfig& c) {
    Reader(j, "optimizer")
        .opt("lr", c.lr)
        .opt("momentum", c.momentum)
        .opt("clip_norm", c.clip_norm)
        .opt("use_cyclic_lr", c.use_cyclic_lr)
        .opt("cyclic", c.cyclic)
        .opt("use_lookahead", c.use_lookahead)
        .opt("lookahead_k", c.lookahead_k)
        .opt("lookahead_alpha", c.lookahead_alpha)
        .finish();
}
}  // namespace optim

namespace cbmat {
void to_json(json& j, const AblationLaw& v) { j = to_string(v); }
void from_json(const json& j, AblationLaw& v) {
    try {
        v = parse_ablation_law(j.get<std::string>());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}
void to_json(json& j, const AnnealingMode& v) { j = to_string(v); }
void from_json(const json& j, AnnealingMode& v) {
    try {
        v = parse_annealing_mode(j.get<std::string>());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}
}  // namespace cbmat

namespace corpus {
void to_json(json& j, const TexturePalette& p) {
    j = {{"mean_hu", p.mean_hu}, {"spread_hu", p.spread_hu}, {"correlation_length", p.correlation_length}};
}
void from_json(const json& j, TexturePalette& p) {
    Reader(j, "palette").opt("mean_hu", p.mean_hu).opt("spread_hu", p.spread_hu).opt("correlation_length", p.correlation_length).finish();
}
void to_json(json& j, const CorpusSpec& s) {
    j = {{"n_samples", s.n_samples},
         {"size", s.size},
         {"slices_per_patient", s.slices_per_patient},
         {"palette", s.palette},
         {"target_frequencies", s.target_frequencies},
         {"emphysema_slice_rate", s.emphysema_slice_rate},
         {"ild_slice_rate", s.ild_slice_rate},
         {"seed", s.seed}};
}
void from_json(const json& j, CorpusSpec& s) {
    Reader(j, "corpus")
        .opt("n_samples", s.n_samples)
        .opt("size", s.size)
        .opt("slices_per_patient", s.slices_per_patient)
        .opt("palette", s.palette)
        .opt("target_frequencies", s.target_frequencies)
        .opt("emphysema_slice_rate", s.emphysema_slice_rate)
        .opt("ild_slice_rate", s.ild_slice_rate)
        .opt("seed", s.seed)
        .finish();
}
}  // namespace corpus

namespace forge {
void to_json(json& j, const BalanceConfig& c) {
    json thresholds = json::object();
    for (const auto& [cls, v] : c.target_threshold) thresholds[std::to_string(cls)] = v;
    j = {{"target_threshold", thresholds},
         {"p_rotate", c.p_rotate},
         {"p_paste", c.p_paste},
         {"p_dilate", c.p_dilate},
         {"max_iterations", c.max_iterations},
         {"dilation_radius", c.dilation_radius},
         {"element", c.element == StructuringElement::disc ? "disc" : "square"},
         {"rotation_angles", c.rotation_angles},
         {"regions_per_sample", c.regions_per_sample}};
}
void from_json(const json& j, BalanceConfig& c) {
    json thresholds;
    std::string element = c.element == StructuringElement::disc ? "disc" : "square";
    Reader(j, "balance")
        .opt("target_threshold", thresholds)
        .opt("p_rotate", c.p_rotate)
        .opt("p_paste", c.p_paste)
        .opt("p_dilate", c.p_dilate)
        .opt("max_iterations", c.max_iterations)
        .opt("dilation_radius", c.dilation_radius)
        .opt("element", element)
        .opt("rotation_angles", c.rotation_angles)
        .opt("regions_per_sample", c.regions_per_sample)
        .finish();
    if (element == "disc")
        c.element = StructuringElement::disc;
    else if (element == "square")
        c.element = StructuringElement::square;
    else
        throw ConfigError("balance.element: expected 'disc' or 'square', got '" + element + "'");
    if (!thresholds.is_null()) {
        if (!thresholds.is_object()) throw ConfigError("balance.target_threshold: expected an object of class id -> share");
        c.target_threshold.clear();
        for (const auto& [k, v] : thresholds.items()) {
            int cls = -1;
            try {
                cls = std::stoi(k);
            } catch (const std::exception&) {
            }
            if (cls < 0 || cls > 255 || std::to_string(cls) != k) throw ConfigError("balance.target_threshold: bad class id '" + k + "'");
            if (!v.is_number()) throw ConfigError("balance.target_threshold." + k + ": expected a number");
            c.target_threshold[static_cast<std::uint8_t>(cls)] = v.get<double>();
        }
    }
}

void to_json(json& j, const BalanceReport& r) {
    auto shares = [](const std::map<std::uint8_t, ClassShare>& m) {
        json o = json::object();
        for (const auto& [cls, s] : m) o[tissue::name(cls)] = {{"before", s.before}, {"after", s.after}};
        return o;
    };
    json hist = json::array();
    for (const auto& h : r.history)
        hist.push_back({{"iteration", h.iteration}, {"target", h.target}, {"donor", h.donor}, {"share_before", h.share_before}, {"share_after", h.share_after}});
    j = {{"lung_share", shares(r.lung_share)},
         {"pixel_share", shares(r.pixel_share)},
         {"iterations", r.iterations},
         {"added_samples", r.added_samples},
         {"reached_threshold", r.reached_threshold},
         {"unbalanceable", r.unbalanceable},
         {"history", hist},
         {"seed", r.seed}};
}
}  // namespace forge

namespace train {
void to_json(json& j, const ScheduleConfig& c) { j = {{"steps", c.steps}, {"beta_start", c.beta_start}, {"beta_end", c.beta_end}}; }
void from_json(const json& j, ScheduleConfig& c) {
    Reader(j, "schedule").opt("steps", c.steps).opt("beta_start", c.beta_start).opt("beta_end", c.beta_end).finish();
}
void to_json(json& j, const CbmatConfig& c) {
    j = {{"delta0", c.delta0},
         {"law", c.law},
         {"annealing", c.annealing},
         {"protected_classes", c.protected_classes},
         {"step_indexed", c.step_indexed}};
}
void from_json(const json& j, CbmatConfig& c) {
    Reader(j, "cbmat")
        .opt("delta0", c.delta0)
        .opt("law", c.law)
        .opt("annealing", c.annealing)
        .opt("protected_classes", c.protected_classes)
        .opt("step_indexed", c.step_indexed)
        .finish();
}
void to_json(json& j, const EarlyStop& c) { j = {{"enabled", c.enabled}, {"patience", c.patience}, {"min_delta", c.min_delta}}; }
void from_json(const json& j, EarlyStop& c) {
    Reader(j, "early_stop").opt("enabled", c.enabled).opt("patience", c.patience).opt("min_delta", c.min_delta).finish();
}
void to_json(json& j, const DiffusionConfig& c) {
    j = {{"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"max_steps", c.max_steps},
         {"schedule", c.schedule},
         {"arch", c.arch},
         {"optimizer", c.optimizer},
         {"cbmat", c.cbmat},
         {"early_stop", c.early_stop},
         {"seed", c.seed},
         {"checkpoint_interval", c.checkpoint_interval},
         {"workers", c.workers}};
}
void from_json(const json& j, DiffusionConfig& c) {
    Reader(j, "diffusion")
        .opt("epochs", c.epochs)
        .opt("batch_size", c.batch_size)
        .opt("max_steps", c.max_steps)
        .opt("schedule", c.schedule)
        .opt("arch", c.arch)
        .opt("optimizer", c.optimizer)
        .opt("cbmat", c.cbmat)
        .opt("early_stop", c.early_stop)
        .opt("seed", c.seed)
        .opt("checkpoint_interval", c.checkpoint_interval)
        .opt("workers", c.workers)
        .finish();
}
void to_json(json& j, const SegConfig& c) {
    j = {{"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"max_steps", c.max_steps},
         {"arch", c.arch},
         {"optimizer", c.optimizer},
         {"class_weights", c.class_weights},
         {"dice_weight", c.dice_weight},
         {"flip_augment", c.flip_augment},
         {"early_stop", c.early_stop},
         {"seed", c.seed},
         {"checkpoint_interval", c.checkpoint_interval}};
}
void from_json(const json& j, SegConfig& c) {
    Reader(j, "segmentation")
        .opt("epochs", c.epochs)
        .opt("batch_size", c.batch_size)
        .opt("max_steps", c.max_steps)
        .opt("arch", c.arch)
        .opt("optimizer", c.optimizer)
        .opt("class_weights", c.class_weights)
        .opt("dice_weight", c.dice_weight)
        .opt("flip_augment", c.flip_augment)
        .opt("early_stop", c.early_stop)
        .opt("seed", c.seed)
        .opt("checkpoint_interval", c.checkpoint_interval)
        .finish();
}
void to_json(json& j, const AugmentOptions& c) {
    j = {{"ddim_steps", c.ddim_steps}, {"chunk", c.chunk}, {"workers", c.workers}, {"seed", c.seed}, {"clip_x0", c.sampler.clip_x0}};
}
void from_json(const json& j, AugmentOptions& c) {
    Reader(j, "augment")
        .opt("ddim_steps", c.ddim_steps)
        .opt("chunk", c.chunk)
        .opt("workers", c.workers)
        .opt("seed", c.seed)
        .opt("clip_x0", c.sampler.clip_x0)
        .finish();
}
}  // namespace train

}  // namespace difforge
