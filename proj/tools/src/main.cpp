#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include <nlohmann/json.hpp>

#include "artifacts.hpp"
#include "commands.hpp"
#include "difforge/config.hpp"
#include "difforge/serialize.hpp"
#include "difforge/trainer.hpp"

using namespace difforge;
using namespace difforge::cli;

namespace {

enum Exit { kOk = 0, kConfig = 1, kInput = 2, kNumerical = 3 };

int fail(Exit code, const char* kind, const std::string& command, const std::string& message) {
    const nlohmann::json line = {{"status", "error"}, {"kind", kind}, {"exit_code", static_cast<int>(code)}, {"command", command}, {"message", message}};
    std::cerr << line.dump() << std::endl;
    return code;
}

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config, "JSON configuration file");
    sub->add_option("--seed", c.seed, "Seed override");
    sub->add_option("--out", c.out, "Output directory (default: $DIFFORGE_OUT/<command> or runs/<command>)");
    sub->add_option("--workers", c.workers, "Worker threads for data preparation and sampling")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mask-conditioned diffusion augmentation for CT tissue segmentation"};
    app.set_version_flag("--version", DIFFORGE_VERSION);
    app.require_subcommand(1);

    Common common;
    GenCorpusArgs gen;
    TrainArgs tdiff, tseg;
    SampleArgs smp;
    BalanceArgs bal;
    AugmentArgs aug;
    EvalArgs ev;
    ReportArgs rep;

    auto* s_gen = app.add_subcommand("gen-corpus", "Generate a synthetic CT corpus split into train/ and test/");
    add_common(s_gen, common);
    s_gen->add_option("--n", gen.n, "Number of slices");
    s_gen->add_option("--size", gen.size, "Slice side length in pixels");
    s_gen->add_option("--train-fraction", gen.train_fraction, "Share of patients in the training split");

    auto* s_tdiff = app.add_subcommand("train-diffusion", "Train the mask-conditioned denoiser");
    add_common(s_tdiff, common);
    s_tdiff->add_option("--corpus", tdiff.corpus, "Training corpus directory")->required();
    s_tdiff->add_option("--epochs", tdiff.epochs, "Epoch override");
    s_tdiff->add_option("--max-steps", tdiff.max_steps, "Stop after this many optimizer steps");
    s_tdiff->add_option("--resume", tdiff.resume, "Checkpoint to resume from");

    auto* s_smp = app.add_subcommand("sample", "Sample images for the masks of a corpus and score them against the originals");
    add_common(s_smp, common);
    s_smp->add_option("--model", smp.model, "Denoiser checkpoint")->required();
    s_smp->add_option("--corpus", smp.corpus, "Corpus providing masks and reference images")->required();
    s_smp->add_option("--n", smp.n, "Number of samples");
    s_smp->add_option("--ddim-steps", smp.ddim_steps, "DDIM steps");
    s_smp->add_flag("--ddpm", smp.ddpm, "Use ancestral sampling through every step");
    s_smp->add_flag("--no-clip", smp.no_clip, "Do not clamp the x0 estimate during DDIM");

    auto* s_bal = app.add_subcommand("balance-masks", "Create extra masks that raise the share of rare tissue classes");
    add_common(s_bal, common);
    s_bal->add_option("--corpus", bal.corpus, "Corpus whose masks are balanced")->required();

    auto* s_aug = app.add_subcommand("augment", "Synthesize one image per mask");
    add_common(s_aug, common);
    s_aug->add_option("--model", aug.model, "Denoiser checkpoint")->required();
    s_aug->add_option("--masks", aug.masks, "Mask set or corpus directory")->required();
    s_aug->add_option("--ddim-steps", aug.ddim_steps, "DDIM steps override");

    auto* s_tseg = app.add_subcommand("train-seg", "Train the segmentation network");
    add_common(s_tseg, common);
    s_tseg->add_option("--corpus", tseg.corpus, "Training corpus directory")->required();
    s_tseg->add_option("--augment", tseg.augment, "Synthetic corpus appended to the training pool");
    s_tseg->add_option("--epochs", tseg.epochs, "Epoch override");
    s_tseg->add_option("--max-steps", tseg.max_steps, "Stop after this many optimizer steps");
    s_tseg->add_option("--resume", tseg.resume, "Checkpoint to resume from");

    auto* s_ev = app.add_subcommand("eval", "Per-class Dice of a model on a corpus, or of predicted masks against targets");
    add_common(s_ev, common);
    s_ev->add_option("--model", ev.model, "Segmentation checkpoint");
    s_ev->add_option("--corpus", ev.corpus, "Test corpus directory");
    s_ev->add_option("--pred", ev.pred, "Predicted mask set");
    s_ev->add_option("--target", ev.target, "Target mask set or corpus");

    auto* s_rep = app.add_subcommand("report", "Compare two eval runs");
    add_common(s_rep, common);
    s_rep->add_option("--baseline", rep.baseline, "metrics.json of the baseline eval")->required();
    s_rep->add_option("--augmented", rep.augmented, "metrics.json of the augmented eval")->required();
    s_rep->add_option("--rare-class", rep.rare_class, "Class whose delta is flagged");

    std::string command = "difforge";
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail(kConfig, "usage", command, e.what());
    }

    CLI::App* sub = app.get_subcommands().front();
    command = sub->get_name();
    try {
        if (sub == s_gen) return gen_corpus(common, gen);
        if (sub == s_tdiff) return train_diffusion(common, tdiff);
        if (sub == s_smp) return sample(common, smp);
        if (sub == s_bal) return balance_masks(common, bal);
        if (sub == s_aug) return augment(common, aug);
        if (sub == s_tseg) return train_seg(common, tseg);
        if (sub == s_ev) return eval(common, ev);
        if (sub == s_rep) return report(common, rep);
    } catch (const ConfigError& e) {
        return fail(kConfig, "config", command, e.what());
    } catch (const InputError& e) {
        return fail(kInput, "input", command, e.what());
    } catch (const FormatError& e) {
        return fail(kInput, "input", command, e.what());
    } catch (const train::NumericalError& e) {
        return fail(kNumerical, "numerical", command, std::string(e.what()) + " " + e.state().dump());
    } catch (const std::invalid_argument& e) {
        return fail(kConfig, "config", command, e.what());
    } catch (const std::exception& e) {
        return fail(kConfig, "runtime", command, e.what());
    }
    return kOk;
}
