#include <iostream>

#include "CLI11.hpp"
#include "mssl/commands.hpp"

int main(int argc, char** argv)
{
    using namespace mssl::cli;
    CLI::App app{"Multi-source sound localization toolkit"};
    app.require_subcommand(1);

    LocalizeArgs loc;
    auto* localize = app.add_subcommand("localize", "Localize sound sources in feature grids");
    localize->add_option("--features", loc.features, "Visual feature grid (.fgrid)")->required();
    localize->add_option("--audio", loc.audio, "Audio embeddings (.aemb)")->required();
    localize->add_option("--config", loc.config, "Flat TOML config");
    localize->add_option("--out", loc.out, "Output directory")->required();
    localize->add_option("--upsample", loc.upsample, "Heatmap upsampling, nearest:F")->capture_default_str();

    EvaluateArgs ev;
    auto* evaluate = app.add_subcommand("evaluate", "Score predictions against ground truth");
    evaluate->add_option("--pred", ev.pred, "Directory with objects.json")->required();
    evaluate->add_option("--truth", ev.truth, "Directory with truth.json")->required();
    evaluate->add_option("--out", ev.out, "Report path")->required();
    evaluate->add_option("--iou", ev.iou_thresholds, "IoU thresholds")->capture_default_str();

    SynthArgs sy;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
    synth->add_option("--config", sy.config, "Flat TOML config");
    synth->add_option("--n", sy.n, "Number of scenes")->required();
    synth->add_option("--seed", sy.seed, "Base seed")->capture_default_str();
    synth->add_option("--out", sy.out, "Output directory")->required();

    TrainArgs tr;
    auto* train = app.add_subcommand("train", "Train the projections on synthetic scenes");
    train->add_option("--config", tr.config, "Flat TOML config");
    train->add_option("--out", tr.out, "Checkpoint path")->required();
    train->add_option("--curve", tr.curve, "Metric curve and loss trace (JSON)");
    train->add_option("--steps", tr.steps, "Override steps");
    train->add_option("--seed", tr.seed, "Override seed");
    train->add_option("--lr", tr.lr, "Override learning rate");
    train->add_option("--eval-scenes", tr.eval_scenes, "Held-out scenes per evaluation")->capture_default_str();

    GradcheckArgs gc;
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference checks of the analytic gradients");
    gradcheck->add_option("--seed", gc.seed, "Base seed")->capture_default_str();
    gradcheck->add_option("--instances", gc.instances, "Instances per loss")->capture_default_str();
    gradcheck->add_option("--step", gc.step, "Central difference step")->capture_default_str();
    gradcheck->add_option("--tol", gc.tolerance, "Relative error tolerance")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : kFormatError;
    }

    if (*localize)
        return cmd_localize(loc, std::cout, std::cerr);
    if (*evaluate)
        return cmd_evaluate(ev, std::cout, std::cerr);
    if (*synth)
        return cmd_synth(sy, std::cout, std::cerr);
    if (*train)
        return cmd_train(tr, std::cout, std::cerr);
    return cmd_gradcheck(gc, std::cout, std::cerr);
}
