// Command-line front end: flag parsing only; the verbs live in hafpn/cli.hpp.

#include <cstdint>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "hafpn/cli.hpp"

namespace {

hafpn::PipelineSettings resolve_settings(const std::string& config_path,
                                         const std::string& variant,
                                         int use_emsa, int use_ca, int heads,
                                         int reduction, std::int64_t seed) {
    hafpn::PipelineSettings s;
    if (!config_path.empty()) s = hafpn::load_settings(config_path);
    if (!variant.empty()) s.neck.variant = hafpn::detail::parse_variant(variant);
    if (use_emsa >= 0) s.neck.use_emsa = use_emsa != 0;
    if (use_ca >= 0) s.neck.use_ca = use_ca != 0;
    if (heads > 0) s.heads = static_cast<std::size_t>(heads);
    if (reduction > 0) s.reduction = static_cast<std::size_t>(reduction);
    if (seed >= 0) s.seed = static_cast<std::uint64_t>(seed);
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"feature-pyramid attention toolkit"};
    app.require_subcommand(1);

    std::string config_path, input_path, output_path, variant;
    int use_emsa = -1, use_ca = -1, heads = -1, reduction = -1;
    std::int64_t seed = -1;
    double iou_thr = 0.5;
    std::size_t repeat = 10;

    const auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "key=value config file");
        cmd->add_option("--seed", seed, "seed override");
        cmd->add_option("--variant", variant, "fpn|pafpn|hafpn")
            ->check(CLI::IsMember({"fpn", "pafpn", "hafpn"}));
        cmd->add_option("--use-emsa", use_emsa, "0|1 override");
        cmd->add_option("--use-ca", use_ca, "0|1 override");
        cmd->add_option("--heads", heads, "attention head count");
        cmd->add_option("--reduction", reduction, "coordinate-attention reduction");
    };

    CLI::App* fwd = app.add_subcommand("forward", "run backbone + neck on a tensor");
    add_common(fwd);
    fwd->add_option("--input", input_path, "HTSR image tensor [N,3,H,W]")
        ->required();
    fwd->add_option("--output", output_path, "output directory")->required();

    CLI::App* grad = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    std::string scope = "layer";
    grad->add_option("scope", scope, "layer|attention|neck")
        ->check(CLI::IsMember({"layer", "attention", "neck"}));
    grad->add_option("--seed", seed, "seed override");

    CLI::App* eval = app.add_subcommand("eval", "detection metrics against ground truth");
    std::string ap_mode = "all_points", gt_dir;
    eval->add_option("--gt", gt_dir, "ground-truth dir (images.txt, classes.txt)")
        ->required();
    eval->add_option("--input", input_path, "detection file")->required();
    eval->add_option("--output", output_path, "report directory")->required();
    eval->add_option("--iou-thr", iou_thr, "matching IoU threshold");
    eval->add_option("--ap-mode", ap_mode, "all_points|interp101")
        ->check(CLI::IsMember({"all_points", "interp101"}));

    CLI::App* heat = app.add_subcommand("heatmap", "mean |activation| map as binary PGM");
    heat->add_option("--input", input_path, "HTSR tensor [1,C,H,W]")->required();
    heat->add_option("--output", output_path, "output .pgm path")->required();

    CLI::App* split = app.add_subcommand("split", "seeded train/val/test split");
    std::string f_train = "0.8", f_val = "0.1", f_test = "0.1";
    split->add_option("--input", input_path, "image manifest")->required();
    split->add_option("--output", output_path, "output directory")->required();
    split->add_option("--seed", seed, "shuffle seed");
    split->add_option("train", f_train, "train fraction (decimal or a/b)");
    split->add_option("val", f_val, "val fraction");
    split->add_option("test", f_test, "test fraction");

    CLI::App* bench = app.add_subcommand("bench", "per-variant forward timings");
    add_common(bench);
    std::size_t bench_n = 1, bench_h = 32, bench_w = 32;
    bench->add_option("--repeat", repeat, "timed repetitions");
    bench->add_option("--batch", bench_n, "batch size");
    bench->add_option("--height", bench_h, "image height");
    bench->add_option("--width", bench_w, "image width");

    CLI11_PARSE(app, argc, argv);

    try {
        if (fwd->parsed()) {
            const hafpn::PipelineSettings s = resolve_settings(
                config_path, variant, use_emsa, use_ca, heads, reduction, seed);
            return hafpn::cmd_forward(s, input_path, output_path);
        }
        if (grad->parsed()) {
            return hafpn::cmd_gradcheck(
                hafpn::parse_grad_scope(scope),
                seed >= 0 ? static_cast<std::uint64_t>(seed) : 0u);
        }
        if (eval->parsed()) {
            return hafpn::cmd_eval(gt_dir, input_path, output_path, iou_thr,
                                   ap_mode == "all_points"
                                       ? hafpn::ApMode::all_points
                                       : hafpn::ApMode::interp101);
        }
        if (heat->parsed()) return hafpn::cmd_heatmap(input_path, output_path);
        if (split->parsed()) {
            hafpn::SplitSpec spec;
            spec.train = hafpn::parse_fraction(f_train);
            spec.val = hafpn::parse_fraction(f_val);
            spec.test = hafpn::parse_fraction(f_test);
            if (seed >= 0) spec.seed = static_cast<std::uint64_t>(seed);
            return hafpn::cmd_split(input_path, spec, output_path);
        }
        if (bench->parsed()) {
            const hafpn::PipelineSettings s = resolve_settings(
                config_path, variant, use_emsa, use_ca, heads, reduction, seed);
            return hafpn::cmd_bench(s, bench_n, bench_h, bench_w, repeat);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
