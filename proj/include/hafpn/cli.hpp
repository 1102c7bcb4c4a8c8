#pragma once

// Implementations of the command-line verbs. Each cmd_* function does the
// real work and returns the process exit code; the binary's main() is only
// flag parsing plus exception-to-exit-code mapping (0 = success, 1 = numeric
// check failure, 2 = input/config error).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "hafpn/config.hpp"
#include "hafpn/dataio.hpp"
#include "hafpn/gradcheck_suite.hpp"
#include "hafpn/metrics.hpp"
#include "hafpn/pyramid.hpp"

namespace hafpn {

// ---------------------------------------------------------------------------
// forward
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
int run_forward(const Tensor<T>& image, const PipelineSettings& s,
                const std::string& out_dir) {
    require(image.rank() == 4 && image.extent(1) == 3,
            "forward: input must be [N,3,H,W], got " + shape_str(image.shape()));
    const PipelineParams<T> params =
        build_pipeline<T>(s, image.extent(2), image.extent(3));
    FeatureLevels<T> out = pipeline_forward(image, params);
    std::cout << "out.p3=" << shape_str(out.p3.shape()) << "\n";
    std::cout << "out.p4=" << shape_str(out.p4.shape()) << "\n";
    std::cout << "out.p5=" << shape_str(out.p5.shape()) << "\n";
    const std::vector<TensorRef<T>> refs = {
        {"p3", &out.p3}, {"p4", &out.p4}, {"p5", &out.p5}};
    save_named_tensors(out_dir, refs);
    std::cout << "wrote " << out_dir << "/manifest.txt\n";
    return 0;
}

}  // namespace detail

// Runs backbone + neck on an HTSR image tensor and writes the three level
// tensors plus a manifest. Runs in the input file's precision.
inline int cmd_forward(const PipelineSettings& s, const std::string& input_path,
                       const std::string& out_dir) {
    print_settings(std::cout, s);
    if (tensor_file_dtype(input_path) == kDtypeSingle)
        return detail::run_forward(load_tensor<float>(input_path), s, out_dir);
    return detail::run_forward(load_tensor<double>(input_path), s, out_dir);
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

inline int cmd_gradcheck(GradScope scope, std::uint64_t seed) {
    std::cout << "config.scope=" << to_string(scope) << "\n";
    std::cout << "config.seed=" << seed << "\n";
    const GradCheckReport rep = run_gradcheck(scope, seed);
    std::cout << format_gradcheck_report(rep);
    return rep.all_pass ? 0 : 1;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

// `gt_dir` holds images.txt, classes.txt, and the annotation files the
// manifest references (relative paths resolved against gt_dir).
inline int cmd_eval(const std::string& gt_dir, const std::string& det_path,
                    const std::string& out_dir, double iou_thr, ApMode mode) {
    std::cout << "config.gt_dir=" << gt_dir << "\n";
    std::cout << "config.detections=" << det_path << "\n";
    std::cout << "config.iou_thr=" << iou_thr << "\n";
    std::cout << "config.ap_mode="
              << (mode == ApMode::all_points ? "all_points" : "interp101")
              << "\n";

    DatasetIndex index;
    index.images = load_image_manifest(gt_dir + "/images.txt");
    index.classes = load_class_table(gt_dir + "/classes.txt");

    std::vector<GtBox> gts;
    std::set<std::string> known_images;
    for (const ImageEntry& e : index.images) {
        known_images.insert(e.id);
        std::filesystem::path ann(e.annotation_path);
        if (ann.is_relative()) ann = std::filesystem::path(gt_dir) / ann;
        const std::vector<GtBox> boxes =
            parse_annotation_file(ann.string(), e.id, e.width, e.height);
        gts.insert(gts.end(), boxes.begin(), boxes.end());
    }

    const std::vector<DetBox> dets = parse_detection_file(det_path);
    for (const DetBox& d : dets)
        require(known_images.count(d.image_id) != 0,
                "detection references unknown image id " + d.image_id);

    const EvalReport rep = evaluate(dets, gts, index.classes, iou_thr, mode);
    std::cout << format_report_text(rep);

    std::filesystem::create_directories(out_dir);
    {
        std::ofstream kv(out_dir + "/report.kv", std::ios::trunc);
        kv << format_report_kv(rep);
    }
    {
        std::ofstream txt(out_dir + "/report.txt", std::ios::trunc);
        txt << format_report_text(rep);
    }
    for (const ClassMetrics& c : rep.per_class) {
        std::ofstream pr(out_dir + "/pr_" + c.name + ".txt", std::ios::trunc);
        pr << "# recall precision\n";
        pr.precision(17);
        for (const PrPoint& p : c.curve)
            pr << p.recall << " " << p.precision << "\n";
    }
    std::cout << "wrote " << out_dir << "/report.kv\n";
    return 0;
}

// ---------------------------------------------------------------------------
// heatmap
// ---------------------------------------------------------------------------

// Mean absolute activation over channels, min-max scaled to 0..255 (zero
// dynamic range maps to mid-gray 128), encoded as a binary PGM.
inline std::string encode_heatmap_pgm(const Tensor<double>& x) {
    require(x.rank() == 4, "heatmap: input must be rank-4 [1,C,H,W]");
    require(x.extent(0) == 1, "heatmap: batch extent must be 1");
    const std::size_t channels = x.extent(1), height = x.extent(2),
                      width = x.extent(3);
    require(channels >= 1 && height >= 1 && width >= 1,
            "heatmap: empty tensor");

    std::vector<double> heat(height * width, 0.0);
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t h = 0; h < height; ++h)
            for (std::size_t w = 0; w < width; ++w)
                heat[h * width + w] += std::abs(x.at(0, c, h, w));
    for (double& v : heat) v /= static_cast<double>(channels);

    const auto [mn_it, mx_it] = std::minmax_element(heat.begin(), heat.end());
    const double mn = *mn_it, mx = *mx_it;

    std::string out = "P5\n" + std::to_string(width) + " " +
                      std::to_string(height) + "\n255\n";
    for (double v : heat) {
        double byte = 128.0;  // zero dynamic range: mid-gray
        if (mx > mn) byte = std::floor((v - mn) / (mx - mn) * 255.0 + 0.5);
        if (byte < 0) byte = 0;
        if (byte > 255) byte = 255;
        out.push_back(static_cast<char>(static_cast<unsigned char>(byte)));
    }
    return out;
}

inline int cmd_heatmap(const std::string& input_path,
                       const std::string& output_path) {
    std::cout << "config.input=" << input_path << "\n";
    std::cout << "config.output=" << output_path << "\n";
    Tensor<double> x;
    if (tensor_file_dtype(input_path) == kDtypeSingle)
        x = tensor_cast<double>(load_tensor<float>(input_path));
    else
        x = load_tensor<double>(input_path);
    const std::string pgm = encode_heatmap_pgm(x);
    std::ofstream out(output_path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + output_path);
    out.write(pgm.data(), static_cast<std::streamsize>(pgm.size()));
    std::cout << "heatmap " << x.extent(3) << "x" << x.extent(2) << " -> "
              << output_path << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// split
// ---------------------------------------------------------------------------

inline int cmd_split(const std::string& manifest_path, const SplitSpec& spec,
                     const std::string& out_dir) {
    std::cout << "config.manifest=" << manifest_path << "\n";
    std::cout << "config.fractions=" << spec.train.num << "/" << spec.train.den
              << " " << spec.val.num << "/" << spec.val.den << " "
              << spec.test.num << "/" << spec.test.den << "\n";
    std::cout << "config.seed=" << spec.seed << "\n";

    DatasetIndex index;
    index.images = load_image_manifest(manifest_path);
    const SplitResult r = split_dataset(index, spec);

    std::filesystem::create_directories(out_dir);
    const auto write_ids = [&](const std::string& name,
                               const std::vector<std::string>& ids) {
        std::ofstream out(out_dir + "/" + name, std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + out_dir + "/" + name);
        for (const std::string& id : ids) out << id << "\n";
    };
    write_ids("train.txt", r.train);
    write_ids("val.txt", r.val);
    write_ids("test.txt", r.test);
    std::cout << "sizes train=" << r.train.size() << " val=" << r.val.size()
              << " test=" << r.test.size() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

// Wall-time per forward for each neck variant on identical inputs. Reports
// relative cost only; timings are inherently non-deterministic.
inline int cmd_bench(const PipelineSettings& base, std::size_t batch,
                     std::size_t image_h, std::size_t image_w,
                     std::size_t repeat) {
    require(repeat >= 1, "bench: repeat must be >= 1");
    print_settings(std::cout, base);
    std::cout << "bench.shape=[" << batch << ",3," << image_h << "," << image_w
              << "]\n";
    std::cout << "bench.repeat=" << repeat << "\n";
    std::cout << "bench.note=timings are wall-clock and non-deterministic\n";

    Rng data_rng(base.seed + 1);
    const Tensor<float> image = rand_uniform<float>(
        {batch, 3, image_h, image_w}, data_rng, -1.0f, 1.0f);

    for (NeckVariant v :
         {NeckVariant::fpn, NeckVariant::pafpn, NeckVariant::hafpn}) {
        PipelineSettings s = base;
        s.neck.variant = v;
        const PipelineParams<float> params =
            build_pipeline<float>(s, image_h, image_w);
        volatile float sink = 0;
        (void)pipeline_forward(image, params);  // warm-up
        std::vector<double> times;
        for (std::size_t i = 0; i < repeat; ++i) {
            const auto t0 = std::chrono::steady_clock::now();
            const FeatureLevels<float> out = pipeline_forward(image, params);
            const auto t1 = std::chrono::steady_clock::now();
            sink = sink + out.p3[0];
            times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        }
        double mean = 0;
        for (double t : times) mean += t;
        mean /= static_cast<double>(times.size());
        double var = 0;
        for (double t : times) var += (t - mean) * (t - mean);
        var /= static_cast<double>(times.size());
        std::cout << "bench." << to_string(v) << ".mean_ms=" << mean << "\n";
        std::cout << "bench." << to_string(v) << ".stddev_ms=" << std::sqrt(var)
                  << "\n";
    }
    return 0;
}

}  // namespace hafpn
