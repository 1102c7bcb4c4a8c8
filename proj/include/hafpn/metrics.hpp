#pragma once

// Detection evaluation: IoU matching, precision = TP/(TP+FP), recall =
// TP/(TP+FN), AP as the area under the precision envelope over recall, and
// mAP as the unweighted mean of per-class APs. Matching is greedy in score
// order with one-to-one ground-truth assignment (VOC-style). 0/0 ratios are
// defined as 0.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hafpn/tensor.hpp"  // require()

namespace hafpn {

struct BoxXyxy {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
};

inline void validate_box(const BoxXyxy& b) {
    require(std::isfinite(b.x1) && std::isfinite(b.y1) && std::isfinite(b.x2) &&
                std::isfinite(b.y2),
            "box coordinates must be finite");
    require(b.x1 < b.x2 && b.y1 < b.y2,
            "degenerate box: require x1 < x2 and y1 < y2");
}

struct GtBox {
    std::string image_id;
    int class_id = 0;
    BoxXyxy box;
};

struct DetBox {
    std::string image_id;
    int class_id = 0;
    double score = 0;
    BoxXyxy box;
};

inline void validate_det(const DetBox& d) {
    validate_box(d.box);
    require(std::isfinite(d.score) && d.score >= 0.0 && d.score <= 1.0,
            "detection score must lie in [0,1]");
}

inline double iou(const BoxXyxy& a, const BoxXyxy& b) {
    validate_box(a);
    validate_box(b);
    const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const double inter = ix * iy;
    const double uni =
        (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
    return inter <= 0.0 ? 0.0 : inter / uni;
}

// ---------------------------------------------------------------------------
// Matching
// ---------------------------------------------------------------------------

struct MatchResult {
    std::vector<bool> det_tp;      // aligned with the input detections
    std::vector<bool> gt_matched;  // aligned with the input ground truths
};

// Greedy one-to-one matching within one (image, class) group. Detections are
// visited by descending score (ties by input index); each claims the
// unmatched ground truth of highest IoU (ties by lowest gt index) if that IoU
// reaches the threshold.
inline MatchResult match(const std::vector<DetBox>& dets,
                         const std::vector<GtBox>& gts, double iou_thr) {
    require(iou_thr > 0.0 && iou_thr <= 1.0, "iou threshold must lie in (0,1]");
    MatchResult r;
    r.det_tp.assign(dets.size(), false);
    r.gt_matched.assign(gts.size(), false);

    std::vector<std::size_t> order(dets.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
        return a < b;
    });

    for (std::size_t k : order) {
        double best = 0.0;
        std::size_t best_gt = gts.size();
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (r.gt_matched[g]) continue;
            const double v = iou(dets[k].box, gts[g].box);
            if (v > best) {
                best = v;
                best_gt = g;
            }
        }
        if (best_gt != gts.size() && best >= iou_thr) {
            r.det_tp[k] = true;
            r.gt_matched[best_gt] = true;
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// Scalar metrics
// ---------------------------------------------------------------------------

inline double precision(std::size_t tp, std::size_t fp) {
    return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
}

inline double recall(std::size_t tp, std::size_t fn) {
    return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
}

enum class ApMode { all_points, interp101 };

struct ScoredLabel {
    double score = 0;
    bool tp = false;
};

// `ranked` must be sorted by descending score (the order matching used).
inline double average_precision(const std::vector<ScoredLabel>& ranked,
                                std::size_t gt_count,
                                ApMode mode = ApMode::all_points) {
    for (std::size_t i = 1; i < ranked.size(); ++i)
        require(ranked[i - 1].score >= ranked[i].score,
                "average_precision: input not sorted by descending score");
    if (gt_count == 0) return 0.0;

    std::vector<double> rec, prec;
    std::size_t tp = 0, fp = 0;
    for (const ScoredLabel& s : ranked) {
        (s.tp ? tp : fp) += 1;
        rec.push_back(static_cast<double>(tp) / static_cast<double>(gt_count));
        prec.push_back(precision(tp, fp));
    }
    // Precision envelope: running max from the right.
    std::vector<double> env = prec;
    for (std::size_t i = env.size(); i-- > 1;)
        env[i - 1] = std::max(env[i - 1], env[i]);

    if (mode == ApMode::all_points) {
        double ap = 0.0, prev = 0.0;
        for (std::size_t i = 0; i < rec.size(); ++i) {
            ap += (rec[i] - prev) * env[i];
            prev = rec[i];
        }
        return ap;
    }
    double acc = 0.0;
    for (int t = 0; t <= 100; ++t) {
        const double level = t / 100.0;
        double p = 0.0;
        for (std::size_t i = 0; i < rec.size(); ++i)
            if (rec[i] >= level) {
                p = env[i];
                break;
            }
        acc += p;
    }
    return acc / 101.0;
}

// ---------------------------------------------------------------------------
// Full evaluation
// ---------------------------------------------------------------------------

struct ClassEntry {
    int id = 0;
    std::string name;
};

struct PrPoint {
    double recall = 0, precision = 0;
};

struct ClassMetrics {
    int class_id = 0;
    std::string name;
    std::size_t tp = 0, fp = 0, fn = 0;
    double precision = 0, recall = 0, ap = 0;
    std::vector<PrPoint> curve;
};

struct EvalReport {
    std::vector<ClassMetrics> per_class;  // in class-table order
    std::size_t tp = 0, fp = 0, fn = 0;   // pooled counts
    double precision_pooled = 0, recall_pooled = 0;
    double precision_mean = 0, recall_mean = 0;  // class-averaged
    double map = 0;
    std::vector<std::string> warnings;
};

inline EvalReport evaluate(const std::vector<DetBox>& dets,
                           const std::vector<GtBox>& gts,
                           const std::vector<ClassEntry>& classes,
                           double iou_thr, ApMode ap_mode = ApMode::all_points) {
    require(!classes.empty(), "evaluate: empty class table");
    std::set<int> known;
    for (const ClassEntry& c : classes) {
        require(known.insert(c.id).second, "evaluate: duplicate class id");
    }
    for (const DetBox& d : dets) {
        validate_det(d);
        require(known.count(d.class_id) != 0,
                "evaluate: detection references unknown class id " +
                    std::to_string(d.class_id));
    }
    for (const GtBox& g : gts) {
        validate_box(g.box);
        require(known.count(g.class_id) != 0,
                "evaluate: ground truth references unknown class id " +
                    std::to_string(g.class_id));
    }

    // Group detections and ground truths by (class, image); remember each
    // detection's input index so the ranking tie-break is total.
    std::map<std::pair<int, std::string>, std::vector<std::size_t>> det_groups;
    std::map<std::pair<int, std::string>, std::vector<std::size_t>> gt_groups;
    for (std::size_t i = 0; i < dets.size(); ++i)
        det_groups[{dets[i].class_id, dets[i].image_id}].push_back(i);
    for (std::size_t i = 0; i < gts.size(); ++i)
        gt_groups[{gts[i].class_id, gts[i].image_id}].push_back(i);

    EvalReport rep;
    for (const ClassEntry& cls : classes) {
        ClassMetrics cm;
        cm.class_id = cls.id;
        cm.name = cls.name;

        // Ranked (score, tp) labels accumulated over every image.
        std::vector<std::pair<std::size_t, bool>> labels;  // (det index, tp)
        std::size_t gt_total = 0;
        std::set<std::string> images;
        for (const auto& [key, _] : det_groups)
            if (key.first == cls.id) images.insert(key.second);
        for (const auto& [key, _] : gt_groups)
            if (key.first == cls.id) images.insert(key.second);

        for (const std::string& img : images) {
            std::vector<DetBox> dsub;
            std::vector<std::size_t> didx;
            if (auto it = det_groups.find({cls.id, img}); it != det_groups.end())
                for (std::size_t i : it->second) {
                    dsub.push_back(dets[i]);
                    didx.push_back(i);
                }
            std::vector<GtBox> gsub;
            if (auto it = gt_groups.find({cls.id, img}); it != gt_groups.end())
                for (std::size_t i : it->second) gsub.push_back(gts[i]);

            const MatchResult m = match(dsub, gsub, iou_thr);
            for (std::size_t k = 0; k < dsub.size(); ++k)
                labels.emplace_back(didx[k], m.det_tp[k]);
            gt_total += gsub.size();
            for (bool hit : m.gt_matched) cm.fn += hit ? 0 : 1;
        }

        std::sort(labels.begin(), labels.end(),
                  [&](const auto& a, const auto& b) {
                      if (dets[a.first].score != dets[b.first].score)
                          return dets[a.first].score > dets[b.first].score;
                      return a.first < b.first;
                  });
        std::vector<ScoredLabel> ranked;
        for (const auto& [idx, tp] : labels) {
            ranked.push_back({dets[idx].score, tp});
            (tp ? cm.tp : cm.fp) += 1;
        }

        cm.precision = hafpn::precision(cm.tp, cm.fp);
        cm.recall = hafpn::recall(cm.tp, cm.fn);
        if (gt_total == 0)
            rep.warnings.push_back("class '" + cls.name +
                                   "' has no ground truth; ap defined as 0");
        cm.ap = average_precision(ranked, gt_total, ap_mode);
        std::size_t tp_cum = 0, fp_cum = 0;
        for (const ScoredLabel& s : ranked) {
            (s.tp ? tp_cum : fp_cum) += 1;
            cm.curve.push_back({gt_total == 0
                                    ? 0.0
                                    : static_cast<double>(tp_cum) / gt_total,
                                hafpn::precision(tp_cum, fp_cum)});
        }

        rep.tp += cm.tp;
        rep.fp += cm.fp;
        rep.fn += cm.fn;
        rep.precision_mean += cm.precision;
        rep.recall_mean += cm.recall;
        rep.map += cm.ap;
        rep.per_class.push_back(std::move(cm));
    }

    const double n = static_cast<double>(classes.size());
    rep.precision_pooled = precision(rep.tp, rep.fp);
    rep.recall_pooled = recall(rep.tp, rep.fn);
    rep.precision_mean /= n;
    rep.recall_mean /= n;
    rep.map /= n;
    return rep;
}

// ---------------------------------------------------------------------------
// Report rendering
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt6(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(6) << v;
    return os.str();
}

}  // namespace detail

// Machine-readable key=value lines with fixed key names.
inline std::string format_report_kv(const EvalReport& r) {
    std::ostringstream os;
    for (const ClassMetrics& c : r.per_class) {
        os << "tp." << c.name << "=" << c.tp << "\n";
        os << "fp." << c.name << "=" << c.fp << "\n";
        os << "fn." << c.name << "=" << c.fn << "\n";
        os << "precision." << c.name << "=" << detail::fmt6(c.precision) << "\n";
        os << "recall." << c.name << "=" << detail::fmt6(c.recall) << "\n";
        os << "ap." << c.name << "=" << detail::fmt6(c.ap) << "\n";
    }
    os << "tp.all=" << r.tp << "\n";
    os << "fp.all=" << r.fp << "\n";
    os << "fn.all=" << r.fn << "\n";
    os << "precision.all=" << detail::fmt6(r.precision_pooled) << "\n";
    os << "recall.all=" << detail::fmt6(r.recall_pooled) << "\n";
    os << "precision.mean=" << detail::fmt6(r.precision_mean) << "\n";
    os << "recall.mean=" << detail::fmt6(r.recall_mean) << "\n";
    os << "map.all=" << detail::fmt6(r.map) << "\n";
    return os.str();
}

inline std::string format_report_text(const EvalReport& r) {
    std::ostringstream os;
    os << std::left << std::setw(16) << "class" << std::right << std::setw(6)
       << "tp" << std::setw(6) << "fp" << std::setw(6) << "fn" << std::setw(12)
       << "precision" << std::setw(12) << "recall" << std::setw(12) << "ap"
       << "\n";
    for (const ClassMetrics& c : r.per_class) {
        os << std::left << std::setw(16) << c.name << std::right << std::setw(6)
           << c.tp << std::setw(6) << c.fp << std::setw(6) << c.fn
           << std::setw(12) << detail::fmt6(c.precision) << std::setw(12)
           << detail::fmt6(c.recall) << std::setw(12) << detail::fmt6(c.ap)
           << "\n";
    }
    os << std::left << std::setw(16) << "all" << std::right << std::setw(6)
       << r.tp << std::setw(6) << r.fp << std::setw(6) << r.fn << std::setw(12)
       << detail::fmt6(r.precision_pooled) << std::setw(12)
       << detail::fmt6(r.recall_pooled) << std::setw(12) << detail::fmt6(r.map)
       << "\n";
    os << "mean precision " << detail::fmt6(r.precision_mean)
       << ", mean recall " << detail::fmt6(r.recall_mean) << ", map "
       << detail::fmt6(r.map) << "\n";
    for (const std::string& w : r.warnings) os << "warning: " << w << "\n";
    return os.str();
}

}  // namespace hafpn
