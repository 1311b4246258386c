#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mstcn/errors.hpp"

namespace mstcn {

/// Maximal run of one class; `start` and `end` are inclusive frame indices.
struct Segment {
    int label = 0;
    std::size_t start = 0;
    std::size_t end = 0;

    std::size_t length() const { return end - start + 1; }
    bool operator==(const Segment&) const = default;
};

inline std::vector<Segment> segments_from_labels(const std::vector<int>& labels) {
    std::vector<Segment> segs;
    for (std::size_t t = 0; t < labels.size(); ++t) {
        if (segs.empty() || segs.back().label != labels[t]) {
            segs.push_back({labels[t], t, t});
        } else {
            segs.back().end = t;
        }
    }
    return segs;
}

/// Percentage of frames whose predicted class equals ground truth.
inline double framewise_accuracy(const std::vector<int>& truth, const std::vector<int>& pred) {
    if (truth.size() != pred.size()) {
        throw ShapeError("accuracy: sequences have different lengths (" +
                         std::to_string(truth.size()) + " vs " + std::to_string(pred.size()) + ")");
    }
    if (truth.empty()) throw DomainError("accuracy: empty sequences");
    std::size_t hits = 0;
    for (std::size_t t = 0; t < truth.size(); ++t) {
        if (truth[t] == pred[t]) ++hits;
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(truth.size());
}

/// Plain edit distance (insert/delete/substitute, unit costs) over label
/// sequences, two-row dynamic programme.
inline std::size_t levenshtein(const std::vector<int>& a, const std::vector<int>& b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

namespace detail {

inline std::vector<int> segment_labels(const std::vector<Segment>& segs,
                                       const std::set<int>& exclude) {
    std::vector<int> out;
    for (const Segment& s : segs) {
        if (!exclude.count(s.label)) out.push_back(s.label);
    }
    return out;
}

inline std::vector<Segment> filtered(const std::vector<Segment>& segs,
                                     const std::set<int>& exclude) {
    std::vector<Segment> out;
    for (const Segment& s : segs) {
        if (!exclude.count(s.label)) out.push_back(s);
    }
    return out;
}

} // namespace detail

/// Segmental edit score: 100 * (1 - distance / max length) over the ordered
/// segment label sequences. Two empty sequences score 100.
inline double segmental_edit_score(const std::vector<Segment>& truth,
                                   const std::vector<Segment>& pred,
                                   const std::set<int>& exclude = {}) {
    std::vector<int> a = detail::segment_labels(truth, exclude);
    std::vector<int> b = detail::segment_labels(pred, exclude);
    std::size_t longest = std::max(a.size(), b.size());
    if (longest == 0) return 100.0;
    double dist = static_cast<double>(levenshtein(a, b));
    return 100.0 * (1.0 - dist / static_cast<double>(longest));
}

/// Intersection over union of two inclusive frame intervals (the union is
/// the spanning interval, which only matters when the intersection is
/// empty and the ratio is 0 anyway).
inline double segment_iou(const Segment& a, const Segment& b) {
    long long inter = static_cast<long long>(std::min(a.end, b.end)) -
                      static_cast<long long>(std::max(a.start, b.start)) + 1;
    if (inter < 0) inter = 0;
    long long hull = static_cast<long long>(std::max(a.end, b.end)) -
                     static_cast<long long>(std::min(a.start, b.start)) + 1;
    return static_cast<double>(inter) / static_cast<double>(hull);
}

struct MatchCounts {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
};

/// Greedy segment matching at one overlap threshold. Each prediction, in
/// temporal order, claims its highest-IoU same-label ground-truth segment;
/// the claim counts when the overlap strictly exceeds the threshold and the
/// target is unclaimed. Unclaimed ground-truth segments are false negatives.
inline MatchCounts match_segments(const std::vector<Segment>& truth,
                                  const std::vector<Segment>& pred, double threshold,
                                  const std::set<int>& exclude = {}) {
    if (!(threshold >= 0.0 && threshold < 1.0)) {
        throw DomainError("overlap threshold must lie in [0, 1)");
    }
    std::vector<Segment> gt = detail::filtered(truth, exclude);
    std::vector<Segment> pr = detail::filtered(pred, exclude);
    std::vector<bool> used(gt.size(), false);
    MatchCounts out;
    for (const Segment& p : pr) {
        double best = -1.0;
        std::size_t best_idx = gt.size();
        for (std::size_t j = 0; j < gt.size(); ++j) {
            if (gt[j].label != p.label) continue;
            double iou = segment_iou(p, gt[j]);
            if (iou > best) {
                best = iou;
                best_idx = j;
            }
        }
        if (best_idx < gt.size() && best > threshold && !used[best_idx]) {
            used[best_idx] = true;
            ++out.tp;
        } else {
            ++out.fp;
        }
    }
    for (bool u : used) {
        if (!u) ++out.fn;
    }
    return out;
}

inline double f1_from_counts(const MatchCounts& c) {
    if (c.tp == 0 && c.fp == 0 && c.fn == 0) return 100.0;
    double tp = static_cast<double>(c.tp);
    double denom_p = tp + static_cast<double>(c.fp);
    double denom_r = tp + static_cast<double>(c.fn);
    double precision = denom_p > 0.0 ? tp / denom_p : 0.0;
    double recall = denom_r > 0.0 ? tp / denom_r : 0.0;
    if (precision + recall == 0.0) return 0.0;
    return 100.0 * 2.0 * precision * recall / (precision + recall);
}

inline double f1_at_overlap(const std::vector<Segment>& truth, const std::vector<Segment>& pred,
                            double threshold, const std::set<int>& exclude = {}) {
    return f1_from_counts(match_segments(truth, pred, threshold, exclude));
}

struct EvalOptions {
    std::vector<double> thresholds = {0.10, 0.25, 0.50};
    std::set<int> exclude_classes;
};

/// Per-video evaluation record. Match counts are kept raw so that corpus
/// scores can pool them; accuracy and edit are averaged per video instead.
struct EvalReport {
    std::size_t videos = 0;
    std::size_t frames = 0;
    double accuracy = 0.0; // mean over videos, percent
    double edit = 0.0;     // mean over videos, percent
    double mean_pred_segments = 0.0;
    double mean_truth_segments = 0.0;
    std::vector<double> thresholds;
    std::vector<MatchCounts> counts; // pooled, one per threshold

    double f1(std::size_t idx) const { return f1_from_counts(counts.at(idx)); }
};

inline EvalReport evaluate_video(const std::vector<int>& truth, const std::vector<int>& pred,
                                 const EvalOptions& options = {}) {
    EvalReport r;
    r.videos = 1;
    r.frames = truth.size();
    r.accuracy = framewise_accuracy(truth, pred);
    std::vector<Segment> gt = segments_from_labels(truth);
    std::vector<Segment> pr = segments_from_labels(pred);
    r.edit = segmental_edit_score(gt, pr, options.exclude_classes);
    r.mean_pred_segments = static_cast<double>(detail::filtered(pr, options.exclude_classes).size());
    r.mean_truth_segments = static_cast<double>(detail::filtered(gt, options.exclude_classes).size());
    r.thresholds = options.thresholds;
    for (double thr : options.thresholds) {
        r.counts.push_back(match_segments(gt, pr, thr, options.exclude_classes));
    }
    return r;
}

/// Combine per-video reports: accuracies and edit scores average, match
/// counts pool.
inline EvalReport aggregate_reports(const std::vector<EvalReport>& reports) {
    if (reports.empty()) throw DomainError("aggregate: no reports");
    EvalReport out;
    out.thresholds = reports.front().thresholds;
    out.counts.assign(out.thresholds.size(), MatchCounts{});
    for (const EvalReport& r : reports) {
        if (r.thresholds != out.thresholds) {
            throw DomainError("aggregate: reports use different threshold lists");
        }
        out.videos += r.videos;
        out.frames += r.frames;
        double w = static_cast<double>(r.videos);
        out.accuracy += w * r.accuracy;
        out.edit += w * r.edit;
        out.mean_pred_segments += w * r.mean_pred_segments;
        out.mean_truth_segments += w * r.mean_truth_segments;
        for (std::size_t i = 0; i < out.counts.size(); ++i) {
            out.counts[i].tp += r.counts[i].tp;
            out.counts[i].fp += r.counts[i].fp;
            out.counts[i].fn += r.counts[i].fn;
        }
    }
    double n = static_cast<double>(out.videos);
    out.accuracy /= n;
    out.edit /= n;
    out.mean_pred_segments /= n;
    out.mean_truth_segments /= n;
    return out;
}

inline std::string report_to_text(const EvalReport& r) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(2);
    os << "videos:            " << r.videos << "\n";
    os << "frames:            " << r.frames << "\n";
    os << "frame accuracy:    " << r.accuracy << "\n";
    os << "segmental edit:    " << r.edit << "\n";
    for (std::size_t i = 0; i < r.thresholds.size(); ++i) {
        os << "F1@" << static_cast<int>(r.thresholds[i] * 100.0 + 0.5) << ":             "
           << r.f1(i) << "  (tp " << r.counts[i].tp << ", fp " << r.counts[i].fp << ", fn "
           << r.counts[i].fn << ")\n";
    }
    os << "segments/video:    " << r.mean_pred_segments << " predicted, " << r.mean_truth_segments
       << " true\n";
    return os.str();
}

/// Machine-readable `key=value` form used by the CLI's report.kv output.
inline std::string report_to_kv(const EvalReport& r) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(6);
    os << "videos=" << r.videos << "\n";
    os << "frames=" << r.frames << "\n";
    os << "accuracy=" << r.accuracy << "\n";
    os << "edit=" << r.edit << "\n";
    for (std::size_t i = 0; i < r.thresholds.size(); ++i) {
        int pct = static_cast<int>(r.thresholds[i] * 100.0 + 0.5);
        os << "f1@" << pct << "=" << r.f1(i) << "\n";
        os << "tp@" << pct << "=" << r.counts[i].tp << "\n";
        os << "fp@" << pct << "=" << r.counts[i].fp << "\n";
        os << "fn@" << pct << "=" << r.counts[i].fn << "\n";
    }
    os << "pred_segments_per_video=" << r.mean_pred_segments << "\n";
    os << "truth_segments_per_video=" << r.mean_truth_segments << "\n";
    return os.str();
}

} // namespace mstcn
