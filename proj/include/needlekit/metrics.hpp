#pragma once

#include <optional>

#include "needlekit/types.hpp"

namespace needlekit {

struct NeedleErrors {
    double tip_mm = 0.0;
    double bottom_mm = 0.0;
    double shaft_mm = 0.0;
};

struct MatchedPair {
    int pred_index;
    int ref_index;
    NeedleErrors errors;
};

struct Matching {
    std::vector<MatchedPair> pairs;
    std::vector<int> unmatched_preds;  // false positives
    std::vector<int> unmatched_refs;   // false negatives
    double total_cost = 0.0;           // summed shaft error of matched pairs
};

struct Stats {
    std::optional<double> median;
    std::optional<double> iqr;  // Q3 - Q1, linear-interpolation quantiles
};

struct EvalReport {
    std::vector<MatchedPair> pairs;
    Stats tip, bottom, shaft;
    int nf = 0;     // matched needles
    int nseb1 = 0;  // shaft error > 1 mm
    int nseb2 = 0;  // shaft error > 2 mm
    int fp = 0;
    int fn = 0;
};

/// Errors between index-paired samples of 100 equidistant points: shaft is
/// the mean 3D distance, tip the last pair, bottom the first.
NeedleErrors needle_errors(const Trajectory& pred, const Trajectory& ref);

/// Minimum-total-cost one-to-one assignment on the shaft-error matrix
/// (Kuhn-Munkres); matched pairs with shaft error above the gate become
/// FP + FN instead.
Matching match_needles(const std::vector<Trajectory>& preds,
                       const std::vector<Trajectory>& refs, double gate_mm = 10.0);

EvalReport aggregate(const std::vector<MatchedPair>& pairs, int fp, int fn);

EvalReport evaluate(const std::vector<Trajectory>& preds,
                    const std::vector<Trajectory>& refs, double gate_mm = 10.0);

}  // namespace needlekit
