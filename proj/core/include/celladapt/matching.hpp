#pragma once

#include <span>
#include <vector>

#include "celladapt/geometry.hpp"

namespace celladapt {

struct MatchedPair {
    int pred_idx = -1;
    int gt_idx = -1;
    float dist = 0.0f;
};

/// One-to-one proximity matching counts. precision/recall/f use the
/// 0-when-denominator-0 convention.
struct MatchReport {
    long long tp = 0;
    long long fp = 0;
    long long fn = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f_score = 0.0;
    std::vector<MatchedPair> matched_pairs;
};

/// Recompute precision/recall/f from the counts (micro-average step).
void finalize_rates(MatchReport& report);

/// Optimal one-to-one matching restricted to pairs with distance <= d_match:
/// maximizes the number of matches, then minimizes total distance.
MatchReport match_detections(std::span<const Point> pred, std::span<const Point> gt,
                             float d_match);

} // namespace celladapt
