#include <doctest.h>

#include <stdexcept>
#include <vector>

#include "celladapt/matching.hpp"
#include "celladapt/rng.hpp"
#include "support/matching_oracle.hpp"

using namespace celladapt;

namespace {

std::vector<Point> random_points(Rng& rng, int max_n, float span) {
    const int n = rng.uniform_int(0, max_n);
    std::vector<Point> pts;
    for (int i = 0; i < n; ++i)
        pts.push_back({static_cast<float>(rng.uniform(0.0, span)),
                       static_cast<float>(rng.uniform(0.0, span))});
    return pts;
}

} // namespace

TEST_CASE("match_detections: identical sets match perfectly") {
    const std::vector<Point> pts{{3, 4}, {50, 60}, {90, 10}};
    const MatchReport r = match_detections(pts, pts, 10.0f);
    CHECK(r.tp == 3);
    CHECK(r.fp == 0);
    CHECK(r.fn == 0);
    CHECK(r.f_score == doctest::Approx(1.0));
    CHECK(r.matched_pairs.size() == 3);
}

TEST_CASE("match_detections: two of three ground truths found gives F = 0.8") {
    const std::vector<Point> pred{{10, 10}, {50, 50}};
    const std::vector<Point> gt{{10, 11}, {50, 51}, {90, 90}};
    const MatchReport r = match_detections(pred, gt, 10.0f);
    CHECK(r.tp == 2);
    CHECK(r.fp == 0);
    CHECK(r.fn == 1);
    CHECK(r.precision == doctest::Approx(1.0));
    CHECK(r.recall == doctest::Approx(2.0 / 3.0));
    CHECK(r.f_score == doctest::Approx(0.8));
}

TEST_CASE("match_detections: two predictions near one ground truth") {
    const std::vector<Point> pred{{10, 10}, {12, 10}};
    const std::vector<Point> gt{{11, 10}};
    const MatchReport r = match_detections(pred, gt, 10.0f);
    CHECK(r.tp == 1);
    CHECK(r.fp == 1);
    CHECK(r.fn == 0);
}

TEST_CASE("match_detections: empty sides and the zero conventions") {
    const std::vector<Point> none;
    const std::vector<Point> some{{5, 5}};
    MatchReport r = match_detections(none, some, 10.0f);
    CHECK(r.tp == 0);
    CHECK(r.fn == 1);
    CHECK(r.precision == 0.0);
    CHECK(r.recall == 0.0);
    CHECK(r.f_score == 0.0);
    r = match_detections(some, none, 10.0f);
    CHECK(r.fp == 1);
    CHECK(r.f_score == 0.0);
    r = match_detections(none, none, 10.0f);
    CHECK(r.f_score == 0.0);
    CHECK_THROWS_AS(match_detections(some, some, 0.0f), std::invalid_argument);
}

TEST_CASE("match_detections: agrees with brute force on random instances") {
    Rng rng(101);
    for (int trial = 0; trial < 300; ++trial) {
        const auto pred = random_points(rng, 6, 40.0);
        const auto gt = random_points(rng, 6, 40.0);
        const float d_match = static_cast<float>(rng.uniform(2.0, 15.0));
        const MatchReport r = match_detections(pred, gt, d_match);
        const auto oracle = test::brute_force_match(pred, gt, d_match);
        CHECK(r.tp == oracle.tp);
        CHECK(r.fp == static_cast<long long>(pred.size()) - oracle.tp);
        CHECK(r.fn == static_cast<long long>(gt.size()) - oracle.tp);
        double total = 0.0;
        for (const MatchedPair& mp : r.matched_pairs) {
            CHECK(mp.dist <= d_match);
            total += mp.dist;
        }
        CHECK(total == doctest::Approx(oracle.total_dist).epsilon(1e-4));
    }
}

TEST_CASE("match_detections: counting identities, symmetry, monotonicity") {
    Rng rng(202);
    for (int trial = 0; trial < 100; ++trial) {
        const auto pred = random_points(rng, 8, 60.0);
        const auto gt = random_points(rng, 8, 60.0);
        const MatchReport r = match_detections(pred, gt, 8.0f);
        CHECK(r.tp + r.fp == static_cast<long long>(pred.size()));
        CHECK(r.tp + r.fn == static_cast<long long>(gt.size()));

        const MatchReport s = match_detections(gt, pred, 8.0f);
        CHECK(s.tp == r.tp);
        CHECK(s.fp == r.fn);
        CHECK(s.fn == r.fp);

        long long prev_tp = -1;
        for (float d : {2.0f, 5.0f, 10.0f, 20.0f, 50.0f}) {
            const MatchReport m = match_detections(pred, gt, d);
            CHECK(m.tp >= prev_tp);
            prev_tp = m.tp;
        }
    }
}

TEST_CASE("match_detections: prefers the lower-distance assignment among maximal ones") {
    // Both predictions can reach both ground truths; the optimal pairing is
    // the diagonal one (total distance 2), not the crossed one (total 26).
    const std::vector<Point> pred{{0, 0}, {10, 0}};
    const std::vector<Point> gt{{1, 0}, {11, 0}};
    const MatchReport r = match_detections(pred, gt, 15.0f);
    REQUIRE(r.tp == 2);
    for (const MatchedPair& mp : r.matched_pairs) CHECK(mp.dist == doctest::Approx(1.0));
}
