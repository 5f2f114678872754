#include <doctest.h>

#include <stdexcept>
#include <algorithm>
#include <cmath>
#include <set>

#include "celladapt/heatmap.hpp"
#include "celladapt/rng.hpp"

using namespace celladapt;

namespace {

// Independent oracle: brute-force scan for strict 8-neighborhood maxima at
// a given level.
std::vector<Point> scan_local_maxima(const Image& g, float level) {
    std::vector<Point> out;
    for (int y = 0; y < g.height; ++y)
        for (int x = 0; x < g.width; ++x) {
            const float v = g.at(y, x);
            if (std::abs(v - level) > 1e-3f) continue;
            bool top = true;
            for (int dy = -1; dy <= 1 && top; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dy == 0 && dx == 0) continue;
                    const int qy = y + dy, qx = x + dx;
                    if (qy < 0 || qy >= g.height || qx < 0 || qx >= g.width) continue;
                    if (g.at(qy, qx) >= v) {
                        top = false;
                        break;
                    }
                }
            if (top) out.push_back({float(x), float(y)});
        }
    return out;
}

std::vector<Point> random_separated_points(Rng& rng, int n, int hw, float min_sep,
                                           float border) {
    std::vector<Point> pts;
    while (static_cast<int>(pts.size()) < n) {
        Point c{static_cast<float>(rng.uniform(border, hw - 1 - border)),
                static_cast<float>(rng.uniform(border, hw - 1 - border))};
        bool ok = true;
        for (const Point& p : pts)
            if (distance(p, c) < min_sep) {
                ok = false;
                break;
            }
        if (ok) pts.push_back(c);
    }
    return pts;
}

} // namespace

TEST_CASE("encode_points: empty set gives an all-zero map") {
    const PositionHeatmap hm = encode_points({}, 128, 128, 6.0f, 255.0f);
    CHECK(hm.grid.height == 128);
    CHECK(hm.grid.width == 128);
    CHECK(*std::max_element(hm.grid.data.begin(), hm.grid.data.end()) == 0.0f);
}

TEST_CASE("encode_points: single Gaussian has the closed-form profile") {
    const std::vector<Point> pts{{64, 64}};
    const PositionHeatmap hm = encode_points(pts, 128, 128, 6.0f, 255.0f);
    CHECK(hm.grid.at(64, 64) == doctest::Approx(255.0).epsilon(1e-6));
    // one sigma to the right: 255 * exp(-36 / 72)
    CHECK(hm.grid.at(64, 70) == doctest::Approx(255.0 * std::exp(-0.5)).epsilon(1e-5));
    CHECK(hm.grid.at(64, 70) == doctest::Approx(154.6653).epsilon(1e-4));
    for (float v : hm.grid.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 255.0f);
    }
}

TEST_CASE("encode_points: two points give exactly two amplitude maxima") {
    const std::vector<Point> pts{{30, 30}, {90, 90}};
    const PositionHeatmap hm = encode_points(pts, 128, 128, 6.0f, 255.0f);
    const auto maxima = scan_local_maxima(hm.grid, 255.0f);
    REQUIRE(maxima.size() == 2);
    CHECK(maxima[0] == Point{30, 30});
    CHECK(maxima[1] == Point{90, 90});
}

TEST_CASE("encode_points: parameter and bounds errors") {
    const std::vector<Point> bad{{10, 10}, {200, 50}};
    CHECK_THROWS_WITH_AS(encode_points(bad, 128, 128, 6.0f, 255.0f),
                         doctest::Contains("point 1"), std::invalid_argument);
    const std::vector<Point> ok{{10, 10}};
    CHECK_THROWS_AS(encode_points(ok, 128, 128, 0.0f, 255.0f), std::invalid_argument);
    CHECK_THROWS_AS(encode_points(ok, 128, 128, -1.0f, 255.0f), std::invalid_argument);
    CHECK_THROWS_AS(encode_points(ok, 128, 128, 6.0f, 0.0f), std::invalid_argument);
    CHECK_THROWS_AS(encode_points(ok, 128, 128, 6.0f, 300.0f), std::invalid_argument);
}

TEST_CASE("detect_peaks: basic thresholding") {
    const PositionHeatmap zero = encode_points({}, 128, 128, 6.0f, 255.0f);
    CHECK(detect_peaks(zero, 100.0f, 6).empty());

    const std::vector<Point> pts{{64, 64}};
    const PositionHeatmap bright = encode_points(pts, 128, 128, 6.0f, 255.0f);
    const auto found = detect_peaks(bright, 100.0f, 6);
    REQUIRE(found.size() == 1);
    CHECK(found[0] == Point{64, 64});

    const PositionHeatmap dim = encode_points(pts, 128, 128, 6.0f, 90.0f);
    CHECK(detect_peaks(dim, 100.0f, 6).empty());
}

TEST_CASE("detect_peaks: plateau tie breaks to the raster-smallest pixel") {
    PositionHeatmap hm;
    hm.grid = Image(32, 32, 0.0f);
    hm.grid.at(10, 10) = 200.0f;
    hm.grid.at(10, 12) = 200.0f; // same plateau value within the window
    const auto found = detect_peaks(hm, 100.0f, 6);
    REQUIRE(found.size() == 1);
    CHECK(found[0] == Point{10, 10});
}

TEST_CASE("detect_peaks: round-trip recovers pixel-rounded inputs") {
    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = rng.uniform_int(1, 10);
        const auto pts = random_separated_points(rng, n, 128, 24.0f, 18.0f);
        const PositionHeatmap hm = encode_points(pts, 128, 128, 6.0f, 255.0f);
        const auto got = detect_peaks(hm, 100.0f, 6);
        REQUIRE(got.size() == pts.size());
        std::set<std::pair<int, int>> expect, found;
        for (const Point& p : pts)
            expect.insert({int(std::lround(p.y)), int(std::lround(p.x))});
        for (const Point& p : got) found.insert({int(p.y), int(p.x)});
        CHECK(expect == found);
    }
}

TEST_CASE("detect_peaks: raising th_d never adds peaks") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const auto pts = random_separated_points(rng, 6, 128, 13.0f, 3.0f);
        PositionHeatmap hm = encode_points(pts, 128, 128, 6.0f, 255.0f);
        for (float& v : hm.grid.data)
            v = std::clamp(v + static_cast<float>(rng.uniform(-20.0, 20.0)), 0.0f, 255.0f);
        std::size_t prev = SIZE_MAX;
        for (float th : {20.0f, 60.0f, 100.0f, 140.0f, 180.0f, 220.0f}) {
            const std::size_t n = detect_peaks(hm, th, 6).size();
            CHECK(n <= prev);
            prev = n;
        }
    }
}

TEST_CASE("regenerate: cleans a distorted map down to its peaks") {
    // Gaussian at (40,40) plus a clipped intensity ramp <= 80 (below th_d
    // on its own); amplitude 150 keeps the sum unsaturated near the peak.
    const std::vector<Point> pts{{40, 40}};
    PositionHeatmap distorted = encode_points(pts, 128, 128, 6.0f, 150.0f);
    for (int y = 0; y < 128; ++y)
        for (int x = 0; x < 128; ++x)
            distorted.grid.at(y, x) =
                std::min(255.0f, distorted.grid.at(y, x) + 80.0f * x / 127.0f);

    const auto peaks = detect_peaks(distorted, 100.0f, 6);
    REQUIRE(peaks.size() == 1);
    CHECK(peaks[0] == Point{40, 40});

    const PositionHeatmap clean = regenerate(distorted, 100.0f, 6, 6.0f, 255.0f);
    const PositionHeatmap expect = encode_points(peaks, 128, 128, 6.0f, 255.0f);
    CHECK(clean.grid == expect.grid);
}

TEST_CASE("regenerate: identity on clean maps and idempotent on noisy ones") {
    Rng rng(23);
    auto pts = random_separated_points(rng, 5, 128, 24.0f, 18.0f);
    for (Point& p : pts) p = rounded(p); // identity needs pixel-aligned peaks
    const PositionHeatmap clean = encode_points(pts, 128, 128, 6.0f, 255.0f);
    const PositionHeatmap once = regenerate(clean, 100.0f, 6, 6.0f, 255.0f);
    CHECK(once.grid == clean.grid);

    for (int trial = 0; trial < 10; ++trial) {
        const auto p2 = random_separated_points(rng, 4, 128, 24.0f, 18.0f);
        PositionHeatmap noisy = encode_points(p2, 128, 128, 6.0f, 255.0f);
        for (float& v : noisy.grid.data)
            v = std::clamp(v + static_cast<float>(rng.uniform(0.0, 40.0)), 0.0f, 255.0f);
        const PositionHeatmap r1 = regenerate(noisy, 100.0f, 6, 6.0f, 255.0f);
        const PositionHeatmap r2 = regenerate(r1, 100.0f, 6, 6.0f, 255.0f);
        CHECK(r1.grid == r2.grid);
    }
}

TEST_CASE("corrupt: remove drops peaks, down to the empty map") {
    const std::vector<Point> pts{{64, 64}};
    CorruptionSpec spec;
    spec.mode = CorruptionMode::Remove;
    spec.count = 1;
    const Corruption c = corrupt(pts, 128, 128, spec, 6.0f, 255.0f, 5);
    CHECK(c.points.empty());
    CHECK(*std::max_element(c.heatmap.grid.data.begin(), c.heatmap.grid.data.end()) == 0.0f);
}

TEST_CASE("corrupt: shift moves the peak by a distance in range") {
    const std::vector<Point> pts{{64, 64}};
    CorruptionSpec spec;
    spec.mode = CorruptionMode::Shift;
    spec.count = 1;
    spec.shift_min = 12.0f;
    spec.shift_max = 24.0f;
    for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
        const Corruption c = corrupt(pts, 128, 128, spec, 6.0f, 255.0f, seed);
        const auto peaks = detect_peaks(c.heatmap, 100.0f, 6);
        REQUIRE(peaks.size() == 1);
        const float d = distance(peaks[0], pts[0]);
        CHECK(d >= 11.0f); // one pixel of rounding slack
        CHECK(d <= 25.0f);
    }
}

TEST_CASE("corrupt: add yields extra well-separated peaks") {
    const std::vector<Point> pts{{30, 30}};
    CorruptionSpec spec;
    spec.mode = CorruptionMode::Add;
    spec.count = 2;
    const Corruption c = corrupt(pts, 128, 128, spec, 6.0f, 255.0f, 9);
    const auto peaks = detect_peaks(c.heatmap, 100.0f, 6);
    REQUIRE(peaks.size() == 3);
    for (std::size_t i = 0; i < peaks.size(); ++i)
        for (std::size_t j = i + 1; j < peaks.size(); ++j)
            CHECK(distance(peaks[i], peaks[j]) >= 11.0f);
}

TEST_CASE("corrupt: deterministic per seed and always a different point set") {
    Rng rng(31);
    const auto pts = random_separated_points(rng, 4, 128, 24.0f, 18.0f);
    for (auto mode : {CorruptionMode::Add, CorruptionMode::Remove, CorruptionMode::Shift}) {
        CorruptionSpec spec;
        spec.mode = mode;
        spec.count = 2;
        spec.shift_min = 12.0f;
        spec.shift_max = 24.0f;
        const Corruption a = corrupt(pts, 128, 128, spec, 6.0f, 255.0f, 77);
        const Corruption b = corrupt(pts, 128, 128, spec, 6.0f, 255.0f, 77);
        CHECK(a.points == b.points);
        CHECK(a.heatmap.grid == b.heatmap.grid);

        std::set<std::pair<int, int>> orig, got;
        for (const Point& p : pts) orig.insert({int(std::lround(p.y)), int(std::lround(p.x))});
        for (const Point& p : detect_peaks(a.heatmap, 100.0f, 6))
            got.insert({int(p.y), int(p.x)});
        CHECK(orig != got);
    }
}

TEST_CASE("corrupt: rejects invalid specs and impossible placements") {
    const std::vector<Point> one{{64, 64}};
    CorruptionSpec spec;
    spec.mode = CorruptionMode::Remove;
    spec.count = 2;
    CHECK_THROWS_AS(corrupt(one, 128, 128, spec, 6.0f, 255.0f, 1), std::invalid_argument);

    spec.mode = CorruptionMode::Shift;
    spec.count = 1;
    spec.shift_min = 5.0f; // below 2*sigma
    spec.shift_max = 24.0f;
    CHECK_THROWS_AS(corrupt(one, 128, 128, spec, 6.0f, 255.0f, 1), std::invalid_argument);

    // A 16x16 grid cannot hold many points 12px apart: placement must fail
    // with a message naming the separation constraint.
    std::vector<Point> crowd;
    for (int y = 2; y < 16; y += 6)
        for (int x = 2; x < 16; x += 6) crowd.push_back({float(x), float(y)});
    CorruptionSpec add;
    add.mode = CorruptionMode::Add;
    add.count = 8;
    CHECK_THROWS_WITH_AS(corrupt(crowd, 16, 16, add, 6.0f, 255.0f, 1),
                         doctest::Contains("2*sigma"), std::runtime_error);
}
