#pragma once

#include <cmath>

namespace celladapt {

/// 2-D position in pixel coordinates: x is the column, y the row.
/// Annotations are real-valued; detected peaks carry integral values.
struct Point {
    float x = 0.0f;
    float y = 0.0f;

    friend bool operator==(const Point&, const Point&) = default;
};

inline float squared_distance(Point a, Point b) {
    const float dx = a.x - b.x;
    const float dy = a.y - b.y;
    return dx * dx + dy * dy;
}

inline float distance(Point a, Point b) {
    return std::sqrt(squared_distance(a, b));
}

/// Raster order: by row first, then column. Detections are reported in
/// this order and it breaks plateau ties in peak detection.
inline bool raster_less(Point a, Point b) {
    return a.y < b.y || (a.y == b.y && a.x < b.x);
}

inline Point rounded(Point p) {
    return {std::round(p.x), std::round(p.y)};
}

} // namespace celladapt
