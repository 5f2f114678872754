#include "celladapt/matching.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <vector>

namespace celladapt {

void finalize_rates(MatchReport& r) {
    const long long pd = r.tp + r.fp;
    const long long gd = r.tp + r.fn;
    r.precision = pd > 0 ? static_cast<double>(r.tp) / static_cast<double>(pd) : 0.0;
    r.recall = gd > 0 ? static_cast<double>(r.tp) / static_cast<double>(gd) : 0.0;
    const double pr = r.precision + r.recall;
    r.f_score = pr > 0.0 ? 2.0 * r.precision * r.recall / pr : 0.0;
}

namespace {

// Disallowed/unmatched cost. One FORBIDDEN outweighs any feasible sum of real
// distances, so minimizing total cost first maximizes match count.
constexpr double kForbidden = 1e9;

/// Jonker-Volgenant style min-cost assignment on a square matrix (potentials
/// method, O(N^3)). Returns row_of_col: column j -> assigned row.
std::vector<int> solve_assignment(const std::vector<std::vector<double>>& a) {
    const int n = static_cast<int>(a.size());
    const double inf = std::numeric_limits<double>::max() / 4.0;
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);

    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            int j1 = 0;
            double delta = inf;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = a[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    return p; // p[j] = row assigned to column j (1-indexed)
}

} // namespace

MatchReport match_detections(std::span<const Point> pred, std::span<const Point> gt,
                             float d_match) {
    if (!(d_match > 0.0f))
        throw std::invalid_argument("match_detections: d_match must be positive");

    MatchReport r;
    const int np = static_cast<int>(pred.size());
    const int ng = static_cast<int>(gt.size());

    if (np == 0 || ng == 0) {
        r.tp = 0;
        r.fp = np;
        r.fn = ng;
        finalize_rates(r);
        return r;
    }

    // Square matrix padded with free dummy rows / forbidden dummy columns so
    // that real predictions can only match real ground truth within d_match.
    const int n = std::max(np, ng);
    std::vector<std::vector<double>> a(static_cast<std::size_t>(n),
                                       std::vector<double>(static_cast<std::size_t>(n)));
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i < np) {
                const double d = (j < ng) ? static_cast<double>(distance(pred[i], gt[j]))
                                          : kForbidden;
                a[i][j] = (j < ng && d <= static_cast<double>(d_match)) ? d : kForbidden;
            } else {
                a[i][j] = 0.0;
            }
        }
    }

    const std::vector<int> row_of_col = solve_assignment(a);
    for (int j = 1; j <= n; ++j) {
        const int i = row_of_col[j] - 1;
        const int c = j - 1;
        if (i < np && c < ng && a[i][c] < kForbidden / 2.0)
            r.matched_pairs.push_back({i, c, static_cast<float>(a[i][c])});
    }
    std::sort(r.matched_pairs.begin(), r.matched_pairs.end(),
              [](const MatchedPair& x, const MatchedPair& y) { return x.pred_idx < y.pred_idx; });

    r.tp = static_cast<long long>(r.matched_pairs.size());
    r.fp = np - r.tp;
    r.fn = ng - r.tp;
    finalize_rates(r);
    return r;
}

} // namespace celladapt
