#include "needlekit/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "needlekit/core.hpp"

namespace needlekit {

NeedleErrors needle_errors(const Trajectory& pred, const Trajectory& ref) {
    constexpr int n = 100;
    std::vector<Vec3> p = sample_equidistant(pred, n);
    std::vector<Vec3> r = sample_equidistant(ref, n);
    NeedleErrors e;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += (p[i] - r[i]).norm();
    e.shaft_mm = sum / n;
    e.bottom_mm = (p.front() - r.front()).norm();
    e.tip_mm = (p.back() - r.back()).norm();
    return e;
}

namespace {

// Kuhn-Munkres on a square matrix, O(n^3)
std::vector<int> hungarian(const Eigen::MatrixXd& cost) {
    const int n = static_cast<int>(cost.rows());
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, std::numeric_limits<double>::infinity());
        std::vector<bool> used(n + 1, false);
        do {
            used[j0] = true;
            int i0 = p[j0], j1 = 0;
            double delta = std::numeric_limits<double>::infinity();
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) { minv[j] = cur; way[j] = j0; }
                if (minv[j] < delta) { delta = minv[j]; j1 = j; }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) { u[p[j]] += delta; v[j] -= delta; }
                else minv[j] -= delta;
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> row_to_col(n, -1);
    for (int j = 1; j <= n; ++j)
        if (p[j] > 0) row_to_col[p[j] - 1] = j - 1;
    return row_to_col;
}

std::optional<double> quantile(std::vector<double> sorted, double q) {
    if (sorted.empty()) return std::nullopt;
    double pos = q * (sorted.size() - 1);
    std::size_t lo = static_cast<std::size_t>(pos);
    std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    double frac = pos - lo;
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

Stats stats_of(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    Stats s;
    s.median = quantile(values, 0.5);
    auto q1 = quantile(values, 0.25), q3 = quantile(values, 0.75);
    if (q1 && q3) s.iqr = *q3 - *q1;
    return s;
}

}  // namespace

Matching match_needles(const std::vector<Trajectory>& preds,
                       const std::vector<Trajectory>& refs, double gate_mm) {
    Matching m;
    const int np = static_cast<int>(preds.size());
    const int nr = static_cast<int>(refs.size());
    if (np == 0 || nr == 0) {
        for (int i = 0; i < np; ++i) m.unmatched_preds.push_back(i);
        for (int j = 0; j < nr; ++j) m.unmatched_refs.push_back(j);
        return m;
    }

    Eigen::MatrixXd shaft(np, nr);
    std::vector<std::vector<NeedleErrors>> errs(np, std::vector<NeedleErrors>(nr));
    for (int i = 0; i < np; ++i)
        for (int j = 0; j < nr; ++j) {
            errs[i][j] = needle_errors(preds[i], refs[j]);
            shaft(i, j) = errs[i][j].shaft_mm;
        }

    // pad to square; padded cells share one large constant so the real
    // min(np, nr) pairs are still chosen at minimum total cost
    const int n = std::max(np, nr);
    const double pad = shaft.maxCoeff() + 1.0;
    Eigen::MatrixXd cost = Eigen::MatrixXd::Constant(n, n, pad);
    cost.topLeftCorner(np, nr) = shaft;
    std::vector<int> row_to_col = hungarian(cost);

    std::vector<bool> ref_used(nr, false);
    for (int i = 0; i < np; ++i) {
        int j = row_to_col[i];
        if (j < nr && shaft(i, j) <= gate_mm) {
            m.pairs.push_back({i, j, errs[i][j]});
            m.total_cost += shaft(i, j);
            ref_used[j] = true;
        } else {
            m.unmatched_preds.push_back(i);
        }
    }
    for (int j = 0; j < nr; ++j)
        if (!ref_used[j]) m.unmatched_refs.push_back(j);
    return m;
}

EvalReport aggregate(const std::vector<MatchedPair>& pairs, int fp, int fn) {
    EvalReport rep;
    rep.pairs = pairs;
    rep.fp = fp;
    rep.fn = fn;
    rep.nf = static_cast<int>(pairs.size());
    std::vector<double> tips, bottoms, shafts;
    for (const auto& p : pairs) {
        tips.push_back(p.errors.tip_mm);
        bottoms.push_back(p.errors.bottom_mm);
        shafts.push_back(p.errors.shaft_mm);
        if (p.errors.shaft_mm > 1.0) ++rep.nseb1;
        if (p.errors.shaft_mm > 2.0) ++rep.nseb2;
    }
    rep.tip = stats_of(std::move(tips));
    rep.bottom = stats_of(std::move(bottoms));
    rep.shaft = stats_of(std::move(shafts));
    return rep;
}

EvalReport evaluate(const std::vector<Trajectory>& preds,
                    const std::vector<Trajectory>& refs, double gate_mm) {
    Matching m = match_needles(preds, refs, gate_mm);
    return aggregate(m.pairs, static_cast<int>(m.unmatched_preds.size()),
                     static_cast<int>(m.unmatched_refs.size()));
}

}  // namespace needlekit
