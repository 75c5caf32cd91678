#pragma once

// Reference implementations written from the rule statements alone, using
// plain loops over std::vector so they share no code with the library.

#include <cstddef>
#include <limits>
#include <vector>

namespace hagil::test {

using Points = std::vector<std::vector<double>>;

// Greedy mean matching: at step k take the unused point that minimizes
// |mean - (sum of picks + x) / k|^2, lowest index on ties.
inline std::vector<std::size_t> herd_oracle(const Points& pts, std::size_t m) {
    const std::size_t n = pts.size(), d = pts.front().size();
    std::vector<double> mean(d, 0.0);
    for (const auto& p : pts)
        for (std::size_t j = 0; j < d; ++j) mean[j] += p[j];
    for (auto& v : mean) v /= static_cast<double>(n);

    std::vector<double> sum(d, 0.0);
    std::vector<char> taken(n, 0);
    std::vector<std::size_t> out;
    while (out.size() < m && out.size() < n) {
        const double k = static_cast<double>(out.size() + 1);
        std::size_t pick = 0;
        double pick_dist = std::numeric_limits<double>::max();
        bool found = false;
        for (std::size_t i = 0; i < n; ++i) {
            if (taken[i]) continue;
            double dist = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = mean[j] - (sum[j] + pts[i][j]) / k;
                dist += diff * diff;
            }
            if (!found || dist < pick_dist) {
                found = true;
                pick = i;
                pick_dist = dist;
            }
        }
        taken[pick] = 1;
        out.push_back(pick);
        for (std::size_t j = 0; j < d; ++j) sum[j] += pts[pick][j];
    }
    return out;
}

// Brute-force nearest mean; ties resolved towards the smaller class id.
inline int nem_oracle(const std::vector<double>& q, const Points& means, const std::vector<int>& ids) {
    int best_id = -1;
    double best = 0.0;
    for (std::size_t c = 0; c < means.size(); ++c) {
        double d2 = 0.0;
        for (std::size_t j = 0; j < q.size(); ++j) d2 += (q[j] - means[c][j]) * (q[j] - means[c][j]);
        if (best_id < 0 || d2 < best || (d2 == best && ids[c] < best_id)) {
            best = d2;
            best_id = ids[c];
        }
    }
    return best_id;
}

}  // namespace hagil::test
