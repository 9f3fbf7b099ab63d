#pragma once

// Brute-force reference for monotonic_align, used by tests only. Enumerates
// every monotone partition of the two sequences into blocks that are
// non-empty on both sides, and minimizes (number of non-matching blocks,
// then their total span width). A 1:1 block whose normalized tokens are
// equal costs nothing. Tracks whether the optimum is unique.

#include <cstdint>
#include <utility>
#include <vector>

#include "aspectnmt/align.hpp"

namespace aspectnmt::testutil {

struct OracleResult {
    Alignment alignment; // one optimal partition (the unique one if `unique`)
    bool unique = false;
};

inline OracleResult oracle_align(const std::vector<std::string>& a,
                                 const std::vector<std::string>& b) {
    OracleResult res;
    const int m = static_cast<int>(a.size()), n = static_cast<int>(b.size());
    if (m == 0 && n == 0) {
        res.unique = true;
        return res;
    }
    if (m == 0 || n == 0) {
        res.alignment.blocks.push_back({0, m, 0, n});
        res.unique = true;
        return res;
    }
    std::vector<std::string> na(m), nb(n);
    for (int i = 0; i < m; ++i) na[i] = normalize_for_match(a[i]);
    for (int j = 0; j < n; ++j) nb[j] = normalize_for_match(b[j]);

    using Cost = std::pair<int, int>;
    const Cost inf{1 << 20, 1 << 20};
    // dp[i][j]: best cost to align a[0,i) with b[0,j); ways capped at 2
    std::vector<std::vector<Cost>> dp(m + 1, std::vector<Cost>(n + 1, inf));
    std::vector<std::vector<int>> ways(m + 1, std::vector<int>(n + 1, 0));
    dp[0][0] = {0, 0};
    ways[0][0] = 1;
    auto block_cost = [&](int i0, int i1, int j0, int j1) -> Cost {
        if (i1 - i0 == 1 && j1 - j0 == 1 && na[i0] == nb[j0]) return {0, 0};
        return {1, (i1 - i0) + (j1 - j0)};
    };
    for (int i = 0; i <= m; ++i)
        for (int j = 0; j <= n; ++j) {
            if (ways[i][j] == 0) continue;
            for (int i2 = i + 1; i2 <= m; ++i2)
                for (int j2 = j + 1; j2 <= n; ++j2) {
                    Cost c = block_cost(i, i2, j, j2);
                    Cost total{dp[i][j].first + c.first, dp[i][j].second + c.second};
                    if (total < dp[i2][j2]) {
                        dp[i2][j2] = total;
                        ways[i2][j2] = ways[i][j];
                    } else if (total == dp[i2][j2]) {
                        ways[i2][j2] = std::min(2, ways[i2][j2] + ways[i][j]);
                    }
                }
        }
    res.unique = ways[m][n] == 1;

    // Walk back along optimal predecessors; unique by construction when
    // ways[m][n] == 1, and an arbitrary optimal path otherwise.
    std::vector<AlignmentBlock> rev;
    int i = m, j = n;
    while (i > 0 || j > 0) {
        bool stepped = false;
        for (int i0 = 0; i0 < i && !stepped; ++i0)
            for (int j0 = 0; j0 < j && !stepped; ++j0) {
                if (ways[i0][j0] == 0) continue;
                Cost c = block_cost(i0, i, j0, j);
                if (Cost{dp[i0][j0].first + c.first, dp[i0][j0].second + c.second} ==
                    dp[i][j]) {
                    rev.push_back({i0, i, j0, j});
                    i = i0;
                    j = j0;
                    stepped = true;
                }
            }
        if (!stepped) break; // unreachable for well-formed dp
    }
    res.alignment.blocks.assign(rev.rbegin(), rev.rend());
    return res;
}

} // namespace aspectnmt::testutil
