#include "aspectnmt/align.hpp"

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "aspectnmt/errors.hpp"

namespace aspectnmt {

std::string normalize_for_match(const std::string& token) {
    std::string s = token;
    if (s.size() > 2 && s[0] == '#' && s[1] == '#') s = s.substr(2);
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        unsigned char c = static_cast<unsigned char>(s[i]);
        if (c >= 'A' && c <= 'Z') {
            out.push_back(static_cast<char>(c + 32));
        } else if (c == 0xC3 && i + 1 < s.size()) {
            // two-byte Latin-1 range: map upper-case letters to lower case,
            // skipping the multiplication sign at 0xD7
            unsigned char d = static_cast<unsigned char>(s[i + 1]);
            unsigned int cp = 0xC0u + (d & 0x3Fu);
            if ((cp >= 0xC0 && cp <= 0xD6) || (cp >= 0xD8 && cp <= 0xDE)) cp += 0x20;
            out.push_back(static_cast<char>(0xC2u | ((cp >> 6) & 1u)));
            out.push_back(static_cast<char>(0x80u | (cp & 0x3Fu)));
            ++i;
        } else {
            out.push_back(s[i]);
        }
    }
    return out;
}

namespace {

int codepoint_count(const std::string& s) {
    int n = 0;
    for (char c : s)
        if ((static_cast<unsigned char>(c) & 0xC0) != 0x80) ++n;
    return n;
}

// A stretch between anchors never contains a useful anchor itself, so it is
// emitted directly: either split where the running character counts of the two
// sides coincide (when the concatenated characters agree and both sides have
// at least two tokens), or kept as a single many-to-many block.
class GapEmitter {
public:
    GapEmitter(const std::vector<std::string>& na, const std::vector<std::string>& nb,
               std::vector<AlignmentBlock>& blocks)
        : na_(na), nb_(nb), blocks_(blocks) {}

    void emit(int a0, int a1, int b0, int b1) {
        if (a1 - a0 >= 2 && b1 - b0 >= 2 &&
            concat(na_, a0, a1) == concat(nb_, b0, b1)) {
            split(a0, a1, b0, b1);
            return;
        }
        blocks_.push_back({a0, a1, b0, b1});
    }

private:
    static std::string concat(const std::vector<std::string>& v, int lo, int hi) {
        std::string out;
        for (int i = lo; i < hi; ++i) out += v[i];
        return out;
    }

    void split(int a0, int a1, int b0, int b1) {
        int i = a0, j = b0;
        int ca = 0, cb = 0;
        int last_a = a0, last_b = b0;
        while (i < a1 || j < b1) {
            if (ca == cb && i > last_a && j > last_b && !(i == a1 && j == b1)) {
                blocks_.push_back({last_a, i, last_b, j});
                last_a = i;
                last_b = j;
            }
            if (j >= b1 || (i < a1 && ca <= cb)) {
                ca += codepoint_count(na_[i]);
                ++i;
            } else {
                cb += codepoint_count(nb_[j]);
                ++j;
            }
        }
        blocks_.push_back({last_a, a1, last_b, b1});
    }

    const std::vector<std::string>& na_;
    const std::vector<std::string>& nb_;
    std::vector<AlignmentBlock>& blocks_;
};

// Stretch classification between two consecutive anchors: -1 means one side
// would be left dangling (no anchor chain may do that), 0 means the anchors
// are adjacent, 1 means a two-sided stretch that costs one unaligned block.
int gap_kind(int da, int db) {
    if (da == 0 && db == 0) return 0;
    if (da > 0 && db > 0) return 1;
    return -1;
}

struct MatchPair {
    int i, j;
};

// Anchor selection for one pair of non-empty sequences. Candidate anchors are
// all position pairs with equal normalized tokens; the chosen chain minimizes
// the number of unaligned stretches, then maximizes the number of anchors,
// breaking remaining ties by leftmost positions. Each surviving stretch is
// handed to GapEmitter.
void align_nonempty(const std::vector<std::string>& na,
                    const std::vector<std::string>& nb,
                    std::vector<AlignmentBlock>& blocks) {
    const int m = static_cast<int>(na.size());
    const int n = static_cast<int>(nb.size());

    // cheap fast path: equal sequences align 1:1 without any search
    if (m == n) {
        bool same = true;
        for (int i = 0; i < m && same; ++i) same = (na[i] == nb[i]);
        if (same) {
            for (int i = 0; i < m; ++i) blocks.push_back({i, i + 1, i, i + 1});
            return;
        }
    }

    std::vector<MatchPair> pairs; // ascending (i, j)
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            if (na[i] == nb[j]) pairs.push_back({i, j});
    const int count = static_cast<int>(pairs.size());

    // suffix[k] = best (stretch count, -anchor count) achievable after anchor
    // k, including the trailing stretch; INF marks a dead end
    const std::pair<int, int> kInf{1 << 20, 1 << 20};
    std::vector<std::pair<int, int>> suffix(count, kInf);
    for (int k = count - 1; k >= 0; --k) {
        int g = gap_kind(m - 1 - pairs[k].i, n - 1 - pairs[k].j);
        if (g >= 0) suffix[k] = {g, 0};
        for (int l = k + 1; l < count; ++l) {
            if (suffix[l] == kInf) continue;
            if (pairs[l].i <= pairs[k].i || pairs[l].j <= pairs[k].j) continue;
            int g2 = gap_kind(pairs[l].i - pairs[k].i - 1, pairs[l].j - pairs[k].j - 1);
            if (g2 < 0) continue;
            std::pair<int, int> cand{g2 + suffix[l].first, suffix[l].second - 1};
            if (cand < suffix[k]) suffix[k] = cand;
        }
    }

    std::pair<int, int> total{1, 0}; // the chain with no anchors at all
    for (int k = 0; k < count; ++k) {
        if (suffix[k] == kInf) continue;
        int g = gap_kind(pairs[k].i, pairs[k].j);
        if (g < 0) continue;
        std::pair<int, int> cand{g + suffix[k].first, suffix[k].second - 1};
        if (cand < total) total = cand;
    }

    // walk the chain, always taking the leftmost anchor that still realizes
    // the optimal remaining cost
    GapEmitter gaps(na, nb, blocks);
    int ci = -1, cj = -1;
    std::pair<int, int> need = total;
    while (true) {
        bool advanced = false;
        for (int k = 0; k < count; ++k) {
            if (pairs[k].i <= ci || pairs[k].j <= cj) continue;
            if (suffix[k] == kInf) continue;
            int g = gap_kind(pairs[k].i - ci - 1, pairs[k].j - cj - 1);
            if (g < 0) continue;
            std::pair<int, int> via{g + suffix[k].first, suffix[k].second - 1};
            if (via != need) continue;
            if (g == 1) gaps.emit(ci + 1, pairs[k].i, cj + 1, pairs[k].j);
            blocks.push_back({pairs[k].i, pairs[k].i + 1, pairs[k].j, pairs[k].j + 1});
            ci = pairs[k].i;
            cj = pairs[k].j;
            need = suffix[k];
            advanced = true;
            break;
        }
        if (!advanced) break;
    }
    if (ci + 1 < m || cj + 1 < n) gaps.emit(ci + 1, m, cj + 1, n);
}

} // namespace

Alignment monotonic_align(const std::vector<std::string>& a,
                          const std::vector<std::string>& b) {
    Alignment out;
    if (a.empty() && b.empty()) return out;
    if (a.empty() || b.empty()) {
        out.blocks.push_back({0, static_cast<int>(a.size()), 0, static_cast<int>(b.size())});
        return out;
    }

    std::vector<std::string> na(a.size()), nb(b.size());
    for (std::size_t i = 0; i < a.size(); ++i) na[i] = normalize_for_match(a[i]);
    for (std::size_t j = 0; j < b.size(); ++j) nb[j] = normalize_for_match(b[j]);
    align_nonempty(na, nb, out.blocks);
    return out;
}

std::vector<std::string> project_tags(const std::vector<std::string>& tags,
                                      const Alignment& alignment) {
    int a_total = alignment.blocks.empty() ? 0 : alignment.blocks.back().a_end;
    if (static_cast<int>(tags.size()) != a_total)
        throw Error(ErrorCategory::Internal,
                    "tag projection: got " + std::to_string(tags.size()) +
                        " tags for an alignment covering " + std::to_string(a_total) +
                        " words");
    std::vector<std::string> out;
    for (const auto& blk : alignment.blocks) {
        if (blk.b_end == blk.b_begin) continue; // no sub-words to tag
        if (blk.a_end == blk.a_begin)
            throw Error(ErrorCategory::Internal,
                        "tag projection: sub-words aligned to no word");
        for (int j = blk.b_begin; j < blk.b_end; ++j) out.push_back(tags[blk.a_begin]);
    }
    return out;
}

} // namespace aspectnmt
