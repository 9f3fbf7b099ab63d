#pragma once

#include <string>
#include <vector>

namespace aspectnmt {

// Half-open spans into the word sequence (a) and sub-word sequence (b).
// Spans are non-empty except in the degenerate whole-sequence block used
// when one input is empty.
struct AlignmentBlock {
    int a_begin = 0, a_end = 0;
    int b_begin = 0, b_end = 0;

    bool operator==(const AlignmentBlock& o) const {
        return a_begin == o.a_begin && a_end == o.a_end && b_begin == o.b_begin &&
               b_end == o.b_end;
    }
};

struct Alignment {
    std::vector<AlignmentBlock> blocks; // sorted, contiguous, partition both sides

    bool operator==(const Alignment& o) const { return blocks == o.blocks; }
};

// Comparison key for anchor detection: continuation prefix stripped, then
// lowercased (ASCII and Latin-1).
std::string normalize_for_match(const std::string& token);

// Monotonic alignment around anchors. Anchors are 1:1 matches of normalized
// tokens, chosen as the monotone chain that leaves no one-sided stretch,
// minimizes the number of unaligned stretches between anchors, and then
// maximizes the anchor count (leftmost positions win remaining ties). Each
// surviving stretch is split at common character-count boundaries when the
// normalized concatenations match and both sides have >= 2 tokens, and
// otherwise becomes one many-to-many block.
Alignment monotonic_align(const std::vector<std::string>& a,
                          const std::vector<std::string>& b);

// Every sub-word of a block gets the tag of the block's first word.
std::vector<std::string> project_tags(const std::vector<std::string>& tags,
                                      const Alignment& alignment);

} // namespace aspectnmt
