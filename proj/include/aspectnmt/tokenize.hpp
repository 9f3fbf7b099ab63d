#pragma once

#include <map>
#include <string>
#include <vector>

namespace aspectnmt {

// Sub-word vocabulary with WordPiece-style continuation marking. Ids are
// dense from 0; the five specials always occupy the first five ids.
struct SubwordVocab {
    static constexpr const char* kContinuation = "##";
    static constexpr const char* kPad = "[PAD]";
    static constexpr const char* kUnk = "[UNK]";
    static constexpr const char* kBos = "[BOS]";
    static constexpr const char* kEos = "[EOS]";
    static constexpr const char* kMask = "[MASK]";

    std::vector<std::string> id_to_token;
    std::map<std::string, int> token_to_id;

    int pad_id = 0;
    int unk_id = 1;
    int bos_id = 2;
    int eos_id = 3;
    int mask_id = 4;

    int size() const { return static_cast<int>(id_to_token.size()); }
    // -1 when absent
    int id(const std::string& token) const {
        auto it = token_to_id.find(token);
        return it == token_to_id.end() ? -1 : it->second;
    }
};

enum class Swp { Begin, Inside, Single };

const char* swp_name(Swp s);

struct SubwordTok {
    std::string surface;
    int id = 0;
    bool is_continuation = false;
    int word_index = 0;
};

struct SubwordSequence {
    std::vector<SubwordTok> tokens;
    std::vector<Swp> swp_labels;
    std::vector<std::string> shapes; // per sub-word, continuation prefix preserved
};

// Builds a vocabulary over the token stream: all seen characters (in initial
// and continuation form) plus iterative highest-frequency pair merges until
// target_size entries exist or no pair occurs twice. Ties break toward the
// lexicographically smallest pair, so training is deterministic.
SubwordVocab train_subword_vocab(const std::vector<std::string>& tokens,
                                 int target_size);

// Whitespace split with leading/trailing punctuation detached as separate
// tokens. Internal punctuation (hyphens, apostrophes) stays attached.
std::vector<std::string> word_tokenize(const std::string& sentence);

// Greedy longest-prefix segmentation; a word with any uncovered character
// collapses to the single [UNK] token.
SubwordSequence subword_tokenize(const std::vector<std::string>& words,
                                 const SubwordVocab& vocab);

// Lowercase letters to x, uppercase to X, digits to d, everything else kept
// (so "##" and punctuation survive). Works per code point; case is known for
// ASCII and Latin-1; other letters pass through unchanged.
std::string word_shape(const std::string& token);

std::vector<Swp> subword_position_labels(const std::vector<std::string>& pieces);

std::string detokenize(const SubwordSequence& seq);
// Convenience overload for decoder output that only has surfaces.
std::string detokenize(const std::vector<std::string>& pieces);

void save_vocab(const SubwordVocab& vocab, const std::string& path);
SubwordVocab load_vocab(const std::string& path);

} // namespace aspectnmt
