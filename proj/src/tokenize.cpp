#include "aspectnmt/tokenize.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>

#include "aspectnmt/errors.hpp"

namespace aspectnmt {

namespace {

enum class CharClass { Lower, Upper, Digit, Other };

// Decodes the code point starting at byte i; a malformed byte is passed
// through as a single one-byte "character" rather than rejected.
std::uint32_t next_codepoint(const std::string& s, std::size_t i, std::size_t& len) {
    unsigned char b = static_cast<unsigned char>(s[i]);
    std::size_t n;
    std::uint32_t cp;
    if (b < 0x80) {
        len = 1;
        return b;
    } else if ((b >> 5) == 0x6) {
        n = 2;
        cp = b & 0x1f;
    } else if ((b >> 4) == 0xe) {
        n = 3;
        cp = b & 0x0f;
    } else if ((b >> 3) == 0x1e) {
        n = 4;
        cp = b & 0x07;
    } else {
        len = 1;
        return b;
    }
    if (i + n > s.size()) {
        len = 1;
        return b;
    }
    for (std::size_t k = 1; k < n; ++k) {
        unsigned char c = static_cast<unsigned char>(s[i + k]);
        if ((c >> 6) != 0x2) {
            len = 1;
            return b;
        }
        cp = (cp << 6) | (c & 0x3f);
    }
    len = n;
    return cp;
}

CharClass classify(std::uint32_t cp) {
    if (cp >= '0' && cp <= '9') return CharClass::Digit;
    if (cp >= 'a' && cp <= 'z') return CharClass::Lower;
    if (cp >= 'A' && cp <= 'Z') return CharClass::Upper;
    // Latin-1 supplement letters (covers the umlauts and sharp s used in the
    // synthetic corpora); multiplication/division signs are not letters.
    if ((cp >= 0xC0 && cp <= 0xD6) || (cp >= 0xD8 && cp <= 0xDE))
        return CharClass::Upper;
    if ((cp >= 0xDF && cp <= 0xF6) || (cp >= 0xF8 && cp <= 0xFF))
        return CharClass::Lower;
    return CharClass::Other;
}

// Byte offsets of the code point starts, plus one final entry = size().
std::vector<std::size_t> codepoint_starts(const std::string& s) {
    std::vector<std::size_t> starts;
    std::size_t i = 0;
    while (i < s.size()) {
        starts.push_back(i);
        std::size_t len;
        next_codepoint(s, i, len);
        i += len;
    }
    starts.push_back(s.size());
    return starts;
}

bool is_continuation_surface(const std::string& s) {
    return s.size() > 2 && s.compare(0, 2, SubwordVocab::kContinuation) == 0;
}

} // namespace

const char* swp_name(Swp s) {
    switch (s) {
    case Swp::Begin: return "Begin";
    case Swp::Inside: return "Inside";
    case Swp::Single: return "Single";
    }
    return "Single";
}

std::string word_shape(const std::string& token) {
    std::string shape;
    shape.reserve(token.size());
    std::size_t i = 0;
    while (i < token.size()) {
        std::size_t len;
        std::uint32_t cp = next_codepoint(token, i, len);
        switch (classify(cp)) {
        case CharClass::Lower: shape += 'x'; break;
        case CharClass::Upper: shape += 'X'; break;
        case CharClass::Digit: shape += 'd'; break;
        case CharClass::Other: shape.append(token, i, len); break;
        }
        i += len;
    }
    return shape;
}

std::vector<std::string> word_tokenize(const std::string& sentence) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < sentence.size()) {
        if (std::isspace(static_cast<unsigned char>(sentence[i]))) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < sentence.size() &&
               !std::isspace(static_cast<unsigned char>(sentence[j])))
            ++j;
        std::string chunk = sentence.substr(i, j - i);
        i = j;

        auto starts = codepoint_starts(chunk);
        std::size_t ncp = starts.size() - 1;
        auto cls_at = [&](std::size_t k) {
            std::size_t len;
            return classify(next_codepoint(chunk, starts[k], len));
        };
        std::size_t lo = 0, hi = ncp;
        while (lo < hi && cls_at(lo) == CharClass::Other) ++lo;
        while (hi > lo && cls_at(hi - 1) == CharClass::Other) --hi;
        for (std::size_t k = 0; k < lo; ++k)
            out.push_back(chunk.substr(starts[k], starts[k + 1] - starts[k]));
        if (lo < hi)
            out.push_back(chunk.substr(starts[lo], starts[hi] - starts[lo]));
        for (std::size_t k = hi; k < ncp; ++k)
            out.push_back(chunk.substr(starts[k], starts[k + 1] - starts[k]));
    }
    return out;
}

std::vector<Swp> subword_position_labels(const std::vector<std::string>& pieces) {
    if (pieces.empty())
        fail(ErrorCategory::Internal, "cannot label an empty piece list");
    if (pieces.size() == 1) return {Swp::Single};
    std::vector<Swp> out(pieces.size(), Swp::Inside);
    out[0] = Swp::Begin;
    return out;
}

SubwordVocab train_subword_vocab(const std::vector<std::string>& tokens,
                                 int target_size) {
    if (tokens.empty())
        fail(ErrorCategory::Config, "cannot train a vocabulary on an empty corpus");

    std::map<std::string, std::int64_t> word_freq;
    for (const auto& t : tokens) {
        if (t.empty()) fail(ErrorCategory::Internal, "empty token in corpus stream");
        ++word_freq[t];
    }

    // Character alphabet in both initial and continuation form.
    std::set<std::string> alphabet;
    for (const auto& [word, freq] : word_freq) {
        auto starts = codepoint_starts(word);
        for (std::size_t k = 0; k + 1 < starts.size(); ++k)
            alphabet.insert(word.substr(starts[k], starts[k + 1] - starts[k]));
    }

    SubwordVocab vocab;
    auto add = [&vocab](const std::string& tok) {
        vocab.token_to_id[tok] = vocab.size();
        vocab.id_to_token.push_back(tok);
    };
    for (const char* sp :
         {SubwordVocab::kPad, SubwordVocab::kUnk, SubwordVocab::kBos,
          SubwordVocab::kEos, SubwordVocab::kMask})
        add(sp);
    int minimum = vocab.size() + 2 * static_cast<int>(alphabet.size());
    if (target_size < minimum)
        fail(ErrorCategory::Config,
             "vocabulary size " + std::to_string(target_size) +
                 " cannot cover the corpus alphabet; minimum feasible size is " +
                 std::to_string(minimum));
    for (const auto& ch : alphabet) {
        add(ch);
        add(SubwordVocab::kContinuation + ch);
    }

    // Each distinct word as its current unit segmentation.
    std::vector<std::pair<std::vector<std::string>, std::int64_t>> words;
    words.reserve(word_freq.size());
    for (const auto& [word, freq] : word_freq) {
        std::vector<std::string> units;
        auto starts = codepoint_starts(word);
        for (std::size_t k = 0; k + 1 < starts.size(); ++k) {
            std::string ch = word.substr(starts[k], starts[k + 1] - starts[k]);
            units.push_back(k == 0 ? ch : SubwordVocab::kContinuation + ch);
        }
        words.emplace_back(std::move(units), freq);
    }

    std::set<std::pair<std::string, std::string>> banned;
    const std::set<std::string> reserved = {
        SubwordVocab::kPad, SubwordVocab::kUnk, SubwordVocab::kBos,
        SubwordVocab::kEos, SubwordVocab::kMask, SubwordVocab::kContinuation};

    while (vocab.size() < target_size) {
        // Highest-count adjacent pair; the sorted map makes the tie-break
        // "lexicographically smallest pair" automatic.
        std::map<std::pair<std::string, std::string>, std::int64_t> pair_freq;
        for (const auto& [units, freq] : words)
            for (std::size_t k = 0; k + 1 < units.size(); ++k)
                pair_freq[{units[k], units[k + 1]}] += freq;

        std::pair<std::string, std::string> best;
        std::int64_t best_count = 0;
        for (const auto& [pair, count] : pair_freq) {
            if (banned.count(pair)) continue;
            if (count > best_count) {
                best_count = count;
                best = pair;
            }
        }
        if (best_count < 2) break;

        std::string merged = best.first + best.second.substr(2);
        if (reserved.count(merged)) { // cannot exist as a real token
            banned.insert(best);
            continue;
        }

        for (auto& [units, freq] : words) {
            for (std::size_t k = 0; k + 1 < units.size();) {
                if (units[k] == best.first && units[k + 1] == best.second) {
                    units[k] = merged;
                    units.erase(units.begin() + k + 1);
                } else {
                    ++k;
                }
            }
        }
        if (!vocab.token_to_id.count(merged)) add(merged);
    }
    return vocab;
}

SubwordSequence subword_tokenize(const std::vector<std::string>& words,
                                 const SubwordVocab& vocab) {
    SubwordSequence seq;
    for (std::size_t wi = 0; wi < words.size(); ++wi) {
        const std::string& word = words[wi];
        auto starts = codepoint_starts(word);
        std::size_t ncp = starts.size() - 1;

        std::vector<std::string> pieces;
        std::size_t pos = 0;
        while (pos < ncp) {
            std::size_t matched = 0;
            std::string found;
            for (std::size_t L = ncp - pos; L >= 1; --L) {
                std::string cand =
                    word.substr(starts[pos], starts[pos + L] - starts[pos]);
                if (pos > 0) cand = SubwordVocab::kContinuation + cand;
                if (vocab.token_to_id.count(cand)) {
                    matched = L;
                    found = std::move(cand);
                    break;
                }
            }
            if (matched == 0) { // some character is outside the alphabet
                pieces = {SubwordVocab::kUnk};
                break;
            }
            pieces.push_back(std::move(found));
            pos += matched;
        }

        auto labels = subword_position_labels(pieces);
        for (std::size_t k = 0; k < pieces.size(); ++k) {
            SubwordTok tok;
            tok.surface = pieces[k];
            tok.id = vocab.id(pieces[k]);
            tok.is_continuation = is_continuation_surface(pieces[k]);
            tok.word_index = static_cast<int>(wi);
            seq.shapes.push_back(word_shape(pieces[k]));
            seq.swp_labels.push_back(labels[k]);
            seq.tokens.push_back(std::move(tok));
        }
    }
    return seq;
}

std::string detokenize(const std::vector<std::string>& pieces) {
    std::vector<std::string> words;
    for (const auto& p : pieces) {
        if (is_continuation_surface(p) || p == SubwordVocab::kContinuation) {
            std::string tail = p.substr(2);
            if (words.empty())
                words.push_back(tail); // stray leading continuation: strip
            else
                words.back() += tail;
        } else {
            words.push_back(p);
        }
    }
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) out += ' ';
        out += words[i];
    }
    return out;
}

std::string detokenize(const SubwordSequence& seq) {
    std::vector<std::string> pieces;
    pieces.reserve(seq.tokens.size());
    for (const auto& t : seq.tokens) pieces.push_back(t.surface);
    return detokenize(pieces);
}

void save_vocab(const SubwordVocab& vocab, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCategory::Io, "cannot open " + path + " for writing");
    out << "# subword vocabulary; id = zero-based position among token lines\n";
    out << "# continuation_prefix=" << SubwordVocab::kContinuation << "\n";
    out << "# specials: " << SubwordVocab::kPad << " " << SubwordVocab::kUnk << " "
        << SubwordVocab::kBos << " " << SubwordVocab::kEos << " "
        << SubwordVocab::kMask << "\n";
    for (const auto& tok : vocab.id_to_token) out << tok << "\n";
    out.flush();
    if (!out) fail(ErrorCategory::Io, "failed writing " + path);
}

SubwordVocab load_vocab(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCategory::MissingFile, "cannot open " + path);
    SubwordVocab vocab;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        // Only "# "-prefixed lines are comments; "##x" entries are tokens.
        if (line == "#" || line.rfind("# ", 0) == 0) continue;
        if (line.empty())
            fail(ErrorCategory::DataFormat,
                 path + ":" + std::to_string(lineno) + ": empty token line");
        if (line.find(' ') != std::string::npos)
            fail(ErrorCategory::DataFormat,
                 path + ":" + std::to_string(lineno) + ": token contains a space");
        if (vocab.token_to_id.count(line))
            fail(ErrorCategory::DataFormat, path + ":" + std::to_string(lineno) +
                                                ": duplicate token '" + line + "'");
        vocab.token_to_id[line] = vocab.size();
        vocab.id_to_token.push_back(line);
    }
    auto need = [&](const char* tok) {
        int id = vocab.id(tok);
        if (id < 0)
            fail(ErrorCategory::DataFormat,
                 path + ": missing special token " + std::string(tok));
        return id;
    };
    vocab.pad_id = need(SubwordVocab::kPad);
    vocab.unk_id = need(SubwordVocab::kUnk);
    vocab.bos_id = need(SubwordVocab::kBos);
    vocab.eos_id = need(SubwordVocab::kEos);
    vocab.mask_id = need(SubwordVocab::kMask);
    return vocab;
}

} // namespace aspectnmt
