#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "aspectnmt/ini.hpp"

namespace aspectnmt {

// A linguistic attribute and its finite label inventory.
struct AspectSpec {
    std::string name;                 // e.g. "CPOS", "FPOS", "WSH", "SWP"
    std::vector<std::string> tag_set; // ordered, unique, non-empty
};

// One source sentence with gold per-word tags. Only the taggable aspects
// (CPOS/FPOS) are stored; WSH and SWP are pure surface functions and are
// computed on demand by the tokenizer.
struct TaggedSentence {
    std::vector<std::string> words;
    std::vector<std::string> cpos;
    std::vector<std::string> fpos;
};

struct ParallelPair {
    TaggedSentence source;
    std::vector<std::string> target;
};

struct GrammarRule {
    std::vector<std::string> rhs; // nonterminal names and/or FPOS preterminals
    double weight = 0.0;
    int line = 0; // in the grammar file, for error reporting
};

struct LexEntry {
    std::string surface;
    std::string fpos;
};

// A weighted context-free grammar plus lexicon that emits gold-tagged
// source sentences and their deterministic translations.
struct GrammarSpec {
    std::string source;      // grammar file name, used in error messages
    std::string start;       // start nonterminal
    double casing_rate = 0.0; // chance of capitalizing a source token
    double digit_rate = 0.0;  // chance of inserting one numeral per sentence
    std::string digit_fpos;   // preterminal the injected numeral is drawn from
    int max_words = 100;      // hard cap on source length

    std::map<std::string, std::string> fpos_to_cpos;
    std::map<std::string, std::vector<GrammarRule>> rules; // per LHS, file order
    std::vector<std::string> rule_order;                   // LHS first-appearance order
    std::map<std::string, std::vector<LexEntry>> lexicon;  // per FPOS, file order
    std::map<std::string, std::vector<std::string>> target_of; // lexeme -> target tokens
    std::map<std::string, std::vector<int>> reorder; // nonterminal -> child permutation

    // CPOS/FPOS tag inventories as declared by the [tags] section.
    AspectSpec cpos_spec() const;
    AspectSpec fpos_spec() const;
};

GrammarSpec parse_grammar(const IniFile& ini);
GrammarSpec load_grammar(const std::string& path);

// How often each rule alternative fired while generating, keyed by LHS and
// indexed like GrammarSpec::rules. Lets tests compare empirical frequencies
// against the configured weights.
struct GenerationStats {
    std::map<std::string, std::vector<std::uint64_t>> rule_uses;
};

std::vector<ParallelPair> generate_corpus(const GrammarSpec& grammar, int count,
                                          std::uint64_t seed,
                                          GenerationStats* stats = nullptr);

// Serialization. "plain" is one sentence per line with space-separated
// tokens; "tagged-tsv" is one TOKEN<TAB>CPOS<TAB>FPOS line per token with a
// blank line between sentences; "parallel" writes/reads a plain file pair
// at path.src / path.tgt.
std::vector<std::vector<std::string>> load_plain(const std::string& path);
void save_plain(const std::vector<std::vector<std::string>>& sentences,
                const std::string& path);

// If specs is non-null it must hold the CPOS and FPOS inventories (in that
// order) and every tag in the file is checked against them.
std::vector<TaggedSentence> load_tagged(const std::string& path,
                                        const std::vector<AspectSpec>* specs = nullptr);
void save_tagged(const std::vector<TaggedSentence>& sentences,
                 const std::string& path);

std::vector<ParallelPair> load_parallel(const std::string& path_prefix);
void save_parallel(const std::vector<ParallelPair>& pairs,
                   const std::string& path_prefix);

} // namespace aspectnmt
