#include "aspectnmt/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "aspectnmt/errors.hpp"
#include "aspectnmt/rng.hpp"

namespace aspectnmt {

namespace {

[[noreturn]] void fail_at(ErrorCategory cat, const std::string& source, int line,
                          const std::string& msg) {
    fail(cat, source + ":" + std::to_string(line) + ": " + msg);
}

double parse_number(const IniEntry& e, const std::string& source) {
    double v = 0.0;
    const char* first = e.value.data();
    const char* last = first + e.value.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last)
        fail_at(ErrorCategory::Config, source, e.line,
                "'" + e.key + "' must be a number, got '" + e.value + "'");
    return v;
}

bool has_whitespace(const std::string& s) {
    return s.find_first_of(" \t\r\n") != std::string::npos;
}

std::vector<std::string> split_fields(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string field;
    while (in >> field) out.push_back(field);
    return out;
}

} // namespace

AspectSpec GrammarSpec::cpos_spec() const {
    std::set<std::string> seen;
    AspectSpec spec{"CPOS", {}};
    for (const auto& [fpos, cpos] : fpos_to_cpos)
        if (seen.insert(cpos).second) spec.tag_set.push_back(cpos);
    std::sort(spec.tag_set.begin(), spec.tag_set.end());
    return spec;
}

AspectSpec GrammarSpec::fpos_spec() const {
    AspectSpec spec{"FPOS", {}};
    for (const auto& [fpos, cpos] : fpos_to_cpos) spec.tag_set.push_back(fpos);
    return spec; // std::map keys are already sorted
}

GrammarSpec parse_grammar(const IniFile& ini) {
    GrammarSpec g;
    g.source = ini.source;

    const IniEntry* digit_fpos_entry = nullptr;
    for (const IniEntry* e : ini.section_entries("options")) {
        if (e->key == "start") {
            g.start = e->value;
        } else if (e->key == "casing_rate" || e->key == "digit_rate") {
            double v = parse_number(*e, g.source);
            if (v < 0.0 || v > 1.0)
                fail_at(ErrorCategory::Config, g.source, e->line,
                        "'" + e->key + "' must be in [0, 1]");
            (e->key == "casing_rate" ? g.casing_rate : g.digit_rate) = v;
        } else if (e->key == "digit_tag") {
            g.digit_fpos = e->value;
            digit_fpos_entry = e;
        } else if (e->key == "max_words") {
            double v = parse_number(*e, g.source);
            if (v < 1 || v > 100 || v != static_cast<int>(v))
                fail_at(ErrorCategory::Config, g.source, e->line,
                        "'max_words' must be an integer in [1, 100]");
            g.max_words = static_cast<int>(v);
        } else {
            fail_at(ErrorCategory::Config, g.source, e->line,
                    "unknown option '" + e->key + "'");
        }
    }
    if (g.start.empty())
        fail(ErrorCategory::Config, g.source + ": missing 'start' in [options]");

    for (const IniEntry* e : ini.section_entries("tags")) {
        if (g.fpos_to_cpos.count(e->key))
            fail_at(ErrorCategory::Config, g.source, e->line,
                    "duplicate FPOS tag '" + e->key + "'");
        if (e->value.empty() || has_whitespace(e->value) || has_whitespace(e->key))
            fail_at(ErrorCategory::Config, g.source, e->line, "malformed tag mapping");
        g.fpos_to_cpos[e->key] = e->value;
    }

    for (const IniEntry* e : ini.section_entries("rules")) {
        auto fields = split_fields(e->value);
        if (fields.size() < 2)
            fail_at(ErrorCategory::Config, g.source, e->line,
                    "rule must be WEIGHT followed by at least one symbol");
        GrammarRule rule;
        const std::string& w = fields[0];
        auto [ptr, ec] = std::from_chars(w.data(), w.data() + w.size(), rule.weight);
        if (ec != std::errc() || ptr != w.data() + w.size() || rule.weight <= 0.0)
            fail_at(ErrorCategory::Config, g.source, e->line,
                    "rule weight must be a positive number, got '" + w + "'");
        rule.rhs.assign(fields.begin() + 1, fields.end());
        rule.line = e->line;
        if (!g.rules.count(e->key)) g.rule_order.push_back(e->key);
        g.rules[e->key].push_back(std::move(rule));
    }

    std::set<std::string> lexemes;
    for (const IniEntry* e : ini.section_entries("lexicon")) {
        if (e->value.empty() || has_whitespace(e->value) || has_whitespace(e->key))
            fail_at(ErrorCategory::Config, g.source, e->line, "malformed lexicon entry");
        if (!g.fpos_to_cpos.count(e->value))
            fail_at(ErrorCategory::Config, g.source, e->line,
                    "FPOS tag '" + e->value + "' not declared in [tags]");
        if (!lexemes.insert(e->key).second)
            fail_at(ErrorCategory::Config, g.source, e->line,
                    "ambiguous lexicon: '" + e->key + "' listed twice");
        g.lexicon[e->value].push_back({e->key, e->value});
    }
    if (lexemes.empty()) fail(ErrorCategory::Config, g.source + ": empty lexicon");

    for (const IniEntry* e : ini.section_entries("target_lexicon")) {
        if (!lexemes.count(e->key))
            fail_at(ErrorCategory::Config, g.source, e->line,
                    "target mapping for unknown lexeme '" + e->key + "'");
        if (g.target_of.count(e->key))
            fail_at(ErrorCategory::Config, g.source, e->line,
                    "duplicate target mapping for '" + e->key + "'");
        auto toks = split_fields(e->value);
        if (toks.empty())
            fail_at(ErrorCategory::Config, g.source, e->line,
                    "empty target for '" + e->key + "'");
        g.target_of[e->key] = std::move(toks);
    }
    for (const auto& lex : lexemes)
        if (!g.target_of.count(lex))
            fail(ErrorCategory::Config,
                 g.source + ": lexeme '" + lex + "' has no target mapping");

    for (const IniEntry* e : ini.section_entries("reorder")) {
        auto it = g.rules.find(e->key);
        if (it == g.rules.end())
            fail_at(ErrorCategory::Config, g.source, e->line,
                    "reorder for unknown nonterminal '" + e->key + "'");
        auto fields = split_fields(e->value);
        std::vector<int> perm;
        std::vector<bool> seen(fields.size(), false);
        for (const auto& f : fields) {
            int idx = -1;
            auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), idx);
            if (ec != std::errc() || ptr != f.data() + f.size() || idx < 0 ||
                idx >= static_cast<int>(fields.size()) || seen[idx])
                fail_at(ErrorCategory::Config, g.source, e->line,
                        "reorder must be a permutation of 0.." +
                            std::to_string(fields.size() - 1));
            seen[idx] = true;
            perm.push_back(idx);
        }
        for (const auto& rule : it->second)
            if (rule.rhs.size() != perm.size())
                fail_at(ErrorCategory::Config, g.source, rule.line,
                        "rule arity " + std::to_string(rule.rhs.size()) +
                            " does not match reorder of length " +
                            std::to_string(perm.size()));
        if (g.reorder.count(e->key))
            fail_at(ErrorCategory::Config, g.source, e->line,
                    "duplicate reorder for '" + e->key + "'");
        g.reorder[e->key] = std::move(perm);
    }

    // Every RHS symbol must be exactly one of: rule nonterminal, lexicon FPOS.
    if (!g.rules.count(g.start))
        fail(ErrorCategory::Config,
             g.source + ": start symbol '" + g.start + "' has no rules");
    for (const auto& [lhs, alts] : g.rules) {
        if (g.lexicon.count(lhs))
            fail(ErrorCategory::Config, g.source + ": symbol '" + lhs +
                                            "' is both a nonterminal and an FPOS");
        for (const auto& rule : alts)
            for (const auto& sym : rule.rhs)
                if (!g.rules.count(sym) && !g.lexicon.count(sym))
                    fail_at(ErrorCategory::Config, g.source, rule.line,
                            "symbol '" + sym +
                                "' is neither a nonterminal nor in the lexicon");
    }
    if (g.digit_rate > 0.0 && !g.lexicon.count(g.digit_fpos)) {
        int line = digit_fpos_entry ? digit_fpos_entry->line : 0;
        fail_at(ErrorCategory::Config, g.source, line,
                "digit_rate > 0 requires 'digit_tag' naming an FPOS with lexicon entries");
    }
    return g;
}

GrammarSpec load_grammar(const std::string& path) {
    return parse_grammar(load_ini(path));
}

namespace {

struct Leaf {
    std::string surface;
    std::string cpos;
    std::string fpos;
    const std::vector<std::string>* target; // tokens, owned by the grammar
};

struct Expansion {
    std::vector<Leaf> src;
    std::vector<Leaf> tgt; // same leaves, target constituent order
};

constexpr int kMaxDepth = 64;
constexpr int kMaxRetries = 100;

class Generator {
public:
    Generator(const GrammarSpec& g, Rng& rng) : g_(g), rng_(rng) {
        for (const auto& [lhs, alts] : g.rules) {
            auto& w = weights_[lhs];
            for (const auto& rule : alts) w.push_back(rule.weight);
        }
    }

    ParallelPair next(GenerationStats* stats) {
        for (int attempt = 0; attempt < kMaxRetries; ++attempt) {
            draws_.clear();
            Expansion top = expand(g_.start, 0);
            maybe_inject_digit(top);
            if (static_cast<int>(top.src.size()) > g_.max_words) continue;
            if (stats) {
                for (const auto& [lhs, alt] : draws_) {
                    auto& uses = stats->rule_uses[lhs];
                    uses.resize(weights_.at(lhs).size(), 0);
                    ++uses[alt];
                }
            }
            return finish(top);
        }
        fail(ErrorCategory::Config,
             g_.source + ": grammar failed to produce a sentence within " +
                 std::to_string(g_.max_words) + " words after " +
                 std::to_string(kMaxRetries) + " attempts");
    }

private:
    Expansion expand(const std::string& sym, int depth) {
        if (depth > kMaxDepth)
            fail(ErrorCategory::Config,
                 g_.source + ": recursion limit exceeded expanding '" + sym + "'");
        auto rit = g_.rules.find(sym);
        if (rit == g_.rules.end()) {
            Leaf l = make_leaf(sym);
            return {{l}, {l}};
        }

        std::size_t alt = rng_.weighted_choice(weights_.at(sym));
        draws_.emplace_back(sym, alt);
        const GrammarRule& rule = rit->second[alt];

        std::vector<Expansion> children;
        children.reserve(rule.rhs.size());
        for (const auto& child_sym : rule.rhs)
            children.push_back(expand(child_sym, depth + 1));

        Expansion out;
        for (const auto& c : children)
            out.src.insert(out.src.end(), c.src.begin(), c.src.end());
        auto pit = g_.reorder.find(sym);
        if (pit != g_.reorder.end()) {
            for (int idx : pit->second)
                out.tgt.insert(out.tgt.end(), children[idx].tgt.begin(),
                               children[idx].tgt.end());
        } else {
            for (const auto& c : children)
                out.tgt.insert(out.tgt.end(), c.tgt.begin(), c.tgt.end());
        }
        return out;
    }

    Leaf make_leaf(const std::string& fpos) {
        const auto& entries = g_.lexicon.at(fpos);
        const LexEntry& e = entries[rng_.uniform_int(entries.size())];
        std::string surface = e.surface;
        if (g_.casing_rate > 0.0 && rng_.uniform() < g_.casing_rate &&
            surface[0] >= 'a' && surface[0] <= 'z')
            surface[0] = static_cast<char>(surface[0] - 'a' + 'A');
        return {std::move(surface), g_.fpos_to_cpos.at(fpos), fpos,
                &g_.target_of.at(e.surface)};
    }

    void maybe_inject_digit(Expansion& top) {
        if (g_.digit_rate <= 0.0 || rng_.uniform() >= g_.digit_rate) return;
        const auto& entries = g_.lexicon.at(g_.digit_fpos);
        const LexEntry& e = entries[rng_.uniform_int(entries.size())];
        Leaf leaf{e.surface, g_.fpos_to_cpos.at(g_.digit_fpos), g_.digit_fpos,
                  &g_.target_of.at(e.surface)};
        // Slot it in just before the sentence-final token on both sides so
        // punctuation stays final.
        auto src_at = top.src.empty() ? top.src.end() : top.src.end() - 1;
        top.src.insert(src_at, leaf);
        auto tgt_at = top.tgt.empty() ? top.tgt.end() : top.tgt.end() - 1;
        top.tgt.insert(tgt_at, leaf);
    }

    static ParallelPair finish(const Expansion& top) {
        ParallelPair pair;
        for (const Leaf& l : top.src) {
            pair.source.words.push_back(l.surface);
            pair.source.cpos.push_back(l.cpos);
            pair.source.fpos.push_back(l.fpos);
        }
        for (const Leaf& l : top.tgt)
            pair.target.insert(pair.target.end(), l.target->begin(), l.target->end());
        return pair;
    }

    const GrammarSpec& g_;
    Rng& rng_;
    std::map<std::string, std::vector<double>> weights_;
    std::vector<std::pair<std::string, std::size_t>> draws_; // this sentence only
};

} // namespace

std::vector<ParallelPair> generate_corpus(const GrammarSpec& grammar, int count,
                                          std::uint64_t seed,
                                          GenerationStats* stats) {
    if (count <= 0)
        fail(ErrorCategory::Config, "corpus size must be positive, got " +
                                        std::to_string(count));
    Rng rng(seed);
    Generator gen(grammar, rng);
    std::vector<ParallelPair> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) out.push_back(gen.next(stats));
    return out;
}

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCategory::MissingFile, "cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) fail(ErrorCategory::Io, "failed reading " + path);
    return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCategory::Io, "cannot open " + path + " for writing");
    out << content;
    out.flush();
    if (!out) fail(ErrorCategory::Io, "failed writing " + path);
}

// Splits file content into lines. A trailing LF is the canonical terminator,
// not an empty final line.
std::vector<std::string> split_lines(const std::string& text, const std::string& path) {
    if (text.find('\r') != std::string::npos)
        fail(ErrorCategory::DataFormat, path + ": expected LF line endings, found CR");
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t nl = text.find('\n', start);
        if (nl == std::string::npos) {
            lines.push_back(text.substr(start));
            break;
        }
        lines.push_back(text.substr(start, nl - start));
        start = nl + 1;
    }
    return lines;
}

std::vector<std::string> split_tokens(const std::string& line, const std::string& path,
                                      std::size_t lineno) {
    std::vector<std::string> toks;
    std::size_t start = 0;
    while (true) {
        std::size_t sp = line.find(' ', start);
        std::string tok = line.substr(start, sp == std::string::npos ? sp : sp - start);
        if (tok.empty())
            fail_at(ErrorCategory::DataFormat, path, static_cast<int>(lineno),
                    "empty token (stray or doubled space)");
        toks.push_back(std::move(tok));
        if (sp == std::string::npos) break;
        start = sp + 1;
    }
    return toks;
}

} // namespace

std::vector<std::vector<std::string>> load_plain(const std::string& path) {
    auto lines = split_lines(read_file(path), path);
    std::vector<std::vector<std::string>> out;
    out.reserve(lines.size());
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (lines[i].empty())
            fail_at(ErrorCategory::DataFormat, path, static_cast<int>(i + 1),
                    "empty sentence");
        out.push_back(split_tokens(lines[i], path, i + 1));
    }
    return out;
}

void save_plain(const std::vector<std::vector<std::string>>& sentences,
                const std::string& path) {
    std::string buf;
    for (const auto& sent : sentences) {
        if (sent.empty())
            fail(ErrorCategory::Internal, "refusing to save an empty sentence");
        for (std::size_t i = 0; i < sent.size(); ++i) {
            if (sent[i].empty() || has_whitespace(sent[i]))
                fail(ErrorCategory::Internal,
                     "token unrepresentable in plain format: '" + sent[i] + "'");
            if (i) buf += ' ';
            buf += sent[i];
        }
        buf += '\n';
    }
    write_file(path, buf);
}

std::vector<TaggedSentence> load_tagged(const std::string& path,
                                        const std::vector<AspectSpec>* specs) {
    const std::set<std::string>* cpos_ok = nullptr;
    const std::set<std::string>* fpos_ok = nullptr;
    std::set<std::string> cpos_set, fpos_set;
    if (specs) {
        for (const auto& spec : *specs) {
            if (spec.name == "CPOS") {
                cpos_set.insert(spec.tag_set.begin(), spec.tag_set.end());
                cpos_ok = &cpos_set;
            } else if (spec.name == "FPOS") {
                fpos_set.insert(spec.tag_set.begin(), spec.tag_set.end());
                fpos_ok = &fpos_set;
            }
        }
    }

    auto lines = split_lines(read_file(path), path);
    std::vector<TaggedSentence> out;
    TaggedSentence cur;
    auto flush = [&]() {
        if (!cur.words.empty()) {
            out.push_back(std::move(cur));
            cur = {};
        }
    };
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::string& line = lines[i];
        int lineno = static_cast<int>(i + 1);
        if (line.empty()) {
            if (cur.words.empty())
                fail_at(ErrorCategory::DataFormat, path, lineno,
                        "unexpected blank line");
            flush();
            continue;
        }
        std::vector<std::string> cols;
        std::size_t start = 0;
        while (true) {
            std::size_t tab = line.find('\t', start);
            cols.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (cols.size() != 3)
            fail_at(ErrorCategory::DataFormat, path, lineno,
                    "expected TOKEN<TAB>CPOS<TAB>FPOS (3 columns), got " +
                        std::to_string(cols.size()));
        for (const auto& c : cols)
            if (c.empty())
                fail_at(ErrorCategory::DataFormat, path, lineno, "empty column");
        if (cpos_ok && !cpos_ok->count(cols[1]))
            fail_at(ErrorCategory::DataFormat, path, lineno,
                    "unknown CPOS tag '" + cols[1] + "'");
        if (fpos_ok && !fpos_ok->count(cols[2]))
            fail_at(ErrorCategory::DataFormat, path, lineno,
                    "unknown FPOS tag '" + cols[2] + "'");
        cur.words.push_back(cols[0]);
        cur.cpos.push_back(cols[1]);
        cur.fpos.push_back(cols[2]);
    }
    flush();
    return out;
}

void save_tagged(const std::vector<TaggedSentence>& sentences,
                 const std::string& path) {
    std::string buf;
    bool first = true;
    for (const auto& s : sentences) {
        if (s.cpos.size() != s.words.size() || s.fpos.size() != s.words.size())
            fail(ErrorCategory::Internal, "tag lists out of step with words");
        if (s.words.empty())
            fail(ErrorCategory::Internal, "refusing to save an empty sentence");
        if (!first) buf += '\n';
        first = false;
        for (std::size_t i = 0; i < s.words.size(); ++i) {
            for (const std::string* f : {&s.words[i], &s.cpos[i], &s.fpos[i]})
                if (f->empty() || f->find_first_of("\t\r\n") != std::string::npos)
                    fail(ErrorCategory::Internal,
                         "field unrepresentable in tagged format: '" + *f + "'");
            buf += s.words[i];
            buf += '\t';
            buf += s.cpos[i];
            buf += '\t';
            buf += s.fpos[i];
            buf += '\n';
        }
    }
    write_file(path, buf);
}

std::vector<ParallelPair> load_parallel(const std::string& path_prefix) {
    auto src = load_plain(path_prefix + ".src");
    auto tgt = load_plain(path_prefix + ".tgt");
    if (src.size() != tgt.size())
        fail(ErrorCategory::DataFormat,
             path_prefix + ": line counts differ: " + std::to_string(src.size()) +
                 " (.src) vs " + std::to_string(tgt.size()) + " (.tgt)");
    std::vector<ParallelPair> out(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (src[i].size() > 100)
            fail_at(ErrorCategory::DataFormat, path_prefix + ".src",
                    static_cast<int>(i + 1),
                    "source sentence exceeds 100 words (" +
                        std::to_string(src[i].size()) + ")");
        out[i].source.words = std::move(src[i]);
        out[i].target = std::move(tgt[i]);
    }
    return out;
}

void save_parallel(const std::vector<ParallelPair>& pairs,
                   const std::string& path_prefix) {
    std::vector<std::vector<std::string>> src, tgt;
    src.reserve(pairs.size());
    tgt.reserve(pairs.size());
    for (const auto& p : pairs) {
        src.push_back(p.source.words);
        tgt.push_back(p.target);
    }
    save_plain(src, path_prefix + ".src");
    save_plain(tgt, path_prefix + ".tgt");
}

} // namespace aspectnmt
