#include "aspectnmt/eval.hpp"

#include <array>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <string>
#include <vector>

#include <doctest.h>

#include "aspectnmt/errors.hpp"
#include "aspectnmt/rng.hpp"

using namespace aspectnmt;

namespace {

std::vector<std::string> split_on(const std::string& text, const std::string& sep) {
    std::vector<std::string> parts;
    std::size_t pos = 0;
    while (true) {
        const std::size_t hit = text.find(sep, pos);
        if (hit == std::string::npos) {
            parts.push_back(text.substr(pos));
            return parts;
        }
        parts.push_back(text.substr(pos, hit - pos));
        pos = hit + sep.size();
    }
}

struct FixtureCase {
    std::string name;
    std::vector<std::string> hyps;
    std::vector<std::string> refs;
    double score = 0.0;
    double bp = 0.0;
    std::array<double, 4> precisions{};
    std::size_t hyp_length = 0;
    std::size_t ref_length = 0;
};

std::vector<FixtureCase> load_fixture() {
    const std::string path = std::string(TEST_SOURCE_DIR) + "/tests/fixtures/bleu_cases.tsv";
    std::ifstream in(path);
    REQUIRE_MESSAGE(in.good(), "fixture file missing: " << path);
    std::string line;
    REQUIRE(std::getline(in, line)); // header
    std::vector<FixtureCase> cases;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const std::vector<std::string> cols = split_on(line, "\t");
        REQUIRE(cols.size() == 11);
        FixtureCase c;
        c.name = cols[0];
        c.hyps = split_on(cols[1], " ||| ");
        c.refs = split_on(cols[2], " ||| ");
        c.score = std::stod(cols[3]);
        c.bp = std::stod(cols[4]);
        for (int n = 0; n < 4; ++n) {
            c.precisions[static_cast<std::size_t>(n)] = std::stod(cols[5 + static_cast<std::size_t>(n)]);
        }
        c.hyp_length = static_cast<std::size_t>(std::stoul(cols[9]));
        c.ref_length = static_cast<std::size_t>(std::stoul(cols[10]));
        cases.push_back(std::move(c));
    }
    return cases;
}

} // namespace

TEST_CASE("corpus bleu reproduces the precomputed fixture cases") {
    const std::vector<FixtureCase> cases = load_fixture();
    REQUIRE(cases.size() == 10);
    for (const FixtureCase& c : cases) {
        INFO("case ", c.name);
        const BleuReport rep = corpus_bleu(c.hyps, c.refs);
        // Both sides do exact counting in double precision, so agreement is
        // limited only by the fixture's six printed decimals.
        CHECK(std::abs(rep.score - c.score) < 1e-5);
        CHECK(std::abs(rep.brevity_penalty - c.bp) < 1e-6);
        for (int n = 0; n < 4; ++n) {
            CHECK(std::abs(rep.precisions[static_cast<std::size_t>(n)] -
                           c.precisions[static_cast<std::size_t>(n)]) < 1e-6);
        }
        CHECK(rep.hyp_length == c.hyp_length);
        CHECK(rep.ref_length == c.ref_length);
    }
}

TEST_CASE("identical corpora score exactly 100") {
    const std::vector<std::string> corpus = {
        "the cat sat on the mat .",
        "a longer sentence with several distinct words in it",
    };
    const BleuReport rep = corpus_bleu(corpus, corpus);
    CHECK(rep.score == doctest::Approx(100.0));
    CHECK(rep.brevity_penalty == doctest::Approx(1.0));
    for (double p : rep.precisions) {
        CHECK(p == doctest::Approx(1.0));
    }
}

TEST_CASE("self-bleu is 100 on random corpora") {
    Rng rng(414);
    const std::vector<std::string> alphabet = {"alpha", "beta", "gamma", "delta", "eps"};
    std::vector<std::string> corpus;
    for (int s = 0; s < 20; ++s) {
        // at least four tokens so every order has candidates somewhere
        const int len = 4 + static_cast<int>(rng.uniform_int(6));
        std::string sentence;
        for (int i = 0; i < len; ++i) {
            if (i > 0) {
                sentence += ' ';
            }
            sentence += alphabet[rng.uniform_int(alphabet.size())];
        }
        corpus.push_back(sentence);
    }
    CHECK(corpus_bleu(corpus, corpus).score == doctest::Approx(100.0));
}

TEST_CASE("one-token-short hypothesis pays exactly the brevity penalty") {
    const BleuReport rep = corpus_bleu({"a b c d"}, {"a b c d e"});
    for (double p : rep.precisions) {
        CHECK(p == doctest::Approx(1.0));
    }
    CHECK(rep.brevity_penalty == doctest::Approx(std::exp(1.0 - 5.0 / 4.0)));
    CHECK(rep.score == doctest::Approx(77.8801).epsilon(1e-4));
}

TEST_CASE("corpus bleu validates its inputs") {
    CHECK_THROWS_WITH_AS(corpus_bleu({"a", "b"}, {"a"}),
                         doctest::Contains("2 hypotheses but 1 references"), Error);
    CHECK_THROWS_WITH_AS(corpus_bleu({}, {}),
                         doctest::Contains("at least one sentence pair"), Error);
}

TEST_CASE("an empty hypothesis string scores zero") {
    const BleuReport rep = corpus_bleu({""}, {"something to say"});
    CHECK(rep.score == 0.0);
    CHECK(rep.brevity_penalty == 0.0);
    CHECK(rep.hyp_length == 0);
    CHECK(rep.ref_length == 3);
}

TEST_CASE("permuting sentence pairs jointly leaves the score unchanged") {
    const std::vector<std::string> hyps = {
        "der hund läuft schnell weg",
        "die katze schläft auf dem sofa heute",
        "ein vogel singt",
    };
    const std::vector<std::string> refs = {
        "der hund läuft sehr schnell",
        "die katze schläft auf dem sofa",
        "ein vogel singt laut",
    };
    const BleuReport base = corpus_bleu(hyps, refs);
    const BleuReport flipped = corpus_bleu({hyps[2], hyps[0], hyps[1]},
                                           {refs[2], refs[0], refs[1]});
    CHECK(base.score == flipped.score);
    CHECK(base.brevity_penalty == flipped.brevity_penalty);
    for (int n = 0; n < 4; ++n) {
        CHECK(base.precisions[static_cast<std::size_t>(n)] ==
              flipped.precisions[static_cast<std::size_t>(n)]);
    }
}

TEST_CASE("sentence bleu: identity, smoothed floor, empty cases") {
    CHECK(sentence_bleu("one two three four five", "one two three four five").score ==
          doctest::Approx(100.0));

    // Two 25-token sentences with no common token: every smoothed precision
    // is 1/(t+1), which keeps the score strictly positive but far below 5.
    std::string hyp;
    std::string ref;
    for (int i = 0; i < 25; ++i) {
        if (i > 0) {
            hyp += ' ';
            ref += ' ';
        }
        hyp += "h" + std::to_string(i);
        ref += "r" + std::to_string(i);
    }
    const BleuReport floor = sentence_bleu(hyp, ref);
    CHECK(floor.score > 0.0);
    CHECK(floor.score < 5.0);
    CHECK(floor.precisions[0] == doctest::Approx(1.0 / 26.0));
    CHECK(floor.precisions[3] == doctest::Approx(1.0 / 23.0));

    CHECK(sentence_bleu("", "a nonempty reference").score == 0.0);
    CHECK_THROWS_WITH_AS(sentence_bleu("anything", ""),
                         doctest::Contains("reference is empty"), Error);
}

TEST_CASE("appending correct continuations never lowers smoothed p1") {
    const std::vector<std::string> ref_tokens = {"the", "quick", "brown", "fox",
                                                 "jumps", "over", "a",    "lazy",
                                                 "dog",  "today"};
    std::string ref;
    for (std::size_t i = 0; i < ref_tokens.size(); ++i) {
        if (i > 0) {
            ref += ' ';
        }
        ref += ref_tokens[i];
    }
    std::string hyp = "the quick wrongtoken";
    double prev_p1 = sentence_bleu(hyp, ref).precisions[0];
    for (std::size_t i = 2; i < ref_tokens.size(); ++i) {
        hyp += ' ';
        hyp += ref_tokens[i];
        const double p1 = sentence_bleu(hyp, ref).precisions[0];
        CHECK(p1 >= prev_p1);
        prev_p1 = p1;
    }
}

TEST_CASE("report text renders percentages and lengths") {
    const BleuReport rep = corpus_bleu({"a b c d"}, {"a b c d e"});
    CHECK(bleu_report_text(rep) ==
          "bleu 77.88\n"
          "p1   100.00\n"
          "p2   100.00\n"
          "p3   100.00\n"
          "p4   100.00\n"
          "bp   0.7788\n"
          "len  hyp=4 ref=5\n");
}

TEST_CASE("summarize_runs aggregates per metric in input order") {
    const std::vector<RunScores> runs = {
        {"seed1", {{"test_bleu", 10.0}, {"val_bleu", 1.5}}},
        {"seed2", {{"test_bleu", 20.0}, {"val_bleu", 2.5}}},
        {"seed3", {{"test_bleu", 30.0}, {"val_bleu", 3.5}}},
    };
    const std::vector<MetricSummary> summaries = summarize_runs(runs);
    REQUIRE(summaries.size() == 2);
    CHECK(summaries[0].metric == "test_bleu");
    CHECK(summaries[0].mean == doctest::Approx(20.0));
    CHECK(summaries[0].min == doctest::Approx(10.0));
    CHECK(summaries[0].max == doctest::Approx(30.0));
    REQUIRE(summaries[0].values.size() == 3);
    CHECK(summaries[0].values[1] == doctest::Approx(20.0));
    CHECK(summaries[1].metric == "val_bleu");
    CHECK(summaries[1].mean == doctest::Approx(2.5));

    CHECK(summary_tsv(runs, summaries) ==
          "metric\tseed1\tseed2\tseed3\tmean\tmin\tmax\n"
          "test_bleu\t10.00\t20.00\t30.00\t20.00\t10.00\t30.00\n"
          "val_bleu\t1.50\t2.50\t3.50\t2.50\t1.50\t3.50\n");
}

TEST_CASE("summarize_runs handles single runs and rejects mismatches") {
    const std::vector<MetricSummary> single =
        summarize_runs({{"only", {{"bleu", 42.5}}}});
    REQUIRE(single.size() == 1);
    CHECK(single[0].mean == doctest::Approx(42.5));
    CHECK(single[0].min == doctest::Approx(42.5));
    CHECK(single[0].max == doctest::Approx(42.5));

    CHECK_THROWS_WITH_AS(summarize_runs({}), doctest::Contains("zero runs"), Error);
    CHECK_THROWS_WITH_AS(
        summarize_runs({{"a", {{"bleu", 1.0}}}, {"b", {{"meteor", 2.0}}}}),
        doctest::Contains("expected 'bleu'"), Error);
    CHECK_THROWS_WITH_AS(
        summarize_runs({{"a", {{"bleu", 1.0}}}, {"b", {{"bleu", 2.0}, {"x", 3.0}}}}),
        doctest::Contains("reports 2 metrics"), Error);
    CHECK_THROWS_WITH_AS(
        summarize_runs({{"a", {{"x", 1.0}, {"y", 2.0}}}, {"b", {{"y", 2.0}, {"x", 1.0}}}}),
        doctest::Contains("expected 'x'"), Error);
}
