#include "aspectnmt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "aspectnmt/errors.hpp"
#include "aspectnmt/textfmt.hpp"
#include "aspectnmt/tokenize.hpp"

namespace aspectnmt {

namespace {

constexpr int kMaxOrder = 4;

// Joins tokens[i..i+n) into a single hashable key. U+001F (unit separator)
// cannot appear inside a token, so distinct n-grams never collide.
std::string ngram_key(const std::vector<std::string>& tokens, std::size_t i, int n) {
    std::string key = tokens[i];
    for (int k = 1; k < n; ++k) {
        key += '\x1f';
        key += tokens[i + static_cast<std::size_t>(k)];
    }
    return key;
}

// Adds one sentence pair's clipped n-gram matches and candidate totals to
// the running corpus tallies.
void tally_pair(const std::vector<std::string>& hyp,
                const std::vector<std::string>& ref,
                std::array<long long, kMaxOrder>& matches,
                std::array<long long, kMaxOrder>& totals) {
    for (int n = 1; n <= kMaxOrder; ++n) {
        if (hyp.size() + 1 < static_cast<std::size_t>(n) + 1) {
            continue; // no n-grams of this order in the hypothesis
        }
        const std::size_t hyp_count = hyp.size() - static_cast<std::size_t>(n) + 1;
        totals[static_cast<std::size_t>(n - 1)] += static_cast<long long>(hyp_count);

        std::unordered_map<std::string, long long> ref_counts;
        if (ref.size() >= static_cast<std::size_t>(n)) {
            for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= ref.size(); ++i) {
                ++ref_counts[ngram_key(ref, i, n)];
            }
        }
        std::unordered_map<std::string, long long> hyp_counts;
        for (std::size_t i = 0; i < hyp_count; ++i) {
            ++hyp_counts[ngram_key(hyp, i, n)];
        }
        for (const auto& [gram, count] : hyp_counts) {
            auto it = ref_counts.find(gram);
            if (it != ref_counts.end()) {
                matches[static_cast<std::size_t>(n - 1)] += std::min(count, it->second);
            }
        }
    }
}

// Turns accumulated tallies into a report. With `add_one` every precision
// is (m+1)/(t+1), which keeps the geometric mean strictly positive for any
// non-empty hypothesis.
BleuReport finish_report(const std::array<long long, kMaxOrder>& matches,
                         const std::array<long long, kMaxOrder>& totals,
                         std::size_t hyp_length, std::size_t ref_length,
                         bool add_one) {
    BleuReport report;
    report.hyp_length = hyp_length;
    report.ref_length = ref_length;

    const double bump = add_one ? 1.0 : 0.0;
    for (int n = 0; n < kMaxOrder; ++n) {
        const double m = static_cast<double>(matches[static_cast<std::size_t>(n)]) + bump;
        const double t = static_cast<double>(totals[static_cast<std::size_t>(n)]) + bump;
        report.precisions[static_cast<std::size_t>(n)] = t > 0.0 ? m / t : 0.0;
    }

    if (hyp_length == 0) {
        return report; // empty hypothesis corpus: score 0, brevity penalty 0
    }
    report.brevity_penalty =
        hyp_length > ref_length
            ? 1.0
            : std::exp(1.0 - static_cast<double>(ref_length) / static_cast<double>(hyp_length));

    double log_sum = 0.0;
    for (double p : report.precisions) {
        if (p <= 0.0) {
            return report; // any zero precision zeroes the unsmoothed score
        }
        log_sum += std::log(p);
    }
    report.score = 100.0 * report.brevity_penalty * std::exp(log_sum / kMaxOrder);
    return report;
}

} // namespace

BleuReport corpus_bleu(const std::vector<std::string>& hyps,
                       const std::vector<std::string>& refs) {
    if (hyps.size() != refs.size()) {
        fail(ErrorCategory::DataFormat,
             "corpus BLEU got " + std::to_string(hyps.size()) + " hypotheses but " +
                 std::to_string(refs.size()) + " references");
    }
    if (hyps.empty()) {
        fail(ErrorCategory::DataFormat, "corpus BLEU needs at least one sentence pair");
    }

    std::array<long long, kMaxOrder> matches{};
    std::array<long long, kMaxOrder> totals{};
    std::size_t hyp_length = 0;
    std::size_t ref_length = 0;
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        const std::vector<std::string> hyp = word_tokenize(hyps[i]);
        const std::vector<std::string> ref = word_tokenize(refs[i]);
        hyp_length += hyp.size();
        ref_length += ref.size();
        tally_pair(hyp, ref, matches, totals);
    }
    return finish_report(matches, totals, hyp_length, ref_length, /*add_one=*/false);
}

BleuReport sentence_bleu(const std::string& hyp, const std::string& ref) {
    const std::vector<std::string> hyp_tokens = word_tokenize(hyp);
    const std::vector<std::string> ref_tokens = word_tokenize(ref);
    if (ref_tokens.empty()) {
        fail(ErrorCategory::DataFormat, "sentence BLEU reference is empty");
    }

    std::array<long long, kMaxOrder> matches{};
    std::array<long long, kMaxOrder> totals{};
    tally_pair(hyp_tokens, ref_tokens, matches, totals);
    return finish_report(matches, totals, hyp_tokens.size(), ref_tokens.size(),
                         /*add_one=*/true);
}

std::string bleu_report_text(const BleuReport& report) {
    std::string text;
    text += "bleu " + format_fixed(report.score, 2) + "\n";
    for (int n = 0; n < 4; ++n) {
        text += "p" + std::to_string(n + 1) + "   " +
                format_fixed(100.0 * report.precisions[static_cast<std::size_t>(n)], 2) + "\n";
    }
    text += "bp   " + format_fixed(report.brevity_penalty, 4) + "\n";
    text += "len  hyp=" + std::to_string(report.hyp_length) +
            " ref=" + std::to_string(report.ref_length) + "\n";
    return text;
}

std::vector<MetricSummary> summarize_runs(const std::vector<RunScores>& runs) {
    if (runs.empty()) {
        fail(ErrorCategory::DataFormat, "cannot summarize zero runs");
    }
    const auto& first = runs.front().metrics;
    for (const auto& run : runs) {
        if (run.metrics.size() != first.size()) {
            fail(ErrorCategory::DataFormat,
                 "run '" + run.label + "' reports " + std::to_string(run.metrics.size()) +
                     " metrics; expected " + std::to_string(first.size()));
        }
        for (std::size_t i = 0; i < first.size(); ++i) {
            if (run.metrics[i].first != first[i].first) {
                fail(ErrorCategory::DataFormat,
                     "run '" + run.label + "' metric " + std::to_string(i) + " is '" +
                         run.metrics[i].first + "'; expected '" + first[i].first + "'");
            }
        }
    }

    std::vector<MetricSummary> summaries;
    summaries.reserve(first.size());
    for (std::size_t i = 0; i < first.size(); ++i) {
        MetricSummary summary;
        summary.metric = first[i].first;
        summary.values.reserve(runs.size());
        for (const auto& run : runs) {
            summary.values.push_back(run.metrics[i].second);
        }
        summary.mean = 0.0;
        summary.min = summary.values.front();
        summary.max = summary.values.front();
        for (double v : summary.values) {
            summary.mean += v;
            summary.min = std::min(summary.min, v);
            summary.max = std::max(summary.max, v);
        }
        summary.mean /= static_cast<double>(summary.values.size());
        summaries.push_back(std::move(summary));
    }
    return summaries;
}

std::string summary_tsv(const std::vector<RunScores>& runs,
                        const std::vector<MetricSummary>& summaries) {
    std::string text = "metric";
    for (const auto& run : runs) {
        text += "\t" + run.label;
    }
    text += "\tmean\tmin\tmax\n";
    for (const auto& summary : summaries) {
        text += summary.metric;
        for (double v : summary.values) {
            text += "\t" + format_fixed(v, 2);
        }
        text += "\t" + format_fixed(summary.mean, 2);
        text += "\t" + format_fixed(summary.min, 2);
        text += "\t" + format_fixed(summary.max, 2);
        text += "\n";
    }
    return text;
}

} // namespace aspectnmt
