#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace aspectnmt {

// Corpus- or sentence-level BLEU-4 result. `score` is on the 0..100 scale;
// `precisions` holds the modified n-gram precisions p1..p4 (0..1).
struct BleuReport {
    double score = 0.0;
    std::array<double, 4> precisions{};
    double brevity_penalty = 0.0;
    std::size_t hyp_length = 0;
    std::size_t ref_length = 0;
};

// Standard corpus BLEU-4 with brevity penalty over word-tokenized text.
// Clipped n-gram matches and totals are summed over all sentence pairs
// before the precisions are formed. Any zero precision zeroes the score.
// Both lists must be the same length and non-empty.
BleuReport corpus_bleu(const std::vector<std::string>& hyps,
                       const std::vector<std::string>& refs);

// Sentence BLEU-4 with add-one smoothing on every precision, so a non-empty
// hypothesis never scores exactly zero. Used for model selection during
// training. An empty hypothesis scores 0; an empty reference is an error.
BleuReport sentence_bleu(const std::string& hyp, const std::string& ref);

// Human-readable rendering of a report: one aligned "name  value" line per
// field, score and precisions as percentages.
std::string bleu_report_text(const BleuReport& report);

// One training/evaluation run: a label (e.g. the seed) plus ordered
// (metric name, value) pairs. All runs passed to summarize_runs must list
// the same metrics in the same order.
struct RunScores {
    std::string label;
    std::vector<std::pair<std::string, double>> metrics;
};

// Per-metric aggregate across runs; `values` keeps the per-run scores in
// input order.
struct MetricSummary {
    std::string metric;
    std::vector<double> values;
    double mean = 0.0;
    double min = 0.0;
    double max = 0.0;
};

// Aggregates runs metric by metric, preserving the metric order of the
// input. Errors if the runs disagree on metric names or order.
std::vector<MetricSummary> summarize_runs(const std::vector<RunScores>& runs);

// TSV table: one row per metric with the per-run values (columns named by
// run label) followed by mean/min/max, all to two decimals.
std::string summary_tsv(const std::vector<RunScores>& runs,
                        const std::vector<MetricSummary>& summaries);

} // namespace aspectnmt
