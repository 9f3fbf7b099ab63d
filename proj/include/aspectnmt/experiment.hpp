#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "aspectnmt/aspects.hpp"
#include "aspectnmt/corpus.hpp"
#include "aspectnmt/encoder.hpp"
#include "aspectnmt/eval.hpp"
#include "aspectnmt/ini.hpp"
#include "aspectnmt/tokenize.hpp"
#include "aspectnmt/translate.hpp"

namespace aspectnmt {

// End-to-end protocol wiring: one generated corpus sliced into extractor and
// translation portions, a shared sub-word vocabulary, a pretrained contextual
// encoder, a trained aspect extractor with its quality reports, and paired
// vanilla/augmented translation runs summarized as a BLEU table.

// How many sentence pairs each pipeline stage receives. The slices are cut
// from one deterministic generation pass in this declaration order.
struct CorpusPlan {
    std::string grammar_path;
    int aspect_train = 5000;
    int aspect_val = 500;
    int nmt_train = 2000;
    int nmt_val = 200;
    int nmt_test = 200;

    int total() const {
        return aspect_train + aspect_val + nmt_train + nmt_val + nmt_test;
    }
};

struct ExperimentConfig {
    CorpusPlan corpus;
    int vocab_size = 200;

    EncoderConfig encoder;
    PretrainOptions encoder_train;

    int aspect_width = 200; // extractor hidden = (aspects + 1) * width
    AspectTrainOptions aspect_train;

    // Geometry and optimizer of both translation arms; integration and
    // linguistic_width describe the augmented arm (the vanilla arm always
    // runs with integration off) and must not be off/nonzero respectively.
    TransformerConfig nmt;

    int eval_seeds = 3; // paired translation runs per arm

    void validate() const;
    // Strict reader: unknown sections or keys are errors, and the grammar
    // path must exist. Sections: [corpus] [tokenizer] [encoder] [aspects]
    // [nmt] [eval]; every field above maps to one key.
    static ExperimentConfig from_ini(const IniFile& ini);
    static ExperimentConfig load(const std::string& path);
};

struct ExperimentSlices {
    std::vector<ParallelPair> aspect_train;
    std::vector<ParallelPair> aspect_val;
    std::vector<ParallelPair> nmt_train;
    std::vector<ParallelPair> nmt_val;
    std::vector<ParallelPair> nmt_test;
};

// One generation pass of plan.total() pairs, split in declaration order.
ExperimentSlices generate_slices(const GrammarSpec& grammar,
                                 const CorpusPlan& plan, std::uint64_t seed);

// Vocabulary over the training material only: source words of both training
// slices plus target words of the translation training slice.
SubwordVocab build_shared_vocab(const ExperimentSlices& slices, int vocab_size);

// The four studied attributes in report order: CPOS and FPOS inventories from
// the grammar, WSH from the shapes observed in the tokenized sentences, SWP
// fixed.
std::vector<AspectSpec> experiment_aspects(
    const GrammarSpec& grammar, const std::vector<TaggedSentence>& sentences,
    const SubwordVocab& vocab);

// Sub-word ids plus detokenized reference text for the translation slices.
std::vector<NmtPair> nmt_pairs(const std::vector<ParallelPair>& pairs,
                               const SubwordVocab& vocab);
std::vector<NmtValExample> nmt_val_examples(const std::vector<ParallelPair>& pairs,
                                            const SubwordVocab& vocab);

struct ExperimentOptions {
    std::string out_dir;
    std::uint64_t seed_base = 1;
    bool parallel_seeds = false; // run the paired seeds concurrently
    std::ostream* progress = nullptr;
};

// One translation run of the summary table.
struct NmtRunResult {
    std::string arm; // "vanilla" or "aspects"
    std::uint64_t seed = 0;
    double test_bleu = 0.0;
    double best_val_bleu = 0.0;
};

struct ExperimentResult {
    F1Report f1;
    std::vector<ProbeResult> probes;
    ReconReport recon;
    std::vector<NmtRunResult> runs;
    std::string bleu_summary; // rendered TSV, also written to disk
};

// Runs the full protocol and writes every artifact under options.out_dir:
// corpus/ (slices), vocab.txt, encoder.ckpt, extractor.ckpt, f1_report.tsv,
// probe_report.tsv, recon.txt, models/, training_logs/, bleu_summary.tsv.
// Deterministic given (config, seed_base); parallel_seeds changes scheduling
// only, never artifact bytes. Worker count is capped by ASPECTNMT_THREADS.
ExperimentResult run_experiment(const ExperimentConfig& config,
                                const ExperimentOptions& options);

// Reads ASPECTNMT_THREADS; 0 or unset falls back to fallback_threads.
int max_worker_threads(int fallback_threads);

} // namespace aspectnmt

