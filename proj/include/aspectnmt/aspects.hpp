#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aspectnmt/autodiff.hpp"
#include "aspectnmt/corpus.hpp"
#include "aspectnmt/encoder.hpp"
#include "aspectnmt/nn.hpp"
#include "aspectnmt/tokenize.hpp"

namespace aspectnmt {

// The aspect extractor factors a mixed sentence embedding into one dense
// vector per linguistic attribute plus a trailing leftover slot that absorbs
// whatever the attributes do not cover. Training pulls each slot toward its
// attribute (classification), keeps the full set informative (reconstruction)
// and pushes the slots apart (similarity penalty).

// One sub-word vector per aspect, leftover last; all of width aspect_width.
struct AspectVectors {
    std::vector<Eigen::VectorXd> vectors;
};

// The three training terms and their sum. total is always computed as the
// plain sum of the three parts, so additivity is exact by construction.
struct LossBreakdown {
    double classification = 0.0; // mean weighted cross-entropy over aspects
    double reconstruction = 0.0; // mean squared distance to the mixed input
    double similarity = 0.0;     // 1 - mean squared slot distance (<= 1)
    double total = 0.0;

    static LossBreakdown combine(double cls, double rec, double sim) {
        return {cls, rec, sim, cls + rec + sim};
    }
};

// One sentence prepared for extractor work: sub-word ids, per-sub-word gold
// indices for every aspect, and word-level gold labels for the word report
// (the SWP column stays empty: a whole word has no sub-word position).
struct PreparedSentence {
    std::vector<int> ids;
    std::vector<int> word_index; // per sub-word
    std::vector<std::vector<int>> sub_gold;          // [aspect][sub-word]
    std::vector<std::vector<std::string>> word_gold; // [aspect][word]
};

// Fixed label inventory of the sub-word position aspect.
AspectSpec swp_spec();

// Shape inventory observed over tokenized sentences, sorted and unique.
AspectSpec shape_spec(const std::vector<SubwordSequence>& sequences);

// Tokenizes each sentence and attaches gold labels per aspect spec: CPOS and
// FPOS are projected from words onto sub-words through the alignment module,
// WSH and SWP come from the sub-word surfaces themselves. Throws
// Error{DataFormat} when a gold label falls outside its spec's tag set and
// Error{Config} for an aspect name it does not know how to source.
std::vector<PreparedSentence> prepare_aspect_corpus(
    const std::vector<TaggedSentence>& sentences, const SubwordVocab& vocab,
    const std::vector<AspectSpec>& aspects);

class AspectExtractor {
  public:
    // aspects: the n taggable attributes in report order (leftover is
    // implicit). hidden must equal (n+1) * aspect_width; stack_arity is the
    // encoder's layer count + 1.
    AspectExtractor(const std::vector<AspectSpec>& aspects, int model_dim,
                    int stack_arity, int hidden, int aspect_width,
                    std::uint64_t seed);

    // The parameter registry points into this object (see Encoder).
    AspectExtractor(const AspectExtractor&) = delete;
    AspectExtractor& operator=(const AspectExtractor&) = delete;

    int aspect_count() const { return static_cast<int>(aspects_.size()); }
    int aspect_width() const { return aspect_width_; }
    int hidden() const { return hidden_; }
    int model_dim() const { return model_dim_; }
    int stack_arity() const { return mix_.arity(); }
    const std::vector<AspectSpec>& aspects() const { return aspects_; }
    int aspect_index(const std::string& name) const; // -1 when absent

    // Mixed embedding E of a sentence under the current mix weights.
    Eigen::MatrixXd mixed_embedding(const LayerStack& stack) const;

    // Shared nonlinear map for a block of embedding rows -> rows x hidden.
    Eigen::MatrixXd shared_hidden(const Eigen::MatrixXd& embeddings) const;

    // Split one embedding row into n+1 aspect vectors (leftover last).
    AspectVectors extract(const Eigen::RowVectorXd& embedding_row) const;

    // Tag distribution of one aspect vector; the leftover has no classifier.
    Eigen::VectorXd classify(const AspectVectors& av, int aspect) const;

    // Affine map from all n+1 vectors back to an embedding-sized vector.
    Eigen::VectorXd reconstruct(const AspectVectors& av) const;

    // Per-token concatenation of the n taggable aspect vectors, the package
    // handed to translation (include_leftover widens it by one slot).
    Eigen::MatrixXd linguistic_embedding(const LayerStack& stack,
                                         bool include_leftover = false) const;

    ScalarMix& mix() { return mix_; }
    const ScalarMix& mix() const { return mix_; }
    nn::ParamStore& params() { return store_; }
    const nn::ParamStore& params() const { return store_; }
    const nn::Linear& shared_map() const { return shared_; }
    const nn::Linear& classifier(int aspect) const;
    const nn::Linear& reconstructor() const { return recon_; }

    Checkpoint to_checkpoint() const;
    static AspectExtractor from_checkpoint(const Checkpoint& ckpt);
    void save(const std::string& path) const;
    static AspectExtractor load(const std::string& path);

  private:
    explicit AspectExtractor(const Checkpoint& ckpt);
    void init_params(std::uint64_t seed);

    std::vector<AspectSpec> aspects_;
    int model_dim_ = 0;
    int hidden_ = 0;
    int aspect_width_ = 0;
    int stack_arity_ = 0;
    ScalarMix mix_;
    nn::Linear shared_;
    std::vector<nn::Linear> classifiers_;
    nn::Linear recon_;
    nn::ParamStore store_;
};

// A batch ready for the loss: per-layer matrices vstacked over the batch
// sentences (mixing commutes with row concatenation) plus gold indices.
struct ExtractorBatch {
    std::vector<Eigen::MatrixXd> stack;    // stack_arity matrices, rows = tokens
    std::vector<std::vector<int>> gold;    // [aspect][token]
};

struct ExtractorLossOptions {
    // [aspect][tag] multipliers; empty means unweighted.
    std::vector<std::vector<double>> class_weights;
    bool include_leftover_similarity = false;
};

// Builds the full three-part loss on the tape and returns its parts; *root
// receives the scalar total for backward(). Gradients reach the mix logits
// and every extractor parameter; the layer stack is fixed input.
LossBreakdown extractor_loss(ad::Tape& tape, AspectExtractor& extractor,
                             const ExtractorBatch& batch,
                             const ExtractorLossOptions& options, ad::Var* root);

// Inverse-frequency tag weights from the prepared corpus, scaled to mean 1
// over the tags that actually occur; absent tags get weight 0.
std::vector<std::vector<double>> inverse_frequency_weights(
    const std::vector<PreparedSentence>& corpus,
    const std::vector<AspectSpec>& aspects);

struct AspectTrainOptions {
    int epochs = 3;
    int batch_sentences = 32;
    double learn_rate = 0.05;
    double momentum = 0.9;
    double grad_clip = 5.0;
    double plateau_decay = 0.9; // lr multiplier on plateau
    int plateau_patience = 200; // batches without smoothed-loss improvement
    bool include_leftover_similarity = false;
    bool class_weighting = true;
};

struct AspectTrainLog {
    std::vector<LossBreakdown> epochs; // token-weighted epoch means
    double final_learn_rate = 0.0;
};

// SGD-with-momentum training of the extractor against a frozen encoder body;
// only the extractor's parameters (mix logits included) move. Layer stacks
// are computed once per sentence and cached. Deterministic given the seed.
AspectTrainLog train_aspect_extractor(AspectExtractor& extractor,
                                      const Encoder& encoder,
                                      const std::vector<PreparedSentence>& corpus,
                                      const AspectTrainOptions& options,
                                      std::uint64_t seed);

// ---- evaluation ----

// predictions[aspect][sentence][sub-word] = predicted tag index.
using TagPredictions = std::vector<std::vector<std::vector<int>>>;

TagPredictions predict_tags(const AspectExtractor& extractor,
                            const Encoder& encoder,
                            const std::vector<PreparedSentence>& corpus);

struct F1Pair {
    double micro = 0.0; // percent
    double macro = 0.0; // percent
};

// Multi-class F1 over string labels. micro equals accuracy here (every item
// carries exactly one gold and one predicted label); macro averages per-class
// F1 over base_classes plus any label observed in gold or predictions,
// skipping classes with neither support nor predictions.
F1Pair f1_scores(const std::vector<std::string>& gold,
                 const std::vector<std::string>& pred,
                 const std::vector<std::string>& base_classes);

struct F1Line {
    std::string aspect;
    std::string level; // "sub-word" or "word"
    long n_tokens = 0;
    double micro = 0.0;
    double macro = 0.0;
};

struct F1Report {
    std::vector<F1Line> lines;
};

// Tagging quality per aspect at sub-word level, plus word level through the
// first-sub-word rule (a word's label is its first sub-word's prediction; the
// word-level gold for WSH is the shape of the whole word). SWP is sub-word
// only. Throws Error{DataFormat} on an empty corpus.
F1Report evaluate_f1(const AspectExtractor& extractor, const Encoder& encoder,
                     const std::vector<PreparedSentence>& corpus);

std::string f1_report_tsv(const F1Report& report);

struct ProbeResult {
    std::string source_aspect;
    std::string target_aspect;
    double f1_avg = 0.0;   // micro F1 (percent) of the trained probe
    std::string mfc_class; // most frequent gold class of the target aspect
    double mfc_pct = 0.0;  // its share, percent
    long n_tokens = 0;
};

// Trains a fresh affine classifier from the frozen source-aspect vectors to
// the target aspect's tags (optimizer defaults as in extractor training,
// unweighted loss) and reports how well the source slot predicts the target.
// source == target is the degenerate control and reduces to in-aspect
// probing.
ProbeResult counterfactual_probe(const AspectExtractor& extractor,
                                 const Encoder& encoder,
                                 const std::vector<PreparedSentence>& corpus,
                                 const std::string& source_aspect,
                                 const std::string& target_aspect,
                                 std::uint64_t seed);

std::string probe_report_tsv(const std::vector<ProbeResult>& rows);

struct ReconReport {
    double mean_distance = 0.0; // mean over counted tokens, in [0, 2]
    long tokens = 0;            // counted tokens
    long skipped = 0;           // zero-norm tokens left out
};

// Unit-normalizes each token's reconstruction and its mixed embedding and
// reports the mean Euclidean distance between them.
ReconReport reconstruction_distance(const AspectExtractor& extractor,
                                    const Encoder& encoder,
                                    const std::vector<PreparedSentence>& corpus);

} // namespace aspectnmt
