#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "aspectnmt/aspects.hpp"
#include "aspectnmt/encoder.hpp"
#include "aspectnmt/nn.hpp"
#include "aspectnmt/serialize.hpp"
#include "aspectnmt/tokenize.hpp"

// Transformer encoder-decoder translation model with an optional integration
// module that augments source token embeddings with per-token linguistic
// embeddings read from a frozen aspect extractor.
namespace aspectnmt {

// What, if anything, is mixed into the source embeddings: nothing, the
// aspect vectors, or the aspect vectors plus the leftover chunk.
enum class IntegrationMode { Off, Aspects, AspectsLeftover };

const char* integration_mode_name(IntegrationMode mode);
IntegrationMode parse_integration_mode(const std::string& name);

struct TransformerConfig {
    int layers = 2; // encoder and decoder depth
    int model_dim = 64;
    int ff_dim = 128;
    int heads = 4;
    double dropout = 0.1;
    double label_smoothing = 0.1;
    double opt_factor = 2.0;
    int opt_warmup = 400;
    int grad_accumulation = 1; // optimizer steps once per this many batches
    int batch_tokens = 512;    // cap on max(src,tgt) tokens per batch
    int epochs = 20;
    int max_positions = 4096;
    int beam_size = 4;
    double length_norm_alpha = 0.6;
    IntegrationMode integration = IntegrationMode::Off;
    // Width of the per-token linguistic embedding consumed by the
    // integration module; must be 0 when integration is off.
    int linguistic_width = 0;

    // Error{Config} on nonsense (non-positive dims, model_dim not divisible
    // by heads, rates outside their ranges, missing linguistic width).
    void validate() const;

    // Round-trippable text form embedded in checkpoints.
    std::string echo(int vocab_size) const;
    static TransformerConfig from_echo(const std::string& text, int* vocab_size_out);
};

// One training pair of sub-word ids, without BOS/EOS (the model adds them).
struct NmtPair {
    std::vector<int> src;
    std::vector<int> tgt;
};

// A validation example: tokenized source plus the reference text the decoded
// hypothesis is scored against.
struct NmtValExample {
    std::vector<int> src;
    std::string ref_text;
};

// One validation-decode point in the training log.
struct NmtEvalPoint {
    double epoch_fraction = 0.0; // epochs completed, fractional within epoch
    long step = 0;               // optimizer updates so far
    double train_loss = 0.0;     // token-weighted mean since the last point
    double val_bleu = 0.0;       // mean smoothed sentence BLEU on the val set
    bool selected = false;       // true when this point became the new best
};

struct NmtTrainLog {
    std::vector<NmtEvalPoint> points;
    int best_point = -1; // index into points, -1 when nothing was selected
    double best_bleu = 0.0;
};

// TSV with one row per evaluation point.
std::string training_log_tsv(const NmtTrainLog& log);

// Beam-search length normalization ((5 + length) / 6)^alpha; hypotheses are
// ranked by logprob / length_penalty.
double length_penalty(int length, double alpha);
double normalized_score(double logprob, int length, double alpha);

class NmtModel {
  public:
    NmtModel(const TransformerConfig& config, SubwordVocab vocab, std::uint64_t seed);

    // The parameter registry points into this object, so instances pin their
    // addresses. Factory returns rely on mandatory copy elision.
    NmtModel(const NmtModel&) = delete;
    NmtModel& operator=(const NmtModel&) = delete;

    const TransformerConfig& config() const { return config_; }
    const SubwordVocab& vocab() const { return vocab_; }
    int vocab_size() const { return vocab_size_; }

    // Hands the model its frozen linguistic source (required before training
    // or decoding when integration is on). Neither pointer is owned; both
    // objects must outlive the model's use of them, and their parameters are
    // never registered here, so training cannot touch them.
    void attach_linguistics(const Encoder* encoder, const AspectExtractor* extractor);

    // Token-batched label-smoothed training with warmup-scheduled Adam.
    // After each tenth of an epoch's sentences (nine points per epoch) the
    // validation set is decoded with the configured beam and scored with
    // smoothed sentence BLEU; the best-scoring parameters are kept and
    // restored into the model when training finishes. Pure function of
    // (initial parameters, corpora, config, seed).
    NmtTrainLog train(const std::vector<NmtPair>& pairs,
                      const std::vector<NmtValExample>& val, std::uint64_t seed);

    // Beam-search decode of one tokenized sentence (ids without specials).
    // Returns generated ids without BOS/EOS. Empty input decodes to empty
    // output by contract.
    std::vector<int> translate_ids(const std::vector<int>& src_ids) const;
    std::vector<int> translate_ids(const std::vector<int>& src_ids, int beam_size,
                                   double alpha) const;

    // Stepwise argmax reference decoder; beam_size 1 must match it exactly.
    std::vector<int> greedy_translate_ids(const std::vector<int>& src_ids) const;

    // Raw text in, detokenized translation out (word_tokenize + sub-word
    // segmentation on the way in).
    std::string translate_text(const std::string& line) const;

    // Next-token distributions (softmax rows, one per target-input position)
    // computed along the training forward path without dropout. Reference
    // semantics for the fast incremental decoder; also the seam for the
    // causal-masking and normalization contracts.
    Eigen::MatrixXd decoder_distributions(const std::vector<int>& src_ids,
                                          const std::vector<int>& tgt_in_ids) const;

    Checkpoint to_checkpoint() const;
    static NmtModel from_checkpoint(const Checkpoint& ckpt, SubwordVocab vocab);

    void save(const std::string& path) const;
    static NmtModel load(const std::string& path, SubwordVocab vocab);

    nn::ParamStore& params() { return store_; }
    const nn::ParamStore& params() const { return store_; }

  private:
    NmtModel(const Checkpoint& ckpt, SubwordVocab vocab);
    void init_params(std::uint64_t seed);

    // Concatenated-row views of one batch; ling rows (when integration is
    // on) carry one linguistic embedding per source row, EOS row zeroed.
    struct FlatBatch {
        std::vector<int> src_flat, tgt_flat, gold_flat;
        std::vector<int> src_offsets, tgt_offsets;
        Eigen::MatrixXd ling; // src rows x linguistic_width, empty when off
    };

    ad::Var forward_logits(ad::Tape& tape, const FlatBatch& batch, bool training,
                           Rng* dropout_rng) const;

    // Per-token linguistic embeddings for one source sentence, with a zero
    // row appended for the EOS position.
    Eigen::MatrixXd linguistic_rows(const std::vector<int>& src_ids) const;

    // Plain-path source encoding for decoding (no tape).
    Eigen::MatrixXd encode_source_plain(const std::vector<int>& src_ids) const;

    void require_linguistics() const;
    void check_ids(const std::vector<int>& ids, const char* what,
                   std::size_t sentence) const;

    TransformerConfig config_;
    SubwordVocab vocab_;
    int vocab_size_ = 0;

    ad::Param embedding_; // vocab_size x model_dim, shared source/target/output
    nn::Linear ling_map_; // linguistic_width -> model_dim, integration only
    nn::Linear join_;     // [token || mapped] (2 d_model) -> model_dim
    std::vector<nn::EncoderLayer> enc_;
    nn::LayerNorm enc_norm_;
    std::vector<nn::DecoderLayer> dec_;
    nn::LayerNorm dec_norm_;
    ad::Param out_bias_; // 1 x vocab_size

    Eigen::MatrixXd positions_;
    nn::ParamStore store_;

    const Encoder* ling_encoder_ = nullptr;
    const AspectExtractor* extractor_ = nullptr;
};

} // namespace aspectnmt
