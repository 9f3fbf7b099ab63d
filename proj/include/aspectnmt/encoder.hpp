#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aspectnmt/autodiff.hpp"
#include "aspectnmt/nn.hpp"
#include "aspectnmt/serialize.hpp"

namespace aspectnmt {

// Masked-language-model encoder: token embeddings plus sinusoidal positions,
// then a stack of pre-norm self-attention layers. Downstream consumers never
// read just the top layer; encode_layers() hands back every intermediate
// representation so a scalar mix can weight them.
struct EncoderConfig {
    int layers = 4;
    int model_dim = 64;
    int heads = 4;
    int ff_dim = 128;
    int max_positions = 512;
    double mask_rate = 0.15;

    // Throws Error{Config} when a field is out of range (non-positive sizes,
    // model_dim not divisible by heads, mask_rate outside (0, 1)).
    void validate() const;

    // Canonical INI echo embedded in checkpoints so a loaded model rebuilds
    // the exact geometry it was trained with. vocab_size travels alongside
    // the config fields because the embedding table depends on it.
    std::string echo(int vocab_size) const;
    static EncoderConfig from_echo(const std::string& text, int* vocab_size_out);
};

// All per-layer representations of one sentence, each rows x model_dim with
// one row per sub-word. Index 0 is the position-encoded embedding; index i
// (1-based) is the output of layer i. Size is always config.layers + 1.
struct LayerStack {
    std::vector<Eigen::MatrixXd> layers;
};

// Learned softmax weights over the entries of a LayerStack. The logits are a
// trainable column vector; the softmax happens inside the mix.
struct ScalarMix {
    ad::Param logits{"mix.logits", Eigen::MatrixXd()};

    void init(const std::string& name, int arity, nn::ParamStore& store);
    int arity() const { return static_cast<int>(logits.value.rows()); }

    // Weighted sum of the stack under softmax(logits). The Var form routes
    // gradients to the logits only; the stack is fixed input.
    ad::Var apply(ad::Tape& tape, const LayerStack& stack);
    Eigen::MatrixXd apply_plain(const LayerStack& stack) const;
    Eigen::VectorXd weights() const;
};

struct PretrainOptions {
    int epochs = 5;
    int batch_sentences = 32;
    double learn_rate = 1e-3;
    double grad_clip = 5.0;
};

// Token-weighted mean masked cross-entropy per epoch, in order.
struct PretrainLog {
    std::vector<double> epoch_loss;
};

class Encoder {
  public:
    Encoder(const EncoderConfig& config, int vocab_size, std::uint64_t seed);

    // The parameter registry points into this object, so encoders stay where
    // they are constructed (factory returns rely on mandatory elision).
    Encoder(const Encoder&) = delete;
    Encoder& operator=(const Encoder&) = delete;

    const EncoderConfig& config() const { return config_; }
    int vocab_size() const { return vocab_size_; }

    // Masked-LM pretraining over tokenized sentences (rows of vocabulary
    // ids). Each position is masked independently with probability
    // mask_rate; of the masked positions 80% become [MASK], 10% a random
    // non-special token and 10% stay unchanged. Loss is cross-entropy at
    // masked positions against the original ids, with output logits tied to
    // the embedding table. Sentences are reshuffled every epoch; the whole
    // run is a pure function of (parameters, corpus, options, seed).
    PretrainLog pretrain_masked_lm(const std::vector<std::vector<int>>& corpus,
                                   const PretrainOptions& options,
                                   std::uint64_t seed);

    // Deterministic forward pass for one sentence; no parameter updates, no
    // internal state changes. Throws Error{DataFormat} when the sentence is
    // longer than max_positions.
    LayerStack encode_layers(const std::vector<int>& ids) const;

    // Masked prediction accuracy under the same masking procedure as
    // training, driven by its own seed so evaluation never perturbs a
    // training stream.
    double masked_accuracy(const std::vector<std::vector<int>>& corpus,
                           std::uint64_t seed) const;

    Checkpoint to_checkpoint() const;
    static Encoder from_checkpoint(const Checkpoint& ckpt);

    void save(const std::string& path) const;
    static Encoder load(const std::string& path);

    nn::ParamStore& params() { return store_; }
    const nn::ParamStore& params() const { return store_; }

  private:
    explicit Encoder(const Checkpoint& ckpt);
    void init_params(std::uint64_t seed);

    // Tape forward over sentences packed into one matrix; returns the
    // final-norm output. offsets has one entry per sentence plus the total.
    ad::Var forward_batch(ad::Tape& tape, const std::vector<int>& ids,
                          const std::vector<int>& offsets);

    EncoderConfig config_;
    int vocab_size_ = 0;
    ad::Param embedding_; // vocab_size x model_dim
    ad::Param mlm_bias_;  // 1 x vocab_size
    std::vector<nn::EncoderLayer> blocks_;
    nn::LayerNorm final_norm_;
    Eigen::MatrixXd positions_; // max_positions x model_dim, fixed
    nn::ParamStore store_;
};

} // namespace aspectnmt
