#include "aspectnmt/encoder.hpp"

#include <charconv>
#include <cmath>

#include "aspectnmt/errors.hpp"
#include "aspectnmt/ini.hpp"
#include "aspectnmt/textfmt.hpp"

namespace aspectnmt {

namespace {

constexpr const char* kEchoSection = "encoder";

// The tokenizer pins the five specials to ids 0..4; real tokens start at 5.
constexpr int kMaskId = 4;
constexpr int kFirstRealId = 5;

void require_positive(const char* field, int v) {
    if (v <= 0)
        fail(ErrorCategory::Config,
             std::string("encoder config: ") + field + " must be positive, got " +
                 std::to_string(v));
}

int echo_int(const IniFile& ini, const std::string& key) {
    const IniEntry* e = ini.find_one(kEchoSection, key);
    if (!e)
        fail(ErrorCategory::DataFormat,
             ini.source + ": missing encoder config key '" + key + "'");
    int v = 0;
    auto [ptr, ec] = std::from_chars(e->value.data(), e->value.data() + e->value.size(), v);
    if (ec != std::errc() || ptr != e->value.data() + e->value.size())
        fail(ErrorCategory::DataFormat,
             ini.source + ": '" + key + "' must be an integer, got '" + e->value + "'");
    return v;
}

double echo_double(const IniFile& ini, const std::string& key) {
    const IniEntry* e = ini.find_one(kEchoSection, key);
    if (!e)
        fail(ErrorCategory::DataFormat,
             ini.source + ": missing encoder config key '" + key + "'");
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(e->value.data(), e->value.data() + e->value.size(), v);
    if (ec != std::errc() || ptr != e->value.data() + e->value.size())
        fail(ErrorCategory::DataFormat,
             ini.source + ": '" + key + "' must be a number, got '" + e->value + "'");
    return v;
}

// Shared by training, evaluation, and encoding: reject ragged input early with
// a message naming the offending sentence.
void check_sentence(const std::vector<int>& ids, int index, int vocab_size,
                    int max_positions) {
    if (ids.empty())
        fail(ErrorCategory::DataFormat,
             "sentence " + std::to_string(index) + " is empty");
    if (static_cast<int>(ids.size()) > max_positions)
        fail(ErrorCategory::DataFormat,
             "sentence " + std::to_string(index) + " has " +
                 std::to_string(ids.size()) + " sub-words, over the encoder limit of " +
                 std::to_string(max_positions) + " positions");
    for (int id : ids)
        if (id < 0 || id >= vocab_size)
            fail(ErrorCategory::DataFormat,
                 "sentence " + std::to_string(index) + " holds id " +
                     std::to_string(id) + ", outside the vocabulary of " +
                     std::to_string(vocab_size));
}

struct MaskedSentence {
    std::vector<int> input;  // ids after masking
    std::vector<int> masked; // positions that were selected
};

// One Bernoulli draw per position, then one action draw per selected position
// (80% [MASK], 10% random non-special token, 10% unchanged). Draw order is
// position order, so the stream is reproducible.
MaskedSentence mask_sentence(const std::vector<int>& ids, double mask_rate,
                             int vocab_size, Rng& rng) {
    MaskedSentence out;
    out.input = ids;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (rng.uniform() >= mask_rate) continue;
        out.masked.push_back(static_cast<int>(i));
        double action = rng.uniform();
        if (action < 0.8)
            out.input[i] = kMaskId;
        else if (action < 0.9)
            out.input[i] = kFirstRealId +
                           static_cast<int>(rng.uniform_int(
                               static_cast<std::uint64_t>(vocab_size - kFirstRealId)));
        // else: keep the original token
    }
    return out;
}

} // namespace

void EncoderConfig::validate() const {
    require_positive("layers", layers);
    require_positive("model_dim", model_dim);
    require_positive("heads", heads);
    require_positive("ff_dim", ff_dim);
    require_positive("max_positions", max_positions);
    if (model_dim % heads != 0)
        fail(ErrorCategory::Config,
             "encoder config: model_dim " + std::to_string(model_dim) +
                 " is not divisible by heads " + std::to_string(heads));
    if (!(mask_rate > 0.0 && mask_rate < 1.0))
        fail(ErrorCategory::Config,
             "encoder config: mask_rate must lie in (0, 1), got " +
                 format_double(mask_rate));
}

std::string EncoderConfig::echo(int vocab_size) const {
    std::string out;
    out += "[encoder]\n";
    out += "layers = " + std::to_string(layers) + "\n";
    out += "model_dim = " + std::to_string(model_dim) + "\n";
    out += "heads = " + std::to_string(heads) + "\n";
    out += "ff_dim = " + std::to_string(ff_dim) + "\n";
    out += "max_positions = " + std::to_string(max_positions) + "\n";
    out += "mask_rate = " + format_double(mask_rate) + "\n";
    out += "vocab_size = " + std::to_string(vocab_size) + "\n";
    out += "stack_base = embedding\n"; // layer stacks start at the embedding
    return out;
}

EncoderConfig EncoderConfig::from_echo(const std::string& text, int* vocab_size_out) {
    IniFile ini = parse_ini(text, "encoder checkpoint config");
    EncoderConfig cfg;
    cfg.layers = echo_int(ini, "layers");
    cfg.model_dim = echo_int(ini, "model_dim");
    cfg.heads = echo_int(ini, "heads");
    cfg.ff_dim = echo_int(ini, "ff_dim");
    cfg.max_positions = echo_int(ini, "max_positions");
    cfg.mask_rate = echo_double(ini, "mask_rate");
    const IniEntry* base = ini.find_one(kEchoSection, "stack_base");
    if (!base || base->value != "embedding")
        fail(ErrorCategory::DataFormat,
             "encoder checkpoint config: stack_base must be 'embedding'");
    *vocab_size_out = echo_int(ini, "vocab_size");
    cfg.validate();
    return cfg;
}

void ScalarMix::init(const std::string& name, int arity, nn::ParamStore& store) {
    if (arity <= 0)
        fail(ErrorCategory::Config,
             "scalar mix needs at least one layer, got " + std::to_string(arity));
    logits = ad::Param(name + ".logits", Eigen::MatrixXd::Zero(arity, 1));
    store.add(logits);
}

ad::Var ScalarMix::apply(ad::Tape& tape, const LayerStack& stack) {
    return ad::scalar_mix(tape, tape.leaf(logits), stack.layers);
}

Eigen::MatrixXd ScalarMix::apply_plain(const LayerStack& stack) const {
    if (static_cast<int>(stack.layers.size()) != arity())
        fail(ErrorCategory::Internal,
             "scalar mix of arity " + std::to_string(arity()) + " applied to a stack of " +
                 std::to_string(stack.layers.size()) + " layers");
    Eigen::VectorXd w = weights();
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(stack.layers[0].rows(), stack.layers[0].cols());
    for (int j = 0; j < arity(); ++j) out += w[j] * stack.layers[j];
    return out;
}

Eigen::VectorXd ScalarMix::weights() const {
    Eigen::VectorXd w = logits.value.col(0);
    Eigen::VectorXd e = (w.array() - w.maxCoeff()).exp();
    return e / e.sum();
}

Encoder::Encoder(const EncoderConfig& config, int vocab_size, std::uint64_t seed)
    : config_(config), vocab_size_(vocab_size) {
    init_params(seed);
}

Encoder::Encoder(const Checkpoint& ckpt) {
    config_ = EncoderConfig::from_echo(ckpt.config_echo, &vocab_size_);
    init_params(0);
    store_.from_checkpoint(ckpt);
}

void Encoder::init_params(std::uint64_t seed) {
    config_.validate();
    if (vocab_size_ <= kFirstRealId)
        fail(ErrorCategory::Config,
             "encoder vocabulary of " + std::to_string(vocab_size_) +
                 " holds no tokens beyond the specials");
    Rng rng(seed);
    embedding_ = ad::Param("encoder.embedding",
                           Eigen::MatrixXd::Zero(vocab_size_, config_.model_dim));
    nn::xavier_init(embedding_, rng);
    store_.add(embedding_);
    blocks_.resize(static_cast<std::size_t>(config_.layers));
    for (int i = 0; i < config_.layers; ++i)
        blocks_[static_cast<std::size_t>(i)].init("encoder.layer" + std::to_string(i),
                                                  config_.model_dim, config_.heads,
                                                  config_.ff_dim, rng, store_);
    final_norm_.init("encoder.final_norm", config_.model_dim, store_);
    mlm_bias_ = ad::Param("encoder.mlm_bias", Eigen::MatrixXd::Zero(1, vocab_size_));
    store_.add(mlm_bias_);
    positions_ = nn::sinusoidal_positions(config_.max_positions, config_.model_dim);
}

ad::Var Encoder::forward_batch(ad::Tape& tape, const std::vector<int>& ids,
                               const std::vector<int>& offsets) {
    ad::Var emb = tape.leaf(embedding_);
    ad::Var x = ad::gather_rows(tape, emb, ids);
    x = ad::mul_scalar(tape, x, std::sqrt(static_cast<double>(config_.model_dim)));
    x = ad::add_const_rows(tape, x, nn::positions_for(positions_, offsets));
    for (auto& block : blocks_)
        x = block.apply(tape, x, offsets, 0.0, nullptr, false);
    return final_norm_.apply(tape, x);
}

PretrainLog Encoder::pretrain_masked_lm(const std::vector<std::vector<int>>& corpus,
                                        const PretrainOptions& options,
                                        std::uint64_t seed) {
    if (options.epochs < 0)
        fail(ErrorCategory::Config, "pretraining epochs must be non-negative");
    if (options.batch_sentences <= 0)
        fail(ErrorCategory::Config, "pretraining batch size must be positive");
    if (static_cast<int>(corpus.size()) < options.batch_sentences)
        fail(ErrorCategory::DataFormat,
             "pretraining corpus has " + std::to_string(corpus.size()) +
                 " sentences, fewer than one batch of " +
                 std::to_string(options.batch_sentences));
    for (std::size_t i = 0; i < corpus.size(); ++i)
        check_sentence(corpus[i], static_cast<int>(i), vocab_size_,
                       config_.max_positions);

    Rng rng(seed);
    nn::Adam opt;
    opt.lr = options.learn_rate;
    opt.clip = options.grad_clip;

    PretrainLog log;
    std::vector<int> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        long token_count = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(options.batch_sentences)) {
            std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(options.batch_sentences));
            std::vector<int> input_ids;
            std::vector<int> offsets{0};
            std::vector<int> masked_rows;
            std::vector<int> targets;
            for (std::size_t s = start; s < stop; ++s) {
                const auto& sent = corpus[static_cast<std::size_t>(order[s])];
                MaskedSentence masked =
                    mask_sentence(sent, config_.mask_rate, vocab_size_, rng);
                int base = offsets.back();
                input_ids.insert(input_ids.end(), masked.input.begin(), masked.input.end());
                offsets.push_back(base + static_cast<int>(sent.size()));
                for (int pos : masked.masked) {
                    masked_rows.push_back(base + pos);
                    targets.push_back(sent[static_cast<std::size_t>(pos)]);
                }
            }
            if (targets.empty()) continue; // nothing to predict in this batch

            ad::Tape tape;
            store_.zero_grad();
            ad::Var hidden = forward_batch(tape, input_ids, offsets);
            ad::Var picked = ad::gather_rows(tape, hidden, masked_rows);
            ad::Var logits = ad::matmul_t(tape, picked, tape.leaf(embedding_));
            logits = ad::add_rowvec(tape, logits, tape.leaf(mlm_bias_));
            std::vector<double> ones(targets.size(), 1.0);
            ad::Var loss = ad::cross_entropy(tape, logits, targets, ones);
            tape.backward(loss);
            opt.step(store_);

            loss_sum += loss->value(0, 0) * static_cast<double>(targets.size());
            token_count += static_cast<long>(targets.size());
        }
        log.epoch_loss.push_back(token_count == 0 ? 0.0
                                                  : loss_sum / static_cast<double>(token_count));
    }
    return log;
}

LayerStack Encoder::encode_layers(const std::vector<int>& ids) const {
    if (static_cast<int>(ids.size()) > config_.max_positions)
        fail(ErrorCategory::DataFormat,
             "sentence has " + std::to_string(ids.size()) +
                 " sub-words, over the encoder limit of " +
                 std::to_string(config_.max_positions) + " positions");
    for (int id : ids)
        if (id < 0 || id >= vocab_size_)
            fail(ErrorCategory::DataFormat,
                 "id " + std::to_string(id) + " is outside the vocabulary of " +
                     std::to_string(vocab_size_));

    int n = static_cast<int>(ids.size());
    Eigen::MatrixXd x(n, config_.model_dim);
    for (int i = 0; i < n; ++i) x.row(i) = embedding_.value.row(ids[i]);
    x *= std::sqrt(static_cast<double>(config_.model_dim));
    x += positions_.topRows(n);

    LayerStack stack;
    stack.layers.reserve(static_cast<std::size_t>(config_.layers) + 1);
    stack.layers.push_back(x);
    for (const auto& block : blocks_) {
        x = block.apply_plain(x);
        stack.layers.push_back(x);
    }
    return stack;
}

double Encoder::masked_accuracy(const std::vector<std::vector<int>>& corpus,
                                std::uint64_t seed) const {
    Rng rng(seed);
    long correct = 0, total = 0;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        check_sentence(corpus[i], static_cast<int>(i), vocab_size_,
                       config_.max_positions);
        MaskedSentence masked =
            mask_sentence(corpus[i], config_.mask_rate, vocab_size_, rng);
        if (masked.masked.empty()) continue;
        Eigen::MatrixXd h = encode_layers(masked.input).layers.back();
        h = final_norm_.apply_plain(h);
        for (int pos : masked.masked) {
            Eigen::RowVectorXd logits =
                h.row(pos) * embedding_.value.transpose() + mlm_bias_.value;
            int best = 0;
            logits.maxCoeff(&best);
            if (best == corpus[i][static_cast<std::size_t>(pos)]) ++correct;
            ++total;
        }
    }
    return total == 0 ? 1.0 : static_cast<double>(correct) / static_cast<double>(total);
}

Checkpoint Encoder::to_checkpoint() const {
    Checkpoint ckpt;
    ckpt.config_echo = config_.echo(vocab_size_);
    store_.to_checkpoint(ckpt);
    return ckpt;
}

Encoder Encoder::from_checkpoint(const Checkpoint& ckpt) { return Encoder(ckpt); }

void Encoder::save(const std::string& path) const { to_checkpoint().save(path); }

Encoder Encoder::load(const std::string& path) {
    return from_checkpoint(Checkpoint::load(path));
}

} // namespace aspectnmt
