#include "aspectnmt/translate.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "aspectnmt/errors.hpp"
#include "aspectnmt/eval.hpp"
#include "aspectnmt/ini.hpp"
#include "aspectnmt/textfmt.hpp"

namespace aspectnmt {

namespace {

constexpr const char* kEchoSection = "nmt";

int echo_int(const IniFile& ini, const std::string& key) {
    const IniEntry* e = ini.find_one(kEchoSection, key);
    if (!e)
        fail(ErrorCategory::DataFormat,
             "translation checkpoint config is missing '" + key + "'");
    try {
        return std::stoi(e->value);
    } catch (const std::exception&) {
        fail(ErrorCategory::DataFormat,
             "translation checkpoint config: '" + key + "' is not an integer: " +
                 e->value);
    }
}

double echo_double(const IniFile& ini, const std::string& key) {
    const IniEntry* e = ini.find_one(kEchoSection, key);
    if (!e)
        fail(ErrorCategory::DataFormat,
             "translation checkpoint config is missing '" + key + "'");
    try {
        return std::stod(e->value);
    } catch (const std::exception&) {
        fail(ErrorCategory::DataFormat,
             "translation checkpoint config: '" + key + "' is not a number: " +
                 e->value);
    }
}

std::string echo_string(const IniFile& ini, const std::string& key) {
    const IniEntry* e = ini.find_one(kEchoSection, key);
    if (!e)
        fail(ErrorCategory::DataFormat,
             "translation checkpoint config is missing '" + key + "'");
    return e->value;
}

Eigen::RowVectorXd log_softmax_row(const Eigen::RowVectorXd& logits) {
    const double mx = logits.maxCoeff();
    const double lse = mx + std::log((logits.array() - mx).exp().sum());
    return logits.array() - lse;
}

} // namespace

const char* integration_mode_name(IntegrationMode mode) {
    switch (mode) {
    case IntegrationMode::Off:
        return "off";
    case IntegrationMode::Aspects:
        return "aspects";
    case IntegrationMode::AspectsLeftover:
        return "aspects+leftover";
    }
    fail(ErrorCategory::Internal, "unhandled integration mode");
}

IntegrationMode parse_integration_mode(const std::string& name) {
    if (name == "off") return IntegrationMode::Off;
    if (name == "aspects") return IntegrationMode::Aspects;
    if (name == "aspects+leftover") return IntegrationMode::AspectsLeftover;
    fail(ErrorCategory::Config, "unknown integration mode '" + name +
                                    "'; expected off, aspects, or aspects+leftover");
}

void TransformerConfig::validate() const {
    if (layers < 1)
        fail(ErrorCategory::Config, "translation model needs at least one layer");
    if (model_dim < 1 || ff_dim < 1 || heads < 1)
        fail(ErrorCategory::Config, "model dimensions must be positive");
    if (model_dim % heads != 0)
        fail(ErrorCategory::Config,
             "model_dim " + std::to_string(model_dim) + " is not divisible by " +
                 std::to_string(heads) + " heads");
    if (dropout < 0.0 || dropout >= 1.0)
        fail(ErrorCategory::Config, "dropout must lie in [0, 1)");
    if (label_smoothing < 0.0 || label_smoothing >= 1.0)
        fail(ErrorCategory::Config, "label_smoothing must lie in [0, 1)");
    if (opt_factor <= 0.0)
        fail(ErrorCategory::Config, "opt_factor must be positive");
    if (opt_warmup < 1)
        fail(ErrorCategory::Config, "opt_warmup must be at least 1");
    if (grad_accumulation < 1)
        fail(ErrorCategory::Config, "grad_accumulation must be at least 1");
    if (batch_tokens < 1)
        fail(ErrorCategory::Config, "batch_tokens must be at least 1");
    if (epochs < 0)
        fail(ErrorCategory::Config, "epochs cannot be negative");
    if (max_positions < 2)
        fail(ErrorCategory::Config, "max_positions must be at least 2");
    if (beam_size < 1)
        fail(ErrorCategory::Config, "beam_size must be at least 1");
    if (length_norm_alpha < 0.0)
        fail(ErrorCategory::Config, "length_norm_alpha cannot be negative");
    if (integration == IntegrationMode::Off) {
        if (linguistic_width != 0)
            fail(ErrorCategory::Config,
                 "linguistic_width must be 0 when integration is off");
    } else if (linguistic_width < 1) {
        fail(ErrorCategory::Config,
             "integration '" + std::string(integration_mode_name(integration)) +
                 "' needs a positive linguistic_width");
    }
}

std::string TransformerConfig::echo(int vocab_size) const {
    std::string out;
    out += "[nmt]\n";
    out += "layers = " + std::to_string(layers) + "\n";
    out += "model_dim = " + std::to_string(model_dim) + "\n";
    out += "ff_dim = " + std::to_string(ff_dim) + "\n";
    out += "heads = " + std::to_string(heads) + "\n";
    out += "dropout = " + format_double(dropout) + "\n";
    out += "label_smoothing = " + format_double(label_smoothing) + "\n";
    out += "opt_factor = " + format_double(opt_factor) + "\n";
    out += "opt_warmup = " + std::to_string(opt_warmup) + "\n";
    out += "grad_accumulation = " + std::to_string(grad_accumulation) + "\n";
    out += "batch_tokens = " + std::to_string(batch_tokens) + "\n";
    out += "epochs = " + std::to_string(epochs) + "\n";
    out += "max_positions = " + std::to_string(max_positions) + "\n";
    out += "beam_size = " + std::to_string(beam_size) + "\n";
    out += "length_norm_alpha = " + format_double(length_norm_alpha) + "\n";
    out += "integration = " + std::string(integration_mode_name(integration)) + "\n";
    out += "linguistic_width = " + std::to_string(linguistic_width) + "\n";
    out += "vocab_size = " + std::to_string(vocab_size) + "\n";
    return out;
}

TransformerConfig TransformerConfig::from_echo(const std::string& text,
                                               int* vocab_size_out) {
    IniFile ini = parse_ini(text, "translation checkpoint config");
    TransformerConfig cfg;
    cfg.layers = echo_int(ini, "layers");
    cfg.model_dim = echo_int(ini, "model_dim");
    cfg.ff_dim = echo_int(ini, "ff_dim");
    cfg.heads = echo_int(ini, "heads");
    cfg.dropout = echo_double(ini, "dropout");
    cfg.label_smoothing = echo_double(ini, "label_smoothing");
    cfg.opt_factor = echo_double(ini, "opt_factor");
    cfg.opt_warmup = echo_int(ini, "opt_warmup");
    cfg.grad_accumulation = echo_int(ini, "grad_accumulation");
    cfg.batch_tokens = echo_int(ini, "batch_tokens");
    cfg.epochs = echo_int(ini, "epochs");
    cfg.max_positions = echo_int(ini, "max_positions");
    cfg.beam_size = echo_int(ini, "beam_size");
    cfg.length_norm_alpha = echo_double(ini, "length_norm_alpha");
    cfg.integration = parse_integration_mode(echo_string(ini, "integration"));
    cfg.linguistic_width = echo_int(ini, "linguistic_width");
    *vocab_size_out = echo_int(ini, "vocab_size");
    cfg.validate();
    return cfg;
}

std::string training_log_tsv(const NmtTrainLog& log) {
    std::string out = "epoch_fraction\tstep\ttrain_loss\tval_bleu\tselected\n";
    for (const NmtEvalPoint& p : log.points) {
        out += format_fixed(p.epoch_fraction, 3) + "\t" + std::to_string(p.step) +
               "\t" + format_fixed(p.train_loss, 4) + "\t" +
               format_fixed(p.val_bleu, 2) + "\t" + (p.selected ? "1" : "0") + "\n";
    }
    return out;
}

double length_penalty(int length, double alpha) {
    return std::pow((5.0 + static_cast<double>(length)) / 6.0, alpha);
}

double normalized_score(double logprob, int length, double alpha) {
    return logprob / length_penalty(length, alpha);
}

NmtModel::NmtModel(const TransformerConfig& config, SubwordVocab vocab,
                   std::uint64_t seed)
    : config_(config), vocab_(std::move(vocab)), vocab_size_(vocab_.size()) {
    init_params(seed);
}

NmtModel::NmtModel(const Checkpoint& ckpt, SubwordVocab vocab)
    : vocab_(std::move(vocab)) {
    config_ = TransformerConfig::from_echo(ckpt.config_echo, &vocab_size_);
    if (vocab_.size() != vocab_size_)
        fail(ErrorCategory::DataFormat,
             "checkpoint was trained with a vocabulary of " +
                 std::to_string(vocab_size_) + " entries; the supplied one has " +
                 std::to_string(vocab_.size()));
    init_params(0);
    store_.from_checkpoint(ckpt);
}

void NmtModel::init_params(std::uint64_t seed) {
    config_.validate();
    if (vocab_size_ <= 5)
        fail(ErrorCategory::Config,
             "translation vocabulary of " + std::to_string(vocab_size_) +
                 " holds no tokens beyond the specials");
    Rng rng(seed);
    embedding_ = ad::Param("nmt.embedding",
                           Eigen::MatrixXd::Zero(vocab_size_, config_.model_dim));
    nn::xavier_init(embedding_, rng);
    store_.add(embedding_);
    if (config_.integration != IntegrationMode::Off) {
        ling_map_.init("nmt.integration.ling", config_.linguistic_width,
                       config_.model_dim, rng, store_);
        join_.init("nmt.integration.join", 2 * config_.model_dim, config_.model_dim,
                   rng, store_);
    }
    enc_.resize(static_cast<std::size_t>(config_.layers));
    for (int i = 0; i < config_.layers; ++i)
        enc_[static_cast<std::size_t>(i)].init("nmt.enc" + std::to_string(i),
                                               config_.model_dim, config_.heads,
                                               config_.ff_dim, rng, store_);
    enc_norm_.init("nmt.enc_norm", config_.model_dim, store_);
    dec_.resize(static_cast<std::size_t>(config_.layers));
    for (int i = 0; i < config_.layers; ++i)
        dec_[static_cast<std::size_t>(i)].init("nmt.dec" + std::to_string(i),
                                               config_.model_dim, config_.heads,
                                               config_.ff_dim, rng, store_);
    dec_norm_.init("nmt.dec_norm", config_.model_dim, store_);
    out_bias_ = ad::Param("nmt.out_bias", Eigen::MatrixXd::Zero(1, vocab_size_));
    store_.add(out_bias_);
    positions_ = nn::sinusoidal_positions(config_.max_positions, config_.model_dim);
}

void NmtModel::attach_linguistics(const Encoder* encoder,
                                  const AspectExtractor* extractor) {
    if (config_.integration == IntegrationMode::Off)
        fail(ErrorCategory::Config, "integration is off; there is nothing to attach");
    if (encoder == nullptr || extractor == nullptr)
        fail(ErrorCategory::Config,
             "integration needs both a contextual encoder and an aspect extractor");
    if (extractor->stack_arity() != encoder->config().layers + 1)
        fail(ErrorCategory::Config,
             "extractor mixes " + std::to_string(extractor->stack_arity()) +
                 " stack layers but the encoder produces " +
                 std::to_string(encoder->config().layers + 1));
    if (extractor->model_dim() != encoder->config().model_dim)
        fail(ErrorCategory::Config,
             "extractor expects stack width " + std::to_string(extractor->model_dim()) +
                 " but the encoder produces " +
                 std::to_string(encoder->config().model_dim));
    if (encoder->vocab_size() != vocab_size_)
        fail(ErrorCategory::Config,
             "contextual encoder vocabulary (" + std::to_string(encoder->vocab_size()) +
                 ") does not match the translation vocabulary (" +
                 std::to_string(vocab_size_) + ")");
    const int chunks = extractor->aspect_count() +
                       (config_.integration == IntegrationMode::AspectsLeftover ? 1 : 0);
    const int width = chunks * extractor->aspect_width();
    if (width != config_.linguistic_width)
        fail(ErrorCategory::Config,
             "extractor produces linguistic embeddings of width " +
                 std::to_string(width) + " but the model was configured for " +
                 std::to_string(config_.linguistic_width));
    ling_encoder_ = encoder;
    extractor_ = extractor;
}

void NmtModel::require_linguistics() const {
    if (config_.integration != IntegrationMode::Off &&
        (ling_encoder_ == nullptr || extractor_ == nullptr))
        fail(ErrorCategory::Config,
             "integration mode '" +
                 std::string(integration_mode_name(config_.integration)) +
                 "' needs an attached encoder and extractor");
}

void NmtModel::check_ids(const std::vector<int>& ids, const char* what,
                         std::size_t sentence) const {
    if (ids.size() + 1 > static_cast<std::size_t>(config_.max_positions))
        fail(ErrorCategory::DataFormat,
             std::string(what) + " sentence " + std::to_string(sentence) + " has " +
                 std::to_string(ids.size()) + " tokens; the position table holds " +
                 std::to_string(config_.max_positions));
    for (int id : ids)
        if (id < 0 || id >= vocab_size_)
            fail(ErrorCategory::DataFormat,
                 std::string(what) + " sentence " + std::to_string(sentence) +
                     " has token id " + std::to_string(id) +
                     " outside the vocabulary of size " + std::to_string(vocab_size_));
}

Eigen::MatrixXd NmtModel::linguistic_rows(const std::vector<int>& src_ids) const {
    const bool leftover = config_.integration == IntegrationMode::AspectsLeftover;
    Eigen::MatrixXd rows = Eigen::MatrixXd::Zero(
        static_cast<Eigen::Index>(src_ids.size()) + 1, config_.linguistic_width);
    if (!src_ids.empty()) {
        const LayerStack stack = ling_encoder_->encode_layers(src_ids);
        // EOS carries no linguistic content; its row stays zero.
        rows.topRows(static_cast<Eigen::Index>(src_ids.size())) =
            extractor_->linguistic_embedding(stack, leftover);
    }
    return rows;
}

ad::Var NmtModel::forward_logits(ad::Tape& tape, const FlatBatch& batch,
                                 bool training, Rng* dropout_rng) const {
    const double scale = std::sqrt(static_cast<double>(config_.model_dim));
    const double rate = training ? config_.dropout : 0.0;
    ad::Var table = tape.leaf(const_cast<ad::Param&>(embedding_));

    ad::Var src = ad::gather_rows(tape, table, batch.src_flat);
    if (config_.integration != IntegrationMode::Off) {
        ad::Var ling = tape.constant(batch.ling);
        ad::Var mapped = ad::relu(tape, ling_map_.apply(tape, ling));
        src = join_.apply(tape, ad::concat_cols(tape, {src, mapped}));
    }
    src = ad::mul_scalar(tape, src, scale);
    src = ad::add_const_rows(tape, src,
                             nn::positions_for(positions_, batch.src_offsets));
    for (const nn::EncoderLayer& layer : enc_)
        src = layer.apply(tape, src, batch.src_offsets, rate, dropout_rng, training);
    ad::Var memory = enc_norm_.apply(tape, src);

    ad::Var tgt = ad::gather_rows(tape, table, batch.tgt_flat);
    tgt = ad::mul_scalar(tape, tgt, scale);
    tgt = ad::add_const_rows(tape, tgt,
                             nn::positions_for(positions_, batch.tgt_offsets));
    for (const nn::DecoderLayer& layer : dec_)
        tgt = layer.apply(tape, tgt, memory, batch.tgt_offsets, batch.src_offsets,
                          rate, dropout_rng, training);
    ad::Var h = dec_norm_.apply(tape, tgt);
    return ad::add_rowvec(tape, ad::matmul_t(tape, h, table),
                          tape.leaf(const_cast<ad::Param&>(out_bias_)));
}

namespace {

// Sentence-length cost of one pair inside a token-capped batch.
int pair_cost(const NmtPair& p) {
    return std::max(static_cast<int>(p.src.size()) + 1,
                    static_cast<int>(p.tgt.size()) + 1);
}

// Groups pair indices into batches of at most batch_tokens (by max-side
// length); a single over-long pair still gets its own batch. Sorting by
// length first keeps padding-free row counts balanced.
std::vector<std::vector<int>> plan_batches(const std::vector<NmtPair>& pairs,
                                           int batch_tokens) {
    std::vector<int> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const int ca = pair_cost(pairs[static_cast<std::size_t>(a)]);
        const int cb = pair_cost(pairs[static_cast<std::size_t>(b)]);
        return ca != cb ? ca < cb : a < b;
    });
    std::vector<std::vector<int>> batches;
    std::vector<int> current;
    int used = 0;
    for (int idx : order) {
        const int cost = pair_cost(pairs[static_cast<std::size_t>(idx)]);
        if (!current.empty() && used + cost > batch_tokens) {
            batches.push_back(std::move(current));
            current.clear();
            used = 0;
        }
        current.push_back(idx);
        used += cost;
    }
    if (!current.empty()) batches.push_back(std::move(current));
    return batches;
}

} // namespace

NmtTrainLog NmtModel::train(const std::vector<NmtPair>& pairs,
                            const std::vector<NmtValExample>& val,
                            std::uint64_t seed) {
    if (pairs.empty())
        fail(ErrorCategory::DataFormat, "training corpus is empty");
    if (val.empty())
        fail(ErrorCategory::DataFormat, "validation set is empty");
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        check_ids(pairs[i].src, "source", i);
        check_ids(pairs[i].tgt, "target", i);
    }
    for (std::size_t i = 0; i < val.size(); ++i) {
        check_ids(val[i].src, "validation source", i);
        if (word_tokenize(val[i].ref_text).empty())
            fail(ErrorCategory::DataFormat,
                 "validation reference " + std::to_string(i) + " is empty");
    }
    require_linguistics();

    // Linguistic embeddings are constants of the frozen extractor, so one
    // pass over the corpus caches them for every epoch.
    std::vector<Eigen::MatrixXd> ling_cache;
    if (config_.integration != IntegrationMode::Off) {
        ling_cache.reserve(pairs.size());
        for (const NmtPair& p : pairs) ling_cache.push_back(linguistic_rows(p.src));
    }

    const std::vector<std::vector<int>> batches =
        plan_batches(pairs, config_.batch_tokens);

    auto make_flat = [&](const std::vector<int>& members) {
        FlatBatch fb;
        fb.src_offsets.push_back(0);
        fb.tgt_offsets.push_back(0);
        for (int idx : members) {
            const NmtPair& p = pairs[static_cast<std::size_t>(idx)];
            fb.src_flat.insert(fb.src_flat.end(), p.src.begin(), p.src.end());
            fb.src_flat.push_back(vocab_.eos_id);
            fb.tgt_flat.push_back(vocab_.bos_id);
            fb.tgt_flat.insert(fb.tgt_flat.end(), p.tgt.begin(), p.tgt.end());
            fb.gold_flat.insert(fb.gold_flat.end(), p.tgt.begin(), p.tgt.end());
            fb.gold_flat.push_back(vocab_.eos_id);
            fb.src_offsets.push_back(static_cast<int>(fb.src_flat.size()));
            fb.tgt_offsets.push_back(static_cast<int>(fb.tgt_flat.size()));
        }
        if (config_.integration != IntegrationMode::Off) {
            fb.ling.resize(static_cast<Eigen::Index>(fb.src_flat.size()),
                           config_.linguistic_width);
            Eigen::Index row = 0;
            for (int idx : members) {
                const Eigen::MatrixXd& rows = ling_cache[static_cast<std::size_t>(idx)];
                fb.ling.middleRows(row, rows.rows()) = rows;
                row += rows.rows();
            }
        }
        return fb;
    };

    nn::NoamAdam opt;
    opt.factor = config_.opt_factor;
    opt.warmup = config_.opt_warmup;
    opt.d_model = config_.model_dim;

    Rng rng(seed);
    NmtTrainLog log;
    Checkpoint best;
    const std::size_t n = pairs.size();
    int pending = 0;
    store_.zero_grad();

    for (int epoch = 0; epoch < config_.epochs; ++epoch) {
        std::vector<std::size_t> order(batches.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(order);

        std::size_t visited = 0;
        int next_tenth = 1;
        double acc_loss = 0.0;
        std::size_t acc_tokens = 0;

        for (std::size_t bi : order) {
            const FlatBatch fb = make_flat(batches[bi]);
            ad::Tape tape;
            ad::Var logits = forward_logits(tape, fb, true, &rng);
            ad::Var loss = ad::smoothed_cross_entropy(tape, logits, fb.gold_flat,
                                                      config_.label_smoothing);
            const double loss_value = loss->value(0, 0);
            ad::Var scaled =
                config_.grad_accumulation > 1
                    ? ad::mul_scalar(tape, loss, 1.0 / config_.grad_accumulation)
                    : loss;
            tape.backward(scaled);
            if (++pending == config_.grad_accumulation) {
                opt.step(store_);
                store_.zero_grad();
                pending = 0;
            }

            acc_loss += loss_value * static_cast<double>(fb.gold_flat.size());
            acc_tokens += fb.gold_flat.size();
            visited += batches[bi].size();

            bool crossed = false;
            while (next_tenth <= 9 && visited * 10 >= static_cast<std::size_t>(next_tenth) * n) {
                crossed = true;
                ++next_tenth;
            }
            if (!crossed) continue;

            double bleu_sum = 0.0;
            for (const NmtValExample& ex : val) {
                const std::vector<int> out = translate_ids(ex.src);
                std::vector<std::string> pieces;
                pieces.reserve(out.size());
                for (int id : out)
                    pieces.push_back(vocab_.id_to_token[static_cast<std::size_t>(id)]);
                bleu_sum += sentence_bleu(detokenize(pieces), ex.ref_text).score;
            }
            NmtEvalPoint point;
            point.epoch_fraction =
                static_cast<double>(epoch) +
                static_cast<double>(visited) / static_cast<double>(n);
            point.step = opt.steps;
            point.train_loss = acc_tokens > 0
                                   ? acc_loss / static_cast<double>(acc_tokens)
                                   : 0.0;
            point.val_bleu = bleu_sum / static_cast<double>(val.size());
            point.selected = log.best_point < 0 || point.val_bleu > log.best_bleu;
            if (point.selected) {
                log.best_point = static_cast<int>(log.points.size());
                log.best_bleu = point.val_bleu;
                best = to_checkpoint();
            }
            log.points.push_back(point);
            acc_loss = 0.0;
            acc_tokens = 0;
        }

        if (pending > 0) { // flush a partial accumulation window at epoch end
            opt.step(store_);
            store_.zero_grad();
            pending = 0;
        }
    }

    if (log.best_point >= 0) store_.from_checkpoint(best);
    return log;
}

namespace {

// Shared per-sentence decoding context: encoded source plus the per-layer
// cross-attention projections of it (identical for every hypothesis).
struct DecodeContext {
    Eigen::MatrixXd memory;
    std::vector<Eigen::MatrixXd> cross_k, cross_v;
};

// One live hypothesis: generated ids, cumulative logprob, the per-layer
// self-attention key/value rows seen so far, and the distribution for the
// next token.
struct Hyp {
    std::vector<int> tokens;
    double logprob = 0.0;
    std::vector<Eigen::MatrixXd> self_k, self_v;
    Eigen::RowVectorXd next_logp;
};

// Everything decode_step needs from the model, bundled so the beam-search
// helpers can stay free functions.
struct DecoderRefs {
    const std::vector<nn::DecoderLayer>& layers;
    const nn::LayerNorm& final_norm;
    const Eigen::MatrixXd& embedding;
    const Eigen::MatrixXd& out_bias;
    const Eigen::MatrixXd& positions;
    int heads;
    double scale;
};

// Feeds one target token (at the given position) through the decoder with
// cached keys/values, leaving the next-token log-probabilities in the
// hypothesis. Mirrors DecoderLayer::apply with pre-norm residuals; a single
// query row attends to all cached positions, which is exactly the causal
// mask at this step.
void decode_step(const DecoderRefs& m, const DecodeContext& ctx, Hyp& hyp,
                 int token, int position) {
    Eigen::MatrixXd x = m.embedding.row(token) * m.scale;
    x += m.positions.row(position);
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const nn::DecoderLayer& layer = m.layers[l];
        const Eigen::MatrixXd n1 = layer.norm1.apply_plain(x);
        const Eigen::Index t = hyp.self_k[l].rows();
        hyp.self_k[l].conservativeResize(t + 1, Eigen::NoChange);
        hyp.self_v[l].conservativeResize(t + 1, Eigen::NoChange);
        hyp.self_k[l].row(t) = layer.self_attn.wk.apply_plain(n1);
        hyp.self_v[l].row(t) = layer.self_attn.wv.apply_plain(n1);
        const Eigen::MatrixXd a =
            nn::attention_plain(layer.self_attn.wq.apply_plain(n1), hyp.self_k[l],
                                hyp.self_v[l], m.heads, false);
        x += layer.self_attn.wo.apply_plain(a);
        const Eigen::MatrixXd n2 = layer.norm2.apply_plain(x);
        const Eigen::MatrixXd c =
            nn::attention_plain(layer.cross.wq.apply_plain(n2), ctx.cross_k[l],
                                ctx.cross_v[l], m.heads, false);
        x += layer.cross.wo.apply_plain(c);
        x += layer.ff.apply_plain(layer.norm3.apply_plain(x));
    }
    const Eigen::MatrixXd h = m.final_norm.apply_plain(x);
    Eigen::RowVectorXd logits = h * m.embedding.transpose();
    logits += m.out_bias.row(0);
    hyp.next_logp = log_softmax_row(logits);
}

Hyp start_hyp(const DecoderRefs& m, const DecodeContext& ctx, int bos_id) {
    Hyp hyp;
    const std::size_t layers = m.layers.size();
    const Eigen::Index d = m.embedding.cols();
    hyp.self_k.assign(layers, Eigen::MatrixXd(0, d));
    hyp.self_v.assign(layers, Eigen::MatrixXd(0, d));
    decode_step(m, ctx, hyp, bos_id, 0);
    return hyp;
}

// A finished (or force-finished) hypothesis with the length its score is
// normalized by: generated tokens plus the EOS when one was produced.
struct Finished {
    std::vector<int> tokens;
    double logprob = 0.0;
    int norm_length = 0;
};

struct Candidate {
    double score;
    int parent;
    int token;
};

} // namespace

std::vector<int> NmtModel::translate_ids(const std::vector<int>& src_ids) const {
    return translate_ids(src_ids, config_.beam_size, config_.length_norm_alpha);
}

std::vector<int> NmtModel::translate_ids(const std::vector<int>& src_ids,
                                         int beam_size, double alpha) const {
    if (beam_size < 1)
        fail(ErrorCategory::Config, "beam size must be at least 1");
    if (alpha < 0.0)
        fail(ErrorCategory::Config, "length normalization alpha cannot be negative");
    check_ids(src_ids, "source", 0);
    if (src_ids.empty()) return {};
    require_linguistics();

    DecodeContext ctx;
    ctx.memory = encode_source_plain(src_ids);
    for (const nn::DecoderLayer& layer : dec_) {
        ctx.cross_k.push_back(layer.cross.wk.apply_plain(ctx.memory));
        ctx.cross_v.push_back(layer.cross.wv.apply_plain(ctx.memory));
    }
    const DecoderRefs refs{dec_,
                           dec_norm_,
                           embedding_.value,
                           out_bias_.value,
                           positions_,
                           config_.heads,
                           std::sqrt(static_cast<double>(config_.model_dim))};
    const int cap = std::min(config_.max_positions - 1,
                             2 * static_cast<int>(src_ids.size()) + 10);

    std::vector<Hyp> live;
    live.push_back(start_hyp(refs, ctx, vocab_.bos_id));
    std::vector<Finished> done;
    int width = beam_size;

    for (int step = 0; step < cap && !live.empty(); ++step) {
        std::vector<Candidate> cands;
        cands.reserve(live.size() * static_cast<std::size_t>(vocab_size_));
        for (std::size_t h = 0; h < live.size(); ++h)
            for (int v = 0; v < vocab_size_; ++v)
                cands.push_back(
                    {live[h].logprob + live[h].next_logp(v), static_cast<int>(h), v});
        const std::size_t keep =
            std::min(static_cast<std::size_t>(width), cands.size());
        std::partial_sort(cands.begin(),
                          cands.begin() + static_cast<std::ptrdiff_t>(keep),
                          cands.end(), [](const Candidate& a, const Candidate& b) {
                              if (a.score != b.score) return a.score > b.score;
                              if (a.token != b.token) return a.token < b.token;
                              return a.parent < b.parent;
                          });

        std::vector<Hyp> next;
        for (std::size_t c = 0; c < keep; ++c) {
            const Candidate& cand = cands[c];
            const Hyp& parent = live[static_cast<std::size_t>(cand.parent)];
            if (cand.token == vocab_.eos_id) {
                done.push_back({parent.tokens, cand.score,
                                static_cast<int>(parent.tokens.size()) + 1});
                --width; // this beam slot is spent
                continue;
            }
            Hyp grown = parent;
            grown.logprob = cand.score;
            grown.tokens.push_back(cand.token);
            decode_step(refs, ctx, grown, cand.token,
                        static_cast<int>(grown.tokens.size()));
            next.push_back(std::move(grown));
        }
        live = std::move(next);
    }
    for (const Hyp& hyp : live) // length cap hit: score as-is, no EOS bonus
        done.push_back({hyp.tokens, hyp.logprob, static_cast<int>(hyp.tokens.size())});

    const Finished* pick = nullptr;
    double pick_score = 0.0;
    for (const Finished& f : done) {
        const double s = normalized_score(f.logprob, f.norm_length, alpha);
        if (pick == nullptr || s > pick_score) {
            pick = &f;
            pick_score = s;
        }
    }
    return pick->tokens;
}

std::vector<int> NmtModel::greedy_translate_ids(const std::vector<int>& src_ids) const {
    check_ids(src_ids, "source", 0);
    if (src_ids.empty()) return {};
    require_linguistics();

    DecodeContext ctx;
    ctx.memory = encode_source_plain(src_ids);
    for (const nn::DecoderLayer& layer : dec_) {
        ctx.cross_k.push_back(layer.cross.wk.apply_plain(ctx.memory));
        ctx.cross_v.push_back(layer.cross.wv.apply_plain(ctx.memory));
    }
    const DecoderRefs refs{dec_,
                           dec_norm_,
                           embedding_.value,
                           out_bias_.value,
                           positions_,
                           config_.heads,
                           std::sqrt(static_cast<double>(config_.model_dim))};
    const int cap = std::min(config_.max_positions - 1,
                             2 * static_cast<int>(src_ids.size()) + 10);

    Hyp hyp = start_hyp(refs, ctx, vocab_.bos_id);
    for (int step = 0; step < cap; ++step) {
        int argmax = 0;
        for (int v = 1; v < vocab_size_; ++v)
            if (hyp.next_logp(v) > hyp.next_logp(argmax)) argmax = v;
        if (argmax == vocab_.eos_id) break;
        hyp.tokens.push_back(argmax);
        decode_step(refs, ctx, hyp, argmax, static_cast<int>(hyp.tokens.size()));
    }
    return hyp.tokens;
}

std::string NmtModel::translate_text(const std::string& line) const {
    const std::vector<std::string> words = word_tokenize(line);
    const SubwordSequence seq = subword_tokenize(words, vocab_);
    std::vector<int> ids;
    ids.reserve(seq.tokens.size());
    for (const SubwordTok& tok : seq.tokens) ids.push_back(tok.id);
    const std::vector<int> out = translate_ids(ids);
    std::vector<std::string> pieces;
    pieces.reserve(out.size());
    for (int id : out)
        pieces.push_back(vocab_.id_to_token[static_cast<std::size_t>(id)]);
    return detokenize(pieces);
}

Eigen::MatrixXd NmtModel::encode_source_plain(const std::vector<int>& src_ids) const {
    const Eigen::Index rows = static_cast<Eigen::Index>(src_ids.size()) + 1;
    Eigen::MatrixXd x(rows, config_.model_dim);
    for (Eigen::Index i = 0; i < rows - 1; ++i)
        x.row(i) = embedding_.value.row(src_ids[static_cast<std::size_t>(i)]);
    x.row(rows - 1) = embedding_.value.row(vocab_.eos_id);
    if (config_.integration != IntegrationMode::Off) {
        const Eigen::MatrixXd mapped =
            ling_map_.apply_plain(linguistic_rows(src_ids)).cwiseMax(0.0);
        Eigen::MatrixXd joined(rows, 2 * config_.model_dim);
        joined.leftCols(config_.model_dim) = x;
        joined.rightCols(config_.model_dim) = mapped;
        x = join_.apply_plain(joined);
    }
    x *= std::sqrt(static_cast<double>(config_.model_dim));
    x += positions_.topRows(rows);
    for (const nn::EncoderLayer& layer : enc_) x = layer.apply_plain(x);
    return enc_norm_.apply_plain(x);
}

Eigen::MatrixXd NmtModel::decoder_distributions(
    const std::vector<int>& src_ids, const std::vector<int>& tgt_in_ids) const {
    check_ids(src_ids, "source", 0);
    check_ids(tgt_in_ids, "target input", 0);
    if (tgt_in_ids.empty())
        fail(ErrorCategory::DataFormat, "target input is empty");
    require_linguistics();

    FlatBatch fb;
    fb.src_flat = src_ids;
    fb.src_flat.push_back(vocab_.eos_id);
    fb.tgt_flat = tgt_in_ids;
    fb.src_offsets = {0, static_cast<int>(fb.src_flat.size())};
    fb.tgt_offsets = {0, static_cast<int>(fb.tgt_flat.size())};
    if (config_.integration != IntegrationMode::Off) fb.ling = linguistic_rows(src_ids);

    ad::Tape tape;
    ad::Var logits = forward_logits(tape, fb, false, nullptr);
    Eigen::MatrixXd out = logits->value;
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
        const double mx = out.row(r).maxCoeff();
        out.row(r) = (out.row(r).array() - mx).exp();
        out.row(r) /= out.row(r).sum();
    }
    return out;
}

Checkpoint NmtModel::to_checkpoint() const {
    Checkpoint ckpt;
    ckpt.config_echo = config_.echo(vocab_size_);
    store_.to_checkpoint(ckpt);
    return ckpt;
}

NmtModel NmtModel::from_checkpoint(const Checkpoint& ckpt, SubwordVocab vocab) {
    return NmtModel(ckpt, std::move(vocab));
}

void NmtModel::save(const std::string& path) const { to_checkpoint().save(path); }

NmtModel NmtModel::load(const std::string& path, SubwordVocab vocab) {
    return NmtModel(Checkpoint::load(path), std::move(vocab));
}

} // namespace aspectnmt
