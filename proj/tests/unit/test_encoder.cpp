#include "aspectnmt/encoder.hpp"

#include <cmath>

#include "aspectnmt/errors.hpp"
#include "doctest.h"

using namespace aspectnmt;

namespace {

EncoderConfig tiny_config() {
    EncoderConfig cfg;
    cfg.layers = 2;
    cfg.model_dim = 16;
    cfg.heads = 2;
    cfg.ff_dim = 32;
    cfg.max_positions = 32;
    cfg.mask_rate = 0.15;
    return cfg;
}

// Sentences over two real tokens (ids 5 and 6) that always alternate starting
// from 5, so a token is fully determined by its position.
std::vector<std::vector<int>> alternating_corpus(int sentences, Rng& rng) {
    std::vector<std::vector<int>> corpus;
    for (int s = 0; s < sentences; ++s) {
        int len = 8 + static_cast<int>(rng.uniform_int(5));
        std::vector<int> sent;
        for (int i = 0; i < len; ++i) sent.push_back(5 + i % 2);
        corpus.push_back(sent);
    }
    return corpus;
}

} // namespace

TEST_CASE("encoder config validation") {
    EncoderConfig cfg = tiny_config();
    CHECK_NOTHROW(cfg.validate());

    cfg.heads = 3; // 16 % 3 != 0
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("divisible"), Error);

    cfg = tiny_config();
    cfg.mask_rate = 0.0;
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("mask_rate"), Error);

    cfg = tiny_config();
    cfg.layers = 0;
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("layers"), Error);
}

TEST_CASE("encoder config echo round trip") {
    EncoderConfig cfg = tiny_config();
    std::string echo = cfg.echo(21);
    int vocab = 0;
    EncoderConfig back = EncoderConfig::from_echo(echo, &vocab);
    CHECK(vocab == 21);
    CHECK(back.layers == cfg.layers);
    CHECK(back.model_dim == cfg.model_dim);
    CHECK(back.heads == cfg.heads);
    CHECK(back.ff_dim == cfg.ff_dim);
    CHECK(back.max_positions == cfg.max_positions);
    CHECK(back.mask_rate == cfg.mask_rate);
    CHECK(back.echo(vocab) == echo); // byte-stable across a load/save cycle
}

TEST_CASE("encode_layers shape contract") {
    Encoder enc(tiny_config(), 11, 7);
    LayerStack stack = enc.encode_layers({5, 6, 7, 8, 9});
    REQUIRE(stack.layers.size() == 3); // embedding + one entry per layer
    for (const auto& m : stack.layers) {
        CHECK(m.rows() == 5);
        CHECK(m.cols() == 16);
    }
}

TEST_CASE("encode_layers is deterministic and side-effect free") {
    Encoder enc(tiny_config(), 11, 7);
    std::vector<int> ids{5, 6, 7, 5, 10};
    LayerStack a = enc.encode_layers(ids);
    LayerStack b = enc.encode_layers(ids);
    for (std::size_t i = 0; i < a.layers.size(); ++i)
        CHECK(a.layers[i] == b.layers[i]);
}

TEST_CASE("layer zero is permutation-equivariant before positions, outputs are not") {
    Encoder enc(tiny_config(), 11, 3);
    LayerStack ab = enc.encode_layers({5, 6, 7});
    LayerStack ba = enc.encode_layers({6, 5, 7});

    // Subtracting the position rows must leave exactly swapped embeddings.
    Eigen::MatrixXd pe = nn::sinusoidal_positions(32, 16).topRows(3);
    Eigen::MatrixXd base_ab = ab.layers[0] - pe;
    Eigen::MatrixXd base_ba = ba.layers[0] - pe;
    CHECK((base_ab.row(0) - base_ba.row(1)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((base_ab.row(1) - base_ba.row(0)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((base_ab.row(2) - base_ba.row(2)).cwiseAbs().maxCoeff() < 1e-12);

    // With positions added, the full outputs differ.
    CHECK((ab.layers.back() - ba.layers.back()).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("encode_layers rejects over-length and out-of-vocabulary input") {
    Encoder enc(tiny_config(), 11, 3);
    std::vector<int> too_long(33, 5);
    CHECK_THROWS_WITH_AS(enc.encode_layers(too_long), doctest::Contains("32"), Error);
    CHECK_THROWS_WITH_AS(enc.encode_layers({5, 11}), doctest::Contains("vocabulary"),
                         Error);
}

TEST_CASE("zero pretraining epochs leave the seeded initialization untouched") {
    Encoder enc(tiny_config(), 11, 42);
    std::vector<std::uint8_t> before = enc.to_checkpoint().to_bytes();

    Rng rng(1);
    auto corpus = alternating_corpus(40, rng);
    PretrainOptions opts;
    opts.epochs = 0;
    PretrainLog log = enc.pretrain_masked_lm(corpus, opts, 9);
    CHECK(log.epoch_loss.empty());
    CHECK(enc.to_checkpoint().to_bytes() == before);
}

TEST_CASE("pretraining is a pure function of corpus, options, and seed") {
    Rng rng(1);
    auto corpus = alternating_corpus(40, rng);
    PretrainOptions opts;
    opts.epochs = 2;
    opts.batch_sentences = 8;

    Encoder a(tiny_config(), 11, 42);
    Encoder b(tiny_config(), 11, 42);
    PretrainLog la = a.pretrain_masked_lm(corpus, opts, 9);
    PretrainLog lb = b.pretrain_masked_lm(corpus, opts, 9);
    CHECK(la.epoch_loss == lb.epoch_loss);
    CHECK(a.to_checkpoint().to_bytes() == b.to_checkpoint().to_bytes());
}

TEST_CASE("pretraining rejects a corpus smaller than one batch") {
    Encoder enc(tiny_config(), 11, 42);
    std::vector<std::vector<int>> corpus(10, std::vector<int>{5, 6, 5});
    PretrainOptions opts; // batch_sentences = 32 > 10
    CHECK_THROWS_WITH_AS(enc.pretrain_masked_lm(corpus, opts, 1),
                         doctest::Contains("fewer than one batch"), Error);
}

TEST_CASE("masked prediction on a position-determined corpus reaches 99 percent") {
    // Every sentence alternates 5,6,5,6,... so the position encoding alone
    // identifies the hidden token; a trained model should hit it nearly
    // always, even when both neighbours happen to be masked too.
    Rng rng(3);
    auto corpus = alternating_corpus(160, rng);
    auto held_out = alternating_corpus(150, rng);

    Encoder enc(tiny_config(), 7, 5);
    PretrainOptions opts;
    opts.epochs = 200;
    opts.batch_sentences = 16;
    opts.learn_rate = 3e-3;
    PretrainLog log = enc.pretrain_masked_lm(corpus, opts, 11);
    REQUIRE(log.epoch_loss.size() == 200);
    CHECK(log.epoch_loss.back() < log.epoch_loss.front());

    double acc = enc.masked_accuracy(held_out, 77);
    CHECK(acc >= 0.99);
}

TEST_CASE("checkpoint round trip reproduces the forward pass") {
    Rng rng(3);
    auto corpus = alternating_corpus(40, rng);
    Encoder enc(tiny_config(), 7, 5);
    PretrainOptions opts;
    opts.epochs = 1;
    opts.batch_sentences = 16;
    enc.pretrain_masked_lm(corpus, opts, 11);

    Checkpoint ckpt = enc.to_checkpoint();
    Checkpoint back = Checkpoint::from_bytes(ckpt.to_bytes());
    Encoder twin = Encoder::from_checkpoint(back);
    CHECK(twin.config().layers == 2);
    CHECK(twin.vocab_size() == 7);

    std::vector<int> ids{5, 6, 5, 6, 5};
    LayerStack a = enc.encode_layers(ids);
    LayerStack b = twin.encode_layers(ids);
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
        // float32 storage rounds the parameters, so compare loosely.
        CHECK((a.layers[i] - b.layers[i]).cwiseAbs().maxCoeff() < 1e-4);
    }
}

TEST_CASE("scalar mix softmax weighting") {
    nn::ParamStore store;
    ScalarMix mix;
    mix.init("mix", 3, store);
    REQUIRE(mix.arity() == 3);

    LayerStack stack;
    stack.layers = {Eigen::MatrixXd::Constant(2, 2, 1.0),
                    Eigen::MatrixXd::Constant(2, 2, 2.0),
                    Eigen::MatrixXd::Constant(2, 2, 6.0)};

    // Zero logits mix uniformly.
    Eigen::MatrixXd even = mix.apply_plain(stack);
    CHECK(even(0, 0) == doctest::Approx(3.0));

    // A dominant logit selects its layer.
    mix.logits.value(2, 0) = 50.0;
    Eigen::MatrixXd top = mix.apply_plain(stack);
    CHECK(top(0, 0) == doctest::Approx(6.0));

    // Tape and plain paths agree.
    ad::Tape tape;
    ad::Var mixed = mix.apply(tape, stack);
    CHECK((mixed->value - top).cwiseAbs().maxCoeff() < 1e-12);

    LayerStack wrong;
    wrong.layers = {stack.layers[0]};
    CHECK_THROWS_AS(mix.apply_plain(wrong), Error);
}
