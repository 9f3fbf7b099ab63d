#include "aspectnmt/aspects.hpp"

#include <cmath>

#include "aspectnmt/errors.hpp"
#include "doctest.h"

using namespace aspectnmt;

namespace {

// A character-level vocabulary over a toy lexicon, so that longer words split
// into several sub-words and the word/sub-word machinery gets exercised.
struct Fixture {
    SubwordVocab vocab;
    std::vector<TaggedSentence> sentences;
    std::vector<AspectSpec> specs;

    Fixture() {
        std::vector<std::string> words = {"an", "ox", "naps", "品",
                                          "cats", "nap", "an", "ox"};
        // 5 specials + 9 characters in initial and continuation form = 23;
        // asking for exactly that many entries leaves no room for merges, so
        // every word splits into single characters.
        vocab = train_subword_vocab(words, 23);

        sentences = {
            {{"an", "ox", "naps"}, {"DET", "NOUN", "VERB"}, {"DT", "NN", "VBZ"}},
            {{"an", "ox", "nap"}, {"DET", "NOUN", "VERB"}, {"DT", "NN", "VB"}},
            {{"cats", "nap"}, {"NOUN", "VERB"}, {"NNS", "VB"}},
            {{"ox", "naps"}, {"NOUN", "VERB"}, {"NN", "VBZ"}},
        };

        std::vector<SubwordSequence> seqs;
        for (const auto& s : sentences) seqs.push_back(subword_tokenize(s.words, vocab));
        specs = {AspectSpec{"CPOS", {"DET", "NOUN", "VERB"}},
                 AspectSpec{"FPOS", {"DT", "NN", "NNS", "VB", "VBZ"}},
                 shape_spec(seqs), swp_spec()};
    }
};

EncoderConfig mini_encoder_config() {
    EncoderConfig cfg;
    cfg.layers = 2;
    cfg.model_dim = 16;
    cfg.heads = 2;
    cfg.ff_dim = 24;
    cfg.max_positions = 32;
    return cfg;
}

} // namespace

TEST_CASE("swp and shape inventories") {
    AspectSpec swp = swp_spec();
    CHECK(swp.name == "SWP");
    CHECK(swp.tag_set == std::vector<std::string>{"Begin", "Inside", "Single"});

    Fixture fx;
    const AspectSpec& wsh = fx.specs[2];
    CHECK(wsh.name == "WSH");
    CHECK(!wsh.tag_set.empty());
    CHECK(std::is_sorted(wsh.tag_set.begin(), wsh.tag_set.end()));
    // Single characters of "an" -> initial "x" and continuation "##x".
    CHECK(std::count(wsh.tag_set.begin(), wsh.tag_set.end(), "x") == 1);
    CHECK(std::count(wsh.tag_set.begin(), wsh.tag_set.end(), "##x") == 1);
}

TEST_CASE("prepared corpus projects word tags onto sub-words") {
    Fixture fx;
    auto prepared = prepare_aspect_corpus(fx.sentences, fx.vocab, fx.specs);
    REQUIRE(prepared.size() == fx.sentences.size());

    const PreparedSentence& first = prepared[0]; // "an ox naps"
    // Character vocabulary: 2 + 2 + 4 sub-words.
    REQUIRE(first.ids.size() == 8);
    REQUIRE(first.sub_gold.size() == 4);
    const AspectSpec& cpos = fx.specs[0];
    std::vector<std::string> projected;
    for (int g : first.sub_gold[0]) projected.push_back(cpos.tag_set[static_cast<std::size_t>(g)]);
    CHECK(projected == std::vector<std::string>{"DET", "DET", "NOUN", "NOUN", "VERB",
                                                "VERB", "VERB", "VERB"});
    CHECK(first.word_index == std::vector<int>{0, 0, 1, 1, 2, 2, 2, 2});

    // Word-level gold: tags for CPOS/FPOS, whole-word shapes for WSH, none for SWP.
    CHECK(first.word_gold[0] == std::vector<std::string>{"DET", "NOUN", "VERB"});
    CHECK(first.word_gold[2] == std::vector<std::string>{"xx", "xx", "xxxx"});
    CHECK(first.word_gold[3].empty());

    const AspectSpec& swp = fx.specs[3];
    std::vector<std::string> positions;
    for (int g : first.sub_gold[3]) positions.push_back(swp.tag_set[static_cast<std::size_t>(g)]);
    CHECK(positions == std::vector<std::string>{"Begin", "Inside", "Begin", "Inside",
                                                "Begin", "Inside", "Inside", "Inside"});
}

TEST_CASE("prepared corpus rejects unknown aspects and foreign tags") {
    Fixture fx;
    auto bad_specs = fx.specs;
    bad_specs.push_back(AspectSpec{"LEMMA", {"x"}});
    CHECK_THROWS_WITH_AS(prepare_aspect_corpus(fx.sentences, fx.vocab, bad_specs),
                         doctest::Contains("LEMMA"), Error);

    auto narrow = fx.specs;
    narrow[0].tag_set = {"DET", "NOUN"}; // drops VERB
    CHECK_THROWS_WITH_AS(prepare_aspect_corpus(fx.sentences, fx.vocab, narrow),
                         doctest::Contains("VERB"), Error);
}

TEST_CASE("extractor construction enforces the split invariant") {
    Fixture fx;
    CHECK_THROWS_WITH_AS(AspectExtractor(fx.specs, 16, 3, 21, 4, 1),
                         doctest::Contains("must equal"), Error);
    std::vector<AspectSpec> dup = {fx.specs[0], fx.specs[0]};
    CHECK_THROWS_WITH_AS(AspectExtractor(dup, 16, 3, 12, 4, 1),
                         doctest::Contains("duplicate"), Error);
}

TEST_CASE("extraction splits the shared map output exactly") {
    Fixture fx;
    AspectExtractor ex(fx.specs, 16, 3, 20, 4, 7);
    CHECK(ex.aspect_count() == 4);

    Eigen::RowVectorXd row = Eigen::RowVectorXd::LinSpaced(16, -1.0, 1.0);
    AspectVectors av = ex.extract(row);
    REQUIRE(av.vectors.size() == 5); // four aspects plus leftover
    for (const auto& v : av.vectors) CHECK(v.size() == 4);

    // Concatenating the chunks reproduces the shared hidden row bit-exactly.
    Eigen::MatrixXd h = ex.shared_hidden(row);
    for (int a = 0; a < 5; ++a)
        for (int i = 0; i < 4; ++i)
            CHECK(av.vectors[static_cast<std::size_t>(a)][i] == h(0, a * 4 + i));

    CHECK_THROWS_WITH_AS(ex.extract(Eigen::RowVectorXd::Zero(10)),
                         doctest::Contains("width"), Error);
}

TEST_CASE("paper-scale split yields five vectors of width 200") {
    Fixture fx;
    AspectExtractor ex(fx.specs, 64, 5, 1000, 200, 7);
    AspectVectors av = ex.extract(Eigen::RowVectorXd::Zero(64));
    REQUIRE(av.vectors.size() == 5);
    for (const auto& v : av.vectors) CHECK(v.size() == 200);
}

TEST_CASE("zero input with zero bias extracts zero vectors") {
    Fixture fx;
    AspectExtractor ex(fx.specs, 16, 3, 20, 4, 7);
    for (auto* p : ex.params().items)
        if (p->name == "extractor.shared.b") p->value.setZero();
    AspectVectors av = ex.extract(Eigen::RowVectorXd::Zero(16));
    for (const auto& v : av.vectors) CHECK(v.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("classification is a proper distribution") {
    Fixture fx;
    AspectExtractor ex(fx.specs, 16, 3, 20, 4, 7);
    AspectVectors av = ex.extract(Eigen::RowVectorXd::LinSpaced(16, -2.0, 2.0));

    Eigen::VectorXd p = ex.classify(av, 1); // FPOS, 5 tags
    REQUIRE(p.size() == 5);
    CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(p.minCoeff() >= 0.0);

    // Zero classifier -> uniform.
    for (auto* q : ex.params().items)
        if (q->name == "extractor.cls.FPOS.W" || q->name == "extractor.cls.FPOS.b")
            q->value.setZero();
    Eigen::VectorXd uniform = ex.classify(av, 1);
    for (int i = 0; i < 5; ++i) CHECK(uniform[i] == doctest::Approx(0.2));

    // Adding one constant to every logit (via the bias) keeps the argmax.
    Eigen::VectorXd before = ex.classify(av, 0);
    int arg_before = 0;
    before.maxCoeff(&arg_before);
    for (auto* q : ex.params().items)
        if (q->name == "extractor.cls.CPOS.b") q->value.array() += 3.5;
    Eigen::VectorXd after = ex.classify(av, 0);
    int arg_after = 0;
    after.maxCoeff(&arg_after);
    CHECK(arg_before == arg_after);

    // The leftover slot has no classifier.
    CHECK_THROWS_WITH_AS(ex.classify(av, 4), doctest::Contains("leftover"), Error);
}

TEST_CASE("reconstruction maps back to embedding width") {
    Fixture fx;
    AspectExtractor ex(fx.specs, 16, 3, 20, 4, 7);
    AspectVectors av = ex.extract(Eigen::RowVectorXd::LinSpaced(16, -2.0, 2.0));
    Eigen::VectorXd r = ex.reconstruct(av);
    CHECK(r.size() == 16);

    for (auto* p : ex.params().items)
        if (p->name == "extractor.recon.b") p->value.setZero();
    AspectVectors zero;
    zero.vectors.assign(5, Eigen::VectorXd::Zero(4));
    CHECK(ex.reconstruct(zero).cwiseAbs().maxCoeff() == 0.0);

    AspectVectors short_av;
    short_av.vectors.assign(3, Eigen::VectorXd::Zero(4));
    CHECK_THROWS_WITH_AS(ex.reconstruct(short_av), doctest::Contains("aspect vectors"),
                         Error);
}

TEST_CASE("linguistic embedding stacks the taggable slots") {
    Fixture fx;
    Encoder enc(mini_encoder_config(), fx.vocab.size(), 3);
    AspectExtractor ex(fx.specs, 16, 3, 20, 4, 7);
    auto prepared = prepare_aspect_corpus(fx.sentences, fx.vocab, fx.specs);
    LayerStack stack = enc.encode_layers(prepared[0].ids);

    Eigen::MatrixXd ling = ex.linguistic_embedding(stack);
    Eigen::MatrixXd full = ex.linguistic_embedding(stack, true);
    Eigen::MatrixXd h = ex.shared_hidden(ex.mixed_embedding(stack));
    CHECK(ling.cols() == 16); // 4 aspects * width 4
    CHECK(full.cols() == 20);
    CHECK((ling - h.leftCols(16)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((full - h).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("loss parts match the plain forward path") {
    Fixture fx;
    Encoder enc(mini_encoder_config(), fx.vocab.size(), 3);
    AspectExtractor ex(fx.specs, 16, 3, 20, 4, 7);
    auto prepared = prepare_aspect_corpus(fx.sentences, fx.vocab, fx.specs);

    LayerStack stack = enc.encode_layers(prepared[0].ids);
    ExtractorBatch batch;
    batch.stack = stack.layers;
    batch.gold = prepared[0].sub_gold;

    ad::Tape tape;
    ad::Var root = nullptr;
    LossBreakdown got = extractor_loss(tape, ex, batch, {}, &root);
    CHECK(root->value(0, 0) == got.total);
    CHECK(got.total == got.classification + got.reconstruction + got.similarity);
    CHECK(got.classification >= 0.0);
    CHECK(got.reconstruction >= 0.0);
    CHECK(got.similarity <= 1.0);

    // Recompute every part with the public plain-path pieces.
    Eigen::MatrixXd e = ex.mixed_embedding(stack);
    Eigen::MatrixXd h = ex.shared_hidden(e);
    long tokens = e.rows();
    double cls = 0.0;
    for (int a = 0; a < 4; ++a) {
        double ce = 0.0;
        for (long t = 0; t < tokens; ++t) {
            AspectVectors av = ex.extract(e.row(t));
            Eigen::VectorXd p = ex.classify(av, a);
            ce -= std::log(p[batch.gold[static_cast<std::size_t>(a)][static_cast<std::size_t>(t)]]);
        }
        cls += ce / static_cast<double>(tokens);
    }
    cls /= 4.0;
    CHECK(got.classification == doctest::Approx(cls).epsilon(1e-9));

    double rec = 0.0;
    for (long t = 0; t < tokens; ++t) {
        AspectVectors av = ex.extract(e.row(t));
        rec += (ex.reconstruct(av).transpose() - e.row(t)).squaredNorm();
    }
    rec /= static_cast<double>(tokens);
    CHECK(got.reconstruction == doctest::Approx(rec).epsilon(1e-9));

    double sim_sum = 0.0;
    for (long t = 0; t < tokens; ++t) {
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) {
                if (i == j) continue;
                sim_sum += (h.row(t).segment(i * 4, 4) - h.row(t).segment(j * 4, 4))
                               .squaredNorm();
            }
    }
    double sim = 1.0 - sim_sum / (4.0 * 3.0) / static_cast<double>(tokens);
    CHECK(got.similarity == doctest::Approx(sim).epsilon(1e-9));
}

TEST_CASE("loss gradients match finite differences") {
    Fixture fx;
    // Tiny geometry keeps the probe loop cheap: 2 aspects, width 3, 3 tokens.
    std::vector<AspectSpec> two = {fx.specs[0], fx.specs[3]};
    AspectExtractor ex(two, 6, 3, 9, 3, 11);

    ExtractorBatch batch;
    Rng rng(5);
    for (int l = 0; l < 3; ++l) {
        Eigen::MatrixXd m(3, 6);
        for (long i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
        batch.stack.push_back(m);
    }
    batch.gold = {{0, 2, 1}, {0, 1, 2}};

    ExtractorLossOptions options;
    options.class_weights = {{0.5, 1.5, 1.0}, {1.2, 0.4, 1.4}};

    auto loss = [&](bool with_grad) {
        ad::Tape tape;
        ad::Var root = nullptr;
        LossBreakdown got = extractor_loss(tape, ex, batch, options, &root);
        if (with_grad) {
            ex.params().zero_grad();
            tape.backward(root);
        }
        return got.total;
    };
    ad::GradCheckResult res = ad::grad_check(loss, ex.params().items);
    INFO("worst parameter: ", res.worst_param);
    CHECK(res.max_rel_err <= 1e-4);
}

TEST_CASE("inverse-frequency weights average to one over seen tags") {
    Fixture fx;
    auto prepared = prepare_aspect_corpus(fx.sentences, fx.vocab, fx.specs);
    auto weights = inverse_frequency_weights(prepared, fx.specs);
    REQUIRE(weights.size() == 4);

    for (std::size_t a = 0; a < weights.size(); ++a) {
        double sum = 0.0;
        long seen = 0;
        for (double w : weights[a]) {
            if (w == 0.0) continue;
            sum += w;
            ++seen;
        }
        REQUIRE(seen > 0);
        CHECK(sum / static_cast<double>(seen) == doctest::Approx(1.0));
    }

    // Hand check on CPOS: corpus has 2 DET words -> 4 char sub-words, etc.
    long det = 0, total = 0;
    for (const auto& s : prepared)
        for (int g : s.sub_gold[0]) {
            total += 1;
            if (fx.specs[0].tag_set[static_cast<std::size_t>(g)] == "DET") ++det;
        }
    CHECK(det > 0);
    // Rarer tags carry larger weights.
    std::vector<long> counts(3, 0);
    for (const auto& s : prepared)
        for (int g : s.sub_gold[0]) ++counts[static_cast<std::size_t>(g)];
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            if (counts[i] < counts[j]) CHECK(weights[0][i] > weights[0][j]);
}

TEST_CASE("f1 scores match the hand-worked confusion matrix") {
    // 9 correct A, one B predicted as A.
    std::vector<std::string> gold(9, "A"), pred(9, "A");
    gold.push_back("B");
    pred.push_back("A");
    F1Pair pair = f1_scores(gold, pred, {"A", "B"});
    CHECK(pair.micro == doctest::Approx(90.0));
    CHECK(pair.macro == doctest::Approx((200.0 * 9 / 19 + 0.0) / 2).epsilon(1e-9));
    CHECK(pair.macro == doctest::Approx(47.37).epsilon(1e-3));

    F1Pair perfect = f1_scores({"A", "B", "A"}, {"A", "B", "A"}, {"A", "B"});
    CHECK(perfect.micro == doctest::Approx(100.0));
    CHECK(perfect.macro == doctest::Approx(100.0));
}

TEST_CASE("zero extractor epochs leave parameters at the seeded initialization") {
    Fixture fx;
    Encoder enc(mini_encoder_config(), fx.vocab.size(), 3);
    AspectExtractor ex(fx.specs, 16, 3, 20, 4, 7);
    auto prepared = prepare_aspect_corpus(fx.sentences, fx.vocab, fx.specs);

    std::vector<std::uint8_t> before = ex.to_checkpoint().to_bytes();
    AspectTrainOptions options;
    options.epochs = 0;
    AspectTrainLog log = train_aspect_extractor(ex, enc, prepared, options, 5);
    CHECK(log.epochs.empty());
    CHECK(ex.to_checkpoint().to_bytes() == before);
}

TEST_CASE("extractor training is deterministic and reduces the loss") {
    Fixture fx;
    Encoder enc(mini_encoder_config(), fx.vocab.size(), 3);
    auto prepared = prepare_aspect_corpus(fx.sentences, fx.vocab, fx.specs);

    AspectTrainOptions options;
    options.epochs = 3;
    options.batch_sentences = 2;

    AspectExtractor a(fx.specs, 16, 3, 20, 4, 7);
    AspectTrainLog la = train_aspect_extractor(a, enc, prepared, options, 5);
    REQUIRE(la.epochs.size() == 3);
    CHECK(la.epochs.back().total < la.epochs.front().total);
    for (const auto& e : la.epochs)
        CHECK(e.total == e.classification + e.reconstruction + e.similarity);

    AspectExtractor b(fx.specs, 16, 3, 20, 4, 7);
    AspectTrainLog lb = train_aspect_extractor(b, enc, prepared, options, 5);
    CHECK(a.to_checkpoint().to_bytes() == b.to_checkpoint().to_bytes());
    for (std::size_t i = 0; i < la.epochs.size(); ++i)
        CHECK(la.epochs[i].total == lb.epochs[i].total);
}

TEST_CASE("extractor checkpoints round trip through bytes") {
    Fixture fx;
    AspectExtractor ex(fx.specs, 16, 3, 20, 4, 7);
    Checkpoint ckpt = ex.to_checkpoint();
    AspectExtractor back =
        AspectExtractor::from_checkpoint(Checkpoint::from_bytes(ckpt.to_bytes()));
    CHECK(back.aspect_count() == 4);
    CHECK(back.aspect_width() == 4);
    CHECK(back.stack_arity() == 3);
    CHECK(back.aspects()[2].tag_set == fx.specs[2].tag_set);

    Eigen::RowVectorXd row = Eigen::RowVectorXd::LinSpaced(16, -1.0, 1.0);
    AspectVectors av1 = ex.extract(row);
    AspectVectors av2 = back.extract(row);
    for (std::size_t i = 0; i < av1.vectors.size(); ++i)
        CHECK((av1.vectors[i] - av2.vectors[i]).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("evaluate_f1 reports both granularities and exact token counts") {
    Fixture fx;
    Encoder enc(mini_encoder_config(), fx.vocab.size(), 3);
    AspectExtractor ex(fx.specs, 16, 3, 20, 4, 7);
    auto prepared = prepare_aspect_corpus(fx.sentences, fx.vocab, fx.specs);

    F1Report report = evaluate_f1(ex, enc, prepared);
    REQUIRE(report.lines.size() == 7); // 4 sub-word + 3 word (SWP sub-word only)

    long total_sub = 0;
    for (const auto& s : prepared) total_sub += static_cast<long>(s.ids.size());
    long total_words = 0;
    for (const auto& s : fx.sentences) total_words += static_cast<long>(s.words.size());
    for (const auto& line : report.lines) {
        CHECK(line.micro >= 0.0);
        CHECK(line.micro <= 100.0);
        if (line.level == "sub-word") CHECK(line.n_tokens == total_sub);
        if (line.level == "word") CHECK(line.n_tokens == total_words);
    }

    std::string tsv = f1_report_tsv(report);
    CHECK(tsv.find("aspect\tlevel\tn_tokens\tmicro_f1\tmacro_f1\n") == 0);
    CHECK(tsv.find("SWP\tword") == std::string::npos);

    CHECK_THROWS_WITH_AS(evaluate_f1(ex, enc, {}), doctest::Contains("empty"), Error);
}

TEST_CASE("a probe fed all-zero vectors can only learn the prior") {
    Fixture fx;
    Encoder enc(mini_encoder_config(), fx.vocab.size(), 3);
    AspectExtractor ex(fx.specs, 16, 3, 20, 4, 7);
    // Zero the shared map: every aspect vector becomes exactly zero.
    for (auto* p : ex.params().items)
        if (p->name == "extractor.shared.W" || p->name == "extractor.shared.b")
            p->value.setZero();
    auto prepared = prepare_aspect_corpus(fx.sentences, fx.vocab, fx.specs);

    ProbeResult probe = counterfactual_probe(ex, enc, prepared, "WSH", "CPOS", 13);
    CHECK(probe.source_aspect == "WSH");
    CHECK(probe.target_aspect == "CPOS");
    CHECK(probe.n_tokens > 0);
    CHECK(probe.mfc_class == "VERB"); // most sub-words belong to the verbs
    CHECK(probe.f1_avg == doctest::Approx(probe.mfc_pct).epsilon(1e-9));
}

TEST_CASE("probe report formatting") {
    ProbeResult r;
    r.source_aspect = "CPOS";
    r.target_aspect = "WSH";
    r.f1_avg = 12.3456;
    r.mfc_class = "xx";
    r.mfc_pct = 27.134;
    r.n_tokens = 420;
    std::string tsv = probe_report_tsv({r});
    CHECK(tsv ==
          "source_aspect\ttarget_aspect\tf1_avg\tmfc_class\tmfc_pct\tn_tokens\n"
          "CPOS\tWSH\t12.35\txx\t27.13\t420\n");
}

TEST_CASE("reconstruction distance of forced alignments") {
    Fixture fx;
    Encoder enc(mini_encoder_config(), fx.vocab.size(), 3);
    AspectExtractor ex(fx.specs, 16, 3, 20, 4, 7);
    auto prepared = prepare_aspect_corpus(fx.sentences, fx.vocab, fx.specs);
    std::vector<PreparedSentence> one = {prepared[2]};

    // Point the reconstructor's bias at (a positive multiple of) each token's
    // embedding with zero weights: distance collapses to 0. This needs a
    // single distinct target, so restrict to one token.
    PreparedSentence single = prepared[2];
    single.ids.resize(1);
    single.word_index.resize(1);
    for (auto& g : single.sub_gold) g.resize(1);
    LayerStack stack = enc.encode_layers(single.ids);
    Eigen::MatrixXd e = ex.mixed_embedding(stack);

    for (auto* p : ex.params().items) {
        if (p->name == "extractor.recon.W") p->value.setZero();
        if (p->name == "extractor.recon.b") p->value = 3.0 * e.row(0);
    }
    ReconReport same = reconstruction_distance(ex, enc, {single});
    CHECK(same.tokens == 1);
    CHECK(same.mean_distance == doctest::Approx(0.0).epsilon(1e-9));

    for (auto* p : ex.params().items)
        if (p->name == "extractor.recon.b") p->value = -e.row(0);
    ReconReport opposite = reconstruction_distance(ex, enc, {single});
    CHECK(opposite.mean_distance == doctest::Approx(2.0));

    // Untouched extractor: distances live in [0, 2] and nothing is skipped.
    AspectExtractor fresh(fx.specs, 16, 3, 20, 4, 7);
    ReconReport all = reconstruction_distance(fresh, enc, prepared);
    CHECK(all.skipped == 0);
    CHECK(all.tokens > 0);
    CHECK(all.mean_distance >= 0.0);
    CHECK(all.mean_distance <= 2.0);
}
