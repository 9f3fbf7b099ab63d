#include "aspectnmt/experiment.hpp"

#include <atomic>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "aspectnmt/errors.hpp"

namespace aspectnmt {

namespace {

[[noreturn]] void fail_at(const std::string& source, int line,
                          const std::string& msg) {
    fail(ErrorCategory::Config, source + ":" + std::to_string(line) + ": " + msg);
}

double entry_number(const IniEntry& e, const std::string& source) {
    double v = 0.0;
    const char* first = e.value.data();
    const char* last = first + e.value.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last)
        fail_at(source, e.line,
                "'" + e.key + "' must be a number, got '" + e.value + "'");
    return v;
}

int entry_int(const IniEntry& e, const std::string& source) {
    double v = entry_number(e, source);
    if (v != static_cast<double>(static_cast<int>(v)))
        fail_at(source, e.line, "'" + e.key + "' must be an integer, got '" +
                                    e.value + "'");
    return static_cast<int>(v);
}

// Every section with its full key inventory; anything else is a typo.
const std::map<std::string, std::set<std::string>>& known_keys() {
    static const std::map<std::string, std::set<std::string>> keys = {
        {"corpus",
         {"grammar", "aspect_train", "aspect_val", "nmt_train", "nmt_val",
          "nmt_test"}},
        {"tokenizer", {"vocab_size"}},
        {"encoder",
         {"layers", "model_dim", "heads", "ff_dim", "max_positions", "mask_rate",
          "epochs", "batch_sentences", "learn_rate", "grad_clip"}},
        {"aspects",
         {"aspect_width", "epochs", "batch_sentences", "learn_rate", "momentum",
          "grad_clip", "plateau_decay", "plateau_patience"}},
        {"nmt",
         {"layers", "model_dim", "ff_dim", "heads", "dropout", "label_smoothing",
          "opt_factor", "opt_warmup", "grad_accumulation", "batch_tokens",
          "epochs", "max_positions", "beam_size", "length_norm_alpha",
          "integration"}},
        {"eval", {"seeds"}},
    };
    return keys;
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCategory::Io, "cannot open " + path + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) fail(ErrorCategory::Io, "failed writing " + path);
}

std::string join_words(const std::vector<std::string>& words) {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i > 0) out += ' ';
        out += words[i];
    }
    return out;
}

std::string format_fixed(double v, int decimals) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(decimals) << v;
    return out.str();
}

} // namespace

void ExperimentConfig::validate() const {
    if (corpus.grammar_path.empty())
        fail(ErrorCategory::Config, "experiment needs a grammar path");
    if (corpus.aspect_train < 1 || corpus.aspect_val < 1 || corpus.nmt_train < 1 ||
        corpus.nmt_val < 1 || corpus.nmt_test < 1)
        fail(ErrorCategory::Config, "every corpus slice needs at least one pair");
    if (vocab_size <= 5)
        fail(ErrorCategory::Config,
             "vocab_size " + std::to_string(vocab_size) +
                 " leaves no room beyond the special tokens");
    encoder.validate();
    if (encoder_train.epochs < 0)
        fail(ErrorCategory::Config, "encoder epochs cannot be negative");
    if (encoder_train.batch_sentences < 1)
        fail(ErrorCategory::Config, "encoder batch_sentences must be at least 1");
    if (encoder_train.learn_rate <= 0.0)
        fail(ErrorCategory::Config, "encoder learn_rate must be positive");
    if (encoder_train.grad_clip < 0.0)
        fail(ErrorCategory::Config, "encoder grad_clip cannot be negative");
    if (aspect_width < 1)
        fail(ErrorCategory::Config, "aspect_width must be at least 1");
    if (aspect_train.epochs < 0)
        fail(ErrorCategory::Config, "aspects epochs cannot be negative");
    if (aspect_train.batch_sentences < 1)
        fail(ErrorCategory::Config, "aspects batch_sentences must be at least 1");
    if (aspect_train.learn_rate <= 0.0)
        fail(ErrorCategory::Config, "aspects learn_rate must be positive");
    if (aspect_train.momentum < 0.0 || aspect_train.momentum >= 1.0)
        fail(ErrorCategory::Config, "aspects momentum must lie in [0, 1)");
    if (aspect_train.grad_clip < 0.0)
        fail(ErrorCategory::Config, "aspects grad_clip cannot be negative");
    if (aspect_train.plateau_decay <= 0.0 || aspect_train.plateau_decay > 1.0)
        fail(ErrorCategory::Config, "aspects plateau_decay must lie in (0, 1]");
    if (aspect_train.plateau_patience < 1)
        fail(ErrorCategory::Config, "aspects plateau_patience must be at least 1");
    if (nmt.integration == IntegrationMode::Off)
        fail(ErrorCategory::Config,
             "the [nmt] integration mode names the augmented arm and cannot be "
             "'off'; the vanilla arm always runs alongside it");
    if (nmt.linguistic_width != 0)
        fail(ErrorCategory::Config,
             "linguistic width is derived from the extractor, not configured");
    // The numeric side of the translation config is shared by both arms;
    // check it in vanilla form, where no linguistic width is expected.
    TransformerConfig plain = nmt;
    plain.integration = IntegrationMode::Off;
    plain.linguistic_width = 0;
    plain.validate();
    if (eval_seeds < 1)
        fail(ErrorCategory::Config, "eval seeds must be at least 1");
}

ExperimentConfig ExperimentConfig::from_ini(const IniFile& ini) {
    for (const std::string& s : ini.sections)
        if (known_keys().find(s) == known_keys().end())
            fail(ErrorCategory::Config,
                 ini.source + ": unknown section [" + s + "]");
    for (const IniEntry& e : ini.entries) {
        const auto section = known_keys().find(e.section);
        if (section == known_keys().end())
            fail_at(ini.source, e.line, "unknown section [" + e.section + "]");
        if (section->second.find(e.key) == section->second.end())
            fail_at(ini.source, e.line,
                    "unknown key '" + e.key + "' in [" + e.section + "]");
    }

    ExperimentConfig cfg;
    auto number = [&](const std::string& section, const std::string& key,
                      double* into) {
        if (const IniEntry* e = ini.find_one(section, key))
            *into = entry_number(*e, ini.source);
    };
    auto integer = [&](const std::string& section, const std::string& key,
                       int* into) {
        if (const IniEntry* e = ini.find_one(section, key))
            *into = entry_int(*e, ini.source);
    };

    if (const IniEntry* e = ini.find_one("corpus", "grammar"))
        cfg.corpus.grammar_path = e->value;
    integer("corpus", "aspect_train", &cfg.corpus.aspect_train);
    integer("corpus", "aspect_val", &cfg.corpus.aspect_val);
    integer("corpus", "nmt_train", &cfg.corpus.nmt_train);
    integer("corpus", "nmt_val", &cfg.corpus.nmt_val);
    integer("corpus", "nmt_test", &cfg.corpus.nmt_test);

    integer("tokenizer", "vocab_size", &cfg.vocab_size);

    integer("encoder", "layers", &cfg.encoder.layers);
    integer("encoder", "model_dim", &cfg.encoder.model_dim);
    integer("encoder", "heads", &cfg.encoder.heads);
    integer("encoder", "ff_dim", &cfg.encoder.ff_dim);
    integer("encoder", "max_positions", &cfg.encoder.max_positions);
    number("encoder", "mask_rate", &cfg.encoder.mask_rate);
    integer("encoder", "epochs", &cfg.encoder_train.epochs);
    integer("encoder", "batch_sentences", &cfg.encoder_train.batch_sentences);
    number("encoder", "learn_rate", &cfg.encoder_train.learn_rate);
    number("encoder", "grad_clip", &cfg.encoder_train.grad_clip);

    integer("aspects", "aspect_width", &cfg.aspect_width);
    integer("aspects", "epochs", &cfg.aspect_train.epochs);
    integer("aspects", "batch_sentences", &cfg.aspect_train.batch_sentences);
    number("aspects", "learn_rate", &cfg.aspect_train.learn_rate);
    number("aspects", "momentum", &cfg.aspect_train.momentum);
    number("aspects", "grad_clip", &cfg.aspect_train.grad_clip);
    number("aspects", "plateau_decay", &cfg.aspect_train.plateau_decay);
    integer("aspects", "plateau_patience", &cfg.aspect_train.plateau_patience);

    integer("nmt", "layers", &cfg.nmt.layers);
    integer("nmt", "model_dim", &cfg.nmt.model_dim);
    integer("nmt", "ff_dim", &cfg.nmt.ff_dim);
    integer("nmt", "heads", &cfg.nmt.heads);
    number("nmt", "dropout", &cfg.nmt.dropout);
    number("nmt", "label_smoothing", &cfg.nmt.label_smoothing);
    number("nmt", "opt_factor", &cfg.nmt.opt_factor);
    integer("nmt", "opt_warmup", &cfg.nmt.opt_warmup);
    integer("nmt", "grad_accumulation", &cfg.nmt.grad_accumulation);
    integer("nmt", "batch_tokens", &cfg.nmt.batch_tokens);
    integer("nmt", "epochs", &cfg.nmt.epochs);
    integer("nmt", "max_positions", &cfg.nmt.max_positions);
    integer("nmt", "beam_size", &cfg.nmt.beam_size);
    number("nmt", "length_norm_alpha", &cfg.nmt.length_norm_alpha);
    if (const IniEntry* e = ini.find_one("nmt", "integration"))
        cfg.nmt.integration = parse_integration_mode(e->value);

    integer("eval", "seeds", &cfg.eval_seeds);

    cfg.validate();
    if (!std::filesystem::exists(cfg.corpus.grammar_path))
        fail(ErrorCategory::MissingFile,
             ini.source + ": grammar file '" + cfg.corpus.grammar_path +
                 "' does not exist");
    return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    return from_ini(load_ini(path));
}

ExperimentSlices generate_slices(const GrammarSpec& grammar,
                                 const CorpusPlan& plan, std::uint64_t seed) {
    std::vector<ParallelPair> all = generate_corpus(grammar, plan.total(), seed);
    ExperimentSlices slices;
    auto take = [&all](int count) {
        std::vector<ParallelPair> out(all.begin(), all.begin() + count);
        all.erase(all.begin(), all.begin() + count);
        return out;
    };
    slices.aspect_train = take(plan.aspect_train);
    slices.aspect_val = take(plan.aspect_val);
    slices.nmt_train = take(plan.nmt_train);
    slices.nmt_val = take(plan.nmt_val);
    slices.nmt_test = take(plan.nmt_test);
    return slices;
}

SubwordVocab build_shared_vocab(const ExperimentSlices& slices, int vocab_size) {
    std::vector<std::string> stream;
    for (const ParallelPair& p : slices.aspect_train)
        for (const std::string& w : p.source.words) stream.push_back(w);
    for (const ParallelPair& p : slices.nmt_train) {
        for (const std::string& w : p.source.words) stream.push_back(w);
        for (const std::string& w : p.target) stream.push_back(w);
    }
    return train_subword_vocab(stream, vocab_size);
}

std::vector<AspectSpec> experiment_aspects(
    const GrammarSpec& grammar, const std::vector<TaggedSentence>& sentences,
    const SubwordVocab& vocab) {
    std::vector<SubwordSequence> sequences;
    sequences.reserve(sentences.size());
    for (const TaggedSentence& s : sentences)
        sequences.push_back(subword_tokenize(s.words, vocab));
    return {grammar.cpos_spec(), grammar.fpos_spec(), shape_spec(sequences),
            swp_spec()};
}

std::vector<NmtPair> nmt_pairs(const std::vector<ParallelPair>& pairs,
                               const SubwordVocab& vocab) {
    std::vector<NmtPair> out;
    out.reserve(pairs.size());
    for (const ParallelPair& p : pairs) {
        NmtPair np;
        for (const SubwordTok& t : subword_tokenize(p.source.words, vocab).tokens)
            np.src.push_back(t.id);
        for (const SubwordTok& t : subword_tokenize(p.target, vocab).tokens)
            np.tgt.push_back(t.id);
        out.push_back(std::move(np));
    }
    return out;
}

std::vector<NmtValExample> nmt_val_examples(const std::vector<ParallelPair>& pairs,
                                            const SubwordVocab& vocab) {
    std::vector<NmtValExample> out;
    out.reserve(pairs.size());
    for (const ParallelPair& p : pairs) {
        NmtValExample ex;
        for (const SubwordTok& t : subword_tokenize(p.source.words, vocab).tokens)
            ex.src.push_back(t.id);
        ex.ref_text = join_words(p.target);
        out.push_back(std::move(ex));
    }
    return out;
}

int max_worker_threads(int fallback_threads) {
    const char* raw = std::getenv("ASPECTNMT_THREADS");
    if (raw == nullptr || *raw == '\0') return fallback_threads;
    int v = 0;
    const char* last = raw;
    while (*last != '\0') ++last;
    auto [ptr, ec] = std::from_chars(raw, last, v);
    if (ec != std::errc() || ptr != last || v < 0)
        fail(ErrorCategory::Config,
             "ASPECTNMT_THREADS must be a non-negative integer, got '" +
                 std::string(raw) + "'");
    return v == 0 ? fallback_threads : v;
}

namespace {

// Shared inputs of one translation run; everything const during the runs.
struct RunContext {
    const ExperimentConfig* config;
    const SubwordVocab* vocab;
    const Encoder* encoder;
    const AspectExtractor* extractor;
    const std::vector<NmtPair>* train;
    const std::vector<NmtValExample>* val;
    const std::vector<NmtPair>* test;
    const std::vector<std::string>* test_refs;
    const std::vector<std::uint8_t>* frozen_bytes; // extractor before any run
    std::string out_dir;
    std::ostream* progress;
    std::mutex* progress_mutex;
};

struct RunJob {
    std::string arm; // "vanilla" or "aspects"
    std::uint64_t seed = 0;
};

void note(const RunContext& ctx, const std::string& line) {
    if (ctx.progress == nullptr) return;
    std::lock_guard<std::mutex> hold(*ctx.progress_mutex);
    (*ctx.progress) << line << "\n" << std::flush;
}

NmtRunResult execute_run(const RunContext& ctx, const RunJob& job) {
    TransformerConfig cfg = ctx.config->nmt;
    if (job.arm == "vanilla") {
        cfg.integration = IntegrationMode::Off;
        cfg.linguistic_width = 0;
    } else {
        const int chunks =
            ctx.extractor->aspect_count() +
            (cfg.integration == IntegrationMode::AspectsLeftover ? 1 : 0);
        cfg.linguistic_width = chunks * ctx.extractor->aspect_width();
    }

    NmtModel model(cfg, *ctx.vocab, job.seed);
    if (job.arm != "vanilla") model.attach_linguistics(ctx.encoder, ctx.extractor);

    note(ctx, "[experiment] training " + job.arm + " seed " +
                  std::to_string(job.seed) + " (" + std::to_string(cfg.epochs) +
                  " epochs)");
    const NmtTrainLog log = model.train(*ctx.train, *ctx.val, job.seed);

    if (job.arm != "vanilla" &&
        ctx.extractor->to_checkpoint().to_bytes() != *ctx.frozen_bytes)
        fail(ErrorCategory::Internal,
             "frozen extractor changed during " + job.arm + " seed " +
                 std::to_string(job.seed));

    std::vector<std::string> hyps;
    hyps.reserve(ctx.test->size());
    for (const NmtPair& p : *ctx.test) {
        std::vector<std::string> pieces;
        for (int id : model.translate_ids(p.src))
            pieces.push_back(ctx.vocab->id_to_token[static_cast<std::size_t>(id)]);
        hyps.push_back(detokenize(pieces));
    }
    const BleuReport bleu = corpus_bleu(hyps, *ctx.test_refs);

    const std::string stem = job.arm + "_seed" + std::to_string(job.seed);
    model.save(ctx.out_dir + "/models/" + stem + ".ckpt");
    write_text(ctx.out_dir + "/training_logs/" + stem + ".tsv",
               training_log_tsv(log));

    note(ctx, "[experiment] " + job.arm + " seed " + std::to_string(job.seed) +
                  ": test BLEU " + format_fixed(bleu.score, 2) + ", best val " +
                  format_fixed(log.best_bleu, 2));
    return {job.arm, job.seed, bleu.score, log.best_bleu};
}

} // namespace

ExperimentResult run_experiment(const ExperimentConfig& config,
                                const ExperimentOptions& options) {
    config.validate();
    if (options.out_dir.empty())
        fail(ErrorCategory::Config, "experiment needs an output directory");

    namespace fs = std::filesystem;
    fs::create_directories(options.out_dir);
    fs::create_directories(options.out_dir + "/corpus");
    fs::create_directories(options.out_dir + "/models");
    fs::create_directories(options.out_dir + "/training_logs");

    std::mutex progress_mutex;
    RunContext ctx;
    ctx.config = &config;
    ctx.out_dir = options.out_dir;
    ctx.progress = options.progress;
    ctx.progress_mutex = &progress_mutex;

    // Corpus and slices.
    const GrammarSpec grammar = load_grammar(config.corpus.grammar_path);
    note(ctx, "[experiment] generating " + std::to_string(config.corpus.total()) +
                  " pairs");
    const ExperimentSlices slices =
        generate_slices(grammar, config.corpus, options.seed_base);

    auto tagged_of = [](const std::vector<ParallelPair>& pairs) {
        std::vector<TaggedSentence> out;
        out.reserve(pairs.size());
        for (const ParallelPair& p : pairs) out.push_back(p.source);
        return out;
    };
    const std::vector<TaggedSentence> aspect_train_tagged =
        tagged_of(slices.aspect_train);
    const std::vector<TaggedSentence> aspect_val_tagged =
        tagged_of(slices.aspect_val);

    save_tagged(aspect_train_tagged, options.out_dir + "/corpus/aspect_train.tagged");
    save_tagged(aspect_val_tagged, options.out_dir + "/corpus/aspect_val.tagged");
    save_parallel(slices.nmt_train, options.out_dir + "/corpus/nmt_train");
    save_parallel(slices.nmt_val, options.out_dir + "/corpus/nmt_val");
    save_parallel(slices.nmt_test, options.out_dir + "/corpus/nmt_test");

    // Shared vocabulary.
    const SubwordVocab vocab = build_shared_vocab(slices, config.vocab_size);
    save_vocab(vocab, options.out_dir + "/vocab.txt");

    // Contextual encoder pretraining on the extractor slice.
    std::vector<std::vector<int>> mlm_corpus;
    mlm_corpus.reserve(aspect_train_tagged.size());
    for (const TaggedSentence& s : aspect_train_tagged) {
        std::vector<int> ids;
        for (const SubwordTok& t : subword_tokenize(s.words, vocab).tokens)
            ids.push_back(t.id);
        mlm_corpus.push_back(std::move(ids));
    }
    Encoder encoder(config.encoder, vocab.size(), options.seed_base + 1);
    note(ctx, "[experiment] pretraining encoder (" +
                  std::to_string(config.encoder_train.epochs) + " epochs)");
    encoder.pretrain_masked_lm(mlm_corpus, config.encoder_train,
                               options.seed_base + 1);
    encoder.save(options.out_dir + "/encoder.ckpt");

    // Aspect extractor training on the same slice.
    const std::vector<AspectSpec> aspects =
        experiment_aspects(grammar, aspect_train_tagged, vocab);
    const std::vector<PreparedSentence> prepared_train =
        prepare_aspect_corpus(aspect_train_tagged, vocab, aspects);
    const std::vector<PreparedSentence> prepared_val =
        prepare_aspect_corpus(aspect_val_tagged, vocab, aspects);

    const int hidden =
        (static_cast<int>(aspects.size()) + 1) * config.aspect_width;
    AspectExtractor extractor(aspects, config.encoder.model_dim,
                              config.encoder.layers + 1, hidden,
                              config.aspect_width, options.seed_base + 2);
    note(ctx, "[experiment] training extractor (" +
                  std::to_string(config.aspect_train.epochs) + " epochs)");
    train_aspect_extractor(extractor, encoder, prepared_train,
                           config.aspect_train, options.seed_base + 2);
    extractor.save(options.out_dir + "/extractor.ckpt");

    // Quality reports on the held-out slice.
    ExperimentResult result;
    note(ctx, "[experiment] scoring tagging quality on held-out data");
    result.f1 = evaluate_f1(extractor, encoder, prepared_val);
    write_text(options.out_dir + "/f1_report.tsv", f1_report_tsv(result.f1));

    for (const auto& [source, target] :
         std::vector<std::pair<std::string, std::string>>{
             {"CPOS", "CPOS"}, {"WSH", "WSH"}, {"WSH", "CPOS"}, {"CPOS", "WSH"}})
        result.probes.push_back(counterfactual_probe(extractor, encoder,
                                                     prepared_val, source, target,
                                                     options.seed_base + 3));
    write_text(options.out_dir + "/probe_report.tsv",
               probe_report_tsv(result.probes));

    result.recon = reconstruction_distance(extractor, encoder, prepared_val);
    write_text(options.out_dir + "/recon.txt",
               "# reconstruction distance on held-out data\n"
               "mean_distance\t" +
                   format_fixed(result.recon.mean_distance, 6) + "\ntokens\t" +
                   std::to_string(result.recon.tokens) + "\nskipped\t" +
                   std::to_string(result.recon.skipped) + "\n");

    // Paired translation runs.
    const std::vector<NmtPair> train_pairs = nmt_pairs(slices.nmt_train, vocab);
    const std::vector<NmtValExample> val_examples =
        nmt_val_examples(slices.nmt_val, vocab);
    const std::vector<NmtPair> test_pairs = nmt_pairs(slices.nmt_test, vocab);
    std::vector<std::string> test_refs;
    test_refs.reserve(slices.nmt_test.size());
    for (const ParallelPair& p : slices.nmt_test)
        test_refs.push_back(join_words(p.target));

    const std::vector<std::uint8_t> frozen_bytes =
        extractor.to_checkpoint().to_bytes();
    ctx.vocab = &vocab;
    ctx.encoder = &encoder;
    ctx.extractor = &extractor;
    ctx.train = &train_pairs;
    ctx.val = &val_examples;
    ctx.test = &test_pairs;
    ctx.test_refs = &test_refs;
    ctx.frozen_bytes = &frozen_bytes;

    std::vector<RunJob> jobs;
    for (int k = 0; k < config.eval_seeds; ++k) {
        const std::uint64_t seed = options.seed_base + 10 + static_cast<std::uint64_t>(k);
        jobs.push_back({"vanilla", seed});
        jobs.push_back({"aspects", seed});
    }

    result.runs.resize(jobs.size());
    if (options.parallel_seeds && jobs.size() > 1) {
        const unsigned hardware = std::thread::hardware_concurrency();
        const int fallback = hardware == 0 ? 1 : static_cast<int>(hardware);
        const int workers = std::min(static_cast<int>(jobs.size()),
                                     max_worker_threads(fallback));
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        std::mutex error_mutex;
        std::exception_ptr first_error;
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < jobs.size();
                     i = next.fetch_add(1)) {
                    try {
                        result.runs[i] = execute_run(ctx, jobs[i]);
                    } catch (...) {
                        std::lock_guard<std::mutex> hold(error_mutex);
                        if (!first_error) first_error = std::current_exception();
                    }
                }
            });
        for (std::thread& t : pool) t.join();
        if (first_error) std::rethrow_exception(first_error);
    } else {
        for (std::size_t i = 0; i < jobs.size(); ++i)
            result.runs[i] = execute_run(ctx, jobs[i]);
    }

    // Summary table: one column per seed, one row per arm.
    std::vector<RunScores> run_scores;
    for (int k = 0; k < config.eval_seeds; ++k) {
        RunScores rs;
        rs.label = "seed" + std::to_string(options.seed_base + 10 +
                                           static_cast<std::uint64_t>(k));
        rs.metrics = {
            {"vanilla", result.runs[static_cast<std::size_t>(2 * k)].test_bleu},
            {"aspects", result.runs[static_cast<std::size_t>(2 * k + 1)].test_bleu}};
        run_scores.push_back(std::move(rs));
    }
    result.bleu_summary = summary_tsv(run_scores, summarize_runs(run_scores));
    write_text(options.out_dir + "/bleu_summary.tsv", result.bleu_summary);
    note(ctx, "[experiment] wrote reports to " + options.out_dir);
    return result;
}

} // namespace aspectnmt
