#include "aspectnmt/aspects.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "aspectnmt/align.hpp"
#include "aspectnmt/errors.hpp"
#include "aspectnmt/ini.hpp"
#include "aspectnmt/textfmt.hpp"

namespace aspectnmt {

namespace {

constexpr const char* kEchoSection = "extractor";

int tag_index(const AspectSpec& spec, const std::string& tag) {
    for (std::size_t i = 0; i < spec.tag_set.size(); ++i)
        if (spec.tag_set[i] == tag) return static_cast<int>(i);
    return -1;
}

int require_tag(const AspectSpec& spec, const std::string& tag) {
    int idx = tag_index(spec, tag);
    if (idx < 0)
        fail(ErrorCategory::DataFormat,
             spec.name + " tag '" + tag + "' is not in the extractor's tag set");
    return idx;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string field;
    while (in >> field) out.push_back(field);
    return out;
}

std::string join_list(const std::vector<std::string>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += ' ';
        out += items[i];
    }
    return out;
}

// Tag surfaces (shapes in particular) may start with '#', which a space would
// turn into a trailing INI comment. Pipe-separated with a leading pipe, every
// '#' sits behind a non-blank character and survives the parse.
std::string join_tags(const std::vector<std::string>& tags) {
    std::string out;
    for (const auto& t : tags) {
        if (t.find('|') != std::string::npos ||
            t.find_first_of(" \t\r\n") != std::string::npos)
            fail(ErrorCategory::Internal,
                 "tag '" + t + "' cannot be serialized (holds '|' or whitespace)");
        out += '|';
        out += t;
    }
    return out;
}

std::vector<std::string> split_tags(const std::string& value) {
    std::vector<std::string> out;
    std::string current;
    for (char c : value) {
        if (c == '|') {
            if (!current.empty()) out.push_back(current);
            current.clear();
        } else {
            current += c;
        }
    }
    if (!current.empty()) out.push_back(current);
    return out;
}

int echo_int(const IniFile& ini, const std::string& key) {
    const IniEntry* e = ini.find_one(kEchoSection, key);
    if (!e)
        fail(ErrorCategory::DataFormat,
             ini.source + ": missing extractor config key '" + key + "'");
    int v = 0;
    auto [ptr, ec] = std::from_chars(e->value.data(), e->value.data() + e->value.size(), v);
    if (ec != std::errc() || ptr != e->value.data() + e->value.size())
        fail(ErrorCategory::DataFormat,
             ini.source + ": '" + key + "' must be an integer, got '" + e->value + "'");
    return v;
}

std::string echo_string(const IniFile& ini, const std::string& key) {
    const IniEntry* e = ini.find_one(kEchoSection, key);
    if (!e)
        fail(ErrorCategory::DataFormat,
             ini.source + ": missing extractor config key '" + key + "'");
    return e->value;
}

Eigen::MatrixXd vstack(const std::vector<const Eigen::MatrixXd*>& parts) {
    long rows = 0;
    for (const auto* p : parts) rows += p->rows();
    Eigen::MatrixXd out(rows, parts.empty() ? 0 : parts[0]->cols());
    long at = 0;
    for (const auto* p : parts) {
        out.middleRows(at, p->rows()) = *p;
        at += p->rows();
    }
    return out;
}

} // namespace

AspectSpec swp_spec() {
    return AspectSpec{"SWP",
                      {swp_name(Swp::Begin), swp_name(Swp::Inside), swp_name(Swp::Single)}};
}

AspectSpec shape_spec(const std::vector<SubwordSequence>& sequences) {
    std::set<std::string> shapes;
    for (const auto& seq : sequences)
        for (const auto& s : seq.shapes) shapes.insert(s);
    AspectSpec spec{"WSH", {}};
    spec.tag_set.assign(shapes.begin(), shapes.end());
    return spec;
}

std::vector<PreparedSentence> prepare_aspect_corpus(
    const std::vector<TaggedSentence>& sentences, const SubwordVocab& vocab,
    const std::vector<AspectSpec>& aspects) {
    std::vector<PreparedSentence> out;
    out.reserve(sentences.size());
    for (std::size_t si = 0; si < sentences.size(); ++si) {
        const TaggedSentence& sent = sentences[si];
        if (sent.words.empty())
            fail(ErrorCategory::DataFormat,
                 "sentence " + std::to_string(si) + " has no words");
        SubwordSequence seq = subword_tokenize(sent.words, vocab);

        std::vector<std::string> surfaces;
        surfaces.reserve(seq.tokens.size());
        for (const auto& t : seq.tokens) surfaces.push_back(t.surface);
        Alignment alignment = monotonic_align(sent.words, surfaces);

        PreparedSentence prep;
        prep.ids.reserve(seq.tokens.size());
        for (const auto& t : seq.tokens) prep.ids.push_back(t.id);
        for (const auto& t : seq.tokens) prep.word_index.push_back(t.word_index);

        for (const auto& spec : aspects) {
            std::vector<std::string> sub_labels;
            std::vector<std::string> word_labels;
            if (spec.name == "CPOS" || spec.name == "FPOS") {
                const auto& word_tags = spec.name == "CPOS" ? sent.cpos : sent.fpos;
                if (word_tags.size() != sent.words.size())
                    fail(ErrorCategory::DataFormat,
                         "sentence " + std::to_string(si) + " has " +
                             std::to_string(sent.words.size()) + " words but " +
                             std::to_string(word_tags.size()) + " " + spec.name +
                             " tags");
                sub_labels = project_tags(word_tags, alignment);
                word_labels = word_tags;
            } else if (spec.name == "WSH") {
                sub_labels = seq.shapes;
                for (const auto& w : sent.words) word_labels.push_back(word_shape(w));
            } else if (spec.name == "SWP") {
                for (Swp s : seq.swp_labels) sub_labels.push_back(swp_name(s));
                // no word-level notion of sub-word position
            } else {
                fail(ErrorCategory::Config,
                     "no gold source for aspect '" + spec.name + "'");
            }

            std::vector<int> sub_idx;
            sub_idx.reserve(sub_labels.size());
            for (const auto& tag : sub_labels) sub_idx.push_back(require_tag(spec, tag));
            prep.sub_gold.push_back(std::move(sub_idx));
            prep.word_gold.push_back(std::move(word_labels));
        }
        out.push_back(std::move(prep));
    }
    return out;
}

AspectExtractor::AspectExtractor(const std::vector<AspectSpec>& aspects, int model_dim,
                                 int stack_arity, int hidden, int aspect_width,
                                 std::uint64_t seed)
    : aspects_(aspects), model_dim_(model_dim), hidden_(hidden),
      aspect_width_(aspect_width), stack_arity_(stack_arity) {
    init_params(seed);
}

AspectExtractor::AspectExtractor(const Checkpoint& ckpt) {
    IniFile ini = parse_ini(ckpt.config_echo, "extractor checkpoint config");
    model_dim_ = echo_int(ini, "model_dim");
    stack_arity_ = echo_int(ini, "stack_arity");
    hidden_ = echo_int(ini, "hidden");
    aspect_width_ = echo_int(ini, "aspect_width");
    for (const auto& name : split_list(echo_string(ini, "aspects"))) {
        AspectSpec spec{name, split_tags(echo_string(ini, "tags_" + name))};
        if (spec.tag_set.empty())
            fail(ErrorCategory::DataFormat,
                 "extractor checkpoint config: aspect '" + name + "' has no tags");
        aspects_.push_back(std::move(spec));
    }
    init_params(0);
    store_.from_checkpoint(ckpt);
}

void AspectExtractor::init_params(std::uint64_t seed) {
    int n = aspect_count();
    if (n < 1)
        fail(ErrorCategory::Config, "extractor needs at least one aspect");
    if (model_dim_ <= 0 || aspect_width_ <= 0 || stack_arity_ <= 0)
        fail(ErrorCategory::Config, "extractor dimensions must be positive");
    if (hidden_ != (n + 1) * aspect_width_)
        fail(ErrorCategory::Config,
             "extractor hidden width " + std::to_string(hidden_) + " must equal (" +
                 std::to_string(n) + " aspects + 1 leftover) * " +
                 std::to_string(aspect_width_) + " = " +
                 std::to_string((n + 1) * aspect_width_));
    std::set<std::string> names;
    for (const auto& spec : aspects_) {
        if (!names.insert(spec.name).second)
            fail(ErrorCategory::Config, "duplicate aspect '" + spec.name + "'");
        if (spec.tag_set.empty())
            fail(ErrorCategory::Config, "aspect '" + spec.name + "' has no tags");
    }

    Rng rng(seed);
    mix_.init("extractor.mix", stack_arity_, store_);
    shared_.init("extractor.shared", model_dim_, hidden_, rng, store_);
    classifiers_.resize(static_cast<std::size_t>(n));
    for (int a = 0; a < n; ++a)
        classifiers_[static_cast<std::size_t>(a)].init(
            "extractor.cls." + aspects_[static_cast<std::size_t>(a)].name,
            aspect_width_, static_cast<int>(aspects_[static_cast<std::size_t>(a)].tag_set.size()),
            rng, store_);
    recon_.init("extractor.recon", hidden_, model_dim_, rng, store_);
}

int AspectExtractor::aspect_index(const std::string& name) const {
    for (std::size_t i = 0; i < aspects_.size(); ++i)
        if (aspects_[i].name == name) return static_cast<int>(i);
    return -1;
}

const nn::Linear& AspectExtractor::classifier(int aspect) const {
    if (aspect < 0 || aspect >= aspect_count())
        fail(ErrorCategory::Internal,
             "aspect index " + std::to_string(aspect) + " out of range (the leftover "
             "slot has no classifier)");
    return classifiers_[static_cast<std::size_t>(aspect)];
}

Eigen::MatrixXd AspectExtractor::mixed_embedding(const LayerStack& stack) const {
    return mix_.apply_plain(stack);
}

Eigen::MatrixXd AspectExtractor::shared_hidden(const Eigen::MatrixXd& embeddings) const {
    if (embeddings.cols() != model_dim_)
        fail(ErrorCategory::Internal,
             "extractor fed rows of width " + std::to_string(embeddings.cols()) +
                 ", expected " + std::to_string(model_dim_));
    return shared_.apply_plain(embeddings).cwiseMax(0.0);
}

AspectVectors AspectExtractor::extract(const Eigen::RowVectorXd& embedding_row) const {
    Eigen::MatrixXd h = shared_hidden(embedding_row);
    AspectVectors av;
    av.vectors.reserve(static_cast<std::size_t>(aspect_count()) + 1);
    for (int a = 0; a <= aspect_count(); ++a)
        av.vectors.push_back(h.row(0).segment(a * aspect_width_, aspect_width_));
    return av;
}

Eigen::VectorXd AspectExtractor::classify(const AspectVectors& av, int aspect) const {
    const nn::Linear& cls = classifier(aspect);
    if (static_cast<int>(av.vectors.size()) != aspect_count() + 1)
        fail(ErrorCategory::Internal,
             "expected " + std::to_string(aspect_count() + 1) + " aspect vectors, got " +
                 std::to_string(av.vectors.size()));
    Eigen::RowVectorXd logits =
        av.vectors[static_cast<std::size_t>(aspect)].transpose() * cls.W.value +
        cls.b.value;
    Eigen::VectorXd p = (logits.array() - logits.maxCoeff()).exp().transpose();
    return p / p.sum();
}

Eigen::VectorXd AspectExtractor::reconstruct(const AspectVectors& av) const {
    if (static_cast<int>(av.vectors.size()) != aspect_count() + 1)
        fail(ErrorCategory::Internal,
             "expected " + std::to_string(aspect_count() + 1) + " aspect vectors, got " +
                 std::to_string(av.vectors.size()));
    Eigen::RowVectorXd joined(hidden_);
    for (std::size_t a = 0; a < av.vectors.size(); ++a) {
        if (av.vectors[a].size() != aspect_width_)
            fail(ErrorCategory::Internal, "aspect vector width mismatch");
        joined.segment(static_cast<long>(a) * aspect_width_, aspect_width_) =
            av.vectors[a].transpose();
    }
    return recon_.apply_plain(joined).transpose();
}

Eigen::MatrixXd AspectExtractor::linguistic_embedding(const LayerStack& stack,
                                                      bool include_leftover) const {
    Eigen::MatrixXd h = shared_hidden(mixed_embedding(stack));
    int width = (aspect_count() + (include_leftover ? 1 : 0)) * aspect_width_;
    return h.leftCols(width);
}

Checkpoint AspectExtractor::to_checkpoint() const {
    std::string echo = "[";
    echo += kEchoSection;
    echo += "]\n";
    echo += "model_dim = " + std::to_string(model_dim_) + "\n";
    echo += "stack_arity = " + std::to_string(stack_arity_) + "\n";
    echo += "hidden = " + std::to_string(hidden_) + "\n";
    echo += "aspect_width = " + std::to_string(aspect_width_) + "\n";
    std::vector<std::string> names;
    for (const auto& spec : aspects_) names.push_back(spec.name);
    echo += "aspects = " + join_list(names) + "\n";
    for (const auto& spec : aspects_)
        echo += "tags_" + spec.name + " = " + join_tags(spec.tag_set) + "\n";

    Checkpoint ckpt;
    ckpt.config_echo = echo;
    store_.to_checkpoint(ckpt);
    return ckpt;
}

AspectExtractor AspectExtractor::from_checkpoint(const Checkpoint& ckpt) {
    return AspectExtractor(ckpt);
}

void AspectExtractor::save(const std::string& path) const { to_checkpoint().save(path); }

AspectExtractor AspectExtractor::load(const std::string& path) {
    return from_checkpoint(Checkpoint::load(path));
}

LossBreakdown extractor_loss(ad::Tape& tape, AspectExtractor& extractor,
                             const ExtractorBatch& batch,
                             const ExtractorLossOptions& options, ad::Var* root) {
    int n = extractor.aspect_count();
    if (static_cast<int>(batch.stack.size()) != extractor.stack_arity())
        fail(ErrorCategory::Internal,
             "batch carries " + std::to_string(batch.stack.size()) +
                 " layers, extractor mixes " + std::to_string(extractor.stack_arity()));
    if (static_cast<int>(batch.gold.size()) != n)
        fail(ErrorCategory::DataFormat,
             "batch carries " + std::to_string(batch.gold.size()) +
                 " gold aspects, extractor has " + std::to_string(n));
    long tokens = batch.stack[0].rows();
    for (const auto& g : batch.gold)
        if (static_cast<long>(g.size()) != tokens)
            fail(ErrorCategory::DataFormat,
                 "gold tag count does not match the batch token count");
    if (!options.class_weights.empty() &&
        static_cast<int>(options.class_weights.size()) != n)
        fail(ErrorCategory::Config,
             "class weight table does not cover every aspect");

    ad::Var embedded = ad::scalar_mix(tape, tape.leaf(extractor.mix().logits),
                                      batch.stack);
    ad::Var hidden = ad::relu(tape, extractor.shared_map().apply(tape, embedded));

    ad::Var cls_sum = nullptr;
    for (int a = 0; a < n; ++a) {
        const auto& gold = batch.gold[static_cast<std::size_t>(a)];
        std::vector<double> row_weights(gold.size(), 1.0);
        if (!options.class_weights.empty()) {
            const auto& per_tag = options.class_weights[static_cast<std::size_t>(a)];
            const auto& tags = extractor.aspects()[static_cast<std::size_t>(a)].tag_set;
            if (per_tag.size() != tags.size())
                fail(ErrorCategory::Config,
                     "class weights for " + extractor.aspects()[static_cast<std::size_t>(a)].name +
                         " cover " + std::to_string(per_tag.size()) + " of " +
                         std::to_string(tags.size()) + " tags");
            for (std::size_t r = 0; r < gold.size(); ++r) {
                int g = gold[r];
                if (g < 0 || g >= static_cast<int>(tags.size()))
                    fail(ErrorCategory::DataFormat,
                         "gold index " + std::to_string(g) + " outside the " +
                             extractor.aspects()[static_cast<std::size_t>(a)].name +
                             " tag set");
                row_weights[r] = per_tag[static_cast<std::size_t>(g)];
            }
        }
        ad::Var slot = ad::slice_cols(tape, hidden, a * extractor.aspect_width(),
                                      extractor.aspect_width());
        ad::Var logits = extractor.classifier(a).apply(tape, slot);
        ad::Var ce = ad::cross_entropy(tape, logits, gold, row_weights);
        cls_sum = cls_sum ? ad::add(tape, cls_sum, ce) : ce;
    }
    ad::Var cls_mean = ad::mul_scalar(tape, cls_sum, 1.0 / n);

    ad::Var rebuilt = extractor.reconstructor().apply(tape, hidden);
    ad::Var rec = ad::mean_row_sqdist(tape, rebuilt, embedded);

    int sim_slots = n + (options.include_leftover_similarity ? 1 : 0);
    ad::Var sim = ad::similarity_penalty(tape, hidden, sim_slots,
                                         extractor.aspect_width());

    ad::Var total = ad::add(tape, ad::add(tape, cls_mean, rec), sim);
    if (root) *root = total;
    return LossBreakdown::combine(cls_mean->value(0, 0), rec->value(0, 0),
                                  sim->value(0, 0));
}

std::vector<std::vector<double>> inverse_frequency_weights(
    const std::vector<PreparedSentence>& corpus,
    const std::vector<AspectSpec>& aspects) {
    std::vector<std::vector<double>> weights;
    for (std::size_t a = 0; a < aspects.size(); ++a) {
        std::vector<long> counts(aspects[a].tag_set.size(), 0);
        for (const auto& sent : corpus) {
            if (sent.sub_gold.size() != aspects.size())
                fail(ErrorCategory::DataFormat,
                     "prepared sentence does not cover every aspect");
            for (int g : sent.sub_gold[a]) ++counts[static_cast<std::size_t>(g)];
        }
        std::vector<double> w(counts.size(), 0.0);
        double sum = 0.0;
        long seen = 0;
        for (std::size_t t = 0; t < counts.size(); ++t) {
            if (counts[t] == 0) continue;
            w[t] = 1.0 / static_cast<double>(counts[t]);
            sum += w[t];
            ++seen;
        }
        if (seen > 0) {
            double scale = static_cast<double>(seen) / sum; // mean 1 over seen tags
            for (auto& v : w) v *= scale;
        }
        weights.push_back(std::move(w));
    }
    return weights;
}

namespace {

// Layer stacks for every sentence, computed once; training and evaluation
// both read from this cache because the encoder body never moves.
std::vector<LayerStack> cache_stacks(const Encoder& encoder,
                                     const std::vector<PreparedSentence>& corpus) {
    std::vector<LayerStack> stacks;
    stacks.reserve(corpus.size());
    for (const auto& sent : corpus) stacks.push_back(encoder.encode_layers(sent.ids));
    return stacks;
}

ExtractorBatch gather_batch(const std::vector<LayerStack>& stacks,
                            const std::vector<PreparedSentence>& corpus,
                            const std::vector<int>& order, std::size_t start,
                            std::size_t stop, int n_aspects) {
    ExtractorBatch batch;
    std::size_t arity = stacks[static_cast<std::size_t>(order[start])].layers.size();
    for (std::size_t l = 0; l < arity; ++l) {
        std::vector<const Eigen::MatrixXd*> parts;
        for (std::size_t s = start; s < stop; ++s)
            parts.push_back(&stacks[static_cast<std::size_t>(order[s])].layers[l]);
        batch.stack.push_back(vstack(parts));
    }
    batch.gold.resize(static_cast<std::size_t>(n_aspects));
    for (int a = 0; a < n_aspects; ++a)
        for (std::size_t s = start; s < stop; ++s) {
            const auto& g = corpus[static_cast<std::size_t>(order[s])].sub_gold[static_cast<std::size_t>(a)];
            batch.gold[static_cast<std::size_t>(a)].insert(
                batch.gold[static_cast<std::size_t>(a)].end(), g.begin(), g.end());
        }
    return batch;
}

} // namespace

AspectTrainLog train_aspect_extractor(AspectExtractor& extractor,
                                      const Encoder& encoder,
                                      const std::vector<PreparedSentence>& corpus,
                                      const AspectTrainOptions& options,
                                      std::uint64_t seed) {
    if (corpus.empty())
        fail(ErrorCategory::DataFormat, "extractor training corpus is empty");
    if (options.epochs < 0)
        fail(ErrorCategory::Config, "extractor epochs must be non-negative");
    if (options.batch_sentences <= 0)
        fail(ErrorCategory::Config, "extractor batch size must be positive");
    if (encoder.config().model_dim != extractor.model_dim())
        fail(ErrorCategory::Config,
             "encoder model_dim " + std::to_string(encoder.config().model_dim) +
                 " does not match the extractor's " +
                 std::to_string(extractor.model_dim()));
    if (encoder.config().layers + 1 != extractor.stack_arity())
        fail(ErrorCategory::Config,
             "encoder produces " + std::to_string(encoder.config().layers + 1) +
                 " layers, extractor mixes " + std::to_string(extractor.stack_arity()));
    for (const auto& sent : corpus)
        if (static_cast<int>(sent.sub_gold.size()) != extractor.aspect_count())
            fail(ErrorCategory::DataFormat,
                 "prepared corpus carries " + std::to_string(sent.sub_gold.size()) +
                     " aspects, extractor has " +
                     std::to_string(extractor.aspect_count()));

    std::vector<LayerStack> stacks = cache_stacks(encoder, corpus);

    ExtractorLossOptions loss_options;
    loss_options.include_leftover_similarity = options.include_leftover_similarity;
    if (options.class_weighting)
        loss_options.class_weights = inverse_frequency_weights(corpus, extractor.aspects());

    nn::SgdMomentum opt;
    opt.lr = options.learn_rate;
    opt.momentum = options.momentum;
    opt.clip = options.grad_clip;

    Rng rng(seed);
    std::vector<int> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    // Plateau detection over an exponentially smoothed batch loss.
    double smoothed = 0.0;
    bool smoothed_ready = false;
    double best_smoothed = 0.0;
    int stale_batches = 0;

    AspectTrainLog log;
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        rng.shuffle(order);
        double cls_sum = 0.0, rec_sum = 0.0, sim_sum = 0.0;
        long token_count = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(options.batch_sentences)) {
            std::size_t stop = std::min(order.size(),
                                        start + static_cast<std::size_t>(options.batch_sentences));
            ExtractorBatch batch = gather_batch(stacks, corpus, order, start, stop,
                                                extractor.aspect_count());
            long tokens = batch.stack[0].rows();

            ad::Tape tape;
            extractor.params().zero_grad();
            ad::Var root = nullptr;
            LossBreakdown part = extractor_loss(tape, extractor, batch, loss_options,
                                                &root);
            tape.backward(root);
            opt.step(extractor.params());

            cls_sum += part.classification * static_cast<double>(tokens);
            rec_sum += part.reconstruction * static_cast<double>(tokens);
            sim_sum += part.similarity * static_cast<double>(tokens);
            token_count += tokens;

            // Learning-rate decay once the smoothed loss stops improving.
            smoothed = smoothed_ready ? 0.98 * smoothed + 0.02 * part.total : part.total;
            if (!smoothed_ready || smoothed < best_smoothed - 1e-9) {
                best_smoothed = smoothed;
                smoothed_ready = true;
                stale_batches = 0;
            } else if (++stale_batches >= options.plateau_patience) {
                opt.lr *= options.plateau_decay;
                stale_batches = 0;
            }
        }
        double denom = token_count > 0 ? static_cast<double>(token_count) : 1.0;
        log.epochs.push_back(LossBreakdown::combine(cls_sum / denom, rec_sum / denom,
                                                    sim_sum / denom));
    }
    log.final_learn_rate = opt.lr;
    return log;
}

TagPredictions predict_tags(const AspectExtractor& extractor, const Encoder& encoder,
                            const std::vector<PreparedSentence>& corpus) {
    TagPredictions preds(static_cast<std::size_t>(extractor.aspect_count()));
    for (auto& per_aspect : preds) per_aspect.resize(corpus.size());
    for (std::size_t s = 0; s < corpus.size(); ++s) {
        LayerStack stack = encoder.encode_layers(corpus[s].ids);
        Eigen::MatrixXd h = extractor.shared_hidden(extractor.mixed_embedding(stack));
        for (int a = 0; a < extractor.aspect_count(); ++a) {
            const nn::Linear& cls = extractor.classifier(a);
            Eigen::MatrixXd logits =
                h.middleCols(a * extractor.aspect_width(), extractor.aspect_width()) *
                    cls.W.value +
                cls.b.value.replicate(h.rows(), 1);
            auto& row = preds[static_cast<std::size_t>(a)][s];
            row.resize(static_cast<std::size_t>(logits.rows()));
            for (long r = 0; r < logits.rows(); ++r) {
                int best = 0;
                logits.row(r).maxCoeff(&best);
                row[static_cast<std::size_t>(r)] = best;
            }
        }
    }
    return preds;
}

F1Pair f1_scores(const std::vector<std::string>& gold,
                 const std::vector<std::string>& pred,
                 const std::vector<std::string>& base_classes) {
    if (gold.size() != pred.size())
        fail(ErrorCategory::Internal, "gold and predicted label counts differ");
    std::map<std::string, long> tp, fp, fn;
    for (const auto& c : base_classes) tp[c] = 0;
    long correct = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        if (gold[i] == pred[i]) {
            ++correct;
            ++tp[gold[i]];
        } else {
            ++fp[pred[i]];
            ++fn[gold[i]];
        }
    }
    F1Pair out;
    out.micro = gold.empty() ? 0.0
                             : 100.0 * static_cast<double>(correct) /
                                   static_cast<double>(gold.size());
    // Per-class F1 over every label with any signal: the base classes plus
    // labels observed only in gold or only in predictions (their tp is 0, so
    // they contribute a 0 to the mean). Classes nothing ever touched are
    // skipped rather than diluting the average.
    std::set<std::string> universe;
    for (const auto& [cls, count] : tp) universe.insert(cls);
    for (const auto& [cls, count] : fp) universe.insert(cls);
    for (const auto& [cls, count] : fn) universe.insert(cls);
    double macro_sum = 0.0;
    long macro_classes = 0;
    for (const auto& cls : universe) {
        auto lookup = [&cls](const std::map<std::string, long>& m) {
            auto it = m.find(cls);
            return it == m.end() ? 0L : it->second;
        };
        long tp_c = lookup(tp), fp_c = lookup(fp), fn_c = lookup(fn);
        if (tp_c == 0 && fp_c == 0 && fn_c == 0) continue; // never seen, no signal
        double denom = static_cast<double>(2 * tp_c + fp_c + fn_c);
        macro_sum += 200.0 * static_cast<double>(tp_c) / denom;
        ++macro_classes;
    }
    out.macro = macro_classes == 0 ? 0.0 : macro_sum / static_cast<double>(macro_classes);
    return out;
}

F1Report evaluate_f1(const AspectExtractor& extractor, const Encoder& encoder,
                     const std::vector<PreparedSentence>& corpus) {
    if (corpus.empty())
        fail(ErrorCategory::DataFormat, "evaluation corpus is empty");
    TagPredictions preds = predict_tags(extractor, encoder, corpus);

    F1Report report;
    for (int a = 0; a < extractor.aspect_count(); ++a) {
        const AspectSpec& spec = extractor.aspects()[static_cast<std::size_t>(a)];

        std::vector<std::string> gold, pred;
        for (std::size_t s = 0; s < corpus.size(); ++s) {
            const auto& g = corpus[s].sub_gold[static_cast<std::size_t>(a)];
            const auto& p = preds[static_cast<std::size_t>(a)][s];
            for (std::size_t t = 0; t < g.size(); ++t) {
                gold.push_back(spec.tag_set[static_cast<std::size_t>(g[t])]);
                pred.push_back(spec.tag_set[static_cast<std::size_t>(p[t])]);
            }
        }
        F1Pair sub = f1_scores(gold, pred, spec.tag_set);
        report.lines.push_back({spec.name, "sub-word", static_cast<long>(gold.size()),
                                sub.micro, sub.macro});

        if (spec.name == "SWP") continue; // sub-word only
        std::vector<std::string> wgold, wpred;
        for (std::size_t s = 0; s < corpus.size(); ++s) {
            const auto& sent = corpus[s];
            const auto& p = preds[static_cast<std::size_t>(a)][s];
            int words = static_cast<int>(sent.word_gold[static_cast<std::size_t>(a)].size());
            std::vector<int> first_sub(static_cast<std::size_t>(words), -1);
            for (std::size_t t = 0; t < sent.word_index.size(); ++t) {
                int w = sent.word_index[t];
                if (first_sub[static_cast<std::size_t>(w)] < 0)
                    first_sub[static_cast<std::size_t>(w)] = static_cast<int>(t);
            }
            for (int w = 0; w < words; ++w) {
                if (first_sub[static_cast<std::size_t>(w)] < 0) continue;
                wgold.push_back(sent.word_gold[static_cast<std::size_t>(a)][static_cast<std::size_t>(w)]);
                wpred.push_back(spec.tag_set[static_cast<std::size_t>(
                    p[static_cast<std::size_t>(first_sub[static_cast<std::size_t>(w)])])]);
            }
        }
        F1Pair word = f1_scores(wgold, wpred, spec.tag_set);
        report.lines.push_back({spec.name, "word", static_cast<long>(wgold.size()),
                                word.micro, word.macro});
    }
    return report;
}

std::string f1_report_tsv(const F1Report& report) {
    std::string out = "aspect\tlevel\tn_tokens\tmicro_f1\tmacro_f1\n";
    for (const auto& line : report.lines) {
        out += line.aspect + "\t" + line.level + "\t" + std::to_string(line.n_tokens) +
               "\t" + format_fixed(line.micro, 2) + "\t" + format_fixed(line.macro, 2) +
               "\n";
    }
    return out;
}

ProbeResult counterfactual_probe(const AspectExtractor& extractor,
                                 const Encoder& encoder,
                                 const std::vector<PreparedSentence>& corpus,
                                 const std::string& source_aspect,
                                 const std::string& target_aspect,
                                 std::uint64_t seed) {
    if (corpus.empty())
        fail(ErrorCategory::DataFormat, "probe corpus is empty");
    int src = extractor.aspect_index(source_aspect);
    int tgt = extractor.aspect_index(target_aspect);
    if (src < 0)
        fail(ErrorCategory::Config, "unknown probe source aspect '" + source_aspect + "'");
    if (tgt < 0)
        fail(ErrorCategory::Config, "unknown probe target aspect '" + target_aspect + "'");
    const AspectSpec& tgt_spec = extractor.aspects()[static_cast<std::size_t>(tgt)];

    // Frozen source vectors and target gold, flattened over the corpus; the
    // per-sentence row ranges drive sentence-batched probe training.
    std::vector<Eigen::MatrixXd> per_sentence;
    std::vector<std::vector<int>> gold_rows(corpus.size());
    for (std::size_t s = 0; s < corpus.size(); ++s) {
        LayerStack stack = encoder.encode_layers(corpus[s].ids);
        Eigen::MatrixXd h = extractor.shared_hidden(extractor.mixed_embedding(stack));
        per_sentence.push_back(
            h.middleCols(src * extractor.aspect_width(), extractor.aspect_width()));
        gold_rows[s] = corpus[s].sub_gold[static_cast<std::size_t>(tgt)];
    }

    Rng rng(seed);
    nn::ParamStore store;
    nn::Linear probe;
    probe.init("probe", extractor.aspect_width(),
               static_cast<int>(tgt_spec.tag_set.size()), rng, store);

    AspectTrainOptions defaults; // optimizer settings shared with the extractor
    nn::SgdMomentum opt;
    opt.lr = defaults.learn_rate;
    opt.momentum = defaults.momentum;
    opt.clip = defaults.grad_clip;

    double smoothed = 0.0;
    bool smoothed_ready = false;
    double best_smoothed = 0.0;
    int stale_batches = 0;

    std::vector<int> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    for (int epoch = 0; epoch < defaults.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(defaults.batch_sentences)) {
            std::size_t stop = std::min(order.size(),
                                        start + static_cast<std::size_t>(defaults.batch_sentences));
            std::vector<const Eigen::MatrixXd*> parts;
            std::vector<int> gold;
            for (std::size_t s = start; s < stop; ++s) {
                parts.push_back(&per_sentence[static_cast<std::size_t>(order[s])]);
                const auto& g = gold_rows[static_cast<std::size_t>(order[s])];
                gold.insert(gold.end(), g.begin(), g.end());
            }
            if (gold.empty()) continue;

            ad::Tape tape;
            store.zero_grad();
            ad::Var x = tape.constant(vstack(parts));
            ad::Var logits = probe.apply(tape, x);
            std::vector<double> ones(gold.size(), 1.0);
            ad::Var loss = ad::cross_entropy(tape, logits, gold, ones);
            tape.backward(loss);
            opt.step(store);

            double value = loss->value(0, 0);
            smoothed = smoothed_ready ? 0.98 * smoothed + 0.02 * value : value;
            if (!smoothed_ready || smoothed < best_smoothed - 1e-9) {
                best_smoothed = smoothed;
                smoothed_ready = true;
                stale_batches = 0;
            } else if (++stale_batches >= defaults.plateau_patience) {
                opt.lr *= defaults.plateau_decay;
                stale_batches = 0;
            }
        }
    }

    // Evaluate the probe and the most-frequent-class share.
    std::vector<std::string> gold_labels, pred_labels;
    std::vector<long> class_counts(tgt_spec.tag_set.size(), 0);
    for (std::size_t s = 0; s < corpus.size(); ++s) {
        Eigen::MatrixXd logits = probe.apply_plain(per_sentence[s]);
        for (long r = 0; r < logits.rows(); ++r) {
            int best = 0;
            logits.row(r).maxCoeff(&best);
            int g = gold_rows[s][static_cast<std::size_t>(r)];
            ++class_counts[static_cast<std::size_t>(g)];
            gold_labels.push_back(tgt_spec.tag_set[static_cast<std::size_t>(g)]);
            pred_labels.push_back(tgt_spec.tag_set[static_cast<std::size_t>(best)]);
        }
    }
    long total = static_cast<long>(gold_labels.size());
    std::size_t mfc = 0;
    for (std::size_t t = 1; t < class_counts.size(); ++t)
        if (class_counts[t] > class_counts[mfc]) mfc = t;

    ProbeResult result;
    result.source_aspect = source_aspect;
    result.target_aspect = target_aspect;
    result.f1_avg = f1_scores(gold_labels, pred_labels, tgt_spec.tag_set).micro;
    result.mfc_class = tgt_spec.tag_set[mfc];
    result.mfc_pct = total == 0 ? 0.0
                                : 100.0 * static_cast<double>(class_counts[mfc]) /
                                      static_cast<double>(total);
    result.n_tokens = total;
    return result;
}

std::string probe_report_tsv(const std::vector<ProbeResult>& rows) {
    std::string out = "source_aspect\ttarget_aspect\tf1_avg\tmfc_class\tmfc_pct\tn_tokens\n";
    for (const auto& r : rows) {
        out += r.source_aspect + "\t" + r.target_aspect + "\t" +
               format_fixed(r.f1_avg, 2) + "\t" + r.mfc_class + "\t" +
               format_fixed(r.mfc_pct, 2) + "\t" + std::to_string(r.n_tokens) + "\n";
    }
    return out;
}

ReconReport reconstruction_distance(const AspectExtractor& extractor,
                                    const Encoder& encoder,
                                    const std::vector<PreparedSentence>& corpus) {
    if (corpus.empty())
        fail(ErrorCategory::DataFormat, "reconstruction corpus is empty");
    ReconReport report;
    double sum = 0.0;
    for (const auto& sent : corpus) {
        LayerStack stack = encoder.encode_layers(sent.ids);
        Eigen::MatrixXd e = extractor.mixed_embedding(stack);
        Eigen::MatrixXd h = extractor.shared_hidden(e);
        Eigen::MatrixXd r = extractor.reconstructor().apply_plain(h);
        for (long t = 0; t < e.rows(); ++t) {
            double en = e.row(t).norm();
            double rn = r.row(t).norm();
            if (en == 0.0 || rn == 0.0) {
                ++report.skipped;
                continue;
            }
            sum += (r.row(t) / rn - e.row(t) / en).norm();
            ++report.tokens;
        }
    }
    report.mean_distance = report.tokens == 0 ? 0.0 : sum / static_cast<double>(report.tokens);
    return report;
}

} // namespace aspectnmt
