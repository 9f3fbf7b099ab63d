#include <cstdint>
#include <iostream>
#include <memory>
#include <string>

#include "CLI11.hpp"

#include "aspectnmt/corpus.hpp"
#include "aspectnmt/errors.hpp"

namespace {

using namespace aspectnmt;

void register_gen_corpus(CLI::App& app) {
    struct Opts {
        std::string grammar;
        std::string out;
        int count = 0;
        std::uint64_t seed = 1;
    };
    auto opts = std::make_shared<Opts>();
    CLI::App* cmd = app.add_subcommand(
        "gen-corpus", "Generate a gold-tagged parallel corpus from a grammar");
    cmd->add_option("--grammar", opts->grammar, "Grammar file")->required();
    cmd->add_option("--count", opts->count, "Number of sentence pairs")->required();
    cmd->add_option("--seed", opts->seed, "Random seed")->capture_default_str();
    cmd->add_option("--out", opts->out,
                    "Output prefix; writes <out>.src, <out>.tgt, <out>.tagged")
        ->required();
    cmd->callback([opts] {
        GrammarSpec grammar = load_grammar(opts->grammar);
        auto pairs = generate_corpus(grammar, opts->count, opts->seed);
        save_parallel(pairs, opts->out);
        std::vector<TaggedSentence> tagged;
        tagged.reserve(pairs.size());
        for (const auto& p : pairs) tagged.push_back(p.source);
        save_tagged(tagged, opts->out + ".tagged");
        std::cout << "wrote " << pairs.size() << " pairs to " << opts->out
                  << ".{src,tgt,tagged}\n";
    });
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Aspect-vector extraction and aspect-augmented translation"};
    app.require_subcommand(1);
    register_gen_corpus(app);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success))
            return app.exit(e); // --help and friends
        std::cerr << "error[usage]: " << e.what() << "\n";
        return category_exit_code(aspectnmt::ErrorCategory::Usage);
    } catch (const aspectnmt::Error& e) {
        std::cerr << "error[" << category_name(e.category) << "]: " << e.what()
                  << "\n";
        return category_exit_code(e.category);
    } catch (const std::exception& e) {
        std::cerr << "error[internal]: " << e.what() << "\n";
        return category_exit_code(aspectnmt::ErrorCategory::Internal);
    }
    return 0;
}
