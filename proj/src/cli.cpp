#include "mlmforge/cli.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "mlmforge/benchmarks.hpp"
#include "mlmforge/checkpoint.hpp"
#include "mlmforge/corpus.hpp"
#include "mlmforge/evaluation.hpp"
#include "mlmforge/run_config.hpp"
#include "mlmforge/training.hpp"

namespace mlmforge {
namespace {

namespace fs = std::filesystem;

constexpr std::uint64_t kInitStream = 0x696e6974;     // "init"
constexpr std::uint64_t kHoldoutStream = 0x686f6c64;  // "hold"

std::string read_text(const fs::path& path, ErrorCategory category) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(category, "cannot read " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << content;
    if (!out) {
        throw Error(ErrorCategory::data, "cannot write " + path.string());
    }
}

// Exclusive claim on a run directory for the lifetime of one command.
class RunLock {
public:
    explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0) {
            throw Error(ErrorCategory::config, "run directory " + dir.string() + " is locked by another command (" +
                                                   path_.string() + ")");
        }
    }
    ~RunLock() {
        ::close(fd_);
        std::error_code ec;
        fs::remove(path_, ec);
    }
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    fs::path path_;
    int fd_ = -1;
};

struct CommonOptions {
    std::string run_dir;
    std::string config_file;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("--run-dir", o.run_dir, "Output directory of this command")->required();
    cmd->add_option("--config", o.config_file, "Flat dotted-key JSON config");
    cmd->add_option("--set", o.overrides, "Config override key=value (repeatable)");
}

// Resolves the configuration, creates the run directory layout and echoes the config.
struct Run {
    RunConfig config;
    fs::path dir;
    std::optional<RunLock> lock;

    explicit Run(const CommonOptions& o) : dir(o.run_dir) {
        if (!o.config_file.empty()) {
            config.merge_file(o.config_file);
        }
        for (const auto& s : o.overrides) {
            config.set_override(s);
        }
        for (const char* sub : {"ckpt", "logs", "results"}) {
            fs::create_directories(dir / sub);
        }
        lock.emplace(dir);
        write_text(dir / "config.json", config.echo());
    }

    fs::path vocab_path(const std::string& given) const { return given.empty() ? dir / "vocab.txt" : fs::path(given); }

    // Copies an external vocabulary into the run directory so the run is self-contained.
    Vocab adopt_vocab(const std::string& given) const {
        const fs::path src = vocab_path(given);
        if (!fs::exists(src)) {
            throw Error(ErrorCategory::data, "vocabulary file " + src.string() + " does not exist");
        }
        Vocab vocab = Vocab::load(src);
        const fs::path dst = dir / "vocab.txt";
        std::error_code ec;
        if (!fs::exists(dst) || !fs::equivalent(src, dst, ec)) {
            vocab.save(dst);
        }
        return vocab;
    }
};

std::vector<std::string> corpus_sentences(const fs::path& path) { return read_corpus(path).sentences(); }

// Deterministic sentence-level holdout for pretraining validation.
std::pair<std::vector<std::string>, std::vector<std::string>> hold_out(std::vector<std::string> sentences,
                                                                       double fraction, std::uint64_t seed) {
    if (fraction <= 0.0 || sentences.size() < 2) {
        return {std::move(sentences), {}};
    }
    const std::size_t k = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(fraction * static_cast<double>(sentences.size()))), 1,
        sentences.size() - 1);
    std::vector<std::size_t> idx(sentences.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(derive_seed({seed, kHoldoutStream}));
    for (std::size_t i = 0; i < k; ++i) {
        std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
    }
    std::vector<bool> held(sentences.size(), false);
    for (std::size_t i = 0; i < k; ++i) {
        held[idx[i]] = true;
    }
    std::vector<std::string> train;
    std::vector<std::string> validation;
    for (std::size_t i = 0; i < sentences.size(); ++i) {
        (held[i] ? validation : train).push_back(std::move(sentences[i]));
    }
    return {std::move(train), std::move(validation)};
}

void run_pretraining(const Run& run, Model& model, const Vocab& vocab, const std::string& corpus_file,
                     const std::string& tag, std::ostream& out) {
    const TrainConfig tc = run.config.train_config();
    if (model.vocab_hash != vocab.fingerprint()) {
        throw Error(ErrorCategory::checkpoint, "vocab hash mismatch: checkpoint " + model.vocab_hash +
                                                   ", vocabulary " + vocab.fingerprint());
    }
    auto [train_text, val_text] =
        hold_out(corpus_sentences(corpus_file), run.config.get_double("train.validation_fraction"), tc.seed);
    const std::size_t max_len = std::min(tc.max_len, model.config.max_positions);
    const TokenizedCorpus train = tokenize_corpus(vocab, train_text, max_len);
    const TokenizedCorpus val = tokenize_corpus(vocab, val_text, max_len);
    const PretrainResult r = pretrain(model, train, val.sequences.empty() ? nullptr : &val, tc);
    save_checkpoint(model, run.dir / "ckpt" / "last.ckpt");
    save_checkpoint(r.best, run.dir / "ckpt" / "best.ckpt");
    write_log(run.dir / "logs" / (tag + ".jsonl"), r.log);
    out << tag << ": " << tc.max_steps << " steps, global step " << model.params.step_count;
    if (r.best_val_loss) {
        out << ", best validation loss " << *r.best_val_loss << " at step " << r.best_step;
    }
    out << "\n";
}

LabeledSequences encode_split(const LabeledDataset& d, Split split, const Vocab& vocab, std::size_t max_len) {
    LabeledSequences out;
    for (std::size_t i : d.splits.get(split)) {
        out.sequences.push_back(encode(vocab, d.examples[i].text, max_len));
        out.labels.push_back(d.class_of(d.examples[i].label));
    }
    return out;
}

LoadedDataset load_for_run(const Run& run, const std::string& manifest, std::ostream& err) {
    LoadedDataset loaded = load_manifest(manifest);
    if (run.config.is_explicit("split.validation_fraction") || run.config.is_explicit("split.seed") ||
        run.config.is_explicit("split.stratified")) {
        // Re-split from the union of train and validation with the configured spec.
        auto& d = loaded.dataset;
        auto& s = d.splits;
        s.train.insert(s.train.end(), s.validation.begin(), s.validation.end());
        std::sort(s.train.begin(), s.train.end());
        s.validation.clear();
        d = holdout_split(std::move(d), run.config.split_spec());
    }
    for (const auto& w : loaded.warnings) {
        err << "warning: " << w << "\n";
    }
    return loaded;
}

Model load_model_for(const std::string& from, const Vocab& vocab) {
    Model model = load_checkpoint(from);
    if (model.vocab_hash != vocab.fingerprint()) {
        throw Error(ErrorCategory::checkpoint, "vocab hash mismatch: checkpoint " + model.vocab_hash +
                                                   ", vocabulary " + vocab.fingerprint());
    }
    return model;
}

std::string file_tag(std::string s) {
    for (char& c : s) {
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') {
            c = '_';
        }
    }
    return s;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"mlmforge: masked-language-model pretraining, continued pretraining and fine-tuning"};
    app.require_subcommand(1);

    CommonOptions common;

    std::vector<std::string> inputs;
    auto* prep = app.add_subcommand("prep-corpus", "Segment JSONL posts into a sentence corpus");
    add_common(prep, common);
    prep->add_option("--input", inputs, "JSONL post files")->required();

    std::string corpus_file;
    std::string vocab_file;
    auto* vocab_cmd = app.add_subcommand("build-vocab", "Train a WordPiece vocabulary");
    add_common(vocab_cmd, common);
    vocab_cmd->add_option("--corpus", corpus_file, "Sentence corpus, one per line")->required();

    auto* pre = app.add_subcommand("pretrain", "Pretrain a fresh encoder with the MLM objective");
    add_common(pre, common);
    pre->add_option("--corpus", corpus_file)->required();
    pre->add_option("--vocab", vocab_file, "Vocabulary (default: <run-dir>/vocab.txt)");

    std::string from;
    auto* cont = app.add_subcommand("continue-pretrain", "Continue MLM pretraining from a checkpoint");
    add_common(cont, common);
    cont->add_option("--from", from, "Starting checkpoint")->required();
    cont->add_option("--corpus", corpus_file)->required();
    cont->add_option("--vocab", vocab_file);

    std::string dataset;
    auto* ft = app.add_subcommand("finetune", "Fine-tune a classifier head and encoder");
    add_common(ft, common);
    ft->add_option("--from", from)->required();
    ft->add_option("--dataset", dataset, "Dataset manifest")->required();
    ft->add_option("--vocab", vocab_file);

    std::string model_name;
    auto* ev = app.add_subcommand("evaluate", "Score a fine-tuned checkpoint on a dataset split");
    add_common(ev, common);
    ev->add_option("--from", from)->required();
    ev->add_option("--dataset", dataset)->required();
    ev->add_option("--vocab", vocab_file);
    ev->add_option("--model-name", model_name, "Row name in reports (default: checkpoint stem)");

    std::vector<std::string> results;
    std::string table;
    auto* rep = app.add_subcommand("report", "Merge results files into a comparison table");
    add_common(rep, common);
    rep->add_option("results", results, "Results JSON files");
    rep->add_option("--table", table, "A stored report JSON instead of results files");

    std::string fixture_dir;
    double fixture_scale = 0.02;
    std::uint64_t fixture_seed = 0;
    auto* fix = app.add_subcommand("make-fixtures", "Write synthetic datasets shaped like the benchmark registry");
    fix->add_option("--out", fixture_dir)->required();
    fix->add_option("--scale", fixture_scale);
    fix->add_option("--seed", fixture_seed);

    std::vector<std::string> argv_store = args;
    std::reverse(argv_store.begin(), argv_store.end());
    try {
        app.parse(argv_store);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "CONFIG/" << e.what() << "\n";
        return 2;
    }

    try {
        if (fix->parsed()) {
            write_fixtures(fixture_dir, fixture_scale, fixture_seed);
            out << "wrote " << registry().size() << " fixtures to " << fixture_dir << "\n";
            return 0;
        }
        Run run(common);
        const RunConfig& cfg = run.config;

        if (prep->parsed()) {
            SentenceCorpusBuilder builder(cfg.get_bool("corpus.dedup"));
            std::vector<std::string> warnings;
            for (const auto& in : inputs) {
                const auto report = ingest_jsonl(in, [&](RawPost&& p) { builder.add(p); });
                for (const auto& w : report.warnings) {
                    warnings.push_back(in + ": " + w);
                }
            }
            const SentenceCorpus corpus = std::move(builder).finish();
            write_corpus(corpus, run.dir / "corpus.txt");
            write_text(run.dir / "corpus_stats.json", to_json(corpus.stats()).dump(2) + "\n");
            std::string log;
            for (const auto& w : warnings) {
                log += nlohmann::json{{"split", "ingest"}, {"metric", "warning"}, {"value", w}}.dump() + "\n";
                err << "warning: " << w << "\n";
            }
            write_text(run.dir / "logs" / "prep-corpus.jsonl", log);
            out << "prep-corpus: " << corpus.stats().n_sentences << " sentences, "
                << corpus.stats().n_duplicates_removed << " duplicates removed\n";
        } else if (vocab_cmd->parsed()) {
            const Vocab vocab = train_vocab(read_corpus(corpus_file), cfg.vocab_options());
            vocab.save(run.dir / "vocab.txt");
            out << "build-vocab: " << vocab.size() << " tokens, fingerprint " << vocab.fingerprint() << "\n";
        } else if (pre->parsed()) {
            const Vocab vocab = run.adopt_vocab(vocab_file);
            Model model;
            model.config = cfg.model_config(vocab.size());
            model.vocab_hash = vocab.fingerprint();
            model.params = init_params<float>(model.config, derive_seed({cfg.get_u64("seed"), kInitStream}));
            run_pretraining(run, model, vocab, corpus_file, "pretrain", out);
        } else if (cont->parsed()) {
            const Vocab vocab = run.adopt_vocab(vocab_file);
            Model model = load_model_for(from, vocab);
            run_pretraining(run, model, vocab, corpus_file, "continue-pretrain", out);
        } else if (ft->parsed()) {
            const Vocab vocab = run.adopt_vocab(vocab_file);
            Model model = load_model_for(from, vocab);
            const TrainConfig tc = cfg.train_config();
            const LabeledDataset d = load_for_run(run, dataset, err).dataset;
            const std::size_t max_len = std::min(tc.max_len, model.config.max_positions);
            const auto train = encode_split(d, Split::train, vocab, max_len);
            const auto val = encode_split(d, Split::validation, vocab, max_len);
            const FinetuneResult r = finetune(model, d.label_names(), train, val, tc);
            save_checkpoint(r.best, run.dir / "ckpt" / "finetuned.ckpt");
            write_log(run.dir / "logs" / "finetune.jsonl", r.log);
            out << "finetune: best validation F1 " << to_percent(r.best_f1) << " at epoch " << r.best_epoch << "\n";
        } else if (ev->parsed()) {
            const Vocab vocab = run.adopt_vocab(vocab_file);
            const Model model = load_model_for(from, vocab);
            const LabeledDataset d = load_for_run(run, dataset, err).dataset;
            if (model.labels != d.label_names()) {
                throw Error(ErrorCategory::config, "evaluate: checkpoint labels do not match dataset " + d.name);
            }
            const Split split = parse_split(cfg.get_string("eval.split"));
            const std::size_t max_len = std::min(cfg.get_size("train.max_len"), model.config.max_positions);
            const auto data = encode_split(d, split, vocab, max_len);
            ResultsRecord rec;
            rec.model = model_name.empty() ? fs::path(from).stem().string() : model_name;
            rec.dataset = d.name;
            rec.split = to_string(split);
            rec.labels = model.labels;
            rec.confusion = evaluate_model(model.params, model.config, data.sequences, data.labels,
                                           cfg.get_size("eval.batch_size"));
            rec.metrics = compute_metrics(rec.confusion, parse_aggregation(cfg.get_string("eval.aggregation")));
            const fs::path path =
                run.dir / "results" / (file_tag(rec.model) + "__" + file_tag(rec.dataset) + "__" + rec.split + ".json");
            write_text(path, to_json(rec).dump(2) + "\n");
            out << "evaluate: " << rec.model << " on " << rec.dataset << " " << rec.split << ": recall "
                << to_percent(rec.metrics.recall) << ", F1 " << to_percent(rec.metrics.f1) << " ("
                << to_string(rec.metrics.aggregation) << ")\n";
        } else if (rep->parsed()) {
            EvalReport report;
            if (!table.empty()) {
                if (!results.empty()) {
                    throw Error(ErrorCategory::config, "report: give results files or --table, not both");
                }
                report = report_from_json(nlohmann::json::parse(read_text(table, ErrorCategory::data)));
            } else {
                std::vector<ResultsRecord> records;
                for (const auto& r : results) {
                    try {
                        records.push_back(results_from_json(nlohmann::json::parse(read_text(r, ErrorCategory::data))));
                    } catch (const nlohmann::json::parse_error& e) {
                        throw Error(ErrorCategory::data, r + ": " + e.what());
                    }
                }
                report = merge_results(records);
            }
            const std::string md = render_markdown(report);
            write_text(run.dir / "results" / "report.md", md);
            write_text(run.dir / "results" / "report.json", render_json(report).dump(2) + "\n");
            out << md;
        }
        return 0;
    } catch (const Error& e) {
        err << e.formatted() << "\n";
    } catch (const nlohmann::json::exception& e) {
        err << "DATA/" << e.what() << "\n";
    } catch (const fs::filesystem_error& e) {
        err << "DATA/" << e.what() << "\n";
    } catch (const std::exception& e) {
        err << "ERROR/" << e.what() << "\n";
    }
    return 1;
}

}  // namespace mlmforge
