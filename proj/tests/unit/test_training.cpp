#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mlmforge/error.hpp"
#include "mlmforge/training.hpp"

using namespace mlmforge;
namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kWords{"calm", "tired", "sleep", "night", "walk", "friend", "talk", "help",
                                      "work", "home", "rain", "sun"};

std::vector<std::string> make_sentences(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) {
        std::string s;
        const auto len = 4 + rng.below(5);
        for (std::uint64_t w = 0; w < len; ++w) s += (w ? " " : "") + kWords[rng.below(kWords.size())];
        out.push_back(s);
    }
    return out;
}

const Vocab& test_vocab() {
    static const Vocab vocab = [] {
        auto sentences = make_sentences(200, 1);
        sentences.push_back("sad gloomy happy sunny");
        return train_vocab(sentences, {80, 1});
    }();
    return vocab;
}

ModelConfig tiny_config() {
    ModelConfig c;
    c.n_layers = 1;
    c.hidden = 16;
    c.n_heads = 2;
    c.ffn = 32;
    c.vocab_size = test_vocab().size();
    c.max_positions = 32;
    return c;
}

Model fresh_model(std::uint64_t seed = 3) {
    return Model{tiny_config(), test_vocab().fingerprint(), init_params<float>(tiny_config(), seed), {}};
}

TrainConfig fast_config() {
    TrainConfig t;
    t.batch_size = 8;
    t.max_steps = 6;
    t.eval_every = 3;
    t.lr_encoder = 1e-3;
    t.lr_head = 1e-3;
    t.max_len = 16;
    t.seed = 5;
    return t;
}

fs::path temp_dir() {
    const fs::path dir = fs::temp_directory_path() / "mlmforge_training_tests";
    fs::create_directories(dir);
    return dir;
}

// Keyword-separable two-class data: each example contains one class keyword among filler words.
LabeledSequences separable(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    LabeledSequences out;
    const std::vector<std::string> keys{"sad gloomy", "happy sunny"};
    for (std::size_t i = 0; i < n; ++i) {
        const auto label = static_cast<std::int32_t>(i % 2);
        std::string text = kWords[rng.below(kWords.size())] + " " + keys[static_cast<std::size_t>(label)] + " " +
                           kWords[rng.below(kWords.size())];
        out.sequences.push_back(encode(test_vocab(), text, 16));
        out.labels.push_back(label);
    }
    return out;
}

}  // namespace

TEST_CASE("train config validation and defaults") {
    const TrainConfig t;
    CHECK_NOTHROW(t.validate());
    CHECK(t.lr_head / t.lr_encoder == doctest::Approx(3.0));
    CHECK(t.batch_size == 16);
    CHECK(t.eval_every == 1000);
    TrainConfig bad = t;
    bad.eval_every = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = t;
    bad.max_steps = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = t;
    bad.lr_encoder = -1;
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("log records serialize as one JSON object per line") {
    const std::vector<LogRecord> log{{"step", 3, "train", "mlm_loss", 1.5}, {"epoch", 0, "validation", "f1", 0.25}};
    CHECK(to_json(log[0]) == nlohmann::json{{"step", 3}, {"split", "train"}, {"metric", "mlm_loss"}, {"value", 1.5}});
    const auto text = to_jsonl(log);
    CHECK(std::count(text.begin(), text.end(), '\n') == 2);
}

TEST_CASE("learning-rate groups cover every parameter exactly once") {
    auto params = init_params<float>(tiny_config(), 1);
    add_classification_head(params, tiny_config(), 2, 2);
    const auto cfg = fast_config();
    for (const auto& e : params.entries()) {
        CHECK_NOTHROW(resolve_lr(e.name, pretrain_groups(cfg)));
        CHECK_NOTHROW(resolve_lr(e.name, finetune_groups(cfg)));
    }
    CHECK(resolve_lr("cls.output.weight", pretrain_groups(cfg)) == 0.0);
    CHECK(resolve_lr("mlm.output.bias", finetune_groups(cfg)) == 0.0);
}

TEST_CASE("pretraining is deterministic and logs every eval_every steps") {
    const auto train = tokenize_corpus(test_vocab(), make_sentences(40, 2), 16);
    const auto val = tokenize_corpus(test_vocab(), make_sentences(10, 3), 16);
    auto a = fresh_model();
    auto b = fresh_model();
    const auto ra = pretrain(a, train, &val, fast_config());
    const auto rb = pretrain(b, train, &val, fast_config());
    CHECK(ra.log == rb.log);
    CHECK(a == b);
    CHECK(a.params.step_count == 6);
    std::size_t n_val = 0, n_train = 0;
    for (const auto& r : ra.log) {
        if (r.split == "validation") ++n_val;
        if (r.split == "train") ++n_train;
        CHECK(std::isfinite(r.value));
    }
    CHECK(n_val == 2);
    CHECK(n_train == 6);
    REQUIRE(ra.best_val_loss.has_value());
    // The retained checkpoint carries the best logged validation loss.
    double best = 1e300;
    for (const auto& r : ra.log) {
        if (r.split == "validation") best = std::min(best, r.value);
    }
    CHECK(*ra.best_val_loss == best);
    CHECK(validation_mlm_loss(ra.best, val, fast_config()).loss == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("pretraining lowers the training loss") {
    const auto train = tokenize_corpus(test_vocab(), make_sentences(16, 4), 16);
    auto model = fresh_model();
    auto cfg = fast_config();
    cfg.max_steps = 60;
    cfg.eval_every = 60;
    cfg.lr_encoder = cfg.lr_head = 3e-3;
    const double before = validation_mlm_loss(model, train, cfg).loss;
    pretrain(model, train, nullptr, cfg);
    CHECK(validation_mlm_loss(model, train, cfg).loss < before);
}

TEST_CASE("vocab hash mismatch is a checkpoint error") {
    auto train = tokenize_corpus(test_vocab(), make_sentences(8, 2), 16);
    train.vocab_hash = "0000000000000000";
    auto model = fresh_model();
    try {
        pretrain(model, train, nullptr, fast_config());
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.category() == ErrorCategory::checkpoint);
    }
}

TEST_CASE("non-finite weights abort with the step index") {
    const auto train = tokenize_corpus(test_vocab(), make_sentences(8, 2), 16);
    auto model = fresh_model();
    model.params.get("encoder.layer.0.ffn.outer.weight").value.data()[0] = std::nanf("");
    try {
        pretrain(model, train, nullptr, fast_config());
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.category() == ErrorCategory::numeric);
        INFO(std::string(e.what()));
        CHECK(std::string(e.what()).find("step 1:") != std::string::npos);
    }
}

TEST_CASE("checkpoint round trip is bitwise and idempotent") {
    auto model = fresh_model();
    const auto train = tokenize_corpus(test_vocab(), make_sentences(16, 2), 16);
    pretrain(model, train, nullptr, fast_config());
    add_classification_head(model.params, model.config, 3, 9);
    model.labels = {"a", "b", "c"};
    const auto path = temp_dir() / "rt.ckpt";
    save_checkpoint(model, path);
    const Model loaded = load_checkpoint(path);
    CHECK(loaded == model);
    CHECK(loaded.params.step_count == 6);
    CHECK(serialize_checkpoint(loaded) == serialize_checkpoint(model));
}

TEST_CASE("corrupt checkpoints are rejected with descriptive errors") {
    const auto bytes = serialize_checkpoint(fresh_model());
    auto expect_error = [](std::string_view data, const std::string& needle) {
        try {
            parse_checkpoint(data);
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(e.category() == ErrorCategory::checkpoint);
            INFO(e.what());
            CHECK(std::string(e.what()).find(needle) != std::string::npos);
        }
    };
    expect_error(std::string_view(bytes).substr(0, bytes.size() - 1), "blob truncated inside tensor");
    expect_error("NOTMAGIC", "magic");
    std::string bad_version = bytes;
    bad_version[8] = 9;
    expect_error(bad_version, "version");
    expect_error(bytes + "x", "trailing");

    // Shape mismatch with the stored config.
    Model other = fresh_model();
    other.config.ffn = 48;
    std::string mismatched = serialize_checkpoint(fresh_model());
    const auto manifest_len = static_cast<std::size_t>(static_cast<unsigned char>(mismatched[12]));
    const auto pos = mismatched.find("\"ffn\":32");
    REQUIRE(pos != std::string::npos);
    REQUIRE(pos < 20 + manifest_len + 256 * 256);
    mismatched.replace(pos, 8, "\"ffn\":48");
    expect_error(mismatched, "shape");
}

TEST_CASE("resume from a checkpoint matches an uninterrupted run") {
    const auto train = tokenize_corpus(test_vocab(), make_sentences(20, 6), 16);
    auto cfg = fast_config();
    cfg.eval_every = 100;

    auto straight = fresh_model();
    cfg.max_steps = 4;
    pretrain(straight, train, nullptr, cfg);

    auto first = fresh_model();
    cfg.max_steps = 2;
    pretrain(first, train, nullptr, cfg);
    const auto path = temp_dir() / "resume.ckpt";
    save_checkpoint(first, path);
    auto resumed = load_checkpoint(path);
    pretrain(resumed, train, nullptr, cfg);
    CHECK(resumed == straight);
}

TEST_CASE("fine-tuning separates keyword classes") {
    auto model = fresh_model();
    const auto train = separable(200, 1);
    const auto val = separable(40, 2);
    auto cfg = fast_config();
    cfg.epochs = 10;
    cfg.batch_size = 16;
    cfg.lr_encoder = 1e-3;
    cfg.lr_head = 3e-3;
    const auto r = finetune(model, {"neg", "pos"}, train, val, cfg);
    REQUIRE(r.epochs.size() == 11);
    CHECK(r.epochs[r.best_epoch].validation.accuracy >= 0.95);
    double best = -1;
    for (const auto& e : r.epochs) best = std::max(best, e.validation.f1);
    CHECK(r.best_f1 == best);
    CHECK(r.best.labels == std::vector<std::string>{"neg", "pos"});
    const auto table = evaluate_model(r.best.params, r.best.config, val.sequences, val.labels);
    CHECK(compute_metrics(table).f1 == r.best_f1);
}

TEST_CASE("zero-epoch fine-tune leaves the initialized head") {
    auto model = fresh_model();
    auto cfg = fast_config();
    cfg.epochs = 0;
    const auto val = separable(10, 2);
    const auto r = finetune(model, {"neg", "pos"}, separable(20, 1), val, cfg);
    CHECK(r.epochs.size() == 1);
    CHECK(r.best_epoch == 0);
    CHECK(r.best == model);
    const auto table = evaluate_model(model.params, model.config, val.sequences, val.labels);
    CHECK(compute_metrics(table).f1 == r.epochs[0].validation.f1);
}

TEST_CASE("lr_encoder = 0 freezes the encoder bitwise") {
    auto model = fresh_model();
    const auto before = model.params;
    auto cfg = fast_config();
    cfg.epochs = 2;
    cfg.lr_encoder = 0.0;
    finetune(model, {"neg", "pos"}, separable(32, 1), separable(8, 2), cfg);
    bool head_moved = false;
    for (const auto& e : model.params.entries()) {
        if (e.name.starts_with("encoder.")) {
            CHECK(e.value == before.value(e.name));
        } else if (e.name.starts_with("cls.")) {
            head_moved = true;
        }
    }
    CHECK(head_moved);
}

TEST_CASE("fine-tuning label errors") {
    auto model = fresh_model();
    auto bad = separable(8, 1);
    bad.labels[0] = 5;
    CHECK_THROWS_AS(finetune(model, {"neg", "pos"}, bad, separable(4, 2), fast_config()), Error);
    auto with_head = fresh_model();
    auto cfg = fast_config();
    cfg.epochs = 0;
    finetune(with_head, {"neg", "pos"}, separable(4, 1), separable(4, 2), cfg);
    CHECK_THROWS_AS(finetune(with_head, {"x", "y"}, separable(4, 1), separable(4, 2), cfg), Error);
}

TEST_CASE("log file is written as JSONL") {
    const auto path = temp_dir() / "log.jsonl";
    const std::vector<LogRecord> log{{"step", 1, "train", "mlm_loss", 2.0}};
    write_log(path, log);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(nlohmann::json::parse(line)["step"] == 1);
}
