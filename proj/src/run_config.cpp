#include "mlmforge/run_config.hpp"

#include <fstream>
#include <sstream>

namespace mlmforge {
namespace {

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorCategory::config, msg); }

bool same_kind(const nlohmann::json& def, const nlohmann::json& v) {
    if (def.is_boolean()) {
        return v.is_boolean();
    }
    if (def.is_number_unsigned() || def.is_number_integer()) {
        return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
    }
    if (def.is_number_float()) {
        return v.is_number();
    }
    if (def.is_string()) {
        return v.is_string();
    }
    return false;
}

}  // namespace

const nlohmann::json& RunConfig::defaults() {
    static const nlohmann::json d = [] {
        const ModelConfig m = ModelConfig::desk();
        const TrainConfig t;
        const VocabTrainOptions v;
        const SplitSpec s;
        return nlohmann::json{
            {"seed", std::uint64_t{0}},
            {"corpus.dedup", true},
            {"vocab.target_size", v.target_size},
            {"vocab.min_freq", v.min_freq},
            {"model.n_layers", m.n_layers},
            {"model.hidden", m.hidden},
            {"model.n_heads", m.n_heads},
            {"model.ffn", m.ffn},
            {"model.max_positions", m.max_positions},
            {"model.n_segments", m.n_segments},
            {"model.dropout", m.dropout},
            {"train.batch_size", t.batch_size},
            {"train.max_steps", t.max_steps},
            {"train.eval_every", t.eval_every},
            {"train.lr_encoder", t.lr_encoder},
            {"train.lr_head", t.lr_head},
            {"train.masking_mode", "dynamic"},
            {"train.mask_ratio", t.mask_ratio},
            {"train.epochs", t.epochs},
            {"train.max_len", t.max_len},
            {"train.selection", "weighted"},
            {"train.validation_fraction", 0.05},
            {"adam.beta1", t.adam.beta1},
            {"adam.beta2", t.adam.beta2},
            {"adam.eps", t.adam.eps},
            {"split.validation_fraction", s.validation_fraction},
            {"split.seed", s.seed},
            {"split.stratified", s.stratified},
            {"eval.split", "test"},
            {"eval.batch_size", std::size_t{32}},
            {"eval.aggregation", "weighted"},
        };
    }();
    return d;
}

RunConfig::RunConfig() : values_(defaults()) {}

void RunConfig::assign(const std::string& key, const nlohmann::json& value) {
    const auto it = defaults().find(key);
    if (it == defaults().end()) {
        config_error("unknown config key '" + key + "'");
    }
    if (!same_kind(*it, value)) {
        config_error("config key '" + key + "' expects a value like " + it->dump() + ", got " + value.dump());
    }
    values_[key] = it->is_number_float() ? nlohmann::json(value.get<double>()) : value;
    explicit_.insert(key);
}

void RunConfig::merge_json(const nlohmann::json& flat) {
    if (!flat.is_object()) {
        config_error("config must be a flat JSON object");
    }
    for (const auto& [key, value] : flat.items()) {
        assign(key, value);
    }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        config_error("cannot read config file " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        merge_json(nlohmann::json::parse(ss.str()));
    } catch (const nlohmann::json::parse_error& e) {
        config_error("config file " + path.string() + ": " + e.what());
    }
}

void RunConfig::set_override(std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos || eq == 0) {
        config_error("override '" + std::string(assignment) + "' is not key=value");
    }
    const std::string key(assignment.substr(0, eq));
    const std::string text(assignment.substr(eq + 1));
    const auto it = defaults().find(key);
    if (it == defaults().end()) {
        config_error("unknown config key '" + key + "'");
    }
    if (it->is_string()) {
        assign(key, text);
        return;
    }
    nlohmann::json value;
    try {
        value = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error&) {
        config_error("config key '" + key + "': cannot parse value '" + text + "'");
    }
    assign(key, value);
}

std::uint64_t RunConfig::get_u64(const std::string& key) const { return values_.at(key).get<std::uint64_t>(); }
std::size_t RunConfig::get_size(const std::string& key) const { return values_.at(key).get<std::size_t>(); }
double RunConfig::get_double(const std::string& key) const { return values_.at(key).get<double>(); }
bool RunConfig::get_bool(const std::string& key) const { return values_.at(key).get<bool>(); }
std::string RunConfig::get_string(const std::string& key) const { return values_.at(key).get<std::string>(); }

ModelConfig RunConfig::model_config(std::size_t vocab_size) const {
    ModelConfig m;
    m.n_layers = get_size("model.n_layers");
    m.hidden = get_size("model.hidden");
    m.n_heads = get_size("model.n_heads");
    m.ffn = get_size("model.ffn");
    m.vocab_size = vocab_size;
    m.max_positions = get_size("model.max_positions");
    m.n_segments = get_size("model.n_segments");
    m.dropout = get_double("model.dropout");
    m.validate();
    return m;
}

TrainConfig RunConfig::train_config() const {
    TrainConfig t;
    t.batch_size = get_size("train.batch_size");
    t.max_steps = get_size("train.max_steps");
    t.eval_every = get_size("train.eval_every");
    t.lr_encoder = get_double("train.lr_encoder");
    t.lr_head = get_double("train.lr_head");
    t.seed = get_u64("seed");
    const std::string mode = get_string("train.masking_mode");
    if (mode == "static") {
        t.masking_mode = MaskingMode::static_mask;
    } else if (mode == "dynamic") {
        t.masking_mode = MaskingMode::dynamic_mask;
    } else {
        config_error("train.masking_mode must be 'static' or 'dynamic', got '" + mode + "'");
    }
    t.mask_ratio = get_double("train.mask_ratio");
    t.epochs = get_size("train.epochs");
    t.max_len = get_size("train.max_len");
    t.selection = parse_aggregation(get_string("train.selection"));
    t.adam = {get_double("adam.beta1"), get_double("adam.beta2"), get_double("adam.eps")};
    t.validate();
    return t;
}

VocabTrainOptions RunConfig::vocab_options() const {
    VocabTrainOptions v;
    v.target_size = get_size("vocab.target_size");
    v.min_freq = get_size("vocab.min_freq");
    return v;
}

SplitSpec RunConfig::split_spec() const {
    return {get_double("split.validation_fraction"), get_u64("split.seed"), get_bool("split.stratified")};
}

std::string RunConfig::echo() const { return values_.dump(2) + "\n"; }

}  // namespace mlmforge
