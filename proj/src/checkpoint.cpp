#include "mlmforge/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace mlmforge {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");
static_assert(sizeof(float) == 4);

constexpr const char* kMomentM = "@adam_m";
constexpr const char* kMomentV = "@adam_v";

template <typename U>
void put(std::string& out, U value) {
    char buf[sizeof(U)];
    std::memcpy(buf, &value, sizeof(U));
    out.append(buf, sizeof(U));
}

template <typename U>
U take(std::string_view bytes, std::size_t offset) {
    U value;
    std::memcpy(&value, bytes.data() + offset, sizeof(U));
    return value;
}

[[noreturn]] void corrupt(const std::string& msg) { throw Error(ErrorCategory::checkpoint, "checkpoint: " + msg); }

}  // namespace

std::string serialize_checkpoint(const Model& model) {
    if (classifier_classes(model.params) != model.labels.size()) {
        throw Error(ErrorCategory::checkpoint, "checkpoint: classifier head has " +
                                                   std::to_string(classifier_classes(model.params)) +
                                                   " classes but " + std::to_string(model.labels.size()) +
                                                   " label names");
    }
    std::string blob;
    nlohmann::json tensors = nlohmann::json::array();
    auto append = [&](const std::string& name, const Tensor<float>& t) {
        const std::uint64_t offset = blob.size();
        blob.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(float));
        tensors.push_back({{"name", name},
                           {"dtype", "f32"},
                           {"shape", t.shape()},
                           {"offset", offset},
                           {"length", t.size() * sizeof(float)}});
    };
    for (const auto& e : model.params.entries()) {
        append(e.name, e.value);
        append(e.name + kMomentM, e.adam_m);
        append(e.name + kMomentV, e.adam_v);
    }
    const nlohmann::json manifest = {{"model_config", to_json(model.config)},
                                     {"vocab_hash", model.vocab_hash},
                                     {"step", model.params.step_count},
                                     {"labels", model.labels},
                                     {"tensors", tensors}};
    const std::string header = manifest.dump();
    std::string out(kCheckpointMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, header.size());
    out += header;
    out += blob;
    return out;
}

Model parse_checkpoint(std::string_view bytes) {
    const std::size_t fixed = kCheckpointMagic.size() + sizeof(std::uint32_t) + sizeof(std::uint64_t);
    if (bytes.size() < fixed || bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
        corrupt("missing MLMFORGE magic");
    }
    const auto version = take<std::uint32_t>(bytes, kCheckpointMagic.size());
    if (version != kCheckpointVersion) {
        corrupt("unsupported format version " + std::to_string(version));
    }
    const auto manifest_len = take<std::uint64_t>(bytes, kCheckpointMagic.size() + sizeof(std::uint32_t));
    if (manifest_len > bytes.size() - fixed) {
        corrupt("manifest length " + std::to_string(manifest_len) + " exceeds file size");
    }
    const std::string_view blob = bytes.substr(fixed + manifest_len);

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.substr(fixed, manifest_len));
    } catch (const nlohmann::json::exception& e) {
        corrupt(std::string("corrupt manifest: ") + e.what());
    }

    Model model;
    std::vector<TensorRecord> records;
    try {
        model.config = model_config_from_json(manifest.at("model_config"));
        model.vocab_hash = manifest.at("vocab_hash").get<std::string>();
        model.params.step_count = manifest.at("step").get<std::uint64_t>();
        model.labels = manifest.at("labels").get<std::vector<std::string>>();
        for (const auto& t : manifest.at("tensors")) {
            records.push_back({t.at("name").get<std::string>(), t.at("dtype").get<std::string>(),
                               t.at("shape").get<Shape>(), t.at("offset").get<std::uint64_t>(),
                               t.at("length").get<std::uint64_t>()});
        }
    } catch (const nlohmann::json::exception& e) {
        corrupt(std::string("corrupt manifest: ") + e.what());
    } catch (const Error& e) {
        corrupt(std::string("corrupt manifest: ") + e.what());
    }

    const std::size_t n_classes = model.labels.size();
    const auto expected = parameter_shapes(model.config, n_classes);
    if (records.size() != 3 * expected.size()) {
        corrupt("manifest lists " + std::to_string(records.size()) + " tensors, config implies " +
                std::to_string(3 * expected.size()));
    }
    std::uint64_t cursor = 0;
    auto read = [&](const TensorRecord& r, const std::string& name, const Shape& shape) {
        if (r.name != name) {
            corrupt("expected tensor " + name + ", found " + r.name);
        }
        if (r.dtype != "f32") {
            corrupt("tensor " + name + " has unsupported dtype " + r.dtype);
        }
        if (r.shape != shape) {
            corrupt("tensor " + name + " has shape " + shape_str(r.shape) + ", config implies " + shape_str(shape));
        }
        if (r.offset != cursor || r.length != shape_size(shape) * sizeof(float)) {
            corrupt("tensor " + name + " has inconsistent offset or length");
        }
        if (r.offset + r.length > blob.size()) {
            corrupt("blob truncated inside tensor " + name + " (needs " + std::to_string(r.offset + r.length) +
                    " bytes, have " + std::to_string(blob.size()) + ")");
        }
        cursor += r.length;
        std::vector<float> data(shape_size(shape));
        std::memcpy(data.data(), blob.data() + r.offset, r.length);
        return Tensor<float>(shape, std::move(data));
    };
    for (std::size_t i = 0; i < expected.size(); ++i) {
        const auto& [name, shape] = expected[i];
        auto value = read(records[3 * i], name, shape);
        auto m = read(records[3 * i + 1], name + kMomentM, shape);
        auto v = read(records[3 * i + 2], name + kMomentV, shape);
        auto& p = model.params.add(name, std::move(value));
        p.adam_m = std::move(m);
        p.adam_v = std::move(v);
    }
    if (cursor != blob.size()) {
        corrupt(std::to_string(blob.size() - cursor) + " trailing bytes after the last tensor");
    }
    return model;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
    const std::string bytes = serialize_checkpoint(model);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw Error(ErrorCategory::checkpoint, "cannot write checkpoint " + path.string());
    }
}

Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCategory::checkpoint, "cannot read checkpoint " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_checkpoint(ss.str());
}

}  // namespace mlmforge
