#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "vofa/model.hpp"
#include "vofa/optim.hpp"
#include "vofa/text.hpp"

namespace vofa {

static_assert(std::endian::native == std::endian::little, "checkpoint payload is little-endian");

struct CheckpointError : std::runtime_error {
    explicit CheckpointError(const std::string& what) : std::runtime_error(what) {}
};

inline nlohmann::ordered_json model_config_to_json(const ModelConfig& c) {
    nlohmann::ordered_json j;
    j["hidden"] = c.hidden;
    j["enc_layers"] = c.enc_layers;
    j["dec_layers"] = c.dec_layers;
    j["heads"] = c.heads;
    j["ffn_multiple"] = c.ffn_multiple;
    j["vocab"] = c.vocab;
    j["patch_size"] = c.patch_size;
    j["frame_px"] = c.frame_px;
    j["max_frames"] = c.max_frames;
    j["max_text_len"] = c.max_text_len;
    j["variant"] = variant_name(c.variant);
    j["fid_temporal_embeddings"] = c.fid_temporal_embeddings;
    j["tie_output"] = c.tie_output;
    return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.hidden = j.at("hidden").get<int>();
    c.enc_layers = j.at("enc_layers").get<int>();
    c.dec_layers = j.at("dec_layers").get<int>();
    c.heads = j.at("heads").get<int>();
    c.ffn_multiple = j.at("ffn_multiple").get<int>();
    c.vocab = j.at("vocab").get<int>();
    c.patch_size = j.at("patch_size").get<int>();
    c.frame_px = j.at("frame_px").get<int>();
    c.max_frames = j.at("max_frames").get<int>();
    c.max_text_len = j.at("max_text_len").get<int>();
    const std::string v = j.at("variant").get<std::string>();
    if (v != "full" && v != "fid") throw CheckpointError("unknown variant: " + v);
    c.variant = v == "full" ? Variant::full : Variant::fid;
    c.fid_temporal_embeddings = j.at("fid_temporal_embeddings").get<bool>();
    c.tie_output = j.at("tie_output").get<bool>();
    return c;
}

struct Checkpoint {
    ModelConfig cfg;
    std::vector<std::string> vocab;
    VideoToTextModel<float> model;
    bool has_optimizer = false;
    AdamWState<float> optimizer;
    int64_t step = 0;
    uint64_t run_seed = 0;
    nlohmann::ordered_json extra;  // trainer position for resume, etc.
};

// File layout: magic "VOFA1", u32le metadata length, JSON metadata (config,
// vocab, tensor directory with shapes/offsets, rng state, step), then the raw
// float32 little-endian payload. Round-trips are byte-exact.
inline void save_checkpoint(const std::filesystem::path& path, VideoToTextModel<float>& model,
                            const std::vector<std::string>& vocab, const AdamWState<float>* optimizer,
                            int64_t step, uint64_t run_seed, const nlohmann::ordered_json& extra = {}) {
    auto params = model.params();

    std::vector<std::pair<std::string, const std::vector<float>*>> tensors;
    std::vector<Shape> shapes;
    for (auto& p : params) {
        tensors.emplace_back(p.name, p.tensor->data.get());
        shapes.push_back(p.tensor->shape);
    }
    if (optimizer && optimizer->step_count > 0) {
        if (optimizer->m.size() != params.size())
            throw CheckpointError("optimizer slots do not match parameter count");
        for (size_t i = 0; i < params.size(); ++i) {
            tensors.emplace_back("opt.m." + params[i].name, &optimizer->m[i]);
            shapes.push_back(params[i].tensor->shape);
            tensors.emplace_back("opt.v." + params[i].name, &optimizer->v[i]);
            shapes.push_back(params[i].tensor->shape);
        }
    }

    nlohmann::ordered_json meta;
    meta["config"] = model_config_to_json(model.cfg);
    meta["vocab"] = vocab;
    meta["step"] = step;
    meta["rng"] = {{"run_seed", run_seed}};
    if (optimizer && optimizer->step_count > 0) {
        meta["optimizer"] = {{"step_count", optimizer->step_count},
                             {"lr", optimizer->cfg.lr},
                             {"beta1", optimizer->cfg.beta1},
                             {"beta2", optimizer->cfg.beta2},
                             {"eps", optimizer->cfg.eps},
                             {"weight_decay", optimizer->cfg.weight_decay}};
    }
    if (!extra.is_null()) meta["extra"] = extra;

    auto dir = nlohmann::ordered_json::array();
    uint64_t offset = 0;
    for (size_t i = 0; i < tensors.size(); ++i) {
        nlohmann::ordered_json e;
        e["name"] = tensors[i].first;
        e["shape"] = shapes[i];
        e["offset"] = offset;
        dir.push_back(std::move(e));
        offset += tensors[i].second->size() * sizeof(float);
    }
    meta["tensors"] = std::move(dir);

    const std::string meta_str = meta.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    out.write("VOFA1", 5);
    const uint32_t len = static_cast<uint32_t>(meta_str.size());
    out.write(reinterpret_cast<const char*>(&len), 4);
    out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
    for (auto& [name, buf] : tensors)
        out.write(reinterpret_cast<const char*>(buf->data()),
                  static_cast<std::streamsize>(buf->size() * sizeof(float)));
    if (!out) throw CheckpointError("short write to " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    char magic[5];
    in.read(magic, 5);
    if (!in || std::memcmp(magic, "VOFA1", 5) != 0)
        throw CheckpointError(path.string() + ": not a VOFA1 checkpoint");
    uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 4);
    std::string meta_str(len, '\0');
    in.read(meta_str.data(), len);
    if (!in) throw CheckpointError(path.string() + ": truncated metadata");
    auto meta = nlohmann::ordered_json::parse(meta_str);

    Checkpoint ck;
    ck.cfg = model_config_from_json(meta.at("config"));
    ck.vocab = meta.at("vocab").get<std::vector<std::string>>();
    ck.step = meta.at("step").get<int64_t>();
    ck.run_seed = meta.at("rng").at("run_seed").get<uint64_t>();
    if (meta.contains("extra")) ck.extra = meta.at("extra");
    ck.model = VideoToTextModel<float>::init(ck.cfg, 0);

    std::vector<char> payload(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>{});
    auto read_tensor = [&](const nlohmann::json& entry, std::vector<float>& dst, const Shape& expect) {
        const Shape shape = entry.at("shape").get<Shape>();
        if (shape != expect)
            throw CheckpointError(path.string() + ": tensor " + entry.at("name").get<std::string>() +
                                  " has shape " + shape_str(shape) + ", expected " + shape_str(expect));
        const uint64_t off = entry.at("offset").get<uint64_t>();
        const uint64_t bytes = static_cast<uint64_t>(shape_numel(shape)) * sizeof(float);
        if (off + bytes > payload.size()) throw CheckpointError(path.string() + ": payload out of range");
        dst.resize(static_cast<size_t>(shape_numel(shape)));
        std::memcpy(dst.data(), payload.data() + off, bytes);
    };

    std::unordered_map<std::string, const nlohmann::ordered_json*> by_name;
    for (const auto& e : meta.at("tensors")) by_name[e.at("name").get<std::string>()] = &e;

    auto params = ck.model.params();
    for (auto& p : params) {
        auto it = by_name.find(p.name);
        if (it == by_name.end()) throw CheckpointError(path.string() + ": missing tensor " + p.name);
        read_tensor(*it->second, *p.tensor->data, p.tensor->shape);
    }

    if (meta.contains("optimizer")) {
        ck.has_optimizer = true;
        const auto& o = meta.at("optimizer");
        ck.optimizer.step_count = o.at("step_count").get<int64_t>();
        ck.optimizer.cfg.lr = o.at("lr").get<double>();
        ck.optimizer.cfg.beta1 = o.at("beta1").get<double>();
        ck.optimizer.cfg.beta2 = o.at("beta2").get<double>();
        ck.optimizer.cfg.eps = o.at("eps").get<double>();
        ck.optimizer.cfg.weight_decay = o.at("weight_decay").get<double>();
        ck.optimizer.m.resize(params.size());
        ck.optimizer.v.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            auto mi = by_name.find("opt.m." + params[i].name);
            auto vi = by_name.find("opt.v." + params[i].name);
            if (mi == by_name.end() || vi == by_name.end())
                throw CheckpointError(path.string() + ": missing optimizer moments for " + params[i].name);
            read_tensor(*mi->second, ck.optimizer.m[i], params[i].tensor->shape);
            read_tensor(*vi->second, ck.optimizer.v[i], params[i].tensor->shape);
        }
    }
    return ck;
}

}  // namespace vofa
