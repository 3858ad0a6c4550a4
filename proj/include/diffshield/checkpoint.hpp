// Checkpoint directories: manifest.json plus weights.bin holding the raw
// little-endian parameter buffers concatenated in manifest order. The
// manifest records an FNV-1a hash of weights.bin; load verifies it.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffshield/denoiser.hpp"
#include "diffshield/model.hpp"
#include "diffshield/schedule.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoint io assumes a little-endian host");

namespace diffshield {

inline std::uint64_t fnv1a64(const unsigned char* p, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hash_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot read " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    char buf[32];
    std::snprintf(buf, sizeof buf, "fnv1a64:%016llx", static_cast<unsigned long long>(fnv1a64(bytes.data(), bytes.size())));
    return buf;
}

template <typename S>
const char* dtype_name() {
    if constexpr (sizeof(S) == 4)
        return "f32";
    else
        return "f64";
}

namespace detail_ckpt {

template <typename S>
void write_weights(const std::string& path, const std::vector<TensorT<S>*>& params) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot write " + path);
    for (const TensorT<S>* t : params)
        f.write(reinterpret_cast<const char*>(t->data.data()),
                static_cast<std::streamsize>(t->data.size() * sizeof(S)));
    if (!f) throw std::runtime_error("checkpoint: short write to " + path);
}

template <typename S>
void read_weights(const std::string& path, const std::vector<TensorT<S>*>& params) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot read " + path);
    for (TensorT<S>* t : params) {
        f.read(reinterpret_cast<char*>(t->data.data()),
               static_cast<std::streamsize>(t->data.size() * sizeof(S)));
        if (f.gcount() != static_cast<std::streamsize>(t->data.size() * sizeof(S)))
            throw std::runtime_error("checkpoint: truncated weights in " + path);
    }
    char extra;
    if (f.read(&extra, 1))
        throw std::runtime_error("checkpoint: trailing bytes in " + path);
}

inline nlohmann::ordered_json tensor_list(const std::vector<std::string>& names,
                                          const std::vector<std::vector<int>>& shapes) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < names.size(); ++i) {
        nlohmann::ordered_json t;
        t["name"] = names[i];
        t["shape"] = shapes[i];
        arr.push_back(t);
    }
    return arr;
}

inline nlohmann::json load_manifest(const std::string& dir) {
    std::ifstream f(dir + "/manifest.json", std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot read " + dir + "/manifest.json");
    nlohmann::json j;
    f >> j;
    return j;
}

inline void verify_common(const nlohmann::json& m, const std::string& dir, const char* kind, const char* dtype) {
    if (m.value("kind", "") != kind)
        throw std::runtime_error("checkpoint: " + dir + " holds '" + m.value("kind", "") + "', expected '" + kind + "'");
    if (m.value("dtype", "") != dtype)
        throw std::runtime_error("checkpoint: " + dir + " dtype '" + m.value("dtype", "") + "' does not match build scalar '" + dtype + "'");
    std::string want = m.value("content_hash", "");
    std::string got = hash_file(dir + "/weights.bin");
    if (want != got)
        throw std::runtime_error("checkpoint: content hash mismatch in " + dir + " (manifest " + want + ", file " + got + ")");
}

}  // namespace detail_ckpt

template <typename S>
void save_model(const std::string& dir, EncoderClassifier<S>& m, const Vocab& vocab) {
    std::filesystem::create_directories(dir);
    auto params = m.parameters();
    detail_ckpt::write_weights<S>(dir + "/weights.bin", params);
    nlohmann::ordered_json j;
    j["kind"] = "encoder_classifier";
    j["dtype"] = dtype_name<S>();
    j["config"] = {{"vocab", m.cfg.vocab},     {"width", m.cfg.width},   {"layers", m.cfg.layers},
                   {"heads", m.cfg.heads},     {"ffn_mult", m.cfg.ffn_mult}, {"max_len", m.cfg.max_len},
                   {"classes", m.cfg.classes}, {"dropout", m.cfg.dropout},   {"init_std", m.cfg.init_std},
                   {"ln_eps", m.cfg.ln_eps}};
    j["vocab"] = vocab.id_to_token;
    std::vector<std::vector<int>> shapes;
    for (auto* t : params) shapes.push_back(t->shape);
    j["tensors"] = detail_ckpt::tensor_list(m.parameter_names(), shapes);
    j["content_hash"] = hash_file(dir + "/weights.bin");
    std::ofstream f(dir + "/manifest.json", std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot write " + dir + "/manifest.json");
    f << j.dump(2) << "\n";
}

template <typename S>
std::pair<EncoderClassifier<S>, Vocab> load_model(const std::string& dir) {
    nlohmann::json m = detail_ckpt::load_manifest(dir);
    detail_ckpt::verify_common(m, dir, "encoder_classifier", dtype_name<S>());
    EncoderClassifier<S> model;
    const auto& c = m.at("config");
    model.cfg.vocab = c.at("vocab").get<int>();
    model.cfg.width = c.at("width").get<int>();
    model.cfg.layers = c.at("layers").get<int>();
    model.cfg.heads = c.at("heads").get<int>();
    model.cfg.ffn_mult = c.at("ffn_mult").get<int>();
    model.cfg.max_len = c.at("max_len").get<int>();
    model.cfg.classes = c.at("classes").get<int>();
    model.cfg.dropout = c.at("dropout").get<double>();
    model.cfg.init_std = c.at("init_std").get<double>();
    model.cfg.ln_eps = c.at("ln_eps").get<double>();
    Rng dummy(0);
    model.init(dummy);
    auto params = model.parameters();
    auto names = model.parameter_names();
    const auto& tensors = m.at("tensors");
    if (tensors.size() != params.size()) throw std::runtime_error("checkpoint: tensor count mismatch in " + dir);
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (tensors[i].at("name").get<std::string>() != names[i])
            throw std::runtime_error("checkpoint: tensor order mismatch at " + names[i] + " in " + dir);
        if (tensors[i].at("shape").get<std::vector<int>>() != params[i]->shape)
            throw std::runtime_error("checkpoint: shape mismatch for " + names[i] + " in " + dir);
    }
    detail_ckpt::read_weights<S>(dir + "/weights.bin", params);
    Vocab vocab;
    vocab.id_to_token = m.at("vocab").get<std::vector<std::string>>();
    vocab.token_to_id.clear();
    for (int i = 0; i < static_cast<int>(vocab.id_to_token.size()); ++i)
        vocab.token_to_id.emplace(vocab.id_to_token[static_cast<std::size_t>(i)], i);
    if (vocab.size() != model.cfg.vocab) throw std::runtime_error("checkpoint: vocab size mismatch in " + dir);
    return {std::move(model), std::move(vocab)};
}

template <typename S>
void save_denoiser(const std::string& dir, DiffusionDenoiser<S>& d, const NoiseSchedule& sched,
                   double beta_start, double beta_end) {
    std::filesystem::create_directories(dir);
    auto params = d.parameters();
    detail_ckpt::write_weights<S>(dir + "/weights.bin", params);
    nlohmann::ordered_json j;
    j["kind"] = "denoiser";
    j["dtype"] = dtype_name<S>();
    j["config"] = {{"width", d.cfg.width},       {"heads", d.cfg.heads},   {"ffn_mult", d.cfg.ffn_mult},
                   {"max_len", d.cfg.max_len},   {"dropout", d.cfg.dropout}, {"init_std", d.cfg.init_std},
                   {"ln_eps", d.cfg.ln_eps}};
    j["schedule"] = {{"T", sched.T}, {"beta_start", beta_start}, {"beta_end", beta_end}};
    std::vector<std::vector<int>> shapes;
    for (auto* t : params) shapes.push_back(t->shape);
    j["tensors"] = detail_ckpt::tensor_list(d.parameter_names(), shapes);
    j["content_hash"] = hash_file(dir + "/weights.bin");
    std::ofstream f(dir + "/manifest.json", std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot write " + dir + "/manifest.json");
    f << j.dump(2) << "\n";
}

struct ScheduleSpec {
    int T = 0;
    double beta_start = 0.0, beta_end = 0.0;
};

template <typename S>
std::pair<DiffusionDenoiser<S>, ScheduleSpec> load_denoiser(const std::string& dir) {
    nlohmann::json m = detail_ckpt::load_manifest(dir);
    detail_ckpt::verify_common(m, dir, "denoiser", dtype_name<S>());
    DiffusionDenoiser<S> d;
    const auto& c = m.at("config");
    d.cfg.width = c.at("width").get<int>();
    d.cfg.heads = c.at("heads").get<int>();
    d.cfg.ffn_mult = c.at("ffn_mult").get<int>();
    d.cfg.max_len = c.at("max_len").get<int>();
    d.cfg.dropout = c.at("dropout").get<double>();
    d.cfg.init_std = c.at("init_std").get<double>();
    d.cfg.ln_eps = c.at("ln_eps").get<double>();
    Rng dummy(0);
    d.init(dummy);
    auto params = d.parameters();
    auto names = d.parameter_names();
    const auto& tensors = m.at("tensors");
    if (tensors.size() != params.size()) throw std::runtime_error("checkpoint: tensor count mismatch in " + dir);
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (tensors[i].at("name").get<std::string>() != names[i])
            throw std::runtime_error("checkpoint: tensor order mismatch at " + names[i] + " in " + dir);
        if (tensors[i].at("shape").get<std::vector<int>>() != params[i]->shape)
            throw std::runtime_error("checkpoint: shape mismatch for " + names[i] + " in " + dir);
    }
    detail_ckpt::read_weights<S>(dir + "/weights.bin", params);
    ScheduleSpec spec;
    spec.T = m.at("schedule").at("T").get<int>();
    spec.beta_start = m.at("schedule").at("beta_start").get<double>();
    spec.beta_end = m.at("schedule").at("beta_end").get<double>();
    return {std::move(d), spec};
}

}  // namespace diffshield
