#pragma once

#include <fstream>
#include <map>

#include "psycho/model.hpp"
#include "psycho/optim.hpp"

namespace psycho {

// Checkpoint layout: magic line, manifest byte count line, JSON manifest,
// then a contiguous little-endian float32 payload addressed by byte offsets.
inline constexpr const char* kCkptMagic = "PSYCKPT1";

namespace detail {

template <typename T>
struct NamedTensor {
    std::string name;
    Tensor<T>* t;
};

/// Every persistent tensor: parameters, running stats, optimizer moments.
template <typename T>
std::vector<NamedTensor<T>> checkpoint_tensors(Model<T>& model, AdamW<T>* optim) {
    std::vector<NamedTensor<T>> out;
    ParamList<T> ps;
    model.collect(ps);
    for (auto& p : ps) out.push_back({p.name, &p.v->value});
    BufferList<T> bufs;
    model.collect_buffers(bufs);
    for (auto& b : bufs) out.push_back({b.name, b.t});
    if (optim) {
        for (size_t i = 0; i < optim->params.size(); ++i) {
            out.push_back({"optim." + optim->params[i].name + ".m", &optim->m[i]});
            out.push_back({"optim." + optim->params[i].name + ".v", &optim->v[i]});
        }
    }
    return out;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, Model<T>& model, AdamW<T>* optim, int64_t epoch, int64_t step,
                     uint64_t rng_state) {
    auto tensors = detail::checkpoint_tensors(model, optim);
    json manifest;
    manifest["config"] = config_to_json(model.cfg);
    manifest["epoch"] = epoch;
    manifest["step"] = step;
    manifest["rng_state"] = rng_state;
    manifest["optim_step"] = optim ? optim->step_count : 0;
    manifest["tensors"] = json::array();
    int64_t offset = 0;
    for (auto& nt : tensors) {
        manifest["tensors"].push_back(
            {{"name", nt.name}, {"dtype", "f32"}, {"shape", nt.t->shape}, {"offset", offset}});
        offset += nt.t->numel() * 4;
    }
    const std::string mtxt = manifest.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot write " + path);
    f << kCkptMagic << "\n" << mtxt.size() << "\n" << mtxt;
    std::vector<float> buf;
    for (auto& nt : tensors) {
        buf.resize(static_cast<size_t>(nt.t->numel()));
        for (int64_t i = 0; i < nt.t->numel(); ++i) buf[static_cast<size_t>(i)] = static_cast<float>((*nt.t)[i]);
        f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
    }
    if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

struct CheckpointInfo {
    int64_t epoch = 0;
    int64_t step = 0;
    uint64_t rng_state = 0;
};

/// Read the manifest only (config inspection without a built model).
inline json read_checkpoint_manifest(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
    std::string magic, len_line;
    std::getline(f, magic);
    std::getline(f, len_line);
    if (magic != kCkptMagic) throw std::runtime_error("checkpoint: bad magic in " + path);
    std::string mtxt(std::stoull(len_line), '\0');
    f.read(mtxt.data(), static_cast<std::streamsize>(mtxt.size()));
    if (!f) throw std::runtime_error("checkpoint: truncated manifest in " + path);
    return json::parse(mtxt);
}

template <typename T>
CheckpointInfo load_checkpoint(const std::string& path, Model<T>& model, AdamW<T>* optim) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
    std::string magic, len_line;
    std::getline(f, magic);
    std::getline(f, len_line);
    if (magic != kCkptMagic) throw std::runtime_error("checkpoint: bad magic in " + path);
    std::string mtxt(std::stoull(len_line), '\0');
    f.read(mtxt.data(), static_cast<std::streamsize>(mtxt.size()));
    if (!f) throw std::runtime_error("checkpoint: truncated manifest in " + path);
    json manifest = json::parse(mtxt);
    const std::streampos payload_start = f.tellg();

    if (manifest.at("config") != config_to_json(model.cfg))
        throw std::runtime_error("checkpoint: config mismatch, saved model \"" +
                                 manifest["config"].value("name", std::string("?")) + "\" vs \"" + model.cfg.name +
                                 "\"");

    auto tensors = detail::checkpoint_tensors(model, optim);
    std::map<std::string, Tensor<T>*> want;
    for (auto& nt : tensors) want[nt.name] = nt.t;

    std::string problems;
    std::set<std::string> seen;
    for (const auto& jt : manifest.at("tensors")) {
        const std::string name = jt.at("name").get<std::string>();
        seen.insert(name);
        auto it = want.find(name);
        if (it == want.end()) {
            if (!optim && name.rfind("optim.", 0) == 0) continue;  // loading weights only
            problems += " unexpected:" + name;
        } else if (it->second->shape != jt.at("shape").get<Shape>()) {
            problems += " shape-mismatch:" + name;
        }
    }
    for (auto& [name, t] : want)
        if (!seen.count(name)) problems += " missing:" + name;
    if (!problems.empty()) throw std::runtime_error("checkpoint: tensor mismatch:" + problems);

    std::vector<float> buf;
    for (const auto& jt : manifest.at("tensors")) {
        const std::string name = jt.at("name").get<std::string>();
        auto it = want.find(name);
        const int64_t n = [&jt] {
            int64_t p = 1;
            for (int64_t d : jt.at("shape").get<Shape>()) p *= d;
            return p;
        }();
        if (it == want.end()) continue;
        f.seekg(payload_start + static_cast<std::streamoff>(jt.at("offset").get<int64_t>()));
        buf.resize(static_cast<size_t>(n));
        f.read(reinterpret_cast<char*>(buf.data()), n * 4);
        if (!f) throw std::runtime_error("checkpoint: truncated payload in " + path);
        for (int64_t i = 0; i < n; ++i) (*it->second)[i] = static_cast<T>(buf[static_cast<size_t>(i)]);
    }

    if (optim) optim->step_count = manifest.value("optim_step", int64_t{0});
    CheckpointInfo info;
    info.epoch = manifest.at("epoch").get<int64_t>();
    info.step = manifest.at("step").get<int64_t>();
    info.rng_state = manifest.at("rng_state").get<uint64_t>();
    return info;
}

}  // namespace psycho
