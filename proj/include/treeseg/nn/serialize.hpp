#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "treeseg/nn/modules.hpp"

// Checkpoint container: 8-byte magic, little-endian u64 header length, JSON
// header describing the tensor table plus free-form metadata, then raw f64
// payload in table order.

namespace treeseg::nn {

inline constexpr char kCheckpointMagic[8] = {'T', 'S', 'C', 'K', 'P', 'T', '0', '1'};

inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 14695981039346656037ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

// Checksum over parameter names and raw values, order-sensitive.
inline uint64_t params_checksum(const NamedParams& params) {
    uint64_t h = 14695981039346656037ull;
    for (const auto& [name, v] : params) {
        h = fnv1a64(name.data(), name.size(), h);
        h = fnv1a64(v->value.data(), (size_t)v->value.numel() * sizeof(real_t), h);
    }
    return h;
}

struct Checkpoint {
    std::vector<std::pair<std::string, Tensor>> tensors;
    nlohmann::ordered_json meta = nlohmann::ordered_json::object();

    void add(const std::string& name, const Tensor& t) { tensors.push_back({name, t}); }

    const Tensor* find(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return &t;
        return nullptr;
    }

    void save(const std::string& path) const {
        nlohmann::ordered_json header;
        header["dtype"] = "f64le";
        header["meta"] = meta;
        auto table = nlohmann::ordered_json::array();
        uint64_t offset = 0;
        for (const auto& [name, t] : tensors) {
            nlohmann::ordered_json e;
            e["name"] = name;
            e["shape"] = t.shape();
            e["offset"] = offset;
            table.push_back(e);
            offset += (uint64_t)t.numel() * sizeof(real_t);
        }
        header["tensors"] = table;
        const std::string hs = header.dump();

        std::ofstream f(path, std::ios::binary);
        TS_CHECK(f.good(), "checkpoint save: cannot open " + path);
        f.write(kCheckpointMagic, 8);
        const uint64_t hlen = hs.size();
        f.write(reinterpret_cast<const char*>(&hlen), 8);
        f.write(hs.data(), (std::streamsize)hs.size());
        for (const auto& [name, t] : tensors)
            f.write(reinterpret_cast<const char*>(t.data()),
                    (std::streamsize)(t.numel() * sizeof(real_t)));
        TS_CHECK(f.good(), "checkpoint save: write failed for " + path);
    }

    static Checkpoint load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        TS_CHECK(f.good(), "checkpoint load: cannot open " + path);
        char magic[8];
        f.read(magic, 8);
        TS_CHECK(f.good() && std::memcmp(magic, kCheckpointMagic, 8) == 0,
                 "checkpoint load: bad magic in " + path);
        uint64_t hlen = 0;
        f.read(reinterpret_cast<char*>(&hlen), 8);
        std::string hs(hlen, '\0');
        f.read(hs.data(), (std::streamsize)hlen);
        TS_CHECK(f.good(), "checkpoint load: truncated header in " + path);
        auto header = nlohmann::ordered_json::parse(hs);
        TS_CHECK(header.at("dtype") == "f64le", "checkpoint load: unsupported dtype");

        Checkpoint ck;
        ck.meta = header.value("meta", nlohmann::ordered_json::object());
        for (const auto& e : header.at("tensors")) {
            Shape shape = e.at("shape").get<Shape>();
            Tensor t(shape);
            f.read(reinterpret_cast<char*>(t.data()),
                   (std::streamsize)(t.numel() * sizeof(real_t)));
            TS_CHECK(f.good(), "checkpoint load: truncated payload in " + path);
            ck.tensors.push_back({e.at("name").get<std::string>(), std::move(t)});
        }
        return ck;
    }
};

inline void save_params(const std::string& path, const NamedParams& params,
                        nlohmann::ordered_json meta = nlohmann::ordered_json::object()) {
    Checkpoint ck;
    ck.meta = std::move(meta);
    for (const auto& [name, v] : params) ck.add(name, v->value);
    ck.save(path);
}

// Strict restore: every parameter must be present with a matching shape.
inline void load_params(const Checkpoint& ck, const NamedParams& params) {
    for (const auto& [name, v] : params) {
        const Tensor* t = ck.find(name);
        TS_CHECK(t != nullptr, "checkpoint: missing tensor " + name);
        TS_CHECK(t->shape() == v->value.shape(),
                 "checkpoint: shape mismatch for " + name + " (" +
                     shape_str(t->shape()) + " vs " + shape_str(v->value.shape()) + ")");
        std::copy(t->data(), t->data() + t->numel(), v->value.data());
    }
}

inline void load_params(const std::string& path, const NamedParams& params) {
    load_params(Checkpoint::load(path), params);
}

}  // namespace treeseg::nn
