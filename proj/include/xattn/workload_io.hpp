// Copyright (c) 2026 The xattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "xattn/attention.hpp"
#include "xattn/tensor.hpp"
#include "xattn/workloads.hpp"

namespace xattn {

inline nlohmann::json spec_to_json(const WorkloadSpec& spec) {
    nlohmann::json j;
    j["kind"] = kind_name(spec.kind);
    j["L"] = spec.seq_len;
    j["d_h"] = spec.head_dim;
    j["heads"] = spec.heads;
    j["seed"] = spec.seed;
    j["causal"] = spec.causal;
    j["columns"] = spec.columns;
    j["strength"] = spec.strength;
    j["offset"] = spec.offset;
    j["window"] = spec.window;
    j["width"] = spec.width;
    return j;
}

inline WorkloadSpec spec_from_json(const nlohmann::json& j) {
    WorkloadSpec spec;
    try {
        if (j.contains("kind")) spec.kind = parse_kind(j.at("kind").get<std::string>());
        if (j.contains("L")) spec.seq_len = j.at("L").get<std::size_t>();
        if (j.contains("d_h")) spec.head_dim = j.at("d_h").get<std::size_t>();
        if (j.contains("heads")) spec.heads = j.at("heads").get<std::size_t>();
        if (j.contains("seed")) spec.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("causal")) spec.causal = j.at("causal").get<bool>();
        if (j.contains("columns")) spec.columns = j.at("columns").get<std::vector<std::size_t>>();
        if (j.contains("strength")) spec.strength = j.at("strength").get<double>();
        if (j.contains("offset")) spec.offset = j.at("offset").get<std::size_t>();
        if (j.contains("window")) spec.window = j.at("window").get<std::size_t>();
        if (j.contains("width")) spec.width = j.at("width").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad workload spec field: ") + e.what());
    }
    spec.validate();
    return spec;
}

inline WorkloadSpec load_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot open spec file: " + path);
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad JSON in ") + path + ": " + e.what());
    }
    return spec_from_json(j);
}

inline std::string head_tensor_name(std::size_t head, const char* which) {
    return "head" + std::to_string(head) + "_" + which + ".xatn";
}

/** Writes workload.json plus head{h}_{q,k,v}.xatn under dir. */
inline void save_workload(const std::string& dir, const WorkloadSpec& spec,
                          const std::vector<AttentionInputs>& heads) {
    spec.validate();
    detail::require(heads.size() == spec.heads, "head count does not match spec");
    std::filesystem::create_directories(dir);
    const std::filesystem::path base(dir);
    {
        std::ofstream out(base / "workload.json");
        if (!out) {
            throw FormatError("cannot write workload.json under " + dir);
        }
        out << spec_to_json(spec).dump(2) << "\n";
    }
    for (std::size_t h = 0; h < heads.size(); ++h) {
        save_tensor(heads[h].q, (base / head_tensor_name(h, "q")).string());
        save_tensor(heads[h].k, (base / head_tensor_name(h, "k")).string());
        save_tensor(heads[h].v, (base / head_tensor_name(h, "v")).string());
    }
}

struct LoadedWorkload {
    WorkloadSpec spec;
    std::vector<AttentionInputs> heads;
};

inline LoadedWorkload load_workload(const std::string& dir) {
    const std::filesystem::path base(dir);
    LoadedWorkload out;
    out.spec = load_spec((base / "workload.json").string());
    for (std::size_t h = 0; h < out.spec.heads; ++h) {
        Tensor q = load_tensor((base / head_tensor_name(h, "q")).string());
        Tensor k = load_tensor((base / head_tensor_name(h, "k")).string());
        Tensor v = load_tensor((base / head_tensor_name(h, "v")).string());
        out.heads.emplace_back(std::move(q), std::move(k), std::move(v), out.spec.causal);
    }
    return out;
}

}  // namespace xattn
