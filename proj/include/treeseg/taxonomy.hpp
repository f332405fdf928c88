#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "treeseg/common.hpp"

// Class schemas (per-dataset grouping rules), the species/genus/family
// hierarchy, and class weight vectors. Schemas and hierarchies are data,
// loadable from JSON fixtures.

namespace treeseg {

struct ClassSchema {
    std::vector<std::string> classes;  // ordered, unique
    std::map<std::string, std::string> raw_to_class;
    std::string other_class;  // empty when nothing was grouped
    int64_t min_count = 0;

    bool has_other() const { return !other_class.empty(); }

    int64_t id_of(const std::string& code) const {
        for (size_t i = 0; i < classes.size(); ++i)
            if (classes[i] == code) return (int64_t)i;
        TS_CHECK(false, "schema: unknown class " + code);
        return -1;
    }

    // Total map: known raw labels and class codes map to their class; unseen
    // labels fall into Other when grouping happened, otherwise error.
    std::string map_raw(const std::string& raw) const {
        auto it = raw_to_class.find(raw);
        if (it != raw_to_class.end()) return it->second;
        if (std::find(classes.begin(), classes.end(), raw) != classes.end()) return raw;
        TS_CHECK(has_other(), "schema: unmapped label " + raw + " and no Other class");
        return other_class;
    }
};

struct TaxonomyTree {
    enum class Level { species, genus, family, other };

    struct NodeInfo {
        Level level = Level::other;
        std::string genus;   // bucket code at the genus level
        std::string family;  // bucket code at the family level
    };

    std::map<std::string, NodeInfo> nodes;

    void add_species(const std::string& code, const std::string& genus,
                     const std::string& family) {
        TS_CHECK(!genus.empty() && !family.empty(),
                 "taxonomy: species " + code + " needs genus and family");
        nodes[code] = {Level::species, genus, family};
    }
    void add_genus(const std::string& code, const std::string& family) {
        TS_CHECK(!family.empty(), "taxonomy: genus " + code + " needs a family");
        nodes[code] = {Level::genus, code, family};
    }
    void add_family(const std::string& code) {
        nodes[code] = {Level::family, code, code};
    }
    // Rank outside the species/genus/family ladder (e.g. "dead", classis
    // ranks): forms its own bucket at every level.
    void add_other(const std::string& code) {
        nodes[code] = {Level::other, code, code};
    }

    bool contains(const std::string& code) const { return nodes.count(code) > 0; }

    const NodeInfo& info(const std::string& code) const {
        auto it = nodes.find(code);
        TS_CHECK(it != nodes.end(), "taxonomy: unknown class " + code);
        return it->second;
    }

    std::string genus_bucket(const std::string& code) const { return info(code).genus; }
    std::string family_bucket(const std::string& code) const { return info(code).family; }
};

enum class SchemaGrouping { species, family };

// Labels with count strictly greater than min_count become classes; the rest
// group into "Other". With family grouping, labels are lifted to their family
// first and the threshold applies to family totals.
inline ClassSchema build_schema(const std::map<std::string, int64_t>& counts,
                                int64_t min_count, SchemaGrouping grouping,
                                const TaxonomyTree* tree = nullptr) {
    TS_CHECK(!counts.empty(), "build_schema: empty counts");
    TS_CHECK(min_count >= 0, "build_schema: negative min_count");

    std::map<std::string, std::string> raw_to_group;
    std::map<std::string, int64_t> group_counts;
    if (grouping == SchemaGrouping::family) {
        TS_CHECK(tree != nullptr, "build_schema: family grouping needs a taxonomy");
        std::vector<std::string> missing;
        for (const auto& [raw, c] : counts) {
            if (!tree->contains(raw)) {
                missing.push_back(raw);
                continue;
            }
            const std::string fam = tree->family_bucket(raw);
            raw_to_group[raw] = fam;
            group_counts[fam] += c;
        }
        if (!missing.empty()) {
            std::string msg = "build_schema: no family for labels:";
            for (const auto& m : missing) msg += " " + m;
            TS_CHECK(false, msg);
        }
    } else {
        for (const auto& [raw, c] : counts) {
            raw_to_group[raw] = raw;
            group_counts[raw] += c;
        }
    }

    ClassSchema schema;
    schema.min_count = min_count;
    std::vector<std::string> kept, grouped;
    for (const auto& [g, c] : group_counts)
        (c > min_count ? kept : grouped).push_back(g);
    std::sort(kept.begin(), kept.end());
    schema.classes = kept;
    if (!grouped.empty()) {
        schema.other_class = "Other";
        schema.classes.push_back(schema.other_class);
    }
    for (const auto& [raw, g] : raw_to_group) {
        const bool is_kept = std::find(kept.begin(), kept.end(), g) != kept.end();
        schema.raw_to_class[raw] = is_kept ? g : schema.other_class;
    }
    return schema;
}

struct ClassWeights {
    std::map<std::string, real_t> weights;
    bool sum_to_one = true;

    real_t at(const std::string& code) const {
        auto it = weights.find(code);
        TS_CHECK(it != weights.end(), "class weights: missing class " + code);
        return it->second;
    }
};

inline ClassWeights inverse_frequency_weights(const std::map<std::string, int64_t>& train_counts) {
    TS_CHECK(!train_counts.empty(), "inverse_frequency_weights: empty counts");
    ClassWeights w;
    real_t total = 0;
    for (const auto& [c, n] : train_counts) {
        TS_CHECK(n > 0, "inverse_frequency_weights: class absent from training set: " + c);
        w.weights[c] = 1.0 / (real_t)n;
        total += w.weights[c];
    }
    for (auto& [c, v] : w.weights) v /= total;
    return w;
}

inline ClassWeights test_proportion_weights(const std::map<std::string, int64_t>& test_counts) {
    TS_CHECK(!test_counts.empty(), "test_proportion_weights: empty test set");
    int64_t total = 0;
    for (const auto& [c, n] : test_counts) total += n;
    TS_CHECK(total > 0, "test_proportion_weights: empty test set");
    ClassWeights w;
    for (const auto& [c, n] : test_counts) w.weights[c] = (real_t)n / (real_t)total;
    return w;
}

// ---- JSON round trip -------------------------------------------------------

inline nlohmann::ordered_json schema_to_json(const ClassSchema& s) {
    nlohmann::ordered_json j;
    j["classes"] = s.classes;
    j["other_class"] = s.other_class;
    j["min_count"] = s.min_count;
    j["raw_to_class"] = s.raw_to_class;
    return j;
}

inline ClassSchema schema_from_json(const nlohmann::json& j) {
    ClassSchema s;
    s.classes = j.at("classes").get<std::vector<std::string>>();
    s.other_class = j.value("other_class", std::string());
    s.min_count = j.value("min_count", (int64_t)0);
    if (j.contains("raw_to_class"))
        s.raw_to_class = j.at("raw_to_class").get<std::map<std::string, std::string>>();
    return s;
}

inline nlohmann::ordered_json taxonomy_to_json(const TaxonomyTree& t) {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& [code, info] : t.nodes) {
        nlohmann::ordered_json e;
        e["code"] = code;
        switch (info.level) {
            case TaxonomyTree::Level::species: e["level"] = "species"; break;
            case TaxonomyTree::Level::genus: e["level"] = "genus"; break;
            case TaxonomyTree::Level::family: e["level"] = "family"; break;
            default: e["level"] = "other"; break;
        }
        e["genus"] = info.genus;
        e["family"] = info.family;
        j.push_back(e);
    }
    return j;
}

inline TaxonomyTree taxonomy_from_json(const nlohmann::json& j) {
    TaxonomyTree t;
    for (const auto& e : j) {
        const std::string code = e.at("code");
        const std::string level = e.at("level");
        if (level == "species")
            t.add_species(code, e.at("genus"), e.at("family"));
        else if (level == "genus")
            t.add_genus(code, e.at("family"));
        else if (level == "family")
            t.add_family(code);
        else
            t.add_other(code);
    }
    return t;
}

}  // namespace treeseg
