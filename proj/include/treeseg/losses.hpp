#pragma once

#include <set>
#include <string>
#include <vector>

#include "treeseg/nn/ops.hpp"
#include "treeseg/taxonomy.hpp"

// Classification losses over schema classes: plain cross-entropy,
// inverse-frequency weighted cross-entropy, and the taxonomy-level loss
// (species + genus + family terms with per-level instance exclusions).

namespace treeseg {

inline nn::Var cross_entropy(const nn::Var& logits, const std::vector<int64_t>& labels) {
    return nn::cross_entropy_logits(logits, labels);
}

// Per-instance weight = weight of the instance's true class; weighted-mean
// reduction. Every class that appears must have a weight.
inline nn::Var weighted_cross_entropy(const nn::Var& logits,
                                      const std::vector<int64_t>& labels,
                                      const ClassWeights& weights,
                                      const ClassSchema& schema) {
    std::vector<real_t> w;
    w.reserve(labels.size());
    for (int64_t l : labels) {
        TS_CHECK(l >= 0 && l < (int64_t)schema.classes.size(),
                 "weighted_cross_entropy: label out of range");
        w.push_back(weights.at(schema.classes[(size_t)l]));
    }
    return nn::cross_entropy_logits(logits, labels, w);
}

struct HierarchicalLossConfig {
    real_t w_species = 1.0 / 3, w_genus = 1.0 / 3, w_family = 1.0 / 3;
    std::set<std::string> species_exclusion;
    std::set<std::string> genus_exclusion;
};

namespace detail {

// Classes in schema order mapped to consecutive bucket ids at one taxonomy
// level; bucket ids are assigned on first appearance.
struct BucketIndex {
    std::vector<int64_t> group;  // class index -> bucket id
    int64_t n_buckets = 0;
};

inline BucketIndex bucket_index(const ClassSchema& schema, const TaxonomyTree& tree,
                                bool family_level) {
    BucketIndex b;
    std::map<std::string, int64_t> ids;
    for (const auto& code : schema.classes) {
        TS_CHECK(tree.contains(code),
                 "hierarchical_loss: class not in taxonomy: " + code);
        const std::string bucket =
            family_level ? tree.family_bucket(code) : tree.genus_bucket(code);
        auto [it, fresh] = ids.emplace(bucket, b.n_buckets);
        if (fresh) ++b.n_buckets;
        b.group.push_back(it->second);
    }
    return b;
}

}  // namespace detail

// Species term: CE over the schema classes, skipping instances whose label is
// in species_exclusion. Genus and family terms: class probabilities summed
// into taxonomy buckets, NLL of the lifted label's bucket; genus term skips
// genus_exclusion, family term uses every instance. Terms with no surviving
// instances (or zero weight) contribute exactly zero.
inline nn::Var hierarchical_loss(const nn::Var& logits, const std::vector<int64_t>& labels,
                                 const ClassSchema& schema, const TaxonomyTree& tree,
                                 const HierarchicalLossConfig& cfg) {
    TS_CHECK(cfg.w_species >= 0 && cfg.w_genus >= 0 && cfg.w_family >= 0,
             "hierarchical_loss: negative level weight");
    for (const auto& code : cfg.species_exclusion)
        TS_CHECK(std::find(schema.classes.begin(), schema.classes.end(), code) !=
                     schema.classes.end(),
                 "hierarchical_loss: species exclusion not a schema class: " + code);
    for (const auto& code : cfg.genus_exclusion)
        TS_CHECK(std::find(schema.classes.begin(), schema.classes.end(), code) !=
                     schema.classes.end(),
                 "hierarchical_loss: genus exclusion not a schema class: " + code);
    const int64_t k = (int64_t)schema.classes.size();
    TS_CHECK(logits->value.dim(-1) == k, "hierarchical_loss: logits width != classes");
    for (int64_t l : labels)
        TS_CHECK(l >= 0 && l < k, "hierarchical_loss: label out of range");

    auto included = [&](const std::set<std::string>& excl, std::vector<int64_t>& rows) {
        for (size_t i = 0; i < labels.size(); ++i)
            if (!excl.count(schema.classes[(size_t)labels[i]]))
                rows.push_back((int64_t)i);
    };

    nn::Var total = nn::make_leaf(nn::Tensor::zeros({1}));
    bool have_term = false;
    auto accumulate = [&](nn::Var term, real_t w) {
        term = nn::scale(term, w);
        total = have_term ? nn::add(total, term) : term;
        have_term = true;
    };

    if (cfg.w_species > 0) {
        std::vector<int64_t> rows;
        included(cfg.species_exclusion, rows);
        if (!rows.empty()) {
            std::vector<int64_t> sub_labels;
            for (int64_t r : rows) sub_labels.push_back(labels[(size_t)r]);
            const nn::Var sub = rows.size() == labels.size()
                                    ? logits
                                    : nn::index_rows(logits, rows);
            accumulate(nn::cross_entropy_logits(sub, sub_labels), cfg.w_species);
        }
    }

    auto bucket_term = [&](const detail::BucketIndex& bi,
                           const std::set<std::string>& excl) -> nn::Var {
        std::vector<int64_t> rows;
        included(excl, rows);
        if (rows.empty()) return nullptr;
        std::vector<int64_t> lifted;
        for (int64_t r : rows) lifted.push_back(bi.group[(size_t)labels[(size_t)r]]);
        nn::Var sub = rows.size() == labels.size() ? logits : nn::index_rows(logits, rows);
        nn::Var probs = nn::softmax_rows(sub);
        nn::Var bucket_probs = nn::sum_cols_by_group(probs, bi.group, bi.n_buckets);
        return nn::nll_loss(nn::log_op(bucket_probs), lifted);
    };

    if (cfg.w_genus > 0) {
        const auto bi = detail::bucket_index(schema, tree, /*family_level=*/false);
        if (nn::Var term = bucket_term(bi, cfg.genus_exclusion)) accumulate(term, cfg.w_genus);
    }
    if (cfg.w_family > 0) {
        const auto bi = detail::bucket_index(schema, tree, /*family_level=*/true);
        if (nn::Var term = bucket_term(bi, {})) accumulate(term, cfg.w_family);
    }
    return total;
}

}  // namespace treeseg
