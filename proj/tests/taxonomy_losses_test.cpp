#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "support/gradcheck.hpp"
#include "treeseg/losses.hpp"
#include "treeseg/taxonomy.hpp"

using namespace treeseg;
using namespace treeseg::testing;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;

namespace {

TaxonomyTree mixed_tree() {
    TaxonomyTree t;
    t.add_species("ABBA", "Abies", "Pinaceae");
    t.add_species("ACSA", "Acer", "Sapindaceae");
    t.add_genus("Acer", "Sapindaceae");
    t.add_family("Fagaceae");
    t.add_other("Pinopsida");
    return t;
}

ClassSchema mixed_schema() {
    ClassSchema s;
    s.classes = {"ABBA", "ACSA", "Acer", "Fagaceae", "Pinopsida"};
    return s;
}

}  // namespace

TEST_CASE("schema thresholding is strict and sorts kept classes") {
    const ClassSchema s =
        build_schema({{"A", 25}, {"B", 19}, {"C", 100}}, 20, SchemaGrouping::species);
    REQUIRE(s.classes == std::vector<std::string>{"A", "C", "Other"});
    REQUIRE(s.map_raw("B") == "Other");
    REQUIRE(s.map_raw("A") == "A");
    REQUIRE(s.map_raw("Other") == "Other");
    REQUIRE(s.map_raw("never-seen") == "Other");
    REQUIRE(s.id_of("C") == 1);
    REQUIRE_THROWS_AS(s.id_of("B"), Error);

    // a count equal to the threshold is grouped
    const ClassSchema b = build_schema({{"A", 25}, {"B", 20}}, 20, SchemaGrouping::species);
    REQUIRE(b.classes == std::vector<std::string>{"A", "Other"});
    REQUIRE(b.map_raw("B") == "Other");
}

TEST_CASE("single surviving label yields no Other class") {
    const ClassSchema s = build_schema({{"A", 100}}, 20, SchemaGrouping::species);
    REQUIRE(s.classes == std::vector<std::string>{"A"});
    REQUIRE_FALSE(s.has_other());
    REQUIRE_THROWS_AS(s.map_raw("unknown"), Error);
}

TEST_CASE("family grouping lifts labels before thresholding") {
    TaxonomyTree t = mixed_tree();
    // two Sapindaceae species each below threshold, together above it
    const ClassSchema s = build_schema({{"ACSA", 15}, {"Acer", 10}, {"ABBA", 3}}, 20,
                                       SchemaGrouping::family, &t);
    REQUIRE(s.classes == std::vector<std::string>{"Sapindaceae", "Other"});
    REQUIRE(s.map_raw("ACSA") == "Sapindaceae");
    REQUIRE(s.map_raw("Acer") == "Sapindaceae");
    REQUIRE(s.map_raw("ABBA") == "Other");

    REQUIRE_THROWS_WITH(build_schema({{"mystery", 30}}, 20, SchemaGrouping::family, &t),
                        ContainsSubstring("mystery"));
    REQUIRE_THROWS_AS(build_schema({{"ACSA", 30}}, 20, SchemaGrouping::family, nullptr),
                      Error);
}

TEST_CASE("taxonomy path consistency and mixed ranks") {
    const TaxonomyTree t = mixed_tree();
    REQUIRE(t.family_bucket(t.genus_bucket("ACSA")) == t.family_bucket("ACSA"));
    REQUIRE(t.genus_bucket("Acer") == "Acer");
    REQUIRE(t.family_bucket("Acer") == "Sapindaceae");
    // ranks outside the ladder bucket with themselves at every level
    REQUIRE(t.genus_bucket("Pinopsida") == "Pinopsida");
    REQUIRE(t.family_bucket("Pinopsida") == "Pinopsida");
    REQUIRE(t.family_bucket("Fagaceae") == "Fagaceae");
    REQUIRE_THROWS_AS(t.info("missing"), Error);
}

TEST_CASE("taxonomy and schema JSON round trips") {
    const TaxonomyTree t = mixed_tree();
    const TaxonomyTree t2 = taxonomy_from_json(taxonomy_to_json(t));
    REQUIRE(t2.nodes.size() == t.nodes.size());
    REQUIRE(t2.genus_bucket("ACSA") == "Acer");
    REQUIRE(t2.family_bucket("Pinopsida") == "Pinopsida");

    const ClassSchema s =
        build_schema({{"A", 25}, {"B", 19}, {"C", 100}}, 20, SchemaGrouping::species);
    const ClassSchema s2 = schema_from_json(schema_to_json(s));
    REQUIRE(s2.classes == s.classes);
    REQUIRE(s2.other_class == s.other_class);
    REQUIRE(s2.map_raw("B") == "Other");
}

TEST_CASE("inverse frequency weights") {
    const ClassWeights w = inverse_frequency_weights({{"A", 10}, {"B", 40}});
    REQUIRE(w.at("A") == Approx(0.8));
    REQUIRE(w.at("B") == Approx(0.2));
    REQUIRE(w.at("A") + w.at("B") == Approx(1.0));

    const ClassWeights eq = inverse_frequency_weights({{"A", 7}, {"B", 7}, {"C", 7}});
    REQUIRE(eq.at("A") == Approx(1.0 / 3));
    REQUIRE(eq.at("C") == Approx(1.0 / 3));

    REQUIRE(inverse_frequency_weights({{"solo", 12}}).at("solo") == Approx(1.0));
    REQUIRE_THROWS_AS(inverse_frequency_weights({{"A", 0}}), Error);

    // renaming classes permutes weights with them
    const ClassWeights renamed = inverse_frequency_weights({{"X", 40}, {"Y", 10}});
    REQUIRE(renamed.at("Y") == Approx(w.at("A")));
    REQUIRE(renamed.at("X") == Approx(w.at("B")));
}

TEST_CASE("test proportion weights") {
    const ClassWeights w = test_proportion_weights({{"A", 90}, {"B", 10}});
    REQUIRE(w.at("A") == Approx(0.9));
    REQUIRE(w.at("B") == Approx(0.1));
    REQUIRE(test_proportion_weights({{"A", 5}}).at("A") == Approx(1.0));
    const ClassWeights u = test_proportion_weights({{"A", 3}, {"B", 3}, {"C", 3}});
    REQUIRE(u.at("B") == Approx(1.0 / 3));
    REQUIRE_THROWS_AS(test_proportion_weights({}), Error);
    REQUIRE_THROWS_AS(w.at("missing"), Error);
}

TEST_CASE("cross entropy analytic values") {
    nn::Var flat4 = nn::make_leaf(nn::Tensor::zeros({2, 4}));
    REQUIRE(cross_entropy(flat4, {1, 3})->value[0] == Approx(std::log(4.0)));

    nn::Var flat2 = nn::make_leaf(nn::Tensor::zeros({1, 2}));
    REQUIRE(cross_entropy(flat2, {0})->value[0] == Approx(std::log(2.0)).epsilon(1e-6));

    nn::Tensor conf = nn::Tensor::zeros({1, 2});
    conf[0] = 30.0;
    REQUIRE(cross_entropy(nn::make_leaf(conf), {0})->value[0] < 1e-8);

    REQUIRE_THROWS_AS(cross_entropy(flat2, {2}), Error);
}

TEST_CASE("weighted cross entropy reductions") {
    ClassSchema s;
    s.classes = {"A", "B"};

    Rng rng(31);
    nn::Var logits = nn::make_leaf(random_tensor({4, 2}, rng, -2, 2));
    const std::vector<int64_t> labels = {0, 1, 1, 0};

    ClassWeights uniform;
    uniform.weights = {{"A", 0.5}, {"B", 0.5}};
    const real_t plain = cross_entropy(logits, labels)->value[0];
    const real_t weighted = weighted_cross_entropy(logits, labels, uniform, s)->value[0];
    REQUIRE(std::abs(plain - weighted) < 1e-9);

    // equal per-instance loss: weighted mean equals that loss
    nn::Var flat = nn::make_leaf(nn::Tensor::zeros({2, 2}));
    ClassWeights skew;
    skew.weights = {{"A", 0.8}, {"B", 0.2}};
    REQUIRE(weighted_cross_entropy(flat, {0, 1}, skew, s)->value[0] ==
            Approx(std::log(2.0)));

    // zero weight removes a class's instances from the reduction
    nn::Tensor mixed = nn::Tensor::zeros({2, 2});
    mixed.at({1, 0}) = 50.0;  // wildly wrong row for label 1, weight 0
    ClassWeights drop;
    drop.weights = {{"A", 1.0}, {"B", 0.0}};
    REQUIRE(weighted_cross_entropy(nn::make_leaf(mixed), {0, 1}, drop, s)->value[0] ==
            Approx(std::log(2.0)));

    ClassWeights missing;
    missing.weights = {{"A", 1.0}};
    REQUIRE_THROWS_AS(weighted_cross_entropy(logits, labels, missing, s), Error);
}

TEST_CASE("hierarchical loss with species-only weights equals cross entropy") {
    const TaxonomyTree tree = mixed_tree();
    const ClassSchema schema = mixed_schema();
    Rng rng(32);
    nn::Var logits = nn::make_leaf(random_tensor({6, 5}, rng, -2, 2));
    const std::vector<int64_t> labels = {0, 1, 2, 3, 4, 1};

    HierarchicalLossConfig cfg;
    cfg.w_species = 1.0;
    cfg.w_genus = 0.0;
    cfg.w_family = 0.0;
    const real_t h = hierarchical_loss(logits, labels, schema, tree, cfg)->value[0];
    const real_t ce = cross_entropy(logits, labels)->value[0];
    REQUIRE(std::abs(h - ce) < 1e-9);

    HierarchicalLossConfig zero;
    zero.w_species = zero.w_genus = zero.w_family = 0.0;
    REQUIRE(hierarchical_loss(logits, labels, schema, tree, zero)->value[0] == 0.0);
}

TEST_CASE("genus-rank label is excluded from the species term only") {
    const TaxonomyTree tree = mixed_tree();
    const ClassSchema schema = mixed_schema();
    Rng rng(33);
    nn::Var logits = nn::make_leaf(random_tensor({3, 5}, rng, -2, 2));
    const std::vector<int64_t> labels = {0, 2, 1};  // row 1 is "Acer"

    HierarchicalLossConfig cfg;
    cfg.w_species = 1.0;
    cfg.w_genus = 0.0;
    cfg.w_family = 0.0;
    cfg.species_exclusion = {"Acer"};
    // species term sees only rows 0 and 2
    std::vector<int64_t> rows = {0, 2};
    nn::Var sub = nn::index_rows(logits, rows);
    const real_t want = cross_entropy(sub, {0, 1})->value[0];
    const real_t got = hierarchical_loss(logits, labels, schema, tree, cfg)->value[0];
    REQUIRE(std::abs(got - want) < 1e-12);

    // the same instance still moves the genus and family terms
    HierarchicalLossConfig gf = cfg;
    gf.w_species = 0.0;
    gf.w_genus = 1.0;
    gf.w_family = 1.0;
    nn::Var bumped = nn::make_leaf(logits->value.clone());
    bumped->value.at({1, 2}) += 3.0;
    const real_t before = hierarchical_loss(logits, labels, schema, tree, gf)->value[0];
    const real_t after = hierarchical_loss(bumped, labels, schema, tree, gf)->value[0];
    REQUIRE(after < before);

    // genus_exclusion removes rows from the genus term
    HierarchicalLossConfig gx;
    gx.w_species = 0.0;
    gx.w_genus = 1.0;
    gx.w_family = 0.0;
    gx.genus_exclusion = {"Pinopsida"};
    const std::vector<int64_t> with_pin = {0, 2, 4};
    const real_t excl = hierarchical_loss(logits, with_pin, schema, tree, gx)->value[0];
    std::vector<int64_t> kept_rows = {0, 1};
    nn::Var sub2 = nn::index_rows(logits, kept_rows);
    HierarchicalLossConfig gonly = gx;
    gonly.genus_exclusion = {};
    const real_t ref = hierarchical_loss(sub2, {0, 2}, schema, tree, gonly)->value[0];
    REQUIRE(excl == Approx(ref).margin(1e-12));
}

TEST_CASE("sibling classes are interchangeable above the species level") {
    const TaxonomyTree tree = mixed_tree();
    const ClassSchema schema = mixed_schema();
    Rng rng(34);
    nn::Tensor base = random_tensor({4, 5}, rng, -2, 2);
    nn::Tensor swapped = base.clone();
    for (int64_t r = 0; r < 4; ++r)
        std::swap(swapped.at({r, 1}), swapped.at({r, 2}));  // ACSA <-> Acer columns

    HierarchicalLossConfig cfg;
    cfg.w_species = 0.0;
    cfg.w_genus = 0.5;
    cfg.w_family = 0.5;
    const std::vector<int64_t> labels = {0, 3, 4, 1};
    const real_t a =
        hierarchical_loss(nn::make_leaf(base), labels, schema, tree, cfg)->value[0];
    // label 1 (ACSA) and label 2 (Acer) lift to the same buckets
    std::vector<int64_t> relabeled = labels;
    relabeled[3] = 2;
    const real_t b =
        hierarchical_loss(nn::make_leaf(swapped), relabeled, schema, tree, cfg)->value[0];
    REQUIRE(std::abs(a - b) < 1e-12);
}

TEST_CASE("marginalized bucket probabilities sum to one") {
    const TaxonomyTree tree = mixed_tree();
    const ClassSchema schema = mixed_schema();
    const auto bi = detail::bucket_index(schema, tree, false);
    Rng rng(35);
    nn::Var logits = nn::make_leaf(random_tensor({5, 5}, rng, -3, 3));
    nn::Var probs = nn::softmax_rows(logits);
    nn::Var buckets = nn::sum_cols_by_group(probs, bi.group, bi.n_buckets);
    for (int64_t r = 0; r < 5; ++r) {
        real_t s = 0;
        for (int64_t c = 0; c < bi.n_buckets; ++c) s += buckets->value.at({r, c});
        REQUIRE(s == Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("hierarchical loss is finite, nonnegative, and passes gradcheck") {
    const TaxonomyTree tree = mixed_tree();
    const ClassSchema schema = mixed_schema();
    Rng rng(36);

    HierarchicalLossConfig cfg;  // default equal thirds
    cfg.species_exclusion = {"Acer", "Pinopsida"};
    cfg.genus_exclusion = {"Pinopsida"};

    for (int trial = 0; trial < 5; ++trial) {
        nn::Var logits = nn::make_leaf(random_tensor({6, 5}, rng, -4, 4));
        std::vector<int64_t> labels;
        for (int i = 0; i < 6; ++i) labels.push_back(rng.uniform_int(0, 4));
        const real_t v = hierarchical_loss(logits, labels, schema, tree, cfg)->value[0];
        REQUIRE(std::isfinite(v));
        REQUIRE(v >= 0.0);
    }

    nn::Var logits = nn::make_var(random_tensor({5, 5}, rng, -2, 2), true);
    const std::vector<int64_t> labels = {0, 1, 2, 3, 4};
    const real_t err = gradcheck(
        [&] { return hierarchical_loss(logits, labels, schema, tree, cfg); }, {logits},
        1e-5);
    REQUIRE(err < 1e-3);
}

TEST_CASE("hierarchical loss input validation") {
    const TaxonomyTree tree = mixed_tree();
    const ClassSchema schema = mixed_schema();
    nn::Var logits = nn::make_leaf(nn::Tensor::zeros({2, 5}));

    HierarchicalLossConfig bad_excl;
    bad_excl.species_exclusion = {"NotAClass"};
    REQUIRE_THROWS_AS(hierarchical_loss(logits, {0, 1}, schema, tree, bad_excl), Error);

    HierarchicalLossConfig cfg;
    REQUIRE_THROWS_AS(hierarchical_loss(logits, {0, 9}, schema, tree, cfg), Error);

    ClassSchema orphan = mixed_schema();
    orphan.classes.push_back("Unmapped");
    nn::Var wide = nn::make_leaf(nn::Tensor::zeros({1, 6}));
    REQUIRE_THROWS_AS(hierarchical_loss(wide, {5}, orphan, tree, cfg), Error);

    HierarchicalLossConfig neg;
    neg.w_species = -0.1;
    REQUIRE_THROWS_AS(hierarchical_loss(logits, {0, 1}, schema, tree, neg), Error);
}
