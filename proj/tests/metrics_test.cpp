#include <catch2/catch_amalgamated.hpp>

#include "support/fixtures.hpp"
#include "support/oracles.hpp"
#include "treeseg/metrics.hpp"

using namespace treeseg;
using namespace treeseg::testing;

TEST_CASE("perfect single prediction gives AP 1 at all thresholds") {
    Rng rng(1);
    BinaryMask m = random_mask(16, 16, rng);
    if (m.count() == 0) m.at(3, 3) = 1;
    Detections gts = {make_det(m, 1.0, 0, 0)};
    Detections preds = {make_det(m, 0.9, 0, 0)};
    const auto ap = average_precision(preds, gts, 0);
    REQUIRE(ap.has_value());
    REQUIRE(*ap == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("no predictions gives AP 0; absent class is undefined") {
    Rng rng(2);
    Detections gts = {make_det(random_mask(16, 16, rng), 1.0, 0, 0)};
    const auto ap = average_precision({}, gts, 0);
    REQUIRE(ap.has_value());
    REQUIRE(*ap == 0.0);
    REQUIRE_FALSE(average_precision({}, gts, 7).has_value());
}

TEST_CASE("three predictions, IoUs {1,1,0.3}, single threshold") {
    // two exact matches and one weak overlap, descending scores: documented
    // closed form is precision 1 up to recall 2/3, zero beyond
    BinaryMask a(16, 16), b(16, 16), c(16, 16), weak(16, 16);
    for (int64_t y = 0; y < 4; ++y)
        for (int64_t x = 0; x < 4; ++x) a.at(y, x) = 1;
    for (int64_t y = 6; y < 10; ++y)
        for (int64_t x = 6; x < 10; ++x) b.at(y, x) = 1;
    for (int64_t y = 12; y < 16; ++y)
        for (int64_t x = 12; x < 16; ++x) c.at(y, x) = 1;
    // weak: 3 of c's 16 pixels plus 3 stray -> IoU well below 0.5
    weak.at(12, 12) = weak.at(12, 13) = weak.at(13, 12) = 1;
    weak.at(0, 15) = weak.at(1, 15) = weak.at(2, 15) = 1;

    Detections gts = {make_det(a, 1, 0, 0), make_det(b, 1, 0, 0), make_det(c, 1, 0, 0)};
    Detections preds = {make_det(a, 0.9, 0, 0), make_det(b, 0.8, 0, 0),
                        make_det(weak, 0.7, 0, 0)};
    ApOptions opt;
    opt.thresholds = single_iou_threshold();
    const auto ap = average_precision(preds, gts, 0, opt);
    REQUIRE(ap.has_value());
    // 101-point interpolation: precision 1.0 for the 67 recall points <= 2/3
    REQUIRE(*ap == Catch::Approx(67.0 / 101.0).margin(1e-12));

    // exhaustive assignment enumeration: best achievable TP count at 0.5 is 2
    int64_t best_tp = 0;
    for (int m0 = -1; m0 < 3; ++m0)
        for (int m1 = -1; m1 < 3; ++m1)
            for (int m2 = -1; m2 < 3; ++m2) {
                if (m0 >= 0 && (m0 == m1 || m0 == m2)) continue;
                if (m1 >= 0 && m1 == m2) continue;
                const Detections& g = gts;
                int64_t tp = 0;
                const int ms[3] = {m0, m1, m2};
                for (int p = 0; p < 3; ++p)
                    if (ms[p] >= 0 &&
                        ref_mask_iou(preds[(size_t)p].mask, g[(size_t)ms[p]].mask) >= 0.5)
                        ++tp;
                best_tp = std::max(best_tp, tp);
            }
    REQUIRE(best_tp == 2);
}

TEST_CASE("AP matches the brute-force reference on 200 random fixtures") {
    Rng rng(42);
    const auto thresholds = coco_iou_thresholds();
    for (int trial = 0; trial < 200; ++trial) {
        ApFixture f = random_ap_fixture(rng);
        for (int64_t cls = 0; cls < 2; ++cls) {
            const auto got = average_precision(f.preds, f.gts, cls);
            const auto want = ref_average_precision(f.preds, f.gts, cls, thresholds);
            REQUIRE(got.has_value() == want.has_value());
            if (got) REQUIRE(*got == *want);  // exact
        }
        ApOptions single;
        single.thresholds = single_iou_threshold();
        const auto got1 = average_precision(f.preds, f.gts, 0, single);
        const auto want1 = ref_average_precision(f.preds, f.gts, 0, {0.5});
        if (got1) REQUIRE(*got1 == *want1);
    }
}

TEST_CASE("mean IoU: reference match and false-positive insensitivity") {
    Rng rng(43);
    for (int trial = 0; trial < 100; ++trial) {
        ApFixture f = random_ap_fixture(rng);
        const real_t base = mean_iou(f.preds, f.gts);
        REQUIRE(base == ref_mean_iou(f.preds, f.gts));  // exact

        Detections more = f.preds;
        for (int extra = 0; extra < 3; ++extra)
            more.push_back(make_det(random_mask(16, 16, rng), rng.uniform(0.0, 1.0),
                                    rng.uniform_int(0, 1), rng.uniform_int(0, 1)));
        REQUIRE(mean_iou(more, f.gts) >= base);
    }
    REQUIRE_THROWS_AS(mean_iou({}, {}), Error);
}

TEST_CASE("mean IoU hand case: one match at 0.8, one unmatched") {
    BinaryMask g1(16, 16), g2(16, 16), p1(16, 16);
    for (int64_t x = 0; x < 10; ++x) g1.at(0, x) = 1;
    for (int64_t x = 0; x < 8; ++x) p1.at(0, x) = 1;  // IoU 8/10
    for (int64_t x = 0; x < 5; ++x) g2.at(10, x) = 1;
    const Detections gts = {make_det(g1, 1, 0, 0), make_det(g2, 1, 0, 0)};
    const Detections preds = {make_det(p1, 0.9, 0, 0)};
    REQUIRE(mean_iou(preds, gts) == Catch::Approx(0.4).margin(1e-12));
}

TEST_CASE("aggregation: mAP, wmAP, convexity") {
    std::map<int64_t, real_t> aps = {{0, 0.5}, {1, 1.0}};
    REQUIRE(aggregate_ap(aps) == Catch::Approx(0.75).margin(1e-15));

    std::map<int64_t, real_t> w = {{0, 0.9}, {1, 0.1}};
    REQUIRE(aggregate_ap(aps, &w) == Catch::Approx(0.55).margin(1e-15));

    std::map<int64_t, real_t> uniform = {{0, 0.5}, {1, 0.5}};
    REQUIRE(std::abs(aggregate_ap(aps, &uniform) - aggregate_ap(aps)) < 1e-12);

    std::map<int64_t, real_t> missing = {{0, 1.0}};
    REQUIRE_THROWS_AS(aggregate_ap(aps, &missing), Error);

    Rng rng(44);
    for (int trial = 0; trial < 50; ++trial) {
        std::map<int64_t, real_t> pc, wt;
        real_t total = 0, lo = 1, hi = 0;
        const int64_t n = rng.uniform_int(1, 6);
        for (int64_t c = 0; c < n; ++c) {
            pc[c] = rng.uniform(0.0, 1.0);
            wt[c] = rng.uniform(0.01, 1.0);
            total += wt[c];
            lo = std::min(lo, pc[c]);
            hi = std::max(hi, pc[c]);
        }
        for (auto& [c, v] : wt) v /= total;
        const real_t wm = aggregate_ap(pc, &wt);
        REQUIRE(wm >= lo - 1e-12);
        REQUIRE(wm <= hi + 1e-12);

        std::map<int64_t, real_t> uni;
        for (auto& [c, v] : pc) uni[c] = 1.0 / (real_t)n;
        REQUIRE(std::abs(aggregate_ap(pc, &uni) - aggregate_ap(pc)) < 1e-12);
    }
}

TEST_CASE("single-class collapse ignores class errors") {
    Rng rng(45);
    BinaryMask m1 = random_mask(16, 16, rng), m2 = random_mask(16, 16, rng);
    if (m1.count() == 0) m1.at(1, 1) = 1;
    if (m2.count() == 0) m2.at(2, 2) = 1;
    Detections gts = {make_det(m1, 1, 0, 0), make_det(m2, 1, 1, 0)};
    // geometrically perfect but classes swapped
    Detections preds = {make_det(m1, 0.9, 1, 0), make_det(m2, 0.8, 0, 0)};
    const auto [sc_map, sc_miou] = single_class_collapse(preds, gts);
    REQUIRE(sc_map == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(sc_miou == Catch::Approx(1.0).margin(1e-12));

    const auto [em, ei] = single_class_collapse({}, gts);
    REQUIRE(em == 0.0);
    REQUIRE(ei == 0.0);
}

TEST_CASE("removing a pure false positive never lowers AP") {
    Rng rng(46);
    for (int trial = 0; trial < 50; ++trial) {
        ApFixture f = random_ap_fixture(rng);
        // disjoint-from-everything mask: guaranteed FP
        BinaryMask fp(16, 16);
        bool free_pixel = false;
        for (int64_t y = 0; y < 16 && !free_pixel; ++y)
            for (int64_t x = 0; x < 16 && !free_pixel; ++x) {
                bool used = false;
                for (const auto& g : f.gts)
                    if (g.mask.at(y, x)) used = true;
                for (const auto& p : f.preds)
                    if (p.mask.at(y, x)) used = true;
                if (!used) {
                    fp.at(y, x) = 1;
                    free_pixel = true;
                }
            }
        if (!free_pixel) continue;
        Detections with_fp = f.preds;
        with_fp.push_back(make_det(fp, rng.uniform(0.0, 1.0), 0, f.gts[0].image_id));
        const auto base = average_precision(f.preds, f.gts, 0);
        const auto worse = average_precision(with_fp, f.gts, 0);
        if (base && worse) REQUIRE(*worse <= *base + 1e-12);
    }
}

TEST_CASE("evaluate produces a coherent report") {
    Rng rng(47);
    ApFixture f = random_ap_fixture(rng, 4, 4, 2);
    std::map<int64_t, real_t> weights = {{0, 0.7}, {1, 0.3}};
    MetricsReport r = evaluate(f.preds, f.gts, {0, 1, 9}, &weights);
    REQUIRE(std::find(r.undefined_classes.begin(), r.undefined_classes.end(), 9) !=
            r.undefined_classes.end());
    for (const auto& [c, ap] : r.per_class_ap) {
        REQUIRE(ap >= 0.0);
        REQUIRE(ap <= 1.0);
    }
    REQUIRE(r.miou >= 0.0);
    REQUIRE(r.miou <= 1.0);
}

TEST_CASE("seed statistics") {
    const SeedStats s = seed_stats({0.5, 0.7, 0.6});
    REQUIRE(s.mean == Catch::Approx(0.6).margin(1e-12));
    // sample sd = 0.1, se = 0.1/sqrt(3)
    REQUIRE(s.stderr_mean == Catch::Approx(0.1 / std::sqrt(3.0)).margin(1e-12));
    REQUIRE(seed_stats({1.0}).stderr_mean == 0.0);
    REQUIRE_THROWS_AS(seed_stats({}), Error);
}
