#include <catch2/catch_amalgamated.hpp>

#include "support/fixtures.hpp"
#include "support/oracles.hpp"
#include "treeseg/inference/nms.hpp"

using namespace treeseg;
using namespace treeseg::testing;

namespace {

Detection box_det(real_t x0, real_t y0, real_t x1, real_t y1, real_t score,
                  int64_t cls = 0) {
    Detection d;
    d.box = {x0, y0, x1, y1};
    d.score = score;
    d.class_id = cls;
    return d;
}

bool same_dets(const Detections& a, const Detections& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i].score != b[i].score || a[i].class_id != b[i].class_id) return false;
        if (a[i].box.x0 != b[i].box.x0 || a[i].box.y1 != b[i].box.y1) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("duplicate same-class boxes keep only the top score") {
    NmsConfig cfg;
    cfg.score_threshold = 0.0;
    Detections in = {box_det(0, 0, 10, 10, 0.9), box_det(0, 0, 10, 10, 0.8)};
    const Detections out = nms(in, cfg);
    REQUIRE(out.size() == 1);
    REQUIRE(out[0].score == 0.9);
}

TEST_CASE("class-aware keeps cross-class duplicates, agnostic does not") {
    Detections in = {box_det(0, 0, 10, 10, 0.9, 0), box_det(0, 0, 10, 10, 0.8, 1)};
    NmsConfig aware;
    aware.score_threshold = 0.0;
    REQUIRE(nms(in, aware).size() == 2);

    NmsConfig agnostic = aware;
    agnostic.class_agnostic = true;
    const Detections out = nms(in, agnostic);
    REQUIRE(out.size() == 1);
    REQUIRE(out[0].class_id == 0);
}

TEST_CASE("score threshold drops weak detections") {
    NmsConfig cfg;  // default threshold 0.5
    Detections in = {box_det(0, 0, 10, 10, 0.4), box_det(20, 20, 30, 30, 0.6)};
    const Detections out = nms(in, cfg);
    REQUIRE(out.size() == 1);
    REQUIRE(out[0].score == 0.6);
}

TEST_CASE("nms is idempotent and output is an input subset") {
    Rng rng(7);
    NmsConfig cfg;
    cfg.score_threshold = 0.2;
    cfg.iou_threshold = 0.4;
    for (int trial = 0; trial < 20; ++trial) {
        Detections in;
        const int64_t n = rng.uniform_int(1, 30);
        for (int64_t i = 0; i < n; ++i) {
            const real_t x0 = rng.uniform(0, 50), y0 = rng.uniform(0, 50);
            in.push_back(box_det(x0, y0, x0 + rng.uniform(2, 20), y0 + rng.uniform(2, 20),
                                 rng.uniform(0, 1), rng.uniform_int(0, 2)));
        }
        const Detections once = nms(in, cfg);
        const Detections twice = nms(once, cfg);
        REQUIRE(same_dets(once, twice));
        for (const auto& d : once) {
            bool found = false;
            for (const auto& s : in)
                if (s.score == d.score && s.box.x0 == d.box.x0 && s.box.y0 == d.box.y0 &&
                    s.class_id == d.class_id)
                    found = true;
            REQUIRE(found);
        }
    }
}

TEST_CASE("nms matches brute-force reference on random fixtures") {
    Rng rng(8);
    for (int trial = 0; trial < 100; ++trial) {
        Detections in;
        const int64_t n = rng.uniform_int(1, 50);
        const bool use_masks = trial % 2 == 1;
        for (int64_t i = 0; i < n; ++i) {
            if (use_masks) {
                Detection d = make_det(random_mask(16, 16, rng),
                                       rng.bernoulli(0.25) ? 0.5 : rng.uniform(0, 1),
                                       rng.uniform_int(0, 2), 0);
                in.push_back(std::move(d));
            } else {
                const real_t x0 = rng.uniform(0, 40), y0 = rng.uniform(0, 40);
                in.push_back(box_det(x0, y0, x0 + rng.uniform(1, 15),
                                     y0 + rng.uniform(1, 15),
                                     rng.bernoulli(0.25) ? 0.5 : rng.uniform(0, 1),
                                     rng.uniform_int(0, 2)));
            }
        }
        NmsConfig cfg;
        cfg.score_threshold = rng.uniform(0.0, 0.5);
        cfg.iou_threshold = rng.uniform(0.2, 0.8);
        cfg.class_agnostic = rng.bernoulli(0.5);
        cfg.overlap_basis = use_masks ? OverlapBasis::mask : OverlapBasis::box;
        const Detections got = nms(in, cfg);
        const Detections want = ref_nms(in, cfg);
        REQUIRE(same_dets(got, want));
    }
}

TEST_CASE("invalid thresholds rejected") {
    NmsConfig cfg;
    cfg.iou_threshold = 1.5;
    REQUIRE_THROWS_AS(nms({}, cfg), Error);
}
