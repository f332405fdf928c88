#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <set>

#include "support/gradcheck.hpp"
#include "treeseg/sam/adapter.hpp"

using namespace treeseg;
using namespace treeseg::sam;
using Catch::Matchers::ContainsSubstring;

namespace {

nn::Tensor test_rgb(int64_t s, uint64_t seed = 11) {
    Rng rng(seed);
    nn::Tensor t({3, s, s});
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(0.0, 255.0);
    return t;
}

const char* kDir = "/tmp/treeseg_sam_test";

}  // namespace

TEST_CASE("config presets and validation") {
    const SamConfig h = SamConfig::vit_h();
    REQUIRE(h.image_size == 1024);
    REQUIRE(h.patch_size == 16);
    REQUIRE(h.grid_size() == 64);
    REQUIRE(h.mask_input_size() == 256);
    REQUIRE(h.encoder_dim == 1280);
    REQUIRE(h.encoder_depth == 32);
    REQUIRE(h.encoder_heads == 16);
    REQUIRE(h.window_size == 14);
    REQUIRE(h.global_attn_layers == std::vector<int64_t>{7, 15, 23, 31});
    REQUIRE(h.embed_dim == 256);
    REQUIRE(h.num_multimask == 3);
    REQUIRE_NOTHROW(h.validate());
    REQUIRE_NOTHROW(SamConfig::tiny().validate());

    SamConfig bad = SamConfig::tiny();
    bad.image_size = 100;
    bad.patch_size = 16;
    REQUIRE_THROWS_WITH(bad.validate(), ContainsSubstring("divisible"));
}

TEST_CASE("fourier position rows have unit sin/cos pairs") {
    Rng rng(3);
    FourierPositionEncoding pe(32, rng);
    const nn::Tensor rows = pe.encode({{0.1, 0.9}, {0.5, 0.5}, {0.0, 1.0}});
    REQUIRE(rows.dim(0) == 3);
    REQUIRE(rows.dim(1) == 32);
    for (int64_t i = 0; i < 3; ++i)
        for (int64_t j = 0; j < 16; ++j) {
            const real_t s = rows[i * 32 + j], c = rows[i * 32 + 16 + j];
            REQUIRE(s * s + c * c == Catch::Approx(1.0).margin(1e-12));
        }
    const nn::Tensor grid = pe.encode_grid(8);
    REQUIRE(grid.dim(0) == 64);
    REQUIRE(grid.dim(1) == 32);
}

TEST_CASE("windowed attention order partitions the grid") {
    // divisible grid: no padding slots
    const auto even = VitBlock::window_order(8, 4);
    REQUIRE(even.size() == 64);
    std::set<int64_t> seen(even.begin(), even.end());
    REQUIRE(seen.size() == 64);
    REQUIRE(*seen.begin() == 0);
    REQUIRE(*seen.rbegin() == 63);

    // ragged grid: every cell appears once, the rest are the sentinel slot
    const auto ragged = VitBlock::window_order(5, 4);
    REQUIRE(ragged.size() == 64);
    int64_t sentinels = 0;
    std::set<int64_t> cells;
    for (int64_t v : ragged) {
        if (v == 25) {
            ++sentinels;
        } else {
            REQUIRE(v >= 0);
            REQUIRE(v < 25);
            cells.insert(v);
        }
    }
    REQUIRE(cells.size() == 25);
    REQUIRE(sentinels == 64 - 25);
}

TEST_CASE("tiny image encoder shape, determinism, input checks") {
    const SamConfig cfg = SamConfig::tiny();
    SamModel model(cfg, 21);
    const nn::Tensor rgb = test_rgb(cfg.image_size);

    const EmbeddingMap emb = model.encode_image(rgb);
    REQUIRE(emb.feat->value.ndim() == 3);
    REQUIRE(emb.feat->value.dim(0) == cfg.embed_dim);
    REQUIRE(emb.feat->value.dim(1) == cfg.grid_size());
    REQUIRE(emb.feat->value.dim(2) == cfg.grid_size());
    REQUIRE(emb.feat->parents.empty());  // frozen forward keeps no tape

    const EmbeddingMap emb2 = model.encode_image(rgb);
    for (int64_t i = 0; i < emb.feat->value.numel(); ++i)
        REQUIRE(emb.feat->value[i] == emb2.feat->value[i]);

    SamModel twin(cfg, 21);
    REQUIRE(twin.checksum() == model.checksum());

    REQUIRE_THROWS_WITH(model.encode_image(test_rgb(cfg.image_size / 2)),
                        ContainsSubstring("encode_image"));
}

TEST_CASE("model parameters are frozen after construction") {
    SamModel model(SamConfig::tiny(), 4);
    const auto params = model.named_params();
    REQUIRE(params.size() > 20);
    for (const auto& [name, v] : params) REQUIRE(!v->requires_grad);
}

TEST_CASE("decoder output shapes") {
    const SamConfig cfg = SamConfig::tiny();
    SamModel model(cfg, 9);
    const EmbeddingMap emb = model.encode_image(test_rgb(cfg.image_size));
    const nn::Var sparse =
        model.prompt_encoder.encode_points({{32.0, 32.0}}, {true}, true);
    REQUIRE(sparse->value.dim(0) == 2);
    REQUIRE(sparse->value.dim(1) == cfg.embed_dim);

    const DecoderOutput out = model.decode(emb.feat, sparse);
    const int64_t m = cfg.num_multimask + 1, lg = 4 * cfg.grid_size();
    REQUIRE(out.mask_logits->value.ndim() == 3);
    REQUIRE(out.mask_logits->value.dim(0) == m);
    REQUIRE(out.mask_logits->value.dim(1) == lg);
    REQUIRE(out.mask_logits->value.dim(2) == lg);
    REQUIRE(out.iou_pred->value.numel() == m);
}

TEST_CASE("gradients flow through the frozen decoder into prompt inputs") {
    const SamConfig cfg = SamConfig::tiny();
    SamModel model(cfg, 13);
    const EmbeddingMap emb = model.encode_image(test_rgb(cfg.image_size));

    Rng rng(101);
    nn::Var sparse =
        nn::make_var(testing::random_tensor({2, cfg.embed_dim}, rng, -0.5, 0.5), true);
    auto f = [&]() {
        const DecoderOutput out = model.decode(emb.feat, sparse);
        return nn::add(nn::mean(out.mask_logits), nn::scale(nn::mean(out.iou_pred), 0.1));
    };
    Rng probe(55);
    const real_t err = testing::gradcheck_sampled(f, {sparse}, 12, probe, 1e-6);
    REQUIRE(err < 1e-5);

    // decoder weights themselves stay out of the tape
    REQUIRE(model.decoder.named_params().size() > 0);
    for (const auto& [name, v] : model.decoder.named_params())
        REQUIRE(v->grad.numel() == 0);
}

TEST_CASE("prompt set validation") {
    PromptSet ps;
    REQUIRE_THROWS_WITH(ps.add_box({10, 10, 10, 40}),
                        ContainsSubstring("positive area"));
    ps.add_point({80.0, 10.0});
    REQUIRE_THROWS_WITH(ps.validate(64), ContainsSubstring("point outside"));

    PromptSet boxed;
    boxed.add_box({0, 0, 65, 10});
    REQUIRE_THROWS_WITH(boxed.validate(64), ContainsSubstring("box outside"));

    const PromptSet grid = automatic_grid_prompts(3, 64);
    REQUIRE(grid.points.size() == 9);
    REQUIRE_NOTHROW(grid.validate(64));
    REQUIRE(grid.points[0].p.x == Catch::Approx(64.0 / 6));
    REQUIRE(grid.points[0].p.y == Catch::Approx(64.0 / 6));
    for (const auto& pp : grid.points) REQUIRE(pp.positive);
    REQUIRE_THROWS_WITH(automatic_grid_prompts(0, 64), ContainsSubstring(">= 1"));
}

TEST_CASE("mock segmenter geometry and determinism") {
    MockSegmenter mock(64);
    const nn::Tensor rgb = test_rgb(64);

    PromptSet ps;
    ps.add_point({32.0, 32.0});
    ps.add_box({10, 10, 20, 20});
    auto preds = mock.segment(rgb, ps);
    REQUIRE(preds.size() == 2);

    const real_t r = 0.12 * 64;
    const real_t disk_area = std::numbers::pi_v<real_t> * r * r;
    REQUIRE((real_t)preds[0].mask.count() > 0.8 * disk_area);
    REQUIRE((real_t)preds[0].mask.count() < 1.2 * disk_area);
    REQUIRE(preds[0].mask.at(32, 32) == 1);
    REQUIRE(preds[0].mask.at(0, 0) == 0);
    REQUIRE(preds[1].mask.count() == 100);

    auto again = mock.segment(rgb, ps);
    for (size_t i = 0; i < preds.size(); ++i) {
        REQUIRE(preds[i].predicted_iou == again[i].predicted_iou);
        REQUIRE(preds[i].predicted_iou >= 0.55);
        REQUIRE(preds[i].predicted_iou <= 0.95);
        REQUIRE(preds[i].mask.data == again[i].mask.data);
    }
    REQUIRE(preds[0].predicted_iou != preds[1].predicted_iou);
}

TEST_CASE("automatic pipeline keeps disjoint grid masks") {
    MockSegmenter mock(64);
    const Detections dets = run_sam_automatic(mock, test_rgb(64), 4);
    REQUIRE(dets.size() == 16);
    for (const auto& d : dets) {
        REQUIRE(d.class_id == 0);
        REQUIRE(d.has_mask());
        REQUIRE(d.score >= 0.55);
        REQUIRE(d.score <= 0.95);
        REQUIRE(d.mask_score.has_value());
        REQUIRE(*d.mask_score == d.score);
        REQUIRE(d.box.area() > 0);
    }
}

TEST_CASE("automatic pipeline suppresses overlapping masks") {
    MockSegmenter mock(64, 0.3);
    const Detections dets = run_sam_automatic(mock, test_rgb(64), 8);
    REQUIRE(!dets.empty());
    REQUIRE(dets.size() < 64);
    for (size_t i = 0; i < dets.size(); ++i)
        for (size_t j = i + 1; j < dets.size(); ++j)
            REQUIRE(mask_iou(dets[i].mask, dets[j].mask) <= 0.5);
}

TEST_CASE("dsm prompt pipeline") {
    MockSegmenter mock(64);
    const nn::Tensor rgb = test_rgb(64);
    PeakConfig peak_cfg;
    peak_cfg.min_distance = 5;

    REQUIRE_THROWS_WITH(run_sam_dsm_prompts(mock, rgb, nullptr, peak_cfg),
                        ContainsSubstring("no DSM"));

    DsmChannel flat(nn::Tensor({64, 64}));
    for (int64_t i = 0; i < 64 * 64; ++i) flat.values[i] = 7.5;
    REQUIRE(run_sam_dsm_prompts(mock, rgb, &flat, peak_cfg).empty());

    DsmChannel bumps(nn::Tensor({64, 64}));
    for (int64_t y = 0; y < 64; ++y)
        for (int64_t x = 0; x < 64; ++x) {
            auto bump = [&](real_t cx, real_t cy) {
                const real_t dx = (real_t)x - cx, dy = (real_t)y - cy;
                return std::exp(-(dx * dx + dy * dy) / 60.0);
            };
            bumps.values[y * 64 + x] = 10 * bump(16, 16) + 8 * bump(48, 48);
        }
    const Detections dets = run_sam_dsm_prompts(mock, rgb, &bumps, peak_cfg);
    REQUIRE(dets.size() == 2);
    for (const auto& d : dets) {
        REQUIRE(d.class_id == 0);
        REQUIRE(d.has_mask());
    }
    // one detection per treetop, in whichever score order NMS produced
    const bool first_covers_16 = dets[0].mask.at(16, 16) == 1;
    REQUIRE(dets[first_covers_16 ? 0 : 1].mask.at(16, 16) == 1);
    REQUIRE(dets[first_covers_16 ? 1 : 0].mask.at(48, 48) == 1);
}

namespace {

// segmenter with a pinned quality score so score arithmetic is checkable
struct FixedIouSegmenter : Segmenter {
    int64_t size;
    real_t iou;
    bool return_empty = false;

    FixedIouSegmenter(int64_t s, real_t iou_) : size(s), iou(iou_) {}

    int64_t tile_size() const override { return size; }

    std::vector<MaskPrediction> segment(const nn::Tensor&,
                                        const PromptSet& prompts) override {
        if (return_empty) return {};
        std::vector<MaskPrediction> out;
        for (const auto& b : prompts.boxes) {
            BinaryMask m(size, size);
            for (int64_t y = (int64_t)b.y0; y < (int64_t)b.y1; ++y)
                for (int64_t x = (int64_t)b.x0; x < (int64_t)b.x1; ++x) m.at(y, x) = 1;
            out.push_back({std::move(m), iou});
        }
        return out;
    }
};

}  // namespace

TEST_CASE("detector prompted segmentation") {
    FixedIouSegmenter seg(64, 0.6);
    const nn::Tensor rgb = test_rgb(64);

    Detection din;
    din.box = {8, 8, 24, 24};
    din.score = 0.8;
    din.class_id = 3;
    din.image_id = 42;

    SECTION("empty input gives empty output") {
        REQUIRE(run_detector_prompted(seg, rgb, {}, DetPromptMode::boxes,
                                      DetScoreMode::box)
                    .empty());
    }

    SECTION("box score mode passes the detector score through") {
        const Detections out = run_detector_prompted(seg, rgb, {din},
                                                     DetPromptMode::boxes,
                                                     DetScoreMode::box);
        REQUIRE(out.size() == 1);
        REQUIRE(out[0].score == Catch::Approx(0.8));
        REQUIRE(out[0].class_id == 3);
        REQUIRE(out[0].image_id == 42);
        REQUIRE(out[0].has_mask());
        REQUIRE(out[0].mask.count() == 16 * 16);
        REQUIRE(out[0].mask_score.has_value());
        REQUIRE(*out[0].mask_score == Catch::Approx(0.6));
    }

    SECTION("averaged score mode blends detector and mask scores") {
        const Detections out = run_detector_prompted(seg, rgb, {din},
                                                     DetPromptMode::boxes,
                                                     DetScoreMode::box_mask_average);
        REQUIRE(out.size() == 1);
        REQUIRE(out[0].score == Catch::Approx(0.7));
    }

    SECTION("instances map one-to-one in input order") {
        Detections batch;
        for (int64_t i = 0; i < 3; ++i) {
            Detection d = din;
            d.class_id = i;
            d.box = {(real_t)(4 + 12 * i), 4.0, (real_t)(12 + 12 * i), 12.0};
            batch.push_back(d);
        }
        const Detections out = run_detector_prompted(seg, rgb, batch,
                                                     DetPromptMode::boxes,
                                                     DetScoreMode::box);
        REQUIRE(out.size() == 3);
        for (int64_t i = 0; i < 3; ++i) REQUIRE(out[(size_t)i].class_id == i);
    }

    SECTION("masks are required by the boxes+masks mode") {
        REQUIRE_THROWS_WITH(run_detector_prompted(seg, rgb, {din},
                                                  DetPromptMode::boxes_masks,
                                                  DetScoreMode::box),
                            ContainsSubstring("needs detection masks"));
        Detection with_mask = din;
        with_mask.mask = BinaryMask(64, 64);
        with_mask.mask.at(10, 10) = 1;
        REQUIRE_NOTHROW(run_detector_prompted(seg, rgb, {with_mask},
                                              DetPromptMode::boxes_masks,
                                              DetScoreMode::box));
    }

    SECTION("an instance whose prompt yields nothing keeps its input form") {
        seg.return_empty = true;
        const Detections out = run_detector_prompted(seg, rgb, {din},
                                                     DetPromptMode::boxes,
                                                     DetScoreMode::box_mask_average);
        REQUIRE(out.size() == 1);
        REQUIRE(out[0].box.x0 == Catch::Approx(8));
        REQUIRE(out[0].box.x1 == Catch::Approx(24));
        REQUIRE(out[0].score == Catch::Approx(0.4));  // (0.8 + 0) / 2
        REQUIRE(!out[0].mask_score.has_value());
    }
}

TEST_CASE("sam segmenter end to end on the tiny preset") {
    const SamConfig cfg = SamConfig::tiny();
    SamModel model(cfg, 77);
    SamSegmenter seg(model);
    REQUIRE(seg.tile_size() == cfg.image_size);
    const nn::Tensor rgb = test_rgb(cfg.image_size);

    PromptSet ps;
    ps.add_point({32.0, 32.0});
    ps.add_box({16, 16, 48, 48});

    const auto preds = seg.segment(rgb, ps);
    REQUIRE(preds.size() <= 2);
    for (const auto& p : preds) {
        REQUIRE(p.mask.height == cfg.image_size);
        REQUIRE(p.mask.width == cfg.image_size);
        REQUIRE(p.mask.count() > 0);
        REQUIRE(p.predicted_iou >= 0.0);
        REQUIRE(p.predicted_iou <= 1.0);
    }

    const auto again = seg.segment(rgb, ps);
    REQUIRE(again.size() == preds.size());
    for (size_t i = 0; i < preds.size(); ++i) {
        REQUIRE(preds[i].mask.data == again[i].mask.data);
        REQUIRE(preds[i].predicted_iou == again[i].predicted_iou);
    }

    SECTION("a dense mask prompt rides along every sparse prompt") {
        PromptSet with_mask = ps;
        with_mask.dense_mask = BinaryMask(40, 40);
        for (int64_t y = 15; y < 25; ++y)
            for (int64_t x = 15; x < 25; ++x) with_mask.dense_mask->at(y, x) = 1;
        const auto dense_preds = seg.segment(rgb, with_mask);
        REQUIRE(dense_preds.size() <= 2);
        for (const auto& p : dense_preds) {
            REQUIRE(p.mask.height == cfg.image_size);
            REQUIRE(p.mask.count() > 0);
        }
    }

    SECTION("empty prompt sets are rejected") {
        REQUIRE_THROWS_WITH(seg.segment(rgb, PromptSet{}),
                            ContainsSubstring("empty prompt set"));
    }
}

TEST_CASE("checkpoint roundtrip restores the exact model") {
    namespace fs = std::filesystem;
    fs::create_directories(kDir);
    const std::string path = std::string(kDir) + "/tiny_sam.ckpt";

    const SamConfig cfg = SamConfig::tiny();
    SamModel model(cfg, 123);
    model.save(path);

    SamModel other(cfg, 999);
    REQUIRE(other.checksum() != model.checksum());
    other.load(path);
    REQUIRE(other.checksum() == model.checksum());
    for (const auto& [name, v] : other.named_params()) REQUIRE(!v->requires_grad);

    const nn::Tensor rgb = test_rgb(cfg.image_size);
    const EmbeddingMap a = model.encode_image(rgb);
    const EmbeddingMap b = other.encode_image(rgb);
    for (int64_t i = 0; i < a.feat->value.numel(); ++i)
        REQUIRE(a.feat->value[i] == b.feat->value[i]);
}
