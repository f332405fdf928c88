#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "third_party/nlohmann/json.hpp"
#include "treeseg/detectors/rcnn.hpp"
#include "treeseg/nn/optim.hpp"

using namespace treeseg;
using namespace treeseg::detectors;
using Catch::Matchers::ContainsSubstring;

namespace {

nn::Tensor test_rgb(int64_t s, uint64_t seed = 5) {
    Rng rng(seed);
    nn::Tensor t({3, s, s});
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(0.0, 255.0);
    return t;
}

BinaryMask rect_mask(int64_t s, const Box& b) {
    BinaryMask m(s, s);
    for (int64_t y = (int64_t)b.y0; y < (int64_t)b.y1; ++y)
        for (int64_t x = (int64_t)b.x0; x < (int64_t)b.x1; ++x) m.at(y, x) = 1;
    return m;
}

Sample two_tree_sample(int64_t s = 64, bool with_dsm = false) {
    Sample sample;
    sample.rgb = test_rgb(s);
    sample.image_id = 3;

    Instance a;
    a.box = {10, 12, 30, 32};
    a.class_id = 0;
    a.mask = rect_mask(s, a.box);
    Instance b;
    b.box = {38, 36, 58, 56};
    b.class_id = 1;
    b.mask = rect_mask(s, b.box);
    sample.instances = {a, b};

    if (with_dsm) {
        nn::Tensor v({s, s});
        for (int64_t y = 0; y < s; ++y)
            for (int64_t x = 0; x < s; ++x) {
                const real_t da = std::hypot((real_t)x - 20, (real_t)y - 22);
                const real_t db = std::hypot((real_t)x - 48, (real_t)y - 46);
                v[y * s + x] = 12.0 * std::exp(-da * da / 60.0) +
                               10.0 * std::exp(-db * db / 60.0);
            }
        sample.dsm = DsmChannel(std::move(v));
    }
    return sample;
}

const nn::Var* find_param(const nn::NamedParams& params, const std::string& name) {
    for (const auto& [n, v] : params)
        if (n == name) return &v;
    return nullptr;
}

const char* kDir = "/tmp/treeseg_detectors_test";

}  // namespace

TEST_CASE("detector config validation") {
    DetectorConfig tiny = DetectorConfig::tiny(3);
    REQUIRE_NOTHROW(tiny.validate());
    REQUIRE(tiny.stride() == 8);
    REQUIRE(tiny.feature_channels() == 64);

    REQUIRE(channels_for_mode(DsmInputMode::none) == 3);
    REQUIRE(channels_for_mode(DsmInputMode::stack) == 4);
    REQUIRE(channels_for_mode(DsmInputMode::gradients) == 5);
    REQUIRE(channels_for_mode(DsmInputMode::encoder) == 4);

    for (DsmInputMode mode : {DsmInputMode::stack, DsmInputMode::gradients,
                              DsmInputMode::encoder})
        REQUIRE_NOTHROW(DetectorConfig::with_dsm(tiny, mode).validate());

    DetectorConfig bad = tiny;
    bad.in_channels = 4;
    REQUIRE_THROWS_WITH(bad.validate(), ContainsSubstring("inconsistent"));

    bad = DetectorConfig::with_dsm(tiny, DsmInputMode::encoder);
    bad.dsm_encoder_stack = false;
    REQUIRE_THROWS_WITH(bad.validate(), ContainsSubstring("inconsistent"));

    bad = tiny;
    bad.image_size = 60;
    REQUIRE_THROWS_WITH(bad.validate(), ContainsSubstring("divisible"));

    bad = tiny;
    bad.num_classes = 0;
    REQUIRE_THROWS_WITH(bad.validate(), ContainsSubstring("num_classes"));
}

TEST_CASE("anchor grid layout") {
    const auto anchors = make_anchor_grid(2, 2, 8.0, {16.0}, {1.0, 4.0});
    REQUIRE(anchors.size() == 8);

    // anchor-major: first 4 entries are ratio 1.0 over the 2x2 grid
    REQUIRE(anchors[0].x0 == Catch::Approx(4.0 - 8.0));
    REQUIRE(anchors[0].y0 == Catch::Approx(4.0 - 8.0));
    REQUIRE(anchors[0].x1 == Catch::Approx(4.0 + 8.0));
    REQUIRE(anchors[1].x0 == Catch::Approx(12.0 - 8.0));

    // ratio 4 halves the width and doubles the height
    const Box& tall = anchors[4];
    REQUIRE(tall.width() == Catch::Approx(8.0));
    REQUIRE(tall.height() == Catch::Approx(32.0));
    REQUIRE((tall.x0 + tall.x1) / 2 == Catch::Approx(4.0));
}

TEST_CASE("box delta encode and decode invert each other") {
    Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        const real_t ax = rng.uniform(5, 40), ay = rng.uniform(5, 40);
        const Box anchor{ax, ay, ax + rng.uniform(4, 20), ay + rng.uniform(4, 20)};
        const real_t tx = rng.uniform(5, 40), ty = rng.uniform(5, 40);
        const Box target{tx, ty, tx + rng.uniform(4, 20), ty + rng.uniform(4, 20)};

        const auto d = encode_box_deltas(anchor, target);
        const Box rt = decode_box_deltas(anchor, d[0], d[1], d[2], d[3], 1000.0);
        REQUIRE(std::abs(rt.x0 - target.x0) < 1e-9);
        REQUIRE(std::abs(rt.y0 - target.y0) < 1e-9);
        REQUIRE(std::abs(rt.x1 - target.x1) < 1e-9);
        REQUIRE(std::abs(rt.y1 - target.y1) < 1e-9);
    }

    // decode clips to the image and caps the size growth
    const Box anchor{0, 0, 10, 10};
    const Box grown = decode_box_deltas(anchor, 0, 0, 50.0, 0, 64.0);
    REQUIRE(grown.x1 <= 64.0);
    REQUIRE(grown.width() <= 10.0 * std::exp(4.0) + 1e-9);
}

TEST_CASE("box matching thresholds") {
    const std::vector<Box> cands = {{0, 0, 10, 10}, {20, 20, 30, 30}, {0, 0, 7, 10}};
    const std::vector<Box> gts = {{0, 0, 10, 10}};

    const BoxMatch m = match_boxes(cands, gts, 0.9, 0.3, false);
    REQUIRE(m.label[0] == 1);   // IoU 1.0
    REQUIRE(m.gt_index[0] == 0);
    REQUIRE(m.label[1] == 0);   // IoU 0
    REQUIRE(m.label[2] == -1);  // IoU 0.7: between thresholds

    // force_best promotes the best candidate even below the positive bar
    const std::vector<Box> off = {{0, 0, 7, 10}, {20, 20, 30, 30}};
    const BoxMatch f = match_boxes(off, gts, 0.9, 0.3, true);
    REQUIRE(f.label[0] == 1);
    REQUIRE(f.gt_index[0] == 0);

    const BoxMatch none = match_boxes({}, gts, 0.5, 0.5, true);
    REQUIRE(none.label.empty());
}

TEST_CASE("greedy box nms matches a reference") {
    Rng rng(31);
    std::vector<Box> boxes;
    std::vector<real_t> scores;
    for (int i = 0; i < 60; ++i) {
        const real_t x = rng.uniform(0, 50), y = rng.uniform(0, 50);
        boxes.push_back({x, y, x + rng.uniform(5, 25), y + rng.uniform(5, 25)});
        scores.push_back(rng.uniform(0.0, 1.0));
    }

    const auto kept = box_nms_indices(boxes, scores, 0.5, 1000);

    std::vector<int64_t> order(boxes.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int64_t a, int64_t b) { return scores[a] > scores[b]; });
    std::vector<int64_t> expect;
    for (int64_t i : order) {
        bool ok = true;
        for (int64_t k : expect)
            if (box_iou(boxes[(size_t)i], boxes[(size_t)k]) > 0.5) ok = false;
        if (ok) expect.push_back(i);
    }
    REQUIRE(kept == expect);

    const auto capped = box_nms_indices(boxes, scores, 0.5, 3);
    REQUIRE(capped.size() == std::min<size_t>(3, expect.size()));
    for (size_t i = 0; i < capped.size(); ++i) REQUIRE(capped[i] == expect[i]);
}

TEST_CASE("pretrained surgery keeps the rgb slice bitwise") {
    DetectorConfig c3 = DetectorConfig::tiny(2);
    c3.pretrained_backbone = true;
    DetectorConfig c4 = DetectorConfig::with_dsm(c3, DsmInputMode::stack);

    const DetectorModel m3(c3, 900);
    const DetectorModel m4(c4, 901);

    const nn::Tensor pre = pretrained_conv1_weight(c3.backbone_base, 7);
    const nn::Tensor& w3 = m3.backbone.conv1.weight->value;
    const nn::Tensor& w4 = m4.backbone.conv1.weight->value;

    for (int64_t o = 0; o < c3.backbone_base; ++o)
        for (int64_t i = 0; i < 3 * 49; ++i) {
            REQUIRE(w3[(o * 3) * 49 + i] == pre[(o * 3) * 49 + i]);
            REQUIRE(w4[(o * 4) * 49 + i] == pre[(o * 3) * 49 + i]);
        }

    const nn::Tensor bias = pretrained_conv1_bias(c3.backbone_base, 7);
    for (int64_t o = 0; o < c3.backbone_base; ++o) {
        REQUIRE(m3.backbone.conv1.bias->value[o] == bias[o]);
        REQUIRE(m4.backbone.conv1.bias->value[o] == bias[o]);
    }

    // the fresh fourth-channel slice is not a copy of anything pretrained
    bool differs = false;
    for (int64_t o = 0; o < c3.backbone_base && !differs; ++o)
        for (int64_t i = 0; i < 49 && !differs; ++i)
            if (w4[(o * 4 + 3) * 49 + i] != pre[(o * 3) * 49 + i]) differs = true;
    REQUIRE(differs);

    // without the flag, conv1 ignores the pretrained stream entirely
    DetectorConfig scratch = DetectorConfig::tiny(2);
    const DetectorModel ms(scratch, 900);
    bool any_diff = false;
    for (int64_t i = 0; i < pre.numel() && !any_diff; ++i)
        if (ms.backbone.conv1.weight->value[i] != pre[i]) any_diff = true;
    REQUIRE(any_diff);
}

TEST_CASE("zero fourth channel reproduces the rgb detector") {
    DetectorConfig c3 = DetectorConfig::tiny(2);
    c3.pretrained_backbone = true;
    DetectorConfig c4 = DetectorConfig::with_dsm(c3, DsmInputMode::stack);

    const DetectorModel m3(c3, 4021);
    const DetectorModel m4(c4, 4021);

    Sample s3 = two_tree_sample(64, false);
    Sample s4 = s3;
    s4.dsm = DsmChannel(nn::Tensor::zeros({64, 64}));

    nn::NoGradGuard guard;
    const nn::Var f3 = m3.features(m3.assemble_input(s3));
    const nn::Var f4 = m4.features(m4.assemble_input(s4));
    REQUIRE(f3->value.shape() == f4->value.shape());
    real_t worst = 0;
    for (int64_t i = 0; i < f3->value.numel(); ++i)
        worst = std::max(worst, std::abs(f3->value[i] - f4->value[i]));
    REQUIRE(worst <= 1e-6);

    const Detections d3 = m3.predict(s3);
    const Detections d4 = m4.predict(s4);
    REQUIRE(d3.size() == d4.size());
    for (size_t i = 0; i < d3.size(); ++i) {
        REQUIRE(std::abs(d3[i].score - d4[i].score) <= 1e-9);
        REQUIRE(std::abs(d3[i].box.x0 - d4[i].box.x0) <= 1e-6);
        REQUIRE(d3[i].class_id == d4[i].class_id);
    }
}

TEST_CASE("head widths follow the class count") {
    const DetectorModel m(DetectorConfig::tiny(5), 11);
    const nn::NamedParams params = m.named_params();

    const nn::Var* cls = find_param(params, "cls_head.weight");
    REQUIRE(cls != nullptr);
    REQUIRE((*cls)->value.shape() == nn::Shape{6, 64});

    const nn::Var* box = find_param(params, "box_head.weight");
    REQUIRE(box != nullptr);
    REQUIRE((*box)->value.shape() == nn::Shape{24, 64});

    const nn::Var* mask = find_param(params, "mask_pred.weight");
    REQUIRE(mask != nullptr);
    REQUIRE((*mask)->value.dim(0) == 5);

    REQUIRE(find_param(params, "fc_extra.weight") == nullptr);

    DetectorConfig wide = DetectorConfig::tiny(5);
    wide.extra_head_capacity = true;
    const DetectorModel mw(wide, 11);
    REQUIRE(find_param(mw.named_params(), "fc_extra.weight") != nullptr);
    REQUIRE(mw.param_count() == m.param_count() + 64 * 64 + 64);
}

TEST_CASE("dsm encoder stack maps heights pixelwise") {
    Rng rng(19);
    const DsmEncoderStack stack(4, 8, rng);

    nn::Tensor flat({1, 16, 16});
    for (int64_t i = 0; i < flat.numel(); ++i) flat[i] = 0.6;
    nn::NoGradGuard guard;
    const nn::Var out = stack.forward(nn::make_leaf(flat));
    REQUIRE(out->value.shape() == nn::Shape{1, 16, 16});

    // constant input stays constant away from the zero-padded borders
    const real_t ref = out->value[0];
    for (int64_t y = 0; y < 14; ++y)
        for (int64_t x = 0; x < 14; ++x)
            REQUIRE(std::abs(out->value[y * 16 + x] - ref) < 1e-9);

    nn::Tensor ramp({1, 16, 16});
    for (int64_t i = 0; i < ramp.numel(); ++i) ramp[i] = (real_t)i / 256.0;
    const nn::Var out2 = stack.forward(nn::make_leaf(ramp));
    real_t spread = 0;
    for (int64_t i = 0; i < out2->value.numel(); ++i)
        spread = std::max(spread, std::abs(out2->value[i] - out2->value[0]));
    REQUIRE(spread > 1e-6);
}

TEST_CASE("dsm encoder stack trains jointly with the detector") {
    DetectorConfig cfg = DetectorConfig::with_dsm(DetectorConfig::tiny(2),
                                                  DsmInputMode::encoder);
    DetectorModel m(cfg, 23);
    const Sample sample = two_tree_sample(64, true);

    nn::NamedParams stack_params;
    m.dsm_stack.collect("dsm_stack", stack_params);
    const uint64_t before = nn::params_checksum(stack_params);

    const std::vector<nn::Var> params = m.parameters();
    nn::Adam opt(1e-3, 0.9, 0.999, 0.0);
    const LossBundle bundle = m.compute_losses(sample);
    nn::zero_grad(params);
    nn::backward(bundle.total);
    opt.step(params);

    REQUIRE(nn::params_checksum(stack_params) != before);
}

TEST_CASE("input stacking modes") {
    const Sample sample = two_tree_sample(64, true);

    const nn::Tensor plain = stack_detector_input(sample, DsmInputMode::none, 98.0);
    REQUIRE(plain.shape() == nn::Shape{3, 64, 64});
    for (int64_t i = 0; i < plain.numel(); ++i) {
        REQUIRE(plain[i] >= 0.0);
        REQUIRE(plain[i] <= 1.0);
    }

    const nn::Tensor stacked = stack_detector_input(sample, DsmInputMode::stack, 98.0);
    REQUIRE(stacked.shape() == nn::Shape{4, 64, 64});
    real_t mx = 0;
    for (int64_t i = 0; i < 64 * 64; ++i) {
        const real_t v = stacked[3 * 64 * 64 + i];
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
        mx = std::max(mx, v);
    }
    REQUIRE(mx == Catch::Approx(1.0));

    const nn::Tensor grad = stack_detector_input(sample, DsmInputMode::gradients, 98.0);
    REQUIRE(grad.shape() == nn::Shape{5, 64, 64});
    for (int64_t c = 3; c < 5; ++c)
        for (int64_t i = 0; i < 64 * 64; ++i) {
            REQUIRE(grad[c * 64 * 64 + i] >= 0.0);
            REQUIRE(grad[c * 64 * 64 + i] <= 1.0);
        }

    // encoder mode carries only the static channels; the learned one is
    // appended inside the model
    REQUIRE(stack_detector_input(sample, DsmInputMode::encoder, 98.0).dim(0) == 3);

    const Sample no_dsm = two_tree_sample(64, false);
    REQUIRE_THROWS_WITH(stack_detector_input(no_dsm, DsmInputMode::stack, 98.0),
                        ContainsSubstring("DSM channel required"));

    nn::Tensor sym({3, 3});
    const real_t vals[] = {-9, -5, -1, 0, 1, 2, 3, 5, 7};
    for (int64_t i = 0; i < 9; ++i) sym[i] = vals[i];
    REQUIRE(symmetric_percentile_bound(sym, 100.0) == Catch::Approx(9.0));
    REQUIRE(symmetric_percentile_bound(sym, 50.0) <= 5.0);
}

TEST_CASE("detector losses are finite and decrease under training") {
    DetectorModel m(DetectorConfig::tiny(2), 71);
    const Sample sample = two_tree_sample(64, false);

    const LossBundle first = m.compute_losses(sample);
    REQUIRE(std::isfinite(first.total->value[0]));
    for (const char* part : {"rpn_objectness", "rpn_box", "classification", "box", "mask"}) {
        REQUIRE(first.parts.count(part) == 1);
        REQUIRE(std::isfinite(first.parts.at(part)));
    }
    REQUIRE(first.total->value[0] > 0.0);

    const std::vector<nn::Var> params = m.parameters();
    nn::Adam opt(2e-3, 0.9, 0.999, 0.0);
    real_t last = first.total->value[0];
    for (int step = 0; step < 12; ++step) {
        const LossBundle b = m.compute_losses(sample);
        nn::zero_grad(params);
        nn::backward(b.total);
        opt.step(params);
        last = b.total->value[0];
    }
    REQUIRE(last < first.total->value[0]);
}

TEST_CASE("prediction is deterministic and validates its input") {
    const DetectorModel m(DetectorConfig::tiny(2), 44);
    const Sample sample = two_tree_sample(64, false);

    const Detections a = m.predict(sample);
    const Detections b = m.predict(sample);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].score == b[i].score);
        REQUIRE(a[i].box.x0 == b[i].box.x0);
        REQUIRE(a[i].box.y1 == b[i].box.y1);
        REQUIRE(a[i].class_id == b[i].class_id);
        REQUIRE(a[i].class_id >= 0);
        REQUIRE(a[i].class_id < 2);
        REQUIRE(a[i].score >= 0.05);
        REQUIRE(a[i].image_id == 3);
        REQUIRE(a[i].has_mask());
        REQUIRE(a[i].mask.height == 64);
    }

    Sample small = sample;
    small.rgb = test_rgb(32);
    REQUIRE_THROWS_WITH(m.predict(small), ContainsSubstring("tile size"));

    DetectorConfig stack_cfg =
        DetectorConfig::with_dsm(DetectorConfig::tiny(2), DsmInputMode::stack);
    const DetectorModel ms(stack_cfg, 44);
    REQUIRE_THROWS_WITH(ms.predict(sample), ContainsSubstring("DSM channel required"));
}

TEST_CASE("detector checkpoint roundtrip with sidecar") {
    namespace fs = std::filesystem;
    fs::create_directories(kDir);
    const std::string path = std::string(kDir) + "/detector.ckpt";

    DetectorConfig cfg = DetectorConfig::with_dsm(DetectorConfig::tiny(3),
                                                  DsmInputMode::encoder);
    const DetectorModel m(cfg, 500);
    m.save(path);

    REQUIRE(fs::exists(path + ".json"));
    std::ifstream sidecar(path + ".json");
    nlohmann::json j;
    sidecar >> j;
    REQUIRE(j["kind"] == "mask");
    REQUIRE(j["num_classes"] == 3);
    REQUIRE(j["dsm_mode"] == "encoder");

    DetectorModel other(cfg, 501);
    REQUIRE(other.checksum() != m.checksum());
    other.load(path);
    REQUIRE(other.checksum() == m.checksum());

    const Sample sample = two_tree_sample(64, true);
    const Detections da = m.predict(sample);
    const Detections db = other.predict(sample);
    REQUIRE(da.size() == db.size());
    for (size_t i = 0; i < da.size(); ++i) REQUIRE(da[i].score == db[i].score);
}
