#pragma once

#include "treeseg/nn/modules.hpp"

namespace treeseg::detectors {

// Shared region-proposal head: 3x3 trunk then 1x1 objectness and per-anchor
// box deltas, channel layout a*4+c.
struct RpnHead : nn::Module {
    nn::Conv2dLayer conv, objectness, deltas;

    RpnHead() = default;
    RpnHead(int64_t channels, int64_t num_anchors, Rng& rng)
        : conv(channels, channels, 3, 1, 1, rng),
          objectness(channels, num_anchors, 1, 1, 0, rng),
          deltas(channels, 4 * num_anchors, 1, 1, 0, rng) {}

    struct Out {
        nn::Var objectness;  // [A,h,w]
        nn::Var deltas;      // [4A,h,w]
    };

    Out forward(const nn::Var& feat) const {
        const nn::Var y = nn::relu(conv.forward(feat));
        return {objectness.forward(y), deltas.forward(y)};
    }

    void collect(const std::string& prefix, nn::NamedParams& out) const override {
        conv.collect(nn::join_name(prefix, "conv"), out);
        objectness.collect(nn::join_name(prefix, "objectness"), out);
        deltas.collect(nn::join_name(prefix, "deltas"), out);
    }
};

}  // namespace treeseg::detectors
