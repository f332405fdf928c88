#pragma once

#include <map>
#include <string>

#include "treeseg/nn/autograd.hpp"

namespace treeseg {

// One training step's losses: the differentiable total plus logged components.
struct LossBundle {
    nn::Var total;
    std::map<std::string, real_t> parts;
};

}  // namespace treeseg
