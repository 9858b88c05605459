#pragma once

// Finite-difference check of the full objective on a two-object scene, with
// query positions and the matching held fixed.

#include <cstddef>
#include <cstdint>

#include "cadgd/config.hpp"
#include "cadgd/gradcheck.hpp"

namespace cadgd {

// 32x32 image, two objects, C=8, K=8, one decoder block, every flag on.
Config micro_config();

// Checks d(L_total)/d(parameter) for every parameter in the model built from
// `config` on a scene drawn with `seed`. `paths` restricts the check.
GradCheckReport composite_grad_check(const Config& config, std::uint64_t seed,
                                     const std::vector<std::string>& paths = {},
                                     std::size_t stride = 1);

}  // namespace cadgd
