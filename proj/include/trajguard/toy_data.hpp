#pragma once

#include <cstdint>
#include <vector>

#include "trajguard/tensor.hpp"

namespace trajguard {

// Seeded synthetic face-like image in [-1, 1]: shaded background, an elliptic
// face with eyes and mouth, hair band and mild texture.
Tensor make_toy_face(std::uint64_t seed, Shape shape = {3, 32, 32});

std::vector<Tensor> make_toy_batch(std::uint64_t seed, int count, Shape shape = {3, 32, 32});

}  // namespace trajguard
