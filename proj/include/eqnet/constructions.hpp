#pragma once

#include <cstdint>
#include <vector>

#include "eqnet/tensor.hpp"
#include "eqnet/unet.hpp"

namespace eqnet {

// Total order on integer coordinates: first by component sum, ties broken
// lexicographically at the first differing component.
bool diagonal_less(const std::vector<int64_t>& a, const std::vector<int64_t>& b);

// Single-channel image holding each position's 0-based rank under
// diagonal_less. Values are exact small integers in doubles, so maxima
// compare exactly. Within any axis-aligned block the maximum sits at the
// block's maximal corner.
Tensor diagonal_image(int d, const std::vector<int64_t>& size);

// Instance whose forward computes, per output position, the max over the
// f^l-aligned input block: identity convs on a single through-channel,
// skips zeroed, all-ones upsampling.
UNetInstance lemma1_instance(const UNetSpec& spec);

// Instance that assigns position-dependent IDs to a constant input: first
// conv is zero weights + bias 1, all other convs identity, skips zeroed,
// learnt upsampling kernels filled with non-repeating primes (level-major,
// then flat kernel index). Requires learnt upsampling and valid padding.
UNetInstance prime_id_instance(const UNetSpec& spec);

// Primes used by prime_id_instance for level `j` (0 = outermost upsampling).
std::vector<int64_t> prime_id_level_primes(const UNetSpec& spec, int level);

std::vector<int64_t> first_primes(int n);

}  // namespace eqnet
