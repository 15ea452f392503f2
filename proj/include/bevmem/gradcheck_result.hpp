#pragma once

// Plain-type result surface for the finite-difference suite so it can be
// reported across the 32/64-bit library builds from one binary.

#include <cstdint>
#include <string>
#include <vector>

namespace bevmem_gradcheck {

struct OpResult {
  std::string op;
  double max_rel_err = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

struct SuiteResult {
  std::vector<OpResult> ops;
  bool all_pass = true;
  double wall_s = 0.0;
};

}  // namespace bevmem_gradcheck

// Defined by the 32-bit core library.
bevmem_gradcheck::SuiteResult bevmem_run_gradcheck_f32(std::uint64_t seed, bool corrupt_adjoint);
// Defined by the 64-bit core library.
bevmem_gradcheck::SuiteResult bevmem_run_gradcheck_f64(std::uint64_t seed, bool corrupt_adjoint);
