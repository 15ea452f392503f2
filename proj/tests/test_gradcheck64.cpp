// Finite-difference verification at the 64-bit test precision, where the
// tolerance tightens to 1e-6.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "bevmem/gradcheck_result.hpp"

TEST_CASE("all differentiable ops match central finite differences (64-bit)") {
  const auto suite = bevmem_run_gradcheck_f64(7, false);
  for (const auto& op : suite.ops) {
    INFO(op.op, " max rel err ", op.max_rel_err);
    CHECK(op.max_rel_err < 1e-6);
  }
  CHECK(suite.all_pass);
}
