#pragma once

#include <cstdint>
#include <iosfwd>

namespace micmco {

struct AuditResult {
  int passed = 0;
  int failed = 0;

  bool ok() const { return failed == 0; }
};

/// Runs the exact-enumeration property suite (the estimator identities, bias
/// directions, power-objective bounds, and gradient unbiasedness checks) on
/// random tiny models derived from `seed`. Prints one PASS/FAIL row per check.
AuditResult run_audit(uint64_t seed, std::ostream& out);

}  // namespace micmco
