#!/usr/bin/env python3
# Numerical spot checks of the properties the design leans on. Each check
# draws its own synthetic data, so a pass is evidence, not proof; the CLI
# twin is `goen verify-theory`.

from goen import (
    check_midpoint_degradation,
    check_normalization_conditioning,
    check_posterior_recovery,
    check_score_density_agreement,
)

checks = [
    # normalising rows tightens the covariance condition number
    check_normalization_conditioning,
    # min-Mahalanobis ranks points the way the mixture density does
    check_score_density_agreement,
    # a head trained on soft targets recovers the Bayes posterior
    check_posterior_recovery,
    # between-class midpoints are strictly harder than far OOD
    check_midpoint_degradation,
]

failures = 0
for fn in checks:
    result = fn()
    status = "PASS" if result.passed else "FAIL"
    print(f"{status} {result.name}: {result.detail}")
    failures += 0 if result.passed else 1

print(f"\n{len(checks) - failures} of {len(checks)} checks passed")
raise SystemExit(1 if failures else 0)
