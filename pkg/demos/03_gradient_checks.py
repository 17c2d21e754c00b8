"""Validate every analytic backward pass against central finite differences.

Covers the raw operators, the projection head, and the supervised contrastive
loss, in float64 with step 1e-5. Errors are reported relative to the gradient
scale; anything below 1e-4 passes.
"""

import time

from _common import banner
from patchcontrast.gradcheck import TOLERANCE, run_suite

banner("finite-difference gradient suite (20 trials per op)")
started = time.time()
results = run_suite(trials=20, seed=0)
width = max(len(name) for name in results)
for name, err in results.items():
    status = "ok" if err < TOLERANCE else "FAIL"
    print(f"  {name:<{width}}  max relative error {err:.3e}  {status}")
print(f"\nsuite finished in {time.time() - started:.1f}s "
      f"(tolerance {TOLERANCE:g}, worst {max(results.values()):.2e})")
