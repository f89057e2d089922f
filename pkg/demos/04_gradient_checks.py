# Verifying the autodiff core against finite differences.
#
# grad_check runs a function twice per probed coordinate and compares the
# taped gradient with (f(x + eps) - f(x - eps)) / 2 eps.  Everything in the
# library that can carry a gradient goes through this battery.

from scalecount.gradcheck import run_battery

results = run_battery(seed=7)
width = max(len(r.name) for r in results)
for r in results:
    print(f"{r.name:<{width}}  max_rel_err {r.error:.3e}  (tol {r.tolerance:g})  "
          f"{'ok' if r.passed else 'FAIL'}")
print("\nall passed:", all(r.passed for r in results))
