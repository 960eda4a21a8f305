#!/usr/bin/env python3
"""Smoke test for the geomedian_py extension module.

Build the module first:

    cargo build -p geomedian-py --release

The script locates the compiled cdylib under target/, imports it under its
module name and exercises the main types and operations.
"""

import math
import random
import shutil
import sys
import sysconfig
import tempfile
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parent.parent


def import_geomedian_py():
    candidates = [
        REPO_ROOT / "target" / profile / name
        for profile in ("release", "debug")
        for name in ("libgeomedian_py.so", "geomedian_py.so", "libgeomedian_py.dylib")
    ]
    lib = next((c for c in candidates if c.exists()), None)
    if lib is None:
        sys.exit("geomedian_py cdylib not found; run `cargo build -p geomedian-py --release`")
    stage = Path(tempfile.mkdtemp(prefix="geomedian_py_"))
    suffix = sysconfig.get_config_var("EXT_SUFFIX") or ".so"
    shutil.copy2(lib, stage / f"geomedian_py{suffix}")
    sys.path.insert(0, str(stage))
    import geomedian_py

    return geomedian_py


def main():
    gm = import_geomedian_py()
    rng = random.Random(12345)

    # quantile helpers against frozen reference values
    assert abs(gm.normal_quantile(0.975) - 1.959963984540054) < 1e-8
    assert abs(gm.chi_square_quantile(0.95, 2) - 5.991464547107982) < 1e-8
    assert abs(gm.chi_square_quantile(0.95, 10) - 18.307038053275146) < 1e-8

    # objective geometry
    assert abs(gm.loss([3.0, 4.0], [0.0, 4.0]) + 2.0) < 1e-12
    grad = gm.gradient([3.0, 4.0], [0.0, 0.0])
    assert abs(grad[0] + 0.6) < 1e-12 and abs(grad[1] + 0.8) < 1e-12
    hess = gm.hessian([1.0, 0.0], [0.0, 0.0])
    assert abs(hess[0][0]) < 1e-12 and abs(hess[1][1] - 1.0) < 1e-12

    # offline solver on the unit square
    median, iters, grad_norm = gm.weiszfeld(
        [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]
    )
    assert abs(median[0] - 0.5) < 1e-8 and abs(median[1] - 0.5) < 1e-8
    assert grad_norm <= 1e-10

    # streaming estimators on a centred Gaussian cloud
    p, n = 3, 4000
    m0 = [rng.gauss(0.0, 1.0) for _ in range(p)]
    wasn = gm.Wasn(m0, seed=7)
    newton = gm.StochasticNewton(m0, seed=8)
    asgd = gm.Asgd(m0)
    tracker = gm.InferenceTracker(p, seed=9)
    for _ in range(n):
        x = [rng.gauss(0.0, 1.0) for _ in range(p)]
        tracker.update(x, wasn.estimate)
        wasn.step(x)
        newton.step(x)
        asgd.step(x)

    for name, est in (("wasn", wasn), ("sn", newton), ("asgd", asgd)):
        err = math.sqrt(sum(v * v for v in est.estimate))
        assert est.n == n
        assert err < 0.3, f"{name} estimate too far from the true median: {err}"

    # inference around the WASN estimate
    center, half_width = tracker.confidence_interval(
        wasn.estimate, [1.0] + [0.0] * (p - 1), level=0.95
    )
    assert half_width > 0.0
    assert abs(center) < half_width + 0.3
    stat, p_value, reject = tracker.chi_square_test(wasn.estimate, wasn.estimate)
    assert stat == 0.0 and p_value == 1.0 and not reject
    stat, p_value, reject = tracker.chi_square_test(wasn.estimate, [5.0] * p)
    assert reject and p_value < 1e-6

    print("geomedian_py smoke test: all checks passed")


if __name__ == "__main__":
    main()
