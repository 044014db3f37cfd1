"""Compare the compiled and pure-Python kernel backends.

Usage::

    python benchmarks/bench_kernels.py [--steps 500] [--repeat 5]

Each kernel is timed on identical inputs under both backends (best of
``--repeat``), and the outputs are checked for agreement before any timing
is reported.
"""
import argparse
import sys
import timeit

import numpy as np

from evtrigger import _backend, harness
from evtrigger.triggers import WeightingSpec


def _cases(steps):
    cfg = harness.ScenarioConfig(betas=(2.0,), alphas=(1.0,), runs=1, steps=steps)
    point = cfg.point(2.0, 1.0)
    sensor = harness.run_sensor(point, 0)
    ys = np.ascontiguousarray(np.where(sensor.gammas[:, None] == 1, sensor.ys, np.nan))
    P0 = np.array(point.prior.cov)
    zs = np.random.default_rng(0).standard_normal((100_000, 2))
    chol = np.ascontiguousarray(WeightingSpec.scaled_identity(10.0, 2.0, 2).chol)

    def sensor_loop():
        return harness.run_sensor(point, 0).gammas

    def filter_loop():
        return _backend.kernels.filter_loop(point.model, point.spec, int(point.policy), False,
                                            sensor.xhat0, P0, sensor.gammas, ys, sensor.local)[0]

    def phi_batch():
        return _backend.kernels.phi_batch(zs, chol, 10.0, False)

    return {
        f"sensor_loop ({steps} steps)": sensor_loop,
        f"filter_loop ({steps} steps)": filter_loop,
        "phi_batch (1e5 rows)": phi_batch,
    }


def _best(fn, repeat):
    number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-6)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    if _backend.compiled is None:
        print("compiled kernels are not built; nothing to compare", file=sys.stderr)
        return 1
    cases = _cases(args.steps)
    previous = _backend.name
    rows = []
    try:
        for label, fn in cases.items():
            _backend.use("python")
            ref = fn()
            slow = _best(fn, args.repeat)
            _backend.use("compiled")
            np.testing.assert_allclose(fn(), ref, rtol=1e-9, atol=1e-12)
            fast = _best(fn, args.repeat)
            rows.append((label, slow, fast))
    finally:
        _backend.use(previous)

    print(f"{'kernel':<26}{'python':>12}{'compiled':>12}{'speed-up':>10}")
    for label, slow, fast in rows:
        print(f"{label:<26}{slow * 1e3:>10.3f}ms{fast * 1e3:>10.3f}ms{slow / fast:>9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
