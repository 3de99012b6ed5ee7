"""Compiled vs numpy FK and finite-difference Jacobian timings on the bundled robots.

    python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from retargetkit import _kernels_py
from retargetkit.skeleton import shipped_robot_specs

try:
    from retargetkit import _kernels
except ImportError:
    _kernels = None


def bench(mod, spec, qv, active, targets, repeat):
    a = spec._arrays
    args = (a["parent"], a["off_R"], a["off_p"], a["axis"], a["dof"])
    t_fk = min(timeit.repeat(lambda: mod.fk(*args, qv), number=repeat, repeat=3)) / repeat
    t_j = min(timeit.repeat(lambda: mod.fd_jacobian(*args, qv, active, targets, 1e-6),
                            number=max(repeat // 20, 1), repeat=3)) / max(repeat // 20, 1)
    return t_fk, t_j


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=2000)
    args = ap.parse_args()
    if _kernels is None:
        print("compiled kernels not built; only the numpy fallback is timed")
    print(f"{'robot':<12}{'kernel':<14}{'python us':>12}{'cython us':>12}{'speedup':>10}")
    for spec in shipped_robot_specs():
        rng = np.random.default_rng(0)
        qv = rng.uniform(spec.lower, spec.upper)
        active = np.array([spec.dof_index(j) for j in spec.arm_joints], dtype=np.int64)
        targets = np.array([spec.frame_index(spec.end_effectors[k]) for k in ("l_wrist", "r_wrist")],
                           dtype=np.int64)
        py = bench(_kernels_py, spec, qv, active, targets, args.repeat)
        cy = bench(_kernels, spec, qv, active, targets, args.repeat) if _kernels else (float("nan"),) * 2
        for name, p, c in zip(("fk", "fd_jacobian"), py, cy):
            print(f"{spec.name:<12}{name:<14}{p * 1e6:>12.1f}{c * 1e6:>12.1f}{p / c:>10.1f}")


if __name__ == "__main__":
    main()
