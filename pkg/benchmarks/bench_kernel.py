"""Compare the compiled and pure-Python trial kernels on the same workload.

Usage: python3 benchmarks/bench_kernel.py [--trials N] [--k K] [--d D] [--strategy NAME]
"""

import argparse
import time

import numpy as np

from qauth import kernel
from qauth.adversary import AdversaryStrategy, Attack
from qauth.protocol import ProtocolParams
from qauth.qchannel import PhotonSourceModel


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=20_000)
    ap.add_argument("--k", type=int, default=17)
    ap.add_argument("--d", type=int, default=41)
    ap.add_argument("--strategy", default="intercept-resend", choices=[a.value for a in Attack])
    ap.add_argument("--p1", type=float, default=1.0)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    params = ProtocolParams(args.k, args.d)
    attack = Attack(args.strategy)
    strategy = AdversaryStrategy(attack, g=args.k if attack is Attack.SUBSET_GUESS else None,
                                 knows_plaintext=attack is Attack.ORACLE_LOCATIONS)
    source = PhotonSourceModel(args.p1)

    timings, outputs = {}, {}
    for backend in kernel.available_backends():
        best = float("inf")
        for _ in range(args.repeat):
            t0 = time.perf_counter()
            outputs[backend] = kernel.run_trials(params, strategy, source, 1, 0, args.trials, backend)
            best = min(best, time.perf_counter() - t0)
        timings[backend] = best

    print(f"{args.trials} trials, k={args.k}, d={args.d}, strategy={args.strategy}, p1={args.p1}")
    for backend, t in timings.items():
        print(f"  {backend:>7}: {t:8.3f} s  {args.trials / t:12.0f} trials/s")
    if len(timings) == 2:
        print(f"  speedup: {timings['python'] / timings['cython']:.1f}x")
        same = np.array_equal(outputs["python"], outputs["cython"])
        print(f"  identical rows: {same}")


if __name__ == "__main__":
    main()
