"""Pure-Python trial kernel.

Array-based rewrite of :class:`qauth.protocol.Session` that consumes the same
SplitMix64 draws in the same order, so every trial reproduces the object model
exactly. ``_kernel.pyx`` is a line-for-line typed copy of this file.
"""

from __future__ import annotations

import numpy as np

from .rng import GOLDEN_GAMMA, MASK64, mix64

NFIELDS = 14
ENT, PROD = 0, 1
PASSIVE, INTERCEPT, SUBSET, PNS, ORACLE = range(5)


class _Rng:
    __slots__ = ("s",)

    def __init__(self, seed):
        self.s = seed

    def u64(self):
        self.s = (self.s + GOLDEN_GAMMA) & MASK64
        return mix64(self.s)

    def bit(self):
        return self.u64() >> 63

    def below(self, n):
        if n == 1:
            return 0
        threshold = ((1 << 64) - n) % n
        while True:
            r = self.u64()
            if r >= threshold:
                return r % n

    def uniform(self):
        return (self.u64() >> 11) * (1.0 / 9007199254740992.0)


def _subset(rng, n, r, out):
    need = r
    for i in range(n):
        if need == 0:
            break
        left = n - i
        if need == left:
            for j in range(i, n):
                out[j] = 1
            break
        if rng.below(left) < need:
            out[i] = 1
            need -= 1


def _multiplicity(rng, p1, max_photons):
    if p1 >= 1.0:
        return 1
    if rng.uniform() < p1:
        return 1
    if max_photons == 2:
        return 2
    return 2 + rng.below(max_photons - 1)


def run_trials(k, d, m, key_basis, threshold, max_restarts, attack, g, arm_mask,
               knows_plaintext, p1, max_photons, master_seed, start, count):
    """Run ``count`` trials with indices ``start..start+count-1``; one int64 row each."""
    if attack == ORACLE and not knows_plaintext:
        raise ValueError("oracle-locations needs the tamper specification")
    n = k + d
    out = np.zeros((count, NFIELDS), dtype=np.int64)
    arms = [a for a, bitmask in ((0, 1), (1, 2)) if arm_mask & bitmask]

    for t in range(count):
        rng = _Rng(mix64((master_seed ^ (start + t)) & MASK64))
        detected = 0
        restarts = 0
        exceeded = 0
        a_err = a_chk = b_err = b_chk = 0
        covered = 0
        first = True
        while True:
            # tamper spec
            is_tamper = [0] * n
            _subset(rng, n, d, is_tamper)
            tb = [0] * n
            tx = [0] * n
            for s in range(n):
                if is_tamper[s]:
                    tb[s] = rng.bit()
                    tx[s] = rng.bit()
            # emission; arm state = [kind, basis, bit, mult] per slot, per path
            reg_b = [-1] * n
            reg_x = [0] * n
            arm_state = [[None] * n, [None] * n]
            for s in range(n):
                ma = _multiplicity(rng, p1, max_photons)
                mb = _multiplicity(rng, p1, max_photons)
                kind = PROD if is_tamper[s] else ENT
                arm_state[0][s] = [kind, tb[s], tx[s], ma]
                arm_state[1][s] = [kind, tb[s], tx[s], mb]

            def meas(st, s, basis):
                if st[0] == ENT:
                    if reg_b[s] < 0:
                        o = rng.bit()
                        reg_b[s] = basis
                        reg_x[s] = o
                        return o
                    if reg_b[s] == basis:
                        return reg_x[s]
                    return rng.bit()
                if st[1] == basis:
                    return st[2]
                return rng.bit()

            obs_b = [-1] * n
            obs_x = [0] * n
            measured = [0] * n
            retained = [[None] * n, [None] * n]

            def record(s, basis, bit):
                if obs_b[s] < 0 or (obs_b[s] != key_basis and basis == key_basis):
                    obs_b[s] = basis
                    obs_x[s] = bit

            def intercept(path, s):
                eb = rng.bit()
                o = meas(arm_state[path][s], s, eb)
                record(s, eb, o)
                measured[s] = 1
                arm_state[path][s] = [PROD, eb, o, 1]

            for path in arms:
                if attack == INTERCEPT:
                    for s in range(n):
                        intercept(path, s)
                elif attack == SUBSET:
                    chosen = [0] * n
                    _subset(rng, n, g, chosen)
                    for s in range(n):
                        if chosen[s]:
                            intercept(path, s)
                elif attack == PNS:
                    for s in range(n):
                        st = arm_state[path][s]
                        if st[3] >= 2:
                            retained[path][s] = [st[0], st[1], st[2]]
                            st[3] -= 1
                            measured[s] = 1
                        else:
                            intercept(path, s)
                elif attack == ORACLE:
                    for s in range(n):
                        if not is_tamper[s]:
                            o = meas(arm_state[path][s], s, key_basis)
                            record(s, key_basis, o)
                            measured[s] = 1
                            arm_state[path][s] = [PROD, key_basis, o, 1]

            # honest measurement: Alice then Bob
            keys = [[0] * n, [0] * n]
            errs = [0, 0]
            for path in (0, 1):
                for s in range(n):
                    st = arm_state[path][s]
                    if is_tamper[s]:
                        errs[path] += meas(st, s, tb[s]) != tx[s]
                    else:
                        keys[path][s] = meas(st, s, key_basis)

            for path in arms:
                for s in range(n):
                    st = retained[path][s]
                    if st is not None:
                        record(s, key_basis, meas(st, s, key_basis))

            disturbed = 0
            for s in range(n):
                if is_tamper[s] and measured[s]:
                    disturbed += 1
            a_err += errs[0]
            b_err += errs[1]
            a_chk += d
            b_chk += d
            passed = (d == 0) or (errs[0] <= threshold * d and errs[1] <= threshold * d)
            if first:
                first = False
                if passed:
                    covered = 1
                    for s in range(n):
                        if not is_tamper[s] and not measured[s]:
                            covered = 0
                            break
            if passed:
                break
            detected = 1
            if restarts == max_restarts:
                exceeded = 1
                break
            restarts += 1

        alice_ok = forged = guessed = 0
        if not exceeded:
            alice_ok = forged = 1
            shown = 0
            for s in range(n):
                if shown == m:
                    break
                if is_tamper[s]:
                    continue
                shown += 1
                if keys[0][s] != keys[1][s]:
                    alice_ok = 0
            shown = 0
            for s in range(n):
                if shown == m:
                    break
                if is_tamper[s]:
                    continue
                shown += 1
                if obs_b[s] == key_basis:
                    tok = obs_x[s]
                else:
                    tok = rng.bit()
                    guessed += 1
                if tok != keys[1][s]:
                    forged = 0
        known = 0
        agree = 1
        for s in range(n):
            if not is_tamper[s]:
                if obs_b[s] == key_basis:
                    known += 1
                if keys[0][s] != keys[1][s]:
                    agree = 0
        row = out[t]
        row[0] = alice_ok
        row[1] = forged
        row[2] = detected
        row[3] = restarts
        row[4] = exceeded
        row[5] = known
        row[6] = guessed
        row[7] = a_err
        row[8] = a_chk
        row[9] = b_err
        row[10] = b_chk
        row[11] = agree
        row[12] = covered
        row[13] = disturbed
    return out
