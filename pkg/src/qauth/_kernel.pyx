# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled trial kernel; a typed copy of ``qauth._pykernel`` (same draws, same rows)."""

from libc.stdint cimport uint64_t, int64_t
from libc.stdlib cimport malloc, free
from libc.string cimport memset

import numpy as np

cdef enum:
    NFIELDS = 14
    ENT = 0
    PROD = 1
    PASSIVE = 0
    INTERCEPT = 1
    SUBSET = 2
    PNS = 3
    ORACLE = 4

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL


cdef inline uint64_t mix64(uint64_t z) nogil:
    z ^= z >> 30
    z *= 0xBF58476D1CE4E5B9ULL
    z ^= z >> 27
    z *= 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef struct Rng:
    uint64_t s


cdef inline uint64_t next_u64(Rng* r) nogil:
    r.s += GOLDEN
    return mix64(r.s)


cdef inline int rbit(Rng* r) nogil:
    return <int>(next_u64(r) >> 63)


cdef inline uint64_t below(Rng* r, uint64_t n) nogil:
    cdef uint64_t threshold, x
    if n == 1:
        return 0
    threshold = (<uint64_t>0 - n) % n
    while True:
        x = next_u64(r)
        if x >= threshold:
            return x % n


cdef inline double uniform(Rng* r) nogil:
    return <double>(next_u64(r) >> 11) * (1.0 / 9007199254740992.0)


cdef void subset(Rng* r, int n, int k, char* out) nogil:
    cdef int need = k, i, j, left
    for i in range(n):
        if need == 0:
            break
        left = n - i
        if need == left:
            for j in range(i, n):
                out[j] = 1
            break
        if <int>below(r, left) < need:
            out[i] = 1
            need -= 1


cdef inline int multiplicity(Rng* r, double p1, int max_photons) nogil:
    if p1 >= 1.0:
        return 1
    if uniform(r) < p1:
        return 1
    if max_photons == 2:
        return 2
    return 2 + <int>below(r, max_photons - 1)


cdef struct Slot:
    int kind
    int basis
    int bit
    int mult


cdef struct World:
    int n
    int key_basis
    char* is_tamper
    int* tb
    int* tx
    int* reg_b
    int* reg_x
    Slot* arm0
    Slot* arm1
    Slot* ret0
    Slot* ret1
    char* has_ret0
    char* has_ret1
    int* obs_b
    int* obs_x
    char* measured
    char* chosen
    int* key0
    int* key1


cdef inline int meas(World* w, Rng* r, Slot* st, int s, int basis) nogil:
    cdef int o
    if st.kind == ENT:
        if w.reg_b[s] < 0:
            o = rbit(r)
            w.reg_b[s] = basis
            w.reg_x[s] = o
            return o
        if w.reg_b[s] == basis:
            return w.reg_x[s]
        return rbit(r)
    if st.basis == basis:
        return st.bit
    return rbit(r)


cdef inline void record(World* w, int s, int basis, int bit) nogil:
    if w.obs_b[s] < 0 or (w.obs_b[s] != w.key_basis and basis == w.key_basis):
        w.obs_b[s] = basis
        w.obs_x[s] = bit


cdef inline void intercept(World* w, Rng* r, Slot* arm, int s) nogil:
    cdef int eb = rbit(r)
    cdef int o = meas(w, r, &arm[s], s, eb)
    record(w, s, eb, o)
    w.measured[s] = 1
    arm[s].kind = PROD
    arm[s].basis = eb
    arm[s].bit = o
    arm[s].mult = 1


cdef void attack_arm(World* w, Rng* r, Slot* arm, Slot* ret, char* has_ret,
                     int attack, int g) nogil:
    cdef int s, o, n = w.n
    if attack == INTERCEPT:
        for s in range(n):
            intercept(w, r, arm, s)
    elif attack == SUBSET:
        memset(w.chosen, 0, n)
        subset(r, n, g, w.chosen)
        for s in range(n):
            if w.chosen[s]:
                intercept(w, r, arm, s)
    elif attack == PNS:
        for s in range(n):
            if arm[s].mult >= 2:
                ret[s] = arm[s]
                has_ret[s] = 1
                arm[s].mult -= 1
                w.measured[s] = 1
            else:
                intercept(w, r, arm, s)
    elif attack == ORACLE:
        for s in range(n):
            if not w.is_tamper[s]:
                o = meas(w, r, &arm[s], s, w.key_basis)
                record(w, s, w.key_basis, o)
                w.measured[s] = 1
                arm[s].kind = PROD
                arm[s].basis = w.key_basis
                arm[s].bit = o
                arm[s].mult = 1


cdef void one_trial(World* w, Rng* r, int k, int d, int m, double threshold,
                    int max_restarts, int attack, int g, int arm_mask,
                    double p1, int max_photons, int64_t* row) nogil:
    cdef int n = w.n, s, kind, o, shown, tok
    cdef int detected = 0, restarts = 0, exceeded = 0, covered = 0, first = 1
    cdef int64_t a_err = 0, a_chk = 0, b_err = 0, b_chk = 0
    cdef int err0, err1, passed, disturbed = 0
    cdef int alice_ok = 0, forged = 0, guessed = 0, known = 0, agree = 1
    cdef int key_basis = w.key_basis

    while True:
        memset(w.is_tamper, 0, n)
        subset(r, n, d, w.is_tamper)
        for s in range(n):
            w.tb[s] = 0
            w.tx[s] = 0
            if w.is_tamper[s]:
                w.tb[s] = rbit(r)
                w.tx[s] = rbit(r)
        for s in range(n):
            w.reg_b[s] = -1
            w.reg_x[s] = 0
            kind = PROD if w.is_tamper[s] else ENT
            w.arm0[s].kind = kind
            w.arm0[s].basis = w.tb[s]
            w.arm0[s].bit = w.tx[s]
            w.arm0[s].mult = multiplicity(r, p1, max_photons)
            w.arm1[s].kind = kind
            w.arm1[s].basis = w.tb[s]
            w.arm1[s].bit = w.tx[s]
            w.arm1[s].mult = multiplicity(r, p1, max_photons)
            w.obs_b[s] = -1
            w.obs_x[s] = 0
            w.measured[s] = 0
            w.has_ret0[s] = 0
            w.has_ret1[s] = 0

        if arm_mask & 1:
            attack_arm(w, r, w.arm0, w.ret0, w.has_ret0, attack, g)
        if arm_mask & 2:
            attack_arm(w, r, w.arm1, w.ret1, w.has_ret1, attack, g)

        err0 = 0
        for s in range(n):
            if w.is_tamper[s]:
                err0 += meas(w, r, &w.arm0[s], s, w.tb[s]) != w.tx[s]
            else:
                w.key0[s] = meas(w, r, &w.arm0[s], s, key_basis)
        err1 = 0
        for s in range(n):
            if w.is_tamper[s]:
                err1 += meas(w, r, &w.arm1[s], s, w.tb[s]) != w.tx[s]
            else:
                w.key1[s] = meas(w, r, &w.arm1[s], s, key_basis)

        if arm_mask & 1:
            for s in range(n):
                if w.has_ret0[s]:
                    record(w, s, key_basis, meas(w, r, &w.ret0[s], s, key_basis))
        if arm_mask & 2:
            for s in range(n):
                if w.has_ret1[s]:
                    record(w, s, key_basis, meas(w, r, &w.ret1[s], s, key_basis))

        disturbed = 0
        for s in range(n):
            if w.is_tamper[s] and w.measured[s]:
                disturbed += 1
        a_err += err0
        b_err += err1
        a_chk += d
        b_chk += d
        passed = (d == 0) or (err0 <= threshold * d and err1 <= threshold * d)
        if first:
            first = 0
            if passed:
                covered = 1
                for s in range(n):
                    if not w.is_tamper[s] and not w.measured[s]:
                        covered = 0
                        break
        if passed:
            break
        detected = 1
        if restarts == max_restarts:
            exceeded = 1
            break
        restarts += 1

    if not exceeded:
        alice_ok = 1
        forged = 1
        shown = 0
        for s in range(n):
            if shown == m:
                break
            if w.is_tamper[s]:
                continue
            shown += 1
            if w.key0[s] != w.key1[s]:
                alice_ok = 0
        shown = 0
        for s in range(n):
            if shown == m:
                break
            if w.is_tamper[s]:
                continue
            shown += 1
            if w.obs_b[s] == key_basis:
                tok = w.obs_x[s]
            else:
                tok = rbit(r)
                guessed += 1
            if tok != w.key1[s]:
                forged = 0
    for s in range(n):
        if not w.is_tamper[s]:
            if w.obs_b[s] == key_basis:
                known += 1
            if w.key0[s] != w.key1[s]:
                agree = 0

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


def run_trials(int k, int d, int m, int key_basis, double threshold, int max_restarts,
               int attack, int g, int arm_mask, int knows_plaintext, double p1,
               int max_photons, uint64_t master_seed, int64_t start, int64_t count):
    """Run ``count`` trials with indices ``start..start+count-1``; one int64 row each."""
    if attack == ORACLE and not knows_plaintext:
        raise ValueError("oracle-locations needs the tamper specification")
    cdef int n = k + d
    out = np.zeros((count, NFIELDS), dtype=np.int64)
    cdef int64_t[:, ::1] rows = out
    cdef World w
    cdef Rng r
    cdef int64_t t
    cdef size_t nn = n if n > 0 else 1
    w.n = n
    w.key_basis = key_basis
    w.is_tamper = <char*>malloc(nn)
    w.measured = <char*>malloc(nn)
    w.chosen = <char*>malloc(nn)
    w.has_ret0 = <char*>malloc(nn)
    w.has_ret1 = <char*>malloc(nn)
    w.tb = <int*>malloc(nn * sizeof(int))
    w.tx = <int*>malloc(nn * sizeof(int))
    w.reg_b = <int*>malloc(nn * sizeof(int))
    w.reg_x = <int*>malloc(nn * sizeof(int))
    w.obs_b = <int*>malloc(nn * sizeof(int))
    w.obs_x = <int*>malloc(nn * sizeof(int))
    w.key0 = <int*>malloc(nn * sizeof(int))
    w.key1 = <int*>malloc(nn * sizeof(int))
    w.arm0 = <Slot*>malloc(nn * sizeof(Slot))
    w.arm1 = <Slot*>malloc(nn * sizeof(Slot))
    w.ret0 = <Slot*>malloc(nn * sizeof(Slot))
    w.ret1 = <Slot*>malloc(nn * sizeof(Slot))
    try:
        if (not w.is_tamper or not w.measured or not w.chosen or not w.has_ret0
                or not w.has_ret1 or not w.tb or not w.tx or not w.reg_b or not w.reg_x
                or not w.obs_b or not w.obs_x or not w.key0 or not w.key1 or not w.arm0
                or not w.arm1 or not w.ret0 or not w.ret1):
            raise MemoryError()
        memset(w.key0, 0, nn * sizeof(int))
        memset(w.key1, 0, nn * sizeof(int))
        with nogil:
            for t in range(count):
                r.s = mix64(master_seed ^ <uint64_t>(start + t))
                one_trial(&w, &r, k, d, m, threshold, max_restarts, attack, g, arm_mask,
                          p1, max_photons, &rows[t, 0])
    finally:
        free(w.is_tamper); free(w.measured); free(w.chosen)
        free(w.has_ret0); free(w.has_ret1)
        free(w.tb); free(w.tx); free(w.reg_b); free(w.reg_x)
        free(w.obs_b); free(w.obs_x); free(w.key0); free(w.key1)
        free(w.arm0); free(w.arm1); free(w.ret0); free(w.ret1)
    return out
