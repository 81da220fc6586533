# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled time-stepping kernel.

Runs the postfix drift/sigma programs replicate by replicate with the GIL
released.  The arithmetic order matches ``_fallback.run_batch`` exactly so
both backends agree to the last bit except where ``exp`` implementations
differ.
"""
from libc.math cimport exp, sqrt, isfinite, NAN
from libc.stdlib cimport malloc, free

# opcodes: keep in sync with expr.py
cdef enum:
    OP_CONST = 0
    OP_TIME = 1
    OP_COMP = 2
    OP_ATTR = 3
    OP_INPUT = 4
    OP_ADD = 5
    OP_SUB = 6
    OP_MUL = 7
    OP_DIV = 8
    OP_MIN = 9
    OP_MAX = 10
    OP_NEG = 11
    OP_EXP = 12
    OP_LT = 13
    OP_LE = 14
    OP_EQ = 15
    OP_GE = 16
    OP_GT = 17
    KIND_DIFFUSION = 0
    KIND_COUNTING = 1
    KIND_ODE = 2
    ERR_DIV0 = 1
    ERR_OVERFLOW = 2
    ERR_NONFINITE = 3


cdef int _eval(const int[::1] ops, const int[::1] args, const double[::1] consts,
               int start, int length, double t, const double* state,
               const double[:, ::1] attrs, Py_ssize_t r, const double[:, ::1] inputs,
               Py_ssize_t s, double* stack, double* result) noexcept nogil:
    cdef int sp = 0
    cdef int pc, op
    cdef double a, b
    for pc in range(start, start + length):
        op = ops[pc]
        if op == OP_CONST:
            stack[sp] = consts[args[pc]]; sp += 1
        elif op == OP_TIME:
            stack[sp] = t; sp += 1
        elif op == OP_COMP:
            stack[sp] = state[args[pc]]; sp += 1
        elif op == OP_ATTR:
            stack[sp] = attrs[r, args[pc]]; sp += 1
        elif op == OP_INPUT:
            stack[sp] = inputs[s, args[pc]]; sp += 1
        elif op == OP_NEG:
            stack[sp - 1] = -stack[sp - 1]
        elif op == OP_EXP:
            a = exp(stack[sp - 1])
            if not isfinite(a):
                return ERR_OVERFLOW
            stack[sp - 1] = a
        else:
            sp -= 1
            b = stack[sp]
            a = stack[sp - 1]
            if op == OP_ADD:
                stack[sp - 1] = a + b
            elif op == OP_SUB:
                stack[sp - 1] = a - b
            elif op == OP_MUL:
                stack[sp - 1] = a * b
            elif op == OP_DIV:
                if b == 0.0:
                    return ERR_DIV0
                stack[sp - 1] = a / b
            elif op == OP_MIN:
                stack[sp - 1] = b if b < a else a
            elif op == OP_MAX:
                stack[sp - 1] = b if b > a else a
            elif op == OP_LT:
                stack[sp - 1] = 1.0 if a < b else 0.0
            elif op == OP_LE:
                stack[sp - 1] = 1.0 if a <= b else 0.0
            elif op == OP_EQ:
                stack[sp - 1] = 1.0 if a == b else 0.0
            elif op == OP_GE:
                stack[sp - 1] = 1.0 if a >= b else 0.0
            else:
                stack[sp - 1] = 1.0 if a > b else 0.0
    result[0] = stack[0]
    if not isfinite(result[0]):
        return ERR_NONFINITE
    return 0


def run_batch(const int[::1] ops, const int[::1] args, const double[::1] consts,
              const int[::1] start, const int[::1] length, int max_stack,
              const int[::1] kinds, const int[::1] drift_idx, const int[::1] sigma_idx,
              const double[:, ::1] attrs, const double[:, ::1] inputs,
              const double[:, :, ::1] noise, const double[:, ::1] init, double dt,
              double[:, :, ::1] out, long long[:, ::1] err, long long[:, ::1] counters):
    """Advance every replicate in the batch; see ``_fallback.run_batch``."""
    cdef Py_ssize_t nrep = out.shape[0]
    cdef Py_ssize_t nsteps = out.shape[1] - 1
    cdef Py_ssize_t ncomp = out.shape[2]
    cdef Py_ssize_t r, s, c, stage
    cdef double t, val, lam, p, half = 0.5 * dt, sixth = dt / 6.0, sqdt = sqrt(dt)
    cdef int code, has_ode = 0
    cdef double* x
    cdef double* xn
    cdef double* y
    cdef double* drift
    cdef double* sig
    cdef double* k
    cdef double* stack
    for c in range(ncomp):
        if kinds[c] == KIND_ODE:
            has_ode = 1
    with nogil:
        x = <double*> malloc(ncomp * sizeof(double))
        xn = <double*> malloc(ncomp * sizeof(double))
        y = <double*> malloc(ncomp * sizeof(double))
        drift = <double*> malloc(ncomp * sizeof(double))
        sig = <double*> malloc(ncomp * sizeof(double))
        k = <double*> malloc(4 * ncomp * sizeof(double))
        stack = <double*> malloc((max_stack + 1) * sizeof(double))
        try:
            for r in range(nrep):
                err[r, 0] = 0; err[r, 1] = 0; err[r, 2] = 0
                counters[r, 0] = 0; counters[r, 1] = 0
                for c in range(ncomp):
                    x[c] = init[r, c]
                    out[r, 0, c] = x[c]
                for s in range(nsteps):
                    t = s * dt
                    code = 0
                    # non-ODE drifts and sigmas at the left-limit snapshot
                    for c in range(ncomp):
                        if kinds[c] == KIND_ODE:
                            continue
                        code = _eval(ops, args, consts, start[drift_idx[c]], length[drift_idx[c]],
                                     t, x, attrs, r, inputs, s, stack, &drift[c])
                        if code == 0 and kinds[c] == KIND_DIFFUSION:
                            code = _eval(ops, args, consts, start[sigma_idx[c]], length[sigma_idx[c]],
                                         t, x, attrs, r, inputs, s, stack, &sig[c])
                        if code != 0:
                            break
                    # classical RK4 on the ODE block, other components frozen
                    if code == 0 and has_ode:
                        for c in range(ncomp):
                            y[c] = x[c]
                        for stage in range(4):
                            if stage == 0:
                                val = t
                            elif stage == 3:
                                val = t + dt
                            else:
                                val = t + half
                            for c in range(ncomp):
                                if kinds[c] != KIND_ODE:
                                    continue
                                code = _eval(ops, args, consts, start[drift_idx[c]], length[drift_idx[c]],
                                             val, y, attrs, r, inputs, s, stack, &k[stage * ncomp + c])
                                if code != 0:
                                    break
                            if code != 0:
                                break
                            for c in range(ncomp):
                                if kinds[c] != KIND_ODE:
                                    continue
                                if stage < 2:
                                    y[c] = x[c] + half * k[stage * ncomp + c]
                                elif stage == 2:
                                    y[c] = x[c] + dt * k[stage * ncomp + c]
                    if code != 0:
                        err[r, 0] = code; err[r, 1] = s; err[r, 2] = c
                        break
                    for c in range(ncomp):
                        if kinds[c] == KIND_DIFFUSION:
                            xn[c] = (x[c] + drift[c] * dt) + sig[c] * (sqdt * noise[r, s, c])
                        elif kinds[c] == KIND_COUNTING:
                            lam = drift[c]
                            if lam < 0.0:
                                counters[r, 0] += 1
                                lam = 0.0
                            p = lam * dt
                            if p > 0.1:
                                counters[r, 1] += 1
                            if p > 1.0:
                                p = 1.0
                            if noise[r, s, c] < p:
                                xn[c] = x[c] + 1.0
                            else:
                                xn[c] = x[c]
                        else:
                            xn[c] = x[c] + sixth * (((k[c] + 2.0 * k[ncomp + c])
                                                     + 2.0 * k[2 * ncomp + c]) + k[3 * ncomp + c])
                    for c in range(ncomp):
                        if not isfinite(xn[c]):
                            code = ERR_NONFINITE
                            break
                    if code != 0:
                        err[r, 0] = code; err[r, 1] = s; err[r, 2] = c
                        break
                    for c in range(ncomp):
                        x[c] = xn[c]
                        out[r, s + 1, c] = x[c]
                if err[r, 0] != 0:
                    for s in range(err[r, 1] + 1, nsteps + 1):
                        for c in range(ncomp):
                            out[r, s, c] = NAN
        finally:
            free(x); free(xn); free(y); free(drift); free(sig); free(k); free(stack)
