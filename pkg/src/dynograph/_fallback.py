"""Pure-numpy time-stepping kernel, used when the compiled one is unavailable.

Vectorized over the replicates of a batch.  Operation order mirrors
``_kernels.pyx`` so results agree with the compiled backend.
"""
import numpy as np

from . import expr as ex

KIND_DIFFUSION, KIND_COUNTING, KIND_ODE = 0, 1, 2
ERR_DIV0, ERR_OVERFLOW, ERR_NONFINITE = 1, 2, 3

_CMP = {
    ex.OP_LT: np.less, ex.OP_LE: np.less_equal, ex.OP_EQ: np.equal,
    ex.OP_GE: np.greater_equal, ex.OP_GT: np.greater,
}


def _eval(ops, args, consts, start, length, t, state, attrs, inputs_row):
    """Evaluate one program for all rows of ``state``.

    Returns ``(values, codes)``; ``codes`` holds the first error per row.
    """
    n = state.shape[0]
    codes = np.zeros(n, dtype=np.int64)
    stack = []
    for pc in range(start, start + length):
        op = ops[pc]
        if op == ex.OP_CONST:
            stack.append(np.full(n, consts[args[pc]]))
        elif op == ex.OP_TIME:
            stack.append(np.full(n, t))
        elif op == ex.OP_COMP:
            stack.append(state[:, args[pc]].copy())
        elif op == ex.OP_ATTR:
            stack.append(attrs[:, args[pc]].copy())
        elif op == ex.OP_INPUT:
            stack.append(np.full(n, inputs_row[args[pc]]))
        elif op == ex.OP_NEG:
            stack[-1] = -stack[-1]
        elif op == ex.OP_EXP:
            a = np.exp(stack[-1])
            codes[(codes == 0) & ~np.isfinite(a)] = ERR_OVERFLOW
            stack[-1] = a
        else:
            b = stack.pop()
            a = stack[-1]
            if op == ex.OP_ADD:
                stack[-1] = a + b
            elif op == ex.OP_SUB:
                stack[-1] = a - b
            elif op == ex.OP_MUL:
                stack[-1] = a * b
            elif op == ex.OP_DIV:
                zero = b == 0.0
                codes[(codes == 0) & zero] = ERR_DIV0
                stack[-1] = a / np.where(zero, 1.0, b)
            elif op == ex.OP_MIN:
                stack[-1] = np.where(b < a, b, a)
            elif op == ex.OP_MAX:
                stack[-1] = np.where(b > a, b, a)
            else:
                stack[-1] = np.where(_CMP[op](a, b), 1.0, 0.0)
    value = stack[0]
    codes[(codes == 0) & ~np.isfinite(value)] = ERR_NONFINITE
    return value, codes


def run_batch(ops, args, consts, start, length, max_stack, kinds, drift_idx, sigma_idx,
              attrs, inputs, noise, init, dt, out, err, counters):
    """Advance all replicates of a batch, writing into ``out``/``err``/``counters``.

    ``out`` has shape (replicates, steps + 1, components).  ``err`` rows are
    (code, step, component) of the first failure, code 0 meaning none.
    ``counters`` rows are (clamped negative intensities, coarse steps).
    """
    nrep, nsteps1, ncomp = out.shape
    nsteps = nsteps1 - 1
    kinds = np.asarray(kinds)
    ode = [c for c in range(ncomp) if kinds[c] == KIND_ODE]
    half = 0.5 * dt
    sixth = dt / 6.0
    sqdt = np.sqrt(dt)
    err[:] = 0
    counters[:] = 0
    x = np.array(init, dtype=np.float64)
    out[:, 0, :] = x
    alive = np.ones(nrep, dtype=bool)

    def fail(codes, step, comp):
        hit = alive & (codes != 0)
        err[hit, 0] = codes[hit]
        err[hit, 1] = step
        err[hit, 2] = comp
        alive[hit] = False

    with np.errstate(all="ignore"):
        for s in range(nsteps):
            t = s * dt
            inp = inputs[s]
            drift = np.zeros((nrep, ncomp))
            sig = np.zeros((nrep, ncomp))
            for c in range(ncomp):
                if kinds[c] == KIND_ODE:
                    continue
                d = drift_idx[c]
                drift[:, c], codes = _eval(ops, args, consts, start[d], length[d], t, x, attrs, inp)
                fail(codes, s, c)
                if kinds[c] == KIND_DIFFUSION:
                    q = sigma_idx[c]
                    sig[:, c], codes = _eval(ops, args, consts, start[q], length[q], t, x, attrs, inp)
                    fail(codes, s, c)
            k = np.zeros((4, nrep, ncomp))
            if ode:
                y = x.copy()
                for stage, tau in enumerate((t, t + half, t + half, t + dt)):
                    for c in ode:
                        d = drift_idx[c]
                        k[stage, :, c], codes = _eval(ops, args, consts, start[d], length[d],
                                                      tau, y, attrs, inp)
                        fail(codes, s, c)
                    for c in ode:
                        if stage < 2:
                            y[:, c] = x[:, c] + half * k[stage, :, c]
                        elif stage == 2:
                            y[:, c] = x[:, c] + dt * k[stage, :, c]
            xn = np.empty_like(x)
            for c in range(ncomp):
                if kinds[c] == KIND_DIFFUSION:
                    xn[:, c] = (x[:, c] + drift[:, c] * dt) + sig[:, c] * (sqdt * noise[:, s, c])
                elif kinds[c] == KIND_COUNTING:
                    lam = drift[:, c].copy()
                    neg = alive & (lam < 0.0)
                    counters[neg, 0] += 1
                    lam[lam < 0.0] = 0.0
                    p = lam * dt
                    counters[alive & (p > 0.1), 1] += 1
                    p = np.where(p > 1.0, 1.0, p)
                    xn[:, c] = np.where(noise[:, s, c] < p, x[:, c] + 1.0, x[:, c])
                else:
                    xn[:, c] = x[:, c] + sixth * (((k[0, :, c] + 2.0 * k[1, :, c])
                                                   + 2.0 * k[2, :, c]) + k[3, :, c])
            for c in range(ncomp):
                fail(np.where(np.isfinite(xn[:, c]), 0, ERR_NONFINITE), s, c)
            x = np.where(alive[:, None], xn, np.nan)
            out[:, s + 1, :] = x
            if not alive.any():
                out[:, s + 2:, :] = np.nan
                break
    return None
