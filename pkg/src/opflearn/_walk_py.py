"""Pure numpy hit-and-run kernel; same contract as the compiled ``_walk``."""

import numpy as np


def walk(A, b, x, dirs, unif, thin, out, offset=0, min_chord=1e-12):
    nout = 0
    for i in range(len(unif)):
        norm = np.sqrt(dirs[i] @ dirs[i])
        if norm == 0.0:
            return i, 1, nout
        u = dirs[i] / norm
        res = b - A @ x
        Au = A @ u
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = res / Au
        pos, neg = Au > 0.0, Au < 0.0
        if not pos.any() or not neg.any():
            return i, 2, nout
        thi = ratio[pos].min()
        tlo = ratio[neg].max()
        if thi - tlo <= min_chord:
            return i, 1, nout
        t = tlo + unif[i] * (thi - tlo)
        for _ in range(60):
            ok = bool(np.all(res - t * Au > 0.0))
            if ok:
                break
            t *= 0.5
        if not ok:
            return i, 1, nout
        x += t * u
        if thin > 0 and (offset + i + 1) % thin == 0 and nout < len(out):
            out[nout] = x
            nout += 1
    return len(unif), 0, nout
