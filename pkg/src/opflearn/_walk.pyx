# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hit-and-run kernel.  Mirrors ``_walk_py.walk`` step for step."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY

cnp.import_array()


def walk(double[:, ::1] A, double[::1] b, double[::1] x,
         double[:, ::1] dirs, double[::1] unif, Py_ssize_t thin,
         double[:, ::1] out, Py_ssize_t offset=0, double min_chord=1e-12):
    """Run ``len(unif)`` steps from ``x`` (updated in place).

    The point after global step ``offset + i + 1`` goes to the next row of
    ``out`` whenever that count is a multiple of ``thin`` (0 disables
    output).  Returns ``(steps_done, code, n_out)``: code 0 finished, 1
    degenerate chord at step ``steps_done``, 2 unbounded chord.
    """
    cdef Py_ssize_t k = A.shape[0], d = A.shape[1], n = unif.shape[0]
    cdef Py_ssize_t i, j, r, it, nout = 0
    cdef double norm, s, au, ratio, tlo, thi, t, slack
    cdef double[::1] u = np.empty(d)
    cdef double[::1] res = np.empty(k)
    cdef double[::1] Au = np.empty(k)
    cdef bint ok
    for i in range(n):
        norm = 0.0
        for j in range(d):
            norm += dirs[i, j] * dirs[i, j]
        norm = sqrt(norm)
        if norm == 0.0:
            return i, 1, nout
        for j in range(d):
            u[j] = dirs[i, j] / norm
        tlo = -INFINITY
        thi = INFINITY
        for r in range(k):
            s = b[r]
            au = 0.0
            for j in range(d):
                s -= A[r, j] * x[j]
                au += A[r, j] * u[j]
            res[r] = s
            Au[r] = au
            if au > 0.0:
                ratio = s / au
                if ratio < thi:
                    thi = ratio
            elif au < 0.0:
                ratio = s / au
                if ratio > tlo:
                    tlo = ratio
        if tlo == -INFINITY or thi == INFINITY:
            return i, 2, nout
        if thi - tlo <= min_chord:
            return i, 1, nout
        t = tlo + unif[i] * (thi - tlo)
        # keep the new point strictly inside
        for it in range(60):
            ok = True
            for r in range(k):
                slack = res[r] - t * Au[r]
                if slack <= 0.0:
                    ok = False
                    break
            if ok:
                break
            t *= 0.5
        if not ok:
            return i, 1, nout
        for j in range(d):
            x[j] += t * u[j]
        if thin > 0 and (offset + i + 1) % thin == 0 and nout < out.shape[0]:
            for j in range(d):
                out[nout, j] = x[j]
            nout += 1
    return n, 0, nout
