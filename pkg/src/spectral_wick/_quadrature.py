"""Composite Gauss-Legendre rules shared by the frequency- and time-domain integrators."""

from functools import lru_cache

import numpy as np


class QuadratureError(RuntimeError):
    """Adaptive refinement ran out of panels before meeting the tolerance."""


@lru_cache(maxsize=None)
def gauss_legendre(order):
    x, w = np.polynomial.legendre.leggauss(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def panel_rule(edges, order=16):
    """Nodes and weights of a composite rule on consecutive panels.

    Returns two ``(n_panels, order)`` arrays.
    """
    edges = np.asarray(edges, dtype=float)
    x, w = gauss_legendre(order)
    lo = edges[:-1, None]
    hi = edges[1:, None]
    half = 0.5 * (hi - lo)
    return lo + half * (x + 1.0), half * w


def graded_edges(upper, levels, ratio=0.5):
    """Panel edges ``[0, upper*ratio**levels, ..., upper*ratio, upper]``."""
    inner = upper * ratio ** np.arange(levels, -1, -1, dtype=float)
    return np.concatenate(([0.0], inner))


def merge_edges(*groups, lo=None, hi=None):
    edges = np.unique(np.concatenate([np.atleast_1d(np.asarray(g, dtype=float)) for g in groups]))
    if lo is not None:
        edges = edges[edges >= lo]
    if hi is not None:
        edges = edges[edges <= hi]
    return edges


def adaptive_panels(func, edges, tol, max_panels=20000, order=10):
    """Integrate ``func`` over ``[edges[0], edges[-1]]`` by panel bisection.

    Each panel is integrated with ``order`` and ``2*order`` points; the
    difference is the panel error estimate. Panels whose error exceeds their
    width-proportional share of ``tol`` (or 1e-14 relative) are bisected.
    ``func`` must accept an ndarray of any shape.

    Returns ``(value, error_estimate, n_panels)``.
    """
    edges = np.asarray(edges, dtype=float)
    total_width = edges[-1] - edges[0]
    if total_width == 0.0:
        return 0.0, 0.0, 0
    pending = np.column_stack((edges[:-1], edges[1:]))
    value = 0.0
    error = 0.0
    n_done = 0
    while pending.size:
        if n_done + len(pending) > max_panels:
            raise QuadratureError(
                f"adaptive quadrature exceeded {max_panels} panels (tol={tol:g})"
            )
        lo_nodes, lo_w = _pair_rule(pending, order)
        hi_nodes, hi_w = _pair_rule(pending, 2 * order)
        coarse = np.sum(func(lo_nodes) * lo_w, axis=1)
        fine = np.sum(func(hi_nodes) * hi_w, axis=1)
        err = np.abs(fine - coarse)
        width = pending[:, 1] - pending[:, 0]
        budget = np.maximum(tol * width / total_width, 1e-14 * np.abs(fine))
        ok = (err <= budget) | (width <= 1e-13 * max(1.0, abs(edges[-1])))
        value += float(np.sum(fine[ok]))
        error += float(np.sum(err[ok]))
        n_done += int(np.count_nonzero(ok))
        bad = pending[~ok]
        mid = 0.5 * (bad[:, 0] + bad[:, 1])
        pending = np.concatenate(
            (np.column_stack((bad[:, 0], mid)), np.column_stack((mid, bad[:, 1])))
        )
    return value, error, n_done


def _pair_rule(panels, order):
    x, w = gauss_legendre(order)
    lo = panels[:, :1]
    half = 0.5 * (panels[:, 1:] - lo)
    return lo + half * (x + 1.0), half * w
