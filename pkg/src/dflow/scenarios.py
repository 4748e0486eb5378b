"""Seeded model flows: three with ``D >= 0`` and three that violate it."""

from __future__ import annotations

from .geometry import FlowSpec


def ricci_sphere():
    """Round 2-sphere under Ricci flow, ``r^2 = 1 - 2t``; extinct at ``t = 1/2``."""
    return FlowSpec("round_sphere", 2, (0.0, 0.4), {"r2": "1-2*t"}, T=0.5, name="ricci_sphere")


def static_flat_circle():
    return FlowSpec("circle_conformal", 1, (0.0, 1.0), {"u": "0"}, T=2.0, name="static_flat_circle")


def growing_circle():
    """Flat circle with length growing like ``sqrt(1+t)``: ``S = -1/(2(1+t))`` and ``D(X) = X^2`` in the angle coordinate."""
    return FlowSpec("circle_conformal", 1, (0.0, 1.0), {"u": "0.5*log(1+t)"}, T=1.5, name="growing_circle")


def expanding_sphere():
    """``r^2 = 1 + t^2``: the constant term of ``D`` is ``-n/(1+t^2) < 0``."""
    return FlowSpec("round_sphere", 2, (0.0, 1.0), {"r2": "1+t^2"}, T=1.5, name="expanding_sphere")


def shrinking_circle():
    """Flat circle with length shrinking like ``1/sqrt(1+t)``: ``D(X) = -(1 + X^2)/(1+t)^2`` in the angle coordinate."""
    return FlowSpec("circle_conformal", 1, (0.0, 1.0), {"u": "-0.5*log(1+t)"}, T=1.5, name="shrinking_circle")


def fast_shrinking_sphere():
    """``r^2 = 1 - 3t``: shrinks faster than Ricci flow, so the quadratic part of ``D`` is negative definite."""
    return FlowSpec("round_sphere", 2, (0.0, 0.3), {"r2": "1-3*t"}, T=1.0 / 3.0, name="fast_shrinking_sphere")


SATISFYING = {"ricci_sphere": ricci_sphere, "static_flat_circle": static_flat_circle, "growing_circle": growing_circle}
VIOLATING = {"expanding_sphere": expanding_sphere, "shrinking_circle": shrinking_circle, "fast_shrinking_sphere": fast_shrinking_sphere}
SEEDED = {**SATISFYING, **VIOLATING}


def seeded_flow(name):
    try:
        return SEEDED[name]()
    except KeyError:
        raise KeyError(f"unknown seeded flow {name!r}; known: {sorted(SEEDED)}") from None


__all__ = ["SATISFYING", "VIOLATING", "SEEDED", "seeded_flow"] + list(SEEDED)
