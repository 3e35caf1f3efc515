"""Convergence-rate helpers: log-log slopes, observed orders, Richardson extrapolation."""

from typing import Sequence, Union

import numpy as np


def loglog_slope(steps: Sequence[float], errors: Sequence[float]) -> float:
    """
    Least-squares slope of log(error) against log(step).

    Args:
        steps (Sequence[float]): Mesh sizes (Δt, h, ‖Π‖ or window lengths).
        errors (Sequence[float]): Positive error measurements.

    Returns:
        float: The fitted slope, NaN if fewer than two positive errors remain.
    """
    steps = np.asarray(steps, dtype=float)
    errors = np.asarray(errors, dtype=float)
    keep = (errors > 0) & np.isfinite(errors) & (steps > 0)
    if keep.sum() < 2:
        return float("nan")
    slope, _ = np.polyfit(np.log(steps[keep]), np.log(errors[keep]), 1)
    return float(slope)


def observed_orders(steps: Sequence[float], errors: Sequence[float]) -> np.ndarray:
    """Pairwise orders log(e_k/e_{k+1}) / log(h_k/h_{k+1}); first entry NaN."""
    steps = np.asarray(steps, dtype=float)
    errors = np.asarray(errors, dtype=float)
    orders = np.full(steps.shape, np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        orders[1:] = np.log(errors[:-1] / errors[1:]) / np.log(steps[:-1] / steps[1:])
    return orders


def richardson_extrapolate(values: Sequence[Union[np.ndarray, float]], order: int, ratio: float = 2.0):
    """
    Limit of approximations on steps h, h/r, h/r², ... with errors C₁h^p + C₂h^(p+1) + ...

    Each sweep of the tableau combines neighbouring entries and removes the next power
    of h, so n approximations cancel n - 1 error terms.

    Args:
        values: Approximations, coarsest first; arrays must share a shape.
        order (int): Leading error power p of the scheme.
        ratio (float): Step reduction between neighbours.

    Returns:
        float or np.ndarray: The extrapolated value.

    Raises:
        ValueError: Fewer than two approximations.
    """
    if len(values) < 2:
        raise ValueError("Richardson extrapolation needs at least two approximations")
    tableau = [np.asarray(value, dtype=float) for value in values]
    power = order
    while len(tableau) > 1:
        weight = ratio ** power
        tableau = [(weight * fine - coarse) / (weight - 1.0) for coarse, fine in zip(tableau[:-1], tableau[1:])]
        power += 1
    limit = tableau[0]
    return float(limit) if limit.ndim == 0 else limit
