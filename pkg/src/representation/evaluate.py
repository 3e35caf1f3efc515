"""Read (Y, Z) off Θ and Γ along simulated paths."""

import logging
from typing import Optional

import numpy as np

from src.model.problem import SdeModel
from src.pde.field import ThetaField
from src.pde.grid import TriangleGrid
from src.pde.type2 import GammaField, MildSolution, gamma_from_diagonal
from src.representation.pair import DiagonalFunction, SolutionPair, domain_mask, grid_positions
from src.sde.simulator import PathEnsemble

logger = logging.getLogger(__name__)


def _sigma_along(model: SdeModel, ens: PathEnsemble) -> np.ndarray:
    """σ(r_j, X(r_j)) for n = 1, shape (paths, knots, d)."""
    return model.diffusion(ens.times[None, :], ens.X)[:, :, 0, :]


def _upper_rows(theta: ThetaField, X: np.ndarray, positions: np.ndarray, sigma: np.ndarray):
    paths, knots = X.shape

    def upper(i: int) -> np.ndarray:
        out = np.full((paths, knots, theta.m, sigma.shape[-1]), np.nan)
        grad = theta.interpolate(positions[i], positions[i:][None, :], X[:, i][:, None], X[:, i:], gradient=True)
        out[:, i:] = grad[..., None] * sigma[:, i:, None, :]
        return out

    return upper


def _lower_rows(gamma: GammaField, X: np.ndarray, positions: np.ndarray, sigma: np.ndarray):
    paths, knots = X.shape

    def lower(i: int) -> np.ndarray:
        out = np.full((paths, knots, gamma.m, sigma.shape[-1]), np.nan)
        if i == 0:
            return out
        grad = gamma.interpolate(positions[i], positions[:i][None, :], X[:, :i], gradient=True)
        out[:, :i] = grad[..., None] * sigma[:, :i, None, :]
        return out

    def lower_column(i: int) -> np.ndarray:
        out = np.full((paths, knots, gamma.m, sigma.shape[-1]), np.nan)
        if i + 1 >= knots:
            return out
        grad = gamma.interpolate(positions[i + 1:][None, :], positions[i], X[:, i][:, None], gradient=True)
        out[:, i + 1:] = grad[..., None] * sigma[:, i, None, None, :]
        return out

    return lower, lower_column


def evaluate_type1(theta: ThetaField, ens: PathEnsemble, model: SdeModel) -> SolutionPair:
    """
    Y(s) = Θ(s, s, X(s), X(s)) and Z(t, s) = Θ_x(t, s, X(t), X(s)) σ(s, X(s)).

    Args:
        theta (ThetaField): Solved representation field.
        ens (PathEnsemble): Paths on a subset of the field's knots.
        model (SdeModel): Forward coefficients supplying σ.

    Returns:
        SolutionPair: Y and the upper triangle of Z; no lower triangle.

    Raises:
        GridMismatch: An ensemble knot is not a grid knot.
        PathOutsideDomain: Too many paths left the spatial grid.
    """
    positions = grid_positions(ens, theta.grid)
    included = domain_mask(ens, theta.grid)
    X = ens.X[..., 0]
    sigma = _sigma_along(model, ens)
    Y = theta.interpolate(positions[None, :], positions[None, :], X, X)
    logger.info(f"Evaluated '{theta.problem_name}' on {X.shape[0]} paths x {X.shape[1]} knots")
    return SolutionPair(Y=Y, times=ens.times, m=theta.m, d=model.d,
                        upper=_upper_rows(theta, X, positions, sigma), included=included,
                        provenance=f"type1:{theta.scheme.get('backend', '')}")


def evaluate_type2(sol: MildSolution, ens: PathEnsemble, model: SdeModel) -> SolutionPair:
    """Type-I pair of Θ plus the lower triangle Z(t, s) = Γ_x(t, s, X(s)) σ(s, X(s)) for s < t."""
    pair = evaluate_type1(sol.theta, ens, model)
    positions = grid_positions(ens, sol.gamma.grid)
    sigma = _sigma_along(model, ens)
    pair.lower, pair.lower_column = _lower_rows(sol.gamma, ens.X[..., 0], positions, sigma)
    pair.provenance = f"type2:{sol.gamma.backend}"
    return pair


def evaluate_martingale_probe(lam: DiagonalFunction, model: SdeModel, grid: TriangleGrid, ens: PathEnsemble,
                              backend: Optional[str] = None) -> SolutionPair:
    """
    Y(t) = Λ(t, X(t)) with Z below the diagonal from Γ built on Λ's grid values.

    Returns:
        SolutionPair: Y and the lower triangle of Z; no upper triangle.
    """
    gamma = gamma_from_diagonal(lam.on_grid(grid), model, grid, backend=backend)
    positions = grid_positions(ens, grid)
    included = domain_mask(ens, grid)
    sigma = _sigma_along(model, ens)
    lower, lower_column = _lower_rows(gamma, ens.X[..., 0], positions, sigma)
    Y = lam(ens.times[None, :], ens.X)
    logger.info(f"Martingale probe '{lam.name}' evaluated with the {gamma.backend} Γ backend")
    return SolutionPair(Y=np.array(Y), times=ens.times, m=lam.m, d=model.d, lower=lower,
                        lower_column=lower_column, included=included, provenance=f"probe:{lam.name}")
