"""Conditional expectation estimators.

Two backends realize E[X | F_{t_i}] on simulated data:

* regression on a polynomial basis in the Brownian state (general, statistical);
* a recombining binomial lattice with exact one-step averaging (1-D Markovian
  oracle, used for cross-checks and deterministic fixtures).
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np

from .errors import ConfigurationError, ValidationError
from .grids import PathEnsemble, TimeGrid

BASIS_KINDS = ("state", "state+running")


@dataclass(frozen=True)
class BasisSpec:
    """Polynomial regression basis.

    kind "state" uses the Brownian components at the query time; "state+running"
    appends running features of a frozen resistance path (its current value and
    running maximum). degree is the total polynomial degree; ridge >= 0 is the
    Tikhonov weight (0 means plain least squares with an automatic minimal
    fallback on rank deficiency).
    """

    kind: str = "state"
    degree: int = 2
    ridge: float = 0.0

    def __post_init__(self):
        if self.kind not in BASIS_KINDS:
            raise ConfigurationError(f"unknown basis kind {self.kind!r}, expected one of {BASIS_KINDS}")
        if self.degree < 0:
            raise ConfigurationError(f"degree must be >= 0, got {self.degree}")
        if self.ridge < 0:
            raise ConfigurationError(f"ridge must be >= 0, got {self.ridge}")


def _monomials(variables: np.ndarray, degree: int) -> np.ndarray:
    """Design matrix of all monomials with total degree <= degree.

    variables: [P, v]. Column order is fixed (degree-major, lexicographic), so
    repeated calls are bit-identical.
    """
    P, v = variables.shape
    cols = [np.ones(P)]
    for deg in range(1, degree + 1):
        for combo in combinations_with_replacement(range(v), deg):
            col = variables[:, combo[0]].copy()
            for idx in combo[1:]:
                col *= variables[:, idx]
            cols.append(col)
    return np.column_stack(cols)


class RegressionCE:
    """Least-squares projection onto basis functions of the time-t_i state.

    At i = 0 the filtration is trivial and the fitted value is the plain sample
    mean. The per-step QR factorization is cached because a backward sweep asks
    for several projections at the same time index.
    """

    def __init__(
        self,
        ensemble: PathEnsemble,
        basis: BasisSpec,
        running_paths: np.ndarray | None = None,
    ):
        self.ensemble = ensemble
        self.basis = basis
        self.running_paths = running_paths
        if basis.kind == "state+running" and running_paths is None:
            raise ConfigurationError("basis kind 'state+running' needs a frozen running path matrix")
        n_vars = ensemble.d + (2 if basis.kind == "state+running" else 0)
        n_basis = 1
        for deg in range(1, basis.degree + 1):
            n_basis += _count_monomials(n_vars, deg)
        if n_basis > ensemble.P / 10:
            raise ConfigurationError(
                f"{n_basis} basis functions for {ensemble.P} paths exceeds the P/10 cap"
            )
        self.n_basis = n_basis
        self._cache_i: int | None = None
        self._cache = None
        self._cache_auto_ridge: bool = False
        self.auto_ridge_steps: set[int] = set()

    def _design(self, i: int) -> np.ndarray:
        state = self.ensemble.W[:, i, :]
        if self.basis.kind == "state+running":
            k_now = self.running_paths[:, i]
            k_max = np.maximum.accumulate(self.running_paths, axis=1)[:, i]
            state = np.column_stack([state, k_now, k_max])
        return _monomials(state, self.basis.degree)

    def _factorize(self, i: int) -> None:
        X = self._design(i)
        auto = False
        if self.basis.ridge > 0:
            proj = _RidgeProjector(X, self.basis.ridge)
        else:
            q, r = np.linalg.qr(X, mode="reduced")
            diag = np.abs(np.diag(r))
            if diag.min() <= 1e-10 * max(diag.max(), 1.0):
                # Singular normal equations: fall back to a minimal ridge so the
                # sweep stays alive, and flag the step.
                eps = 1e-10 * float(np.mean(np.sum(X * X, axis=0)))
                proj = _RidgeProjector(X, eps)
                auto = True
            else:
                proj = _QrProjector(q)
        self._cache = proj
        self._cache_auto_ridge = auto
        self._cache_i = i

    def fit(self, i: int, targets: np.ndarray) -> np.ndarray:
        """Fitted conditional expectation per path. targets: [P] or [P, k]."""
        targets = np.asarray(targets, dtype=np.float64)
        if not np.all(np.isfinite(targets)):
            raise ValidationError(f"non-finite regression targets at step {i}")
        if i == 0:
            mean = targets.mean(axis=0)
            return np.broadcast_to(mean, targets.shape).copy()
        if self._cache_i != i:
            self._factorize(i)
        if self._cache_auto_ridge:
            self.auto_ridge_steps.add(i)
        flat = targets if targets.ndim == 2 else targets[:, None]
        fitted = self._cache.apply(flat)
        return fitted if targets.ndim == 2 else fitted[:, 0]


class _QrProjector:
    def __init__(self, q: np.ndarray):
        self.q = q

    def apply(self, targets: np.ndarray) -> np.ndarray:
        return self.q @ (self.q.T @ targets)


class _RidgeProjector:
    def __init__(self, X: np.ndarray, ridge: float):
        self.X = X
        gram = X.T @ X + ridge * np.eye(X.shape[1])
        self.gram_inv = np.linalg.inv(gram)

    def apply(self, targets: np.ndarray) -> np.ndarray:
        return self.X @ (self.gram_inv @ (self.X.T @ targets))


def _count_monomials(v: int, deg: int) -> int:
    from math import comb

    return comb(v + deg - 1, deg)


def regress_ce(
    ensemble: PathEnsemble,
    i: int,
    targets: np.ndarray,
    basis: BasisSpec,
    running_paths: np.ndarray | None = None,
) -> np.ndarray:
    """One-shot least-squares conditional expectation at grid index i."""
    return RegressionCE(ensemble, basis, running_paths).fit(i, targets)


@dataclass(frozen=True)
class TreeModel:
    """Recombining binomial lattice for the 1-D state X_t = x0 + sigma * W_t.

    Level i has i+1 nodes; node k carries W = sqrt(h) * (2k - i), each branch
    with probability 1/2. One-step expectations are exact averages, so the
    lattice serves as the exact oracle backend.
    """

    grid: TimeGrid
    x0: float = 0.0
    sigma: float = 1.0

    @property
    def levels(self) -> int:
        return self.grid.N + self.grid.M

    def w_nodes(self, level: int) -> np.ndarray:
        k = np.arange(level + 1, dtype=np.float64)
        return np.sqrt(self.grid.h) * (2.0 * k - level)

    def state_nodes(self, level: int) -> np.ndarray:
        return self.x0 + self.sigma * self.w_nodes(level)

    def node_probs(self, level: int) -> np.ndarray:
        """Exact reach probabilities at a level, built by forward halving."""
        p = np.array([1.0])
        for _ in range(level):
            nxt = np.zeros(p.size + 1)
            nxt[1:] += 0.5 * p
            nxt[:-1] += 0.5 * p
            p = nxt
        return p


def tree_ce(tree: TreeModel, level: int, values_next: np.ndarray) -> np.ndarray:
    """Exact one-step expectation: average of the up and down children."""
    if not (0 <= level < tree.levels):
        raise ConfigurationError(f"level {level} out of range [0, {tree.levels})")
    values_next = np.asarray(values_next, dtype=np.float64)
    if values_next.shape[0] != level + 2:
        raise ConfigurationError(
            f"expected {level + 2} node values at level {level + 1}, got {values_next.shape[0]}"
        )
    return 0.5 * (values_next[1:] + values_next[:-1])


def tree_rollback(tree: TreeModel, from_level: int, to_level: int, values: np.ndarray) -> np.ndarray:
    """Repeated one-step averaging from from_level down to to_level inclusive."""
    out = np.asarray(values, dtype=np.float64)
    for lvl in range(from_level - 1, to_level - 1, -1):
        out = tree_ce(tree, lvl, out)
    return out
