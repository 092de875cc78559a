"""Backward reflected sweeps with a frozen resistance path.

Both backends walk the grid from T down to 0. At each step the discrete
solution takes a predictor step with the driver (anticipated arguments read
from already-computed future values through the conditional-expectation
estimator) and is then projected onto the obstacle. The projection makes the
discrete reflection condition exact: the increment dK is positive only where
Y sits on the obstacle, so sum (Y - S) dK = 0 identically.

Only the resistance path k is frozen; no inner fixed point over (Y, Z) is
needed because the sweep is backward.
"""

from __future__ import annotations

import numpy as np

from .conditional import RegressionCE, tree_ce
from .errors import ValidationError
from .generators import GeneratorSpec, eval_f
from .problems import LatticeSolution, ProblemBundle, SolutionTriple
from .resistance import eval_G, eval_G_matrix


def _needs(gen: GeneratorSpec, arg: str) -> bool:
    return gen.reads(arg)


def backward_sweep(
    problem: ProblemBundle,
    frozen_k: np.ndarray,
    ce: RegressionCE | None = None,
    implicit_iters: int = 0,
) -> SolutionTriple:
    """Regression-backend sweep over the path ensemble.

    frozen_k: [P, L] resistance paths (typically a previous iterate's K).
    The Z estimator regresses the centred martingale increment
    (Y_{i+1} - E_i[Y_{i+1}]) * dW_i / h, which is exact for constant data.
    """
    grid, ens, gen = problem.grid, problem.ensemble, problem.gen
    delays, G = problem.delays, problem.G
    N, M, h, d, P = grid.N, grid.M, grid.h, ens.d, ens.P
    L = grid.n_points
    x = problem.state_map(ens.W)  # [P, L]

    Y = np.zeros((P, L))
    Z = np.zeros((P, L - 1, d))
    for i in range(N, L):
        Y[:, i] = problem.terminal.xi(grid.times[i], x[:, i])
    if problem.terminal.eta is not None:
        for i in range(N, L - 1):
            vals = np.asarray(problem.terminal.eta(grid.times[i], x[:, i]), dtype=np.float64)
            if vals.ndim == 1:
                Z[:, i, 0] = vals
            else:
                Z[:, i, :] = vals
    zeta = np.zeros((P, M))
    if problem.terminal.zeta is not None:
        for j, i in enumerate(range(N + 1, L)):
            zeta[:, j] = problem.terminal.zeta(grid.times[i], x[:, i])
        if M > 1 and float(np.diff(zeta, axis=1).min()) < -1e-12:
            raise ValidationError("zeta extension must be nondecreasing in t")

    s_T = problem.obstacle.eval(grid.times[N], x[:, N])
    bad = np.flatnonzero(Y[:, N] < s_T - 1e-12)
    if bad.size:
        raise ValidationError(
            f"terminal value below the obstacle at T on path {int(bad[0])}: "
            f"xi={Y[bad[0], N]} < S={s_T[bad[0]]}"
        )

    use_theta = _needs(gen, "theta")
    use_m = _needs(gen, "m") or _needs(gen, "mbar")
    g_cols: dict[int, int] = {}
    Gvals = None
    if use_m:
        needed = sorted(set(range(N)) | {int(delays.eps_idx[i]) for i in range(N)})
        g_cols = {idx: col for col, idx in enumerate(needed)}
        Gvals = eval_G_matrix(G, frozen_k, grid, np.array(needed, dtype=np.int64))

    if ce is None:
        running = frozen_k if problem.basis.kind == "state+running" else None
        ce = RegressionCE(ens, problem.basis, running_paths=running)

    dK = np.zeros((P, N))
    zeros = np.zeros(P)
    root_stderr = 0.0
    for i in range(N - 1, -1, -1):
        t_i = grid.times[i]
        cont = ce.fit(i, Y[:, i + 1])
        mart = Y[:, i + 1] - cont
        Z[:, i, :] = ce.fit(i, mart[:, None] * ens.dW[:, i, :]) / h

        if use_theta:
            j = int(delays.mu_idx[i])
            if j <= i:
                # degenerate (delta = 0) anticipation collapses onto the current
                # value; the explicit scheme proxies it by the continuation
                theta = np.abs(cont) if gen.anticipate_abs_y else cont
            else:
                tgt = np.abs(Y[:, j]) if gen.anticipate_abs_y else Y[:, j]
                theta = ce.fit(i, tgt)
        else:
            theta = zeros
        if gen.uses_anticipated_z:
            j = min(int(delays.nu_idx[i]), L - 2)  # Z has one fewer index than Y
            ztgt = np.sqrt((Z[:, j, :] ** 2).sum(axis=1)) if gen.anticipate_abs_z else Z[:, j, :]
            vartheta = ce.fit(i, ztgt)
        else:
            vartheta = zeros
        if use_m:
            m = Gvals[:, g_cols[i]]
            ei = int(delays.eps_idx[i])
            mbar = m if ei == i else ce.fit(i, Gvals[:, g_cols[ei]])
        else:
            m = mbar = zeros

        y_arg = cont
        f = eval_f(gen, t_i, y_arg, Z[:, i, :], theta, vartheta, m, mbar)
        for _ in range(implicit_iters):
            y_new = cont + h * f
            if float(np.abs(y_new - y_arg).max()) <= 1e-12:
                break
            y_arg = y_new
            f = eval_f(gen, t_i, y_arg, Z[:, i, :], theta, vartheta, m, mbar)
        ytilde = cont + h * f
        s = problem.obstacle.eval(t_i, x[:, i])
        Y[:, i] = np.maximum(ytilde, s)
        dK[:, i] = Y[:, i] - ytilde
        if i == 0:
            root_stderr = float(Y[:, 1].std() / np.sqrt(P))

    K = np.zeros((P, L))
    np.cumsum(dK, axis=1, out=K[:, 1 : N + 1])
    K[:, N + 1 :] = zeta
    diagnostics = {
        "dk_mean": dK.mean(axis=0),
        "dk_max": dK.max(axis=0) if N > 0 else np.zeros(0),
        "root_stderr": root_stderr,
        "auto_ridge_steps": sorted(ce.auto_ridge_steps),
        "k_terminal_gap": float(np.abs(K[:, N] - zeta[:, 0]).mean()) if M > 0 else 0.0,
    }
    return SolutionTriple(Y=Y, Z=Z, K=K, dK=dK, diagnostics=diagnostics)


def lattice_sweep(
    problem: ProblemBundle,
    frozen_k: np.ndarray,
    implicit_iters: int = 0,
) -> LatticeSolution:
    """Tree-backend sweep with exact one-step expectations.

    frozen_k is a deterministic time path (length L): the lattice state
    recombines, so pathwise reflection histories are not representable;
    the fixed-point loop refreezes the exact mean path instead.
    """
    grid, gen, tree = problem.grid, problem.gen, problem.tree
    delays, G = problem.delays, problem.G
    N, M, h = grid.N, grid.M, grid.h
    L = grid.n_points
    frozen_k = np.asarray(frozen_k, dtype=np.float64)
    if frozen_k.shape != (L,):
        raise ValidationError(
            f"lattice sweep needs a deterministic resistance path of length {L}, got {frozen_k.shape}"
        )
    sqrt_h = np.sqrt(h)

    Y: list = [None] * L
    Z: list = [None] * (L - 1)
    for i in range(N, L):
        Y[i] = np.asarray(problem.terminal.xi(grid.times[i], tree.state_nodes(i)), dtype=np.float64)
    for i in range(N, L - 1):
        if problem.terminal.eta is not None:
            Z[i] = np.asarray(problem.terminal.eta(grid.times[i], tree.state_nodes(i)), dtype=np.float64)
        else:
            Z[i] = np.zeros(i + 1)
    zeta_path = np.zeros(M)
    if problem.terminal.zeta is not None:
        for j, i in enumerate(range(N + 1, L)):
            vals = np.asarray(problem.terminal.zeta(grid.times[i], tree.state_nodes(i)), dtype=np.float64)
            if vals.size > 1 and float(np.ptp(vals)) > 1e-12:
                raise ValidationError("tree backend needs a deterministic (state-free) zeta extension")
            zeta_path[j] = vals.flat[0]
        if M > 1 and float(np.diff(zeta_path).min()) < -1e-12:
            raise ValidationError("zeta extension must be nondecreasing in t")

    s_T = problem.obstacle.eval(grid.times[N], tree.state_nodes(N))
    bad = np.flatnonzero(Y[N] < s_T - 1e-12)
    if bad.size:
        raise ValidationError(
            f"terminal value below the obstacle at T on node {int(bad[0])}: "
            f"xi={Y[N][bad[0]]} < S={s_T[bad[0]]}"
        )

    use_theta = _needs(gen, "theta")
    use_m = _needs(gen, "m") or _needs(gen, "mbar")

    def rollback(values: np.ndarray, from_level: int, to_level: int) -> np.ndarray:
        out = values
        for lvl in range(from_level - 1, to_level - 1, -1):
            out = tree_ce(tree, lvl, out)
        return out

    dK: list = [None] * N
    for i in range(N - 1, -1, -1):
        t_i = grid.times[i]
        cont = tree_ce(tree, i, Y[i + 1])
        z = (Y[i + 1][1:] - Y[i + 1][:-1]) / (2.0 * sqrt_h)
        Z[i] = z

        if use_theta:
            j = int(delays.mu_idx[i])
            if j <= i:
                theta = np.abs(cont) if gen.anticipate_abs_y else cont
            else:
                tgt = np.abs(Y[j]) if gen.anticipate_abs_y else Y[j]
                theta = rollback(tgt, j, i)
        else:
            theta = np.zeros(i + 1)
        if gen.uses_anticipated_z:
            j = min(int(delays.nu_idx[i]), L - 2)  # Z has one fewer index than Y
            ztgt = np.abs(Z[j]) if gen.anticipate_abs_z else Z[j]
            vartheta = rollback(ztgt, j, i)
        else:
            vartheta = np.zeros(i + 1)
        if use_m:
            m = eval_G(G, frozen_k, i, grid)
            mbar = eval_G(G, frozen_k, int(delays.eps_idx[i]), grid)  # deterministic path: CE is the value
        else:
            m = mbar = 0.0

        y_arg = cont
        f = eval_f(gen, t_i, y_arg, z[:, None], theta, vartheta, m, mbar)
        for _ in range(implicit_iters):
            y_new = cont + h * f
            if float(np.abs(y_new - y_arg).max()) <= 1e-12:
                break
            y_arg = y_new
            f = eval_f(gen, t_i, y_arg, z[:, None], theta, vartheta, m, mbar)
        ytilde = cont + h * f
        s = problem.obstacle.eval(t_i, tree.state_nodes(i))
        Y[i] = np.maximum(ytilde, s)
        dK[i] = Y[i] - ytilde

    level_probs = _level_probs(L)
    K_mean = np.zeros(L)
    for i in range(N):
        K_mean[i + 1] = K_mean[i] + float(np.dot(level_probs[i], dK[i]))
    K_mean[N + 1 :] = zeta_path
    diagnostics = {
        "dk_mean": np.array([float(np.dot(level_probs[i], dK[i])) for i in range(N)]),
        "dk_max": np.array([float(dK[i].max()) for i in range(N)]) if N > 0 else np.zeros(0),
        "k_terminal_gap": float(abs(K_mean[N] - zeta_path[0])) if M > 0 else 0.0,
        "root_stderr": 0.0,
    }
    return LatticeSolution(
        Y=Y, Z=Z, dK=dK, K_mean=K_mean, tree=tree, level_probs=level_probs, diagnostics=diagnostics
    )


def _level_probs(L: int) -> list:
    probs = [np.array([1.0])]
    for _ in range(L - 1):
        p = probs[-1]
        nxt = np.zeros(p.size + 1)
        nxt[1:] += 0.5 * p
        nxt[:-1] += 0.5 * p
        probs.append(nxt)
    return probs


def sweep(problem: ProblemBundle, frozen_k, ce=None, implicit_iters: int = 0):
    """Dispatch to the backend sweep."""
    if problem.backend == "tree":
        return lattice_sweep(problem, frozen_k, implicit_iters=implicit_iters)
    return backward_sweep(problem, frozen_k, ce=ce, implicit_iters=implicit_iters)


def warm_start_k(problem: ProblemBundle, rule: str = "zeta-extension-only", user_path=None):
    """Initial frozen resistance path: zeros on [0, T], optionally the zeta extension beyond."""
    grid = problem.grid
    L = grid.n_points
    if problem.backend == "tree":
        k0 = np.zeros(L)
        if rule == "user-supplied":
            if user_path is None:
                raise ValidationError("user-supplied warm start needs a path")
            k0 = np.asarray(user_path, dtype=np.float64).copy()
        elif rule == "zeta-extension-only" and problem.terminal.zeta is not None:
            for j, i in enumerate(range(grid.N + 1, L)):
                vals = np.asarray(problem.terminal.zeta(grid.times[i], problem.tree.state_nodes(i)))
                k0[i] = vals.flat[0]
        elif rule not in ("zero", "zeta-extension-only"):
            raise ValidationError(f"unknown warm start rule {rule!r}")
        return k0
    P = problem.ensemble.P
    k0 = np.zeros((P, L))
    if rule == "user-supplied":
        if user_path is None:
            raise ValidationError("user-supplied warm start needs a path")
        user_path = np.asarray(user_path, dtype=np.float64)
        k0 = np.broadcast_to(user_path, (P, L)).copy() if user_path.ndim == 1 else user_path.copy()
    elif rule == "zeta-extension-only" and problem.terminal.zeta is not None:
        x = problem.state_map(problem.ensemble.W)
        for i in range(grid.N + 1, L):
            k0[:, i] = problem.terminal.zeta(grid.times[i], x[:, i])
    elif rule not in ("zero", "zeta-extension-only"):
        raise ValidationError(f"unknown warm start rule {rule!r}")
    return k0
