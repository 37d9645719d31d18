"""Entropic optimal transport between feature sequences.

Sequences are d x L matrices with uniform mass on each column. Each
column can carry its normalised position, so the transport cost also
penalises moving mass between distant positions.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field

import numpy as np

from .numkit import LossResult

NORM_FLOOR = 1e-12


@dataclass
class OtConfig:
    lam: float = 1.0
    p: float = 2.0
    gamma: float = 1.0
    max_iter: int = 5000
    tol: float = 1e-9
    debias: bool = True

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be > 0")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")

    # "lambda" is the public key name; ``lam`` only because of the keyword
    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "OtConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        return cls(**d)


@dataclass
class TransportPlan:
    plan: np.ndarray
    transport_cost: float
    objective: float
    iterations: int
    converged: bool
    f: np.ndarray
    g: np.ndarray
    violations: list = field(default_factory=list)


def normalized_positions(L: int) -> np.ndarray:
    """Positions (i-1)/(L-1), i=1..L; a lone element sits at 0."""
    if L < 1:
        raise ValueError("sequence length must be >= 1")
    if L == 1:
        return np.zeros(1)
    return np.arange(L) / (L - 1)


def augment_positions(U, gamma: float) -> np.ndarray:
    """Append gamma * normalised position as an extra feature row."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    U = np.asarray(U, dtype=np.float64)
    return np.vstack([U, gamma * normalized_positions(U.shape[1])[None, :]])


def _lp_cost(Ua: np.ndarray, Va: np.ndarray, p: float):
    diff = Ua.T[:, None, :] - Va.T[None, :, :]  # m x n x d
    if p == 2:
        C = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    elif p == 1:
        C = np.abs(diff).sum(-1)
    else:
        C = (np.abs(diff) ** p).sum(-1) ** (1.0 / p)
    return C, diff


def pairwise_cost(U, V, p: float = 2.0, gamma: float = 0.0) -> np.ndarray:
    """C_ij = (||u_i - v_j||_p^p + gamma^p |s_i - t_j|^p)^(1/p)."""
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if U.shape[0] != V.shape[0]:
        raise ValueError(f"feature dimensions differ: {U.shape[0]} vs {V.shape[0]}")
    if p < 1:
        raise ValueError("p must be >= 1")
    C, _ = _lp_cost(augment_positions(U, gamma), augment_positions(V, gamma), p)
    return C


def explicit_positional_cost(U, V, p: float, gamma: float) -> np.ndarray:
    """Same matrix as ``pairwise_cost``, built term by term without augmentation."""
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    s = normalized_positions(U.shape[1])
    t = normalized_positions(V.shape[1])
    C = np.empty((U.shape[1], V.shape[1]))
    for i in range(U.shape[1]):
        for j in range(V.shape[1]):
            feat = np.sum(np.abs(U[:, i] - V[:, j]) ** p)
            C[i, j] = (feat + gamma**p * abs(s[i] - t[j]) ** p) ** (1.0 / p)
    return C


def cost_backward(diff: np.ndarray, C: np.ndarray, G: np.ndarray, p: float):
    """Pull dL/dC back onto both point sets (un-augmented rows included)."""
    if p == 1:
        W = np.sign(diff)
    elif p == 2:
        W = diff / np.maximum(C, NORM_FLOOR)[..., None]
    else:
        Cf = np.maximum(C, NORM_FLOOR)[..., None]
        W = np.sign(diff) * (np.abs(diff) / Cf) ** (p - 1)
    GW = G[..., None] * W
    grad_u = GW.sum(axis=1).T
    grad_v = -GW.sum(axis=0).T
    return grad_u, grad_v


def _lse_rows(M: np.ndarray) -> np.ndarray:
    mx = M.max(axis=1)
    return mx + np.log(np.exp(M - mx[:, None]).sum(axis=1))


def sinkhorn(a, b, C, cfg: OtConfig | None = None, **overrides) -> TransportPlan:
    """Log-domain Sinkhorn for min <C,Z> - lam*H(Z), H(Z) = -sum Z(log Z - 1).

    Alternating row/column scaling of exp(-C/lam), carried out on dual
    potentials f, g with Z_ij = exp((f_i + g_j - C_ij)/lam). When lam is
    small against the cost range the potentials are first warm-started by
    halving lam down from the cost range. ``violations`` records, for every
    sweep at the target lam, the l1 marginal error; it upper-bounds the
    l-inf error and never increases from one sweep to the next.
    """
    cfg = cfg or OtConfig()
    if overrides:
        cfg = OtConfig(**{**asdict(cfg), **overrides})
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    if C.shape != (a.size, b.size):
        raise ValueError(f"cost shape {C.shape} does not match marginals ({a.size}, {b.size})")
    if np.any(a <= 0) or np.any(b <= 0):
        raise ValueError("marginals must be positive")
    if abs(a.sum() - 1) > 1e-12 or abs(b.sum() - 1) > 1e-12:
        raise ValueError("marginals must each sum to 1")
    if not np.all(np.isfinite(C)):
        raise ValueError("cost matrix must be finite")

    lam = cfg.lam
    la, lb = np.log(a), np.log(b)
    F = np.zeros(a.size)
    G = np.zeros(b.size)
    spread = float(C.max() - C.min())
    stage = spread
    while stage > ANNEAL_RATIO * lam:
        F, G, _, _ = _run_sweeps(la, lb, C, F, G, stage, ANNEAL_SWEEPS, ANNEAL_TOL)
        stage *= 0.5

    F, G, violations, converged = _run_sweeps(la, lb, C, F, G, lam, cfg.max_iter, cfg.tol)
    logZ = (F[:, None] + G[None, :] - C) / lam
    Z = np.exp(logZ)
    transport = float((C * Z).sum())
    neg_entropy = float((Z * (logZ - 1.0)).sum())
    return TransportPlan(
        plan=Z,
        transport_cost=transport,
        objective=transport + lam * neg_entropy,
        iterations=len(violations),
        converged=converged,
        f=F,
        g=G,
        violations=violations,
    )


ANNEAL_RATIO = 50.0
ANNEAL_SWEEPS = 50
ANNEAL_TOL = 1e-3
STALL_WINDOW = 10
ABSORB_AT = 30.0
NEWTON_RIDGE = 1e-10


def _run_sweeps(la, lb, C, F, G, lam, max_iter, tol):
    # Cs is C/lam with the potentials absorbed, so the live potentials fs, gs
    # stay O(1) and logZ is never formed by cancelling large numbers
    a, b = np.exp(la), np.exp(lb)
    Cs = (C - F[:, None] - G[None, :]) / lam
    fs = np.zeros(a.size)
    gs = np.zeros(b.size)
    violations: list[float] = []
    converged = False
    last_newton_fail = -STALL_WINDOW
    for it in range(max_iter):
        step = None
        stalled = (
            len(violations) >= STALL_WINDOW
            and violations[-1] > 0.5 * violations[-STALL_WINDOW]
            and it - last_newton_fail >= STALL_WINDOW
        )
        if stalled:
            step = _newton_step(la, lb, Cs, gs, violations[-1])
            if step is None:
                last_newton_fail = it
        if step is not None:
            fs, gs, err = step
        else:
            fs = la - _lse_rows(gs[None, :] - Cs)
            gs = lb - _lse_rows((fs[:, None] - Cs).T)
            err = _violation(fs, gs, Cs, a, b)
        violations.append(err)
        if err <= tol:
            converged = True
            break
        if max(np.abs(fs).max(), np.abs(gs).max()) > ABSORB_AT:
            Cs = Cs - fs[:, None] - gs[None, :]
            F = F + lam * fs
            G = G + lam * gs
            fs = np.zeros(a.size)
            gs = np.zeros(b.size)
    return F + lam * fs, G + lam * gs, violations, converged


def _violation(fs, gs, Cs, a, b) -> float:
    Z = np.exp(fs[:, None] + gs[None, :] - Cs)
    return float(max(np.abs(Z.sum(axis=1) - a).sum(), np.abs(Z.sum(axis=0) - b).sum()))


def _newton_step(la, lb, Cs, gs, current: float):
    """Damped Newton step on the column potential (rows kept exact).

    Used once alternating sweeps stall, which happens when the plan is
    close to a permutation and the sweep contraction rate approaches 1.
    Returns None unless the l1 violation strictly decreases, so the
    violation history stays non-increasing.
    """
    a, b = np.exp(la), np.exp(lb)
    fs = la - _lse_rows(gs[None, :] - Cs)
    Z = np.exp(fs[:, None] + gs[None, :] - Cs)
    c = Z.sum(axis=0)
    # Jacobian of the column sums is a graph Laplacian; building it from the
    # off-diagonal weights avoids cancelling c_j against sum_i Z_ij^2 / a_i
    W = Z.T @ (Z / a[:, None])
    np.fill_diagonal(W, 0.0)
    deg = W.sum(axis=1)
    resid = b - c
    # residuals at the summation-roundoff level carry no information
    resid[np.abs(resid) <= 16 * b.size * np.finfo(float).eps * b] = 0.0
    # ridge keeps numerically disconnected columns from amplifying roundoff
    # in their residual into astronomically large potential steps
    J = np.diag(deg * (1.0 + NEWTON_RIDGE) + NEWTON_RIDGE * deg.max()) - W
    # the potential is defined up to a constant; pin the last coordinate
    try:
        delta = np.linalg.solve(J[:-1, :-1], resid[:-1])
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(delta)):
        return None
    delta = np.append(delta, 0.0)
    t = 1.0
    for _ in range(60):
        g_new = gs + t * delta
        f_new = la - _lse_rows(g_new[None, :] - Cs)
        err = _violation(f_new, g_new, Cs, a, b)
        if err < current:
            return f_new, g_new, err
        t *= 0.5
    return None


def uniform(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def exact_ot_cost(C) -> float:
    """Exact uniform square OT: the optimum is a permutation (Birkhoff)."""
    C = np.asarray(C, dtype=np.float64)
    n = C.shape[0]
    if C.shape != (n, n):
        raise ValueError("permutation oracle needs a square cost matrix")
    if n > 8:
        raise ValueError("permutation oracle refuses n > 8")
    perms = np.array(list(itertools.permutations(range(n))))
    return float(C[np.arange(n), perms].sum(axis=1).min() / n)


def exact_ot_bruteforce(U, V, p: float = 2.0, gamma: float = 0.0) -> float:
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if U.shape[1] != V.shape[1]:
        raise ValueError("permutation oracle needs equal-size clouds")
    return exact_ot_cost(pairwise_cost(U, V, p, gamma))


def _entropic(Ua: np.ndarray, Va: np.ndarray, cfg: OtConfig):
    C, diff = _lp_cost(Ua, Va, cfg.p)
    sol = sinkhorn(uniform(Ua.shape[1]), uniform(Va.shape[1]), C, cfg)
    gu, gv = cost_backward(diff, C, sol.plan, cfg.p)
    return sol, gu, gv


def wasserstein_loss(U, V, cfg: OtConfig | None = None) -> LossResult:
    """Entropic OT objective between two sequences, optionally debiased.

    Gradients use the envelope property dW/dC = Z*, so Sinkhorn iterations
    are never differentiated. ``info`` carries the plan and transport cost
    of the cross term.
    """
    cfg = cfg or OtConfig()
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if U.shape[0] != V.shape[0]:
        raise ValueError(f"feature dimensions differ: {U.shape[0]} vs {V.shape[0]}")
    d = U.shape[0]
    Ua = augment_positions(U, cfg.gamma)
    Va = augment_positions(V, cfg.gamma)

    sol, gu, gv = _entropic(Ua, Va, cfg)
    value = sol.objective
    converged = sol.converged
    if cfg.debias:
        su, su1, su2 = _entropic(Ua, Ua, cfg)
        sv, sv1, sv2 = _entropic(Va, Va, cfg)
        value -= 0.5 * (su.objective + sv.objective)
        gu = gu - 0.5 * (su1 + su2)
        gv = gv - 0.5 * (sv1 + sv2)
        converged = converged and su.converged and sv.converged
    return LossResult(
        value=float(value),
        grad_u=gu[:d],
        grad_v=gv[:d],
        info={
            "plan": sol.plan,
            "transport_cost": sol.transport_cost,
            "iterations": sol.iterations,
            "converged": converged,
        },
    )


def wasserstein_from_cost(C, cfg: OtConfig | None = None) -> float:
    """Undebiased objective for a prebuilt cost matrix (used to cross-check augmentation)."""
    cfg = cfg or OtConfig()
    C = np.asarray(C, dtype=np.float64)
    return sinkhorn(uniform(C.shape[0]), uniform(C.shape[1]), C, cfg).objective

