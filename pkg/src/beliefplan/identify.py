"""Executable goal-identification theory.

Behavioral residuals: under a candidate goal, the composed predictor
``F_g(a) = policy(dynamics(belief_from_action(a, g), a, g), g)`` maps each
action to the next; the stacked prediction gaps over a horizon give a
per-goal residual norm. Identification picks the codebook row with the
smallest norm. The remaining operations quantify when that is guaranteed to
be the true goal: mismatch energy between the ego's models and the partner's,
Jacobian-based margin lower bounds, sliding-window excitation constants, and
the induced sufficient horizon.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, ModeError, UnidentifiableError


@dataclass
class GoalCodebook:
    """K distinct goal rows; separation is the minimum pairwise distance."""

    rows: np.ndarray  # (K, d_g)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2 or self.rows.shape[0] < 2:
            raise ArgumentError("codebook needs at least 2 rows")
        d = self.rows[:, None, :] - self.rows[None, :, :]
        dist = np.sqrt((d * d).sum(-1))
        off = dist[~np.eye(self.rows.shape[0], dtype=bool)]
        if off.min() <= 0.0:
            raise ArgumentError("codebook rows must be distinct")
        self.separation = float(off.min())

    def __len__(self):
        return self.rows.shape[0]


@dataclass
class BehaviorModels:
    """Vectorized callables over (B, d) batches.

    ``belief_from_action(a, g) -> b``, ``dynamics(b, a, g) -> b``,
    ``policy(b, g) -> a``.
    """

    belief_from_action: callable
    dynamics: callable
    policy: callable

    def predictor(self, a: np.ndarray, g: np.ndarray) -> np.ndarray:
        b = self.belief_from_action(a, g)
        return self.policy(self.dynamics(b, a, g), g)

    @classmethod
    def from_artifact(cls, world, inv):
        """Adapter over the trained world model and inverse models."""
        return cls(
            belief_from_action=lambda a, g: inv.belief_readout(a, g),
            dynamics=lambda b, a, g: world.dynamics(b, a, g),
            policy=lambda b, g: world.policy(b, g),
        )


class ResidualMap:
    """The stacked residual as a vectorized function of the goal."""

    def __init__(self, actions: np.ndarray, models: BehaviorModels):
        actions = np.asarray(actions, dtype=np.float64)
        if actions.ndim != 2 or actions.shape[0] < 2:
            raise ArgumentError("need an action sequence with horizon >= 2")
        self.actions = actions
        self.models = models
        self.horizon = actions.shape[0]
        self.act_dim = actions.shape[1]

    def stacks(self, goals: np.ndarray) -> np.ndarray:
        """(B, (H-1) * act_dim) stacked residuals for (B, d_g) goals."""
        goals = np.atleast_2d(np.asarray(goals, dtype=np.float64))
        B = goals.shape[0]
        out = np.empty((B, (self.horizon - 1) * self.act_dim))
        for t in range(self.horizon - 1):
            a_t = np.broadcast_to(self.actions[t], (B, self.act_dim))
            pred = self.models.predictor(a_t, goals)
            out[:, t * self.act_dim : (t + 1) * self.act_dim] = self.actions[t + 1] - pred
        return out

    def norms(self, goals: np.ndarray) -> np.ndarray:
        s = self.stacks(goals)
        return np.sqrt((s * s).sum(axis=1))

    def jacobian(self, g: np.ndarray, fd_step: float = 1e-4) -> np.ndarray:
        """Central finite-difference Jacobian, relative step per coordinate."""
        g = np.asarray(g, dtype=np.float64)
        if fd_step <= 0:
            raise ArgumentError("finite-difference step must be positive")
        d = g.shape[0]
        steps = fd_step * np.maximum(1.0, np.abs(g))
        pts = np.repeat(g[None], 2 * d, axis=0)
        for i in range(d):
            pts[2 * i, i] += steps[i]
            pts[2 * i + 1, i] -= steps[i]
        stacks = self.stacks(pts)
        return np.stack(
            [(stacks[2 * i] - stacks[2 * i + 1]) / (2 * steps[i]) for i in range(d)],
            axis=1,
        )

    def step_jacobians(self, g: np.ndarray, fd_step: float = 1e-4) -> np.ndarray:
        """(H-1, act_dim, d_g) per-step residual Jacobians at ``g``."""
        full = self.jacobian(g, fd_step)
        return full.reshape(self.horizon - 1, self.act_dim, g.shape[0])


@dataclass
class ResidualStack:
    """Per-step residuals, their stack, and the stacked norm."""

    residuals: np.ndarray  # (H-1, act_dim)
    stack: np.ndarray  # ((H-1)*act_dim,)
    norm: float


def residual_stack(actions: np.ndarray, g: np.ndarray, models: BehaviorModels) -> ResidualStack:
    rmap = ResidualMap(actions, models)
    s = rmap.stacks(g[None])[0]
    return ResidualStack(
        residuals=s.reshape(rmap.horizon - 1, rmap.act_dim),
        stack=s,
        norm=float(np.linalg.norm(s)),
    )


def identify_goal(actions: np.ndarray, codebook: GoalCodebook, models: BehaviorModels):
    """Nearest-residual identification.

    Returns (winner index, per-candidate residual norms, empirical margin
    relative to the winner). Ties break to the lowest index.
    """
    rmap = ResidualMap(actions, models)
    stacks = rmap.stacks(codebook.rows)
    norms = np.sqrt((stacks * stacks).sum(axis=1))
    k_hat = int(np.argmin(norms))
    diffs = stacks - stacks[k_hat]
    gaps = np.sqrt((diffs * diffs).sum(axis=1))
    gaps[k_hat] = np.inf
    return k_hat, norms, float(gaps.min())


def residual_margin(
    actions: np.ndarray, codebook: GoalCodebook, models: BehaviorModels, true_idx: int
) -> float:
    """Margin of the codebook at the true goal: min stacked-residual distance
    from any other row to the true row."""
    rmap = ResidualMap(actions, models)
    stacks = rmap.stacks(codebook.rows)
    diffs = stacks - stacks[true_idx]
    gaps = np.sqrt((diffs * diffs).sum(axis=1))
    gaps[true_idx] = np.inf
    return float(gaps.min())


@dataclass
class MismatchReport:
    policy_gaps: np.ndarray  # per-step ||policy mismatch at the true next belief||
    dynamics_gaps: np.ndarray  # per-step ||dynamics mismatch at the true belief||
    belief_gaps: np.ndarray  # per-step ||inverse belief - true belief||
    eps: np.ndarray  # dynamics gap + xi_dyn * belief gap
    xi_policy: float
    xi_dynamics: float
    total: float  # aggregate behavioral mismatch

    def recompute_total(self) -> float:
        return float(np.sqrt(((self.policy_gaps + self.xi_policy * self.eps) ** 2).sum()))


def mismatch_energy(
    ego: BehaviorModels,
    other: BehaviorModels,
    actions: np.ndarray,
    true_beliefs: np.ndarray | None,
    g_star: np.ndarray,
    xi_policy: float,
    xi_dynamics: float,
) -> MismatchReport:
    """Behavioral mismatch between the ego's models and the partner's, along
    the partner's own trajectory. White-box only: requires the partner's true
    beliefs aligned with the actions (belief t produced action t)."""
    if true_beliefs is None:
        raise ModeError(
            "mismatch energy needs the partner's true beliefs; run in "
            "white-box simulation mode"
        )
    actions = np.asarray(actions, dtype=np.float64)
    true_beliefs = np.asarray(true_beliefs, dtype=np.float64)
    H = actions.shape[0]
    if H < 2:
        raise ArgumentError("need horizon >= 2")
    if true_beliefs.shape[0] != H:
        raise ArgumentError("need one true belief per action")
    g = np.broadcast_to(g_star, (H - 1, g_star.shape[-1]))
    b_t = true_beliefs[:-1]
    b_next = true_beliefs[1:]
    a_t = actions[:-1]

    d_pi = other.policy(b_next, g) - ego.policy(b_next, g)
    policy_gaps = np.linalg.norm(d_pi, axis=1)
    d_dyn = ego.dynamics(b_t, a_t, g) - other.dynamics(b_t, a_t, g)
    dynamics_gaps = np.linalg.norm(d_dyn, axis=1)
    d_belief = ego.belief_from_action(a_t, g) - b_t
    belief_gaps = np.linalg.norm(d_belief, axis=1)
    eps = dynamics_gaps + xi_dynamics * belief_gaps
    total = float(np.sqrt(((policy_gaps + xi_policy * eps) ** 2).sum()))
    return MismatchReport(
        policy_gaps, dynamics_gaps, belief_gaps, eps, xi_policy, xi_dynamics, total
    )


def lipschitz_estimate(fn, xs_a: np.ndarray, xs_b: np.ndarray, inflate: float = 1.2) -> float:
    """Empirical Lipschitz constant of ``fn`` over sampled input pairs,
    inflated by a safety factor."""
    ya, yb = fn(xs_a), fn(xs_b)
    num = np.linalg.norm(ya - yb, axis=1)
    den = np.linalg.norm(xs_a - xs_b, axis=1)
    keep = den > 1e-12
    if not np.any(keep):
        raise ArgumentError("all sampled pairs coincide")
    return float((num[keep] / den[keep]).max() * inflate)


@dataclass
class MarginReport:
    margin: float  # empirical margin at the true goal
    candidate_norms: np.ndarray  # d_H per codebook row
    sigma_min: float
    separation: float  # codebook min pairwise distance
    jacobian_lipschitz: float
    locality_radius: float  # sigma_min / L_J (inf for an exactly linear map)
    bound: float  # 0.5 * sigma_min * separation
    rows_inside: np.ndarray  # which rows lie inside the locality ball
    per_row_bound: np.ndarray  # 0.5 * sigma_min * ||g_k - g*||
    lipschitz_pairs: int


LINEAR_LJ_TOL = 1e-6


def margin_report_from_map(
    rmap_stacks,
    jacobian_fn,
    g_star: np.ndarray,
    codebook: GoalCodebook,
    true_idx: int,
    rng: np.random.Generator,
    n_pairs: int = 1024,
    inflate: float = 1.2,
    fd_step: float = 1e-4,
):
    """Core margin analysis over a residual map given as callables.

    ``rmap_stacks(goals) -> (B, D)`` and ``jacobian_fn(g) -> (D, d_g)``.
    """
    stacks = rmap_stacks(codebook.rows)
    norms = np.sqrt((stacks * stacks).sum(axis=1))
    diffs = stacks - stacks[true_idx]
    gaps = np.sqrt((diffs * diffs).sum(axis=1))
    gaps[true_idx] = np.inf
    margin = float(gaps.min())

    j_star = jacobian_fn(g_star)
    sigma_min = float(np.linalg.svd(j_star, compute_uv=False).min())

    # Lipschitz constant of the Jacobian over sampled goal pairs in the
    # region spanned by the codebook around the true goal
    radius = float(np.linalg.norm(codebook.rows - g_star, axis=1).max())
    radius = max(radius, fd_step)
    d_g = g_star.shape[0]
    ratios = np.empty(n_pairs)
    for i in range(n_pairs):
        u = rng.normal(size=d_g)
        v = rng.normal(size=d_g)
        g1 = g_star + radius * rng.uniform() * u / max(np.linalg.norm(u), 1e-12)
        g2 = g_star + radius * rng.uniform() * v / max(np.linalg.norm(v), 1e-12)
        dist = np.linalg.norm(g1 - g2)
        if dist < 1e-9:
            ratios[i] = 0.0
            continue
        dj = jacobian_fn(g1) - jacobian_fn(g2)
        ratios[i] = np.linalg.norm(dj, 2) / dist
    lj = float(ratios.max() * inflate)

    scale = max(float(np.linalg.norm(j_star, 2)), 1e-12)
    if lj < LINEAR_LJ_TOL * scale / max(radius, 1e-12):
        lj_eff = 0.0
        locality = np.inf
    else:
        lj_eff = lj
        locality = sigma_min / lj
    dists = np.linalg.norm(codebook.rows - g_star, axis=1)
    inside = dists <= locality
    inside[true_idx] = False
    per_row = 0.5 * sigma_min * dists
    return MarginReport(
        margin=margin,
        candidate_norms=norms,
        sigma_min=sigma_min,
        separation=codebook.separation,
        jacobian_lipschitz=lj_eff,
        locality_radius=locality,
        bound=0.5 * sigma_min * codebook.separation,
        rows_inside=inside,
        per_row_bound=per_row,
        lipschitz_pairs=n_pairs,
    )


def margin_lower_bound(
    actions: np.ndarray,
    g_star: np.ndarray,
    codebook: GoalCodebook,
    models: BehaviorModels,
    fd_step: float = 1e-4,
    rng: np.random.Generator | None = None,
    n_pairs: int = 1024,
) -> MarginReport:
    """Margin analysis of the behavioral residual map induced by ``models``."""
    if fd_step <= 0:
        raise ArgumentError("finite-difference step must be positive")
    rmap = ResidualMap(actions, models)
    rng = rng or np.random.default_rng(0)
    true_idx = int(np.argmin(np.linalg.norm(codebook.rows - g_star, axis=1)))
    return margin_report_from_map(
        rmap.stacks,
        lambda g: rmap.jacobian(g, fd_step),
        g_star,
        codebook,
        true_idx,
        rng,
        n_pairs=n_pairs,
        fd_step=fd_step,
    )


def pe_constant(
    actions: np.ndarray,
    g_star: np.ndarray,
    models: BehaviorModels,
    m: int,
    fd_step: float = 1e-4,
) -> float:
    """Sliding-window persistence-of-excitation constant.

    Smallest eigenvalue, over all length-m windows, of the summed per-step
    residual-Jacobian Gram matrices at the true goal.
    """
    if m < 1:
        raise ArgumentError("window length must be >= 1")
    rmap = ResidualMap(actions, models)
    n_steps = rmap.horizon - 1
    if n_steps < m:
        raise ArgumentError("horizon too short for a single window")
    g_jacs = rmap.step_jacobians(g_star, fd_step)
    grams = np.einsum("tad,tae->tde", g_jacs, g_jacs)
    beta = np.inf
    for k in range(n_steps - m + 1):
        w = grams[k : k + m].sum(axis=0)
        lam = float(np.linalg.eigvalsh(w)[0])
        beta = min(beta, lam)
    return max(beta, 0.0)


@dataclass
class HorizonReport:
    window: int
    excitation: float
    mismatch: float
    separation: float
    load: float  # (4 * mismatch / (separation * sqrt(excitation)))^2
    bound: int  # 1 + window * (floor(load) + 1)


def sufficient_horizon(
    mismatch: float, separation: float, excitation: float, window: int
) -> HorizonReport:
    """Closed-form sufficient horizon for robust identification."""
    if window < 1:
        raise ArgumentError("window length must be >= 1")
    if separation <= 0:
        raise ArgumentError("codebook separation must be positive")
    if excitation <= 0.0:
        raise UnidentifiableError(
            "excitation constant is zero: goal directions are unobservable"
        )
    load = (4.0 * mismatch / (separation * np.sqrt(excitation))) ** 2
    bound = 1 + window * (int(np.floor(load)) + 1)
    return HorizonReport(window, excitation, mismatch, separation, float(load), int(bound))
