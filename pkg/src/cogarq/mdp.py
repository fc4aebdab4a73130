"""Average-reward MDP over the compact protocol state.

The state couples a scheme-specific decoding phase with the tracked primary
ARQ pair (t, d) and the queue belief.  A scheme model supplies its phase
set, per-outcome reward, and phase update; everything else (feedback
distribution, ARQ dynamics, belief filtering) is shared.  The constrained
problem, maximize SU throughput subject to a floor on a PU reward
component, is solved by policy iteration inside a Lagrange-multiplier
bisection, with a final randomization between the two policies bracketing
the constraint.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.sparse.csgraph import connected_components

from .channel import RegionProbabilities
from .pu_system import PuConfig, PuFeedback, completion_indicator
from .virtual_state import (
    REWARD_COMPONENTS,
    CdPhase,
    CompactState,
    RewardVector,
    expected_pu_reward,
    next_belief,
    point_belief,
)

__all__ = [
    "MdpState",
    "AccessPolicy",
    "StateSpace",
    "Kernel",
    "EvalResult",
    "SolveReport",
    "InfeasibleConstraintError",
    "BeliefEscapeError",
    "enumerate_space",
    "build_kernel",
    "evaluate_policy",
    "solve_constrained",
    "stationary_distribution",
]


class MdpState(NamedTuple):
    """Hashable compact state: scheme phase tuple, ARQ pair, queue belief."""

    cd: tuple
    t: int
    d: int
    belief: tuple


class InfeasibleConstraintError(ValueError):
    """The PU reward floor cannot be met even by the always-idle SU."""


class BeliefEscapeError(RuntimeError):
    """Belief enumeration did not close on a finite set."""


@dataclass(frozen=True)
class AccessPolicy:
    """Per-state SU transmit probability."""

    probs: dict

    def __post_init__(self):
        for s, p in self.probs.items():
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"transmit probability {p!r} for {s} outside [0,1]")

    def prob(self, state: MdpState) -> float:
        return self.probs[state]


@dataclass
class StateSpace:
    """Enumerated states plus everything needed to build the kernel.

    `states` is the full product of the model's phase set with the
    reachable ARQ/belief triples (so its size is exactly their product);
    `reachable` marks the jointly-reachable subset the solver works on.
    """

    model: object
    pu_cfg: PuConfig
    probs: RegionProbabilities
    success_probs: tuple[float, float]
    pu_power: float
    states: list[MdpState]
    index: dict
    initial: MdpState
    beliefs: list[tuple]
    arq_triples: list[tuple]  # reachable (t, d, belief) combinations
    reachable: np.ndarray = field(default=None)  # type: ignore[assignment]

    @property
    def n(self) -> int:
        return len(self.states)


@dataclass
class Kernel:
    p: np.ndarray      # (n, 2, n) next-state distribution
    r_su: np.ndarray   # (n, 2) expected SU packets credited
    r_pu: np.ndarray   # (n, 2, 4) expected PU reward components


@dataclass
class EvalResult:
    su_throughput: float
    pu_reward: RewardVector
    stationary: np.ndarray
    multichain_warning: bool = False


@dataclass
class SolveReport:
    policy: AccessPolicy
    su_throughput: float
    pu_reward: RewardVector
    multiplier: float
    stationary: np.ndarray
    constraint_component: str
    constraint_min: float
    constraint_value: float
    feasible: bool
    multichain_warning: bool = False
    mix_weight: float | None = None


def _feedback_branches(t, d, belief, a_s, space):
    """(y_p, probability) triples with their completion flag and (t', d', belief')."""
    cfg = space.pu_cfg
    rho = space.success_probs[a_s]
    p_tx = sum(w * cfg.transmit_prob(t, d, q) for q, w in enumerate(belief) if w > 0.0)
    branches = []
    for y_p, p in (
        (PuFeedback.ACK, p_tx * rho),
        (PuFeedback.NACK, p_tx * (1.0 - rho)),
        (PuFeedback.IDLE, 1.0 - p_tx),
    ):
        if p <= 0.0:
            continue
        a_p = 1 if y_p != PuFeedback.IDLE else 0
        o = completion_indicator(t, d, y_p, cfg)
        t_n = (1 - o) * (t + a_p)
        d_n = (1 - o) * (d + (1 if t > 0 else a_p))
        bel_n = next_belief(t, d, belief, o, rho, cfg)
        branches.append((y_p, a_p, o, p, t_n, d_n, bel_n))
    return branches


def enumerate_space(
    model,
    pu_cfg: PuConfig,
    probs: RegionProbabilities,
    success_probs: tuple[float, float],
    initial_belief: tuple | None = None,
    pu_power: float = 1.0,
    max_beliefs: int = 512,
) -> StateSpace:
    """Breadth-first enumeration of the reachable (t, d, belief) triples,
    crossed with the model's full phase set.

    The phase set is taken as a product rather than pruned to joint
    reachability, so the space size is exactly |phases| times the number of
    ARQ/belief triples; unreachable combinations simply carry no stationary
    mass.
    """
    if initial_belief is None:
        initial_belief = point_belief(0, pu_cfg.q_max)
    space = StateSpace(
        model=model,
        pu_cfg=pu_cfg,
        probs=probs,
        success_probs=success_probs,
        pu_power=pu_power,
        states=[],
        index={},
        initial=MdpState(model.initial_cd(), 0, 0, tuple(initial_belief)),
        beliefs=[],
        arq_triples=[],
    )
    seen = {(0, 0, tuple(initial_belief))}
    frontier = [(0, 0, tuple(initial_belief))]
    beliefs = {tuple(initial_belief)}
    while frontier:
        t, d, bel = frontier.pop()
        for a_s in (0, 1):
            for _, _, _, _, t_n, d_n, bel_n in _feedback_branches(t, d, bel, a_s, space):
                key = (t_n, d_n, bel_n)
                if key not in seen:
                    seen.add(key)
                    frontier.append(key)
                    beliefs.add(bel_n)
                    if len(beliefs) > max_beliefs:
                        raise BeliefEscapeError(
                            f"more than {max_beliefs} distinct beliefs reached; "
                            "this configuration is unsupported by the MDP path"
                        )
    space.arq_triples = sorted(seen)
    space.beliefs = sorted(beliefs)
    cd_states = list(model.cd_states(pu_cfg))
    for t, d, bel in space.arq_triples:
        for cd in cd_states:
            s = MdpState(cd, t, d, bel)
            space.index[s] = len(space.states)
            space.states.append(s)
    if space.initial not in space.index:
        raise RuntimeError("initial state missing from enumeration")

    # joint reachability from the initial state under either action
    region_p = probs.as_array()
    reach = np.zeros(space.n, dtype=bool)
    stack = [space.initial]
    reach[space.index[space.initial]] = True
    while stack:
        s = stack.pop()
        for a_s in (0, 1):
            for _, a_p, o, _, t_n, d_n, bel_n in _feedback_branches(
                s.t, s.d, s.belief, a_s, space
            ):
                for y in range(1, 8):
                    if region_p[y - 1] == 0.0:
                        continue
                    nxt = MdpState(model.next_cd(s.cd, a_s, a_p, y, o), t_n, d_n, bel_n)
                    j = space.index[nxt]
                    if not reach[j]:
                        reach[j] = True
                        stack.append(nxt)
    space.reachable = reach
    return space


def build_kernel(space: StateSpace) -> Kernel:
    """Transition matrix and expected rewards for both SU actions.

    Marginalizes the PU feedback (which fixes access, completion, ARQ
    update, and belief update) against the outcome region drawn for the
    slot.  Rows sum to one by construction.
    """
    n = space.n
    model = space.model
    region_p = space.probs.as_array()
    p = np.zeros((n, 2, n))
    r_su = np.zeros((n, 2))
    r_pu = np.zeros((n, 2, 4))
    branch_cache: dict = {}
    for i, s in enumerate(space.states):
        for a_s in (0, 1):
            key = (s.t, s.d, s.belief, a_s)
            if key not in branch_cache:
                branch_cache[key] = _feedback_branches(s.t, s.d, s.belief, a_s, space)
            shadow = CompactState(CdPhase.U, 0, s.t, s.d, s.belief)
            r_pu[i, a_s] = expected_pu_reward(
                shadow, a_s, space.pu_cfg, space.success_probs, space.pu_power
            ).as_array()
            for _, a_p, o, p_b, t_n, d_n, bel_n in branch_cache[key]:
                for y in range(1, 8):
                    p_y = region_p[y - 1]
                    if p_y == 0.0:
                        continue
                    w = p_b * p_y
                    cd_n = model.next_cd(s.cd, a_s, a_p, y, o)
                    j = space.index[MdpState(cd_n, t_n, d_n, bel_n)]
                    p[i, a_s, j] += w
                    r_su[i, a_s] += w * model.reward(s.cd, a_s, a_p, y)
    return Kernel(p, r_su, r_pu)


# -- evaluation ------------------------------------------------------------------


def stationary_distribution(p: np.ndarray) -> np.ndarray:
    """Stationary distribution of an irreducible stochastic matrix."""
    n = p.shape[0]
    a = np.vstack([p.T - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def _policy_matrix(kernel: Kernel, mu: np.ndarray):
    p = (1.0 - mu)[:, None] * kernel.p[:, 0, :] + mu[:, None] * kernel.p[:, 1, :]
    r_su = (1.0 - mu) * kernel.r_su[:, 0] + mu * kernel.r_su[:, 1]
    r_pu = (1.0 - mu)[:, None] * kernel.r_pu[:, 0, :] + mu[:, None] * kernel.r_pu[:, 1, :]
    return p, r_su, r_pu


def _recurrent_stationary(p: np.ndarray, start: int):
    """Stationary distribution supported on a recurrent class reachable from
    `start`; flags when that class is not unique."""
    n = p.shape[0]
    support = p > 0.0
    n_comp, labels = connected_components(support, directed=True, connection="strong")
    closed = np.ones(n_comp, dtype=bool)
    for i in range(n):
        for j in np.nonzero(support[i])[0]:
            if labels[j] != labels[i]:
                closed[labels[i]] = False
    # reachability from start over the support graph
    seen = np.zeros(n, dtype=bool)
    seen[start] = True
    stack = [start]
    while stack:
        i = stack.pop()
        for j in np.nonzero(support[i])[0]:
            if not seen[j]:
                seen[j] = True
                stack.append(j)
    reach_closed = sorted({labels[i] for i in np.nonzero(seen)[0] if closed[labels[i]]})
    warning = len(reach_closed) != 1
    cls = reach_closed[0]
    members = np.nonzero(labels == cls)[0]
    sub = p[np.ix_(members, members)]
    pi_sub = stationary_distribution(sub)
    pi = np.zeros(n)
    pi[members] = pi_sub
    return pi, warning


def evaluate_policy(space: StateSpace, kernel: Kernel, policy) -> EvalResult:
    """Long-run average SU throughput and PU reward under a policy.

    Accepts an AccessPolicy or a raw probability vector.  If the induced
    chain is reducible, the evaluation is restricted to a recurrent class
    reachable from the initial state and a warning is flagged.
    """
    mu = _policy_vector(space, policy)
    p, r_su, r_pu = _policy_matrix(kernel, mu)
    pi, warning = _recurrent_stationary(p, space.index[space.initial])
    su = float(pi @ r_su)
    pu = RewardVector(*(pi @ r_pu).tolist())
    return EvalResult(su, pu, pi, warning)


def _policy_vector(space: StateSpace, policy) -> np.ndarray:
    if isinstance(policy, AccessPolicy):
        return np.array([policy.prob(s) for s in space.states])
    mu = np.asarray(policy, dtype=float)
    if mu.shape != (space.n,):
        raise ValueError(f"policy vector must have shape ({space.n},)")
    return mu


def _policy_from_vector(space: StateSpace, mu: np.ndarray) -> AccessPolicy:
    return AccessPolicy({s: float(mu[i]) for i, s in enumerate(space.states)})


# -- policy iteration and the constrained solve -----------------------------------


def _policy_iteration(p: np.ndarray, reward: np.ndarray, ref: int, init=None, max_iter=200):
    """Unconstrained average-reward policy iteration over deterministic policies.

    `p` has shape (n, 2, n) and `reward` (n, 2).  Returns the optimal
    action vector.  The improvement step keeps the incumbent action on
    ties, which guarantees termination on unichain models.  A singular
    evaluation (parallel recurrent classes under a degenerate policy) is
    retried with a vanishing uniform mixture, which restores a single
    chain whenever the uniform policy has one.
    """
    n = reward.shape[0]
    pol = np.zeros(n, dtype=int) if init is None else init.copy()
    rows = np.arange(n)
    for _ in range(max_iter):
        p_pol = p[rows, pol, :]
        r_pol = reward[rows, pol]
        a = np.zeros((n + 1, n + 1))
        a[:n, :n] = np.eye(n) - p_pol
        a[:n, n] = 1.0
        a[n, ref] = 1.0
        b = np.concatenate([r_pol, [0.0]])
        try:
            sol = np.linalg.solve(a, b)
        except np.linalg.LinAlgError:
            eps = 1e-9
            blend = (1.0 - eps) * p_pol + eps * 0.5 * (p[:, 0, :] + p[:, 1, :])
            a[:n, :n] = np.eye(n) - blend
            sol = np.linalg.solve(a, b)
        h = sol[:n]
        q = reward + p @ h  # (n, 2)
        better = q[rows, 1 - pol] > q[rows, pol] + 1e-10
        if not better.any():
            return pol
        pol = np.where(better, 1 - pol, pol)
    raise RuntimeError("policy iteration failed to converge")


def solve_constrained(
    space: StateSpace,
    kernel: Kernel,
    constraint_min: float,
    component: str = "throughput",
    lambda_tol: float = 1e-6,
    constraint_tol: float = 1e-4,
) -> SolveReport:
    """Maximize SU throughput subject to a floor on one PU reward component.

    The Lagrangian reward r_su + lambda * r_pu is maximized by policy
    iteration; lambda is bisected to the smallest multiplier whose optimal
    policy meets the floor, and the two bracketing deterministic policies
    are then mixed per state to land on the constraint.  An unattainable
    floor raises InfeasibleConstraintError.
    """
    if component not in REWARD_COMPONENTS:
        raise ValueError(f"unknown constraint component {component!r}")
    comp = REWARD_COMPONENTS.index(component)

    # the solver works on the jointly-reachable subset; product states that
    # no trajectory can visit keep the idle action and zero mass
    ridx = np.nonzero(space.reachable)[0]
    p_sub = kernel.p[np.ix_(ridx, np.arange(2), ridx)]
    r_su_sub = kernel.r_su[ridx]
    r_c_sub = kernel.r_pu[ridx, :, comp]
    ref = int(np.nonzero(ridx == space.index[space.initial])[0][0])

    def expand(pol_sub) -> np.ndarray:
        mu = np.zeros(space.n)
        mu[ridx] = pol_sub
        return mu

    idle = evaluate_policy(space, kernel, np.zeros(space.n))
    if idle.pu_reward.component(component) < constraint_min - 1e-12:
        raise InfeasibleConstraintError(
            f"PU {component} floor {constraint_min} exceeds the idle-SU value "
            f"{idle.pu_reward.component(component)}"
        )

    def solve_at(lam, init=None):
        pol = _policy_iteration(p_sub, r_su_sub + lam * r_c_sub, ref, init=init)
        res = evaluate_policy(space, kernel, expand(pol.astype(float)))
        return pol, res

    pol0, res0 = solve_at(0.0)
    if res0.pu_reward.component(component) >= constraint_min - 1e-12:
        policy = _policy_from_vector(space, expand(pol0.astype(float)))
        return SolveReport(
            policy=policy,
            su_throughput=res0.su_throughput,
            pu_reward=res0.pu_reward,
            multiplier=0.0,
            stationary=res0.stationary,
            constraint_component=component,
            constraint_min=constraint_min,
            constraint_value=res0.pu_reward.component(component),
            feasible=True,
            multichain_warning=res0.multichain_warning,
        )

    lam_lo, pol_lo = 0.0, pol0
    lam_hi = 1.0
    pol_hi, res_hi = solve_at(lam_hi, init=pol_lo)
    while res_hi.pu_reward.component(component) < constraint_min - 1e-12:
        lam_lo, pol_lo = lam_hi, pol_hi
        lam_hi *= 4.0
        if lam_hi > 1e9:
            raise RuntimeError("no multiplier reaches the constraint floor")
        pol_hi, res_hi = solve_at(lam_hi, init=pol_hi)
    while lam_hi - lam_lo > lambda_tol:
        mid = 0.5 * (lam_lo + lam_hi)
        pol_mid, res_mid = solve_at(mid, init=pol_hi)
        if res_mid.pu_reward.component(component) >= constraint_min - 1e-12:
            lam_hi, pol_hi, res_hi = mid, pol_mid, res_mid
        else:
            lam_lo, pol_lo = mid, pol_mid

    # Randomized mixing between the bracketing deterministic policies.
    lo_val = evaluate_policy(space, kernel, expand(pol_lo.astype(float))).pu_reward.component(component)
    if np.array_equal(pol_lo, pol_hi) or lo_val >= constraint_min - 1e-12:
        mu = (pol_hi if lo_val < constraint_min - 1e-12 else pol_lo).astype(float)
        mix = None
    else:
        a_lo, a_hi = 0.0, 1.0
        for _ in range(64):
            alpha = 0.5 * (a_lo + a_hi)
            mu_try = (1.0 - alpha) * pol_lo + alpha * pol_hi
            val = evaluate_policy(space, kernel, expand(mu_try)).pu_reward.component(component)
            if val >= constraint_min:
                a_hi = alpha
            else:
                a_lo = alpha
        mix = a_hi
        mu = (1.0 - a_hi) * pol_lo + a_hi * pol_hi
    mu = expand(mu)
    res = evaluate_policy(space, kernel, mu)
    value = res.pu_reward.component(component)
    if value < constraint_min - constraint_tol:
        raise RuntimeError(
            f"constrained solve missed the floor: {value} < {constraint_min}"
        )
    return SolveReport(
        policy=_policy_from_vector(space, mu),
        su_throughput=res.su_throughput,
        pu_reward=res.pu_reward,
        multiplier=lam_hi,
        stationary=res.stationary,
        constraint_component=component,
        constraint_min=constraint_min,
        constraint_value=value,
        feasible=True,
        multichain_warning=res.multichain_warning,
        mix_weight=mix,
    )
