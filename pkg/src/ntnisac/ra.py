"""
Beam-hopping resource allocation.

Each satellite splits ``N_C * beams`` OFDMA frames over its matched cells to
maximise sum_c M_c log(1 + rate_c x_c / N_T) with 0 <= x_c <= N_C. The
relaxation is a separable concave knapsack with one coupling constraint, so
the optimum has water-filling form x_c = clip(M_c / lam - N_T / rate_c, 0, N_C)
and lam is found by bisection. Integer allocations come from flooring,
handing out the leftover frames greedily by marginal gain, and a final
unit-transfer repair.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

import numpy as np

from .constants import UNMATCHED
from .matching import Matching, build_preferences, deferred_acceptance

log = logging.getLogger(__name__)


@dataclass
class LocalRAInstance:
    sat_id: int
    cell_ids: list[int]
    users: np.ndarray
    rates: np.ndarray
    n_comm: int
    beams: int
    n_total: int

    def __post_init__(self):
        self.users = np.asarray(self.users, dtype=float)
        self.rates = np.asarray(self.rates, dtype=float)
        if np.any(self.rates < 0):
            raise ValueError("estimated rates must be >= 0")
        if self.n_comm < 0 or self.beams < 0:
            raise ValueError("budget must be >= 0")

    @property
    def budget(self) -> int:
        return self.n_comm * self.beams


@dataclass
class RelaxedSolution:
    x: np.ndarray
    objective: float
    multiplier: float
    kkt_residual: float


def pf_objective(users, rates, x, n_total) -> float:
    return float(np.sum(np.asarray(users) * np.log1p(np.asarray(rates) * np.asarray(x) / n_total)))


def _alloc(lam, users, inv_rate_scaled, upper):
    return np.clip(users / lam - inv_rate_scaled, 0.0, upper)


def kkt_residual(inst: LocalRAInstance, x: np.ndarray, lam: float) -> float:
    """Largest violation of the optimality conditions, relative to the
    price scale (so it does not depend on the rate units)."""
    pos = inst.rates > 0
    if not pos.any():
        return 0.0
    grad = np.zeros_like(x)
    grad[pos] = inst.users[pos] / (inst.n_total / inst.rates[pos] + x[pos])
    scale = max(lam, float(grad.max()), 1e-300)
    tol = 1e-9 * inst.n_comm
    at_lo = x <= tol
    at_hi = x >= inst.n_comm - tol
    free = ~at_lo & ~at_hi
    viol = [0.0]
    if free.any():
        viol.append(float(np.max(np.abs(grad[free] - lam))))
    if at_lo.any():
        viol.append(float(np.max(np.maximum(grad[at_lo] - lam, 0.0))))
    if at_hi.any():
        viol.append(float(np.max(np.maximum(lam - grad[at_hi], 0.0))))
    slack = inst.budget - float(x.sum())
    viol.append(lam * slack / max(inst.budget, 1))
    return max(viol) / scale


def solve_local_relaxed(inst: LocalRAInstance) -> RelaxedSolution:
    n = len(inst.cell_ids)
    x = np.zeros(n)
    pos = inst.rates > 0
    budget = float(inst.budget)
    upper = float(inst.n_comm)
    if not pos.any() or budget <= 0 or upper <= 0:
        return RelaxedSolution(x, 0.0, 0.0, 0.0)

    m, r = inst.users[pos], inst.rates[pos]
    inv = inst.n_total / r
    if upper * len(m) <= budget:
        xp = np.full(len(m), upper)
        lam = 0.0
    else:
        # sum_x(lam) is non-increasing; at lam_hi every cell sits at 0
        lam_hi = float(np.max(m / inv))
        lam_lo = float(np.min(m / (inv + upper)))
        for _ in range(200):
            mid = math.sqrt(lam_lo * lam_hi) if lam_lo > 0 else 0.5 * lam_hi
            if _alloc(mid, m, inv, upper).sum() > budget:
                lam_lo = mid
            else:
                lam_hi = mid
            if lam_hi - lam_lo <= 1e-15 * lam_hi:
                break
        # polish: fix the active set and solve the price in closed form
        lam = lam_hi
        for _ in range(5):
            xp = _alloc(lam, m, inv, upper)
            free = (xp > 0) & (xp < upper)
            if not free.any():
                break
            rest = budget - upper * np.count_nonzero(xp >= upper)
            new = float(m[free].sum() / (rest + inv[free].sum()))
            if new == lam:
                break
            lam = new
        xp = _alloc(lam, m, inv, upper)
        excess = xp.sum() - budget
        if excess > 0:
            # round-off only: take it from the largest free coordinate
            j = int(np.argmax(np.where(xp < upper, xp, -1.0)))
            xp[j] = max(xp[j] - excess, 0.0)
    x[pos] = xp
    obj = pf_objective(inst.users, inst.rates, x, inst.n_total)
    return RelaxedSolution(x, obj, lam, kkt_residual(inst, x, lam))


@dataclass
class BeamHoppingPattern:
    x: dict[tuple[int, int], int] = field(default_factory=dict)

    def load(self, sat_id: int) -> int:
        return sum(v for (s, _), v in self.x.items() if s == sat_id)

    def update(self, other: "BeamHoppingPattern") -> None:
        self.x.update(other.x)

    def validate(self, matching: Matching, n_comm: int, beams: Mapping[int, int]) -> None:
        for (s, c), v in self.x.items():
            if not 0 <= v <= n_comm:
                raise ValueError(f"x[{s},{c}] = {v} outside [0, {n_comm}]")
            if v > 0 and matching.partner(c) != s:
                raise ValueError(f"frames allocated to unmatched pair ({s}, {c})")
        totals: dict[int, int] = {}
        for (s, _), v in self.x.items():
            totals[s] = totals.get(s, 0) + v
        for s, tot in totals.items():
            if tot > n_comm * beams[s]:
                raise ValueError(f"satellite {s} allocates {tot} > {n_comm * beams[s]}")


def round_allocation(fractional: np.ndarray, inst: LocalRAInstance) -> np.ndarray:
    """Floor, then hand out leftover frames one at a time to the largest
    marginal gain (ties to the earlier cell)."""
    frac = np.asarray(fractional, dtype=float)
    x = np.floor(frac + 1e-9).astype(int)
    x = np.clip(x, 0, inst.n_comm)
    left = inst.budget - int(x.sum())
    if left <= 0:
        return x

    def gain(i):
        if x[i] >= inst.n_comm or inst.rates[i] <= 0:
            return 0.0
        a = inst.rates[i] / inst.n_total
        return inst.users[i] * (math.log1p(a * (x[i] + 1)) - math.log1p(a * x[i]))

    heap = [(-gain(i), inst.cell_ids[i], i) for i in range(len(x))]
    heapq.heapify(heap)
    while left > 0 and heap:
        g, cid, i = heapq.heappop(heap)
        if -g <= 0:
            break
        x[i] += 1
        left -= 1
        heapq.heappush(heap, (-gain(i), cid, i))
    return x


def improve_allocation(x: np.ndarray, inst: LocalRAInstance) -> np.ndarray:
    """Unit-transfer local search on an integer allocation.

    For a separable concave objective under one budget constraint, a point
    that no single-frame addition or transfer improves is a global integer
    optimum. Flooring can overshoot that optimum when rate * x / N_T is
    large (the jump from 0 to 1 frame dominates), which this step repairs.
    """
    x = np.asarray(x, dtype=int).copy()
    a = inst.rates / inst.n_total
    m = inst.users
    live = inst.rates > 0

    def up():
        return np.where(live & (x < inst.n_comm), m * (np.log1p(a * (x + 1)) - np.log1p(a * x)), -np.inf)

    def down():
        loss = m * (np.log1p(a * x) - np.log1p(a * np.maximum(x - 1, 0)))
        return np.where(x > 0, loss, np.inf)

    tol = 1e-12 * max(pf_objective(m, inst.rates, x, inst.n_total), 1.0)
    for _ in range(inst.budget * max(len(x), 1) + 1):
        g, d = up(), down()
        i = int(np.argmax(g))
        if x.sum() < inst.budget and g[i] > tol:
            x[i] += 1
            continue
        j = int(np.argmin(d))
        if i == j:
            # concavity makes a self-transfer useless; try the runners-up
            g2 = g.copy()
            g2[i] = -np.inf
            d2 = d.copy()
            d2[j] = np.inf
            i2, j2 = int(np.argmax(g2)), int(np.argmin(d2))
            i, j = (i2, j) if g2[i2] - d[j] >= g[i] - d2[j2] else (i, j2)
        if not g[i] - d[j] > tol:
            break
        x[i] += 1
        x[j] -= 1
    return x


def solve_local(inst: LocalRAInstance) -> tuple[np.ndarray, RelaxedSolution]:
    """Relax, round greedily, then repair the rounding by unit transfers."""
    rel = solve_local_relaxed(inst)
    return improve_allocation(round_allocation(rel.x, inst), inst), rel


# ---------------------------------------------------------------------------
# benchmarks


class EstimationMode(str, Enum):
    PROPOSED = "proposed"
    NO_SENSING = "no_sensing"
    FULL_CSI = "full_csi"

    @property
    def has_overhead(self) -> bool:
        return self is EstimationMode.PROPOSED


def baseline_modes(mode: str | EstimationMode):
    """Return a function (link_table, sensed_snr) -> snr estimates.

    ``sensed_snr`` is the array of pilot-based estimates (only used on rows
    of sensing satellites, and only in the proposed mode).
    """
    mode = EstimationMode(mode)

    def transform(table, sensed_snr=None):
        if mode is EstimationMode.FULL_CSI:
            return table.snr_linear.copy()
        if mode is EstimationMode.NO_SENSING or sensed_snr is None:
            return table.snr_norain_linear.copy()
        return np.where(table.sensing, sensed_snr, table.snr_norain_linear)

    return transform


@dataclass
class CentralizedResult:
    matching: Matching
    pattern: BeamHoppingPattern
    objective: float
    history: list[float]
    converged: bool


def _sat_solution(sat, cells, users, rates, n_comm, beams, n_total):
    inst = LocalRAInstance(sat, list(cells), [users[c] for c in cells], [rates[(sat, c)] for c in cells],
                           n_comm, beams, n_total)
    return solve_local_relaxed(inst), inst


def solve_centralized(
    rates: Mapping[tuple[int, int], float],
    users: Mapping[int, float],
    quotas: Mapping[int, int],
    n_comm: int,
    beams: Mapping[int, int],
    n_total: int,
    n_iter: int = 20,
    initial: Matching | None = None,
) -> CentralizedResult:
    """Joint matching + allocation by block-coordinate ascent.

    Starts from the deferred-acceptance matching on the same rates (or
    ``initial``); each outer iteration visits the cells in id order and moves
    a cell to the satellite whose current price makes it most valuable,
    keeping the move only if the exact relaxed objective improves. The
    objective is therefore non-decreasing over iterations.
    """
    pairs = {k: v for k, v in rates.items() if v > 0}
    by_cell: dict[int, list[int]] = {}
    for s, c in pairs:
        by_cell.setdefault(c, []).append(s)
    if initial is None:
        prefs = build_preferences((c, s, r) for (s, c), r in pairs.items())
        initial, _ = deferred_acceptance(prefs, quotas)
    assign = {c: initial.partner(c) for c in by_cell}
    members: dict[int, list[int]] = {}
    for c, s in assign.items():
        if s != UNMATCHED:
            members.setdefault(s, []).append(c)

    sols = {}

    def solve(s):
        cells = sorted(members.get(s, []))
        sols[s] = _sat_solution(s, cells, users, pairs, n_comm, beams[s], n_total)[0]
        return sols[s]

    for s in list(members):
        solve(s)

    def total():
        return sum(sol.objective for s, sol in sols.items() if members.get(s))

    history = [total()]
    converged = False
    for _ in range(n_iter):
        moved = False
        for c in sorted(by_cell):
            cur = assign[c]
            # price-based value of cell c at each candidate satellite
            cand = []
            for s in sorted(by_cell[c]):
                if s != cur and len(members.get(s, [])) >= quotas.get(s, 0):
                    continue
                lam = sols[s].multiplier if s in sols and members.get(s) else 0.0
                inv = n_total / pairs[(s, c)]
                xs = n_comm if lam <= 0 else min(max(users[c] / lam - inv, 0.0), n_comm)
                val = users[c] * math.log1p(pairs[(s, c)] * xs / n_total) - lam * xs
                cand.append((val, s))
            cand.sort(key=lambda e: (-e[0], e[1]))
            for val, s in cand[:2]:
                if s == cur:
                    break
                # exact check of the move
                before = total()
                old_sols = {k: sols.get(k) for k in (cur, s)}
                if cur != UNMATCHED:
                    members[cur].remove(c)
                members.setdefault(s, []).append(c)
                for k in (cur, s):
                    if k != UNMATCHED:
                        solve(k)
                if total() > before * (1 + 1e-12) + 1e-12:
                    assign[c] = s
                    moved = True
                    break
                members[s].remove(c)
                if cur != UNMATCHED:
                    members[cur].append(c)
                for k, v in old_sols.items():
                    if v is not None:
                        sols[k] = v
        history.append(total())
        if not moved:
            converged = True
            break
    if not converged:
        log.warning("centralized benchmark stopped after %d iterations without a fixed point", n_iter)

    pattern = BeamHoppingPattern()
    obj = 0.0
    for s, cells in members.items():
        cells = sorted(cells)
        if not cells:
            continue
        rel, inst = _sat_solution(s, cells, users, pairs, n_comm, beams[s], n_total)
        xi = improve_allocation(round_allocation(rel.x, inst), inst)
        obj += pf_objective(inst.users, inst.rates, xi, n_total)
        for c, v in zip(cells, xi):
            pattern.x[(s, c)] = int(v)
    q = {s: int(quotas.get(s, 0)) for s in set(quotas) | set(members)}
    matching = Matching.from_assignment({c: assign[c] for c in sorted(assign)}, q)
    return CentralizedResult(matching, pattern, obj, history, converged)


def local_allocation(
    matching: Matching,
    rates: Mapping[tuple[int, int], float],
    users: Mapping[int, float],
    n_comm: int,
    beams: Mapping[int, int],
    n_total: int,
) -> tuple[BeamHoppingPattern, float]:
    """Run the per-satellite problem for every satellite; returns the
    pattern and the summed integer objective."""
    pattern = BeamHoppingPattern()
    obj = 0.0
    for s in sorted(matching.sat_to_cells):
        cells = sorted(matching.sat_to_cells[s])
        if not cells:
            continue
        inst = LocalRAInstance(s, cells, [users[c] for c in cells], [rates.get((s, c), 0.0) for c in cells],
                               n_comm, beams[s], n_total)
        xi, _ = solve_local(inst)
        obj += pf_objective(inst.users, inst.rates, xi, n_total)
        for c, v in zip(cells, xi):
            pattern.x[(s, c)] = int(v)
    return pattern, obj
