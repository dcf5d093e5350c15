"""
Cell-to-satellite many-to-one matching by deferred acceptance.

Cells propose in decreasing order of estimated per-user rate; satellites
rank cells in *increasing* estimated rate (they favour the worst-served
cells) and hold at most ``q_s`` of them. Holding is tentative: a held cell
can be bumped by a more preferred proposer later on, which is what makes
the outcome stable. ``irrevocable=True`` instead freezes every acceptance,
which can leave blocking pairs behind.

Proposals travel through each cell's broker, i.e. the satellite serving it
in the current frame. Cells without a broker sit the round out unless
``orphan_rescue`` lets them contact satellites directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .constants import UNMATCHED


@dataclass
class PreferenceLists:
    cell_prefs: dict[int, list[tuple[int, float]]]
    sat_prefs: dict[int, list[tuple[int, float]]]

    def sat_rank(self) -> dict[int, dict[int, int]]:
        return {s: {c: r for r, (c, _) in enumerate(lst)} for s, lst in self.sat_prefs.items()}

    def cell_rank(self) -> dict[int, dict[int, int]]:
        return {c: {s: r for r, (s, _) in enumerate(lst)} for c, lst in self.cell_prefs.items()}

    def restricted_to(self, cells: Iterable[int]) -> "PreferenceLists":
        keep = set(cells)
        return PreferenceLists(
            cell_prefs={c: list(v) for c, v in self.cell_prefs.items() if c in keep},
            sat_prefs={s: [(c, r) for c, r in v if c in keep] for s, v in self.sat_prefs.items()},
        )


def build_preferences(estimates: Iterable[tuple[int, int, float]]) -> PreferenceLists:
    """Preference lists from (cell_id, sat_id, rate_hat) tuples; pairs with a
    non-positive estimated rate are unacceptable. Ties break toward lower ids."""
    cell_prefs: dict[int, list[tuple[int, float]]] = {}
    sat_prefs: dict[int, list[tuple[int, float]]] = {}
    for c, s, r in estimates:
        c, s, r = int(c), int(s), float(r)
        if not r > 0:
            continue
        cell_prefs.setdefault(c, []).append((s, r))
        sat_prefs.setdefault(s, []).append((c, r))
    for lst in cell_prefs.values():
        lst.sort(key=lambda e: (-e[1], e[0]))
    for lst in sat_prefs.values():
        lst.sort(key=lambda e: (e[1], e[0]))
    return PreferenceLists(dict(sorted(cell_prefs.items())), dict(sorted(sat_prefs.items())))


@dataclass
class Matching:
    cell_to_sat: dict[int, int]
    sat_to_cells: dict[int, set[int]]
    quotas: dict[int, int]

    @classmethod
    def from_assignment(cls, assignment: Mapping[int, int], quotas: Mapping[int, int]) -> "Matching":
        sat_to_cells: dict[int, set[int]] = {s: set() for s in quotas}
        for c, s in assignment.items():
            if s != UNMATCHED:
                sat_to_cells.setdefault(s, set()).add(c)
        return cls(dict(assignment), sat_to_cells, dict(quotas))

    def partner(self, cell_id: int) -> int:
        return self.cell_to_sat.get(cell_id, UNMATCHED)

    @property
    def matched_cells(self) -> list[int]:
        return [c for c, s in self.cell_to_sat.items() if s != UNMATCHED]

    def validate(self, footprint_sizes: Mapping[int, int] | None = None) -> None:
        """Raise ValueError unless the many-to-one matching conditions hold."""
        for s, cells in self.sat_to_cells.items():
            cap = self.quotas.get(s, 0)
            if footprint_sizes is not None:
                cap = min(cap, footprint_sizes.get(s, 0))
            if len(cells) > cap:
                raise ValueError(f"satellite {s} holds {len(cells)} cells, limit {cap}")
            for c in cells:
                if self.cell_to_sat.get(c) != s:
                    raise ValueError(f"cell {c} listed by satellite {s} but matched to {self.cell_to_sat.get(c)}")
        for c, s in self.cell_to_sat.items():
            if s != UNMATCHED and c not in self.sat_to_cells.get(s, ()):
                raise ValueError(f"cell {c} matched to {s} which does not list it")


@dataclass
class BrokerLog:
    rounds: int = 0
    messages: int = 0
    relayed: int = 0
    proposals: dict[int, int] = field(default_factory=dict)


def deferred_acceptance(
    prefs: PreferenceLists,
    quotas: Mapping[int, int],
    prev_matching: Matching | None = None,
    *,
    orphan_rescue: bool = False,
    irrevocable: bool = False,
    lost_brokers: Iterable[int] = (),
) -> tuple[Matching, BrokerLog]:
    """Cell-proposing deferred acceptance with satellite quotas.

    With ``prev_matching=None`` every cell proposes directly (cold start).
    Otherwise a cell takes part only if it was matched in ``prev_matching``
    and is not listed in ``lost_brokers`` (cells whose broker is unreachable).
    """
    lost = set(lost_brokers)
    sat_rank = prefs.sat_rank()
    quota = {s: int(quotas.get(s, 0)) for s in set(quotas) | set(prefs.sat_prefs)}
    all_cells = set(prefs.cell_prefs)
    if prev_matching is not None:
        all_cells |= set(prev_matching.cell_to_sat)

    broker: dict[int, int | None] = {}
    for c in all_cells:
        if prev_matching is None:
            broker[c] = None  # direct
            continue
        b = prev_matching.partner(c)
        if b != UNMATCHED and c not in lost:
            broker[c] = b
        elif orphan_rescue:
            broker[c] = None
        # else: no broker, cannot take part

    nxt = {c: 0 for c in broker}
    held: dict[int, list[int]] = {s: [] for s in quota}
    partner: dict[int, int] = {}
    log = BrokerLog()
    free = sorted(c for c in broker if prefs.cell_prefs.get(c))

    while True:
        proposals: dict[int, list[int]] = {}
        for c in free:
            lst = prefs.cell_prefs.get(c, [])
            if nxt[c] >= len(lst):
                continue
            s = lst[nxt[c]][0]
            nxt[c] += 1
            proposals.setdefault(s, []).append(c)
            log.proposals[s] = log.proposals.get(s, 0) + 1
            log.messages += 2  # connection request + accept/reject answer
            if broker[c] is not None and broker[c] != s:
                log.relayed += 1
                log.messages += 1
        if not proposals:
            break
        log.rounds += 1
        rejected: list[int] = []
        for s, props in proposals.items():
            rank = sat_rank.get(s, {})
            rejected.extend(c for c in props if c not in rank)
            props = [c for c in props if c in rank]
            q = quota.get(s, 0)
            if irrevocable:
                room = max(q - len(held[s]), 0)
                props.sort(key=rank.__getitem__)
                keep, drop = props[:room], props[room:]
                held[s] = held[s] + keep
            else:
                pool = sorted(held[s] + props, key=rank.__getitem__)
                keep, drop = pool[:q], pool[q:]
                bumped = [c for c in drop if c in partner]
                log.messages += len(bumped)  # notice to the bumped cell's broker
                held[s] = keep
            for c in keep:
                partner[c] = s
            for c in drop:
                partner.pop(c, None)
            rejected.extend(drop)
        free = sorted(c for c in set(rejected) if c not in partner)

    assignment = {c: partner.get(c, UNMATCHED) for c in sorted(all_cells)}
    return Matching.from_assignment(assignment, quota), log


def blocking_pairs(matching: Matching, prefs: PreferenceLists, quotas: Mapping[int, int]) -> list[tuple[int, int]]:
    """(cell, sat) pairs that would both rather be matched to each other."""
    sat_rank = prefs.sat_rank()
    out = []
    for c, lst in prefs.cell_prefs.items():
        current = matching.partner(c)
        for s, _ in lst:
            if s == current:
                break  # everything further down is worse for c
            members = matching.sat_to_cells.get(s, set())
            rank = sat_rank.get(s, {})
            if c not in rank:
                continue
            if len(members) < quotas.get(s, 0):
                out.append((c, s))
            elif any(rank[c] < rank.get(m, len(rank)) for m in members):
                out.append((c, s))
    return out


def is_stable(matching: Matching, prefs: PreferenceLists, quotas: Mapping[int, int]) -> tuple[bool, list[tuple[int, int]]]:
    pairs = blocking_pairs(matching, prefs, quotas)
    return not pairs, pairs


def cold_start(prefs: PreferenceLists, quotas: Mapping[int, int]) -> Matching:
    """Initial matching: cells in id order take their best satellite that
    still has quota left."""
    load: dict[int, int] = {}
    assignment = {}
    for c in sorted(prefs.cell_prefs):
        assignment[c] = UNMATCHED
        for s, _ in prefs.cell_prefs[c]:
            if load.get(s, 0) < quotas.get(s, 0):
                load[s] = load.get(s, 0) + 1
                assignment[c] = s
                break
    q = {s: int(quotas.get(s, 0)) for s in set(quotas) | set(prefs.sat_prefs)}
    return Matching.from_assignment(assignment, q)


def write_matching_csv(writer, frame_k: int, matching: Matching) -> None:
    for c in sorted(matching.cell_to_sat):
        writer.writerow([frame_k, c, matching.cell_to_sat[c]])
