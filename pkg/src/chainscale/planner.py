"""Proactive decision mathematics.

Covers control-plane instance sizing, the data-plane proactive scaling pass
over all entry-exit pairs, greedy path computation with loop elimination,
and the dynamic program that places chain stages onto a fixed datacenter
path with the fewest new instances.

A service chain path for a chain of m stages is a tuple of m+2 datacenter
indices: entry, one hosting datacenter per stage, exit. Collapsing
consecutive duplicates must yield an all-distinct sequence (co-located
stages are contiguous and no datacenter is revisited).
"""

import math
from dataclasses import dataclass, field
from itertools import groupby

from .errors import InfeasiblePlacementError
from .topology import path_delay, shortest_delay_path


def is_loopless(path):
    collapsed = [dc for dc, _ in groupby(path)]
    return len(collapsed) == len(set(collapsed))


def all_at(dc_entry, m, dc_exit=None):
    """The path hosting every stage on the entry datacenter."""
    if dc_exit is None:
        dc_exit = dc_entry
    return (dc_entry,) * (m + 1) + (dc_exit,)


@dataclass
class ProvisionPlan:
    """Target working-instance counts per (datacenter, vnf name)."""

    targets: dict = field(default_factory=dict)  # (dc, vnf name) -> count

    def target(self, dc, vnf_name, default=0):
        return self.targets.get((dc, vnf_name), default)

    def set(self, dc, vnf_name, count):
        self.targets[(dc, vnf_name)] = count


@dataclass
class DpPlanResult:
    plan: ProvisionPlan
    paths: dict  # (entry, exit) -> path tuple
    created: dict  # (dc, vnf name) -> newly required instance count
    scaled_in: dict  # (dc, vnf name) -> surplus instance count
    fallback_pairs: set  # pairs whose path came from the shortest-delay fallback


def size_cp(predicted, pcscf, scscf, scscf_dc):
    """Sizing for the signalling chain: one S-CSCF pool in its home
    datacenter, P-CSCFs at every entry datacenter.

    A datacenter's P-CSCF load is the predicted traffic entering or exiting
    through it (the diagonal cell counted once); every datacenter keeps at
    least one P-CSCF and the home datacenter at least one S-CSCF.
    """
    n = len(predicted)
    plan = ProvisionPlan()
    total = sum(sum(row) for row in predicted)
    plan.set(scscf_dc, scscf.name, max(1, math.ceil(total / scscf.capacity)))
    for d in range(n):
        load = sum(predicted[d]) + sum(predicted[i][d] for i in range(n)) - predicted[d][d]
        plan.set(d, pcscf.name, max(1, math.ceil(load / pcscf.capacity)))
    return plan


def _shortfall_instances(avail, demand, unit_capacity):
    if demand <= avail:
        return 0
    return math.ceil((demand - avail) / unit_capacity)


def _creations(avail, demand, vnf, stage, dc, buffered):
    """Instances that must be newly booted: shortage beyond what the
    datacenter's buffer queue can hand back."""
    short = _shortfall_instances(avail[dc][stage], demand, vnf.capacity)
    if short and buffered is not None:
        short = max(0, short - buffered[dc].get(stage, 0))
    return short


def _usable(avail, dc, stage, chain, buffered):
    """Capacity a path can tap at a datacenter: working headroom plus
    buffered instances, which reactivate on scale-out at no cost."""
    out = avail[dc][stage]
    if buffered is not None:
        out += buffered[dc].get(stage, 0) * chain[stage - 1].capacity
    return out


def _path_cost(path, demand, avail, chain, buffered=None):
    """New instances needed along a path to absorb ``demand``."""
    total = 0
    for stage_idx, vnf in enumerate(chain, start=1):
        total += _creations(avail, demand, vnf, stage_idx, path[stage_idx], buffered)
    return total


def eliminate_loop(record, candidate_dc, stage, avail, demand, chain, exit_dc,
                   buffered=None):
    """Repair a greedy extension that would revisit a datacenter.

    Option A relocates every stage inside the loop onto the revisited
    datacenter; option B instead extends with the best-capacity datacenter
    that keeps the record loopless. The cheaper repair (new instances over
    the stages decided so far) wins, option A on ties.
    """
    if candidate_dc == record[-1] or candidate_dc not in record:
        return record + [candidate_dc]

    idx = len(record) - 1 - record[::-1].index(candidate_dc)
    option_a = record[:idx + 1] + [candidate_dc] * (len(record) - idx)

    seen = set(record)
    allowed = [record[-1]] + [d for d in range(len(avail))
                              if d != exit_dc and d not in seen]
    best_b = max(allowed, key=lambda d: (_usable(avail, d, stage, chain, buffered), -d))
    option_b = record + [best_b]

    def cost(rec):
        total = 0
        for j in range(1, len(rec)):
            total += _creations(avail, demand, chain[j - 1], j, rec[j], buffered)
        return total

    return option_a if cost(option_a) <= cost(option_b) else option_b


def place_stages(dc_path, avail, demand, chain):
    """Optimal monotone placement of chain stages onto a datacenter path.

    ``N[i][j]`` is the fewest new instances for stages 1..j with stage j on
    the i-th path datacenter; stage placements advance along the path
    without skipping an interior datacenter, and only the path's endpoints
    may end up hosting no stage. Returns (service chain path, new-instance
    count).
    """
    k = len(dc_path)
    m = len(chain)
    if k < 2:
        raise ValueError("dc_path must contain entry and exit")
    INF = float("inf")

    def num(i, j):
        # i, j are 1-based; infeasible when fewer stages remain than
        # interior datacenters still to cover.
        if m - j + 1 < k - i:
            return INF
        vnf = chain[j - 1]
        return _shortfall_instances(avail[dc_path[i - 1]][j], demand, vnf.capacity)

    N = [[INF] * (m + 1) for _ in range(k + 1)]
    N[1][1] = num(1, 1)
    if k >= 2:
        N[2][1] = num(2, 1)
    for j in range(2, m + 1):
        N[1][j] = N[1][j - 1] + num(1, j)
        for i in range(2, k + 1):
            prev = min(N[i - 1][j - 1], N[i][j - 1])
            N[i][j] = prev + num(i, j)

    # Stage m may sit on the exit datacenter or just before it; prefer the
    # earlier datacenter on ties.
    end_i = k - 1 if N[k - 1][m] <= N[k][m] else k
    best = N[end_i][m]
    if best == INF:
        raise InfeasiblePlacementError(
            f"cannot place {m} stages on a {k}-datacenter path")

    placement = [0] * (m + 1)  # stage j -> path position (1-based)
    i = end_i
    for j in range(m, 1, -1):
        placement[j] = i
        if i > 1 and N[i - 1][j - 1] <= N[i][j - 1]:
            i -= 1
    placement[1] = i

    path = (dc_path[0],) + tuple(dc_path[placement[j] - 1] for j in range(1, m + 1)) \
        + (dc_path[-1],)
    return path, int(best)


def compute_path(pair, demand, delays, avail, current_path, threshold, chain,
                 buffered=None):
    """Greedy search for the path needing the fewest new instances.

    Starts from the pair's current path, explores one candidate family per
    stage-1 host (greedy best-capacity extension with loop repair, the
    remainder collapsed onto the exit), plus the all-at-exit and
    all-at-entry paths. A candidate only displaces the incumbent when it
    needs strictly fewer new instances (buffered instances reactivate for
    free, so they do not count) and honours the delay threshold. If nothing
    within the threshold is found, the chain is placed on the
    shortest-delay datacenter path instead.

    Returns (path, used_fallback).
    """
    entry, exit_dc = pair
    n = delays.n
    m = len(chain)

    best = tuple(current_path)
    best_cost = _path_cost(best, demand, avail, chain, buffered)

    def consider(candidate):
        nonlocal best, best_cost
        cand = tuple(candidate)
        if path_delay(cand, delays) > threshold:
            return
        cost = _path_cost(cand, demand, avail, chain, buffered)
        if cost < best_cost:
            best, best_cost = cand, cost

    for v in range(n):
        if v == exit_dc:
            continue
        record = [entry, v]
        for x in range(2, m + 1):
            v1 = max((d for d in range(n) if d != exit_dc),
                     key=lambda d: (_usable(avail, d, x, chain, buffered), -d))
            record = eliminate_loop(record, v1, x, avail, demand, chain, exit_dc,
                                    buffered)
            consider(record + [exit_dc] * (m + 1 - x))
        consider([entry, v] + [exit_dc] * m)

    consider([entry] + [exit_dc] * (m + 1))
    consider([entry] * (m + 1) + [exit_dc])

    if path_delay(best, delays) > threshold:
        dc_path = shortest_delay_path(entry, exit_dc, delays, max_nodes=m + 2)
        best, _ = place_stages(dc_path, avail, demand, chain)
        return best, True
    return best, False


def plan_dp(pred_load, pred_delays, working_counts, current_paths, threshold, chain,
            buffered_counts=None):
    """One proactive planning round for the data-plane chain.

    Pass 1 keeps each cross-datacenter pair on its current path when the
    remaining capacity absorbs its predicted demand within the delay
    threshold; pass 2 recomputes paths for the rest, scaling out where the
    chosen path is short; pass 3 packs same-datacenter pairs onto their
    all-entry paths last. Whole instances left unused are scaled in.

    ``working_counts[dc][vnf name]`` is the current working-instance count;
    ``buffered_counts`` (same shape) steers path choice toward datacenters
    whose buffer queues can cover a shortage without booting anything.
    Pairs iterate in ascending (entry, exit) order so planning is
    deterministic.
    """
    n = len(pred_load)
    m = len(chain)

    avail = [{s: working_counts[dc].get(chain[s - 1].name, 0) * chain[s - 1].capacity
              for s in range(1, m + 1)} for dc in range(n)]
    buffered = None
    if buffered_counts is not None:
        buffered = [{s: buffered_counts[dc].get(chain[s - 1].name, 0)
                     for s in range(1, m + 1)} for dc in range(n)]
    created = {}
    activations = {}
    new_paths = {}
    fallback_pairs = set()

    def deduct(path, demand):
        for s in range(1, m + 1):
            avail[path[s]][s] -= demand

    def scale_out_shortage(path, demand):
        for s, vnf in enumerate(chain, start=1):
            dc = path[s]
            need = _shortfall_instances(avail[dc][s], demand, vnf.capacity)
            if need:
                activations[(dc, vnf.name)] = activations.get((dc, vnf.name), 0) + need
                fresh = need
                if buffered is not None:
                    reused = min(need, buffered[dc][s])
                    buffered[dc][s] -= reused
                    fresh = need - reused
                if fresh:
                    created[(dc, vnf.name)] = created.get((dc, vnf.name), 0) + fresh
                avail[dc][s] += need * vnf.capacity

    cross = [(e, x) for e in range(n) for x in range(n) if e != x]
    deferred = []
    for pair in cross:
        demand = pred_load[pair[0]][pair[1]]
        cur = tuple(current_paths.get(pair) or all_at(pair[0], m, pair[1]))
        fits = all(avail[cur[s]][s] >= demand for s in range(1, m + 1))
        if fits and path_delay(cur, pred_delays) <= threshold:
            deduct(cur, demand)
            new_paths[pair] = cur
        else:
            deferred.append(pair)

    for pair in deferred:
        demand = pred_load[pair[0]][pair[1]]
        cur = tuple(current_paths.get(pair) or all_at(pair[0], m, pair[1]))
        path, fell_back = compute_path(
            pair, demand, pred_delays, avail, cur, threshold, chain, buffered)
        if fell_back:
            fallback_pairs.add(pair)
        scale_out_shortage(path, demand)
        deduct(path, demand)
        new_paths[pair] = path

    for e in range(n):
        pair = (e, e)
        path = all_at(e, m)
        scale_out_shortage(path, pred_load[e][e])
        deduct(path, pred_load[e][e])
        new_paths[pair] = path

    # While the system carries any traffic, a datacenter a path routes a
    # stage through must be able to serve at least one flow, so referenced
    # (dc, stage) slots keep a floor of one working instance. With zero
    # demand everywhere the floor lapses and everything is enqueued.
    referenced = set()
    if any(v > 0 for row in pred_load for v in row):
        for path in new_paths.values():
            for s in range(1, m + 1):
                referenced.add((path[s], s))

    plan = ProvisionPlan()
    scaled_in = {}
    for dc in range(n):
        for s, vnf in enumerate(chain, start=1):
            have = working_counts[dc].get(vnf.name, 0) \
                + activations.get((dc, vnf.name), 0)
            unused = min(have, int(avail[dc][s] // vnf.capacity)) if avail[dc][s] > 0 else 0
            target = have - unused
            if (dc, s) in referenced and target < 1:
                target = 1
            if target < have:
                scaled_in[(dc, vnf.name)] = have - target
            plan.set(dc, vnf.name, target)

    return DpPlanResult(plan, new_paths, created, scaled_in, fallback_pairs)
