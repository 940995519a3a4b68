"""Maximum k-set cover: pick k candidate subsets maximizing the union size.

Coverage is monotone submodular, so plain greedy is a (1 - 1/e) approximation.
Four solvers share one contract:

- ``greedy_max_cover``: reference greedy, ties broken by candidate rank.
- ``lazy_greedy_max_cover``: CELF-style lazy evaluation, bit-identical output.
- ``partitioned_max_cover``: seeded partition-and-merge, one greedy pass per
  partition and a final greedy over the pooled winners.
- ``brute_force_max_cover``: exhaustive optimum, guarded, used as test oracle.

Candidate order in the problem is meaningful: it is the uncertainty rank from
the upstream selection step, and every tie falls back to it. When marginal
gains hit zero before k picks, the solvers pad with unselected candidates in
rank order so the solution still has min(k, #candidates) entries.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

BRUTE_FORCE_LIMIT = 10**6


@dataclass(frozen=True)
class CoverProblem:
    """Candidate subsets over a universe; subset order is the candidate rank."""

    subsets: tuple[tuple[str, frozenset[str]], ...]
    universe: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "subsets", tuple(
            (cid, frozenset(elements)) for cid, elements in self.subsets))
        object.__setattr__(self, "universe", frozenset(self.universe))
        ids = [cid for cid, _ in self.subsets]
        if len(set(ids)) != len(ids):
            raise ValueError("candidate ids must be unique")
        for cid, elements in self.subsets:
            extra = elements - self.universe
            if extra:
                raise ValueError(
                    f"subset {cid!r} contains elements outside the universe: "
                    f"{sorted(extra)[:5]}")

    @property
    def num_candidates(self) -> int:
        return len(self.subsets)

    def candidate_ids(self) -> list[str]:
        return [cid for cid, _ in self.subsets]


@dataclass(frozen=True)
class CoverSolution:
    selected: tuple[str, ...]
    covered: frozenset[str]

    @property
    def coverage(self) -> int:
        return len(self.covered)


def _pad_by_rank(selected_idx: list[int], take: int, n: int) -> list[int]:
    chosen = set(selected_idx)
    for i in range(n):
        if len(selected_idx) >= take:
            break
        if i not in chosen:
            selected_idx.append(i)
            chosen.add(i)
    return selected_idx


def _solution(problem: CoverProblem, selected_idx: list[int]) -> CoverSolution:
    covered: set[str] = set()
    for i in selected_idx:
        covered |= problem.subsets[i][1]
    ids = tuple(problem.subsets[i][0] for i in selected_idx)
    return CoverSolution(selected=ids, covered=frozenset(covered))


def greedy_max_cover(problem: CoverProblem, k: int) -> CoverSolution:
    """Reference greedy: max marginal gain each step, rank breaks ties."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    n = problem.num_candidates
    take = min(k, n)
    covered: set[str] = set()
    selected: list[int] = []
    remaining = list(range(n))
    while len(selected) < take:
        best_i = -1
        best_gain = -1
        for i in remaining:
            gain = len(problem.subsets[i][1] - covered)
            if gain > best_gain:
                best_i, best_gain = i, gain
        if best_gain <= 0:
            break
        selected.append(best_i)
        covered |= problem.subsets[best_i][1]
        remaining.remove(best_i)
    _pad_by_rank(selected, take, n)
    return _solution(problem, selected)


def lazy_greedy_max_cover(problem: CoverProblem, k: int) -> CoverSolution:
    """CELF lazy greedy; same selections as ``greedy_max_cover``, bit for bit.

    Heap entries are (negated stale gain, rank, round stamp). Coverage gains
    only shrink as the covered set grows, so a popped entry whose gain was
    computed in the current round is guaranteed maximal.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    n = problem.num_candidates
    take = min(k, n)
    covered: set[str] = set()
    selected: list[int] = []
    heap = [(-len(elements), rank, 0)
            for rank, (_, elements) in enumerate(problem.subsets)]
    heapq.heapify(heap)
    while heap and len(selected) < take:
        neg_gain, rank, stamp = heapq.heappop(heap)
        if stamp == len(selected):
            if -neg_gain <= 0:
                break
            selected.append(rank)
            covered |= problem.subsets[rank][1]
        else:
            gain = len(problem.subsets[rank][1] - covered)
            heapq.heappush(heap, (-gain, rank, len(selected)))
    _pad_by_rank(selected, take, n)
    return _solution(problem, selected)


def partitioned_max_cover(problem: CoverProblem, k: int, partitions: int,
                          seed: int) -> CoverSolution:
    """Partition-and-merge cover: greedy per random partition, greedy to merge.

    Candidates are shuffled by ``seed`` and split into ``partitions`` groups;
    each group is solved greedily for min(k, group size) picks, the winners are
    pooled in rank order, and a final greedy pass over the pool returns k
    candidates. Single-process stand-in for a distributed solve; deterministic
    given the seed.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if partitions < 2:
        raise ValueError(f"partitions must be >= 2, got {partitions}")
    n = problem.num_candidates
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    pooled: list[int] = []
    for group in np.array_split(perm, partitions):
        if group.size == 0:
            continue
        idx = sorted(int(i) for i in group)
        sub = CoverProblem(subsets=tuple(problem.subsets[i] for i in idx),
                           universe=problem.universe)
        sub_solution = greedy_max_cover(sub, k)
        chosen = set(sub_solution.selected)
        pooled.extend(i for i in idx if problem.subsets[i][0] in chosen)
    pooled = sorted(set(pooled))
    merged = CoverProblem(subsets=tuple(problem.subsets[i] for i in pooled),
                          universe=problem.universe)
    return greedy_max_cover(merged, k)


def brute_force_max_cover(problem: CoverProblem, k: int) -> CoverSolution:
    """Exhaustive optimum over all rank combinations; ties go lexicographic.

    Guarded to C(n, min(k, n)) <= 10^6 enumerations. Element sets are packed
    into integer bitmasks so each union is a handful of ORs.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    n = problem.num_candidates
    take = min(k, n)
    if math.comb(n, take) > BRUTE_FORCE_LIMIT:
        raise ValueError(
            f"C({n}, {take}) exceeds the brute-force guard of {BRUTE_FORCE_LIMIT}")
    element_bit = {e: i for i, e in enumerate(sorted(problem.universe))}
    masks = []
    for _, elements in problem.subsets:
        bits = 0
        for e in elements:
            bits |= 1 << element_bit[e]
        masks.append(bits)
    best_idx: tuple[int, ...] = tuple(range(take))
    best_cov = -1
    full = len(problem.universe)
    for combo in itertools.combinations(range(n), take):
        union = 0
        for i in combo:
            union |= masks[i]
        cov = union.bit_count()
        if cov > best_cov:
            best_idx, best_cov = combo, cov
            if cov == full:
                break
    return _solution(problem, list(best_idx))


def marginal_gain(problem: CoverProblem, candidate_rank: int,
                  covered: Iterable[str]) -> int:
    """Coverage gain of one candidate against an already-covered set."""
    return len(problem.subsets[candidate_rank][1] - set(covered))


def solve_max_cover(problem: CoverProblem, k: int, algo: str = "lazy",
                    partitions: int = 4, seed: int = 0) -> CoverSolution:
    """Dispatch by algorithm name: greedy, lazy, partitioned, or brute."""
    if algo == "greedy":
        return greedy_max_cover(problem, k)
    if algo == "lazy":
        return lazy_greedy_max_cover(problem, k)
    if algo == "partitioned":
        return partitioned_max_cover(problem, k, partitions=partitions, seed=seed)
    if algo == "brute":
        return brute_force_max_cover(problem, k)
    raise ValueError(f"unknown cover algorithm {algo!r}")
