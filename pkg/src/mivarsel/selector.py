"""Variable selection by maximizing estimated mutual information.

Four cooperating procedures, named by what they do:

* :func:`rank_by_individual_mi` orders variables by their one-on-one MI
  with the target (filter ranking).
* :func:`greedy_select` grows a subset by joint MI, one variable per
  forward step, with a single-removal backward step after each
  addition, stopping when the best forward step strictly decreases the
  joint MI.
* :func:`build_candidate_pool` merges the greedy result with the top of
  the ranking into a pool of fixed size.
* :func:`exhaustive_search` evaluates every non-empty subset of the
  pool and returns the joint-MI argmax.

Every decision is deterministic given (dataset, k, jitter seed): MI
ties break toward the ascending column index, and the exhaustive
winner breaks ties toward smaller subsets, then lexicographically
smaller index tuples. All MI values are produced by the same estimator
entry points exposed in :mod:`mivarsel.mi`, bit for bit.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import Dataset
from .mi import (
    DEFAULT_K,
    MiEstimate,
    MiSession,
    _mi_value,
    _sq_diffs,
    _subset_indices,
    digamma_table,
)

PROVENANCES = ("ranking", "greedy", "pooled", "exhaustive")

# Exhaustive enumeration is 2^P - 1 subsets; past this size the search
# stops being a reasonable thing to ask of one machine.
MAX_POOL_SIZE = 20

_STEP_KINDS = ("forward", "backward", "stop")
_DECISIONS = ("added", "removed", "kept", "stopped")


@dataclass(frozen=True)
class VariableSubset:
    """An ordered set of column indices with the procedure that built it."""

    indices: tuple[int, ...]
    provenance: str = "ranking"

    def __post_init__(self) -> None:
        idx = tuple(int(j) for j in self.indices)
        if len(set(idx)) != len(idx):
            raise ValueError(f"subset indices are not distinct: {idx}")
        if any(j < 0 for j in idx):
            raise ValueError(f"negative variable index in {idx}")
        if self.provenance not in PROVENANCES:
            raise ValueError(
                f"unknown provenance {self.provenance!r}, expected one of {PROVENANCES}"
            )
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __contains__(self, j) -> bool:
        return j in self.indices

    def sorted_indices(self) -> tuple[int, ...]:
        return tuple(sorted(self.indices))


@dataclass(frozen=True)
class TraceStep:
    """One logged selection decision.

    ``mi`` is always the estimator's value for ``subset``, so a trace
    can be audited against fresh estimates.
    """

    kind: str
    candidate: int | None
    subset: tuple[int, ...]
    mi: float
    decision: str

    def __post_init__(self) -> None:
        if self.kind not in _STEP_KINDS:
            raise ValueError(f"unknown step kind {self.kind!r}")
        if self.decision not in _DECISIONS:
            raise ValueError(f"unknown decision {self.decision!r}")
        object.__setattr__(self, "subset", tuple(int(j) for j in self.subset))


@dataclass(frozen=True)
class SelectionTrace:
    """Ordered audit log of forward, backward and stop decisions."""

    steps: tuple[TraceStep, ...]

    def to_dict(self) -> dict:
        return {
            "steps": [
                {
                    "kind": s.kind,
                    "candidate": s.candidate,
                    "subset": list(s.subset),
                    "mi": s.mi,
                    "decision": s.decision,
                }
                for s in self.steps
            ]
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SelectionTrace":
        return cls(
            tuple(
                TraceStep(
                    kind=s["kind"],
                    candidate=s["candidate"],
                    subset=tuple(s["subset"]),
                    mi=float(s["mi"]),
                    decision=s["decision"],
                )
                for s in doc["steps"]
            )
        )


def save_trace(trace: SelectionTrace, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(trace.to_dict(), handle, indent=2)
        handle.write("\n")


def load_trace(path: str | Path) -> SelectionTrace:
    with open(path, "r", encoding="utf-8") as handle:
        return SelectionTrace.from_dict(json.load(handle))


def subset_to_dict(subset: VariableSubset, labels: Sequence[str] | None = None) -> dict:
    doc: dict = {"indices": list(subset.indices), "provenance": subset.provenance}
    if labels is not None:
        doc["labels"] = [labels[j] for j in subset.indices]
    return doc


def _session_for(d: Dataset, k: int, jitter_seed: int, session: MiSession | None) -> MiSession:
    if session is not None:
        return session
    return MiSession(d.X, d.y, k=k, jitter_seed=jitter_seed)


def individual_mis(
    d: Dataset,
    k: int = DEFAULT_K,
    jitter_seed: int = 0,
    session: MiSession | None = None,
) -> np.ndarray:
    """MI of each single variable with the target, indexed by column."""
    session = _session_for(d, k, jitter_seed, session)
    return np.array([session.mi((j,)) for j in range(session.n_variables)])


def rank_by_individual_mi(
    d: Dataset,
    count: int | None = None,
    k: int = DEFAULT_K,
    jitter_seed: int = 0,
    session: MiSession | None = None,
) -> VariableSubset:
    """The ``count`` highest-MI variables, in descending-MI order.

    Exact MI ties (as produced by duplicated columns) break toward the
    lower column index, so the ranking is deterministic.
    """
    session = _session_for(d, k, jitter_seed, session)
    m = session.n_variables
    if count is None:
        count = m
    if not 1 <= count <= m:
        raise ValueError(f"count must be in 1..{m}, got {count}")
    values = individual_mis(d, k, jitter_seed, session)
    # lexsort: primary key last -> descending MI, then ascending index.
    order = np.lexsort((np.arange(m), -values))
    return VariableSubset(tuple(int(j) for j in order[:count]), "ranking")


def _best_addition(
    session: MiSession, current: tuple[int, ...]
) -> tuple[int, float]:
    best_j = -1
    best_mi = -np.inf
    for j in range(session.n_variables):
        if j in current:
            continue
        value = session.mi(current + (j,))
        if value > best_mi:
            best_j, best_mi = j, value
    if best_j < 0:
        raise ValueError("no remaining variables to add")
    return best_j, best_mi


def _best_removal(
    session: MiSession, current: tuple[int, ...], protected: int
) -> tuple[int, float] | None:
    """Best single removal (candidate, resulting MI), or None if nothing is removable."""
    best: tuple[int, float] | None = None
    for j in sorted(current):
        if j == protected:
            continue
        reduced = tuple(c for c in current if c != j)
        value = session.mi(reduced)
        if best is None or value > best[1]:
            best = (j, value)
    return best


def forward_step(
    d: Dataset,
    current,
    k: int = DEFAULT_K,
    jitter_seed: int = 0,
    session: MiSession | None = None,
) -> tuple[VariableSubset, MiEstimate]:
    """Add the variable that maximizes the joint MI with the target.

    With an empty ``current`` this reduces to picking the top of the
    individual ranking. Ties break toward the ascending column index.
    """
    session = _session_for(d, k, jitter_seed, session)
    cur = tuple(int(j) for j in _subset_indices(current))
    best_j, best_mi = _best_addition(session, cur)
    subset = VariableSubset(cur + (best_j,), "greedy")
    return subset, MiEstimate(best_mi, session.k, session.n_samples)


def backward_step(
    d: Dataset,
    current,
    protected: int,
    k: int = DEFAULT_K,
    jitter_seed: int = 0,
    session: MiSession | None = None,
) -> VariableSubset:
    """Remove at most one variable, if that strictly increases joint MI.

    Every variable except ``protected`` (the most recent addition) is a
    removal candidate; the one whose removal raises the MI the most is
    removed, with ties broken toward the lower column index. When no
    removal strictly improves on the current MI the subset is returned
    unchanged.
    """
    session = _session_for(d, k, jitter_seed, session)
    cur = tuple(int(j) for j in _subset_indices(current))
    if len(cur) < 2:
        raise ValueError("backward step needs at least 2 variables")
    protected = int(protected)
    if protected not in cur:
        raise ValueError(f"protected variable {protected} is not in {cur}")
    provenance = getattr(current, "provenance", "greedy")
    current_mi = session.mi(cur)
    best = _best_removal(session, cur, protected)
    if best is not None and best[1] > current_mi:
        removed = best[0]
        return VariableSubset(tuple(c for c in cur if c != removed), provenance)
    return VariableSubset(cur, provenance)


def greedy_select(
    d: Dataset,
    k: int = DEFAULT_K,
    jitter_seed: int = 0,
    iterate_backward: bool = False,
    session: MiSession | None = None,
) -> tuple[VariableSubset, SelectionTrace]:
    """Grow a subset by joint MI until a forward step strictly decreases it.

    After every accepted forward step a backward step may remove one
    older variable when that strictly increases the MI (repeatedly, if
    ``iterate_backward``). The returned subset is the accepted state
    before the stopping forward step; its MI is the running maximum of
    the whole procedure. The trace records every accepted addition,
    every backward decision, and the final rejected forward step.
    """
    session = _session_for(d, k, jitter_seed, session)
    state: list[int] = []
    state_mi = -np.inf
    steps: list[TraceStep] = []
    while len(state) < session.n_variables:
        cand, cand_mi = _best_addition(session, tuple(state))
        if state and cand_mi < state_mi:
            steps.append(
                TraceStep("stop", cand, tuple(state) + (cand,), cand_mi, "stopped")
            )
            break
        state.append(cand)
        state_mi = cand_mi
        steps.append(TraceStep("forward", cand, tuple(state), cand_mi, "added"))
        while len(state) >= 2:
            best = _best_removal(session, tuple(state), protected=state[-1])
            if best is not None and best[1] > state_mi:
                removed, state_mi = best
                state.remove(removed)
                steps.append(
                    TraceStep("backward", removed, tuple(state), state_mi, "removed")
                )
                if iterate_backward:
                    continue
            else:
                steps.append(
                    TraceStep("backward", None, tuple(state), state_mi, "kept")
                )
            break
    return VariableSubset(tuple(state), "greedy"), SelectionTrace(tuple(steps))


def build_candidate_pool(ranking, selected, pool_size: int) -> VariableSubset:
    """Union of the greedy result with the top of the ranking.

    Keeps everything in ``selected`` and appends ranked variables not
    already present, in rank order, until the pool holds exactly
    ``pool_size`` variables.
    """
    rank_idx = tuple(int(j) for j in _subset_indices(ranking))
    sel_idx = tuple(int(j) for j in _subset_indices(selected))
    if len(sel_idx) > pool_size:
        raise ValueError(
            f"selected set has {len(sel_idx)} variables, larger than the pool size {pool_size}"
        )
    pool = list(sel_idx)
    have = set(pool)
    for j in rank_idx:
        if len(pool) == pool_size:
            break
        if j not in have:
            pool.append(j)
            have.add(j)
    if len(pool) < pool_size:
        raise ValueError(
            f"ranking provides only {len(pool)} distinct variables, "
            f"cannot fill a pool of {pool_size}"
        )
    return VariableSubset(tuple(pool), "pooled")


# ---------------------------------------------------------------------------
# Exhaustive subset search.
#
# Each bitmask over the sorted candidate columns is evaluated
# independently with the shared estimator core, accumulating squared
# distances in ascending column order exactly like estimate_mi does, so
# the values are bit-identical to standalone estimates and independent
# of chunking or worker count. The winner is reduced under the total
# order (higher MI, then fewer variables, then lexicographically
# smaller index tuple).


def _build_search_state(
    x_cand: np.ndarray, y: np.ndarray, k: int, jitter_seed: int
) -> dict:
    return {
        "x": x_cand,
        "y": y,
        "mats": [_sq_diffs(x_cand[:, p]) for p in range(x_cand.shape[1])],
        "dy2": _sq_diffs(y),
        "psi": digamma_table(y.shape[0]),
        "k": k,
        "seed": jitter_seed,
    }


def _mask_positions(mask: int) -> tuple[int, ...]:
    positions = []
    while mask:
        low = mask & -mask
        positions.append(low.bit_length() - 1)
        mask ^= low
    return tuple(positions)


def _mask_mi(state: dict, mask: int) -> tuple[float, tuple[int, ...]]:
    positions = _mask_positions(mask)
    mats = state["mats"]
    dx2 = mats[positions[0]].copy()
    for p in positions[1:]:
        dx2 += mats[p]
    value = _mi_value(
        dx2,
        state["dy2"],
        state["x"][:, positions],
        state["y"],
        state["k"],
        state["seed"],
        state["psi"],
    )
    return value, positions


def _better(
    a: tuple[float, tuple[int, ...]], b: tuple[float, tuple[int, ...]]
) -> tuple[float, tuple[int, ...]]:
    if a[0] != b[0]:
        return a if a[0] > b[0] else b
    if len(a[1]) != len(b[1]):
        return a if len(a[1]) < len(b[1]) else b
    return a if a[1] < b[1] else b


def _search_range(state: dict, lo: int, hi: int) -> tuple[float, tuple[int, ...]]:
    best = _mask_mi(state, lo)
    for mask in range(lo + 1, hi):
        best = _better(best, _mask_mi(state, mask))
    return best


_WORKER_STATE: dict = {}


def _init_search_worker(x_cand, y, k, jitter_seed) -> None:
    _WORKER_STATE.clear()
    _WORKER_STATE.update(_build_search_state(x_cand, y, k, jitter_seed))


def _search_worker_range(bounds: tuple[int, int]) -> tuple[float, tuple[int, ...]]:
    return _search_range(_WORKER_STATE, bounds[0], bounds[1])


def exhaustive_search(
    d: Dataset,
    candidates,
    k: int = DEFAULT_K,
    jitter_seed: int = 0,
    workers: int = 1,
) -> tuple[VariableSubset, MiEstimate]:
    """Joint-MI argmax over every non-empty subset of the candidates.

    Ties resolve to the smaller subset, then to the lexicographically
    smaller sorted index tuple. The result does not depend on
    ``workers``; parallelism only splits the enumeration range.
    """
    cand = sorted(int(j) for j in _subset_indices(candidates))
    if len(set(cand)) != len(cand):
        raise ValueError(f"candidate indices are not distinct: {cand}")
    if not cand:
        raise ValueError("candidate pool is empty")
    if len(cand) > MAX_POOL_SIZE:
        raise ValueError(
            f"{len(cand)} candidates means 2^{len(cand)} subsets; "
            f"lower the pool size to at most {MAX_POOL_SIZE}"
        )
    for j in cand:
        if j >= d.n_variables:
            raise ValueError(f"candidate index {j} out of range for {d.n_variables} variables")
    n = d.n_samples
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < {n}, got {k}")

    x_cand = np.ascontiguousarray(d.X[:, cand])
    total = 1 << len(cand)
    if workers <= 1:
        state = _build_search_state(x_cand, d.y, k, jitter_seed)
        best = _search_range(state, 1, total)
    else:
        bounds = [
            (int(lo), int(hi))
            for lo, hi in zip(
                np.linspace(1, total, 8 * workers + 1).astype(np.int64)[:-1],
                np.linspace(1, total, 8 * workers + 1).astype(np.int64)[1:],
            )
            if lo < hi
        ]
        with ProcessPoolExecutor(
            max_workers=workers,
            initializer=_init_search_worker,
            initargs=(x_cand, d.y, k, jitter_seed),
        ) as pool:
            results = list(pool.map(_search_worker_range, bounds))
        best = results[0]
        for other in results[1:]:
            best = _better(best, other)

    value, positions = best
    indices = tuple(cand[p] for p in positions)
    return (
        VariableSubset(indices, "exhaustive"),
        MiEstimate(value, k, n),
    )


@dataclass(frozen=True)
class SelectionResult:
    """Everything the full selection pipeline produced."""

    ranking: VariableSubset
    ranking_mis: tuple[float, ...]
    greedy: VariableSubset
    trace: SelectionTrace
    pool: VariableSubset
    best: VariableSubset
    best_mi: MiEstimate

    def to_dict(self, labels: Sequence[str] | None = None) -> dict:
        return {
            "ranking": subset_to_dict(self.ranking, labels),
            "ranking_mis": list(self.ranking_mis),
            "greedy": subset_to_dict(self.greedy, labels),
            "pool": subset_to_dict(self.pool, labels),
            "best": subset_to_dict(self.best, labels),
            "best_mi": {
                "value": self.best_mi.value,
                "k": self.best_mi.k,
                "n_samples": self.best_mi.n_samples,
            },
            "trace": self.trace.to_dict(),
        }


def select_variables(
    d: Dataset,
    k: int = DEFAULT_K,
    pool_size: int = 16,
    jitter_seed: int = 0,
    workers: int = 1,
    iterate_backward: bool = False,
) -> SelectionResult:
    """Run the complete selection pipeline on one dataset.

    Ranking and greedy search each produce a subset; their union forms
    a pool of ``pool_size`` variables (capped at the variable count),
    and the exhaustive subset search over that pool picks the winner.
    """
    session = MiSession(d.X, d.y, k=k, jitter_seed=jitter_seed)
    values = individual_mis(d, k, jitter_seed, session)
    ranking = rank_by_individual_mi(d, None, k, jitter_seed, session)
    greedy, trace = greedy_select(d, k, jitter_seed, iterate_backward, session)
    effective = min(pool_size, d.n_variables)
    pool = build_candidate_pool(ranking, greedy, effective)
    best, best_mi = exhaustive_search(d, pool, k, jitter_seed, workers)
    return SelectionResult(
        ranking=ranking,
        ranking_mis=tuple(float(values[j]) for j in ranking.indices),
        greedy=greedy,
        trace=trace,
        pool=pool,
        best=best,
        best_mi=best_mi,
    )
