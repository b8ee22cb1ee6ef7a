"""Matching algorithms: greedy / optimal nearest neighbor, full matching,
subclassification, and common-support trimming.

Every matcher returns a MatchResult holding per-unit analysis weights over the
original frame, the matched-set structure, and discard flags. Results are
deterministic: nearest-neighbor ties resolve to the lowest control index and
the assignment solver breaks ties lexicographically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import errors, network
from .dataset import StudyFrame
from .distance import DistanceMatrix
from .propensity import PropensityModel

ATT = "ATT"
ATE = "ATE"

NO_MATCH_IN_CALIPER = "no_match_in_caliper"
COMMON_SUPPORT = "common_support"
UNMATCHED_CONTROL = "unmatched_control"


@dataclass(frozen=True)
class MatchedSet:
    treated: tuple[int, ...]
    controls: tuple[int, ...]


@dataclass
class MatchResult:
    """Unified output of pair matching, full matching, subclassification and weighting."""

    estimand: str
    unit_weight: np.ndarray
    sets: list[MatchedSet]
    discarded: np.ndarray
    discard_reason: dict[int, str]
    method: dict = field(default_factory=dict)

    @property
    def n_units(self) -> int:
        return self.unit_weight.size

    def summary(self) -> dict:
        reasons: dict[str, int] = {}
        for r in self.discard_reason.values():
            reasons[r] = reasons.get(r, 0) + 1
        out = {
            "kind": self.method.get("kind"),
            "params": self.method.get("params", {}),
            "estimand": self.estimand,
            "n_sets": len(self.sets),
            "n_discarded": int(self.discarded.sum()),
            "discard_reasons": dict(sorted(reasons.items())),
        }
        if "control_multiplicity" in self.method:
            mult = self.method["control_multiplicity"]
            out["control_multiplicity"] = {str(k): int(v) for k, v in sorted(mult.items())}
        if "partial_treated" in self.method:
            out["partial_treated"] = [int(i) for i in self.method["partial_treated"]]
        return out


@dataclass
class Subclassification:
    """Propensity strata: ascending cutpoints and a per-unit subclass index.

    ``subclass_of`` is -1 for units excluded before stratification.
    """

    n_subclasses: int
    boundaries: np.ndarray
    subclass_of: np.ndarray
    estimand: str


@dataclass
class SupportFlags:
    """Common-support discard flags, mergeable into any MatchResult."""

    discard: np.ndarray
    reason: dict[int, str]

    @property
    def keep(self) -> np.ndarray:
        return ~self.discard


def _base_discards(d: DistanceMatrix) -> tuple[np.ndarray, dict[int, str]]:
    discarded = np.ones(d.n_units, dtype=bool)
    discarded[d.rows] = False
    discarded[d.cols] = False
    reason = {int(i): COMMON_SUPPORT for i in np.flatnonzero(discarded)}
    return discarded, reason


def _pair_weights(n_units: int, sets: list[MatchedSet],
                  with_replacement: bool) -> np.ndarray:
    w = np.zeros(n_units)
    for s in sets:
        for t in s.treated:
            w[t] = 1.0
        if with_replacement:
            for c in s.controls:
                w[c] += 1.0  # frequency of selection
        else:
            share = 1.0 / len(s.controls)
            for c in s.controls:
                w[c] = share
    return w


def greedy_nn(d: DistanceMatrix, k: int = 1, *, with_replacement: bool = False,
              caliper: float | None = None, order: str = "index",
              scores: np.ndarray | None = None,
              seed: int | None = None) -> MatchResult:
    """Greedy k:1 nearest-neighbor matching over a distance matrix.

    Treated units are processed in the given order ("index",
    "descending_propensity" with per-treated-row ``scores``, or
    "random" with ``seed``); each takes its k nearest admissible controls
    (finite distance, within the caliper). Without replacement the chosen
    controls leave the pool. Estimates the ATT.
    """
    nt, nc = d.shape
    if nc == 0:
        raise errors.NoControls("no control units")
    if k < 1:
        raise errors.InvalidK(f"k must be >= 1, got {k}")

    if order == "index":
        sequence = np.arange(nt)
    elif order in ("descending_propensity", "propensity"):
        if scores is None:
            raise errors.InvalidArgument(
                "descending_propensity order needs per-treated scores")
        scores = np.asarray(scores, dtype=float)
        if scores.shape != (nt,):
            raise errors.InvalidArgument("scores must align with matrix rows")
        sequence = np.argsort(-scores, kind="stable")
    elif order == "random":
        if seed is None:
            raise errors.InvalidArgument("random order needs a seed")
        sequence = np.random.default_rng(seed).permutation(nt)
    else:
        raise errors.InvalidArgument(f"unknown order {order!r}")

    available = np.ones(nc, dtype=bool)
    sets: list[MatchedSet] = []
    matched_controls = np.zeros(nc, dtype=int)
    partial: list[int] = []
    unmatched_treated: list[int] = []

    for r in sequence:
        row = d.d[r]
        admissible = np.isfinite(row)
        if caliper is not None:
            admissible &= row <= caliper
        if not with_replacement:
            admissible &= available
        cand = np.flatnonzero(admissible)
        if cand.size == 0:
            unmatched_treated.append(r)
            continue
        take = cand[np.argsort(row[cand], kind="stable")][:k]
        take = np.sort(take)
        if take.size < k:
            partial.append(r)
        if not with_replacement:
            available[take] = False
        matched_controls[take] += 1
        sets.append(MatchedSet(treated=(int(d.rows[r]),),
                               controls=tuple(int(d.cols[j]) for j in take)))

    sets.sort(key=lambda s: s.treated[0])
    discarded, reason = _base_discards(d)
    for r in unmatched_treated:
        idx = int(d.rows[r])
        discarded[idx] = True
        reason[idx] = NO_MATCH_IN_CALIPER
    for j in np.flatnonzero(matched_controls == 0):
        idx = int(d.cols[j])
        discarded[idx] = True
        reason[idx] = UNMATCHED_CONTROL

    weights = _pair_weights(d.n_units, sets, with_replacement)
    method = {
        "kind": "greedy_nn",
        "params": {"k": k, "with_replacement": with_replacement,
                   "caliper": caliper, "order": order, "seed": seed},
        "partial_treated": [int(d.rows[r]) for r in sorted(partial)],
    }
    if with_replacement:
        method["control_multiplicity"] = {
            int(d.cols[j]): int(m) for j, m in enumerate(matched_controls) if m > 1
        }
        method["total_slots"] = int(matched_controls.sum())
    return MatchResult(estimand=ATT, unit_weight=weights, sets=sets,
                       discarded=discarded, discard_reason=reason, method=method)


def total_matched_distance(d: DistanceMatrix, result: MatchResult) -> float:
    """Sum of within-set treated-control distances for a result on matrix d."""
    row_of = {int(u): r for r, u in enumerate(d.rows)}
    col_of = {int(u): c for c, u in enumerate(d.cols)}
    total = 0.0
    for s in result.sets:
        for t in s.treated:
            for c in s.controls:
                total += float(d.d[row_of[t], col_of[c]])
    return total


def optimal_pair(d: DistanceMatrix, k: int = 1) -> MatchResult:
    """k:1 matching minimizing the total matched distance.

    Solved as a min-cost assignment with each treated unit replicated k
    times; ties break lexicographically by (treated id, control id).
    """
    nt, nc = d.shape
    if nc == 0:
        raise errors.NoControls("no control units")
    if k < 1:
        raise errors.InvalidK(f"k must be >= 1, got {k}")
    if nc < k * nt:
        raise errors.Infeasible(
            f"{nc} controls cannot supply {k} matches for {nt} treated units")

    cost = np.repeat(d.d, k, axis=0)
    col_of, _ = network.min_cost_assignment(cost)
    sets = []
    matched_cols = np.zeros(nc, dtype=bool)
    for r in range(nt):
        cols = np.sort(col_of[r * k:(r + 1) * k])
        matched_cols[cols] = True
        sets.append(MatchedSet(treated=(int(d.rows[r]),),
                               controls=tuple(int(d.cols[j]) for j in cols)))
    sets.sort(key=lambda s: s.treated[0])

    discarded, reason = _base_discards(d)
    for j in np.flatnonzero(~matched_cols):
        idx = int(d.cols[j])
        discarded[idx] = True
        reason[idx] = UNMATCHED_CONTROL
    weights = _pair_weights(d.n_units, sets, with_replacement=False)
    method = {"kind": "optimal_pair", "params": {"k": k}}
    return MatchResult(estimand=ATT, unit_weight=weights, sets=sets,
                       discarded=discarded, discard_reason=reason, method=method)


def _stratum_weights(treatment: np.ndarray, labels: np.ndarray,
                     n_strata: int, estimand: str) -> np.ndarray:
    """Per-unit weights mirroring the subclass aggregation of effects.

    ATT: treated weight 1, controls weighted to the stratum treated count.
    ATE: both arms weighted to the stratum share of all retained units.
    Units with label < 0 get weight 0.
    """
    w = np.zeros(treatment.size)
    for s in range(n_strata):
        in_s = labels == s
        n_t = int((in_s & (treatment == 1)).sum())
        n_c = int((in_s & (treatment == 0)).sum())
        if estimand == ATT and n_t == 0:
            continue  # stratum carries zero ATT weight
        if n_t == 0 or n_c == 0:
            raise errors.EmptySubclassArm(s, "treated" if n_t == 0 else "control")
        n_s = n_t + n_c
        if estimand == ATT:
            w[in_s & (treatment == 1)] = 1.0
            w[in_s & (treatment == 0)] = n_t / n_c
        else:
            w[in_s & (treatment == 1)] = n_s / n_t
            w[in_s & (treatment == 0)] = n_s / n_c
    return w


def full_match(d: DistanceMatrix, min_ratio: float | None = None,
               max_ratio: float | None = None,
               estimand: str = ATT) -> MatchResult:
    """Optimal full matching: partition into sets with both arms present.

    Minimizes the total within-set treated-control distance. Optimal sets are
    stars (one treated with several controls, or one control with several
    treated); ``min_ratio``/``max_ratio`` bound the treated:control ratio of
    each set and translate into star-size caps solved by min-cost flow.
    """
    nt, nc = d.shape
    if nc == 0:
        raise errors.NoControls("no control units")
    if estimand not in (ATT, ATE):
        raise errors.InvalidArgument(f"unknown estimand {estimand!r}")
    if np.isinf(d.d).all(axis=1).any() or np.isinf(d.d).all(axis=0).any():
        raise errors.Infeasible(
            "some unit has no finite distance to the other group")

    # star-size caps from the treated:control ratio bounds
    max_controls_per_star = nc if min_ratio is None else int(np.floor(1.0 / min_ratio)) if min_ratio > 0 else nc
    max_treated_per_star = nt if max_ratio is None else int(np.floor(max_ratio))
    min_controls_per_star = 1 if max_ratio is None else max(1, int(np.ceil(1.0 / max_ratio)))
    min_treated_per_star = 1 if min_ratio is None else max(1, int(np.ceil(min_ratio)))

    treated_stars_ok = max_controls_per_star >= 1
    control_stars_ok = max_treated_per_star >= 1
    if not treated_stars_ok and not control_stars_ok:
        raise errors.Infeasible(
            f"ratio bounds [{min_ratio}, {max_ratio}] admit no matched set")

    if min_ratio is None and max_ratio is None:
        edges = _edge_cover_unrestricted(d.d)
    elif treated_stars_ok and control_stars_ok:
        # singleton degrees are admissible on both sides; caps only
        edges = network.degree_bounded_edge_cover(
            d.d, (1, max_controls_per_star), (1, max_treated_per_star))
        edges = _drop_redundant(d.d, edges)
    elif treated_stars_ok:
        # every treated is a star center, controls are leaves
        edges = network.degree_bounded_edge_cover(
            d.d, (min_controls_per_star, max_controls_per_star), (1, 1))
    else:
        edges = network.degree_bounded_edge_cover(
            d.d, (1, 1), (min_treated_per_star, max_treated_per_star))

    sets = _components_to_sets(d, edges)
    labels = np.full(d.n_units, -1)
    for s_idx, s in enumerate(sets):
        for u in s.treated + s.controls:
            labels[u] = s_idx
    discarded, reason = _base_discards(d)
    treatment = np.zeros(d.n_units, dtype=int)
    treatment[d.rows] = 1
    weights = _stratum_weights(treatment, labels, len(sets), estimand)
    method = {"kind": "full_match",
              "params": {"min_ratio": min_ratio, "max_ratio": max_ratio},
              "stratum_weighting": estimand}
    return MatchResult(estimand=estimand, unit_weight=weights, sets=sets,
                       discarded=discarded, discard_reason=reason, method=method)


def _edge_cover_unrestricted(d: np.ndarray) -> list[tuple[int, int]]:
    """Min-cost bipartite edge cover via the matching reduction."""
    nt, nc = d.shape
    transposed = nt > nc
    a = d.T if transposed else d
    nr, ncol = a.shape
    m_row = a.min(axis=1)
    m_col = a.min(axis=0)
    gain = a - m_row[:, None] - m_col[None, :]
    clamped = np.where(np.isfinite(a), np.minimum(gain, 0.0), 0.0)
    col_of, _ = network.min_cost_assignment(clamped)

    edges = set()
    row_covered = np.zeros(nr, dtype=bool)
    col_covered = np.zeros(ncol, dtype=bool)
    for i, j in enumerate(col_of):
        if np.isfinite(a[i, j]) and gain[i, j] < 0:
            edges.add((i, int(j)))
            row_covered[i] = True
            col_covered[j] = True
    for i in np.flatnonzero(~row_covered):
        edges.add((int(i), int(np.argmin(a[i]))))
    for j in np.flatnonzero(~col_covered):
        edges.add((int(np.argmin(a[:, j])), int(j)))

    pairs = sorted(edges)
    if transposed:
        pairs = sorted((j, i) for i, j in pairs)
    return _drop_redundant(d, pairs)


def _drop_redundant(d: np.ndarray, edges: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """Drop zero-cost edges whose endpoints are both covered elsewhere.

    Leaves every component a star; any droppable edge in an optimal cover has
    zero distance, so the total cost is unchanged.
    """
    edges = sorted(edges)
    changed = True
    while changed:
        changed = False
        deg_r: dict[int, int] = {}
        deg_c: dict[int, int] = {}
        for i, j in edges:
            deg_r[i] = deg_r.get(i, 0) + 1
            deg_c[j] = deg_c.get(j, 0) + 1
        for e in list(edges):
            i, j = e
            if deg_r[i] > 1 and deg_c[j] > 1:
                edges.remove(e)
                deg_r[i] -= 1
                deg_c[j] -= 1
                changed = True
    return edges


def _components_to_sets(d: DistanceMatrix,
                        edges: list[tuple[int, int]]) -> list[MatchedSet]:
    # union-find over (row, col) vertices
    parent: dict[tuple[str, int], tuple[str, int]] = {}

    def find(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    for i, j in edges:
        for v in (("r", i), ("c", j)):
            parent.setdefault(v, v)
        ri, rj = find(("r", i)), find(("c", j))
        if ri != rj:
            parent[rj] = ri

    groups: dict[tuple[str, int], tuple[list[int], list[int]]] = {}
    for v in parent:
        root = find(v)
        tr, co = groups.setdefault(root, ([], []))
        side, idx = v
        if side == "r":
            tr.append(int(d.rows[idx]))
        else:
            co.append(int(d.cols[idx]))
    sets = [MatchedSet(treated=tuple(sorted(tr)), controls=tuple(sorted(co)))
            for tr, co in groups.values()]
    sets.sort(key=lambda s: (s.treated[0], s.controls[0]))
    return sets


def subclassify(model: PropensityModel, frame: StudyFrame, n_subclasses: int,
                estimand: str = ATT,
                include: np.ndarray | None = None) -> Subclassification:
    """Stratify on propensity-score quantiles (treated-group quantiles for ATT,
    all retained units for ATE), with lower-inclusive interval assignment."""
    if n_subclasses < 2:
        raise errors.InvalidArgument("need at least 2 subclasses")
    if estimand not in (ATT, ATE):
        raise errors.InvalidArgument(f"unknown estimand {estimand!r}")
    if include is None:
        include = np.ones(frame.n_units, dtype=bool)
    include = np.asarray(include, dtype=bool)
    scores = model.scores
    if estimand == ATT:
        ref = scores[(frame.treatment == 1) & include]
    else:
        ref = scores[include]
    if ref.size == 0:
        raise errors.EverythingDiscarded("no units to stratify")
    probs = np.arange(1, n_subclasses) / n_subclasses
    boundaries = np.quantile(ref, probs)
    if np.any(np.diff(boundaries) <= 0):
        raise errors.InvalidArgument(
            "tied propensity quantiles; fewer subclasses are identifiable")

    subclass_of = np.full(frame.n_units, -1)
    subclass_of[include] = np.searchsorted(boundaries, scores[include], side="right")

    for s in range(n_subclasses):
        in_s = subclass_of == s
        if not (in_s & (frame.treatment == 1)).any():
            raise errors.EmptySubclassArm(s, "treated")
        if not (in_s & (frame.treatment == 0)).any():
            raise errors.EmptySubclassArm(s, "control")
    return Subclassification(n_subclasses=n_subclasses, boundaries=boundaries,
                             subclass_of=subclass_of, estimand=estimand)


def result_from_subclassification(sub: Subclassification,
                                  frame: StudyFrame) -> MatchResult:
    """Adapt a Subclassification into the unified MatchResult shape."""
    weights = _stratum_weights(frame.treatment, sub.subclass_of,
                               sub.n_subclasses, sub.estimand)
    sets = []
    for s in range(sub.n_subclasses):
        in_s = np.flatnonzero(sub.subclass_of == s)
        treated = tuple(int(i) for i in in_s if frame.treatment[i] == 1)
        controls = tuple(int(i) for i in in_s if frame.treatment[i] == 0)
        sets.append(MatchedSet(treated=treated, controls=controls))
    discarded = sub.subclass_of < 0
    reason = {int(i): COMMON_SUPPORT for i in np.flatnonzero(discarded)}
    method = {"kind": "subclassification",
              "params": {"n_subclasses": sub.n_subclasses},
              "boundaries": [float(b) for b in sub.boundaries],
              "stratum_weighting": sub.estimand}
    return MatchResult(estimand=sub.estimand, unit_weight=weights, sets=sets,
                       discarded=discarded, discard_reason=reason, method=method)


def trim_common_support(model: PropensityModel, frame: StudyFrame,
                        estimand: str = ATT) -> SupportFlags:
    """Propensity-range common support rule.

    ATT keeps all treated and drops controls outside the treated score range;
    ATE additionally drops treated outside the control range.
    """
    if estimand not in (ATT, ATE):
        raise errors.InvalidArgument(f"unknown estimand {estimand!r}")
    scores = model.scores
    treated = frame.treatment == 1
    t_lo, t_hi = scores[treated].min(), scores[treated].max()
    discard = np.zeros(frame.n_units, dtype=bool)
    discard[~treated & ((scores < t_lo) | (scores > t_hi))] = True
    if estimand == ATE:
        c_lo, c_hi = scores[~treated].min(), scores[~treated].max()
        discard[treated & ((scores < c_lo) | (scores > c_hi))] = True
    if discard[treated].all() or discard[~treated].all():
        raise errors.EverythingDiscarded(
            "common-support rule removed an entire arm")
    reason = {int(i): COMMON_SUPPORT for i in np.flatnonzero(discard)}
    return SupportFlags(discard=discard, reason=reason)
