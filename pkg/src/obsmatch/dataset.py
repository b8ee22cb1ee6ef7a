"""Data containers and preparation for observational-study design.

CSV ingestion with per-cell missingness, single imputation with companion
missing-data indicators, and square / interaction term expansion. Frames are
immutable once built; every transformation returns a new frame.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import errors

CONTINUOUS = "continuous"
BINARY = "binary"
INDICATOR = "indicator"


@dataclass(frozen=True)
class Column:
    name: str
    kind: str


@dataclass(frozen=True)
class DerivedTerm:
    """Provenance record for a column computed from existing ones."""

    kind: str  # square | interaction | missing_indicator
    sources: tuple[str, ...]
    name: str
    note: str = ""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass
class CovariateTable:
    """Unit-by-covariate numeric matrix with column metadata and missingness mask.

    Missing entries hold NaN and are flagged in ``missing_mask``; downstream
    math must never read a masked value.
    """

    columns: list[Column]
    values: np.ndarray
    missing_mask: np.ndarray
    derived_terms: list[DerivedTerm] = field(default_factory=list)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        mask = np.array(self.missing_mask, dtype=bool)
        if values.ndim != 2 or mask.shape != values.shape:
            raise errors.DataError("covariate values and mask shapes disagree")
        if values.shape[1] != len(self.columns):
            raise errors.DataError("column metadata does not match matrix width")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise errors.DataError("duplicate covariate column names")
        for j, col in enumerate(self.columns):
            if col.kind in (BINARY, INDICATOR):
                observed = values[~mask[:, j], j]
                if observed.size and not np.isin(observed, (0.0, 1.0)).all():
                    raise errors.DataError(
                        f"column {col.name!r} is {col.kind} but has values outside {{0,1}}"
                    )
        known = set(names)
        for term in self.derived_terms:
            for src in term.sources:
                if src not in known:
                    raise errors.DataError(
                        f"derived term {term.name!r} references unknown column {src!r}"
                    )
        self.values = _frozen(values)
        self.missing_mask = _frozen(mask)

    @property
    def n_units(self) -> int:
        return self.values.shape[0]

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def index(self, name: str) -> int:
        for j, col in enumerate(self.columns):
            if col.name == name:
                return j
        raise errors.UnknownColumn(name)

    def kind(self, name: str) -> str:
        return self.columns[self.index(name)].kind


@dataclass
class StudyFrame:
    """Covariates plus treatment indicator and optional outcome."""

    covariates: CovariateTable
    treatment: np.ndarray
    outcome: np.ndarray | None = None
    unit_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        t = np.array(self.treatment)
        if t.shape != (self.covariates.n_units,):
            raise errors.DataError("treatment length does not match covariates")
        if np.isnan(np.asarray(t, dtype=float)).any():
            raise errors.NonBinaryTreatment("treatment has missing entries")
        if not np.isin(t, (0, 1)).all():
            raise errors.NonBinaryTreatment("treatment contains values other than 0/1")
        t = t.astype(int)
        if (t == 1).sum() == 0 or (t == 0).sum() == 0:
            raise errors.EmptyTreatmentArm("need at least one treated and one control unit")
        self.treatment = _frozen(t)
        if self.outcome is not None:
            y = np.array(self.outcome, dtype=float)
            if y.shape != t.shape:
                raise errors.DataError("outcome length does not match treatment")
            self.outcome = _frozen(y)
        if not self.unit_ids:
            self.unit_ids = [str(i) for i in range(t.size)]
        elif len(self.unit_ids) != t.size:
            raise errors.DataError("unit_ids length does not match treatment")

    @property
    def n_units(self) -> int:
        return self.treatment.size

    @property
    def n_treated(self) -> int:
        return int((self.treatment == 1).sum())

    @property
    def n_control(self) -> int:
        return int((self.treatment == 0).sum())

    @property
    def treated_idx(self) -> np.ndarray:
        return np.flatnonzero(self.treatment == 1)

    @property
    def control_idx(self) -> np.ndarray:
        return np.flatnonzero(self.treatment == 0)

    def column(self, name: str) -> np.ndarray:
        return self.covariates.values[:, self.covariates.index(name)]

    def matrix(self, names: list[str] | tuple[str, ...]) -> np.ndarray:
        """Dense (n, k) matrix of the named columns; they must be fully observed."""
        idx = [self.covariates.index(n) for n in names]
        if idx and self.covariates.missing_mask[:, idx].any():
            bad = [n for j, n in zip(idx, names)
                   if self.covariates.missing_mask[:, j].any()]
            raise errors.MissingValues(
                f"columns {bad} have missing entries; impute first"
            )
        return self.covariates.values[:, idx].copy()

    def take(self, idx: np.ndarray) -> "StudyFrame":
        """New frame from unit positions (repeats allowed, e.g. bootstrap)."""
        idx = np.asarray(idx, dtype=int)
        table = CovariateTable(
            columns=list(self.covariates.columns),
            values=self.covariates.values[idx],
            missing_mask=self.covariates.missing_mask[idx],
            derived_terms=list(self.covariates.derived_terms),
        )
        return StudyFrame(
            covariates=table,
            treatment=self.treatment[idx],
            outcome=None if self.outcome is None else self.outcome[idx],
            unit_ids=[self.unit_ids[i] for i in idx],
        )


def _infer_kind(observed: np.ndarray) -> str:
    distinct = np.unique(observed)
    if distinct.size and distinct.size <= 2 and np.isin(distinct, (0.0, 1.0)).all():
        return BINARY
    return CONTINUOUS


def load_csv(path, treatment_col: str, outcome_col: str | None,
             covariate_cols: list[str]) -> StudyFrame:
    """Load a StudyFrame from a comma-delimited file with a header row.

    Empty cells mark missing covariate values (the only missing marker).
    A first column named "id" supplies unit identifiers. The outcome column
    is only parsed when requested, so design-only runs never read it.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise errors.DataError(f"{path} is empty") from None
        rows = list(reader)

    header = [h.strip() for h in header]
    positions = {name: i for i, name in enumerate(header)}
    wanted = [treatment_col] + ([outcome_col] if outcome_col else []) + list(covariate_cols)
    for name in wanted:
        if name not in positions:
            raise errors.MissingColumn(f"column {name!r} not in header of {path}")

    has_id = bool(header) and header[0] == "id" and "id" not in wanted
    unit_ids: list[str] = []
    treatment: list[float] = []
    outcome: list[float] = []
    p = len(covariate_cols)
    values = np.empty((len(rows), p))
    mask = np.zeros((len(rows), p), dtype=bool)

    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise errors.UnparseableCell(r, "<row width>")
        cell = row[positions[treatment_col]].strip()
        try:
            t = float(cell)
        except ValueError:
            raise errors.NonBinaryTreatment(
                f"treatment cell {cell!r} at row {r} does not parse"
            ) from None
        if t not in (0.0, 1.0):
            raise errors.NonBinaryTreatment(f"treatment value {cell!r} at row {r}")
        treatment.append(t)
        if outcome_col:
            cell = row[positions[outcome_col]].strip()
            try:
                outcome.append(float(cell))
            except ValueError:
                raise errors.UnparseableCell(r, outcome_col) from None
        for j, name in enumerate(covariate_cols):
            cell = row[positions[name]].strip()
            if cell == "":
                values[r, j] = np.nan
                mask[r, j] = True
            else:
                try:
                    values[r, j] = float(cell)
                except ValueError:
                    raise errors.UnparseableCell(r, name) from None
        if has_id:
            unit_ids.append(row[0].strip())

    columns = []
    for j, name in enumerate(covariate_cols):
        observed = values[~mask[:, j], j]
        columns.append(Column(name, _infer_kind(observed)))

    table = CovariateTable(columns=columns, values=values, missing_mask=mask)
    return StudyFrame(
        covariates=table,
        treatment=np.asarray(treatment),
        outcome=np.asarray(outcome) if outcome_col else None,
        unit_ids=unit_ids,
    )


def save_csv(frame: StudyFrame, path, treatment_col: str = "treatment",
             outcome_col: str = "outcome") -> None:
    """Write a frame back out in the load_csv dialect (empty cell = missing)."""
    path = Path(path)
    names = frame.covariates.names
    header = ["id", treatment_col]
    if frame.outcome is not None:
        header.append(outcome_col)
    header += names
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(frame.n_units):
            row = [frame.unit_ids[i], str(int(frame.treatment[i]))]
            if frame.outcome is not None:
                row.append(repr(float(frame.outcome[i])))
            for j in range(len(names)):
                if frame.covariates.missing_mask[i, j]:
                    row.append("")
                else:
                    row.append(repr(float(frame.covariates.values[i, j])))
            writer.writerow(row)


def impute_with_indicators(frame: StudyFrame) -> StudyFrame:
    """Mean-impute missing covariates and append 0/1 missing-data indicators.

    Each column with at least one missing entry gets (a) the observed-sample
    column mean in place of its missing values and (b) a companion indicator
    column (1 where the value was missing). Fully observed frames come back
    unchanged; the result always has an empty missing mask.
    """
    mask = frame.covariates.missing_mask
    if not mask.any():
        return frame
    values = frame.covariates.values.copy()
    columns = list(frame.covariates.columns)
    derived = list(frame.covariates.derived_terms)
    indicator_cols = []
    for j, col in enumerate(frame.covariates.columns):
        mj = mask[:, j]
        if not mj.any():
            continue
        observed = values[~mj, j]
        if observed.size == 0:
            raise errors.AllMissingColumn(col.name)
        values[mj, j] = observed.mean()
        ind_name = f"{col.name}_missing"
        indicator_cols.append((ind_name, mj.astype(float)))
        derived.append(DerivedTerm(kind="missing_indicator",
                                   sources=(col.name,), name=ind_name))
    for name, ind in indicator_cols:
        columns.append(Column(name, INDICATOR))
        values = np.column_stack([values, ind])
    table = CovariateTable(
        columns=columns,
        values=values,
        missing_mask=np.zeros_like(values, dtype=bool),
        derived_terms=derived,
    )
    return StudyFrame(covariates=table, treatment=frame.treatment,
                      outcome=frame.outcome, unit_ids=list(frame.unit_ids))


def expand_terms(frame: StudyFrame, squares: list[str] = (),
                 interactions: list[tuple[str, str]] = ()) -> StudyFrame:
    """Append x^2 and x*y columns with provenance; originals are untouched."""
    if not squares and not interactions:
        return frame
    values = frame.covariates.values
    mask = frame.covariates.missing_mask
    columns = list(frame.covariates.columns)
    derived = list(frame.covariates.derived_terms)
    existing = set(frame.covariates.names)
    new_cols = []

    def _observed(name: str) -> np.ndarray:
        j = frame.covariates.index(name)
        if mask[:, j].any():
            raise errors.MissingValues(f"column {name!r} has missing entries")
        return values[:, j]

    for name in squares:
        x = _observed(name)
        new_name = f"{name}^2"
        if new_name in existing:
            raise errors.DataError(f"column {new_name!r} already exists")
        note = "square_of_binary" if frame.covariates.kind(name) != CONTINUOUS else ""
        new_cols.append((new_name, x * x))
        derived.append(DerivedTerm(kind="square", sources=(name,),
                                   name=new_name, note=note))
        existing.add(new_name)
    for a, b in interactions:
        xa, xb = _observed(a), _observed(b)
        new_name = f"{a}:{b}"
        if new_name in existing:
            raise errors.DataError(f"column {new_name!r} already exists")
        new_cols.append((new_name, xa * xb))
        derived.append(DerivedTerm(kind="interaction", sources=(a, b), name=new_name))
        existing.add(new_name)

    out_values = np.column_stack([values] + [col for _, col in new_cols])
    out_mask = np.column_stack(
        [mask] + [np.zeros(frame.n_units, dtype=bool) for _ in new_cols])
    for name, _ in new_cols:
        columns.append(Column(name, CONTINUOUS))
    table = CovariateTable(columns=columns, values=out_values,
                           missing_mask=out_mask, derived_terms=derived)
    return StudyFrame(covariates=table, treatment=frame.treatment,
                      outcome=frame.outcome, unit_ids=list(frame.unit_ids))
