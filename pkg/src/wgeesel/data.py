"""Balanced longitudinal panels with monotone dropout.

A :class:`LongitudinalDataset` holds ``n`` subjects observed at ``T``
occasions.  Outcomes that were not observed are stored as ``NaN`` and the
observation indicator ``r`` is the single source of truth for which cells
carry data; every numeric consumer masks with ``r`` before arithmetic.

Occasions are 1-based in every user-facing message.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .exceptions import DataValidationError, NonMonotoneError

FAMILIES = ("binary", "gaussian")


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class LongitudinalDataset:
    """Immutable balanced panel.

    Attributes
    ----------
    y : ndarray (n, T)
        Outcomes, ``NaN`` where unobserved.
    r : ndarray (n, T)
        Observation indicators (1 observed, 0 missing).
    x : ndarray (n, T, P)
        Mean-model covariates, *without* the intercept column.
    h : ndarray (n, T, Q)
        Raw dropout-model covariates (``Q`` may be 0).
    """

    y: np.ndarray
    r: np.ndarray
    x: np.ndarray
    h: np.ndarray
    covariate_names: tuple
    dropout_names: tuple = ()
    family: str = "binary"
    ids: tuple = ()
    times: tuple = ()

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        if y.ndim != 2:
            raise DataValidationError(f"y must be (n, T), got shape {y.shape}")
        n, T = y.shape
        r = np.asarray(self.r)
        x = np.asarray(self.x, dtype=float)
        h = np.asarray(self.h, dtype=float) if self.h is not None else np.zeros((n, T, 0))
        if x.ndim == 2:
            x = x[:, :, None]
        if h.ndim == 2:
            h = h[:, :, None]
        if r.shape != (n, T):
            raise DataValidationError(f"r has shape {r.shape}, expected {(n, T)}")
        if not np.isin(r, (0, 1)).all():
            raise DataValidationError("r must contain only 0/1")
        if x.shape[:2] != (n, T) or h.shape[:2] != (n, T):
            raise DataValidationError("x and h must be (n, T, k) arrays matching y")
        if len(self.covariate_names) != x.shape[2]:
            raise DataValidationError("covariate_names does not match x")
        if len(self.dropout_names) != h.shape[2]:
            raise DataValidationError("dropout_names does not match h")
        if self.family not in FAMILIES:
            raise DataValidationError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if not np.isfinite(x).all() or not np.isfinite(h).all():
            raise DataValidationError("covariates must be finite")
        obs = r == 1
        if not np.isfinite(y[obs]).all():
            raise DataValidationError("observed outcomes must be finite")
        if self.family == "binary" and not np.isin(y[obs], (0.0, 1.0)).all():
            raise DataValidationError("binary outcomes must be 0 or 1")
        violations = validate_monotone(r, self.ids or None)
        if violations:
            raise NonMonotoneError(violations)

        y = np.where(obs, y, np.nan)
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "r", _frozen(r, dtype=np.int8))
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "h", _frozen(h))
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        object.__setattr__(self, "dropout_names", tuple(self.dropout_names))
        object.__setattr__(self, "ids", tuple(self.ids) if self.ids else tuple(range(1, n + 1)))
        object.__setattr__(self, "times", tuple(self.times) if self.times else tuple(range(1, T + 1)))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def T(self) -> int:
        return self.y.shape[1]

    @property
    def y_filled(self) -> np.ndarray:
        """Outcomes with unobserved cells set to 0 (safe only under a zero weight)."""
        return np.where(self.r == 1, self.y, 0.0)

    def subset(self, index) -> "LongitudinalDataset":
        """Dataset restricted (or reordered) to the given subject positions."""
        index = np.asarray(index)
        return LongitudinalDataset(
            y=self.y[index], r=self.r[index], x=self.x[index], h=self.h[index],
            covariate_names=self.covariate_names, dropout_names=self.dropout_names,
            family=self.family, ids=tuple(np.asarray(self.ids, dtype=object)[index]),
            times=self.times,
        )

    def covariate_index(self, name: str) -> int:
        try:
            return self.covariate_names.index(name)
        except ValueError:
            raise DataValidationError(f"unknown covariate {name!r}") from None


def validate_monotone(r, ids: Sequence | None = None) -> list:
    """Check that every row of ``r`` is a baseline-observed dropout pattern.

    Returns an empty list when the pattern is valid, otherwise one
    ``(subject_id, occasion)`` pair per offending subject giving the first
    occasion (1-based) that breaks monotonicity.  A missing baseline is
    reported at occasion 1.
    """
    r = np.asarray(r)
    if ids is None:
        ids = range(1, r.shape[0] + 1)
    out = []
    for sid, row in zip(ids, r):
        if row[0] != 1:
            out.append((sid, 1))
            continue
        # first 0 followed later by a 1
        gone = False
        for j, v in enumerate(row):
            if v == 0:
                gone = True
            elif gone:
                out.append((sid, j + 1))
                break
    return out


@dataclass(frozen=True)
class MeanModelSpec:
    """Columns of a candidate marginal mean model.

    ``covariates`` index into ``LongitudinalDataset.covariate_names``; the
    intercept, when present, is always the first design column.
    """

    covariates: tuple = ()
    intercept: bool = True

    def __post_init__(self):
        cov = tuple(int(c) for c in self.covariates)
        if len(set(cov)) != len(cov):
            raise ValueError(f"duplicate covariate indices in {cov}")
        if any(c < 0 for c in cov):
            raise ValueError(f"negative covariate index in {cov}")
        if not cov and not self.intercept:
            raise ValueError("a mean model needs at least one column")
        object.__setattr__(self, "covariates", cov)

    @property
    def p(self) -> int:
        return len(self.covariates) + int(self.intercept)

    @classmethod
    def from_names(cls, names: Iterable[str], all_names: Sequence[str], intercept=True):
        all_names = list(all_names)
        idx = []
        for nm in names:
            if nm not in all_names:
                raise DataValidationError(f"unknown covariate {nm!r}")
            idx.append(all_names.index(nm))
        return cls(tuple(idx), intercept)

    def label(self, names: Sequence[str]) -> str:
        parts = [names[c] for c in self.covariates]
        if not parts:
            return "1" if self.intercept else ""
        return "+".join(parts)

    def contains(self, other: "MeanModelSpec") -> bool:
        return set(other.covariates) <= set(self.covariates) and (self.intercept or not other.intercept)


def design_matrices(dataset: LongitudinalDataset, spec: MeanModelSpec) -> np.ndarray:
    """Stacked per-subject design matrices, shape ``(n, T, spec.p)``."""
    P = dataset.x.shape[2]
    bad = [c for c in spec.covariates if c >= P]
    if bad:
        raise IndexError(f"covariate index {bad[0]} out of range for {P} covariates")
    cols = []
    if spec.intercept:
        cols.append(np.ones((dataset.n, dataset.T)))
    cols.extend(dataset.x[:, :, c] for c in spec.covariates)
    return np.stack(cols, axis=2)


# --------------------------------------------------------------------------
# long-format CSV


@dataclass
class Schema:
    """Column mapping for long-format CSV files.

    ``x`` and ``h`` list column names; ``None`` selects every column whose
    header starts with ``x.`` / ``h.`` (the prefix is stripped from names).
    """

    id: str = "id"
    time: str = "time"
    y: str = "y"
    x: list | None = None
    h: list | None = None
    family: str = "binary"
    extra: dict = field(default_factory=dict)


def read_schema(text: str) -> Schema:
    """Parse ``key = value`` lines into a :class:`Schema`.

    Blank lines and ``#`` comments are ignored.  ``x`` and ``h`` take
    comma-separated column lists.
    """
    schema = Schema()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataValidationError(f"schema line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in ("x", "h"):
            setattr(schema, key, [v.strip() for v in value.split(",") if v.strip()])
        elif key in ("id", "time", "y", "family"):
            setattr(schema, key, value)
        else:
            raise DataValidationError(f"schema line {lineno}: unknown key {key!r}")
    if schema.family not in FAMILIES:
        raise DataValidationError(f"schema: family must be one of {FAMILIES}")
    return schema


def _number(text, what):
    try:
        v = float(text)
    except (TypeError, ValueError):
        raise DataValidationError(f"non-numeric {what}: {text!r}") from None
    if not math.isfinite(v):
        raise DataValidationError(f"non-finite {what}: {text!r}")
    return v


def load_long_csv(source, schema: Schema | None = None) -> LongitudinalDataset:
    """Read a long-format CSV (one row per subject-occasion).

    ``source`` is a path or a text/binary stream.  An empty outcome cell
    marks the occasion as unobserved.

    Raises
    ------
    DataValidationError
        Ragged subjects, duplicate ``(id, time)`` keys, non-numeric values.
    NonMonotoneError
        Observation pattern is not monotone dropout.
    """
    schema = schema or Schema()
    if isinstance(source, (str, os.PathLike)):
        with open(source, newline="") as fh:
            return load_long_csv(fh, schema)
    if isinstance(source, (bytes, bytearray)):
        source = io.StringIO(source.decode())
    elif isinstance(source, io.IOBase) and not isinstance(source, io.TextIOBase):
        source = io.TextIOWrapper(source, newline="")

    reader = csv.DictReader(source)
    header = reader.fieldnames
    if not header:
        raise DataValidationError("CSV has no header row")
    for col in (schema.id, schema.time, schema.y):
        if col not in header:
            raise DataValidationError(f"missing column {col!r}")

    def resolve(cols, prefix):
        if cols is None:
            cols = [c for c in header if c.startswith(prefix)]
            return cols, [c[len(prefix):] for c in cols]
        missing = [c for c in cols if c not in header]
        if missing:
            raise DataValidationError(f"missing column {missing[0]!r}")
        return list(cols), list(cols)

    xcols, xnames = resolve(schema.x, "x.")
    hcols, hnames = resolve(schema.h, "h.")

    rows = {}
    order = []
    for lineno, rec in enumerate(reader, 2):
        sid = rec[schema.id]
        t = _number(rec[schema.time], f"time on line {lineno}")
        if sid not in rows:
            rows[sid] = {}
            order.append(sid)
        if t in rows[sid]:
            raise DataValidationError(f"duplicate (id, time) key ({sid}, {rec[schema.time]}) on line {lineno}")
        ytxt = (rec[schema.y] or "").strip()
        yv = np.nan if ytxt == "" else _number(ytxt, f"outcome on line {lineno}")
        xv = [_number(rec[c], f"covariate {c!r} on line {lineno}") for c in xcols]
        hv = [_number(rec[c], f"dropout covariate {c!r} on line {lineno}") for c in hcols]
        rows[sid][t] = (yv, xv, hv)
    if not order:
        raise DataValidationError("CSV has no data rows")

    times = sorted(rows[order[0]])
    for sid in order:
        if sorted(rows[sid]) != times:
            raise DataValidationError(
                f"ragged panel: subject {sid} has occasions {sorted(rows[sid])}, expected {times}"
            )
    n, T = len(order), len(times)
    y = np.full((n, T), np.nan)
    x = np.zeros((n, T, len(xcols)))
    h = np.zeros((n, T, len(hcols)))
    for i, sid in enumerate(order):
        for j, t in enumerate(times):
            yv, xv, hv = rows[sid][t]
            y[i, j] = yv
            x[i, j] = xv
            h[i, j] = hv
    r = (~np.isnan(y)).astype(np.int8)
    times = tuple(int(t) if float(t).is_integer() else t for t in times)
    return LongitudinalDataset(
        y=y, r=r, x=x, h=h, covariate_names=tuple(xnames), dropout_names=tuple(hnames),
        family=schema.family, ids=tuple(order), times=times,
    )


def write_long_csv(dataset: LongitudinalDataset, target) -> None:
    """Write ``dataset`` in the default long format (``x.``/``h.`` prefixes)."""
    if isinstance(target, (str, os.PathLike)):
        with open(target, "w", newline="") as fh:
            return write_long_csv(dataset, fh)
    w = csv.writer(target, lineterminator="\n")
    w.writerow(["id", "time", "y"]
               + [f"x.{c}" for c in dataset.covariate_names]
               + [f"h.{c}" for c in dataset.dropout_names])
    for i, sid in enumerate(dataset.ids):
        for j, t in enumerate(dataset.times):
            yv = repr(float(dataset.y[i, j])) if dataset.r[i, j] else ""
            w.writerow([sid, t, yv]
                       + [repr(float(v)) for v in dataset.x[i, j]]
                       + [repr(float(v)) for v in dataset.h[i, j]])
