"""Dataset containers, CSV ingestion, covariate transforms, and the two
validation data generators.

Schemas are always supplied explicitly (CLI flags or API JSON); column roles
are never inferred from names. Missing cells are rejected with an error that
names the offending row and column.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .numkit import RngStream

__all__ = [
    "DataValidationError",
    "BinaryDataset",
    "SurvivalDataset",
    "NormalizationReport",
    "BinarySchema",
    "SurvivalSchema",
    "parse_csv",
    "serialize_csv",
    "normalize",
    "encode_treatment",
    "simulate_binary_dgp",
    "simulate_survival_dgp",
]


class DataValidationError(ValueError):
    """Input data violated a structural requirement.

    ``row`` is the 1-based data row (header excluded) and ``column`` the
    column name when the problem is cell-addressable.
    """

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        self.row = row
        self.column = column
        if row is not None and column is not None:
            message = f"row {row}, column {column!r}: {message}"
        super().__init__(message)


# ---------------------------------------------------------------------------
# Dataset containers
# ---------------------------------------------------------------------------


def _check_binary_column(values: np.ndarray, name: str, require_both: bool = True):
    levels = np.unique(values)
    if not np.all(np.isin(levels, (0, 1))):
        bad = levels[~np.isin(levels, (0, 1))][0]
        raise DataValidationError(f"column {name!r} must be 0/1 but contains {bad}")
    if require_both and levels.size < 2:
        raise DataValidationError(f"column {name!r} must contain both 0 and 1")


@dataclass(eq=False)
class BinaryDataset:
    """Binary-outcome study data: outcome y, treatment z, covariate matrix x."""

    y: np.ndarray
    z: np.ndarray
    x: np.ndarray
    column_names: tuple[str, ...]
    row_ids: tuple[str, ...]

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=int)
        self.z = np.asarray(self.z, dtype=int)
        self.x = np.asarray(self.x, dtype=float)
        if self.x.ndim != 2:
            raise DataValidationError("covariates must form a 2-d matrix")
        n, p = self.x.shape
        if p < 1:
            raise DataValidationError("at least one covariate is required")
        if self.y.shape != (n,) or self.z.shape != (n,):
            raise DataValidationError("outcome, treatment and covariates disagree on length")
        if len(self.column_names) != p:
            raise DataValidationError("column_names must label every covariate")
        if len(self.row_ids) != n:
            raise DataValidationError("row_ids must label every row")
        if not np.all(np.isfinite(self.x)):
            raise DataValidationError("covariates contain non-finite values")
        _check_binary_column(self.y, "outcome")
        _check_binary_column(self.z, "treatment")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def __eq__(self, other):
        if not isinstance(other, BinaryDataset):
            return NotImplemented
        return (
            np.array_equal(self.y, other.y)
            and np.array_equal(self.z, other.z)
            and np.array_equal(self.x, other.x)
            and self.column_names == other.column_names
            and self.row_ids == other.row_ids
        )


@dataclass(eq=False)
class SurvivalDataset:
    """Right-censored survival data with a single biomarker and K treatment dummies."""

    time: np.ndarray
    delta: np.ndarray
    x: np.ndarray
    z: np.ndarray
    treatment_labels: tuple[str, ...]
    row_ids: tuple[str, ...] = ()

    def __post_init__(self):
        self.time = np.asarray(self.time, dtype=float)
        self.delta = np.asarray(self.delta, dtype=int)
        self.x = np.asarray(self.x, dtype=float)
        self.z = np.asarray(self.z, dtype=int)
        n = self.time.shape[0]
        if self.z.ndim != 2:
            raise DataValidationError("treatment dummies must form a 2-d matrix")
        if self.z.shape[0] != n or self.delta.shape != (n,) or self.x.shape != (n,):
            raise DataValidationError("time, status, biomarker and treatments disagree on length")
        if len(self.treatment_labels) != self.z.shape[1]:
            raise DataValidationError("treatment_labels must label every dummy column")
        if not self.row_ids:
            self.row_ids = tuple(str(i) for i in range(1, n + 1))
        if not np.all(np.isfinite(self.time)) or np.any(self.time <= 0):
            raise DataValidationError("times must be strictly positive")
        if not np.all(np.isfinite(self.x)):
            raise DataValidationError("biomarker contains non-finite values")
        _check_binary_column(self.delta, "status", require_both=False)
        bad = ~np.isin(np.unique(self.z), (0, 1))
        if np.any(bad):
            raise DataValidationError("treatment dummies must be 0/1")
        if np.any(self.z.sum(axis=1) > 1):
            raise DataValidationError("a subject may belong to at most one treatment arm")
        # every arm with members (including the reference arm) needs an event
        for k, label in enumerate(self.treatment_labels):
            members = self.z[:, k] == 1
            if members.any() and not np.any(self.delta[members] == 1):
                raise DataValidationError(f"arm {label!r} has no observed events")
        ref = self.z.sum(axis=1) == 0
        if ref.any() and not np.any(self.delta[ref] == 1):
            raise DataValidationError("reference arm has no observed events")

    @property
    def n(self) -> int:
        return self.time.shape[0]

    @property
    def n_arms(self) -> int:
        return self.z.shape[1]

    def __eq__(self, other):
        if not isinstance(other, SurvivalDataset):
            return NotImplemented
        return (
            np.array_equal(self.time, other.time)
            and np.array_equal(self.delta, other.delta)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.z, other.z)
            and self.treatment_labels == other.treatment_labels
            and self.row_ids == other.row_ids
        )


@dataclass(frozen=True)
class NormalizationReport:
    """Per-column mean and sample sd used for z-scoring at training time."""

    means: tuple[float, ...]
    sds: tuple[float, ...]

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[1] != len(self.means):
            raise DataValidationError(
                f"expected {len(self.means)} covariate columns, got {x.shape[1]}"
            )
        return (x - np.asarray(self.means)) / np.asarray(self.sds)


# ---------------------------------------------------------------------------
# CSV parsing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BinarySchema:
    outcome: str
    treatment: str
    covariates: tuple[str, ...]
    id: str | None = None

    def __post_init__(self):
        if not self.covariates:
            raise DataValidationError("at least one covariate column is required")


@dataclass(frozen=True)
class SurvivalSchema:
    """Role assignment for survival files.

    Exactly one of ``treatments`` (existing dummy columns) or ``treatment``
    (a single categorical column, dummy-coded with its lowest level as the
    reference arm) must be given.
    """

    time: str
    status: str
    biomarker: str
    treatments: tuple[str, ...] = ()
    treatment: str | None = None
    id: str | None = None

    def __post_init__(self):
        if bool(self.treatments) == (self.treatment is not None):
            raise DataValidationError(
                "give either treatment dummy columns or a single categorical treatment column"
            )


def _read_table(text: str | bytes) -> tuple[list[str], list[list[str]]]:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    reader = csv.reader(io.StringIO(text))
    rows = [row for row in reader]
    if not rows or not any(cell.strip() for cell in rows[0]):
        raise DataValidationError("file has no header row")
    header = [h.strip() for h in rows[0]]
    body = [row for row in rows[1:] if any(cell.strip() for cell in row)]
    return header, body


def _cell(row: list[str], idx: dict[str, int], col: str, rownum: int) -> str:
    j = idx[col]
    if j >= len(row) or row[j].strip() == "":
        raise DataValidationError("missing value", row=rownum, column=col)
    return row[j].strip()


def _float_cell(row, idx, col, rownum) -> float:
    raw = _cell(row, idx, col, rownum)
    try:
        return float(raw)
    except ValueError:
        raise DataValidationError(f"cannot parse {raw!r} as a number", row=rownum, column=col)


def _binary_cell(row, idx, col, rownum) -> int:
    v = _float_cell(row, idx, col, rownum)
    if v not in (0.0, 1.0):
        raise DataValidationError(f"expected 0 or 1, got {v}", row=rownum, column=col)
    return int(v)


def _column_index(header: list[str], schema_cols: Sequence[str]) -> dict[str, int]:
    idx = {}
    for col in schema_cols:
        if col is None:
            continue
        if col not in header:
            raise DataValidationError(f"column {col!r} not found in the file header")
        idx[col] = header.index(col)
    return idx


def parse_csv(text: str | bytes, schema: BinarySchema | SurvivalSchema):
    """Parse a tidy CSV into a validated dataset according to the schema."""
    header, body = _read_table(text)
    if isinstance(schema, BinarySchema):
        cols = [schema.outcome, schema.treatment, *schema.covariates]
        if schema.id:
            cols.append(schema.id)
        idx = _column_index(header, cols)
        y, z, xs, ids = [], [], [], []
        for i, row in enumerate(body, start=1):
            y.append(_binary_cell(row, idx, schema.outcome, i))
            z.append(_binary_cell(row, idx, schema.treatment, i))
            xs.append([_float_cell(row, idx, c, i) for c in schema.covariates])
            ids.append(_cell(row, idx, schema.id, i) if schema.id else str(i))
        return BinaryDataset(
            y=np.array(y),
            z=np.array(z),
            x=np.array(xs, dtype=float).reshape(len(body), len(schema.covariates)),
            column_names=tuple(schema.covariates),
            row_ids=tuple(ids),
        )

    if isinstance(schema, SurvivalSchema):
        cols = [schema.time, schema.status, schema.biomarker, *schema.treatments]
        if schema.treatment:
            cols.append(schema.treatment)
        if schema.id:
            cols.append(schema.id)
        idx = _column_index(header, cols)
        time, delta, x, ids = [], [], [], []
        raw_treat: list = []
        dummies: list[list[int]] = []
        for i, row in enumerate(body, start=1):
            time.append(_float_cell(row, idx, schema.time, i))
            delta.append(_binary_cell(row, idx, schema.status, i))
            x.append(_float_cell(row, idx, schema.biomarker, i))
            if schema.treatment:
                raw_treat.append(_cell(row, idx, schema.treatment, i))
            else:
                dummies.append([_binary_cell(row, idx, c, i) for c in schema.treatments])
            ids.append(_cell(row, idx, schema.id, i) if schema.id else str(i))
        if schema.treatment:
            levels = _sorted_levels(raw_treat)
            zmat, labels = encode_treatment(raw_treat, reference=levels[0])
        else:
            zmat = np.array(dummies, dtype=int).reshape(len(body), len(schema.treatments))
            labels = tuple(schema.treatments)
        return SurvivalDataset(
            time=np.array(time),
            delta=np.array(delta),
            x=np.array(x),
            z=zmat,
            treatment_labels=labels,
            row_ids=tuple(ids),
        )

    raise TypeError(f"unsupported schema type {type(schema)!r}")


def serialize_csv(
    dataset: BinaryDataset | SurvivalDataset,
    outcome: str = "outcome",
    treatment: str = "treatment",
    time: str = "time",
    status: str = "status",
    biomarker: str = "X",
    id_col: str | None = None,
) -> str:
    """Write a dataset back to tidy CSV (inverse of parse_csv)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if isinstance(dataset, BinaryDataset):
        head = [outcome, treatment, *dataset.column_names]
        if id_col:
            head.append(id_col)
        w.writerow(head)
        for i in range(dataset.n):
            row = [dataset.y[i], dataset.z[i], *(repr(float(v)) for v in dataset.x[i])]
            if id_col:
                row.append(dataset.row_ids[i])
            w.writerow(row)
    else:
        head = [time, status, biomarker, *dataset.treatment_labels]
        if id_col:
            head.append(id_col)
        w.writerow(head)
        for i in range(dataset.n):
            row = [
                repr(float(dataset.time[i])),
                dataset.delta[i],
                repr(float(dataset.x[i])),
                *dataset.z[i],
            ]
            if id_col:
                row.append(dataset.row_ids[i])
            w.writerow(row)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Transforms
# ---------------------------------------------------------------------------


def normalize(
    x: np.ndarray, column_names: Sequence[str] | None = None
) -> tuple[np.ndarray, NormalizationReport]:
    """Z-score every column (sample sd, ddof=1); constant columns are rejected."""
    x = np.asarray(x, dtype=float)
    means = x.mean(axis=0)
    sds = x.std(axis=0, ddof=1)
    for j, sd in enumerate(sds):
        if not sd > 0:
            name = column_names[j] if column_names else f"column {j + 1}"
            raise DataValidationError(f"cannot normalize constant column {name!r}")
    report = NormalizationReport(means=tuple(float(m) for m in means), sds=tuple(float(s) for s in sds))
    return (x - means) / sds, report


def _sorted_levels(raw: Sequence) -> list:
    levels = sorted(set(str(v) for v in raw), key=lambda s: (0, float(s)) if _is_number(s) else (1, s))
    return levels


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def encode_treatment(raw: Sequence, reference) -> tuple[np.ndarray, tuple[str, ...]]:
    """Dummy-code a categorical treatment column against a reference level.

    Levels are ordered numerically when possible, lexicographically
    otherwise; the reference maps to the all-zero row.
    """
    raw = [str(v) for v in raw]
    levels = _sorted_levels(raw)
    if len(levels) < 2:
        raise DataValidationError("treatment column must have at least two levels")
    reference = str(reference)
    if reference not in levels:
        raise DataValidationError(f"reference level {reference!r} not among levels {levels}")
    others = [lv for lv in levels if lv != reference]
    z = np.zeros((len(raw), len(others)), dtype=int)
    col = {lv: k for k, lv in enumerate(others)}
    for i, v in enumerate(raw):
        if v != reference:
            z[i, col[v]] = 1
    return z, tuple(others)


# ---------------------------------------------------------------------------
# Validation data generators
# ---------------------------------------------------------------------------


def simulate_binary_dgp(
    n: int, p: int, seed: int
) -> tuple[BinaryDataset, Callable[[np.ndarray], np.ndarray]]:
    """Binary-outcome generator with a quadratic treatment-modification curve.

    Covariates are multivariate normal with AR(0.5) covariance, truncated to
    (-2, 2) coordinate-wise by rejection. The treated linear predictor adds
    u(1-u) of the first index; the returned callback evaluates that truth.
    """
    if p < 3:
        raise ValueError(f"p must be at least 3, got {p}")
    if n < 10:
        raise ValueError(f"n must be at least 10, got {n}")
    rng = RngStream(seed, 0).generator()

    cov = 0.5 ** np.abs(np.subtract.outer(np.arange(p), np.arange(p)))
    chol = np.linalg.cholesky(cov)
    x = np.empty((n, p))
    need = np.arange(n)
    while need.size:
        draw = rng.standard_normal((need.size, p)) @ chol.T
        ok = np.all(np.abs(draw) < 2.0, axis=1)
        x[need[ok]] = draw[ok]
        need = need[~ok]

    beta1 = np.zeros(p)
    beta1[:3] = 1.0 / np.sqrt(3.0)
    beta2 = np.zeros(p)
    beta2[0] = 1.0 / np.sqrt(5.0)
    beta2[1] = -2.0 / np.sqrt(5.0)

    z = (rng.random(n) < 0.5).astype(int)
    u1 = x @ beta1
    u2 = x @ beta2
    eta = u1 * (1.0 - u1) * z + np.exp(u2)
    mu = 1.0 / (1.0 + np.exp(-eta))
    y = (rng.random(n) < mu).astype(int)

    dataset = BinaryDataset(
        y=y,
        z=z,
        x=x,
        column_names=tuple(f"X.{j + 1}" for j in range(p)),
        row_ids=tuple(str(i) for i in range(1, n + 1)),
    )

    def true_curve(u):
        u = np.asarray(u, dtype=float)
        return u * (1.0 - u)

    return dataset, true_curve


def simulate_survival_dgp(
    n: int, seed: int
) -> tuple[SurvivalDataset, Callable[[np.ndarray], np.ndarray]]:
    """Two-arm survival generator with biomarker-varying log hazard ratios.

    Failure times invert the cumulative hazard 0.2 t^3 exp(eta) in closed
    form; censoring is exponential with rate 0.23 x, giving roughly 20%
    censoring. The callback returns the (K=2) true coefficient curves.
    """
    if n < 20:
        raise ValueError(f"n must be at least 20, got {n}")
    rng = RngStream(seed, 0).generator()

    x = rng.uniform(0.0, 1.0, n)
    z1 = (rng.random(n) < 0.3).astype(int)
    b = (rng.random(n) < 0.5).astype(int)
    z2 = b * (1 - z1)
    eta = (-1.0 - np.exp(x)) * z1 + (-np.exp(x)) * z2 + x**2
    e = rng.exponential(1.0, n)
    t = (e / (0.2 * np.exp(eta))) ** (1.0 / 3.0)
    c = rng.exponential(1.0, n) / (0.23 * x)
    time = np.minimum(t, c)
    delta = (t <= c).astype(int)

    dataset = SurvivalDataset(
        time=time,
        delta=delta,
        x=x,
        z=np.column_stack([z1, z2]),
        treatment_labels=("Treat1", "Treat2"),
        row_ids=tuple(str(i) for i in range(1, n + 1)),
    )

    def true_beta(x0):
        x0 = np.asarray(x0, dtype=float)
        return np.stack([-1.0 - np.exp(x0), -np.exp(x0)], axis=-1)

    return dataset, true_beta
