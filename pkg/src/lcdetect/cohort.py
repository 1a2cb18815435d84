"""Patient data model, CSV ingestion, synthetic cohort generation, and the
baseline-characteristics table.

The synthetic generator draws from per-class marginals (normal for age,
log-normal for the blood analytes, both solved from median/IQR targets)
coupled through a Gaussian copula assembled from declared correlation blocks.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import CohortParseError, CohortSchemaError, IntegrityError, SpecError

# Canonical analyte columns, in CSV order.
ANALYTES = [
    "alat",
    "albumin",
    "amylase_pancreatic",
    "alkaline_phosphatase",
    "basophils",
    "bilirubin_total",
    "crp",
    "calcium_total",
    "eosinophils",
    "hemoglobin",
    "inr",
    "potassium",
    "creatinine",
    "ldh",
    "leucocytes",
    "lymphocytes",
    "monocytes",
    "sodium",
    "neutrophils",
    "platelets",
]

CSV_HEADER = ["id", "age", "sex", "smoking", "label", "stage"] + ANALYTES

# Model feature order: age first, then the two indicators, then analytes.
# sex is coded 1 = female, smoking is coded 1 = ever smoker.
FEATURES = ["age", "sex", "smoking"] + ANALYTES
BINARY_FEATURES = ("sex", "smoking")
CONTINUOUS_FEATURES = ["age"] + ANALYTES

# Analytes that may carry missing values in generated data; two of the
# source clinics ordered these three tests infrequently.
MASKABLE_ANALYTES = ("amylase_pancreatic", "calcium_total", "inr")

STAGES = ("I", "II", "III", "IV")

LC = 1
NON_LC = 0

_Z75 = stats.norm.ppf(0.75)  # 0.674489750196...


@dataclass(frozen=True)
class PatientRecord:
    id: str
    age: int
    sex: str  # "F" | "M"
    smoking: str  # "never" | "ever"
    labs: dict  # analyte -> float or None
    label: int  # 1 = LC, 0 = non-LC
    stage: str | None = None

    def __post_init__(self):
        if self.age < 18:
            raise ValueError(f"record {self.id}: age {self.age} below 18")
        if self.sex not in ("F", "M"):
            raise ValueError(f"record {self.id}: sex must be F or M")
        if self.smoking not in ("never", "ever"):
            raise ValueError(f"record {self.id}: smoking must be never or ever")
        if self.label not in (LC, NON_LC):
            raise ValueError(f"record {self.id}: label must be 0 or 1")
        if set(self.labs) != set(ANALYTES):
            missing = sorted(set(ANALYTES) - set(self.labs))
            extra = sorted(set(self.labs) - set(ANALYTES))
            raise ValueError(
                f"record {self.id}: labs must contain exactly the 20 canonical "
                f"analytes (missing {missing}, unexpected {extra})"
            )
        for name, value in self.labs.items():
            if value is None:
                continue
            if not math.isfinite(value) or value <= 0:
                raise ValueError(
                    f"record {self.id}: lab {name}={value!r} must be finite and > 0"
                )
        if self.stage is not None and self.stage not in STAGES:
            raise ValueError(f"record {self.id}: stage {self.stage!r} invalid")
        if self.stage is not None and self.label != LC:
            raise ValueError(f"record {self.id}: stage present on non-LC record")

    def feature_vector(self) -> np.ndarray:
        """Numeric features in FEATURES order; missing labs become NaN."""
        out = np.empty(len(FEATURES))
        out[0] = float(self.age)
        out[1] = 1.0 if self.sex == "F" else 0.0
        out[2] = 1.0 if self.smoking == "ever" else 0.0
        for j, name in enumerate(ANALYTES):
            v = self.labs[name]
            out[3 + j] = np.nan if v is None else float(v)
        return out


@dataclass(frozen=True)
class Cohort:
    records: tuple
    provenance: str  # "ingested" | "synthetic"
    seed: int | None = None

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            dup = next(i for i in ids if ids.count(i) > 1)
            raise IntegrityError(f"duplicate record id {dup!r}")

    def __len__(self):
        return len(self.records)

    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=int)

    def prevalence(self) -> float:
        y = self.labels()
        return float(y.mean()) if len(y) else 0.0

    def feature_matrix(self) -> np.ndarray:
        """(n, 23) matrix in FEATURES order, NaN for missing labs."""
        if not self.records:
            return np.empty((0, len(FEATURES)))
        return np.vstack([r.feature_vector() for r in self.records])

    def subset(self, indices) -> "Cohort":
        recs = tuple(self.records[i] for i in indices)
        return Cohort(records=recs, provenance=self.provenance, seed=self.seed)


@dataclass
class CohortSpec:
    """Targets for the synthetic generator.

    continuous: feature -> {"lc"|"non_lc": {"median", "q1", "q3"}}
    binary:     feature -> {"lc"|"non_lc": positive proportion}
    correlation_blocks: ordered list of {"features": [...], "rho": r}; later
        blocks override earlier pair assignments, undeclared pairs default to
        independence.
    missingness: maskable analyte -> per-cell missing rate
    stage_distribution: stage -> probability (LC class only)
    """

    n: int
    prevalence: float
    continuous: dict
    binary: dict
    correlation_blocks: list = field(default_factory=list)
    missingness: dict = field(default_factory=dict)
    stage_distribution: dict = field(default_factory=dict)

    def validate(self) -> None:
        if not (0.0 < self.prevalence < 1.0):
            raise SpecError(f"prevalence {self.prevalence} not in (0,1)")
        if set(self.continuous) != set(CONTINUOUS_FEATURES):
            raise SpecError("continuous params must cover age and all 20 analytes")
        if set(self.binary) != set(BINARY_FEATURES):
            raise SpecError("binary params must cover sex and smoking")
        for feat, per_class in self.continuous.items():
            for cls in ("lc", "non_lc"):
                p = per_class[cls]
                m, q1, q3 = p["median"], p["q1"], p["q3"]
                if feat != "age" and m <= 0:
                    raise SpecError(f"{feat}: lab median must be > 0, got {m}")
                if not (q1 <= m <= q3):
                    raise SpecError(f"{feat} ({cls}): quartiles {q1},{m},{q3} not ordered")
                if feat != "age" and q1 <= 0:
                    raise SpecError(f"{feat} ({cls}): lab q1 must be > 0")
        for feat, per_class in self.binary.items():
            for cls in ("lc", "non_lc"):
                p = per_class[cls]
                if not (0.0 <= p <= 1.0):
                    raise SpecError(f"{feat} ({cls}): proportion {p} outside [0,1]")
        for block in self.correlation_blocks:
            unknown = set(block["features"]) - set(FEATURES)
            if unknown:
                raise SpecError(f"correlation block references unknown features {sorted(unknown)}")
            if len(block["features"]) < 2:
                raise SpecError("correlation block needs at least two features")
            if not (-1.0 <= block["rho"] <= 1.0):
                raise SpecError(f"correlation {block['rho']} outside [-1,1]")
        corr = self.correlation_matrix()
        min_eig = float(np.linalg.eigvalsh(corr)[0])
        if min_eig < -1e-10:
            raise SpecError(f"assembled correlation matrix not PSD (min eigenvalue {min_eig:.3e})")
        for analyte, rate in self.missingness.items():
            if analyte not in MASKABLE_ANALYTES:
                raise SpecError(f"missingness declared for non-maskable analyte {analyte!r}")
            if not (0.0 <= rate < 1.0):
                raise SpecError(f"missingness rate {rate} for {analyte} outside [0,1)")
        if self.stage_distribution:
            unknown = set(self.stage_distribution) - set(STAGES)
            if unknown:
                raise SpecError(f"unknown stages {sorted(unknown)}")
            total = sum(self.stage_distribution.values())
            if abs(total - 1.0) > 1e-9:
                raise SpecError(f"stage distribution sums to {total}, expected 1")

    def correlation_matrix(self) -> np.ndarray:
        d = len(FEATURES)
        corr = np.eye(d)
        index = {name: i for i, name in enumerate(FEATURES)}
        for block in self.correlation_blocks:
            cols = [index[f] for f in block["features"]]
            for a in cols:
                for b in cols:
                    if a != b:
                        corr[a, b] = block["rho"]
        return corr

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "prevalence": self.prevalence,
            "continuous": self.continuous,
            "binary": self.binary,
            "correlation_blocks": self.correlation_blocks,
            "missingness": self.missingness,
            "stage_distribution": self.stage_distribution,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CohortSpec":
        spec = cls(
            n=int(data["n"]),
            prevalence=float(data["prevalence"]),
            continuous=data["continuous"],
            binary=data["binary"],
            correlation_blocks=list(data.get("correlation_blocks", [])),
            missingness=dict(data.get("missingness", {})),
            stage_distribution=dict(data.get("stage_distribution", {})),
        )
        spec.validate()
        return spec


# Default targets: per-class medians and quartiles of the study population.
# Two printed quartiles are physiologically impossible and are corrected here
# (LC sodium q1 137, LC leucocytes q1 7.29); the LC age median is 75.
_DEFAULT_CONTINUOUS = {
    "age": {"lc": (75, 68, 80), "non_lc": (71, 59, 79)},
    "alat": {"lc": (19, 14, 26), "non_lc": (22, 16, 31)},
    "albumin": {"lc": (42, 40, 45), "non_lc": (43, 41, 45)},
    "amylase_pancreatic": {"lc": (25, 19, 34), "non_lc": (25, 18, 33)},
    "alkaline_phosphatase": {"lc": (81, 67, 99), "non_lc": (74, 62, 91)},
    "basophils": {"lc": (0.05, 0.02, 0.06), "non_lc": (0.04, 0.02, 0.06)},
    "bilirubin_total": {"lc": (7, 5, 9), "non_lc": (7, 5, 10)},
    "crp": {"lc": (7.0, 2.3, 22.0), "non_lc": (3.4, 1.4, 9.3)},
    "calcium_total": {"lc": (2.38, 2.31, 2.45), "non_lc": (2.34, 2.28, 2.41)},
    "eosinophils": {"lc": (0.14, 0.08, 0.24), "non_lc": (0.17, 0.10, 0.28)},
    "hemoglobin": {"lc": (8.5, 7.8, 9.1), "non_lc": (8.7, 8.1, 9.3)},
    "inr": {"lc": (1.0, 0.94, 1.08), "non_lc": (1.0, 0.95, 1.1)},
    "potassium": {"lc": (4.0, 3.8, 4.3), "non_lc": (4.0, 3.8, 4.3)},
    "creatinine": {"lc": (72, 61, 87), "non_lc": (76, 64, 90)},
    "ldh": {"lc": (209, 182, 246), "non_lc": (192, 169, 220)},
    "leucocytes": {"lc": (8.80, 7.29, 10.70), "non_lc": (7.62, 6.20, 9.38)},
    "lymphocytes": {"lc": (1.79, 1.37, 2.34), "non_lc": (1.84, 1.40, 2.37)},
    "monocytes": {"lc": (0.73, 0.57, 0.93), "non_lc": (0.65, 0.51, 0.83)},
    "sodium": {"lc": (139, 137, 141), "non_lc": (140, 138, 142)},
    "neutrophils": {"lc": (5.77, 4.52, 7.42), "non_lc": (4.66, 3.54, 6.11)},
    "platelets": {"lc": (301, 243, 378), "non_lc": (271, 224, 331)},
}


def default_spec() -> CohortSpec:
    """Spec calibrated to the 9,940-patient study population."""
    continuous = {
        feat: {
            cls: {"median": float(m), "q1": float(q1), "q3": float(q3)}
            for cls, (m, q1, q3) in per_class.items()
        }
        for feat, per_class in _DEFAULT_CONTINUOUS.items()
    }
    spec = CohortSpec(
        n=9940,
        prevalence=2505 / 9940,
        continuous=continuous,
        binary={
            "sex": {"lc": 0.521, "non_lc": 0.440},
            "smoking": {"lc": 0.922, "non_lc": 0.692},
        },
        # White-cell lineage counts move together; the leucocyte/lymphocyte
        # pair is singled out as the strongest correlation.
        correlation_blocks=[
            {"features": ["leucocytes", "lymphocytes", "monocytes", "neutrophils"], "rho": 0.55},
            {"features": ["leucocytes", "lymphocytes"], "rho": 0.85},
        ],
        missingness={"amylase_pancreatic": 0.12, "calcium_total": 0.10, "inr": 0.08},
        stage_distribution={"I": 0.20, "II": 0.09, "III": 0.25, "IV": 0.46},
    )
    spec.validate()
    return spec


def _lognormal_params(median: float, q1: float, q3: float) -> tuple[float, float]:
    mu = math.log(median)
    sigma = (math.log(q3) - math.log(q1)) / (2.0 * _Z75)
    return mu, max(sigma, 1e-9)


def _normal_params(median: float, q1: float, q3: float) -> tuple[float, float]:
    return float(median), max((q3 - q1) / (2.0 * _Z75), 1e-9)


def generate_synthetic(spec: CohortSpec, seed: int) -> Cohort:
    """Deterministically draw a cohort matching the spec's per-class targets.

    Continuous marginals hit their medians exactly in distribution (sample
    medians converge at the usual sqrt-n rate); dependence enters through the
    Gaussian copula, missingness only through the maskable analytes.
    """
    spec.validate()
    if spec.n < 100:
        raise SpecError(f"n={spec.n} too small; calibration targets need n >= 100")

    rng = np.random.default_rng(seed)
    n_lc = round(spec.prevalence * spec.n)
    counts = {"lc": n_lc, "non_lc": spec.n - n_lc}
    if min(counts.values()) < 1:
        raise SpecError("prevalence leaves one class empty")

    corr = spec.correlation_matrix()
    eigval, eigvec = np.linalg.eigh(corr)
    factor = eigvec * np.sqrt(np.clip(eigval, 0.0, None))

    blocks = []
    labels = []
    for cls in ("lc", "non_lc"):
        m = counts[cls]
        z = rng.standard_normal((m, len(FEATURES))) @ factor.T
        x = np.empty_like(z)
        for j, feat in enumerate(FEATURES):
            if feat in BINARY_FEATURES:
                cutoff = stats.norm.ppf(spec.binary[feat][cls])
                x[:, j] = (z[:, j] < cutoff).astype(float)
            else:
                p = spec.continuous[feat][cls]
                if feat == "age":
                    mu, sg = _normal_params(p["median"], p["q1"], p["q3"])
                    x[:, j] = np.maximum(np.rint(mu + sg * z[:, j]), 18.0)
                else:
                    mu, sg = _lognormal_params(p["median"], p["q1"], p["q3"])
                    x[:, j] = np.exp(mu + sg * z[:, j])
        blocks.append(x)
        labels.append(np.full(m, LC if cls == "lc" else NON_LC, dtype=int))

    X = np.vstack(blocks)
    y = np.concatenate(labels)

    stage_names = sorted(spec.stage_distribution) if spec.stage_distribution else []
    stage_for_lc = None
    if stage_names:
        probs = np.array([spec.stage_distribution[s] for s in stage_names])
        stage_for_lc = rng.choice(stage_names, size=n_lc, p=probs / probs.sum())

    missing = np.zeros((spec.n, len(ANALYTES)), dtype=bool)
    for analyte, rate in spec.missingness.items():
        col = ANALYTES.index(analyte)
        missing[:, col] = rng.random(spec.n) < rate

    order = rng.permutation(spec.n)

    records = []
    for pos, i in enumerate(order):
        labs = {}
        for j, name in enumerate(ANALYTES):
            labs[name] = None if missing[i, j] else float(X[i, 3 + j])
        stage = None
        if y[i] == LC and stage_for_lc is not None:
            stage = str(stage_for_lc[i])  # LC rows come first in X
        records.append(
            PatientRecord(
                id=f"p{pos + 1:05d}",
                age=int(X[i, 0]),
                sex="F" if X[i, 1] == 1.0 else "M",
                smoking="ever" if X[i, 2] == 1.0 else "never",
                labs=labs,
                label=int(y[i]),
                stage=stage,
            )
        )
    return Cohort(records=tuple(records), provenance="synthetic", seed=seed)


def _fmt_lab(value: float) -> str:
    return repr(float(value))


def save_cohort(cohort: Cohort, path) -> None:
    """Write the canonical CSV form (UTF-8, LF, '.' decimals)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in cohort.records:
        row = [
            r.id,
            str(r.age),
            r.sex,
            r.smoking,
            str(r.label),
            r.stage or "",
        ]
        for name in ANALYTES:
            v = r.labs[name]
            row.append("" if v is None else _fmt_lab(v))
        writer.writerow(row)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def load_cohort(path) -> Cohort:
    """Read a schema-conformant cohort CSV."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CohortSchemaError("empty file: no header row") from None
        if header != CSV_HEADER:
            missing = [c for c in CSV_HEADER if c not in header]
            if missing:
                raise CohortSchemaError(f"header missing column(s) {missing}")
            extra = [c for c in header if c not in CSV_HEADER]
            if extra:
                raise CohortSchemaError(f"header has unexpected column(s) {extra}")
            raise CohortSchemaError(
                f"header column order wrong: expected {CSV_HEADER}, got {header}"
            )
        records = []
        for row_idx, row in enumerate(reader, start=1):
            if len(row) != len(CSV_HEADER):
                raise CohortParseError(
                    f"row {row_idx}: expected {len(CSV_HEADER)} cells, got {len(row)}",
                    row=row_idx,
                )
            cells = dict(zip(CSV_HEADER, row))
            try:
                age = int(cells["age"])
                label = int(cells["label"])
            except ValueError as exc:
                raise CohortParseError(f"row {row_idx}: {exc}", row=row_idx) from None
            labs = {}
            for name in ANALYTES:
                cell = cells[name]
                if cell == "":
                    labs[name] = None
                    continue
                try:
                    labs[name] = float(cell)
                except ValueError:
                    raise CohortParseError(
                        f"row {row_idx}: lab {name} cell {cell!r} is not numeric",
                        row=row_idx,
                    ) from None
            try:
                record = PatientRecord(
                    id=cells["id"],
                    age=age,
                    sex=cells["sex"],
                    smoking=cells["smoking"],
                    labs=labs,
                    label=label,
                    stage=cells["stage"] or None,
                )
            except ValueError as exc:
                raise CohortParseError(f"row {row_idx}: {exc}", row=row_idx) from None
            records.append(record)
    return Cohort(records=tuple(records), provenance="ingested")


def _rank_sum_test(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Two-sample Wilcoxon rank-sum with midranks and tie-corrected variance.

    Returns (z, two-sided p). Degenerate samples (zero rank variance) give
    p = 1: no evidence of a shift.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n1, n2 = len(a), len(b)
    pooled = np.concatenate([a, b])
    n = n1 + n2
    ranks = stats.rankdata(pooled)
    w = ranks[:n1].sum()
    mu = n1 * (n + 1) / 2.0
    _, tie_counts = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(tie_counts**3 - tie_counts))
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if var <= 0:
        return 0.0, 1.0
    z = (w - mu) / math.sqrt(var)
    p = min(1.0, 2.0 * stats.norm.sf(abs(z)))
    return float(z), float(p)


BONFERRONI_ALPHA = 0.0002


@dataclass(frozen=True)
class BaselineRow:
    feature: str
    kind: str  # "continuous" | "binary"
    lc_summary: dict
    non_lc_summary: dict
    statistic: float
    p_value: float
    significant: bool


@dataclass(frozen=True)
class BaselineTable:
    rows: tuple

    def row(self, feature: str) -> BaselineRow:
        for r in self.rows:
            if r.feature == feature:
                return r
        raise KeyError(feature)

    def to_dict(self) -> dict:
        return {
            "alpha": BONFERRONI_ALPHA,
            "rows": [
                {
                    "feature": r.feature,
                    "kind": r.kind,
                    "lc": r.lc_summary,
                    "non_lc": r.non_lc_summary,
                    "statistic": r.statistic,
                    "p_value": r.p_value,
                    "significant": r.significant,
                }
                for r in self.rows
            ],
        }


def _quartile_summary(values: np.ndarray) -> dict:
    return {
        "n": int(values.size),
        "median": float(np.median(values)),
        "q1": float(np.percentile(values, 25)),
        "q3": float(np.percentile(values, 75)),
    }


def summarize_baseline(cohort: Cohort) -> BaselineTable:
    """Per-feature class comparison: rank-sum for continuous features,
    chi-squared for the two indicators, Bonferroni flag at p < 0.0002.
    """
    y = cohort.labels()
    if (y == LC).sum() < 2 or (y == NON_LC).sum() < 2:
        raise ValueError("baseline table needs at least 2 records in each class")
    X = cohort.feature_matrix()
    lc_mask = y == LC

    rows = []
    for j, feat in enumerate(FEATURES):
        col = X[:, j]
        a = col[lc_mask]
        b = col[~lc_mask]
        if feat in BINARY_FEATURES:
            table = np.array(
                [
                    [(a == 1.0).sum(), (a == 0.0).sum()],
                    [(b == 1.0).sum(), (b == 0.0).sum()],
                ]
            )
            if table[:, 0].sum() == 0 or table[:, 1].sum() == 0:
                statistic, p = 0.0, 1.0  # constant indicator, no association
            else:
                statistic, p, _, _ = stats.chi2_contingency(table, correction=False)
            summary = lambda t: {"count": int(t[0]), "pct": float(t[0] / t.sum())}
            rows.append(
                BaselineRow(
                    feature=feat,
                    kind="binary",
                    lc_summary=summary(table[0]),
                    non_lc_summary=summary(table[1]),
                    statistic=float(statistic),
                    p_value=float(p),
                    significant=bool(p < BONFERRONI_ALPHA),
                )
            )
        else:
            a_obs = a[~np.isnan(a)]
            b_obs = b[~np.isnan(b)]
            z, p = _rank_sum_test(a_obs, b_obs)
            rows.append(
                BaselineRow(
                    feature=feat,
                    kind="continuous",
                    lc_summary=_quartile_summary(a_obs),
                    non_lc_summary=_quartile_summary(b_obs),
                    statistic=z,
                    p_value=p,
                    significant=bool(p < BONFERRONI_ALPHA),
                )
            )
    return BaselineTable(rows=tuple(rows))


def stratified_holdout(cohort: Cohort, holdout_n: int, seed: int) -> tuple[Cohort, Cohort]:
    """Reserve holdout_n records preserving the class mix.

    Test class counts are round(holdout_n * class fraction), adjusted so they
    sum to holdout_n; the partition is deterministic given the seed.
    """
    n = len(cohort)
    if holdout_n >= n:
        raise ValueError(f"holdout_n={holdout_n} must be smaller than the cohort ({n})")
    y = cohort.labels()
    pos_idx = np.flatnonzero(y == LC)
    neg_idx = np.flatnonzero(y == NON_LC)
    n_test_pos = round(holdout_n * len(pos_idx) / n)
    n_test_neg = holdout_n - n_test_pos
    if n_test_pos > len(pos_idx) or n_test_neg > len(neg_idx):
        raise ValueError(
            f"holdout_n={holdout_n} cannot be stratified: needs {n_test_pos} LC "
            f"of {len(pos_idx)} and {n_test_neg} non-LC of {len(neg_idx)}"
        )
    rng = np.random.default_rng(seed)
    test_sel = np.concatenate(
        [
            rng.permutation(pos_idx)[:n_test_pos],
            rng.permutation(neg_idx)[:n_test_neg],
        ]
    ).astype(int)
    test_mask = np.zeros(n, dtype=bool)
    test_mask[test_sel] = True
    train = cohort.subset(np.flatnonzero(~test_mask))
    test = cohort.subset(np.flatnonzero(test_mask))
    return train, test
