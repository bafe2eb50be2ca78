"""Distance correlation and the observational PNS estimate."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .model import DecompModel, extract
from .synthgen import VARIABLES, Dataset, ModalityLayout

TARGET_KINDS = ("modality_slice", "latent_scalar")
REPORT_COLUMNS = ("mode", "s", "seed", "modality", "variable", "dcor", "target_kind", "n")


def _as_2d(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError(f"expected a vector or matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("inputs must be finite")
    return a


def _row_means(x: np.ndarray, block: int) -> np.ndarray:
    n = len(x)
    out = np.empty(n)
    for lo in range(0, n, block):
        out[lo:lo + block] = cdist(x[lo:lo + block], x).mean(axis=1)
    return out


def distance_correlations(a, targets: Sequence, block: int = 1000) -> list[float]:
    """Distance correlation of ``a`` with each matrix in ``targets``.

    V-statistic form. Distance matrices are never held in full: with row
    means ``r_i`` and grand mean ``g`` of a distance matrix, the mean of the
    product of two double-centred matrices equals
    ``mean(a_ij b_ij) - 2 mean_i(r^a_i r^b_i) + g^a g^b``, which is summed
    over row blocks.
    """
    a = _as_2d(a)
    bs = [_as_2d(b) for b in targets]
    n = len(a)
    if n < 4:
        raise ValueError(f"distance correlation needs at least 4 samples, got {n}")
    for b in bs:
        if len(b) != n:
            raise ValueError(f"sample count mismatch: {n} vs {len(b)}")

    ra = _row_means(a, block)
    rbs = [_row_means(b, block) for b in bs]
    ga = ra.mean()
    gbs = [rb.mean() for rb in rbs]
    saa = 0.0
    sab = np.zeros(len(bs))
    sbb = np.zeros(len(bs))
    for lo in range(0, n, block):
        da = cdist(a[lo:lo + block], a)
        saa += np.einsum("ij,ij->", da, da)
        for k, b in enumerate(bs):
            db = cdist(b[lo:lo + block], b)
            sab[k] += np.einsum("ij,ij->", da, db)
            sbb[k] += np.einsum("ij,ij->", db, db)

    n2 = float(n) * n
    var_a = saa / n2 - 2.0 * (ra @ ra) / n + ga * ga
    out = []
    for k in range(len(bs)):
        var_b = sbb[k] / n2 - 2.0 * (rbs[k] @ rbs[k]) / n + gbs[k] * gbs[k]
        cov = sab[k] / n2 - 2.0 * (ra @ rbs[k]) / n + ga * gbs[k]
        # a constant sample has an all-zero distance matrix
        if var_a <= 0.0 or var_b <= 0.0:
            out.append(0.0)
            continue
        r2 = max(cov, 0.0) / np.sqrt(var_a * var_b)
        out.append(float(min(np.sqrt(r2), 1.0)))
    return out


def distance_correlation(a, b, block: int = 1000) -> float:
    """Sample distance correlation between the rows of ``a`` and ``b``, in [0, 1]."""
    return distance_correlations(a, [b], block)[0]


@dataclass(frozen=True)
class DcorTarget:
    kind: str
    variable: str
    modality: int

    def __post_init__(self):
        if self.kind not in TARGET_KINDS:
            raise ValueError(f"target kind must be one of {TARGET_KINDS}, got {self.kind!r}")
        if self.variable.lower() not in VARIABLES:
            raise ValueError(f"unknown variable {self.variable!r}")
        if self.modality not in (1, 2):
            raise ValueError(f"modality must be 1 or 2, got {self.modality}")

    def values(self, data: Dataset, layout: ModalityLayout) -> np.ndarray:
        if self.kind == "latent_scalar":
            return data.latent(self.variable).astype(np.float64)
        x = data.x1 if self.modality == 1 else data.x2
        return x[:, layout.modality_slice(self.variable)]


@dataclass
class DcorReport:
    kind: str
    n: int
    values: dict[tuple[int, str], float] = field(default_factory=dict)

    def rows(self, mode: str = "", s: float | None = None, seed: int | None = None) -> list[dict]:
        return [
            {"mode": mode, "s": s, "seed": seed, "modality": m, "variable": v.upper(),
             "dcor": d, "target_kind": self.kind, "n": self.n}
            for (m, v), d in sorted(self.values.items(), key=lambda kv: (kv[0][0],
                                    VARIABLES.index(kv[0][1])))
        ]


def representation_matrix(model: DecompModel, data: Dataset, m: int) -> np.ndarray:
    r_inv, r_spec = extract(model, data.x1 if m == 1 else data.x2, m)
    return np.concatenate([r_inv, r_spec], axis=1)


def dcor_report(model: DecompModel, data: Dataset, layout: ModalityLayout | None = None,
                kind: str = "modality_slice") -> DcorReport:
    """dCor between ``[R_I^m, R_S^m]`` and each variable, for both modalities."""
    layout = layout or ModalityLayout()
    if kind not in TARGET_KINDS:
        raise ValueError(f"target kind must be one of {TARGET_KINDS}, got {kind!r}")
    for v in VARIABLES:
        if getattr(data, v, None) is None:
            raise ValueError(f"evaluation set lacks latent {v!r}")
    report = DcorReport(kind, len(data))
    for m in (1, 2):
        reps = representation_matrix(model, data, m)
        targets = [DcorTarget(kind, v, m).values(data, layout) for v in VARIABLES]
        for v, d in zip(VARIABLES, distance_correlations(reps, targets)):
            report.values[(m, v)] = d
    return report


def write_report_csv(rows: list[dict], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        w.writeheader()
        w.writerows(rows)


def estimate_pns_observational(z, y, z_val=1, z_bar_val=0, y_val=1) -> float:
    """``P(Y=y_val | Z=z_val) - P(Y=y_val | Z=z_bar_val)`` from empirical frequencies.

    Equals the probability of necessity and sufficiency when ``Z`` is
    exogenous to ``Y`` and ``Y`` is monotonic in ``Z``.
    """
    z = np.asarray(z)
    y = np.asarray(y)
    if z.shape != y.shape:
        raise ValueError(f"z and y differ in shape: {z.shape} vs {y.shape}")
    hit = y == y_val
    probs = []
    for val in (z_val, z_bar_val):
        cell = z == val
        count = int(cell.sum())
        if count == 0:
            raise ValueError(f"no samples with Z={val!r} (n={len(z)}); conditional undefined")
        probs.append(hit[cell].mean())
    return float(probs[0] - probs[1])
