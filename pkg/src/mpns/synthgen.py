"""Synthetic two-modality dataset with known causal variable types.

Each sample draws four latent variables:

* ``sn`` - sufficient and necessary cause, Bernoulli(0.5); the label is
  ``y = sn XOR Bernoulli(label_flip_p)``.
* ``sf`` - sufficient but unnecessary: equals ``sn`` when ``sn = 1``, else
  Bernoulli(``sf_leak_p``).
* ``nc`` - necessary but insufficient: ``1[sn = 1] * Bernoulli(nc_keep_p)``.
* ``sc`` - spuriously correlated: ``s * sn + (1 - s) * N(0, 1)``.

They are broadcast into a block vector ``h`` of width ``4 * d`` plus gaussian
noise. The first three elements of every block are shared by both modalities,
the next two belong to modality 1 and the last two to modality 2. Each
modality vector then goes through the double-hinge :func:`kappa`.

Every sample has its own random stream seeded by ``(seed, sample_index)``, so
a dataset is a pure function of the config and index ranges can be generated
independently (train/eval splits use disjoint ranges).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

VARIABLES = ("sn", "sf", "nc", "sc")
N_INVARIANT = 3
N_SPECIFIC = 2
SLICE_WIDTH = N_INVARIANT + N_SPECIFIC
MODALITY_DIM = SLICE_WIDTH * len(VARIABLES)


@dataclass(frozen=True)
class SynthConfig:
    s: float = 0.0
    n_samples: int = 15000
    seed: int = 0
    d: int = 7
    label_flip_p: float = 0.15
    sf_leak_p: float = 0.1
    nc_keep_p: float = 0.9
    noise_std: float = 0.3
    kappa_m1: tuple[float, float] = (0.8, 2.2)
    kappa_m2: tuple[float, float] = (1.0, 2.0)
    kappa_form: str = "sum"
    start_index: int = 0

    def __post_init__(self):
        if not 0.0 <= self.s < 1.0:
            raise ValueError(f"s must lie in [0, 1), got {self.s}")
        if self.d < N_INVARIANT + 2 * N_SPECIFIC:
            raise ValueError(f"d must be >= {N_INVARIANT + 2 * N_SPECIFIC}, got {self.d}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")
        for name in ("label_flip_p", "sf_leak_p", "nc_keep_p"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be a probability, got {p}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if self.kappa_form not in KAPPA_FORMS:
            raise ValueError(f"kappa_form must be one of {KAPPA_FORMS}, got {self.kappa_form!r}")
        if self.start_index < 0:
            raise ValueError("start_index must be non-negative")
        for alpha, beta in (self.kappa_m1, self.kappa_m2):
            if alpha <= 0 or beta <= 0:
                raise ValueError("kappa alpha and beta must be positive")
        object.__setattr__(self, "kappa_m1", tuple(self.kappa_m1))
        object.__setattr__(self, "kappa_m2", tuple(self.kappa_m2))


@dataclass(frozen=True)
class LatentVars:
    sn: int
    sf: int
    nc: int
    sc: float
    y: int


@dataclass(frozen=True)
class ModalityLayout:
    """Where each variable lives in ``h`` and in the per-modality vectors."""

    d: int = 7

    def block(self, v: int) -> slice:
        return slice(self.d * v, self.d * v + self.d)

    def invariant_indices(self, v: int) -> list[int]:
        start = self.d * v
        return list(range(start, start + N_INVARIANT))

    def specific_indices(self, v: int, m: int) -> list[int]:
        _check_modality(m)
        start = self.d * v + N_INVARIANT + N_SPECIFIC * (m - 1)
        return list(range(start, start + N_SPECIFIC))

    def h_indices(self, m: int) -> np.ndarray:
        """Indices of ``h`` gathered into modality ``m``, in output order."""
        idx = []
        for v in range(len(VARIABLES)):
            idx += self.invariant_indices(v) + self.specific_indices(v, m)
        return np.array(idx)

    def modality_slice(self, variable: str) -> slice:
        """Columns of ``x^m`` (or ``h^m``) that carry ``variable``."""
        v = VARIABLES.index(variable.lower())
        return slice(SLICE_WIDTH * v, SLICE_WIDTH * v + SLICE_WIDTH)


@dataclass(frozen=True)
class MultimodalSample:
    x1: np.ndarray
    x2: np.ndarray
    y: int
    latents: LatentVars


@dataclass
class Dataset:
    """Column-oriented storage; indexing yields :class:`MultimodalSample`."""

    x1: np.ndarray
    x2: np.ndarray
    y: np.ndarray
    sn: np.ndarray
    sf: np.ndarray
    nc: np.ndarray
    sc: np.ndarray
    config: SynthConfig | None = field(default=None, compare=False)

    def __len__(self) -> int:
        return len(self.y)

    def __getitem__(self, i: int) -> MultimodalSample:
        lat = LatentVars(int(self.sn[i]), int(self.sf[i]), int(self.nc[i]), float(self.sc[i]),
                         int(self.y[i]))
        return MultimodalSample(self.x1[i], self.x2[i], int(self.y[i]), lat)

    def __iter__(self) -> Iterator[MultimodalSample]:
        return (self[i] for i in range(len(self)))

    def latent(self, variable: str) -> np.ndarray:
        return getattr(self, variable.lower())

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x1[idx], self.x2[idx], self.y[idx], self.sn[idx], self.sf[idx],
                       self.nc[idx], self.sc[idx], self.config)

    def with_labels(self, y: np.ndarray) -> "Dataset":
        return Dataset(self.x1, self.x2, np.asarray(y), self.sn, self.sf, self.nc, self.sc,
                       self.config)

    def fingerprint(self) -> bytes:
        return b"".join(np.ascontiguousarray(a).tobytes() for a in
                        (self.x1, self.x2, self.y, self.sn, self.sf, self.nc, self.sc))


def _check_modality(m: int) -> None:
    if m not in (1, 2):
        raise ValueError(f"modality index must be 1 or 2, got {m!r}")


def sample_variables(s: float, rng: np.random.Generator, label_flip_p: float = 0.15,
                     sf_leak_p: float = 0.1, nc_keep_p: float = 0.9) -> LatentVars:
    if not 0.0 <= s < 1.0:
        raise ValueError(f"s must lie in [0, 1), got {s}")
    # fixed draw order and count per sample: 4 uniforms then 1 normal
    u = rng.random(4)
    z = rng.standard_normal()
    sn = int(u[0] < 0.5)
    sf = 1 if sn == 1 else int(u[1] < sf_leak_p)
    nc = sn * int(u[2] < nc_keep_p)
    flip = int(u[3] < label_flip_p)
    sc = s * sn + (1.0 - s) * z
    return LatentVars(sn, sf, nc, float(sc), sn ^ flip)


def build_feature_vector(latents: LatentVars, cfg: SynthConfig,
                         rng: np.random.Generator) -> np.ndarray:
    values = np.array([latents.sn, latents.sf, latents.nc, latents.sc], dtype=np.float64)
    h = np.repeat(values, cfg.d)
    return h + cfg.noise_std * rng.standard_normal(h.size)


def split_modalities(h, layout: ModalityLayout | None = None) -> tuple[np.ndarray, np.ndarray]:
    layout = layout or ModalityLayout()
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != len(VARIABLES) * layout.d:
        raise ValueError(f"h must have length {len(VARIABLES) * layout.d}, got {h.shape[-1]}")
    return h[..., layout.h_indices(1)], h[..., layout.h_indices(2)]


KAPPA_FORMS = ("sum", "literal_product")


def kappa(t, alpha: float, beta: float, form: str = "sum") -> np.ndarray:
    """Double-hinge nonlinearity with a dead zone of half-width ``alpha``.

    ``form="sum"`` gives ``beta * (max(t - alpha, 0) + min(t + alpha, 0))``.
    ``form="literal_product"`` multiplies the two hinges instead, which is
    identically zero for ``alpha > 0``; it exists only for audits.
    """
    if alpha <= 0 or beta <= 0:
        raise ValueError(f"alpha and beta must be positive, got {alpha}, {beta}")
    t = np.asarray(t, dtype=np.float64)
    upper = np.maximum(t - alpha, 0.0)
    lower = np.minimum(t + alpha, 0.0)
    if form == "sum":
        return beta * (upper + lower)
    if form == "literal_product":
        return beta * upper * lower
    raise ValueError(f"unknown kappa form {form!r}")


def sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(index)])


def generate_dataset(cfg: SynthConfig) -> Dataset:
    layout = ModalityLayout(cfg.d)
    n = cfg.n_samples
    lat = []
    hs = np.empty((n, len(VARIABLES) * cfg.d))
    for i in range(n):
        rng = sample_rng(cfg.seed, cfg.start_index + i)
        v = sample_variables(cfg.s, rng, cfg.label_flip_p, cfg.sf_leak_p, cfg.nc_keep_p)
        hs[i] = build_feature_vector(v, cfg, rng)
        lat.append((v.sn, v.sf, v.nc, v.sc, v.y))
    h1, h2 = split_modalities(hs, layout)
    sn, sf, nc, sc, y = (np.array(col) for col in zip(*lat))
    return Dataset(
        x1=kappa(h1, *cfg.kappa_m1, form=cfg.kappa_form),
        x2=kappa(h2, *cfg.kappa_m2, form=cfg.kappa_form),
        y=y.astype(np.int64), sn=sn.astype(np.int64), sf=sf.astype(np.int64),
        nc=nc.astype(np.int64), sc=sc.astype(np.float64), config=cfg,
    )


def generate_split(cfg: SynthConfig, n_train: int, n_test: int) -> tuple[Dataset, Dataset]:
    """Train and eval sets from disjoint sample-index ranges of one seed."""
    base = asdict(cfg)
    train = generate_dataset(SynthConfig(**{**base, "n_samples": n_train, "start_index": 0}))
    test = generate_dataset(SynthConfig(**{**base, "n_samples": n_test, "start_index": n_train}))
    return train, test


def save_jsonl(data: Dataset, path) -> None:
    path = Path(path)
    with path.open("w") as fh:
        for i in range(len(data)):
            fh.write(json.dumps({
                "x1": data.x1[i].tolist(), "x2": data.x2[i].tolist(), "y": int(data.y[i]),
                "sn": int(data.sn[i]), "sf": int(data.sf[i]), "nc": int(data.nc[i]),
                "sc": float(data.sc[i]),
            }) + "\n")


def load_jsonl(path) -> Dataset:
    rows = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
    if not rows:
        raise ValueError(f"{path}: no samples")
    col = lambda k, dt: np.array([r[k] for r in rows], dtype=dt)  # noqa: E731
    return Dataset(col("x1", np.float64), col("x2", np.float64), col("y", np.int64),
                   col("sn", np.int64), col("sf", np.int64), col("nc", np.int64),
                   col("sc", np.float64))
