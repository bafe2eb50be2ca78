"""Grid runner for the synthetic study: (mode x s x seed) cells -> dCor table.

Every cell writes its own JSON file under ``<out>/cells/`` as soon as it is
done, so an interrupted run can be resumed by skipping finished cells. The
merged table is always emitted in grid order (s, seed, mode, modality,
variable) regardless of completion order.

All modes of one ``(s, seed)`` pair train on the same dataset from the same
initial parameters; only the objective differs.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .metrics import TARGET_KINDS, dcor_report, write_report_csv
from .model import ArchConfig
from .objectives import MODES, LossConfig
from .synthgen import VARIABLES, SynthConfig, generate_split
from .trainer import TrainConfig, run_mode

log = logging.getLogger(__name__)

RESULT_COLUMNS = ("mode", "s", "seed", "modality", "variable", "dcor", "accuracy")
MODE_LABELS = {"net": "Net", "mpns_minus_c": "Net+MPNS(-c)", "mpns": "Net+MPNS"}


@dataclass
class ExperimentConfig:
    s_values: list[float] = field(default_factory=lambda: [0.0, 0.1, 0.3, 0.5, 0.7])
    modes: list[str] = field(default_factory=lambda: list(MODES))
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3])
    n_train: int = 15000
    n_test: int = 5000
    arch: ArchConfig = field(default_factory=ArchConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    target_kind: str = "modality_slice"
    kappa_form: str = "sum"
    shuffle_labels: bool = False

    def __post_init__(self):
        if not (self.s_values and self.modes and self.seeds):
            raise ValueError("s_values, modes and seeds must all be non-empty")
        bad = [m for m in self.modes if m not in MODES]
        if bad:
            raise ValueError(f"unknown modes {bad}")
        if self.target_kind not in TARGET_KINDS:
            raise ValueError(f"target_kind must be one of {TARGET_KINDS}")
        if self.n_train < 1 or self.n_test < 4:
            raise ValueError("n_train must be >= 1 and n_test >= 4")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown experiment config keys: {sorted(unknown)}")
        if "arch" in d:
            d["arch"] = ArchConfig(**d["arch"])
        if "loss" in d:
            d["loss"] = LossConfig(**d["loss"])
        if "train" in d:
            t = dict(d["train"])
            if t.get("loss") is not None:
                t["loss"] = LossConfig(**t["loss"])
            d["train"] = TrainConfig(**t)
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)

    def cells(self) -> list[tuple[str, float, int]]:
        return [(mode, s, seed) for s in self.s_values for seed in self.seeds
                for mode in self.modes]

    def fingerprint(self) -> str:
        # independent of the grid lists so that extending a grid reuses cells
        d = self.to_dict()
        for k in ("s_values", "modes", "seeds"):
            d.pop(k)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class ResultRow:
    mode: str
    s: float
    seed: int
    modality: int
    variable: str
    dcor: float
    accuracy: float


@dataclass
class ResultTable:
    rows: list[ResultRow] = field(default_factory=list)
    failures: dict[str, str] = field(default_factory=dict)

    def __len__(self):
        return len(self.rows)

    def __eq__(self, other):
        if not isinstance(other, ResultTable):
            return NotImplemented
        return self.rows == other.rows

    def select(self, **kw) -> list[ResultRow]:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in kw.items())]


def cell_name(mode: str, s: float, seed: int) -> str:
    return f"{mode}__s{s:g}__seed{seed}"


def _label_permutation(seed: int, n: int) -> np.ndarray:
    return np.random.default_rng([int(seed), 0xC0117]).permutation(n)


def _cell_data(cfg: ExperimentConfig, s: float, seed: int):
    synth = SynthConfig(s=s, seed=seed, kappa_form=cfg.kappa_form)
    train, test = generate_split(synth, cfg.n_train, cfg.n_test)
    if cfg.shuffle_labels:
        train = train.with_labels(train.y[_label_permutation(seed, len(train))])
    return train, test


def run_cell(cfg: ExperimentConfig, mode: str, s: float, seed: int, data=None) -> dict:
    """Train and evaluate one grid cell; returns the JSON-ready cell record."""
    train, test = data if data is not None else _cell_data(cfg, s, seed)
    tcfg = TrainConfig(**{**asdict(cfg.train), "seed": seed, "mode": mode, "loss": cfg.loss})
    model, history, acc = run_mode(mode, cfg.arch, train, test, tcfg, model_seed=seed)
    report = dcor_report(model, test, kind=cfg.target_kind)
    return {
        "cell": cell_name(mode, s, seed), "mode": mode, "s": s, "seed": seed,
        "fingerprint": cfg.fingerprint(), "status": "ok", "accuracy": acc,
        "dcor": report.rows(mode, s, seed),
        "history": history.deterministic_view(),
    }


def _run_group(cfg: ExperimentConfig, s: float, seed: int, modes: list[str], cell_dir: str):
    """All pending modes of one (s, seed) pair; one dataset shared by them."""
    done = []
    data = _cell_data(cfg, s, seed)
    for mode in modes:
        name = cell_name(mode, s, seed)
        t0 = time.perf_counter()
        try:
            record = run_cell(cfg, mode, s, seed, data)
        except Exception as exc:  # noqa: BLE001 - one bad cell must not stop the grid
            log.warning("cell %s failed: %s", name, exc)
            record = {"cell": name, "mode": mode, "s": s, "seed": seed,
                      "fingerprint": cfg.fingerprint(), "status": "failed", "error": str(exc)}
        # wall time is kept in the cell file only, never in the merged table
        record["elapsed_seconds"] = time.perf_counter() - t0
        _write_cell(Path(cell_dir), record)
        done.append(name)
    return done


def _write_cell(cell_dir: Path, record: dict) -> None:
    cell_dir.mkdir(parents=True, exist_ok=True)
    path = cell_dir / f"{record['cell']}.json"
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(record))
    os.replace(tmp, path)


def _read_cell(cell_dir: Path, name: str) -> dict | None:
    path = cell_dir / f"{name}.json"
    if not path.exists():
        return None
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError:
        return None


def run_experiment(cfg: ExperimentConfig, out_dir, jobs: int = 1, resume: bool = False,
                   max_cells: int | None = None) -> ResultTable:
    """Run every grid cell and merge the results.

    ``resume`` skips cells whose file already holds a successful result for
    the same configuration. ``max_cells`` stops after that many newly computed
    cells (used to simulate interruptions).
    """
    out_dir = Path(out_dir)
    cell_dir = out_dir / "cells"
    cell_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1))
    fp = cfg.fingerprint()

    pending: dict[tuple[float, int], list[str]] = {}
    budget = math.inf if max_cells is None else max_cells
    for mode, s, seed in cfg.cells():
        if resume:
            rec = _read_cell(cell_dir, cell_name(mode, s, seed))
            if rec and rec.get("status") == "ok" and rec.get("fingerprint") == fp:
                continue
        if budget <= 0:
            continue
        budget -= 1
        pending.setdefault((s, seed), []).append(mode)

    if jobs <= 1 or len(pending) <= 1:
        for (s, seed), modes in pending.items():
            _run_group(cfg, s, seed, modes, str(cell_dir))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_group, cfg, s, seed, modes, str(cell_dir))
                       for (s, seed), modes in pending.items()]
            for fut in as_completed(futures):
                fut.result()

    table = collect_table(cfg, cell_dir)
    emit_results(table, out_dir / "results.csv", "csv")
    dcor_rows = []
    for mode, s, seed in cfg.cells():
        rec = _read_cell(cell_dir, cell_name(mode, s, seed))
        if rec and rec.get("status") == "ok":
            dcor_rows += rec["dcor"]
    write_report_csv(dcor_rows, out_dir / "dcor_report.csv")
    return table


def compute_seconds(cfg: ExperimentConfig, out_dir) -> float:
    """Summed wall time of the grid's cells as recorded when each was computed."""
    cell_dir = Path(out_dir) / "cells"
    total = 0.0
    for mode, s, seed in cfg.cells():
        rec = _read_cell(cell_dir, cell_name(mode, s, seed))
        if rec:
            total += rec.get("elapsed_seconds", 0.0)
    return total


def collect_table(cfg: ExperimentConfig, cell_dir) -> ResultTable:
    cell_dir = Path(cell_dir)
    table = ResultTable()
    fp = cfg.fingerprint()
    for mode, s, seed in cfg.cells():
        name = cell_name(mode, s, seed)
        rec = _read_cell(cell_dir, name)
        if rec is None or rec.get("fingerprint") != fp:
            table.failures[name] = "missing"
            continue
        if rec["status"] != "ok":
            table.failures[name] = rec.get("error", "failed")
            continue
        for r in rec["dcor"]:
            table.rows.append(ResultRow(mode, float(s), int(seed), int(r["modality"]),
                                        r["variable"], float(r["dcor"]), float(rec["accuracy"])))
    return table


def emit_results(table: ResultTable, path, fmt: str = "csv") -> None:
    path = Path(path)
    try:
        if fmt == "csv":
            with path.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(RESULT_COLUMNS)
                for r in table.rows:
                    w.writerow([r.mode, repr(r.s), r.seed, r.modality, r.variable,
                                repr(r.dcor), repr(r.accuracy)])
        elif fmt == "json":
            path.write_text(json.dumps([asdict(r) for r in table.rows], indent=1))
        else:
            raise ValueError(f"unknown format {fmt!r}")
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc


def load_results(path) -> ResultTable:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read results from {path}: {exc}") from exc
    if path.suffix == ".json":
        return ResultTable([ResultRow(**r) for r in json.loads(text)])
    reader = csv.DictReader(text.splitlines())
    if tuple(reader.fieldnames or ()) != RESULT_COLUMNS:
        raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
    return ResultTable([
        ResultRow(r["mode"], float(r["s"]), int(r["seed"]), int(r["modality"]), r["variable"],
                  float(r["dcor"]), float(r["accuracy"]))
        for r in reader
    ])


@dataclass
class CellTrend:
    s: float
    modality: int
    sn: dict[str, float]
    per_seed: dict[str, list[float]]
    delta_vs_net: float | None
    delta_vs_minus_c: float | None

    @property
    def beats_net(self) -> bool:
        return self.delta_vs_net is not None and self.delta_vs_net > 0

    @property
    def beats_minus_c(self) -> bool:
        return self.delta_vs_minus_c is not None and self.delta_vs_minus_c > 0


@dataclass
class TrendSummary:
    cells: list[CellTrend]
    complete: bool
    need_vs_net: int = 8
    need_vs_minus_c: int = 7

    @property
    def wins_vs_net(self) -> int:
        return sum(c.beats_net for c in self.cells)

    @property
    def wins_vs_minus_c(self) -> int:
        return sum(c.beats_minus_c for c in self.cells)

    @property
    def passed(self) -> bool:
        return (self.complete and self.wins_vs_net >= self.need_vs_net
                and self.wins_vs_minus_c >= self.need_vs_minus_c)

    def lines(self) -> list[str]:
        out = []
        for c in self.cells:
            dn = "n/a" if c.delta_vs_net is None else f"{c.delta_vs_net:+.3f}"
            dc = "n/a" if c.delta_vs_minus_c is None else f"{c.delta_vs_minus_c:+.3f}"
            sn = " ".join(f"{MODE_LABELS[m]}={v:.3f}+/-{np.std(c.per_seed[m]):.3f}"
                          for m, v in c.sn.items())
            out.append(f"s={c.s:g} m{c.modality}: {sn} | MPNS-Net {dn} "
                       f"[{'pass' if c.beats_net else 'FAIL'}] | MPNS-MPNS(-c) {dc} "
                       f"[{'pass' if c.beats_minus_c else 'FAIL'}]")
        out.append(f"MPNS > Net in {self.wins_vs_net}/{len(self.cells)} cells "
                   f"(need {self.need_vs_net}); MPNS > MPNS(-c) in {self.wins_vs_minus_c}/"
                   f"{len(self.cells)} (need {self.need_vs_minus_c})"
                   + ("" if self.complete else "; INCOMPLETE grid"))
        return out


def compare_modes(table: ResultTable, variable: str = "SN", need_vs_net: int = 8,
                  need_vs_minus_c: int = 7) -> TrendSummary:
    """Seed-averaged dCor(``variable``) per mode for every (s, modality)."""
    s_values = sorted({r.s for r in table.rows})
    seeds = sorted({r.seed for r in table.rows})
    complete = bool(table.rows) and not table.failures
    cells = []
    for s in s_values:
        for m in (1, 2):
            per_seed = {}
            for mode in MODES:
                vals = {r.seed: r.dcor for r in table.select(s=s, modality=m, mode=mode,
                                                             variable=variable)}
                if vals:
                    per_seed[mode] = [vals[k] for k in sorted(vals)]
                    if len(vals) != len(seeds):
                        complete = False
                else:
                    complete = False
            sn = {mode: float(np.mean(v)) for mode, v in per_seed.items()}
            d_net = sn["mpns"] - sn["net"] if {"mpns", "net"} <= sn.keys() else None
            d_c = (sn["mpns"] - sn["mpns_minus_c"]
                   if {"mpns", "mpns_minus_c"} <= sn.keys() else None)
            cells.append(CellTrend(s, m, sn, per_seed, d_net, d_c))
    return TrendSummary(cells, complete, need_vs_net, need_vs_minus_c)


def format_tables(table: ResultTable, markdown: bool = False) -> str:
    """Seed-averaged dCor matrices, one per modality, rows (s, mode)."""
    s_values = sorted({r.s for r in table.rows})
    present = [m for m in MODES if table.select(mode=m)]
    names = [v.upper() for v in VARIABLES]
    chunks = []
    for m in (1, 2):
        lines = [f"Distance correlation by s, modality {m}"]
        if markdown:
            lines += ["", "| s | Mode | " + " | ".join(names) + " | Acc |",
                      "|---|---|" + "---|" * (len(names) + 1)]
        else:
            lines.append(f"{'s':>5}  {'Mode':<14}" + "".join(f"{v:>8}" for v in names)
                         + f"{'Acc':>8}")
        for s in s_values:
            for mode in present:
                rows = table.select(s=s, modality=m, mode=mode)
                if not rows:
                    continue
                vals = [np.mean([r.dcor for r in rows if r.variable == v]) for v in names]
                acc = np.mean([r.accuracy for r in rows])
                if markdown:
                    lines.append(f"| {s:g} | {MODE_LABELS[mode]} | "
                                 + " | ".join(f"{v:.3f}" for v in vals) + f" | {acc:.3f} |")
                else:
                    lines.append(f"{s:>5g}  {MODE_LABELS[mode]:<14}"
                                 + "".join(f"{v:>8.3f}" for v in vals) + f"{acc:>8.3f}")
        chunks.append("\n".join(lines))
    return "\n\n".join(chunks) + "\n"
