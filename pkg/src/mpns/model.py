"""Decomposition model: shared/private encoders, complement extractor, predictors.

Eleven MLPs make up a full model:

=================  =====================================================
``enc_inv``        shared invariant encoder, applied to both modalities
``enc_spec1/2``    modality-specific encoders
``comp_inv``       complement extractor, mirror of ``enc_inv``
``comp_spec1/2``   complement extractor, mirrors of ``enc_spec1/2``
``pred_main``      main predictor over ``[R_I^1, R_I^2, R_S^1, R_S^2]``
``aux_inv1/2``     auxiliary predictors for invariant representations
``aux_spec1/2``    auxiliary predictors for specific representations
=================  =====================================================

Encoders have linear outputs; predictors end in a sigmoid.
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .diffcore import ContractError, MlpSpec, ParamSet, init_params, mlp_forward

CHECKPOINT_VERSION = 1

FEATURE_NETS = ("enc_inv", "enc_spec1", "enc_spec2")
COMPLEMENT_NETS = ("comp_inv", "comp_spec1", "comp_spec2")
AUX_NETS = ("aux_inv1", "aux_inv2", "aux_spec1", "aux_spec2")
ALL_NETS = FEATURE_NETS + COMPLEMENT_NETS + ("pred_main",) + AUX_NETS
INFERENCE_NETS = FEATURE_NETS + ("pred_main",)


@dataclass(frozen=True)
class ArchConfig:
    input_dim: int = 20
    d_inv: int = 8
    d_spec: int = 8
    encoder_hidden: tuple[int, ...] = (64, 32)
    predictor_hidden: tuple[int, ...] = (64, 32)
    n_modalities: int = 2

    def __post_init__(self):
        object.__setattr__(self, "encoder_hidden", tuple(self.encoder_hidden))
        object.__setattr__(self, "predictor_hidden", tuple(self.predictor_hidden))
        if self.n_modalities != 2:
            raise ContractError("only two modalities are supported")
        if min(self.input_dim, self.d_inv, self.d_spec) < 1:
            raise ContractError("dimensions must be positive")

    def net_spec(self, name: str) -> MlpSpec:
        if name in ("enc_inv", "comp_inv"):
            return MlpSpec(self.input_dim, self.d_inv, self.encoder_hidden)
        if name.startswith(("enc_spec", "comp_spec")):
            return MlpSpec(self.input_dim, self.d_spec, self.encoder_hidden)
        if name == "pred_main":
            return MlpSpec(2 * (self.d_inv + self.d_spec), 1, self.predictor_hidden,
                           output_activation="sigmoid")
        if name.startswith("aux_inv"):
            return MlpSpec(self.d_inv, 1, self.predictor_hidden, output_activation="sigmoid")
        if name.startswith("aux_spec"):
            return MlpSpec(self.d_spec, 1, self.predictor_hidden, output_activation="sigmoid")
        raise KeyError(name)


@dataclass
class Representations:
    r_inv1: np.ndarray
    r_spec1: np.ndarray
    r_inv2: np.ndarray
    r_spec2: np.ndarray
    c_inv1: np.ndarray | None = None
    c_spec1: np.ndarray | None = None
    c_inv2: np.ndarray | None = None
    c_spec2: np.ndarray | None = None


class DecompModel:
    """Container for the named parameter sets of every sub-network."""

    def __init__(self, arch: ArchConfig, nets: dict[str, ParamSet]):
        self.arch = arch
        self.nets = nets
        if set(nets) not in (set(ALL_NETS), set(INFERENCE_NETS)):
            raise ContractError(f"unexpected network set {sorted(nets)}")
        for name, params in nets.items():
            if params.spec != arch.net_spec(name):
                raise ContractError(f"network {name!r} does not match the architecture")

    @property
    def inference_only(self) -> bool:
        return "comp_inv" not in self.nets

    def spec(self, name: str) -> MlpSpec:
        return self.nets[name].spec

    def forward(self, name: str, x) -> np.ndarray:
        return mlp_forward(self.nets[name].spec, self.nets[name], x)[0]

    def copy(self) -> "DecompModel":
        return DecompModel(self.arch, {k: v.copy() for k, v in self.nets.items()})

    def __eq__(self, other):
        if not isinstance(other, DecompModel):
            return NotImplemented
        return self.arch == other.arch and self.nets == other.nets


def init_model(arch: ArchConfig, seed: int) -> DecompModel:
    """Glorot init; feature extractor, complement extractor and predictors use
    separate substreams of ``seed``."""
    groups = (FEATURE_NETS, COMPLEMENT_NETS, ("pred_main",) + AUX_NETS)
    nets = {}
    for stream, names in enumerate(groups):
        rng = np.random.default_rng([int(seed), stream])
        for name in names:
            nets[name] = init_params(arch.net_spec(name), rng)
    return DecompModel(arch, nets)


def _check_m(m: int) -> None:
    if m not in (1, 2):
        raise ContractError(f"modality index must be 1 or 2, got {m!r}")


def extract(model: DecompModel, x, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Invariant and specific representations of modality ``m`` input ``x``."""
    _check_m(m)
    return model.forward("enc_inv", x), model.forward(f"enc_spec{m}", x)


def extract_complement(model: DecompModel, x, m: int) -> tuple[np.ndarray, np.ndarray]:
    _check_m(m)
    if model.inference_only:
        raise ContractError("inference model has no complement extractor")
    return model.forward("comp_inv", x), model.forward(f"comp_spec{m}", x)


def main_input(reps: Representations) -> np.ndarray:
    parts = [reps.r_inv1, reps.r_inv2, reps.r_spec1, reps.r_spec2]
    if any(p is None for p in parts):
        raise ContractError("main predictor needs all four feature representations")
    return np.concatenate([np.asarray(p, dtype=np.float64) for p in parts], axis=-1)


def predict_main(model: DecompModel, reps: Representations) -> np.ndarray:
    """Main-predictor probability from ``[R_I^1, R_I^2, R_S^1, R_S^2]``."""
    return model.forward("pred_main", main_input(reps))[..., 0]


def aux_name(kind: str, m: int) -> str:
    _check_m(m)
    kind = kind.upper()
    if kind not in ("I", "S"):
        raise ContractError(f"auxiliary predictor kind must be 'I' or 'S', got {kind!r}")
    return f"aux_{'inv' if kind == 'I' else 'spec'}{m}"


def predict_aux(model: DecompModel, which: tuple[str, int], rep) -> np.ndarray:
    if model.inference_only:
        raise ContractError("inference model has no auxiliary predictors")
    name = aux_name(*which)
    return model.forward(name, rep)[..., 0]


def represent(model: DecompModel, x1, x2, complements: bool = True) -> Representations:
    r_inv1, r_spec1 = extract(model, x1, 1)
    r_inv2, r_spec2 = extract(model, x2, 2)
    reps = Representations(r_inv1, r_spec1, r_inv2, r_spec2)
    if complements:
        reps.c_inv1, reps.c_spec1 = extract_complement(model, x1, 1)
        reps.c_inv2, reps.c_spec2 = extract_complement(model, x2, 2)
    return reps


def predict(model: DecompModel, x1, x2) -> np.ndarray:
    return predict_main(model, represent(model, x1, x2, complements=False))


def strip_for_inference(model: DecompModel) -> DecompModel:
    """Drop the complement extractor and auxiliary predictors."""
    return DecompModel(model.arch, {k: model.nets[k].copy() for k in INFERENCE_NETS})


def model_bytes(model: DecompModel) -> bytes:
    buf = io.BytesIO()
    manifest = {"version": CHECKPOINT_VERSION, "arch": asdict(model.arch),
                "nets": list(model.nets)}
    np.savez(buf, __manifest__=np.frombuffer(json.dumps(manifest).encode(), dtype=np.uint8),
             **{k: v.flat for k, v in model.nets.items()})
    return buf.getvalue()


def save_model(model: DecompModel, path) -> None:
    Path(path).write_bytes(model_bytes(model))


def load_model(path) -> DecompModel:
    with np.load(Path(path)) as npz:
        manifest = json.loads(npz["__manifest__"].tobytes().decode())
        if manifest.get("version") != CHECKPOINT_VERSION:
            raise ContractError(f"{path}: unsupported checkpoint version {manifest.get('version')}")
        arch = ArchConfig(**manifest["arch"])
        nets = {k: ParamSet(arch.net_spec(k), npz[k].copy()) for k in manifest["nets"]}
    return DecompModel(arch, nets)
