"""Desk-scale encoders and the gated cross-modal fusion block.

Each modality gets its own small multi-layer perceptron; the two
parameter sets are fully independent. Fusion concatenates the two
embeddings, projects to a joint code, predicts a per-channel excitation
vector from it, and gates both embeddings with the rectified excitation.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError, ConfigError, ContractError, DimensionError
from .ioutil import atomic_write_bytes, atomic_write_text
from .tensor import Tensor, concat, tensor_from_buffer, tensor_to_bytes


@dataclass
class EncoderParams:
    """Per-modality perceptron: list of (weight[out x in], bias[out])."""

    layers: list[tuple[Tensor, Tensor]]
    embed_dim: int

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in self.layers:
            out.extend((w, b))
        return out


@dataclass
class AmfmParams:
    """Fusion parameters: joint projection (w_s, b_s) and excitation (w_e, b_e)."""

    w_s: Tensor
    b_s: Tensor
    w_e: Tensor
    b_e: Tensor

    def __post_init__(self):
        c_u, two_c = self.w_s.shape
        c = self.w_e.shape[0]
        if two_c != 2 * c or c_u != c:
            raise ConfigError(
                f"fusion dims must satisfy c_u == c == (2c)/2, got w_s {self.w_s.shape} "
                f"and w_e {self.w_e.shape}")

    def parameters(self) -> list[Tensor]:
        return [self.w_s, self.b_s, self.w_e, self.b_e]


def _init_layer(rng: np.random.Generator, out_dim: int, in_dim: int) -> tuple[Tensor, Tensor]:
    bound = 1.0 / np.sqrt(in_dim)
    w = Tensor(rng.uniform(-bound, bound, size=(out_dim, in_dim)), requires_grad=True)
    b = Tensor(rng.uniform(-bound, bound, size=(out_dim,)), requires_grad=True)
    return w, b


def init_encoder(rng: np.random.Generator, in_dim: int, hidden_dim: int,
                 embed_dim: int, n_layers: int = 3) -> EncoderParams:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init, fresh arrays per call."""
    if n_layers < 1:
        raise ConfigError(f"encoder needs at least 1 layer, got {n_layers}")
    dims = [in_dim] + [hidden_dim] * (n_layers - 1) + [embed_dim]
    layers = [_init_layer(rng, dims[i + 1], dims[i]) for i in range(n_layers)]
    return EncoderParams(layers=layers, embed_dim=embed_dim)


GATE_OPEN_BIAS = 2.0
GATE_WEIGHT_SCALE = 0.05
GATE_JOINT_SCALE = 0.1


def init_amfm(rng: np.random.Generator, embed_dim: int) -> AmfmParams:
    """Identity-start fusion init: joint projection scaled small, zero
    projection bias, excitation weights scaled small, excitation bias at
    +2 so the gates begin open and the block acts as a pass-through.

    Starting the gate branch near identity is the same idiom as zero-init
    residual branches: the alignment and contrastive objectives can
    otherwise exploit the per-sample gate as a batch reweighting knob
    early on and drive whole feature columns to zero norm, which the
    losses reject as degenerate.
    """
    c = embed_dim
    w_s, b_s = _init_layer(rng, c, 2 * c)
    w_e, b_e = _init_layer(rng, c, c)
    w_s = Tensor(GATE_JOINT_SCALE * w_s.data, requires_grad=True)
    b_s = Tensor(np.zeros(c), requires_grad=True)
    w_e = Tensor(GATE_WEIGHT_SCALE * w_e.data, requires_grad=True)
    b_e = Tensor(np.full(c, GATE_OPEN_BIAS), requires_grad=True)
    return AmfmParams(w_s=w_s, b_s=b_s, w_e=w_e, b_e=b_e)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x[batch x in] @ w.T + b, with the bias repeated across the batch."""
    rows = x.shape[0]
    out = x @ w.T
    ones = Tensor(np.ones((rows, 1)))
    return out + ones @ b.reshape(1, b.size)


def encode(x: Tensor, p: EncoderParams) -> Tensor:
    """Forward pass through the perceptron; relu between layers, linear head."""
    if x.ndim != 2 or x.shape[1] != p.layers[0][0].shape[1]:
        raise DimensionError(
            f"encode: input {x.shape} does not match first layer {p.layers[0][0].shape}")
    h = x
    for i, (w, b) in enumerate(p.layers):
        h = affine(h, w, b)
        if i < len(p.layers) - 1:
            h = h.relu()
    return h


def pool_audio(mel_values: np.ndarray, mode: str = "mean") -> np.ndarray:
    """Collapse a bands x frames spectrogram to the encoder input vector.

    The pooled vector is mean/variance normalized per sample (spectral
    mean normalization): raw magnitudes are all-positive, and the common
    mode they share would otherwise dominate every embedding direction.
    """
    if mode == "mean":
        x = mel_values.mean(axis=1)
    elif mode == "flatten":
        x = mel_values.reshape(-1)
    else:
        raise ConfigError(f"unknown audio pooling mode {mode!r}")
    return (x - x.mean()) / (x.std() + 1e-8)


def amfm_forward(v: Tensor, a: Tensor, p: AmfmParams,
                 gate_fn: str = "relu") -> tuple[Tensor, Tensor]:
    """Gated fusion of the two modality embeddings.

    joint = concat(v, a) @ w_s.T + b_s
    excitation = joint @ w_e.T + b_e
    f_v = gate(excitation) * v,  f_a = gate(excitation) * a

    One shared excitation gates both modalities, which forces the two
    embeddings to share a dimension.
    """
    if v.shape != a.shape:
        raise ContractError(
            f"fusion needs matching embeddings, got {v.shape} and {a.shape}")
    joint = affine(concat(v, a, axis=1), p.w_s, p.b_s)
    excitation = affine(joint, p.w_e, p.b_e)
    if gate_fn == "relu":
        gate = excitation.relu()
    elif gate_fn == "sigmoid":
        gate = excitation.sigmoid()
    else:
        raise ConfigError(f"unknown gate function {gate_fn!r}")
    return gate * v, gate * a


# ----------------------------------------------------------------- checkpoint
#
# A checkpoint is a binary file of concatenated tensor records (visual
# encoder layers, then audio encoder layers, then fusion parameters) plus
# a JSON sidecar listing names, shapes, model dims, and the config hash.

@dataclass
class ModelState:
    visual: EncoderParams
    audio: EncoderParams
    amfm: AmfmParams

    def parameters(self) -> list[Tensor]:
        return self.visual.parameters() + self.audio.parameters() + self.amfm.parameters()

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out = []
        for tag, enc in (("visual", self.visual), ("audio", self.audio)):
            for i, (w, b) in enumerate(enc.layers):
                out.append((f"{tag}.{i}.weight", w))
                out.append((f"{tag}.{i}.bias", b))
        out.extend([("amfm.w_s", self.amfm.w_s), ("amfm.b_s", self.amfm.b_s),
                    ("amfm.w_e", self.amfm.w_e), ("amfm.b_e", self.amfm.b_e)])
        return out


def init_model(seed: int, visual_dim: int, audio_dim: int, hidden_dim: int,
               embed_dim: int) -> ModelState:
    rng = np.random.default_rng(seed)
    visual = init_encoder(rng, visual_dim, hidden_dim, embed_dim)
    audio = init_encoder(rng, audio_dim, hidden_dim, embed_dim)
    amfm = init_amfm(rng, embed_dim)
    return ModelState(visual=visual, audio=audio, amfm=amfm)


def config_hash(cfg_dict: dict) -> str:
    blob = json.dumps(cfg_dict, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def save_checkpoint(path, state: ModelState, cfg_hash: str, meta: dict | None = None) -> None:
    path = str(path)
    named = state.named_tensors()
    blob = b"".join(tensor_to_bytes(t) for _, t in named)
    manifest = {
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in named],
        "config_hash": cfg_hash,
        "meta": meta or {},
    }
    atomic_write_bytes(path, blob)
    atomic_write_text(path + ".json", json.dumps(manifest, indent=2) + "\n")


def load_checkpoint(path) -> tuple[ModelState, dict]:
    path = str(path)
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
        with open(path + ".json", "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint manifest {path}.json is malformed: {exc}") from exc

    tensors: dict[str, Tensor] = {}
    offset = 0
    try:
        for entry in manifest["tensors"]:
            t, offset = tensor_from_buffer(blob, offset)
            if list(t.shape) != entry["shape"]:
                raise CheckpointError(
                    f"checkpoint {path}: tensor {entry['name']} has shape "
                    f"{list(t.shape)}, manifest says {entry['shape']}")
            t.requires_grad = True
            tensors[entry["name"]] = t
    except Exception as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"checkpoint {path} is corrupted: {exc}") from exc
    if offset != len(blob):
        raise CheckpointError(f"checkpoint {path} has {len(blob) - offset} trailing bytes")

    def read_encoder(tag: str) -> EncoderParams:
        layers = []
        i = 0
        while f"{tag}.{i}.weight" in tensors:
            layers.append((tensors[f"{tag}.{i}.weight"], tensors[f"{tag}.{i}.bias"]))
            i += 1
        if not layers:
            raise CheckpointError(f"checkpoint {path} has no {tag} encoder layers")
        return EncoderParams(layers=layers, embed_dim=layers[-1][0].shape[0])

    try:
        state = ModelState(
            visual=read_encoder("visual"),
            audio=read_encoder("audio"),
            amfm=AmfmParams(w_s=tensors["amfm.w_s"], b_s=tensors["amfm.b_s"],
                            w_e=tensors["amfm.w_e"], b_e=tensors["amfm.b_e"]),
        )
    except KeyError as exc:
        raise CheckpointError(f"checkpoint {path} is missing tensor {exc}") from exc
    return state, manifest
