"""Binary model persistence with bit-exact parameter round-trips.

Container layout (all integers little-endian):

    magic (8 bytes) | version uint32 | header_len uint64 | header JSON
    | record_count uint32 | records...

Each record is one named float64 array:

    name_len uint16 | name utf-8 | ndim uint8 | dims uint64 each | payload

Payloads are raw little-endian float64, so save followed by load gives
back byte-identical arrays. The JSON header carries the model kind, the
model config, the scaler statistics, the schema text with its content
fingerprint, and a free-form training summary.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError
from .linear import QuantileLinear
from .pipeline import ScalerStats
from .schema import FeatureSchema
from .vsn import ConstantVsn, ModelConfig, PerStepVsn

MAGIC = b"IMBFCKPT"
VERSION = 1

_MODEL_KINDS = {"cvsn": ConstantVsn, "per_step": PerStepVsn, "linear": QuantileLinear}


def model_kind(model) -> str:
    # isinstance order matters: the per-step variant subclasses the
    # constant-weight one.
    if isinstance(model, PerStepVsn):
        return "per_step"
    if isinstance(model, ConstantVsn):
        return "cvsn"
    if isinstance(model, QuantileLinear):
        return "linear"
    raise CheckpointError(f"cannot serialize model type {type(model).__name__}")


def _config_to_dict(config: ModelConfig) -> dict:
    return {
        "n_steps": config.n_steps,
        "n_out": config.n_out,
        "quantiles": list(config.quantiles),
        "h": config.h,
        "h_hidden": config.h_hidden,
        "embed_dim": config.embed_dim,
        "dropout": config.dropout,
        "target_mode": config.target_mode,
        "zeroed_features": list(config.zeroed_features),
    }


def _config_from_dict(block: dict) -> ModelConfig:
    return ModelConfig(
        n_steps=int(block["n_steps"]),
        n_out=int(block["n_out"]),
        quantiles=tuple(block["quantiles"]),
        h=int(block["h"]),
        h_hidden=int(block["h_hidden"]),
        embed_dim=int(block["embed_dim"]),
        dropout=float(block["dropout"]),
        target_mode=block["target_mode"],
        zeroed_features=tuple(block["zeroed_features"]),
    )


@dataclass
class Checkpoint:
    """Everything needed to rebuild a model and forecast in MW."""

    model_kind: str
    config: ModelConfig
    params: list  # [(name, float64 array)] in named_params order
    scaler: ScalerStats
    schema_text: str
    schema_fingerprint: str
    training: dict = field(default_factory=dict)
    version: int = VERSION

    @classmethod
    def from_model(cls, model, scaler: ScalerStats, training: dict | None = None):
        schema_text = model.schema.to_text()
        return cls(
            model_kind=model_kind(model),
            config=model.config,
            params=[(name, arr.copy()) for name, arr in model.named_params()],
            scaler=scaler,
            schema_text=schema_text,
            schema_fingerprint=model.schema.fingerprint(),
            training=dict(training or {}),
        )

    def build_model(self):
        """Instantiate the model class and overwrite every parameter."""
        schema = FeatureSchema.from_text(self.schema_text)
        cls = _MODEL_KINDS[self.model_kind]
        model = cls(self.config, schema, np.random.default_rng(0))
        fresh = model.named_params()
        if [n for n, _ in fresh] != [n for n, _ in self.params]:
            raise CheckpointError(
                "parameter names in checkpoint do not match the rebuilt model"
            )
        for (_, dst), (name, src) in zip(fresh, self.params):
            if dst.shape != src.shape:
                raise CheckpointError(
                    f"parameter {name!r} has shape {src.shape}, expected {dst.shape}"
                )
            dst[...] = src
        return model

    def require_fingerprint(self, schema: FeatureSchema) -> None:
        if schema.fingerprint() != self.schema_fingerprint:
            raise CheckpointError(
                "schema fingerprint mismatch: checkpoint was trained against "
                f"{self.schema_fingerprint[:12]}..., data uses "
                f"{schema.fingerprint()[:12]}..."
            )

    def save(self, path) -> None:
        header = {
            "model_kind": self.model_kind,
            "config": _config_to_dict(self.config),
            "scaler": {
                "columns": list(self.scaler.columns),
                "label_mean": self.scaler.label_mean,
                "label_std": self.scaler.label_std,
                "dlabel_mean": self.scaler.dlabel_mean,
                "dlabel_std": self.scaler.dlabel_std,
            },
            "schema_text": self.schema_text,
            "schema_fingerprint": self.schema_fingerprint,
            "training": self.training,
        }
        records = [
            ("scaler/mean", np.asarray(self.scaler.mean, dtype=np.float64)),
            ("scaler/std", np.asarray(self.scaler.std, dtype=np.float64)),
        ]
        records.extend((f"param/{name}", arr) for name, arr in self.params)

        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", self.version))
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)
            fh.write(struct.pack("<I", len(records)))
            for name, arr in records:
                arr = np.ascontiguousarray(arr, dtype="<f8")
                encoded = name.encode("utf-8")
                fh.write(struct.pack("<H", len(encoded)))
                fh.write(encoded)
                fh.write(struct.pack("<B", arr.ndim))
                for dim in arr.shape:
                    fh.write(struct.pack("<Q", dim))
                fh.write(arr.tobytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        try:
            with open(path, "rb") as fh:
                data = fh.read()
        except OSError as exc:
            raise CheckpointError(f"cannot read checkpoint: {exc}") from exc
        reader = _Reader(data, path)
        if reader.take(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path} is not a model checkpoint (bad magic)")
        version = reader.unpack("<I")
        if version != VERSION:
            raise CheckpointError(
                f"unsupported checkpoint version {version} (expected {VERSION})"
            )
        try:
            header = json.loads(reader.take(reader.unpack("<Q")).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc

        arrays = {}
        order = []
        for _ in range(reader.unpack("<I")):
            name = reader.take(reader.unpack("<H")).decode("utf-8")
            ndim = reader.unpack("<B")
            shape = tuple(reader.unpack("<Q") for _ in range(ndim))
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            payload = reader.take(count * 8)
            arrays[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
            order.append(name)
        if reader.remaining():
            raise CheckpointError(f"{path} has trailing bytes after last record")

        try:
            kind = header["model_kind"]
            if kind not in _MODEL_KINDS:
                raise CheckpointError(f"unknown model kind {kind!r}")
            config = _config_from_dict(header["config"])
            scaler_block = header["scaler"]
            scaler = ScalerStats(
                columns=list(scaler_block["columns"]),
                mean=arrays.pop("scaler/mean"),
                std=arrays.pop("scaler/std"),
                label_mean=float(scaler_block["label_mean"]),
                label_std=float(scaler_block["label_std"]),
                dlabel_mean=float(scaler_block["dlabel_mean"]),
                dlabel_std=float(scaler_block["dlabel_std"]),
            )
            params = [
                (name[len("param/"):], arrays[name])
                for name in order
                if name.startswith("param/")
            ]
            return cls(
                model_kind=kind,
                config=config,
                params=params,
                scaler=scaler,
                schema_text=header["schema_text"],
                schema_fingerprint=header["schema_fingerprint"],
                training=dict(header.get("training", {})),
                version=version,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"corrupt checkpoint content: {exc}") from exc


class _Reader:
    """Bounds-checked cursor over the raw checkpoint bytes."""

    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path} is truncated")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> int:
        (value,) = struct.unpack(fmt, self.take(struct.calcsize(fmt)))
        return value

    def remaining(self) -> int:
        return len(self.data) - self.pos


def save_model(path, model, scaler: ScalerStats, training: dict | None = None) -> None:
    Checkpoint.from_model(model, scaler, training).save(path)


def load_model(path):
    """Rebuild (model, scaler, checkpoint) from a container file."""
    ckpt = Checkpoint.load(path)
    return ckpt.build_model(), ckpt.scaler, ckpt
