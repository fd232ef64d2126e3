"""Feature schema: which columns exist, their resolution, horizon and kind.

A schema is an ordered list of feature specs plus the name of the target
column (the quarter-hour imbalance series the labels come from). The
input width N_f counts one column per feature plus one delta column per
``has_delta`` feature. Categorical time features are later expanded into
embedding columns by the model, which is where the expanded width comes
from.

Schema files are YAML with a ``schema_version`` key so saved checkpoints
can be matched to the data they were trained on via a content
fingerprint.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable

import yaml

from .errors import DataError

SCHEMA_VERSION = 1

RESOLUTIONS = ("qh", "min")
HORIZONS = ("past", "future")
KINDS = ("continuous", "categorical", "binary")
GROUPS = (
    "si_nrv",
    "system",
    "exchange",
    "renewables",
    "load",
    "balancing_assets",
    "time",
)


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    group: str
    resolution: str  # "qh" or "min"
    horizon: str  # "past" or "future"
    kind: str = "continuous"
    vocab: int = 0  # categorical features only
    has_delta: bool = False

    def validate(self) -> None:
        if not self.name or not self.name.replace("_", "").isalnum():
            raise DataError(f"invalid feature name {self.name!r}")
        if self.group not in GROUPS:
            raise DataError(f"feature {self.name}: unknown group {self.group!r}")
        if self.resolution not in RESOLUTIONS:
            raise DataError(f"feature {self.name}: unknown resolution {self.resolution!r}")
        if self.horizon not in HORIZONS:
            raise DataError(f"feature {self.name}: unknown horizon {self.horizon!r}")
        if self.kind not in KINDS:
            raise DataError(f"feature {self.name}: unknown kind {self.kind!r}")
        if self.kind == "categorical":
            if self.vocab <= 1:
                raise DataError(f"categorical feature {self.name} needs vocab > 1")
            if self.has_delta:
                raise DataError(f"categorical feature {self.name} cannot carry a delta")
        elif self.vocab != 0:
            raise DataError(f"non-categorical feature {self.name} must not set vocab")


class FeatureSchema:
    """Ordered feature list with input-column bookkeeping."""

    def __init__(self, features: Iterable[FeatureSpec], target: str):
        self.features: tuple[FeatureSpec, ...] = tuple(features)
        self.target = target
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise DataError("duplicate feature names in schema")
        for f in self.features:
            f.validate()
        by_name = {f.name: f for f in self.features}
        if target not in by_name:
            raise DataError(f"target {target!r} is not a schema feature")
        if by_name[target].resolution != "qh":
            raise DataError(f"target {target!r} must be a quarter-hour feature")
        self._by_name = by_name

    def __getitem__(self, name: str) -> FeatureSpec:
        try:
            return self._by_name[name]
        except KeyError:
            raise DataError(f"unknown feature {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    @property
    def feature_names(self) -> list[str]:
        return [f.name for f in self.features]

    @property
    def categorical(self) -> list[FeatureSpec]:
        return [f for f in self.features if f.kind == "categorical"]

    def input_columns(self) -> list[str]:
        """Model input column names in order: value, then delta if carried."""
        cols = []
        for f in self.features:
            cols.append(f.name)
            if f.has_delta:
                cols.append(f.name + ".delta")
        return cols

    @property
    def n_inputs(self) -> int:
        """N_f: raw input width before embedding expansion."""
        return len(self.input_columns())

    def expanded_width(self, embed_dim: int = 5) -> int:
        """Width after each categorical column becomes embed_dim columns."""
        n_cat = len(self.categorical)
        return self.n_inputs - n_cat + n_cat * embed_dim

    def expanded_columns(self, embed_dim: int = 5) -> list[str]:
        cols = []
        for name in self.input_columns():
            spec = self._by_name.get(name)
            if spec is not None and spec.kind == "categorical":
                cols.extend(f"{name}[{i}]" for i in range(embed_dim))
            else:
                cols.append(name)
        return cols

    def to_text(self) -> str:
        doc = {
            "schema_version": SCHEMA_VERSION,
            "target": self.target,
            "features": [
                {
                    "name": f.name,
                    "group": f.group,
                    "resolution": f.resolution,
                    "horizon": f.horizon,
                    "kind": f.kind,
                    **({"vocab": f.vocab} if f.kind == "categorical" else {}),
                    "has_delta": f.has_delta,
                }
                for f in self.features
            ],
        }
        return yaml.safe_dump(doc, sort_keys=False)

    @classmethod
    def from_text(cls, text: str) -> "FeatureSchema":
        try:
            doc = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise DataError(f"schema file is not valid YAML: {exc}") from exc
        if not isinstance(doc, dict):
            raise DataError("schema file must contain a mapping")
        version = doc.get("schema_version")
        if version != SCHEMA_VERSION:
            raise DataError(f"unsupported schema_version {version!r}")
        target = doc.get("target")
        if not isinstance(target, str):
            raise DataError("schema file must name a target feature")
        raw = doc.get("features")
        if not isinstance(raw, list) or not raw:
            raise DataError("schema file must list features")
        feats = []
        for entry in raw:
            if not isinstance(entry, dict) or "name" not in entry:
                raise DataError(f"malformed feature entry: {entry!r}")
            known = {"name", "group", "resolution", "horizon", "kind", "vocab", "has_delta"}
            extra = set(entry) - known
            if extra:
                raise DataError(f"feature {entry['name']}: unknown keys {sorted(extra)}")
            feats.append(
                FeatureSpec(
                    name=entry["name"],
                    group=entry.get("group", "system"),
                    resolution=entry.get("resolution", "min"),
                    horizon=entry.get("horizon", "past"),
                    kind=entry.get("kind", "continuous"),
                    vocab=int(entry.get("vocab", 0)),
                    has_delta=bool(entry.get("has_delta", False)),
                )
            )
        return cls(feats, target=target)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "FeatureSchema":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def fingerprint(self) -> str:
        """Content hash tying checkpoints to the schema they trained with."""
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()


def default_schema() -> FeatureSchema:
    """Schema written by the synthetic generator.

    Continuous features carry deltas; the time group does not. With 15
    delta-carrying features and 5 time features, N_f = 15 * 2 + 5 = 35
    and the embedding expansion gives 35 - 2 + 10 = 43 columns.
    """
    c = "continuous"
    feats = [
        # observed history
        FeatureSpec("si_qh", "si_nrv", "qh", "past", c, has_delta=True),
        FeatureSpec("si_min", "si_nrv", "min", "past", c, has_delta=True),
        FeatureSpec("nrv_qh", "si_nrv", "qh", "past", c, has_delta=True),
        FeatureSpec("nrv_min", "si_nrv", "min", "past", c, has_delta=True),
        FeatureSpec("xb_flow", "exchange", "min", "past", c, has_delta=True),
        FeatureSpec("pv_actual", "renewables", "min", "past", c, has_delta=True),
        FeatureSpec("wind_actual", "renewables", "min", "past", c, has_delta=True),
        FeatureSpec("load_actual", "load", "min", "past", c, has_delta=True),
        FeatureSpec("asset_output", "balancing_assets", "min", "past", c, has_delta=True),
        # known in advance
        FeatureSpec("xb_nom", "exchange", "qh", "future", c, has_delta=True),
        FeatureSpec("pv_fc", "renewables", "qh", "future", c, has_delta=True),
        FeatureSpec("wind_fc", "renewables", "qh", "future", c, has_delta=True),
        FeatureSpec("load_fc", "load", "qh", "future", c, has_delta=True),
        FeatureSpec("asset_nom", "balancing_assets", "qh", "future", c, has_delta=True),
        FeatureSpec("noise_cov", "system", "qh", "future", c, has_delta=True),
        # time
        FeatureSpec("qh_of_day", "time", "qh", "future", "categorical", vocab=96),
        FeatureSpec("min_of_hour", "time", "min", "future", "categorical", vocab=60),
        FeatureSpec("year_cos", "time", "qh", "future", c),
        FeatureSpec("holiday", "time", "qh", "future", "binary"),
        FeatureSpec("recentness", "time", "min", "future", c),
    ]
    return FeatureSchema(feats, target="si_qh")
