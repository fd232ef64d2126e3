"""Component-removal harness.

Each toggle strips one ingredient from the full recipe (ensembling, loss
weighting, target alternation, bootstrapping, delta features, the
constant-weight selection, or one input feature group). The harness
retrains with the remaining ingredients and reports percentage metric
changes against the untouched baseline, both scored on the test split.

Removing an input group keeps the target feature in the schema (labels
still need its column) but zeroes it as a model input, so the variant
model sees no information from the removed group.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .ensemble import EnsembleSpec, build_ensemble, forecast_dataset
from .errors import ConfigError
from .evaluate import EvalReport, stratified_report
from .ingest import FeatureTable
from .pipeline import Datasets, PipelineConfig, SplitBounds, build_datasets
from .schema import FeatureSchema
from .train import TrainConfig
from .vsn import ConstantVsn, ModelConfig, PerStepVsn

COMPONENT_TOGGLES = (
    "ensembling",
    "loss-weighting",
    "delta-alternation",
    "bootstrapping",
    "delta-features",
    "per-step-vsn",
)

GROUP_PREFIX = "group:"


def group_toggles(schema: FeatureSchema) -> tuple:
    groups = sorted({f.group for f in schema.features})
    return tuple(GROUP_PREFIX + g for g in groups)


def validate_toggles(toggles, schema: FeatureSchema) -> tuple:
    """Deduplicate, keep order, reject anything unknown."""
    known = set(COMPONENT_TOGGLES) | set(group_toggles(schema))
    cleaned = tuple(dict.fromkeys(toggles))
    for toggle in cleaned:
        if toggle not in known:
            raise ConfigError(
                f"unknown ablation toggle {toggle!r}; expected one of "
                f"{', '.join(sorted(known))}"
            )
    return cleaned


def _removed_groups(toggles) -> list:
    return [t[len(GROUP_PREFIX):] for t in toggles if t.startswith(GROUP_PREFIX)]


def variant_schema(schema: FeatureSchema, toggles) -> FeatureSchema:
    """Schema with delta columns and/or whole input groups removed."""
    removed = set(_removed_groups(toggles))
    specs = [
        f
        for f in schema.features
        if f.group not in removed or f.name == schema.target
    ]
    if "delta-features" in toggles:
        specs = [replace(f, has_delta=False) for f in specs]
    return FeatureSchema(specs, target=schema.target)


def variant_spec(spec: EnsembleSpec, toggles) -> EnsembleSpec:
    if "ensembling" in toggles:
        spec = replace(spec, size=1, c_values=None)
    if "loss-weighting" in toggles:
        spec = replace(spec, c_values=(0.0,) * spec.size)
    if "bootstrapping" in toggles:
        spec = replace(spec, bootstrap=False)
    if "delta-alternation" in toggles:
        spec = replace(spec, alternate=False)
    return spec


def variant_model_config(
    config: ModelConfig, schema: FeatureSchema, toggles
) -> ModelConfig:
    """Zero the target input when its group is removed; drop stale names."""
    removed = set(_removed_groups(toggles))
    zeroed = list(config.zeroed_features)
    if schema[schema.target].group in removed and schema.target not in zeroed:
        zeroed.append(schema.target)
    v_schema = variant_schema(schema, toggles)
    zeroed = tuple(name for name in zeroed if name in v_schema)
    return replace(config, zeroed_features=zeroed)


@dataclass
class AblationResult:
    toggles: tuple
    baseline: EvalReport
    variant: EvalReport
    delta_pct: dict  # metric -> percent change vs baseline (positive = worse)


def percentage_deltas(baseline: EvalReport, variant: EvalReport) -> dict:
    def pct(b, v):
        if b is None or v is None:
            return None
        return (v - b) / b * 100.0

    return {
        "overall_rmse": pct(baseline.overall_rmse, variant.overall_rmse),
        "overall_crps": pct(baseline.overall_crps, variant.overall_crps),
        "high_rmse": pct(baseline.high_rmse, variant.high_rmse),
        "high_crps": pct(baseline.high_crps, variant.high_crps),
    }


def _score(members, datasets: Datasets, levels, threshold: float) -> EvalReport:
    values, _ = forecast_dataset([m.model for m in members], datasets.test)
    test = datasets.test
    return stratified_report(
        values, test.labels_raw, test.lead_minutes, levels=levels, threshold=threshold
    )


def ablation_run(
    toggles,
    table: FeatureTable,
    bounds: SplitBounds,
    model_config: ModelConfig,
    train_config: TrainConfig,
    spec: EnsembleSpec = EnsembleSpec(),
    threshold: float = 500.0,
    pipeline_config: PipelineConfig = PipelineConfig(),
    jobs: int = 1,
) -> AblationResult:
    """Train baseline and toggled variant, score both on the test split."""
    toggles = validate_toggles(toggles, table.schema)

    base_datasets = build_datasets(table, bounds, pipeline_config)
    base_members = build_ensemble(spec, base_datasets, model_config, train_config, jobs)
    baseline = _score(base_members, base_datasets, model_config.quantiles, threshold)

    if not toggles:
        variant = baseline
    else:
        v_schema = variant_schema(table.schema, toggles)
        needs_rebuild = v_schema.input_columns() != table.schema.input_columns()
        if needs_rebuild:
            v_table = FeatureTable(
                start_minute=table.start_minute,
                columns={n: table.columns[n] for n in v_schema.feature_names},
                schema=v_schema,
                valid=table.valid,
                filled=table.filled,
            )
            v_datasets = build_datasets(v_table, bounds, pipeline_config)
        else:
            v_datasets = base_datasets
        v_members = build_ensemble(
            variant_spec(spec, toggles),
            v_datasets,
            variant_model_config(model_config, table.schema, toggles),
            train_config,
            jobs,
            PerStepVsn if "per-step-vsn" in toggles else ConstantVsn,
        )
        variant = _score(v_members, v_datasets, model_config.quantiles, threshold)

    return AblationResult(toggles, baseline, variant, percentage_deltas(baseline, variant))
