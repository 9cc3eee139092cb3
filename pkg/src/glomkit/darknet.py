"""Darknet training configuration and the train/validate experiment matrix."""
from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import InvariantViolation, SchemaViolation

TRAIN_SOURCES = ("P1", "P2", "UMICH_FT")
EVAL_SETS = ("PAS_20", "HE_16")


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 0.001
    batch: int = 40
    subdivisions: int = 16
    policy: str = "steps"
    steps: tuple = (4800, 5400)
    scales: tuple = (0.1, 0.1)
    max_batches: int = 6000
    filters: int = 18
    activation: str = "linear"
    num_classes: int = 1

    def __post_init__(self):
        expected = (self.num_classes + 5) * 3
        if self.filters != expected:
            raise InvariantViolation(
                f"filters must be (num_classes + 5) * 3 = {expected}, got {self.filters}"
            )
        if len(self.steps) != len(self.scales):
            raise InvariantViolation("steps and scales must have equal length")
        if any(b >= self.max_batches for b in self.steps):
            raise InvariantViolation("every step must be below max_batches")
        if any(a >= b for a, b in zip(self.steps, self.steps[1:])):
            raise InvariantViolation("steps must be strictly increasing")


def default_training_config() -> TrainingConfig:
    """The single-class detector configuration used for every training set."""
    return TrainingConfig()


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_darknet_cfg(config: TrainingConfig) -> str:
    """Render the hyperparameter sections as darknet cfg text."""
    lines = [
        "[net]",
        f"batch={config.batch}",
        f"subdivisions={config.subdivisions}",
        f"learning_rate={_fmt(config.learning_rate)}",
        f"policy={config.policy}",
        "steps=" + ",".join(str(s) for s in config.steps),
        "scales=" + ",".join(_fmt(s) for s in config.scales),
        f"max_batches={config.max_batches}",
        "",
        "[convolutional]",
        f"filters={config.filters}",
        f"activation={config.activation}",
        "",
        "[yolo]",
        f"classes={config.num_classes}",
    ]
    return "\n".join(lines) + "\n"


def parse_darknet_cfg(text: str) -> TrainingConfig:
    """Inverse of render_darknet_cfg for the keys it emits."""
    values = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith("["):
            continue
        if "=" not in line:
            raise SchemaViolation(f"bad cfg line: {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        values[key] = val
    try:
        return TrainingConfig(
            learning_rate=float(values["learning_rate"]),
            batch=int(values["batch"]),
            subdivisions=int(values["subdivisions"]),
            policy=values["policy"],
            steps=tuple(int(v) for v in values["steps"].split(",")),
            scales=tuple(float(v) for v in values["scales"].split(",")),
            max_batches=int(values["max_batches"]),
            filters=int(values["filters"]),
            activation=values["activation"],
            num_classes=int(values["classes"]),
        )
    except KeyError as exc:
        raise SchemaViolation(f"cfg text missing key {exc}") from None


@dataclass(frozen=True)
class ExperimentPlan:
    id: int
    train_sources: tuple
    fine_tune: bool
    eval_sets: tuple = EVAL_SETS

    def __post_init__(self):
        if not 1 <= self.id <= 7:
            raise SchemaViolation(f"plan id must be 1..7, got {self.id}")
        for src in self.train_sources:
            if src not in TRAIN_SOURCES:
                raise SchemaViolation(f"unknown train source {src!r}")
        for ev in self.eval_sets:
            if ev not in EVAL_SETS:
                raise SchemaViolation(f"unknown eval set {ev!r}")


def build_experiment_plans() -> list:
    """The seven supported training-source combinations.

    Plans 2, 4 and 6 continue training from the public-data weights on the
    UMICH fine-tune slides; plan 7 trains on those slides alone. Every plan
    is evaluated on both validation stains.
    """
    return [
        ExperimentPlan(id=1, train_sources=("P1",), fine_tune=False),
        ExperimentPlan(id=2, train_sources=("P1",), fine_tune=True),
        ExperimentPlan(id=3, train_sources=("P2",), fine_tune=False),
        ExperimentPlan(id=4, train_sources=("P2",), fine_tune=True),
        ExperimentPlan(id=5, train_sources=("P1", "P2"), fine_tune=False),
        ExperimentPlan(id=6, train_sources=("P1", "P2"), fine_tune=True),
        ExperimentPlan(id=7, train_sources=("UMICH_FT",), fine_tune=False),
    ]


def experiment_manifest_json(plans) -> str:
    """Serialize plans as the experiment manifest document."""
    doc = {
        "schema_version": 1,
        "plans": [
            {
                "id": plan.id,
                "train_sources": list(plan.train_sources),
                "fine_tune": plan.fine_tune,
                "eval_sets": list(plan.eval_sets),
            }
            for plan in plans
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def load_experiment_manifest(text: str) -> list:
    doc = json.loads(text)
    if doc.get("schema_version") != 1:
        raise SchemaViolation("unsupported experiment manifest version")
    return [
        ExperimentPlan(
            id=entry["id"],
            train_sources=tuple(entry["train_sources"]),
            fine_tune=bool(entry["fine_tune"]),
            eval_sets=tuple(entry["eval_sets"]),
        )
        for entry in doc["plans"]
    ]
