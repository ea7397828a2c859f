import numpy as np
import pytest

from combostoc.data_metrics import StructuredSpec
from combostoc.interpolant import GridLayout, StructuredLayout, UnsyncConfig
from combostoc.trainer import TrainConfig, train_run


@pytest.fixture(scope="session")
def two_moons_model():
    """Quickly trained 2D velocity model shared across sampler/trainer tests."""
    layout = GridLayout(channels=2)
    cfg = TrainConfig(unsync=UnsyncConfig("all", layout, mix_fraction=0.5),
                      dataset={"kind": "two_moons", "n": 4096},
                      learning_rate=1e-3, batch_size=256, steps=1200,
                      eval_every=400, eval_K=100, seed=7)
    params, log = train_run(cfg)
    return params, log


@pytest.fixture(scope="session")
def structured_model():
    """Quickly trained structured x-prediction model (table-like class)."""
    spec = StructuredSpec()
    layout = StructuredLayout(parts=spec.parts, seg_widths=spec.seg_widths)
    cfg = TrainConfig(unsync=UnsyncConfig("att_part", layout, mix_fraction=0.5),
                      dataset={"kind": "structured", "n": 1024, "class_label": 0},
                      prediction_kind="data", compensate=False,
                      learning_rate=1e-3, batch_size=256, steps=3000,
                      eval_every=3000, eval_K=100, seed=2)
    params, log = train_run(cfg)
    return params, log, spec
