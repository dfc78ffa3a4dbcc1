"""Shared tiny fixtures: short series and small cohorts so unit tests stay fast."""

import numpy as np
import pytest

import fitadapt as fa
from fitadapt.training import TrainConfig

TINY_LENGTH = 150  # 10 steps after the default 15x downsampling


@pytest.fixture(scope="session")
def tiny_source_raw():
    spec = fa.source_cohort_spec(series_length_raw=TINY_LENGTH)
    return fa.generate_cohort(spec, 120, seed=11, domain=0)


@pytest.fixture(scope="session")
def tiny_target_raw():
    spec = fa.target_cohort_spec(series_length_raw=TINY_LENGTH)
    return fa.generate_cohort(spec, 60, seed=12, domain=1)


@pytest.fixture(scope="session")
def tiny_source_silver(tiny_source_raw):
    c = fa.LabelCorruption.calibrated(tiny_source_raw.y)
    return fa.corrupt_to_silver(tiny_source_raw, c, seed=13)


@pytest.fixture(scope="session")
def tiny_source_proc(tiny_source_silver):
    return fa.assemble_features(tiny_source_silver)


@pytest.fixture(scope="session")
def tiny_target_proc(tiny_target_raw):
    return fa.assemble_features(tiny_target_raw)


@pytest.fixture()
def fast_cfg():
    return TrainConfig(learning_rate=1e-2, batch_size=16, max_epochs=5, patience=3)


@pytest.fixture(scope="session")
def small_net():
    return fa.NetConfig(recurrent_units=8, recurrent_layers=2, meta_hidden=16, disc_hidden=8, dropout=0.1)
