import os

# Bitwise determinism tests assume a fixed BLAS reduction order.
for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")

import numpy as np
import pytest

from ufo.data import SynthConfig, synthesize


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Ten groups (2 per class) of 5 images at 64x64, with aux maps."""
    root = tmp_path_factory.mktemp("tinydata")
    cfg = SynthConfig(seed=3, groups_per_class=2, group_size=5, with_aux=True)
    manifest = synthesize(cfg, root)
    return manifest


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
