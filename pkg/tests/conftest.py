import os

# Pin BLAS threading before numpy loads anywhere; the determinism contract
# (identical bytes across runs) only holds single-threaded.
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")
os.environ.setdefault("STEREOFORGE_THREADS", "0")

import numpy as np
import pytest

from stereoforge import LayerSpec, SceneSpec, synth_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


BENCH_SPEC = SceneSpec(
    width=64,
    height=32,
    layers=(
        LayerSpec(kind="noise", disparity=(-4, 0), scale=10),
        LayerSpec(kind="stripes", disparity=(1, 6), rect="random", scale=6),
    ),
    seed=3,
)


@pytest.fixture(scope="session")
def bench_spec():
    return BENCH_SPEC


@pytest.fixture(scope="session")
def tiny_dataset():
    return synth_dataset(BENCH_SPEC, 6, seed=77)
