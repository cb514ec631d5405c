import pathlib
import sys

import numpy as np
import pytest

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1]))

from freqsynth.abstraction import GridSpec, InputGrid, SymbolicModel, build_symbolic_model
from freqsynth.config import ScenarioConfig
from freqsynth.grid_model import GridModel, GridParams, Trace


@pytest.fixture(autouse=True)
def _isolated_env(monkeypatch):
    # Keep runs independent of the developer's shell
    for name in ("FREQSYNTH_CONFIG", "FREQSYNTH_THREADS", "FREQSYNTH_MEMORY_MB", "FREQSYNTH_LOG_LEVEL"):
        monkeypatch.delenv(name, raising=False)
    yield


@pytest.fixture()
def uni_params():
    return GridParams.for_mode("uni")


@pytest.fixture()
def bi_params():
    return GridParams.for_mode("bi")


@pytest.fixture()
def bi_model(bi_params):
    return GridModel(bi_params)


@pytest.fixture()
def scenario():
    return ScenarioConfig()


@pytest.fixture()
def coarse_grid():
    # 4 x 10 x 10 x 10 cells over a region that contains the post-loss steady states
    return GridSpec.from_region((-1.0, -1.0, -1.0, -1.0), (0.6, 3.0, 3.0, 3.0), 0.4)


@pytest.fixture()
def coarse_model(coarse_grid, bi_model):
    w = 4.8
    return build_symbolic_model(
        coarse_grid,
        InputGrid(levels=np.array([0.0, 0.5, 1.0])),
        (0.95 * w, w),
        0.25,
        bi_model,
        workers=1,
    )


@pytest.fixture()
def toy_model():
    # a -u1-> b ; b -u1-> c ; b -u2-> {a, c} ; c absorbing ; a has no u2
    table = {
        (0, 0): [1],
        (0, 1): None,
        (1, 0): [2],
        (1, 1): [0, 2],
        (2, 0): [2],
        (2, 1): [2],
    }
    return SymbolicModel.from_explicit(3, 2, table)


def random_table(rng, n_cells=200, n_inputs=4, ood_rate=0.1, max_succ=3):
    table = {}
    for cell in range(n_cells):
        for inp in range(n_inputs):
            if rng.random() < ood_rate:
                table[(cell, inp)] = None
                continue
            size = int(rng.integers(1, max_succ + 1))
            # bias successors toward lower indices so non-trivial winning sets appear
            centre = max(0, cell - int(rng.integers(0, 6)))
            succ = np.clip(centre + rng.integers(-2, 3, size=size), 0, n_cells - 1)
            table[(cell, inp)] = sorted(set(int(s) for s in succ))
    return table


@pytest.fixture()
def make_random_model():
    def build(seed, n_cells=200, n_inputs=4):
        rng = np.random.default_rng(seed)
        table = random_table(rng, n_cells, n_inputs)
        return SymbolicModel.from_explicit(n_cells, n_inputs, table), table

    return build


@pytest.fixture()
def make_trace():
    def build(f_hz, tau=0.25, u=None, phase=None, f_nom=50.0):
        f_hz = np.asarray(f_hz, dtype=float)
        n = f_hz.size
        x = np.zeros((n, 4))
        x[:, 0] = f_hz - f_nom
        return Trace(
            t=np.arange(n) * tau,
            x=x,
            u=np.zeros(n) if u is None else np.asarray(u, dtype=float),
            w=np.zeros(n),
            phase=tuple(phase) if phase is not None else ("none",) * n,
            tau=tau,
            f_nom=f_nom,
        )

    return build
