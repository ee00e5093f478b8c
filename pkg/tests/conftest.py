import numpy as np
import pytest

from aosr import synth
from aosr.imaging import ControlCoeffs


def make_triples(n, size=32, seed=0, dtype=np.float32, scene_offset=0):
    out = []
    for k in range(n):
        j = synth.generate_scene(scene_offset + k, size, size).astype(dtype)
        p = synth.sample_params(synth.sample_rng(seed, k))
        out.append(synth.synthesize_triple(j, p, ControlCoeffs(), sample_id=f"t{k:03d}"))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def small_triples():
    return make_triples(4, size=16)


@pytest.fixture
def scene_dir(tmp_path):
    d = tmp_path / "scenes"
    d.mkdir()
    for k in range(2):
        synth.save_png(d / f"scene{k}.png", synth.generate_scene(k, 48, 48))
    return d


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(number, passed, detail)``."""

    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
