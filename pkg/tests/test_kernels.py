import os
import subprocess
import sys

import numpy as np
import pytest

from spectrallab import BACKEND, _fallback
from spectrallab._backend import kernels

try:
    from spectrallab import _kernels as compiled
except ImportError:  # extension not built
    compiled = None

needs_compiled = pytest.mark.skipif(compiled is None, reason="compiled extension not built")


def test_backend_name_matches_selected_module():
    assert BACKEND == kernels.NAME
    assert BACKEND in ("compiled", "python")
    if compiled is not None:
        assert BACKEND == "compiled"


def test_environment_switch_selects_fallback():
    env = dict(os.environ, SPECTRALLAB_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import spectrallab; print(spectrallab.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@needs_compiled
@pytest.mark.parametrize("n", [1, 3, 40, 257])
def test_power_iteration_backends_agree(rng, n):
    a = rng.standard_normal((n, n + 5))
    gram = np.ascontiguousarray(a @ a.T)
    start = rng.standard_normal(n)
    lc, ic, cc = compiled.gram_power_iteration(gram, start, 1e-10, 5000)
    lp, ip, cp = _fallback.gram_power_iteration(gram, start, 1e-10, 5000)
    assert cc and cp
    assert lc == pytest.approx(lp, rel=1e-12)
    assert abs(ic - ip) <= 2
    assert lc == pytest.approx(np.linalg.eigvalsh(gram)[-1], rel=1e-8)


@needs_compiled
def test_power_iteration_edge_cases():
    z = np.zeros((4, 4))
    assert compiled.gram_power_iteration(z, np.ones(4), 1e-6, 10)[0] == 0.0
    assert _fallback.gram_power_iteration(z, np.ones(4), 1e-6, 10)[0] == 0.0
    for mod in (compiled, _fallback):
        with pytest.raises(ValueError):
            mod.gram_power_iteration(np.eye(3), np.zeros(3), 1e-6, 10)
        lam, it, conv = mod.gram_power_iteration(np.diag([1.0, 0.999]), np.ones(2), 1e-15, 3)
        assert not conv and it == 3


@needs_compiled
@pytest.mark.parametrize("shape", [(1, 1), (5, 9), (64, 64), (30, 200)])
def test_gram_schmidt_backends_agree(rng, shape):
    g = rng.standard_normal(shape)
    qc = compiled.orthonormalize_rows(g.copy())
    qp = _fallback.orthonormalize_rows(g.copy())
    qc = np.asarray(qc)
    assert np.allclose(qc, qp, atol=1e-12)
    assert np.allclose(qc @ qc.T, np.eye(shape[0]), atol=1e-12)


@needs_compiled
def test_gram_schmidt_rejects_dependent_rows():
    g = np.ones((2, 4))
    for mod in (compiled, _fallback):
        with pytest.raises(ValueError):
            mod.orthonormalize_rows(g.copy())


@needs_compiled
def test_benchmark_script_runs(capsys):
    import importlib.util
    from pathlib import Path

    path = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"
    spec = importlib.util.spec_from_file_location("bench_kernels", path)
    bench = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(bench)
    assert bench.main(["--repeat", "1"]) == 0
    out = capsys.readouterr().out
    assert "power_iteration" in out and "gram_schmidt" in out
