import os
import subprocess
import sys

import numpy as np
import pytest

from thermoforge import _jit, kernels

from oracles import brute_force_fronts


def _zone_inputs(rng, n=6, horizon=72):
    per_ep = [rng.uniform(15, 25, n), rng.uniform(50, 200, n), rng.uniform(1, 5, n), rng.uniform(0.5, 2, n),
              rng.uniform(1, 20, n), rng.uniform(100, 400, n), rng.uniform(100, 600, n),
              rng.uniform(10, 100, n), rng.uniform(10, 100, n), rng.uniform(10, 100, n),
              rng.uniform(0, 0.3, n), rng.uniform(0, 0.3, n)]
    occupied = (rng.random((n, horizon)) < 0.4).astype(float)
    heat = rng.uniform(16, 22, (n, horizon))
    cool = heat + rng.uniform(0, 8, (n, horizon))
    per_hour = [occupied, heat, cool, rng.uniform(0, 3, (n, horizon)), rng.uniform(16, 22, (n, horizon)),
                rng.uniform(-5, 35, (n, horizon)), rng.uniform(0, 800, (n, horizon))]
    return per_ep + per_hour + [400.0]


@pytest.mark.parametrize("seed", range(5))
def test_simulate_zone_numba_matches_numpy(seed):
    args = _zone_inputs(np.random.default_rng(seed))
    out_a, net_a = kernels.simulate_zone_numba(*args)
    out_b, net_b = kernels.simulate_zone_numpy(*args)
    np.testing.assert_allclose(out_a, out_b, rtol=1e-12, atol=1e-9)
    np.testing.assert_allclose(net_a, net_b, rtol=1e-12, atol=1e-9)


def test_simulate_zone_matches_interpreted_loops():
    # the scalar loop body run by the python interpreter is a third route
    args = _zone_inputs(np.random.default_rng(11), n=2, horizon=30)
    out_a, _ = kernels._simulate_zone_loops(*args)
    out_b, _ = kernels.simulate_zone_numba(*args)
    np.testing.assert_allclose(out_a, out_b, rtol=1e-12, atol=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_domination_ranks_numba_matches_numpy(seed):
    rng = np.random.default_rng(seed)
    for _ in range(20):
        n = int(rng.integers(1, 150))
        pts = rng.integers(0, 15, size=(n, 2)).astype(float) if rng.random() < 0.5 else rng.random((n, 2))
        a = kernels.domination_ranks_numba(pts)
        b = kernels.domination_ranks_numpy(pts)
        np.testing.assert_array_equal(a, b)
        assert a.tolist() == brute_force_fronts(pts)


def test_three_objective_ranks_agree():
    pts = np.random.default_rng(5).integers(0, 6, size=(80, 3)).astype(float)
    np.testing.assert_array_equal(kernels.domination_ranks_numba(pts), kernels.domination_ranks_numpy(pts))


def test_dispatch_follows_flag():
    expected_zone = kernels.simulate_zone_numba if _jit.USE_NUMBA else kernels.simulate_zone_numpy
    assert kernels.simulate_zone is expected_zone


def test_disable_flag_selects_numpy():
    code = ("from thermoforge import _jit, kernels; "
            "assert not _jit.USE_NUMBA; assert kernels.simulate_zone is kernels.simulate_zone_numpy; "
            "assert kernels.domination_ranks is kernels.domination_ranks_numpy")
    env = dict(os.environ, THERMOFORGE_DISABLE_NUMBA="1")
    subprocess.run([sys.executable, "-c", code], env=env, check=True)


def test_benchmark_smoke(tmp_path, capsys):
    bench_dir = os.path.join(os.path.dirname(__file__), os.pardir, "benchmarks")
    sys.path.insert(0, os.path.abspath(bench_dir))
    try:
        import bench_kernels
    finally:
        sys.path.pop(0)
    assert bench_kernels.main(["--quick", "--repeat", "1", "--json", str(tmp_path / "b.json")]) == 0
    assert "simulate_zone" in capsys.readouterr().out
