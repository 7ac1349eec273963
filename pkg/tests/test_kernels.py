import numpy as np
import pytest

from bsnas import kernels


@pytest.fixture(scope="module")
def inputs():
    rng = np.random.default_rng(0)
    n_rows, n_layers, n_ops, n_clusters, n_channels = 64, 7, 12, 3, 4
    return dict(
        op_idx=rng.integers(0, n_ops, size=(n_rows, n_layers)),
        ch_idx=rng.integers(0, n_channels, size=(n_rows, n_clusters)),
        u=rng.standard_normal((n_layers, n_ops)),
        exposure=rng.uniform(0, 300, size=(n_layers, n_ops)),
        v=rng.standard_normal((n_clusters, n_channels)),
        w=rng.standard_normal((n_layers - 1, n_ops, n_ops)),
    )


def test_surrogate_raw_backends_agree(inputs):
    if not kernels.HAS_NUMBA:
        pytest.skip("numba unavailable")
    a = kernels.surrogate_raw(
        inputs["op_idx"], inputs["ch_idx"], inputs["u"], inputs["exposure"], 60.0,
        inputs["v"], inputs["w"], 0.2, backend="numpy",
    )
    b = kernels.surrogate_raw(
        inputs["op_idx"], inputs["ch_idx"], inputs["u"], inputs["exposure"], 60.0,
        inputs["v"], inputs["w"], 0.2, backend="numba",
    )
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_surrogate_raw_reference(inputs):
    # direct per-row re-computation with plain python loops
    got = kernels.surrogate_raw(
        inputs["op_idx"], inputs["ch_idx"], inputs["u"], inputs["exposure"], 60.0,
        inputs["v"], inputs["w"], 0.2, backend="numpy",
    )
    for row in range(0, 64, 13):
        expected = 0.0
        for layer in range(7):
            op = inputs["op_idx"][row, layer]
            e = inputs["exposure"][layer, op]
            expected += inputs["u"][layer, op] * (e / (e + 60.0))
        for cl in range(3):
            expected += inputs["v"][cl, inputs["ch_idx"][row, cl]]
        for layer in range(6):
            expected += 0.2 * inputs["w"][layer, inputs["op_idx"][row, layer],
                                          inputs["op_idx"][row, layer + 1]]
        assert got[row] == pytest.approx(expected, rel=1e-12)


def test_third_counts_backends_agree(inputs):
    if not kernels.HAS_NUMBA:
        pytest.skip("numba unavailable")
    a = kernels.third_counts(inputs["op_idx"], 21, 12, backend="numpy")
    b = kernels.third_counts(inputs["op_idx"], 21, 12, backend="numba")
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def test_third_counts_reference(inputs):
    top, bottom, total = kernels.third_counts(inputs["op_idx"], 21, 12, backend="numpy")
    rows = inputs["op_idx"]
    for layer in (0, 3, 6):
        for op in range(12):
            assert total[layer, op] == int((rows[:, layer] == op).sum())
            assert top[layer, op] == int((rows[:21, layer] == op).sum())
            assert bottom[layer, op] == int((rows[-21:, layer] == op).sum())


def test_env_flag_disables_numba(monkeypatch):
    import importlib
    import subprocess
    import sys

    code = (
        "import os; os.environ['BSNAS_NUMBA']='0'; "
        "from bsnas import kernels; print(kernels.USE_NUMBA)"
    )
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True)
    assert out.stdout.strip() == "False"
