import numpy as np
import pytest

from evpricing import kernels
from evpricing.queueing import QueueParams, expected_wait, stationary_distribution

compiled = pytest.mark.skipif(kernels.compiled_equilibrium_batch is None, reason="extension not built")


def instance(seed, N=40, E=30, S=6):
    rng = np.random.default_rng(seed)
    servers = rng.integers(1, 6, S)
    return dict(
        prices=rng.uniform(0.2, 0.8, (N, S)),
        eca=(rng.uniform(size=(E, S)) < 0.7).astype(np.uint8),
        base_cost=rng.uniform(0.1, 2.0, (E, S)),
        eps=rng.gumbel(size=(E, S)),
        servers=servers,
        capacity=servers + rng.integers(0, 5, S),
        mu=rng.uniform(0.4, 2.0, S),
        power=rng.choice([20.0, 50.0, 75.0], S),
    )


def call(fn, inst, mode, theta=0.01):
    return fn(inst["prices"], inst["eca"], inst["base_cost"], inst["eps"], inst["servers"], inst["capacity"],
              inst["mu"], inst["power"], theta, mode, 60, 1e-4, 1e-3)


@compiled
@pytest.mark.parametrize("mode", [kernels.MODE_DC, kernels.MODE_STANDARD, kernels.MODE_MSA])
@pytest.mark.parametrize("seed", range(5))
def test_backends_agree(mode, seed):
    inst = instance(seed)
    a = call(kernels.python_equilibrium_batch, inst, mode)
    b = call(kernels.compiled_equilibrium_batch, inst, mode)
    for x, y in zip(a, b):
        assert np.allclose(x, y, atol=1e-10, rtol=1e-10)
    assert np.array_equal(a[4], b[4])


def test_queue_batch_matches_scalar():
    rng = np.random.default_rng(1)
    servers = np.array([1, 2, 3, 5])
    cap = np.array([1, 4, 6, 9])
    mu = np.array([0.5, 1.0, 1.4, 2.0])
    lam = np.vstack([rng.uniform(0, 8, 4), np.zeros(4)])
    wait, full = kernels.queue_batch(lam, mu, servers, cap)
    for n in range(2):
        for i in range(4):
            p = QueueParams(lam[n, i], mu[i], int(servers[i]), int(cap[i]))
            assert wait[n, i] == pytest.approx(expected_wait(p), abs=1e-12)
            want = stationary_distribution(p)[-1] if lam[n, i] > 0 else 0.0
            assert full[n, i] == pytest.approx(want, abs=1e-12)


def test_empty_population():
    inst = instance(0, E=0)
    for fn in (kernels.python_equilibrium_batch, kernels.compiled_equilibrium_batch):
        if fn is None:
            continue
        probs, lam, wait, full, iters, conv = call(fn, inst, kernels.MODE_MSA)
        assert probs.shape == (40, 0, 6) and not lam.any() and not wait.any()


def test_backend_flag():
    assert kernels.BACKEND in ("cython", "python")
    if kernels.BACKEND == "python":
        assert kernels.equilibrium_batch is kernels.python_equilibrium_batch


def test_read_only_prices_accepted():
    inst = instance(3, N=1)
    inst["prices"].setflags(write=False)
    for fn in (kernels.python_equilibrium_batch, kernels.compiled_equilibrium_batch):
        if fn is not None:
            call(fn, inst, kernels.MODE_MSA)
