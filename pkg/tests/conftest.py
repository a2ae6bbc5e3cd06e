import numpy as np
import pytest

from milmix.core import Dataset, FeatureBag, one_hot


def make_dataset(n_per_class=4, P=6, D=3, C=2, seed=0, same_P=True):
    rng = np.random.default_rng(seed)
    bags, labels = [], []
    for c in range(C):
        for b in range(n_per_class):
            p = P if same_P else int(rng.integers(1, P + 1))
            bags.append(FeatureBag(f"c{c}-b{b}", rng.normal(c, 1.0, size=(p, D))))
            labels.append(one_hot(c, C))
    return Dataset(tuple(bags), tuple(labels), tuple(f"k{c}" for c in range(C)))


@pytest.fixture
def small_dataset():
    return make_dataset()


def numeric_grad(net, X, label, h=1e-5):
    """Central finite differences of the loss for every parameter entry."""
    from milmix.model import forward, loss

    out = {}
    for k, p in net.params.items():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            up = loss(forward(net, X), label)
            p[idx] = orig - h
            down = loss(forward(net, X), label)
            p[idx] = orig
            g[idx] = (up - down) / (2 * h)
        out[k] = g
    return out


def block_rel_error(analytic, numeric, floor=1e-6):
    """Per-block ||a - n|| / max(||a||, ||n||, floor)."""
    return {
        k: float(np.linalg.norm(analytic[k] - numeric[k]) / max(np.linalg.norm(analytic[k]), np.linalg.norm(numeric[k]), floor))
        for k in analytic
    }


def random_instance(rng, preset="2/2", D=8, P=5, C=2, H=4, E=6, **kw):
    """Model with N(0,1) parameters, a random bag and a random soft label."""
    from milmix.core import RngStream, SoftLabel
    from milmix.model import ModelConfig, init

    cfg = ModelConfig(D=D, C=C, H=H, E=E, **kw).with_preset(preset)
    net = init(cfg, RngStream(int(rng.integers(2**32)), 1))
    for k in net.params:
        net.params[k] = rng.normal(size=net.params[k].shape)
    X = rng.normal(size=(P, D))
    y = rng.dirichlet(np.ones(C))
    return net, X, SoftLabel(y / y.sum())


# filled by test_acceptance.py; printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
