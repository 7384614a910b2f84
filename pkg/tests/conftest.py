import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oracles import max_rel_error, numerical_gradient  # noqa: E402

from mtdepth import autodiff as ad  # noqa: E402


def gradcheck(build_loss, arrays, eps=1e-5, rtol=1e-5):
    """Compare analytic gradients against the central-difference oracle.

    ``build_loss(*tensors)`` must construct a scalar loss from fresh Tensors
    wrapping ``arrays``. Returns the worst relative error over all inputs.
    """
    tensors = [ad.tensor(a, requires_grad=True) for a in arrays]
    loss = build_loss(*tensors)
    ad.backward(loss)

    worst = 0.0
    for idx, base in enumerate(arrays):
        def f(x, idx=idx):
            ts = [ad.tensor(a if i != idx else x) for i, a in enumerate(arrays)]
            return float(build_loss(*ts).data)
        num = numerical_gradient(f, np.array(base, dtype=np.float64), eps=eps)
        ana = tensors[idx].grad
        assert ana is not None, f"input {idx} received no gradient"
        worst = max(worst, max_rel_error(ana, num))
    assert worst < rtol, f"gradient mismatch: max relative error {worst:.3e} >= {rtol}"
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(42)
