import numpy as np
import pytest


def central_difference_check(loss_fn, named_params, rng, rel_tol=1e-4,
                             step=1e-5, max_coords=120, floor=1e-6):
    """Compare analytic gradients of loss_fn() against central differences.

    loss_fn must rebuild its computation (with identical internal randomness)
    on every call. Checks a random subset of coordinates per parameter and
    returns the worst relative error.
    """
    for _, p in named_params:
        p.zero_grad()
    loss = loss_fn()
    loss.backward()
    grads = {name: p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
             for name, p in named_params}

    flat = [(name, p, i) for name, p in named_params for i in range(p.data.size)]
    if len(flat) > max_coords:
        picks = rng.choice(len(flat), size=max_coords, replace=False)
        flat = [flat[i] for i in picks]

    worst = 0.0
    for name, p, i in flat:
        orig = p.data.flat[i]
        p.data.flat[i] = orig + step
        up = loss_fn().item()
        p.data.flat[i] = orig - step
        down = loss_fn().item()
        p.data.flat[i] = orig
        fd = (up - down) / (2 * step)
        an = grads[name].flat[i]
        err = abs(fd - an) / max(abs(fd), abs(an), floor)
        worst = max(worst, err)
        assert err < rel_tol, (
            f"gradient mismatch for {name}[{i}]: analytic={an:.8g} fd={fd:.8g} "
            f"rel_err={err:.3g}"
        )
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
