import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from derlab import autodiff as ad
from derlab import network as nn
from derlab.autodiff import Tape

ARCH = nn.Architecture(hidden=((64, "tanh"), (64, "tanh")))


def plain_forward(params, x):
    """Independent scalar re-implementation used as an oracle."""
    h = [x]
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        out = [sum(h[i] * w[i, j] for i in range(len(h))) + b[j] for j in range(w.shape[1])]
        if k < len(params.weights) - 1:
            act = params.arch.hidden[k][1]
            out = [math.tanh(v) if act == "tanh" else max(v, 0.0) for v in out]
        h = out
    return h


def test_parameter_count():
    assert ARCH.n_params == 1 * 64 + 64 + 64 * 64 + 64 + 64 * 4 + 4 == 4548
    assert nn.init(ARCH, 0).flatten().size == 4548


def test_init_deterministic_and_seed_dependent():
    assert nn.init(ARCH, 5) == nn.init(ARCH, 5)
    assert nn.init(ARCH, 5) != nn.init(ARCH, 6)


def test_init_within_glorot_bounds():
    p = nn.init(ARCH, 1)
    for (fan_in, fan_out), w, b in zip(ARCH.layer_shapes, p.weights, p.biases):
        assert np.abs(w).max() <= math.sqrt(6.0 / (fan_in + fan_out))
        assert not b.any()


def test_zero_parameters_give_zero_theta():
    p = nn.init(ARCH, 0).with_flat(np.zeros(ARCH.n_params))
    theta = nn.forward(p, [0.3, -2.0], Tape())
    for t in theta:
        assert np.all(t.value == 0.0)


def test_single_linear_layer_identity():
    arch = nn.Architecture(hidden=())
    w = np.array([[1.5, -2.0, 0.25, 3.0]])
    b = np.array([0.1, 0.2, -0.3, 0.4])
    p = nn.Parameters(arch, [w], [b])
    theta = nn.forward(p, 2.0, Tape())
    assert [float(t.value[0]) for t in theta] == pytest.approx(list(w[0] * 2.0 + b), abs=0)


@pytest.mark.parametrize("act", ["tanh", "relu"])
def test_forward_matches_plain_oracle(act):
    arch = nn.Architecture(hidden=((16, act), (8, act)))
    p = nn.init(arch, 11).with_flat(np.random.default_rng(3).normal(size=arch.n_params) * 0.5)
    theta = nn.forward(p, 0.3, Tape())
    got = [float(t.value[0]) for t in theta]
    assert np.max(np.abs(np.array(got) - plain_forward(p, 0.3))) < 1e-12
    assert np.max(np.abs(nn.predict(p, 0.3)[0] - got)) < 1e-12


def test_forward_gradient_matches_fd():
    arch = nn.Architecture(hidden=((5, "tanh"), (4, "tanh")))
    p = nn.init(arch, 2)
    x = np.linspace(-1, 1, 7)

    def fn(tape, *leaves):
        th = nn.forward(p, x, tape, leaves=list(leaves))
        return ad.mean(th[0] * th[1] + ad.softplus(th[2]) - th[3])

    assert ad.finite_difference_check(fn, p.arrays()) < 1e-7


def test_with_flat_round_trip_and_length_check():
    p = nn.init(ARCH, 4)
    assert p.with_flat(p.flatten()) == p
    with pytest.raises(ValueError):
        p.with_flat(np.zeros(3))


def test_evidential_head_examples():
    m = nn.evidential_head([0.0, 0.0, 0.0, 0.0])
    log2 = math.log(2.0)
    assert (m.gamma, m.nu, m.alpha, m.beta) == pytest.approx((0.0, log2, 1.0 + log2, log2), abs=1e-15)
    m = nn.evidential_head([2.0, 10.0, 10.0, 10.0])
    assert m.gamma == 2.0
    assert m.nu == pytest.approx(10.0000454, abs=1e-7)
    assert m.alpha == pytest.approx(11.0000454, abs=1e-7)
    assert m.beta == pytest.approx(10.0000454, abs=1e-7)


def test_evidential_head_nu_lower_limit():
    nus = [nn.evidential_head([0.0, t, 0.0, 0.0]).nu for t in (-5.0, -20.0, -40.0)]
    assert all(v > 0 for v in nus)
    assert nus[0] > nus[1] > nus[2]
    assert nus[2] < 1e-17


finite_theta = st.lists(st.floats(-50, 50), min_size=4, max_size=4)


@given(finite_theta)
def test_evidential_head_image(theta):
    m = nn.evidential_head(theta)
    assert m.nu > 0 and m.beta > 0 and m.alpha >= 1.0
    # 1 + softplus(t) rounds to exactly 1 once softplus(t) < 2**-53, i.e. t below about -36.7
    if theta[2] > -36.0:
        assert m.alpha > 1.0


def test_evidential_head_batch_form():
    theta = np.array([[0.0, 0.0, 0.0, 0.0], [2.0, 10.0, 10.0, 10.0]])
    m = nn.evidential_head(theta)
    assert m.nu.shape == (2,)
    assert m.alpha[1] == pytest.approx(11.0000454, abs=1e-7)


def test_gaussian_head_examples():
    g = nn.gaussian_head([1.0, 0.0, 123.0, 0.0])
    assert (g.gamma, g.nu, g.beta) == pytest.approx((1.0, math.log(2), math.log(2)))
    assert g.sigma_sq == pytest.approx(1.0, abs=1e-15)
    assert nn.gaussian_head([0.0, 5.0, 0.0, 5.0]).sigma_sq == 1.0


@given(finite_theta, st.floats(-50, 50))
def test_gaussian_head_ignores_theta3(theta, other):
    a = nn.gaussian_head(theta)
    b = nn.gaussian_head([theta[0], theta[1], other, theta[3]])
    assert (a.gamma, a.nu, a.beta) == (b.gamma, b.nu, b.beta)


def test_head_rejects_wrong_width():
    with pytest.raises(ValueError):
        nn.evidential_head([1.0, 2.0])


def test_architecture_validation():
    with pytest.raises(ValueError):
        nn.Architecture(output_dim=3)
    with pytest.raises(ValueError):
        nn.Architecture(hidden=((0, "tanh"),))
    with pytest.raises(ValueError):
        nn.Architecture(hidden=((4, "sigmoid"),))
    assert nn.Architecture.from_dict(ARCH.to_dict()) == ARCH


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    p = nn.init(nn.Architecture(hidden=((7, "relu"), (3, "tanh"))), 9)
    p = p.with_flat(p.flatten() * np.pi + 1e-300)
    path = tmp_path / "p.ckpt"
    nn.save_checkpoint(p, path)
    q = nn.load_checkpoint(path)
    assert q == p
    assert q.flatten().tobytes() == p.flatten().tobytes()


def test_checkpoint_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_text("hello\n")
    with pytest.raises(ValueError, match="not a derlab checkpoint"):
        nn.load_checkpoint(bad)
    p = nn.init(nn.Architecture(hidden=((2, "relu"),)), 0)
    nn.save_checkpoint(p, bad)
    bad.write_text("\n".join(bad.read_text().splitlines()[:-1]) + "\n")
    with pytest.raises(ValueError, match="count"):
        nn.load_checkpoint(bad)
