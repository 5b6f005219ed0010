import numpy as np
import pytest

from arcodec.errors import ConfigurationError, FormatError, InputError
from arcodec.model import (BETA_MIN, Gdn1Params, ModelConfig, ParameterStore,
                           analysis_backward, analysis_forward, analysis_train,
                           content_hash, conv2d_backward, conv2d_forward,
                           conv2d_train, gdn1_backward, gdn1_forward,
                           gdn1_train, igdn1_backward, igdn1_forward,
                           igdn1_train, init_parameters, load_store,
                           save_store, synthesis_backward, synthesis_forward,
                           synthesis_train, tconv2d_backward, tconv2d_forward,
                           tconv2d_train, transform_param_shapes)

from conftest import check_grad


# -- configuration ----------------------------------------------------------


def test_config_defaults():
    c = ModelConfig()
    assert c.width_n == 128
    assert c.hidden_layers_m == 2
    assert c.num_layers == 4
    assert c.downscale == 16


def test_config_latent_geometry():
    c = ModelConfig(width_n=128, hidden_layers_m=1, input_size=64)
    assert c.downscale == 8
    assert c.latent_spatial(64, 64) == (8, 8)
    c2 = ModelConfig(width_n=256, hidden_layers_m=2, input_size=512)
    assert c2.latent_spatial(512, 512) == (32, 32)


def test_config_rejects_indivisible_size():
    with pytest.raises(ConfigurationError):
        ModelConfig(width_n=32, hidden_layers_m=2, input_size=100)
    c = ModelConfig(width_n=32, hidden_layers_m=2, input_size=512)
    with pytest.raises(InputError):
        c.latent_spatial(100, 512)


def test_config_round_trips_through_dict():
    c = ModelConfig(width_n=64, hidden_layers_m=3, input_size=256)
    assert ModelConfig.from_dict(c.to_dict()) == c


# -- GDN1 hand examples ------------------------------------------------------


def test_gdn1_scalar_example():
    p = Gdn1Params(beta_raw=np.array([0.5]), gamma_raw=np.array([[0.5]]))
    x = np.ones((1, 1, 1, 1))
    y = gdn1_forward(x, p)
    assert y[0, 0, 0, 0] == pytest.approx(1.0 / (0.5 + 0.5 * 1.0))


def test_igdn1_scalar_example():
    p = Gdn1Params(beta_raw=np.array([1.0]), gamma_raw=np.array([[0.25]]))
    x = np.full((1, 1, 1, 1), 2.0)
    y = igdn1_forward(x, p)
    assert y[0, 0, 0, 0] == pytest.approx(2.0 * (1.0 + 0.25 * 2.0))


def test_gdn1_cross_channel_mixing(rng):
    beta = rng.uniform(0.5, 1.5, size=3)
    gamma = rng.uniform(0.0, 0.3, size=(3, 3))
    p = Gdn1Params(beta_raw=beta, gamma_raw=gamma)
    x = rng.normal(size=(2, 3, 4, 4))
    y = gdn1_forward(x, p)
    i, h, w = 1, 2, 3
    denom = beta[i] + sum(gamma[i, j] * abs(x[0, j, h, w]) for j in range(3))
    assert y[0, i, h, w] == pytest.approx(x[0, i, h, w] / denom)


def test_gdn1_gamma_zero_pairs_with_igdn1(rng):
    beta = rng.uniform(0.5, 2.0, size=4)
    p = Gdn1Params(beta_raw=beta, gamma_raw=np.zeros((4, 4)))
    x = rng.normal(size=(1, 4, 5, 5))
    back = igdn1_forward(gdn1_forward(x, p), p)
    assert np.allclose(back, x, atol=1e-6)


def test_gdn1_beta_floor():
    p = Gdn1Params(beta_raw=np.array([0.0]), gamma_raw=np.array([[0.0]]))
    x = np.ones((1, 1, 1, 1))
    y = gdn1_forward(x, p)
    assert y[0, 0, 0, 0] == pytest.approx(1.0 / BETA_MIN)


def test_gdn1_channel_mismatch():
    p = Gdn1Params(beta_raw=np.ones(2), gamma_raw=np.zeros((2, 2)))
    with pytest.raises(ConfigurationError):
        gdn1_forward(np.ones((1, 3, 2, 2)), p)


# -- convolution geometry -----------------------------------------------------


def test_conv_downsamples_by_two(rng):
    x = rng.normal(size=(2, 3, 16, 16))
    w = rng.normal(size=(8, 3, 5, 5)) * 0.1
    b = np.zeros(8)
    y = conv2d_forward(x, w, b)
    assert y.shape == (2, 8, 8, 8)


def test_tconv_upsamples_by_two(rng):
    x = rng.normal(size=(2, 8, 8, 8))
    w = rng.normal(size=(3, 8, 5, 5)) * 0.1
    b = np.zeros(3)
    y = tconv2d_forward(x, w, b)
    assert y.shape == (2, 3, 16, 16)


def test_tconv_is_conv_adjoint(rng):
    # <conv(x), y> == <x, tconv(y)> for zero-bias maps with tied weights.
    x = rng.normal(size=(1, 3, 8, 8))
    y = rng.normal(size=(1, 4, 4, 4))
    w = rng.normal(size=(4, 3, 5, 5))
    lhs = float((conv2d_forward(x, w, np.zeros(4)) * y).sum())
    rhs = float((x * tconv2d_forward(y, w.transpose(1, 0, 2, 3),
                                     np.zeros(3))).sum())
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_analysis_latent_shapes():
    for n, m, size in ((128, 1, 64), (16, 2, 32)):
        config = ModelConfig(width_n=n, hidden_layers_m=m, input_size=size)
        params = init_parameters(config, seed=0)
        x = np.random.default_rng(1).uniform(size=(3, size, size))
        y = analysis_forward(x, params, config)
        hh, ww = config.latent_spatial(size, size)
        assert y.shape == (n, hh, ww)
        xr = synthesis_forward(y, params, config)
        assert xr.shape == (3, size, size)


def test_large_geometry_single_pass():
    config = ModelConfig(width_n=256, hidden_layers_m=2, input_size=512)
    params = init_parameters(config, seed=0)
    x = np.zeros((3, 512, 512))
    y = analysis_forward(x, params, config)
    assert y.shape == (256, 32, 32)


def test_zero_image_maps_to_zero_latent():
    config = ModelConfig(width_n=8, hidden_layers_m=1, input_size=16)
    params = init_parameters(config, seed=3)
    y = analysis_forward(np.zeros((3, 16, 16)), params, config)
    assert np.all(y == 0.0)


def test_analysis_rejects_out_of_range():
    config = ModelConfig(width_n=8, hidden_layers_m=1, input_size=16)
    params = init_parameters(config, seed=0)
    with pytest.raises(InputError):
        analysis_forward(np.full((3, 16, 16), 1.5), params, config)


def test_forward_is_deterministic():
    config = ModelConfig(width_n=8, hidden_layers_m=1, input_size=16)
    params = init_parameters(config, seed=5)
    x = np.random.default_rng(2).uniform(size=(3, 16, 16))
    a = analysis_forward(x, params, config)
    b = analysis_forward(x, params, config)
    assert np.array_equal(a, b)


def test_init_is_deterministic():
    a = init_parameters(ModelConfig(width_n=8, hidden_layers_m=1,
                                    input_size=16), seed=9)
    b = init_parameters(ModelConfig(width_n=8, hidden_layers_m=1,
                                    input_size=16), seed=9)
    assert a.equals(b)
    c = init_parameters(ModelConfig(width_n=8, hidden_layers_m=1,
                                    input_size=16), seed=10)
    assert not a.equals(c)


def test_init_matches_declared_shapes():
    config = ModelConfig(width_n=8, hidden_layers_m=2, input_size=32)
    params = init_parameters(config, seed=0)
    shapes = transform_param_shapes(config)
    assert set(params.names()) == set(shapes)
    for name, shape in shapes.items():
        assert params[name].shape == shape


# -- gradients ----------------------------------------------------------------


def test_conv_gradients(rng):
    x = rng.normal(size=(2, 3, 8, 8))
    w = rng.normal(size=(4, 3, 5, 5)) * 0.2
    b = rng.normal(size=4) * 0.1
    proj = rng.normal(size=(2, 4, 4, 4))

    def f():
        return float((conv2d_forward(x, w, b) * proj).sum())

    _, cache = conv2d_train(x, w, b)
    dx, dw, db = conv2d_backward(proj, cache)
    check_grad(f, x, dx, rng)
    check_grad(f, w, dw, rng)
    check_grad(f, b, db, rng)


def test_tconv_gradients(rng):
    x = rng.normal(size=(2, 4, 4, 4))
    w = rng.normal(size=(3, 4, 5, 5)) * 0.2
    b = rng.normal(size=3) * 0.1
    proj = rng.normal(size=(2, 3, 8, 8))

    def f():
        return float((tconv2d_forward(x, w, b) * proj).sum())

    _, cache = tconv2d_train(x, w, b)
    dx, dw, db = tconv2d_backward(proj, cache)
    check_grad(f, x, dx, rng)
    check_grad(f, w, dw, rng)
    check_grad(f, b, db, rng)


@pytest.mark.parametrize("train,backward,forward", [
    (gdn1_train, gdn1_backward, gdn1_forward),
    (igdn1_train, igdn1_backward, igdn1_forward),
])
def test_gdn_gradients(rng, train, backward, forward):
    beta = rng.uniform(0.5, 1.5, size=3)
    gamma = rng.uniform(0.05, 0.3, size=(3, 3))
    x = rng.normal(size=(2, 3, 4, 4)) + 0.1
    proj = rng.normal(size=(2, 3, 4, 4))
    p = Gdn1Params(beta_raw=beta, gamma_raw=gamma)

    def f():
        return float((forward(x, Gdn1Params(beta_raw=beta, gamma_raw=gamma))
                      * proj).sum())

    _, cache = train(x, p)
    dx, dbeta, dgamma = backward(proj, cache)
    check_grad(f, x, dx, rng)
    check_grad(f, beta, dbeta, rng)
    check_grad(f, gamma, dgamma, rng)


def test_transform_chain_gradients(rng):
    config = ModelConfig(width_n=4, hidden_layers_m=1, input_size=16)
    params = init_parameters(config, seed=1)
    # keep the piecewise-linear reparameterizations off their kinks
    for name in params.names():
        if name.endswith(".gamma") or name.endswith(".beta"):
            params[name] = params[name] + rng.uniform(0.01, 0.02,
                                                      size=params[name].shape)
    x = rng.uniform(0.1, 0.9, size=(2, 3, 16, 16))
    proj_y = rng.normal(size=(2, 4, 2, 2))

    def f_enc():
        return float((analysis_forward(x, params, config) * proj_y).sum())

    grads = {}
    _, caches = analysis_train(x, params, config)
    analysis_backward(proj_y, caches, grads)
    for name in ("enc0.w", "enc1.w", "enc0.gdn.beta", "enc1.gdn.gamma"):
        check_grad(f_enc, params[name], grads[name], rng, samples=4)

    y = rng.normal(size=(2, 4, 2, 2))
    proj_x = rng.normal(size=(2, 3, 16, 16))

    def f_dec():
        return float((synthesis_forward(y, params, config, clamp=False)
                      * proj_x).sum())

    grads = {}
    _, caches = synthesis_train(y, params, config)
    synthesis_backward(proj_x, caches, grads)
    for name in ("dec0.w", "dec1.w", "dec0.igdn.beta", "dec1.igdn.gamma"):
        check_grad(f_dec, params[name], grads[name], rng, samples=4)


# -- parameter container ------------------------------------------------------


def test_store_missing_key():
    store = ParameterStore()
    with pytest.raises(ConfigurationError):
        store["nope"]


def test_store_round_trip(tmp_path):
    config = ModelConfig(width_n=8, hidden_layers_m=1, input_size=16)
    store = init_parameters(config, seed=4)
    meta = {"epoch": 3}
    path = tmp_path / "weights.arcw"
    h = save_store(path, store, config, meta)
    loaded, config2, meta2 = load_store(path)
    assert config2 == config
    assert meta2["epoch"] == 3
    assert loaded.equals(store)
    assert content_hash(config2, loaded) == h


def test_store_detects_corruption(tmp_path):
    config = ModelConfig(width_n=8, hidden_layers_m=1, input_size=16)
    store = init_parameters(config, seed=4)
    path = tmp_path / "weights.arcw"
    save_store(path, store, config, {})
    raw = bytearray(path.read_bytes())
    raw[-5] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        load_store(path)


def test_store_rejects_bad_magic(tmp_path):
    path = tmp_path / "weights.arcw"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(FormatError):
        load_store(path)


def test_hash_ignores_optimizer_state():
    config = ModelConfig(width_n=8, hidden_layers_m=1, input_size=16)
    store = init_parameters(config, seed=4)
    h0 = content_hash(config, store)
    store["opt.m.enc0.w"] = np.ones(3)
    assert content_hash(config, store) == h0
    store["enc0.b"] = store["enc0.b"] + 1e-9
    assert content_hash(config, store) != h0
