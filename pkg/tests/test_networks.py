import numpy as np
import pytest

from gradcheck import rel_error
from ocrm import tensor as T
from ocrm.networks import (Adam, Decoder, Discriminator, Encoder, conv_out, decode, deconv_out,
                           discriminate, encode)
from ocrm.tensor import DimensionError, Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def images(rng, n, c=1):
    return Tensor(rng.random((n, c, 32, 32)).astype(np.float32))


def test_shape_chain_helpers():
    sizes = [32]
    for k, p in [(7, 3), (3, 1), (3, 1), (3, 1)]:
        sizes.append(conv_out(sizes[-1], k, 2, p))
    assert sizes == [32, 16, 8, 4, 2]
    back = [2]
    for k, p in [(3, 1), (3, 1), (3, 1), (7, 3)]:
        back.append(deconv_out(back[-1], k, 2, p, 1))
    assert back == [2, 4, 8, 16, 32]


def test_encoder_output_shape(rng):
    enc = Encoder(rng=rng)
    assert encode(enc, images(rng, 8)).shape == (8, 256)
    assert enc.proj is None


def test_encoder_projection_and_colour(rng):
    enc = Encoder(channels=3, k=2, rng=rng)
    assert encode(enc, images(rng, 4, 3)).shape == (4, 2)


def test_encoder_rejects_wrong_size(rng):
    enc = Encoder(rng=rng)
    with pytest.raises(DimensionError):
        enc(Tensor(np.zeros((2, 1, 28, 28), np.float32)))
    with pytest.raises(DimensionError):
        enc(Tensor(np.zeros((2, 3, 32, 32), np.float32)))


def test_encoder_zero_image_zero_gamma_finite(rng):
    enc = Encoder(rng=rng)
    for name, p in enc.parameters().items():
        if name.endswith("gamma"):
            p.data[:] = 0
    z = enc(Tensor(np.zeros((4, 1, 32, 32), np.float32)))
    assert np.all(np.isfinite(z.data))


def test_eval_mode_bitwise_deterministic(rng):
    enc, dec = Encoder(rng=rng), Decoder(rng=rng)
    x = images(rng, 3)
    enc.train()
    enc(x)  # move running statistics away from their initial values
    enc.eval()
    dec.eval()
    a = dec(enc(x)).data
    b = dec(enc(x)).data
    assert np.array_equal(a, b)


def test_decoder_shape_and_range(rng):
    dec = Decoder(rng=rng)
    z = Tensor((rng.standard_normal((8, 256)) * 50).astype(np.float32))
    out = decode(dec, z).data
    assert out.shape == (8, 1, 32, 32)
    assert np.all(out > 0) and np.all(out < 1)


def test_decoder_latent_mismatch(rng):
    with pytest.raises(DimensionError):
        Decoder(rng=rng)(Tensor(np.zeros((2, 10), np.float32)))


def test_round_trip_shape_and_range(rng):
    enc, dec = Encoder(channels=3, rng=rng), Decoder(channels=3, rng=rng)
    x = images(rng, 4, 3)
    out = dec(enc(x)).data
    assert out.shape == x.shape
    assert out.min() > 0 and out.max() < 1


def test_autoencoder_encoder_grad_finite_differences(rng):
    # fp64 networks; gradient of the reconstruction loss wrt the first conv weight
    enc = Encoder(rng=rng, dtype=np.float64)
    dec = Decoder(rng=rng, dtype=np.float64)
    x = Tensor(rng.random((4, 1, 32, 32)))
    w = enc.conv0.weight

    def loss_value(wdata):
        saved = w.data
        w.data = wdata
        try:
            return float(T.mse(dec(enc(x)), x).data)
        finally:
            w.data = saved

    loss = T.mse(dec(enc(x)), x)
    T.backward(loss)
    # check a random subset of coordinates to keep runtime small
    idx = [tuple(rng.integers(0, s) for s in w.shape) for _ in range(6)]
    analytic = np.array([w.grad[i] for i in idx])
    numeric = []
    for i in idx:
        plus, minus = w.data.copy(), w.data.copy()
        plus[i] += 1e-5
        minus[i] -= 1e-5
        numeric.append((loss_value(plus) - loss_value(minus)) / 2e-5)
    assert rel_error(analytic, np.array(numeric)) < 1e-4


def test_discriminator_zero_weights_half(rng):
    disc = Discriminator(512, rng)
    for p in disc.parameters().values():
        p.data[:] = 0
    v = Tensor(rng.standard_normal((16, 512)).astype(np.float32))
    out = discriminate(disc, v).data
    assert out.shape == (16, 1)
    np.testing.assert_array_equal(out, 0.5)


def test_discriminator_range_repeatable_and_bounded(rng):
    disc = Discriminator(8, rng).eval()
    v = Tensor((rng.uniform(-1e3, 1e3, (32, 8))).astype(np.float32))
    a = disc(v).data
    assert np.array_equal(a, disc(v).data)
    assert np.all(np.isfinite(a)) and np.all((a >= 0) & (a <= 1))


def test_discriminator_dim_mismatch(rng):
    with pytest.raises(DimensionError):
        Discriminator(512, rng)(Tensor(np.zeros((2, 256), np.float32)))


def test_init_scale(rng):
    enc = Encoder(rng=rng)
    w = enc.conv1.weight.data
    assert abs(w.std() - np.sqrt(2.0 / (64 * 9))) < 0.005
    assert np.all(enc.conv1.bias.data == 0)
    assert np.all(enc.bn0.gamma.data == 1) and np.all(enc.bn0.beta.data == 0)


def test_state_dict_round_trip(rng):
    a, b = Encoder(rng=rng), Encoder(rng=np.random.default_rng(5))
    a.train()
    a(images(rng, 4))
    b.load_state_dict(a.state_dict())
    a.eval()
    b.eval()
    x = images(rng, 2)
    assert np.array_equal(a(x).data, b(x).data)


def test_state_dict_missing_key(rng):
    enc = Encoder(rng=rng)
    state = enc.state_dict()
    state.pop("conv0.weight")
    with pytest.raises(KeyError):
        enc.load_state_dict(state)


def test_adam_minimises_quadratic():
    w = Tensor(np.array([3.0, -2.0]), requires_grad=True)
    opt = Adam({"w": w}, lr=0.1)
    for _ in range(300):
        opt.zero_grad()
        T.backward(T.sum(T.square(w)))
        opt.step()
    assert np.abs(w.data).max() < 1e-2


def test_adam_first_step_is_lr_times_sign():
    # bias correction makes the first update exactly lr * g / (|g| + eps)
    w = Tensor(np.array([1.0, -1.0]), requires_grad=True)
    opt = Adam({"w": w}, lr=0.01)
    w.grad = np.array([4.0, -0.5])
    opt.step()
    np.testing.assert_allclose(w.data, [0.99, -0.99], rtol=1e-6)

