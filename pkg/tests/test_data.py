import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays, array_shapes

from flowscreen.data import (CP_WEIGHTS, ContractError, FormatError, control_pool, cp2rgb, estimate_train_flops,
                             make_screen, read_tensor, sample_dataset, sample_screen, tensor_bytes,
                             tensor_from_bytes, write_tensor)


def test_screen_mean_converges():
    spec = make_screen(3, 5, 3, seed=1)
    rng = np.random.default_rng(0)
    for p, e in [(2, 1), (4, 2), (0, 0)]:
        x = sample_screen(spec, p, e, 10_000, rng)
        assert np.all(np.abs(x.mean(0) - spec.mean(p, e)) < 0.05)


def test_control_in_neutral_context():
    spec = make_screen(2, 4, 3, sigma=0.7, seed=2)
    x = sample_screen(spec, 0, 0, 20_000, np.random.default_rng(0))
    assert np.all(np.abs(x.mean(0)) < 0.03)
    np.testing.assert_allclose(x.std(0), 0.7, rtol=0.03)


def test_true_embedding_recovered_from_contexts():
    spec = make_screen(2, 4, 3, seed=3)
    rng = np.random.default_rng(0)
    for p in range(4):
        for e in range(3):
            m = sample_screen(spec, p, e, 20_000, rng).mean(0)
            np.testing.assert_allclose((m - spec.offsets[e]) / spec.scales[e], spec.mu[p], atol=0.05)


def test_invalid_ids():
    spec = make_screen(2, 3, 2, seed=0)
    with pytest.raises(ContractError):
        sample_screen(spec, 3, 0, 5, np.random.default_rng(0))
    with pytest.raises(ContractError):
        sample_screen(spec, 0, -1, 5, np.random.default_rng(0))
    with pytest.raises(ContractError):
        make_screen(2, 3, 2, holdout=(0,))


def test_dataset_and_pool_layout():
    spec = make_screen(2, 4, 2, seed=0)
    d = sample_dataset(spec, [1, 3], 7, np.random.default_rng(0))
    assert len(d) == 28 and set(d.perturbation.tolist()) == {1, 3}
    pool = control_pool(spec, 5, np.random.default_rng(0))
    assert sorted(pool) == [0, 1] and pool[1].shape == (5, 2)


def test_phi_kinds():
    inf = make_screen(3, 4, 1, phi_noise=0.0, seed=0)
    np.testing.assert_array_equal(inf.phi, inf.mu)
    rnd = make_screen(3, 4, 1, phi_kind="random", seed=0)
    assert not np.allclose(rnd.phi, rnd.mu)
    with pytest.raises(ContractError):
        make_screen(3, 4, 1, phi_kind="learned")


@pytest.mark.parametrize("channel, rgb", [(0, (0, 0, 1)), (1, (0, 1, 0)), (2, (1, 0, 0)), (3, (0, 0.5, 0.5)),
                                          (4, (0.5, 0, 0.5)), (5, (0.5, 0.5, 0))])
def test_cp2rgb_indicators(channel, rgb):
    img = np.zeros((1, 6, 2, 2))
    img[0, channel] = 1.0
    out = cp2rgb(img)
    assert out.shape == (1, 3, 2, 2)
    assert np.array_equal(out[0, :, 0, 0], np.array(rgb, dtype=float))


def test_cp2rgb_all_ones():
    np.testing.assert_array_equal(cp2rgb(np.ones((2, 6, 3, 3))), 2.0)


def test_cp2rgb_channel_count():
    with pytest.raises(ContractError):
        cp2rgb(np.zeros((1, 5, 2, 2)))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (2, 6, 2, 2), elements=st.floats(-4, 4)),
       arrays(np.float64, (2, 6, 2, 2), elements=st.floats(-4, 4)), st.floats(-3, 3))
def test_cp2rgb_is_linear(a, b, s):
    np.testing.assert_allclose(cp2rgb(a + s * b), cp2rgb(a) + s * cp2rgb(b), atol=1e-12)


def test_weights_column_sums():
    np.testing.assert_array_equal(CP_WEIGHTS.sum(0), [2.0, 2.0, 2.0])


def test_flop_estimates():
    assert estimate_train_flops(50e9, 128, 50_000) == pytest.approx(0.96, rel=1e-12)
    assert estimate_train_flops(200e9, 256, 25_000) == pytest.approx(3.84, rel=1e-12)
    assert estimate_train_flops(50e9, 128, 0) == 0
    with pytest.raises(ContractError):
        estimate_train_flops(-1, 1, 1)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, array_shapes(min_dims=0, max_dims=4, max_side=4),
              elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_tensor_round_trip(t):
    back = tensor_from_bytes(tensor_bytes(t))
    assert back.shape == t.shape and back.tobytes() == t.tobytes()


def test_rank_zero_file(tmp_path):
    write_tensor(tmp_path / "s.flt", np.array(2.5))
    assert read_tensor(tmp_path / "s.flt").shape == ()


def test_truncated_payload_reports_offset():
    raw = tensor_bytes(np.arange(6.0).reshape(2, 3))
    with pytest.raises(FormatError) as info:
        tensor_from_bytes(raw[:-3])
    assert info.value.offset == len(raw) - 3
    with pytest.raises(FormatError) as info:
        tensor_from_bytes(raw[:10])
    assert info.value.offset == 10
    with pytest.raises(FormatError) as info:
        tensor_from_bytes(b"XXXX" + raw[4:])
    assert info.value.offset == 0


def test_non_finite_refused():
    with pytest.raises(ContractError):
        tensor_bytes(np.array([1.0, np.nan]))
