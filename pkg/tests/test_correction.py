import numpy as np
import pytest

from wavetomo.acquisition import acquire
from wavetomo.born import born_predict
from wavetomo.correction import (apply_data_correction, apply_direct, apply_image_net, identity_data_correction,
                                 reconstruct_variant, train_artifact_correction, train_data_correction,
                                 train_direct_inverter)
from wavetomo.inversion import InversionConfig
from wavetomo.nn import TrainConfig

BORN = InversionConfig("born", n_iterations=15, seed=1)


def _phantoms(system, count, seed=0):
    rng = np.random.default_rng(seed)
    n = system.grid.n_fov
    y, x = np.mgrid[:n, :n] - (n - 1) / 2
    out = []
    for _ in range(count):
        cy, cx = rng.uniform(-3, 3, 2)
        amp = rng.uniform(-0.04, 0.04)
        out.append(1.5 * (1 + amp * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / 18.0)))
    return out


def test_identity_data_correction_is_noop(system, born_op):
    sos = _phantoms(system, 1)[0]
    data = acquire(sos, system, 20.0, seed=0).data
    psi = identity_data_correction()
    out = apply_data_correction(psi, data, born_op.cache.traces)
    # only the (d - incident) + incident round trip separates the two
    np.testing.assert_allclose(out, data, rtol=0, atol=1e-15 * np.abs(data).max())
    plain = reconstruct_variant("uncorrected", data, {}, system, BORN, operator=born_op)
    corrected = reconstruct_variant("data", data, {"data": psi}, system, BORN, operator=born_op)
    np.testing.assert_allclose(plain, corrected, rtol=0, atol=1e-9)


def test_missing_and_unknown_models(system, born_op):
    data = born_op.cache.traces
    with pytest.raises(KeyError):
        reconstruct_variant("dual", data, {"data": identity_data_correction()}, system, BORN, operator=born_op)
    with pytest.raises(ValueError):
        reconstruct_variant("magic", data, {}, system, BORN, operator=born_op)


def test_data_correction_training_reduces_mismatch(system, born_op):
    sos = _phantoms(system, 6, seed=1)
    wave = [acquire(s, system, np.inf, seed=0).data for s in sos]
    born = [born_predict(s, system, born_op.cache) for s in sos]
    psi = train_data_correction(wave, born, born_op.cache.traces,
                                TrainConfig(epochs=20, batch_size=4, learning_rate=2e-3, val_fraction=0.0), width=4,
                                levels=1)
    assert psi.log.train_loss[-1] < psi.log.train_loss[0]
    before = sum(np.sum((w - b) ** 2) for w, b in zip(wave, born))
    after = sum(np.sum((apply_data_correction(psi, w, born_op.cache.traces) - b) ** 2) for w, b in zip(wave, born))
    assert after < 0.5 * before


def test_artifact_correction_learns_offset():
    rng = np.random.default_rng(0)
    truths = [1.5 + 0.02 * rng.standard_normal((8, 8)) for _ in range(12)]
    recons = [t - 0.03 for t in truths]
    phi = train_artifact_correction(recons, truths, TrainConfig(epochs=60, batch_size=4, learning_rate=3e-3),
                                    width=4, levels=1)
    err = np.mean([np.abs(apply_image_net(phi, r) - t).mean() for r, t in zip(recons, truths)])
    assert err < 0.015


def test_direct_inverter_memorizes(system, born_op):
    sos = _phantoms(system, 4, seed=2)
    data = [born_predict(s, system, born_op.cache) for s in sos]
    theta = train_direct_inverter(data, sos, born_op.cache.traces, system,
                                  TrainConfig(epochs=150, batch_size=2, learning_rate=2e-3, val_fraction=0.0),
                                  width=4)
    start = np.mean([np.abs(s - 1.5).mean() for s in sos])
    err = np.mean([np.abs(apply_direct(theta, d, born_op.cache.traces) - s).mean() for d, s in zip(data, sos)])
    assert err < 0.5 * start
    out = reconstruct_variant("direct", data[0], {"direct": theta}, system, BORN, operator=born_op)
    assert out.shape == sos[0].shape


def test_training_input_validation(born_op):
    with pytest.raises(ValueError):
        train_data_correction([], [], born_op.cache.traces, TrainConfig())
    with pytest.raises(ValueError):
        train_artifact_correction([np.ones((4, 4))], [], TrainConfig())
