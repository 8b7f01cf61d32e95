import math

import numpy as np
import pytest

from airgap_ae.channels import Channel, rbf_apply, to_real
from airgap_ae.comm import PerfectTransport
from airgap_ae.feedback import (DIRECTIONS, FeedbackStreams, FeedbackSystem, LearnedTransport,
                                TrainingSource, evaluate_link_mse, evaluate_mse, ftx_forward, frx_forward,
                                loss_transport, main_loop, train_receiver, train_transmitter,
                                transmitter_gradient)
from airgap_ae.nn import ConfigurationError

from oracles import toy_policy_gradient, within_standard_errors


@pytest.fixture(scope="module")
def trained_awgn():
    fs = FeedbackSystem(4, "awgn", learning_rate=3e-3, seed=1)
    main_loop(fs, Channel("awgn", 10.0), n_outer=12, inner_steps=50, batch_size=2048, seed=1,
              final_learning_rate=3e-4)
    return fs


@pytest.mark.parametrize("kind, n", [("awgn", 4), ("rbf", 5)])
def test_training_mode_energy(kind, n, rng):
    fs = FeedbackSystem(n, kind, seed=0)
    X = ftx_forward(fs, "A", rng.uniform(0, 1, 1000), training=True)
    assert X.shape == (1000, n)
    assert np.mean(np.sum(np.abs(X) ** 2, axis=1) / n) == pytest.approx(1.0, abs=1e-12)


def test_identical_inputs_identical_rows():
    fs = FeedbackSystem(4, seed=0)
    for training in (False, True):
        X = ftx_forward(fs, "B", np.full(5, 0.25), training=training)
        assert np.all(X == X[0])


def test_inference_scale_is_frozen_and_positive(rng):
    fs = FeedbackSystem(4, seed=0)
    dev = fs.devices["A"]
    s0 = dev.frozen_scale()
    assert s0 > 0
    fs.encode("A", rng.uniform(0, 1, 10))
    assert dev.frozen_scale() == s0  # inference does not update it
    fs.encode("A", rng.uniform(0, 1, 10), training=True)
    assert dev.scale_updates == 1


def test_zero_receiver_outputs_bias(rng):
    fs = FeedbackSystem(4, seed=0)
    rx = fs.devices["B"].receiver
    rx.params[:] = 0
    rx.bias(1)[:] = 0.3
    np.testing.assert_allclose(frx_forward(fs, "B", rng.standard_normal((6, 4)) + 0j), 0.3)


def test_untrained_zero_receiver_mse_is_one_third():
    fs = FeedbackSystem(4, seed=0)
    fs.devices["B"].receiver.params[:] = 0
    fs.devices["B"].rx_opt.learning_rate = 0.0
    mse = train_receiver(fs, "AB", Channel("awgn", 10.0), 200_000, FeedbackStreams(0))
    assert mse == pytest.approx(1 / 3, rel=0.01)


@pytest.mark.parametrize("kind", ["awgn", "rbf"])
def test_decoder_finite_for_large_inputs(kind, rng):
    fs = FeedbackSystem(4, kind, seed=0)
    Y = 1e3 * (rng.standard_normal((20, 4)) + 1j * rng.standard_normal((20, 4)))
    assert np.all(np.isfinite(fs.decode("B", Y)))


def test_shared_source_synchrony():
    a, b = TrainingSource(11), TrainingSource(11)
    for step in (1, 2, 50):
        assert a.draw(step, 100).tobytes() == b.draw(step, 100).tobytes()
    assert not np.array_equal(a.draw(1, 100), a.draw(2, 100))
    fs = FeedbackSystem(4, seed=11)
    assert fs.devices["A"].source.draw(3, 10).tobytes() == fs.devices["B"].source.draw(3, 10).tobytes()


def test_receiver_step_improves_regenerated_batch():
    fs = FeedbackSystem(4, seed=2)
    ch = Channel("awgn", 10.0)
    fs.devices["B"].rx_opt.learning_rate = 1e-2
    streams = FeedbackStreams(5)
    tx_before = {d: fs.devices[d].transmitter.params.copy() for d in "AB"}
    rx_a = fs.devices["A"].receiver.params.copy()

    def batch_mse():
        # the regenerated batch of the next step, through a fixed channel draw
        r = fs.devices["A"].source.draw(streams.step + 1, 2048)
        X = fs._tx_train(fs.devices["A"], r)[0]
        Y = ch.transmit(X, np.random.default_rng(0))
        return np.mean((fs.decode("B", Y) - r) ** 2)

    before = batch_mse()
    train_receiver(fs, "AB", ch, 2048, FeedbackStreams(5))
    assert batch_mse() < before
    for d in "AB":
        assert fs.devices[d].transmitter.params.tobytes() == tx_before[d].tobytes()
    assert fs.devices["A"].receiver.params.tobytes() == rx_a.tobytes()


def test_transmitter_step_updates_only_sender():
    fs = FeedbackSystem(4, seed=2)
    before = {(d, k): getattr(fs.devices[d], k).params.copy() for d in "AB" for k in ("transmitter", "receiver")}
    train_transmitter(fs, "AB", Channel("awgn", 10.0), 256, FeedbackStreams(1))
    for (d, k), p in before.items():
        changed = getattr(fs.devices[d], k).params.tobytes() != p.tobytes()
        assert changed == ((d, k) == ("A", "transmitter"))


def test_zero_returned_losses_leave_transmitter_unchanged():
    fs = FeedbackSystem(4, seed=2)
    p = fs.devices["A"].transmitter.params.copy()
    zero = lambda losses, rng: np.zeros_like(losses)  # noqa: E731
    train_transmitter(fs, "AB", Channel("awgn", 10.0), 256, FeedbackStreams(1), transport_back=zero)
    assert fs.devices["A"].transmitter.params.tobytes() == p.tobytes()


@pytest.mark.parametrize("sigma_f2", [0.02, 0.3, 0.9])
def test_scaled_perturbation_energy(sigma_f2, rng):
    fs = FeedbackSystem(4, sigma_f2=sigma_f2, seed=0)
    X = fs.encode("A", rng.uniform(0, 1, 200_000), training=True)
    a = math.sqrt(1 - sigma_f2)
    W = math.sqrt(sigma_f2 / 2) * (rng.standard_normal(X.shape) + 1j * rng.standard_normal(X.shape))
    X_p = a * X + W
    assert np.mean(np.abs(X_p) ** 2) == pytest.approx(1.0, rel=0.01)


def test_operating_point_accepted():
    fs = FeedbackSystem(4, sigma_f2=0.02, seed=0)
    grad, losses, returned = transmitter_gradient(fs, "BA", Channel("awgn", 10.0), 100_000, FeedbackStreams(0))
    assert grad.shape == fs.devices["B"].transmitter.params.shape and len(losses) == 100_000


@pytest.mark.parametrize("sigma_f2", [0.0, 1.0])
def test_perturbation_variance_range(sigma_f2):
    with pytest.raises(ConfigurationError):
        FeedbackSystem(4, sigma_f2=sigma_f2)


def test_feedback_toy_oracle_with_scaled_perturbation():
    # same toy as the message transmitter, with the policy x_p = a x + w
    from airgap_ae.channels import complex_normal, substream
    from airgap_ae.comm import policy_gradient_upstream

    sigma2, theta, target = 0.3, 0.4, 1.0
    a = math.sqrt(1 - sigma2)
    est = []
    for r in range(200):
        rng = substream(0, "toy-scaled", r)
        x = np.full((1000, 1), theta + 0j)
        x_p = a * x + complex_normal(rng, x.shape, sigma2)
        losses = np.abs(x_p[:, 0] - target) ** 2
        est.append(policy_gradient_upstream(losses, x_p, x, sigma2, scale=a)[:, 0].sum())
    # E[l] = (a theta - target)^2 + sigma2  =>  d/dtheta = 2 a (a theta - target)
    ok, _ = within_standard_errors(np.array(est), 2 * a * (a * theta - target))
    assert ok


def test_main_loop_log_deterministic():
    logs = []
    for _ in range(2):
        fs = FeedbackSystem(4, seed=3)
        _, log = main_loop(fs, Channel("awgn", 10.0), n_outer=2, inner_steps=3, batch_size=64, seed=3)
        logs.append(log)
    assert logs[0] == logs[1] and len(logs[0]) == 12


def test_trained_directions_reach_target(trained_awgn):
    ch = Channel("awgn", 10.0)
    mse = {d: evaluate_mse(trained_awgn, d, ch, 100_000, seed=4)[0] for d in DIRECTIONS}
    assert max(mse.values()) < 1e-2
    assert max(mse.values()) / min(mse.values()) < 3


def test_trained_mse_below_target_at_and_above_training_snr(trained_awgn):
    # the full 0 dB claim needs the desk budget and lives in the acceptance suite
    ch = Channel("awgn", 10.0)
    for snr in (10, 20):
        assert evaluate_mse(trained_awgn, "AB", ch.at_snr(snr), 50_000, seed=4)[0] < 1e-2


def test_loss_transport_shape_and_accuracy(trained_awgn, rng):
    losses = rng.uniform(0, 1, 5000)
    out = loss_transport(trained_awgn, "BA", losses, Channel("awgn", 10.0), rng)
    assert out.shape == losses.shape
    assert np.mean((out - losses) ** 2) < 1e-2


def test_learned_transport_clips_before_sending(trained_awgn, rng):
    t = LearnedTransport(trained_awgn, Channel("awgn", 30.0))
    out = t(np.array([5.0, -1.0, 0.5]), rng)
    assert abs(out[0] - 1.0) < 0.1 and abs(out[1]) < 0.1


def test_perfect_substitution_is_exact(rng):
    losses = rng.uniform(0, 1, 10)
    np.testing.assert_array_equal(PerfectTransport()(losses, rng), losses)


def test_loss_transport_rejects_out_of_range(trained_awgn, rng):
    with pytest.raises(ValueError):
        loss_transport(trained_awgn, "AB", np.array([1.5]), Channel("awgn", 10.0), rng)


def test_perfect_identity_and_constant_decoders():
    class Identity:
        def encode(self, r):
            return (100 * r)[:, None] + 0j

        def decode(self, Y):
            return np.clip(np.rint(Y[:, 0].real) / 100, 0, 1)

    class Half(Identity):
        def decode(self, Y):
            return np.full(len(Y), 0.5)

    ch = Channel("awgn", 60.0)
    mse, _ = evaluate_link_mse(Identity(), ch, 10_000)
    assert mse < 1e-4  # only the rounding to a 0.01 grid remains
    mse, half = evaluate_link_mse(Half(), ch, 200_000)
    assert abs(mse - 1 / 12) < 2 * half


def test_forced_true_gain_beats_unit_gain():
    fs = FeedbackSystem(5, "rbf", learning_rate=3e-3, seed=2)
    main_loop(fs, Channel("rbf", 20.0), n_outer=6, inner_steps=50, batch_size=2048, seed=2)
    rng = np.random.default_rng(9)
    r = rng.uniform(0, 1, 20_000)
    Y, h = rbf_apply(fs.encode("A", r), 0.001, rng)
    true = np.mean((fs.decode("B", Y, clip=True, gain=h) - r) ** 2)
    unit = np.mean((fs.decode("B", Y, clip=True, gain=1.0) - r) ** 2)
    assert true < unit

