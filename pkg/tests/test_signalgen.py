"""Signal synthesis, preprocessing, dataset IO, and corpus statistics."""

import numpy as np
import pytest

from responet import lindyn, signalgen
from responet.signalgen import (
    DatasetFormatError,
    Signal,
    butterworth_bandpass,
    build_dataset,
    compute_stats,
    load_dataset,
    pga_rescale,
    resample,
    save_dataset,
    synth_ground_motion,
)


def sine(freq, dt=0.01, duration=20.0, amp=1.0):
    t = np.arange(int(duration / dt)) * dt
    return Signal(dt=dt, samples=amp * np.sin(2 * np.pi * freq * t))


# ---------------------------------------------------------------------------
# butterworth_bandpass


def _rms_amplitude(samples):
    # sampled peaks of a sine miss the true crest; RMS is phase-agnostic
    return np.sqrt(2.0 * np.mean(samples**2))


def test_passband_amplitude_preserved():
    sig = butterworth_bandpass(sine(10.0), 0.1, 24.9, order=4)
    interior = sig.samples[500:-500]  # trim filter transients
    assert _rms_amplitude(interior) == pytest.approx(1.0, rel=0.02)


def test_stopband_attenuated():
    sig = butterworth_bandpass(sine(40.0, dt=0.01), 0.1, 24.9, order=4)
    assert _rms_amplitude(sig.samples[500:-500]) < 0.05


def test_filter_zero_signal():
    sig = butterworth_bandpass(Signal(dt=0.01, samples=np.zeros(500)), 0.5, 10.0)
    assert np.all(sig.samples == 0.0)


def test_filter_band_validation():
    with pytest.raises(ValueError, match="Nyquist"):
        butterworth_bandpass(sine(1.0, dt=0.02), 0.1, 25.0)
    with pytest.raises(ValueError, match="Nyquist"):
        butterworth_bandpass(sine(1.0), 5.0, 2.0)


def test_filter_zero_phase():
    # cross-correlation peak between a band-interior sine and its filtered
    # version sits at zero lag (lags restricted to within half a period,
    # where the sine's correlation peak is unique)
    sig = sine(5.0, dt=0.01, duration=30.0)
    out = butterworth_bandpass(sig, 0.5, 15.0)
    a = sig.samples[1000:-1000]
    b = out.samples[1000:-1000]
    lags = np.arange(-8, 9)
    margin = 8
    corr = [np.dot(a[margin:-margin], b[margin + lag : len(b) - margin + lag]) for lag in lags]
    assert lags[np.argmax(corr)] == 0


# ---------------------------------------------------------------------------
# resample


def test_resample_identity():
    sig = sine(2.0, dt=0.02, duration=5.0)
    out = resample(sig, 0.02)
    np.testing.assert_array_equal(out.samples, sig.samples)


def test_resample_linear_ramp_exact():
    sig = Signal(dt=0.01, samples=0.3 * np.arange(601) * 0.01 + 0.1)
    out = resample(sig, 0.025)
    expected = 0.3 * out.times + 0.1
    np.testing.assert_allclose(out.samples, expected, rtol=0, atol=1e-14)
    assert out.times[-1] == pytest.approx(sig.duration, abs=1e-12)


def test_resample_sine_accuracy():
    t_fine = np.arange(2001) * 0.005
    sig = Signal(dt=0.005, samples=np.sin(2 * np.pi * 1.0 * t_fine))
    out = resample(sig, 0.02)
    exact = np.sin(2 * np.pi * 1.0 * out.times)
    assert np.abs(out.samples - exact).max() <= 2e-3


# ---------------------------------------------------------------------------
# pga_rescale


def test_pga_rescale_halves():
    sig = Signal(dt=0.01, samples=np.array([0.5, -0.25, 0.1]))
    out = pga_rescale(sig, 0.25)
    np.testing.assert_allclose(out.samples, [0.25, -0.125, 0.05], rtol=1e-15)


def test_pga_rescale_already_at_target():
    sig = Signal(dt=0.01, samples=np.array([0.2, -0.4, 0.1]))
    out = pga_rescale(sig, 0.4)
    np.testing.assert_allclose(out.samples, sig.samples, rtol=1e-15)


def test_pga_rescale_postcondition():
    rng = np.random.default_rng(1)
    sig = Signal(dt=0.01, samples=rng.standard_normal(333))
    out = pga_rescale(sig, 0.37)
    assert np.abs(out.samples).max() == pytest.approx(0.37, rel=1e-12)


def test_pga_rescale_zero_signal_error():
    with pytest.raises(ValueError, match="zero"):
        pga_rescale(Signal(dt=0.01, samples=np.zeros(8)), 1.0)


# ---------------------------------------------------------------------------
# synth_ground_motion


def test_synth_deterministic():
    a = synth_ground_motion(42, 10.0, 0.02, (0.3, 5.6), 0.4)
    b = synth_ground_motion(42, 10.0, 0.02, (0.3, 5.6), 0.4)
    np.testing.assert_array_equal(a.samples, b.samples)
    c = synth_ground_motion(43, 10.0, 0.02, (0.3, 5.6), 0.4)
    assert not np.array_equal(a.samples, c.samples)


def test_synth_pga():
    sig = synth_ground_motion(7, 10.0, 0.02, (0.3, 5.6), 0.35)
    assert np.abs(sig.samples).max() == pytest.approx(0.35, rel=1e-12)


def test_synth_spectrum_band_limited():
    sig = synth_ground_motion(3, 40.0, 0.02, (0.5, 8.0), 0.4)
    spec = np.abs(np.fft.rfft(sig.samples)) ** 2
    freqs = np.fft.rfftfreq(len(sig.samples), d=sig.dt)
    outside = (freqs < 0.25) | (freqs > 12.0)
    assert spec[outside].sum() / spec.sum() < 0.03


def test_synth_rejects_fractional_count():
    with pytest.raises(ValueError):
        synth_ground_motion(0, 10.01, 0.02, (0.3, 5.6), 0.4)


# ---------------------------------------------------------------------------
# build_dataset


@pytest.fixture(scope="module")
def chain_modes():
    k = (np.pi * 0.35 / np.sin(np.pi / 26)) ** 2
    system = lindyn.shear_chain(6, 1.0, k, ratios=0.05)
    return system, lindyn.modal_decompose(system, np.full(6, 0.05))


def test_build_dataset_empty(chain_modes):
    _, modes = chain_modes
    ds = build_dataset(modes, 0, [], "duhamel")
    assert len(ds) == 0


def test_build_dataset_outputs_start_at_zero(chain_modes):
    _, modes = chain_modes
    sigs = [synth_ground_motion(s, 4.0, 0.02, (0.5, 8.0), 0.4) for s in range(3)]
    ds = build_dataset(modes, 0, sigs, "duhamel")
    for out in ds.outputs:
        assert out.samples[0] == 0.0


def test_build_dataset_cross_solver(chain_modes):
    system, modes = chain_modes
    sigs = [synth_ground_motion(s, 10.0, 0.02, (0.3, 4.0), 0.4) for s in range(3)]
    ds_d = build_dataset(modes, 0, sigs, "duhamel")
    ds_n = build_dataset(system, 0, sigs, "newmark")
    for a, b in zip(ds_d.outputs, ds_n.outputs):
        rel = np.linalg.norm(a.samples - b.samples) / np.linalg.norm(b.samples)
        assert rel <= 5e-3


def test_build_dataset_mixed_dt_rejected(chain_modes):
    _, modes = chain_modes
    sigs = [
        synth_ground_motion(0, 4.0, 0.02, (0.5, 8.0), 0.4),
        synth_ground_motion(1, 4.0, 0.01, (0.5, 8.0), 0.4),
    ]
    with pytest.raises(ValueError, match="mixed"):
        build_dataset(modes, 0, sigs, "duhamel")


def test_build_dataset_pairing_reproducible(chain_modes):
    _, modes = chain_modes
    sigs = [synth_ground_motion(s, 4.0, 0.02, (0.5, 8.0), 0.4) for s in range(2)]
    ds = build_dataset(modes, 0, sigs, "duhamel")
    for u, x in zip(ds.inputs, ds.outputs):
        again = lindyn.duhamel_response(modes, 0, u)
        np.testing.assert_array_equal(again.samples, x.samples)


# ---------------------------------------------------------------------------
# compute_stats


def test_stats_single_constant_signal():
    stats = compute_stats([Signal(dt=0.01, samples=np.full(16, 0.7))])
    assert stats.pga.min == stats.pga.max == stats.pga.mean == pytest.approx(0.7)
    assert stats.pga.sd == 0.0


def test_stats_two_pga_values():
    a = Signal(dt=0.01, samples=np.array([0.1, -0.05]))
    b = Signal(dt=0.01, samples=np.array([0.3, 0.2]))
    stats = compute_stats([a, b])
    assert stats.pga.mean == pytest.approx(0.2)
    assert stats.pga.sd == pytest.approx(0.1)


def test_stats_energy_sum_of_squares():
    stats = compute_stats([Signal(dt=0.01, samples=np.array([1.0, -2.0, 3.0]))])
    assert stats.energy.mean == pytest.approx(14.0)


# ---------------------------------------------------------------------------
# dataset round trips


def _tiny_dataset(chain_modes, count=3, m_seconds=4.0):
    _, modes = chain_modes
    sigs = [synth_ground_motion(s, m_seconds, 0.02, (0.5, 8.0), 0.4) for s in range(count)]
    return build_dataset(modes, 0, sigs, "duhamel", meta={"seed": 0})


def test_dataset_round_trip(tmp_path, chain_modes):
    ds = _tiny_dataset(chain_modes)
    save_dataset(ds, tmp_path)
    loaded = load_dataset(tmp_path)
    assert loaded.dt == ds.dt and loaded.m == ds.m and len(loaded) == len(ds)
    for a, b in zip(loaded.inputs, ds.inputs):
        np.testing.assert_array_equal(a.samples, b.samples)
    for a, b in zip(loaded.outputs, ds.outputs):
        np.testing.assert_array_equal(a.samples, b.samples)


def test_dataset_truncated_rows(tmp_path, chain_modes):
    ds = _tiny_dataset(chain_modes)
    save_dataset(ds, tmp_path)
    path = tmp_path / "inputs.csv"
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(DatasetFormatError, match="length mismatch"):
        load_dataset(tmp_path)


def test_dataset_short_row(tmp_path, chain_modes):
    ds = _tiny_dataset(chain_modes)
    save_dataset(ds, tmp_path)
    path = tmp_path / "outputs.csv"
    lines = path.read_text().splitlines()
    lines[1] = ",".join(lines[1].split(",")[:-3])
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetFormatError, match="length mismatch"):
        load_dataset(tmp_path)


def test_dataset_nan_rejected(tmp_path, chain_modes):
    ds = _tiny_dataset(chain_modes)
    save_dataset(ds, tmp_path)
    path = tmp_path / "inputs.csv"
    text = path.read_text().splitlines()
    parts = text[0].split(",")
    parts[5] = "nan"
    text[0] = ",".join(parts)
    path.write_text("\n".join(text) + "\n")
    with pytest.raises(DatasetFormatError, match="non-finite"):
        load_dataset(tmp_path)


def test_dataset_malformed_meta(tmp_path, chain_modes):
    ds = _tiny_dataset(chain_modes)
    save_dataset(ds, tmp_path)
    (tmp_path / "meta").write_text("dt 0.02\ncount 3\n")  # missing m
    with pytest.raises(DatasetFormatError, match="malformed header"):
        load_dataset(tmp_path)


def test_dataset_trim_energy_diagnostic(tmp_path, chain_modes):
    ds = _tiny_dataset(chain_modes, m_seconds=8.0)
    save_dataset(ds, tmp_path)
    loaded = load_dataset(tmp_path, trim=(0.0, 4.0))
    assert loaded.m == 201
    retained = float(loaded.meta["trim_energy_retained"])
    assert 0.0 < retained < 1.0
    np.testing.assert_array_equal(loaded.inputs[0].samples, ds.inputs[0].samples[:201])
