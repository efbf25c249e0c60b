import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from edgeaudio import frontend as fe
from edgeaudio.errors import ConfigError, SignalTooShort, StateError, WavFormatError
from edgeaudio.synth import sine, tonal_bursts

NO_NR = fe.FrontendConfig(noise_reduction_enabled=False, pcan_enabled=False)


def naive_power(x, n_fft):
    n = np.arange(n_fft)
    k = np.arange(n_fft // 2 + 1)
    xp = np.zeros(n_fft)
    xp[:len(x)] = x
    basis = np.exp(-2j * np.pi * np.outer(k, n) / n_fft)
    return np.abs(basis @ xp) ** 2


@pytest.mark.parametrize("seconds,frames", [(5.0, 498), (1.0, 98), (0.025, 1), (4.99, 497)])
def test_frame_count(seconds, frames):
    assert fe.num_frames(int(round(seconds * 16000)), fe.FrontendConfig()) == frames


def test_five_seconds_gives_498_columns():
    spec = fe.compute_spectrogram(tonal_bursts(5.0, seed=0))
    assert spec.shape == (32, 498)
    assert spec.values.dtype == np.uint16


def test_power_spectrum_matches_naive_dft(rng):
    cfg = fe.FrontendConfig()
    for _ in range(20):
        frame = rng.integers(-32768, 32768, cfg.window_length).astype(np.int16)
        ours = fe.power_spectrum(frame, cfg)
        ref = naive_power(fe.apply_window(frame, cfg).astype(np.float64), cfg.fft_size)
        assert np.max(np.abs(ours - ref)) / np.max(ref) < 1e-9


def test_window_is_symmetric_kaiser():
    w = fe.window_coefficients(fe.FrontendConfig())
    assert len(w) == 400
    assert np.array_equal(w, w[::-1])
    assert w.max() <= 4096


def test_mel_filters_cover_band_and_peak_in_order():
    cfg = fe.FrontendConfig()
    w = fe.mel_weights(cfg)
    assert w.shape == (32, 257)
    assert np.all(np.diff(w.argmax(axis=1)) > 0)
    assert np.all(w.max(axis=1) > 0)


def test_sine_energy_lands_in_matching_channel():
    cfg = fe.FrontendConfig(noise_reduction_enabled=False)
    centres = fe.channel_center_bins(cfg)
    ch = 20
    freq = centres[ch] * 16000 / cfg.fft_size
    spec = fe.compute_spectrogram(sine(freq, 0.5), cfg)
    assert abs(int(np.median(spec.values.argmax(axis=0))) - ch) <= 1


def test_silence_is_zero():
    spec = fe.compute_spectrogram(np.zeros(16000, np.int16))
    assert not spec.values.any()


def test_amplitude_doubling_adds_89_counts():
    x = tonal_bursts(2.0, seed=3).astype(np.int32) // 2
    a = fe.compute_spectrogram(x.astype(np.int16), NO_NR).values.astype(int)
    b = fe.compute_spectrogram((2 * x).astype(np.int16), NO_NR).values.astype(int)
    loud = a > 400  # well above the truncation floor
    assert loud.sum() > 100
    assert np.all(np.abs((b - a)[loud] - 89) <= 1)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 700), min_size=1, max_size=40), st.integers(0, 10))
def test_streaming_equals_whole_file(chunks, seed):
    x = tonal_bursts(0.6, seed=seed)
    pieces, i = [], 0
    for c in chunks:
        pieces.append(x[i:i + c])
        i += c
    pieces.append(x[i:])
    whole = fe.compute_spectrogram(x)
    streamed = fe.stream_spectrogram(pieces)
    assert np.array_equal(whole.values, streamed.values)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 2 ** 32 - 1))
def test_log_compress_close_to_float_log(e):
    ours = fe.log_compress(e)
    ref = min(np.log(e) * 64, 65535)
    assert abs(ours - ref) <= 1.0


def test_log_compress_of_zero_and_one():
    assert fe.log_compress(0) == 0
    assert fe.log_compress(1) == 0


def test_log_compress_monotone():
    e = np.unique(np.geomspace(2, 2 ** 32 - 1, 5000).astype(np.int64))
    assert np.all(np.diff(fe.log_compress(e).astype(int)) >= 0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 2 ** 28), min_size=32, max_size=32), st.integers(0, 2 ** 30))
def test_noise_reduction_bounds(energies, noise):
    cfg = fe.FrontendConfig()
    e = np.array(energies, dtype=np.uint64)
    state = fe.NoiseState(np.full(32, noise, dtype=np.uint64))
    out, new = fe.noise_reduce(e, state, cfg)
    frac = int(cfg.min_signal_remaining * 2 ** 14) / 2 ** 14  # the Q14 constant actually used
    floor = np.floor(e.astype(float) * frac)
    assert np.all(out <= e)
    assert np.all(out.astype(float) >= floor - 1)
    assert new.estimate.shape == (32,)


def test_noise_reduction_suppresses_stationary_tone():
    x = sine(1000, 3.0, 0.3)
    on = fe.compute_spectrogram(x).values.astype(int)
    off = fe.compute_spectrogram(x, fe.FrontendConfig(noise_reduction_enabled=False)).values.astype(int)
    assert on[:, -50:].sum() < off[:, -50:].sum()


def test_noise_state_mismatch_raises():
    with pytest.raises(StateError):
        fe.noise_reduce(np.ones(32, np.uint64), fe.NoiseState.zeros(16))


def test_pcan_never_amplifies():
    cfg = fe.FrontendConfig(pcan_enabled=True)
    e = np.full(32, 10_000, np.uint64)
    state = fe.NoiseState(np.arange(32, dtype=np.uint64) * 5000)
    out = fe.pcan_gain(e, state, cfg)
    assert np.all(out <= e)
    assert np.all(np.diff(out.astype(np.int64)) <= 0)


def test_pcan_disabled_is_identity():
    e = np.arange(32, dtype=np.uint64) * 7
    assert np.array_equal(fe.pcan_gain(e, fe.NoiseState.zeros(32), fe.FrontendConfig()), e)


def test_short_signal_raises():
    with pytest.raises(SignalTooShort):
        fe.compute_spectrogram(np.zeros(100, np.int16))
    with pytest.raises(SignalTooShort):
        fe.stream_spectrogram([np.zeros(100, np.int16)])


@pytest.mark.parametrize("kw", [dict(fft_size=300), dict(window_ms=40), dict(lower_hz=9000),
                                dict(window_kind="tri"), dict(sample_rate_hz=8000),
                                dict(min_signal_remaining=1.5)])
def test_bad_config(kw):
    with pytest.raises(ConfigError):
        fe.FrontendConfig(**kw)


def test_config_from_dict_rejects_unknown():
    with pytest.raises(ConfigError):
        fe.FrontendConfig.from_dict({"nope": 1})
    assert fe.FrontendConfig.from_dict({"hop_ms": 20}).hop_length == 320


def test_wav_round_trip(tmp_path):
    x = tonal_bursts(0.3, seed=1)
    fe.write_wav(tmp_path / "a.wav", x)
    assert np.array_equal(fe.read_wav(tmp_path / "a.wav"), x)
    assert fe.read_pcm(tmp_path / "a.wav").duration_s == pytest.approx(0.3)


def test_wav_rejects_stereo_and_wrong_rate(tmp_path):
    import wave
    st_path = tmp_path / "s.wav"
    fe.write_wav(st_path, np.zeros((100, 2), np.int16))
    with pytest.raises(WavFormatError):
        fe.read_wav(st_path)
    assert fe.read_wav(st_path, allow_stereo=True).shape == (100, 2)
    r_path = tmp_path / "r.wav"
    with wave.open(str(r_path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(8000)
        wf.writeframes(b"\0\0" * 10)
    with pytest.raises(WavFormatError):
        fe.read_wav(r_path)
    (tmp_path / "junk.wav").write_bytes(b"not a wav")
    with pytest.raises(WavFormatError):
        fe.read_wav(tmp_path / "junk.wav")


def test_pcm_buffer_validation():
    with pytest.raises(WavFormatError):
        fe.PcmBuffer(np.zeros((4, 2), np.int16))
    with pytest.raises(WavFormatError):
        fe.PcmBuffer(np.array([40000]))


def test_stream_reset_restores_initial_state():
    s = fe.FrontendStream()
    x = tonal_bursts(0.5, seed=2)
    first = s.push(x)
    s.reset()
    assert s.frames_emitted == 0
    assert np.array_equal(np.stack(first), np.stack(s.push(x)))


def test_csv_export(tmp_path):
    spec = fe.compute_spectrogram(tonal_bursts(0.2, seed=0))
    fe.spectrogram_to_csv(spec, tmp_path / "s.csv")
    back = np.loadtxt(tmp_path / "s.csv", delimiter=",", dtype=int)
    assert np.array_equal(back, spec.values)
