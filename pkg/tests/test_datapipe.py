import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from edgeaudio import datapipe as dp
from edgeaudio.errors import (AlignmentError, ChannelError, ConfigError, CurationError, LabelError,
                              StitchError)
from edgeaudio.frontend import SAMPLE_RATE, PcmBuffer, Spectrogram

SR = SAMPLE_RATE


def tone(seconds, f=440.0, amp=8000):
    t = np.arange(int(seconds * SR)) / SR
    return (amp * np.sin(2 * np.pi * f * t)).astype(np.int16)


@pytest.mark.parametrize("dur,expected", [(5.0, 1), (9.0, 2), (8.99, 1), (13.0, 3), (4.0, 0), (21.5, 5)])
def test_segment_counts(dur, expected):
    segs = dp.segment_audio(np.zeros(int(round(dur * SR)), np.int16))
    assert len(segs) == expected == dp.expected_segments(dur)
    assert all(len(s.samples) == 5 * SR for s in segs)


def test_segments_overlap_by_one_second():
    x = (np.arange(10 * SR) % 30000).astype(np.int16)
    a, b = dp.segment_audio(x)[:2]
    assert np.array_equal(a.samples[4 * SR:], b.samples[:SR])


def test_segment_config_errors():
    with pytest.raises(ConfigError):
        dp.segment_audio(np.zeros(10, np.int16), window_s=1.0, overlap_s=1.0)


def test_isolate_channels():
    x = np.stack([np.arange(5), -np.arange(5)], axis=1).astype(np.int16)
    left, right = dp.isolate_channels(x)
    assert left.samples.tolist() == [0, 1, 2, 3, 4]
    assert right.samples.tolist() == [0, -1, -2, -3, -4]
    with pytest.raises(ChannelError):
        dp.isolate_channels(np.zeros((5, 3), np.int16))
    with pytest.raises(ChannelError):
        dp.isolate_channels(np.zeros(5, np.int16))


def test_soft_labels():
    lab = dp.make_soft_label(["happy", "excited", "sad", "frustrated"])
    idx = {c: i for i, c in enumerate(lab.classes)}
    assert lab.probs[idx["happy"]] == pytest.approx(2 / 3)
    assert lab.probs[idx["sad"]] == pytest.approx(1 / 3)
    assert lab.label == "happy"
    assert dp.make_soft_label({"Neutral": 3, "angry": 1}).probs[idx["neutral"]] == pytest.approx(0.75)
    rec = dp.AnnotationRecord("c1", ("sad", "sad"))
    assert dp.make_soft_label(rec).label == "sad"
    with pytest.raises(LabelError):
        dp.make_soft_label(["frustrated", "fear"])
    with pytest.raises(LabelError):
        dp.AnnotationRecord("c2", ())
    with pytest.raises(LabelError):
        dp.SoftLabel(np.array([0.5, 0.6, 0, 0, 0]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from(list(dp.EMOTION_MERGE) + ["frustrated"]), min_size=1, max_size=12))
def test_soft_label_is_distribution(votes):
    if not any(v in dp.EMOTION_MERGE for v in votes):
        with pytest.raises(LabelError):
            dp.make_soft_label(votes)
        return
    p = dp.make_soft_label(votes).probs
    assert np.all(p >= 0) and p.sum() == pytest.approx(1)


def test_curation():
    freqs = {
        "happy": {"the": 90000, "great": 5000, "yeah": 3000, "ok-ay": 4000, "rare": 10},
        "sad": {"sorry": 2500, "the": 80000, "huge": 30000},
    }
    res = dp.curate_keywords(freqs, ["the"], min_count=2000, max_count=20000, top_k=10)
    assert res.keywords == ["great", "huge", "sorry", "yeah"]
    assert res.classes == res.keywords + [dp.UNKNOWN, dp.NEGATIVE]
    assert res.downsample == {"huge": 20000}
    assert res.dropped["the"] == "stopword"
    assert res.dropped["ok-ay"] == "not an English word"
    assert "instances" in res.dropped["rare"]
    top2 = dp.curate_keywords(freqs, ["the"], min_count=1, top_k=2)
    assert top2.keywords == ["great", "huge"]
    with pytest.raises(CurationError):
        dp.curate_keywords(freqs, ["the"], min_count=10 ** 6, max_count=10 ** 7)
    with pytest.raises(ConfigError):
        dp.curate_keywords(freqs, [], min_count=5, max_count=1)


def test_keyword_clip_centred_and_padded():
    x = np.arange(3 * SR, dtype=np.int64) % 1000
    clip = dp.extract_keyword_clip(x, dp.AlignmentRecord("hi", 1.2, 1.6)).samples
    assert len(clip) == SR
    assert clip[SR // 2] == x[int(1.4 * SR)]
    edge = dp.extract_keyword_clip(x, dp.AlignmentRecord("hi", 0.0, 0.2)).samples
    assert np.all(edge[:SR // 2 - int(0.1 * SR)] == 0)
    with pytest.raises(AlignmentError):
        dp.extract_keyword_clip(x, dp.AlignmentRecord("late", 2.5, 3.5))
    with pytest.raises(AlignmentError):
        dp.AlignmentRecord("bad", 1.0, 0.5)


def test_stitch_five():
    clips = [np.full(SR, i, np.int16) for i in range(5)]
    out = dp.stitch_five(clips).samples
    assert len(out) == 5 * SR and out[3 * SR] == 3
    with pytest.raises(StitchError):
        dp.stitch_five(clips[:4])
    with pytest.raises(StitchError):
        dp.stitch_five(clips[:4] + [np.zeros(10, np.int16)])


@pytest.mark.parametrize("snr", [-5.0, 0.0, 10.0, 20.0])
def test_mix_at_snr(rng, snr):
    x = rng.normal(0, 1000, 16000)
    noise = rng.normal(0, 37, 16000)
    _, scaled = dp.mix_at_snr(x, noise, snr)
    assert 10 * np.log10(dp.power(x) / dp.power(scaled)) == pytest.approx(snr, abs=1e-9)
    assert dp.noise_gain(0.0, 1.0, snr) == 0.0


def test_pitch_shift_moves_frequency():
    x = tone(1.0, 1000.0).astype(np.float64)
    y = dp.pitch_shift(x, 12.0)
    assert len(y) == len(x)
    spec = np.abs(np.fft.rfft(y[4000:12000]))
    peak = np.argmax(spec) * SR / 8000
    assert peak == pytest.approx(2000, abs=10)


def test_rir_preserves_rms(rng):
    x = rng.normal(0, 1000, 8000)
    rir = np.exp(-np.arange(800) / 100.0) * rng.normal(size=800)
    y = dp.apply_rir(x, rir)
    assert len(y) == len(x)
    assert dp.power(y) == pytest.approx(dp.power(x))
    with pytest.raises(ConfigError):
        dp.apply_rir(x, np.zeros(4))


def test_presets():
    k = dp.AugmentConfig.kws()
    assert (k.shift_ms, k.noise_prob, k.pitch_prob, k.rir_prob) == (100.0, 0.8, 0.3, 1.0)
    assert (k.n_time_masks, k.time_mask_max, k.n_freq_masks, k.freq_mask_max) == (2, 20, 2, 7)
    e = dp.AugmentConfig.emotion()
    assert (e.gaussian_prob, e.noise_prob, e.rir_prob) == (0.15, 0.2, 0.1)
    assert (e.n_time_masks, e.time_mask_max, e.time_mask_prob) == (1, 50, 0.2)
    assert (e.n_freq_masks, e.freq_mask_max, e.freq_mask_prob) == (1, 4, 0.2)
    assert dp.AugmentConfig.from_dict({"preset": "emotion", "rng_seed": 5}).rng_seed == 5
    with pytest.raises(ConfigError):
        dp.AugmentConfig.from_dict({"preset": "nope"})
    with pytest.raises(ConfigError):
        dp.AugmentConfig(noise_prob=1.5)


def test_identity_is_identity(rng):
    x = rng.integers(-3000, 3000, 16000).astype(np.int16)
    cfg = dp.AugmentConfig.identity()
    assert np.array_equal(dp.augment_waveform(x, cfg).samples, x)
    spec = rng.random((32, 100))
    assert np.array_equal(dp.spec_augment(spec, cfg), spec)


def test_augment_is_seeded_and_logged(rng):
    x = tone(1.0)
    bank = [rng.normal(0, 500, 4000)]
    rirs = [np.r_[1.0, np.zeros(50), 0.3]]
    cfg = dp.AugmentConfig.kws(rng_seed=7)
    log1, log2 = [], []
    a = dp.augment_waveform(x, cfg, noise_bank=bank, rir_bank=rirs, log=log1).samples
    b = dp.augment_waveform(x, cfg, noise_bank=bank, rir_bank=rirs, log=log2).samples
    assert np.array_equal(a, b) and log1 == log2
    assert log1[0]["op"] == "shift" and abs(log1[0]["samples"]) <= 1600
    assert any(e["op"] == "rir" for e in log1)
    with pytest.raises(ConfigError):
        dp.augment_waveform(x, cfg)


def test_spec_augment_masks(rng):
    spec = Spectrogram(rng.random((32, 490)) + 1.0)
    cfg = dp.AugmentConfig.kws(rng_seed=1)
    log = []
    out = dp.spec_augment(spec, cfg, log=log)
    assert isinstance(out, Spectrogram) and out.values.shape == (32, 490)
    assert len(log) == 4
    for e in log:
        assert 1 <= e["width"] <= (20 if e["op"] == "time_mask" else 7)
    zero_cols = np.all(out.values == 0, axis=0).sum()
    zero_rows = np.all(out.values == 0, axis=1).sum()
    assert zero_cols >= max(e["width"] for e in log if e["op"] == "time_mask")
    assert zero_rows >= max(e["width"] for e in log if e["op"] == "freq_mask")
    assert np.all(spec.values > 0)  # input untouched
    with pytest.raises(ConfigError):
        dp.spec_augment(np.ones((4, 10)), cfg)


def test_file_readers(tmp_path):
    a = tmp_path / "a.csv"
    a.write_text("word,start_s,end_s\nhello,0.1,0.4\nworld,0.5,0.9\n")
    recs = dp.read_alignments(a)
    assert [r.word for r in recs] == ["hello", "world"]
    a.write_text("hello,0.4\n")
    with pytest.raises(AlignmentError):
        dp.read_alignments(a)
    n = tmp_path / "n.csv"
    n.write_text("clip_id,votes\nc1,happy,sad\n")
    assert dp.read_annotations(n)[0].votes == ("happy", "sad")
    w = tmp_path / "w.csv"
    w.write_text("emotion,word,count\nhappy,great,10\nsad,sorry,3\n")
    assert dp.read_word_frequencies(w) == {"happy": {"great": 10}, "sad": {"sorry": 3}}


def test_manifest_round_trip(tmp_path):
    recs = [dp.ManifestRecord("a.wav", [1, 0, 0, 0, 0], augmentations=[{"op": "shift", "samples": 3}]),
            dp.ManifestRecord("b.wav", [0, 0.5, 0.5, 0, 0], split="test")]
    p = tmp_path / "m.jsonl"
    assert dp.write_manifest(p, recs) == 2
    assert dp.read_manifest(p) == recs


def test_pcm_buffer_accepted():
    buf = PcmBuffer(tone(6.0))
    assert len(dp.segment_audio(buf)) == 1
