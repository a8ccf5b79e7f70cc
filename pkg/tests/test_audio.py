import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import signal
from scipy.io import wavfile

from ampgan.audio import (
    AudioBuffer,
    SourceEntry,
    cache_path,
    load_audio,
    load_manifest,
    make_paired_batch,
    make_unpaired_batch,
    resample,
    segment_audio,
    split_dataset,
)
from ampgan.errors import BatchingError, EmptyInputError, IngestionError, PairingError, SplitError


def _write_pcm24(path, data, rate):
    ints = np.clip(np.round(data * 2**23), -2**23, 2**23 - 1).astype(np.int32)
    raw = b"".join(int(v).to_bytes(3, "little", signed=True) for v in ints)
    header = b"RIFF" + struct.pack("<I", 36 + len(raw)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, rate, rate * 3, 3, 24)
    header += b"data" + struct.pack("<I", len(raw))
    path.write_bytes(header + raw)


def test_stereo_downmix_is_channel_mean(tmp_path):
    p = tmp_path / "st.wav"
    wavfile.write(p, 44100, np.array([[1.0, 0.0]], dtype=np.float32))
    buf = load_audio(p)
    np.testing.assert_array_equal(buf.samples, [0.5])
    assert buf.sample_rate == 44100


def test_mono_identity_path(tmp_path):
    x = np.random.default_rng(1).uniform(-1, 1, 1000).astype(np.float32)
    p = tmp_path / "m.wav"
    wavfile.write(p, 44100, x)
    buf = load_audio(p)
    assert len(buf) == 1000
    np.testing.assert_array_equal(buf.samples, x.astype(np.float64))
    assert buf.source_id == "m"


@pytest.mark.parametrize("dtype,scale", [(np.int16, 32767), (np.int32, 2**31 - 1)])
def test_pcm_scaling(tmp_path, dtype, scale):
    p = tmp_path / "pcm.wav"
    wavfile.write(p, 44100, np.array([scale // 2, -scale // 2], dtype=dtype))
    np.testing.assert_allclose(load_audio(p).samples, [0.5, -0.5], atol=1e-4)


def test_pcm24(tmp_path):
    p = tmp_path / "p24.wav"
    x = np.array([0.25, -0.5, 0.75])
    _write_pcm24(p, x, 44100)
    np.testing.assert_allclose(load_audio(p).samples, x, atol=1e-6)


def test_resampled_sine_keeps_frequency_and_magnitude(tmp_path):
    rate = 22050
    t = np.arange(rate) / rate
    x = 0.5 * np.sin(2 * np.pi * 1000 * t)
    p = tmp_path / "s.wav"
    wavfile.write(p, rate, x.astype(np.float32))
    buf = load_audio(p)
    assert len(buf) == 44100
    # independent route: FFT resampler on the same file contents
    ref = signal.resample(x.astype(np.float32).astype(np.float64), 44100)
    spec, ref_spec = np.abs(np.fft.rfft(buf.samples)), np.abs(np.fft.rfft(ref))
    assert np.argmax(spec) == 1000 == np.argmax(ref_spec)
    assert spec[1000] == pytest.approx(ref_spec[1000], rel=0.01)


def test_resampler_stopband():
    # energy folded down from above the new Nyquist must be ~90 dB down
    rate = 96000
    t = np.arange(rate) / rate
    x = np.sin(2 * np.pi * 30000 * t)
    y = resample(x, rate, 44100)[2000:-2000]
    assert 20 * np.log10(np.sqrt(np.mean(y**2)) / np.sqrt(0.5)) < -90


def test_load_errors(tmp_path):
    with pytest.raises(IngestionError):
        load_audio(tmp_path / "missing.wav")
    bad = tmp_path / "bad.wav"
    bad.write_bytes(b"not a wav")
    with pytest.raises(IngestionError):
        load_audio(bad)
    empty = tmp_path / "empty.wav"
    wavfile.write(empty, 44100, np.zeros(0, dtype=np.float32))
    with pytest.raises(EmptyInputError):
        load_audio(empty)


def test_buffer_rejects_nan_and_multichannel():
    with pytest.raises(IngestionError):
        AudioBuffer(np.array([0.0, np.nan]))
    with pytest.raises(IngestionError):
        AudioBuffer(np.zeros((2, 3)))


def test_cache_layout(tmp_path):
    assert cache_path(tmp_path, "bd2", "clean", "a1") == tmp_path / "bd2" / "clean" / "a1.wav"


@pytest.mark.parametrize("n,expected", [(88200, 1), (220500, 2), (88199, 0), (0, 0)])
def test_segment_counts(n, expected):
    segs = segment_audio(AudioBuffer(np.zeros(n)), 88200)
    assert len(segs) == expected
    assert all(s.size == 88200 for s in segs)


@given(st.integers(0, 5000), st.integers(1, 700))
@settings(max_examples=50, deadline=None)
def test_segment_count_is_floor(n, length):
    x = np.arange(n, dtype=float)
    segs = segment_audio(AudioBuffer(x), length)
    assert len(segs) == n // length
    if segs:
        np.testing.assert_array_equal(np.concatenate(segs), x[: len(segs) * length])


def _entries(n, tone="t", role="clean", length=100):
    return [SourceEntry(AudioBuffer(np.full(length, i, float), source_id=f"{tone}{i}"), role, tone) for i in range(n)]


def _split_files(ds):
    out = {}
    for s in ds.segments:
        out.setdefault(s.split, set()).add(s.source_id)
    return out


@pytest.mark.parametrize("n,counts", [(100, (80, 10, 10)), (10, (8, 1, 1)), (3, (2, 0, 1))])
def test_split_counts(n, counts):
    ds = split_dataset(_entries(n), seed=3, segment_length=50)
    files = _split_files(ds)
    assert tuple(len(files.get(s, ())) for s in ("train", "val", "test")) == counts


def test_split_deterministic_and_partitions():
    a = split_dataset(_entries(37), seed=5, segment_length=50)
    b = split_dataset(_entries(37), seed=5, segment_length=50)
    assert [s.split for s in a.segments] == [s.split for s in b.segments]
    files = _split_files(a)
    assert set.union(*files.values()) == {f"t{i}" for i in range(37)}
    assert sum(len(v) for v in files.values()) == 37
    # no file straddles splits
    for sid in {s.source_id for s in a.segments}:
        assert len({s.split for s in a.segments if s.source_id == sid}) == 1


def test_split_needs_three_sources():
    with pytest.raises(SplitError):
        split_dataset(_entries(2), seed=0, segment_length=50)
    with pytest.raises(SplitError):
        split_dataset(_entries(5), ratios=(0.5, 0.5, 0.5))


def _paired_entries(n, length=200):
    rng = np.random.default_rng(0)
    out = []
    for i in range(n):
        x = rng.standard_normal(length)
        out.append(SourceEntry(AudioBuffer(x, source_id=f"c{i}"), "clean", "amp", f"p{i}"))
        out.append(SourceEntry(AudioBuffer(np.tanh(x), source_id=f"r{i}"), "rendered", "amp", f"p{i}"))
    return out


def test_paired_split_keeps_pairs_together_and_aligned():
    ds = split_dataset(_paired_entries(10), seed=1, segment_length=50)
    assert len(ds.pairs) == 40
    for c, r in ds.pairs:
        cs, rs = ds.segments[c], ds.segments[r]
        assert cs.split == rs.split and cs.offset == rs.offset
        np.testing.assert_array_equal(np.tanh(cs.samples), rs.samples)


def test_paired_batch_alignment_and_determinism():
    ds = split_dataset(_paired_entries(10), seed=1, segment_length=50).paired(split="train")
    c1, r1 = make_paired_batch(ds, 6, np.random.default_rng(9))
    c2, r2 = make_paired_batch(ds, 6, np.random.default_rng(9))
    np.testing.assert_array_equal(c1, c2)
    np.testing.assert_array_equal(r1, r2)
    np.testing.assert_allclose(np.tanh(c1), r1, atol=1e-6)


def test_single_pair_batch():
    ds = split_dataset(_paired_entries(3), seed=0, segment_length=200).paired(split="train")
    assert len(ds.pairs) == 2
    one = ds.paired()
    one.pairs = one.pairs[:1]
    c, r = make_paired_batch(one, 1, np.random.default_rng(0))
    np.testing.assert_array_equal(c[0], one.segments[0].samples.astype(np.float32))
    np.testing.assert_array_equal(r[0], one.segments[1].samples.astype(np.float32))


def test_paired_batch_needs_pairing():
    ds = split_dataset(_entries(5), seed=0, segment_length=50)
    with pytest.raises(PairingError):
        make_paired_batch(ds, 1, np.random.default_rng(0))
    with pytest.raises(PairingError):
        ds.paired()


def _pool(n, value, tone="x"):
    ds = split_dataset(_entries(max(n, 3), tone=tone, length=10), seed=0, segment_length=10)
    segs = ds.segments[:n]
    return [type(s)(s.source_id, s.offset, np.full(10, value, float), s.role, s.tone_label, s.split) for s in segs]


def test_unpaired_single_segment_with_replacement():
    clean = _pool(1, 7.0)
    rendered = _pool(3, -1.0)
    c, r = make_unpaired_batch([clean], rendered, 4, np.random.default_rng(0))
    assert c.shape == (4, 10)
    np.testing.assert_array_equal(c, 7.0)
    np.testing.assert_array_equal(r, -1.0)


def test_unpaired_batching_errors():
    with pytest.raises(BatchingError):
        make_unpaired_batch([_pool(1, 0.0)], _pool(3, 0.0), 4, np.random.default_rng(0), replace=False)
    with pytest.raises(BatchingError):
        make_unpaired_batch([[]], _pool(3, 0.0), 1, np.random.default_rng(0))


def test_unpaired_deterministic():
    a, r = _pool(3, 1.0), _pool(3, 2.0)
    x1 = make_unpaired_batch([a], r, 5, np.random.default_rng(4))
    x2 = make_unpaired_batch([a], r, 5, np.random.default_rng(4))
    np.testing.assert_array_equal(x1[0], x2[0])


def test_merged_pools_sampled_proportionally():
    # pool A has 1 segment, pool B has 3: draws from A should be ~1/4
    a, b = _pool(1, 1.0, "a"), _pool(3, 2.0, "b")
    rendered = _pool(3, 0.0)
    rng = np.random.default_rng(123)
    n = 10000
    c, _ = make_unpaired_batch([a, b], rendered, n, rng)
    from_a = int(np.sum(c[:, 0] == 1.0))
    expected = n * 0.25
    sigma = np.sqrt(n * 0.25 * 0.75)
    assert abs(from_a - expected) < 3 * sigma
    assert set(np.unique(c[:, 0])) == {1.0, 2.0}


def test_manifest_roundtrip(tmp_path):
    for name in ("a", "b"):
        wavfile.write(tmp_path / f"{name}.wav", 44100, np.zeros(10, np.float32))
    (tmp_path / "m.csv").write_text("path,role,tone_label,pair_id\na.wav,clean,t,p0\nb.wav,rendered,t,p0\n")
    entries = load_manifest(tmp_path / "m.csv")
    assert [(e.role, e.tone_label, e.pair_id) for e in entries] == [("clean", "t", "p0"), ("rendered", "t", "p0")]
    (tmp_path / "bad.csv").write_text("path,role,tone_label\na.wav,dirty,t\n")
    with pytest.raises(IngestionError):
        load_manifest(tmp_path / "bad.csv")
