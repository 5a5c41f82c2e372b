"""Feature container, CDFX file format, manifest, and reconciliation tests."""

import struct

import numpy as np
import pytest

from elvckit.errors import (
    CorruptFile,
    DomainMismatch,
    HopMismatch,
    InvalidData,
    InvalidInput,
    InvalidManifest,
    IoError,
    MissingFile,
)
from elvckit.features import (
    FeatureDomain,
    FeatureSequence,
    WordBoundaries,
    ingest_ssl,
    load_boundaries,
    load_manifest,
    read_features,
    reconcile_frames,
    save_boundaries,
    save_manifest,
    UtteranceManifest,
    validate_manifest_files,
    write_features,
)


def make_seq(domain=FeatureDomain.MEL, frames=10, dims=80, hop=256, sr=16000, seed=0):
    rng = np.random.default_rng(seed)
    return FeatureSequence(
        domain=domain,
        data=rng.standard_normal((frames, dims)).astype(np.float32),
        hop_size=hop,
        sample_rate=sr,
        utterance_id="u1",
    )


class TestFeatureSequence:
    def test_data_stored_as_float32(self):
        seq = FeatureSequence(
            domain=FeatureDomain.MEL,
            data=np.zeros((3, 80), dtype=np.float64),
            hop_size=256,
            sample_rate=16000,
        )
        assert seq.data.dtype == np.float32

    def test_rejects_non_2d(self):
        with pytest.raises(InvalidInput):
            FeatureSequence(FeatureDomain.MEL, np.zeros(5), 256, 16000)

    def test_rejects_nan(self):
        bad = np.zeros((2, 80))
        bad[1, 3] = np.nan
        with pytest.raises(InvalidData):
            FeatureSequence(FeatureDomain.MEL, bad, 256, 16000)

    def test_rejects_bad_hop_and_rate(self):
        with pytest.raises(InvalidInput):
            FeatureSequence(FeatureDomain.MEL, np.zeros((2, 80)), 0, 16000)
        with pytest.raises(InvalidInput):
            FeatureSequence(FeatureDomain.MEL, np.zeros((2, 80)), 256, -1)

    def test_strict_validation(self):
        make_seq(FeatureDomain.MEL, dims=80).validate_strict()
        make_seq(FeatureDomain.MCC, dims=25).validate_strict()
        make_seq(FeatureDomain.SP, dims=513).validate_strict()
        make_seq(FeatureDomain.SSL, dims=768).validate_strict()
        with pytest.raises(DomainMismatch):
            make_seq(FeatureDomain.MEL, dims=81).validate_strict()


class TestCdfxRoundTrip:
    @pytest.mark.parametrize(
        "domain,dims",
        [
            (FeatureDomain.MEL, 80),
            (FeatureDomain.MCC, 25),
            (FeatureDomain.SP, 513),
            (FeatureDomain.SSL, 768),
        ],
    )
    def test_bit_exact(self, tmp_path, domain, dims):
        seq = make_seq(domain, frames=37, dims=dims, hop=320, sr=16000, seed=dims)
        path = tmp_path / "f.cdfx"
        write_features(seq, path)
        back = read_features(path)
        assert back.domain is domain
        assert back.hop_size == 320
        assert back.sample_rate == 16000
        assert back.data.tobytes() == seq.data.tobytes()

    def test_rewrite_is_byte_identical(self, tmp_path):
        seq = make_seq(frames=21, seed=3)
        p1, p2 = tmp_path / "a.cdfx", tmp_path / "b.cdfx"
        write_features(seq, p1)
        write_features(read_features(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_utterance_id_from_filename(self, tmp_path):
        seq = make_seq()
        path = tmp_path / "spk1_0007.mel.cdfx"
        write_features(seq, path)
        assert read_features(path).utterance_id == "spk1_0007"

    def test_zero_frames_round_trip(self, tmp_path):
        seq = FeatureSequence(
            FeatureDomain.MCC, np.zeros((0, 25), dtype=np.float32), 256, 16000
        )
        path = tmp_path / "empty.cdfx"
        write_features(seq, path)
        back = read_features(path)
        assert back.n_frames == 0
        assert back.dims == 25


class TestCdfxValidation:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.cdfx"
        path.write_bytes(b"NOPE" + b"\x00" * 40)
        with pytest.raises(CorruptFile):
            read_features(path)

    def test_bad_version(self, tmp_path):
        seq = make_seq(frames=2)
        path = tmp_path / "x.cdfx"
        write_features(seq, path)
        blob = bytearray(path.read_bytes())
        blob[4:8] = struct.pack("<I", 9)
        path.write_bytes(bytes(blob))
        with pytest.raises(CorruptFile):
            read_features(path)

    def test_unknown_domain_code(self, tmp_path):
        seq = make_seq(frames=2)
        path = tmp_path / "x.cdfx"
        write_features(seq, path)
        blob = bytearray(path.read_bytes())
        blob[8] = 77
        path.write_bytes(bytes(blob))
        with pytest.raises(CorruptFile):
            read_features(path)

    def test_truncated_payload(self, tmp_path):
        seq = make_seq(frames=5)
        path = tmp_path / "x.cdfx"
        write_features(seq, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-7])
        with pytest.raises(CorruptFile):
            read_features(path)

    def test_short_header(self, tmp_path):
        path = tmp_path / "x.cdfx"
        path.write_bytes(b"CDFX\x01")
        with pytest.raises(CorruptFile):
            read_features(path)

    def test_nan_payload(self, tmp_path):
        seq = make_seq(frames=3, dims=4)
        path = tmp_path / "x.cdfx"
        write_features(seq, path)
        blob = bytearray(path.read_bytes())
        blob[-4:] = struct.pack("<f", np.nan)
        path.write_bytes(bytes(blob))
        with pytest.raises(InvalidData):
            read_features(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(IoError):
            read_features(tmp_path / "absent.cdfx")


class TestIngestSsl:
    def test_accepts_valid_embeddings(self, tmp_path):
        seq = make_seq(FeatureDomain.SSL, frames=49, dims=768, hop=320)
        path = tmp_path / "u.ssl.cdfx"
        write_features(seq, path)
        got = ingest_ssl(path)
        assert got.dims == 768

    def test_rejects_wrong_domain(self, tmp_path):
        seq = make_seq(FeatureDomain.MEL, frames=5, dims=80, hop=320)
        path = tmp_path / "u.cdfx"
        write_features(seq, path)
        with pytest.raises(DomainMismatch):
            ingest_ssl(path)

    def test_rejects_wrong_dims(self, tmp_path):
        seq = make_seq(FeatureDomain.SSL, frames=5, dims=512, hop=320)
        path = tmp_path / "u.cdfx"
        write_features(seq, path)
        with pytest.raises(DomainMismatch):
            ingest_ssl(path)

    def test_rejects_wrong_hop(self, tmp_path):
        seq = make_seq(FeatureDomain.SSL, frames=5, dims=768, hop=256)
        path = tmp_path / "u.cdfx"
        write_features(seq, path)
        with pytest.raises(HopMismatch):
            ingest_ssl(path)


class TestReconcileFrames:
    def test_equal_hop_truncates_to_shorter(self):
        a = make_seq(frames=10, hop=256, seed=1)
        b = make_seq(frames=7, hop=256, seed=2)
        ra, rb = reconcile_frames(a, b)
        assert ra.n_frames == rb.n_frames == 7
        np.testing.assert_array_equal(ra.data, a.data[:7])

    def test_finer_hop_resampled_onto_coarser_grid(self):
        # 100 frames at hop 256 span samples 0..25344; the 320 grid fits
        # floor(99 * 256 / 320) + 1 = 80 frames inside that span.
        a = make_seq(frames=100, hop=256, seed=3)
        b = make_seq(frames=80, hop=320, seed=4)
        ra, rb = reconcile_frames(a, b)
        assert ra.hop_size == rb.hop_size == 320
        assert ra.n_frames == rb.n_frames == 80

    def test_linear_interpolation_against_oracle(self):
        # A linear ramp in time must survive linear interpolation exactly.
        frames = 50
        ramp = np.outer(np.arange(frames, dtype=np.float64), np.ones(4))
        a = FeatureSequence(FeatureDomain.MEL, ramp, 160, 16000)
        b = make_seq(frames=20, dims=4, hop=320, seed=5)
        ra, _ = reconcile_frames(a, b)
        # Frame j of the result sits at source position 2j on the ramp.
        want = 2.0 * np.arange(ra.n_frames)
        np.testing.assert_allclose(ra.data[:, 0], want, rtol=1e-6)

    def test_argument_order_is_preserved(self):
        a = make_seq(frames=30, hop=320, seed=6)
        b = make_seq(frames=40, hop=256, seed=7)
        ra, rb = reconcile_frames(a, b)
        assert ra.utterance_id == a.utterance_id
        assert ra.hop_size == 320 and rb.hop_size == 320

    def test_sample_rate_mismatch_rejected(self):
        a = make_seq(sr=16000)
        b = make_seq(sr=22050)
        with pytest.raises(InvalidInput):
            reconcile_frames(a, b)

    def test_idempotent_on_aligned_inputs(self):
        a = make_seq(frames=12, hop=320, seed=8)
        b = make_seq(frames=12, hop=320, seed=9)
        ra, rb = reconcile_frames(a, b)
        ra2, rb2 = reconcile_frames(ra, rb)
        np.testing.assert_array_equal(ra.data, ra2.data)
        np.testing.assert_array_equal(rb.data, rb2.data)


class TestManifest:
    def test_round_trip(self, tmp_path):
        records = [
            UtteranceManifest("u1", "nl01", "wav/u1.wav", None, None),
            UtteranceManifest("u2", "el01", "wav/u2.wav", "u1", "lab/u2.txt"),
        ]
        path = tmp_path / "corpus.tsv"
        save_manifest(records, path)
        back = load_manifest(path)
        assert back == records

    def test_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "m.tsv"
        path.write_text("u1\tspk\ta.wav\t-\t-\n\n\nu2\tspk\tb.wav\t-\t-\n")
        assert len(load_manifest(path)) == 2

    def test_wrong_field_count_rejected(self, tmp_path):
        path = tmp_path / "m.tsv"
        path.write_text("u1\tspk\ta.wav\t-\n")
        with pytest.raises(InvalidManifest):
            load_manifest(path)

    def test_duplicate_id_rejected(self, tmp_path):
        path = tmp_path / "m.tsv"
        path.write_text("u1\tspk\ta.wav\t-\t-\nu1\tspk\tb.wav\t-\t-\n")
        with pytest.raises(InvalidManifest):
            load_manifest(path)

    def test_empty_mandatory_field_rejected(self, tmp_path):
        path = tmp_path / "m.tsv"
        path.write_text("u1\t\ta.wav\t-\t-\n")
        with pytest.raises(InvalidManifest):
            load_manifest(path)

    def test_validate_files(self, tmp_path):
        (tmp_path / "a.wav").write_bytes(b"")
        ok = [UtteranceManifest("u1", "s", "a.wav", None, None)]
        validate_manifest_files(ok, tmp_path)
        bad = [UtteranceManifest("u2", "s", "gone.wav", None, None)]
        with pytest.raises(MissingFile):
            validate_manifest_files(bad, tmp_path)


class TestBoundaries:
    def test_round_trip(self, tmp_path):
        bounds = WordBoundaries(segments=[(0, 4000, "one"), (4800, 9000, "two")])
        path = tmp_path / "u.lab"
        save_boundaries(bounds, path)
        assert load_boundaries(path).segments == bounds.segments

    def test_overlap_rejected(self):
        with pytest.raises(InvalidInput):
            WordBoundaries(segments=[(0, 5000, "a"), (4000, 9000, "b")])

    def test_negative_or_empty_segment_rejected(self):
        with pytest.raises(InvalidInput):
            WordBoundaries(segments=[(-1, 100, "a")])
        with pytest.raises(InvalidInput):
            WordBoundaries(segments=[(100, 100, "a")])

    def test_non_integer_rejected(self, tmp_path):
        path = tmp_path / "u.lab"
        path.write_text("0\tfour\tword\n")
        with pytest.raises(InvalidInput):
            load_boundaries(path)
