"""Model construction, training stages, conversion, and checkpoint tests.

Architectures here are tiny so every test runs in well under a second; the
full-width configuration is exercised by the acceptance suite.
"""

import numpy as np
import pytest

from elvckit.autodiff import Tensor
from elvckit.cdvae import (
    AlignedPair,
    CdvaeArchitecture,
    CdvaeModel,
    TrainConfig,
    TrainingExample,
    build_model,
    convert,
    decode,
    denormalize,
    encode,
    fit_normalizers,
    kl_loss,
    load_checkpoint,
    normalize,
    reparameterize,
    save_checkpoint,
    train_stage1,
    train_stage2,
)
from elvckit.errors import (
    CorruptFile,
    IncompatibleCheckpoint,
    InvalidInput,
    InvalidSpeaker,
    NoDecoder,
    NoEncoder,
    NotPretrained,
)
from elvckit.features import FeatureDomain, FeatureSequence

TINY = CdvaeArchitecture(
    encoder_widths=(12, 6), decoder_widths=(6, 12), latent_dim=4, kernel_size=3
)
D1, D2 = FeatureDomain.MEL, FeatureDomain.MCC
DIMS = {D1: 7, D2: 5}


def toy_examples(n_utts=6, frames=40, seed=0):
    rng = np.random.default_rng(seed)
    speakers = ["spk_a", "spk_b"]
    out = []
    for i in range(n_utts):
        spk = speakers[i % 2]
        base = rng.standard_normal((frames, 1))
        out.append(
            TrainingExample(
                utterance_id=f"u{i}",
                speaker_id=spk,
                features={
                    D1: (base + rng.standard_normal((frames, DIMS[D1])) * 0.3).astype(
                        np.float32
                    ),
                    D2: (base + rng.standard_normal((frames, DIMS[D2])) * 0.3).astype(
                        np.float32
                    ),
                },
            )
        )
    return out


def toy_config(**kw):
    base = dict(epochs=8, batch_size=3, lr=5e-3, seed=1, segment_length=16)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def trained():
    model, log = train_stage1(toy_examples(), (D1, D2), toy_config(), TINY)
    return model, log


class TestBuildModel:
    def test_parameter_shapes(self):
        model = build_model((D1, D2), DIMS, ["a", "b"], TINY, seed=0)
        # Encoder: 7 -> 12 -> 6 -> 8 (mu and logvar stacked).
        assert model.params["enc_mel_w0"].shape == (12, 7, 3)
        assert model.params["enc_mel_w1"].shape == (6, 12, 3)
        assert model.params["enc_mel_w2"].shape == (8, 6, 3)
        # Decoder input is latent plus one channel per speaker.
        assert model.params["dec_mel_w0"].shape == (6, 6, 3)
        assert model.params["dec_mel_w2"].shape == (7, 12, 3)
        assert model.params["dec_mcc_w2"].shape == (5, 12, 3)
        assert all(p.dtype == np.float32 for p in model.params.values())

    def test_seed_determinism(self):
        a = build_model((D1,), DIMS, ["a"], TINY, seed=7)
        b = build_model((D1,), DIMS, ["a"], TINY, seed=7)
        c = build_model((D1,), DIMS, ["a"], TINY, seed=8)
        for name in a.params:
            np.testing.assert_array_equal(a.params[name], b.params[name])
        assert any(
            not np.array_equal(a.params[n], c.params[n]) for n in a.params
        )

    def test_rejects_even_kernel(self):
        with pytest.raises(InvalidInput):
            CdvaeArchitecture(kernel_size=4)

    def test_rejects_duplicate_domains(self):
        with pytest.raises(InvalidInput):
            build_model((D1, D1), DIMS, ["a"], TINY)


class TestEncodeDecode:
    def test_shapes(self):
        model = build_model((D1,), DIMS, ["a", "b"], TINY, seed=0)
        x = np.random.default_rng(0).standard_normal((20, 7)).astype(np.float32)
        mu, logvar = encode(model, x, D1)
        assert mu.shape == (20, 4) and logvar.shape == (20, 4)
        y = decode(model, mu, D1, "b")
        assert y.shape == (20, 7)

    def test_missing_encoder_rejected(self):
        model = build_model((D1,), DIMS, ["a"], TINY, seed=0)
        with pytest.raises(NoEncoder):
            encode(model, np.zeros((5, 5), dtype=np.float32), D2)
        with pytest.raises(NoEncoder):
            encode(model, np.zeros((5, 7), dtype=np.float32), D1, use_el=True)

    def test_speaker_conditioning_changes_output(self):
        model = build_model((D1,), DIMS, ["a", "b"], TINY, seed=0)
        z = np.random.default_rng(1).standard_normal((10, 4)).astype(np.float32)
        ya = decode(model, z, D1, "a")
        yb = decode(model, z, D1, "b")
        assert not np.allclose(ya, yb)

    def test_unknown_speaker_rejected(self):
        model = build_model((D1,), DIMS, ["a"], TINY, seed=0)
        with pytest.raises(InvalidSpeaker):
            decode(model, np.zeros((5, 4), dtype=np.float32), D1, "zz")


class TestLatentMath:
    def test_kl_zero_at_standard_normal(self):
        mu = Tensor(np.zeros((3, 4)))
        logvar = Tensor(np.zeros((3, 4)))
        assert float(kl_loss(mu, logvar).data) == 0.0

    def test_kl_known_value(self):
        # mu=1, logvar=0: -0.5 * (1 + 0 - 1 - 1) = 0.5 per element.
        mu = Tensor(np.ones((2, 2)))
        logvar = Tensor(np.zeros((2, 2)))
        assert float(kl_loss(mu, logvar).data) == pytest.approx(0.5, abs=1e-7)

    def test_kl_positive_away_from_prior(self):
        rng = np.random.default_rng(2)
        mu = Tensor(rng.standard_normal((4, 4)))
        logvar = Tensor(rng.standard_normal((4, 4)))
        assert float(kl_loss(mu, logvar).data) > 0.0

    def test_reparameterize_collapses_with_tiny_variance(self):
        rng = np.random.default_rng(3)
        mu = Tensor(rng.standard_normal((2, 4, 6)))
        logvar = Tensor(np.full((2, 4, 6), -40.0))
        z = reparameterize(mu, logvar, np.random.default_rng(0))
        np.testing.assert_allclose(z.data, mu.data, atol=1e-6)


class TestNormalizers:
    def test_roundtrip_and_statistics(self):
        examples = toy_examples()
        model = build_model((D1, D2), DIMS, ["spk_a", "spk_b"], TINY, seed=0)
        fit_normalizers(model, examples)
        stacked = np.concatenate([ex.features[D1] for ex in examples])
        normed = normalize(model, stacked, D1)
        assert abs(normed.mean()) < 1e-3
        assert abs(normed.std() - 1.0) < 1e-2
        back = denormalize(model, normed, D1)
        np.testing.assert_allclose(back, stacked, atol=1e-4)

    def test_unfitted_normalizer_rejected(self):
        model = build_model((D1,), DIMS, ["a"], TINY, seed=0)
        with pytest.raises(NotPretrained):
            normalize(model, np.zeros((3, 7), dtype=np.float32), D1)


class TestStage1:
    def test_loss_decreases(self, trained):
        _, log = trained
        totals = {e: v for e, k, v in log if k == "total"}
        assert totals[max(totals)] < totals[1]

    def test_log_covers_components_per_epoch(self, trained):
        _, log = trained
        epochs = {e for e, _, _ in log}
        assert epochs == set(range(1, 9))
        for e in epochs:
            assert {k for ee, k, _ in log if ee == e} == {"recon", "kl", "total"}

    def test_total_combines_components(self, trained):
        model, log = trained
        by_epoch = {}
        for e, k, v in log:
            by_epoch.setdefault(e, {})[k] = v
        cfg = toy_config()
        for comps in by_epoch.values():
            want = cfg.lambda_recon * comps["recon"] + cfg.lambda_kl * comps["kl"]
            assert comps["total"] == pytest.approx(want, rel=1e-5)

    def test_speakers_sorted_and_recorded(self, trained):
        model, _ = trained
        assert model.speakers == ("spk_a", "spk_b")

    def test_deterministic_for_seed(self):
        examples = toy_examples()
        cfg = toy_config(epochs=2)
        m1, _ = train_stage1(examples, (D1, D2), cfg, TINY)
        m2, _ = train_stage1(examples, (D1, D2), cfg, TINY)
        for name in m1.params:
            assert m1.params[name].tobytes() == m2.params[name].tobytes()

    def test_kl_warmup_scales_total(self):
        examples = toy_examples(n_utts=3)
        cfg = toy_config(epochs=2, kl_warmup_epochs=4)
        _, log = train_stage1(examples, (D1, D2), cfg, TINY)
        by_epoch = {}
        for e, k, v in log:
            by_epoch.setdefault(e, {})[k] = v
        # Epoch 1 uses a quarter of lambda_kl, epoch 2 half.
        for e, frac in [(1, 0.25), (2, 0.5)]:
            comps = by_epoch[e]
            want = comps["recon"] + 0.01 * frac * comps["kl"]
            assert comps["total"] == pytest.approx(want, rel=1e-5)

    def test_missing_domain_rejected(self):
        examples = toy_examples(n_utts=2)
        del examples[1].features[D2]
        with pytest.raises(InvalidInput):
            train_stage1(examples, (D1, D2), toy_config(epochs=1), TINY)

    def test_single_domain_works(self):
        model, log = train_stage1(
            toy_examples(n_utts=3), (D1,), toy_config(epochs=2), TINY
        )
        assert model.domains == (D1,)
        assert any(k == "total" for _, k, _ in log)


def make_pairs(model, n=6, frames=40, seed=10):
    """Self-parallel pairs in the MCC domain with a perturbed source side."""
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n):
        tgt = rng.standard_normal((frames, DIMS[D2])).astype(np.float32)
        src = (tgt + 0.5 * rng.standard_normal((frames, DIMS[D2]))).astype(np.float32)
        pairs.append(
            AlignedPair(
                utterance_id=f"p{i}",
                target_speaker=model.speakers[i % len(model.speakers)],
                source=src,
                target=tgt,
            )
        )
    return pairs


class TestStage2:
    def test_latent_loss_decreases_and_frozen_parts_untouched(self, trained):
        model, _ = trained
        model = clone_model(model)
        before = {k: v.tobytes() for k, v in model.params.items()}
        pairs = make_pairs(model)
        log = train_stage2(model, pairs, D2, toy_config(epochs=10, lr=2e-3))
        latents = {e: v for e, k, v in log if k == "latent"}
        assert latents[max(latents)] < latents[1]
        # Every pretrained parameter must be byte-identical afterwards.
        for name, blob in before.items():
            assert model.params[name].tobytes() == blob, name
        assert model.el_domain is D2

    def test_el_encoder_initialized_from_normal_encoder(self, trained):
        model = clone_model(trained[0])
        pairs = make_pairs(model)
        train_stage2(model, pairs, D2, toy_config(epochs=1))
        # After one epoch the encoder has moved, but shapes track the source.
        for i in range(3):
            assert (
                model.params[f"ele_w{i}"].shape
                == model.params[f"enc_mcc_w{i}"].shape
            )

    def test_unfreeze_decoder_updates_it(self, trained):
        model = clone_model(trained[0])
        before = {k: v.tobytes() for k, v in model.params.items()}
        pairs = make_pairs(model)
        log = train_stage2(
            model, pairs, D2, toy_config(epochs=2, unfreeze_decoder=True)
        )
        assert any(k == "recon" for _, k, _ in log)
        changed = [
            n for n in before if n.startswith("dec_mcc") and
            model.params[n].tobytes() != before[n]
        ]
        assert changed
        for name in before:
            if name.startswith(("enc_", "dec_mel")):
                assert model.params[name].tobytes() == before[name], name

    def test_requires_pretrained_model(self):
        empty = CdvaeModel(TINY, (D2,), DIMS, ("a",))
        with pytest.raises(NotPretrained):
            train_stage2(empty, [], D2, toy_config(epochs=1))

    def test_rejects_unknown_target_domain(self, trained):
        model = clone_model(trained[0])
        with pytest.raises(NoEncoder):
            train_stage2(model, make_pairs(model), FeatureDomain.SSL, toy_config(epochs=1))

    def test_rejects_mismatched_dims(self, trained):
        model = clone_model(trained[0])
        bad = [
            AlignedPair(
                utterance_id="x",
                target_speaker="spk_a",
                source=np.zeros((10, 3), dtype=np.float32),
                target=np.zeros((10, DIMS[D2]), dtype=np.float32),
            )
        ]
        with pytest.raises(InvalidInput):
            train_stage2(model, bad, D2, toy_config(epochs=1))


def clone_model(model):
    return CdvaeModel(
        architecture=model.architecture,
        domains=model.domains,
        input_dims=dict(model.input_dims),
        speakers=model.speakers,
        params={k: v.copy() for k, v in model.params.items()},
        normalizers={k: (m.copy(), s.copy()) for k, (m, s) in model.normalizers.items()},
        el_domain=model.el_domain,
    )


class TestConvert:
    def test_output_metadata(self, trained):
        model, _ = trained
        rng = np.random.default_rng(11)
        seq = FeatureSequence(
            domain=D2,
            data=rng.standard_normal((25, DIMS[D2])).astype(np.float32),
            hop_size=320,
            sample_rate=16000,
            utterance_id="utt9",
        )
        out = convert(model, seq, "spk_b")
        assert out.domain is D2
        assert out.n_frames == 25
        assert out.dims == DIMS[D2]
        assert out.hop_size == 320
        assert out.utterance_id == "utt9"

    def test_cross_domain_output(self, trained):
        model, _ = trained
        rng = np.random.default_rng(12)
        seq = FeatureSequence(
            domain=D2,
            data=rng.standard_normal((25, DIMS[D2])).astype(np.float32),
            hop_size=320,
            sample_rate=16000,
        )
        out = convert(model, seq, "spk_a", output_domain=D1)
        assert out.domain is D1
        assert out.dims == DIMS[D1]

    def test_target_speaker_matters(self, trained):
        model, _ = trained
        rng = np.random.default_rng(13)
        seq = FeatureSequence(
            domain=D2,
            data=rng.standard_normal((25, DIMS[D2])).astype(np.float32),
            hop_size=320,
            sample_rate=16000,
        )
        a = convert(model, seq, "spk_a")
        b = convert(model, seq, "spk_b")
        assert not np.allclose(a.data, b.data)

    def test_el_encoder_used_when_present(self, trained):
        plain = clone_model(trained[0])
        tuned = clone_model(trained[0])
        train_stage2(tuned, make_pairs(tuned), D2, toy_config(epochs=3, lr=2e-3))
        rng = np.random.default_rng(14)
        seq = FeatureSequence(
            domain=D2,
            data=rng.standard_normal((25, DIMS[D2])).astype(np.float32),
            hop_size=320,
            sample_rate=16000,
        )
        assert not np.allclose(
            convert(plain, seq, "spk_a").data, convert(tuned, seq, "spk_a").data
        )

    def test_no_decoder_rejected(self, trained):
        model, _ = trained
        seq = FeatureSequence(
            domain=D2,
            data=np.zeros((10, DIMS[D2]), dtype=np.float32),
            hop_size=320,
            sample_rate=16000,
        )
        with pytest.raises(NoDecoder):
            convert(model, seq, "spk_a", output_domain=FeatureDomain.SSL)


class TestCheckpoints:
    def test_save_load_save_is_bit_identical(self, trained, tmp_path):
        model, _ = trained
        p1, p2 = tmp_path / "m1.ckpt", tmp_path / "m2.ckpt"
        save_checkpoint(model, p1)
        save_checkpoint(load_checkpoint(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_loaded_model_behaves_identically(self, trained, tmp_path):
        model, _ = trained
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        rng = np.random.default_rng(15)
        seq = FeatureSequence(
            domain=D2,
            data=rng.standard_normal((20, DIMS[D2])).astype(np.float32),
            hop_size=320,
            sample_rate=16000,
        )
        a = convert(model, seq, "spk_b")
        b = convert(loaded, seq, "spk_b")
        assert a.data.tobytes() == b.data.tobytes()

    def test_el_state_survives(self, trained, tmp_path):
        model = clone_model(trained[0])
        train_stage2(model, make_pairs(model), D2, toy_config(epochs=1))
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        assert loaded.el_domain is D2
        assert loaded.has_el_encoder
        np.testing.assert_array_equal(loaded.params["ele_w0"], model.params["ele_w0"])

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "m.ckpt"
        path.write_bytes(b"JUNKJUNKJUNK")
        with pytest.raises(IncompatibleCheckpoint):
            load_checkpoint(path)

    def test_truncation_rejected(self, trained, tmp_path):
        model, _ = trained
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(CorruptFile):
            load_checkpoint(path)

    def test_shape_tamper_rejected(self, trained, tmp_path):
        model = clone_model(trained[0])
        model.params["enc_mel_w0"] = model.params["enc_mel_w0"][:, :, :1]
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        with pytest.raises(IncompatibleCheckpoint):
            load_checkpoint(path)
