"""Command implementations behind the CLI: each cmd_* is one subcommand.

Every command takes a settings dict (defaults overlaid with the config file
and CLI overrides) so behaviour is reproducible from a single file.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .align import (
    apply_alignment,
    load_alignment,
    save_alignment,
    segment_align,
)
from .cdvae import (
    AlignedPair,
    CdvaeArchitecture,
    TrainConfig,
    TrainingExample,
    convert,
    load_checkpoint,
    save_checkpoint,
    train_stage1,
    train_stage2,
)
from .config import parse_int_tuple
from .corpus import generate_corpus, ssl_standin_from_envelope
from .dsp import (
    StftConfig,
    extract_envelope,
    extract_mcc,
    extract_mel,
    griffin_lim,
    read_wav,
    write_wav,
)
from .errors import ElvcError, InvalidInput, MissingFile
from .features import (
    FeatureDomain,
    load_boundaries,
    load_manifest,
    read_features,
    reconcile_frames,
    validate_manifest_files,
    write_features,
)
from .metrics import evaluate_pair, format_report, write_report

log = logging.getLogger("elvckit")

DEFAULTS = {
    "sample_rate": 16000,
    "frame_size": 1024,
    "hop_size": 256,
    "n_mels": 80,
    "n_mcc": 24,
    "f0_floor": 70.0,
    "f0_ceiling": 400.0,
    "voicing_threshold": 0.3,
    "gl_iters": 60,
    "domains": "mel,mcc",
    "el_domain": "mcc",
    "align_domain": "mcc",
    "epochs": 30,
    "batch_size": 16,
    "lr": 1e-4,
    "seed": 0,
    "segment_length": 128,
    "lambda_recon": 1.0,
    "lambda_kl": 0.01,
    "kl_warmup_epochs": 0,
    "lambda_latent": 1.0,
    "unfreeze_decoder": False,
    "encoder_widths": "1024,512,256,128",
    "decoder_widths": "128,256,512,1024",
    "latent_dim": 128,
    "kernel_size": 5,
    "leaky_slope": 0.2,
    "ssl_standin": False,
}


def settings_with(overrides: dict | None = None) -> dict:
    cfg = dict(DEFAULTS)
    if overrides:
        cfg.update(overrides)
    return cfg


def stft_config(cfg: dict) -> StftConfig:
    return StftConfig(frame_size=int(cfg["frame_size"]), hop_size=int(cfg["hop_size"]))


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        epochs=int(cfg["epochs"]),
        batch_size=int(cfg["batch_size"]),
        lr=float(cfg["lr"]),
        seed=int(cfg["seed"]),
        segment_length=int(cfg["segment_length"]),
        lambda_recon=float(cfg["lambda_recon"]),
        lambda_kl=float(cfg["lambda_kl"]),
        kl_warmup_epochs=int(cfg["kl_warmup_epochs"]),
        lambda_latent=float(cfg["lambda_latent"]),
        unfreeze_decoder=bool(cfg["unfreeze_decoder"]),
    )


def architecture(cfg: dict) -> CdvaeArchitecture:
    return CdvaeArchitecture(
        encoder_widths=parse_int_tuple(cfg["encoder_widths"]),
        decoder_widths=parse_int_tuple(cfg["decoder_widths"]),
        latent_dim=int(cfg["latent_dim"]),
        kernel_size=int(cfg["kernel_size"]),
        leaky_slope=float(cfg["leaky_slope"]),
    )


def parse_domains(value) -> tuple:
    names = [p.strip().upper() for p in str(value).split(",") if p.strip()]
    if not names:
        raise InvalidInput(f"no domains in {value!r}")
    try:
        return tuple(FeatureDomain[n] for n in names)
    except KeyError as exc:
        raise InvalidInput(f"unknown domain {exc.args[0]!r}") from None


def feature_path(directory, utterance_id: str, domain: FeatureDomain) -> Path:
    return Path(directory) / f"{utterance_id}.{domain.name.lower()}.cdfx"


def _run_jobs(fn, items, jobs: int):
    """Apply fn over items, optionally with a thread pool; errors propagate."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _read_audio_checked(path, cfg: dict):
    audio = read_wav(path)
    want = int(cfg["sample_rate"])
    if audio.sample_rate != want:
        raise InvalidInput(
            f"{path}: sample rate {audio.sample_rate} does not match configured {want}"
        )
    return audio


def cmd_extract(manifest_path, out_dir, cfg: dict, jobs: int = 1) -> list:
    """Extract mel, cepstra, and envelope features for every manifest row."""
    records = load_manifest(manifest_path)
    base = Path(manifest_path).parent
    validate_manifest_files(records, base)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config = stft_config(cfg)
    if not cfg.get("ssl_standin"):
        log.info(
            "embeddings are not extracted here; produce them with an external "
            "dumper and load them via ingest_ssl"
        )

    def one(record):
        audio = _read_audio_checked(base / record.audio_path, cfg)
        written = []
        mel = extract_mel(audio, config, n_mels=int(cfg["n_mels"]))
        mel.utterance_id = record.utterance_id
        for seq in (
            mel,
            extract_mcc(audio, config, n_coef=int(cfg["n_mcc"])),
            extract_envelope(audio, config),
        ):
            seq.utterance_id = record.utterance_id
            dest = feature_path(out, record.utterance_id, seq.domain)
            write_features(seq, dest)
            written.append(dest)
        if cfg.get("ssl_standin"):
            ssl = ssl_standin_from_envelope(extract_envelope(audio, config))
            ssl.utterance_id = record.utterance_id
            dest = feature_path(out, record.utterance_id, ssl.domain)
            write_features(ssl, dest)
            written.append(dest)
        log.debug("extracted %s", record.utterance_id)
        return written

    return [p for paths in _run_jobs(one, records, jobs) for p in paths]


def cmd_align(manifest_path, features_dir, out_dir, cfg: dict, jobs: int = 1) -> list:
    """Word-segmented DTW for every parallel (EL, NL) utterance pair."""
    records = load_manifest(manifest_path)
    base = Path(manifest_path).parent
    by_id = {r.utterance_id: r for r in records}
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    domain = parse_domains(cfg["align_domain"])[0]
    parallel = [r for r in records if r.parallel_id is not None]
    if not parallel:
        raise InvalidInput("manifest has no parallel utterances to align")

    def one(record):
        if record.parallel_id not in by_id:
            raise MissingFile(
                f"{record.utterance_id}: parallel utterance "
                f"{record.parallel_id!r} not in manifest"
            )
        target = by_id[record.parallel_id]
        if record.boundaries_path is None or target.boundaries_path is None:
            raise InvalidInput(
                f"{record.utterance_id}: both sides need word boundaries"
            )
        src = read_features(feature_path(features_dir, record.utterance_id, domain))
        tgt = read_features(feature_path(features_dir, target.utterance_id, domain))
        src, tgt = reconcile_frames(src, tgt)
        path = segment_align(
            src,
            tgt,
            load_boundaries(base / record.boundaries_path),
            load_boundaries(base / target.boundaries_path),
        )
        dest = out / f"{record.utterance_id}.path.tsv"
        save_alignment(path, dest)
        log.debug("aligned %s -> %s", record.utterance_id, target.utterance_id)
        return dest

    return _run_jobs(one, parallel, jobs)


def _load_training_examples(records, features_dir, domains) -> list:
    examples = []
    for record in records:
        feats = {}
        loaded = [
            read_features(feature_path(features_dir, record.utterance_id, d))
            for d in domains
        ]
        # Bring every domain onto the coarsest frame grid before stacking.
        coarsest = max(loaded, key=lambda s: s.hop_size)
        aligned = []
        for seq in loaded:
            a, _ = reconcile_frames(seq, coarsest)
            aligned.append(a)
        n = min(s.n_frames for s in aligned)
        for d, seq in zip(domains, aligned):
            feats[d] = seq.data[:n]
        examples.append(
            TrainingExample(
                utterance_id=record.utterance_id,
                speaker_id=record.speaker_id,
                features=feats,
            )
        )
    return examples


def _write_loss_log(rows, path) -> None:
    lines = [f"{epoch}\t{component}\t{value!r}" for epoch, component, value in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_train_nlvc(manifest_path, features_dir, out_path, cfg: dict):
    """Stage 1: pretrain the multi-domain model on normal-speech rows."""
    records = [r for r in load_manifest(manifest_path) if r.parallel_id is None]
    if not records:
        raise InvalidInput("manifest has no normal-speech rows")
    domains = parse_domains(cfg["domains"])
    examples = _load_training_examples(records, features_dir, domains)
    model, rows = train_stage1(examples, domains, train_config(cfg), architecture(cfg))
    save_checkpoint(model, out_path)
    _write_loss_log(rows, str(out_path) + ".losses.tsv")
    log.info("stage 1 finished: %d epochs over %d utterances", int(cfg["epochs"]), len(examples))
    return model, rows


def cmd_train_elvc(manifest_path, features_dir, align_dir, init_ckpt, out_path, cfg: dict):
    """Stage 2: fit the EL encoder from aligned parallel pairs."""
    model = load_checkpoint(init_ckpt)
    records = load_manifest(manifest_path)
    by_id = {r.utterance_id: r for r in records}
    domain = parse_domains(cfg["el_domain"])[0]
    pairs = []
    for record in records:
        if record.parallel_id is None:
            continue
        target = by_id.get(record.parallel_id)
        if target is None:
            raise MissingFile(
                f"{record.utterance_id}: parallel utterance "
                f"{record.parallel_id!r} not in manifest"
            )
        src = read_features(feature_path(features_dir, record.utterance_id, domain))
        tgt = read_features(feature_path(features_dir, target.utterance_id, domain))
        src, tgt = reconcile_frames(src, tgt)
        path = load_alignment(Path(align_dir) / f"{record.utterance_id}.path.tsv")
        warped_src, warped_tgt = apply_alignment(path, src, tgt)
        pairs.append(
            AlignedPair(
                utterance_id=record.utterance_id,
                target_speaker=target.speaker_id,
                source=warped_src.data,
                target=warped_tgt.data,
            )
        )
    if not pairs:
        raise InvalidInput("manifest has no parallel utterances")
    rows = train_stage2(model, pairs, domain, train_config(cfg))
    save_checkpoint(model, out_path)
    _write_loss_log(rows, str(out_path) + ".losses.tsv")
    log.info("stage 2 finished over %d pairs", len(pairs))
    return model, rows


def cmd_convert(inputs, ckpt_path, target_speaker, out_dir, cfg: dict, jobs: int = 1, output_domain=None) -> list:
    """Convert feature files to the target speaker through the model."""
    model = load_checkpoint(ckpt_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    out_dom = parse_domains(output_domain)[0] if output_domain else None

    def one(path):
        seq = read_features(path)
        result = convert(model, seq, target_speaker, output_domain=out_dom)
        dest = feature_path(out, result.utterance_id, result.domain)
        write_features(result, dest)
        return dest

    return _run_jobs(one, list(inputs), jobs)


def cmd_synth(inputs, out_dir, cfg: dict, jobs: int = 1) -> list:
    """Phase-reconstruct audio from mel or envelope feature files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config = stft_config(cfg)

    def one(path):
        seq = read_features(path)
        audio = griffin_lim(
            seq, config, n_iters=int(cfg["gl_iters"]), seed=int(cfg["seed"])
        )
        dest = out / f"{seq.utterance_id}.wav"
        write_wav(audio, dest)
        return dest

    return _run_jobs(one, list(inputs), jobs)


def cmd_evaluate(manifest_path, converted_dir, out_path, cfg: dict, jobs: int = 1):
    """Score converted audio for every parallel row against its reference."""
    records = load_manifest(manifest_path)
    base = Path(manifest_path).parent
    by_id = {r.utterance_id: r for r in records}
    config = stft_config(cfg)
    parallel = [r for r in records if r.parallel_id is not None]
    if not parallel:
        raise InvalidInput("manifest has no parallel utterances to evaluate")

    def one(record):
        converted_path = Path(converted_dir) / f"{record.utterance_id}.wav"
        if not converted_path.exists():
            raise MissingFile(f"no converted audio at {converted_path}")
        target = by_id.get(record.parallel_id)
        if target is None:
            raise MissingFile(
                f"{record.utterance_id}: parallel utterance "
                f"{record.parallel_id!r} not in manifest"
            )
        return evaluate_pair(
            record.utterance_id,
            _read_audio_checked(converted_path, cfg),
            _read_audio_checked(base / target.audio_path, cfg),
            config,
        )

    results = _run_jobs(one, parallel, jobs)
    write_report(results, out_path)
    return results


def cmd_synth_corpus(out_dir, cfg: dict, n_utterances: int = 20, seconds: float = 3.0, n_words: int = 4):
    """Generate the synthetic parallel corpus used for smoke experiments."""
    return generate_corpus(
        out_dir,
        n_utterances=n_utterances,
        seconds=seconds,
        n_words=n_words,
        seed=int(cfg["seed"]),
        sample_rate=int(cfg["sample_rate"]),
    )


def cmd_experiment(manifest_path, out_dir, cfg: dict, jobs: int = 1):
    """Run the full pipeline for each system and write a comparison report.

    Systems: the two-domain model, a single-domain baseline, and the
    unconverted EL audio as the identity reference. Any cell that raises is
    recorded as an error and the command reports failure at the end.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    features_dir = out / "features"
    align_dir = out / "align"
    cmd_extract(manifest_path, features_dir, cfg, jobs)
    cmd_align(manifest_path, features_dir, align_dir, cfg, jobs)
    records = load_manifest(manifest_path)
    base = Path(manifest_path).parent
    by_id = {r.utterance_id: r for r in records}
    parallel = [r for r in records if r.parallel_id is not None]
    systems = {
        "cdvae": dict(cfg),
        "vae": {**cfg, "domains": str(cfg["domains"]).split(",")[0], "el_domain": str(cfg["domains"]).split(",")[0]},
        "identity": None,
    }
    summary = []
    failures = []
    for name, sys_cfg in systems.items():
        sys_dir = out / name
        sys_dir.mkdir(exist_ok=True)
        try:
            if name == "identity":
                results = [
                    evaluate_pair(
                        r.utterance_id,
                        _read_audio_checked(base / r.audio_path, cfg),
                        _read_audio_checked(base / by_id[r.parallel_id].audio_path, cfg),
                        stft_config(cfg),
                    )
                    for r in parallel
                ]
                write_report(results, sys_dir / "report.tsv")
            else:
                ckpt1 = sys_dir / "stage1.ckpt"
                ckpt2 = sys_dir / "stage2.ckpt"
                cmd_train_nlvc(manifest_path, features_dir, ckpt1, sys_cfg)
                cmd_train_elvc(
                    manifest_path, features_dir, align_dir, ckpt1, ckpt2, sys_cfg
                )
                el_domain = parse_domains(sys_cfg["el_domain"])[0]
                inputs = [
                    feature_path(features_dir, r.utterance_id, el_domain)
                    for r in parallel
                ]
                target_speaker = by_id[parallel[0].parallel_id].speaker_id
                converted = cmd_convert(
                    inputs,
                    ckpt2,
                    target_speaker,
                    sys_dir / "converted",
                    sys_cfg,
                    jobs,
                    output_domain="mel",
                )
                wavs_dir = sys_dir / "wav"
                cmd_synth(converted, wavs_dir, sys_cfg, jobs)
                results = cmd_evaluate(
                    manifest_path, wavs_dir, sys_dir / "report.tsv", sys_cfg, jobs
                )
            known_mcd = [r.mcd for r in results if r.mcd is not None]
            mean_mcd = sum(known_mcd) / len(known_mcd) if known_mcd else None
            summary.append((name, mean_mcd, None))
        except ElvcError as exc:
            log.error("system %s failed: %s", name, exc)
            summary.append((name, None, str(exc)))
            failures.append(name)
    lines = ["system\tmean_mcd\tstatus"]
    for name, mean_mcd, error in summary:
        value = "NA" if mean_mcd is None else f"{mean_mcd:.6f}"
        status = "ok" if error is None else f"ERROR: {error}"
        lines.append(f"{name}\t{value}\t{status}")
    (out / "experiment_report.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return summary, failures
