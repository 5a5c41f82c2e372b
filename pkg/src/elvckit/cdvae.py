"""Cross-domain variational autoencoder: model, two training stages, conversion.

Stage 1 trains per-domain encoder/decoder pairs on normal speech so that all
cross and self reconstruction paths share one latent space. Stage 2 adds an
encoder for electrolaryngeal speech and pulls its latents onto the normal
encoder's latents over time-aligned parallel frames, leaving the pretrained
parts untouched unless explicitly unfrozen.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .autodiff import RAdam, Tensor, concat, conv1d, l1_loss, leaky_relu
from .errors import (
    CorruptFile,
    IncompatibleCheckpoint,
    InvalidInput,
    InvalidSpeaker,
    IoError,
    NoDecoder,
    NoEncoder,
    NotPretrained,
)
from .features import FeatureDomain, FeatureSequence

CHECKPOINT_MAGIC = b"CDVC"
CHECKPOINT_VERSION = 1
STD_FLOOR = 1e-3


@dataclass(frozen=True)
class CdvaeArchitecture:
    """Layer widths shared by every encoder and decoder in the model."""

    encoder_widths: tuple = (1024, 512, 256, 128)
    decoder_widths: tuple = (128, 256, 512, 1024)
    latent_dim: int = 128
    kernel_size: int = 5
    leaky_slope: float = 0.2

    def __post_init__(self) -> None:
        if not self.encoder_widths or not self.decoder_widths:
            raise InvalidInput("encoder and decoder need at least one layer")
        if self.latent_dim < 1:
            raise InvalidInput("latent_dim must be positive")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise InvalidInput("kernel_size must be odd so time length is preserved")


@dataclass
class TrainConfig:
    """Optimization settings; the defaults mirror the reference recipe."""

    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-4
    seed: int = 0
    segment_length: int = 128
    lambda_recon: float = 1.0
    lambda_kl: float = 0.01
    kl_warmup_epochs: int = 0
    lambda_latent: float = 1.0
    unfreeze_decoder: bool = False

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1 or self.segment_length < 1:
            raise InvalidInput("epochs, batch_size and segment_length must be positive")
        if self.lr <= 0:
            raise InvalidInput("learning rate must be positive")


@dataclass
class TrainingExample:
    """One utterance with parallel feature matrices, all on the same frame grid."""

    utterance_id: str
    speaker_id: str
    features: dict

    def __post_init__(self) -> None:
        lengths = {d: f.shape[0] for d, f in self.features.items()}
        if len(set(lengths.values())) > 1:
            raise InvalidInput(
                f"{self.utterance_id}: domain frame counts differ: {lengths}"
            )
        if not self.features:
            raise InvalidInput(f"{self.utterance_id}: no features")


@dataclass
class AlignedPair:
    """Time-aligned source/target frames for one parallel utterance."""

    utterance_id: str
    target_speaker: str
    source: np.ndarray
    target: np.ndarray

    def __post_init__(self) -> None:
        if self.source.shape[0] != self.target.shape[0]:
            raise InvalidInput(
                f"{self.utterance_id}: aligned pair has unequal frame counts "
                f"{self.source.shape[0]} vs {self.target.shape[0]}"
            )


@dataclass
class CdvaeModel:
    """Parameters plus everything needed to apply them to new utterances."""

    architecture: CdvaeArchitecture
    domains: tuple
    input_dims: dict
    speakers: tuple
    params: dict = field(default_factory=dict)
    normalizers: dict = field(default_factory=dict)
    el_domain: Optional[FeatureDomain] = None

    @property
    def has_el_encoder(self) -> bool:
        return self.el_domain is not None

    def speaker_index(self, speaker_id: str) -> int:
        try:
            return self.speakers.index(speaker_id)
        except ValueError:
            raise InvalidSpeaker(
                f"unknown speaker {speaker_id!r}; model knows {list(self.speakers)}"
            ) from None


def _domain_key(domain: FeatureDomain) -> str:
    return domain.name.lower()


def _encoder_shapes(arch: CdvaeArchitecture, n_in: int):
    chain = [n_in, *arch.encoder_widths, 2 * arch.latent_dim]
    return [(chain[i + 1], chain[i], arch.kernel_size) for i in range(len(chain) - 1)]


def _decoder_shapes(arch: CdvaeArchitecture, n_out: int, n_speakers: int):
    chain = [arch.latent_dim + n_speakers, *arch.decoder_widths, n_out]
    return [(chain[i + 1], chain[i], arch.kernel_size) for i in range(len(chain) - 1)]


def _init_conv(rng, shape, slope) -> np.ndarray:
    out_ch, in_ch, kernel = shape
    fan_in = in_ch * kernel
    gain = np.sqrt(2.0 / (1.0 + slope * slope))
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def build_model(
    domains,
    input_dims: dict,
    speakers,
    architecture: CdvaeArchitecture = CdvaeArchitecture(),
    seed: int = 0,
) -> CdvaeModel:
    """Create a model with freshly initialized parameters for each domain."""
    domains = tuple(domains)
    if not domains:
        raise InvalidInput("need at least one feature domain")
    if len(set(domains)) != len(domains):
        raise InvalidInput("duplicate domains")
    speakers = tuple(speakers)
    if not speakers:
        raise InvalidInput("need at least one speaker")
    for d in domains:
        if d not in input_dims:
            raise InvalidInput(f"missing input dims for {d.name}")
    rng = np.random.default_rng(seed)
    params: dict = {}
    for d in domains:
        key = _domain_key(d)
        for i, shape in enumerate(_encoder_shapes(architecture, input_dims[d])):
            params[f"enc_{key}_w{i}"] = _init_conv(rng, shape, architecture.leaky_slope)
            params[f"enc_{key}_b{i}"] = np.zeros(shape[0], dtype=np.float32)
        for i, shape in enumerate(
            _decoder_shapes(architecture, input_dims[d], len(speakers))
        ):
            params[f"dec_{key}_w{i}"] = _init_conv(rng, shape, architecture.leaky_slope)
            params[f"dec_{key}_b{i}"] = np.zeros(shape[0], dtype=np.float32)
    return CdvaeModel(
        architecture=architecture,
        domains=domains,
        input_dims=dict(input_dims),
        speakers=speakers,
        params=params,
    )


def _wrap_params(model: CdvaeModel, trainable) -> dict:
    wrapped = {}
    for name, arr in model.params.items():
        wrapped[name] = Tensor(arr, requires_grad=trainable is not None and name in trainable)
    return wrapped


def _run_encoder(params, prefix: str, x: Tensor, arch: CdvaeArchitecture):
    h = x
    n_layers = len(arch.encoder_widths) + 1
    for i in range(n_layers):
        h = conv1d(h, params[f"{prefix}_w{i}"], params[f"{prefix}_b{i}"])
        if i < n_layers - 1:
            h = leaky_relu(h, arch.leaky_slope)
    mu = h.narrow(1, 0, arch.latent_dim)
    logvar = h.narrow(1, arch.latent_dim, arch.latent_dim)
    return mu, logvar


def _run_decoder(params, prefix: str, z: Tensor, onehot: np.ndarray, arch):
    spk = Tensor(np.broadcast_to(onehot[:, :, None], (z.shape[0], onehot.shape[1], z.shape[2])).astype(z.dtype))
    h = concat([z, spk], axis=1)
    n_layers = len(arch.decoder_widths) + 1
    for i in range(n_layers):
        h = conv1d(h, params[f"{prefix}_w{i}"], params[f"{prefix}_b{i}"])
        if i < n_layers - 1:
            h = leaky_relu(h, arch.leaky_slope)
    return h


def _encoder_prefix(model: CdvaeModel, domain: FeatureDomain, use_el: bool) -> str:
    if use_el:
        if not model.has_el_encoder:
            raise NoEncoder("model has no trained EL encoder")
        return "ele"
    if domain not in model.domains:
        raise NoEncoder(f"model has no {domain.name} encoder")
    return f"enc_{_domain_key(domain)}"


def encode(
    model: CdvaeModel, features: np.ndarray, domain: FeatureDomain, use_el: bool = False
):
    """Encode normalized (frames, dims) data; returns (mu, logvar) arrays."""
    prefix = _encoder_prefix(model, domain, use_el)
    x = Tensor(np.ascontiguousarray(features.T, dtype=np.float32)[None])
    mu, logvar = _run_encoder(_wrap_params(model, None), prefix, x, model.architecture)
    return mu.data[0].T, logvar.data[0].T


def decode(
    model: CdvaeModel, latents: np.ndarray, domain: FeatureDomain, speaker_id: str
) -> np.ndarray:
    """Decode (frames, latent) mean vectors into normalized (frames, dims) data."""
    if domain not in model.domains:
        raise NoDecoder(f"model has no {domain.name} decoder")
    onehot = _speaker_onehot(model, [speaker_id])
    z = Tensor(np.ascontiguousarray(latents.T, dtype=np.float32)[None])
    out = _run_decoder(
        _wrap_params(model, None),
        f"dec_{_domain_key(domain)}",
        z,
        onehot,
        model.architecture,
    )
    return out.data[0].T


def _speaker_onehot(model: CdvaeModel, speaker_ids) -> np.ndarray:
    onehot = np.zeros((len(speaker_ids), len(model.speakers)), dtype=np.float32)
    for row, spk in enumerate(speaker_ids):
        onehot[row, model.speaker_index(spk)] = 1.0
    return onehot


def kl_loss(mu: Tensor, logvar: Tensor) -> Tensor:
    """Mean KL divergence from the unit Gaussian per latent element."""
    return (-0.5) * (1.0 + logvar - mu.square() - logvar.exp()).mean()


def reparameterize(mu: Tensor, logvar: Tensor, rng) -> Tensor:
    eps = Tensor(rng.standard_normal(mu.shape).astype(str(mu.dtype)))
    return mu + (0.5 * logvar).exp() * eps


def fit_normalizers(model: CdvaeModel, examples) -> None:
    """Per-dimension mean and deviation over all training frames, per domain."""
    for d in model.domains:
        stacked = np.concatenate(
            [ex.features[d] for ex in examples if d in ex.features]
        ).astype(np.float64)
        if stacked.size == 0:
            raise InvalidInput(f"no frames to normalize for {d.name}")
        mean = stacked.mean(axis=0)
        std = np.maximum(stacked.std(axis=0), STD_FLOOR)
        model.normalizers[d] = (
            mean.astype(np.float32),
            std.astype(np.float32),
        )


def normalize(model: CdvaeModel, data: np.ndarray, domain: FeatureDomain) -> np.ndarray:
    if domain not in model.normalizers:
        raise NotPretrained(f"no normalizer for {domain.name}; train stage 1 first")
    mean, std = model.normalizers[domain]
    return ((data.astype(np.float32) - mean) / std).astype(np.float32)


def denormalize(model: CdvaeModel, data: np.ndarray, domain: FeatureDomain) -> np.ndarray:
    if domain not in model.normalizers:
        raise NotPretrained(f"no normalizer for {domain.name}")
    mean, std = model.normalizers[domain]
    return (data.astype(np.float32) * std + mean).astype(np.float32)


def _random_start(n_frames: int, seg: int, rng) -> int:
    return int(rng.integers(0, max(n_frames - seg, 0) + 1))


def _crop_at(arr: np.ndarray, start: int, seg: int) -> np.ndarray:
    piece = arr[start : start + seg]
    if piece.shape[0] < seg:
        pad = np.repeat(piece[-1:], seg - piece.shape[0], axis=0)
        piece = np.concatenate([piece, pad])
    return piece


def _batch_tensor(rows) -> np.ndarray:
    # (B, T, N) stack transposed to the (B, N, T) layout convs expect.
    return np.ascontiguousarray(np.stack(rows).transpose(0, 2, 1))


def stage1_loss(
    model: CdvaeModel,
    batch: dict,
    speaker_ids,
    rng,
    params: dict,
    lambda_recon: float = 1.0,
    lambda_kl: float = 0.01,
):
    """All cross and self reconstruction paths plus KL terms for one batch.

    ``batch`` maps each model domain to a normalized (B, N, T) array. With k
    domains there are k*k reconstruction paths: every encoding is decoded
    into every domain and compared with that domain's input.
    """
    arch = model.architecture
    onehot = _speaker_onehot(model, speaker_ids)
    encoded = {}
    total_kl = None
    for d in model.domains:
        x = Tensor(batch[d])
        mu, logvar = _run_encoder(params, f"enc_{_domain_key(d)}", x, arch)
        z = reparameterize(mu, logvar, rng)
        encoded[d] = (x, z)
        term = kl_loss(mu, logvar)
        total_kl = term if total_kl is None else total_kl + term
    total_recon = None
    for d_from in model.domains:
        _, z = encoded[d_from]
        for d_to in model.domains:
            x_to, _ = encoded[d_to]
            xhat = _run_decoder(params, f"dec_{_domain_key(d_to)}", z, onehot, arch)
            term = l1_loss(xhat, x_to)
            total_recon = term if total_recon is None else total_recon + term
    loss = lambda_recon * total_recon + lambda_kl * total_kl
    components = {
        "recon": float(total_recon.data),
        "kl": float(total_kl.data),
        "total": float(loss.data),
    }
    return loss, components


def train_stage1(examples, domains, config: TrainConfig = TrainConfig(), architecture=None, input_dims=None):
    """Pretrain the multi-domain autoencoder on normal speech.

    Returns (model, log) where log is a list of (epoch, component, value)
    rows, one set per epoch, averaged over batches.
    """
    if not examples:
        raise InvalidInput("no training examples")
    domains = tuple(domains)
    for ex in examples:
        for d in domains:
            if d not in ex.features:
                raise InvalidInput(f"{ex.utterance_id}: missing {d.name} features")
    if input_dims is None:
        input_dims = {d: examples[0].features[d].shape[1] for d in domains}
    for ex in examples:
        for d in domains:
            if ex.features[d].shape[1] != input_dims[d]:
                raise InvalidInput(
                    f"{ex.utterance_id}: {d.name} has {ex.features[d].shape[1]} dims, "
                    f"expected {input_dims[d]}"
                )
    speakers = tuple(sorted({ex.speaker_id for ex in examples}))
    model = build_model(
        domains,
        input_dims,
        speakers,
        architecture or CdvaeArchitecture(),
        seed=config.seed,
    )
    fit_normalizers(model, examples)
    normalized = [
        {d: normalize(model, ex.features[d], d) for d in domains} for ex in examples
    ]
    speaker_of = [ex.speaker_id for ex in examples]
    rng = np.random.default_rng(config.seed)
    trainable = set(model.params)
    opt = RAdam(model.params, lr=config.lr)
    log = []
    for epoch in range(1, config.epochs + 1):
        if config.kl_warmup_epochs > 0:
            kl_scale = config.lambda_kl * min(1.0, epoch / config.kl_warmup_epochs)
        else:
            kl_scale = config.lambda_kl
        order = rng.permutation(len(examples))
        sums = {"recon": 0.0, "kl": 0.0, "total": 0.0}
        n_batches = 0
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo : lo + config.batch_size]
            # One crop position per example, shared by all domains so the
            # multi-domain views stay frame-parallel.
            starts = [
                _random_start(
                    normalized[i][domains[0]].shape[0], config.segment_length, rng
                )
                for i in idx
            ]
            batch = {
                d: _batch_tensor(
                    [
                        _crop_at(normalized[i][d], s, config.segment_length)
                        for i, s in zip(idx, starts)
                    ]
                )
                for d in domains
            }
            params = _wrap_params(model, trainable)
            loss, comps = stage1_loss(
                model,
                batch,
                [speaker_of[i] for i in idx],
                rng,
                params,
                lambda_recon=config.lambda_recon,
                lambda_kl=kl_scale,
            )
            loss.backward()
            opt.step({name: params[name].grad for name in trainable})
            for k in sums:
                sums[k] += comps[k]
            n_batches += 1
        for k in ("recon", "kl", "total"):
            log.append((epoch, k, sums[k] / n_batches))
    return model, log


def stage2_loss(
    model: CdvaeModel,
    source_batch: np.ndarray,
    target_batch: np.ndarray,
    target_domain: FeatureDomain,
    speaker_ids,
    params: dict,
    lambda_latent: float = 1.0,
    lambda_recon: float = 1.0,
    reconstruct: bool = False,
):
    """Latent matching between the EL encoder and the frozen normal encoder.

    Both batches are normalized (B, N, T) arrays of time-aligned frames. The
    loss pulls the EL posterior mean onto the normal posterior mean; when
    ``reconstruct`` is set the decoder path is added as well.
    """
    arch = model.architecture
    mu_el, _ = _run_encoder(params, "ele", Tensor(source_batch), arch)
    mu_nl, _ = _run_encoder(
        params, f"enc_{_domain_key(target_domain)}", Tensor(target_batch), arch
    )
    latent = l1_loss(mu_el, mu_nl)
    loss = lambda_latent * latent
    components = {"latent": float(latent.data)}
    if reconstruct:
        onehot = _speaker_onehot(model, speaker_ids)
        xhat = _run_decoder(
            params, f"dec_{_domain_key(target_domain)}", mu_el, onehot, arch
        )
        recon = l1_loss(xhat, Tensor(target_batch))
        loss = loss + lambda_recon * recon
        components["recon"] = float(recon.data)
    components["total"] = float(loss.data)
    return loss, components


def train_stage2(model: CdvaeModel, pairs, target_domain: FeatureDomain, config: TrainConfig = TrainConfig()):
    """Fit the EL encoder against a pretrained model using aligned pairs.

    The EL encoder starts as a copy of the target domain's normal encoder.
    Only EL parameters receive updates; set ``config.unfreeze_decoder`` to
    fine-tune that domain's decoder as well.
    """
    if not model.params:
        raise NotPretrained("stage 2 needs a stage-1 model")
    if target_domain not in model.domains:
        raise NoEncoder(f"model has no {target_domain.name} encoder to imitate")
    if not pairs:
        raise InvalidInput("no aligned pairs")
    n_in = pairs[0].source.shape[1]
    for p in pairs:
        if p.source.shape[1] != n_in:
            raise InvalidInput(f"{p.utterance_id}: inconsistent source dims")
        if p.target.shape[1] != model.input_dims[target_domain]:
            raise InvalidInput(f"{p.utterance_id}: target dims do not match model")
    if n_in != model.input_dims[target_domain]:
        raise InvalidInput(
            f"source dims {n_in} differ from {target_domain.name} dims "
            f"{model.input_dims[target_domain]}; both sides must share a domain"
        )
    key = _domain_key(target_domain)
    n_enc = len(model.architecture.encoder_widths) + 1
    for i in range(n_enc):
        model.params[f"ele_w{i}"] = model.params[f"enc_{key}_w{i}"].copy()
        model.params[f"ele_b{i}"] = model.params[f"enc_{key}_b{i}"].copy()
    model.el_domain = target_domain
    trainable = {f"ele_w{i}" for i in range(n_enc)} | {f"ele_b{i}" for i in range(n_enc)}
    if config.unfreeze_decoder:
        n_dec = len(model.architecture.decoder_widths) + 1
        trainable |= {f"dec_{key}_w{i}" for i in range(n_dec)}
        trainable |= {f"dec_{key}_b{i}" for i in range(n_dec)}
    rng = np.random.default_rng(config.seed)
    normalized = [
        (
            normalize(model, p.source, target_domain),
            normalize(model, p.target, target_domain),
            p.target_speaker,
        )
        for p in pairs
    ]
    opt = RAdam(
        {name: model.params[name] for name in trainable}, lr=config.lr
    )
    log = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(pairs))
        sums: dict = {}
        n_batches = 0
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo : lo + config.batch_size]
            src_rows, tgt_rows, spk = [], [], []
            for i in idx:
                s, t, who = normalized[i]
                # Aligned pairs must crop at the same position on both sides.
                start = _random_start(s.shape[0], config.segment_length, rng)
                src_rows.append(_crop_at(s, start, config.segment_length))
                tgt_rows.append(_crop_at(t, start, config.segment_length))
                spk.append(who)
            params = _wrap_params(model, trainable)
            loss, comps = stage2_loss(
                model,
                _batch_tensor(src_rows),
                _batch_tensor(tgt_rows),
                target_domain,
                spk,
                params,
                lambda_latent=config.lambda_latent,
                lambda_recon=config.lambda_recon,
                reconstruct=config.unfreeze_decoder,
            )
            loss.backward()
            opt.step({name: params[name].grad for name in trainable})
            for name in trainable:
                model.params[name] = opt.params[name]
            for k, val in comps.items():
                sums[k] = sums.get(k, 0.0) + val
            n_batches += 1
        for k in sorted(sums):
            log.append((epoch, k, sums[k] / n_batches))
    return log


def convert(
    model: CdvaeModel,
    features: FeatureSequence,
    target_speaker: str,
    output_domain: Optional[FeatureDomain] = None,
) -> FeatureSequence:
    """Map an utterance to a target speaker through the shared latent space.

    EL input (matching the trained EL domain) goes through the EL encoder;
    anything else uses the normal encoder for its domain. The posterior mean
    is decoded directly, no sampling.
    """
    out_domain = output_domain or features.domain
    if out_domain not in model.domains:
        raise NoDecoder(f"model has no {out_domain.name} decoder")
    use_el = model.has_el_encoder and features.domain == model.el_domain
    norm_domain = model.el_domain if use_el else features.domain
    x = normalize(model, features.data, norm_domain)
    mu, _ = encode(model, x, features.domain, use_el=use_el)
    decoded = decode(model, mu, out_domain, target_speaker)
    data = denormalize(model, decoded, out_domain)
    return FeatureSequence(
        domain=out_domain,
        data=data,
        hop_size=features.hop_size,
        sample_rate=features.sample_rate,
        utterance_id=features.utterance_id,
    )


# -- checkpoints -----------------------------------------------------------


def save_checkpoint(model: CdvaeModel, path) -> None:
    """Serialize a model; the byte stream is deterministic for a given model."""
    meta = {
        "architecture": {
            "encoder_widths": list(model.architecture.encoder_widths),
            "decoder_widths": list(model.architecture.decoder_widths),
            "latent_dim": model.architecture.latent_dim,
            "kernel_size": model.architecture.kernel_size,
            "leaky_slope": model.architecture.leaky_slope,
        },
        "domains": [d.name for d in model.domains],
        "input_dims": {d.name: model.input_dims[d] for d in model.domains},
        "speakers": list(model.speakers),
        "el_domain": model.el_domain.name if model.el_domain else None,
    }
    blocks = {}
    for name, arr in model.params.items():
        blocks[name] = np.asarray(arr, dtype=np.float32)
    for d, (mean, std) in model.normalizers.items():
        blocks[f"norm_{_domain_key(d)}_mean"] = mean
        blocks[f"norm_{_domain_key(d)}_std"] = std
    meta_blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    try:
        with open(str(path) + ".tmp", "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<I", CHECKPOINT_VERSION))
            fh.write(struct.pack("<I", len(meta_blob)))
            fh.write(meta_blob)
            fh.write(struct.pack("<I", len(blocks)))
            for name in sorted(blocks):
                arr = blocks[name]
                encoded = name.encode("utf-8")
                fh.write(struct.pack("<H", len(encoded)))
                fh.write(encoded)
                fh.write(struct.pack("<I", arr.ndim))
                fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                fh.write(arr.astype("<f4", copy=False).tobytes())
        os.replace(str(path) + ".tmp", path)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_checkpoint(path) -> CdvaeModel:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(blob):
            raise CorruptFile(f"{path}: truncated checkpoint")
        out = blob[off : off + n]
        off += n
        return out

    if take(4) != CHECKPOINT_MAGIC:
        raise IncompatibleCheckpoint(f"{path}: not a model checkpoint")
    (version,) = struct.unpack("<I", take(4))
    if version != CHECKPOINT_VERSION:
        raise IncompatibleCheckpoint(f"{path}: unsupported version {version}")
    (meta_len,) = struct.unpack("<I", take(4))
    try:
        meta = json.loads(take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"{path}: bad metadata: {exc}") from exc
    (n_blocks,) = struct.unpack("<I", take(4))
    blocks = {}
    for _ in range(n_blocks):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(take(4 * count), dtype="<f4").reshape(shape).copy()
        blocks[name] = arr
    if off != len(blob):
        raise CorruptFile(f"{path}: trailing bytes after last block")
    try:
        arch = CdvaeArchitecture(
            encoder_widths=tuple(meta["architecture"]["encoder_widths"]),
            decoder_widths=tuple(meta["architecture"]["decoder_widths"]),
            latent_dim=meta["architecture"]["latent_dim"],
            kernel_size=meta["architecture"]["kernel_size"],
            leaky_slope=meta["architecture"]["leaky_slope"],
        )
        domains = tuple(FeatureDomain[name] for name in meta["domains"])
        input_dims = {FeatureDomain[k]: v for k, v in meta["input_dims"].items()}
        speakers = tuple(meta["speakers"])
        el_domain = FeatureDomain[meta["el_domain"]] if meta["el_domain"] else None
    except (KeyError, TypeError) as exc:
        raise CorruptFile(f"{path}: incomplete metadata: {exc}") from exc
    model = CdvaeModel(
        architecture=arch,
        domains=domains,
        input_dims=input_dims,
        speakers=speakers,
        el_domain=el_domain,
    )
    for name, arr in blocks.items():
        if name.startswith("norm_"):
            continue
        model.params[name] = arr
    for d in domains:
        key = _domain_key(d)
        mean = blocks.get(f"norm_{key}_mean")
        std = blocks.get(f"norm_{key}_std")
        if mean is not None and std is not None:
            model.normalizers[d] = (mean, std)
    _check_param_shapes(model, path)
    return model


def _check_param_shapes(model: CdvaeModel, path) -> None:
    want = {}
    for d in model.domains:
        key = _domain_key(d)
        for i, shape in enumerate(_encoder_shapes(model.architecture, model.input_dims[d])):
            want[f"enc_{key}_w{i}"] = shape
            want[f"enc_{key}_b{i}"] = (shape[0],)
        for i, shape in enumerate(
            _decoder_shapes(model.architecture, model.input_dims[d], len(model.speakers))
        ):
            want[f"dec_{key}_w{i}"] = shape
            want[f"dec_{key}_b{i}"] = (shape[0],)
    if model.el_domain is not None:
        for i, shape in enumerate(
            _encoder_shapes(model.architecture, model.input_dims[model.el_domain])
        ):
            want[f"ele_w{i}"] = shape
            want[f"ele_b{i}"] = (shape[0],)
    for name, shape in want.items():
        if name not in model.params:
            raise IncompatibleCheckpoint(f"{path}: missing parameter {name}")
        if model.params[name].shape != shape:
            raise IncompatibleCheckpoint(
                f"{path}: parameter {name} has shape {model.params[name].shape}, "
                f"expected {shape}"
            )
    extras = set(model.params) - set(want)
    if extras:
        raise IncompatibleCheckpoint(f"{path}: unexpected parameters {sorted(extras)}")
