"""Synthetic MEG-like dataset generation with controllable structure.

Each word gets a fixed spatiotemporal template: a channel loading pattern
times a waveform built from Gabor atoms inside the 70-170 Hz band (so it
survives preprocessing). Per-subject orthogonal channel rotations model
inter-subject variability, and additive Gaussian sensor noise is scaled to
an exact per-trial energy SNR.

With ``embedding_coupling`` = 1 the waveform Gram matrix reproduces the
cosine-similarity geometry of a provided embedding table (words share one
loading pattern, and each waveform is a Gram-factor mix of an orthonormal
Gabor dictionary). Envelope extraction preserves temporal-burst overlap, so
the geometry survives preprocessing; this is what makes modality-assisted
training testable. Carrying the geometry in channel loadings instead does
not survive the per-channel standardization and envelope stages.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import CorpusEntry
from .dsp import RawTrial
from .modality import EmbeddingTable
from .seeding import derive_rng

DATASET_VERSION = 1
GABOR_ATOMS = 3
GABOR_BAND = (75.0, 165.0)


class TemplateMode(enum.Enum):
    SEPARABLE = "separable"
    CLASS_STRUCTURED = "classstructured"
    RANDOM_LABEL = "randomlabel"


@dataclass
class SynthConfig:
    n_subjects: int = 1
    n_blocks: int = 15
    words_per_block: int = 48
    channels: int = 64
    fs_raw: float = 1000.0
    trial_secs: float = 1.6
    snr_db: float = 10.0
    template_mode: TemplateMode = TemplateMode.SEPARABLE
    embedding_coupling: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if self.n_subjects < 1 or self.n_blocks < 1 or self.words_per_block < 1:
            raise ValueError("n_subjects, n_blocks, words_per_block must be >= 1")
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if self.fs_raw <= 2 * GABOR_BAND[1]:
            raise ValueError(f"fs_raw must exceed {2 * GABOR_BAND[1]} Hz")
        if self.trial_secs <= 0:
            raise ValueError("trial_secs must be > 0")
        if not np.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")
        if not 0.0 <= self.embedding_coupling <= 1.0:
            raise ValueError("embedding_coupling must be in [0, 1]")

    @property
    def samples(self) -> int:
        return int(round(self.trial_secs * self.fs_raw))


@dataclass
class SynthDetails:
    """Ground truth behind a generated dataset (for oracles and SNR checks)."""

    templates: np.ndarray  # [n_words, channels, samples], unit-energy
    rotations: dict[int, np.ndarray]
    loadings: np.ndarray  # [n_words, channels]
    template_word: list[int] = field(default_factory=list)  # per trial, pre-shuffle word


def _gabor_waveform(n: int, fs: float, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(n) / fs
    dur = n / fs
    wave = np.zeros(n)
    for _ in range(GABOR_ATOMS):
        freq = rng.uniform(*GABOR_BAND)
        center = rng.uniform(0.15 * dur, 0.85 * dur)
        width = rng.uniform(0.05, 0.15)
        amp = rng.uniform(0.5, 1.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        wave += amp * np.exp(-0.5 * ((t - center) / width) ** 2) * np.cos(2 * np.pi * freq * t + phase)
    rms = np.sqrt((wave**2).mean())
    return wave / rms


def _random_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def _gram_factors(table: EmbeddingTable) -> np.ndarray:
    """Factor F with F @ F.T equal to the embedding cosine-similarity matrix."""
    z = table.matrix()
    gram = z @ z.T
    w, u = np.linalg.eigh(gram)
    keep = w > 1e-10
    return u[:, keep] * np.sqrt(w[keep])


def _coupled_waveforms(table: EmbeddingTable, n: int, fs: float, rng: np.random.Generator) -> np.ndarray:
    """Waveforms whose inner products equal the embedding cosine similarities.

    An orthonormal dictionary of band-limited Gabor mixtures spans the
    temporal subspace; mixing it with a Gram factor reproduces the embedding
    geometry exactly (up to eigenvalue clipping).
    """
    factors = _gram_factors(table)
    rank = factors.shape[1]
    atoms = np.stack([_gabor_waveform(n, fs, rng) for _ in range(rank)])
    # orthonormalize in time; the span (hence the band limit) is unchanged
    q, r = np.linalg.qr(atoms.T)
    q = q * np.sign(np.diag(r))
    return factors @ q.T


def generate_detailed(
    cfg: SynthConfig,
    corpus: list[CorpusEntry],
    table: EmbeddingTable | None = None,
) -> tuple[list[RawTrial], SynthDetails]:
    cfg.validate()
    n_words = len(corpus)
    if cfg.words_per_block != n_words:
        raise ValueError(f"words_per_block={cfg.words_per_block} != corpus size {n_words}")
    coupling = cfg.embedding_coupling
    if cfg.template_mode is not TemplateMode.CLASS_STRUCTURED:
        coupling = 0.0
    if coupling > 0.0 and table is None:
        raise ValueError("embedding_coupling > 0 needs an embedding table")

    n = cfg.samples
    wave_rng = derive_rng(cfg.seed, 0x3A7E)
    own_waves = np.stack([_gabor_waveform(n, cfg.fs_raw, wave_rng) for _ in range(n_words)])
    load_rng = derive_rng(cfg.seed, 0x10AD)
    if cfg.channels >= n_words:
        random_loadings = _random_orthogonal(cfg.channels, load_rng)[:, :n_words].T
    else:
        raw = load_rng.standard_normal((n_words, cfg.channels))
        random_loadings = raw / np.linalg.norm(raw, axis=1, keepdims=True)

    if coupling > 0.0:
        # geometry lives in the waveforms; at full coupling all words share
        # one loading so template correlations equal embedding similarities
        coupled_waves = _coupled_waveforms(table, n, cfg.fs_raw, wave_rng)
        shared_loading = random_loadings[load_rng.integers(n_words)]
        own_unit = own_waves / np.linalg.norm(own_waves, axis=1, keepdims=True)
        waves = (1.0 - coupling) * own_unit + coupling * coupled_waves
        loadings = (1.0 - coupling) * random_loadings + coupling * shared_loading[None, :]
    else:
        loadings = random_loadings
        waves = own_waves
    loadings = loadings / np.linalg.norm(loadings, axis=1, keepdims=True)
    waves = waves / np.sqrt((waves**2).mean(axis=1, keepdims=True))

    templates = loadings[:, :, None] * waves[:, None, :]

    rotations: dict[int, np.ndarray] = {}
    trials: list[RawTrial] = []
    template_word: list[int] = []
    snr_linear = 10.0 ** (cfg.snr_db / 10.0)
    for subj in range(cfg.n_subjects):
        rotations[subj] = _random_orthogonal(cfg.channels, derive_rng(cfg.seed, 0x5C0, subj))
        noise_rng = derive_rng(cfg.seed, 0x9015E, subj)
        subj_trials: list[RawTrial] = []
        for block in range(cfg.n_blocks):
            for word in range(n_words):
                clean = rotations[subj] @ templates[word]
                noise = noise_rng.standard_normal(clean.shape)
                sig_energy = float((clean**2).sum())
                noise_energy = float((noise**2).sum())
                scale = np.sqrt(sig_energy / (noise_energy * snr_linear))
                data = (clean + scale * noise).astype(np.float32)
                subj_trials.append(RawTrial(data=data, fs=cfg.fs_raw, word_id=word, block=block, subject=subj))
                template_word.append(word)
        if cfg.template_mode is TemplateMode.RANDOM_LABEL:
            label_rng = derive_rng(cfg.seed, 0x5FF1E, subj)
            shuffled = label_rng.permutation([t.word_id for t in subj_trials])
            for t, new_label in zip(subj_trials, shuffled):
                t.word_id = int(new_label)
        trials.extend(subj_trials)

    details = SynthDetails(
        templates=templates,
        rotations=rotations,
        loadings=loadings,
        template_word=template_word,
    )
    return trials, details


def generate(
    cfg: SynthConfig,
    corpus: list[CorpusEntry],
    table: EmbeddingTable | None = None,
) -> list[RawTrial]:
    """Generate a synthetic dataset of raw trials (see module docstring)."""
    trials, _ = generate_detailed(cfg, corpus, table)
    return trials


def write_dataset(trials: list[RawTrial], directory: str | Path) -> None:
    """Write trials to a dataset directory (manifest + per-subject binaries).

    Layout: ``manifest.json`` plus, per subject, ``trials.f32`` (little-endian
    float32, row-major [trial][channel][sample]), ``labels.u16``, and
    ``blocks.u16``.
    """
    if not trials:
        raise ValueError("cannot write an empty dataset")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    fs = trials[0].fs
    c, t = trials[0].data.shape
    for trial in trials:
        if trial.data.shape != (c, t) or trial.fs != fs:
            raise ValueError("trials must share one shape and sampling rate")
    subjects = sorted({trial.subject for trial in trials})
    manifest = {"version": DATASET_VERSION, "fs": fs, "channels": c, "samples": t, "subjects": []}
    for subj in subjects:
        theirs = [trial for trial in trials if trial.subject == subj]
        sub_dir = directory / f"subject_{subj}"
        sub_dir.mkdir(exist_ok=True)
        data = np.stack([trial.data for trial in theirs]).astype("<f4")
        labels = np.array([trial.word_id for trial in theirs], dtype="<u2")
        blocks = np.array([trial.block for trial in theirs], dtype="<u2")
        (sub_dir / "trials.f32").write_bytes(data.tobytes())
        (sub_dir / "labels.u16").write_bytes(labels.tobytes())
        (sub_dir / "blocks.u16").write_bytes(blocks.tobytes())
        manifest["subjects"].append(
            {
                "id": subj,
                "n_trials": len(theirs),
                "files": {
                    "trials": f"subject_{subj}/trials.f32",
                    "labels": f"subject_{subj}/labels.u16",
                    "blocks": f"subject_{subj}/blocks.u16",
                },
            }
        )
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")


def read_dataset(directory: str | Path) -> list[RawTrial]:
    """Read a dataset directory back into trials (bit-exact round trip)."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"{directory}: no manifest.json")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    version = manifest.get("version")
    if version != DATASET_VERSION:
        raise ValueError(f"unsupported dataset version {version!r} (expected {DATASET_VERSION})")
    fs = float(manifest["fs"])
    c = int(manifest["channels"])
    t = int(manifest["samples"])
    trials: list[RawTrial] = []
    for sub in manifest["subjects"]:
        n = int(sub["n_trials"])
        data_bytes = (directory / sub["files"]["trials"]).read_bytes()
        if len(data_bytes) != n * c * t * 4:
            raise ValueError(
                f"subject {sub['id']}: payload holds {len(data_bytes) // (c * t * 4)} trials, "
                f"manifest claims {n}"
            )
        labels_bytes = (directory / sub["files"]["labels"]).read_bytes()
        blocks_bytes = (directory / sub["files"]["blocks"]).read_bytes()
        if len(labels_bytes) != n * 2 or len(blocks_bytes) != n * 2:
            raise ValueError(f"subject {sub['id']}: labels/blocks size mismatch")
        data = np.frombuffer(data_bytes, dtype="<f4").reshape(n, c, t)
        labels = np.frombuffer(labels_bytes, dtype="<u2")
        blocks = np.frombuffer(blocks_bytes, dtype="<u2")
        for i in range(n):
            trials.append(
                RawTrial(
                    data=data[i].copy(),
                    fs=fs,
                    word_id=int(labels[i]),
                    block=int(blocks[i]),
                    subject=int(sub["id"]),
                )
            )
    return trials
