"""Frozen per-word assisting-modality features.

Pretrained text/speech model outputs are ingested as JSON embedding tables
produced offline; an in-repo Mel-spectrogram extractor covers the acoustic
route without any model dependency. Vectors are L2-normalized on load and
never updated by training. A seeded pseudo-embedding generator is bundled
for tests and synthetic experiments.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import CorpusEntry, TaskKind, task_label
from .seeding import derive_rng

MEL_SCALE = 2595.0
MEL_BREAK_HZ = 700.0
ZERO_NORM_EPS = 1e-12


class Modality(enum.Enum):
    TEXT = "text"
    SPEECH = "speech"


def hz_to_mel(nu):
    """Mel value of a frequency in Hz: 2595 * log10(1 + nu/700)."""
    nu = np.asarray(nu, dtype=np.float64)
    if np.any(nu < 0):
        raise ValueError("frequency must be >= 0")
    out = MEL_SCALE * np.log10(1.0 + nu / MEL_BREAK_HZ)
    return float(out) if out.ndim == 0 else out


def mel_to_hz(m):
    """Inverse of :func:`hz_to_mel`."""
    m = np.asarray(m, dtype=np.float64)
    out = MEL_BREAK_HZ * (10.0 ** (m / MEL_SCALE) - 1.0)
    return float(out) if out.ndim == 0 else out


@dataclass
class MelConfig:
    sample_rate: float = 16000.0
    n_fft: int = 1024
    hop: int = 256
    n_mels: int = 64
    f_min: float = 0.0
    f_max: float = 8000.0

    def validate(self) -> None:
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")
        if not 0.0 <= self.f_min < self.f_max <= self.sample_rate / 2.0:
            raise ValueError(
                f"need 0 <= f_min < f_max <= sample_rate/2, got "
                f"[{self.f_min}, {self.f_max}] at {self.sample_rate} Hz"
            )
        if self.n_fft < 2 or self.hop < 1:
            raise ValueError("n_fft must be >= 2 and hop >= 1")


def mel_filterbank(cfg: MelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Triangular filters with centers equally spaced on the Mel scale.

    Returns (filterbank [n_mels x n_fft//2+1], center frequencies in Hz).
    Triangles are linear in Hz with unit peaks (no area normalization), so a
    pure tone responds most strongly in the filter whose center is nearest.
    """
    cfg.validate()
    n_bins = cfg.n_fft // 2 + 1
    fft_freqs = np.fft.rfftfreq(cfg.n_fft, d=1.0 / cfg.sample_rate)
    mel_pts = np.linspace(hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max), cfg.n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    fb = np.zeros((cfg.n_mels, n_bins))
    for m in range(cfg.n_mels):
        left, center, right = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        up = (fft_freqs - left) / max(center - left, 1e-12)
        down = (right - fft_freqs) / max(right - center, 1e-12)
        fb[m] = np.clip(np.minimum(up, down), 0.0, None)
    return fb, hz_pts[1:-1]


def mel_spectrogram(audio: np.ndarray, cfg: MelConfig | None = None) -> np.ndarray:
    """Log-compressed Mel spectrogram [n_mels x frames].

    Frames are Hann-windowed with ``frames = floor((len - n_fft)/hop) + 1``;
    magnitudes pass through the triangular filterbank and log(1 + x).
    """
    if cfg is None:
        cfg = MelConfig()
    cfg.validate()
    audio = np.asarray(audio, dtype=np.float64)
    if audio.ndim != 1:
        raise ValueError("audio must be mono (1-D)")
    if audio.shape[0] < cfg.n_fft:
        raise ValueError(f"audio length {audio.shape[0]} < n_fft {cfg.n_fft}")
    n_frames = (audio.shape[0] - cfg.n_fft) // cfg.hop + 1
    window = np.hanning(cfg.n_fft)
    starts = np.arange(n_frames) * cfg.hop
    frames = np.stack([audio[s : s + cfg.n_fft] * window for s in starts])
    mags = np.abs(np.fft.rfft(frames, axis=-1)).T
    fb, _ = mel_filterbank(cfg)
    return np.log1p(fb @ mags)


def embed_from_mel(spectrogram: np.ndarray) -> np.ndarray:
    """Pool a Mel spectrogram into a fixed vector: mean over frames."""
    spectrogram = np.asarray(spectrogram, dtype=np.float64)
    if spectrogram.ndim != 2:
        raise ValueError("spectrogram must be 2-D [n_mels x frames]")
    return spectrogram.mean(axis=1)


def l2_normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm < ZERO_NORM_EPS:
        raise ValueError("cannot normalize a zero vector")
    return v / norm


@dataclass
class EmbeddingTable:
    """Per-word feature vectors for one assisting modality (frozen)."""

    modality: Modality
    source: str
    dim: int
    vectors: dict[int, np.ndarray] = field(default_factory=dict)

    def validate(self, n_words: int = 48) -> None:
        if sorted(self.vectors) != list(range(n_words)):
            missing = sorted(set(range(n_words)) - set(self.vectors))
            raise ValueError(f"incomplete table: missing word_ids {missing[:5]}"
                             if missing else f"unexpected word_ids {sorted(self.vectors)[:5]}")
        for wid, v in self.vectors.items():
            if v.shape != (self.dim,):
                raise ValueError(f"word {wid}: dim {v.shape} != ({self.dim},)")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"word {wid}: non-finite vector")
            if abs(float(np.linalg.norm(v)) - 1.0) > 1e-6:
                raise ValueError(f"word {wid}: vector not unit-normalized")

    def matrix(self) -> np.ndarray:
        """Vectors stacked in word_id order, shape [n_words x dim]."""
        return np.stack([self.vectors[w] for w in sorted(self.vectors)])


def _reject_duplicate_keys(pairs):
    d = {}
    for k, v in pairs:
        if k in d:
            raise ValueError(f"duplicate key {k!r} in embedding JSON")
        d[k] = v
    return d


def load_embedding_table(path: str | Path, corpus: list[CorpusEntry]) -> EmbeddingTable:
    """Load and validate an embedding-table JSON, normalizing every vector.

    Schema: {"modality": "text"|"speech", "source": tag, "dim": N,
    "vectors": {"<word_id>": [floats...], ...}} with one entry per corpus
    word. Raises on missing/duplicate ids, dim mismatch, non-finite values,
    and zero vectors.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        raw = json.load(fh, object_pairs_hook=_reject_duplicate_keys)
    for key in ("modality", "source", "dim", "vectors"):
        if key not in raw:
            raise ValueError(f"{path}: missing field {key!r}")
    modality = Modality(raw["modality"])
    dim = int(raw["dim"])
    vectors: dict[int, np.ndarray] = {}
    for key, values in raw["vectors"].items():
        wid = int(key)
        if wid in vectors:
            raise ValueError(f"{path}: duplicate word_id {wid}")
        v = np.asarray(values, dtype=np.float64)
        if v.shape != (dim,):
            raise ValueError(f"{path}: word {wid} has dim {v.shape[0] if v.ndim == 1 else v.shape}, expected {dim}")
        if not np.all(np.isfinite(v)):
            raise ValueError(f"{path}: word {wid} has non-finite values")
        vectors[wid] = l2_normalize(v)
    table = EmbeddingTable(modality=modality, source=str(raw["source"]), dim=dim, vectors=vectors)
    table.validate(n_words=len(corpus))
    return table


def write_embedding_table(table: EmbeddingTable, path: str | Path) -> None:
    payload = {
        "modality": table.modality.value,
        "source": table.source,
        "dim": table.dim,
        "vectors": {str(w): [float(x) for x in v] for w, v in sorted(table.vectors.items())},
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def pseudo_embedding_table(
    corpus: list[CorpusEntry],
    modality: Modality,
    dim: int = 64,
    seed: int = 0,
    structure: TaskKind | None = None,
    spread: float = 0.3,
    crowding: float = 0.0,
    source: str = "pseudo",
) -> EmbeddingTable:
    """Deterministic random unit vectors, optionally class-structured.

    With ``structure`` set, words sharing that task's class share a class
    center; ``spread`` in [0, 1] blends in per-word noise (0 = identical
    within class, 1 = fully random). ``crowding`` in [0, 1) pulls every
    vector toward one shared direction, raising all pairwise similarities
    (crowded geometries make synthetic decoding tasks harder at a given
    noise level).
    """
    if not 0.0 <= spread <= 1.0:
        raise ValueError("spread must be in [0, 1]")
    if not 0.0 <= crowding < 1.0:
        raise ValueError("crowding must be in [0, 1)")
    rng = derive_rng(seed, 0xE0BED)
    shared = l2_normalize(rng.standard_normal(dim))
    vectors: dict[int, np.ndarray] = {}
    centers: dict[int, np.ndarray] = {}
    if structure is not None:
        labels = {e.word_id: task_label(e, structure, corpus) for e in corpus}
        for lab in sorted(set(labels.values())):
            centers[lab] = l2_normalize(rng.standard_normal(dim))
    for entry in corpus:
        noise = rng.standard_normal(dim)
        if structure is None:
            v = noise / np.sqrt(dim)
        else:
            v = (1.0 - spread) * centers[labels[entry.word_id]] + spread * noise / np.sqrt(dim)
        v = crowding * shared + (1.0 - crowding) * v
        vectors[entry.word_id] = l2_normalize(v)
    table = EmbeddingTable(modality=modality, source=source, dim=dim, vectors=vectors)
    table.validate(n_words=len(corpus))
    return table


def load_wav(path: str | Path) -> tuple[np.ndarray, float]:
    """Read a mono WAV file (16-bit PCM or 32-bit float) to float64 in [-1, 1]."""
    from scipy.io import wavfile

    fs, data = wavfile.read(str(path))
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono audio, got shape {data.shape}")
    if data.dtype == np.int16:
        audio = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        audio = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}")
    return audio, float(fs)


def mel_table_from_audio(
    audio_by_word: dict[int, np.ndarray],
    corpus: list[CorpusEntry],
    cfg: MelConfig | None = None,
    source: str = "mel",
) -> EmbeddingTable:
    """Build a speech table by Mel-pooling one audio clip per word."""
    if cfg is None:
        cfg = MelConfig()
    vectors = {
        wid: l2_normalize(embed_from_mel(mel_spectrogram(audio, cfg)))
        for wid, audio in audio_by_word.items()
    }
    table = EmbeddingTable(modality=Modality.SPEECH, source=source, dim=cfg.n_mels, vectors=vectors)
    table.validate(n_words=len(corpus))
    return table
