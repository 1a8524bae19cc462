"""Fixed per-class text and speech embeddings."""

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datasets import COLORS, DIGIT_WORDS

VOCAB = DIGIT_WORDS + COLORS
D_TOKEN = 13


class UnknownTokenError(KeyError):
    pass


@dataclass
class TokenTable:
    vectors: dict
    source: str = "synthetic"

    def __post_init__(self):
        dims = {len(v) for v in self.vectors.values()}
        if len(dims) != 1:
            raise ValueError(f"token vectors disagree on dimension: {sorted(dims)}")

    @property
    def dim(self):
        return len(next(iter(self.vectors.values())))


def synth_token_table(vocab=VOCAB, d_tok=D_TOKEN, seed=0):
    """Seeded Gaussian rows projected to the unit sphere."""
    if not vocab:
        raise ValueError("vocab must be non-empty")
    rng = np.random.default_rng([seed, 13])
    rows = rng.standard_normal((len(vocab), d_tok))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    return TokenTable({tok: rows[i] for i, tok in enumerate(vocab)}, source="synthetic")


def load_token_table(path):
    """Parse 'token f1 f2 ...' lines; tokens are lowercased."""
    vectors = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        try:
            vectors[parts[0].lower()] = np.array([float(x) for x in parts[1:]])
        except ValueError:
            raise ValueError(f"{path}:{lineno}: non-numeric value in embedding row") from None
    if not vectors:
        raise ValueError(f"{path}: no embedding rows")
    return TokenTable(vectors, source=f"file:{Path(path).name}")


def save_token_table(table, path):
    lines = [tok + " " + " ".join(repr(float(x)) for x in vec) for tok, vec in table.vectors.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def embed_text(tokens, table):
    missing = [t for t in tokens if t not in table.vectors]
    if missing:
        raise UnknownTokenError(f"tokens not in table: {missing}")
    return np.concatenate([np.asarray(table.vectors[t], dtype=np.float64) for t in tokens])


# --- speech ---------------------------------------------------------------

@dataclass
class SpeechClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def hamming(n):
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * np.arange(n) / (n - 1))


def dct2_matrix(n_in, n_out=None):
    """Orthonormal DCT-II basis as an (n_out, n_in) matrix."""
    n_out = n_in if n_out is None else n_out
    k = np.arange(n_out)[:, None]
    i = np.arange(n_in)[None, :]
    basis = np.cos(np.pi * k * (2 * i + 1) / (2 * n_in)) * np.sqrt(2.0 / n_in)
    basis[0] /= np.sqrt(2.0)
    return basis


def mel_filterbank(n_mels, n_fft, sample_rate, f_low=0.0, f_high=None):
    """Triangular filters on equally spaced mel points, as (n_mels, n_fft//2 + 1)."""
    f_high = sample_rate / 2.0 if f_high is None else f_high
    mel_pts = np.linspace(hz_to_mel(f_low), hz_to_mel(f_high), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    bins = np.fft.rfftfreq(n_fft, 1.0 / sample_rate)
    fb = np.zeros((n_mels, len(bins)))
    for m in range(n_mels):
        lo, mid, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        rise = (bins - lo) / (mid - lo)
        fall = (hi - bins) / (hi - mid)
        fb[m] = np.maximum(0.0, np.minimum(rise, fall))
    return fb


def frame_signal(samples, frame_len, hop):
    n = 1 + (len(samples) - frame_len) // hop
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n)[:, None]
    return samples[idx]


def mfcc(clip, n_coeffs=13, frame_ms=25, hop_ms=10, n_mels=26):
    """Frame-wise MFCCs, shape (frames, n_coeffs)."""
    x = np.asarray(clip.samples, dtype=np.float64)
    frame_len = int(round(clip.sample_rate * frame_ms / 1000.0))
    hop = int(round(clip.sample_rate * hop_ms / 1000.0))
    if len(x) == 0 or len(x) < frame_len:
        raise ValueError(f"clip of {len(x)} samples is shorter than one {frame_len}-sample frame")
    n_fft = 1 << (frame_len - 1).bit_length()
    frames = frame_signal(x, frame_len, hop) * hamming(frame_len)
    power = np.abs(np.fft.rfft(frames, n_fft)) ** 2
    energies = power @ mel_filterbank(n_mels, n_fft, clip.sample_rate).T
    log_e = np.log(np.maximum(energies, np.finfo(np.float64).tiny))
    return log_e @ dct2_matrix(n_mels, n_coeffs).T


def clip_vector(clip, **kw):
    """Mean of the frame-wise MFCCs: one 13-vector per clip."""
    return mfcc(clip, **kw).mean(axis=0)


def embed_speech(clips, **kw):
    """Concatenate one aggregated MFCC vector per spoken word."""
    return np.concatenate([clip_vector(c, **kw) for c in clips])


def synth_word_clip(word, sample_rate=24000, duration=0.5, vocab=VOCAB):
    """Deterministic dual-tone stand-in for a spoken word.

    Each vocabulary entry gets its own pair of frequencies and a short
    amplitude envelope, so clips differ in their spectra.
    """
    i = vocab.index(word)
    t = np.arange(int(round(sample_rate * duration))) / sample_rate
    f1 = 220.0 * 2 ** (i / 4.0)
    f2 = 1.0e3 + 600.0 * i
    env = np.sin(np.pi * t / duration) ** 2
    return SpeechClip(env * (0.6 * np.sin(2 * np.pi * f1 * t) + 0.4 * np.sin(2 * np.pi * f2 * t)), sample_rate)


def tone_clip(freq, sample_rate=24000, duration=0.5):
    t = np.arange(int(round(sample_rate * duration))) / sample_rate
    return SpeechClip(np.sin(2 * np.pi * freq * t), sample_rate)


def read_wav(path):
    """16-bit PCM mono WAV -> SpeechClip with samples in [-1, 1)."""
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit mono PCM")
        rate = w.getframerate()
        data = np.frombuffer(w.readframes(w.getnframes()), dtype="<i2")
    return SpeechClip(data.astype(np.float64) / 32768.0, rate)


def write_wav(path, clip):
    pcm = np.clip(np.round(np.asarray(clip.samples) * 32767), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(clip.sample_rate)
        w.writeframes(pcm.tobytes())


def load_word_clips(directory, words=VOCAB, sample_rate=24000):
    """Read ``<word>.wav`` per word from ``directory``; the rate must match."""
    clips = {}
    for word in words:
        path = Path(directory) / f"{word}.wav"
        if not path.exists():
            continue
        clip = read_wav(path)
        if clip.sample_rate != sample_rate:
            raise ValueError(f"{path}: sample rate {clip.sample_rate} != configured {sample_rate} (no resampling)")
        clips[word] = clip
    return clips


class ClassEmbedder:
    """Caches one fixed embedding per class token sequence.

    ``modality`` is 'text' (token-table lookup) or 'speech' (MFCC of per-word clips).
    """

    def __init__(self, modality, table=None, clips=None, sample_rate=24000):
        if modality not in ("text", "speech"):
            raise ValueError(f"unknown modality {modality!r}")
        self.modality = modality
        self.table = table if table is not None else synth_token_table()
        self.clips = clips or {}
        self.sample_rate = sample_rate
        self._word_cache = {}
        self._cache = {}

    def _word_vector(self, word):
        if word not in self._word_cache:
            if word not in VOCAB and word not in self.clips:
                raise UnknownTokenError(f"tokens not in vocabulary: {[word]}")
            clip = self.clips.get(word) or synth_word_clip(word, self.sample_rate)
            self._word_cache[word] = clip_vector(clip)
        return self._word_cache[word]

    def __call__(self, tokens):
        key = tuple(tokens)
        if key not in self._cache:
            if self.modality == "text":
                vec = embed_text(key, self.table)
            else:
                vec = np.concatenate([self._word_vector(w) for w in key])
            vec.setflags(write=False)
            self._cache[key] = vec
        return self._cache[key]

    def matrix(self, combos):
        return np.stack([self(c.tokens()) for c in combos])
