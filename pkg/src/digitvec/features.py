"""Acoustic front-end: framing, mel cepstra, deltas, energy VAD and CMVN.

The pipeline mirrors a standard MFCC front-end: pre-emphasized, Hamming
windowed 25 ms frames with 10 ms shift, a mel filterbank with log
compression and a DCT, delta and double-delta appending (60 dimensions
total by default), an adaptive energy-threshold voicing mask and
per-utterance cepstral mean/variance normalization over voiced frames.

Silence handling deviates from model-based VAD on purpose: frames are
kept with a boolean voicing mask instead of being dropped, and downstream
stages consume voiced frames only. The 60 dimensions are realized as
20 static (19 cepstra + c0) + deltas + double deltas; both splits are
configurable since only the total is fixed by convention.
"""

from dataclasses import dataclass, field
import wave

import numpy as np
from scipy.fftpack import dct

from .errors import ConfigError, EmptyUtterance

LOG_FLOOR = 1e-10
CMVN_VAR_FLOOR = 1e-10


@dataclass
class AudioBuffer:
    """Mono PCM audio held as float samples."""

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")


@dataclass
class FeatureConfig:
    frame_len_ms: float = 25.0
    frame_shift_ms: float = 10.0
    num_mel_filters: int = 24
    num_cepstra: int = 20
    include_c0: bool = True
    delta_window: int = 2
    pre_emphasis: float = 0.97
    voicing_threshold: float = 0.5

    def __post_init__(self):
        if self.frame_shift_ms >= self.frame_len_ms:
            raise ConfigError("frame shift must be smaller than frame length")
        if self.num_cepstra > self.num_mel_filters:
            raise ConfigError("cannot keep more cepstra than mel filters")
        if self.delta_window < 1:
            raise ConfigError("delta_window must be >= 1")

    def frame_len(self, sample_rate):
        return int(round(self.frame_len_ms * sample_rate / 1000.0))

    def frame_shift(self, sample_rate):
        return int(round(self.frame_shift_ms * sample_rate / 1000.0))

    @property
    def feature_dim(self):
        return 3 * self.num_cepstra


@dataclass
class FeatureMatrix:
    """Per-utterance feature rows plus voicing mask and labels."""

    frames: np.ndarray
    voiced_mask: np.ndarray
    utterance_id: str = ""
    digit_string: str = ""

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        self.voiced_mask = np.asarray(self.voiced_mask, dtype=bool)
        if self.voiced_mask.shape[0] != self.frames.shape[0]:
            raise ConfigError("voiced_mask length must equal frame count")

    @property
    def num_frames(self):
        return self.frames.shape[0]

    @property
    def dim(self):
        return self.frames.shape[1]

    def voiced_frames(self):
        return self.frames[self.voiced_mask]


def read_wav(path):
    """Read a mono PCM16 WAV file into an AudioBuffer."""
    with wave.open(str(path), "rb") as wf:
        if wf.getnchannels() != 1:
            raise ConfigError(f"{path}: expected mono audio")
        if wf.getsampwidth() != 2:
            raise ConfigError(f"{path}: expected 16-bit PCM")
        data = wf.readframes(wf.getnframes())
        rate = wf.getframerate()
    samples = np.frombuffer(data, dtype="<i2").astype(np.float64)
    return AudioBuffer(samples, rate)


def write_wav(path, audio):
    """Write an AudioBuffer as mono PCM16."""
    clipped = np.clip(np.round(audio.samples), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(audio.sample_rate)
        wf.writeframes(clipped.tobytes())


def frame_signal(audio, cfg):
    """Slice audio into pre-emphasized, Hamming-windowed frames.

    Frame count is floor((len - frame_len) / frame_shift) + 1.
    """
    flen = cfg.frame_len(audio.sample_rate)
    shift = cfg.frame_shift(audio.sample_rate)
    x = audio.samples
    if x.shape[0] < flen:
        raise EmptyUtterance(
            f"audio of {x.shape[0]} samples shorter than one frame ({flen})"
        )
    emphasized = np.empty_like(x)
    emphasized[0] = x[0]
    emphasized[1:] = x[1:] - cfg.pre_emphasis * x[:-1]

    n_frames = (x.shape[0] - flen) // shift + 1
    idx = np.arange(flen)[None, :] + shift * np.arange(n_frames)[:, None]
    window = np.hamming(flen)
    return emphasized[idx] * window[None, :]


def mel_filterbank(num_filters, nfft, sample_rate):
    """Triangular mel filterbank matrix of shape (num_filters, nfft//2+1)."""

    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    mel_points = np.linspace(0.0, hz_to_mel(sample_rate / 2.0), num_filters + 2)
    hz_points = mel_to_hz(mel_points)
    bins = hz_points * nfft / sample_rate
    fb = np.zeros((num_filters, nfft // 2 + 1))
    freqs = np.arange(nfft // 2 + 1)
    for m in range(num_filters):
        left, center, right = bins[m], bins[m + 1], bins[m + 2]
        up = (freqs - left) / max(center - left, 1e-12)
        down = (right - freqs) / max(right - center, 1e-12)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


def compute_cepstra(frames, cfg, sample_rate=16000):
    """Mel cepstra per frame: power spectrum -> mel -> log -> DCT-II.

    c0 is the mean log filterbank energy, so a power scaling of the input
    shifts c0 by the log factor and leaves higher cepstra untouched.
    """
    if cfg.num_cepstra > cfg.num_mel_filters:
        raise ConfigError("num_cepstra must not exceed num_mel_filters")
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    nfft = 1
    while nfft < frames.shape[1]:
        nfft *= 2
    spectrum = np.abs(np.fft.rfft(frames, n=nfft, axis=1)) ** 2
    fb = mel_filterbank(cfg.num_mel_filters, nfft, sample_rate)
    logmel = np.log(np.maximum(spectrum @ fb.T, LOG_FLOOR))
    ceps = dct(logmel, type=2, norm="ortho", axis=1)
    # rescale the DC basis so c0 equals the mean log filterbank energy
    ceps[:, 0] /= np.sqrt(cfg.num_mel_filters)
    if cfg.include_c0:
        return ceps[:, : cfg.num_cepstra]
    return ceps[:, 1 : cfg.num_cepstra + 1]


def _delta(x, window):
    """Regression-formula deltas with edge replication."""
    n = x.shape[0]
    norm = 2.0 * sum(k * k for k in range(1, window + 1))
    padded = np.concatenate(
        [np.repeat(x[:1], window, axis=0), x, np.repeat(x[-1:], window, axis=0)]
    )
    out = np.zeros_like(x)
    for k in range(1, window + 1):
        out += k * (padded[window + k : window + k + n] - padded[window - k : window - k + n])
    return out / norm


def append_deltas(static, delta_window):
    """Append deltas and double-deltas: output dim is 3x the input dim."""
    static = np.asarray(static, dtype=np.float64)
    if static.shape[0] < 2 * delta_window + 1:
        raise EmptyUtterance(
            f"{static.shape[0]} frames too few for delta window {delta_window}"
        )
    d = _delta(static, delta_window)
    dd = _delta(d, delta_window)
    return np.hstack([static, d, dd])


def frame_log_energy(frames):
    """Per-frame log energy of (windowed) frames."""
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    return np.log(np.maximum(np.sum(frames**2, axis=1), LOG_FLOOR))


def detect_voiced(energy, threshold_frac=0.5):
    """Voicing mask from an adaptive energy threshold.

    A frame is voiced when its log energy exceeds ``threshold_frac`` times
    the utterance mean log energy.
    """
    energy = np.asarray(energy, dtype=np.float64)
    mask = energy > threshold_frac * energy.mean()
    if not mask.any():
        raise EmptyUtterance("no frame above the voicing threshold")
    return mask


def apply_cmvn(features):
    """Normalize each dimension to zero mean, unit variance over voiced frames.

    Dimensions with (near) zero variance are mean-removed only.
    """
    if features.num_frames < 2:
        raise EmptyUtterance("CMVN needs at least two frames")
    voiced = features.voiced_frames()
    if voiced.shape[0] < 2:
        raise EmptyUtterance("CMVN needs at least two voiced frames")
    mean = voiced.mean(axis=0)
    var = np.maximum(voiced.var(axis=0), CMVN_VAR_FLOOR)
    scale = np.where(var > CMVN_VAR_FLOOR, 1.0 / np.sqrt(var), 1.0)
    normed = (features.frames - mean) * scale
    return FeatureMatrix(
        normed,
        features.voiced_mask.copy(),
        utterance_id=features.utterance_id,
        digit_string=features.digit_string,
    )


def extract_features(audio, cfg, utterance_id="", digit_string=""):
    """Full front-end: frames -> cepstra -> deltas -> VAD -> CMVN."""
    frames = frame_signal(audio, cfg)
    energy = frame_log_energy(frames)
    mask = detect_voiced(energy, cfg.voicing_threshold)
    static = compute_cepstra(frames, cfg, audio.sample_rate)
    full = append_deltas(static, cfg.delta_window)
    feats = FeatureMatrix(full, mask, utterance_id=utterance_id, digit_string=digit_string)
    return apply_cmvn(feats)
