"""Synthetic corpus generation, manifests, trial lists and model
persistence.

The synthetic generator stands in for a licensed digit-string corpus: it
emits feature matrices directly from a known generative model (per-digit
latent state means, per-speaker and per-utterance offsets, Gaussian
noise) so every pipeline stage can be checked against ground truth. An
optional audio mode renders tone complexes to WAV to exercise the
acoustic front-end.

Persistence uses a single-file container: a text header with a versioned,
self-describing JSON section table followed by raw little-endian binary
sections, checksummed individually. Round trips are bit-exact.
"""

from dataclasses import dataclass, field, asdict
import hashlib
import json
import logging

import numpy as np

from .errors import ConfigError, CorruptBundle, ParseError, VersionError
from .features import AudioBuffer, FeatureConfig, FeatureMatrix
from .hmm import DigitHmm, FlatGmm
from .ivector import IVectorExtractor
from .compensation import Transform, TransformChain
from .scoring import CohortStats, EnrollModel

log = logging.getLogger(__name__)

MAGIC = b"DIGITVEC"
FORMAT_VERSION = 1
_DTYPES = {"<f8": np.dtype("<f8"), "<i8": np.dtype("<i8")}


# ---------------------------------------------------------------------------
# container primitives


def write_container(path, meta, arrays):
    """Write named arrays plus JSON metadata to a single checksummed file."""
    sections = []
    payload = bytearray()
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype.kind == "f":
            dtype = "<f8"
        elif arr.dtype.kind in "uib":
            dtype = "<i8"
        else:
            raise ConfigError(f"unsupported dtype for section {name}: {arr.dtype}")
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes()
        sections.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": dtype,
            "offset": len(payload),
            "sha256": hashlib.sha256(raw).hexdigest(),
        })
        payload.extend(raw)
    header = json.dumps(
        {"version": FORMAT_VERSION, "meta": meta, "sections": sections},
        sort_keys=True,
    ).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC + b"\n")
        fh.write(str(len(header)).encode() + b"\n")
        fh.write(header + b"\n")
        fh.write(bytes(payload))


def read_container(path):
    """Read a container file back into (meta, arrays)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(MAGIC + b"\n"):
        raise CorruptBundle(f"{path}: bad magic")
    rest = blob[len(MAGIC) + 1 :]
    try:
        size_line, rest = rest.split(b"\n", 1)
        header_len = int(size_line)
        header = json.loads(rest[:header_len])
        payload = rest[header_len + 1 :]
    except (ValueError, json.JSONDecodeError) as exc:
        raise CorruptBundle(f"{path}: unreadable header") from exc
    if header.get("version") != FORMAT_VERSION:
        raise VersionError(
            f"{path}: format version {header.get('version')}, expected {FORMAT_VERSION}"
        )
    arrays = {}
    for sec in header["sections"]:
        dtype = _DTYPES[sec["dtype"]]
        count = int(np.prod(sec["shape"], dtype=np.int64)) if sec["shape"] else 1
        start = sec["offset"]
        raw = payload[start : start + count * dtype.itemsize]
        if len(raw) != count * dtype.itemsize:
            raise CorruptBundle(f"{path}: truncated section {sec['name']}")
        if hashlib.sha256(raw).hexdigest() != sec["sha256"]:
            raise CorruptBundle(f"{path}: checksum mismatch in section {sec['name']}")
        arrays[sec["name"]] = np.frombuffer(raw, dtype=dtype).reshape(sec["shape"]).copy()
    return header["meta"], arrays


# ---------------------------------------------------------------------------
# manifests and trials


@dataclass
class UtteranceEntry:
    utt_id: str
    speaker_id: str
    gender: str
    split: str  # background | development | evaluation
    digit_string: str
    path: str = "-"  # "-" marks synthetic feature-only utterances
    role: str = "train"  # train | enroll | test


@dataclass
class Manifest:
    utterances: list = field(default_factory=list)

    def split(self, name):
        return [u for u in self.utterances if u.split == name]

    def speakers(self, split=None):
        seen = []
        for u in self.utterances:
            if split is not None and u.split != split:
                continue
            if u.speaker_id not in seen:
                seen.append(u.speaker_id)
        return seen

    def check_disjoint_splits(self):
        by_split = {}
        for u in self.utterances:
            by_split.setdefault(u.split, set()).add(u.speaker_id)
        splits = list(by_split)
        for i, a in enumerate(splits):
            for b in splits[i + 1 :]:
                overlap = by_split[a] & by_split[b]
                if overlap:
                    raise ConfigError(
                        f"splits {a} and {b} share speakers: {sorted(overlap)}"
                    )


def save_manifest(path, manifest):
    with open(path, "w") as fh:
        for u in manifest.utterances:
            fh.write(
                f"{u.utt_id} {u.speaker_id} {u.gender} {u.split} "
                f"{u.digit_string} {u.path} {u.role}\n"
            )


def load_manifest(path):
    manifest = Manifest()
    with open(path) as fh:
        for i, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) not in (6, 7):
                raise ParseError(f"expected 6 or 7 fields, got {len(parts)}", i)
            role = parts[6] if len(parts) == 7 else "train"
            manifest.utterances.append(UtteranceEntry(*parts[:6], role))
    return manifest


@dataclass
class Trial:
    enroll_id: str
    test_id: str
    digit_string: str
    label: str = ""  # target | nontarget | ""


def parse_trial_list(text):
    """Parse trials from text, one `enroll test digits [label]` per line."""
    trials = []
    for i, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) not in (3, 4):
            raise ParseError(f"expected 3 or 4 fields, got {len(parts)}", i)
        if not parts[2].isdigit():
            raise ParseError(f"digit string {parts[2]!r} is not numeric", i)
        label = parts[3] if len(parts) == 4 else ""
        if label not in ("", "target", "nontarget"):
            raise ParseError(f"unknown label {label!r}", i)
        trials.append(Trial(parts[0], parts[1], parts[2], label))
    if not trials:
        log.warning("empty trial list")
    return trials


def format_trial_list(trials):
    lines = []
    for t in trials:
        suffix = f" {t.label}" if t.label else ""
        lines.append(f"{t.enroll_id} {t.test_id} {t.digit_string}{suffix}")
    return "\n".join(lines) + "\n"


def make_trial_list(manifest):
    """All eval enroll-model x eval test-utterance trials, labeled."""
    models = manifest.speakers("evaluation")
    tests = [u for u in manifest.split("evaluation") if u.role == "test"]
    trials = []
    for spk in models:
        for u in tests:
            label = "target" if u.speaker_id == spk else "nontarget"
            trials.append(Trial(spk, u.utt_id, u.digit_string, label))
    return trials


# ---------------------------------------------------------------------------
# synthetic corpus


@dataclass
class SynthConfig:
    n_speakers: int = 40
    utts_per_speaker: int = 6
    test_utts_per_speaker: int = 6
    digits_per_utt: int = 10
    test_digits_per_utt: int = 5
    feature_dim: int = 10
    states_per_digit: int = 4
    frames_per_state_mean: float = 6.0
    frames_per_state_jitter: float = 1.0
    speaker_offset_scale: float = 1.0
    channel_offset_scale: float = 0.2
    noise_scale: float = 0.2
    enroll_utts: int = 3
    seed: int = 0

    def __post_init__(self):
        for name in ("n_speakers", "utts_per_speaker", "digits_per_utt",
                     "feature_dim", "states_per_digit", "enroll_utts"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("speaker_offset_scale", "channel_offset_scale", "noise_scale"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")


@dataclass
class GroundTruth:
    """Generative latents of a synthetic corpus, for oracle tests."""

    state_means: np.ndarray  # (10, S, F)
    speaker_offsets: dict  # speaker_id -> (10, F)
    channel_offsets: dict  # utt_id -> (F,)
    alignments: dict  # utt_id -> (digit_position, state_index) arrays


def _digit_string(rng, length):
    perm = rng.permutation(10)
    if length <= 10:
        return "".join(str(d) for d in perm[:length])
    extra = rng.integers(0, 10, size=length - 10)
    return "".join(str(d) for d in np.concatenate([perm, extra]))


def _split_of(index, n_speakers):
    third = max(n_speakers // 3, 1)
    if index < third:
        return "background"
    if index < 2 * third:
        return "development"
    return "evaluation"


def generate_synthetic_corpus(cfg):
    """Deterministic synthetic corpus with known ground truth.

    Frames are state mean + speaker offset + channel offset + noise. Every
    utterance draws its own RNG stream from (seed, utterance index), so
    generation order or parallelism cannot change the output.
    """
    root_rng = np.random.default_rng((cfg.seed, 0))
    S, F = cfg.states_per_digit, cfg.feature_dim
    state_means = root_rng.standard_normal((10, S, F))

    manifest = Manifest()
    features = {}
    truth = GroundTruth(state_means, {}, {}, {})

    utt_counter = 0
    for spk_idx in range(cfg.n_speakers):
        speaker_id = f"spk{spk_idx:03d}"
        gender = "m" if spk_idx % 2 == 0 else "f"
        split = _split_of(spk_idx, cfg.n_speakers)
        spk_rng = np.random.default_rng((cfg.seed, 1, spk_idx))
        offsets = cfg.speaker_offset_scale * spk_rng.standard_normal((10, F))
        truth.speaker_offsets[speaker_id] = offsets

        n_full = cfg.utts_per_speaker
        n_test = cfg.test_utts_per_speaker if split != "background" else 0
        for u in range(n_full + n_test):
            is_test = u >= n_full
            length = cfg.test_digits_per_utt if is_test else cfg.digits_per_utt
            utt_id = f"{speaker_id}_u{u:03d}"
            rng = np.random.default_rng((cfg.seed, 2, utt_counter))
            utt_counter += 1
            digits = _digit_string(rng, length)
            channel = cfg.channel_offset_scale * rng.standard_normal(F)
            truth.channel_offsets[utt_id] = channel

            rows, digit_pos, state_idx = [], [], []
            for pos, ch in enumerate(digits):
                d = int(ch)
                for s in range(S):
                    n_frames = max(
                        1,
                        int(round(rng.normal(cfg.frames_per_state_mean,
                                             cfg.frames_per_state_jitter))),
                    )
                    base = state_means[d, s] + offsets[d] + channel
                    noise = cfg.noise_scale * rng.standard_normal((n_frames, F))
                    rows.append(base[None, :] + noise)
                    digit_pos.extend([pos] * n_frames)
                    state_idx.extend([s] * n_frames)
            frames = np.concatenate(rows)
            truth.alignments[utt_id] = (
                np.array(digit_pos, dtype=np.int64),
                np.array(state_idx, dtype=np.int64),
            )
            role = "test" if is_test else ("enroll" if u < cfg.enroll_utts else "train")
            if split == "background":
                role = "train"
            features[utt_id] = FeatureMatrix(
                frames, np.ones(frames.shape[0], dtype=bool), utt_id, digits
            )
            manifest.utterances.append(
                UtteranceEntry(utt_id, speaker_id, gender, split, digits, "-", role)
            )
    manifest.check_disjoint_splits()
    return manifest, features, truth


def synthesize_audio(digit_string, alignment, sample_rate=16000,
                     frame_shift=160, amplitude=8000.0):
    """Tone-complex audio whose segments follow a synthetic alignment.

    Each (digit, state) pair maps to a fixed pair of sine frequencies so
    the acoustic front-end sees distinct, stable spectra per state.
    """
    digit_pos, state_idx = alignment
    samples = []
    for pos, s in zip(digit_pos, state_idx):
        d = int(digit_string[pos])
        f1 = 300.0 + 120.0 * d + 37.0 * s
        f2 = 2.3 * f1
        t = (len(samples) * frame_shift + np.arange(frame_shift)) / sample_rate
        chunk = amplitude * (np.sin(2 * np.pi * f1 * t) + 0.5 * np.sin(2 * np.pi * f2 * t))
        samples.append(chunk)
    return AudioBuffer(np.concatenate(samples), sample_rate)


def save_features(path, feature_list):
    """Write a list of FeatureMatrix to one container file."""
    meta = {"kind": "features", "utterances": []}
    arrays = {}
    for i, feats in enumerate(feature_list):
        meta["utterances"].append({
            "utt_id": feats.utterance_id,
            "digit_string": feats.digit_string,
        })
        arrays[f"utt/{i}/frames"] = feats.frames
        arrays[f"utt/{i}/voiced"] = feats.voiced_mask.astype(np.int64)
    write_container(path, meta, arrays)


def load_features(path):
    meta, arrays = read_container(path)
    if meta.get("kind") != "features":
        raise CorruptBundle(f"{path}: not a feature container")
    out = {}
    for i, entry in enumerate(meta["utterances"]):
        feats = FeatureMatrix(
            arrays[f"utt/{i}/frames"],
            arrays[f"utt/{i}/voiced"].astype(bool),
            entry["utt_id"],
            entry["digit_string"],
        )
        out[entry["utt_id"]] = feats
    return out


# ---------------------------------------------------------------------------
# model bundle


@dataclass
class ModelBundle:
    """Everything the scoring stage needs, in one container."""

    seed: int = 0
    feature_config: FeatureConfig = None
    hmms: dict = field(default_factory=dict)
    flats: dict = field(default_factory=dict)
    extractors: dict = field(default_factory=dict)
    chains: dict = field(default_factory=dict)
    cohort_models: list = field(default_factory=list)
    cohort_tests: list = field(default_factory=list)  # (id, digits, vectors, gender)
    training_log: dict = field(default_factory=dict)


def save_bundle(path, bundle):
    meta = {
        "kind": "bundle",
        "seed": bundle.seed,
        "feature_config": asdict(bundle.feature_config) if bundle.feature_config else None,
        "training_log": bundle.training_log,
        "digits": sorted(bundle.hmms),
        "chain_kinds": {
            str(d): [step.kind for step in chain.steps]
            for d, chain in bundle.chains.items()
        },
        "extractor_meta": {
            str(d): {"seed": ext.seed, "iteration_log": list(ext.iteration_log)}
            for d, ext in bundle.extractors.items()
        },
        "cohort_models": [
            {"model_id": m.model_id, "gender": m.gender, "digits": sorted(m.digit_means)}
            for m in bundle.cohort_models
        ],
        "cohort_tests": [
            {"test_id": t[0], "digit_string": t[1], "gender": t[3]}
            for t in bundle.cohort_tests
        ],
    }
    arrays = {}
    for d, hmm in bundle.hmms.items():
        for name in ("weights", "means", "variances", "trans", "occupancy"):
            arrays[f"hmm/{d}/{name}"] = getattr(hmm, name)
    for d, flat in bundle.flats.items():
        for name in ("weights", "means", "variances"):
            arrays[f"flat/{d}/{name}"] = getattr(flat, name)
    for d, ext in bundle.extractors.items():
        arrays[f"ext/{d}/m"] = ext.m
        arrays[f"ext/{d}/T"] = ext.T
        arrays[f"ext/{d}/sigma"] = ext.sigma
    for d, chain in bundle.chains.items():
        for i, step in enumerate(chain.steps):
            if step.matrix is not None:
                arrays[f"chain/{d}/{i}"] = step.matrix
    for i, model in enumerate(bundle.cohort_models):
        for d, vec in model.digit_means.items():
            arrays[f"cm/{i}/{d}"] = vec
    for i, (_, digits, vectors, _) in enumerate(bundle.cohort_tests):
        for j, vec in enumerate(vectors):
            arrays[f"ct/{i}/{j}"] = vec
    write_container(path, meta, arrays)


def load_bundle(path):
    meta, arrays = read_container(path)
    if meta.get("kind") != "bundle":
        raise CorruptBundle(f"{path}: not a model bundle")
    bundle = ModelBundle(seed=meta["seed"], training_log=meta["training_log"])
    if meta["feature_config"]:
        bundle.feature_config = FeatureConfig(**meta["feature_config"])
    for d in meta["digits"]:
        bundle.hmms[d] = DigitHmm(
            d,
            arrays[f"hmm/{d}/weights"],
            arrays[f"hmm/{d}/means"],
            arrays[f"hmm/{d}/variances"],
            arrays[f"hmm/{d}/trans"],
            arrays[f"hmm/{d}/occupancy"],
        )
        if f"flat/{d}/weights" in arrays:
            bundle.flats[d] = FlatGmm(
                d,
                arrays[f"flat/{d}/weights"],
                arrays[f"flat/{d}/means"],
                arrays[f"flat/{d}/variances"],
            )
        if f"ext/{d}/T" in arrays:
            ext_meta = meta["extractor_meta"][str(d)]
            flat = bundle.flats[d]
            bundle.extractors[d] = IVectorExtractor(
                d,
                arrays[f"ext/{d}/m"],
                arrays[f"ext/{d}/T"],
                arrays[f"ext/{d}/sigma"],
                flat.num_components,
                ext_meta["seed"],
                ext_meta["iteration_log"],
            )
        kinds = meta["chain_kinds"].get(str(d))
        if kinds is not None:
            chain = TransformChain(d)
            for i, kind in enumerate(kinds):
                chain.steps.append(Transform(kind, arrays.get(f"chain/{d}/{i}"), d))
            bundle.chains[d] = chain
    for i, entry in enumerate(meta["cohort_models"]):
        means = {d: arrays[f"cm/{i}/{d}"] for d in entry["digits"]}
        bundle.cohort_models.append(
            EnrollModel(entry["model_id"], means, entry["gender"])
        )
    for i, entry in enumerate(meta["cohort_tests"]):
        vectors = []
        j = 0
        while f"ct/{i}/{j}" in arrays:
            vectors.append(arrays[f"ct/{i}/{j}"])
            j += 1
        bundle.cohort_tests.append(
            (entry["test_id"], entry["digit_string"], vectors, entry["gender"])
        )
    return bundle
