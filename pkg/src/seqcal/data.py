"""Synthetic sequence-recognition task with controllable difficulty.

Samples are (frame sequence, label sequence) pairs. Each label token is
rendered as a short run of noisy feature frames around a per-token prototype
vector. Difficulty is controlled three ways: designated token pairs get
prototypes placed close together (perceptual confusability), labels are drawn
from a weighted lexicon (semantic regularity), and a configurable fraction of
samples is rendered at a higher noise level (hardness).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

LabelSequence = tuple[int, ...]

_SPLIT_CODES = {"train": 0, "val": 1, "test": 2}


@dataclass(frozen=True)
class Alphabet:
    """Finite token inventory. Index V is reserved for the CTC blank."""

    tokens: tuple[str, ...]

    def __post_init__(self):
        if len(self.tokens) < 2:
            raise ValueError("alphabet needs at least 2 tokens")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("token symbols must be unique")

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def blank_id(self) -> int:
        return len(self.tokens)

    def validate_sequence(self, ids: LabelSequence) -> None:
        for t in ids:
            if not (0 <= t < self.size):
                raise ValueError(f"token id {t} outside [0, {self.size})")


@dataclass(frozen=True)
class Sample:
    id: int
    frames: np.ndarray  # (T, D) float64
    label: LabelSequence
    hardness: float  # noise level used at generation time

    def __post_init__(self):
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ValueError("frames must be a T x D matrix with T >= 1")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("frames must be finite")


def _default_lexicon(
    vocab_size: int, n_words: int, min_len: int, max_len: int, seed: int
) -> tuple[tuple[LabelSequence, float], ...]:
    """Distinct random sequences with Zipf-like frequency weights."""
    rng = np.random.default_rng([seed, 0xBEEF])
    words: list[LabelSequence] = []
    seen = set()
    while len(words) < n_words:
        length = int(rng.integers(min_len, max_len + 1))
        w = tuple(int(t) for t in rng.integers(0, vocab_size, size=length))
        if w not in seen:
            seen.add(w)
            words.append(w)
    weights = 1.0 / (1.0 + np.arange(n_words))
    return tuple((w, float(wt)) for w, wt in zip(words, weights))


@dataclass(frozen=True)
class TaskSpec:
    """Full description of a synthetic recognition task.

    Noise levels live on a [0, 1] scale (mirroring corruption severities);
    task difficulty is tuned through prototype_separation instead. A sample's
    stored hardness is the noise level it was rendered at.
    """

    alphabet: Alphabet
    feature_dim: int = 16
    prototype_separation: float = 3.0
    confusable_pairs: tuple[tuple[int, int, float], ...] = ()
    lexicon: tuple[tuple[LabelSequence, float], ...] = ()
    frames_per_token: tuple[int, int] = (1, 3)
    base_noise: float = 0.25
    hard_noise: float = 0.9
    hardness_ratio: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if self.prototype_separation <= 0:
            raise ValueError("prototype_separation must be > 0")
        if not self.lexicon:
            raise ValueError("lexicon must be nonempty")
        for word, weight in self.lexicon:
            self.alphabet.validate_sequence(word)
            if weight <= 0:
                raise ValueError("lexicon weights must be > 0")
        lo, hi = self.frames_per_token
        if not (1 <= lo <= hi):
            raise ValueError("frames_per_token range must satisfy 1 <= lo <= hi")
        if not (0.0 <= self.base_noise <= self.hard_noise <= 1.0):
            raise ValueError("need 0 <= base_noise <= hard_noise <= 1")
        if not (0.0 <= self.hardness_ratio <= 1.0):
            raise ValueError("hardness_ratio must be in [0, 1]")
        for a, b, sim in self.confusable_pairs:
            if a == b:
                raise ValueError("confusable pair must name two distinct tokens")
            self.alphabet.validate_sequence((a, b))
            if not (0.0 < sim < 1.0):
                raise ValueError("pair similarity must be in (0, 1)")

    def prototypes(self) -> np.ndarray:
        """Token prototype vectors, (V, D).

        Non-confusable pairs sit at distance >= prototype_separation (greedy
        farthest-point placement on a sphere, then rescaled); each confusable
        pair (a, b, sim) has b moved to distance (1 - sim) * separation from
        a. The resulting geometry is validated: every confusable pair must be
        strictly closer than every non-confusable pair.
        """
        v, d = self.alphabet.size, self.feature_dim
        rng = np.random.default_rng([self.seed, 0x70])
        pool = rng.standard_normal((max(512, 8 * v), d))
        pool /= np.linalg.norm(pool, axis=1, keepdims=True)
        chosen = [0]
        for _ in range(v - 1):
            dists = np.min(
                np.linalg.norm(pool[:, None, :] - pool[None, chosen, :], axis=2), axis=1
            )
            chosen.append(int(np.argmax(dists)))
        protos = pool[chosen].copy()
        gaps = np.linalg.norm(protos[:, None] - protos[None, :], axis=2)
        min_gap = np.min(gaps[np.triu_indices(v, k=1)])
        protos *= self.prototype_separation / min_gap

        confusable = set()
        for a, b, sim in self.confusable_pairs:
            direction = protos[b] - protos[a]
            direction /= np.linalg.norm(direction)
            protos[b] = protos[a] + (1.0 - sim) * self.prototype_separation * direction
            confusable.add(frozenset((a, b)))

        gaps = np.linalg.norm(protos[:, None] - protos[None, :], axis=2)
        conf_dists = [gaps[a, b] for a, b, _ in self.confusable_pairs]
        other = [
            gaps[i, j]
            for i in range(v)
            for j in range(i + 1, v)
            if frozenset((i, j)) not in confusable
        ]
        if conf_dists and other and max(conf_dists) >= min(other):
            raise ValueError(
                "confusable pairs are not strictly closer than all other pairs; "
                "lower pair similarities or reduce the number of pairs"
            )
        return protos


@dataclass(frozen=True)
class Dataset:
    samples: tuple[Sample, ...]
    spec: TaskSpec
    split: str

    def __post_init__(self):
        if self.split not in _SPLIT_CODES:
            raise ValueError(f"split must be one of {sorted(_SPLIT_CODES)}")
        ids = [s.id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise ValueError("sample ids must be unique")

    def __len__(self) -> int:
        return len(self.samples)

    def labels(self) -> list[LabelSequence]:
        return [s.label for s in self.samples]


def _sample_rng(spec: TaskSpec, split: str, sample_id: int) -> np.random.Generator:
    return np.random.default_rng([spec.seed, _SPLIT_CODES[split], sample_id])


def synth_dataset(spec: TaskSpec, n: int, split: str = "train") -> Dataset:
    """Generate n samples, reproducible from (spec.seed, split).

    Tokens equal to their predecessor are rendered with at least 2 frames so
    every label stays feasible for CTC (T >= |y| + number of adjacent repeats).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    protos = spec.prototypes()
    words = [w for w, _ in spec.lexicon]
    weights = np.array([wt for _, wt in spec.lexicon])
    weights = weights / weights.sum()
    lo, hi = spec.frames_per_token

    samples = []
    for i in range(n):
        rng = _sample_rng(spec, split, i)
        word = words[int(rng.choice(len(words), p=weights))]
        hard = rng.random() < spec.hardness_ratio
        sigma = spec.hard_noise if hard else spec.base_noise
        frames = []
        prev = None
        for tok in word:
            k = int(rng.integers(lo, hi + 1))
            if tok == prev:
                k = max(k, 2)
            noise = rng.standard_normal((k, spec.feature_dim))
            frames.append(protos[tok] + sigma * noise)
            prev = tok
        x = np.concatenate(frames, axis=0)
        samples.append(Sample(id=i, frames=x, label=word, hardness=sigma))
    return Dataset(samples=tuple(samples), spec=spec, split=split)


CORRUPTION_KINDS = ("noise", "blur", "spatter", "saturate")


def corrupt(
    x: np.ndarray, kind: str, severity: float, seed: int = 0
) -> np.ndarray:
    """Apply a feature-space corruption; severity 0 is the identity for all kinds.

    noise: additive Gaussian; blur: temporal Gaussian smoothing; spatter:
    random frame zeroing with probability min(severity, 1); saturate:
    amplitude compression toward tanh.
    """
    if severity < 0:
        raise ValueError("severity must be >= 0")
    if kind not in CORRUPTION_KINDS:
        raise ValueError(f"unknown corruption kind {kind!r}")
    if severity == 0:
        return x
    rng = np.random.default_rng([0xC0FFEE, seed])
    if kind == "noise":
        return x + severity * rng.standard_normal(x.shape)
    if kind == "blur":
        from scipy.ndimage import gaussian_filter1d

        return gaussian_filter1d(x, sigma=2.0 * severity, axis=0, mode="nearest")
    if kind == "spatter":
        keep = rng.random(x.shape[0]) >= min(severity, 1.0)
        return x * keep[:, None]
    w = min(severity, 1.0)
    return (1.0 - w) * x + w * np.tanh(x)


def split_dataset(
    d: Dataset, fractions: tuple[float, ...], names: tuple[str, ...] | None = None
) -> tuple[Dataset, ...]:
    """Disjoint partition of d with deterministic shuffling from d.spec.seed."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    for f in fractions:
        if not (0.0 < f <= 1.0):
            raise ValueError("each fraction must be in (0, 1]")
    if names is None:
        if len(fractions) > 3:
            raise ValueError("supply names for more than 3 parts")
        names = ("train", "val", "test")[: len(fractions)]
    rng = np.random.default_rng([d.spec.seed, 0x5B117])
    order = rng.permutation(len(d.samples))
    bounds = np.floor(np.cumsum(fractions) * len(d.samples) + 1e-9).astype(int)
    parts = []
    start = 0
    for frac_end, name in zip(bounds, names):
        idx = sorted(order[start:frac_end])
        parts.append(
            Dataset(samples=tuple(d.samples[i] for i in idx), spec=d.spec, split=name)
        )
        start = frac_end
    return tuple(parts)


def _spec_to_json(spec: TaskSpec) -> dict:
    d = dataclasses.asdict(spec)
    d["alphabet"] = list(spec.alphabet.tokens)
    d["lexicon"] = [[list(w), wt] for w, wt in spec.lexicon]
    d["confusable_pairs"] = [list(p) for p in spec.confusable_pairs]
    d["frames_per_token"] = list(spec.frames_per_token)
    return d


def _spec_from_json(d: dict) -> TaskSpec:
    return TaskSpec(
        alphabet=Alphabet(tokens=tuple(d["alphabet"])),
        feature_dim=d["feature_dim"],
        prototype_separation=d["prototype_separation"],
        confusable_pairs=tuple(
            (int(a), int(b), float(s)) for a, b, s in d["confusable_pairs"]
        ),
        lexicon=tuple((tuple(int(t) for t in w), float(wt)) for w, wt in d["lexicon"]),
        frames_per_token=tuple(d["frames_per_token"]),
        base_noise=d["base_noise"],
        hard_noise=d["hard_noise"],
        hardness_ratio=d["hardness_ratio"],
        seed=d["seed"],
    )


def save_dataset(d: Dataset, path) -> None:
    """One JSON header line (spec + split), then one JSON record per sample."""
    with open(path, "w") as f:
        f.write(json.dumps({"spec": _spec_to_json(d.spec), "split": d.split}) + "\n")
        for s in d.samples:
            rec = {
                "id": s.id,
                "label": list(s.label),
                "shape": list(s.frames.shape),
                "frames": [float(v) for v in s.frames.ravel()],
                "hardness": s.hardness,
            }
            f.write(json.dumps(rec) + "\n")


def load_dataset(path) -> Dataset:
    with open(path) as f:
        header = json.loads(f.readline())
        spec = _spec_from_json(header["spec"])
        samples = []
        for line in f:
            rec = json.loads(line)
            frames = np.array(rec["frames"], dtype=np.float64).reshape(rec["shape"])
            samples.append(
                Sample(
                    id=rec["id"],
                    frames=frames,
                    label=tuple(rec["label"]),
                    hardness=rec["hardness"],
                )
            )
    return Dataset(samples=tuple(samples), spec=spec, split=header["split"])


def default_task_spec(seed: int = 0) -> TaskSpec:
    """The task used throughout the experiment suite: 12 tokens, two
    designed confusable pairs, a 50-word weighted lexicon."""
    alphabet = Alphabet(tokens=tuple(f"t{i:02d}" for i in range(12)))
    return TaskSpec(
        alphabet=alphabet,
        feature_dim=16,
        prototype_separation=3.0,
        confusable_pairs=((0, 1, 0.85), (4, 5, 0.8)),
        lexicon=_default_lexicon(12, 50, 3, 6, seed),
        frames_per_token=(1, 3),
        base_noise=0.25,
        hard_noise=0.9,
        hardness_ratio=0.3,
        seed=seed,
    )
