"""Seeded synthetic corpus of FUSS-like mixtures.

Every source belongs to one of K classes, and each class owns a frequency
band. Tones, chirps and band-limited amplitude-modulated noise stay inside
their class band; impulse trains are broadband. Generation is keyed by
``(seed, split, index)`` through NumPy's PCG64 so any example can be
rebuilt on its own.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .semantic import check_bands
from .signal import MixtureBatch, rms
from .wavio import WavFormatError, atomic_write_bytes, read_wav, write_wav

FORMAT_VERSION = 1
RNG_ALGORITHM = "PCG64"
KINDS = ("tone", "chirp", "am_noise", "impulse")
SPLITS = {"eval": 0, "mom": 1}
RMS_RANGE = (0.01, 1.0)
_BAND_MARGIN_HZ = 20.0


class ManifestError(ValueError):
    """Raised for unreadable, inconsistent or mismatched manifests."""


@dataclass(frozen=True)
class SourceArchetype:
    kind: str
    class_id: int
    amplitude: float
    onset: float
    offset: float
    freq: float = 0.0
    freq_end: float = 0.0
    band: tuple = (0.0, 0.0)
    mod_rate: float = 0.0
    period: int = 0
    seed: int = 0


DEFAULT_BANDS = (
    (100.0, 300.0), (400.0, 600.0), (700.0, 1000.0), (1100.0, 1500.0),
    (1600.0, 2000.0), (2100.0, 2600.0), (2700.0, 3200.0), (3300.0, 3800.0),
)


@dataclass(frozen=True)
class DatasetManifest:
    """Everything needed to regenerate a corpus bit for bit."""

    seed: int = 0
    sample_rate: int = 8000
    clip_seconds: float = 1.0
    n_eval: int = 40
    n_mom: int = 20
    eval_min_sources: int = 1
    eval_max_sources: int = 4
    mom_min_sources: int = 1
    mom_max_sources: int = 2
    kinds: tuple = KINDS
    bands: tuple = DEFAULT_BANDS
    amplitude_min: float = 0.2
    amplitude_max: float = 0.8
    min_support_seconds: float = 0.5
    fade_seconds: float = 0.01
    impulse_period_min: int = 40
    impulse_period_max: int = 160
    classifier_reference_amplitude: float = 0.5
    classifier_headroom_db: float = 12.0
    classifier_span_db: float = 20.0
    rng: str = RNG_ALGORITHM

    def __post_init__(self):
        object.__setattr__(self, "kinds", tuple(self.kinds))
        object.__setattr__(self, "bands", tuple(tuple(float(v) for v in b) for b in self.bands))
        self.validate()

    @property
    def length(self) -> int:
        return int(round(self.sample_rate * self.clip_seconds))

    @property
    def n_classes(self) -> int:
        return len(self.bands)

    def validate(self):
        if self.rng != RNG_ALGORITHM:
            raise ManifestError(f"unsupported rng {self.rng!r}; only {RNG_ALGORITHM} is implemented")
        if self.sample_rate <= 0 or self.length < 1:
            raise ManifestError("sample_rate and clip length must be positive")
        bad = set(self.kinds) - set(KINDS)
        if not self.kinds or bad:
            raise ManifestError(f"unknown source kinds {sorted(bad)}")
        try:
            check_bands(self.bands, self.sample_rate)
        except ValueError as exc:
            raise ManifestError(str(exc)) from None
        for lo, hi in (("eval_min_sources", "eval_max_sources"), ("mom_min_sources", "mom_max_sources")):
            a, b = getattr(self, lo), getattr(self, hi)
            if not 1 <= a <= b <= self.n_classes:
                raise ManifestError(f"need 1 <= {lo} <= {hi} <= number of bands")
        if not 0 < self.amplitude_min <= self.amplitude_max:
            raise ManifestError("amplitude range must be positive and ordered")
        if not 0 < self.min_support_seconds <= self.clip_seconds:
            raise ManifestError("min_support_seconds must lie in (0, clip_seconds]")
        if not 1 <= self.impulse_period_min <= self.impulse_period_max:
            raise ManifestError("impulse period range must be positive and ordered")
        if self.n_eval < 0 or self.n_mom < 0:
            raise ManifestError("split counts must be non-negative")

    def to_text(self) -> str:
        """Canonical serialization: version line, then sorted ``key = value`` lines."""
        lines = [f"format_version = {FORMAT_VERSION}"]
        for name in sorted(f.name for f in fields(self)):
            lines.append(f"{name} = {_format_value(getattr(self, name))}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    @classmethod
    def from_text(cls, text: str) -> "DatasetManifest":
        values = parse_config(text)
        version = values.pop("format_version", None)
        if version is None:
            raise ManifestError("manifest has no format_version line")
        if version != str(FORMAT_VERSION):
            raise ManifestError(f"manifest format version {version} != supported {FORMAT_VERSION}")
        values.pop("manifest_hash", None)
        known = {f.name: f for f in fields(cls)}
        unknown = set(values) - set(known)
        if unknown:
            raise ManifestError(f"unknown manifest keys: {sorted(unknown)}")
        kwargs = {}
        for name, raw in values.items():
            default = known[name].default
            try:
                kwargs[name] = _parse_value(name, raw, default)
            except ValueError as exc:
                raise ManifestError(f"bad value for {name}: {raw!r}") from exc
        return cls(**kwargs)


def _format_value(value) -> str:
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ",".join("-".join(repr(float(v)) for v in item) for item in value)
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(name, raw, default):
    if name == "bands":
        return tuple(tuple(float(v) for v in item.split("-")) for item in raw.split(",") if item)
    if name == "kinds":
        return tuple(item.strip() for item in raw.split(",") if item.strip())
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config(text: str) -> dict:
    """Read ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ManifestError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ManifestError(f"line {lineno}: empty key")
        values[key] = value
    return values


def load_manifest(path) -> DatasetManifest:
    with open(path, encoding="utf-8") as fh:
        return DatasetManifest.from_text(fh.read())


def example_rng(seed: int, split: str, index: int) -> np.random.Generator:
    """Independent generator for one example, keyed by split and index."""
    seq = np.random.SeedSequence(seed, spawn_key=(SPLITS[split], index))
    return np.random.Generator(np.random.PCG64(seq))


def _fade(fade_len, rising):
    ramp = 0.5 - 0.5 * np.cos(np.pi * (np.arange(fade_len) + 0.5) / fade_len)
    return ramp if rising else ramp[::-1]


def synth_source(a: SourceArchetype, sample_rate: int, length: int,
                 fade_seconds: float = 0.01) -> np.ndarray:
    """Render an archetype to a float64 waveform of ``length`` samples.

    Onsets and offsets inside the clip get raised-cosine fades (except for
    impulse trains) to limit spectral splatter into neighbouring bands.
    """
    nyquist = sample_rate / 2.0
    clip = length / sample_rate
    if a.kind not in KINDS:
        raise ValueError(f"unknown kind {a.kind!r}")
    if not 0.0 <= a.onset < a.offset <= clip + 1e-12:
        raise ValueError(f"need 0 <= onset < offset <= {clip}, got {a.onset}, {a.offset}")
    if a.amplitude <= 0:
        raise ValueError("amplitude must be positive")

    t = np.arange(length) / sample_rate
    start = int(round(a.onset * sample_rate))
    stop = min(length, int(round(a.offset * sample_rate)))
    if stop <= start:
        raise ValueError("archetype support is empty")

    if a.kind == "tone":
        if not 0 < a.freq < nyquist:
            raise ValueError("tone frequency must lie below Nyquist")
        w = a.amplitude * np.sin(2 * np.pi * a.freq * t)
    elif a.kind == "chirp":
        if not (0 < a.freq < nyquist and 0 < a.freq_end < nyquist):
            raise ValueError("chirp frequencies must lie below Nyquist")
        span = max(a.offset - a.onset, 1.0 / sample_rate)
        local = t - a.onset
        rate = (a.freq_end - a.freq) / span
        w = a.amplitude * np.sin(2 * np.pi * (a.freq * local + 0.5 * rate * local**2))
    elif a.kind == "am_noise":
        lo, hi = a.band
        if not 0 < lo < hi < nyquist:
            raise ValueError("noise band must lie below Nyquist")
        rng = np.random.Generator(np.random.PCG64(a.seed))
        spectrum = np.fft.rfft(rng.standard_normal(length))
        freqs = np.fft.rfftfreq(length, d=1.0 / sample_rate)
        spectrum[(freqs < lo) | (freqs > hi)] = 0.0
        noise = np.fft.irfft(spectrum, n=length)
        noise /= np.sqrt(np.mean(noise**2))
        envelope = 1.0 + 0.8 * np.sin(2 * np.pi * a.mod_rate * t)
        w = a.amplitude * noise * envelope / np.sqrt(1.0 + 0.32)
    else:
        if a.period < 1:
            raise ValueError("impulse period must be a positive sample count")
        w = np.zeros(length)
        w[np.arange(0, length, a.period)] = a.amplitude

    gate = np.zeros(length)
    gate[start:stop] = 1.0
    if a.kind != "impulse":
        fade_len = min(int(round(fade_seconds * sample_rate)), (stop - start) // 2)
        if fade_len > 0 and start > 0:
            gate[start:start + fade_len] = _fade(fade_len, True)
        if fade_len > 0 and stop < length:
            gate[stop - fade_len:stop] = _fade(fade_len, False)
    w = w * gate
    level = float(rms(w, eps=0.0))
    if not RMS_RANGE[0] <= level <= RMS_RANGE[1]:
        raise ValueError(f"archetype renders with RMS {level:.4g}, outside {RMS_RANGE}")
    return w


def draw_archetype(rng: np.random.Generator, manifest: DatasetManifest, class_id: int) -> SourceArchetype:
    lo, hi = manifest.bands[class_id]
    lo, hi = lo + _BAND_MARGIN_HZ, hi - _BAND_MARGIN_HZ
    clip = manifest.clip_seconds
    kind = manifest.kinds[int(rng.integers(len(manifest.kinds)))]
    amplitude = float(rng.uniform(manifest.amplitude_min, manifest.amplitude_max))
    support = float(rng.uniform(manifest.min_support_seconds, clip))
    onset = float(rng.uniform(0.0, clip - support))
    # snap to the sample grid so the rendered support is exactly reproducible
    onset = round(onset * manifest.sample_rate) / manifest.sample_rate
    offset = min(clip, onset + round(support * manifest.sample_rate) / manifest.sample_rate)
    # tones sit on DFT bin centres of the clip
    bin_hz = 1.0 / clip
    if kind == "tone":
        freq = float(np.round(rng.uniform(lo, hi) / bin_hz) * bin_hz)
        return SourceArchetype(kind, class_id, amplitude, onset, offset, freq=freq)
    if kind == "chirp":
        f0, f1 = (float(v) for v in rng.uniform(lo, hi, size=2))
        return SourceArchetype(kind, class_id, amplitude, onset, offset, freq=f0, freq_end=f1)
    if kind == "am_noise":
        return SourceArchetype(kind, class_id, amplitude, onset, offset, band=(lo, hi),
                               mod_rate=float(rng.uniform(2.0, 8.0)),
                               seed=int(rng.integers(2**31)))
    period = int(rng.integers(manifest.impulse_period_min, manifest.impulse_period_max + 1))
    # peak grows with the period so the train's RMS stays near amplitude / 2
    return SourceArchetype(kind, class_id, float(amplitude * np.sqrt(period) / 2.0), onset, offset,
                           period=period)


def _quantize(w):
    # stored audio is float32, so examples are built from float32 values
    return np.asarray(w, dtype=np.float32).astype(np.float64)


@dataclass
class Example:
    """One synthetic mixture with its sources and weak labels."""

    example_id: str
    sources: np.ndarray
    mixture: np.ndarray
    labels: np.ndarray
    archetypes: list = field(default_factory=list)

    @property
    def n_sources(self) -> int:
        return self.sources.shape[0]

    @property
    def kinds(self) -> list:
        return [a.kind for a in self.archetypes]


@dataclass
class MomExample:
    """Two reference mixtures, their sum, and the sources under them."""

    example_id: str
    batch: MixtureBatch
    sources: np.ndarray
    source_reference: np.ndarray
    labels: np.ndarray
    archetypes: list = field(default_factory=list)

    @property
    def kinds(self) -> list:
        return [a.kind for a in self.archetypes]


def _draw_example(rng, manifest, min_sources, max_sources, example_id=""):
    count = int(rng.integers(min_sources, max_sources + 1))
    classes = np.sort(rng.choice(manifest.n_classes, size=count, replace=False))
    archetypes = [draw_archetype(rng, manifest, int(c)) for c in classes]
    sources = np.stack([
        _quantize(synth_source(a, manifest.sample_rate, manifest.length, manifest.fade_seconds)) for a in archetypes
    ])
    mixture = _quantize(sources.sum(axis=0))
    labels = np.zeros(manifest.n_classes, dtype=int)
    labels[classes] = 1
    return Example(example_id, sources, mixture, labels, archetypes)


def make_eval_example(rng, manifest: DatasetManifest, example_id: str = "") -> Example:
    """A 1..4-source mixture with pairwise distinct classes."""
    return _draw_example(rng, manifest, manifest.eval_min_sources, manifest.eval_max_sources, example_id)


def make_mom_example(rng, manifest: DatasetManifest, example_id: str = "") -> MomExample:
    """Two independent mixtures summed into a mixture of mixtures."""
    parts = [
        _draw_example(rng, manifest, manifest.mom_min_sources, manifest.mom_max_sources)
        for _ in range(2)
    ]
    batch = MixtureBatch(np.stack([p.mixture for p in parts]))
    sources = np.concatenate([p.sources for p in parts])
    owner = np.concatenate([np.full(p.n_sources, i) for i, p in enumerate(parts)])
    labels = np.maximum(parts[0].labels, parts[1].labels)
    archetypes = parts[0].archetypes + parts[1].archetypes
    return MomExample(example_id, batch, sources, owner, labels, archetypes)


@dataclass
class Dataset:
    manifest: DatasetManifest
    eval: list
    mom: list

    def single_source(self) -> list:
        return [ex for ex in self.eval if ex.n_sources == 1]


def generate_dataset(manifest: DatasetManifest) -> Dataset:
    evals = [
        make_eval_example(example_rng(manifest.seed, "eval", i), manifest, f"{i:05d}")
        for i in range(manifest.n_eval)
    ]
    moms = [
        make_mom_example(example_rng(manifest.seed, "mom", i), manifest, f"{i:05d}")
        for i in range(manifest.n_mom)
    ]
    return Dataset(manifest, evals, moms)


def _archetype_line(a: SourceArchetype) -> str:
    parts = []
    for key, value in asdict(a).items():
        if isinstance(value, (tuple, list)):
            value = "/".join(repr(float(v)) for v in value)
        elif isinstance(value, float):
            value = repr(float(value))
        parts.append(f"{key}:{value}")
    return " ".join(parts)


def _parse_archetype(line: str) -> SourceArchetype:
    kwargs = {}
    for item in line.split():
        key, value = item.split(":", 1)
        if key == "band":
            kwargs[key] = tuple(float(v) for v in value.split("/"))
        elif key in ("kind",):
            kwargs[key] = value
        elif key in ("class_id", "period", "seed"):
            kwargs[key] = int(value)
        else:
            kwargs[key] = float(value)
    return SourceArchetype(**kwargs)


def _labels_text(labels, archetypes, extra=None) -> str:
    lines = [
        f"labels = {' '.join(str(int(v)) for v in labels)}",
        f"classes = {' '.join(str(a.class_id) for a in archetypes)}",
        f"kinds = {' '.join(a.kind for a in archetypes)}",
    ]
    for key, value in (extra or {}).items():
        lines.append(f"{key} = {value}")
    for i, a in enumerate(archetypes):
        lines.append(f"source_{i} = {_archetype_line(a)}")
    return "\n".join(lines) + "\n"


def write_dataset(path, dataset: Dataset) -> str:
    """Persist a corpus; returns the manifest hash."""
    m = dataset.manifest
    sr = m.sample_rate
    for ex in dataset.eval:
        d = os.path.join(path, "eval", ex.example_id)
        write_wav(os.path.join(d, "mixture.wav"), ex.mixture, sr)
        for i, s in enumerate(ex.sources):
            write_wav(os.path.join(d, f"source_{i}.wav"), s, sr)
        atomic_write_bytes(os.path.join(d, "labels.txt"), _labels_text(ex.labels, ex.archetypes).encode())
    for ex in dataset.mom:
        d = os.path.join(path, "mom", ex.example_id)
        write_wav(os.path.join(d, "mixture.wav"), ex.batch.mom, sr)
        for i, r in enumerate(ex.batch.references):
            write_wav(os.path.join(d, f"reference_{i}.wav"), r, sr)
        for i, s in enumerate(ex.sources):
            write_wav(os.path.join(d, f"source_{i}.wav"), s, sr)
        owner = " ".join(str(int(v)) for v in ex.source_reference)
        text = _labels_text(ex.labels, ex.archetypes, {"source_reference": owner})
        atomic_write_bytes(os.path.join(d, "labels.txt"), text.encode())
    digest = m.hash()
    text = m.to_text() + f"manifest_hash = {digest}\n"
    atomic_write_bytes(os.path.join(path, "manifest.cfg"), text.encode())
    return digest


def _read_labels(path):
    with open(path, encoding="utf-8") as fh:
        values = parse_config(fh.read())
    labels = np.array([int(v) for v in values["labels"].split()], dtype=int)
    archetypes = []
    i = 0
    while f"source_{i}" in values:
        archetypes.append(_parse_archetype(values[f"source_{i}"]))
        i += 1
    return values, labels, archetypes


def _read_stack(directory, prefix, sample_rate):
    out = []
    i = 0
    while os.path.exists(os.path.join(directory, f"{prefix}_{i}.wav")):
        w, sr = read_wav(os.path.join(directory, f"{prefix}_{i}.wav"))
        if sr != sample_rate:
            raise WavFormatError(f"{directory}: sample rate {sr} != manifest {sample_rate}")
        out.append(w)
        i += 1
    return np.stack(out) if out else np.zeros((0, 0))


def read_dataset(path, manifest: DatasetManifest | None = None) -> Dataset:
    """Load a corpus written by :func:`write_dataset`, verifying the manifest hash."""
    cfg = os.path.join(path, "manifest.cfg")
    if not os.path.exists(cfg):
        raise ManifestError(f"{path} has no manifest.cfg")
    with open(cfg, encoding="utf-8") as fh:
        text = fh.read()
    recorded = parse_config(text).get("manifest_hash")
    stored = DatasetManifest.from_text(text)
    if recorded is None or recorded != stored.hash():
        raise ManifestError("manifest hash missing or does not match manifest contents")
    if manifest is not None and manifest.hash() != stored.hash():
        raise ManifestError("dataset was generated from a different manifest")
    sr = stored.sample_rate
    evals = []
    for ex_id in sorted(os.listdir(os.path.join(path, "eval"))) if stored.n_eval else []:
        d = os.path.join(path, "eval", ex_id)
        mixture, _ = read_wav(os.path.join(d, "mixture.wav"))
        _, labels, archetypes = _read_labels(os.path.join(d, "labels.txt"))
        evals.append(Example(ex_id, _read_stack(d, "source", sr), mixture, labels, archetypes))
    moms = []
    for ex_id in sorted(os.listdir(os.path.join(path, "mom"))) if stored.n_mom else []:
        d = os.path.join(path, "mom", ex_id)
        values, labels, archetypes = _read_labels(os.path.join(d, "labels.txt"))
        owner = np.array([int(v) for v in values["source_reference"].split()], dtype=int)
        batch = MixtureBatch(_read_stack(d, "reference", sr))
        moms.append(MomExample(ex_id, batch, _read_stack(d, "source", sr), owner, labels, archetypes))
    if len(evals) != stored.n_eval or len(moms) != stored.n_mom:
        raise ManifestError("example counts on disk do not match the manifest")
    return Dataset(stored, evals, moms)
