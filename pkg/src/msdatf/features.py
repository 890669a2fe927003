"""Differential-entropy features from multichannel EEG, plus synthetic cohorts.

Each 1-second window of each channel is band-limited by FFT masking into the
five classic EEG subbands, and the Gaussian differential entropy of the
filtered window is taken as the feature.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError

log = logging.getLogger(__name__)

N_CHANNELS = 62
BANDS = (
    ("delta", 1.0, 4.0),
    ("theta", 4.0, 8.0),
    ("alpha", 8.0, 13.0),
    ("beta", 13.0, 30.0),
    ("gamma", 30.0, 50.0),
)
BAND_NAMES = tuple(b[0] for b in BANDS)
N_BANDS = len(BANDS)
N_FEATURES = N_CHANNELS * N_BANDS
VAR_FLOOR = 1e-12
N_CLASSES = 3


@dataclass
class EEGRecording:
    subject_id: str
    trial_id: str
    label: int
    sample_rate: float
    samples: np.ndarray  # (channel, time)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ArgumentError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.samples.ndim != 2 or self.samples.shape[0] != N_CHANNELS:
            raise ArgumentError(f"expected {N_CHANNELS} channels, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ArgumentError("recording contains non-finite samples")
        if self.label not in range(N_CLASSES):
            raise ArgumentError(f"label must be in 0..{N_CLASSES - 1}, got {self.label}")


@dataclass
class DEFeatureSet:
    """Per-second DE matrices of one subject, ordered by (trial, second).

    ``de`` has shape (entries, 62, 5); the band axis follows ``BAND_NAMES``.
    """

    subject_id: str
    trial_ids: np.ndarray
    seconds: np.ndarray
    labels: np.ndarray
    de: np.ndarray

    def __post_init__(self):
        self.trial_ids = np.asarray(self.trial_ids, dtype=object)
        self.seconds = np.asarray(self.seconds, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.de = np.asarray(self.de, dtype=np.float64).reshape(-1, N_CHANNELS, N_BANDS)
        n = len(self.de)
        if not (len(self.trial_ids) == len(self.seconds) == len(self.labels) == n):
            raise ArgumentError("DEFeatureSet columns have different lengths")

    def __len__(self):
        return len(self.de)

    @classmethod
    def empty(cls, subject_id):
        return cls(subject_id, [], [], [], np.zeros((0, N_CHANNELS, N_BANDS)))

    @classmethod
    def concat(cls, sets):
        sets = list(sets)
        if not sets:
            raise ArgumentError("nothing to concatenate")
        return cls(
            sets[0].subject_id,
            np.concatenate([s.trial_ids for s in sets]),
            np.concatenate([s.seconds for s in sets]),
            np.concatenate([s.labels for s in sets]),
            np.concatenate([s.de for s in sets]),
        )

    def trials(self):
        """Trial ids in first-appearance order."""
        seen = {}
        for t in self.trial_ids:
            seen.setdefault(t, None)
        return list(seen)

    def subset(self, mask):
        return DEFeatureSet(self.subject_id, self.trial_ids[mask], self.seconds[mask],
                            self.labels[mask], self.de[mask])


# ------------------------------------------------------------------ signal ops


def bandpass_subband(signal, sample_rate, band):
    """Zero-phase band-pass by zeroing rFFT bins outside the closed band ``[lo, hi]``.

    Works along the last axis, so a (channel, time) block is filtered per row.
    """
    signal = np.asarray(signal, dtype=np.float64)
    lo, hi = band
    t = signal.shape[-1]
    if not (0 <= lo < hi <= sample_rate / 2):
        raise ArgumentError(f"invalid band ({lo}, {hi}) for sample rate {sample_rate}")
    if t < 2:
        raise ArgumentError("signal needs at least 2 samples")
    freqs = np.fft.rfftfreq(t, d=1.0 / sample_rate)
    keep = (freqs >= lo) & (freqs <= hi)
    spec = np.fft.rfft(signal, axis=-1)
    spec[..., ~keep] = 0.0
    return np.fft.irfft(spec, n=t, axis=-1)


def differential_entropy(window):
    """``0.5 * ln(2 pi e var)`` with the unbiased variance floored at 1e-12.

    Reduces over the last axis; accepts batches of windows.
    """
    window = np.asarray(window, dtype=np.float64)
    if window.shape[-1] < 2:
        raise ArgumentError("differential entropy needs a window of at least 2 samples")
    var = np.maximum(window.var(axis=-1, ddof=1), VAR_FLOOR)
    return 0.5 * np.log(2.0 * np.pi * np.e * var)


def extract_de(recording: EEGRecording) -> DEFeatureSet:
    """DE features for every complete 1-second window of a recording."""
    fs = recording.sample_rate
    win = int(round(fs))
    n_sec = recording.samples.shape[1] // win
    if n_sec == 0:
        warnings.warn(f"recording {recording.subject_id}/{recording.trial_id} is shorter than 1 s",
                      stacklevel=2)
        return DEFeatureSet.empty(recording.subject_id)
    blocks = recording.samples[:, : n_sec * win].reshape(N_CHANNELS, n_sec, win).transpose(1, 0, 2)
    de = np.empty((n_sec, N_CHANNELS, N_BANDS))
    for b, (_, lo, hi) in enumerate(BANDS):
        de[:, :, b] = differential_entropy(bandpass_subband(blocks, fs, (lo, hi)))
    return DEFeatureSet(
        recording.subject_id,
        [recording.trial_id] * n_sec,
        np.arange(n_sec),
        [recording.label] * n_sec,
        de,
    )


def extract_subject(recordings) -> DEFeatureSet:
    sets = [extract_de(r) for r in recordings]
    return DEFeatureSet.concat([s for s in sets if len(s)] or sets)


def normalize(feature_sets, scope="subject"):
    """Z-score DE features per feature column.

    ``scope`` is ``"subject"`` (statistics from each subject separately),
    ``"global"`` (statistics pooled over all given subjects) or ``"none"``.
    Returns new feature sets; inputs are untouched.
    """
    if scope == "none":
        return list(feature_sets)
    if scope == "subject":
        stats = [(fs.de.mean(axis=0), fs.de.std(axis=0)) for fs in feature_sets]
    elif scope == "global":
        pooled = np.concatenate([fs.de for fs in feature_sets])
        stats = [(pooled.mean(axis=0), pooled.std(axis=0))] * len(feature_sets)
    else:
        raise ArgumentError(f"unknown normalization scope {scope!r}")
    out = []
    for fs, (mu, sd) in zip(feature_sets, stats):
        sd = np.where(sd > 0, sd, 1.0)
        out.append(DEFeatureSet(fs.subject_id, fs.trial_ids, fs.seconds, fs.labels, (fs.de - mu) / sd))
    return out


def window_samples(features: DEFeatureSet, width=9):
    """Stack consecutive per-second DE matrices into model inputs.

    Returns ``(x, y, trial_ids)`` with ``x`` of shape (n, 5, 62, width): bands
    become input channels, electrodes the height and seconds the width. Windows
    never span trials; leftover seconds are dropped.
    """
    if width < 1:
        raise ArgumentError(f"window width must be >= 1, got {width}")
    xs, ys, tids = [], [], []
    for trial in features.trials():
        idx = np.flatnonzero(features.trial_ids == trial)
        idx = idx[np.argsort(features.seconds[idx], kind="stable")]
        n_win = len(idx) // width
        if n_win == 0:
            warnings.warn(f"trial {trial} of {features.subject_id} has fewer than {width} seconds; "
                          "skipped", stacklevel=2)
            continue
        block = features.de[idx[: n_win * width]]                # (n_win*width, 62, 5)
        block = block.reshape(n_win, width, N_CHANNELS, N_BANDS).transpose(0, 3, 2, 1)
        xs.append(block)
        ys.extend([int(features.labels[idx[0]])] * n_win)
        tids.extend([trial] * n_win)
    if not xs:
        return np.zeros((0, N_BANDS, N_CHANNELS, width)), np.zeros(0, dtype=np.int64), []
    return np.ascontiguousarray(np.concatenate(xs)), np.asarray(ys, dtype=np.int64), tids


# ------------------------------------------------------------ synthetic cohort


@dataclass
class SynthCohortConfig:
    """Parameters of a synthetic EEG cohort.

    Log band power of subject ``s``, class ``c`` at (electrode, band) is
    ``base + class_effect * pattern[c] + shift * offset[s]``. ``offset`` is
    the subject's persistent fingerprint; ``trial_jitter`` and ``second_jitter``
    add trial- and second-level variation on top.
    """

    n_subjects: int = 5
    n_trials_per_subject: int = 15
    trial_seconds: int = 45
    n_classes: int = N_CLASSES
    sample_rate: float = 200.0
    base_log_power: float = 0.0
    base_spread: float = 0.5
    class_effect: float = 0.35
    shift: float = 1.0
    trial_jitter: float = 0.1
    second_jitter: float = 0.1
    noise: float = 0.05
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("n_subjects", "n_trials_per_subject", "trial_seconds", "n_classes"):
            if getattr(self, name) < 1:
                raise ArgumentError(f"{name} must be >= 1")
        if self.shift < 0:
            raise ArgumentError("shift magnitude must be >= 0")
        if self.sample_rate <= 0:
            raise ArgumentError("sample_rate must be positive")


def _band_bin_masks(n_samples, fs):
    """Half-open bin assignment so generated bands do not double count edges."""
    freqs = np.fft.rfftfreq(n_samples, d=1.0 / fs)
    masks = []
    for i, (_, lo, hi) in enumerate(BANDS):
        upper = freqs <= hi if i == N_BANDS - 1 else freqs < hi
        masks.append((freqs >= lo) & upper)
    return masks


def subject_ids(n):
    width = max(2, len(str(n)))
    return [f"s{i + 1:0{width}d}" for i in range(n)]


def cohort_fingerprints(config: SynthCohortConfig):
    """Per-subject log band-power profiles, shape (subjects, classes, 62, 5)."""
    rng = np.random.default_rng([config.seed, 0])
    base = config.base_log_power + config.base_spread * rng.standard_normal((N_CHANNELS, N_BANDS))
    pattern = rng.standard_normal((config.n_classes, N_CHANNELS, N_BANDS))
    pattern -= pattern.mean(axis=0, keepdims=True)
    offsets = rng.standard_normal((config.n_subjects, N_CHANNELS, N_BANDS))
    return (base[None, None]
            + config.class_effect * pattern[None]
            + config.shift * offsets[:, None])


def synth_cohort(config: SynthCohortConfig):
    """Generate raw recordings ``{subject_id: [EEGRecording, ...]}``.

    Trials cycle through the classes; every signal is a sum of band-limited
    Gaussian noise whose per-band power follows the subject's fingerprint.
    The output is a pure function of ``config``.
    """
    fs = config.sample_rate
    n_samples = int(round(fs)) * config.trial_seconds
    win = int(round(fs))
    masks = _band_bin_masks(win, fs)
    profiles = cohort_fingerprints(config)
    cohort = {}
    for s, sid in enumerate(subject_ids(config.n_subjects)):
        rng = np.random.default_rng([config.seed, 1, s])
        recs = []
        for t in range(config.n_trials_per_subject):
            label = t % config.n_classes
            log_p = profiles[s, label] + config.trial_jitter * rng.standard_normal((N_CHANNELS, N_BANDS))
            # per-second log power, (seconds, 62, 5)
            log_p = log_p[None] + config.second_jitter * rng.standard_normal(
                (config.trial_seconds, N_CHANNELS, N_BANDS))
            spec = np.zeros((config.trial_seconds, N_CHANNELS, win // 2 + 1), dtype=np.complex128)
            for b, mask in enumerate(masks):
                nb = int(mask.sum())
                # window variance = (2 / win^2) * sum |X_k|^2 over the band's bins
                amp = win * np.exp(0.5 * log_p[..., b])[..., None] / np.sqrt(4.0 * nb)
                coef = rng.standard_normal((config.trial_seconds, N_CHANNELS, nb)) \
                    + 1j * rng.standard_normal((config.trial_seconds, N_CHANNELS, nb))
                spec[..., mask] = amp * coef
            sig = np.fft.irfft(spec, n=win, axis=-1)            # (seconds, 62, win)
            sig = sig.transpose(1, 0, 2).reshape(N_CHANNELS, n_samples)
            sig = sig + config.noise * rng.standard_normal(sig.shape)
            recs.append(EEGRecording(sid, f"t{t + 1:02d}", label, fs, sig))
        cohort[sid] = recs
    return cohort


def synth_features(config: SynthCohortConfig):
    """Synthetic cohort passed straight through :func:`extract_de`."""
    return {sid: extract_subject(recs) for sid, recs in synth_cohort(config).items()}
