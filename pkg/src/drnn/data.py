"""Datasets, text serialization, PCA preprocessing, and synthetic sequences.

The dataset text format is line oriented and self describing:

    DRNNSEQ 1
    classes <k> dim <D> sequences <S>
    seq <id> subject <subject> frames <T> label <c>
    <T lines of D space separated floats>
    ...

Sequences labeled per frame carry "labels <c_1> ... <c_T>" instead of the
single "label <c>". Floats are written with 17 significant digits so a
save/load round trip reproduces every value bit for bit. Class labels run
from 1 to k; frame indices elsewhere in the package are zero based.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numeric import Array

_DATA_MAGIC = "DRNNSEQ 1"
_PCA_MAGIC = "DRNNPCA 1"


class DatasetFormatError(ValueError):
    """Raised when a dataset or PCA text file is malformed."""


# === containers ===


@dataclass(frozen=True)
class LabeledSequence:
    """One variable-length sequence of feature frames with its labels.

    label is a single int for sequence-level supervision or a tuple with one
    int per frame. subject_id groups sequences recorded from the same source
    so splits can hold entire subjects out.
    """

    frames: Array
    label: int | tuple[int, ...]
    subject_id: int
    sequence_id: str

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
            raise ValueError(
                f"sequence {self.sequence_id!r}: frames must be a T x D matrix "
                f"with T,D >= 1, got shape {frames.shape}"
            )
        if not np.all(np.isfinite(frames)):
            raise ValueError(f"sequence {self.sequence_id!r}: frames must be finite")
        object.__setattr__(self, "frames", frames)
        if not isinstance(self.label, (int, np.integer)):
            label = tuple(int(c) for c in self.label)
            if len(label) != frames.shape[0]:
                raise ValueError(
                    f"sequence {self.sequence_id!r}: {len(label)} frame labels "
                    f"for {frames.shape[0]} frames"
                )
            object.__setattr__(self, "label", label)
        else:
            object.__setattr__(self, "label", int(self.label))
        if any(ch.isspace() for ch in self.sequence_id) or not self.sequence_id:
            raise ValueError(f"sequence id {self.sequence_id!r} must be non-empty "
                             "and contain no whitespace")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def has_frame_labels(self) -> bool:
        return isinstance(self.label, tuple)

    def label_values(self) -> tuple[int, ...]:
        return self.label if self.has_frame_labels else (self.label,)


@dataclass(frozen=True)
class Dataset:
    """A labeled sequence collection with a fixed feature width and class count."""

    sequences: tuple[LabeledSequence, ...]
    num_classes: int
    feature_dim: int

    def __post_init__(self):
        object.__setattr__(self, "sequences", tuple(self.sequences))
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be at least 2, got {self.num_classes}")
        if self.feature_dim < 1:
            raise ValueError(f"feature_dim must be positive, got {self.feature_dim}")
        for seq in self.sequences:
            if seq.frames.shape[1] != self.feature_dim:
                raise ValueError(
                    f"sequence {seq.sequence_id!r}: feature width "
                    f"{seq.frames.shape[1]} does not match dataset dim {self.feature_dim}"
                )
            for c in seq.label_values():
                if not 1 <= c <= self.num_classes:
                    raise ValueError(
                        f"sequence {seq.sequence_id!r}: label {c} out of "
                        f"range 1..{self.num_classes}"
                    )

    def __len__(self) -> int:
        return len(self.sequences)

    def subject_ids(self) -> list[int]:
        return sorted({seq.subject_id for seq in self.sequences})

    def all_frames(self) -> Array:
        """All frames of all sequences stacked into one matrix."""
        return np.concatenate([seq.frames for seq in self.sequences], axis=0)

    def with_frames(self, transform) -> "Dataset":
        """Apply a frames -> frames map to every sequence, keeping labels."""
        new = []
        dim = None
        for seq in self.sequences:
            frames = transform(seq.frames)
            dim = frames.shape[1]
            new.append(LabeledSequence(frames=frames, label=seq.label,
                                       subject_id=seq.subject_id,
                                       sequence_id=seq.sequence_id))
        return Dataset(sequences=tuple(new), num_classes=self.num_classes,
                       feature_dim=dim if dim is not None else self.feature_dim)


# === text serialization ===


def _fmt(value: float) -> str:
    return f"{value:.17g}"


def save_dataset(dataset: Dataset, path) -> None:
    """Write the line-oriented text form described in the module docstring."""
    lines = [f"{_DATA_MAGIC}\n",
             f"classes {dataset.num_classes} dim {dataset.feature_dim} "
             f"sequences {len(dataset)}\n"]
    for seq in dataset.sequences:
        if seq.has_frame_labels:
            label_part = "labels " + " ".join(str(c) for c in seq.label)
        else:
            label_part = f"label {seq.label}"
        lines.append(f"seq {seq.sequence_id} subject {seq.subject_id} "
                     f"frames {seq.num_frames} {label_part}\n")
        for row in seq.frames:
            lines.append(" ".join(_fmt(v) for v in row) + "\n")
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(lines)


class _LineReader:
    def __init__(self, path):
        with open(path, "r", encoding="utf-8") as fh:
            self.lines = fh.read().splitlines()
        self.pos = 0

    def next_line(self, expected: str) -> str:
        if self.pos >= len(self.lines):
            raise DatasetFormatError(
                f"unexpected end of file at line {self.pos + 1}: expected {expected}"
            )
        line = self.lines[self.pos]
        self.pos += 1
        return line

    @property
    def line_no(self) -> int:
        return self.pos


def load_dataset(path) -> Dataset:
    """Parse a dataset file, reporting malformed content with line numbers."""
    rd = _LineReader(path)
    magic = rd.next_line("header")
    if magic != _DATA_MAGIC:
        raise DatasetFormatError(
            f"line 1: expected header {_DATA_MAGIC!r}, got {magic!r}"
        )
    counts = rd.next_line("counts line").split()
    if len(counts) != 6 or counts[0] != "classes" or counts[2] != "dim" \
            or counts[4] != "sequences":
        raise DatasetFormatError(
            "line 2: expected 'classes <k> dim <D> sequences <S>'"
        )
    try:
        num_classes, dim, num_sequences = int(counts[1]), int(counts[3]), int(counts[5])
    except ValueError as exc:
        raise DatasetFormatError(f"line 2: {exc}") from None

    sequences: list[LabeledSequence] = []
    for _ in range(num_sequences):
        header_no = rd.line_no + 1
        header = rd.next_line(f"sequence header {len(sequences) + 1} "
                              f"of {num_sequences}").split()
        if len(header) < 7 or header[0] != "seq" or header[2] != "subject" \
                or header[4] != "frames":
            raise DatasetFormatError(
                f"line {header_no}: expected 'seq <id> subject <subject> "
                f"frames <T> label ...'"
            )
        seq_id = header[1]
        try:
            subject = int(header[3])
            num_frames = int(header[5])
        except ValueError as exc:
            raise DatasetFormatError(f"line {header_no}: {exc}") from None
        label: int | tuple[int, ...]
        if header[6] == "label":
            if len(header) != 8:
                raise DatasetFormatError(
                    f"line {header_no}: 'label' takes exactly one class index"
                )
            label = int(header[7])
        elif header[6] == "labels":
            values = header[7:]
            if len(values) != num_frames:
                raise DatasetFormatError(
                    f"line {header_no}: expected {num_frames} frame labels, "
                    f"got {len(values)}"
                )
            label = tuple(int(v) for v in values)
        else:
            raise DatasetFormatError(
                f"line {header_no}: expected 'label' or 'labels', got {header[6]!r}"
            )
        for c in (label if isinstance(label, tuple) else (label,)):
            if not 1 <= c <= num_classes:
                raise DatasetFormatError(
                    f"line {header_no}: label {c} out of range 1..{num_classes}"
                )
        rows = np.empty((num_frames, dim))
        for r in range(num_frames):
            row_no = rd.line_no + 1
            row = rd.next_line(f"frame {r} of sequence {seq_id!r}").split()
            if len(row) != dim:
                raise DatasetFormatError(
                    f"line {row_no}: expected {dim} values, got {len(row)}"
                )
            try:
                rows[r] = [float(v) for v in row]
            except ValueError as exc:
                raise DatasetFormatError(f"line {row_no}: {exc}") from None
        if not np.all(np.isfinite(rows)):
            raise DatasetFormatError(
                f"sequence {seq_id!r} ending at line {rd.line_no}: "
                "frames must be finite"
            )
        sequences.append(LabeledSequence(frames=rows, label=label,
                                         subject_id=subject, sequence_id=seq_id))
    if rd.pos != len(rd.lines) and any(l.strip() for l in rd.lines[rd.pos:]):
        raise DatasetFormatError(
            f"line {rd.pos + 1}: trailing content after the last sequence"
        )
    return Dataset(sequences=tuple(sequences), num_classes=num_classes,
                   feature_dim=dim)


# === PCA ===


@dataclass(frozen=True)
class PcaModel:
    """Mean, leading principal directions, and their variances."""

    mean: Array
    components: Array          # D x d, orthonormal columns
    explained_variance: Array  # length d, non-increasing
    energy_retained: float


def jacobi_eigh(matrix: Array, tol: float = 1e-12,
                max_sweeps: int = 100) -> tuple[Array, Array]:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps the upper triangle in a fixed order until the off-diagonal norm
    drops to tol or the sweep budget runs out, so the result is deterministic
    for a given input. Returns eigenvalues in non-increasing order and the
    matching eigenvector columns.
    """
    a = np.array(matrix, dtype=np.float64, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"jacobi_eigh: expected a square matrix, got {a.shape}")
    dim = a.shape[0]
    vecs = np.eye(dim)
    for _ in range(max_sweeps):
        off = a - np.diag(np.diag(a))
        if np.sqrt(np.sum(off * off)) <= tol:
            break
        for p in range(dim - 1):
            for q in range(p + 1, dim):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + np.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                col_p, col_q = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p, row_q = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                vec_p, vec_q = vecs[:, p].copy(), vecs[:, q].copy()
                vecs[:, p] = c * vec_p - s * vec_q
                vecs[:, q] = s * vec_p + c * vec_q
    eigvals = np.diag(a).copy()
    order = np.argsort(-eigvals, kind="stable")
    return eigvals[order], vecs[:, order]


def _fix_signs(components: Array) -> Array:
    """Flip each column so its largest-magnitude coordinate is non-negative."""
    fixed = components.copy()
    for j in range(fixed.shape[1]):
        lead = np.argmax(np.abs(fixed[:, j]))
        if fixed[lead, j] < 0:
            fixed[:, j] = -fixed[:, j]
    return fixed


def pca_fit(frames: Array, energy: float) -> PcaModel:
    """Fit principal components keeping the given fraction of total variance.

    The component count is the smallest d whose cumulative variance fraction
    reaches energy. Eigenvalues below max * 1e-12 count as zero rank, so
    energy 1.0 on exactly low-rank data selects the true rank. All rows being
    identical leaves nothing to decompose and raises.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] < 2:
        raise ValueError(
            f"pca_fit: need at least two rows of features, got shape {frames.shape}"
        )
    if not 0.0 < energy <= 1.0:
        raise ValueError(f"pca_fit: energy must be in (0, 1], got {energy}")
    mean = frames.mean(axis=0)
    centered = frames - mean
    cov = centered.T @ centered / (frames.shape[0] - 1)
    eigvals, eigvecs = jacobi_eigh(cov)
    top = float(eigvals[0]) if eigvals.size else 0.0
    if top <= 0.0:
        raise ValueError("pca_fit: degenerate input, all rows are identical")
    eigvals = np.where(eigvals < top * 1e-12, 0.0, eigvals)
    cumulative = np.cumsum(eigvals)
    fractions = cumulative / cumulative[-1]
    d = int(np.searchsorted(fractions, energy, side="left")) + 1
    return PcaModel(
        mean=mean,
        components=_fix_signs(eigvecs[:, :d]),
        explained_variance=eigvals[:d].copy(),
        energy_retained=float(fractions[d - 1]),
    )


def pca_transform(model: PcaModel, frames: Array) -> Array:
    """Project rows onto the fitted components after centering."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape[-1] != model.mean.shape[0]:
        raise ValueError(
            f"pca_transform: frames have width {frames.shape[-1]}, "
            f"model expects {model.mean.shape[0]}"
        )
    return (frames - model.mean) @ model.components


def pca_reconstruct(model: PcaModel, reduced: Array) -> Array:
    """Map projected rows back into the original feature space."""
    return np.asarray(reduced, dtype=np.float64) @ model.components.T + model.mean


def save_pca(model: PcaModel, path) -> None:
    """Text form: magic, size line, mean, explained variances, component rows."""
    dim, d = model.components.shape
    lines = [f"{_PCA_MAGIC}\n",
             f"dim {dim} components {d} energy {_fmt(model.energy_retained)}\n",
             " ".join(_fmt(v) for v in model.mean) + "\n",
             " ".join(_fmt(v) for v in model.explained_variance) + "\n"]
    for row in model.components:
        lines.append(" ".join(_fmt(v) for v in row) + "\n")
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(lines)


def load_pca(path) -> PcaModel:
    """Read a PCA file written by save_pca."""
    rd = _LineReader(path)
    magic = rd.next_line("header")
    if magic != _PCA_MAGIC:
        raise DatasetFormatError(
            f"line 1: expected header {_PCA_MAGIC!r}, got {magic!r}"
        )
    size = rd.next_line("size line").split()
    if len(size) != 6 or size[0] != "dim" or size[2] != "components" or size[4] != "energy":
        raise DatasetFormatError(
            "line 2: expected 'dim <D> components <d> energy <e>'"
        )
    dim, d, energy = int(size[1]), int(size[3]), float(size[5])
    mean = np.array([float(v) for v in rd.next_line("mean line").split()])
    variances = np.array([float(v) for v in
                          rd.next_line("explained variance line").split()])
    if mean.shape[0] != dim or variances.shape[0] != d:
        raise DatasetFormatError("mean or variance line length does not match header")
    components = np.empty((dim, d))
    for r in range(dim):
        row_no = rd.line_no + 1
        row = rd.next_line(f"component row {r}").split()
        if len(row) != d:
            raise DatasetFormatError(
                f"line {row_no}: expected {d} values, got {len(row)}"
            )
        components[r] = [float(v) for v in row]
    return PcaModel(mean=mean, components=components,
                    explained_variance=variances, energy_retained=energy)


# === synthetic data ===


def synth_spike_dataset(num_sequences: int, num_frames: int, dim: int,
                        num_classes: int, spike_magnitude: float,
                        noise_sigma: float, seed: int,
                        num_subjects: int = 10) -> tuple[Dataset, list[int]]:
    """Gaussian noise sequences with one class-specific two-frame spike each.

    One direction per class, of norm spike_magnitude, is drawn first from the
    seed, so datasets generated with the same seed share directions and spike
    positions even at different noise levels. The spike lands at a uniformly
    random frame t* and is held for two frames. Classes cycle through the
    sequence index and subjects cycle through blocks of num_classes, keeping
    every class present for every subject. Returns the dataset and the
    zero-based t* of each sequence.
    """
    if num_sequences < 1:
        raise ValueError(f"num_sequences must be positive, got {num_sequences}")
    if num_frames < 4:
        raise ValueError(f"num_frames must be at least 4, got {num_frames}")
    if num_classes < 2:
        raise ValueError(f"num_classes must be at least 2, got {num_classes}")
    if spike_magnitude <= 0:
        raise ValueError(f"spike_magnitude must be positive, got {spike_magnitude}")
    if noise_sigma < 0:
        raise ValueError(f"noise_sigma must be non-negative, got {noise_sigma}")
    if num_subjects < 1:
        raise ValueError(f"num_subjects must be positive, got {num_subjects}")
    rng = np.random.default_rng(seed)
    directions = rng.standard_normal((num_classes, dim))
    directions *= spike_magnitude / np.linalg.norm(directions, axis=1, keepdims=True)
    sequences: list[LabeledSequence] = []
    spike_frames: list[int] = []
    for i in range(num_sequences):
        label = i % num_classes + 1
        subject = (i // num_classes) % num_subjects
        t_star = int(rng.integers(0, num_frames - 1))  # room for the 2-frame hold
        frames = noise_sigma * rng.standard_normal((num_frames, dim))
        frames[t_star] += directions[label - 1]
        frames[t_star + 1] += directions[label - 1]
        sequences.append(LabeledSequence(frames=frames, label=label,
                                         subject_id=subject,
                                         sequence_id=f"synth-{i:05d}"))
        spike_frames.append(t_star)
    dataset = Dataset(sequences=tuple(sequences), num_classes=num_classes,
                      feature_dim=dim)
    return dataset, spike_frames


# === splits ===


def split_by_subject(dataset: Dataset, train_fraction: float,
                     seed: int) -> tuple[Dataset, Dataset]:
    """Partition whole subjects into train and test, seeded and covering.

    The train side receives round(train_fraction * num_subjects) subjects,
    clamped so both sides stay non-empty. The same seed always produces the
    same split.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(
            f"train_fraction must be strictly between 0 and 1, got {train_fraction}"
        )
    subjects = dataset.subject_ids()
    if len(subjects) < 2:
        raise ValueError("split_by_subject: need at least two distinct subjects")
    rng = np.random.default_rng(seed)
    shuffled = [subjects[i] for i in rng.permutation(len(subjects))]
    n_train = int(np.floor(train_fraction * len(subjects) + 0.5))
    n_train = min(max(n_train, 1), len(subjects) - 1)
    train_ids = set(shuffled[:n_train])
    train_seqs = tuple(s for s in dataset.sequences if s.subject_id in train_ids)
    test_seqs = tuple(s for s in dataset.sequences if s.subject_id not in train_ids)
    make = lambda seqs: Dataset(sequences=seqs, num_classes=dataset.num_classes,
                                feature_dim=dataset.feature_dim)
    return make(train_seqs), make(test_seqs)
