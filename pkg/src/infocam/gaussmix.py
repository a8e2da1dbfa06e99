"""Isotropic Gaussian-mixture data and the Monte-Carlo MI ground truth.

The synthetic task is a five-component mixture with unit covariance and
scalar means replicated across every coordinate.  Because the densities
are known in closed form, the mutual information between input and label
can be estimated by Monte Carlo to arbitrary precision and used as the
oracle against which classifier-based estimates are judged.
"""

import struct
from dataclasses import dataclass, replace

import numpy as np

from .nn.functional import check_prior, log_sum_exp

TABLE1_MEANS = (0.0, 2.0, -2.0, 4.0, -4.0)
TABLE1_COUNTS_UNBALANCED = (6000, 12000, 18000, 24000, 30000)
TABLE1_COUNT_BALANCED = 12000

_DATASET_MAGIC = b"GMIX"
_DATASET_VERSION = 1


@dataclass(frozen=True)
class GaussianMixtureSpec:
    """Component means (M, dim) with identity covariance and class priors."""

    dim: int
    means: np.ndarray
    priors: np.ndarray

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        if means.ndim != 2 or means.shape[1] != self.dim:
            raise ValueError("means must have shape (M, dim)")
        if not np.all(np.isfinite(means)):
            raise ValueError("means must be finite")
        object.__setattr__(self, "means", means)
        object.__setattr__(
            self, "priors", check_prior(self.priors, means.shape[0]))

    @property
    def num_components(self):
        return self.means.shape[0]


@dataclass
class LabeledDataset:
    """Paired inputs (N, dim) and integer labels (N,), tagged with a split."""

    inputs: np.ndarray
    labels: np.ndarray
    split: str = "full"

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.inputs) != len(self.labels):
            raise ValueError("inputs and labels must have equal length")

    def __len__(self):
        return len(self.labels)


def table1_spec(dim, balanced):
    """The five-component benchmark mixture and its per-class sample counts.

    Unbalanced priors are the exact count ratios (1/15, 2/15, 3/15, 4/15,
    5/15); the two-decimal values usually quoted for this setup are
    roundings of these.
    """
    means = np.tile(np.array(TABLE1_MEANS)[:, None], (1, dim))
    if balanced:
        counts = np.full(5, TABLE1_COUNT_BALANCED, dtype=np.int64)
    else:
        counts = np.array(TABLE1_COUNTS_UNBALANCED, dtype=np.int64)
    priors = counts / counts.sum()
    return GaussianMixtureSpec(dim=dim, means=means, priors=priors), counts


def _box_muller(rng, n):
    """n standard normal draws from uniform pairs; deterministic per rng."""
    pairs = (n + 1) // 2
    u1 = 1.0 - rng.random(pairs)          # (0, 1], keeps log finite
    u2 = rng.random(pairs)
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])
    return z[:n]


def _class_rng(seed, class_index):
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([seed, class_index])))


def sample(spec, counts, seed):
    """Draw counts[y] points from N(mean_y, I) per class, seeded and shuffled.

    Per-class streams are split by class index, so class y's draws do not
    depend on the other counts.  The returned dataset is shuffled with a
    seeded permutation; use :func:`train_valid_test_split` to partition it.
    """
    counts = np.asarray(counts, dtype=np.int64)
    if counts.shape != (spec.num_components,):
        raise ValueError("one count per mixture component required")
    total = int(counts.sum())
    if total == 0:
        raise ValueError("cannot sample an empty dataset")
    xs = []
    ys = []
    for y, count in enumerate(counts):
        if count == 0:
            continue
        rng = _class_rng(seed, y)
        z = _box_muller(rng, int(count) * spec.dim)
        xs.append(z.reshape(count, spec.dim) + spec.means[y])
        ys.append(np.full(count, y, dtype=np.int64))
    inputs = np.concatenate(xs)
    labels = np.concatenate(ys)
    perm = _class_rng(seed, spec.num_components).permutation(total)
    return LabeledDataset(inputs[perm], labels[perm], split="full")


def train_valid_test_split(ds, ratios=(0.70, 0.15, 0.15)):
    """Contiguous split of an (already shuffled) dataset into three tagged sets."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    n = len(ds)
    n_train = int(ratios[0] * n)
    n_valid = int(ratios[1] * n)
    parts = (
        LabeledDataset(ds.inputs[:n_train], ds.labels[:n_train], "train"),
        LabeledDataset(ds.inputs[n_train:n_train + n_valid],
                       ds.labels[n_train:n_train + n_valid], "valid"),
        LabeledDataset(ds.inputs[n_train + n_valid:],
                       ds.labels[n_train + n_valid:], "test"),
    )
    return parts


def log_densities(spec, x):
    """Mixture and per-class log densities for a batch of points.

    Returns ``(log_px (N,), log_px_given_y (N, M))`` for inputs ``(N, dim)``;
    a single point ``(dim,)`` yields scalar / ``(M,)`` outputs.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    pts = x[None] if single else x
    if pts.shape[1] != spec.dim:
        raise ValueError(f"points must have dimension {spec.dim}")
    diff = pts[:, None, :] - spec.means[None, :, :]
    log_pxy = (-0.5 * spec.dim * np.log(2.0 * np.pi)
               - 0.5 * np.sum(diff * diff, axis=2))
    log_px = log_sum_exp(log_pxy + np.log(spec.priors), axis=1)
    if single:
        return float(log_px[0]), log_pxy[0]
    return log_px, log_pxy


def log_density(spec, x):
    """Exact log P(x) and per-class log P(x|y) for a single point."""
    return log_densities(spec, x)


def mc_mi_terms(spec, ds):
    """Per-sample log P(x|y) - log P(x); their mean is the MC MI estimate."""
    if len(ds) == 0:
        raise ValueError("MC mutual information of an empty sample set")
    log_px, log_pxy = log_densities(spec, ds.inputs)
    return log_pxy[np.arange(len(ds)), ds.labels] - log_px


def mc_mutual_information(spec, ds):
    """Monte-Carlo estimate of I(X, Y) from paired samples of the mixture."""
    return float(np.mean(mc_mi_terms(spec, ds)))


def mc_std_error(spec, ds):
    terms = mc_mi_terms(spec, ds)
    return float(np.std(terms, ddof=1) / np.sqrt(len(terms)))


def shuffle_labels(ds, seed):
    """Seeded label permutation; destroys the input-label dependence."""
    perm = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([seed, 0xD15C]))
    ).permutation(len(ds))
    return replace(ds, labels=ds.labels[perm])


# ---------------------------------------------------------------------------
# Serialization: header (dim, M, N) + float64 rows + one label byte per row.
# ---------------------------------------------------------------------------

def save_dataset(ds, path, num_classes):
    """Binary layout: magic 'GMIX', u32 version, u32 dim, u32 M, u64 N,
    then N*dim little-endian float64 inputs, then N label bytes."""
    if num_classes > 255:
        raise ValueError("label bytes support at most 255 classes")
    n, dim = ds.inputs.shape
    with open(path, "wb") as f:
        f.write(_DATASET_MAGIC)
        f.write(struct.pack("<IIIQ", _DATASET_VERSION, dim, num_classes, n))
        f.write(ds.inputs.astype("<f8").tobytes())
        f.write(ds.labels.astype(np.uint8).tobytes())


def load_dataset(path, split="full"):
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _DATASET_MAGIC:
            raise ValueError(f"bad dataset magic {magic!r}, expected GMIX")
        version, dim, _m, n = struct.unpack("<IIIQ", f.read(20))
        if version != _DATASET_VERSION:
            raise ValueError(f"unsupported dataset version {version}")
        inputs = np.frombuffer(f.read(n * dim * 8), dtype="<f8")
        if inputs.size != n * dim:
            raise ValueError("truncated dataset file")
        labels = np.frombuffer(f.read(n), dtype=np.uint8)
        if labels.size != n:
            raise ValueError("truncated label block")
    return LabeledDataset(inputs.reshape(n, dim).copy(),
                          labels.astype(np.int64), split)


def export_csv(ds, path):
    with open(path, "w") as f:
        dim = ds.inputs.shape[1]
        f.write(",".join([f"x{i}" for i in range(dim)] + ["label"]) + "\n")
        for row, label in zip(ds.inputs, ds.labels):
            f.write(",".join(repr(float(v)) for v in row) + f",{label}\n")
