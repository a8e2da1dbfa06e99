"""Flat key=value experiment configuration with CLI overrides.

Config files hold one ``key = value`` pair per line (``#`` comments);
command-line ``--set key=value`` pairs win over the file.  Keys of the form
``require_<metric>_min`` / ``require_<metric>_max`` declare acceptance
thresholds that commands verify before exiting.
"""

import hashlib
import os
from dataclasses import dataclass, field, fields

TASKS = ("mixture-mi", "mnist-cls", "multi-mnist-wsol")

DEFAULT_ARCH = {
    "mixture-mi": "dense:64,relu,dense:64,relu,dense:64,relu,dense:5",
    "mnist-cls": ("conv:16x3,relu,pool:2,conv:32x3,relu,pool:2,"
                  "flatten,dense:64,relu,dense:10"),
    "multi-mnist-wsol": "conv:16x3,relu,pool:2,conv:32x3,relu,gap,dense:10",
}

DEFAULT_SELECT = {
    "mixture-mi": "val_loss",
    "mnist-cls": "val_acc",
    "multi-mnist-wsol": "val_acc",
}


@dataclass
class ExperimentConfig:
    task: str = "mixture-mi"
    name: str = ""
    seed: int = None
    out_dir: str = "runs"
    # dataset parameters
    dim: int = 10
    balanced: bool = True
    data_path: str = ""
    images_path: str = ""
    labels_path: str = ""
    n_images: int = 14000
    jitter: bool = False
    unbalance_minority: str = "0,2,4,6,8"
    unbalance_keep: float = 0.1
    shuffle_labels: bool = False
    # model and optimization
    arch: str = ""
    head: str = "softmax"
    optimizer: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 128
    epochs: int = 20
    select: str = ""
    # localization
    map_kinds: str = "cam,infocam"
    region_size: int = 3
    threshold_ratio: float = 0.2
    threshold_on: str = "region"
    label_mode: str = "gt"
    overlays: int = 0
    # acceptance thresholds: metric name -> (op, bound)
    requirements: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; expected {TASKS}")
        if not self.arch:
            self.arch = DEFAULT_ARCH[self.task]
        if not self.select:
            self.select = DEFAULT_SELECT[self.task]
        if not self.name:
            self.name = f"{self.task}"

    def validate(self):
        if self.seed is None:
            raise ValueError("config must set a seed")
        return self

    def digest(self):
        """Hash of every experiment-defining field except seed and output
        location, so runs differing only by seed share a digest."""
        skip = {"seed", "out_dir", "requirements", "overlays"}
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            if f.name in skip:
                continue
            lines.append(f"{f.name}={getattr(self, f.name)!r}")
        return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:16]

    def map_kind_list(self):
        return [k.strip() for k in self.map_kinds.split(",") if k.strip()]

    def minority_classes(self):
        return tuple(int(c) for c in self.unbalance_minority.split(",") if c)


def _coerce(name, raw, kind):
    if kind is bool:
        lowered = str(raw).strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"cannot parse boolean {name}={raw!r}")
    return kind(raw)


def parse_pairs(pairs):
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"expected key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path=None, overrides=()):
    """Build a config from an optional file plus key=value overrides."""
    raw = {}
    if path:
        with open(path) as f:
            for lineno, line in enumerate(f, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(
                        f"{path}:{lineno}: expected key = value")
                key, value = line.split("=", 1)
                raw[key.strip()] = value.strip()
    raw.update(parse_pairs(overrides))

    requirements = {}
    values = {}
    types = {"task": str, "name": str, "seed": int, "out_dir": str,
             "dim": int, "balanced": bool, "data_path": str,
             "images_path": str, "labels_path": str, "n_images": int,
             "jitter": bool, "unbalance_minority": str,
             "unbalance_keep": float, "shuffle_labels": bool, "arch": str,
             "head": str, "optimizer": str, "lr": float, "momentum": float,
             "batch_size": int, "epochs": int, "select": str,
             "map_kinds": str, "region_size": int, "threshold_ratio": float,
             "threshold_on": str, "label_mode": str, "overlays": int}
    for key, value in raw.items():
        if key.startswith("require_") and (key.endswith("_min")
                                           or key.endswith("_max")):
            metric = key[len("require_"):-len("_min")]
            op = "min" if key.endswith("_min") else "max"
            requirements[(metric, op)] = float(value)
            continue
        if key not in types:
            raise ValueError(f"unknown config key {key!r}")
        values[key] = _coerce(key, value, types[key])
    cfg = ExperimentConfig(**values)
    cfg.requirements = requirements
    return cfg


def check_requirements(cfg, metrics):
    """Return a list of human-readable failures for unmet thresholds."""
    failures = []
    for (metric, op), bound in sorted(cfg.requirements.items()):
        if metric not in metrics:
            failures.append(f"required metric {metric!r} was not produced")
            continue
        value = metrics[metric]
        if op == "min" and value < bound:
            failures.append(f"{metric}={value:.6g} below required {bound}")
        if op == "max" and value > bound:
            failures.append(f"{metric}={value:.6g} above allowed {bound}")
    return failures


def data_root():
    return os.environ.get("INFOCAM_DATA_ROOT", ".")
