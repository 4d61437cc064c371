"""Plain-text run configuration (key=value lines).

Example:

    L=2
    t_train=5
    t_infer=10
    learning_rate=1e-3
    momentum=0.99
    epochs=50
    seed=0
    ignore_label=255
    params_file=params.crft
    kernel=spatial,theta_gamma=3,weight=3.0
    kernel=bilateral,theta_alpha=80,theta_beta=13,weight=5.0

`kernel=` lines may repeat; each declares one pairwise kernel together
with its initial per-class weight.  Bandwidths are mandatory for the
fields the kernel kind uses.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .meanfield import KernelSpec

__all__ = ["RunConfig", "parse_run_config", "load_run_config", "default_run_config"]


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    n_labels: int = 2
    kernels: list[KernelSpec] = field(default_factory=list)
    kernel_init: list[float] = field(default_factory=list)
    t_train: int = 5
    t_infer: int = 10
    learning_rate: float = 1e-3
    momentum: float = 0.99
    epochs: int = 50
    seed: int = 0
    ignore_label: int = 255
    params_file: str | None = None


def default_run_config() -> RunConfig:
    return RunConfig(
        kernels=[
            KernelSpec("spatial", theta_gamma=3.0),
            KernelSpec("bilateral", theta_alpha=80.0, theta_beta=13.0),
        ],
        kernel_init=[3.0, 5.0],
    )


def _parse_kernel(value: str):
    parts = [p.strip() for p in value.split(",") if p.strip()]
    if not parts:
        raise ConfigError("empty kernel declaration")
    kind = parts[0]
    opts = {}
    for p in parts[1:]:
        if "=" not in p:
            raise ConfigError(f"bad kernel option {p!r}")
        k, v = p.split("=", 1)
        opts[k.strip()] = float(v)
    weight = opts.pop("weight", 3.0)
    if kind == "spatial":
        if "theta_gamma" not in opts:
            raise ConfigError("spatial kernel requires theta_gamma")
        spec = KernelSpec("spatial", theta_gamma=opts.pop("theta_gamma"))
    elif kind == "bilateral":
        if "theta_alpha" not in opts or "theta_beta" not in opts:
            raise ConfigError("bilateral kernel requires theta_alpha and theta_beta")
        spec = KernelSpec(
            "bilateral",
            theta_alpha=opts.pop("theta_alpha"),
            theta_beta=opts.pop("theta_beta"),
        )
    else:
        raise ConfigError(f"unknown kernel kind {kind!r}")
    if opts:
        raise ConfigError(f"unused kernel options {sorted(opts)}")
    return spec, weight


def parse_run_config(text: str, base_dir: Path | None = None) -> RunConfig:
    cfg = RunConfig()
    seen_kernel = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        try:
            if key == "L":
                cfg.n_labels = int(value)
            elif key == "kernel":
                spec, weight = _parse_kernel(value)
                cfg.kernels.append(spec)
                cfg.kernel_init.append(weight)
                seen_kernel = True
            elif key == "t_train":
                cfg.t_train = int(value)
            elif key == "t_infer":
                cfg.t_infer = int(value)
            elif key == "learning_rate":
                cfg.learning_rate = float(value)
            elif key == "momentum":
                cfg.momentum = float(value)
            elif key == "epochs":
                cfg.epochs = int(value)
            elif key == "seed":
                cfg.seed = int(value)
            elif key == "ignore_label":
                cfg.ignore_label = int(value)
            elif key == "params_file":
                p = Path(value)
                if base_dir is not None and not p.is_absolute():
                    p = base_dir / p
                cfg.params_file = str(p)
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ValueError as e:
            raise ConfigError(f"line {lineno}: {e}") from e
    if not seen_kernel:
        defaults = default_run_config()
        cfg.kernels = defaults.kernels
        cfg.kernel_init = defaults.kernel_init
    if cfg.n_labels < 2:
        raise ConfigError("L must be at least 2")
    if cfg.t_train < 1 or cfg.t_infer < 1:
        raise ConfigError("iteration counts must be >= 1")
    return cfg


def load_run_config(path) -> RunConfig:
    path = Path(path)
    return parse_run_config(path.read_text(), base_dir=path.parent)
