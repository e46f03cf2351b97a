"""Flat ``section.key = value`` run configuration.

The format is a line-oriented text file::

    # comment
    data.source = synthetic
    train.grid_schedule = 5, 10
    train.lambda_init = 0.2

Every key is declared in ``SCHEMA`` with a type and default; unknown keys
and malformed values raise ``ConfigError``.  Command-line overrides use
the same dotted names (``--train.epochs 50``), so a config file and a
flag line describe a run identically.
"""

from __future__ import annotations

from .errors import ConfigError

__all__ = ["SCHEMA", "default_config", "parse_config_text", "load_config",
           "apply_overrides", "coerce", "config_to_text"]

# type tags: int, float, bool, str, ints (comma list), strs (comma list),
# opt_float / opt_int / opt_str (value or "none")
SCHEMA = {
    # data source: exactly one of synthetic | csv drives loading
    "data.source": ("str", "synthetic"),
    "data.path": ("opt_str", None),
    "data.label": ("opt_str", None),
    "data.sensitive": ("opt_strs", None),
    "data.m": ("int", 8000),
    "data.n": ("int", 10),
    "data.n_sensitive": ("int", 2),
    "data.balance": ("float", 0.4),
    "data.gamma": ("float", 2.0),
    "data.noise": ("float", 0.7),
    "data.mixing": ("float", 1.5),
    "data.seed": ("opt_int", None),
    "data.test_fraction": ("float", 0.2),
    "data.split_seed": ("opt_int", None),
    "data.scale": ("bool", True),

    "train.classifier_hidden": ("ints", [16, 8]),
    "train.adversary_hidden": ("ints", [32]),
    "train.order": ("int", 3),
    "train.grid_schedule": ("ints", [5, 10]),
    "train.clf_optimizer": ("str", "adam"),
    "train.clf_lr": ("float", 0.02),
    "train.adv_optimizer": ("str", "adam"),
    "train.adv_lr": ("float", 0.01),
    "train.beta1": ("float", 0.9),
    "train.beta2": ("opt_float", None),
    "train.epsilon": ("float", 1e-8),
    "train.adopt_clip": ("bool", False),
    "train.epochs": ("int", 30),
    "train.pretrain_epochs": ("int", 30),
    "train.adversary_epochs": ("int", 100),
    "train.batch_size": ("int", 256),
    "train.eta": ("float", 0.04),
    "train.tau": ("float", 90.0),
    "train.lambda_init": ("float", 0.5),
    "train.lambda_shared": ("bool", False),
    "train.lambda_split": ("str", "train"),
    "train.l1": ("float", 0.0),
    "train.l2": ("float", 1e-4),
    "train.seed": ("opt_int", None),
    "train.eval_every": ("int", 1),
    "train.alternating": ("bool", False),
    "train.calibrate": ("bool", True),

    "eval.split": ("str", "test"),
    "eval.cutoff": ("float", 0.5),

    "diag.pairs": ("int", 10000),
    "diag.lines": ("int", 200),
    "diag.bins": ("int", 20),
    "diag.seed": ("opt_int", None),

    "ablate.orders": ("ints", [3, 4, 5]),
    "ablate.optimizers": ("strs", ["adam", "oadam", "adopt"]),

    "out.metrics": ("str", "metrics.jsonl"),
    "out.model": ("str", "model.kan"),
    "run.seed": ("int", 0),
}

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def coerce(key: str, raw: str):
    """Parse a raw string for ``key`` according to its schema type."""
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key: {key!r}")
    kind, _ = SCHEMA[key]
    text = raw.strip()
    opt = kind.startswith("opt_")
    if opt:
        if text.lower() in ("none", ""):
            return None
        kind = kind[4:]
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        if kind == "str":
            return text
        if kind == "ints":
            return [int(p) for p in text.replace(",", " ").split()]
        if kind == "strs":
            return [p for p in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r} (expected {kind})")
    raise ConfigError(f"unhandled schema type {kind} for {key}")


def default_config() -> dict:
    return {key: (list(d) if isinstance(d, list) else d)
            for key, (_, d) in SCHEMA.items()}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse file contents into a full config dict (defaults + overrides)."""
    cfg = default_config()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(
                f"{source}:{lineno}: expected 'key = value', got {line!r}"
            )
        key, _, raw = stripped.partition("=")
        cfg[key.strip()] = coerce(key.strip(), raw)
    return cfg


def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config_text(fh.read(), source=str(path))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")


def apply_overrides(cfg: dict, pairs) -> dict:
    """Apply ``key=value`` strings (from dotted command-line flags)."""
    for key, raw in pairs:
        cfg[key] = coerce(key, raw)
    return cfg


def config_to_text(cfg: dict) -> str:
    """Render a config dict back to the file format (sorted, lossless)."""
    lines = []
    for key in sorted(cfg):
        val = cfg[key]
        if val is None:
            text = "none"
        elif isinstance(val, bool):
            text = "true" if val else "false"
        elif isinstance(val, list):
            text = ", ".join(str(v) for v in val)
        else:
            text = str(val)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"
