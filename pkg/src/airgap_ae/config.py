"""Experiment configuration: ``key = value`` files, presets and validation.

Precedence, lowest first: built-in defaults, preset, config file, command
line. Channel-dependent keys left unset resolve from the channel kind
(AWGN: 4 channel uses, trained at 10 dB; Rayleigh block fading: 5 uses at 20 dB).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields


class ConfigError(ValueError):
    pass


CHANNEL_DEFAULTS = {
    "awgn": {"n_channel": 4, "n_feedback": 4, "snr_comm_db": 10.0, "snr_feedback_db": 10.0,
             "eval_snr_grid": "0:10:2"},
    "rbf": {"n_channel": 5, "n_feedback": 5, "snr_comm_db": 20.0, "snr_feedback_db": 20.0,
            "eval_snr_grid": "0:20:4"},
}

PRESETS = {
    "paper": {},
    "desk": {
        "batch_comm": 4096,
        "batch_feedback": 4096,
        "comm_iterations": 1500,
        "feedback_outer": 160,
        "feedback_learning_rate": 3e-3,
        "feedback_final_learning_rate": 1e-4,
        "eval_samples": 200_000,
    },
}


@dataclass
class ExperimentConfig:
    channel: str = "awgn"
    preset: str = "paper"
    n_messages: int = 256
    n_channel: int | None = None
    n_feedback: int | None = None
    sigma_c2: float = 0.02
    sigma_f2: float = 0.02
    batch_comm: int = 100_000
    batch_feedback: int = 100_000
    snr_comm_db: float | None = None
    snr_feedback_db: float | None = None
    eval_snr_grid: str | None = None
    comm_iterations: int = 30_000
    rx_steps: int = 1
    tx_steps: int = 1
    plateau_tol: float | None = None
    feedback_outer: int = 3200
    feedback_inner: int = 50
    feedback_plateau_tol: float | None = None
    learning_rate: float = 1e-3
    final_learning_rate: float | None = None
    feedback_learning_rate: float = 1e-3
    feedback_final_learning_rate: float | None = None
    optimizer: str = "adam"
    seed: int = 0
    transport: str = "perfect"
    clip_losses: bool = False
    sigma_l2_grid: str = "0,1e-4,1e-3,1e-2,1e-1,1"
    variance_batch: int = 1000
    variance_replications: int = 200
    variance_grid: str = "0,1e-4,1e-3,1e-2,1e-1,1,10,100,1000"
    eval_samples: int = 1_000_000
    out: str = "results"
    codebook: str | None = None
    agrell_fallback: bool = False

    def __post_init__(self):
        if self.channel not in CHANNEL_DEFAULTS:
            raise ConfigError(f"channel: unknown kind {self.channel!r}")
        for key, value in CHANNEL_DEFAULTS[self.channel].items():
            if getattr(self, key) is None:
                setattr(self, key, value)
        self.validate()

    def validate(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"preset: unknown preset {self.preset!r}")
        for key in ("sigma_c2", "sigma_f2"):
            v = getattr(self, key)
            if not 0 < v < 1:
                raise ConfigError(f"{key}: must lie in (0, 1), got {v}")
        for key in ("n_messages", "n_channel", "n_feedback", "batch_comm", "batch_feedback",
                    "comm_iterations", "feedback_outer", "feedback_inner", "rx_steps", "tx_steps",
                    "variance_batch", "eval_samples"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key}: must be >= 1")
        if self.n_messages < 2:
            raise ConfigError("n_messages: must be >= 2")
        if self.variance_replications < 2:
            raise ConfigError("variance_replications: must be >= 2")
        for key in ("learning_rate", "feedback_learning_rate"):
            if getattr(self, key) <= 0:
                raise ConfigError(f"{key}: must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer: unknown optimizer {self.optimizer!r}")
        try:
            parse_transport(self.transport)
            parse_grid(self.eval_snr_grid)
            parse_list(self.sigma_l2_grid)
            parse_list(self.variance_grid)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if any(s < 0 for s in parse_list(self.sigma_l2_grid) + parse_list(self.variance_grid)):
            raise ConfigError("sigma_l2 grids: values must be >= 0")

    def snr_grid(self):
        return parse_grid(self.eval_snr_grid)

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            lines.append(f"{f.name} = {format_value(v)}")
        return "\n".join(lines) + "\n"


def format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_grid(text):
    """``a:b:step`` (inclusive) or a comma list."""
    text = str(text).strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"bad SNR grid {text!r}, expected a:b:step")
        a, b, step = (float(p) for p in parts)
        if step <= 0 or b < a:
            raise ValueError(f"bad SNR grid {text!r}")
        n = int(round((b - a) / step))
        return [round(a + i * step, 10) for i in range(n + 1)]
    return parse_list(text)


def parse_list(text):
    try:
        return [float(p) for p in str(text).split(",") if p.strip()]
    except ValueError:
        raise ValueError(f"bad number list {text!r}") from None


def parse_transport(text):
    """``perfect``, ``learned`` or ``gaussian:<sigma_l2>``; returns ``(kind, sigma_l2)``."""
    text = str(text).strip()
    if text in ("perfect", "learned"):
        return text, None
    if text.startswith("gaussian:"):
        try:
            s = float(text.split(":", 1)[1])
        except ValueError:
            raise ValueError(f"bad transport {text!r}") from None
        if s < 0:
            raise ValueError("transport: sigma_l2 must be >= 0")
        return "gaussian", s
    raise ValueError(f"transport: unknown transport {text!r}")


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(key, raw):
    kind = _TYPES[key]
    raw = raw.strip()
    if raw.lower() in ("none", "") and "None" in kind:
        return None
    try:
        if kind.startswith("bool"):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError
        if kind.startswith("int"):
            v = float(raw)  # accepts 1e5
            if not v.is_integer():
                raise ValueError
            return int(v)
        if kind.startswith("float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.split()[0]}") from None
    return raw


def parse_config_text(text, source="<config>"):
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (p.strip() for p in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _coerce(key, raw)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    return values


def build_config(*layers):
    """Merge override dicts (lowest precedence first) on top of defaults and the preset."""
    merged = {}
    for layer in layers:
        merged.update({k: v for k, v in layer.items() if v is not None})
    preset = merged.get("preset", "paper")
    if preset not in PRESETS:
        raise ConfigError(f"preset: unknown preset {preset!r}")
    values = dict(PRESETS[preset])
    values.update(merged)
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path=None, overrides=None):
    text = ""
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return build_config(parse_config_text(text, str(path)), overrides or {})


def replace(config, **changes):
    return dataclasses.replace(config, **changes)
