"""Experiment configuration: flat key-value text with dotted section prefixes.

Format, one setting per line::

    env.kind = cleanup
    train.total_steps = 20000
    influence.variant = basic
    run.seeds = 0,1,2

Lines starting with ``#`` are comments (full-line only, since map layouts
contain ``#``).  Map layouts are inlined with ``|`` as the row separator.
Unknown keys are a hard error.  Hyperparameters left unset fall back to
tuned defaults per (influence variant, environment kind).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from .envs import EnvConfig
from .errors import ConfigError
from .influence import InfluenceConfig
from .policy import TrainConfig


@dataclass(frozen=True)
class MoaConfig:
    enabled: bool = False        # forced on by the moa influence variant
    loss_weight: float = 1.0
    visible_only: bool = True


@dataclass(frozen=True)
class RunConfig:
    seeds: tuple[int, ...] = (0,)
    out: str | None = None
    eval_episodes: int = 100


@dataclass
class ExperimentConfig:
    env: EnvConfig
    train: TrainConfig
    influence: InfluenceConfig
    moa: MoaConfig
    run: RunConfig
    comm_symbols: int = 0


def _parse_bool(s: str) -> bool:
    if s.lower() in ("true", "1", "yes"):
        return True
    if s.lower() in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _parse_ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip() != "")


def _parse_floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(",") if x.strip() != "")


def _parse_layout(s: str) -> str:
    return s.replace("|", "\n")


SCHEMA: dict[str, object] = {
    "env.kind": str,
    "env.layout": _parse_layout,
    "env.layout_file": str,
    "env.episode_length": int,
    "env.view_size": int,
    "env.harvest_respawn": _parse_floats,
    "env.cleanup_waste_threshold": float,
    "env.cleanup_waste_spawn_prob": float,
    "env.cleanup_apple_spawn_prob": float,
    "env.cleanup_initial_waste": float,
    "train.total_steps": int,
    "train.rollout_len": int,
    "train.gamma": float,
    "train.lr_init": float,
    "train.lr_end": float,
    "train.momentum": float,
    "train.max_grad_norm": float,
    "train.value_coef": float,
    "train.entropy_coef": float,
    "train.comm_entropy_coef": float,
    "train.comm_loss_weight": float,
    "train.fc_width": int,
    "train.hidden_width": int,
    "train.workers": int,
    "train.metrics_window": int,
    "influence.variant": str,
    "influence.divergence": str,
    "influence.prior": str,
    "influence.alpha": float,
    "influence.beta": float,
    "influence.curriculum_steps": int,
    "influence.influencers": _parse_ints,
    "influence.influencee_reward": _parse_bool,
    "influence.visibility_gate": _parse_bool,
    "influence.log_pairwise": _parse_bool,
    "comm.symbols": int,
    "moa.enabled": _parse_bool,
    "moa.loss_weight": float,
    "moa.visible_only": _parse_bool,
    "run.seeds": _parse_ints,
    "run.out": str,
    "run.eval_episodes": int,
}

# Tuned defaults per (variant, environment kind); None matches any kind.
# Applied only for keys the config leaves unset.
DEFAULT_HYPERS: dict[tuple[str, str | None], dict[str, object]] = {
    ("none", "cleanup"): {
        "train.entropy_coef": 0.00176, "train.lr_init": 0.00126, "train.lr_end": 0.000012,
    },
    ("none", "harvest"): {
        "train.entropy_coef": 0.000687, "train.lr_init": 0.00136, "train.lr_end": 0.000028,
    },
    ("basic", "cleanup"): {
        "train.entropy_coef": 0.000248, "train.lr_init": 0.00107, "train.lr_end": 0.000042,
        "influence.beta": 0.146, "influence.divergence": "jsd",
        "influence.influencers": (0,),
    },
    ("basic", "harvest"): {
        "train.entropy_coef": 0.00025, "train.lr_init": 0.00107, "train.lr_end": 0.000042,
        "influence.beta": 0.224, "influence.divergence": "pmi",
        "influence.influencers": (0, 1, 2),
    },
    ("comm", "cleanup"): {
        "train.entropy_coef": 0.00305, "train.lr_init": 0.00249, "train.lr_end": 0.0000127,
        "train.comm_entropy_coef": 0.000789, "train.comm_loss_weight": 0.0758,
        "influence.beta": 2.752, "influence.alpha": 0.0, "influence.divergence": "kl",
        "comm.symbols": 9,
    },
    ("comm", "harvest"): {
        "train.entropy_coef": 0.0022, "train.lr_init": 0.000413, "train.lr_end": 0.000049,
        "train.comm_entropy_coef": 0.00208, "train.comm_loss_weight": 0.0709,
        "influence.beta": 4.825, "influence.alpha": 1.0, "influence.divergence": "kl",
        "comm.symbols": 7,
    },
    ("moa", "cleanup"): {
        "train.entropy_coef": 0.00176, "train.lr_init": 0.00123, "train.lr_end": 0.000012,
        "influence.beta": 0.62, "influence.divergence": "kl",
        "moa.loss_weight": 15.007, "moa.visible_only": True,
    },
    ("moa", "harvest"): {
        "train.entropy_coef": 0.00223, "train.lr_init": 0.0012, "train.lr_end": 0.000044,
        "influence.beta": 2.521, "influence.divergence": "kl",
        "moa.loss_weight": 10.911, "moa.visible_only": True,
    },
    ("comm", None): {"comm.symbols": 8},
}


def parse_raw(text: str) -> dict[str, object]:
    """Lines to a typed key/value dict; unknown keys and bad values are errors."""
    raw: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        caster = SCHEMA.get(key)
        if caster is None:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate config key {key!r}")
        try:
            raw[key] = caster(value)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    return raw


def build_config(raw: dict[str, object], base_dir: Path | None = None) -> ExperimentConfig:
    """Typed config from a raw key dict, applying per-(variant, kind) defaults."""
    unknown = set(raw) - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kind = raw.get("env.kind")
    if kind is None:
        raise ConfigError("env.kind is required")
    variant = raw.get("influence.variant", "none")
    merged = dict(raw)
    for table_key in ((variant, kind), (variant, None)):
        for key, value in DEFAULT_HYPERS.get(table_key, {}).items():
            merged.setdefault(key, value)

    if "env.layout_file" in merged and "env.layout" not in merged:
        path = Path(merged["env.layout_file"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        try:
            merged["env.layout"] = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read layout file {path}: {exc}") from exc
    merged.pop("env.layout_file", None)

    def section(prefix: str) -> dict[str, object]:
        return {k.split(".", 1)[1]: v for k, v in merged.items()
                if k.startswith(prefix + ".")}

    env = EnvConfig(**section("env"))
    train = TrainConfig(**section("train"))
    influence = InfluenceConfig(**{"variant": variant, **section("influence")})
    moa = MoaConfig(**section("moa"))
    run = RunConfig(**section("run"))
    comm_symbols = int(merged.get("comm.symbols", 0))
    if not run.seeds:
        raise ConfigError("run.seeds must not be empty")
    if influence.variant == "comm" and comm_symbols < 2:
        raise ConfigError("comm variant requires comm.symbols >= 2")
    if influence.variant == "moa" and not moa.enabled:
        moa = replace(moa, enabled=True)
    if run.eval_episodes < 1:
        raise ConfigError("run.eval_episodes must be >= 1")
    return ExperimentConfig(env=env, train=train, influence=influence,
                            moa=moa, run=run, comm_symbols=comm_symbols)


def parse_config(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    return build_config(parse_raw(text), base_dir)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, base_dir=path.parent)


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(cfg: ExperimentConfig) -> str:
    """Canonical resolved text; parse_config(format_config(c)) reproduces c."""
    pairs: list[tuple[str, object]] = [("env.kind", cfg.env.kind)]
    if cfg.env.layout is not None:
        pairs.append(("env.layout", cfg.env.layout.strip("\n").replace("\n", "|")))
    for name in ("episode_length", "view_size", "harvest_respawn",
                 "cleanup_waste_threshold", "cleanup_waste_spawn_prob",
                 "cleanup_apple_spawn_prob", "cleanup_initial_waste"):
        value = getattr(cfg.env, name)
        if value is not None:
            pairs.append((f"env.{name}", value))
    for name in ("total_steps", "rollout_len", "gamma", "lr_init", "lr_end",
                 "momentum", "max_grad_norm", "value_coef", "entropy_coef",
                 "comm_entropy_coef", "comm_loss_weight", "fc_width",
                 "hidden_width", "workers", "metrics_window"):
        pairs.append((f"train.{name}", getattr(cfg.train, name)))
    for name in ("variant", "divergence", "prior", "alpha", "beta",
                 "curriculum_steps", "influencers", "influencee_reward",
                 "visibility_gate", "log_pairwise"):
        pairs.append((f"influence.{name}", getattr(cfg.influence, name)))
    pairs.append(("comm.symbols", cfg.comm_symbols))
    pairs.append(("moa.enabled", cfg.moa.enabled))
    pairs.append(("moa.loss_weight", cfg.moa.loss_weight))
    pairs.append(("moa.visible_only", cfg.moa.visible_only))
    pairs.append(("run.seeds", cfg.run.seeds))
    if cfg.run.out is not None:
        pairs.append(("run.out", cfg.run.out))
    pairs.append(("run.eval_episodes", cfg.run.eval_episodes))
    return "\n".join(f"{k} = {_format_value(v)}" for k, v in pairs) + "\n"


def with_overrides(cfg: ExperimentConfig, *, seeds=None, out=None, workers=None) -> ExperimentConfig:
    run = cfg.run
    if seeds is not None:
        run = replace(run, seeds=tuple(seeds))
    if out is not None:
        run = replace(run, out=str(out))
    train = cfg.train if workers is None else replace(cfg.train, workers=workers)
    return ExperimentConfig(env=cfg.env, train=train, influence=cfg.influence,
                            moa=cfg.moa, run=run, comm_symbols=cfg.comm_symbols)
