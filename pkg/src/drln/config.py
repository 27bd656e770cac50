"""``key = value`` run configuration merging network, training, degradation and path settings.

Keys are namespaced: ``net.*``, ``train.*``, ``degrade.*``, ``path.*``.
Unknown keys are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping, Optional

from .arch import NetworkConfig
from .degradation import DegradationSpec
from .trainer import TrainConfig

PATH_KEYS = ("hr_dir", "out_dir", "manifest", "checkpoint", "input", "sr_dir")
DEGRADE_KEYS = ("kind", "scale", "sigma_noise", "blur_variance", "rng_seed")


class ConfigError(ValueError):
    pass


def desk_train_config(**overrides) -> TrainConfig:
    """Training defaults sized for one CPU core."""
    kw = dict(batch_size=16, lr_patch=12, lr0=1e-3, halve_every=1000, max_steps=2000)
    kw.update(overrides)
    return TrainConfig(**kw)


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    items: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        items[key] = value
    return items


def parse_config_file(path) -> dict[str, str]:
    return parse_config_text(Path(path).read_text(), str(path))


@dataclass
class CliConfig:
    net: NetworkConfig = field(default_factory=NetworkConfig.desk)
    train: TrainConfig = field(default_factory=desk_train_config)
    degrade: DegradationSpec = field(default_factory=DegradationSpec)
    paths: dict[str, str] = field(default_factory=dict)

    @classmethod
    def resolve(cls, items: Mapping[str, str], preset: str = "desk") -> "CliConfig":
        """Build from preset defaults, then apply ``items`` (later sources already merged in)."""
        net_items, train_items, deg_items, paths = {}, {}, {}, {}
        sections = {"net": net_items, "train": train_items, "degrade": deg_items, "path": paths}
        for key, value in items.items():
            section, dot, name = key.partition(".")
            if not dot or section not in sections:
                raise ConfigError(f"unknown config key {key!r}")
            sections[section][name] = value
        _reject_unknown("net", net_items, [f.name for f in fields(NetworkConfig)])
        _reject_unknown("train", train_items, [f.name for f in fields(TrainConfig)])
        _reject_unknown("degrade", deg_items, DEGRADE_KEYS)
        _reject_unknown("path", paths, PATH_KEYS)

        preset = net_items.get("preset", preset)
        scale = int(net_items.get("scale", deg_items.get("scale", 2)))
        try:
            base = NetworkConfig.from_preset(preset, scale)
            net = NetworkConfig.from_items({**dict(base.to_items()), **net_items})
            net.validate()
            tbase = desk_train_config() if preset == "desk" else TrainConfig()
            train = TrainConfig.from_items({**dict(tbase.to_items()), **train_items})
            train.validate()
            degrade = DegradationSpec(
                kind=deg_items.get("kind", "BI"),
                scale=int(deg_items.get("scale", net.scale)),
                sigma_noise=float(deg_items.get("sigma_noise", 0.0)),
                blur_variance=float(deg_items.get("blur_variance", 1.6)),
                rng_seed=int(deg_items.get("rng_seed", 0)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return cls(net, train, degrade, paths)

    def to_items(self) -> list[tuple[str, str]]:
        items = [(f"net.{k}", v) for k, v in self.net.to_items()]
        items += [(f"train.{k}", v) for k, v in self.train.to_items()]
        d = self.degrade
        items += [("degrade.kind", d.kind), ("degrade.scale", str(d.scale)),
                  ("degrade.sigma_noise", repr(float(d.sigma_noise))),
                  ("degrade.blur_variance", repr(float(d.blur_variance))),
                  ("degrade.rng_seed", str(d.rng_seed))]
        items += [(f"path.{k}", v) for k, v in sorted(self.paths.items())]
        return items

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_items())


def _reject_unknown(section: str, items: Mapping[str, str], allowed) -> None:
    bad = sorted(set(items) - set(allowed))
    if bad:
        raise ConfigError(f"unknown config key(s): {', '.join(section + '.' + b for b in bad)}")
