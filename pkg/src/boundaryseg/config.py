"""Config files: UTF-8 ``key = value`` lines, ``#`` comments.

Top-level keys map to training fields; ``net.``-prefixed keys map to
network fields.  Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

from dataclasses import fields

from .blocks import NetConfig
from .train import TrainConfig


def parse_kv_text(text):
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def _coerce(value, typ, key):
    if typ is bool:
        low = value.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {value!r}")
    try:
        return typ(value)
    except ValueError as exc:
        raise ValueError(f"{key}: {exc}") from None


def config_from_text(text):
    pairs = parse_kv_text(text)
    train_fields = {f.name: f.type for f in fields(TrainConfig)
                    if f.name != "net"}
    net_fields = {f.name: f.type for f in fields(NetConfig)}
    train_kwargs, net_kwargs = {}, {}
    type_of = {"int": int, "float": float, "bool": bool, "str": str}
    for key, value in pairs.items():
        if key.startswith("net."):
            name = key[4:]
            if name not in net_fields:
                raise ValueError(f"unknown network key {key!r}")
            net_kwargs[name] = _coerce(value, type_of[net_fields[name]], key)
        else:
            if key not in train_fields:
                raise ValueError(f"unknown key {key!r}")
            train_kwargs[key] = _coerce(value, type_of[train_fields[key]], key)
    return TrainConfig(net=NetConfig(**net_kwargs), **train_kwargs)


def config_to_text(cfg):
    lines = []
    for f in fields(TrainConfig):
        if f.name == "net":
            continue
        lines.append(f"{f.name} = {getattr(cfg, f.name)}")
    for f in fields(NetConfig):
        lines.append(f"net.{f.name} = {getattr(cfg.net, f.name)}")
    return "\n".join(lines) + "\n"


def load_config(path):
    with open(path, "r", encoding="utf-8") as fp:
        return config_from_text(fp.read())
