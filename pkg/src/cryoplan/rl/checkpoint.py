"""Policy checkpoint container: text header plus flat little-endian weights.

Layout mirrors the case container: four header lines (format version,
architecture descriptor, training-config echo, seed), a blank line, then
every parameter's float64 values concatenated in descriptor order.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from ..volume import _atomic_write_bytes
from .policy import PolicyNet
from .ppo import TrainConfig

__all__ = ["CheckpointError", "save_checkpoint", "load_checkpoint"]

FORMAT_LINE = "cryoplan-policy v1"


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint file."""


def _arch_descriptor(net: PolicyNet) -> dict:
    return {
        "probes_per_visit": net.probes_per_visit,
        "grid": list(net.grid),
        "conv_channels": list(net.conv_channels),
        "hidden": net.hidden,
        "log_std_range": list(net.log_std_range),
        "params": [[name, list(p.shape)] for name, p in net.named_parameters()],
    }


def save_checkpoint(path, net: PolicyNet, config: TrainConfig, seed: int) -> None:
    header = "\n".join(
        [
            FORMAT_LINE,
            "arch " + json.dumps(_arch_descriptor(net), sort_keys=True),
            "train " + json.dumps(asdict(config), sort_keys=True),
            f"seed {int(seed)}",
            "",
            "",
        ]
    )
    payload = b"".join(
        p.detach().numpy().astype("<f8").tobytes() for _, p in net.named_parameters()
    )
    _atomic_write_bytes(Path(path), header.encode("utf-8") + payload)


def load_checkpoint(path) -> tuple[PolicyNet, TrainConfig, int]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} does not exist")
    raw = path.read_bytes()
    sep = raw.find(b"\n\n")
    if sep < 0:
        raise CheckpointError(f"{path}: missing blank line after header")
    lines = raw[:sep].decode("utf-8").split("\n")
    payload = raw[sep + 2:]
    if len(lines) != 4 or lines[0] != FORMAT_LINE:
        raise CheckpointError(f"{path}: not a policy checkpoint (header {lines[:1]!r})")

    def tagged(line: str, tag: str) -> str:
        if not line.startswith(tag + " "):
            raise CheckpointError(f"{path}: expected '{tag} ...' header line, got {line!r}")
        return line[len(tag) + 1:]

    try:
        arch = json.loads(tagged(lines[1], "arch"))
        train_fields = json.loads(tagged(lines[2], "train"))
        seed = int(tagged(lines[3], "seed"))
    except (json.JSONDecodeError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed header: {exc}") from exc

    def listy(d):
        return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}

    config = TrainConfig(**listy(train_fields))
    net = PolicyNet(
        probes_per_visit=arch["probes_per_visit"],
        grid=tuple(arch["grid"]),
        conv_channels=tuple(arch["conv_channels"]),
        hidden=arch["hidden"],
        log_std_range=tuple(arch["log_std_range"]),
        seed=seed,
    )

    params = dict(net.named_parameters())
    declared = arch["params"]
    if [n for n, _ in declared] != list(params):
        raise CheckpointError(f"{path}: parameter list does not match the declared architecture")
    total = sum(int(np.prod(shape)) for _, shape in declared)
    if len(payload) != 8 * total:
        raise CheckpointError(
            f"{path}: weight payload has {len(payload)} bytes, expected {8 * total}"
        )
    offset = 0
    with torch.no_grad():
        for name, shape in declared:
            shape = tuple(shape)
            if tuple(params[name].shape) != shape:
                raise CheckpointError(f"{path}: shape mismatch for {name}")
            n = int(np.prod(shape))
            vals = np.frombuffer(payload, dtype="<f8", count=n, offset=offset).reshape(shape)
            params[name].copy_(torch.from_numpy(vals.copy()))
            offset += 8 * n
    return net, config, seed
