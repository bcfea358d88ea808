"""Checkpoint container: magic "MRLN", u32 LE header length, UTF-8 JSON header, TNS1 tensor payload.

The tensor payload holds parameters as `param.<name>` and Adam moments as
`adam.m.<name>` / `adam.v.<name>`.
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.autodiff import AdamState, Graph
from src.exceptions import BadMagicError, ConfigError, TruncatedPayloadError
from src.logging import get_logger
from src.models import TensorContainer, UNetConfig
from src.raster_io import decode_tensors, encode_tensors
from src.unet import build_unet

log = get_logger("src.checkpoint")

MAGIC = b"MRLN"
FORMAT_VERSION = 1

_PARAM = "param."
_ADAM_M = "adam.m."
_ADAM_V = "adam.v."


class Provenance(BaseModel):
    """How a checkpoint was produced."""

    model_config = ConfigDict(extra="forbid")

    config_sha256: str = Field(default="", description="SHA-256 of the canonical run configuration")
    loss_kind: str = Field(default="merlin", examples=["merlin", "supervised"])
    epoch: int = Field(default=-1, description="Last completed epoch, -1 before training")
    step: int = Field(default=0, description="Optimizer steps taken")
    loss_history: list[float] = Field(default_factory=list, description="Mean loss per epoch")
    lr_history: list[float] = Field(default_factory=list, description="Learning rate per epoch")
    recenter: bool = Field(default=False, description="Patches were spectrum-recentered before training")


def config_digest(payload: dict[str, Any]) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass
class Checkpoint:
    """Network topology, parameters, optimizer state, normalization and provenance."""

    unet: UNetConfig
    params: dict[str, np.ndarray]
    norm: tuple[float, float]
    adam: AdamState = field(default_factory=AdamState)
    provenance: Provenance = field(default_factory=Provenance)
    _network: Graph | None = field(default=None, init=False, repr=False, compare=False)

    @classmethod
    def from_graph(
        cls, graph: Graph, unet: UNetConfig, norm: tuple[float, float], adam: AdamState, provenance: Provenance
    ) -> "Checkpoint":
        return cls(
            unet=unet,
            params={name: value.astype(np.float32, copy=True) for name, value in graph.params.items()},
            norm=(float(norm[0]), float(norm[1])),
            adam=AdamState(
                m={name: value.astype(np.float32, copy=True) for name, value in adam.m.items()},
                v={name: value.astype(np.float32, copy=True) for name, value in adam.v.items()},
                t=adam.t,
            ),
            provenance=provenance.model_copy(deep=True),
        )

    def network(self) -> Graph:
        """Inference graph with these parameters, built once and shared read-only."""
        if self._network is None:
            graph = build_unet(self.unet)
            if set(graph.params) != set(self.params):
                shape = f"levels={self.unet.levels}, base_channels={self.unet.base_channels}"
                raise ConfigError("checkpoint", f"parameters do not match UNetConfig({shape})")
            graph.load_parameters(self.params)
            self._network = graph
        return self._network

    def header(self) -> dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "unet": self.unet.model_dump(mode="json"),
            "norm": list(self.norm),
            "adam": {"t": self.adam.t, "beta1": self.adam.beta1, "beta2": self.adam.beta2, "eps": self.adam.eps},
            "provenance": self.provenance.model_dump(mode="json"),
        }

    def tensors(self) -> TensorContainer:
        tensors: dict[str, np.ndarray] = {f"{_PARAM}{name}": value for name, value in self.params.items()}
        tensors.update({f"{_ADAM_M}{name}": value for name, value in self.adam.m.items()})
        tensors.update({f"{_ADAM_V}{name}": value for name, value in self.adam.v.items()})
        return TensorContainer.from_dict(tensors)


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    header = json.dumps(ckpt.header(), sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<I", len(header)) + header + encode_tensors(ckpt.tensors())


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    # Atomic replace: readers never observe a partial file.
    staging = target.with_suffix(target.suffix + ".tmp")
    staging.write_bytes(encode_checkpoint(ckpt))
    staging.replace(target)
    log.debug("checkpoint.saved", path=str(target), epoch=ckpt.provenance.epoch)


def decode_checkpoint(payload: bytes, path: str | Path = "<memory>") -> Checkpoint:
    found = payload[: len(MAGIC)]
    if found != MAGIC:
        raise BadMagicError(path, found=found, expected=MAGIC)
    if len(payload) < len(MAGIC) + 4:
        raise TruncatedPayloadError(path, expected_bytes=len(MAGIC) + 4, found_bytes=len(payload))
    (header_len,) = struct.unpack_from("<I", payload, len(MAGIC))
    start = len(MAGIC) + 4
    if len(payload) < start + header_len:
        raise TruncatedPayloadError(path, expected_bytes=start + header_len, found_bytes=len(payload))
    try:
        header = json.loads(payload[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ConfigError(str(path), f"unreadable checkpoint header: {e}") from e
    if header.get("format_version") != FORMAT_VERSION:
        raise ConfigError(str(path), f"unsupported checkpoint format_version {header.get('format_version')!r}")

    tensors = decode_tensors(payload[start + header_len :], path).to_dict()
    params = {name[len(_PARAM) :]: value for name, value in tensors.items() if name.startswith(_PARAM)}
    adam_settings = header.get("adam", {})
    adam = AdamState(
        m={name[len(_ADAM_M) :]: value for name, value in tensors.items() if name.startswith(_ADAM_M)},
        v={name[len(_ADAM_V) :]: value for name, value in tensors.items() if name.startswith(_ADAM_V)},
        t=int(adam_settings.get("t", 0)),
        beta1=float(adam_settings.get("beta1", 0.9)),
        beta2=float(adam_settings.get("beta2", 0.999)),
        eps=float(adam_settings.get("eps", 1e-8)),
    )
    lo, hi = header["norm"]
    return Checkpoint(
        unet=UNetConfig.model_validate(header["unet"]),
        params=params,
        norm=(float(lo), float(hi)),
        adam=adam,
        provenance=Provenance.model_validate(header.get("provenance", {})),
    )


def load_checkpoint(path: str | Path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes(), path)
