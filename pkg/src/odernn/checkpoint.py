"""Self-describing JSON checkpoints.

Floats are written with ``repr`` precision by :mod:`json`, so a save/load
round trip reproduces every parameter bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .cells import GruParams, LstmParams
from .errors import FormatError
from .tensor import Tensor
from .training import TrainConfig, cell_kind, normalize_model_name

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    model: str
    params: object
    train_config: TrainConfig
    run_config: dict = field(default_factory=dict)
    normalization: Optional[dict] = None

    @property
    def d_obs(self) -> int:
        return self.params.d_obs

    @property
    def d_h(self) -> int:
        return self.params.d_h

    def to_json(self) -> str:
        p = self.params
        doc = {
            "format_version": FORMAT_VERSION,
            "model": self.model,
            "dims": {"d_obs": p.d_obs, "d_h": p.d_h, "n_classes": p.n_classes},
            "flags": {"field_variant": self.train_config.field_variant,
                      "peepholes": self.train_config.peepholes},
            "params": {name: {"shape": list(v.shape), "values": v.data}
                       for name, v in p.as_dict().items()},
            "train_config": self.train_config.to_dict(),
            "run_config": self.run_config,
            "normalization": self.normalization,
        }
        return json.dumps(doc, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Checkpoint":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise FormatError(f"checkpoint is not valid JSON: {e}") from None
        version = doc.get("format_version")
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported checkpoint format version {version!r}")
        try:
            model = normalize_model_name(doc["model"])
            pcls = GruParams if cell_kind(model) == "gru" else LstmParams
            params = pcls.from_dict({name: Tensor(e["values"], e["shape"])
                                     for name, e in doc["params"].items()})
            cfg = TrainConfig.from_dict(doc["train_config"])
        except (KeyError, TypeError) as e:
            raise FormatError(f"checkpoint is missing or mangles {e}") from None
        dims = doc.get("dims", {})
        if dims.get("d_obs") != params.d_obs or dims.get("d_h") != params.d_h:
            raise FormatError("checkpoint dims disagree with parameter shapes")
        return cls(model, params, cfg, doc.get("run_config", {}), doc.get("normalization"))


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_text(ckpt.to_json(), encoding="utf-8")


def load_checkpoint(path) -> Checkpoint:
    return Checkpoint.from_json(Path(path).read_text(encoding="utf-8"))
