"""Run configuration: one text file holding label space, generator, model and training keys.

Top-level keys are the label space (``n_category`` ... ``seen_config``);
``gen.*`` keys feed ``GeneratorConfig``, ``train.*`` keys ``TrainConfig``,
``model.*`` keys the model initialisation and ``eval.*`` keys evaluation.
A top-level ``seed`` is the default seed of every command.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

from . import textconfig
from .data.synthetic import GeneratorConfig
from .learning.train import TrainConfig
from .model import KernelConfig, LabelSpace, TermWeights

SPACE_KEYS = ("n_category", "n_object", "n_action", "n_progress", "n_scene", "n_intent",
              "seen_config")
MODEL_KEYS = {"sigma": float, "kernel_weight": float, "init_scale": float, "intent_init": float,
              "w_op": float, "w_ap": float, "w_os": float, "w_coap": float}
EVAL_KEYS = {"post_process": bool, "classify_frames": int, "localize_frames": int,
             "localize_rows": int, "smooth_window": int}
SECTIONS = ("gen", "train", "model", "eval")
BUILTIN = ("reference", "desk")


@dataclass
class RunConfig:
    space: LabelSpace
    gen: GeneratorConfig = field(default_factory=GeneratorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    model: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)
    seed: int = 0

    def kernel_cfg(self) -> KernelConfig:
        d = KernelConfig()
        return KernelConfig(self.model.get("sigma", d.sigma), self.model.get("kernel_weight",
                                                                             d.kernel_weight))

    def term_weights(self) -> TermWeights:
        return TermWeights(*(self.model.get(f"w_{n}", 1.0) for n in ("op", "ap", "os", "coap")))

    def provider_kw(self) -> dict:
        return {k: self.model[k] for k in ("init_scale", "intent_init") if k in self.model}

    def model_kw(self) -> dict:
        """Keyword arguments for ``FieldModel.init`` (besides space, feature_dim, variant, seed)."""
        return {"kernel_cfg": self.kernel_cfg(), "term_weights": self.term_weights(),
                **self.provider_kw()}

    def entries(self) -> dict:
        out = {"seed": self.seed, **self.space.to_config()}
        for k, v in self.gen.to_entries().items():
            out[f"gen.{k}"] = v
        for f in fields(TrainConfig):
            out[f"train.{f.name}"] = getattr(self.train, f.name)
        for sec in ("model", "eval"):
            for k, v in sorted(getattr(self, sec).items()):
                out[f"{sec}.{k}"] = v
        return {k: v for k, v in out.items() if v is not None}

    def dumps(self) -> str:
        return textconfig.dump(self.entries())

    @classmethod
    def from_entries(cls, entries: dict) -> "RunConfig":
        unknown = [k for k in entries if k != "seed" and k not in SPACE_KEYS
                   and k.split(".", 1)[0] not in SECTIONS]
        if unknown:
            raise textconfig.ConfigError(f"unknown config keys: {sorted(unknown)}")
        space = LabelSpace.from_config({k: entries[k] for k in SPACE_KEYS if k in entries})
        gen = GeneratorConfig.from_entries(textconfig.subsection(entries, "gen"))
        tr = textconfig.subsection(entries, "train")
        if isinstance(tr.get("h_mode"), (int, float)) and not isinstance(tr["h_mode"], bool):
            tr["h_mode"] = float(tr["h_mode"])
        train = TrainConfig.from_entries(tr)
        model = _typed(textconfig.subsection(entries, "model"), MODEL_KEYS, "model")
        ev = _typed(textconfig.subsection(entries, "eval"), EVAL_KEYS, "eval")
        return cls(space, gen, train, model, ev, int(entries.get("seed", 0)))

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        return cls.from_entries(textconfig.parse(text))

    @classmethod
    def load(cls, path) -> "RunConfig":
        """``path`` is a file or the name of a built-in config (``reference``, ``desk``)."""
        if str(path) in BUILTIN and not Path(path).exists():
            return cls.loads(builtin_text(str(path)))
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def _typed(entries: dict, schema: dict, section: str) -> dict:
    out = {}
    for k, v in entries.items():
        if k not in schema:
            raise textconfig.ConfigError(f"unknown {section} key {k!r}")
        want = schema[k]
        if want is float and isinstance(v, int) and not isinstance(v, bool):
            v = float(v)
        if not isinstance(v, want) or (want is int and isinstance(v, bool)):
            raise textconfig.ConfigError(f"{section}.{k} must be {want.__name__}, got {v!r}")
        out[k] = v
    return out


def builtin_text(name: str) -> str:
    if name not in BUILTIN:
        raise ValueError(f"no built-in config {name!r}; choose from {BUILTIN}")
    return resources.files("asyncfield").joinpath("configs", f"{name}.cfg").read_text("utf-8")


def reference_config() -> RunConfig:
    return RunConfig.loads(builtin_text("reference"))
