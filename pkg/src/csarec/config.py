"""Run configuration: a sectioned INI file checked against a typed schema.

Resolution order is schema defaults, then the method preset, then the file,
then command-line overrides. Every invalid field is reported in one error.
"""

from __future__ import annotations

import configparser
import io
from typing import Any, Iterable, Mapping

from .augment import AUGMENTATION_KINDS, AugmentationSpec
from .datasets import Feedback
from .encoders import ENCODER_KINDS, EncoderConfig
from .losses import LossWeights
from .trainer import CONTRASTIVE_MODES, TrainConfig


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _str(text: str) -> str:
    return str(text).strip()


SCHEMA: dict[str, dict[str, tuple[Any, Any]]] = {
    "data": {
        "max_len": (int, 10),
        "min_session_length": (int, 3),
        "reward_click": (float, 0.2),
        "reward_purchase": (float, 1.0),
        "feedback_map": (_str, "click:click,purchase:purchase"),
        "split_ratios": (_floats, (0.8, 0.1, 0.1)),
        "split_seed": (int, 0),
    },
    "encoder": {
        "kind": (_str, "recurrent"),
        "embedding_dim": (int, 64),
        "attention_heads": (int, 1),
        "dropout": (float, 0.0),
    },
    "train": {
        "method": (_str, "csa-n"),
        "gamma": (float, 0.5),
        "batch_size": (int, 256),
        "learning_rate": (float, 0.01),
        "max_epochs": (int, 5),
        "eval_every": (int, 1),
        "seed": (int, 0),
        "deterministic": (_bool, True),
        "activation": (_str, "identity"),
        "contrastive_mode": (_str, "state"),
    },
    "loss": {
        "w_s": (float, 1.0),
        "w_q": (float, 1.0),
        "w_a": (float, 1.0),
        "w_c": (float, 1.0),
    },
    "augment": {
        "kind": (_str, "gaussian"),
        "sigma": (float, 0.003),
        "alpha": (float, 0.001),
        "beta": (float, 0.005),
        "min_len_T": (int, 3),
        "drop_p": (float, 0.1),
        "n": (int, 2),
    },
    "evaluate": {
        "feedback": (_str, "purchase"),
        "seed": (int, 0),
        "use_q": (_bool, False),
    },
    "simulate": {
        "rounds": (int, 10),
        "gamma": (float, 0.5),
        "repetitions": (int, 3),
        "warm_start": (int, 3),
        "holdout_fraction": (float, 0.1),
        "seed": (int, 0),
    },
}

PRESETS: dict[str, dict[tuple[str, str], Any]] = {
    "normal": {("loss", "w_q"): 0.0, ("loss", "w_a"): 0.0, ("loss", "w_c"): 0.0,
               ("train", "contrastive_mode"): "off"},
    "sqn": {("loss", "w_a"): 0.0, ("loss", "w_c"): 0.0, ("train", "contrastive_mode"): "off"},
    "csa-n": {("augment", "kind"): "gaussian"},
    "csa-u": {("augment", "kind"): "uniform"},
    "csa-m": {("augment", "kind"): "item_mask"},
    "csa-d": {("augment", "kind"): "dim_dropout"},
}


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("invalid configuration: " + "; ".join(problems))
        self.problems = problems


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(repr(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


class RunConfig:
    def __init__(self, values: dict[str, dict[str, Any]]):
        self.values = values

    def __getitem__(self, key: str) -> dict[str, Any]:
        return self.values[key]

    @classmethod
    def load(
        cls,
        path: str | None = None,
        overrides: Iterable[str] = (),
        text: str | None = None,
    ) -> "RunConfig":
        """``overrides`` are ``section.key=value`` strings (highest precedence)."""
        problems: list[str] = []
        raw: dict[tuple[str, str], str] = {}
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str  # keys are case-sensitive (min_len_T)
        try:
            if path is not None:
                with open(path, encoding="utf-8") as fh:
                    parser.read_file(fh, source=str(path))
            elif text is not None:
                parser.read_string(text)
        except (OSError, configparser.Error) as exc:
            raise ConfigError([f"cannot read config: {exc}"]) from None
        for section in parser.sections():
            if section not in SCHEMA:
                problems.append(f"unknown section [{section}]")
                continue
            for key, value in parser.items(section):
                raw[(section, key)] = value
        for item in overrides:
            name, sep, value = item.partition("=")
            section, dot, key = name.strip().partition(".")
            if not sep or not dot:
                problems.append(f"override {item!r} is not of the form section.key=value")
                continue
            if section not in SCHEMA:
                problems.append(f"unknown section [{section}] in override {item!r}")
                continue
            raw[(section, key)] = value

        values = {s: {k: default for k, (_, default) in keys.items()} for s, keys in SCHEMA.items()}
        method = raw.get(("train", "method"), values["train"]["method"]).strip()
        if method not in PRESETS:
            problems.append(f"train.method: unknown preset {method!r} (choose from {sorted(PRESETS)})")
        else:
            for (s, k), v in PRESETS[method].items():
                values[s][k] = v
        for (section, key), text_value in raw.items():
            if key not in SCHEMA[section]:
                problems.append(f"unknown key {section}.{key}")
                continue
            conv = SCHEMA[section][key][0]
            try:
                values[section][key] = conv(text_value)
            except (TypeError, ValueError) as exc:
                problems.append(f"{section}.{key}: {exc}")
        cfg = cls(values)
        problems.extend(cfg.validate())
        if problems:
            raise ConfigError(problems)
        return cfg

    def validate(self) -> list[str]:
        v = self.values
        problems = []
        d, e, t, a = v["data"], v["encoder"], v["train"], v["augment"]
        if d["max_len"] < 1:
            problems.append("data.max_len must be >= 1")
        if d["min_session_length"] < 2:
            problems.append("data.min_session_length must be >= 2")
        if len(d["split_ratios"]) != 3 or any(r <= 0 for r in d["split_ratios"]):
            problems.append("data.split_ratios must be three positive numbers")
        try:
            self.feedback_map()
        except ValueError as exc:
            problems.append(f"data.feedback_map: {exc}")
        if e["kind"] not in ENCODER_KINDS:
            problems.append(f"encoder.kind must be one of {ENCODER_KINDS}")
        if e["embedding_dim"] < 1:
            problems.append("encoder.embedding_dim must be >= 1")
        elif e["attention_heads"] < 1 or e["embedding_dim"] % e["attention_heads"]:
            problems.append("encoder.attention_heads must divide encoder.embedding_dim")
        if not 0 <= e["dropout"] < 1:
            problems.append("encoder.dropout must lie in [0, 1)")
        if not 0 <= t["gamma"] <= 1:
            problems.append("train.gamma must lie in [0, 1]")
        if t["batch_size"] < 1:
            problems.append("train.batch_size must be >= 1")
        if t["learning_rate"] <= 0:
            problems.append("train.learning_rate must be positive")
        if t["max_epochs"] < 0:
            problems.append("train.max_epochs must be >= 0")
        if t["contrastive_mode"] not in CONTRASTIVE_MODES:
            problems.append(f"train.contrastive_mode must be one of {CONTRASTIVE_MODES}")
        if t["activation"] not in ("identity", "tanh", "relu"):
            problems.append("train.activation must be identity, tanh or relu")
        for k, w in v["loss"].items():
            if not w >= 0:
                problems.append(f"loss.{k} must be >= 0")
        if a["kind"] not in AUGMENTATION_KINDS:
            problems.append(f"augment.kind must be one of {AUGMENTATION_KINDS}")
        if a["sigma"] < 0:
            problems.append("augment.sigma must be >= 0")
        if not 0 <= a["alpha"] <= a["beta"]:
            problems.append("augment.alpha/beta need 0 <= alpha <= beta")
        if a["min_len_T"] < 1:
            problems.append("augment.min_len_T must be >= 1")
        if not 0 <= a["drop_p"] < 1:
            problems.append("augment.drop_p must lie in [0, 1)")
        if a["n"] < 0:
            problems.append("augment.n must be >= 0")
        contrastive_on = t["contrastive_mode"] != "off" and v["loss"]["w_c"] > 0
        if contrastive_on and a["n"] < 1:
            problems.append("contrastive training needs augment.n >= 1")
        if contrastive_on and t["batch_size"] < 2:
            problems.append("contrastive training needs train.batch_size >= 2")
        s = v["simulate"]
        if s["rounds"] < 1 or s["repetitions"] < 1:
            problems.append("simulate.rounds and simulate.repetitions must be >= 1")
        if not 0 <= s["gamma"] <= 1:
            problems.append("simulate.gamma must lie in [0, 1]")
        return problems

    # -- typed views -------------------------------------------------------

    def feedback_map(self) -> dict[str, Feedback]:
        out = {}
        for pair in self.values["data"]["feedback_map"].split(","):
            if not pair.strip():
                continue
            label, sep, target = pair.partition(":")
            if not sep:
                raise ValueError(f"entry {pair!r} is not label:click|purchase")
            out[label.strip().lower()] = Feedback.from_label(target.strip())
        if not out:
            raise ValueError("empty mapping")
        return out

    def rewards(self) -> dict[str, float]:
        d = self.values["data"]
        return {"click": d["reward_click"], "purchase": d["reward_purchase"]}

    def encoder_config(self, num_items: int) -> EncoderConfig:
        e = self.values["encoder"]
        return EncoderConfig(
            num_items=num_items,
            embedding_dim=e["embedding_dim"],
            max_len=self.values["data"]["max_len"],
            encoder_kind=e["kind"],
            attention_heads=e["attention_heads"],
            dropout=e["dropout"],
        )

    def augmentation(self) -> AugmentationSpec:
        return AugmentationSpec(**self.values["augment"])

    def train_config(self) -> TrainConfig:
        t = dict(self.values["train"])
        t.pop("method")
        return TrainConfig(weights=LossWeights(**self.values["loss"]), augmentation=self.augmentation(), **t)

    def to_ini(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        for section, keys in self.values.items():
            parser[section] = {k: _format(v) for k, v in keys.items()}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def as_dict(self) -> Mapping[str, Mapping[str, Any]]:
        return self.values
