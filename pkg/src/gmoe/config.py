"""Experiment configuration: INI files with ``GMOE_<SECTION>_<KEY>`` environment overrides.

Example::

    [experiment]
    dataset = synthetic:sbm4
    seed = 3

    [model]
    kernel = DP4
    dim = 16

    [train]
    max_iters = 20000
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
from importlib import resources
from dataclasses import dataclass
from io import StringIO
from pathlib import Path

from gmoe import __version__
from gmoe.errors import ConfigError


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text: str):
    return None if text.strip().lower() in ("", "none", "auto") else int(text)


def _tristate(text: str):
    return None if text.strip().lower() in ("", "auto") else _bool(text)


# (section, key) -> (parser, default as text)
SCHEMA: dict[tuple[str, str], tuple[object, str]] = {
    ("experiment", "dataset"): (str, "synthetic:empty"),
    ("experiment", "dataset_size"): (int, "1000"),
    ("experiment", "n_nodes"): (_opt_int, "auto"),
    ("experiment", "seed"): (int, "0"),
    ("experiment", "output_dir"): (str, "gmoe-out"),
    ("experiment", "threads"): (int, "1"),
    ("model", "kernel"): (str, "RBF3"),
    ("model", "degree"): (int, "1"),
    ("model", "eps"): (float, "1e-6"),
    ("model", "eps_z"): (float, "1e-6"),
    ("model", "dim"): (int, "4"),
    ("model", "input_dim"): (int, "10"),
    ("model", "hidden"): (_ints, "10, 10"),
    ("model", "head"): (str, "kernel"),
    ("model", "communities"): (int, "0"),
    ("model", "train_q"): (_tristate, "auto"),
    ("census", "samples"): (int, "100000"),
    ("census", "exact_limit"): (int, "200000"),
    ("census", "stars"): (_ints, ""),
    ("train", "weights"): (str, "identity"),
    ("train", "delta"): (float, "1e-4"),
    ("train", "L"): (int, "32"),
    ("train", "M"): (int, "8"),
    ("train", "draws_per_step"): (int, "1"),
    ("train", "gammas"): (_floats, "1e-2, 3e-3, 1e-3"),
    ("train", "thresholds"): (_floats, "0.2, 0.08, 0.04"),
    ("train", "threshold_mode"): (str, "relative"),
    ("train", "max_iters"): (int, "20000"),
    ("train", "eval_every"): (int, "50"),
    ("train", "eval_noise"): (int, "32"),
    ("train", "eval_subsets"): (int, "64"),
    ("train", "penalty_lambda"): (float, "0"),
    ("train", "penalty_kappa"): (float, "10"),
    ("train", "revert_factor"): (float, "0"),
    ("train", "max_assignments"): (int, "200000"),
    ("generate", "count"): (int, "100"),
    ("generate", "n_nodes"): (_opt_int, "auto"),
    ("eval", "count"): (int, "200"),
    ("eval", "samples"): (int, "20000"),
    ("eval", "sigma"): (float, "1.0"),
    ("eval", "mmd"): (_bool, "true"),
    ("eval", "probe"): (_bool, "true"),
    ("eval", "probe_order"): (_opt_int, "auto"),
    ("eval", "probe_seeds"): (int, "5"),
}

SECTIONS = tuple(dict.fromkeys(s for s, _ in SCHEMA))

# experiment keys that affect where and how fast a run happens, not its results
UNHASHED = ("output_dir", "threads")


@dataclass
class ExperimentConfig:
    values: dict[str, dict[str, object]]
    raw: dict[str, dict[str, str]]

    def __getitem__(self, section: str) -> dict[str, object]:
        return self.values[section]

    def get(self, section: str, key: str):
        return self.values[section][key]

    @property
    def seed(self) -> int:
        return int(self.values["experiment"]["seed"])

    def digest(self) -> str:
        """Stable hash of the result-relevant settings (first 12 hex digits of SHA-256).

        The output directory and thread count do not change results and are left out.
        """
        raw = {s: dict(v) for s, v in self.raw.items()}
        for key in UNHASHED:
            raw["experiment"].pop(key, None)
        blob = json.dumps(raw, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def provenance(self) -> dict:
        return {"config_hash": self.digest(), "seed": self.seed, "version": __version__}

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        for s in SECTIONS:
            cp[s] = self.raw[s]
        buf = StringIO()
        cp.write(buf)
        return buf.getvalue()


def _env_key(section: str, key: str) -> str:
    return f"GMOE_{section.upper()}_{key.upper()}"


def preset_names() -> list[str]:
    return sorted(p.name[:-4] for p in resources.files("gmoe").joinpath("presets").iterdir() if p.name.endswith(".ini"))


def preset_path(name: str) -> Path:
    """Location of a bundled ``presets/<name>.ini`` file."""
    if name not in preset_names():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return Path(str(resources.files("gmoe").joinpath("presets", f"{name}.ini")))


def load_config(path=None, overrides: dict | None = None, environ=None) -> ExperimentConfig:
    """Defaults, then the file, then environment, then explicit ``{"section.key": value}`` overrides."""
    environ = os.environ if environ is None else environ
    raw = {s: {} for s in SECTIONS}
    for (s, k), (_, default) in SCHEMA.items():
        raw[s][k] = default

    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        cp = configparser.ConfigParser()
        cp.optionxform = str
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for s in cp.sections():
            if s not in raw:
                raise ConfigError(f"{path}: unknown section [{s}]")
            for k, v in cp[s].items():
                if (s, k) not in SCHEMA:
                    raise ConfigError(f"{path}: unknown key [{s}] {k}")
                raw[s][k] = v

    for (s, k) in SCHEMA:
        env = environ.get(_env_key(s, k))
        if env is not None:
            raw[s][k] = env
    for dotted, v in (overrides or {}).items():
        s, _, k = dotted.partition(".")
        if (s, k) not in SCHEMA:
            raise ConfigError(f"unknown setting {dotted}")
        raw[s][k] = str(v)

    values = {s: {} for s in SECTIONS}
    for (s, k), (parse, _) in SCHEMA.items():
        try:
            values[s][k] = parse(raw[s][k])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{s}] {k} = {raw[s][k]!r}: {exc}") from None
    _validate(values)
    return ExperimentConfig(values, raw)


def _validate(v: dict) -> None:
    def need(cond, section, key, msg):
        if not cond:
            raise ConfigError(f"[{section}] {key}: {msg}")

    ds = v["experiment"]["dataset"]
    need(
        ds in ("synthetic:empty", "synthetic:sbm2", "synthetic:sbm4") or ds.startswith(("tu:", "edgelist:")),
        "experiment", "dataset", "expected synthetic:empty|sbm2|sbm4, tu:<dir>:<name>[:label] or edgelist:<path>",
    )
    need(v["experiment"]["dataset_size"] >= 1, "experiment", "dataset_size", "must be at least 1")
    need(v["experiment"]["threads"] >= 1, "experiment", "threads", "must be at least 1")
    need(v["model"]["dim"] >= 1, "model", "dim", "must be at least 1")
    need(v["model"]["input_dim"] >= 1, "model", "input_dim", "must be at least 1")
    need(len(v["model"]["hidden"]) >= 1, "model", "hidden", "needs at least one layer width")
    need(v["model"]["head"] in ("kernel", "adjacency", "community"), "model", "head", "kernel, adjacency or community")
    need(v["model"]["head"] != "community" or v["model"]["communities"] >= 1, "model", "communities", "community head needs at least 1")
    need(v["census"]["samples"] >= 1, "census", "samples", "must be at least 1")
    g, u = v["train"]["gammas"], v["train"]["thresholds"]
    need(len(g) >= 1, "train", "gammas", "needs at least one step size")
    need(all(a > b for a, b in zip(g, g[1:])), "train", "gammas", "must be strictly decreasing")
    need(len(u) == len(g), "train", "thresholds", "needs one threshold per step size")
    need(all(a > b for a, b in zip(u, u[1:])), "train", "thresholds", "must be strictly decreasing")
    need(v["train"]["L"] >= 1, "train", "L", "must be at least 1")
    need(v["train"]["M"] >= 1, "train", "M", "must be at least 1")
    need(v["train"]["weights"] in ("identity", "inverse"), "train", "weights", "identity or inverse")
    need(v["train"]["threshold_mode"] in ("relative", "absolute"), "train", "threshold_mode", "relative or absolute")
    need(v["train"]["eval_every"] >= 1, "train", "eval_every", "must be at least 1")
    need(v["generate"]["count"] >= 1, "generate", "count", "must be at least 1")
    need(v["eval"]["sigma"] > 0, "eval", "sigma", "must be positive")
