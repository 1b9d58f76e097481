"""Run configuration: one INI file wires every pipeline stage together.

Every key has a default, so an empty (or absent) file is a valid config.
The effective configuration, defaults included, can be dumped with the
`print-config` subcommand and fed back in unchanged.
"""

from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

from .detector import AnchorSpec, DetectorConfig
from .errors import ConfigError
from .histogram import HistogramSpec
from .proposal import DetectorRange, ProposalParams
from .spn import SpnConfig
from .synthgen import DatasetConfig


@dataclass(frozen=True)
class Seeds:
    dataset: int = 20240613
    spn: int = 7
    detector: int = 7


@dataclass(frozen=True)
class RunConfig:
    hist_spec: HistogramSpec = HistogramSpec(3.0, 7.0, 40)
    sigma: float = 0.4
    drange: DetectorRange = DetectorRange(24.0, 48.0)
    proposal: ProposalParams = ProposalParams()
    spn: SpnConfig = SpnConfig()
    det: DetectorConfig = DetectorConfig()
    dataset: DatasetConfig = field(default_factory=lambda: DatasetConfig(2000, 200))
    spn_long_side: int = 448
    spn_chain_file: str = ""
    det_chain_file: str = ""
    eval_thresholds: Tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    missrate_bin_octaves: float = 0.5
    seeds: Seeds = Seeds()

    def __post_init__(self):
        problems = cross_check(self)
        if problems:
            raise ConfigError("; ".join(problems))


def cross_check(cfg: RunConfig) -> list:
    """Consistency rules spanning sections; returns human-readable problems."""
    problems = []
    lo, hi = math.log2(cfg.drange.smin), math.log2(cfg.drange.smax)
    if lo < cfg.hist_spec.s0 - 1e-9 or hi > cfg.hist_spec.sn + 1e-9:
        problems.append(
            f"detector range log2 [{lo:.3f}, {hi:.3f}] must lie inside the "
            f"histogram span [{cfg.hist_spec.s0}, {cfg.hist_spec.sn}]"
        )
    if cfg.spn.hist_spec != cfg.hist_spec or cfg.spn.sigma != cfg.sigma:
        problems.append("spn config must share the histogram spec and sigma")
    if cfg.det.anchor.range != cfg.drange:
        problems.append("detector anchor must be built from the configured range")
    for label, path in (("cost.spn_chain_file", cfg.spn_chain_file),
                        ("cost.det_chain_file", cfg.det_chain_file)):
        if path and not os.path.isfile(path):
            problems.append(f"{label}: no such file {path!r}")
    if not cfg.eval_thresholds or any(not 0.0 <= t <= 1.0 for t in cfg.eval_thresholds):
        problems.append("evaluate.thresholds must be a nonempty list within [0, 1]")
    if cfg.missrate_bin_octaves <= 0:
        problems.append("evaluate.missrate_bin_octaves must be positive")
    return problems


def _channels(text: str) -> Tuple[int, ...]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    return tuple(int(p) for p in parts)


def _floats(text: str) -> Tuple[float, ...]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    return tuple(float(p) for p in parts)


# section -> key -> (default string, converter)
_SCHEMA: Dict[str, Dict[str, Tuple[str, type]]] = {
    "histogram": {
        "s0": ("3.0", float),
        "sn": ("7.0", float),
        "bins": ("40", int),
        "sigma": ("0.4", float),
    },
    "detector_range": {
        "smin": ("24.0", float),
        "smax": ("48.0", float),
    },
    "proposal": {
        "smooth_window": ("3", int),
        "nms_window": ("4", int),
        "threshold": ("0.5", float),
        "max_proposals": ("4", int),
    },
    "spn": {
        "input_long_side": ("160", int),
        "channels": ("8,16,32,32", _channels),
        "input_center": ("0.5", float),
        "input_scale": ("1.0", float),
        "head_bias_init": ("-1.0", float),
        "learning_rate": ("0.2", float),
        "momentum": ("0.0", float),
        "iterations": ("24000", int),
    },
    "detector": {
        "stride": ("4", int),
        "channels": ("8,16,24,32", _channels),
        "patch_size": ("112", int),
        "learning_rate": ("0.02", float),
        "momentum": ("0.9", float),
        "iterations": ("8000", int),
        "deadzone_octaves": ("0.25", float),
        "score_threshold": ("0.5", float),
    },
    "dataset": {
        "train_count": ("2000", int),
        "test_count": ("200", int),
        "image_width": ("160", int),
        "image_height": ("160", int),
        "size_min": ("8.0", float),
        "size_max": ("128.0", float),
        "max_faces": ("3", int),
        "ignore_prob": ("0.25", float),
        "max_distractors": ("2", int),
        "noise_amp": ("0.12", float),
        "noise_cell": ("16", int),
    },
    "cost": {
        "spn_long_side": ("448", int),
        "spn_chain_file": ("", str),
        "det_chain_file": ("", str),
    },
    "evaluate": {
        "thresholds": ("0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9", _floats),
        "missrate_bin_octaves": ("0.5", float),
    },
    "seeds": {
        "dataset": ("20240613", int),
        "spn": ("7", int),
        "detector": ("7", int),
    },
}


def load_config(path: Optional[str] = None) -> RunConfig:
    """Parse an INI file over the defaults; None means pure defaults.

    Every problem (unknown keys, bad values, cross-section conflicts) is
    collected and reported in one error before any work starts.
    """
    values = {s: {k: d for k, (d, _) in keys.items()} for s, keys in _SCHEMA.items()}
    problems = []
    if path is not None:
        if not os.path.isfile(path):
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser()
        try:
            with open(path) as f:
                parser.read_file(f)
        except configparser.Error as e:
            raise ConfigError(f"cannot parse {path}: {e}") from e
        for section in parser.sections():
            if section not in _SCHEMA:
                problems.append(f"unknown section [{section}]")
                continue
            for key, raw in parser.items(section):
                if key not in _SCHEMA[section]:
                    problems.append(f"unknown key {section}.{key}")
                else:
                    values[section][key] = raw

    typed: Dict[str, Dict[str, object]] = {}
    for section, keys in _SCHEMA.items():
        typed[section] = {}
        for key, (default, conv) in keys.items():
            raw = values[section][key]
            try:
                typed[section][key] = conv(raw)
            except (TypeError, ValueError):
                problems.append(f"bad value for {section}.{key}: {raw!r}")
                typed[section][key] = conv(default)
    if problems:
        raise ConfigError("invalid config: " + "; ".join(problems))

    h, r, p = typed["histogram"], typed["detector_range"], typed["proposal"]
    s, d, ds = typed["spn"], typed["detector"], typed["dataset"]
    c, sd, ev = typed["cost"], typed["seeds"], typed["evaluate"]
    try:
        hist_spec = HistogramSpec(h["s0"], h["sn"], h["bins"])
        drange = DetectorRange(r["smin"], r["smax"])
        return RunConfig(
            hist_spec=hist_spec,
            sigma=h["sigma"],
            drange=drange,
            proposal=ProposalParams(
                smooth_window=p["smooth_window"],
                nms_window=p["nms_window"],
                threshold=p["threshold"],
                max_proposals=p["max_proposals"],
            ),
            spn=SpnConfig(
                hist_spec=hist_spec,
                input_long_side=s["input_long_side"],
                channels=s["channels"],
                sigma=h["sigma"],
                input_center=s["input_center"],
                input_scale=s["input_scale"],
                head_bias_init=s["head_bias_init"],
                learning_rate=s["learning_rate"],
                momentum=s["momentum"],
                iterations=s["iterations"],
            ),
            det=DetectorConfig(
                anchor=AnchorSpec.for_range(drange, stride=d["stride"]),
                channels=d["channels"],
                patch_size=d["patch_size"],
                learning_rate=d["learning_rate"],
                momentum=d["momentum"],
                iterations=d["iterations"],
                deadzone_octaves=d["deadzone_octaves"],
                score_threshold=d["score_threshold"],
            ),
            dataset=DatasetConfig(
                train_count=ds["train_count"],
                test_count=ds["test_count"],
                image_width=ds["image_width"],
                image_height=ds["image_height"],
                size_min=ds["size_min"],
                size_max=ds["size_max"],
                max_faces=ds["max_faces"],
                ignore_prob=ds["ignore_prob"],
                max_distractors=ds["max_distractors"],
                noise_amp=ds["noise_amp"],
                noise_cell=ds["noise_cell"],
            ),
            spn_long_side=c["spn_long_side"],
            spn_chain_file=c["spn_chain_file"],
            det_chain_file=c["det_chain_file"],
            eval_thresholds=ev["thresholds"],
            missrate_bin_octaves=ev["missrate_bin_octaves"],
            seeds=Seeds(dataset=sd["dataset"], spn=sd["spn"], detector=sd["detector"]),
        )
    except (ValueError, ConfigError) as e:
        raise ConfigError(f"invalid config: {e}") from e


def format_config(cfg: RunConfig) -> str:
    """Effective configuration as INI text; load_config(format) roundtrips."""
    chan = lambda t: ",".join(str(c) for c in t)
    out = {
        "histogram": {
            "s0": cfg.hist_spec.s0, "sn": cfg.hist_spec.sn,
            "bins": cfg.hist_spec.n, "sigma": cfg.sigma,
        },
        "detector_range": {"smin": cfg.drange.smin, "smax": cfg.drange.smax},
        "proposal": {
            "smooth_window": cfg.proposal.smooth_window,
            "nms_window": cfg.proposal.nms_window,
            "threshold": cfg.proposal.threshold,
            "max_proposals": cfg.proposal.max_proposals,
        },
        "spn": {
            "input_long_side": cfg.spn.input_long_side,
            "channels": chan(cfg.spn.channels),
            "input_center": cfg.spn.input_center,
            "input_scale": cfg.spn.input_scale,
            "head_bias_init": cfg.spn.head_bias_init,
            "learning_rate": cfg.spn.learning_rate,
            "momentum": cfg.spn.momentum,
            "iterations": cfg.spn.iterations,
        },
        "detector": {
            "stride": cfg.det.anchor.stride,
            "channels": chan(cfg.det.channels),
            "patch_size": cfg.det.patch_size,
            "learning_rate": cfg.det.learning_rate,
            "momentum": cfg.det.momentum,
            "iterations": cfg.det.iterations,
            "deadzone_octaves": cfg.det.deadzone_octaves,
            "score_threshold": cfg.det.score_threshold,
        },
        "dataset": {
            "train_count": cfg.dataset.train_count,
            "test_count": cfg.dataset.test_count,
            "image_width": cfg.dataset.image_width,
            "image_height": cfg.dataset.image_height,
            "size_min": cfg.dataset.size_min,
            "size_max": cfg.dataset.size_max,
            "max_faces": cfg.dataset.max_faces,
            "ignore_prob": cfg.dataset.ignore_prob,
            "max_distractors": cfg.dataset.max_distractors,
            "noise_amp": cfg.dataset.noise_amp,
            "noise_cell": cfg.dataset.noise_cell,
        },
        "cost": {
            "spn_long_side": cfg.spn_long_side,
            "spn_chain_file": cfg.spn_chain_file,
            "det_chain_file": cfg.det_chain_file,
        },
        "evaluate": {
            "thresholds": ",".join(str(t) for t in cfg.eval_thresholds),
            "missrate_bin_octaves": cfg.missrate_bin_octaves,
        },
        "seeds": {
            "dataset": cfg.seeds.dataset,
            "spn": cfg.seeds.spn,
            "detector": cfg.seeds.detector,
        },
    }
    lines = []
    for section, keys in out.items():
        lines.append(f"[{section}]")
        for k, v in keys.items():
            lines.append(f"{k} = {v}")
        lines.append("")
    return "\n".join(lines)
