"""Multi-view gated fusion VLM toolkit."""

import json as _json

from ._core import (
    ConfigError,
    DataError,
    DimensionError,
    NumericError,
    cost_presets,
    fuse,
    quantize_int8,
    tokenize,
)
from . import _core

__all__ = [
    "ConfigError",
    "DataError",
    "DimensionError",
    "NumericError",
    "cost",
    "cost_presets",
    "evaluate",
    "evaluate_files",
    "fuse",
    "generate",
    "quantize_int8",
    "synth",
    "tokenize",
    "train",
]


def synth(out, scenes, frames=1, seed=0):
    return _json.loads(_core.synth(str(out), scenes, frames, seed))


def evaluate(pairs, bleu_smoothing=False, meteor_stem=False):
    """pairs: iterable of (id, candidate, [references])."""
    pairs = [(i, c, [r] if isinstance(r, str) else list(r)) for i, c, r in pairs]
    return _json.loads(_core.evaluate_pairs(pairs, bleu_smoothing, meteor_stem))


def evaluate_files(predictions, references, bleu_smoothing=False, meteor_stem=False):
    return _json.loads(
        _core.evaluate_files(str(predictions), str(references), bleu_smoothing, meteor_stem)
    )


def cost(preset="base", spec=None, s_enc=None, s_dec=None, gib=False):
    kw = {"gib": gib}
    if s_enc is not None:
        kw["s_enc"] = s_enc
    if s_dec is not None:
        kw["s_dec"] = s_dec
    spec_json = _json.dumps(spec) if spec is not None else ""
    return _json.loads(_core.cost(preset, spec_json, **kw))


def train(config, out, stage="all", resume=None):
    """config: run-config dict (model/train/data sections); paths as given."""
    return _json.loads(
        _core.train(_json.dumps(config), str(out), str(stage), None if resume is None else str(resume))
    )


def generate(checkpoint, manifest, split="test", threads=0):
    return _json.loads(_core.generate(str(checkpoint), str(manifest), split, threads))
