"""File formats: TOML model/scenario inputs, 1-based sequence files, CSV/JSON reports."""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import numpy as np

from hmmvt.core import HmmModel, build_model
from hmmvt.errors import HmmError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class IoError(HmmError):
    """Missing or unreadable input, or an unwritable output path."""


def read_toml(path) -> dict:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as exc:
        raise IoError(f"no such file: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise IoError(f"invalid TOML in {path}: {exc}") from exc


def model_from_dict(cfg: dict, require_mixing=True) -> HmmModel:
    try:
        P = np.array(cfg["transition"], dtype=float)
        E = np.array(cfg["emission"], dtype=float)
    except KeyError as exc:
        raise HmmError(f"model file lacks key {exc.args[0]!r}") from exc
    except ValueError as exc:
        raise HmmError(f"model matrices must be rectangular numeric arrays: {exc}") from exc
    L = cfg.get("L", P.shape[0] if P.ndim == 2 else None)
    M = cfg.get("M", E.shape[0] if E.ndim == 2 else None)
    if P.ndim != 2 or E.ndim != 2 or P.shape != (L, L) or E.shape != (M, L):
        raise HmmError(f"declared L={L}, M={M} do not match transition {P.shape} / emission {E.shape}")
    return build_model(P, E, require_mixing=require_mixing)


def read_model(path, require_mixing=True) -> HmmModel:
    return model_from_dict(read_toml(path), require_mixing)


def model_to_toml(model: HmmModel) -> str:
    def rows(a):
        return "[\n" + "".join(f"  [{', '.join(repr(float(v)) for v in r)}],\n" for r in a) + "]"

    return (
        f"L = {model.num_hidden}\nM = {model.num_observed}\n"
        f"transition = {rows(model.transition)}\nemission = {rows(model.emission)}\n"
    )


def write_model(path, model: HmmModel):
    _write_text(path, model_to_toml(model))


def read_scenario(path):
    """Scenario file: either p1, p2, q1, r1 or a general unambiguous model.

    Returns a :class:`ScenarioParams` for the three-state error-free case,
    otherwise an :class:`UnambiguousHmm` built from ``L``, ``epsilon`` and
    ``transition``.
    """
    from hmmvt.unambiguous.model import build_unambiguous
    from hmmvt.unambiguous.scenario import PARAM_NAMES, ScenarioParams

    cfg = read_toml(path)
    if all(k in cfg for k in PARAM_NAMES):
        return ScenarioParams(*(float(cfg[k]) for k in PARAM_NAMES))
    if "transition" in cfg:
        P = np.array(cfg["transition"], dtype=float)
        return build_unambiguous(int(cfg.get("L", P.shape[0])), float(cfg.get("epsilon", 0.0)), P)
    raise HmmError(f"{path}: scenario needs p1, p2, q1, r1 or a transition matrix")


def read_sequence(path) -> np.ndarray:
    """One 1-based integer label per line; returns 0-based labels."""
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError as exc:
        raise IoError(f"no such file: {path}") from exc
    try:
        vals = np.array([int(t) for t in text.split()], dtype=np.int64)
    except ValueError as exc:
        raise HmmError(f"{path}: labels must be integers") from exc
    if vals.size and vals.min() < 1:
        raise HmmError(f"{path}: labels are 1-based")
    return vals - 1


def write_sequence(path, labels):
    labels = np.asarray(labels, dtype=np.int64) + 1
    _write_text(path, "\n".join(map(str, labels.tolist())) + "\n")


def _write_text(path, text):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if np.isnan(v):
            return "nan"
        if np.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, data):
    _write_text(path, json.dumps(_plain(data), indent=2, sort_keys=True) + "\n")


def write_csv(path, header, rows):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
