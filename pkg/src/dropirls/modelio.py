"""Versioned text serialization of trained models.

Layout (one key per line, floats printed with 17 significant digits)::

    dropirls-model 1
    kind linear|latent|ova
    loss hinge
    noise dropout 0.5
    dim 3
    b 0.25
    w 1.0 -2.0 0.5
    K 8                  (latent only)
    alpha <row 0>        (latent only, D rows of K values)

A one-vs-all file has ``kind ova``, ``classes C`` and then C nested models,
each introduced by ``model <class id>`` and closed by ``end``.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import OneVsAllModel
from .latent import LatentModel
from .linear import LinearModel, Loss
from .noise import NoiseModel

MAGIC = "dropirls-model"
VERSION = 1


class ModelFormatError(ValueError):
    pass


def _fmt(values) -> str:
    return " ".join(format(float(v), ".17g") for v in np.atleast_1d(values))


def _body(model) -> list[str]:
    lines = []
    if isinstance(model, LinearModel):
        lines.append("kind linear")
    elif isinstance(model, LatentModel):
        lines.append("kind latent")
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    lines.append(f"loss {model.loss.value}")
    lines.append(f"noise {model.noise.kind.value} {_fmt(model.noise.param)}")
    lines.append(f"dim {model.dim}")
    lines.append(f"b {_fmt(model.b)}")
    lines.append(f"w {_fmt(model.w)}".rstrip())
    if isinstance(model, LatentModel):
        lines.append(f"K {model.K}")
        lines.extend(f"alpha {_fmt(row)}" for row in model.alpha)
    return lines


def dumps(model) -> str:
    lines = [f"{MAGIC} {VERSION}"]
    if isinstance(model, OneVsAllModel):
        lines += ["kind ova", f"classes {len(model.models)}"]
        for cls, sub in zip(model.classes, model.models):
            lines.append(f"model {cls}")
            lines.extend(_body(sub))
            lines.append("end")
    else:
        lines.extend(_body(model))
    return "\n".join(lines) + "\n"


def save_model(model, path) -> None:
    Path(path).write_text(dumps(model))


def _floats(tokens) -> np.ndarray:
    return np.array([float(t) for t in tokens], dtype=float)


def _parse_body(lines: list[tuple[str, list[str]]]):
    fields: dict = {}
    alpha_rows = []
    for key, rest in lines:
        if key == "alpha":
            alpha_rows.append(_floats(rest))
        else:
            fields[key] = rest
    try:
        kind = fields["kind"][0]
        loss = Loss(fields["loss"][0])
        nk = fields["noise"]
        noise = NoiseModel(nk[0], float(nk[1]) if len(nk) > 1 else 0.0)
        dim = int(fields["dim"][0])
        b = float(fields["b"][0])
        w = _floats(fields.get("w", []))
    except (KeyError, IndexError, ValueError) as exc:
        raise ModelFormatError(f"bad model body: {exc}") from None
    if kind == "linear":
        if w.shape[0] != dim:
            raise ModelFormatError(f"w has {w.shape[0]} entries, dim is {dim}")
        return LinearModel(w, b, loss, noise)
    if kind == "latent":
        K = int(fields["K"][0])
        alpha = np.array(alpha_rows, dtype=float).reshape(len(alpha_rows), -1) if alpha_rows else np.zeros((0, K))
        if alpha.shape != (dim, K) or w.shape[0] != K:
            raise ModelFormatError(f"latent shapes inconsistent: alpha {alpha.shape}, w {w.shape}, dim {dim}, K {K}")
        return LatentModel(alpha, w, b, loss, noise)
    raise ModelFormatError(f"unknown model kind {kind!r}")


def loads(text: str):
    raw = [ln.split() for ln in text.splitlines() if ln.strip()]
    if not raw or raw[0][0] != MAGIC:
        raise ModelFormatError("missing dropirls-model header")
    if int(raw[0][1]) != VERSION:
        raise ModelFormatError(f"unsupported model format version {raw[0][1]}")
    lines = [(t[0], t[1:]) for t in raw[1:]]
    if lines and lines[0] == ("kind", ["ova"]):
        models, classes, current = [], [], None
        for key, rest in lines[2:]:
            if key == "model":
                current = []
                classes.append(int(rest[0]))
            elif key == "end":
                models.append(_parse_body(current))
                current = None
            elif current is not None:
                current.append((key, rest))
            else:
                raise ModelFormatError(f"unexpected line {key!r} outside a model block")
        return OneVsAllModel(tuple(models), tuple(classes))
    return _parse_body(lines)


def load_model(path):
    return loads(Path(path).read_text())
