"""JSON files passed between pipeline stages.

Floats are written with ``repr`` so every value reads back bit-for-bit.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .ident import ModelSet
from .setalg import Ellipsoid, HPolytope, IntervalMatrix, MatrixZonotope, Zonotope
from .synth import NominalModel, SynthesisBundle


def _arr(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def _zono(z: Zonotope) -> dict:
    return {"center": _arr(z.center), "generators": _arr(z.generators)}


def _zono_in(d) -> Zonotope:
    c = np.array(d["center"], dtype=float)
    return Zonotope(c, np.array(d["generators"], dtype=float).reshape(c.size, -1))


def _poly(p: HPolytope) -> dict:
    return {"normals": _arr(p.normals), "offsets": _arr(p.offsets)}


def _poly_in(d) -> HPolytope:
    return HPolytope(np.array(d["normals"], dtype=float), np.array(d["offsets"], dtype=float))


def modelset_to_dict(ms: ModelSet, delta: float | None = None) -> dict:
    return {
        "m_d": {"center": _arr(ms.m_d.center), "generators": _arr(ms.m_d.generators)},
        "i_md": {"lower": _arr(ms.i_md.lower), "upper": _arr(ms.i_md.upper)},
        "fro_norm": float(ms.fro_norm),
        "delta": None if delta is None else float(delta),
    }


def modelset_from_dict(d) -> tuple[ModelSet, float | None]:
    c = np.array(d["m_d"]["center"], dtype=float)
    g = np.array(d["m_d"]["generators"], dtype=float).reshape(-1, *c.shape)
    ms = ModelSet(MatrixZonotope(c, g),
                  IntervalMatrix(np.array(d["i_md"]["lower"]), np.array(d["i_md"]["upper"])),
                  float(d["fro_norm"]))
    return ms, d.get("delta")


def bundle_to_dict(b: SynthesisBundle) -> dict:
    meta = {k: (float(v) if isinstance(v, (float, np.floating)) else v) for k, v in b.meta.items()}
    return {
        "nominal": {"a_bar": _arr(b.nominal.a_bar), "b_bar": _arr(b.nominal.b_bar)},
        "k_gain": _arr(b.k_gain),
        "p_lyap": _arr(b.p_lyap),
        "z_w": _zono(b.z_w),
        "z_m": _zono(b.z_m),
        "z_eps": _zono(b.z_eps),
        "z_phi": _zono(b.z_phi),
        "s_rpi": _zono(b.s_rpi),
        "theta": float(b.theta),
        "kappa": int(b.kappa),
        "terminal": {"shape": _arr(b.terminal.shape), "center": _arr(b.terminal.center),
                     "level": float(b.terminal.level)},
        "u_tight": _poly(b.u_tight),
        "x_tight": _poly(b.x_tight),
        "setpoint_x": _arr(b.setpoint_x),
        "setpoint_u": _arr(b.setpoint_u),
        "meta": meta,
    }


def bundle_from_dict(d) -> SynthesisBundle:
    t = d["terminal"]
    return SynthesisBundle(
        nominal=NominalModel(np.array(d["nominal"]["a_bar"]), np.array(d["nominal"]["b_bar"])),
        k_gain=np.array(d["k_gain"], dtype=float),
        p_lyap=np.array(d["p_lyap"], dtype=float),
        z_w=_zono_in(d["z_w"]),
        z_m=_zono_in(d["z_m"]),
        z_eps=_zono_in(d["z_eps"]),
        z_phi=_zono_in(d["z_phi"]),
        s_rpi=_zono_in(d["s_rpi"]),
        theta=float(d["theta"]),
        kappa=int(d["kappa"]),
        terminal=Ellipsoid(np.array(t["shape"]), np.array(t["center"]), float(t["level"])),
        u_tight=_poly_in(d["u_tight"]),
        x_tight=_poly_in(d["x_tight"]),
        setpoint_x=np.array(d["setpoint_x"], dtype=float),
        setpoint_u=np.array(d["setpoint_u"], dtype=float),
        meta=dict(d.get("meta", {})),
    )


def write_json(obj: dict, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())
