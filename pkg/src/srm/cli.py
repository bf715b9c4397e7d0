"""Command-line front end: subcommands, serialization, run manifests.

Every run prints one primary document (JSON or CSV) to stdout; with
--out DIR the same bytes land in DIR together with a manifest recording
the structure hash, all parameters, the seed and the output hashes.
Reruns with the same manifest parameters reproduce the files bit for bit,
so manifests double as reproducibility receipts.

Exit codes: 0 success, 2 input/validation rejection, 3 numerical failure.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import sys
from fractions import Fraction
from pathlib import Path

import click
import numpy as np

from . import __version__
from .blowup import blowup_experiment
from .distance import distance
from .errors import (NotEquisingular, ParseError, SRMError,
                     StrataNotPartition, ValidationError)
from .flag import classify_grid, classify_point
from .measures import (covering_dimension, density_consistency,
                       federer_ratio_probe, isodiametric_search,
                       sandwich_check, spherical_density)
from .nilpotent import nilpotentize
from .parser import load_structure
from .popp import popp_density, popp_on_stratum, stratified_measures
from .structure import builtin_names, load_builtin

_VALIDATION_ERRORS = (ParseError, ValidationError, NotEquisingular,
                      StrataNotPartition, FileNotFoundError)


def _jsonify(obj):
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not serializable: {obj!r}")


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _resolve_structure(spec: str):
    """Load a structure file, falling back to the bundled catalog."""
    path = Path(spec)
    if path.exists():
        data = path.read_bytes()
        return load_structure(path), _sha256(data)
    stem = path.stem
    if stem in builtin_names():
        from importlib import resources

        data = (resources.files("srm") / "data" / f"{stem}.srm").read_bytes()
        return load_builtin(stem), _sha256(data)
    raise ValidationError(f"structure file not found: {spec}")


def _parse_point(text: str) -> tuple[Fraction, ...]:
    try:
        return tuple(Fraction(part.strip()) for part in text.split(","))
    except (ValueError, ZeroDivisionError) as e:
        raise ValidationError(f"bad point {text!r}: {e}")


def _parse_floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in text.split(","))
    except ValueError as e:
        raise ValidationError(f"bad number list {text!r}: {e}")


def _parse_counts(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(c) for c in text.lower().split("x"))
    except ValueError as e:
        raise ValidationError(f"bad grid spec {text!r}: {e}")


def _parse_region(text: str):
    """Region syntax: '[-1,1]x[-1,1]' or '-1,1;-1,1'."""
    text = text.strip()
    parts = text.split("x") if "[" in text else text.split(";")
    region = []
    for part in parts:
        nums = part.strip().strip("[]").split(",")
        if len(nums) != 2:
            raise ValidationError(f"bad region interval {part!r}")
        region.append((Fraction(nums[0]), Fraction(nums[1])))
    return tuple(region)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


def _emit(ctx, result: dict, header=None, rows=None) -> None:
    """Print the primary document and write files + manifest under --out."""
    name = ctx.info_name
    json_text = json.dumps(result, indent=2, sort_keys=True,
                           default=_jsonify) + "\n"
    csv_text = _csv_text(header, rows) if header is not None else None
    fmt = ctx.obj["format"]
    click.echo(csv_text if fmt == "csv" and csv_text is not None
               else json_text, nl=False)

    out = ctx.obj["out"]
    if out is None:
        return
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    files = {f"{name}.json": json_text.encode()}
    if csv_text is not None:
        files[f"{name}.csv"] = csv_text.encode()
    for fname, data in files.items():
        (outdir / fname).write_bytes(data)
    params = {k: v for k, v in ctx.params.items()}
    manifest = {
        "tool": "srm",
        "version": __version__,
        "subcommand": name,
        "seed": ctx.obj["seed"],
        "budget": ctx.obj["budget"],
        "format": fmt,
        "structure_sha256": ctx.obj.get("structure_sha256"),
        "parameters": params,
        "outputs": {fname: _sha256(data) for fname, data in files.items()},
    }
    data = json.dumps(manifest, indent=2, sort_keys=True,
                      default=_jsonify).encode() + b"\n"
    (outdir / "manifest.json").write_bytes(data)


def _load(ctx, structure: str):
    S, digest = _resolve_structure(structure)
    ctx.obj["structure_sha256"] = digest
    return S


@click.group(name="srm")
@click.option("--seed", type=int, default=0, show_default=True,
              help="Root seed for every Monte Carlo stream.")
@click.option("--budget", type=int, default=1, show_default=True,
              help="Effort knob for the distance solver and MC sizes.")
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help="Directory for output files plus manifest.json.")
@click.option("--format", "fmt", type=click.Choice(["json", "csv"]),
              default="json", show_default=True)
@click.pass_context
def cli(ctx, seed, budget, out, fmt):
    """Intrinsic volumes and blow-up limits of sub-Riemannian structures."""
    ctx.obj = {"seed": seed, "budget": budget, "out": out, "format": fmt}


_structure_opt = click.option("--structure", required=True,
                              help=".srm file path or bundled name")


@cli.command()
@_structure_opt
@click.pass_context
def validate(ctx, structure):
    """Parse a structure file and run its declared invariants."""
    S = _load(ctx, structure)
    _emit(ctx, {
        "valid": True,
        "name": S.name,
        "dim": S.dim,
        "rank": S.m,
        "fields": {n: [c.to_source() for c in f.components]
                   for n, f in zip(S.field_names, S.fields)},
        "volume": S.volume.to_source(),
        "box": [[str(a), str(b)] for a, b in S.box],
        "strata": [st.name for st in S.strata],
        "exact": True,
    })


@cli.command()
@_structure_opt
@click.option("--point", required=True, help="comma-separated coordinates")
@click.pass_context
def flag(ctx, structure, point):
    """Growth vector, weights, Q and regular/singular class at a point."""
    S = _load(ctx, structure)
    p = _parse_point(point)
    cls, fl = classify_point(S, p, seed=ctx.obj["seed"])
    _emit(ctx, {
        "point": [str(c) for c in p],
        "growth": list(fl.growth),
        "weights": list(fl.weights),
        "step": fl.step,
        "Q": fl.Q,
        "class": cls,
        "exact": fl.exact,
    })


@cli.command()
@_structure_opt
@click.option("--grid", default=None, help="grid spec like 21x21")
@click.pass_context
def scan(ctx, structure, grid):
    """Classify a full grid; CSV columns x1..xn, growth, Q, class."""
    S = _load(ctx, structure)
    counts = _parse_counts(grid) if grid else (9,) * S.dim
    if len(counts) != S.dim:
        raise ValidationError(f"grid {grid!r} does not match dim {S.dim}")
    table = classify_grid(S, counts, seed=ctx.obj["seed"])
    header = [f"x{k + 1}" for k in range(S.dim)] + ["growth", "Q", "class"]
    rows, records = [], []
    for p, (cls, fl) in table.items():
        rows.append([str(c) for c in p]
                    + ["|".join(map(str, fl.growth)), fl.Q, cls])
        records.append({"point": [str(c) for c in p],
                        "growth": list(fl.growth), "Q": fl.Q, "class": cls})
    _emit(ctx, {"grid": list(counts), "points": records, "exact": True},
          header=header, rows=rows)


@cli.command()
@_structure_opt
@click.option("--point", required=True)
@click.pass_context
def nilpotent(ctx, structure, point):
    """Weights, privileged chart and truncated fields (re-parseable)."""
    S = _load(ctx, structure)
    p = _parse_point(point)
    N = nilpotentize(S, p)
    lines = [f"dim = {N.dim}"]
    for k, f in enumerate(N.fields):
        comps = ", ".join(c.to_source() for c in f.components)
        lines.append(f"field X{k + 1} = ({comps})")
    lines.append("volume = 1")
    box = " x ".join(f"[{str(a)}, {str(b)}]"
                     for a, b in N.as_structure().box)
    lines.append(f"box = {box}")
    lines.append(f"probe = ({', '.join('0' for _ in range(N.dim))})")
    chart = {
        "point": [str(c) for c in N.chart.point],
        "A": [[str(c) for c in row] for row in N.chart.A],
        "affine": N.chart.affine,
    }
    if not N.chart.affine:
        chart["forward"] = [e.to_source() for e in N.chart.poly_fwd]
        chart["inverse"] = [e.to_source() for e in N.chart.poly_inv]
    _emit(ctx, {
        "point": [str(c) for c in p],
        "growth": list(N.growth),
        "weights": list(N.weights),
        "Q": N.Q,
        "chart": chart,
        "fields": [[c.to_source() for c in f.components] for f in N.fields],
        "dsl": "\n".join(lines) + "\n",
        "volume_factor": str(N.volume_factor),
        "exact": True,
    })


@cli.command()
@_structure_opt
@click.option("--from", "src", required=True, help="start point")
@click.option("--to", "dst", required=True, help="end point")
@click.pass_context
def dist(ctx, structure, src, dst):
    """Two-sided distance estimate between two points."""
    S = _load(ctx, structure)
    p, q = _parse_point(src), _parse_point(dst)
    est = distance(S, [float(c) for c in p], [float(c) for c in q],
                   budget=ctx.obj["budget"], seed=ctx.obj["seed"])
    result = {
        "value": est.value,
        "lower": est.lower,
        "upper": est.value + est.error,
        "stderr": est.error,
        "method": est.method,
    }
    _emit(ctx, result, header=["value", "lower", "upper", "stderr", "method"],
          rows=[[est.value, est.lower, est.value + est.error, est.error,
                 est.method]])


@cli.command()
@_structure_opt
@click.option("--point", default=None, help="ambient point")
@click.option("--stratum", "stratum_name", default=None)
@click.option("--params", default=None, help="stratum parameters")
@click.option("--integrate", "region", default=None,
              help="region like [-1,1]x[-1,1]: stratumwise masses")
@click.pass_context
def popp(ctx, structure, point, stratum_name, params, region):
    """Popp density at a point, on a stratum, or integrated over a region."""
    S = _load(ctx, structure)
    if region is not None:
        reg = _parse_region(region)
        report = stratified_measures(S, region=reg, seed=ctx.obj["seed"])
        entries = [{
            "stratum": e.name, "k": e.k, "Q_N": e.Q_N,
            "mass": e.value, "stderr": e.stderr,
            "divergent": e.divergent, "in_top": e.in_top,
        } for e in report.entries]
        if stratum_name is not None:
            entries = [e for e in entries if e["stratum"] == stratum_name]
        _emit(ctx, {
            "region": [[str(a), str(b)] for a, b in reg],
            "dim_H": report.dim_H,
            "P1": report.P1, "P1_divergent": report.P1_divergent,
            "P2": report.P2, "P2_divergent": report.P2_divergent,
            "entries": entries,
        }, header=["stratum", "k", "Q_N", "mass", "stderr", "divergent"],
            rows=[[e["stratum"], e["k"], e["Q_N"], e["mass"], e["stderr"],
                   e["divergent"]] for e in entries])
        return
    if stratum_name is not None:
        if params is None:
            raise ValidationError("--stratum needs --params (or --integrate)")
        sd = popp_on_stratum(S, stratum_name, _parse_point(params))
        _emit(ctx, {
            "stratum": stratum_name,
            "params": [str(c) for c in sd.params],
            "point": [str(c) for c in sd.point],
            "density": float(sd.value),
            "density_sq": str(sd.value_sq),
            "level_dims": list(sd.level_dims),
            "exact": True,
        })
        return
    if point is None:
        raise ValidationError("popp needs --point, --stratum or --integrate")
    p = _parse_point(point)
    pd = popp_density(S, p)
    _emit(ctx, {
        "point": [str(c) for c in p],
        "density": float(pd.value),
        "density_sq": str(pd.value_sq) if pd.exact else float(pd.value_sq),
        "det_B": {str(lvl): str(d) if pd.exact else float(d)
                  for lvl, d in pd.det_B.items()},
        "omega": str(pd.omega) if pd.exact else float(pd.omega),
        "exact": pd.exact,
    })


@cli.command()
@_structure_opt
@click.option("--point", required=True)
@click.option("--eps", default=None,
              help="optional scale list: also emit the ball-ratio curve")
@click.option("--samples", type=int, default=None)
@click.pass_context
def density(ctx, structure, point, eps, samples):
    """Spherical density 2^Q / (nilpotent unit-ball measure) at a point."""
    S = _load(ctx, structure)
    p = _parse_point(point)
    seed, budget = ctx.obj["seed"], ctx.obj["budget"]
    sd = spherical_density(S, p, budget=budget, seed=seed, nsamples=samples)
    result = {
        "point": [str(c) for c in p],
        "value": sd.value,
        "stderr": sd.stderr,
        "Q": sd.Q,
        "formal": sd.formal,
        "mu_hat": {"mean": sd.mu_hat.mean, "stderr": sd.mu_hat.stderr},
    }
    header = rows = None
    if eps:
        rep = density_consistency(S, p, _parse_floats(eps), budget=budget,
                                  seed=seed, nsamples=samples)
        result["curve"] = [
            {"eps": e, "ratio": r, "stderr": s}
            for e, r, s in zip(rep.eps, rep.ratios, rep.ratio_stderrs)]
        result["rel_gap_final"] = rep.rel_gap_final
        header = ["eps", "value", "stderr"]
        rows = list(zip(rep.eps, rep.ratios, rep.ratio_stderrs))
    _emit(ctx, result, header=header, rows=rows)


@cli.command()
@_structure_opt
@click.option("--point", required=True)
@click.pass_context
def isodiametric(ctx, structure, point):
    """Certified isodiametric ratios over the ball/cap/box candidates."""
    S = _load(ctx, structure)
    p = _parse_point(point)
    N = nilpotentize(S, p)
    rep = isodiametric_search(N, budget=ctx.obj["budget"],
                              seed=ctx.obj["seed"])
    entries = [{
        "family": e.family,
        "params": {k: (v if isinstance(v, (int, float)) else str(v))
                   for k, v in e.params.items()},
        "ratio_lb": e.ratio_lb,
        "diam_ub": e.diam_ub,
        "leb_gain": e.leb_gain,
    } for e in rep.entries]
    _emit(ctx, {
        "point": [str(c) for c in p],
        "Q": rep.Q,
        "best": entries[0],
        "entries": entries,
        "leb_ball": {"mean": rep.leb_ball.mean,
                     "stderr": rep.leb_ball.stderr},
    }, header=["family", "ratio_lb", "diam_ub", "leb_gain"],
        rows=[[e["family"], e["ratio_lb"], e["diam_ub"], e["leb_gain"]]
              for e in entries])


@cli.command()
@_structure_opt
@click.option("--point", required=True)
@click.option("--eps", default="0.4,0.2,0.1", show_default=True)
@click.pass_context
def federer(ctx, structure, point, eps):
    """Best-candidate density ratio at each diameter bound."""
    S = _load(ctx, structure)
    p = _parse_point(point)
    rep = federer_ratio_probe(S, p, _parse_floats(eps),
                              budget=ctx.obj["budget"], seed=ctx.obj["seed"])
    _emit(ctx, {
        "point": [str(c) for c in p],
        "curve": [{"eps": c.eps, "value": c.best_ratio, "stderr": c.slack,
                   "family": c.family, "scale": c.scale} for c in rep.curve],
        "nilpotent_best": rep.nilpotent_best,
        "spherical": {"value": rep.spherical.value,
                      "stderr": rep.spherical.stderr},
    }, header=["eps", "value", "stderr", "family"],
        rows=[[c.eps, c.best_ratio, c.slack, c.family] for c in rep.curve])


@cli.command()
@_structure_opt
@click.option("--point", required=True)
@click.option("--measure", "kind", type=click.Choice(["smooth", "spherical"]),
              default="smooth", show_default=True)
@click.option("--radius", type=float, default=1.0, show_default=True)
@click.option("--eps", default="0.4,0.2,0.1", show_default=True)
@click.option("--pairs", type=int, default=40, show_default=True)
@click.pass_context
def blowup(ctx, structure, point, kind, radius, eps, pairs):
    """Dilation distortion and measure discrepancy along an eps schedule."""
    S = _load(ctx, structure)
    p = _parse_point(point)
    exp = blowup_experiment(S, p, radius, _parse_floats(eps), kind=kind,
                            pairs=pairs, budget=ctx.obj["budget"],
                            seed=ctx.obj["seed"])
    rows = [[d.eps, d.value, m.value, m.stderr]
            for d, m in zip(exp.distortion, exp.discrepancy)]
    _emit(ctx, {
        "point": [str(c) for c in p],
        "radius": exp.R,
        "measure": kind,
        "curve": [{"eps": d.eps, "distortion": d.value,
                   "distortion_stderr": d.error, "discrepancy": m.value,
                   "stderr": m.stderr, "worst_function": m.worst,
                   "escape_fraction": m.escape_fraction}
                  for d, m in zip(exp.distortion, exp.discrepancy)],
    }, header=["eps", "distortion", "discrepancy", "stderr"], rows=rows)


@cli.command()
@_structure_opt
@click.option("--stratum", "stratum_name", default=None,
              help="sample cloud from this stratum (default: whole box)")
@click.option("--alpha", type=float, required=True,
              help="homogeneous-dimension exponent for the pre-measures")
@click.option("--scales", default="0.5,0.35,0.25", show_default=True)
@click.option("--cloud", type=int, default=300, show_default=True)
@click.pass_context
def sandwich(ctx, structure, stratum_name, alpha, scales, cloud):
    """Ball-cover vs weighted-box pre-measures with factor-2 slack."""
    S = _load(ctx, structure)
    sampler = S.stratum(stratum_name) if stratum_name else tuple(S.box)
    rep = sandwich_check(S, sampler, alpha, _parse_floats(scales),
                         cloud_size=cloud, budget=ctx.obj["budget"],
                         seed=ctx.obj["seed"])
    _emit(ctx, {
        "alpha": rep.alpha,
        "curve": [{"eps": e, "ball": b, "set": x, "cells": c, "ok": o}
                  for e, b, x, c, o in zip(rep.scales, rep.ball_estimates,
                                           rep.set_estimates,
                                           rep.cell_estimates, rep.ok)],
        "slack": "factor 2 on each side of the 2^alpha sandwich",
    }, header=["eps", "ball", "set", "cells", "ok"],
        rows=list(zip(rep.scales, rep.ball_estimates, rep.set_estimates,
                      rep.cell_estimates, rep.ok)))


@cli.command()
@_structure_opt
@click.option("--stratum", "stratum_name", default=None)
@click.option("--scales", default="0.5,0.35,0.25", show_default=True)
@click.option("--cloud", type=int, default=300, show_default=True)
@click.pass_context
def dimension(ctx, structure, stratum_name, scales, cloud):
    """Box-counting dimension of a stratum (or the whole box)."""
    S = _load(ctx, structure)
    sampler = S.stratum(stratum_name) if stratum_name else tuple(S.box)
    rep = covering_dimension(S, sampler, _parse_floats(scales),
                             cloud_size=cloud, budget=ctx.obj["budget"],
                             seed=ctx.obj["seed"])
    _emit(ctx, {
        "slope": rep.slope,
        "stderr": rep.residual,
        "counts": list(rep.counts),
        "scales": list(rep.scales),
    }, header=["eps", "count"], rows=list(zip(rep.scales, rep.counts)))


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False, prog_name="srm")
        return 0
    except click.UsageError as e:
        click.echo(f"error: {e.format_message()}", err=True)
        return 2
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.exceptions.Exit as e:
        return e.exit_code
    except _VALIDATION_ERRORS as e:
        click.echo(f"error: {e}", err=True)
        return 2
    except SRMError as e:
        click.echo(f"numerical failure: {e}", err=True)
        return 3
    except np.linalg.LinAlgError as e:
        click.echo(f"numerical failure: {e}", err=True)
        return 3


if __name__ == "__main__":
    sys.exit(main())
