"""Command-line front end. Every command writes ``manifest.json`` into its
output directory; ``rerun`` replays a manifest."""
from __future__ import annotations

import csv
import functools
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import mesh as M
from . import pipelines as P
from . import traizet as T
from . import weierstrass as W
from .errors import ContractError, DomainError, PoleError, QuadratureError, SingularityError
from .manifest import RunManifest

PACKAGE_ERRORS = (DomainError, ContractError, PoleError, QuadratureError, SingularityError, FloatingPointError)


def _complex(s: str) -> complex:
    try:
        return complex(s.replace(" ", "").replace("i", "j"))
    except ValueError:
        raise click.BadParameter(f"not a complex number: {s!r}")


def _finish(ctx: click.Context, out: Path, headline: dict, outputs: list, status: str = "completed",
            tolerances: dict | None = None, t0: float | None = None) -> RunManifest:
    out.mkdir(parents=True, exist_ok=True)
    params = {k: v for k, v in ctx.params.items() if k != "out"}
    params["out"] = str(out)
    man = RunManifest(ctx.command.name, params, tolerances or {}, outputs=[str(p) for p in outputs], status=status,
                      headline=headline, elapsed=0.0 if t0 is None else time.monotonic() - t0)
    man.write(out / "manifest.json")
    return man


def command(f):
    """Map package errors to a one-line message and exit code 1."""

    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except PACKAGE_ERRORS as e:
            click.echo(f"error: {type(e).__name__}: {e}", err=True)
            sys.exit(1)

    return wrapper


out_option = click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=None,
                          help="Output directory (default: ./run-<command>).")


def _outdir(ctx, out):
    return out if out is not None else Path(f"run-{ctx.command.name}")


@click.group()
def main():
    """Triply periodic minimal surfaces and their twins."""


@main.command()
@click.option("--t-min", type=float, default=0.5, show_default=True)
@click.option("--t-max", type=float, default=2.0, show_default=True)
@click.option("--samples", type=int, default=61, show_default=True)
@out_option
@click.pass_context
@command
def curves(ctx, t_min, t_max, samples, out):
    """Height h and area ratio A of the catenoid unit over a grid of t."""
    t0 = time.monotonic()
    if not (0 < t_min < t_max) or samples < 2:
        raise DomainError("need 0 < t_min < t_max and samples >= 2")
    out = _outdir(ctx, out)
    out.mkdir(parents=True, exist_ok=True)
    ts = np.linspace(t_min, t_max, samples)
    W.write_curves_t(out / "curves.csv", ts)
    click.echo(f"wrote {out / 'curves.csv'} ({samples} rows)")
    _finish(ctx, out, {"rows": samples}, [out / "curves.csv"], t0=t0)


@main.command()
@click.option("--tau", type=float, required=True)
@click.option("--delta", type=int, required=True)
@click.option("--tol", type=float, default=1e-9, show_default=True)
@out_option
@click.pass_context
@command
def period(ctx, tau, delta, tol, out):
    """Solve the period problem for the twin of lattice distance delta."""
    t0 = time.monotonic()
    res = W.solve_period(tau, delta, tol)
    if isinstance(res, W.NoSolution):
        click.echo(f"NoSolution ({res.reason})")
        headline = {"p": None, "reason": res.reason}
    else:
        click.echo("p = " + ", ".join(f"{p:.10f}" for p in res))
        headline = {"p": list(res)}
    _finish(ctx, _outdir(ctx, out), headline, [], tolerances={"tol": tol}, t0=t0)


@main.command("tau-star")
@out_option
@click.pass_context
@command
def tau_star(ctx, out):
    """tau at which the delta = 3 root reaches 3/4."""
    t0 = time.monotonic()
    ts = W.find_tau_star(3)
    click.echo(f"tau_* = {ts:.10f}")
    _finish(ctx, _outdir(ctx, out), {"tau_star": ts}, [], t0=t0)


@main.command()
@click.option("--config", "config", type=click.Path(exists=True, dir_okay=False), default=None,
              help="TraizetConfig JSON document.")
@click.option("--preset", type=click.Choice(["rpd", "h", "mg", "od-roots"]), default=None)
@click.option("--t1", default="1", show_default=True, help="First period for the mg preset (complex, e.g. 1).")
@click.option("--t2", default="i", show_default=True, help="Second period for the mg preset (complex, e.g. i).")
@click.option("--tol", type=float, default=1e-10, show_default=True)
@out_option
@click.pass_context
@command
def balance(ctx, config, preset, t1, t2, tol, out):
    """Forces of a Traizet configuration, or the oD roots."""
    t0 = time.monotonic()
    out = _outdir(ctx, out)
    if (config is None) == (preset is None):
        raise DomainError("give exactly one of --config and --preset")
    if preset == "od-roots":
        roots = T.solve_od_roots()
        click.echo("roots: " + ", ".join(f"{r:.10f}" for r in roots))
        _finish(ctx, out, {"roots": roots}, [], t0=t0)
        return
    if config is not None:
        cfg = T.read_config(config)
    elif preset == "mg":
        cfg = T.preset_mg(_complex(t1), _complex(t2))
    else:
        cfg = {"rpd": T.preset_rpd, "h": T.preset_h}[preset]()
    rep = T.all_forces(cfg, tol)
    click.echo(rep.table())
    headline = {"max_force": rep.max_norm, "balanced": rep.balanced}
    if rep.balanced:
        headline["corank"] = T.nondegeneracy_corank(cfg, balance_tol=tol)
        click.echo(f"corank = {headline['corank']}")
    out.mkdir(parents=True, exist_ok=True)
    T.write_config(out / "config.json", cfg)
    _finish(ctx, out, headline, [out / "config.json"], tolerances={"balance": tol}, t0=t0)


@main.command()
@click.argument("kind", type=click.Choice(["rpd", "g"]))
@click.option("--t", "t", type=float, default=math.sqrt(0.5), show_default=True, help="rPD parameter.")
@click.option("--delta", type=int, required=True, help="Lattice distance between twin boundaries.")
@click.option("--refinements", type=int, default=None, help="Final refinement level (rpd 4, g 3).")
@click.option("--threshold", type=float, default=P.THRESHOLD, show_default=True)
@click.option("--deviation/--no-deviation", "with_dev", default=False, help="Also write the deviation from the untwinned surface.")
@out_option
@click.pass_context
@command
def twin(ctx, kind, t, delta, refinements, threshold, with_dev, out):
    """Build and evolve an rPD or G twin. Stalled runs still exit 0."""
    out = _outdir(ctx, out)
    if kind == "rpd":
        res = P.rpd_twin(t, delta, refinements if refinements is not None else 4, threshold=threshold)
    else:
        res = P.g_twin(delta, refinements if refinements is not None else 3, threshold=threshold)
    dev, extra = None, {}
    if with_dev:
        dev, bins = P.twin_deviation(res)
        extra["deviation_bin_max"] = bins.tolist()
    params = dict(ctx.params, out=str(out))
    man = P.write_bundle(res, out, "twin", params, dev, extra)
    click.echo(f"{res.status}: W = {res.final_energy:.3e}" + (f", p = {res.p_estimates}" if res.p_estimates else ""))
    return man


def _stretch_one(c, refinements):
    m = P.stretch_family([c], refinements)[0]
    return m


@main.command()
@click.option("--c", "c_values", type=float, multiple=True, default=(1.0, math.sqrt(2)), show_default=True)
@click.option("--refinements", type=int, default=3, show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True, help="Run members concurrently.")
@out_option
@click.pass_context
@command
def stretch(ctx, c_values, refinements, jobs, out):
    """Evolve the triclinic starts from G (c = 1) to D (c = sqrt 2)."""
    t0 = time.monotonic()
    out = _outdir(ctx, out)
    out.mkdir(parents=True, exist_ok=True)
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            members = list(ex.map(_stretch_one, c_values, [refinements] * len(c_values)))
    else:
        members = [_stretch_one(c, refinements) for c in c_values]
    rows, outputs = [], []
    for mb in members:
        path = out / f"stretch_c{mb.c:.6f}.off"
        M.write_off(path, mb.mesh)
        outputs.append(path)
        rows.append(dict(c=mb.c, status=mb.status, final_energy=mb.final_energy, line_residual=mb.line_residual, area_ratio=mb.area_ratio))
        click.echo(f"c = {mb.c:.6f}: {mb.status}, W = {mb.final_energy:.3e}, line residual {mb.line_residual:.2e}")
    with open(out / "stretch.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    outputs.append(out / "stretch.csv")
    _finish(ctx, out, {"members": rows}, outputs, t0=t0)


@main.command("extended-td")
@click.option("--h-over-a", type=float, required=True)
@click.option("--branch", type=click.Choice(["small", "large"]), default="large", show_default=True)
@click.option("--refinements", type=int, default=2, show_default=True)
@click.option("--threshold", type=float, default=P.THRESHOLD, show_default=True)
@out_option
@click.pass_context
@command
def extended_td(ctx, h_over_a, branch, refinements, threshold, out):
    """Evolve tetragonal necks between horizontal planes."""
    out = _outdir(ctx, out)
    res = P.extended_td(h_over_a, branch, refinements, threshold=threshold)
    P.write_bundle(res, out, "extended-td", dict(ctx.params, out=str(out)), extra={"area_ratio": res.params["area_ratio"]})
    click.echo(f"{res.status}: W = {res.final_energy:.3e}, area ratio {res.params['area_ratio']:.5f}")


@main.command()
@click.argument("mesh_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("reference_path", type=click.Path(exists=True, dir_okay=False))
@out_option
@click.pass_context
@command
def deviate(ctx, mesh_path, reference_path, out):
    """Signed distance from a mesh (OFF) to a reference (OFF); writes PLY."""
    t0 = time.monotonic()
    out = _outdir(ctx, out)
    out.mkdir(parents=True, exist_ok=True)
    m, ref = M.read_off(mesh_path), M.read_off(reference_path)
    dev = P.deviation(m, ref)
    M.write_ply(out / "deviation.ply", m, {"deviation": dev.values})
    click.echo(f"max |deviation| = {dev.max_abs:.6e}")
    _finish(ctx, out, {"max_abs_deviation": dev.max_abs, "mean_abs_deviation": float(np.mean(np.abs(dev.values)))},
            [out / "deviation.ply"], t0=t0)


@main.command()
@click.argument("mesh_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--format", "fmt", type=click.Choice(["off", "obj", "ply"]), required=True)
@out_option
@click.pass_context
@command
def export(ctx, mesh_path, fmt, out):
    """Convert an OFF mesh to OFF, OBJ or PLY."""
    t0 = time.monotonic()
    out = _outdir(ctx, out)
    out.mkdir(parents=True, exist_ok=True)
    m = M.read_off(mesh_path)
    path = out / (Path(mesh_path).stem + "." + fmt)
    {"off": M.write_off, "obj": M.write_obj, "ply": M.write_ply}[fmt](path, m)
    click.echo(f"wrote {path}")
    _finish(ctx, out, {"vertices": m.n_vertices, "faces": m.n_faces}, [path], t0=t0)


@main.command()
@click.argument("manifest_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=None,
              help="Output directory for the replay (default: the manifest's).")
@click.pass_context
@command
def rerun(ctx, manifest_path, out):
    """Replay the command recorded in a manifest."""
    man = RunManifest.read(manifest_path)
    cmd = main.get_command(ctx, man.command)
    if cmd is None or man.command == "rerun":
        raise DomainError(f"manifest names no replayable command: {man.command!r}")
    params = dict(man.parameters)
    if out is not None:
        params["out"] = str(out)
    args = []
    for p in cmd.params:
        if p.name not in params or params[p.name] is None:
            continue
        v = params[p.name]
        if isinstance(p, click.Argument):
            args.append(str(v))
        elif p.is_flag and p.secondary_opts:
            args.append(p.opts[0] if v else p.secondary_opts[0])
        elif p.multiple:
            for x in v:
                args += [p.opts[0], str(x)]
        else:
            args += [p.opts[0], repr(v) if isinstance(v, float) else str(v)]
    # arguments first in declaration order is what click expects positionally
    cmd.main(args, standalone_mode=False, prog_name=man.command)


if __name__ == "__main__":
    main()
