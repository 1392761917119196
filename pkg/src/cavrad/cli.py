"""Command-line interface: ``cavrad gen-mesh | run | compare | block-image``.

Exit codes: 0 success, 2 configuration or input error, 3 solver failure,
4 refusal because the dense reference would exceed the memory budget.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .cavity import DIRECT, LOWRANK, MemoryBudgetError, build_cavity
from .cluster import build_block_tree, build_index_tree, write_ppm
from .config import ConfigError, SimulationConfig, load_config
from .fem import FEMError, FEMSpace
from .generators import CAVITY_TAG, gen_fibonacci_bodies, gen_parallel_plates
from .hmatrix import HLUError, assemble_hmatrix, storage_report
from .mesh import MeshError, VolumeMesh, extract_boundary
from .meshio import load_mesh, write_native
from .output import COMPARE_COLUMNS, peak_rss_bytes, write_csv, write_json, write_run_csv, write_vtk
from .solver import HeatProblem, LinearSolveError, NewtonError, error_eT, run_transient
from .viewfactor import ViewFactorError, ViewFactorKernel, assemble_dense_F

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_MEMORY = 0, 2, 3, 4


def make_mesh(cfg: SimulationConfig) -> VolumeMesh:
    if cfg.mesh_source == "plates":
        return gen_parallel_plates(cfg.plates_L, cfg.plates_separation, cfg.plates_m, cfg.plates_layers)
    if cfg.mesh_source == "fibonacci":
        return gen_fibonacci_bodies(cfg.fib_level, cfg.fib_body, radius=cfg.fib_radius, scale=cfg.fib_scale)
    return load_mesh(cfg.mesh_path, cfg.mesh_format)


class Setup:
    """Mesh, surface, FE space and initial state derived from a configuration."""

    def __init__(self, cfg: SimulationConfig):
        self.cfg = cfg
        self.mesh = make_mesh(cfg)
        self.surf = extract_boundary(self.mesh, cfg.cavity_tags) if cfg.cavity_enabled else None
        self.space = FEMSpace(self.mesh)
        dofmap = self.space.dofmap
        regions = self.mesh.node_regions()[dofmap.dof_to_node]
        self.T0 = np.full(self.space.n_dofs, cfg.t_initial)
        for region, temp in cfg.region_temperatures:
            self.T0[regions == region] = temp

    def cavity(self, kind: str | None = None, eps_rel: float | None = None):
        if self.surf is None:
            return None
        cfg = self.cfg
        return build_cavity(self.surf, self.space.dofmap.node_to_dof, self.space.n_dofs,
                            emissivity=cfg.emissivity, mode=cfg.mode, t_ambient=cfg.t_ambient,
                            kind=kind or cfg.solver, eps_rel=eps_rel or cfg.eps_rel, n_min=cfg.n_min,
                            adm_const=cfg.adm_const, sigma=cfg.sigma, memory_budget=cfg.memory_budget)

    def problem(self, cavity) -> HeatProblem:
        return HeatProblem(self.space, self.cfg.material, cavity)

    def run(self, kind: str | None = None, eps_rel: float | None = None, on_step=None):
        cav = self.cavity(kind, eps_rel)
        ts = run_transient(self.problem(cav), self.T0, self.cfg.dt, self.cfg.n_steps, cfg=self.cfg.newton,
                           on_step=on_step)
        return ts, cav


# Subcommands ---------------------------------------------------------------


def cmd_gen_mesh(args) -> int:
    if args.kind == "plates":
        mesh = gen_parallel_plates(args.L, args.separation, args.m, args.layers)
    else:
        mesh = gen_fibonacci_bodies(args.level, args.body, radius=args.radius, scale=args.scale,
                                    subdivision=args.subdivision)
    out = Path(args.output or f"{args.kind}.mesh")
    write_native(mesh, out)
    surf = extract_boundary(mesh, {CAVITY_TAG})
    n_bodies = len(np.unique(mesh.regions))
    print(f"wrote {out}: {mesh.n_nodes} nodes, {mesh.n_elements} elements, "
          f"{surf.n_facets} cavity facets, {n_bodies} bodies")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.solver:
        cfg = cfg.with_(solver=args.solver)
    if args.eps_rel:
        cfg = cfg.with_(eps_rel=args.eps_rel)
    out = Path(args.output or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    setup = Setup(cfg)
    to_nodes = setup.space.dofmap.to_nodes

    def snapshot(step, T):
        if cfg.vtk_every and (step % cfg.vtk_every == 0 or step == cfg.n_steps):
            write_vtk(setup.mesh, to_nodes(T, 0.0), out / f"T_{step:04d}.vtk")

    t0 = time.perf_counter()
    write_vtk(setup.mesh, to_nodes(setup.T0, 0.0), out / "T_0000.vtk") if cfg.vtk_every else None
    ts, cav = setup.run(on_step=snapshot)
    write_run_csv(ts, out / "run.csv")
    diag = {
        "version": __version__,
        "solver": cfg.solver,
        "eps_rel": cfg.eps_rel,
        "n_nodes": setup.mesh.n_nodes,
        "n_facets": setup.surf.n_facets if setup.surf is not None else 0,
        "n_steps": cfg.n_steps,
        "wall_s": time.perf_counter() - t0,
        "peak_rss_bytes": peak_rss_bytes(),
    }
    if cav is not None:
        diag["timings"] = dict(cav.timings)
        diag["isolated_fraction"] = float(cav.rowsums.isolated.mean())
        if cav.kind == LOWRANK:
            diag["storage_report"] = storage_report(cav.F)
        else:
            n = cav.n_facets
            diag["storage_report"] = {"bytes": 8 * n * n, "dense_bytes": 8 * n * n, "compression": 1.0}
    write_json(diag, out / "diag.json")
    print(f"{cfg.n_steps} steps written to {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.output or Path(cfg.output_dir) / "compare.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    eps_list = [float(e) for e in args.eps]
    setup = Setup(cfg)
    rows = []
    refused = False
    direct = None
    F_dense = None
    try:
        direct, _ = setup.run(kind=DIRECT)
        if setup.surf is not None:
            kernel = ViewFactorKernel(setup.surf)
            F_dense = assemble_dense_F(setup.surf, kernel=kernel)
    except MemoryBudgetError as exc:
        print(f"direct reference refused: {exc}", file=sys.stderr)
        refused = True
    for eps in eps_list:
        t0 = time.perf_counter()
        ts, cav = setup.run(kind=LOWRANK, eps_rel=eps)
        wall = time.perf_counter() - t0
        f_err = float("nan")
        if F_dense is not None:
            H = assemble_hmatrix(kernel, cav.F.block_tree, eps)
            f_err = float(np.linalg.norm(H.to_dense() - F_dense) / np.linalg.norm(F_dense))
        rep = storage_report(cav.F) if cav is not None else {"bytes": 0, "max_rank": 0}
        rows.append({"eps_rel": eps, "e_T": error_eT(ts, direct) if direct is not None else float("nan"),
                     "F_rel_error": f_err, "bytes": rep["bytes"], "max_rank": rep["max_rank"],
                     "wall_s": wall})
    write_csv(rows, out, COMPARE_COLUMNS)
    print(f"{len(rows)} rows written to {out}")
    return EXIT_MEMORY if refused else EXIT_OK


def cmd_block_image(args) -> int:
    if args.line:
        n = args.line
        pts = np.column_stack([np.arange(n) + 0.5, np.zeros(n), np.zeros(n)])
        tree = build_index_tree(pts, args.n_min or 1, extents=0.5)
        c = args.adm_const or 2.0
    else:
        if not args.config:
            raise ConfigError("block-image needs a config file or --line N")
        cfg = load_config(args.config)
        setup_mesh = make_mesh(cfg)
        surf = extract_boundary(setup_mesh, cfg.cavity_tags)
        tree = build_index_tree(surf.centroids, args.n_min or cfg.n_min)
        c = args.adm_const or cfg.adm_const
    btree = build_block_tree(tree, c)
    out = Path(args.output)
    write_ppm(btree, out, args.size)
    counts = btree.counts()
    print(f"wrote {out}: n={tree.n}, {counts['dense']} dense and {counts['lowrank']} low-rank leaves")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cavrad", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-mesh", help="write a generated mesh in the native format")
    g.add_argument("kind", choices=["plates", "fib"])
    g.add_argument("-o", "--output")
    g.add_argument("--m", type=int, default=40, help="plates: elements per side")
    g.add_argument("--L", type=float, default=1.0)
    g.add_argument("--separation", type=float, default=1.0)
    g.add_argument("--layers", type=int, default=1)
    g.add_argument("--level", type=int, default=1, help="fib: refinement level 1..7")
    g.add_argument("--body", choices=["sphere_like", "cube"], default="sphere_like")
    g.add_argument("--radius", type=float, default=0.55)
    g.add_argument("--scale", type=float, default=1.0)
    g.add_argument("--subdivision", type=int)
    g.set_defaults(func=cmd_gen_mesh)

    r = sub.add_parser("run", help="run a transient simulation from a config file")
    r.add_argument("config")
    r.add_argument("-o", "--output", help="output directory (overrides [output] directory)")
    r.add_argument("--solver", choices=[LOWRANK, DIRECT])
    r.add_argument("--eps-rel", type=float)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="low-rank runs against the dense reference")
    c.add_argument("config")
    c.add_argument("--eps", nargs="*", default=[], help="list of eps_rel values")
    c.add_argument("-o", "--output", help="CSV path")
    c.set_defaults(func=cmd_compare)

    b = sub.add_parser("block-image", help="PPM image of the block partition")
    b.add_argument("config", nargs="?")
    b.add_argument("-o", "--output", default="blocks.ppm")
    b.add_argument("--line", type=int, help="use n equispaced points on a line instead of a mesh")
    b.add_argument("--n-min", type=int)
    b.add_argument("--adm-const", type=float)
    b.add_argument("--size", type=int, help="image side in pixels")
    b.set_defaults(func=cmd_block_image)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, MeshError, FEMError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MemoryBudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MEMORY
    except (NewtonError, LinearSolveError, HLUError, ViewFactorError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
