"""Command-line front end.

Subcommands: solve, sweep, support, gw, barycenter, export-sdpa.  Problems
are described by a JSON config (see README for the schema); outputs are
plain CSV/JSON/PGM.  Wall-clock figures and other non-reproducible fields
go to run_meta.json so repeated runs produce byte-identical artifacts.

Exit codes: 0 success, 1 config error, 2 solver failure, 3 fixed-point
non-convergence (best iterate still written).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

import numpy as np

from . import formulations as F
from . import postprocess as P
from . import relaxation as R
from .conic import SolverFailure, export_sdpa
from .moments import (ClosedForm, Empirical, UniformMask, descriptor_moments,
                      read_mask, read_moments_csv, read_points_csv,
                      write_moments_csv, write_pgm)
from .polyalg import SemialgebraicSet, parse_polynomial


class ConfigError(ValueError):
    pass


SOLVER_DEFAULTS = {"tol": 1e-8, "max_iter": 100, "scale": True, "verbose": 0}
POST_DEFAULTS = {"eta": 0.3, "grid": [80, 80], "christoffel_order": None}


class RunConfig:
    """Validated view of the problem config JSON."""

    KNOWN_KINDS = ("wasserstein", "barycenter", "gw", "gw_barycenter",
                   "multimarginal")

    def __init__(self, data, base_dir="."):
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        self.data = data
        self.base_dir = base_dir
        self.kind = data.get("kind")
        if self.kind not in self.KNOWN_KINDS:
            raise ConfigError(f"unknown problem kind {self.kind!r}")
        self.p = int(data.get("p", 2))
        self.q = data.get("q")
        if self.q is not None:
            self.q = int(self.q)
        self.order = data.get("order")
        self.orders = data.get("orders")
        self.seed = int(data.get("seed", 20240901))
        self.weights = data.get("weights")
        if self.weights is not None:
            w = [float(v) for v in self.weights]
            if any(v < 0 for v in w) or abs(sum(w) - 1.0) > 1e-10:
                raise ConfigError("weights must be nonnegative and sum to 1")
            self.weights = w
        self.solver = dict(SOLVER_DEFAULTS)
        self.solver.update(data.get("solver", {}))
        self.post = dict(POST_DEFAULTS)
        self.post.update(data.get("postprocess", {}))
        self.fixed_point = {"tol": 1e-7, "max_iter": 50}
        self.fixed_point.update(data.get("fixed_point", {}))
        self.moment_order = data.get("moment_order")

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls(data, base_dir=os.path.dirname(os.path.abspath(path)))

    def to_dict(self):
        return json.loads(json.dumps(self.data, sort_keys=True))

    # -- pieces ---------------------------------------------------------
    def _path(self, p):
        return p if os.path.isabs(p) else os.path.join(self.base_dir, p)

    def build_set(self, spec):
        if not isinstance(spec, dict) or "type" not in spec:
            raise ConfigError("set spec needs a 'type'")
        kind = spec["type"]
        if kind == "box":
            return SemialgebraicSet.box(spec["lo"], spec["hi"])
        if kind == "ball":
            return SemialgebraicSet.ball(spec["center"], spec["radius"])
        if kind == "semialgebraic":
            n = int(spec["dimension"])
            polys = [parse_polynomial(t, n) for t in spec.get("inequalities", [])]
            return SemialgebraicSet(n, polys, spec.get("ball_radius", 1.0))
        raise ConfigError(f"unknown set type {kind!r}")

    def build_descriptor(self, spec):
        if not isinstance(spec, dict) or "type" not in spec:
            raise ConfigError("marginal spec needs a 'type'")
        kind = spec["type"]
        if kind == "empirical":
            if "path" in spec:
                path = self._path(spec["path"])
                if not os.path.exists(path):
                    raise ConfigError(f"missing input file {path}")
                return read_points_csv(path, dimension=spec.get("dimension"))
            return Empirical(np.asarray(spec["points"], dtype=float),
                             spec.get("point_weights"))
        if kind == "mask":
            if "path" in spec:
                path = self._path(spec["path"])
                if not os.path.exists(path):
                    raise ConfigError(f"missing input file {path}")
                mask = read_mask(path)
            else:
                mask = (np.asarray(spec["rows"]) != 0).T[:, ::-1]
            origin = spec.get("origin", [0.0, 0.0])
            cell = spec.get("cell_size")
            return UniformMask(mask, tuple(origin), None if cell is None else tuple(cell))
        if kind == "closed_form":
            factors = []
            for f in spec["factors"]:
                name = f["name"]
                if name == "uniform":
                    factors.append(("uniform", f["interval"][0], f["interval"][1]))
                elif name == "dirac":
                    factors.append(("dirac", f["point"]))
                elif name == "beta":
                    factors.append(("beta", f["a"], f["b"],
                                    f["interval"][0], f["interval"][1]))
                else:
                    raise ConfigError(f"unknown closed-form factor {name!r}")
            return ClosedForm(tuple(factors))
        raise ConfigError(f"unknown marginal type {kind!r}")

    def order_list(self):
        if self.orders is not None:
            if isinstance(self.orders, str):
                lo, hi = self.orders.split("..")
                return list(range(int(lo), int(hi) + 1))
            return [int(r) for r in self.orders]
        if self.order is None:
            raise ConfigError("config needs 'order' or 'orders'")
        return [int(self.order)]

    def marginal_order(self, r_max):
        return int(self.moment_order) if self.moment_order else 2 * r_max

    def build_problem(self, r_max):
        """Instantiate the moment problem for the requested orders."""
        order = self.marginal_order(r_max)
        kind = self.kind
        if kind == "multimarginal":
            sets = [self.build_set(s) for s in self.data["sets"]]
            margs = [descriptor_moments(self.build_descriptor(m), s, order)
                     for m, s in zip(self.data["marginals"], sets)]
            n = sum(s.dimension for s in sets)
            cost = parse_polynomial(self.data["cost"], n)
            return F.build_multimarginal(cost, margs, sets)
        if kind == "wasserstein":
            set_ = self.build_set(self.data["set"])
            specs = self.data["marginals"]
            if len(specs) != 2:
                raise ConfigError("wasserstein needs exactly two marginals")
            mu = descriptor_moments(self.build_descriptor(specs[0]), set_, order)
            nu = descriptor_moments(self.build_descriptor(specs[1]), set_, order)
            if self.p % 2 == 0:
                return F.build_wp_even(self.p, mu, nu, set_)
            return F.build_wp_odd(self.p, mu, nu, set_)
        if kind == "barycenter":
            set_ = self.build_set(self.data["set"])
            margs = [descriptor_moments(self.build_descriptor(m), set_, order)
                     for m in self.data["marginals"]]
            weights = self.weights or [1.0 / len(margs)] * len(margs)
            return F.build_barycenter_wp(self.p, margs, weights, set_)
        if kind == "gw":
            setX = self.build_set(self.data.get("set_x") or self.data["set"])
            setY = self.build_set(self.data.get("set_y") or self.data["set"])
            specs = self.data["marginals"]
            mu = descriptor_moments(self.build_descriptor(specs[0]), setX, order)
            nu = descriptor_moments(self.build_descriptor(specs[1]), setY, order)
            cX = cY = None
            if "cost_x" in self.data:
                cX = parse_polynomial(self.data["cost_x"], 2 * setX.dimension)
                cY = parse_polynomial(self.data["cost_y"], 2 * setY.dimension)
            return F.build_gw_even(self.p, cX, cY, mu, nu, setX, setY,
                                   q=self.q or (None if cX is not None else 2))
        if kind == "gw_barycenter":
            setX = self.build_set(self.data.get("set_x") or self.data["set"])
            setY = self.build_set(self.data.get("set_y") or self.data["set"])
            margs = [descriptor_moments(self.build_descriptor(m), setY, order)
                     for m in self.data["marginals"]]
            weights = self.weights or [1.0 / len(margs)] * len(margs)
            return F.build_gw_barycenter(margs, weights, setX, setY,
                                         p=self.p, q=self.q or 2)
        raise ConfigError(f"unhandled kind {kind}")


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _result_payload(result, p=None):
    payload = result.to_json_dict()
    rho = result.rho
    payload["sqrt_rho"] = math.sqrt(rho) if rho >= 0 else None
    if p:
        payload["wp_estimate"] = max(rho, 0.0) ** (1.0 / p) if not math.isnan(rho) else None
    return payload


def _write_sequences(outdir, result, prefix="moments"):
    paths = {}
    for vid in sorted(result.sequences):
        nat = result.natural_sequence(vid)
        path = os.path.join(outdir, f"{prefix}_{vid.replace('/', '_')}.csv")
        write_moments_csv(nat, path)
        paths[vid] = os.path.basename(path)
    return paths


def _meta(outdir, **fields):
    fields["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    _write_json(os.path.join(outdir, "run_meta.json"), fields)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_solve(config: RunConfig, outdir):
    orders = config.order_list()
    r = orders[0]
    gmp = config.build_problem(r)
    if gmp.is_quadratic():
        raise ConfigError("quadratic problems go through the 'gw' command")
    r_star = R.min_order(gmp)
    if r < r_star:
        raise ConfigError(f"order {r} is below the minimum order r* = {r_star}")
    result = R.solve_order(gmp, r, options=config.solver)
    os.makedirs(outdir, exist_ok=True)
    payload = _result_payload(result, p=config.data.get("p"))
    payload["moment_files"] = _write_sequences(outdir, result)
    _write_json(os.path.join(outdir, "result.json"), payload)
    _meta(outdir, wall_time=result.wall_time, command="solve")
    if result.status == R.STATUS_OPTIMAL:
        return 0
    return 2


def cmd_sweep(config: RunConfig, outdir):
    orders = config.order_list()
    gmp = config.build_problem(max(orders))
    if gmp.is_quadratic():
        raise ConfigError("quadratic problems go through the 'gw' command")
    r_star = R.min_order(gmp)
    if min(orders) < r_star:
        raise ConfigError(f"order {min(orders)} is below the minimum order r* = {r_star}")
    results = [R.solve_order(gmp, r, options=config.solver) for r in orders]
    flags = R.monotone_flags(results)
    os.makedirs(outdir, exist_ok=True)
    lines = ["r,rho_r,runtime_s,status,monotone_ok"]
    for res, ok in zip(results, flags):
        lines.append(f"{res.order},{float(res.rho)!r},{res.wall_time:.3f},"
                     f"{res.status},{int(ok)}")
    with open(os.path.join(outdir, "summary.csv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    best = results[-1]
    payload = _result_payload(best, p=config.data.get("p"))
    payload["moment_files"] = _write_sequences(outdir, best)
    _write_json(os.path.join(outdir, "result.json"), payload)
    _meta(outdir, command="sweep",
          wall_times={res.order: res.wall_time for res in results})
    if all(res.status == R.STATUS_OPTIMAL for res in results):
        return 0
    return 2


def cmd_support(config: RunConfig, outdir):
    post = config.post
    grid_shape = [int(v) for v in post["grid"]]
    if any(g <= 0 for g in grid_shape):
        raise ConfigError("grid resolution must be positive")
    data = config.data
    if "moments_csv" in data:
        path = config._path(data["moments_csv"])
        if not os.path.exists(path):
            raise ConfigError(f"missing moments file {path}")
        seq = read_moments_csv(path)
        transform = None
        lo = data.get("grid_lo", [0.0] * seq.dimension)
        hi = data.get("grid_hi", [1.0] * seq.dimension)
    else:
        # inline solve on the problem's barycenter or plan marginal
        orders = config.order_list()
        gmp = config.build_problem(orders[0])
        result = R.solve_order(gmp, orders[0], options=config.solver)
        seq_scaled = (F.barycenter_sequence(gmp, result.sequences)
                      if config.kind == "barycenter"
                      else F.plan_sequence(gmp, result.sequences))
        set0 = gmp.variables[0].support
        d = seq_scaled.dimension
        tr = set0.transform
        from .polyalg import AffineMap
        transform = AffineMap(tr.scale[:d], tr.offset[:d])
        seq = seq_scaled
        lo = data.get("grid_lo", [0.0] * d)
        hi = data.get("grid_hi", [1.0] * d)
    r_model = post.get("christoffel_order") or seq.order // 2
    model = P.christoffel_model(seq, int(r_model), transform=transform)
    pts, shape = P.make_grid(lo, hi, grid_shape)
    est = P.support_estimate(model, pts, float(post["eta"]))
    os.makedirs(outdir, exist_ok=True)
    n = pts.shape[1]
    header = ",".join(f"x{i + 1}" for i in range(n)) + ",kappa,label"
    lines = [header]
    for row, k, lab in zip(est.points, est.kappa, est.labels):
        coords = ",".join(repr(float(v)) for v in row)
        lines.append(f"{coords},{float(k)!r},{int(lab)}")
    with open(os.path.join(outdir, "support_grid.csv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    if n == 2:
        write_pgm(est.labels.reshape(shape), os.path.join(outdir, "support_mask.pgm"))
    _write_json(os.path.join(outdir, "support.json"), {
        "eta": est.eta, "gamma_r": est.gamma_r,
        "inside_fraction": est.inside_fraction(),
        "model_order": model.order, "model_rank": model.rank,
    })
    _meta(outdir, command="support")
    return 0


def _trace_csv(path, trace):
    lines = ["iteration,objective"] + [f"{k},{float(v)!r}" for k, v in enumerate(trace)]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_gw(config: RunConfig, outdir):
    orders = config.order_list()
    os.makedirs(outdir, exist_ok=True)
    if config.kind == "gw_barycenter":
        return _gw_barycenter_runs(config, outdir, orders)
    gmp = config.build_problem(max(orders))
    fp = config.fixed_point
    rows = ["r,objective,iterations,converged"]
    exit_code = 0
    last = None
    for r in orders:
        res = F.gw_fixed_point(gmp, r, tol=fp["tol"], max_iter=fp["max_iter"],
                               solver_options=config.solver)
        _trace_csv(os.path.join(outdir, f"trace_r{r}.csv"), res.trace)
        rows.append(f"{r},{res.objective!r},{res.iterations},{int(res.converged)}")
        if not res.converged:
            exit_code = 3
        last = (r, res)
    with open(os.path.join(outdir, "summary.csv"), "w") as fh:
        fh.write("\n".join(rows) + "\n")
    r, res = last
    plan = F.plan_sequence(gmp, res.sequences)
    tr = gmp.variable(gmp.metadata["plan_vid"]).support.transform
    write_moments_csv(plan.pushforward_affine(tr.scale, tr.offset),
                      os.path.join(outdir, "moments_plan.csv"))
    _write_json(os.path.join(outdir, "result.json"), {
        "order": r, "objective": res.objective,
        "gw_estimate": max(res.objective, 0.0) ** (1.0 / config.p),
        "iterations": res.iterations, "converged": res.converged,
        "statuses": res.statuses,
    })
    _meta(outdir, command="gw")
    return exit_code


def _gw_barycenter_runs(config: RunConfig, outdir, orders):
    lambdas = config.data.get("lambdas")
    weight_sets = ([[lam, 1.0 - lam] for lam in lambdas]
                   if lambdas is not None else [config.weights])
    fp = config.fixed_point
    exit_code = 0
    for weights in weight_sets:
        cfg_data = dict(config.data)
        cfg_data["weights"] = weights
        cfg = RunConfig(cfg_data, base_dir=config.base_dir)
        gmp = cfg.build_problem(max(orders))
        tag = "-".join(f"{w:g}" for w in weights)
        for r in orders:
            res = F.gw_barycenter_fixed_point(
                gmp, r, tol=fp["tol"], max_iter=fp["max_iter"],
                solver_options=cfg.solver)
            sub = os.path.join(outdir, f"lambda_{tag}_r{r}")
            os.makedirs(sub, exist_ok=True)
            _trace_csv(os.path.join(sub, "trace.csv"), res.trace)
            bar = F.barycenter_sequence(gmp, res.sequences)
            tr = gmp.variable("bar").support.transform
            write_moments_csv(bar.pushforward_affine(tr.scale, tr.offset),
                              os.path.join(sub, "moments_barycenter.csv"))
            _write_json(os.path.join(sub, "result.json"), {
                "order": r, "objective": res.objective,
                "weights": weights, "iterations": res.iterations,
                "converged": res.converged,
            })
            if not res.converged:
                exit_code = 3
    _meta(outdir, command="gw_barycenter")
    return exit_code


def cmd_barycenter(config: RunConfig, outdir):
    if config.kind == "gw_barycenter":
        return cmd_gw(config, outdir)
    if config.kind != "barycenter":
        raise ConfigError("barycenter command needs kind = barycenter")
    orders = config.order_list()
    gmp = config.build_problem(max(orders))
    os.makedirs(outdir, exist_ok=True)
    exit_code = 0
    for r in orders:
        result = R.solve_order(gmp, r, options=config.solver)
        sub = os.path.join(outdir, f"r{r}") if len(orders) > 1 else outdir
        os.makedirs(sub, exist_ok=True)
        bar = F.barycenter_sequence(gmp, result.sequences)
        tr = gmp.variables[0].support.transform
        d = bar.dimension
        from .polyalg import AffineMap
        amap = AffineMap(tr.scale[:d], tr.offset[:d])
        write_moments_csv(bar.pushforward_affine(amap.scale, amap.offset),
                          os.path.join(sub, "moments_barycenter.csv"))
        _write_json(os.path.join(sub, "result.json"),
                    _result_payload(result, p=config.p))
        if result.status != R.STATUS_OPTIMAL:
            exit_code = 2
    _meta(outdir, command="barycenter")
    return exit_code


def cmd_export_sdpa(config: RunConfig, outdir):
    orders = config.order_list()
    gmp = config.build_problem(orders[0])
    obj = None
    if gmp.is_quadratic():
        mu_s, nu_s = gmp.metadata["scaled_marginals"]
        init = mu_s.tensor(nu_s, order=min(2 * orders[0], mu_s.order, nu_s.order))
        obj = F.gw_linearize(gmp, init)
    asm = R._assemble(gmp, orders[0], objective_override=obj)
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, f"problem_r{orders[0]}.dat-s")
    export_sdpa(asm.program, path)
    _meta(outdir, command="export-sdpa")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _parser():
    ap = argparse.ArgumentParser(
        prog="momentot",
        description="Optimal transport via truncated moment relaxations")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("solve", "sweep", "support", "gw", "barycenter", "export-sdpa"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--order", type=int)
        sp.add_argument("--orders", help="range a..b")
        sp.add_argument("--eta", type=float)
        sp.add_argument("--grid", help="NxM")
        sp.add_argument("--seed", type=int)
    return ap


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        config = RunConfig.load(args.config)
        if args.order is not None:
            config.order = args.order
            config.orders = None
        if args.orders is not None:
            config.orders = args.orders
        if args.eta is not None:
            config.post["eta"] = args.eta
        if args.grid is not None:
            config.post["grid"] = [int(v) for v in args.grid.lower().split("x")]
        if args.seed is not None:
            config.seed = args.seed
        handler = {
            "solve": cmd_solve,
            "sweep": cmd_sweep,
            "support": cmd_support,
            "gw": cmd_gw,
            "barycenter": cmd_barycenter,
            "export-sdpa": cmd_export_sdpa,
        }[args.command]
        return handler(config, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
