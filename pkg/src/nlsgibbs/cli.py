"""Command-line entry point: ``nlsgibbs <subcommand> [options]``.

Configuration precedence, lowest to highest: built-in defaults, the YAML
file given with ``--config``, ``--set key.path=value`` assignments in the
order given, then dedicated flags (``--seed``, ``--workers``,
``--override``).  With ``--from-manifest`` the recorded configuration,
subcommand and seed are replayed and the other configuration options are
ignored.

Every run writes its outputs and a ``manifest.json`` into ``--out``.

Exit codes: 0 success, 1 invariant failure, 2 configuration fault,
3 numerical fault.
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import datetime as _dt
import hashlib
import json
import logging
import math
import re
import sys
import uuid
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import checks as chk
from . import dynamics as dyn
from . import field as fld
from . import measures as ms
from . import operators as ops
from . import relaxation as rlx
from .errors import ConfigError, NumericalError
from .streams import stream
from .tables import write_table

log = logging.getLogger("nlsgibbs")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

STREAM_SCHEME = "numpy SeedSequence(master_seed, spawn_key=(index,)) -> Philox"

DEFAULTS = {
    "seed": 0,
    "workers": 1,
    "override": False,
    "model": {f.name: f.default for f in dataclasses.fields(fld.ModelParams)},
    "noise": {"s": 0.47, "scale": 1.0},
    "integrator": {f.name: f.default for f in dataclasses.fields(dyn.IntegratorCfg)},
    "chain": {f.name: f.default for f in dataclasses.fields(ms.ChainConfig)},
    "sample": {"kind": "free", "n_samples": 1000, "ell": 64, "n_target": 1.0},
    "evolve": {"dynamics": "nls", "init": "free", "init_file": None, "correction": 0.5},
    "verify": {"suite": "all", "thresholds": {}},
    "sweep": {"lams": [0.0, 0.1, 0.2, 0.3, 0.4], "kappas": [0.5, 0.75, 1.0, 1.25, 1.5], "n_samples": 10_000},
    "relax": {
        "M": 512,
        "inits": ["cold", "hot"],
        "hot_scale": 2.0,
        "observables": ["N", "L4"],
        "n_boot": 400,
        "linear_response": 1.0,
        "model": "auto",
    },
    "fdm": {
        "n_modes": 1,
        "nu": [1.0],
        "s": 0.47,
        "r": 2.0,
        "lam": 0.0,
        "v_scale": 1.0,
        "beta": 1.0,
        "hermite_cut": 30,
        "n_eigs": 10,
        "t": [0.5, 1.0, 2.0],
    },
}

# sections whose keys are free-form
_OPEN_SECTIONS = {"verify.thresholds"}

STREAMS = {
    "sample": {"sampler": 0},
    "evolve": {"init": 0, "dynamics": 1},
    "verify": {"checks": "per-check fixed indices"},
    "sweep": {"cell (i, j)": "i * n_kappas + j"},
    "relax": {"equilibrium pool": 0, "ensemble for init i": "1 + i", "bootstrap for fit j": "100 + j"},
    "fdm": {},
}


# --------------------------------------------------------------- configuration


class Config(dict):
    """Resolved configuration plus the YAML line of every key read from file."""

    lines: dict

    def where(self, path):
        line = self.lines.get(path)
        return f" (line {line})" if line else ""


def _line_map(node, prefix="", out=None):
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = f"{prefix}{k.value}"
            out[path] = k.start_mark.line + 1
            _line_map(v, path + ".", out)
    return out


_FLOAT = re.compile(r"^[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?$")


def _coerce(v):
    """YAML 1.1 reads ``1e-3`` as a string; treat such strings as floats."""
    if isinstance(v, dict):
        return {k: _coerce(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_coerce(x) for x in v]
    if isinstance(v, str) and _FLOAT.match(v.strip()):
        return float(v)
    return v


_ALIASES = {"model.lambda": "model.lam"}


def _merge(base, extra, lines, prefix=""):
    for key, val in extra.items():
        path = f"{prefix}{key}"
        if path in _ALIASES:
            if path in lines:
                lines.setdefault(_ALIASES[path], lines[path])
            path = _ALIASES[path]
            key = path.rsplit(".", 1)[1]
        if key not in base and prefix.rstrip(".") not in _OPEN_SECTIONS:
            line = lines.get(path)
            raise ConfigError(f"unknown key '{path}'" + (f" (line {line})" if line else ""))
        if isinstance(base.get(key), dict) and path not in _OPEN_SECTIONS:
            if not isinstance(val, dict):
                raise ConfigError(f"'{path}' must be a mapping" + (f" (line {lines[path]})" if path in lines else ""))
            _merge(base[key], val, lines, path + ".")
        elif isinstance(base.get(key), dict):
            if not isinstance(val, dict):
                raise ConfigError(f"'{path}' must be a mapping")
            base[key].update(val)
        else:
            base[key] = val


def load_config(path=None, assignments=(), base=None):
    """Defaults overlaid with a YAML file and ``key.path=value`` assignments."""
    cfg = Config(copy.deepcopy(base if base is not None else DEFAULTS))
    cfg.lines = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        try:
            node = yaml.compose(text)
            data = yaml.safe_load(text)
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
            raise ConfigError(f"invalid YAML in {path}{where}: {getattr(e, 'problem', e)}") from e
        if data is not None:
            if not isinstance(data, dict):
                raise ConfigError(f"{path}: top level must be a mapping")
            cfg.lines = _line_map(node)
            _merge(cfg, _coerce(data), cfg.lines)
    for item in assignments:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as e:
            raise ConfigError(f"--set {key}: cannot parse value {raw!r}") from e
        tree = value
        for part in reversed(key.split(".")):
            tree = {part: tree}
        _merge(cfg, _coerce(tree), {})
    return cfg


def _build(cfg, section, factory):
    """Construct ``factory(cfg[section])``, attaching YAML lines to failures."""
    try:
        return factory(cfg[section])
    except (ConfigError, TypeError, ValueError) as e:
        msg = str(e)
        line = ""
        for key in cfg[section]:
            if key in msg or (key == "lam" and "lambda" in msg):
                line = cfg.where(f"{section}.{key}") or cfg.where(f"{section}.lambda")
                if line:
                    break
        raise ConfigError(f"{section}: {msg}{line or cfg.where(section)}") from e


def model_params(cfg):
    return _build(cfg, "model", fld.ModelParams.from_dict)


def noise_spec(cfg, params):
    return _build(cfg, "noise", lambda d: dyn.make_noise(params, float(d["s"]), float(d["scale"]), bool(cfg["override"])))


def integrator_cfg(cfg):
    return _build(cfg, "integrator", lambda d: dyn.IntegratorCfg(**d))


def chain_cfg(cfg):
    return _build(cfg, "chain", ms.ChainConfig.from_dict)


def _check_ggc(cfg, params):
    try:
        params.check_ggc()
    except ConfigError as e:
        raise ConfigError(f"model: {e}{cfg.where('model.kappa') or cfg.where('model')}") from e


def _positive_int(cfg, path):
    sec, key = path.split(".")
    v = cfg[sec][key]
    if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
        raise ConfigError(f"{path} must be a positive integer, got {v!r}{cfg.where(path)}")
    return int(v)


def _choice(cfg, path, options):
    sec, key = path.split(".")
    v = cfg[sec][key]
    if v not in options:
        raise ConfigError(f"{path} must be one of {sorted(options)}, got {v!r}{cfg.where(path)}")
    return v


def _resolved(cfg, command):
    """The configuration record stored in the manifest: global keys plus the sections used."""
    used = {
        "sample": ("model", "chain", "sample"),
        "evolve": ("model", "noise", "integrator", "evolve"),
        "verify": ("verify",),
        "sweep": ("model", "sweep"),
        "relax": ("model", "noise", "integrator", "chain", "relax"),
        "fdm": ("fdm",),
    }[command]
    out = {k: copy.deepcopy(cfg[k]) for k in ("seed", "workers", "override")}
    for sec in used:
        out[sec] = copy.deepcopy(cfg[sec])
    return out


# -------------------------------------------------------------------- outputs


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, command, cfg, files, extra=None):
    out_dir = Path(out_dir)
    manifest = {
        "run_id": uuid.uuid4().hex,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "command": command,
        "code_version": __version__,
        "master_seed": int(cfg["seed"]),
        "streams": {"scheme": STREAM_SCHEME, "assignment": STREAMS[command]},
        "override": bool(cfg["override"]),
        "config": _resolved(cfg, command),
        "outputs": [{"path": f, "sha256": _sha256(out_dir / f), "bytes": (out_dir / f).stat().st_size} for f in files],
    }
    if extra:
        manifest["summary"] = extra
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, default=_jsonable)
        fh.write("\n")
    return manifest


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not serializable: {type(v)}")


def verify_manifest(path):
    """Return the output entries whose digest no longer matches the file on disk."""
    path = Path(path)
    m = json.loads(path.read_text(encoding="utf-8"))
    bad = []
    for entry in m["outputs"]:
        f = path.parent / entry["path"]
        if not f.exists() or _sha256(f) != entry["sha256"]:
            bad.append(entry["path"])
    return bad


# ----------------------------------------------------------------- subcommands


def cmd_sample(cfg, out):
    kind = _choice(cfg, "sample.kind", {"free", "ggc", "canonical"})
    params = model_params(cfg)
    seed = int(cfg["seed"])
    rng = stream(seed, 0)
    summary = {"kind": kind}
    if kind == "free":
        n = _positive_int(cfg, "sample.n_samples")
        c = ms.sample_free(rng, params, n)
    else:
        ccfg = chain_cfg(cfg)
        if kind == "ggc":
            _check_ggc(cfg, params)
            res = ms.sample_ggc(rng, params, ccfg)
        else:
            fej = _build(cfg, "sample", lambda d: ms.FejerSpec(int(d["ell"]), float(d["n_target"])))
            res = ms.sample_conditioned(rng, fej, params, ccfg)
        c = res.samples
        summary["acceptance"] = res.acceptance
    fld.write_binary(out / "samples.bin", [fld.SpectralField(x, params.L) for x in c])
    rows = ({"index": i, "N": float(a), "L4": float(b)}
            for i, (a, b) in enumerate(zip(fld.l2_norm_sq(c), fld.lp_norm_p(c, 4, params.L))))
    write_table(out / "samples.csv", rows, ["index", "N", "L4"])
    summary["n_records"] = int(c.shape[0])
    return ["samples.bin", "samples.csv"], summary, EXIT_OK


def cmd_evolve(cfg, out):
    kind = _choice(cfg, "evolve.dynamics", {"nls", "ggc_sde", "canonical_sde"})
    params = model_params(cfg)
    icfg = integrator_cfg(cfg)
    seed = int(cfg["seed"])
    ev = cfg["evolve"]
    if kind == "nls":
        stepper = dyn.nls_stepper(params)
    else:
        noise = noise_spec(cfg, params)
        _build(cfg, "integrator", lambda d: icfg.check(params, noise))
        if kind == "ggc_sde":
            _check_ggc(cfg, params)
            stepper = dyn.ggc_stepper(params, noise, icfg.scheme)
        else:
            stepper = dyn.canonical_stepper(params, noise, None, float(ev["correction"]))
    if ev["init_file"]:
        fields, _ = fld.read_binary(ev["init_file"])
        c0 = fields[0].coeffs
        if c0.size != 2 * params.K + 1:
            raise ConfigError(f"evolve.init_file holds K={(c0.size - 1) // 2}, model has K={params.K}")
    else:
        init = _choice(cfg, "evolve.init", {"free", "zero"})
        c0 = ms.sample_free(stream(seed, 0), params, 1)[0] if init == "free" else np.zeros(2 * params.K + 1, complex)
    if kind == "canonical_sde" and not fld.l2_norm_sq(c0) > 0:
        raise ConfigError("canonical_sde needs a nonzero initial field")
    tr = dyn.trajectory(c0, stepper, icfg, params=params, rng=stream(seed, 1))
    tr.to_csv(out / "trajectory.csv")
    fld.write_binary(out / "final.bin", [fld.SpectralField(np.asarray(tr.final), params.L)])
    n = tr["N"]
    summary = {"dynamics": kind, "T": float(tr.t[-1]), "max_rel_dN": float(np.max(np.abs(n / n[0] - 1)))}
    return ["trajectory.csv", "final.bin"], summary, EXIT_OK


def cmd_verify(cfg, out):
    suite = cfg["verify"]["suite"]
    try:
        selected = chk.checks_for(suite)
    except KeyError:
        raise ConfigError(f"verify.suite must be 'all' or one of {list(chk.SUITES)}, got {suite!r}{cfg.where('verify.suite')}")
    names = {c.name for c in chk.REGISTRY}
    thresholds = cfg["verify"]["thresholds"] or {}
    for name, val in thresholds.items():
        if name not in names:
            raise ConfigError(f"unknown check '{name}' in verify.thresholds{cfg.where('verify.thresholds.' + name)}")
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            raise ConfigError(f"threshold for '{name}' must be a number{cfg.where('verify.thresholds.' + name)}")
    rows = [c.run(int(cfg["seed"]), thresholds.get(c.name)) for c in selected]
    write_table(out / "report.csv", rows, ["suite", "name", "statistic", "comparison", "threshold", "pass"])
    failed = [r["name"] for r in rows if not r["pass"]]
    for r in rows:
        log.info("%-9s %-28s %-6s %.4g %s %.4g", r["suite"], r["name"], "PASS" if r["pass"] else "FAIL",
                 r["statistic"], r["comparison"], r["threshold"])
    summary = {"n_checks": len(rows), "failed": failed}
    return ["report.csv"], summary, EXIT_FAIL if failed else EXIT_OK


def _sweep_cell(args):
    params, n, seed, index = args
    est = ms.estimate_log_partition(params, n, stream(seed, index))
    return est.log_z, est.stderr, est.ess


def _pool_map(func, tasks, workers):
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(func, tasks))
    return [func(t) for t in tasks]


def cmd_sweep(cfg, out):
    params = model_params(cfg)
    sw = cfg["sweep"]
    lams = np.asarray(sw["lams"], float).ravel()
    kappas = np.asarray(sw["kappas"], float).ravel()
    n = _positive_int(cfg, "sweep.n_samples")
    if lams.size == 0 or kappas.size == 0:
        raise ConfigError("sweep.lams and sweep.kappas must be non-empty")
    tasks = []
    for i, lam in enumerate(lams):
        for j, kap in enumerate(kappas):
            p = _build(cfg, "model", lambda d: params.replace(lam=float(lam), kappa=float(kap)))
            _check_ggc(cfg, p)
            tasks.append((p, n, int(cfg["seed"]), i * kappas.size + j))
    res = np.array(_pool_map(_sweep_cell, tasks, int(cfg["workers"])))
    shape = (lams.size, kappas.size)
    table = ms.SweepTable(lams, kappas, res[:, 0].reshape(shape), res[:, 1].reshape(shape),
                          res[:, 2].reshape(shape), params.beta)
    rows = [{**row, "seed": task[2], "stream": task[3]} for row, task in zip(table.rows(), tasks)]
    write_table(out / "sweep.csv", rows)
    summary = {"cells": len(tasks)}
    if min(shape) >= 3:
        summary["max_second_difference_ratio"] = table.max_smoothness_ratio()
    return ["sweep.csv"], summary, EXIT_OK


def _relax_init(name, params, scale):
    if name == "cold":
        return lambda rng, M: np.zeros((M, 2 * params.K + 1), complex)
    if name == "hot":
        return lambda rng, M: scale * ms.sample_free(rng, params, M)
    raise ConfigError(f"unknown relax init {name!r}; use 'cold' or 'hot'")


def _relax_task(args):
    name, index, params, noise, icfg, ccfg, rc, seed = args
    obs_all = {"N": fld.l2_norm_sq, "L4": lambda c: fld.lp_norm_p(c, 4, params.L)}
    obs = {k: obs_all[k] for k in rc["observables"]}
    M = int(rc["M"])
    pool = _equilibrium_pool(params, ccfg, M, seed)

    def ref(rng, m):
        return pool[rng.permutation(len(pool))[:m]]

    return rlx.run_ensemble(_relax_init(name, params, float(rc["hot_scale"])),
                            dyn.ggc_stepper(params, noise, icfg.scheme), icfg, obs, M,
                            stream(seed, 1 + index), name, reference_sampler=ref)


def _equilibrium_pool(params, ccfg, M, seed):
    per = dataclasses.replace(ccfg, n_chains=math.ceil(M / ccfg.n_keep))
    return ms.sample_ggc(stream(seed, 0), params, per).samples


def cmd_relax(cfg, out):
    params = model_params(cfg)
    _check_ggc(cfg, params)
    noise = noise_spec(cfg, params)
    icfg = integrator_cfg(cfg)
    _build(cfg, "integrator", lambda d: icfg.check(params, noise))
    ccfg = chain_cfg(cfg)
    rc = cfg["relax"]
    M = _positive_int(cfg, "relax.M")
    if M < rlx.MIN_MEMBERS:
        raise ConfigError(f"relax.M must be at least {rlx.MIN_MEMBERS}, got {M}{cfg.where('relax.M')}")
    for o in rc["observables"]:
        if o not in ("N", "L4"):
            raise ConfigError(f"relax.observables: unknown observable {o!r}{cfg.where('relax.observables')}")
    for name in rc["inits"]:
        _relax_init(name, params, 1.0)
    _choice(cfg, "relax.model", {"single", "double", "auto"})
    seed = int(cfg["seed"])
    tasks = [(name, i, params, noise, icfg, ccfg, rc, seed) for i, name in enumerate(rc["inits"])]
    ensembles = _pool_map(_relax_task, tasks, int(cfg["workers"]))
    fits, long_rows = [], []
    j = 0
    for st in ensembles:
        long_rows.extend(st.long_rows())
        for o in rc["observables"]:
            fits.append(rlx.fit_rate(st, o, "coupled", n_boot=int(rc["n_boot"]), rng=stream(seed, 100 + j),
                                     linear_response=rc["linear_response"], model=rc["model"]))
            j += 1
    rlx.write_fits(out / "rates.csv", fits)
    write_table(out / "ensemble_long.csv", long_rows)
    summary = {"fits": [f.row() for f in fits]}
    return ["rates.csv", "ensemble_long.csv"], summary, EXIT_OK


def cmd_fdm(cfg, out):
    fc = cfg["fdm"]
    s = float(fc["s"])
    if not (dyn.S_WINDOW[0] < s < dyn.S_WINDOW[1]) and not cfg["override"]:
        raise ConfigError(f"fdm.s={s} outside window (7/16, 1/2); pass --override to explore{cfg.where('fdm.s')}")
    keys = ("n_modes", "nu", "s", "r", "lam", "v_scale", "beta", "hermite_cut")
    model = _build(cfg, "fdm", lambda d: ops.FdModel(**{k: (tuple(d[k]) if k == "nu" else d[k]) for k in keys}))
    n_eigs = _positive_int(cfg, "fdm.n_eigs")
    ev = ops.fd_spectrum(model)
    e0 = float(ev[0])
    spec_rows = ({"index": i, "eigenvalue": float(e), "shifted": float(e - e0)} for i, e in enumerate(ev[:n_eigs]))
    write_table(out / "spectrum.csv", spec_rows, ["index", "eigenvalue", "shifted"])
    gap = float(ev[1] - ev[0])
    rows = [{"quantity": "E0", "t": "", "value": e0}, {"quantity": "gap", "t": "", "value": gap}]
    dominated = True
    for t in fc["t"]:
        tr = ops.fd_trace(model, float(t))
        gt = ops.fd_golden_thompson(model, float(t))
        dominated &= gt >= tr
        rows.append({"quantity": "trace", "t": float(t), "value": tr})
        rows.append({"quantity": "golden_thompson_bound", "t": float(t), "value": gt})
    write_table(out / "summary.csv", rows, ["quantity", "t", "value"])
    summary = {"gap": gap, "E0": e0, "bound_dominates": bool(dominated)}
    return ["spectrum.csv", "summary.csv"], summary, EXIT_OK if gap > 0 and dominated else EXIT_FAIL


COMMANDS = {
    "sample": cmd_sample,
    "evolve": cmd_evolve,
    "verify": cmd_verify,
    "sweep": cmd_sweep,
    "relax": cmd_relax,
    "fdm": cmd_fdm,
}

# positional shortcuts: ``nlsgibbs sample ggc`` sets sample.kind
_POSITIONAL = {"sample": "sample.kind", "evolve": "evolve.dynamics", "verify": "verify.suite"}


# ------------------------------------------------------------------------ main


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="YAML configuration file")
    common.add_argument("--set", dest="assign", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration value, e.g. model.K=16 (repeatable)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--workers", type=int, help="worker processes for sweep and relax")
    common.add_argument("--override", action="store_true",
                        help="allow noise exponents outside the integrability window (recorded in the manifest)")
    common.add_argument("-o", "--out", default="nlsgibbs-out", help="output directory (default: %(default)s)")
    common.add_argument("--from-manifest", help="replay the run recorded in a manifest")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="nlsgibbs", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("sample", parents=[common], help="draw free, grand-canonical or canonical samples").add_argument(
        "kind", nargs="?", choices=["free", "ggc", "canonical"])
    sub.add_parser("evolve", parents=[common], help="integrate NLS or one of the stochastic flows").add_argument(
        "dynamics", nargs="?", choices=["nls", "ggc_sde", "canonical_sde"])
    sub.add_parser("verify", parents=[common], help="run the invariant checks").add_argument(
        "suite", nargs="?", choices=["all", *chk.SUITES])
    sub.add_parser("sweep", parents=[common], help="log-partition function on a (lambda, kappa) grid")
    sub.add_parser("relax", parents=[common], help="relaxation rates from cold and hot ensembles")
    sub.add_parser("fdm", parents=[common], help="finite-dimensional operator spectrum and trace bounds")
    return parser


def resolve(args):
    """Configuration and subcommand from parsed arguments."""
    if args.from_manifest:
        try:
            m = json.loads(Path(args.from_manifest).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read manifest {args.from_manifest}: {e}") from e
        if m.get("command") != args.command:
            raise ConfigError(f"manifest records '{m.get('command')}', not '{args.command}'")
        cfg = load_config(None)
        _merge(cfg, m["config"], {})
        return cfg
    cfg = load_config(args.config, args.assign)
    for attr in ("kind", "dynamics", "suite"):
        val = getattr(args, attr, None)
        if val is not None:
            sec, key = _POSITIONAL[args.command].split(".")
            cfg[sec][key] = val
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.workers is not None:
        cfg["workers"] = args.workers
    if args.override:
        cfg["override"] = True
    if isinstance(cfg["seed"], bool) or not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError(f"seed must be a non-negative integer{cfg.where('seed')}")
    if isinstance(cfg["workers"], bool) or not isinstance(cfg["workers"], int) or cfg["workers"] < 1:
        raise ConfigError(f"workers must be a positive integer{cfg.where('workers')}")
    return cfg


def run(argv=None):
    """Parse ``argv``, execute the subcommand and return the exit code."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        files, summary, code = COMMANDS[args.command](cfg, out)
        write_manifest(out, args.command, cfg, files, summary)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    status = {EXIT_OK: "ok", EXIT_FAIL: "invariant failure"}[code]
    print(f"{args.command}: {status}; outputs in {out}")
    return code


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
