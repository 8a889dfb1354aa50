"""Command-line entry point: ``decigibbs <subcommand> ...``.

Every run that writes files also writes a manifest (resolved parameters,
seed, build, output hashes) next to them; ``decigibbs replay`` reruns the
manifest and checks the outputs byte for byte.

Parameter precedence, lowest first: built-in defaults, ``--config`` TOML
file, the ``DECIGIBBS_SEED`` environment variable (seed only), explicit flags.

Exit codes: 0 success, 2 usage error, 1 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import shutil
import subprocess
import sys
import tempfile
import time
from pathlib import Path
from typing import Callable, Sequence

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

import numpy as np

from . import __version__

SEED_ENV = "DECIGIBBS_SEED"

# option name -> default, per subcommand; None means "required or optional without default"
DEFAULTS: dict[str, dict] = {
    "kernel": {"box": None, "shape": None, "beta": 0.0, "h": 0.0, "bc": "+"},
    "sample": {
        "beta": 0.5, "h": 0.0, "n": 8, "bc": "+", "seed": 0, "sweeps": 4096, "burn_in": 512,
        "thin": 1, "init": "boundary", "algorithm": "heatbath", "observables": "magnetization,sigma0",
    },
    "decimate": {"in": None},
    "probe-discontinuity": {
        "beta": 1.0, "pattern": "alternating", "windows": "16,32,48", "field": None, "seed": 0,
        "sweeps": 20000, "burn_in": 2000, "z": 5.0,
    },
    "potential": {
        "mode": "exact", "site": "0,0", "mmax": 2, "field": None, "beta": 0.6, "h": 0.0,
        "window": None, "seed": 0, "sweeps": 4096, "burn_in": 512,
    },
    "amoeba-census": {
        "beta": 1.0, "lambda": 0.25, "samples": 100, "n": 16, "bins": "0,2,4,8,16", "seed": 0,
        "sweeps_between": 16, "burn_in": 512,
    },
    "qcd": {
        "beta": 1.2, "fields": 5, "mmax": 8, "lambda": 0.25, "image_half": 12, "seed": 0,
        "proxy_sweeps": 2048, "sweeps": 4096, "burn_in": 512,
    },
    "entropy": {
        "mode": "ks", "beta": 0.0, "bc": "+", "beta_nu": None, "bc_nu": "+", "k": "1,2,3",
        "n": 8, "samples": 2000, "seed": 0, "burn_in": 512, "thin": 1,
    },
}

# outputs that are directories rather than single files
DIR_OUTPUT = {"qcd"}


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# formatting helpers


def fmt(v) -> str:
    """Round-trip text for numbers, plain text for everything else."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v) + 0.0)  # folds -0.0 into 0.0
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return str(v)


def csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"decigibbs-{__version__}"


def parse_ints(text: str) -> list[int]:
    try:
        return [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from exc


def parse_bc(token: str):
    from .lattice import Boundary

    try:
        return Boundary.parse(token)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


# --------------------------------------------------------------------------
# run context


class Run:
    """Resolved parameters plus the output location of one invocation."""

    def __init__(self, command: str, params: dict, out: str | None, force: bool):
        self.command = command
        self.params = params
        self.out = Path(out) if out else None
        self.force = force
        self.files: list[Path] = []

    def prepare(self) -> None:
        if self.out is None:
            return
        targets = [self.out]
        if self.command not in DIR_OUTPUT:
            targets.append(manifest_path(self.command, self.out))
        for t in targets:
            if t.exists() and not self.force:
                raise FileExistsError(f"{t} exists; pass --force to overwrite")
        if self.command in DIR_OUTPUT:
            if self.out.exists() and self.force:
                shutil.rmtree(self.out) if self.out.is_dir() else self.out.unlink()
            self.out.mkdir(parents=True)

    def write(self, name: str | None, text: str) -> None:
        """Write to ``--out`` (or a file inside it) or to stdout when no output is given."""
        if self.out is None:
            sys.stdout.write(text)
            return
        path = self.out / name if self.command in DIR_OUTPUT else self.out
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        self.files.append(path)


def manifest_path(command: str, out: Path) -> Path:
    if command in DIR_OUTPUT:
        return out / "manifest.json"
    return out.with_name(out.name + ".manifest.json")


def canonical_argv(command: str, params: dict) -> list[str]:
    argv = [command]
    for k, v in params.items():
        if v is None:
            continue
        argv += [f"--{k.replace('_', '-')}", fmt(v)]
    return argv


def write_manifest(run: Run, started: float, inputs: dict) -> Path:
    mpath = manifest_path(run.command, run.out)
    base = run.out if run.command in DIR_OUTPUT else run.out.parent
    data = {
        "command": run.command,
        "params": run.params,
        "argv": canonical_argv(run.command, run.params),
        "seeds": {"seed": run.params.get("seed")},
        "build": git_describe(),
        "version": __version__,
        "inputs": inputs,
        "outputs": {os.path.relpath(p, base): sha256(p) for p in run.files},
        "wall_clock_seconds": time.time() - started,
    }
    mpath.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return mpath


# --------------------------------------------------------------------------
# subcommands


def cmd_kernel(run: Run) -> dict:
    from .lattice import Box, Site
    from .spec_engine import IsingParams, kernel_exact

    p = run.params
    if (p["box"] is None) == (p["shape"] is None):
        raise UsageError("give exactly one of --box or --shape")
    if p["box"] is not None:
        sites = Box(int(p["box"])).sites
    else:
        try:
            w, h = (int(t) for t in str(p["shape"]).lower().split("x"))
        except ValueError as exc:
            raise UsageError("--shape must look like WxH") from exc
        sites = tuple(sorted(Site(x, y) for x in range(w) for y in range(h)))
    table = kernel_exact(sites, parse_bc(p["bc"]), IsingParams(float(p["beta"]), float(p["h"])))
    rows = [(idx, float(pr)) for idx, pr in enumerate(table.probs)]
    run.write("kernel.csv", csv_text(["config", "probability"], rows))
    return {}


def _observables(names: str, box):
    from .sampler import magnetization, spin_at

    out = []
    for name in str(names).split(","):
        name = name.strip()
        if name == "magnetization":
            out.append(magnetization(box))
        elif name == "sigma0":
            out.append(spin_at(box, (0, 0), "sigma0"))
        elif name:
            raise UsageError(f"unknown observable {name!r}")
    return out


def cmd_sample(run: Run) -> dict:
    from .lattice import Box
    from .sampler import ChainConfig, FrozenMask, iter_snapshots
    from .spec_engine import IsingParams

    p = run.params
    box = Box(int(p["n"]))
    frozen = FrozenMask.of({(int(a), int(b)): int(v) for a, b, v in p.get("frozen") or []})
    cfg = ChainConfig(
        IsingParams(float(p["beta"]), float(p["h"])), box, parse_bc(p["bc"]), frozen, int(p["seed"]),
        int(p["sweeps"]), int(p["burn_in"]), int(p["thin"]), str(p["init"]),
    )
    obs = _observables(p["observables"], box)
    rows = []
    epoch = cfg.burn_in
    for block in iter_snapshots(cfg, str(p["algorithm"])):
        vals = [fn(block) for _, fn in obs]
        for k in range(block.shape[0]):
            epoch += cfg.thin
            for (name, _), v in zip(obs, vals):
                rows.append((epoch, name, float(v[k])))
    run.write("samples.csv", csv_text(["epoch", "observable", "value"], rows))
    return {}


def cmd_decimate(run: Run) -> dict:
    from .decimation import decimate
    from .lattice import SpinField

    src = Path(run.params["in"])
    field = SpinField.from_text(src.read_text())
    run.write("field.txt", decimate(field).to_text())
    return {str(src.resolve()): sha256(src)}


def _read_field(path):
    from .lattice import SpinField

    return SpinField.from_text(Path(path).read_text())


def cmd_probe(run: Run) -> dict:
    from .analysis import probe_discontinuity

    p = run.params
    source = _read_field(p["field"]) if p["field"] else None
    res = probe_discontinuity(
        float(p["beta"]), str(p["pattern"]), parse_ints(p["windows"]), int(p["seed"]),
        int(p["sweeps"]), int(p["burn_in"]), float(p["z"]), source,
    )
    rows = [(r.window, r.bc, r.p_plus, r.stderr) for r in res.rows]
    run.write("probe.csv", csv_text(["window", "bc", "p_plus", "stderr"], rows))
    return {str(Path(p["field"]).resolve()): sha256(p["field"])} if p["field"] else {}


def cmd_potential(run: Run) -> dict:
    from .lattice import Site
    from .potential import DecimatedSource, telescoped_term, telescoped_term_mc
    from .spec_engine import IsingParams

    p = run.params
    if not p["field"]:
        raise UsageError("--field is required")
    image = _read_field(p["field"])
    omega = image.as_dict()
    xy = parse_ints(p["site"])
    if len(xy) != 2:
        raise UsageError("--site must be x,y")
    i = Site(*xy)
    params = IsingParams(float(p["beta"]), float(p["h"]))
    mmax = int(p["mmax"])
    rows = []
    if p["mode"] == "exact":
        window = int(p["window"]) if p["window"] is not None else 4
        src = DecimatedSource(params, window)
        for m in range(mmax + 1):
            rows.append((f"{i.x};{i.y}", m, telescoped_term(i, m, omega, src), 0.0))
    elif p["mode"] == "mc":
        window = int(p["window"]) if p["window"] is not None else 2 * image.box.n
        for m in range(1, mmax + 1):
            t = telescoped_term_mc(i, m, omega, params, window, int(p["seed"]), int(p["sweeps"]), int(p["burn_in"]))
            rows.append((f"{i.x};{i.y}", m, t.value, t.stderr))
    else:
        raise UsageError("--mode must be exact or mc")
    run.write("psi.csv", csv_text(["i", "m", "value", "stderr"], rows))
    return {str(Path(p["field"]).resolve()): sha256(p["field"])}


def cmd_census(run: Run) -> dict:
    from .amoeba import amoeba_census
    from .lattice import Boundary, Box, SpinField
    from .sampler import ChainConfig, iter_snapshots
    from .spec_engine import IsingParams

    p = run.params
    box = Box(int(p["n"]))
    n_samples = int(p["samples"])
    thin = int(p["sweeps_between"])
    burn = int(p["burn_in"])
    cfg = ChainConfig(
        IsingParams(float(p["beta"])), box, Boundary.plus(), seed=int(p["seed"]),
        sweeps=burn + n_samples * thin, burn_in=burn, thin=thin,
    )
    fields = []
    for block in iter_snapshots(cfg):
        fields.extend(SpinField(box, s[1:-1, 1:-1], Boundary.plus()) for s in block)
    table = amoeba_census(fields, float(p["lambda"]), parse_ints(p["bins"]))
    rows = [(r.lo, r.hi, r.compatible, r.benign, r.fraction) for r in table]
    run.write("census.csv", csv_text(["diam_lo", "diam_hi", "compatible", "benign", "fraction"], rows))
    return {}


def cmd_qcd(run: Run) -> dict:
    from .analysis import qcd_pipeline

    p = run.params
    rows = qcd_pipeline(
        float(p["beta"]), int(p["fields"]), int(p["mmax"]), float(p["lambda"]), int(p["seed"]),
        int(p["image_half"]), int(p["proxy_sweeps"]), int(p["sweeps"]), int(p["burn_in"]),
    )
    terms, fits = [], []
    for r in rows:
        for t in r.terms:
            terms.append((r.field_index, r.site.x, r.site.y, t.m, t.value, t.stderr, t.status, t.n_active))
        f = r.fit
        fits.append((
            r.field_index, r.site.x, r.site.y, r.quenched.family, str(r.quenched),
            *(("", "", "", "", "", "") if f is None else (f.C1, f.C2, f.lam, f.lam_stderr, f.accepted, f.significant)),
            r.status,
        ))
    run.write("terms.csv", csv_text(["field", "i_x", "i_y", "m", "value", "stderr", "status", "n_active"], terms))
    run.write("fits.csv", csv_text(
        ["field", "i_x", "i_y", "family", "l_i", "C1", "C2", "lambda", "lambda_stderr", "accepted", "significant", "status"],
        fits,
    ))
    return {}


def _phase_samples(beta, bc, n, samples, seed, burn_in, thin):
    from .lattice import Box
    from .sampler import ChainConfig, iter_snapshots
    from .spec_engine import IsingParams

    cfg = ChainConfig(
        IsingParams(float(beta)), Box(int(n)), parse_bc(bc), seed=int(seed),
        sweeps=int(burn_in) + int(samples) * int(thin), burn_in=int(burn_in), thin=int(thin),
    )
    return np.concatenate([b[:, 1:-1, 1:-1] for b in iter_snapshots(cfg)])


def cmd_entropy(run: Run) -> dict:
    from .analysis import ks_entropy, relative_entropy_density
    from .potential import derive_seed

    p = run.params
    seed = int(p["seed"])
    mu = _phase_samples(p["beta"], p["bc"], p["n"], p["samples"], derive_seed(seed, 0), p["burn_in"], p["thin"])
    rows = []
    if p["mode"] == "ks":
        for k in parse_ints(p["k"]):
            e = ks_entropy(mu, k)
            rows.append((k, e.value, e.n_samples, e.n_blocks))
    elif p["mode"] == "relative":
        beta_nu = p["beta"] if p["beta_nu"] is None else p["beta_nu"]
        nu = _phase_samples(beta_nu, p["bc_nu"], p["n"], p["samples"], derive_seed(seed, 1), p["burn_in"], p["thin"])
        for k in parse_ints(p["k"]):
            e = relative_entropy_density(mu, nu, k)
            rows.append((k, e.value, e.n_samples, e.n_blocks))
    else:
        raise UsageError("--mode must be ks or relative")
    run.write("entropy.csv", csv_text(["k", "value", "n_samples", "n_blocks"], rows))
    return {}


HANDLERS: dict[str, Callable[[Run], dict]] = {
    "kernel": cmd_kernel,
    "sample": cmd_sample,
    "decimate": cmd_decimate,
    "probe-discontinuity": cmd_probe,
    "potential": cmd_potential,
    "amoeba-census": cmd_census,
    "qcd": cmd_qcd,
    "entropy": cmd_entropy,
}


# --------------------------------------------------------------------------
# parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="decigibbs", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"decigibbs {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(list(DEFAULTS) + ["replay"]) + "}")
    for name, defaults in DEFAULTS.items():
        sp = sub.add_parser(name)
        for key in defaults:
            sp.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None)
        sp.add_argument("--config", default=None, help="TOML file with parameter values")
        sp.add_argument("--out", default=None, help="output path (directory for qcd)")
        sp.add_argument("--force", action="store_true", help="overwrite existing outputs")
        sp.add_argument("--threads", type=int, default=None, help="worker threads for compiled kernels")
    rp = sub.add_parser("replay")
    rp.add_argument("manifest")
    return parser


def resolve(command: str, ns: argparse.Namespace) -> dict:
    params = dict(DEFAULTS[command])
    if ns.config:
        with open(ns.config, "rb") as fh:
            cfg = tomllib.load(fh)
        for k, v in cfg.items():
            key = k.replace("-", "_")
            if key not in params and key != "frozen":
                raise UsageError(f"unknown config key {k!r}")
            params[key] = v
    if "seed" in params and os.environ.get(SEED_ENV):
        params["seed"] = int(os.environ[SEED_ENV])
    for k, default in DEFAULTS[command].items():
        v = getattr(ns, k)
        if v is None:
            continue
        if isinstance(default, (int, float)):
            try:
                v = type(default)(v)
            except ValueError as exc:
                raise UsageError(f"--{k.replace('_', '-')} expects a number, got {v!r}") from exc
        params[k] = v
    return params


def _set_threads(n: int | None) -> None:
    if not n:
        return
    import numba

    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def run_command(command: str, params: dict, out: str | None, force: bool) -> Run:
    run = Run(command, params, out, force)
    run.prepare()
    started = time.time()
    inputs = HANDLERS[command](run)
    if run.out is not None:
        write_manifest(run, started, inputs)
    return run


def replay(manifest_file: str) -> int:
    mpath = Path(manifest_file)
    data = json.loads(mpath.read_text())
    command = data["command"]
    if command not in HANDLERS:
        raise UsageError(f"manifest names unknown command {command!r}")
    for src, digest in data.get("inputs", {}).items():
        if not Path(src).exists() or sha256(Path(src)) != digest:
            print(f"input changed or missing: {src}", file=sys.stderr)
            return 1
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp) / ("replay" if command in DIR_OUTPUT else "replay.out")
        run = run_command(command, dict(data["params"]), str(out), True)
        base = run.out if command in DIR_OUTPUT else run.out.parent
        got = {os.path.relpath(p, base): sha256(p) for p in run.files}
    want = data["outputs"]
    if command not in DIR_OUTPUT:
        got = dict(zip(want, got.values()))
    ok = got == want
    for name in sorted(set(want) | set(got)):
        status = "identical" if want.get(name) == got.get(name) else "DIFFERS"
        print(f"{name}: {status}")
    return 0 if ok else 1


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if ns.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        if ns.command == "replay":
            return replay(ns.manifest)
        _set_threads(ns.threads)
        params = resolve(ns.command, ns)
        run_command(ns.command, params, ns.out, ns.force)
        return 0
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"decigibbs: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError) as exc:
        print(f"decigibbs: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
