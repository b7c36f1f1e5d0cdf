"""Batch experiment runner: JSON configs, strict validation, deterministic
CSV/binary artifacts plus a manifest that makes every number reproducible.

Commands: exact | thermo | sample | young | fk-diagnose | equivalence.
Identical config + seed produces byte-identical CSV outputs; wall time and
environment notes live only in the manifest.
"""

from __future__ import annotations

import argparse
import json
import math
import struct
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .energy import BOUNDARIES, ModelParams
from .lattice import BlockPartition, SpinConfig, TorusLattice

COMMANDS = ("exact", "thermo", "sample", "young", "fk-diagnose", "equivalence")

_MODEL_KEYS = {"dim", "side", "beta", "gamma", "h", "boundary", "u_profile", "alpha_profile"}
_RUN_KEYS = {
    "sweeps", "burn_in", "thinning", "seed", "replicas", "dynamics",
    "radii", "box_size", "zeta", "u_grid", "observables", "store_configs",
    "perturbations", "u_target",
}
_OUTPUT_KEYS = {"directory", "formats"}
_PROFILE_KEYS = {"type", "value", "amplitude", "resolution"}


class ConfigError(ValueError):
    pass


def _require(cond: bool, key: str, constraint: str):
    if not cond:
        raise ConfigError(f"config key '{key}': {constraint}")


def _no_unknown(block: dict, allowed: set, where: str):
    for k in block:
        if k not in allowed:
            raise ConfigError(f"unknown config key '{where}.{k}'")


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _parse_profile(spec, where: str) -> dict:
    if isinstance(spec, (int, float)):
        spec = {"type": "constant", "value": float(spec)}
    _require(isinstance(spec, dict), where, "must be a number or an object")
    _no_unknown(spec, _PROFILE_KEYS, where)
    kind = spec.get("type")
    _require(kind in ("constant", "cosine"), f"{where}.type",
             "must be 'constant' or 'cosine'")
    out = {"type": kind, "resolution": int(spec.get("resolution", 1))}
    _require(_is_pow2(out["resolution"]), f"{where}.resolution",
             "must be a power of 2")
    if kind == "constant":
        _require("value" in spec, f"{where}.value", "required for constant profiles")
        out["value"] = float(spec["value"])
    else:
        _require("amplitude" in spec, f"{where}.amplitude",
                 "required for cosine profiles")
        out["amplitude"] = float(spec["amplitude"])
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    model: dict
    run: dict
    output: dict

    def echo(self) -> dict:
        return {
            "command": self.command,
            "model": self.model,
            "run": self.run,
            "output": self.output,
        }


def parse_config(raw: dict, overrides: dict | None = None) -> ExperimentConfig:
    """Validate a config mapping; every failure names the offending key and
    constraint.  `overrides` (CLI flags) replace file keys."""
    _no_unknown(raw, {"command", "model", "run", "output"}, "<top>")
    command = raw.get("command")
    _require(command in COMMANDS, "command", f"must be one of {COMMANDS}")

    model = dict(raw.get("model", {}))
    run = dict(raw.get("run", {}))
    output = dict(raw.get("output", {}))
    for key, val in (overrides or {}).items():
        block, _, name = key.partition(".")
        {"model": model, "run": run, "output": output}[block][name] = val

    _no_unknown(model, _MODEL_KEYS, "model")
    _no_unknown(run, _RUN_KEYS, "run")
    _no_unknown(output, _OUTPUT_KEYS, "output")

    dim = int(model.get("dim", 2))
    _require(dim in (1, 2), "model.dim", "must be 1 or 2")
    side = int(model.get("side", 0)) if "side" in model else None
    if side is not None:
        _require(side >= 2, "model.side", "must be an integer >= 2")
    beta = float(model.get("beta", 1.0))
    _require(beta >= 0, "model.beta", "must be non-negative")
    gamma = model.get("gamma")
    if gamma is not None:
        gamma = float(gamma)
        _require(0 < gamma < 1, "model.gamma", "must lie in (0, 1)")
    h = float(model.get("h", 0.0))
    _require(not (gamma is not None and h != 0.0), "model.h",
             "exclusive with model.gamma")
    boundary = model.get("boundary", "periodic")
    _require(boundary in BOUNDARIES, "model.boundary",
             f"must be one of {BOUNDARIES}")
    parsed_model = {"dim": dim, "side": side, "beta": beta, "gamma": gamma,
                    "h": h, "boundary": boundary}
    for prof_key in ("u_profile", "alpha_profile"):
        if prof_key in model:
            parsed_model[prof_key] = _parse_profile(model[prof_key], f"model.{prof_key}")

    needs_partitions = (
        gamma is not None
        or command in ("young", "fk-diagnose")
        or any(
            parsed_model.get(k, {}).get("resolution", 1) > 1
            for k in ("u_profile", "alpha_profile")
        )
    )
    if needs_partitions and side is not None:
        _require(_is_pow2(side), "model.side",
                 "must be a power of 2 for kernel/partition experiments")
    if gamma is not None and side is not None:
        reach = math.ceil(1.0 / gamma) - 1
        _require(2 * reach + 1 <= side, "model.gamma",
                 f"kernel support wraps: need side >= {2 * reach + 1}")
    if command == "exact" and side is not None:
        _require(side**dim <= 24, "model.side",
                 "exact enumeration is capped at 24 sites")
    if command in ("exact", "sample", "young", "fk-diagnose"):
        _require(side is not None, "model.side", "required for this command")

    run.setdefault("seed", 0)
    run.setdefault("sweeps", 100)
    run.setdefault("thinning", 1)
    run.setdefault("replicas", 1)
    run.setdefault("dynamics", "glauber")
    for key in ("sweeps", "thinning", "replicas", "seed"):
        run[key] = int(run[key])
    if "burn_in" in run and run["burn_in"] is not None:
        run["burn_in"] = int(run["burn_in"])
    _require(run["dynamics"] in ("metropolis", "glauber", "swendsen-wang"),
             "run.dynamics", "unknown dynamics")
    if run["dynamics"] == "swendsen-wang":
        _require(gamma is None, "run.dynamics",
                 "swendsen-wang requires the kernel to be absent")
        _require(h == 0.0, "run.dynamics", "swendsen-wang requires h = 0")
    if "radii" in run:
        run["radii"] = [float(r) for r in run["radii"]]
        if side is not None:
            for r in run["radii"]:
                _require(0 < r <= side / 2, "run.radii",
                         f"radius {r} must lie in (0, side/2]")
    if "box_size" in run:
        run["box_size"] = int(run["box_size"])
        if side is not None:
            _require(side % run["box_size"] == 0, "run.box_size",
                     "must divide model.side")
    if "zeta" in run:
        run["zeta"] = float(run["zeta"])

    output.setdefault("directory", "out")
    output.setdefault("formats", ["csv"])
    for fmt in output["formats"]:
        _require(fmt in ("csv", "binary"), "output.formats",
                 "formats are 'csv' and 'binary'")

    return ExperimentConfig(command=command, model=parsed_model, run=run,
                            output=output)


def load_config(path: str | Path, overrides: dict | None = None) -> ExperimentConfig:
    with open(path) as fh:
        raw = json.load(fh)
    return parse_config(raw, overrides)


# ---------------------------------------------------------------------------
# artifact helpers
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


_SNAP_MAGIC = b"KISN"


def write_snapshot(path: Path, spins: np.ndarray, dim: int, side: int,
                   sweep: int, seed: int) -> None:
    """Binary snapshot: fixed header + packed sign bits."""
    header = _SNAP_MAGIC + struct.pack("<IIQQ", dim, side, sweep, seed)
    bits = np.packbits((spins > 0).astype(np.uint8))
    path.write_bytes(header + bits.tobytes())


def read_snapshot(path: Path):
    blob = Path(path).read_bytes()
    if blob[:4] != _SNAP_MAGIC:
        raise ValueError("not a snapshot file")
    dim, side, sweep, seed = struct.unpack("<IIQQ", blob[4:28])
    n = side**dim
    bits = np.unpackbits(np.frombuffer(blob[28:], dtype=np.uint8))[:n]
    spins = (bits.astype(np.int8) * 2 - 1)
    return spins, {"dim": dim, "side": side, "sweep": sweep, "seed": seed}


def _profile_field(prof: dict, dim: int):
    from .thermo import ProfileField

    if prof["type"] == "constant":
        return ProfileField.constant(dim, prof["value"], prof["resolution"])
    amp = prof["amplitude"]
    return ProfileField.from_function(
        lambda r: amp * math.cos(2 * math.pi * r[0]), dim, prof["resolution"]
    )


def _alpha_site_field(config: ExperimentConfig, lattice: TorusLattice):
    """Per-site alpha: explicit alpha profile, or the Euler-Lagrange field
    of a u profile, or zero."""
    from .thermo import build_curve, el_alpha_of_u

    model = config.model
    if model.get("alpha_profile"):
        prof = _profile_field(model["alpha_profile"], model["dim"])
        cells = prof.flat()
    elif model.get("u_profile"):
        curve = build_curve(model["beta"], model["dim"])
        uprof = _profile_field(model["u_profile"], model["dim"])
        cells = np.array([el_alpha_of_u(float(v), curve) for v in uprof.flat()])
        prof = uprof
    else:
        return np.zeros(lattice.site_count)
    res = prof.resolution
    _require(lattice.side % res == 0, "model.*_profile.resolution",
             "must divide model.side")
    part = BlockPartition(lattice, lattice.side // res)
    return cells[part.block_of_site]


def _build_params(config: ExperimentConfig) -> ModelParams:
    from .kernel import build_kernel

    m = config.model
    lattice = TorusLattice(m["dim"], m["side"])
    if m["gamma"] is not None:
        kernel = build_kernel(m["gamma"], lattice)
        alpha = _alpha_site_field(config, lattice)
        return ModelParams(beta=m["beta"], lattice=lattice, kernel=kernel,
                           alpha_field=alpha, boundary=m["boundary"])
    return ModelParams(beta=m["beta"], lattice=lattice, external_h=m["h"],
                       boundary=m["boundary"])


# ---------------------------------------------------------------------------
# command implementations
# ---------------------------------------------------------------------------


def _run_exact(config: ExperimentConfig, outdir: Path) -> list[str]:
    from .exact import enumerate_gibbs

    params = _build_params(config)
    res = enumerate_gibbs(params, store_probabilities=False)
    write_csv(outdir / "exact_summary.csv",
              ["quantity", "value"],
              [("log_z", res.log_z),
               ("site_count", params.lattice.site_count),
               ("beta", params.beta)])
    write_csv(outdir / "canonical_sums.csv",
              ["index", "magnetization", "log_canonical_sum"],
              [(i, res.levels[i], res.log_canonical[i])
               for i in range(len(res.levels))])
    return ["exact_summary.csv", "canonical_sums.csv"]


def _run_thermo(config: ExperimentConfig, outdir: Path) -> list[str]:
    from .thermo import build_curve, magnetization_curve, pressure_hom

    m = config.model
    curve = build_curve(m["beta"], m["dim"])
    u, f, fp = curve.table()
    write_csv(outdir / "curve_fu.csv", ["u", "f", "fprime"],
              zip(u.tolist(), f.tolist(), fp.tolist()))
    mag = magnetization_curve(m["beta"], m["dim"], curve)
    hs = np.concatenate([-np.geomspace(1e-3, 4.0, 60)[::-1], [0.0],
                         np.geomspace(1e-3, 4.0, 60)])
    rows = [(h, pressure_hom(m["beta"], float(h), m["dim"], curve), mag.phi(float(h)))
            for h in hs]
    write_csv(outdir / "curve_hp.csv", ["h", "pressure", "phi"], rows)
    write_csv(outdir / "thermo_summary.csv", ["quantity", "value"],
              [("m_beta", curve.m_beta), ("p0", curve.p0),
               ("u_max", curve.u_max), ("provenance", curve.provenance),
               ("low_accuracy", curve.low_accuracy)])
    return ["curve_fu.csv", "curve_hp.csv", "thermo_summary.csv"]


def _run_sample(config: ExperimentConfig, outdir: Path, workers: int) -> list[str]:
    from .sampler import ChainSpec, _merge_stats, _run_replica

    params = _build_params(config)
    r = config.run
    spec = ChainSpec(
        params=params, sweeps=r["sweeps"], burn_in=r.get("burn_in"),
        thinning=r["thinning"], seed=r["seed"], dynamics=r["dynamics"],
        replicas=r["replicas"], store_configs=bool(r.get("store_configs", False)),
    )
    observables = tuple(r.get("observables", ["magnetization", "energy"]))
    replica_ids = list(range(spec.replicas))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(
                lambda k: _run_replica(spec, observables, k + 1), replica_ids
            ))
    else:
        parts = [_run_replica(spec, observables, k + 1) for k in replica_ids]
    stats = _merge_stats(parts)

    rows = [("samples", stats.sample_count),
            ("burn_in", stats.burn_in_used),
            ("empty", stats.empty)]
    for name in sorted(stats.means):
        rows.append((f"mean_{name}", stats.means[name]))
        rows.append((f"var_{name}", stats.variances[name]))
    if stats.acceptance_rate is not None:
        rows.append(("acceptance_rate", stats.acceptance_rate))
    if stats.autocorr_time is not None:
        rows.append(("autocorr_time_mag", stats.autocorr_time))
    write_csv(outdir / "stats.csv", ["quantity", "value"], rows)
    files = ["stats.csv"]
    if spec.store_configs and "binary" in config.output["formats"]:
        m = config.model
        for i, spins in enumerate(stats.configs):
            name = f"snapshot_{i:06d}.bin"
            write_snapshot(outdir / name, spins, m["dim"], m["side"], i, r["seed"])
            files.append(name)
    return files


def _run_young(config: ExperimentConfig, outdir: Path) -> list[str]:
    from .thermo import build_curve
    from .young import regime_experiment

    m, r = config.model, config.run
    _require(m["gamma"] is not None, "model.gamma", "required for young runs")
    lattice = TorusLattice(m["dim"], m["side"])
    curve = build_curve(m["beta"], m["dim"])
    uprof = _profile_field(
        m.get("u_profile") or {"type": "constant", "value": 0.0, "resolution": 1},
        m["dim"],
    )
    radii = r.get("radii", [4.0])
    report = regime_experiment(
        uprof, m["beta"], m["gamma"], radii, lattice, curve,
        sweeps=r["sweeps"], burn_in=r.get("burn_in") or 500,
        thinning=r["thinning"], seed=r["seed"],
    )
    rows = []
    for c in report.cells:
        rows.append((
            c.radius, c.cell, c.u_target,
            c.lambda_target if c.lambda_target is not None else "",
            c.positive_mass,
            c.modes.positive_mode if c.modes.positive_mode is not None else "",
            c.modes.negative_mode if c.modes.negative_mode is not None else "",
            c.modes.bimodal, c.dist_to_dirac, c.dist_to_limit_mixture,
        ))
    write_csv(outdir / "young_report.csv",
              ["radius", "cell", "u", "lambda", "positive_mass", "mode_plus",
               "mode_minus", "bimodal", "w1_dirac", "w1_limit_mixture"], rows)
    return ["young_report.csv"]


def _run_fk(config: ExperimentConfig, outdir: Path) -> list[str]:
    from .fk import bad_kac_density, beta_threshold, classify_boxes, label_fractions
    from .rng import philox_stream
    from .sampler import _one_sweep, ChainSpec
    from .energy import EnergyState
    from .thermo import m_beta_2d

    m, r = config.model, config.run
    params = _build_params(config)
    box = r.get("box_size", 16)
    zeta = r.get("zeta", 0.2)
    mb = m_beta_2d(m["beta"]) if m["dim"] == 2 else 0.0
    spec = ChainSpec(params=params, sweeps=r["sweeps"], burn_in=r.get("burn_in") or 200,
                     thinning=r["thinning"], seed=r["seed"], dynamics=r["dynamics"])
    rng = philox_stream(spec.seed, 1)
    state = EnergyState.create(params, SpinConfig.random(params.lattice, rng))
    for _ in range(spec.burn_in):
        _one_sweep(state, spec, rng)
    rows = []
    frac_sum = {"bad": 0.0, "good+": 0.0, "good-": 0.0}
    dens_sum = 0.0
    for s in range(spec.sweeps):
        for _ in range(spec.thinning):
            _one_sweep(state, spec, rng)
        cfg_now = state.config()
        labels = classify_boxes(cfg_now, box, zeta, mb, -mb)
        fr = label_fractions(labels)
        for k in frac_sum:
            frac_sum[k] += fr[k] / spec.sweeps
        dens = ""
        if params.kernel is not None:
            dens = bad_kac_density(cfg_now, params.kernel, r.get("u_target", 0.0), zeta)
            dens_sum += dens / spec.sweeps
        for b, lab in enumerate(labels):
            rows.append((s, b, lab.label, lab.deviation_plus, lab.deviation_minus,
                         lab.has_circuit))
    write_csv(outdir / "boxes.csv",
              ["sample", "box", "label", "dev_plus", "dev_minus", "has_circuit"],
              rows)
    summary = [("box_size", box), ("zeta", zeta), ("m_beta", mb),
               ("bad_fraction", frac_sum["bad"]),
               ("good_plus_fraction", frac_sum["good+"]),
               ("good_minus_fraction", frac_sum["good-"]),
               ("beta_above_threshold", beta_threshold(m["beta"]))]
    if params.kernel is not None:
        summary.append(("bad_kac_density", dens_sum))
    write_csv(outdir / "fk_summary.csv", ["quantity", "value"], summary)
    return ["boxes.csv", "fk_summary.csv"]


def _run_equivalence(config: ExperimentConfig, outdir: Path) -> list[str]:
    from .thermo import ProfileField, build_curve, duality_check

    m, r = config.model, config.run
    curve = build_curve(m["beta"], m["dim"])
    grid_spec = r.get("u_grid", {"min": -0.9, "max": 0.9, "count": 19})
    us = np.linspace(float(grid_spec["min"]), float(grid_spec["max"]),
                     int(grid_spec["count"]))
    n_pert = int(r.get("perturbations", 48))
    mags = np.geomspace(1e-3, 0.25, n_pert // 2)
    deltas = np.concatenate([-mags[::-1], mags])
    rows = []
    for u in us:
        rep = duality_check(ProfileField.constant(m["dim"], float(u)), curve, deltas)
        rows.append((u, rep.lhs, rep.rhs_at_optimum, rep.residual_at_optimum,
                     rep.max_perturbation_gain, rep.all_perturbations_decrease))
    write_csv(outdir / "equivalence.csv",
              ["u", "lhs", "rhs_at_optimum", "residual", "max_perturbation_gain",
               "all_perturbations_decrease"], rows)
    return ["equivalence.csv"]


# ---------------------------------------------------------------------------
# runner
# ---------------------------------------------------------------------------


def run(config: ExperimentConfig, out_dir: str | Path | None = None,
        workers: int = 1) -> Path:
    """Execute one experiment; returns the output directory.  Writes a
    manifest (config echo, version, seeds, wall time) next to the
    command's CSV artifacts."""
    outdir = Path(out_dir if out_dir is not None else config.output["directory"])
    outdir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    if config.command == "exact":
        files = _run_exact(config, outdir)
    elif config.command == "thermo":
        files = _run_thermo(config, outdir)
    elif config.command == "sample":
        files = _run_sample(config, outdir, workers)
    elif config.command == "young":
        files = _run_young(config, outdir)
    elif config.command == "fk-diagnose":
        files = _run_fk(config, outdir)
    elif config.command == "equivalence":
        files = _run_equivalence(config, outdir)
    else:  # pragma: no cover - parse_config guards this
        raise ConfigError(f"unknown command {config.command}")
    manifest = {
        "config": config.echo(),
        "version": __version__,
        "seed": config.run.get("seed"),
        "workers": workers,
        "outputs": files,
        "wall_time_s": round(time.time() - t0, 3),
    }
    (outdir / "manifest.txt").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return outdir


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="kacising",
        description="lattice experiments for the Kac-penalized Ising model",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, help="override run.seed")
    parser.add_argument("--out", help="override output directory")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--dim", type=int)
    parser.add_argument("--side", type=int)
    parser.add_argument("--beta", type=float)
    parser.add_argument("--gamma", type=float)
    parser.add_argument("--h", type=float)
    parser.add_argument("--sweeps", type=int)
    parser.add_argument("--burn-in", type=int, dest="burn_in")
    parser.add_argument("--dynamics")
    args = parser.parse_args(argv)

    overrides = {}
    for name, key in (("seed", "run.seed"), ("dim", "model.dim"),
                      ("side", "model.side"), ("beta", "model.beta"),
                      ("gamma", "model.gamma"), ("h", "model.h"),
                      ("sweeps", "run.sweeps"), ("burn_in", "run.burn_in"),
                      ("dynamics", "run.dynamics")):
        val = getattr(args, name)
        if val is not None:
            overrides[key] = val
    if args.out:
        overrides["output.directory"] = args.out

    try:
        if args.config:
            config = load_config(args.config, overrides)
            if config.command != args.command:
                config = parse_config({**config.echo(), "command": args.command})
        else:
            raw = {"command": args.command, "model": {}, "run": {}, "output": {}}
            config = parse_config(raw, overrides)
        run(config, workers=args.workers)
    except (ConfigError, ValueError) as exc:
        print(str(exc), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
