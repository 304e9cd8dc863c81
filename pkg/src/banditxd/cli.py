"""Command-line front end.

Subcommands: run, sweep, audit, validate, normality.  Flags mirror the JSON
config fields with kebab-case names and take precedence over the file; the
environment variable BANDITXD_SEED is the seed fallback.  Exit codes: 0 on
success, 1 on configuration or I/O errors, 2 when --check is passed and the
checked thresholds fail.  Outputs are plain CSV/JSON files plus a manifest
with content hashes; nothing outside the output directory is touched.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
from pathlib import Path

from . import harness, mechanism
from .engine import POLICY_KINDS, PolicyConfig, resolve_backend
from .instance import load_instance, validate_assumption

__all__ = ["main", "parse_config", "write_outputs", "format_float"]

_DEFAULTS = {
    "instance": None,
    "policy": "conse",
    "alpha": 0.5,
    "epsilon": None,
    "replications": 100,
    "seed": None,
    "alpha_grid": [0.0, 0.5, 1.0],
    "out": "banditxd_out",
    "parallel": 1,
    "backend": None,
    "events": False,
    "c1": 1.5,
    "c2": 3.0,
    "log_floor_coeff": 1.0,
}

PARETO_COLUMNS = (
    "policy", "alpha", "epsilon", "M", "n",
    "mean_regret", "se_regret", "max_mse", "se_mse", "product",
)


def format_float(x) -> str:
    """Fixed CSV float formatting: 12 significant digits."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, float):
        return f"{x:.12g}"
    return str(x)


class ConfigError(Exception):
    pass


def _build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", type=str, help="JSON config file; flags override its fields")
    shared.add_argument("--seed", type=int, help="master seed (64-bit); env BANDITXD_SEED is the fallback")
    shared.add_argument("--reps", type=int, dest="replications", help="replications (audit: trials)")
    shared.add_argument("--out", type=str, help="output directory")
    shared.add_argument("--parallel", type=int, help="worker processes for replications")
    shared.add_argument("--check", action="store_true", help="exit 2 when the subcommand's checks fail")
    shared.add_argument("--backend", type=str, choices=("auto", "python", "cython"), help="simulation backend")
    policy = argparse.ArgumentParser(add_help=False)
    policy.add_argument("--instance", type=str, help="instance document (JSON)")
    policy.add_argument("--policy", type=str, help=f"one of {', '.join(POLICY_KINDS)}")
    policy.add_argument("--alpha", type=float, help="tradeoff knob in [0, 1]")
    policy.add_argument("--epsilon", type=float, help="privacy-loss parameter (dpconse/audit)")
    policy.add_argument("--alpha-grid", type=str, help="comma-separated alphas for sweep")
    parser = argparse.ArgumentParser(prog="banditxd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", parents=[shared, policy], help="run one policy, emit metrics")
    p_run.add_argument("--events", action="store_true", help="also write event/noise logs (JSONL)")
    sub.add_parser("sweep", parents=[shared, policy], help="alpha sweep producing Pareto points")
    sub.add_parser("audit", parents=[shared, policy], help="privacy audit of the mechanisms")
    p_val = sub.add_parser("validate", parents=[shared, policy], help="check the arrival assumption")
    p_val.add_argument("--c1", type=float, help="lower balance bound (> 1)")
    p_val.add_argument("--c2", type=float, help="upper balance bound (> C1)")
    p_val.add_argument("--log-floor-coeff", type=float, help="coefficient of the ln(n) occurrence floor")
    sub.add_parser("normality", parents=[shared, policy], help="CLT check on standardized errors")
    return parser


def parse_config(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags (flags win)."""
    command = getattr(args, "command", None)
    cfg = dict(_DEFAULTS)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        unknown = set(loaded) - set(_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        cfg.update(loaded)
    for key in _DEFAULTS:
        flag_val = getattr(args, key, None)
        if flag_val is not None and flag_val is not False:
            cfg[key] = flag_val
    if isinstance(cfg["alpha_grid"], str):
        try:
            cfg["alpha_grid"] = [float(tok) for tok in cfg["alpha_grid"].split(",") if tok.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad alpha grid: {exc}") from exc
    if cfg["seed"] is None:
        env = os.environ.get("BANDITXD_SEED")
        cfg["seed"] = int(env) if env else 0
    seed = int(cfg["seed"])
    if not 0 <= seed < 2 ** 64:
        raise ConfigError(f"seed must be a 64-bit unsigned value, got {seed}")
    cfg["seed"] = seed
    if cfg["policy"] not in POLICY_KINDS:
        raise ConfigError(f"unknown policy {cfg['policy']!r}; expected one of {POLICY_KINDS}")
    if not 0.0 <= float(cfg["alpha"]) <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {cfg['alpha']}")
    if cfg["policy"] == "dpconse" and cfg["epsilon"] is None:
        raise ConfigError("policy dpconse requires the field 'epsilon'")
    if cfg["policy"] != "dpconse" and cfg["epsilon"] is not None and command != "audit":
        raise ConfigError("'epsilon' is only valid for policy dpconse (or the audit subcommand)")
    if int(cfg["replications"]) < 1:
        raise ConfigError("replications must be >= 1")
    if int(cfg["parallel"]) < 1:
        raise ConfigError("parallel must be >= 1")
    return cfg


def write_outputs(files: dict[str, str | bytes], out_dir) -> dict:
    """Write the given files plus a manifest of names, sizes and hashes."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for name in sorted(files):
        data = files[name]
        if isinstance(data, str):
            data = data.encode()
        (out / name).write_bytes(data)
        entries.append({"name": name, "bytes": len(data), "sha256": hashlib.sha256(data).hexdigest()})
    manifest = {"files": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_float(v) for v in row])
    return buf.getvalue()


def _json_text(payload) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _policy_config(cfg: dict) -> PolicyConfig:
    return PolicyConfig(
        kind=cfg["policy"],
        alpha=float(cfg["alpha"]),
        epsilon=float(cfg["epsilon"]) if cfg["policy"] == "dpconse" else None,
    )


def _require_instance(cfg: dict):
    if not cfg["instance"]:
        raise ConfigError("this subcommand requires an instance document (--instance or config)")
    path = Path(cfg["instance"])
    if not path.exists():
        raise ConfigError(f"instance file not found: {path}")
    try:
        return load_instance(path)
    except (ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"bad instance document: {exc}") from exc


def _metrics_rows(report) -> list[tuple]:
    rows = [
        ("mean_regret", report.mean_regret),
        ("se_regret", report.se_regret),
        ("max_mse", report.max_mse),
        ("se_max_mse", report.se_max_mse),
        ("product", report.product),
        ("product_per_feature", report.product_per_feature),
        ("replications", report.n_reps),
    ]
    for j in range(report.m):
        rows.append((f"mse_{j + 1}", report.mse[j]))
    for j in range(report.m):
        rows.append((f"estimate_mean_{j + 1}", report.est_means[j]))
    for j in range(report.m):
        rows.append((f"missing_{j + 1}", int(report.missing_counts[j])))
    return rows


def _cmd_run(cfg: dict, check: bool) -> int:
    inst = _require_instance(cfg)
    pol = _policy_config(cfg)
    traces = harness.run_many(
        inst, pol, int(cfg["replications"]), cfg["seed"],
        parallel=int(cfg["parallel"]), backend=cfg["backend"],
        record_events=bool(cfg["events"]),
    )
    report = harness.aggregate(traces, inst)
    eps = "" if pol.epsilon is None else pol.epsilon
    rows = [(pol.kind, pol.alpha, eps, name, value) for name, value in _metrics_rows(report)]
    files = {
        "metrics.csv": _csv_text(("policy", "alpha", "epsilon", "metric", "value"), rows),
        "metrics.json": _json_text(report.as_dict()),
    }
    if cfg["events"]:
        ev_lines = []
        nz_lines = []
        for r, tr in enumerate(traces):
            for ev in tr.events or ():
                ev_lines.append(json.dumps({"rep": r, **ev}, sort_keys=True))
            for nz in tr.noise_log or ():
                nz_lines.append(json.dumps({"rep": r, **nz}, sort_keys=True))
        files["events.jsonl"] = "\n".join(ev_lines) + ("\n" if ev_lines else "")
        if nz_lines:
            files["noise_log.jsonl"] = "\n".join(nz_lines) + "\n"
    write_outputs(files, cfg["out"])
    print(f"run: policy={pol.kind} alpha={pol.alpha} reps={report.n_reps} "
          f"mean_regret={format_float(report.mean_regret)} max_mse={format_float(report.max_mse)}")
    return 0


def _cmd_sweep(cfg: dict, check: bool) -> int:
    inst = _require_instance(cfg)
    if cfg["policy"] not in ("conse", "dpconse"):
        raise ConfigError("sweep requires policy conse or dpconse")
    points = harness.pareto_sweep(
        inst, cfg["policy"], cfg["alpha_grid"], int(cfg["replications"]), cfg["seed"],
        epsilon=float(cfg["epsilon"]) if cfg["policy"] == "dpconse" else None,
        parallel=int(cfg["parallel"]), backend=cfg["backend"],
    )
    rows = [
        (p.policy, p.alpha, "" if p.epsilon is None else p.epsilon, p.m, p.n,
         p.mean_regret, p.se_regret, p.max_mse, p.se_mse, p.product)
        for p in points
    ]
    files = {
        "pareto.csv": _csv_text(PARETO_COLUMNS, rows),
        "pareto.json": _json_text([p.__dict__ for p in points]),
    }
    write_outputs(files, cfg["out"])
    for p in points:
        print(f"sweep: alpha={p.alpha} regret={format_float(p.mean_regret)} "
              f"max_mse={format_float(p.max_mse)} product={format_float(p.product)}")
    if check and len(points) >= 2:
        lo, hi = points[0], points[-1]
        regret_ok = hi.mean_regret <= lo.mean_regret + 3.0 * (hi.se_regret + lo.se_regret)
        mse_ok = hi.max_mse >= lo.max_mse - 3.0 * (hi.se_mse + lo.se_mse)
        if not (regret_ok and mse_ok):
            print("sweep check FAILED: endpoint monotonicity violated", file=sys.stderr)
            return 2
        print("sweep check passed: endpoint monotonicity holds")
    return 0


def _cmd_audit(cfg: dict, check: bool) -> int:
    if cfg["epsilon"] is None:
        raise ConfigError("audit requires --epsilon")
    epsilon = float(cfg["epsilon"])
    report = harness.privacy_audit(
        epsilon, trials=int(cfg["replications"]), master_seed=cfg["seed"], backend=cfg["backend"]
    )
    files = {"audit.json": _json_text(report.as_dict())}
    for row in report.lap_plus_ratios:
        m = row["m"]
        values, probs = mechanism.lap_plus_support_pmf(m, epsilon)
        rows = list(zip(values.tolist(), probs.tolist()))
        files[f"lap_plus_pmf_m{format_float(float(m))}.csv"] = _csv_text(("value", "probability"), rows)
    write_outputs(files, cfg["out"])
    print(f"audit: epsilon={epsilon} passed={report.passed}")
    for ev in report.event_tests:
        print(f"  event {ev['name']}: p_a={format_float(ev['p_a'])} p_b={format_float(ev['p_b'])} pass={ev['pass']}")
    if check and not report.passed:
        print("audit check FAILED", file=sys.stderr)
        return 2
    return 0


def _cmd_validate(cfg: dict, check: bool) -> int:
    inst = _require_instance(cfg)
    try:
        report = validate_assumption(
            inst.arrival, c1=float(cfg["c1"]), c2=float(cfg["c2"]),
            log_floor_coeff=float(cfg["log_floor_coeff"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    files = {"assumption.json": _json_text(report.as_dict())}
    write_outputs(files, cfg["out"])
    print(f"validate: horizon={report.n} f_min={format_float(report.f_min)} "
          f"log_floor={format_float(report.log_floor)} passed={report.passed}")
    for j in range(inst.m):
        ratio = report.ratios[j]
        print(f"  feature {j + 1}: f_half={format_float(float(report.f_half[j]))} "
              f"f_full={format_float(float(report.f_full[j]))} "
              f"ratio={format_float(float(ratio)) if not math.isnan(ratio) else 'undefined'} "
              f"pass={bool(report.ratio_pass[j])}")
    if check and not report.passed:
        print("validate check FAILED", file=sys.stderr)
        return 2
    return 0


def _cmd_normality(cfg: dict, check: bool) -> int:
    inst = _require_instance(cfg)
    pol = _policy_config(cfg)
    if pol.kind not in ("conse", "dpconse"):
        raise ConfigError("normality requires policy conse or dpconse")
    traces = harness.run_many(
        inst, pol, int(cfg["replications"]), cfg["seed"],
        parallel=int(cfg["parallel"]), backend=cfg["backend"],
    )
    report = harness.aggregate(traces, inst)
    pooled = harness.normality_test(report.standardized)
    payload = {"pooled": pooled.as_dict(), "per_feature": []}
    rows = [("pooled", pooled.ks_statistic, pooled.p_value, pooled.mean, pooled.variance, pooled.n_samples)]
    for j0, std in enumerate(report.standardized_by_feature):
        if len(std) >= 200:
            rep_j = harness.normality_test(std)
            payload["per_feature"].append({"feature": j0 + 1, **rep_j.as_dict()})
            rows.append((f"feature_{j0 + 1}", rep_j.ks_statistic, rep_j.p_value, rep_j.mean, rep_j.variance, rep_j.n_samples))
    files = {
        "normality.json": _json_text(payload),
        "normality.csv": _csv_text(("scope", "ks_statistic", "p_value", "mean", "variance", "n_samples"), rows),
    }
    write_outputs(files, cfg["out"])
    print(f"normality: ks={format_float(pooled.ks_statistic)} p={format_float(pooled.p_value)} "
          f"mean={format_float(pooled.mean)} variance={format_float(pooled.variance)}")
    if check:
        ok = pooled.p_value > 0.01 and 0.85 <= pooled.variance <= 1.15
        if not ok:
            print("normality check FAILED", file=sys.stderr)
            return 2
        print("normality check passed")
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "sweep": _cmd_sweep,
    "audit": _cmd_audit,
    "validate": _cmd_validate,
    "normality": _cmd_normality,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = parse_config(args)
        if cfg["backend"] is not None:
            resolve_backend(cfg["backend"])  # fail fast on unavailable backend
        return _COMMANDS[args.command](cfg, bool(getattr(args, "check", False)))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
