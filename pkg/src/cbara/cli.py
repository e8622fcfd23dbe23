"""Command-line front end: config parsing, orchestration, emission.

Configuration is a flat key-value document, one `key = value` per
line, `#` starting a comment. Grid axes (sizes, scenarios, families,
weightings) take comma-separated lists; everything else is scalar.
Flags override config values; the CBARA_SEED environment variable
overrides every other seed source.

Subcommands:
  run     one replication plan, long-format metric rows
  table1  the full size x scenario x family x weighting grid
  table2  alias of table1 (one merged schema carries both tables)
  oracle  asymptotic quantities for the configured scenario and family
  check   acceptance criteria, one PASS/FAIL line each
  trace   per-step log of a single trial

Trace columns, in order: Step, X1, X2, X3, Rho, G, T, Y, ZStar,
Lam1..Lam4, Psi, Alpha1, Gamma1, Alpha0, Gamma0, Beta2, Beta3.

Errors print a single machine-readable line `cbara-error: <message>`
to stderr; exit status is 0 only when all requested work completed
(for `check`: when every criterion passed).
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, fields, replace
from typing import Optional, Sequence

from .adapt import UpdateMechanism
from .datagen import Scenario, ScenarioId
from .engine import Allocation, TrialConfig, run_trial
from .estimator import Weighting
from .harness import (
    LabeledSummary,
    MetricsSummary,
    ReplicationPlan,
    aggregate_grid,
    run_replications,
    split_seed,
)
from .oracle import PopulationSample, asymptotic_report
from .policy import Family, TargetPolicy

_UPDATE_CHOICES = ("auto", "direct", "iru", "clipped")
_FORMAT_CHOICES = ("csv", "tsv")

_SCENARIO_NAMES = {s.value: s for s in ScenarioId}


@dataclass(frozen=True, slots=True)
class RunSpec:
    """Fully resolved configuration for any subcommand."""

    n: int = 200
    scenario: ScenarioId = ScenarioId.A
    noise_sd: float = 0.0
    family: Family = Family.CRD
    clamp_lo: float = 0.2
    clamp_hi: float = 0.8
    c_lambda: float = 1.0
    g_floor: float = 0.01
    mechanism: Allocation = Allocation.DIRECT
    update: str = "auto"
    clip_c0: float = 1.0
    clip_exponent: float = 0.5
    weighting: Weighting = Weighting.WEIGHTED
    burn_in: int = 20
    response_delay: int = 0
    reps: int = 100
    seed: int = 0
    parallelism: int = 1
    out: str = ""
    format: str = "csv"
    oracle_m: int = 1_000_000
    sizes: tuple[int, ...] = (200, 800)
    scenarios: tuple[ScenarioId, ...] = (ScenarioId.A, ScenarioId.B)
    families: tuple[Family, ...] = (Family.CRD, Family.LOGISTIC, Family.PROBIT)
    weightings: tuple[Weighting, ...] = (Weighting.WEIGHTED, Weighting.UNWEIGHTED)


def _parse_scenario(raw: str) -> ScenarioId:
    if raw not in _SCENARIO_NAMES:
        raise ValueError(
            f"unknown scenario {raw!r}; expected one of {sorted(_SCENARIO_NAMES)}"
        )
    return _SCENARIO_NAMES[raw]


def _parse_choice(raw: str, choices: Sequence[str], key: str) -> str:
    low = raw.lower()
    if low not in choices:
        raise ValueError(f"{key} must be one of {list(choices)}, got {raw!r}")
    return low


_PARSERS = {
    "n": int,
    "scenario": _parse_scenario,
    "noise_sd": float,
    "family": lambda raw: Family(_parse_choice(raw, [f.value for f in Family], "family")),
    "clamp_lo": float,
    "clamp_hi": float,
    "c_lambda": float,
    "g_floor": float,
    "mechanism": lambda raw: Allocation(
        _parse_choice(raw, [a.value for a in Allocation], "mechanism")
    ),
    "update": lambda raw: _parse_choice(raw, _UPDATE_CHOICES, "update"),
    "clip_c0": float,
    "clip_exponent": float,
    "weighting": lambda raw: Weighting(
        _parse_choice(raw, [w.value for w in Weighting], "weighting")
    ),
    "burn_in": int,
    "response_delay": int,
    "reps": int,
    "seed": int,
    "parallelism": int,
    "out": str,
    "format": lambda raw: _parse_choice(raw, _FORMAT_CHOICES, "format"),
    "oracle_m": int,
    "sizes": lambda raw: tuple(int(v.strip()) for v in raw.split(",") if v.strip()),
    "scenarios": lambda raw: tuple(
        _parse_scenario(v.strip()) for v in raw.split(",") if v.strip()
    ),
    "families": lambda raw: tuple(
        Family(_parse_choice(v.strip(), [f.value for f in Family], "families"))
        for v in raw.split(",")
        if v.strip()
    ),
    "weightings": lambda raw: tuple(
        Weighting(_parse_choice(v.strip(), [w.value for w in Weighting], "weightings"))
        for v in raw.split(",")
        if v.strip()
    ),
}


def parse_config(text: str) -> RunSpec:
    """Parse a flat key-value document into a validated RunSpec."""
    values: dict = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw_line!r}")
        key, _, raw_value = line.partition("=")
        key = key.strip()
        raw_value = raw_value.strip()
        if key not in _PARSERS:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _PARSERS[key](raw_value)
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    spec = RunSpec(**values)
    validate_spec(spec)
    return spec


def validate_spec(spec: RunSpec) -> None:
    """Range checks beyond type parsing; raises ValueError."""
    to_policy(spec)  # clamp symmetry and bound checks live there
    if spec.reps < 1:
        raise ValueError("reps must be >= 1")
    if spec.parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    if not 0 <= spec.seed < 2**64:
        raise ValueError("seed must fit in 64 bits")
    if spec.oracle_m < 1:
        raise ValueError("oracle_m must be >= 1")
    if spec.noise_sd < 0:
        raise ValueError("noise_sd must be >= 0")
    if not spec.sizes or not spec.scenarios or not spec.families or not spec.weightings:
        raise ValueError("grid axes must be nonempty")
    # clip knob validation via a throwaway mechanism
    UpdateMechanism.clipped(spec.clip_c0, spec.clip_exponent)


def render_config(spec: RunSpec) -> str:
    """Canonical text form; parse_config(render_config(s)) == s."""

    def fmt(value) -> str:
        if isinstance(value, tuple):
            return ", ".join(fmt(v) for v in value)
        if isinstance(value, (ScenarioId, Family, Weighting, Allocation)):
            return value.value
        return str(value)

    lines = [f"{f.name} = {fmt(getattr(spec, f.name))}" for f in fields(RunSpec)]
    return "\n".join(lines) + "\n"


def to_policy(spec: RunSpec) -> TargetPolicy:
    return TargetPolicy(
        family=spec.family,
        clamp_lo=spec.clamp_lo,
        clamp_hi=spec.clamp_hi,
        c_lambda=spec.c_lambda,
        g_floor=spec.g_floor,
    )


def update_mechanism_for(spec: RunSpec, allocation: Allocation) -> UpdateMechanism:
    """Resolve the update mechanism, pairing clipped updates with the
    balancing allocation by default."""
    choice = spec.update
    if choice == "auto":
        choice = "clipped" if allocation is Allocation.BALANCE else "direct"
    if choice == "direct":
        return UpdateMechanism.direct()
    if choice == "iru":
        return UpdateMechanism.iru()
    return UpdateMechanism.clipped(spec.clip_c0, spec.clip_exponent)


def to_trial_config(
    spec: RunSpec,
    allocation: Optional[Allocation] = None,
    n: Optional[int] = None,
    scenario: Optional[ScenarioId] = None,
    weighting: Optional[Weighting] = None,
    family: Optional[Family] = None,
    seed: int = 0,
) -> TrialConfig:
    alloc = spec.mechanism if allocation is None else allocation
    pol = (
        to_policy(spec)
        if family is None
        else replace(to_policy(spec), family=family)
    )
    return TrialConfig(
        n_units=spec.n if n is None else n,
        scenario=Scenario(spec.scenario if scenario is None else scenario, spec.noise_sd),
        policy=pol,
        weighting=spec.weighting if weighting is None else weighting,
        mechanism=update_mechanism_for(spec, alloc),
        allocation=alloc,
        burn_in=spec.burn_in,
        response_delay=spec.response_delay,
        seed=seed,
    )


def grid_plans(spec: RunSpec) -> list[ReplicationPlan]:
    """Plans for the full table grid, rows ordered by (size, scenario,
    family, weighting) with the direct/balance pair adjacent. Each cell
    gets an independent base seed split from spec.seed."""
    plans: list[ReplicationPlan] = []
    idx = 0
    for size in spec.sizes:
        for scen in spec.scenarios:
            for fam in spec.families:
                for wgt in spec.weightings:
                    for alloc in (Allocation.DIRECT, Allocation.BALANCE):
                        cfg = to_trial_config(
                            spec,
                            allocation=alloc,
                            n=size,
                            scenario=scen,
                            weighting=wgt,
                            family=fam,
                        )
                        plans.append(
                            ReplicationPlan(
                                base_config=cfg,
                                n_reps=spec.reps,
                                base_seed=split_seed(spec.seed, idx),
                                parallelism=spec.parallelism,
                            )
                        )
                        idx += 1
    return plans


def _fmt_value(value, raw: bool) -> str:
    if value is None:
        return "NA"
    if isinstance(value, int):
        return str(value)
    if raw:
        return repr(float(value))
    text = f"{float(value):.3f}"
    return "0.000" if text == "-0.000" else text


_TABLE_METRICS = (
    ("Response", "mean_response"),
    ("Lambda", "mean_lambda_norm"),
    ("Psi", "mean_psi_abs"),
    ("TargetSD", "mean_target_sd"),
    ("MSE_W", "ipw_mse"),
)


def emit_tables(rows: Sequence[LabeledSummary], fmt: str = "csv", raw: bool = False) -> str:
    """Merge direct/balance cell pairs into the fixed-order table.

    Columns: Size, Model, Procedure, Estimation, then metric pairs
    (Response, Lambda, Psi, TargetSD, MSE_W) each as _D and _B, then
    the matching _SE columns. Three-decimal rendering unless raw.
    """
    if not rows:
        raise ValueError("rows must be nonempty")
    sep = "," if fmt == "csv" else "\t"
    groups: dict[tuple, dict[str, MetricsSummary]] = {}
    order: list[tuple] = []
    for row in rows:
        key = (row.size, row.model, row.procedure, row.estimation)
        if key not in groups:
            groups[key] = {}
            order.append(key)
        if row.mechanism in groups[key]:
            raise ValueError(f"duplicate {row.mechanism} cell for {key}")
        groups[key][row.mechanism] = row.summary

    header = ["Size", "Model", "Procedure", "Estimation"]
    for name, _ in _TABLE_METRICS:
        header += [f"{name}_D", f"{name}_B"]
    for name, _ in _TABLE_METRICS:
        header += [f"{name}_D_SE", f"{name}_B_SE"]

    lines = [sep.join(header)]
    for key in order:
        pair = groups[key]
        missing = {"Direct", "Balance"} - set(pair)
        if missing:
            raise ValueError(f"cell {key} lacks {sorted(missing)} runs")
        d, b = pair["Direct"], pair["Balance"]
        cells = [str(key[0]), key[1], key[2], key[3]]
        for _, attr in _TABLE_METRICS:
            cells.append(_fmt_value(getattr(d, attr), raw))
            cells.append(_fmt_value(getattr(b, attr), raw))
        for _, attr in _TABLE_METRICS:
            cells.append(_fmt_value(getattr(d, attr + "_se"), raw))
            cells.append(_fmt_value(getattr(b, attr + "_se"), raw))
        lines.append(sep.join(cells))
    return "\n".join(lines) + "\n"


def _emit_run(summary: MetricsSummary, fmt: str, raw: bool) -> str:
    sep = "," if fmt == "csv" else "\t"
    lines = [sep.join(("Metric", "Value", "SE"))]
    rows = [
        ("Response", summary.mean_response, summary.mean_response_se),
        ("Lambda", summary.mean_lambda_norm, summary.mean_lambda_norm_se),
        ("Psi", summary.mean_psi_abs, summary.mean_psi_abs_se),
        ("TargetSD", summary.mean_target_sd, summary.mean_target_sd_se),
        ("MSE_W", summary.ipw_mse, summary.ipw_mse_se),
        ("Bias", summary.ipw_bias, summary.ipw_bias_se),
    ]
    for name, value, se in rows:
        lines.append(sep.join((name, _fmt_value(value, raw), _fmt_value(se, raw))))
    return "\n".join(lines) + "\n"


def _emit_trace(cfg: TrialConfig, fmt: str, raw: bool) -> str:
    sep = "," if fmt == "csv" else "\t"
    result = run_trial(cfg)
    header = (
        "Step,X1,X2,X3,Rho,G,T,Y,ZStar,Lam1,Lam2,Lam3,Lam4,Psi,"
        "Alpha1,Gamma1,Alpha0,Gamma0,Beta2,Beta3"
    ).split(",")
    lines = [sep.join(header)]
    for rec in result.log:
        th = rec.theta_before
        cells = [str(rec.n)]
        cells += [
            _fmt_value(v, raw)
            for v in (
                rec.x.x1,
                rec.x.x2,
                rec.x.x3,
                rec.rho,
                rec.g,
            )
        ]
        cells.append(str(rec.t))
        cells += [_fmt_value(v, raw) for v in (rec.y_observed, rec.zstar)]
        cells += [_fmt_value(v, raw) for v in rec.lambda_after]
        cells.append(_fmt_value(rec.psi_after, raw))
        cells += [
            _fmt_value(v, raw)
            for v in (th.alpha1, th.gamma1, th.alpha0, th.gamma0, th.beta2, th.beta3)
        ]
        lines.append(sep.join(cells))
    return "\n".join(lines) + "\n"


def _emit_oracle(spec: RunSpec) -> str:
    sep = "," if spec.format == "csv" else "\t"
    pop = PopulationSample(
        Scenario(spec.scenario, spec.noise_sd), seed=spec.seed, m=spec.oracle_m
    )
    report = asymptotic_report(pop, to_policy(spec))
    key = [spec.scenario.value, spec.family.value, "zstar"]
    lines = [sep.join(("Scenario", "Family", "Z", "Quantity", "Value"))]

    def add(quantity: str, value: float) -> None:
        lines.append(sep.join(key + [quantity, repr(float(value))]))

    theta = report.theta_star
    for name in ("alpha1", "gamma1", "alpha0", "gamma0", "beta2", "beta3"):
        add(f"theta_star.{name}", getattr(theta, name))
    for i, v in enumerate(report.a_vec, start=1):
        add(f"a_vec.{i}", v)
    add("sigma_z_sq", report.sigma_z_sq)
    add("ipw_var", report.ipw_var)
    for i in range(6):
        for j in range(i, 6):
            add(f"mest_cov.{i + 1}.{j + 1}", report.mest_cov[i, j])
    return "\n".join(lines) + "\n"


def _write_out(text: str, out: str) -> None:
    if out:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _load_spec(args: argparse.Namespace) -> RunSpec:
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            spec = parse_config(fh.read())
    else:
        spec = RunSpec()
    overrides: dict = {}
    if args.reps is not None:
        overrides["reps"] = args.reps
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.parallelism is not None:
        overrides["parallelism"] = args.parallelism
    if args.format is not None:
        overrides["format"] = args.format
    if args.out is not None:
        overrides["out"] = args.out
    env_seed = os.environ.get("CBARA_SEED")
    if env_seed is not None:
        try:
            overrides["seed"] = int(env_seed)
        except ValueError:
            raise ValueError(f"CBARA_SEED must be an integer, got {env_seed!r}") from None
    if overrides:
        spec = replace(spec, **overrides)
    validate_spec(spec)
    return spec


def _cmd_run(spec: RunSpec, raw: bool) -> int:
    cfg = to_trial_config(spec, allocation=spec.mechanism)
    plan = ReplicationPlan(
        base_config=cfg,
        n_reps=spec.reps,
        base_seed=spec.seed,
        parallelism=spec.parallelism,
    )
    _write_out(_emit_run(run_replications(plan), spec.format, raw), spec.out)
    return 0


def _cmd_table(spec: RunSpec, raw: bool) -> int:
    rows = aggregate_grid(grid_plans(spec))
    _write_out(emit_tables(rows, spec.format, raw), spec.out)
    return 0


def _cmd_oracle(spec: RunSpec) -> int:
    _write_out(_emit_oracle(spec), spec.out)
    return 0


def _cmd_trace(spec: RunSpec, raw: bool) -> int:
    cfg = to_trial_config(spec, allocation=spec.mechanism, seed=spec.seed)
    _write_out(_emit_trace(cfg, spec.format, raw), spec.out)
    return 0


def _cmd_check(spec: RunSpec) -> int:
    from .acceptance import run_acceptance

    results = run_acceptance(parallelism=spec.parallelism)
    lines = []
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        lines.append(f"{status} {res.name}: {res.detail}")
    n_fail = sum(1 for r in results if not r.passed)
    lines.append(f"{len(results) - n_fail}/{len(results)} criteria passed")
    _write_out("\n".join(lines) + "\n", spec.out)
    return 0 if n_fail == 0 else 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="path to key=value config file")
    common.add_argument("--out", default=None, help="output path (default stdout)")
    common.add_argument("--format", default=None, choices=_FORMAT_CHOICES)
    common.add_argument("--reps", type=int, default=None)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--parallelism", type=int, default=None)
    common.add_argument("--raw", action="store_true", help="full-precision values")

    parser = argparse.ArgumentParser(
        prog="cbara",
        description="Covariate-balanced response-adaptive trial simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "run one replication plan"),
        ("table1", "reproduce the full metrics grid"),
        ("table2", "alias of table1 (shared schema)"),
        ("oracle", "asymptotic quantities for one configuration"),
        ("check", "run the acceptance criteria"),
        ("trace", "per-step log of one trial"),
    ):
        sub.add_parser(name, parents=[common], help=help_text)

    args = parser.parse_args(argv)
    try:
        spec = _load_spec(args)
        if args.command == "run":
            return _cmd_run(spec, args.raw)
        if args.command in ("table1", "table2"):
            return _cmd_table(spec, args.raw)
        if args.command == "oracle":
            return _cmd_oracle(spec)
        if args.command == "check":
            return _cmd_check(spec)
        return _cmd_trace(spec, args.raw)
    except ValueError as exc:
        print(f"cbara-error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cbara-error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
