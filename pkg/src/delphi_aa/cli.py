"""Command line entry point: run, sweep, check and params.

Experiments are described by an INI file::

    [protocol]
    n = 7
    s = 0
    e = 32
    rho0 = 2
    delta_max = 8
    epsilon = 2

    [adversary]
    faulty = 2            ; or: byzantine = 5, 6
    behavior = extreme_high
    scheduler = skew

    [inputs]
    values = 10, 10.5, 11, 11.5, 12, 12.5, 13
    ; or: sampler = normal, mean = 100, sd = 2

    [experiment]
    protocol = delphi
    repetitions = 10
    encoding = compact

Every numeric protocol value is read as an exact decimal string.
"""

from __future__ import annotations

import argparse
import configparser
import json
import random
import sys
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Sequence

from .baseline import run_witness
from .checks import check_run
from .core import DerivedParams, FixedValue, ProtocolConfig, derive_params, format_decimal
from .encoding import COMPACT, PLAIN
from .errors import ConfigError, DelphiError
from .params import NoiseModel, derive_delta, estimate_complexity
from .simnet import BEHAVIORS, INPUT_QUANTUM_EXP, AdversarySpec, RunReport, reports_to_csv, run_simulation

SAMPLERS = ("normal", "gamma", "lognormal", "pareto")
PROTOCOLS = ("delphi", "witness")
SWEEPABLE = ("n", "t", "rho0", "delta_max", "epsilon", "seed", "behavior", "scheduler", "faulty", "spread")


@dataclass
class InputSource:
    values: tuple[str, ...] = ()
    sampler: str | None = None
    sampler_args: dict[str, float] = field(default_factory=dict)

    def draw(self, cfg: ProtocolConfig, seed: int) -> tuple[list[FixedValue], int]:
        """Inputs for one repetition and the number of clipped samples."""
        if self.values:
            if len(self.values) != cfg.n:
                raise ConfigError(f"[inputs] lists {len(self.values)} values for n={cfg.n}")
            return [FixedValue.from_decimal(v, INPUT_QUANTUM_EXP) for v in self.values], 0
        rng = random.Random(f"inputs-{seed}")
        a = self.sampler_args
        lo, hi = cfg.s_bound.to_fraction(), cfg.e_bound.to_fraction()
        out, clipped = [], 0
        for _ in range(cfg.n):
            if self.sampler == "normal":
                x = rng.normalvariate(a.get("mean", 0.0), a.get("sd", 1.0))
            elif self.sampler == "gamma":
                x = a.get("shift", 0.0) + rng.gammavariate(a.get("shape", 2.0), a.get("scale", 1.0))
            elif self.sampler == "lognormal":
                x = a.get("shift", 0.0) + rng.lognormvariate(a.get("mu", 0.0), a.get("sigma", 1.0))
            else:
                x = a.get("shift", 0.0) + a.get("scale", 1.0) * rng.paretovariate(a.get("alpha", 3.0))
            v = Fraction(round(x * (1 << INPUT_QUANTUM_EXP)), 1 << INPUT_QUANTUM_EXP)
            if v < lo or v > hi:
                clipped += 1
                v = min(max(v, lo), hi)
            out.append(FixedValue.from_fraction(v))
        return out, clipped


@dataclass
class ExperimentSpec:
    cfg: ProtocolConfig
    protocol: str
    adversary: AdversarySpec
    inputs: InputSource
    repetitions: int = 1
    encoding: str = COMPACT
    output_path: Path = Path("out")

    def __post_init__(self) -> None:
        if self.repetitions < 1:
            raise ConfigError("repetitions must be at least 1")
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {self.protocol!r}")
        if self.encoding not in (PLAIN, COMPACT):
            raise ConfigError(f"unknown encoding {self.encoding!r}")
        self.adversary.validate(self.cfg)


def _split(text: str) -> list[str]:
    return [p.strip() for p in text.replace(";", ",").split(",") if p.strip()]


def load_spec(path: str | Path | None, overrides: dict | None = None) -> ExperimentSpec:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if path is not None:
        if not parser.read(path):
            raise ConfigError(f"cannot read config {path}")
    for section in ("protocol", "adversary", "inputs", "experiment"):
        if not parser.has_section(section):
            parser.add_section(section)
    for key, value in (overrides or {}).items():
        section, _, name = key.partition(".")
        parser.set(section, name, str(value))
    return spec_from_parser(parser)


def spec_from_parser(parser: configparser.ConfigParser) -> ExperimentSpec:
    p = parser["protocol"]
    n = p.getint("n", 4)
    t = p.getint("t") if p.get("t") else None
    cfg = ProtocolConfig.create(
        n,
        p.get("s", "0"),
        p.get("e", "32"),
        p.get("rho0", "2"),
        p.get("delta_max", "8"),
        p.get("epsilon", "2"),
        t=t,
        seed=p.getint("seed", 0),
    )
    a = parser["adversary"]
    if a.get("byzantine"):
        byz = frozenset(int(x) for x in _split(a["byzantine"]))
    else:
        faulty = a.getint("faulty", 0)
        byz = frozenset(range(n - faulty, n))
    sched_args = {}
    for key in ("max_delay", "factor", "lag"):
        if a.get(key):
            sched_args[key] = a.getint(key)
    adversary = AdversarySpec(byz, a.get("behavior", "silent"), a.get("scheduler", "uniform_random"),
                              tuple(sorted(sched_args.items())))
    i = parser["inputs"]
    if i.get("values"):
        source = InputSource(values=tuple(_split(i["values"])))
    else:
        sampler = i.get("sampler", "normal")
        if sampler not in SAMPLERS:
            raise ConfigError(f"unknown sampler {sampler!r}")
        args = {k: float(v) for k, v in i.items() if k not in ("sampler", "values")}
        args.setdefault("mean", float(cfg.s_bound.to_fraction() + cfg.e_bound.to_fraction()) / 2)
        source = InputSource(sampler=sampler, sampler_args=args)
    e = parser["experiment"]
    return ExperimentSpec(
        cfg=cfg,
        protocol=e.get("protocol", "delphi"),
        adversary=adversary,
        inputs=source,
        repetitions=e.getint("repetitions", 1),
        encoding=e.get("encoding", COMPACT),
        output_path=Path(e.get("out", "out")),
    )


def run_once(spec: ExperimentSpec, seed: int, *, keep_trace: bool = False,
             params: DerivedParams | None = None) -> tuple[RunReport, int]:
    cfg = replace(spec.cfg, seed=seed)
    inputs, clipped = spec.inputs.draw(cfg, seed)
    if spec.protocol == "witness":
        return run_witness(cfg, spec.adversary, inputs, keep_trace=keep_trace), clipped
    report = run_simulation(cfg, spec.adversary, inputs, encoding=spec.encoding,
                            keep_trace=keep_trace, params=params)
    return report, clipped


def summarize(reports: Sequence[RunReport], clipped: int = 0) -> dict:
    dists = [r.agreement_distance for r in reports]
    relax = [r.validity_relaxation for r in reports]
    nbytes = [r.bytes_sent for r in reports]
    return {
        "runs": len(reports),
        "clipped_inputs": clipped,
        "agreement_distance_mean": format_decimal(sum(dists, Fraction(0)) / len(dists)),
        "agreement_distance_max": format_decimal(max(dists)),
        "validity_relaxation_mean": format_decimal(sum(relax, Fraction(0)) / len(relax)),
        "validity_relaxation_max": format_decimal(max(relax)),
        "bytes_mean": format_decimal(Fraction(sum(nbytes), len(nbytes))),
        "bytes_max": max(nbytes),
    }


def _write(out: Path, stem: str, reports: Sequence[RunReport], fmt: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    if fmt in ("json", "both"):
        for rep in reports:
            (out / f"{stem}-{rep.protocol}-seed{rep.seed}.json").write_text(rep.to_json_text() + "\n")
    if fmt in ("csv", "both"):
        (out / f"{stem}.csv").write_text(reports_to_csv(reports))


def _spec_from_args(args) -> ExperimentSpec:
    overrides = {}
    if args.seed is not None:
        overrides["protocol.seed"] = args.seed
    if args.protocol is not None:
        overrides["experiment.protocol"] = args.protocol
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        overrides[key] = value
    spec = load_spec(args.config, overrides)
    if args.out is not None:
        spec.output_path = Path(args.out)
    return spec


def cmd_run(args) -> int:
    spec = _spec_from_args(args)
    reports, clipped = [], 0
    for i in range(spec.repetitions):
        rep, c = run_once(spec, spec.cfg.seed + i)
        reports.append(rep)
        clipped += c
    _write(spec.output_path, "run", reports, args.format)
    summary = summarize(reports, clipped)
    (spec.output_path / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _apply_vary(spec: ExperimentSpec, field_name: str, value: str) -> ExperimentSpec:
    cfg, adv, inputs = spec.cfg, spec.adversary, spec.inputs
    if field_name == "n":
        n = int(value)
        cfg = ProtocolConfig.create(n, cfg.s_bound, cfg.e_bound, cfg.rho0, cfg.delta_max, cfg.epsilon, seed=cfg.seed)
        faulty = len(adv.byzantine)
        adv = replace(adv, byzantine=frozenset(range(n - min(faulty, cfg.t), n)))
        if inputs.values:
            raise ConfigError("sweeping n needs a sampler in [inputs]")
    elif field_name == "t":
        cfg = replace(cfg, t=int(value))
    elif field_name == "seed":
        cfg = replace(cfg, seed=int(value))
    elif field_name in ("rho0", "delta_max", "epsilon"):
        kwargs = {"rho0": cfg.rho0, "delta_max": cfg.delta_max, "epsilon": cfg.epsilon, field_name: value}
        cfg = ProtocolConfig.create(cfg.n, cfg.s_bound, cfg.e_bound, t=cfg.t, seed=cfg.seed, **kwargs)
    elif field_name == "behavior":
        adv = replace(adv, behavior=value)
    elif field_name == "scheduler":
        adv = replace(adv, scheduler=value)
    elif field_name == "faulty":
        adv = replace(adv, byzantine=frozenset(range(cfg.n - int(value), cfg.n)))
    elif field_name == "spread":
        if inputs.sampler is None:
            raise ConfigError("sweeping spread needs a sampler in [inputs]")
        args = dict(inputs.sampler_args)
        args["sd" if inputs.sampler == "normal" else "scale"] = float(value)
        inputs = replace(inputs, sampler_args=args)
    else:
        raise ConfigError(f"cannot sweep {field_name!r}; choose from {', '.join(SWEEPABLE)}")
    return replace(spec, cfg=cfg, adversary=adv, inputs=inputs)


def cmd_sweep(args) -> int:
    spec = _spec_from_args(args)
    values = _split(args.values)
    if not values:
        raise ConfigError("--values must list at least one value")
    reports = []
    for value in values:
        point = _apply_vary(spec, args.vary, value)
        point.adversary.validate(point.cfg)
        for i in range(point.repetitions):
            reports.append(run_once(point, point.cfg.seed + i)[0])
    spec.output_path.mkdir(parents=True, exist_ok=True)
    text = reports_to_csv(reports)
    (spec.output_path / f"sweep-{args.vary}.csv").write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_check(args) -> int:
    spec = _spec_from_args(args)
    if spec.protocol != "delphi":
        raise ConfigError("check runs the delphi invariants; set protocol = delphi")
    params = None
    if args.r_max is not None:
        base = derive_params(spec.cfg)
        params = DerivedParams(base.l_max, base.eps_prime, args.r_max)
    failures: dict[str, list[str]] = {}
    props = ("termination", "agreement", "validity", "weak-bv", "halving", "weight-sum",
             "weight-closeness", "dead-levels", "finalization")
    for i in range(spec.repetitions):
        seed = spec.cfg.seed + i
        try:
            report, _ = run_once(spec, seed, keep_trace=True, params=params)
        except DelphiError as exc:
            failures.setdefault("termination", []).append(f"seed {seed}: {exc}")
            continue
        for v in check_run(report, fault_free=not spec.adversary.byzantine):
            key = next(p for p in props if v.prop.startswith(p))
            failures.setdefault(key, []).append(str(v))
    for prop in props:
        bad = failures.get(prop, [])
        print(f"{'FAIL' if bad else 'pass'}  {prop}" + (f"  ({len(bad)}; first: {bad[0]})" if bad else ""))
    return 1 if failures else 0


def cmd_params(args) -> int:
    model = NoiseModel(args.family, args.location, args.scale, args.alpha)
    rows = []
    if args.tail_prob is not None:
        rows.append((f"tail={args.tail_prob:g}", derive_delta(model, tail_prob=args.tail_prob)))
    for lam in args.lambda_bits or ([] if args.tail_prob is not None else [30]):
        rows.append((f"lambda={lam}", derive_delta(model, lam)))
    print(f"{'bound':<16}delta")
    for label, delta in rows:
        print(f"{label:<16}{delta:.6f}")
    if args.config:
        spec = load_spec(args.config)
        est = estimate_complexity(spec.cfg)
        print(f"predicted bits/round {est.bits_per_round:.0f}, rounds {est.rounds}, total {est.total_bits:.0f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="delphi-aa", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment INI file")
        p.add_argument("--seed", type=int, help="base seed (repetition i uses seed + i)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--protocol", choices=PROTOCOLS)
        p.add_argument("--format", choices=("csv", "json", "both"), default="both")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config entry")

    p = sub.add_parser("run", help="run an experiment and write reports")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="vary one field and collect a CSV matrix")
    common(p)
    p.add_argument("--vary", required=True, choices=SWEEPABLE)
    p.add_argument("--values", required=True, help="comma separated values")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("check", help="run the invariant checks over an experiment")
    common(p)
    p.add_argument("--r-max", type=int, help="override the BinAA round count (fault injection)")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("params", help="derive delta_max from a noise model")
    p.add_argument("--family", choices=("gumbel_range", "frechet_range"), default="gumbel_range")
    p.add_argument("--location", type=float, default=0.0)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--alpha", type=float)
    p.add_argument("--lambda", dest="lambda_bits", type=int, action="append")
    p.add_argument("--tail-prob", type=float)
    p.add_argument("--config", help="also predict communication for this experiment")
    p.set_defaults(func=cmd_params)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DelphiError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


__all__ = ["BEHAVIORS", "ExperimentSpec", "InputSource", "build_parser", "load_spec", "main"]
