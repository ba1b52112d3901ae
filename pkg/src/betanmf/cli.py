"""Command-line harness: synthetic data, matrix I/O, benchmark sweeps and reports.

Verbs::

    betanmf gen          write a synthetic V = W* H* and its factors
    betanmf factorize    run one rule and save W, H, the trace and a summary
    betanmf bench        sweep rules from a shared initialization
    betanmf interpolate  masked factorization with held-out error and PSNR
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .diagnostics import RunTrace, cost, psnr
from .solver import FactorState, NonFiniteError, ProblemSpec, init_factors, run
from .updates import UpdateRule

logger = logging.getLogger("betanmf")

DEFAULT_THRESHOLD = 1e-8


class MatrixFileError(ValueError):
    pass


class ConfigError(ValueError):
    pass


# -- data ----------------------------------------------------------------------


def gen_synthetic(F: int, N: int, K: int, seed: int):
    """Exactly factorizable ``V = W* H*`` with ``|standard normal|`` factors.

    Returns ``(V, W_true, H_true)``.
    """
    if min(F, N, K) < 1:
        raise ValueError("F, N and K must be at least 1")
    rng = np.random.default_rng(seed)
    W = np.abs(rng.standard_normal((F, K)))
    H = np.abs(rng.standard_normal((K, N)))
    return W @ H, W, H


def mask_gen(F: int, N: int, fraction: float, seed: int) -> np.ndarray:
    """Binary mask with each entry missing (0) independently with probability ``fraction``."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"missing fraction must lie in [0, 1], got {fraction}")
    rng = np.random.default_rng(seed)
    mask = (rng.random((F, N)) >= fraction).astype(float)
    logger.info("mask: realized missing fraction %.4f (target %.4f)", 1.0 - mask.mean(), fraction)
    return mask


def load_matrix(path) -> np.ndarray:
    """Read a CSV of nonnegative decimals, one matrix row per line."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(c.strip() == "" for c in row):
                continue
            values = []
            for colno, cell in enumerate(row, start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise MatrixFileError(f"{path}: line {lineno}, column {colno}: cannot parse {cell.strip()!r}")
                if not math.isfinite(v):
                    raise MatrixFileError(f"{path}: line {lineno}, column {colno}: non-finite value")
                if v < 0:
                    raise MatrixFileError(f"{path}: line {lineno}, column {colno}: negative entry {v!r}")
                values.append(v)
            if rows and len(values) != len(rows[0]):
                raise MatrixFileError(
                    f"{path}: line {lineno}: expected {len(rows[0])} columns, found {len(values)}"
                )
            rows.append(values)
    if not rows:
        raise MatrixFileError(f"{path}: empty matrix file")
    return np.array(rows, dtype=float)


def save_matrix(m, path) -> None:
    m = np.atleast_2d(np.asarray(m, dtype=float))
    with open(path, "w", newline="") as fh:
        for row in m:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


# -- configuration ---------------------------------------------------------------


@dataclass
class RunConfig:
    """One benchmark / factorization job.

    ``input`` is either ``{"synthetic": {"F", "N", "K_true", "seed"}}`` or
    ``{"path": "V.csv"}``; ``mask`` is ``None``, ``{"fraction", "seed"}`` or
    ``{"path": "M.csv"}``.
    """

    input: dict = field(default_factory=lambda: {"synthetic": {"F": 10, "N": 25, "K_true": 5, "seed": 0}})
    K: int = 5
    beta: float = 0.5
    rules: List[str] = field(default_factory=lambda: ["mm"])
    max_iter: int = 1000
    theta: float = 0.95
    theta_end: Optional[float] = None
    l1_weight: float = 0.0
    mask: Optional[dict] = None
    convex_S: Optional[str] = None
    checkpoint_every: int = 10
    output_dir: str = "out"
    seed: int = 0
    threshold: float = DEFAULT_THRESHOLD
    order: str = "WH"
    timing: bool = True
    peak: float = 255.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        keys = set(self.input)
        if keys not in ({"synthetic"}, {"path"}):
            raise ConfigError("input must hold exactly one of 'synthetic' or 'path'")
        if "synthetic" in keys:
            syn = self.input["synthetic"]
            missing = {"F", "N", "K_true", "seed"} - set(syn)
            if missing:
                raise ConfigError(f"synthetic input is missing {sorted(missing)}")
        if self.mask is not None and set(self.mask) not in ({"fraction", "seed"}, {"path"}):
            raise ConfigError("mask must be {'fraction', 'seed'} or {'path'}")
        if not self.rules:
            raise ConfigError("at least one rule is required")
        for r in self.rules:
            UpdateRule(r, self.theta, self.theta_end)
        if self.K < 1 or self.max_iter < 0:
            raise ConfigError("K must be >= 1 and max_iter >= 0")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))


def _beta_tag(beta: float) -> str:
    return f"{beta:g}"


def _load_problem(cfg: RunConfig):
    if "synthetic" in cfg.input:
        syn = cfg.input["synthetic"]
        V, _, _ = gen_synthetic(int(syn["F"]), int(syn["N"]), int(syn["K_true"]), int(syn["seed"]))
    else:
        V = load_matrix(cfg.input["path"])
    F, N = V.shape
    mask = None
    if cfg.mask is not None:
        if "path" in cfg.mask:
            mask = load_matrix(cfg.mask["path"])
            if not np.all((mask == 0) | (mask == 1)):
                raise MatrixFileError(f"{cfg.mask['path']}: mask entries must be 0 or 1")
        else:
            mask = mask_gen(F, N, float(cfg.mask["fraction"]), int(cfg.mask["seed"]))
    S = load_matrix(cfg.convex_S) if cfg.convex_S else None
    return V, mask, S


def _spec(cfg: RunConfig, V, mask, S, rule: str) -> ProblemSpec:
    return ProblemSpec(
        V=V,
        K=cfg.K,
        beta=cfg.beta,
        rule=UpdateRule(rule, cfg.theta, cfg.theta_end),
        l1_weight_H=cfg.l1_weight,
        S=S,
        mask=mask,
        max_iter=cfg.max_iter,
        seed=cfg.seed,
        order=cfg.order,
        checkpoint_every=cfg.checkpoint_every,
        timing=cfg.timing,
    )


def _shared_init(cfg: RunConfig, V, S) -> FactorState:
    F, N = V.shape
    if S is not None:
        L, H = init_factors(F, N, cfg.K, cfg.seed, M=S.shape[1])
        return FactorState(W=S @ L, H=H, L=L)
    W, H = init_factors(F, N, cfg.K, cfg.seed)
    return FactorState(W=W, H=H)


def _summary(cfg: RunConfig, rule: str, trace: RunTrace) -> dict:
    final = trace.final
    return {
        "rule": rule,
        "beta": cfg.beta,
        "final_cost": final.cost,
        "final_kkt_w": final.kkt_w,
        "final_kkt_h": final.kkt_h,
        "iters_to_threshold": trace.iters_to_threshold(cfg.threshold),
        "threshold": cfg.threshold,
        "wall_s": trace.wall_s,
        "seed": cfg.seed,
    }


def _sweep(cfg: RunConfig, out: Path, extra=None):
    """Run every rule from one initialization; returns (summaries, states, failed)."""
    V, mask, S = _load_problem(cfg)
    init = _shared_init(cfg, V, S)
    summaries, states, failed = [], {}, False
    for rule in cfg.rules:
        spec = _spec(cfg, V, mask, S, rule)
        path = out / f"{rule}_{_beta_tag(cfg.beta)}.csv"
        try:
            state, trace = run(spec, init)
        except NonFiniteError as exc:
            if exc.trace is not None:
                exc.trace.write_csv(path)
            print(f"error: {rule}: {exc}", file=sys.stderr)
            failed = True
            continue
        trace.write_csv(path)
        entry = _summary(cfg, rule, trace)
        if extra is not None:
            entry.update(extra(spec, init, state))
        summaries.append(entry)
        states[rule] = state
        logger.info("%s beta=%g: final cost %.3e", rule, cfg.beta, trace.final.cost)
    return summaries, states, failed


def _write_summary(out: Path, summaries) -> None:
    with open(out / "summary.json", "w") as fh:
        json.dump(summaries, fh, indent=2)
        fh.write("\n")


def bench(cfg: RunConfig) -> int:
    """Sweep ``cfg.rules`` from a shared initialization; write traces and ``summary.json``."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json() + "\n")
    summaries, _, failed = _sweep(cfg, out)
    _write_summary(out, summaries)
    for s in summaries:
        print(
            f"{s['rule']:>5} beta={_beta_tag(s['beta'])}: cost {s['final_cost']:.3e} "
            f"kkt ({s['final_kkt_w']:.2e}, {s['final_kkt_h']:.2e}) "
            f"iters<{s['threshold']:g}: {s['iters_to_threshold']}"
        )
    return 1 if failed else 0


def factorize(cfg: RunConfig) -> int:
    if len(cfg.rules) != 1:
        raise ConfigError("factorize takes exactly one rule")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    summaries, states, failed = _sweep(cfg, out)
    _write_summary(out, summaries)
    for state in states.values():
        save_matrix(state.W, out / "W.csv")
        save_matrix(state.H, out / "H.csv")
        if state.L is not None:
            save_matrix(state.L, out / "L.csv")
    return 1 if failed else 0


def heldout_divergence(V, W, H, beta, mask) -> float:
    """Mean divergence over the entries the mask hides."""
    return cost(V, W, H, beta, mask=1.0 - np.asarray(mask), normalized=True)


def interpolate(cfg: RunConfig) -> int:
    """Masked factorization; reports held-out divergence and mean per-column PSNR."""
    if cfg.mask is None:
        raise ConfigError("interpolate needs a mask (--mask-frac or --mask)")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    def extra(spec, init, state):
        V, mask = spec.data, spec.mask
        rec = state.W @ state.H
        scores = [psnr(spec.V[:, n], rec[:, n], cfg.peak) for n in range(V.shape[1])]
        return {
            "missing_fraction": float(1.0 - mask.mean()),
            "heldout_init": heldout_divergence(V, init.W, init.H, spec.beta, mask),
            "heldout_final": heldout_divergence(V, state.W, state.H, spec.beta, mask),
            "psnr_mean": float(np.mean(scores)),
        }

    summaries, _, failed = _sweep(cfg, out, extra)
    _write_summary(out, summaries)
    for s in summaries:
        print(
            f"{s['rule']:>5} beta={_beta_tag(s['beta'])}: held-out {s['heldout_init']:.4g} -> "
            f"{s['heldout_final']:.4g}, mean PSNR {s['psnr_mean']:.2f} dB"
        )
    return 1 if failed else 0


# -- argument parsing ----------------------------------------------------------------


def _add_run_args(p: argparse.ArgumentParser, multi_rule: bool) -> None:
    p.add_argument("--config", help="JSON RunConfig; explicit flags override it")
    p.add_argument("--input", help="CSV file holding V")
    p.add_argument("--F", type=int)
    p.add_argument("--N", type=int)
    p.add_argument("--K-true", type=int, dest="K_true")
    p.add_argument("--data-seed", type=int)
    p.add_argument("--rank", type=int, dest="K")
    p.add_argument("--beta", type=float)
    p.add_argument(
        "--rule",
        action="append",
        dest="rules",
        help="mm | heur | me" + ("; repeat or comma-separate for a sweep" if multi_rule else ""),
    )
    p.add_argument("--theta", type=float)
    p.add_argument("--theta-end", type=float)
    p.add_argument("--iters", type=int, dest="max_iter")
    p.add_argument("--seed", type=int, help="initialization seed")
    p.add_argument("--l1", type=float, dest="l1_weight")
    p.add_argument("--mask-frac", type=float)
    p.add_argument("--mask-seed", type=int, default=None)
    p.add_argument("--mask", dest="mask_path", help="CSV binary mask, 0 = missing")
    p.add_argument("--convex-s", dest="convex_S")
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--order", choices=["WH", "HW"])
    p.add_argument("--peak", type=float)
    p.add_argument("--no-timing", action="store_true", help="record wall_ms as 0 for byte-reproducible traces")
    p.add_argument("--out", dest="output_dir")


def config_from_args(args) -> RunConfig:
    base = {}
    if args.config:
        try:
            base = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}")
    cfg = RunConfig.from_dict(base).to_dict() if base else RunConfig().to_dict()

    if args.input and any(v is not None for v in (args.F, args.N, args.K_true, args.data_seed)):
        raise ConfigError("--input and synthetic size flags are mutually exclusive")
    if args.input:
        cfg["input"] = {"path": args.input}
    elif any(v is not None for v in (args.F, args.N, args.K_true, args.data_seed)):
        syn = dict(cfg["input"].get("synthetic", {"F": 10, "N": 25, "K_true": 5, "seed": 0}))
        for key, val in (("F", args.F), ("N", args.N), ("K_true", args.K_true), ("seed", args.data_seed)):
            if val is not None:
                syn[key] = val
        cfg["input"] = {"synthetic": syn}

    for key in ("K", "beta", "theta", "theta_end", "max_iter", "seed", "l1_weight", "convex_S",
                "checkpoint_every", "threshold", "order", "peak", "output_dir"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if args.rules:
        cfg["rules"] = [r.strip() for item in args.rules for r in item.split(",") if r.strip()]
    if args.mask_frac is not None and args.mask_path:
        raise ConfigError("--mask-frac and --mask are mutually exclusive")
    if args.mask_frac is not None:
        cfg["mask"] = {"fraction": args.mask_frac, "seed": args.mask_seed if args.mask_seed is not None else cfg["seed"]}
    elif args.mask_path:
        cfg["mask"] = {"path": args.mask_path}
    if args.no_timing:
        cfg["timing"] = False
    return RunConfig.from_dict(cfg)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="betanmf", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write synthetic V, W*, H* as CSV")
    g.add_argument("--F", type=int, default=10)
    g.add_argument("--N", type=int, default=25)
    g.add_argument("--K", type=int, default=5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="data")

    _add_run_args(sub.add_parser("bench", help="sweep update rules from a shared initialization"), True)
    _add_run_args(sub.add_parser("factorize", help="run a single rule and save the factors"), False)
    _add_run_args(sub.add_parser("interpolate", help="masked run with held-out error and PSNR"), True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "gen":
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            V, W, H = gen_synthetic(args.F, args.N, args.K, args.seed)
            save_matrix(V, out / "V.csv")
            save_matrix(W, out / "W_true.csv")
            save_matrix(H, out / "H_true.csv")
            return 0
        cfg = config_from_args(args)
        return {"bench": bench, "factorize": factorize, "interpolate": interpolate}[args.command](cfg)
    except (ConfigError, MatrixFileError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
