"""Command-line runner: ``ergoloop {simulate,ensemble,certify,reproduce}``.

Exit codes: 0 success, 2 configuration error, 3 runtime or model error.
Every CSV starts with ``# config_digest=`` and ``# seed=`` comment lines.
"""

import argparse
import copy
import sys
from pathlib import Path

from .analysis import (
    INCONCLUSIVE,
    Certificate,
    build_finite_chain,
    chain_ergodicity_verdict,
    ensemble,
    ic_dependence_test,
    nonergodicity_certificate,
    verify_lemma1,
    verify_theorem1,
)
from .config import (
    DEFAULT_K_MAX,
    DEFAULT_M_MAX,
    ExperimentConfig,
    bundled_config_path,
    load_config,
    to_floats,
)
from .errors import ConfigError, ErgoloopError
from .loop import simulate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

BUNDLED_PREFIX = "bundled:"
FIGURES = {"fig2": "ex1", "fig3": "ex2", "fig456": "pivslag"}


def _load(spec, args):
    if spec.startswith(BUNDLED_PREFIX):
        path = bundled_config_path(spec[len(BUNDLED_PREFIX) :])
    else:
        path = Path(spec)
    cfg = load_config(path)
    raw = copy.deepcopy(cfg.raw)
    run = raw.setdefault("run", {})
    for key in ("seed", "realizations", "horizon"):
        value = getattr(args, key, None)
        if value is not None:
            run[key] = value
    if run.get("burn_in", 0) > run.get("horizon", 100):
        run["burn_in"] = run.get("horizon", 100) // 2
    return ExperimentConfig(raw, cfg.path)


def _variants(cfg, args):
    names = cfg.variant_names
    if getattr(args, "variant", None):
        if args.variant not in names:
            raise ConfigError(f"unknown variant {args.variant!r}; have {names}")
        names = [args.variant]
    return names


def _stem(cfg, variant):
    return cfg.name if variant is None else f"{cfg.name}_{variant}"


def _safe(label):
    return "".join(ch if ch.isalnum() or ch in "-_=." else "_" for ch in label)


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _note(path):
    print(f"wrote {path}")


def cmd_simulate(args):
    cfg = _load(args.config, args)
    out = _out_dir(args)
    for variant in _variants(cfg, args):
        loop = cfg.build_loop(variant)
        trace = simulate(
            loop, cfg.simulate_initial(loop), cfg.horizon, cfg.seed, digest=cfg.digest
        )
        path = out / f"{_stem(cfg, variant)}_trace.csv"
        trace.to_csv(path)
        _note(path)
        final = ", ".join(format(v, "g") for v in trace.x[-1])
        print(f"{_stem(cfg, variant)}: final agent state ({final})")
    return EXIT_OK


def _run_ensemble(cfg, variant):
    loop = cfg.build_loop(variant)
    return ensemble(
        loop,
        cfg.initial_conditions(loop),
        cfg.realizations,
        cfg.horizon,
        cfg.seed,
        burn_in=cfg.burn_in,
        digest=cfg.digest,
    )


def _write_ensemble(cfg, variant, stats, out):
    stem = _stem(cfg, variant)
    path = out / f"{stem}_ensemble.csv"
    # sweeps report the two groups only; listed conditions also get agents and trajectories
    listed = "initial_conditions" in cfg.run
    stats.to_csv(path, agents=listed)
    _note(path)
    paths = {}
    if listed:
        for label in stats.labels:
            p = out / f"{stem}_trajectory_{_safe(label)}.csv"
            stats.trajectory_csv(label, p)
            _note(p)
            paths[label] = p
    test = cfg.analysis.get("ic_test")
    if test:
        res = ic_dependence_test(stats, tuple(test["a"]), tuple(test["b"]), cfg.threshold)
        print(f"{stem}: ic_test.verdict = {res.verdict}")
        print(f"{stem}: ic_test.difference = {res.difference:.17g}")
        print(f"{stem}: ic_test.combined_se = {res.combined_se:.17g}")
    return path, paths


def cmd_ensemble(args):
    cfg = _load(args.config, args)
    out = _out_dir(args)
    for variant in _variants(cfg, args):
        _write_ensemble(cfg, variant, _run_ensemble(cfg, variant), out)
    return EXIT_OK


def certificates_for(cfg, variant):
    """Run the certificates listed under ``analysis.certificates`` for one variant."""
    loop = cfg.build_loop(variant)
    kinds = cfg.analysis.get("certificates", ["theorem1", "theorem3"])
    certs = []
    for kind in kinds:
        if kind == "theorem1":
            certs.append(verify_theorem1(loop, m_max=cfg.analysis.get("m_max", DEFAULT_M_MAX)))
        elif kind == "theorem3":
            certs.append(
                nonergodicity_certificate(loop, k_max=cfg.analysis.get("k_max", DEFAULT_K_MAX))
            )
        elif kind == "finite-chain":
            try:
                certs.append(chain_ergodicity_verdict(build_finite_chain(loop)))
            except ErgoloopError as exc:
                certs.append(Certificate("finite-chain", INCONCLUSIVE, {}, [str(exc)]))
        else:
            spec = cfg.analysis.get("lemma1")
            if spec is None:
                raise ConfigError("lemma1 certificate needs [analysis.lemma1] mats and lyap")
            certs.append(
                verify_lemma1(
                    [to_floats(m) for m in spec["mats"]], [to_floats(p) for p in spec["lyap"]]
                )
            )
    return certs


def cmd_certify(args):
    cfg = _load(args.config, args)
    out = _out_dir(args)
    for variant in _variants(cfg, args):
        stem = _stem(cfg, variant)
        lines = [f"# config_digest={cfg.digest}", f"# seed={cfg.seed}"]
        if variant is not None:
            lines.append(f"variant = {variant}")
        for i, cert in enumerate(certificates_for(cfg, variant)):
            lines.append(cert.to_text(prefix=f"certificate.{i + 1}.").rstrip("\n"))
        text = "\n".join(lines) + "\n"
        sys.stdout.write(text)
        path = out / f"{stem}_certificates.txt"
        path.write_text(text)
        _note(path)
    return EXIT_OK


def _reproduce_fig2(cfg, out):
    chain = build_finite_chain(cfg.build_loop())
    labels = ["".join(str(v) for v in s) for s in chain.states]
    mat = chain.exact_matrix()
    print("transition matrix (rows: from, columns: to)")
    print("      " + "  ".join(f"{lab:>5}" for lab in labels))
    for lab, row in zip(labels, mat):
        print(f"{lab:>5} " + "  ".join(f"{str(p):>5}" for p in row))
    path = out / "fig2_transitions.csv"
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_digest={cfg.digest}\n# seed={cfg.seed}\n")
        fh.write("from,to,probability\n")
        for lab, row in zip(labels, mat):
            for to, p in zip(labels, row):
                fh.write(f"{lab},{to},{p}\n")
    _note(path)
    verdict = chain_ergodicity_verdict(chain)
    sys.stdout.write(verdict.to_text())


def _reproduce_fig3(cfg, out):
    stats = _run_ensemble(cfg, None)
    path, _ = _write_ensemble(cfg, None, stats, out)
    plot = out / "fig3_plot.csv"
    with open(plot, "w", newline="") as fh:
        fh.write(f"# config_digest={cfg.digest}\n# seed={cfg.seed}\n")
        fh.write("series,x,y\n")
        for group in ("init=1", "init=0"):
            for res in stats.results:
                if group in res.groups:
                    fh.write(f"{group},{res.label},{res.groups[group][0]:.17g}\n")
    _note(plot)


def _reproduce_fig456(cfg, out):
    rows = []
    for variant in cfg.variant_names:
        stats = _run_ensemble(cfg, variant)
        _write_ensemble(cfg, variant, stats, out)
        for res in stats.results:
            series = {
                "ybar": res.mean_y,
                "x1bar": res.mean_x1,
                "xcbar": res.mean_xc[:, 0] if res.mean_xc.shape[1] else None,
            }
            for name, values in series.items():
                if values is None:
                    continue
                rows.extend(
                    f"{variant}/{res.label}/{name},{k},{v:.17g}\n" for k, v in enumerate(values)
                )
    plot = out / "fig456_plot.csv"
    with open(plot, "w", newline="") as fh:
        fh.write(f"# config_digest={cfg.digest}\n# seed={cfg.seed}\n")
        fh.write("series,x,y\n")
        fh.writelines(rows)
    _note(plot)


def cmd_reproduce(args):
    spec = args.config or BUNDLED_PREFIX + FIGURES[args.figure]
    cfg = _load(spec, args)
    out = _out_dir(args)
    {"fig2": _reproduce_fig2, "fig3": _reproduce_fig3, "fig456": _reproduce_fig456}[
        args.figure
    ](cfg, out)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ergoloop",
        description="Simulate and certify ergodicity of feedback loops over stochastic agents.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument(
            "--config",
            required=config_required,
            help=f"config file, or {BUNDLED_PREFIX}NAME for a bundled one (ex1, ex2, pivslag, schur)",
        )
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", default=".", help="output directory (default: current)")
        p.add_argument("--realizations", type=int, help="Monte Carlo realizations per initial condition")
        p.add_argument("--horizon", type=int, help="number of steps")
        p.add_argument("--variant", help="run only this variant of the config")

    common(sub.add_parser("simulate", help="write one trace per variant"))
    common(sub.add_parser("ensemble", help="Monte Carlo time averages and mean trajectories"))
    common(sub.add_parser("certify", help="run the configured ergodicity certificates"))
    rep = sub.add_parser("reproduce", help="regenerate figure data from bundled configs")
    rep.add_argument("--figure", required=True, choices=sorted(FIGURES))
    common(rep, config_required=False)
    return parser


COMMANDS = {
    "simulate": cmd_simulate,
    "ensemble": cmd_ensemble,
    "certify": cmd_certify,
    "reproduce": cmd_reproduce,
}


def _check_overrides(args):
    for key in ("realizations", "horizon", "seed"):
        value = getattr(args, key, None)
        if value is not None and value < (1 if key == "realizations" else 0):
            raise ConfigError(f"--{key} must be {'positive' if key == 'realizations' else 'non-negative'}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        _check_overrides(args)
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"ergoloop: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ErgoloopError, ValueError, TypeError, IndexError, ArithmeticError, OSError) as exc:
        print(f"ergoloop: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
