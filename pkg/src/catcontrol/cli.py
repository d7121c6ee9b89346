"""Command-line entry points.

Every command writes its data products into ``--out`` together with a
``manifest.json`` recording the config hash, code version and seed.
Units: times in us (CSV columns in ns where stated), drives in rad/us.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys
import time

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .baseline_grape import (evaluate_controls, read_controls_csv, run_baseline,
                             write_controls_csv, write_timing_json)
from .config import ConfigError, RunConfig, apply_env_overrides, load_config
from .controller import (evaluate_model, generate_pulse, load_weights, save_weights, train)
from .dynamics import TimeGrid, corrected_fidelity, default_channels, lindblad_fidelity
from .tomography import (HeraldingSpec, OptimalSampling, UniformSquare, estimate_fidelity,
                         heralding_probabilities, prepare_state, read_samples_csv, run_tomography,
                         write_samples_csv)
from .hilbert import HilbertConfig, cat_state

log = logging.getLogger("catcontrol")


def _manifest(out, command, cfg: RunConfig, seed, outputs, extra=None):
    doc = {"command": command, "config_hash": cfg.digest(), "code_version": __version__,
           "seed": seed, "python": platform.python_version(), "numpy": np.__version__,
           "outputs": sorted(outputs), "config": cfg.model_dump(mode="json")}
    if extra:
        doc.update(extra)
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(doc, fh, indent=2)


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)


def _tasks(args):
    return [(float(a), float(args.phi)) for a in args.alpha]


def _check_range(cfg: RunConfig, alphas):
    box = 1.1 * cfg.curriculum.schedule(cfg.grid.train_intervals).alpha_box
    for a in alphas:
        if abs(a) > box:
            log.warning("alpha=%g lies outside the training range |alpha| <= %g", a, box)


# ---------------------------------------------------------------- commands

def cmd_train(args, cfg: RunConfig):
    schedule = cfg.curriculum.schedule(cfg.grid.train_intervals)
    model, rows = train(schedule, seed=args.seed, system=cfg.system.params(),
                        log_path=os.path.join(args.out, "log.csv"),
                        checkpoint_dir=os.path.join(args.out, "checkpoints"),
                        extension=cfg.sampler.extension)
    save_weights(os.path.join(args.out, "weights.json"), model)
    print(f"trained {len(rows)} batches, final batch loss {rows[-1][1]:.4f}")
    return ["weights.json", "log.csv", "checkpoints"]


def cmd_generate(args, cfg: RunConfig):
    model = load_weights(args.weights)
    tasks = _tasks(args)
    _check_range(cfg, [a for a, _ in tasks])
    grid = TimeGrid(cfg.grid.test_intervals, cfg.system.T)
    t0 = time.perf_counter()
    pulses = [generate_pulse(model, a, p, grid) for a, p in tasks]
    elapsed = time.perf_counter() - t0
    coeffs = [{"alpha": a, "phi": p, "units": "rad/us", "coefficients": c.ravel().tolist()}
              for (a, p), (c, _) in zip(tasks, pulses)]
    _write_json(os.path.join(args.out, "coefficients.json"), coeffs)
    with open(os.path.join(args.out, "waveforms.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "phi", "t_us", "reC", "imC", "reQ", "imQ"])
        for (a, p), (_, wave) in zip(tasks, pulses):
            for t, col in zip(grid.nodes, wave.T):
                w.writerow([a, p, repr(float(t))] + [repr(float(v)) for v in col])
    print(f"generated {len(tasks)} pulses in {elapsed:.4f} s")
    return ["coefficients.json", "waveforms.csv"], {"generation_s": elapsed}


def cmd_evaluate(args, cfg: RunConfig):
    params = cfg.system.params()
    channels = default_channels(params)
    rows = []
    for a, p in _tasks(args):
        if args.controls:
            ctrl = read_controls_csv(args.controls, params.T)
            f = evaluate_controls(ctrl, a, p, args.mode, params, args.n_fock, channels)
        else:
            model = load_weights(args.weights)
            grid = TimeGrid(cfg.grid.test_intervals, params.T)
            c, _ = generate_pulse(model, a, p, grid)
            n = args.n_fock or cfg.tomography.n_fock
            if args.mode == "lindblad":
                f = lindblad_fidelity(a, p, c, grid, params, channels, n)
            elif args.mode == "corrected":
                f = corrected_fidelity(a, p, c, grid, params, channels, n)[0]
            elif args.mode == "schrodinger":
                f = corrected_fidelity(a, p, c, grid, params, (), n)[1]
            else:
                raise ValueError(f"unknown mode {args.mode!r}")
        rows.append({"alpha": a, "phi": p, "mode": args.mode, "fidelity": f})
        print(f"alpha={a:g} phi={p:g} {args.mode} fidelity {f:.6f}")
    _write_json(os.path.join(args.out, "evaluation.json"), rows)
    return ["evaluation.json"]


def _strategy(cfg: RunConfig, alpha, phi, n_fock, kind):
    if kind == "optimal":
        return OptimalSampling.for_cat(alpha, phi, n_fock)
    ext = 2 * (abs(alpha) + 3.0)
    return UniformSquare(ext, ext, mode=cfg.tomography.uniform_mode)


def cmd_tomography(args, cfg: RunConfig):
    if args.heralding:
        t = cfg.tomography
        spec = HeraldingSpec(t.heralding_repeats, t.heralding_p0, t.heralding_p1,
                             t.heralding_threshold)
        pg, pe = heralding_probabilities(spec)
        print(f"P(accept | ground) = {pg:.6f}\nP(accept | excited) = {pe:.6f}")
        _write_json(os.path.join(args.out, "heralding.json"),
                    {"p_accept_ground": pg, "p_accept_excited": pe,
                     "spec": {"n_repeats": spec.n_repeats, "p0": spec.p0, "p1": spec.p1,
                              "threshold": spec.threshold}})
        return ["heralding.json"]
    alpha, phi = float(args.alpha[0]), float(args.phi)
    tcfg = cfg.tomography
    n_fock = tcfg.n_fock
    target = cat_state(alpha, phi, HilbertConfig(n_fock))
    strategy = _strategy(cfg, alpha, phi, n_fock, args.strategy or tcfg.strategy)
    if args.replay:
        betas, outcomes = read_samples_csv(args.replay)
        est = estimate_fidelity(betas, outcomes, strategy, args.contrast or 1.0, target)
        contrast = est.contrast
    else:
        params = cfg.system.params()
        model = tcfg.model(cfg.system)
        if args.weights:
            c, _ = generate_pulse(load_weights(args.weights), alpha, phi,
                                  TimeGrid(cfg.grid.test_intervals, params.T))
            rho = prepare_state(c, params, n_fock, model.n_th,
                                grid=TimeGrid(cfg.grid.test_intervals, params.T))
        else:
            rho = np.r_[target, np.zeros_like(target)]
        rng = np.random.default_rng(args.seed)
        betas, outcomes, contrast, est = run_tomography(rho, strategy, args.n or tcfg.n_samples,
                                                        model, rng, tcfg.mode, target)
        write_samples_csv(os.path.join(args.out, "samples.csv"), betas, outcomes)
    report = {"alpha": alpha, "phi": phi, "strategy": est.strategy, "value": est.value,
              "stderr": est.stderr, "n_samples": est.n_samples, "contrast": contrast}
    _write_json(os.path.join(args.out, "estimate.json"), report)
    print(f"F = {est.value:.4f} +- {est.stderr:.4f} ({est.strategy}, N={est.n_samples})")
    return ["estimate.json"] + ([] if args.replay else ["samples.csv"])


def cmd_grape(args, cfg: RunConfig):
    params = cfg.system.params()
    outs = []
    for a, p in _tasks(args):
        res = run_baseline(a, p, params, cfg.baseline.grape(args.seed), cfg.baseline.krotov(),
                           n_fock=cfg.baseline.n_fock)
        tag = f"a{a:g}_p{p:g}"
        write_controls_csv(os.path.join(args.out, f"grape_{tag}.csv"), res.grape)
        write_controls_csv(os.path.join(args.out, f"controls_{tag}.csv"), res.final)
        write_timing_json(os.path.join(args.out, f"timing_{tag}.json"), res)
        outs += [f"grape_{tag}.csv", f"controls_{tag}.csv", f"timing_{tag}.json"]
        print(f"alpha={a:g} phi={p:g} fidelity {res.fidelity:.4f} in {res.timings['total_s']:.1f} s")
    return outs


def cmd_benchmark(args, cfg: RunConfig):
    params = cfg.system.params()
    model = load_weights(args.weights)
    tasks = _tasks(args)
    grid = TimeGrid(cfg.grid.test_intervals, params.T)
    t0 = time.perf_counter()
    for a, p in tasks:
        generate_pulse(model, a, p, grid)
    nn_time = (time.perf_counter() - t0) / len(tasks)
    nn_fid, _ = evaluate_model(model, tasks, params, n_fock=cfg.tomography.n_fock, grid=grid)
    rows = []
    for (a, p), fnn in zip(tasks, nn_fid):
        tag = f"a{a:g}_p{p:g}"
        cached = args.baseline_dir and os.path.join(args.baseline_dir, f"timing_{tag}.json")
        if cached and os.path.exists(cached):
            with open(cached) as fh:
                rec = json.load(fh)
            fb, tb = rec["fidelity"], rec["timings_s"]["total_s"]
        else:
            res = run_baseline(a, p, params, cfg.baseline.grape(args.seed), cfg.baseline.krotov(),
                               n_fock=cfg.baseline.n_fock)
            write_timing_json(os.path.join(args.out, f"timing_{tag}.json"), res)
            fb, tb = res.fidelity, res.timings["total_s"]
        rows.append({"alpha": a, "phi": p, "nn_fidelity": float(fnn), "baseline_fidelity": fb,
                     "gap": fb - float(fnn), "nn_time_s": nn_time, "baseline_time_s": tb,
                     "speedup": tb / nn_time})
    _write_json(os.path.join(args.out, "benchmark.json"), rows)
    with open(os.path.join(args.out, "benchmark.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(f"alpha={r['alpha']:g} NN {r['nn_fidelity']:.4f} baseline {r['baseline_fidelity']:.4f} "
              f"speedup {r['speedup']:.3g}")
    return ["benchmark.json", "benchmark.csv"]


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--threads", type=int, default=None, help="BLAS thread count")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("-v", "--verbose", action="store_true")

    def tasks(p, multi=True):
        p.add_argument("--alpha", type=float, nargs="+" if multi else 1, required=True)
        p.add_argument("--phi", type=float, default=0.0)

    ap = argparse.ArgumentParser(prog="catcontrol", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train the pulse network")
    p = sub.add_parser("generate", parents=[common], help="generate pulses from weights")
    p.add_argument("--weights", required=True)
    tasks(p)
    p = sub.add_parser("evaluate", parents=[common], help="simulate the fidelity of a pulse")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--weights")
    src.add_argument("--controls", help="controls CSV (t_ns, reC, imC, reQ, imQ)")
    p.add_argument("--mode", choices=["schrodinger", "lindblad", "corrected"], default="corrected")
    p.add_argument("--n-fock", type=int, default=None)
    tasks(p)
    p = sub.add_parser("tomography", parents=[common], help="simulated Wigner tomography")
    p.add_argument("--weights", help="prepare the state with this network (default: ideal cat)")
    p.add_argument("--strategy", choices=["optimal", "uniform"])
    p.add_argument("--n", type=int)
    p.add_argument("--replay", help="recompute the estimate from a samples CSV")
    p.add_argument("--contrast", type=float, help="contrast used with --replay")
    p.add_argument("--heralding", action="store_true", help="print heralding acceptance probabilities")
    p.add_argument("--alpha", type=float, nargs=1, default=[1.0])
    p.add_argument("--phi", type=float, default=0.0)
    p = sub.add_parser("grape", parents=[common], help="GRAPE + Krotov baseline")
    tasks(p)
    p = sub.add_parser("benchmark", parents=[common], help="NN vs baseline timing and fidelity")
    p.add_argument("--weights", required=True)
    p.add_argument("--baseline-dir", help="reuse timing_*.json records from a grape run")
    tasks(p)
    return ap


COMMANDS = {"train": cmd_train, "generate": cmd_generate, "evaluate": cmd_evaluate,
            "tomography": cmd_tomography, "grape": cmd_grape, "benchmark": cmd_benchmark}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        cfg = apply_env_overrides(load_config(args.config))
    except (ConfigError, OSError) as exc:
        print(f"config error:\n{exc}", file=sys.stderr)
        return 2
    if args.seed is None:
        args.seed = cfg.seed
    if args.seed < 0:
        print("--seed must be non-negative", file=sys.stderr)
        return 2
    args.out = args.out or cfg.output_dir
    os.makedirs(args.out, exist_ok=True)
    threads = args.threads or int(os.environ.get("CATCONTROL_THREADS", 0)) or None
    try:
        with threadpool_limits(limits=threads):
            result = COMMANDS[args.command](args, cfg)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    outputs, extra = result if isinstance(result, tuple) else (result, None)
    _manifest(args.out, args.command, cfg, args.seed, outputs, extra)
    return 0


if __name__ == "__main__":
    sys.exit(main())
