"""Experiment driver: generate data, train, evaluate, compare, benchmark.

Subcommands
-----------
``gen``        build train/test datasets from a config (and print corpus stats)
``train``      fit the configured architecture on a generated dataset
``eval``       score a stored model against a dataset, dump report + figures
``compare``    run several configs and tabulate final errors side by side
``grad-check`` verify analytic gradients against central differences
``bench-fft``  time the direct vs fast full-trajectory causal evaluation

Exit codes: 0 ok, 2 config error, 3 numerical failure during generation,
4 training divergence, 5 architecture/dataset mismatch.  Commands echo a
``resolved_config.ini`` into their output directory for provenance; all
randomness is seeded from the config (or ``--seed``).
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
import time
from dataclasses import dataclass

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_DIVERGENCE = 4
EXIT_MISMATCH = 5


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Parsed and validated experiment file (see configs/*.ini)."""

    system_file: str
    count: int
    test_count: int
    duration: float
    dt: float
    band: tuple
    pga: tuple                # ("fixed", value) or ("uniform", low, high)
    seed: int
    test_seed: int
    units: str
    solver: str
    dof: int
    response_scale: float
    response_units: str
    architecture: str
    branch_dims: list
    trunk_dims: list
    activation: str
    scales: list | None
    pod_modes: int
    output_bias: bool
    loss: str
    epochs: int
    schedule: list            # [(threshold, rate), ...]
    l2_branch: float
    l2_trunk: float
    dropout_branch: float
    dropout_trunk: float
    normalization: str
    batch: object
    include_ic_pair: bool
    train_seed: int
    out_dir: str
    raw: configparser.ConfigParser = None


def _parse_schedule(text: str):
    points = []
    for part in text.split():
        thr, rate = part.split(":")
        points.append((int(thr), float(rate)))
    return points


def _parse_pga(text: str):
    parts = text.split()
    if parts[0] == "fixed" and len(parts) == 2:
        return ("fixed", float(parts[1]))
    if parts[0] == "uniform" and len(parts) == 3:
        return ("uniform", float(parts[1]), float(parts[2]))
    raise ConfigError(f"bad pga spec {text!r} (use 'fixed V' or 'uniform LO HI')")


def load_config(path) -> ExperimentConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.read(path)
    try:
        sig = cp["signals"]
        sol = cp["solver"]
        arch = cp["architecture"]
        tr = cp["training"]
        cfg = ExperimentConfig(
            system_file=cp["system"]["file"],
            count=sig.getint("count"),
            test_count=sig.getint("test_count", fallback=0),
            duration=sig.getfloat("duration"),
            dt=sig.getfloat("dt"),
            band=tuple(float(v) for v in sig["band"].split()),
            pga=_parse_pga(sig["pga"]),
            seed=sig.getint("seed"),
            test_seed=sig.getint("test_seed", fallback=sig.getint("seed") + 1),
            units=sig.get("units", fallback="g"),
            solver=sol.get("kind", fallback="duhamel"),
            dof=sol.getint("dof", fallback=0),
            response_scale=sol.getfloat("response_scale", fallback=1.0),
            response_units=sol.get("response_units", fallback="m"),
            architecture=arch["kind"],
            branch_dims=[int(v) for v in arch["branch"].split()],
            trunk_dims=[int(v) for v in arch.get("trunk", fallback="").split()],
            activation=arch.get("activation", fallback="tanh"),
            scales=[float(v) for v in arch["scales"].split()] if arch.get("scales") else None,
            pod_modes=arch.getint("pod_modes", fallback=0),
            output_bias=arch.getboolean("output_bias", fallback=False),
            loss=tr.get("loss", fallback="weighted_mse"),
            epochs=tr.getint("epochs"),
            schedule=_parse_schedule(tr["schedule"]),
            l2_branch=tr.getfloat("l2_branch", fallback=0.0),
            l2_trunk=tr.getfloat("l2_trunk", fallback=0.0),
            dropout_branch=tr.getfloat("dropout_branch", fallback=0.0),
            dropout_trunk=tr.getfloat("dropout_trunk", fallback=0.0),
            normalization=tr.get("normalization", fallback="none"),
            batch=tr.get("batch", fallback="full"),
            include_ic_pair=tr.getboolean("include_ic_pair", fallback=False),
            train_seed=tr.getint("seed", fallback=0),
            out_dir=cp["output"]["dir"],
            raw=cp,
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad config {path}: {exc}") from exc
    if cfg.batch != "full":
        try:
            cfg.batch = int(cfg.batch)
        except ValueError as exc:
            raise ConfigError("training batch must be 'full' or an integer") from exc
    if len(cfg.band) != 2:
        raise ConfigError("band needs exactly two edge frequencies")
    if cfg.solver not in ("duhamel", "newmark", "nonclassical"):
        raise ConfigError(f"unknown solver {cfg.solver!r}")
    return cfg


def _echo_config(cfg: ExperimentConfig, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "resolved_config.ini"), "w") as fh:
        cfg.raw.write(fh)


def _dataset_dirs(cfg: ExperimentConfig, data_override):
    base = data_override or os.path.join(cfg.out_dir, "data")
    return base, os.path.join(base, "train"), os.path.join(base, "test")


# ---------------------------------------------------------------------------
# commands


def cmd_gen(cfg: ExperimentConfig, data_dir=None, seed=None) -> int:
    import numpy as np

    from . import lindyn, signalgen

    if seed is not None:
        cfg.seed = seed
        cfg.test_seed = seed + 1
    try:
        spec = lindyn.load_system(cfg.system_file)
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    base, train_dir, test_dir = _dataset_dirs(cfg, data_dir)
    try:
        if cfg.solver == "duhamel":
            if spec.modal_xi is None:
                print("config error: duhamel solver needs modal_xi or rayleigh damping", file=sys.stderr)
                return EXIT_CONFIG
            model = lindyn.modal_decompose(spec.system, spec.modal_xi)
        elif cfg.solver == "nonclassical":
            model = lindyn.state_eigen(spec.system)
        else:
            model = spec.system

        def corpus(count, master_seed, name, out_dir):
            rng = np.random.default_rng(master_seed)
            sub_seeds = rng.integers(0, 2**31, size=count)
            signals = []
            for i in range(count):
                if cfg.pga[0] == "fixed":
                    pga = cfg.pga[1]
                else:
                    pga = rng.uniform(cfg.pga[1], cfg.pga[2])
                signals.append(
                    signalgen.synth_ground_motion(
                        int(sub_seeds[i]), cfg.duration, cfg.dt, cfg.band, pga, units=cfg.units
                    )
                )
            ds = signalgen.build_dataset(
                model, cfg.dof, signals, cfg.solver,
                meta={"seed": master_seed, "system": os.path.basename(cfg.system_file), "corpus": name},
            )
            if cfg.response_scale != 1.0:
                from dataclasses import replace

                ds.outputs = [
                    replace(o, samples=o.samples * cfg.response_scale, units=cfg.response_units)
                    for o in ds.outputs
                ]
            signalgen.save_dataset(ds, out_dir)
            return ds

        train_ds = corpus(cfg.count, cfg.seed, "train", train_dir)
        if cfg.test_count:
            corpus(cfg.test_count, cfg.test_seed, "test", test_dir)
    except (lindyn.EigenFailureError, lindyn.NumericalError, lindyn.InvalidSystemError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    _echo_config(cfg, base)
    print(f"wrote {cfg.count} train + {cfg.test_count} test records to {base}")
    if len(train_ds):
        stats = signalgen.compute_stats(train_ds.inputs)
        print(f"train corpus statistics [{cfg.units}]:")
        print(f"{'quantity':<10}{'min':>12}{'max':>12}{'mean':>12}{'sd':>12}")
        for name in ("pga", "max_acc", "min_acc", "energy"):
            fs = getattr(stats, name)
            print(f"{name:<10}{fs.min:>12.5f}{fs.max:>12.5f}{fs.mean:>12.5f}{fs.sd:>12.5f}")
    return EXIT_OK


def _train_config(cfg: ExperimentConfig, seed=None):
    from .neuralcore import LrSchedule, RegConfig
    from .harness import TrainConfig

    return TrainConfig(
        architecture=cfg.architecture,
        branch_dims=cfg.branch_dims,
        trunk_dims=cfg.trunk_dims,
        activation=cfg.activation,
        scales=cfg.scales,
        pod_modes=cfg.pod_modes,
        use_output_bias=cfg.output_bias,
        loss=cfg.loss,
        schedule=LrSchedule(cfg.schedule),
        epochs=cfg.epochs,
        reg=RegConfig(
            l2_branch=cfg.l2_branch,
            l2_trunk=cfg.l2_trunk,
            dropout_branch=cfg.dropout_branch,
            dropout_trunk=cfg.dropout_trunk,
        ),
        seed=cfg.train_seed if seed is None else seed,
        normalization=cfg.normalization,
        batch=cfg.batch,
        include_ic_pair=cfg.include_ic_pair,
    )


def _save_norm(norm, path) -> None:
    import numpy as np

    np.savetxt(path, np.vstack([norm.mu_in, norm.sd_in, norm.mu_out, norm.sd_out]), delimiter=",")


def _load_norm(path):
    import numpy as np

    from .harness import NormStats

    rows = np.loadtxt(path, delimiter=",")
    return NormStats(mu_in=rows[0], sd_in=rows[1], mu_out=rows[2], sd_out=rows[3])


def cmd_train(cfg: ExperimentConfig, data_dir=None, out_dir=None, seed=None) -> int:
    from . import figures, harness, operatornets, signalgen

    base, train_dir, test_dir = _dataset_dirs(cfg, data_dir)
    out = out_dir or os.path.join(cfg.out_dir, "run")
    try:
        train_ds = signalgen.load_dataset(train_dir)
        test_ds = signalgen.load_dataset(test_dir)
    except (OSError, signalgen.DatasetFormatError) as exc:
        print(f"config error: cannot load dataset: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        tcfg = _train_config(cfg, seed)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if tcfg.branch_dims[0] != train_ds.m:
        print(
            f"config error: branch input width {tcfg.branch_dims[0]} != dataset m {train_ds.m}",
            file=sys.stderr,
        )
        return EXIT_CONFIG
    try:
        model, history = harness.train(tcfg, train_ds, test_ds)
    except harness.DivergenceError as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    os.makedirs(out, exist_ok=True)
    operatornets.save_model(model, os.path.join(out, "model_final.ckpt"))
    if history.best_model is not None:
        operatornets.save_model(history.best_model, os.path.join(out, "model_best.ckpt"))
    harness.save_history(history, os.path.join(out, "history.csv"))
    figures.save_history_figure(
        history, os.path.join(out, "history.png"), title=f"{cfg.architecture} ({cfg.activation})"
    )
    if history.norm is not None:
        _save_norm(history.norm, os.path.join(out, "norm.csv"))
    _echo_config(cfg, out)
    print(
        f"{cfg.architecture}: final train rel L2 {history.train_rel_l2[-1]:.4f}, "
        f"test rel L2 {history.test_rel_l2[-1]:.4f} "
        f"(best test {history.best_test_rel_l2:.4f} at epoch {history.best_epoch}, "
        f"{history.wall_clock:.1f}s)"
    )
    return EXIT_OK


def cmd_eval(model_path, data_dir, out_dir) -> int:
    from . import figures, harness, operatornets, signalgen

    try:
        model = operatornets.load_model(model_path)
    except (OSError, ValueError) as exc:
        print(f"config error: cannot load model: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    ds_dir = data_dir
    if os.path.isdir(os.path.join(data_dir, "test")):
        ds_dir = os.path.join(data_dir, "test")
    try:
        ds = signalgen.load_dataset(ds_dir)
    except (OSError, signalgen.DatasetFormatError) as exc:
        print(f"config error: cannot load dataset: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    expected = getattr(model, "m", None) or model.branch.dims[0]
    if expected != ds.m:
        print(
            f"mismatch: model expects {expected} samples per record, dataset has {ds.m}",
            file=sys.stderr,
        )
        return EXIT_MISMATCH
    norm = None
    norm_path = os.path.join(os.path.dirname(model_path), "norm.csv")
    if os.path.exists(norm_path):
        norm = _load_norm(norm_path)
    report = harness.evaluate(model, ds, norm=norm)
    out = out_dir or os.path.join(os.path.dirname(model_path) or ".", "eval")
    os.makedirs(out, exist_ok=True)
    harness.write_report(report, out)
    figures.save_report_figures(report, out)
    print(
        f"evaluated {len(report.rel_l2)} samples: mean rel L2 {report.rel_l2.mean():.4f}, "
        f"best #{report.best_id} ({report.rel_l2[report.best_id]:.4g}), "
        f"worst #{report.worst_id} ({report.rel_l2[report.worst_id]:.4g})"
    )
    return EXIT_OK


def cmd_compare(config_paths, out_dir, seed=None) -> int:
    from . import figures

    rows = []
    for path in config_paths:
        cfg = load_config(path)
        label = os.path.splitext(os.path.basename(path))[0]
        base, train_dir, test_dir = _dataset_dirs(cfg, None)
        if not os.path.isdir(train_dir):
            code = cmd_gen(cfg)
            if code != EXIT_OK:
                return code
        run_dir = os.path.join(cfg.out_dir, "run")
        code = cmd_train(cfg, seed=seed)
        if code != EXIT_OK:
            return code
        import numpy as np

        hist = np.genfromtxt(os.path.join(run_dir, "history.csv"), delimiter=",", names=True)
        rows.append(
            {
                "label": label,
                "architecture": cfg.architecture,
                "branch": "x".join(str(v) for v in cfg.branch_dims),
                "trunk": "x".join(str(v) for v in cfg.trunk_dims),
                "loss": cfg.loss,
                "samples": cfg.count,
                "seed": cfg.train_seed if seed is None else seed,
                "train_rel_l2": float(np.atleast_1d(hist["train_rel_l2"])[-1]),
                "test_rel_l2": float(np.atleast_1d(hist["test_rel_l2"])[-1]),
            }
        )
    os.makedirs(out_dir, exist_ok=True)
    table = os.path.join(out_dir, "compare.csv")
    with open(table, "w") as fh:
        fh.write("label,architecture,branch,trunk,loss,samples,seed,train_rel_l2,test_rel_l2\n")
        for r in rows:
            fh.write(
                "%s,%s,%s,%s,%s,%d,%d,%.17g,%.17g\n"
                % (
                    r["label"], r["architecture"], r["branch"], r["trunk"], r["loss"],
                    r["samples"], r["seed"], r["train_rel_l2"], r["test_rel_l2"],
                )
            )
    figures.save_compare_figure(rows, os.path.join(out_dir, "compare.png"))
    print(f"wrote {len(rows)} comparison rows to {table}")
    for r in rows:
        print(
            f"  {r['label']:<24} {r['architecture']:<18} "
            f"train {r['train_rel_l2']:.4f}  test {r['test_rel_l2']:.4f}"
        )
    return EXIT_OK


def cmd_grad_check(seed: int) -> int:
    import numpy as np

    from .neuralcore import ACTIVATION_NAMES, gradient_check, init_mlp

    rng = np.random.default_rng(seed)
    worst_overall = 0.0
    for kind in ACTIVATION_NAMES:
        net = init_mlp([3, 5, 5, 2], kind, rng)
        x = rng.standard_normal(3)
        if kind == "relu":  # keep pre-activations away from the kink
            x = x + np.sign(x) * 1e-2
        err = gradient_check(net, x, rng=rng)
        worst_overall = max(worst_overall, err)
        print(f"{kind:<16} max gradient mismatch {err:.3e}")
    if worst_overall > 1e-5:
        print("gradient check FAILED", file=sys.stderr)
        return 1
    print("gradient check passed (threshold 1e-5)")
    return EXIT_OK


def cmd_bench_fft(sizes, seed: int) -> int:
    import numpy as np

    from .neuralcore import init_mlp
    from .operatornets import CausalityModel, causality_forward_all

    rng = np.random.default_rng(seed)
    crossover = None
    print(f"{'m':>6}{'direct [ms]':>14}{'fast [ms]':>12}{'max |diff|':>14}")
    for m in sizes:
        branch = init_mlp([m, 40, 40, 40], "tanh", rng)
        trunk = init_mlp([1, 40, 40, 40], "tanh", rng)
        model = CausalityModel(branch=branch, trunk=trunk, dt=0.02, m=m)
        u = rng.standard_normal(m)
        t0 = time.perf_counter()
        direct = causality_forward_all(model, u, fast=False)
        t_direct = (time.perf_counter() - t0) * 1000
        t0 = time.perf_counter()
        fast = causality_forward_all(model, u, fast=True)
        t_fast = (time.perf_counter() - t0) * 1000
        diff = float(np.abs(direct - fast).max())
        print(f"{m:>6}{t_direct:>14.2f}{t_fast:>12.2f}{diff:>14.3e}")
        if crossover is None and t_fast < t_direct:
            crossover = m
    if crossover is not None:
        print(f"fast path cheaper from m = {crossover} in this sweep")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="responet",
        description="Causal response operator experiments: data generation, training, evaluation.",
    )
    parser.add_argument("--threads", type=int, default=None, help="cap BLAS thread count")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate train/test datasets from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--data", default=None, help="override dataset directory")
    p.add_argument("--seed", type=int, default=None, help="override signal master seed")

    p = sub.add_parser("train", help="train the configured architecture")
    p.add_argument("--config", required=True)
    p.add_argument("--data", default=None, help="dataset directory (from gen)")
    p.add_argument("--out", default=None, help="override run output directory")
    p.add_argument("--seed", type=int, default=None, help="override training seed")

    p = sub.add_parser("eval", help="evaluate a stored model on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)

    p = sub.add_parser("compare", help="run several configs and tabulate the results")
    p.add_argument("configs", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("grad-check", help="verify analytic gradients")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("bench-fft", help="time direct vs fast causal evaluation")
    p.add_argument("--sizes", type=int, nargs="+", default=[256, 512, 1024, 2048])
    p.add_argument("--seed", type=int, default=0)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        if args.command == "gen":
            return cmd_gen(load_config(args.config), data_dir=args.data, seed=args.seed)
        if args.command == "train":
            return cmd_train(load_config(args.config), data_dir=args.data, out_dir=args.out, seed=args.seed)
        if args.command == "eval":
            return cmd_eval(args.model, args.data, args.out)
        if args.command == "compare":
            return cmd_compare(args.configs, args.out, seed=args.seed)
        if args.command == "grad-check":
            return cmd_grad_check(args.seed)
        if args.command == "bench-fft":
            return cmd_bench_fft(args.sizes, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_CONFIG  # pragma: no cover


if __name__ == "__main__":
    sys.exit(main())
