"""Command-line entry point.

    effgram dataset  --config run.json --out runs/a
    effgram train    --config run.json --out runs/a --jobs 4
    effgram analyze  --out runs/a [--method magnus2] [--from-step 2000]
    effgram spectrum --out runs/a [--kernel runs/a/K.json]
    effgram oracle   --n 8 --horizon 10
    effgram report   --out runs

Exit status: 0 success, 2 configuration or input error, 3 training
divergence, 4 missing or inconsistent artifacts.
"""
import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import artifacts, config, data, gram, oracle, pipeline, plotting, spectral, traj
from .errors import EffgramError, InputError, IntegrityError

log = logging.getLogger("effgram")

REPORT_COLUMNS = ("run",) + pipeline.TABLE_COLUMNS + ("interpolating", "horizon", "prediction")


def _load_config(args):
    cfg = config.load(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "method", None):
        cfg = replace(cfg, analysis=replace(cfg.analysis, method=args.method))
    return cfg


def _out_dir(args, cfg=None):
    out = args.out or (cfg.out if cfg is not None else None)
    if not out:
        raise InputError("no output directory: pass --out or set 'out' in the config")
    return Path(out)


def _record_index(step, stride):
    if step % stride:
        raise InputError(f"--from-step {step} is not a multiple of the record stride {stride}")
    return step // stride


def _write_dataset(rd, cfg):
    S, S_test = config.build_dataset(cfg.dataset)
    if S.input_dim != cfg.model.input_dim or S.output_dim != cfg.model.output_dim:
        raise InputError(f"model widths {cfg.model.widths} do not fit the dataset "
                         f"({S.input_dim} inputs, {S.output_dim} outputs)")
    artifacts.write_dataset(rd, S, S_test)
    return S, S_test


def cmd_dataset(args):
    cfg = _load_config(args)
    rd = artifacts.RunDir(_out_dir(args, cfg))
    S, S_test = _write_dataset(rd, cfg)
    rd.manifest["config"] = cfg.to_dict()
    rd.save()
    print(f"dataset,{S.kind},n={S.n},n_test={0 if S_test is None else S_test.n},"
          f"digest={S.digest()[:16]}")
    return 0


def cmd_train(args):
    cfg = _load_config(args)
    rd = artifacts.RunDir(_out_dir(args, cfg))
    S, _ = _write_dataset(rd, cfg)
    a = cfg.analysis
    plan = data.leave_out_plan(S.n, a.m, a.num_batches, seed=a.plan_seed)
    from_record = None
    if args.from_step is not None:
        from_record = _record_index(args.from_step, cfg.training.stride)
    rd.drop("traj/")
    rd.drop("factors.csv")
    full, leave_outs = pipeline.run_training(cfg.model, S, cfg.training, plan,
                                             jobs=args.jobs, from_record=from_record)
    artifacts.write_plan(rd, plan)
    for rec in [full] + leave_outs:
        artifacts.write_trajectory(rd, rec)
    rd.manifest["config"] = cfg.to_dict()
    rd.manifest["training"] = {"records": len(full), "leave_out_start_step": int(leave_outs[0].steps[0]),
                               "final_train_loss": float(full.train_loss[-1])}
    rd.save()
    print(f"train,records={len(full)},batches={plan.num_batches},"
          f"final_loss={float(full.train_loss[-1])!r}")
    return 0


def _open_run(path):
    rd = artifacts.RunDir.open(path)
    if "config" not in rd.manifest:
        raise IntegrityError(f"{rd.root}: manifest has no config")
    cfg = config.from_dict(rd.manifest["config"])
    return rd, cfg


def cmd_analyze(args):
    if not args.out:
        raise InputError("analyze needs --out pointing at a trained run directory")
    rd, cfg = _open_run(args.out)
    acfg = cfg.analysis
    if args.method:
        acfg = replace(acfg, method=args.method)
    if args.from_step is not None:
        acfg = replace(acfg, from_record=_record_index(args.from_step, cfg.training.stride))
    S, S_test = artifacts.read_dataset(rd)
    plan = artifacts.read_plan(rd)
    full, leave_outs = artifacts.read_trajectories(rd, plan.num_batches)
    an = pipeline.analyze(cfg.model, S, full, leave_outs, plan, acfg, S_test=S_test)
    rd.write_text("factors.csv", artifacts.factors_csv(an))
    artifacts.write_kernel(rd, an.kernel.gram, an.r0)
    rd.write_text("spectrum.csv", artifacts.spectrum_csv(an.spectrum))
    rd.write_json("analysis.json", {
        "analysis": acfg.to_dict(),
        "summary": an.summary,
        "diagnostics": an.diagnostics,
        "dataset_digest": S.digest(),
    })
    rd.save()
    s = an.summary
    print(f"analyze,prediction={s['prediction']!r},delta_measured={s['delta_measured']!r},"
          f"sigma_mean={s['sigma_mean']!r}")
    return 0


def cmd_spectrum(args):
    out = Path(args.out) if args.out else None
    kernel = Path(args.kernel) if args.kernel else (out / "K.json" if out else None)
    if kernel is None:
        raise InputError("spectrum needs --kernel or --out")
    K, r0, _ = artifacts.read_kernel(kernel)
    rep = spectral.spectral_report(K, r0)
    text = artifacts.spectrum_csv(rep)
    target = out or kernel.parent
    if (target / artifacts.MANIFEST).exists():
        rd = artifacts.RunDir.open(target, verify=False)
        rd.write_text("spectrum.csv", text)
        rd.save()
    else:
        artifacts.atomic_write_text(target / "spectrum.csv", text)
    print(f"spectrum,dim={K.shape[0]},sigma_mean={float(rep.sigma_mean)!r},"
          f"tail_3pct={spectral.tail_recovery(rep, 0.03)!r}")
    return 0


def oracle_report(n, y1=1.0, y2=1.0, horizon=10.0, lr=1e-3, eps0=1e-3, method="product"):
    """Pipeline-vs-closed-form comparison on the two-point task, as a list of rows."""
    steps = int(round(horizon / lr))
    if steps < 2:
        raise InputError("horizon is shorter than two steps")
    run = pipeline.simulate_two_point(n, y1, y2, lr=lr, steps=steps, eps0=eps0)
    p, fs = run.params, run.factors
    live = ~fs.masked
    kr = pipeline.two_point_gram(run, perturbed=True, method=method)
    t = float(fs.times[-1])
    inside, outside = pipeline.span_eigenvalues(kr.gram, n)
    lam, (lo, hi), _ = oracle.closed_form_gram_eigen(p, t)
    wb, pb = oracle.comparison_bounds(p)
    r0 = run.full.residual[fs.offset]
    pred = gram.quadratic_form(kr.gram, r0)
    c_err = float(np.max(np.abs(fs.c_bar[live] - p.c_bar))) if live.any() else float("nan")
    rows = [
        ("c_bar", float(np.median(fs.c_bar[live])), p.c_bar, c_err),
        ("delta_bar_T", float(fs.delta_bar[-1]), float(oracle.closed_form_delta(p, t)),
         abs(float(fs.delta_bar[-1]) - float(oracle.closed_form_delta(p, t)))),
        ("span_eig_max", float(inside.max()), lam, abs(float(inside.max()) / lam - 1)),
        ("span_eig_min", float(inside.min()), lam, abs(float(inside.min()) / lam - 1)),
    ]
    if outside.size:
        rows += [("complement_eig_min", float(outside.min()), lo, float(outside.min() - lo)),
                 ("complement_eig_max", float(outside.max()), hi, float(hi - outside.max()))]
    rows += [
        ("weight_norm_bound", wb, wb, 0.0),
        ("perturbation_bound", pb, pb, 0.0),
        ("prediction", pred, 0.0, pred),
        ("c_bar_times_T", p.c_bar * t, 8.0, p.c_bar * t - 8.0),
        ("single_support_probability", oracle.single_support_probability(n),
         2.0 ** (-(n - 1)), 0.0),
    ]
    return rows, {"run": run, "gram": kr.gram, "prediction": pred, "bounds": (wb, pb)}


def cmd_oracle(args):
    rows, _ = oracle_report(args.n, args.y1, args.y2, args.horizon, args.lr, args.eps0,
                            args.method or "product")
    lines = ["quantity,pipeline,closed_form,deviation"]
    lines += [f"{q},{float(a)!r},{float(b)!r},{float(d)!r}" for q, a, b, d in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        artifacts.atomic_write_text(Path(args.out) / "oracle.csv", text)
    sys.stdout.write(text)
    return 0


def _run_dirs(root):
    root = Path(root)
    if not root.is_dir():
        raise IntegrityError(f"{root} is not a directory")
    if (root / artifacts.MANIFEST).exists():
        return [root]
    runs = sorted(p for p in root.iterdir() if (p / artifacts.MANIFEST).exists())
    if not runs:
        raise IntegrityError(f"{root} holds no run directories")
    return runs


def cmd_report(args):
    if not args.out:
        raise InputError("report needs --out pointing at a run directory or a folder of runs")
    root = Path(args.out)
    rows, spectra = [], {}
    for path in _run_dirs(root):
        rd, _ = _open_run(path)
        for name in ("analysis.json", "factors.csv", "spectrum.csv", "K.json"):
            rd.check(name)
        res = rd.read_json("analysis.json")
        S, S_test = artifacts.read_dataset(rd)
        if res.get("dataset_digest") != S.digest():
            raise IntegrityError(f"{path}: analysis was run on a different dataset")
        row = dict(res["summary"])
        row["run"] = path.name
        rows.append(row)
        table = artifacts.read_factors_csv(rd.path("factors.csv"))
        spectra[path.name] = artifacts.read_spectrum_csv(rd.path("spectrum.csv"))
        gap = None
        if S_test is not None:
            spec, full = config.from_dict(rd.manifest["config"]).model, artifacts.read_trajectory(rd, -1)
            g = traj.measure_generalization_gap(spec, full, S, S_test)
            k0 = len(g.times) - len(table["time"])
            gap = (g.times[k0:], g.gap[k0:])
        rd.write_bytes("loss_difference.png",
                       plotting.loss_difference_figure(table, gap, title=path.name))
        rd.write_bytes("factors.png", plotting.factor_figure(table))
        rd.save()
    text = artifacts.table_csv(rows, REPORT_COLUMNS)
    artifacts.atomic_write_text(root / "report.csv", text)
    artifacts.atomic_write_bytes(root / "explained_magnitude.png",
                                 plotting.explained_magnitude_figure(spectra))
    sys.stdout.write(text)
    return 0


COMMANDS = {
    "dataset": cmd_dataset,
    "train": cmd_train,
    "analyze": cmd_analyze,
    "spectrum": cmd_spectrum,
    "oracle": cmd_oracle,
    "report": cmd_report,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="effgram", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=False):
        p.add_argument("--config", required=config_required, help="run configuration (JSON)")
        p.add_argument("--out", help="output / run directory")
        p.add_argument("--jobs", type=int, default=1, help="parallel leave-out trainings")
        p.add_argument("--seed", type=int, help="override every seed in the config")
        p.add_argument("--method", choices=gram.METHODS, help="propagator method")
        p.add_argument("--from-step", type=int, dest="from_step",
                       help="start leave-out runs / the analysis at this training step")
        return p

    common(sub.add_parser("dataset", help="generate or ingest the dataset"), True)
    common(sub.add_parser("train", help="train the full and leave-out trajectories"), True)
    common(sub.add_parser("analyze", help="factors, effective Gram matrix and prediction"))
    p = common(sub.add_parser("spectrum", help="alignment of r0 with the kernel eigenbasis"))
    p.add_argument("--kernel", help="K.json header (default: OUT/K.json)")
    p = common(sub.add_parser("oracle", help="two-point closed forms vs the pipeline"))
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--y1", type=float, default=1.0)
    p.add_argument("--y2", type=float, default=1.0)
    p.add_argument("--horizon", type=float, default=10.0)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--eps0", type=float, default=1e-3)
    common(sub.add_parser("report", help="summary table and figures for finished runs"))
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        log.error("--jobs must be positive")
        return 2
    try:
        return COMMANDS[args.command](args)
    except EffgramError as exc:
        log.error("%s", exc)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
