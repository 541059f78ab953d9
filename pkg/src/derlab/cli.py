"""``derlab`` command line: generate, train, evaluate, analyze, reproduce, trace-export.

Outputs go under ``--out`` or, by default, under ``$DERLAB_OUTPUT_ROOT``
(``./runs`` when unset). Every output directory gets a ``manifest.json`` with
SHA-256 checksums of the files written and the resolved configuration.
"""

import argparse
import csv
import datetime as dt
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from derlab import __version__, analysis, data, experiment, network, svg
from derlab import config as cfgmod
from derlab.experiment import TRACE_FIELDS, fmt
from derlab.losses import LossKind, PhiConvention
from derlab.rng import derive_seed
from derlab.uncertainty import Convention

log = logging.getLogger("derlab")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
VALLEY_WIDTH = 3.0
FIG1B_POSITIONS = (-4.0, 0.0, 4.0)


def output_root():
    return Path(os.environ.get("DERLAB_OUTPUT_ROOT", "runs"))


def _now():
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, config, started, config_path=None, argv=None):
    out_dir = Path(out_dir)
    files = {}
    for p in sorted(out_dir.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            files[str(p.relative_to(out_dir))] = _sha256(p)
    manifest = {
        "tool": "derlab",
        "version": __version__,
        "argv": list(argv or []),
        "config_path": str(config_path) if config_path else None,
        "config": config,
        "output_dir": str(out_dir),
        "files": files,
        "started": started,
        "finished": _now(),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------------------
# generate


def cmd_generate(args):
    params = {}
    if args.x_lo is not None:
        params["x_lo"] = args.x_lo
    if args.x_hi is not None:
        params["x_hi"] = args.x_hi
    if args.noise_std is not None:
        if args.generator != "cubic":
            raise cfgmod.ConfigError(["--noise-std only applies to the cubic generator"])
        params["noise_std"] = args.noise_std
    ds = data.generate(args.generator, args.n, args.seed, **params)
    out = Path(args.out or output_root() / "data")
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{args.generator}_n{args.n}_s{args.seed}.csv"
    data.save_dataset(ds, path)
    print(path)
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def _resolve_config(args):
    if args.config:
        cfg = cfgmod.load_config(args.config)
    elif args.preset:
        cfg = cfgmod.PRESETS[args.preset]
    else:
        raise cfgmod.ConfigError(["either --preset or --config is required"])
    loss = {}
    for key, attr in (("kind", "loss"), ("lam", "lam"), ("p", "p"), ("phi", "phi")):
        v = getattr(args, attr, None)
        if v is not None:
            loss[key] = v
    if getattr(args, "detach_width", False):
        loss["detach_width"] = True
    overrides = {}
    if loss:
        overrides["loss"] = loss
    opt = {}
    for key, attr in (("learning_rate", "lr"), ("name", "optimizer"), ("decay", "lr_decay"), ("momentum", "momentum")):
        v = getattr(args, attr, None)
        if v is not None:
            opt[key] = v
    if opt:
        overrides["optimizer"] = opt
    for key in ("epochs", "batch_size", "trace_every"):
        v = getattr(args, key, None)
        if v is not None:
            overrides[key] = v
    if getattr(args, "seeds", None) is not None:
        overrides["seeds"] = list(range(args.seeds))
    if getattr(args, "seed_list", None):
        overrides["seeds"] = [int(s) for s in args.seed_list.split(",")]
    if getattr(args, "hidden", None):
        try:
            overrides["arch"] = {"hidden": [list(h) for h in cfgmod.parse_hidden(args.hidden)]}
        except ValueError as exc:
            raise cfgmod.ConfigError([f"--hidden: {exc}"]) from None
    if getattr(args, "n", None) is not None:
        overrides["data"] = {"n": args.n}
    return cfgmod.config_from_dict(overrides, cfg) if overrides else cfg


def _check_trace_identities(runs):
    """u_ep' * u_al == u_ep for every NIG trace record."""
    problems = []
    for r in runs:
        for t in r.traces:
            if np.isnan(t["u_al"]).all():
                continue
            lhs = t["u_ep_p"] * t["u_al"]
            if not np.allclose(lhs, t["u_ep"], rtol=1e-12, atol=0.0):
                problems.append(f"seed {r.seed} epoch {t.epoch}: u_ep' * u_al != u_ep")
    return problems


def save_run(result, cfg, out_dir):
    out_dir = Path(out_dir)
    (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(cfg.dumps())
    for r in result.runs:
        network.save_checkpoint(r.params, out_dir / "checkpoints" / f"seed_{r.seed}.ckpt")
    experiment.write_trace_csv(out_dir / "traces.csv", result.runs)
    if result.aggregate is not None:
        experiment.write_aggregate_csv(out_dir / "aggregate.csv", result.aggregate)
    _write_rows(
        out_dir / "losses.csv",
        ("seed", "epoch", "loss"),
        ([r.seed, e + 1, fmt(v)] for r in result.runs for e, v in enumerate(r.losses)),
    )
    rows = []
    true_mean = experiment.TRUE_MEAN[cfg.data.generator]
    for r in result.runs:
        xs = cfg.eval_grid.points()
        vals = experiment.trace_values(r.params, cfg.loss.head, xs, true_mean)
        rows += [[r.seed, fmt(xv)] + [fmt(vals[k][j]) for k in TRACE_FIELDS] for j, xv in enumerate(xs)]
    _write_rows(out_dir / "final_grid.csv", ("seed", "x") + TRACE_FIELDS, rows)
    _write_rows(out_dir / "failures.csv", ("seed", "message"), result.failures)


def cmd_train(args):
    started = _now()
    cfg = _resolve_config(args)
    out = Path(args.out) if args.out else output_root() / cfg.name
    result = experiment.multi_seed(cfg, jobs=args.jobs)
    save_run(result, cfg, out)
    write_manifest(out, cfg.to_dict(), started, args.config, sys.argv)
    print(out)
    problems = _check_trace_identities(result.runs)
    for p in problems:
        log.error(p)
    if result.failures:
        log.error("%d of %d runs failed and were excluded", len(result.failures), len(cfg.seeds))
    return EXIT_OK if result.runs and not problems else EXIT_FAIL


# ---------------------------------------------------------------------------
# evaluate / analyze


def load_run(run_dir):
    run_dir = Path(run_dir)
    cfg_path = run_dir / "config.json"
    if not cfg_path.exists():
        raise FileNotFoundError(f"missing {cfg_path}")
    cfg = cfgmod.load_config(cfg_path)
    params = {}
    for seed in cfg.seeds:
        ck = run_dir / "checkpoints" / f"seed_{seed}.ckpt"
        if ck.exists():
            params[seed] = network.load_checkpoint(ck)
    if not params:
        raise FileNotFoundError(f"no checkpoints under {run_dir / 'checkpoints'}")
    return cfg, params


def _proxy_columns(ev):
    """Named sigma-like proxies available for a grid evaluation."""
    if ev.head == "nig":
        s, p = ev.estimates[Convention.SOTA], ev.estimates[Convention.PROPOSED]
        return {"u_al": s.aleatoric, "u_ep": s.epistemic, "u_al_p": p.aleatoric, "u_ep_p": p.epistemic}
    g = ev.estimates[Convention.GAUSSIAN]
    return {"sigma": g.aleatoric, "u_ep_p": g.epistemic}


def cmd_evaluate(args):
    started = _now()
    cfg, params = load_run(args.run)
    xs = cfgmod.GridSpec(*_parse_grid(args.grid)).points() if args.grid else cfg.eval_grid.points()
    out = Path(args.out or Path(args.run) / "evaluation")
    out.mkdir(parents=True, exist_ok=True)
    rows, header = [], None
    for seed, p in params.items():
        ev = experiment.evaluate_grid(p, cfg.loss.head, xs)
        cols = _proxy_columns(ev)
        if header is None:
            header = ("seed", "x", "gamma", "nu", "beta") + tuple(cols)
        for j, xv in enumerate(xs):
            m = ev.params
            rows.append([seed, fmt(xv), fmt(m.gamma[j]), fmt(m.nu[j]), fmt(m.beta[j])] + [fmt(c[j]) for c in cols.values()])
    _write_rows(out / "evaluation.csv", header, rows)
    write_manifest(out, cfg.to_dict(), started, Path(args.run) / "config.json", sys.argv)
    print(out / "evaluation.csv")
    return EXIT_OK


def _parse_grid(text):
    lo, hi, n = text.split(",")
    return float(lo), float(hi), int(n)


def _cohorts(generator, xs):
    if generator == "cubic":
        return {"ID": np.abs(xs) <= 4.0, "OOD": (np.abs(xs) >= 5.0) & (np.abs(xs) <= 7.0)}
    return {"left": xs < 0.5, "right": xs > 0.5}


def analyze_run(cfg, params, metric="absolute"):
    """Calibration, cutoff, entropy and (pulse) asymmetry for one trained run directory."""
    true_mean = experiment.TRUE_MEAN[cfg.data.generator]
    mus, ys, errs, xs_all, proxies = [], [], [], [], {}
    grid_proxies, grid_x = {}, cfg.eval_grid.points()
    for seed, p in params.items():
        test = data.generate(cfg.data.generator, cfg.data.n, derive_seed(seed, experiment.TEST_STREAM), **cfg.data.params)
        ev = experiment.evaluate_grid(p, cfg.loss.head, test.x)
        mus.append(ev.params.gamma)
        ys.append(test.y)
        errs.append(ev.params.gamma - true_mean(test.x))
        xs_all.append(test.x)
        for k, v in _proxy_columns(ev).items():
            proxies.setdefault(k, []).append(v)
        gev = experiment.evaluate_grid(p, cfg.loss.head, grid_x)
        for k, v in _proxy_columns(gev).items():
            grid_proxies.setdefault(k, []).append(v)
    mus, ys, errs, xs_all = (np.concatenate(a) for a in (mus, ys, errs, xs_all))
    proxies = {k: np.concatenate(v) for k, v in proxies.items()}
    calib = {k: analysis.calibration_curve(mus, v, ys) for k, v in proxies.items()}
    cutoff = {k: analysis.cutoff_curve(errs, v, x=xs_all, metric=metric) for k, v in proxies.items()}
    masks = _cohorts(cfg.data.generator, grid_x)
    ent = {}
    for k, v in grid_proxies.items():
        stack = np.stack(v)
        ent[k] = analysis.entropy_summary({name: stack[:, m] for name, m in masks.items()})
    asym = None
    if cfg.data.generator == "pulse":
        u = np.stack(grid_proxies["u_ep_p"])
        asym = {
            "mean_curve": analysis.pulse_asymmetry(grid_x, u.mean(axis=0)),
            "per_seed": {seed: analysis.pulse_asymmetry(grid_x, row) for seed, row in zip(params, u)},
        }
    return calib, cutoff, ent, asym


def calibration_self_test(n=100_000, seed=12345):
    """Perfectly specified synthetic cohort; returns the calibration curve."""
    from derlab.rng import SplitMix64

    rng = SplitMix64(seed)
    mus = rng.uniform(n, -5.0, 5.0)
    sigmas = rng.uniform(n, 0.1, 3.0)
    ys = mus + sigmas * rng.normal(n)
    return analysis.calibration_curve(mus, sigmas, ys)


def cmd_analyze(args):
    started = _now()
    if args.self_test:
        out = Path(args.out or output_root() / "analysis_selftest")
        out.mkdir(parents=True, exist_ok=True)
        curve = calibration_self_test(args.n)
        analysis.write_calibration_csv(out / "calibration_selftest.csv", {"synthetic": curve})
        write_manifest(out, {"self_test": True, "n": args.n}, started, None, sys.argv)
        ok = curve.max_abs_error < 0.02
        print(f"calibration self-test max |observed - expected| = {curve.max_abs_error:.4g} ({'pass' if ok else 'FAIL'})")
        return EXIT_OK if ok else EXIT_FAIL
    if not args.run:
        raise cfgmod.ConfigError(["analyze needs --run DIR (repeatable) or --self-test"])
    out = Path(args.out) if args.out else Path(args.run[0]) / "analysis"
    out.mkdir(parents=True, exist_ok=True)
    calib_all, cutoff_all, ent_all, asym_rows = {}, {}, {}, []
    configs = {}
    for run_dir in args.run:
        cfg, params = load_run(run_dir)
        configs[str(run_dir)] = cfg.to_dict()
        calib, cutoff, ent, asym = analyze_run(cfg, params, args.metric)
        tag = cfg.name if len(args.run) > 1 else ""
        label = (lambda k: f"{tag}:{k}") if tag else (lambda k: k)
        calib_all.update({label(k): v for k, v in calib.items()})
        cutoff_all.update({label(k): v for k, v in cutoff.items()})
        ent_all.update({label(k): v for k, v in ent.items()})
        if asym is not None:
            asym_rows.append([cfg.name, cfg.loss.kind.value, "mean", fmt(asym["mean_curve"])])
            asym_rows += [[cfg.name, cfg.loss.kind.value, s, fmt(r)] for s, r in asym["per_seed"].items()]
    analysis.write_calibration_csv(out / "calibration.csv", calib_all)
    analysis.write_cutoff_csv(out / "cutoff.csv", cutoff_all)
    analysis.write_entropy_csv(out / "entropy.csv", ent_all)
    if asym_rows:
        _write_rows(out / "asymmetry.csv", ("run", "loss", "seed", "R"), asym_rows)
    if args.svg:
        cal_panel = svg.Panel("calibration", "expected CL", "observed CL")
        cal_panel.line([0, 1], [0, 1], "ideal", color="#000", dashed=True)
        for k, c in calib_all.items():
            cal_panel.line(c.expected_cl, c.observed_cl, k)
        cut_panel = svg.Panel("cutoff", "fraction removed", f"{args.metric} error")
        for k, c in cutoff_all.items():
            cut_panel.line(c.confidence_level_removed, c.error_on_retained, k)
        svg.render([cal_panel, cut_panel], out / "analysis.svg")
    write_manifest(out, configs, started, None, sys.argv)
    print(out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# reproduce


def _preset_runs(name, seeds, epochs, jobs):
    cfg = replace(cfgmod.PRESETS[name], seeds=tuple(range(seeds)))
    if epochs is not None:
        cfg = replace(cfg, epochs=epochs)
    result = experiment.multi_seed(cfg, jobs=jobs)
    if not result.runs:
        raise RuntimeError(f"every run of {name} failed: {result.failures}")
    return cfg, result


def _nearest(grid, targets):
    return [int(np.argmin(np.abs(grid - t))) for t in targets]


def _final_stats(runs, conv):
    """Mean/std over seeds of prediction, aleatoric and epistemic on the eval grid."""
    est = [r.final.estimates[conv] for r in runs]
    out = {}
    for name in ("prediction", "aleatoric", "epistemic"):
        stack = np.stack([getattr(e, name) for e in est])
        out[name] = (stack.mean(axis=0), stack.std(axis=0))
    return out


def fig_residual(ctx):
    cfg, res = ctx.run("cubic-der")
    agg = res.aggregate
    sel = np.flatnonzero(np.abs(agg.x) <= 4.0 + 1e-9)
    rows = [
        [e, fmt(agg.x[j]), fmt(agg.mean["residual"][i, j]), fmt(agg.std["residual"][i, j])]
        for i, e in enumerate(agg.epochs)
        for j in sel
    ]
    header = ("epoch", "x", "residual_mean", "residual_std")
    panel = svg.Panel("residual evolution", "x", "gamma - x^3")
    for i, e in enumerate(agg.epochs):
        if e % 100 == 0 or e == agg.epochs[-1]:
            panel.line(agg.x[sel], agg.mean["residual"][i, sel], f"epoch {e}")
    return header, rows, [panel]


def fig_nu_vs_residual(ctx):
    cfg, res = ctx.run("cubic-der")
    agg = res.aggregate
    idx = _nearest(agg.x, FIG1B_POSITIONS)
    rows = [
        [e, fmt(agg.x[j]), fmt(agg.mean["residual"][i, j]), fmt(agg.mean["nu"][i, j])]
        for j in idx
        for i, e in enumerate(agg.epochs)
    ]
    panel = svg.Panel("nu vs residual", "residual", "nu", logy=True)
    for k, j in enumerate(idx):
        color = svg.PALETTE[k]
        panel.line(agg.mean["residual"][:, j], agg.mean["nu"][:, j], f"x={agg.x[j]:g}", color=color)
        dots = [i for i, e in enumerate(agg.epochs) if e % 10 == 0]
        panel.scatter(agg.mean["residual"][dots, j], agg.mean["nu"][dots, j], color=color)
    return ("epoch", "x", "residual_mean", "nu_mean"), rows, [panel]


def fig_width_factors(ctx):
    cfg, res = ctx.run("cubic-der")
    agg = res.aggregate
    idx = _nearest(agg.x, FIG1B_POSITIONS)
    rows = [
        [
            e,
            fmt(agg.x[j]),
            fmt(agg.mean["sqrt_nu_over_1p_nu"][i, j]),
            fmt(agg.mean["sqrt_beta_over_alpha"][i, j]),
            fmt(agg.mean["w_st"][i, j]),
            fmt(VALLEY_WIDTH),
        ]
        for j in idx
        for i, e in enumerate(agg.epochs)
    ]
    header = ("epoch", "x", "sqrt_nu_over_1p_nu_mean", "sqrt_beta_over_alpha_mean", "w_st_mean", "valley_w_st")
    panel = svg.Panel("factors of w_St", "sqrt(nu/(1+nu))", "sqrt(beta/alpha)")
    for k, j in enumerate(idx):
        color = svg.PALETTE[k]
        a, b = agg.mean["sqrt_nu_over_1p_nu"][:, j], agg.mean["sqrt_beta_over_alpha"][:, j]
        panel.line(a, b, f"x={agg.x[j]:g}", color=color)
        dots = [i for i, e in enumerate(agg.epochs) if e % 10 == 0]
        panel.scatter(a[dots], b[dots], color=color)
    top = max(np.nanmax(agg.mean["sqrt_nu_over_1p_nu"][:, idx]), 1e-3)
    grid = np.linspace(0.0, top, 50)
    panel.line(grid, VALLEY_WIDTH * grid, "valley w_St=3", color="#000", dashed=True)
    return header, rows, [panel]


def fig_uncertainties(ctx):
    _, der = ctx.run("cubic-der")
    _, gau = ctx.run("cubic-gaussian")
    panels_src = [
        ("SOTA", der.runs, Convention.SOTA),
        ("PROPOSED", der.runs, Convention.PROPOSED),
        ("GAUSSIAN_ALT", gau.runs, Convention.GAUSSIAN),
    ]
    header = (
        "panel", "x", "prediction_mean", "prediction_std",
        "aleatoric_mean", "aleatoric_std", "epistemic_mean", "epistemic_std",
    )  # fmt: skip
    rows, panels = [], []
    for label, runs, conv in panels_src:
        st = _final_stats(runs, conv)
        xs = runs[0].final.x
        for j, xv in enumerate(xs):
            rows.append([label, fmt(xv)] + [fmt(st[n][k][j]) for n in ("prediction", "aleatoric", "epistemic") for k in (0, 1)])
        p = svg.Panel(label, "x", "uncertainty")
        for k, name in enumerate(("aleatoric", "epistemic")):
            m, s = st[name]
            p.band(xs, m - s, m + s, color=svg.PALETTE[k])
            p.line(xs, m, name, color=svg.PALETTE[k])
        panels.append(p)
    return header, rows, panels


def fig_sota_samples(ctx):
    _, der = ctx.run("cubic-der")
    rows, panels = [], []
    for r in der.runs[:9]:
        e = r.final.estimates[Convention.SOTA]
        rows += [[r.seed, fmt(x), fmt(e.prediction[j]), fmt(e.aleatoric[j]), fmt(e.epistemic[j])] for j, x in enumerate(r.final.x)]
    for r in der.runs[:3]:
        e = r.final.estimates[Convention.SOTA]
        p = svg.Panel(f"seed {r.seed}", "x", "SOTA uncertainty")
        p.line(r.final.x, e.aleatoric, "u_al").line(r.final.x, e.epistemic, "u_ep")
        panels.append(p)
    return ("seed", "x", "prediction", "u_al", "u_ep"), rows, panels


def fig_alpha_beta(ctx):
    _, der = ctx.run("cubic-der")
    agg = der.aggregate
    sel = np.flatnonzero(np.abs(agg.x) <= 4.0 + 1e-9)
    rows = [
        [
            e, fmt(agg.x[j]),
            fmt(agg.mean["alpha"][i, j]), fmt(agg.std["alpha"][i, j]),
            fmt(agg.mean["beta"][i, j]), fmt(agg.std["beta"][i, j]),
        ]
        for i, e in enumerate(agg.epochs)
        for j in sel
    ]  # fmt: skip
    header = ("epoch", "x", "alpha_mean", "alpha_std", "beta_mean", "beta_std")
    pa = svg.Panel("alpha", "x", "alpha")
    pb = svg.Panel("beta", "x", "beta")
    for i, e in enumerate(agg.epochs):
        if e % 100 == 0 or e == agg.epochs[-1]:
            pa.line(agg.x[sel], agg.mean["alpha"][i, sel], f"epoch {e}")
            pb.line(agg.x[sel], agg.mean["beta"][i, sel], f"epoch {e}")
    last = [[r.seed, fmt(x), fmt(r.traces[-1]["alpha"][j]), fmt(r.traces[-1]["beta"][j])] for r in der.runs for j, x in enumerate(r.traces[-1].x)]
    ctx.extra["fig5_last_epoch.csv"] = (("seed", "x", "alpha", "beta"), last)
    return header, rows, [pa, pb]


def fig_pulse(ctx):
    _, der = ctx.run("pulse-der")
    _, gau = ctx.run("pulse-gaussian")
    header = ("panel", "x", "gamma_mean", "aleatoric_mean", "aleatoric_std", "epistemic_mean", "epistemic_std")
    rows, panels, asym = [], [], []
    data_panel = svg.Panel("data and prediction", "x", "y")
    sample = experiment.dataset_for_seed(ctx.cfgs["pulse-der"], 0)
    data_panel.scatter(sample.x, sample.y, color="#999", r=1.0)
    for label, res, conv in (("DER_ORIGINAL", der, Convention.PROPOSED), ("GAUSSIAN_ALT", gau, Convention.GAUSSIAN)):
        st = _final_stats(res.runs, conv)
        xs = res.runs[0].final.x
        for j, xv in enumerate(xs):
            rows.append([label, fmt(xv), fmt(st["prediction"][0][j])] + [fmt(st[n][k][j]) for n in ("aleatoric", "epistemic") for k in (0, 1)])
        data_panel.line(xs, st["prediction"][0], label)
        p = svg.Panel(label, "x", "uncertainty", logy=True)
        p.line(xs, st["aleatoric"][0], "aleatoric").line(xs, st["epistemic"][0], "epistemic")
        panels.append(p)
        r = analysis.pulse_asymmetry(xs, st["epistemic"][0])
        asym.append([label, fmt(r), fmt(abs(r - 1.0))])
    ctx.extra["pulse_asymmetry.csv"] = (("loss", "R", "abs_R_minus_1"), asym)
    return header, rows, [data_panel] + panels


def fig_naive(ctx):
    rows, panel = [], svg.Panel("nu collapse", "epoch", "min nu on grid", logy=True)
    for k, name in enumerate(("naive-momentum", "der-momentum")):
        _, res = ctx.run(name)
        for r in res.runs:
            nu = r.trace_array("nu")
            for i, e in enumerate(r.trace_epochs):
                rows.append([name, r.seed, e, fmt(nu[i].min()), fmt(np.median(nu[i]))])
        nu = res.runs[0].trace_array("nu")
        panel.line(res.runs[0].trace_epochs, nu.min(axis=1), name, color=svg.PALETTE[k])
    return ("preset", "seed", "epoch", "nu_min", "nu_median"), rows, [panel]


FIGURES = {
    "fig1a": fig_residual,
    "fig1b": fig_nu_vs_residual,
    "fig1c": fig_width_factors,
    "fig2": fig_uncertainties,
    "fig4": fig_sota_samples,
    "fig5": fig_alpha_beta,
    "pulse": fig_pulse,
    "naive": fig_naive,
}


class _FigureContext:
    def __init__(self, seeds, epochs, jobs):
        self.seeds, self.epochs, self.jobs = seeds, epochs, jobs
        self.cache, self.cfgs, self.extra = {}, {}, {}

    def run(self, preset):
        if preset not in self.cache:
            cfg, res = _preset_runs(preset, self.seeds, self.epochs, self.jobs)
            self.cfgs[preset] = cfg
            self.cache[preset] = (cfg, res)
        return self.cache[preset]


def cmd_reproduce(args):
    started = _now()
    if args.figure not in FIGURES:
        print(f"unknown figure {args.figure!r}; available: {', '.join(sorted(FIGURES))}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out) if args.out else output_root() / "figures" / args.figure
    out.mkdir(parents=True, exist_ok=True)
    ctx = _FigureContext(args.seeds, args.epochs, args.jobs)
    header, rows, panels = FIGURES[args.figure](ctx)
    _write_rows(out / f"{args.figure}.csv", header, rows)
    for name, (h, r) in ctx.extra.items():
        _write_rows(out / name, h, r)
    if not args.no_svg:
        svg.render(panels, out / f"{args.figure}.svg")
    failures = {name: res.failures for name, (_, res) in ctx.cache.items() if res.failures}
    _write_rows(out / "failures.csv", ("preset", "seed", "message"), [[n, s, m] for n, fl in failures.items() for s, m in fl])
    write_manifest(out, {n: c.to_dict() for n, c in ctx.cfgs.items()}, started, None, sys.argv)
    problems = _check_trace_identities([r for _, res in ctx.cache.values() for r in res.runs])
    for p in problems:
        log.error(p)
    print(out)
    return EXIT_FAIL if problems else EXIT_OK


# ---------------------------------------------------------------------------
# trace-export


def cmd_trace_export(args):
    src = Path(args.run) / ("aggregate.csv" if args.aggregate else "traces.csv")
    if not src.exists():
        raise FileNotFoundError(f"missing {src}")
    xs = [float(v) for v in args.x.split(",")] if args.x else None
    with open(src, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        e_col, x_col = header.index("epoch"), header.index("x")
        rows = []
        for row in reader:
            if int(row[e_col]) % args.every:
                continue
            if xs is not None and not any(abs(float(row[x_col]) - v) < 1e-9 for v in xs):
                continue
            rows.append(row)
    out = Path(args.out)
    _write_rows(out, header, rows)
    print(out)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="derlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"derlab {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("generator", choices=sorted(data.GENERATORS))
    g.add_argument("--n", type=int, default=1000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--x-lo", type=float)
    g.add_argument("--x-hi", type=float)
    g.add_argument("--noise-std", type=float)
    g.add_argument("--out")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one network per seed")
    src = t.add_mutually_exclusive_group()
    src.add_argument("--preset", choices=sorted(cfgmod.PRESETS))
    src.add_argument("--config", help="JSON config file (may name a preset to start from)")
    t.add_argument("--loss", choices=[k.value for k in LossKind])
    t.add_argument("--lam", type=float)
    t.add_argument("--p", type=int, choices=(1, 2))
    t.add_argument("--phi", choices=[c.value for c in PhiConvention])
    t.add_argument("--detach-width", action="store_true", help="treat w_St as a constant in the normalized regularizer")
    t.add_argument("--lr", type=float)
    t.add_argument("--lr-decay", type=float, help="per-step multiplicative learning-rate decay (default 1: constant)")
    t.add_argument("--optimizer", choices=("adam", "momentum"))
    t.add_argument("--momentum", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int, help="0 means full batch")
    t.add_argument("--trace-every", type=int)
    t.add_argument("--hidden", help='e.g. "64:relu,64:relu"')
    t.add_argument("--n", type=int, help="training sample size")
    t.add_argument("--seeds", type=int, help="use seeds 0..K-1")
    t.add_argument("--seed-list", help="comma separated seeds")
    t.add_argument("--jobs", type=int, default=1)
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="evaluate checkpoints of a run on a grid")
    e.add_argument("--run", required=True)
    e.add_argument("--grid", help="lo,hi,n (write --grid=-7,7,141 when lo is negative)")
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("analyze", help="calibration / cutoff / entropy / asymmetry")
    a.add_argument("--run", action="append", help="run directory (repeatable)")
    a.add_argument("--metric", choices=("absolute", "squared"), default="absolute")
    a.add_argument("--self-test", action="store_true", help="calibration check on a perfectly specified cohort")
    a.add_argument("--n", type=int, default=100_000, help="self-test cohort size")
    a.add_argument("--svg", action="store_true")
    a.add_argument("--out")
    a.set_defaults(func=cmd_analyze)

    r = sub.add_parser("reproduce", help="regenerate a figure's data table (+ SVG)")
    r.add_argument("figure", help=f"one of: {', '.join(sorted(FIGURES))}")
    r.add_argument("--seeds", type=int, default=50)
    r.add_argument("--epochs", type=int, help="override the preset's epoch count")
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--no-svg", action="store_true")
    r.add_argument("--out")
    r.set_defaults(func=cmd_reproduce)

    x = sub.add_parser("trace-export", help="filter stored traces to CSV")
    x.add_argument("--run", required=True)
    x.add_argument("--aggregate", action="store_true")
    x.add_argument("--x", help="comma separated x positions")
    x.add_argument("--every", type=int, default=1, help="keep epochs divisible by this")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_trace_export)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except cfgmod.ConfigError as exc:
        for p in exc.problems:
            print(f"config error: {p}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, data.DatasetFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
