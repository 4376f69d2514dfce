"""Command-line entry points for every pipeline stage.

    gazedistill <subcommand> [--config PATH] [--set key=value ...]
                [--seed N] [--out DIR]

Subcommands: gen, pretrain, probe, synft, stage1, stage2, baseline, eval,
export-embeddings, reproduce. Every artifact lands under --out; each run
echoes its effective config next to its outputs. GD_THREADS caps the BLAS
worker count (0 = automatic).
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path


def _apply_thread_cap() -> None:
    cap = os.environ.get("GD_THREADS", "").strip()
    if cap and cap != "0":
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, cap)


_apply_thread_cap()

import numpy as np

from .config import Config, ConfigError, reference_doc
from . import eyegen
from .eyegen import DatasetBundle, DatasetSpec, DomainShift
from .evalkit import EUReport, evaluate_predictor, render_table, write_metrics_csv
from .nets import ModelBundle
from .tensorcore import checkpoint
from .tensorcore.rng import RngStream

SUBCOMMANDS = (
    "gen", "pretrain", "probe", "synft", "stage1", "stage2",
    "baseline", "eval", "export-embeddings", "reproduce",
)

REPRODUCE_SEEDS = (0, 1, 2)

# method rows in the combined report, in table order
METHOD_ROWS = (
    "linear_probe",
    "synft_teacher",
    "stage1_teacher",
    "synft_student",
    "self_distill_no_vfm",
    "pseudo_only",
    "sp_kd",
    "stage2_student",
)
UPPER_BOUND_ROW = "fully_supervised"


def parse_cli(argv: list[str]) -> tuple[str, Config, Path]:
    parser = argparse.ArgumentParser(prog="gazedistill", description=__doc__)
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", type=str, default=None, help="config file path")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable; wins over --config)")
    parser.add_argument("--seed", type=int, default=None, help="shorthand for --set run.seed=N")
    parser.add_argument("--out", type=str, default="out", help="output directory")
    args = parser.parse_args(argv)

    cfg = Config.defaults()
    if args.config:
        cfg.update_from_file(args.config)
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        cfg.set(key.strip(), raw.strip())
    if args.seed is not None:
        cfg.set("run.seed", args.seed)
    return args.subcommand, cfg, Path(args.out)


def dataset_spec_from_config(cfg: Config) -> DatasetSpec:
    return DatasetSpec(
        n_subjects_pretrain=cfg.get_int("data.n_subjects_pretrain"),
        n_subjects_syn=cfg.get_int("data.n_subjects_syn"),
        n_subjects_real_train=cfg.get_int("data.n_subjects_real_train"),
        n_subjects_real_eval=cfg.get_int("data.n_subjects_real_eval"),
        recordings_per_subject=cfg.get_int("data.recordings_per_subject"),
        frames_per_recording=cfg.get_int("data.frames_per_recording"),
        height=cfg.get_int("data.height"),
        width=cfg.get_int("data.width"),
        seed=cfg.get_int("data.seed"),
        real_gaze_sigma=cfg.get_float("data.real_gaze_sigma"),
        shift=DomainShift(
            tone_exponent=cfg.get_float("data.tone_exponent"),
            vignette_strength=cfg.get_float("data.vignette_strength"),
            noise_syn=cfg.get_float("data.noise_syn"),
            noise_real=cfg.get_float("data.noise_real"),
            warp_px=cfg.get_float("data.warp_px"),
        ),
    )


def ensure_dataset(cfg: Config, out: Path, quiet: bool = False) -> DatasetBundle:
    data_dir = out / "data"
    marker = data_dir / "syn.eye1"
    if marker.exists():
        if not quiet:
            print(f"[data] loading cached shards from {data_dir}")
        return eyegen.load_dataset(data_dir)
    if not quiet:
        print(f"[data] generating dataset into {data_dir}")
    spec = dataset_spec_from_config(cfg)
    bundle = eyegen.make_dataset(spec)
    eyegen.save_dataset(bundle, data_dir)
    return bundle


def _echo(cfg: Config, out: Path, name: str) -> None:
    cfg.write_echo(out / "reports" / f"{name}_config.txt")


def _save_report(report, out: Path, name: str) -> None:
    report.write_csv(out / "reports" / f"{name}_report.csv")


def _eval_bundle_file(path: Path, data: DatasetBundle, cfg: Config) -> EUReport:
    from .pipeline import bundle_predictor, linear_probe

    arrays = checkpoint.load_arrays(path)
    rng = RngStream(cfg.get_int("eval.seed"), 0)
    iters = cfg.get_int("eval.bootstrap_iters")
    if "/probe/w" in arrays:
        foundation = ModelBundle.from_arrays(arrays)
        probe_w = arrays["/probe/w"].astype(np.float64)
        probe_b = arrays["/probe/b"].astype(np.float64)
        from .pipeline import bundle_embedder
        from .nets import ANGLE_SCALE_DEG

        embed = bundle_embedder(foundation)

        def predict(il, ir):
            return (embed(il, ir) @ probe_w + probe_b) * ANGLE_SCALE_DEG

        return evaluate_predictor(predict, data.real_eval, rng, iters, cfg.get_int("eval.batch"))
    bundle = ModelBundle.from_arrays(arrays)
    return evaluate_predictor(bundle_predictor(bundle), data.real_eval, rng, iters, cfg.get_int("eval.batch"))


# ---------------------------------------------------------------------------
# subcommand implementations


def cmd_gen(cfg: Config, out: Path) -> int:
    bundle = ensure_dataset(cfg, out)
    for name, split in bundle.splits().items():
        print(f"[data] {name}: {len(split)} samples, domain {split.domain}, labeled={split.has_gaze}")
    _echo(cfg, out, "gen")
    return 0


def cmd_pretrain(cfg: Config, out: Path) -> int:
    from .pipeline import RunConfig, pretrain_identity

    data = ensure_dataset(cfg, out)
    rc = RunConfig.from_config(cfg, "pretrain")
    bundle, report = pretrain_identity(data, rc)
    path = out / f"foundation_seed{rc.seed}.gdck"
    bundle.save(path)
    name = f"pretrain_seed{rc.seed}"
    _save_report(report, out, name)
    _echo(cfg, out, name)
    print(f"[pretrain] holdout identity accuracy {report.extras['holdout_accuracy']:.3f}, "
          f"intra {report.extras['intra_distance']:.3f} < inter {report.extras['inter_distance']:.3f}, "
          f"saved {path}")
    return 0


def _load_ckpt_bundle(cfg: Config, out: Path, key: str, fallback: str) -> ModelBundle:
    raw = cfg.get_str(key)
    path = Path(raw) if raw else out / fallback
    if not path.exists():
        raise ConfigError(f"missing checkpoint {path}; set {key} or run the producing stage first")
    return ModelBundle.load(path)


def cmd_probe(cfg: Config, out: Path) -> int:
    from .pipeline import linear_probe

    data = ensure_dataset(cfg, out)
    seed = cfg.get_int("run.seed")
    foundation = _load_ckpt_bundle(cfg, out, "run.checkpoint", f"foundation_seed{seed}.gdck")
    probe, predict = linear_probe(foundation, data.syn)
    arrays = foundation.to_arrays()
    arrays["/probe/w"] = probe.weights.astype(np.float32)
    arrays["/probe/b"] = probe.bias.astype(np.float32)
    path = out / f"probe_seed{seed}.gdck"
    checkpoint.save_arrays(path, arrays)
    rng = RngStream(cfg.get_int("eval.seed"), 0)
    rep = evaluate_predictor(predict, data.real_eval, rng, cfg.get_int("eval.bootstrap_iters"))
    print(render_table([("linear_probe", rep)]))
    _echo(cfg, out, f"probe_seed{seed}")
    print(f"[probe] saved {path}")
    return 0


def cmd_synft(cfg: Config, out: Path, tier: str | None = None) -> int:
    from .pipeline import RunConfig, synthetic_finetune

    data = ensure_dataset(cfg, out)
    rc = RunConfig.from_config(cfg, "synft")
    tier = tier or cfg.get_str("net.teacher_tier")
    foundation = None
    raw = cfg.get_str("run.checkpoint")
    if raw:
        foundation = ModelBundle.load(raw)
    model, report = synthetic_finetune(data, rc, tier, foundation)
    name = f"synft_{'student' if tier == 'student' else 'teacher'}_seed{rc.seed}"
    path = out / f"{name}.gdck"
    model.save(path)
    _save_report(report, out, name)
    _echo(cfg, out, name)
    print(f"[synft] tier {tier}, {rc.iterations} steps, saved {path}")
    return 0


def cmd_stage1(cfg: Config, out: Path) -> int:
    from .pipeline import RunConfig, stage1_optimize

    data = ensure_dataset(cfg, out)
    rc = RunConfig.from_config(cfg, "stage1")
    foundation = None
    raw = cfg.get_str("run.checkpoint")
    if raw:
        foundation = ModelBundle.load(raw)
    teacher, report = stage1_optimize(data, rc, foundation)
    name = f"stage1_teacher_seed{rc.seed}"
    path = out / f"{name}.gdck"
    teacher.save(path)
    _save_report(report, out, name)
    _echo(cfg, out, name)
    print(f"[stage1] {rc.iterations} steps, saved {path}")
    return 0


def cmd_stage2(cfg: Config, out: Path) -> int:
    from .pipeline import RunConfig, stage2_distill

    data = ensure_dataset(cfg, out)
    rc = RunConfig.from_config(cfg, "stage2")
    teacher = _load_ckpt_bundle(cfg, out, "run.checkpoint", f"stage1_teacher_seed{rc.seed}.gdck")
    student_init = _load_ckpt_bundle(cfg, out, "run.student_init", f"synft_student_seed{rc.seed}.gdck")
    student, report = stage2_distill(data, rc, teacher, student_init)
    name = f"stage2_student_seed{rc.seed}"
    path = out / f"{name}.gdck"
    student.save(path)
    _save_report(report, out, name)
    _echo(cfg, out, name)
    print(f"[stage2] {rc.iterations} steps, saved {path}")
    return 0


def cmd_baseline(cfg: Config, out: Path) -> int:
    from .pipeline import RunConfig, run_baseline

    data = ensure_dataset(cfg, out)
    kind = cfg.get_str("run.baseline_kind")
    rc = RunConfig.from_config(cfg, kind)
    teacher = student_init = None
    if kind in ("pseudo_only", "sp_kd"):
        teacher = _load_ckpt_bundle(cfg, out, "run.checkpoint", f"stage1_teacher_seed{rc.seed}.gdck")
        student_init = _load_ckpt_bundle(cfg, out, "run.student_init", f"synft_student_seed{rc.seed}.gdck")
    model, report = run_baseline(kind, data, rc, teacher, student_init)
    name = f"{kind}_seed{rc.seed}"
    path = out / f"{name}.gdck"
    model.save(path)
    _save_report(report, out, name)
    _echo(cfg, out, name)
    print(f"[baseline:{kind}] {rc.iterations} steps, saved {path}")
    return 0


def cmd_eval(cfg: Config, out: Path) -> int:
    data = ensure_dataset(cfg, out)
    raw = cfg.get_str("run.checkpoint")
    if not raw:
        raise ConfigError("eval needs run.checkpoint")
    path = Path(raw)
    rep = _eval_bundle_file(path, data, cfg)
    name = path.stem
    print(render_table([(name, rep)]))
    write_metrics_csv(out / "reports" / f"eval_{name}.csv", [(name, cfg.get_int("run.seed"), rep)])
    _echo(cfg, out, f"eval_{name}")
    return 0


def cmd_export_embeddings(cfg: Config, out: Path) -> int:
    from .evalkit import export_embeddings
    from .pipeline import bundle_embedder

    data = ensure_dataset(cfg, out)
    raw = cfg.get_str("run.checkpoint")
    if not raw:
        raise ConfigError("export-embeddings needs run.checkpoint")
    bundle = ModelBundle.load(raw)
    path = out / "embeddings.csv"
    n = export_embeddings(bundle_embedder(bundle), data.real_eval, path)
    print(f"[export] wrote {n} rows to {path}")
    _echo(cfg, out, "export_embeddings")
    return 0


# ---------------------------------------------------------------------------
# reproduce


def run_reproduce(cfg: Config, out: Path, seeds=REPRODUCE_SEEDS, quiet: bool = False):
    """The canonical sequence over all seeds; returns {method: {seed: EUReport}}."""
    from . import pipeline as pl

    t_start = time.perf_counter()
    out.mkdir(parents=True, exist_ok=True)
    data = ensure_dataset(cfg, out, quiet=quiet)
    eval_rng_seed = cfg.get_int("eval.seed")
    boot = cfg.get_int("eval.bootstrap_iters")

    def log(msg: str) -> None:
        if not quiet:
            print(f"[reproduce +{time.perf_counter() - t_start:6.1f}s] {msg}")

    def evaluate(predict) -> EUReport:
        return evaluate_predictor(predict, data.real_eval, RngStream(eval_rng_seed, 0), boot)

    results: dict[str, dict[int, EUReport]] = {m: {} for m in METHOD_ROWS + (UPPER_BOUND_ROW,)}

    # one foundation shared by every seed (the fixed pretrained initialization)
    cfg_f = Config(dict(cfg.values))
    cfg_f.set("run.seed", seeds[0])
    rc = pl.RunConfig.from_config(cfg_f, "pretrain")
    foundation, rep = pl.pretrain_identity(data, rc)
    foundation.save(out / "foundation.gdck")
    _save_report(rep, out, "pretrain")
    log(f"pretrain done (holdout acc {rep.extras['holdout_accuracy']:.3f})")

    probe, probe_predict = pl.linear_probe(foundation, data.syn)
    probe_rep = evaluate(probe_predict)
    log(f"probe E50U50 {probe_rep.e50u50:.2f} deg")

    for seed in seeds:
        cs = Config(dict(cfg.values))
        cs.set("run.seed", seed)
        results["linear_probe"][seed] = probe_rep

        rc = pl.RunConfig.from_config(cs, "synft")
        synft_t, rep = pl.synthetic_finetune(data, rc, cs.get_str("net.teacher_tier"), foundation)
        synft_t.save(out / f"synft_teacher_seed{seed}.gdck")
        _save_report(rep, out, f"synft_teacher_seed{seed}")
        results["synft_teacher"][seed] = evaluate(pl.bundle_predictor(synft_t))
        log(f"seed {seed}: synft teacher E50U50 {results['synft_teacher'][seed].e50u50:.2f}")

        rc = pl.RunConfig.from_config(cs, "stage1")
        stage1_t, rep = pl.stage1_optimize(data, rc, foundation)
        stage1_t.save(out / f"stage1_teacher_seed{seed}.gdck")
        _save_report(rep, out, f"stage1_teacher_seed{seed}")
        results["stage1_teacher"][seed] = evaluate(pl.bundle_predictor(stage1_t))
        log(f"seed {seed}: stage1 teacher E50U50 {results['stage1_teacher'][seed].e50u50:.2f}")

        rc = pl.RunConfig.from_config(cs, "synft")
        synft_s, rep = pl.synthetic_finetune(data, rc, "student", None)
        synft_s.save(out / f"synft_student_seed{seed}.gdck")
        _save_report(rep, out, f"synft_student_seed{seed}")
        results["synft_student"][seed] = evaluate(pl.bundle_predictor(synft_s))
        log(f"seed {seed}: synft student E50U50 {results['synft_student'][seed].e50u50:.2f}")

        rc = pl.RunConfig.from_config(cs, "stage2")
        stage2_s, rep = pl.stage2_distill(data, rc, stage1_t, synft_s)
        stage2_s.save(out / f"stage2_student_seed{seed}.gdck")
        _save_report(rep, out, f"stage2_student_seed{seed}")
        results["stage2_student"][seed] = evaluate(pl.bundle_predictor(stage2_s))
        log(f"seed {seed}: stage2 student E50U50 {results['stage2_student'][seed].e50u50:.2f}")

        for kind in ("pseudo_only", "sp_kd", "self_distill_no_vfm", "fully_supervised"):
            rc = pl.RunConfig.from_config(cs, kind)
            model, rep = pl.run_baseline(kind, data, rc, stage1_t, synft_s)
            model.save(out / f"{kind}_seed{seed}.gdck")
            _save_report(rep, out, f"{kind}_seed{seed}")
            results[kind][seed] = evaluate(pl.bundle_predictor(model))
            log(f"seed {seed}: {kind} E50U50 {results[kind][seed].e50u50:.2f}")

    # combined report: per-cell medians across seeds
    rows = []
    csv_rows = []
    for method in METHOD_ROWS + (UPPER_BOUND_ROW,):
        reps = results[method]
        for seed, rep in reps.items():
            csv_rows.append((method, seed, rep))
        grid = np.median(np.stack([r.grid for r in reps.values()]), axis=0)
        lo = np.median(np.stack([r.ci_lo for r in reps.values()]), axis=0)
        hi = np.median(np.stack([r.ci_hi for r in reps.values()]), axis=0)
        rows.append((method, EUReport(grid, lo, hi)))
    table = render_table(rows, title="EU table (median across seeds, 95% CI half-widths)")
    (out / "eu_table.txt").write_text(table)
    write_metrics_csv(out / "metrics.csv", csv_rows)
    cfg.write_echo(out / "reports" / "reproduce_config.txt")
    if not quiet:
        print(table)
        print(f"[reproduce] total wall clock {time.perf_counter() - t_start:.1f} s")
    return results


def cmd_reproduce(cfg: Config, out: Path) -> int:
    run_reproduce(cfg, out)
    return 0


# ---------------------------------------------------------------------------


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        sub, cfg, out = parse_cli(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out.mkdir(parents=True, exist_ok=True)
    (out / "reports").mkdir(exist_ok=True)
    # config key reference for discoverability
    docs = out / "reports" / "config_reference.md"
    if not docs.exists():
        docs.write_text(reference_doc())
    handlers = {
        "gen": cmd_gen,
        "pretrain": cmd_pretrain,
        "probe": cmd_probe,
        "synft": cmd_synft,
        "stage1": cmd_stage1,
        "stage2": cmd_stage2,
        "baseline": cmd_baseline,
        "eval": cmd_eval,
        "export-embeddings": cmd_export_embeddings,
        "reproduce": cmd_reproduce,
    }
    try:
        return handlers[sub](cfg, out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # propagate stage errors with the stage name
        print(f"error in {sub}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
