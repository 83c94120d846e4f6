"""Command-line entry point: ``morpho <command> [flags]``.

Every command writes a run manifest next to its output (``<file>.manifest.json``
or ``<dir>/manifest.json``). Manifests hold no absolute paths and no wall-clock
time unless ``--wall-clock`` is given, so reruns are byte-identical.
Errors go to stderr as one JSON object and map to distinct exit codes.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .cohort import Cohort, load_cohort, read_demographics
from .discriminant import PipelineConfig, confounder_only_cv, cross_validate, fit_pipeline, measurement_response
from .errors import ConfigError, DataError, MorphoError, UsageError
from .experiments import DownsampleSpec, deflation_population_study, dummy_variable_experiment, stability_experiment
from .mesh import load_corpus, measure, unflatten, write_off, write_region_map
from .procrustes import generalized_procrustes
from .regression_shape import regression_cv_r2, regression_fit, representative_for_value
from .serialize import (
    dumps,
    load,
    pipeline_from_dict,
    pipeline_to_dict,
    regression_from_dict,
    regression_to_dict,
    save,
)
from .synth import SynthSpec, generate, imbalance_spec, write_synth

log = logging.getLogger("morpho")

FLOAT_FORMAT = "%.17g"
PATH_ARGS = {"meshes", "demographics", "regions", "model", "out", "out_dir", "spec", "configs"}


# -- manifest ----------------------------------------------------------------


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def input_digests(inputs: dict) -> dict:
    """sha256 of every input file keyed by ``<flag>/<path relative to the flag value>``."""
    out = {}
    for flag, value in inputs.items():
        if value is None:
            continue
        p = Path(value)
        if p.is_dir():
            for f in sorted(q for q in p.rglob("*") if q.is_file()):
                out[f"{flag}/{f.relative_to(p).as_posix()}"] = _sha256(f)
        elif p.is_file():
            out[f"{flag}/{p.name}"] = _sha256(p)
    return out


def _timestamp(wall_clock: bool):
    if wall_clock:
        return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is None:
        return None
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(int(epoch)))


def build_manifest(args, config: dict, inputs: dict, outputs: list[Path], started) -> dict:
    return {
        "tool": "morpho",
        "version": __version__,
        "command": args.command,
        "config": config,
        "inputs": input_digests(inputs),
        "outputs": {p.name: _sha256(p) for p in outputs},
        "seed": getattr(args, "seed", None),
        "timestamps": {"started": started, "finished": _timestamp(args.wall_clock)},
    }


def resolved_config(args, extra=None) -> dict:
    """Parsed flags minus paths and bookkeeping, plus anything the command resolved itself."""
    skip = PATH_ARGS | {"command", "func", "wall_clock", "verbose"}
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    if extra:
        cfg.update(extra)
    return cfg


def _manifest_path(out: Path) -> Path:
    return out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")


def _write_manifest(args, out: Path, outputs, inputs, extra=None, started=None) -> None:
    m = build_manifest(args, resolved_config(args, extra), inputs, outputs, started)
    _manifest_path(out).write_text(json.dumps(m, indent=2, sort_keys=True) + "\n")


# -- helpers -----------------------------------------------------------------


def _csv_list(text: str) -> tuple:
    return tuple(s.strip() for s in text.split(",") if s.strip()) if text else ()


def _lambda_grid(text: str) -> np.ndarray:
    """``start:stop:step`` (inclusive) or a comma list."""
    try:
        if ":" in text:
            start, stop, step = (float(v) for v in text.split(":"))
            if step <= 0 or stop < start:
                raise ValueError
            n = int(np.floor((stop - start) / step + 1e-9)) + 1
            return np.round(start + step * np.arange(n), 12)
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise UsageError(f"bad lambda grid {text!r}; use start:stop:step or a comma list") from None


def _out_file(path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _out_dir(path, *inputs) -> Path:
    p = Path(path)
    for i in inputs:
        if i is not None and p.resolve() == Path(i).resolve():
            raise UsageError(f"output directory {p} is also an input; outputs must not overwrite inputs")
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_csv(df: pd.DataFrame, path: Path) -> None:
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def _pipeline_config(args, **overrides) -> PipelineConfig:
    return PipelineConfig(
        dr_method=args.dr,
        pca_modes=args.pca,
        pls_modes=args.pls,
        adjust=args.adjust,
        deflate=args.deflate,
        deflate_train=args.deflate_train,
        deflate_components=args.deflate_components,
        confounders=_csv_list(args.confounders),
        ridge=args.ridge,
        whiten_variance=args.whiten_variance,
        **overrides,
    )


def _cohort(args) -> Cohort:
    return load_cohort(args.meshes, args.demographics, args.class_col, args.regions, args.id_col)


def _unlabelled_cohort(args, needs_demographics: bool) -> Cohort:
    """Cohort for scoring: labels are irrelevant and set to 0."""
    corpus = load_corpus(args.meshes, args.regions)
    if args.demographics is not None:
        demo = read_demographics(args.demographics, args.id_col)
    elif needs_demographics:
        raise UsageError("the model uses confounders; pass --demographics")
    else:
        demo = pd.DataFrame(index=pd.Index(corpus.subject_ids, name=args.id_col))
    missing = [s for s in corpus.subject_ids if s not in demo.index]
    if missing:
        raise DataError(f"{args.demographics}: no rows for meshes {missing[:5]}")
    return Cohort(corpus.subject_ids, corpus.shapes, np.zeros(len(corpus.subject_ids), int), demo, corpus.template)


def _data_inputs(args) -> dict:
    return {"meshes": args.meshes, "demographics": args.demographics, "regions": args.regions}


# -- commands ----------------------------------------------------------------


def cmd_align(args, started):
    corpus = load_corpus(args.meshes, args.regions)
    out = _out_dir(args.out, args.meshes)
    atlas = generalized_procrustes(corpus.shapes, tol=args.tol, max_iter=args.max_iter)
    mesh_dir = out / "meshes"
    mesh_dir.mkdir(exist_ok=True)
    faces = corpus.template.faces
    for sid, x in zip(corpus.subject_ids, atlas.aligned):
        write_off(mesh_dir / f"{sid}.off", x.reshape(-1, 3), faces)
    if corpus.template.region_map is not None:
        write_region_map(mesh_dir / "regions.txt", corpus.template.region_map)
    write_off(out / "mean.off", atlas.mean_shape.reshape(-1, 3), faces)
    transforms = {
        "iterations": atlas.iterations_run,
        "converged": atlas.converged,
        "transforms": {sid: t.to_dict() for sid, t in zip(corpus.subject_ids, atlas.transforms)},
    }
    (out / "transforms.json").write_text(dumps(transforms))
    if not atlas.converged:
        log.warning("alignment did not converge in %d iterations", args.max_iter)
    _write_manifest(args, out, [out / "mean.off", out / "transforms.json"], {"meshes": args.meshes, "regions": args.regions}, started=started)


def cmd_measure(args, started):
    corpus = load_corpus(args.meshes, args.regions)
    if corpus.template.region_map is None:
        raise DataError(f"{args.meshes}: no region map; pass --regions")
    rows = [
        {"subject_id": sid, **measure(unflatten(x, corpus.template)).as_row()}
        for sid, x in zip(corpus.subject_ids, corpus.shapes)
    ]
    out = _out_file(args.out)
    _write_csv(pd.DataFrame(rows), out)
    _write_manifest(args, out, [out], {"meshes": args.meshes, "regions": args.regions}, started=started)


def cmd_fit(args, started):
    cohort = _cohort(args)
    cfg = _pipeline_config(args)
    fitted = fit_pipeline(cohort, cfg)
    out = _out_file(args.out)
    save(pipeline_to_dict(fitted, cohort.template), out)
    _write_manifest(args, out, [out], _data_inputs(args), {"pipeline": cfg.to_dict()}, started)


def cmd_cv(args, started):
    cohort = _cohort(args)
    cfg = _pipeline_config(args, cv_folds=args.folds, seed=args.seed)
    result = {
        "config": cfg.label,
        "n_subjects": len(cohort),
        "n_cases": cohort.n_cases,
        "folds": args.folds,
        "seed": args.seed,
        "log_loss": cross_validate(cohort, cfg),
        "chance_log_loss": float(np.log(2.0)),
    }
    if cfg.confounders:
        result["confounder_only_log_loss"] = confounder_only_cv(cohort, cfg.confounders, args.folds, args.seed, cfg.ridge)
    out = _out_file(args.out)
    out.write_text(dumps(result))
    _write_manifest(args, out, [out], _data_inputs(args), {"pipeline": cfg.to_dict()}, started)


def _load_pipeline(path):
    fitted, template = pipeline_from_dict(load(path))
    return fitted, template


def cmd_score(args, started):
    fitted, _ = _load_pipeline(args.model)
    needs = fitted.deflation is not None or fitted.adjust_standardizer is not None
    cohort = _unlabelled_cohort(args, needs)
    df = pd.DataFrame(
        {
            "subject_id": list(cohort.subject_ids),
            "score": fitted.scores(cohort),
            "logit": fitted.decision_function(cohort),
            "probability": fitted.predict_proba(cohort),
        }
    )
    out = _out_file(args.out)
    _write_csv(df, out)
    inputs = {"model": args.model, "meshes": args.meshes, "demographics": args.demographics, "regions": args.regions}
    _write_manifest(args, out, [out], inputs, started=started)


def cmd_pattern_export(args, started):
    fitted, template = _load_pipeline(args.model)
    if template is None:
        raise DataError(f"{args.model}: model has no template mesh")
    grid = _lambda_grid(args.lambda_grid)
    out = _out_dir(args.out_dir)
    pat = fitted.pattern
    mean = pat.mean_shape.reshape(-1, 3)
    disp = {"vertex": np.arange(len(mean))}
    if template.region_map is not None:
        disp["region"] = template.region_map
    outputs = []
    for k in grid:
        x = pat.representative_shape(k * pat.score_sd).reshape(-1, 3)
        name = f"pattern_{k:+.3f}sd.off"
        write_off(out / name, x, template.faces)
        outputs.append(out / name)
        disp[f"{k:+.3f}"] = np.linalg.norm(x - mean, axis=1)
    _write_csv(pd.DataFrame(disp), out / "displacement.csv")
    outputs.append(out / "displacement.csv")
    np.savetxt(out / "pattern.txt", pat.standardized, fmt=FLOAT_FORMAT)
    outputs.append(out / "pattern.txt")
    if template.region_map is not None:
        _write_csv(measurement_response(pat, template, grid), out / "measurements.csv")
        outputs.append(out / "measurements.csv")
    _write_manifest(args, out, outputs, {"model": args.model}, {"score_sd": pat.score_sd}, started)


def cmd_regress(args, started):
    corpus = load_corpus(args.meshes, args.regions)
    demo = read_demographics(args.demographics, args.id_col)
    if args.target_col not in demo.columns:
        raise DataError(f"{args.demographics}: no target column {args.target_col!r}")
    missing = [s for s in corpus.subject_ids if s not in demo.index]
    if missing:
        raise DataError(f"{args.demographics}: no rows for meshes {missing[:5]}")
    demo = demo.loc[corpus.subject_ids]
    mask = np.ones(len(demo), bool)
    if args.train_class != "all":
        if args.class_col not in demo.columns:
            raise DataError(f"{args.demographics}: no class column {args.class_col!r}")
        mask = demo[args.class_col].to_numpy(float) == (0 if args.train_class == "controls" else 1)
    values = pd.to_numeric(demo[args.target_col], errors="coerce").to_numpy(float)[mask]
    if np.isnan(values).any():
        raise DataError(f"{args.demographics}: missing or non-numeric {args.target_col!r} values")
    shapes = corpus.shapes[mask]
    model = regression_fit(shapes, values, args.pls)
    metrics = {
        "n_subjects": int(mask.sum()),
        "cv_folds": args.folds,
        "cv_r2": regression_cv_r2(shapes, values, args.pls, args.folds, args.seed),
        "target": args.target_col,
    }
    out = _out_file(args.out)
    save(regression_to_dict(model, corpus.template, metrics), out)
    _write_manifest(args, out, [out], _data_inputs(args), {"metrics": metrics}, started)


def cmd_regress_shape(args, started):
    model, template = regression_from_dict(load(args.model))
    if template is None:
        raise DataError(f"{args.model}: model has no template mesh")
    x = representative_for_value(model, args.value)
    out = _out_file(args.out)
    write_off(out, x.reshape(-1, 3), template.faces)
    extra = {"predicted": float(model.predict(x))}
    if template.region_map is not None:
        extra["measurements"] = measure(unflatten(x, template)).as_row()
    _write_manifest(args, out, [out], {"model": args.model}, extra, started)


def cmd_synth(args, started):
    spec = SynthSpec.from_json(args.spec) if args.spec else imbalance_spec()
    spec = replace(spec, seed=args.seed)
    cohort, truth = generate(spec)
    out = _out_dir(args.out_dir)
    write_synth(cohort, truth, out)
    outputs = [out / "demographics.csv", out / "ground_truth.json"]
    _write_manifest(args, out, outputs, {"spec": args.spec}, {"spec": spec.to_dict()}, started)


def _grid_configs(args) -> list[PipelineConfig]:
    base = _pipeline_config(args).to_dict()
    if not args.configs:
        return [PipelineConfig.from_dict(base)]
    entries = load(args.configs)
    if isinstance(entries, dict):
        entries = entries.get("configs")
    if not isinstance(entries, list) or not entries:
        raise ConfigError(f"{args.configs}: expected a non-empty list of pipeline configs")
    configs = []
    for e in entries:
        if not isinstance(e, dict):
            raise ConfigError(f"{args.configs}: every config must be a JSON object")
        configs.append(PipelineConfig.from_dict({**base, **e}))
    return configs


def cmd_downsample_exp(args, started):
    cohort = _cohort(args)
    configs = _grid_configs(args)
    weight = None if args.weight_col in ("", "none") else args.weight_col
    if args.study == "stability":
        spec = DownsampleSpec(args.target_class, args.keep, weight)
        df = stability_experiment(cohort, configs, args.seeds, spec, args.seed).records
    else:
        if weight is None:
            raise UsageError("the deflation study needs --weight-col")
        frames = [
            deflation_population_study(cohort, replace(c, deflate=True), args.seeds, args.keep, weight, args.seed).records
            for c in configs
        ]
        df = pd.concat(frames, ignore_index=True)
    out = _out_file(args.out)
    _write_csv(df, out)
    inputs = {**_data_inputs(args), "configs": args.configs}
    _write_manifest(args, out, [out], inputs, {"pipelines": [c.to_dict() for c in configs]}, started)


def cmd_dummy_exp(args, started):
    cohort = _cohort(args)
    cfg = _pipeline_config(args)
    df = dummy_variable_experiment(cohort, args.noise_sd, args.repeats, cfg, cfg.confounders, args.seed)
    out = _out_file(args.out)
    _write_csv(df, out)
    _write_manifest(args, out, [out], _data_inputs(args), {"pipeline": cfg.to_dict()}, started)


# -- parser ------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_data(p, class_col=True):
    p.add_argument("--meshes", required=True, help="directory of OFF meshes sharing connectivity")
    p.add_argument("--demographics", required=True, help="CSV with a header row")
    p.add_argument("--regions", help="region map file (default: regions.txt next to the meshes)")
    p.add_argument("--id-col", default="subject_id", help="subject id column (default: subject_id)")
    if class_col:
        p.add_argument("--class-col", default="label", help="0/1 class column, 1 = case (default: label)")


def _add_pipeline(p):
    d = PipelineConfig()
    p.add_argument("--confounders", default="", help="comma-separated confounder columns")
    p.add_argument("--dr", default=d.dr_method, choices=["pca", "pls", "pca+pls", "pca_pls"])
    p.add_argument("--pca", type=int, default=d.pca_modes, help=f"PCA modes (default {d.pca_modes})")
    p.add_argument("--pls", type=int, default=d.pls_modes, help=f"PLS modes (default {d.pls_modes})")
    p.add_argument("--adjust", action="store_true", help="append standardized confounders to the logistic features")
    p.add_argument("--deflate", action="store_true", help="remove confounder-predicted shape first")
    p.add_argument("--deflate-train", default=d.deflate_train, choices=["controls", "cases", "both"])
    p.add_argument("--deflate-components", type=int, default=None, help="PLS components (default: one per confounder)")
    p.add_argument("--ridge", type=float, default=d.ridge, help=f"logistic ridge penalty (default {d.ridge:g})")
    p.add_argument(
        "--whiten-variance", type=float, default=d.whiten_variance, help="variance fraction of the whitening modes"
    )


def _add_seed(p):
    p.add_argument("--seed", type=int, required=True, help="master seed (required)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="morpho", description="Statistical shape analysis of two-class mesh cohorts.")
    parser.add_argument("--version", action="version", version=f"morpho {__version__}")
    parser.add_argument("--wall-clock", action="store_true", help="record real timestamps in manifests")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("align", help="rigid generalized Procrustes alignment")
    p.add_argument("--meshes", required=True)
    p.add_argument("--regions")
    p.add_argument("--tol", type=float, default=1e-7, help="RMS change per landmark (default 1e-7)")
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("measure", help="LV/RV volumes and LV mass per mesh")
    p.add_argument("--meshes", required=True)
    p.add_argument("--regions")
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("fit", help="fit the discriminant pipeline")
    _add_data(p)
    _add_pipeline(p)
    p.add_argument("--out", required=True, help="model JSON")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("cv", help="cross-validated log-loss")
    _add_data(p)
    _add_pipeline(p)
    p.add_argument("--folds", type=int, default=10)
    _add_seed(p)
    p.add_argument("--out", required=True, help="result JSON")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("score", help="score meshes with a fitted model")
    p.add_argument("--model", required=True)
    p.add_argument("--meshes", required=True)
    p.add_argument("--demographics", help="needed when the model deflates or adjusts")
    p.add_argument("--regions")
    p.add_argument("--id-col", default="subject_id")
    p.add_argument("--out", required=True, help="scores CSV")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("pattern-export", help="representative shapes along the pattern")
    p.add_argument("--model", required=True)
    p.add_argument("--lambda-grid", default="-3:3:0.5", help="pattern SD units, start:stop:step (default -3:3:0.5)")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_pattern_export)

    p = sub.add_parser("regress", help="PLS regression of a variable on shape")
    _add_data(p)
    p.add_argument("--target-col", required=True)
    p.add_argument("--train-class", default="controls", choices=["controls", "cases", "all"])
    p.add_argument("--pls", type=int, default=3)
    p.add_argument("--folds", type=int, default=5, help="CV folds for the reported R^2")
    _add_seed(p)
    p.add_argument("--out", required=True, help="model JSON")
    p.set_defaults(func=cmd_regress)

    p = sub.add_parser("regress-shape", help="minimal-distance shape for a target value")
    p.add_argument("--model", required=True)
    p.add_argument("--value", type=float, required=True)
    p.add_argument("--out", required=True, help="OFF mesh")
    p.set_defaults(func=cmd_regress_shape)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("--spec", help="synth spec JSON (default: built-in imbalance scenario)")
    _add_seed(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("downsample-exp", help="pattern stability under rank-weighted downsampling")
    _add_data(p)
    _add_pipeline(p)
    p.add_argument("--study", default="stability", choices=["stability", "deflation"])
    p.add_argument("--keep", type=float, default=0.25)
    p.add_argument("--weight-col", default="bmi", help="rank-weight column; 'none' samples uniformly")
    p.add_argument("--target-class", default="controls", choices=["controls", "cases"])
    p.add_argument("--seeds", type=int, default=100)
    p.add_argument("--configs", help="JSON list of pipeline configs, merged over the flags")
    _add_seed(p)
    p.add_argument("--out", required=True, help="report CSV")
    p.set_defaults(func=cmd_downsample_exp)

    p = sub.add_parser("dummy-exp", help="label-derived dummy confounder experiment")
    _add_data(p)
    _add_pipeline(p)
    p.add_argument("--noise-sd", type=float, default=0.5)
    p.add_argument("--repeats", type=int, default=100)
    _add_seed(p)
    p.add_argument("--out", required=True, help="CSV")
    p.set_defaults(func=cmd_dummy_exp)
    return parser


def _report(exc: BaseException, code: int) -> None:
    payload = {"error": type(exc).__name__, "exit_code": code, "message": str(exc)}
    sys.stderr.write(json.dumps(payload) + "\n")


def _join_negative_values(argv: list[str]) -> list[str]:
    """Let ``--lambda-grid -3:3:0.5`` through; argparse would read the value as a flag."""
    out, i = [], 0
    while i < len(argv):
        if argv[i] == "--lambda-grid" and i + 1 < len(argv):
            out.append(f"--lambda-grid={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = _join_negative_values(list(sys.argv[1:] if argv is None else argv))
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        args.func(args, _timestamp(args.wall_clock))
    except MorphoError as exc:
        _report(exc, exc.exit_code)
        return exc.exit_code
    except FileNotFoundError as exc:
        err = DataError(f"{exc.filename}: no such file or directory")
        _report(err, err.exit_code)
        return err.exit_code
    except OSError as exc:
        _report(exc, 10)
        return 10
    return 0


if __name__ == "__main__":
    sys.exit(main())
