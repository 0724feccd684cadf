"""Command-line entry point wiring the full pipeline.

Subcommands: filter, simulate, calibrate, fit, compare-models, analyze,
simpsons, serve. Directory-producing commands stage output in a temp
directory and rename on success, so failures never leave partial artifacts.
Exit codes: 0 success, 1 validation/processing failure (JSON error on
stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import shutil
import sys
import tempfile

import numpy as np

from . import advi, analysis, calibrate, data, freqfilter, manifest, model, plots, synthbench


class CliError(Exception):
    pass


def _fail(message: str, detail: dict | None = None) -> int:
    body = {"error": message}
    if detail:
        body.update(detail)
    print(json.dumps(body), file=sys.stderr)
    return 1


class _StagedDir:
    """Write into a temp sibling, rename to the target on success only."""

    def __init__(self, target: str):
        self.target = os.path.abspath(target)
        if os.path.exists(self.target) and os.listdir(self.target):
            raise CliError(f"output directory {target!r} already exists and is not empty")
        parent = os.path.dirname(self.target)
        os.makedirs(parent, exist_ok=True)
        self.tmp = tempfile.mkdtemp(dir=parent, prefix=".staging-")

    def __enter__(self):
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            if os.path.isdir(self.target):
                os.rmdir(self.target)
            os.replace(self.tmp, self.target)
        else:
            shutil.rmtree(self.tmp, ignore_errors=True)
        return False


def _dump_json(obj, path: str) -> None:
    data.atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# filter


def cmd_filter(args) -> int:
    metas = data.load_image_metas(os.path.join(args.in_dir, "images.jsonl"))
    ladder = freqfilter.default_ladder(args.n_severities)
    spec = ladder[args.severity_index]
    rois_by_image: dict[str, data.RoiAnnotation] = {}
    if args.rois:
        for ann in data.load_rois(args.rois):
            rois_by_image[ann.image_id] = ann

    from PIL import Image

    per_image = {}
    with _StagedDir(args.out_dir) as tmp:
        for meta in metas:
            src = os.path.join(args.in_dir, f"{meta.image_id}.png")
            arr = np.asarray(Image.open(src), dtype=np.float64)
            img = freqfilter.GrayImage(arr, meta.mm_per_pixel)
            if args.scheme == "full" or not args.rois:
                out = freqfilter.lowpass(img, spec)
            else:
                ann = rois_by_image.get(
                    meta.image_id, data.RoiAnnotation(reader_id="", image_id=meta.image_id, boxes=[])
                )
                out = freqfilter.roi_scheme_filter(img, ann, args.scheme, spec)
            dst = os.path.join(tmp, f"{meta.image_id}.png")
            Image.fromarray(freqfilter.quantize_u16(out), mode="I;16").save(dst)
            cutoff_frame = (
                None
                if spec.unfiltered
                else freqfilter.severity_to_cycles_per_frame(spec.cutoff_cycles_per_mm, img)
            )
            per_image[meta.image_id] = {
                "cutoff_cycles_per_frame": cutoff_frame,
                "sha256": manifest.file_sha256(dst),
            }
        data.save_image_metas(metas, os.path.join(tmp, "images.jsonl"))
        manifest.write_manifest(
            tmp,
            command="filter",
            config={
                "severity_index": args.severity_index,
                "scheme": args.scheme,
                "ladder": [s.cutoff_cycles_per_mm for s in ladder],
            },
            input_paths=[os.path.join(args.in_dir, f"{m.image_id}.png") for m in metas],
            seed=args.seed,
            extra={"images": per_image},
        )
    return 0


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    with open(args.config) as f:
        raw = json.load(f)
    advi_cfg = advi.AdviConfig(**raw.pop("advi", {}))
    cfg = synthbench.RecoveryConfig(advi=advi_cfg, **raw)
    if args.seed is not None:
        cfg.seed = args.seed
    report, post = synthbench.recovery_experiment(cfg)
    spec = synthbench.make_recovery_spec(cfg)
    truth = synthbench.true_params_from_prior(spec, seed=cfg.seed + 3, gamma_scale=cfg.gamma_scale)
    cases = synthbench.synthetic_cases(spec, malignant_fraction=0.3, seed=cfg.seed + 5)
    preds = model.sample_dataset(truth, spec, seed=cfg.seed + 4, cases=cases)

    with _StagedDir(args.out_dir) as tmp:
        data.save_predictions(preds, os.path.join(tmp, "predictions.jsonl"))
        data.save_cases(cases, os.path.join(tmp, "cases.jsonl"))
        _dump_json(spec.to_json_dict(), os.path.join(tmp, "model.json"))
        post.save(os.path.join(tmp, "posterior.json"))
        _dump_json(report.to_json_dict(), os.path.join(tmp, "report.json"))
        manifest.write_manifest(
            tmp,
            command="simulate",
            config=cfg.to_json_dict(),
            input_paths=[args.config],
            seed=cfg.seed,
        )
    return 0


# ---------------------------------------------------------------------------
# calibrate


def cmd_calibrate(args) -> int:
    cases = data.load_cases(args.labels)
    preds = data.load_predictions(args.val, cases, n_severities=args.n_severities)
    label_of = {c.case_id: 1 if c.label == "malignant" else 0 for c in cases}
    scores = np.array([r.score for r in preds.records])
    labels = np.array([label_of[r.case_id] for r in preds.records])
    cal = calibrate.fit_calibrator(scores, labels, bins=args.bins, seed=args.seed or 0)
    cal.save(args.out)
    manifest_path = args.out + ".manifest.json"
    data.atomic_write_text(
        manifest_path,
        json.dumps(
            manifest.write_manifest_dict(
                command="calibrate",
                config={"bins": args.bins, "n_severities": args.n_severities},
                input_paths=[args.val, args.labels],
                seed=args.seed,
            ),
            indent=2,
            sort_keys=True,
        ),
    )
    return 0


# ---------------------------------------------------------------------------
# fit / compare-models


def _load_dataset(pred_path: str, cases_path: str, n_severities: int) -> data.PredictionSet:
    cases = data.load_cases(cases_path)
    return data.load_predictions(pred_path, cases, n_severities=n_severities)


def cmd_fit(args) -> int:
    preds = _load_dataset(args.data, args.cases, args.n_severities)
    spec = model.spec_from_prediction_set(preds, variant=args.model, constrained=not args.unconstrained)
    cfg = advi.AdviConfig(
        mc_samples=args.mc_samples, max_iters=args.max_iters, seed=args.seed or 0
    )
    post = advi.fit_advi(spec, preds, cfg)
    post.save(args.out)
    _dump_json(spec.to_json_dict(), os.path.splitext(args.out)[0] + ".model.json")
    return 0


def cmd_compare_models(args) -> int:
    preds = _load_dataset(args.data, args.cases, args.n_severities)
    candidates = []
    for variant in args.variants.split(","):
        spec = model.spec_from_prediction_set(preds, variant=variant.strip())
        cfg = advi.AdviConfig(mc_samples=args.mc_samples, max_iters=args.max_iters, seed=args.seed or 0)
        post = advi.fit_advi(spec, preds, cfg)
        candidates.append((spec, post))
    ranking = advi.compare_models(candidates, preds, mc_samples=1000, seed=args.seed or 0)
    _dump_json({"ranking": ranking}, args.out)
    return 0


# ---------------------------------------------------------------------------
# analyze


def _analysis_outputs(post, spec, cases, replicates, seed):
    malignant = np.array([c.label == "malignant" for c in cases])
    design = model.dense_design(spec.n_readers, spec.n_severities, spec.n_cases)
    samples = analysis.posterior_predictive_sample(
        post, spec, design=design, replicates=replicates, seed=seed
    )
    subgroups = sorted(set(int(g) for g in spec.subgroup_of))
    confidences = {g: analysis.confidence_summary(post, spec, g) for g in subgroups}
    curves = {}
    for g in subgroups:
        try:
            curves[g] = analysis.separability_curve(samples, malignant, g)
        except analysis.CoverageError:
            continue  # subgroup has no malignant cases; confidence-only
    return confidences, curves


def cmd_analyze(args) -> int:
    post = advi.PosteriorApprox.load(args.posterior)
    with open(args.spec) as f:
        spec = model.ModelSpec.from_json_dict(json.load(f))
    cases = data.load_cases(args.cases)
    case_by_id = {c.case_id: c for c in cases}
    ordered = [case_by_id[cid] for cid in spec.case_ids]
    confidences, curves = _analysis_outputs(post, spec, ordered, args.replicates, args.seed or 0)

    report = {
        "replicates": args.replicates,
        "seed": args.seed or 0,
        "variant": spec.variant,
        "subgroups": {
            str(g): {
                "confidence": [
                    {
                        "severity": e.severity,
                        "mean": e.mean,
                        "std": e.std,
                        "prob_positive": e.prob_positive,
                    }
                    for e in cs.entries
                ],
                "separability": (
                    None
                    if g not in curves
                    else {
                        "ks_median": np.median(curves[g].ks, axis=1).tolist(),
                        "p_values": [
                            None if np.isnan(p) else float(p) for p in curves[g].p_values
                        ],
                    }
                ),
            }
            for g, cs in confidences.items()
        },
    }
    with _StagedDir(args.out_dir) as tmp:
        _dump_json(report, os.path.join(tmp, "report.json"))
        for g, cs in confidences.items():
            with open(os.path.join(tmp, f"confidence_subgroup{g}.csv"), "w", newline="") as f:
                w = csv.writer(f)
                w.writerow(["severity", "mean", "std", "prob_positive"])
                for e in cs.entries:
                    w.writerow([e.severity, e.mean, e.std, e.prob_positive])
            plots.subgroup_figure(
                cs, curves.get(g), f"subgroup {g}", os.path.join(tmp, f"subgroup{g}.svg")
            )
        for g, curve in curves.items():
            with open(os.path.join(tmp, f"separability_subgroup{g}.csv"), "w", newline="") as f:
                w = csv.writer(f)
                w.writerow(["severity", "ks_median", "p_value"])
                med = np.median(curve.ks, axis=1)
                for s in range(curve.n_severities):
                    p = curve.p_values[s]
                    w.writerow([s, med[s], "" if np.isnan(p) else p])
        manifest.write_manifest(
            tmp,
            command="analyze",
            config={"replicates": args.replicates},
            input_paths=[args.posterior, args.spec, args.cases],
            seed=args.seed,
        )
    return 0


# ---------------------------------------------------------------------------
# simpsons


def cmd_simpsons(args) -> int:
    preds = _load_dataset(args.data, args.cases, args.n_severities)
    cfg = advi.AdviConfig(mc_samples=args.mc_samples, max_iters=args.max_iters, seed=args.seed or 0)

    sub_spec = model.spec_from_prediction_set(preds, variant=args.model)
    sub_post = advi.fit_advi(sub_spec, preds, cfg)
    pooled_spec = model.spec_from_prediction_set(
        preds, variant=args.model, subgroups=None
    )
    # pooled: merge every case into one subgroup
    pooled_spec.n_subgroups = 1
    pooled_spec.subgroup_of = np.zeros(pooled_spec.n_cases, dtype=np.intp)
    pooled_post = advi.fit_advi(pooled_spec, preds, cfg)

    cases = [preds.case_by_id(cid) for cid in sub_spec.case_ids]
    sub_conf, sub_curves = _analysis_outputs(sub_post, sub_spec, cases, args.replicates, args.seed or 0)
    pooled_conf, pooled_curves = _analysis_outputs(
        pooled_post, pooled_spec, cases, args.replicates, args.seed or 0
    )
    report = analysis.simpsons_report(
        confidence_by_subgroup=sub_conf,
        confidence_pooled=pooled_conf[0],
        separability_by_subgroup=sub_curves or None,
        separability_pooled=pooled_curves.get(0),
    )
    with _StagedDir(args.out_dir) as tmp:
        _dump_json(report.to_json_dict(), os.path.join(tmp, "report.json"))
        plots.pooled_vs_subgroup_figure(
            pooled_conf[0], sub_conf, os.path.join(tmp, "pooled_vs_subgroup.svg")
        )
        manifest.write_manifest(
            tmp,
            command="simpsons",
            config={"replicates": args.replicates, "model": args.model},
            input_paths=[args.data, args.cases],
            seed=args.seed,
        )
    return 0


# ---------------------------------------------------------------------------
# serve


def cmd_serve(args) -> int:
    import uvicorn

    from .server import StudyStore, create_app

    store = StudyStore(args.store)
    app = create_app(store, ladder=freqfilter.default_ladder(args.n_severities))
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robustlens")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None, help="reserved; recorded in manifests")

    p = sub.add_parser("filter", help="low-pass filter an image directory")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--severity-index", type=int, required=True)
    p.add_argument("--scheme", choices=["interior", "exterior", "full"], default="full")
    p.add_argument("--rois", default=None)
    p.add_argument("--n-severities", type=int, default=9)
    common(p)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("simulate", help="run a synthetic recovery experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="fit the score calibrator")
    p.add_argument("--val", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bins", type=int, default=calibrate.DEFAULT_BINS)
    p.add_argument("--n-severities", type=int, default=9)
    common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("fit", help="fit the latent model by variational inference")
    p.add_argument("--data", required=True)
    p.add_argument("--cases", required=True)
    p.add_argument("--model", choices=model.VARIANTS, default="full")
    p.add_argument("--unconstrained", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--n-severities", type=int, default=9)
    p.add_argument("--mc-samples", type=int, default=10)
    p.add_argument("--max-iters", type=int, default=20000)
    common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("compare-models", help="rank model variants by ELBO")
    p.add_argument("--data", required=True)
    p.add_argument("--cases", required=True)
    p.add_argument("--variants", default="case,filter,reader_shared,full")
    p.add_argument("--out", required=True)
    p.add_argument("--n-severities", type=int, default=9)
    p.add_argument("--mc-samples", type=int, default=10)
    p.add_argument("--max-iters", type=int, default=20000)
    common(p)
    p.set_defaults(func=cmd_compare_models)

    p = sub.add_parser("analyze", help="confidence and separability report")
    p.add_argument("--posterior", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--cases", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--replicates", type=int, default=analysis.DEFAULT_REPLICATES)
    common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simpsons", help="pooled vs subgroup disagreement report")
    p.add_argument("--data", required=True)
    p.add_argument("--cases", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--model", choices=model.VARIANTS, default="full")
    p.add_argument("--n-severities", type=int, default=9)
    p.add_argument("--mc-samples", type=int, default=10)
    p.add_argument("--max-iters", type=int, default=20000)
    p.add_argument("--replicates", type=int, default=200)
    common(p)
    p.set_defaults(func=cmd_simpsons)

    p = sub.add_parser("serve", help="run the reader-study server")
    p.add_argument("--store", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--n-severities", type=int, default=9)
    common(p)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, data.DataError, model.ModelError, analysis.AnalysisError,
            calibrate.CalibrationError, freqfilter.FilterError, advi.FitFailure,
            FileNotFoundError) as e:
        return _fail(str(e), {"type": type(e).__name__})


if __name__ == "__main__":
    sys.exit(main())
