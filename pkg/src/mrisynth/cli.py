"""Command-line pipeline: train, dropout, synthesize, evaluate, montage.

Every command is deterministic given config + seed, writes its resolved
configuration next to its outputs, and uses exit codes 0 (ok), 1
(usage/config), 2 (data), 3 (numeric failure).
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from . import checkpoint as ckpt
from .config import RunConfig, load_run_config
from .errors import CheckpointError, ConfigError, DataError, NumericError
from .inference import sliding_window_synthesize
from .metrics import MetricRecord, REGIONS, aggregate, dice, hd95, ssim
from .preprocess import minmax_rescale, zscore_apply, zscore_fit
from .report import (
    format_aggregate_table,
    save_loss_curve_figure,
    save_montage,
    write_aggregates_csv,
    write_records_csv,
)
from .training import fit, input_modalities
from .volume_io import (
    MODALITIES,
    MODALITY_TO_TAG,
    TAG_TO_MODALITY,
    DropPlan,
    Study,
    Volume,
    discover_subjects,
    dropout_choice,
    load_study,
    load_volume,
    read_dropout_manifest,
    save_volume,
    write_dropout_manifest,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

MANIFEST_FILENAME = "dropout_manifest.tsv"


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> Any:  # noqa: D102 - argparse hook
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _run_config(args: argparse.Namespace) -> RunConfig:
    overrides: dict[str, Any] = {}
    if getattr(args, "out", None) is not None:
        overrides["out_dir"] = args.out
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        overrides["workers"] = args.workers
    return load_run_config(getattr(args, "config", None), overrides=overrides)


def _require_data_root(run: RunConfig) -> Path:
    if run.data_root is None:
        raise ConfigError("data_root is required (set it in the config file or env)")
    if not run.data_root.is_dir():
        raise DataError(f"data root does not exist: {run.data_root}")
    return run.data_root


def _map_workers(fn: Callable[[Any], Any], items: Sequence[Any], workers: int) -> list[Any]:
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _standardized_inputs(study: Study, modalities: Iterable[str], zscore_mode: str) -> Study:
    vols = {
        name: zscore_apply(study.modalities[name], zscore_fit(study.modalities[name], zscore_mode))
        for name in modalities
    }
    return Study(subject_id=study.subject_id, modalities=vols, mask=None)


# ---------------------------------------------------------------------------
# train


def cmd_train(args: argparse.Namespace) -> int:
    run = _run_config(args)
    root = _require_data_root(run)
    if args.target is None:
        targets = run.scenarios
    elif args.target == "all":
        targets = MODALITIES
    else:
        targets = (args.target,)

    subjects = discover_subjects(root)
    if not subjects:
        raise DataError(f"no subject directories under {root}")
    studies = [load_study(root / s, s, run.naming_pattern) for s in subjects]
    for s in studies:
        if not s.complete:
            raise DataError(f"subject {s.subject_id}: training needs all four modalities")

    run.out_dir.mkdir(parents=True, exist_ok=True)
    run.write_resolved(run.out_dir)
    for target in targets:
        scenario_dir = run.out_dir / f"missing_{target}"
        _, curve = fit(
            studies,
            run.train_config(target),
            run.model,
            out_dir=scenario_dir,
            zscore_mode=run.zscore_mode,
        )
        save_loss_curve_figure(curve, scenario_dir / "loss_curve.png")
        print(f"trained missing-{target}: {len(curve)} steps, final loss {curve[-1][1]:.4e}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# dropout


def cmd_dropout(args: argparse.Namespace) -> int:
    run = _run_config(args)
    root = _require_data_root(run)
    subjects = discover_subjects(root)
    if not subjects:
        raise DataError(f"no subject directories under {root}")

    plans: list[DropPlan] = []
    for subject in subjects:
        missing_files = [
            m
            for m in MODALITIES
            if not (root / subject / run.naming_pattern.format(subject=subject, tag=MODALITY_TO_TAG[m])).exists()
        ]
        if missing_files:
            raise DataError(f"subject {subject}: missing modality file(s) for {missing_files}")
        plans.append(DropPlan(subject, dropout_choice(run.seed, subject), run.seed))

    run.out_dir.mkdir(parents=True, exist_ok=True)
    run.write_resolved(run.out_dir)
    manifest_path = run.out_dir / MANIFEST_FILENAME
    write_dropout_manifest(plans, manifest_path)
    print(f"wrote {manifest_path} ({len(plans)} subjects)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# synthesize


def _latest_checkpoint(directory: Path) -> Path:
    candidates = sorted(directory.glob("epoch_*.ckpt"))
    if not candidates:
        raise CheckpointError(f"no epoch_*.ckpt under {directory}")
    return candidates[-1]


def _resolve_checkpoints(
    checkpoint_arg: str, needed: set[str]
) -> dict[str, tuple[Path, Any]]:
    """Map each needed scenario to (path, loaded store)."""
    path = Path(checkpoint_arg)
    out: dict[str, tuple[Path, Any]] = {}
    if path.is_file():
        store, _ = ckpt.load_checkpoint(path)
        if store.scenario is None:
            raise CheckpointError(f"{path}: checkpoint has no recorded scenario")
        for scenario in needed:
            if scenario != store.scenario:
                raise DataError(
                    f"scenario mismatch: checkpoint {path} synthesizes {store.scenario}, "
                    f"but a study is missing {scenario}"
                )
        out[store.scenario] = (path, store)
        return out
    if path.is_dir():
        for scenario in sorted(needed):
            sub = path / f"missing_{scenario}"
            if not sub.is_dir():
                raise CheckpointError(f"no checkpoint directory for scenario {scenario}: {sub}")
            best = _latest_checkpoint(sub)
            store, _ = ckpt.load_checkpoint(best)
            if store.scenario != scenario:
                raise DataError(
                    f"scenario mismatch: {best} records {store.scenario}, expected {scenario}"
                )
            out[scenario] = (best, store)
        return out
    raise CheckpointError(f"checkpoint path not found: {path}")


def cmd_synthesize(args: argparse.Namespace) -> int:
    run = _run_config(args)
    root = _require_data_root(run)

    if args.manifest:
        dropped_by_subject = read_dropout_manifest(args.manifest)
    elif args.subject:
        store, _ = ckpt.load_checkpoint(Path(args.checkpoint))
        if store.scenario is None:
            raise CheckpointError(f"{args.checkpoint}: checkpoint has no recorded scenario")
        dropped_by_subject = {args.subject: store.scenario}
    else:
        raise ConfigError("synthesize needs --manifest or --subject")

    stores = _resolve_checkpoints(args.checkpoint, set(dropped_by_subject.values()))
    run.out_dir.mkdir(parents=True, exist_ok=True)
    run.write_resolved(run.out_dir)

    def synth_one(item: tuple[str, str]) -> Path:
        subject, dropped = item
        study = load_study(root / subject, subject, run.naming_pattern)
        inputs = input_modalities(dropped)
        absent = [m for m in inputs if m not in study.modalities]
        if absent:
            raise DataError(f"subject {subject}: missing input modality file(s) {absent}")
        ckpt_path, store = stores[dropped]
        std = _standardized_inputs(study, inputs, run.zscore_mode)
        volume = sliding_window_synthesize(store, std, run.tiling)
        out_file = run.out_dir / f"{subject}_{MODALITY_TO_TAG[dropped]}.nii.gz"
        save_volume(volume, out_file)
        provenance = {
            "subject": subject,
            "scenario": dropped,
            "inputs": list(inputs),
            "checkpoint": str(ckpt_path),
            "checkpoint_sha256": ckpt.checkpoint_sha256(ckpt_path),
            "tiling": {
                "patch": run.tiling.patch,
                "overlap": run.tiling.overlap,
                "sigma_scale": run.tiling.sigma_scale,
                "weight_floor": run.tiling.weight_floor,
            },
        }
        out_file.with_name(out_file.name.replace(".nii.gz", ".provenance.json")).write_text(
            json.dumps(provenance, indent=2, sort_keys=True) + "\n"
        )
        return out_file

    items = sorted(dropped_by_subject.items())
    outputs = _map_workers(synth_one, items, run.workers)
    for out_file in outputs:
        print(f"synthesized {out_file}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate / montage


def _parse_synth_name(name: str) -> tuple[str, str]:
    stem = name
    for ext in (".gz", ".nii"):
        if stem.endswith(ext):
            stem = stem[: -len(ext)]
    if "_" not in stem:
        raise DataError(f"cannot parse synthesized filename {name!r}")
    subject, tag = stem.rsplit("_", 1)
    modality = TAG_TO_MODALITY.get(tag.lower())
    if modality is None or modality not in MODALITIES:
        raise DataError(f"cannot parse modality tag from {name!r}")
    return subject, modality


def _synth_pairs(args: argparse.Namespace) -> list[tuple[str, str]]:
    if args.manifest:
        return sorted(read_dropout_manifest(args.manifest).items())
    synth_dir = Path(args.synth_dir)
    pairs = sorted(_parse_synth_name(p.name) for p in synth_dir.glob("*.nii*"))
    if not pairs:
        raise DataError(f"no synthesized volumes under {synth_dir}")
    return pairs


def _montage_for_subject(
    run: RunConfig, root: Path, subject: str, missing: str, synth: Volume, out_dir: Path
) -> Path:
    study = load_study(root / subject, subject, run.naming_pattern)
    panels: dict[str, Any] = {}
    for name in MODALITIES:
        if name in study.modalities:
            label = f"{name} (real)" if name != missing else f"{name} (real target)"
            panels[label] = study.modalities[name].data
    panels[f"{missing} (synthesized)"] = synth.data
    out = out_dir / f"{subject}_{MODALITY_TO_TAG[missing]}_montage.png"
    save_montage(panels, out, suptitle=subject)
    return out


def cmd_evaluate(args: argparse.Namespace) -> int:
    run = _run_config(args)
    root = _require_data_root(run)
    synth_dir = Path(args.synth_dir)
    if not synth_dir.is_dir():
        raise DataError(f"synthesized-volume directory not found: {synth_dir}")
    pairs = _synth_pairs(args)

    def eval_one(item: tuple[str, str]) -> tuple[MetricRecord, Volume]:
        subject, missing = item
        tag = MODALITY_TO_TAG[missing]
        synth_path = synth_dir / f"{subject}_{tag}.nii.gz"
        if not synth_path.exists():
            synth_path = synth_dir / f"{subject}_{tag}.nii"
        if not synth_path.exists():
            raise DataError(f"no synthesized volume for {subject} missing {missing}")
        synth = load_volume(synth_path, modality=missing)
        real_path = root / subject / run.naming_pattern.format(subject=subject, tag=tag)
        if not real_path.exists():
            raise DataError(f"no reference volume for {subject} {missing}: {real_path}")
        real = load_volume(real_path, modality=missing)
        real_scaled, synth_scaled = minmax_rescale(real, synth)
        value = ssim(real_scaled, synth_scaled, run.ssim)
        return (
            MetricRecord(subject=subject, metric="SSIM", value=value, missing_modality=missing),
            synth,
        )

    evaluated = _map_workers(eval_one, pairs, run.workers)
    records: list[MetricRecord] = [rec for rec, _ in evaluated]

    if args.pred_mask_dir:
        if not args.ref_mask_dir:
            raise ConfigError("--pred-mask-dir requires --ref-mask-dir")
        records.extend(
            _mask_records(Path(args.pred_mask_dir), Path(args.ref_mask_dir))
        )

    run.out_dir.mkdir(parents=True, exist_ok=True)
    run.write_resolved(run.out_dir)
    overall = aggregate(records, by=("metric", "region"))
    ssim_records = [r for r in records if r.metric == "SSIM"]
    by_missing = aggregate(ssim_records, by=("metric", "missing_modality")).aggregates
    write_records_csv(records, run.out_dir / "records.csv")
    write_aggregates_csv([*overall.aggregates, *by_missing], run.out_dir / "aggregates.csv")
    text = format_aggregate_table(overall.aggregates, title="Overall results")
    text += "\n" + format_aggregate_table(by_missing, title="SSIM by missing modality")
    (run.out_dir / "report.txt").write_text(text)

    if args.montage:
        montage_dir = run.out_dir / "montage"
        montage_dir.mkdir(exist_ok=True)
        for (subject, missing), (_, synth) in zip(pairs, evaluated):
            _montage_for_subject(run, root, subject, missing, synth, montage_dir)

    print(text)
    print(f"wrote {run.out_dir / 'records.csv'} and {run.out_dir / 'aggregates.csv'}")
    return EXIT_OK


def _mask_records(pred_dir: Path, ref_dir: Path) -> list[MetricRecord]:
    records: list[MetricRecord] = []
    pred_files = sorted(pred_dir.glob("*.nii*"))
    if not pred_files:
        raise DataError(f"no mask volumes under {pred_dir}")
    for pred_path in pred_files:
        subject = pred_path.name
        for ext in (".gz", ".nii"):
            if subject.endswith(ext):
                subject = subject[: -len(ext)]
        if subject.endswith("_seg"):
            subject = subject[: -len("_seg")]
        ref_path = ref_dir / pred_path.name
        if not ref_path.exists():
            raise DataError(f"no reference mask matching {pred_path.name} under {ref_dir}")
        pred = load_volume(pred_path, modality="SEG")
        ref = load_volume(ref_path, modality="SEG")
        for region in REGIONS:
            records.append(
                MetricRecord(
                    subject=subject,
                    metric="Dice",
                    value=dice(pred, ref, region),
                    region=region.name,
                )
            )
            records.append(
                MetricRecord(
                    subject=subject,
                    metric="HD95",
                    value=hd95(pred, ref, region, spacing=pred.spacing),
                    region=region.name,
                )
            )
    return records


def cmd_montage(args: argparse.Namespace) -> int:
    run = _run_config(args)
    root = _require_data_root(run)
    synth_dir = Path(args.synth_dir)
    if not synth_dir.is_dir():
        raise DataError(f"synthesized-volume directory not found: {synth_dir}")
    pairs = _synth_pairs(args)
    run.out_dir.mkdir(parents=True, exist_ok=True)
    run.write_resolved(run.out_dir)
    for subject, missing in pairs:
        tag = MODALITY_TO_TAG[missing]
        synth_path = synth_dir / f"{subject}_{tag}.nii.gz"
        if not synth_path.exists():
            synth_path = synth_dir / f"{subject}_{tag}.nii"
        synth = load_volume(synth_path, modality=missing)
        out = _montage_for_subject(run, root, subject, missing, synth, run.out_dir)
        print(f"wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run-config file")
    p.add_argument("--seed", type=int, help="override the run seed")
    p.add_argument("--out", help="override the output directory")
    p.add_argument("--workers", type=int, help="parallel per-subject workers")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mrisynth", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_train = sub.add_parser("train", help="train one or all missing-modality models")
    _add_common(p_train)
    p_train.add_argument("--target", choices=[*MODALITIES, "all"], help="scenario to train")
    p_train.set_defaults(func=cmd_train)

    p_drop = sub.add_parser("dropout", help="simulate per-subject modality dropout")
    _add_common(p_drop)
    p_drop.set_defaults(func=cmd_dropout)

    p_syn = sub.add_parser("synthesize", help="synthesize missing modalities")
    _add_common(p_syn)
    p_syn.add_argument("--checkpoint", required=True, help="checkpoint file or training root")
    p_syn.add_argument("--manifest", help="dropout manifest driving the run")
    p_syn.add_argument("--subject", help="single subject id (uses the checkpoint's scenario)")
    p_syn.set_defaults(func=cmd_synthesize)

    p_eval = sub.add_parser("evaluate", help="score synthesized volumes and masks")
    _add_common(p_eval)
    p_eval.add_argument("--synth-dir", required=True, help="directory of synthesized volumes")
    p_eval.add_argument("--manifest", help="dropout manifest naming (subject, missing) pairs")
    p_eval.add_argument("--pred-mask-dir", help="segmentation masks from synthesized studies")
    p_eval.add_argument("--ref-mask-dir", help="segmentation masks from real studies")
    p_eval.add_argument("--montage", action="store_true", help="also write slice montages")
    p_eval.set_defaults(func=cmd_evaluate)

    p_mont = sub.add_parser("montage", help="write real-vs-synthesized slice montages")
    _add_common(p_mont)
    p_mont.add_argument("--synth-dir", required=True, help="directory of synthesized volumes")
    p_mont.add_argument("--manifest", help="dropout manifest naming (subject, missing) pairs")
    p_mont.set_defaults(func=cmd_montage)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
