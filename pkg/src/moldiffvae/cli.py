"""Command-line surface: pretrain, finetune, encode, sample, check, config.

Every command is driven by one JSON config file and a seed, and reruns
reproduce artifacts byte-for-byte.  Timestamps live only in the
run_meta.json sidecar so the data artifacts stay comparable.  Exit
codes: 0 success, 1 check or numeric failure, 2 usage or IO error.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys

import numpy as np
import torch

from .checkpoint import (
    Checkpoint,
    CheckpointError,
    load_checkpoint,
    save_checkpoint,
    verify_compatible,
)
from .checks import run_checks
from .config import (
    ConfigError,
    RunConfig,
    config_json,
    load_config,
    resolve_out_dir,
    to_dict,
)
from .data import (
    BatchSettings,
    EmptyFile,
    MissingColumn,
    MoleculeRecord,
    TooFewRecords,
    batches,
    holdout_split,
    load,
    sequential_batches,
    write_rejects,
)
from .diffusion import ancestral_sample
from .errors import NonFiniteActivation, NonFiniteGradient
from .fileio import atomic_write_text, git_blob_hash
from .graphs import GraphTooLarge, reconstruction_accuracy
from .model import DiffusionAutoencoder, build_model, init_parameters
from .objective import Trainer
from .property_head import (
    EmptySplit,
    FinetuneTrainer,
    TargetScaler,
    evaluate_mse,
    zero_noise_z1,
)
from .smiles import DEFAULT_ATOMS, DEFAULT_BONDS, write_smiles

# Disjoint substream tags: every consumer derives its generator from
# (seed, tag) so adding a new consumer never shifts existing draws.
INIT_STREAM = 11
PRETRAIN_STREAM = 13
FINETUNE_STREAM = 17
SAMPLE_STREAM = 19


def _utc_now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _fmt(value: float) -> str:
    return repr(float(value))


def _require_file(path: str, what: str) -> None:
    if not path:
        raise ConfigError(f"no {what} path configured")
    if not os.path.isfile(path):
        raise ConfigError(f"{what} path does not exist: {path}")


def _settings(config: RunConfig) -> BatchSettings:
    return BatchSettings(
        v_max=config.v_max,
        n_node_types=DEFAULT_ATOMS.K,
        n_bond_types=DEFAULT_BONDS.L,
    )


def _build(config: RunConfig) -> DiffusionAutoencoder:
    return build_model(
        config.encoder,
        config.decoder,
        config.denoiser,
        config.head,
        n_node_types=DEFAULT_ATOMS.K,
        n_bond_types=DEFAULT_BONDS.L,
        v_max=config.v_max,
        n_steps=config.schedule.n_steps,
    )


def _load_model(config: RunConfig, checkpoint_path: str) -> tuple[DiffusionAutoencoder, Checkpoint]:
    _require_file(checkpoint_path, "checkpoint")
    checkpoint = load_checkpoint(checkpoint_path)
    verify_compatible(checkpoint, to_dict(config))
    model = _build(config)
    model.load_tensors(checkpoint.tensors)
    return model, checkpoint


def _size_histogram(records: list[MoleculeRecord], v_max: int) -> list[int]:
    counts = [0] * (v_max + 1)
    for record in records:
        counts[len(record.graph.node_types)] += 1
    return counts


def _write_metrics(path: str, header: list[str], rows: list[tuple]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(c) if isinstance(c, int) else _fmt(c) for c in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def _reconstruction_scores(
    records: list[MoleculeRecord],
    model: DiffusionAutoencoder,
    config: RunConfig,
) -> tuple[float, float]:
    schedule = config.schedule.build()
    node_hits = node_total = edge_hits = edge_total = 0.0
    with torch.no_grad():
        for batch, _ in sequential_batches(records, _settings(config), config.train.batch_size):
            z1 = zero_noise_z1(batch, model, schedule)
            node_logits, edge_logits = model.decoder.decode_logits(z1)
            node_acc, edge_acc = reconstruction_accuracy(node_logits, edge_logits, batch)
            n_nodes = float(batch.node_mask.sum())
            n_edges = float(batch.edge_mask.sum())
            node_hits += node_acc * n_nodes
            node_total += n_nodes
            edge_hits += edge_acc * n_edges
            edge_total += n_edges
    node = node_hits / node_total if node_total else 1.0
    edge = edge_hits / edge_total if edge_total else 1.0
    return node, edge


def cmd_pretrain(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    _require_file(config.dataset, "dataset")
    out_dir = resolve_out_dir(config)
    started = _utc_now()
    torch.set_num_threads(1)

    records, rejects = load(config.dataset, has_target=False)
    settings = _settings(config)
    schedule = config.schedule.build()
    model = _build(config)
    init_parameters(model, np.random.default_rng([config.seed, INIT_STREAM]))
    trainer = Trainer(model, schedule, config.train)
    rng = np.random.default_rng([config.train.seed, PRETRAIN_STREAM])

    rows = []
    step = 0
    epoch = 0
    while step < config.train.n_steps:
        for batch, _ in batches(
            records, settings, config.train.batch_size, config.train.seed, epoch
        ):
            if step >= config.train.n_steps:
                break
            breakdown, grad_norm = trainer.step(batch, rng)
            step += 1
            rows.append(
                (step, breakdown.recon, breakdown.prior_kl, breakdown.denoise,
                 breakdown.elbo, grad_norm)
            )
        epoch += 1

    node_acc, edge_acc = _reconstruction_scores(records, model, config)

    _write_metrics(
        os.path.join(out_dir, "metrics.csv"),
        ["step", "recon", "prior_kl", "denoise", "elbo", "grad_norm"],
        rows,
    )
    save_checkpoint(
        os.path.join(out_dir, "checkpoint.bin"),
        to_dict(config),
        model.named_tensors(),
        meta={"size_histogram": _size_histogram(records, config.v_max)},
    )
    write_rejects(os.path.join(out_dir, "rejects.csv"), rejects)
    meta = {
        "command": "pretrain",
        "config": to_dict(config),
        "dataset_path": config.dataset,
        "dataset_blob_hash": git_blob_hash(config.dataset),
        "n_records": len(records),
        "n_rejects": len(rejects),
        "n_node_types": DEFAULT_ATOMS.K,
        "n_bond_types": DEFAULT_BONDS.L,
        "atom_alphabet": list(DEFAULT_ATOMS.symbols),
        "final_node_accuracy": node_acc,
        "final_edge_accuracy": edge_acc,
        "started_at": started,
        "finished_at": _utc_now(),
    }
    atomic_write_text(os.path.join(out_dir, "run_meta.json"), json.dumps(meta, indent=2) + "\n")
    print(
        f"pretrain: {step} steps, final elbo {_fmt(rows[-1][4]) if rows else 'n/a'}, "
        f"reconstruction node {node_acc:.4f} edge {edge_acc:.4f}"
    )
    print(f"artifacts in {out_dir}")
    return 0


def cmd_finetune(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    labeled = config.labeled_dataset()
    _require_file(labeled, "dataset")
    out_dir = resolve_out_dir(config)
    started = _utc_now()
    torch.set_num_threads(1)

    model, checkpoint = _load_model(config, args.checkpoint)
    records, rejects = load(labeled, has_target=True)
    train_records, test_records = holdout_split(records, config.split)
    scaler = TargetScaler.fit(
        torch.tensor([r.target for r in train_records], dtype=torch.float64)
    )

    settings = _settings(config)
    schedule = config.schedule.build()
    trainer = FinetuneTrainer(model, schedule, config.finetune)
    rng = np.random.default_rng([config.finetune.seed, FINETUNE_STREAM])

    combined = config.finetune.objective == "combined"
    header = (
        ["step", "recon", "prior_kl", "denoise", "elbo", "mse", "loss", "grad_norm"]
        if combined
        else ["step", "mse", "loss", "grad_norm"]
    )
    rows = []
    step = 0
    epoch = 0
    while step < config.finetune.n_steps:
        for batch, targets in batches(
            train_records, settings, config.finetune.batch_size, config.finetune.seed, epoch
        ):
            if step >= config.finetune.n_steps:
                break
            components, grad_norm = trainer.step(batch, scaler.transform(targets), rng)
            step += 1
            if combined:
                rows.append(
                    (step, components["recon"], components["prior_kl"],
                     components["denoise"], components["elbo"], components["mse"],
                     components["loss"], grad_norm)
                )
            else:
                rows.append((step, components["mse"], components["loss"], grad_norm))
        epoch += 1

    def eval_split(split_records):
        pairs = sequential_batches(split_records, settings, config.finetune.batch_size)
        return evaluate_mse(
            ((batch, scaler.transform(targets)) for batch, targets in pairs),
            model,
            schedule,
        )

    train_mse = eval_split(train_records)
    test_mse = eval_split(test_records) if test_records else float("nan")

    dataset_name = os.path.basename(labeled)
    report = [
        "dataset,split,model,mse",
        f"{dataset_name},train,diffusion_vae,{_fmt(train_mse)}",
        f"{dataset_name},test,diffusion_vae,{_fmt(test_mse)}",
    ]
    _write_metrics(os.path.join(out_dir, "finetune_metrics.csv"), header, rows)
    atomic_write_text(os.path.join(out_dir, "mse_report.csv"), "\n".join(report) + "\n")
    save_checkpoint(
        os.path.join(out_dir, "finetune_checkpoint.bin"),
        to_dict(config),
        model.named_tensors(),
        meta={
            "size_histogram": checkpoint.meta.get("size_histogram"),
            "target_scaler": {"mean": scaler.mean, "std": scaler.std},
        },
    )
    write_rejects(os.path.join(out_dir, "finetune_rejects.csv"), rejects)
    meta = {
        "command": "finetune",
        "config": to_dict(config),
        "dataset_path": labeled,
        "dataset_blob_hash": git_blob_hash(labeled),
        "source_checkpoint": args.checkpoint,
        "n_train": len(train_records),
        "n_test": len(test_records),
        "n_rejects": len(rejects),
        "target_scaler": {"mean": scaler.mean, "std": scaler.std},
        "train_mse_standardized": train_mse,
        "test_mse_standardized": test_mse,
        "started_at": started,
        "finished_at": _utc_now(),
    }
    atomic_write_text(os.path.join(out_dir, "run_meta.json"), json.dumps(meta, indent=2) + "\n")
    print(
        f"finetune: {step} steps, standardized mse train {_fmt(train_mse)} "
        f"test {_fmt(test_mse)}"
    )
    print(f"artifacts in {out_dir}")
    return 0


def cmd_encode(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    _require_file(args.input, "input")
    model, _ = _load_model(config, args.checkpoint)
    schedule = config.schedule.build()

    records, rejects = load(args.input, has_target=False)
    d = config.encoder.d
    lines = ["smiles," + ",".join(f"z1_{i + 1}" for i in range(d))]
    with torch.no_grad():
        offset = 0
        for batch, _ in sequential_batches(records, _settings(config), 64):
            z1 = zero_noise_z1(batch, model, schedule).numpy()
            for row in range(batch.batch_size):
                smiles = records[offset + row].smiles
                lines.append(smiles + "," + ",".join(_fmt(v) for v in z1[row]))
            offset += batch.batch_size
    atomic_write_text(args.output, "\n".join(lines) + "\n")
    rejects_path = args.rejects or args.output + ".rejects.csv"
    write_rejects(rejects_path, rejects)
    print(f"encoded {len(records)} molecules to {args.output} ({len(rejects)} rejects)")
    return 0


def cmd_sample(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    if args.n < 0:
        raise ConfigError(f"sample count must be >= 0, got {args.n}")
    model, checkpoint = _load_model(config, args.checkpoint)
    schedule = config.schedule.build()

    histogram = checkpoint.meta.get("size_histogram")
    if not histogram or sum(histogram) == 0:
        raise CheckpointError(
            "checkpoint carries no training-size histogram; cannot draw node counts"
        )
    counts = np.asarray(histogram, dtype=np.float64)
    seed = config.seed if args.seed is None else args.seed
    rng = np.random.default_rng([seed, SAMPLE_STREAM])
    sizes = rng.choice(len(counts), size=args.n, p=counts / counts.sum())

    z1 = ancestral_sample(schedule, model.denoiser, args.n, rng)
    node_mask = np.zeros((args.n, config.v_max), dtype=bool)
    for row, size in enumerate(sizes):
        node_mask[row, :size] = True
    graphs = model.decoder.greedy_decode(z1, node_mask)
    lines = ["smiles"] + [write_smiles(g) for g in graphs]
    atomic_write_text(args.output, "\n".join(lines) + "\n")
    print(f"sampled {args.n} molecules to {args.output}")
    return 0


def cmd_check(args: argparse.Namespace) -> int:
    results = run_checks(
        seed=args.seed,
        corrupt_alpha_bars=args.corrupt_schedule,
        include_gradient=not args.skip_gradient,
    )
    print("check,value,tolerance,status")
    for result in results:
        status = "ok" if result.passed else "FAIL"
        print(f"{result.name},{result.value:.6e},{result.tolerance:.1e},{status}")
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"error: check {failed[0].name} failed "
              f"({failed[0].value:.6e} > {failed[0].tolerance:.1e})", file=sys.stderr)
        return 1
    return 0


def cmd_config(args: argparse.Namespace) -> int:
    sys.stdout.write(config_json(RunConfig()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moldiffvae",
        description="Molecular graph autoencoder with a diffusion latent chain.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="train encoder/decoder/denoiser on a SMILES corpus")
    p.add_argument("--config", required=True, help="run configuration JSON")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="fit the property head from a pretrained checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True, help="pretraining checkpoint to start from")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("encode", help="export zero-noise latents for a SMILES file")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="CSV with a smiles column")
    p.add_argument("--output", required=True, help="destination CSV")
    p.add_argument("--rejects", default=None, help="rejects CSV (default: <output>.rejects.csv)")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("sample", help="draw molecules from the latent prior")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("-n", type=int, required=True, help="number of molecules")
    p.add_argument("--output", required=True, help="destination CSV")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("check", help="run the numeric self-check suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--skip-gradient", action="store_true", help="skip the slow gradient check")
    p.add_argument(
        "--corrupt-schedule",
        action="store_true",
        help="test hook: corrupt the cumulative-product table and expect failure",
    )
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("config", help="print the default configuration")
    p.add_argument("--print-default", action="store_true", help="(the default behavior)")
    p.set_defaults(func=cmd_config)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (
        ConfigError,
        MissingColumn,
        EmptyFile,
        TooFewRecords,
        EmptySplit,
        GraphTooLarge,
        CheckpointError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, NonFiniteActivation, NonFiniteGradient) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
