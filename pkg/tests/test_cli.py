"""End-to-end command-line tests on a miniature corpus and model."""

import json
import os
import shutil

import pytest

from moldiffvae.checkpoint import (
    IncompatibleCheckpoint,
    load_checkpoint,
    save_checkpoint,
)
from moldiffvae.cli import main
from moldiffvae.config import OUT_DIR_ENV_VAR, RunConfig, config_json, load_config, to_dict
from moldiffvae.smiles import parse

SMILES_TARGETS = [
    ("C", 1.0),
    ("CC", 2.0),
    ("CCO", 3.0),
    ("C=O", 2.0),
    ("c1ccccc1", 6.0),
    ("CC(=O)O", 4.0),
    ("C#N", 2.0),
    ("CCN", 3.0),
]


def tiny_config(dataset: str, out_dir: str, **overrides) -> dict:
    cfg = {
        "dataset": dataset,
        "out_dir": out_dir,
        "seed": 0,
        "v_max": 12,
        "schedule": {"n_steps": 6},
        "encoder": {"d": 8, "n_layers": 1, "n_heads": 2, "d_model": 16},
        "decoder": {"n_layers": 1, "n_heads": 2, "d_model": 16},
        "denoiser": {"d": 8, "hidden": 16, "time_dim": 8},
        "head": {"hidden": 8},
        "train": {"n_steps": 8, "batch_size": 4},
        "finetune": {"n_steps": 6, "batch_size": 4},
    }
    for key, value in overrides.items():
        if isinstance(value, dict):
            cfg.setdefault(key, {}).update(value)
        else:
            cfg[key] = value
    return cfg


def write_config(path, cfg: dict) -> str:
    path = str(path)
    with open(path, "w") as fh:
        json.dump(cfg, fh)
    return path


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    dataset = root / "mini.csv"
    lines = ["smiles,target"]
    lines += [f"{s},{t}" for s, t in SMILES_TARGETS]
    dataset.write_text("\n".join(lines) + "\n")
    return root, str(dataset)


@pytest.fixture(scope="module")
def pretrained(workspace):
    """One shared tiny pretraining run; most command tests start from it."""
    root, dataset = workspace
    out_dir = root / "pretrain"
    cfg_path = write_config(root / "pre.json", tiny_config(dataset, str(out_dir)))
    assert main(["pretrain", "--config", cfg_path]) == 0
    return root, dataset, cfg_path, str(out_dir)


def test_pretrain_writes_expected_files(pretrained):
    _, _, _, out_dir = pretrained
    for name in ("metrics.csv", "checkpoint.bin", "rejects.csv", "run_meta.json"):
        assert os.path.exists(os.path.join(out_dir, name)), name


def test_pretrain_metrics_header_and_rows(pretrained):
    _, _, _, out_dir = pretrained
    lines = open(os.path.join(out_dir, "metrics.csv")).read().splitlines()
    assert lines[0] == "step,recon,prior_kl,denoise,elbo,grad_norm"
    assert len(lines) == 1 + 8
    first = lines[1].split(",")
    assert first[0] == "1"
    for cell in first[1:]:
        float(cell)


def test_pretrain_run_meta_counts(pretrained):
    _, _, _, out_dir = pretrained
    meta = json.load(open(os.path.join(out_dir, "run_meta.json")))
    assert meta["n_records"] == 8
    assert meta["n_rejects"] == 0
    assert len(meta["dataset_blob_hash"]) == 40


def test_pretrain_checkpoint_meta_histogram(pretrained):
    _, _, _, out_dir = pretrained
    ckpt = load_checkpoint(os.path.join(out_dir, "checkpoint.bin"))
    hist = ckpt.meta["size_histogram"]
    assert len(hist) == 12 + 1
    assert sum(hist) == 8
    # benzene has six heavy atoms
    assert hist[6] >= 1


def test_pretrain_rerun_is_byte_identical(pretrained, workspace, monkeypatch):
    """Same config file and seed, rerun into a redirected directory."""
    root, dataset = workspace
    _, _, cfg_path, out1 = pretrained
    out2 = root / "pretrain_again"
    monkeypatch.setenv(OUT_DIR_ENV_VAR, str(out2))
    assert main(["pretrain", "--config", cfg_path]) == 0
    for name in ("metrics.csv", "checkpoint.bin"):
        a = open(os.path.join(out1, name), "rb").read()
        b = open(os.path.join(str(out2), name), "rb").read()
        assert a == b, name


def test_pretrain_missing_dataset_exits_2(tmp_path, capsys):
    cfg_path = write_config(
        tmp_path / "cfg.json", tiny_config(str(tmp_path / "nope.csv"), str(tmp_path / "out"))
    )
    assert main(["pretrain", "--config", cfg_path]) == 2
    assert "nope.csv" in capsys.readouterr().err


def test_pretrain_records_rejects(tmp_path):
    dataset = tmp_path / "bad.csv"
    dataset.write_text("smiles,target\nC,1\nC((,2\nCC,2\n")
    out_dir = tmp_path / "out"
    cfg_path = write_config(tmp_path / "cfg.json", tiny_config(str(dataset), str(out_dir)))
    assert main(["pretrain", "--config", cfg_path]) == 0
    rejects = open(out_dir / "rejects.csv").read().splitlines()
    assert rejects[0] == "line,smiles,error"
    assert len(rejects) == 2
    assert rejects[1].startswith("3,C((,")
    meta = json.load(open(out_dir / "run_meta.json"))
    assert meta["n_records"] == 2
    assert meta["n_rejects"] == 1


@pytest.fixture(scope="module")
def finetuned(pretrained):
    root, dataset, _, pre_dir = pretrained
    out_dir = root / "finetune"
    cfg_path = write_config(root / "ft.json", tiny_config(dataset, str(out_dir)))
    rc = main(
        ["finetune", "--config", cfg_path, "--checkpoint", os.path.join(pre_dir, "checkpoint.bin")]
    )
    assert rc == 0
    return root, dataset, str(out_dir), pre_dir


def test_finetune_metrics_header(finetuned):
    _, _, out_dir, _ = finetuned
    lines = open(os.path.join(out_dir, "finetune_metrics.csv")).read().splitlines()
    assert lines[0] == "step,recon,prior_kl,denoise,elbo,mse,loss,grad_norm"
    assert len(lines) == 1 + 6


def test_finetune_mse_report(finetuned):
    _, dataset, out_dir, _ = finetuned
    lines = open(os.path.join(out_dir, "mse_report.csv")).read().splitlines()
    assert lines[0] == "dataset,split,model,mse"
    rows = [line.split(",") for line in lines[1:]]
    assert [r[1] for r in rows] == ["train", "test"]
    assert all(r[0] == os.path.basename(dataset) for r in rows)
    assert all(r[2] == "diffusion_vae" for r in rows)
    for r in rows:
        assert float(r[3]) >= 0.0


def test_finetune_checkpoint_carries_scaler(finetuned):
    _, _, out_dir, _ = finetuned
    ckpt = load_checkpoint(os.path.join(out_dir, "finetune_checkpoint.bin"))
    scaler = ckpt.meta["target_scaler"]
    assert scaler["std"] > 0.0
    float(scaler["mean"])


def test_finetune_mse_only_metrics_header(pretrained):
    root, dataset, _, pre_dir = pretrained
    out_dir = root / "finetune_mse_only"
    cfg = tiny_config(dataset, str(out_dir), finetune={"objective": "mse_only", "n_steps": 4})
    cfg_path = write_config(root / "ft_mse.json", cfg)
    rc = main(
        ["finetune", "--config", cfg_path, "--checkpoint", os.path.join(pre_dir, "checkpoint.bin")]
    )
    assert rc == 0
    lines = open(os.path.join(str(out_dir), "finetune_metrics.csv")).read().splitlines()
    assert lines[0] == "step,mse,loss,grad_norm"


def test_finetune_incompatible_checkpoint_exits_2(pretrained, tmp_path, capsys):
    """A checkpoint from a differently shaped model is refused up front."""
    _, dataset, _, pre_dir = pretrained
    cfg = tiny_config(
        dataset,
        str(tmp_path / "out"),
        encoder={"d": 12, "n_layers": 1, "n_heads": 2, "d_model": 16},
        denoiser={"d": 12, "hidden": 16, "time_dim": 8},
    )
    cfg_path = write_config(tmp_path / "cfg.json", cfg)
    rc = main(
        ["finetune", "--config", cfg_path, "--checkpoint", os.path.join(pre_dir, "checkpoint.bin")]
    )
    assert rc == 2
    assert "checkpoint" in capsys.readouterr().err.lower()


def test_finetune_truncated_checkpoint_exits_2(pretrained, tmp_path, capsys):
    root, dataset, cfg_path, pre_dir = pretrained
    blob = open(os.path.join(pre_dir, "checkpoint.bin"), "rb").read()
    broken = tmp_path / "broken.bin"
    broken.write_bytes(blob[: len(blob) // 2])
    cfg2 = write_config(
        tmp_path / "cfg.json", tiny_config(dataset, str(tmp_path / "out"))
    )
    assert main(["finetune", "--config", cfg2, "--checkpoint", str(broken)]) == 2
    assert "truncated" in capsys.readouterr().err


def test_encode_output_shape(pretrained, tmp_path):
    root, dataset, cfg_path, pre_dir = pretrained
    out = tmp_path / "latents.csv"
    rc = main(
        [
            "encode", "--config", cfg_path,
            "--checkpoint", os.path.join(pre_dir, "checkpoint.bin"),
            "--input", dataset, "--output", str(out),
        ]
    )
    assert rc == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "smiles," + ",".join(f"z1_{i}" for i in range(1, 9))
    assert len(lines) == 1 + 8
    for line in lines[1:]:
        cells = line.split(",")
        assert len(cells) == 9
        for cell in cells[1:]:
            float(cell)


def test_encode_identical_smiles_identical_rows(pretrained, tmp_path):
    root, dataset, cfg_path, pre_dir = pretrained
    dup = tmp_path / "dup.csv"
    dup.write_text("smiles\nCCO\nC\nCCO\n")
    out = tmp_path / "latents.csv"
    rc = main(
        [
            "encode", "--config", cfg_path,
            "--checkpoint", os.path.join(pre_dir, "checkpoint.bin"),
            "--input", str(dup), "--output", str(out),
        ]
    )
    assert rc == 0
    lines = out.read_text().splitlines()
    assert lines[1] == lines[3]
    assert lines[1] != lines[2]


def test_encode_rerun_byte_identical(pretrained, tmp_path):
    root, dataset, cfg_path, pre_dir = pretrained
    ckpt = os.path.join(pre_dir, "checkpoint.bin")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for out in (a, b):
        rc = main(
            ["encode", "--config", cfg_path, "--checkpoint", ckpt,
             "--input", dataset, "--output", str(out)]
        )
        assert rc == 0
    assert a.read_bytes() == b.read_bytes()


def test_encode_writes_rejects_for_bad_lines(pretrained, tmp_path):
    root, dataset, cfg_path, pre_dir = pretrained
    mixed = tmp_path / "mixed.csv"
    mixed.write_text("smiles\nCC\nC1CC\nO\n")
    out = tmp_path / "latents.csv"
    rc = main(
        ["encode", "--config", cfg_path,
         "--checkpoint", os.path.join(pre_dir, "checkpoint.bin"),
         "--input", str(mixed), "--output", str(out)]
    )
    assert rc == 0
    assert len(out.read_text().splitlines()) == 1 + 2
    rejects = (tmp_path / "latents.csv.rejects.csv").read_text().splitlines()
    assert len(rejects) == 2
    assert rejects[1].startswith("3,C1CC,")


def test_sample_outputs_parse(pretrained, tmp_path):
    root, dataset, cfg_path, pre_dir = pretrained
    out = tmp_path / "samples.csv"
    rc = main(
        ["sample", "--config", cfg_path,
         "--checkpoint", os.path.join(pre_dir, "checkpoint.bin"),
         "-n", "20", "--output", str(out)]
    )
    assert rc == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "smiles"
    assert len(lines) == 1 + 20
    import warnings

    for line in lines[1:]:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            graph = parse(line)
        assert len(graph.node_types) >= 1


def test_sample_seed_controls_output(pretrained, tmp_path):
    root, dataset, cfg_path, pre_dir = pretrained
    ckpt = os.path.join(pre_dir, "checkpoint.bin")
    outs = {}
    for name, seed in (("a", "0"), ("b", "0"), ("c", "1")):
        out = tmp_path / f"{name}.csv"
        rc = main(
            ["sample", "--config", cfg_path, "--checkpoint", ckpt,
             "-n", "20", "--output", str(out), "--seed", seed]
        )
        assert rc == 0
        outs[name] = out.read_bytes()
    assert outs["a"] == outs["b"]
    assert outs["a"] != outs["c"]


def test_sample_zero_requests_header_only(pretrained, tmp_path):
    root, dataset, cfg_path, pre_dir = pretrained
    out = tmp_path / "none.csv"
    rc = main(
        ["sample", "--config", cfg_path,
         "--checkpoint", os.path.join(pre_dir, "checkpoint.bin"),
         "-n", "0", "--output", str(out)]
    )
    assert rc == 0
    assert out.read_text() == "smiles\n"


def test_sample_requires_size_histogram(pretrained, tmp_path, capsys):
    """A checkpoint stripped of its metadata cannot drive the sampler."""
    root, dataset, cfg_path, pre_dir = pretrained
    ckpt = load_checkpoint(os.path.join(pre_dir, "checkpoint.bin"))
    bare = tmp_path / "bare.bin"
    save_checkpoint(str(bare), ckpt.config, ckpt.tensors, meta={})
    rc = main(
        ["sample", "--config", cfg_path, "--checkpoint", str(bare),
         "-n", "3", "--output", str(tmp_path / "s.csv")]
    )
    assert rc == 2
    assert "histogram" in capsys.readouterr().err.lower()


def test_check_command_passes(capsys):
    assert main(["check", "--skip-gradient"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "check,value,tolerance,status"
    assert len(out) > 1
    assert all(line.endswith(",ok") for line in out[1:])


def test_check_corrupt_schedule_fails(capsys):
    assert main(["check", "--skip-gradient", "--corrupt-schedule"]) == 1
    captured = capsys.readouterr()
    assert ",FAIL" in captured.out
    assert "schedule_product" in captured.err


def test_config_command_round_trips(capsys, tmp_path):
    assert main(["config"]) == 0
    text = capsys.readouterr().out
    assert text == config_json(RunConfig())
    path = tmp_path / "default.json"
    path.write_text(text)
    assert to_dict(load_config(str(path))) == to_dict(RunConfig())


def test_out_dir_env_override(workspace, tmp_path, monkeypatch):
    root, dataset = workspace
    ignored = tmp_path / "ignored"
    actual = tmp_path / "actual"
    monkeypatch.setenv(OUT_DIR_ENV_VAR, str(actual))
    cfg_path = write_config(tmp_path / "cfg.json", tiny_config(dataset, str(ignored)))
    assert main(["pretrain", "--config", cfg_path]) == 0
    assert os.path.exists(actual / "metrics.csv")
    assert not os.path.exists(ignored)
