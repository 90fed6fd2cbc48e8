"""Shared fixtures: synthetic scenes, a small vocabulary, CLI artifacts.

Session-scoped fixtures build the expensive inputs once. Everything is
seeded, so tests that byte-compare artifacts stay meaningful.
"""

import json

import numpy as np
import pytest

from _synth import make_corpus
from xbovw.cli import main as cli_main
from xbovw.config import RunConfig
from xbovw.detect import build_dataset, metal_mask
from xbovw.image import save_grayscale
from xbovw.phow import phow_extract
from xbovw.vocab import build_vocabulary


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance_report(request):
    """Callable that prints one pass/fail line and echoes it in the summary."""

    def report(name: str, ok: bool, detail: str, elapsed: float) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail} ({elapsed:.2f}s)"
        print(line)
        request.config._acceptance_lines.append(line)

    return report


@pytest.fixture(scope="session")
def mini_config():
    # Unit-test scale: a small vocabulary and an oversegmentation level
    # matched to the 256x256 synthetic scenes.
    return RunConfig(ss_k=2.0, vocab_size=24, vocab_restarts=1)


@pytest.fixture(scope="session")
def mini_scenes():
    return make_corpus(6, seed=7)


@pytest.fixture(scope="session")
def mini_vocab(mini_scenes, mini_config):
    descriptors = []
    for scene in mini_scenes[:3]:
        mask = metal_mask(scene.image, mini_config)
        feats = phow_extract(scene.image, mask, mini_config.phow_params())
        descriptors.append(feats.descriptors)
    stacked = np.vstack(descriptors)
    return build_vocabulary(
        stacked,
        mini_config.vocab_size,
        seed=mini_config.seed,
        restarts=mini_config.vocab_restarts,
    )


@pytest.fixture(scope="session")
def mini_dataset(mini_scenes, mini_vocab, mini_config):
    images = [(scene.image_id, scene.image) for scene in mini_scenes]
    annotations = [scene.annotation for scene in mini_scenes]
    return build_dataset(images, annotations, mini_vocab, mini_config, balance=True)


def run_cli(*argv) -> int:
    return cli_main([str(a) for a in argv])


def write_scene_files(scenes, image_dir, annotation_path):
    image_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for scene in scenes:
        save_grayscale(image_dir / f"{scene.image_id}.png", scene.image)
        if scene.annotation is not None:
            box = scene.annotation.bbox
            records.append(
                {
                    "image": scene.image_id,
                    "x_min": box.x_min,
                    "y_min": box.y_min,
                    "x_max": box.x_max,
                    "y_max": box.y_max,
                    "class": scene.annotation.class_name,
                }
            )
    annotation_path.write_text(json.dumps(records, indent=1))


@pytest.fixture(scope="session")
def cli_workspace(tmp_path_factory):
    """A full artifact chain built through the CLI on six synthetic scenes."""
    root = tmp_path_factory.mktemp("cli")
    scenes = make_corpus(6, seed=3, prefix="bag")
    train, val, test = scenes[:4], scenes[4:5], scenes[5:]
    paths = {
        "root": root,
        "config": root / "run.cfg",
        "train_dir": root / "train",
        "val_dir": root / "val",
        "test_dir": root / "test",
        "train_ann": root / "train.json",
        "val_ann": root / "val.json",
        "test_ann": root / "test.json",
        "vocab": root / "vocab.xbwv",
        "train_ds": root / "train.xbwd",
        "val_ds": root / "val.xbwd",
        "test_ds": root / "test.xbwd",
        "model": root / "model.xbwm",
        "tuned": root / "tuned.xbwm",
        "detections": root / "detections.jsonl",
        "test_scenes": test,
    }
    paths["config"].write_text(
        "ss_k = 2.0\nvocab_size = 24\nvocab_restarts = 1\nsvm_lambda = 0.01\n"
    )
    write_scene_files(train, paths["train_dir"], paths["train_ann"])
    write_scene_files(val, paths["val_dir"], paths["val_ann"])
    write_scene_files(test, paths["test_dir"], paths["test_ann"])

    steps = [
        (
            "build-vocab",
            "--images", paths["train_dir"],
            "--out", paths["vocab"],
            "--config", paths["config"],
        ),
        (
            "build-dataset",
            "--images", paths["train_dir"],
            "--annotations", paths["train_ann"],
            "--vocab", paths["vocab"],
            "--out", paths["train_ds"],
            "--config", paths["config"],
        ),
        (
            "build-dataset",
            "--images", paths["val_dir"],
            "--annotations", paths["val_ann"],
            "--vocab", paths["vocab"],
            "--out", paths["val_ds"],
            "--config", paths["config"],
        ),
        (
            "build-dataset",
            "--images", paths["test_dir"],
            "--annotations", paths["test_ann"],
            "--vocab", paths["vocab"],
            "--out", paths["test_ds"],
            "--config", paths["config"],
        ),
        (
            "train",
            "--dataset", paths["train_ds"],
            "--vocab", paths["vocab"],
            "--out", paths["model"],
            "--config", paths["config"],
        ),
        (
            "tune",
            "--dataset", paths["val_ds"],
            "--model", paths["model"],
            "--out", paths["tuned"],
            "--config", paths["config"],
        ),
        (
            "detect",
            "--images", paths["test_dir"],
            "--model", paths["tuned"],
            "--vocab", paths["vocab"],
            "--out", paths["detections"],
            "--config", paths["config"],
        ),
    ]
    for step in steps:
        code = run_cli(*step)
        assert code == 0, f"CLI step {step[0]} exited {code}"
    return paths
