"""Shared fixtures: labeled datasets exported by the upstream pipeline,
trained artifacts, and a live service.

The upstream package is used here the way any data producer would be:
through its dataset files and, for the end-to-end swap, its runner; the
service itself never imports it.
"""

from __future__ import annotations

import socket
import threading
import time
from pathlib import Path

import pytest
import requests
import uvicorn

from stepcascade.config import load_config
from stepcascade.harness import baseline_factories, run_suite
from stepcascade.labeling import LabelKind, OracleTeacher, consensus_label_episode, export_dataset, run_teacher
from stepcascade.synthenv import build_suite

from monitor_service.service import create_app
from monitor_service.train import TrainConfig, train_detector

DESK_TRAIN = TrainConfig(
    epochs=5,
    learning_rate=1e-3,  # from-scratch tiny encoder; pretrained defaults are far lower
    batch_size=16,
    max_sequence_length=160,
    encoder={"dim": 64, "layers": 2, "heads": 4, "ff_dim": 128, "max_positions": 160},
    seed=7,
    early_stop_f1=0.99,
)


@pytest.fixture(scope="session")
def datasets(tmp_path_factory) -> dict[str, dict[str, Path]]:
    """Oracle-labeled (noise-free) window datasets from 60 small-policy
    trajectories, split 80/20 by trajectory."""
    out = tmp_path_factory.mktemp("datasets")
    config = load_config()
    manifest = build_suite(4242, num_tasks=60, max_steps=config.suite["max_steps"],
                           profile=config.profile)
    records = run_suite(manifest, config.cascade, run_mode="small-only",
                        **baseline_factories("small-only"))
    paths: dict[str, dict[str, Path]] = {}
    for kind in (LabelKind.STUCK, LabelKind.MILESTONE):
        samples = []
        for record in records:
            teacher = OracleTeacher(record.truth, noise=0.0)
            results = run_teacher(teacher, record.episode, runs=5)
            samples.extend(consensus_label_episode(record.episode, results, kind))
        summary = export_dataset(samples, out, split=0.8, seed=11, prefix=kind.value)
        paths[kind.value] = {"train": summary.train_path, "eval": summary.eval_path}
    return paths


@pytest.fixture(scope="session")
def artifacts(datasets, tmp_path_factory) -> dict[str, Path]:
    root = tmp_path_factory.mktemp("artifacts")
    trained = {}
    for kind in ("stuck", "milestone"):
        artifact, metrics = train_detector(
            kind, datasets[kind]["train"], datasets[kind]["eval"], root, DESK_TRAIN,
        )
        trained[kind] = artifact
        print(f"{kind} detector eval F1 {metrics.f1:.4f}")
    return trained


@pytest.fixture(scope="session")
def service_url(artifacts):
    app = create_app(artifacts)
    with socket.socket() as probe:
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
    server = uvicorn.Server(uvicorn.Config(app, host="127.0.0.1", port=port, log_level="warning"))
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    url = f"http://127.0.0.1:{port}"
    for _ in range(100):
        try:
            if requests.get(f"{url}/health", timeout=1).status_code == 200:
                break
        except requests.RequestException:
            time.sleep(0.1)
    else:
        raise RuntimeError("service did not come up")
    yield url
    server.should_exit = True
    thread.join(timeout=10)
