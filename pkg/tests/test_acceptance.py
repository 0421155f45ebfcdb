"""Acceptance criteria, one marker name per criterion.

A PASS/FAIL line per criterion is printed in the terminal summary.
"""
import math
import shutil
import time
from pathlib import Path

import numpy as np
import pytest

from fdkdnn.cli import main
from fdkdnn.data.dataset import Split, load_manifest, split_dataset
from fdkdnn.data.ppm import decode_image, encode_ppm
from fdkdnn.evaluate import ReportFormat, parse_report, predict, render_report, tally
from fdkdnn.graph import attach_head, detach_head, forward, load_model, save_model
from fdkdnn.graph.tiny_inception import bundled_manifest_path
from fdkdnn.head.softmax import SoftmaxHead, head_gradient, init_head
from fdkdnn.tensor import (
    ConvParams, Mode, Padding, PoolParams, avg_pool, conv2d, dropout, fully_connected, max_pool, softmax,
)

from .oracles import (
    batch_loss64, central_differences, conv2d_loops, fc_loops, max_relative_error, pool_loops,
)
from .test_data import synthetic_manifest
from .test_evaluate import TAXONOMY, ten_record_profile

ORACLE_CASES = 200
ORACLE_TOL = 1e-5
GRAD_DRAWS = 100
GRAD_TOL = 1e-4
GRAD_EPS = 1e-3
E2E_ACCURACY = 0.95
E2E_STEPS = 2000
E2E_SECONDS = 300.0


def cli(*argv):
    code = main([str(a) for a in argv])
    assert code == 0, f"{argv[0]} exited {code}"


def run_pipeline(d: Path, per_class: int, steps: int, batch: int = 100, threads: int = 1):
    """synth -> build-manifest -> split -> embed -> train -> evaluate, all via the CLI."""
    cli("synth", "--out", d / "img", "--classes", 4, "--per-class", per_class, "--size", 32, "--seed", 7)
    cli("build-manifest", "--data", d / "img", "--manifest", d / "dataset.jsonl")
    cli("split", "--manifest", d / "dataset.jsonl", "--ratio", 0.8, "--seed", 42)
    cli("embed", "--manifest", d / "dataset.jsonl", "--cache", d / "emb.fdke", "--threads", threads)
    cli("train", "--manifest", d / "dataset.jsonl", "--cache", d / "emb.fdke", "--out", d / "out",
        "--steps", steps, "--batch", batch, "--seed", 42)
    cli("evaluate", "--model", d / "out" / "classifier.json", "--manifest", d / "dataset.jsonl",
        "--cache", d / "emb.fdke", "--format", "structured", "--out", d / "report.json")
    return parse_report((d / "report.json").read_text())


@pytest.mark.acceptance("end-to-end synthetic corpus: accuracy >= 0.95, <= 2000 steps, <= 5 min")
def test_end_to_end(tmp_path, capsys):
    start = time.perf_counter()
    report = run_pipeline(tmp_path, per_class=300, steps=E2E_STEPS)
    elapsed = time.perf_counter() - start
    with capsys.disabled():
        print(f"\n  end-to-end: micro accuracy {report.micro_accuracy:.4f} "
              f"on {report.total} validation records, {elapsed:.1f}s")
    assert len(load_manifest(tmp_path / "dataset.jsonl").records) == 1200
    assert report.total == 240
    assert report.micro_accuracy >= E2E_ACCURACY
    assert elapsed <= E2E_SECONDS


def random_case(rs):
    n, h, w, c = rs.integers(1, 3), rs.integers(1, 9), rs.integers(1, 9), rs.integers(1, 5)
    padding = Padding.SAME if rs.random() < 0.5 else Padding.VALID
    kh, kw = rs.integers(1, h + 1), rs.integers(1, w + 1)
    stride = (int(rs.integers(1, 4)), int(rs.integers(1, 4)))
    x = rs.standard_normal((n, h, w, c)).astype(np.float32)
    return x, (int(kh), int(kw)), stride, padding


@pytest.mark.acceptance("oracle equivalence: conv2d/max_pool/avg_pool/fully_connected, 200 cases each")
@pytest.mark.parametrize("op", ["conv2d", "max_pool", "avg_pool", "fully_connected"])
def test_oracle_equivalence(op):
    rs = np.random.default_rng(["conv2d", "max_pool", "avg_pool", "fully_connected"].index(op))
    worst = 0.0
    for _ in range(ORACLE_CASES):
        x, window, stride, padding = random_case(rs)
        if op == "conv2d":
            co = int(rs.integers(1, 5))
            wts = rs.standard_normal(window + (x.shape[3], co)).astype(np.float32)
            b = rs.standard_normal(co).astype(np.float32)
            got = conv2d(x, ConvParams(wts, b, stride, padding))
            ref = conv2d_loops(x, wts, b, stride, padding.value)
        elif op == "fully_connected":
            v = x.reshape(x.shape[0], -1)
            d_out = int(rs.integers(1, 9))
            W = rs.standard_normal((d_out, v.shape[1])).astype(np.float32)
            b = rs.standard_normal(d_out).astype(np.float32)
            got, ref = fully_connected(v, W, b), np.stack([fc_loops(row, W, b) for row in v])
        else:
            params = PoolParams(window, stride, padding)
            kind = op.split("_")[0]
            got = (max_pool if kind == "max" else avg_pool)(x, params)
            ref = pool_loops(x, window, stride, padding.value, kind)
        assert got.shape == ref.shape
        worst = max(worst, float(np.abs(got - ref).max()))
    assert worst < ORACLE_TOL


@pytest.mark.acceptance("gradient check: 100 draws, central differences, relative error < 1e-4")
def test_gradient_check():
    rs = np.random.default_rng(2017)
    worst = 0.0
    for _ in range(GRAD_DRAWS):
        K, D, n = int(rs.integers(2, 9)), int(rs.integers(1, 33)), int(rs.integers(1, 17))
        head = SoftmaxHead(rs.standard_normal((K, D)), rs.standard_normal(K), [str(k) for k in range(K)])
        E = rs.standard_normal((n, D))
        y = rs.integers(0, K, n)
        dW, db, _ = head_gradient(head, E, y)
        W64, b64 = head.W.astype(np.float64), head.b.astype(np.float64)
        nW = central_differences(lambda W: batch_loss64(W, b64, E, y), W64, GRAD_EPS)
        nb = central_differences(lambda b: batch_loss64(W64, b, E, y), b64, GRAD_EPS)
        worst = max(worst, max_relative_error(np.concatenate([dW.ravel(), db]), np.concatenate([nW.ravel(), nb])))
    assert worst < GRAD_TOL


INVARIANTS = "invariant suite: softmax, shift, ln K, dropout INFER, split counts incl. 11,555 -> 9,244/2,311"


@pytest.mark.acceptance(INVARIANTS)
def test_softmax_normalized_and_shift_invariant():
    rs = np.random.default_rng(5)
    for _ in range(200):
        z = (rs.standard_normal((3, int(rs.integers(1, 12)))) * 20).astype(np.float32)
        p = softmax(z)
        assert np.abs(p.sum(axis=-1) - 1).max() <= 1e-6
        c = np.float32(rs.uniform(-50, 50))
        assert (np.argmax(softmax(z + c), axis=-1) == np.argmax(p, axis=-1)).all()


@pytest.mark.acceptance(INVARIANTS)
@pytest.mark.parametrize("K", [2, 4, 8])
def test_zero_init_loss(K):
    rs = np.random.default_rng(K)
    _, _, loss = head_gradient(init_head(K, 64, [str(k) for k in range(K)]), rs.standard_normal((50, 64)),
                               rs.integers(0, K, 50))
    assert abs(loss - math.log(K)) <= 1e-5


@pytest.mark.acceptance(INVARIANTS)
def test_dropout_infer_identity():
    x = np.random.default_rng(0).standard_normal((2, 4, 4, 3)).astype(np.float32)
    for rate in (0.0, 0.2, 0.5, 0.9):
        assert dropout(x, rate, Mode.INFER).tobytes() == x.tobytes()


@pytest.mark.acceptance(INVARIANTS)
@pytest.mark.parametrize("sizes, ratio, expected", [
    ([11555], 0.8, [9244]),
    ([300, 300, 300, 300], 0.8, [240] * 4),
    ([7, 1, 13, 10], 0.8, [5, 0, 10, 8]),
    ([10, 3], 0.7, [7, 2]),
])
def test_split_counts(sizes, ratio, expected):
    m = split_dataset(synthetic_manifest(sizes), ratio, 42)
    counts = m.counts()
    assert [counts[c][Split.TRAIN] for c in m.classes] == expected
    assert [counts[c][Split.VALIDATION] for c in m.classes] == [n - e for n, e in zip(sizes, expected)]


@pytest.mark.acceptance("determinism: two runs give bit-identical manifests, caches, head, reports")
def test_determinism(tmp_path):
    artifacts = ["dataset.jsonl", "emb.fdke", "out/classifier.fdkw", "out/classifier.json",
                 "out/history.jsonl", "report.json"]
    run_pipeline(tmp_path, per_class=40, steps=300, batch=32)
    first = {name: (tmp_path / name).read_bytes() for name in artifacts}
    for name in ("img", "out"):
        shutil.rmtree(tmp_path / name)
    for name in ("dataset.jsonl", "emb.fdke", "report.json"):
        (tmp_path / name).unlink()
    run_pipeline(tmp_path, per_class=40, steps=300, batch=32, threads=2)
    for name in artifacts:
        assert (tmp_path / name).read_bytes() == first[name], name


@pytest.mark.acceptance("report fidelity: 20% misclassification, 10% attributed to leaf")
def test_report_fidelity():
    report = tally(TAXONOMY, ten_record_profile(), split="TEST")
    assert report.total == 10
    assert report.misclassification_rate == pytest.approx(0.2)
    assert report.misclassified_as["leaf"] / report.total == pytest.approx(0.1)
    text = render_report(report)
    assert "misclassified: 2 (20.0%)" in text
    assert any(line.split()[:1] == ["leaf"] and line.rstrip().endswith("10.0%")
               for line in text.split("Misclassified as")[1].splitlines())


ROUND_TRIPS = "round trips: attach/save/load, structured report, P6 encode/decode"


@pytest.mark.acceptance(ROUND_TRIPS)
def test_attach_save_load(tmp_path):
    rs = np.random.default_rng(11)
    backbone = load_model(bundled_manifest_path())
    head = SoftmaxHead(rs.standard_normal((4, 64)) * 0.3, rs.standard_normal(4), TAXONOMY)
    g = attach_head(backbone, head)
    back = load_model(save_model(g, tmp_path / "clf.json"))
    assert detach_head(back).same_params(head)
    for _ in range(5):
        x = rs.uniform(0, 1, (1, 32, 32, 3)).astype(np.float32)
        a, b = predict(g, x), predict(back, x)
        assert a[0] == b[0] and a[1].tobytes() == b[1].tobytes()
        out = g.manifest.output_id
        assert forward(back, x)[out].tobytes() == forward(g, x)[out].tobytes()


@pytest.mark.acceptance(ROUND_TRIPS)
def test_structured_report_round_trip():
    report = tally(TAXONOMY, ten_record_profile())
    assert parse_report(render_report(report, ReportFormat.STRUCTURED)) == report


@pytest.mark.acceptance(ROUND_TRIPS)
def test_p6_byte_exact(tmp_path):
    rs = np.random.default_rng(3)
    for h, w in [(1, 1), (5, 7), (32, 32)]:
        pixels = rs.integers(0, 256, (h, w, 3), dtype=np.uint8)
        blob = encode_ppm(pixels)
        path = tmp_path / f"{h}x{w}.ppm"
        path.write_bytes(blob)
        decoded = decode_image(path)[0]
        assert np.array_equal(decoded, pixels.astype(np.float32))
        assert encode_ppm(decoded.astype(np.uint8)) == blob
