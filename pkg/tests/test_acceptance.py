"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``ACCEPTANCE n: PASS|FAIL ...`` line, also collected
in the terminal summary.
"""

import shutil
import subprocess
import sys
import time

import numpy as np
import pytest

from gradsight import classviz as V
from gradsight import cli, data, deconv, network, saliency
from gradsight.network import FullyConnected, Softmax
from gradsight.segment import BBox, box_iou, cut_capacity, fit_gmm, max_flow, pipeline

from oracles import batched_score_fd, brute_force_min_cut, random_network, rel_err
from test_graphcut import random_graph

pytestmark = pytest.mark.slow


def test_1_gradient_exactness(acceptance):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst, kinds, checked = 0.0, set(), 0
    for i in range(120):
        net = random_network(rng)
        if i % 2:
            net = network.Network(net.layers + (Softmax(),), net.mean_image)
        kinds |= {layer.kind for layer in net.layers}
        x = rng.normal(size=net.input_shape)
        c = int(rng.integers(net.num_classes))
        fd, valid = batched_score_fd(net, x, c)
        g = network.input_gradient(net, x, c)
        worst = max(worst, rel_err(g[valid], fd[valid]))
        checked += int(valid.sum())
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-4 and elapsed <= 60 and kinds == {"conv", "relu", "maxpool", "fc", "softmax"}
    acceptance(1, ok, f"120 nets, {checked} coords, max rel err {worst:.2e}, {elapsed:.1f}s")
    assert ok


def test_2_linear_saliency(acceptance):
    rng = np.random.default_rng(5)
    mismatches = 0
    for _ in range(20):
        shape = (int(rng.choice([1, 3])), int(rng.integers(2, 9)), int(rng.integers(2, 9)))
        d = int(np.prod(shape))
        fc = FullyConnected(rng.normal(size=(4, d)), rng.normal(size=4))
        net = network.Network((fc,), np.zeros(shape))
        x = rng.normal(size=shape)
        for c in range(4):
            m = saliency.class_saliency(net, x, c).values
            expected = np.abs(fc.weights[c].reshape(shape)).max(axis=0)
            mismatches += int(np.count_nonzero(m != expected))
    ok = mismatches == 0
    acceptance(2, ok, f"20 linear nets x 4 classes, {mismatches} mismatched pixels")
    assert ok


def test_3_class_image_closed_form(acceptance):
    rng = np.random.default_rng(6)
    worst, monotone = 0.0, True
    for lam in (0.05, 0.1, 0.5):
        d = 48
        fc = FullyConnected(rng.normal(size=(3, d)), rng.normal(size=3))
        net = network.Network((fc,), np.zeros((3, 4, 4)))
        cfg = V.VizConfig(lam=lam, steps=400, step_size=0.5 / lam * 0.8, momentum=0.0)
        for c in range(3):
            image, trace = V.synthesize_class_image(net, c, cfg)
            target = fc.weights[c].reshape(3, 4, 4) / (2 * lam)
            worst = max(worst, np.linalg.norm(image - target) / np.linalg.norm(target))
            # once converged, the trace is flat up to rounding of the objective
            monotone &= bool(np.all(np.diff(trace) >= -1e-12 * np.abs(trace[1:])))
    ok = worst <= 1e-3 and monotone
    acceptance(3, ok, f"max rel error {worst:.2e}, traces monotone: {monotone}")
    assert ok


def test_4_deconv_equivalence(acceptance):
    rng = np.random.default_rng(7)
    worst = 0.0
    for i in range(60):
        net = random_network(rng, relu=False, conv_only=i % 3 == 0)
        _, trace = network.forward(net, rng.normal(size=net.input_shape))
        seed, top = deconv.neuron_seed(trace, None, int(rng.integers(net.num_classes)))
        g = deconv.grad_reconstruct(net, trace, seed, top)
        r = deconv.deconv_reconstruct(net, trace, seed, top)
        worst = max(worst, max(np.abs(a - b).max() for a, b in zip(g.recon, r.recon)))
    contained, relu_diffs = True, 0
    for _ in range(60):
        net = random_network(rng)
        x = rng.normal(size=net.input_shape)
        report, _, _ = deconv.check_equivalence(net, x, int(rng.integers(net.num_classes)))
        for layer in report.layers:
            if layer.kind == "relu":
                diff = np.zeros(layer.grad_mask.shape, bool)
                diff[tuple(layer.diff_coords.T)] = True
                contained &= not (diff & ~layer.disagreement).any()
                relu_diffs += layer.n_diffs
            else:
                contained &= layer.n_diffs == 0
    ok = worst <= 1e-6 and contained
    acceptance(4, ok, f"60 ReLU-free stacks max |diff| {worst:.2e}; 60 ReLU nets, {relu_diffs} diffs all inside mask disagreement: {contained}")
    assert ok


def test_5_max_flow(acceptance):
    rng = np.random.default_rng(8)
    worst, dual = 0.0, 0.0
    for _ in range(500):
        g = random_graph(rng)
        flow, side = max_flow(g)
        worst = max(worst, abs(flow - brute_force_min_cut(g)[0]))
        dual = max(dual, abs(flow - cut_capacity(g, side)))
    # duality on every pipeline invocation, recorded through the solver seam
    seen = []
    real = pipeline.max_flow

    def recording(graph):
        flow, side = real(graph)
        seen.append(abs(flow - cut_capacity(graph, side)) / max(1.0, flow))
        return flow, side

    pipeline.max_flow = recording
    try:
        ds = data.synth_dataset(10, 32, seed=99)
        sal_rng = np.random.default_rng(0)
        cfg = pipeline.SegmentConfig()
        for img in ds.images:
            pipeline.segment_with_saliency(img, sal_rng.uniform(size=(32, 32)), cfg)
    finally:
        pipeline.max_flow = real
    ok = worst <= 1e-6 and dual <= 1e-6 and len(seen) == 10 and max(seen) <= 1e-6
    acceptance(5, ok, f"500 graphs, max |flow - brute force| {worst:.1e}, duality gap {dual:.1e}; pipeline gap {max(seen):.1e}")
    assert ok


def test_6_em(acceptance):
    rng = np.random.default_rng(9)
    monotone = True
    for run in range(40):
        k = int(rng.integers(1, 6))
        x = rng.uniform(size=(int(rng.integers(20, 300)), 3))
        trace = np.array(fit_gmm(x, k=k, iters=10, seed=run).loglik_trace)
        monotone &= bool(np.all(np.diff(trace) >= -1e-9))
    truth = np.array([[0.1] * 3, [0.9] * 3])
    x = np.concatenate([rng.normal(t, 0.02, size=(400, 3)) for t in truth])
    m = fit_gmm(x, k=2, iters=10, seed=0)
    err = np.abs(m.means[np.argsort(m.means[:, 0])] - truth).max()
    ok = monotone and err <= 0.02
    acceptance(6, ok, f"40 runs monotone: {monotone}; two-cluster mean error {err:.4f}")
    assert ok


def test_7_end_to_end_localization(acceptance, tmp_path, capsys):
    assert cli.main(["synth-data", "--out", str(tmp_path / "train"), "--n", "2000", "--seed", "1"]) == 0
    model = tmp_path / "m.cnvz"
    start = time.perf_counter()
    assert cli.main(["train", "--data", str(tmp_path / "train"), "--out", str(model)]) == 0
    train_time = time.perf_counter() - start
    train = data.load_dataset(tmp_path / "train")
    net = cli.modelio.load_model(model)
    _, train_acc = network.evaluate(net, train.images, train.labels)

    test = data.synth_dataset(100, 32, seed=2)
    data.save_dataset(test, tmp_path / "test")
    images = sorted((tmp_path / "test" / "images").iterdir())
    hits = 0
    for i, box in enumerate(test.boxes):
        boxes = tmp_path / "boxes.txt"
        img = images[i]
        argv = ["localize", "--model", str(model), "--image", str(img), "--topk", "1", "--out-boxes", str(boxes)]
        assert cli.main(argv) == 0
        _, r0, c0, r1, c1 = map(int, boxes.read_text().split())
        hits += r0 >= 0 and box_iou(BBox(r0, c0, r1, c1), BBox(*box)) >= 0.5
    capsys.readouterr()
    ok = train_acc >= 0.95 and train_time <= 600 and hits >= 80
    acceptance(7, ok, f"train acc {train_acc:.4f} in {train_time:.0f}s; IoU>=0.5 on {hits}/100 held-out images")
    assert ok


def _run(*argv):
    proc = subprocess.run([sys.executable, "-m", "gradsight", *map(str, argv)], capture_output=True)
    return proc.returncode, proc.stdout


def test_8_cli_determinism(acceptance, tmp_path):
    runs = []
    d = tmp_path / "run"
    for _ in range(2):
        # same directory both times so echoed paths match; wiped in between
        shutil.rmtree(d, ignore_errors=True)
        outputs = [_run("synth-data", "--out", d / "data", "--n", 60, "--seed", 4)]
        img = sorted((d / "data" / "images").iterdir())[0]
        outputs += [
            _run("train", "--data", d / "data", "--out", d / "m.cnvz", "--epochs", 2),
            _run("class-image", "--model", d / "m.cnvz", "--class", 1, "--steps", 40, "--out", d / "c.ppm", "--trace"),
            _run("saliency", "--model", d / "m.cnvz", "--image", img, "--out", d / "s.pgm", "--raw", d / "s.f32"),
            _run("localize", "--model", d / "m.cnvz", "--image", img, "--topk", 2, "--out-boxes", d / "b.txt", "--out-mask", d / "mask.pgm"),
            _run("check-deconv", "--model", d / "m.cnvz", "--image", img, "--class", 0),
        ]
        files = {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}
        runs.append((outputs, files))
    (out_a, files_a), (out_b, files_b) = runs
    codes = [code for code, _ in out_a]
    ok = out_a == out_b and files_a == files_b and codes == [0] * 6
    acceptance(8, ok, f"6 commands, {len(files_a)} output files, exit codes {codes}, identical: {out_a == out_b and files_a == files_b}")
    assert ok
