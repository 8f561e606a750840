"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line that is echoed in the pytest terminal
summary. The end-to-end tests run the shipped configurations under
``configs/`` and take several minutes in total.
"""
import math
import os
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from mpca_tl import bundle, cli, config, dist_metrics
from mpca_tl.dist_metrics import Histogram, bhattacharyya, chi2, compare, emd, jsd, kl, kl_sym
from mpca_tl.mpca import fit_basis, fit_joint, project, reconstruct
from mpca_tl.neural_net import (AdamState, BatchNorm, Conv2D, Dropout, FullyConnected, Input, MaxPool, ModelSpec,
                                RegressionOutput, ReLU, Sigmoid, TrainConfig, adam_step, build_type, finetune,
                                gradient_check, init_model, train)
from mpca_tl.pipeline import MODELS, ExperimentReport, derive_seed, halve_target
from mpca_tl.signal_lab import build_domain
from mpca_tl.tensor_core import ShapeError, Tensor3

from conftest import ACCEPTANCE
import oracles

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
BUDGET = {"mpca": 30.0, "metrics": 5.0, "nn": 120.0, "e2e": 600.0}
ELAPSED = {k: 0.0 for k in BUDGET}


@contextmanager
def criterion(suite: str, name: str):
    """Record one PASS/FAIL line; the yielded list collects optional details."""
    t0 = time.perf_counter()
    notes: list[str] = []
    try:
        yield notes
    except BaseException as exc:
        msg = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
        _record("FAIL", suite, name, time.perf_counter() - t0, msg)
        raise
    _record("PASS", suite, name, time.perf_counter() - t0, "; ".join(notes))


def _record(status, suite, name, dt, msg=""):
    ELAPSED[suite] = ELAPSED.get(suite, 0.0) + dt
    line = f"{status}  [{suite}] {name} ({dt:.1f}s)" + (f": {msg}" if msg else "")
    ACCEPTANCE.append(line)
    print(line)


def _rand(seed, shape):
    return Tensor3(np.random.default_rng(seed).normal(size=shape))


# --- MPCA correctness ------------------------------------------------------------

def test_mpca_full_projection_round_trip():
    with criterion("mpca", "Q=100 round trip on 4x12x10 joint tensors, error <= 1e-8"):
        for seed in range(5):
            # 10 samples of 4 rows by 12 columns in each domain
            a, b = _rand(2 * seed, (10, 4, 12)), _rand(2 * seed + 1, (10, 4, 12))
            j = fit_joint(a, b, 100)
            assert j.p2 == 12
            for t, p in ((a, j.projected_source), (b, j.projected_target)):
                err = np.max(np.abs(reconstruct(p, j.basis).data - t.data))
                assert err <= 1e-8, f"seed {seed}: error {err:.3e}"


def test_mpca_oracle_equivalence():
    with criterion("mpca", "eigenvalues match dense-covariance oracle within 1e-8 relative, i2 <= 32"):
        for seed, (n, i1, i2) in enumerate([(6, 3, 5), (5, 4, 12), (8, 2, 20), (3, 3, 32), (12, 5, 32)]):
            a, b = _rand(100 + seed, (n, i1, i2)), _rand(200 + seed, (n + 1, i1, i2))
            lam = fit_joint(a, b, 99).basis.eigenvalues
            ref = oracles.dense_covariance_spectrum(a.data, b.data)
            # with fewer mode-2 vectors than columns only the nonzero spectrum is kept
            assert np.all(np.abs(ref[len(lam):]) <= 1e-10 * ref[0])
            ref, big = ref[: len(lam)], ref[: len(lam)] > 1e-10 * ref[0]
            rel = np.max(np.abs(lam[big] - ref[big]) / ref[big])
            assert rel <= 1e-8, f"case {seed}: relative error {rel:.3e}"
            assert np.all(np.abs(lam[~big]) <= 1e-8 * ref[0])


def test_mpca_q_retention():
    with criterion("mpca", "retained_fraction >= Q/100 and p2 nondecreasing for Q in {90, 97, 99, 99.9}"):
        for seed in range(4):
            t = _rand(300 + seed, (15, 4, 30))
            dims = []
            for q in (90, 97, 99, 99.9):
                basis = fit_basis(t, q)
                assert basis.retained_fraction >= q / 100
                assert basis.p2 == oracles.q_count(basis.eigenvalues, q)
                dims.append(basis.p2)
            assert dims == sorted(dims), dims


def test_mpca_energy_partition():
    with criterion("mpca", "residual energy fraction = 1 - retained_fraction within 1e-6"):
        for seed, q in enumerate((50, 90, 97, 99)):
            t = _rand(400 + seed, (8, 3, 16))
            basis = fit_basis(t, q)
            resid = np.sum((t.data - reconstruct(project(t, basis), basis).data) ** 2)
            total = np.sum((t.data - t.data.reshape(-1, t.i2).mean(axis=0)) ** 2)
            assert abs(resid / total - (1 - basis.retained_fraction)) <= 1e-6


# --- metrics ---------------------------------------------------------------------

H = lambda *p: Histogram(np.array(p, dtype=float))


def test_metrics_values_and_symmetry():
    with criterion("metrics", "zeros, disjoint supports, shifted masses, symmetry, worked examples"):
        rng = np.random.default_rng(0)
        for _ in range(20):
            h = Histogram(rng.uniform(0, 1, 50))
            assert all(abs(v) <= 1e-9 for v in compare(h, h).as_dict().values())
        a, b = H(1, 0), H(0, 1)
        assert abs(jsd(a, b) - math.log(2)) <= 1e-12 and abs(chi2(a, b) - 2.0) <= 1e-12
        for k in range(1, 10):
            p, q = np.zeros(12), np.zeros(12)
            p[1], q[1 + k] = 1, 1
            assert emd(Histogram(p), Histogram(q)) == pytest.approx(k, abs=1e-12)
        for _ in range(50):
            p, q = (Histogram(rng.uniform(0, 1, 30) * (rng.uniform(size=30) > 0.3) + 1e-3) for _ in range(2))
            for f in (kl_sym, jsd, chi2, bhattacharyya, emd):
                assert f(p, q) == f(q, p), f.__name__
        assert abs(kl(H(0.5, 0.5, 0), H(0.25, 0.5, 0.25)) - 0.5 * math.log(2)) <= 1e-6
        assert abs(chi2(H(0.5, 0.5), H(1, 0)) - 2 / 3) <= 1e-6
        assert abs(emd(H(0.5, 0.5, 0), H(0, 0.5, 0.5)) - 1.0) <= 1e-6


def test_metrics_asymmetry_witness():
    with criterion("metrics", "kl(HT, HS) != kl(HS, HT) on a documented pair"):
        # HS puts mass where HT has none, so the reverse direction is far larger
        ht, hs = H(0.5, 0.5, 0), H(0.25, 0.5, 0.25)
        forward, reverse = kl(ht, hs), kl(hs, ht)
        assert abs(forward - 0.5 * math.log(2)) <= 1e-6
        assert reverse > 10 * forward


# --- neural nets -------------------------------------------------------------------

def _micro(*layers, hw=(3, 8)):
    return ModelSpec((Input(hw[0], hw[1], 1),) + layers + (FullyConnected(1), RegressionOutput()))


def test_nn_gradient_check():
    with criterion("nn", "finite-difference gradients < 1e-4 for every layer type and a Type-3 model"):
        specs = {
            "conv": _micro(Conv2D(2, 3, 2, 1, 2)),
            "batchnorm": _micro(Conv2D(1, 3, 2, bias=False), BatchNorm()),
            "relu": _micro(Conv2D(1, 3, 2), ReLU()),
            "maxpool": _micro(MaxPool(2, 3, 1, 2)),
            "dropout": _micro(Dropout(0.5)),
            "sigmoid": _micro(FullyConnected(4), Sigmoid()),
            "fc": _micro(FullyConnected(5)),
            "type-3": build_type(3, (3, 20)),
        }
        for seed, (name, spec) in enumerate(specs.items()):
            rng = np.random.default_rng(seed)
            x = rng.normal(size=(4,) + spec.input_shape[:2])
            err = gradient_check(init_model(spec, seed), x, rng.uniform(0, 1, 4))
            assert err < 1e-4, f"{name}: {err:.3e}"


def test_nn_adam_hand_step():
    with criterion("nn", "Adam step on f(w) = w^2 moves w from 1 to 0.999 within 1e-9"):
        params = [{"w": np.array([1.0])}]
        adam_step(params, [{"w": 2 * params[0]["w"]}], AdamState(), 1e-3)
        assert abs(params[0]["w"][0] - 0.999) <= 1e-9


def test_nn_shape_audit():
    with criterion("nn", "Type-1 first conv width 3521 on 7x10568; undersized inputs raise a layer-named error"):
        spec = build_type(1, (7, 10568))
        assert spec.shapes[1][1] == 3521
        for kind, dims in ((1, (7, 40)), (2, (7, 8)), (3, (7, 5))):
            with pytest.raises(ShapeError, match=r"layer \d+"):
                build_type(kind, dims)


def test_nn_freeze_contract_and_schedule():
    with criterion("nn", "finetune leaves conv parameters bit-identical; lr 1e-4 at epoch 16, 1e-5 at 31"):
        rng = np.random.default_rng(5)
        y = rng.uniform(0, 1, 40)
        x = rng.normal(0, 0.1, (40, 3, 20))
        x[:, :, :10] += y[:, None, None]
        spec = build_type(3, (3, 20))
        cfg = TrainConfig(lr=1e-2, batch_size=5, max_epochs=4, seed=0)
        model = train(spec, (x[:30], y[:30]), (x[30:], y[30:]), cfg)
        ft = finetune(model, (x[:30], 1 - y[:30]), (x[30:], 1 - y[30:]), cfg)
        convs = [i for i, ly in enumerate(spec.layers) if isinstance(ly, Conv2D)]
        assert convs
        for i in convs:
            for k in model.params[i]:
                assert model.params[i][k].tobytes() == ft.params[i][k].tobytes()
        head = spec.head_start()
        assert any(not np.array_equal(model.params[i][k], ft.params[i][k])
                   for i in range(head, len(spec.layers)) for k in model.params[i])
        sched = TrainConfig()
        assert sched.lr_at(15) == 1e-3
        assert sched.lr_at(16) == pytest.approx(1e-4, rel=1e-12)
        assert sched.lr_at(31) == pytest.approx(1e-5, rel=1e-12)


# --- end-to-end --------------------------------------------------------------------

def _run_cli(cfg_path: Path, out: Path, threads: int) -> ExperimentReport:
    old = os.environ.get("TDA_THREADS")
    os.environ["TDA_THREADS"] = str(threads)
    try:
        code = cli.main(["run", "--config", str(cfg_path), "--out", str(out)])
    finally:
        if old is None:
            os.environ.pop("TDA_THREADS", None)
        else:
            os.environ["TDA_THREADS"] = old
    assert code == 0, f"exit code {code}"
    return ExperimentReport.from_csv((out / "report.csv").read_text())


@pytest.fixture(scope="module")
def reference(tmp_path_factory):
    root = tmp_path_factory.mktemp("reference")
    t0 = time.perf_counter()
    first = _run_cli(CONFIGS / "reference.cfg", root / "t1", threads=1)
    ELAPSED["e2e"] += time.perf_counter() - t0
    return root, first


def test_e2e_reference_metrics_positive(reference):
    with criterion("e2e", "reference (a): all six metrics_before > 0") as notes:
        values = reference[1].metrics_before.as_dict()
        notes.append(", ".join(f"{k} {v:.3g}" for k, v in values.items()))
        assert all(v > 0 for v in values.values()), values


def test_e2e_reference_dimension_reduced(reference):
    with criterion("e2e", "reference (b): p2 < 10568") as notes:
        i2, p2 = reference[1].retained_dims
        notes.append(f"p2 = {p2}")
        assert i2 == 10568 and p2 < 10568, (i2, p2)


def test_e2e_reference_rmse_finite(reference):
    with criterion("e2e", "reference (c): all eight RMSE entries finite"):
        rep = reference[1]
        assert set(rep.rmse) == set(MODELS)
        assert all(np.isfinite(v) for pair in rep.rmse.values() for v in pair)


def test_e2e_reference_ordering(reference):
    with criterion("e2e", "reference (d): MPCA-FT <= FT < S-CNN on both axes") as notes:
        r = reference[1].rmse
        text = ", ".join(f"{m} {r[m][0]:.2f}/{r[m][1]:.2f}" for m in MODELS)
        notes.append("x/y mm: " + text)
        for axis in (0, 1):
            assert r["MPCA-FT"][axis] <= r["FT"][axis], text
            assert r["FT"][axis] < r["S-CNN"][axis], text


def test_e2e_reference_rerun_bit_identical(reference):
    with criterion("e2e", "reference (e): rerun with TDA_THREADS=8 is bit-identical"):
        root, _ = reference
        _run_cli(CONFIGS / "reference.cfg", root / "t8", threads=8)
        for name in ("report.csv", "predictions.csv"):
            assert (root / "t1" / name).read_bytes() == (root / "t8" / name).read_bytes(), name


def test_e2e_identical_domain_control():
    with criterion("e2e", "identical domains: all six metrics_before <= 1e-3") as notes:
        # the first pipeline stage: source A against the halved target C
        cfg = config.load(CONFIGS / "identical.cfg")
        a = build_domain(cfg.source.scenario, cfg.source.network, cfg.experiment.copies, cfg.snr_range)
        b = build_domain(cfg.target.scenario, cfg.target.network, cfg.experiment.copies, cfg.snr_range)
        assert np.array_equal(a.images, b.images)
        c = halve_target(b, derive_seed(cfg.experiment.seed, "halve"))
        values = dist_metrics.compute_all(a.images, c.images, cfg.experiment.n_bins).as_dict()
        text = ", ".join(f"{k} {v:.3g}" for k, v in values.items())
        notes.append(text)
        assert all(v <= 1e-3 for v in values.values()), text


def test_e2e_rectangular_smoke(tmp_path, capsys):
    with criterion("e2e", "circular -> rectangular case completes with a 4x2 RMSE block"):
        rep = _run_cli(CONFIGS / "smoke_rect.cfg", tmp_path, threads=1)
        assert rep.mpca_cnn_type == 3
        assert set(rep.rmse) == set(MODELS) and len(MODELS) == 4
        assert all(len(v) == 2 and np.isfinite(v).all() for v in rep.rmse.values())
        text = (tmp_path / "report.txt").read_text()
        assert all(m in text for m in MODELS)


# --- determinism and I/O ------------------------------------------------------------

def test_io_round_trips_byte_identical(tmp_path):
    with criterion("io", "dataset, basis and checkpoint round trips are byte-identical"):
        cfg = config.load(CONFIGS / "smoke_rect.cfg")
        ds = build_domain(cfg.source.scenario, cfg.source.network, 1, cfg.snr_range)
        bundle.save_dataset(ds, tmp_path / "d1")
        bundle.save_dataset(bundle.load_dataset(tmp_path / "d1"), tmp_path / "d2")
        basis = fit_basis(ds.tensor(), 99)
        bundle.save_basis(basis, tmp_path / "b1")
        bundle.save_basis(bundle.load_basis(tmp_path / "b1"), tmp_path / "b2")
        model = init_model(build_type(3, (7, 40)), 0)
        bundle.save_model(model, tmp_path / "m1", {"axis": "x"})
        bundle.save_model(bundle.load_model(tmp_path / "m1"), tmp_path / "m2", {"axis": "x"})
        for a, b in (("d1", "d2"), ("b1", "b2"), ("m1", "m2")):
            for f in sorted((tmp_path / a).iterdir()):
                assert f.read_bytes() == (tmp_path / b / f.name).read_bytes(), f"{a}/{f.name}"


def test_io_thread_count_invariance(reference):
    with criterion("io", "TDA_THREADS=1 and TDA_THREADS=8 produce identical reports"):
        root, _ = reference
        if not (root / "t8" / "report.csv").exists():
            _run_cli(CONFIGS / "reference.cfg", root / "t8", threads=8)
        for name in ("report.csv", "report.txt", "predictions.csv"):
            assert (root / "t1" / name).read_bytes() == (root / "t8" / name).read_bytes(), name


def test_suite_runtimes():
    with criterion("runtime", "suites within budget: " + ", ".join(f"{k} < {v:g}s" for k, v in BUDGET.items())):
        over = {k: round(ELAPSED[k], 1) for k, v in BUDGET.items() if ELAPSED[k] >= v}
        assert not over, f"over budget: {over}"
