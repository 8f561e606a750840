"""The eight-step adaptation procedure and its reports.

Domains: A is the full source, B the full target, C a random half of B's
damage sites. Hats mark MPCA projections through the basis fitted on A and C.
"""
from __future__ import annotations

import csv
import hashlib
import io
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import dist_metrics
from .dataset import DomainDataset
from .dist_metrics import MetricsReport
from .mpca import fit_joint, project
from .neural_net import (TrainConfig, build_type, finetune, normalize_positions, predict_position,
                         train)
from .tensor_core import ShapeError

MODELS = ("S-CNN", "T-CNN", "FT", "MPCA-FT")
SPLIT_TOL = 1e-12


class StageError(RuntimeError):
    """A pipeline stage failed; ``cause`` keeps the original exception."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage}: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


def derive_seed(master: int, stage: str) -> int:
    """Stage seed from a hash of the master seed and the stage name."""
    digest = hashlib.sha256(f"{int(master)}/{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


# --- splitting ---------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)
    seed: int = 0
    grouped: bool = True

    def __post_init__(self):
        fr = tuple(float(f) for f in self.fractions)
        if len(fr) != 3 or any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > SPLIT_TOL:
            raise ValueError(f"split fractions must be three nonnegative numbers summing to 1, got {fr}")
        object.__setattr__(self, "fractions", fr)


def partition_counts(n_units: int, fractions) -> tuple[int, int, int]:
    """Units per partition: floor each share, then hand out the remainder
    one at a time to val, test, train (skipping zero fractions)."""
    counts = [math.floor(f * n_units + 1e-9) for f in fractions]
    order = [i for i in (1, 2, 0) if fractions[i] > 0]
    k = 0
    while sum(counts) < n_units:
        counts[order[k % len(order)]] += 1
        k += 1
    return tuple(counts)


def split(ds: DomainDataset, spec: SplitSpec = SplitSpec()):
    """Seeded (train, val, test) partition.

    With ``spec.grouped`` whole damage sites are assigned, so augmented
    copies of one acquisition never straddle partitions.
    """
    if len(ds) < 3:
        raise ValueError(f"need at least 3 samples to split, got {len(ds)}")
    if spec.grouped:
        units = ds.site_ids
        unit_of = np.array([units.index(g) for g in ds.groups])
    else:
        units = list(range(len(ds)))
        unit_of = np.arange(len(ds))
    counts = partition_counts(len(units), spec.fractions)
    if counts[0] == 0 or (spec.fractions[1] > 0 and counts[1] == 0):
        raise ValueError(f"too few groups ({len(units)}) for split fractions {spec.fractions}")
    perm = np.random.default_rng(spec.seed).permutation(len(units))
    bounds = np.cumsum((0,) + counts)
    parts = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        chosen = np.isin(unit_of, perm[lo:hi])
        parts.append(ds.subset(np.flatnonzero(chosen)))
    return tuple(parts)


def halve_target(ds: DomainDataset, seed: int) -> DomainDataset:
    """Keep a seeded random ceil(half) of the damage sites, with all their copies."""
    sites = ds.site_ids
    if len(sites) < 2:
        raise ValueError(f"need at least 2 damage sites to halve, got {len(sites)}")
    rng = np.random.default_rng(seed)
    keep = {sites[i] for i in rng.choice(len(sites), math.ceil(len(sites) / 2), replace=False)}
    return ds.subset([i for i, g in enumerate(ds.groups) if g in keep])


def rmse(predictions, truth) -> tuple[float, float]:
    """Per-axis root mean square error in mm."""
    p = np.asarray(predictions, dtype=np.float64).reshape(-1, 2)
    t = np.asarray(truth, dtype=np.float64).reshape(-1, 2)
    if len(p) != len(t):
        raise ShapeError(f"{len(p)} predictions for {len(t)} ground-truth points")
    if len(p) == 0:
        raise ValueError("rmse needs at least one point")
    r = np.sqrt(np.mean((p - t) ** 2, axis=0))
    return float(r[0]), float(r[1])


# --- configuration and report ------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    case_id: str = "source->target"
    q_percent: float = 99.0
    copies: int = 10
    seed: int = 0
    source_split: tuple[float, float, float] = (0.7, 0.15, 0.15)
    target_split: tuple[float, float, float] = (0.9, 0.05, 0.05)
    paper_split: bool = False
    n_bins: int = dist_metrics.DEFAULT_BINS
    train: TrainConfig = TrainConfig()        # type 1 networks on raw images
    mpca_train: TrainConfig = TrainConfig()   # type 2/3 networks on projected images
    finetune: TrainConfig = TrainConfig()

    def __post_init__(self):
        if not 0 < self.q_percent <= 100:
            raise ValueError(f"q_percent must lie in (0, 100], got {self.q_percent}")
        if self.copies < 1:
            raise ValueError("copies must be >= 1")
        SplitSpec(self.source_split)
        SplitSpec(self.target_split)


@dataclass
class StageRecord:
    stage: str
    seed: int | None
    seconds: float
    detail: str = ""


@dataclass(frozen=True)
class ExperimentReport:
    case_id: str
    metrics_before: MetricsReport
    metrics_after: MetricsReport
    retained_dims: tuple[int, int]
    rmse: dict                      # model -> (x mm, y mm) on all of B
    rmse_heldout: dict              # model -> (x mm, y mm) on B minus C
    q_percent: float
    retained_fraction: float
    basis_fingerprint: str
    mpca_cnn_type: int
    n_eval: int
    n_heldout: int
    seeds: dict
    runtimes: dict = field(default_factory=dict, compare=False)
    predictions: dict = field(default_factory=dict, compare=False)
    stage_log: list = field(default_factory=list, compare=False)

    def __post_init__(self):
        for table in (self.rmse, self.rmse_heldout):
            if set(table) != set(MODELS):
                raise ValueError(f"report needs RMSE entries for {MODELS}")
            for v in table.values():
                if len(v) != 2 or any(not (x >= 0) for x in v if not math.isnan(x)):
                    raise ValueError(f"invalid RMSE pair {v}")
        if self.retained_dims[1] > self.retained_dims[0]:
            raise ValueError("retained p2 cannot exceed i2")

    # Runtimes and per-sample predictions stay out of the CSV so reruns match byte for byte.
    def to_rows(self) -> list[tuple[str, str, str]]:
        rows = [("case", "case_id", self.case_id)]
        rows += [("metrics_before", k, _fmt(v)) for k, v in self.metrics_before.as_dict().items()]
        rows += [("metrics_after", k, _fmt(v)) for k, v in self.metrics_after.as_dict().items()]
        rows += [("dims", "i2", str(self.retained_dims[0])), ("dims", "p2", str(self.retained_dims[1]))]
        rows += [
            ("mpca", "q_percent", _fmt(self.q_percent)),
            ("mpca", "retained_fraction", _fmt(self.retained_fraction)),
            ("mpca", "basis_fingerprint", self.basis_fingerprint),
            ("mpca", "cnn_type", str(self.mpca_cnn_type)),
            ("eval", "n_eval", str(self.n_eval)),
            ("eval", "n_heldout", str(self.n_heldout)),
        ]
        for prefix, table in (("rmse", self.rmse), ("heldout_rmse", self.rmse_heldout)):
            for axis, j in (("x", 0), ("y", 1)):
                rows += [(f"{prefix}_{axis}", m, _fmt(table[m][j])) for m in MODELS]
        rows += [("seed", k, str(v)) for k, v in self.seeds.items()]
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("section", "name", "value"))
        w.writerows(self.to_rows())
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ExperimentReport":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["section", "name", "value"]:
            raise ValueError("not a report CSV")
        sec: dict[str, dict[str, str]] = {}
        for s, k, v in rows[1:]:
            sec.setdefault(s, {})[k] = v
        metrics = lambda s: MetricsReport(**{k: float(v) for k, v in sec[s].items()})
        pair_table = lambda p: {m: (float(sec[f"{p}_x"][m]), float(sec[f"{p}_y"][m])) for m in MODELS}
        return cls(
            case_id=sec["case"]["case_id"],
            metrics_before=metrics("metrics_before"),
            metrics_after=metrics("metrics_after"),
            retained_dims=(int(sec["dims"]["i2"]), int(sec["dims"]["p2"])),
            rmse=pair_table("rmse"),
            rmse_heldout=pair_table("heldout_rmse"),
            q_percent=float(sec["mpca"]["q_percent"]),
            retained_fraction=float(sec["mpca"]["retained_fraction"]),
            basis_fingerprint=sec["mpca"]["basis_fingerprint"],
            mpca_cnn_type=int(sec["mpca"]["cnn_type"]),
            n_eval=int(sec["eval"]["n_eval"]),
            n_heldout=int(sec["eval"]["n_heldout"]),
            seeds={k: int(v) for k, v in sec.get("seed", {}).items()},
        )

    def to_text(self) -> str:
        names = MetricsReport.names()
        lines = [f"Case {self.case_id}", "", "Statistical distances (target vs source)"]
        lines.append(f"{'':16}" + "".join(f"{n:>14}" for n in names))
        for label, m in (("before MPCA", self.metrics_before), ("after MPCA", self.metrics_after)):
            d = m.as_dict()
            lines.append(f"{label:16}" + "".join(f"{d[n]:>14.6g}" for n in names))
        i2, p2 = self.retained_dims
        lines += [
            "",
            f"MPCA: Q = {self.q_percent:g}%, columns {i2} -> {p2}, "
            f"retained variance {self.retained_fraction:.6f}, CNN type {self.mpca_cnn_type}",
            "",
            f"RMSE (mm) on full target domain, n = {self.n_eval}",
            f"{'model':10}{'x':>12}{'y':>12}{'x held-out':>14}{'y held-out':>14}",
        ]
        for m in MODELS:
            (x, y), (hx, hy) = self.rmse[m], self.rmse_heldout[m]
            lines.append(f"{m:10}{x:>12.4f}{y:>12.4f}{hx:>14.4f}{hy:>14.4f}")
        lines.append(f"(held-out columns: {self.n_heldout} samples never used for training)")
        return "\n".join(lines) + "\n"

    def predictions_csv(self) -> str:
        """One row per evaluated sample and model: truth and prediction in mm."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("index", "site", "in_c", "model", "x_true", "y_true", "x_pred", "y_pred"))
        truth, groups, in_c = (self.predictions[k] for k in ("truth", "groups", "in_c"))
        for m in MODELS:
            pred = self.predictions[m]
            for i in range(len(truth)):
                w.writerow((i, groups[i], int(in_c[i]), m, _fmt(truth[i, 0]), _fmt(truth[i, 1]),
                            _fmt(pred[i, 0]), _fmt(pred[i, 1])))
        return buf.getvalue()

    def stage_log_text(self) -> str:
        return "".join(f"{r.stage}\tseed={r.seed}\t{r.seconds:.3f}s\t{r.detail}\n" for r in self.stage_log)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


# --- the procedure -----------------------------------------------------------

class _Stages:
    def __init__(self, master: int):
        self.master = master
        self.log: list[StageRecord] = []
        self.seeds: dict[str, int] = {}

    def run(self, name: str, fn, *, seeded: bool = True, detail=None):
        seed = derive_seed(self.master, name) if seeded else None
        if seeded:
            self.seeds[name] = seed
        t0 = time.perf_counter()
        try:
            out = fn(seed) if seeded else fn()
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc
        text = detail(out) if detail else ""
        self.log.append(StageRecord(name, seed, time.perf_counter() - t0, text))
        return out


def _xy_sets(ds: DomainDataset):
    y = normalize_positions(ds.labels)
    return (ds.images, y[:, 0]), (ds.images, y[:, 1])


def _train_pair(stages: _Stages, tag: str, spec, tr, va, cfg: TrainConfig):
    (tx, ty), (vx, vy) = _xy_sets(tr), _xy_sets(va)
    mx = stages.run(f"{tag}.x", lambda s: train(spec, tx, vx, replace(cfg, seed=s)),
                    detail=lambda m: f"epochs={len(m.history)}")
    my = stages.run(f"{tag}.y", lambda s: train(spec, ty, vy, replace(cfg, seed=s)),
                    detail=lambda m: f"epochs={len(m.history)}")
    return mx, my


def _finetune_pair(stages: _Stages, tag: str, pair, tr, va, cfg: TrainConfig):
    (tx, ty), (vx, vy) = _xy_sets(tr), _xy_sets(va)
    fx = stages.run(f"{tag}.x", lambda s: finetune(pair[0], tx, vx, replace(cfg, seed=s)),
                    detail=lambda m: f"epochs={len(m.history)}")
    fy = stages.run(f"{tag}.y", lambda s: finetune(pair[1], ty, vy, replace(cfg, seed=s)),
                    detail=lambda m: f"epochs={len(m.history)}")
    return fx, fy


def _mpca_spec(network: str, dims: tuple[int, int]):
    """Type 2 for circular targets, type 3 for rectangular; type 3 if type 2 cannot fit."""
    if network == "circular":
        try:
            return 2, build_type(2, dims), ""
        except ShapeError as exc:
            return 3, build_type(3, dims), f"type 2 underflows ({exc}); using type 3"
    return 3, build_type(3, dims), ""


def run_procedure(source: DomainDataset, target: DomainDataset, cfg: ExperimentConfig) -> ExperimentReport:
    """Run the full source -> target adaptation study and collect its report."""
    if source.image_dims != target.image_dims:
        raise StageError("input", ShapeError(
            f"source images {source.image_dims} and target images {target.image_dims} differ"))
    st = _Stages(cfg.seed)
    grouped = not cfg.paper_split

    c = st.run("halve", lambda s: halve_target(target, s), detail=lambda d: f"sites={len(d.site_ids)} n={len(d)}")
    a_tr, a_va, _ = st.run("split.source", lambda s: split(source, SplitSpec(cfg.source_split, s, grouped)),
                           detail=lambda p: "sizes=" + ",".join(str(len(x)) for x in p))
    c_tr, c_va, _ = st.run("split.target", lambda s: split(c, SplitSpec(cfg.target_split, s, grouped)),
                           detail=lambda p: "sizes=" + ",".join(str(len(x)) for x in p))

    # 1-3: distances, joint MPCA, distances after projection
    before = st.run("metrics.before", lambda: dist_metrics.compute_all(source.images, c.images, cfg.n_bins),
                    seeded=False)
    joint = st.run("mpca", lambda: fit_joint(source.tensor(), c.tensor(), cfg.q_percent), seeded=False,
                   detail=lambda j: f"p2={j.p2} fingerprint={j.basis.fingerprint()}")
    a_hat, c_hat = joint.projected_source.data, joint.projected_target.data
    scale = max(float(np.abs(a_hat).max()), float(np.abs(c_hat).max())) or 1.0
    after = st.run("metrics.after",
                   lambda: dist_metrics.compute_all(a_hat / scale, c_hat / scale, cfg.n_bins), seeded=False)

    # 4-7: the four model pairs; projected partitions reuse the raw split indices
    dims = source.image_dims
    s_cnn = _train_pair(st, "s-cnn", build_type(1, dims), a_tr, a_va, cfg.train)
    t_cnn = _train_pair(st, "t-cnn", build_type(1, dims), c_tr, c_va, cfg.train)
    ft = _finetune_pair(st, "ft", s_cnn, c_tr, c_va, cfg.finetune)

    source_hat = source.with_images(a_hat, "projected")
    c_hat_ds = c.with_images(c_hat, "projected")
    a_tr_h, a_va_h, _ = split(source_hat, SplitSpec(cfg.source_split, st.seeds["split.source"], grouped))
    c_tr_h, c_va_h, _ = split(c_hat_ds, SplitSpec(cfg.target_split, st.seeds["split.target"], grouped))
    kind, spec, note = st.run("mpca-cnn.spec", lambda: _mpca_spec(target.network, (dims[0], joint.p2)),
                              seeded=False, detail=lambda r: f"type={r[0]} {r[2]}".strip())
    mpca_cnn = _train_pair(st, "mpca-cnn", spec, a_tr_h, a_va_h, cfg.mpca_train)
    mpca_ft = _finetune_pair(st, "mpca-ft", mpca_cnn, c_tr_h, c_va_h, cfg.finetune)

    # 8: evaluate on all of B; the projected path reuses the fitted basis
    b_hat = st.run("project.b", lambda: project(target.tensor(), joint.basis).data, seeded=False,
                   detail=lambda _: f"fingerprint={joint.basis.fingerprint()}")
    pairs = {"S-CNN": (s_cnn, target.images), "T-CNN": (t_cnn, target.images),
             "FT": (ft, target.images), "MPCA-FT": (mpca_ft, b_hat)}
    preds = st.run("evaluate", lambda: {m: predict_position(p[0], p[1], x) for m, (p, x) in pairs.items()},
                   seeded=False, detail=lambda _: f"n={len(target)}")

    c_sites = set(c.site_ids)
    in_c = np.array([g in c_sites for g in target.groups])
    held = ~in_c
    table = {m: rmse(p, target.labels) for m, p in preds.items()}
    held_table = {m: rmse(p[held], target.labels[held]) if held.any() else (math.nan, math.nan)
                  for m, p in preds.items()}
    predictions = dict(preds, truth=target.labels, groups=target.groups, in_c=in_c)
    return ExperimentReport(
        case_id=cfg.case_id,
        metrics_before=before,
        metrics_after=after,
        retained_dims=(source.image_dims[1], joint.p2),
        rmse=table,
        rmse_heldout=held_table,
        q_percent=float(cfg.q_percent),
        retained_fraction=joint.basis.retained_fraction,
        basis_fingerprint=joint.basis.fingerprint(),
        mpca_cnn_type=kind,
        n_eval=len(target),
        n_heldout=int(held.sum()),
        seeds=dict(st.seeds),
        runtimes={r.stage: r.seconds for r in st.log},
        predictions=predictions,
        stage_log=st.log,
    )


__all__ = [
    "MODELS", "StageError", "derive_seed", "SplitSpec", "partition_counts", "split", "halve_target",
    "rmse", "ExperimentConfig", "ExperimentReport", "StageRecord", "run_procedure",
]
