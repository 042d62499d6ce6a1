"""Dataset assembly and splitting, the training loop, and the evaluation
metrics and studies: masked MSE/MRE, peak-statistic KL divergence, line
cuts, the dataset-size study, and the stamping-speed sweep.
"""
from __future__ import annotations

import dataclasses
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from . import engine as eg
from .io_formats import read_fqt, save_checkpoint, write_fqt
from .network import ResSEUNet
from .oracle import DEFAULT_ORACLE, OracleConfig, simulate
from .params import DEFAULT_BOUNDS, ParameterBounds, ParameterVector, lhs_sample
from .raster_in import SCALAR_FLOOR, GridSpec, build_input_stack
from .raster_target import (
    DISPLACEMENT_NORM_MM,
    ClipThresholds,
    assemble_targets,
)

MANIFEST_VERSION = 1
MAX_EPOCHS = 1500
DEFAULT_PATIENCE = 100


def worker_count() -> int:
    """Parallel fan-out cap, taken from FORMCAST_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("FORMCAST_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# datasets


@dataclass
class Sample:
    sample_id: str
    params: ParameterVector
    inputs: np.ndarray        # (4, n, n) float32
    thinning: np.ndarray      # (1, n, n) float32
    displacement: np.ndarray  # (3, n, n) float32
    mask: np.ndarray          # (n, n) uint8
    flagged: bool


@dataclass
class Dataset:
    samples: list[Sample]
    manifest: dict

    def __post_init__(self):
        ids = [s.sample_id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate sample ids in dataset")
        shapes = {s.inputs.shape for s in self.samples}
        if len(shapes) > 1:
            raise ValueError(f"inconsistent grids across samples: {shapes}")

    def __len__(self):
        return len(self.samples)

    @property
    def grid(self) -> GridSpec:
        g = self.manifest["grid"]
        return GridSpec(n_pixels=g["n_pixels"], frame_mm=g["frame_mm"])

    def ids(self) -> list[str]:
        return [s.sample_id for s in self.samples]

    def inputs_array(self) -> np.ndarray:
        return np.stack([s.inputs for s in self.samples])

    def targets_array(self, kind: str) -> np.ndarray:
        if kind == "thinning":
            return np.stack([s.thinning for s in self.samples])
        if kind == "displacement":
            return np.stack([s.displacement for s in self.samples])
        raise ValueError(f"unknown target kind {kind!r}")

    def masks_array(self) -> np.ndarray:
        return np.stack([s.mask for s in self.samples])


def _sample_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def build_manifest(grid: GridSpec, bounds: ParameterBounds,
                   thresholds: ClipThresholds, oracle_config: OracleConfig,
                   seed: int) -> dict:
    return {
        "version": MANIFEST_VERSION,
        "grid": {"n_pixels": grid.n_pixels, "frame_mm": grid.frame_mm},
        "bounds": bounds.as_dict(),
        "normalization": {"scalar_floor": SCALAR_FLOOR,
                          "displacement_norm_mm": DISPLACEMENT_NORM_MM},
        "clip_thresholds": {"c1": thresholds.c1, "c2": thresholds.c2},
        "oracle_config": oracle_config.as_dict(),
        "seed": seed,
        "samples": [],
    }


def make_sample(sample_id: str, pv: ParameterVector, grid: GridSpec,
                bounds: ParameterBounds = DEFAULT_BOUNDS,
                thresholds: ClipThresholds = ClipThresholds(),
                oracle_config: OracleConfig = DEFAULT_ORACLE,
                mesh_spacing: float = 8.0, seed: int = 0) -> Sample:
    """Run geometry -> oracle -> both rasterizers for one parameter vector."""
    stack = build_input_stack(pv, grid, bounds, seed=seed)
    result = simulate(pv, spacing=mesh_spacing, seed=seed, config=oracle_config)
    targets = assemble_targets(result, stack.mask, grid, thresholds)
    return Sample(sample_id=sample_id, params=pv,
                  inputs=stack.data, thinning=targets.thinning,
                  displacement=targets.displacement, mask=targets.mask,
                  flagged=targets.flagged)


def generate_dataset(n: int, seed: int, grid: GridSpec,
                     bounds: ParameterBounds = DEFAULT_BOUNDS,
                     thresholds: ClipThresholds = ClipThresholds(),
                     oracle_config: OracleConfig = DEFAULT_ORACLE,
                     mesh_spacing: float = 8.0) -> Dataset:
    """LHS design plus per-sample oracle runs and rasterization."""
    pvs = lhs_sample(n, bounds, seed=seed)

    def one(i):
        return make_sample(f"s{i:05d}", pvs[i], grid, bounds, thresholds,
                           oracle_config, mesh_spacing,
                           seed=_sample_seed(seed, i))

    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(one, range(n)))
    else:
        samples = [one(i) for i in range(n)]

    manifest = build_manifest(grid, bounds, thresholds, oracle_config, seed)
    manifest["samples"] = [{"id": s.sample_id, "params": s.params.as_dict(),
                            "flagged": s.flagged} for s in samples]
    return Dataset(samples=samples, manifest=manifest)


def save_dataset(dataset: Dataset, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(dataset.manifest, f, indent=2, sort_keys=True)
    for s in dataset.samples:
        write_fqt(os.path.join(out_dir, f"{s.sample_id}.fqt"),
                  {"inputs": s.inputs, "thinning": s.thinning,
                   "displacement": s.displacement,
                   "mask": s.mask.astype(np.float32)})


def load_dataset(path) -> Dataset:
    manifest_path = os.path.join(path, "manifest.json")
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(f"no dataset manifest at {manifest_path}")
    with open(manifest_path) as f:
        manifest = json.load(f)
    samples = []
    for entry in manifest["samples"]:
        tensors, _ = read_fqt(os.path.join(path, f"{entry['id']}.fqt"))
        samples.append(Sample(
            sample_id=entry["id"],
            params=ParameterVector.from_dict(entry["params"]),
            inputs=tensors["inputs"], thinning=tensors["thinning"],
            displacement=tensors["displacement"],
            mask=tensors["mask"].astype(np.uint8),
            flagged=bool(entry["flagged"])))
    return Dataset(samples=samples, manifest=manifest)


def split(dataset: Dataset, test_frac: float = 0.1,
          seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded disjoint/exhaustive shuffle split; test size = round(frac * n)."""
    if not dataset.samples:
        raise ValueError("cannot split an empty dataset")
    if not 0.0 < test_frac < 1.0:
        raise ValueError(f"test_frac must lie in (0, 1), got {test_frac}")
    n = len(dataset.samples)
    n_test = int(round(test_frac * n))
    order = np.random.default_rng(seed).permutation(n)
    test_idx = set(order[:n_test].tolist())
    train = [s for i, s in enumerate(dataset.samples) if i not in test_idx]
    test = [s for i, s in enumerate(dataset.samples) if i in test_idx]
    return (Dataset(train, dataset.manifest), Dataset(test, dataset.manifest))


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainRun:
    train_losses: list[float]
    test_losses: list[float]
    wall_time_s: float
    checkpoint_path: str | None
    config: dict
    best_epoch: int = 0
    start_epoch: int = 0

    def __post_init__(self):
        if len(self.train_losses) != len(self.test_losses):
            raise ValueError("train/test loss histories differ in length")

    @property
    def epochs_run(self) -> int:
        return len(self.train_losses)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def export_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.as_dict(), f, indent=2, sort_keys=True)


def _target_kind(out_channels: int) -> str:
    return {1: "thinning", 3: "displacement"}[out_channels]


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch])


def _mean_loss(net: ResSEUNet, x: np.ndarray, y: np.ndarray,
               batch: int) -> float:
    total, count = 0.0, 0
    for i in range(0, len(x), batch):
        pred = net.predict(x[i:i + batch])
        total += float(np.square(pred - y[i:i + batch]).sum())
        count += pred.size
    return total / count


def train(net: ResSEUNet, train_set: Dataset, test_set: Dataset,
          epochs: int, batch: int = 20, seed: int = 0,
          checkpoint_path=None, optimizer: eg.Adam | None = None,
          start_epoch: int = 0, patience: int = DEFAULT_PATIENCE,
          log_every: int | None = None) -> TrainRun:
    """Adam/MSE loop with per-epoch seeded shuffling, per-epoch train and
    test losses, a checkpoint at the best test loss, and early stopping."""
    if not train_set.samples:
        raise ValueError("empty train set")
    kind = _target_kind(net.config.out_channels)
    x_tr = train_set.inputs_array()
    y_tr = train_set.targets_array(kind)
    x_te = test_set.inputs_array() if test_set.samples else x_tr
    y_te = test_set.targets_array(kind) if test_set.samples else y_tr
    if x_tr.shape[2] != net.config.resolution:
        raise ValueError("dataset resolution does not match the network")

    opt = optimizer if optimizer is not None else eg.Adam(net.params())
    train_losses: list[float] = []
    test_losses: list[float] = []
    best = np.inf
    best_epoch = start_epoch
    t0 = time.monotonic()

    end_epoch = min(start_epoch + epochs, MAX_EPOCHS)
    for epoch in range(start_epoch, end_epoch):
        order = _epoch_rng(seed, epoch).permutation(len(x_tr))
        epoch_sq, epoch_n = 0.0, 0
        for i in range(0, len(order), batch):
            idx = order[i:i + batch]
            if len(idx) == 1 and len(order) > 1:
                idx = order[i - 1:i + 1]  # batch norm needs >= 2 rows
            opt.zero_grad()
            pred = net.forward(eg.Tensor(x_tr[idx]), training=True)
            loss = eg.mse_loss(pred, eg.Tensor(y_tr[idx]))
            loss.backward()
            opt.step()
            epoch_sq += float(loss.data) * pred.data.size
            epoch_n += pred.data.size
        train_losses.append(epoch_sq / epoch_n)
        test_losses.append(_mean_loss(net, x_te, y_te, batch))
        if log_every and (epoch + 1) % log_every == 0:
            print(f"epoch {epoch + 1}: train {train_losses[-1]:.3e} "
                  f"test {test_losses[-1]:.3e}", flush=True)
        if test_losses[-1] < best:
            best = test_losses[-1]
            best_epoch = epoch
            if checkpoint_path is not None:
                save_checkpoint(checkpoint_path, net, opt,
                                extra={"epoch": epoch,
                                       "test_loss": test_losses[-1],
                                       "seed": seed})
        elif epoch - best_epoch >= patience:
            break

    return TrainRun(train_losses=train_losses, test_losses=test_losses,
                    wall_time_s=time.monotonic() - t0,
                    checkpoint_path=(str(checkpoint_path)
                                     if checkpoint_path is not None else None),
                    config=net.config.as_dict(),
                    best_epoch=best_epoch, start_epoch=start_epoch)


# ---------------------------------------------------------------------------
# metrics


def mae_max(prediction: np.ndarray, truth: np.ndarray,
            mask: np.ndarray) -> float:
    """Absolute difference of the in-mask field maxima."""
    if prediction.shape != truth.shape:
        raise ValueError("shape mismatch")
    m = np.broadcast_to(mask.astype(bool), prediction.shape)
    if not m.any():
        raise ValueError("empty mask")
    return float(abs(prediction[m].max() - truth[m].max()))


def masked_mse(prediction: np.ndarray, truth: np.ndarray,
               mask: np.ndarray) -> float:
    m = np.broadcast_to(mask.astype(bool), prediction.shape)
    if not m.any():
        raise ValueError("empty mask")
    return float(np.square(prediction[m] - truth[m]).mean())


def mre(predictions: np.ndarray, targets: np.ndarray,
        mask: np.ndarray) -> float:
    """Sum |error| / sum |truth| over in-mask pixels of the whole set."""
    m = np.broadcast_to(mask.astype(bool), predictions.shape)
    denom = float(np.abs(targets[m]).sum())
    if denom == 0.0:
        raise ValueError("all-zero targets: relative error undefined")
    return float(np.abs(predictions[m] - targets[m]).sum()) / denom


def kl_divergence(p_mass: np.ndarray, q_mass: np.ndarray) -> float:
    """KL(p || q) in nats for two probability mass vectors."""
    p = np.asarray(p_mass, dtype=np.float64)
    q = np.asarray(q_mass, dtype=np.float64)
    nz = p > 0.0
    return float(np.sum(p[nz] * np.log(p[nz] / q[nz])))


def _field_stat(field: np.ndarray, mask: np.ndarray | None,
                statistic: str) -> float:
    values = field if mask is None else field[np.broadcast_to(
        mask.astype(bool), field.shape)]
    if statistic == "max":
        return float(values.max())
    if statistic == "mean":
        return float(values.mean())
    raise ValueError(f"unknown statistic {statistic!r}")


def kld_stats(gt_fields, pd_fields, statistic: str = "max",
              masks=None, bins: int = 50, eps: float = 1e-8) -> float:
    """KL(GT || PD) between per-image statistics, shared-bin histograms."""
    if len(gt_fields) < 2 or len(pd_fields) < 2:
        raise ValueError("need at least 2 samples per set")
    if masks is None:
        masks = [None] * max(len(gt_fields), len(pd_fields))
    gt = np.array([_field_stat(f, m, statistic)
                   for f, m in zip(gt_fields, masks)])
    pd = np.array([_field_stat(f, m, statistic)
                   for f, m in zip(pd_fields, masks)])
    lo = min(gt.min(), pd.min())
    hi = max(gt.max(), pd.max())
    if lo == hi:
        raise ValueError("degenerate statistic range: all values identical")
    edges = np.linspace(lo, hi, bins + 1)
    p_counts = np.histogram(gt, bins=edges)[0].astype(np.float64)
    q_counts = np.histogram(pd, bins=edges)[0].astype(np.float64)
    p = (p_counts + eps) / (p_counts.sum() + bins * eps)
    q = (q_counts + eps) / (q_counts.sum() + bins * eps)
    return kl_divergence(p, q)


def line_cut(field: np.ndarray, p_start, p_end, n_points: int,
             grid: GridSpec) -> np.ndarray:
    """Bilinear profile of `field` at n equally spaced points (frame mm)."""
    field = np.squeeze(field)
    p0 = np.asarray(p_start, dtype=float)
    p1 = np.asarray(p_end, dtype=float)
    if np.allclose(p0, p1):
        raise ValueError("zero-length cut segment")
    for p in (p0, p1):
        if not (0.0 <= p[0] <= grid.frame_mm and 0.0 <= p[1] <= grid.frame_mm):
            raise ValueError(f"cut endpoint {p} outside the frame")
    t = np.linspace(0.0, 1.0, n_points)
    xy = p0[None, :] + t[:, None] * (p1 - p0)[None, :]
    # pixel-center coordinates: center of pixel j is at (j + 0.5) * pitch
    cols = xy[:, 0] / grid.pixel_mm - 0.5
    rows = xy[:, 1] / grid.pixel_mm - 0.5
    return ndimage.map_coordinates(field.astype(np.float64), [rows, cols],
                                   order=1, mode="nearest")


def evaluate(net: ResSEUNet, dataset: Dataset,
             batch: int = 20) -> dict[str, float]:
    """Mask-aware MSE and MRE of the network over a dataset."""
    kind = _target_kind(net.config.out_channels)
    x = dataset.inputs_array()
    y = dataset.targets_array(kind)
    masks = dataset.masks_array()
    preds = np.concatenate([net.predict(x[i:i + batch])
                            for i in range(0, len(x), batch)])
    m = np.broadcast_to(masks[:, None].astype(bool), preds.shape)
    return {"mse": float(np.square(preds[m] - y[m]).mean()),
            "mre": mre(preds, y, masks[:, None])}


# ---------------------------------------------------------------------------
# studies


@dataclass
class StudyRow:
    size: int
    seed: int
    mse: float
    mre: float


def size_study(train_pool: Dataset, test_set: Dataset, sizes,
               seeds=(0, 1, 2), epochs: int = 200, batch: int = 20,
               log_every: int | None = None) -> list[StudyRow]:
    """One thinning network per (size, seed), all scored on the same test set."""
    overlap = set(train_pool.ids()) & set(test_set.ids())
    if overlap:
        raise ValueError(f"train pool and test set share geometries: {overlap}")
    if any(s <= 0 for s in sizes):
        raise ValueError("study sizes must be positive")
    if max(sizes) > len(train_pool):
        raise ValueError("study size exceeds the training pool")
    from .network import NetConfig

    rows = []
    for size in sizes:
        for seed in seeds:
            pick = np.random.default_rng([seed, size]).choice(
                len(train_pool), size=size, replace=False)
            subset = Dataset([train_pool.samples[i] for i in sorted(pick)],
                             train_pool.manifest)
            net = ResSEUNet(NetConfig(resolution=train_pool.grid.n_pixels,
                                      out_channels=1), seed=seed)
            train(net, subset, test_set, epochs=epochs, batch=batch,
                  seed=seed, log_every=log_every)
            scores = evaluate(net, test_set, batch=batch)
            rows.append(StudyRow(size=size, seed=seed,
                                 mse=scores["mse"], mre=scores["mre"]))
    return rows


def summarize_study(rows: list[StudyRow]) -> list[dict]:
    """Per-size mean and standard deviation across seeds."""
    out = []
    for size in sorted({r.size for r in rows}):
        mses = [r.mse for r in rows if r.size == size]
        mres = [r.mre for r in rows if r.size == size]
        out.append({"size": size,
                    "mean_mse": float(np.mean(mses)),
                    "std_mse": float(np.std(mses)),
                    "mean_mre": float(np.mean(mres)),
                    "std_mre": float(np.std(mres))})
    return out


def write_study_csv(rows: list[StudyRow], path) -> None:
    with open(path, "w") as f:
        f.write("size,seed,mse,mre\n")
        for r in rows:
            f.write(f"{r.size},{r.seed},{r.mse:.9g},{r.mre:.9g}\n")


@dataclass
class SweepResult:
    images: np.ndarray      # (len(temps) * len(speeds), n, n) thinning
    metadata: list[dict] = field(default_factory=list)

    @property
    def field_range(self) -> float:
        return float(self.images.max() - self.images.min())


def speed_sweep(pv: ParameterVector, speeds, temps, net: ResSEUNet,
                grid: GridSpec, bounds: ParameterBounds = DEFAULT_BOUNDS,
                batch: int = 20) -> SweepResult:
    """Predicted thinning over a speed x temperature grid, all else fixed."""
    if net.config.out_channels != 1:
        raise ValueError("speed sweep needs a thinning (1-channel) network")
    if not speeds or not temps:
        raise ValueError("need at least one speed and one temperature")
    variants, meta = [], []
    for t_init in temps:
        for speed in speeds:
            variants.append(replace(pv, t_init=float(t_init),
                                    speed=float(speed)))
            meta.append({"t_init": float(t_init), "speed": float(speed)})
    stacks = np.stack([build_input_stack(v, grid, bounds).data
                       for v in variants])
    images = np.concatenate([net.predict(stacks[i:i + batch])
                             for i in range(0, len(stacks), batch)])[:, 0]
    return SweepResult(images=images, metadata=meta)
