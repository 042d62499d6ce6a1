import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from formcast import engine as eg
from formcast.io_formats import load_checkpoint
from formcast.network import NetConfig, ResSEUNet
from formcast.params import ParameterVector
from formcast.raster_in import GridSpec
from formcast.train_eval import (
    Dataset,
    Sample,
    StudyRow,
    TrainRun,
    evaluate,
    generate_dataset,
    kl_divergence,
    kld_stats,
    line_cut,
    load_dataset,
    mae_max,
    make_sample,
    mre,
    save_dataset,
    size_study,
    speed_sweep,
    split,
    summarize_study,
    train,
    write_study_csv,
)

MID_PV = ParameterVector(r_die=15.0, r_punch=15.0, r_plan=90.0,
                         h_design=90.0, a_scale=1.0, b_scale=0.6,
                         t_spacer=6.0, t_init=425.0, speed=275.0)


def _toy_dataset(n, res=8, seed=0, learnable=False):
    """Synthetic samples with the right shapes (no oracle run)."""
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        inputs = rng.uniform(0.0, 1.0, (4, res, res)).astype(np.float32)
        if learnable:
            thin = (0.1 * inputs[:1] ** 2).astype(np.float32)
        else:
            thin = rng.uniform(-0.2, 0.3, (1, res, res)).astype(np.float32)
        disp = rng.uniform(-0.5, 0.5, (3, res, res)).astype(np.float32)
        mask = np.ones((res, res), dtype=np.uint8)
        mask[0, :] = 0
        samples.append(Sample(sample_id=f"s{i:05d}", params=MID_PV,
                              inputs=inputs, thinning=thin,
                              displacement=disp, mask=mask, flagged=False))
    manifest = {"grid": {"n_pixels": res, "frame_mm": 740.0}, "samples": []}
    return Dataset(samples, manifest)


@pytest.fixture(scope="module")
def oracle_dataset():
    return generate_dataset(6, seed=11, grid=GridSpec(32, 740.0))


# ---------------------------------------------------------------------------
# dataset plumbing


def test_duplicate_ids_rejected():
    ds = _toy_dataset(2)
    dup = [ds.samples[0], ds.samples[0]]
    with pytest.raises(ValueError):
        Dataset(dup, ds.manifest)


def test_generated_manifest_fields(oracle_dataset):
    m = oracle_dataset.manifest
    for key in ("version", "grid", "bounds", "normalization",
                "clip_thresholds", "oracle_config", "seed", "samples"):
        assert key in m
    assert len(m["samples"]) == 6
    ids = [e["id"] for e in m["samples"]]
    assert len(set(ids)) == 6
    assert m["clip_thresholds"] == {"c1": 0.40, "c2": -0.40}
    for entry in m["samples"]:
        assert set(entry) == {"id", "params", "flagged"}
        assert len(entry["params"]) == 9


def test_generated_samples_are_consistent(oracle_dataset):
    for s in oracle_dataset.samples:
        assert s.inputs.shape == (4, 32, 32)
        assert s.thinning.shape == (1, 32, 32)
        assert s.displacement.shape == (3, 32, 32)
        assert s.inputs.dtype == np.float32
        # off-mask pixels carry no signal
        off = s.mask == 0
        assert np.all(s.thinning[0][off] == 0.0)
        assert np.all(s.inputs[:, off] == 0.0)


def test_dataset_roundtrip(tmp_path, oracle_dataset):
    save_dataset(oracle_dataset, tmp_path / "ds")
    back = load_dataset(tmp_path / "ds")
    assert back.ids() == oracle_dataset.ids()
    assert back.manifest == oracle_dataset.manifest
    for a, b in zip(back.samples, oracle_dataset.samples):
        assert np.array_equal(a.inputs, b.inputs)
        assert np.array_equal(a.thinning, b.thinning)
        assert np.array_equal(a.displacement, b.displacement)
        assert np.array_equal(a.mask, b.mask)
        assert a.params == b.params


def test_load_missing_manifest(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "nowhere")


def test_split_sizes():
    ds = _toy_dataset(20)
    train_set, test_set = split(ds, test_frac=0.1, seed=0)
    assert (len(train_set), len(test_set)) == (18, 2)
    # the paper-scale ratio: 1800 -> 1620/180
    assert round(0.1 * 1800) == 180


def test_split_errors():
    ds = _toy_dataset(5)
    with pytest.raises(ValueError):
        split(ds, test_frac=0.0)
    with pytest.raises(ValueError):
        split(ds, test_frac=1.0)
    with pytest.raises(ValueError):
        split(Dataset([], ds.manifest), test_frac=0.1)


def test_split_deterministic():
    ds = _toy_dataset(30)
    a = split(ds, 0.2, seed=5)
    b = split(ds, 0.2, seed=5)
    assert a[0].ids() == b[0].ids() and a[1].ids() == b[1].ids()
    c = split(ds, 0.2, seed=6)
    assert c[1].ids() != a[1].ids()


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=2, max_value=60),
       st.floats(min_value=0.05, max_value=0.95),
       st.integers(min_value=0, max_value=10))
def test_split_disjoint_exhaustive(n, frac, seed):
    ds = _toy_dataset(n)
    train_set, test_set = split(ds, test_frac=frac, seed=seed)
    tr, te = set(train_set.ids()), set(test_set.ids())
    assert tr.isdisjoint(te)
    assert tr | te == set(ds.ids())
    assert len(te) == int(round(frac * n))


# ---------------------------------------------------------------------------
# training


def test_train_empty_set_rejected():
    ds = _toy_dataset(4)
    net = ResSEUNet(NetConfig(resolution=8, out_channels=1), seed=0)
    with pytest.raises(ValueError):
        train(net, Dataset([], ds.manifest), ds, epochs=1)


def test_train_resolution_mismatch():
    ds = _toy_dataset(4, res=8)
    net = ResSEUNet(NetConfig(resolution=16, out_channels=1), seed=0)
    with pytest.raises(ValueError):
        train(net, ds, ds, epochs=1)


def test_train_run_invariant():
    with pytest.raises(ValueError):
        TrainRun(train_losses=[1.0, 0.5], test_losses=[1.0],
                 wall_time_s=0.0, checkpoint_path=None, config={})


def test_train_reduces_loss_and_records_history():
    ds = _toy_dataset(6, learnable=True, seed=1)
    net = ResSEUNet(NetConfig(resolution=8, out_channels=1), seed=0)
    before = evaluate(net, ds)["mse"]
    run = train(net, ds, ds, epochs=5, batch=3, seed=0)
    assert run.epochs_run == 5
    assert len(run.train_losses) == len(run.test_losses) == 5
    assert run.train_losses[-1] < run.train_losses[0]
    assert evaluate(net, ds)["mse"] < before


def test_train_deterministic_given_seed():
    ds = _toy_dataset(5, learnable=True, seed=2)
    runs = []
    for _ in range(2):
        net = ResSEUNet(NetConfig(resolution=8, out_channels=1), seed=3)
        runs.append(train(net, ds, ds, epochs=3, batch=2, seed=7))
    assert runs[0].train_losses == runs[1].train_losses
    assert runs[0].test_losses == runs[1].test_losses


def test_train_displacement_head():
    ds = _toy_dataset(4, seed=3)
    net = ResSEUNet(NetConfig(resolution=8, out_channels=3), seed=0)
    run = train(net, ds, ds, epochs=2, batch=2, seed=0)
    assert run.epochs_run == 2


def test_train_checkpoint_and_resume(tmp_path):
    ds = _toy_dataset(6, learnable=True, seed=4)
    path = tmp_path / "best.fqt"

    net_a = ResSEUNet(NetConfig(resolution=8, out_channels=1), seed=5)
    opt_a = eg.Adam(net_a.params())
    run_a = train(net_a, ds, ds, epochs=4, batch=3, seed=9,
                  checkpoint_path=path, optimizer=opt_a)
    assert path.exists()

    # uninterrupted continuation with the same optimizer state
    run_b = train(net_a, ds, ds, epochs=2, batch=3, seed=9,
                  optimizer=opt_a, start_epoch=4)

    # resume from the checkpoint written at the best (= last) epoch
    assert run_a.best_epoch == 3
    net_c, opt_c, extra = load_checkpoint(path)
    assert extra["epoch"] == 3
    run_c = train(net_c, ds, ds, epochs=2, batch=3, seed=9,
                  optimizer=opt_c, start_epoch=4)
    assert run_c.train_losses[0] == pytest.approx(run_b.train_losses[0],
                                                  abs=1e-6)


def test_train_loss_smoothed_monotone():
    ds = _toy_dataset(4, learnable=True, seed=6)
    net = ResSEUNet(NetConfig(resolution=8, out_channels=1), seed=1)
    run = train(net, ds, ds, epochs=40, batch=4, seed=0)
    smooth = np.convolve(run.train_losses, np.ones(10) / 10, mode="valid")
    assert np.all(np.diff(smooth) <= 1e-6)


def test_train_run_json_export(tmp_path):
    ds = _toy_dataset(3, seed=7)
    net = ResSEUNet(NetConfig(resolution=8, out_channels=1), seed=0)
    run = train(net, ds, ds, epochs=2, batch=3, seed=0)
    out = tmp_path / "run.json"
    run.export_json(out)
    import json
    data = json.loads(out.read_text())
    assert len(data["train_losses"]) == 2
    assert data["config"]["resolution"] == 8


# ---------------------------------------------------------------------------
# metrics


def test_mae_max_examples():
    mask = np.ones((2, 2), dtype=np.uint8)
    pd = np.array([[0.30, 0.1], [0.0, 0.0]])
    gt = np.array([[0.25, 0.2], [0.0, 0.0]])
    assert mae_max(pd, gt, mask) == pytest.approx(0.05)
    assert mae_max(gt, gt, mask) == 0.0
    assert mae_max(pd, gt, mask) == mae_max(gt, pd, mask)


def test_mae_max_is_mask_aware():
    mask = np.array([[1, 0], [1, 1]], dtype=np.uint8)
    pd = np.array([[0.1, 9.9], [0.2, 0.3]])
    gt = np.array([[0.1, -9.9], [0.2, 0.3]])
    assert mae_max(pd, gt, mask) == 0.0
    with pytest.raises(ValueError):
        mae_max(pd, gt, np.zeros_like(mask))


def test_mre_examples():
    mask = np.ones(2, dtype=np.uint8)
    y = np.array([1.0, 1.0])
    yh = np.array([1.1, 0.9])
    assert mre(yh, y, mask) == pytest.approx(0.1)
    assert mre(y, y, mask) == 0.0
    assert mre(5 * yh, 5 * y, mask) == pytest.approx(mre(yh, y, mask))
    with pytest.raises(ValueError):
        mre(yh, np.zeros(2), mask)


def test_metrics_ignore_padding():
    mask = np.array([[1, 1], [0, 0]], dtype=np.uint8)
    y = np.array([[1.0, 2.0], [100.0, -100.0]])
    yh = np.array([[1.0, 2.0], [-50.0, 50.0]])
    assert mre(yh, y, mask) == 0.0


def test_kl_divergence_two_bin_example():
    got = kl_divergence([0.5, 0.5], [0.25, 0.75])
    assert got == pytest.approx(0.5 * np.log(4.0 / 3.0), abs=1e-12)


def test_kld_identity_exact_zero():
    rng = np.random.default_rng(0)
    fields = [rng.uniform(-0.3, 0.3, (1, 8, 8)) for _ in range(20)]
    assert kld_stats(fields, fields, "max") == 0.0
    assert kld_stats(fields, fields, "mean") == 0.0


def test_kld_disjoint_large_but_finite():
    lo = [np.full((4, 4), v) for v in np.linspace(0.0, 0.1, 10)]
    hi = [np.full((4, 4), v) for v in np.linspace(0.9, 1.0, 10)]
    d = kld_stats(lo, hi, "mean")
    assert np.isfinite(d)
    assert d > 5.0


def test_kld_errors():
    f = [np.ones((2, 2)), np.ones((2, 2))]
    with pytest.raises(ValueError):
        kld_stats(f[:1], f[:1], "max")          # < 2 samples
    with pytest.raises(ValueError):
        kld_stats(f, f, "max")                   # degenerate range
    g = [np.zeros((2, 2)), np.ones((2, 2))]
    with pytest.raises(ValueError):
        kld_stats(g, g, "median")                # unknown statistic


def test_kld_respects_masks():
    rng = np.random.default_rng(1)
    fields = [rng.uniform(0, 1, (4, 4)) for _ in range(5)]
    masks = [np.ones((4, 4), dtype=np.uint8) for _ in range(5)]
    noisy = [f.copy() for f in fields]
    for m, f in zip(masks, noisy):
        m[0, 0] = 0
        f[0, 0] = 99.0  # hidden by the mask
    assert kld_stats(fields, fields, "max", masks=masks) == 0.0
    assert kld_stats(noisy, noisy, "max", masks=masks) == 0.0


def test_line_cut_constant_and_row():
    grid = GridSpec(16, 740.0)
    const = np.full((16, 16), 2.5)
    prof = line_cut(const, (10.0, 10.0), (700.0, 700.0), 11, grid)
    assert np.allclose(prof, 2.5)

    rng = np.random.default_rng(2)
    field = rng.uniform(size=(16, 16))
    row = 5
    y = (row + 0.5) * grid.pixel_mm
    x0 = 0.5 * grid.pixel_mm
    x1 = 15.5 * grid.pixel_mm
    prof = line_cut(field, (x0, y), (x1, y), 16, grid)
    assert np.allclose(prof, field[row], atol=1e-6)


def test_line_cut_errors():
    grid = GridSpec(16, 740.0)
    f = np.zeros((16, 16))
    with pytest.raises(ValueError):
        line_cut(f, (10.0, 10.0), (10.0, 10.0), 5, grid)
    with pytest.raises(ValueError):
        line_cut(f, (-5.0, 10.0), (100.0, 10.0), 5, grid)


def test_line_cut_wrinkled_diagonal_peaks():
    from scipy.signal import find_peaks
    pv = ParameterVector(r_die=25.0, r_punch=20.0, r_plan=120.0,
                         h_design=60.0, a_scale=1.0, b_scale=0.6,
                         t_spacer=10.0, t_init=480.0, speed=100.0)
    grid = GridSpec(64, 740.0)
    sample = make_sample("w", pv, grid, seed=1)
    # diagonal cut running tangentially across the plan-corner wrinkle band
    t = (500.0 - pv.r_plan) + (pv.r_plan + 12.0) / np.sqrt(2.0)
    prof = line_cut(sample.thinning[0], (t - 110.0, t + 110.0),
                    (t + 110.0, t - 110.0), 250, grid)
    peaks, _ = find_peaks(prof, prominence=0.01)
    assert len(peaks) >= 3


# ---------------------------------------------------------------------------
# studies


def test_size_study_guards():
    pool = _toy_dataset(6)
    test_set = _toy_dataset(2, seed=9)
    overlapping = Dataset(pool.samples[:2], pool.manifest)
    with pytest.raises(ValueError):
        size_study(pool, overlapping, sizes=[2])
    with pytest.raises(ValueError):
        size_study(pool, test_set, sizes=[0, 2])
    with pytest.raises(ValueError):
        size_study(pool, test_set, sizes=[10])


def test_size_study_rows_and_csv(tmp_path):
    pool = _toy_dataset(4, learnable=True, seed=10)
    test_samples = _toy_dataset(2, learnable=True, seed=11).samples
    for i, s in enumerate(test_samples):
        s.sample_id = f"t{i:05d}"
    test_set = Dataset(test_samples, pool.manifest)
    rows = size_study(pool, test_set, sizes=[2, 4], seeds=(0,), epochs=2)
    assert [(r.size, r.seed) for r in rows] == [(2, 0), (4, 0)]
    path = tmp_path / "study.csv"
    write_study_csv(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "size,seed,mse,mre"
    assert len(lines) == 3


def test_summarize_study():
    rows = [StudyRow(8, 0, 2.0, 0.2), StudyRow(8, 1, 4.0, 0.4),
            StudyRow(16, 0, 1.0, 0.1), StudyRow(16, 1, 1.0, 0.1)]
    summary = summarize_study(rows)
    assert [s["size"] for s in summary] == [8, 16]
    assert summary[0]["mean_mse"] == pytest.approx(3.0)
    assert summary[0]["std_mse"] == pytest.approx(1.0)
    assert summary[1]["std_mse"] == 0.0


def test_speed_sweep_ordering_and_reversal():
    grid = GridSpec(16, 740.0)
    net = ResSEUNet(NetConfig(resolution=16, out_channels=1), seed=0)
    speeds = list(np.linspace(50.0, 500.0, 4))
    fwd = speed_sweep(MID_PV, speeds, [350.0, 500.0], net, grid)
    assert fwd.images.shape == (8, 16, 16)
    assert [m["t_init"] for m in fwd.metadata[:4]] == [350.0] * 4
    assert [m["speed"] for m in fwd.metadata[:4]] == speeds

    rev = speed_sweep(MID_PV, speeds[::-1], [350.0, 500.0], net, grid)
    assert np.array_equal(rev.images[:4], fwd.images[:4][::-1])
    assert np.array_equal(rev.images[4:], fwd.images[4:][::-1])


def test_speed_sweep_guards():
    grid = GridSpec(16, 740.0)
    net3 = ResSEUNet(NetConfig(resolution=16, out_channels=3), seed=0)
    with pytest.raises(ValueError):
        speed_sweep(MID_PV, [100.0], [350.0], net3, grid)
    net1 = ResSEUNet(NetConfig(resolution=16, out_channels=1), seed=0)
    with pytest.raises(ValueError):
        speed_sweep(MID_PV, [], [350.0], net1, grid)
