import numpy as np
import pytest
from scipy.special import erf

from telepit import autograd as ag
from telepit.embedding import embed
from telepit.errors import CheckpointError, DataError
from telepit.griddata import Dataset, Field, SynthConfig, make_grid, synth_dataset
from telepit.model import (
    ModelConfig,
    TrainConfig,
    forward,
    init_model,
    load_checkpoint,
    loss,
    predict,
    read_checkpoint_header,
    save_checkpoint,
    train,
)
from telepit.multiscale import decompose
from telepit.numerics import make_rng
from telepit.physode import evolve
from telepit.teleattention import cross_scale_fuse, ta_block

FIXTURE = dict(C=3, H=8, W=12, D=16, L=1, n_heads=2, n_patterns=2)


def _model(seed=0, **kw):
    cfg = ModelConfig(**{**FIXTURE, **kw})
    return init_model(cfg, make_grid(cfg.H, cfg.W), make_rng(seed, "init"))


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def test_output_shapes(rng):
    for L, B in ((0, 1), (1, 2), (2, 3)):
        p = _model(L=L)
        Y1, Y2 = forward(rng.normal(size=(B, 3, 8, 12)), p)
        assert Y1.shape == Y2.shape == (B, 3, 8, 12)
    Y1, Y2 = forward(rng.normal(size=(3, 8, 12)), p)
    assert Y1.shape == Y2.shape == (3, 8, 12)


def test_zero_params_give_head_bias():
    p = _model()
    for _, t in p.named_parameters():
        t.data[...] = 0.0
    b2 = np.arange(2 * 3 * 12, dtype=np.float64)
    p.head.b2.data[:] = b2
    Y1, Y2 = forward(np.zeros((3, 8, 12)), p)
    rows = b2.reshape(2, 3, 12)
    assert np.array_equal(Y1.data, np.broadcast_to(rows[0][:, None, :], (3, 8, 12)))
    assert np.array_equal(Y2.data, np.broadcast_to(rows[1][:, None, :], (3, 8, 12)))


def test_composition_oracle(rng):
    p = _model(seed=3)
    x = rng.normal(size=(3, 8, 12))
    Z = embed(x, p.embedding)
    bands = decompose(Z, p.decomp)
    bands = [ta_block(evolve(b, o), a) for b, o, a in zip(bands, p.ode, p.attn)]
    z = cross_scale_fuse(bands, p.fusion).data
    h = p.head
    y = _gelu(z @ h.W1.data.T + h.b1.data) @ h.W2.data.T + h.b2.data  # (H, 2CW)
    want = np.empty((2, 3, 8, 12))
    for i in range(8):
        for k in range(2):
            for c in range(3):
                want[k, c, i] = y[i, (k * 3 + c) * 12 : (k * 3 + c + 1) * 12]
    Y1, Y2 = forward(x, p)
    assert np.allclose(Y1.data, want[0], atol=1e-12)
    assert np.allclose(Y2.data, want[1], atol=1e-12)


def test_forward_is_pure(rng):
    p = _model()
    x = rng.normal(size=(2, 3, 8, 12))
    a = forward(x, p)[0].data.copy()
    b = forward(x, p)[0].data
    assert np.array_equal(a, b)


def test_forward_shape_mismatch(rng):
    with pytest.raises(DataError):
        forward(rng.normal(size=(3, 8, 10)), _model())


def test_lambda_zero_matches_pathway_deleted(rng):
    p = _model(lam=0.0)
    for a in p.attn:
        a.P.data[:] = rng.normal(size=a.P.data.shape)
    x = rng.normal(size=(2, 3, 8, 12))
    for with_tele, without in zip(forward(x, p), forward(x, p, use_tele=False)):
        assert np.max(np.abs(with_tele.data - without.data)) <= 1e-10
    q = _model(lam=0.2)
    assert not np.allclose(forward(x, q)[0].data, forward(x, q, use_tele=False)[0].data, rtol=0, atol=1e-14)


def test_loss_examples(rng):
    t1, t2 = rng.normal(size=(3, 4, 5)), rng.normal(size=(3, 4, 5))
    T = lambda a: ag.Tensor(a)
    assert float(loss((T(t1), T(t2)), t1, t2).data) == 0.0
    assert float(loss((T(t1 + 1), T(t2 + 1)), t1, t2).data) == pytest.approx(1.0, abs=1e-14)
    y1 = t1.copy()
    y1[1, 2, 3] += 2.0
    assert float(loss((T(y1), T(t2)), t1, t2).data) == pytest.approx(4.0 / (2 * 60), abs=1e-15)
    with pytest.raises(DataError):
        loss((T(t1), T(t2)), t1[:, :3], t2)


def test_batch_loss_is_mean_over_samples(rng):
    t1, t2 = rng.normal(size=(2, 3, 4, 5)), rng.normal(size=(2, 3, 4, 5))
    y1, y2 = t1 + np.array([1.0, 3.0])[:, None, None, None], t2.copy()
    # per-sample losses 1/2 and 9/2
    assert float(loss((ag.Tensor(y1), ag.Tensor(y2)), t1, t2).data) == pytest.approx(2.5, abs=1e-14)


def _toy(n=24, H=6, W=8):
    return synth_dataset(SynthConfig(n_samples=n, H=H, W=W, train_frac=0.5, val_frac=0.25), make_rng(1, "data"))


def _tiny_train(**kw):
    base = dict(D=8, L=1, n_heads=2, n_patterns=2, epochs=2, batch_size=4, learning_rate=1e-3, seed=5)
    return TrainConfig(**{**base, **kw})


def test_lr_zero_leaves_params_unchanged():
    ds = _toy()
    two = Dataset(ds.inputs[:3], ds.target1[:3], ds.target2[:3],
                  np.array(["train", "train", "val"]), ds.grid, ds.var_names)
    cfg = _tiny_train(learning_rate=0.0, epochs=1)
    ref = init_model(cfg.model_config(3, 6, 8), ds.grid, make_rng(cfg.seed, "init"))
    params, history = train(two, cfg)
    for (k, a), (_, b) in zip(ref.named_parameters(), params.named_parameters()):
        assert a.data.tobytes() == b.data.tobytes(), k
    assert [h["epoch"] for h in history] == [0, 1]


def test_training_deterministic_and_improves():
    ds = _toy()
    p1, h1 = train(ds, _tiny_train(epochs=3))
    p2, h2 = train(ds, _tiny_train(epochs=3))
    assert h1 == h2
    for (_, a), (_, b) in zip(p1.named_parameters(), p2.named_parameters()):
        assert a.data.tobytes() == b.data.tobytes()
    assert min(h["val_loss"] for h in h1[1:]) < h1[0]["val_loss"]
    _, h3 = train(ds, _tiny_train(epochs=3, seed=6))
    assert h3 != h1


def test_returns_best_validation_params():
    ds = _toy()
    params, history = train(ds, _tiny_train(epochs=4, learning_rate=0.05))
    from telepit.model import mean_loss
    from telepit.griddata import normalize

    va = ds.subset("val")
    got = mean_loss(params, *(normalize(a, params.norm) for a in (va.inputs, va.target1, va.target2)))
    assert got == pytest.approx(min(h["val_loss"] for h in history), rel=1e-12)


def test_train_rejects_empty_split():
    ds = _toy()
    only = Dataset(ds.inputs[:4], ds.target1[:4], ds.target2[:4], np.array(["train"] * 4), ds.grid, ds.var_names)
    with pytest.raises(DataError):
        train(only, _tiny_train())


def test_predict_physical_units():
    ds = _toy()
    params, _ = train(ds, _tiny_train(epochs=1))
    f = Field(ds.inputs[0], ds.grid, ds.var_names)
    out = predict(f, params)
    assert out.week34.values.shape == (3, 6, 8)
    # denormalized output lives on the scale of the data, not of unit-variance noise
    assert np.all(np.abs(out.week34.values.mean(axis=(1, 2)) - ds.inputs[:, :].mean(axis=(0, 2, 3))) < 5 * ds.inputs.std(axis=(0, 2, 3)))


def test_checkpoint_round_trip(tmp_path, rng):
    p = _model(seed=2)
    ds = _toy(H=8, W=12)
    from telepit.griddata import compute_norm_stats

    p.norm = compute_norm_stats(ds.subset("train"))
    path = tmp_path / "m.tpck"
    save_checkpoint(p, path, extra={"note": "x"})
    assert path.read_bytes()[:4] == b"TPCK"
    q = load_checkpoint(path, expected=p.config)
    x = rng.normal(size=(2, 3, 8, 12))
    for a, b in zip(forward(x, p), forward(x, q)):
        assert a.data.tobytes() == b.data.tobytes()
    assert np.array_equal(q.norm.mean, p.norm.mean)
    hdr = read_checkpoint_header(path)
    assert hdr["fingerprint"] == p.config.fingerprint() and hdr["extra"] == {"note": "x"}


def test_checkpoint_config_mismatch(tmp_path):
    p = _model()
    path = tmp_path / "m.tpck"
    save_checkpoint(p, path)
    with pytest.raises(CheckpointError, match="does not match"):
        load_checkpoint(path, expected=ModelConfig(**{**FIXTURE, "D": 32}))


def test_checkpoint_truncated(tmp_path):
    p = _model()
    path = tmp_path / "m.tpck"
    save_checkpoint(p, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(CheckpointError, match="truncated checkpoint"):
        load_checkpoint(path)
    path.write_bytes(blob[:10])
    with pytest.raises(CheckpointError, match="truncated checkpoint"):
        load_checkpoint(path)


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "m.tpck"
    path.write_bytes(b"XXXX" + bytes(40))
    with pytest.raises(CheckpointError, match="not a TPCK"):
        load_checkpoint(path)


def test_parameter_names_cover_all_groups():
    names = [k for k, _ in _model(L=2).named_parameters()]
    assert len(names) == len(set(names))
    for prefix in ("embedding.", "decomp.1.", "ode.2.", "attn.2.P", "fusion.1.", "head.W2"):
        assert any(n.startswith(prefix) for n in names), prefix
