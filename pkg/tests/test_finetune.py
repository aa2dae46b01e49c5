import numpy as np
import pytest

from mcbyol.autodiff import Tensor
from mcbyol.data import Dataset, make_clusters
from mcbyol.errors import ContractError, DataError
from mcbyol.finetune import (ClassifierHead, FineTuneConfig, finetune, load_member,
                             predict_logits, save_member, subset_labels)
from mcbyol.model import Architecture, init_twin, mlp_forward_np
from mcbyol.posterior import PosteriorEnsemble, collect

TINY = Architecture(input_dim=4, encoder_hidden=[6], embed_dim=3,
                    proj_hidden=3, proj_dim=2, pred_hidden=3)


def snapshot_for(seed=0):
    ens = PosteriorEnsemble(run_meta={})
    collect(ens, init_twin(TINY, seed), step=0, cycle=0, loss=0.0)
    return ens.snapshots[0]


def toy_labeled(n_per_class=50, classes=3, seed=0):
    return make_clusters(classes, n_per_class, 4, 4.0, seed=seed, split_tag="train")


# ---- subset selection -------------------------------------------------------


def test_full_fraction_preserves_original_order():
    ds = toy_labeled()
    sub = subset_labels(ds, 1.0, seed=0)
    assert np.array_equal(sub.x, ds.x) and np.array_equal(sub.y, ds.y)


def test_quarter_fraction_takes_25_per_class():
    ds = toy_labeled(n_per_class=100, classes=2)
    sub = subset_labels(ds, 0.25, seed=1)
    assert np.bincount(sub.y).tolist() == [25, 25]


def test_small_class_keeps_at_least_one():
    x = np.random.default_rng(0).normal(size=(105, 4))
    y = np.array([0] * 100 + [1] * 5)
    ds = Dataset(x=x, y=y, split_tag="train")
    sub = subset_labels(ds, 0.1, seed=2)
    counts = np.bincount(sub.y)
    assert counts[0] == 10 and counts[1] == 1


def test_subset_deterministic_under_seed():
    ds = toy_labeled()
    a = subset_labels(ds, 0.1, seed=5)
    b = subset_labels(ds, 0.1, seed=5)
    c = subset_labels(ds, 0.1, seed=6)
    assert np.array_equal(a.x, b.x)
    assert not np.array_equal(a.x, c.x)


def test_subset_counts_exact_for_label_fraction_sweep():
    # 0.1 of 1000 samples -> exactly 100, deterministic
    ds = toy_labeled(n_per_class=250, classes=4)
    sub = subset_labels(ds, 0.1, seed=3)
    assert sub.n == 100


def test_stratified_proportions_within_one_sample():
    ds = toy_labeled(n_per_class=97, classes=3)
    for frac in (0.5, 0.33, 0.2):
        sub = subset_labels(ds, frac, seed=4)
        for c in range(3):
            got = int((sub.y == c).sum())
            assert abs(got - frac * 97) <= 1.0


def test_subset_fraction_bounds():
    ds = toy_labeled()
    with pytest.raises(ContractError):
        subset_labels(ds, 0.0, seed=0)
    with pytest.raises(ContractError):
        subset_labels(ds, 1.5, seed=0)


def test_subset_requires_labels():
    ds = Dataset(x=np.zeros((4, 4)), y=None, split_tag="pretrain")
    with pytest.raises(DataError):
        subset_labels(ds, 0.5, seed=0)


# ---- fine-tuning ------------------------------------------------------------


def test_lr_zero_leaves_parameters_unchanged():
    snap = snapshot_for()
    ds = toy_labeled()
    cfg = FineTuneConfig(lr=0.0, momentum=0.9, batch=16, epochs=3)
    enc, head, _ = finetune(snap, ds, cfg, seed=0, arch=TINY)
    assert np.array_equal(enc.flatten(), snap.encoder_params.flatten())
    w0 = head.weight.values.copy()
    enc2, head2, _ = finetune(snap, ds, cfg, seed=0, arch=TINY)
    assert np.array_equal(head2.weight.values, w0)  # deterministic init, untouched


def test_finetune_does_not_mutate_snapshot():
    snap = snapshot_for(1)
    before = snap.encoder_params.flatten().copy()
    ds = toy_labeled()
    cfg = FineTuneConfig(lr=0.1, momentum=0.9, batch=32, epochs=5)
    finetune(snap, ds, cfg, seed=0, arch=TINY)
    assert np.array_equal(snap.encoder_params.flatten(), before)


def test_frozen_encoder_reaches_full_accuracy_on_separable_data():
    # tight input clusters stay tight through the fixed encoder, so the
    # embeddings are linearly separable by construction
    snap = snapshot_for(2)
    rng = np.random.default_rng(9)
    centers = rng.normal(size=(3, 4)) * 2.0
    x = np.concatenate([centers[c] + 0.01 * rng.normal(size=(40, 4)) for c in range(3)])
    y = np.repeat(np.arange(3), 40)
    ds = Dataset(x=x, y=y, split_tag="train")
    cfg = FineTuneConfig(lr=0.2, momentum=0.9, batch=20, epochs=80, freeze_encoder=True)
    enc, head, log = finetune(snap, ds, cfg, seed=1, arch=TINY)
    logits = predict_logits(enc, head, ds.x, TINY)
    train_acc = float((logits.argmax(axis=1) == ds.y).mean())
    assert train_acc == 1.0
    assert np.array_equal(enc.flatten(), snap.encoder_params.flatten())


def test_frozen_convex_loss_is_monotone_at_small_lr():
    snap = snapshot_for(3)
    ds = toy_labeled(n_per_class=30, classes=3, seed=10)
    cfg = FineTuneConfig(lr=1e-3, momentum=0.0, batch=1000, epochs=25, freeze_encoder=True)
    _, _, log = finetune(snap, ds, cfg, seed=2, arch=TINY)
    diffs = np.diff(np.asarray(log))
    assert np.all(diffs <= 1e-12)


def test_unfrozen_finetune_updates_encoder():
    snap = snapshot_for(4)
    ds = toy_labeled()
    cfg = FineTuneConfig(lr=0.05, momentum=0.9, batch=32, epochs=5, freeze_encoder=False)
    enc, _, _ = finetune(snap, ds, cfg, seed=3, arch=TINY)
    assert np.any(enc.flatten() != snap.encoder_params.flatten())


def test_label_out_of_range_rejected():
    snap = snapshot_for()
    x = np.zeros((4, 4))
    ds = Dataset(x=x, y=np.array([0, 1, 2, 3]), split_tag="train")
    cfg = FineTuneConfig(lr=0.1, epochs=1)
    with pytest.raises(DataError):
        finetune(snap, ds, cfg, seed=0, arch=TINY, num_classes=3)


# ---- prediction -------------------------------------------------------------


def test_zero_head_gives_uniform_softmax():
    from mcbyol.posterior import softmax
    snap = snapshot_for(5)
    head = ClassifierHead(weight=Tensor(np.zeros((3, 4))), bias=Tensor(np.zeros(4)))
    x = np.random.default_rng(1).normal(size=(5, 4))
    probs = softmax(predict_logits(snap.encoder_params, head, x, TINY))
    assert np.allclose(probs, 0.25)


def test_logits_match_manual_recomputation():
    rng = np.random.default_rng(2)
    snap = snapshot_for(6)
    head = ClassifierHead(weight=Tensor(rng.normal(size=(3, 5))),
                          bias=Tensor(rng.normal(size=(5,))))
    x = rng.normal(size=(7, 4))
    got = predict_logits(snap.encoder_params, head, x, TINY)
    z = mlp_forward_np(snap.encoder_params, x, "tanh")
    manual = np.empty((7, 5))
    for i in range(7):
        for j in range(5):
            manual[i, j] = float(z[i] @ head.weight.values[:, j]) + head.bias.values[j]
    assert np.allclose(got, manual, atol=1e-12)


def test_logits_batch_independence():
    rng = np.random.default_rng(3)
    snap = snapshot_for(7)
    head = ClassifierHead(weight=Tensor(rng.normal(size=(3, 2))),
                          bias=Tensor(rng.normal(size=(2,))))
    x = rng.normal(size=(6, 4))
    full = predict_logits(snap.encoder_params, head, x, TINY)
    row = predict_logits(snap.encoder_params, head, x[4:5], TINY)
    assert np.allclose(full[4], row[0], atol=1e-12)


# ---- member persistence -----------------------------------------------------


def test_member_roundtrip(tmp_path):
    rng = np.random.default_rng(4)
    snap = snapshot_for(8)
    head = ClassifierHead(weight=Tensor(rng.normal(size=(3, 4))),
                          bias=Tensor(rng.normal(size=(4,))))
    path = tmp_path / "member.ckpt"
    save_member(path, snap.encoder_params, head, {"seed": 1, "label_fraction": 0.5})
    enc2, head2, meta = load_member(path)
    assert np.array_equal(enc2.flatten(), snap.encoder_params.flatten())
    assert np.array_equal(head2.weight.values, head.weight.values)
    assert np.array_equal(head2.bias.values, head.bias.values)
    assert meta["label_fraction"] == 0.5
