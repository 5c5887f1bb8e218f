"""Acceptance suite: one test per release criterion, one printed verdict each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the verdict lines.
The desk benchmark (criterion 7) trains 3 modes x 5 seeds and takes a few
minutes; everything else is fast.
"""

import time

import numpy as np
import pytest

from mtda import autodiff as ad
from mtda import tsne
from mtda.audio import (
    CLIP_SAMPLES,
    LOG_FLOOR,
    N_MELS,
    TARGET_RATE,
    AudioClip,
    band_center_freqs,
    logmel,
)
from mtda.geometry import DomainEntry, assign_indices, domain_distance
from mtda.models import (
    Batch,
    Mode,
    ModelConfig,
    AdversarialModel,
    conditional_mean_oracle,
    dann_domain_loss,
    domain_loss_for_mode,
    feature_objective,
    forward,
    plain_domain_ce,
    scene_loss,
    weighted_domain_ce,
)
from mtda.synth import SynthConfig, make_dataset
from mtda.training import TrainConfig, compute_index_table, evaluate, train

from gradcheck import check_op, numerical_grad


def verdict(n, ok, text):
    print(f"\nACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} - {text}")
    assert ok, f"criterion {n} failed: {text}"


# ---------------------------------------------------------------------------
# shared synthetic data


BENCH_DEVICES = [("A", 0.0), ("B", 0.2), ("C", 0.6), ("D", 1.2)]


@pytest.fixture(scope="module")
def benchmark_dataset(tmp_path_factory):
    """1 source + 3 targets, 10 classes; shared by criteria 6 and 7."""
    cfg = SynthConfig(
        n_classes=10,
        devices=BENCH_DEVICES,
        samples_per_device_per_class=32,
        parallel_fraction=0.5,
        seed=1234,
    )
    rows = make_dataset(cfg, tmp_path_factory.mktemp("bench"))
    return cfg, rows


def test_criterion_1_gradient_suite():
    start = time.monotonic()
    rng = np.random.default_rng(7)
    for trial in range(100):
        kind = trial % 6
        if kind == 0:
            n, a, b = rng.integers(1, 4), rng.integers(1, 5), rng.integers(1, 5)
            check_op(
                lambda x, w, bias: ad.mse_loss(ad.dense(x, w, bias), np.zeros((n, b))),
                [rng.normal(size=(n, a)), rng.normal(size=(a, b)), rng.normal(size=b)],
            )
        elif kind == 1:
            n, c, f = rng.integers(1, 3), rng.integers(1, 3), rng.integers(1, 3)
            h = int(rng.integers(3, 6))
            check_op(
                lambda x, k: ad.mse_loss(ad.global_avg_pool(ad.conv2d(x, k)), np.zeros((n, f))),
                [rng.normal(size=(n, c, h, h)), rng.normal(size=(f, c, 3, 3))],
            )
        elif kind == 2:
            n, k = int(rng.integers(2, 5)), int(rng.integers(2, 6))
            onehot = np.eye(k)[rng.integers(0, k, size=n)]
            weights = rng.uniform(0.0, 2.0, size=n)
            check_op(
                lambda logits: ad.softmax_cross_entropy(logits, onehot, weights),
                [rng.normal(size=(n, k))],
            )
        elif kind == 3:
            n, c = int(rng.integers(1, 3)), int(rng.integers(1, 3))
            h = int(rng.integers(4, 7))
            target = rng.normal(size=(n, c, h // 2, h // 2))
            check_op(lambda x, t=target: ad.mse_loss(ad.avg_pool2(ad.relu(x)), t), [rng.normal(size=(n, c, h, h))])
        elif kind == 4:
            n, k = int(rng.integers(2, 5)), int(rng.integers(2, 5))
            target = rng.normal(size=(n, k))
            check_op(lambda x, t=target: ad.mse_loss(ad.softmax(x), t), [rng.normal(size=(n, k))])
        else:
            # t-SNE KL gradient against central differences on the map
            n = int(rng.integers(4, 7))
            p = tsne.affinities(rng.normal(size=(n, 3)), perplexity=2.0)
            y = rng.normal(size=(n, 2))
            analytic = tsne.kl_gradient(p, y)
            numeric = numerical_grad(lambda yy: tsne.kl_divergence(p, yy), y)
            np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-8)
    elapsed = time.monotonic() - start
    verdict(1, elapsed < 60.0, f"100 finite-difference trials passed in {elapsed:.1f}s (< 60s)")


def test_criterion_2_optimal_discriminator_theorem():
    # 4 discrete z values, known Bernoulli d distribution per z; a per-z
    # constant discriminator trained on squared error must converge to the
    # conditional mean.
    rng = np.random.default_rng(8)
    z_vals = [0, 1, 2, 3]
    samples = []
    for z in z_vals:
        p = rng.uniform(0.1, 0.9)
        for _ in range(50):
            d = [1.0, 0.0] if rng.uniform() < p else [0.0, 1.0]
            samples.append((z, d))
    oracle = conditional_mean_oracle(samples)

    table = {z: np.zeros(2) for z in z_vals}
    for _ in range(2000):
        grads = {z: np.zeros(2) for z in z_vals}
        counts = {z: 0 for z in z_vals}
        for z, d in samples:
            grads[z] += 2 * (table[z] - np.asarray(d))
            counts[z] += 1
        for z in z_vals:
            table[z] -= 0.05 * grads[z] / counts[z]
    worst = max(np.abs(table[z] - oracle[z]).max() for z in z_vals)
    verdict(2, worst < 1e-3, f"MSE-trained discriminator matches conditional mean (max err {worst:.1e})")


def test_criterion_3_pathology_and_remedy():
    # (a) equal label + equal output -> identical gradient rows under the
    # binary squared-error domain loss, however different the true shifts are
    pred = ad.Tensor(np.array([[0.3, 0.7], [0.3, 0.7], [0.9, 0.1]]), requires_grad=True)
    labels = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    ad.backward(dann_domain_loss(pred, labels))
    pathological = np.array_equal(pred.grad[0], pred.grad[1]) and np.any(pred.grad[2] != pred.grad[0])

    # (b) index weighting scales each sample's logit gradient by exactly
    # (u+1)/T relative to plain CE
    rng = np.random.default_rng(3)
    logits_val = rng.normal(size=(1, 4))
    d = np.eye(4)[[2]]
    exact = True
    for u in (0, 3, 7, 9):
        lt = ad.Tensor(logits_val.copy(), requires_grad=True)
        ad.backward(weighted_domain_ce(lt, d, np.array([u]), t=10.0))
        lt2 = ad.Tensor(logits_val.copy(), requires_grad=True)
        ad.backward(plain_domain_ce(lt2, d))
        exact = exact and np.array_equal(lt.grad, (u + 1) / 10.0 * lt2.grad)
    verdict(3, pathological and exact, "binary-loss gradient collapse shown; (u+1)/T scaling exact at 64-bit")


def test_criterion_4_loss_identities():
    rng = np.random.default_rng(12)
    # (a) all u = T-1 -> weighted CE equals plain CE exactly
    logits = rng.normal(size=(5, 4))
    d = np.eye(4)[[0, 1, 2, 3, 1]]
    a = float(weighted_domain_ce(ad.Tensor(logits), d, np.full(5, 9), t=10.0).value)
    b = float(plain_domain_ce(ad.Tensor(logits), d).value)
    identity_a = a == b

    # (b) reversal-based training gradients equal the explicit
    # L_y - lambda * L_d objective on a paired graph
    lam = 2.0
    model = AdversarialModel.initialize(
        ModelConfig(n_classes=5, n_domains=4, mode=Mode.MTDA_C1), seed=0, dtype=np.float64
    )
    u = np.array([0, 0, 1, 2, 3, 1])
    batch = Batch(
        x=rng.normal(size=(6, 1, 16, 16)),
        y_onehot=np.eye(5)[rng.integers(0, 5, 6)],
        d_onehot=np.eye(4)[u],
        u=u,
        source_mask=u == 0,
    )
    fwd = forward(model, batch.x, lambda_d=lam)
    ad.backward(
        scene_loss(fwd.y_logits, batch.y_onehot, batch.source_mask)
        + domain_loss_for_mode(Mode.MTDA_C1, fwd, batch)
    )
    fwd2 = forward(model, batch.x, lambda_d=0.0)
    d_hidden = ad.relu(ad.dense(fwd2.z, fwd2.leaves["d/w1"], fwd2.leaves["d/b1"]))
    d_out = ad.dense(d_hidden, fwd2.leaves["d/w2"], fwd2.leaves["d/b2"])
    ad.backward(
        feature_objective(
            scene_loss(fwd2.y_logits, batch.y_onehot, batch.source_mask),
            plain_domain_ce(d_out, batch.d_onehot),
            lam,
        )
    )
    identity_b = all(
        np.allclose(fwd.leaves[k].grad, fwd2.leaves[k].grad, rtol=1e-12, atol=1e-15)
        for k in model.params
        if k.startswith("f/")
    )

    # (c) lambda = 0 reduces F and C updates to supervised-only, bit-identical
    fwd3 = forward(model, batch.x, lambda_d=0.0)
    ad.backward(
        scene_loss(fwd3.y_logits, batch.y_onehot, batch.source_mask)
        + plain_domain_ce(fwd3.d_out, batch.d_onehot)
    )
    fwd4 = forward(model, batch.x, lambda_d=0.0)
    ad.backward(scene_loss(fwd4.y_logits, batch.y_onehot, batch.source_mask))
    identity_c = all(
        fwd3.leaves[k].grad.tobytes() == fwd4.leaves[k].grad.tobytes()
        for k in model.params
        if not k.startswith("d/")
    )
    verdict(4, identity_a and identity_b and identity_c, "u=T-1 / paired-graph / lambda=0 identities hold")


def test_criterion_5_domain_distance_oracle():
    pairs = [(np.array([0.0, 0.0]), np.array([0.0, 1.0])), (np.array([2.0, 0.0]), np.array([2.0, 2.0]))]
    hand = domain_distance(pairs) == 1.5

    rng = np.random.default_rng(5)
    invariant = True
    for _ in range(50):
        devices = [f"d{i}" for i in range(rng.integers(2, 6))]
        dists = {d: float(rng.uniform(0.1, 5.0)) for d in devices}
        base = assign_indices(dists, source_device="src")
        scale = float(rng.uniform(0.1, 10.0))
        scaled = assign_indices({d: v * scale for d, v in dists.items()}, source_device="src")
        invariant = invariant and all(base[d].index == scaled[d].index for d in base)
    # tie rule: equal distances rank by device id
    tied = assign_indices({"zeta": 1.0, "alpha": 1.0}, source_device="s")
    tie_ok = tied["alpha"].index == 1 and tied["zeta"].index == 2
    verdict(5, hand and invariant and tie_ok, "hand distance 1.5 exact; ranking invariants hold on random tables")


def test_criterion_6_index_recovery_pinned_seeds(tmp_path_factory):
    # Pinned seed list, recorded once from the first verified run.
    cfg = SynthConfig(
        n_classes=10,
        devices=BENCH_DEVICES,
        samples_per_device_per_class=8,
        parallel_fraction=0.5,
        seed=2024,
    )
    rows = make_dataset(cfg, tmp_path_factory.mktemp("c6"))
    pinned_seeds = (0, 1, 2, 3, 4)
    ok = True
    for seed in pinned_seeds:
        table = compute_index_table(rows, seed=seed, tsne_iters=400)
        order = sorted(table, key=lambda d: table[d].index)
        ok = ok and order == ["A", "B", "C", "D"]
    verdict(6, ok, f"index order A<B<C<D recovered for magnitudes (0.2, 0.6, 1.2), seeds {pinned_seeds}")


def test_criterion_7_desk_benchmark(benchmark_dataset):
    # 1 source + 3 targets, 10 classes, <= 20 epochs, 5 pinned seeds.
    # MTDA-C2 and MTDA-R must each reach hardest-domain (device D) accuracy
    # >= the DANN baseline under the identical config and seeds. The absolute
    # floors below were recorded from the first calibrated run and act as
    # non-regression bounds; training is fully seeded, so they are stable.
    start = time.monotonic()
    _, rows = benchmark_dataset
    index_table = {
        "A": DomainEntry(0.0, 0),
        "B": DomainEntry(0.2, 1),
        "C": DomainEntry(0.6, 2),
        "D": DomainEntry(1.2, 3),
    }
    seeds = (0, 1, 2, 3, 4)
    hardest = "D"
    means = {}
    for mode in ("dann", "mtda-c2", "mtda-r"):
        accs = []
        for seed in seeds:
            cfg = TrainConfig(mode=mode, lambda_d=1.0, epochs=20, seed=seed, normalize_index=True)
            result = train(cfg, rows, index_table)
            report = evaluate(result.model, rows)
            accs.append(report.per_device[hardest]["accuracy"])
        means[mode] = float(np.mean(accs))
    elapsed = time.monotonic() - start

    floors = {"dann": 0.29, "mtda-c2": 0.42, "mtda-r": 0.33}
    directional = means["mtda-c2"] >= means["dann"] and means["mtda-r"] >= means["dann"]
    bounded = all(means[m] >= floors[m] for m in means)
    verdict(
        7,
        directional and bounded and elapsed < 600.0,
        f"hardest-domain acc dann={means['dann']:.3f} mtda-c2={means['mtda-c2']:.3f} "
        f"mtda-r={means['mtda-r']:.3f}; both >= dann; {elapsed:.0f}s < 600s",
    )


def test_criterion_8_frontend_contract():
    silence = AudioClip(samples=np.zeros(CLIP_SAMPLES), sample_rate=TARGET_RATE)
    feats = logmel(silence).frames
    shape_ok = feats.shape == (638, N_MELS)
    floor_ok = np.allclose(feats, np.log(LOG_FLOOR))

    centers = band_center_freqs()
    t = np.arange(CLIP_SAMPLES) / TARGET_RATE
    peaks_ok = True
    for band in (5, 20, 40):
        tone = AudioClip(samples=0.5 * np.sin(2 * np.pi * centers[band] * t), sample_rate=TARGET_RATE)
        profile = logmel(tone).frames.mean(axis=0)
        peaks_ok = peaks_ok and abs(int(np.argmax(profile)) - band) <= 1
    verdict(8, shape_ok and floor_ok and peaks_ok, "638x64 shape, log-floor silence, sine peaks at band centers")


def test_criterion_9_tsne_contract():
    rng = np.random.default_rng(17)
    x = rng.normal(size=(30, 5))
    perplexity = 8.0
    p = tsne.affinities(x, perplexity)
    sym_ok = np.allclose(p, p.T, atol=1e-12) and abs(p.sum() - 1.0) < 1e-9

    sq = tsne.pairwise_sq_distances(x)
    perp_ok = True
    for i in range(len(x)):
        row = np.delete(sq[i], i)
        _, probs = tsne.perplexity_calibrate(row, perplexity)
        entropy = -np.sum(probs * np.log2(probs + 1e-300))
        perp_ok = perp_ok and abs(2.0**entropy - perplexity) < 1e-4

    kl_ok = True
    for seed in (0, 1, 2):
        emb = tsne.run_tsne(x, tsne.TsneConfig(iters=300, seed=seed, perplexity=perplexity))
        kl_ok = kl_ok and emb.kl_final < emb.kl_initial

    # 3 well-separated clusters must keep >= 0.9 k-NN label agreement
    centers = np.array([[0.0] * 5, [12.0] * 5, [-12.0, 12.0, -12.0, 12.0, -12.0]])
    labels = np.repeat([0, 1, 2], 20)
    data = centers[labels] + rng.normal(scale=0.5, size=(60, 5))
    emb = tsne.run_tsne(data, tsne.TsneConfig(iters=500, seed=42, perplexity=10.0))
    d2 = tsne.pairwise_sq_distances(emb.points)
    np.fill_diagonal(d2, np.inf)
    agree = []
    for i in range(60):
        nn = np.argsort(d2[i])[:10]
        agree.append((labels[nn] == labels[i]).mean())
    knn = float(np.mean(agree))
    verdict(9, sym_ok and perp_ok and kl_ok and knn >= 0.9, f"P contract, KL decrease, kNN agreement {knn:.2f} >= 0.9")
