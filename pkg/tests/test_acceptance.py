"""Acceptance suite: every criterion prints one PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines.
"""
import time
from collections import Counter
from contextlib import contextmanager
from fractions import Fraction

import numpy as np
import pytest
from scipy.stats import spearmanr

from ci_pipeline.analysis import assign_external, groups_for_model
from ci_pipeline.ci import ci_score, unique_users, user_iou
from ci_pipeline.cli import run
from ci_pipeline.model import EmbeddingRecord, LikesIndex, PipelineConfig
from ci_pipeline.pipeline import fit_partition_model, train_regressor
from ci_pipeline.regress import fit, predict, r_squared, split_train_test
from ci_pipeline.storage import read_embeddings, write_embeddings
from ci_pipeline.synth import SyntheticSpec, generate_synthetic

from conftest import likes_from
from test_ci import brute_force_unique_users
from test_pipeline import sub_clump_scenario


@contextmanager
def criterion(number: int, name: str):
    try:
        yield
    except Exception:
        print(f"ACCEPTANCE {number} ({name}): FAIL")
        raise
    print(f"ACCEPTANCE {number} ({name}): PASS")


PLANTED_SEED = 42


@pytest.fixture(scope="module")
def planted():
    """Dataset #1: 5 common topics at like-prob 0.95, 15 niche 5-user blocks."""
    spec = SyntheticSpec(
        n_topics=20,
        topic_dim=32,
        n_users=100,
        common_topic_count=5,
        niche_users_per_topic=5,
        images_per_topic=200,
        cluster_std=0.5,
        seed=PLANTED_SEED,
    )
    records, likes, truth = generate_synthetic(spec)
    config = PipelineConfig(n_partitions=20, reduced_dim=32, seed=PLANTED_SEED)
    started = time.monotonic()
    model = fit_partition_model(records, likes, config, reducer_kind="identity")
    elapsed = time.monotonic() - started
    return spec, records, likes, truth, model, elapsed


def final_partition_of_topic(model, truth):
    out = {}
    for topic in sorted(set(truth.topic_of.values())):
        tally = Counter(
            model.leaf_to_final[model.assignment[image_id]]
            for image_id, t in truth.topic_of.items()
            if t == topic
        )
        out[topic] = tally.most_common(1)[0][0]
    return out


def test_acceptance_1_planted_commonality_recovery(planted):
    spec, records, likes, truth, model, elapsed = planted
    with criterion(1, "planted commonality recovery"):
        by_topic = final_partition_of_topic(model, truth)
        recovered = [model.ci_scores[by_topic[t]] for t in range(spec.n_topics)]
        common = recovered[: spec.common_topic_count]
        niche = recovered[spec.common_topic_count :]
        assert min(common) >= 0.85, f"common CI too low: {min(common)}"
        assert max(niche) <= 0.08, f"niche CI too high: {max(niche)}"
        rho = spearmanr(list(truth.popularity), recovered).statistic
        assert rho >= 0.95, f"spearman {rho}"
        assert elapsed < 60.0, f"fit took {elapsed:.1f}s"


def test_acceptance_2_merge_correctness():
    with criterion(2, "merge correctness"):
        logs = []
        for _ in range(3):
            records, likes, _ = sub_clump_scenario(seed=11)
            config = PipelineConfig(n_partitions=6, reduced_dim=6, seed=11)
            model = fit_partition_model(records, likes, config, reducer_kind="identity")
            logs.append(model.merge_log)

        leaf_content = {}
        for image_id, leaf in model.assignment.items():
            leaf_content.setdefault(image_id.split("_")[0], set()).add(leaf)
        clump_leaves = leaf_content["clumpA"] | leaf_content["clumpB"]
        far_leaves = set()
        for t in range(4):
            far_leaves |= leaf_content[f"far{t}"]
        # the split topic occupies exactly two leaves, and only they merge
        assert len(clump_leaves) == 2
        assert clump_leaves.isdisjoint(far_leaves)
        assert len(model.merge_log) == 1
        event = model.merge_log[0]
        assert {event.left_id, event.right_id} == clump_leaves

        # cross-topic user IoU < 0.25 by construction: disjoint liker blocks
        likers = {}
        for user, images in likes.likes.items():
            for image in images:
                likers.setdefault(image.split("_")[0], set()).add(user)
        tags = sorted(likers)
        for i, a in enumerate(tags):
            for b in tags[i + 1 :]:
                if {a, b} == {"clumpA", "clumpB"}:
                    continue
                assert user_iou(frozenset(likers[a]), frozenset(likers[b])) < 0.25

        # bitwise determinism across three runs
        assert logs[0] == logs[1] == logs[2]
        for other in logs[1:]:
            for x, y in zip(logs[0], other):
                assert x.ward_distance.hex() == y.ward_distance.hex()
                assert x.user_iou.hex() == y.user_iou.hex()


def test_acceptance_3_oracle_equivalence():
    with criterion(3, "unique-user / CI / IoU oracle equivalence"):
        rng = np.random.default_rng(314159)
        for _ in range(50):
            n_users = int(rng.integers(1, 21))
            n_images = int(rng.integers(2, 101))
            n_partitions = int(rng.integers(1, min(9, n_images + 1)))
            images = [f"i{j}" for j in range(n_images)]
            pairs = []
            for u in range(n_users):
                count = int(rng.integers(1, n_images + 1))
                for image in rng.choice(images, size=count, replace=False):
                    pairs.append((f"u{u}", image))
            likes = likes_from(pairs)
            boundaries = sorted(rng.choice(range(1, n_images), size=n_partitions - 1, replace=False)) if n_partitions > 1 else []
            parts, start = [], 0
            for b in list(boundaries) + [n_images]:
                parts.append(set(images[start:b]))
                start = b
            k = int(rng.integers(1, 4))
            for members in parts:
                expected = brute_force_unique_users(members, likes, k)
                assert unique_users(members, likes, k) == expected
                assert ci_score(members, likes, k) == len(expected) / likes.total_users
            for a in parts:
                for b in parts:
                    ua = unique_users(a, likes, 1)
                    ub = unique_users(b, likes, 1)
                    expected_iou = (
                        0.0 if not (ua | ub) else len(ua & ub) / len(ua | ub)
                    )
                    assert user_iou(ua, ub) == expected_iou


def test_acceptance_4_min_likes_monotonicity(planted):
    _, _, likes, _, model, _ = planted
    with criterion(4, "min-likes monotonicity"):
        members_of_final = {}
        for image_id, leaf in model.assignment.items():
            members_of_final.setdefault(model.leaf_to_final[leaf], set()).add(image_id)
        for final, members in members_of_final.items():
            scores = [ci_score(members, likes, k) for k in range(1, 6)]
            for a, b in zip(scores, scores[1:]):
                assert a >= b, f"partition {final}: {scores}"


def test_acceptance_5_regression(planted):
    spec, records, likes, truth, model, _ = planted
    with criterion(5, "regression quality and gradient check"):
        # synthetic targets exactly linear plus sigma=0.01 noise
        rng = np.random.default_rng(2718)
        n, d = 400, 16
        X = rng.normal(size=(n, d))
        w_star = rng.normal(size=d)
        t = X @ w_star + 0.3 + rng.normal(0.0, 0.01, size=n)
        ids = [f"r{i}" for i in range(n)]
        train_ids, test_ids = split_train_test(ids, 0.8, seed=1)
        pos = {image_id: i for i, image_id in enumerate(ids)}
        tr = [pos[i] for i in train_ids]
        te = [pos[i] for i in test_ids]
        reg = fit(X[tr], t[tr], ridge_lambda=1e-6)
        r2 = r_squared(predict(reg, X[te]), t[te])
        assert r2 >= 0.95, f"synthetic held-out R2 {r2}"

        # dataset #1 with per-partition normalized CI targets
        _, _, r2_test = train_regressor(model, records, seed=PLANTED_SEED)
        assert r2_test >= 0.6, f"dataset #1 held-out R2 {r2_test}"

        # analytic gradient of the objective vs central finite differences
        lam = 0.2
        Xg = rng.normal(size=(30, 5))
        tg = rng.normal(size=30)
        wg = rng.normal(size=5)
        bg = float(rng.normal())

        def objective(wv, bv):
            res = Xg @ wv + bv - tg
            return float(res @ res + lam * wv @ wv)

        analytic = 2.0 * (Xg.T @ (Xg @ wg + bg - tg) + lam * wg)
        h = 1e-6
        numeric = np.empty(5)
        for i in range(5):
            e = np.zeros(5)
            e[i] = h
            numeric[i] = (objective(wg + e, bg) - objective(wg - e, bg)) / (2 * h)
        rel = np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric)
        assert rel <= 1e-4, f"gradient relative error {rel}"

        # the fitted solution's gradient vanishes
        sol = fit(Xg, tg, ridge_lambda=lam)
        grad = 2.0 * (Xg.T @ (Xg @ sol.weights + sol.bias - tg) + lam * sol.weights)
        assert np.linalg.norm(grad) <= 1e-6 * (float(np.sum(tg**2)) + 1.0)


def test_acceptance_6_grouping_and_shares(planted):
    _, records, _, _, model, _ = planted
    with criterion(6, "grouping and external shares"):
        groups = groups_for_model(model)
        comm_ci = [model.ci_scores[p] for p in groups.members("Comm")]
        subj_ci = [model.ci_scores[p] for p in groups.members("Subj")]
        assert min(comm_ci) >= max(subj_ci)

        counts = Counter(model.leaf_to_final[leaf] for leaf in model.assignment.values())
        total = sum(counts.values())
        for group in ("Comm", "Inter", "Subj"):
            share = sum(counts[p] for p in groups.members(group)) / total
            assert abs(share - 1 / 3) <= 0.10, f"{group} share {share}"

        comm_leaves = [
            leaf for leaf, final in sorted(model.leaf_to_final.items())
            if groups.group_of[final] == "Comm"
        ]
        external = [
            EmbeddingRecord(f"ext{leaf}", model.centroids[leaf].astype(np.float32))
            for leaf in comm_leaves
        ]
        shares, _ = assign_external(model, external)
        assert shares["Comm"] == Fraction(1)
        assert shares["Inter"] == Fraction(0)
        assert shares["Subj"] == Fraction(0)
        assert sum(shares.values()) == 1


def test_acceptance_7_determinism_and_formats(tmp_path):
    with criterion(7, "determinism and formats"):
        # two full CLI runs -> byte-identical CIEM and model JSON
        for tag in ("a", "b"):
            sub = tmp_path / tag
            sub.mkdir()
            assert run([
                "synth",
                "--out-embeddings", str(sub / "emb.ciem"),
                "--out-likes", str(sub / "likes.csv"),
                "--out-truth", str(sub / "truth.json"),
                "--n-topics", "6", "--dim", "8", "--n-users", "40",
                "--common-topics", "2", "--niche-users", "5",
                "--images-per-topic", "30", "--cluster-std", "0.4",
                "--seed", "7",
            ]) == 0
            assert run([
                "fit",
                "--embeddings", str(sub / "emb.ciem"),
                "--likes", str(sub / "likes.csv"),
                "--out", str(sub / "model.json"),
                "--n-partitions", "6", "--reducer", "identity", "--seed", "7",
            ]) == 0
        for name in ("emb.ciem", "likes.csv", "truth.json", "model.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name

        # read(write(x)) == x over 1000 random records
        rng = np.random.default_rng(123321)
        records = [
            EmbeddingRecord(f"id-{i:04d}", rng.normal(size=24).astype(np.float32))
            for i in range(1000)
        ]
        path = tmp_path / "bulk.ciem"
        write_embeddings(records, path)
        dim, back = read_embeddings(path)
        assert dim == 24
        assert back == records
