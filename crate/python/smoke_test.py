"""Smoke test for the dyad extension module.

Build and install first:
    pip install maturin
    maturin build --release -m crates/py/Cargo.toml
    pip install target/wheels/dyad-*.whl
"""

import math
import random
import sys
import tempfile

import dyad


def check(cond, msg):
    if not cond:
        sys.exit(f"FAIL: {msg}")


def main():
    rng = random.Random(0)
    inliers = [[rng.gauss(0, 1) for _ in range(4)] for _ in range(200)]
    outlier = [8.0, -8.0, 8.0, 8.0]

    forest = dyad.IsolationForest(inliers, n_trees=50, subsample=128, seed=1)
    check(forest.score(outlier) > forest.score(inliers[0]), "outlier scores above inlier")
    check(abs(dyad.average_path_length(2) - 1.0) < 1e-12, "g(2) == 1")

    sphere = dyad.Hypersphere([[0, 0], [2, 0], [1, 1]], epsilon=1e-3)
    check(abs(sphere.radius - 1.0) < 1e-3 * 1.0 + 1e-9, f"radius {sphere.radius}")

    scores = dyad.pseudo_anomaly_scores(inliers + [outlier], scorer="lof", seed=2)
    check(max(range(len(scores)), key=scores.__getitem__) == 200, "outlier has the top pseudo score")
    check(all(0.0 <= s <= 1.0 for s in scores), "pseudo scores in [0, 1]")

    w, h = 16, 16
    a = bytes(rng.randrange(256) for _ in range(w * h))
    b = bytes(a[y * w + max(x - 2, 0)] for y in range(h) for x in range(w))
    u, v = dyad.estimate_flow(a, b, w, h, block=4, search=3)
    check(u[5 * w + 6] == 2.0 and v[5 * w + 6] == 0.0, "interior block recovers a 2 px shift")

    positive, negative = dyad.form_bags([0.9, 0.2, 0.7], [0.8, 0.9, 0.1])
    check((positive, negative) == ([0], [1, 2]), f"bags {positive} {negative}")

    auc, points = dyad.roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    check(abs(auc - 0.75) < 1e-12 and points[0] == (0.0, 0.0), f"auc {auc}")

    net = dyad.MlpRegressor([3, 4, 1], seed=5)
    xs = [[rng.gauss(0, 1) for _ in range(3)] for _ in range(16)]
    ys = [1.0 if x[0] > 0 else 0.0 for x in xs]
    losses = net.fit(xs, ys, iterations=200, batch_size=8, learning_rate=0.1, seed=3)
    check(losses[-1] < losses[0], "training lowers the loss")
    loss, grad = net.backward(xs, ys)
    check(len(grad) == len(net.params) and math.isfinite(loss), "gradient shape")

    with tempfile.TemporaryDirectory() as tmp:
        manifest = dyad.synth(tmp, videos=4, seed=7)
        summary = dyad.run_pipeline(str(manifest), '{"passes": 4}')
        check(summary["frames"] == 4 * 128, "frame count")
        check(summary["auc"] > 0.8, f"auc {summary['auc']}")
        print(f"pipeline: AUC {summary['auc']:.4f}, FAR {summary['far']:.4f}")

    try:
        dyad.assign_label(0.5, 0.5, tau=1.5)
    except ValueError:
        pass
    else:
        sys.exit("FAIL: invalid tau accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
