"""Smoke test for the san_py extension module.

Build and run from the repository root:

    cargo build -p san-py --features extension-module
    cp target/debug/libsan_py.so python/san_py.so
    python3 python/smoke_test.py
"""

import json
import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import san_py  # noqa: E402


def main():
    corpus = san_py.generate(7, json.dumps({"n_samples": 120}))
    assert len(corpus) == 120
    summary = json.loads(corpus.summary())
    print("summary", summary)

    train, test = corpus.split_general(0.75, 0)
    assert len(train) + len(test) == 120
    assert train.with_tree() == len(train)
    assert test.stripped().with_tree() == 0

    cfg = json.dumps({"encoder": "gcn", "hidden_dim": 16, "epochs": 5, "seed": 1})
    det, trace = san_py.train(train, "san", cfg)
    records = json.loads(trace)
    assert 1 <= len(records) <= 5
    assert all(math.isfinite(r["total"]) for r in records)

    labels, probs = det.predict(test.stripped())
    assert len(labels) == len(test)
    assert all(abs(p[0] + p[1] - 1.0) < 1e-12 for p in probs)
    assert len(det.hidden(test)[0]) == det.d_h == 16

    scores = json.loads(det.evaluate(test))
    m = san_py.metrics(labels, test.labels())
    assert abs(m["accuracy"] - scores["cold"]["accuracy"]) < 1e-12

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.json")
        det.save(path)
        again = san_py.Detector.load(path)
        assert again.predict(test.stripped())[1] == probs

    vanilla, _ = san_py.train(train, "vanilla", cfg)
    assert vanilla.num_parameters() == det.num_parameters()

    t, df, p = san_py.paired_t_test([0.6, 0.62, 0.58], [0.55, 0.6, 0.5])
    assert df == 2 and 0.0 < p < 1.0

    err = san_py.gradcheck("gcn", 0)
    assert err <= 1e-4, err

    try:
        san_py.train(train, "bogus", cfg)
    except ValueError:
        pass
    else:
        raise AssertionError("unknown method accepted")

    print("smoke test ok: cold acc %.3f, gradcheck %.2e" % (scores["cold"]["accuracy"], err))


if __name__ == "__main__":
    main()
