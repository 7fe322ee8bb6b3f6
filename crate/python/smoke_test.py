"""Smoke test for the fusenet_py extension module.

Build and install first:
    maturin develop --release -m crates/python/Cargo.toml
"""

import json
import tempfile
from pathlib import Path

import fusenet_py as fz


def main():
    assert fz.normalize("April 29, 2017") == "this date"
    assert fz.normalize("john.doe@gmail.com") == "this email address"
    assert fz.preprocess("I’d like a loan") == ["i", "would", "like", "a", "loan"]

    assert fz.topk_accuracy([[0, 1], [2, 0]], [1, 1]) == 0.5
    assert fz.topk_recall([[0, 1]], [1], 3) is None

    blocks = fz.grad_check("fusion", 1)
    assert max(err for _, err in blocks) < 1e-4, blocks

    with tempfile.TemporaryDirectory() as tmp:
        data = Path(tmp) / "synth.jsonl"
        manifest = json.loads(fz.generate_synthetic(str(data), n=260, seed=3))
        assert len(manifest["classes"]) == len(fz.CLASS_NAMES)

        model = Path(tmp) / "m.fnet"
        best_epoch, best_val = fz.train_model(
            str(data), str(data) + ".vec", str(model),
            variant="fusion", epochs=3, max_seq_len=12, lstm_hidden=8, mlp_hidden=16, lr=3e-3,
        )
        assert 0 <= best_epoch <= 3 and 0.0 <= best_val <= 1.0

        p = fz.Predictor(str(model))
        assert p.variant == "fusion"
        first = json.loads((Path(str(model) + ".test.jsonl")).read_text().splitlines()[0])
        top = p.predict(first["text"], first["numerical"], [tuple(c) for c in first["categorical"]], k=3)
        assert len(top) == 3 and top[0][1] >= top[1][1] >= top[2][1]

        report = p.evaluate(str(model) + ".test.jsonl", k=3)
        assert 0.0 <= report["accuracy"] <= 1.0
        assert len(report["per_class"]) == len(fz.CLASS_NAMES)
        print(repr(p), "test top-3", round(report["accuracy"], 4))

    try:
        fz.Predictor("/nonexistent/model.fnet")
    except (IOError, ValueError):
        pass
    else:
        raise AssertionError("missing model should raise")

    print("smoke test ok")


if __name__ == "__main__":
    main()
