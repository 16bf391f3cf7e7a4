"""Smoke test for the unlearn_fv extension module.

Build and install first, e.g. `maturin develop --release -m crates/python/Cargo.toml`.
"""

import os
import tempfile

import unlearn_fv as uf


def main():
    data = uf.Dataset.blobs(seed=0)
    train, test = data.train_test_split(0.2, 0)
    model = uf.Model.train(train, seed=0)
    assert model.accuracy(test) > 95.0

    split = uf.Split.class_wise(train, 2)
    before = model.checksum()
    vector, trace = uf.optimize_forget_vector(model, train, split)
    assert model.checksum() == before
    assert len(vector) == train.dim
    assert len(trace) > 0

    origin = uf.evaluate(model, train, test, split, method="origin")
    report = uf.evaluate(model, train, test, split, vector=vector)
    print(origin)
    print(report)
    assert report.ua > 90.0
    assert report.ua > origin.ua

    bank = uf.VectorBank.build(model, train)
    one_hot = bank.compose(model, [0.0, 0.0, 1.0, 0.0, 0.0])
    assert one_hot.delta == vector.delta
    assert one_hot.weights == [0.0, 0.0, 1.0, 0.0, 0.0]

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.bin")
        model.save(path)
        loaded = uf.Model.load(path)
        assert loaded.checksum() == before

        path = os.path.join(tmp, "vector.bin")
        vector.save(path, model=model)
        restored, fingerprint = uf.ForgetVector.load(path)
        assert restored.delta == vector.delta
        assert fingerprint == before

        with open(path, "r+b") as f:
            f.seek(-1, os.SEEK_END)
            last = f.read(1)
            f.seek(-1, os.SEEK_END)
            f.write(bytes([last[0] ^ 0x40]))
        try:
            uf.ForgetVector.load(path)
        except uf.IntegrityError:
            pass
        else:
            raise AssertionError("corrupted vector loaded")

    print("smoke test passed")


if __name__ == "__main__":
    main()
