"""End-to-end smoke test of the Python bindings on a tiny configuration.

Build first:  maturin develop -m crates/python/Cargo.toml --release
Run:          python python/smoke_test.py
"""

import math
import tempfile
from pathlib import Path

import headavatar_py as ha

TINY = {
    "steps": 2,
    "batch_size": 2,
    "checkpoint_every": 0,
    "deterministic": True,
    "generator": {"resolution": 32, "latent_dim": 8, "base_channels": 8, "aux_base_channels": 8, "min_channels": 4},
    "discriminator": {"resolution": 32, "base_channels": 8, "min_channels": 4},
    "backbone": {
        "seed": 7,
        "stages": [{"channels": 4, "stride": 1}, {"channels": 6, "stride": 2}, {"channels": 8, "stride": 2}],
        "nonlinearity": {"kind": "leaky_relu", "slope": 0.2},
        "tap_layers": [1, 2],
    },
    "idmrf": {"tap_layers": [1, 2]},
    "cos_taps": [1, 2],
}


def main():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        data_dir = tmp / "data"
        m = ha.synthesize_dataset(str(data_dir), {"resolution": 32, "frame_count": 6, "seed": 3})
        assert m["frame_count"] == 6 and m["resolution"] == 32

        ds = ha.Dataset.load(str(data_dir))
        assert len(ds) == 6 and ds.frame_ids == list(range(6))
        frame = ds.frame(0)
        shape, real = frame["real"]
        assert tuple(shape) == (3, 32, 32)

        run = ha.train(ds, str(tmp / "run"), TINY)
        assert run["step"] == 2
        again = ha.train(ds, str(tmp / "run2"), TINY)
        assert again["content_hash"] == run["content_hash"], "deterministic runs differ"
        assert ha.checkpoint_hash(run["path"]) == run["content_hash"]
        log = ha.read_step_log(str(tmp / "run" / "steps.ndjson"))
        assert [r["step"] for r in log] == [1, 2]

        re = ha.Reenactor(run["path"])
        (ashape, avatar), (mshape, mask) = re.generate(frame["render"][1], frame["uv"][1])
        assert tuple(ashape) == (3, 32, 32) and tuple(mshape) == (1, 32, 32)
        assert all(0.0 <= v <= 1.0 for v in mask)
        rep = re.reenact(ha.Dataset.load_driving(str(data_dir)), str(tmp / "re"))
        assert rep["frame_count"] == 6 and rep["fps"] > 0

        ev = ha.evaluate_dirs(str(tmp / "re"), str(data_dir))
        assert ev["frame_count"] == 6 and ev["ssim"] <= 1.0

        assert ha.ssim(shape, real, real) == 1.0
        a, b = [0.2] * 12, [0.3] * 12
        assert abs(ha.psnr([3, 2, 2], a, b) - 20.0) < 1e-4
        assert abs(ha.frechet_distance([0.0], [[1.0]], [1.0], [[1.0]]) - 1.0) < 1e-9
        g, d = ha.combine_losses({"mask": 0.1, "mrf": 2.0, "l1": 0.05, "cos": 0.3, "g": 0.7, "d": 0.6})
        assert math.isclose(g, 1.45, abs_tol=1e-12) and math.isclose(d, 0.6, abs_tol=1e-12)

        try:
            ha.Dataset.load(str(tmp / "missing"))
        except ha.HeadAvatarError as e:
            print("expected error:", e)
        else:
            raise AssertionError("loading a missing dataset should fail")
        try:
            ha.train(ds, str(tmp / "bad"), {"steps": 0})
        except ValueError as e:
            print("expected error:", e)
        else:
            raise AssertionError("steps=0 should be rejected")

    print("python smoke test: ok")


if __name__ == "__main__":
    main()
