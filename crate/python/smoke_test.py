"""Smoke test for the Python extension. Build and install it first:

    pip install maturin
    maturin build --release -m crates/py/Cargo.toml
    pip install target/wheels/vcr-*.whl
"""

import math
import pathlib
import sys
import tempfile

import vcr

ROOT = pathlib.Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures" / "natural"


def check(name, ok, detail=""):
    print(f"{'ok  ' if ok else 'FAIL'} {name} {detail}")
    return ok


def main():
    results = []

    img = vcr.read_image(str(FIXTURES / "leaves_00.png"))
    results.append(check("read_image", img.shape == [3, 384, 384], str(img.shape)))

    hvi = vcr.rgb_to_hvi(img)
    back = vcr.hvi_to_rgb(hvi)
    err = back.max_abs_diff(img)
    results.append(check("hvi round trip", err < 1e-5, f"max err {err:.2e}"))

    try:
        vcr.HviParams(k=0.0)
        results.append(check("k=0 rejected", False))
    except ValueError:
        results.append(check("k=0 rejected", True))

    f_i, f_hv = vcr.lift_streams(hvi)
    out = vcr.caa_forward(f_i, f_hv, vcr.CaaConfig(tce_kernel=3), seed=42)
    again = vcr.caa_forward(f_i, f_hv, vcr.CaaConfig(tce_kernel=3), seed=42)
    results.append(check("caa popcounts", out["popcounts"] == [5, 5, 5], str(out["popcounts"])))
    results.append(check("caa deterministic", out["f_i"].max_abs_diff(again["f_i"]) == 0.0))

    a = [[1.0, 2.0], [2.0, 0.5]]
    b = [[0.0, -1.0], [-1.0, 0.5]]
    cov = vcr.variance_map(a, b)
    want = [[0.25 * (x - y) ** 2 for x, y in zip(ra, rb)] for ra, rb in zip(a, b)]
    results.append(check("variance map", cov == want))

    pred = vcr.Tensor([2, 1, 2], [0.0, math.log(3.0), 0.0, math.log(3.0)])
    value, grad = vcr.cda_loss(pred, vcr.Tensor.zeros([2, 1, 2]))
    results.append(check("cda bernoulli", abs(value - 0.261624) < 1e-5, f"{value:.6f}"))

    losses = vcr.loss_eval(img, img)
    results.append(check("loss_eval identical", losses["l_rec"] == 0.0 and abs(losses["l_cda"]) < 1e-12))

    results.append(check("psnr identical", vcr.psnr(img, img) == math.inf))
    results.append(check("ssim identical", abs(vcr.ssim(img, img) - 1.0) < 1e-9))

    images = [vcr.read_image(str(p)) for p in sorted(FIXTURES.glob("*.png"))]
    model = vcr.NiqeModel.fit(images)
    noise = vcr.white_noise(384, 384, seed=3)
    natural = max(model.score(i) for i in images)
    results.append(check("niqe ordering", model.score(noise) > natural))
    with tempfile.TemporaryDirectory() as d:
        path = str(pathlib.Path(d) / "model.vcrq")
        model.save(path)
        results.append(check("niqe model io", vcr.NiqeModel.load(path).score(images[0]) == model.score(images[0])))

    features = vcr.brisque_features(img)
    results.append(check("brisque length", len(features) == 36))

    checks = vcr.run_selfcheck(42)
    results.append(check("selfcheck", len(checks) >= 12 and all(c[3] for c in checks), f"{len(checks)} checks"))

    failed = results.count(False)
    print(f"{len(results) - failed}/{len(results)} passed")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
