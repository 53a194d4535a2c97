"""Smoke test for the mcte extension module.

Build and stage the module first:

    cargo build -p mcte-py --release --features extension-module
    cp target/release/libmcte.so python/mcte.so
"""

import json
import math
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

import mcte  # noqa: E402


def check(name, ok, detail=""):
    print(f"{'ok  ' if ok else 'FAIL'} {name} {detail}")
    return ok


def main():
    results = []
    toy = mcte.Surface.toy(c=0.3)
    results.append(check("dim", toy.dim == 2))

    m = mcte.metric(toy, [0.8, 0.2])
    results.append(check("metric off-diagonal negative", m["g"][0][1] < 0.0, f"g_Vs = {m['g'][0][1]:.4f}"))

    path = mcte.trace(toy, [0.78, 0.1], mcte.STRESS, 0.6).with_zeta(mcte.VOLUME, 1.0)
    drift = path.invariant()["max_rel_drift"][mcte.VOLUME]
    results.append(check("invariant drift", drift <= 1e-10, f"{drift:.2e}"))
    results.append(check("entropy drift", path.max_s_drift() <= 1e-13))
    results.append(check("beta ratio", path.beta_ratio_error(mcte.VOLUME) <= 1e-10))

    flat = mcte.holonomy(mcte.Surface.toy(c=0.0), v_range=(0.78, 0.82), sigma_range=(0.1, 0.3))
    loop = mcte.holonomy(toy, v_range=(0.78, 0.82), sigma_range=(0.1, 0.3))
    stokes = mcte.stokes_holonomy(toy, (0.78, 0.82), (0.1, 0.3))
    results.append(check("holonomy", abs(flat) <= 1e-10 and abs(loop - stokes) <= 1e-8, f"{loop:.6f}"))

    flip = mcte.sign_flip(toy, [0.78, 0.1], 0.6)
    results.append(check("sign flip", flip["drift_flipped"] >= 0.1, f"{flip['drift_flipped']:.3f}"))

    smap = mcte.stability_map(mcte.Surface.toy(c=0.6))
    results.append(check("stability map", smap["critical_cells"] > 0))

    quad = mcte.Surface.quadratic([2.0, 3.0], [0.0, 0.0])
    r = mcte.sample_metric(quad, [0.0, 0.0], [6.0, 6.0], 100_000, [1.0, 1.0], seed=1)
    results.append(check("sampled metric", r["rel_err_frobenius"] < 0.05, f"{r['rel_err_frobenius']:.4f}"))

    try:
        toy.entropy([0.7, 0.2])
        results.append(check("domain error", False))
    except mcte.DomainError:
        results.append(check("domain error", True))

    with tempfile.TemporaryDirectory() as out:
        summary = mcte.run_scenario(json.dumps({"scenario": "sign-error"}), output_dir=out)
        results.append(check("run_scenario", summary["status"] == "ok" and (Path(out) / "path.csv").exists()))
        try:
            mcte.run_scenario(json.dumps({"scenario": "sign-error", "sign_eror": {}}), output_dir=out)
            results.append(check("strict config", False))
        except mcte.ConfigError as e:
            results.append(check("strict config", "sign_eror" in str(e)))

    results.append(check("finite", all(math.isfinite(z) for z in path.zeta(mcte.VOLUME))))
    return 0 if all(results) else 1


if __name__ == "__main__":
    sys.exit(main())
