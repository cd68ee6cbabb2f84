"""Smoke test for the `crn` extension module.

Build the module first, e.g. `maturin develop` in crates/py, or
`cargo build --release -p crn-py --features extension-module` and copy
`target/release/libcrn.so` to `crn.so` somewhere on PYTHONPATH.
"""

import crn


def main():
    assert crn.reward_sr(5.0) == 10
    assert crn.reward_roi(0.15) == 1
    assert abs(crn.annual_roi(0.1293, 642) - 0.0735) < 1e-3
    kind, fraction = crn.decode_action(1.0, 1.0)
    assert kind == "Buy" and abs(fraction - 0.6) < 1e-12

    ds = crn.Dataset.regime(days=200, seed=7)
    assert len(ds) == 200
    assert "tweet_count" in ds.columns
    names, rows, mask = crn.feature_frame(ds, "OHLCV+TI")
    assert len(rows) == len(ds) and len(rows[0]) == len(names)
    assert sum(mask) > 0

    fc = crn.Forecaster(ds, group="OHLCV+MACRO+TWEETS")
    p = fc.p_up()
    assert p[0] is None and p[-1] is not None
    print(f"group {fc.group}, test accuracy {fc.test_accuracy:.3f}, edges {fc.edge_count()}")

    closes = ds.column("close")
    print(f"buy-and-hold ROI {crn.buy_and_hold_roi(closes, 0.0):.4f}")

    try:
        crn.feature_frame(ds, "NOPE")
    except crn.CrnError as e:
        print(f"rejected bad group: {e}")
    else:
        raise AssertionError("bad group accepted")
    print("smoke test passed")


if __name__ == "__main__":
    main()
