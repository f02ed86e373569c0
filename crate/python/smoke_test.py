"""Smoke test for the a3sim_py extension module.

Build and install first, e.g. ``pip install maturin`` then
``maturin develop -m crates/py/Cargo.toml``, and run ``python python/smoke_test.py``.
"""

import json

import a3sim_py as a3


def check_netspec():
    net = a3.NetworkSpec.preset("example4")
    assert net.depth == 4 and net.batch_size == 3 and net.classes == 10
    assert net.layer_costs(mode="single") == [2, 2, 2, 1]
    report = net.analyze()
    assert report["buffer_bytes_attack"] < report["buffer_bytes_cnn"]
    again = a3.NetworkSpec.from_json(net.to_json())
    assert again.layer_costs() == net.layer_costs()


def check_pipeline():
    net = a3.NetworkSpec.preset("example4")
    trace = a3.schedule(net, capacity=4)
    trace.verify()
    assert trace.total_cycles == 16
    assert trace.overwrite_count == 2
    events = trace.events()
    assert (5, "system", "program", None) in events
    assert (16, "batch1", "mask_update", None) in events
    assert trace.to_csv().startswith("cycle,subject,action,layer,weights_programmed\n")


def check_hwmodel():
    same_power = a3.HardwareConfig.derive("same_power", "dual")
    assert same_power.bundles == 17265
    assert abs(same_power.total_power - 49.719) / 49.719 < 0.005
    a3rx = a3.HardwareConfig.preset("a3rx")
    assert a3rx.effective_capacity == 27553
    restored = a3.HardwareConfig.from_json(a3rx.to_json())
    assert restored.bundles == a3rx.bundles
    metrics = a3.evaluate(a3.NetworkSpec.preset("inception-like"), a3rx, batches=2)
    assert metrics["speedup_vs_baseline"] > 1.0
    parts = metrics["energy_breakdown"]
    assert sum(parts.values()) > 0


def check_crossbar():
    weights = [[3, -7], [-128, 127], [0, 5]]
    for mode in ("dual", "single"):
        array = a3.ProgrammedArray(weights, mode=mode, adc_bits=12)
        assert array.reconstruct() == [3, -7, -128, 127, 0, 5]
        x = [2, -1, 4]
        expected = [sum(x[i] * weights[i][j] for i in range(3)) for j in range(2)]
        assert array.mvm(x) == expected, (mode, array.mvm(x), expected)
    ints, scale = a3.quantize([0.5, -1.0, 0.25], 8)
    assert ints[1] == -127 and scale > 0


def check_train():
    toy = json.dumps(
        {
            "name": "toy",
            "batch_size": 1,
            "input": [1, 1, 4],
            "layers": [
                {"kind": "fc", "out_channels": 6},
                {"kind": "fc", "out_channels": 3, "relu": False},
            ],
            "attack": {"target_label": 2, "lambda": 0.01, "learning_rate": 0.5, "iterations": 5},
        }
    )
    net = a3.NetworkSpec.from_json(toy)
    inputs = [[0.1, 0.2, 0.3, 0.4]]
    log = a3.train(net, inputs, seed=1)
    assert len(log) == 5
    assert log[-1]["loss"] <= log[0]["loss"]
    crossbar = a3.train(net, inputs, seed=1, quantized=True, iterations=2)
    assert abs(crossbar[0]["loss"] - log[0]["loss"]) < 1e-3


def main():
    for check in (check_netspec, check_pipeline, check_hwmodel, check_crossbar, check_train):
        check()
        print(f"ok {check.__name__}")
    print("smoke test passed")


if __name__ == "__main__":
    main()
