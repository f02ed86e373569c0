//! Hand-derived values for the four-layer example network.

use approx::assert_relative_eq;

use a3sim::attacknet::{self, QuantizedNet, WeightSet};
use a3sim::crossbar::{CrossbarGeometry, StorageMode};
use a3sim::hwmodel::{self, DesignPoint, CYCLE_TIME};
use a3sim::netspec::{self, attack_buffer, buffer_requirement, layer_costs, BufferMode};
use a3sim::pipeline::{schedule, ScheduleConfig};

fn example() -> netspec::NetworkSpec {
    netspec::preset("example4").unwrap()
}

#[test]
fn crossbar_demand() {
    let net = example();
    let geom = CrossbarGeometry::default();
    // rows 144, 256, 128, 128; physical columns 128, 64, 256, 20
    assert_eq!(layer_costs(&net, &geom, 1, StorageMode::Single), vec![2, 2, 2, 1]);
    assert_eq!(layer_costs(&net, &geom, 1, StorageMode::Dual), vec![4, 4, 4, 2]);
    assert_eq!(layer_costs(&net, &geom, 3, StorageMode::Single), vec![6, 6, 6, 3]);
}

#[test]
fn buffer_sizes() {
    let net = example();
    // outputs after pooling: 5x5x64, 2x2x32, 128, 10
    let cnn = (1600 * 7 + 128 * 5 + 128 * 3 + 10) * 2;
    assert_eq!(buffer_requirement(&net, BufferMode::CnnTraining), cnn);
    let a = attack_buffer(&net);
    assert_eq!(a.error_bytes, 1600 * 2);
    assert_eq!(a.relu_bitmap_bytes, (6400 + 512 + 128) / 8);
    assert_eq!(a.pool_index_bytes, (1600 + 128) * 2 / 8);
    assert_eq!(buffer_requirement(&net, BufferMode::Attacknet), 3200 + 880 + 432);
}

#[test]
fn operation_count() {
    let net = example();
    let macs: u64 = 144 * 64 * 100 + 256 * 32 * 16 + 128 * 128 + 128 * 10;
    let pass = 2 * macs;
    let pixels = 12 * 12 * 16;
    assert_eq!(hwmodel::count_ops(&net, 3, 1), 3 * pass + pass + 2 * pixels);
    assert_eq!(hwmodel::count_ops(&net, 3, 5), 5 * (3 * pass + pass + 2 * pixels));
}

#[test]
fn energy_of_golden_trace() {
    let net = example();
    let trace = schedule(&net, &[2, 2, 2, 1], &ScheduleConfig { capacity: 4, copies: 1, batches: 1 }).unwrap();
    // FP: 3 images x 7 crossbars; EP through layers 4, 3, 2: 5; input error: 2.
    let active = 21.0 + 5.0 + 2.0;
    for (design, arrays) in [(DesignPoint::A3px, 1.0), (DesignPoint::A3p, 2.0)] {
        let e = hwmodel::energy_breakdown(&trace, &hwmodel::preset(design)).unwrap();
        assert_relative_eq!(e.adc, active * 0.002 * CYCLE_TIME, max_relative = 1e-12);
        assert_relative_eq!(e.dac, active * 0.0005 * CYCLE_TIME, max_relative = 1e-12);
        assert_relative_eq!(e.crossbar, active * arrays * 0.0003 * CYCLE_TIME, max_relative = 1e-12);
        assert_relative_eq!(e.buffer, 16.0 * 1.38 * CYCLE_TIME, max_relative = 1e-12);
        assert_eq!(e.others, 0.0);
    }
}

#[test]
fn quantized_pass_stays_within_its_bound() {
    let net = example();
    let weights = WeightSet::random(&net, 11);
    let q = QuantizedNet::program(&net, &weights, &CrossbarGeometry::default(), StorageMode::Single, 16).unwrap();
    let input: Vec<f64> = (0..net.input.count()).map(|i| ((i * 37) % 101) as f64 / 101.0).collect();
    let pass = q.forward(&input).unwrap();
    let reference = attacknet::forward(&net, q.dequantized_weights(), &input).unwrap();
    for ((a, b), bound) in pass.value.logits().iter().zip(reference.logits()).zip(pass.bound.iter()) {
        assert!((a - b).abs() <= *bound, "{a} vs {b}, bound {bound}");
    }
    let delta = attacknet::error_init(pass.value.logits(), &net.attack);
    let back = q.backprop(&pass.value, &delta).unwrap();
    let reference = attacknet::backprop(&net, q.dequantized_weights(), &pass.value, &delta).unwrap();
    for ((a, b), bound) in back.value.iter().zip(&reference[0]).zip(back.bound.iter()) {
        assert!((a - b).abs() <= *bound, "{a} vs {b}, bound {bound}");
    }
}
