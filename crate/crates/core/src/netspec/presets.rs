//! Built-in network configs.
//!
//! `example4` is the small four-layer network used to illustrate the
//! pipeline. The `*-like` nets are stand-ins sized so that their crossbar
//! demand lands between different design points.

use super::{parse_network, LayerSpec, NetworkSpec};
use crate::attacknet::AttackConfig;
use crate::tensor::Dims3;

const PRESETS: &[(&str, &str)] = &[
    ("example4", include_str!("../../nets/example4.json")),
    ("mnist-like", include_str!("../../nets/mnist-like.json")),
    ("gtsrb-like", include_str!("../../nets/gtsrb-like.json")),
    ("lisa-like", include_str!("../../nets/lisa-like.json")),
    ("inception-like", include_str!("../../nets/inception-like.json")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

pub fn preset(name: &str) -> Option<NetworkSpec> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| parse_network(text).expect("built-in preset is valid"))
}

/// `depth` fully connected layers of `width` neurons each, ReLU on all but
/// the last.
pub fn uniform_net(depth: usize, width: usize) -> NetworkSpec {
    let input = Dims3::new(1, 1, width);
    let layers = (0..depth)
        .map(|i| LayerSpec::fully_connected(input, width, i + 1 < depth))
        .collect();
    NetworkSpec::new(format!("uniform-{depth}x{width}"), input, 1, layers, AttackConfig::default())
        .expect("uniform net is valid")
}
