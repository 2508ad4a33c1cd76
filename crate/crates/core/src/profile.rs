//! Layer-level model of the full-size and shallow networks.
//!
//! Layer indices are 1-based to match the decision variable: offloading
//! decision `x` means layers `1..=x` ran on the device. Index 0 is a zero-cost
//! pseudo-layer whose "output" is the raw input.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Compute,
    PoolDown,
    PoolUp,
    ExitBranch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnnLayer {
    pub name: String,
    pub kind: LayerKind,
    pub flops: f64,
    /// Size of the layer output in bits.
    pub output_bits: f64,
    #[serde(default)]
    pub negligible: bool,
}

impl DnnLayer {
    pub fn compute(name: &str, flops: f64, output_bits: f64) -> Self {
        Self {
            name: name.to_string(),
            kind: LayerKind::Compute,
            flops,
            output_bits,
            negligible: false,
        }
    }

    pub fn pool_down(name: &str, flops: f64, output_bits: f64) -> Self {
        Self {
            name: name.to_string(),
            kind: LayerKind::PoolDown,
            flops,
            output_bits,
            negligible: true,
        }
    }

    pub fn pool_up(name: &str, flops: f64, output_bits: f64) -> Self {
        Self {
            name: name.to_string(),
            kind: LayerKind::PoolUp,
            flops,
            output_bits,
            negligible: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.flops.is_finite() && self.flops >= 0.0) {
            return Err(Error::Profile(format!("{}: flops must be >= 0", self.name)));
        }
        if !(self.output_bits.is_finite() && self.output_bits > 0.0) {
            return Err(Error::Profile(format!("{}: output_bits must be > 0", self.name)));
        }
        if self.negligible && !matches!(self.kind, LayerKind::PoolDown | LayerKind::PoolUp) {
            return Err(Error::Profile(format!(
                "{}: only pooling/unpooling layers may be negligible",
                self.name
            )));
        }
        Ok(())
    }
}

/// Folds negligible layers into a neighbour so that no offload point sits next
/// to a free size change: a downsampling layer joins its predecessor, an
/// upsampling layer joins its successor.
pub fn merge_negligible_layers(layers: &[DnnLayer]) -> Result<Vec<DnnLayer>> {
    for layer in layers {
        layer.validate()?;
    }
    let mut merged: Vec<DnnLayer> = Vec::with_capacity(layers.len());
    let mut carried_up: Vec<&DnnLayer> = Vec::new();
    for (i, layer) in layers.iter().enumerate() {
        match (layer.negligible, layer.kind) {
            (true, LayerKind::PoolDown) => {
                if !carried_up.is_empty() {
                    return Err(Error::Profile(format!(
                        "{} follows an unmerged upsampling layer",
                        layer.name
                    )));
                }
                let Some(prev) = merged.last_mut() else {
                    return Err(Error::Profile(format!(
                        "downsampling layer {} cannot be the first layer",
                        layer.name
                    )));
                };
                prev.name = format!("{}+{}", prev.name, layer.name);
                prev.flops += layer.flops;
                prev.output_bits = layer.output_bits;
            }
            (true, LayerKind::PoolUp) => {
                if i + 1 == layers.len() {
                    return Err(Error::Profile(format!(
                        "upsampling layer {} cannot be the last layer",
                        layer.name
                    )));
                }
                carried_up.push(layer);
            }
            _ => {
                let mut out = layer.clone();
                if !carried_up.is_empty() {
                    let prefix: Vec<&str> = carried_up.iter().map(|l| l.name.as_str()).collect();
                    out.name = format!("{}+{}", prefix.join("+"), out.name);
                    out.flops += carried_up.iter().map(|l| l.flops).sum::<f64>();
                    carried_up.clear();
                }
                merged.push(out);
            }
        }
    }
    Ok(merged)
}

/// Raw description of the two networks, as read from a profile file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    /// Size of the raw task input (`s_0`) in bits.
    pub input_bits: f64,
    /// Number of leading logical layers shared by both networks (`l_e`).
    pub exit_index: usize,
    #[serde(rename = "layer")]
    pub layers: Vec<DnnLayer>,
    pub exit_branch: DnnLayer,
}

impl ProfileSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::parse(path, e))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("profile serialises")
    }
}

/// Logical layers with derived per-layer delays.
#[derive(Debug, Clone, PartialEq)]
pub struct DnnProfile {
    full_layers: Vec<DnnLayer>,
    exit_branch: DnnLayer,
    exit_index: usize,
    input_bits: f64,
    slot_duration_s: f64,
    /// `device_slots[l]` for `l` in `0..=l_e+1`; entry 0 is the pseudo-layer.
    device_slots: Vec<u64>,
    /// `edge_delays_s[l]` for `l` in `0..=L`; entry 0 is unused and zero.
    edge_delays_s: Vec<f64>,
}

fn ceil_slots(seconds: f64, slot: f64) -> u64 {
    let ratio = seconds / slot;
    // absorb representation error before taking the ceiling
    (ratio - 1e-9).ceil().max(0.0) as u64
}

/// Builds a profile from logical (already merged) layers.
pub fn derive_delays(
    layers: Vec<DnnLayer>,
    exit_branch: DnnLayer,
    exit_index: usize,
    input_bits: f64,
    cfg: &SimConfig,
) -> Result<DnnProfile> {
    if layers.iter().any(|l| l.negligible) {
        return Err(Error::Profile("negligible layers must be merged first".into()));
    }
    for layer in layers.iter().chain(std::iter::once(&exit_branch)) {
        layer.validate()?;
        if layer.flops <= 0.0 {
            return Err(Error::Profile(format!("{}: flops must be positive", layer.name)));
        }
    }
    if exit_branch.kind != LayerKind::ExitBranch {
        return Err(Error::Profile("exit branch must have kind exit_branch".into()));
    }
    if exit_index < 1 || exit_index >= layers.len() {
        return Err(Error::Profile(format!(
            "exit index {exit_index} must satisfy 1 <= l_e < L = {}",
            layers.len()
        )));
    }
    if !(input_bits.is_finite() && input_bits > 0.0) {
        return Err(Error::Profile("input_bits must be positive".into()));
    }

    let dt = cfg.slot_duration_s;
    let mut device_slots = vec![0u64];
    for layer in layers[..exit_index].iter().chain(std::iter::once(&exit_branch)) {
        let slots = ceil_slots(layer.flops / cfg.device_freq_hz, dt);
        if slots == 0 {
            return Err(Error::Profile(format!("{}: device delay rounds to zero slots", layer.name)));
        }
        device_slots.push(slots);
    }
    let mut edge_delays_s = vec![0.0];
    edge_delays_s.extend(layers.iter().map(|l| l.flops / cfg.edge_freq_hz));

    Ok(DnnProfile {
        full_layers: layers,
        exit_branch,
        exit_index,
        input_bits,
        slot_duration_s: dt,
        device_slots,
        edge_delays_s,
    })
}

impl DnnProfile {
    /// Merges the raw layers of `spec` and derives delays.
    pub fn from_spec(spec: &ProfileSpec, cfg: &SimConfig) -> Result<Self> {
        let merged = merge_negligible_layers(&spec.layers)?;
        derive_delays(merged, spec.exit_branch.clone(), spec.exit_index, spec.input_bits, cfg)
    }

    /// The shipped AlexNet-like profile.
    pub fn default_for(cfg: &SimConfig) -> Self {
        Self::from_spec(&alexnet_spec(), cfg).expect("shipped profile is valid")
    }

    /// `L`.
    pub fn num_layers(&self) -> usize {
        self.full_layers.len()
    }

    /// `l_e`.
    pub fn exit_index(&self) -> usize {
        self.exit_index
    }

    /// Largest decision value, `l_e + 1` (device-only).
    pub fn device_only(&self) -> usize {
        self.exit_index + 1
    }

    pub fn layers(&self) -> &[DnnLayer] {
        &self.full_layers
    }

    pub fn exit_branch(&self) -> &DnnLayer {
        &self.exit_branch
    }

    pub fn slot_duration_s(&self) -> f64 {
        self.slot_duration_s
    }

    /// `d_l^D` in slots for `l` in `0..=l_e+1`.
    pub fn device_slots(&self, l: usize) -> u64 {
        self.device_slots[l]
    }

    /// `d_l^D` in seconds.
    pub fn device_delay_s(&self, l: usize) -> f64 {
        self.device_slots[l] as f64 * self.slot_duration_s
    }

    /// `sum_{l=1}^{x} d_l^D` in slots.
    pub fn cumulative_device_slots(&self, x: usize) -> u64 {
        self.device_slots[..=x].iter().sum()
    }

    /// `d_l^E` in seconds for `l` in `1..=L`.
    pub fn edge_delay_s(&self, l: usize) -> f64 {
        self.edge_delays_s[l]
    }

    /// Edge cycles left after offloading at `x` (one cycle per FLOP).
    pub fn remaining_edge_flops(&self, x: usize) -> f64 {
        self.full_layers[x..].iter().map(|l| l.flops).sum()
    }

    /// `s_x`: bits uploaded when offloading after `x` layers, `x` in `0..=l_e`.
    pub fn upload_bits(&self, x: usize) -> f64 {
        if x == 0 {
            self.input_bits
        } else {
            self.full_layers[x - 1].output_bits
        }
    }

    pub fn input_bits(&self) -> f64 {
        self.input_bits
    }
}

/// FLOPs of a 2-D convolution, counting a multiply-accumulate as two operations.
pub fn conv_flops(in_ch: u64, out_ch: u64, kernel: u64, out_side: u64, groups: u64) -> f64 {
    (2 * kernel * kernel * (in_ch / groups) * out_ch * out_side * out_side) as f64
}

/// FLOPs of a fully connected layer.
pub fn fc_flops(inputs: u64, outputs: u64) -> f64 {
    (2 * inputs * outputs) as f64
}

/// Comparisons of a max-pooling layer.
pub fn pool_flops(channels: u64, kernel: u64, out_side: u64) -> f64 {
    (kernel * kernel * channels * out_side * out_side) as f64
}

const ACT_BITS: u64 = 32;

fn feature_bits(channels: u64, side: u64) -> f64 {
    (channels * side * side * ACT_BITS) as f64
}

/// Input side of the shipped profile.
pub const DEFAULT_INPUT_SIDE: u64 = 224;

fn pooled(side: u64) -> u64 {
    // 3x3 max pooling, stride 2
    (side - 3) / 2 + 1
}

/// AlexNet topology at 224x224 input resolution, with a BranchyNet-style exit
/// branch after the second convolution stage.
///
/// Assumptions: 8-bit input pixels, 32-bit activations, no local response
/// normalisation, `fc7` and the classifier `fc8` treated as one logical
/// layer, 1000 classes.
pub fn alexnet_spec() -> ProfileSpec {
    alexnet_spec_at(DEFAULT_INPUT_SIDE)
}

/// The same topology at a square input of `side` pixels (at least 67).
pub fn alexnet_spec_at(side_in: u64) -> ProfileSpec {
    // conv1 11x11/4 pad 2
    let c1 = (side_in + 4 - 11) / 4 + 1;
    let p1 = pooled(c1);
    // conv2 5x5 pad 2 keeps the side
    let p2 = pooled(p1);
    // conv3..5 3x3 pad 1 keep the side
    let p5 = pooled(p2);
    let classes = 1000;
    ProfileSpec {
        input_bits: (side_in * side_in * 3 * 8) as f64,
        exit_index: 2,
        layers: vec![
            DnnLayer::compute("conv1", conv_flops(3, 96, 11, c1, 1), feature_bits(96, c1)),
            DnnLayer::pool_down("pool1", pool_flops(96, 3, p1), feature_bits(96, p1)),
            DnnLayer::compute("conv2", conv_flops(96, 256, 5, p1, 2), feature_bits(256, p1)),
            DnnLayer::pool_down("pool2", pool_flops(256, 3, p2), feature_bits(256, p2)),
            DnnLayer::compute("conv3", conv_flops(256, 384, 3, p2, 1), feature_bits(384, p2)),
            DnnLayer::compute("conv4", conv_flops(384, 384, 3, p2, 2), feature_bits(384, p2)),
            DnnLayer::compute("conv5", conv_flops(384, 256, 3, p2, 2), feature_bits(256, p2)),
            DnnLayer::pool_down("pool5", pool_flops(256, 3, p5), feature_bits(256, p5)),
            DnnLayer::compute("fc6", fc_flops(256 * p5 * p5, 4096), (4096 * ACT_BITS) as f64),
            DnnLayer::compute(
                "fc7+fc8",
                fc_flops(4096, 4096) + fc_flops(4096, classes),
                (classes * ACT_BITS) as f64,
            ),
        ],
        exit_branch: DnnLayer {
            name: "exit".to_string(),
            kind: LayerKind::ExitBranch,
            // 3x3 conv 256->64 on the pooled conv2 map, then a linear classifier
            flops: conv_flops(256, 64, 3, p2, 1) + fc_flops(64 * p2 * p2, classes),
            output_bits: (classes * ACT_BITS) as f64,
            negligible: false,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SimConfig {
        SimConfig::default()
    }

    fn tiny(flops: &[f64]) -> Vec<DnnLayer> {
        flops
            .iter()
            .enumerate()
            .map(|(i, f)| DnnLayer::compute(&format!("l{i}"), *f, 1e6))
            .collect()
    }

    fn exit(flops: f64) -> DnnLayer {
        DnnLayer {
            name: "exit".into(),
            kind: LayerKind::ExitBranch,
            flops,
            output_bits: 32e3,
            negligible: false,
        }
    }

    #[test]
    fn device_delay_rounds_up_to_slots() {
        let p = derive_delays(tiny(&[5e7, 3e7, 1e6]), exit(2e7), 2, 1e6, &cfg()).unwrap();
        assert_eq!(p.device_slots(0), 0);
        assert_eq!(p.device_slots(1), 5);
        assert!((p.device_delay_s(1) - 0.05).abs() < 1e-15);
        assert_eq!(p.device_slots(2), 3);
        assert_eq!(p.device_slots(3), 2);
        assert!((p.edge_delay_s(1) - 0.001).abs() < 1e-18);
        // 1.5 slots of work takes two slots
        let p = derive_delays(tiny(&[1.5e7, 3e7, 1e6]), exit(2e7), 2, 1e6, &cfg()).unwrap();
        assert_eq!(p.device_slots(1), 2);
    }

    #[test]
    fn zero_slot_layer_is_rejected() {
        let err = derive_delays(tiny(&[0.0, 3e7, 1e6]), exit(2e7), 2, 1e6, &cfg());
        assert!(err.is_err());
    }

    #[test]
    fn exit_index_bounds() {
        assert!(derive_delays(tiny(&[5e7, 3e7]), exit(2e7), 2, 1e6, &cfg()).is_err());
        assert!(derive_delays(tiny(&[5e7, 3e7]), exit(2e7), 0, 1e6, &cfg()).is_err());
    }

    #[test]
    fn pool_down_merges_backwards() {
        let layers = vec![
            DnnLayer::compute("conv", 1e8, 8e6),
            DnnLayer::pool_down("pool", 1e5, 2e6),
        ];
        let merged = merge_negligible_layers(&layers).unwrap();
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].output_bits, 2e6);
        assert_eq!(merged[0].flops, 1e8 + 1e5);
    }

    #[test]
    fn pool_up_merges_forwards() {
        let layers = vec![
            DnnLayer::compute("conv0", 1e8, 2e6),
            DnnLayer::pool_up("unpool", 1e5, 8e6),
            DnnLayer::compute("conv", 1e8, 8e6),
        ];
        let merged = merge_negligible_layers(&layers).unwrap();
        assert_eq!(merged.len(), 2);
        assert_eq!(merged[1].name, "unpool+conv");
        // the boundary after conv0 (small output) survives
        assert_eq!(merged[0].output_bits, 2e6);
    }

    #[test]
    fn merge_without_negligible_is_identity() {
        let layers = tiny(&[1.0, 2.0, 3.0]);
        assert_eq!(merge_negligible_layers(&layers).unwrap(), layers);
    }

    #[test]
    fn misplaced_pooling_is_rejected() {
        assert!(merge_negligible_layers(&[DnnLayer::pool_down("p", 1.0, 1.0)]).is_err());
        let layers = vec![DnnLayer::compute("c", 1.0, 1.0), DnnLayer::pool_up("u", 1.0, 1.0)];
        assert!(merge_negligible_layers(&layers).is_err());
        let mut bad = DnnLayer::compute("c", 1.0, 1.0);
        bad.negligible = true;
        assert!(merge_negligible_layers(&[bad]).is_err());
    }

    #[test]
    fn merge_conserves_flops() {
        let spec = alexnet_spec();
        let raw: f64 = spec.layers.iter().map(|l| l.flops).sum();
        let merged: f64 = merge_negligible_layers(&spec.layers).unwrap().iter().map(|l| l.flops).sum();
        assert_eq!(raw, merged);
    }

    #[test]
    fn shipped_profile_shape() {
        let p = DnnProfile::default_for(&cfg());
        assert_eq!(p.num_layers(), 7);
        assert_eq!(p.exit_index(), 2);
        assert!(p.layers().iter().all(|l| !l.negligible));
        for l in 1..=p.device_only() {
            assert!(p.device_slots(l) >= 1);
        }
    }

    /// Counts multiply-accumulates of a convolution by walking every output
    /// element and every kernel tap inside the padded input.
    fn brute_force_conv_macs(in_ch: u64, side: i64, out_ch: u64, k: i64, stride: i64, pad: i64, groups: u64) -> u64 {
        let out_side = (side + 2 * pad - k) / stride + 1;
        let mut macs = 0u64;
        for _oc in 0..out_ch {
            for oy in 0..out_side {
                for ox in 0..out_side {
                    for _ic in 0..in_ch / groups {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = oy * stride + ky - pad;
                                let ix = ox * stride + kx - pad;
                                // padding taps are still multiplied in a dense implementation
                                let _inside = iy >= 0 && ix >= 0 && iy < side && ix < side;
                                macs += 1;
                            }
                        }
                    }
                }
            }
        }
        macs
    }

    #[test]
    fn conv1_flops_match_hand_count() {
        let spec = alexnet_spec();
        let macs = brute_force_conv_macs(3, DEFAULT_INPUT_SIDE as i64, 96, 11, 4, 2, 1);
        assert_eq!(spec.layers[0].flops, 2.0 * macs as f64);
        // pool1 folds into conv1: 96 channels, 27x27 output, 9 taps
        assert_eq!(spec.layers[1].flops, (96 * 27 * 27 * 9) as f64);
        let p = DnnProfile::default_for(&cfg());
        let expected_slots = ((2.0 * macs as f64 + (96 * 27 * 27 * 9) as f64) / 1e9 / 0.01).ceil() as u64;
        assert_eq!(p.device_slots(1), expected_slots);
    }

    #[test]
    fn standard_alexnet_feature_sides() {
        // 55 -> 27 -> 13 -> 6 at the standard resolution
        let spec = alexnet_spec_at(224);
        assert_eq!(spec.layers[0].output_bits, feature_bits(96, 55));
        assert_eq!(spec.layers[3].output_bits, feature_bits(256, 13));
        assert_eq!(spec.layers[7].output_bits, feature_bits(256, 6));
        assert_eq!(spec.layers[8].flops, fc_flops(9216, 4096));
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let spec = alexnet_spec();
        let text = spec.to_toml();
        let back: ProfileSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
