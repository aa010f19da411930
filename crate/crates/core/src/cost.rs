//! Analytic multiply-accumulate accounting for layers and whole networks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::forward_out_size;

/// Downsampling factor the backbone must reach before the upsampler.
pub const DOWNSAMPLE_FACTOR: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    /// Depthwise spatial convolution, one filter per channel.
    Separable,
    Pointwise,
    #[serde(rename = "classifier_1x1")]
    Classifier1x1,
    TransposedUpsample,
    Standard,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Separable => "separable",
            LayerKind::Pointwise => "pointwise",
            LayerKind::Classifier1x1 => "classifier_1x1",
            LayerKind::TransposedUpsample => "transposed_upsample",
            LayerKind::Standard => "standard",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_channels: usize,
    pub out_filters: usize,
}

impl LayerSpec {
    /// Depthwise k x k with SAME padding; channel count is preserved.
    pub fn depthwise(kernel: usize, stride: usize, channels: usize) -> Self {
        Self {
            kind: LayerKind::Separable,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            pad: (kernel - 1) / 2,
            in_channels: channels,
            out_filters: channels,
        }
    }

    pub fn pointwise(in_channels: usize, out_filters: usize) -> Self {
        Self {
            kind: LayerKind::Pointwise,
            kernel_h: 1,
            kernel_w: 1,
            stride: 1,
            pad: 0,
            in_channels,
            out_filters,
        }
    }

    pub fn classifier(in_channels: usize, classes: usize) -> Self {
        Self {
            kind: LayerKind::Classifier1x1,
            ..Self::pointwise(in_channels, classes)
        }
    }

    pub fn standard(kernel: usize, stride: usize, in_channels: usize, out_filters: usize) -> Self {
        Self {
            kind: LayerKind::Standard,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            pad: (kernel - 1) / 2,
            in_channels,
            out_filters,
        }
    }

    pub fn transposed(params: UpsampleParams, channels: usize) -> Self {
        Self {
            kind: LayerKind::TransposedUpsample,
            kernel_h: params.kernel,
            kernel_w: params.kernel,
            stride: params.stride,
            pad: params.pad,
            in_channels: channels,
            out_filters: channels,
        }
    }

    /// Depthwise-separable pair: depthwise k x k then pointwise to `out_filters`.
    pub fn dsp_pair(kernel: usize, stride: usize, in_channels: usize, out_filters: usize) -> [Self; 2] {
        [
            Self::depthwise(kernel, stride, in_channels),
            Self::pointwise(in_channels, out_filters),
        ]
    }

    fn validate(&self, index: usize) -> Result<()> {
        if self.kernel_h == 0 || self.kernel_w == 0 || self.stride == 0 {
            return Err(Error::structural(index, "kernel and stride must be >= 1"));
        }
        if self.in_channels == 0 || self.out_filters == 0 {
            return Err(Error::structural(index, "channel counts must be >= 1"));
        }
        match self.kind {
            LayerKind::Separable if self.out_filters != self.in_channels => Err(Error::structural(
                index,
                format!(
                    "depthwise layer must preserve channels ({} -> {})",
                    self.in_channels, self.out_filters
                ),
            )),
            LayerKind::Pointwise | LayerKind::Classifier1x1
                if self.kernel_h != 1 || self.kernel_w != 1 || self.stride != 1 || self.pad != 0 =>
            {
                Err(Error::structural(
                    index,
                    format!("{} layer must be 1x1, stride 1, no padding", self.kind.as_str()),
                ))
            }
            _ => Ok(()),
        }
    }

    /// Output spatial size for an input of `h x w`.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match self.kind {
            LayerKind::TransposedUpsample => Ok((
                transposed_out_size(h, self.stride, self.kernel_h, self.pad)?,
                transposed_out_size(w, self.stride, self.kernel_w, self.pad)?,
            )),
            _ => Ok((
                forward_out_size(h, self.kernel_h, self.stride, self.pad)?,
                forward_out_size(w, self.kernel_w, self.stride, self.pad)?,
            )),
        }
    }

    /// MACs of this layer given its input spatial size.
    pub fn macs(&self, in_h: usize, in_w: usize) -> Result<u64> {
        let (oh, ow) = self.output_size(in_h, in_w)?;
        let (oh, ow) = (oh as u64, ow as u64);
        let (kh, kw) = (self.kernel_h as u64, self.kernel_w as u64);
        let (ci, nf) = (self.in_channels as u64, self.out_filters as u64);
        Ok(match self.kind {
            LayerKind::Separable => mac_separable(oh, ow, ci, kh, kw),
            LayerKind::Pointwise | LayerKind::Classifier1x1 => mac_pointwise(oh, ow, ci, nf),
            LayerKind::Standard => oh * ow * ci * kh * kw * nf,
            // scatter form: every input pixel drives the full kernel
            LayerKind::TransposedUpsample => in_h as u64 * in_w as u64 * ci * kh * kw * nf,
        })
    }
}

/// Depthwise MACs: `out_h * out_w * c_i * h_f * w_f`.
pub fn mac_separable(out_h: u64, out_w: u64, c_i: u64, h_f: u64, w_f: u64) -> u64 {
    out_h * out_w * c_i * h_f * w_f
}

pub fn mac_pointwise(out_h: u64, out_w: u64, c_i: u64, n_f: u64) -> u64 {
    out_h * out_w * c_i * n_f
}

/// Depthwise + pointwise, in factored form `h_o * w_o * c_i * (h_f * w_f + n_f)`.
pub fn mac_dsp(out_h: u64, out_w: u64, c_i: u64, h_f: u64, w_f: u64, n_f: u64) -> u64 {
    out_h * out_w * c_i * (h_f * w_f + n_f)
}

/// Classical-to-separable cost ratio `(h_f * w_f * n_f) / (h_f * w_f + n_f)`.
pub fn reduction_factor(h_f: u64, w_f: u64, n_f: u64) -> f64 {
    let area = (h_f * w_f) as f64;
    area * n_f as f64 / (area + n_f as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpsampleParams {
    pub factor: usize,
    pub stride: usize,
    pub kernel: usize,
    pub pad: usize,
}

/// Transposed-convolution parameters `(s, k, p) = (x, 2x, x/2)` that scale a
/// feature map by exactly `x`.
pub fn upsample_params(factor: usize) -> Result<UpsampleParams> {
    if factor < 2 || !factor.is_multiple_of(2) {
        return Err(Error::field(
            "factor",
            format!("upsampling factor must be even and >= 2, got {factor}"),
        ));
    }
    Ok(UpsampleParams {
        factor,
        stride: factor,
        kernel: 2 * factor,
        pad: factor / 2,
    })
}

/// `o = (i - 1) * s + k - 2p`.
pub fn transposed_out_size(input: usize, stride: usize, kernel: usize, pad: usize) -> Result<usize> {
    if input == 0 {
        return Err(Error::shape("transposed input size must be >= 1"));
    }
    let full = (input - 1) * stride + kernel;
    if full <= 2 * pad {
        return Err(Error::shape(format!(
            "transposed output size non-positive: ({input} - 1) * {stride} + {kernel} - 2 * {pad}"
        )));
    }
    Ok(full - 2 * pad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerCost {
    pub index: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostReport {
    pub per_layer: Vec<LayerCost>,
    pub total_macs: u64,
    pub total_ops: u64,
    pub megaops: f64,
}

impl CostReport {
    fn from_layers(per_layer: Vec<LayerCost>) -> Self {
        let total_macs = per_layer.iter().map(|l| l.macs).sum();
        Self {
            per_layer,
            total_macs,
            total_ops: 2 * total_macs,
            megaops: total_macs as f64 / 1e6,
        }
    }

    /// Plain-text table; `layers` supplies the kind column when available.
    pub fn to_table(&self, layers: Option<&[LayerSpec]>) -> String {
        let mut out = format!(
            "{:>5}  {:<20} {:>7} {:>7} {:>16}\n",
            "layer", "kind", "out_h", "out_w", "macs"
        );
        for l in &self.per_layer {
            let kind = layers
                .and_then(|ls| ls.get(l.index))
                .map_or("-", |s| s.kind.as_str());
            out.push_str(&format!(
                "{:>5}  {:<20} {:>7} {:>7} {:>16}\n",
                l.index, kind, l.out_h, l.out_w, group_digits(l.macs)
            ));
        }
        out.push_str(&format!("total_macs  {}\n", group_digits(self.total_macs)));
        out.push_str(&format!("total_ops   {}\n", group_digits(self.total_ops)));
        out.push_str(&format!("megaops     {:.6}\n", self.megaops));
        out
    }
}

pub(crate) fn group_digits(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::with_capacity(s.len() + s.len() / 3);
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// Checks channel chaining and the stride-32 rule, then accumulates per-layer
/// costs with spatial sizes propagated forward.
pub fn network_cost(layers: &[LayerSpec], input_h: usize, input_w: usize) -> Result<CostReport> {
    let (mut h, mut w) = (input_h, input_w);
    let mut cumulative_stride = 1usize;
    let mut per_layer = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        layer.validate(i)?;
        if i > 0 && layers[i - 1].out_filters != layer.in_channels {
            return Err(Error::structural(
                i,
                format!(
                    "expects {} input channels but layer {} produces {}",
                    layer.in_channels,
                    i - 1,
                    layers[i - 1].out_filters
                ),
            ));
        }
        if layer.kind == LayerKind::TransposedUpsample {
            if cumulative_stride != DOWNSAMPLE_FACTOR {
                return Err(Error::structural(
                    i,
                    format!(
                        "cumulative stride before the upsampler is {cumulative_stride}, expected {DOWNSAMPLE_FACTOR}"
                    ),
                ));
            }
        } else {
            cumulative_stride *= layer.stride;
        }
        let macs = layer.macs(h, w).map_err(|e| Error::structural(i, e.to_string()))?;
        let (oh, ow) = layer.output_size(h, w).map_err(|e| Error::structural(i, e.to_string()))?;
        per_layer.push(LayerCost {
            index: i,
            out_h: oh,
            out_w: ow,
            macs,
        });
        h = oh;
        w = ow;
    }
    Ok(CostReport::from_layers(per_layer))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE_II: [(usize, u64); 7] = [
        (8, 1_360),
        (256, 21_200),
        (512, 41_680),
        (768, 62_160),
        (1024, 82_640),
        (1280, 103_120),
        (2048, 164_560),
    ];

    #[test]
    fn single_layer_formulas() {
        assert_eq!(mac_separable(4, 4, 5, 3, 3), 720);
        assert_eq!(mac_separable(1, 1, 1, 1, 1), 1);
        assert_eq!(mac_pointwise(4, 4, 5, 8), 640);
        assert_eq!(mac_pointwise(4, 4, 5, 1024), 81_920);
        assert_eq!(mac_separable(4, 4, 5, 3, 3) + mac_pointwise(4, 4, 5, 1024), 82_640);
        for (nf, expected) in TABLE_II {
            assert_eq!(mac_dsp(4, 4, 5, 3, 3, nf as u64), expected);
        }
    }

    #[test]
    fn reduction_factor_values() {
        assert!((reduction_factor(3, 3, 1024) - 9216.0 / 1033.0).abs() < 1e-12);
        assert!((reduction_factor(3, 3, 1024) - 8.9216).abs() < 1e-4);
        assert_eq!(reduction_factor(1, 1, 1), 0.5);
        let mut prev = 0.0;
        for nf in [1, 2, 8, 64, 1024, 1 << 20] {
            let r = reduction_factor(3, 3, nf);
            assert!(r > prev && r < 9.0);
            prev = r;
        }
    }

    #[test]
    fn upsample_parameterisation() {
        let p = upsample_params(32).unwrap();
        assert_eq!((p.stride, p.kernel, p.pad), (32, 64, 16));
        let p = upsample_params(2).unwrap();
        assert_eq!((p.stride, p.kernel, p.pad), (2, 4, 1));
        let p = upsample_params(4).unwrap();
        assert_eq!(transposed_out_size(7, p.stride, p.kernel, p.pad).unwrap(), 28);
        assert!(upsample_params(3).is_err());
        assert!(upsample_params(0).is_err());
        for x in (2..=64).step_by(2) {
            let p = upsample_params(x).unwrap();
            for i in 1..40 {
                assert_eq!(transposed_out_size(i, p.stride, p.kernel, p.pad).unwrap(), x * i);
            }
        }
    }

    #[test]
    fn transposed_sizes() {
        assert_eq!(transposed_out_size(2, 1, 3, 0).unwrap(), 4);
        assert_eq!(transposed_out_size(1, 1, 1, 0).unwrap(), 1);
        assert_eq!(transposed_out_size(5, 2, 4, 1).unwrap(), 10);
        assert!(transposed_out_size(1, 1, 2, 1).is_err());
    }

    #[test]
    fn width_sweep_table_network() {
        for (nf, expected) in TABLE_II {
            let layers = LayerSpec::dsp_pair(3, 1, 5, nf);
            let r = network_cost(&layers, 4, 4).unwrap();
            assert_eq!(r.total_macs, expected);
            assert_eq!(r.total_ops, 2 * expected);
        }
    }

    #[test]
    fn empty_network() {
        let r = network_cost(&[], 8, 8).unwrap();
        assert_eq!(r.total_macs, 0);
        assert!(r.per_layer.is_empty());
    }

    #[test]
    fn chain_break_names_layer() {
        let layers = [
            LayerSpec::depthwise(3, 1, 5),
            LayerSpec::pointwise(5, 16),
            LayerSpec::pointwise(8, 4),
        ];
        match network_cost(&layers, 4, 4) {
            Err(Error::Structural { layer, .. }) => assert_eq!(layer, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn upsampler_requires_stride_32() {
        let up = upsample_params(32).unwrap();
        let mut layers = vec![LayerSpec::standard(3, 2, 3, 8)];
        for _ in 0..3 {
            layers.extend(LayerSpec::dsp_pair(3, 2, 8, 8));
        }
        layers.push(LayerSpec::classifier(8, 2));
        layers.push(LayerSpec::transposed(up, 2));
        match network_cost(&layers, 64, 64) {
            Err(Error::Structural { layer, .. }) => assert_eq!(layer, layers.len() - 1),
            other => panic!("unexpected {other:?}"),
        }
        layers.insert(1, LayerSpec::depthwise(3, 2, 8));
        let r = network_cost(&layers, 64, 64).unwrap();
        let last = r.per_layer.last().unwrap();
        assert_eq!((last.out_h, last.out_w), (64, 64));
    }

    #[test]
    fn depthwise_must_preserve_channels() {
        let mut l = LayerSpec::depthwise(3, 1, 4);
        l.out_filters = 8;
        assert!(network_cost(&[l], 4, 4).is_err());
    }

    #[test]
    fn report_table_and_json() {
        let layers = LayerSpec::dsp_pair(3, 1, 5, 1024);
        let r = network_cost(&layers, 4, 4).unwrap();
        let table = r.to_table(Some(&layers));
        assert!(table.contains("82,640"));
        let json = serde_json::to_string(&r).unwrap();
        for key in ["per_layer", "total_macs", "total_ops", "megaops"] {
            assert!(json.contains(key));
        }
        let back: CostReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        assert_eq!(group_digits(164_560), "164,560");
        assert_eq!(group_digits(999), "999");
    }
}
