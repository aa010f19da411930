//! Symbolic model construction: backbone block specs, width scaling and the
//! FCN segmentation head.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cost::{upsample_params, LayerKind, LayerSpec, DOWNSAMPLE_FACTOR};
use crate::error::{Error, Result};

pub const WIDTH_MULTIPLIERS: [f64; 5] = [0.25, 0.5, 0.75, 1.0, 1.25];
pub const CLASSIFIER_DEPTHS: [usize; 4] = [512, 1024, 1536, 2048];
pub const CLASSIFIER_KERNELS: [usize; 5] = [3, 5, 7, 9, 11];

/// Input channels of the image fed to the stem.
pub const IMAGE_CHANNELS: usize = 3;

/// Reference backbones shipped with the repository.
pub const REFERENCE_LARGE: &str = include_str!("../../../block_specs/mnv4_style_large.json");
pub const REFERENCE_SMALL: &str = include_str!("../../../block_specs/mnv4_style_small.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// Depthwise k x k (with stride) followed by pointwise to `out_channels`.
    Separable,
    Pointwise,
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockEntry {
    pub kind: BlockKind,
    pub kernel: usize,
    pub stride: usize,
    pub out_channels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputDims {
    pub h: usize,
    pub w: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpecs {
    pub id: String,
    pub input: InputDims,
    pub layers: Vec<BlockEntry>,
    pub cumulative_stride: usize,
}

impl BlockSpecs {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let specs: BlockSpecs = serde_json::from_str(text).map_err(|e| Error::from_json(origin, e))?;
        specs.validate()?;
        Ok(specs)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// The two shipped backbones, larger first.
    pub fn reference() -> Vec<BlockSpecs> {
        [REFERENCE_LARGE, REFERENCE_SMALL]
            .iter()
            .map(|t| Self::parse(t, Path::new("<builtin>")).expect("shipped block specs are valid"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.trim().is_empty() {
            return Err(Error::field("id", "must not be empty"));
        }
        if self.layers.is_empty() {
            return Err(Error::field("layers", "at least one entry required"));
        }
        for (i, e) in self.layers.iter().enumerate() {
            let field = |name: &str| format!("layers[{i}].{name}");
            if e.kernel == 0 || e.kernel % 2 == 0 {
                return Err(Error::field(&field("kernel"), format!("must be odd and >= 1, got {}", e.kernel)));
            }
            if e.stride == 0 {
                return Err(Error::field(&field("stride"), "must be >= 1"));
            }
            if e.out_channels == 0 {
                return Err(Error::field(&field("out_channels"), "must be >= 1"));
            }
            if e.kind == BlockKind::Pointwise && (e.kernel != 1 || e.stride != 1) {
                return Err(Error::field(&field("kind"), "pointwise entries need kernel 1 and stride 1"));
            }
        }
        let product: usize = self.layers.iter().map(|e| e.stride).product();
        if product != self.cumulative_stride {
            return Err(Error::field(
                "cumulative_stride",
                format!("declared {} but entry strides multiply to {product}", self.cumulative_stride),
            ));
        }
        if self.cumulative_stride != DOWNSAMPLE_FACTOR {
            return Err(Error::field(
                "cumulative_stride",
                format!("must be {DOWNSAMPLE_FACTOR}, got {}", self.cumulative_stride),
            ));
        }
        if self.input.h == 0 || self.input.w == 0 || !self.input.h.is_multiple_of(32) || !self.input.w.is_multiple_of(32) {
            return Err(Error::field("input", "dimensions must be positive multiples of 32"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub width_multiplier: f64,
    pub classifier_depth: usize,
    pub classifier_kernel: usize,
    pub num_classes: usize,
    pub block_specs_id: String,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !WIDTH_MULTIPLIERS.contains(&self.width_multiplier) {
            return Err(Error::field(
                "width_multiplier",
                format!("{} not in {:?}", self.width_multiplier, WIDTH_MULTIPLIERS),
            ));
        }
        if !CLASSIFIER_DEPTHS.contains(&self.classifier_depth) {
            return Err(Error::field(
                "classifier_depth",
                format!("{} not in {:?}", self.classifier_depth, CLASSIFIER_DEPTHS),
            ));
        }
        if !CLASSIFIER_KERNELS.contains(&self.classifier_kernel) {
            return Err(Error::field(
                "classifier_kernel",
                format!("{} not in {:?}", self.classifier_kernel, CLASSIFIER_KERNELS),
            ));
        }
        if self.num_classes == 0 {
            return Err(Error::field("num_classes", "must be >= 1"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ModelConfig = serde_json::from_str(&text).map_err(|e| Error::from_json(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymbolicModel {
    pub layers: Vec<LayerSpec>,
    pub input_h: usize,
    pub input_w: usize,
    pub block_specs_id: String,
    pub config: ModelConfig,
}

/// Scales a channel count by `m`, snapping to the nearest multiple of 8
/// (never below 8).
pub fn scale_channels(base: usize, m: f64) -> usize {
    let scaled = base as f64 * m;
    let snapped = (scaled / 8.0).round() as usize * 8;
    snapped.max(8)
}

/// The four-layer segmentation head appended to a backbone.
pub fn build_fcn_head(backbone_out_channels: usize, cfg: &ModelConfig) -> Result<Vec<LayerSpec>> {
    cfg.validate()?;
    if backbone_out_channels == 0 {
        return Err(Error::field("backbone_out_channels", "must be >= 1"));
    }
    let up = upsample_params(DOWNSAMPLE_FACTOR)?;
    Ok(vec![
        LayerSpec::depthwise(cfg.classifier_kernel, 1, backbone_out_channels),
        LayerSpec::pointwise(backbone_out_channels, cfg.classifier_depth),
        LayerSpec::classifier(cfg.classifier_depth, cfg.num_classes),
        LayerSpec::transposed(up, cfg.num_classes),
    ])
}

/// Expands block specs into layers at the block-spec input resolution.
pub fn build_model(specs: &BlockSpecs, cfg: &ModelConfig) -> Result<SymbolicModel> {
    build_model_at(specs, cfg, specs.input.h, specs.input.w)
}

pub fn build_model_at(specs: &BlockSpecs, cfg: &ModelConfig, input_h: usize, input_w: usize) -> Result<SymbolicModel> {
    cfg.validate()?;
    if specs.id != cfg.block_specs_id {
        return Err(Error::field(
            "block_specs_id",
            format!("config names `{}` but block specs are `{}`", cfg.block_specs_id, specs.id),
        ));
    }
    if !input_h.is_multiple_of(DOWNSAMPLE_FACTOR) || !input_w.is_multiple_of(DOWNSAMPLE_FACTOR) || input_h == 0 || input_w == 0 {
        return Err(Error::field("input", format!("{input_h}x{input_w} is not a positive multiple of 32")));
    }
    let m = cfg.width_multiplier;
    let mut layers = Vec::new();
    let mut channels = IMAGE_CHANNELS;
    let mut stride = 1;
    for e in &specs.layers {
        let out = scale_channels(e.out_channels, m);
        match e.kind {
            BlockKind::Standard => layers.push(LayerSpec::standard(e.kernel, e.stride, channels, out)),
            BlockKind::Separable => layers.extend(LayerSpec::dsp_pair(e.kernel, e.stride, channels, out)),
            BlockKind::Pointwise => layers.push(LayerSpec::pointwise(channels, out)),
        }
        channels = out;
        stride *= e.stride;
    }
    if stride != DOWNSAMPLE_FACTOR {
        return Err(Error::structural(
            layers.len(),
            format!("backbone downsamples by {stride}, expected {DOWNSAMPLE_FACTOR}"),
        ));
    }
    layers.extend(build_fcn_head(channels, cfg)?);
    Ok(SymbolicModel {
        layers,
        input_h,
        input_w,
        block_specs_id: specs.id.clone(),
        config: cfg.clone(),
    })
}

impl SymbolicModel {
    pub fn head(&self) -> &[LayerSpec] {
        &self.layers[self.layers.len() - 4..]
    }

    /// Checks the head layout.
    pub fn check_head(&self) -> bool {
        let h = self.head();
        let cfg = &self.config;
        h[0].kind == LayerKind::Separable
            && h[0].kernel_h == cfg.classifier_kernel
            && h[0].kernel_w == cfg.classifier_kernel
            && h[0].stride == 1
            && h[1].kind == LayerKind::Pointwise
            && h[1].in_channels == h[0].out_filters
            && h[1].out_filters == cfg.classifier_depth
            && h[2].kind == LayerKind::Classifier1x1
            && h[2].in_channels == cfg.classifier_depth
            && h[2].out_filters == cfg.num_classes
            && h[3].kind == LayerKind::TransposedUpsample
            && (h[3].kernel_h, h[3].kernel_w, h[3].stride, h[3].pad) == (64, 64, 32, 16)
            && h[3].in_channels == cfg.num_classes
            && h[3].out_filters == cfg.num_classes
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::network_cost;

    fn cfg(m: f64, d: usize, k: usize, n: usize, id: &str) -> ModelConfig {
        ModelConfig {
            width_multiplier: m,
            classifier_depth: d,
            classifier_kernel: k,
            num_classes: n,
            block_specs_id: id.into(),
        }
    }

    #[test]
    fn channel_scaling() {
        assert_eq!(scale_channels(1024, 0.25), 256);
        assert_eq!(scale_channels(1024, 1.0), 1024);
        assert_eq!(scale_channels(1024, 1.25), 1280);
        assert_eq!(scale_channels(1024, 8.0 / 1024.0), 8);
        assert_eq!(scale_channels(1024, 2.0), 2048);
        assert_eq!(scale_channels(8, 0.25), 8);
        assert_eq!(scale_channels(100, 1.0), 104);
        assert_eq!(scale_channels(99, 1.0), 96);
    }

    #[test]
    fn head_layout() {
        let head = build_fcn_head(960, &cfg(1.0, 1024, 3, 7, "x")).unwrap();
        assert_eq!(head.len(), 4);
        assert_eq!(head[0], LayerSpec::depthwise(3, 1, 960));
        assert_eq!(head[1], LayerSpec::pointwise(960, 1024));
        assert_eq!(head[2], LayerSpec::classifier(1024, 7));
        assert_eq!(
            (head[3].kind, head[3].kernel_h, head[3].stride, head[3].pad, head[3].in_channels, head[3].out_filters),
            (LayerKind::TransposedUpsample, 64, 32, 16, 7, 7)
        );
        let head = build_fcn_head(960, &cfg(1.0, 1024, 3, 2, "x")).unwrap();
        assert_eq!(head[2].out_filters, 2);
        assert_eq!((head[3].in_channels, head[3].out_filters), (2, 2));
    }

    #[test]
    fn head_separable_macs_at_16x32() {
        let c = 432;
        let head = build_fcn_head(c, &cfg(1.0, 512, 11, 7, "x")).unwrap();
        assert_eq!(head[0].macs(16, 32).unwrap(), 16 * 32 * c as u64 * 121);
    }

    #[test]
    fn invalid_grid_values() {
        assert!(build_fcn_head(64, &cfg(0.3, 1024, 3, 7, "x")).is_err());
        assert!(build_fcn_head(64, &cfg(1.0, 1000, 3, 7, "x")).is_err());
        assert!(build_fcn_head(64, &cfg(1.0, 1024, 4, 7, "x")).is_err());
        assert!(build_fcn_head(64, &cfg(1.0, 1024, 3, 0, "x")).is_err());
    }

    #[test]
    fn reference_specs_load() {
        let specs = BlockSpecs::reference();
        assert_eq!(specs.len(), 2);
        for s in &specs {
            assert_eq!(s.cumulative_stride, 32);
            assert_eq!((s.input.h, s.input.w), (512, 1024));
        }
    }

    #[test]
    fn build_is_deterministic_and_restores_resolution() {
        let specs = &BlockSpecs::reference()[0];
        let c = cfg(1.0, 1024, 3, 7, &specs.id);
        let a = build_model(specs, &c).unwrap();
        let b = build_model(specs, &c).unwrap();
        assert_eq!(a, b);
        assert!(a.check_head());
        let r = network_cost(&a.layers, a.input_h, a.input_w).unwrap();
        let last = r.per_layer.last().unwrap();
        assert_eq!((last.out_h, last.out_w), (512, 1024));
        let before_head = &r.per_layer[r.per_layer.len() - 5];
        assert_eq!((before_head.out_h, before_head.out_w), (16, 32));
    }

    #[test]
    fn smaller_multiplier_costs_less() {
        let specs = &BlockSpecs::reference()[0];
        let small = build_model(specs, &cfg(0.25, 1024, 3, 7, &specs.id)).unwrap();
        let big = build_model(specs, &cfg(1.0, 1024, 3, 7, &specs.id)).unwrap();
        let cost = |m: &SymbolicModel| network_cost(&m.layers, m.input_h, m.input_w).unwrap().total_macs;
        assert!(cost(&small) < cost(&big));
    }

    #[test]
    fn mismatched_id_and_bad_stride() {
        let specs = &BlockSpecs::reference()[0];
        assert!(build_model(specs, &cfg(1.0, 1024, 3, 7, "other")).is_err());
        let bad = r#"{"id":"b","input":{"h":64,"w":64},"layers":[{"kind":"standard","kernel":3,"stride":2,"out_channels":8}],"cumulative_stride":2}"#;
        assert!(matches!(
            BlockSpecs::parse(bad, Path::new("bad.json")),
            Err(Error::InvalidField { ref field, .. }) if field == "cumulative_stride"
        ));
        let mismatch = r#"{"id":"b","input":{"h":64,"w":64},"layers":[{"kind":"standard","kernel":3,"stride":2,"out_channels":8}],"cumulative_stride":32}"#;
        assert!(BlockSpecs::parse(mismatch, Path::new("m.json")).is_err());
    }

    #[test]
    fn unknown_field_reports_position() {
        let text = "{\n  \"id\": \"b\",\n  \"bogus\": 1\n}";
        match BlockSpecs::parse(text, Path::new("u.json")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
