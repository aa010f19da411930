//! Runs a symbolic layer list through the naive engine and reports the
//! instrumented MAC count. Shares no arithmetic with the analytic cost model:
//! shapes come from the tensors the engine actually produces.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cost::{LayerKind, LayerSpec};
use crate::error::{Error, Result};
use crate::tensor::{
    conv_depthwise, conv_pointwise, conv_standard, conv_transposed, Filterbank, MacCounter, Tensor,
};

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Executes `layers` on a random `input_h x input_w` tensor. Returns the
/// final tensor and the per-layer counts.
pub fn execute(layers: &[LayerSpec], input_h: usize, input_w: usize, seed: u64) -> Result<(Tensor, Vec<u64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channels = layers.first().map_or(1, |l| l.in_channels);
    let mut x = Tensor::from_vec(
        input_h,
        input_w,
        channels,
        random_vec(&mut rng, input_h * input_w * channels),
    )?;
    let mut counts = Vec::with_capacity(layers.len());
    for (i, l) in layers.iter().enumerate() {
        let (kh, kw, ci, nf) = (l.kernel_h, l.kernel_w, l.in_channels, l.out_filters);
        let mut counter = MacCounter::new();
        let wrap = |e: Error| Error::structural(i, e.to_string());
        x = match l.kind {
            LayerKind::Separable => {
                let f = Filterbank::new(
                    crate::tensor::FilterKind::Depthwise,
                    kh,
                    kw,
                    ci,
                    nf,
                    random_vec(&mut rng, kh * kw * ci),
                )
                .map_err(wrap)?;
                conv_depthwise(&x, &f, l.stride, l.pad, &mut counter).map_err(wrap)?
            }
            LayerKind::Pointwise | LayerKind::Classifier1x1 => {
                if kh != 1 || kw != 1 || l.stride != 1 || l.pad != 0 {
                    return Err(Error::structural(i, "pointwise layer must be 1x1, stride 1, no padding"));
                }
                let f = Filterbank::pointwise(ci, nf, random_vec(&mut rng, ci * nf)).map_err(wrap)?;
                conv_pointwise(&x, &f, &mut counter).map_err(wrap)?
            }
            LayerKind::Standard => {
                let f = Filterbank::standard(kh, kw, ci, nf, random_vec(&mut rng, kh * kw * ci * nf))
                    .map_err(wrap)?;
                conv_standard(&x, &f, l.stride, l.pad, &mut counter).map_err(wrap)?
            }
            LayerKind::TransposedUpsample => {
                let f = Filterbank::transposed(kh, kw, ci, nf, random_vec(&mut rng, kh * kw * ci * nf))
                    .map_err(wrap)?;
                conv_transposed(&x, &f, l.stride, l.pad, &mut counter).map_err(wrap)?
            }
        };
        counts.push(counter.macs());
    }
    Ok((x, counts))
}

/// Total instrumented MACs for the layer list.
pub fn instrumented_macs(layers: &[LayerSpec], input_h: usize, input_w: usize) -> Result<u64> {
    Ok(execute(layers, input_h, input_w, 0)?.1.iter().sum())
}
