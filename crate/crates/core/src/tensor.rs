//! Naive dense convolution engine with an exact multiply-accumulate counter.
//!
//! Every routine here is a direct loop nest over the output (or, for the
//! transposed case, the input) so that the number of scalar multiply-adds is
//! visible by inspection. The counter is the brute-force oracle the analytic
//! cost model is checked against.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// A feature map stored row-major in height, width, channel order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::from_vec(height, width, channels, vec![0.0; height * width * channels])
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::from_vec(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::shape(format!(
                "tensor dimensions must be >= 1, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::shape(format!(
                "expected {} values for a {height}x{width}x{channels} tensor, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f64) {
        let i = self.index(y, x, c);
        self.data[i] = value;
    }

    /// Element-wise inner product of two equally shaped tensors.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "dot of {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    /// Parses the CSV form: a header line `h,w,c` carrying the dimensions,
    /// followed by `h*w*c` values (one per line or comma separated).
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::shape("empty tensor file"))?;
        let dims: Vec<usize> = header
            .split(',')
            .map(|t| t.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::shape(format!("bad tensor header `{header}`: {e}")))?;
        let [h, w, c] = dims[..] else {
            return Err(Error::shape(format!(
                "tensor header must be `h,w,c`, got `{header}`"
            )));
        };
        let mut data = Vec::with_capacity(h * w * c);
        for (lineno, line) in lines.enumerate() {
            for tok in line.split(',') {
                let tok = tok.trim();
                if tok.is_empty() {
                    continue;
                }
                let v = tok.parse::<f64>().map_err(|e| {
                    Error::shape(format!("value line {}: `{tok}`: {e}", lineno + 2))
                })?;
                data.push(v);
            }
        }
        Self::from_vec(h, w, c, data)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.data.len() * 20);
        let _ = writeln!(out, "{},{},{}", self.height, self.width, self.channels);
        for v in &self.data {
            let _ = writeln!(out, "{v:.17e}");
        }
        out
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    Standard,
    Depthwise,
    Pointwise,
    Transposed,
}

/// Convolution weights.
///
/// Layouts (row-major):
/// - standard / transposed: `kernel_h x kernel_w x in_channels x out_channels`
/// - depthwise: `kernel_h x kernel_w x in_channels`
/// - pointwise: `in_channels x out_channels`
#[derive(Debug, Clone, PartialEq)]
pub struct Filterbank {
    kind: FilterKind,
    kernel_h: usize,
    kernel_w: usize,
    in_channels: usize,
    out_channels: usize,
    weights: Vec<f64>,
}

impl Filterbank {
    pub fn new(
        kind: FilterKind,
        kernel_h: usize,
        kernel_w: usize,
        in_channels: usize,
        out_channels: usize,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if kernel_h == 0 || kernel_w == 0 || in_channels == 0 || out_channels == 0 {
            return Err(Error::shape("filterbank dimensions must be >= 1"));
        }
        let expected = match kind {
            FilterKind::Standard | FilterKind::Transposed => {
                kernel_h * kernel_w * in_channels * out_channels
            }
            FilterKind::Depthwise => {
                if out_channels != in_channels {
                    return Err(Error::shape(format!(
                        "depthwise filterbank must have out_channels == in_channels, got {in_channels} -> {out_channels}"
                    )));
                }
                kernel_h * kernel_w * in_channels
            }
            FilterKind::Pointwise => {
                if kernel_h != 1 || kernel_w != 1 {
                    return Err(Error::shape(format!(
                        "pointwise filterbank must be 1x1, got {kernel_h}x{kernel_w}"
                    )));
                }
                in_channels * out_channels
            }
        };
        if weights.len() != expected {
            return Err(Error::shape(format!(
                "{kind:?} filterbank expects {expected} weights, got {}",
                weights.len()
            )));
        }
        Ok(Self {
            kind,
            kernel_h,
            kernel_w,
            in_channels,
            out_channels,
            weights,
        })
    }

    pub fn depthwise(kernel_h: usize, kernel_w: usize, channels: usize, weights: Vec<f64>) -> Result<Self> {
        Self::new(FilterKind::Depthwise, kernel_h, kernel_w, channels, channels, weights)
    }

    pub fn pointwise(in_channels: usize, out_channels: usize, weights: Vec<f64>) -> Result<Self> {
        Self::new(FilterKind::Pointwise, 1, 1, in_channels, out_channels, weights)
    }

    pub fn standard(
        kernel_h: usize,
        kernel_w: usize,
        in_channels: usize,
        out_channels: usize,
        weights: Vec<f64>,
    ) -> Result<Self> {
        Self::new(FilterKind::Standard, kernel_h, kernel_w, in_channels, out_channels, weights)
    }

    pub fn transposed(
        kernel_h: usize,
        kernel_w: usize,
        in_channels: usize,
        out_channels: usize,
        weights: Vec<f64>,
    ) -> Result<Self> {
        Self::new(FilterKind::Transposed, kernel_h, kernel_w, in_channels, out_channels, weights)
    }

    pub fn kind(&self) -> FilterKind {
        self.kind
    }

    pub fn kernel_h(&self) -> usize {
        self.kernel_h
    }

    pub fn kernel_w(&self) -> usize {
        self.kernel_w
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    fn w4(&self, ky: usize, kx: usize, ci: usize, co: usize) -> f64 {
        self.weights[((ky * self.kernel_w + kx) * self.in_channels + ci) * self.out_channels + co]
    }
}

/// Exact count of scalar multiply-accumulates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MacCounter {
    macs: u64,
}

impl MacCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn macs(&self) -> u64 {
        self.macs
    }

    #[inline]
    fn tick(&mut self) {
        self.macs += 1;
    }
}

/// Forward output size `floor((i + 2p - k) / s) + 1`.
pub fn forward_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::shape("stride must be >= 1"));
    }
    let padded = input + 2 * pad;
    if padded < kernel {
        return Err(Error::shape(format!(
            "kernel {kernel} larger than padded input {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

fn expect_kind(f: &Filterbank, kind: FilterKind) -> Result<()> {
    if f.kind != kind {
        return Err(Error::shape(format!(
            "expected a {kind:?} filterbank, got {:?}",
            f.kind
        )));
    }
    Ok(())
}

fn expect_channels(input: &Tensor, f: &Filterbank) -> Result<()> {
    if f.in_channels != input.channels {
        return Err(Error::shape(format!(
            "filterbank expects {} input channels, tensor has {}",
            f.in_channels, input.channels
        )));
    }
    Ok(())
}

/// Reads a zero-padded input sample; `y`/`x` are coordinates in the padded frame.
#[inline]
fn padded(input: &Tensor, y: usize, x: usize, c: usize, pad: usize) -> f64 {
    if y < pad || x < pad {
        return 0.0;
    }
    let (iy, ix) = (y - pad, x - pad);
    if iy >= input.height || ix >= input.width {
        return 0.0;
    }
    input.get(iy, ix, c)
}

pub fn conv_depthwise(
    input: &Tensor,
    f: &Filterbank,
    stride: usize,
    pad: usize,
    counter: &mut MacCounter,
) -> Result<Tensor> {
    expect_kind(f, FilterKind::Depthwise)?;
    expect_channels(input, f)?;
    let out_h = forward_out_size(input.height, f.kernel_h, stride, pad)?;
    let out_w = forward_out_size(input.width, f.kernel_w, stride, pad)?;
    let c = input.channels;
    let mut out = Tensor::zeros(out_h, out_w, c)?;
    for oy in 0..out_h {
        for ox in 0..out_w {
            for ch in 0..c {
                let mut acc = 0.0;
                for ky in 0..f.kernel_h {
                    for kx in 0..f.kernel_w {
                        let v = padded(input, oy * stride + ky, ox * stride + kx, ch, pad);
                        acc += v * f.weights[(ky * f.kernel_w + kx) * c + ch];
                        counter.tick();
                    }
                }
                out.set(oy, ox, ch, acc);
            }
        }
    }
    Ok(out)
}

pub fn conv_pointwise(input: &Tensor, f: &Filterbank, counter: &mut MacCounter) -> Result<Tensor> {
    expect_kind(f, FilterKind::Pointwise)?;
    expect_channels(input, f)?;
    let (h, w, ci) = input.shape();
    let co = f.out_channels;
    let mut out = Tensor::zeros(h, w, co)?;
    for y in 0..h {
        for x in 0..w {
            for o in 0..co {
                let mut acc = 0.0;
                for i in 0..ci {
                    acc += input.get(y, x, i) * f.weights[i * co + o];
                    counter.tick();
                }
                out.set(y, x, o, acc);
            }
        }
    }
    Ok(out)
}

pub fn conv_standard(
    input: &Tensor,
    f: &Filterbank,
    stride: usize,
    pad: usize,
    counter: &mut MacCounter,
) -> Result<Tensor> {
    expect_kind(f, FilterKind::Standard)?;
    expect_channels(input, f)?;
    let out_h = forward_out_size(input.height, f.kernel_h, stride, pad)?;
    let out_w = forward_out_size(input.width, f.kernel_w, stride, pad)?;
    let mut out = Tensor::zeros(out_h, out_w, f.out_channels)?;
    for oy in 0..out_h {
        for ox in 0..out_w {
            for co in 0..f.out_channels {
                let mut acc = 0.0;
                for ky in 0..f.kernel_h {
                    for kx in 0..f.kernel_w {
                        for ci in 0..f.in_channels {
                            let v = padded(input, oy * stride + ky, ox * stride + kx, ci, pad);
                            acc += v * f.w4(ky, kx, ci, co);
                            counter.tick();
                        }
                    }
                }
                out.set(oy, ox, co, acc);
            }
        }
    }
    Ok(out)
}

/// Scatter-accumulate transposed convolution.
///
/// Each input pixel scales the whole kernel into a zeroed buffer of side
/// `(i - 1) * s + k`; `pad` rows and columns are then cropped from every side.
pub fn conv_transposed(
    input: &Tensor,
    f: &Filterbank,
    stride: usize,
    pad: usize,
    counter: &mut MacCounter,
) -> Result<Tensor> {
    expect_kind(f, FilterKind::Transposed)?;
    expect_channels(input, f)?;
    if stride == 0 {
        return Err(Error::shape("stride must be >= 1"));
    }
    let full_h = (input.height - 1) * stride + f.kernel_h;
    let full_w = (input.width - 1) * stride + f.kernel_w;
    if full_h <= 2 * pad || full_w <= 2 * pad {
        return Err(Error::shape(format!(
            "transposed output would be non-positive: {full_h}x{full_w} before cropping {pad}"
        )));
    }
    let co = f.out_channels;
    let mut full = vec![0.0; full_h * full_w * co];
    for iy in 0..input.height {
        for ix in 0..input.width {
            for ci in 0..input.channels {
                let v = input.get(iy, ix, ci);
                for ky in 0..f.kernel_h {
                    for kx in 0..f.kernel_w {
                        let base = ((iy * stride + ky) * full_w + ix * stride + kx) * co;
                        for o in 0..co {
                            full[base + o] += v * f.w4(ky, kx, ci, o);
                            counter.tick();
                        }
                    }
                }
            }
        }
    }
    let out_h = full_h - 2 * pad;
    let out_w = full_w - 2 * pad;
    let mut out = Tensor::zeros(out_h, out_w, co)?;
    for y in 0..out_h {
        for x in 0..out_w {
            let base = ((y + pad) * full_w + x + pad) * co;
            for o in 0..co {
                out.set(y, x, o, full[base + o]);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize, c: usize) -> Tensor {
        let data = (0..h * w * c).map(|i| (i as f64 * 0.37).sin()).collect();
        Tensor::from_vec(h, w, c, data).unwrap()
    }

    #[test]
    fn depthwise_same_padding_count() {
        let x = ramp(4, 4, 5);
        let f = Filterbank::depthwise(3, 3, 5, vec![0.1; 45]).unwrap();
        let mut n = MacCounter::new();
        let y = conv_depthwise(&x, &f, 1, 1, &mut n).unwrap();
        assert_eq!(y.shape(), (4, 4, 5));
        assert_eq!(n.macs(), 720);
    }

    #[test]
    fn depthwise_all_ones_corner() {
        let x = Tensor::filled(2, 2, 1, 1.0).unwrap();
        let f = Filterbank::depthwise(3, 3, 1, vec![1.0; 9]).unwrap();
        let y = conv_depthwise(&x, &f, 1, 1, &mut MacCounter::new()).unwrap();
        for (yy, xx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            assert_eq!(y.get(yy, xx, 0), 4.0);
        }
    }

    #[test]
    fn depthwise_rejects_bad_shapes() {
        let x = ramp(4, 4, 3);
        let f = Filterbank::depthwise(3, 3, 2, vec![0.0; 18]).unwrap();
        assert!(matches!(
            conv_depthwise(&x, &f, 1, 1, &mut MacCounter::new()),
            Err(Error::Shape(_))
        ));
        let f = Filterbank::depthwise(7, 7, 3, vec![0.0; 147]).unwrap();
        assert!(conv_depthwise(&ramp(2, 2, 3), &f, 1, 0, &mut MacCounter::new()).is_err());
        assert!(Filterbank::new(FilterKind::Depthwise, 3, 3, 2, 4, vec![0.0; 18]).is_err());
    }

    #[test]
    fn pointwise_count_and_dot() {
        let x = ramp(4, 4, 5);
        let f = Filterbank::pointwise(5, 8, vec![0.5; 40]).unwrap();
        let mut n = MacCounter::new();
        let y = conv_pointwise(&x, &f, &mut n).unwrap();
        assert_eq!(y.shape(), (4, 4, 8));
        assert_eq!(n.macs(), 640);

        let x = Tensor::from_vec(1, 1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let f = Filterbank::pointwise(3, 1, vec![1.0, 1.0, 1.0]).unwrap();
        let y = conv_pointwise(&x, &f, &mut MacCounter::new()).unwrap();
        assert_eq!(y.data(), &[6.0]);
    }

    #[test]
    fn pointwise_identity() {
        let x = ramp(3, 5, 4);
        let mut eye = vec![0.0; 16];
        for i in 0..4 {
            eye[i * 4 + i] = 1.0;
        }
        let f = Filterbank::pointwise(4, 4, eye).unwrap();
        let y = conv_pointwise(&x, &f, &mut MacCounter::new()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn pointwise_channel_mismatch() {
        let f = Filterbank::pointwise(4, 4, vec![0.0; 16]).unwrap();
        assert!(matches!(
            conv_pointwise(&ramp(2, 2, 3), &f, &mut MacCounter::new()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn standard_count_and_zero_input() {
        let x = Tensor::zeros(4, 4, 5).unwrap();
        let f = Filterbank::standard(3, 3, 5, 8, vec![1.0; 360]).unwrap();
        let mut n = MacCounter::new();
        let y = conv_standard(&x, &f, 1, 1, &mut n).unwrap();
        assert_eq!(n.macs(), 5760);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standard_1x1_matches_pointwise() {
        let x = ramp(5, 3, 4);
        let w: Vec<f64> = (0..12).map(|i| i as f64 - 5.5).collect();
        let (mut a, mut b) = (MacCounter::new(), MacCounter::new());
        let ys = conv_standard(&x, &Filterbank::standard(1, 1, 4, 3, w.clone()).unwrap(), 1, 0, &mut a).unwrap();
        let yp = conv_pointwise(&x, &Filterbank::pointwise(4, 3, w).unwrap(), &mut b).unwrap();
        assert_eq!(ys, yp);
        assert_eq!(a, b);
    }

    #[test]
    fn transposed_sizes() {
        let x = Tensor::filled(2, 2, 1, 1.0).unwrap();
        let f = Filterbank::transposed(3, 3, 1, 1, vec![1.0; 9]).unwrap();
        let y = conv_transposed(&x, &f, 1, 0, &mut MacCounter::new()).unwrap();
        assert_eq!(y.shape(), (4, 4, 1));
        // corners receive one stroke, the centre four receive all four
        assert_eq!(y.get(0, 0, 0), 1.0);
        assert_eq!(y.get(1, 1, 0), 4.0);

        let x = ramp(3, 2, 1);
        let f = Filterbank::transposed(1, 1, 1, 1, vec![1.0]).unwrap();
        assert_eq!(conv_transposed(&x, &f, 1, 0, &mut MacCounter::new()).unwrap(), x);

        let f = Filterbank::transposed(2, 2, 1, 1, vec![1.0; 4]).unwrap();
        let x = Tensor::filled(1, 1, 1, 1.0).unwrap();
        assert!(conv_transposed(&x, &f, 1, 1, &mut MacCounter::new()).is_err());
    }

    #[test]
    fn transposed_constant_with_bilinear_4x4() {
        // hand-built 4x4 bilinear plane, profile (0.25, 0.75, 0.75, 0.25)
        let p = [0.25, 0.75, 0.75, 0.25];
        let w: Vec<f64> = (0..16).map(|i| p[i / 4] * p[i % 4]).collect();
        let f = Filterbank::transposed(4, 4, 1, 1, w).unwrap();
        let x = Tensor::filled(3, 3, 1, 1.0).unwrap();
        let y = conv_transposed(&x, &f, 2, 1, &mut MacCounter::new()).unwrap();
        assert_eq!(y.shape(), (6, 6, 1));
        for yy in 1..5 {
            for xx in 1..5 {
                assert!((y.get(yy, xx, 0) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let x = ramp(2, 3, 2);
        let back = Tensor::parse_csv(&x.to_csv()).unwrap();
        assert_eq!(back, x);
        assert!(Tensor::parse_csv("2,2\n1\n").is_err());
        assert!(Tensor::parse_csv("1,1,2\n1\n").is_err());
    }
}
