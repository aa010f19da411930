//! Bilinear kernel banks for transposed-convolution upsampling.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cost::upsample_params;
use crate::error::{Error, Result};
use crate::tensor::{conv_transposed, Filterbank, MacCounter, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BankMode {
    /// Every (input class, output class) pair gets the bilinear plane.
    Full,
    /// Only matching class pairs get the plane; cross-class planes are zero.
    Diagonal,
}

impl BankMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BankMode::Full => "full",
            BankMode::Diagonal => "diagonal",
        }
    }
}

/// `(divisor, center)` for one kernel axis.
pub fn find_params(size: usize) -> (f64, f64) {
    let divisor = size.div_ceil(2) as f64;
    let center = if size.is_multiple_of(2) {
        divisor - 0.5
    } else {
        divisor - 1.0
    };
    (divisor, center)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BilinearPlane {
    pub height: usize,
    pub width: usize,
    pub divisor_h: f64,
    pub divisor_w: f64,
    pub center_h: f64,
    pub center_w: f64,
    /// Row-major `height x width`.
    pub coefficients: Vec<f64>,
}

impl BilinearPlane {
    pub fn new(height: usize, width: usize) -> Self {
        let (divisor_h, center_h) = find_params(height);
        let (divisor_w, center_w) = find_params(width);
        let mut coefficients = Vec::with_capacity(height * width);
        for y in 0..height {
            let fy = 1.0 - (y as f64 - center_h).abs() / divisor_h;
            for x in 0..width {
                let fx = 1.0 - (x as f64 - center_w).abs() / divisor_w;
                coefficients.push(fy * fx);
            }
        }
        Self {
            height,
            width,
            divisor_h,
            divisor_w,
            center_h,
            center_w,
            coefficients,
        }
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.coefficients[y * self.width + x]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub mode: BankMode,
    /// Row-major `height x width x num_classes x num_classes`.
    pub planes: Vec<f64>,
}

impl KernelBank {
    pub fn at(&self, y: usize, x: usize, i: usize, j: usize) -> f64 {
        let c = self.num_classes;
        self.planes[((y * self.width + x) * c + i) * c + j]
    }

    /// The bank as transposed-convolution weights (`classes -> classes`).
    pub fn to_filterbank(&self) -> Result<Filterbank> {
        Filterbank::transposed(
            self.height,
            self.width,
            self.num_classes,
            self.num_classes,
            self.planes.clone(),
        )
    }

    /// CSV dump: header line `h,w,classes,mode`, then one coefficient per
    /// line in i -> j -> y -> x order.
    pub fn to_csv(&self) -> String {
        let n = self.height * self.width * self.num_classes * self.num_classes;
        let mut out = String::with_capacity(n * 20 + 32);
        let _ = writeln!(
            out,
            "{},{},{},{}",
            self.height,
            self.width,
            self.num_classes,
            self.mode.as_str()
        );
        for i in 0..self.num_classes {
            for j in 0..self.num_classes {
                for y in 0..self.height {
                    for x in 0..self.width {
                        let _ = writeln!(out, "{:.12e}", self.at(y, x, i, j));
                    }
                }
            }
        }
        out
    }
}

pub fn create_bilinear_kernels(
    num_classes: usize,
    kernel_dims: (usize, usize),
    mode: BankMode,
) -> Result<KernelBank> {
    let (height, width) = kernel_dims;
    if num_classes == 0 || height == 0 || width == 0 {
        return Err(Error::field(
            "kernel_dims",
            "class count and kernel dimensions must be >= 1",
        ));
    }
    let plane = BilinearPlane::new(height, width);
    let c = num_classes;
    let mut planes = vec![0.0; height * width * c * c];
    for y in 0..height {
        for x in 0..width {
            let v = plane.at(y, x);
            let base = (y * width + x) * c * c;
            for i in 0..c {
                match mode {
                    BankMode::Full => {
                        for j in 0..c {
                            planes[base + i * c + j] = v;
                        }
                    }
                    BankMode::Diagonal => planes[base + i * c + i] = v,
                }
            }
        }
    }
    Ok(KernelBank {
        height,
        width,
        num_classes,
        mode,
        planes,
    })
}

/// Upsamples by `factor` with a `2x`-sized bilinear bank via transposed
/// convolution.
pub fn upsample_transposed(input: &Tensor, factor: usize, mode: BankMode) -> Result<Tensor> {
    let p = upsample_params(factor)?;
    let bank = create_bilinear_kernels(input.channels(), (p.kernel, p.kernel), mode)?;
    conv_transposed(input, &bank.to_filterbank()?, p.stride, p.pad, &mut MacCounter::new())
}

/// Direct gather-style bilinear interpolation.
///
/// Output pixel `q` samples the input at `u = (q - (x - 1) / 2) / x` with
/// linear weights on the two neighbouring pixels, channel by channel. Border
/// samples clamp `u` into the input range.
pub fn bilinear_upsample_reference(input: &Tensor, factor: usize) -> Result<Tensor> {
    if factor < 2 || !factor.is_multiple_of(2) {
        return Err(Error::field(
            "factor",
            format!("upsampling factor must be even and >= 2, got {factor}"),
        ));
    }
    let (h, w, c) = input.shape();
    let mut out = Tensor::zeros(h * factor, w * factor, c)?;
    let axis = |q: usize, n: usize| -> (usize, usize, f64) {
        let u = (q as f64 - (factor as f64 - 1.0) / 2.0) / factor as f64;
        let u = u.clamp(0.0, (n - 1) as f64);
        let lo = u.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        (lo, hi, u - lo as f64)
    };
    for qy in 0..h * factor {
        let (y0, y1, ty) = axis(qy, h);
        for qx in 0..w * factor {
            let (x0, x1, tx) = axis(qx, w);
            for ch in 0..c {
                let top = input.get(y0, x0, ch) * (1.0 - tx) + input.get(y0, x1, ch) * tx;
                let bottom = input.get(y1, x0, ch) * (1.0 - tx) + input.get(y1, x1, ch) * tx;
                out.set(qy, qx, ch, top * (1.0 - ty) + bottom * ty);
            }
        }
    }
    Ok(out)
}

/// Output rows/columns that receive a full set of contributions: `[x/2, n*x - x/2)`.
pub fn interior_range(input_len: usize, factor: usize) -> std::ops::Range<usize> {
    factor / 2..input_len * factor - factor / 2
}

/// Largest absolute difference between two tensors over the interior window.
pub fn max_interior_deviation(a: &Tensor, b: &Tensor, input_h: usize, input_w: usize, factor: usize) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let mut worst = 0.0f64;
    for y in interior_range(input_h, factor) {
        for x in interior_range(input_w, factor) {
            for c in 0..a.channels() {
                worst = worst.max((a.get(y, x, c) - b.get(y, x, c)).abs());
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outer(p: &[f64]) -> Vec<f64> {
        p.iter().flat_map(|a| p.iter().map(move |b| a * b)).collect()
    }

    #[test]
    fn params() {
        assert_eq!(find_params(64), (32.0, 31.5));
        assert_eq!(find_params(3), (2.0, 1.0));
        assert_eq!(find_params(4), (2.0, 1.5));
        assert_eq!(find_params(1), (1.0, 0.0));
    }

    #[test]
    fn hand_traced_planes() {
        let b = create_bilinear_kernels(1, (3, 3), BankMode::Full).unwrap();
        for (got, want) in b.planes.iter().zip(outer(&[0.5, 1.0, 0.5])) {
            assert!((got - want).abs() < 1e-12);
        }
        let b = create_bilinear_kernels(1, (4, 4), BankMode::Full).unwrap();
        for (got, want) in b.planes.iter().zip(outer(&[0.25, 0.75, 0.75, 0.25])) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn full_bank_planes_identical() {
        let b = create_bilinear_kernels(7, (64, 64), BankMode::Full).unwrap();
        let single = BilinearPlane::new(64, 64);
        for y in 0..64 {
            for x in 0..64 {
                for i in 0..7 {
                    for j in 0..7 {
                        assert_eq!(b.at(y, x, i, j), single.at(y, x));
                    }
                }
            }
        }
    }

    #[test]
    fn diagonal_bank_zero_off_diagonal() {
        let b = create_bilinear_kernels(3, (4, 4), BankMode::Diagonal).unwrap();
        let single = BilinearPlane::new(4, 4);
        for y in 0..4 {
            for x in 0..4 {
                for i in 0..3 {
                    for j in 0..3 {
                        let want = if i == j { single.at(y, x) } else { 0.0 };
                        assert_eq!(b.at(y, x, i, j), want);
                    }
                }
            }
        }
    }

    #[test]
    fn plane_range_and_peak() {
        for size in 1..20 {
            let p = BilinearPlane::new(size, size);
            let max = p.coefficients.iter().cloned().fold(f64::MIN, f64::max);
            assert!(p.coefficients.iter().all(|&v| (0.0..=1.0).contains(&v)));
            let c = (size - 1) / 2;
            assert_eq!(p.at(c, c), max);
        }
    }

    #[test]
    fn reference_tent_example() {
        let x = Tensor::from_vec(1, 2, 1, vec![0.0, 2.0]).unwrap();
        let y = bilinear_upsample_reference(&x, 2).unwrap();
        let row: Vec<f64> = (0..4).map(|q| y.get(0, q, 0)).collect();
        assert_eq!(row, vec![0.0, 0.5, 1.5, 2.0]);
        assert!(bilinear_upsample_reference(&x, 3).is_err());
    }

    #[test]
    fn reference_constant() {
        let x = Tensor::filled(3, 4, 2, 2.5).unwrap();
        let y = bilinear_upsample_reference(&x, 4).unwrap();
        assert!(y.data().iter().all(|&v| (v - 2.5).abs() < 1e-15));
    }

    #[test]
    fn transposed_matches_reference_small() {
        let data: Vec<f64> = (0..20).map(|i| ((i * 7) % 11) as f64).collect();
        let x = Tensor::from_vec(4, 5, 1, data).unwrap();
        for factor in [2, 4, 6] {
            let a = upsample_transposed(&x, factor, BankMode::Diagonal).unwrap();
            let b = bilinear_upsample_reference(&x, factor).unwrap();
            assert!(max_interior_deviation(&a, &b, 4, 5, factor).unwrap() < 1e-12);
        }
    }

    #[test]
    fn csv_dump_shape() {
        let b = create_bilinear_kernels(2, (3, 3), BankMode::Diagonal).unwrap();
        let csv = b.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("3,3,2,diagonal"));
        let vals: Vec<f64> = lines.map(|l| l.parse().unwrap()).collect();
        assert_eq!(vals.len(), 36);
        assert_eq!(vals[4], 1.0); // (i=0, j=0, y=1, x=1)
        assert_eq!(vals[9 + 4], 0.0); // (i=0, j=1)
    }
}
