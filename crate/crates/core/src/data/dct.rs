//! Orthonormal type-II DCT on CHW images, one plane per channel.

use std::f64::consts::PI;

use super::vision::ImageShape;
use crate::error::{Error, Result};

/// `n × n` orthonormal DCT-II basis, row `k` holds frequency `k`.
fn basis(n: usize) -> Vec<f64> {
    let mut b = vec![0.0; n * n];
    for k in 0..n {
        let alpha = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for i in 0..n {
            b[k * n + i] = alpha * (PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos();
        }
    }
    b
}

fn transform(x: &[f64], shape: ImageShape, inverse: bool) -> Result<Vec<f64>> {
    if x.len() != shape.len() {
        return Err(Error::Shape(format!(
            "image has {} values, shape needs {}",
            x.len(),
            shape.len()
        )));
    }
    let (h, w) = (shape.height, shape.width);
    let bh = basis(h);
    let bw = basis(w);
    let mut out = vec![0.0; x.len()];
    let mut tmp = vec![0.0; h * w];
    for c in 0..shape.channels {
        let plane = &x[c * h * w..(c + 1) * h * w];
        // rows: tmp[i][l] = Σ_j plane[i][j] · Bw[l][j]   (forward)
        //                  Σ_j plane[i][j] · Bw[j][l]   (inverse)
        for i in 0..h {
            for l in 0..w {
                let mut acc = 0.0;
                for j in 0..w {
                    let b = if inverse { bw[j * w + l] } else { bw[l * w + j] };
                    acc += plane[i * w + j] * b;
                }
                tmp[i * w + l] = acc;
            }
        }
        let dst = &mut out[c * h * w..(c + 1) * h * w];
        for k in 0..h {
            for l in 0..w {
                let mut acc = 0.0;
                for i in 0..h {
                    let b = if inverse { bh[i * h + k] } else { bh[k * h + i] };
                    acc += b * tmp[i * w + l];
                }
                dst[k * w + l] = acc;
            }
        }
    }
    Ok(out)
}

pub fn dct2(image: &[f64], shape: ImageShape) -> Result<Vec<f64>> {
    transform(image, shape, false)
}

pub fn idct2(coefficients: &[f64], shape: ImageShape) -> Result<Vec<f64>> {
    transform(coefficients, shape, true)
}
