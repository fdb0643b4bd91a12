//! Bilinear sampling with zero padding outside the image.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The four taps around a fractional coordinate.
#[derive(Clone, Copy, Debug)]
struct Taps {
    y0: isize,
    x0: isize,
    fy: f64,
    fx: f64,
}

impl Taps {
    fn new(y: f64, x: f64) -> Self {
        let (yf, xf) = (y.floor(), x.floor());
        Taps {
            y0: yf as isize,
            x0: xf as isize,
            fy: y - yf,
            fx: x - xf,
        }
    }

    #[inline]
    fn fetch(plane: &[f64], h: usize, w: usize, y: isize, x: isize) -> f64 {
        if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
            plane[y as usize * w + x as usize]
        } else {
            0.0
        }
    }

    /// Corner values in order (y0,x0), (y0,x1), (y1,x0), (y1,x1).
    #[inline]
    fn corners(&self, plane: &[f64], h: usize, w: usize) -> [f64; 4] {
        [
            Self::fetch(plane, h, w, self.y0, self.x0),
            Self::fetch(plane, h, w, self.y0, self.x0 + 1),
            Self::fetch(plane, h, w, self.y0 + 1, self.x0),
            Self::fetch(plane, h, w, self.y0 + 1, self.x0 + 1),
        ]
    }

    #[inline]
    fn weights(&self) -> [f64; 4] {
        let (gy, gx) = (1.0 - self.fy, 1.0 - self.fx);
        [gy * gx, gy * self.fx, self.fy * gx, self.fy * self.fx]
    }
}

fn check(input: &Tensor, points: &Tensor) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let (n, c, h, w) = input.dims4("bilinear_sample")?;
    match *points.shape() {
        [pn, ph, pw, 2] if pn == n => Ok((n, c, h, w, ph, pw)),
        _ => Err(Error::shape(
            "bilinear_sample",
            format!(
                "points must be [{n}, H', W', 2] (y, x), got {:?}",
                points.shape()
            ),
        )),
    }
}

/// Samples `input` (N×C×H×W) at `points` (N×H'×W'×2, `(y, x)` in pixel
/// units) giving N×C×H'×W'.
pub fn bilinear_sample(input: &Tensor, points: &Tensor) -> Result<Tensor> {
    let (n, c, h, w, ph, pw) = check(input, points)?;
    let np = ph * pw;
    let x = input.data();
    let pts = points.data();
    let mut out = vec![0.0; n * c * np];
    for ni in 0..n {
        for p in 0..np {
            let q = (ni * np + p) * 2;
            let taps = Taps::new(pts[q], pts[q + 1]);
            let wts = taps.weights();
            for ci in 0..c {
                let plane = &x[(ni * c + ci) * h * w..][..h * w];
                let v = taps.corners(plane, h, w);
                out[(ni * c + ci) * np + p] =
                    wts[0] * v[0] + wts[1] * v[1] + wts[2] * v[2] + wts[3] * v[3];
            }
        }
    }
    Ok(Tensor::from_parts(
        vec![n, c, ph, pw],
        out,
        input.dtype().join(points.dtype()),
    ))
}

/// Gradients with respect to the input values and the sample coordinates.
pub fn bilinear_sample_backward(
    input: &Tensor,
    points: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (n, c, h, w, ph, pw) = check(input, points)?;
    let np = ph * pw;
    let x = input.data();
    let pts = points.data();
    let go = grad_out.data();
    let mut gx = vec![0.0; x.len()];
    let mut gp = vec![0.0; pts.len()];
    for ni in 0..n {
        for p in 0..np {
            let q = (ni * np + p) * 2;
            let taps = Taps::new(pts[q], pts[q + 1]);
            let wts = taps.weights();
            let (gy_w, gx_w) = (1.0 - taps.fy, 1.0 - taps.fx);
            let (mut dy, mut dx) = (0.0, 0.0);
            for ci in 0..c {
                let off = (ni * c + ci) * h * w;
                let g = go[(ni * c + ci) * np + p];
                if g == 0.0 {
                    continue;
                }
                let v = taps.corners(&x[off..off + h * w], h, w);
                dy += g * (gx_w * (v[2] - v[0]) + taps.fx * (v[3] - v[1]));
                dx += g * (gy_w * (v[1] - v[0]) + taps.fy * (v[3] - v[2]));
                let coords = [
                    (taps.y0, taps.x0),
                    (taps.y0, taps.x0 + 1),
                    (taps.y0 + 1, taps.x0),
                    (taps.y0 + 1, taps.x0 + 1),
                ];
                for ((yy, xx), wt) in coords.into_iter().zip(wts) {
                    if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                        gx[off + yy as usize * w + xx as usize] += g * wt;
                    }
                }
            }
            gp[q] = dy;
            gp[q + 1] = dx;
        }
    }
    Ok((
        Tensor::from_parts(input.shape().to_vec(), gx, input.dtype()),
        Tensor::from_parts(points.shape().to_vec(), gp, points.dtype()),
    ))
}
