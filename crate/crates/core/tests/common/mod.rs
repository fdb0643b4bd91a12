//! Independent reference implementations used by the integration tests.
//! Written for clarity, not speed, and sharing no code with the crate.
#![allow(dead_code)]

use rand::Rng;
use roa_core::geometry::{Box3D, Camera, Intrinsics};
use roa_core::labels::RoaMap;
use roa_core::Tensor;

pub fn random_tensor<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn idx4(shape: &[usize], a: usize, b: usize, c: usize, d: usize) -> usize {
    ((a * shape[1] + b) * shape[2] + c) * shape[3] + d
}

/// Direct summation: `bias + Σ_c Σ_ky Σ_kx x·w`, taps outside the image
/// skipped. Accumulation order is fixed so f64 results are reproducible.
pub fn naive_conv2d(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    stride: usize,
    pad: usize,
    dil: usize,
) -> Vec<f64> {
    let (xs, ws) = (x.shape(), w.shape());
    let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (o, k) = (ws[0], ws[2]);
    let oh = (h + 2 * pad - dil * (k - 1) - 1) / stride + 1;
    let ow = (wd + 2 * pad - dil * (k - 1) - 1) / stride + 1;
    let mut out = Vec::with_capacity(n * o * oh * ow);
    for ni in 0..n {
        for oi in 0..o {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = b.data()[oi];
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky * dil) as isize - pad as isize;
                                let ix = (xo * stride + kx * dil) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.data()[idx4(xs, ni, ci, iy as usize, ix as usize)]
                                    * w.data()[idx4(ws, oi, ci, ky, kx)];
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

/// A dilated kernel written out as a dense kernel with zero holes.
pub fn inflate_kernel(w: &Tensor, dil: usize) -> Tensor {
    let s = w.shape();
    let k = s[2];
    let kk = dil * (k - 1) + 1;
    let mut data = vec![0.0; s[0] * s[1] * kk * kk];
    for o in 0..s[0] {
        for c in 0..s[1] {
            for ky in 0..k {
                for kx in 0..k {
                    data[((o * s[1] + c) * kk + ky * dil) * kk + kx * dil] = w.data()[idx4(s, o, c, ky, kx)];
                }
            }
        }
    }
    Tensor::new(&[s[0], s[1], kk, kk], data).unwrap()
}

/// Bilinear sampling written as a tent-filter sum over the four integer
/// neighbours; zero outside the image.
pub fn tent_sample(x: &Tensor, n: usize, c: usize, y: f64, xc: f64) -> f64 {
    let s = x.shape();
    let mut acc = 0.0;
    for iy in [y.floor() as i64, y.floor() as i64 + 1] {
        for ix in [xc.floor() as i64, xc.floor() as i64 + 1] {
            if iy < 0 || ix < 0 || iy >= s[2] as i64 || ix >= s[3] as i64 {
                continue;
            }
            let wgt = (1.0 - (y - iy as f64).abs()).max(0.0) * (1.0 - (xc - ix as f64).abs()).max(0.0);
            acc += wgt * x.data()[idx4(s, n, c, iy as usize, ix as usize)];
        }
    }
    acc
}

pub fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..a.len() {
        total += (a[i] - b[i]).abs();
    }
    total / a.len() as f64
}

/// Label oracle: cell `(r, c)` counts every rect that overlaps the open
/// cell square `(c·s, (c+1)·s) × (r·s, (r+1)·s)`.
pub fn count_cells(rects: &[[f64; 4]], h: usize, w: usize, stride: usize) -> Vec<f64> {
    let s = stride as f64;
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            for &[u0, v0, u1, v1] in rects {
                let inside_u = (c as f64) * s < u1 && (c as f64 + 1.0) * s > u0;
                let inside_v = (r as f64) * s < v1 && (r as f64 + 1.0) * s > v0;
                if inside_u && inside_v {
                    out[r * w + c] += 1.0;
                }
            }
        }
    }
    out
}

pub fn map_values(maps: &[RoaMap]) -> Vec<Vec<f64>> {
    maps.iter().map(|m| m.values.clone()).collect()
}

/// Double-double arithmetic (Dekker / Knuth error-free transforms).
#[derive(Clone, Copy, Debug)]
pub struct Dd {
    hi: f64,
    lo: f64,
}

impl Dd {
    pub fn new(v: f64) -> Self {
        Dd { hi: v, lo: 0.0 }
    }

    fn two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        let bb = s - a;
        (s, (a - (s - bb)) + (b - bb))
    }

    fn quick(hi: f64, lo: f64) -> Self {
        let s = hi + lo;
        Dd { hi: s, lo: lo - (s - hi) }
    }

    pub fn add(self, o: Dd) -> Dd {
        let (s, e) = Self::two_sum(self.hi, o.hi);
        Self::quick(s, e + self.lo + o.lo)
    }

    pub fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }

    pub fn sub(self, o: Dd) -> Dd {
        self.add(o.neg())
    }

    pub fn mul(self, o: Dd) -> Dd {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p);
        Self::quick(p, e + self.hi * o.lo + self.lo * o.hi)
    }

    pub fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self.sub(o.mul(Dd::new(q1)));
        let q2 = r.hi / o.hi;
        let r = r.sub(o.mul(Dd::new(q2)));
        let q3 = r.hi / o.hi;
        Dd::new(q1).add(Dd::new(q2)).add(Dd::new(q3))
    }

    pub fn f64(self) -> f64 {
        self.hi + self.lo
    }
}

/// Corner-hull projection in double-double: corners with depth ≥ `near`
/// are projected, their bounding rect clamped to the image. `None` when
/// fewer than two corners survive or the clamped rect is empty.
pub fn hull_oracle(b: &Box3D, cam: &Camera, near: f64) -> Option<[f64; 4]> {
    let r = cam.extrinsics.rotation();
    let t = cam.extrinsics.translation();
    let Intrinsics { fx, fy, cx, cy, width, height } = cam.intrinsics;
    let (s, c) = b.yaw.sin_cos();
    let mut pts = Vec::new();
    for sx in [-1.0, 1.0] {
        for sy in [-1.0, 1.0] {
            for sz in [-1.0, 1.0] {
                let lx = Dd::new(sx * b.size[0] / 2.0);
                let ly = Dd::new(sy * b.size[1] / 2.0);
                let ego = [
                    Dd::new(b.center[0]).add(Dd::new(c).mul(lx)).sub(Dd::new(s).mul(ly)),
                    Dd::new(b.center[1]).add(Dd::new(s).mul(lx)).add(Dd::new(c).mul(ly)),
                    Dd::new(b.center[2]).add(Dd::new(sz * b.size[2] / 2.0)),
                ];
                let camp: Vec<Dd> = (0..3)
                    .map(|i| {
                        (0..3).fold(Dd::new(t[i]), |acc, j| acc.add(Dd::new(r[(i, j)]).mul(ego[j])))
                    })
                    .collect();
                if camp[2].f64() < near {
                    continue;
                }
                let u = Dd::new(fx).mul(camp[0]).div(camp[2]).add(Dd::new(cx)).f64();
                let v = Dd::new(fy).mul(camp[1]).div(camp[2]).add(Dd::new(cy)).f64();
                pts.push((u, v));
            }
        }
    }
    if pts.len() < 2 {
        return None;
    }
    let clamp = |v: f64, hi: u32| v.max(0.0).min(hi as f64);
    let u0 = clamp(pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min), width);
    let u1 = clamp(pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max), width);
    let v0 = clamp(pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min), height);
    let v1 = clamp(pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max), height);
    (u1 > u0 && v1 > v0).then_some([u0, v0, u1, v1])
}
