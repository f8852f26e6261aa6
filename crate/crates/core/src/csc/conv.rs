//! "Same"-size multi-kernel convolution with clamp-to-edge padding of the
//! coefficient maps, together with its exact adjoint and kernel gradient.
//!
//! With `p = s - 1` the padded map has size `(M + p) × (N + p)` and
//! `out(i, j) = Σ_{a,b} F(a, b) · Zp(i + a, j + b)` where `F` is the kernel
//! flipped in both axes. Padded index `i + a` maps back to the unpadded row
//! `clamp(i + a - (p - s/2))`.

#[derive(Debug, Clone)]
pub struct ConvOp {
    pub k: usize,
    pub s: usize,
    pub m: usize,
    pub n: usize,
    /// Flipped kernels, `k` blocks of `s*s`.
    flipped: Vec<f64>,
}

impl ConvOp {
    pub fn new(kernels: &[Vec<f64>], s: usize, m: usize, n: usize) -> Self {
        let mut flipped = Vec::with_capacity(kernels.len() * s * s);
        for kern in kernels {
            for a in 0..s {
                for b in 0..s {
                    flipped.push(kern[(s - 1 - a) * s + (s - 1 - b)]);
                }
            }
        }
        Self {
            k: kernels.len(),
            s,
            m,
            n,
            flipped,
        }
    }

    #[inline]
    pub fn coef_len(&self) -> usize {
        self.k * self.m * self.n
    }

    #[inline]
    pub fn image_len(&self) -> usize {
        self.m * self.n
    }

    #[inline]
    fn lead(&self) -> usize {
        self.s - 1 - self.s / 2
    }

    #[inline]
    fn padded_dims(&self) -> (usize, usize) {
        (self.m + self.s - 1, self.n + self.s - 1)
    }

    /// Row/column of the unpadded map that a padded index refers to.
    #[inline]
    fn src(&self, p: usize, len: usize) -> usize {
        (p as isize - self.lead() as isize).clamp(0, len as isize - 1) as usize
    }

    fn pad(&self, z: &[f64], out: &mut [f64]) {
        let (mp, np) = self.padded_dims();
        for p in 0..mp {
            let r = self.src(p, self.m);
            let row = &z[r * self.n..(r + 1) * self.n];
            for q in 0..np {
                out[p * np + q] = row[self.src(q, self.n)];
            }
        }
    }

    fn fold(&self, gp: &[f64], out: &mut [f64]) {
        let (mp, np) = self.padded_dims();
        out.iter_mut().for_each(|v| *v = 0.0);
        for p in 0..mp {
            let r = self.src(p, self.m);
            for q in 0..np {
                out[r * self.n + self.src(q, self.n)] += gp[p * np + q];
            }
        }
    }

    /// `out = Σ_k D_k ⊛ Z_k`.
    pub fn forward(&self, z: &[f64], out: &mut [f64]) {
        let (m, n, s) = (self.m, self.n, self.s);
        let (mp, np) = self.padded_dims();
        let mut zp = vec![0.0; mp * np];
        out.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..self.k {
            self.pad(&z[k * m * n..(k + 1) * m * n], &mut zp);
            let f = &self.flipped[k * s * s..(k + 1) * s * s];
            for a in 0..s {
                for b in 0..s {
                    let c = f[a * s + b];
                    if c == 0.0 {
                        continue;
                    }
                    for i in 0..m {
                        let src = &zp[(i + a) * np + b..(i + a) * np + b + n];
                        let dst = &mut out[i * n..(i + 1) * n];
                        for (d, v) in dst.iter_mut().zip(src) {
                            *d += c * v;
                        }
                    }
                }
            }
        }
    }

    /// `out = Aᵀ r`, one map per kernel.
    pub fn adjoint(&self, r: &[f64], out: &mut [f64]) {
        let (m, n, s) = (self.m, self.n, self.s);
        let (mp, np) = self.padded_dims();
        let mut gp = vec![0.0; mp * np];
        for k in 0..self.k {
            gp.iter_mut().for_each(|v| *v = 0.0);
            let f = &self.flipped[k * s * s..(k + 1) * s * s];
            for a in 0..s {
                for b in 0..s {
                    let c = f[a * s + b];
                    if c == 0.0 {
                        continue;
                    }
                    for i in 0..m {
                        let src = &r[i * n..(i + 1) * n];
                        let dst = &mut gp[(i + a) * np + b..(i + a) * np + b + n];
                        for (d, v) in dst.iter_mut().zip(src) {
                            *d += c * v;
                        }
                    }
                }
            }
            self.fold(&gp, &mut out[k * m * n..(k + 1) * m * n]);
        }
    }

    /// Gradient of `-<r, Σ_k D_k ⊛ Z_k>` with respect to the (unflipped)
    /// kernels, accumulated into `grad` (`k` blocks of `s*s`).
    pub fn kernel_grad_acc(&self, z: &[f64], r: &[f64], grad: &mut [f64]) {
        let (m, n, s) = (self.m, self.n, self.s);
        let (mp, np) = self.padded_dims();
        let mut zp = vec![0.0; mp * np];
        for k in 0..self.k {
            self.pad(&z[k * m * n..(k + 1) * m * n], &mut zp);
            for a in 0..s {
                for b in 0..s {
                    let mut acc = 0.0;
                    for i in 0..m {
                        let zr = &zp[(i + a) * np + b..(i + a) * np + b + n];
                        let rr = &r[i * n..(i + 1) * n];
                        acc += zr.iter().zip(rr).map(|(x, y)| x * y).sum::<f64>();
                    }
                    // flipped (a, b) is kernel entry (s-1-a, s-1-b)
                    grad[k * s * s + (s - 1 - a) * s + (s - 1 - b)] -= acc;
                }
            }
        }
    }
}
