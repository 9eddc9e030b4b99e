//! Two-layer convolutional scorer over normalized maps, with hand-written
//! backpropagation, the symmetric contrastive loss and Adam.

use std::fmt::Debug;
use std::io::{Read, Write};
use std::path::Path;

use num_traits::{Float, FromPrimitive};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::dcsm::Dcsm;
use crate::error::{Error, Result};
use crate::sphere::rng_for;

/// Scalar type the network runs in: `f32` for training, `f64` for gradient
/// checks.
pub trait Real: Float + FromPrimitive + Default + Debug + Send + Sync + 'static {
    /// Row-major `c = alpha * a * b + beta * c` with explicit strides.
    ///
    /// # Safety
    /// Strides and sizes must stay inside the three buffers.
    #[allow(clippy::too_many_arguments)]
    unsafe fn raw_gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite conversion")
    }
}

impl Real for f32 {
    unsafe fn raw_gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    unsafe fn raw_gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// `c = op(a) * op(b) + beta * c`, all row-major. `op(a)` is m x k; with
/// `ta` the buffer holds a k x m matrix. Same for `b` (k x n).
#[allow(clippy::too_many_arguments)]
pub fn gemm<R: Real>(m: usize, k: usize, n: usize, a: &[R], ta: bool, b: &[R], tb: bool, beta: R, c: &mut [R]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too short");
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the length checks above bound every index the strides reach.
    unsafe {
        R::raw_gemm(m, k, n, R::one(), a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1)
    }
}

/// Unfolds a `channels x h x w` tensor into `(channels * k * k) x (h * w)`
/// columns for a stride-1, zero-padded k x k convolution.
pub fn im2col<R: Real>(input: &[R], channels: usize, h: usize, w: usize, k: usize, out: &mut [R]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for c in 0..channels {
        let plane = &input[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut out[((c * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(R::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (x, d) in dst.iter_mut().enumerate() {
                        let sx = x as isize + dx;
                        *d = if sx < 0 || sx >= w as isize { R::zero() } else { src[sx as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, summing overlaps.
pub fn col2im<R: Real>(cols: &[R], channels: usize, h: usize, w: usize, k: usize, out: &mut [R]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    out[..channels * hw].fill(R::zero());
    for c in 0..channels {
        let plane = &mut out[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((c * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as isize + dx;
                        if sx >= 0 && sx < w as isize {
                            plane[sy as usize * w + sx as usize] = plane[sy as usize * w + sx as usize] + row[y * w + x];
                        }
                    }
                }
            }
        }
    }
}

pub const DEFAULT_HIDDEN: usize = 128;
pub const DEFAULT_KERNEL: usize = 3;

/// conv(1 -> hidden) . relu . conv(hidden -> hidden) . relu . mean-pool . linear.
/// Kernels are stored (out, in, ky, kx).
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerParams<R> {
    pub hidden: usize,
    pub kernel: usize,
    pub conv1_w: Vec<R>,
    pub conv1_b: Vec<R>,
    pub conv2_w: Vec<R>,
    pub conv2_b: Vec<R>,
    pub head_w: Vec<R>,
    pub head_b: Vec<R>,
}

impl<R: Real> ScorerParams<R> {
    pub fn zeros(hidden: usize, kernel: usize) -> Self {
        let k2 = kernel * kernel;
        ScorerParams {
            hidden,
            kernel,
            conv1_w: vec![R::zero(); hidden * k2],
            conv1_b: vec![R::zero(); hidden],
            conv2_w: vec![R::zero(); hidden * hidden * k2],
            conv2_b: vec![R::zero(); hidden],
            head_w: vec![R::zero(); hidden],
            head_b: vec![R::zero(); 1],
        }
    }

    /// He-normal kernels and head, zero biases.
    pub fn init(hidden: usize, kernel: usize, seed: u64) -> Result<Self> {
        if hidden == 0 || kernel % 2 == 0 {
            return Err(Error::ConfigInvalid(format!("hidden {hidden}, kernel {kernel} (must be odd)")));
        }
        let mut p = Self::zeros(hidden, kernel);
        let k2 = (kernel * kernel) as f64;
        let fans = [k2, hidden as f64 * k2, hidden as f64];
        let tensors = [&mut p.conv1_w, &mut p.conv2_w, &mut p.head_w];
        for (i, (t, fan)) in tensors.into_iter().zip(fans).enumerate() {
            let mut rng = rng_for(seed, i as u64);
            let normal = Normal::new(0.0, (2.0 / fan).sqrt()).expect("positive std");
            t.iter_mut().for_each(|v| *v = R::of(normal.sample(&mut rng)));
        }
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.hidden, self.kernel)
    }

    pub fn tensors(&self) -> [&Vec<R>; 6] {
        [&self.conv1_w, &self.conv1_b, &self.conv2_w, &self.conv2_b, &self.head_w, &self.head_b]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<R>; 6] {
        [&mut self.conv1_w, &mut self.conv1_b, &mut self.conv2_w, &mut self.conv2_b, &mut self.head_w, &mut self.head_b]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn cast<S: Real>(&self) -> ScorerParams<S> {
        let c = |v: &Vec<R>| v.iter().map(|x| S::of(x.to_f64().expect("finite"))).collect();
        ScorerParams {
            hidden: self.hidden,
            kernel: self.kernel,
            conv1_w: c(&self.conv1_w),
            conv1_b: c(&self.conv1_b),
            conv2_w: c(&self.conv2_w),
            conv2_b: c(&self.conv2_b),
            head_w: c(&self.head_w),
            head_b: c(&self.head_b),
        }
    }

    pub fn fill(&mut self, v: R) {
        self.tensors_mut().into_iter().for_each(|t| t.fill(v));
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Forward pass; the cache holds what [`ScorerParams::backward`] needs.
    pub fn forward_cached(&self, input: &[R], h: usize, w: usize) -> Result<(R, Cache<R>)> {
        if h == 0 || w == 0 || input.len() != h * w {
            return Err(Error::ShapeMismatch(format!("input of {} values for a {h}x{w} map", input.len())));
        }
        let (c, k) = (self.hidden, self.kernel);
        let (hw, k2) = (h * w, k * k);

        let mut col1 = vec![R::zero(); k2 * hw];
        im2col(input, 1, h, w, k, &mut col1);
        let mut a1 = bias_rows(&self.conv1_b, hw);
        gemm(c, k2, hw, &self.conv1_w, false, &col1, false, R::one(), &mut a1);
        relu(&mut a1);

        let mut col2 = vec![R::zero(); c * k2 * hw];
        im2col(&a1, c, h, w, k, &mut col2);
        let mut a2 = bias_rows(&self.conv2_b, hw);
        gemm(c, c * k2, hw, &self.conv2_w, false, &col2, false, R::one(), &mut a2);
        relu(&mut a2);

        let inv = R::of(1.0 / hw as f64);
        let pooled: Vec<R> = a2.chunks_exact(hw).map(|r| r.iter().fold(R::zero(), |s, &v| s + v) * inv).collect();
        let score = pooled.iter().zip(&self.head_w).fold(self.head_b[0], |s, (&g, &wh)| s + g * wh);
        Ok((score, Cache { h, w, col1, a1, a2, pooled }))
    }

    pub fn forward(&self, input: &[R], h: usize, w: usize) -> Result<R> {
        Ok(self.forward_cached(input, h, w)?.0)
    }

    /// Scores one normalized map.
    pub fn score(&self, map: &Dcsm) -> Result<R> {
        if !map.normalized {
            return Err(Error::PipelineOrder("scoring an unnormalized map"));
        }
        let input: Vec<R> = map.values.iter().map(|&v| R::of(v)).collect();
        self.forward(&input, map.rows, map.cols)
    }

    /// Adds d(score)/d(params) * `dscore` into `grads`.
    pub fn backward(&self, cache: &Cache<R>, dscore: R, grads: &mut ScorerParams<R>) {
        let (c, k) = (self.hidden, self.kernel);
        let (h, w) = (cache.h, cache.w);
        let (hw, k2) = (h * w, k * k);

        grads.head_b[0] = grads.head_b[0] + dscore;
        for (g, &p) in grads.head_w.iter_mut().zip(&cache.pooled) {
            *g = *g + dscore * p;
        }
        let inv = R::of(1.0 / hw as f64);
        let mut dz2 = vec![R::zero(); c * hw];
        for ch in 0..c {
            let dg = dscore * self.head_w[ch] * inv;
            let src = &cache.a2[ch * hw..(ch + 1) * hw];
            let dst = &mut dz2[ch * hw..(ch + 1) * hw];
            for (d, &a) in dst.iter_mut().zip(src) {
                *d = if a > R::zero() { dg } else { R::zero() };
            }
            grads.conv2_b[ch] = grads.conv2_b[ch] + dst.iter().fold(R::zero(), |s, &v| s + v);
        }

        let mut col2 = vec![R::zero(); c * k2 * hw];
        im2col(&cache.a1, c, h, w, k, &mut col2);
        gemm(c, hw, c * k2, &dz2, false, &col2, true, R::one(), &mut grads.conv2_w);

        let mut dcol2 = col2;
        gemm(c * k2, c, hw, &self.conv2_w, true, &dz2, false, R::zero(), &mut dcol2);
        let mut dz1 = vec![R::zero(); c * hw];
        col2im(&dcol2, c, h, w, k, &mut dz1);
        for ch in 0..c {
            let src = &cache.a1[ch * hw..(ch + 1) * hw];
            let dst = &mut dz1[ch * hw..(ch + 1) * hw];
            for (d, &a) in dst.iter_mut().zip(src) {
                if a <= R::zero() {
                    *d = R::zero();
                }
            }
            grads.conv1_b[ch] = grads.conv1_b[ch] + dst.iter().fold(R::zero(), |s, &v| s + v);
        }
        gemm(c, hw, k2, &dz1, false, &cache.col1, true, R::one(), &mut grads.conv1_w);
    }

    pub fn save(&self, path: &Path, uses_frs: bool) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_checkpoint(&mut f, uses_frs)?;
        f.flush()?;
        Ok(())
    }

    pub fn write_checkpoint<W: Write>(&self, out: &mut W, uses_frs: bool) -> Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        for v in [CHECKPOINT_VERSION, self.hidden as u32, self.kernel as u32] {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&[uses_frs as u8])?;
        for t in self.tensors() {
            for v in t.iter() {
                out.write_all(&v.to_f32().expect("finite").to_le_bytes())?;
            }
        }
        Ok(())
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DCSM";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A loaded checkpoint: single-precision parameters and whether the model
/// was trained on maps with functional rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ScorerParams<f32>,
    pub uses_frs: bool,
}

impl Checkpoint {
    pub fn read<Rd: Read>(input: &mut Rd) -> Result<Checkpoint> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a scorer checkpoint".into()));
        }
        let mut word = || -> Result<u32> {
            let mut b = [0u8; 4];
            input.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        };
        let version = word()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("checkpoint version {version}")));
        }
        let (hidden, kernel) = (word()? as usize, word()? as usize);
        if hidden == 0 || hidden > 4096 || kernel % 2 == 0 || kernel > 15 {
            return Err(Error::Format(format!("implausible shape hidden={hidden} kernel={kernel}")));
        }
        let mut flag = [0u8; 1];
        input.read_exact(&mut flag)?;
        let mut params = ScorerParams::<f32>::zeros(hidden, kernel);
        let mut buf = [0u8; 4];
        for t in params.tensors_mut() {
            for v in t.iter_mut() {
                input.read_exact(&mut buf)?;
                *v = f32::from_le_bytes(buf);
            }
        }
        if input.read(&mut buf)? != 0 {
            return Err(Error::Format("trailing bytes after parameters".into()));
        }
        if !params.all_finite() {
            return Err(Error::Format("non-finite parameter".into()));
        }
        Ok(Checkpoint { params, uses_frs: flag[0] != 0 })
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let f = std::fs::File::open(path).map_err(|e| Error::MissingArtifact(format!("{}: {e}", path.display())))?;
        Self::read(&mut std::io::BufReader::new(f))
    }
}

#[derive(Debug, Clone)]
pub struct Cache<R> {
    h: usize,
    w: usize,
    col1: Vec<R>,
    a1: Vec<R>,
    a2: Vec<R>,
    pooled: Vec<R>,
}

fn bias_rows<R: Real>(bias: &[R], len: usize) -> Vec<R> {
    bias.iter().flat_map(|&b| std::iter::repeat_n(b, len)).collect()
}

fn relu<R: Real>(v: &mut [R]) {
    v.iter_mut().for_each(|x| *x = x.max(R::zero()));
}

/// Row-wise plus column-wise softmax cross-entropy against the identity,
/// each averaged over the batch. Returns the loss and d(loss)/d(scores).
pub fn contrastive_loss(scores: &[f64], b: usize) -> Result<(f64, Vec<f64>)> {
    if b == 0 || scores.len() != b * b {
        return Err(Error::ShapeMismatch(format!("{} scores for a {b}x{b} batch", scores.len())));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; b * b];
    let inv = 1.0 / b as f64;
    for transpose in [false, true] {
        let at = |i: usize, j: usize| if transpose { j * b + i } else { i * b + j };
        for i in 0..b {
            let top = (0..b).fold(0, |t, j| if scores[at(i, j)] > scores[at(i, t)] { j } else { t });
            let max = scores[at(i, top)];
            // The top term contributes exactly 1; ln_1p keeps tiny tails exact.
            let rest: f64 = (0..b).filter(|&j| j != top).map(|j| (scores[at(i, j)] - max).exp()).sum();
            let lse = max + rest.ln_1p();
            loss += ((max - scores[at(i, i)]) + rest.ln_1p()) * inv;
            for j in 0..b {
                let p = (scores[at(i, j)] - lse).exp();
                grad[at(i, j)] += (p - if i == j { 1.0 } else { 0.0 }) * inv;
            }
        }
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<R> {
    pub m: ScorerParams<R>,
    pub v: ScorerParams<R>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<R: Real> AdamState<R> {
    pub fn new(params: &ScorerParams<R>, lr: f64) -> Self {
        AdamState { m: params.zeros_like(), v: params.zeros_like(), step: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// One bias-corrected Adam update; leaves everything untouched when a
    /// gradient is not finite.
    pub fn update(&mut self, params: &mut ScorerParams<R>, grads: &ScorerParams<R>) -> Result<()> {
        if !grads.all_finite() {
            return Err(Error::NonFiniteGradient);
        }
        if grads.tensors().iter().zip(params.tensors()).any(|(g, p)| g.len() != p.len()) {
            return Err(Error::ShapeMismatch("gradient and parameter shapes differ".into()));
        }
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let (lr, eps) = (self.lr, self.eps);
        let ps = params.tensors_mut();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, m), v), g) in ps.into_iter().zip(ms).zip(vs).zip(grads.tensors()) {
            for i in 0..p.len() {
                let gi = g[i].to_f64().unwrap_or(0.0);
                let mi = b1 * m[i].to_f64().unwrap_or(0.0) + (1.0 - b1) * gi;
                let vi = b2 * v[i].to_f64().unwrap_or(0.0) + (1.0 - b2) * gi * gi;
                m[i] = R::of(mi);
                v[i] = R::of(vi);
                let upd = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
                p[i] = R::of(p[i].to_f64().unwrap_or(0.0) - upd);
            }
        }
        Ok(())
    }
}

/// Scores every text-by-image map of a batch (`maps[i][j]` = text i, image j)
/// and, with `grads`, accumulates the loss gradient. Returns (loss, scores).
pub fn batch_step<R: Real>(
    params: &ScorerParams<R>,
    maps: &[Vec<Vec<R>>],
    h: usize,
    w: usize,
    grads: Option<&mut ScorerParams<R>>,
) -> Result<(f64, Vec<f64>)> {
    let b = maps.len();
    if b < 2 || maps.iter().any(|r| r.len() != b) {
        return Err(Error::ShapeMismatch(format!("batch needs a square grid of at least 2, got {b}")));
    }
    let mut scores = Vec::with_capacity(b * b);
    let mut caches = Vec::with_capacity(if grads.is_some() { b * b } else { 0 });
    for row in maps {
        for m in row {
            let (s, cache) = params.forward_cached(m, h, w)?;
            scores.push(s.to_f64().unwrap_or(f64::NAN));
            if grads.is_some() {
                caches.push(cache);
            }
        }
    }
    let (loss, dscores) = contrastive_loss(&scores, b)?;
    if let Some(g) = grads {
        for (cache, &d) in caches.iter().zip(&dscores) {
            params.backward(cache, R::of(d), g);
        }
    }
    Ok((loss, scores))
}

/// Seeded parameters and batch on a dyadic lattice: integer inputs, kernels
/// in multiples of 1/8 and half-step biases put every pre-activation at least
/// 1/256 from the ReLU kink, so small central differences never straddle it.
pub fn lattice_case(seed: u64, hidden: usize, b: usize, h: usize, w: usize) -> (ScorerParams<f64>, Vec<Vec<Vec<f64>>>) {
    let mut rng = rng_for(seed, 0x1a7);
    let mut p = ScorerParams::<f64>::zeros(hidden, 3);
    p.conv1_w.iter_mut().for_each(|v| *v = rng.random_range(-2i32..=2) as f64 / 8.0);
    p.conv1_b.iter_mut().for_each(|v| *v = (2 * rng.random_range(-2i32..=2) + 1) as f64 / 16.0);
    p.conv2_w.iter_mut().for_each(|v| *v = [-2.0, -1.0, 1.0, 2.0][rng.random_range(0..4)] / 8.0);
    p.conv2_b.iter_mut().for_each(|v| *v = (2 * rng.random_range(-4i32..=4) + 1) as f64 / 256.0);
    p.head_w.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    p.head_b[0] = rng.random_range(-1.0..1.0);
    let batch = (0..b)
        .map(|_| (0..b).map(|_| (0..h * w).map(|_| rng.random_range(-2i32..=2) as f64).collect()).collect())
        .collect();
    (p, batch)
}

/// Largest relative error between the analytic gradient of the batch loss
/// and central differences with the given step, over every parameter.
pub fn gradient_check(params: &ScorerParams<f64>, batch: &[Vec<Vec<f64>>], h: usize, w: usize, step: f64) -> Result<f64> {
    let mut p = params.clone();
    let mut g = p.zeros_like();
    batch_step(&p, batch, h, w, Some(&mut g))?;
    let mut worst: f64 = 0.0;
    for t in 0..6 {
        for i in 0..p.tensors()[t].len() {
            let orig = p.tensors()[t][i];
            p.tensors_mut()[t][i] = orig + step;
            let up = batch_step(&p, batch, h, w, None)?.0;
            p.tensors_mut()[t][i] = orig - step;
            let down = batch_step(&p, batch, h, w, None)?.0;
            p.tensors_mut()[t][i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let analytic = g.tensors()[t][i];
            let err = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
