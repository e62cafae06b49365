//! Dense tensor kernels used by the relaxation dynamics.
//!
//! Everything is row-major `f64`. Convolutions are cross-correlations (no
//! kernel flip) with symmetric zero padding. Pooling truncates trailing
//! partial windows and breaks ties toward the lowest flat index.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.data.len(), other.data.len());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    fn dims3(&self, what: &str) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::Dimension(format!(
                "{what} must be rank 3 (C×H×W), got {:?}",
                self.shape
            ))),
        }
    }
}

/// Standard matrix product of `[m×k]` and `[k×n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = match a.shape[..] {
        [m, k] => (m, k),
        _ => {
            return Err(Error::Dimension(format!(
                "lhs must be rank 2, got {:?}",
                a.shape
            )))
        }
    };
    let (k2, n) = match b.shape[..] {
        [k2, n] => (k2, n),
        _ => {
            return Err(Error::Dimension(format!(
                "rhs must be rank 2, got {:?}",
                b.shape
            )))
        }
    };
    if k != k2 {
        return Err(Error::Dimension(format!(
            "inner dimensions differ: {m}×{k} · {k2}×{n}"
        )));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a.data[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `out += vᵀ W` for `W` stored `[rows × cols]`; zero entries of `v` are skipped,
/// which makes spike-driven accumulation event-driven.
pub fn vec_mat_acc(v: &[f64], w: &[f64], cols: usize, out: &mut [f64]) {
    debug_assert_eq!(w.len(), v.len() * cols);
    debug_assert_eq!(out.len(), cols);
    for (j, &vj) in v.iter().enumerate() {
        if vj == 0.0 {
            continue;
        }
        let row = &w[j * cols..(j + 1) * cols];
        if vj == 1.0 {
            for (o, &x) in out.iter_mut().zip(row) {
                *o += x;
            }
        } else {
            for (o, &x) in out.iter_mut().zip(row) {
                *o += vj * x;
            }
        }
    }
}

/// `out += W v` for `W` stored `[rows × cols]`, skipping zero entries of `v`.
pub fn mat_vec_acc(w: &[f64], cols: usize, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(v.len(), cols);
    debug_assert_eq!(w.len(), out.len() * cols);
    let active: Vec<(usize, f64)> = v
        .iter()
        .enumerate()
        .filter(|(_, &x)| x != 0.0)
        .map(|(k, &x)| (k, x))
        .collect();
    if active.is_empty() {
        return;
    }
    for (j, o) in out.iter_mut().enumerate() {
        let row = &w[j * cols..(j + 1) * cols];
        let mut acc = 0.0;
        for &(k, x) in &active {
            acc += row[k] * x;
        }
        *o += acc;
    }
}

/// Output spatial size of a convolution, or an error if it would be empty.
pub fn conv_output_size(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Dimension("stride must be positive".into()));
    }
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(Error::Dimension(format!(
            "kernel {kernel} larger than padded input {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

fn kernel_dims(kernel: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match kernel.shape[..] {
        [co, ci, kh, kw] => Ok((co, ci, kh, kw)),
        _ => Err(Error::Dimension(format!(
            "kernel must be rank 4 (C_out×C_in×K_H×K_W), got {:?}",
            kernel.shape
        ))),
    }
}

/// 2-D cross-correlation of `input [C_in×H×W]` with `kernel [C_out×C_in×K_H×K_W]`.
pub fn conv2d(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let (c_in, h, w) = input.dims3("conv input")?;
    let (c_out, kc, kh, kw) = kernel_dims(kernel)?;
    if kc != c_in {
        return Err(Error::Dimension(format!(
            "kernel expects {kc} input channels, input has {c_in}"
        )));
    }
    let oh = conv_output_size(h, kh, stride, padding)?;
    let ow = conv_output_size(w, kw, stride, padding)?;
    let mut out = vec![0.0; c_out * oh * ow];
    let (inp, ker) = (&input.data, &kernel.data);
    for co in 0..c_out {
        let plane = &mut out[co * oh * ow..(co + 1) * oh * ow];
        for ci in 0..c_in {
            let src = &inp[ci * h * w..(ci + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = ker[((co * c_in + ci) * kh + ky) * kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                        let orow = &mut plane[oy * ow..(oy + 1) * ow];
                        for (ox, o) in orow.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix >= 0 && ix < w as isize {
                                *o += wv * srow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![c_out, oh, ow], out)
}

/// Exact adjoint of [`conv2d`] as a linear map of its input. `input_hw` is the
/// spatial size of the forward input, which the output size alone does not
/// determine when `stride > 1`.
pub fn conv2d_adjoint(
    grad_like: &Tensor,
    kernel: &Tensor,
    stride: usize,
    padding: usize,
    input_hw: (usize, usize),
) -> Result<Tensor> {
    let (c_out, oh, ow) = grad_like.dims3("adjoint input")?;
    let (kco, c_in, kh, kw) = kernel_dims(kernel)?;
    let (h, w) = input_hw;
    if kco != c_out
        || conv_output_size(h, kh, stride, padding)? != oh
        || conv_output_size(w, kw, stride, padding)? != ow
    {
        return Err(Error::Dimension(format!(
            "adjoint input {:?} inconsistent with kernel {:?} on {h}×{w}",
            grad_like.shape, kernel.shape
        )));
    }
    let mut out = vec![0.0; c_in * h * w];
    let (g, ker) = (&grad_like.data, &kernel.data);
    for co in 0..c_out {
        for oy in 0..oh {
            for ox in 0..ow {
                let gv = g[(co * oh + oy) * ow + ox];
                if gv == 0.0 {
                    continue;
                }
                for ci in 0..c_in {
                    let kbase = (co * c_in + ci) * kh * kw;
                    let obase = ci * h * w;
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix >= 0 && ix < w as isize {
                                out[obase + iy as usize * w + ix as usize] +=
                                    gv * ker[kbase + ky * kw + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![c_in, h, w], out)
}

/// Gradient of `⟨y, conv2d(x, k)⟩` with respect to `k`.
pub fn conv2d_kernel_grad(
    input: &Tensor,
    grad_like: &Tensor,
    kernel_shape: &[usize],
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (c_in, h, w) = input.dims3("conv input")?;
    let (c_out, oh, ow) = grad_like.dims3("output gradient")?;
    let (kco, kci, kh, kw) = match kernel_shape[..] {
        [a, b, c, d] => (a, b, c, d),
        _ => return Err(Error::Dimension("kernel shape must be rank 4".into())),
    };
    if kco != c_out
        || kci != c_in
        || conv_output_size(h, kh, stride, padding)? != oh
        || conv_output_size(w, kw, stride, padding)? != ow
    {
        return Err(Error::Dimension(
            "kernel gradient shapes inconsistent".into(),
        ));
    }
    let mut out = vec![0.0; c_out * c_in * kh * kw];
    let (x, g) = (&input.data, &grad_like.data);
    for co in 0..c_out {
        for oy in 0..oh {
            for ox in 0..ow {
                let gv = g[(co * oh + oy) * ow + ox];
                if gv == 0.0 {
                    continue;
                }
                for ci in 0..c_in {
                    let kbase = (co * c_in + ci) * kh * kw;
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix >= 0 && ix < w as isize {
                                out[kbase + ky * kw + kx] +=
                                    gv * x[(ci * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(kernel_shape.to_vec(), out)
}

/// Flat argmax positions recorded by [`maxpool`], one per pooled output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexMap {
    pub input_shape: Vec<usize>,
    pub indices: Vec<usize>,
}

pub fn pool_output_size(input: usize, window: usize, stride: usize) -> Result<usize> {
    if window == 0 || stride == 0 {
        return Err(Error::Dimension(
            "pool window and stride must be positive".into(),
        ));
    }
    if window > input {
        return Err(Error::Dimension(format!(
            "pool window {window} larger than input {input}"
        )));
    }
    Ok((input - window) / stride + 1)
}

/// Max pooling over `[C×H×W]`; trailing partial windows are dropped.
pub fn maxpool(input: &Tensor, window: usize, stride: usize) -> Result<(Tensor, IndexMap)> {
    let (c, h, w) = input.dims3("pool input")?;
    let oh = pool_output_size(h, window, stride)?;
    let ow = pool_output_size(w, window, stride)?;
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut indices = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                for dy in 0..window {
                    for dx in 0..window {
                        let idx = (ch * h + oy * stride + dy) * w + ox * stride + dx;
                        let v = input.data[idx];
                        if v > best || best_idx == usize::MAX {
                            best = v;
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                indices.push(best_idx);
            }
        }
    }
    Ok((
        Tensor::new(vec![c, oh, ow], out)?,
        IndexMap {
            input_shape: input.shape.clone(),
            indices,
        },
    ))
}

/// Scatter pooled values back to their recorded argmax positions. Positions
/// shared by overlapping windows accumulate, so this is the adjoint of the
/// selection made by [`maxpool`].
pub fn unpool(pooled: &Tensor, indices: &IndexMap, target_shape: &[usize]) -> Result<Tensor> {
    if pooled.len() != indices.indices.len() {
        return Err(Error::Corruption(format!(
            "{} pooled values but {} recorded indices",
            pooled.len(),
            indices.indices.len()
        )));
    }
    let mut out = Tensor::zeros(target_shape);
    let n = out.len();
    for (&idx, &v) in indices.indices.iter().zip(&pooled.data) {
        if idx >= n {
            return Err(Error::Corruption(format!(
                "index {idx} outside target of {n} elements"
            )));
        }
        out.data[idx] += v;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    // Direct six-loop reference used only here.
    fn conv_naive(x: &Tensor, k: &Tensor, s: usize, p: usize) -> Vec<f64> {
        let (ci_n, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
        let (co_n, _, kh, kw) = (k.shape[0], k.shape[1], k.shape[2], k.shape[3]);
        let oh = (h + 2 * p - kh) / s + 1;
        let ow = (w + 2 * p - kw) / s + 1;
        let mut out = vec![0.0; co_n * oh * ow];
        for co in 0..co_n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..ci_n {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * s + ky) as isize - p as isize;
                                let ix = (ox * s + kx) as isize - p as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += k.data[((co * ci_n + ci) * kh + ky) * kw + kx]
                                        * x.data[(ci * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                    }
                    out[(co * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn matmul_small_cases() {
        let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(matmul(&eye, &eye).unwrap(), eye);
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![0.0, 1.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[2.0, 4.0]);
        assert!(matches!(
            matmul(&a, &a.clone().reshape(vec![4, 1]).unwrap()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&[5, 7], &mut rng);
        let b = random(&[7, 3], &mut rng);
        let c = matmul(&a, &b).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let mut acc = 0.0;
                for p in 0..7 {
                    acc += a.data[i * 7 + p] * b.data[p * 3 + j];
                }
                assert!((c.data[i * 3 + j] - acc).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn sparse_vector_kernels_match_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = random(&[6, 4], &mut rng);
        let v: Vec<f64> = (0..6).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
        let mut out = vec![0.0; 4];
        vec_mat_acc(&v, w.data(), 4, &mut out);
        let expect = matmul(&Tensor::new(vec![1, 6], v).unwrap(), &w).unwrap();
        for (a, b) in out.iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let u = vec![0.5, 0.0, -1.0, 2.0];
        let mut out = vec![0.0; 6];
        mat_vec_acc(w.data(), 4, &u, &mut out);
        let expect = matmul(&w, &Tensor::new(vec![4, 1], u).unwrap()).unwrap();
        for (a, b) in out.iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_trivial_cases() {
        let zero = Tensor::zeros(&[2, 5, 5]);
        let k = Tensor::filled(&[3, 2, 3, 3], 0.7);
        assert!(conv2d(&zero, &k, 1, 1)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[1, 3, 3], &mut rng);
        let unit = Tensor::filled(&[1, 1, 1, 1], 1.0);
        assert_eq!(conv2d(&x, &unit, 1, 0).unwrap(), x);
        assert_eq!(conv2d_adjoint(&x, &unit, 1, 0, (3, 3)).unwrap(), x);
        assert!(conv2d_adjoint(&Tensor::zeros(&[3, 6, 6]), &k, 1, 1, (6, 6))
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn conv_rejects_empty_output() {
        let x = Tensor::zeros(&[1, 2, 2]);
        let k = Tensor::zeros(&[1, 1, 5, 5]);
        assert!(matches!(conv2d(&x, &k, 1, 0), Err(Error::Dimension(_))));
    }

    #[test]
    fn conv_matches_direct_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&[2, 8, 8], &mut rng);
        let k = random(&[3, 2, 5, 5], &mut rng);
        let y = conv2d(&x, &k, 1, 1).unwrap();
        assert_eq!(y.shape(), &[3, 6, 6]);
        for (a, b) in y.data().iter().zip(conv_naive(&x, &k, 1, 1)) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn maxpool_cases() {
        let c = Tensor::filled(&[1, 4, 4], 2.5);
        let (p, idx) = maxpool(&c, 2, 2).unwrap();
        assert!(p.data().iter().all(|&v| v == 2.5));
        assert_eq!(idx.indices, vec![0, 2, 8, 10]);

        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (p, idx) = maxpool(&x, 2, 2).unwrap();
        assert_eq!(p.data(), &[4.0]);
        assert_eq!(idx.indices, vec![3]); // (1, 1)

        assert!(matches!(maxpool(&x, 3, 1), Err(Error::Dimension(_))));
    }

    #[test]
    fn maxpool_matches_window_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[4, 6, 6], &mut rng);
        let (p, idx) = maxpool(&x, 2, 2).unwrap();
        assert_eq!(p.shape(), &[4, 3, 3]);
        for c in 0..4 {
            for oy in 0..3 {
                for ox in 0..3 {
                    let vals: Vec<f64> = (0..4)
                        .map(|d| x.data[(c * 6 + oy * 2 + d / 2) * 6 + ox * 2 + d % 2])
                        .collect();
                    let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let o = (c * 3 + oy) * 3 + ox;
                    assert_eq!(p.data[o], m);
                    assert_eq!(x.data[idx.indices[o]], m);
                }
            }
        }
    }

    #[test]
    fn unpool_cases() {
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (p, idx) = maxpool(&x, 2, 2).unwrap();
        let u = unpool(&p, &idx, &[1, 2, 2]).unwrap();
        assert_eq!(u.data(), &[0.0, 0.0, 0.0, 4.0]);
        let z = unpool(&Tensor::zeros(&[1, 1, 1]), &idx, &[1, 2, 2]).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        let bad = IndexMap {
            input_shape: vec![1, 2, 2],
            indices: vec![9],
        };
        assert!(matches!(
            unpool(&p, &bad, &[1, 2, 2]),
            Err(Error::Corruption(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn conv_adjoint_identity(seed in any::<u64>(), stride in 1usize..3, padding in 0usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random(&[2, 7, 6], &mut rng);
            let k = random(&[3, 2, 3, 3], &mut rng);
            let y_shape = conv2d(&x, &k, stride, padding).unwrap().shape().to_vec();
            let y = random(&y_shape, &mut rng);
            let lhs = conv2d(&x, &k, stride, padding).unwrap().dot(&y);
            let rhs = x.dot(&conv2d_adjoint(&y, &k, stride, padding, (7, 6)).unwrap());
            prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
        }

        #[test]
        fn kernel_grad_matches_bilinear_form(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random(&[2, 6, 6], &mut rng);
            let k = random(&[3, 2, 3, 3], &mut rng);
            let y = random(&[3, 3, 3], &mut rng);
            // ⟨y, conv(x, k)⟩ is linear in k, so ⟨grad, k⟩ must reproduce it.
            let g = conv2d_kernel_grad(&x, &y, k.shape(), 2, 1).unwrap();
            let lhs = conv2d(&x, &k, 2, 1).unwrap().dot(&y);
            prop_assert!((lhs - g.dot(&k)).abs() <= 1e-10 * lhs.abs().max(1.0));
        }

        #[test]
        fn unpool_roundtrip_keeps_window_max(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random(&[3, 6, 6], &mut rng);
            let (p, idx) = maxpool(&x, 2, 2).unwrap();
            let u = unpool(&p, &idx, x.shape()).unwrap();
            let (p2, idx2) = maxpool(&u, 2, 2).unwrap();
            // Window maxima may be negative, in which case the zero fill wins; compare
            // positions only where the max is positive.
            for (o, &v) in p.data().iter().enumerate() {
                if v > 0.0 {
                    prop_assert_eq!(p2.data()[o], v);
                    prop_assert_eq!(idx2.indices[o], idx.indices[o]);
                }
                prop_assert_eq!(u.data()[idx.indices[o]], v);
            }
            prop_assert_eq!(u.data().iter().filter(|&&v| v != 0.0).count(),
                            p.data().iter().filter(|&&v| v != 0.0).count());
        }
    }
}
