//! Differentiable primitive operations on the tape.
//!
//! Every operation computes its value eagerly with a plain loop kernel and
//! records a vector-Jacobian product closure. No implicit broadcasting:
//! elementwise operations require identical shapes, and batched matmul
//! requires equal batch prefixes (or a rank-2 operand shared across the
//! batch). Reductions and dot products accumulate sequentially along the
//! innermost axis; that order is part of the determinism contract.

use super::{strides_for, Scalar, Tape, Tensor, Var};
use crate::error::{fmt_shape, Error, Result};

// ── Elementwise ────────────────────────────────────────────────────────────

impl<T: Scalar> Tape<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("add", va, vb)?;
        let out = zip_map(va, vb, |x, y| x + y);
        Ok(self.push_op(
            out,
            vec![a, b],
            Box::new(|g, _, _| vec![Some(g.clone()), Some(g.clone())]),
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("sub", va, vb)?;
        let out = zip_map(va, vb, |x, y| x - y);
        Ok(self.push_op(
            out,
            vec![a, b],
            Box::new(|g, _, _| vec![Some(g.clone()), Some(g.map(|x| -x))]),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("mul", va, vb)?;
        let out = zip_map(va, vb, |x, y| x * y);
        Ok(self.push_op(
            out,
            vec![a, b],
            Box::new(|g, ins, _| {
                vec![Some(zip_map(g, ins[1], |gi, y| gi * y)), Some(zip_map(g, ins[0], |gi, x| gi * x))]
            }),
        ))
    }

    /// Multiply by a compile-time-known constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let cc = T::from_f64(c);
        let out = self.value(a).map(|x| x * cc);
        self.push_op(out, vec![a], Box::new(move |g, _, _| vec![Some(g.map(|x| x * cc))]))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.abs());
        self.push_op(
            out,
            vec![a],
            Box::new(|g, ins, _| {
                let dx = zip_map(g, ins[0], |gi, x| {
                    if x > T::zero() {
                        gi
                    } else if x < T::zero() {
                        -gi
                    } else {
                        T::zero()
                    }
                });
                vec![Some(dx)]
            }),
        )
    }

    /// GELU in its exact form: x/2 · (1 + erf(x/√2)).
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu_scalar);
        self.push_op(
            out,
            vec![a],
            Box::new(|g, ins, _| vec![Some(zip_map(g, ins[0], |gi, x| gi * gelu_grad_scalar(x)))]),
        )
    }
}

pub(crate) fn gelu_scalar<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
    half * x * (T::one() + (x * inv_sqrt2).erf())
}

fn gelu_grad_scalar<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
    let inv_sqrt_2pi = T::from_f64(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    let cdf = half * (T::one() + (x * inv_sqrt2).erf());
    let pdf = inv_sqrt_2pi * (-half * x * x).exp();
    cdf + x * pdf
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data().iter()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip_map preserves shape")
}

fn same_shape<T: Scalar>(op: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{op} lhs {} rhs {}",
            fmt_shape(a.shape()),
            fmt_shape(b.shape())
        )));
    }
    Ok(())
}

// ── Matmul ─────────────────────────────────────────────────────────────────

impl<T: Scalar> Tape<T> {
    /// Batched matrix product of the last two axes. Batch prefixes must be
    /// equal, or one operand may be rank-2 and is then shared across the
    /// batch (its gradient sums over the batch).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_tt(a, b, false, false)
    }

    /// Matmul with optional transposition of either operand's last two axes.
    pub fn matmul_tt(&mut self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Result<Var> {
        let out = bmm(self.value(a), self.value(b), trans_a, trans_b)?;
        Ok(self.push_op(
            out,
            vec![a, b],
            Box::new(move |g, ins, _| {
                let (a, b) = (ins[0], ins[1]);
                let da_full = if trans_a {
                    bmm(b, g, trans_b, true)
                } else {
                    bmm(g, b, false, !trans_b)
                }
                .expect("backward shapes mirror forward");
                let db_full = if trans_b {
                    bmm(g, a, true, trans_a)
                } else {
                    bmm(a, g, !trans_a, false)
                }
                .expect("backward shapes mirror forward");
                vec![
                    Some(reduce_to_shape(da_full, a.shape())),
                    Some(reduce_to_shape(db_full, b.shape())),
                ]
            }),
        ))
    }
}

/// Batched matmul kernel. The k-loop is innermost and sequential.
fn bmm<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, ta: bool, tb: bool) -> Result<Tensor<T>> {
    let (ash, bsh) = (a.shape(), b.shape());
    if ash.len() < 2 || bsh.len() < 2 {
        return Err(Error::Shape(format!(
            "matmul needs rank >= 2, lhs {} rhs {}",
            fmt_shape(ash),
            fmt_shape(bsh)
        )));
    }
    let (ar, ac) = (ash[ash.len() - 2], ash[ash.len() - 1]);
    let (br, bc) = (bsh[bsh.len() - 2], bsh[bsh.len() - 1]);
    let (m, ka) = if ta { (ac, ar) } else { (ar, ac) };
    let (kb, n) = if tb { (bc, br) } else { (br, bc) };
    if ka != kb {
        return Err(Error::Shape(format!("matmul lhs {} rhs {}", fmt_shape(ash), fmt_shape(bsh))));
    }
    let abatch = &ash[..ash.len() - 2];
    let bbatch = &bsh[..bsh.len() - 2];
    let batch_shape: &[usize] = if abatch == bbatch {
        abatch
    } else if abatch.is_empty() {
        bbatch
    } else if bbatch.is_empty() {
        abatch
    } else {
        return Err(Error::Shape(format!(
            "matmul batch prefixes differ, lhs {} rhs {}",
            fmt_shape(ash),
            fmt_shape(bsh)
        )));
    };
    let batches: usize = batch_shape.iter().product();
    let (amat, bmat) = (ar * ac, br * bc);
    let a_step = if abatch.is_empty() { 0 } else { amat };
    let b_step = if bbatch.is_empty() { 0 } else { bmat };

    let mut out_shape = batch_shape.to_vec();
    out_shape.push(m);
    out_shape.push(n);
    let mut out = vec![T::zero(); batches * m * n];
    let (ad, bd) = (a.data(), b.data());
    let k = ka;
    for bi in 0..batches {
        let ao = bi * a_step;
        let bo = bi * b_step;
        let oo = bi * m * n;
        for i in 0..m {
            for j in 0..n {
                let mut acc = T::zero();
                for kk in 0..k {
                    let av = ad[ao + if ta { kk * ac + i } else { i * ac + kk }];
                    let bv = bd[bo + if tb { j * bc + kk } else { kk * bc + j }];
                    acc += av * bv;
                }
                out[oo + i * n + j] = acc;
            }
        }
    }
    Tensor::new(out_shape, out)
}

/// Sums leading batch axes away until the shape matches `target` (used when a
/// rank-2 operand was shared across the batch).
fn reduce_to_shape<T: Scalar>(t: Tensor<T>, target: &[usize]) -> Tensor<T> {
    if t.shape() == target {
        return t;
    }
    debug_assert!(t.shape().len() > target.len());
    let tail: usize = target.iter().product();
    let lead = t.numel() / tail;
    let mut out = vec![T::zero(); tail];
    let data = t.data();
    for l in 0..lead {
        let base = l * tail;
        for i in 0..tail {
            out[i] += data[base + i];
        }
    }
    Tensor::new(target.to_vec(), out).expect("reduced shape matches target")
}

// ── Softmax ────────────────────────────────────────────────────────────────

impl<T: Scalar> Tape<T> {
    /// Numerically stable softmax along `axis`. Slices along that axis sum
    /// to one. NaN input is a numeric error.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let v = self.value(a);
        if axis >= v.shape().len() {
            return Err(Error::Shape(format!(
                "softmax axis {axis} out of range for {}",
                fmt_shape(v.shape())
            )));
        }
        if v.data().iter().any(|x| x.is_nan()) {
            return Err(Error::Numeric("softmax input contains NaN".to_string()));
        }
        let out = softmax_kernel(v, axis);
        Ok(self.push_op(
            out,
            vec![a],
            Box::new(move |g, _, y| {
                // dx = y ⊙ (g − Σ_axis g⊙y), per lane.
                let shape = y.shape();
                let l = shape[axis];
                let inner: usize = shape[axis + 1..].iter().product();
                let outer: usize = shape[..axis].iter().product();
                let (yd, gd) = (y.data(), g.data());
                let mut dx = vec![T::zero(); yd.len()];
                for o in 0..outer {
                    for inn in 0..inner {
                        let base = o * l * inner + inn;
                        let mut dot = T::zero();
                        for i in 0..l {
                            let ix = base + i * inner;
                            dot += gd[ix] * yd[ix];
                        }
                        for i in 0..l {
                            let ix = base + i * inner;
                            dx[ix] = yd[ix] * (gd[ix] - dot);
                        }
                    }
                }
                vec![Some(Tensor::new(shape.to_vec(), dx).expect("softmax grad shape"))]
            }),
        ))
    }
}

fn softmax_kernel<T: Scalar>(v: &Tensor<T>, axis: usize) -> Tensor<T> {
    let shape = v.shape();
    let l = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let src = v.data();
    let mut out = vec![T::zero(); src.len()];
    for o in 0..outer {
        for inn in 0..inner {
            let base = o * l * inner + inn;
            let mut max = src[base];
            for i in 1..l {
                let x = src[base + i * inner];
                if x > max {
                    max = x;
                }
            }
            let mut sum = T::zero();
            for i in 0..l {
                let ix = base + i * inner;
                let e = (src[ix] - max).exp();
                out[ix] = e;
                sum += e;
            }
            for i in 0..l {
                out[base + i * inner] /= sum;
            }
        }
    }
    Tensor::new(shape.to_vec(), out).expect("softmax preserves shape")
}

// ── Reductions ─────────────────────────────────────────────────────────────

impl<T: Scalar> Tape<T> {
    /// Sum of all elements, as a rank-0 scalar.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let mut acc = T::zero();
        for &x in self.value(a).data() {
            acc += x;
        }
        let shape = self.value(a).shape().to_vec();
        self.push_op(
            Tensor::scalar(acc),
            vec![a],
            Box::new(move |g, _, _| vec![Some(Tensor::full(&shape, g.item()))]),
        )
    }

    /// Arithmetic mean of all elements, as a rank-0 scalar.
    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).numel();
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n as f64)
    }
}

// ── Shape movement ─────────────────────────────────────────────────────────

impl<T: Scalar> Tape<T> {
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a);
        let numel: usize = shape.iter().product();
        if numel != v.numel() {
            return Err(Error::Shape(format!(
                "reshape {} -> {} changes element count",
                fmt_shape(v.shape()),
                fmt_shape(shape)
            )));
        }
        let src_shape = v.shape().to_vec();
        let out = Tensor::new(shape.to_vec(), v.data().to_vec()).expect("checked above");
        Ok(self.push_op(
            out,
            vec![a],
            Box::new(move |g, _, _| {
                vec![Some(
                    Tensor::new(src_shape.clone(), g.data().to_vec()).expect("same element count"),
                )]
            }),
        ))
    }

    /// Reorders axes: output axis `d` is input axis `perm[d]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let v = self.value(a);
        let rank = v.shape().len();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Shape(format!(
                "permute {perm:?} is not a permutation of rank {rank}"
            )));
        }
        let out = permute_kernel(v, perm);
        let mut inv = vec![0usize; rank];
        for (d, &p) in perm.iter().enumerate() {
            inv[p] = d;
        }
        Ok(self.push_op(out, vec![a], Box::new(move |g, _, _| vec![Some(permute_kernel(g, &inv))])))
    }

    /// Concatenates two tensors along `axis`; all other extents must match.
    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape(), vb.shape());
        let rank = sa.len();
        let compatible = sb.len() == rank
            && axis < rank
            && (0..rank).all(|d| d == axis || sa[d] == sb[d]);
        if !compatible {
            return Err(Error::Shape(format!(
                "concat axis {axis} lhs {} rhs {}",
                fmt_shape(sa),
                fmt_shape(sb)
            )));
        }
        let mut out_shape = sa.to_vec();
        out_shape[axis] += sb[axis];
        let inner: usize = sa[axis + 1..].iter().product();
        let outer: usize = sa[..axis].iter().product();
        let (abl, bbl) = (sa[axis] * inner, sb[axis] * inner);
        let mut out = Vec::with_capacity(va.numel() + vb.numel());
        for o in 0..outer {
            out.extend_from_slice(&va.data()[o * abl..(o + 1) * abl]);
            out.extend_from_slice(&vb.data()[o * bbl..(o + 1) * bbl]);
        }
        let a_extent = sa[axis];
        let value = Tensor::new(out_shape, out).expect("concat length");
        Ok(self.push_op(
            value,
            vec![a, b],
            Box::new(move |g, _, _| {
                let gs = g.shape();
                let mut astarts = vec![0usize; gs.len()];
                let mut alens = gs.to_vec();
                alens[axis] = a_extent;
                let ga = slice_kernel(g, &astarts, &alens);
                astarts[axis] = a_extent;
                let mut blens = gs.to_vec();
                blens[axis] -= a_extent;
                let gb = slice_kernel(g, &astarts, &blens);
                vec![Some(ga), Some(gb)]
            }),
        ))
    }

    /// Copies the hyper-rectangle starting at `starts` with extents `lens`.
    pub fn slice(&mut self, a: Var, starts: &[usize], lens: &[usize]) -> Result<Var> {
        let v = self.value(a);
        let shape = v.shape();
        let ok = starts.len() == shape.len()
            && lens.len() == shape.len()
            && (0..shape.len()).all(|d| starts[d] + lens[d] <= shape[d] && lens[d] > 0);
        if !ok {
            return Err(Error::Shape(format!(
                "slice start {:?} len {:?} from {}",
                starts,
                lens,
                fmt_shape(shape)
            )));
        }
        let out = slice_kernel(v, starts, lens);
        let src_shape = shape.to_vec();
        let starts = starts.to_vec();
        Ok(self.push_op(
            out,
            vec![a],
            Box::new(move |g, _, _| vec![Some(embed_kernel(g, &src_shape, &starts))]),
        ))
    }
}

fn permute_kernel<T: Scalar>(v: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let in_shape = v.shape();
    let rank = in_shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let in_strides = strides_for(in_shape);
    let src = v.data();
    let mut out = Vec::with_capacity(src.len());
    let mut idx = vec![0usize; rank];
    if src.is_empty() || rank == 0 {
        return Tensor::new(out_shape, src.to_vec()).expect("rank-0 permute");
    }
    loop {
        let mut off = 0usize;
        for d in 0..rank {
            off += idx[d] * in_strides[perm[d]];
        }
        out.push(src[off]);
        // Odometer increment over the output shape.
        let mut d = rank;
        loop {
            if d == 0 {
                return Tensor::new(out_shape, out).expect("permute length");
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

fn slice_kernel<T: Scalar>(v: &Tensor<T>, starts: &[usize], lens: &[usize]) -> Tensor<T> {
    let shape = v.shape();
    let rank = shape.len();
    let strides = strides_for(shape);
    let src = v.data();
    let numel: usize = lens.iter().product();
    let mut out = Vec::with_capacity(numel);
    // Copy contiguous innermost runs.
    let run = if rank == 0 { 1 } else { lens[rank - 1] };
    let mut idx = vec![0usize; rank.saturating_sub(1)];
    loop {
        let mut off = 0usize;
        for d in 0..rank.saturating_sub(1) {
            off += (starts[d] + idx[d]) * strides[d];
        }
        if rank > 0 {
            off += starts[rank - 1];
        }
        out.extend_from_slice(&src[off..off + run]);
        let mut d = rank.saturating_sub(1);
        loop {
            if d == 0 {
                let t = Tensor::new(lens.to_vec(), out).expect("slice length");
                return t;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < lens[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

/// Embeds `g` (shape `lens`) into zeros of `into_shape` at offset `starts`.
fn embed_kernel<T: Scalar>(g: &Tensor<T>, into_shape: &[usize], starts: &[usize]) -> Tensor<T> {
    let rank = into_shape.len();
    let strides = strides_for(into_shape);
    let lens = g.shape();
    let mut out = vec![T::zero(); into_shape.iter().product()];
    let src = g.data();
    let run = if rank == 0 { 1 } else { lens[rank - 1] };
    let mut idx = vec![0usize; rank.saturating_sub(1)];
    let mut src_pos = 0usize;
    loop {
        let mut off = 0usize;
        for d in 0..rank.saturating_sub(1) {
            off += (starts[d] + idx[d]) * strides[d];
        }
        if rank > 0 {
            off += starts[rank - 1];
        }
        out[off..off + run].copy_from_slice(&src[src_pos..src_pos + run]);
        src_pos += run;
        let mut d = rank.saturating_sub(1);
        loop {
            if d == 0 {
                return Tensor::new(into_shape.to_vec(), out).expect("embed length");
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < lens[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

// ── Attention helpers ──────────────────────────────────────────────────────

const L2_EPS: f64 = 1e-12;

impl<T: Scalar> Tape<T> {
    /// L2 normalization along the last axis: y = x / √(Σx² + 1e-12).
    pub fn l2_normalize_last(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.shape().is_empty() {
            return Err(Error::Shape("l2_normalize_last needs rank >= 1".to_string()));
        }
        let l = *v.shape().last().expect("non-empty shape");
        let lanes = v.numel() / l;
        let eps = T::from_f64(L2_EPS);
        let src = v.data();
        let mut out = vec![T::zero(); src.len()];
        for lane in 0..lanes {
            let base = lane * l;
            let mut sq = T::zero();
            for i in 0..l {
                sq += src[base + i] * src[base + i];
            }
            let inv = (sq + eps).sqrt().recip();
            for i in 0..l {
                out[base + i] = src[base + i] * inv;
            }
        }
        let value = Tensor::new(v.shape().to_vec(), out).expect("l2 preserves shape");
        Ok(self.push_op(
            value,
            vec![a],
            Box::new(move |g, ins, _| {
                let x = ins[0];
                let l = *x.shape().last().expect("non-empty shape");
                let lanes = x.numel() / l;
                let (xd, gd) = (x.data(), g.data());
                let mut dx = vec![T::zero(); xd.len()];
                let eps = T::from_f64(L2_EPS);
                for lane in 0..lanes {
                    let base = lane * l;
                    let mut sq = T::zero();
                    let mut dot = T::zero();
                    for i in 0..l {
                        sq += xd[base + i] * xd[base + i];
                    }
                    for i in 0..l {
                        dot += gd[base + i] * xd[base + i];
                    }
                    let r2 = sq + eps;
                    let s = r2.sqrt().recip();
                    let s3 = s / r2;
                    for i in 0..l {
                        dx[base + i] = gd[base + i] * s - xd[base + i] * s3 * dot;
                    }
                }
                vec![Some(Tensor::new(x.shape().to_vec(), dx).expect("l2 grad shape"))]
            }),
        ))
    }

    /// Multiplies `x` of shape [B, H, ...] by a per-head scalar `alpha` of
    /// shape [H] (the learnable attention temperature).
    pub fn head_scale(&mut self, x: Var, alpha: Var) -> Result<Var> {
        let (vx, va) = (self.value(x), self.value(alpha));
        let xs = vx.shape();
        if xs.len() < 2 || va.shape().len() != 1 || va.shape()[0] != xs[1] {
            return Err(Error::Shape(format!(
                "head_scale x {} alpha {}",
                fmt_shape(xs),
                fmt_shape(va.shape())
            )));
        }
        let h = xs[1];
        let rest: usize = xs[2..].iter().product();
        let b = xs[0];
        let (xd, ad) = (vx.data(), va.data());
        let mut out = vec![T::zero(); xd.len()];
        for bi in 0..b {
            for hi in 0..h {
                let base = (bi * h + hi) * rest;
                let s = ad[hi];
                for r in 0..rest {
                    out[base + r] = xd[base + r] * s;
                }
            }
        }
        let value = Tensor::new(xs.to_vec(), out).expect("head_scale preserves shape");
        Ok(self.push_op(
            value,
            vec![x, alpha],
            Box::new(move |g, ins, _| {
                let (x, alpha) = (ins[0], ins[1]);
                let (xd, ad, gd) = (x.data(), alpha.data(), g.data());
                let mut dx = vec![T::zero(); xd.len()];
                let mut da = vec![T::zero(); h];
                for bi in 0..b {
                    for hi in 0..h {
                        let base = (bi * h + hi) * rest;
                        let s = ad[hi];
                        let mut acc = T::zero();
                        for r in 0..rest {
                            dx[base + r] = gd[base + r] * s;
                            acc += gd[base + r] * xd[base + r];
                        }
                        da[hi] += acc;
                    }
                }
                vec![
                    Some(Tensor::new(x.shape().to_vec(), dx).expect("head_scale dx")),
                    Some(Tensor::new(vec![h], da).expect("head_scale dalpha")),
                ]
            }),
        ))
    }

    /// Adds a bias shared across the leading axis: x[i, ...] + bias[...].
    pub fn add_bias_lead(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        if vx.shape().len() < 1 || vx.shape()[1..] != *vb.shape() {
            return Err(Error::Shape(format!(
                "add_bias_lead x {} bias {}",
                fmt_shape(vx.shape()),
                fmt_shape(vb.shape())
            )));
        }
        let lead = vx.shape()[0];
        let tail = vb.numel();
        let (xd, bd) = (vx.data(), vb.data());
        let mut out = vec![T::zero(); xd.len()];
        for i in 0..lead {
            for j in 0..tail {
                out[i * tail + j] = xd[i * tail + j] + bd[j];
            }
        }
        let value = Tensor::new(vx.shape().to_vec(), out).expect("bias preserves shape");
        Ok(self.push_op(
            value,
            vec![x, bias],
            Box::new(move |g, ins, _| {
                let gd = g.data();
                let mut db = vec![T::zero(); tail];
                for i in 0..lead {
                    for j in 0..tail {
                        db[j] += gd[i * tail + j];
                    }
                }
                vec![
                    Some(g.clone()),
                    Some(Tensor::new(ins[1].shape().to_vec(), db).expect("bias grad shape")),
                ]
            }),
        ))
    }

    /// Row lookup: out[i, :] = table[idx[i], :]. Backward scatter-adds.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let v = self.value(table);
        let shape = v.shape();
        if shape.len() != 2 {
            return Err(Error::Shape(format!("gather_rows table {}", fmt_shape(shape))));
        }
        let (rows, cols) = (shape[0], shape[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::Contract(format!("gather_rows index {bad} >= {rows} rows")));
        }
        let src = v.data();
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            out.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        let value = Tensor::new(vec![idx.len(), cols], out).expect("gather length");
        let idx = idx.to_vec();
        Ok(self.push_op(
            value,
            vec![table],
            Box::new(move |g, ins, _| {
                let gd = g.data();
                let mut dt = vec![T::zero(); ins[0].numel()];
                for (pos, &i) in idx.iter().enumerate() {
                    for c in 0..cols {
                        dt[i * cols + c] += gd[pos * cols + c];
                    }
                }
                vec![Some(Tensor::new(vec![rows, cols], dt).expect("gather grad shape"))]
            }),
        ))
    }
}

// ── Tests ──────────────────────────────────────────────────────────────────
