use super::{Graph, GradError, Op, Result, Tensor, Var};

const NORM_FLOOR: f64 = 1e-12;

fn mismatch(msg: String) -> GradError {
    GradError::ShapeMismatch(msg)
}

fn pad3(s: &[usize]) -> [usize; 3] {
    let mut out = [1; 3];
    out[3 - s.len()..].copy_from_slice(s);
    out
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let (pa, pb) = (pad3(a), pad3(b));
    let mut out = Vec::with_capacity(rank);
    for d in 3 - rank..3 {
        let dim = match (pa[d], pb[d]) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(mismatch(format!("cannot broadcast {a:?} with {b:?}"))),
        };
        out.push(dim);
    }
    Ok(out)
}

/// Strides of `s` inside the broadcast output `out` (0 on broadcast axes).
fn bstrides(s: &[usize], out: &[usize]) -> [usize; 3] {
    let (ps, po) = (pad3(s), pad3(out));
    let mut strides = [0; 3];
    let mut acc = 1;
    for d in (0..3).rev() {
        strides[d] = if ps[d] == 1 && po[d] != 1 { 0 } else { acc };
        acc *= ps[d];
    }
    strides
}

/// Calls `f(out_index, a_index, b_index)` over a broadcast result.
fn for_each_broadcast(a: &[usize], b: &[usize], out: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let po = pad3(out);
    let (sa, sb) = (bstrides(a, out), bstrides(b, out));
    let mut o = 0;
    for i0 in 0..po[0] {
        for i1 in 0..po[1] {
            for i2 in 0..po[2] {
                f(
                    o,
                    i0 * sa[0] + i1 * sa[1] + i2 * sa[2],
                    i0 * sb[0] + i1 * sb[1] + i2 * sb[2],
                );
                o += 1;
            }
        }
    }
}

fn keepdim_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s[axis] = 1;
    s
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

impl Graph {
    fn binary(&mut self, a: Var, b: Var, kind: Binary) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa, &sb)?;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let f = |x: f64, y: f64| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
        };
        let data = if sa == sb {
            da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let mut data = vec![0.0; out_shape.iter().product()];
            for_each_broadcast(&sa, &sb, &out_shape, |o, i, j| data[o] = f(da[i], db[j]));
            data
        };
        let op = match kind {
            Binary::Add => Op::Add(a, b),
            Binary::Sub => Op::Sub(a, b),
            Binary::Mul => Op::Mul(a, b),
        };
        Ok(self.push(Tensor::with_shape(out_shape, data), op, &[a, b], Vec::new()))
    }

    /// Elementwise sum with right-aligned broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::with_shape(t.shape().to_vec(), data);
        self.push(value, op, &[x], Vec::new())
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, Op::AddScalar(x), |v| v + s)
    }

    pub fn mul_scalar(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, Op::MulScalar(x, s), |v| v * s)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sqrt(x), f64::sqrt)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch(format!("matmul {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::with_shape(vec![m, n], out), Op::MatMul(a, b), &[a, b], Vec::new()))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(mismatch(format!("transpose needs rank 2, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let out = transpose_raw(self.value(x).data(), r, c);
        Ok(self.push(Tensor::with_shape(vec![c, r], out), Op::Transpose(x), &[x], Vec::new()))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = Tensor::new(shape, self.value(x).data().to_vec())?;
        Ok(self.push(t, Op::Reshape(x), &[x], Vec::new()))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        let (outer, len, inner) = t.axis_split(axis)?;
        let mut out = t.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| out[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..len {
                    let e = (out[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    sum += e;
                }
                for j in 0..len {
                    out[idx(j)] /= sum;
                }
            }
        }
        let shape = t.shape().to_vec();
        Ok(self.push(Tensor::with_shape(shape, out), Op::Softmax(x, axis), &[x], Vec::new()))
    }

    /// Normalizes each slice along `axis` to zero mean and unit variance
    /// (population variance plus `1e-5`), then applies `gain` and `bias` of
    /// shape `[len]`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, axis: usize) -> Result<Var> {
        const EPS: f64 = 1e-5;
        let t = self.value(x);
        let (outer, len, inner) = t.axis_split(axis)?;
        for p in [gain, bias] {
            if self.shape(p) != [len] {
                return Err(mismatch(format!(
                    "layer_norm affine shape {:?}, expected [{len}]",
                    self.shape(p)
                )));
            }
        }
        let xd = t.data();
        let (gd, bd) = (self.value(gain).data(), self.value(bias).data());
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        let mut inv_std = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let mean = (0..len).map(|j| xd[idx(j)]).sum::<f64>() / len as f64;
                let var = (0..len).map(|j| (xd[idx(j)] - mean).powi(2)).sum::<f64>() / len as f64;
                let inv = 1.0 / (var + EPS).sqrt();
                for j in 0..len {
                    let h = (xd[idx(j)] - mean) * inv;
                    xhat[idx(j)] = h;
                    out[idx(j)] = h * gd[j] + bd[j];
                }
                inv_std.push(inv);
            }
        }
        let shape = t.shape().to_vec();
        let mut saved = xhat;
        saved.extend(inv_std);
        Ok(self.push(
            Tensor::with_shape(shape, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                axis,
            },
            &[x, gain, bias],
            saved,
        ))
    }

    /// 1-D cross-correlation with zero "same" padding. `x` is `[C_in, L]` or
    /// `[B, C_in, L]`, `w` is `[C_out, C_in, K]`, `b` is `[C_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, dilation: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let (batch, cin, len) = match xs.as_slice() {
            [c, l] => (1, *c, *l),
            [b, c, l] => (*b, *c, *l),
            _ => return Err(mismatch(format!("conv1d input {xs:?}"))),
        };
        if ws.len() != 3 || ws[1] != cin || dilation == 0 {
            return Err(mismatch(format!("conv1d kernel {ws:?} for input {xs:?}")));
        }
        let (cout, k) = (ws[0], ws[2]);
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(mismatch(format!("conv1d bias {:?}", self.shape(b))));
            }
        }
        let pad = dilation * (k - 1) / 2;
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let mut out = vec![0.0; batch * cout * len];
        for bi in 0..batch {
            for co in 0..cout {
                let y = &mut out[(bi * cout + co) * len..(bi * cout + co + 1) * len];
                if let Some(b) = b {
                    y.fill(self.value(b).data()[co]);
                }
                for ci in 0..cin {
                    let xr = &xd[(bi * cin + ci) * len..(bi * cin + ci + 1) * len];
                    for kk in 0..k {
                        let wv = wd[(co * cin + ci) * k + kk];
                        let off = (kk * dilation) as isize - pad as isize;
                        let (ys, xs_) = shifted(len, off);
                        for (yv, xv) in y[ys.clone()].iter_mut().zip(&xr[xs_]) {
                            *yv += wv * xv;
                        }
                    }
                }
            }
        }
        let mut shape = xs.clone();
        let r = shape.len();
        shape[r - 2] = cout;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(
            Tensor::with_shape(shape, out),
            Op::Conv1d { x, w, b, dilation },
            &inputs,
            Vec::new(),
        ))
    }

    fn reduce(&mut self, x: Var, axis: usize, mean: bool) -> Result<Var> {
        let t = self.value(x);
        let (outer, len, inner) = t.axis_split(axis)?;
        let xd = t.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                for i in 0..inner {
                    out[o * inner + i] += xd[(o * len + j) * inner + i];
                }
            }
        }
        if mean {
            out.iter_mut().for_each(|v| *v /= len as f64);
        }
        let shape = keepdim_shape(t.shape(), axis);
        let op = if mean { Op::Mean(x, axis) } else { Op::Sum(x, axis) };
        Ok(self.push(Tensor::with_shape(shape, out), op, &[x], Vec::new()))
    }

    /// Sum along `axis`, keeping it with length 1.
    pub fn sum(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(x, axis, false)
    }

    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce(x, axis, true)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x), &[x], Vec::new())
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(s), Op::MeanAll(x), &[x], Vec::new())
    }

    /// `sqrt(mean((x - mean)^2) + eps)` along `axis`, kept with length 1.
    pub fn std(&mut self, x: Var, axis: usize, eps: f64) -> Result<Var> {
        let t = self.value(x);
        let (outer, len, inner) = t.axis_split(axis)?;
        let xd = t.data();
        let mut out = vec![0.0; outer * inner];
        let mut means = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let mean = (0..len).map(|j| xd[idx(j)]).sum::<f64>() / len as f64;
                let var = (0..len).map(|j| (xd[idx(j)] - mean).powi(2)).sum::<f64>() / len as f64;
                means[o * inner + i] = mean;
                out[o * inner + i] = (var + eps).sqrt();
            }
        }
        let shape = keepdim_shape(t.shape(), axis);
        Ok(self.push(Tensor::with_shape(shape, out), Op::Std(x, axis), &[x], means))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| mismatch("concat of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(mismatch(format!("concat axis {axis} for {base:?}")));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(mismatch(format!("concat {s:?} with {base:?}")));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let len = self.shape(v)[axis];
                out.extend_from_slice(&self.value(v).data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(self.push(Tensor::with_shape(shape, out), Op::Concat(xs.to_vec(), axis), xs, Vec::new()))
    }

    /// `logsumexp(logits) - logits[label]` for a logit vector of any shape.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let z = self.value(logits).data();
        if label >= z.len() {
            return Err(GradError::BadLabel {
                label,
                classes: z.len(),
            });
        }
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let loss = sum.ln() + max - z[label];
        let probs = exps.iter().map(|e| e / sum).collect();
        Ok(self.push(
            Tensor::scalar(loss.max(0.0)),
            Op::CrossEntropy(logits, label),
            &[logits],
            probs,
        ))
    }

    /// Cosine similarity of two equally sized tensors.
    pub fn cosine(&mut self, u: Var, v: Var) -> Result<Var> {
        let (ud, vd) = (self.value(u).data(), self.value(v).data());
        if ud.len() != vd.len() {
            return Err(mismatch(format!("cosine {} vs {}", ud.len(), vd.len())));
        }
        let nu = ud.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nv = vd.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nu == 0.0 || nv == 0.0 {
            return Err(GradError::ZeroNorm);
        }
        let c = ud.iter().zip(vd).map(|(a, b)| a * b).sum::<f64>() / (nu * nv);
        Ok(self.push(Tensor::scalar(c), Op::Cosine(u, v), &[u, v], vec![nu, nv]))
    }

    /// Scales each slice along `axis` to unit L2 norm.
    pub fn l2_normalize(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        let (outer, len, inner) = t.axis_split(axis)?;
        let xd = t.data();
        let mut out = vec![0.0; xd.len()];
        let mut norms = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let n = (0..len).map(|j| xd[idx(j)].powi(2)).sum::<f64>().sqrt().max(NORM_FLOOR);
                for j in 0..len {
                    out[idx(j)] = xd[idx(j)] / n;
                }
                norms.push(n);
            }
        }
        let shape = t.shape().to_vec();
        Ok(self.push(Tensor::with_shape(shape, out), Op::L2Normalize(x, axis), &[x], norms))
    }

    /// Additive angular margin logits: `scale * cos` everywhere except the
    /// target entry, which becomes `scale * cos(theta + margin)`.
    pub fn angular_margin(&mut self, cos: Var, label: usize, margin: f64, scale: f64) -> Result<Var> {
        let t = self.value(cos);
        if label >= t.numel() {
            return Err(GradError::BadLabel {
                label,
                classes: t.numel(),
            });
        }
        let mut out: Vec<f64> = t.data().iter().map(|c| scale * c).collect();
        let c = t.data()[label];
        let sin = (1.0 - c * c).max(0.0).sqrt();
        out[label] = scale * (c * margin.cos() - sin * margin.sin());
        let shape = t.shape().to_vec();
        Ok(self.push(
            Tensor::with_shape(shape, out),
            Op::AngularMargin {
                cos,
                label,
                margin,
                scale,
            },
            &[cos],
            Vec::new(),
        ))
    }
}

/// Output and input index ranges for `y[i] += x[i + off]` over `len` samples.
/// Dot product with four independent accumulators so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn shifted(len: usize, off: isize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    if off >= 0 {
        let off = (off as usize).min(len);
        (0..len - off, off..len)
    } else {
        let off = ((-off) as usize).min(len);
        (off..len, 0..len - off)
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

fn unbroadcast(
    g: &[f64],
    out_shape: &[usize],
    in_shape: &[usize],
    other: Option<(&[f64], &[usize])>,
) -> Vec<f64> {
    let n: usize = in_shape.iter().product();
    if in_shape == out_shape && other.is_none_or(|(_, s)| s == out_shape) {
        return match other {
            Some((o, _)) => g.iter().zip(o).map(|(a, b)| a * b).collect(),
            None => g.to_vec(),
        };
    }
    let mut acc = vec![0.0; n];
    match other {
        Some((od, os)) => for_each_broadcast(in_shape, os, out_shape, |o, i, j| acc[i] += g[o] * od[j]),
        None => for_each_broadcast(in_shape, in_shape, out_shape, |o, i, _| acc[i] += g[o]),
    }
    acc
}

/// Input gradients of node `i` given its output gradient `g`.
pub(crate) fn backward_node(graph: &Graph, i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let node = &graph.nodes[i];
    let out = &node.value;
    let val = |v: Var| graph.value(v);
    match &node.op {
        Op::Leaf => Vec::new(),
        Op::Add(a, b) => vec![
            (*a, unbroadcast(g, out.shape(), val(*a).shape(), None)),
            (*b, unbroadcast(g, out.shape(), val(*b).shape(), None)),
        ],
        Op::Sub(a, b) => {
            let mut gb = unbroadcast(g, out.shape(), val(*b).shape(), None);
            gb.iter_mut().for_each(|v| *v = -*v);
            vec![(*a, unbroadcast(g, out.shape(), val(*a).shape(), None)), (*b, gb)]
        }
        Op::Mul(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            vec![
                (*a, unbroadcast(g, out.shape(), ta.shape(), Some((tb.data(), tb.shape())))),
                (*b, unbroadcast(g, out.shape(), tb.shape(), Some((ta.data(), ta.shape())))),
            ]
        }
        Op::AddScalar(x) => vec![(*x, g.to_vec())],
        Op::MulScalar(x, s) => vec![(*x, g.iter().map(|v| v * s).collect())],
        Op::Relu(x) => vec![(
            *x,
            g.iter()
                .zip(out.data())
                .map(|(gv, y)| if *y > 0.0 { *gv } else { 0.0 })
                .collect(),
        )],
        Op::Tanh(x) => vec![(
            *x,
            g.iter().zip(out.data()).map(|(gv, y)| gv * (1.0 - y * y)).collect(),
        )],
        Op::Sqrt(x) => vec![(
            *x,
            g.iter().zip(out.data()).map(|(gv, y)| gv * 0.5 / y).collect(),
        )],
        Op::MatMul(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
            let bt = transpose_raw(tb.data(), k, n);
            let at = transpose_raw(ta.data(), m, k);
            vec![
                (*a, matmul_raw(g, &bt, m, n, k)),
                (*b, matmul_raw(&at, g, k, m, n)),
            ]
        }
        Op::Transpose(x) => {
            let s = out.shape();
            vec![(*x, transpose_raw(g, s[0], s[1]))]
        }
        Op::Reshape(x) => vec![(*x, g.to_vec())],
        Op::Softmax(x, axis) => {
            let (outer, len, inner) = out.axis_split(*axis).expect("validated in forward");
            let y = out.data();
            let mut dx = vec![0.0; y.len()];
            for o in 0..outer {
                for ii in 0..inner {
                    let idx = |j: usize| (o * len + j) * inner + ii;
                    let dot: f64 = (0..len).map(|j| g[idx(j)] * y[idx(j)]).sum();
                    for j in 0..len {
                        dx[idx(j)] = y[idx(j)] * (g[idx(j)] - dot);
                    }
                }
            }
            vec![(*x, dx)]
        }
        Op::LayerNorm { x, gain, bias, axis } => {
            let (outer, len, inner) = out.axis_split(*axis).expect("validated in forward");
            let n = out.numel();
            let (xhat, inv_std) = node.saved.split_at(n);
            let gd = val(*gain).data();
            let mut dx = vec![0.0; n];
            let mut dgain = vec![0.0; len];
            let mut dbias = vec![0.0; len];
            for o in 0..outer {
                for ii in 0..inner {
                    let idx = |j: usize| (o * len + j) * inner + ii;
                    let inv = inv_std[o * inner + ii];
                    let mut mean_d = 0.0;
                    let mut mean_dh = 0.0;
                    for j in 0..len {
                        let d = g[idx(j)] * gd[j];
                        mean_d += d;
                        mean_dh += d * xhat[idx(j)];
                        dgain[j] += g[idx(j)] * xhat[idx(j)];
                        dbias[j] += g[idx(j)];
                    }
                    mean_d /= len as f64;
                    mean_dh /= len as f64;
                    for j in 0..len {
                        let d = g[idx(j)] * gd[j];
                        dx[idx(j)] = inv * (d - mean_d - xhat[idx(j)] * mean_dh);
                    }
                }
            }
            vec![(*x, dx), (*gain, dgain), (*bias, dbias)]
        }
        Op::Conv1d { x, w, b, dilation } => {
            let (tx, tw) = (val(*x), val(*w));
            let (cout, cin, k) = (tw.shape()[0], tw.shape()[1], tw.shape()[2]);
            let len = *tx.shape().last().unwrap();
            let batch = tx.numel() / (cin * len);
            let pad = dilation * (k - 1) / 2;
            let (xd, wd) = (tx.data(), tw.data());
            // The input is often a constant (raw features), so skip its gradient.
            let need_dx = graph.nodes[x.0].requires_grad;
            let mut dx = vec![0.0; if need_dx { xd.len() } else { 0 }];
            let mut dw = vec![0.0; wd.len()];
            let mut db = vec![0.0; cout];
            for bi in 0..batch {
                for co in 0..cout {
                    let gy = &g[(bi * cout + co) * len..(bi * cout + co + 1) * len];
                    db[co] += gy.iter().sum::<f64>();
                    for ci in 0..cin {
                        let base = (bi * cin + ci) * len;
                        for kk in 0..k {
                            let widx = (co * cin + ci) * k + kk;
                            let off = (kk * dilation) as isize - pad as isize;
                            let (ys, xs) = shifted(len, off);
                            let xr = &xd[base + xs.start..base + xs.end];
                            dw[widx] += dot(&gy[ys.clone()], xr);
                            if !need_dx {
                                continue;
                            }
                            let wv = wd[widx];
                            let dxr = &mut dx[base + xs.start..base + xs.end];
                            for (d, gv) in dxr.iter_mut().zip(&gy[ys]) {
                                *d += wv * gv;
                            }
                        }
                    }
                }
            }
            let mut grads = vec![(*w, dw)];
            if need_dx {
                grads.push((*x, dx));
            }
            if let Some(b) = b {
                grads.push((*b, db));
            }
            grads
        }
        Op::Sum(x, axis) | Op::Mean(x, axis) => {
            let tx = val(*x);
            let (outer, len, inner) = tx.axis_split(*axis).expect("validated in forward");
            let scale = if matches!(node.op, Op::Mean(..)) {
                1.0 / len as f64
            } else {
                1.0
            };
            let mut dx = vec![0.0; tx.numel()];
            for o in 0..outer {
                for j in 0..len {
                    for ii in 0..inner {
                        dx[(o * len + j) * inner + ii] = g[o * inner + ii] * scale;
                    }
                }
            }
            vec![(*x, dx)]
        }
        Op::SumAll(x) => vec![(*x, vec![g[0]; val(*x).numel()])],
        Op::MeanAll(x) => {
            let n = val(*x).numel();
            vec![(*x, vec![g[0] / n as f64; n])]
        }
        Op::Std(x, axis) => {
            let tx = val(*x);
            let (outer, len, inner) = tx.axis_split(*axis).expect("validated in forward");
            let xd = tx.data();
            let mut dx = vec![0.0; xd.len()];
            for o in 0..outer {
                for ii in 0..inner {
                    let r = o * inner + ii;
                    let (mean, sigma) = (node.saved[r], out.data()[r]);
                    for j in 0..len {
                        let idx = (o * len + j) * inner + ii;
                        dx[idx] = g[r] * (xd[idx] - mean) / (len as f64 * sigma);
                    }
                }
            }
            vec![(*x, dx)]
        }
        Op::Concat(xs, axis) => {
            let s = out.shape();
            let outer: usize = s[..*axis].iter().product();
            let inner: usize = s[axis + 1..].iter().product();
            let total = s[*axis];
            let mut grads: Vec<(Var, Vec<f64>)> =
                xs.iter().map(|&v| (v, Vec::with_capacity(val(v).numel()))).collect();
            for o in 0..outer {
                let mut start = o * total * inner;
                for (v, gv) in grads.iter_mut() {
                    let chunk = val(*v).shape()[*axis] * inner;
                    gv.extend_from_slice(&g[start..start + chunk]);
                    start += chunk;
                }
            }
            grads
        }
        Op::CrossEntropy(z, label) => {
            let mut dz: Vec<f64> = node.saved.iter().map(|p| p * g[0]).collect();
            dz[*label] -= g[0];
            vec![(*z, dz)]
        }
        Op::Cosine(u, v) => {
            let (ud, vd) = (val(*u).data(), val(*v).data());
            let (nu, nv) = (node.saved[0], node.saved[1]);
            let c = out.item();
            let du = ud
                .iter()
                .zip(vd)
                .map(|(a, b)| g[0] * (b / (nu * nv) - c * a / (nu * nu)))
                .collect();
            let dv = ud
                .iter()
                .zip(vd)
                .map(|(a, b)| g[0] * (a / (nu * nv) - c * b / (nv * nv)))
                .collect();
            vec![(*u, du), (*v, dv)]
        }
        Op::L2Normalize(x, axis) => {
            let (outer, len, inner) = out.axis_split(*axis).expect("validated in forward");
            let y = out.data();
            let mut dx = vec![0.0; y.len()];
            for o in 0..outer {
                for ii in 0..inner {
                    let idx = |j: usize| (o * len + j) * inner + ii;
                    let n = node.saved[o * inner + ii];
                    let dot: f64 = (0..len).map(|j| g[idx(j)] * y[idx(j)]).sum();
                    for j in 0..len {
                        dx[idx(j)] = (g[idx(j)] - y[idx(j)] * dot) / n;
                    }
                }
            }
            vec![(*x, dx)]
        }
        Op::AngularMargin {
            cos,
            label,
            margin,
            scale,
        } => {
            let c = val(*cos).data()[*label];
            let mut dc: Vec<f64> = g.iter().map(|gv| gv * scale).collect();
            let sin = (1.0 - c * c).max(0.0).sqrt().max(1e-6);
            dc[*label] = g[*label] * scale * (margin.cos() + c * margin.sin() / sin);
            vec![(*cos, dc)]
        }
    }
}
