//! Forward and backward rules for every primitive the model uses.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A primitive operation together with its attributes.
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    MatMul,
    Transpose,
    Add,
    Sub,
    Mul,
    Scale(f64),
    AddScalar(f64),
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Sqrt,
    Square,
    Sum,
    Mean,
    /// Softmax over all entries; `false` entries are excluded and get exactly 0.
    SoftmaxMasked(Vec<bool>),
    /// Maximum over `axis` of a matrix; masked-out entries along that axis are skipped.
    MaxPool { axis: usize, mask: Option<Vec<bool>> },
    /// `signal [C_in, P]` ⊛ `kernel [C_out, C_in, l]` → `[C_out, P]`, zero same-padding, stride 1.
    Conv1d,
    /// Row-wise concatenation of matrices with equal column counts.
    Concat,
    GatherRows(Vec<usize>),
    SliceRows { start: usize, len: usize },
    Reshape(Vec<usize>),
    Clamp { lo: f64, hi: f64 },
    /// Identity forward, blocks the gradient.
    Detach,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Transpose => "transpose",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale(_) => "scale",
            OpKind::AddScalar(_) => "add_scalar",
            OpKind::Tanh => "tanh",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Sqrt => "sqrt",
            OpKind::Square => "square",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::SoftmaxMasked(_) => "softmax_masked",
            OpKind::MaxPool { .. } => "max_pool",
            OpKind::Conv1d => "conv1d",
            OpKind::Concat => "concat",
            OpKind::GatherRows(_) => "gather_rows",
            OpKind::SliceRows { .. } => "slice_rows",
            OpKind::Reshape(_) => "reshape",
            OpKind::Clamp { .. } => "clamp",
            OpKind::Detach => "detach",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            OpKind::MatMul | OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Conv1d => Some(2),
            OpKind::Concat => None,
            _ => Some(1),
        }
    }
}

/// Extra forward state needed by the backward rule.
#[derive(Debug, Clone, Default)]
pub(crate) enum Aux {
    #[default]
    None,
    /// Flat input index chosen for each output entry.
    Argmax(Vec<usize>),
}

fn shapes(inputs: &[&Tensor]) -> Vec<Vec<usize>> {
    inputs.iter().map(|t| t.shape().to_vec()).collect()
}

fn shape_err(kind: &OpKind, inputs: &[&Tensor]) -> Error {
    Error::Shape {
        op: kind.name(),
        shapes: shapes(inputs),
    }
}

fn require_rank2(kind: &OpKind, inputs: &[&Tensor]) -> Result<()> {
    if inputs.iter().all(|t| t.rank() == 2) {
        Ok(())
    } else {
        Err(shape_err(kind, inputs))
    }
}

/// Output shape for a binary elementwise op, allowing one side to be a single value.
fn broadcast_shape(kind: &OpKind, a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    if a.shape() == b.shape() || b.numel() == 1 {
        Ok(a.shape().to_vec())
    } else if a.numel() == 1 {
        Ok(b.shape().to_vec())
    } else {
        Err(shape_err(kind, &[a, b]))
    }
}

fn binary(a: &Tensor, b: &Tensor, shape: Vec<usize>, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let n: usize = shape.iter().product();
    let pick = |t: &Tensor, k: usize| if t.numel() == 1 { t.data()[0] } else { t.data()[k] };
    let data = (0..n).map(|k| f(pick(a, k), pick(b, k))).collect();
    Tensor::new(shape, data).expect("broadcast shape")
}

/// Reduce a gradient back onto an operand that may have been broadcast.
fn unbroadcast(grad: Tensor, target: &Tensor) -> Tensor {
    if grad.numel() == target.numel() {
        grad.with_shape(target.shape().to_vec()).expect("same numel")
    } else {
        let total: f64 = grad.data().iter().sum();
        Tensor::new(target.shape().to_vec(), vec![total]).expect("single value")
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn forward(kind: &OpKind, inputs: &[&Tensor]) -> Result<(Tensor, Aux)> {
    if let Some(n) = kind.arity() {
        if inputs.len() != n {
            return Err(Error::invalid(
                kind.name(),
                format!("expected {} inputs, got {}", n, inputs.len()),
            ));
        }
    } else if inputs.is_empty() {
        return Err(Error::invalid(kind.name(), "needs at least one input"));
    }

    let out = match kind {
        OpKind::MatMul => {
            require_rank2(kind, inputs)?;
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let (k2, n) = (b.shape()[0], b.shape()[1]);
            if k != k2 {
                return Err(shape_err(kind, inputs));
            }
            let mut out = vec![0.0; m * n];
            let (ad, bd) = (a.data(), b.data());
            for i in 0..m {
                for p in 0..k {
                    let av = ad[i * k + p];
                    if av == 0.0 {
                        continue;
                    }
                    let row = &bd[p * n..(p + 1) * n];
                    let dst = &mut out[i * n..(i + 1) * n];
                    for (o, bv) in dst.iter_mut().zip(row) {
                        *o += av * bv;
                    }
                }
            }
            Tensor::matrix(m, n, out)?
        }
        OpKind::Transpose => {
            require_rank2(kind, inputs)?;
            transpose(inputs[0])
        }
        OpKind::Add | OpKind::Sub | OpKind::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            let shape = broadcast_shape(kind, a, b)?;
            match kind {
                OpKind::Add => binary(a, b, shape, |x, y| x + y),
                OpKind::Sub => binary(a, b, shape, |x, y| x - y),
                _ => binary(a, b, shape, |x, y| x * y),
            }
        }
        OpKind::Scale(s) => inputs[0].map(|v| v * s),
        OpKind::AddScalar(s) => inputs[0].map(|v| v + s),
        OpKind::Tanh => inputs[0].map(f64::tanh),
        OpKind::Sigmoid => inputs[0].map(sigmoid),
        OpKind::Exp => inputs[0].map(f64::exp),
        OpKind::Log => {
            if inputs[0].data().iter().any(|&v| v <= 0.0) {
                return Err(Error::NonFinite { op: "log" });
            }
            inputs[0].map(f64::ln)
        }
        OpKind::Sqrt => {
            if inputs[0].data().iter().any(|&v| v < 0.0) {
                return Err(Error::NonFinite { op: "sqrt" });
            }
            inputs[0].map(f64::sqrt)
        }
        OpKind::Square => inputs[0].map(|v| v * v),
        OpKind::Sum => Tensor::scalar(inputs[0].data().iter().sum()),
        OpKind::Mean => {
            let t = inputs[0];
            Tensor::scalar(t.data().iter().sum::<f64>() / t.numel() as f64)
        }
        OpKind::SoftmaxMasked(mask) => {
            let x = inputs[0];
            if mask.len() != x.numel() {
                return Err(Error::shape(kind.name(), &[x.shape(), &[mask.len()]]));
            }
            masked_softmax(x, mask)?
        }
        OpKind::MaxPool { axis, mask } => {
            require_rank2(kind, inputs)?;
            let (out, argmax) = max_pool(inputs[0], *axis, mask.as_deref())?;
            return finish(kind, out, Aux::Argmax(argmax));
        }
        OpKind::Conv1d => conv1d(inputs[0], inputs[1])?,
        OpKind::Concat => {
            require_rank2(kind, inputs)?;
            let cols = inputs[0].shape()[1];
            if inputs.iter().any(|t| t.shape()[1] != cols) {
                return Err(shape_err(kind, inputs));
            }
            let rows: usize = inputs.iter().map(|t| t.shape()[0]).sum();
            let data = inputs.iter().flat_map(|t| t.data().iter().copied()).collect();
            Tensor::matrix(rows, cols, data)?
        }
        OpKind::GatherRows(ids) => {
            require_rank2(kind, inputs)?;
            let table = inputs[0];
            let (rows, cols) = (table.shape()[0], table.shape()[1]);
            let mut data = Vec::with_capacity(ids.len() * cols);
            for &id in ids {
                if id >= rows {
                    return Err(Error::invalid(
                        kind.name(),
                        format!("row {} out of range for {} rows", id, rows),
                    ));
                }
                data.extend_from_slice(&table.data()[id * cols..(id + 1) * cols]);
            }
            Tensor::matrix(ids.len(), cols, data)?
        }
        OpKind::SliceRows { start, len } => {
            require_rank2(kind, inputs)?;
            let t = inputs[0];
            let cols = t.shape()[1];
            if start + len > t.shape()[0] {
                return Err(shape_err(kind, inputs));
            }
            let data = t.data()[start * cols..(start + len) * cols].to_vec();
            Tensor::matrix(*len, cols, data)?
        }
        OpKind::Reshape(shape) => inputs[0].clone().with_shape(shape.clone())?,
        OpKind::Clamp { lo, hi } => inputs[0].map(|v| v.clamp(*lo, *hi)),
        OpKind::Detach => inputs[0].clone(),
    };
    finish(kind, out, Aux::None)
}

fn finish(kind: &OpKind, out: Tensor, aux: Aux) -> Result<(Tensor, Aux)> {
    if !out.is_finite() {
        return Err(Error::NonFinite { op: kind.name() });
    }
    Ok((out, aux))
}

fn transpose(t: &Tensor) -> Tensor {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    let mut data = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            data[j * r + i] = t.data()[i * c + j];
        }
    }
    Tensor::matrix(c, r, data).expect("transpose shape")
}

fn masked_softmax(x: &Tensor, mask: &[bool]) -> Result<Tensor> {
    let max = x
        .data()
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::EmptyDocument);
    }
    let mut out: Vec<f64> = x
        .data()
        .iter()
        .zip(mask)
        .map(|(&v, &m)| if m { (v - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    Tensor::new(x.shape().to_vec(), out)
}

fn max_pool(x: &Tensor, axis: usize, mask: Option<&[bool]>) -> Result<(Tensor, Vec<usize>)> {
    let (r, c) = (x.shape()[0], x.shape()[1]);
    let (outer, inner) = match axis {
        0 => (c, r),
        1 => (r, c),
        _ => return Err(Error::invalid("max_pool", format!("axis {} on a matrix", axis))),
    };
    if let Some(m) = mask {
        if m.len() != inner {
            return Err(Error::shape("max_pool", &[x.shape(), &[m.len()]]));
        }
    }
    let flat = |o: usize, k: usize| if axis == 0 { k * c + o } else { o * c + k };
    let mut values = Vec::with_capacity(outer);
    let mut argmax = Vec::with_capacity(outer);
    for o in 0..outer {
        let mut best: Option<(usize, f64)> = None;
        for k in 0..inner {
            if mask.is_some_and(|m| !m[k]) {
                continue;
            }
            let idx = flat(o, k);
            let v = x.data()[idx];
            // strict comparison keeps the lowest index on ties
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((idx, v));
            }
        }
        let (idx, v) = best.ok_or(Error::EmptyDocument)?;
        values.push(v);
        argmax.push(idx);
    }
    let shape = if axis == 0 { vec![1, c] } else { vec![r, 1] };
    Ok((Tensor::new(shape, values)?, argmax))
}

fn conv1d(signal: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    if signal.rank() != 2 || kernel.rank() != 3 || kernel.shape()[1] != signal.shape()[0] {
        return Err(Error::shape("conv1d", &[signal.shape(), kernel.shape()]));
    }
    let (c_in, p) = (signal.shape()[0], signal.shape()[1]);
    let (c_out, width) = (kernel.shape()[0], kernel.shape()[2]);
    if width % 2 == 0 {
        return Err(Error::invalid("conv1d", "kernel width must be odd"));
    }
    let half = width / 2;
    let (s, k) = (signal.data(), kernel.data());
    let mut out = vec![0.0; c_out * p];
    for o in 0..c_out {
        for c in 0..c_in {
            let krow = &k[(o * c_in + c) * width..(o * c_in + c + 1) * width];
            let srow = &s[c * p..(c + 1) * p];
            for pos in 0..p {
                let mut acc = 0.0;
                for (t, &kv) in krow.iter().enumerate() {
                    let src = pos + t;
                    if src < half || src - half >= p {
                        continue;
                    }
                    acc += kv * srow[src - half];
                }
                out[o * p + pos] += acc;
            }
        }
    }
    Tensor::matrix(c_out, p, out)
}

/// Gradient of the output with respect to each input, in input order.
pub(crate) fn backward(
    kind: &OpKind,
    inputs: &[&Tensor],
    out: &Tensor,
    aux: &Aux,
    g: &Tensor,
) -> Vec<Option<Tensor>> {
    let elementwise = |f: &dyn Fn(f64, f64, f64) -> f64| {
        let x = inputs[0];
        let data = x
            .data()
            .iter()
            .zip(out.data())
            .zip(g.data())
            .map(|((&xv, &yv), &gv)| f(xv, yv, gv))
            .collect();
        vec![Some(Tensor::new(x.shape().to_vec(), data).expect("same shape"))]
    };

    match kind {
        OpKind::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let ga = forward(&OpKind::MatMul, &[g, &transpose(b)]).expect("matmul grad").0;
            let gb = forward(&OpKind::MatMul, &[&transpose(a), g]).expect("matmul grad").0;
            vec![Some(ga), Some(gb)]
        }
        OpKind::Transpose => vec![Some(transpose(g))],
        OpKind::Add | OpKind::Sub | OpKind::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            let shape = g.shape().to_vec();
            let (ga, gb) = match kind {
                OpKind::Add => (g.clone(), g.clone()),
                OpKind::Sub => (g.clone(), g.map(|v| -v)),
                _ => (
                    binary(g, b, shape.clone(), |x, y| x * y),
                    binary(g, a, shape, |x, y| x * y),
                ),
            };
            vec![Some(unbroadcast(ga, a)), Some(unbroadcast(gb, b))]
        }
        OpKind::Scale(s) => vec![Some(g.map(|v| v * s))],
        OpKind::AddScalar(_) | OpKind::Reshape(_) => {
            vec![Some(g.clone().with_shape(inputs[0].shape().to_vec()).expect("same numel"))]
        }
        OpKind::Tanh => elementwise(&|_, y, gv| gv * (1.0 - y * y)),
        OpKind::Sigmoid => elementwise(&|_, y, gv| gv * y * (1.0 - y)),
        OpKind::Exp => elementwise(&|_, y, gv| gv * y),
        OpKind::Log => elementwise(&|x, _, gv| gv / x),
        OpKind::Sqrt => elementwise(&|_, y, gv| if y > 0.0 { gv * 0.5 / y } else { 0.0 }),
        OpKind::Square => elementwise(&|x, _, gv| gv * 2.0 * x),
        OpKind::Sum => vec![Some(Tensor::full(inputs[0].shape(), g.item()))],
        OpKind::Mean => {
            let n = inputs[0].numel() as f64;
            vec![Some(Tensor::full(inputs[0].shape(), g.item() / n))]
        }
        OpKind::SoftmaxMasked(mask) => {
            let y = out.data();
            let dot: f64 = y
                .iter()
                .zip(g.data())
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|((yv, gv), _)| yv * gv)
                .sum();
            let data = y
                .iter()
                .zip(g.data())
                .zip(mask)
                .map(|((&yv, &gv), &m)| if m { yv * (gv - dot) } else { 0.0 })
                .collect();
            vec![Some(Tensor::new(out.shape().to_vec(), data).expect("same shape"))]
        }
        OpKind::MaxPool { .. } => {
            let Aux::Argmax(idx) = aux else {
                unreachable!("max_pool always records argmax")
            };
            let mut grad = Tensor::zeros(inputs[0].shape());
            for (&i, &gv) in idx.iter().zip(g.data()) {
                grad.data_mut()[i] += gv;
            }
            vec![Some(grad)]
        }
        OpKind::Conv1d => {
            let (signal, kernel) = (inputs[0], inputs[1]);
            let (c_in, p) = (signal.shape()[0], signal.shape()[1]);
            let (c_out, width) = (kernel.shape()[0], kernel.shape()[2]);
            let half = width / 2;
            let mut gs = Tensor::zeros(signal.shape());
            let mut gk = Tensor::zeros(kernel.shape());
            let (s, k, gd) = (signal.data(), kernel.data(), g.data());
            for o in 0..c_out {
                for c in 0..c_in {
                    let kbase = (o * c_in + c) * width;
                    for pos in 0..p {
                        let gv = gd[o * p + pos];
                        if gv == 0.0 {
                            continue;
                        }
                        for t in 0..width {
                            let src = pos + t;
                            if src < half || src - half >= p {
                                continue;
                            }
                            let si = c * p + src - half;
                            gk.data_mut()[kbase + t] += gv * s[si];
                            gs.data_mut()[si] += gv * k[kbase + t];
                        }
                    }
                }
            }
            vec![Some(gs), Some(gk)]
        }
        OpKind::Concat => {
            let cols = g.shape()[1];
            let mut offset = 0;
            inputs
                .iter()
                .map(|t| {
                    let rows = t.shape()[0];
                    let data = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                    offset += rows;
                    Some(Tensor::matrix(rows, cols, data).expect("slice shape"))
                })
                .collect()
        }
        OpKind::GatherRows(ids) => {
            let cols = inputs[0].shape()[1];
            let mut grad = Tensor::zeros(inputs[0].shape());
            for (k, &id) in ids.iter().enumerate() {
                let src = &g.data()[k * cols..(k + 1) * cols];
                let dst = &mut grad.data_mut()[id * cols..(id + 1) * cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
            vec![Some(grad)]
        }
        OpKind::SliceRows { start, len } => {
            let cols = inputs[0].shape()[1];
            let mut grad = Tensor::zeros(inputs[0].shape());
            grad.data_mut()[start * cols..(start + len) * cols].copy_from_slice(g.data());
            vec![Some(grad)]
        }
        OpKind::Clamp { lo, hi } => {
            elementwise(&|x, _, gv| if x >= *lo && x <= *hi { gv } else { 0.0 })
        }
        OpKind::Detach => vec![None],
    }
}
