//! Minimal reverse-mode differentiation over dense row-major matrices.
//!
//! A [`Tape`] records every operation together with its value. Calling
//! [`Tape::backward`] on a scalar node walks the tape in reverse and returns
//! the gradient of that scalar with respect to every node.

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn from_rows<const N: usize>(rows: &[[f64; N]]) -> Self {
        Self::from_vec(rows.len(), N, rows.iter().flatten().copied().collect())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn add_assign(&mut self, other: &Matrix) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `c ← a·b (+ c)` for strided operands, `a`: m×k, `b`: k×n, `c`: m×n row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: the strides describe views lying inside `a`, `b` and `c`,
    // whose lengths are checked by the callers' shape arithmetic.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Probability clamp used by the focal loss.
pub const PROB_CLAMP: f64 = 1e-7;

/// Per-example focal loss `−(1−p_t)^γ·ln p_t` and its derivative with
/// respect to the logit.
pub fn focal_term(logit: f64, label: f64, gamma: f64) -> (f64, f64) {
    let p = sigmoid(logit);
    let clamped = !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p);
    let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let positive = label > 0.5;
    let pt = if positive { pc } else { 1.0 - pc };
    let q = 1.0 - pt;
    let loss = -q.powf(gamma) * pt.ln();
    if clamped {
        return (loss, 0.0);
    }
    let dl_dpt = if gamma == 0.0 {
        -1.0 / pt
    } else {
        gamma * q.powf(gamma - 1.0) * pt.ln() - q.powf(gamma) / pt
    };
    let dp_dz = p * (1.0 - p);
    let dpt_dz = if positive { dp_dz } else { -dp_dz };
    (loss, dl_dpt * dpt_dz)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Silu(Var),
    Concat(Vec<Var>),
    Gather(Var, Vec<usize>),
    ScatterMean {
        src: Var,
        index: Vec<usize>,
        inv_count: Vec<f64>,
    },
    ScatterMax {
        src: Var,
        argmax: Vec<Option<usize>>,
    },
    ReplaceRows {
        base: Var,
        rows: Var,
        index: Vec<usize>,
    },
    Focal {
        logits: Var,
        labels: Vec<f64>,
        gamma: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    recording: bool,
}

/// Gradients indexed by tape variable.
#[derive(Debug)]
pub struct Gradients(Vec<Option<Matrix>>);

impl Gradients {
    /// Gradient of the differentiated scalar w.r.t. `v`; `None` when `v` did
    /// not influence it.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.0[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.0[v.0].take()
    }
}

fn mismatch(expected: impl Into<String>, got: impl Into<String>) -> Error {
    Error::Dimension {
        expected: expected.into(),
        got: got.into(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_recording(true)
    }

    /// A tape that only evaluates values; `backward` fails on it.
    pub fn inference() -> Self {
        Self::with_recording(false)
    }

    fn with_recording(recording: bool) -> Self {
        Self {
            nodes: Vec::new(),
            recording,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        let op = if self.recording { op } else { Op::Leaf };
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(mismatch(
                format!("{k} rows on the right operand"),
                format!("{m}x{k} · {k2}x{n}"),
            ));
        }
        let mut out = Matrix::zeros(m, n);
        gemm(
            m,
            k,
            n,
            &self.value(a).data,
            (k as isize, 1),
            &self.value(b).data,
            (n as isize, 1),
            &mut out.data,
            false,
        );
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// Adds a 1×n row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.shape(a);
        if self.shape(bias) != (1, n) {
            return Err(mismatch(format!("1x{n} bias"), format!("{:?}", self.shape(bias))));
        }
        let b = self.value(bias).data.clone();
        let mut out = self.value(a).clone();
        for r in 0..m {
            for (o, bv) in out.row_mut(r).iter_mut().zip(&b) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddRow(a, bias)))
    }

    fn elementwise(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(format!("{:?}", self.shape(a)), format!("{:?}", self.shape(b))));
        }
        let (m, n) = self.shape(a);
        let data = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| f(*x, *y))
            .collect();
        Ok(self.push(Matrix::from_vec(m, n, data), op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = Matrix::from_vec(v.rows, v.cols, v.data.iter().map(|&x| silu(x)).collect());
        self.push(out, Op::Silu(a))
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |&p| self.shape(p).0);
        if let Some(&bad) = parts.iter().find(|&&p| self.shape(p).0 != rows) {
            return Err(mismatch(format!("{rows} rows"), format!("{:?}", self.shape(bad))));
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.data[r * cols + off..r * cols + off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    /// Row `i` of the output is row `index[i]` of `a`.
    pub fn gather(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let (m, n) = self.shape(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= m) {
            return Err(mismatch(format!("row index < {m}"), bad.to_string()));
        }
        let src = self.value(a);
        let mut out = Matrix::zeros(index.len(), n);
        for (r, &i) in index.iter().enumerate() {
            out.row_mut(r).copy_from_slice(src.row(i));
        }
        Ok(self.push(out, Op::Gather(a, index.to_vec())))
    }

    /// Mean of the rows of `src` grouped by `index`; groups without rows are zero.
    pub fn scatter_mean(&mut self, src: Var, index: &[usize], n_out: usize) -> Result<Var> {
        let (m, n) = self.shape(src);
        if index.len() != m || index.iter().any(|&i| i >= n_out) {
            return Err(mismatch(
                format!("{m} indices below {n_out}"),
                format!("{} indices", index.len()),
            ));
        }
        let mut count = vec![0.0; n_out];
        for &i in index {
            count[i] += 1.0;
        }
        let inv_count: Vec<f64> = count.iter().map(|&c| if c > 0.0 { 1.0 / c } else { 0.0 }).collect();
        let s = self.value(src);
        let mut out = Matrix::zeros(n_out, n);
        for (r, &i) in index.iter().enumerate() {
            for (o, v) in out.row_mut(i).iter_mut().zip(s.row(r)) {
                *o += v;
            }
        }
        for (i, w) in inv_count.iter().enumerate() {
            out.row_mut(i).iter_mut().for_each(|o| *o *= w);
        }
        Ok(self.push(
            out,
            Op::ScatterMean {
                src,
                index: index.to_vec(),
                inv_count,
            },
        ))
    }

    /// Element-wise maximum of the rows of `src` grouped by `index`; groups
    /// without rows are zero.
    pub fn scatter_max(&mut self, src: Var, index: &[usize], n_out: usize) -> Result<Var> {
        let (m, n) = self.shape(src);
        if index.len() != m || index.iter().any(|&i| i >= n_out) {
            return Err(mismatch(
                format!("{m} indices below {n_out}"),
                format!("{} indices", index.len()),
            ));
        }
        let s = self.value(src);
        let mut argmax: Vec<Option<usize>> = vec![None; n_out * n];
        let mut out = Matrix::zeros(n_out, n);
        for (r, &i) in index.iter().enumerate() {
            for c in 0..n {
                let slot = i * n + c;
                let v = s.data[r * n + c];
                if argmax[slot].is_none_or(|_| v > out.data[slot]) {
                    argmax[slot] = Some(r);
                    out.data[slot] = v;
                }
            }
        }
        Ok(self.push(out, Op::ScatterMax { src, argmax }))
    }

    /// Copy of `base` with row `index[i]` replaced by row `i` of `rows`.
    pub fn replace_rows(&mut self, base: Var, index: &[usize], rows: Var) -> Result<Var> {
        let (m, n) = self.shape(base);
        if self.shape(rows) != (index.len(), n) || index.iter().any(|&i| i >= m) {
            return Err(mismatch(
                format!("{}x{n} rows into {m}x{n}", index.len()),
                format!("{:?}", self.shape(rows)),
            ));
        }
        let mut out = self.value(base).clone();
        let r = self.value(rows);
        for (k, &i) in index.iter().enumerate() {
            out.row_mut(i).copy_from_slice(r.row(k));
        }
        Ok(self.push(
            out,
            Op::ReplaceRows {
                base,
                rows,
                index: index.to_vec(),
            },
        ))
    }

    /// Mean focal loss of an E×1 logit column against 0/1 labels.
    pub fn focal_loss(&mut self, logits: Var, labels: &[f64], gamma: f64) -> Result<Var> {
        let (m, n) = self.shape(logits);
        if n != 1 || labels.len() != m {
            return Err(mismatch(format!("{}x1 logits", labels.len()), format!("{m}x{n}")));
        }
        let z = &self.value(logits).data;
        let total: f64 = z.iter().zip(labels).map(|(&z, &y)| focal_term(z, y, gamma).0).sum();
        let loss = if m == 0 { 0.0 } else { total / m as f64 };
        Ok(self.push(
            Matrix::from_vec(1, 1, vec![loss]),
            Op::Focal {
                logits,
                labels: labels.to_vec(),
                gamma,
            },
        ))
    }

    /// Gradients of the 1×1 node `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if !self.recording {
            return Err(Error::NotRecorded);
        }
        if self.shape(output) != (1, 1) {
            return Err(mismatch("1x1 output", format!("{:?}", self.shape(output))));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Matrix::from_vec(1, 1, vec![1.0]));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let (m, k) = av.shape();
                    let n = bv.cols;
                    let ga = slot(&mut grads, *a, m, k);
                    gemm(
                        m,
                        n,
                        k,
                        &g.data,
                        (n as isize, 1),
                        &bv.data,
                        (1, n as isize),
                        &mut ga.data,
                        true,
                    );
                    let gb = slot(&mut grads, *b, k, n);
                    gemm(
                        k,
                        m,
                        n,
                        &av.data,
                        (1, k as isize),
                        &g.data,
                        (n as isize, 1),
                        &mut gb.data,
                        true,
                    );
                }
                Op::AddRow(a, bias) => {
                    let n = g.cols;
                    let gb = slot(&mut grads, *bias, 1, n);
                    for r in 0..g.rows {
                        for (o, v) in gb.data.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    slot(&mut grads, *a, g.rows, n).add_assign(&g);
                }
                Op::Add(a, b) => {
                    slot(&mut grads, *a, g.rows, g.cols).add_assign(&g);
                    slot(&mut grads, *b, g.rows, g.cols).add_assign(&g);
                }
                Op::Sub(a, b) => {
                    slot(&mut grads, *a, g.rows, g.cols).add_assign(&g);
                    let gb = slot(&mut grads, *b, g.rows, g.cols);
                    for (o, v) in gb.data.iter_mut().zip(&g.data) {
                        *o -= v;
                    }
                }
                Op::Silu(a) => {
                    let x = &self.value(*a).data;
                    let ga = slot(&mut grads, *a, g.rows, g.cols);
                    for ((o, gv), xv) in ga.data.iter_mut().zip(&g.data).zip(x) {
                        *o += gv * silu_grad(*xv);
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.shape(*p).1;
                        let gp = slot(&mut grads, *p, g.rows, w);
                        for r in 0..g.rows {
                            let src = &g.row(r)[off..off + w];
                            for (o, v) in gp.row_mut(r).iter_mut().zip(src) {
                                *o += v;
                            }
                        }
                        off += w;
                    }
                }
                Op::Gather(a, index) => {
                    let (m, n) = self.shape(*a);
                    let ga = slot(&mut grads, *a, m, n);
                    for (r, &i) in index.iter().enumerate() {
                        for (o, v) in ga.row_mut(i).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
                Op::ScatterMean { src, index, inv_count } => {
                    let (m, n) = self.shape(*src);
                    let gs = slot(&mut grads, *src, m, n);
                    for (r, &i) in index.iter().enumerate() {
                        let w = inv_count[i];
                        for (o, v) in gs.row_mut(r).iter_mut().zip(g.row(i)) {
                            *o += w * v;
                        }
                    }
                }
                Op::ScatterMax { src, argmax } => {
                    let (m, n) = self.shape(*src);
                    let gs = slot(&mut grads, *src, m, n);
                    for (s, am) in argmax.iter().enumerate() {
                        if let Some(r) = am {
                            gs.data[r * n + s % n] += g.data[s];
                        }
                    }
                }
                Op::ReplaceRows { base, rows, index } => {
                    let n = g.cols;
                    let gr = slot(&mut grads, *rows, index.len(), n);
                    for (k, &i) in index.iter().enumerate() {
                        for (o, v) in gr.row_mut(k).iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    let mut gb = g.clone();
                    for &i in index {
                        gb.row_mut(i).iter_mut().for_each(|v| *v = 0.0);
                    }
                    slot(&mut grads, *base, gb.rows, n).add_assign(&gb);
                }
                Op::Focal { logits, labels, gamma } => {
                    let z = &self.value(*logits).data;
                    let m = z.len();
                    let scale = g.data[0] / m.max(1) as f64;
                    let gz = slot(&mut grads, *logits, m, 1);
                    for ((o, &zv), &y) in gz.data.iter_mut().zip(z).zip(labels) {
                        *o += scale * focal_term(zv, y, *gamma).1;
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients(grads))
    }
}

fn slot(grads: &mut [Option<Matrix>], v: Var, rows: usize, cols: usize) -> &mut Matrix {
    grads[v.0].get_or_insert_with(|| Matrix::zeros(rows, cols))
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, seed: u64) -> Matrix {
        let data = (0..rows * cols)
            .map(|i| {
                let x = ((i as u64 + 1) * 2_654_435_761 + seed * 97) % 1000;
                x as f64 / 500.0 - 1.0
            })
            .collect();
        Matrix::from_vec(rows, cols, data)
    }

    /// Sum of `w ⊙ f(x)` for a fixed weight pattern, as a scalar to differentiate.
    fn weighted_sum(tape: &mut Tape, y: Var) -> Var {
        let (r, c) = tape.shape(y);
        let w = tape.leaf(m(c, 1, 99));
        let col = tape.matmul(y, w).unwrap();
        let ones = tape.leaf(Matrix::from_vec(1, r, vec![1.0; r]));
        tape.matmul(ones, col).unwrap()
    }

    fn check_op(build: impl Fn(&mut Tape, Var) -> Var, x0: Matrix) {
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let y = build(&mut tape, x);
        let s = weighted_sum(&mut tape, y);
        let g = tape.backward(s).unwrap();
        let analytic = g.get(x).cloned().unwrap_or_else(|| Matrix::zeros(x0.rows, x0.cols));
        let eval = |v: Matrix| {
            let mut t = Tape::inference();
            let x = t.leaf(v);
            let y = build(&mut t, x);
            let s = weighted_sum(&mut t, y);
            t.value(s).data[0]
        };
        for i in 0..x0.data.len() {
            let h = 1e-6;
            let mut p = x0.clone();
            p.data[i] += h;
            let mut q = x0.clone();
            q.data[i] -= h;
            let fd = (eval(p) - eval(q)) / (2.0 * h);
            assert!(
                (fd - analytic.data[i]).abs() < 1e-7 * (1.0 + fd.abs()),
                "entry {i}: {fd} vs {}",
                analytic.data[i]
            );
        }
    }

    #[test]
    fn matmul_matches_naive() {
        let a = m(3, 4, 1);
        let b = m(4, 2, 2);
        let mut tape = Tape::inference();
        let (va, vb) = (tape.leaf(a.clone()), tape.leaf(b.clone()));
        let c = tape.matmul(va, vb).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let naive: f64 = (0..4).map(|k| a.get(i, k) * b.get(k, j)).sum();
                assert!((tape.value(c).get(i, j) - naive).abs() < 1e-14);
            }
        }
        assert!(matches!(tape.matmul(va, va), Err(Error::Dimension { .. })));
    }

    #[test]
    fn op_gradients() {
        check_op(|t, x| t.silu(x), m(3, 2, 3));
        check_op(
            |t, x| {
                let w = t.leaf(m(2, 3, 4));
                t.matmul(x, w).unwrap()
            },
            m(4, 2, 5),
        );
        check_op(
            |t, x| {
                let b = t.leaf(m(1, 2, 6));
                let y = t.add_row(x, b).unwrap();
                t.add(y, x).unwrap()
            },
            m(3, 2, 7),
        );
        check_op(
            |t, x| {
                let y = t.gather(x, &[2, 0, 2, 1]).unwrap();
                let z = t.gather(x, &[0, 0, 1, 2]).unwrap();
                t.sub(y, z).unwrap()
            },
            m(3, 2, 8),
        );
        check_op(
            |t, x| {
                let y = t.silu(x);
                t.concat(&[x, y, x]).unwrap()
            },
            m(2, 2, 9),
        );
        check_op(|t, x| t.scatter_mean(x, &[1, 1, 3, 1, 0], 5).unwrap(), m(5, 3, 10));
        check_op(|t, x| t.scatter_max(x, &[1, 1, 3, 1, 0], 5).unwrap(), m(5, 3, 11));
        check_op(
            |t, x| {
                let rows = t.gather(x, &[0, 1]).unwrap();
                let rows = t.silu(rows);
                t.replace_rows(x, &[2, 0], rows).unwrap()
            },
            m(3, 2, 12),
        );
        check_op(
            |t, x| {
                let col = t.gather(x, &[0, 1, 2, 3]).unwrap();
                let w = t.leaf(Matrix::from_vec(2, 1, vec![0.7, -1.3]));
                let z = t.matmul(col, w).unwrap();
                t.focal_loss(z, &[1.0, 0.0, 0.0, 1.0], 3.0).unwrap()
            },
            m(4, 2, 13),
        );
    }

    #[test]
    fn scatter_edge_cases() {
        let mut tape = Tape::inference();
        let x = tape.leaf(Matrix::from_rows(&[[1.0, -2.0], [3.0, -4.0]]));
        let mean = tape.scatter_mean(x, &[2, 2], 3).unwrap();
        assert_eq!(tape.value(mean).data, vec![0.0, 0.0, 0.0, 0.0, 2.0, -3.0]);
        let max = tape.scatter_max(x, &[0, 0], 2).unwrap();
        assert_eq!(tape.value(max).data, vec![3.0, -2.0, 0.0, 0.0]);
    }

    #[test]
    fn inference_tape_cannot_differentiate() {
        let mut tape = Tape::inference();
        let x = tape.leaf(Matrix::from_vec(1, 1, vec![2.0]));
        let y = tape.silu(x);
        assert!(matches!(tape.backward(y), Err(Error::NotRecorded)));
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::zeros(2, 2));
        assert!(matches!(tape.backward(x), Err(Error::Dimension { .. })));
    }

    #[test]
    fn focal_gradient_is_zero_when_clamped() {
        assert_eq!(focal_term(40.0, 1.0, 3.0).1, 0.0);
        assert_eq!(focal_term(-40.0, 0.0, 2.0).1, 0.0);
        let (_, g) = focal_term(-40.0, 1.0, 0.0);
        assert_eq!(g, 0.0);
    }
}
