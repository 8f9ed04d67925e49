use crate::error::{Error, Result};

use super::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Value(pub(crate) usize);

/// Zero-padding behavior for [`Tape::conv1d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conv1dPadding {
    /// Output has the same number of rows as the input; requires odd width.
    Same,
    /// Output has `rows - width + 1` rows.
    Valid,
}

enum Op<T: Scalar> {
    Leaf,
    Add(Value, Value),
    Sub(Value, Value),
    Mul(Value, Value),
    AddRow(Value, Value),
    Scale(Value, T),
    ScaleBy(Value, Value),
    Matmul(Value, Value),
    Transpose(Value),
    Sigmoid(Value),
    Tanh(Value),
    Relu(Value),
    Abs(Value),
    Exp(Value),
    // mask not stored: masked outputs are exactly 0, so their gradient
    // contribution already vanishes in the softmax backward formula
    SoftmaxRows(Value),
    RowNormalize(Value),
    LayerNorm {
        x: Value,
        gain: Value,
        bias: Value,
        // cached per-row (mean, inv_std); eps folded into inv_std
        stats: Vec<(T, T)>,
    },
    Conv1d {
        x: Value,
        kernel: Value,
        width: usize,
        cin: usize,
        cout: usize,
        padding: Conv1dPadding,
    },
    Embed {
        table: Value,
        ids: Vec<usize>,
    },
    ConcatRows(Vec<Value>),
    ConcatCols(Vec<Value>),
    SliceRows {
        x: Value,
        start: usize,
    },
    SliceCols {
        x: Value,
        start: usize,
    },
    ReverseRows(Value),
    SumAll(Value),
    MeanAll(Value),
    /// Masked, mean-reduced binary cross-entropy on logits with a weight on
    /// the positive class. Kept fused: the stable formulation and its exact
    /// gradient are easy to get wrong when assembled from pieces.
    BceWithLogits {
        logits: Value,
        targets: Vec<T>,
        mask: Vec<bool>,
        pos_weight: T,
    },
}

struct Node<T: Scalar> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
    op: Op<T>,
}

/// Wengert list: eager forward evaluation, explicit reverse sweep.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<T>, op: Op<T>) -> Value {
        debug_assert_eq!(rows * cols, data.len());
        self.nodes.push(Node {
            rows,
            cols,
            data,
            op,
        });
        Value(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Value) -> &[T] {
        &self.nodes[v.0].data
    }

    pub fn dims(&self, v: Value) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn item(&self, v: Value) -> Result<T> {
        let n = &self.nodes[v.0];
        if n.data.len() != 1 {
            return Err(Error::shape(
                "item",
                format!("expected 1x1, got {}x{}", n.rows, n.cols),
            ));
        }
        Ok(n.data[0])
    }

    pub fn leaf(&mut self, rows: usize, cols: usize, data: Vec<T>) -> Result<Value> {
        if rows * cols != data.len() {
            return Err(Error::shape(
                "leaf",
                format!("{}x{} wants {} elements, got {}", rows, cols, rows * cols, data.len()),
            ));
        }
        Ok(self.push(rows, cols, data, Op::Leaf))
    }

    fn same_shape(&self, op: &'static str, a: Value, b: Value) -> Result<(usize, usize)> {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        if ar != br || ac != bc {
            return Err(Error::shape(
                op,
                format!("{}x{} vs {}x{}", ar, ac, br, bc),
            ));
        }
        Ok((ar, ac))
    }

    pub fn add(&mut self, a: Value, b: Value) -> Result<Value> {
        let (r, c) = self.same_shape("add", a, b)?;
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x + y)
            .collect();
        Ok(self.push(r, c, data, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Value, b: Value) -> Result<Value> {
        let (r, c) = self.same_shape("sub", a, b)?;
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x - y)
            .collect();
        Ok(self.push(r, c, data, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Value, b: Value) -> Result<Value> {
        let (r, c) = self.same_shape("mul", a, b)?;
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x * y)
            .collect();
        Ok(self.push(r, c, data, Op::Mul(a, b)))
    }

    /// `a + row` where `row` is 1×cols, broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Value, row: Value) -> Result<Value> {
        let (r, c) = self.dims(a);
        let (br, bc) = self.dims(row);
        if br != 1 || bc != c {
            return Err(Error::shape(
                "add_row",
                format!("{}x{} + {}x{}", r, c, br, bc),
            ));
        }
        let mut data = self.nodes[a.0].data.clone();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += self.nodes[row.0].data[j];
            }
        }
        Ok(self.push(r, c, data, Op::AddRow(a, row)))
    }

    pub fn scale(&mut self, a: Value, s: T) -> Value {
        let (r, c) = self.dims(a);
        let data = self.nodes[a.0].data.iter().map(|&x| x * s).collect();
        self.push(r, c, data, Op::Scale(a, s))
    }

    /// Multiply every element of `a` by the 1×1 value `s`.
    pub fn scale_by(&mut self, a: Value, s: Value) -> Result<Value> {
        let (sr, sc) = self.dims(s);
        if sr != 1 || sc != 1 {
            return Err(Error::shape("scale_by", format!("scale is {}x{}", sr, sc)));
        }
        let sv = self.nodes[s.0].data[0];
        let (r, c) = self.dims(a);
        let data = self.nodes[a.0].data.iter().map(|&x| x * sv).collect();
        Ok(self.push(r, c, data, Op::ScaleBy(a, s)))
    }

    pub fn matmul(&mut self, a: Value, b: Value) -> Result<Value> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("{}x{} @ {}x{}", m, k, k2, n),
            ));
        }
        let data = matmul_nn(&self.nodes[a.0].data, m, k, &self.nodes[b.0].data, n);
        Ok(self.push(m, n, data, Op::Matmul(a, b)))
    }

    pub fn transpose(&mut self, a: Value) -> Value {
        let (r, c) = self.dims(a);
        let src = &self.nodes[a.0].data;
        let mut data = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        self.push(c, r, data, Op::Transpose(a))
    }

    pub fn sigmoid(&mut self, a: Value) -> Value {
        let (r, c) = self.dims(a);
        let data = self.nodes[a.0].data.iter().map(|&x| x.sigmoid()).collect();
        self.push(r, c, data, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Value) -> Value {
        let (r, c) = self.dims(a);
        let data = self.nodes[a.0].data.iter().map(|&x| x.tanh()).collect();
        self.push(r, c, data, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Value) -> Value {
        let (r, c) = self.dims(a);
        let z = T::zero();
        let data = self.nodes[a.0]
            .data
            .iter()
            .map(|&x| if x > z { x } else { z })
            .collect();
        self.push(r, c, data, Op::Relu(a))
    }

    pub fn abs(&mut self, a: Value) -> Value {
        let (r, c) = self.dims(a);
        let data = self.nodes[a.0].data.iter().map(|&x| x.abs()).collect();
        self.push(r, c, data, Op::Abs(a))
    }

    pub fn exp(&mut self, a: Value) -> Value {
        let (r, c) = self.dims(a);
        let data = self.nodes[a.0].data.iter().map(|&x| x.exp()).collect();
        self.push(r, c, data, Op::Exp(a))
    }

    /// Row-wise softmax. `mask`, if given, is rows×cols; `false` entries get
    /// probability exactly 0 and receive no gradient. A fully-masked row is an
    /// error.
    pub fn softmax_rows(&mut self, x: Value, mask: Option<Vec<bool>>) -> Result<Value> {
        let (r, c) = self.dims(x);
        if let Some(m) = &mask {
            if m.len() != r * c {
                return Err(Error::shape(
                    "softmax_rows",
                    format!("mask len {} vs {}x{}", m.len(), r, c),
                ));
            }
        }
        let src = &self.nodes[x.0].data;
        let mut data = vec![T::zero(); r * c];
        for i in 0..r {
            let live = |j: usize| mask.as_ref().map_or(true, |m| m[i * c + j]);
            let mut mx = T::neg_infinity();
            for j in 0..c {
                if live(j) && src[i * c + j] > mx {
                    mx = src[i * c + j];
                }
            }
            if mx == T::neg_infinity() {
                return Err(Error::InvalidArgument(format!(
                    "softmax_rows: row {i} fully masked"
                )));
            }
            let mut s = T::zero();
            for j in 0..c {
                if live(j) {
                    let e = (src[i * c + j] - mx).exp();
                    data[i * c + j] = e;
                    s += e;
                }
            }
            for j in 0..c {
                data[i * c + j] = data[i * c + j] / s;
            }
        }
        Ok(self.push(r, c, data, Op::SoftmaxRows(x)))
    }

    /// Divide each row by its sum. All row sums must be nonzero.
    pub fn row_normalize(&mut self, x: Value) -> Result<Value> {
        let (r, c) = self.dims(x);
        let src = &self.nodes[x.0].data;
        let mut data = vec![T::zero(); r * c];
        for i in 0..r {
            let s: T = src[i * c..(i + 1) * c].iter().copied().sum();
            if s == T::zero() || !s.is_finite() {
                return Err(Error::Numerical(format!(
                    "row_normalize: row {i} sums to {s}"
                )));
            }
            for j in 0..c {
                data[i * c + j] = src[i * c + j] / s;
            }
        }
        Ok(self.push(r, c, data, Op::RowNormalize(x)))
    }

    /// Per-row layer normalization with learned gain/bias (both 1×cols).
    pub fn layer_norm(&mut self, x: Value, gain: Value, bias: Value, eps: T) -> Result<Value> {
        let (r, c) = self.dims(x);
        for (name, v) in [("gain", gain), ("bias", bias)] {
            let (vr, vc) = self.dims(v);
            if vr != 1 || vc != c {
                return Err(Error::shape(
                    "layer_norm",
                    format!("{name} is {vr}x{vc}, want 1x{c}"),
                ));
            }
        }
        let src = &self.nodes[x.0].data;
        let g = &self.nodes[gain.0].data;
        let b = &self.nodes[bias.0].data;
        let inv_n = T::one() / T::cast_usize(c);
        let mut data = vec![T::zero(); r * c];
        let mut stats = Vec::with_capacity(r);
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mean = row.iter().copied().sum::<T>() * inv_n;
            let var = row
                .iter()
                .map(|&v| (v - mean) * (v - mean))
                .sum::<T>()
                * inv_n;
            let inv_std = T::one() / (var + eps).sqrt();
            stats.push((mean, inv_std));
            for j in 0..c {
                let xh = (row[j] - mean) * inv_std;
                data[i * c + j] = xh * g[j] + b[j];
            }
        }
        Ok(self.push(
            r,
            c,
            data,
            Op::LayerNorm {
                x,
                gain,
                bias,
                stats,
            },
        ))
    }

    /// 1-D convolution along rows. `x` is time×cin, `kernel` is
    /// (width·cin)×cout laid out as `kernel[(dw*cin + c), o]`; output is
    /// time'×cout. No bias (compose with [`Tape::add_row`]).
    pub fn conv1d(
        &mut self,
        x: Value,
        kernel: Value,
        width: usize,
        padding: Conv1dPadding,
    ) -> Result<Value> {
        let (t, cin) = self.dims(x);
        let (kr, cout) = self.dims(kernel);
        if width == 0 || kr != width * cin {
            return Err(Error::shape(
                "conv1d",
                format!("kernel {}x{} vs width {} * cin {}", kr, cout, width, cin),
            ));
        }
        let (t_out, off) = match padding {
            Conv1dPadding::Same => {
                if width % 2 == 0 {
                    return Err(Error::InvalidArgument(
                        "conv1d: same padding requires odd width".into(),
                    ));
                }
                (t, (width - 1) / 2)
            }
            Conv1dPadding::Valid => {
                if t < width {
                    return Err(Error::shape(
                        "conv1d",
                        format!("valid conv needs rows >= width, got {} < {}", t, width),
                    ));
                }
                (t - width + 1, 0)
            }
        };
        let xs = &self.nodes[x.0].data;
        let ks = &self.nodes[kernel.0].data;
        let mut data = vec![T::zero(); t_out * cout];
        for ti in 0..t_out {
            for dw in 0..width {
                let src = ti as isize + dw as isize - off as isize;
                if src < 0 || src >= t as isize {
                    continue;
                }
                let src = src as usize;
                for c in 0..cin {
                    let xv = xs[src * cin + c];
                    if xv == T::zero() {
                        continue;
                    }
                    let krow = (dw * cin + c) * cout;
                    for o in 0..cout {
                        data[ti * cout + o] += xv * ks[krow + o];
                    }
                }
            }
        }
        Ok(self.push(
            t_out,
            cout,
            data,
            Op::Conv1d {
                x,
                kernel,
                width,
                cin,
                cout,
                padding,
            },
        ))
    }

    /// Gather rows of `table` by index; output is ids.len()×cols.
    pub fn embed(&mut self, table: Value, ids: &[usize]) -> Result<Value> {
        let (vocab, d) = self.dims(table);
        if ids.is_empty() {
            return Err(Error::InvalidArgument("embed: empty id list".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::InvalidArgument(format!(
                "embed: id {bad} out of range (vocab {vocab})"
            )));
        }
        let src = &self.nodes[table.0].data;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        Ok(self.push(
            ids.len(),
            d,
            data,
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Value]) -> Result<Value> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat_rows: no parts".into()));
        }
        let (_, c) = self.dims(parts[0]);
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (pr, pc) = self.dims(p);
            if pc != c {
                return Err(Error::shape(
                    "concat_rows",
                    format!("column mismatch: {} vs {}", pc, c),
                ));
            }
            rows += pr;
            data.extend_from_slice(&self.nodes[p.0].data);
        }
        Ok(self.push(rows, c, data, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Value]) -> Result<Value> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat_cols: no parts".into()));
        }
        let (r, _) = self.dims(parts[0]);
        let mut cols = 0;
        for &p in parts {
            let (pr, pc) = self.dims(p);
            if pr != r {
                return Err(Error::shape(
                    "concat_cols",
                    format!("row mismatch: {} vs {}", pr, r),
                ));
            }
            cols += pc;
        }
        let mut data = vec![T::zero(); r * cols];
        let mut at = 0;
        for &p in parts {
            let (_, pc) = self.dims(p);
            let src = &self.nodes[p.0].data;
            for i in 0..r {
                data[i * cols + at..i * cols + at + pc]
                    .copy_from_slice(&src[i * pc..(i + 1) * pc]);
            }
            at += pc;
        }
        Ok(self.push(r, cols, data, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, x: Value, start: usize, len: usize) -> Result<Value> {
        let (r, c) = self.dims(x);
        if len == 0 || start + len > r {
            return Err(Error::shape(
                "slice_rows",
                format!("[{}..{}) of {} rows", start, start + len, r),
            ));
        }
        let data = self.nodes[x.0].data[start * c..(start + len) * c].to_vec();
        Ok(self.push(len, c, data, Op::SliceRows { x, start }))
    }

    pub fn slice_cols(&mut self, x: Value, start: usize, len: usize) -> Result<Value> {
        let (r, c) = self.dims(x);
        if len == 0 || start + len > c {
            return Err(Error::shape(
                "slice_cols",
                format!("[{}..{}) of {} cols", start, start + len, c),
            ));
        }
        let src = &self.nodes[x.0].data;
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        Ok(self.push(r, len, data, Op::SliceCols { x, start }))
    }

    pub fn reverse_rows(&mut self, x: Value) -> Value {
        let (r, c) = self.dims(x);
        let src = &self.nodes[x.0].data;
        let mut data = Vec::with_capacity(r * c);
        for i in (0..r).rev() {
            data.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        self.push(r, c, data, Op::ReverseRows(x))
    }

    pub fn sum_all(&mut self, x: Value) -> Value {
        let s: T = self.nodes[x.0].data.iter().copied().sum();
        self.push(1, 1, vec![s], Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: Value) -> Value {
        let n = self.nodes[x.0].data.len();
        let s: T = self.nodes[x.0].data.iter().copied().sum();
        self.push(1, 1, vec![s / T::cast_usize(n)], Op::MeanAll(x))
    }

    /// Mean binary cross-entropy over unmasked positions of `logits`
    /// (flattened), with `pos_weight` multiplying the positive-class term:
    /// `pw*y*softplus(-x) + (1-y)*softplus(x)`.
    pub fn bce_with_logits(
        &mut self,
        logits: Value,
        targets: &[T],
        mask: &[bool],
        pos_weight: T,
    ) -> Result<Value> {
        let n = self.nodes[logits.0].data.len();
        if targets.len() != n || mask.len() != n {
            return Err(Error::shape(
                "bce_with_logits",
                format!(
                    "logits {} vs targets {} vs mask {}",
                    n,
                    targets.len(),
                    mask.len()
                ),
            ));
        }
        let n_valid = mask.iter().filter(|&&m| m).count();
        if n_valid == 0 {
            return Err(Error::InvalidArgument("bce_with_logits: empty mask".into()));
        }
        let xs = &self.nodes[logits.0].data;
        let mut s = T::zero();
        for i in 0..n {
            if !mask[i] {
                continue;
            }
            let x = xs[i];
            let y = targets[i];
            s += pos_weight * y * (-x).softplus() + (T::one() - y) * x.softplus();
        }
        let mean = s / T::cast_usize(n_valid);
        Ok(self.push(
            1,
            1,
            vec![mean],
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                pos_weight,
            },
        ))
    }

    /// Reverse sweep from `loss` (must be 1×1 and finite). Returns one
    /// gradient buffer per node; intermediates are dropped as they are
    /// consumed, so only nodes no other node reads (leaves in particular)
    /// keep their entry.
    pub fn backward(&self, loss: Value) -> Result<Vec<Option<Vec<T>>>> {
        let ln = &self.nodes[loss.0];
        if ln.data.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be 1x1, got {}x{}", ln.rows, ln.cols),
            ));
        }
        if !ln.data[0].is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            // Re-stash leaf grads: they are the output of the sweep.
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
        }
        Ok(grads)
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        // Fetch-or-create the gradient buffer for an input. Each use reborrows
        // `grads`, so inputs that alias (e.g. mul(x, x)) accumulate correctly.
        macro_rules! gbuf {
            ($v:expr) => {{
                let n = self.nodes[$v.0].data.len();
                ensure_buf(grads, $v, n)
            }};
        }

        match &node.op {
            Op::Leaf => unreachable!("leaves are handled by the sweep"),
            Op::Add(a, b) => {
                {
                    let ga = gbuf!(*a);
                    for (o, &gi) in ga.iter_mut().zip(g) {
                        *o += gi;
                    }
                }
                let gb = gbuf!(*b);
                for (o, &gi) in gb.iter_mut().zip(g) {
                    *o += gi;
                }
            }
            Op::Sub(a, b) => {
                {
                    let ga = gbuf!(*a);
                    for (o, &gi) in ga.iter_mut().zip(g) {
                        *o += gi;
                    }
                }
                let gb = gbuf!(*b);
                for (o, &gi) in gb.iter_mut().zip(g) {
                    *o -= gi;
                }
            }
            Op::Mul(a, b) => {
                {
                    let bd = &self.nodes[b.0].data;
                    let ga = gbuf!(*a);
                    for j in 0..g.len() {
                        ga[j] += g[j] * bd[j];
                    }
                }
                let ad = &self.nodes[a.0].data;
                let gb = gbuf!(*b);
                for j in 0..g.len() {
                    gb[j] += g[j] * ad[j];
                }
            }
            Op::AddRow(a, row) => {
                let (r, c) = (node.rows, node.cols);
                {
                    let ga = gbuf!(*a);
                    for (o, &gi) in ga.iter_mut().zip(g) {
                        *o += gi;
                    }
                }
                let gr = gbuf!(*row);
                for i in 0..r {
                    for j in 0..c {
                        gr[j] += g[i * c + j];
                    }
                }
            }
            Op::Scale(a, s) => {
                let ga = gbuf!(*a);
                for j in 0..g.len() {
                    ga[j] += g[j] * *s;
                }
            }
            Op::ScaleBy(a, s) => {
                let sv = self.nodes[s.0].data[0];
                {
                    let ga = gbuf!(*a);
                    for j in 0..g.len() {
                        ga[j] += g[j] * sv;
                    }
                }
                let ad = &self.nodes[a.0].data;
                let mut acc_s = T::zero();
                for j in 0..g.len() {
                    acc_s += g[j] * ad[j];
                }
                gbuf!(*s)[0] += acc_s;
            }
            Op::Matmul(a, b) => {
                let (m, k) = self.dims(*a);
                let (_, n) = self.dims(*b);
                {
                    // ga += g (m×n) @ b^T (n×k)
                    let bd = &self.nodes[b.0].data;
                    let ga = gbuf!(*a);
                    for i in 0..m {
                        for j in 0..n {
                            let gv = g[i * n + j];
                            if gv == T::zero() {
                                continue;
                            }
                            for x in 0..k {
                                ga[i * k + x] += gv * bd[x * n + j];
                            }
                        }
                    }
                }
                // gb += a^T (k×m) @ g (m×n)
                let ad = &self.nodes[a.0].data;
                let gb = gbuf!(*b);
                for i in 0..m {
                    for x in 0..k {
                        let av = ad[i * k + x];
                        if av == T::zero() {
                            continue;
                        }
                        for j in 0..n {
                            gb[x * n + j] += av * g[i * n + j];
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (node.rows, node.cols); // output dims: r=cols(a), c=rows(a)
                let ga = gbuf!(*a);
                for i in 0..r {
                    for j in 0..c {
                        ga[j * r + i] += g[i * c + j];
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = &node.data;
                let ga = gbuf!(*a);
                for j in 0..g.len() {
                    ga[j] += g[j] * y[j] * (T::one() - y[j]);
                }
            }
            Op::Tanh(a) => {
                let y = &node.data;
                let ga = gbuf!(*a);
                for j in 0..g.len() {
                    ga[j] += g[j] * (T::one() - y[j] * y[j]);
                }
            }
            Op::Relu(a) => {
                let xd = &self.nodes[a.0].data;
                let ga = gbuf!(*a);
                for j in 0..g.len() {
                    if xd[j] > T::zero() {
                        ga[j] += g[j];
                    }
                }
            }
            Op::Abs(a) => {
                let xd = &self.nodes[a.0].data;
                let ga = gbuf!(*a);
                for j in 0..g.len() {
                    if xd[j] > T::zero() {
                        ga[j] += g[j];
                    } else if xd[j] < T::zero() {
                        ga[j] -= g[j];
                    }
                }
            }
            Op::Exp(a) => {
                let y = &node.data;
                let ga = gbuf!(*a);
                for j in 0..g.len() {
                    ga[j] += g[j] * y[j];
                }
            }
            Op::SoftmaxRows(x) => {
                let (r, c) = (node.rows, node.cols);
                let y = &node.data;
                let gx = gbuf!(*x);
                for i in 0..r {
                    let mut dot = T::zero();
                    for j in 0..c {
                        dot += g[i * c + j] * y[i * c + j];
                    }
                    for j in 0..c {
                        gx[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
                    }
                }
            }
            Op::RowNormalize(x) => {
                let (r, c) = (node.rows, node.cols);
                let xd = &self.nodes[x.0].data;
                let y = &node.data;
                let gx = gbuf!(*x);
                for i in 0..r {
                    let s: T = xd[i * c..(i + 1) * c].iter().copied().sum();
                    let mut dot = T::zero();
                    for j in 0..c {
                        dot += g[i * c + j] * y[i * c + j];
                    }
                    for j in 0..c {
                        gx[i * c + j] += (g[i * c + j] - dot) / s;
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                stats,
            } => {
                let (r, c) = (node.rows, node.cols);
                let xd = &self.nodes[x.0].data;
                let gd = &self.nodes[gain.0].data;
                let inv_n = T::one() / T::cast_usize(c);
                {
                    let gb = gbuf!(*bias);
                    for i in 0..r {
                        for j in 0..c {
                            gb[j] += g[i * c + j];
                        }
                    }
                }
                {
                    let gg = gbuf!(*gain);
                    for i in 0..r {
                        let (mean, inv_std) = stats[i];
                        for j in 0..c {
                            let xh = (xd[i * c + j] - mean) * inv_std;
                            gg[j] += g[i * c + j] * xh;
                        }
                    }
                }
                let gx = gbuf!(*x);
                for i in 0..r {
                    let (mean, inv_std) = stats[i];
                    let mut mean_h = T::zero();
                    let mut mean_hx = T::zero();
                    for j in 0..c {
                        let h = g[i * c + j] * gd[j];
                        let xh = (xd[i * c + j] - mean) * inv_std;
                        mean_h += h;
                        mean_hx += h * xh;
                    }
                    mean_h *= inv_n;
                    mean_hx *= inv_n;
                    for j in 0..c {
                        let h = g[i * c + j] * gd[j];
                        let xh = (xd[i * c + j] - mean) * inv_std;
                        gx[i * c + j] += (h - mean_h - xh * mean_hx) * inv_std;
                    }
                }
            }
            Op::Conv1d {
                x,
                kernel,
                width,
                cin,
                cout,
                padding,
            } => {
                let t_out = node.rows;
                let (t_in, _) = self.dims(*x);
                let off = match padding {
                    Conv1dPadding::Same => (*width - 1) / 2,
                    Conv1dPadding::Valid => 0,
                };
                {
                    let ks = &self.nodes[kernel.0].data;
                    let gx = gbuf!(*x);
                    for ti in 0..t_out {
                        for dw in 0..*width {
                            let src = ti as isize + dw as isize - off as isize;
                            if src < 0 || src >= t_in as isize {
                                continue;
                            }
                            let src = src as usize;
                            for c in 0..*cin {
                                let krow = (dw * cin + c) * cout;
                                let mut s = T::zero();
                                for o in 0..*cout {
                                    s += g[ti * cout + o] * ks[krow + o];
                                }
                                gx[src * cin + c] += s;
                            }
                        }
                    }
                }
                let xs = &self.nodes[x.0].data;
                let gk = gbuf!(*kernel);
                for ti in 0..t_out {
                    for dw in 0..*width {
                        let src = ti as isize + dw as isize - off as isize;
                        if src < 0 || src >= t_in as isize {
                            continue;
                        }
                        let src = src as usize;
                        for c in 0..*cin {
                            let xv = xs[src * cin + c];
                            if xv == T::zero() {
                                continue;
                            }
                            let krow = (dw * cin + c) * cout;
                            for o in 0..*cout {
                                gk[krow + o] += g[ti * cout + o] * xv;
                            }
                        }
                    }
                }
            }
            Op::Embed { table, ids } => {
                let d = node.cols;
                let gt = gbuf!(*table);
                for (i, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        gt[id * d + j] += g[i * d + j];
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let c = node.cols;
                let mut at = 0;
                for &p in parts {
                    let (pr, _) = self.dims(p);
                    let gp = gbuf!(p);
                    for (o, &gi) in gp.iter_mut().zip(&g[at * c..(at + pr) * c]) {
                        *o += gi;
                    }
                    at += pr;
                }
            }
            Op::ConcatCols(parts) => {
                let (r, cols) = (node.rows, node.cols);
                let mut at = 0;
                for &p in parts {
                    let (_, pc) = self.dims(p);
                    let gp = gbuf!(p);
                    for i in 0..r {
                        for j in 0..pc {
                            gp[i * pc + j] += g[i * cols + at + j];
                        }
                    }
                    at += pc;
                }
            }
            Op::SliceRows { x, start } => {
                let (len, c) = (node.rows, node.cols);
                let gx = gbuf!(*x);
                for (o, &gi) in gx[start * c..(start + len) * c].iter_mut().zip(g) {
                    *o += gi;
                }
            }
            Op::SliceCols { x, start } => {
                let (r, len) = (node.rows, node.cols);
                let (_, c) = self.dims(*x);
                let gx = gbuf!(*x);
                for i in 0..r {
                    for j in 0..len {
                        gx[i * c + start + j] += g[i * len + j];
                    }
                }
            }
            Op::ReverseRows(x) => {
                let (r, c) = (node.rows, node.cols);
                let gx = gbuf!(*x);
                for i in 0..r {
                    let src = r - 1 - i;
                    for j in 0..c {
                        gx[src * c + j] += g[i * c + j];
                    }
                }
            }
            Op::SumAll(x) => {
                let gx = gbuf!(*x);
                for o in gx.iter_mut() {
                    *o += g[0];
                }
            }
            Op::MeanAll(x) => {
                let n = self.nodes[x.0].data.len();
                let gi = g[0] / T::cast_usize(n);
                let gx = gbuf!(*x);
                for o in gx.iter_mut() {
                    *o += gi;
                }
            }
            Op::BceWithLogits {
                logits,
                targets,
                mask,
                pos_weight,
            } => {
                let xs = &self.nodes[logits.0].data;
                let n_valid = mask.iter().filter(|&&m| m).count();
                let inv = T::one() / T::cast_usize(n_valid);
                let gx = gbuf!(*logits);
                for j in 0..xs.len() {
                    if !mask[j] {
                        continue;
                    }
                    let sig = xs[j].sigmoid();
                    let d = *pos_weight * targets[j] * (sig - T::one())
                        + (T::one() - targets[j]) * sig;
                    gx[j] += g[0] * d * inv;
                }
            }
        }
    }
}

fn ensure_buf<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Value, n: usize) -> &mut Vec<T> {
    let slot = &mut grads[v.0];
    if slot.is_none() {
        *slot = Some(vec![T::zero(); n]);
    }
    slot.as_mut().unwrap()
}

fn matmul_nn<T: Scalar>(a: &[T], m: usize, k: usize, b: &[T], n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for x in 0..k {
            let av = a[i * k + x];
            if av == T::zero() {
                continue;
            }
            let brow = &b[x * n..(x + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t() -> Tape<f64> {
        Tape::new()
    }

    #[test]
    fn matmul_forward_hand_checked() {
        let mut tp = t();
        // [1 2; 3 4] @ [5 6; 7 8] = [19 22; 43 50]
        let a = tp.leaf(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = tp.leaf(2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let y = tp.matmul(a, b).unwrap();
        assert_eq!(tp.value(y), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_backward_hand_checked() {
        // f = sum(a @ b), a 1x2, b 2x1.
        // f = a0*b0 + a1*b1 -> df/da = [b0, b1], df/db = [a0, a1]
        let mut tp = t();
        let a = tp.leaf(1, 2, vec![2.0, 3.0]).unwrap();
        let b = tp.leaf(2, 1, vec![5.0, 7.0]).unwrap();
        let y = tp.matmul(a, b).unwrap();
        let s = tp.sum_all(y);
        let grads = tp.backward(s).unwrap();
        assert_eq!(grads[a.0].as_ref().unwrap(), &vec![5.0, 7.0]);
        assert_eq!(grads[b.0].as_ref().unwrap(), &vec![2.0, 3.0]);
    }

    #[test]
    fn softmax_rows_is_a_distribution() {
        let mut tp = t();
        let x = tp.leaf(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]).unwrap();
        let y = tp.softmax_rows(x, None).unwrap();
        let v = tp.value(y);
        for i in 0..2 {
            let s: f64 = v[i * 3..(i + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        // softmax(1,2,3)[2] = e^3/(e^1+e^2+e^3) = 0.66524...
        assert!((v[2] - 0.665240955774822).abs() < 1e-12);
    }

    #[test]
    fn softmax_mask_zeroes_dead_entries() {
        let mut tp = t();
        let x = tp.leaf(1, 3, vec![10.0, 2.0, 3.0]).unwrap();
        let y = tp
            .softmax_rows(x, Some(vec![false, true, true]))
            .unwrap();
        let v = tp.value(y);
        assert_eq!(v[0], 0.0);
        // softmax over (2,3): e^2/(e^2+e^3), e^3/(e^2+e^3)
        assert!((v[1] - (1.0 / (1.0 + std::f64::consts::E))).abs() < 1e-12);
        assert!((v[1] + v[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fully_masked_row_is_an_error() {
        let mut tp = t();
        let x = tp.leaf(1, 2, vec![1.0, 2.0]).unwrap();
        assert!(tp.softmax_rows(x, Some(vec![false, false])).is_err());
    }

    #[test]
    fn softmax_survives_large_logits() {
        let mut tp = t();
        let x = tp.leaf(1, 2, vec![1000.0, 1000.0]).unwrap();
        let y = tp.softmax_rows(x, None).unwrap();
        assert_eq!(tp.value(y), &[0.5, 0.5]);
    }

    #[test]
    fn conv1d_same_hand_checked() {
        let mut tp = t();
        // x = [1, 2, 3]^T (3x1), kernel width 3, cin=cout=1, k = [10, 1, 0.1]
        // out[t] = 10*x[t-1] + 1*x[t] + 0.1*x[t+1]   (zeros off the ends)
        let x = tp.leaf(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let k = tp.leaf(3, 1, vec![10.0, 1.0, 0.1]).unwrap();
        let y = tp.conv1d(x, k, 3, Conv1dPadding::Same).unwrap();
        assert_eq!(tp.value(y), &[1.0 + 0.2, 10.0 + 2.0 + 0.3, 20.0 + 3.0]);
    }

    #[test]
    fn conv1d_valid_hand_checked() {
        let mut tp = t();
        let x = tp.leaf(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let k = tp.leaf(2, 1, vec![1.0, -1.0]).unwrap();
        let y = tp.conv1d(x, k, 2, Conv1dPadding::Valid).unwrap();
        // out[t] = x[t] - x[t+1]
        assert_eq!(tp.dims(y), (3, 1));
        assert_eq!(tp.value(y), &[-1.0, -1.0, -1.0]);
    }

    #[test]
    fn bce_at_zero_logit_is_pos_weight_times_ln2() {
        let mut tp = t();
        let x = tp.leaf(1, 1, vec![0.0]).unwrap();
        let loss = tp.bce_with_logits(x, &[1.0], &[true], 5.0).unwrap();
        assert!((tp.item(loss).unwrap() - 5.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bce_mask_drops_positions() {
        let mut tp = t();
        let x = tp.leaf(1, 3, vec![0.0, 100.0, -3.0]).unwrap();
        // only position 2 counts: y=0, so loss = softplus(-3)... no: (1-y)*softplus(x) = softplus(-3)
        let loss = tp
            .bce_with_logits(x, &[1.0, 0.0, 0.0], &[false, false, true], 1.0)
            .unwrap();
        assert!((tp.item(loss).unwrap() - (-3.0f64).softplus()).abs() < 1e-12);
    }

    #[test]
    fn backward_rejects_non_scalar_and_non_finite() {
        let mut tp = t();
        let x = tp.leaf(1, 2, vec![1.0, 2.0]).unwrap();
        assert!(tp.backward(x).is_err());
        let inf = tp.leaf(1, 1, vec![f64::INFINITY]).unwrap();
        assert!(tp.backward(inf).is_err());
    }

    #[test]
    fn value_used_twice_accumulates() {
        // f = sum(x * x) with the SAME node on both sides: df/dx = 2x.
        let mut tp = t();
        let x = tp.leaf(1, 3, vec![1.0, -2.0, 3.0]).unwrap();
        let y = tp.mul(x, x).unwrap();
        let s = tp.sum_all(y);
        let grads = tp.backward(s).unwrap();
        assert_eq!(grads[x.0].as_ref().unwrap(), &vec![2.0, -4.0, 6.0]);
    }

    #[test]
    fn slice_and_concat_round_trip() {
        let mut tp = t();
        let x = tp.leaf(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let a = tp.slice_cols(x, 0, 1).unwrap();
        let b = tp.slice_cols(x, 1, 2).unwrap();
        let y = tp.concat_cols(&[a, b]).unwrap();
        assert_eq!(tp.value(y), tp.value(x));
        let s = tp.sum_all(y);
        let grads = tp.backward(s).unwrap();
        assert_eq!(grads[x.0].as_ref().unwrap(), &vec![1.0; 6]);
    }

    #[test]
    fn reverse_rows_twice_is_identity() {
        let mut tp = t();
        let x = tp.leaf(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let r1 = tp.reverse_rows(x);
        let r2 = tp.reverse_rows(r1);
        assert_eq!(tp.value(r2), tp.value(x));
        assert_eq!(tp.value(r1)[0..2], [5.0, 6.0]);
    }

    #[test]
    fn layer_norm_output_is_normalized() {
        let mut tp = t();
        let x = tp.leaf(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let gain = tp.leaf(1, 4, vec![1.0; 4]).unwrap();
        let bias = tp.leaf(1, 4, vec![0.0; 4]).unwrap();
        let y = tp.layer_norm(x, gain, bias, 0.0).unwrap();
        let v = tp.value(y);
        let mean: f64 = v.iter().sum::<f64>() / 4.0;
        let var: f64 = v.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scale_by_routes_gradient_to_the_scalar() {
        // f = sum(s * x), df/ds = sum(x)
        let mut tp = t();
        let x = tp.leaf(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let s = tp.leaf(1, 1, vec![2.0]).unwrap();
        let y = tp.scale_by(x, s).unwrap();
        let f = tp.sum_all(y);
        let grads = tp.backward(f).unwrap();
        assert_eq!(grads[s.0].as_ref().unwrap(), &vec![6.0]);
        assert_eq!(grads[x.0].as_ref().unwrap(), &vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn embed_gathers_and_scatters() {
        let mut tp = t();
        let table = tp.leaf(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = tp.embed(table, &[2, 0, 2]).unwrap();
        assert_eq!(tp.value(y), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let s = tp.sum_all(y);
        let grads = tp.backward(s).unwrap();
        // row 2 used twice, row 0 once, row 1 never
        assert_eq!(
            grads[table.0].as_ref().unwrap(),
            &vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0]
        );
    }
}
