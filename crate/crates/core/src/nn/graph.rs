use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{ParamStore, Scalar, Tape, Value};

/// A tape plus everything a model needs while building it: parameter binding
/// by name, constants, a seeded RNG for dropout, and gradient harvesting.
///
/// Graphs are per-example and cheap; build, run [`Graph::backward`], harvest,
/// drop.
pub struct Graph<'p, T: Scalar> {
    pub tape: Tape<T>,
    params: &'p ParamStore<T>,
    bound: Vec<(String, Value)>,
    index: HashMap<String, usize>,
    rng: ChaCha8Rng,
    pub train: bool,
    grads: Option<Vec<Option<Vec<T>>>>,
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>, seed: u64, train: bool) -> Self {
        Graph {
            tape: Tape::new(),
            params,
            bound: Vec::new(),
            index: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            train,
            grads: None,
        }
    }

    /// Bind a named parameter as a leaf (idempotent per name).
    pub fn p(&mut self, name: &str) -> Result<Value> {
        if let Some(&i) = self.index.get(name) {
            return Ok(self.bound[i].1);
        }
        let t = self.params.get(name)?;
        let (r, c) = t.as_2d()?;
        let v = self.tape.leaf(r, c, t.data.clone())?;
        self.index.insert(name.to_string(), self.bound.len());
        self.bound.push((name.to_string(), v));
        Ok(v)
    }

    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<T>) -> Result<Value> {
        self.tape.leaf(rows, cols, data)
    }

    pub fn scalar(&mut self, v: T) -> Value {
        self.tape.leaf(1, 1, vec![v]).expect("1x1 leaf")
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Value {
        self.tape
            .leaf(rows, cols, vec![T::zero(); rows * cols])
            .expect("zero leaf")
    }

    /// x @ w + b with parameters `<prefix>.w` and `<prefix>.b`.
    pub fn affine(&mut self, x: Value, prefix: &str) -> Result<Value> {
        let w = self.p(&format!("{prefix}.w"))?;
        let b = self.p(&format!("{prefix}.b"))?;
        let xw = self.tape.matmul(x, w)?;
        self.tape.add_row(xw, b)
    }

    /// x @ w with parameter `<prefix>.w` (no bias).
    pub fn linear(&mut self, x: Value, prefix: &str) -> Result<Value> {
        let w = self.p(&format!("{prefix}.w"))?;
        self.tape.matmul(x, w)
    }

    /// Layer norm with parameters `<prefix>.gain` / `<prefix>.bias`.
    pub fn layer_norm(&mut self, x: Value, prefix: &str) -> Result<Value> {
        let gain = self.p(&format!("{prefix}.gain"))?;
        let bias = self.p(&format!("{prefix}.bias"))?;
        self.tape
            .layer_norm(x, gain, bias, T::cast_from(1e-5))
    }

    /// Inverted dropout. Active when training (or `always`, for prenets that
    /// keep dropout at synthesis time); identity otherwise. Draws from the
    /// graph RNG, so two graphs with the same seed and build order drop the
    /// same units.
    pub fn dropout(&mut self, x: Value, p: f64, always: bool) -> Result<Value> {
        if p <= 0.0 || !(self.train || always) {
            return Ok(x);
        }
        if p >= 1.0 {
            return Err(Error::InvalidArgument(format!("dropout rate {p} >= 1")));
        }
        let (r, c) = self.tape.dims(x);
        let keep = 1.0 - p;
        let scale = T::cast_from(1.0 / keep);
        let mask: Vec<T> = (0..r * c)
            .map(|_| {
                if self.rng.random::<f64>() < keep {
                    scale
                } else {
                    T::zero()
                }
            })
            .collect();
        let m = self.tape.leaf(r, c, mask)?;
        self.tape.mul(x, m)
    }

    /// One LSTM cell step. Parameters: `<prefix>.w_ih` (in×4h), `<prefix>.w_hh`
    /// (h×4h), `<prefix>.b` (1×4h); gate order i, f, g, o along the columns.
    pub fn lstm_step(
        &mut self,
        prefix: &str,
        x: Value,
        h: Value,
        c: Value,
    ) -> Result<(Value, Value)> {
        let w_ih = self.p(&format!("{prefix}.w_ih"))?;
        let w_hh = self.p(&format!("{prefix}.w_hh"))?;
        let b = self.p(&format!("{prefix}.b"))?;
        let hsz = self.tape.dims(w_hh).0;
        let xi = self.tape.matmul(x, w_ih)?;
        let hh = self.tape.matmul(h, w_hh)?;
        let pre = self.tape.add(xi, hh)?;
        let z = self.tape.add_row(pre, b)?;
        let zi = self.tape.slice_cols(z, 0, hsz)?;
        let zf = self.tape.slice_cols(z, hsz, hsz)?;
        let zg = self.tape.slice_cols(z, 2 * hsz, hsz)?;
        let zo = self.tape.slice_cols(z, 3 * hsz, hsz)?;
        let i = self.tape.sigmoid(zi);
        let f = self.tape.sigmoid(zf);
        let g = self.tape.tanh(zg);
        let o = self.tape.sigmoid(zo);
        let fc = self.tape.mul(f, c)?;
        let ig = self.tape.mul(i, g)?;
        let c_next = self.tape.add(fc, ig)?;
        let tc = self.tape.tanh(c_next);
        let h_next = self.tape.mul(o, tc)?;
        Ok((h_next, c_next))
    }

    /// Run an LSTM over all rows of `xs` (time×in), returning time×h outputs.
    pub fn lstm_seq(&mut self, prefix: &str, xs: Value) -> Result<Value> {
        let (t_len, _) = self.tape.dims(xs);
        let hsz = self.params.get(&format!("{prefix}.w_hh"))?.as_2d()?.0;
        let mut h = self.zeros(1, hsz);
        let mut c = self.zeros(1, hsz);
        let mut rows = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let x = self.tape.slice_rows(xs, t, 1)?;
            let (hn, cn) = self.lstm_step(prefix, x, h, c)?;
            h = hn;
            c = cn;
            rows.push(h);
        }
        self.tape.concat_rows(&rows)
    }

    /// Bidirectional LSTM: forward pass plus a reversed pass, concatenated
    /// along the feature axis (time×2h).
    pub fn blstm(&mut self, prefix_fwd: &str, prefix_bwd: &str, xs: Value) -> Result<Value> {
        let fwd = self.lstm_seq(prefix_fwd, xs)?;
        let rev_in = self.tape.reverse_rows(xs);
        let bwd_rev = self.lstm_seq(prefix_bwd, rev_in)?;
        let bwd = self.tape.reverse_rows(bwd_rev);
        self.tape.concat_cols(&[fwd, bwd])
    }

    /// Copy a node's current values into a fresh leaf, cutting the gradient
    /// path (stop-gradient).
    pub fn detach(&mut self, v: Value) -> Result<Value> {
        let (r, c) = self.tape.dims(v);
        let data = self.tape.value(v).to_vec();
        self.tape.leaf(r, c, data)
    }

    /// Reverse sweep; gradients stay cached on the graph for harvesting.
    pub fn backward(&mut self, loss: Value) -> Result<()> {
        self.grads = Some(self.tape.backward(loss)?);
        Ok(())
    }

    /// Gradient of a bound parameter after [`Graph::backward`]. `None` when
    /// the parameter did not influence the loss.
    pub fn grad_of(&self, name: &str) -> Option<&[T]> {
        let i = *self.index.get(name)?;
        let v = self.bound[i].1;
        self.grads.as_ref()?[v.0].as_deref()
    }

    /// Add this graph's parameter gradients into `into` (a `zeros_like` of the
    /// parameter store, or a running accumulator). Bound-but-unused parameters
    /// contribute zero.
    pub fn harvest_grads(&self, into: &mut ParamStore<T>) -> Result<()> {
        let grads = self
            .grads
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("harvest before backward".into()))?;
        for (name, v) in &self.bound {
            let Some(g) = grads[v.0].as_ref() else {
                continue;
            };
            let t = into.get_mut(name)?;
            if t.data.len() != g.len() {
                return Err(Error::shape(
                    "harvest_grads",
                    format!("{name}: {} vs {}", t.data.len(), g.len()),
                ));
            }
            for (o, &gi) in t.data.iter_mut().zip(g) {
                *o += gi;
            }
        }
        Ok(())
    }

    /// All parameter gradients finite? (True also when nothing was used.)
    pub fn grads_finite(&self) -> bool {
        let Some(grads) = self.grads.as_ref() else {
            return true;
        };
        self.bound.iter().all(|(_, v)| {
            grads[v.0]
                .as_ref()
                .map_or(true, |g| g.iter().all(|x| x.is_finite()))
        })
    }
}
