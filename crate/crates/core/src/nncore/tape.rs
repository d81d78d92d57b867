use super::{gelu, gelu_grad, sigmoid, softmax, GradStore, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Const,
    Param(ParamId),
    Dense { x: Var, w: Var, b: Option<Var> },
    Embed { table: ParamId, row: usize },
    Conv1d { x: Var, kernel: Var, bias: Option<Var> },
    Gelu(Var),
    Sigmoid(Var),
    Softmax(Var),
    MaskedSoftmax(Var),
    Concat(Vec<Var>),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleByElem { x: Var, s: Var, index: usize },
    Reshape(Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    // Empty for `Op::Param`; the value lives in the store.
    value: Tensor,
    op: Op,
}

/// Reverse-mode recording of one forward pass.
pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::with_capacity(64),
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match self.nodes[v.0].op {
            Op::Param(id) => self.store.value(id),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Const)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.push(Tensor::zeros(&[0]), Op::Param(id))
    }

    /// `y = W x + b` for `x: [in]`, `W: [out, in]`, `b: [out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.shape().len() != 2 || xv.len() != wv.shape()[1] {
            return Err(Error::Shape(format!(
                "dense: weight {:?} vs input {:?}",
                wv.shape(),
                xv.shape()
            )));
        }
        let (rows, cols) = (wv.shape()[0], wv.shape()[1]);
        let mut y = match b {
            Some(b) => {
                let bv = self.value(b);
                if bv.len() != rows {
                    return Err(Error::Shape(format!(
                        "dense: bias {:?} vs {rows} outputs",
                        bv.shape()
                    )));
                }
                bv.data().to_vec()
            }
            None => vec![0.0; rows],
        };
        let (xd, wd) = (xv.data(), wv.data());
        for (r, out) in y.iter_mut().enumerate() {
            let row = &wd[r * cols..(r + 1) * cols];
            *out += row.iter().zip(xd).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok(self.push(Tensor::vector(y), Op::Dense { x, w, b }))
    }

    /// Row `row` of an embedding table. Gradients land only in that row.
    pub fn embed(&mut self, table: ParamId, row: usize) -> Result<Var> {
        let t = self.store.value(table);
        let rows = t.shape()[0];
        if row >= rows {
            return Err(Error::OutOfRange {
                what: "embedding",
                index: row,
                size: rows,
            });
        }
        let v = Tensor::vector(t.row(row).to_vec());
        Ok(self.push(v, Op::Embed { table, row }))
    }

    /// Same-length 1-D cross-correlation with zero padding.
    ///
    /// `x: [len, c_in]`, `kernel: [k, c_in, c_out]`, `bias: [c_out]`, output
    /// `[len, c_out]`. `k` must be odd.
    pub fn conv1d(&mut self, x: Var, kernel: Var, bias: Option<Var>) -> Result<Var> {
        let (xv, kv) = (self.value(x), self.value(kernel));
        if xv.shape().len() != 2 || kv.shape().len() != 3 || kv.shape()[1] != xv.shape()[1] {
            return Err(Error::Shape(format!(
                "conv1d: kernel {:?} vs input {:?}",
                kv.shape(),
                xv.shape()
            )));
        }
        let (len, cin) = (xv.shape()[0], xv.shape()[1]);
        let (k, cout) = (kv.shape()[0], kv.shape()[2]);
        if k % 2 == 0 {
            return Err(Error::Shape(format!("conv1d: kernel length {k} is even")));
        }
        let pad = k / 2;
        let mut y = vec![0.0; len * cout];
        if let Some(b) = bias {
            let bv = self.value(b);
            if bv.len() != cout {
                return Err(Error::Shape(format!("conv1d: bias {:?}", bv.shape())));
            }
            for t in 0..len {
                y[t * cout..(t + 1) * cout].copy_from_slice(bv.data());
            }
        }
        let (xd, kd) = (xv.data(), kv.data());
        for t in 0..len {
            for d in 0..k {
                let Some(src) = (t + d).checked_sub(pad).filter(|&s| s < len) else {
                    continue;
                };
                for ci in 0..cin {
                    let xval = xd[src * cin + ci];
                    for co in 0..cout {
                        y[t * cout + co] += kd[(d * cin + ci) * cout + co] * xval;
                    }
                }
            }
        }
        let out = Tensor::new(vec![len, cout], y)?;
        Ok(self.push(out, Op::Conv1d { x, kernel, bias }))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.map(x, gelu);
        self.push(v, Op::Gelu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.map(x, sigmoid);
        self.push(v, Op::Sigmoid(x))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let p = softmax(self.value(x).data());
        self.push(Tensor::vector(p), Op::Softmax(x))
    }

    /// Softmax over the entries where `mask` is true; zero elsewhere.
    pub fn masked_softmax(&mut self, x: Var, mask: Vec<bool>) -> Result<Var> {
        let xv = self.value(x);
        if mask.len() != xv.len() || !mask.iter().any(|&m| m) {
            return Err(Error::Shape("masked_softmax: bad mask".into()));
        }
        let active: Vec<f64> = xv
            .data()
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .collect();
        let mut p_active = softmax(&active).into_iter();
        let p: Vec<f64> = mask
            .iter()
            .map(|&m| if m { p_active.next().unwrap_or(0.0) } else { 0.0 })
            .collect();
        Ok(self.push(Tensor::vector(p), Op::MaskedSoftmax(x)))
    }

    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Empty("concat"));
        }
        let mut data = Vec::new();
        for &x in xs {
            data.extend_from_slice(self.value(x).data());
        }
        Ok(self.push(Tensor::vector(data), Op::Concat(xs.to_vec())))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip(a, b, |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip(a, b, |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let v = self.map(x, |e| e * factor);
        self.push(v, Op::Scale(x, factor))
    }

    /// `s[index] * x`.
    pub fn scale_by_elem(&mut self, x: Var, s: Var, index: usize) -> Result<Var> {
        let sv = self.value(s);
        if index >= sv.len() {
            return Err(Error::OutOfRange {
                what: "scale element",
                index,
                size: sv.len(),
            });
        }
        let f = sv.data()[index];
        let v = self.map(x, |e| e * f);
        Ok(self.push(v, Op::ScaleByElem { x, s, index }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let xv = self.value(x);
        Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|&v| f(v)).collect())
            .expect("same shape")
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Shape(format!(
                "elementwise: {:?} vs {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    /// Back-propagates `seed = d loss / d out` and adds parameter gradients
    /// into `grads`.
    pub fn backward(&self, out: Var, seed: &[f64], grads: &mut GradStore) -> Result<()> {
        if seed.len() != self.value(out).len() {
            return Err(Error::Shape("backward: seed does not match output".into()));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; out.0 + 1];
        adj[out.0] = Some(seed.to_vec());

        for i in (0..=out.0).rev() {
            let Some(dy) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Const => {}
                Op::Param(id) => add_into(grads.get_mut(*id).data_mut(), &dy),
                Op::Dense { x, w, b } => {
                    let (xd, wv) = (self.value(*x).data(), self.value(*w));
                    let cols = wv.shape()[1];
                    if self.needs_grad(*w) {
                        let mut dw = vec![0.0; wv.len()];
                        for (r, &g) in dy.iter().enumerate() {
                            for (c, &xv) in xd.iter().enumerate() {
                                dw[r * cols + c] = g * xv;
                            }
                        }
                        accumulate(&mut adj, *w, dw);
                    }
                    if self.needs_grad(*x) {
                        let mut dx = vec![0.0; cols];
                        for (r, &g) in dy.iter().enumerate() {
                            let row = &wv.data()[r * cols..(r + 1) * cols];
                            for (d, &wv) in dx.iter_mut().zip(row) {
                                *d += wv * g;
                            }
                        }
                        accumulate(&mut adj, *x, dx);
                    }
                    if let Some(b) = b {
                        accumulate(&mut adj, *b, dy.clone());
                    }
                }
                Op::Embed { table, row } => {
                    let cols = dy.len();
                    let g = grads.get_mut(*table).data_mut();
                    add_into(&mut g[row * cols..(row + 1) * cols], &dy);
                }
                Op::Conv1d { x, kernel, bias } => {
                    let (xv, kv) = (self.value(*x), self.value(*kernel));
                    let (len, cin) = (xv.shape()[0], xv.shape()[1]);
                    let (k, cout) = (kv.shape()[0], kv.shape()[2]);
                    let pad = k / 2;
                    let (xd, kd) = (xv.data(), kv.data());
                    let mut dx = vec![0.0; xd.len()];
                    let mut dk = vec![0.0; kd.len()];
                    for t in 0..len {
                        for d in 0..k {
                            let Some(src) = (t + d).checked_sub(pad).filter(|&s| s < len) else {
                                continue;
                            };
                            for ci in 0..cin {
                                for co in 0..cout {
                                    let g = dy[t * cout + co];
                                    let ki = (d * cin + ci) * cout + co;
                                    dx[src * cin + ci] += kd[ki] * g;
                                    dk[ki] += xd[src * cin + ci] * g;
                                }
                            }
                        }
                    }
                    if let Some(b) = bias {
                        let mut db = vec![0.0; cout];
                        for t in 0..len {
                            add_into(&mut db, &dy[t * cout..(t + 1) * cout]);
                        }
                        accumulate(&mut adj, *b, db);
                    }
                    accumulate(&mut adj, *kernel, dk);
                    if self.needs_grad(*x) {
                        accumulate(&mut adj, *x, dx);
                    }
                }
                Op::Gelu(x) => {
                    let xd = self.value(*x).data();
                    let dx = dy.iter().zip(xd).map(|(g, &v)| g * gelu_grad(v)).collect();
                    accumulate(&mut adj, *x, dx);
                }
                Op::Sigmoid(x) => {
                    let s = node.value.data();
                    let dx = dy.iter().zip(s).map(|(g, &s)| g * s * (1.0 - s)).collect();
                    accumulate(&mut adj, *x, dx);
                }
                Op::Softmax(x) | Op::MaskedSoftmax(x) => {
                    // Inactive entries have p = 0, so the same formula zeroes them.
                    let p = node.value.data();
                    let dot: f64 = p.iter().zip(&dy).map(|(p, g)| p * g).sum();
                    let dx = p.iter().zip(&dy).map(|(p, g)| p * (g - dot)).collect();
                    accumulate(&mut adj, *x, dx);
                }
                Op::Concat(xs) => {
                    let mut offset = 0;
                    for &x in xs {
                        let n = self.value(x).len();
                        if self.needs_grad(x) {
                            accumulate(&mut adj, x, dy[offset..offset + n].to_vec());
                        }
                        offset += n;
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, dy.clone());
                    accumulate(&mut adj, *b, dy);
                }
                Op::Mul(a, b) => {
                    let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                    let da = dy.iter().zip(bd).map(|(g, y)| g * y).collect();
                    let db = dy.iter().zip(ad).map(|(g, x)| g * x).collect();
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::Scale(x, f) => {
                    accumulate(&mut adj, *x, dy.iter().map(|g| g * f).collect());
                }
                Op::ScaleByElem { x, s, index } => {
                    let sv = self.value(*s);
                    let f = sv.data()[*index];
                    let xd = self.value(*x).data();
                    let ds_i: f64 = dy.iter().zip(xd).map(|(g, x)| g * x).sum();
                    let mut ds = vec![0.0; sv.len()];
                    ds[*index] = ds_i;
                    accumulate(&mut adj, *s, ds);
                    accumulate(&mut adj, *x, dy.iter().map(|g| g * f).collect());
                }
                Op::Reshape(x) => accumulate(&mut adj, *x, dy),
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    accumulate(&mut adj, *x, vec![dy[0]; n]);
                }
            }
        }
        Ok(())
    }

    fn needs_grad(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Const)
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut adj[v.0] {
        Some(existing) => add_into(existing, &g),
        slot @ None => *slot = Some(g),
    }
}
