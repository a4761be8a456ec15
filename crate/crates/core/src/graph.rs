//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation as a node holding its value and, when
//! any input needs a gradient, a closure mapping the output gradient to input
//! gradients. [`Graph::backward`] walks the nodes in reverse creation order.
//!
//! The same op set doubles as a shape-only evaluator ([`Mode::DryRun`]) used by
//! the profiler: values are placeholders and only multiply-accumulate counts
//! are recorded, attributed to the active scope path.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use crate::error::{shape_err, Result};
use crate::numerics::conv::{self, Conv3dSpec, ConvSpec};
use crate::numerics::dct;
use crate::numerics::norm;
use crate::numerics::resample::{self, Interp};
use crate::numerics::spectral::{self, StftConfig};
use crate::scalar::{gemm, Scalar};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Record backward closures for inputs that require gradients.
    Train,
    /// Values only.
    Inference,
    /// Shapes and MAC counts only; no arithmetic.
    DryRun,
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

type BackFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Rc<Tensor<T>>,
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackFn<T>>,
}

pub struct Graph<T: Scalar> {
    mode: Mode,
    nodes: RefCell<Vec<Node<T>>>,
    scopes: RefCell<Vec<String>>,
    macs: RefCell<BTreeMap<String, u64>>,
    entries: RefCell<BTreeMap<String, usize>>,
}

/// Pops a scope pushed by [`Graph::scope`] when dropped.
pub struct ScopeGuard<'g, T: Scalar> {
    graph: &'g Graph<T>,
}

impl<T: Scalar> Drop for ScopeGuard<'_, T> {
    fn drop(&mut self) {
        self.graph.scopes.borrow_mut().pop();
    }
}

/// Gradients indexed by node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn bcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a == b {
        return Ok(a.to_vec());
    }
    if numel(b) == 1 && a.len() >= b.len() {
        return Ok(a.to_vec());
    }
    if numel(a) == 1 && b.len() >= a.len() {
        return Ok(b.to_vec());
    }
    if a.len() != b.len() {
        return Err(shape_err!("cannot broadcast {:?} with {:?}", a, b));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            if x == y || y == 1 {
                Ok(x)
            } else if x == 1 {
                Ok(y)
            } else {
                Err(shape_err!("cannot broadcast {:?} with {:?}", a, b))
            }
        })
        .collect()
}

fn bcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    if numel(shape) == 1 {
        return vec![0; out.len()];
    }
    let mut s = vec![0; out.len()];
    let mut acc = 1;
    for d in (0..out.len()).rev() {
        s[d] = if shape[d] == 1 { 0 } else { acc };
        acc *= shape[d];
    }
    s
}

/// Visits every element of `out`, passing `(flat index, offset a, offset b)`.
fn for_each_offset(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let r = out.len();
    let n = numel(out);
    let last = out[r - 1];
    let (la, lb) = (sa[r - 1], sb[r - 1]);
    let mut idx = vec![0usize; r];
    let (mut ba, mut bb, mut i) = (0usize, 0usize, 0usize);
    loop {
        for j in 0..last {
            f(i + j, ba + j * la, bb + j * lb);
        }
        i += last;
        if i >= n {
            break;
        }
        let mut d = r - 1;
        loop {
            d -= 1;
            idx[d] += 1;
            ba += sa[d];
            bb += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ba -= sa[d] * out[d];
            bb -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

#[derive(Clone, Copy)]
enum Bin {
    Add,
    Sub,
    Mul,
    Div,
}

impl<T: Scalar> Graph<T> {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            nodes: RefCell::new(Vec::new()),
            scopes: RefCell::new(Vec::new()),
            macs: RefCell::new(BTreeMap::new()),
            entries: RefCell::new(BTreeMap::new()),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_dry(&self) -> bool {
        self.mode == Mode::DryRun
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    // ---- scopes and accounting ----

    /// Enters a named scope; MACs and entry counts are attributed to the joined path.
    pub fn scope(&self, name: &str) -> ScopeGuard<'_, T> {
        let path = {
            let mut s = self.scopes.borrow_mut();
            s.push(name.to_string());
            s.join("/")
        };
        *self.entries.borrow_mut().entry(path).or_insert(0) += 1;
        ScopeGuard { graph: self }
    }

    pub fn scope_path(&self) -> String {
        self.scopes.borrow().join("/")
    }

    fn add_macs(&self, n: u64) {
        if n == 0 {
            return;
        }
        let path = self.scope_path();
        *self.macs.borrow_mut().entry(path).or_insert(0) += n;
    }

    /// MAC counts per scope path (exclusive of child scopes).
    pub fn macs_by_scope(&self) -> BTreeMap<String, u64> {
        self.macs.borrow().clone()
    }

    pub fn macs_total(&self) -> u64 {
        self.macs.borrow().values().sum()
    }

    /// Sum of MACs recorded under scopes whose path satisfies `pred`.
    pub fn macs_where(&self, pred: impl Fn(&str) -> bool) -> u64 {
        self.macs
            .borrow()
            .iter()
            .filter(|(k, _)| pred(k))
            .map(|(_, v)| v)
            .sum()
    }

    /// How many times each scope path was entered.
    pub fn scope_entries(&self) -> BTreeMap<String, usize> {
        self.entries.borrow().clone()
    }

    // ---- node plumbing ----

    pub fn value(&self, v: Var) -> Rc<Tensor<T>> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// First element of a (scalar) node.
    pub fn scalar(&self, v: Var) -> T {
        self.value(v)
            .data()
            .first()
            .copied()
            .unwrap_or_else(T::zero)
    }

    fn push_node(
        &self,
        value: Rc<Tensor<T>>,
        parents: Vec<usize>,
        requires_grad: bool,
        backward: Option<BackFn<T>>,
    ) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents,
            requires_grad,
            backward,
        });
        Var(nodes.len() - 1)
    }

    fn any_grad(&self, parents: &[Var]) -> bool {
        self.mode == Mode::Train && {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.0].requires_grad)
        }
    }

    fn push<F>(&self, value: Tensor<T>, parents: &[Var], back: F) -> Var
    where
        F: Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>> + 'static,
    {
        self.push_rc(Rc::new(value), parents, back)
    }

    fn push_rc<F>(&self, value: Rc<Tensor<T>>, parents: &[Var], back: F) -> Var
    where
        F: Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>> + 'static,
    {
        let rg = self.any_grad(parents);
        let b: Option<BackFn<T>> = if rg { Some(Box::new(back)) } else { None };
        self.push_node(value, parents.iter().map(|p| p.0).collect(), rg, b)
    }

    fn push_dry(&self, shape: &[usize], parents: &[Var]) -> Var {
        self.push_node(
            Rc::new(Tensor::placeholder(shape)),
            parents.iter().map(|p| p.0).collect(),
            false,
            None,
        )
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, t: Tensor<T>) -> Var {
        let t = if self.is_dry() {
            Tensor::placeholder(t.shape())
        } else {
            t
        };
        self.push_node(Rc::new(t), Vec::new(), false, None)
    }

    /// A leaf that receives a gradient in [`Mode::Train`] when `requires_grad`.
    pub fn leaf(&self, t: Tensor<T>, requires_grad: bool) -> Var {
        let rg = requires_grad && self.mode == Mode::Train;
        self.push_node(Rc::new(t), Vec::new(), rg, None)
    }

    pub(crate) fn leaf_shape(&self, shape: &[usize]) -> Var {
        self.push_dry(shape, &[])
    }

    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let n = nodes.len();
        if nodes[loss.0].value.len() != 1 {
            return Err(shape_err!(
                "backward needs a scalar loss, got {:?}",
                nodes[loss.0].value.shape()
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(nodes[loss.0].value.shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            let Some(bf) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            let need: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| nodes[p].requires_grad)
                .collect();
            let pg = bf(&g, &need);
            for ((&p, gp), &nd) in node.parents.iter().zip(pg).zip(&need) {
                if !nd {
                    continue;
                }
                if let Some(gp) = gp {
                    match grads[p].as_mut() {
                        Some(acc) => acc.add_assign(&gp),
                        None => grads[p] = Some(gp),
                    }
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    // ---- elementwise ----

    fn unary(&self, x: Var, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Var {
        let xv = self.value(x);
        if self.is_dry() {
            return self.push_dry(xv.shape(), &[x]);
        }
        let y = Rc::new(xv.map(f));
        let yc = y.clone();
        self.push_rc(y, &[x], move |g, _| {
            let data = g
                .data()
                .iter()
                .zip(xv.data())
                .zip(yc.data())
                .map(|((&g, &x), &y)| g * df(x, y))
                .collect();
            vec![Some(Tensor::from_parts_unchecked(g.shape().to_vec(), data))]
        })
    }

    pub fn neg(&self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn scale(&self, x: Var, c: f64) -> Var {
        let c = T::c(c);
        self.unary(x, move |v| v * c, move |_, _| c)
    }

    pub fn add_scalar(&self, x: Var, c: f64) -> Var {
        let c = T::c(c);
        self.unary(x, move |v| v + c, |_, _| T::one())
    }

    pub fn exp(&self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), |_, y| y)
    }

    pub fn log(&self, x: Var) -> Var {
        self.unary(x, |v| v.ln(), |x, _| x.recip())
    }

    pub fn sqrt(&self, x: Var) -> Var {
        self.unary(x, |v| v.sqrt(), |_, y| T::c(0.5) / y)
    }

    pub fn square(&self, x: Var) -> Var {
        self.unary(x, |v| v * v, |x, _| x + x)
    }

    pub fn tanh(&self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), |_, y| T::one() - y * y)
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary(x, sigmoid, |_, y| y * (T::one() - y))
    }

    pub fn silu(&self, x: Var) -> Var {
        self.unary(
            x,
            |v| v * sigmoid(v),
            |x, _| {
                let s = sigmoid(x);
                s * (T::one() + x * (T::one() - s))
            },
        )
    }

    pub fn relu(&self, x: Var) -> Var {
        self.unary(
            x,
            |v| v.max(T::zero()),
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn leaky_relu(&self, x: Var, slope: f64) -> Var {
        let a = T::c(slope);
        self.unary(
            x,
            move |v| if v > T::zero() { v } else { a * v },
            move |x, _| if x > T::zero() { T::one() } else { a },
        )
    }

    pub fn elu(&self, x: Var) -> Var {
        self.unary(
            x,
            |v| if v > T::zero() { v } else { v.exp_m1() },
            |x, y| {
                if x > T::zero() {
                    T::one()
                } else {
                    y + T::one()
                }
            },
        )
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&self, x: Var) -> Var {
        self.unary(x, gelu, gelu_grad)
    }

    pub fn softplus(&self, x: Var) -> Var {
        self.unary(x, softplus, |x, _| sigmoid(x))
    }

    fn binary(&self, a: Var, b: Var, op: Bin) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        let out = bcast_shape(av.shape(), bv.shape())?;
        if self.is_dry() {
            return Ok(self.push_dry(&out, &[a, b]));
        }
        let f = move |x: T, y: T| match op {
            Bin::Add => x + y,
            Bin::Sub => x - y,
            Bin::Mul => x * y,
            Bin::Div => x / y,
        };
        let n = numel(&out);
        let same = av.shape() == bv.shape();
        let data: Vec<T> = if same {
            av.data()
                .iter()
                .zip(bv.data())
                .map(|(&x, &y)| f(x, y))
                .collect()
        } else {
            let sa = bcast_strides(av.shape(), &out);
            let sb = bcast_strides(bv.shape(), &out);
            let mut d = vec![T::zero(); n];
            let (ad, bd) = (av.data(), bv.data());
            for_each_offset(&out, &sa, &sb, |i, ia, ib| d[i] = f(ad[ia], bd[ib]));
            d
        };
        let out_c = out.clone();
        Ok(self.push(
            Tensor::from_parts_unchecked(out, data),
            &[a, b],
            move |g, need| {
                let (ad, bd, gd) = (av.data(), bv.data(), g.data());
                let mut ga = need[0].then(|| vec![T::zero(); ad.len()]);
                let mut gb = need[1].then(|| vec![T::zero(); bd.len()]);
                let mut visit = |i: usize, ia: usize, ib: usize| {
                    let gi = gd[i];
                    let (da, db) = match op {
                        Bin::Add => (gi, gi),
                        Bin::Sub => (gi, -gi),
                        Bin::Mul => (gi * bd[ib], gi * ad[ia]),
                        Bin::Div => (gi / bd[ib], -gi * ad[ia] / (bd[ib] * bd[ib])),
                    };
                    if let Some(ga) = ga.as_mut() {
                        ga[ia] += da;
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[ib] += db;
                    }
                };
                if same {
                    for i in 0..gd.len() {
                        visit(i, i, i);
                    }
                } else {
                    let sa = bcast_strides(av.shape(), &out_c);
                    let sb = bcast_strides(bv.shape(), &out_c);
                    for_each_offset(&out_c, &sa, &sb, visit);
                }
                vec![
                    ga.map(|d| Tensor::from_parts_unchecked(av.shape().to_vec(), d)),
                    gb.map(|d| Tensor::from_parts_unchecked(bv.shape().to_vec(), d)),
                ]
            },
        ))
    }

    /// Broadcasting addition (same rank, or either side a single element).
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Bin::Add)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Bin::Sub)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Bin::Mul)
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Bin::Div)
    }

    // ---- reductions ----

    pub fn sum_all(&self, x: Var) -> Var {
        let xv = self.value(x);
        if self.is_dry() {
            return self.push_dry(&[1], &[x]);
        }
        let s = xv.sum();
        let shape = xv.shape().to_vec();
        self.push(Tensor::scalar(s), &[x], move |g, _| {
            vec![Some(Tensor::full(&shape, g.data()[0]))]
        })
    }

    pub fn mean_all(&self, x: Var) -> Var {
        let n = numel(&self.shape(x)) as f64;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    /// Sum along `axis`, keeping it with size 1.
    pub fn sum_axis(&self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.rank() {
            return Err(shape_err!(
                "axis {} out of range for {:?}",
                axis,
                xv.shape()
            ));
        }
        let mut out = xv.shape().to_vec();
        out[axis] = 1;
        if self.is_dry() {
            return Ok(self.push_dry(&out, &[x]));
        }
        let (outer, n, inner) = norm::axis_split(xv.shape(), axis);
        let mut d = vec![T::zero(); outer * inner];
        let xd = xv.data();
        for o in 0..outer {
            for a in 0..n {
                let src = &xd[(o * n + a) * inner..(o * n + a + 1) * inner];
                for (acc, &v) in d[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *acc += v;
                }
            }
        }
        let in_shape = xv.shape().to_vec();
        Ok(
            self.push(Tensor::from_parts_unchecked(out, d), &[x], move |g, _| {
                let gd = g.data();
                let mut dx = vec![T::zero(); outer * n * inner];
                for o in 0..outer {
                    for a in 0..n {
                        dx[(o * n + a) * inner..(o * n + a + 1) * inner]
                            .copy_from_slice(&gd[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(Tensor::from_parts_unchecked(in_shape.clone(), dx))]
            }),
        )
    }

    pub fn mean_axis(&self, x: Var, axis: usize) -> Result<Var> {
        let n = self.shape(x)[axis] as f64;
        let s = self.sum_axis(x, axis)?;
        Ok(self.scale(s, 1.0 / n))
    }

    // ---- shape manipulation ----

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if numel(shape) != numel(xv.shape()) {
            return Err(shape_err!("cannot reshape {:?} to {:?}", xv.shape(), shape));
        }
        if self.is_dry() {
            return Ok(self.push_dry(shape, &[x]));
        }
        let in_shape = xv.shape().to_vec();
        let y = Tensor::from_parts_unchecked(shape.to_vec(), xv.data().to_vec());
        Ok(self.push(y, &[x], move |g, _| {
            vec![Some(Tensor::from_parts_unchecked(
                in_shape.clone(),
                g.data().to_vec(),
            ))]
        }))
    }

    /// Reorders axes: output axis `d` is input axis `perm[d]`.
    pub fn permute(&self, x: Var, perm: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let r = xv.rank();
        let mut seen = vec![false; r];
        if perm.len() != r
            || perm
                .iter()
                .any(|&p| p >= r || std::mem::replace(&mut seen[p], true))
        {
            return Err(shape_err!("invalid permutation {:?} for rank {}", perm, r));
        }
        let out: Vec<usize> = perm.iter().map(|&p| xv.shape()[p]).collect();
        if self.is_dry() {
            return Ok(self.push_dry(&out, &[x]));
        }
        let y = permute_data(xv.data(), xv.shape(), perm);
        let mut inv = vec![0; r];
        for (d, &p) in perm.iter().enumerate() {
            inv[p] = d;
        }
        let out_c = out.clone();
        Ok(
            self.push(Tensor::from_parts_unchecked(out, y), &[x], move |g, _| {
                let d = permute_data(g.data(), &out_c, &inv);
                vec![Some(Tensor::from_parts_unchecked(
                    inv.iter().map(|&p| out_c[p]).collect(),
                    d,
                ))]
            }),
        )
    }

    /// `len` entries along `axis` starting at `start`.
    pub fn slice(&self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.rank() || len == 0 || start + len > xv.shape()[axis] {
            return Err(shape_err!(
                "slice {}..{} on axis {} of {:?}",
                start,
                start + len,
                axis,
                xv.shape()
            ));
        }
        let mut out = xv.shape().to_vec();
        out[axis] = len;
        if self.is_dry() {
            return Ok(self.push_dry(&out, &[x]));
        }
        let (outer, n, inner) = norm::axis_split(xv.shape(), axis);
        let xd = xv.data();
        let mut d = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            d.extend_from_slice(&xd[(o * n + start) * inner..(o * n + start + len) * inner]);
        }
        let in_shape = xv.shape().to_vec();
        Ok(
            self.push(Tensor::from_parts_unchecked(out, d), &[x], move |g, _| {
                let gd = g.data();
                let mut dx = vec![T::zero(); outer * n * inner];
                for o in 0..outer {
                    dx[(o * n + start) * inner..(o * n + start + len) * inner]
                        .copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(Tensor::from_parts_unchecked(in_shape.clone(), dx))]
            }),
        )
    }

    pub fn concat(&self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(shape_err!("concat of nothing"));
        }
        let vals: Vec<Rc<Tensor<T>>> = xs.iter().map(|&v| self.value(v)).collect();
        let first = vals[0].shape().to_vec();
        if axis >= first.len() {
            return Err(shape_err!("concat axis {} out of range", axis));
        }
        let mut out = first.clone();
        out[axis] = 0;
        for v in &vals {
            let s = v.shape();
            if s.len() != first.len()
                || s.iter()
                    .enumerate()
                    .any(|(d, &n)| d != axis && n != first[d])
            {
                return Err(shape_err!("concat {:?} with {:?}", first, s));
            }
            out[axis] += s[axis];
        }
        if self.is_dry() {
            return Ok(self.push_dry(&out, xs));
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let lens: Vec<usize> = vals.iter().map(|v| v.shape()[axis]).collect();
        let total = out[axis];
        let mut d = Vec::with_capacity(numel(&out));
        for o in 0..outer {
            for (v, &l) in vals.iter().zip(&lens) {
                d.extend_from_slice(&v.data()[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let shapes: Vec<Vec<usize>> = vals.iter().map(|v| v.shape().to_vec()).collect();
        Ok(
            self.push(Tensor::from_parts_unchecked(out, d), xs, move |g, need| {
                let gd = g.data();
                let mut off = 0;
                let mut res = Vec::with_capacity(lens.len());
                for (k, &l) in lens.iter().enumerate() {
                    if need[k] {
                        let mut dx = Vec::with_capacity(outer * l * inner);
                        for o in 0..outer {
                            let base = (o * total + off) * inner;
                            dx.extend_from_slice(&gd[base..base + l * inner]);
                        }
                        res.push(Some(Tensor::from_parts_unchecked(shapes[k].clone(), dx)));
                    } else {
                        res.push(None);
                    }
                    off += l;
                }
                res
            }),
        )
    }

    /// Stops gradient flow.
    pub fn detach(&self, x: Var) -> Var {
        let v = self.value(x);
        self.push_node(v, Vec::new(), false, None)
    }

    /// Forward value of `q`; backward passes the gradient unchanged to `z`.
    pub fn straight_through(&self, z: Var, q: Var) -> Result<Var> {
        let (zs, qv) = (self.shape(z), self.value(q));
        if zs != qv.shape() {
            return Err(shape_err!("straight-through {:?} vs {:?}", zs, qv.shape()));
        }
        Ok(self.push_rc(qv, &[z], |g, _| vec![Some(g.clone())]))
    }

    /// Rows `idx` of a `[K × d]` table, giving `[idx.len() × d]`.
    pub fn gather_rows(&self, table: Var, idx: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.rank() != 2 || idx.is_empty() {
            return Err(shape_err!("gather_rows needs a matrix and indices"));
        }
        let (k, d) = (tv.shape()[0], tv.shape()[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= k) {
            return Err(shape_err!("row index {} out of {} rows", bad, k));
        }
        let out = [idx.len(), d];
        if self.is_dry() {
            return Ok(self.push_dry(&out, &[table]));
        }
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(&tv.data()[i * d..(i + 1) * d]);
        }
        let idx = idx.to_vec();
        Ok(self.push(
            Tensor::from_parts_unchecked(out.to_vec(), data),
            &[table],
            move |g, _| {
                let mut dt = vec![T::zero(); k * d];
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..d {
                        dt[i * d + j] += g.data()[r * d + j];
                    }
                }
                vec![Some(Tensor::from_parts_unchecked(vec![k, d], dt))]
            },
        ))
    }

    // ---- linear algebra ----

    /// `op(a)·op(b)` for matrices, or batched over a shared leading axis.
    pub fn matmul(&self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        let (sa, sb) = (av.shape().to_vec(), bv.shape().to_vec());
        let (batch, ra, rb) = match (sa.len(), sb.len()) {
            (2, 2) => (1, [sa[0], sa[1]], [sb[0], sb[1]]),
            (3, 3) if sa[0] == sb[0] => (sa[0], [sa[1], sa[2]], [sb[1], sb[2]]),
            _ => return Err(shape_err!("matmul {:?} × {:?}", sa, sb)),
        };
        let (m, k) = if ta { (ra[1], ra[0]) } else { (ra[0], ra[1]) };
        let (k2, n) = if tb { (rb[1], rb[0]) } else { (rb[0], rb[1]) };
        if k != k2 {
            return Err(shape_err!(
                "matmul inner dims {} vs {} ({:?} × {:?})",
                k,
                k2,
                sa,
                sb
            ));
        }
        let out: Vec<usize> = if sa.len() == 3 {
            vec![batch, m, n]
        } else {
            vec![m, n]
        };
        self.add_macs((batch * m * k * n) as u64);
        if self.is_dry() {
            return Ok(self.push_dry(&out, &[a, b]));
        }
        let mut c = vec![T::zero(); batch * m * n];
        for bi in 0..batch {
            gemm(
                m,
                k,
                n,
                &av.data()[bi * m * k..],
                ta,
                &bv.data()[bi * k * n..],
                tb,
                T::zero(),
                &mut c[bi * m * n..(bi + 1) * m * n],
            );
        }
        Ok(self.push(
            Tensor::from_parts_unchecked(out, c),
            &[a, b],
            move |g, need| {
                let gd = g.data();
                let da = need[0].then(|| {
                    let mut da = vec![T::zero(); av.len()];
                    for bi in 0..batch {
                        let gb = &gd[bi * m * n..];
                        let bb = &bv.data()[bi * k * n..];
                        let out = &mut da[bi * m * k..(bi + 1) * m * k];
                        if ta {
                            gemm(k, n, m, bb, tb, gb, true, T::zero(), out);
                        } else {
                            gemm(m, n, k, gb, false, bb, !tb, T::zero(), out);
                        }
                    }
                    Tensor::from_parts_unchecked(sa.clone(), da)
                });
                let db = need[1].then(|| {
                    let mut db = vec![T::zero(); bv.len()];
                    for bi in 0..batch {
                        let gb = &gd[bi * m * n..];
                        let ab = &av.data()[bi * m * k..];
                        let out = &mut db[bi * k * n..(bi + 1) * k * n];
                        if tb {
                            gemm(n, m, k, gb, true, ab, ta, T::zero(), out);
                        } else {
                            gemm(k, m, n, ab, !ta, gb, false, T::zero(), out);
                        }
                    }
                    Tensor::from_parts_unchecked(sb.clone(), db)
                });
                vec![da, db]
            },
        ))
    }

    // ---- convolutions ----

    pub fn conv1d(&self, x: Var, w: Var, b: Option<Var>, spec: &ConvSpec) -> Result<Var> {
        let xv = self.value(x);
        let wv = self.value(w);
        let bv = b.map(|b| self.value(b));
        let out = conv::conv1d_out_shape(
            spec,
            xv.shape(),
            wv.shape(),
            bv.as_ref().map(|b| numel(b.shape())),
        )?;
        self.add_macs(spec.macs(out[1]));
        let mut parents = vec![x, w];
        parents.extend(b);
        if self.is_dry() {
            return Ok(self.push_dry(&out, &parents));
        }
        let t_in = xv.shape()[1];
        let t_out = out[1];
        let y = conv::conv1d_forward(
            spec,
            xv.data(),
            t_in,
            wv.data(),
            bv.as_ref().map(|b| b.data()),
            t_out,
        );
        let spec = *spec;
        let has_b = b.is_some();
        Ok(self.push(
            Tensor::from_parts_unchecked(out.to_vec(), y),
            &parents,
            move |g, need| {
                let nb = has_b && need.get(2).copied().unwrap_or(false);
                let (dx, dw, db) = conv::conv1d_backward(
                    &spec,
                    xv.data(),
                    t_in,
                    wv.data(),
                    g.data(),
                    t_out,
                    [need[0], need[1], nb],
                );
                let mut r = vec![
                    dx.map(|d| Tensor::from_parts_unchecked(xv.shape().to_vec(), d)),
                    dw.map(|d| Tensor::from_parts_unchecked(wv.shape().to_vec(), d)),
                ];
                if has_b {
                    r.push(db.map(|d| Tensor::from_parts_unchecked(vec![spec.out_channels], d)));
                }
                r
            },
        ))
    }

    pub fn conv_transpose1d(&self, x: Var, w: Var, b: Option<Var>, spec: &ConvSpec) -> Result<Var> {
        let xv = self.value(x);
        let wv = self.value(w);
        let bv = b.map(|b| self.value(b));
        let out = conv::conv_transpose1d_out_shape(
            spec,
            xv.shape(),
            wv.shape(),
            bv.as_ref().map(|b| numel(b.shape())),
        )?;
        let t_in = xv.shape()[1];
        self.add_macs(
            (spec.in_channels * t_in * (spec.out_channels / spec.groups) * spec.kernel) as u64,
        );
        let mut parents = vec![x, w];
        parents.extend(b);
        if self.is_dry() {
            return Ok(self.push_dry(&out, &parents));
        }
        let t_out = out[1];
        let y = conv::conv_transpose1d_forward(
            spec,
            xv.data(),
            t_in,
            wv.data(),
            bv.as_ref().map(|b| b.data()),
            t_out,
        );
        let spec = *spec;
        let has_b = b.is_some();
        Ok(self.push(
            Tensor::from_parts_unchecked(out.to_vec(), y),
            &parents,
            move |g, need| {
                let nb = has_b && need.get(2).copied().unwrap_or(false);
                let (dx, dw, db) = conv::conv_transpose1d_backward(
                    &spec,
                    xv.data(),
                    t_in,
                    wv.data(),
                    g.data(),
                    t_out,
                    [need[0], need[1], nb],
                );
                let mut r = vec![
                    dx.map(|d| Tensor::from_parts_unchecked(xv.shape().to_vec(), d)),
                    dw.map(|d| Tensor::from_parts_unchecked(wv.shape().to_vec(), d)),
                ];
                if has_b {
                    r.push(db.map(|d| Tensor::from_parts_unchecked(vec![spec.out_channels], d)));
                }
                r
            },
        ))
    }

    pub fn conv3d(&self, x: Var, w: Var, b: Option<Var>, spec: &Conv3dSpec) -> Result<Var> {
        let xv = self.value(x);
        let wv = self.value(w);
        let bv = b.map(|b| self.value(b));
        let out = conv::conv3d_out_shape(
            spec,
            xv.shape(),
            wv.shape(),
            bv.as_ref().map(|b| numel(b.shape())),
        )?;
        let n_out = out[1] * out[2] * out[3];
        let ks: usize = spec.kernel.iter().product();
        self.add_macs((spec.out_channels * n_out * spec.in_channels * ks) as u64);
        let mut parents = vec![x, w];
        parents.extend(b);
        if self.is_dry() {
            return Ok(self.push_dry(&out, &parents));
        }
        let dims = [xv.shape()[1], xv.shape()[2], xv.shape()[3]];
        let od = [out[1], out[2], out[3]];
        let y = conv::conv3d_forward(
            spec,
            xv.data(),
            dims,
            wv.data(),
            bv.as_ref().map(|b| b.data()),
            od,
        );
        let spec = *spec;
        let has_b = b.is_some();
        Ok(self.push(
            Tensor::from_parts_unchecked(out.to_vec(), y),
            &parents,
            move |g, need| {
                let nb = has_b && need.get(2).copied().unwrap_or(false);
                let (dx, dw, db) = conv::conv3d_backward(
                    &spec,
                    xv.data(),
                    dims,
                    wv.data(),
                    g.data(),
                    od,
                    [need[0], need[1], nb],
                );
                let mut r = vec![
                    dx.map(|d| Tensor::from_parts_unchecked(xv.shape().to_vec(), d)),
                    dw.map(|d| Tensor::from_parts_unchecked(wv.shape().to_vec(), d)),
                ];
                if has_b {
                    r.push(db.map(|d| Tensor::from_parts_unchecked(vec![spec.out_channels], d)));
                }
                r
            },
        ))
    }

    /// `[C·r², H, W, T] → [C, H·r, W·r, T]`; input channel `c·r² + i·r + j`
    /// lands at spatial offset `(i, j)`.
    pub fn pixel_shuffle(&self, x: Var, r: usize) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.shape().to_vec();
        if s.len() != 4 || r == 0 || s[0] % (r * r) != 0 {
            return Err(shape_err!("pixel_shuffle ×{} on {:?}", r, s));
        }
        let c = s[0] / (r * r);
        let out = vec![c, s[1] * r, s[2] * r, s[3]];
        if self.is_dry() {
            return Ok(self.push_dry(&out, &[x]));
        }
        let map = shuffle_map(&s, r);
        let mut y = vec![T::zero(); xv.len()];
        for (src, &dst) in map.iter().enumerate() {
            y[dst] = xv.data()[src];
        }
        Ok(
            self.push(Tensor::from_parts_unchecked(out, y), &[x], move |g, _| {
                let dx = map.iter().map(|&dst| g.data()[dst]).collect();
                vec![Some(Tensor::from_parts_unchecked(s.clone(), dx))]
            }),
        )
    }

    // ---- transforms ----

    fn rows_last(&self, x: Var) -> Result<(Rc<Tensor<T>>, usize)> {
        let xv = self.value(x);
        let t = *xv
            .shape()
            .last()
            .ok_or_else(|| shape_err!("rank-0 tensor"))?;
        Ok((xv, t))
    }

    fn dct_macs(&self, shape: &[usize]) {
        let t = *shape.last().unwrap_or(&1);
        let rows = numel(shape) / t;
        let lg = (t as f64).log2().ceil() as usize;
        self.add_macs((rows * t * lg) as u64);
    }

    /// Orthonormal DCT-II along the last axis.
    pub fn dct(&self, x: Var) -> Result<Var> {
        self.transform(x, false)
    }

    /// Inverse of [`Graph::dct`] along the last axis.
    pub fn idct(&self, x: Var) -> Result<Var> {
        self.transform(x, true)
    }

    fn transform(&self, x: Var, inverse: bool) -> Result<Var> {
        let (xv, t) = self.rows_last(x)?;
        self.dct_macs(xv.shape());
        if self.is_dry() {
            return Ok(self.push_dry(xv.shape(), &[x]));
        }
        let y = if inverse {
            dct::idct2(xv.data(), t)
        } else {
            dct::dct2(xv.data(), t)
        };
        let shape = xv.shape().to_vec();
        Ok(self.push(
            Tensor::from_parts_unchecked(shape.clone(), y),
            &[x],
            move |g, _| {
                let d = if inverse {
                    dct::dct2(g.data(), t)
                } else {
                    dct::idct2(g.data(), t)
                };
                vec![Some(Tensor::from_parts_unchecked(shape.clone(), d))]
            },
        ))
    }

    /// Scales row `c` of a `[C × T]` spectrum by `exp(−k[c]·(pπ/T)²)`.
    pub fn heat_filter(&self, spec: Var, k: Var) -> Result<Var> {
        let sv = self.value(spec);
        let kv = self.value(k);
        if sv.rank() != 2 || numel(kv.shape()) != sv.shape()[0] {
            return Err(shape_err!(
                "heat filter spectrum {:?} with k {:?}",
                sv.shape(),
                kv.shape()
            ));
        }
        if self.is_dry() {
            return Ok(self.push_dry(sv.shape(), &[spec, k]));
        }
        let t = sv.shape()[1];
        let y = Rc::new(Tensor::from_parts_unchecked(
            sv.shape().to_vec(),
            dct::heat_filter(sv.data(), t, kv.data()),
        ));
        let yc = y.clone();
        Ok(self.push_rc(y, &[spec, k], move |g, need| {
            let w2: Vec<T> = dct::heat_frequencies(t).into_iter().map(T::c).collect();
            let ds = need[0].then(|| {
                let mut d = g.data().to_vec();
                for (c, row) in d.chunks_mut(t).enumerate() {
                    let kc = kv.data()[c];
                    for (p, v) in row.iter_mut().enumerate() {
                        *v *= (-kc * w2[p]).exp();
                    }
                }
                Tensor::from_parts_unchecked(sv.shape().to_vec(), d)
            });
            let dk = need[1].then(|| {
                let d = g
                    .data()
                    .chunks(t)
                    .zip(yc.data().chunks(t))
                    .map(|(gr, yr)| {
                        gr.iter()
                            .zip(yr)
                            .zip(&w2)
                            .map(|((&g, &y), &w)| -g * y * w)
                            .sum()
                    })
                    .collect();
                Tensor::from_parts_unchecked(kv.shape().to_vec(), d)
            });
            vec![ds, dk]
        }))
    }

    /// STFT magnitudes `[bins × frames]` of a single-channel signal.
    pub fn stft_mag(&self, x: Var, cfg: &StftConfig) -> Result<Var> {
        let xv = self.value(x);
        let len = numel(xv.shape());
        if len != *xv.shape().last().unwrap_or(&0) {
            return Err(shape_err!(
                "stft needs a single channel, got {:?}",
                xv.shape()
            ));
        }
        let frames = cfg.frames(len)?;
        let out = vec![cfg.bins(), frames];
        let lg = (cfg.win_len as f64).log2().ceil() as usize;
        self.add_macs((frames * cfg.win_len * lg) as u64);
        if self.is_dry() {
            return Ok(self.push_dry(&out, &[x]));
        }
        let m = spectral::stft_mag(xv.data(), cfg)?;
        let cfg = *cfg;
        Ok(
            self.push(Tensor::from_parts_unchecked(out, m), &[x], move |g, _| {
                let d = spectral::stft_mag_backward(xv.data(), &cfg, g.data());
                vec![Some(Tensor::from_parts_unchecked(xv.shape().to_vec(), d))]
            }),
        )
    }

    // ---- resampling ----

    pub fn interpolate(&self, x: Var, target: usize, mode: Interp) -> Result<Var> {
        let (xv, t) = self.rows_last(x)?;
        if target == 0 {
            return Err(shape_err!("interpolation target must be positive"));
        }
        let mut out = xv.shape().to_vec();
        *out.last_mut().unwrap() = target;
        if self.is_dry() {
            return Ok(self.push_dry(&out, &[x]));
        }
        if target == t {
            return Ok(x);
        }
        let y = resample::interpolate_time(xv.data(), t, target, mode);
        let shape = xv.shape().to_vec();
        Ok(
            self.push(Tensor::from_parts_unchecked(out, y), &[x], move |g, _| {
                let d = resample::interpolate_time_backward(g.data(), t, target, mode);
                vec![Some(Tensor::from_parts_unchecked(shape.clone(), d))]
            }),
        )
    }

    /// Mean pooling by `factor` along the last axis.
    pub fn pool(&self, x: Var, factor: usize) -> Result<Var> {
        let (xv, t) = self.rows_last(x)?;
        if factor == 0 {
            return Err(shape_err!("pooling factor must be positive"));
        }
        if factor == 1 {
            return Ok(x);
        }
        let mut out = xv.shape().to_vec();
        *out.last_mut().unwrap() = t.div_ceil(factor);
        if self.is_dry() {
            return Ok(self.push_dry(&out, &[x]));
        }
        let (y, _) = resample::pool_time(xv.data(), t, factor);
        let shape = xv.shape().to_vec();
        Ok(
            self.push(Tensor::from_parts_unchecked(out, y), &[x], move |g, _| {
                let d = resample::pool_time_backward(g.data(), t, factor);
                vec![Some(Tensor::from_parts_unchecked(shape.clone(), d))]
            }),
        )
    }

    // ---- normalization ----

    pub fn softmax(&self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.rank() {
            return Err(shape_err!("softmax axis {} for {:?}", axis, xv.shape()));
        }
        if self.is_dry() {
            return Ok(self.push_dry(xv.shape(), &[x]));
        }
        let shape = xv.shape().to_vec();
        let y = Rc::new(Tensor::from_parts_unchecked(
            shape.clone(),
            norm::softmax(xv.data(), &shape, axis),
        ));
        let yc = y.clone();
        Ok(self.push_rc(y, &[x], move |g, _| {
            let d = norm::softmax_backward(yc.data(), g.data(), &shape, axis);
            vec![Some(Tensor::from_parts_unchecked(shape.clone(), d))]
        }))
    }

    /// Normalizes over axis 0 of `[C × …]` and applies per-channel gain and bias.
    pub fn layer_norm(&self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        self.channel_norm(x, gain, Some(bias), false)
    }

    /// Root-mean-square normalization over axis 0 with per-channel gain.
    pub fn rms_norm(&self, x: Var, gain: Var) -> Result<Var> {
        self.channel_norm(x, gain, None, true)
    }

    fn channel_norm(&self, x: Var, gain: Var, bias: Option<Var>, rms: bool) -> Result<Var> {
        let xv = self.value(x);
        let gv = self.value(gain);
        let c = xv.shape()[0];
        if numel(gv.shape()) != c {
            return Err(shape_err!(
                "norm gain {:?} for input {:?}",
                gv.shape(),
                xv.shape()
            ));
        }
        let bv = bias.map(|b| self.value(b));
        if let Some(b) = &bv {
            if numel(b.shape()) != c {
                return Err(shape_err!(
                    "norm bias {:?} for input {:?}",
                    b.shape(),
                    xv.shape()
                ));
            }
        }
        let mut parents = vec![x, gain];
        parents.extend(bias);
        if self.is_dry() {
            return Ok(self.push_dry(xv.shape(), &parents));
        }
        let n = xv.len() / c;
        let (xhat, stat) = if rms {
            norm::rms_norm_channels(xv.data(), c)
        } else {
            norm::layer_norm_channels(xv.data(), c)
        };
        let mut y = xhat.clone();
        for (ch, row) in y.chunks_mut(n).enumerate() {
            let gch = gv.data()[ch];
            let bch = bv.as_ref().map_or(T::zero(), |b| b.data()[ch]);
            for v in row {
                *v = *v * gch + bch;
            }
        }
        let shape = xv.shape().to_vec();
        let has_b = bias.is_some();
        Ok(self.push(
            Tensor::from_parts_unchecked(shape.clone(), y),
            &parents,
            move |g, need| {
                let gd = g.data();
                let dx = need[0].then(|| {
                    let mut dxh = gd.to_vec();
                    for (ch, row) in dxh.chunks_mut(n).enumerate() {
                        let gch = gv.data()[ch];
                        row.iter_mut().for_each(|v| *v *= gch);
                    }
                    let d = if rms {
                        norm::rms_norm_channels_backward(xv.data(), &stat, &dxh, c)
                    } else {
                        norm::layer_norm_channels_backward(&xhat, &stat, &dxh, c)
                    };
                    Tensor::from_parts_unchecked(shape.clone(), d)
                });
                let dg = need[1].then(|| {
                    let d = gd
                        .chunks(n)
                        .zip(xhat.chunks(n))
                        .map(|(gr, hr)| gr.iter().zip(hr).map(|(&a, &b)| a * b).sum())
                        .collect();
                    Tensor::from_parts_unchecked(gv.shape().to_vec(), d)
                });
                let mut r = vec![dx, dg];
                if has_b {
                    r.push(need[2].then(|| {
                        let d = gd.chunks(n).map(|r| r.iter().copied().sum()).collect();
                        Tensor::from_parts_unchecked(vec![c], d)
                    }));
                }
                r
            },
        ))
    }
}

fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Scalar>(v: T) -> T {
    // log(1 + e^v) without overflow
    v.max(T::zero()) + (-v.abs()).exp().ln_1p()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu<T: Scalar>(x: T) -> T {
    let c = T::c(GELU_C);
    let u = c * (x + T::c(0.044715) * x * x * x);
    T::c(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Scalar>(x: T, _y: T) -> T {
    let c = T::c(GELU_C);
    let u = c * (x + T::c(0.044715) * x * x * x);
    let th = u.tanh();
    let du = c * (T::one() + T::c(3.0 * 0.044715) * x * x);
    T::c(0.5) * (T::one() + th) + T::c(0.5) * x * (T::one() - th * th) * du
}

pub(crate) fn permute_data<T: Scalar>(x: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let r = shape.len();
    let mut in_strides = vec![1; r];
    for d in (0..r.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let out: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let ps: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let zeros = vec![0; r];
    let mut y = vec![T::zero(); x.len()];
    for_each_offset(&out, &ps, &zeros, |i, src, _| y[i] = x[src]);
    y
}

/// Destination flat index for every source element of a pixel shuffle.
fn shuffle_map(s: &[usize], r: usize) -> Vec<usize> {
    let (cr, h, w, t) = (s[0], s[1], s[2], s[3]);
    let (ho, wo) = (h * r, w * r);
    let mut map = Vec::with_capacity(cr * h * w * t);
    for ch in 0..cr {
        let (c, i, j) = (ch / (r * r), (ch % (r * r)) / r, ch % r);
        for y in 0..h {
            for x in 0..w {
                let base = ((c * ho + y * r + i) * wo + x * r + j) * t;
                for tt in 0..t {
                    map.push(base + tt);
                }
            }
        }
    }
    map
}

#[cfg(test)]
pub(crate) fn softplus_scalar(v: f64) -> f64 {
    softplus(v)
}
