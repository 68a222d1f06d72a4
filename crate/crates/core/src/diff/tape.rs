//! Recorded-tape reverse-mode differentiation.
//!
//! Forward ops evaluate eagerly into the tape; [`Tape::backward`] consumes
//! the tape and returns parameter gradients. Vars are only valid on the tape
//! that created them (checked at run time via a tape id).

use super::conv::{self, ConvDims};
use super::linalg;
use super::{DiffError, GradStore, ParamSet, Tensor};
use statrs::function::gamma::{digamma, ln_gamma};
use std::sync::atomic::{AtomicU64, Ordering};

static TAPE_IDS: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy)]
pub struct Var {
    tape: u64,
    id: u32,
}

#[derive(Debug, Clone, Copy)]
enum Unary {
    Neg,
    Exp,
    Log,
    Softplus,
    Sigmoid,
    Relu,
    Square,
    Sqrt,
    Abs,
    LnGamma,
}

#[derive(Debug, Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(usize),
    Unary(Unary, u32),
    Binary(Binary, u32, u32),
    Matmul(u32, u32),
    AddBias(u32, u32),
    AddConst(u32),
    MulConst(u32, f64),
    ClampMin(u32, f64),
    SubFromConst(u32),
    SumAll(u32),
    SumAxis1(u32),
    BroadcastCol(u32, usize),
    CumsumExclusiveRow(u32),
    Reshape(u32),
    SliceCols(u32, usize, usize),
    Conv2d {
        x: u32,
        k: u32,
        bias: u32,
        dims: ConvDims,
    },
    ChwToRows(u32),
}

struct Node {
    value: Tensor,
    needs_grad: bool,
    op: Op,
}

/// Eager computation tape.
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: TAPE_IDS.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, op: Op) -> Var {
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            value,
            needs_grad,
            op,
        });
        Var { tape: self.id, id }
    }

    #[inline]
    fn node(&self, v: Var) -> &Node {
        assert_eq!(v.tape, self.id, "var used on a different tape");
        &self.nodes[v.id as usize]
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).value
    }

    /// Scalar value of a recorded node, checked finite.
    pub fn value_scalar(&self, v: Var) -> Result<f64, DiffError> {
        let x = self.node(v).value.item();
        if !x.is_finite() {
            return Err(DiffError::NonFinite("scalar tape value".into()));
        }
        Ok(x)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, false, Op::Leaf)
    }

    pub fn scalar_const(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Bind a named parameter as a leaf that receives gradients.
    pub fn param(&mut self, ps: &ParamSet, name: &str) -> Result<Var, DiffError> {
        let idx = ps.index_of(name)?;
        let value = ps.entries()[idx].value.clone();
        Ok(self.push(value, true, Op::Param(idx)))
    }

    /// Copy of a var's current value with gradient flow cut.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.node(v).value.clone();
        self.constant(t)
    }

    /// Constant built by mapping a function over a var's current value.
    pub fn detach_map(&mut self, v: Var, f: impl Fn(f64) -> f64) -> Var {
        let src = &self.node(v).value;
        let t = Tensor::new(src.shape().to_vec(), src.data().iter().map(|&x| f(x)).collect())
            .expect("detach_map preserves shape");
        self.constant(t)
    }

    fn unary(&mut self, kind: Unary, a: Var) -> Var {
        let src = self.node(a);
        let data = src
            .value
            .data()
            .iter()
            .map(|&x| match kind {
                Unary::Neg => -x,
                Unary::Exp => x.exp(),
                Unary::Log => x.ln(),
                Unary::Softplus => linalg::softplus(x),
                Unary::Sigmoid => linalg::sigmoid(x),
                Unary::Relu => x.max(0.0),
                Unary::Square => x * x,
                Unary::Sqrt => x.sqrt(),
                Unary::Abs => x.abs(),
                Unary::LnGamma => ln_gamma(x),
            })
            .collect();
        let t = Tensor::new(src.value.shape().to_vec(), data).unwrap();
        let ng = src.needs_grad;
        self.push(t, ng, Op::Unary(kind, a.id))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(Unary::Neg, a)
    }
    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Unary::Exp, a)
    }
    pub fn log(&mut self, a: Var) -> Var {
        self.unary(Unary::Log, a)
    }
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(Unary::Softplus, a)
    }
    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a)
    }
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Unary::Relu, a)
    }
    pub fn square(&mut self, a: Var) -> Var {
        self.unary(Unary::Square, a)
    }
    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(Unary::Sqrt, a)
    }
    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(Unary::Abs, a)
    }
    pub fn ln_gamma(&mut self, a: Var) -> Var {
        self.unary(Unary::LnGamma, a)
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.node(a).value, &self.node(b).value);
        assert_eq!(
            av.shape(),
            bv.shape(),
            "elementwise op on mismatched shapes"
        );
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| match kind {
                Binary::Add => x + y,
                Binary::Sub => x - y,
                Binary::Mul => x * y,
                Binary::Div => x / y,
            })
            .collect();
        let t = Tensor::new(av.shape().to_vec(), data).unwrap();
        let ng = self.node(a).needs_grad || self.node(b).needs_grad;
        self.push(t, ng, Op::Binary(kind, a.id, b.id))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Add, a, b)
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Sub, a, b)
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Mul, a, b)
    }
    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Div, a, b)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let src = &self.node(a).value;
        let t = Tensor::new(src.shape().to_vec(), src.data().iter().map(|&x| x + c).collect())
            .unwrap();
        let ng = self.node(a).needs_grad;
        self.push(t, ng, Op::AddConst(a.id))
    }

    pub fn mul_const(&mut self, a: Var, c: f64) -> Var {
        let src = &self.node(a).value;
        let t = Tensor::new(src.shape().to_vec(), src.data().iter().map(|&x| x * c).collect())
            .unwrap();
        let ng = self.node(a).needs_grad;
        self.push(t, ng, Op::MulConst(a.id, c))
    }

    /// max(a, c) elementwise; gradient passes only where a > c.
    pub fn clamp_min(&mut self, a: Var, c: f64) -> Var {
        let src = &self.node(a).value;
        let t = Tensor::new(src.shape().to_vec(), src.data().iter().map(|&x| x.max(c)).collect())
            .unwrap();
        let ng = self.node(a).needs_grad;
        self.push(t, ng, Op::ClampMin(a.id, c))
    }

    /// c - a, elementwise.
    pub fn sub_from_const(&mut self, c: f64, a: Var) -> Var {
        let src = &self.node(a).value;
        let t = Tensor::new(src.shape().to_vec(), src.data().iter().map(|&x| c - x).collect())
            .unwrap();
        let ng = self.node(a).needs_grad;
        self.push(t, ng, Op::SubFromConst(a.id))
    }

    /// Matrix product of 2-D vars: [n,k] x [k,m] -> [n,m].
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.node(a).value, &self.node(b).value);
        let (n, k) = (av.rows(), av.cols());
        let (kb, m) = (bv.rows(), bv.cols());
        assert_eq!(k, kb, "matmul inner dims {k} vs {kb}");
        let mut out = vec![0.0; n * m];
        linalg::matmul_acc(av.data(), n, k, bv.data(), m, &mut out);
        let t = Tensor::new(vec![n, m], out).unwrap();
        let ng = self.node(a).needs_grad || self.node(b).needs_grad;
        self.push(t, ng, Op::Matmul(a.id, b.id))
    }

    /// Add a 1-D bias vector to every row of a 2-D var.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let (xv, bv) = (&self.node(x).value, &self.node(bias).value);
        let (n, m) = (xv.rows(), xv.cols());
        assert_eq!(bv.shape(), &[m], "bias must be 1-D of width {m}");
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..m {
                out.push(xv.data()[i * m + j] + bv.data()[j]);
            }
        }
        let t = Tensor::new(vec![n, m], out).unwrap();
        let ng = self.node(x).needs_grad || self.node(bias).needs_grad;
        self.push(t, ng, Op::AddBias(x.id, bias.id))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.node(a).value.data().iter().sum();
        let ng = self.node(a).needs_grad;
        self.push(Tensor::scalar(s), ng, Op::SumAll(a.id))
    }

    /// Row sums of a 2-D var: [n,m] -> [n,1].
    pub fn sum_axis1(&mut self, a: Var) -> Var {
        let av = &self.node(a).value;
        let (n, m) = (av.rows(), av.cols());
        let data: Vec<f64> = (0..n)
            .map(|i| av.data()[i * m..(i + 1) * m].iter().sum())
            .collect();
        let t = Tensor::new(vec![n, 1], data).unwrap();
        let ng = self.node(a).needs_grad;
        self.push(t, ng, Op::SumAxis1(a.id))
    }

    /// Repeat a [n,1] column across m columns: -> [n,m].
    pub fn broadcast_col(&mut self, a: Var, m: usize) -> Var {
        let av = &self.node(a).value;
        assert_eq!(av.cols(), 1, "broadcast_col wants a column vector");
        let n = av.rows();
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let v = av.data()[i];
            out.extend(std::iter::repeat(v).take(m));
        }
        let t = Tensor::new(vec![n, m], out).unwrap();
        let ng = self.node(a).needs_grad;
        self.push(t, ng, Op::BroadcastCol(a.id, m))
    }

    /// Exclusive prefix sums along each row: y[i,j] = sum_{j' < j} x[i,j'].
    pub fn cumsum_exclusive_row(&mut self, a: Var) -> Var {
        let av = &self.node(a).value;
        let (n, m) = (av.rows(), av.cols());
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..m {
                out.push(acc);
                acc += av.data()[i * m + j];
            }
        }
        let t = Tensor::new(vec![n, m], out).unwrap();
        let ng = self.node(a).needs_grad;
        self.push(t, ng, Op::CumsumExclusiveRow(a.id))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Var {
        let av = &self.node(a).value;
        let t = Tensor::new(shape, av.data().to_vec()).expect("reshape must preserve size");
        let ng = self.node(a).needs_grad;
        self.push(t, ng, Op::Reshape(a.id))
    }

    /// Columns [c0, c1) of a 2-D var.
    pub fn slice_cols(&mut self, a: Var, c0: usize, c1: usize) -> Var {
        let av = &self.node(a).value;
        let (n, m) = (av.rows(), av.cols());
        assert!(c0 < c1 && c1 <= m, "bad column slice {c0}..{c1} of {m}");
        let w = c1 - c0;
        let mut out = Vec::with_capacity(n * w);
        for i in 0..n {
            out.extend_from_slice(&av.data()[i * m + c0..i * m + c1]);
        }
        let t = Tensor::new(vec![n, w], out).unwrap();
        let ng = self.node(a).needs_grad;
        self.push(t, ng, Op::SliceCols(a.id, c0, c1))
    }

    /// 2-D convolution: x [b,ci,h,w], k [co,ci,kh,kw], bias [co].
    pub fn conv2d(&mut self, x: Var, k: Var, bias: Var, stride: usize, pad: usize) -> Var {
        let (xv, kv, bv) = (
            &self.node(x).value,
            &self.node(k).value,
            &self.node(bias).value,
        );
        let xs = xv.shape();
        let ks = kv.shape();
        assert_eq!(xs.len(), 4, "conv input must be BCHW");
        assert_eq!(ks.len(), 4, "conv kernel must be [co,ci,kh,kw]");
        assert_eq!(xs[1], ks[1], "conv channel mismatch");
        assert_eq!(bv.shape(), &[ks[0]], "conv bias width");
        let dims = ConvDims {
            batch: xs[0],
            c_in: xs[1],
            h: xs[2],
            w: xs[3],
            c_out: ks[0],
            kh: ks[2],
            kw: ks[3],
            stride,
            pad,
        };
        let (ho, wo) = (dims.h_out(), dims.w_out());
        let mut out = vec![0.0; dims.batch * dims.c_out * ho * wo];
        conv::conv2d_fwd(xv.data(), kv.data(), bv.data(), &dims, &mut out);
        let t = Tensor::new(vec![dims.batch, dims.c_out, ho, wo], out).unwrap();
        let ng =
            self.node(x).needs_grad || self.node(k).needs_grad || self.node(bias).needs_grad;
        self.push(
            t,
            ng,
            Op::Conv2d {
                x: x.id,
                k: k.id,
                bias: bias.id,
                dims,
            },
        )
    }

    /// Flatten BCHW to rows: [b,c,h,w] -> [b*h*w, c], row ((b*h)+y)*w + x.
    pub fn chw_to_rows(&mut self, a: Var) -> Var {
        let av = &self.node(a).value;
        let s = av.shape();
        assert_eq!(s.len(), 4);
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let mut out = vec![0.0; b * h * w * c];
        for bi in 0..b {
            for ci in 0..c {
                let src = (bi * c + ci) * h * w;
                for p in 0..h * w {
                    out[(bi * h * w + p) * c + ci] = av.data()[src + p];
                }
            }
        }
        let t = Tensor::new(vec![b * h * w, c], out).unwrap();
        let ng = self.node(a).needs_grad;
        self.push(t, ng, Op::ChwToRows(a.id))
    }

    fn add_grad(grads: &mut [Option<Tensor>], nodes: &[Node], id: u32, g: Tensor) {
        let idx = id as usize;
        if !nodes[idx].needs_grad {
            return;
        }
        match &mut grads[idx] {
            Some(existing) => {
                for (dst, src) in existing.data_mut().iter_mut().zip(g.data()) {
                    *dst += src;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    /// Reverse sweep from a scalar loss. Consumes the tape; gradients of all
    /// bound parameters are accumulated into the returned store.
    pub fn backward(self, loss: Var) -> Result<GradStore, DiffError> {
        if loss.tape != self.id {
            return Err(DiffError::State("loss var from a different tape".into()));
        }
        let loss_node = &self.nodes[loss.id as usize];
        if loss_node.value.len() != 1 {
            return Err(DiffError::Dimension("backward needs a scalar loss".into()));
        }
        if !loss_node.value.item().is_finite() {
            return Err(DiffError::NonFinite("loss value".into()));
        }
        if !loss_node.needs_grad {
            return Err(DiffError::State(
                "loss does not depend on any parameter".into(),
            ));
        }
        let nodes = &self.nodes;
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id as usize] = Some(Tensor::scalar(1.0));
        let mut store = GradStore::default();

        for idx in (0..=loss.id as usize).rev() {
            if !nodes[idx].needs_grad {
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(pidx) => store.add_at(*pidx, g),
                Op::Unary(kind, a) => {
                    let av = &nodes[*a as usize].value;
                    let yv = &node.value;
                    let data: Vec<f64> = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, &gv)| {
                            let x = av.data()[i];
                            let y = yv.data()[i];
                            match kind {
                                Unary::Neg => -gv,
                                Unary::Exp => gv * y,
                                Unary::Log => gv / x,
                                Unary::Softplus => gv * linalg::sigmoid(x),
                                Unary::Sigmoid => gv * y * (1.0 - y),
                                Unary::Relu => {
                                    if x > 0.0 {
                                        gv
                                    } else {
                                        0.0
                                    }
                                }
                                Unary::Square => 2.0 * gv * x,
                                Unary::Sqrt => gv / (2.0 * y),
                                Unary::Abs => gv * x.signum() * f64::from(x != 0.0),
                                Unary::LnGamma => gv * digamma(x),
                            }
                        })
                        .collect();
                    let t = Tensor::new(av.shape().to_vec(), data).unwrap();
                    Self::add_grad(&mut grads, nodes, *a, t);
                }
                Op::Binary(kind, a, b) => {
                    let (av, bv) = (&nodes[*a as usize].value, &nodes[*b as usize].value);
                    match kind {
                        Binary::Add => {
                            Self::add_grad(&mut grads, nodes, *a, g.clone());
                            Self::add_grad(&mut grads, nodes, *b, g);
                        }
                        Binary::Sub => {
                            let neg = Tensor::new(
                                g.shape().to_vec(),
                                g.data().iter().map(|&x| -x).collect(),
                            )
                            .unwrap();
                            Self::add_grad(&mut grads, nodes, *a, g);
                            Self::add_grad(&mut grads, nodes, *b, neg);
                        }
                        Binary::Mul => {
                            let da = Tensor::new(
                                g.shape().to_vec(),
                                g.data()
                                    .iter()
                                    .zip(bv.data())
                                    .map(|(&gv, &y)| gv * y)
                                    .collect(),
                            )
                            .unwrap();
                            let db = Tensor::new(
                                g.shape().to_vec(),
                                g.data()
                                    .iter()
                                    .zip(av.data())
                                    .map(|(&gv, &x)| gv * x)
                                    .collect(),
                            )
                            .unwrap();
                            Self::add_grad(&mut grads, nodes, *a, da);
                            Self::add_grad(&mut grads, nodes, *b, db);
                        }
                        Binary::Div => {
                            let da = Tensor::new(
                                g.shape().to_vec(),
                                g.data()
                                    .iter()
                                    .zip(bv.data())
                                    .map(|(&gv, &y)| gv / y)
                                    .collect(),
                            )
                            .unwrap();
                            let db = Tensor::new(
                                g.shape().to_vec(),
                                g.data()
                                    .iter()
                                    .enumerate()
                                    .map(|(i, &gv)| {
                                        let x = av.data()[i];
                                        let y = bv.data()[i];
                                        -gv * x / (y * y)
                                    })
                                    .collect(),
                            )
                            .unwrap();
                            Self::add_grad(&mut grads, nodes, *a, da);
                            Self::add_grad(&mut grads, nodes, *b, db);
                        }
                    }
                }
                Op::Matmul(a, b) => {
                    let (av, bv) = (&nodes[*a as usize].value, &nodes[*b as usize].value);
                    let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                    if nodes[*a as usize].needs_grad {
                        let mut da = vec![0.0; n * k];
                        linalg::matmul_acc_bt(g.data(), n, m, bv.data(), k, &mut da);
                        Self::add_grad(
                            &mut grads,
                            nodes,
                            *a,
                            Tensor::new(vec![n, k], da).unwrap(),
                        );
                    }
                    if nodes[*b as usize].needs_grad {
                        let mut db = vec![0.0; k * m];
                        linalg::matmul_acc_at(av.data(), n, k, g.data(), m, &mut db);
                        Self::add_grad(
                            &mut grads,
                            nodes,
                            *b,
                            Tensor::new(vec![k, m], db).unwrap(),
                        );
                    }
                }
                Op::AddBias(x, bias) => {
                    let (n, m) = (g.rows(), g.cols());
                    if nodes[*bias as usize].needs_grad {
                        let mut db = vec![0.0; m];
                        for i in 0..n {
                            for (j, d) in db.iter_mut().enumerate() {
                                *d += g.data()[i * m + j];
                            }
                        }
                        Self::add_grad(
                            &mut grads,
                            nodes,
                            *bias,
                            Tensor::new(vec![m], db).unwrap(),
                        );
                    }
                    Self::add_grad(&mut grads, nodes, *x, g);
                }
                Op::AddConst(a) => Self::add_grad(&mut grads, nodes, *a, g),
                Op::ClampMin(a, c) => {
                    let av = &nodes[*a as usize].value;
                    let data: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(av.data())
                        .map(|(&gv, &x)| if x > *c { gv } else { 0.0 })
                        .collect();
                    let t = Tensor::new(av.shape().to_vec(), data).unwrap();
                    Self::add_grad(&mut grads, nodes, *a, t);
                }
                Op::MulConst(a, c) => {
                    let t = Tensor::new(
                        g.shape().to_vec(),
                        g.data().iter().map(|&x| x * c).collect(),
                    )
                    .unwrap();
                    Self::add_grad(&mut grads, nodes, *a, t);
                }
                Op::SubFromConst(a) => {
                    let t = Tensor::new(
                        g.shape().to_vec(),
                        g.data().iter().map(|&x| -x).collect(),
                    )
                    .unwrap();
                    Self::add_grad(&mut grads, nodes, *a, t);
                }
                Op::SumAll(a) => {
                    let av = &nodes[*a as usize].value;
                    let t = Tensor::filled(av.shape().to_vec(), g.item());
                    Self::add_grad(&mut grads, nodes, *a, t);
                }
                Op::SumAxis1(a) => {
                    let av = &nodes[*a as usize].value;
                    let (n, m) = (av.rows(), av.cols());
                    let mut out = Vec::with_capacity(n * m);
                    for i in 0..n {
                        out.extend(std::iter::repeat(g.data()[i]).take(m));
                    }
                    Self::add_grad(
                        &mut grads,
                        nodes,
                        *a,
                        Tensor::new(vec![n, m], out).unwrap(),
                    );
                }
                Op::BroadcastCol(a, m) => {
                    let n = nodes[*a as usize].value.rows();
                    let data: Vec<f64> = (0..n)
                        .map(|i| g.data()[i * m..(i + 1) * m].iter().sum())
                        .collect();
                    Self::add_grad(
                        &mut grads,
                        nodes,
                        *a,
                        Tensor::new(vec![n, 1], data).unwrap(),
                    );
                }
                Op::CumsumExclusiveRow(a) => {
                    // dx[i,j] = sum_{j' > j} g[i,j']
                    let (n, m) = (g.rows(), g.cols());
                    let mut out = vec![0.0; n * m];
                    for i in 0..n {
                        let mut acc = 0.0;
                        for j in (0..m).rev() {
                            out[i * m + j] = acc;
                            acc += g.data()[i * m + j];
                        }
                    }
                    Self::add_grad(
                        &mut grads,
                        nodes,
                        *a,
                        Tensor::new(vec![n, m], out).unwrap(),
                    );
                }
                Op::Reshape(a) => {
                    let av = &nodes[*a as usize].value;
                    let t = Tensor::new(av.shape().to_vec(), g.data().to_vec()).unwrap();
                    Self::add_grad(&mut grads, nodes, *a, t);
                }
                Op::SliceCols(a, c0, c1) => {
                    let av = &nodes[*a as usize].value;
                    let (n, m) = (av.rows(), av.cols());
                    let w = c1 - c0;
                    let mut out = vec![0.0; n * m];
                    for i in 0..n {
                        out[i * m + c0..i * m + c1].copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                    }
                    Self::add_grad(
                        &mut grads,
                        nodes,
                        *a,
                        Tensor::new(vec![n, m], out).unwrap(),
                    );
                }
                Op::Conv2d { x, k, bias, dims } => {
                    let (xv, kv) = (&nodes[*x as usize].value, &nodes[*k as usize].value);
                    if nodes[*bias as usize].needs_grad {
                        let mut db = vec![0.0; dims.c_out];
                        conv::conv2d_bwd_bias(g.data(), dims, &mut db);
                        Self::add_grad(
                            &mut grads,
                            nodes,
                            *bias,
                            Tensor::new(vec![dims.c_out], db).unwrap(),
                        );
                    }
                    if nodes[*k as usize].needs_grad {
                        let mut dk = vec![0.0; kv.len()];
                        conv::conv2d_bwd_kernel(xv.data(), g.data(), dims, &mut dk);
                        Self::add_grad(
                            &mut grads,
                            nodes,
                            *k,
                            Tensor::new(kv.shape().to_vec(), dk).unwrap(),
                        );
                    }
                    if nodes[*x as usize].needs_grad {
                        let mut dx = vec![0.0; xv.len()];
                        conv::conv2d_bwd_input(kv.data(), g.data(), dims, &mut dx);
                        Self::add_grad(
                            &mut grads,
                            nodes,
                            *x,
                            Tensor::new(xv.shape().to_vec(), dx).unwrap(),
                        );
                    }
                }
                Op::ChwToRows(a) => {
                    let av = &nodes[*a as usize].value;
                    let s = av.shape();
                    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
                    let mut out = vec![0.0; av.len()];
                    for bi in 0..b {
                        for ci in 0..c {
                            let dst = (bi * c + ci) * h * w;
                            for p in 0..h * w {
                                out[dst + p] = g.data()[(bi * h * w + p) * c + ci];
                            }
                        }
                    }
                    Self::add_grad(
                        &mut grads,
                        nodes,
                        *a,
                        Tensor::new(s.to_vec(), out).unwrap(),
                    );
                }
            }
        }
        if !store.all_finite() {
            return Err(DiffError::NonFinite("parameter gradients".into()));
        }
        Ok(store)
    }

    /// Convenience: backward and accumulate straight into the parameter set.
    pub fn backward_into(self, loss: Var, ps: &mut ParamSet) -> Result<(), DiffError> {
        let store = self.backward(loss)?;
        ps.accumulate(&store)
    }
}
