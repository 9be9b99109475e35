use super::kernels;
use super::{ParamId, ParamStore, Real, Shape, Tensor, TensorError};

type Result<T> = std::result::Result<T, TensorError>;

/// Probabilities are clamped to this floor before taking logs in the
/// cross-entropy primitives.
pub const PROB_FLOOR: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<F> {
    Input,
    Constant,
    Param(ParamId),
    Linear {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow {
        x: NodeId,
        row: NodeId,
    },
    PairAdd(NodeId, NodeId),
    ScaleRows {
        x: NodeId,
        s: NodeId,
    },
    Scale(NodeId, F),
    RSub(NodeId, F),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Softmax(NodeId),
    Log(NodeId),
    MeanRows(NodeId),
    Sum(NodeId),
    Concat(Vec<NodeId>),
    StackRows(Vec<NodeId>),
    Row(NodeId, usize),
    Reshape(NodeId),
    Gather {
        table: NodeId,
        ids: Vec<usize>,
    },
    CrossEntropy {
        p: NodeId,
        target: Vec<F>,
    },
    BinaryCrossEntropy {
        p: NodeId,
        target: Vec<F>,
    },
}

enum Storage<F> {
    Owned(Vec<F>),
    Param(ParamId),
}

struct Node<F> {
    shape: Shape,
    value: Storage<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Ordered record of primitive operations.
///
/// Nodes are appended in evaluation order, so the node list is always a
/// topological order; [`Tape::backward`] walks it once in reverse.
pub struct Tape<'p, F: Real> {
    params: Option<&'p ParamStore<F>>,
    param_nodes: Vec<Option<NodeId>>,
    nodes: Vec<Node<F>>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    params: Vec<Option<Vec<F>>>,
    inputs: Vec<(NodeId, Vec<F>)>,
}

impl<F: Real> Gradients<F> {
    /// Zero-filled gradients for every parameter of `store`.
    pub fn zeros_like(store: &ParamStore<F>) -> Self {
        Gradients {
            params: store
                .iter()
                .map(|(_, p)| Some(vec![F::zero(); p.value.shape().len()]))
                .collect(),
            inputs: Vec::new(),
        }
    }

    /// Gradient for a parameter, or `None` when the parameter did not take
    /// part in the loss (or is frozen).
    pub fn param(&self, id: ParamId) -> Option<&[F]> {
        self.params.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn param_mut(&mut self, id: ParamId) -> Option<&mut Vec<F>> {
        self.params.get_mut(id.0).and_then(|g| g.as_mut())
    }

    /// Gradient with respect to an [`Tape::input`] node.
    pub fn input(&self, id: NodeId) -> Option<&[F]> {
        self.inputs
            .iter()
            .find(|(n, _)| *n == id)
            .map(|(_, g)| g.as_slice())
    }

    /// Adds `scale * other` into `self`, parameter by parameter.
    pub fn accumulate(&mut self, other: &Gradients<F>, scale: F) {
        if self.params.len() < other.params.len() {
            self.params.resize(other.params.len(), None);
        }
        for (mine, theirs) in self.params.iter_mut().zip(&other.params) {
            if let Some(theirs) = theirs {
                let mine = mine.get_or_insert_with(|| vec![F::zero(); theirs.len()]);
                kernels::axpy(mine, scale, theirs);
            }
        }
    }

    pub fn scale(&mut self, s: F) {
        for g in self.params.iter_mut().flatten() {
            for v in g.iter_mut() {
                *v = *v * s;
            }
        }
    }
}

impl<F: Real> Default for Tape<'_, F> {
    fn default() -> Self {
        Tape::new()
    }
}

impl<'p, F: Real> Tape<'p, F> {
    /// A tape with no parameter store; use [`Tape::input`] for leaves.
    pub fn new() -> Self {
        Tape {
            params: None,
            param_nodes: Vec::new(),
            nodes: Vec::new(),
        }
    }

    pub fn with_params(params: &'p ParamStore<F>) -> Self {
        Tape {
            params: Some(params),
            param_nodes: vec![None; params.len()],
            nodes: Vec::with_capacity(1024),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].shape
    }

    pub fn value(&self, id: NodeId) -> &[F] {
        match &self.nodes[id.0].value {
            Storage::Owned(v) => v,
            Storage::Param(p) => self
                .params
                .expect("param node implies a store")
                .value(*p)
                .data(),
        }
    }

    /// Copies a node's value out as a standalone tensor.
    pub fn tensor(&self, id: NodeId) -> Tensor<F> {
        Tensor::new(self.shape(id), self.value(id).to_vec()).expect("node shape is consistent")
    }

    /// First entry of a node, intended for scalars.
    pub fn scalar(&self, id: NodeId) -> F {
        self.value(id)[0]
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, shape: Shape, value: Vec<F>, op: Op<F>, requires_grad: bool) -> NodeId {
        debug_assert_eq!(shape.len(), value.len());
        self.nodes.push(Node {
            shape,
            value: Storage::Owned(value),
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push_checked(
        &mut self,
        name: &'static str,
        shape: Shape,
        value: Vec<F>,
        op: Op<F>,
        requires_grad: bool,
    ) -> Result<NodeId> {
        if value.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: name });
        }
        Ok(self.push(shape, value, op, requires_grad))
    }

    fn check_node(&self, id: NodeId) -> Result<()> {
        if id.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(TensorError::UnknownNode(id.0))
        }
    }

    /// Differentiable leaf; its gradient is reported by [`Gradients::input`].
    pub fn input(&mut self, t: Tensor<F>) -> NodeId {
        let shape = t.shape();
        self.push(shape, t.into_data(), Op::Input, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, t: Tensor<F>) -> NodeId {
        let shape = t.shape();
        self.push(shape, t.into_data(), Op::Constant, false)
    }

    pub fn zeros(&mut self, shape: Shape) -> NodeId {
        self.constant(Tensor::zeros(shape))
    }

    /// Leaf referencing a parameter of the attached store. Repeated calls
    /// return the same node so gradients accumulate in one place.
    pub fn param(&mut self, id: ParamId) -> Result<NodeId> {
        let store = self.params.ok_or(TensorError::NoParams)?;
        if let Some(Some(n)) = self.param_nodes.get(id.0) {
            return Ok(*n);
        }
        let p = store.get(id);
        self.nodes.push(Node {
            shape: p.value.shape(),
            value: Storage::Param(id),
            op: Op::Param(id),
            requires_grad: p.trainable,
        });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(n);
        Ok(n)
    }

    /// `x * w^T (+ b)` where `x` is a vector of length c or a matrix [n, c],
    /// `w` is [r, c] and `b` has length r. Vector input gives vector output.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if ws.rank() != 2 || xs.rank() == 0 || xs.cols() != ws.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                left: xs,
                right: ws,
            });
        }
        let (n, c, r) = (xs.rows(), xs.cols(), ws.rows());
        if let Some(b) = b {
            let bs = self.shape(b);
            if bs.len() != r || bs.rank() != 1 {
                return Err(TensorError::ShapeMismatch {
                    op: "linear(bias)",
                    left: ws,
                    right: bs,
                });
            }
        }
        let out = kernels::linear_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            n,
            c,
            r,
        );
        let shape = if xs.rank() == 1 {
            Shape::vector(r)
        } else {
            Shape::matrix(n, r)
        };
        let rg = self.requires(x) || self.requires(w) || b.is_some_and(|b| self.requires(b));
        self.push_checked("linear", shape, out, Op::Linear { x, w, b }, rg)
    }

    /// Matrix product `a[n, k] * b[k, m]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (as_, bs) = (self.shape(a), self.shape(b));
        if as_.rank() != 2 || bs.rank() != 2 || as_.cols() != bs.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: as_,
                right: bs,
            });
        }
        let (n, k, m) = (as_.rows(), as_.cols(), bs.cols());
        let out = kernels::matmul_forward(self.value(a), self.value(b), n, k, m);
        let rg = self.requires(a) || self.requires(b);
        self.push_checked("matmul", Shape::matrix(n, m), out, Op::MatMul(a, b), rg)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(F, F) -> F,
        op: Op<F>,
    ) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op: name,
                left: sa,
                right: sb,
            });
        }
        let out: Vec<F> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        let rg = self.requires(a) || self.requires(b);
        self.push_checked(name, sa, out, op, rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a vector to every row of a matrix (the one supported broadcast).
    pub fn add_row(&mut self, x: NodeId, row: NodeId) -> Result<NodeId> {
        let (sx, sr) = (self.shape(x), self.shape(row));
        if sr.rank() != 1 || sr.len() != sx.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                left: sx,
                right: sr,
            });
        }
        let c = sx.cols();
        let rv = self.value(row);
        let out: Vec<F> = self
            .value(x)
            .chunks_exact(c.max(1))
            .flat_map(|xr| xr.iter().zip(rv).map(|(a, b)| *a + *b))
            .collect();
        let rg = self.requires(x) || self.requires(row);
        self.push_checked("add_row", sx, out, Op::AddRow { x, row }, rg)
    }

    /// All pairwise row sums: row `i * n_b + j` of the result is
    /// `a[i] + b[j]`, for `a` [n_a, c] and `b` [n_b, c].
    pub fn pair_add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.rank() != 2 || sb.rank() != 2 || sa.cols() != sb.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "pair_add",
                left: sa,
                right: sb,
            });
        }
        let (na, nb, c) = (sa.rows(), sb.rows(), sa.cols());
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(na * nb * c);
        for ar in av.chunks_exact(c.max(1)).take(na) {
            for br in bv.chunks_exact(c.max(1)).take(nb) {
                out.extend(ar.iter().zip(br).map(|(x, y)| *x + *y));
            }
        }
        let rg = self.requires(a) || self.requires(b);
        self.push_checked("pair_add", Shape::matrix(na * nb, c), out, Op::PairAdd(a, b), rg)
    }

    /// Multiplies row `i` of `x` by `s[i]`. A vector counts as one row, so a
    /// length-1 `s` scales a whole vector.
    pub fn scale_rows(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let (sx, ss) = (self.shape(x), self.shape(s));
        if ss.len() != sx.rows() || ss.rank() == 2 {
            return Err(TensorError::ShapeMismatch {
                op: "scale_rows",
                left: sx,
                right: ss,
            });
        }
        let c = sx.cols();
        let sv = self.value(s);
        let out: Vec<F> = self
            .value(x)
            .chunks_exact(c.max(1))
            .zip(sv)
            .flat_map(|(xr, si)| xr.iter().map(move |a| *a * *si))
            .collect();
        let rg = self.requires(x) || self.requires(s);
        self.push_checked("scale_rows", sx, out, Op::ScaleRows { x, s }, rg)
    }

    pub fn scale(&mut self, x: NodeId, c: F) -> Result<NodeId> {
        let out = self.value(x).iter().map(|v| *v * c).collect();
        let rg = self.requires(x);
        self.push_checked("scale", self.shape(x), out, Op::Scale(x, c), rg)
    }

    /// `c - x` elementwise.
    pub fn rsub(&mut self, c: F, x: NodeId) -> Result<NodeId> {
        let out = self.value(x).iter().map(|v| c - *v).collect();
        let rg = self.requires(x);
        self.push_checked("rsub", self.shape(x), out, Op::RSub(x, c), rg)
    }

    pub fn one_minus(&mut self, x: NodeId) -> Result<NodeId> {
        self.rsub(F::one(), x)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.value(x).iter().map(|v| sigmoid(*v)).collect();
        let rg = self.requires(x);
        self.push_checked("sigmoid", self.shape(x), out, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.value(x).iter().map(|v| v.tanh()).collect();
        let rg = self.requires(x);
        self.push_checked("tanh", self.shape(x), out, Op::Tanh(x), rg)
    }

    /// Softmax over the last axis (each row of a matrix independently).
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x);
        if s.cols() == 0 {
            return Err(TensorError::Empty { op: "softmax" });
        }
        let mut out = self.value(x).to_vec();
        for row in out.chunks_exact_mut(s.cols()) {
            softmax_in_place(row);
        }
        let rg = self.requires(x);
        self.push_checked("softmax", s, out, Op::Softmax(x), rg)
    }

    pub fn ln(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.value(x).iter().map(|v| v.ln()).collect();
        let rg = self.requires(x);
        self.push_checked("log", self.shape(x), out, Op::Log(x), rg)
    }

    /// Mean over the rows of a matrix (axis 0); a vector is returned as is.
    pub fn mean_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x);
        if s.rows() == 0 {
            return Err(TensorError::Empty { op: "mean_rows" });
        }
        let c = s.cols();
        let mut out = vec![F::zero(); c];
        for row in self.value(x).chunks_exact(c.max(1)) {
            for (o, v) in out.iter_mut().zip(row) {
                *o = *o + *v;
            }
        }
        let inv = F::one() / F::from_usize(s.rows()).unwrap();
        out.iter_mut().for_each(|v| *v = *v * inv);
        let rg = self.requires(x);
        self.push_checked("mean_rows", Shape::vector(c), out, Op::MeanRows(x), rg)
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let total = self.value(x).iter().fold(F::zero(), |a, b| a + *b);
        let rg = self.requires(x);
        self.push_checked("sum", Shape::scalar(), vec![total], Op::Sum(x), rg)
    }

    /// Concatenates vectors (or scalars) end to end.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(TensorError::Empty { op: "concat" });
        }
        let mut out = Vec::new();
        for &p in parts {
            self.check_node(p)?;
            let s = self.shape(p);
            if s.rank() == 2 {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    left: self.shape(parts[0]),
                    right: s,
                });
            }
            out.extend_from_slice(self.value(p));
        }
        let rg = parts.iter().any(|p| self.requires(*p));
        let n = out.len();
        self.push_checked("concat", Shape::vector(n), out, Op::Concat(parts.to_vec()), rg)
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        let first = *rows.first().ok_or(TensorError::Empty { op: "stack_rows" })?;
        let c = self.shape(first).len();
        let mut out = Vec::with_capacity(c * rows.len());
        for &r in rows {
            self.check_node(r)?;
            let s = self.shape(r);
            if s.rank() == 2 || s.len() != c {
                return Err(TensorError::ShapeMismatch {
                    op: "stack_rows",
                    left: self.shape(first),
                    right: s,
                });
            }
            out.extend_from_slice(self.value(r));
        }
        let rg = rows.iter().any(|r| self.requires(*r));
        self.push_checked(
            "stack_rows",
            Shape::matrix(rows.len(), c),
            out,
            Op::StackRows(rows.to_vec()),
            rg,
        )
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, x: NodeId, i: usize) -> Result<NodeId> {
        let s = self.shape(x);
        if i >= s.rows() {
            return Err(TensorError::OutOfRange {
                op: "row",
                index: i,
                extent: s.rows(),
            });
        }
        let c = s.cols();
        let out = self.value(x)[i * c..(i + 1) * c].to_vec();
        let rg = self.requires(x);
        Ok(self.push(Shape::vector(c), out, Op::Row(x, i), rg))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Shape) -> Result<NodeId> {
        let s = self.shape(x);
        if s.len() != shape.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                left: s,
                right: shape,
            });
        }
        let out = self.value(x).to_vec();
        let rg = self.requires(x);
        Ok(self.push(shape, out, Op::Reshape(x), rg))
    }

    /// Selects rows of a matrix by index (embedding lookup).
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let s = self.shape(table);
        if s.rank() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "gather",
                left: s,
                right: Shape::vector(ids.len()),
            });
        }
        let c = s.cols();
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            if i >= s.rows() {
                return Err(TensorError::OutOfRange {
                    op: "gather",
                    index: i,
                    extent: s.rows(),
                });
            }
            out.extend_from_slice(&tv[i * c..(i + 1) * c]);
        }
        let rg = self.requires(table);
        Ok(self.push(
            Shape::matrix(ids.len(), c),
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// `-sum(target * ln(max(p, 1e-12)))` over every entry.
    pub fn cross_entropy(&mut self, p: NodeId, target: &[F]) -> Result<NodeId> {
        let s = self.shape(p);
        if target.len() != s.len() {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                left: s,
                right: Shape::vector(target.len()),
            });
        }
        let floor = F::from_f64c(PROB_FLOOR);
        let mut total = F::zero();
        for (pv, t) in self.value(p).iter().zip(target) {
            if *t != F::zero() {
                total = total - *t * pv.max(floor).ln();
            }
        }
        let rg = self.requires(p);
        self.push_checked(
            "cross_entropy",
            Shape::scalar(),
            vec![total],
            Op::CrossEntropy {
                p,
                target: target.to_vec(),
            },
            rg,
        )
    }

    /// `-sum(t ln p + (1 - t) ln(1 - p))` with both probabilities floored at 1e-12.
    pub fn binary_cross_entropy(&mut self, p: NodeId, target: &[F]) -> Result<NodeId> {
        let s = self.shape(p);
        if target.len() != s.len() {
            return Err(TensorError::ShapeMismatch {
                op: "binary_cross_entropy",
                left: s,
                right: Shape::vector(target.len()),
            });
        }
        let floor = F::from_f64c(PROB_FLOOR);
        let mut total = F::zero();
        for (pv, t) in self.value(p).iter().zip(target) {
            let q = F::one() - *pv;
            total = total - (*t * pv.max(floor).ln() + (F::one() - *t) * q.max(floor).ln());
        }
        let rg = self.requires(p);
        self.push_checked(
            "binary_cross_entropy",
            Shape::scalar(),
            vec![total],
            Op::BinaryCrossEntropy {
                p,
                target: target.to_vec(),
            },
            rg,
        )
    }

    /// Reverse pass from a scalar loss. Consumes the tape.
    pub fn backward(self, loss: NodeId) -> Result<Gradients<F>> {
        self.check_node(loss)?;
        let ls = self.shape(loss);
        if ls.len() != 1 {
            return Err(TensorError::NonScalarLoss(ls));
        }
        let n_params = self.params.map_or(0, ParamStore::len);
        let mut grads = Gradients {
            params: vec![None; n_params],
            inputs: Vec::new(),
        };
        let mut adj: Vec<Option<Vec<F>>> = Vec::with_capacity(loss.0 + 1);
        adj.resize_with(loss.0 + 1, || None);
        adj[loss.0] = Some(vec![F::one()]);

        for id in (0..=loss.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            self.propagate(NodeId(id), &g, &mut adj, &mut grads);
        }
        Ok(grads)
    }

    fn propagate(
        &self,
        id: NodeId,
        g: &[F],
        adj: &mut [Option<Vec<F>>],
        grads: &mut Gradients<F>,
    ) {
        let node = &self.nodes[id.0];
        let out = self.value(id);
        match &node.op {
            Op::Constant => {}
            Op::Input => grads.inputs.push((id, g.to_vec())),
            Op::Param(p) => grads.params[p.0] = Some(g.to_vec()),
            Op::Linear { x, w, b } => {
                let (xs, ws) = (self.shape(*x), self.shape(*w));
                let (n, c, r) = (xs.rows(), xs.cols(), ws.rows());
                let (xv, wv) = (self.value(*x), self.value(*w));
                let mut dx = self.requires(*x).then(|| take_or_zero(adj, *x, xs.len()));
                let mut dw = self.requires(*w).then(|| take_or_zero(adj, *w, ws.len()));
                kernels::linear_backward(
                    g,
                    xv,
                    wv,
                    n,
                    c,
                    r,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                );
                if let Some(dx) = dx {
                    adj[x.0] = Some(dx);
                }
                if let Some(dw) = dw {
                    adj[w.0] = Some(dw);
                }
                if let Some(b) = b {
                    if self.requires(*b) {
                        let db = slot(adj, *b, r);
                        for row in g.chunks_exact(r) {
                            for (d, v) in db.iter_mut().zip(row) {
                                *d = *d + *v;
                            }
                        }
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (as_, bs) = (self.shape(*a), self.shape(*b));
                let (n, k, m) = (as_.rows(), as_.cols(), bs.cols());
                let mut da = self.requires(*a).then(|| take_or_zero(adj, *a, as_.len()));
                let mut db = self.requires(*b).then(|| take_or_zero(adj, *b, bs.len()));
                kernels::matmul_backward(
                    g,
                    self.value(*a),
                    self.value(*b),
                    n,
                    k,
                    m,
                    da.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(da) = da {
                    adj[a.0] = Some(da);
                }
                if let Some(db) = db {
                    adj[b.0] = Some(db);
                }
            }
            Op::Add(a, b) => {
                self.acc(adj, *a, g, |gi, _| gi);
                self.acc(adj, *b, g, |gi, _| gi);
            }
            Op::Sub(a, b) => {
                self.acc(adj, *a, g, |gi, _| gi);
                self.acc(adj, *b, g, |gi, _| -gi);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.acc(adj, *a, g, |gi, i| gi * bv[i]);
                self.acc(adj, *b, g, |gi, i| gi * av[i]);
            }
            Op::AddRow { x, row } => {
                self.acc(adj, *x, g, |gi, _| gi);
                if self.requires(*row) {
                    let c = self.shape(*row).len();
                    let d = slot(adj, *row, c);
                    for gr in g.chunks_exact(c.max(1)) {
                        for (di, gi) in d.iter_mut().zip(gr) {
                            *di = *di + *gi;
                        }
                    }
                }
            }
            Op::PairAdd(a, b) => {
                let (nb, c) = (self.shape(*b).rows(), self.shape(*b).cols());
                let na = self.shape(*a).rows();
                if self.requires(*a) {
                    let d = slot(adj, *a, na * c);
                    for i in 0..na {
                        for j in 0..nb {
                            let gr = &g[(i * nb + j) * c..(i * nb + j + 1) * c];
                            kernels::axpy(&mut d[i * c..(i + 1) * c], F::one(), gr);
                        }
                    }
                }
                if self.requires(*b) {
                    let d = slot(adj, *b, nb * c);
                    for i in 0..na {
                        for j in 0..nb {
                            let gr = &g[(i * nb + j) * c..(i * nb + j + 1) * c];
                            kernels::axpy(&mut d[j * c..(j + 1) * c], F::one(), gr);
                        }
                    }
                }
            }
            Op::ScaleRows { x, s } => {
                let c = self.shape(*x).cols().max(1);
                let (xv, sv) = (self.value(*x), self.value(*s));
                self.acc(adj, *x, g, |gi, i| gi * sv[i / c]);
                if self.requires(*s) {
                    let d = slot(adj, *s, sv.len());
                    for (r, (gr, xr)) in g.chunks_exact(c).zip(xv.chunks_exact(c)).enumerate() {
                        d[r] = d[r] + kernels::dot(gr, xr);
                    }
                }
            }
            Op::Scale(x, c) => self.acc(adj, *x, g, |gi, _| gi * *c),
            Op::RSub(x, _) => self.acc(adj, *x, g, |gi, _| -gi),
            Op::Sigmoid(x) => self.acc(adj, *x, g, |gi, i| gi * out[i] * (F::one() - out[i])),
            Op::Tanh(x) => self.acc(adj, *x, g, |gi, i| gi * (F::one() - out[i] * out[i])),
            Op::Softmax(x) => {
                if self.requires(*x) {
                    let c = node.shape.cols();
                    let d = slot(adj, *x, out.len());
                    for ((dr, gr), yr) in d
                        .chunks_exact_mut(c)
                        .zip(g.chunks_exact(c))
                        .zip(out.chunks_exact(c))
                    {
                        let inner = kernels::dot(gr, yr);
                        for k in 0..c {
                            dr[k] = dr[k] + yr[k] * (gr[k] - inner);
                        }
                    }
                }
            }
            Op::Log(x) => {
                let xv = self.value(*x);
                self.acc(adj, *x, g, |gi, i| gi / xv[i]);
            }
            Op::MeanRows(x) => {
                let s = self.shape(*x);
                let c = s.cols();
                let inv = F::one() / F::from_usize(s.rows()).unwrap();
                self.acc_each(adj, *x, |i| g[i % c] * inv);
            }
            Op::Sum(x) => self.acc_each(adj, *x, |_| g[0]),
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.shape(*p).len();
                    let seg = &g[off..off + n];
                    self.acc(adj, *p, seg, |gi, _| gi);
                    off += n;
                }
            }
            Op::StackRows(rows) => {
                let c = node.shape.cols();
                for (r, p) in rows.iter().enumerate() {
                    self.acc(adj, *p, &g[r * c..(r + 1) * c], |gi, _| gi);
                }
            }
            Op::Row(x, i) => {
                if self.requires(*x) {
                    let s = self.shape(*x);
                    let c = s.cols();
                    let d = slot(adj, *x, s.len());
                    for (di, gi) in d[i * c..(i + 1) * c].iter_mut().zip(g) {
                        *di = *di + *gi;
                    }
                }
            }
            Op::Reshape(x) => self.acc(adj, *x, g, |gi, _| gi),
            Op::Gather { table, ids } => {
                if self.requires(*table) {
                    let s = self.shape(*table);
                    let c = s.cols();
                    let d = slot(adj, *table, s.len());
                    for (r, &i) in ids.iter().enumerate() {
                        kernels::axpy(&mut d[i * c..(i + 1) * c], F::one(), &g[r * c..(r + 1) * c]);
                    }
                }
            }
            Op::CrossEntropy { p, target } => {
                let pv = self.value(*p);
                let floor = F::from_f64c(PROB_FLOOR);
                self.acc(adj, *p, target, |t, i| {
                    if t == F::zero() || pv[i] < floor {
                        F::zero()
                    } else {
                        -g[0] * t / pv[i]
                    }
                });
            }
            Op::BinaryCrossEntropy { p, target } => {
                let pv = self.value(*p);
                let floor = F::from_f64c(PROB_FLOOR);
                self.acc(adj, *p, target, |t, i| {
                    let pi = pv[i];
                    let q = F::one() - pi;
                    let pos = if pi < floor { F::zero() } else { t / pi };
                    let neg = if q < floor { F::zero() } else { (F::one() - t) / q };
                    -g[0] * (pos - neg)
                });
            }
        }
    }

    /// `adj[x] += f(g[i], i)` when `x` requires a gradient.
    fn acc(&self, adj: &mut [Option<Vec<F>>], x: NodeId, g: &[F], f: impl Fn(F, usize) -> F) {
        if !self.requires(x) {
            return;
        }
        let d = slot(adj, x, g.len());
        for (i, (di, gi)) in d.iter_mut().zip(g).enumerate() {
            *di = *di + f(*gi, i);
        }
    }

    /// Adds `f(i)` to every entry of the adjoint of `x`, for ops whose
    /// output is smaller than their input.
    fn acc_each(&self, adj: &mut [Option<Vec<F>>], x: NodeId, f: impl Fn(usize) -> F) {
        if !self.requires(x) {
            return;
        }
        let d = slot(adj, x, self.shape(x).len());
        for (i, di) in d.iter_mut().enumerate() {
            *di = *di + f(i);
        }
    }
}

fn slot<F: Real>(adj: &mut [Option<Vec<F>>], id: NodeId, len: usize) -> &mut Vec<F> {
    adj[id.0].get_or_insert_with(|| vec![F::zero(); len])
}

fn take_or_zero<F: Real>(adj: &mut [Option<Vec<F>>], id: NodeId, len: usize) -> Vec<F> {
    adj[id.0].take().unwrap_or_else(|| vec![F::zero(); len])
}

/// Logistic function, kept strictly inside (0, 1) even where the exact value
/// rounds to an endpoint.
pub(crate) fn sigmoid<F: Real>(v: F) -> F {
    let y = if v >= F::zero() {
        F::one() / (F::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (F::one() + e)
    };
    y.max(F::min_positive_value()).min(F::one() - F::epsilon())
}

pub(crate) fn softmax_in_place<F: Real>(row: &mut [F]) {
    let max = row.iter().fold(F::neg_infinity(), |a, b| a.max(*b));
    let mut total = F::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}
