use std::cell::{Ref, RefCell};

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Broadcast(usize),
    Scale(usize, f64),
    AddScalar(usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Ln(usize),
    Exp(usize),
    SoftmaxRows(usize),
    Sum(usize),
    ConcatCols(Vec<usize>),
    SliceCols(usize, usize),
    SoftmaxCrossEntropy {
        input: usize,
        targets: Vec<usize>,
        probs: Matrix,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Records primitive applications in evaluation order for a single
/// reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf that receives a gradient.
    pub fn param(&self, value: Matrix) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Matrix) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Array2::from_elem((1, 1), value))
    }

    fn push(&self, value: Matrix, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn unary(&self, a: usize, value: Matrix, op: Op) -> Var<'_> {
        let rg = self.needs(&[a]);
        self.push(value, op, rg)
    }

    fn binary(&self, a: usize, b: usize, value: Matrix, op: Op) -> Var<'_> {
        let rg = self.needs(&[a, b]);
        self.push(value, op, rg)
    }

    /// Reverse sweep from a scalar `loss`. Gradients of every recorded node
    /// are accumulated additively; nodes that do not reach `loss` hold none.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        assert!(
            std::ptr::eq(self, loss.tape),
            "loss recorded on another tape"
        );
        let nodes = self.nodes.borrow();
        let shape = nodes[loss.id].value.dim();
        if shape != (1, 1) {
            return Err(Error::argument(format!(
                "backward needs a scalar loss, got shape {shape:?}"
            )));
        }
        let mut grads: Vec<Option<Matrix>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Array2::ones((1, 1)));

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                grads[id] = Some(g);
                continue;
            }
            let val = |i: usize| &nodes[i].value;
            let mut acc = |i: usize, delta: Matrix| {
                if !nodes[i].requires_grad {
                    return;
                }
                match &mut grads[i] {
                    Some(existing) => *existing += &delta,
                    slot => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if nodes[*a].requires_grad {
                        acc(*a, gemm(g.view(), val(*b).t()));
                    }
                    if nodes[*b].requires_grad {
                        acc(*b, gemm(val(*a).t(), g.view()));
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, -&g);
                }
                Op::Mul(a, b) => {
                    if nodes[*a].requires_grad {
                        acc(*a, &g * val(*b));
                    }
                    if nodes[*b].requires_grad {
                        acc(*b, &g * val(*a));
                    }
                }
                Op::AddRow(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                Op::Broadcast(a) => acc(*a, Array2::from_elem((1, 1), g.sum())),
                Op::Scale(a, s) => acc(*a, &g * *s),
                Op::AddScalar(a) => acc(*a, g.clone()),
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    acc(
                        *a,
                        Zip::from(&g).and(y).map_collect(|&g, &y| g * y * (1.0 - y)),
                    );
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    acc(
                        *a,
                        Zip::from(&g).and(y).map_collect(|&g, &y| g * (1.0 - y * y)),
                    );
                }
                Op::Relu(a) => {
                    acc(
                        *a,
                        Zip::from(&g)
                            .and(val(*a))
                            .map_collect(|&g, &x| if x > 0.0 { g } else { 0.0 }),
                    );
                }
                Op::Ln(a) => acc(*a, &g / val(*a)),
                Op::Exp(a) => acc(*a, &g * &node.value),
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut d = &g * y;
                    for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                        let dot: f64 = drow.sum();
                        Zip::from(&mut drow)
                            .and(&yrow)
                            .for_each(|d, &y| *d -= y * dot);
                    }
                    acc(*a, d);
                }
                Op::Sum(a) => acc(*a, Array2::from_elem(val(*a).dim(), g[[0, 0]])),
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = val(p).ncols();
                        acc(p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let mut d = Array2::zeros(val(*a).dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(*a, d);
                }
                Op::SoftmaxCrossEntropy {
                    input,
                    targets,
                    probs,
                } => {
                    let mut d = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        d[[r, t]] -= 1.0;
                    }
                    acc(*input, d * g[[0, 0]]);
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of a scalar with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` when `v` does not reach the
    /// loss or does not require a gradient.
    pub fn get(&self, v: Var<'_>) -> Option<&Matrix> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    /// Gradient with respect to `v`, zero-filled when absent.
    pub fn wrt(&self, v: Var<'_>) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Array2::zeros(v.shape()))
    }
}

fn check_same(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::Shape {
            op,
            left: a,
            right: b,
        })
    }
}

fn stable_softmax_rows(x: &Matrix) -> Matrix {
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    y
}

#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.id].value.dim()
    }

    pub fn value(&self) -> Matrix {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    /// Borrow of the recorded value; release it before recording new ops.
    pub fn value_ref(&self) -> Ref<'t, Matrix> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    /// The single entry of a 1×1 value.
    pub fn item(&self) -> f64 {
        let v = self.value_ref();
        debug_assert_eq!(v.dim(), (1, 1));
        v[[0, 0]]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn check_tape(&self, other: &Var<'t>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars from different tapes"
        );
    }

    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.check_tape(&rhs);
        let value = {
            let a = self.value_ref();
            let b = rhs.value_ref();
            if a.ncols() != b.nrows() {
                return Err(Error::Shape {
                    op: "matmul",
                    left: a.dim(),
                    right: b.dim(),
                });
            }
            gemm(a.view(), b.view())
        };
        Ok(self
            .tape
            .binary(self.id, rhs.id, value, Op::MatMul(self.id, rhs.id)))
    }

    fn elementwise(
        self,
        rhs: Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var<'t>> {
        self.check_tape(&rhs);
        let value = {
            let a = self.value_ref();
            let b = rhs.value_ref();
            check_same(name, a.dim(), b.dim())?;
            Zip::from(&*a).and(&*b).map_collect(|&x, &y| f(x, y))
        };
        Ok(self.tape.binary(self.id, rhs.id, value, op))
    }

    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(rhs, "add", |a, b| a + b, Op::Add(self.id, rhs.id))
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(rhs, "sub", |a, b| a - b, Op::Sub(self.id, rhs.id))
    }

    /// Elementwise product.
    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(rhs, "mul", |a, b| a * b, Op::Mul(self.id, rhs.id))
    }

    /// Adds the 1×m row `bias` to every row of `self`.
    pub fn add_row(self, bias: Var<'t>) -> Result<Var<'t>> {
        self.check_tape(&bias);
        let value = {
            let a = self.value_ref();
            let b = bias.value_ref();
            if b.nrows() != 1 || b.ncols() != a.ncols() {
                return Err(Error::Shape {
                    op: "add_row",
                    left: a.dim(),
                    right: b.dim(),
                });
            }
            &*a + &*b
        };
        Ok(self
            .tape
            .binary(self.id, bias.id, value, Op::AddRow(self.id, bias.id)))
    }

    /// Fills a rows×cols matrix with the value of a 1×1 var.
    pub fn broadcast(self, rows: usize, cols: usize) -> Result<Var<'t>> {
        let shape = self.shape();
        check_same("broadcast", shape, (1, 1))?;
        let value = Array2::from_elem((rows, cols), self.item());
        Ok(self.tape.unary(self.id, value, Op::Broadcast(self.id)))
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        let value = &*self.value_ref() * s;
        self.tape.unary(self.id, value, Op::Scale(self.id, s))
    }

    pub fn add_scalar(self, s: f64) -> Var<'t> {
        let value = &*self.value_ref() + s;
        self.tape.unary(self.id, value, Op::AddScalar(self.id))
    }

    fn map(self, f: impl Fn(f64) -> f64, op: Op) -> Var<'t> {
        let value = self.value_ref().mapv(f);
        self.tape.unary(self.id, value, op)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.map(|x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(self.id))
    }

    pub fn tanh(self) -> Var<'t> {
        self.map(f64::tanh, Op::Tanh(self.id))
    }

    pub fn relu(self) -> Var<'t> {
        self.map(|x| x.max(0.0), Op::Relu(self.id))
    }

    pub fn ln(self) -> Var<'t> {
        self.map(f64::ln, Op::Ln(self.id))
    }

    pub fn exp(self) -> Var<'t> {
        self.map(f64::exp, Op::Exp(self.id))
    }

    /// Row-wise softmax with the row maximum subtracted first.
    pub fn softmax_rows(self) -> Var<'t> {
        let value = stable_softmax_rows(&self.value_ref());
        self.tape.unary(self.id, value, Op::SoftmaxRows(self.id))
    }

    /// Sum of all entries as a 1×1 var.
    pub fn sum(self) -> Var<'t> {
        let value = Array2::from_elem((1, 1), self.value_ref().sum());
        self.tape.unary(self.id, value, Op::Sum(self.id))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(self, start: usize, len: usize) -> Result<Var<'t>> {
        let value = {
            let a = self.value_ref();
            if start + len > a.ncols() {
                return Err(Error::Shape {
                    op: "slice_cols",
                    left: a.dim(),
                    right: (start, len),
                });
            }
            a.slice(s![.., start..start + len]).to_owned()
        };
        Ok(self
            .tape
            .unary(self.id, value, Op::SliceCols(self.id, start)))
    }

    /// Sum over rows of the fused softmax / cross-entropy
    /// `-ln softmax(self)[r, targets[r]]`.
    pub fn softmax_cross_entropy(self, targets: &[usize]) -> Result<Var<'t>> {
        let (probs, loss) = {
            let z = self.value_ref();
            if targets.len() != z.nrows() || targets.iter().any(|&t| t >= z.ncols()) {
                return Err(Error::Shape {
                    op: "softmax_cross_entropy",
                    left: z.dim(),
                    right: (
                        targets.len(),
                        targets.iter().copied().max().unwrap_or(0) + 1,
                    ),
                });
            }
            let mut loss = 0.0;
            for (row, &t) in z.rows().into_iter().zip(targets) {
                let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
                loss += lse - row[t];
            }
            (stable_softmax_rows(&z), loss)
        };
        let op = Op::SoftmaxCrossEntropy {
            input: self.id,
            targets: targets.to_vec(),
            probs,
        };
        Ok(self
            .tape
            .unary(self.id, Array2::from_elem((1, 1), loss), op))
    }
}

/// Concatenates vars with equal row counts side by side.
pub fn concat_cols<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::argument("concat_cols of nothing"))?;
    let tape = first.tape;
    let value = {
        let views: Vec<Ref<'_, Matrix>> = parts.iter().map(|p| p.value_ref()).collect();
        let rows = views[0].nrows();
        for v in &views {
            check_same("concat_cols", (rows, 0), (v.nrows(), 0))?;
        }
        let owned: Vec<_> = views.iter().map(|v| v.view()).collect();
        ndarray::concatenate(Axis(1), &owned).expect("row counts checked")
    };
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    let rg = tape.needs(&ids);
    Ok(tape.push(value, Op::ConcatCols(ids), rg))
}

/// Matrix product. Thin operands skip the packed kernel, whose setup cost
/// dominates for row vectors and outer products.
fn gemm(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Matrix {
    let (m, k) = a.dim();
    let n = b.ncols();
    if m > 8 && k > 8 {
        return a.dot(&b);
    }
    let mut out = Array2::zeros((m, n));
    let os = out.as_slice_mut().expect("fresh array is contiguous");
    if let Some(bs) = b.as_slice() {
        for (i, orow) in os.chunks_exact_mut(n.max(1)).enumerate().take(m) {
            for (kk, brow) in bs.chunks_exact(n.max(1)).enumerate().take(k) {
                let x = a[[i, kk]];
                for (o, &y) in orow.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
    } else if let Some(bt) = b.t().as_slice() {
        let mut arow = vec![0.0; k];
        for i in 0..m {
            for (dst, &x) in arow.iter_mut().zip(a.row(i)) {
                *dst = x;
            }
            for j in 0..n {
                let col = &bt[j * k..(j + 1) * k];
                os[i * n + j] = arow.iter().zip(col).map(|(x, y)| x * y).sum();
            }
        }
    } else {
        return a.dot(&b);
    }
    out
}
