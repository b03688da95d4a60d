use std::cell::{Ref, RefCell};
use std::collections::HashMap;
use std::fmt;

use super::kernels::{col2im, gelu_grad, gemm, im2col, ConvGeom, Strides};
use super::Tensor;
use crate::error::{Error, Result};
use crate::losses::ctc::ctc_grad;
use crate::params::{ParamGrads, ParamId, ParamStore};

/// Recorded operation with the inputs (node indices) and saved state its
/// backward rule needs.
pub(crate) enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRowBias(usize, usize),
    Scale(usize, f64),
    Transpose(usize),
    Reshape(usize),
    SliceCols {
        x: usize,
        start: usize,
    },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    GatherRows {
        x: usize,
        idx: Vec<usize>,
    },
    ReplaceRows {
        x: usize,
        fill: usize,
        idx: Vec<usize>,
    },
    Conv1d {
        x: usize,
        w: usize,
        b: Option<usize>,
        geo: ConvGeom,
    },
    Softmax {
        x: usize,
        axis: usize,
    },
    LogSoftmax {
        x: usize,
        axis: usize,
    },
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(usize),
    Dropout {
        x: usize,
        mask: Vec<f64>,
    },
    CosineRows {
        a: usize,
        b: usize,
        eps: f64,
    },
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Sum(usize),
    Mean(usize),
    Ctc {
        logprobs: usize,
        target: Vec<usize>,
        blank: usize,
    },
}

pub(crate) struct Node {
    pub value: Tensor,
    pub op: Op,
    pub requires_grad: bool,
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
    params: HashMap<ParamId, usize>,
    consumed: bool,
}

/// Define-by-run record of executed operations.
#[derive(Default)]
pub struct Graph {
    inner: RefCell<Inner>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    pub(crate) graph: &'g Graph,
    pub(crate) id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable input whose gradient can be read back with
    /// [`Gradients::wrt`].
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Registers a model parameter. Asking for the same parameter twice returns
    /// the same node so gradients accumulate in one place.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        if let Some(&node) = self.inner.borrow().params.get(&id) {
            return Var {
                graph: self,
                id: node,
            };
        }
        let v = self.push(store.get(id).clone(), Op::Leaf, true);
        self.inner.borrow_mut().params.insert(id, v.id);
        v
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Clears the record so the graph can be reused for a new forward pass.
    pub fn reset(&self) {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.clear();
        inner.params.clear();
        inner.consumed = false;
    }

    pub(crate) fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        assert!(
            !inner.consumed,
            "recording on a consumed graph; call reset() first"
        );
        debug_assert!(
            value.data().iter().all(|v| !v.is_nan()),
            "NaN produced by a graph op"
        );
        inner.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: inner.nodes.len() - 1,
        }
    }

    pub(crate) fn value(&self, id: usize) -> Ref<'_, Tensor> {
        Ref::map(self.inner.borrow(), |i| &i.nodes[id].value)
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.inner.borrow().nodes[id].requires_grad
    }

    /// Reverse-mode sweep from a scalar `loss`. Frees the recorded nodes; the
    /// graph must be [`reset`](Self::reset) before recording again.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(Error::GraphConsumed);
        }
        let loss_shape = inner.nodes[loss.id].value.shape().to_vec();
        if inner.nodes[loss.id].value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {loss_shape:?}"
            )));
        }
        let nodes = &inner.nodes;
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(&loss_shape, 1.0));

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            for (input, contrib) in backward_op(node, &g, nodes)? {
                if !nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&contrib)?,
                    slot => *slot = Some(contrib),
                }
            }
        }

        let params = inner.params.iter().map(|(p, n)| (*p, *n)).collect();
        inner.nodes.clear();
        inner.params.clear();
        inner.consumed = true;
        Ok(Gradients { grads, params })
    }
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient of the loss wrt a leaf recorded with [`Graph::leaf`] or
    /// [`Graph::param`]. `None` when the leaf does not influence the loss.
    pub fn wrt(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    /// Dense per-parameter gradients aligned with `store`; parameters the loss
    /// does not reach get zeros.
    pub fn into_param_grads(mut self, store: &ParamStore) -> ParamGrads {
        let mut out = ParamGrads::zeros_like(store);
        for (pid, node) in &self.params {
            if let Some(g) = self.grads[*node].take() {
                out.set(*pid, g);
            }
        }
        out
    }
}

fn shape_of(nodes: &[Node], id: usize) -> &[usize] {
    nodes[id].value.shape()
}

fn zeros_for(nodes: &[Node], id: usize) -> Tensor {
    Tensor::zeros(shape_of(nodes, id))
}

/// Splits a shape around `axis` into (outer, n, inner).
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn backward_op(node: &Node, g: &Tensor, nodes: &[Node]) -> Result<Vec<(usize, Tensor)>> {
    let val = |id: usize| &nodes[id].value;
    let out = match &node.op {
        Op::Leaf => Vec::new(),
        Op::MatMul(a, b) => {
            let (m, k) = val(*a).dims2()?;
            let (_, n) = val(*b).dims2()?;
            let mut da = Tensor::zeros(&[m, k]);
            let mut db = Tensor::zeros(&[k, n]);
            // dA = dC · Bᵀ
            gemm(
                m,
                n,
                k,
                1.0,
                g.data(),
                Strides::row_major(n),
                val(*b).data(),
                Strides::transposed(n),
                0.0,
                da.data_mut(),
                Strides::row_major(k),
            );
            // dB = Aᵀ · dC
            gemm(
                k,
                m,
                n,
                1.0,
                val(*a).data(),
                Strides::transposed(k),
                g.data(),
                Strides::row_major(n),
                0.0,
                db.data_mut(),
                Strides::row_major(n),
            );
            vec![(*a, da), (*b, db)]
        }
        Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
        Op::Sub(a, b) => {
            let mut neg = g.clone();
            neg.scale_in_place(-1.0);
            vec![(*a, g.clone()), (*b, neg)]
        }
        Op::Mul(a, b) => {
            let da = zip_map(g, val(*b), |x, y| x * y);
            let db = zip_map(g, val(*a), |x, y| x * y);
            vec![(*a, da), (*b, db)]
        }
        Op::AddRowBias(x, b) => {
            let cols = val(*b).numel();
            let mut db = vec![0.0; cols];
            for row in g.data().chunks(cols) {
                for (acc, v) in db.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            vec![(*x, g.clone()), (*b, Tensor::new(val(*b).shape().to_vec(), db)?)]
        }
        Op::Scale(x, c) => {
            let mut d = g.clone();
            d.scale_in_place(*c);
            vec![(*x, d)]
        }
        Op::Transpose(x) => vec![(*x, g.transpose2()?)],
        Op::Reshape(x) => vec![(*x, g.clone().reshape(shape_of(nodes, *x))?)],
        Op::SliceCols { x, start } => {
            let (r, c) = val(*x).dims2()?;
            let w = g.shape()[1];
            let mut dx = Tensor::zeros(&[r, c]);
            for i in 0..r {
                dx.data_mut()[i * c + start..i * c + start + w].copy_from_slice(g.row(i));
            }
            vec![(*x, dx)]
        }
        Op::ConcatCols(parts) => {
            let total = g.shape()[1];
            let mut off = 0;
            let mut res = Vec::with_capacity(parts.len());
            for &p in parts {
                let (r, c) = val(p).dims2()?;
                let mut d = Vec::with_capacity(r * c);
                for i in 0..r {
                    d.extend_from_slice(&g.data()[i * total + off..i * total + off + c]);
                }
                off += c;
                res.push((p, Tensor::new(vec![r, c], d)?));
            }
            res
        }
        Op::ConcatRows(parts) => {
            let mut off = 0;
            let mut res = Vec::with_capacity(parts.len());
            for &p in parts {
                let n = val(p).numel();
                res.push((
                    p,
                    Tensor::new(val(p).shape().to_vec(), g.data()[off..off + n].to_vec())?,
                ));
                off += n;
            }
            res
        }
        Op::GatherRows { x, idx } => {
            let (_, c) = val(*x).dims2()?;
            let mut dx = zeros_for(nodes, *x);
            for (k, &i) in idx.iter().enumerate() {
                let src = g.row(k);
                for (d, s) in dx.data_mut()[i * c..(i + 1) * c].iter_mut().zip(src) {
                    *d += s;
                }
            }
            vec![(*x, dx)]
        }
        Op::ReplaceRows { x, fill, idx } => {
            let (_, c) = val(*x).dims2()?;
            let mut dx = g.clone();
            let mut dfill = vec![0.0; c];
            for &i in idx {
                let row = &mut dx.data_mut()[i * c..(i + 1) * c];
                for (acc, v) in dfill.iter_mut().zip(row.iter_mut()) {
                    *acc += *v;
                    *v = 0.0;
                }
            }
            vec![
                (*x, dx),
                (*fill, Tensor::new(val(*fill).shape().to_vec(), dfill)?),
            ]
        }
        Op::Conv1d { x, w, b, geo } => {
            let mut dx = zeros_for(nodes, *x);
            let mut dw = zeros_for(nodes, *w);
            let rows = geo.col_rows();
            let mut cols = vec![0.0; rows * geo.t_out];
            let mut dcols = vec![0.0; rows * geo.t_out];
            let cout_g = geo.cout_g();
            for grp in 0..geo.groups {
                im2col(val(*x).data(), geo, grp, &mut cols);
                let dy = &g.data()[grp * cout_g * geo.t_out..(grp + 1) * cout_g * geo.t_out];
                let wg = &val(*w).data()[grp * cout_g * rows..(grp + 1) * cout_g * rows];
                // dW_g = dY_g · colsᵀ
                gemm(
                    cout_g,
                    geo.t_out,
                    rows,
                    1.0,
                    dy,
                    Strides::row_major(geo.t_out),
                    &cols,
                    Strides::transposed(geo.t_out),
                    0.0,
                    &mut dw.data_mut()[grp * cout_g * rows..(grp + 1) * cout_g * rows],
                    Strides::row_major(rows),
                );
                // dcols = W_gᵀ · dY_g
                gemm(
                    rows,
                    cout_g,
                    geo.t_out,
                    1.0,
                    wg,
                    Strides::transposed(rows),
                    dy,
                    Strides::row_major(geo.t_out),
                    0.0,
                    &mut dcols,
                    Strides::row_major(geo.t_out),
                );
                col2im(&dcols, geo, grp, dx.data_mut());
            }
            let mut res = vec![(*x, dx), (*w, dw)];
            if let Some(b) = b {
                let db: Vec<f64> = g.data().chunks(geo.t_out).map(|r| r.iter().sum()).collect();
                res.push((*b, Tensor::vector(db)));
            }
            res
        }
        Op::Softmax { x, axis } => {
            let y = &node.value;
            let (outer, n, inner) = axis_split(y.shape(), *axis);
            let mut dx = vec![0.0; y.numel()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| o * n * inner + j * inner + i;
                    let dot: f64 = (0..n).map(|j| g.data()[at(j)] * y.data()[at(j)]).sum();
                    for j in 0..n {
                        dx[at(j)] = y.data()[at(j)] * (g.data()[at(j)] - dot);
                    }
                }
            }
            vec![(*x, Tensor::new(y.shape().to_vec(), dx)?)]
        }
        Op::LogSoftmax { x, axis } => {
            let y = &node.value;
            let (outer, n, inner) = axis_split(y.shape(), *axis);
            let mut dx = vec![0.0; y.numel()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| o * n * inner + j * inner + i;
                    let total: f64 = (0..n).map(|j| g.data()[at(j)]).sum();
                    for j in 0..n {
                        dx[at(j)] = g.data()[at(j)] - y.data()[at(j)].exp() * total;
                    }
                }
            }
            vec![(*x, Tensor::new(y.shape().to_vec(), dx)?)]
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        } => {
            let d = val(*gamma).numel();
            let gam = val(*gamma).data();
            let mut dx = vec![0.0; xhat.len()];
            let mut dgamma = vec![0.0; d];
            let mut dbeta = vec![0.0; d];
            for (r, (gy, xh)) in g.data().chunks(d).zip(xhat.chunks(d)).enumerate() {
                let mut mean_dxh = 0.0;
                let mut mean_dxh_xh = 0.0;
                for j in 0..d {
                    let dxh = gy[j] * gam[j];
                    mean_dxh += dxh;
                    mean_dxh_xh += dxh * xh[j];
                    dgamma[j] += gy[j] * xh[j];
                    dbeta[j] += gy[j];
                }
                mean_dxh /= d as f64;
                mean_dxh_xh /= d as f64;
                for j in 0..d {
                    let dxh = gy[j] * gam[j];
                    dx[r * d + j] = rstd[r] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                }
            }
            vec![
                (*x, Tensor::new(val(*x).shape().to_vec(), dx)?),
                (*gamma, Tensor::new(val(*gamma).shape().to_vec(), dgamma)?),
                (*beta, Tensor::new(val(*beta).shape().to_vec(), dbeta)?),
            ]
        }
        Op::Gelu(x) => vec![(*x, zip_map(g, val(*x), |gy, xv| gy * gelu_grad(xv)))],
        Op::Dropout { x, mask } => {
            let d: Vec<f64> = g.data().iter().zip(mask).map(|(a, m)| a * m).collect();
            vec![(*x, Tensor::new(g.shape().to_vec(), d)?)]
        }
        Op::CosineRows { a, b, eps } => {
            let (n, d) = val(*a).dims2()?;
            let (av, bv) = (val(*a).data(), val(*b).data());
            let mut da = vec![0.0; n * d];
            let mut db = vec![0.0; n * d];
            for i in 0..n {
                let ar = &av[i * d..(i + 1) * d];
                let br = &bv[i * d..(i + 1) * d];
                let dot: f64 = ar.iter().zip(br).map(|(x, y)| x * y).sum();
                let na_raw = ar.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb_raw = br.iter().map(|x| x * x).sum::<f64>().sqrt();
                let na = na_raw.max(*eps);
                let nb = nb_raw.max(*eps);
                let cos = dot / (na * nb);
                let gi = g.data()[i];
                // ∂/∂a = b/(na nb) − cos · a/na² (second term only when the
                // norm is unclamped)
                let ka = if na_raw > *eps { cos / (na * na) } else { 0.0 };
                let kb = if nb_raw > *eps { cos / (nb * nb) } else { 0.0 };
                for j in 0..d {
                    da[i * d + j] = gi * (br[j] / (na * nb) - ka * ar[j]);
                    db[i * d + j] = gi * (ar[j] / (na * nb) - kb * br[j]);
                }
            }
            vec![
                (*a, Tensor::new(vec![n, d], da)?),
                (*b, Tensor::new(vec![n, d], db)?),
            ]
        }
        Op::CrossEntropy {
            logits,
            targets,
            probs,
        } => {
            let (n, c) = val(*logits).dims2()?;
            let scale = g.item() / n as f64;
            let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
            for (i, &t) in targets.iter().enumerate() {
                d[i * c + t] -= scale;
            }
            vec![(*logits, Tensor::new(vec![n, c], d)?)]
        }
        Op::Sum(x) => vec![(*x, Tensor::full(shape_of(nodes, *x), g.item()))],
        Op::Mean(x) => {
            let n = val(*x).numel() as f64;
            vec![(*x, Tensor::full(shape_of(nodes, *x), g.item() / n))]
        }
        Op::Ctc {
            logprobs,
            target,
            blank,
        } => {
            let mut d = ctc_grad(val(*logprobs), target, *blank)?;
            d.scale_in_place(g.item());
            vec![(*logprobs, d)]
        }
    };
    Ok(out)
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip_map on equal shapes")
}
