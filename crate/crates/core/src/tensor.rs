//! Dense f64 tensors with a define-by-run tape for reverse-mode gradients.
//!
//! A [`Tape`] records every operation performed on its [`Tensor`]s during the
//! forward pass. Calling [`Tape::backward`] on a scalar loss replays the tape
//! in reverse and returns a [`Gradients`] map holding d(loss)/d(leaf) for
//! every leaf created with `requires_grad = true`.
//!
//! The tape is rebuilt on every forward pass, so filter shapes may depend on
//! the sequence length of the current input. A tape and its tensors form a
//! single-threaded unit; tensor *values* are plain data and may be moved
//! between threads freely.

use std::cell::RefCell;
use std::rc::Rc;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch, {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },
    #[error("conv1d: kernel length {l} exceeds sequence length {t} in valid mode")]
    KernelTooLong { l: usize, t: usize },
    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward: tape already consumed; re-record the forward pass first")]
    TapeConsumed,
    #[error("filter bank needs at least 2 gaussians per filter, got {0}")]
    TooFewGaussians(usize),
    #[error("filter length must be at least 1")]
    ZeroLength,
}

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Valid,
    SameReplicate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Exp,
}

/// Gradient contributions per input id, produced by one tape node.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<(usize, Vec<f64>)>>;

struct Entry {
    data: Rc<Vec<f64>>,
    /// Leaf whose gradient the caller wants.
    is_leaf_grad: bool,
    /// True if this entry is (transitively) a function of a grad leaf.
    track: bool,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
struct TapeInner {
    entries: Vec<Entry>,
    consumed: bool,
}

/// Recording tape; cheap to clone (shared handle).
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

/// A handle to one value recorded on a tape.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) tape: Tape,
    pub(crate) id: usize,
    pub(crate) shape: Vec<usize>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &self.shape)
            .field("data", &self.to_vec())
            .finish()
    }
}

/// Gradients keyed by tensor id, as returned by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        self.grads.get(t.id).and_then(|g| g.as_deref())
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn push(
        &self,
        shape: Vec<usize>,
        data: Vec<f64>,
        is_leaf_grad: bool,
        track: bool,
        backward: Option<BackwardFn>,
    ) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len());
        let mut inner = self.inner.borrow_mut();
        let id = inner.entries.len();
        inner.entries.push(Entry {
            data: Rc::new(data),
            is_leaf_grad,
            track,
            backward,
        });
        Tensor {
            tape: self.clone(),
            id,
            shape,
        }
    }

    /// Record a constant leaf (no gradient requested).
    pub fn constant(&self, shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        self.push(shape, data, false, false, None)
    }

    /// Record a leaf whose gradient will be reported by `backward`.
    pub fn leaf(&self, shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        self.push(shape, data, true, true, None)
    }

    pub(crate) fn tracked(&self, ids: &[usize]) -> bool {
        let inner = self.inner.borrow();
        ids.iter().any(|&i| inner.entries[i].track)
    }

    /// Reverse sweep from a scalar loss. Consumes the tape: a second call
    /// without re-recording the forward pass is an error.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        if loss.shape != [1] {
            return Err(TensorError::NonScalarLoss(loss.shape.clone()));
        }
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(TensorError::TapeConsumed);
        }
        inner.consumed = true;
        let n = inner.entries.len();
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let Some(gout) = grads[id].take() else {
                continue;
            };
            let entry = &inner.entries[id];
            let keep = entry.is_leaf_grad;
            if let Some(back) = &entry.backward {
                for (input, contrib) in back(&gout) {
                    match &mut grads[input] {
                        Some(acc) => {
                            for (a, c) in acc.iter_mut().zip(&contrib) {
                                *a += c;
                            }
                        }
                        slot @ None => *slot = Some(contrib),
                    }
                }
            }
            if keep {
                grads[id] = Some(gout);
            }
        }
        Ok(Gradients { grads })
    }
}

impl Tensor {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> Rc<Vec<f64>> {
        self.tape.inner.borrow().entries[self.id].data.clone()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data().as_ref().clone()
    }

    /// Scalar value of a shape-[1] tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.shape, [1]);
        self.data()[0]
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub(crate) fn unop(
        &self,
        shape: Vec<usize>,
        data: Vec<f64>,
        back: impl Fn(&[f64]) -> Vec<f64> + 'static,
    ) -> Tensor {
        let track = self.tape.tracked(&[self.id]);
        let id = self.id;
        let backward: Option<BackwardFn> = if track {
            Some(Box::new(move |g| vec![(id, back(g))]))
        } else {
            None
        };
        self.tape.push(shape, data, false, track, backward)
    }

    // ---- elementwise ----

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("add", self, other)?;
        let a = self.data();
        let b = other.data();
        let data = a.iter().zip(b.iter()).map(|(x, y)| x + y).collect();
        let track = self.tape.tracked(&[self.id, other.id]);
        let (ia, ib) = (self.id, other.id);
        let backward: Option<BackwardFn> = track.then(|| {
            Box::new(move |g: &[f64]| vec![(ia, g.to_vec()), (ib, g.to_vec())]) as BackwardFn
        });
        Ok(self.tape.push(self.shape.clone(), data, false, track, backward))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("sub", self, other)?;
        let a = self.data();
        let b = other.data();
        let data = a.iter().zip(b.iter()).map(|(x, y)| x - y).collect();
        let track = self.tape.tracked(&[self.id, other.id]);
        let (ia, ib) = (self.id, other.id);
        let backward: Option<BackwardFn> = track.then(|| {
            Box::new(move |g: &[f64]| {
                vec![(ia, g.to_vec()), (ib, g.iter().map(|x| -x).collect())]
            }) as BackwardFn
        });
        Ok(self.tape.push(self.shape.clone(), data, false, track, backward))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("mul", self, other)?;
        let a = self.data();
        let b = other.data();
        let data = a.iter().zip(b.iter()).map(|(x, y)| x * y).collect();
        let track = self.tape.tracked(&[self.id, other.id]);
        let (ia, ib) = (self.id, other.id);
        let (ac, bc) = (a.clone(), b.clone());
        let backward: Option<BackwardFn> = track.then(|| {
            Box::new(move |g: &[f64]| {
                let da = g.iter().zip(bc.iter()).map(|(g, y)| g * y).collect();
                let db = g.iter().zip(ac.iter()).map(|(g, x)| g * x).collect();
                vec![(ia, da), (ib, db)]
            }) as BackwardFn
        });
        Ok(self.tape.push(self.shape.clone(), data, false, track, backward))
    }

    pub fn scale(&self, k: f64) -> Tensor {
        let data = self.data().iter().map(|x| x * k).collect();
        self.unop(self.shape.clone(), data, move |g| {
            g.iter().map(|x| x * k).collect()
        })
    }

    pub fn activation(&self, kind: Activation) -> Tensor {
        let data: Vec<f64> = self
            .data()
            .iter()
            .map(|&x| match kind {
                Activation::Sigmoid => sigmoid(x),
                Activation::Tanh => x.tanh(),
                Activation::Exp => x.exp(),
            })
            .collect();
        let out = Rc::new(data.clone());
        self.unop(self.shape.clone(), data, move |g| {
            g.iter()
                .zip(out.iter())
                .map(|(g, &y)| match kind {
                    Activation::Sigmoid => g * y * (1.0 - y),
                    Activation::Tanh => g * (1.0 - y * y),
                    Activation::Exp => g * y,
                })
                .collect()
        })
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&self) -> Tensor {
        let total: f64 = self.data().iter().sum();
        let n = numel(&self.shape);
        self.unop(vec![1], vec![total], move |g| vec![g[0]; n])
    }

    // ---- shape plumbing ----

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        if numel(&shape) != numel(&self.shape) {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                detail: format!("cannot view {:?} as {:?}", self.shape, shape),
            });
        }
        let data = self.to_vec();
        Ok(self.unop(shape, data, |g| g.to_vec()))
    }

    /// 2-D transpose.
    pub fn transpose(&self) -> Result<Tensor> {
        let [r, c] = rank2("transpose", self)?;
        let a = self.data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = a[i * c + j];
            }
        }
        Ok(self.unop(vec![c, r], data, move |g| {
            let mut d = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    d[i * c + j] = g[j * r + i];
                }
            }
            d
        }))
    }

    /// Row `t` of a 2-D tensor as a rank-1 tensor.
    pub fn row(&self, t: usize) -> Result<Tensor> {
        let [r, c] = rank2("row", self)?;
        if t >= r {
            return Err(TensorError::ShapeMismatch {
                op: "row",
                detail: format!("row {t} out of range for {:?}", self.shape),
            });
        }
        let a = self.data();
        let data = a[t * c..(t + 1) * c].to_vec();
        Ok(self.unop(vec![c], data, move |g| {
            let mut d = vec![0.0; r * c];
            d[t * c..(t + 1) * c].copy_from_slice(g);
            d
        }))
    }

    /// Contiguous slice of a rank-1 tensor.
    pub fn slice(&self, start: usize, len: usize) -> Result<Tensor> {
        if self.shape.len() != 1 || start + len > self.shape[0] {
            return Err(TensorError::ShapeMismatch {
                op: "slice",
                detail: format!("[{start}, {start}+{len}) of shape {:?}", self.shape),
            });
        }
        let n = self.shape[0];
        let data = self.data()[start..start + len].to_vec();
        Ok(self.unop(vec![len], data, move |g| {
            let mut d = vec![0.0; n];
            d[start..start + len].copy_from_slice(g);
            d
        }))
    }

    // ---- linear algebra ----

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let [m, k] = rank2("matmul", self)?;
        let [k2, n] = rank2("matmul", other)?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                detail: format!("inner dims disagree: {:?} x {:?}", self.shape, other.shape),
            });
        }
        let a = self.data();
        let b = other.data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = a[i * k + p];
                for j in 0..n {
                    data[i * n + j] += av * b[p * n + j];
                }
            }
        }
        let track = self.tape.tracked(&[self.id, other.id]);
        let (ia, ib) = (self.id, other.id);
        let (ac, bc) = (a.clone(), b.clone());
        let backward: Option<BackwardFn> = track.then(|| {
            Box::new(move |g: &[f64]| {
                // dA = G Bᵀ, dB = Aᵀ G
                let mut da = vec![0.0; m * k];
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    for j in 0..n {
                        let gv = g[i * n + j];
                        for p in 0..k {
                            da[i * k + p] += gv * bc[p * n + j];
                            db[p * n + j] += gv * ac[i * k + p];
                        }
                    }
                }
                vec![(ia, da), (ib, db)]
            }) as BackwardFn
        });
        Ok(self.tape.push(vec![m, n], data, false, track, backward))
    }

    /// Affine map over the trailing dimension; `self` may be rank 1 or 2.
    pub fn linear(&self, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let [k, c] = rank2("linear", weight)?;
        if bias.shape != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                detail: format!("bias {:?} vs weight {:?}", bias.shape, weight.shape),
            });
        }
        let (rows, rank1) = match self.shape.as_slice() {
            [n] => (check_trailing("linear", &[*n], k).map(|_| 1)?, true),
            [r, n] if *n == k => (*r, false),
            other => {
                return Err(TensorError::ShapeMismatch {
                    op: "linear",
                    detail: format!("input {:?} vs weight {:?}", other, weight.shape),
                })
            }
        };
        let x = self.data();
        let w = weight.data();
        let b = bias.data();
        let mut data = vec![0.0; rows * c];
        for r in 0..rows {
            for j in 0..c {
                let mut acc = b[j];
                for p in 0..k {
                    acc += x[r * k + p] * w[p * c + j];
                }
                data[r * c + j] = acc;
            }
        }
        let track = self.tape.tracked(&[self.id, weight.id, bias.id]);
        let (ix, iw, ib) = (self.id, weight.id, bias.id);
        let (xc, wc) = (x.clone(), w.clone());
        let backward: Option<BackwardFn> = track.then(|| {
            Box::new(move |g: &[f64]| {
                let mut dx = vec![0.0; rows * k];
                let mut dw = vec![0.0; k * c];
                let mut db = vec![0.0; c];
                for r in 0..rows {
                    for j in 0..c {
                        let gv = g[r * c + j];
                        db[j] += gv;
                        for p in 0..k {
                            dx[r * k + p] += gv * wc[p * c + j];
                            dw[p * c + j] += gv * xc[r * k + p];
                        }
                    }
                }
                vec![(ix, dx), (iw, dw), (ib, db)]
            }) as BackwardFn
        });
        let out_shape = if rank1 { vec![c] } else { vec![rows, c] };
        Ok(self.tape.push(out_shape, data, false, track, backward))
    }

    // ---- temporal ops ----

    /// Per-column max or mean over time of a T×D tensor.
    pub fn pool_time(&self, kind: PoolKind) -> Result<Tensor> {
        let [t, d] = rank2("pool_time", self)?;
        if t == 0 {
            return Err(TensorError::EmptyInput { op: "pool_time" });
        }
        let a = self.data();
        match kind {
            PoolKind::Mean => {
                let mut data = vec![0.0; d];
                for ti in 0..t {
                    for j in 0..d {
                        data[j] += a[ti * d + j];
                    }
                }
                for v in &mut data {
                    *v /= t as f64;
                }
                Ok(self.unop(vec![d], data, move |g| {
                    let mut grad = vec![0.0; t * d];
                    for ti in 0..t {
                        for j in 0..d {
                            grad[ti * d + j] = g[j] / t as f64;
                        }
                    }
                    grad
                }))
            }
            PoolKind::Max => {
                let mut data = vec![f64::NEG_INFINITY; d];
                let mut arg = vec![0usize; d];
                for ti in 0..t {
                    for j in 0..d {
                        let v = a[ti * d + j];
                        if v > data[j] {
                            data[j] = v;
                            arg[j] = ti;
                        }
                    }
                }
                Ok(self.unop(vec![d], data, move |g| {
                    let mut grad = vec![0.0; t * d];
                    for j in 0..d {
                        grad[arg[j] * d + j] = g[j];
                    }
                    grad
                }))
            }
        }
    }

    /// 1-D temporal convolution of a T×D input with an L×D×D' kernel.
    pub fn conv1d_temporal(&self, kernel: &Tensor, padding: Padding) -> Result<Tensor> {
        let [t, d] = rank2("conv1d", self)?;
        let (l, kd, dp) = match kernel.shape.as_slice() {
            [l, kd, dp] => (*l, *kd, *dp),
            other => {
                return Err(TensorError::ShapeMismatch {
                    op: "conv1d",
                    detail: format!("kernel must be rank 3 (L x D x D'), got {:?}", other),
                })
            }
        };
        if kd != d {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d",
                detail: format!("kernel channel dim {kd} vs input feature dim {d}"),
            });
        }
        if l == 0 {
            return Err(TensorError::ZeroLength);
        }
        if padding == Padding::Valid && l > t {
            return Err(TensorError::KernelTooLong { l, t });
        }
        let (t_out, off) = match padding {
            Padding::Valid => (t - l + 1, 0isize),
            Padding::SameReplicate => (t, (l as isize - 1) / 2),
        };
        let v = self.data();
        let k = kernel.data();
        let replicate = padding == Padding::SameReplicate;
        let src = move |ti: usize, li: usize| -> usize {
            let raw = ti as isize + li as isize - off;
            if replicate {
                raw.clamp(0, t as isize - 1) as usize
            } else {
                raw as usize
            }
        };
        let mut data = vec![0.0; t_out * dp];
        for ti in 0..t_out {
            for li in 0..l {
                let si = src(ti, li);
                for di in 0..d {
                    let xv = v[si * d + di];
                    if xv == 0.0 {
                        continue;
                    }
                    for j in 0..dp {
                        data[ti * dp + j] += xv * k[(li * d + di) * dp + j];
                    }
                }
            }
        }
        let track = self.tape.tracked(&[self.id, kernel.id]);
        let (iv, ik) = (self.id, kernel.id);
        let (vc, kc) = (v.clone(), k.clone());
        let backward: Option<BackwardFn> = track.then(|| {
            Box::new(move |g: &[f64]| {
                let mut dv = vec![0.0; t * d];
                let mut dk = vec![0.0; l * d * dp];
                for ti in 0..t_out {
                    for li in 0..l {
                        let si = src(ti, li);
                        for di in 0..d {
                            let xv = vc[si * d + di];
                            let mut acc = 0.0;
                            for j in 0..dp {
                                let gv = g[ti * dp + j];
                                acc += gv * kc[(li * d + di) * dp + j];
                                dk[(li * d + di) * dp + j] += gv * xv;
                            }
                            dv[si * d + di] += acc;
                        }
                    }
                }
                vec![(iv, dv), (ik, dk)]
            }) as BackwardFn
        });
        Ok(self.tape.push(vec![t_out, dp], data, false, track, backward))
    }

    /// Max over a centered length-L window around each frame, edges replicated.
    pub fn sliding_max_pool(&self, l: usize) -> Result<Tensor> {
        let [t, d] = rank2("sliding_max_pool", self)?;
        if l == 0 {
            return Err(TensorError::ZeroLength);
        }
        if l > t {
            return Err(TensorError::KernelTooLong { l, t });
        }
        let off = (l - 1) / 2;
        let a = self.data();
        let mut data = vec![f64::NEG_INFINITY; t * d];
        let mut arg = vec![0usize; t * d];
        for ti in 0..t {
            for li in 0..l {
                let si = (ti as isize + li as isize - off as isize).clamp(0, t as isize - 1)
                    as usize;
                for j in 0..d {
                    let v = a[si * d + j];
                    if v > data[ti * d + j] {
                        data[ti * d + j] = v;
                        arg[ti * d + j] = si;
                    }
                }
            }
        }
        Ok(self.unop(vec![t, d], data, move |g| {
            let mut grad = vec![0.0; t * d];
            for i in 0..t * d {
                let j = i % d;
                grad[arg[i] * d + j] += g[i];
            }
            grad
        }))
    }
    /// Temporal pyramid pooling over the full extent: for each level `l`,
    /// split `[0, T)` into `l` contiguous near-equal intervals (remainder
    /// frames go to the earliest intervals) and max-pool each. Output is
    /// K×D with K = sum of levels, level-major and left-to-right.
    pub fn pyramid_pool(&self, levels: &[usize]) -> Result<Tensor> {
        let [t, d] = rank2("pyramid_pool", self)?;
        let max_level = *levels.iter().max().ok_or(TensorError::EmptyInput {
            op: "pyramid_pool",
        })?;
        if t < max_level {
            return Err(TensorError::ShapeMismatch {
                op: "pyramid_pool",
                detail: format!("T={t} shorter than the deepest level {max_level}"),
            });
        }
        let k: usize = levels.iter().sum();
        let a = self.data();
        let mut data = vec![f64::NEG_INFINITY; k * d];
        let mut arg = vec![0usize; k * d];
        let mut row = 0;
        for &level in levels {
            for (start, end) in split_intervals(t, level) {
                for ti in start..end {
                    for j in 0..d {
                        let v = a[ti * d + j];
                        if v > data[row * d + j] {
                            data[row * d + j] = v;
                            arg[row * d + j] = ti;
                        }
                    }
                }
                row += 1;
            }
        }
        Ok(self.unop(vec![k, d], data, move |g| {
            let mut grad = vec![0.0; t * d];
            for i in 0..k * d {
                let j = i % d;
                grad[arg[i] * d + j] += g[i];
            }
            grad
        }))
    }

    /// Sliding-window pyramid pooling: a centered window of length `l`
    /// (edges replicated) around each frame is pyramid-pooled, producing a
    /// T×(K·D) per-frame representation.
    pub fn sliding_pyramid_pool(&self, l: usize, levels: &[usize]) -> Result<Tensor> {
        let [t, d] = rank2("sliding_pyramid_pool", self)?;
        if l > t {
            return Err(TensorError::KernelTooLong { l, t });
        }
        let max_level = *levels.iter().max().ok_or(TensorError::EmptyInput {
            op: "sliding_pyramid_pool",
        })?;
        if l < max_level {
            return Err(TensorError::ShapeMismatch {
                op: "sliding_pyramid_pool",
                detail: format!("window L={l} shorter than the deepest level {max_level}"),
            });
        }
        let k: usize = levels.iter().sum();
        let off = (l - 1) / 2;
        let a = self.data();
        let mut data = vec![f64::NEG_INFINITY; t * k * d];
        let mut arg = vec![0usize; t * k * d];
        let segments: Vec<(usize, usize)> = levels
            .iter()
            .flat_map(|&level| split_intervals(l, level))
            .collect();
        for ti in 0..t {
            for (seg, &(ws, we)) in segments.iter().enumerate() {
                for wi in ws..we {
                    let si = (ti as isize + wi as isize - off as isize)
                        .clamp(0, t as isize - 1) as usize;
                    for j in 0..d {
                        let v = a[si * d + j];
                        let out = (ti * k + seg) * d + j;
                        if v > data[out] {
                            data[out] = v;
                            arg[out] = si;
                        }
                    }
                }
            }
        }
        Ok(self.unop(vec![t, k * d], data, move |g| {
            let mut grad = vec![0.0; t * d];
            for i in 0..t * k * d {
                let j = i % d;
                grad[arg[i] * d + j] += g[i];
            }
            grad
        }))
    }
}

/// Contiguous near-equal split of `[0, n)` into `parts` intervals, remainder
/// spread over the earliest intervals.
pub fn split_intervals(n: usize, parts: usize) -> Vec<(usize, usize)> {
    let base = n / parts;
    let rem = n % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for i in 0..parts {
        let len = base + usize::from(i < rem);
        out.push((start, start + len));
        start += len;
    }
    out
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(TensorError::ShapeMismatch {
            op,
            detail: format!("{:?} vs {:?}", a.shape, b.shape),
        });
    }
    Ok(())
}

fn rank2(op: &'static str, t: &Tensor) -> Result<[usize; 2]> {
    match t.shape.as_slice() {
        [r, c] => Ok([*r, *c]),
        other => Err(TensorError::ShapeMismatch {
            op,
            detail: format!("expected rank 2, got {:?}", other),
        }),
    }
}

fn check_trailing(op: &'static str, shape: &[usize], k: usize) -> Result<()> {
    if shape.last() != Some(&k) {
        return Err(TensorError::ShapeMismatch {
            op,
            detail: format!("trailing dim of {:?} must be {k}", shape),
        });
    }
    Ok(())
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Concatenate rank-1 tensors into one rank-1 tensor.
pub fn concat(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or(TensorError::EmptyInput { op: "concat" })?;
    let tape = first.tape.clone();
    let mut data = Vec::new();
    let mut ranges = Vec::new();
    for p in parts {
        if p.shape.len() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                detail: format!("expected rank 1 parts, got {:?}", p.shape),
            });
        }
        ranges.push((p.id, data.len(), p.shape[0]));
        data.extend_from_slice(&p.data());
    }
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    let track = tape.tracked(&ids);
    let total = data.len();
    let backward: Option<BackwardFn> = track.then(|| {
        Box::new(move |g: &[f64]| {
            ranges
                .iter()
                .map(|&(id, start, len)| (id, g[start..start + len].to_vec()))
                .collect()
        }) as BackwardFn
    });
    Ok(tape.push(vec![total], data, false, track, backward))
}

/// Column-wise concatenation of rank-2 tensors with equal row counts.
pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or(TensorError::EmptyInput { op: "concat_cols" })?;
    let tape = first.tape.clone();
    let [rows, _] = rank2("concat_cols", first)?;
    let mut widths = Vec::new();
    for p in parts {
        let [r, c] = rank2("concat_cols", p)?;
        if r != rows {
            return Err(TensorError::ShapeMismatch {
                op: "concat_cols",
                detail: format!("row counts differ: {rows} vs {r}"),
            });
        }
        widths.push(c);
    }
    let total: usize = widths.iter().sum();
    let mut data = vec![0.0; rows * total];
    let mut col = 0;
    let mut layout = Vec::new();
    for (p, &w) in parts.iter().zip(&widths) {
        let src = p.data();
        for r in 0..rows {
            data[r * total + col..r * total + col + w].copy_from_slice(&src[r * w..(r + 1) * w]);
        }
        layout.push((p.id, col, w));
        col += w;
    }
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    let track = tape.tracked(&ids);
    let backward: Option<BackwardFn> = track.then(|| {
        Box::new(move |g: &[f64]| {
            layout
                .iter()
                .map(|&(id, start, w)| {
                    let mut d = vec![0.0; rows * w];
                    for r in 0..rows {
                        d[r * w..(r + 1) * w]
                            .copy_from_slice(&g[r * total + start..r * total + start + w]);
                    }
                    (id, d)
                })
                .collect()
        }) as BackwardFn
    });
    Ok(tape.push(vec![rows, total], data, false, track, backward))
}

/// Row-wise softmax of a 2-D tensor.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let [r, c] = rank2("softmax_rows", x)?;
    let a = x.data();
    let mut data = vec![0.0; r * c];
    for i in 0..r {
        let row = &a[i * c..(i + 1) * c];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for j in 0..c {
            let e = (row[j] - m).exp();
            data[i * c + j] = e;
            z += e;
        }
        for j in 0..c {
            data[i * c + j] /= z;
        }
    }
    let y = Rc::new(data.clone());
    Ok(x.unop(vec![r, c], data, move |g| {
        let mut d = vec![0.0; r * c];
        for i in 0..r {
            let dot: f64 = (0..c).map(|j| g[i * c + j] * y[i * c + j]).sum();
            for j in 0..c {
                d[i * c + j] = y[i * c + j] * (g[i * c + j] - dot);
            }
        }
        d
    }))
}

/// Append a shared rank-1 context vector to every row of a T×D tensor.
pub fn broadcast_concat_rows(x: &Tensor, context: &Tensor) -> Result<Tensor> {
    let [t, d] = rank2("broadcast_concat_rows", x)?;
    if context.shape.len() != 1 {
        return Err(TensorError::ShapeMismatch {
            op: "broadcast_concat_rows",
            detail: format!("context must be rank 1, got {:?}", context.shape),
        });
    }
    let s = context.shape[0];
    let xv = x.data();
    let cv = context.data();
    let width = d + s;
    let mut data = vec![0.0; t * width];
    for ti in 0..t {
        data[ti * width..ti * width + d].copy_from_slice(&xv[ti * d..(ti + 1) * d]);
        data[ti * width + d..(ti + 1) * width].copy_from_slice(&cv);
    }
    let tape = x.tape.clone();
    let track = tape.tracked(&[x.id, context.id]);
    let (ix, ic) = (x.id, context.id);
    let backward: Option<BackwardFn> = track.then(|| {
        Box::new(move |g: &[f64]| {
            let mut dx = vec![0.0; t * d];
            let mut dc = vec![0.0; s];
            for ti in 0..t {
                dx[ti * d..(ti + 1) * d].copy_from_slice(&g[ti * width..ti * width + d]);
                for j in 0..s {
                    dc[j] += g[ti * width + d + j];
                }
            }
            vec![(ix, dx), (ic, dc)]
        }) as BackwardFn
    });
    Ok(tape.push(vec![t, width], data, false, track, backward))
}
