//! Learnable temporal filter banks.
//!
//! Two families are materialized as differentiable functions of their
//! parameters:
//!
//! * strided Gaussian sub-event filters — per filter a center, a stride and
//!   a width parameterize N Gaussians whose normalized rows pool the
//!   temporal intervals they cover;
//! * Cauchy structure filters — per filter a center and a width, combined
//!   with per-class soft attention into a global "super-event" summary.
//!
//! Every materialized filter row is a probability vector over time: entries
//! are non-negative and sum to 1 for any parameter values and any T ≥ 1.

use std::rc::Rc;

use rand::Rng;

use crate::tensor::{BackwardFn, Result, Tensor, TensorError};

/// Width floor added to sigma^2 in the Gaussian denominator.
const SIGMA_EPS: f64 = 1e-4;

/// Parameters of a bank of M sub-event filters, each made of N strided
/// Gaussians. All three parameter vectors are unconstrained reals.
#[derive(Debug, Clone)]
pub struct SubEventFilterBank {
    pub m: usize,
    pub n: usize,
    /// Unconstrained centers (g-tilde), one per filter.
    pub centers: Vec<f64>,
    /// Unconstrained strides (delta-tilde), one per filter.
    pub strides: Vec<f64>,
    /// Unconstrained widths (sigma), one per filter.
    pub widths: Vec<f64>,
}

impl SubEventFilterBank {
    pub fn init<R: Rng>(m: usize, n: usize, rng: &mut R) -> Self {
        Self {
            m,
            n,
            centers: (0..m).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            strides: (0..m).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            widths: vec![0.5; m],
        }
    }

    /// Materialize the bank without a tape, for inspection/export.
    pub fn materialize(&self, t: usize) -> Result<Vec<f64>> {
        let (data, _) = gaussian_forward(&self.centers, &self.strides, &self.widths, self.n, t)?;
        Ok(data)
    }
}

/// Parameters of a bank of M Cauchy structure filters plus C×M per-class
/// attention logits.
#[derive(Debug, Clone)]
pub struct SuperEventFilterBank {
    pub m: usize,
    pub c: usize,
    pub centers: Vec<f64>,
    pub widths: Vec<f64>,
    /// Attention logits, row-major C×M; softmaxed per class when applied.
    pub attention: Vec<f64>,
}

impl SuperEventFilterBank {
    pub fn init<R: Rng>(m: usize, c: usize, rng: &mut R) -> Self {
        Self {
            m,
            c,
            centers: (0..m).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            widths: (0..m).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            attention: (0..c * m).map(|_| rng.gen_range(-0.1..0.1)).collect(),
        }
    }

    pub fn materialize(&self, t: usize) -> Result<Vec<f64>> {
        let (data, _) = cauchy_forward(&self.centers, &self.widths, t)?;
        Ok(data)
    }
}

struct GaussianSaved {
    mu: Vec<f64>,     // M*N means
    s: Vec<f64>,      // M variances (sigma^2 + eps)
}

fn gaussian_forward(
    centers: &[f64],
    strides: &[f64],
    widths: &[f64],
    n: usize,
    t: usize,
) -> Result<(Vec<f64>, GaussianSaved)> {
    if t == 0 {
        return Err(TensorError::ZeroLength);
    }
    if n < 2 {
        return Err(TensorError::TooFewGaussians(n));
    }
    let m = centers.len();
    let tf = t as f64;
    let mut data = vec![0.0; m * n * t];
    let mut mu = vec![0.0; m * n];
    let mut s = vec![0.0; m];
    for fm in 0..m {
        let g = 0.5 * tf * (centers[fm] + 1.0);
        let delta = tf / (n as f64 - 1.0) * strides[fm];
        let sv = widths[fm] * widths[fm] + SIGMA_EPS;
        s[fm] = sv;
        for i in 0..n {
            let mui = g + (i as f64 - 0.5 * n as f64 + 0.5) * delta;
            mu[fm * n + i] = mui;
            let row = &mut data[(fm * n + i) * t..(fm * n + i + 1) * t];
            // subtract the max exponent so far-off-screen centers still
            // normalize instead of underflowing to 0/0
            let mut emax = f64::NEG_INFINITY;
            for (ti, slot) in row.iter_mut().enumerate() {
                let e = -(ti as f64 - mui).powi(2) / (2.0 * sv);
                *slot = e;
                emax = emax.max(e);
            }
            let mut z = 0.0;
            for slot in row.iter_mut() {
                *slot = (*slot - emax).exp();
                z += *slot;
            }
            for slot in row.iter_mut() {
                *slot /= z;
            }
        }
    }
    Ok((data, GaussianSaved { mu, s }))
}

/// Materialize M×N×T strided-Gaussian filters from unconstrained parameters
/// `centers`, `strides`, `widths` (each shape [M]), differentiably.
///
/// Per filter m: g = 0.5·T·(g̃+1), δ = T/(N−1)·δ̃, μᵢ = g + (i−N/2+0.5)·δ,
/// and row i is exp(−(t−μᵢ)²/(2σ²)) normalized to sum 1 over t.
pub fn build_gaussian_filters(
    centers: &Tensor,
    strides: &Tensor,
    widths: &Tensor,
    n: usize,
    t: usize,
) -> Result<Tensor> {
    let m = expect_vec("build_gaussian_filters", centers)?;
    if expect_vec("build_gaussian_filters", strides)? != m
        || expect_vec("build_gaussian_filters", widths)? != m
    {
        return Err(TensorError::ShapeMismatch {
            op: "build_gaussian_filters",
            detail: format!(
                "parameter vectors disagree: {:?}, {:?}, {:?}",
                centers.shape(),
                strides.shape(),
                widths.shape()
            ),
        });
    }
    let gt = centers.data();
    let dt = strides.data();
    let sg = widths.data();
    let (data, saved) = gaussian_forward(&gt, &dt, &sg, n, t)?;
    let tape = centers.tape.clone();
    let track = tape.tracked(&[centers.id, strides.id, widths.id]);
    let (ig, id_, isg) = (centers.id, strides.id, widths.id);
    let out = Rc::new(data.clone());
    let sgc = sg.clone();
    let backward: Option<BackwardFn> = track.then(|| {
        Box::new(move |grad: &[f64]| {
            let tf = t as f64;
            let mut dgt = vec![0.0; m];
            let mut ddt = vec![0.0; m];
            let mut dsg = vec![0.0; m];
            for fm in 0..m {
                let sv = saved.s[fm];
                for i in 0..n {
                    let base = (fm * n + i) * t;
                    let mui = saved.mu[fm * n + i];
                    // a_t = (t-mu)/s, b_t = (t-mu)^2/(2 s^2)
                    let mut abar = 0.0;
                    let mut bbar = 0.0;
                    for ti in 0..t {
                        let u = ti as f64 - mui;
                        let f = out[base + ti];
                        abar += f * u / sv;
                        bbar += f * u * u / (2.0 * sv * sv);
                    }
                    let mut dmu = 0.0;
                    let mut ds = 0.0;
                    for ti in 0..t {
                        let u = ti as f64 - mui;
                        let f = out[base + ti];
                        let g = grad[base + ti];
                        dmu += g * f * (u / sv - abar);
                        ds += g * f * (u * u / (2.0 * sv * sv) - bbar);
                    }
                    dgt[fm] += dmu * 0.5 * tf;
                    ddt[fm] += dmu * (i as f64 - 0.5 * n as f64 + 0.5) * tf / (n as f64 - 1.0);
                    dsg[fm] += ds * 2.0 * sgc[fm];
                }
            }
            vec![(ig, dgt), (id_, ddt), (isg, dsg)]
        }) as BackwardFn
    });
    Ok(tape.push(vec![m, n, t], data, false, track, backward))
}

struct CauchySaved {
    xhat: Vec<f64>,
    ghat: Vec<f64>,
}

fn cauchy_forward(centers: &[f64], widths: &[f64], t: usize) -> Result<(Vec<f64>, CauchySaved)> {
    if t == 0 {
        return Err(TensorError::ZeroLength);
    }
    let m = centers.len();
    let mut data = vec![0.0; t * m];
    let mut xhat = vec![0.0; m];
    let mut ghat = vec![0.0; m];
    for fm in 0..m {
        let xh = (t as f64 - 1.0) * (centers[fm].tanh() + 1.0) / 2.0;
        let gh = (1.0 - 2.0 * widths[fm].tanh().abs()).exp();
        xhat[fm] = xh;
        ghat[fm] = gh;
        let mut z = 0.0;
        for ti in 0..t {
            let r = (ti as f64 - xh) / gh;
            let w = 1.0 / (std::f64::consts::PI * gh * (1.0 + r * r));
            data[ti * m + fm] = w;
            z += w;
        }
        for ti in 0..t {
            data[ti * m + fm] /= z;
        }
    }
    Ok((data, CauchySaved { xhat, ghat }))
}

/// Materialize T×M Cauchy structure filters from unconstrained `centers`
/// and `widths` (each shape [M]), differentiably. Each column sums to 1.
///
/// x̂ = (T−1)(tanh x + 1)/2, γ̂ = exp(1 − 2|tanh γ|), and column n is the
/// Cauchy density 1/(πγ̂(1+((t−x̂)/γ̂)²)) normalized over t.
pub fn build_cauchy_filters(centers: &Tensor, widths: &Tensor, t: usize) -> Result<Tensor> {
    let m = expect_vec("build_cauchy_filters", centers)?;
    if expect_vec("build_cauchy_filters", widths)? != m {
        return Err(TensorError::ShapeMismatch {
            op: "build_cauchy_filters",
            detail: format!("{:?} vs {:?}", centers.shape(), widths.shape()),
        });
    }
    let xv = centers.data();
    let gv = widths.data();
    let (data, saved) = cauchy_forward(&xv, &gv, t)?;
    let tape = centers.tape.clone();
    let track = tape.tracked(&[centers.id, widths.id]);
    let (ix, ig) = (centers.id, widths.id);
    let out = Rc::new(data.clone());
    let (xc, gc) = (xv.clone(), gv.clone());
    let backward: Option<BackwardFn> = track.then(|| {
        Box::new(move |grad: &[f64]| {
            let mut dx = vec![0.0; m];
            let mut dg = vec![0.0; m];
            for fm in 0..m {
                let xh = saved.xhat[fm];
                let gh = saved.ghat[fm];
                // p_t = dlog(w)/dxhat, q_t/gh = dlog(w)/dghat
                let mut pbar = 0.0;
                let mut qbar = 0.0;
                for ti in 0..t {
                    let r = (ti as f64 - xh) / gh;
                    let f = out[ti * m + fm];
                    pbar += f * 2.0 * r / (gh * (1.0 + r * r));
                    qbar += f * (r * r - 1.0) / (r * r + 1.0);
                }
                let mut dxh = 0.0;
                let mut dgh = 0.0;
                for ti in 0..t {
                    let r = (ti as f64 - xh) / gh;
                    let f = out[ti * m + fm];
                    let g = grad[ti * m + fm];
                    dxh += g * f * (2.0 * r / (gh * (1.0 + r * r)) - pbar);
                    dgh += g * f * ((r * r - 1.0) / (r * r + 1.0) - qbar) / gh;
                }
                let th_x = xc[fm].tanh();
                dx[fm] = dxh * (t as f64 - 1.0) / 2.0 * (1.0 - th_x * th_x);
                let th_g = gc[fm].tanh();
                let sign = if th_g > 0.0 {
                    1.0
                } else if th_g < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                dg[fm] = dgh * gh * (-2.0 * sign * (1.0 - th_g * th_g));
            }
            vec![(ix, dx), (ig, dg)]
        }) as BackwardFn
    });
    Ok(tape.push(vec![t, m], data, false, track, backward))
}

/// Pool a T×D sequence with an M×N×T filter bank by matrix multiplication,
/// yielding an (M·N)×D representation.
pub fn apply_subevents_segmented(filters: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (m, n, ft) = expect_bank("apply_subevents_segmented", filters)?;
    match v.shape() {
        [t, _] if *t == ft => {}
        other => {
            return Err(TensorError::ShapeMismatch {
                op: "apply_subevents_segmented",
                detail: format!("filter T={ft} vs features {:?}", other),
            })
        }
    }
    filters.reshape(vec![m * n, ft])?.matmul(v)
}

/// Convolve each of the M·N length-L filter rows with every channel of a
/// T×D sequence (edges replicated), yielding per-frame T×(M·N·D) features.
pub fn apply_subevents_continuous(filters: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (m, n, l) = expect_bank("apply_subevents_continuous", filters)?;
    let (t, d) = match v.shape() {
        [t, d] => (*t, *d),
        other => {
            return Err(TensorError::ShapeMismatch {
                op: "apply_subevents_continuous",
                detail: format!("expected T x D features, got {:?}", other),
            })
        }
    };
    if l > t {
        return Err(TensorError::KernelTooLong { l, t });
    }
    let mn = m * n;
    let off = (l as isize - 1) / 2;
    let f = filters.data();
    let x = v.data();
    let clamp = move |raw: isize| raw.clamp(0, t as isize - 1) as usize;
    let mut data = vec![0.0; t * mn * d];
    for ti in 0..t {
        for li in 0..l {
            let si = clamp(ti as isize + li as isize - off);
            for fi in 0..mn {
                let fw = f[fi * l + li];
                let out_base = ti * mn * d + fi * d;
                let in_base = si * d;
                for di in 0..d {
                    data[out_base + di] += fw * x[in_base + di];
                }
            }
        }
    }
    let tape = v.tape.clone();
    let track = tape.tracked(&[filters.id, v.id]);
    let (iff, iv) = (filters.id, v.id);
    let (fc, xc) = (f.clone(), x.clone());
    let backward: Option<BackwardFn> = track.then(|| {
        Box::new(move |g: &[f64]| {
            let mut df = vec![0.0; mn * l];
            let mut dx = vec![0.0; t * d];
            for ti in 0..t {
                for li in 0..l {
                    let si = clamp(ti as isize + li as isize - off);
                    for fi in 0..mn {
                        let fw = fc[fi * l + li];
                        let out_base = ti * mn * d + fi * d;
                        let in_base = si * d;
                        let mut acc = 0.0;
                        for di in 0..d {
                            let gv = g[out_base + di];
                            acc += gv * xc[in_base + di];
                            dx[in_base + di] += gv * fw;
                        }
                        df[fi * l + li] += acc;
                    }
                }
            }
            vec![(iff, df), (iv, dx)]
        }) as BackwardFn
    });
    Ok(tape.push(vec![t, mn * d], data, false, track, backward))
}

/// Per-class temporal summary: S = A · (Fᵀ v), where F is T×M, A is the
/// softmaxed C×M attention and v is T×D. Returns C×D.
pub fn super_event_representation(
    filters: &Tensor,
    attention: &Tensor,
    v: &Tensor,
) -> Result<Tensor> {
    let (t, m) = match filters.shape() {
        [t, m] => (*t, *m),
        other => {
            return Err(TensorError::ShapeMismatch {
                op: "super_event_representation",
                detail: format!("expected T x M filters, got {:?}", other),
            })
        }
    };
    match attention.shape() {
        [_, am] if *am == m => {}
        other => {
            return Err(TensorError::ShapeMismatch {
                op: "super_event_representation",
                detail: format!("attention {:?} vs M={m}", other),
            })
        }
    }
    match v.shape() {
        [vt, _] if *vt == t => {}
        other => {
            return Err(TensorError::ShapeMismatch {
                op: "super_event_representation",
                detail: format!("features {:?} vs filter T={t}", other),
            })
        }
    }
    attention.matmul(&filters.transpose()?.matmul(v)?)
}

fn expect_vec(op: &'static str, t: &Tensor) -> Result<usize> {
    match t.shape() {
        [m] => Ok(*m),
        other => Err(TensorError::ShapeMismatch {
            op,
            detail: format!("expected rank-1 parameter vector, got {:?}", other),
        }),
    }
}

fn expect_bank(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [m, n, l] => Ok((*m, *n, *l)),
        other => Err(TensorError::ShapeMismatch {
            op,
            detail: format!("expected M x N x L filter bank, got {:?}", other),
        }),
    }
}
