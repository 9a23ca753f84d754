//! Loss values and their analytic gradients.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use super::{DirectError, TripletBatch};
use crate::encoder::LossBreakdown;

fn softplus(x: f64) -> f64 {
    // log(1 + e^x) without overflow.
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy over all entries, from logits.
pub fn bce_loss(logits: ArrayView2<'_, f64>, labels: ArrayView2<'_, f64>) -> f64 {
    bce_with_grad(logits, labels).0
}

/// BCE and its gradient with respect to the logits.
pub fn bce_with_grad(logits: ArrayView2<'_, f64>, labels: ArrayView2<'_, f64>) -> (f64, Array2<f64>) {
    assert_eq!(logits.dim(), labels.dim(), "logits and labels differ in shape");
    let n = logits.len().max(1) as f64;
    let mut total = 0.0;
    let mut grad = Array2::zeros(logits.dim());
    Zip::from(&mut grad).and(logits).and(labels).for_each(|g, &z, &y| {
        // -[y log s(z) + (1-y) log(1-s(z))] = softplus(z) - y z
        total += softplus(z) - y * z;
        *g = (sigmoid(z) - y) / n;
    });
    (total / n, grad)
}

/// Row-normalised embeddings plus what the backward pass needs.
#[derive(Debug, Clone)]
pub struct Normalized {
    pub z: Array2<f64>,
    pub norms: Array1<f64>,
    /// Rows with zero norm, mapped to zero.
    pub zero_rows: Vec<usize>,
}

pub fn normalize(x: ArrayView2<'_, f64>) -> Normalized {
    let norms = x.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    let mut z = x.to_owned();
    let mut zero_rows = Vec::new();
    for (i, mut row) in z.rows_mut().into_iter().enumerate() {
        if norms[i] > 0.0 {
            row /= norms[i];
        } else {
            row.fill(0.0);
            zero_rows.push(i);
        }
    }
    if !zero_rows.is_empty() {
        log::warn!("{} zero-norm embedding rows left at zero", zero_rows.len());
    }
    Normalized { z, norms, zero_rows }
}

/// Pulls a gradient on the normalised rows back to the raw rows:
/// `(g - z (z·g)) / |x|`.
pub fn normalize_backward(n: &Normalized, grad_z: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros(grad_z.dim());
    for i in 0..out.nrows() {
        if n.norms[i] > 0.0 {
            let z = n.z.row(i);
            let g = grad_z.row(i);
            let proj = z.dot(&g);
            let mut o = out.row_mut(i);
            o.assign(&((&g - &(&z * proj)) / n.norms[i]));
        }
    }
    out
}

fn distance(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Batch mean of `max(d(a,p) - d(a,n) + margin, 0)` with Euclidean `d`.
pub fn triplet_loss(
    za: ArrayView2<'_, f64>,
    zp: ArrayView2<'_, f64>,
    zn: ArrayView2<'_, f64>,
    margin: f64,
) -> Result<f64, DirectError> {
    if za.dim() != zp.dim() || za.dim() != zn.dim() {
        return Err(DirectError::Shape(format!(
            "triplet inputs {:?}, {:?}, {:?}",
            za.dim(),
            zp.dim(),
            zn.dim()
        )));
    }
    if za.nrows() == 0 {
        return Ok(0.0);
    }
    let sum: f64 = (0..za.nrows())
        .map(|i| (distance(za.row(i), zp.row(i)) - distance(za.row(i), zn.row(i)) + margin).max(0.0))
        .sum();
    Ok(sum / za.nrows() as f64)
}

/// Triplet loss over rows of `z` picked by `triplets`, with the gradient
/// on `z`. At the hinge kink the loss-side branch is taken.
pub fn triplet_with_grad(z: ArrayView2<'_, f64>, triplets: &TripletBatch, margin: f64) -> (f64, Array2<f64>) {
    let mut grad = Array2::zeros(z.dim());
    let t = triplets.len();
    if t == 0 {
        return (0.0, grad);
    }
    let scale = 1.0 / t as f64;
    let mut total = 0.0;
    for ((&a, &p), &n) in triplets
        .anchor_idx
        .iter()
        .zip(&triplets.positive_idx)
        .zip(&triplets.negative_idx)
    {
        let d_ap = distance(z.row(a), z.row(p));
        let d_an = distance(z.row(a), z.row(n));
        let h = d_ap - d_an + margin;
        if h < 0.0 {
            continue;
        }
        total += h;
        if d_ap > 0.0 {
            let u = (&z.row(a) - &z.row(p)) * (scale / d_ap);
            grad.row_mut(a).scaled_add(1.0, &u);
            grad.row_mut(p).scaled_add(-1.0, &u);
        }
        if d_an > 0.0 {
            let u = (&z.row(a) - &z.row(n)) * (scale / d_an);
            grad.row_mut(a).scaled_add(-1.0, &u);
            grad.row_mut(n).scaled_add(1.0, &u);
        }
    }
    (total * scale, grad)
}

/// Softmax-contrast loss
/// `-(1/N) Σ_i log( exp(sim(z_i, z_i⁺)/τ) / Σ_j exp(sim(z_i, z_j)/τ) )`
/// with cosine `sim`. Row `i` of `positives` is `z_i⁺`; the denominator
/// runs over all `N` anchors, `j = i` included.
pub fn tension_loss(anchors: ArrayView2<'_, f64>, positives: ArrayView2<'_, f64>, tau: f64) -> Result<f64, DirectError> {
    Ok(tension_with_grad(anchors, positives, tau)?.0)
}

/// Same as [`tension_loss`] with the positive of anchor `i` given as row
/// `positive_index[i]` of the batch itself.
pub fn tension_loss_indexed(z: ArrayView2<'_, f64>, positive_index: &[usize], tau: f64) -> Result<f64, DirectError> {
    if positive_index.len() != z.nrows() || positive_index.iter().any(|&p| p >= z.nrows()) {
        return Err(DirectError::Shape("positive index map does not fit the batch".into()));
    }
    let positives = z.select(Axis(0), positive_index);
    tension_loss(z, positives.view(), tau)
}

/// Tension loss and its gradients on the anchors and on the positives.
pub fn tension_with_grad(
    anchors: ArrayView2<'_, f64>,
    positives: ArrayView2<'_, f64>,
    tau: f64,
) -> Result<(f64, Array2<f64>, Array2<f64>), DirectError> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(DirectError::Temperature(tau));
    }
    if anchors.dim() != positives.dim() {
        return Err(DirectError::Shape(format!(
            "anchors {:?} vs positives {:?}",
            anchors.dim(),
            positives.dim()
        )));
    }
    let n = anchors.nrows();
    if n == 0 {
        return Ok((0.0, Array2::zeros(anchors.dim()), Array2::zeros(positives.dim())));
    }
    let na = normalize(anchors);
    let np = normalize(positives);
    let (u, v) = (&na.z, &np.z);
    let logits = u.dot(&u.t()) / tau;
    let pos: Array1<f64> = (0..n).map(|i| u.row(i).dot(&v.row(i)) / tau).collect();

    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    let mut gu = Array2::<f64>::zeros(u.dim());
    let mut gv = Array2::<f64>::zeros(v.dim());
    for i in 0..n {
        let row = logits.row(i);
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let exps = row.mapv(|x| (x - max).exp());
        let sum = exps.sum();
        total += max + sum.ln() - pos[i];
        // d/ds_ij = softmax_ij / N ; d/dp_i = -1/N
        let w = exps / sum * (inv_n / tau);
        for j in 0..n {
            gu.row_mut(i).scaled_add(w[j], &u.row(j));
            gu.row_mut(j).scaled_add(w[j], &u.row(i));
        }
        gu.row_mut(i).scaled_add(-inv_n / tau, &v.row(i));
        gv.row_mut(i).scaled_add(-inv_n / tau, &u.row(i));
    }
    Ok((
        total * inv_n,
        normalize_backward(&na, gu.view()),
        normalize_backward(&np, gv.view()),
    ))
}

/// `total = bce + lambda * cl`.
pub fn combined_loss(bce: f64, cl: f64, lambda: f64) -> LossBreakdown {
    LossBreakdown::new(bce, cl, lambda)
}
