//! Differentiable losses: transformation regression, Gaussian and categorical
//! transformation likelihoods, label cross-entropy and entropy minimization.

use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::nets::DecoderVars;
use serde::{Deserialize, Serialize};

pub const LOG_2PI: f64 = 1.837_877_066_409_345_3;

/// What the transformation decoder is asked to reproduce.
#[derive(Debug, Clone, PartialEq)]
pub enum TransformTargets {
    /// Standardized regression targets, `[N, k]`.
    Regression(Tensor),
    /// Class index per example.
    Classes(Vec<usize>),
}

impl TransformTargets {
    pub fn len(&self) -> usize {
        match self {
            TransformTargets::Regression(t) => t.shape().first().copied().unwrap_or(0),
            TransformTargets::Classes(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Scalar values of one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub transformation_term: f64,
    pub label_term: f64,
    pub entmin_term: f64,
    pub lambda: f64,
}

/// Graph handles of one objective evaluation.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub transformation: Var,
    pub label: Option<Var>,
    pub entmin: Option<Var>,
    pub lambda: f64,
}

impl LossVars {
    pub fn values(&self, g: &Graph) -> Result<LossBreakdown> {
        let get = |v: Option<Var>| -> Result<f64> { v.map_or(Ok(0.0), |v| g.value(v).item()) };
        Ok(LossBreakdown {
            total: g.value(self.total).item()?,
            transformation_term: g.value(self.transformation).item()?,
            label_term: get(self.label)?,
            entmin_term: get(self.entmin)?,
            lambda: self.lambda,
        })
    }
}

fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::Input(format!("label {y} at row {i} outside [0, {classes})")));
        }
        data[i * classes + y] = 1.0;
    }
    Tensor::new(&[labels.len(), classes], data)
}

fn rows(g: &Graph, v: Var, op: &'static str) -> Result<(usize, usize)> {
    match *g.shape(v) {
        [n, k] => Ok((n, k)),
        ref s => Err(Error::shape(op, &[0, 0], s)),
    }
}

/// Mean squared error over every entry of `[N, k]` inputs.
pub fn aet_loss(g: &mut Graph, target: Var, pred: Var) -> Result<Var> {
    let d = g.sub(pred, target)?;
    let sq = g.mul(d, d)?;
    Ok(g.mean(sq))
}

/// Per-example `−log N(t | mean, exp(logvar))`, `[N]`.
pub fn gaussian_nll_rows(g: &mut Graph, target: Var, mean: Var, logvar: Var) -> Result<Var> {
    let (_, k) = rows(g, mean, "gaussian_nll")?;
    let d = g.sub(target, mean)?;
    let sq = g.mul(d, d)?;
    let neg = g.scale(logvar, -1.0);
    let prec = g.exp(neg);
    let weighted = g.mul(sq, prec)?;
    let inner = g.add(weighted, logvar)?;
    let s = g.sum_last(inner)?;
    let s = g.add_scalar(s, k as f64 * LOG_2PI);
    Ok(g.scale(s, 0.5))
}

/// Per-row `−log p[y]` for log-probabilities `[N, C]`, `[N]`.
pub fn nll_rows(g: &mut Graph, logprobs: Var, labels: &[usize]) -> Result<Var> {
    let (n, c) = rows(g, logprobs, "nll")?;
    if labels.len() != n {
        return Err(Error::shape("nll labels", &[n], &[labels.len()]));
    }
    let mask = g.constant(one_hot(labels, c)?);
    let picked = g.mul(logprobs, mask)?;
    let s = g.sum_last(picked)?;
    Ok(g.scale(s, -1.0))
}

/// Per-example transformation term for either decoder mode, `[N]`.
pub fn avt_rows(g: &mut Graph, dec: DecoderVars, target: &TransformTargets) -> Result<Var> {
    match (dec, target) {
        (DecoderVars::Gaussian { mean, logvar }, TransformTargets::Regression(t)) => {
            if g.shape(mean) != t.shape() {
                return Err(Error::shape("avt_objective", g.shape(mean), t.shape()));
            }
            let t = g.constant(t.clone());
            gaussian_nll_rows(g, t, mean, logvar)
        }
        (DecoderVars::Categorical { logits }, TransformTargets::Classes(c)) => {
            let lp = g.log_softmax(logits)?;
            nll_rows(g, lp, c)
        }
        _ => Err(Error::Config("decoder mode does not match the target kind".into())),
    }
}

/// Batch mean of the transformation likelihood term.
pub fn avt_objective(g: &mut Graph, dec: DecoderVars, target: &TransformTargets) -> Result<Var> {
    let r = avt_rows(g, dec, target)?;
    Ok(g.mean(r))
}

/// Mean Shannon entropy of the rows of `[N, C]` log-probabilities.
pub fn entropy_min(g: &mut Graph, logprobs: Var) -> Result<Var> {
    rows(g, logprobs, "entropy_min")?;
    let p = g.exp(logprobs);
    let plogp = g.mul(p, logprobs)?;
    let h = g.sum_last(plogp)?;
    let m = g.mean(h);
    Ok(g.scale(m, -1.0))
}

/// Label cross-entropy plus transformation term with both weighted equally.
pub fn sat_objective(
    g: &mut Graph,
    class_logprobs: Var,
    labels: &[usize],
    dec: DecoderVars,
    target: &TransformTargets,
) -> Result<LossVars> {
    let lr = nll_rows(g, class_logprobs, labels)?;
    let label = g.mean(lr);
    let transformation = avt_objective(g, dec, target)?;
    let total = g.add(transformation, label)?;
    Ok(LossVars { total, transformation, label: Some(label), entmin: None, lambda: 1.0 })
}

/// Per-example ingredients of the semi-supervised objective.
#[derive(Debug, Clone, Copy)]
pub struct SemisupTerms {
    /// Transformation term of every example in the batch, `[N]`.
    pub transformation: Var,
    /// Label cross-entropy of the labeled examples only, `[L]`.
    pub label: Option<Var>,
    /// Entropy of the classifier on unlabeled examples, scalar.
    pub entropy: Option<Var>,
}

/// `mean(transformation) + λ·mean(label) + entmin_weight·entropy`.
pub fn semisup_objective(g: &mut Graph, terms: SemisupTerms, lambda: f64, entmin_weight: f64) -> Result<LossVars> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("lambda must be a nonnegative number, got {lambda}")));
    }
    if !(entmin_weight >= 0.0 && entmin_weight.is_finite()) {
        return Err(Error::Config(format!("entmin weight must be nonnegative, got {entmin_weight}")));
    }
    let transformation = g.mean(terms.transformation);
    let mut total = transformation;
    let label = terms.label.map(|l| g.mean(l));
    if let Some(l) = label {
        let w = g.scale(l, lambda);
        total = g.add(total, w)?;
    }
    if let Some(e) = terms.entropy {
        let w = g.scale(e, entmin_weight);
        total = g.add(total, w)?;
    }
    Ok(LossVars { total, transformation, label, entmin: terms.entropy, lambda })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_rows(g: &mut Graph, v: &[f64]) -> Var {
        g.constant(Tensor::from_vec(v.to_vec()))
    }

    #[test]
    fn mse_hand_values() {
        let mut g = Graph::new();
        let t = g.constant(Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap());
        let p = g.constant(Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap());
        let l = aet_loss(&mut g, t, p).unwrap();
        assert_eq!(g.value(l).item().unwrap(), 1.0);
        let z = aet_loss(&mut g, t, t).unwrap();
        assert_eq!(g.value(z).item().unwrap(), 0.0);
    }

    #[test]
    fn gaussian_nll_closed_forms() {
        let mut g = Graph::new();
        let t = g.constant(Tensor::from_rows(&[vec![1.0]]).unwrap());
        let d = g.constant(Tensor::from_rows(&[vec![0.0]]).unwrap());
        let lv = g.constant(Tensor::from_rows(&[vec![0.0]]).unwrap());
        let l = gaussian_nll_rows(&mut g, t, d, lv).unwrap();
        assert!((g.value(l).data()[0] - 0.5 * (1.0 + LOG_2PI)).abs() < 1e-15);
        let z = gaussian_nll_rows(&mut g, t, t, lv).unwrap();
        assert!((g.value(z).data()[0] - 0.5 * LOG_2PI).abs() < 1e-15);
    }

    #[test]
    fn entropy_reference_values() {
        let mut g = Graph::new();
        let lp = g.constant(
            Tensor::from_rows(&[vec![0.5f64.ln(), 0.5f64.ln()], vec![0.0, f64::NEG_INFINITY.max(-800.0)]]).unwrap(),
        );
        let h = entropy_min(&mut g, lp).unwrap();
        assert!((g.value(h).item().unwrap() - 0.5 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn semisup_weighted_sum_by_hand() {
        let mut g = Graph::new();
        let t = scalar_rows(&mut g, &[1.0, 2.0, 6.0]);
        let l = scalar_rows(&mut g, &[4.0]);
        let e = g.constant(Tensor::scalar(0.5));
        let out =
            semisup_objective(&mut g, SemisupTerms { transformation: t, label: Some(l), entropy: Some(e) }, 0.25, 2.0)
                .unwrap();
        let v = out.values(&g).unwrap();
        assert_eq!(v.total, 3.0 + 0.25 * 4.0 + 2.0 * 0.5);
        assert_eq!(v.transformation_term, 3.0);
        assert!(semisup_objective(&mut g, SemisupTerms { transformation: t, label: None, entropy: None }, -1.0, 0.0)
            .is_err());
    }

    #[test]
    fn invalid_labels_are_input_errors() {
        let mut g = Graph::new();
        let lp = g.constant(Tensor::from_rows(&[vec![0.0, -1.0]]).unwrap());
        assert!(matches!(nll_rows(&mut g, lp, &[2]), Err(Error::Input(_))));
    }
}
