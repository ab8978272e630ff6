//! Multiclass linear SVM: one-vs-rest, squared hinge loss, L2 penalty.
//!
//! Each binary problem minimizes
//!
//! ```text
//! F(w, b) = 1/2 |w|^2 + C * sum_i max(0, 1 - y_i (w . x_i + b * s))^2
//! ```
//!
//! with `s` the intercept scaling and the bias left out of the penalty, by
//! full-batch gradient descent with an Armijo backtracking line search. The
//! first trial step of each iteration is the Barzilai-Borwein step; the
//! accepted step always satisfies the sufficient-decrease test, so `F` never
//! increases. The fit stops when the relative decrease drops below `tol` with
//! the gradient already small, or after `max_iter` steps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::linalg::dot;
use crate::nn::{argmax_rows, Tensor};

const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;
/// A small relative decrease only ends the fit once `|grad| < GRAD_SLACK * (1 + |w|)`;
/// on large objectives the decrease test alone stops well short of the optimum.
const GRAD_SLACK: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmConfig {
    pub c: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub intercept_scaling: f64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            tol: 1e-4,
            max_iter: 1000,
            intercept_scaling: 1.0,
        }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) || !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidConfig(
                "SVM needs C > 0, tol > 0 and max_iter >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Trace of one binary fit.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Objective at the start and after every accepted step.
    pub objective: Vec<f64>,
    /// True when the relative-decrease test stopped the solver.
    pub converged: bool,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    /// One weight vector per class, each of the feature dimension.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub intercept_scaling: f64,
    pub fits: Vec<BinaryFit>,
}

impl SvmModel {
    pub fn n_classes(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn zeros(n_classes: usize, dim: usize) -> Self {
        Self {
            weights: vec![vec![0.0; dim]; n_classes],
            biases: vec![0.0; n_classes],
            intercept_scaling: 1.0,
            fits: Vec::new(),
        }
    }
}

/// Objective and gradient over the augmented vector `theta = [w; b]`.
fn objective_and_grad(
    x: &[f64],
    dim: usize,
    y: &[f64],
    theta: &[f64],
    c: f64,
    s: f64,
    grad: Option<&mut [f64]>,
) -> f64 {
    let (w, b) = theta.split_at(dim);
    let b = b[0];
    let mut f = 0.5 * dot(w, w);
    let mut g = grad;
    if let Some(g) = g.as_deref_mut() {
        g[..dim].copy_from_slice(w);
        g[dim] = 0.0;
    }
    for (row, &yi) in x.chunks(dim).zip(y) {
        let margin = 1.0 - yi * (dot(w, row) + b * s);
        if margin > 0.0 {
            f += c * margin * margin;
            if let Some(g) = g.as_deref_mut() {
                let coef = -2.0 * c * yi * margin;
                for (gj, &xj) in g[..dim].iter_mut().zip(row) {
                    *gj += coef * xj;
                }
                g[dim] += coef * s;
            }
        }
    }
    f
}

/// Fits one binary problem with labels in {-1, +1}.
pub fn fit_binary(x: &[f64], dim: usize, y: &[f64], cfg: &SvmConfig) -> BinaryFit {
    let s = cfg.intercept_scaling;
    let mut theta = vec![0.0; dim + 1];
    let mut grad = vec![0.0; dim + 1];
    let mut f = objective_and_grad(x, dim, y, &theta, cfg.c, s, Some(&mut grad));
    let mut history = vec![f];

    // 1/L for the loss Hessian bound 1 + 2C * sum |x_i|^2.
    let sq: f64 = x.chunks(dim).map(|r| dot(r, r) + s * s).sum::<f64>();
    let mut step = 1.0 / (1.0 + 2.0 * cfg.c * sq.max(f64::MIN_POSITIVE));
    let mut converged = false;
    let mut trial = vec![0.0; dim + 1];
    let mut new_grad = vec![0.0; dim + 1];

    for _ in 0..cfg.max_iter {
        let gg = dot(&grad, &grad);
        if gg == 0.0 {
            converged = true;
            break;
        }
        let mut t = step;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            for ((tv, &th), &g) in trial.iter_mut().zip(&theta).zip(&grad) {
                *tv = th - t * g;
            }
            let ft = objective_and_grad(x, dim, y, &trial, cfg.c, s, None);
            if ft <= f - ARMIJO_C * t * gg {
                accepted = Some(ft);
                break;
            }
            t *= 0.5;
        }
        let Some(f_new) = accepted else {
            // no representable decrease left
            converged = true;
            break;
        };
        objective_and_grad(x, dim, y, &trial, cfg.c, s, Some(&mut new_grad));
        // Barzilai-Borwein proposal for the next first trial step
        let mut sy = 0.0;
        let mut ss = 0.0;
        for j in 0..=dim {
            let dt = trial[j] - theta[j];
            sy += dt * (new_grad[j] - grad[j]);
            ss += dt * dt;
        }
        step = if sy > 0.0 { ss / sy } else { t };
        std::mem::swap(&mut theta, &mut trial);
        std::mem::swap(&mut grad, &mut new_grad);
        let decrease = f - f_new;
        let rel = decrease / f.abs().max(f64::MIN_POSITIVE);
        f = f_new;
        history.push(f);
        if rel < cfg.tol
            && dot(&grad, &grad).sqrt()
                < GRAD_SLACK * (1.0 + dot(&theta[..dim], &theta[..dim]).sqrt())
        {
            converged = true;
            break;
        }
    }
    BinaryFit {
        bias: theta[dim],
        weights: theta[..dim].to_vec(),
        objective: history,
        converged,
        grad_norm: dot(&grad, &grad).sqrt(),
    }
}

/// One-vs-rest fit over `x` (`N x D`) and class labels.
pub fn svm_fit(x: &Tensor, labels: &[usize], cfg: &SvmConfig) -> Result<SvmModel> {
    cfg.validate()?;
    x.expect_rank(2, "svm features")?;
    let (n, dim) = (x.shape()[0], x.shape()[1]);
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {n} feature rows",
            labels.len()
        )));
    }
    if n < 2 {
        return Err(Error::SingleClassInput);
    }
    if !x.all_finite() {
        return Err(Error::NonFiniteFeature);
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let first = labels[0];
    if labels.iter().all(|&l| l == first) {
        return Err(Error::SingleClassInput);
    }
    let fits: Vec<BinaryFit> = (0..n_classes)
        .map(|c| {
            let y: Vec<f64> = labels
                .iter()
                .map(|&l| if l == c { 1.0 } else { -1.0 })
                .collect();
            fit_binary(x.data(), dim, &y, cfg)
        })
        .collect();
    Ok(SvmModel {
        weights: fits.iter().map(|f| f.weights.clone()).collect(),
        biases: fits.iter().map(|f| f.bias).collect(),
        intercept_scaling: cfg.intercept_scaling,
        fits,
    })
}

/// Scores `N x K`: `w_c . x + b_c * s`.
pub fn svm_decision(m: &SvmModel, x: &Tensor) -> Result<Tensor> {
    x.expect_rank(2, "svm features")?;
    let (n, dim) = (x.shape()[0], x.shape()[1]);
    if dim != m.dim() {
        return Err(Error::DimMismatch {
            expected: m.dim(),
            found: dim,
        });
    }
    let k = m.n_classes();
    let mut out = Vec::with_capacity(n * k);
    for row in x.data().chunks(dim.max(1)).take(n) {
        for (w, b) in m.weights.iter().zip(&m.biases) {
            out.push(dot(w, row) + b * m.intercept_scaling);
        }
    }
    Tensor::new(vec![n, k], out)
}

/// Argmax of [`svm_decision`]; ties go to the lowest class index.
pub fn svm_predict(m: &SvmModel, x: &Tensor) -> Result<Vec<usize>> {
    Ok(argmax_rows(&svm_decision(m, x)?))
}

pub fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
    hits as f64 / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tensor(rows: &[&[f64]]) -> Tensor {
        let dim = rows[0].len();
        Tensor::new(vec![rows.len(), dim], rows.concat()).unwrap()
    }

    #[test]
    fn symmetric_pair_splits_at_zero() {
        let x = tensor(&[&[-1.0], &[1.0]]);
        let m = svm_fit(&x, &[0, 1], &SvmConfig::default()).unwrap();
        assert_eq!(svm_predict(&m, &x).unwrap(), vec![0, 1]);
        // class-1 scorer: w > 0, b = 0 by symmetry
        assert!(m.weights[1][0] > 0.0);
        assert!(m.biases[1].abs() < 1e-3);
    }

    #[test]
    fn single_class_rejected() {
        let x = tensor(&[&[0.0], &[1.0]]);
        assert!(matches!(
            svm_fit(&x, &[1, 1], &SvmConfig::default()),
            Err(Error::SingleClassInput)
        ));
        let x = tensor(&[&[f64::NAN], &[1.0]]);
        assert!(matches!(
            svm_fit(&x, &[0, 1], &SvmConfig::default()),
            Err(Error::NonFiniteFeature)
        ));
    }

    #[test]
    fn zero_model_predicts_class_zero() {
        let m = SvmModel::zeros(3, 2);
        let x = tensor(&[&[1.0, 2.0], &[-3.0, 0.5]]);
        assert!(svm_decision(&m, &x)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        assert_eq!(svm_predict(&m, &x).unwrap(), vec![0, 0]);
    }

    #[test]
    fn unit_weight_selects_its_class() {
        let mut m = SvmModel::zeros(3, 3);
        m.weights[0][0] = 1.0;
        let x = tensor(&[&[1.0, 0.0, 0.0]]);
        assert_eq!(svm_predict(&m, &x).unwrap(), vec![0]);
        assert!(matches!(
            svm_decision(&m, &tensor(&[&[1.0, 0.0]])),
            Err(Error::DimMismatch {
                expected: 3,
                found: 2
            })
        ));
    }

    #[test]
    fn predict_is_argmax_of_decision() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let (k, d, n) = (4, 5, 30);
            let mut m = SvmModel::zeros(k, d);
            for w in m.weights.iter_mut().flatten() {
                *w = rng.random_range(-1.0..1.0);
            }
            for b in &mut m.biases {
                *b = rng.random_range(-1.0..1.0);
            }
            let x = Tensor::new(
                vec![n, d],
                (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect(),
            )
            .unwrap();
            let scores = svm_decision(&m, &x).unwrap();
            let pred = svm_predict(&m, &x).unwrap();
            for (i, &p) in pred.iter().enumerate() {
                let row = &scores.data()[i * k..(i + 1) * k];
                for (j, &s) in row.iter().enumerate() {
                    assert!(s <= row[p]);
                    if j < p {
                        assert!(s < row[p]);
                    }
                }
            }
        }
    }

    #[test]
    fn duplicated_column_equals_scaled_single_column() {
        // [x, x] with weights (a, a) scores like sqrt(2) x with weight sqrt(2) a,
        // at the same penalty, so both problems share their optimum
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 40;
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels: Vec<usize> = xs.iter().map(|&v| usize::from(v > 0.3)).collect();
        let scaled = Tensor::new(vec![n, 1], xs.iter().map(|v| v * 2f64.sqrt()).collect()).unwrap();
        let double = Tensor::new(vec![n, 2], xs.iter().flat_map(|&v| [v, v]).collect()).unwrap();
        let cfg = SvmConfig {
            tol: 1e-12,
            ..SvmConfig::default()
        };
        let a = svm_decision(&svm_fit(&scaled, &labels, &cfg).unwrap(), &scaled).unwrap();
        let b = svm_decision(&svm_fit(&double, &labels, &cfg).unwrap(), &double).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-4, "{p} vs {q}");
        }
    }

    #[test]
    fn objective_never_increases_and_fit_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (n, d) = (60, 6);
        let x = Tensor::new(
            vec![n, d],
            (0..n * d).map(|_| rng.random_range(-3.0..3.0)).collect(),
        )
        .unwrap();
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let cfg = SvmConfig::default();
        let m = svm_fit(&x, &labels, &cfg).unwrap();
        for fit in &m.fits {
            assert!(fit.objective.windows(2).all(|w| w[1] <= w[0]));
            if fit.converged {
                let wn = dot(&fit.weights, &fit.weights).sqrt();
                assert!(
                    fit.grad_norm < 1e-2 * (1.0 + wn),
                    "{} vs {wn}",
                    fit.grad_norm
                );
            }
        }
        assert_eq!(svm_fit(&x, &labels, &cfg).unwrap(), m);
    }
}
