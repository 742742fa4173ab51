//! Learnable linear composition of primitive CLS tokens.
//!
//! A composition is a weight vector `η ∈ ℝⁿ`, one scalar per subband in
//! canonical primitive order. The composed token `Zᵀη` is scored by the
//! frozen classifier head against the original image's own prediction, and
//! `η` is fitted by projected SGD under one of three constraint regimes.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::vit::{argmax, classify, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConstraintMode {
    Unconstrained,
    /// `ηᵢ ≥ 0`.
    Conic,
    /// `ηᵢ ≥ 0`, `Σ ηᵢ = 1`.
    Convex,
}

impl ConstraintMode {
    pub const ALL: [ConstraintMode; 3] = [
        ConstraintMode::Unconstrained,
        ConstraintMode::Conic,
        ConstraintMode::Convex,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConstraintMode::Unconstrained => "unconstrained",
            ConstraintMode::Conic => "conic",
            ConstraintMode::Convex => "convex",
        }
    }
}

impl fmt::Display for ConstraintMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConstraintMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "unconstrained" => Ok(ConstraintMode::Unconstrained),
            "conic" => Ok(ConstraintMode::Conic),
            "convex" => Ok(ConstraintMode::Convex),
            other => Err(Error::InvalidArgument(format!(
                "unknown constraint mode `{other}` (expected unconstrained, conic or convex)"
            ))),
        }
    }
}

/// Cached encoder outputs for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ClsBundle {
    pub id: String,
    /// Row `p` is the layer-`l` CLS token of primitive `p`.
    pub primitives: Array2<f64>,
    /// Layer-`l` CLS token of the unmodified image.
    pub original: Array1<f64>,
    /// `argmax classify(original)`.
    pub target: usize,
    pub label: Option<usize>,
}

impl ClsBundle {
    /// Builds a bundle and derives its target from the model head.
    pub fn new(
        model: &Model,
        id: impl Into<String>,
        primitives: Array2<f64>,
        original: Array1<f64>,
        label: Option<usize>,
    ) -> Result<Self> {
        if primitives.ncols() != original.len() {
            return Err(Error::Shape(format!(
                "primitive tokens have width {}, original token {}",
                primitives.ncols(),
                original.len()
            )));
        }
        let target = argmax(classify(model, original.view())?.view());
        Ok(ClsBundle {
            id: id.into(),
            primitives,
            original,
            target,
            label,
        })
    }

    pub fn num_primitives(&self) -> usize {
        self.primitives.nrows()
    }
}

/// `Σₚ weights[p] · z[p]`.
pub fn compose(weights: &[f64], z: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    if weights.len() != z.nrows() {
        return Err(Error::Shape(format!(
            "{} weights for {} primitive tokens",
            weights.len(),
            z.nrows()
        )));
    }
    Ok(z.t().dot(&ArrayView1::from(weights)))
}

// Inputs closer than this to the simplex are returned untouched, which makes
// the convex projection exactly idempotent.
const SIMPLEX_FIXED_POINT_TOL: f64 = 1e-13;

/// Euclidean projection onto the probability simplex (sort-and-threshold).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let sum: f64 = v.iter().sum();
    if v.iter().all(|&x| x >= 0.0) && (sum - 1.0).abs() <= SIMPLEX_FIXED_POINT_TOL {
        return v.to_vec();
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut tau = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|&x| if x > tau { x - tau } else { 0.0 }).collect()
}

/// Projects `weights` onto the feasible set of `mode`.
pub fn project(weights: &[f64], mode: ConstraintMode) -> Vec<f64> {
    match mode {
        ConstraintMode::Unconstrained => weights.to_vec(),
        ConstraintMode::Conic => weights
            .iter()
            .map(|&x| if x > 0.0 { x } else { 0.0 })
            .collect(),
        ConstraintMode::Convex => project_simplex(weights),
    }
}

/// Whether `weights` satisfies `mode` within `tol`.
pub fn is_feasible(weights: &[f64], mode: ConstraintMode, tol: f64) -> bool {
    match mode {
        ConstraintMode::Unconstrained => weights.iter().all(|v| v.is_finite()),
        ConstraintMode::Conic => weights.iter().all(|&v| v >= 0.0),
        ConstraintMode::Convex => {
            weights.iter().all(|&v| v >= 0.0) && (weights.iter().sum::<f64>() - 1.0).abs() <= tol
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    /// Class index.
    Hard(usize),
    /// Probability vector over classes.
    Soft(ArrayView1<'a, f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub logits: Array1<f64>,
}

pub fn softmax(logits: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = logits.mapv(|v| (v - max).exp());
    let s = e.sum();
    e / s
}

/// `-log softmax(logits)[t]`, accurate for saturated logits.
fn hard_cross_entropy(logits: ArrayView1<'_, f64>, t: usize) -> f64 {
    let top = argmax(logits);
    let max = logits[top];
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != top)
        .map(|(_, &v)| (v - max).exp())
        .sum();
    (max - logits[t]) + rest.ln_1p()
}

/// Cross-entropy of the composed token's logits and its exact gradient in `η`:
/// `∇η = Z · W_cᵀ · (softmax(logits) − target)`.
pub fn loss_and_grad(
    model: &Model,
    weights: &[f64],
    z: ArrayView2<'_, f64>,
    target: Target<'_>,
) -> Result<LossGrad> {
    let k = model.config().num_classes;
    let composed = compose(weights, z)?;
    let logits = classify(model, composed.view())?;
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite logits for weights {weights:?}")));
    }
    let probs = softmax(logits.view());
    let (loss, residual) = match target {
        Target::Hard(t) => {
            if t >= k {
                return Err(Error::InvalidArgument(format!("target class {t} out of range 0..{k}")));
            }
            let mut r = probs.clone();
            r[t] -= 1.0;
            (hard_cross_entropy(logits.view(), t), r)
        }
        Target::Soft(q) => {
            if q.len() != k {
                return Err(Error::Shape(format!("soft target has {} classes, model {k}", q.len())));
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            let loss = q.iter().zip(&logits).map(|(qj, lj)| qj * (lse - lj)).sum();
            (loss, &probs - &q)
        }
    };
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("non-finite loss for weights {weights:?}")));
    }
    let back = model.head_weight().t().dot(&residual);
    let grad = z.dot(&back).to_vec();
    Ok(LossGrad { loss, grad, logits })
}

/// Predicted class of a composed token.
pub fn predict(model: &Model, weights: &[f64], z: ArrayView2<'_, f64>) -> Result<usize> {
    let logits = classify(model, compose(weights, z)?.view())?;
    Ok(argmax(logits.view()))
}

fn bundle_target<'a>(model: &Model, b: &ClsBundle, soft: bool, buf: &'a mut Array1<f64>) -> Result<Target<'a>> {
    if soft {
        *buf = softmax(classify(model, b.original.view())?.view());
        Ok(Target::Soft(buf.view()))
    } else {
        Ok(Target::Hard(b.target))
    }
}

/// Mean cross-entropy of `weights` over `bundles`.
pub fn mean_loss(model: &Model, weights: &[f64], bundles: &[ClsBundle], soft_targets: bool) -> Result<f64> {
    if bundles.is_empty() {
        return Err(Error::Data("mean loss over an empty set".into()));
    }
    let mut total = 0.0;
    let mut buf = Array1::zeros(0);
    for b in bundles {
        let target = bundle_target(model, b, soft_targets, &mut buf)?;
        total += loss_and_grad(model, weights, b.primitives.view(), target)?.loss;
    }
    Ok(total / bundles.len() as f64)
}

/// Fraction of bundles whose composed prediction equals the original one.
pub fn relative_accuracy(model: &Model, weights: &[f64], bundles: &[ClsBundle]) -> Result<f64> {
    if bundles.is_empty() {
        return Err(Error::Data("relative accuracy over an empty set".into()));
    }
    let mut hits = 0usize;
    for b in bundles {
        if predict(model, weights, b.primitives.view())? == b.target {
            hits += 1;
        }
    }
    Ok(hits as f64 / bundles.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub mode: ConstraintMode,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Distil the original softmax instead of its argmax.
    pub soft_targets: bool,
}

impl TrainConfig {
    pub fn new(mode: ConstraintMode) -> Self {
        TrainConfig {
            mode,
            lr: 0.001,
            epochs: 100,
            seed: 0,
            soft_targets: false,
        }
    }
}

/// Where a composition came from.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Provenance {
    pub basis: String,
    pub levels: usize,
    pub layer: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 0 is the initial point.
    pub epoch: usize,
    pub train_loss: f64,
    /// Relative accuracy on the validation split (training split if the
    /// validation split is empty).
    pub val_relative_accuracy: f64,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositionModel {
    pub weights: Vec<f64>,
    pub mode: ConstraintMode,
    pub provenance: Provenance,
    pub hyper: TrainConfig,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

impl CompositionModel {
    /// The summed composition `η = 𝟙` (projected for constrained modes).
    pub fn summed(n: usize, mode: ConstraintMode, provenance: Provenance) -> Self {
        CompositionModel {
            weights: project(&vec![1.0; n], mode),
            mode,
            provenance,
            hyper: TrainConfig::new(mode),
            best_epoch: 0,
            history: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

fn check_bundles(model: &Model, bundles: &[ClsBundle], n: usize) -> Result<()> {
    let d = model.config().hidden_dim;
    let k = model.config().num_classes;
    for b in bundles {
        if b.primitives.dim() != (n, d) || b.original.len() != d {
            return Err(Error::Shape(format!(
                "bundle `{}` has {:?} primitive tokens, expected ({n}, {d})",
                b.id,
                b.primitives.dim()
            )));
        }
        if b.target >= k {
            return Err(Error::Data(format!("bundle `{}` target {} out of range", b.id, b.target)));
        }
    }
    Ok(())
}

/// Projected per-example SGD from `η = project(𝟙)`.
///
/// Each epoch visits the training bundles in a freshly shuffled order and
/// projects after every update. The returned weights are the epoch (the
/// initial point included) with the best validation relative accuracy among
/// those whose training loss does not exceed the initial one; ties go to the
/// lower training loss, then the earlier epoch.
pub fn train(
    model: &Model,
    train_set: &[ClsBundle],
    val_set: &[ClsBundle],
    cfg: &TrainConfig,
    provenance: Provenance,
) -> Result<CompositionModel> {
    let first = train_set
        .first()
        .ok_or_else(|| Error::Data("training split is empty".into()))?;
    let n = first.num_primitives();
    check_bundles(model, train_set, n)?;
    check_bundles(model, val_set, n)?;
    if !(cfg.lr.is_finite() && cfg.lr > 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", cfg.lr)));
    }
    let selection = if val_set.is_empty() { train_set } else { val_set };

    let record = |epoch: usize, weights: &[f64]| -> Result<EpochRecord> {
        let train_loss = mean_loss(model, weights, train_set, cfg.soft_targets).map_err(|e| at_epoch(e, epoch))?;
        if !train_loss.is_finite() {
            return Err(Error::Numerical(format!("training loss is {train_loss} at epoch {epoch}")));
        }
        Ok(EpochRecord {
            epoch,
            train_loss,
            val_relative_accuracy: relative_accuracy(model, weights, selection)?,
            weights: weights.to_vec(),
        })
    };

    let mut weights = project(&vec![1.0; n], cfg.mode);
    let mut history = vec![record(0, &weights)?];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut buf = Array1::zeros(0);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let b = &train_set[i];
            let target = bundle_target(model, b, cfg.soft_targets, &mut buf)?;
            let lg = loss_and_grad(model, &weights, b.primitives.view(), target).map_err(|e| at_epoch(e, epoch))?;
            let stepped: Vec<f64> = weights.iter().zip(&lg.grad).map(|(w, g)| w - cfg.lr * g).collect();
            if stepped.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("epoch {epoch}: weights diverged on bundle `{}`", b.id)));
            }
            weights = project(&stepped, cfg.mode);
        }
        history.push(record(epoch, &weights)?);
    }

    let baseline = history[0].train_loss;
    let best = history
        .iter()
        .filter(|r| r.train_loss <= baseline)
        .fold(&history[0], |best, r| {
            let better = r.val_relative_accuracy > best.val_relative_accuracy
                || (r.val_relative_accuracy == best.val_relative_accuracy && r.train_loss < best.train_loss);
            if better {
                r
            } else {
                best
            }
        });

    Ok(CompositionModel {
        weights: best.weights.clone(),
        mode: cfg.mode,
        provenance,
        hyper: *cfg,
        best_epoch: best.epoch,
        history,
    })
}

fn at_epoch(err: Error, epoch: usize) -> Error {
    match err {
        Error::Numerical(msg) => Error::Numerical(format!("epoch {epoch}: {msg}")),
        other => other,
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_list(values: &[f64]) -> String {
    values.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(" ")
}

impl CompositionModel {
    /// Line-oriented `key = value` record; floats carry 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        line("mode", self.mode.to_string());
        line("basis", self.provenance.basis.clone());
        line("levels", self.provenance.levels.to_string());
        line("layer", self.provenance.layer.to_string());
        line("n", self.weights.len().to_string());
        line("weights", fmt_list(&self.weights));
        line("lr", fmt_f64(self.hyper.lr));
        line("epochs", self.hyper.epochs.to_string());
        line("seed", self.hyper.seed.to_string());
        line("soft_targets", self.hyper.soft_targets.to_string());
        line("best_epoch", self.best_epoch.to_string());
        line("history", self.history.len().to_string());
        for r in &self.history {
            line(
                &format!("epoch.{}", r.epoch),
                format!(
                    "{} {} {}",
                    fmt_f64(r.train_loss),
                    fmt_f64(r.val_relative_accuracy),
                    fmt_list(&r.weights)
                ),
            );
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut fields = std::collections::HashMap::new();
        let mut epochs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let l = raw.trim();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            let (k, v) = l
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("line {}: expected `key = value`", lineno + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if let Some(e) = k.strip_prefix("epoch.") {
                epochs.push((e.to_string(), v.to_string()));
            } else {
                fields.insert(k.to_string(), v.to_string());
            }
        }
        let get = |k: &str| {
            fields
                .get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::Format(format!("composition record lacks `{k}`")))
        };
        fn num<T: FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Format(format!("cannot parse `{k}` value `{v}`")))
        }
        fn list(k: &str, v: &str) -> Result<Vec<f64>> {
            v.split_whitespace().map(|t| num(k, t)).collect()
        }

        let mode: ConstraintMode = get("mode")?.parse()?;
        let n: usize = num("n", get("n")?)?;
        let weights = list("weights", get("weights")?)?;
        if weights.len() != n {
            return Err(Error::Format(format!("record says n = {n} but lists {} weights", weights.len())));
        }
        let mut history = Vec::with_capacity(epochs.len());
        for (e, v) in epochs {
            let values = list(&format!("epoch.{e}"), &v)?;
            if values.len() != n + 2 {
                return Err(Error::Format(format!("epoch.{e} has {} values, expected {}", values.len(), n + 2)));
            }
            history.push(EpochRecord {
                epoch: num("epoch", &e)?,
                train_loss: values[0],
                val_relative_accuracy: values[1],
                weights: values[2..].to_vec(),
            });
        }
        let declared: usize = num("history", get("history")?)?;
        if declared != history.len() {
            return Err(Error::Format(format!(
                "record declares {declared} history entries, found {}",
                history.len()
            )));
        }
        Ok(CompositionModel {
            weights,
            mode,
            provenance: Provenance {
                basis: get("basis")?.to_string(),
                levels: num("levels", get("levels")?)?,
                layer: num("layer", get("layer")?)?,
            },
            hyper: TrainConfig {
                mode,
                lr: num("lr", get("lr")?)?,
                epochs: num("epochs", get("epochs")?)?,
                seed: num("seed", get("seed")?)?,
                soft_targets: num("soft_targets", get("soft_targets")?)?,
            },
            best_epoch: num("best_epoch", get("best_epoch")?)?,
            history,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use crate::vit::{init_random, ModelConfig};
    use ndarray::array;
    use rand::Rng;

    fn tiny_config(d: usize, k: usize) -> ModelConfig {
        ModelConfig {
            image_size: 4,
            channels: 1,
            patch_size: 2,
            hidden_dim: d,
            num_heads: 1,
            num_layers: 1,
            mlp_dim: 2,
            num_classes: k,
        }
    }

    fn model_with_head(d: usize, k: usize, w: Vec<f64>, b: Vec<f64>) -> Model {
        Model::zeros(tiny_config(d, k))
            .unwrap()
            .with_parameter("head.weight", Tensor::new(vec![k, d], w).unwrap())
            .unwrap()
            .with_parameter("head.bias", Tensor::new(vec![k], b).unwrap())
            .unwrap()
    }

    #[test]
    fn compose_basics() {
        let z = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        assert_eq!(compose(&[1.0, 1.0, 1.0], z.view()).unwrap().to_vec(), vec![9.0, 12.0]);
        assert_eq!(compose(&[1.0, 0.0, 0.0], z.view()).unwrap(), z.row(0));
        assert!(compose(&[1.0, 1.0], z.view()).is_err());
        let reported = [2.02, -0.18, 0.43, 0.18];
        let z4 = array![[1.0], [1.0], [1.0], [1.0]];
        let v = compose(&reported, z4.view()).unwrap()[0];
        assert!((v - 2.45).abs() < 1e-12);
    }

    #[test]
    fn conic_clamps() {
        assert_eq!(
            project(&[2.02, -0.18, 0.43, 0.18], ConstraintMode::Conic),
            vec![2.02, 0.0, 0.43, 0.18]
        );
    }

    #[test]
    fn simplex_examples() {
        let p = project(&[1.0, 0.5, 0.5], ConstraintMode::Convex);
        for (a, b) in p.iter().zip([2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        let q = [0.25; 4];
        assert_eq!(project(&q, ConstraintMode::Convex), q.to_vec());
        assert_eq!(project(&[5.0, -3.0], ConstraintMode::Convex), vec![1.0, 0.0]);
    }

    #[test]
    fn projection_idempotent_all_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let n = rng.random_range(1..8);
            let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
            for mode in ConstraintMode::ALL {
                let once = project(&v, mode);
                assert_eq!(project(&once, mode), once, "{mode} {v:?}");
                assert!(is_feasible(&once, mode, 1e-12));
            }
        }
    }

    #[test]
    fn uniform_softmax_loss() {
        // W_c = 0 gives logits [0, 0]
        let model = model_with_head(2, 2, vec![0.0; 4], vec![0.0, 0.0]);
        let z = array![[1.0, 2.0], [0.5, -1.0]];
        let lg = loss_and_grad(&model, &[1.0, 1.0], z.view(), Target::Hard(1)).unwrap();
        assert!((lg.loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(lg.grad, vec![0.0, 0.0]);

        let w = vec![1.0, 2.0, -1.0, 0.5];
        let model = model_with_head(2, 2, w.clone(), vec![0.0, 0.0]);
        // z composed with η = [1, -1] gives [0.5, 3.0]; choose a z whose
        // composition is zero so that the logits stay at [0, 0]
        let z = array![[1.0, 2.0], [1.0, 2.0]];
        let lg = loss_and_grad(&model, &[1.0, -1.0], z.view(), Target::Hard(0)).unwrap();
        assert!((lg.loss - std::f64::consts::LN_2).abs() < 1e-15);
        let wc = Array2::from_shape_vec((2, 2), w).unwrap();
        let expect = z.dot(&wc.t().dot(&array![-0.5, 0.5]));
        for (g, e) in lg.grad.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_loss() {
        let model = model_with_head(2, 3, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0], vec![0.0; 3]);
        let z = array![[1.0, 0.0]];
        let lg = loss_and_grad(&model, &[30.0], z.view(), Target::Hard(0)).unwrap();
        assert!(lg.loss <= 1e-12, "{}", lg.loss);
        assert!(lg.loss > 0.0);
    }

    #[test]
    fn target_out_of_range() {
        let model = model_with_head(2, 2, vec![0.0; 4], vec![0.0; 2]);
        let z = array![[1.0, 2.0]];
        assert!(loss_and_grad(&model, &[1.0], z.view(), Target::Hard(2)).is_err());
    }

    #[test]
    fn overflow_is_numerical_error() {
        let model = model_with_head(1, 2, vec![1.0, -1.0], vec![0.0; 2]);
        let z = array![[f64::MAX]];
        let err = loss_and_grad(&model, &[10.0], z.view(), Target::Hard(0)).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn soft_gradient_matches_finite_differences() {
        let model = init_random(tiny_config(6, 4), 3).unwrap();
        let model = model
            .with_parameter(
                "head.weight",
                Tensor::new(vec![4, 6], (0..24).map(|i| ((i * 7 % 11) as f64 - 5.0) / 4.0).collect()).unwrap(),
            )
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = Array2::from_shape_fn((3, 6), |_| rng.random::<f64>() - 0.5);
        let q = array![0.1, 0.2, 0.3, 0.4];
        let eta = [0.7, -0.2, 1.1];
        let lg = loss_and_grad(&model, &eta, z.view(), Target::Soft(q.view())).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let mut up = eta;
            up[i] += h;
            let mut dn = eta;
            dn[i] -= h;
            let fd = (loss_and_grad(&model, &up, z.view(), Target::Soft(q.view())).unwrap().loss
                - loss_and_grad(&model, &dn, z.view(), Target::Soft(q.view())).unwrap().loss)
                / (2.0 * h);
            assert!((fd - lg.grad[i]).abs() <= 1e-5 * lg.grad[i].abs().max(1e-3));
        }
    }

    fn toy_bundles(model: &Model, n: usize, count: usize, seed: u64) -> Vec<ClsBundle> {
        let d = model.config().hidden_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|i| {
                let z = Array2::from_shape_fn((n, d), |_| rng.random::<f64>() * 2.0 - 1.0);
                let orig = Array1::from_shape_fn(d, |_| rng.random::<f64>() * 2.0 - 1.0);
                ClsBundle::new(model, format!("b{i}"), z, orig, None).unwrap()
            })
            .collect()
    }

    #[test]
    fn single_bundle_never_regresses() {
        let model = init_random(ModelConfig::toy(), 1).unwrap();
        let bundles = toy_bundles(&model, 4, 1, 2);
        for mode in ConstraintMode::ALL {
            let cfg = TrainConfig { seed: 3, ..TrainConfig::new(mode) };
            let m = train(&model, &bundles, &[], &cfg, Provenance::default()).unwrap();
            let init = mean_loss(&model, &project(&[1.0; 4], mode), &bundles, false).unwrap();
            let fin = mean_loss(&model, &m.weights, &bundles, false).unwrap();
            assert!(fin <= init, "{mode}: {fin} > {init}");
            assert_eq!(m.history.len(), 101);
        }
    }

    #[test]
    fn convex_history_stays_on_simplex() {
        let model = init_random(ModelConfig::toy(), 2).unwrap();
        let bundles = toy_bundles(&model, 4, 20, 3);
        let cfg = TrainConfig {
            epochs: 20,
            lr: 0.05,
            ..TrainConfig::new(ConstraintMode::Convex)
        };
        let m = train(&model, &bundles[..15], &bundles[15..], &cfg, Provenance::default()).unwrap();
        for r in &m.history {
            assert!(r.weights.iter().all(|&w| w >= 0.0));
            assert!((r.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        assert!(is_feasible(&m.weights, ConstraintMode::Convex, 1e-12));
    }

    #[test]
    fn training_is_deterministic_and_rejects_empty() {
        let model = init_random(ModelConfig::toy(), 2).unwrap();
        let bundles = toy_bundles(&model, 4, 10, 4);
        let cfg = TrainConfig { epochs: 5, seed: 9, ..TrainConfig::new(ConstraintMode::Unconstrained) };
        let a = train(&model, &bundles[..8], &bundles[8..], &cfg, Provenance::default()).unwrap();
        let b = train(&model, &bundles[..8], &bundles[8..], &cfg, Provenance::default()).unwrap();
        assert_eq!(a, b);
        assert!(train(&model, &[], &bundles, &cfg, Provenance::default()).is_err());
    }

    #[test]
    fn text_record_round_trip() {
        let model = init_random(ModelConfig::toy(), 2).unwrap();
        let bundles = toy_bundles(&model, 7, 6, 5);
        let cfg = TrainConfig { epochs: 3, seed: 1, ..TrainConfig::new(ConstraintMode::Conic) };
        let prov = Provenance { basis: "db4".into(), levels: 2, layer: 4 };
        let m = train(&model, &bundles[..4], &bundles[4..], &cfg, prov).unwrap();
        let text = m.to_text();
        assert!(text.starts_with("mode = conic\n"));
        assert_eq!(CompositionModel::from_text(&text).unwrap(), m);
        assert!(CompositionModel::from_text("mode = conic\n").is_err());
    }
}
