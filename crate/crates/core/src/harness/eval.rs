//! Accuracy tables, error breakdowns and input-space reweighting.

use ndarray::Axis;

use crate::composer::{predict, ClsBundle, CompositionModel};
use crate::error::{Error, Result};
use crate::raster::Image;
use crate::vit::{argmax, classify, Model};
use crate::wavelet::PrimitiveSet;

/// Which representation is classified.
#[derive(Debug, Clone, Copy)]
pub enum Pathway<'a> {
    /// The unmodified image's CLS token.
    Original,
    /// Plain sum of the primitive tokens.
    Summed,
    Learned(&'a CompositionModel),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reference {
    GroundTruth,
    OriginalPrediction,
}

pub fn predictions(model: &Model, pathway: Pathway<'_>, bundles: &[ClsBundle]) -> Result<Vec<usize>> {
    bundles
        .iter()
        .map(|b| match pathway {
            Pathway::Original => Ok(argmax(classify(model, b.original.view())?.view())),
            Pathway::Summed => Ok(argmax(classify(model, b.primitives.sum_axis(Axis(0)).view())?.view())),
            Pathway::Learned(c) => predict(model, &c.weights, b.primitives.view()),
        })
        .collect()
}

/// Reference classes of `bundles`.
pub fn references(bundles: &[ClsBundle], reference: Reference) -> Result<Vec<usize>> {
    bundles
        .iter()
        .map(|b| match reference {
            Reference::GroundTruth => b
                .label
                .ok_or_else(|| Error::Data(format!("bundle `{}` has no ground-truth label", b.id))),
            Reference::OriginalPrediction => Ok(b.target),
        })
        .collect()
}

/// Fraction of positions where the two class lists agree.
pub fn agreement(predicted: &[usize], reference: &[usize]) -> Result<f64> {
    if predicted.len() != reference.len() {
        return Err(Error::Shape(format!(
            "{} predictions against {} references",
            predicted.len(),
            reference.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::Data("accuracy over an empty set".into()));
    }
    let hits = predicted.iter().zip(reference).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / predicted.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub condition: String,
    pub model: String,
    pub basis: String,
    pub levels: usize,
    pub acc_gt: f64,
    pub acc_relative: f64,
    pub n: usize,
}

pub fn eval_accuracy(model: &Model, pathway: Pathway<'_>, bundles: &[ClsBundle], reference: Reference) -> Result<f64> {
    agreement(&predictions(model, pathway, bundles)?, &references(bundles, reference)?)
}

/// One accuracy-table row: ground-truth and relative accuracy.
pub fn eval_row(
    model: &Model,
    pathway: Pathway<'_>,
    bundles: &[ClsBundle],
    condition: &str,
    model_tag: &str,
    basis: &str,
    levels: usize,
) -> Result<EvalRow> {
    let preds = predictions(model, pathway, bundles)?;
    Ok(EvalRow {
        condition: condition.to_string(),
        model: model_tag.to_string(),
        basis: basis.to_string(),
        levels,
        acc_gt: agreement(&preds, &references(bundles, Reference::GroundTruth)?)?,
        acc_relative: agreement(&preds, &references(bundles, Reference::OriginalPrediction)?)?,
        n: bundles.len(),
    })
}

/// Counts of the four correctness outcomes of a learned and an original
/// classifier on the same images.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ErrorReport {
    /// Learned wrong.
    pub learned: usize,
    /// Original wrong.
    pub original: usize,
    /// Learned wrong, original right.
    pub learned_only: usize,
    /// Original wrong, learned right.
    pub original_only: usize,
    pub both: usize,
    pub n: usize,
}

impl ErrorReport {
    pub fn from_flags(learned_correct: &[bool], original_correct: &[bool]) -> Result<Self> {
        if learned_correct.len() != original_correct.len() {
            return Err(Error::Shape(format!(
                "{} learned flags against {} original flags",
                learned_correct.len(),
                original_correct.len()
            )));
        }
        let mut r = ErrorReport {
            learned: 0,
            original: 0,
            learned_only: 0,
            original_only: 0,
            both: 0,
            n: learned_correct.len(),
        };
        for (&l, &o) in learned_correct.iter().zip(original_correct) {
            match (l, o) {
                (false, true) => r.learned_only += 1,
                (true, false) => r.original_only += 1,
                (false, false) => r.both += 1,
                (true, true) => {}
            }
        }
        r.learned = r.learned_only + r.both;
        r.original = r.original_only + r.both;
        Ok(r)
    }

    /// `100 · count / n`.
    pub fn percent(&self, count: usize) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            100.0 * count as f64 / self.n as f64
        }
    }

    /// `[learned, original, learned_only, original_only, both]` as percentages.
    pub fn percentages(&self) -> [f64; 5] {
        [
            self.percent(self.learned),
            self.percent(self.original),
            self.percent(self.learned_only),
            self.percent(self.original_only),
            self.percent(self.both),
        ]
    }
}

pub fn error_breakdown(learned: &[usize], original: &[usize], labels: &[usize]) -> Result<ErrorReport> {
    if learned.len() != labels.len() || original.len() != labels.len() {
        return Err(Error::Shape(format!(
            "error breakdown needs equal lengths, got {} / {} / {}",
            learned.len(),
            original.len(),
            labels.len()
        )));
    }
    let lf: Vec<bool> = learned.iter().zip(labels).map(|(p, t)| p == t).collect();
    let of: Vec<bool> = original.iter().zip(labels).map(|(p, t)| p == t).collect();
    ErrorReport::from_flags(&lf, &of)
}

/// `Σₚ weights[p] · primitive[p]` in pixel space, unclipped.
pub fn reweight_image(primitives: &PrimitiveSet, weights: &[f64]) -> Result<Image> {
    primitives.weighted_sum(weights)
}
