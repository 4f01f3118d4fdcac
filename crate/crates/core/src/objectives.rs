//! Detection, classification and expert-selection losses.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{Error, Result};

pub const LOG_FLOOR: f64 = 1e-12;

/// How wrong-class prototypes enter the classification loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// `max(0, margin - d^2)` per wrong prototype.
    #[default]
    Hinge,
    /// Plain sum of squared distances to every prototype.
    Literal,
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hinge" => Ok(LossMode::Hinge),
            "literal" => Ok(LossMode::Literal),
            other => Err(Error::Usage(format!("unknown loss mode '{}'", other))),
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::Hinge => "hinge",
            LossMode::Literal => "literal",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub detection: f64,
    pub classification: f64,
    pub selection: f64,
    pub lambda_slt: f64,
    pub margin: f64,
    pub mode: LossMode,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            detection: 0.35,
            classification: 0.5,
            selection: 0.15,
            lambda_slt: 0.01,
            margin: 1.0,
            mode: LossMode::Hinge,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.detection, self.classification, self.selection, self.lambda_slt, self.margin];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// `-sum_m log D_m[y_m > 0]`, with the log clamped at [`LOG_FLOOR`].
pub fn detection_loss(tape: &mut Tape, detect: Var, labels: &[u8]) -> Result<Var> {
    let rows = tape.value(detect).rows();
    if labels.len() != rows {
        return Err(Error::dim("detection_loss", format!("{} labels for {} hosts", labels.len(), rows)));
    }
    let picks = labels.iter().enumerate().map(|(m, &y)| (m, usize::from(y > 0))).collect();
    let p = tape.gather(detect, picks)?;
    let lp = tape.log(p, LOG_FLOOR)?;
    let s = tape.sum(lp)?;
    tape.scale(s, -1.0)
}

/// Prototype loss over faulty hosts only.
pub fn classification_loss(
    tape: &mut Tape,
    classify: Var,
    prototypes: Var,
    labels: &[u8],
    mode: LossMode,
    margin: f64,
) -> Result<Var> {
    let rows = tape.value(classify).rows();
    let classes = tape.value(prototypes).rows();
    if labels.len() != rows {
        return Err(Error::dim("classification_loss", format!("{} labels for {} hosts", labels.len(), rows)));
    }
    if let Some(&y) = labels.iter().find(|&&y| y as usize >= classes) {
        return Err(Error::Validation(format!("label {} has no prototype", y)));
    }
    let mut own = Vec::new();
    let mut other = Vec::new();
    for (m, &y) in labels.iter().enumerate() {
        if y == 0 {
            continue;
        }
        own.push((m, y as usize));
        other.extend((0..classes).filter(|&z| z != y as usize).map(|z| (m, z)));
    }
    if own.is_empty() {
        return Ok(tape.constant(Matrix::scalar(0.0)));
    }
    let dist = tape.pairwise_sq_dist(classify, prototypes)?;
    let pull = tape.gather(dist, own)?;
    let pull = tape.sum(pull)?;
    if other.is_empty() {
        return Ok(pull);
    }
    let wrong = tape.gather(dist, other)?;
    let push = match mode {
        LossMode::Literal => tape.sum(wrong)?,
        LossMode::Hinge => {
            let neg = tape.scale(wrong, -1.0)?;
            let gap = tape.add_scalar(neg, margin)?;
            let hinge = tape.relu(gap)?;
            tape.sum(hinge)?
        }
    };
    tape.add(pull, push)
}

/// `lambda * mean_m sum_g s_{m,g}^2`.
pub fn selection_loss(tape: &mut Tape, similarity: Var, lambda: f64) -> Result<Var> {
    let hosts = tape.value(similarity).rows().max(1);
    let sq = tape.l2_norm_sq(similarity)?;
    tape.scale(sq, lambda / hosts as f64)
}

pub fn final_loss(tape: &mut Tape, ld: Var, lc: Var, ls: Var, w: &LossWeights) -> Result<Var> {
    let a = tape.scale(ld, w.detection)?;
    let b = tape.scale(lc, w.classification)?;
    let c = tape.scale(ls, w.selection)?;
    let ab = tape.add(a, b)?;
    tape.add(ab, c)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub detection: f64,
    pub classification: f64,
    pub selection: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn accumulate(&mut self, other: &LossBreakdown) {
        self.detection += other.detection;
        self.classification += other.classification;
        self.selection += other.selection;
        self.total += other.total;
    }

    pub fn scaled(&self, f: f64) -> LossBreakdown {
        LossBreakdown {
            detection: self.detection * f,
            classification: self.classification * f,
            selection: self.selection * f,
            total: self.total * f,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn detect(rows: &[[f64; 2]]) -> (Tape, Var) {
        let mut t = Tape::new();
        let v = t.leaf(Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap());
        (t, v)
    }

    #[test]
    fn detection_loss_examples() {
        let (mut t, d) = detect(&[[1.0, 0.0]]);
        let l = detection_loss(&mut t, d, &[0]).unwrap();
        assert_eq!(t.scalar(l), 0.0);

        let (mut t, d) = detect(&[[0.5, 0.5]]);
        let l = detection_loss(&mut t, d, &[1]).unwrap();
        assert!((t.scalar(l) - 0.693_147_180_559_945_3).abs() < 1e-12);

        let (mut t, d) = detect(&[[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]);
        let l = detection_loss(&mut t, d, &[0, 3, 1]).unwrap();
        assert_eq!(t.scalar(l), 0.0);
    }

    #[test]
    fn detection_loss_falls_as_mass_moves_to_truth() {
        let mut last = f64::INFINITY;
        for i in 1..20 {
            let p = i as f64 / 20.0;
            let (mut t, d) = detect(&[[1.0 - p, p]]);
            let l = detection_loss(&mut t, d, &[2]).unwrap();
            assert!(t.scalar(l) < last);
            last = t.scalar(l);
        }
    }

    fn protos() -> Matrix {
        Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap()
    }

    #[test]
    fn hinge_zero_when_on_prototype_and_far_from_others() {
        let mut t = Tape::new();
        let c = t.leaf(Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap());
        let p = t.leaf(protos());
        let l = classification_loss(&mut t, c, p, &[1], LossMode::Hinge, 1.0).unwrap();
        // distances^2 to wrong prototypes: 1 and 5, both >= margin
        assert_eq!(t.scalar(l), 0.0);
    }

    #[test]
    fn no_faulty_hosts_gives_zero_classification_loss() {
        let mut t = Tape::new();
        let c = t.leaf(Matrix::from_rows(&[vec![0.3, 0.1], vec![0.7, 0.2]]).unwrap());
        let p = t.leaf(protos());
        for mode in [LossMode::Hinge, LossMode::Literal] {
            let l = classification_loss(&mut t, c, p, &[0, 0], mode, 1.0).unwrap();
            assert_eq!(t.scalar(l), 0.0);
        }
    }

    #[test]
    fn literal_mode_matches_hand_summation() {
        let mut t = Tape::new();
        let pm = Matrix::from_rows(&[vec![0.2, 0.4], vec![0.9, 0.1]]).unwrap();
        let cm = Matrix::from_rows(&[vec![0.5, 0.5], vec![0.1, 0.3], vec![0.7, 0.6]]).unwrap();
        let c = t.leaf(cm.clone());
        let p = t.leaf(pm.clone());
        let labels = [1u8, 0, 1];
        let l = classification_loss(&mut t, c, p, &labels, LossMode::Literal, 1.0).unwrap();
        let d2 = |m: usize, z: usize| -> f64 { (0..2).map(|k| (cm.get(m, k) - pm.get(z, k)).powi(2)).sum() };
        let mut expect = 0.0;
        for m in [0usize, 2] {
            expect += d2(m, 1) + d2(m, 0);
        }
        assert!((t.scalar(l) - expect).abs() < 1e-12);

        let lh = classification_loss(&mut t, c, p, &labels, LossMode::Hinge, 1.0).unwrap();
        let expect_h: f64 = [0usize, 2].iter().map(|&m| d2(m, 1) + (1.0 - d2(m, 0)).max(0.0)).sum();
        assert!((t.scalar(lh) - expect_h).abs() < 1e-12);
    }

    #[test]
    fn selection_loss_examples() {
        let mut t = Tape::new();
        let s = t.leaf(Matrix::row_vector(vec![1.0, 0.0, 0.0]));
        let l = selection_loss(&mut t, s, 0.1).unwrap();
        assert!((t.scalar(l) - 0.1).abs() < 1e-15);

        let z = t.leaf(Matrix::zeros(4, 3));
        let l = selection_loss(&mut t, z, 0.5).unwrap();
        assert_eq!(t.scalar(l), 0.0);

        let two = t.leaf(Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let l = selection_loss(&mut t, two, 1.0).unwrap();
        assert_eq!(t.scalar(l), 1.0);
    }

    #[test]
    fn final_loss_is_weighted_sum() {
        let mut t = Tape::new();
        let one = t.constant(Matrix::scalar(1.0));
        let w = LossWeights::default();
        let l = final_loss(&mut t, one, one, one, &w).unwrap();
        assert!((t.scalar(l) - 1.0).abs() < 1e-15);

        let (a, b, c) =
            (t.constant(Matrix::scalar(2.0)), t.constant(Matrix::scalar(7.0)), t.constant(Matrix::scalar(3.0)));
        let only_d = LossWeights { classification: 0.0, selection: 0.0, ..w };
        let l = final_loss(&mut t, a, b, c, &only_d).unwrap();
        assert_eq!(t.scalar(l), 0.7);

        let zero = t.constant(Matrix::scalar(0.0));
        let l = final_loss(&mut t, zero, zero, zero, &w).unwrap();
        assert_eq!(t.scalar(l), 0.0);
    }

    #[test]
    fn rejects_negative_weights_and_bad_mode() {
        let w = LossWeights { selection: -1.0, ..LossWeights::default() };
        assert!(w.validate().is_err());
        assert!("triplet".parse::<LossMode>().is_err());
        assert_eq!("literal".parse::<LossMode>().unwrap(), LossMode::Literal);
    }
}
