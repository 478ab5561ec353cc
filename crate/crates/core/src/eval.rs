//! Phoneme error rate with left/right split, mel distortion and spectrogram
//! images.

use std::io::Write;
use std::path::Path;

use duplex_tensor::Tensor;

use crate::{CoreError, Result};

/// Edit counts against a reference of length `reference_len`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PerReport {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_len: usize,
}

impl PerReport {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// `(S + D + I) / N`; zero for an empty reference with no errors.
    pub fn per(&self) -> f64 {
        if self.reference_len == 0 {
            if self.errors() == 0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.errors() as f64 / self.reference_len as f64
        }
    }

    pub fn merge(&mut self, other: &PerReport) {
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
        self.reference_len += other.reference_len;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EditOp {
    Match { reference: usize },
    Substitute { reference: usize },
    Delete { reference: usize },
    /// Attributed to the preceding reference position (0 when none precedes).
    Insert { reference: usize },
}

impl EditOp {
    pub fn reference(self) -> usize {
        match self {
            EditOp::Match { reference }
            | EditOp::Substitute { reference }
            | EditOp::Delete { reference }
            | EditOp::Insert { reference } => reference,
        }
    }
}

fn table<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Vec<Vec<usize>> {
    let (n, m) = (reference.len(), hypothesis.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d
}

/// Unit-cost edit distance.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    table(a, b)[a.len()][b.len()]
}

/// A minimum-cost alignment in reference order. Ties prefer the diagonal, then
/// deletion, then insertion.
pub fn align<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Vec<EditOp> {
    let d = table(reference, hypothesis);
    let (mut i, mut j) = (reference.len(), hypothesis.len());
    let mut ops = Vec::with_capacity(i.max(j));
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            if d[i][j] == d[i - 1][j - 1] + usize::from(!same) {
                ops.push(if same {
                    EditOp::Match { reference: i - 1 }
                } else {
                    EditOp::Substitute { reference: i - 1 }
                });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            ops.push(EditOp::Delete { reference: i - 1 });
            i -= 1;
        } else {
            ops.push(EditOp::Insert {
                reference: i.saturating_sub(1),
            });
            j -= 1;
        }
    }
    ops.reverse();
    ops
}

fn count(ops: &[EditOp], reference_len: usize, keep: impl Fn(usize) -> bool) -> PerReport {
    let mut r = PerReport {
        reference_len,
        ..PerReport::default()
    };
    for op in ops.iter().filter(|op| keep(op.reference())) {
        match op {
            EditOp::Match { .. } => {}
            EditOp::Substitute { .. } => r.substitutions += 1,
            EditOp::Delete { .. } => r.deletions += 1,
            EditOp::Insert { .. } => r.insertions += 1,
        }
    }
    r
}

/// Phoneme error rate of `hypothesis` against a non-empty `reference`.
pub fn per<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<PerReport> {
    if reference.is_empty() {
        return Err(CoreError::Data("PER needs a non-empty reference".into()));
    }
    Ok(count(&align(reference, hypothesis), reference.len(), |_| true))
}

/// Errors split at the reference midpoint: the left half is the first
/// `⌊N/2⌋` reference positions. Hypothesis symbols follow their aligned
/// reference position.
pub fn split_per<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<(PerReport, PerReport)> {
    if reference.is_empty() {
        return Err(CoreError::Data("PER needs a non-empty reference".into()));
    }
    let ops = align(reference, hypothesis);
    let mid = reference.len() / 2;
    Ok((
        count(&ops, mid, |r| r < mid),
        count(&ops, reference.len() - mid, |r| r >= mid),
    ))
}

/// Corpus-level PER over all pairs, plus left and right halves.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PerSummary {
    pub overall: PerReport,
    pub left: PerReport,
    pub right: PerReport,
}

pub fn right_half_per<T: PartialEq, S: AsRef<[T]>>(refs: &[S], hyps: &[S]) -> Result<PerSummary> {
    if refs.len() != hyps.len() {
        return Err(CoreError::Data(format!(
            "{} references but {} hypotheses",
            refs.len(),
            hyps.len()
        )));
    }
    let mut s = PerSummary::default();
    for (r, h) in refs.iter().zip(hyps) {
        s.overall.merge(&per(r.as_ref(), h.as_ref())?);
        let (left, right) = split_per(r.as_ref(), h.as_ref())?;
        s.left.merge(&left);
        s.right.merge(&right);
    }
    Ok(s)
}

/// Frame-wise mean squared error between a reference and a generated mel over
/// their common length, split at the frame midpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct MelDistortion {
    pub per_frame: Vec<f64>,
    pub overall: f64,
    pub left: f64,
    pub right: f64,
    pub reference_frames: usize,
    pub generated_frames: usize,
}

impl MelDistortion {
    pub fn new(reference: &Tensor, generated: &Tensor) -> Result<Self> {
        if reference.cols() != generated.cols() {
            return Err(CoreError::Data("mel widths differ".into()));
        }
        let n = reference.rows().min(generated.rows());
        let per_frame: Vec<f64> = (0..n)
            .map(|t| {
                let (a, b) = (reference.row(t), generated.row(t));
                a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
            })
            .collect();
        let mean = |s: &[f64]| if s.is_empty() { 0.0 } else { s.iter().sum::<f64>() / s.len() as f64 };
        let mid = n / 2;
        Ok(Self {
            overall: mean(&per_frame),
            left: mean(&per_frame[..mid]),
            right: mean(&per_frame[mid..]),
            per_frame,
            reference_frames: reference.rows(),
            generated_frames: generated.rows(),
        })
    }
}

/// Binary PGM bytes: width = frames, height = mel bins, top row is the highest
/// bin, values min-max scaled to 0–255 (all zero when constant).
pub fn spectrogram_pgm(mel: &Tensor) -> Result<Vec<u8>> {
    if !mel.is_finite() {
        return Err(CoreError::Data("cannot render a non-finite mel".into()));
    }
    let (frames, bins) = (mel.rows(), mel.cols());
    let lo = mel.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mel.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = format!("P5\n{frames} {bins}\n255\n").into_bytes();
    for b in (0..bins).rev() {
        for t in 0..frames {
            let px = if hi > lo {
                ((mel.at(t, b) - lo) / (hi - lo) * 255.0).round() as u8
            } else {
                0
            };
            out.push(px);
        }
    }
    Ok(out)
}

pub fn render_spectrogram_image(mel: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = spectrogram_pgm(mel)?;
    let mut f = std::fs::File::create(path).map_err(|e| CoreError::io(format!("creating {}", path.display()), e))?;
    f.write_all(&bytes)
        .map_err(|e| CoreError::io(format!("writing {}", path.display()), e))
}
