use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Default CAT threshold: locations whose true value exceeds 1.
pub const DEFAULT_CAT_THRESHOLD: f64 = 1.0;

/// Output of [`rescale_to_truth`].
#[derive(Clone, Debug, PartialEq)]
pub struct Rescaled {
    pub map: Vec<f64>,
    pub factor: f64,
    /// The estimate is orthogonal to the truth, so the map was zeroed.
    pub degenerate: bool,
}

/// Multiplies `estimate` by `argmin_c |c estimate - truth|^2`.
pub fn rescale_to_truth(estimate: &[f64], truth: &[f64]) -> Result<Rescaled> {
    check_len(estimate.len(), truth.len(), "estimate and truth maps")?;
    let ee: f64 = estimate.iter().map(|x| x * x).sum();
    if ee == 0.0 {
        return Err(Error::ZeroEstimate);
    }
    let et: f64 = estimate.iter().zip(truth).map(|(e, t)| e * t).sum();
    let factor = et / ee;
    Ok(Rescaled {
        map: estimate.iter().map(|e| factor * e).collect(),
        factor,
        degenerate: factor == 0.0,
    })
}

/// `atanh(r)`.
pub fn fisher_z(r: f64) -> f64 {
    0.5 * ((1.0 + r) / (1.0 - r)).ln()
}

/// Pearson correlation; NaN if either input is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// Correlation over the locations where `truth > threshold`.
pub fn cat(estimate: &[f64], truth: &[f64], threshold: f64) -> Result<f64> {
    check_len(estimate.len(), truth.len(), "estimate and truth maps")?;
    let (e, t): (Vec<f64>, Vec<f64>) = estimate
        .iter()
        .zip(truth)
        .filter(|(_, &t)| t > threshold)
        .map(|(&e, &t)| (e, t))
        .unzip();
    if e.is_empty() {
        return Err(Error::EmptyTruthRegion(threshold));
    }
    Ok(pearson(&e, &t))
}

/// Confusion counts of an estimated mask against a true mask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn new(mask: &[bool], truth: &[bool]) -> Result<Self> {
        check_len(mask.len(), truth.len(), "mask lengths")?;
        let mut c = Confusion::default();
        for (&m, &t) in mask.iter().zip(truth) {
            match (m, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    /// `FP / (FP + TN)`; NaN without true negatives.
    pub fn fpr(&self) -> f64 {
        ratio(self.fp, self.fp + self.tn)
    }

    /// `TP / (TP + FN)`; NaN without true positives.
    pub fn power(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        f64::NAN
    } else {
        a as f64 / b as f64
    }
}

/// `2 |A n B| / (|A| + |B|)`; 1 for two empty masks.
pub fn dice(a: &[bool], b: &[bool]) -> Result<f64> {
    check_len(a.len(), b.len(), "mask lengths")?;
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let total = a.iter().filter(|x| **x).count() + b.iter().filter(|x| **x).count();
    Ok(if total == 0 { 1.0 } else { 2.0 * inter as f64 / total as f64 })
}

/// `|A n B|`.
pub fn overlap(a: &[bool], b: &[bool]) -> usize {
    a.iter().zip(b).filter(|(x, y)| **x && **y).count()
}

fn check_len(a: usize, b: usize, context: &'static str) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            expected: a,
            got: b,
            context,
        });
    }
    Ok(())
}

/// Masks for one subject, one per IC.
pub type SubjectMasks = Vec<Vec<bool>>;

/// Inputs to [`evaluate`] for one method; subject-indexed vectors.
#[derive(Clone, Debug, Default)]
pub struct EvalInput {
    /// `L x V` per subject.
    pub estimates: Vec<DMatrix<f64>>,
    pub truths: Vec<DMatrix<f64>>,
    pub masks: Option<Vec<SubjectMasks>>,
    pub true_masks: Option<Vec<SubjectMasks>>,
    /// `L x L` per subject.
    pub fc_est: Option<Vec<DMatrix<f64>>>,
    pub fc_true: Option<Vec<DMatrix<f64>>>,
}

/// Per-subject tables are `S x L`; map tables are `L x V`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    /// Squared error per location averaged over subjects.
    pub mse: DMatrix<f64>,
    pub corr: DMatrix<f64>,
    pub corr_z: DMatrix<f64>,
    pub cat: DMatrix<f64>,
    pub cat_z: DMatrix<f64>,
    pub fpr: Option<DMatrix<f64>>,
    pub power: Option<DMatrix<f64>>,
    pub dice: Option<DMatrix<f64>>,
    pub mask_size: Option<DMatrix<f64>>,
    pub true_size: Option<DMatrix<f64>>,
    /// Elementwise squared FC error averaged over subjects, `L x L`.
    pub fc_mse: Option<DMatrix<f64>>,
}

impl MetricsReport {
    pub fn n_subjects(&self) -> usize {
        self.corr.nrows()
    }

    pub fn n_ics(&self) -> usize {
        self.corr.ncols()
    }
}

/// Accuracy of estimated maps, masks and FC matrices against the truth.
pub fn evaluate(input: &EvalInput, cat_threshold: f64) -> Result<MetricsReport> {
    let s = input.estimates.len();
    check_len(s, input.truths.len(), "subject counts")?;
    if s == 0 {
        return Err(Error::InvalidArgument("no subjects to evaluate".into()));
    }
    let (l, v) = input.truths[0].shape();
    for (e, t) in input.estimates.iter().zip(&input.truths) {
        if e.shape() != (l, v) || t.shape() != (l, v) {
            return Err(Error::DimensionMismatch {
                expected: l * v,
                got: e.len(),
                context: "estimate and truth shapes",
            });
        }
    }
    let mut mse = DMatrix::zeros(l, v);
    let mut corr = DMatrix::zeros(s, l);
    let mut cat_t = DMatrix::zeros(s, l);
    for (i, (e, t)) in input.estimates.iter().zip(&input.truths).enumerate() {
        mse += (e - t).map(|x| x * x);
        for ic in 0..l {
            let er: Vec<f64> = e.row(ic).iter().copied().collect();
            let tr: Vec<f64> = t.row(ic).iter().copied().collect();
            corr[(i, ic)] = pearson(&er, &tr);
            cat_t[(i, ic)] = cat(&er, &tr, cat_threshold)?;
        }
    }
    mse /= s as f64;

    let mask_tables = match (&input.masks, &input.true_masks) {
        (Some(m), Some(t)) => {
            check_len(s, m.len(), "mask subject count")?;
            check_len(s, t.len(), "true mask subject count")?;
            let mut tables = [(); 5].map(|_| DMatrix::zeros(s, l));
            for i in 0..s {
                check_len(l, m[i].len(), "mask IC count")?;
                check_len(l, t[i].len(), "true mask IC count")?;
                for ic in 0..l {
                    let c = Confusion::new(&m[i][ic], &t[i][ic])?;
                    tables[0][(i, ic)] = c.fpr();
                    tables[1][(i, ic)] = c.power();
                    tables[2][(i, ic)] = dice(&m[i][ic], &t[i][ic])?;
                    tables[3][(i, ic)] = (c.tp + c.fp) as f64;
                    tables[4][(i, ic)] = (c.tp + c.fn_) as f64;
                }
            }
            Some(tables)
        }
        (None, None) => None,
        _ => return Err(Error::InvalidArgument("masks and true masks must be given together".into())),
    };

    let fc_mse = match (&input.fc_est, &input.fc_true) {
        (Some(fe), Some(ft)) => {
            check_len(s, fe.len(), "FC subject count")?;
            check_len(s, ft.len(), "true FC subject count")?;
            let mut acc = DMatrix::zeros(l, l);
            for (a, b) in fe.iter().zip(ft) {
                if a.shape() != (l, l) || b.shape() != (l, l) {
                    return Err(Error::DimensionMismatch {
                        expected: l,
                        got: a.nrows(),
                        context: "FC matrix order",
                    });
                }
                acc += (a - b).map(|x| x * x);
            }
            Some(acc / s as f64)
        }
        (None, None) => None,
        _ => return Err(Error::InvalidArgument("estimated and true FC must be given together".into())),
    };

    let (fpr, power, dice_t, mask_size, true_size) = match mask_tables {
        Some([a, b, c, d, e]) => (Some(a), Some(b), Some(c), Some(d), Some(e)),
        None => (None, None, None, None, None),
    };
    Ok(MetricsReport {
        mse,
        corr_z: corr.map(fisher_z),
        corr,
        cat_z: cat_t.map(fisher_z),
        cat: cat_t,
        fpr,
        power,
        dice: dice_t,
        mask_size,
        true_size,
        fc_mse,
    })
}

/// Scan-rescan agreement between two sessions of the same subjects.
#[derive(Clone, Debug, PartialEq)]
pub struct ReliabilityReport {
    /// `S x L` correlation of the effect maps across sessions.
    pub corr: DMatrix<f64>,
    pub dice: DMatrix<f64>,
    pub overlap: DMatrix<f64>,
    pub size_a: DMatrix<f64>,
    pub size_b: DMatrix<f64>,
}

/// Same operations as [`evaluate`] with session B standing in for the truth.
pub fn reliability(
    effects_a: &[DMatrix<f64>],
    effects_b: &[DMatrix<f64>],
    masks_a: &[SubjectMasks],
    masks_b: &[SubjectMasks],
) -> Result<ReliabilityReport> {
    let s = effects_a.len();
    check_len(s, effects_b.len(), "session subject counts")?;
    check_len(s, masks_a.len(), "session A masks")?;
    check_len(s, masks_b.len(), "session B masks")?;
    if s == 0 {
        return Err(Error::InvalidArgument("no subjects to compare".into()));
    }
    let l = effects_a[0].nrows();
    let mut out = ReliabilityReport {
        corr: DMatrix::zeros(s, l),
        dice: DMatrix::zeros(s, l),
        overlap: DMatrix::zeros(s, l),
        size_a: DMatrix::zeros(s, l),
        size_b: DMatrix::zeros(s, l),
    };
    for i in 0..s {
        if effects_a[i].shape() != effects_b[i].shape() || effects_a[i].nrows() != l {
            return Err(Error::DimensionMismatch {
                expected: effects_a[i].len(),
                got: effects_b[i].len(),
                context: "session effect shapes",
            });
        }
        for ic in 0..l {
            let a: Vec<f64> = effects_a[i].row(ic).iter().copied().collect();
            let b: Vec<f64> = effects_b[i].row(ic).iter().copied().collect();
            out.corr[(i, ic)] = pearson(&a, &b);
            let (ma, mb) = (&masks_a[i][ic], &masks_b[i][ic]);
            out.dice[(i, ic)] = dice(ma, mb)?;
            out.overlap[(i, ic)] = overlap(ma, mb) as f64;
            out.size_a[(i, ic)] = ma.iter().filter(|x| **x).count() as f64;
            out.size_b[(i, ic)] = mb.iter().filter(|x| **x).count() as f64;
        }
    }
    Ok(out)
}
