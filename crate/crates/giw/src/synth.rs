//! Closed-form synthetic data: piecewise-uniform joint densities over labeled
//! axis-aligned boxes. Covers the 2x2-grid toy problems, the four canonical
//! support-relationship cases, and the label-noise / class-prior-shift
//! corruptions.

use ndarray::Array2;
use rand::prelude::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, Provenance};
use crate::error::{Error, Result};

/// Axis-aligned box carrying one class label and a probability mass.
///
/// Within its distribution, the box is drawn with probability `mass` and the
/// point is uniform over the box, so the joint density on the box is
/// `mass / area` for the box label and zero for other labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxRegion {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub label: usize,
    pub mass: f64,
}

impl BoxRegion {
    pub fn new(lo: [f64; 2], hi: [f64; 2], label: usize, mass: f64) -> Result<Self> {
        if lo[0] >= hi[0] || lo[1] >= hi[1] {
            return Err(Error::domain(format!(
                "box corners must satisfy lo < hi per axis, got {lo:?}..{hi:?}"
            )));
        }
        if mass < 0.0 {
            return Err(Error::domain(format!("box mass must be >= 0, got {mass}")));
        }
        Ok(BoxRegion { lo, hi, label, mass })
    }

    pub fn area(&self) -> f64 {
        (self.hi[0] - self.lo[0]) * (self.hi[1] - self.lo[1])
    }

    pub fn center(&self) -> [f64; 2] {
        [
            0.5 * (self.lo[0] + self.hi[0]),
            0.5 * (self.lo[1] + self.hi[1]),
        ]
    }

    pub fn contains(&self, x: [f64; 2]) -> bool {
        x[0] >= self.lo[0] && x[0] < self.hi[0] && x[1] >= self.lo[1] && x[1] < self.hi[1]
    }

    /// Joint density contribution of this box at `(x, y)`.
    pub fn density(&self, x: [f64; 2], y: usize) -> f64 {
        if y == self.label && self.contains(x) {
            self.mass / self.area()
        } else {
            0.0
        }
    }

    /// Area of the geometric intersection with another box.
    pub fn overlap_area(&self, other: &BoxRegion) -> f64 {
        let w = (self.hi[0].min(other.hi[0]) - self.lo[0].max(other.lo[0])).max(0.0);
        let h = (self.hi[1].min(other.hi[1]) - self.lo[1].max(other.lo[1])).max(0.0);
        w * h
    }
}

/// Exact training and test joint densities as labeled box lists.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSpec {
    pub train: Vec<BoxRegion>,
    pub test: Vec<BoxRegion>,
}

/// Which side of a [`SupportSpec`] to draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Train,
    Test,
}

/// Relationship between the training and test supports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum SupportCase {
    /// (i) supports match exactly.
    Equal,
    /// (ii) training support strictly covers the test support.
    TrainWider,
    /// (iii) test support strictly covers the training support.
    TestWider,
    /// (iv) both set differences are non-empty.
    PartialOverlap,
}

impl SupportCase {
    pub fn tag(&self) -> &'static str {
        match self {
            SupportCase::Equal => "i",
            SupportCase::TrainWider => "ii",
            SupportCase::TestWider => "iii",
            SupportCase::PartialOverlap => "iv",
        }
    }
}

/// Grid toy variant: labels of the test-only squares either match the
/// adjacent training squares or are swapped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridVariant {
    Aligned,
    Checkerboard,
}

/// Canonical support-relationship cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseId {
    I,
    II,
    III,
    IV,
}

impl CaseId {
    pub fn all() -> [CaseId; 4] {
        [CaseId::I, CaseId::II, CaseId::III, CaseId::IV]
    }

    pub fn tag(&self) -> &'static str {
        match self {
            CaseId::I => "i",
            CaseId::II => "ii",
            CaseId::III => "iii",
            CaseId::IV => "iv",
        }
    }
}

// 2x2 grid geometry: unit squares with a 0.1 margin between adjacent squares.
const LEFT: (f64, f64) = (0.0, 1.0);
const RIGHT: (f64, f64) = (1.1, 2.1);
const BOTTOM: (f64, f64) = (0.0, 1.0);
const TOP: (f64, f64) = (1.1, 2.1);

const RED: usize = 1;
const BLUE: usize = 0;

fn square(xs: (f64, f64), ys: (f64, f64), label: usize, mass: f64) -> BoxRegion {
    BoxRegion::new([xs.0, ys.0], [xs.1, ys.1], label, mass).expect("static geometry is valid")
}

impl SupportSpec {
    pub fn new(train: Vec<BoxRegion>, test: Vec<BoxRegion>) -> Result<Self> {
        for (name, boxes) in [("train", &train), ("test", &test)] {
            if boxes.is_empty() {
                return Err(Error::domain(format!("{name} side has no boxes")));
            }
            let total: f64 = boxes.iter().map(|b| b.mass).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::domain(format!(
                    "{name} masses sum to {total}, expected 1"
                )));
            }
            for i in 0..boxes.len() {
                for j in (i + 1)..boxes.len() {
                    if boxes[i].overlap_area(&boxes[j]) > 0.0 {
                        return Err(Error::domain(format!(
                            "{name} boxes {i} and {j} overlap"
                        )));
                    }
                }
            }
        }
        Ok(SupportSpec { train, test })
    }

    fn side(&self, side: Side) -> &[BoxRegion] {
        match side {
            Side::Train => &self.train,
            Side::Test => &self.test,
        }
    }

    /// Joint density of the chosen side at `(x, y)`.
    pub fn density(&self, side: Side, x: [f64; 2], y: usize) -> f64 {
        self.side(side).iter().map(|b| b.density(x, y)).sum()
    }

    /// The 2x2-grid toy problem. Training: the two left squares (red on top,
    /// blue on the bottom), mass 1/2 each. Test: all four squares, mass 1/4
    /// each; the right-square labels depend on the variant.
    pub fn grid_example(variant: GridVariant) -> SupportSpec {
        let (rt, rb) = match variant {
            GridVariant::Aligned => (RED, BLUE),
            GridVariant::Checkerboard => (BLUE, RED),
        };
        SupportSpec::new(
            vec![
                square(LEFT, TOP, RED, 0.5),
                square(LEFT, BOTTOM, BLUE, 0.5),
            ],
            vec![
                square(LEFT, TOP, RED, 0.25),
                square(LEFT, BOTTOM, BLUE, 0.25),
                square(RIGHT, TOP, rt, 0.25),
                square(RIGHT, BOTTOM, rb, 0.25),
            ],
        )
        .expect("grid layout is valid")
    }

    /// Canonical box layout for each support-relationship case. Labels are
    /// aligned (right squares repeat the left-square labels).
    pub fn case_spec(case: CaseId) -> SupportSpec {
        let four = |m: f64| {
            vec![
                square(LEFT, TOP, RED, m),
                square(LEFT, BOTTOM, BLUE, m),
                square(RIGHT, TOP, RED, m),
                square(RIGHT, BOTTOM, BLUE, m),
            ]
        };
        let left_two = |m: f64| {
            vec![
                square(LEFT, TOP, RED, m),
                square(LEFT, BOTTOM, BLUE, m),
            ]
        };
        let spec = match case {
            CaseId::I => SupportSpec::new(four(0.25), four(0.25)),
            CaseId::II => SupportSpec::new(four(0.25), left_two(0.5)),
            CaseId::III => SupportSpec::new(left_two(0.5), four(0.25)),
            CaseId::IV => {
                // Training keeps the left column plus a square seen only in
                // training (below the left-bottom square); test keeps the right
                // column plus the left-top square.
                let extra = square(LEFT, (-1.1, -0.1), BLUE, 1.0 / 3.0);
                SupportSpec::new(
                    vec![
                        square(LEFT, TOP, RED, 1.0 / 3.0),
                        square(LEFT, BOTTOM, BLUE, 1.0 / 3.0),
                        extra,
                    ],
                    vec![
                        square(LEFT, TOP, RED, 1.0 / 3.0),
                        square(RIGHT, TOP, RED, 1.0 / 3.0),
                        square(RIGHT, BOTTOM, BLUE, 1.0 / 3.0),
                    ],
                )
            }
        };
        spec.expect("case layouts are valid")
    }

    /// Draws `n` labeled points from one side: boxes chosen by mass, points
    /// uniform within their box.
    pub fn sample(&self, side: Side, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::domain("sample size must be >= 1".to_string()));
        }
        let boxes = self.side(side);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut features = Array2::<f64>::zeros((n, 2));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let b = pick_box(boxes, &mut rng);
            let x = rng.gen_range(b.lo[0]..b.hi[0]);
            let y = rng.gen_range(b.lo[1]..b.hi[1]);
            features[[i, 0]] = x;
            features[[i, 1]] = y;
            labels.push(b.label);
        }
        let provenance = match side {
            Side::Train => Provenance::Train,
            Side::Test => Provenance::Test,
        };
        Dataset::new(features, labels, provenance)
    }

    /// Test boxes with no same-label training box covering them at the given
    /// point -- used to find the boxes "outside" the training support.
    fn train_overlap_fraction(&self, test_box: &BoxRegion) -> f64 {
        let overlap: f64 = self
            .train
            .iter()
            .filter(|t| t.label == test_box.label)
            .map(|t| test_box.overlap_area(t))
            .sum();
        overlap / test_box.area()
    }

    /// Test boxes entirely outside the training support.
    pub fn test_only_boxes(&self) -> Vec<&BoxRegion> {
        self.test
            .iter()
            .filter(|b| self.train_overlap_fraction(b) < 1e-12)
            .collect()
    }

    /// The tiny validation set of the grid toys: one uniform point per
    /// training square plus the center point of each test-only square, all
    /// labeled according to the test distribution.
    pub fn toy_validation(&self, seed: u64) -> Result<Dataset> {
        let mut rows: Vec<([f64; 2], usize)> = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for b in &self.train {
            let x = rng.gen_range(b.lo[0]..b.hi[0]);
            let y = rng.gen_range(b.lo[1]..b.hi[1]);
            let label = self.test_label_at([x, y]).unwrap_or(b.label);
            rows.push(([x, y], label));
        }
        for b in self.test_only_boxes() {
            rows.push((b.center(), b.label));
        }
        let mut features = Array2::<f64>::zeros((rows.len(), 2));
        let mut labels = Vec::with_capacity(rows.len());
        for (i, (x, y)) in rows.iter().enumerate() {
            features[[i, 0]] = x[0];
            features[[i, 1]] = x[1];
            labels.push(*y);
        }
        Dataset::new(features, labels, Provenance::Validation)
    }

    /// Validation set with `per_box` points from every test box, following
    /// the toy construction: boxes overlapping the training support get
    /// uniform random points, never-seen boxes get fixed interior points
    /// (spaced along the box diagonal, like the center point of the 4-point
    /// toy set).
    pub fn boxed_validation(&self, per_box: usize, seed: u64) -> Result<Dataset> {
        if per_box == 0 {
            return Err(Error::domain("per_box must be >= 1".to_string()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = per_box * self.test.len();
        let mut features = Array2::<f64>::zeros((n, 2));
        let mut labels = Vec::with_capacity(n);
        let mut i = 0;
        for b in &self.test {
            let seen = self.train_overlap_fraction(b) > 1e-12;
            for k in 0..per_box {
                let (x, y) = if seen {
                    (
                        rng.gen_range(b.lo[0]..b.hi[0]),
                        rng.gen_range(b.lo[1]..b.hi[1]),
                    )
                } else {
                    let frac = (k + 1) as f64 / (per_box + 1) as f64;
                    (
                        b.lo[0] + frac * (b.hi[0] - b.lo[0]),
                        b.lo[1] + frac * (b.hi[1] - b.lo[1]),
                    )
                };
                features[[i, 0]] = x;
                features[[i, 1]] = y;
                labels.push(b.label);
                i += 1;
            }
        }
        Dataset::new(features, labels, Provenance::Validation)
    }

    /// Test-side label at `x`, if `x` lies in some test box.
    pub fn test_label_at(&self, x: [f64; 2]) -> Option<usize> {
        self.test.iter().find(|b| b.contains(x)).map(|b| b.label)
    }

    /// Number of classes mentioned by either side.
    pub fn n_classes(&self) -> usize {
        self.train
            .iter()
            .chain(&self.test)
            .map(|b| b.label)
            .max()
            .unwrap_or(0)
            + 1
    }

    /// Bounding box of the test support.
    pub fn test_bounds(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for b in &self.test {
            for a in 0..2 {
                lo[a] = lo[a].min(b.lo[a]);
                hi[a] = hi[a].max(b.hi[a]);
            }
        }
        (lo, hi)
    }

    /// Classifies the support relationship from the box geometry.
    pub fn support_case(&self) -> SupportCase {
        let test_covered = self
            .test
            .iter()
            .all(|b| self.train_overlap_fraction(b) > 1.0 - 1e-9);
        let train_covered = self.train.iter().all(|t| {
            let overlap: f64 = self
                .test
                .iter()
                .filter(|b| b.label == t.label)
                .map(|b| t.overlap_area(b))
                .sum();
            overlap / t.area() > 1.0 - 1e-9
        });
        match (train_covered, test_covered) {
            (true, true) => SupportCase::Equal,
            (false, true) => SupportCase::TrainWider,
            (true, false) => SupportCase::TestWider,
            (false, false) => SupportCase::PartialOverlap,
        }
    }
}

fn pick_box<'a>(boxes: &'a [BoxRegion], rng: &mut ChaCha8Rng) -> &'a BoxRegion {
    let u: f64 = rng.gen_range(0.0..1.0);
    let mut acc = 0.0;
    for b in boxes {
        acc += b.mass;
        if u < acc {
            return b;
        }
    }
    boxes.last().expect("spec has at least one box")
}

/// Flips each label independently with probability `rate`, uniformly among
/// the other `n_classes - 1` labels.
pub fn apply_label_noise(data: &Dataset, rate: f64, n_classes: usize, seed: u64) -> Result<Dataset> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::domain(format!("noise rate {rate} outside [0, 1)")));
    }
    if n_classes < 2 {
        return Err(Error::domain("label noise needs at least 2 classes".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = data
        .labels
        .iter()
        .map(|&y| {
            if rng.gen_range(0.0..1.0) < rate {
                // Uniform over the other classes; never reproduces `y`.
                let shift = rng.gen_range(1..n_classes);
                (y + shift) % n_classes
            } else {
                y
            }
        })
        .collect();
    Dataset::new(data.features.clone(), labels, data.provenance)
}

/// Subsamples the `minority` classes so that the per-class count ratio
/// between the largest majority class and every minority class is `rho`
/// (floor division). Row order of the kept examples is preserved.
pub fn apply_class_prior_shift(
    data: &Dataset,
    rho: f64,
    minority: &[usize],
    seed: u64,
) -> Result<Dataset> {
    if rho < 1.0 {
        return Err(Error::domain(format!("rho must be >= 1, got {rho}")));
    }
    if rho == 1.0 {
        // ratio 1 requests no imbalance
        return Ok(data.clone());
    }
    let n_classes = data.labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; n_classes];
    for &y in &data.labels {
        counts[y] += 1;
    }
    let majority_count = counts
        .iter()
        .enumerate()
        .filter(|(c, _)| !minority.contains(c))
        .map(|(_, &n)| n)
        .max()
        .ok_or_else(|| Error::domain("every class is a minority class".to_string()))?;
    let target = (majority_count as f64 / rho).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep: Vec<usize> = Vec::with_capacity(data.len());
    for &class in minority {
        if counts.get(class).copied().unwrap_or(0) == 0 {
            continue;
        }
        if target == 0 {
            return Err(Error::domain(format!(
                "class-prior shift with rho={rho} would empty class {class}"
            )));
        }
    }
    // Choose the kept minority rows per class, then emit all rows in their
    // original order.
    let mut kept_per_class: Vec<Option<Vec<usize>>> = vec![None; n_classes];
    for &class in minority {
        let rows: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == class).collect();
        if rows.len() <= target {
            continue;
        }
        let mut chosen: Vec<usize> = {
            let mut idx: Vec<usize> = rows.clone();
            idx.shuffle(&mut rng);
            idx.truncate(target);
            idx
        };
        chosen.sort_unstable();
        kept_per_class[class] = Some(chosen);
    }
    for i in 0..data.len() {
        let y = data.labels[i];
        match &kept_per_class[y] {
            Some(chosen) => {
                if chosen.binary_search(&i).is_ok() {
                    keep.push(i);
                }
            }
            None => keep.push(i),
        }
    }
    Ok(data.select(&keep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grid_variants_share_training_boxes() {
        let a = SupportSpec::grid_example(GridVariant::Aligned);
        let b = SupportSpec::grid_example(GridVariant::Checkerboard);
        assert_eq!(a.train, b.train);
    }

    #[test]
    fn aligned_grid_right_labels_match_left() {
        let s = SupportSpec::grid_example(GridVariant::Aligned);
        assert_eq!(s.test[2].label, s.test[0].label); // top row
        assert_eq!(s.test[3].label, s.test[1].label); // bottom row
    }

    #[test]
    fn checkerboard_right_labels_flip() {
        let s = SupportSpec::grid_example(GridVariant::Checkerboard);
        assert_ne!(s.test[2].label, s.test[0].label);
        assert_ne!(s.test[3].label, s.test[1].label);
    }

    #[test]
    fn case_specs_satisfy_their_relations() {
        assert_eq!(SupportSpec::case_spec(CaseId::I).support_case(), SupportCase::Equal);
        assert_eq!(
            SupportSpec::case_spec(CaseId::II).support_case(),
            SupportCase::TrainWider
        );
        assert_eq!(
            SupportSpec::case_spec(CaseId::III).support_case(),
            SupportCase::TestWider
        );
        assert_eq!(
            SupportSpec::case_spec(CaseId::IV).support_case(),
            SupportCase::PartialOverlap
        );
    }

    #[test]
    fn case_i_train_equals_test() {
        let s = SupportSpec::case_spec(CaseId::I);
        assert_eq!(s.train, s.test);
    }

    #[test]
    fn case_iii_train_strictly_inside_test() {
        let s = SupportSpec::case_spec(CaseId::III);
        for t in &s.train {
            let covered: f64 = s
                .test
                .iter()
                .filter(|b| b.label == t.label)
                .map(|b| t.overlap_area(b))
                .sum();
            assert!((covered - t.area()).abs() < 1e-12);
        }
        assert!(!s.test_only_boxes().is_empty());
    }

    #[test]
    fn case_iv_has_both_differences() {
        let s = SupportSpec::case_spec(CaseId::IV);
        assert!(!s.test_only_boxes().is_empty());
        let train_only = s.train.iter().any(|t| {
            s.test
                .iter()
                .filter(|b| b.label == t.label)
                .map(|b| t.overlap_area(b))
                .sum::<f64>()
                < 1e-12
        });
        assert!(train_only);
    }

    #[test]
    fn train_sample_stays_in_left_squares() {
        let s = SupportSpec::grid_example(GridVariant::Aligned);
        let d = s.sample(Side::Train, 200, 0).unwrap();
        for i in 0..d.len() {
            let x = [d.features[[i, 0]], d.features[[i, 1]]];
            assert!(s.train.iter().any(|b| b.contains(x)), "point {x:?} escaped");
        }
    }

    #[test]
    fn train_class_frequencies_are_balanced() {
        let s = SupportSpec::grid_example(GridVariant::Aligned);
        let d = s.sample(Side::Train, 200, 1).unwrap();
        let ones = d.labels.iter().filter(|&&y| y == 1).count() as f64 / 200.0;
        // three-sigma binomial band around 1/2
        let band = 3.0 * (0.25f64 / 200.0).sqrt();
        assert!((ones - 0.5).abs() <= band, "class-1 frequency {ones}");
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let s = SupportSpec::grid_example(GridVariant::Checkerboard);
        let a = s.sample(Side::Test, 50, 9).unwrap();
        let b = s.sample(Side::Test, 50, 9).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.features, b.features);
    }

    #[test]
    fn toy_validation_has_four_points_with_centers() {
        let s = SupportSpec::grid_example(GridVariant::Aligned);
        let v = s.toy_validation(3).unwrap();
        assert_eq!(v.len(), 4);
        // the two test-only squares contribute their exact centers
        let centers: Vec<[f64; 2]> = s.test_only_boxes().iter().map(|b| b.center()).collect();
        for (k, c) in centers.iter().enumerate() {
            let i = 2 + k;
            assert_eq!(v.features[[i, 0]], c[0]);
            assert_eq!(v.features[[i, 1]], c[1]);
        }
    }

    #[test]
    fn toy_validation_labels_flip_between_variants() {
        let a = SupportSpec::grid_example(GridVariant::Aligned)
            .toy_validation(5)
            .unwrap();
        let b = SupportSpec::grid_example(GridVariant::Checkerboard)
            .toy_validation(5)
            .unwrap();
        // same geometry, flipped labels on the two center points
        assert_eq!(a.labels[2], 1 - b.labels[2]);
        assert_eq!(a.labels[3], 1 - b.labels[3]);
        assert_eq!(a.labels[..2], b.labels[..2]);
    }

    #[test]
    fn label_noise_zero_rate_is_identity() {
        let s = SupportSpec::grid_example(GridVariant::Aligned);
        let d = s.sample(Side::Train, 40, 2).unwrap();
        let noisy = apply_label_noise(&d, 0.0, 2, 7).unwrap();
        assert_eq!(noisy.labels, d.labels);
    }

    #[test]
    fn label_noise_rate_concentrates() {
        let s = SupportSpec::grid_example(GridVariant::Aligned);
        let d = s.sample(Side::Train, 10_000, 3).unwrap();
        let noisy = apply_label_noise(&d, 0.4, 2, 8).unwrap();
        let flipped = d
            .labels
            .iter()
            .zip(&noisy.labels)
            .filter(|(a, b)| a != b)
            .count() as f64
            / 10_000.0;
        assert!((flipped - 0.4).abs() <= 0.015, "flip fraction {flipped}");
    }

    #[test]
    fn label_noise_never_keeps_flipped_label() {
        // With 3 classes, check flips always land on a different class.
        let d = Dataset::new(Array2::zeros((1000, 2)), vec![1; 1000], Provenance::Train).unwrap();
        let noisy = apply_label_noise(&d, 0.9, 3, 4).unwrap();
        for (&a, &b) in d.labels.iter().zip(&noisy.labels) {
            assert!(b < 3);
            // flipped labels must differ from the original
            if a != b {
                assert_ne!(a, b);
            }
        }
        let flips = noisy.labels.iter().filter(|&&y| y != 1).count();
        assert!(flips > 800);
    }

    #[test]
    fn class_prior_shift_counts() {
        let mut labels = vec![0usize; 1000];
        labels.extend(vec![1usize; 1000]);
        let d = Dataset::new(Array2::zeros((2000, 2)), labels, Provenance::Train).unwrap();
        let shifted = apply_class_prior_shift(&d, 10.0, &[1], 0).unwrap();
        let c1 = shifted.labels.iter().filter(|&&y| y == 1).count();
        assert_eq!(c1, 100);
        let c0 = shifted.labels.iter().filter(|&&y| y == 0).count();
        assert_eq!(c0, 1000);

        let heavier = apply_class_prior_shift(&d, 100.0, &[1], 0).unwrap();
        assert_eq!(heavier.labels.iter().filter(|&&y| y == 1).count(), 10);
    }

    #[test]
    fn class_prior_shift_rho_one_is_identity() {
        let s = SupportSpec::grid_example(GridVariant::Aligned);
        let d = s.sample(Side::Train, 60, 5).unwrap();
        let shifted = apply_class_prior_shift(&d, 1.0, &[0], 0).unwrap();
        assert_eq!(shifted.labels, d.labels);
        assert_eq!(shifted.features, d.features);
    }

    #[test]
    fn class_prior_shift_rejects_emptying() {
        let mut labels = vec![0usize; 100];
        labels.extend(vec![1usize; 5]);
        let d = Dataset::new(Array2::zeros((105, 2)), labels, Provenance::Train).unwrap();
        assert!(apply_class_prior_shift(&d, 1000.0, &[1], 0).is_err());
    }

    proptest! {
        #[test]
        fn samples_lie_in_exactly_one_box(seed in 0u64..100, n in 1usize..80) {
            let s = SupportSpec::grid_example(GridVariant::Checkerboard);
            let d = s.sample(Side::Test, n, seed).unwrap();
            for i in 0..d.len() {
                let x = [d.features[[i, 0]], d.features[[i, 1]]];
                let holders = s.test.iter().filter(|b| b.contains(x)).count();
                prop_assert_eq!(holders, 1);
            }
        }
    }
}
