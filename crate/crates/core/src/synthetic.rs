//! Small synthetic datasets with planted structure.
//!
//! Both classes are Gaussian blobs separated along the first feature; class 1
//! (favorable) sits at positive `x0`. Sample ids follow the generation order and
//! the rows are shuffled.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seeding::stream_rng;

struct Builder {
    rows: Vec<Vec<f64>>,
    labels: Vec<u8>,
    groups: Vec<u8>,
    rng: ChaCha8Rng,
}

impl Builder {
    fn new(seed: u64) -> Self {
        Self {
            rows: Vec::new(),
            labels: Vec::new(),
            groups: Vec::new(),
            rng: stream_rng(seed, 7),
        }
    }

    fn blob(&mut self, n: usize, center: &[f64], std: f64, label: u8, group: u8) -> Result<()> {
        let noise = Normal::new(0.0, std).map_err(|e| Error::InvalidConfig(format!("blob spread: {e}")))?;
        for _ in 0..n {
            let row = center.iter().map(|c| c + noise.sample(&mut self.rng)).collect();
            self.rows.push(row);
            self.labels.push(label);
            self.groups.push(group);
        }
        Ok(())
    }

    fn uniform_box(&mut self, n: usize, center: &[f64], half_width: f64, label: u8, group: u8) -> Result<()> {
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::InvalidConfig(format!("box half-width must be positive, got {half_width}")));
        }
        for _ in 0..n {
            let row = center
                .iter()
                .map(|c| c + self.rng.gen_range(-half_width..half_width))
                .collect();
            self.rows.push(row);
            self.labels.push(label);
            self.groups.push(group);
        }
        Ok(())
    }

    fn finish(mut self, with_groups: bool) -> Result<Dataset> {
        let n = self.rows.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        let dim = self.rows.first().map_or(0, Vec::len);
        let features = order.iter().flat_map(|&i| self.rows[i].iter().copied()).collect();
        let labels = order.iter().map(|&i| self.labels[i]).collect();
        let groups = with_groups.then(|| order.iter().map(|&i| self.groups[i]).collect());
        let ids = order.iter().map(|&i| i as u64).collect();
        let names = (0..dim).map(|j| format!("x{j}")).collect();
        Dataset::from_parts(features, dim, labels, groups, ids, names)
    }
}

fn axis(dim: usize, x0: f64, x1: f64) -> Vec<f64> {
    let mut c = vec![0.0; dim];
    c[0] = x0;
    if dim > 1 {
        c[1] = x1;
    }
    c
}

/// Two isotropic blobs at `x0 = -separation/2` (class 0) and `+separation/2`
/// (class 1). Protected attribute drawn uniformly, independent of everything else.
pub fn gaussian_blobs(n_per_class: usize, dim: usize, separation: f64, std: f64, seed: u64) -> Result<Dataset> {
    if dim == 0 || n_per_class == 0 {
        return Err(Error::InvalidConfig("blobs need at least one sample and one feature".into()));
    }
    let mut b = Builder::new(seed);
    b.blob(n_per_class, &axis(dim, -separation / 2.0, 0.0), std, 0, 0)?;
    b.blob(n_per_class, &axis(dim, separation / 2.0, 0.0), std, 1, 0)?;
    let mut rng = stream_rng(seed, 8);
    b.groups = (0..2 * n_per_class).map(|_| rng.gen_range(0..2)).collect();
    b.finish(true)
}

/// Shape of [`planted_outliers`].
#[derive(Clone, Debug, PartialEq)]
pub struct OutlierDesign {
    pub n_samples: usize,
    pub n_outliers: usize,
    pub separation: f64,
    pub std: f64,
    /// Center of the class-0 outlier cluster.
    pub outlier_center: [f64; 2],
    pub outlier_std: f64,
}

impl Default for OutlierDesign {
    fn default() -> Self {
        Self {
            n_samples: 200,
            n_outliers: 5,
            separation: 4.0,
            std: 0.7,
            outlier_center: [0.0, 0.0],
            outlier_std: 0.2,
        }
    }
}

/// 2D blobs plus a tight cluster of class-0 samples far from the class-0 mass.
/// At the default center the cluster sits on the class boundary and drags it
/// toward class 1, which lengthens every counterfactual.
/// Returns the dataset and the outlier ids.
pub fn planted_outliers(design: &OutlierDesign, seed: u64) -> Result<(Dataset, Vec<u64>)> {
    let d = design;
    if d.n_outliers >= d.n_samples {
        return Err(Error::InvalidConfig("more outliers than samples".into()));
    }
    let regular = d.n_samples - d.n_outliers;
    let mut b = Builder::new(seed);
    b.blob(regular / 2, &[-d.separation / 2.0, 0.0], d.std, 0, 0)?;
    b.blob(regular - regular / 2, &[d.separation / 2.0, 0.0], d.std, 1, 0)?;
    let first = b.rows.len() as u64;
    b.blob(d.n_outliers, &d.outlier_center, d.outlier_std, 0, 0)?;
    let outliers = (first..first + d.n_outliers as u64).collect();
    Ok((b.finish(false)?, outliers))
}

/// Shape of [`planted_unfairness`]. Samples are uniform in axis-aligned boxes
/// so the worst-case member of each group is set by the design rather than by
/// a tail draw.
#[derive(Clone, Debug, PartialEq)]
pub struct UnfairnessDesign {
    pub n_samples: usize,
    /// Half-width of every box.
    pub spread: f64,
    /// Class centers along `x0` for group 0.
    pub negative_x0: f64,
    pub positive_x0: f64,
    /// How much deeper group-1 negatives sit, along `-x0`.
    pub displacement: f64,
    /// Fraction of samples that are group-1 negatives placed next to the boundary.
    pub filler_fraction: f64,
    pub filler_x0: f64,
    pub filler_spread: f64,
    /// Distance between the group centers along `x1`.
    pub group_offset: f64,
}

impl Default for UnfairnessDesign {
    fn default() -> Self {
        Self {
            n_samples: 200,
            spread: 0.75,
            negative_x0: -1.25,
            positive_x0: 1.25,
            displacement: 0.0,
            filler_fraction: 0.05,
            filler_x0: 0.4,
            filler_spread: 0.15,
            group_offset: 5.0,
        }
    }
}

/// Two groups stacked along `x1`. Group 1 negatives are displaced by
/// `displacement` away from the boundary, and a few group-1 negatives just
/// left of the group-1 positives hold that group's boundary on the positive
/// side. With `displacement = 0` and `filler_fraction = 0` the groups are
/// identical up to the `x1` offset.
pub fn planted_unfairness(design: &UnfairnessDesign, seed: u64) -> Result<Dataset> {
    let d = design;
    if !(0.0..0.5).contains(&d.filler_fraction) {
        return Err(Error::InvalidConfig("filler fraction must be in [0, 0.5)".into()));
    }
    let fillers = (d.filler_fraction * d.n_samples as f64).round() as usize;
    let rest = d.n_samples - fillers;
    let per_cell = rest / 4;
    let (lo, hi) = (-d.group_offset / 2.0, d.group_offset / 2.0);
    let mut b = Builder::new(seed);
    b.uniform_box(per_cell, &[d.negative_x0, lo], d.spread, 0, 0)?;
    b.uniform_box(per_cell, &[d.positive_x0, lo], d.spread, 1, 0)?;
    b.uniform_box(per_cell, &[d.negative_x0 - d.displacement, hi], d.spread, 0, 1)?;
    b.uniform_box(rest - 3 * per_cell, &[d.positive_x0, hi], d.spread, 1, 1)?;
    b.uniform_box(fillers, &[d.filler_x0, hi], d.filler_spread, 0, 1)?;
    b.finish(true)
}
