//! Procedural haze masks, compositing, and haze coverage/density statistics.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::metrics::luminance;
use crate::data::noise::value_noise;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mask values above this count as haze-affected.
pub const REGION_THRESHOLD: f32 = 0.05;
/// Density is the mean of this fraction of the brightest region pixels.
pub const BRIGHTEST_FRACTION: f64 = 0.3;
pub const THIN_MAX: f64 = 105.0;
pub const MODERATE_MAX: f64 = 175.0;
pub const HAZE_GRAY: f64 = 0.92;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityClass {
    Thin,
    Moderate,
    Dense,
}

impl DensityClass {
    pub const ALL: [DensityClass; 3] = [DensityClass::Thin, DensityClass::Moderate, DensityClass::Dense];

    /// Step function of the 8-bit density value; boundaries belong to the lower class.
    pub fn classify(density: f64) -> Self {
        if density <= THIN_MAX {
            DensityClass::Thin
        } else if density <= MODERATE_MAX {
            DensityClass::Moderate
        } else {
            DensityClass::Dense
        }
    }

    /// Opacity range of haze-region pixels generated for this class.
    pub fn opacity_range(self) -> (f64, f64) {
        match self {
            DensityClass::Thin => (0.12, 0.30),
            DensityClass::Moderate => (0.40, 0.60),
            DensityClass::Dense => (0.70, 0.95),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DensityClass::Thin => "thin",
            DensityClass::Moderate => "moderate",
            DensityClass::Dense => "dense",
        }
    }
}

impl fmt::Display for DensityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DensityClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "thin" => Ok(DensityClass::Thin),
            "moderate" => Ok(DensityClass::Moderate),
            "dense" => Ok(DensityClass::Dense),
            other => Err(Error::Parse(format!("unknown density class {other}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HazeStats {
    pub coverage: f64,
    /// `None` when the haze region is empty.
    pub density_value: Option<f64>,
    pub density_class: Option<DensityClass>,
}

impl HazeStats {
    pub fn class_name(&self) -> &'static str {
        self.density_class.map_or("none", DensityClass::name)
    }
}

/// Haze opacity mask `[1, H, W]`.
///
/// A multi-octave noise field is thresholded at its `(1 - coverage)` quantile,
/// so exactly `round(coverage * H * W)` pixels are hazy. Inside the region the
/// opacity rises from the class minimum at the boundary to its maximum at the
/// noise peak.
pub fn gen_mask(h: usize, w: usize, seed: u64, coverage: f64, density: DensityClass) -> Result<Tensor<f32>> {
    if !(0.0..=1.0).contains(&coverage) {
        return Err(Error::Config(format!("coverage target {coverage} outside [0, 1]")));
    }
    if coverage == 0.0 && density == DensityClass::Dense {
        return Err(Error::Config("coverage 0 cannot produce dense haze".into()));
    }
    let n = h * w;
    let inside = (coverage * n as f64).round() as usize;
    let mut mask = vec![0.0f32; n];
    if inside == 0 {
        return Tensor::new(&[1, h, w], mask);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let field = value_noise(h, w, (h.max(w) as f64 / 2.0).max(2.0), 4, &mut rng);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| field[b].total_cmp(&field[a]).then(a.cmp(&b)));
    let top = field[order[0]];
    let floor = field[order[inside - 1]];
    let span = top - floor;
    let (lo, hi) = density.opacity_range();
    for &i in &order[..inside] {
        let t = if span > 0.0 { (field[i] - floor) / span } else { 1.0 };
        let s = t * t * (3.0 - 2.0 * t);
        mask[i] = (lo + (hi - lo) * s) as f32;
    }
    Tensor::new(&[1, h, w], mask)
}

/// Bright gray-white haze colour `[3, H, W]`: [`HAZE_GRAY`] plus small noise.
pub fn haze_color(h: usize, w: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.015).expect("valid sigma");
    let grain: Vec<f64> = (0..h * w).map(|_| noise.sample(&mut rng)).collect();
    let mut data = Vec::with_capacity(3 * h * w);
    for ch in 0..3 {
        let tint = [0.0, 0.005, 0.015][ch];
        data.extend(grain.iter().map(|g| (HAZE_GRAY + tint + g).clamp(0.0, 1.0) as f32));
    }
    Tensor::new(&[3, h, w], data).expect("shape matches data")
}

/// `hazy = (1 - mask) * clear + mask * haze`.
pub fn composite(clear: &Tensor<f32>, mask: &Tensor<f32>, haze: &Tensor<f32>) -> Result<Tensor<f32>> {
    let cs = clear.shape();
    if cs.len() != 3 || mask.shape() != [1, cs[1], cs[2]] || haze.shape() != cs {
        return Err(Error::shape("composite", cs, mask.shape()));
    }
    let plane = cs[1] * cs[2];
    let m = mask.data();
    let data = clear
        .data()
        .iter()
        .zip(haze.data())
        .enumerate()
        .map(|(i, (&c, &hz))| {
            let a = m[i % plane];
            (1.0 - a) * c + a * hz
        })
        .collect();
    Tensor::new(cs, data)
}

/// Coverage and brightest-30% luminance density of the haze region `mask > 0.05`.
pub fn haze_stats(hazy: &Tensor<f32>, mask: &Tensor<f32>) -> Result<HazeStats> {
    let hs = hazy.shape();
    if hs.len() != 3 || mask.shape() != [1, hs[1], hs[2]] {
        return Err(Error::shape("haze_stats", hs, mask.shape()));
    }
    let luma = luminance(hazy)?;
    let mut region: Vec<f64> = luma
        .iter()
        .zip(mask.data())
        .filter(|(_, &m)| m > REGION_THRESHOLD)
        .map(|(&l, _)| l)
        .collect();
    let coverage = region.len() as f64 / luma.len().max(1) as f64;
    if region.is_empty() {
        return Ok(HazeStats {
            coverage,
            density_value: None,
            density_class: None,
        });
    }
    region.sort_by(|a, b| b.total_cmp(a));
    let k = ((region.len() as f64 * BRIGHTEST_FRACTION).ceil() as usize).max(1);
    let density = region[..k].iter().sum::<f64>() / k as f64;
    Ok(HazeStats {
        coverage,
        density_value: Some(density),
        density_class: Some(DensityClass::classify(density)),
    })
}

/// Coverage and density histograms over a set of pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetReport {
    pub total: usize,
    /// Counts per 10% coverage bin.
    pub coverage_bins: [usize; 10],
    /// Counts per 8-bit density bin of width [`DENSITY_BIN`].
    pub density_bins: Vec<usize>,
    /// Counts for thin, moderate, dense, and empty-region pairs.
    pub class_counts: [usize; 4],
}

pub const DENSITY_BIN: f64 = 25.0;

pub fn coverage_bin(coverage: f64) -> usize {
    ((coverage * 10.0).floor() as usize).min(9)
}

pub fn dataset_report(stats: &[HazeStats]) -> DatasetReport {
    let n_density = (255.0 / DENSITY_BIN).ceil() as usize;
    let mut rep = DatasetReport {
        total: stats.len(),
        density_bins: vec![0; n_density],
        ..Default::default()
    };
    for s in stats {
        rep.coverage_bins[coverage_bin(s.coverage)] += 1;
        match (s.density_value, s.density_class) {
            (Some(v), Some(c)) => {
                rep.density_bins[((v / DENSITY_BIN).floor() as usize).min(n_density - 1)] += 1;
                rep.class_counts[c as usize] += 1;
            }
            _ => rep.class_counts[3] += 1,
        }
    }
    rep
}

impl DatasetReport {
    fn pct(&self, count: usize) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * count as f64 / self.total as f64
        }
    }

    /// Tab-separated tables: coverage bins, density bins, class counts.
    /// An empty set yields the headers only.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("coverage_bin\tcount\tpercent\n");
        if self.total > 0 {
            for (i, &c) in self.coverage_bins.iter().enumerate() {
                out += &format!("{}-{}%\t{c}\t{:.2}\n", i * 10, (i + 1) * 10, self.pct(c));
            }
        }
        out += "\ndensity_bin\tcount\tpercent\n";
        if self.total > 0 {
            for (i, &c) in self.density_bins.iter().enumerate() {
                let lo = i as f64 * DENSITY_BIN;
                let hi = (lo + DENSITY_BIN).min(255.0);
                out += &format!("{lo:.0}-{hi:.0}\t{c}\t{:.2}\n", self.pct(c));
            }
        }
        out += "\ndensity_class\tcount\tpercent\n";
        if self.total > 0 {
            for (name, &c) in ["thin", "moderate", "dense", "none"].iter().zip(&self.class_counts) {
                out += &format!("{name}\t{c}\t{:.2}\n", self.pct(c));
            }
        }
        out
    }
}
