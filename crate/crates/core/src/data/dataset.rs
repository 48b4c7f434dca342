//! Synthetic hazy/clear/SAR triplets and their on-disk layout.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::haze::{composite, gen_mask, haze_color, haze_stats, DensityClass, HazeStats, REGION_THRESHOLD};
use crate::data::pnm;
use crate::data::scene::{clear_scene, sar_from_clear};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.tsv";
pub const MANIFEST_HEADER: &str = "index\tseed\tcoverage\tdensity_value\tdensity_class";

/// A co-registered sample. All planes hold 8-bit levels scaled to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    /// `[3, H, W]`
    pub clear: Tensor<f32>,
    /// `[1, H, W]`
    pub sar: Tensor<f32>,
    /// `[3, H, W]`
    pub hazy: Tensor<f32>,
    /// `[1, H, W]` haze opacity.
    pub mask: Tensor<f32>,
    pub seed: u64,
}

impl ImagePair {
    pub fn height(&self) -> usize {
        self.clear.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.clear.shape()[2]
    }

    /// Checks co-registration and that haze-free pixels are untouched.
    pub fn validate(&self) -> Result<()> {
        let cs = self.clear.shape();
        if cs.len() != 3 || cs[0] != 3 {
            return Err(Error::Data(format!("clear image must be [3, H, W], got {cs:?}")));
        }
        if self.hazy.shape() != cs {
            return Err(Error::Alignment {
                optical: self.hazy.shape().to_vec(),
                sar: cs.to_vec(),
            });
        }
        let plane = [1, cs[1], cs[2]];
        if self.sar.shape() != plane {
            return Err(Error::Alignment {
                optical: cs.to_vec(),
                sar: self.sar.shape().to_vec(),
            });
        }
        if self.mask.shape() != plane {
            return Err(Error::Data(format!("mask must be {plane:?}, got {:?}", self.mask.shape())));
        }
        let n = cs[1] * cs[2];
        let m = self.mask.data();
        for (i, (c, h)) in self.clear.data().iter().zip(self.hazy.data()).enumerate() {
            if m[i % n] == 0.0 && c != h {
                return Err(Error::Data(format!(
                    "pair {}: hazy differs from clear at haze-free pixel {}",
                    self.seed,
                    i % n
                )));
            }
        }
        Ok(())
    }

    pub fn stats(&self) -> Result<HazeStats> {
        haze_stats(&self.hazy, &self.mask)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub dir: PathBuf,
    pub count: usize,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    /// Coverage targets are drawn uniformly from `[coverage_min, coverage_max]`.
    pub coverage_min: f64,
    pub coverage_max: f64,
    /// Density targets, cycled by pair index.
    pub densities: Vec<DensityClass>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("data"),
            count: 8,
            seed: 0,
            height: 32,
            width: 32,
            coverage_min: 0.2,
            coverage_max: 0.8,
            densities: DensityClass::ALL.to_vec(),
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.coverage_min && self.coverage_min <= self.coverage_max && self.coverage_max <= 1.0) {
            return Err(Error::Config(format!(
                "coverage range [{}, {}] must lie within [0, 1]",
                self.coverage_min, self.coverage_max
            )));
        }
        if self.densities.is_empty() {
            return Err(Error::Config("data.densities must list at least one class".into()));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("data.height and data.width must be positive".into()));
        }
        Ok(())
    }

    /// Targets `(seed, coverage, density)` of pair `index`.
    pub fn targets(&self, index: usize) -> (u64, f64, DensityClass) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        let seed = rng.next_u64();
        let u: f64 = rng.random();
        let coverage = self.coverage_min + (self.coverage_max - self.coverage_min) * u;
        (seed, coverage, self.densities[index % self.densities.len()])
    }
}

const MIN_REGION_OPACITY: f32 = 0.06;

/// Generates one pair. If the composited haze lands in a different density
/// class than requested, region opacities are nudged toward the target for a
/// bounded number of rounds; the realized class is whatever the stats report.
pub fn synthesize_pair(h: usize, w: usize, seed: u64, coverage: f64, density: DensityClass) -> Result<ImagePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clear = pnm::quantize(&clear_scene(h, w, &mut rng));
    let sar = pnm::quantize(&sar_from_clear(&clear, &mut rng));
    let haze = haze_color(h, w, rng.next_u64());
    let mut mask = gen_mask(h, w, rng.next_u64(), coverage, density)?;
    let build = |mask: &Tensor<f32>| -> Result<(Tensor<f32>, Tensor<f32>)> {
        let m = pnm::quantize(mask);
        let hazy = pnm::quantize(&composite(&clear, &m, &haze)?);
        Ok((m, hazy))
    };
    let (mut m, mut hazy) = build(&mask)?;
    for _ in 0..12 {
        let realized = match haze_stats(&hazy, &m)?.density_class {
            Some(c) => c,
            None => break,
        };
        if realized == density {
            break;
        }
        let thinner = realized > density;
        mask = mask.map(|a| {
            if a <= REGION_THRESHOLD {
                a
            } else if thinner {
                (a * 0.8).max(MIN_REGION_OPACITY)
            } else {
                1.0 - (1.0 - a) * 0.8
            }
        });
        (m, hazy) = build(&mask)?;
    }
    Ok(ImagePair {
        clear,
        sar,
        hazy,
        mask: m,
        seed,
    })
}

pub fn generate(cfg: &DataConfig) -> Result<Vec<ImagePair>> {
    cfg.validate()?;
    (0..cfg.count)
        .map(|i| {
            let (seed, coverage, density) = cfg.targets(i);
            synthesize_pair(cfg.height, cfg.width, seed, coverage, density)
        })
        .collect()
}

fn pair_paths(dir: &Path, index: usize) -> [PathBuf; 4] {
    let p = dir.join("pairs");
    [
        p.join(format!("{index}_clear.ppm")),
        p.join(format!("{index}_hazy.ppm")),
        p.join(format!("{index}_sar.pgm")),
        p.join(format!("{index}_mask.pgm")),
    ]
}

pub fn manifest_row(index: usize, pair: &ImagePair) -> Result<String> {
    let s = pair.stats()?;
    let density = s.density_value.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
    Ok(format!(
        "{index}\t{}\t{:.6}\t{density}\t{}",
        pair.seed,
        s.coverage,
        s.class_name()
    ))
}

/// Writes `pairs/<i>_{clear,hazy,sar,mask}` and `manifest.tsv`.
pub fn write_dataset(dir: &Path, pairs: &[ImagePair]) -> Result<()> {
    let pdir = dir.join("pairs");
    std::fs::create_dir_all(&pdir).map_err(|e| Error::io(&pdir, e))?;
    let mut manifest = format!("{MANIFEST_HEADER}\n");
    for (i, pair) in pairs.iter().enumerate() {
        let [clear, hazy, sar, mask] = pair_paths(dir, i);
        pnm::write(&clear, &pair.clear)?;
        pnm::write(&hazy, &pair.hazy)?;
        pnm::write(&sar, &pair.sar)?;
        pnm::write(&mask, &pair.mask)?;
        let _ = writeln!(manifest, "{}", manifest_row(i, pair)?);
    }
    let path = dir.join(MANIFEST);
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// Loads every pair listed in `manifest.tsv`.
pub fn load_dataset(dir: &Path) -> Result<Vec<ImagePair>> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Data(format!("cannot read dataset manifest {}: {e}", path.display())))?;
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(Error::Parse(format!("{}: unexpected header", path.display())));
    }
    let mut pairs = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split('\t').collect();
        let parse = |i: usize| -> Result<u64> {
            cols.get(i)
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| Error::Parse(format!("{}: bad row {line:?}", path.display())))
        };
        let (index, seed) = (parse(0)? as usize, parse(1)?);
        let [clear, hazy, sar, mask] = pair_paths(dir, index);
        let pair = ImagePair {
            clear: pnm::read(&clear)?,
            hazy: pnm::read(&hazy)?,
            sar: pnm::read(&sar)?,
            mask: pnm::read(&mask)?,
            seed,
        };
        pair.validate()?;
        pairs.push(pair);
    }
    Ok(pairs)
}
