//! Image metrics, the synthetic haze pipeline and image file I/O.

pub mod dataset;
pub mod haze;
pub mod metrics;
pub mod noise;
pub mod pnm;
pub mod scene;

pub use dataset::{generate, load_dataset, synthesize_pair, write_dataset, DataConfig, ImagePair};
pub use haze::{composite, dataset_report, gen_mask, haze_color, haze_stats, DatasetReport, DensityClass, HazeStats};
pub use metrics::{psnr, ssim, PSNR_CAP};
