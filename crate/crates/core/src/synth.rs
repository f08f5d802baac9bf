//! Synthetic single-cell image pairs with a planted, tunable class signal.
//!
//! Each cell is a filled disk on a flat bright background. The bright-field
//! image carries the class in the cell radius and in the frequency of a
//! concentric interior texture; the DAPI image shows a bright nucleus whose
//! radius ratio carries the class. Per-record randomness comes from streams
//! derived from the master seed, so rendering order never changes output.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use image::Luma;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CellRecord, Label, Manifest, Provenance};
use crate::error::{Error, Result};
use crate::imaging::{self, GrayImage};
use crate::rng;

/// BF background grey level. Cell interiors never take this value.
pub const BF_BACKGROUND: u8 = 140;
pub const DAPI_BACKGROUND: u8 = 13;

const BASE_RADIUS: f64 = 0.25;
const RADIUS_SD: f64 = 0.02;
/// Half the class gap in radius, in units of RADIUS_SD, at full strength.
const RADIUS_HALF_GAP: f64 = 3.0;
const Z_CLIP: f64 = 2.5;
const CENTER_JITTER: f64 = 0.05;
const BASE_FREQ: f64 = 3.0;
const FREQ_HALF_GAP: f64 = 1.5;
const FREQ_SD: f64 = 0.3;
const BASE_NUCLEUS_RATIO: f64 = 0.55;
const NUCLEUS_HALF_GAP: f64 = 0.12;
const NUCLEUS_SD: f64 = 0.04;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_spiked_ctc: usize,
    pub n_patient_ctc: usize,
    pub n_leuko: usize,
    #[serde(default = "default_image_size")]
    pub image_size: u32,
    pub bf_signal_strength: f64,
    pub dapi_informativeness: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

fn default_image_size() -> u32 {
    148
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_spiked_ctc: 100,
            n_patient_ctc: 10,
            n_leuko: 80,
            image_size: 148,
            bf_signal_strength: 1.0,
            dapi_informativeness: 1.0,
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn total(&self) -> usize {
        self.n_spiked_ctc + self.n_patient_ctc + self.n_leuko
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSynthSpec(m));
        if self.total() == 0 {
            return bad("zero total count".into());
        }
        if self.image_size < 32 {
            return bad(format!("image_size must be >= 32, got {}", self.image_size));
        }
        for (name, v) in [
            ("bf_signal_strength", self.bf_signal_strength),
            ("dapi_informativeness", self.dapi_informativeness),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        Ok(())
    }

    /// Identity of the `i`-th record in generation order.
    pub fn record_meta(&self, i: usize) -> (String, Label, Provenance, String) {
        let (s, p) = (self.n_spiked_ctc, self.n_patient_ctc);
        if i < s {
            let line = if i % 2 == 0 { "cellline-A" } else { "cellline-B" };
            (format!("spk_{i:05}"), Label::Ctc, Provenance::Spiked, line.into())
        } else if i < s + p {
            let j = i - s;
            (
                format!("pat_{j:05}"),
                Label::Ctc,
                Provenance::Patient,
                format!("P{:02}", j % 13 + 1),
            )
        } else {
            let j = i - s - p;
            let prov = if j % 4 == 0 {
                Provenance::Patient
            } else {
                Provenance::Healthy
            };
            let tag = if prov == Provenance::Patient { "PT" } else { "HV" };
            (format!("leu_{j:05}"), Label::Leuko, prov, tag.into())
        }
    }

    /// Geometry of the `i`-th record; a pure function of (spec, i).
    pub fn geometry(&self, i: usize) -> CellGeometry {
        let (cell_id, label, ..) = self.record_meta(i);
        let mut g = rng::rng_for(self.seed, &[rng::str_id(&cell_id), 0]);
        let mut z = || -> f64 {
            let v: f64 = g.sample(StandardNormal);
            v.clamp(-Z_CLIP, Z_CLIP)
        };
        let sign = match label {
            Label::Ctc => 1.0,
            Label::Leuko => -1.0,
        };
        let size = f64::from(self.image_size);
        let s = self.bf_signal_strength;
        let d = self.dapi_informativeness;
        let radius =
            size * (BASE_RADIUS + RADIUS_SD * (sign * RADIUS_HALF_GAP * s + z()));
        let texture_freq = BASE_FREQ + sign * FREQ_HALF_GAP * s + FREQ_SD * z();
        let nucleus_ratio = BASE_NUCLEUS_RATIO + sign * NUCLEUS_HALF_GAP * d + NUCLEUS_SD * z();
        let cx = size / 2.0 + size * CENTER_JITTER * (z() / Z_CLIP);
        let cy = size / 2.0 + size * CENTER_JITTER * (z() / Z_CLIP);
        let phase = 2.0 * PI * (z() / Z_CLIP + 1.0) / 2.0;
        CellGeometry {
            label,
            center: (cx, cy),
            radius,
            texture_freq,
            texture_phase: phase,
            nucleus_radius: radius * nucleus_ratio,
        }
    }

    /// Render the BF and DAPI images of the `i`-th record.
    pub fn render(&self, i: usize) -> (CellGeometry, GrayImage, GrayImage) {
        let geom = self.geometry(i);
        let (cell_id, ..) = self.record_meta(i);
        let mut noise = rng::rng_for(self.seed, &[rng::str_id(&cell_id), 1]);
        let n = self.image_size;
        let sigma = self.noise_sigma;
        let mut draw = |v: f64| -> u8 {
            let e: f64 = if sigma > 0.0 {
                sigma * noise.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            ((v + e) * 255.0).round().clamp(0.0, 255.0) as u8
        };
        let bf_bg = f64::from(BF_BACKGROUND) / 255.0;
        let dapi_bg = f64::from(DAPI_BACKGROUND) / 255.0;
        let mut bf = GrayImage::new(n, n);
        let mut dapi = GrayImage::new(n, n);
        for y in 0..n {
            for x in 0..n {
                let dx = f64::from(x) + 0.5 - geom.center.0;
                let dy = f64::from(y) + 0.5 - geom.center.1;
                let dist = (dx * dx + dy * dy).sqrt();
                let v = if dist <= geom.radius {
                    if geom.radius - dist < 1.5 {
                        0.15
                    } else {
                        let t = dist / geom.radius;
                        0.30 + 0.10 * (2.0 * PI * geom.texture_freq * t + geom.texture_phase).sin()
                    }
                } else {
                    bf_bg
                };
                bf.put_pixel(x, y, Luma([draw(v)]));
            }
        }
        for y in 0..n {
            for x in 0..n {
                let dx = f64::from(x) + 0.5 - geom.center.0;
                let dy = f64::from(y) + 0.5 - geom.center.1;
                let dist = (dx * dx + dy * dy).sqrt();
                let v = if dist <= geom.nucleus_radius {
                    0.85 - 0.25 * (dist / geom.nucleus_radius).powi(2)
                } else {
                    dapi_bg
                };
                dapi.put_pixel(x, y, Luma([draw(v)]));
            }
        }
        (geom, bf, dapi)
    }
}

/// Ground-truth shape parameters of one rendered cell, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellGeometry {
    pub label: Label,
    pub center: (f64, f64),
    pub radius: f64,
    /// Texture cycles across the cell radius.
    pub texture_freq: f64,
    pub texture_phase: f64,
    pub nucleus_radius: f64,
}

pub fn bf_file_name(cell_id: &str) -> String {
    format!("{cell_id}_BF.png")
}

pub fn dapi_file_name(cell_id: &str) -> String {
    format!("{cell_id}_DAPI.png")
}

/// Write `<out_dir>/images/<id>_BF.png`, `<id>_DAPI.png` and
/// `<out_dir>/manifest.csv`.
pub fn generate_dataset(spec: &SynthSpec, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    let images = out_dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;

    let records = (0..spec.total())
        .into_par_iter()
        .map(|i| -> Result<CellRecord> {
            let (cell_id, label, provenance, source_tag) = spec.record_meta(i);
            let (_, bf, dapi) = spec.render(i);
            let bf_rel = PathBuf::from("images").join(bf_file_name(&cell_id));
            let dapi_rel = PathBuf::from("images").join(dapi_file_name(&cell_id));
            imaging::save_png(&out_dir.join(&bf_rel), &bf)?;
            imaging::save_png(&out_dir.join(&dapi_rel), &dapi)?;
            Ok(CellRecord {
                cell_id,
                label,
                provenance,
                bf_path: bf_rel,
                dapi_path: Some(dapi_rel),
                source_tag,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = Manifest::new(records, out_dir)?;
    manifest.write_csv(&out_dir.join("manifest.csv"))?;
    Ok(manifest)
}
