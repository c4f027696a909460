//! Synthetic dual-view studies.
//!
//! Each patient gets a CC and an MLO image with one lesion visible in both
//! views plus unrelated distractor blobs. Lesions and distractors are
//! textured elliptical blobs drawn from the same generator. The MLO
//! rendition of a lesion is its CC rendition under a small rotation, an
//! anisotropic stretch, a contrast change, a new texture phase and fresh
//! noise. The shared cues are shape, texture kind, frequency and
//! orientation; pixel-level correlation between views is weak. Candidates are
//! planted around lesions (true detections) and distractors (false
//! detections); some studies have an empty candidate list in one view.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{
    save_gray16, split_by_patient, DetectionCandidate, GroundTruthLesion, Image, Manifest, Polygon, SplitManifest, Study, View,
    TRAIN_RATIO,
};
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Number of patients, each contributing one positive lesion pair.
    pub patients: usize,
    pub seed: u64,
    pub image_size: usize,
    pub distractors_per_view: usize,
    /// Every n-th patient (0 disables) has no candidates in one view.
    pub standalone_every: usize,
    /// Largest rotation of a lesion between views, in degrees.
    pub max_rotation_deg: f64,
    /// Largest relative stretch along either image axis between views.
    pub max_stretch: f64,
    pub noise_std: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            patients: 200,
            seed: 7,
            image_size: 256,
            distractors_per_view: 2,
            standalone_every: 5,
            max_rotation_deg: 15.0,
            max_stretch: 0.2,
            noise_std: 0.02,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patients == 0 {
            return Err(Error::Validation("synth needs at least one patient".into()));
        }
        if self.image_size < 128 {
            return Err(Error::Validation(format!("image_size {} below 128", self.image_size)));
        }
        if !(0.0..0.5).contains(&self.max_stretch) || !(self.noise_std >= 0.0) {
            return Err(Error::Validation("max_stretch must be in [0, 0.5) and noise_std non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Texture {
    Stripes,
    Spots,
    Rings,
}

/// Appearance of one physical object, independent of view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub id: String,
    pub texture: Texture,
    /// Texture periods across the blob diameter.
    pub cycles: f64,
    pub texture_angle: f64,
    /// Texture phase along and across `texture_angle`.
    pub phase: [f64; 2],
    pub rx: f64,
    pub ry: f64,
    pub contrast: f64,
}

/// Texture frequencies, spaced wider than the largest stretch between views.
pub const CYCLES: [f64; 4] = [1.5, 2.5, 4.0, 6.5];

impl Blob {
    pub fn random(id: String, r: &mut StreamRng) -> Self {
        let texture = [Texture::Stripes, Texture::Spots, Texture::Rings][r.random_range(0..3)];
        Blob {
            id,
            texture,
            cycles: CYCLES[r.random_range(0..CYCLES.len())],
            texture_angle: r.random_range(0.0..PI),
            phase: [r.random_range(0.0..TAU), r.random_range(0.0..TAU)],
            rx: r.random_range(18.0..28.0),
            ry: r.random_range(18.0..28.0),
            contrast: r.random_range(0.25..0.45),
        }
    }

    /// Intensity added at blob-local coordinates `(u, v)`.
    fn value(&self, u: f64, v: f64) -> f64 {
        let d = ((u / self.rx).powi(2) + (v / self.ry).powi(2)).sqrt();
        if d >= 1.15 {
            return 0.0;
        }
        let env = if d <= 0.85 { 1.0 } else { 0.5 + 0.5 * (PI * (d - 0.85) / 0.3).cos() };
        let k = TAU * self.cycles / (self.rx + self.ry);
        let (s, c) = self.texture_angle.sin_cos();
        let (a, b) = (u * c + v * s, -u * s + v * c);
        let tex = match self.texture {
            Texture::Stripes => (k * a + self.phase[0]).cos(),
            Texture::Spots => (k * a + self.phase[0]).cos() * (k * b + self.phase[1]).cos(),
            Texture::Rings => (k * (u * u + v * v).sqrt() + self.phase[0]).cos(),
        };
        self.contrast * env * (1.0 + 0.8 * tex) / 1.8
    }

    fn extent(&self) -> f64 {
        1.15 * self.rx.max(self.ry)
    }

    /// Boundary (envelope mid-level) in blob-local coordinates.
    fn contour(&self, n: usize) -> Vec<[f64; 2]> {
        (0..n)
            .map(|i| {
                let t = TAU * i as f64 / n as f64;
                [self.rx * t.cos(), self.ry * t.sin()]
            })
            .collect()
    }
}

/// Placement of a blob in one view: `p = center + A·u`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Pose {
    center: [f64; 2],
    a: [[f64; 2]; 2],
    gain: f64,
}

impl Pose {
    fn new(center: [f64; 2], angle: f64, sx: f64, sy: f64, gain: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Pose {
            center,
            a: [[sx * c, -sx * s], [sy * s, sy * c]],
            gain,
        }
    }

    fn to_image(&self, u: [f64; 2]) -> [f64; 2] {
        [
            self.center[0] + self.a[0][0] * u[0] + self.a[0][1] * u[1],
            self.center[1] + self.a[1][0] * u[0] + self.a[1][1] * u[1],
        ]
    }

    fn to_local(&self, p: [f64; 2]) -> [f64; 2] {
        let [[a, b], [c, d]] = self.a;
        let det = a * d - b * c;
        let (x, y) = (p[0] - self.center[0], p[1] - self.center[1]);
        [(d * x - b * y) / det, (-c * x + a * y) / det]
    }

    fn scale(&self) -> f64 {
        self.a[0][0].hypot(self.a[0][1]).max(self.a[1][0].hypot(self.a[1][1]))
    }
}

fn render(img: &mut [f64], size: usize, blob: &Blob, pose: &Pose) {
    let reach = blob.extent() * pose.scale() + 1.0;
    let lo = |c: f64| ((c - reach).floor().max(0.0)) as usize;
    let hi = |c: f64| ((c + reach).ceil() as usize).min(size - 1);
    for y in lo(pose.center[1])..=hi(pose.center[1]) {
        for x in lo(pose.center[0])..=hi(pose.center[0]) {
            let [u, v] = pose.to_local([x as f64 + 0.5, y as f64 + 0.5]);
            img[y * size + x] += pose.gain * blob.value(u, v);
        }
    }
}

fn background(size: usize, r: &mut StreamRng) -> Vec<f64> {
    let level = r.random_range(0.2..0.35);
    let bumps: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            (
                r.random_range(0.0..size as f64),
                r.random_range(0.0..size as f64),
                r.random_range(30.0..70.0),
                r.random_range(-0.08..0.08),
            )
        })
        .collect();
    let mut img = vec![level; size * size];
    for y in 0..size {
        for x in 0..size {
            for &(bx, by, s, a) in &bumps {
                let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                img[y * size + x] += a * (-d2 / (2.0 * s * s)).exp();
            }
        }
    }
    img
}

fn place(size: usize, radii: &[f64], r: &mut StreamRng) -> Vec<[f64; 2]> {
    'attempt: loop {
        let mut centers: Vec<[f64; 2]> = Vec::new();
        for &rad in radii {
            let lo = rad + 4.0;
            let hi = size as f64 - rad - 4.0;
            let mut placed = false;
            for _ in 0..200 {
                let c = [r.random_range(lo..hi), r.random_range(lo..hi)];
                let clear = centers
                    .iter()
                    .zip(radii)
                    .all(|(o, &ro)| (o[0] - c[0]).hypot(o[1] - c[1]) > rad + ro + 6.0);
                if clear {
                    centers.push(c);
                    placed = true;
                    break;
                }
            }
            if !placed {
                continue 'attempt;
            }
        }
        return centers;
    }
}

fn jitter(poly: &[[f64; 2]], r: &mut StreamRng) -> Polygon {
    let n = poly.len() as f64;
    let cx = poly.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = poly.iter().map(|p| p[1]).sum::<f64>() / n;
    let s = r.random_range(0.9..1.1);
    let (dx, dy) = (r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
    poly.iter()
        .map(|p| [cx + dx + s * (p[0] - cx), cy + dy + s * (p[1] - cy)])
        .collect()
}

fn round_poly(poly: Vec<[f64; 2]>) -> Polygon {
    poly.into_iter()
        .map(|[x, y]| [(x * 100.0).round() / 100.0, (y * 100.0).round() / 100.0])
        .collect()
}

/// Generated study plus the blob instances behind it.
#[derive(Clone, Debug)]
pub struct SynthStudy {
    pub study: Study,
    pub cc: Image<f64>,
    pub mlo: Image<f64>,
    pub lesion: Blob,
    pub distractors: Vec<Blob>,
}

pub fn patient_id(i: usize) -> String {
    format!("P{i:04}")
}

/// Deterministic in `(config, index)`.
pub fn generate_study(config: &SynthConfig, index: usize) -> SynthStudy {
    let mut r = rng::stream(config.seed, rng::streams::DATA, index as u64);
    let patient = patient_id(index);
    let size = config.image_size;
    let lesion = Blob::random(format!("{patient}-L0"), &mut r);
    let mut distractors = Vec::new();
    let mut lesions = Vec::new();
    let mut candidates = Vec::new();
    let mut images = Vec::new();
    let drop_view = match config.standalone_every {
        0 => None,
        n if index % n == n - 1 => Some(if (index / n) % 2 == 0 { View::MLO } else { View::CC }),
        _ => None,
    };
    let base_angle = r.random_range(0.0..TAU);
    let self_rot = config.max_rotation_deg.to_radians();

    for view in [View::CC, View::MLO] {
        let mut img = background(size, &mut r);
        let view_blobs: Vec<Blob> = (0..config.distractors_per_view)
            .map(|d| Blob::random(format!("{patient}-{view}-D{d}"), &mut r))
            .collect();
        let pose_l = if view == View::CC {
            (base_angle, 1.0, 1.0, 1.0)
        } else {
            let m = config.max_stretch;
            (
                base_angle + r.random_range(-1.0..=1.0) * self_rot,
                1.0 + r.random_range(-m..=m),
                1.0 + r.random_range(-m..=m),
                r.random_range(0.85..1.15),
            )
        };
        let radii: Vec<f64> = std::iter::once(lesion.extent() * (1.0 + config.max_stretch))
            .chain(view_blobs.iter().map(|b| b.extent()))
            .collect();
        let centers = place(size, &radii, &mut r);

        let lp = Pose::new(centers[0], pose_l.0, pose_l.1, pose_l.2, pose_l.3);
        let shown = if view == View::CC {
            lesion.clone()
        } else {
            Blob {
                phase: [r.random_range(0.0..TAU), r.random_range(0.0..TAU)],
                ..lesion.clone()
            }
        };
        render(&mut img, size, &shown, &lp);
        let gt_poly = round_poly(lesion.contour(24).into_iter().map(|u| lp.to_image(u)).collect());
        lesions.push(GroundTruthLesion {
            id: lesion.id.clone(),
            view,
            polygon: gt_poly.clone(),
            patient: patient.clone(),
        });
        let mut view_cands = vec![DetectionCandidate {
            id: format!("{patient}-{view}-C0"),
            view,
            polygon: round_poly(jitter(&gt_poly, &mut r)),
            score: (r.random_range(0.5..0.95) * 1e4f64).round() / 1e4,
            instance: Some(lesion.id.clone()),
        }];
        for (d, (b, &c)) in view_blobs.iter().zip(&centers[1..]).enumerate() {
            let pose = Pose::new(c, r.random_range(0.0..TAU), 1.0, 1.0, 1.0);
            render(&mut img, size, b, &pose);
            let poly: Vec<[f64; 2]> = b.contour(24).into_iter().map(|u| pose.to_image(u)).collect();
            view_cands.push(DetectionCandidate {
                id: format!("{patient}-{view}-C{}", d + 1),
                view,
                polygon: round_poly(jitter(&poly, &mut r)),
                score: (r.random_range(0.3..0.9) * 1e4f64).round() / 1e4,
                instance: Some(b.id.clone()),
            });
        }
        let shift = r.random_range(-0.05..0.05);
        let noise = Normal::new(0.0, config.noise_std.max(1e-300)).expect("valid normal");
        for v in img.iter_mut() {
            *v = (*v + shift + noise.sample(&mut r)).clamp(0.0, 1.0);
        }
        if drop_view != Some(view) {
            candidates.extend(view_cands);
        }
        distractors.extend(view_blobs);
        images.push(Image::new(size, size, img).expect("sized"));
    }

    let mlo = images.pop().expect("two views");
    let cc = images.pop().expect("two views");
    SynthStudy {
        study: Study {
            patient: patient.clone(),
            cc_image: format!("images/{patient}_CC.png"),
            mlo_image: format!("images/{patient}_MLO.png"),
            lesions,
            candidates,
        },
        cc,
        mlo,
        lesion,
        distractors,
    }
}

/// Paths written by [`write_synth_dataset`].
#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub manifest: PathBuf,
    pub split: PathBuf,
    pub manifest_data: Manifest,
    pub split_data: SplitManifest,
}

/// Writes `images/`, `manifest.json` and `split.json` under `dir`.
pub fn write_synth_dataset(config: &SynthConfig, dir: impl AsRef<Path>) -> Result<SynthOutput> {
    config.validate()?;
    let dir = dir.as_ref();
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut studies = Vec::with_capacity(config.patients);
    for i in 0..config.patients {
        let s = generate_study(config, i);
        save_gray16(&s.cc, dir.join(&s.study.cc_image))?;
        save_gray16(&s.mlo, dir.join(&s.study.mlo_image))?;
        studies.push(s.study);
    }
    let manifest = Manifest::new(studies);
    manifest.validate()?;
    let mpath = dir.join("manifest.json");
    manifest.save(&mpath)?;
    let split = split_by_patient(manifest.patients(), TRAIN_RATIO, config.seed);
    let spath = dir.join("split.json");
    split.save(&spath)?;
    Ok(SynthOutput {
        manifest: mpath,
        split: spath,
        manifest_data: manifest,
        split_data: split,
    })
}
