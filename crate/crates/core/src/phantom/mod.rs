//! Seeded synthetic head phantoms.
//!
//! A phantom is an ellipsoidal head (bone shell, soft-tissue interior) with
//! one or two spherical eyes near the anterior surface, each holding an
//! ellipsoidal lens on its anterior side. Anterior is the -y direction and
//! the patient's left is +x. Labels follow the organ registry: left/right
//! eye 2/3, left/right lens 4/5.

mod dose;

pub use dose::{generate_dose_grid, lateral_opposed_beams, Beam, BeamEntry, FieldRect};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::organs::{LEFT_EYE, LEFT_LENS, RIGHT_EYE, RIGHT_LENS};
use crate::par;
use crate::rng;
use crate::volume::{LabelMap, Volume};

/// Intensities in CT-number-like units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bands {
    pub air: f64,
    pub soft_tissue: f64,
    pub eye: f64,
    pub lens: f64,
    pub bone: f64,
}

impl Default for Bands {
    fn default() -> Self {
        Self {
            air: -1000.0,
            soft_tissue: 40.0,
            eye: 20.0,
            lens: 80.0,
            bone: 1000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomParams {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// When set, each case draws its in-plane (x, y) spacing uniformly from this range.
    pub spacing_jitter: Option<[f64; 2]>,
    pub head_semi_axes_mm: [f64; 3],
    pub skull_thickness_mm: f64,
    pub eye_radius_mm: f64,
    /// Left-eye centre relative to the head centre; the right eye mirrors x.
    pub eye_offset_mm: [f64; 3],
    pub lens_semi_axes_mm: [f64; 3],
    /// Distance from the eye centre to the lens centre, towards anterior.
    pub lens_depth_mm: f64,
    pub bands: Bands,
    pub noise_std: f64,
    /// Each eye centre is displaced uniformly within `±jitter_mm` per axis.
    pub jitter_mm: [f64; 3],
    /// Both eyes, or only the left one.
    pub bilateral: bool,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            dims: [64, 64, 48],
            spacing: [1.0, 1.0, 1.0],
            spacing_jitter: None,
            head_semi_axes_mm: [28.0, 30.0, 22.0],
            skull_thickness_mm: 2.0,
            eye_radius_mm: 6.0,
            eye_offset_mm: [10.0, -15.0, 2.0],
            lens_semi_axes_mm: [2.5, 1.5, 2.0],
            lens_depth_mm: 3.5,
            bands: Bands::default(),
            noise_std: 15.0,
            jitter_mm: [1.0, 1.0, 1.0],
            bilateral: true,
        }
    }
}

impl PhantomParams {
    /// A single eye in a 32³ millimetre grid, small enough to train on in
    /// minutes. The head outline lies outside the grid, so every
    /// non-eye voxel is soft tissue.
    pub fn toy() -> Self {
        Self {
            dims: [32, 32, 32],
            head_semi_axes_mm: [40.0, 40.0, 30.0],
            eye_radius_mm: 8.0,
            eye_offset_mm: [0.0, -4.0, 0.0],
            lens_semi_axes_mm: [5.0, 3.5, 5.0],
            lens_depth_mm: 4.0,
            noise_std: 5.0,
            bilateral: false,
            ..Self::default()
        }
    }
}

/// Known geometry of one generated case, in mm from the voxel (0, 0, 0) centre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomGeometry {
    pub spacing: [f64; 3],
    pub head_center_mm: [f64; 3],
    pub eyes: Vec<EyeGeometry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EyeGeometry {
    pub eye_label: u8,
    pub lens_label: u8,
    pub center_mm: [f64; 3],
    pub radius_mm: f64,
    pub lens_center_mm: [f64; 3],
    pub lens_semi_axes_mm: [f64; 3],
}

impl EyeGeometry {
    /// Eye centre in (fractional) voxel coordinates.
    pub fn center_voxel(&self, spacing: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|a| self.center_mm[a] / spacing[a])
    }

    pub fn in_eye(&self, p: [f64; 3]) -> bool {
        let d2: f64 = (0..3).map(|a| (p[a] - self.center_mm[a]).powi(2)).sum();
        d2 <= self.radius_mm * self.radius_mm
    }

    pub fn in_lens(&self, p: [f64; 3]) -> bool {
        ellipsoid_norm(p, self.lens_center_mm, self.lens_semi_axes_mm) <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub seed: u64,
    pub volume: Volume,
    pub labels: LabelMap,
    pub geometry: PhantomGeometry,
}

fn ellipsoid_norm(p: [f64; 3], c: [f64; 3], r: [f64; 3]) -> f64 {
    (0..3).map(|a| ((p[a] - c[a]) / r[a]).powi(2)).sum()
}

/// Unit vectors on a latitude/longitude lattice with `n` longitudes.
fn sphere_dirs(n: usize) -> impl Iterator<Item = [f64; 3]> {
    use std::f64::consts::PI;
    (0..n).flat_map(move |i| {
        (0..=n / 2).map(move |j| {
            let theta = PI * j as f64 / (n / 2) as f64;
            let phi = 2.0 * PI * i as f64 / n as f64;
            [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]
        })
    })
}

impl PhantomParams {
    pub fn validate(&self) -> Result<()> {
        let geo = |m: String| Err(Error::Geometry(m));
        if self.dims.contains(&0) || self.spacing.iter().any(|&s| !(s > 0.0)) {
            return geo(format!("bad grid {:?} / {:?}", self.dims, self.spacing));
        }
        if let Some([lo, hi]) = self.spacing_jitter {
            if !(lo > 0.0 && lo <= hi) {
                return geo(format!("bad spacing range [{lo}, {hi}]"));
            }
        }
        let b = self.bands;
        if [b.air, b.soft_tissue, b.eye, b.lens, b.bone].iter().any(|v| !v.is_finite()) {
            return geo("intensity bands must be finite".into());
        }
        if !(self.noise_std >= 0.0) {
            return geo("noise std must be non-negative".into());
        }
        if self.eye_radius_mm <= 0.0 || self.lens_semi_axes_mm.iter().any(|&r| r <= 0.0) {
            return geo("eye and lens sizes must be positive".into());
        }
        // Farthest lens surface point from the eye centre, by sampling.
        let l = self.lens_semi_axes_mm;
        let lens_reach = sphere_dirs(48)
            .map(|d| {
                let p = [d[0] * l[0], d[1] * l[1] - self.lens_depth_mm, d[2] * l[2]];
                (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
            })
            .fold(0.0, f64::max);
        if lens_reach >= self.eye_radius_mm {
            return geo(format!(
                "lens reaches {lens_reach:.2} mm from the eye centre, eye radius is {}",
                self.eye_radius_mm
            ));
        }
        let inner = self.head_semi_axes_mm.map(|a| a - self.skull_thickness_mm);
        if inner.iter().any(|&a| a <= 0.0) {
            return geo("skull thicker than the head".into());
        }
        // The eye, inflated by the worst-case jitter, must fit inside the skull.
        let slack: f64 = self.jitter_mm.iter().map(|j| j * j).sum::<f64>().sqrt();
        let r = self.eye_radius_mm + slack;
        let c = self.eye_offset_mm;
        for d in sphere_dirs(64) {
            let p = [0, 1, 2].map(|a| c[a] + r * d[a]);
            if ellipsoid_norm(p, [0.0; 3], inner) >= 1.0 {
                return geo("eye does not fit inside the skull".into());
            }
        }
        if self.bilateral && self.eye_offset_mm[0].abs() <= self.eye_radius_mm + self.jitter_mm[0] {
            return geo("left and right eyes overlap".into());
        }
        Ok(())
    }
}

/// Generates one case. Deterministic in `(params, case_seed)`.
pub fn generate_phantom(params: &PhantomParams, case_seed: u64) -> Result<Phantom> {
    params.validate()?;
    let mut rng = rng::stream(case_seed, "phantom");
    let mut spacing = params.spacing;
    if let Some([lo, hi]) = params.spacing_jitter {
        let s = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        spacing[0] = s;
        spacing[1] = s;
    }
    let dims = params.dims;
    let head_center = [0, 1, 2].map(|a| (dims[a] as f64 - 1.0) / 2.0 * spacing[a]);

    let sides: &[(f64, u8, u8)] = if params.bilateral {
        &[(1.0, LEFT_EYE, LEFT_LENS), (-1.0, RIGHT_EYE, RIGHT_LENS)]
    } else {
        &[(1.0, LEFT_EYE, LEFT_LENS)]
    };
    let mut eyes = Vec::new();
    for &(side, eye_label, lens_label) in sides {
        let jitter = params
            .jitter_mm
            .map(|j| if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 });
        let off = params.eye_offset_mm;
        let center = [
            head_center[0] + side * off[0] + jitter[0],
            head_center[1] + off[1] + jitter[1],
            head_center[2] + off[2] + jitter[2],
        ];
        let lens_center = [center[0], center[1] - params.lens_depth_mm, center[2]];
        eyes.push(EyeGeometry {
            eye_label,
            lens_label,
            center_mm: center,
            radius_mm: params.eye_radius_mm,
            lens_center_mm: lens_center,
            lens_semi_axes_mm: params.lens_semi_axes_mm,
        });
    }

    let outer = params.head_semi_axes_mm;
    let inner = outer.map(|a| a - params.skull_thickness_mm);
    let bands = params.bands;
    let mut values = Vec::with_capacity(dims.iter().product());
    let mut labels = Vec::with_capacity(values.capacity());
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = [x as f64 * spacing[0], y as f64 * spacing[1], z as f64 * spacing[2]];
                let mut v = bands.air;
                let mut l = 0u8;
                if ellipsoid_norm(p, head_center, outer) <= 1.0 {
                    v = if ellipsoid_norm(p, head_center, inner) <= 1.0 {
                        bands.soft_tissue
                    } else {
                        bands.bone
                    };
                }
                for eye in &eyes {
                    if eye.in_lens(p) {
                        v = bands.lens;
                        l = eye.lens_label;
                    } else if eye.in_eye(p) {
                        v = bands.eye;
                        l = eye.eye_label;
                    }
                }
                values.push(v);
                labels.push(l);
            }
        }
    }
    if params.noise_std > 0.0 {
        let noise = Normal::new(0.0, params.noise_std).expect("validated std");
        for v in &mut values {
            *v += noise.sample(&mut rng);
        }
    }
    let volume = Volume::new(dims, spacing, values.into_iter().map(|v| v as f32).collect())?;
    let labels = LabelMap::new(dims, spacing, labels)?;
    Ok(Phantom {
        seed: case_seed,
        volume,
        labels,
        geometry: PhantomGeometry {
            spacing,
            head_center_mm: head_center,
            eyes,
        },
    })
}

/// Seed of case `i` in a dataset generated from `seed`.
pub fn case_seed(seed: u64, i: usize) -> u64 {
    rng::derive(seed, &format!("case-{i}"))
}

/// `n` cases with independent derived seeds, generated in parallel.
pub fn generate_dataset(n: usize, params: &PhantomParams, seed: u64) -> Result<Vec<Phantom>> {
    if n == 0 {
        return Err(Error::InvalidParameter("dataset needs at least one case".into()));
    }
    params.validate()?;
    par::map_range(n, |i| generate_phantom(params, case_seed(seed, i)))
        .into_iter()
        .collect()
}

/// Case indices of a train / validation / test partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Consecutive partition with `round(n * train)` and `round(n * val)` cases;
/// the rest is test. The default fractions are 0.7 / 0.1.
pub fn split(n: usize, train: f64, val: f64) -> DatasetSplit {
    let nt = ((n as f64 * train).round() as usize).min(n);
    let nv = ((n as f64 * val).round() as usize).min(n - nt);
    DatasetSplit {
        train: (0..nt).collect(),
        val: (nt..nt + nv).collect(),
        test: (nt + nv..n).collect(),
    }
}

pub fn default_split(n: usize) -> DatasetSplit {
    split(n, 0.7, 0.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn quiet() -> PhantomParams {
        PhantomParams {
            noise_std: 0.0,
            ..PhantomParams::default()
        }
    }

    #[test]
    fn noiseless_volume_has_exact_bands() {
        let p = generate_phantom(&quiet(), 3).unwrap();
        let b = Bands::default();
        let allowed = [b.air, b.soft_tissue, b.eye, b.lens, b.bone].map(|v| v as f32);
        assert!(p.volume.data().iter().all(|v| allowed.contains(v)));
        for (v, l) in p.volume.data().iter().zip(p.labels.data()) {
            match l {
                2 | 3 => assert_eq!(*v, b.eye as f32),
                4 | 5 => assert_eq!(*v, b.lens as f32),
                _ => {}
            }
        }
        for label in [2, 3, 4, 5] {
            assert!(p.labels.count(label) > 0, "label {label} missing");
        }
    }

    #[test]
    fn toy_has_one_eye_and_lens() {
        let p = generate_phantom(&PhantomParams::toy(), 1).unwrap();
        assert_eq!(p.geometry.eyes.len(), 1);
        assert_eq!(p.labels.count(3) + p.labels.count(5), 0);
        assert!(p.labels.count(4) > 300);
        assert!(p.labels.count(2) > 1500);
    }

    #[test]
    fn deterministic() {
        let a = generate_phantom(&PhantomParams::default(), 9).unwrap();
        let b = generate_phantom(&PhantomParams::default(), 9).unwrap();
        assert_eq!(a, b);
        assert!(a.volume.data().iter().zip(b.volume.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn lens_lies_inside_eye() {
        for seed in 0..5 {
            let p = generate_phantom(&PhantomParams::default(), seed).unwrap();
            let s = p.geometry.spacing;
            for eye in &p.geometry.eyes {
                let lens = p.labels.mask_of(eye.lens_label).points();
                assert!(!lens.is_empty());
                let mut c = [0.0; 3];
                for q in &lens {
                    let mm = [0, 1, 2].map(|a| q[a] as f64 * s[a]);
                    assert!(eye.in_eye(mm));
                    for a in 0..3 {
                        c[a] += mm[a] / lens.len() as f64;
                    }
                }
                assert!(eye.in_eye(c));
            }
        }
    }

    #[test]
    fn infeasible_geometry() {
        let big_lens = PhantomParams {
            lens_semi_axes_mm: [7.0, 1.0, 1.0],
            ..PhantomParams::default()
        };
        assert!(matches!(generate_phantom(&big_lens, 0), Err(Error::Geometry(_))));
        let outside = PhantomParams {
            eye_offset_mm: [12.0, -29.0, 0.0],
            ..PhantomParams::default()
        };
        assert!(matches!(generate_phantom(&outside, 0), Err(Error::Geometry(_))));
    }

    #[test]
    fn dataset_cases_differ() {
        let params = PhantomParams {
            dims: [24, 24, 24],
            head_semi_axes_mm: [11.0, 11.0, 11.0],
            skull_thickness_mm: 1.0,
            eye_radius_mm: 4.0,
            eye_offset_mm: [0.0, -4.0, 0.0],
            lens_semi_axes_mm: [1.5, 1.0, 1.5],
            lens_depth_mm: 2.0,
            jitter_mm: [1.0; 3],
            bilateral: false,
            ..PhantomParams::default()
        };
        let cases = generate_dataset(12, &params, 4).unwrap();
        let distinct: HashSet<Vec<u32>> = cases
            .iter()
            .map(|c| c.volume.data().iter().map(|v| v.to_bits()).collect())
            .collect();
        assert_eq!(distinct.len(), 12);
        assert!(generate_dataset(0, &params, 4).is_err());
    }

    #[test]
    fn spacing_jitter_stays_in_range() {
        let params = PhantomParams {
            spacing_jitter: Some([0.44, 0.98]),
            head_semi_axes_mm: [14.0, 15.0, 22.0],
            eye_radius_mm: 3.0,
            eye_offset_mm: [4.0, -6.0, 1.0],
            lens_semi_axes_mm: [1.0, 0.8, 1.0],
            lens_depth_mm: 1.5,
            jitter_mm: [0.5; 3],
            ..PhantomParams::default()
        };
        for seed in 0..4 {
            let s = generate_phantom(&params, seed).unwrap().volume.spacing();
            assert!((0.44..=0.98).contains(&s[0]) && s[0] == s[1] && s[2] == 1.0);
        }
    }

    #[test]
    fn split_counts() {
        let s = default_split(50);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (35, 5, 10));
        let all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        let s = split(3, 0.7, 0.1);
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), 3);
    }
}
