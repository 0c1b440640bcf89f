//! Synthetic rotation-invariant classification task.
//!
//! Each class owns a small binary motif. A sample plants its class motif,
//! turned by a random multiple of 90 degrees, at a random position over
//! Gaussian noise. Rotating a sample yields another valid sample of the same
//! class, so labels are invariant under quarter turns by construction.

use std::collections::BTreeMap;
use std::path::Path;

use cyclicnet::tensor::dump;
use cyclicnet::{Dims, Tensor4};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const MOTIF: usize = 5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// Motifs turned by a uniformly random multiple of 90 degrees.
    #[default]
    Uniform,
    /// Motifs always upright. Used to expose models that are not rotation invariant.
    Canonical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTaskSpec {
    /// Side of the square images.
    pub size: usize,
    pub classes: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Standard deviation of the background noise.
    pub noise: f64,
    pub seed: u64,
    #[serde(default)]
    pub orientation: Orientation,
}

impl SyntheticTaskSpec {
    pub fn check(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.size < MOTIF {
            problems.push(format!("image size {} is smaller than the {MOTIF}x{MOTIF} motif", self.size));
        }
        if !(2..=64).contains(&self.classes) {
            problems.push(format!("class count {} outside 2..=64", self.classes));
        }
        if self.train == 0 || self.val == 0 || self.test == 0 {
            problems.push("every split needs at least one sample".to_string());
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            problems.push("noise must be a non-negative number".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(cyclicnet::Error::Validation(problems).into())
        }
    }
}

/// Images `(N,1,S,S)` with one label per image.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub images: Tensor4<f64>,
    pub labels: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Every image turned by `k` quarter turns; labels unchanged.
    pub fn rotated(&self, k: i32) -> Split {
        Split { images: self.images.rotate90(k), labels: self.labels.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: SyntheticTaskSpec,
    pub train: Split,
    pub val: Split,
    pub test: Split,
    /// The test split under 0, 1, 2 and 3 quarter turns.
    pub test_rotations: Vec<Split>,
}

type Motif = [[f64; MOTIF]; MOTIF];

fn rotate_motif(m: &Motif) -> Motif {
    let mut out = [[0.0; MOTIF]; MOTIF];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = m[MOTIF - 1 - j][i];
        }
    }
    out
}

fn orbit(m: &Motif) -> [Motif; 4] {
    let r1 = rotate_motif(m);
    let r2 = rotate_motif(&r1);
    let r3 = rotate_motif(&r2);
    [*m, r1, r2, r3]
}

/// Random binary motifs with trivial rotational symmetry and pairwise
/// distinct orbits, so no class can be confused with a turned copy of another.
fn motifs(classes: usize, rng: &mut impl Rng) -> Vec<Motif> {
    let mut chosen: Vec<Motif> = Vec::with_capacity(classes);
    while chosen.len() < classes {
        let mut m = [[0.0; MOTIF]; MOTIF];
        for v in m.iter_mut().flatten() {
            *v = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
        }
        let ones = m.iter().flatten().filter(|&&v| v > 0.0).count();
        let o = orbit(&m);
        if !(8..=17).contains(&ones) || o[1..].contains(&m) {
            continue;
        }
        if chosen.iter().any(|c| o.contains(c)) {
            continue;
        }
        chosen.push(m);
    }
    chosen
}

fn sample_split(count: usize, spec: &SyntheticTaskSpec, motifs: &[Motif], rng: &mut ChaCha8Rng) -> Split {
    let s = spec.size;
    let noise = Normal::new(0.0, spec.noise).expect("noise checked non-negative");
    let mut labels: Vec<usize> = (0..count).map(|i| i % spec.classes).collect();
    labels.shuffle(rng);
    let mut data = Vec::with_capacity(count * s * s);
    for &label in &labels {
        let k = match spec.orientation {
            Orientation::Uniform => rng.random_range(0..4),
            Orientation::Canonical => 0,
        };
        let motif = orbit(&motifs[label])[k];
        let (top, left) = (rng.random_range(0..=s - MOTIF), rng.random_range(0..=s - MOTIF));
        let mut img: Vec<f64> = (0..s * s).map(|_| noise.sample(rng)).collect();
        for (i, row) in motif.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                img[(top + i) * s + left + j] += v;
            }
        }
        data.extend(img);
    }
    let images = Tensor4::from_vec(Dims::new(count, 1, s, s), data).expect("sized above");
    Split { images, labels }
}

/// Deterministic in `spec`: the same spec always yields identical bytes.
pub fn generate(spec: &SyntheticTaskSpec) -> Result<Dataset> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let motifs = motifs(spec.classes, &mut rng);
    let train = sample_split(spec.train, spec, &motifs, &mut rng);
    let val = sample_split(spec.val, spec, &motifs, &mut rng);
    let test = sample_split(spec.test, spec, &motifs, &mut rng);
    let test_rotations = (0..4).map(|k| test.rotated(k)).collect();
    Ok(Dataset { spec: spec.clone(), train, val, test, test_rotations })
}

const SPLITS: [&str; 3] = ["train", "val", "test"];

impl Dataset {
    fn split(&self, name: &str) -> &Split {
        match name {
            "train" => &self.train,
            "val" => &self.val,
            _ => &self.test,
        }
    }

    /// Writes `spec.json`, `labels.json`, `{train,val,test}_images.t4d` and
    /// `test_rot{1,2,3}_images.t4d`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("spec.json"), serde_json::to_string_pretty(&self.spec)?)?;
        let labels: BTreeMap<&str, &Vec<usize>> = SPLITS.iter().map(|&n| (n, &self.split(n).labels)).collect();
        std::fs::write(dir.join("labels.json"), serde_json::to_string(&labels)?)?;
        for name in SPLITS {
            dump::write_file(dir.join(format!("{name}_images.t4d")), &self.split(name).images)?;
        }
        for (k, rot) in self.test_rotations.iter().enumerate().skip(1) {
            dump::write_file(dir.join(format!("test_rot{k}_images.t4d")), &rot.images)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let spec: SyntheticTaskSpec = serde_json::from_str(&std::fs::read_to_string(dir.join("spec.json"))?)?;
        let labels: BTreeMap<String, Vec<usize>> =
            serde_json::from_str(&std::fs::read_to_string(dir.join("labels.json"))?)?;
        let read = |name: &str| -> Result<Split> {
            let images = dump::read_file::<f64>(dir.join(format!("{name}_images.t4d")))?;
            let split = if name.starts_with("test_rot") { "test" } else { name };
            let labels = labels.get(split).cloned().ok_or_else(|| HarnessError::Config(format!("labels.json has no {split:?} split")))?;
            if images.dims().n != labels.len() || images.dims().c != 1 || images.dims().h != spec.size || !images.dims().is_square() {
                return Err(HarnessError::Config(format!("{name} images {} do not match the task", images.dims())));
            }
            Ok(Split { images, labels })
        };
        let (train, val, test) = (read("train")?, read("val")?, read("test")?);
        let mut test_rotations = vec![test.clone()];
        for k in 1..4 {
            test_rotations.push(read(&format!("test_rot{k}"))?);
        }
        Ok(Dataset { spec, train, val, test, test_rotations })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SyntheticTaskSpec {
        SyntheticTaskSpec { size: 9, classes: 4, train: 30, val: 7, test: 9, noise: 0.2, seed: 5, orientation: Orientation::Uniform }
    }

    #[test]
    fn same_seed_gives_identical_bytes() {
        let (a, b) = (generate(&spec()).unwrap(), generate(&spec()).unwrap());
        assert_eq!(dump::encode(&a.train.images), dump::encode(&b.train.images));
        assert_eq!(a, b);
        let c = generate(&SyntheticTaskSpec { seed: 6, ..spec() }).unwrap();
        assert_ne!(a.train.images, c.train.images);
    }

    #[test]
    fn classes_are_balanced_within_one() {
        let d = generate(&spec()).unwrap();
        for split in [&d.train, &d.val, &d.test] {
            let mut counts = vec![0usize; 4];
            split.labels.iter().for_each(|&l| counts[l] += 1);
            assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1, "{counts:?}");
        }
    }

    #[test]
    fn motif_orbits_are_disjoint_and_asymmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ms = motifs(32, &mut rng);
        for (i, a) in ms.iter().enumerate() {
            let o = orbit(a);
            assert!(!o[1..].contains(a));
            assert!(ms[i + 1..].iter().all(|b| !o.contains(b)));
        }
    }

    #[test]
    fn rotating_a_sample_gives_a_valid_sample_of_the_same_class() {
        // a noiseless image is its motif orbit member plus zeros
        let d = generate(&SyntheticTaskSpec { noise: 0.0, ..spec() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ms = motifs(4, &mut rng);
        for k in 0..4 {
            let rot = d.train.rotated(k);
            for n in 0..rot.len() {
                let img = rot.images.sample(n);
                let hit = (0..=9 - MOTIF).any(|t| {
                    (0..=9 - MOTIF).any(|l| {
                        orbit(&ms[rot.labels[n]]).iter().any(|m| {
                            (0..MOTIF).all(|i| (0..MOTIF).all(|j| img[(t + i) * 9 + l + j] == m[i][j]))
                        })
                    })
                });
                assert!(hit, "sample {n} under {k} turns lost its class motif");
                assert_eq!(img.iter().sum::<f64>(), ms[rot.labels[n]].iter().flatten().sum::<f64>());
            }
        }
    }

    #[test]
    fn canonical_orientation_keeps_motifs_upright() {
        let d = generate(&SyntheticTaskSpec { noise: 0.0, orientation: Orientation::Canonical, ..spec() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ms = motifs(4, &mut rng);
        for n in 0..d.train.len() {
            let img = d.train.images.sample(n);
            let m = &ms[d.train.labels[n]];
            let found = (0..=9 - MOTIF).any(|t| (0..=9 - MOTIF).any(|l| (0..MOTIF).all(|i| (0..MOTIF).all(|j| img[(t + i) * 9 + l + j] == m[i][j]))));
            assert!(found);
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = generate(&spec()).unwrap();
        d.save(dir.path()).unwrap();
        assert_eq!(Dataset::load(dir.path()).unwrap(), d);
    }

    #[test]
    fn too_small_images_are_rejected() {
        assert!(generate(&SyntheticTaskSpec { size: 4, ..spec() }).is_err());
    }
}
