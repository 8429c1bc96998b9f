//! Image I/O, normalization, augmentation, paired datasets and synthetic data.

mod degrade;
mod image;

pub use degrade::{blur, synth_degrade, DegradeKind, DegradeProfile};
pub use image::{encode_png, load_image, quantize, save_image, to_rgb8};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `[0, 1] → [−1, 1]`.
pub fn normalize(t: &Tensor) -> Tensor {
    t.map(|v| 2.0 * v - 1.0)
}

/// `[−1, 1] → [0, 1]`.
pub fn denormalize(t: &Tensor) -> Tensor {
    t.map(|v| (v + 1.0) * 0.5)
}

/// A degraded image and its ground truth, both `[3, H, W]` in `[−1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub id: String,
    pub degraded: Tensor,
    pub clean: Tensor,
}

impl ImagePair {
    pub fn new(id: impl Into<String>, degraded: Tensor, clean: Tensor) -> Result<Self> {
        degraded.expect_same_shape(&clean, "image_pair")?;
        if degraded.rank() != 3 || degraded.shape()[0] != 3 {
            return Err(Error::shape(
                "image_pair",
                format!("expected [3, H, W], got {:?}", degraded.shape()),
            ));
        }
        Ok(Self {
            id: id.into(),
            degraded,
            clean,
        })
    }

    pub fn height(&self) -> usize {
        self.clean.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.clean.shape()[2]
    }

    /// Aligned crop of both images.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        if top + h > self.height() || left + w > self.width() || h == 0 || w == 0 {
            return Err(Error::shape(
                "crop",
                format!(
                    "{h}x{w} at ({top}, {left}) does not fit {}x{}",
                    self.height(),
                    self.width()
                ),
            ));
        }
        let cut = |t: &Tensor| {
            let (sh, sw) = (t.shape()[1], t.shape()[2]);
            Tensor::from_fn(&[3, h, w], |i| {
                let (c, y, x) = (i / (h * w), (i / w) % h, i % w);
                t.data()[(c * sh + top + y) * sw + left + x]
            })
        };
        Ok(Self {
            id: self.id.clone(),
            degraded: cut(&self.degraded),
            clean: cut(&self.clean),
        })
    }

    pub fn random_crop<R: Rng + ?Sized>(&self, h: usize, w: usize, rng: &mut R) -> Result<Self> {
        if h > self.height() || w > self.width() {
            return self.crop(0, 0, h, w);
        }
        let top = rng.random_range(0..=self.height() - h);
        let left = rng.random_range(0..=self.width() - w);
        self.crop(top, left, h, w)
    }
}

/// The flips and rotation drawn for one augmentation, applied in field order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AugmentOps {
    pub flip_h: bool,
    pub flip_v: bool,
    pub rot180: bool,
}

impl AugmentOps {
    /// Each transform independently with probability ½.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            flip_h: rng.random_bool(0.5),
            flip_v: rng.random_bool(0.5),
            rot180: rng.random_bool(0.5),
        }
    }

    pub fn from_seed(seed: u64) -> Self {
        Self::sample(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::default()
    }

    pub fn apply(&self, t: &Tensor) -> Tensor {
        let mut t = t.clone();
        if self.flip_h {
            t = t.flip_h();
        }
        if self.flip_v {
            t = t.flip_v();
        }
        if self.rot180 {
            t = t.rot180();
        }
        t
    }

    pub fn apply_pair(&self, pair: &ImagePair) -> ImagePair {
        ImagePair {
            id: pair.id.clone(),
            degraded: self.apply(&pair.degraded),
            clean: self.apply(&pair.clean),
        }
    }
}

/// Applies the same randomly drawn flips/rotation to both images of a pair.
pub fn augment(pair: &ImagePair, seed: u64) -> ImagePair {
    AugmentOps::from_seed(seed).apply_pair(pair)
}

/// Stacks pairs into `[N, 3, H, W]` batches `(degraded, clean)`.
pub fn collate(pairs: &[ImagePair]) -> Result<(Tensor, Tensor)> {
    if pairs.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let d: Vec<&Tensor> = pairs.iter().map(|p| &p.degraded).collect();
    let c: Vec<&Tensor> = pairs.iter().map(|p| &p.clean).collect();
    Ok((Tensor::stack(&d)?, Tensor::stack(&c)?))
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png") || e.eq_ignore_ascii_case("ppm"))
}

/// Image files of a directory keyed by file stem.
pub fn images_by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::Data(format!("cannot read {}: {e}", dir.display())))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry?.path();
        if !path.is_file() || !is_image(&path) {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if let Some(prev) = out.insert(stem.to_owned(), path.clone()) {
            return Err(Error::Data(format!(
                "two images share the stem `{stem}`: {} and {}",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}

/// Pairs files of two directories by identical stem; every file must have a partner.
pub fn pair_stems(a: &Path, b: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let (ma, mb) = (images_by_stem(a)?, images_by_stem(b)?);
    let unmatched: Vec<&str> = ma
        .keys()
        .filter(|k| !mb.contains_key(*k))
        .chain(mb.keys().filter(|k| !ma.contains_key(*k)))
        .map(String::as_str)
        .collect();
    if !unmatched.is_empty() {
        return Err(Error::Data(format!(
            "unmatched images between {} and {}: {}",
            a.display(),
            b.display(),
            unmatched.join(", ")
        )));
    }
    let pairs: Vec<_> = ma
        .into_iter()
        .map(|(k, pa)| {
            let pb = mb[&k].clone();
            (k, pa, pb)
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::Data(format!("no images in {} and {}", a.display(), b.display())));
    }
    Ok(pairs)
}

/// `<root>/degraded/*` and `<root>/clean/*`, paired by file stem, loaded eagerly
/// in stem order.
#[derive(Clone, Debug, Default)]
pub struct PairedDataset {
    pub pairs: Vec<ImagePair>,
}

impl PairedDataset {
    pub const DEGRADED: &'static str = "degraded";
    pub const CLEAN: &'static str = "clean";

    pub fn open(root: &Path) -> Result<Self> {
        let (d, c) = (root.join(Self::DEGRADED), root.join(Self::CLEAN));
        let mut pairs = Vec::new();
        for (stem, pd, pc) in pair_stems(&d, &c)? {
            let degraded = normalize(&load_image(&pd)?);
            let clean = normalize(&load_image(&pc)?);
            let pair = ImagePair::new(stem, degraded, clean)
                .map_err(|e| Error::Data(format!("{}: {e}", pd.display())))?;
            pairs.push(pair);
        }
        Ok(Self { pairs })
    }

    /// Writes the pairs as PNGs in the layout [`PairedDataset::open`] reads.
    pub fn save(&self, root: &Path) -> Result<()> {
        let (d, c) = (root.join(Self::DEGRADED), root.join(Self::CLEAN));
        fs::create_dir_all(&d)?;
        fs::create_dir_all(&c)?;
        for p in &self.pairs {
            let name = format!("{}.png", p.id);
            save_image(&d.join(&name), &denormalize(&p.degraded))?;
            save_image(&c.join(&name), &denormalize(&p.clean))?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Smooth synthetic scene in `[0, 1]`, `[3, H, W]`: a colour gradient, a few
/// low-frequency waves and soft-edged discs.
pub fn synth_clean(h: usize, w: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut base = [0.0f64; 3];
    let mut grad = [[0.0f64; 2]; 3];
    for c in 0..3 {
        base[c] = rng.random_range(0.25..0.75);
        grad[c] = [rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)];
    }
    let waves: Vec<(usize, f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0..3),
                rng.random_range(0.5..2.5),
                rng.random_range(0.5..2.5),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.05..0.15),
            )
        })
        .collect();
    let discs: Vec<(f64, f64, f64, [f64; 3])> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.0..h as f64),
                rng.random_range(0.0..w as f64),
                rng.random_range(0.1..0.3) * h.min(w) as f64,
                [
                    rng.random_range(-0.25..0.25),
                    rng.random_range(-0.25..0.25),
                    rng.random_range(-0.25..0.25),
                ],
            )
        })
        .collect();
    Tensor::from_fn(&[3, h, w], |i| {
        let (c, y, x) = (i / (h * w), (i / w) % h, i % w);
        let (u, v) = (y as f64 / h.max(1) as f64, x as f64 / w.max(1) as f64);
        let mut val = base[c] + grad[c][0] * (u - 0.5) + grad[c][1] * (v - 0.5);
        for &(wc, fy, fx, ph, amp) in &waves {
            if wc == c {
                val += amp * (std::f64::consts::TAU * (fy * u + fx * v) + ph).sin();
            }
        }
        for &(cy, cx, r, col) in &discs {
            let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
            let edge = 1.0 / (1.0 + ((d - r) / 1.5).exp());
            val += col[c] * edge;
        }
        val.clamp(0.0, 1.0) as f32
    })
}

/// `count` clean scenes with their degraded versions, ids `img000…`.
pub fn synth_pairs(count: usize, h: usize, w: usize, profile: &DegradeProfile, seed: u64) -> Result<Vec<ImagePair>> {
    (0..count)
        .map(|i| {
            let s = seed.wrapping_mul(1000).wrapping_add(i as u64);
            let clean = normalize(&synth_clean(h, w, s));
            let degraded = synth_degrade(&clean, profile, s ^ 0x5eed)?;
            ImagePair::new(format!("img{i:03}"), degraded, clean)
        })
        .collect()
}
