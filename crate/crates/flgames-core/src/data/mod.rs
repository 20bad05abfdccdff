//! Procedural construction of spurious-correlation federated datasets.
//!
//! Every client's data follows the same causal chain: a preliminary label
//! `y_tilde` is flipped with probability `delta` into the final label `y`,
//! and `y` is flipped with the client-specific probability `p` into the
//! spurious code `z` that drives the rendered nuisance feature (color
//! channel or patch position). Training clients get small `p` (spurious
//! feature mostly agrees with the label); the test client gets a large `p`
//! (mostly disagrees), so a predictor that latched onto the nuisance
//! collapses out of distribution.

pub mod cache;
pub mod idx;
pub mod sem;

pub use idx::{parse_idx, RawImageSet};
pub use sem::{synth_sem_generate, SemLayout};

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::seed;

/// Side of the train/test split an environment belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Train,
    Test,
}

/// Data-generating parameters of one client environment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvSpec {
    pub client_id: usize,
    /// Label-noise flip probability relating `y_tilde` to `y`.
    pub delta: f64,
    /// Spurious flip probability relating `y` to the code `z`.
    pub p_spurious: f64,
    pub n_samples: usize,
    pub role: Role,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::Config(format!("delta {} not in [0,1]", self.delta)));
        }
        if !(0.0..=1.0).contains(&self.p_spurious) {
            return Err(Error::Config(format!(
                "p_spurious {} not in [0,1]",
                self.p_spurious
            )));
        }
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be positive".into()));
        }
        Ok(())
    }
}

/// A rendered dataset: flattened inputs in `[0,1]`, final labels `y`, the
/// spurious code `z` of each sample, and the spec that produced it.
#[derive(Debug, Clone)]
pub struct SpuriousDataset {
    pub inputs: Matrix,
    pub labels: Vec<u8>,
    pub spurious: Vec<u8>,
    pub classes: usize,
    pub provenance: EnvSpec,
}

impl SpuriousDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.rows() != self.labels.len() || self.labels.len() != self.spurious.len() {
            return Err(Error::Shape(format!(
                "{} rows, {} labels, {} codes",
                self.inputs.rows(),
                self.labels.len(),
                self.spurious.len()
            )));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l as usize >= self.classes) {
            return Err(Error::Label(format!(
                "label {l} out of range for {} classes",
                self.classes
            )));
        }
        if let Some(&z) = self.spurious.iter().find(|&&z| z as usize >= self.classes) {
            return Err(Error::Label(format!(
                "code {z} out of range for {} classes",
                self.classes
            )));
        }
        Ok(())
    }
}

/// What happens to one source class under a [`LabelRule`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassAction {
    Map(u8),
    Drop,
}

/// Total map from source classes to task labels; classes may be dropped.
#[derive(Debug, Clone)]
pub struct LabelRule {
    map: BTreeMap<u8, ClassAction>,
    pub classes: usize,
}

impl LabelRule {
    pub fn new(map: BTreeMap<u8, ClassAction>, classes: usize) -> Self {
        Self { map, classes }
    }

    /// Digits 0-4 to label 0, digits 5-9 to label 1.
    pub fn mnist_binary() -> Self {
        let map = (0u8..10)
            .map(|d| (d, ClassAction::Map(u8::from(d >= 5))))
            .collect();
        Self::new(map, 2)
    }

    /// Clothing (t-shirt, trouser, pullover, dress, coat, shirt) to 0,
    /// footwear (sandal, sneaker, ankle boot) to 1; bags are dropped.
    pub fn fashion_binary() -> Self {
        let mut map = BTreeMap::new();
        for c in [0u8, 1, 2, 3, 4, 6] {
            map.insert(c, ClassAction::Map(0));
        }
        for c in [5u8, 7, 9] {
            map.insert(c, ClassAction::Map(1));
        }
        map.insert(8, ClassAction::Drop);
        Self::new(map, 2)
    }

    /// Motor objects (airplane, automobile, ship, truck) to 0, animals to 1;
    /// frogs are dropped to balance the two classes.
    pub fn cifar_binary() -> Self {
        let mut map = BTreeMap::new();
        for c in [0u8, 1, 8, 9] {
            map.insert(c, ClassAction::Map(0));
        }
        for c in [2u8, 3, 4, 5, 7] {
            map.insert(c, ClassAction::Map(1));
        }
        map.insert(6, ClassAction::Drop);
        Self::new(map, 2)
    }

    /// `label mod classes` over ten source classes, for the multi-class
    /// variants (identity when `classes == 10`).
    pub fn modulo(classes: usize) -> Self {
        let map = (0u8..10)
            .map(|d| (d, ClassAction::Map(d % classes as u8)))
            .collect();
        Self::new(map, classes)
    }

    /// Applies the rule; returns the kept source indices and their labels.
    pub fn apply(&self, labels: &[u8]) -> Result<(Vec<usize>, Vec<u8>)> {
        let mut kept = Vec::with_capacity(labels.len());
        let mut mapped = Vec::with_capacity(labels.len());
        for (i, &raw) in labels.iter().enumerate() {
            match self.map.get(&raw) {
                Some(ClassAction::Map(c)) => {
                    kept.push(i);
                    mapped.push(*c);
                }
                Some(ClassAction::Drop) => {}
                None => {
                    return Err(Error::Rule(format!(
                        "class {raw} is neither mapped nor dropped"
                    )))
                }
            }
        }
        Ok((kept, mapped))
    }
}

/// Flips each label independently with probability `delta`. For more than
/// two classes a flipped label is redrawn uniformly among the other
/// `classes - 1`, which reduces to the plain binary flip at two classes.
pub fn apply_label_noise(labels: &[u8], delta: f64, classes: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    labels
        .iter()
        .map(|&y| {
            if rng.gen::<f64>() < delta {
                let offset = if classes == 2 {
                    1
                } else {
                    rng.gen_range(1..classes as u8)
                };
                (y + offset) % classes as u8
            } else {
                y
            }
        })
        .collect()
}

/// Binary spurious code: `z = y` with probability `1 - p`, flipped with
/// probability `p`, independently per sample.
pub fn assign_spurious_code(labels: &[u8], p_spurious: f64, seed: u64) -> Vec<u8> {
    multiclass_colorize(labels, p_spurious, 2, seed)
}

/// Color index per sample: the class's own color with probability `1 - p`,
/// the succeeding class's color `(y + 1) mod classes` with probability `p`.
/// Training clients use small `p`; the test client's large `p` produces the
/// inverted coloring where class `y` predominantly wears the color of
/// `y + 1`. At two classes this is exactly the binary code flip.
pub fn multiclass_colorize(labels: &[u8], p_spurious: f64, classes: usize, seed: u64) -> Vec<u8> {
    assert!(classes >= 2, "need at least 2 classes");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    labels
        .iter()
        .map(|&y| {
            if rng.gen::<f64>() < p_spurious {
                (y + 1) % classes as u8
            } else {
                y
            }
        })
        .collect()
}

/// Number of color channels used for `classes` distinct colors.
pub fn palette_channels(classes: usize) -> usize {
    (classes as f64).log2().ceil() as usize + 1
}

/// Renders a grayscale image into `palette_channels(classes)` channels
/// (channel-major, pixels scaled into `[0,1]`). Color `c` lights the
/// channels where the binary code of `c + 1` has a set bit, so every color
/// is distinct and nonzero. At two classes this is the two-channel scheme:
/// color 0 occupies channel 0, color 1 occupies channel 1.
pub fn render_palette(image: &[u8], color: u8, classes: usize) -> Vec<f64> {
    let channels = palette_channels(classes);
    let code = color as usize + 1;
    let px = image.len();
    let mut out = vec![0.0; channels * px];
    for ch in 0..channels {
        if code >> ch & 1 == 1 {
            for (dst, &src) in out[ch * px..(ch + 1) * px].iter_mut().zip(image) {
                *dst = src as f64 / 255.0;
            }
        }
    }
    out
}

/// Two-channel binary coloring: channel `z` carries the pixels, the other
/// channel is zero.
pub fn render_color(image: &[u8], z: u8) -> Vec<f64> {
    render_palette(image, z, 2)
}

/// Side length of the corner patch.
pub const PATCH_SIZE: usize = 5;

/// Zeroes a 5x5 patch in the top-left (`z = 0`) or top-right (`z = 1`)
/// corner; the rest of the image is scaled into `[0,1]` untouched.
pub fn render_patch(image: &[u8], height: usize, width: usize, z: u8) -> Result<Vec<f64>> {
    if height < PATCH_SIZE || width < PATCH_SIZE {
        return Err(Error::Config(format!(
            "image {height}x{width} smaller than {PATCH_SIZE}x{PATCH_SIZE} patch"
        )));
    }
    let mut out: Vec<f64> = image.iter().map(|&v| v as f64 / 255.0).collect();
    let col0 = if z == 0 { 0 } else { width - PATCH_SIZE };
    for r in 0..PATCH_SIZE {
        for c in col0..col0 + PATCH_SIZE {
            out[r * width + c] = 0.0;
        }
    }
    Ok(out)
}

/// Knobs for [`make_client_specs`]. Defaults follow the standard benchmark:
/// `delta = 0.25` everywhere, train `p` in `[0.1, 0.3]`, test `p = 0.9`.
#[derive(Debug, Clone)]
pub struct SpecOptions {
    pub p_min: f64,
    pub p_max: f64,
    pub delta: f64,
    pub p_test: f64,
    /// Total training samples to split across clients.
    pub train_pool: usize,
    pub test_samples: usize,
    /// Explicit per-client sample counts for the uneven mode.
    pub client_sizes: Option<Vec<usize>>,
}

impl Default for SpecOptions {
    fn default() -> Self {
        Self {
            p_min: 0.1,
            p_max: 0.3,
            delta: 0.25,
            p_test: 0.9,
            train_pool: 60_000,
            test_samples: 10_000,
            client_sizes: None,
        }
    }
}

/// Builds the per-client environment specs plus the test spec.
///
/// Train flip probabilities descend toward `p_min`: a single client gets
/// `p_max`; two clients get the standard benchmark pair (the midpoint and
/// `p_min`, `[0.2, 0.1]` at the defaults); three or more are spaced evenly
/// from `p_max` down to `p_min`. The training pool is split equally unless
/// explicit sizes are given, with any remainder going to the first clients.
pub fn make_client_specs(n_clients: usize, opts: &SpecOptions) -> Result<(Vec<EnvSpec>, EnvSpec)> {
    if n_clients == 0 {
        return Err(Error::Config("need at least one training client".into()));
    }
    if opts.p_min > opts.p_max {
        return Err(Error::Config(format!(
            "p_min {} exceeds p_max {}",
            opts.p_min, opts.p_max
        )));
    }
    let p_values: Vec<f64> = match n_clients {
        1 => vec![opts.p_max],
        2 => vec![opts.p_min + (opts.p_max - opts.p_min) / 2.0, opts.p_min],
        n => {
            let step = (opts.p_max - opts.p_min) / (n - 1) as f64;
            (0..n).map(|k| opts.p_max - step * k as f64).collect()
        }
    };

    let sizes: Vec<usize> = match &opts.client_sizes {
        Some(sizes) => {
            if sizes.len() != n_clients {
                return Err(Error::Config(format!(
                    "{} explicit sizes for {} clients",
                    sizes.len(),
                    n_clients
                )));
            }
            if sizes.iter().any(|&s| s == 0) {
                return Err(Error::Config("client sizes must be positive".into()));
            }
            sizes.clone()
        }
        None => {
            let base = opts.train_pool / n_clients;
            let remainder = opts.train_pool % n_clients;
            if base == 0 {
                return Err(Error::Config(format!(
                    "training pool of {} cannot feed {} clients",
                    opts.train_pool, n_clients
                )));
            }
            (0..n_clients)
                .map(|k| base + usize::from(k < remainder))
                .collect()
        }
    };

    let train = p_values
        .iter()
        .zip(&sizes)
        .enumerate()
        .map(|(k, (&p, &n))| EnvSpec {
            client_id: k + 1,
            delta: opts.delta,
            p_spurious: p,
            n_samples: n,
            role: Role::Train,
        })
        .collect::<Vec<_>>();
    let test = EnvSpec {
        client_id: n_clients + 1,
        delta: opts.delta,
        p_spurious: opts.p_test,
        n_samples: opts.test_samples,
        role: Role::Test,
    };
    for spec in train.iter().chain(std::iter::once(&test)) {
        spec.validate()?;
    }
    Ok((train, test))
}

/// Which nuisance feature the renderer injects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpuriousMechanism {
    /// Color channels keyed by the code.
    Color,
    /// A 5x5 black patch in a code-keyed corner.
    Patch,
}

/// The full federated dataset handed to a training run.
#[derive(Debug, Clone)]
pub struct FederatedData {
    pub train: Vec<SpuriousDataset>,
    pub test: SpuriousDataset,
}

impl FederatedData {
    pub fn input_dim(&self) -> usize {
        self.test.dim()
    }

    pub fn classes(&self) -> usize {
        self.test.classes
    }

    pub fn total_train_samples(&self) -> usize {
        self.train.iter().map(|d| d.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        for ds in self.train.iter().chain(std::iter::once(&self.test)) {
            ds.validate()?;
            if ds.dim() != self.input_dim() || ds.classes != self.classes() {
                return Err(Error::Shape(
                    "clients disagree on input dim or class count".into(),
                ));
            }
        }
        Ok(())
    }
}

fn render_client(
    raw: &RawImageSet,
    indices: &[usize],
    y_tilde: &[u8],
    spec: &EnvSpec,
    mechanism: SpuriousMechanism,
    classes: usize,
    seed_root: u64,
) -> Result<SpuriousDataset> {
    let noise_seed = seed::derive(seed_root, 1);
    let code_seed = seed::derive(seed_root, 2);
    let labels = apply_label_noise(y_tilde, spec.delta, classes, noise_seed);
    let codes = multiclass_colorize(&labels, spec.p_spurious, classes, code_seed);
    let dim = match mechanism {
        SpuriousMechanism::Color => palette_channels(classes) * raw.height * raw.width,
        SpuriousMechanism::Patch => raw.height * raw.width,
    };
    let mut data = Vec::with_capacity(indices.len() * dim);
    for (row, &src) in indices.iter().enumerate() {
        let image = raw.image(src);
        let rendered = match mechanism {
            SpuriousMechanism::Color => render_palette(image, codes[row], classes),
            SpuriousMechanism::Patch => render_patch(image, raw.height, raw.width, codes[row])?,
        };
        data.extend_from_slice(&rendered);
    }
    let ds = SpuriousDataset {
        inputs: Matrix::from_vec(indices.len(), dim, data)?,
        labels,
        spurious: codes,
        classes,
        provenance: *spec,
    };
    ds.validate()?;
    Ok(ds)
}

/// Builds the per-client datasets from raw image archives: applies the
/// label rule to both pools, splits the (seeded-shuffled) training pool
/// disjointly across clients, then runs the noise/code/render chain per
/// client with derived seeds.
pub fn build_image_datasets(
    raw_train: &RawImageSet,
    raw_test: &RawImageSet,
    rule: &LabelRule,
    train_specs: &[EnvSpec],
    test_spec: &EnvSpec,
    mechanism: SpuriousMechanism,
    master_seed: u64,
) -> Result<FederatedData> {
    let (kept_train, y_train) = rule.apply(&raw_train.labels)?;
    let (kept_test, y_test) = rule.apply(&raw_test.labels)?;

    let needed: usize = train_specs.iter().map(|s| s.n_samples).sum();
    if needed > kept_train.len() {
        return Err(Error::Config(format!(
            "clients need {needed} samples but pool holds {}",
            kept_train.len()
        )));
    }

    let mut order: Vec<usize> = (0..kept_train.len()).collect();
    shuffle(&mut order, seed::derive(master_seed, 0));

    let mut cursor = 0usize;
    let mut train = Vec::with_capacity(train_specs.len());
    for spec in train_specs {
        let slice = &order[cursor..cursor + spec.n_samples];
        cursor += spec.n_samples;
        let indices: Vec<usize> = slice.iter().map(|&i| kept_train[i]).collect();
        let labels: Vec<u8> = slice.iter().map(|&i| y_train[i]).collect();
        train.push(render_client(
            raw_train,
            &indices,
            &labels,
            spec,
            mechanism,
            rule.classes,
            seed::derive(master_seed, spec.client_id as u64),
        )?);
    }

    let n_test = test_spec.n_samples.min(kept_test.len());
    let test = render_client(
        raw_test,
        &kept_test[..n_test],
        &y_test[..n_test],
        test_spec,
        mechanism,
        rule.classes,
        seed::derive(master_seed, test_spec.client_id as u64),
    )?;

    let data = FederatedData { train, test };
    data.validate()?;
    Ok(data)
}

/// Fisher-Yates with a seeded stream.
pub fn shuffle<T>(items: &mut [T], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mnist_rule_splits_at_five() {
        let rule = LabelRule::mnist_binary();
        let (kept, y) = rule.apply(&[3, 7, 0, 9, 4, 5]).unwrap();
        assert_eq!(kept, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(y, vec![0, 1, 0, 1, 0, 1]);
    }

    #[test]
    fn fashion_rule_maps_sneaker_to_one_and_drops_bags() {
        let rule = LabelRule::fashion_binary();
        let (kept, y) = rule.apply(&[7, 8, 0]).unwrap();
        assert_eq!(kept, vec![0, 2]);
        assert_eq!(y, vec![1, 0]);
    }

    #[test]
    fn cifar_rule_drops_frogs() {
        let rule = LabelRule::cifar_binary();
        let (kept, y) = rule.apply(&[6, 0, 3]).unwrap();
        assert_eq!(kept, vec![1, 2]);
        assert_eq!(y, vec![0, 1]);
    }

    #[test]
    fn unmapped_class_is_a_rule_error() {
        let rule = LabelRule::new(BTreeMap::new(), 2);
        assert!(matches!(rule.apply(&[0]), Err(Error::Rule(_))));
    }

    #[test]
    fn label_noise_edge_probabilities() {
        let y = vec![0u8, 1, 1, 0, 1];
        assert_eq!(apply_label_noise(&y, 0.0, 2, 1), y);
        let flipped = apply_label_noise(&y, 1.0, 2, 1);
        assert!(flipped.iter().zip(&y).all(|(&a, &b)| a == 1 - b));
    }

    #[test]
    fn label_noise_empirical_rate() {
        let y = vec![0u8; 100_000];
        let noisy = apply_label_noise(&y, 0.25, 2, 42);
        let rate = noisy.iter().filter(|&&v| v == 1).count() as f64 / 100_000.0;
        assert!((rate - 0.25).abs() < 0.005, "rate {rate}");
    }

    #[test]
    fn spurious_code_edge_probabilities() {
        let y = vec![0u8, 1, 0];
        assert_eq!(assign_spurious_code(&y, 0.0, 3), y);
        let z = assign_spurious_code(&y, 1.0, 3);
        assert!(z.iter().zip(&y).all(|(&a, &b)| a == 1 - b));
    }

    #[test]
    fn spurious_code_empirical_rate() {
        let y: Vec<u8> = (0..100_000).map(|i| (i % 2) as u8).collect();
        let z = assign_spurious_code(&y, 0.2, 7);
        let rate = z.iter().zip(&y).filter(|(a, b)| a != b).count() as f64 / 100_000.0;
        assert!((rate - 0.2).abs() < 0.005, "rate {rate}");
    }

    #[test]
    fn colorize_own_color_frequency() {
        let y: Vec<u8> = (0..100_000).map(|i| (i % 10) as u8).collect();
        let colors = multiclass_colorize(&y, 0.15, 10, 3);
        let own = colors.iter().zip(&y).filter(|(c, y)| c == y).count() as f64 / 100_000.0;
        assert!((own - 0.85).abs() < 0.005, "own-color rate {own}");
        // Everything else wears the succeeding class's color.
        assert!(colors
            .iter()
            .zip(&y)
            .all(|(&c, &y)| c == y || c == (y + 1) % 10));
    }

    #[test]
    fn colorize_zero_p_keeps_own_color() {
        let y = vec![3u8];
        assert_eq!(multiclass_colorize(&y, 0.0, 10, 0), vec![3]);
    }

    #[test]
    fn test_client_wears_succeeding_color() {
        let y = vec![8u8; 10_000];
        let colors = multiclass_colorize(&y, 0.9, 10, 5);
        let succ = colors.iter().filter(|&&c| c == 9).count() as f64 / 10_000.0;
        assert!(succ > 0.85, "succeeding-color rate {succ}");
    }

    #[test]
    fn render_color_channel_layout() {
        let image = [255u8, 128, 0, 64];
        let green = render_color(&image, 0);
        // Channel 1 (red) is zero for z = 0.
        assert!(green[4..].iter().all(|&v| v == 0.0));
        assert!((green[0] - 1.0).abs() < 1e-12);
        let red = render_color(&image, 1);
        // Channel 0 (green) is zero for z = 1.
        assert!(red[..4].iter().all(|&v| v == 0.0));
        // Conservation: both renderings carry the same total mass.
        let sum = |v: &[f64]| v.iter().sum::<f64>();
        assert!((sum(&green) - sum(&red)).abs() < 1e-12);
    }

    #[test]
    fn palette_reduces_to_binary_channels_and_is_distinct() {
        assert_eq!(palette_channels(2), 2);
        assert_eq!(palette_channels(5), 4);
        assert_eq!(palette_channels(10), 5);
        let image = [200u8];
        let mut seen = Vec::new();
        for c in 0..10u8 {
            let pattern: Vec<bool> = render_palette(&image, c, 10)
                .iter()
                .map(|&v| v > 0.0)
                .collect();
            assert!(pattern.iter().any(|&b| b), "color {c} must be nonzero");
            assert!(!seen.contains(&pattern), "color {c} collides");
            seen.push(pattern);
        }
    }

    #[test]
    fn patch_corners() {
        let image = vec![255u8; 8 * 8];
        let left = render_patch(&image, 8, 8, 0).unwrap();
        for r in 0..5 {
            for c in 0..5 {
                assert_eq!(left[r * 8 + c], 0.0);
            }
        }
        let right = render_patch(&image, 8, 8, 1).unwrap();
        for r in 0..5 {
            for c in 3..8 {
                assert_eq!(right[r * 8 + c], 0.0);
            }
        }
        // A pixel outside both corners is untouched.
        assert_eq!(left[7 * 8 + 7], 1.0);
        assert_eq!(right[7 * 8], 1.0);
        assert!(render_patch(&[0u8; 16], 4, 4, 0).is_err());
    }

    #[test]
    fn standard_two_client_specs() {
        let (train, test) = make_client_specs(2, &SpecOptions::default()).unwrap();
        assert_eq!(train.len(), 2);
        assert!((train[0].p_spurious - 0.2).abs() < 1e-12);
        assert!((train[1].p_spurious - 0.1).abs() < 1e-12);
        assert!((test.p_spurious - 0.9).abs() < 1e-12);
        assert_eq!(train[0].n_samples, 30_000);
        assert_eq!(train[1].n_samples, 30_000);
        assert!(train.iter().all(|s| (s.delta - 0.25).abs() < 1e-12));
    }

    #[test]
    fn extended_specs_are_evenly_spaced() {
        let (train, _) = make_client_specs(3, &SpecOptions::default()).unwrap();
        let ps: Vec<f64> = train.iter().map(|s| s.p_spurious).collect();
        assert!((ps[0] - 0.3).abs() < 1e-12);
        assert!((ps[1] - 0.2).abs() < 1e-12);
        assert!((ps[2] - 0.1).abs() < 1e-12);

        let (train, _) = make_client_specs(5, &SpecOptions::default()).unwrap();
        let ps: Vec<f64> = train.iter().map(|s| s.p_spurious).collect();
        for (k, &p) in ps.iter().enumerate() {
            assert!((p - (0.3 - 0.05 * k as f64)).abs() < 1e-12);
        }
        // Single client sits at p_max.
        let (train, _) = make_client_specs(1, &SpecOptions::default()).unwrap();
        assert!((train[0].p_spurious - 0.3).abs() < 1e-12);
    }

    #[test]
    fn zero_clients_is_an_error() {
        assert!(make_client_specs(0, &SpecOptions::default()).is_err());
    }

    #[test]
    fn uneven_sizes_are_respected() {
        let opts = SpecOptions {
            client_sizes: Some(vec![10_000, 50_000]),
            ..SpecOptions::default()
        };
        let (train, _) = make_client_specs(2, &opts).unwrap();
        assert_eq!(train[0].n_samples, 10_000);
        assert_eq!(train[1].n_samples, 50_000);
        let bad = SpecOptions {
            client_sizes: Some(vec![10_000]),
            ..SpecOptions::default()
        };
        assert!(make_client_specs(2, &bad).is_err());
    }

    fn synthetic_raw(n: usize) -> RawImageSet {
        RawImageSet {
            images: (0..n * 36).map(|i| (i % 251) as u8).collect(),
            labels: (0..n).map(|i| (i % 10) as u8).collect(),
            count: n,
            height: 6,
            width: 6,
        }
    }

    #[test]
    fn image_pipeline_partitions_pool_and_is_deterministic() {
        let raw_train = synthetic_raw(600);
        let raw_test = synthetic_raw(100);
        let opts = SpecOptions {
            train_pool: 600,
            test_samples: 100,
            ..SpecOptions::default()
        };
        let (specs, test_spec) = make_client_specs(2, &opts).unwrap();
        let rule = LabelRule::mnist_binary();
        let a = build_image_datasets(
            &raw_train,
            &raw_test,
            &rule,
            &specs,
            &test_spec,
            SpuriousMechanism::Color,
            99,
        )
        .unwrap();
        let b = build_image_datasets(
            &raw_train,
            &raw_test,
            &rule,
            &specs,
            &test_spec,
            SpuriousMechanism::Color,
            99,
        )
        .unwrap();
        assert_eq!(a.train[0].inputs.data(), b.train[0].inputs.data());
        assert_eq!(a.train[1].labels, b.train[1].labels);
        assert_eq!(a.test.spurious, b.test.spurious);
        assert_eq!(a.total_train_samples(), 600);
        assert_eq!(a.input_dim(), 2 * 36);
    }
}
