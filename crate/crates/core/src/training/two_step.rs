//! Full-precision CNN training and the two-step flow that retrains the
//! fully-connected head as a binarized network on sign-quantized features.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::cnn::Cnn;
use super::mlp::{train_mlp, TrainingReport};
use super::{sign_unit, split_indices, Adam, CnnSpec, EpochMetrics, HyperParams};
use crate::data::{FeatureSet, ImageSet};
use crate::error::{Error, Result};
use crate::rng::{Seeds, Stream};

const GRAD_CHUNK: usize = 16;
const DERIVED_MAGIC: &[u8; 4] = b"IMDS";
const DERIVED_VERSION: u8 = 1;

#[derive(Debug, Clone)]
pub struct Step1Report {
    pub cnn: Cnn<f32>,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
}

fn check_images(spec: &CnnSpec, set: &ImageSet) -> Result<()> {
    let shape = (set.channels, set.height, set.width);
    let want = (spec.input.channels, spec.input.height, spec.input.width);
    if shape != want {
        return Err(Error::DimensionMismatch(format!("images are {shape:?}, network takes {want:?}")));
    }
    if let Some(&bad) = set.labels().iter().find(|&&l| l as usize >= spec.classes()) {
        return Err(Error::InvalidInput(format!("label {bad} exceeds {} classes", spec.classes())));
    }
    Ok(())
}

/// Accuracy of the full-precision network.
pub fn cnn_accuracy(cnn: &Cnn<f32>, set: &ImageSet, indices: Option<&[usize]>) -> f64 {
    let n = indices.map_or(set.len(), <[usize]>::len);
    if n == 0 {
        return 0.0;
    }
    let correct: usize = (0..n)
        .into_par_iter()
        .map(|k| {
            let i = indices.map_or(k, |ix| ix[k]);
            usize::from(cnn.predict(set.image(i)) == set.label(i) as usize)
        })
        .sum();
    correct as f64 / n as f64
}

/// Conventional backpropagation training of the whole CNN (step 1).
pub fn train_cnn(
    spec: &CnnSpec,
    train: &ImageSet,
    test: Option<&ImageSet>,
    hp: &HyperParams,
    seeds: &Seeds,
) -> Result<Step1Report> {
    hp.validate()?;
    spec.validate()?;
    for set in std::iter::once(train).chain(test) {
        check_images(spec, set)?;
    }
    let mut cnn = Cnn::<f32>::new(spec.clone(), &mut seeds.stream(Stream::Init))?;
    let (mut train_idx, val_idx) = split_indices(&mut seeds.stream(Stream::Data), train.len(), hp.validation_fraction);
    let steps_per_epoch = train_idx.len().div_ceil(hp.batch_size);
    let total_steps = hp.epochs * steps_per_epoch;
    let mut opt = Adam::<f32>::new(cnn.num_params());
    let mut shuffle = seeds.stream(Stream::Shuffle);
    let mut history = Vec::with_capacity(hp.epochs);
    let mut best: Option<(f64, usize, Vec<f32>)> = None;
    let mut step = 0;

    for epoch in 1..=hp.epochs {
        use rand::seq::SliceRandom;
        train_idx.shuffle(&mut shuffle);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for batch in train_idx.chunks(hp.batch_size) {
            let net = &cnn;
            let partials: Vec<(Vec<f32>, f64, usize)> = batch
                .par_chunks(GRAD_CHUNK)
                .map(|chunk| {
                    let mut g = vec![0.0f32; net.num_params()];
                    let (mut l, mut c) = (0.0f64, 0);
                    for &i in chunk {
                        let (li, ok) = net.accumulate_gradient(train.image(i), train.label(i) as usize, &mut g);
                        l += f64::from(li);
                        c += usize::from(ok);
                    }
                    (g, l, c)
                })
                .collect();
            let mut grad = vec![0.0f32; cnn.num_params()];
            let mut batch_loss = 0.0;
            for (g, l, c) in partials {
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
                batch_loss += l;
                correct += c;
            }
            if !batch_loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    step,
                    loss: batch_loss / batch.len() as f64,
                });
            }
            loss_sum += batch_loss;
            let scale = 1.0 / batch.len() as f32;
            grad.iter_mut().for_each(|g| *g *= scale);
            let lr = hp.schedule.rate(hp.learning_rate, step, total_steps);
            opt.step(cnn.params_mut(), &grad, lr);
            step += 1;
        }
        let validation_accuracy = (!val_idx.is_empty()).then(|| cnn_accuracy(&cnn, train, Some(&val_idx)));
        history.push(EpochMetrics {
            epoch,
            step,
            loss: loss_sum / train_idx.len().max(1) as f64,
            train_accuracy: correct as f64 / train_idx.len().max(1) as f64,
            validation_accuracy,
            test_accuracy: test.map(|t| cnn_accuracy(&cnn, t, None)),
        });
        let score = validation_accuracy.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().map_or(true, |(s, _, _)| score > *s || validation_accuracy.is_none()) {
            best = Some((score, epoch, cnn.params().to_vec()));
        }
    }
    let best_epoch = match best {
        Some((_, e, params)) => {
            cnn = Cnn::from_params(spec.clone(), params)?;
            e
        }
        None => 0,
    };
    Ok(Step1Report {
        cnn,
        history,
        best_epoch,
    })
}

/// Runs every image through the frozen convolution stack, flattens, and
/// applies the sign unit.
pub fn derive_features(cnn: &Cnn<f32>, set: &ImageSet) -> FeatureSet {
    let dim = cnn.spec().fc[0];
    let rows: Vec<Vec<f32>> = (0..set.len())
        .into_par_iter()
        .map(|i| sign_unit(&cnn.features(set.image(i))).into_iter().map(f32::from).collect())
        .collect();
    FeatureSet::new(dim, rows.concat(), set.labels().to_vec()).expect("feature width fixed by the spec")
}

/// Cache key: digest of the convolution parameters, the spec and the data.
fn cache_key(cnn: &Cnn<f32>, train: &ImageSet, test: &ImageSet) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(cnn.spec()).expect("spec serializes"));
    for p in &cnn.params()[..cnn.feature_param_count()] {
        h.update(p.to_le_bytes());
    }
    for set in [train, test] {
        h.update((set.len() as u64).to_le_bytes());
        h.update(set.labels());
        for i in 0..set.len() {
            for p in set.image(i) {
                h.update(p.to_le_bytes());
            }
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn encode_derived(train: &FeatureSet, test: &FeatureSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(DERIVED_MAGIC);
    out.push(DERIVED_VERSION);
    for v in [train.dim(), train.len(), test.len()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for set in [train, test] {
        out.extend(set.values().iter().map(|&v| v as i8 as u8));
        out.extend_from_slice(set.labels());
    }
    out
}

fn decode_derived(bytes: &[u8], path: &Path) -> Result<(FeatureSet, FeatureSet)> {
    let err = |m: &str| Error::format(path, m);
    if bytes.len() < 17 || &bytes[..4] != DERIVED_MAGIC {
        return Err(err("not a derived-feature cache"));
    }
    if bytes[4] != DERIVED_VERSION {
        return Err(err("unsupported derived-feature cache version"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[5 + 4 * i..9 + 4 * i].try_into().expect("4 bytes")) as usize;
    let (dim, n_train, n_test) = (word(0), word(1), word(2));
    let mut rest = &bytes[17..];
    let mut sets = Vec::with_capacity(2);
    for n in [n_train, n_test] {
        if rest.len() < n * (dim + 1) {
            return Err(err("truncated derived-feature cache"));
        }
        let values = rest[..n * dim].iter().map(|&b| f32::from(b as i8)).collect();
        let labels = rest[n * dim..n * (dim + 1)].to_vec();
        rest = &rest[n * (dim + 1)..];
        sets.push(FeatureSet::new(dim, values, labels)?);
    }
    if !rest.is_empty() {
        return Err(err("trailing bytes in derived-feature cache"));
    }
    let test = sets.pop().expect("two sets");
    let train = sets.pop().expect("two sets");
    Ok((train, test))
}

#[derive(Debug, Clone, Default)]
pub struct TwoStepOptions {
    pub step1: HyperParams,
    pub step2: HyperParams,
    /// Directory for the derived-feature cache; `None` disables caching.
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TwoStepReport {
    pub step1: Step1Report,
    /// Test accuracy of the full-precision network.
    pub full_precision_accuracy: f64,
    pub derived_train: FeatureSet,
    pub derived_test: FeatureSet,
    pub fc: TrainingReport,
    /// Test accuracy of the convolutions followed by the binarized head.
    pub binarized_accuracy: f64,
    pub cache_hit: bool,
}

/// Step 1 trains the full CNN; step 2 materializes sign-quantized features
/// of every image and trains the binarized head on them from a fresh
/// initialization.
pub fn train_cnn_two_step(
    spec: &CnnSpec,
    train: &ImageSet,
    test: &ImageSet,
    options: &TwoStepOptions,
    seeds: &Seeds,
) -> Result<TwoStepReport> {
    spec.validate()?;
    if spec.fc.len() < 2 {
        return Err(Error::InvalidParameter("two-step training needs at least one FC layer".into()));
    }
    options.step2.validate()?;
    let step1 = train_cnn(spec, train, Some(test), &options.step1, &seeds.child(1))?;
    let full_precision_accuracy = cnn_accuracy(&step1.cnn, test, None);

    let cache_path = options
        .cache_dir
        .as_ref()
        .map(|d| d.join(format!("derived-{}.bin", cache_key(&step1.cnn, train, test))));
    let cached = match &cache_path {
        Some(p) if p.exists() => Some(decode_derived(&std::fs::read(p)?, p)?),
        _ => None,
    };
    let cache_hit = cached.is_some();
    let (derived_train, derived_test) = match cached {
        Some(sets) => sets,
        None => {
            let sets = (derive_features(&step1.cnn, train), derive_features(&step1.cnn, test));
            if let Some(p) = &cache_path {
                if let Some(dir) = p.parent() {
                    std::fs::create_dir_all(dir)?;
                }
                std::fs::write(p, encode_derived(&sets.0, &sets.1))?;
            }
            sets
        }
    };

    let fc = train_mlp(&derived_train, Some(&derived_test), &spec.fc, &options.step2, &seeds.child(2))?;
    let net = crate::network::map_network(&fc.parameters, &Default::default())?;
    let binarized_accuracy = net.evaluate(&derived_test, crate::circuits::Fidelity::Ideal)?;
    Ok(TwoStepReport {
        step1,
        full_precision_accuracy,
        derived_train,
        derived_test,
        fc,
        binarized_accuracy,
        cache_hit,
    })
}
