//! Stateless transform and augmentation kernels.
//!
//! The time axis is always the last axis; everything before it is treated
//! as rows.

use super::Batch;
use crate::error::{Error, Result};
use crate::features::FeatureArray;
use crate::rng::Rng;

pub const STD_FLOOR: f64 = 1e-8;

fn rows_cols(x: &FeatureArray) -> (usize, usize) {
    let t = *x.dims().last().expect("arrays have at least one axis");
    (x.len() / t, t)
}

fn with_time_len(x: &FeatureArray, t: usize) -> Vec<usize> {
    let mut dims = x.dims().to_vec();
    *dims.last_mut().expect("non-empty dims") = t;
    dims
}

/// Builds a new array of width `t` whose column `j` of row `r` is `f(r, j)`.
fn map_columns(x: &FeatureArray, t: usize, f: impl Fn(&[f32], usize) -> f32) -> Result<FeatureArray> {
    let (_, cols) = rows_cols(x);
    let mut out = Vec::with_capacity(x.len() / cols * t);
    for row in x.data().chunks(cols) {
        out.extend((0..t).map(|j| f(row, j)));
    }
    FeatureArray::new(with_time_len(x, t), out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMode {
    Pad,
    Replicate,
}

/// Pads with zeros or tiles along time, then truncates to `length` columns.
pub fn fit_length(x: &FeatureArray, length: usize, mode: FitMode) -> Result<FeatureArray> {
    if length == 0 {
        return Err(Error::InvalidArgument("length must be at least 1".into()));
    }
    let (_, t) = rows_cols(x);
    map_columns(x, length, |row, j| match mode {
        FitMode::Pad => row.get(j).copied().unwrap_or(0.0),
        FitMode::Replicate => row[j % t],
    })
}

pub fn crop(x: &FeatureArray, start: usize, length: usize) -> Result<FeatureArray> {
    let (_, t) = rows_cols(x);
    if start + length > t {
        return Err(Error::InvalidArgument(format!(
            "crop [{start}, {}) exceeds {t} columns",
            start + length
        )));
    }
    map_columns(x, length, |row, j| row[start + j])
}

/// Uniform crop of `length` columns; shorter inputs are zero-padded.
pub fn random_crop(x: &FeatureArray, length: usize, rng: &mut Rng) -> Result<FeatureArray> {
    let (_, t) = rows_cols(x);
    match t.cmp(&length) {
        std::cmp::Ordering::Greater => crop(x, rng.below(t - length + 1), length),
        std::cmp::Ordering::Equal => Ok(x.clone()),
        std::cmp::Ordering::Less => fit_length(x, length, FitMode::Pad),
    }
}

/// Per-bin statistics over the leading axis, pooled across items and all
/// remaining axes.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl NormStats {
    pub fn fit(items: &[FeatureArray]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot fit statistics on zero items".into()))?;
        let bins = first.dims()[0];
        let mut sum = vec![0.0f64; bins];
        let mut count = 0usize;
        for item in items {
            if item.dims() != first.dims() {
                return Err(Error::Shape(format!(
                    "statistics need equal shapes, got {:?} and {:?}",
                    first.dims(),
                    item.dims()
                )));
            }
            let per = item.len() / bins;
            for (b, chunk) in item.data().chunks(per).enumerate() {
                sum[b] += chunk.iter().map(|&v| f64::from(v)).sum::<f64>();
            }
            count += per;
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0f64; bins];
        for item in items {
            let per = item.len() / bins;
            for (b, chunk) in item.data().chunks(per).enumerate() {
                sq[b] += chunk.iter().map(|&v| (f64::from(v) - mean[b]).powi(2)).sum::<f64>();
            }
        }
        Ok(NormStats {
            mean: mean.iter().map(|&m| m as f32).collect(),
            std: sq
                .iter()
                .map(|s| (s / count as f64).sqrt().max(STD_FLOOR) as f32)
                .collect(),
        })
    }

    /// `[2, bins]`: means then standard deviations.
    pub fn to_array(&self) -> FeatureArray {
        let mut data = self.mean.clone();
        data.extend_from_slice(&self.std);
        FeatureArray::new(vec![2, self.mean.len()], data).expect("2 x bins")
    }

    pub fn from_array(a: &FeatureArray) -> Result<Self> {
        let (rows, bins) = a.shape2()?;
        if rows != 2 {
            return Err(Error::Shape(format!("normalization stats need [2, bins], got {:?}", a.dims())));
        }
        Ok(NormStats {
            mean: a.data()[..bins].to_vec(),
            std: a.data()[bins..].to_vec(),
        })
    }
}

pub fn znormalize(x: &FeatureArray, stats: &NormStats) -> Result<FeatureArray> {
    let bins = x.dims()[0];
    if bins != stats.mean.len() {
        return Err(Error::Shape(format!(
            "normalization stats cover {} bins, input has {bins}",
            stats.mean.len()
        )));
    }
    let per = x.len() / bins;
    let mut out = x.clone();
    for (b, chunk) in out.data_mut().chunks_mut(per).enumerate() {
        let (m, s) = (f64::from(stats.mean[b]), f64::from(stats.std[b]).max(STD_FLOOR));
        for v in chunk {
            *v = ((f64::from(*v) - m) / s) as f32;
        }
    }
    Ok(out)
}

/// Adds white noise at `snr_db` relative to the input RMS.
pub fn gaussian_noise(x: &FeatureArray, snr_db: f64, rng: &mut Rng) -> FeatureArray {
    let rms = (x.data().iter().map(|&v| f64::from(v).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
    if rms == 0.0 {
        return x.clone();
    }
    let sigma = rms * 10f64.powf(-snr_db / 20.0);
    let mut out = x.clone();
    for v in out.data_mut() {
        *v = (f64::from(*v) + sigma * rng.next_gaussian()) as f32;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpecAugmentParams {
    pub freq_masks: usize,
    pub freq_width: usize,
    pub time_masks: usize,
    pub time_width: usize,
}

/// Frequency masks first, then time masks; masked cells take the global
/// mean of the input.
pub fn spec_augment(x: &FeatureArray, p: SpecAugmentParams, rng: &mut Rng) -> Result<FeatureArray> {
    let (bins, t) = x.shape2()?;
    if p.freq_width > bins || p.time_width > t {
        return Err(Error::InvalidArgument(format!(
            "mask widths ({}, {}) exceed input {bins}x{t}",
            p.freq_width, p.time_width
        )));
    }
    let fill = x.mean() as f32;
    let mut out = x.clone();
    let data = out.data_mut();
    for _ in 0..p.freq_masks {
        let f = rng.below(p.freq_width + 1);
        let f0 = rng.below(bins - f + 1);
        for r in f0..f0 + f {
            data[r * t..(r + 1) * t].fill(fill);
        }
    }
    for _ in 0..p.time_masks {
        let w = rng.below(p.time_width + 1);
        let t0 = rng.below(t - w + 1);
        for r in 0..bins {
            data[r * t + t0..r * t + t0 + w].fill(fill);
        }
    }
    Ok(out)
}

/// Piecewise-linear time remap with anchor `t0` moved to `t0 + shift`.
pub fn time_warp_with(x: &FeatureArray, t0: usize, shift: i64) -> Result<FeatureArray> {
    let (_, t) = x.shape2()?;
    let last = (t - 1) as f64;
    let anchor = t0 as f64;
    let moved = anchor + shift as f64;
    if !(0.0..=last).contains(&moved) || t0 > t - 1 {
        return Err(Error::InvalidArgument(format!("warp anchor {t0}{shift:+} outside [0, {}]", t - 1)));
    }
    let source = |j: usize| -> f64 {
        let j = j as f64;
        if j <= moved {
            if moved == 0.0 {
                0.0
            } else {
                j * anchor / moved
            }
        } else {
            anchor + (j - moved) * (last - anchor) / (last - moved)
        }
    };
    map_columns(x, t, |row, j| {
        let s = source(j).clamp(0.0, last);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(t - 1);
        let frac = s - i0 as f64;
        (f64::from(row[i0]) * (1.0 - frac) + f64::from(row[i1]) * frac) as f32
    })
}

/// Anchor uniform in `[W, T - W)`, shift uniform in `[-W, W]`.
pub fn time_warp(x: &FeatureArray, w: usize, rng: &mut Rng) -> Result<FeatureArray> {
    let (_, t) = x.shape2()?;
    if w == 0 || t <= 2 * w {
        return Err(Error::InvalidArgument(format!(
            "time warp needs W >= 1 and T > 2W, got W={w}, T={t}"
        )));
    }
    let t0 = w + rng.below(t - 2 * w);
    let shift = rng.below(2 * w + 1) as i64 - w as i64;
    time_warp_with(x, t0, shift)
}

fn check_pairable(b: &Batch) -> Result<usize> {
    let n = b.len();
    if b.targets.dims()[0] != n || b.features.dims()[0] != n {
        return Err(Error::Shape("batch features, targets and ids disagree on size".into()));
    }
    Ok(n)
}

/// Blends item `i` with item `B - 1 - i` using weight `lambda`.
pub fn mixup_with(b: &Batch, lambda: f64) -> Result<Batch> {
    let n = check_pairable(b)?;
    let blend = |a: &FeatureArray| -> Result<FeatureArray> {
        let rows = a.unstack();
        let mixed: Vec<FeatureArray> = (0..n)
            .map(|i| {
                let (x, y) = (&rows[i], &rows[n - 1 - i]);
                let data = x
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&p, &q)| (lambda * f64::from(p) + (1.0 - lambda) * f64::from(q)) as f32)
                    .collect();
                FeatureArray::new(x.dims().to_vec(), data).expect("same dims")
            })
            .collect();
        FeatureArray::stack(&mixed)
    };
    Ok(Batch {
        features: blend(&b.features)?,
        targets: blend(&b.targets)?,
        item_ids: b.item_ids.clone(),
    })
}

pub fn mixup_batch(b: &Batch, alpha: f64, rng: &mut Rng) -> Result<Batch> {
    let lambda = rng.next_beta(alpha, alpha)?;
    if b.len() == 1 {
        return Ok(b.clone());
    }
    mixup_with(b, lambda)
}

/// Cut rectangle `(row0, row1, col0, col1)` for a given `lambda` and
/// center, clipped to the input.
pub fn cutmix_rect(bins: usize, t: usize, lambda: f64, center: (usize, usize)) -> (usize, usize, usize, usize) {
    let scale = (1.0 - lambda).max(0.0).sqrt();
    let h = (bins as f64 * scale).round() as i64;
    let w = (t as f64 * scale).round() as i64;
    let r0 = center.0 as i64 - h / 2;
    let c0 = center.1 as i64 - w / 2;
    let clip = |v: i64, hi: usize| v.clamp(0, hi as i64) as usize;
    (clip(r0, bins), clip(r0 + h, bins), clip(c0, t), clip(c0 + w, t))
}

/// Pastes the partner's rectangle into each item and reweights targets by
/// the pasted area.
pub fn cutmix_with(b: &Batch, lambda: f64, center: (usize, usize)) -> Result<Batch> {
    let n = check_pairable(b)?;
    let items = b.features.unstack();
    let (bins, t) = items[0].shape2()?;
    let (r0, r1, c0, c1) = cutmix_rect(bins, t, lambda, center);
    let lambda_adj = 1.0 - ((r1 - r0) * (c1 - c0)) as f64 / (bins * t) as f64;
    let features: Vec<FeatureArray> = (0..n)
        .map(|i| {
            let mut out = items[i].clone();
            let partner = &items[n - 1 - i];
            let data = out.data_mut();
            for r in r0..r1 {
                data[r * t + c0..r * t + c1].copy_from_slice(&partner.data()[r * t + c0..r * t + c1]);
            }
            out
        })
        .collect();
    let mixed = mixup_with(
        &Batch {
            features: b.features.clone(),
            targets: b.targets.clone(),
            item_ids: b.item_ids.clone(),
        },
        lambda_adj,
    )?;
    Ok(Batch {
        features: FeatureArray::stack(&features)?,
        targets: mixed.targets,
        item_ids: b.item_ids.clone(),
    })
}

pub fn cutmix_batch(b: &Batch, alpha: f64, rng: &mut Rng) -> Result<Batch> {
    let lambda = rng.next_beta(alpha, alpha)?;
    let dims = b.features.dims();
    if dims.len() != 3 {
        return Err(Error::Shape(format!("cutmix needs [B, bins, T] features, got {dims:?}")));
    }
    let center = (rng.below(dims[1]), rng.below(dims[2]));
    if b.len() == 1 {
        return Ok(b.clone());
    }
    cutmix_with(b, lambda, center)
}

/// Index selected by one uniform `u` through the normalized cumulative
/// weights.
pub fn choose_index(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w / total;
        if u < acc && *w > 0.0 {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn ramp(bins: usize, t: usize) -> FeatureArray {
        FeatureArray::new(vec![bins, t], (0..bins * t).map(|i| (i % t) as f32).collect()).unwrap()
    }

    fn columns(x: &FeatureArray) -> Vec<f32> {
        let t = x.dims()[1];
        x.data()[..t].to_vec()
    }

    #[test]
    fn fit_length_examples() {
        let x = ramp(2, 3);
        assert_eq!(columns(&fit_length(&x, 5, FitMode::Pad).unwrap()), vec![0.0, 1.0, 2.0, 0.0, 0.0]);
        assert_eq!(
            columns(&fit_length(&x, 7, FitMode::Replicate).unwrap()),
            vec![0.0, 1.0, 2.0, 0.0, 1.0, 2.0, 0.0]
        );
        let long = ramp(2, 9);
        for mode in [FitMode::Pad, FitMode::Replicate] {
            assert_eq!(columns(&fit_length(&long, 5, mode).unwrap()), vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        }
    }

    #[test]
    fn random_crop_bounds_and_identity() {
        let x = ramp(2, 97);
        assert_eq!(random_crop(&x, 97, &mut Rng::new(1)).unwrap(), x);
        let x = ramp(2, 100);
        let mut rng = Rng::new(3);
        for _ in 0..200 {
            let c = random_crop(&x, 97, &mut rng).unwrap();
            assert!(c.data()[0] <= 3.0);
            assert_eq!(c.dims(), &[2, 97]);
        }
    }

    #[test]
    fn random_crop_start_is_uniform() {
        // Pearson chi-square over 4 starts; 11.34 is the 0.99 quantile at 3 dof.
        let x = ramp(1, 100);
        let mut rng = Rng::new(2024);
        let mut hist = [0usize; 4];
        let n = 10_000;
        for _ in 0..n {
            hist[random_crop(&x, 97, &mut rng).unwrap().data()[0] as usize] += 1;
        }
        let expected = n as f64 / 4.0;
        let chi2: f64 = hist.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 11.34, "chi2 {chi2} hist {hist:?}");
    }

    #[test]
    fn znorm_on_training_set() {
        let mut rng = Rng::new(5);
        let items: Vec<FeatureArray> = (0..20)
            .map(|_| {
                FeatureArray::new(vec![3, 8], (0..24).map(|_| (rng.next_gaussian() * 4.0 + 9.0) as f32).collect())
                    .unwrap()
            })
            .collect();
        let stats = NormStats::fit(&items).unwrap();
        let normed: Vec<FeatureArray> = items.iter().map(|x| znormalize(x, &stats).unwrap()).collect();
        let again = NormStats::fit(&normed).unwrap();
        for b in 0..3 {
            assert!(again.mean[b].abs() < 1e-5, "{:?}", again.mean);
            assert!((again.std[b] - 1.0).abs() < 1e-4, "{:?}", again.std);
        }
    }

    #[test]
    fn znorm_constant_bin_and_foreign_stats() {
        let x = FeatureArray::new(vec![2, 2], vec![3.0, 3.0, 1.0, 5.0]).unwrap();
        let stats = NormStats::fit(std::slice::from_ref(&x)).unwrap();
        let out = znormalize(&x, &stats).unwrap();
        assert_eq!(&out.data()[..2], &[0.0, 0.0]);
        // Dev items use the training statistics, not their own.
        let dev = FeatureArray::new(vec![2, 2], vec![5.0, 5.0, 3.0, 3.0]).unwrap();
        let out = znormalize(&dev, &stats).unwrap();
        assert_eq!(out.data()[2], 0.0);
        assert!(out.data()[0] > 1e6);
        assert_eq!(NormStats::from_array(&stats.to_array()).unwrap(), stats);
    }

    #[test]
    fn gaussian_noise_limits() {
        let x = ramp(4, 16);
        let y = gaussian_noise(&x, 300.0, &mut Rng::new(1));
        let max = x.data().iter().zip(y.data()).map(|(a, b)| f64::from((a - b).abs())).fold(0.0, f64::max);
        assert!(max < 1e-10);
        let z = FeatureArray::zeros(vec![4, 4]);
        assert_eq!(gaussian_noise(&z, 10.0, &mut Rng::new(1)), z);
    }

    #[test]
    fn gaussian_noise_measured_snr() {
        let n = 50_000;
        let x = FeatureArray::from_vec((0..n).map(|i| (i as f32 * 0.01).sin()).collect());
        let y = gaussian_noise(&x, 20.0, &mut Rng::new(77));
        let signal: f64 = x.data().iter().map(|&v| f64::from(v).powi(2)).sum();
        let noise: f64 = x.data().iter().zip(y.data()).map(|(&a, &b)| f64::from(b - a).powi(2)).sum();
        let snr = 10.0 * (signal / noise).log10();
        assert!((snr - 20.0).abs() < 0.5, "snr {snr}");
    }

    #[test]
    fn spec_augment_identity_and_fill() {
        let x = ramp(6, 10);
        let zero = SpecAugmentParams { freq_masks: 2, time_masks: 2, ..Default::default() };
        assert_eq!(spec_augment(&x, zero, &mut Rng::new(1)).unwrap(), x);
        let p = SpecAugmentParams { freq_masks: 1, freq_width: 3, time_masks: 2, time_width: 4 };
        let mean = x.mean() as f32;
        let mut rng = Rng::new(9);
        for _ in 0..100 {
            let y = spec_augment(&x, p, &mut rng).unwrap();
            for (a, b) in x.data().iter().zip(y.data()) {
                assert!(a == b || *b == mean);
            }
        }
    }

    #[test]
    fn time_warp_identity_and_shape() {
        let x = ramp(3, 20);
        let y = time_warp_with(&x, 8, 0).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        let mut rng = Rng::new(4);
        for _ in 0..50 {
            assert_eq!(time_warp(&x, 4, &mut rng).unwrap().dims(), &[3, 20]);
        }
        assert!(time_warp(&x, 10, &mut rng).is_err());
    }

    #[test]
    fn time_warp_keeps_smooth_means() {
        let t = 100;
        let x = FeatureArray::new(vec![1, t], (0..t).map(|i| 1.0 + 0.2 * (i as f32 / t as f32)).collect()).unwrap();
        let mut rng = Rng::new(21);
        for _ in 0..50 {
            let y = time_warp(&x, 5, &mut rng).unwrap();
            assert!((y.mean() / x.mean() - 1.0).abs() < 0.05);
        }
    }

    fn batch(features: Vec<Vec<f32>>, dims: Vec<usize>, targets: Vec<Vec<f32>>) -> Batch {
        let k = targets[0].len();
        let items: Vec<FeatureArray> = features.into_iter().map(|f| FeatureArray::new(dims.clone(), f).unwrap()).collect();
        let n = items.len();
        Batch {
            features: FeatureArray::stack(&items).unwrap(),
            targets: FeatureArray::new(vec![n, k], targets.concat()).unwrap(),
            item_ids: (0..n).map(|i| i.to_string()).collect(),
        }
    }

    #[test]
    fn mixup_examples() {
        let b = batch(vec![vec![1.0, 2.0], vec![3.0, 4.0]], vec![2], vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(mixup_with(&b, 1.0).unwrap(), b);
        let half = mixup_with(&b, 0.5).unwrap();
        assert_eq!(half.targets.data(), &[0.5, 0.5, 0.5, 0.5]);
        assert_eq!(half.features.data(), &[2.0, 3.0, 2.0, 3.0]);
    }

    #[test]
    fn cutmix_examples() {
        let items = vec![vec![0.0; 100], vec![1.0; 100]];
        let b = batch(items, vec![10, 10], vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(cutmix_with(&b, 1.0, (5, 5)).unwrap(), b);
        assert_eq!(cutmix_rect(10, 10, 0.75, (5, 5)), (3, 8, 3, 8));
        let out = cutmix_with(&b, 0.75, (5, 5)).unwrap();
        assert_eq!(out.targets.data(), &[0.75, 0.25, 0.25, 0.75]);
        let first = &out.features.unstack()[0];
        for r in 0..10 {
            for c in 0..10 {
                let inside = (3..8).contains(&r) && (3..8).contains(&c);
                assert_eq!(first.at2(r, c), if inside { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn choice_frequencies() {
        assert_eq!(choose_index(&[1.0], 0.99), 0);
        let mut rng = Rng::new(8);
        assert!((0..1000).all(|_| choose_index(&[1.0, 0.0], rng.next_f64()) == 0));
        let n = 10_000;
        let ones = (0..n).filter(|_| choose_index(&[1.0, 3.0], rng.next_f64()) == 1).count();
        assert!((ones as f64 / n as f64 - 0.75).abs() < 0.02);
    }

    fn simplex_rows(t: &FeatureArray) -> bool {
        t.data()
            .chunks(t.dims()[1])
            .all(|r| r.iter().all(|&v| v >= -1e-6) && (r.iter().map(|&v| f64::from(v)).sum::<f64>() - 1.0).abs() < 1e-5)
    }

    proptest! {
        #[test]
        fn batch_mixing_preserves_simplex(seed in any::<u64>(), n in 1usize..6, bins in 1usize..6, t in 1usize..8, k in 2usize..5) {
            let mut rng = Rng::new(seed);
            let feats: Vec<Vec<f32>> = (0..n).map(|_| (0..bins * t).map(|_| rng.next_gaussian() as f32).collect()).collect();
            let targets: Vec<Vec<f32>> = (0..n).map(|_| {
                let mut row = vec![0.0; k];
                row[rng.below(k)] = 1.0;
                row
            }).collect();
            let b = batch(feats, vec![bins, t], targets);
            for out in [mixup_batch(&b, 0.4, &mut rng).unwrap(), cutmix_batch(&b, 1.0, &mut rng).unwrap()] {
                prop_assert_eq!(out.features.dims(), b.features.dims());
                prop_assert_eq!(out.targets.dims(), b.targets.dims());
                prop_assert!(simplex_rows(&out.targets));
            }
        }

        #[test]
        fn spec_augment_mask_fraction_bound(seed in any::<u64>(), tn in 0usize..4, tw in 0usize..6) {
            let x = FeatureArray::new(vec![4, 12], (0..48).map(|i| i as f32 + 1000.0).collect()).unwrap();
            let p = SpecAugmentParams { freq_masks: 0, freq_width: 0, time_masks: tn, time_width: tw };
            let y = spec_augment(&x, p, &mut Rng::new(seed)).unwrap();
            let mean = x.mean() as f32;
            let masked = (0..12).filter(|&c| (0..4).all(|r| y.at2(r, c) == mean && x.at2(r, c) != mean)).count();
            prop_assert!(masked as f64 / 12.0 <= (tn * tw) as f64 / 12.0);
        }
    }
}
