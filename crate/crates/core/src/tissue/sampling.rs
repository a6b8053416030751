use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volume::{Mask, Volume};

/// Draws up to `n_max` in-mask intensities without replacement, voxel `i`
/// being included with probability `c·prior_i`. `c` is the largest value that
/// keeps every probability at most 1 and the expected count at most `n_max`.
/// Systematic sampling over a shuffled voxel order fixes the realised count.
pub fn sample_by_prior<T: Real>(
    image: &Volume<T>,
    brain_mask: &Mask,
    prior: &Volume<T>,
    n_max: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    image.geometry().check_same(brain_mask.geometry())?;
    image.geometry().check_same(prior.geometry())?;
    if n_max == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    let mut cand: Vec<(usize, f64)> = brain_mask
        .data()
        .iter()
        .zip(prior.data())
        .enumerate()
        .filter_map(|(i, (&m, p))| {
            let p = p.as_f64().clamp(0.0, 1.0);
            (m && p > 0.0).then_some((i, p))
        })
        .collect();
    if cand.is_empty() {
        return Err(Error::EmptyClass);
    }
    let img = image.data();
    let total: f64 = cand.iter().map(|c| c.1).sum();
    let pmax = cand.iter().map(|c| c.1).fold(0.0, f64::max);
    let scale = (n_max as f64 / total).min(1.0 / pmax);
    let target = ((scale * total).round() as usize).clamp(1, n_max);
    if target >= cand.len() {
        return Ok(cand.iter().map(|&(i, _)| img[i].as_f64()).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cand.shuffle(&mut rng);
    let mut out = Vec::with_capacity(target);
    let mut next = rng.random::<f64>();
    let mut acc = 0.0;
    for &(i, p) in &cand {
        acc += (scale * p).min(1.0);
        if acc > next && out.len() < target {
            out.push(img[i].as_f64());
            next += 1.0;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Geometry;

    fn setup(prior_a: f32, prior_b: f32) -> (Volume<f32>, Mask, Volume<f32>) {
        let g = Geometry::new([20, 10, 10], [1.0; 3], [0.0; 3]).unwrap();
        let img = Volume::from_world_fn(g.clone(), |p| if p[0] < 10.0 { 1.0 } else { 2.0 });
        let prior = Volume::from_world_fn(g.clone(), |p| if p[0] < 10.0 { prior_a } else { prior_b });
        (img, Mask::full(g), prior)
    }

    #[test]
    fn full_prior_on_small_mask_returns_everything() {
        let g = Geometry::new([10, 1, 1], [1.0; 3], [0.0; 3]).unwrap();
        let img = Volume::from_world_fn(g.clone(), |p| p[0] as f32);
        let s = sample_by_prior(&img, &Mask::full(g.clone()), &Volume::filled(g, 1.0), 10, 3).unwrap();
        let mut s = s;
        s.sort_by(f64::total_cmp);
        assert_eq!(s, (0..10).map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn zero_prior_is_an_empty_class() {
        let (img, m, _) = setup(0.0, 0.0);
        let prior = Volume::zeros(img.geometry().clone());
        assert!(matches!(sample_by_prior(&img, &m, &prior, 10, 0), Err(Error::EmptyClass)));
    }

    #[test]
    fn draw_ratio_follows_prior() {
        // 1000 voxels at 0.9 and 1000 at 0.1: about 180 of 200 draws from A;
        // the pooled count over all seeds must sit within 3 sigma
        let (img, m, prior) = setup(0.9, 0.1);
        let (p, n, seeds) = (0.9f64, 200.0f64, 50u64);
        let sd = (n * p * (1.0 - p)).sqrt();
        let mut total = 0.0;
        for seed in 0..seeds {
            let s = sample_by_prior(&img, &m, &prior, 200, seed).unwrap();
            assert_eq!(s.len(), 200);
            let a = s.iter().filter(|&&v| v == 1.0).count() as f64;
            assert!((a - n * p).abs() < 4.0 * sd, "seed {seed}: {a}");
            total += a;
        }
        let mean = total / seeds as f64;
        assert!((mean - n * p).abs() < 3.0 * sd / (seeds as f64).sqrt());
    }

    #[test]
    fn deterministic_given_seed() {
        let (img, m, prior) = setup(0.7, 0.2);
        let a = sample_by_prior(&img, &m, &prior, 300, 9).unwrap();
        let b = sample_by_prior(&img, &m, &prior, 300, 9).unwrap();
        assert_eq!(a, b);
    }
}
