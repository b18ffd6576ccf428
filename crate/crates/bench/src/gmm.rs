//! Isotropic 2-D Gaussian mixtures: the grid, jittered grid and ring
//! simulators, plus EM refitting.

use std::f64::consts::PI;

use cgm_core::codec::sample_index;
use cgm_core::rng::{substream, CgmRng, Stream};
use cgm_core::{Column, Kind, Table, Value};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{BenchError, Result};
use crate::parametric::{log_sum_exp, ParametricModel, Refit};

pub const EM_ITERATIONS: usize = 50;
pub const EM_RESTARTS: usize = 3;
/// Change in mean log-likelihood below which EM counts as converged.
pub const EM_TOLERANCE: f64 = 1e-4;
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Fixed seed for the jittered grid layout, so every run sees the same
/// centres.
const GRIDR_LAYOUT_SEED: u64 = 0x6772_6964;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub means: Vec<[f64; 2]>,
    /// Per-component standard deviation, shared by both axes.
    pub sigmas: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<[f64; 2]>, sigmas: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || sigmas.len() != k {
            return Err(BenchError::Model("mixture parameter lengths differ".into()));
        }
        if sigmas.iter().any(|s| !(*s > 0.0)) {
            return Err(BenchError::Model("mixture sigma must be positive".into()));
        }
        if weights.iter().any(|w| *w < 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(BenchError::Model("mixture weights must sum to 1".into()));
        }
        Ok(GaussianMixture {
            weights,
            means,
            sigmas,
        })
    }

    fn equal(means: Vec<[f64; 2]>, sigma: f64) -> Self {
        let k = means.len();
        GaussianMixture {
            weights: vec![1.0 / k as f64; k],
            sigmas: vec![sigma; k],
            means,
        }
    }

    /// 5×5 lattice on `[-4, 4]²`, σ = 0.12.
    pub fn grid() -> Self {
        let step = 2.0;
        let means = (0..5)
            .flat_map(|i| (0..5).map(move |j| [-4.0 + step * i as f64, -4.0 + step * j as f64]))
            .collect();
        Self::equal(means, 0.12)
    }

    /// The grid with every centre shifted by Uniform(±0.3) per axis.
    pub fn gridr() -> Self {
        let mut rng = substream(GRIDR_LAYOUT_SEED, Stream::Simulate, 0, 0);
        let mut g = Self::grid();
        for m in &mut g.means {
            m[0] += rng.random_range(-0.3..0.3);
            m[1] += rng.random_range(-0.3..0.3);
        }
        g
    }

    /// 8 components evenly spaced on a radius-2 circle, σ = 0.1.
    pub fn ring() -> Self {
        let means = (0..8)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / 8.0;
                [2.0 * t.cos(), 2.0 * t.sin()]
            })
            .collect();
        Self::equal(means, 0.1)
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    fn component_log_probs(&self, p: [f64; 2], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let s2 = self.sigmas[k] * self.sigmas[k];
            let d2 = (p[0] - self.means[k][0]).powi(2) + (p[1] - self.means[k][1]).powi(2);
            *o = self.weights[k].ln() - (2.0 * PI * s2).ln() - d2 / (2.0 * s2);
        }
    }

    pub fn log_density(&self, p: [f64; 2]) -> f64 {
        let mut buf = vec![0.0; self.components()];
        self.component_log_probs(p, &mut buf);
        log_sum_exp(&buf)
    }

    pub fn sample_points(&self, n: usize, rng: &mut CgmRng) -> Vec<[f64; 2]> {
        (0..n)
            .map(|_| {
                let k = sample_index(&self.weights, rng);
                let zx: f64 = rng.sample(StandardNormal);
                let zy: f64 = rng.sample(StandardNormal);
                [
                    self.means[k][0] + self.sigmas[k] * zx,
                    self.means[k][1] + self.sigmas[k] * zy,
                ]
            })
            .collect()
    }

    /// Best of [`EM_RESTARTS`] EM runs with k-means++ starts.
    pub fn fit_em(points: &[[f64; 2]], k: usize, seed: u64) -> Result<(Self, bool)> {
        if points.is_empty() || k == 0 {
            return Err(BenchError::Data("EM needs points and components".into()));
        }
        let mut best: Option<(f64, Self, bool)> = None;
        for restart in 0..EM_RESTARTS {
            let mut rng = substream(seed, Stream::Refit, restart as u64, 0);
            let init = kmeans_pp(points, k, &mut rng);
            let (model, ll, converged) = em(points, init);
            if best.as_ref().is_none_or(|(b, _, _)| ll > *b) {
                best = Some((ll, model, converged));
            }
        }
        let (_, model, converged) = best.expect("at least one restart");
        Ok((model, converged))
    }
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn kmeans_pp(points: &[[f64; 2]], k: usize, rng: &mut CgmRng) -> GaussianMixture {
    let mut centres = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(*p, centres[0])).collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let probs: Vec<f64> = d2.iter().map(|d| d / total).collect();
            points[sample_index(&probs, rng)]
        } else {
            // Every point coincides with a centre already.
            points[rng.random_range(0..points.len())]
        };
        centres.push(next);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(*p, next));
        }
    }
    let spread = (d2.iter().sum::<f64>() / (2.0 * points.len() as f64)).max(VARIANCE_FLOOR);
    GaussianMixture::equal(centres, spread.sqrt())
}

/// Returns the fitted model, its final mean log-likelihood and whether
/// the last iteration changed it by less than [`EM_TOLERANCE`].
fn em(points: &[[f64; 2]], mut g: GaussianMixture) -> (GaussianMixture, f64, bool) {
    let n = points.len();
    let k = g.components();
    let mut resp = vec![0.0; n * k];
    let mut prev = f64::NEG_INFINITY;
    let mut ll = f64::NEG_INFINITY;
    let mut converged = false;
    for _ in 0..EM_ITERATIONS {
        // E step.
        let mut total = 0.0;
        for (i, p) in points.iter().enumerate() {
            let r = &mut resp[i * k..(i + 1) * k];
            g.component_log_probs(*p, r);
            let lse = log_sum_exp(r);
            total += lse;
            for v in r.iter_mut() {
                *v = (*v - lse).exp();
            }
        }
        ll = total / n as f64;
        converged = (ll - prev).abs() < EM_TOLERANCE;
        prev = ll;
        // M step.
        for c in 0..k {
            let mut nk = 0.0;
            let mut mx = 0.0;
            let mut my = 0.0;
            for (i, p) in points.iter().enumerate() {
                let r = resp[i * k + c];
                nk += r;
                mx += r * p[0];
                my += r * p[1];
            }
            if nk < 1e-12 {
                // Starved component: keep its place, drop its weight.
                g.weights[c] = 0.0;
                continue;
            }
            let m = [mx / nk, my / nk];
            let mut ss = 0.0;
            for (i, p) in points.iter().enumerate() {
                ss += resp[i * k + c] * dist2(*p, m);
            }
            g.weights[c] = nk / n as f64;
            g.means[c] = m;
            g.sigmas[c] = (ss / (2.0 * nk)).max(VARIANCE_FLOOR).sqrt();
        }
    }
    (g, ll, converged)
}

/// A mixture exposed as a two-column numerical table `x, y`.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureModel {
    pub mixture: GaussianMixture,
}

impl MixtureModel {
    pub fn new(mixture: GaussianMixture) -> Self {
        MixtureModel { mixture }
    }

    fn point(row: &[Value]) -> Result<[f64; 2]> {
        match row {
            [Value::Num(x), Value::Num(y)] => Ok([*x, *y]),
            _ => Err(BenchError::Data(format!("expected two numbers, got {row:?}"))),
        }
    }

    fn points(t: &Table) -> Result<Vec<[f64; 2]>> {
        (0..t.n_rows()).map(|i| Self::point(&t.row(i))).collect()
    }
}

impl ParametricModel for MixtureModel {
    fn header(&self) -> Vec<String> {
        vec!["x".into(), "y".into()]
    }

    fn kinds(&self) -> Vec<Kind> {
        vec![Kind::Numerical; 2]
    }

    fn sample(&self, n: usize, rng: &mut CgmRng) -> Table {
        let pts = self.mixture.sample_points(n, rng);
        Table::new(
            self.header(),
            vec![
                Column::Numerical(pts.iter().map(|p| Some(p[0])).collect()),
                Column::Numerical(pts.iter().map(|p| Some(p[1])).collect()),
            ],
        )
        .expect("two equal columns")
    }

    fn log_prob(&self, row: &[Value]) -> Result<f64> {
        Ok(self.mixture.log_density(Self::point(row)?))
    }

    fn refit(&self, data: &Table, seed: u64) -> Result<Refit> {
        let (mixture, converged) =
            GaussianMixture::fit_em(&Self::points(data)?, self.mixture.components(), seed)?;
        Ok(Refit {
            model: Box::new(MixtureModel { mixture }),
            converged,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simulators_have_documented_layout() {
        let g = GaussianMixture::grid();
        assert_eq!(g.components(), 25);
        assert_eq!(g.means[0], [-4.0, -4.0]);
        assert_eq!(g.means[24], [4.0, 4.0]);
        let r = GaussianMixture::ring();
        assert_eq!(r.components(), 8);
        for m in &r.means {
            assert!(((m[0] * m[0] + m[1] * m[1]).sqrt() - 2.0).abs() < 1e-12);
        }
        let j = GaussianMixture::gridr();
        assert_eq!(j, GaussianMixture::gridr());
        for (a, b) in j.means.iter().zip(&g.means) {
            assert!((a[0] - b[0]).abs() <= 0.3 && (a[1] - b[1]).abs() <= 0.3);
            assert_ne!(a, b);
        }
    }

    #[test]
    fn single_gaussian_density() {
        let g = GaussianMixture::new(vec![1.0], vec![[0.0, 0.0]], vec![1.0]).unwrap();
        assert!((g.log_density([0.0, 0.0]) + (2.0 * PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(GaussianMixture::new(vec![0.5, 0.4], vec![[0.0; 2]; 2], vec![1.0; 2]).is_err());
        assert!(GaussianMixture::new(vec![1.0], vec![[0.0; 2]], vec![0.0]).is_err());
    }
}
