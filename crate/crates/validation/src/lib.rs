//! Brute-force references used to check the fast paths of `partialfit`,
//! shared by the oracle tests and the acceptance run.

use partialfit::engine::{chain_rng, mh_step, ChainState, Posterior};
use partialfit::experiments::frame_params;
use partialfit::geometry::{Point3, PointCloud};
use partialfit::grammar::{FamilyId, ModelFamily, ParamVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

pub fn random_cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PointCloud::new(
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect(),
    )
}

/// Distance from `q` to its nearest point in `cloud`, by linear scan.
pub fn brute_nearest(cloud: &PointCloud, q: &Point3) -> f64 {
    cloud
        .points
        .iter()
        .map(|p| (p - q).norm())
        .fold(f64::INFINITY, f64::min)
}

pub fn brute_ohd(a: &PointCloud, b: &PointCloud) -> f64 {
    a.points.iter().map(|p| brute_nearest(b, p)).fold(0.0, f64::max)
}

/// Truncated normal over the frame parameter, one level only.
pub struct Gaussian {
    pub family: ModelFamily,
    pub mean: f64,
    pub sd: f64,
}

impl Posterior for Gaussian {
    fn family(&self) -> &ModelFamily {
        &self.family
    }

    fn top_level(&self, _: &ParamVector) -> u32 {
        0
    }

    fn log_posterior(&self, params: &ParamVector, _: u32) -> f64 {
        let prior = self.family.log_prior(params);
        let x = params.get("frame/x").unwrap();
        prior - (x - self.mean).powi(2) / (2.0 * self.sd * self.sd)
    }
}

pub fn gaussian() -> Gaussian {
    Gaussian {
        family: ModelFamily::new(FamilyId::FrameFull),
        mean: 1.0,
        sd: 0.3,
    }
}

/// Chi-square statistic and p-value of a thinned single-chain histogram of
/// [`gaussian`] against its exact bin masses.
pub fn mh_chi_square(steps: u64, seed: u64) -> (f64, f64) {
    let post = gaussian();
    let mut chain = ChainState {
        params: frame_params(FamilyId::FrameFull, 0.2),
        log_post_top: 0.0,
        temperature: 1.0,
        rng: chain_rng(seed, 1),
    };
    chain.log_post_top = post.log_posterior_top(&chain.params);
    let bins = 10;
    let mut counts = vec![0.0; bins];
    for i in 0..steps {
        mh_step(&mut chain, &post, 0.8, 0.05, false).unwrap();
        if i >= 1000 && i % 50 == 0 {
            let x = chain.params.get("frame/x").unwrap();
            counts[((x / 2.0 * bins as f64) as usize).min(bins - 1)] += 1.0;
        }
    }
    let n: f64 = counts.iter().sum();
    let normal = Normal::new(post.mean, post.sd).unwrap();
    let mass = normal.cdf(2.0) - normal.cdf(0.0);
    let mut stat = 0.0;
    for (b, &c) in counts.iter().enumerate() {
        let lo = 2.0 * b as f64 / bins as f64;
        let hi = lo + 2.0 / bins as f64;
        let e = n * (normal.cdf(hi) - normal.cdf(lo)) / mass;
        stat += (c - e).powi(2) / e;
    }
    (stat, 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(stat))
}
