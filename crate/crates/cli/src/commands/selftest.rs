use hlnet::freqops::{dwt_haar, idwt_haar, split_high_low};
use hlnet::gradcheck::GradCheck;
use hlnet::gradsuite::{block_check, GROUP_ATOL};
use hlnet::imaging::{mu_law, mu_law_inv, DEFAULT_MU};
use hlnet::rng::seeded;
use hlnet::FeatureMap;
use rand::Rng;

use crate::error::{CliError, CliResult};
use crate::SelftestArgs;

struct Check {
    name: &'static str,
    measured: f64,
    tolerance: f64,
}

impl Check {
    fn passed(&self) -> bool {
        self.measured <= self.tolerance
    }
}

fn random_map(seed: u64, shape: (usize, usize, usize, usize)) -> FeatureMap<f64> {
    let mut rng = seeded(seed);
    FeatureMap::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
}

fn max_abs_diff(a: &FeatureMap<f64>, b: &FeatureMap<f64>) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn wavelet_reconstruction(break_dwt: bool) -> CliResult<f64> {
    let mut worst = 0.0f64;
    for seed in 0..8 {
        let f = random_map(seed, (2, 3, 16, 12));
        let mut bands = dwt_haar(&f)?;
        if break_dwt {
            bands.ll.mapv_inplace(|v| v * 1.01);
        }
        worst = worst.max(max_abs_diff(&idwt_haar(&bands)?, &f));
    }
    Ok(worst)
}

fn freq_split_identity() -> CliResult<f64> {
    let mut worst = 0.0f64;
    for (seed, k) in [(10, 1), (11, 2), (12, 4)] {
        let f = random_map(seed, (1, 2, 16, 16));
        let s = split_high_low(&f, k)?;
        worst = worst.max(max_abs_diff(&(&s.high + &s.low_up), &f));
    }
    Ok(worst)
}

fn tonemap_endpoints() -> f64 {
    let ends = mu_law(0.0, DEFAULT_MU).abs().max((mu_law(1.0, DEFAULT_MU) - 1.0).abs());
    let round_trip = (0..=100)
        .map(|i| i as f64 / 100.0)
        .map(|h| (mu_law_inv(mu_law(h, DEFAULT_MU), DEFAULT_MU) - h).abs())
        .fold(0.0f64, f64::max);
    ends.max(round_trip)
}

fn gradient_check() -> CliResult<f64> {
    let report = block_check("sceb", &GradCheck::default())
        .ok_or_else(|| CliError::Failed("gradient fixture 'sceb' is missing".into()))?;
    // Groups whose gradients are at round-off level count as exact.
    let fails = report.failing_groups(1e-4, GROUP_ATOL);
    Ok(if fails.is_empty() {
        report.overall_rel_err()
    } else {
        fails.iter().map(|g| g.1).fold(0.0, f64::max)
    })
}

pub fn run(a: SelftestArgs) -> CliResult<()> {
    let checks = [
        Check {
            name: "wavelet_reconstruction",
            measured: wavelet_reconstruction(a.break_dwt)?,
            tolerance: 1e-10,
        },
        Check {
            name: "freq_split_identity",
            measured: freq_split_identity()?,
            tolerance: 1e-10,
        },
        Check {
            name: "tonemap_endpoints",
            measured: tonemap_endpoints(),
            tolerance: 1e-9,
        },
        Check {
            name: "gradient_check_sceb",
            measured: gradient_check()?,
            tolerance: 1e-4,
        },
    ];
    println!("{:<24} {:<6} {:>12} {:>12}", "check", "status", "measured", "tolerance");
    for c in &checks {
        let status = if c.passed() { "pass" } else { "FAIL" };
        println!("{:<24} {:<6} {:>12.3e} {:>12.1e}", c.name, status, c.measured, c.tolerance);
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("self-test failed: {}", failed.join(", "))))
    }
}
