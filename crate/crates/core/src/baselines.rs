//! Reference cache allocations.

use crate::error::{Error, Result};
use crate::rate::CacheAllocation;
use crate::system::SystemConfig;
use crate::trust_region::PopularityProfile;

pub fn no_cache(config: &SystemConfig) -> CacheAllocation {
    CacheAllocation::zeros(config.num_bs, config.num_files)
}

/// `C / (L K)` everywhere, capped at the file size.
pub fn uniform_allocation(config: &SystemConfig) -> CacheAllocation {
    let cells = (config.num_bs * config.num_files) as f64;
    CacheAllocation::filled(
        config.num_bs,
        config.num_files,
        (config.total_cache / cells).clamp(0.0, config.file_size),
    )
}

/// Splits `budget` over BSs so that `(F - C_l) / a_l` is equal across BSs
/// with `0 < C_l < F`, where `a_l = log2(1 + P Tr(K_l) / (L sigma^2))`.
/// BSs whose equalized share would be negative get nothing.
pub fn proportional_column(gains: &[f64], config: &SystemConfig, budget: f64) -> Result<Vec<f64>> {
    let f = config.file_size;
    let l_count = gains.len();
    if l_count == 0 || gains.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
        return Err(Error::validation("proportional split needs positive average gains"));
    }
    if budget >= l_count as f64 * f {
        return Ok(vec![f; l_count]);
    }
    if budget <= 0.0 {
        return Ok(vec![0.0; l_count]);
    }
    let scale = config.snr_scale() / l_count as f64;
    let a: Vec<f64> = gains.iter().map(|g| (1.0 + scale * g).log2()).collect();
    // C_l(theta) = clamp(F - theta a_l, 0, F); the sum is L F at theta = 0
    // and loses slope a_l once theta passes F / a_l.
    let mut order: Vec<usize> = (0..l_count).collect();
    order.sort_by(|&i, &j| (f / a[i]).total_cmp(&(f / a[j])).then(i.cmp(&j)));
    let mut active: f64 = a.iter().sum();
    let mut theta = 0.0;
    let mut sum = l_count as f64 * f;
    for &i in &order {
        let edge = f / a[i];
        let at_edge = sum - active * (edge - theta);
        if at_edge <= budget {
            theta += (sum - budget) / active;
            break;
        }
        theta = edge;
        sum = at_edge;
        active -= a[i];
    }
    Ok(a.iter().map(|ai| (f - theta * ai).clamp(0.0, f)).collect())
}

/// Each file receives `C / K`, split by [`proportional_column`].
pub fn proportional_allocation(gains: &[f64], config: &SystemConfig) -> Result<CacheAllocation> {
    check_gains(gains, config)?;
    let column = proportional_column(gains, config, config.total_cache / config.num_files as f64)?;
    CacheAllocation::from_columns(&vec![column; config.num_files])
}

/// File `k` receives `p_k C` (at most `L F`), split by
/// [`proportional_column`]. Equals [`proportional_allocation`] for uniform
/// popularity.
pub fn proportional_by_popularity(
    gains: &[f64],
    popularity: &PopularityProfile,
    config: &SystemConfig,
) -> Result<CacheAllocation> {
    check_gains(gains, config)?;
    if popularity.num_files() != config.num_files {
        return Err(Error::validation("popularity does not match the number of files"));
    }
    let columns = popularity
        .probabilities()
        .iter()
        .map(|p| proportional_column(gains, config, p * config.total_cache))
        .collect::<Result<Vec<_>>>()?;
    CacheAllocation::from_columns(&columns)
}

/// Caches whole files in decreasing popularity (ties by index) while the
/// budget allows, gives the remainder to the next file proportionally, and
/// nothing to the rest.
pub fn most_popular_first(
    gains: &[f64],
    popularity: &PopularityProfile,
    config: &SystemConfig,
) -> Result<CacheAllocation> {
    check_gains(gains, config)?;
    if popularity.num_files() != config.num_files {
        return Err(Error::validation("popularity does not match the number of files"));
    }
    let p = popularity.probabilities();
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&i, &j| p[j].total_cmp(&p[i]).then(i.cmp(&j)));
    let full = config.num_bs as f64 * config.file_size;
    let mut remaining = config.total_cache;
    let mut columns = vec![vec![0.0; config.num_bs]; config.num_files];
    for k in order {
        if remaining >= full {
            columns[k] = vec![config.file_size; config.num_bs];
            remaining -= full;
        } else {
            columns[k] = proportional_column(gains, config, remaining)?;
            break;
        }
    }
    CacheAllocation::from_columns(&columns)
}

fn check_gains(gains: &[f64], config: &SystemConfig) -> Result<()> {
    if gains.len() != config.num_bs {
        return Err(Error::validation(format!(
            "{} average gains for {} BSs",
            gains.len(),
            config.num_bs
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{BsGeometry, ChannelModel, ChannelParams};
    use proptest::prelude::*;

    fn cfg(l: usize, k: usize, budget: f64) -> SystemConfig {
        SystemConfig {
            num_bs: l,
            num_files: k,
            total_cache: budget,
            ..SystemConfig::default()
        }
    }

    /// Gains whose log terms are exactly `a` under `cfg`.
    fn gains_for(a: &[f64], config: &SystemConfig) -> Vec<f64> {
        let scale = config.snr_scale() / a.len() as f64;
        a.iter().map(|x| (x.exp2() - 1.0) / scale).collect()
    }

    #[test]
    fn uniform_examples() {
        assert!(uniform_allocation(&cfg(5, 1, 100.0)).as_slice().iter().all(|c| *c == 20.0));
        assert!(uniform_allocation(&cfg(5, 4, 400.0)).as_slice().iter().all(|c| *c == 20.0));
        assert_eq!(uniform_allocation(&cfg(5, 1, 0.0)), no_cache(&cfg(5, 1, 0.0)));
    }

    #[test]
    fn proportional_hand_solve() {
        let c = cfg(2, 1, 50.0);
        let col = proportional_column(&gains_for(&[1.0, 2.0], &c), &c, 50.0).unwrap();
        assert!((col[0] - 50.0).abs() < 1e-9 && col[1].abs() < 1e-9, "{col:?}");
        // Interior case: 200 - 3 theta = 80 gives theta = 40.
        let col = proportional_column(&gains_for(&[1.0, 2.0], &c), &c, 80.0).unwrap();
        assert!((col[0] - 60.0).abs() < 1e-9 && (col[1] - 20.0).abs() < 1e-9);
        // Clipped case: the second BS would go negative.
        let col = proportional_column(&gains_for(&[1.0, 4.0], &c), &c, 30.0).unwrap();
        assert!((col[0] - 30.0).abs() < 1e-9 && col[1] == 0.0);
        let col = proportional_column(&[1e-12], &cfg(1, 1, 70.0), 70.0).unwrap();
        assert!((col[0] - 70.0).abs() < 1e-9);
    }

    #[test]
    fn weakest_bs_gets_most_on_reference_topology() {
        let c = cfg(5, 1, 100.0);
        let model = ChannelModel::new(&BsGeometry::reference_topology(), &c, &ChannelParams::default(), 1).unwrap();
        let alloc = proportional_allocation(&model.average_gains(), &c).unwrap();
        let col = alloc.column(0);
        assert!((0..5).filter(|&l| l != 2).all(|l| col[2] > col[l]), "{col:?}");
    }

    #[test]
    fn most_popular_examples() {
        let g = vec![1e-12, 2e-12, 3e-12, 4e-12, 5e-12];
        let pop = PopularityProfile::zipf(4, 1.0).unwrap();
        let all = most_popular_first(&g, &pop, &cfg(5, 4, 2000.0)).unwrap();
        assert!(all.as_slice().iter().all(|c| *c == 100.0));
        let one = most_popular_first(&g, &pop, &cfg(5, 4, 500.0)).unwrap();
        assert_eq!(one.column(0), vec![100.0; 5]);
        assert!(one.file_totals()[1..].iter().all(|t| *t == 0.0));
        let pop2 = PopularityProfile::new(vec![0.3, 0.7]).unwrap();
        let c = cfg(5, 2, 750.0);
        let split = most_popular_first(&g, &pop2, &c).unwrap();
        assert_eq!(split.column(1), vec![100.0; 5]);
        let rest = proportional_column(&g, &c, 250.0).unwrap();
        assert_eq!(split.column(0), rest);
        // Ties go to the lower index.
        let tie = most_popular_first(&g, &PopularityProfile::uniform(2).unwrap(), &c).unwrap();
        assert_eq!(tie.column(0), vec![100.0; 5]);
    }

    #[test]
    fn popularity_split_follows_probabilities() {
        let g = vec![1e-12, 2e-12, 3e-12, 4e-12, 5e-12];
        let c = cfg(5, 2, 100.0);
        let pop = PopularityProfile::new(vec![0.8, 0.2]).unwrap();
        let alloc = proportional_by_popularity(&g, &pop, &c).unwrap();
        let totals = alloc.file_totals();
        assert!((totals[0] - 80.0).abs() < 1e-9 && (totals[1] - 20.0).abs() < 1e-9);
        assert_eq!(alloc.column(0), proportional_column(&g, &c, 80.0).unwrap());
        let even = proportional_by_popularity(&g, &PopularityProfile::uniform(2).unwrap(), &c).unwrap();
        assert_eq!(even, proportional_allocation(&g, &c).unwrap());
    }

    proptest! {
        #[test]
        fn proportional_is_feasible_and_equalized(
            a in proptest::collection::vec(0.1f64..8.0, 1..7),
            frac in 0.0f64..1.2,
        ) {
            let c = cfg(a.len(), 1, frac * 100.0 * a.len() as f64);
            let col = proportional_column(&gains_for(&a, &c), &c, c.total_cache).unwrap();
            let total: f64 = col.iter().sum();
            prop_assert!(total <= c.total_cache + 1e-9);
            prop_assert!(col.iter().all(|v| (0.0..=100.0).contains(v)));
            if c.total_cache < 100.0 * a.len() as f64 {
                prop_assert!((total - c.total_cache).abs() <= 1e-9 * (1.0 + c.total_cache));
            }
            let ratios: Vec<f64> = (0..a.len())
                .filter(|&l| col[l] > 1e-9 && col[l] < 100.0 - 1e-9)
                .map(|l| (100.0 - col[l]) / a[l])
                .collect();
            for r in &ratios {
                prop_assert!((r - ratios[0]).abs() <= 1e-8 * (1.0 + ratios[0]));
            }
        }
    }
}
