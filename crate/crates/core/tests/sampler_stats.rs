use pns_core::oracle::build_informer;
use pns_core::sampler::{estimate_distribution, read_counts_csv, sample_counts, shard_rng, write_counts_csv};
use pns_core::{Regime, ScmKind, ScmSpec, SimConfig, SubgroupKey};
use rand::RngCore;

/// Fraction of well-sampled subgroups whose six estimated probabilities all
/// lie within `z` binomial standard errors of the exact values.
fn agreement(kind: ScmKind, n: u64, min_obs: u64, z: f64) -> (usize, f64) {
    let spec = ScmSpec::builtin(kind);
    let informer = build_informer::<f64>(&spec).unwrap();
    let (obs, exp) = sample_counts(&spec, &SimConfig::new(n, n, 17)).unwrap();
    let mut checked = 0;
    let mut ok = 0;
    for rec in &informer {
        let n_obs = obs.subgroup_total(rec.key);
        if n_obs < min_obs {
            continue;
        }
        let Ok(est) = estimate_distribution::<f64>(&obs, &exp, rec.key) else { continue };
        let c = exp.cells(rec.key);
        let (n_x, n_xp) = ((c[0] + c[1]) as f64, (c[2] + c[3]) as f64);
        let t = rec.dist;
        let pairs = [
            (est.p_yx, t.p_yx, n_x),
            (est.p_yxp, t.p_yxp, n_xp),
            (est.p_xy, t.p_xy, n_obs as f64),
            (est.p_xyp, t.p_xyp, n_obs as f64),
            (est.p_xpy, t.p_xpy, n_obs as f64),
            (est.p_xpyp, t.p_xpyp, n_obs as f64),
        ];
        checked += 1;
        if pairs.iter().all(|&(e, p, m)| (e - p).abs() <= z * (p * (1.0 - p) / m).sqrt() + 1e-12) {
            ok += 1;
        }
    }
    (checked, ok as f64 / checked.max(1) as f64)
}

#[test]
fn estimates_agree_with_oracle_within_binomial_error() {
    for kind in ScmKind::ALL {
        let (checked, frac) = agreement(kind, 2_000_000, 2_000, 4.0);
        assert!(checked > 50, "{kind}: only {checked} subgroups");
        assert!(frac >= 0.99, "{kind}: {frac}");
    }
}

#[test]
fn treatment_assignment_follows_its_probability() {
    let spec = ScmSpec::builtin(ScmKind::Direct);
    let mut cfg = SimConfig::new(10, 400_000, 3);
    cfg.treatment_prob = 0.3;
    let (_, exp) = sample_counts(&spec, &cfg).unwrap();
    let treated: u64 = exp.counts.iter().map(|c| c[0] + c[1]).sum();
    let p = treated as f64 / 400_000.0;
    assert!((p - 0.3).abs() < 4.0 * (0.3f64 * 0.7 / 400_000.0).sqrt(), "{p}");
}

#[test]
fn shard_streams_are_distinct() {
    let mut seen = std::collections::HashSet::new();
    for regime in [Regime::Observational, Regime::Experimental] {
        for s in 0..16 {
            assert!(seen.insert(shard_rng(5, regime, s).next_u64()));
        }
    }
}

#[test]
fn counts_differ_across_seeds_and_round_trip() {
    let spec = ScmSpec::builtin(ScmKind::Mediator);
    let (a_obs, a_exp) = sample_counts(&spec, &SimConfig::new(50_000, 50_000, 1)).unwrap();
    let (b_obs, _) = sample_counts(&spec, &SimConfig::new(50_000, 50_000, 2)).unwrap();
    assert_ne!(a_obs, b_obs);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("counts.csv");
    write_counts_csv(&a_obs, &a_exp, &path).unwrap();
    let (r_obs, r_exp) = read_counts_csv(&path).unwrap();
    assert_eq!((r_obs, r_exp), (a_obs, a_exp));
}

#[test]
fn most_sampled_mediator_subgroup_matches_oracle() {
    let spec = ScmSpec::builtin(ScmKind::Mediator);
    let (obs, exp) = sample_counts(&spec, &SimConfig::new(1_000_000, 1_000_000, 9)).unwrap();
    let informer = build_informer::<f64>(&spec).unwrap();
    let key = SubgroupKey::all().max_by_key(|&k| obs.subgroup_total(k)).unwrap();
    let est = estimate_distribution::<f64>(&obs, &exp, key).unwrap();
    let c = exp.cells(key);
    let se = (informer[key.index()].dist.p_yx * (1.0 - informer[key.index()].dist.p_yx) / (c[0] + c[1]) as f64).sqrt();
    assert!((est.p_yx - informer[key.index()].dist.p_yx).abs() <= 4.0 * se + 1e-12);
}
