//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//! Run with `cargo test -p vmiv --test acceptance -- --nocapture` to see the
//! lines as they complete.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use vmiv::combinatorics::{
    assignments, build_mj, canonical_subsets, check_property_m, count_compliance_groups,
    enumerate_compliance_groups, rowspace_projection_check, sperner_chain_decomposition, verify_mj,
    WeightTable,
};
use vmiv::design::{build_a, build_gamma, two_instrument_group_bounds, vm_propensity_test, Dataset, PropensityTable2};
use vmiv::estimation::{
    ate_bounds, bootstrap_se, estimate_rho, group_weight, sandwich_se, wald_acl,
    weight_observations, weight_table_for, EstimandKind, Regularization,
};
use vmiv::sets::{ComplianceGroup, InstrumentSet, SpernerFamily};
use vmiv::simulation::{
    dgp_three_instruments, dgp_two_instruments, oracle_estimand, run_monte_carlo, sample_dgp,
    BaselineLaw, DgpSpec, EffectNoise, Estimator, InstrumentLaw, McConfig, OutcomeLaw,
};

fn report(number: u32, name: &str, pass: bool, detail: &str) {
    println!("[{}] criterion {number:02}: {name} — {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {number:02} ({name}) failed: {detail}");
}

fn set(ix: &[usize]) -> InstrumentSet {
    InstrumentSet::from_indices(ix).unwrap()
}

#[test]
fn criterion_01_antichain_counts() {
    let start = Instant::now();
    let mut ok = true;
    let expected = [3u64, 6, 20, 168, 7581];
    for (j, want) in expected.iter().enumerate() {
        let groups = enumerate_compliance_groups(j + 1).unwrap();
        ok &= groups.len() as u64 == *want;
        ok &= count_compliance_groups(j + 1).unwrap() == *want;
    }
    let count6 = count_compliance_groups(6).unwrap();
    ok &= count6 == 7_828_354;
    let elapsed = start.elapsed().as_secs_f64();
    ok &= elapsed < 60.0;
    report(1, "compliance-group counts 3,6,20,168,7581 and 7,828,354", ok, &format!("count(6)={count6}, {elapsed:.2}s"));
}

#[test]
fn criterion_02_linear_dependency_matrix() {
    let start = Instant::now();
    let mj = build_mj(2).unwrap();
    let row = |sets: &[&[usize]]| {
        let fam = SpernerFamily::new(sets.iter().map(|s| set(s)).collect()).unwrap();
        mj.row(mj.row_of(&fam).unwrap()).to_vec()
    };
    let mut ok = row(&[&[1]]) == vec![1, 0, 0]
        && row(&[&[2]]) == vec![0, 1, 0]
        && row(&[&[1, 2]]) == vec![0, 0, 1]
        && row(&[&[1], &[2]]) == vec![1, 1, -1];
    for j in 1..=4 {
        ok &= verify_mj(j).unwrap();
    }
    let elapsed = start.elapsed().as_secs_f64();
    ok &= elapsed < 10.0;
    report(2, "two-instrument matrix exact; identity exhaustive J<=4", ok, &format!("{elapsed:.2}s"));
}

#[test]
fn criterion_03_indicator_expansion_identity() {
    let mut ok = true;
    for j in 1..=4 {
        let a = build_a(j).unwrap();
        for z in assignments(j) {
            for target in assignments(j) {
                let got: i64 = a
                    .rows
                    .iter()
                    .enumerate()
                    .map(|(r, s)| i64::from(s.is_subset_of(z)) * a.entry(r, target))
                    .sum();
                ok &= got == i64::from(z == target);
            }
        }
    }
    report(3, "cell-indicator expansion identity, exact integers, J<=4", ok, "all 2^J x 2^J checks");
}

#[test]
fn criterion_04_weight_consistency_fixtures() {
    let mut ok = true;
    let mut checked = 0;
    for j in 1..=4usize {
        let mut kinds = vec![EstimandKind::Acl];
        for single in 1..=j {
            kinds.push(EstimandKind::Slate(set(&[single])));
            kinds.push(EstimandKind::Slatt(set(&[single])));
            kinds.push(EstimandKind::Slatu(set(&[single])));
        }
        let full: Vec<usize> = (1..=j).collect();
        kinds.push(EstimandKind::Slate(set(&full)));
        kinds.push(EstimandKind::Slatt(set(&full)));
        kinds.push(EstimandKind::Slatu(set(&full)));
        if j >= 2 {
            kinds.push(EstimandKind::Slate(set(&[1, 2])));
        }
        for instrument in 1..=j {
            let others: Vec<usize> = (1..=j).filter(|&i| i != instrument).collect();
            for ctx in [vec![], others.clone()] {
                kinds.push(EstimandKind::Pte { instrument, context: set(&ctx) });
            }
            if j >= 3 {
                kinds.push(EstimandKind::Pte { instrument, context: set(&others[..1]) });
            }
        }
        for kind in kinds {
            let table = weight_table_for(&kind, j).unwrap();
            let result = check_property_m(&table).unwrap();
            ok &= result.holds;
            // The decomposition must reproduce the table exactly at every
            // assignment, with at most ceil(J/2) nested transitions.
            for z in assignments(j) {
                match sperner_chain_decomposition(&table, z) {
                    Ok(steps) => {
                        ok &= steps.len() <= j.div_ceil(2);
                        for (gi, g) in table.groups().iter().enumerate() {
                            let total: i64 = steps
                                .iter()
                                .map(|s| {
                                    i64::from(g.selection_value(s.upper))
                                        - i64::from(g.selection_value(s.lower))
                                })
                                .sum();
                            ok &= total == i64::from(table.value(gi, z));
                        }
                    }
                    Err(_) => ok = false,
                }
            }
            checked += 1;
        }
    }

    // The treated set-effect weights decompose as the single transition
    // from the realized assignment with the set switched off.
    let js = set(&[1, 2]);
    let slatt = weight_table_for(&EstimandKind::Slatt(js), 3).unwrap();
    let z = set(&[1, 2, 3]);
    let steps = sperner_chain_decomposition(&slatt, z).unwrap();
    ok &= steps.len() == 1 && steps[0].upper == z && steps[0].lower == z.difference(js);

    // Weight on the single-instrument complier group alone violates the
    // two-member family row (it forces 1 + 0 - 1 = 0 against an actual 1).
    let z1_family = SpernerFamily::new(vec![set(&[1])]).unwrap();
    let z1_only = WeightTable::from_fn(2, |g, _| g.family() == Some(&z1_family)).unwrap();
    let result = check_property_m(&z1_only).unwrap();
    let eager = SpernerFamily::new(vec![set(&[1]), set(&[2])]).unwrap();
    ok &= !result.holds
        && result
            .violations
            .iter()
            .any(|v| v.group.family() == Some(&eager) && v.expected == 1 && v.actual == 0);
    ok &= sperner_chain_decomposition(&z1_only, InstrumentSet::EMPTY).is_err();

    report(4, "built-in weight tables consistent; single-group weights rejected", ok, &format!("{checked} tables round-tripped"));
}

#[test]
fn criterion_05_projection_fixture() {
    #[rustfmt::skip]
    let rows: [[f64; 14]; 8] = [
        [0.,0.,1.,0.,0.,1.,0., 0.,0.,0.,0.,0.,0.,0.],
        [1.,1.,1.,1.,0.,1.,0., 0.,0.,0.,0.,0.,0.,0.],
        [1.,1.,1.,0.,1.,1.,0., 0.,0.,0.,0.,0.,0.,0.],
        [0.,1.,0.,0.,0.,1.,0., 0.,0.,0.,0.,0.,0.,0.],
        [0.,0.,0.,0.,0.,0.,0., 1.,1.,0.,1.,1.,0.,1.],
        [0.,0.,0.,0.,0.,0.,0., 0.,0.,0.,0.,1.,0.,1.],
        [0.,0.,0.,0.,0.,0.,0., 0.,0.,0.,1.,0.,0.,1.],
        [0.,0.,0.,0.,0.,0.,0., 1.,0.,1.,1.,1.,0.,1.],
    ];
    let b = DMatrix::from_fn(8, 14, |i, c| rows[i][c]);
    let v = DVector::from_vec(vec![
        1., 1., 1., 1., 1., 0., 0., -1., -1., -1., -1., -1., 0., 0.,
    ]);
    let (projection, in_rowspace) = rowspace_projection_check(&b, &v).unwrap();
    let printed = [
        1.45, 0.82, 0.82, 0.73, 0.73, 0.18, 0.0, -1.45, -0.73, -0.73, -0.82, -0.82, 0.0,
    ];
    let mut ok = !in_rowspace;
    for (i, want) in printed.iter().enumerate() {
        ok &= (projection[i] - want).abs() < 0.005;
    }
    report(5, "moment-matrix projection matches the printed vector; not in row space", ok, &format!("first entry {:.4}", projection[0]));
}

/// Random full-support dataset with a strong first stage.
fn random_full_support(j: usize, n: usize, rng: &mut impl Rng) -> (DVector<f64>, DVector<f64>, DMatrix<f64>) {
    let cells = 1usize << j;
    loop {
        let mut z = DMatrix::zeros(n, j);
        let mut d = DVector::zeros(n);
        let mut y = DVector::zeros(n);
        let mut counts = vec![0usize; cells];
        for i in 0..n {
            let cell = rng.random_range(0..cells);
            counts[cell] += 1;
            for b in 0..j {
                z[(i, b)] = f64::from(u8::from(cell & (1 << b) != 0));
            }
            let p = 0.05 + 0.9 * (cell == cells - 1) as u8 as f64
                + 0.3 * (cell.count_ones() as f64 / j as f64) * f64::from(cell != cells - 1);
            d[i] = f64::from(rng.random::<f64>() < p.min(0.95));
            y[i] = rng.random::<f64>() * 4.0 - 1.0 + 1.7 * d[i];
        }
        if counts.iter().all(|&c| c > j + 2) {
            return (y, d, z);
        }
    }
}

#[test]
fn criterion_06_two_cell_equivalence() {
    let mut rng = ChaCha12Rng::seed_from_u64(0x57a7);
    let mut ok = true;
    let mut worst = 0.0f64;
    for rep in 0..100 {
        let j = if rep % 2 == 0 { 2 } else { 3 };
        let (y, d, z) = random_full_support(j, 400, &mut rng);
        let family = canonical_subsets(j);
        let gamma = build_gamma(&z, &family);
        let lambda = DVector::from_element(family.len(), 1.0);
        let fit = estimate_rho(&y, &d, &gamma, &lambda, 0.0).unwrap();
        let wald = wald_acl(&y, &d, &z).unwrap();
        let rel = (fit.point - wald.point).abs() / wald.point.abs();
        worst = worst.max(rel);
        ok &= rel <= 1e-10;
    }
    report(6, "all-ones ratio equals the two-cell ratio to 1e-10 relative", ok, &format!("worst {worst:.2e} over 100 datasets"));
}

#[test]
fn criterion_07_oracle_recovery() {
    let start = Instant::now();
    let dgp = dgp_three_instruments(1, 1000, 2024).unwrap();
    let oracle = oracle_estimand(&dgp, &EstimandKind::Acl).unwrap();
    let config = McConfig {
        estimand: EstimandKind::Acl,
        estimators: vec![Estimator::VmWald, Estimator::VmRegularized],
        replications: 1000,
        master_seed: 2024,
        coverage: false,
    };
    let result = run_monte_carlo(&dgp, &config).unwrap();
    let wald = &result.summaries[0];
    let sd = (wald.rmse.powi(2) - wald.bias.powi(2)).max(0.0).sqrt();
    let mc_se = sd / (wald.completed as f64).sqrt();
    let mut ok = wald.bias.abs() <= 3.0 * mc_se;

    let share_mean = wald.share_mean.unwrap();
    let share_se = wald.share_sd.unwrap() / (wald.completed as f64).sqrt();
    ok &= (share_mean - oracle.complier_share).abs() <= 3.0 * share_se;
    let elapsed = start.elapsed().as_secs_f64();
    ok &= elapsed < 300.0;
    report(
        7,
        "balanced process: estimator mean and complier share track the oracle",
        ok,
        &format!(
            "bias {:+.4} (3se {:.4}), share {:.4} vs {:.4}, {elapsed:.1}s",
            wald.bias,
            3.0 * mc_se,
            share_mean,
            oracle.complier_share
        ),
    );
}

#[test]
fn criterion_08_regularization_benefit_and_rate() {
    let dgp = dgp_three_instruments(2, 1000, 2024).unwrap();
    let config = McConfig {
        estimand: EstimandKind::Acl,
        estimators: vec![Estimator::VmRegularized, Estimator::VmWald],
        replications: 1000,
        master_seed: 2024,
        coverage: false,
    };
    let result = run_monte_carlo(&dgp, &config).unwrap();
    let rmse_reg = result.summaries[0].rmse;
    let rmse_wald = result.summaries[1].rmse;
    let mut ok = rmse_reg < rmse_wald;

    let mut rates = Vec::new();
    for (n, reps) in [(500usize, 1500usize), (2000, 1000), (8000, 500)] {
        let dgp = dgp_three_instruments(2, n, 7).unwrap();
        let config = McConfig {
            estimand: EstimandKind::Acl,
            estimators: vec![Estimator::VmRegularized],
            replications: reps,
            master_seed: 7,
            coverage: false,
        };
        let r = run_monte_carlo(&dgp, &config).unwrap();
        rates.push(r.summaries[0].mean_alpha.unwrap() / (n as f64).sqrt());
    }
    let rate_ok = rates[0] > rates[1] && rates[1] > rates[2];
    report(
        8,
        "sparse-cell process: penalty lowers RMSE; alpha/sqrt(n) decreases",
        ok && rate_ok,
        &format!(
            "rmse clause {} ({rmse_reg:.3} vs {rmse_wald:.3}); rate clause {} ({:.3}, {:.3}, {:.3} at n=500,2000,8000)",
            if ok { "pass" } else { "FAIL" },
            if rate_ok { "pass" } else { "FAIL" },
            rates[0],
            rates[1],
            rates[2]
        ),
    );
}

#[test]
fn criterion_09_saturated_tsls_pathology() {
    let dgp = dgp_two_instruments(1000, 2024).unwrap();
    let config = McConfig {
        estimand: EstimandKind::Acl,
        estimators: vec![Estimator::SaturatedTsls, Estimator::VmWald],
        replications: 1000,
        master_seed: 2024,
        coverage: false,
    };
    let result = run_monte_carlo(&dgp, &config).unwrap();
    let tsls = &result.summaries[0];
    let vm = &result.summaries[1];
    let mut ok = tsls.mean < -8.0 || tsls.mean > 2.0;
    let sd = (vm.rmse.powi(2) - vm.bias.powi(2)).max(0.0).sqrt();
    ok &= vm.bias.abs() <= 3.0 * sd / (vm.completed as f64).sqrt();
    report(
        9,
        "two-instrument process: saturated 2SLS leaves the effect hull, the ratio does not",
        ok,
        &format!("tsls mean {:.3}, vm mean {:.4} (oracle 1)", tsls.mean, vm.mean),
    );
}

#[test]
fn criterion_10_interval_coverage_and_bootstrap_agreement() {
    let dgp = dgp_three_instruments(1, 1000, 31).unwrap();
    let config = McConfig {
        estimand: EstimandKind::Acl,
        estimators: vec![Estimator::VmRegularized, Estimator::VmWald],
        replications: 500,
        master_seed: 31,
        coverage: true,
    };
    let result = run_monte_carlo(&dgp, &config).unwrap();
    let cov_reg = result.summaries[0].coverage.unwrap();
    let cov_wald = result.summaries[1].coverage.unwrap();
    let mut ok = (0.91..=0.98).contains(&cov_reg) && (0.91..=0.98).contains(&cov_wald);

    // Bootstrap and sandwich standard errors on one draw of the process.
    let sim = sample_dgp(&dgp, &mut ChaCha12Rng::seed_from_u64(99)).unwrap();
    let family = canonical_subsets(3);
    let gamma = build_gamma(&sim.dataset.z, &family);
    let lambda = DVector::from_element(7, 1.0);
    let fit = estimate_rho(&sim.dataset.y, &sim.dataset.d, &gamma, &lambda, 0.0).unwrap();
    let weights = weight_observations(&EstimandKind::Acl, &sim.dataset, &family).unwrap();
    let sw = sandwich_se(&sim.dataset.y, &sim.dataset.d, &gamma, weights.as_ref(), &lambda, fit.point).unwrap();
    let boot = bootstrap_se(&sim.dataset, &family, &EstimandKind::Acl, Regularization::None, 500, 7)
        .unwrap();
    let ratio = boot.std_error / sw;
    ok &= (0.75..=1.25).contains(&ratio);
    report(
        10,
        "sandwich intervals cover; bootstrap agrees with sandwich",
        ok,
        &format!("coverage reg {cov_reg:.3} wald {cov_wald:.3}; boot/sandwich {ratio:.3}"),
    );
}

#[test]
fn criterion_11_empirical_fixture_arithmetic() {
    let bounds = two_instrument_group_bounds(&PropensityTable2 {
        p00: 0.451,
        p10: 0.487,
        p01: 0.509,
        p11: 0.530,
    })
    .unwrap();
    let mut ok = (bounds.p_always - 0.451).abs() < 5e-4
        && (bounds.p_never - 0.470).abs() < 5e-4
        && (bounds.eager.lo - 0.015).abs() < 5e-4
        && (bounds.eager.hi - 0.036).abs() < 5e-4;

    // A sample whose cell propensities equal the table exactly reproduces
    // the four monotonicity differences.
    let mut z2 = Vec::new();
    let mut d2 = Vec::new();
    for (mask, ones) in [(0b00u16, 451usize), (0b01, 487), (0b10, 509), (0b11, 530)] {
        for k in 0..1000 {
            z2.extend_from_slice(&[f64::from(mask & 1), f64::from((mask >> 1) & 1)]);
            d2.push(f64::from(u8::from(k < ones)));
        }
    }
    let n2 = d2.len();
    let data2 = Dataset::new(
        DVector::zeros(n2),
        DVector::from_vec(d2),
        DMatrix::from_row_slice(n2, 2, &z2),
        None,
    )
    .unwrap();
    let mut deltas: Vec<f64> =
        vm_propensity_test(&data2).unwrap().iter().map(|r| r.delta.unwrap()).collect();
    deltas.sort_by(|a, b| b.partial_cmp(a).unwrap());
    for (got, want) in deltas.iter().zip([0.058, 0.043, 0.036, 0.021]) {
        ok &= (got - want).abs() < 5e-4;
    }

    // Full-support synthetic four-instrument data: exactly 32 records.
    let j = 4;
    let n = 1600;
    let mut rng = ChaCha12Rng::seed_from_u64(4);
    let mut z = DMatrix::zeros(n, j);
    let mut d = DVector::zeros(n);
    for i in 0..n {
        let cell = i % 16;
        for b in 0..j {
            z[(i, b)] = f64::from(u8::from(cell & (1 << b) != 0));
        }
        d[i] = f64::from(rng.random::<f64>() < 0.2 + 0.15 * cell.count_ones() as f64);
    }
    let data = Dataset::new(DVector::zeros(n), d, z, None).unwrap();
    let records = vm_propensity_test(&data).unwrap();
    ok &= records.len() == 32;
    ok &= records.iter().all(|r| r.delta.is_some());
    report(
        11,
        "group-share arithmetic to 3 decimals; 32 monotonicity records at J=4",
        ok,
        &format!("records {}, eager [{:.3}, {:.3}]", records.len(), bounds.eager.lo, bounds.eager.hi),
    );
}

/// Bounded-outcome process with sizable constant groups for the bounds check.
fn bounded_outcome_dgp(n: usize, seed: u64) -> DgpSpec {
    let groups = enumerate_compliance_groups(2).unwrap();
    let idx = |g: &ComplianceGroup| groups.iter().position(|x| x == g).unwrap();
    let z1 = ComplianceGroup::Responder(SpernerFamily::new(vec![set(&[1])]).unwrap());
    let z2 = ComplianceGroup::Responder(SpernerFamily::new(vec![set(&[2])]).unwrap());
    let eager = ComplianceGroup::Responder(SpernerFamily::new(vec![set(&[1]), set(&[2])]).unwrap());
    let reluctant = ComplianceGroup::Responder(SpernerFamily::new(vec![set(&[1, 2])]).unwrap());
    let mut group_probs = vec![0.0; groups.len()];
    let mut effects = vec![0.0; groups.len()];
    group_probs[idx(&ComplianceGroup::NeverTaker)] = 0.15;
    group_probs[idx(&ComplianceGroup::always_taker())] = 0.15;
    for (g, e, p) in [(&z1, 2.0, 0.3), (&z2, -1.0, 0.2), (&eager, 1.0, 0.1), (&reluctant, 3.0, 0.1)] {
        group_probs[idx(g)] = p;
        effects[idx(g)] = e;
    }
    DgpSpec {
        j: 2,
        group_probs,
        instrument_law: InstrumentLaw::IndependentBernoulli { p: vec![0.5, 0.5] },
        outcome: OutcomeLaw { baseline: BaselineLaw::Uniform, effects, noise: EffectNoise::None },
        n,
        seed,
    }
}

#[test]
fn criterion_12_ate_bounds() {
    let dgp = bounded_outcome_dgp(2000, 0);
    let oracle = oracle_estimand(&dgp, &EstimandKind::Acl).unwrap();
    // Outcome support: Y(0) in [0,1], effects in [-1,3] => Y in [-1,4].
    let (y_lo, y_hi) = (-1.0, 4.0);
    let mut hits = 0usize;
    let reps = 500usize;
    for rep in 0..reps {
        let mut rng = ChaCha12Rng::seed_from_u64(555);
        rng.set_stream(rep as u64 + 1);
        let sim = sample_dgp(&dgp, &mut rng).unwrap();
        let b = ate_bounds(&sim.dataset.y, &sim.dataset.d, &sim.dataset.z, y_lo, y_hi).unwrap();
        if b.ate.lo <= oracle.ate && oracle.ate <= b.ate.hi {
            hits += 1;
        }
    }
    let rate = hits as f64 / reps as f64;
    let mut ok = rate >= 0.99;

    // With no always- or never-takers the interval collapses to the point.
    let n = 400;
    let mut z = DMatrix::zeros(n, 2);
    let mut d = DVector::zeros(n);
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let cell = i % 4;
        z[(i, 0)] = f64::from(u8::from(cell & 1 != 0));
        z[(i, 1)] = f64::from(u8::from(cell & 2 != 0));
        d[i] = f64::from(u8::from(cell == 3));
        y[i] = 0.3 + 2.0 * d[i] + 0.001 * (i % 13) as f64;
    }
    let collapse = ate_bounds(&y, &d, &z, -5.0, 8.0).unwrap();
    ok &= collapse.p_always == 0.0 && collapse.p_never == 0.0;
    ok &= (collapse.ate.lo - collapse.acl).abs() < 1e-12
        && (collapse.ate.hi - collapse.acl).abs() < 1e-12;
    report(
        12,
        "worst-case intervals contain the true average effect and collapse without constant groups",
        ok,
        &format!("coverage {rate:.3} over {reps} draws (oracle {:.3})", oracle.ate),
    );
}

/// The oracle-level identity behind every built-in target vector: the
/// constructed instrument's covariance with each group's selection function
/// must equal the group's weight, exactly, for any full-support instrument
/// law. Checked by enumeration rather than sampling.
#[test]
fn lambda_targets_reproduce_group_weights_exactly() {
    for j in [2usize, 3] {
        let cells: Vec<f64> = match j {
            2 => vec![0.3, 0.25, 0.25, 0.2],
            _ => vec![0.1, 0.15, 0.05, 0.2, 0.1, 0.05, 0.15, 0.2],
        };
        let family = canonical_subsets(j);
        let k = family.len();
        // Population moments of the product regressors under `cells`.
        let gamma_of = |m: usize| -> DVector<f64> {
            DVector::from_fn(k, |l, _| {
                f64::from(family[l].is_subset_of(InstrumentSet::from_mask(m as u16)))
            })
        };
        let mut mean = DVector::zeros(k);
        for (m, &p) in cells.iter().enumerate() {
            mean += p * gamma_of(m);
        }
        let mut sigma = DMatrix::zeros(k, k);
        for (m, &p) in cells.iter().enumerate() {
            let c = gamma_of(m) - &mean;
            sigma += p * &c * c.transpose();
        }
        let chol = sigma.cholesky().unwrap();

        let mut kinds = vec![EstimandKind::Acl];
        for s in 1..=j {
            kinds.push(EstimandKind::Slate(set(&[s])));
            kinds.push(EstimandKind::Slatt(set(&[s])));
            kinds.push(EstimandKind::Slatu(set(&[s])));
            let others: Vec<usize> = (1..=j).filter(|&i| i != s).collect();
            kinds.push(EstimandKind::Pte { instrument: s, context: set(&others) });
            kinds.push(EstimandKind::Pte { instrument: s, context: InstrumentSet::EMPTY });
        }
        kinds.push(EstimandKind::Slate(set(&(1..=j).collect::<Vec<_>>())));

        for kind in kinds {
            // lambda_S = E[c(g(S), Z)] under the cell law.
            let lambda = DVector::from_fn(k, |l, _| {
                cells
                    .iter()
                    .enumerate()
                    .map(|(m, &p)| {
                        let fam = SpernerFamily::new(vec![family[l]]).unwrap();
                        let g = ComplianceGroup::Responder(fam);
                        p * group_weight(&kind, &g, InstrumentSet::from_mask(m as u16)).unwrap()
                    })
                    .sum()
            });
            let w = chol.solve(&lambda);
            for group in enumerate_compliance_groups(j).unwrap() {
                let mut cov = 0.0;
                let mut weight = 0.0;
                for (m, &p) in cells.iter().enumerate() {
                    let zm = InstrumentSet::from_mask(m as u16);
                    let h = (gamma_of(m) - &mean).dot(&w);
                    cov += p * f64::from(group.selection_value(zm)) * h;
                    weight += p * group_weight(&kind, &group, zm).unwrap();
                }
                assert!(
                    (cov - weight).abs() < 1e-10,
                    "j={j} {kind:?} {group}: cov {cov} vs weight {weight}"
                );
            }
        }
    }
}
