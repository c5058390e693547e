use proptest::prelude::*;
use ratesplit::bounds::GainTable;
use ratesplit::harness::{
    read_csv, summarize, write_csv, PointResult, RealizationResult, ResultRow, RunMode, SweepPoint,
};
use ratesplit::regions::{enumerate_snd_sets, CellSet};
use ratesplit::symrate::{
    all_schemes, f_mu_with, mac_combo_lp, max_sym_sd, max_sym_snd, max_sym_snd_product,
    max_sym_tin, mu_grid, report_violation, tin_rates, Combo, DecodeFamily, FmuMethod, Scheme,
    SymRateReport,
};

/// Log-uniform powers; own links tend to dominate but not always.
fn table_strategy(l: usize) -> impl Strategy<Value = GainTable> {
    (
        prop::collection::vec(-3.0f64..3.0, l * l),
        prop::collection::vec(-1.0f64..0.5, l),
    )
        .prop_map(move |(p, n)| {
            let signal = (0..l)
                .map(|rx| {
                    (0..l)
                        .map(|j| 10f64.powf(p[rx * l + j] + if rx == j { 1.0 } else { 0.0 }))
                        .collect()
                })
                .collect();
            GainTable::from_powers(signal, n.iter().map(|v| 10f64.powf(*v)).collect()).unwrap()
        })
}

fn any_table() -> impl Strategy<Value = GainTable> {
    prop_oneof![table_strategy(2), table_strategy(3)]
}

fn cap(x: f64) -> f64 {
    (1.0 + x).log2()
}

/// MAC constraint rows written out directly: `(coefficients, bound)`.
fn mac_rows(table: &GainTable, rx: usize, decode: CellSet) -> Vec<([f64; 2], f64)> {
    let p = &table.signal_power[rx];
    let undecoded: f64 = (0..2).filter(|&j| !decode.contains(j)).map(|j| p[j]).sum();
    let mut rows = Vec::new();
    for mask in 1u32..4 {
        let w = CellSet(mask);
        if !w.is_subset(decode) {
            continue;
        }
        let s: f64 = w.iter().map(|j| p[j]).sum();
        let a = [
            f64::from(w.contains(0) as u8),
            f64::from(w.contains(1) as u8),
        ];
        rows.push((a, cap(s / (table.noise_equiv[rx] + undecoded))));
    }
    rows
}

/// Max-min by scanning `R_1` on a grid of `range / 1000` steps.
fn grid_max_min(rows: &[([f64; 2], f64)]) -> (f64, f64) {
    let range = rows
        .iter()
        .filter(|(a, _)| a[0] > 0.0)
        .map(|(_, b)| *b)
        .fold(f64::INFINITY, f64::min);
    let step = range / 1000.0;
    let mut best = 0.0f64;
    for i in 0..=1000 {
        let r1 = i as f64 * step;
        let mut r2 = f64::INFINITY;
        let mut ok = true;
        for (a, b) in rows {
            let slack = b - a[0] * r1;
            if a[1] > 0.0 {
                r2 = r2.min(slack / a[1]);
            } else if slack < -1e-12 {
                ok = false;
            }
        }
        if ok {
            best = best.max(r1.min(r2));
        }
    }
    (best, step)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn scheme_ordering(table in any_table()) {
        let grid = mu_grid(0.05).unwrap();
        let fam = DecodeFamily::rs_full(table.num_cells()).unwrap();
        let [tin, sd, snd, rs] = all_schemes(&table, &grid, &fam).unwrap();
        prop_assert!(snd.t_star >= tin.t_star.max(sd.t_star) - 1e-8);
        prop_assert!(rs.t_star >= snd.t_star - 1e-8);
        for r in [&tin, &sd, &snd, &rs] {
            prop_assert!(report_violation(&table, r).unwrap() <= 1e-7, "{}", r.scheme);
        }
    }

    #[test]
    fn zero_split_full_family_is_snd(table in any_table()) {
        let fam = DecodeFamily::rs_full(table.num_cells()).unwrap();
        let f0 = f_mu_with(&table, 0.0, &fam, FmuMethod::Pruned).unwrap().value;
        let snd = max_sym_snd(&table).unwrap().t_star;
        prop_assert!((f0 - snd).abs() <= 1e-6, "{} vs {}", f0, snd);
    }

    #[test]
    fn pruned_matches_exhaustive(table in any_table(), mu in 0.0f64..=1.0) {
        let l = table.num_cells();
        for fam in [DecodeFamily::rs_full(l).unwrap(), DecodeFamily::rs_sub(l).unwrap()] {
            let a = f_mu_with(&table, mu, &fam, FmuMethod::Pruned).unwrap().value;
            let b = f_mu_with(&table, mu, &fam, FmuMethod::Exhaustive).unwrap().value;
            prop_assert!((a - b).abs() <= 1e-9 * b.max(1.0));
        }
        let sub = DecodeFamily::rs_sub(l).unwrap();
        let a = f_mu_with(&table, mu, &sub, FmuMethod::FixedPoint).unwrap().value;
        let b = f_mu_with(&table, mu, &sub, FmuMethod::Exhaustive).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-8 * b.max(1.0), "{} vs {}", a, b);
    }

    #[test]
    fn rs_bound_monotone_in_grid(table in table_strategy(2)) {
        let fam = DecodeFamily::rs_sub(2).unwrap();
        let snd = max_sym_snd(&table).unwrap();
        let coarse = ratesplit::symrate::rs_lower_bound(&table, &mu_grid(0.1).unwrap(), &snd, &fam).unwrap();
        let fine = ratesplit::symrate::rs_lower_bound(&table, &mu_grid(0.05).unwrap(), &snd, &fam).unwrap();
        prop_assert!(fine.t_star >= coarse.t_star - 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn simplex_matches_grid_search(table in table_strategy(2)) {
        let options: Vec<Vec<CellSet>> = (0..2).map(|rx| enumerate_snd_sets(rx, 2).unwrap()).collect();
        for &d0 in &options[0] {
            for &d1 in &options[1] {
                let lp = mac_combo_lp(&table, &[d0, d1]).unwrap().objective;
                let mut rows = mac_rows(&table, 0, d0);
                rows.extend(mac_rows(&table, 1, d1));
                let (grid, cell) = grid_max_min(&rows);
                prop_assert!(lp >= grid - 1e-9 && lp <= grid + cell, "lp {} grid {} cell {}", lp, grid, cell);
            }
        }
    }

    #[test]
    fn snd_decomposition_matches_product(table in table_strategy(2)) {
        let a = max_sym_snd(&table).unwrap().t_star;
        let b = max_sym_snd_product(&table).unwrap().t_star;
        prop_assert!((a - b).abs() <= 1e-8);
    }

    #[test]
    fn unsplit_points_lie_in_snd_union(table in any_table()) {
        let l = table.num_cells();
        let own: Vec<CellSet> = (0..l).map(CellSet::single).collect();
        let tin = SymRateReport {
            scheme: Scheme::Snd,
            combo: Combo::Cells(own),
            rates: tin_rates(&table),
            t_star: 0.0,
            ..max_sym_tin(&table)
        };
        let v = report_violation(&table, &tin).unwrap();
        prop_assert!(v <= 1e-9);
        let sd = max_sym_sd(&table).unwrap();
        let sd = SymRateReport { scheme: Scheme::Snd, combo: Combo::Cells(vec![CellSet::all(l); l]), ..sd };
        prop_assert!(report_violation(&table, &sd).unwrap() <= 1e-7);
    }
}

fn row_strategy() -> impl Strategy<Value = ResultRow> {
    (
        prop::sample::select(Scheme::ALL.to_vec()),
        1usize..2000,
        0.0f64..1.0,
        1usize..20,
        0.0f64..8.0,
        -10.0f64..40.0,
        0.0f64..2.0,
        0usize..50,
        prop::option::of(0.0f64..=1.0),
    )
        .prop_map(
            |(scheme, m, kappa, k, sigma, se, stderr, n, mu)| ResultRow {
                scheme,
                m,
                kappa,
                k,
                sigma_shadow: sigma,
                mean_sym_se: se,
                stderr,
                n_realizations: n,
                mode: if mu.is_some() {
                    RunMode::AvgMu
                } else {
                    RunMode::OptimizeMu
                },
                avg_mu: mu,
            },
        )
}

proptest! {
    #[test]
    fn csv_round_trip(rows in prop::collection::vec(row_strategy(), 0..12)) {
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        prop_assert_eq!(read_csv(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn aggregates_ignore_realization_order(values in prop::collection::vec(0.0f64..10.0, 1..20), seed in any::<u64>()) {
        let point = SweepPoint { k: 4, kappa: 0.0, sigma: 0.0, m: 64 };
        let make = |order: &[usize]| PointResult {
            point,
            mu_used: None,
            realizations: order
                .iter()
                .map(|&i| RealizationResult { index: i, se: vec![(Scheme::Tin, values[i])], search_mus: vec![] })
                .collect(),
        };
        let forward: Vec<usize> = (0..values.len()).collect();
        let mut shuffled = forward.clone();
        let mut s = seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let cfg = ratesplit::harness::ExperimentConfig { schemes: vec![Scheme::Tin], ..Default::default() };
        let a = summarize(&cfg, &[make(&forward)]);
        let b = summarize(&cfg, &[make(&shuffled)]);
        prop_assert_eq!(a.len(), 1);
        prop_assert!((a[0].mean_sym_se - b[0].mean_sym_se).abs() <= 1e-12);
        prop_assert!((a[0].stderr - b[0].stderr).abs() <= 1e-12);
    }
}
