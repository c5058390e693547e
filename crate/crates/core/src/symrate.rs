//! Maximum symmetric rate for TIN, SD, SND and rate splitting.
//!
//! Every region here is downward closed, so the max-min rate equals the
//! largest common rate `t` that all users can support at once. For the
//! unsplit schemes that decomposes per receiver; for rate splitting it is an
//! LP over `[R_1a, R_1b, ..., R_La, R_Lb, t]` for every decode-set combo.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bounds::{cap, GainTable, LayeredGainTable};
use crate::error::{invalid, Result};
use crate::lp::{LpProblem, LpSolution};
use crate::regions::{
    build_mac_polytope, combo_polytope, enumerate_rs_sets, enumerate_rs_sub_sets,
    enumerate_snd_sets, CellSet, DecodeSet, LayerId, LayerSet, LinearConstraint,
};

/// Slack used when comparing optimizer outputs.
pub const COMPARE_TOL: f64 = 1e-8;
/// Largest network for which the SND combo-product path may be used.
pub const SND_PRODUCT_MAX_CELLS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "TIN")]
    Tin,
    #[serde(rename = "SD")]
    Sd,
    #[serde(rename = "SND")]
    Snd,
    #[serde(rename = "RS")]
    Rs,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Tin, Scheme::Sd, Scheme::Snd, Scheme::Rs];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Tin => "TIN",
            Scheme::Sd => "SD",
            Scheme::Snd => "SND",
            Scheme::Rs => "RS",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scheme {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|sc| sc.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| invalid(format!("unknown scheme `{s}`")))
    }
}

/// The polytope a reported rate vector lives in.
#[derive(Debug, Clone, PartialEq)]
pub enum Combo {
    /// TIN and SD have a single region.
    Single,
    /// One unsplit decode set per receiver.
    Cells(Vec<CellSet>),
    /// One layered decode set per receiver.
    Layers(Vec<DecodeSet>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymRateReport {
    pub scheme: Scheme,
    pub t_star: f64,
    pub combo: Combo,
    /// Power split used by the reported point; `None` for unsplit schemes
    /// and when the SND point wins.
    pub mu: Option<f64>,
    /// Maximizer of the reduced-family line search, recorded even when the
    /// SND point wins.
    pub search_mu: Option<f64>,
    /// Best value of the reduced-family line search.
    pub search_value: Option<f64>,
    /// `L` unsplit rates, or `2L` split rates `[R_1a, R_1b, ...]`.
    pub rates: Vec<f64>,
}

impl SymRateReport {
    fn unsplit(scheme: Scheme, t: f64, combo: Combo, l: usize) -> Self {
        SymRateReport {
            scheme,
            t_star: t,
            combo,
            mu: None,
            search_mu: None,
            search_value: None,
            rates: vec![t; l],
        }
    }

    /// Per-cell total rate.
    pub fn cell_totals(&self, l: usize) -> Vec<f64> {
        if self.rates.len() == 2 * l {
            (0..l)
                .map(|c| self.rates[2 * c] + self.rates[2 * c + 1])
                .collect()
        } else {
            self.rates.clone()
        }
    }
}

/// Per-cell TIN rates `C(P_ll / (N_l + sum_{j != l} P_lj))`.
pub fn tin_rates(table: &GainTable) -> Vec<f64> {
    let l = table.num_cells();
    (0..l)
        .map(|rx| {
            let row = &table.signal_power[rx];
            let interf: f64 = (0..l).filter(|&j| j != rx).map(|j| row[j]).sum();
            cap(row[rx] / (table.noise_equiv[rx] + interf))
        })
        .collect()
}

pub fn max_sym_tin(table: &GainTable) -> SymRateReport {
    let t = tin_rates(table).into_iter().fold(f64::INFINITY, f64::min);
    SymRateReport::unsplit(Scheme::Tin, t, Combo::Single, table.num_cells())
}

/// Largest equal rate in the MAC region of `decode` at `receiver`:
/// `min_omega I_omega / |omega|`.
pub fn equal_rate_mac(table: &GainTable, receiver: usize, decode: CellSet) -> Result<f64> {
    let poly = build_mac_polytope(receiver, decode)?;
    let rhs = poly.rhs(table)?;
    Ok(poly
        .omegas
        .iter()
        .zip(rhs)
        .map(|(w, b)| b / w.len() as f64)
        .fold(f64::INFINITY, f64::min))
}

pub fn max_sym_sd(table: &GainTable) -> Result<SymRateReport> {
    let l = table.num_cells();
    let all = CellSet::all(l);
    let mut t = f64::INFINITY;
    for rx in 0..l {
        t = t.min(equal_rate_mac(table, rx, all)?);
    }
    Ok(SymRateReport::unsplit(Scheme::Sd, t, Combo::Single, l))
}

/// Per-receiver best decode set and its equal rate.
pub fn snd_receiver_best(table: &GainTable, receiver: usize) -> Result<(CellSet, f64)> {
    let l = table.num_cells();
    let mut best = (CellSet::single(receiver), f64::NEG_INFINITY);
    for omega in enumerate_snd_sets(receiver, l)? {
        let v = equal_rate_mac(table, receiver, omega)?;
        if v > best.1 {
            best = (omega, v);
        }
    }
    Ok(best)
}

pub fn max_sym_snd(table: &GainTable) -> Result<SymRateReport> {
    let l = table.num_cells();
    let mut t = f64::INFINITY;
    let mut combo = Vec::with_capacity(l);
    for rx in 0..l {
        let (omega, v) = snd_receiver_best(table, rx)?;
        combo.push(omega);
        t = t.min(v);
    }
    Ok(SymRateReport::unsplit(
        Scheme::Snd,
        t,
        Combo::Cells(combo),
        l,
    ))
}

/// Max-min LP over the intersection of one unsplit MAC polytope per
/// receiver; variables `[R_1, ..., R_L, t]`.
pub fn mac_combo_lp(table: &GainTable, combo: &[CellSet]) -> Result<LpSolution> {
    let l = table.num_cells();
    if combo.len() != l {
        return Err(invalid("need one decode set per receiver"));
    }
    let mut objective = vec![0.0; l + 1];
    objective[l] = 1.0;
    let mut lp = LpProblem::new(l + 1, objective)?;
    for (rx, &decode) in combo.iter().enumerate() {
        let poly = build_mac_polytope(rx, decode)?;
        for (w, b) in poly.omegas.iter().zip(poly.rhs(table)?) {
            let mut row = vec![0.0; l + 1];
            for c in w.iter() {
                row[c] = 1.0;
            }
            lp.push(row, b)?;
        }
    }
    for c in 0..l {
        let mut row = vec![0.0; l + 1];
        row[c] = -1.0;
        row[l] = 1.0;
        lp.push(row, 0.0)?;
    }
    lp.solve()
}

/// SND through the full product of per-receiver decode sets; exponential
/// in `L`, kept as a cross-check of the per-receiver decomposition.
pub fn max_sym_snd_product(table: &GainTable) -> Result<SymRateReport> {
    let l = table.num_cells();
    if l > SND_PRODUCT_MAX_CELLS {
        return Err(invalid(format!(
            "combo product limited to {SND_PRODUCT_MAX_CELLS} cells"
        )));
    }
    let options: Vec<Vec<CellSet>> = (0..l)
        .map(|rx| enumerate_snd_sets(rx, l))
        .collect::<Result<_>>()?;
    let mut best: Option<(f64, Vec<CellSet>, Vec<f64>)> = None;
    for idx in Odometer::new(options.iter().map(Vec::len).collect()) {
        let combo: Vec<CellSet> = idx
            .iter()
            .enumerate()
            .map(|(rx, &i)| options[rx][i])
            .collect();
        let sol = mac_combo_lp(table, &combo)?;
        if best.as_ref().is_none_or(|b| sol.objective > b.0) {
            best = Some((sol.objective, combo, sol.x[..l].to_vec()));
        }
    }
    let (t, combo, rates) = best.expect("at least one combo");
    Ok(SymRateReport {
        rates,
        ..SymRateReport::unsplit(Scheme::Snd, t, Combo::Cells(combo), l)
    })
}

/// Mixed-radix counter over a product of option lists, last digit fastest.
struct Odometer {
    radix: Vec<usize>,
    cur: Option<Vec<usize>>,
}

impl Odometer {
    fn new(radix: Vec<usize>) -> Self {
        let cur = if radix.iter().all(|&r| r > 0) {
            Some(vec![0; radix.len()])
        } else {
            None
        };
        Odometer { radix, cur }
    }
}

impl Iterator for Odometer {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.cur.clone()?;
        let cur = self.cur.as_mut().expect("checked above");
        let mut pos = cur.len();
        loop {
            if pos == 0 {
                self.cur = None;
                break;
            }
            pos -= 1;
            cur[pos] += 1;
            if cur[pos] < self.radix[pos] {
                break;
            }
            cur[pos] = 0;
        }
        Some(out)
    }
}

/// A product family of decode-set combos: receiver `l` picks one of
/// `options[l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeFamily {
    pub options: Vec<Vec<DecodeSet>>,
}

impl DecodeFamily {
    pub fn rs_full(l: usize) -> Result<Self> {
        Ok(DecodeFamily {
            options: (0..l)
                .map(|rx| enumerate_rs_sets(rx, l))
                .collect::<Result<_>>()?,
        })
    }

    /// The reduced family; for a single cell this is the lone own-layer set.
    pub fn rs_sub(l: usize) -> Result<Self> {
        if l == 1 {
            return Self::rs_full(1);
        }
        Ok(DecodeFamily {
            options: (0..l)
                .map(|rx| enumerate_rs_sub_sets(rx, l))
                .collect::<Result<_>>()?,
        })
    }

    pub fn num_cells(&self) -> usize {
        self.options.len()
    }

    /// Number of combos in the product.
    pub fn len(&self) -> usize {
        self.options.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True when no receiver decodes any interferer's outer layer.
    pub fn is_inner_only(&self) -> bool {
        self.options.iter().flatten().all(|d| {
            d.layers
                .iter()
                .all(|id| id.cell == d.receiver || id.layer == crate::regions::Layer::B)
        })
    }

    fn validate(&self) -> Result<()> {
        let l = self.num_cells();
        if l == 0 || self.is_empty() {
            return Err(invalid("decode family is empty"));
        }
        for (rx, opts) in self.options.iter().enumerate() {
            for d in opts {
                if d.receiver != rx || !d.layers.is_subset(LayerSet::all(l)) {
                    return Err(invalid(format!(
                        "decode set {} misplaced at receiver {}",
                        d.layers,
                        rx + 1
                    )));
                }
                DecodeSet::new(d.receiver, d.layers)?;
            }
        }
        Ok(())
    }
}

fn split_lp(l: usize, rows: &[(LinearConstraint, f64)]) -> Result<LpProblem> {
    let n = 2 * l + 1;
    let mut objective = vec![0.0; n];
    objective[2 * l] = 1.0;
    let mut lp = LpProblem::new(n, objective)?;
    for (c, b) in rows {
        let mut row = vec![0.0; n];
        for id in c.decoded.iter() {
            row[id.index()] = 1.0;
        }
        lp.push(row, *b)?;
    }
    for c in 0..l {
        let mut row = vec![0.0; n];
        row[2 * c] = -1.0;
        row[2 * c + 1] = -1.0;
        row[2 * l] = 1.0;
        lp.push(row, 0.0)?;
    }
    Ok(lp)
}

/// Max-min LP for one layered combo at the table's power split.
pub fn split_combo_lp(table: &LayeredGainTable, combo: &[DecodeSet]) -> Result<LpSolution> {
    let l = table.num_cells();
    if combo.len() != l {
        return Err(invalid("need one decode set per receiver"));
    }
    let poly = combo_polytope(l, combo)?;
    let rhs = poly.rhs(table)?;
    let rows: Vec<(LinearConstraint, f64)> = poly.constraints.into_iter().zip(rhs).collect();
    split_lp(l, &rows)?.solve()
}

/// Result of `f(mu, I)`: the best combo of the family at one power split.
#[derive(Debug, Clone, PartialEq)]
pub struct FmuResult {
    pub value: f64,
    pub combo: Vec<DecodeSet>,
    pub rates: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FmuMethod {
    /// Monotone fixed point plus bisection; needs an inner-only family.
    FixedPoint,
    /// Every combo, skipping those whose per-receiver bound cannot win.
    Pruned,
    /// Every combo, no skipping.
    Exhaustive,
}

/// `f(mu, I)`: fixed-point search for inner-only families, pruned
/// enumeration otherwise.
pub fn f_mu(table: &GainTable, mu: f64, family: &DecodeFamily) -> Result<FmuResult> {
    let method = if family.is_inner_only() {
        FmuMethod::FixedPoint
    } else {
        FmuMethod::Pruned
    };
    f_mu_with(table, mu, family, method)
}

pub fn f_mu_with(
    table: &GainTable,
    mu: f64,
    family: &DecodeFamily,
    method: FmuMethod,
) -> Result<FmuResult> {
    Ok(f_mu_above(table, mu, family, method, f64::NEG_INFINITY)?.expect("no incumbent to beat"))
}

/// Like [`f_mu_with`], but returns `None` when no combo beats `incumbent`
/// by more than `1e-12`.
pub fn f_mu_above(
    table: &GainTable,
    mu: f64,
    family: &DecodeFamily,
    method: FmuMethod,
    incumbent: f64,
) -> Result<Option<FmuResult>> {
    family.validate()?;
    if family.num_cells() != table.num_cells() {
        return Err(invalid(
            "family and gain table disagree on the number of cells",
        ));
    }
    let lt = table.layered(mu)?;
    match method {
        FmuMethod::FixedPoint => {
            if !family.is_inner_only() {
                return Err(invalid("fixed-point search needs an inner-only family"));
            }
            InnerOnlySearch::new(&lt, family)?.best_above(incumbent)
        }
        FmuMethod::Pruned => enumerate_family(&lt, family, true, incumbent),
        FmuMethod::Exhaustive => enumerate_family(&lt, family, false, incumbent),
    }
}

fn enumerate_family(
    lt: &LayeredGainTable,
    family: &DecodeFamily,
    prune: bool,
    incumbent: f64,
) -> Result<Option<FmuResult>> {
    let l = lt.num_cells();
    // per (receiver, option): evaluated constraints and single-receiver bound
    let mut rows: Vec<Vec<Vec<(LinearConstraint, f64)>>> = Vec::with_capacity(l);
    let mut ub: Vec<Vec<f64>> = Vec::with_capacity(l);
    for opts in &family.options {
        let mut r_rows = Vec::with_capacity(opts.len());
        let mut r_ub = Vec::with_capacity(opts.len());
        for d in opts {
            let poly = combo_polytope(l, std::slice::from_ref(d))?;
            let rhs = poly.rhs(lt)?;
            let evaluated: Vec<(LinearConstraint, f64)> =
                poly.constraints.into_iter().zip(rhs).collect();
            let bound = if prune {
                split_lp(l, &evaluated)?.solve()?.objective
            } else {
                f64::INFINITY
            };
            r_rows.push(evaluated);
            r_ub.push(bound);
        }
        rows.push(r_rows);
        ub.push(r_ub);
    }
    let mut best_value = incumbent;
    let mut best: Option<FmuResult> = None;
    for idx in Odometer::new(family.options.iter().map(Vec::len).collect()) {
        if prune {
            let bound = idx
                .iter()
                .enumerate()
                .map(|(rx, &i)| ub[rx][i])
                .fold(f64::INFINITY, f64::min);
            if bound <= best_value + 1e-12 {
                continue;
            }
        }
        let stacked: Vec<(LinearConstraint, f64)> = idx
            .iter()
            .enumerate()
            .flat_map(|(rx, &i)| rows[rx][i].iter().copied())
            .collect();
        let sol = split_lp(l, &stacked)?.solve()?;
        if sol.objective > best_value + 1e-12 {
            best_value = sol.objective;
            best = Some(FmuResult {
                value: sol.objective,
                combo: idx
                    .iter()
                    .enumerate()
                    .map(|(rx, &i)| family.options[rx][i])
                    .collect(),
                rates: sol.x[..2 * l].to_vec(),
            });
        }
    }
    Ok(best)
}

/// One option of an inner-only family at one receiver, evaluated at a
/// fixed power split. With `R_la = t - b_l` and `b_j = R_jb` its kept
/// constraints read, for every subset `S` of the decoded interferers,
/// `b_l >= t - lo[S] + sum_S b_j` and `sum_S b_j <= hi[S] - t`.
struct InnerOption {
    cells: Vec<usize>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

struct InnerOnlySearch<'a> {
    lt: &'a LayeredGainTable,
    family: &'a DecodeFamily,
    options: Vec<Vec<InnerOption>>,
}

const FP_TOL: f64 = 1e-13;
const FLOOR: usize = usize::MAX;
const MAX_PERIOD: usize = 12;

/// Which option and which affine piece (or the zero floor) a receiver
/// uses in one round; `stay` when its value does not move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Policy {
    option: usize,
    piece: usize,
    stay: bool,
}

impl InnerOption {
    fn subset_sums(&self, x: &[f64], sums: &mut Vec<f64>) {
        let n = self.lo.len();
        sums.clear();
        sums.resize(n, 0.0);
        for mask in 1..n {
            let low = mask.trailing_zeros() as usize;
            sums[mask] = sums[mask & (mask - 1)] + x[self.cells[low]];
        }
    }

    /// Value of one piece at the point whose subset sums are in `sums`.
    fn piece_value(&self, piece: usize, t: f64, sums: &[f64]) -> f64 {
        if piece == FLOOR {
            0.0
        } else {
            t - self.lo[piece] + sums[piece]
        }
    }

    /// Smallest own inner rate this option allows given the others' at
    /// `x`, with the active piece; `None` when the option is infeasible.
    /// Leaves the subset sums of `x` in `sums`.
    fn eval(&self, x: &[f64], t: f64, sums: &mut Vec<f64>) -> Option<(f64, usize)> {
        self.subset_sums(x, sums);
        let mut need = 0.0f64;
        let mut piece = FLOOR;
        for (mask, &s) in sums.iter().enumerate() {
            if s > self.hi[mask] - t + FP_TOL {
                return None;
            }
            let v = t - self.lo[mask] + s;
            if v > need {
                need = v;
                piece = mask;
            }
        }
        (need <= t + FP_TOL).then_some((need, piece))
    }
}

impl<'a> InnerOnlySearch<'a> {
    fn new(lt: &'a LayeredGainTable, family: &'a DecodeFamily) -> Result<Self> {
        let l = lt.num_cells();
        let mut options = Vec::with_capacity(l);
        for (rx, opts) in family.options.iter().enumerate() {
            let mut list = Vec::with_capacity(opts.len());
            for d in opts {
                let cells: Vec<usize> = (0..l)
                    .filter(|&c| c != rx && d.layers.contains(LayerId::b(c)))
                    .collect();
                let n = 1usize << cells.len();
                let mut lo = vec![0.0; n];
                let mut hi = vec![0.0; n];
                for mask in 0..n {
                    let s = cells
                        .iter()
                        .enumerate()
                        .filter(|(bit, _)| mask >> bit & 1 == 1)
                        .fold(LayerSet::EMPTY, |acc, (_, &c)| acc.with(LayerId::b(c)));
                    let without_b = s.with(LayerId::a(rx));
                    let with_b = without_b.with(LayerId::b(rx));
                    lo[mask] = crate::bounds::layered_bound_value(
                        lt,
                        rx,
                        without_b,
                        d.layers.difference(without_b),
                    )?;
                    hi[mask] = crate::bounds::layered_bound_value(
                        lt,
                        rx,
                        with_b,
                        d.layers.difference(with_b),
                    )?;
                }
                list.push(InnerOption { cells, lo, hi });
            }
            options.push(list);
        }
        Ok(InnerOnlySearch {
            lt,
            family,
            options,
        })
    }

    /// Current iterate `x`, the policy it induces and the iterate after
    /// one Jacobi round `x <- max(x, F(x))`. `None` when some receiver has
    /// no option left, which proves infeasibility at `t`.
    fn round(
        &self,
        x: &[f64],
        t: f64,
        sums: &mut Vec<f64>,
    ) -> Option<(Vec<f64>, Vec<Policy>, bool)> {
        let l = self.options.len();
        let mut next = x.to_vec();
        let mut policy = Vec::with_capacity(l);
        let mut changed = false;
        for rx in 0..l {
            let mut best: Option<(f64, usize, usize)> = None;
            for (oi, opt) in self.options[rx].iter().enumerate() {
                if let Some((nd, piece)) = opt.eval(x, t, sums) {
                    if best.is_none_or(|(v, _, _)| nd < v) {
                        best = Some((nd, oi, piece));
                    }
                }
            }
            let (nd, option, piece) = best?;
            let stay = nd <= x[rx];
            if nd > x[rx] + FP_TOL {
                changed = true;
            }
            next[rx] = x[rx].max(nd);
            policy.push(Policy {
                option,
                piece,
                stay,
            });
        }
        Some((next, policy, changed))
    }

    /// True when the affine map of `policy` (evaluated at `x`) still
    /// describes every round along the segment `x -> y` and bounds the true
    /// map from below there.
    fn policy_holds(
        &self,
        policy: &[Policy],
        x: &[f64],
        y: &[f64],
        t: f64,
        sums: &mut Vec<f64>,
    ) -> bool {
        for (rx, p) in policy.iter().enumerate() {
            let chosen = &self.options[rx][p.option];
            let Some((_, piece)) = chosen.eval(y, t, sums) else {
                return false;
            };
            if piece != p.piece {
                return false;
            }
            let line_y = chosen.piece_value(p.piece, t, sums);
            if p.stay {
                if line_y > y[rx] {
                    return false;
                }
                continue;
            }
            if line_y < y[rx] {
                return false;
            }
            chosen.subset_sums(x, sums);
            let line_x = chosen.piece_value(p.piece, t, sums);
            for (oi, other) in self.options[rx].iter().enumerate() {
                if oi == p.option || other.eval(x, t, sums).is_none() {
                    continue;
                }
                // values of every piece at both ends; one piece must stay above
                other.subset_sums(x, sums);
                let at_x: Vec<f64> = (0..other.lo.len())
                    .map(|m| other.piece_value(m, t, sums))
                    .collect();
                other.subset_sums(y, sums);
                let dominated = (0..other.lo.len()).any(|m| {
                    at_x[m] >= line_x - FP_TOL && other.piece_value(m, t, sums) >= line_y - FP_TOL
                }) || (line_x <= FP_TOL && line_y <= FP_TOL);
                if !dominated {
                    return false;
                }
            }
        }
        true
    }

    /// Least fixed point of the best-response map at common rate `t`.
    ///
    /// Plain Kleene iteration creeps when `t` sits just above the threshold
    /// of a cyclic constraint chain: the iterates drift by a tiny constant
    /// per period. Once policies and per-period drift repeat, the drift is
    /// extrapolated as far as every policy of the period provably stays in
    /// force, so the extrapolated point is still a Kleene iterate.
    fn feasible(&self, t: f64) -> Option<Vec<usize>> {
        let l = self.options.len();
        let mut x = vec![0.0; l];
        let mut sums = Vec::new();
        let mut history: Vec<(Vec<f64>, Vec<Policy>)> = Vec::new();
        for _ in 0..20_000 {
            let (next, policy, changed) = self.round(&x, t, &mut sums)?;
            if !changed {
                return Some(policy.iter().map(|p| p.option).collect());
            }
            history.push((x, policy));
            if history.len() > 3 * MAX_PERIOD {
                history.remove(0);
            }
            x = next;
            if let Some(jumped) = self.try_jump(&history, t, &mut sums) {
                x = jumped;
                history.clear();
            }
        }
        None
    }

    fn try_jump(
        &self,
        history: &[(Vec<f64>, Vec<Policy>)],
        t: f64,
        sums: &mut Vec<f64>,
    ) -> Option<Vec<f64>> {
        let n = history.len();
        let diff = |i: usize, j: usize| -> Vec<f64> {
            history[i]
                .0
                .iter()
                .zip(&history[j].0)
                .map(|(u, v)| u - v)
                .collect()
        };
        let period = (1..=MAX_PERIOD.min(n / 3)).find(|&p| {
            (n - p..n).all(|i| {
                if history[i].1 != history[i - p].1 || history[i].1 != history[i - 2 * p].1 {
                    return false;
                }
                let (d1, d2) = (diff(i, i - p), diff(i - p, i - 2 * p));
                let scale = d1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                d1.iter()
                    .zip(&d2)
                    .all(|(a, b)| (a - b).abs() <= 1e-9 * scale)
            }) && diff(n - 1, n - 1 - p).iter().any(|v| *v > 0.0)
        })?;
        let phases: Vec<(usize, Vec<f64>)> =
            (n - period..n).map(|i| (i, diff(i, i - period))).collect();
        let at = |i: usize, d: &[f64], k: f64| -> Vec<f64> {
            history[i].0.iter().zip(d).map(|(b, d)| b + k * d).collect()
        };
        let holds = |k: f64, sums: &mut Vec<f64>| {
            phases.iter().all(|(i, d)| {
                self.policy_holds(&history[*i].1, &history[*i].0, &at(*i, d, k), t, sums)
            })
        };
        let mut ok = 1.0;
        let mut k = 2.0;
        while k <= 1e15 && holds(k, sums) {
            ok = k;
            k *= 2.0;
        }
        if ok < 2.0 {
            return None;
        }
        let mut bad = k;
        while bad - ok > 1.0 {
            let mid = (0.5 * (ok + bad)).floor();
            if holds(mid, sums) {
                ok = mid;
            } else {
                bad = mid;
            }
        }
        let (last, d) = phases.last().expect("period is at least one");
        Some(at(*last, d, ok))
    }

    fn best_above(&self, incumbent: f64) -> Result<Option<FmuResult>> {
        let l = self.options.len();
        let mut lo = incumbent.max(0.0);
        let mut lo_choice =
            match self.feasible(lo + if incumbent.is_finite() { 1e-12 } else { 0.0 }) {
                Some(c) => c,
                None => return Ok(None),
            };
        let mut hi = (0..l)
            .map(|rx| {
                self.options[rx]
                    .iter()
                    .map(|o| o.hi[0])
                    .fold(0.0f64, f64::max)
            })
            .fold(f64::INFINITY, f64::min);
        if let Some(c) = self.feasible(hi) {
            lo = hi;
            lo_choice = c;
        }
        while hi - lo > 1e-11 * hi.max(1.0) {
            let mid = 0.5 * (lo + hi);
            match self.feasible(mid) {
                Some(c) => {
                    lo = mid;
                    lo_choice = c;
                }
                None => hi = mid,
            }
        }
        let combo: Vec<DecodeSet> = lo_choice
            .iter()
            .enumerate()
            .map(|(rx, &i)| self.family.options[rx][i])
            .collect();
        let sol = split_combo_lp(self.lt, &combo)?;
        if sol.objective <= incumbent + 1e-12 {
            return Ok(None);
        }
        Ok(Some(FmuResult {
            value: sol.objective,
            combo,
            rates: sol.x[..2 * l].to_vec(),
        }))
    }
}

/// Uniform grid `0, step, ..., 1` (the last point is exactly 1).
pub fn mu_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(invalid(format!("grid step must be in (0, 1], got {step}")));
    }
    let n = (1.0 / step - 1e-9).ceil() as usize;
    Ok((0..=n).map(|i| (i as f64 * step).min(1.0)).collect())
}

/// `max{t_snd, max_mu f(mu, family)}` over the grid.
pub fn rs_lower_bound(
    table: &GainTable,
    grid: &[f64],
    snd: &SymRateReport,
    family: &DecodeFamily,
) -> Result<SymRateReport> {
    if grid.is_empty() {
        return Err(invalid("empty power-split grid"));
    }
    let method = if family.is_inner_only() {
        FmuMethod::FixedPoint
    } else {
        FmuMethod::Pruned
    };
    let mut best: Option<(f64, FmuResult)> = None;
    for &mu in grid {
        let incumbent = best.as_ref().map_or(f64::NEG_INFINITY, |(_, r)| r.value);
        if let Some(r) = f_mu_above(table, mu, family, method, incumbent)? {
            best = Some((mu, r));
        }
    }
    let (mu, r) = best.expect("first grid point always yields a value");
    if r.value >= snd.t_star {
        Ok(SymRateReport {
            scheme: Scheme::Rs,
            t_star: r.value,
            combo: Combo::Layers(r.combo),
            mu: Some(mu),
            search_mu: Some(mu),
            search_value: Some(r.value),
            rates: r.rates,
        })
    } else {
        Ok(SymRateReport {
            scheme: Scheme::Rs,
            t_star: snd.t_star,
            combo: snd.combo.clone(),
            mu: None,
            search_mu: Some(mu),
            search_value: Some(r.value),
            rates: snd.rates.clone(),
        })
    }
}

/// The bound at a single stored power split.
pub fn rs_lower_bound_avgmu(
    table: &GainTable,
    mu: f64,
    snd: &SymRateReport,
    family: &DecodeFamily,
) -> Result<SymRateReport> {
    rs_lower_bound(table, &[mu.clamp(0.0, 1.0)], snd, family)
}

/// Mean of the line-search maximizers, clamped to `[0, 1]`.
pub fn average_mu(reports: &[SymRateReport]) -> Result<f64> {
    let mus: Vec<f64> = reports.iter().filter_map(|r| r.search_mu).collect();
    if mus.is_empty() {
        return Err(invalid("no training reports with a power split"));
    }
    Ok((mus.iter().sum::<f64>() / mus.len() as f64).clamp(0.0, 1.0))
}

/// Trained power splits keyed by scenario (see [`scenario_key`]).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AvgMuTable {
    pub entries: BTreeMap<String, f64>,
}

impl AvgMuTable {
    pub fn insert(&mut self, key: String, reports: &[SymRateReport]) -> Result<f64> {
        let mu = average_mu(reports)?;
        self.entries.insert(key, mu);
        Ok(mu)
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.entries.get(key).copied()
    }
}

pub fn scenario_key(m: usize, kappa: f64, k: usize, sigma_shadow: f64) -> String {
    format!("M={m};kappa={kappa};K={k};sigma={sigma_shadow}")
}

/// All four schemes on one gain table, in [`Scheme::ALL`] order.
pub fn all_schemes(
    table: &GainTable,
    grid: &[f64],
    family: &DecodeFamily,
) -> Result<[SymRateReport; 4]> {
    let tin = max_sym_tin(table);
    let sd = max_sym_sd(table)?;
    let snd = max_sym_snd(table)?;
    let rs = rs_lower_bound(table, grid, &snd, family)?;
    Ok([tin, sd, snd, rs])
}

/// Checks `rates` against every constraint of the reported region.
pub fn report_violation(table: &GainTable, report: &SymRateReport) -> Result<f64> {
    let l = table.num_cells();
    let totals = report.cell_totals(l);
    let mut worst = totals
        .iter()
        .map(|v| report.t_star - v)
        .fold(f64::NEG_INFINITY, f64::max);
    worst = worst.max(
        report
            .rates
            .iter()
            .map(|v| -v)
            .fold(f64::NEG_INFINITY, f64::max),
    );
    match &report.combo {
        Combo::Single => {
            if report.scheme == Scheme::Tin {
                for (v, r) in report.rates.iter().zip(tin_rates(table)) {
                    worst = worst.max(v - r);
                }
            } else {
                let all = CellSet::all(l);
                for rx in 0..l {
                    let poly = build_mac_polytope(rx, all)?;
                    for (w, b) in poly.omegas.iter().zip(poly.rhs(table)?) {
                        worst = worst.max(w.iter().map(|c| report.rates[c]).sum::<f64>() - b);
                    }
                }
            }
        }
        Combo::Cells(combo) => {
            for (rx, &decode) in combo.iter().enumerate() {
                let poly = build_mac_polytope(rx, decode)?;
                for (w, b) in poly.omegas.iter().zip(poly.rhs(table)?) {
                    worst = worst.max(w.iter().map(|c| report.rates[c]).sum::<f64>() - b);
                }
            }
        }
        Combo::Layers(combo) => {
            let lt = table.layered(
                report
                    .mu
                    .ok_or_else(|| invalid("layered report without power split"))?,
            )?;
            let poly = combo_polytope(l, combo)?;
            for (c, b) in poly.constraints.iter().zip(poly.rhs(&lt)?) {
                worst = worst.max(
                    c.decoded
                        .iter()
                        .map(|id| report.rates[id.index()])
                        .sum::<f64>()
                        - b,
                );
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(p: Vec<Vec<f64>>) -> GainTable {
        let l = p.len();
        GainTable::from_powers(p, vec![1.0; l]).unwrap()
    }

    fn sym2(d: f64, c: f64) -> GainTable {
        table(vec![vec![d, c], vec![c, d]])
    }

    #[test]
    fn tin_examples() {
        let t = sym2(4.0, 2.0);
        let r = max_sym_tin(&t);
        assert!((r.t_star - cap(4.0 / 3.0)).abs() < 1e-15);
        let single = table(vec![vec![7.0]]);
        assert!((max_sym_tin(&single).t_star - 3.0).abs() < 1e-15);
    }

    #[test]
    fn sd_toy() {
        // single-user bounds C(3) = 2, sum bound C(6) = log2 7
        let t = sym2(3.0, 3.0);
        let r = max_sym_sd(&t).unwrap();
        let want = (cap(3.0)).min(cap(6.0) / 2.0);
        assert!((r.t_star - want).abs() < 1e-15);
    }

    #[test]
    fn snd_beats_tin_and_sd_on_strong_cross() {
        let t = table(vec![vec![10.0, 30.0], vec![0.5, 10.0]]);
        let tin = max_sym_tin(&t).t_star;
        let sd = max_sym_sd(&t).unwrap().t_star;
        let snd = max_sym_snd(&t).unwrap().t_star;
        assert!(snd > tin + 1e-6 && snd > sd + 1e-6, "{tin} {sd} {snd}");
        let prod = max_sym_snd_product(&t).unwrap().t_star;
        assert!((snd - prod).abs() < 1e-9);
    }

    #[test]
    fn grid_points() {
        let g = mu_grid(0.02).unwrap();
        assert_eq!(g.len(), 51);
        assert_eq!(g[0], 0.0);
        assert_eq!(*g.last().unwrap(), 1.0);
        assert_eq!(mu_grid(1.0).unwrap(), vec![0.0, 1.0]);
        assert_eq!(mu_grid(0.3).unwrap().len(), 5);
        assert!(mu_grid(0.0).is_err());
    }

    #[test]
    fn f_mu_at_one_is_tin() {
        let t = table(vec![
            vec![5.0, 2.0, 1.0],
            vec![1.5, 6.0, 0.5],
            vec![2.0, 3.0, 4.0],
        ]);
        let fam = DecodeFamily::rs_sub(3).unwrap();
        let f = f_mu(&t, 1.0, &fam).unwrap();
        assert!((f.value - max_sym_tin(&t).t_star).abs() < 1e-8);
    }

    #[test]
    fn f_mu_at_zero_full_is_snd_two_cells() {
        let t = table(vec![vec![4.0, 6.0], vec![1.0, 3.0]]);
        let fam = DecodeFamily::rs_full(2).unwrap();
        let f = f_mu(&t, 0.0, &fam).unwrap();
        let snd = max_sym_snd(&t).unwrap().t_star;
        assert!((f.value - snd).abs() < 1e-8, "{} {snd}", f.value);
    }

    #[test]
    fn methods_agree() {
        let t = table(vec![
            vec![5.0, 2.0, 1.0, 0.7],
            vec![1.5, 6.0, 0.5, 2.0],
            vec![2.0, 3.0, 4.0, 1.0],
            vec![0.3, 1.1, 2.2, 3.3],
        ]);
        let fam = DecodeFamily::rs_sub(4).unwrap();
        for mu in [0.0, 0.2, 0.55, 0.9] {
            let a = f_mu_with(&t, mu, &fam, FmuMethod::FixedPoint)
                .unwrap()
                .value;
            let b = f_mu_with(&t, mu, &fam, FmuMethod::Pruned).unwrap().value;
            let c = f_mu_with(&t, mu, &fam, FmuMethod::Exhaustive)
                .unwrap()
                .value;
            assert!((a - c).abs() < 1e-8, "{mu}: {a} {c}");
            assert!((b - c).abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_point_rejects_outer_decoding() {
        let t = sym2(2.0, 1.0);
        let fam = DecodeFamily::rs_full(2).unwrap();
        assert!(!fam.is_inner_only());
        assert!(f_mu_with(&t, 0.5, &fam, FmuMethod::FixedPoint).is_err());
    }

    #[test]
    fn lower_bound_structure() {
        let t = table(vec![
            vec![5.0, 8.0, 1.0],
            vec![1.5, 6.0, 7.5],
            vec![9.0, 3.0, 4.0],
        ]);
        let fam = DecodeFamily::rs_sub(3).unwrap();
        let grid = mu_grid(0.1).unwrap();
        let snd = max_sym_snd(&t).unwrap();
        let rs = rs_lower_bound(&t, &grid, &snd, &fam).unwrap();
        assert!(rs.t_star >= snd.t_star);
        for &mu in &grid {
            assert!(rs.t_star >= f_mu(&t, mu, &fam).unwrap().value - 1e-12);
        }
        assert!(report_violation(&t, &rs).unwrap() < 1e-9);
    }

    #[test]
    fn average_mu_cases() {
        let mk = |mu| SymRateReport {
            scheme: Scheme::Rs,
            t_star: 1.0,
            combo: Combo::Single,
            mu: Some(mu),
            search_mu: Some(mu),
            search_value: Some(1.0),
            rates: vec![],
        };
        assert_eq!(average_mu(&[mk(0.34)]).unwrap(), 0.34);
        assert!((average_mu(&[mk(0.2), mk(0.4)]).unwrap() - 0.3).abs() < 1e-15);
        assert!(average_mu(&[]).is_err());
        let mut tab = AvgMuTable::default();
        tab.insert(scenario_key(128, 0.0, 15, 0.0), &[mk(0.5)])
            .unwrap();
        assert_eq!(tab.get("M=128;kappa=0;K=15;sigma=0"), Some(0.5));
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert!("XYZ".parse::<Scheme>().is_err());
    }
}
