//! Config-driven Monte Carlo sweeps producing mean symmetric spectral
//! efficiency per scheme.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    gain_tables_closed_zf, gain_tables_mc, GainTable, NetworkCorrelation, PrecoderKind,
    PrecoderSpec,
};
use crate::channel::CorrelationSpec;
use crate::error::{invalid, Error, Result};
use crate::geometry::{
    build_hex_layout, large_scale_fading, link_angles, place_users, HexLayout, ShadowingSpec,
};
use crate::symrate::{
    average_mu, max_sym_sd, max_sym_snd, max_sym_tin, mu_grid, rs_lower_bound, DecodeFamily,
    Scheme, SymRateReport,
};

/// Noise power in watts for a level in dBm.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Per-user downlink SNR `(P / K) / sigma^2`.
pub fn rho_from_power(bs_power_watts: f64, k: usize, noise_dbm: f64) -> Result<f64> {
    if !(bs_power_watts > 0.0) || k == 0 || !noise_dbm.is_finite() {
        return Err(invalid("power and user count must be positive"));
    }
    Ok(bs_power_watts / k as f64 / dbm_to_watts(noise_dbm))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    /// Line search over the power split on every realization.
    OptimizeMu,
    /// One power split per scenario, trained on separate realizations.
    AvgMu,
}

impl RunMode {
    pub fn name(self) -> &'static str {
        match self {
            RunMode::OptimizeMu => "optimize-mu",
            RunMode::AvgMu => "avg-mu",
        }
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RunMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "optimize-mu" => Ok(RunMode::OptimizeMu),
            "avg-mu" => Ok(RunMode::AvgMu),
            _ => Err(invalid(format!(
                "unknown mode `{s}` (expected optimize-mu or avg-mu)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrelationKind {
    Uncorrelated,
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PilotSnr {
    /// `rho_p = K * uplink_watts / sigma^2` (pilot length `K`).
    UplinkPower { watts: f64 },
    /// Noise-normalized value used as is.
    Linear { value: f64 },
}

impl PilotSnr {
    pub fn rho_p(&self, k: usize, noise_dbm: f64) -> f64 {
        match *self {
            PilotSnr::UplinkPower { watts } => k as f64 * watts / dbm_to_watts(noise_dbm),
            PilotSnr::Linear { value } => value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GainModel {
    /// Closed form for uncorrelated fading with ZF, Monte Carlo otherwise.
    Auto,
    ClosedForm,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IcMode {
    /// Symmetric rate of all `LK` users: the worst pilot-sharing channel.
    Network,
    /// Average over every pilot-sharing channel.
    Mean,
    /// One channel per realization, pilot `r mod K`.
    Representative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RsFamily {
    Sub,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub num_cells: usize,
    /// Swept.
    pub users_per_cell: Vec<usize>,
    pub cell_radius: f64,
    pub min_bs_distance: f64,
    pub bs_power_watts: f64,
    /// Treat `bs_power_watts` as per-user power instead of the BS total.
    pub power_is_per_user: bool,
    pub noise_dbm: f64,
    pub fc_ghz: f64,
    pub bs_height: f64,
    pub user_height: f64,
    pub correlation: CorrelationKind,
    /// Swept; ignored (reported as 0) for uncorrelated fading.
    pub kappa: Vec<f64>,
    /// Swept.
    pub shadow_sigma_db: Vec<f64>,
    pub pilot_snr: PilotSnr,
    /// Swept.
    pub antennas: Vec<usize>,
    pub realizations: usize,
    /// Realizations used to train the stored power split in avg-mu mode.
    pub training_realizations: usize,
    pub mu_step: f64,
    pub schemes: Vec<Scheme>,
    pub seed: u64,
    pub mode: RunMode,
    pub mc_channel_samples: usize,
    pub precoder: PrecoderSpec,
    pub gain_model: GainModel,
    pub ic_mode: IcMode,
    pub rs_family: RsFamily,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            num_cells: 7,
            users_per_cell: vec![15],
            cell_radius: 400.0,
            min_bs_distance: 35.0,
            bs_power_watts: 40.0,
            power_is_per_user: false,
            noise_dbm: -101.0,
            fc_ghz: 3.5,
            bs_height: 25.0,
            user_height: 1.5,
            correlation: CorrelationKind::Exponential,
            kappa: vec![0.4],
            shadow_sigma_db: vec![0.0],
            pilot_snr: PilotSnr::UplinkPower { watts: 0.2 },
            antennas: vec![128],
            realizations: 30,
            training_realizations: 10,
            mu_step: 0.02,
            schemes: Scheme::ALL.to_vec(),
            seed: 1,
            mode: RunMode::AvgMu,
            mc_channel_samples: 500,
            precoder: PrecoderSpec::zf(),
            gain_model: GainModel::Auto,
            ic_mode: IcMode::Network,
            rs_family: RsFamily::Sub,
        }
    }
}

fn cfg_err(path: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        msg: msg.into(),
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| {
            cfg_err(
                &format!("line {} column {}", e.line(), e.column()),
                e.to_string(),
            )
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut text = String::new();
        std::fs::File::open(path)?.read_to_string(&mut text)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cell_radius", self.cell_radius),
            ("bs_power_watts", self.bs_power_watts),
            ("fc_ghz", self.fc_ghz),
            ("bs_height", self.bs_height),
            ("user_height", self.user_height),
            ("mu_step", self.mu_step),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(cfg_err(name, format!("must be positive, got {v}")));
            }
        }
        if self.num_cells == 0 || self.num_cells > crate::regions::MAX_CELLS {
            return Err(cfg_err(
                "num_cells",
                format!("must be in 1..={}", crate::regions::MAX_CELLS),
            ));
        }
        if !(self.min_bs_distance >= 0.0 && self.min_bs_distance < self.cell_radius) {
            return Err(cfg_err("min_bs_distance", "must be in [0, cell_radius)"));
        }
        if !self.noise_dbm.is_finite() {
            return Err(cfg_err("noise_dbm", "must be finite"));
        }
        if self.mu_step > 1.0 {
            return Err(cfg_err("mu_step", "must be at most 1"));
        }
        for (i, &k) in self.users_per_cell.iter().enumerate() {
            if k == 0 {
                return Err(cfg_err(&format!("users_per_cell[{i}]"), "must be positive"));
            }
        }
        for (i, &m) in self.antennas.iter().enumerate() {
            if m == 0 {
                return Err(cfg_err(&format!("antennas[{i}]"), "must be positive"));
            }
        }
        for (i, &k) in self.kappa.iter().enumerate() {
            if !(0.0..=1.0).contains(&k) {
                return Err(cfg_err(&format!("kappa[{i}]"), "must be in [0, 1]"));
            }
        }
        for (i, &s) in self.shadow_sigma_db.iter().enumerate() {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(cfg_err(
                    &format!("shadow_sigma_db[{i}]"),
                    "must be nonnegative",
                ));
            }
        }
        let sweeps = [
            ("users_per_cell", self.users_per_cell.len()),
            ("antennas", self.antennas.len()),
            ("shadow_sigma_db", self.shadow_sigma_db.len()),
            ("kappa", self.kappa.len()),
        ];
        for (name, n) in sweeps {
            if n == 0 {
                return Err(cfg_err(name, "must list at least one value"));
            }
        }
        if self.schemes.is_empty() {
            return Err(cfg_err("schemes", "must be nonempty"));
        }
        match self.pilot_snr {
            PilotSnr::UplinkPower { watts } if !(watts > 0.0) => {
                return Err(cfg_err("pilot_snr.watts", "must be positive"));
            }
            PilotSnr::Linear { value } if !(value > 0.0) => {
                return Err(cfg_err("pilot_snr.value", "must be positive"));
            }
            _ => {}
        }
        if let Some(d) = self.precoder.delta {
            if !(d > 0.0) {
                return Err(cfg_err("precoder.delta", "must be positive"));
            }
        }
        if self.mc_channel_samples == 0 && self.uses_monte_carlo() {
            return Err(cfg_err(
                "mc_channel_samples",
                "must be positive for Monte Carlo gains",
            ));
        }
        if self.gain_model == GainModel::ClosedForm
            && (self.correlation != CorrelationKind::Uncorrelated
                || self.precoder.kind != PrecoderKind::Zf)
        {
            return Err(cfg_err(
                "gain_model",
                "closed form needs uncorrelated fading and ZF",
            ));
        }
        if self.uses_closed_form() {
            for (i, &m) in self.antennas.iter().enumerate() {
                if self.users_per_cell.iter().any(|&k| m <= k) {
                    return Err(cfg_err(
                        &format!("antennas[{i}]"),
                        "closed-form ZF needs M > K",
                    ));
                }
            }
        }
        if self.mode == RunMode::AvgMu
            && self.schemes.contains(&Scheme::Rs)
            && self.training_realizations == 0
        {
            return Err(cfg_err(
                "training_realizations",
                "avg-mu mode needs training realizations",
            ));
        }
        Ok(())
    }

    pub fn uses_closed_form(&self) -> bool {
        match self.gain_model {
            GainModel::ClosedForm => true,
            GainModel::MonteCarlo => false,
            GainModel::Auto => {
                self.correlation == CorrelationKind::Uncorrelated
                    && self.precoder.kind == PrecoderKind::Zf
            }
        }
    }

    pub fn uses_monte_carlo(&self) -> bool {
        !self.uses_closed_form()
    }

    pub fn rho_dl(&self, k: usize) -> Result<f64> {
        if self.power_is_per_user {
            rho_from_power(self.bs_power_watts, 1, self.noise_dbm)
        } else {
            rho_from_power(self.bs_power_watts, k, self.noise_dbm)
        }
    }

    fn kappas(&self) -> Vec<f64> {
        match self.correlation {
            CorrelationKind::Uncorrelated => vec![0.0],
            CorrelationKind::Exponential => self.kappa.clone(),
        }
    }

    fn correlation_spec(&self, kappa: f64) -> CorrelationSpec {
        match self.correlation {
            CorrelationKind::Uncorrelated => CorrelationSpec::Uncorrelated,
            CorrelationKind::Exponential => CorrelationSpec::Exponential { kappa },
        }
    }

    fn family(&self) -> Result<DecodeFamily> {
        match self.rs_family {
            RsFamily::Sub => DecodeFamily::rs_sub(self.num_cells),
            RsFamily::Full => DecodeFamily::rs_full(self.num_cells),
        }
    }

    /// Sweep points in output order.
    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out = Vec::new();
        for &k in &self.users_per_cell {
            for kappa in self.kappas() {
                for &sigma in &self.shadow_sigma_db {
                    for &m in &self.antennas {
                        out.push(SweepPoint { k, kappa, sigma, m });
                    }
                }
            }
        }
        out
    }
}

/// Named configurations for the standard figures.
pub fn figure_preset(name: &str) -> Result<ExperimentConfig> {
    let base = ExperimentConfig::default();
    let cfg = match name {
        "fig2a" => ExperimentConfig {
            antennas: vec![32, 64, 128, 256, 512, 1024],
            ..base
        },
        "fig2b" => ExperimentConfig {
            antennas: vec![32, 64, 128, 256, 512, 1024],
            precoder: PrecoderSpec::rzf(None),
            schemes: vec![Scheme::Snd, Scheme::Rs],
            ..base
        },
        "fig3a" => ExperimentConfig {
            antennas: vec![256],
            kappa: vec![0.0, 0.2, 0.4, 0.6, 0.8],
            schemes: vec![Scheme::Tin, Scheme::Snd, Scheme::Rs],
            ..base
        },
        "fig3b" => ExperimentConfig {
            antennas: vec![256],
            users_per_cell: vec![2, 4, 6, 8, 10, 12, 15],
            schemes: vec![Scheme::Tin, Scheme::Snd, Scheme::Rs],
            ..base
        },
        "fig4" => ExperimentConfig {
            antennas: vec![256],
            shadow_sigma_db: vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
            schemes: vec![Scheme::Tin, Scheme::Snd, Scheme::Rs],
            ..base
        },
        "fig5a" => ExperimentConfig {
            correlation: CorrelationKind::Uncorrelated,
            kappa: vec![0.0],
            antennas: vec![32, 64, 128, 256, 512, 1024],
            ..base
        },
        "fig5b" => ExperimentConfig {
            correlation: CorrelationKind::Uncorrelated,
            kappa: vec![0.0],
            gain_model: GainModel::ClosedForm,
            antennas: (2..=9).map(|e| 10usize.pow(e)).collect(),
            ..base
        },
        _ => return Err(invalid(format!(
            "unknown preset `{name}` (expected fig2a, fig2b, fig3a, fig3b, fig4, fig5a or fig5b)"
        ))),
    };
    Ok(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub k: usize,
    pub kappa: f64,
    pub sigma: f64,
    pub m: usize,
}

impl SweepPoint {
    pub fn key(&self) -> String {
        crate::symrate::scenario_key(self.m, self.kappa, self.k, self.sigma)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scheme: Scheme,
    #[serde(rename = "M")]
    pub m: usize,
    pub kappa: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub sigma_shadow: f64,
    pub mean_sym_se: f64,
    pub stderr: f64,
    pub n_realizations: usize,
    pub mode: RunMode,
    pub avg_mu: Option<f64>,
}

pub const CSV_HEADER: [&str; 10] = [
    "scheme",
    "M",
    "kappa",
    "K",
    "sigma_shadow",
    "mean_sym_se",
    "stderr",
    "n_realizations",
    "mode",
    "avg_mu",
];

pub fn write_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut rd = csv::Reader::from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_owned).collect();
    if header != CSV_HEADER {
        return Err(invalid(format!("unexpected CSV header {header:?}")));
    }
    rd.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Symmetric rate of every requested scheme on one realization, combined
/// over the evaluated interference channels as set by `ic_mode`.
#[derive(Debug, Clone, PartialEq)]
pub struct RealizationResult {
    pub index: usize,
    pub se: Vec<(Scheme, f64)>,
    /// Line-search maximizers of the channels that set the RS value.
    pub search_mus: Vec<f64>,
}

impl RealizationResult {
    pub fn get(&self, scheme: Scheme) -> Option<f64> {
        self.se.iter().find(|(s, _)| *s == scheme).map(|(_, v)| *v)
    }
}

const EVAL_STREAM: u64 = 0;
const TRAIN_STREAM: u64 = 1 << 40;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_rng(seed: u64, salt: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(salt)));
    rng.set_stream(stream);
    rng
}

/// How the RS scheme chooses its power split.
#[derive(Debug, Clone)]
pub enum MuPolicy {
    Grid(Vec<f64>),
    Fixed(f64),
}

/// Gain tables of the channels evaluated on one realization.
pub fn realization_tables(
    cfg: &ExperimentConfig,
    layout: &HexLayout,
    point: &SweepPoint,
    stream: u64,
) -> Result<Vec<GainTable>> {
    let mut drop_rng = stream_rng(cfg.seed, point.k as u64, stream);
    let drop = place_users(layout, point.k, cfg.min_bs_distance, &mut drop_rng)?
        .with_heights(cfg.user_height, cfg.bs_height);
    let shadow = if point.sigma > 0.0 {
        ShadowingSpec::log_normal(point.sigma)
    } else {
        ShadowingSpec::off()
    };
    let beta = large_scale_fading(layout, &drop, cfg.fc_ghz, shadow, &mut drop_rng)?;
    let rho_dl = cfg.rho_dl(point.k)?;
    let rho_p = cfg.pilot_snr.rho_p(point.k, cfg.noise_dbm);
    let tables = if cfg.uses_closed_form() {
        gain_tables_closed_zf(&beta, rho_p, rho_dl, point.m)?
    } else {
        let angles = link_angles(layout, &drop);
        let net =
            NetworkCorrelation::new(beta, angles, cfg.correlation_spec(point.kappa), point.m)?;
        let salt = splitmix(point.m as u64) ^ (point.k as u64) << 32;
        let mut ch_rng = stream_rng(cfg.seed ^ 0x5EED, salt, stream);
        gain_tables_mc(
            &net,
            cfg.precoder,
            rho_p,
            rho_dl,
            cfg.mc_channel_samples,
            &mut ch_rng,
        )?
    };
    Ok(match cfg.ic_mode {
        IcMode::Network | IcMode::Mean => tables,
        IcMode::Representative => {
            let i = (stream as usize) % point.k;
            tables.into_iter().filter(|t| t.pilot == i).collect()
        }
    })
}

fn rs_report(
    table: &GainTable,
    snd: &SymRateReport,
    family: &DecodeFamily,
    policy: &MuPolicy,
) -> Result<SymRateReport> {
    match policy {
        MuPolicy::Grid(grid) => rs_lower_bound(table, grid, snd, family),
        MuPolicy::Fixed(mu) => rs_lower_bound(table, &[*mu], snd, family),
    }
}

fn evaluate_tables(
    tables: &[GainTable],
    schemes: &[Scheme],
    family: &DecodeFamily,
    policy: &MuPolicy,
    network: bool,
) -> Result<(Vec<(Scheme, f64)>, Vec<f64>)> {
    let need_snd = schemes
        .iter()
        .any(|s| matches!(s, Scheme::Snd | Scheme::Rs));
    let snd: Vec<SymRateReport> = if need_snd {
        tables.iter().map(max_sym_snd).collect::<Result<_>>()?
    } else {
        vec![]
    };
    let combine = |v: Vec<f64>| {
        if network {
            v.into_iter().fold(f64::INFINITY, f64::min)
        } else {
            v.iter().sum::<f64>() / v.len().max(1) as f64
        }
    };
    let mut out = Vec::with_capacity(schemes.len());
    let mut mus = Vec::new();
    for &scheme in schemes {
        let v = match scheme {
            Scheme::Tin => combine(tables.iter().map(|t| max_sym_tin(t).t_star).collect()),
            Scheme::Sd => combine(
                tables
                    .iter()
                    .map(|t| max_sym_sd(t).map(|r| r.t_star))
                    .collect::<Result<_>>()?,
            ),
            Scheme::Snd => combine(snd.iter().map(|r| r.t_star).collect()),
            Scheme::Rs if network => {
                // RS >= SND per channel, so channels whose SND value already
                // exceeds the running minimum cannot set it.
                let mut order: Vec<usize> = (0..tables.len()).collect();
                order.sort_by(|&a, &b| snd[a].t_star.total_cmp(&snd[b].t_star));
                let mut best = f64::INFINITY;
                let mut best_mu = None;
                for i in order {
                    if snd[i].t_star >= best {
                        break;
                    }
                    let r = rs_report(&tables[i], &snd[i], family, policy)?;
                    if r.t_star < best {
                        best = r.t_star;
                        best_mu = r.search_mu;
                    }
                }
                mus.extend(best_mu);
                best
            }
            Scheme::Rs => {
                let mut vals = Vec::with_capacity(tables.len());
                for (t, s) in tables.iter().zip(&snd) {
                    let r = rs_report(t, s, family, policy)?;
                    mus.extend(r.search_mu);
                    vals.push(r.t_star);
                }
                combine(vals)
            }
        };
        out.push((scheme, v));
    }
    Ok((out, mus))
}

/// Runs `count` realizations of one sweep point in parallel.
pub fn run_point(
    cfg: &ExperimentConfig,
    point: &SweepPoint,
    policy: &MuPolicy,
    first_stream: u64,
    count: usize,
) -> Result<Vec<RealizationResult>> {
    let layout = build_hex_layout(cfg.num_cells, cfg.cell_radius)?;
    let family = cfg.family()?;
    (0..count)
        .into_par_iter()
        .map(|r| {
            let tables = realization_tables(cfg, &layout, point, first_stream + r as u64)?;
            let (se, search_mus) = evaluate_tables(
                &tables,
                &cfg.schemes,
                &family,
                policy,
                cfg.ic_mode == IcMode::Network,
            )?;
            Ok(RealizationResult {
                index: r,
                se,
                search_mus,
            })
        })
        .collect()
}

/// Trains the stored power split of one sweep point.
pub fn train_mu(cfg: &ExperimentConfig, point: &SweepPoint) -> Result<f64> {
    let grid = MuPolicy::Grid(mu_grid(cfg.mu_step)?);
    let rs_only = ExperimentConfig {
        schemes: vec![Scheme::Rs],
        ..cfg.clone()
    };
    let results = run_point(
        &rs_only,
        point,
        &grid,
        TRAIN_STREAM,
        cfg.training_realizations,
    )?;
    let reports: Vec<SymRateReport> = results
        .iter()
        .flat_map(|r| r.search_mus.iter())
        .map(|&mu| SymRateReport {
            scheme: Scheme::Rs,
            t_star: 0.0,
            combo: crate::symrate::Combo::Single,
            mu: Some(mu),
            search_mu: Some(mu),
            search_value: None,
            rates: Vec::new(),
        })
        .collect();
    average_mu(&reports)
}

pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Per-point raw results, for paired comparisons.
#[derive(Debug, Clone)]
pub struct PointResult {
    pub point: SweepPoint,
    pub mu_used: Option<f64>,
    pub realizations: Vec<RealizationResult>,
}

pub fn run_sweep_detailed(cfg: &ExperimentConfig) -> Result<Vec<PointResult>> {
    cfg.validate()?;
    let mut out = Vec::new();
    if cfg.realizations == 0 {
        return Ok(out);
    }
    let wants_rs = cfg.schemes.contains(&Scheme::Rs);
    for point in cfg.points() {
        let (policy, mu_used) = match cfg.mode {
            RunMode::AvgMu if wants_rs => {
                let mu = train_mu(cfg, &point)?;
                (MuPolicy::Fixed(mu), Some(mu))
            }
            _ => (MuPolicy::Grid(mu_grid(cfg.mu_step)?), None),
        };
        let realizations = run_point(cfg, &point, &policy, EVAL_STREAM, cfg.realizations)?;
        let mu_used = mu_used.or_else(|| {
            let all: Vec<f64> = realizations
                .iter()
                .flat_map(|r| r.search_mus.iter().copied())
                .collect();
            (!all.is_empty()).then(|| all.iter().sum::<f64>() / all.len() as f64)
        });
        out.push(PointResult {
            point,
            mu_used,
            realizations,
        });
    }
    Ok(out)
}

pub fn summarize(cfg: &ExperimentConfig, results: &[PointResult]) -> Vec<ResultRow> {
    let mut rows = Vec::new();
    for pr in results {
        for &scheme in &cfg.schemes {
            let values: Vec<f64> = pr
                .realizations
                .iter()
                .filter_map(|r| r.get(scheme))
                .collect();
            let (mean, stderr) = mean_stderr(&values);
            rows.push(ResultRow {
                scheme,
                m: pr.point.m,
                kappa: pr.point.kappa,
                k: pr.point.k,
                sigma_shadow: pr.point.sigma,
                mean_sym_se: mean,
                stderr,
                n_realizations: values.len(),
                mode: cfg.mode,
                avg_mu: if scheme == Scheme::Rs {
                    pr.mu_used
                } else {
                    None
                },
            });
        }
    }
    rows
}

pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    Ok(summarize(cfg, &run_sweep_detailed(cfg)?))
}
