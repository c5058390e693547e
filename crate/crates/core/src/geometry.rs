//! Hexagonal multi-cell layout with wrap-around, user drops and large-scale
//! fading.
//!
//! Cells are flat-topped hexagons of circumradius `R`; neighbouring base
//! stations sit `sqrt(3) R` apart along the directions 30°, 90°, ..., 330°.
//! Cluster sizes that admit a hexagonal reuse pattern (`L = i² + ij + j²`,
//! e.g. 3, 4, 7, 9, 12, 13) are wrapped onto a torus using the six nearest
//! cluster translation vectors. Any other `L` falls back to the first `L`
//! cells of the hexagonal spiral around the origin with no wrap-around.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Result};

pub type Point = [f64; 2];

pub const DEFAULT_USER_HEIGHT: f64 = 1.5;
pub const DEFAULT_BS_HEIGHT: f64 = 25.0;

#[derive(Debug, Clone, PartialEq)]
pub struct HexLayout {
    pub num_cells: usize,
    pub cell_radius: f64,
    pub bs_positions: Vec<Point>,
    /// Translation vectors of the torus; always contains `[0, 0]` first.
    pub wrap_offsets: Vec<Point>,
}

/// Axial hex coordinates `(q, r)` of a cell center.
type Axial = (i64, i64);

fn axial_to_xy((q, r): Axial, radius: f64) -> Point {
    let d = 3f64.sqrt() * radius;
    let a1 = [d * 30f64.to_radians().cos(), d * 30f64.to_radians().sin()];
    let a2 = [0.0, d];
    [
        q as f64 * a1[0] + r as f64 * a2[0],
        q as f64 * a1[1] + r as f64 * a2[1],
    ]
}

/// Rotation by +60° in axial coordinates (a1 -> a2, a2 -> a2 - a1).
fn rot60((q, r): Axial) -> Axial {
    (-r, q + r)
}

fn loeschian_pair(n: usize) -> Option<(i64, i64)> {
    let n = n as i64;
    (0..=n).find_map(|i| {
        (0..=i)
            .find(|&j| i * i + i * j + j * j == n)
            .map(|j| (i, j))
    })
}

/// Hexagonal spiral of axial coordinates sorted by distance, then by angle.
fn spiral(count: usize) -> Vec<Axial> {
    let rings = (count as f64).sqrt() as i64 + 2;
    let mut pts: Vec<Axial> = Vec::new();
    for q in -rings..=rings {
        for r in -rings..=rings {
            pts.push((q, r));
        }
    }
    let key = |p: &Axial| {
        let xy = axial_to_xy(*p, 1.0);
        let mut ang = xy[1].atan2(xy[0]);
        if ang < -1e-9 {
            ang += std::f64::consts::TAU;
        }
        ((xy[0] * xy[0] + xy[1] * xy[1]) * 1e6).round() as i64 * 100_000
            + (ang * 1e4).round() as i64
    };
    pts.sort_by_key(key);
    pts
}

pub fn build_hex_layout(num_cells: usize, cell_radius: f64) -> Result<HexLayout> {
    if num_cells < 1 {
        return Err(invalid("number of cells must be at least 1"));
    }
    if !(cell_radius > 0.0) || !cell_radius.is_finite() {
        return Err(invalid(format!(
            "cell radius must be positive, got {cell_radius}"
        )));
    }
    let candidates = spiral(num_cells);
    let cluster = if num_cells > 1 {
        loeschian_pair(num_cells)
    } else {
        None
    };

    let (cells, offsets): (Vec<Axial>, Vec<Point>) = match cluster {
        Some((i, j)) => {
            let l = num_cells as i64;
            // cluster lattice spanned by A = (i, j) and rot60(A) = (-j, i + j)
            let equivalent = |a: Axial, b: Axial| {
                let (dq, dr) = (a.0 - b.0, a.1 - b.1);
                ((i + j) * dq + j * dr) % l == 0 && (-j * dq + i * dr) % l == 0
            };
            let mut cells: Vec<Axial> = Vec::with_capacity(num_cells);
            for p in candidates {
                if cells.iter().all(|&c| !equivalent(p, c)) {
                    cells.push(p);
                    if cells.len() == num_cells {
                        break;
                    }
                }
            }
            let mut offsets = vec![[0.0, 0.0]];
            let mut v = (i, j);
            for _ in 0..6 {
                offsets.push(axial_to_xy(v, cell_radius));
                v = rot60(v);
            }
            (cells, offsets)
        }
        None => (
            candidates.into_iter().take(num_cells).collect(),
            vec![[0.0, 0.0]],
        ),
    };

    Ok(HexLayout {
        num_cells,
        cell_radius,
        bs_positions: cells
            .into_iter()
            .map(|c| axial_to_xy(c, cell_radius))
            .collect(),
        wrap_offsets: offsets,
    })
}

impl HexLayout {
    /// Whether `point` lies in the hexagon of cell `cell` (boundary included).
    pub fn contains(&self, cell: usize, point: Point) -> bool {
        let c = self.bs_positions[cell];
        in_hexagon([point[0] - c[0], point[1] - c[1]], self.cell_radius)
    }

    /// Horizontal displacement from the nearest wrapped image of BS `bs` to
    /// `point`.
    pub fn wrap_vector(&self, bs: usize, point: Point) -> Point {
        let b = self.bs_positions[bs];
        self.wrap_offsets
            .iter()
            .map(|o| [point[0] - b[0] - o[0], point[1] - b[1] - o[1]])
            .min_by(|u, v| (u[0].hypot(u[1])).total_cmp(&v[0].hypot(v[1])))
            .expect("wrap offsets are never empty")
    }
}

fn in_hexagon(p: Point, radius: f64) -> bool {
    let s3 = 3f64.sqrt();
    let (x, y) = (p[0].abs(), p[1].abs());
    let eps = 1e-9 * radius;
    y <= s3 / 2.0 * radius + eps && s3 * x + y <= s3 * radius + eps
}

pub fn wrap_distance_3d(
    layout: &HexLayout,
    bs_index: usize,
    point: Point,
    user_height: f64,
    bs_height: f64,
) -> f64 {
    let v = layout.wrap_vector(bs_index, point);
    let dh = bs_height - user_height;
    (v[0] * v[0] + v[1] * v[1] + dh * dh).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserDrop {
    /// `positions[l][k]` is user `k` of cell `l`.
    pub positions: Vec<Vec<Point>>,
    pub user_height: f64,
    pub bs_height: f64,
}

impl UserDrop {
    pub fn with_heights(mut self, user_height: f64, bs_height: f64) -> Self {
        self.user_height = user_height;
        self.bs_height = bs_height;
        self
    }

    pub fn users_per_cell(&self) -> usize {
        self.positions.first().map_or(0, Vec::len)
    }
}

/// Uniform user placement inside each hexagon, rejecting points closer than
/// `min_bs_distance` to the serving BS.
pub fn place_users<R: Rng + ?Sized>(
    layout: &HexLayout,
    users_per_cell: usize,
    min_bs_distance: f64,
    rng: &mut R,
) -> Result<UserDrop> {
    let radius = layout.cell_radius;
    if !(min_bs_distance >= 0.0 && min_bs_distance < radius) {
        return Err(invalid(format!(
            "min_bs_distance {min_bs_distance} must lie in [0, cell_radius={radius})"
        )));
    }
    let half_height = 3f64.sqrt() / 2.0 * radius;
    let positions = layout
        .bs_positions
        .iter()
        .map(|c| {
            (0..users_per_cell)
                .map(|_| loop {
                    let x = rng.random_range(-radius..=radius);
                    let y = rng.random_range(-half_height..=half_height);
                    if in_hexagon([x, y], radius) && x.hypot(y) >= min_bs_distance {
                        break [c[0] + x, c[1] + y];
                    }
                })
                .collect()
        })
        .collect();
    Ok(UserDrop {
        positions,
        user_height: DEFAULT_USER_HEIGHT,
        bs_height: DEFAULT_BS_HEIGHT,
    })
}

/// 3D distance path loss in dB (gain, negative), `fc_ghz` in GHz.
pub fn path_loss_db(d3d: f64, fc_ghz: f64, user_height: f64) -> Result<f64> {
    if !(d3d > 0.0) {
        return Err(invalid(format!("distance must be positive, got {d3d}")));
    }
    if !(fc_ghz > 0.0) {
        return Err(invalid(format!(
            "carrier frequency must be positive, got {fc_ghz}"
        )));
    }
    Ok(-13.54 - 39.08 * d3d.log10() - 20.0 * fc_ghz.log10() + 0.6 * (user_height - 1.5))
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ShadowingSpec {
    pub sigma_db: f64,
    pub enabled: bool,
}

impl ShadowingSpec {
    pub fn off() -> Self {
        ShadowingSpec {
            sigma_db: 0.0,
            enabled: false,
        }
    }

    pub fn log_normal(sigma_db: f64) -> Self {
        ShadowingSpec {
            sigma_db,
            enabled: sigma_db > 0.0,
        }
    }
}

/// Large-scale fading gains `beta[j][k][l]` (BS `j`, user `k`, cell `l`),
/// linear and dimensionless. Noise power lives in the SNR parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingTensor {
    num_cells: usize,
    users_per_cell: usize,
    data: Vec<f64>,
}

impl FadingTensor {
    pub fn from_fn(
        num_cells: usize,
        users_per_cell: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(num_cells * users_per_cell * num_cells);
        for j in 0..num_cells {
            for k in 0..users_per_cell {
                for l in 0..num_cells {
                    data.push(f(j, k, l));
                }
            }
        }
        FadingTensor {
            num_cells,
            users_per_cell,
            data,
        }
    }

    #[inline]
    pub fn get(&self, bs: usize, user: usize, cell: usize) -> f64 {
        self.data[(bs * self.users_per_cell + user) * self.num_cells + cell]
    }

    pub fn num_cells(&self) -> usize {
        self.num_cells
    }

    pub fn users_per_cell(&self) -> usize {
        self.users_per_cell
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }
}

pub fn large_scale_fading<R: Rng + ?Sized>(
    layout: &HexLayout,
    drop: &UserDrop,
    fc_ghz: f64,
    shadow: ShadowingSpec,
    rng: &mut R,
) -> Result<FadingTensor> {
    let shadow_dist = if shadow.enabled && shadow.sigma_db > 0.0 {
        Some(Normal::new(0.0, shadow.sigma_db).map_err(|e| invalid(e.to_string()))?)
    } else {
        None
    };
    let num_cells = layout.num_cells;
    let k = drop.users_per_cell();
    let mut data = Vec::with_capacity(num_cells * k * num_cells);
    for j in 0..num_cells {
        for user in 0..k {
            for l in 0..num_cells {
                let p = drop.positions[l][user];
                let d = wrap_distance_3d(layout, j, p, drop.user_height, drop.bs_height);
                let mut db = path_loss_db(d, fc_ghz, drop.user_height)?;
                if let Some(dist) = &shadow_dist {
                    db += dist.sample(rng);
                }
                data.push(10f64.powf(db / 10.0));
            }
        }
    }
    Ok(FadingTensor {
        num_cells,
        users_per_cell: k,
        data,
    })
}

/// Angle of each user, seen from the nearest wrapped image of each BS,
/// relative to the common array boresight (global x-axis). Same indexing as
/// [`FadingTensor`].
pub fn link_angles(layout: &HexLayout, drop: &UserDrop) -> Vec<f64> {
    let num_cells = layout.num_cells;
    let k = drop.users_per_cell();
    let mut out = Vec::with_capacity(num_cells * k * num_cells);
    for j in 0..num_cells {
        for user in 0..k {
            for l in 0..num_cells {
                let v = layout.wrap_vector(j, drop.positions[l][user]);
                out.push(v[1].atan2(v[0]));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn seven_cell_layout_spacing() {
        let layout = build_hex_layout(7, 400.0).unwrap();
        assert_eq!(layout.bs_positions.len(), 7);
        assert_eq!(layout.bs_positions[0], [0.0, 0.0]);
        let spacing = 3f64.sqrt() * 400.0;
        assert!((spacing - 692.82).abs() < 0.01);
        for p in &layout.bs_positions[1..] {
            assert!((p[0].hypot(p[1]) - spacing).abs() < 1e-9);
        }
        assert_eq!(layout.wrap_offsets.len(), 7);
        assert_eq!(layout.wrap_offsets[0], [0.0, 0.0]);
        for o in &layout.wrap_offsets[1..] {
            assert!((o[0].hypot(o[1]) - 21f64.sqrt() * 400.0).abs() < 1e-9);
        }
    }

    #[test]
    fn adjacent_centers_are_sqrt3_r_apart() {
        for l in [3, 4, 7, 9] {
            let layout = build_hex_layout(l, 250.0).unwrap();
            let d = 3f64.sqrt() * 250.0;
            // every BS has at least one neighbour at exactly sqrt(3) R, and none closer
            for (a, pa) in layout.bs_positions.iter().enumerate() {
                let nearest = layout
                    .bs_positions
                    .iter()
                    .enumerate()
                    .filter(|(b, _)| *b != a)
                    .map(|(_, pb)| (pa[0] - pb[0]).hypot(pa[1] - pb[1]))
                    .fold(f64::INFINITY, f64::min);
                assert!((nearest - d).abs() < 1e-9, "L={l} a={a} nearest={nearest}");
            }
        }
    }

    #[test]
    fn single_cell_has_only_zero_offset() {
        let layout = build_hex_layout(1, 400.0).unwrap();
        assert_eq!(layout.bs_positions, vec![[0.0, 0.0]]);
        assert_eq!(layout.wrap_offsets, vec![[0.0, 0.0]]);
    }

    #[test]
    fn invalid_layouts_rejected() {
        assert!(build_hex_layout(0, 400.0).is_err());
        assert!(build_hex_layout(7, 0.0).is_err());
        assert!(build_hex_layout(7, -3.0).is_err());
    }

    #[test]
    fn non_loeschian_count_uses_spiral() {
        let layout = build_hex_layout(5, 100.0).unwrap();
        assert_eq!(layout.bs_positions.len(), 5);
        assert_eq!(layout.wrap_offsets, vec![[0.0, 0.0]]);
    }

    #[test]
    fn wrap_distance_examples() {
        let layout = build_hex_layout(7, 400.0).unwrap();
        let d = wrap_distance_3d(&layout, 0, [0.0, 0.0], 1.5, 25.0);
        assert!((d - 23.5).abs() < 1e-12);
        let d = wrap_distance_3d(&layout, 0, [100.0, 0.0], 1.5, 25.0);
        assert!((d - (100f64 * 100.0 + 23.5 * 23.5).sqrt()).abs() < 1e-12);
        assert!((d - 102.72).abs() < 0.005);
    }

    #[test]
    fn wrap_distance_shorter_near_edge() {
        let layout = build_hex_layout(7, 400.0).unwrap();
        // user at the far edge of cell 1, seen from the BS on the opposite side (cell 4)
        let c1 = layout.bs_positions[1];
        let far = (0..7)
            .max_by(|&a, &b| {
                let da =
                    (layout.bs_positions[a][0] - c1[0]).hypot(layout.bs_positions[a][1] - c1[1]);
                let db =
                    (layout.bs_positions[b][0] - c1[0]).hypot(layout.bs_positions[b][1] - c1[1]);
                da.total_cmp(&db)
            })
            .unwrap();
        let dir = [c1[0] / c1[0].hypot(c1[1]), c1[1] / c1[0].hypot(c1[1])];
        let p = [c1[0] + 300.0 * dir[0], c1[1] + 300.0 * dir[1]];
        let b = layout.bs_positions[far];
        let plain = ((p[0] - b[0]).powi(2) + (p[1] - b[1]).powi(2) + 23.5f64.powi(2)).sqrt();
        let brute = layout
            .wrap_offsets
            .iter()
            .map(|o| {
                ((p[0] - b[0] - o[0]).powi(2) + (p[1] - b[1] - o[1]).powi(2) + 23.5f64.powi(2))
                    .sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        let wrapped = wrap_distance_3d(&layout, far, p, 1.5, 25.0);
        assert!((wrapped - brute).abs() < 1e-9);
        assert!(wrapped < plain);
    }

    #[test]
    fn users_respect_hexagon_and_exclusion() {
        let layout = build_hex_layout(7, 400.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let drop = place_users(&layout, 15, 35.0, &mut rng).unwrap();
        let n: usize = drop.positions.iter().map(Vec::len).sum();
        assert_eq!(n, 105);
        for (l, users) in drop.positions.iter().enumerate() {
            for p in users {
                assert!(layout.contains(l, *p));
                let c = layout.bs_positions[l];
                assert!((p[0] - c[0]).hypot(p[1] - c[1]) >= 35.0);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(drop, place_users(&layout, 15, 35.0, &mut rng).unwrap());
    }

    #[test]
    fn zero_exclusion_and_invalid_exclusion() {
        let layout = build_hex_layout(7, 400.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(place_users(&layout, 4, 0.0, &mut rng).is_ok());
        assert!(place_users(&layout, 4, 400.0, &mut rng).is_err());
    }

    #[test]
    fn path_loss_values() {
        let hand = -13.54 - 39.08 * 2.0 - 20.0 * 3.5f64.log10();
        let v = path_loss_db(100.0, 3.5, 1.5).unwrap();
        assert!((v - hand).abs() < 1e-12);
        assert!((v + 102.581).abs() < 5e-4);
        let v1 = path_loss_db(1.0, 3.5, 1.5).unwrap();
        assert!((v1 + 24.421).abs() < 5e-4);
        let v2 = path_loss_db(100.0, 3.5, 2.5).unwrap();
        assert!((v2 - v - 0.6).abs() < 1e-12);
        assert!(path_loss_db(0.0, 3.5, 1.5).is_err());
        assert!(path_loss_db(-1.0, 3.5, 1.5).is_err());
    }

    #[test]
    fn fading_is_deterministic_and_monotone() {
        let layout = build_hex_layout(7, 400.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let drop = place_users(&layout, 5, 35.0, &mut rng).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(10);
        let mut r2 = ChaCha8Rng::seed_from_u64(10);
        let a = large_scale_fading(&layout, &drop, 3.5, ShadowingSpec::off(), &mut r1).unwrap();
        let b = large_scale_fading(&layout, &drop, 3.5, ShadowingSpec::log_normal(0.0), &mut r2)
            .unwrap();
        assert_eq!(a, b);
        for l in 0..7 {
            for k in 0..5 {
                let p = drop.positions[l][k];
                for j in 0..7 {
                    for jj in 0..7 {
                        let dj = wrap_distance_3d(&layout, j, p, 1.5, 25.0);
                        let djj = wrap_distance_3d(&layout, jj, p, 1.5, 25.0);
                        if dj < djj {
                            assert!(a.get(j, k, l) > a.get(jj, k, l));
                        }
                    }
                }
            }
        }
        assert!(a.values().iter().all(|&v| v > 0.0));
        let mut r3 = ChaCha8Rng::seed_from_u64(10);
        let s = large_scale_fading(&layout, &drop, 3.5, ShadowingSpec::log_normal(4.0), &mut r3)
            .unwrap();
        assert!(s.values().iter().all(|&v| v > 0.0));
        assert_ne!(s, a);
    }
}
