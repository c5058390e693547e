//! Decode-set families and the polytopes they induce.
//!
//! Cells are 0-based in code and 1-based in every printed form. Rate
//! variables of the split schemes are ordered `[R_1a, R_1b, ..., R_La, R_Lb]`.

use std::fmt;

use crate::bounds::{bound_value, layered_bound_value, GainTable, LayeredGainTable};
use crate::error::{invalid, Error, Result};

/// Cells and layer sets are bitmasks, which caps the network size.
pub const MAX_CELLS: usize = 16;

fn check_cells(l: usize) -> Result<()> {
    if l == 0 || l > MAX_CELLS {
        return Err(invalid(format!(
            "number of cells must be in 1..={MAX_CELLS}, got {l}"
        )));
    }
    Ok(())
}

/// A set of cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct CellSet(pub u32);

impl CellSet {
    pub const EMPTY: CellSet = CellSet(0);

    pub fn single(cell: usize) -> Self {
        CellSet(1 << cell)
    }

    pub fn all(l: usize) -> Self {
        CellSet(((1u64 << l) - 1) as u32)
    }

    pub fn from_cells(cells: &[usize]) -> Self {
        CellSet(cells.iter().fold(0, |m, &c| m | (1 << c)))
    }

    pub fn contains(self, cell: usize) -> bool {
        cell < 32 && self.0 >> cell & 1 == 1
    }

    pub fn is_subset(self, other: CellSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..32).filter(move |&c| self.contains(c))
    }

    /// Every subset of `self`, the empty set first.
    pub fn subsets(self) -> impl Iterator<Item = CellSet> {
        subset_masks(self.0).map(CellSet)
    }
}

impl fmt::Display for CellSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let items: Vec<String> = self.iter().map(|c| (c + 1).to_string()).collect();
        write!(f, "{{{}}}", items.join(","))
    }
}

/// All submasks of `mask` in increasing numeric order.
fn subset_masks(mask: u32) -> impl Iterator<Item = u32> {
    let mut next = Some(0u32);
    std::iter::from_fn(move || {
        let cur = next?;
        next = if cur == mask {
            None
        } else {
            Some(((cur | !mask).wrapping_add(1)) & mask)
        };
        Some(cur)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Layer {
    /// Outer layer, power fraction `mu`.
    A,
    /// Inner layer, power fraction `1 - mu`.
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LayerId {
    pub cell: usize,
    pub layer: Layer,
}

impl LayerId {
    pub fn a(cell: usize) -> Self {
        LayerId {
            cell,
            layer: Layer::A,
        }
    }

    pub fn b(cell: usize) -> Self {
        LayerId {
            cell,
            layer: Layer::B,
        }
    }

    /// Position in the split-rate vector.
    pub fn index(self) -> usize {
        2 * self.cell + matches!(self.layer, Layer::B) as usize
    }

    pub fn from_index(idx: usize) -> Self {
        let layer = if idx % 2 == 0 { Layer::A } else { Layer::B };
        LayerId {
            cell: idx / 2,
            layer,
        }
    }
}

impl fmt::Display for LayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.layer {
            Layer::A => 'a',
            Layer::B => 'b',
        };
        write!(f, "{}{}", self.cell + 1, tag)
    }
}

impl std::str::FromStr for LayerId {
    type Err = Error;

    /// Parses the 1-based form `3a` / `3b`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || invalid(format!("bad layer `{s}` (expected e.g. 2a or 2b)"));
        let (num, tag) = s.split_at(s.len().checked_sub(1).ok_or_else(bad)?);
        let cell: usize = num.parse().map_err(|_| bad())?;
        if cell == 0 || cell > MAX_CELLS {
            return Err(bad());
        }
        match tag {
            "a" => Ok(LayerId::a(cell - 1)),
            "b" => Ok(LayerId::b(cell - 1)),
            _ => Err(bad()),
        }
    }
}

/// A set of layers; bit `2c` is `(c, a)` and bit `2c + 1` is `(c, b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct LayerSet(pub u32);

impl LayerSet {
    pub const EMPTY: LayerSet = LayerSet(0);

    pub fn all(l: usize) -> Self {
        LayerSet(((1u64 << (2 * l)) - 1) as u32)
    }

    pub fn both(cell: usize) -> Self {
        LayerSet(0b11 << (2 * cell))
    }

    pub fn from_ids(ids: &[LayerId]) -> Self {
        LayerSet(ids.iter().fold(0, |m, id| m | (1 << id.index())))
    }

    pub fn contains(self, id: LayerId) -> bool {
        self.0 >> id.index() & 1 == 1
    }

    pub fn with(self, id: LayerId) -> Self {
        LayerSet(self.0 | 1 << id.index())
    }

    pub fn union(self, other: LayerSet) -> Self {
        LayerSet(self.0 | other.0)
    }

    pub fn difference(self, other: LayerSet) -> Self {
        LayerSet(self.0 & !other.0)
    }

    pub fn is_disjoint(self, other: LayerSet) -> bool {
        self.0 & other.0 == 0
    }

    pub fn is_subset(self, other: LayerSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = LayerId> {
        (0..32usize)
            .filter(move |&i| self.0 >> i & 1 == 1)
            .map(LayerId::from_index)
    }

    pub fn subsets(self) -> impl Iterator<Item = LayerSet> {
        subset_masks(self.0).map(LayerSet)
    }

    /// Coefficient vector over the `2L` split rates.
    pub fn coeffs(self, l: usize) -> Vec<u8> {
        (0..2 * l).map(|i| (self.0 >> i & 1) as u8).collect()
    }
}

impl std::str::FromStr for LayerSet {
    type Err = Error;

    /// Parses `1a,1b,2b`, optionally wrapped in braces.
    fn from_str(s: &str) -> Result<Self> {
        let inner = s.trim().trim_start_matches('{').trim_end_matches('}');
        if inner.trim().is_empty() {
            return Ok(LayerSet::EMPTY);
        }
        let ids = inner
            .split(',')
            .map(str::parse)
            .collect::<Result<Vec<LayerId>>>()?;
        Ok(LayerSet::from_ids(&ids))
    }
}

impl fmt::Display for LayerSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let items: Vec<String> = self.iter().map(|id| id.to_string()).collect();
        write!(f, "{{{}}}", items.join(","))
    }
}

/// Layers jointly decoded at one receiver; always includes both own layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DecodeSet {
    pub receiver: usize,
    pub layers: LayerSet,
}

impl DecodeSet {
    pub fn new(receiver: usize, layers: LayerSet) -> Result<Self> {
        if !LayerSet::both(receiver).is_subset(layers) {
            return Err(invalid(format!(
                "decode set {layers} at receiver {} must contain both own layers",
                receiver + 1
            )));
        }
        Ok(DecodeSet { receiver, layers })
    }
}

/// Interferer choices for one cell in the full family: nothing, the inner
/// layer, or both layers.
const RS_CHOICES: [u32; 3] = [0b00, 0b10, 0b11];

/// All `Omega` with `l in Omega`, in increasing mask order.
pub fn enumerate_snd_sets(receiver: usize, l: usize) -> Result<Vec<CellSet>> {
    check_cells(l)?;
    if receiver >= l {
        return Err(invalid(format!(
            "receiver {receiver} out of range for {l} cells"
        )));
    }
    let others = CellSet(CellSet::all(l).0 & !(1 << receiver));
    Ok(others
        .subsets()
        .map(|s| CellSet(s.0 | 1 << receiver))
        .collect())
}

/// The full rate-splitting family: own layers plus, for every other cell,
/// one of nothing / inner layer / both layers. `3^(L-1)` sets.
pub fn enumerate_rs_sets(receiver: usize, l: usize) -> Result<Vec<DecodeSet>> {
    check_cells(l)?;
    if receiver >= l {
        return Err(invalid(format!(
            "receiver {receiver} out of range for {l} cells"
        )));
    }
    let others: Vec<usize> = (0..l).filter(|&c| c != receiver).collect();
    let mut out = Vec::with_capacity(3usize.pow(others.len() as u32));
    let mut digits = vec![0usize; others.len()];
    loop {
        let mut mask = LayerSet::both(receiver).0;
        for (&c, &d) in others.iter().zip(&digits) {
            mask |= RS_CHOICES[d] << (2 * c);
        }
        out.push(DecodeSet {
            receiver,
            layers: LayerSet(mask),
        });
        // odometer, last interferer fastest
        let mut pos = digits.len();
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < 3 {
                break;
            }
            digits[pos] = 0;
        }
    }
}

/// The reduced family: own layers plus either a single interferer's inner
/// layer or all interferers' inner layers. Duplicates (at two cells the two
/// forms coincide) are dropped.
pub fn enumerate_rs_sub_sets(receiver: usize, l: usize) -> Result<Vec<DecodeSet>> {
    check_cells(l)?;
    if l < 2 {
        return Err(invalid("the reduced family needs at least two cells"));
    }
    if receiver >= l {
        return Err(invalid(format!(
            "receiver {receiver} out of range for {l} cells"
        )));
    }
    let own = LayerSet::both(receiver);
    let mut out: Vec<DecodeSet> = Vec::with_capacity(l);
    let mut all_inner = own;
    for c in (0..l).filter(|&c| c != receiver) {
        let set = DecodeSet {
            receiver,
            layers: own.with(LayerId::b(c)),
        };
        all_inner = all_inner.with(LayerId::b(c));
        out.push(set);
    }
    let full = DecodeSet {
        receiver,
        layers: all_inner,
    };
    if !out.contains(&full) {
        out.push(full);
    }
    Ok(out)
}

/// `sum_{layers in decoded} R <= I(decoded; y_receiver | conditioned)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LinearConstraint {
    pub receiver: usize,
    pub decoded: LayerSet,
    pub conditioned: LayerSet,
}

impl LinearConstraint {
    pub fn coeffs(&self, l: usize) -> Vec<u8> {
        self.decoded.coeffs(l)
    }

    pub fn rhs(&self, table: &LayeredGainTable) -> Result<f64> {
        layered_bound_value(table, self.receiver, self.decoded, self.conditioned)
    }

    /// One line of the golden dump format.
    pub fn dump(&self, l: usize) -> String {
        let coeffs: Vec<String> = self.coeffs(l).iter().map(|c| c.to_string()).collect();
        format!(
            "recv={} D={} C={} coeffs=[{}]",
            self.receiver + 1,
            self.decoded,
            self.conditioned,
            coeffs.join(",")
        )
    }
}

/// Split-rate polytope: the stacked constraints of one decode-set choice
/// per listed receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionPolytope {
    pub num_cells: usize,
    pub combo: Vec<DecodeSet>,
    pub constraints: Vec<LinearConstraint>,
}

impl RegionPolytope {
    pub fn dump(&self) -> String {
        self.constraints
            .iter()
            .map(|c| c.dump(self.num_cells) + "\n")
            .collect()
    }

    pub fn rhs(&self, table: &LayeredGainTable) -> Result<Vec<f64>> {
        self.constraints.iter().map(|c| c.rhs(table)).collect()
    }
}

/// Layer subsets kept in the modified MAC region of `decode`: each kept
/// subset contains an own layer, and for every cell whose two layers are
/// both decoded it never contains the inner layer without the outer one.
pub fn modified_mac_subsets(decode: DecodeSet) -> Vec<LayerSet> {
    let own = LayerSet::both(decode.receiver);
    let full_cells: Vec<usize> = (0..MAX_CELLS)
        .filter(|&c| LayerSet::both(c).is_subset(decode.layers))
        .collect();
    decode
        .layers
        .subsets()
        .filter(|w| !w.is_disjoint(own))
        .filter(|w| {
            full_cells
                .iter()
                .all(|&c| !(w.contains(LayerId::b(c)) && !w.contains(LayerId::a(c))))
        })
        .collect()
}

pub fn build_modified_mac_polytope(l: usize, decode: DecodeSet) -> Result<RegionPolytope> {
    check_cells(l)?;
    if decode.receiver >= l || !decode.layers.is_subset(LayerSet::all(l)) {
        return Err(invalid("decode set references a cell out of range"));
    }
    let decode = DecodeSet::new(decode.receiver, decode.layers)?;
    let constraints = modified_mac_subsets(decode)
        .into_iter()
        .map(|w| LinearConstraint {
            receiver: decode.receiver,
            decoded: w,
            conditioned: decode.layers.difference(w),
        })
        .collect();
    Ok(RegionPolytope {
        num_cells: l,
        combo: vec![decode],
        constraints,
    })
}

/// Receiver-major concatenation of per-receiver polytopes.
pub fn assemble_network_polytope(parts: &[RegionPolytope]) -> Result<RegionPolytope> {
    let l = parts
        .first()
        .map(|p| p.num_cells)
        .ok_or_else(|| invalid("no polytopes to stack"))?;
    if parts.iter().any(|p| p.num_cells != l) {
        return Err(invalid("polytopes from different network sizes"));
    }
    let mut sorted: Vec<&RegionPolytope> = parts.iter().collect();
    sorted.sort_by_key(|p| p.combo.first().map(|d| d.receiver));
    Ok(RegionPolytope {
        num_cells: l,
        combo: sorted
            .iter()
            .flat_map(|p| p.combo.iter().copied())
            .collect(),
        constraints: sorted
            .iter()
            .flat_map(|p| p.constraints.iter().copied())
            .collect(),
    })
}

/// Polytope of a full combo, one decode set per receiver.
pub fn combo_polytope(l: usize, combo: &[DecodeSet]) -> Result<RegionPolytope> {
    let parts: Vec<RegionPolytope> = combo
        .iter()
        .map(|d| build_modified_mac_polytope(l, *d))
        .collect::<Result<_>>()?;
    assemble_network_polytope(&parts)
}

/// Unsplit MAC region at one receiver: `sum_{j in omega} R_j <= bound` for
/// every nonempty `omega` of the decode set; other rates are unconstrained.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MacPolytope {
    pub receiver: usize,
    pub decode: CellSet,
    pub omegas: Vec<CellSet>,
}

impl MacPolytope {
    pub fn rhs(&self, table: &GainTable) -> Result<Vec<f64>> {
        self.omegas
            .iter()
            .map(|&w| bound_value(table, self.receiver, self.decode, w))
            .collect()
    }
}

pub fn build_mac_polytope(receiver: usize, decode: CellSet) -> Result<MacPolytope> {
    if !decode.contains(receiver) {
        return Err(invalid(format!(
            "receiver {} must belong to its decode set",
            receiver + 1
        )));
    }
    let omegas = decode.subsets().filter(|w| !w.is_empty()).collect();
    Ok(MacPolytope {
        receiver,
        decode,
        omegas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn layer_parsing() {
        let s: LayerSet = "{1a,1b,2b}".parse().unwrap();
        assert_eq!(
            s,
            LayerSet::from_ids(&[LayerId::a(0), LayerId::b(0), LayerId::b(1)])
        );
        assert_eq!(s.to_string().parse::<LayerSet>().unwrap(), s);
        assert_eq!("".parse::<LayerSet>().unwrap(), LayerSet::EMPTY);
        for bad in ["0a", "1c", "a", "17b", "1a,,"] {
            assert!(bad.parse::<LayerSet>().is_err(), "{bad}");
        }
    }

    fn ls(ids: &[LayerId]) -> LayerSet {
        LayerSet::from_ids(ids)
    }

    #[test]
    fn snd_sets() {
        let s = enumerate_snd_sets(0, 2).unwrap();
        assert_eq!(
            s,
            vec![CellSet::from_cells(&[0]), CellSet::from_cells(&[0, 1])]
        );
        for (l, n) in [(3, 4), (7, 64)] {
            for r in 0..l {
                let s = enumerate_snd_sets(r, l).unwrap();
                assert_eq!(s.len(), n);
                assert!(s.iter().all(|o| o.contains(r)));
                assert_eq!(s.iter().collect::<BTreeSet<_>>().len(), n);
            }
        }
        assert!(enumerate_snd_sets(2, 2).is_err());
    }

    #[test]
    fn mac_polytope_counts() {
        let p = build_mac_polytope(1, CellSet::single(1)).unwrap();
        assert_eq!(p.omegas, vec![CellSet::single(1)]);
        let p = build_mac_polytope(0, CellSet::from_cells(&[0, 2, 4])).unwrap();
        assert_eq!(p.omegas.len(), 7);
        assert!(build_mac_polytope(0, CellSet::single(1)).is_err());
    }

    #[test]
    fn rs_sets_three_cells() {
        use LayerId as I;
        let s = enumerate_rs_sets(0, 3).unwrap();
        let got: BTreeSet<LayerSet> = s.iter().map(|d| d.layers).collect();
        let own = [I::a(0), I::b(0)];
        let with = |extra: &[I]| ls(&[own.as_slice(), extra].concat());
        let want: BTreeSet<LayerSet> = [
            with(&[]),
            with(&[I::b(1)]),
            with(&[I::b(2)]),
            with(&[I::a(1), I::b(1)]),
            with(&[I::a(2), I::b(2)]),
            with(&[I::b(1), I::b(2)]),
            with(&[I::a(1), I::b(1), I::b(2)]),
            with(&[I::b(1), I::a(2), I::b(2)]),
            with(&[I::a(1), I::b(1), I::a(2), I::b(2)]),
        ]
        .into_iter()
        .collect();
        assert_eq!(s.len(), 9);
        assert_eq!(got, want);
        assert_eq!(enumerate_rs_sets(0, 2).unwrap().len(), 3);
        assert_eq!(enumerate_rs_sets(3, 4).unwrap().len(), 27);
        assert_eq!(enumerate_rs_sets(0, 1).unwrap().len(), 1);
    }

    #[test]
    fn rs_sub_sets() {
        for l in 2..=7 {
            for r in 0..l {
                let sub = enumerate_rs_sub_sets(r, l).unwrap();
                let full = enumerate_rs_sets(r, l).unwrap();
                let expect = if l == 2 { 1 } else { l };
                assert_eq!(sub.len(), expect);
                assert!(sub.iter().all(|d| full.contains(d)));
            }
        }
        assert!(enumerate_rs_sub_sets(0, 1).is_err());
    }

    fn dump_set(p: &RegionPolytope) -> BTreeSet<String> {
        p.dump().lines().map(str::to_owned).collect()
    }

    #[test]
    fn golden_two_cell_lists() {
        let own = LayerSet::both(0);
        let p = build_modified_mac_polytope(2, DecodeSet::new(0, own).unwrap()).unwrap();
        let want: BTreeSet<String> = [
            "recv=1 D={1a} C={1b} coeffs=[1,0,0,0]",
            "recv=1 D={1a,1b} C={} coeffs=[1,1,0,0]",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        assert_eq!(dump_set(&p), want);

        let p = build_modified_mac_polytope(2, DecodeSet::new(0, own.with(LayerId::b(1))).unwrap())
            .unwrap();
        assert_eq!(p.constraints.len(), 4);
        let p =
            build_modified_mac_polytope(2, DecodeSet::new(0, LayerSet::all(2)).unwrap()).unwrap();
        assert_eq!(p.constraints.len(), 6);
    }

    #[test]
    fn modified_count_formula() {
        // 2 * 3^p * 2^q for p fully decoded and q inner-only interferers
        for d in enumerate_rs_sets(2, 5).unwrap() {
            let (mut p, mut q) = (0u32, 0u32);
            for c in (0..5).filter(|&c| c != 2) {
                if LayerSet::both(c).is_subset(d.layers) {
                    p += 1;
                } else if d.layers.contains(LayerId::b(c)) {
                    q += 1;
                }
            }
            let poly = build_modified_mac_polytope(5, d).unwrap();
            assert_eq!(poly.constraints.len(), 2 * 3usize.pow(p) * 2usize.pow(q));
            assert!(poly
                .constraints
                .iter()
                .all(|c| c.decoded.contains(LayerId::a(2))));
        }
    }

    #[test]
    fn missing_own_layer_rejected() {
        assert!(DecodeSet::new(0, ls(&[LayerId::a(0)])).is_err());
        let bad = DecodeSet {
            receiver: 0,
            layers: ls(&[LayerId::a(0), LayerId::b(1)]),
        };
        assert!(build_modified_mac_polytope(2, bad).is_err());
    }

    #[test]
    fn assemble_is_receiver_major() {
        let tin: Vec<DecodeSet> = (0..3)
            .map(|r| DecodeSet::new(r, LayerSet::both(r)).unwrap())
            .collect();
        let mut parts: Vec<RegionPolytope> = tin
            .iter()
            .map(|d| build_modified_mac_polytope(3, *d).unwrap())
            .collect();
        parts.reverse();
        let net = assemble_network_polytope(&parts).unwrap();
        assert_eq!(net.constraints.len(), 6);
        let recv: Vec<usize> = net.constraints.iter().map(|c| c.receiver).collect();
        assert_eq!(recv, vec![0, 0, 1, 1, 2, 2]);
        assert_eq!(net, combo_polytope(3, &tin).unwrap());
    }

    #[test]
    fn display_forms() {
        assert_eq!(LayerSet::all(2).to_string(), "{1a,1b,2a,2b}");
        assert_eq!(CellSet::from_cells(&[0, 2]).to_string(), "{1,3}");
        assert_eq!(LayerSet::EMPTY.to_string(), "{}");
    }
}
