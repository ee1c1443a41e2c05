//! Dyadic index encodings and grid bookkeeping for quantized trains.
//!
//! A layout fixes the spatial dimension d, the dyadic level L (mesh 2^-L),
//! one of four site orderings, the space (physical grid G_L or the dual
//! Fourier grid), and the value arity carried by a leading site (none for
//! scalars, d for vectors, d*d for matrices).
//!
//! Site conventions: a physical site holding scale l of coordinate c carries
//! bit (L - l) of the grid integer j_c (so scale 1 is the most significant
//! digit of the dyadic expansion x = sum 2^-l x_l). In Fourier space the same
//! site carries bit (l - 1) of the DFT integer n_c, which realizes the
//! per-coordinate scale reversal between the physical and Fourier orderings.
//! Frequencies are k = 2 pi m with m = n for n < 2^(L-1) and m = n - 2^L
//! otherwise, so the leading Fourier bit is the sign bit.

use crate::scalar::Scalar;
use crate::tt::{TensorTrain, TtError};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum LayoutError {
    #[error("point is off the grid: {0}")]
    OffGrid(String),
    #[error("incompatible layouts: {0}")]
    Incompatible(String),
    #[error("train does not match layout: {0}")]
    TrainMismatch(String),
    #[error(transparent)]
    Tt(#[from] TtError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Format {
    /// x_1..x_L, y_1..y_L (, z_1..z_L)
    X1X2Y1Y2,
    /// x_1..x_L, y_L..y_1 (, z_1..z_L)
    X1X2Y2Y1,
    /// x_L..x_1, y_1..y_L (, z_L..z_1)
    X2X1Y1Y2,
    /// interleaved by scale: x_1, y_1 (, z_1), x_2, y_2 (, z_2), ...
    X1Y1,
}

impl Format {
    pub fn tag(&self) -> &'static str {
        match self {
            Format::X1X2Y1Y2 => "x1x2_y1y2",
            Format::X1X2Y2Y1 => "x1x2_y2y1",
            Format::X2X1Y1Y2 => "x2x1_y1y2",
            Format::X1Y1 => "x1y1",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "x1x2_y1y2" => Some(Format::X1X2Y1Y2),
            "x1x2_y2y1" => Some(Format::X1X2Y2Y1),
            "x2x1_y1y2" => Some(Format::X2X1Y1Y2),
            "x1y1" => Some(Format::X1Y1),
            _ => None,
        }
    }

    pub const ALL: [Format; 4] = [Format::X1X2Y1Y2, Format::X1X2Y2Y1, Format::X2X1Y1Y2, Format::X1Y1];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Space {
    Physical,
    Fourier,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arity {
    Scalar,
    Vector,
    Matrix,
}

/// Value carried by a field at one grid point.
#[derive(Clone, Debug)]
pub enum Value<S: Scalar> {
    Scalar(S),
    Vector(Vec<S>),
    Matrix(Array2<S>),
}

impl<S: Scalar> Value<S> {
    pub fn scalar(&self) -> S {
        match self {
            Value::Scalar(v) => *v,
            _ => panic!("expected scalar value"),
        }
    }
    pub fn vector(&self) -> &[S] {
        match self {
            Value::Vector(v) => v,
            _ => panic!("expected vector value"),
        }
    }
    pub fn matrix(&self) -> &Array2<S> {
        match self {
            Value::Matrix(m) => m,
            _ => panic!("expected matrix value"),
        }
    }
}

/// A point of the physical grid G_L, as per-coordinate integers j in [0, 2^L).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridPoint(pub [u64; 3]);

/// A point of the dual Fourier grid, as per-coordinate signed integers m in
/// [-2^(L-1), 2^(L-1)); the frequency is k = 2 pi m.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FourierIndex(pub [i64; 3]);

impl GridPoint {
    pub fn from_coords(x: &[f64], level: usize) -> Result<Self, LayoutError> {
        let n = 1u64 << level;
        let mut j = [0u64; 3];
        for (c, &xc) in x.iter().enumerate() {
            let xf = xc.rem_euclid(1.0);
            let jf = xf * n as f64;
            let ji = jf.round();
            if (jf - ji).abs() > 1e-9 * n as f64 {
                return Err(LayoutError::OffGrid(format!("coordinate {xc} not on 2^-{level} grid")));
            }
            j[c] = (ji as u64) % n;
        }
        Ok(GridPoint(j))
    }

    pub fn coords(&self, d: usize, level: usize) -> Vec<f64> {
        let h = 2f64.powi(-(level as i32));
        (0..d).map(|c| self.0[c] as f64 * h).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QttLayout {
    pub d: usize,
    pub level: usize,
    pub format: Format,
    pub space: Space,
    pub arity: Arity,
}

impl QttLayout {
    pub fn new(d: usize, level: usize, format: Format, space: Space, arity: Arity) -> Self {
        assert!(d == 2 || d == 3 || d == 1, "spatial dimension must be 1, 2 or 3");
        assert!(level >= 1);
        Self { d, level, format, space, arity }
    }

    pub fn value_dim(&self) -> usize {
        match self.arity {
            Arity::Scalar => 0,
            Arity::Vector => self.d,
            Arity::Matrix => self.d * self.d,
        }
    }

    pub fn has_value_site(&self) -> bool {
        self.arity != Arity::Scalar
    }

    pub fn num_spatial_sites(&self) -> usize {
        self.d * self.level
    }

    pub fn num_sites(&self) -> usize {
        self.num_spatial_sites() + usize::from(self.has_value_site())
    }

    pub fn site_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.num_sites());
        if self.has_value_site() {
            dims.push(self.value_dim());
        }
        dims.extend(std::iter::repeat(2).take(self.num_spatial_sites()));
        dims
    }

    pub fn with(&self, space: Space, arity: Arity) -> Self {
        Self { space, arity, ..*self }
    }

    /// (coordinate, physical scale in 1..=L) carried by each spatial site,
    /// in chain order. The Fourier role of the same site is scale L+1-l.
    pub fn spatial_roles(&self) -> Vec<(usize, usize)> {
        let l = self.level;
        let d = self.d;
        let asc = |c: usize| (1..=l).map(move |s| (c, s));
        let desc = |c: usize| (1..=l).rev().map(move |s| (c, s));
        match self.format {
            Format::X1X2Y1Y2 => (0..d).flat_map(|c| asc(c).collect::<Vec<_>>()).collect(),
            Format::X1X2Y2Y1 => (0..d)
                .flat_map(|c| {
                    if c % 2 == 1 {
                        desc(c).collect::<Vec<_>>()
                    } else {
                        asc(c).collect::<Vec<_>>()
                    }
                })
                .collect(),
            Format::X2X1Y1Y2 => (0..d)
                .flat_map(|c| {
                    if c % 2 == 0 {
                        desc(c).collect::<Vec<_>>()
                    } else {
                        asc(c).collect::<Vec<_>>()
                    }
                })
                .collect(),
            Format::X1Y1 => (1..=l).flat_map(|s| (0..d).map(move |c| (c, s))).collect(),
        }
    }

    /// Spatial bits for a physical grid point, in chain order (no value site).
    pub fn encode_physical(&self, p: &GridPoint) -> Vec<usize> {
        assert_eq!(self.space, Space::Physical);
        let l = self.level;
        self.spatial_roles()
            .iter()
            .map(|&(c, scale)| ((p.0[c] >> (l - scale)) & 1) as usize)
            .collect()
    }

    /// Spatial bits for a Fourier index, in chain order.
    pub fn encode_fourier(&self, k: &FourierIndex) -> Result<Vec<usize>, LayoutError> {
        assert_eq!(self.space, Space::Fourier);
        let l = self.level;
        let n = 1i64 << l;
        let half = n >> 1;
        let mut ints = [0u64; 3];
        for c in 0..self.d {
            let m = k.0[c];
            if m < -half || m >= half {
                return Err(LayoutError::OffGrid(format!("frequency index {m} outside [-2^{}..2^{})", l - 1, l - 1)));
            }
            ints[c] = m.rem_euclid(n) as u64;
        }
        Ok(self
            .spatial_roles()
            .iter()
            .map(|&(c, scale)| {
                // Fourier scale l' = L+1-scale carries bit (L-l') = scale-1 of n
                ((ints[c] >> (scale - 1)) & 1) as usize
            })
            .collect())
    }

    pub fn decode_physical(&self, bits: &[usize]) -> GridPoint {
        assert_eq!(self.space, Space::Physical);
        let l = self.level;
        let mut j = [0u64; 3];
        for (&(c, scale), &b) in self.spatial_roles().iter().zip(bits) {
            j[c] |= (b as u64) << (l - scale);
        }
        GridPoint(j)
    }

    pub fn decode_fourier(&self, bits: &[usize]) -> FourierIndex {
        assert_eq!(self.space, Space::Fourier);
        let l = self.level;
        let n = 1i64 << l;
        let half = n >> 1;
        let mut ints = [0i64; 3];
        for (&(c, scale), &b) in self.spatial_roles().iter().zip(bits) {
            ints[c] |= (b as i64) << (scale - 1);
        }
        let mut m = [0i64; 3];
        for c in 0..self.d {
            m[c] = if ints[c] >= half { ints[c] - n } else { ints[c] };
        }
        FourierIndex(m)
    }

    /// The layout a forward transform maps to (or back from): same sites,
    /// space flag toggled.
    pub fn transformed(&self) -> Self {
        let space = match self.space {
            Space::Physical => Space::Fourier,
            Space::Fourier => Space::Physical,
        };
        Self { space, ..*self }
    }

    /// Full site index (value index prepended when present).
    pub fn full_index(&self, value_slot: Option<usize>, spatial_bits: &[usize]) -> Vec<usize> {
        let mut idx = Vec::with_capacity(self.num_sites());
        if self.has_value_site() {
            idx.push(value_slot.expect("value slot required"));
        } else {
            assert!(value_slot.is_none());
        }
        idx.extend_from_slice(spatial_bits);
        idx
    }
}

/// A quantized train together with its grid interpretation.
#[derive(Clone, Debug)]
pub struct Field<S: Scalar> {
    pub tt: TensorTrain<S>,
    pub layout: QttLayout,
}

impl<S: Scalar> Field<S> {
    pub fn new(tt: TensorTrain<S>, layout: QttLayout) -> Result<Self, LayoutError> {
        if tt.site_dims() != layout.site_dims() {
            return Err(LayoutError::TrainMismatch(format!(
                "site dims {:?} vs layout {:?}",
                tt.site_dims(),
                layout.site_dims()
            )));
        }
        Ok(Self { tt, layout })
    }

    pub fn evaluate_bits(&self, spatial_bits: &[usize]) -> Value<S> {
        let lay = &self.layout;
        match lay.arity {
            Arity::Scalar => Value::Scalar(self.tt.eval_bits(spatial_bits)),
            Arity::Vector => {
                let v = (0..lay.d)
                    .map(|i| self.tt.eval_bits(&lay.full_index(Some(i), spatial_bits)))
                    .collect();
                Value::Vector(v)
            }
            Arity::Matrix => {
                let d = lay.d;
                let m = Array2::from_shape_fn((d, d), |(i, j)| {
                    self.tt.eval_bits(&lay.full_index(Some(i * d + j), spatial_bits))
                });
                Value::Matrix(m)
            }
        }
    }

    pub fn evaluate_physical(&self, p: &GridPoint) -> Value<S> {
        self.evaluate_bits(&self.layout.encode_physical(p))
    }

    pub fn evaluate_fourier(&self, k: &FourierIndex) -> Result<Value<S>, LayoutError> {
        Ok(self.evaluate_bits(&self.layout.encode_fourier(k)?))
    }

    pub fn norm2(&self) -> f64 {
        self.tt.norm2()
    }

    pub fn round(&self, tol: f64, max_rank: usize) -> Self {
        let (tt, _) = self.tt.round(tol, max_rank);
        Self { tt, layout: self.layout }
    }

    pub fn add(&self, other: &Self) -> Result<Self, LayoutError> {
        if self.layout != other.layout {
            return Err(LayoutError::Incompatible("field layouts differ".into()));
        }
        Ok(Self { tt: self.tt.add(&other.tt)?, layout: self.layout })
    }

    pub fn sub(&self, other: &Self) -> Result<Self, LayoutError> {
        if self.layout != other.layout {
            return Err(LayoutError::Incompatible("field layouts differ".into()));
        }
        Ok(Self { tt: self.tt.sub(&other.tt)?, layout: self.layout })
    }

    pub fn scaled(&self, v: S) -> Self {
        Self { tt: self.tt.scaled(v), layout: self.layout }
    }

    /// Extract one component of a vector field as a scalar field.
    pub fn component(&self, i: usize) -> Self {
        assert_eq!(self.layout.arity, Arity::Vector);
        let cores = self.tt.cores();
        let val = &cores[0];
        let r1 = val.dim().2;
        // absorb slot i of the value core into the first spatial core
        let first = &cores[1];
        let (_, n, f1) = first.dim();
        let mut merged = Array3::from_elem((1, n, f1), S::ZERO);
        for b in 0..r1 {
            let w = val[[0, i, b]];
            if w == S::ZERO {
                continue;
            }
            for x in 0..n {
                for j in 0..f1 {
                    merged[[0, x, j]] += w * first[[b, x, j]];
                }
            }
        }
        let mut new_cores = vec![merged];
        new_cores.extend(cores[2..].iter().cloned());
        Field {
            tt: TensorTrain::new(new_cores).expect("component train"),
            layout: self.layout.with(self.layout.space, Arity::Scalar),
        }
    }
}

/// Stack scalar fields into a vector field (shared layout, value site first).
pub fn stack_components<S: Scalar>(parts: &[Field<S>]) -> Result<Field<S>, LayoutError> {
    let d = parts.len();
    let lay0 = parts[0].layout;
    assert_eq!(lay0.arity, Arity::Scalar);
    assert_eq!(lay0.d, d, "one component per coordinate");
    for p in parts {
        if p.layout != lay0 {
            return Err(LayoutError::Incompatible("stack: layouts differ".into()));
        }
    }
    // value core routes slot i to branch i; spatial cores are direct sums
    let k = lay0.num_spatial_sites();
    let mut value = Array3::from_elem((1, d, d), S::ZERO);
    for i in 0..d {
        value[[0, i, i]] = S::ONE;
    }
    let mut cores = vec![value];
    for s in 0..k {
        let blocks: Vec<&Array3<S>> = parts.iter().map(|p| p.tt.core(s)).collect();
        let n = blocks[0].dim().1;
        let (r0s, r1s): (Vec<usize>, Vec<usize>) =
            blocks.iter().map(|b| (b.dim().0, b.dim().2)).unzip();
        let last = s == k - 1;
        let r1t: usize = if last { 1 } else { r1s.iter().sum() };
        let r0t: usize = r0s.iter().sum();
        let mut c = Array3::from_elem((r0t, n, r1t), S::ZERO);
        let (mut o0, mut o1) = (0, 0);
        for (bi, b) in blocks.iter().enumerate() {
            let (b0, _, b1) = b.dim();
            for a in 0..b0 {
                for x in 0..n {
                    for z in 0..b1 {
                        let col = if last { 0 } else { o1 + z };
                        c[[o0 + a, x, col]] += b[[a, x, z]];
                    }
                }
            }
            o0 += b0;
            o1 += r1s[bi];
        }
        cores.push(c);
    }
    let tt = TensorTrain::new(cores)?;
    Field::new(tt, lay0.with(lay0.space, Arity::Vector))
}

/// Adjacent-site swap: contract cores (s, s+1), transpose the physical
/// indices and split by SVD at absolute budget `delta`.
fn swap_adjacent<S: Scalar>(tt: &mut Vec<Array3<S>>, s: usize, delta: f64, max_rank: usize) {
    let a = &tt[s];
    let b = &tt[s + 1];
    let (r0, n1, _) = a.dim();
    let (_, n2, r2) = b.dim();
    let am = a
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((r0 * n1, a.dim().2))
        .unwrap();
    let bm = b
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((b.dim().0, n2 * r2))
        .unwrap();
    let theta = S::matmul(am.view(), bm.view())
        .into_shape_with_order((r0, n1, n2, r2))
        .unwrap();
    let swapped = theta
        .permuted_axes([0, 2, 1, 3])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((r0 * n2, n1 * r2))
        .unwrap();
    let (u, sv, vh) = S::svd_thin(swapped.view());
    // absolute truncation budget
    let mut keep = sv.len();
    let mut tail = 0.0f64;
    while keep > 1 {
        let cand = tail + sv[keep - 1] * sv[keep - 1];
        if cand.sqrt() > delta {
            break;
        }
        tail = cand;
        keep -= 1;
    }
    keep = keep.min(max_rank).max(1);
    let mut us = u.slice(ndarray::s![.., ..keep]).to_owned();
    for (j, svj) in sv.iter().take(keep).enumerate() {
        us.column_mut(j).mapv_inplace(|x| x.scale(*svj));
    }
    tt[s] = us.into_shape_with_order((r0, n2, keep)).unwrap();
    tt[s + 1] = vh
        .slice(ndarray::s![..keep, ..])
        .to_owned()
        .into_shape_with_order((keep, n1, r2))
        .unwrap();
}

/// Reorder a field into another format of the same (d, L, space, arity) via
/// an adjacent-swap network, rounding each split so the total error stays
/// within `tol * norm`.
pub fn permute_format<S: Scalar>(field: &Field<S>, target: Format, tol: f64) -> Result<Field<S>, LayoutError> {
    let lay = field.layout;
    if target == lay.format {
        return Ok(field.clone());
    }
    let tgt_layout = QttLayout { format: target, ..lay };
    let from_roles = lay.spatial_roles();
    let to_roles = tgt_layout.spatial_roles();
    // position in target chain for each source site
    let perm: Vec<usize> = from_roles
        .iter()
        .map(|r| to_roles.iter().position(|t| t == r).expect("role present in target"))
        .collect();
    // bubble sort with adjacent transpositions
    let mut order = perm;
    let mut swaps = Vec::new();
    let n = order.len();
    loop {
        let mut done = true;
        for i in 0..n - 1 {
            if order[i] > order[i + 1] {
                order.swap(i, i + 1);
                swaps.push(i);
                done = false;
            }
        }
        if done {
            break;
        }
    }
    let offset = usize::from(lay.has_value_site());
    let mut cores: Vec<Array3<S>> = field.tt.cores().to_vec();
    let norm = field.tt.norm2();
    let delta = if swaps.is_empty() {
        0.0
    } else {
        tol * norm / (swaps.len() as f64).sqrt()
    };
    for &i in &swaps {
        swap_adjacent(&mut cores, i + offset, delta, usize::MAX);
    }
    let tt = TensorTrain::new(cores)?;
    Field::new(tt, tgt_layout)
}

/// Lift a field on the unit cell [0, eps]^d at level L0 to the full cube at
/// level L0 + l_eps, evaluating to cell(x/eps mod 1): rank-1 constant cores
/// are inserted at the coarse scales.
pub fn periodize<S: Scalar>(cell: &Field<S>, l_eps: usize) -> Result<Field<S>, LayoutError> {
    let lay = cell.layout;
    if lay.space != Space::Physical {
        return Err(LayoutError::Incompatible("periodize expects a physical-space field".into()));
    }
    if l_eps == 0 {
        return Ok(cell.clone());
    }
    let glay = QttLayout { level: lay.level + l_eps, ..lay };
    let roles = glay.spatial_roles();
    let mut cores: Vec<Array3<S>> = Vec::with_capacity(glay.num_sites());
    let mut cell_iter = cell.tt.cores().iter();
    if lay.has_value_site() {
        cores.push(cell_iter.next().unwrap().clone());
    }
    // per-coordinate cell cores appear in their original relative order
    let pending: Vec<Array3<S>> = cell_iter.cloned().collect();
    let mut next_cell = 0usize;
    for &(_, scale) in &roles {
        if scale <= l_eps {
            // constant core passing the current bond through unchanged
            let bond = cores.last().map(|c: &Array3<S>| c.dim().2).unwrap_or(1);
            let mut c = Array3::from_elem((bond, 2, bond), S::ZERO);
            for a in 0..bond {
                c[[a, 0, a]] = S::ONE;
                c[[a, 1, a]] = S::ONE;
            }
            cores.push(c);
        } else {
            cores.push(pending[next_cell].clone());
            next_cell += 1;
        }
    }
    debug_assert_eq!(next_cell, pending.len());
    let tt = TensorTrain::new(cores)?;
    Field::new(tt, glay)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tt::TensorTrain;

    fn lay(d: usize, l: usize, f: Format, sp: Space) -> QttLayout {
        QttLayout::new(d, l, f, sp, Arity::Scalar)
    }

    #[test]
    fn encode_examples() {
        // d=2, L=2, interleaved, physical (0.5, 0.25) -> (x1,y1,x2,y2) = (1,0,0,1)
        let l = lay(2, 2, Format::X1Y1, Space::Physical);
        let p = GridPoint::from_coords(&[0.5, 0.25], 2).unwrap();
        assert_eq!(l.encode_physical(&p), vec![1, 0, 0, 1]);
        // same point in x1x2_y2y1 -> (x1,x2,y2,y1) = (1,0,1,0)
        let l2 = lay(2, 2, Format::X1X2Y2Y1, Space::Physical);
        assert_eq!(l2.encode_physical(&p), vec![1, 0, 1, 0]);
    }

    #[test]
    fn fourier_sign_bit() {
        // k_x = -2 pi 2^(L-1): leading Fourier bit is 1, all others 0
        let lvl = 4;
        let l = lay(2, lvl, Format::X1X2Y1Y2, Space::Fourier);
        let k = FourierIndex([-(1 << (lvl - 1)), 0, 0]);
        let bits = l.encode_fourier(&k).unwrap();
        // x sites hold k^x_L..k^x_1: leading bit k^x_1 sits at the block end
        assert_eq!(bits, vec![0, 0, 0, 1, 0, 0, 0, 0]);
        assert_eq!(l.decode_fourier(&bits), k);
    }

    #[test]
    fn bijective_all_formats_exhaustive() {
        for d in [2usize, 3] {
            let lvl = if d == 2 { 4 } else { 3 };
            for f in Format::ALL {
                let lp = lay(d, lvl, f, Space::Physical);
                let n = 1u64 << lvl;
                let mut seen = std::collections::HashSet::new();
                for idx in 0..n.pow(d as u32) {
                    let mut j = [0u64; 3];
                    let mut rest = idx;
                    for c in 0..d {
                        j[c] = rest % n;
                        rest /= n;
                    }
                    let p = GridPoint(j);
                    let bits = lp.encode_physical(&p);
                    assert_eq!(lp.decode_physical(&bits), p);
                    seen.insert(bits);
                }
                assert_eq!(seen.len(), (n.pow(d as u32)) as usize);

                let lf = lay(d, lvl, f, Space::Fourier);
                let half = 1i64 << (lvl - 1);
                let mut seen = std::collections::HashSet::new();
                for idx in 0..(2 * half as u64).pow(d as u32) {
                    let mut m = [0i64; 3];
                    let mut rest = idx as i64;
                    for c in 0..d {
                        m[c] = rest % (2 * half) - half;
                        rest /= 2 * half;
                    }
                    let k = FourierIndex(m);
                    let bits = lf.encode_fourier(&k).unwrap();
                    assert_eq!(lf.decode_fourier(&bits), k);
                    seen.insert(bits);
                }
                assert_eq!(seen.len(), ((2 * half as u64).pow(d as u32)) as usize);
            }
        }
    }

    #[test]
    fn evaluate_exp_field() {
        // rank-1 1-d style train embedded as d=1
        let lvl = 8;
        let cores = (1..=lvl)
            .map(|s| {
                let mut c = Array3::from_elem((1, 2, 1), 0.0f64);
                c[[0, 0, 0]] = 1.0;
                c[[0, 1, 0]] = (2f64.powi(-(s as i32))).exp();
                c
            })
            .collect();
        let tt = TensorTrain::new(cores).unwrap();
        let layout = QttLayout::new(1, lvl, Format::X1X2Y1Y2, Space::Physical, Arity::Scalar);
        let f = Field::new(tt, layout).unwrap();
        let p = GridPoint::from_coords(&[0.75], lvl).unwrap();
        let v = f.evaluate_physical(&p).scalar();
        assert!((v - 0.75f64.exp()).abs() < 1e-12);

        let zero = Field::new(TensorTrain::constant(&layout.site_dims(), 0.0), layout).unwrap();
        assert_eq!(zero.evaluate_physical(&p).scalar(), 0.0);
    }

    #[test]
    fn evaluate_matches_dense() {
        let layout = lay(2, 4, Format::X1Y1, Space::Physical);
        let tt = TensorTrain::<f64>::random(&layout.site_dims(), &vec![5; layout.num_sites() - 1], 3).unwrap();
        let f = Field::new(tt.clone(), layout).unwrap();
        let dense = tt.to_dense().unwrap();
        let k = layout.num_sites();
        for lin in 0..(1usize << k) {
            let bits: Vec<usize> = (0..k).map(|s| (lin >> (k - 1 - s)) & 1).collect();
            let v = f.evaluate_bits(&bits);
            assert!((v.scalar() - dense[lin]).abs() <= 1e-12);
        }
    }

    #[test]
    fn permute_roundtrip_preserves_values() {
        let layout = lay(2, 5, Format::X1Y1, Space::Physical);
        let tt = TensorTrain::<f64>::random(&layout.site_dims(), &vec![4; layout.num_sites() - 1], 11).unwrap();
        let f = Field::new(tt, layout).unwrap();
        let g = permute_format(&f, Format::X1X2Y1Y2, 1e-12).unwrap();
        let back = permute_format(&g, Format::X1Y1, 1e-12).unwrap();
        let n = 1u64 << 5;
        let mut rng_state = 12345u64;
        for _ in 0..100 {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let jx = (rng_state >> 16) % n;
            let jy = (rng_state >> 40) % n;
            let p = GridPoint([jx, jy, 0]);
            let a = f.evaluate_physical(&p).scalar();
            let b = g.evaluate_physical(&p).scalar();
            let c = back.evaluate_physical(&p).scalar();
            assert!((a - b).abs() < 1e-10, "direct {a} vs permuted {b}");
            assert!((a - c).abs() < 1e-10);
        }
    }

    #[test]
    fn permute_same_format_is_identity() {
        let layout = lay(2, 3, Format::X1Y1, Space::Physical);
        let tt = TensorTrain::<f64>::random(&layout.site_dims(), &vec![3; 5], 7).unwrap();
        let f = Field::new(tt.clone(), layout).unwrap();
        let g = permute_format(&f, Format::X1Y1, 1e-12).unwrap();
        for (a, b) in f.tt.cores().iter().zip(g.tt.cores()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn separable_rank_preserved_under_permutation() {
        // rank-1 f(x) g(y) stays rank 1 per coordinate block
        let lvl = 4;
        let layout = lay(2, lvl, Format::X1X2Y1Y2, Space::Physical);
        let cores: Vec<Array3<f64>> = (0..2 * lvl)
            .map(|s| {
                let mut c = Array3::from_elem((1, 2, 1), 0.0);
                c[[0, 0, 0]] = 1.0;
                c[[0, 1, 0]] = 0.5 + 0.1 * s as f64;
                c
            })
            .collect();
        let f = Field::new(TensorTrain::new(cores).unwrap(), layout).unwrap();
        let g = permute_format(&f, Format::X1Y1, 1e-13).unwrap();
        assert!(g.tt.max_rank() <= 1);
    }

    #[test]
    fn periodize_basics() {
        // constant cell -> constant global
        let lvl0 = 3;
        let layout = lay(2, lvl0, Format::X1Y1, Space::Physical);
        let cell = Field::new(TensorTrain::constant(&layout.site_dims(), 2.5), layout).unwrap();
        let glob = periodize(&cell, 2).unwrap();
        assert_eq!(glob.layout.level, 5);
        let p = GridPoint::from_coords(&[0.40625, 0.71875], 5).unwrap();
        assert!((glob.evaluate_physical(&p).scalar() - 2.5).abs() < 1e-13);

        // l_eps = 0 is the identity
        let same = periodize(&cell, 0).unwrap();
        assert_eq!(same.layout.level, lvl0);
    }

    #[test]
    fn periodize_is_periodic() {
        for fmt in Format::ALL {
            let lvl0 = 4;
            let l_eps = 2;
            let layout = QttLayout::new(2, lvl0, fmt, Space::Physical, Arity::Scalar);
            let tt =
                TensorTrain::<f64>::random(&layout.site_dims(), &vec![3; layout.num_sites() - 1], 5).unwrap();
            let cell = Field::new(tt, layout).unwrap();
            let glob = periodize(&cell, l_eps).unwrap();
            let lvl = lvl0 + l_eps;
            let n = 1u64 << lvl;
            let eps_step = 1u64 << lvl0; // eps = 2^-l_eps = eps_step * h
            let mut rng_state = 999u64;
            for _ in 0..50 {
                rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let jx = (rng_state >> 16) % n;
                let jy = (rng_state >> 40) % n;
                let a = glob.evaluate_physical(&GridPoint([jx, jy, 0])).scalar();
                let b = glob
                    .evaluate_physical(&GridPoint([(jx + eps_step) % n, jy, 0]))
                    .scalar();
                assert!((a - b).abs() < 1e-12, "{fmt:?}: {a} vs {b}");
                // consistency with the cell field
                let cell_v = cell
                    .evaluate_physical(&GridPoint([jx % eps_step, jy % eps_step, 0]))
                    .scalar();
                assert!((a - cell_v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fourier_layout_is_scale_reversed() {
        // the Fourier ordering of each format equals the physical ordering
        // with per-coordinate reversed scales; spot-check via role lists
        let lp = lay(2, 3, Format::X1Y1, Space::Physical).spatial_roles();
        // physical interleaved: (x,1),(y,1),(x,2),(y,2),(x,3),(y,3)
        assert_eq!(lp[0], (0, 1));
        assert_eq!(lp[5], (1, 3));
        // in Fourier space the same site at (c, scale l) holds k^c_{L+1-l}:
        // site 0 -> k^x_3 (finest), site 5 -> k^y_1 (sign bit); this is the
        // reversal used by encode_fourier via bit position scale-1.
        let lf = lay(2, 3, Format::X1Y1, Space::Fourier);
        let k = FourierIndex([1, 0, 0]); // n_x = 1: only bit 0 set -> k^x_L site
        let bits = lf.encode_fourier(&k).unwrap();
        assert_eq!(bits, vec![1, 0, 0, 0, 0, 0]);
    }
}
