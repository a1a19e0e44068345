//! Sampling, algebra and regression encoding of planar transformations.
//!
//! Every transformation is carried as a [`Homography`] acting on normalized
//! image coordinates `[-1, 1]²` (x to the right, y downward). A homography
//! maps a point of the source image to its location in the transformed image.

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};

/// Smallest `|det|` / `|m[2][2]|` treated as non-degenerate.
pub const DEGENERACY_EPS: f64 = 1e-12;

const MAX_PROJECTIVE_ATTEMPTS: usize = 16;

/// Closed interval `[lo, hi]`, written as a two-element array in configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::Config(format!("invalid interval [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub const fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    /// One uniform draw. Always consumes exactly one value from `rng`, so
    /// collapsing a range does not shift later draws.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        (self.lo + (self.hi - self.lo) * u).min(self.hi)
    }

    fn excludes_zero(&self) -> bool {
        self.lo > 0.0 || self.hi < 0.0
    }
}

impl TryFrom<[f64; 2]> for Interval {
    type Error = Error;
    fn try_from(v: [f64; 2]) -> Result<Self> {
        Interval::new(v[0], v[1])
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

/// Ranges for random affine transformations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineSpec {
    /// Degrees.
    pub rotation: Interval,
    /// Fraction of the image size, drawn independently per axis.
    pub translation: Interval,
    pub scale: Interval,
    /// Degrees.
    pub shear: Interval,
}

impl AffineSpec {
    /// Rotation in [-180°, 180°], translation ±0.2, scale [0.7, 1.3], shear [-30°, 30°].
    pub fn paper() -> Self {
        Self {
            rotation: Interval::new(-180.0, 180.0).unwrap(),
            translation: Interval::new(-0.2, 0.2).unwrap(),
            scale: Interval::new(0.7, 1.3).unwrap(),
            shear: Interval::new(-30.0, 30.0).unwrap(),
        }
    }

    pub fn identity() -> Self {
        Self {
            rotation: Interval::point(0.0),
            translation: Interval::point(0.0),
            scale: Interval::point(1.0),
            shear: Interval::point(0.0),
        }
    }

    pub fn rotation_only(rotation: Interval) -> Self {
        Self { rotation, ..Self::identity() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, i) in [
            ("rotation", self.rotation),
            ("translation", self.translation),
            ("scale", self.scale),
            ("shear", self.shear),
        ] {
            Interval::new(i.lo, i.hi).map_err(|e| Error::Config(format!("affine {name}: {e}")))?;
        }
        if !self.scale.excludes_zero() {
            return Err(Error::Config("affine scale range must exclude 0".into()));
        }
        if self.shear.lo <= -90.0 || self.shear.hi >= 90.0 {
            return Err(Error::Config("affine shear must lie strictly inside (-90°, 90°)".into()));
        }
        Ok(())
    }
}

/// Four-corner perturbation applied after a random pre-scale and right-angle pre-rotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectiveSpec {
    /// Corner offset as a fraction of the image size, per axis.
    pub corner: Interval,
    pub pre_scale: Interval,
    /// Degrees, each one of 0, 90, 180, 270.
    pub pre_rotations: Vec<u32>,
}

impl ProjectiveSpec {
    /// Corners moved by ±0.125 after scaling by [0.8, 1.2] and rotating by a multiple of 90°.
    pub fn paper() -> Self {
        Self {
            corner: Interval::new(-0.125, 0.125).unwrap(),
            pre_scale: Interval::new(0.8, 1.2).unwrap(),
            pre_rotations: vec![0, 90, 180, 270],
        }
    }

    pub fn validate(&self) -> Result<()> {
        Interval::new(self.corner.lo, self.corner.hi)?;
        Interval::new(self.pre_scale.lo, self.pre_scale.hi)?;
        if self.corner.lo.abs().max(self.corner.hi.abs()) >= 0.5 {
            return Err(Error::Config("projective corner range must stay below 0.5".into()));
        }
        if !self.pre_scale.excludes_zero() {
            return Err(Error::Config("projective pre_scale must exclude 0".into()));
        }
        if self.pre_rotations.is_empty() {
            return Err(Error::Config("projective pre_rotations is empty".into()));
        }
        if let Some(bad) = self.pre_rotations.iter().find(|r| **r % 90 != 0 || **r >= 360) {
            return Err(Error::Config(format!("pre-rotation {bad} is not in {{0, 90, 180, 270}}")));
        }
        Ok(())
    }
}

/// A finite family of right-angle rotations, each one a class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoricalSpec {
    pub rotations: Vec<u32>,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
}

impl CategoricalSpec {
    pub fn four_rotations() -> Self {
        Self { rotations: vec![0, 90, 180, 270], weights: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rotations.is_empty() {
            return Err(Error::Config("categorical family is empty".into()));
        }
        if let Some(bad) = self.rotations.iter().find(|r| **r % 90 != 0 || **r >= 360) {
            return Err(Error::Config(format!("categorical rotation {bad} is not a right angle")));
        }
        if let Some(w) = &self.weights {
            if w.len() != self.rotations.len() || w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::Config("categorical weights must be nonnegative, one per class".into()));
            }
            if w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::Config("categorical weights sum to zero".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rotations.is_empty()
    }
}

/// Transformation distribution as written in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TransformSpec {
    Affine(AffineSpec),
    Projective(ProjectiveSpec),
    Categorical(CategoricalSpec),
}

impl TransformSpec {
    pub fn kind(&self) -> TransformKind {
        match self {
            TransformSpec::Affine(_) => TransformKind::Affine,
            TransformSpec::Projective(_) => TransformKind::Projective,
            TransformSpec::Categorical(_) => TransformKind::Categorical,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TransformSpec::Affine(s) => s.validate(),
            TransformSpec::Projective(s) => s.validate(),
            TransformSpec::Categorical(s) => s.validate(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<TransformParams> {
        match self {
            TransformSpec::Affine(s) => sample_affine(rng, s),
            TransformSpec::Projective(s) => sample_projective(rng, s),
            TransformSpec::Categorical(s) => sample_categorical(rng, s),
        }
    }

    /// Width of the decoder output this family needs: regression dimension
    /// or number of classes.
    pub fn target_dim(&self) -> usize {
        match self {
            TransformSpec::Affine(_) => AFFINE_DIM,
            TransformSpec::Projective(_) => PROJECTIVE_DIM,
            TransformSpec::Categorical(s) => s.len(),
        }
    }

    /// Transformation family that leaves every image unchanged.
    pub fn identity() -> Self {
        TransformSpec::Affine(AffineSpec::identity())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Affine,
    Projective,
    Categorical,
}

/// 3×3 projective map on normalized coordinates, normalized so `m[2][2] = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: [[f64; 3]; 3],
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn matmul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Exact cosine/sine for right angles, `f64` trig otherwise.
fn cos_sin_deg(deg: f64) -> (f64, f64) {
    let r = deg.rem_euclid(360.0);
    match r {
        x if x == 0.0 => (1.0, 0.0),
        x if x == 90.0 => (0.0, 1.0),
        x if x == 180.0 => (-1.0, 0.0),
        x if x == 270.0 => (0.0, -1.0),
        _ => {
            let rad = deg.to_radians();
            (rad.cos(), rad.sin())
        }
    }
}

impl Homography {
    /// Normalizes by `m[2][2]` and checks invertibility.
    pub fn new(m: [[f64; 3]; 3]) -> Result<Self> {
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("non-finite homography entry".into()));
        }
        let w = m[2][2];
        if w.abs() < DEGENERACY_EPS {
            return Err(Error::Degenerate(format!("m[2][2] = {w:e} cannot be normalized")));
        }
        let mut n = m;
        n.iter_mut().flatten().for_each(|v| *v /= w);
        n[2][2] = 1.0;
        let det = det3(&n);
        if det.abs() < DEGENERACY_EPS {
            return Err(Error::Degenerate(format!("singular homography, det = {det:e}")));
        }
        Ok(Self { m: n })
    }

    pub const fn identity() -> Self {
        Self { m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] }
    }

    /// Counter-clockwise on screen is negative here because y points down;
    /// the matrix is the usual `[[cos, -sin], [sin, cos]]`.
    pub fn rotation(deg: f64) -> Self {
        let (c, s) = cos_sin_deg(deg);
        Self { m: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]] }
    }

    /// Translation in normalized units (the full image spans 2).
    pub fn translation(tx: f64, ty: f64) -> Self {
        Self { m: [[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]] }
    }

    pub fn scaling(s: f64) -> Result<Self> {
        Self::new([[s, 0.0, 0.0], [0.0, s, 0.0], [0.0, 0.0, 1.0]])
    }

    /// Horizontal shear `x' = x + tan(deg)·y`.
    pub fn shear(deg: f64) -> Self {
        Self { m: [[1.0, deg.to_radians().tan(), 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] }
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    pub fn det(&self) -> f64 {
        det3(&self.m)
    }

    /// Determinant of the upper-left 2×2 block.
    pub fn linear_det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn is_affine(&self) -> bool {
        self.m[2][0] == 0.0 && self.m[2][1] == 0.0
    }

    /// Maps a point; `None` when it lands on the line at infinity.
    pub fn apply(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let m = &self.m;
        let w = m[2][0] * x + m[2][1] * y + m[2][2];
        if w.abs() < DEGENERACY_EPS {
            return None;
        }
        Some(((m[0][0] * x + m[0][1] * y + m[0][2]) / w, (m[1][0] * x + m[1][1] * y + m[1][2]) / w))
    }

    pub fn max_abs_diff(&self, other: &Homography) -> f64 {
        self.m.iter().flatten().zip(other.m.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Homography taking each `src[i]` to `dst[i]`, from the 8×8 system
    /// obtained by fixing `m[2][2] = 1`.
    pub fn from_correspondences(src: &[(f64, f64); 4], dst: &[(f64, f64); 4]) -> Result<Self> {
        let mut a = [[0.0; 9]; 8];
        for (i, (&(x, y), &(u, v))) in src.iter().zip(dst).enumerate() {
            a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
            a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
        }
        let h = solve8(a)?;
        Self::new([[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]])
    }
}

/// Gaussian elimination with partial pivoting on an augmented 8×9 system.
fn solve8(mut a: [[f64; 9]; 8]) -> Result<[f64; 8]> {
    for col in 0..8 {
        let pivot = (col..8).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).expect("non-empty range");
        if a[pivot][col].abs() < DEGENERACY_EPS {
            return Err(Error::Degenerate("four-point system is singular".into()));
        }
        a.swap(col, pivot);
        for row in col + 1..8 {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..9 {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
    }
    let mut x = [0.0; 8];
    for row in (0..8).rev() {
        let s: f64 = (row + 1..8).map(|k| a[row][k] * x[k]).sum();
        x[row] = (a[row][8] - s) / a[row][row];
    }
    Ok(x)
}

/// `normalize(a · b)`: apply `b` first, then `a`.
pub fn compose(a: &Homography, b: &Homography) -> Result<Homography> {
    Homography::new(matmul3(&a.m, &b.m))
}

pub fn invert(h: &Homography) -> Result<Homography> {
    let m = &h.m;
    let det = det3(m);
    if det.abs() < DEGENERACY_EPS {
        return Err(Error::Degenerate(format!("cannot invert, det = {det:e}")));
    }
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let adj = [
        [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
        [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
        [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
    ];
    let mut inv = adj;
    inv.iter_mut().flatten().for_each(|v| *v /= det);
    Homography::new(inv)
}

/// Raw sampled scalars, before composition into a homography.
#[derive(Debug, Clone, PartialEq)]
pub enum RawParams {
    Affine {
        rotation_deg: f64,
        translate_x: f64,
        translate_y: f64,
        scale: f64,
        shear_deg: f64,
    },
    Projective {
        /// `(dx, dy)` per corner, corners ordered TL, TR, BR, BL; fraction of size.
        offsets: [f64; 8],
        pre_scale: f64,
        pre_rotation_deg: u32,
    },
    Categorical {
        class: usize,
    },
}

/// One draw `t ~ p(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformParams {
    pub raw: RawParams,
    pub h: Homography,
}

impl TransformParams {
    pub fn kind(&self) -> TransformKind {
        match self.raw {
            RawParams::Affine { .. } => TransformKind::Affine,
            RawParams::Projective { .. } => TransformKind::Projective,
            RawParams::Categorical { .. } => TransformKind::Categorical,
        }
    }

    pub fn identity() -> Self {
        Self {
            raw: RawParams::Affine {
                rotation_deg: 0.0,
                translate_x: 0.0,
                translate_y: 0.0,
                scale: 1.0,
                shear_deg: 0.0,
            },
            h: Homography::identity(),
        }
    }

    /// Regression target; see [`encode_target`].
    pub fn target(&self) -> Result<Vec<f64>> {
        encode_target(self)
    }

    /// Class index for categorical transformations.
    pub fn class(&self) -> Option<usize> {
        match self.raw {
            RawParams::Categorical { class } => Some(class),
            _ => None,
        }
    }

    /// Flat key-value record for logs: kind, raw scalars, nine matrix entries.
    pub fn to_record(&self) -> Map<String, Value> {
        let mut rec = Map::new();
        match &self.raw {
            RawParams::Affine { rotation_deg, translate_x, translate_y, scale, shear_deg } => {
                rec.insert("kind".into(), json!("affine"));
                rec.insert("rotation_deg".into(), json!(rotation_deg));
                rec.insert("translate_x".into(), json!(translate_x));
                rec.insert("translate_y".into(), json!(translate_y));
                rec.insert("scale".into(), json!(scale));
                rec.insert("shear_deg".into(), json!(shear_deg));
            }
            RawParams::Projective { offsets, pre_scale, pre_rotation_deg } => {
                rec.insert("kind".into(), json!("projective"));
                for (i, o) in offsets.iter().enumerate() {
                    rec.insert(format!("offset{i}"), json!(o));
                }
                rec.insert("pre_scale".into(), json!(pre_scale));
                rec.insert("pre_rotation_deg".into(), json!(pre_rotation_deg));
            }
            RawParams::Categorical { class } => {
                rec.insert("kind".into(), json!("categorical"));
                rec.insert("class".into(), json!(class));
            }
        }
        for (i, row) in self.h.m.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                rec.insert(format!("h{i}{j}"), json!(v));
            }
        }
        rec
    }
}

/// `T(translate) · R(rotation) · Sh(shear) · S(scale)`; draws in the order
/// rotation, translate x, translate y, scale, shear.
pub fn sample_affine<R: Rng + ?Sized>(rng: &mut R, spec: &AffineSpec) -> Result<TransformParams> {
    spec.validate()?;
    let rotation_deg = spec.rotation.sample(rng);
    let translate_x = spec.translation.sample(rng);
    let translate_y = spec.translation.sample(rng);
    let scale = spec.scale.sample(rng);
    let shear_deg = spec.shear.sample(rng);
    let h = affine_matrix(rotation_deg, translate_x, translate_y, scale, shear_deg)?;
    Ok(TransformParams { raw: RawParams::Affine { rotation_deg, translate_x, translate_y, scale, shear_deg }, h })
}

/// Composes the affine homography from raw parameters (translation as a
/// fraction of size, i.e. doubled in normalized units).
pub fn affine_matrix(rotation_deg: f64, tx: f64, ty: f64, scale: f64, shear_deg: f64) -> Result<Homography> {
    let t = Homography::translation(2.0 * tx, 2.0 * ty);
    let r = Homography::rotation(rotation_deg);
    let sh = Homography::shear(shear_deg);
    let s = Homography::scaling(scale)?;
    compose(&t, &compose(&r, &compose(&sh, &s)?)?)
}

/// Image corners TL, TR, BR, BL.
pub const CORNERS: [(f64, f64); 4] = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];

/// A quad is usable when it is strictly convex with consistent winding.
fn quad_is_valid(q: &[(f64, f64); 4]) -> bool {
    let mut sign = 0.0;
    for i in 0..4 {
        let (a, b, c) = (q[i], q[(i + 1) % 4], q[(i + 2) % 4]);
        let cross = (b.0 - a.0) * (c.1 - b.1) - (b.1 - a.1) * (c.0 - b.0);
        if cross.abs() < 1e-6 || (sign != 0.0 && cross.signum() != sign) {
            return false;
        }
        sign = cross.signum();
    }
    true
}

/// Homography taking the image corners to their pre-scaled, pre-rotated and
/// perturbed positions. Draws: pre-scale, pre-rotation index, 8 offsets.
pub fn sample_projective<R: Rng + ?Sized>(rng: &mut R, spec: &ProjectiveSpec) -> Result<TransformParams> {
    spec.validate()?;
    for _ in 0..MAX_PROJECTIVE_ATTEMPTS {
        let pre_scale = spec.pre_scale.sample(rng);
        let pre_rotation_deg = spec.pre_rotations[rng.gen_range(0..spec.pre_rotations.len())];
        let mut offsets = [0.0; 8];
        offsets.iter_mut().for_each(|o| *o = spec.corner.sample(rng));
        if let Some(h) = projective_matrix(&offsets, pre_scale, pre_rotation_deg)? {
            return Ok(TransformParams { raw: RawParams::Projective { offsets, pre_scale, pre_rotation_deg }, h });
        }
    }
    Err(Error::Degenerate(format!("no valid projective quad after {MAX_PROJECTIVE_ATTEMPTS} attempts")))
}

/// `None` when the perturbed quad is degenerate.
pub fn projective_matrix(offsets: &[f64; 8], pre_scale: f64, pre_rotation_deg: u32) -> Result<Option<Homography>> {
    let pre = compose(&Homography::rotation(f64::from(pre_rotation_deg)), &Homography::scaling(pre_scale)?)?;
    let mut dst = [(0.0, 0.0); 4];
    for (i, &(x, y)) in CORNERS.iter().enumerate() {
        let (u, v) = pre.apply(x, y).expect("affine map");
        dst[i] = (u + 2.0 * offsets[2 * i], v + 2.0 * offsets[2 * i + 1]);
    }
    if !quad_is_valid(&dst) {
        return Ok(None);
    }
    Homography::from_correspondences(&CORNERS, &dst).map(Some)
}

pub fn sample_categorical<R: Rng + ?Sized>(rng: &mut R, spec: &CategoricalSpec) -> Result<TransformParams> {
    spec.validate()?;
    let class = match &spec.weights {
        None => rng.gen_range(0..spec.len()),
        Some(w) => {
            let total: f64 = w.iter().sum();
            let mut u = rng.gen::<f64>() * total;
            let mut pick = w.len() - 1;
            for (i, wi) in w.iter().enumerate() {
                if u < *wi {
                    pick = i;
                    break;
                }
                u -= wi;
            }
            pick
        }
    };
    Ok(TransformParams {
        raw: RawParams::Categorical { class },
        h: Homography::rotation(f64::from(spec.rotations[class])),
    })
}

pub const AFFINE_DIM: usize = 6;
pub const PROJECTIVE_DIM: usize = 8;

/// Per-dimension (offset, scale) for affine targets `(h00, h01, h02, h10, h11, h12)`,
/// measured over 10⁶ draws (seed 20200101) of [`AffineSpec::paper`].
pub const AFFINE_TARGET_STATS: [(f64, f64); AFFINE_DIM] = [
    (-1.373012e-4, 7.179042e-1),
    (-6.924212e-4, 7.535227e-1),
    (7.123234e-5, 2.307576e-1),
    (8.752220e-4, 7.175002e-1),
    (-3.832014e-4, 7.538117e-1),
    (7.708791e-5, 2.309936e-1),
];

/// Per-dimension (offset, scale) for projective targets `h00 … h21`,
/// measured over 10⁶ draws (seed 20200101) of [`ProjectiveSpec::paper`].
pub const PROJECTIVE_TARGET_STATS: [(f64, f64); PROJECTIVE_DIM] = [
    (8.461672e-4, 7.114986e-1),
    (3.957541e-4, 7.118422e-1),
    (9.065465e-5, 1.023594e-1),
    (-3.297299e-4, 7.120221e-1),
    (7.783619e-4, 7.114985e-1),
    (1.914997e-4, 1.024093e-1),
    (-1.006622e-5, 7.432918e-2),
    (4.695037e-5, 7.425777e-2),
];

fn stats_for(kind: TransformKind) -> Result<&'static [(f64, f64)]> {
    match kind {
        TransformKind::Affine => Ok(&AFFINE_TARGET_STATS),
        TransformKind::Projective => Ok(&PROJECTIVE_TARGET_STATS),
        TransformKind::Categorical => Err(Error::UnsupportedKind("regression targets")),
    }
}

/// Standardized matrix entries: the top two rows for affine maps, all entries
/// but `m[2][2]` for projective maps.
pub fn encode_target(t: &TransformParams) -> Result<Vec<f64>> {
    let kind = t.kind();
    let stats = stats_for(kind)?;
    let m = &t.h.m;
    let raw: Vec<f64> = match kind {
        TransformKind::Affine => vec![m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2]],
        _ => vec![m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1]],
    };
    Ok(raw.iter().zip(stats).map(|(v, (off, sc))| (v - off) / sc).collect())
}

/// Inverse of [`encode_target`].
pub fn decode_target(v: &[f64], kind: TransformKind) -> Result<Homography> {
    let stats = stats_for(kind)?;
    if v.len() != stats.len() {
        return Err(Error::shape("decode_target", &[stats.len()], &[v.len()]));
    }
    let r: Vec<f64> = v.iter().zip(stats).map(|(x, (off, sc))| x * sc + off).collect();
    let last = match kind {
        TransformKind::Affine => [0.0, 0.0, 1.0],
        _ => [r[6], r[7], 1.0],
    };
    Homography::new([[r[0], r[1], r[2]], [r[3], r[4], r[5]], last])
}
