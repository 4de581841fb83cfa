//! Finite rotation groups, rigid motions in `ℝ³ ⋊ G`, and their actions on
//! points and lifted feature arrays.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cloud_ops::LiftedCloud;
use crate::diffcore::{Real, Tensor};
use crate::{Error, Result};

pub type Vec3 = [f64; 3];

/// Entries this close to a special value are snapped onto it.
const SNAP_TOL: f64 = 1e-9;
/// Two group elements closer than this (in the max norm) are the same element.
const MATCH_TOL: f64 = 1e-9;

fn snap_targets() -> [f64; 9] {
    let h3 = 3f64.sqrt() / 2.0;
    let h2 = std::f64::consts::FRAC_1_SQRT_2;
    [-1.0, -h3, -h2, -0.5, 0.0, 0.5, h2, h3, 1.0]
}

fn snap(x: f64) -> f64 {
    for t in snap_targets() {
        if (x - t).abs() <= SNAP_TOL {
            return t;
        }
    }
    x
}

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn norm(a: Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

pub fn dist2(a: Vec3, b: Vec3) -> f64 {
    let d = sub(a, b);
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

/// A 3×3 rotation matrix, stored row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationElement {
    pub matrix: [[f64; 3]; 3],
}

impl RotationElement {
    pub const IDENTITY: RotationElement = RotationElement {
        matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    pub fn rot_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::from_rows([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    }

    pub fn rot_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::from_rows([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    }

    pub fn rot_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::from_rows([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn from_rows(matrix: [[f64; 3]; 3]) -> Self {
        RotationElement { matrix }
    }

    /// Rotation matrix of a unit quaternion `(w, x, y, z)`. The input is
    /// normalized first.
    pub fn from_quaternion(q: [f64; 4]) -> Self {
        let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        let [w, x, y, z] = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
        Self::from_rows([
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ])
    }

    pub fn mul(&self, other: &RotationElement) -> RotationElement {
        let a = &self.matrix;
        let b = &other.matrix;
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        RotationElement { matrix: m }
    }

    pub fn transpose(&self) -> RotationElement {
        let a = &self.matrix;
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = a[j][i];
            }
        }
        RotationElement { matrix: m }
    }

    /// For a rotation the inverse is the transpose.
    pub fn inverse(&self) -> RotationElement {
        self.transpose()
    }

    pub fn apply(&self, v: Vec3) -> Vec3 {
        let a = &self.matrix;
        [
            a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
            a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
            a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
        ]
    }

    /// `self⁻¹ · v` without forming the inverse.
    pub fn apply_inverse(&self, v: Vec3) -> Vec3 {
        let a = &self.matrix;
        [
            a[0][0] * v[0] + a[1][0] * v[1] + a[2][0] * v[2],
            a[0][1] * v[0] + a[1][1] * v[1] + a[2][1] * v[2],
            a[0][2] * v[0] + a[1][2] * v[1] + a[2][2] * v[2],
        ]
    }

    pub fn determinant(&self) -> f64 {
        let a = &self.matrix;
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    }

    /// Max-norm distance between two matrices.
    pub fn distance(&self, other: &RotationElement) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                d = d.max((self.matrix[i][j] - other.matrix[i][j]).abs());
            }
        }
        d
    }

    /// `‖RᵀR − I‖∞`.
    pub fn orthogonality_error(&self) -> f64 {
        self.transpose().mul(self).distance(&Self::IDENTITY)
    }

    pub fn snapped(&self) -> RotationElement {
        let mut m = self.matrix;
        for row in m.iter_mut() {
            for v in row.iter_mut() {
                *v = snap(*v);
            }
        }
        RotationElement { matrix: m }
    }

    pub fn is_finite(&self) -> bool {
        self.matrix.iter().flatten().all(|v| v.is_finite())
    }
}

/// The finite rotation groups provided by [`make_group`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GroupName {
    G1,
    G4,
    G8,
    G12,
    G24,
}

impl GroupName {
    pub const ALL: [GroupName; 5] = [
        GroupName::G1,
        GroupName::G4,
        GroupName::G8,
        GroupName::G12,
        GroupName::G24,
    ];

    pub fn order(self) -> usize {
        match self {
            GroupName::G1 => 1,
            GroupName::G4 => 4,
            GroupName::G8 => 8,
            GroupName::G12 => 12,
            GroupName::G24 => 24,
        }
    }
}

impl fmt::Display for GroupName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "g{}", self.order())
    }
}

impl FromStr for GroupName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "g1" => Ok(GroupName::G1),
            "g4" => Ok(GroupName::G4),
            "g8" => Ok(GroupName::G8),
            "g12" => Ok(GroupName::G12),
            "g24" => Ok(GroupName::G24),
            _ => Err(Error::UnknownGroup(s.to_string())),
        }
    }
}

/// A finite subgroup of SO(3) with precomputed multiplication and inverse
/// tables. Element 0 is always the identity.
#[derive(Clone, Debug)]
pub struct FiniteRotationGroup {
    pub name: GroupName,
    pub elements: Vec<RotationElement>,
    pub identity_index: usize,
    pub inverse_table: Vec<usize>,
    pub cayley_table: Vec<Vec<usize>>,
}

impl PartialEq for FiniteRotationGroup {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
    }
}

pub fn make_group(name: GroupName) -> Result<FiniteRotationGroup> {
    let elements = match name {
        GroupName::G1 => vec![RotationElement::IDENTITY],
        GroupName::G4 => bfs_closure(name, &[RotationElement::rot_z(PI / 2.0)], 4)?,
        GroupName::G8 => bfs_closure(name, &[RotationElement::rot_z(PI / 4.0)], 8)?,
        GroupName::G12 => {
            let flip = RotationElement::rot_y(PI);
            let turns: Vec<_> = (0..6)
                .map(|k| RotationElement::rot_z(k as f64 * PI / 3.0))
                .collect();
            turns
                .iter()
                .map(|r| r.snapped())
                .chain(turns.iter().map(|r| flip.mul(r).snapped()))
                .collect()
        }
        GroupName::G24 => bfs_closure(
            name,
            &[
                RotationElement::rot_z(PI / 2.0),
                RotationElement::rot_x(PI / 2.0),
            ],
            24,
        )?,
    };
    FiniteRotationGroup::from_elements(name, elements)
}

pub fn make_group_by_name(name: &str) -> Result<FiniteRotationGroup> {
    make_group(name.parse()?)
}

/// Breadth-first closure of `generators` starting from the identity.
fn bfs_closure(
    name: GroupName,
    generators: &[RotationElement],
    expected: usize,
) -> Result<Vec<RotationElement>> {
    let generators: Vec<_> = generators.iter().map(|g| g.snapped()).collect();
    let mut elements = vec![RotationElement::IDENTITY];
    let mut queue = VecDeque::from([0usize]);
    while let Some(i) = queue.pop_front() {
        for g in &generators {
            let candidate = elements[i].mul(g).snapped();
            if find_element(&elements, &candidate).is_none() {
                if elements.len() == expected {
                    return Err(Error::GroupConstructionFailure {
                        name: name.to_string(),
                        reason: format!("closure exceeds expected order {expected}"),
                    });
                }
                elements.push(candidate);
                queue.push_back(elements.len() - 1);
            }
        }
    }
    if elements.len() != expected {
        return Err(Error::GroupConstructionFailure {
            name: name.to_string(),
            reason: format!("closure has order {}, expected {expected}", elements.len()),
        });
    }
    Ok(elements)
}

fn find_element(elements: &[RotationElement], r: &RotationElement) -> Option<usize> {
    elements.iter().position(|e| e.distance(r) <= MATCH_TOL)
}

impl FiniteRotationGroup {
    /// Builds the tables for an explicit element list. The first element must
    /// be the identity and the list must be closed under multiplication.
    pub fn from_elements(name: GroupName, elements: Vec<RotationElement>) -> Result<Self> {
        let fail = |reason: String| Error::GroupConstructionFailure {
            name: name.to_string(),
            reason,
        };
        if elements.is_empty() || elements[0].distance(&RotationElement::IDENTITY) > 0.0 {
            return Err(fail("element 0 is not the identity".into()));
        }
        let n = elements.len();
        let mut cayley_table = vec![vec![0usize; n]; n];
        for i in 0..n {
            for j in 0..n {
                let prod = elements[i].mul(&elements[j]);
                cayley_table[i][j] = find_element(&elements, &prod)
                    .ok_or_else(|| fail(format!("product {i}·{j} not in the element list")))?;
            }
        }
        let inverse_table = (0..n)
            .map(|i| {
                cayley_table[i]
                    .iter()
                    .position(|&k| k == 0)
                    .ok_or_else(|| fail(format!("element {i} has no inverse")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FiniteRotationGroup {
            name,
            elements,
            identity_index: 0,
            inverse_table,
            cayley_table,
        })
    }

    pub fn order(&self) -> usize {
        self.elements.len()
    }

    pub fn element(&self, i: usize) -> Result<&RotationElement> {
        self.elements.get(i).ok_or(Error::IndexError {
            index: i,
            len: self.order(),
        })
    }

    /// Index of `elements[i] · elements[j]`.
    pub fn multiply(&self, i: usize, j: usize) -> Result<usize> {
        let n = self.order();
        if i >= n || j >= n {
            return Err(Error::IndexError {
                index: i.max(j),
                len: n,
            });
        }
        Ok(self.cayley_table[i][j])
    }

    pub fn inverse(&self, i: usize) -> Result<usize> {
        self.inverse_table.get(i).copied().ok_or(Error::IndexError {
            index: i,
            len: self.order(),
        })
    }

    /// Index of the element matching `r` within the matching tolerance.
    pub fn index_of(&self, r: &RotationElement) -> Option<usize> {
        find_element(&self.elements, r)
    }

    /// Exhaustively re-checks closure, inverses, orthogonality and
    /// distinctness. Returns the largest deviation seen.
    pub fn verify(&self) -> Result<f64> {
        let fail = |reason: String| Error::GroupConstructionFailure {
            name: self.name.to_string(),
            reason,
        };
        let n = self.order();
        let mut worst: f64 = 0.0;
        for (i, e) in self.elements.iter().enumerate() {
            worst = worst
                .max(e.orthogonality_error())
                .max((e.determinant() - 1.0).abs());
            let inv = e.mul(&self.elements[self.inverse_table[i]]);
            worst = worst.max(inv.distance(&RotationElement::IDENTITY));
            for j in 0..n {
                let prod = e.mul(&self.elements[j]);
                worst = worst.max(prod.distance(&self.elements[self.cayley_table[i][j]]));
                if j > i && e.distance(&self.elements[j]) <= 1e-6 {
                    return Err(fail(format!("elements {i} and {j} coincide")));
                }
            }
        }
        if worst > 1e-12 {
            return Err(fail(format!("table deviation {worst:e} exceeds 1e-12")));
        }
        Ok(worst)
    }

    /// Plain-text dump: one line per element with its row-major matrix, then
    /// the Cayley table.
    pub fn info_text(&self) -> String {
        let mut out = String::new();
        for e in &self.elements {
            let vals: Vec<String> = e
                .matrix
                .iter()
                .flatten()
                .map(|v| format!("{:.6}", if *v == 0.0 { 0.0 } else { *v }))
                .collect();
            out.push_str(&vals.join(" "));
            out.push('\n');
        }
        for row in &self.cayley_table {
            let vals: Vec<String> = row.iter().map(|k| k.to_string()).collect();
            out.push_str(&vals.join(" "));
            out.push('\n');
        }
        out
    }
}

/// The rotational part of a rigid motion.
#[derive(Clone, Debug)]
pub enum MotionRotation {
    /// An element of a finite group, by index.
    Group {
        group: Arc<FiniteRotationGroup>,
        index: usize,
    },
    /// An arbitrary rotation, used for SO(3) test motions.
    Free(RotationElement),
}

impl MotionRotation {
    pub fn matrix(&self) -> RotationElement {
        match self {
            MotionRotation::Group { group, index } => group.elements[*index],
            MotionRotation::Free(r) => *r,
        }
    }
}

/// An element `(t, g)` of `ℝ³ ⋊ G`, acting by `x ↦ t + g·x`.
#[derive(Clone, Debug)]
pub struct RigidMotion {
    pub translation: Vec3,
    pub rotation: MotionRotation,
}

impl RigidMotion {
    pub fn identity(group: Arc<FiniteRotationGroup>) -> Self {
        RigidMotion {
            translation: [0.0; 3],
            rotation: MotionRotation::Group { group, index: 0 },
        }
    }

    pub fn in_group(
        group: Arc<FiniteRotationGroup>,
        index: usize,
        translation: Vec3,
    ) -> Result<Self> {
        group.element(index)?;
        Ok(RigidMotion {
            translation,
            rotation: MotionRotation::Group { group, index },
        })
    }

    pub fn free(rotation: RotationElement, translation: Vec3) -> Self {
        RigidMotion {
            translation,
            rotation: MotionRotation::Free(rotation),
        }
    }

    pub fn matrix(&self) -> RotationElement {
        self.rotation.matrix()
    }

    pub fn group_index(&self) -> Option<usize> {
        match &self.rotation {
            MotionRotation::Group { index, .. } => Some(*index),
            MotionRotation::Free(_) => None,
        }
    }
}

/// `(q, h)·(p, g) = (q + h·p, h·g)`.
pub fn motion_compose(m1: &RigidMotion, m2: &RigidMotion) -> Result<RigidMotion> {
    let translation = add(m1.translation, m1.matrix().apply(m2.translation));
    let rotation = match (&m1.rotation, &m2.rotation) {
        (
            MotionRotation::Group { group: g1, index: i },
            MotionRotation::Group { group: g2, index: j },
        ) => {
            if g1 != g2 {
                return Err(Error::GroupMismatch(format!(
                    "cannot compose motions over {} and {}",
                    g1.name, g2.name
                )));
            }
            MotionRotation::Group {
                group: g1.clone(),
                index: g1.multiply(*i, *j)?,
            }
        }
        (a, b) => MotionRotation::Free(a.matrix().mul(&b.matrix())),
    };
    Ok(RigidMotion {
        translation,
        rotation,
    })
}

/// `(q, h)⁻¹ = (−h⁻¹q, h⁻¹)`.
pub fn motion_inverse(m: &RigidMotion) -> RigidMotion {
    let r = m.matrix();
    let back = r.apply_inverse(m.translation);
    let translation = [-back[0], -back[1], -back[2]];
    let rotation = match &m.rotation {
        MotionRotation::Group { group, index } => MotionRotation::Group {
            group: group.clone(),
            index: group.inverse_table[*index],
        },
        MotionRotation::Free(r) => MotionRotation::Free(r.inverse()),
    };
    RigidMotion {
        translation,
        rotation,
    }
}

/// `(q, h)·x = q + h·x`.
pub fn motion_act(m: &RigidMotion, x: Vec3) -> Result<Vec3> {
    if !x.iter().all(|v| v.is_finite()) || !m.translation.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteValue("motion_act input"));
    }
    Ok(add(m.translation, m.matrix().apply(x)))
}

/// Where a random rotation is drawn from.
#[derive(Clone, Copy, Debug)]
pub enum RotationMode<'a> {
    Group(&'a FiniteRotationGroup),
    So3,
    ZAxis,
}

pub fn sample_rotation<R: Rng + ?Sized>(rng: &mut R, mode: RotationMode<'_>) -> RotationElement {
    match mode {
        RotationMode::Group(g) => g.elements[rng.random_range(0..g.order())],
        RotationMode::So3 => loop {
            let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
            let n2: f64 = q.iter().map(|v| v * v).sum();
            if n2 > 1e-12 {
                break RotationElement::from_quaternion(q);
            }
        },
        RotationMode::ZAxis => RotationElement::rot_z(rng.random_range(0.0..2.0 * PI)),
    }
}

/// Acts on a lifted cloud: positions move to `g·p + t` and the feature at
/// `(p, h)` moves to group slot `g·h`, values unchanged.
pub fn act_on_lifted<T: Real>(m: &RigidMotion, x: &LiftedCloud<T>) -> Result<LiftedCloud<T>> {
    let g = match &m.rotation {
        MotionRotation::Group { group, index } if **group == *x.group => *index,
        MotionRotation::Group { group, .. } => {
            return Err(Error::GroupMismatch(format!(
                "motion over {} applied to a cloud lifted over {}",
                group.name, x.group.name
            )))
        }
        MotionRotation::Free(_) => {
            return Err(Error::GroupMismatch(format!(
                "free rotation applied to a cloud lifted over {}",
                x.group.name
            )))
        }
    };
    let positions = x
        .positions
        .iter()
        .map(|p| motion_act(m, *p))
        .collect::<Result<Vec<_>>>()?;
    let order = x.group.order();
    let d = x.channels();
    let src = x.features.data();
    let mut out = vec![T::zero(); src.len()];
    let row = &x.group.cayley_table[g];
    for p in 0..x.len() {
        for h in 0..order {
            let from = (p * order + h) * d;
            let to = (p * order + row[h]) * d;
            out[to..to + d].copy_from_slice(&src[from..from + d]);
        }
    }
    LiftedCloud::new(positions, x.group.clone(), Tensor::new(x.features.shape().to_vec(), out)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn group(name: GroupName) -> Arc<FiniteRotationGroup> {
        Arc::new(make_group(name).unwrap())
    }

    fn random_vec(rng: &mut ChaCha8Rng) -> Vec3 {
        std::array::from_fn(|_| rng.random_range(-2.0..2.0))
    }

    fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
        (0..3).all(|i| (a[i] - b[i]).abs() <= tol)
    }

    #[test]
    fn group_orders_and_tables() {
        for name in GroupName::ALL {
            let g = make_group(name).unwrap();
            assert_eq!(g.order(), name.order());
            assert!(g.verify().unwrap() <= 1e-12);
            assert_eq!(g.elements[0], RotationElement::IDENTITY);
            for (i, row) in g.cayley_table.iter().enumerate() {
                assert_eq!(row[0], i);
                assert_eq!(g.cayley_table[0][i], i);
            }
        }
    }

    #[test]
    fn g24_entries_are_signed_permutation_values() {
        let g = make_group(GroupName::G24).unwrap();
        for e in &g.elements {
            for v in e.matrix.iter().flatten() {
                assert!(*v == -1.0 || *v == 0.0 || *v == 1.0, "entry {v}");
            }
        }
    }

    #[test]
    fn g12_dihedral_relation_holds() {
        // Rz(a)·Ry(π) = Ry(π)·Rz(−a) for every rotation angle a in the group.
        let g = make_group(GroupName::G12).unwrap();
        let flip = RotationElement::rot_y(PI);
        for k in 0..6 {
            let a = k as f64 * PI / 3.0;
            let lhs = RotationElement::rot_z(a).mul(&flip);
            let rhs = flip.mul(&RotationElement::rot_z(-a));
            assert!(lhs.distance(&rhs) < 1e-12);
            assert!(g.index_of(&lhs).is_some());
        }
        // brute force over all 144 products
        for a in &g.elements {
            for b in &g.elements {
                assert!(g.index_of(&a.mul(b)).is_some());
            }
        }
    }

    #[test]
    fn multiply_examples() {
        let g4 = make_group(GroupName::G4).unwrap();
        let quarter = g4.index_of(&RotationElement::rot_z(PI / 2.0)).unwrap();
        let half = g4.index_of(&RotationElement::rot_z(PI)).unwrap();
        assert_eq!(g4.multiply(quarter, quarter).unwrap(), half);

        let g24 = make_group(GroupName::G24).unwrap();
        for i in 0..24 {
            assert_eq!(g24.multiply(i, g24.identity_index).unwrap(), i);
        }

        let g12 = make_group(GroupName::G12).unwrap();
        let flip = g12.index_of(&RotationElement::rot_y(PI)).unwrap();
        let sixth = g12.index_of(&RotationElement::rot_z(PI / 3.0)).unwrap();
        let expected = RotationElement::rot_z(-PI / 3.0).mul(&RotationElement::rot_y(PI));
        let got = g12.multiply(flip, sixth).unwrap();
        assert!(g12.elements[got].distance(&expected) < 1e-12);

        assert!(matches!(
            g4.multiply(4, 0),
            Err(Error::IndexError { index: 4, len: 4 })
        ));
    }

    #[test]
    fn unknown_group_name() {
        assert!(matches!(
            make_group_by_name("g60"),
            Err(Error::UnknownGroup(_))
        ));
    }

    #[test]
    fn compose_and_inverse_examples() {
        let g4 = group(GroupName::G4);
        let quarter = g4.index_of(&RotationElement::rot_z(PI / 2.0)).unwrap();
        let m1 = RigidMotion::in_group(g4.clone(), quarter, [1.0, 0.0, 0.0]).unwrap();
        let m2 = RigidMotion::in_group(g4.clone(), 0, [1.0, 0.0, 0.0]).unwrap();
        let c = motion_compose(&m1, &m2).unwrap();
        assert!(close(c.translation, [1.0, 1.0, 0.0], 1e-15));
        assert_eq!(c.group_index(), Some(quarter));

        let inv = motion_inverse(&m1);
        assert!(close(inv.translation, [0.0, 1.0, 0.0], 1e-15));
        assert!(inv.matrix().distance(&RotationElement::rot_z(-PI / 2.0)) < 1e-12);

        let id = motion_compose(&m1, &inv).unwrap();
        assert!(close(id.translation, [0.0; 3], 1e-12));
        assert_eq!(id.group_index(), Some(0));

        let e = RigidMotion::identity(g4.clone());
        let e_inv = motion_inverse(&e);
        assert_eq!(e_inv.translation, [0.0; 3]);
        assert_eq!(e_inv.group_index(), Some(0));
    }

    #[test]
    fn compose_rejects_mixed_groups() {
        let a = RigidMotion::identity(group(GroupName::G4));
        let b = RigidMotion::identity(group(GroupName::G8));
        assert!(matches!(
            motion_compose(&a, &b),
            Err(Error::GroupMismatch(_))
        ));
    }

    #[test]
    fn act_examples() {
        let m = RigidMotion::free(RotationElement::rot_z(PI / 2.0), [0.0; 3]);
        assert!(close(motion_act(&m, [1.0, 0.0, 0.0]).unwrap(), [0.0, 1.0, 0.0], 1e-15));
        let t = RigidMotion::free(RotationElement::IDENTITY, [5.0, 0.0, 0.0]);
        assert_eq!(motion_act(&t, [1.0, 2.0, 3.0]).unwrap(), [6.0, 2.0, 3.0]);
        assert!(matches!(
            motion_act(&t, [f64::NAN, 0.0, 0.0]),
            Err(Error::NonFiniteValue(_))
        ));
    }

    #[test]
    fn random_motion_laws() {
        let g24 = group(GroupName::G24);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let a = RigidMotion::in_group(g24.clone(), rng.random_range(0..24), random_vec(&mut rng))
                .unwrap();
            let b = RigidMotion::free(
                sample_rotation(&mut rng, RotationMode::So3),
                random_vec(&mut rng),
            );
            let x = random_vec(&mut rng);
            // inverse of inverse
            let ii = motion_inverse(&motion_inverse(&a));
            assert!(close(ii.translation, a.translation, 1e-12));
            assert_eq!(ii.group_index(), a.group_index());
            // composed action
            let ab = motion_compose(&a, &b).unwrap();
            let lhs = motion_act(&ab, x).unwrap();
            let rhs = motion_act(&a, motion_act(&b, x).unwrap()).unwrap();
            assert!(close(lhs, rhs, 1e-12));
            // inverse undoes the action
            let back = motion_act(&motion_inverse(&b), motion_act(&b, x).unwrap()).unwrap();
            assert!(close(back, x, 1e-12));
        }
    }

    #[test]
    fn sampling_modes() {
        let g1 = make_group(GroupName::G1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            assert_eq!(
                sample_rotation(&mut rng, RotationMode::Group(&g1)),
                RotationElement::IDENTITY
            );
        }
        let mut mean = [0.0; 3];
        let n = 10_000;
        for _ in 0..n {
            let r = sample_rotation(&mut rng, RotationMode::So3);
            assert!(r.orthogonality_error() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
            let v = r.apply([0.0, 0.0, 1.0]);
            for k in 0..3 {
                mean[k] += v[k] / n as f64;
            }
        }
        assert!(norm(mean) < 0.05, "mean axis {mean:?}");

        let z = sample_rotation(&mut rng, RotationMode::ZAxis);
        assert_eq!(z.apply([0.0, 0.0, 1.0]), [0.0, 0.0, 1.0]);

        let draw = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            (0..5)
                .map(|_| sample_rotation(&mut r, RotationMode::So3))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
    }

    #[test]
    fn info_text_layout() {
        let g1 = make_group(GroupName::G1).unwrap();
        assert_eq!(
            g1.info_text(),
            "1.000000 0.000000 0.000000 0.000000 1.000000 0.000000 0.000000 0.000000 1.000000\n0\n"
        );
    }

    fn random_lifted(rng: &mut ChaCha8Rng, g: &Arc<FiniteRotationGroup>, n: usize, d: usize) -> LiftedCloud<f64> {
        let positions = (0..n).map(|_| random_vec(rng)).collect();
        let data = (0..n * g.order() * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        LiftedCloud::new(positions, g.clone(), Tensor::new(vec![n, g.order(), d], data).unwrap()).unwrap()
    }

    #[test]
    fn lifted_action_is_a_left_action() {
        let g4 = group(GroupName::G4);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = random_lifted(&mut rng, &g4, 5, 3);
        let same = act_on_lifted(&RigidMotion::identity(g4.clone()), &x).unwrap();
        assert_eq!(same.features, x.features);
        assert_eq!(same.positions, x.positions);
        for i in 0..4 {
            for j in 0..4 {
                let a = RigidMotion::in_group(g4.clone(), i, random_vec(&mut rng)).unwrap();
                let b = RigidMotion::in_group(g4.clone(), j, random_vec(&mut rng)).unwrap();
                let two_step = act_on_lifted(&a, &act_on_lifted(&b, &x).unwrap()).unwrap();
                let one_step = act_on_lifted(&motion_compose(&a, &b).unwrap(), &x).unwrap();
                assert_eq!(two_step.features, one_step.features);
                for (p, q) in two_step.positions.iter().zip(&one_step.positions) {
                    assert!(close(*p, *q, 1e-12));
                }
            }
        }
    }

    #[test]
    fn lifted_action_on_constant_slices_moves_positions_only() {
        let g8 = group(GroupName::G8);
        let n = 4;
        let data: Vec<f64> = (0..n).flat_map(|p| std::iter::repeat(p as f64).take(8 * 2)).collect();
        let x = LiftedCloud::new(
            vec![[1.0, 0.0, 0.0]; n],
            g8.clone(),
            Tensor::new(vec![n, 8, 2], data).unwrap(),
        )
        .unwrap();
        let m = RigidMotion::in_group(g8.clone(), 3, [0.0, 0.0, 1.0]).unwrap();
        let y = act_on_lifted(&m, &x).unwrap();
        assert_eq!(y.features, x.features);
        assert_ne!(y.positions, x.positions);
    }

    #[test]
    fn lifted_action_rejects_other_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_lifted(&mut rng, &group(GroupName::G4), 2, 1);
        let m = RigidMotion::identity(group(GroupName::G8));
        assert!(matches!(act_on_lifted(&m, &x), Err(Error::GroupMismatch(_))));
        let f = RigidMotion::free(RotationElement::IDENTITY, [0.0; 3]);
        assert!(matches!(act_on_lifted(&f, &x), Err(Error::GroupMismatch(_))));
    }
}
