//! Rooted-tree skeletons and the pairwise topology matrices consumed by the
//! graph-relative attention encoder.
//!
//! A [`Skeleton`] is a set of joint positions in normalized object space
//! `[-0.5, 0.5]^3` together with a parent array describing a single rooted
//! tree. [`TopologyMatrices`] holds the clipped hop distance between every
//! ordered joint pair and a six-way relation code (see [`Relation`]).

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Half-extent of the normalized coordinate box.
pub const COORD_LIMIT: f32 = 0.5;
/// Default clipping distance for the topological distance codebook.
pub const DEFAULT_D_MAX: usize = 5;
/// Number of relation codes.
pub const N_RELATIONS: usize = 6;

/// Bounds used by [`sample_random_tree`].
pub const MIN_SAMPLED_JOINTS: usize = 4;
pub const MAX_SAMPLED_JOINTS: usize = 12;
pub const MIN_BONE_LENGTH: f32 = 0.08;
pub const MAX_BONE_LENGTH: f32 = 0.35;

// Sampled joints stay inside this box so capsules are not clipped by the grid.
const SAMPLE_LIMIT: f32 = 0.42;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SkeletonError {
    #[error("a skeleton needs at least one joint")]
    Empty,
    #[error("{joints} joints but {parents} parent entries")]
    LengthMismatch { joints: usize, parents: usize },
    #[error("expected exactly one root, found {0}")]
    MultipleRoots(usize),
    #[error("parent relation contains a cycle through joint {0}")]
    CycleDetected(usize),
    #[error("joint {joint} has parent index {parent} outside [0, {n})")]
    IndexOutOfRange { joint: usize, parent: i64, n: usize },
    #[error("joint {joint} coordinate {axis} = {value} lies outside [-0.5, 0.5]")]
    CoordinateOutOfBounds { joint: usize, axis: usize, value: f32 },
    #[error("joint {joint} coordinate {axis} is not finite")]
    NonFiniteCoordinate { joint: usize, axis: usize },
    #[error("joint count {n} outside [{min}, {max}]")]
    InvalidJointCount { n: usize, min: usize, max: usize },
    #[error("d_max must be at least 1")]
    InvalidDMax,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// A validated rooted tree of joints.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    joints: Vec<[f32; 3]>,
    parents: Vec<Option<usize>>,
    root: usize,
}

impl Skeleton {
    /// Validates joints and a parent array (`-1` marks the root).
    pub fn new(joints: Vec<[f32; 3]>, parents: &[i64]) -> Result<Self, SkeletonError> {
        validate_skeleton(joints, parents)
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn joints(&self) -> &[[f32; 3]] {
        &self.joints
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parents[joint]
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// Parent array in the `-1`-for-root convention.
    pub fn parent_indices(&self) -> Vec<i64> {
        self.parents
            .iter()
            .map(|p| p.map_or(-1, |p| p as i64))
            .collect()
    }

    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut children = vec![Vec::new(); self.len()];
        for (i, p) in self.parents.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(i);
            }
        }
        children
    }

    pub fn is_leaf(&self, joint: usize) -> bool {
        !self.parents.iter().any(|p| *p == Some(joint))
    }

    /// Same topology and coordinates shifted by `offset`, without validation
    /// of the bounds. Used by evaluation code that compares against displaced
    /// skeletons.
    pub fn translated_unchecked(&self, offset: [f32; 3]) -> Self {
        let joints = self
            .joints
            .iter()
            .map(|j| [j[0] + offset[0], j[1] + offset[1], j[2] + offset[2]])
            .collect();
        Self {
            joints,
            parents: self.parents.clone(),
            root: self.root,
        }
    }

    /// Reorders joints so that new joint `i` is old joint `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, SkeletonError> {
        let n = self.len();
        let mut inverse = vec![usize::MAX; n];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let joints = perm.iter().map(|&old| self.joints[old]).collect();
        let parents: Vec<i64> = perm
            .iter()
            .map(|&old| self.parents[old].map_or(-1, |p| inverse[p] as i64))
            .collect();
        Self::new(joints, &parents)
    }
}

/// Checks the tree invariants and returns a [`Skeleton`].
pub fn validate_skeleton(joints: Vec<[f32; 3]>, parents: &[i64]) -> Result<Skeleton, SkeletonError> {
    let n = joints.len();
    if n == 0 {
        return Err(SkeletonError::Empty);
    }
    if parents.len() != n {
        return Err(SkeletonError::LengthMismatch {
            joints: n,
            parents: parents.len(),
        });
    }
    for (joint, coords) in joints.iter().enumerate() {
        for (axis, &value) in coords.iter().enumerate() {
            if !value.is_finite() {
                return Err(SkeletonError::NonFiniteCoordinate { joint, axis });
            }
            if !(-COORD_LIMIT..=COORD_LIMIT).contains(&value) {
                return Err(SkeletonError::CoordinateOutOfBounds { joint, axis, value });
            }
        }
    }
    let mut resolved = Vec::with_capacity(n);
    for (joint, &p) in parents.iter().enumerate() {
        if p == -1 {
            resolved.push(None);
        } else if p < 0 || p as usize >= n {
            return Err(SkeletonError::IndexOutOfRange { joint, parent: p, n });
        } else {
            resolved.push(Some(p as usize));
        }
    }
    let roots: Vec<usize> = (0..n).filter(|&i| resolved[i].is_none()).collect();
    if roots.len() > 1 {
        return Err(SkeletonError::MultipleRoots(roots.len()));
    }
    // Walk up from every joint; a walk longer than n revisits a joint.
    for start in 0..n {
        let mut cur = start;
        let mut steps = 0;
        while let Some(p) = resolved[cur] {
            cur = p;
            steps += 1;
            if steps > n {
                return Err(SkeletonError::CycleDetected(start));
            }
        }
    }
    // With zero roots every walk loops forever, so the check above fires.
    let root = roots[0];
    Ok(Skeleton {
        joints,
        parents: resolved,
        root,
    })
}

/// Relation code of an ordered joint pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Relation {
    SelfLoop = 0,
    Parent = 1,
    Child = 2,
    Sibling = 3,
    Distant = 4,
    EndEffector = 5,
}

impl Relation {
    pub fn code(self) -> usize {
        self as usize
    }
}

/// Pairwise clipped distances and relation codes, both row-major `N x N`.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologyMatrices {
    n: usize,
    d_max: usize,
    distance: Vec<usize>,
    relation: Vec<usize>,
}

impl TopologyMatrices {
    pub fn new(skel: &Skeleton, d_max: usize) -> Result<Self, SkeletonError> {
        let distance = topo_distance_matrix(skel, d_max)?;
        let relation = relation_matrix(skel);
        Ok(Self {
            n: skel.len(),
            d_max,
            distance,
            relation,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn d_max(&self) -> usize {
        self.d_max
    }

    pub fn distance(&self, i: usize, j: usize) -> usize {
        self.distance[i * self.n + j]
    }

    pub fn relation(&self, i: usize, j: usize) -> usize {
        self.relation[i * self.n + j]
    }

    pub fn distances(&self) -> &[usize] {
        &self.distance
    }

    pub fn relations(&self) -> &[usize] {
        &self.relation
    }
}

/// `D[i][j] = min(hops(i, j), d_max)`, row-major.
pub fn topo_distance_matrix(skel: &Skeleton, d_max: usize) -> Result<Vec<usize>, SkeletonError> {
    if d_max < 1 {
        return Err(SkeletonError::InvalidDMax);
    }
    // Tree paths go through the lowest common ancestor: depth(i) + depth(j) - 2 depth(lca).
    let n = skel.len();
    let depth = depths(skel);
    let mut out = vec![0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let (mut a, mut b) = (i, j);
            while depth[a] > depth[b] {
                a = skel.parent(a).expect("non-root has a parent");
            }
            while depth[b] > depth[a] {
                b = skel.parent(b).expect("non-root has a parent");
            }
            while a != b {
                a = skel.parent(a).expect("non-root has a parent");
                b = skel.parent(b).expect("non-root has a parent");
            }
            let hops = depth[i] + depth[j] - 2 * depth[a];
            out[i * n + j] = hops.min(d_max);
            out[j * n + i] = hops.min(d_max);
        }
    }
    Ok(out)
}

fn depths(skel: &Skeleton) -> Vec<usize> {
    (0..skel.len())
        .map(|mut i| {
            let mut d = 0;
            while let Some(p) = skel.parent(i) {
                i = p;
                d += 1;
            }
            d
        })
        .collect()
}

/// Relation codes for every ordered pair, row-major.
///
/// Diagonal: end effector for leaves, self otherwise. Off-diagonal
/// precedence: parent, child, sibling, distant.
pub fn relation_matrix(skel: &Skeleton) -> Vec<usize> {
    let n = skel.len();
    let children = skel.children();
    let mut out = vec![Relation::Distant.code(); n * n];
    for i in 0..n {
        for j in 0..n {
            let rel = if i == j {
                if children[i].is_empty() {
                    Relation::EndEffector
                } else {
                    Relation::SelfLoop
                }
            } else if skel.parent(i) == Some(j) {
                Relation::Parent
            } else if skel.parent(j) == Some(i) {
                Relation::Child
            } else if skel.parent(i).is_some() && skel.parent(i) == skel.parent(j) {
                Relation::Sibling
            } else {
                Relation::Distant
            };
            out[i * n + j] = rel.code();
        }
    }
    out
}

/// `(parent, child)` for every non-root joint, in child index order.
pub fn bone_list(skel: &Skeleton) -> Vec<(usize, usize)> {
    (0..skel.len())
        .filter_map(|c| skel.parent(c).map(|p| (p, c)))
        .collect()
}

/// Topology families of the synthetic data generator. The discriminant is
/// the category label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Chain = 0,
    Star = 1,
    Quadruped = 2,
    Random = 3,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Chain, Family::Star, Family::Quadruped, Family::Random];

    pub fn label(self) -> usize {
        self as usize
    }

    pub fn from_label(label: usize) -> Option<Self> {
        Self::ALL.get(label).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Chain => "chain",
            Family::Star => "star",
            Family::Quadruped => "quadruped",
            Family::Random => "random",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| format!("unknown family `{s}`"))
    }
}

/// Parent array of a family at a given size; the random family draws from `rng`.
fn family_topology(family: Family, n: usize, rng: &mut ChaCha8Rng) -> Vec<i64> {
    let mut parents = vec![-1i64; n];
    match family {
        Family::Chain => {
            for (i, p) in parents.iter_mut().enumerate().skip(1) {
                *p = i as i64 - 1;
            }
        }
        Family::Star => {
            for p in parents.iter_mut().skip(1) {
                *p = 0;
            }
        }
        Family::Quadruped => {
            // 0 = hips, 1 = chest; limbs are grown round-robin in the order
            // hind-left, hind-right, fore-left, fore-right, neck, tail.
            if n > 1 {
                parents[1] = 0;
            }
            let mut tips: [i64; 6] = [0, 0, 1, 1, 1, 0];
            for (k, i) in (2..n).enumerate() {
                let limb = k % tips.len();
                parents[i] = tips[limb];
                tips[limb] = i as i64;
            }
        }
        Family::Random => {
            for (i, p) in parents.iter_mut().enumerate().skip(1) {
                *p = rng.random_range(0..i) as i64;
            }
        }
    }
    parents
}

fn quadruped_direction(joint: usize) -> [f32; 3] {
    if joint == 1 {
        return [1.0, 0.0, 0.0];
    }
    match (joint - 2) % 6 {
        0 => [-0.2, -1.0, 0.5],
        1 => [-0.2, -1.0, -0.5],
        2 => [0.2, -1.0, 0.5],
        3 => [0.2, -1.0, -0.5],
        4 => [0.6, 1.0, 0.0],
        _ => [-1.0, 0.3, 0.0],
    }
}

fn normalize(v: [f32; 3]) -> Option<[f32; 3]> {
    let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    (len > 1e-6).then(|| [v[0] / len, v[1] / len, v[2] / len])
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f32; 3] {
    loop {
        let v = [
            rng.sample::<f32, _>(StandardNormal),
            rng.sample::<f32, _>(StandardNormal),
            rng.sample::<f32, _>(StandardNormal),
        ];
        if let Some(u) = normalize(v) {
            return u;
        }
    }
}

fn inside(p: [f32; 3], limit: f32) -> bool {
    p.iter().all(|c| c.abs() <= limit)
}

/// Deterministic random skeleton of the given family.
///
/// Bone lengths are drawn from `[MIN_BONE_LENGTH, MAX_BONE_LENGTH]` and every
/// joint lands inside `[-0.42, 0.42]^3`.
pub fn sample_random_tree(seed: u64, n_joints: usize, family: Family) -> Result<Skeleton, SkeletonError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_tree_with(&mut rng, n_joints, family)
}

/// Same as [`sample_random_tree`] but drawing from a caller-owned generator.
pub fn sample_tree_with(rng: &mut ChaCha8Rng, n_joints: usize, family: Family) -> Result<Skeleton, SkeletonError> {
    if !(MIN_SAMPLED_JOINTS..=MAX_SAMPLED_JOINTS).contains(&n_joints) {
        return Err(SkeletonError::InvalidJointCount {
            n: n_joints,
            min: MIN_SAMPLED_JOINTS,
            max: MAX_SAMPLED_JOINTS,
        });
    }
    let parents = family_topology(family, n_joints, rng);
    let mut joints = vec![[0f32; 3]; n_joints];
    let mut heading = vec![[0f32; 3]; n_joints];
    joints[0] = [
        rng.random_range(-0.12f32..0.12),
        rng.random_range(-0.12f32..0.12),
        rng.random_range(-0.12f32..0.12),
    ];
    heading[0] = random_unit(rng);
    // A random rotation about the vertical axis keeps quadrupeds upright but varied.
    let yaw: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    for i in 1..n_joints {
        let p = parents[i] as usize;
        let base = match family {
            Family::Chain => {
                let h = heading[p];
                let r = random_unit(rng);
                normalize([h[0] + 0.8 * r[0], h[1] + 0.8 * r[1], h[2] + 0.8 * r[2]]).unwrap_or(r)
            }
            Family::Quadruped => {
                let d = quadruped_direction(i);
                let (s, c) = yaw.sin_cos();
                let rotated = [c * d[0] - s * d[2], d[1], s * d[0] + c * d[2]];
                let r = random_unit(rng);
                normalize([rotated[0] + 0.25 * r[0], rotated[1] + 0.25 * r[1], rotated[2] + 0.25 * r[2]])
                    .unwrap_or(r)
            }
            Family::Star | Family::Random => random_unit(rng),
        };
        let mut placed = None;
        for attempt in 0..32 {
            let dir = if attempt == 0 { base } else { random_unit(rng) };
            let len = rng.random_range(MIN_BONE_LENGTH..=MAX_BONE_LENGTH);
            let c = [
                joints[p][0] + len * dir[0],
                joints[p][1] + len * dir[1],
                joints[p][2] + len * dir[2],
            ];
            if inside(c, SAMPLE_LIMIT) {
                placed = Some((c, dir));
                break;
            }
        }
        let (pos, dir) = placed.unwrap_or_else(|| {
            // Stepping toward the origin by the minimum length stays in the box.
            let q = joints[p];
            let dir = normalize([-q[0], -q[1], -q[2]]).unwrap_or([1.0, 0.0, 0.0]);
            let len = MIN_BONE_LENGTH;
            ([q[0] + len * dir[0], q[1] + len * dir[1], q[2] + len * dir[2]], dir)
        });
        joints[i] = pos;
        heading[i] = dir;
    }
    Skeleton::new(joints, &parents)
}

/// Writes the plain-text skeleton format: a count line, then `x y z parent` per joint.
pub fn format_skeleton(skel: &Skeleton) -> String {
    let mut out = format!("{}\n", skel.len());
    for (j, p) in skel.joints().iter().zip(skel.parent_indices()) {
        out.push_str(&format!("{} {} {} {}\n", j[0], j[1], j[2], p));
    }
    out
}

/// Parses the plain-text skeleton format. Errors name the offending line (1-based).
pub fn parse_skeleton(text: &str) -> Result<Skeleton, SkeletonError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (header_idx, header) = lines.next().ok_or(SkeletonError::Parse {
        line: 1,
        message: "missing joint count".into(),
    })?;
    let n: usize = header.trim().parse().map_err(|_| SkeletonError::Parse {
        line: header_idx + 1,
        message: format!("bad joint count `{}`", header.trim()),
    })?;
    let mut joints = Vec::with_capacity(n);
    let mut parents = Vec::with_capacity(n);
    for _ in 0..n {
        let (idx, line) = lines.next().ok_or(SkeletonError::Parse {
            line: text.lines().count() + 1,
            message: format!("expected {n} joint lines"),
        })?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = |message: String| SkeletonError::Parse { line: idx + 1, message };
        if fields.len() != 4 {
            return Err(bad(format!("expected `x y z parent`, got {} fields", fields.len())));
        }
        let mut xyz = [0f32; 3];
        for (k, f) in fields[..3].iter().enumerate() {
            xyz[k] = f.parse().map_err(|_| bad(format!("bad coordinate `{f}`")))?;
        }
        let parent: i64 = fields[3].parse().map_err(|_| bad(format!("bad parent `{}`", fields[3])))?;
        joints.push(xyz);
        parents.push(parent);
    }
    if let Some((idx, _)) = lines.next() {
        return Err(SkeletonError::Parse {
            line: idx + 1,
            message: "trailing content after joints".into(),
        });
    }
    Skeleton::new(joints, &parents)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: usize) -> Skeleton {
        let joints = (0..n).map(|i| [0.0, -0.4 + 0.1 * i as f32, 0.0]).collect();
        let parents: Vec<i64> = (0..n as i64).map(|i| i - 1).collect();
        Skeleton::new(joints, &parents).unwrap()
    }

    #[test]
    fn single_joint_is_valid() {
        let s = Skeleton::new(vec![[0.0; 3]], &[-1]).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.root(), 0);
    }

    #[test]
    fn chain_is_valid() {
        assert_eq!(chain(3).parent_indices(), vec![-1, 0, 1]);
    }

    #[test]
    fn two_node_cycle_rejected() {
        let err = Skeleton::new(vec![[0.0; 3]; 2], &[1, 0]).unwrap_err();
        assert!(matches!(err, SkeletonError::CycleDetected(_)));
    }

    #[test]
    fn cycle_below_root_rejected() {
        let err = Skeleton::new(vec![[0.0; 3]; 4], &[-1, 2, 3, 1]).unwrap_err();
        assert!(matches!(err, SkeletonError::CycleDetected(_)));
    }

    #[test]
    fn validation_errors() {
        assert_eq!(
            Skeleton::new(vec![[0.0; 3]; 2], &[-1, -1]).unwrap_err(),
            SkeletonError::MultipleRoots(2)
        );
        assert!(matches!(
            Skeleton::new(vec![[0.0; 3]; 2], &[-1, 5]).unwrap_err(),
            SkeletonError::IndexOutOfRange { joint: 1, parent: 5, .. }
        ));
        assert!(matches!(
            Skeleton::new(vec![[0.0, 0.6, 0.0]], &[-1]).unwrap_err(),
            SkeletonError::CoordinateOutOfBounds { joint: 0, axis: 1, .. }
        ));
        assert!(matches!(
            Skeleton::new(vec![[f32::NAN, 0.0, 0.0]], &[-1]).unwrap_err(),
            SkeletonError::NonFiniteCoordinate { joint: 0, axis: 0 }
        ));
        assert_eq!(Skeleton::new(vec![], &[]).unwrap_err(), SkeletonError::Empty);
    }

    #[test]
    fn distance_examples() {
        let d = topo_distance_matrix(&chain(3), 5).unwrap();
        assert_eq!(d[2], 2);
        let d = topo_distance_matrix(&chain(8), 5).unwrap();
        assert_eq!(d[7], 5);
        assert_eq!(d[7 * 8], 5);
        assert!((0..8).all(|i| d[i * 8 + i] == 0));
        assert_eq!(topo_distance_matrix(&chain(3), 0).unwrap_err(), SkeletonError::InvalidDMax);
    }

    #[test]
    fn relation_examples() {
        let s = Skeleton::new(vec![[0.0; 3]; 3], &[-1, 0, 0]).unwrap();
        let r = relation_matrix(&s);
        assert_eq!(r[3], 1, "R[1][0] parent");
        assert_eq!(r[1], 2, "R[0][1] child");
        assert_eq!(r[3 + 2], 3, "R[1][2] sibling");
        assert_eq!(r[3 + 1], 5, "R[1][1] end effector");
        assert_eq!(r[0], 0, "R[0][0] self");

        let single = Skeleton::new(vec![[0.0; 3]], &[-1]).unwrap();
        assert_eq!(relation_matrix(&single), vec![5]);

        let r = relation_matrix(&chain(4));
        assert_eq!(r[3], 4);
    }

    #[test]
    fn bones() {
        assert_eq!(bone_list(&chain(3)), vec![(0, 1), (1, 2)]);
        assert!(bone_list(&chain(1)).is_empty());
        let star = Skeleton::new(vec![[0.0; 3]; 4], &[-1, 0, 0, 0]).unwrap();
        assert_eq!(bone_list(&star), vec![(0, 1), (0, 2), (0, 3)]);
    }

    #[test]
    fn sampler_topologies() {
        let s = sample_random_tree(7, 5, Family::Chain).unwrap();
        assert_eq!(s.parent_indices(), vec![-1, 0, 1, 2, 3]);
        let s = sample_random_tree(7, 5, Family::Star).unwrap();
        assert_eq!(s.parent_indices(), vec![-1, 0, 0, 0, 0]);
        assert_eq!(
            sample_random_tree(7, 9, Family::Random).unwrap(),
            sample_random_tree(7, 9, Family::Random).unwrap()
        );
        assert!(matches!(
            sample_random_tree(7, 3, Family::Chain),
            Err(SkeletonError::InvalidJointCount { .. })
        ));
    }

    #[test]
    fn sampler_bone_lengths() {
        for seed in 0..300 {
            let family = Family::ALL[seed as usize % 4];
            let n = 4 + (seed as usize % 9);
            let s = sample_random_tree(seed, n, family).unwrap();
            for (p, c) in bone_list(&s) {
                let (a, b) = (s.joints()[p], s.joints()[c]);
                let len = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
                assert!(
                    (MIN_BONE_LENGTH - 1e-5..=MAX_BONE_LENGTH + 1e-5).contains(&len),
                    "seed {seed}: bone length {len}"
                );
            }
        }
    }

    #[test]
    fn text_round_trip() {
        let s = sample_random_tree(3, 8, Family::Quadruped).unwrap();
        assert_eq!(parse_skeleton(&format_skeleton(&s)).unwrap(), s);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let err = parse_skeleton("2\n0 0 0 -1\n0 0 x 0\n").unwrap_err();
        assert!(matches!(err, SkeletonError::Parse { line: 3, .. }), "{err}");
        let err = parse_skeleton("3\n0 0 0 -1\n").unwrap_err();
        assert!(matches!(err, SkeletonError::Parse { .. }));
    }

    #[test]
    fn permutation_relabels_parents() {
        let s = Skeleton::new(vec![[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [0.2, 0.0, 0.0]], &[-1, 0, 1]).unwrap();
        let p = s.permuted(&[2, 0, 1]).unwrap();
        assert_eq!(p.parent_indices(), vec![2, -1, 1]);
        assert_eq!(p.joints()[0], [0.2, 0.0, 0.0]);
    }
}
