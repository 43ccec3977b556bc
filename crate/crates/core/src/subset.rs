//! Stability for groups of advertisers.
//!
//! A rule is subset stable for a collection `C` when, for every set in `C`,
//! the total allocation of the set moves by at most `f(lambda)` between
//! `lambda`-similar inputs. IPA alone fails this for large sets; the two
//! composed rules here allocate first across groups and then within them.
//!
//! Indices are 0-based in the Rust API. The JSON form of a [`SetCollection`]
//! is `{"k": int, "sets": [[int, ...], ...]}` with 1-based indices.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::alloc::{
    capped_ipa_allocate, check_ell, ipa_allocate, proportional_allocate, Allocation,
    AllocationRule, ValueVector,
};
use crate::error::{Error, Result};

/// Sets of advertisers over a ground set `{0, .., k-1}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "OneBased", into = "OneBased")]
pub struct SetCollection {
    k: usize,
    sets: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct OneBased {
    k: usize,
    sets: Vec<Vec<usize>>,
}

impl TryFrom<OneBased> for SetCollection {
    type Error = Error;

    fn try_from(raw: OneBased) -> Result<Self> {
        SetCollection::from_one_based(raw.k, raw.sets)
    }
}

impl From<SetCollection> for OneBased {
    fn from(c: SetCollection) -> Self {
        OneBased {
            k: c.k,
            sets: c
                .sets
                .into_iter()
                .map(|s| s.into_iter().map(|i| i + 1).collect())
                .collect(),
        }
    }
}

impl SetCollection {
    /// Sets are sorted and deduplicated; each must be nonempty and lie in
    /// `0..k`.
    pub fn new(k: usize, sets: Vec<Vec<usize>>) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidCollection("k must be positive".into()));
        }
        let mut normalised = Vec::with_capacity(sets.len());
        for (s, mut set) in sets.into_iter().enumerate() {
            if set.is_empty() {
                return Err(Error::InvalidCollection(format!("set #{s} is empty")));
            }
            if let Some(&bad) = set.iter().find(|&&i| i >= k) {
                return Err(Error::InvalidCollection(format!(
                    "set #{s} contains index {bad} outside 0..{k}"
                )));
            }
            set.sort_unstable();
            set.dedup();
            normalised.push(set);
        }
        Ok(Self {
            k,
            sets: normalised,
        })
    }

    pub fn from_one_based(k: usize, sets: Vec<Vec<usize>>) -> Result<Self> {
        let mut shifted = Vec::with_capacity(sets.len());
        for (s, set) in sets.into_iter().enumerate() {
            if set.contains(&0) {
                return Err(Error::InvalidCollection(format!(
                    "set #{s} contains index 0"
                )));
            }
            shifted.push(set.into_iter().map(|i| i - 1).collect());
        }
        Self::new(k, shifted)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }
}

/// Disjoint nonempty groups covering `{0, .., k-1}`. JSON uses 1-based
/// indices: `{"k": 4, "clusters": [[1, 2], [3, 4]]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "OneBasedParts", into = "OneBasedParts")]
pub struct ClusterPartition {
    k: usize,
    clusters: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct OneBasedParts {
    k: usize,
    clusters: Vec<Vec<usize>>,
}

impl TryFrom<OneBasedParts> for ClusterPartition {
    type Error = Error;

    fn try_from(raw: OneBasedParts) -> Result<Self> {
        ClusterPartition::from_one_based(raw.k, raw.clusters)
    }
}

impl From<ClusterPartition> for OneBasedParts {
    fn from(p: ClusterPartition) -> Self {
        OneBasedParts {
            k: p.k,
            clusters: p
                .clusters
                .into_iter()
                .map(|c| c.into_iter().map(|i| i + 1).collect())
                .collect(),
        }
    }
}

impl ClusterPartition {
    pub fn new(k: usize, clusters: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; k];
        let mut normalised = Vec::with_capacity(clusters.len());
        for (c, mut cluster) in clusters.into_iter().enumerate() {
            if cluster.is_empty() {
                return Err(Error::InvalidPartition(format!("part #{c} is empty")));
            }
            cluster.sort_unstable();
            for &i in &cluster {
                match seen.get_mut(i) {
                    None => {
                        return Err(Error::InvalidPartition(format!("index {i} outside 0..{k}")))
                    }
                    Some(true) => {
                        return Err(Error::InvalidPartition(format!("index {i} appears twice")))
                    }
                    Some(slot) => *slot = true,
                }
            }
            normalised.push(cluster);
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::InvalidPartition(format!(
                "index {missing} is not covered"
            )));
        }
        if k == 0 {
            return Err(Error::InvalidPartition("k must be positive".into()));
        }
        Ok(Self {
            k,
            clusters: normalised,
        })
    }

    pub fn from_one_based(k: usize, clusters: Vec<Vec<usize>>) -> Result<Self> {
        if clusters.iter().flatten().any(|&i| i == 0) {
            return Err(Error::InvalidPartition(
                "index 0 in a 1-based partition".into(),
            ));
        }
        Self::new(
            k,
            clusters
                .into_iter()
                .map(|c| c.into_iter().map(|i| i - 1).collect())
                .collect(),
        )
    }

    pub fn singletons(k: usize) -> Result<Self> {
        Self::new(k, (0..k).map(|i| vec![i]).collect())
    }

    pub fn whole(k: usize) -> Result<Self> {
        Self::new(k, vec![(0..k).collect()])
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.clusters
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }
}

/// Groups advertisers that belong to exactly the same sets of `c`. Clusters
/// are ordered by their smallest member.
pub fn equivalence_clusters(c: &SetCollection) -> ClusterPartition {
    let mut signatures: Vec<Vec<usize>> = vec![Vec::new(); c.k];
    for (s, set) in c.sets.iter().enumerate() {
        for &i in set {
            signatures[i].push(s);
        }
    }
    let mut by_signature: BTreeMap<&[usize], usize> = BTreeMap::new();
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for (i, sig) in signatures.iter().enumerate() {
        let id = *by_signature.entry(sig.as_slice()).or_insert_with(|| {
            clusters.push(Vec::new());
            clusters.len() - 1
        });
        clusters[id].push(i);
    }
    ClusterPartition { k: c.k, clusters }
}

/// `(width, cluster_width)`: the largest set size, and the largest number of
/// equivalence clusters inside one set. `(0, 0)` for an empty collection.
pub fn collection_widths(c: &SetCollection) -> (usize, usize) {
    let partition = equivalence_clusters(c);
    let mut cluster_of = vec![0; c.k];
    for (id, cluster) in partition.clusters.iter().enumerate() {
        for &i in cluster {
            cluster_of[i] = id;
        }
    }
    let width = c.sets.iter().map(Vec::len).max().unwrap_or(0);
    let cluster_width = c
        .sets
        .iter()
        .map(|set| {
            let mut ids: Vec<usize> = set.iter().map(|&i| cluster_of[i]).collect();
            ids.sort_unstable();
            ids.dedup();
            ids.len()
        })
        .max()
        .unwrap_or(0);
    (width, cluster_width)
}

/// Largest part size, after checking that every set of `c` lies inside a
/// single part.
pub fn partitioned_width(c: &SetCollection, parts: &ClusterPartition) -> Result<usize> {
    if c.k != parts.k {
        return Err(Error::LengthMismatch {
            left: c.k,
            right: parts.k,
        });
    }
    let part_of = part_index(parts);
    for (s, set) in c.sets.iter().enumerate() {
        let first = part_of[set[0]];
        if set.iter().any(|&i| part_of[i] != first) {
            return Err(Error::SetCrossesPartition { set: s });
        }
    }
    Ok(parts.clusters.iter().map(Vec::len).max().unwrap_or(0))
}

/// The finest partition that no set of `c` crosses: advertisers are joined
/// whenever they share a set. Parts are ordered by their smallest member.
pub fn connected_parts(c: &SetCollection) -> ClusterPartition {
    let mut parent: Vec<usize> = (0..c.k).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for set in &c.sets {
        for &i in &set[1..] {
            let (a, b) = (root(&mut parent, set[0]), root(&mut parent, i));
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut index: BTreeMap<usize, usize> = BTreeMap::new();
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for i in 0..c.k {
        let r = root(&mut parent, i);
        let id = *index.entry(r).or_insert_with(|| {
            clusters.push(Vec::new());
            clusters.len() - 1
        });
        clusters[id].push(i);
    }
    ClusterPartition { k: c.k, clusters }
}

fn part_index(parts: &ClusterPartition) -> Vec<usize> {
    let mut part_of = vec![0; parts.k];
    for (p, part) in parts.clusters.iter().enumerate() {
        for &i in part {
            part_of[i] = p;
        }
    }
    part_of
}

/// Allocates across groups, then within each group, and multiplies.
fn two_level<A, W>(
    values: &ValueVector,
    groups: &ClusterPartition,
    across: A,
    within: W,
) -> Result<Allocation>
where
    A: Fn(&ValueVector) -> Result<Allocation>,
    W: Fn(&ValueVector) -> Result<Allocation>,
{
    if values.len() != groups.k {
        return Err(Error::LengthMismatch {
            left: values.len(),
            right: groups.k,
        });
    }
    let v = values.as_slice();
    let group_values: Vec<f64> = groups
        .clusters
        .iter()
        .map(|g| g.iter().map(|&i| v[i]).fold(0.0, f64::max))
        .collect();
    let outer = across(&ValueVector::new(group_values)?)?;
    let mut probs = vec![0.0; v.len()];
    for (g, members) in groups.clusters.iter().enumerate() {
        let inner = within(&ValueVector::new(members.iter().map(|&i| v[i]).collect())?)?;
        for (&i, &x) in members.iter().zip(inner.probs()) {
            probs[i] = outer.get(g) * x;
        }
    }
    Allocation::new(probs)
}

/// Capped IPA with `beta = 1/n` across equivalence clusters (a cluster is
/// worth its best member), IPA inside each cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterCappedIpa {
    ell: f64,
    n: usize,
    clusters: ClusterPartition,
}

impl ClusterCappedIpa {
    pub fn new(ell: f64, n: usize, collection: &SetCollection) -> Result<Self> {
        Self::with_clusters(ell, n, equivalence_clusters(collection))
    }

    pub fn with_clusters(ell: f64, n: usize, clusters: ClusterPartition) -> Result<Self> {
        check_ell(ell)?;
        if n == 0 {
            return Err(Error::InvalidConfig(
                "cap parameter n must be at least 1".into(),
            ));
        }
        Ok(Self { ell, n, clusters })
    }

    pub fn clusters(&self) -> &ClusterPartition {
        &self.clusters
    }
}

impl AllocationRule for ClusterCappedIpa {
    fn allocate(&self, values: &ValueVector) -> Result<Allocation> {
        let beta = 1.0 / self.n as f64;
        two_level(
            values,
            &self.clusters,
            |g| capped_ipa_allocate(g, self.ell, beta),
            |m| ipa_allocate(m, self.ell),
        )
    }
}

/// IPA across the parts of a partition (a part is worth its best member),
/// proportional allocation with exponent `2 ell` inside each part.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionHierarchical {
    ell: f64,
    parts: ClusterPartition,
}

impl PartitionHierarchical {
    pub fn new(ell: f64, parts: ClusterPartition) -> Result<Self> {
        check_ell(ell)?;
        Ok(Self { ell, parts })
    }

    pub fn parts(&self) -> &ClusterPartition {
        &self.parts
    }
}

impl AllocationRule for PartitionHierarchical {
    fn allocate(&self, values: &ValueVector) -> Result<Allocation> {
        two_level(
            values,
            &self.parts,
            |g| ipa_allocate(g, self.ell),
            |m| proportional_allocate(m, 2.0 * self.ell),
        )
    }
}

pub fn cluster_capped_alloc(
    values: &ValueVector,
    ell: f64,
    n: usize,
    c: &SetCollection,
) -> Result<Allocation> {
    ClusterCappedIpa::new(ell, n, c)?.allocate(values)
}

pub fn partition_hierarchical_alloc(
    values: &ValueVector,
    ell: f64,
    parts: &ClusterPartition,
) -> Result<Allocation> {
    PartitionHierarchical::new(ell, parts.clone())?.allocate(values)
}

/// Largest change of a set's total allocation between `v` and `w`, over the
/// sets of `c`. Zero for an empty collection.
pub fn subset_stability_check<R: AllocationRule + ?Sized>(
    rule: &R,
    c: &SetCollection,
    v: &ValueVector,
    w: &ValueVector,
) -> Result<f64> {
    let (x, y) = paired_allocations(rule, c.k, v, w)?;
    Ok(c.sets
        .iter()
        .map(|set| set.iter().map(|&i| x.get(i) - y.get(i)).sum::<f64>().abs())
        .fold(0.0, f64::max))
}

/// Largest change of a set's total allocation over every subset of every
/// part. Within a part the extreme subsets collect all positive or all
/// negative coordinate differences, so the maximum is exact.
pub fn partition_subset_stability<R: AllocationRule + ?Sized>(
    rule: &R,
    parts: &ClusterPartition,
    v: &ValueVector,
    w: &ValueVector,
) -> Result<f64> {
    let (x, y) = paired_allocations(rule, parts.k, v, w)?;
    Ok(parts
        .clusters
        .iter()
        .map(|part| {
            let (mut gain, mut loss) = (0.0f64, 0.0f64);
            for &i in part {
                let d = x.get(i) - y.get(i);
                if d > 0.0 {
                    gain += d;
                } else {
                    loss -= d;
                }
            }
            gain.max(loss)
        })
        .fold(0.0, f64::max))
}

fn paired_allocations<R: AllocationRule + ?Sized>(
    rule: &R,
    k: usize,
    v: &ValueVector,
    w: &ValueVector,
) -> Result<(Allocation, Allocation)> {
    if v.len() != w.len() {
        return Err(Error::LengthMismatch {
            left: v.len(),
            right: w.len(),
        });
    }
    if v.len() != k {
        return Err(Error::LengthMismatch {
            left: v.len(),
            right: k,
        });
    }
    Ok((rule.allocate(v)?, rule.allocate(w)?))
}

/// A pair of similar inputs on which IPA moves a whole half of the
/// advertisers' allocation, while the single-advertiser stability bound is
/// only about `4/k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TvGap {
    pub v: ValueVector,
    pub v_prime: ValueVector,
    /// The first half of the advertisers (0-based).
    pub set: Vec<usize>,
    pub group_diff: f64,
    pub f_bound: f64,
    /// Value of the low half, `((k/2 - 1) / (k/2))^(1/ell)`, below 1.
    pub lambda_p: f64,
    /// Similarity of `v` and `v_prime`, `1 / lambda_p`.
    pub similarity: f64,
}

/// `v` has value 1 on the first half and `lambda_p` on the second; `v_prime`
/// swaps the halves. IPA(ell) serves only the high half in each, so the first
/// half's total moves by 1.
pub fn tv_gap_example(k: usize, ell: f64) -> Result<TvGap> {
    if k < 4 {
        return Err(Error::KTooSmall(k));
    }
    if k % 2 == 1 {
        return Err(Error::OddK(k));
    }
    check_ell(ell)?;
    let half = k / 2;
    let shrink = (half as f64 - 1.0) / half as f64;
    let lambda_p = shrink.powf(1.0 / ell);
    let v: Vec<f64> = (0..k)
        .map(|i| if i < half { 1.0 } else { lambda_p })
        .collect();
    let v_prime: Vec<f64> = (0..k)
        .map(|i| if i < half { lambda_p } else { 1.0 })
        .collect();
    let (v, v_prime) = (ValueVector::new(v)?, ValueVector::new(v_prime)?);
    let set: Vec<usize> = (0..half).collect();
    let x = ipa_allocate(&v, ell)?;
    let y = ipa_allocate(&v_prime, ell)?;
    let group_diff = set.iter().map(|&i| x.get(i) - y.get(i)).sum::<f64>().abs();
    Ok(TvGap {
        v,
        v_prime,
        set,
        group_diff,
        f_bound: 1.0 - shrink * shrink,
        lambda_p,
        similarity: 1.0 / lambda_p,
    })
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::alloc::AllocRule;

    fn vv(values: &[f64]) -> ValueVector {
        ValueVector::new(values.to_vec()).unwrap()
    }

    fn one_based(k: usize, sets: &[&[usize]]) -> SetCollection {
        SetCollection::from_one_based(k, sets.iter().map(|s| s.to_vec()).collect()).unwrap()
    }

    fn assert_probs(actual: &Allocation, expected: &[f64]) {
        assert_eq!(actual.len(), expected.len());
        for (a, e) in actual.probs().iter().zip(expected) {
            assert_abs_diff_eq!(a, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn clusters_examples() {
        let c = one_based(3, &[&[1, 2], &[2, 3]]);
        assert_eq!(
            equivalence_clusters(&c).clusters(),
            &[vec![0], vec![1], vec![2]]
        );
        let c = one_based(3, &[&[1, 2]]);
        assert_eq!(equivalence_clusters(&c).clusters(), &[vec![0, 1], vec![2]]);
        let c = SetCollection::new(4, vec![]).unwrap();
        assert_eq!(equivalence_clusters(&c).clusters(), &[vec![0, 1, 2, 3]]);
    }

    #[test]
    fn clusters_are_ordered_by_smallest_member() {
        let c = one_based(5, &[&[2, 5], &[1, 3, 4]]);
        assert_eq!(
            equivalence_clusters(&c).clusters(),
            &[vec![0, 2, 3], vec![1, 4]]
        );
    }

    #[test]
    fn width_examples() {
        assert_eq!(
            collection_widths(&one_based(3, &[&[1, 2], &[2, 3]])),
            (2, 2)
        );
        assert_eq!(
            collection_widths(&one_based(4, &[&[1, 2], &[3, 4]])),
            (2, 1)
        );
        assert_eq!(collection_widths(&one_based(5, &[&[1]])), (1, 1));
        assert_eq!(
            collection_widths(&SetCollection::new(3, vec![]).unwrap()),
            (0, 0)
        );
    }

    #[test]
    fn partitioned_width_examples() {
        let parts = ClusterPartition::from_one_based(4, vec![vec![1, 2, 3], vec![4]]).unwrap();
        assert_eq!(
            partitioned_width(&one_based(4, &[&[1, 3], &[4]]), &parts).unwrap(),
            3
        );
        let parts = ClusterPartition::from_one_based(2, vec![vec![1], vec![2]]).unwrap();
        assert_eq!(
            partitioned_width(&one_based(2, &[&[1], &[2]]), &parts).unwrap(),
            1
        );
        let parts = ClusterPartition::from_one_based(4, vec![vec![1, 2], vec![3, 4]]).unwrap();
        assert_eq!(
            partitioned_width(&one_based(4, &[&[1, 4]]), &parts),
            Err(Error::SetCrossesPartition { set: 0 })
        );
    }

    #[test]
    fn connected_parts_join_overlapping_sets() {
        let c = one_based(6, &[&[1, 3], &[3, 5], &[6]]);
        let parts = connected_parts(&c);
        assert_eq!(
            parts.clusters(),
            &[vec![0, 2, 4], vec![1], vec![3], vec![5]]
        );
        assert_eq!(partitioned_width(&c, &parts).unwrap(), 3);
    }

    #[test]
    fn collection_validation() {
        assert!(matches!(
            SetCollection::new(3, vec![vec![]]),
            Err(Error::InvalidCollection(_))
        ));
        assert!(matches!(
            SetCollection::new(3, vec![vec![3]]),
            Err(Error::InvalidCollection(_))
        ));
        assert!(matches!(
            SetCollection::from_one_based(3, vec![vec![0, 1]]),
            Err(Error::InvalidCollection(_))
        ));
        assert!(matches!(
            ClusterPartition::new(3, vec![vec![0, 1], vec![1, 2]]),
            Err(Error::InvalidPartition(_))
        ));
        assert!(matches!(
            ClusterPartition::new(3, vec![vec![0, 1]]),
            Err(Error::InvalidPartition(_))
        ));
    }

    #[test]
    fn collection_json_is_one_based() {
        let c: SetCollection = serde_json::from_str(r#"{"k":3,"sets":[[1,2],[3]]}"#).unwrap();
        assert_eq!(c.sets(), &[vec![0, 1], vec![2]]);
        assert_eq!(
            serde_json::to_string(&c).unwrap(),
            r#"{"k":3,"sets":[[1,2],[3]]}"#
        );
        assert!(serde_json::from_str::<SetCollection>(r#"{"k":2,"sets":[[0]]}"#).is_err());

        let p: ClusterPartition =
            serde_json::from_str(r#"{"k":3,"clusters":[[3,1],[2]]}"#).unwrap();
        assert_eq!(p.clusters(), &[vec![0, 2], vec![1]]);
        assert_eq!(
            serde_json::to_string(&p).unwrap(),
            r#"{"k":3,"clusters":[[1,3],[2]]}"#
        );
        assert!(serde_json::from_str::<ClusterPartition>(r#"{"k":2,"clusters":[[0,1]]}"#).is_err());
    }

    #[test]
    fn cluster_capped_examples() {
        let c = one_based(3, &[&[1, 2]]);
        let x = cluster_capped_alloc(&vv(&[2.0, 1.0, 1.0]), 1.0, 2, &c).unwrap();
        assert_probs(&x, &[7.0 / 18.0, 7.0 / 36.0, 5.0 / 12.0]);

        let v = vv(&[3.0, 1.0, 2.0, 0.5]);
        let whole = SetCollection::new(4, vec![vec![0, 1, 2, 3]]).unwrap();
        let x = cluster_capped_alloc(&v, 1.5, 3, &whole).unwrap();
        assert_probs(&x, ipa_allocate(&v, 1.5).unwrap().probs());

        let c = one_based(2, &[&[1]]);
        let x = cluster_capped_alloc(&vv(&[1.0, 1.0]), 1.0, 1, &c).unwrap();
        assert_probs(&x, &[0.5, 0.5]);
    }

    #[test]
    fn hierarchical_examples() {
        let parts = ClusterPartition::from_one_based(3, vec![vec![1, 2], vec![3]]).unwrap();
        let x = partition_hierarchical_alloc(&vv(&[2.0, 1.0, 1.0]), 1.0, &parts).unwrap();
        assert_probs(&x, &[8.0 / 15.0, 2.0 / 15.0, 1.0 / 3.0]);

        let v = vv(&[3.0, 1.0, 2.0, 0.5]);
        let x = partition_hierarchical_alloc(&v, 0.8, &ClusterPartition::singletons(4).unwrap())
            .unwrap();
        assert_probs(&x, ipa_allocate(&v, 0.8).unwrap().probs());

        let parts = ClusterPartition::from_one_based(4, vec![vec![1, 2], vec![3, 4]]).unwrap();
        let x = partition_hierarchical_alloc(&vv(&[5.0; 4]), 2.0, &parts).unwrap();
        assert_probs(&x, &[0.25; 4]);
    }

    #[test]
    fn subset_check_examples() {
        let c = one_based(3, &[&[1, 2], &[3]]);
        let v = vv(&[1.0, 2.0, 3.0]);
        let ipa = AllocRule::Ipa { ell: 1.0 };
        assert_eq!(subset_stability_check(&ipa, &c, &v, &v).unwrap(), 0.0);
        let w = vv(&[3.0, 1.0, 0.2]);
        assert_eq!(
            subset_stability_check(&AllocRule::Uniform, &c, &v, &w).unwrap(),
            0.0
        );

        let gap = tv_gap_example(4, 1.0).unwrap();
        let c = one_based(4, &[&[1, 2]]);
        let d = subset_stability_check(&ipa, &c, &gap.v, &gap.v_prime).unwrap();
        assert_abs_diff_eq!(d, 1.0, epsilon = 1e-12);

        assert!(matches!(
            subset_stability_check(&ipa, &c, &v, &vv(&[1.0])),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn tv_gap_examples() {
        let gap = tv_gap_example(4, 1.0).unwrap();
        assert_eq!(gap.v, vv(&[1.0, 1.0, 0.5, 0.5]));
        assert_eq!(gap.v_prime, vv(&[0.5, 0.5, 1.0, 1.0]));
        assert_eq!(gap.set, vec![0, 1]);
        assert_abs_diff_eq!(gap.group_diff, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(gap.f_bound, 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(gap.similarity, 2.0, epsilon = 1e-15);

        let gap = tv_gap_example(100, 1.0).unwrap();
        assert_abs_diff_eq!(gap.group_diff, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(gap.f_bound, 1.0 - (49.0f64 / 50.0).powi(2), epsilon = 1e-15);

        let gap = tv_gap_example(4, 2.0).unwrap();
        assert_abs_diff_eq!(gap.lambda_p, 0.5f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(gap.group_diff, 1.0, epsilon = 1e-12);

        assert_eq!(tv_gap_example(5, 1.0), Err(Error::OddK(5)));
        assert_eq!(tv_gap_example(2, 1.0), Err(Error::KTooSmall(2)));
    }

    #[test]
    fn partition_subset_matches_brute_force() {
        let parts =
            ClusterPartition::from_one_based(6, vec![vec![1, 2, 3, 4], vec![5, 6]]).unwrap();
        let rule = PartitionHierarchical::new(1.0, parts.clone()).unwrap();
        let v = vv(&[3.0, 1.0, 2.5, 0.7, 2.0, 1.9]);
        let w = vv(&[1.5, 2.0, 2.0, 1.0, 2.2, 1.1]);
        let exact = partition_subset_stability(&rule, &parts, &v, &w).unwrap();
        let (x, y) = (rule.allocate(&v).unwrap(), rule.allocate(&w).unwrap());
        let mut brute = 0.0f64;
        for part in parts.clusters() {
            for mask in 1u32..(1 << part.len()) {
                let d: f64 = part
                    .iter()
                    .enumerate()
                    .filter(|(b, _)| mask >> b & 1 == 1)
                    .map(|(_, &i)| x.get(i) - y.get(i))
                    .sum();
                brute = brute.max(d.abs());
            }
        }
        assert_abs_diff_eq!(exact, brute, epsilon = 1e-15);
    }
}
