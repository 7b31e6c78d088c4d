//! Gaussian filtering in high-dimensional feature spaces.
//!
//! Given `n` points with feature vectors `f_i` (already divided by the kernel
//! widths, so the kernel has unit variance) and a value row per point, both
//! filters compute
//!
//! ```text
//! out[i] = Σ_j exp(-|f_i - f_j|² / 2) · values[j]
//! ```
//!
//! including the `j = i` term. [`gaussian_filter_exact`] evaluates the sum
//! directly in `O(n²)`. [`PermutohedralLattice`] approximates it in `O(n·d)`
//! per value column by splatting the values onto the vertices of the
//! enclosing simplices of a permutohedral lattice, blurring along each lattice
//! direction and slicing back out with the same barycentric weights.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::error::{Error, Result};

/// `n` feature vectors of dimension `d`, stored row by row.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePoints {
    n: usize,
    d: usize,
    coords: Vec<f64>,
}

impl FeaturePoints {
    pub fn new(d: usize, coords: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return Err(Error::Validation(
                "feature dimension must be positive".into(),
            ));
        }
        if !coords.len().is_multiple_of(d) {
            return Err(Error::Shape(format!(
                "{} coordinates do not split into {d}-dimensional points",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Validation(
                "feature coordinates must be finite".into(),
            ));
        }
        Ok(Self {
            n: coords.len() / d,
            d,
            coords,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.d..(i + 1) * self.d]
    }
}

fn check_rows(values: &[f32], cols: usize, n: usize) -> Result<()> {
    if cols == 0 || values.len() != n * cols {
        return Err(Error::Shape(format!(
            "expected {n} rows of {cols} values, got {} values",
            values.len()
        )));
    }
    Ok(())
}

/// Direct `O(n²)` evaluation of the unit Gaussian filter.
///
/// `values` holds `n` rows of `cols` entries; the result has the same layout.
pub fn gaussian_filter_exact(
    values: &[f32],
    cols: usize,
    feats: &FeaturePoints,
) -> Result<Vec<f64>> {
    check_rows(values, cols, feats.n)?;
    let d = feats.d;
    let mut out = vec![0f64; values.len()];
    out.par_chunks_mut(cols).enumerate().for_each(|(i, row)| {
        let fi = feats.point(i);
        for j in 0..feats.n {
            let fj = &feats.coords[j * d..(j + 1) * d];
            let dist2: f64 = fi
                .iter()
                .zip(fj)
                .map(|(&a, &b)| {
                    let t = a - b;
                    t * t
                })
                .sum();
            // exp underflows to exactly 0 here; skipping is bit-identical
            if dist2 > 1491.0 {
                continue;
            }
            let k = (-0.5 * dist2).exp();
            for (o, &v) in row.iter_mut().zip(&values[j * cols..(j + 1) * cols]) {
                *o += k * v as f64;
            }
        }
    });
    Ok(out)
}

/// Multiplier on the lattice feature scale.
const KERNEL_SHARPEN: f64 = 1.05;

const EMPTY: u32 = u32::MAX;

/// Open-addressing hash table from integer lattice keys to dense vertex
/// indices. Keys are the first `d` coordinates of a lattice point (the last
/// one is implied because coordinates sum to zero).
struct VertexTable {
    d: usize,
    keys: Vec<i32>,
    slots: Vec<u32>,
}

impl VertexTable {
    fn with_capacity(d: usize, expected: usize) -> Self {
        let cap = (expected * 2).next_power_of_two().max(16);
        Self {
            d,
            keys: Vec::with_capacity(expected * d),
            slots: vec![EMPTY; cap],
        }
    }

    fn len(&self) -> usize {
        self.keys.len() / self.d
    }

    fn hash(key: &[i32]) -> usize {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &k in key {
            h ^= k as u32 as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        (h ^ (h >> 29)) as usize
    }

    fn key(&self, v: usize) -> &[i32] {
        &self.keys[v * self.d..(v + 1) * self.d]
    }

    fn find(&self, key: &[i32]) -> Option<usize> {
        let mask = self.slots.len() - 1;
        let mut s = Self::hash(key) & mask;
        loop {
            match self.slots[s] {
                EMPTY => return None,
                v if self.key(v as usize) == key => return Some(v as usize),
                _ => s = (s + 1) & mask,
            }
        }
    }

    fn insert(&mut self, key: &[i32]) -> usize {
        if (self.len() + 1) * 2 > self.slots.len() {
            self.grow();
        }
        let mask = self.slots.len() - 1;
        let mut s = Self::hash(key) & mask;
        loop {
            match self.slots[s] {
                EMPTY => {
                    let v = self.len();
                    self.keys.extend_from_slice(key);
                    self.slots[s] = v as u32;
                    return v;
                }
                v if self.key(v as usize) == key => return v as usize,
                _ => s = (s + 1) & mask,
            }
        }
    }

    fn grow(&mut self) {
        let cap = self.slots.len() * 2;
        let mask = cap - 1;
        let mut slots = vec![EMPTY; cap];
        for v in 0..self.len() {
            let mut s = Self::hash(self.key(v)) & mask;
            while slots[s] != EMPTY {
                s = (s + 1) & mask;
            }
            slots[s] = v as u32;
        }
        self.slots = slots;
    }
}

/// Wall time spent in each filtering stage, accumulated across calls.
#[derive(Clone, Copy, Debug, Default)]
pub struct StageTimes {
    pub splat: Duration,
    pub blur: Duration,
    pub slice: Duration,
}

/// Permutohedral lattice built over a fixed set of feature points.
///
/// Every point is embedded in the hyperplane `{x ∈ R^{d+1} : Σx = 0}`, where
/// it falls inside exactly one lattice simplex. The lattice stores the `d + 1`
/// vertices of each point's simplex with their barycentric weights, plus the
/// neighbour links used by the blur along the `d + 1` lattice directions.
///
/// After [`PermutohedralLattice::build`] the lattice is immutable and may be
/// shared across threads; each filtering call uses its own scratch buffers.
#[derive(Debug)]
pub struct PermutohedralLattice {
    d: usize,
    n: usize,
    /// `n × (d+1)` vertex indices
    vertices: Vec<u32>,
    /// `n × (d+1)` barycentric weights
    weights: Vec<f32>,
    /// `V × d` lattice keys
    keys: Vec<i32>,
    /// `(d+1) × V` pairs of (minus, plus) neighbours; `EMPTY` when absent
    neighbors: Vec<[u32; 2]>,
    calibration: f64,
}

impl PermutohedralLattice {
    /// Embeds the points, locates their simplices and links the vertices.
    pub fn build(feats: &FeaturePoints) -> Self {
        let d = feats.d;
        let n = feats.n;
        let d1 = d + 1;

        // Scaling each elevated axis by 1/sqrt(j(j+1)) makes the embedding an
        // isometry up to `inv_std`; the blur plus splat/slice then behave like
        // a unit-variance Gaussian in feature space. The extra factor narrows
        // the kernel so its value at zero distance comes out close to 1.
        let inv_std = (2.0f64 / 3.0).sqrt() * d1 as f64 * KERNEL_SHARPEN;
        let scale: Vec<f64> = (0..d)
            .map(|i| inv_std / (((i + 1) * (i + 2)) as f64).sqrt())
            .collect();

        let mut table = VertexTable::with_capacity(d, n * d1 / 2 + 1);
        let mut vertices = Vec::with_capacity(n * d1);
        let mut weights = Vec::with_capacity(n * d1);

        let mut elevated = vec![0f64; d1];
        let mut rem0 = vec![0i64; d1];
        let mut rank = vec![0i64; d1];
        let mut bary = vec![0f64; d1 + 1];
        let mut key = vec![0i32; d];

        for i in 0..n {
            let f = feats.point(i);

            let mut sm = 0.0;
            for j in (1..=d).rev() {
                let cf = f[j - 1] * scale[j - 1];
                elevated[j] = sm - j as f64 * cf;
                sm += cf;
            }
            elevated[0] = sm;

            // nearest point whose coordinates are all multiples of d+1
            let mut sum = 0i64;
            for k in 0..d1 {
                let v = elevated[k] / d1 as f64;
                let up = v.ceil() as i64 * d1 as i64;
                let down = v.floor() as i64 * d1 as i64;
                rem0[k] = if up as f64 - elevated[k] < elevated[k] - down as f64 {
                    up
                } else {
                    down
                };
                sum += rem0[k];
            }
            let sum = sum / d1 as i64;

            rank.iter_mut().for_each(|r| *r = 0);
            for a in 0..d {
                for b in a + 1..d1 {
                    if elevated[a] - (rem0[a] as f64) < elevated[b] - (rem0[b] as f64) {
                        rank[a] += 1;
                    } else {
                        rank[b] += 1;
                    }
                }
            }

            // Walk back onto the hyperplane if the rounding left it.
            let d1i = d1 as i64;
            if sum > 0 {
                for k in 0..d1 {
                    if rank[k] >= d1i - sum {
                        rank[k] -= d1i - sum;
                        rem0[k] -= d1i;
                    } else {
                        rank[k] += sum;
                    }
                }
            } else if sum < 0 {
                for k in 0..d1 {
                    if rank[k] < -sum {
                        rank[k] += d1i + sum;
                        rem0[k] += d1i;
                    } else {
                        rank[k] += sum;
                    }
                }
            }

            bary.iter_mut().for_each(|b| *b = 0.0);
            for k in 0..d1 {
                let v = (elevated[k] - rem0[k] as f64) / d1 as f64;
                let r = rank[k] as usize;
                bary[d - r] += v;
                bary[d + 1 - r] -= v;
            }
            bary[0] += 1.0 + bary[d1];

            for remainder in 0..d1 {
                for k in 0..d {
                    let r = rank[k] as usize;
                    let shift = if r <= d - remainder {
                        remainder as i64
                    } else {
                        remainder as i64 - d1i
                    };
                    key[k] = (rem0[k] + shift) as i32;
                }
                vertices.push(table.insert(&key) as u32);
                weights.push(bary[remainder] as f32);
            }
        }

        let v_count = table.len();
        let mut neighbors = vec![[EMPTY; 2]; d1 * v_count];
        let mut n1 = vec![0i32; d];
        let mut n2 = vec![0i32; d];
        for dir in 0..d1 {
            for v in 0..v_count {
                let k = table.key(v);
                for c in 0..d {
                    n1[c] = k[c] - 1;
                    n2[c] = k[c] + 1;
                }
                if dir < d {
                    n1[dir] = k[dir] + d as i32;
                    n2[dir] = k[dir] - d as i32;
                }
                neighbors[dir * v_count + v] = [
                    table.find(&n1).map_or(EMPTY, |u| u as u32),
                    table.find(&n2).map_or(EMPTY, |u| u as u32),
                ];
            }
        }

        Self {
            d,
            n,
            vertices,
            weights,
            keys: table.keys,
            neighbors,
            calibration: Self::calibration_for(d, inv_std),
        }
    }

    /// Blur directions in application order.
    fn blur_dirs(&self) -> Vec<usize> {
        (0..=self.d).collect()
    }

    /// Ratio between the unit Gaussian's integral, `(2π)^{d/2}`, and the
    /// mass-preserving lattice kernel's integral, which is the feature-space
    /// volume owned by one lattice vertex.
    fn calibration_for(d: usize, inv_std: f64) -> f64 {
        let d1 = (d + 1) as f64;
        // Vertices form d+1 cosets of (d+1)·A_d, whose cell has volume
        // (d+1)^d · sqrt(d+1) in the hyperplane.
        let cell_elevated = d1.powi(d as i32 - 1) * d1.sqrt();
        let cell_feature = cell_elevated / inv_std.powi(d as i32);
        (2.0 * std::f64::consts::PI).powf(d as f64 / 2.0) / cell_feature
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn point_count(&self) -> usize {
        self.n
    }

    pub fn vertex_count(&self) -> usize {
        self.keys.len() / self.d
    }

    /// Factor applied to sliced values so they estimate the unnormalized
    /// Gaussian sum.
    pub fn calibration(&self) -> f64 {
        self.calibration
    }

    /// Indices of the `d + 1` vertices of point `i`'s simplex.
    pub fn point_vertices(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let d1 = self.d + 1;
        self.vertices[i * d1..(i + 1) * d1]
            .iter()
            .map(|&v| v as usize)
    }

    /// Barycentric weights matching [`Self::point_vertices`].
    pub fn point_weights(&self, i: usize) -> &[f32] {
        let d1 = self.d + 1;
        &self.weights[i * d1..(i + 1) * d1]
    }

    /// Stored coordinates of vertex `v` (the last coordinate is implied).
    pub fn vertex_key(&self, v: usize) -> &[i32] {
        &self.keys[v * self.d..(v + 1) * self.d]
    }

    /// Neighbours of vertex `v` along lattice direction `dir` in `0..=d`.
    pub fn neighbors(&self, dir: usize, v: usize) -> (Option<usize>, Option<usize>) {
        let [a, b] = self.neighbors[dir * self.vertex_count() + v];
        let opt = |x: u32| (x != EMPTY).then_some(x as usize);
        (opt(a), opt(b))
    }

    /// Splat, blur and slice `cols` value columns, scaled by
    /// [`Self::calibration`].
    pub fn filter(&self, values: &[f32], cols: usize) -> Result<Vec<f64>> {
        self.filter_timed(values, cols, &mut StageTimes::default())
    }

    /// [`Self::filter`], adding the time spent per stage to `times`.
    pub fn filter_timed(
        &self,
        values: &[f32],
        cols: usize,
        times: &mut StageTimes,
    ) -> Result<Vec<f64>> {
        Ok(self
            .filter_f32_timed(values, cols, times)?
            .into_iter()
            .map(f64::from)
            .collect())
    }

    /// [`Self::filter_timed`] with single-precision output, which halves the
    /// memory traffic of the slice stage.
    pub fn filter_f32_timed(
        &self,
        values: &[f32],
        cols: usize,
        times: &mut StageTimes,
    ) -> Result<Vec<f32>> {
        check_rows(values, cols, self.n)?;
        let d1 = self.d + 1;
        let v_count = self.vertex_count();

        let t = Instant::now();
        // Sequential in point order, so accumulation order is fixed.
        let mut grid = vec![0f32; v_count * cols];
        for i in 0..self.n {
            let row = &values[i * cols..(i + 1) * cols];
            for k in 0..d1 {
                let v = self.vertices[i * d1 + k] as usize;
                let w = self.weights[i * d1 + k];
                for (g, &x) in grid[v * cols..(v + 1) * cols].iter_mut().zip(row) {
                    *g += w * x;
                }
            }
        }
        times.splat += t.elapsed();

        let t = Instant::now();
        let mut next = vec![0f32; v_count * cols];
        for dir in self.blur_dirs() {
            let links = &self.neighbors[dir * v_count..(dir + 1) * v_count];
            let src = &grid;
            next.par_chunks_mut(cols).enumerate().for_each(|(v, out)| {
                let [a, b] = links[v];
                let own = &src[v * cols..(v + 1) * cols];
                out.iter_mut().zip(own).for_each(|(o, &x)| *o = 0.5 * x);
                for nb in [a, b] {
                    if nb != EMPTY {
                        let nb = nb as usize;
                        for (o, &x) in out.iter_mut().zip(&src[nb * cols..(nb + 1) * cols]) {
                            *o += 0.25 * x;
                        }
                    }
                }
            });
            std::mem::swap(&mut grid, &mut next);
        }
        times.blur += t.elapsed();

        let t = Instant::now();
        let mut out = vec![0f32; self.n * cols];
        let scale = self.calibration as f32;
        out.par_chunks_mut(cols).enumerate().for_each(|(i, row)| {
            for k in 0..d1 {
                let v = self.vertices[i * d1 + k] as usize;
                let w = self.weights[i * d1 + k] * scale;
                for (o, &g) in row.iter_mut().zip(&grid[v * cols..(v + 1) * cols]) {
                    *o += w * g;
                }
            }
        });
        times.slice += t.elapsed();
        Ok(out)
    }
}

impl PermutohedralLattice {
    /// Applies the blur passes `dirs` (in order) to a sparse vertex vector.
    fn propagate(&self, start: usize, dirs: impl Iterator<Item = usize>) -> Vec<(u32, f64)> {
        let v_count = self.vertex_count();
        let mut cur = vec![(start as u32, 1.0f64)];
        let mut next = Vec::new();
        for dir in dirs {
            next.clear();
            for &(v, w) in &cur {
                next.push((v, 0.5 * w));
                for nb in self.neighbors[dir * v_count + v as usize] {
                    if nb != EMPTY {
                        next.push((nb, 0.25 * w));
                    }
                }
            }
            next.sort_unstable_by_key(|e| e.0);
            cur.clear();
            for &(v, w) in &next {
                match cur.last_mut() {
                    Some((u, acc)) if *u == v => *acc += w,
                    _ => cur.push((v, w)),
                }
            }
        }
        cur
    }

    /// The filter's weight of each point on itself, `K(i, i)`, in the same
    /// calibrated units as [`Self::filter`].
    ///
    /// Splatting, blurring and slicing a lone impulse does not return it with
    /// weight 1, so callers that need `Σ_{j≠i}` subtract this instead. The
    /// response between two vertices of a simplex is found by meeting in the
    /// middle: the first half of the blur passes is pushed forward from one
    /// vertex, the second half backward from the other (each pass is
    /// symmetric), and the two sparse vectors are dotted. Results are cached
    /// per simplex.
    pub fn self_weights(&self) -> Vec<f64> {
        let d1 = self.d + 1;
        let dirs = self.blur_dirs();
        let (first, second) = dirs.split_at(dirs.len() / 2);
        let mut cache: std::collections::HashMap<&[u32], Vec<f64>> =
            std::collections::HashMap::new();
        let mut out = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let simplex = &self.vertices[i * d1..(i + 1) * d1];
            let response = cache.entry(simplex).or_insert_with(|| {
                let fwd: Vec<_> = simplex
                    .iter()
                    .map(|&a| self.propagate(a as usize, first.iter().copied()))
                    .collect();
                let bwd: Vec<_> = simplex
                    .iter()
                    .map(|&b| self.propagate(b as usize, second.iter().rev().copied()))
                    .collect();
                let mut g = vec![0f64; d1 * d1];
                for a in 0..d1 {
                    for b in 0..d1 {
                        g[a * d1 + b] = sparse_dot(&fwd[a], &bwd[b]);
                    }
                }
                g
            });
            let w = self.point_weights(i);
            let mut k = 0.0;
            for a in 0..d1 {
                for b in 0..d1 {
                    k += w[a] as f64 * w[b] as f64 * response[a * d1 + b];
                }
            }
            out.push(k * self.calibration);
        }
        out
    }
}

fn sparse_dot(a: &[(u32, f64)], b: &[(u32, f64)]) -> f64 {
    let (mut i, mut j, mut acc) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

/// Divides each filtered row by the filtered all-ones column, turning the
/// filter into a weighted average that keeps constants fixed.
pub fn normalize_rows(filtered: &[f64], ones: &[f64], cols: usize) -> Vec<f64> {
    filtered
        .chunks_exact(cols)
        .zip(ones)
        .flat_map(|(row, &norm)| row.iter().map(move |v| v / norm))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, d: usize, spread: f64, seed: u64) -> FeaturePoints {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeaturePoints::new(
            d,
            (0..n * d).map(|_| rng.random_range(0.0..spread)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn exact_single_point_is_identity() {
        let f = FeaturePoints::new(2, vec![0.3, -4.0]).unwrap();
        assert_eq!(
            gaussian_filter_exact(&[2.5, -1.0], 2, &f).unwrap(),
            vec![2.5, -1.0]
        );
    }

    #[test]
    fn exact_coincident_points() {
        let f = FeaturePoints::new(3, vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0]).unwrap();
        let out = gaussian_filter_exact(&[1.0, 0.0, 0.0, 1.0], 2, &f).unwrap();
        assert_eq!(out, vec![1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn exact_points_on_a_line() {
        let f = FeaturePoints::new(1, vec![0.0, 1.0, 2.0]).unwrap();
        let out = gaussian_filter_exact(&[1.0, 1.0, 1.0], 1, &f).unwrap();
        let (a, b) = ((-0.5f64).exp(), (-2.0f64).exp());
        let expected = [1.0 + a + b, 1.0 + 2.0 * a, 1.0 + a + b];
        for (o, e) in out.iter().zip(expected) {
            assert!((o - e).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch() {
        let f = random_points(4, 2, 1.0, 0);
        assert!(matches!(
            gaussian_filter_exact(&[0.0; 7], 2, &f),
            Err(Error::Shape(_))
        ));
        let lattice = PermutohedralLattice::build(&f);
        assert!(matches!(lattice.filter(&[0.0; 3], 1), Err(Error::Shape(_))));
    }

    #[test]
    fn barycentric_weights_are_convex() {
        for d in [1, 2, 3, 5] {
            let f = random_points(300, d, 6.0, d as u64);
            let lattice = PermutohedralLattice::build(&f);
            for i in 0..f.len() {
                let w = lattice.point_weights(i);
                assert!(
                    w.iter().all(|&x| (-1e-6..=1.0 + 1e-6).contains(&x)),
                    "{w:?}"
                );
                let s: f32 = w.iter().sum();
                assert!((s - 1.0).abs() < 1e-6);
                assert!(lattice
                    .point_vertices(i)
                    .all(|v| v < lattice.vertex_count()));
            }
        }
    }

    #[test]
    fn single_point_creates_one_simplex() {
        for d in [2, 5] {
            let f = FeaturePoints::new(d, vec![0.37; d]).unwrap();
            let lattice = PermutohedralLattice::build(&f);
            assert_eq!(lattice.vertex_count(), d + 1);
        }
    }

    #[test]
    fn identical_points_share_a_simplex() {
        let f = FeaturePoints::new(5, [1.5f64, -2.0, 0.25, 7.0, 3.0].repeat(40)).unwrap();
        let lattice = PermutohedralLattice::build(&f);
        assert_eq!(lattice.vertex_count(), 6);
        let first: Vec<usize> = lattice.point_vertices(0).collect();
        for i in 1..f.len() {
            assert_eq!(lattice.point_vertices(i).collect::<Vec<_>>(), first);
            assert_eq!(lattice.point_weights(i), lattice.point_weights(0));
        }
    }

    #[test]
    fn neighbour_links_are_reciprocal() {
        let f = random_points(100, 2, 5.0, 3);
        let lattice = PermutohedralLattice::build(&f);
        let d = lattice.dim();
        for dir in 0..=d {
            for v in 0..lattice.vertex_count() {
                let (minus, plus) = lattice.neighbors(dir, v);
                if let Some(u) = minus {
                    assert_eq!(lattice.neighbors(dir, u).1, Some(v));
                }
                if let Some(u) = plus {
                    assert_eq!(lattice.neighbors(dir, u).0, Some(v));
                }
            }
        }
    }

    #[test]
    fn lattice_keys_lie_on_the_hyperplane_lattice() {
        let f = random_points(50, 3, 4.0, 8);
        let lattice = PermutohedralLattice::build(&f);
        for v in 0..lattice.vertex_count() {
            let k = lattice.vertex_key(v);
            let last = -k.iter().sum::<i32>();
            // all coordinates share one residue mod d+1
            let r = k[0].rem_euclid(4);
            assert!(k.iter().chain([&last]).all(|c| c.rem_euclid(4) == r));
        }
    }

    #[test]
    fn constants_are_fixed_points_after_normalization() {
        let f = random_points(500, 5, 3.0, 11);
        let lattice = PermutohedralLattice::build(&f);
        let ones = lattice.filter(&vec![1.0; 500], 1).unwrap();
        let vals = lattice.filter(&vec![3.5; 500], 1).unwrap();
        for v in normalize_rows(&vals, &ones, 1) {
            assert!((v - 3.5).abs() < 1e-4);
        }
    }

    #[test]
    fn self_weights_match_impulse_responses() {
        for d in [2, 5] {
            let f = random_points(60, d, 2.5, 21 + d as u64);
            let lattice = PermutohedralLattice::build(&f);
            let weights = lattice.self_weights();
            for i in [0, 7, 33, 59] {
                let mut impulse = vec![0.0f32; 60];
                impulse[i] = 1.0;
                let response = lattice.filter(&impulse, 1).unwrap();
                assert!(
                    (response[i] - weights[i]).abs() < 1e-5 * weights[i],
                    "{} vs {}",
                    response[i],
                    weights[i]
                );
            }
        }
        let lone = PermutohedralLattice::build(&FeaturePoints::new(2, vec![0.2, 0.9]).unwrap());
        let direct = lone.filter(&[1.0], 1).unwrap()[0];
        assert!((lone.self_weights()[0] - direct).abs() < 1e-6);
    }

    #[test]
    fn far_clusters_do_not_interact() {
        let mut coords = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            coords.extend([rng.random_range(0.0..1.0f64), rng.random_range(0.0..1.0)]);
        }
        for _ in 0..50 {
            coords.extend([
                rng.random_range(40.0..41.0f64),
                rng.random_range(40.0..41.0),
            ]);
        }
        let f = FeaturePoints::new(2, coords).unwrap();
        let mut values = vec![1.0f32; 50];
        values.extend(vec![0.0; 50]);
        for out in [
            gaussian_filter_exact(&values, 1, &f).unwrap(),
            PermutohedralLattice::build(&f).filter(&values, 1).unwrap(),
        ] {
            let within = out[..50].iter().cloned().fold(f64::INFINITY, f64::min);
            let across = out[50..].iter().cloned().fold(0.0, f64::max);
            assert!(across <= 1e-3 * within, "{across} vs {within}");
        }
    }
}
