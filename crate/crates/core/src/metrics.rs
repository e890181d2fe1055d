//! Diagnostics on particle configurations: minimal distance, infinity-Wasserstein distances,
//! singular interaction sums, dilution reports, field errors, and rate fits.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::density::DensitySpec;
use crate::error::{Error, Result};
use crate::linalg::{Mat3, Vec3};
use crate::neighbors::{bounds, CellList};

/// Equal-weight point measure.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmpiricalMeasure {
    pub points: Vec<Vec3>,
}

impl EmpiricalMeasure {
    pub fn new(points: Vec<Vec3>) -> Self {
        EmpiricalMeasure { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Smallest pairwise distance by direct enumeration; infinite for fewer than two points.
pub fn min_distance_brute(points: &[Vec3]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in 0..i {
            best = best.min((points[i] - points[j]).norm());
        }
    }
    best
}

/// Smallest pairwise distance using a cell list; agrees exactly with [`min_distance_brute`].
pub fn min_distance(points: &[Vec3]) -> f64 {
    let n = points.len();
    if n < 64 {
        return min_distance_brute(points);
    }
    let (lo, hi) = bounds(points);
    let ext = hi - lo;
    let vol = ext[0].max(1e-300) * ext[1].max(1e-300) * ext[2].max(1e-300);
    let mut h = libm::cbrt(vol / n as f64);
    let emax = ext.max_abs();
    if !(h.is_finite() && h > 0.0) || h < emax * 1e-9 {
        h = (emax / libm::cbrt(n as f64)).max(1e-300);
    }
    let cells = CellList::build(points, h);
    let h = cells.cell_size();
    let mut best = f64::INFINITY;
    for (i, p) in points.iter().enumerate() {
        cells.for_each_near(*p, |j| {
            if j < i {
                best = best.min((*p - points[j]).norm());
            }
        });
    }
    if best <= h {
        best
    } else {
        min_distance_brute(points)
    }
}

/// Exact infinity-Wasserstein distance between two equal-size empirical measures
/// (bottleneck assignment).
pub fn w_infinity_empirical(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64> {
    bottleneck(&a.points, &b.points)
}

fn bottleneck(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    let n = a.len();
    if n != b.len() {
        return Err(Error::InvalidParameter {
            name: "measures",
            reason: format!("cardinalities differ ({} vs {})", n, b.len()),
        });
    }
    if n == 0 {
        return Ok(0.0);
    }
    if a.iter().chain(b).any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("measure support"));
    }
    // Every point must be matched at least as far as its nearest partner.
    let lower = nearest_bound(a, b).max(nearest_bound(b, a));
    let cells_b = CellList::build(b, lower.max(1e-12));
    if perfect_matching(a, b, &cells_b, lower) {
        return Ok(lower);
    }
    let mut upper = lower.max(1e-12) * 2.0;
    loop {
        let cells = CellList::build(b, upper);
        if perfect_matching(a, b, &cells, upper) {
            break;
        }
        upper *= 2.0;
    }
    let cells = CellList::build(b, upper);
    let mut cand = Vec::new();
    for p in a {
        cells.for_each_within(*p, upper, |j| {
            let d = (*p - b[j]).norm();
            if d > lower && d <= upper {
                cand.push(d);
            }
        });
    }
    cand.sort_by(f64::total_cmp);
    cand.dedup();
    let (mut lo, mut hi) = (0usize, cand.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if perfect_matching(a, b, &cells, cand[mid]) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(cand[lo])
}

fn nearest_bound(a: &[Vec3], b: &[Vec3]) -> f64 {
    let n = b.len();
    let (lo, hi) = bounds(b);
    let ext = hi - lo;
    let h = libm::cbrt(ext[0].max(1e-9) * ext[1].max(1e-9) * ext[2].max(1e-9) / n as f64);
    let cells = CellList::build(b, h.max(ext.max_abs() * 1e-6).max(1e-12));
    let mut worst: f64 = 0.0;
    for p in a {
        let mut best = f64::INFINITY;
        let mut r = cells.cell_size();
        loop {
            cells.for_each_within(*p, r, |j| best = best.min((*p - b[j]).norm()));
            if best <= r {
                break;
            }
            r *= 2.0;
        }
        worst = worst.max(best);
    }
    worst
}

/// Whether a perfect matching exists using pairs at distance at most `t` (Hopcroft-Karp).
fn perfect_matching(a: &[Vec3], b: &[Vec3], cells_b: &CellList, t: f64) -> bool {
    let n = a.len();
    let mut start = Vec::with_capacity(n + 1);
    let mut adj = Vec::new();
    start.push(0);
    for p in a {
        let before = adj.len();
        cells_b.for_each_within(*p, t, |j| {
            if (*p - b[j]).norm() <= t {
                adj.push(j as u32);
            }
        });
        if adj.len() == before {
            return false;
        }
        start.push(adj.len());
    }
    hopcroft_karp(n, &start, &adj) == n
}

fn hopcroft_karp(n: usize, start: &[usize], adj: &[u32]) -> usize {
    const NIL: u32 = u32::MAX;
    let mut match_a = vec![NIL; n];
    let mut match_b = vec![NIL; n];
    let mut dist = vec![0u32; n];
    let mut queue = Vec::with_capacity(n);
    let mut matched = 0;
    // Greedy warm start.
    for u in 0..n {
        for &v in &adj[start[u]..start[u + 1]] {
            if match_b[v as usize] == NIL {
                match_b[v as usize] = u as u32;
                match_a[u] = v;
                matched += 1;
                break;
            }
        }
    }
    let mut it = vec![0usize; n];
    let mut stack: Vec<usize> = Vec::new();
    loop {
        queue.clear();
        let mut found = false;
        for u in 0..n {
            if match_a[u] == NIL {
                dist[u] = 0;
                queue.push(u);
            } else {
                dist[u] = u32::MAX;
            }
        }
        let mut head = 0;
        while head < queue.len() {
            let u = queue[head];
            head += 1;
            for &v in &adj[start[u]..start[u + 1]] {
                let w = match_b[v as usize];
                if w == NIL {
                    found = true;
                } else if dist[w as usize] == u32::MAX {
                    dist[w as usize] = dist[u] + 1;
                    queue.push(w as usize);
                }
            }
        }
        if !found {
            break;
        }
        it[..n].copy_from_slice(&start[..n]);
        let before = matched;
        for root in 0..n {
            if match_a[root] != NIL {
                continue;
            }
            // Iterative layered DFS for an augmenting path.
            stack.clear();
            stack.push(root);
            let mut augmented = false;
            while let Some(&u) = stack.last() {
                if it[u] == start[u + 1] {
                    dist[u] = u32::MAX;
                    stack.pop();
                    continue;
                }
                let v = adj[it[u]] as usize;
                it[u] += 1;
                let w = match_b[v];
                if w == NIL {
                    // Flip the path recorded on the stack.
                    let mut v_cur = v;
                    while let Some(x) = stack.pop() {
                        let prev = match_a[x];
                        match_a[x] = v_cur as u32;
                        match_b[v_cur] = x as u32;
                        if prev == NIL {
                            break;
                        }
                        v_cur = prev as usize;
                    }
                    augmented = true;
                    break;
                } else if dist[w as usize] == dist[u] + 1 {
                    stack.push(w as usize);
                }
            }
            if augmented {
                matched += 1;
            }
        }
        if matched == before {
            break;
        }
    }
    matched
}

/// Estimate of the infinity-Wasserstein distance from an empirical measure to a density.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityDistance {
    pub value: f64,
    /// Side of the cells used to discretize the density.
    pub cell: f64,
}

/// Estimates the distance to `rho` by matching the particles to `n` virtual sites.
///
/// The density is integrated over a grid of `resolution^3` cells (sub-sampled `4^3` points per
/// cell); cells are visited in serpentine order and site `k` is placed at the center of the cell
/// holding the cumulative mass quantile `(k + 1/2) / n`. The returned value is the exact
/// bottleneck distance to these sites plus half a cell diagonal.
pub fn w_infinity_to_density(
    emp: &EmpiricalMeasure,
    rho: &DensitySpec,
    resolution: usize,
) -> Result<DensityDistance> {
    let n = emp.len();
    if n == 0 {
        return Err(Error::InvalidParameter {
            name: "measure",
            reason: "empty".into(),
        });
    }
    if resolution == 0 {
        return Err(Error::Resolution("zero cells".into()));
    }
    let (lo, hi) = rho.bounding_box();
    let side = (hi - lo).max_abs() / resolution as f64;
    let dims = [0, 1, 2].map(|a| (libm::ceil((hi[a] - lo[a]) / side) as usize).max(1));
    let sub = 4;
    let mut order = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    for z in 0..dims[2] {
        for yy in 0..dims[1] {
            let y = if z % 2 == 0 { yy } else { dims[1] - 1 - yy };
            for xx in 0..dims[0] {
                let x = if (z * dims[1] + yy) % 2 == 0 {
                    xx
                } else {
                    dims[0] - 1 - xx
                };
                order.push([x, y, z]);
            }
        }
    }
    let mut masses = Vec::with_capacity(order.len());
    for c in &order {
        let mut m = 0.0;
        for s in 0..sub * sub * sub {
            let o = [s % sub, (s / sub) % sub, s / (sub * sub)];
            let p = Vec3::new(
                lo[0] + side * (c[0] as f64 + (o[0] as f64 + 0.5) / sub as f64),
                lo[1] + side * (c[1] as f64 + (o[1] as f64 + 0.5) / sub as f64),
                lo[2] + side * (c[2] as f64 + (o[2] as f64 + 0.5) / sub as f64),
            );
            m += rho.density(p);
        }
        masses.push(m);
    }
    let total: f64 = masses.iter().sum();
    let massive = masses.iter().filter(|m| **m > 0.0).count();
    if massive < n || total <= 0.0 {
        return Err(Error::Resolution(format!(
            "{massive} cells carry mass but {n} sites are required"
        )));
    }
    let mut sites = Vec::with_capacity(n);
    let mut acc = 0.0;
    let mut ci = 0;
    for k in 0..n {
        let q = (k as f64 + 0.5) / n as f64 * total;
        while ci + 1 < masses.len() && acc + masses[ci] < q {
            acc += masses[ci];
            ci += 1;
        }
        let c = order[ci];
        sites.push(Vec3::new(
            lo[0] + side * (c[0] as f64 + 0.5),
            lo[1] + side * (c[1] as f64 + 0.5),
            lo[2] + side * (c[2] as f64 + 0.5),
        ));
    }
    let w = bottleneck(&emp.points, &sites)?;
    Ok(DensityDistance {
        value: w + 0.5 * side * libm::sqrt(3.0),
        cell: side,
    })
}

/// Singular interaction sum and its a-priori bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JoSums {
    pub value: f64,
    pub bound: f64,
}

/// `max_i (1/N) sum_{j != i} |x_i - x_j|^{-k}`.
pub fn jo_value(points: &[Vec3], k: f64) -> f64 {
    let n = points.len();
    let mut best: f64 = 0.0;
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..n {
            if i != j {
                s += libm::pow((points[i] - points[j]).norm(), -k);
            }
        }
        best = best.max(s);
    }
    best / n as f64
}

/// Values of [`jo_value`] for several exponents in one pass.
pub fn jo_values(points: &[Vec3], ks: &[f64]) -> Vec<f64> {
    let n = points.len();
    let mut best = vec![0.0f64; ks.len()];
    let mut s = vec![0.0; ks.len()];
    for i in 0..n {
        s.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..n {
            if i != j {
                let d = (points[i] - points[j]).norm();
                let ld = libm::log(d);
                for (v, k) in s.iter_mut().zip(ks) {
                    *v += libm::exp(-k * ld);
                }
            }
        }
        for (b, v) in best.iter_mut().zip(&s) {
            *b = b.max(*v);
        }
    }
    best.into_iter().map(|b| b / n as f64).collect()
}

/// Bound `C (|rho| W^3 / d^k + |rho|^{k/3})` for `k < 3`, and
/// `C |rho| (W^3 / d^3 + |log(|rho|^{1/3} W)| + 1)` for `k = 3`.
pub fn jo_bound(k: f64, rho_inf: f64, w_inf: f64, d_min: f64, c: f64) -> Result<f64> {
    if !(0.0..=3.0).contains(&k) {
        return Err(Error::InvalidParameter {
            name: "k",
            reason: format!("exponent must lie in [0, 3], got {k}"),
        });
    }
    let w3 = w_inf * w_inf * w_inf;
    Ok(if k < 3.0 {
        c * (rho_inf * w3 / libm::pow(d_min, k) + libm::pow(rho_inf, k / 3.0))
    } else {
        c * rho_inf
            * (w3 / (d_min * d_min * d_min) + libm::log(libm::cbrt(rho_inf) * w_inf).abs() + 1.0)
    })
}

pub fn jo_sums(points: &[Vec3], k: f64, rho_inf: f64, w_inf: f64, c: f64) -> Result<JoSums> {
    let d = min_distance(points);
    Ok(JoSums {
        value: jo_value(points, k),
        bound: jo_bound(k, rho_inf, w_inf, d, c)?,
    })
}

/// Thresholds on the dilution hypotheses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Thresholds {
    /// Upper bound on `|xi|`.
    pub m1: f64,
    /// Lower bound on `|xi|`, above 1.
    pub m2: f64,
    /// Bound on `W^3 / d_min^2`.
    pub e1: f64,
    /// Bound on `W^3 / d_min^3`.
    pub e2: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            m1: 4.0,
            m2: 1.5,
            e1: 1.0,
            e2: 1.0,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.m2 > 1.0 && self.m1 > self.m2) {
            return Err(Error::InvalidParameter {
                name: "thresholds",
                reason: format!(
                    "orientation bounds need m1 > m2 > 1, got m1 = {}, m2 = {}",
                    self.m1, self.m2
                ),
            });
        }
        if !(self.e1 > 0.0 && self.e2 > 0.0) {
            return Err(Error::InvalidParameter {
                name: "thresholds",
                reason: "e1 and e2 must be positive".into(),
            });
        }
        Ok(())
    }
}

/// A violated hypothesis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flag {
    XiAboveM1,
    XiBelowM2,
    Ratio2Exceeded,
    Ratio3Exceeded,
}

impl Flag {
    pub fn as_str(&self) -> &'static str {
        match self {
            Flag::XiAboveM1 => "xi_above_m1",
            Flag::XiBelowM2 => "xi_below_m2",
            Flag::Ratio2Exceeded => "ratio2_exceeded",
            Flag::Ratio3Exceeded => "ratio3_exceeded",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DilutionReport {
    pub d_min: f64,
    pub w_inf: f64,
    pub ratio2: f64,
    pub ratio3: f64,
    pub xi_min: f64,
    pub xi_max: f64,
    pub flags: Vec<Flag>,
}

pub fn dilution_report(
    positions: &[Vec3],
    xi: &[Vec3],
    w_inf: f64,
    thresholds: &Thresholds,
) -> DilutionReport {
    let d_min = min_distance(positions);
    let w3 = w_inf * w_inf * w_inf;
    let ratio2 = w3 / (d_min * d_min);
    let ratio3 = w3 / (d_min * d_min * d_min);
    let (mut xi_min, mut xi_max) = (f64::INFINITY, 0.0f64);
    for x in xi {
        let n = x.norm();
        xi_min = xi_min.min(n);
        xi_max = xi_max.max(n);
    }
    let mut flags = Vec::new();
    if xi_max >= thresholds.m1 {
        flags.push(Flag::XiAboveM1);
    }
    if xi_min <= thresholds.m2 {
        flags.push(Flag::XiBelowM2);
    }
    if ratio2 > thresholds.e1 {
        flags.push(Flag::Ratio2Exceeded);
    }
    if ratio3 > thresholds.e2 {
        flags.push(Flag::Ratio3Exceeded);
    }
    DilutionReport {
        d_min,
        w_inf,
        ratio2,
        ratio3,
        xi_min,
        xi_max,
        flags,
    }
}

/// Sup-norm errors of a velocity field and of its gradient over a probe set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldErrors {
    pub e0: f64,
    pub e1: f64,
    pub probes: usize,
}

/// Lattice of `per_axis^3` probes over the support box of `rho`, keeping probes where the density
/// is positive and that lie farther than `exclusion` from every particle.
pub fn probe_lattice(
    rho: &DensitySpec,
    per_axis: usize,
    particles: &[Vec3],
    exclusion: f64,
) -> Vec<Vec3> {
    let (lo, hi) = rho.bounding_box();
    let cells = CellList::build(particles, exclusion.max(1e-12));
    let mut out = Vec::new();
    for k in 0..per_axis * per_axis * per_axis {
        let idx = [k % per_axis, (k / per_axis) % per_axis, k / (per_axis * per_axis)];
        let p = Vec3::new(
            lo[0] + (hi[0] - lo[0]) * (idx[0] as f64 + 0.5) / per_axis as f64,
            lo[1] + (hi[1] - lo[1]) * (idx[1] as f64 + 0.5) / per_axis as f64,
            lo[2] + (hi[2] - lo[2]) * (idx[2] as f64 + 0.5) / per_axis as f64,
        );
        if rho.density(p) <= 0.0 {
            continue;
        }
        let mut clear = true;
        cells.for_each_within(p, exclusion, |j| {
            if (particles[j] - p).norm() <= exclusion {
                clear = false;
            }
        });
        if clear {
            out.push(p);
        }
    }
    out
}

/// Compares `approx` against `reference`, both returning value and gradient, at each probe.
pub fn field_error_report(
    probes: &[Vec3],
    mut approx: impl FnMut(Vec3) -> Result<(Vec3, Mat3)>,
    mut reference: impl FnMut(Vec3) -> Result<(Vec3, Mat3)>,
) -> Result<FieldErrors> {
    let mut e0: f64 = 0.0;
    let mut e1: f64 = 0.0;
    for p in probes {
        let (u, g) = approx(*p)?;
        let (ur, gr) = reference(*p)?;
        e0 = e0.max((u - ur).norm());
        e1 = e1.max((g - gr).norm());
    }
    Ok(FieldErrors {
        e0,
        e1,
        probes: probes.len(),
    })
}

/// Least-squares line through `(log x, log y)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_slope(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidParameter {
            name: "series",
            reason: format!("need two or more paired samples, got {} and {}", xs.len(), ys.len()),
        });
    }
    if xs.iter().chain(ys).any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::InvalidParameter {
            name: "series",
            reason: "log-log fit needs finite positive samples".into(),
        });
    }
    let lx: Vec<f64> = xs.iter().map(|v| libm::log(*v)).collect();
    let ly: Vec<f64> = ys.iter().map(|v| libm::log(*v)).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter {
            name: "series",
            reason: "abscissae are all equal".into(),
        });
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LineFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

/// Lower bound `(N |rho|)^{-1/3} (3 / (4 pi))^{1/3}` on the distance from `N` equal atoms to a
/// density bounded by `rho_inf`.
pub fn w_infinity_lower_bound(n: usize, rho_inf: f64) -> f64 {
    libm::cbrt(3.0 / (4.0 * PI * n as f64 * rho_inf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bottleneck_simple() {
        let a = EmpiricalMeasure::new(vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0)]);
        let b = EmpiricalMeasure::new(vec![Vec3::new(1.1, 0.0, 0.0), Vec3::new(0.3, 0.0, 0.0)]);
        let w = w_infinity_empirical(&a, &b).unwrap();
        assert!((w - 0.3).abs() < 1e-15);
        assert_eq!(w_infinity_empirical(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.5)).collect();
        let f = fit_slope(&xs, &ys).unwrap();
        assert!((f.slope - 1.5).abs() < 1e-12);
        assert!(fit_slope(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn bound_rejects_large_exponent() {
        assert!(jo_bound(3.5, 1.0, 0.1, 0.1, 1.0).is_err());
    }
}
