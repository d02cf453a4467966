//! Anchor placement and expansion into `K x T` token neighborhoods.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Layer,
    Substrate,
}

impl Region {
    pub fn name(self) -> &'static str {
        match self {
            Region::Layer => "layer",
            Region::Substrate => "substrate",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Region::Layer => 0,
            Region::Substrate => 1,
        }
    }

    /// Whether `x` lies in this region given the interface position.
    pub fn contains(self, x: f64, interface: f64) -> bool {
        match self {
            Region::Layer => x <= interface,
            Region::Substrate => x >= interface,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub x: f64,
    pub t: f64,
    pub region: Region,
}

/// Closed spatial interval `[lo, hi]` of one region.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::invalid(format!("region bounds [{lo}, {hi}] are not ordered")));
        }
        Ok(Self { lo, hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// `count` anchors at cell centers of `count` equal slices of the region,
/// paired round-robin with `time_grid` starting at `time_offset`.
pub fn place_anchors(bounds: Bounds, region: Region, count: usize, time_grid: &[f64], time_offset: usize) -> Result<Vec<Anchor>> {
    if count == 0 {
        return Err(Error::invalid("anchor count must be at least 1"));
    }
    if time_grid.is_empty() {
        return Err(Error::invalid("anchor time grid is empty"));
    }
    if bounds.width() <= 0.0 && count > 1 {
        return Err(Error::invalid(format!("cannot place {count} anchors in a zero-width region")));
    }
    let h = bounds.width() / count as f64;
    Ok((0..count)
        .map(|i| Anchor {
            x: bounds.lo + (i as f64 + 0.5) * h,
            t: time_grid[(i + time_offset) % time_grid.len()],
            region,
        })
        .collect())
}

/// `n` uniform times `j·t_max/n`, `j = 0..n`.
pub fn uniform_time_grid(n: usize, t_max: f64) -> Vec<f64> {
    (0..n).map(|j| j as f64 * t_max / n as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceBatch {
    /// Time-major: token `j·K + k` sits at spatial offset `k` and time step `j`.
    pub tokens: Vec<(f64, f64)>,
    /// The anchor after any inward shift.
    pub anchor: Anchor,
    pub k: usize,
    pub t: usize,
    pub dx: f64,
    pub dt: f64,
}

impl SequenceBatch {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token index of spatial offset `k` and time step `j`.
    pub fn index(&self, k: usize, j: usize) -> usize {
        j * self.k + k
    }
}

/// Expands an anchor into its `K x T` neighborhood. If the spatial stencil
/// would leave `bounds` the anchor is moved inward just enough to fit.
pub fn expand_neighborhood(anchor: Anchor, bounds: Bounds, k: usize, t: usize, dx: f64, dt: f64) -> Result<SequenceBatch> {
    if k == 0 || k % 2 == 0 {
        return Err(Error::invalid(format!("K must be odd, got {k}")));
    }
    if t == 0 {
        return Err(Error::invalid("T must be at least 1"));
    }
    if !(dx > 0.0 && dt > 0.0) {
        return Err(Error::invalid("stencil spacings must be positive"));
    }
    let half = (k - 1) / 2;
    let reach = half as f64 * dx;
    if 2.0 * reach > bounds.width() + 1e-12 {
        return Err(Error::invalid(format!(
            "a {k}-point stencil with spacing {dx} does not fit in [{}, {}]",
            bounds.lo, bounds.hi
        )));
    }
    let mut a = anchor;
    let shifted = a.x.clamp(bounds.lo + reach, bounds.hi - reach);
    if shifted != a.x {
        log::debug!("anchor at x={} shifted to {} to keep its stencil inside the {} region", a.x, shifted, a.region.name());
        a.x = shifted;
    }
    let mut tokens = Vec::with_capacity(k * t);
    for j in 0..t {
        for i in 0..k {
            let off = i as f64 - half as f64;
            tokens.push((a.x + off * dx, a.t + j as f64 * dt));
        }
    }
    Ok(SequenceBatch { tokens, anchor: a, k, t, dx, dt })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub layer_anchors: usize,
    pub substrate_anchors: usize,
    pub k: usize,
    pub t: usize,
    pub dx: f64,
    pub dt: f64,
    /// Number of points in the uniform anchor time grid.
    pub time_points: usize,
    /// Shift the round-robin time assignment by one grid slot per epoch.
    pub rotate_times: bool,
    /// Expected total token count; checked when set.
    pub budget: Option<usize>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            layer_anchors: 20,
            substrate_anchors: 30,
            k: 5,
            t: 20,
            dx: 1e-3,
            dt: 1e-3,
            time_points: 20,
            rotate_times: false,
            budget: Some(5000),
        }
    }
}

impl SamplingConfig {
    pub fn tokens_per_sequence(&self) -> usize {
        self.k * self.t
    }

    pub fn total_tokens(&self) -> usize {
        (self.layer_anchors + self.substrate_anchors) * self.tokens_per_sequence()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub t: f64,
    pub region: Region,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    Sequences(Vec<SequenceBatch>),
    Points(Vec<Point>),
}

impl Dataset {
    /// Total number of tokens or points.
    pub fn size(&self) -> usize {
        match self {
            Dataset::Sequences(s) => s.iter().map(|q| q.len()).sum(),
            Dataset::Points(p) => p.len(),
        }
    }

    pub fn sequences(&self, region: Region) -> Vec<&SequenceBatch> {
        match self {
            Dataset::Sequences(s) => s.iter().filter(|q| q.anchor.region == region).collect(),
            Dataset::Points(_) => Vec::new(),
        }
    }

    pub fn points(&self, region: Region) -> Vec<Point> {
        match self {
            Dataset::Points(p) => p.iter().copied().filter(|q| q.region == region).collect(),
            Dataset::Sequences(_) => Vec::new(),
        }
    }

    /// CSV with columns `sequence_id,token_index,x,t,region`. Points are
    /// written as one-token sequences.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("sequence_id,token_index,x,t,region\n");
        match self {
            Dataset::Sequences(seqs) => {
                for (i, q) in seqs.iter().enumerate() {
                    for (j, &(x, t)) in q.tokens.iter().enumerate() {
                        let _ = writeln!(s, "{i},{j},{x:.8e},{t:.8e},{}", q.anchor.region.name());
                    }
                }
            }
            Dataset::Points(pts) => {
                for (i, p) in pts.iter().enumerate() {
                    let _ = writeln!(s, "{i},0,{:.8e},{:.8e},{}", p.x, p.t, p.region.name());
                }
            }
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Anchors for both regions and their neighborhoods. `epoch` only matters
/// when `rotate_times` is set.
pub fn build_dataset(cfg: &SamplingConfig, layer: Bounds, substrate: Bounds, t_max: f64, epoch: usize) -> Result<Dataset> {
    if cfg.layer_anchors + cfg.substrate_anchors == 0 {
        return Err(Error::invalid("no anchors requested"));
    }
    let grid = uniform_time_grid(cfg.time_points, t_max);
    let rot = if cfg.rotate_times { epoch } else { 0 };
    let mut anchors = Vec::new();
    if cfg.layer_anchors > 0 {
        anchors.extend(place_anchors(layer, Region::Layer, cfg.layer_anchors, &grid, rot)?);
    }
    if cfg.substrate_anchors > 0 {
        anchors.extend(place_anchors(substrate, Region::Substrate, cfg.substrate_anchors, &grid, cfg.layer_anchors + rot)?);
    }
    let seqs = anchors
        .into_iter()
        .map(|a| {
            let b = if a.region == Region::Layer { layer } else { substrate };
            expand_neighborhood(a, b, cfg.k, cfg.t, cfg.dx, cfg.dt)
        })
        .collect::<Result<Vec<_>>>()?;
    let ds = Dataset::Sequences(seqs);
    if let Some(budget) = cfg.budget {
        if ds.size() != budget {
            return Err(Error::invalid(format!(
                "dataset holds {} tokens ({} anchors x {}), budget is {budget}",
                ds.size(),
                cfg.layer_anchors + cfg.substrate_anchors,
                cfg.tokens_per_sequence()
            )));
        }
    }
    Ok(ds)
}

/// `n` independent uniform points split 2:3 between layer and substrate.
/// `margin_x`/`margin_t` keep room for the finite-difference stencil built
/// around each point.
pub fn pointwise_dataset(n: usize, layer: Bounds, substrate: Bounds, t_max: f64, margin_x: f64, margin_t: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("point count must be at least 1"));
    }
    let n_layer = n * 2 / 5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::with_capacity(n);
    for i in 0..n {
        let (b, region) = if i < n_layer { (layer, Region::Layer) } else { (substrate, Region::Substrate) };
        let x = rng.gen_range(b.lo + margin_x..=b.hi - margin_x);
        let t = rng.gen_range(0.0..=t_max - margin_t);
        pts.push(Point { x, t, region });
    }
    Ok(Dataset::Points(pts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn regions() -> (Bounds, Bounds) {
        (Bounds::new(0.0, 1.0).unwrap(), Bounds::new(1.0, 10.0).unwrap())
    }

    #[test]
    fn benchmark_anchor_counts() {
        let (l, s) = regions();
        let ds = build_dataset(&SamplingConfig::default(), l, s, 1.0, 0).unwrap();
        match &ds {
            Dataset::Sequences(q) => assert_eq!(q.len(), 50),
            _ => unreachable!(),
        }
        assert_eq!(ds.sequences(Region::Layer).len(), 20);
        assert_eq!(ds.sequences(Region::Substrate).len(), 30);
        assert_eq!(ds.size(), 5000);
    }

    #[test]
    fn single_anchor_sits_at_midpoint() {
        let a = place_anchors(Bounds::new(2.0, 4.0).unwrap(), Region::Substrate, 1, &[0.0], 0).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].x, 3.0);
    }

    #[test]
    fn anchors_inside_bounds_and_round_robin() {
        let grid = uniform_time_grid(20, 1.0);
        let a = place_anchors(Bounds::new(1.0, 10.0).unwrap(), Region::Substrate, 30, &grid, 0).unwrap();
        assert!(a.iter().all(|p| p.x >= 1.0 && p.x <= 10.0));
        assert_eq!(a[21].t, grid[1]);
        assert!(place_anchors(Bounds::new(1.0, 1.0).unwrap(), Region::Substrate, 2, &grid, 0).is_err());
        assert!(place_anchors(Bounds::new(0.0, 1.0).unwrap(), Region::Layer, 0, &grid, 0).is_err());
    }

    #[test]
    fn expand_enumerates_neighborhood() {
        let a = Anchor { x: 0.5, t: 0.0, region: Region::Layer };
        let q = expand_neighborhood(a, regions().0, 3, 2, 1e-3, 1e-3).unwrap();
        let want = [(0.499, 0.0), (0.5, 0.0), (0.501, 0.0), (0.499, 0.001), (0.5, 0.001), (0.501, 0.001)];
        assert_eq!(q.len(), 6);
        for (got, w) in q.tokens.iter().zip(want) {
            assert_abs_diff_eq!(got.0, w.0, epsilon = 1e-15);
            assert_abs_diff_eq!(got.1, w.1, epsilon = 1e-15);
        }
    }

    #[test]
    fn trivial_neighborhood_is_anchor() {
        let a = Anchor { x: 0.3, t: 0.2, region: Region::Layer };
        let q = expand_neighborhood(a, regions().0, 1, 1, 1e-3, 1e-3).unwrap();
        assert_eq!(q.tokens, vec![(0.3, 0.2)]);
    }

    #[test]
    fn stencils_never_cross_interface() {
        let (l, s) = regions();
        for (a, b) in [
            (Anchor { x: 0.9995, t: 0.0, region: Region::Layer }, l),
            (Anchor { x: 1.0, t: 0.0, region: Region::Substrate }, s),
            (Anchor { x: 0.0, t: 0.0, region: Region::Layer }, l),
        ] {
            let q = expand_neighborhood(a, b, 5, 3, 1e-3, 1e-3).unwrap();
            assert!(q.tokens.iter().all(|&(x, _)| x >= b.lo - 1e-15 && x <= b.hi + 1e-15));
            assert!(q.tokens.iter().all(|&(x, _)| a.region.contains(x, 1.0)));
        }
    }

    #[test]
    fn expand_rejects_bad_shapes() {
        let a = Anchor { x: 0.5, t: 0.0, region: Region::Layer };
        assert!(expand_neighborhood(a, regions().0, 4, 2, 1e-3, 1e-3).is_err());
        assert!(expand_neighborhood(a, regions().0, 3, 0, 1e-3, 1e-3).is_err());
        assert!(expand_neighborhood(a, regions().0, 3, 2, 0.0, 1e-3).is_err());
    }

    #[test]
    fn budget_mismatch_rejected() {
        let (l, s) = regions();
        let cfg = SamplingConfig { budget: Some(4999), ..SamplingConfig::default() };
        let e = build_dataset(&cfg, l, s, 1.0, 0).unwrap_err().to_string();
        assert!(e.contains("5000") && e.contains("4999"), "{e}");
        let cfg = SamplingConfig { layer_anchors: 0, substrate_anchors: 0, ..SamplingConfig::default() };
        assert!(build_dataset(&cfg, l, s, 1.0, 0).is_err());
    }

    #[test]
    fn rotation_changes_times_only_when_enabled() {
        let (l, s) = regions();
        let fixed = SamplingConfig::default();
        assert_eq!(build_dataset(&fixed, l, s, 1.0, 0).unwrap(), build_dataset(&fixed, l, s, 1.0, 3).unwrap());
        let rot = SamplingConfig { rotate_times: true, ..fixed };
        assert_ne!(build_dataset(&rot, l, s, 1.0, 0).unwrap(), build_dataset(&rot, l, s, 1.0, 3).unwrap());
        assert_eq!(build_dataset(&rot, l, s, 1.0, 0).unwrap(), build_dataset(&rot, l, s, 1.0, 20).unwrap());
    }

    #[test]
    fn dataset_json_roundtrip() {
        let (l, s) = regions();
        let ds = build_dataset(&SamplingConfig::default(), l, s, 1.0, 0).unwrap();
        let back: Dataset = serde_json::from_str(&serde_json::to_string(&ds).unwrap()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(ds.to_csv().lines().count(), 5001);
    }

    #[test]
    fn pointwise_split_and_determinism() {
        let (l, s) = regions();
        let a = pointwise_dataset(5000, l, s, 1.0, 1e-3, 1e-3, 7).unwrap();
        assert_eq!(a.points(Region::Layer).len(), 2000);
        assert_eq!(a.points(Region::Substrate).len(), 3000);
        assert_eq!(a, pointwise_dataset(5000, l, s, 1.0, 1e-3, 1e-3, 7).unwrap());
        for p in a.points(Region::Layer).iter().chain(a.points(Region::Substrate).iter()) {
            let b = if p.region == Region::Layer { l } else { s };
            assert!(p.x >= b.lo && p.x <= b.hi && p.t >= 0.0 && p.t <= 1.0);
        }
    }
}
