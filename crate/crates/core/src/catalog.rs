//! The tiled VR video universe.
//!
//! A video is split spatially into a `rows x cols` equirectangular tile grid and
//! temporally into segments. Each (tile, segment, layer) is a monoscopic chunk
//! (MVC). A stereoscopic chunk (SVC) is identified by its center tile and segment
//! and is stitched from `x0` base-layer MVCs plus `x_total - x0` enhancement-layer
//! MVCs around the center.
//!
//! Tile selection around a center uses the Chebyshev distance (horizontally
//! wrapping, vertically clamped) from the field-of-view footprint anchored at that
//! center, with ties broken by `(row, col)`. With `x0` equal to the FoV size the
//! base layer is exactly the FoV; each further ring widens the block by one tile
//! on every side.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// One kilobit, in bits.
pub const KBIT: f64 = 1_000.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Tile {
    pub row: usize,
    pub col: usize,
}

impl Tile {
    pub const fn new(row: usize, col: usize) -> Self {
        Tile { row, col }
    }
}

impl fmt::Display for Tile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Layer {
    Base,
    Enhancement,
}

impl Layer {
    pub fn index(self) -> usize {
        match self {
            Layer::Base => 0,
            Layer::Enhancement => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Layer::Base),
            1 => Some(Layer::Enhancement),
            _ => None,
        }
    }
}

/// A monoscopic chunk: one tile of one segment at one quality layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MvcId {
    pub tile: Tile,
    pub segment: usize,
    pub layer: Layer,
}

/// A stereoscopic chunk, identified by its center tile and segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SvcId {
    pub center: Tile,
    pub segment: usize,
}

impl fmt::Display for SvcId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "svc{}@{}", self.center, self.segment)
    }
}

/// The tile at the center of a user's FoV during a segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Viewpoint {
    pub tile: Tile,
    pub segment: usize,
}

impl Viewpoint {
    pub const fn new(row: usize, col: usize, segment: usize) -> Self {
        Viewpoint {
            tile: Tile::new(row, col),
            segment,
        }
    }
}

impl fmt::Display for Viewpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.tile, self.segment)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileGrid {
    pub rows: usize,
    pub cols: usize,
    pub fov_rows: usize,
    pub fov_cols: usize,
}

impl TileGrid {
    pub fn new(rows: usize, cols: usize, fov_rows: usize, fov_cols: usize) -> Result<Self> {
        if fov_rows == 0 || fov_cols == 0 {
            return Err(Error::InvalidGrid("FoV must span at least one tile".into()));
        }
        if rows < fov_rows || cols < fov_cols {
            return Err(Error::InvalidGrid(format!(
                "FoV {fov_rows}x{fov_cols} does not fit a {rows}x{cols} grid"
            )));
        }
        Ok(TileGrid {
            rows,
            cols,
            fov_rows,
            fov_cols,
        })
    }

    /// The 24 x 12 equirectangular grid with a 7 x 5 FoV.
    pub fn equirect_default() -> Self {
        TileGrid {
            rows: 12,
            cols: 24,
            fov_rows: 5,
            fov_cols: 7,
        }
    }

    pub fn tile_count(&self) -> usize {
        self.rows * self.cols
    }

    /// Number of tiles covering one FoV.
    pub fn fov_size(&self) -> usize {
        self.fov_rows * self.fov_cols
    }

    pub fn contains(&self, tile: Tile) -> bool {
        tile.row < self.rows && tile.col < self.cols
    }

    pub fn tile_index(&self, tile: Tile) -> usize {
        tile.row * self.cols + tile.col
    }

    pub fn tile_at(&self, index: usize) -> Tile {
        Tile::new(index / self.cols, index % self.cols)
    }

    pub fn tiles(&self) -> impl Iterator<Item = Tile> + '_ {
        (0..self.tile_count()).map(move |i| self.tile_at(i))
    }

    /// Moves a tile by a signed offset: columns wrap, rows clamp.
    pub fn offset(&self, tile: Tile, d_row: isize, d_col: isize) -> Tile {
        let row = (tile.row as isize + d_row).clamp(0, self.rows as isize - 1) as usize;
        let col = (tile.col as isize + d_col).rem_euclid(self.cols as isize) as usize;
        Tile::new(row, col)
    }

    /// Top-left corner of the FoV footprint for a viewpoint at `center`.
    /// The footprint is shifted vertically to stay inside the grid.
    pub fn fov_origin(&self, center: Tile) -> (usize, usize) {
        let up = (self.fov_rows - 1) / 2;
        let row = center.row.saturating_sub(up).min(self.rows - self.fov_rows);
        let left = (self.fov_cols - 1) / 2;
        let col = (center.col + self.cols - left % self.cols) % self.cols;
        (row, col)
    }

    pub fn fov_tiles(&self, center: Tile) -> Vec<Tile> {
        let (r0, c0) = self.fov_origin(center);
        let mut out = Vec::with_capacity(self.fov_size());
        for r in r0..r0 + self.fov_rows {
            for dc in 0..self.fov_cols {
                out.push(Tile::new(r, (c0 + dc) % self.cols));
            }
        }
        out
    }

    /// Chebyshev distance from `tile` to the FoV footprint anchored at `center`.
    pub fn footprint_distance(&self, center: Tile, tile: Tile) -> usize {
        let (r0, c0) = self.fov_origin(center);
        let r1 = r0 + self.fov_rows - 1;
        let dr = if tile.row < r0 {
            r0 - tile.row
        } else { tile.row.saturating_sub(r1) };
        let o = (tile.col + self.cols - c0) % self.cols;
        let dc = if o < self.fov_cols {
            0
        } else {
            (o - (self.fov_cols - 1)).min(self.cols - o)
        };
        dr.max(dc)
    }

    /// All grid tiles ordered by `(footprint distance, row, col)` around `center`.
    pub fn tiles_by_distance(&self, center: Tile) -> Vec<Tile> {
        let mut tiles: Vec<(usize, Tile)> = self
            .tiles()
            .map(|t| (self.footprint_distance(center, t), t))
            .collect();
        tiles.sort();
        tiles.into_iter().map(|(_, t)| t).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QualityConfig {
    pub x_total: usize,
    pub x0: usize,
}

impl QualityConfig {
    pub fn new(x_total: usize, x0: usize) -> Self {
        QualityConfig { x_total, x0 }
    }

    /// Number of enhancement-layer MVCs per SVC.
    pub fn x1(&self) -> usize {
        self.x_total.saturating_sub(self.x0)
    }

    pub fn validate(&self, grid: &TileGrid) -> Result<()> {
        if self.x0 < grid.fov_size() {
            return Err(Error::InvalidQuality(format!(
                "x0 = {} is below the FoV size {}",
                self.x0,
                grid.fov_size()
            )));
        }
        if self.x0 > grid.tile_count() {
            return Err(Error::InvalidQuality(format!(
                "x0 = {} exceeds the {} tiles of the grid",
                self.x0,
                grid.tile_count()
            )));
        }
        if self.x_total < self.x0 {
            return Err(Error::InvalidQuality(format!(
                "x_total = {} is below x0 = {}",
                self.x_total, self.x0
            )));
        }
        if self.x1() > self.x0 {
            return Err(Error::InvalidQuality(format!(
                "{} enhancement MVCs cannot overlay {} base tiles",
                self.x1(),
                self.x0
            )));
        }
        Ok(())
    }
}

/// Geometry shared by every SVC with the same center tile.
#[derive(Clone, Debug)]
struct CenterGeometry {
    base: Vec<Tile>,
    enhancement: Vec<Tile>,
    render: Vec<Tile>,
}

fn center_geometry(grid: &TileGrid, quality: &QualityConfig, center: Tile) -> CenterGeometry {
    let ordered = grid.tiles_by_distance(center);
    let base: Vec<Tile> = ordered[..quality.x0].to_vec();
    let enhancement: Vec<Tile> = ordered[..quality.x1()].to_vec();
    let mut covered = vec![false; grid.tile_count()];
    for t in &base {
        covered[grid.tile_index(*t)] = true;
    }
    // A viewpoint's own tile lies inside its FoV, so candidates are base tiles.
    let mut render: Vec<Tile> = base
        .iter()
        .copied()
        .filter(|&v| {
            grid.fov_tiles(v)
                .iter()
                .all(|t| covered[grid.tile_index(*t)])
        })
        .collect();
    render.sort();
    CenterGeometry {
        base,
        enhancement,
        render,
    }
}

/// How viewpoint popularity is generated for a synthetic catalog.
#[derive(Clone, Debug, PartialEq)]
pub enum PopularityModel {
    Uniform,
    /// One Gaussian hotspot per segment, spread in tiles; segment weights are
    /// drawn uniformly from `[1 - segment_skew, 1]`.
    Hotspot { spread: f64, segment_skew: f64 },
    /// Explicit probabilities indexed by `Catalog::viewpoint_index`.
    Explicit(Vec<f64>),
}

/// Parameters for building a catalog.
#[derive(Clone, Debug, PartialEq)]
pub struct CatalogSpec {
    pub grid: TileGrid,
    pub segments: usize,
    pub quality: QualityConfig,
    pub alpha: f64,
    pub size_mean: f64,
    pub size_sd: f64,
    pub size_floor: f64,
    pub popularity: PopularityModel,
}

impl Default for CatalogSpec {
    fn default() -> Self {
        CatalogSpec {
            grid: TileGrid::equirect_default(),
            segments: 4,
            quality: QualityConfig::new(68, 63),
            alpha: 1.3,
            size_mean: 30.0 * KBIT,
            size_sd: 10.0 * KBIT,
            size_floor: 1.0 * KBIT,
            popularity: PopularityModel::Hotspot {
                spread: 2.0,
                segment_skew: 0.5,
            },
        }
    }
}

impl CatalogSpec {
    pub fn build<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Catalog> {
        if self.segments == 0 {
            return Err(Error::param("catalog needs at least one segment"));
        }
        if !(self.size_mean > 0.0 && self.size_sd >= 0.0 && self.size_floor > 0.0) {
            return Err(Error::param("MVC size distribution must be positive"));
        }
        let tiles = self.grid.tile_count();
        let normal = Normal::new(self.size_mean, self.size_sd)
            .map_err(|e| Error::param(format!("size distribution: {e}")))?;
        let mut sizes = Vec::with_capacity(tiles * self.segments * 2);
        for _ in 0..tiles * self.segments * 2 {
            let mut w = normal.sample(rng);
            let mut attempts = 0;
            while w < self.size_floor && attempts < 64 {
                w = normal.sample(rng);
                attempts += 1;
            }
            sizes.push(w.max(self.size_floor));
        }
        let popularity = match &self.popularity {
            PopularityModel::Uniform => vec![1.0 / (tiles * self.segments) as f64; tiles * self.segments],
            PopularityModel::Hotspot {
                spread,
                segment_skew,
            } => hotspot_popularity(&self.grid, self.segments, *spread, *segment_skew, rng),
            PopularityModel::Explicit(p) => p.clone(),
        };
        Catalog::new(
            self.grid,
            self.segments,
            self.quality,
            self.alpha,
            sizes,
            popularity,
        )
    }
}

fn hotspot_popularity<R: Rng + ?Sized>(
    grid: &TileGrid,
    segments: usize,
    spread: f64,
    skew: f64,
    rng: &mut R,
) -> Vec<f64> {
    let tiles = grid.tile_count();
    let mut p = vec![0.0; tiles * segments];
    let spread = spread.max(1e-3);
    for j in 0..segments {
        let hot = Tile::new(rng.gen_range(0..grid.rows), rng.gen_range(0..grid.cols));
        let weight = 1.0 - skew.clamp(0.0, 1.0) * rng.gen::<f64>();
        let mut seg = vec![0.0; tiles];
        for t in grid.tiles() {
            let dr = t.row.abs_diff(hot.row) as f64;
            let raw = t.col.abs_diff(hot.col);
            let dc = raw.min(grid.cols - raw) as f64;
            seg[grid.tile_index(t)] = (-(dr * dr + dc * dc) / (2.0 * spread * spread)).exp();
        }
        let norm: f64 = seg.iter().sum();
        for (i, v) in seg.into_iter().enumerate() {
            p[j * tiles + i] = weight * v / norm;
        }
    }
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    p
}

/// An immutable catalog of chunks, sizes and viewpoint popularity.
#[derive(Clone, Debug)]
pub struct Catalog {
    grid: TileGrid,
    segments: usize,
    quality: QualityConfig,
    alpha: f64,
    mvc_sizes: Vec<f64>,
    popularity: Vec<f64>,
    geometry: Vec<CenterGeometry>,
}

impl Catalog {
    /// `mvc_sizes` is indexed by [`Catalog::mvc_index`], `popularity` by
    /// [`Catalog::viewpoint_index`].
    pub fn new(
        grid: TileGrid,
        segments: usize,
        quality: QualityConfig,
        alpha: f64,
        mvc_sizes: Vec<f64>,
        popularity: Vec<f64>,
    ) -> Result<Self> {
        let grid = TileGrid::new(grid.rows, grid.cols, grid.fov_rows, grid.fov_cols)?;
        quality.validate(&grid)?;
        let tiles = grid.tile_count();
        if mvc_sizes.len() != tiles * segments * 2 {
            return Err(Error::param(format!(
                "expected {} MVC sizes, got {}",
                tiles * segments * 2,
                mvc_sizes.len()
            )));
        }
        if mvc_sizes.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::param("MVC sizes must be positive and finite"));
        }
        if popularity.len() != tiles * segments {
            return Err(Error::param(format!(
                "expected {} popularity entries, got {}",
                tiles * segments,
                popularity.len()
            )));
        }
        if popularity.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::param("popularity must be non-negative"));
        }
        let total: f64 = popularity.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::param(format!("popularity sums to {total}, not 1")));
        }
        if !(alpha > 0.0) {
            return Err(Error::param("alpha must be positive"));
        }
        let geometry = grid
            .tiles()
            .map(|c| center_geometry(&grid, &quality, c))
            .collect();
        Ok(Catalog {
            grid,
            segments,
            quality,
            alpha,
            mvc_sizes,
            popularity,
            geometry,
        })
    }

    /// Same sizes and popularity under a different quality setting.
    pub fn with_quality(&self, quality: QualityConfig) -> Result<Self> {
        Catalog::new(
            self.grid,
            self.segments,
            quality,
            self.alpha,
            self.mvc_sizes.clone(),
            self.popularity.clone(),
        )
    }

    /// Same chunks with replaced popularity.
    pub fn with_popularity(&self, popularity: Vec<f64>) -> Result<Self> {
        Catalog::new(
            self.grid,
            self.segments,
            self.quality,
            self.alpha,
            self.mvc_sizes.clone(),
            popularity,
        )
    }

    pub fn grid(&self) -> &TileGrid {
        &self.grid
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    pub fn quality(&self) -> QualityConfig {
        self.quality
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn mvc_index(&self, t: MvcId) -> usize {
        ((t.segment * self.grid.tile_count()) + self.grid.tile_index(t.tile)) * 2 + t.layer.index()
    }

    pub fn viewpoint_index(&self, v: Viewpoint) -> usize {
        v.segment * self.grid.tile_count() + self.grid.tile_index(v.tile)
    }

    pub fn viewpoint_at(&self, index: usize) -> Viewpoint {
        let tiles = self.grid.tile_count();
        Viewpoint {
            tile: self.grid.tile_at(index % tiles),
            segment: index / tiles,
        }
    }

    pub fn svc_index(&self, f: SvcId) -> usize {
        f.segment * self.grid.tile_count() + self.grid.tile_index(f.center)
    }

    pub fn svc_at(&self, index: usize) -> SvcId {
        let v = self.viewpoint_at(index);
        SvcId {
            center: v.tile,
            segment: v.segment,
        }
    }

    pub fn svc_count(&self) -> usize {
        self.grid.tile_count() * self.segments
    }

    pub fn contains_svc(&self, f: SvcId) -> bool {
        self.grid.contains(f.center) && f.segment < self.segments
    }

    pub fn contains_viewpoint(&self, v: Viewpoint) -> bool {
        self.grid.contains(v.tile) && v.segment < self.segments
    }

    pub fn svcs(&self) -> impl Iterator<Item = SvcId> + '_ {
        (0..self.svc_count()).map(move |i| self.svc_at(i))
    }

    pub fn svcs_in_segment(&self, segment: usize) -> impl Iterator<Item = SvcId> + '_ {
        self.grid.tiles().map(move |center| SvcId { center, segment })
    }

    pub fn viewpoints(&self) -> impl Iterator<Item = Viewpoint> + '_ {
        (0..self.svc_count()).map(move |i| self.viewpoint_at(i))
    }

    pub fn mvc_size(&self, t: MvcId) -> f64 {
        self.mvc_sizes[self.mvc_index(t)]
    }

    pub fn popularity(&self, v: Viewpoint) -> f64 {
        self.popularity[self.viewpoint_index(v)]
    }

    pub fn popularity_vec(&self) -> &[f64] {
        &self.popularity
    }

    pub fn segment_mass(&self, segment: usize) -> f64 {
        let tiles = self.grid.tile_count();
        self.popularity[segment * tiles..(segment + 1) * tiles].iter().sum()
    }

    fn geometry(&self, f: SvcId) -> &CenterGeometry {
        &self.geometry[self.grid.tile_index(f.center)]
    }

    /// Base-layer and enhancement-layer MVCs stitched into `f`, in
    /// `(distance, row, col)` order.
    pub fn mvc_sets_for_svc(&self, f: SvcId) -> (Vec<MvcId>, Vec<MvcId>) {
        let g = self.geometry(f);
        let mk = |layer: Layer| {
            move |t: &Tile| MvcId {
                tile: *t,
                segment: f.segment,
                layer,
            }
        };
        (
            g.base.iter().map(mk(Layer::Base)).collect(),
            g.enhancement.iter().map(mk(Layer::Enhancement)).collect(),
        )
    }

    /// All member MVCs of `f`: base layer first, then enhancement layer.
    pub fn members(&self, f: SvcId) -> Vec<MvcId> {
        let (mut b, e) = self.mvc_sets_for_svc(f);
        b.extend(e);
        b
    }

    /// Viewpoints whose whole FoV lies inside the base-layer coverage of `f`.
    pub fn render_set(&self, f: SvcId) -> Vec<Viewpoint> {
        self.geometry(f)
            .render
            .iter()
            .map(|t| Viewpoint {
                tile: *t,
                segment: f.segment,
            })
            .collect()
    }

    pub fn renders(&self, f: SvcId, v: Viewpoint) -> bool {
        v.segment == f.segment && self.geometry(f).render.binary_search(&v.tile).is_ok()
    }

    /// Sum of member MVC sizes.
    pub fn member_size(&self, f: SvcId) -> f64 {
        self.members(f).iter().map(|t| self.mvc_size(*t)).sum()
    }

    /// SVC size: `alpha` times the summed member MVC sizes.
    pub fn svc_size(&self, f: SvcId) -> f64 {
        self.alpha * self.member_size(f)
    }

    /// SVCs whose render set contains `v`, in id order.
    pub fn renderers(&self, v: Viewpoint) -> Vec<SvcId> {
        // Renderers of v have v's tile among their base tiles, which lie within
        // the footprint distance bound of the ring structure; scanning the
        // segment is cheap at desk scale.
        self.svcs_in_segment(v.segment)
            .filter(|f| self.renders(*f, v))
            .collect()
    }
}

/// One row of a viewpoint trace: `user_id,slot,segment,tile_row,tile_col`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TraceRow {
    pub user: usize,
    pub slot: usize,
    pub segment: usize,
    pub row: usize,
    pub col: usize,
}

impl TraceRow {
    pub fn viewpoint(&self) -> Viewpoint {
        Viewpoint::new(self.row, self.col, self.segment)
    }
}

/// Empirical viewpoint frequencies over all trace slots, indexed like
/// [`Catalog::viewpoint_index`].
pub fn popularity_from_traces(
    traces: &[TraceRow],
    grid: &TileGrid,
    segments: usize,
) -> Result<Vec<f64>> {
    if traces.is_empty() {
        return Err(Error::param("no trace rows to derive popularity from"));
    }
    let tiles = grid.tile_count();
    let mut counts = vec![0u64; tiles * segments];
    for (i, r) in traces.iter().enumerate() {
        let tile = Tile::new(r.row, r.col);
        if !grid.contains(tile) || r.segment >= segments {
            return Err(Error::OutOfRange {
                what: "trace viewpoint",
                detail: format!(
                    "row {i} (user {}, slot {}): tile {tile} segment {} outside {}x{} grid with {segments} segments",
                    r.user, r.slot, r.segment, grid.rows, grid.cols
                ),
            });
        }
        counts[r.segment * tiles + grid.tile_index(tile)] += 1;
    }
    let n = traces.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform_catalog(grid: TileGrid, segments: usize, quality: QualityConfig, size: f64, alpha: f64) -> Catalog {
        let n = grid.tile_count() * segments;
        Catalog::new(grid, segments, quality, alpha, vec![size; n * 2], vec![1.0 / n as f64; n]).unwrap()
    }

    #[test]
    fn single_tile_grid() {
        let grid = TileGrid::new(1, 1, 1, 1).unwrap();
        let cat = uniform_catalog(grid, 1, QualityConfig::new(1, 1), 30.0 * KBIT, 1.0);
        let f = SvcId { center: Tile::new(0, 0), segment: 0 };
        let (b, e) = cat.mvc_sets_for_svc(f);
        assert_eq!(b, vec![MvcId { tile: Tile::new(0, 0), segment: 0, layer: Layer::Base }]);
        assert!(e.is_empty());
        assert_eq!(cat.svc_size(f), 30.0 * KBIT);
    }

    #[test]
    fn default_block_is_fov_shaped() {
        // brute force: every tile within 2 rows and 3 wrapped columns of (6,12)
        let grid = TileGrid::equirect_default();
        let cat = uniform_catalog(grid, 1, QualityConfig::new(35, 35), 30.0 * KBIT, 1.3);
        let f = SvcId { center: Tile::new(6, 12), segment: 0 };
        let (b, _) = cat.mvc_sets_for_svc(f);
        let mut got: Vec<Tile> = b.iter().map(|m| m.tile).collect();
        got.sort();
        let mut want = Vec::new();
        for r in 4..=8 {
            for c in 9..=15 {
                want.push(Tile::new(r, c));
            }
        }
        assert_eq!(got, want);
        assert_eq!(cat.render_set(f), vec![Viewpoint::new(6, 12, 0)]);
        // 35 x 30 Kbit x 1.3
        assert!((cat.svc_size(f) - 1365.0 * KBIT).abs() < 1e-6);
    }

    #[test]
    fn horizontal_wrap_at_column_zero() {
        let grid = TileGrid::equirect_default();
        let cat = uniform_catalog(grid, 1, QualityConfig::new(35, 35), 30.0 * KBIT, 1.0);
        let f = SvcId { center: Tile::new(6, 0), segment: 0 };
        let (b, _) = cat.mvc_sets_for_svc(f);
        let cols: std::collections::BTreeSet<usize> = b.iter().map(|m| m.tile.col).collect();
        assert_eq!(cols.into_iter().collect::<Vec<_>>(), vec![0, 1, 2, 3, 21, 22, 23]);
    }

    #[test]
    fn one_ring_renders_three_by_three() {
        let grid = TileGrid::equirect_default();
        let cat = uniform_catalog(grid, 2, QualityConfig::new(63, 63), 30.0 * KBIT, 1.0);
        let f = SvcId { center: Tile::new(6, 12), segment: 1 };
        let r = cat.render_set(f);
        assert_eq!(r.len(), 9);
        assert!(r.iter().all(|v| v.segment == 1));
        assert!(!cat.renders(f, Viewpoint::new(6, 12, 0)));
        assert!(cat.renders(f, Viewpoint::new(5, 11, 1)));
    }

    #[test]
    fn enhancement_overlays_innermost_base_tiles() {
        let grid = TileGrid::equirect_default();
        let cat = uniform_catalog(grid, 1, QualityConfig::new(40, 35), 30.0 * KBIT, 1.0);
        let f = SvcId { center: Tile::new(0, 5), segment: 0 };
        let (b, e) = cat.mvc_sets_for_svc(f);
        assert_eq!(b.len(), 35);
        assert_eq!(e.len(), 5);
        for m in &e {
            assert!(b.iter().any(|x| x.tile == m.tile));
            assert_eq!(m.layer, Layer::Enhancement);
        }
        // top row: the footprint is shifted down but still renders its center
        assert_eq!(cat.render_set(f).len(), 3);
        assert!(cat.renders(f, Viewpoint::new(0, 5, 0)));
    }

    #[test]
    fn infeasible_quality_rejected() {
        let grid = TileGrid::new(2, 2, 1, 1).unwrap();
        assert!(QualityConfig::new(5, 5).validate(&grid).is_err());
        assert!(QualityConfig::new(3, 1).validate(&grid).is_err());
        assert!(QualityConfig::new(2, 1).validate(&grid).is_ok());
        let grid = TileGrid::equirect_default();
        assert!(QualityConfig::new(34, 34).validate(&grid).is_err());
    }

    #[test]
    fn popularity_counts() {
        let grid = TileGrid::new(2, 2, 1, 1).unwrap();
        let rows = vec![
            TraceRow { user: 0, slot: 0, segment: 0, row: 0, col: 0 },
            TraceRow { user: 0, slot: 1, segment: 0, row: 0, col: 0 },
            TraceRow { user: 1, slot: 0, segment: 1, row: 1, col: 1 },
            TraceRow { user: 1, slot: 1, segment: 1, row: 1, col: 1 },
        ];
        let p = popularity_from_traces(&rows, &grid, 2).unwrap();
        assert_eq!(p[0], 0.5);
        assert_eq!(p[4 + 3], 0.5);
        let bad = [TraceRow { user: 0, slot: 0, segment: 0, row: 2, col: 0 }];
        let err = popularity_from_traces(&bad, &grid, 2).unwrap_err();
        assert!(err.to_string().contains("row 0"));
    }

    #[test]
    fn hotspot_catalog_is_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cat = CatalogSpec::default().build(&mut rng).unwrap();
        let total: f64 = cat.popularity_vec().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(cat.svcs().all(|f| cat.svc_size(f) > 0.0));
    }
}
