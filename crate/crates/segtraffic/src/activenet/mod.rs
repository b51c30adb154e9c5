//! Topological active-net mesh segmentation.
//!
//! A rectangular grid of nodes deforms over an image by greedy per-node
//! energy minimization. The energy couples internal smoothness (membrane
//! stretch measured against the rest spacing, plus a thin-plate second
//! difference) with image terms: interior nodes prefer foreground, grid
//! perimeter nodes prefer strong edges and small distance to the nearest
//! edge pixel. Links spanning background can be cut, producing hole-based
//! meshes and letting components separate; isolated nodes are removed.

mod field;

pub(crate) use field::ImageField;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detect::RoiBox;
use crate::error::{Error, Result};
use crate::imageio::Frame;

/// Weights and search parameters of the mesh energy.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyParams {
    /// Weight of the first-difference (membrane) term.
    pub elasticity: f64,
    /// Weight of the second-difference (thin-plate) term.
    pub rigidity: f64,
    /// Interior-node foreground term weight.
    pub w_internal: f64,
    /// Perimeter-node edge term weight.
    pub w_boundary: f64,
    /// Perimeter-node distance-transform term weight.
    pub w_distance: f64,
    /// Greedy window half-width in pixels.
    pub search_radius: u32,
    /// Cap on greedy passes per convergence run.
    pub max_passes: usize,
    /// Ascending link-cut thresholds swept by [`segment`].
    pub cut_thresholds: Vec<f64>,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self {
            elasticity: 1.0,
            rigidity: 0.5,
            w_internal: 2.0,
            w_boundary: 2.0,
            w_distance: 0.5,
            search_radius: 2,
            max_passes: 100,
            cut_thresholds: vec![0.5, 1.0, 2.0],
        }
    }
}

impl EnergyParams {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            self.elasticity,
            self.rigidity,
            self.w_internal,
            self.w_boundary,
            self.w_distance,
        ];
        if weights.iter().any(|w| w.is_nan() || *w < 0.0) {
            return Err(Error::InvalidParam("energy weights must be >= 0".into()));
        }
        if self.search_radius < 1 {
            return Err(Error::InvalidParam("search_radius must be >= 1".into()));
        }
        if self.max_passes < 1 {
            return Err(Error::InvalidParam("max_passes must be >= 1".into()));
        }
        if self.cut_thresholds.is_empty() {
            return Err(Error::InvalidParam(
                "cut_thresholds must be non-empty".into(),
            ));
        }
        if self.cut_thresholds.windows(2).any(|w| w[0] > w[1]) || self.cut_thresholds[0] < 0.0 {
            return Err(Error::InvalidParam(
                "cut_thresholds must be ascending and >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// The deformable node grid with its binary link structure.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveNetMesh {
    rows: usize,
    cols: usize,
    /// Node (x, y) positions, row-major.
    positions: Vec<(f64, f64)>,
    /// Horizontal links (r, c)-(r, c+1), `rows x (cols-1)`.
    h_links: Vec<bool>,
    /// Vertical links (r, c)-(r+1, c), `(rows-1) x cols`.
    v_links: Vec<bool>,
    alive: Vec<bool>,
    rest_x: f64,
    rest_y: f64,
}

/// Serializable form of a mesh: positions, alive flags, and the full
/// node-adjacency binary matrix as a row-major bit list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeshRecord {
    pub rows: usize,
    pub cols: usize,
    pub positions: Vec<[f64; 2]>,
    pub alive: Vec<bool>,
    pub links: Vec<u8>,
}

/// Uniformly spaces a `rows x cols` node grid over `bbox` (nodes span the
/// closed box, corners included), with every link present and every node
/// alive.
pub fn init_mesh(rows: usize, cols: usize, bbox: &RoiBox) -> Result<ActiveNetMesh> {
    if rows < 2 || cols < 2 {
        return Err(Error::InvalidParam(format!(
            "mesh must be at least 2x2, got {rows}x{cols}"
        )));
    }
    let rest_x = bbox.w as f64 / (cols - 1) as f64;
    let rest_y = bbox.h as f64 / (rows - 1) as f64;
    let mut positions = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            positions.push((
                bbox.x as f64 + c as f64 * rest_x,
                bbox.y as f64 + r as f64 * rest_y,
            ));
        }
    }
    Ok(ActiveNetMesh {
        rows,
        cols,
        positions,
        h_links: vec![true; rows * (cols - 1)],
        v_links: vec![true; (rows - 1) * cols],
        alive: vec![true; rows * cols],
        rest_x,
        rest_y,
    })
}

impl ActiveNetMesh {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    fn idx(&self, r: usize, c: usize) -> usize {
        r * self.cols + c
    }

    pub fn position(&self, r: usize, c: usize) -> (f64, f64) {
        self.positions[self.idx(r, c)]
    }

    pub fn set_position(&mut self, r: usize, c: usize, pos: (f64, f64)) {
        let i = self.idx(r, c);
        self.positions[i] = pos;
    }

    pub fn is_alive(&self, r: usize, c: usize) -> bool {
        self.alive[self.idx(r, c)]
    }

    /// Live link between (r, c) and (r, c+1).
    pub fn h_link(&self, r: usize, c: usize) -> bool {
        self.h_links[r * (self.cols - 1) + c]
    }

    /// Live link between (r, c) and (r+1, c).
    pub fn v_link(&self, r: usize, c: usize) -> bool {
        self.v_links[r * self.cols + c]
    }

    /// A node on the grid perimeter carries the boundary energy terms.
    pub fn is_perimeter(&self, r: usize, c: usize) -> bool {
        r == 0 || r == self.rows - 1 || c == 0 || c == self.cols - 1
    }

    pub fn live_link_count(&self, r: usize, c: usize) -> usize {
        let mut n = 0;
        if c + 1 < self.cols && self.h_link(r, c) {
            n += 1;
        }
        if c >= 1 && self.h_link(r, c - 1) {
            n += 1;
        }
        if r + 1 < self.rows && self.v_link(r, c) {
            n += 1;
        }
        if r >= 1 && self.v_link(r - 1, c) {
            n += 1;
        }
        n
    }

    pub fn total_live_links(&self) -> usize {
        self.h_links.iter().filter(|&&l| l).count() + self.v_links.iter().filter(|&&l| l).count()
    }

    pub fn alive_count(&self) -> usize {
        self.alive.iter().filter(|&&a| a).count()
    }

    // --- energy terms ---------------------------------------------------
    // Every term is non-negative; first differences are measured against
    // the rest offset and divided by the rest spacing, so the initial
    // uniform configuration has zero internal energy and uniform scaling
    // leaves the membrane term unchanged.

    fn membrane_h<F>(&self, pos: &F, elasticity: f64, r: usize, c: usize) -> f64
    where
        F: Fn(usize, usize) -> (f64, f64),
    {
        let (x0, y0) = pos(r, c);
        let (x1, y1) = pos(r, c + 1);
        let dx = (x1 - x0 - self.rest_x) / self.rest_x;
        let dy = (y1 - y0) / self.rest_x;
        elasticity * (dx * dx + dy * dy)
    }

    fn membrane_v<F>(&self, pos: &F, elasticity: f64, r: usize, c: usize) -> f64
    where
        F: Fn(usize, usize) -> (f64, f64),
    {
        let (x0, y0) = pos(r, c);
        let (x1, y1) = pos(r + 1, c);
        let dx = (x1 - x0) / self.rest_y;
        let dy = (y1 - y0 - self.rest_y) / self.rest_y;
        elasticity * (dx * dx + dy * dy)
    }

    /// Second difference along rows, centered at (r, c); requires both
    /// vertical links live.
    fn thin_plate_a<F>(&self, pos: &F, rigidity: f64, r: usize, c: usize) -> f64
    where
        F: Fn(usize, usize) -> (f64, f64),
    {
        let (xm, ym) = pos(r - 1, c);
        let (x0, y0) = pos(r, c);
        let (xp, yp) = pos(r + 1, c);
        let ddx = (xp - 2.0 * x0 + xm) / self.rest_y;
        let ddy = (yp - 2.0 * y0 + ym) / self.rest_y;
        rigidity * (ddx * ddx + ddy * ddy)
    }

    fn thin_plate_b<F>(&self, pos: &F, rigidity: f64, r: usize, c: usize) -> f64
    where
        F: Fn(usize, usize) -> (f64, f64),
    {
        let (xm, ym) = pos(r, c - 1);
        let (x0, y0) = pos(r, c);
        let (xp, yp) = pos(r, c + 1);
        let ddx = (xp - 2.0 * x0 + xm) / self.rest_x;
        let ddy = (yp - 2.0 * y0 + ym) / self.rest_x;
        rigidity * (ddx * ddx + ddy * ddy)
    }

    fn external(
        &self,
        fields: &ImageField,
        params: &EnergyParams,
        pos: (f64, f64),
        perimeter: bool,
    ) -> f64 {
        if perimeter {
            params.w_boundary * (1.0 - fields.edge_at(pos.0, pos.1))
                + params.w_distance * fields.dist_at(pos.0, pos.1)
        } else {
            params.w_internal * (1.0 - fields.fg_at(pos.0, pos.1))
        }
    }

    fn thin_a_active(&self, r: usize, c: usize) -> bool {
        r >= 1 && r + 1 < self.rows && self.v_link(r - 1, c) && self.v_link(r, c)
    }

    fn thin_b_active(&self, r: usize, c: usize) -> bool {
        c >= 1 && c + 1 < self.cols && self.h_link(r, c - 1) && self.h_link(r, c)
    }

    pub(crate) fn energy_with_fields(&self, fields: &ImageField, params: &EnergyParams) -> f64 {
        let pos = |r: usize, c: usize| self.positions[r * self.cols + c];
        let mut energy = 0.0;
        for r in 0..self.rows {
            for c in 0..self.cols {
                if !self.is_alive(r, c) {
                    continue;
                }
                if c + 1 < self.cols && self.h_link(r, c) {
                    energy += self.membrane_h(&pos, params.elasticity, r, c);
                }
                if r + 1 < self.rows && self.v_link(r, c) {
                    energy += self.membrane_v(&pos, params.elasticity, r, c);
                }
                if self.thin_a_active(r, c) {
                    energy += self.thin_plate_a(&pos, params.rigidity, r, c);
                }
                if self.thin_b_active(r, c) {
                    energy += self.thin_plate_b(&pos, params.rigidity, r, c);
                }
                energy += self.external(fields, params, pos(r, c), self.is_perimeter(r, c));
            }
        }
        energy
    }

    /// Sum of exactly the energy terms that depend on node (r, c)'s
    /// position, evaluated with that node at `at`. The difference of two
    /// such sums equals the total-energy difference of the move.
    fn local_energy(
        &self,
        fields: &ImageField,
        params: &EnergyParams,
        r: usize,
        c: usize,
        at: (f64, f64),
    ) -> f64 {
        let pos = |rr: usize, cc: usize| {
            if rr == r && cc == c {
                at
            } else {
                self.positions[rr * self.cols + cc]
            }
        };
        let mut energy = 0.0;
        if c + 1 < self.cols && self.h_link(r, c) {
            energy += self.membrane_h(&pos, params.elasticity, r, c);
        }
        if c >= 1 && self.h_link(r, c - 1) {
            energy += self.membrane_h(&pos, params.elasticity, r, c - 1);
        }
        if r + 1 < self.rows && self.v_link(r, c) {
            energy += self.membrane_v(&pos, params.elasticity, r, c);
        }
        if r >= 1 && self.v_link(r - 1, c) {
            energy += self.membrane_v(&pos, params.elasticity, r - 1, c);
        }
        for center in [r.wrapping_sub(1), r, r + 1] {
            if center < self.rows && self.thin_a_active(center, c) {
                energy += self.thin_plate_a(&pos, params.rigidity, center, c);
            }
        }
        for center in [c.wrapping_sub(1), c, c + 1] {
            if center < self.cols && self.thin_b_active(r, center) {
                energy += self.thin_plate_b(&pos, params.rigidity, r, center);
            }
        }
        energy += self.external(fields, params, at, self.is_perimeter(r, c));
        energy
    }
}

/// Eq-style total energy of the mesh over an image and foreground mask:
/// internal (membrane + thin-plate along live links) plus external
/// (foreground term on interior nodes, edge and distance terms on
/// perimeter nodes), summed over alive nodes.
pub fn mesh_energy(
    mesh: &ActiveNetMesh,
    image: &Frame,
    fg_mask: &Frame,
    params: &EnergyParams,
) -> Result<f64> {
    params.validate()?;
    let fields = ImageField::build(image, fg_mask)?;
    Ok(mesh.energy_with_fields(&fields, params))
}

pub(crate) fn greedy_pass_with_fields(
    mesh: &mut ActiveNetMesh,
    fields: &ImageField,
    params: &EnergyParams,
) -> usize {
    let k = params.search_radius as i64;
    let mut moved = 0;
    for r in 0..mesh.rows {
        for c in 0..mesh.cols {
            if !mesh.is_alive(r, c) {
                continue;
            }
            let current = mesh.position(r, c);
            let base = mesh.local_energy(fields, params, r, c, current);
            let mut best_delta = 0.0;
            let mut best_pos = current;
            let mut best_count = 0usize;
            for dy in -k..=k {
                for dx in -k..=k {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let candidate = (current.0 + dx as f64, current.1 + dy as f64);
                    let delta = mesh.local_energy(fields, params, r, c, candidate) - base;
                    if delta < best_delta {
                        best_delta = delta;
                        best_pos = candidate;
                        best_count = 1;
                    } else if best_delta < 0.0 && delta == best_delta {
                        best_count += 1;
                    }
                }
            }
            // move only on a strict, unique improvement; any tie stays put
            if best_delta < 0.0 && best_count == 1 {
                mesh.set_position(r, c, best_pos);
                moved += 1;
            }
        }
    }
    moved
}

/// One greedy sweep: nodes visited row-major, each tested at every integer
/// offset within the `(2k+1)^2` window and moved to the candidate lowering
/// total energy the most (ties stay). Returns the deformed mesh and the
/// number of nodes that moved; total energy never increases.
pub fn greedy_deform_pass(
    mesh: &ActiveNetMesh,
    image: &Frame,
    fg_mask: &Frame,
    params: &EnergyParams,
) -> Result<(ActiveNetMesh, usize)> {
    params.validate()?;
    let fields = ImageField::build(image, fg_mask)?;
    let mut out = mesh.clone();
    let moved = greedy_pass_with_fields(&mut out, &fields, params);
    Ok((out, moved))
}

fn converge(mesh: &mut ActiveNetMesh, fields: &ImageField, params: &EnergyParams) {
    for _ in 0..params.max_passes {
        if greedy_pass_with_fields(mesh, fields, params) == 0 {
            break;
        }
    }
}

pub(crate) fn cut_links_with_fields(
    mesh: &ActiveNetMesh,
    fields: &ImageField,
    params: &EnergyParams,
    threshold: f64,
) -> ActiveNetMesh {
    let mut out = mesh.clone();
    // repair any link whose endpoint is already dead
    for r in 0..mesh.rows {
        for c in 0..mesh.cols - 1 {
            if out.h_links[r * (mesh.cols - 1) + c]
                && !(mesh.is_alive(r, c) && mesh.is_alive(r, c + 1))
            {
                out.h_links[r * (mesh.cols - 1) + c] = false;
            }
        }
    }
    for r in 0..mesh.rows - 1 {
        for c in 0..mesh.cols {
            if out.v_links[r * mesh.cols + c] && !(mesh.is_alive(r, c) && mesh.is_alive(r + 1, c)) {
                out.v_links[r * mesh.cols + c] = false;
            }
        }
    }

    let on_background = |r: usize, c: usize| {
        let (x, y) = mesh.position(r, c);
        fields.fg_at(x, y) == 0.0
    };
    let external = |r: usize, c: usize| {
        mesh.external(fields, params, mesh.position(r, c), mesh.is_perimeter(r, c))
    };

    // cut double-background links whose mean external energy exceeds the
    // threshold; decisions are taken against the pre-cut mesh
    for r in 0..mesh.rows {
        for c in 0..mesh.cols - 1 {
            if !out.h_links[r * (mesh.cols - 1) + c] {
                continue;
            }
            if on_background(r, c)
                && on_background(r, c + 1)
                && 0.5 * (external(r, c) + external(r, c + 1)) > threshold
            {
                out.h_links[r * (mesh.cols - 1) + c] = false;
            }
        }
    }
    for r in 0..mesh.rows - 1 {
        for c in 0..mesh.cols {
            if !out.v_links[r * mesh.cols + c] {
                continue;
            }
            if on_background(r, c)
                && on_background(r + 1, c)
                && 0.5 * (external(r, c) + external(r + 1, c)) > threshold
            {
                out.v_links[r * mesh.cols + c] = false;
            }
        }
    }

    // isolated nodes are removed
    for r in 0..mesh.rows {
        for c in 0..mesh.cols {
            if out.is_alive(r, c) && out.live_link_count(r, c) == 0 {
                let i = out.idx(r, c);
                out.alive[i] = false;
            }
        }
    }
    out
}

/// Cuts every link whose endpoints both sit on background (mask 0) and
/// whose mean endpoint external energy exceeds `threshold`. Nodes left
/// without links are marked dead. Link symmetry is preserved and no link
/// with a foreground endpoint is ever cut.
pub fn cut_links(
    mesh: &ActiveNetMesh,
    image: &Frame,
    fg_mask: &Frame,
    params: &EnergyParams,
    threshold: f64,
) -> Result<ActiveNetMesh> {
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::InvalidParam(format!(
            "threshold must be >= 0, got {threshold}"
        )));
    }
    params.validate()?;
    let fields = ImageField::build(image, fg_mask)?;
    Ok(cut_links_with_fields(mesh, &fields, params, threshold))
}

fn perturb(mesh: &ActiveNetMesh, radius: i64, rng: &mut ChaCha8Rng) -> ActiveNetMesh {
    let mut out = mesh.clone();
    for r in 0..mesh.rows {
        for c in 0..mesh.cols {
            if !mesh.is_alive(r, c) {
                continue;
            }
            let (x, y) = mesh.position(r, c);
            let dx = rng.gen_range(-radius..=radius) as f64;
            let dy = rng.gen_range(-radius..=radius) as f64;
            out.set_position(r, c, (x + dx, y + dy));
        }
    }
    out
}

/// Full refinement: for each cut threshold, converge the greedy
/// deformation, cut links over background, re-converge, then apply one
/// seeded random perturbation (uniform integer jitter within
/// ±search_radius) followed by re-convergence, keeping the perturbed mesh
/// only when its energy is strictly lower. Returns the lowest-energy mesh
/// over all threshold stages. Deterministic given (inputs, seed).
pub fn segment(
    mesh: &ActiveNetMesh,
    image: &Frame,
    fg_mask: &Frame,
    params: &EnergyParams,
    seed: u64,
) -> Result<ActiveNetMesh> {
    params.validate()?;
    let fields = ImageField::build(image, fg_mask)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut current = mesh.clone();
    let mut best: Option<(f64, ActiveNetMesh)> = None;

    for &threshold in &params.cut_thresholds {
        converge(&mut current, &fields, params);
        current = cut_links_with_fields(&current, &fields, params, threshold);
        converge(&mut current, &fields, params);

        // local-minima escape
        let mut trial = perturb(&current, params.search_radius as i64, &mut rng);
        converge(&mut trial, &fields, params);
        if trial.energy_with_fields(&fields, params) < current.energy_with_fields(&fields, params) {
            current = trial;
        }

        let energy = current.energy_with_fields(&fields, params);
        if best.as_ref().is_none_or(|(e, _)| energy < *e) {
            best = Some((energy, current.clone()));
        }
    }
    Ok(best.expect("cut_thresholds is non-empty").1)
}

/// The link structure as the full node-adjacency binary matrix
/// (`rows*cols` square, symmetric, 1 where a live link joins two nodes).
pub fn subnet_mask(mesh: &ActiveNetMesh) -> Vec<Vec<u8>> {
    let n = mesh.rows * mesh.cols;
    let mut matrix = vec![vec![0u8; n]; n];
    for r in 0..mesh.rows {
        for c in 0..mesh.cols {
            if c + 1 < mesh.cols && mesh.h_link(r, c) {
                let (a, b) = (mesh.idx(r, c), mesh.idx(r, c + 1));
                matrix[a][b] = 1;
                matrix[b][a] = 1;
            }
            if r + 1 < mesh.rows && mesh.v_link(r, c) {
                let (a, b) = (mesh.idx(r, c), mesh.idx(r + 1, c));
                matrix[a][b] = 1;
                matrix[b][a] = 1;
            }
        }
    }
    matrix
}

impl ActiveNetMesh {
    /// Serializable snapshot; `links` is the row-major bit list of the
    /// full adjacency matrix.
    pub fn to_record(&self) -> MeshRecord {
        MeshRecord {
            rows: self.rows,
            cols: self.cols,
            positions: self.positions.iter().map(|&(x, y)| [x, y]).collect(),
            alive: self.alive.clone(),
            links: subnet_mask(self).into_iter().flatten().collect(),
        }
    }
}
