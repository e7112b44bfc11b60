//! Cartesian grid geometry, rock properties and two-point transmissibilities.
//!
//! Cells are indexed logically by `(i, j, k)` with `i` fastest and `k`
//! increasing downwards. Only active cells take part in the simulation; they
//! are numbered consecutively in natural order.

use thiserror::Error;

use crate::autodiff::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid dimension {axis} must be positive")]
    NonPositiveDimension { axis: &'static str },
    #[error("{name} has {got} values, expected {expected}")]
    WrongSize {
        name: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("cell size {name} of cell {cell} must be positive (got {value})")]
    NonPositiveSize {
        name: &'static str,
        cell: usize,
        value: f64,
    },
    #[error("degenerate geometry: face centroid coincides with cell centroid")]
    DegenerateGeometry,
    #[error("connection ({i}, {j}) does not join two distinct active cells")]
    BadConnection { i: usize, j: usize },
    #[error("negative permeability in cell {cell}")]
    NegativePermeability { cell: usize },
    #[error("porosity {value} of cell {cell} outside [0, 1]")]
    BadPorosity { cell: usize, value: f64 },
}

/// Input description of a logically Cartesian grid.
#[derive(Debug, Clone)]
pub struct CartesianSpec {
    pub dims: [usize; 3],
    /// Per-cell sizes, `nx*ny*nz` values each.
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
    pub dz: Vec<f64>,
    /// Top depth of the first layer (`nx*ny` values) or of every cell.
    pub tops: Vec<f64>,
    /// `None` means all cells active.
    pub active: Option<Vec<bool>>,
}

impl CartesianSpec {
    /// Uniform cell sizes with all cells active.
    pub fn uniform(dims: [usize; 3], size: [f64; 3], top: f64) -> Self {
        let n = dims[0] * dims[1] * dims[2];
        Self {
            dims,
            dx: vec![size[0]; n],
            dy: vec![size[1]; n],
            dz: vec![size[2]; n],
            tops: vec![top; dims[0] * dims[1]],
            active: None,
        }
    }

    /// Uniform horizontal sizes, per-layer thickness.
    pub fn layered(dims: [usize; 3], dx: f64, dy: f64, thickness: &[f64], top: f64) -> Self {
        let per_layer = dims[0] * dims[1];
        let dz = thickness
            .iter()
            .flat_map(|&t| std::iter::repeat(t).take(per_layer))
            .collect();
        let n = per_layer * dims[2];
        Self {
            dims,
            dx: vec![dx; n],
            dy: vec![dy; n],
            dz,
            tops: vec![top; per_layer],
            active: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnectionKind {
    X,
    Y,
    Z,
    NonNeighbor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Connection {
    /// Active cell indices, `cells.0 < cells.1`.
    pub cells: (usize, usize),
    pub trans: f64,
    /// Depth difference `z_i - z_j`.
    pub dz: f64,
    pub kind: ConnectionKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub global: usize,
    pub ijk: [usize; 3],
    pub size: [f64; 3],
    pub volume: f64,
    pub depth: f64,
    pub centroid: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct Grid {
    dims: [usize; 3],
    cells: Vec<Cell>,
    active_of_global: Vec<Option<usize>>,
    connections: Vec<Connection>,
    /// Connection indices touching each active cell.
    cell_connections: Vec<Vec<usize>>,
}

/// Half-transmissibility of a cell towards one of its faces:
/// `|F| * (K (c_f - c_i) / |c_f - c_i|^2) . n`, with `K` diagonal.
pub fn half_transmissibility(
    face_area: f64,
    cell_centroid: [f64; 3],
    face_centroid: [f64; 3],
    normal: [f64; 3],
    perm: [f64; 3],
) -> Result<f64, GridError> {
    let d = [
        face_centroid[0] - cell_centroid[0],
        face_centroid[1] - cell_centroid[1],
        face_centroid[2] - cell_centroid[2],
    ];
    let dist2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    if dist2 == 0.0 {
        return Err(GridError::DegenerateGeometry);
    }
    let kd_n = perm[0] * d[0] * normal[0] + perm[1] * d[1] * normal[1] + perm[2] * d[2] * normal[2];
    Ok(face_area * kd_n / dist2)
}

/// Harmonic combination of two half-transmissibilities; zero if either is.
pub fn transmissibility(t_ij: f64, t_ji: f64) -> f64 {
    if t_ij == 0.0 || t_ji == 0.0 {
        return 0.0;
    }
    t_ij * t_ji / (t_ij + t_ji)
}

impl Grid {
    pub fn build_cartesian(spec: &CartesianSpec, perm: &[[f64; 3]]) -> Result<Self, GridError> {
        let [nx, ny, nz] = spec.dims;
        for (n, axis) in [(nx, "nx"), (ny, "ny"), (nz, "nz")] {
            if n == 0 {
                return Err(GridError::NonPositiveDimension { axis });
            }
        }
        let n = nx * ny * nz;
        for (v, name) in [(&spec.dx, "DX"), (&spec.dy, "DY"), (&spec.dz, "DZ")] {
            if v.len() != n {
                return Err(GridError::WrongSize {
                    name,
                    got: v.len(),
                    expected: n,
                });
            }
            if let Some((cell, &value)) = v.iter().enumerate().find(|(_, &x)| !(x > 0.0)) {
                return Err(GridError::NonPositiveSize { name, cell, value });
            }
        }
        if spec.tops.len() != nx * ny && spec.tops.len() != n {
            return Err(GridError::WrongSize {
                name: "TOPS",
                got: spec.tops.len(),
                expected: nx * ny,
            });
        }
        if perm.len() != n {
            return Err(GridError::WrongSize {
                name: "PERM",
                got: perm.len(),
                expected: n,
            });
        }
        if let Some((cell, _)) = perm
            .iter()
            .enumerate()
            .find(|(_, k)| k.iter().any(|&v| v < 0.0))
        {
            return Err(GridError::NegativePermeability { cell });
        }
        let active = match &spec.active {
            Some(a) if a.len() != n => {
                return Err(GridError::WrongSize {
                    name: "ACTNUM",
                    got: a.len(),
                    expected: n,
                })
            }
            Some(a) => a.clone(),
            None => vec![true; n],
        };

        let global = |i: usize, j: usize, k: usize| i + nx * (j + ny * k);

        // top depth of every cell
        let mut top = vec![0.0; n];
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let g = global(i, j, k);
                    top[g] = if spec.tops.len() == n {
                        spec.tops[g]
                    } else if k == 0 {
                        spec.tops[global(i, j, 0)]
                    } else {
                        let above = global(i, j, k - 1);
                        top[above] + spec.dz[above]
                    };
                }
            }
        }

        let mut cells = Vec::new();
        let mut active_of_global = vec![None; n];
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let g = global(i, j, k);
                    if !active[g] {
                        continue;
                    }
                    let x0: f64 = (0..i).map(|ii| spec.dx[global(ii, j, k)]).sum();
                    let y0: f64 = (0..j).map(|jj| spec.dy[global(i, jj, k)]).sum();
                    let size = [spec.dx[g], spec.dy[g], spec.dz[g]];
                    let depth = top[g] + 0.5 * size[2];
                    active_of_global[g] = Some(cells.len());
                    cells.push(Cell {
                        global: g,
                        ijk: [i, j, k],
                        size,
                        volume: size[0] * size[1] * size[2],
                        depth,
                        centroid: [x0 + 0.5 * size[0], y0 + 0.5 * size[1], depth],
                    });
                }
            }
        }

        let mut connections = Vec::new();
        for (a, cell) in cells.iter().enumerate() {
            let [i, j, k] = cell.ijk;
            let candidates = [
                (i + 1 < nx, [i + 1, j, k], 0usize, ConnectionKind::X),
                (j + 1 < ny, [i, j + 1, k], 1, ConnectionKind::Y),
                (k + 1 < nz, [i, j, k + 1], 2, ConnectionKind::Z),
            ];
            for (inside, [ii, jj, kk], axis, kind) in candidates {
                if !inside {
                    continue;
                }
                let Some(b) = active_of_global[global(ii, jj, kk)] else {
                    continue;
                };
                let other = &cells[b];
                let t_a = cell_half_trans(cell, axis, 1.0, perm[cell.global])?;
                let t_b = cell_half_trans(other, axis, -1.0, perm[other.global])?;
                connections.push(Connection {
                    cells: (a, b),
                    trans: transmissibility(t_a, t_b),
                    dz: cell.depth - other.depth,
                    kind,
                });
            }
        }

        let mut grid = Self {
            dims: spec.dims,
            cells,
            active_of_global,
            connections,
            cell_connections: Vec::new(),
        };
        grid.rebuild_adjacency();
        Ok(grid)
    }

    fn rebuild_adjacency(&mut self) {
        let mut adj = vec![Vec::new(); self.cells.len()];
        for (c, conn) in self.connections.iter().enumerate() {
            adj[conn.cells.0].push(c);
            adj[conn.cells.1].push(c);
        }
        self.cell_connections = adj;
    }

    /// Adds a user-given non-neighbour connection between active cells.
    /// A connection that already exists has its transmissibility increased.
    pub fn add_nnc(&mut self, a: usize, b: usize, trans: f64) -> Result<(), GridError> {
        let n = self.cells.len();
        if a == b || a >= n || b >= n || trans < 0.0 {
            return Err(GridError::BadConnection { i: a, j: b });
        }
        let (lo, hi) = (a.min(b), a.max(b));
        if let Some(existing) = self
            .cell_connections[lo]
            .iter()
            .copied()
            .find(|&c| self.connections[c].cells == (lo, hi))
        {
            self.connections[existing].trans += trans;
            return Ok(());
        }
        self.connections.push(Connection {
            cells: (lo, hi),
            trans,
            dz: self.cells[lo].depth - self.cells[hi].depth,
            kind: ConnectionKind::NonNeighbor,
        });
        self.rebuild_adjacency();
        Ok(())
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_global(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cell(&self, c: usize) -> &Cell {
        &self.cells[c]
    }

    pub fn connections(&self) -> &[Connection] {
        &self.connections
    }

    pub fn cell_connections(&self, c: usize) -> &[usize] {
        &self.cell_connections[c]
    }

    /// The active cell on the other side of connection `conn` from `c`.
    pub fn neighbor(&self, c: usize, conn: usize) -> usize {
        let (a, b) = self.connections[conn].cells;
        if a == c {
            b
        } else {
            a
        }
    }

    pub fn global_index(&self, ijk: [usize; 3]) -> usize {
        ijk[0] + self.dims[0] * (ijk[1] + self.dims[1] * ijk[2])
    }

    /// Active index of the cell at zero-based `(i, j, k)`, if active.
    pub fn active_index(&self, ijk: [usize; 3]) -> Option<usize> {
        if ijk.iter().zip(self.dims.iter()).any(|(a, n)| a >= n) {
            return None;
        }
        self.active_of_global[self.global_index(ijk)]
    }

    pub fn active_of_global(&self, g: usize) -> Option<usize> {
        self.active_of_global.get(g).copied().flatten()
    }
}

/// Half-transmissibility of `cell` towards its face on side `sign` of `axis`.
fn cell_half_trans(cell: &Cell, axis: usize, sign: f64, perm: [f64; 3]) -> Result<f64, GridError> {
    let mut face = cell.centroid;
    face[axis] += sign * 0.5 * cell.size[axis];
    let mut normal = [0.0; 3];
    normal[axis] = sign;
    let area = match axis {
        0 => cell.size[1] * cell.size[2],
        1 => cell.size[0] * cell.size[2],
        _ => cell.size[0] * cell.size[1],
    };
    half_transmissibility(area, cell.centroid, face, normal, perm)
}

/// Porosity, permeability and rock compressibility per active cell.
#[derive(Debug, Clone)]
pub struct RockProps {
    pub perm: Vec<[f64; 3]>,
    pub porosity: Vec<f64>,
    pub compressibility: f64,
    pub reference_pressure: f64,
}

impl RockProps {
    pub fn new(
        perm: Vec<[f64; 3]>,
        porosity: Vec<f64>,
        compressibility: f64,
        reference_pressure: f64,
    ) -> Result<Self, GridError> {
        if let Some((cell, _)) = perm
            .iter()
            .enumerate()
            .find(|(_, k)| k.iter().any(|&v| v < 0.0))
        {
            return Err(GridError::NegativePermeability { cell });
        }
        if let Some((cell, &value)) = porosity
            .iter()
            .enumerate()
            .find(|(_, &p)| !(0.0..=1.0).contains(&p))
        {
            return Err(GridError::BadPorosity { cell, value });
        }
        Ok(Self {
            perm,
            porosity,
            compressibility,
            reference_pressure,
        })
    }

    /// Linearised pore-volume multiplier `1 + c_r (p - p_ref)`.
    pub fn pore_volume_multiplier<S: Scalar>(&self, p: S) -> S {
        (p - self.reference_pressure) * self.compressibility + 1.0
    }

    /// Reference pore volume of every active cell.
    pub fn pore_volumes(&self, grid: &Grid) -> Vec<f64> {
        grid.cells()
            .iter()
            .zip(&self.porosity)
            .map(|(c, phi)| c.volume * phi)
            .collect()
    }
}
