//! Fully implicit black-oil residual and its Jacobian.
//!
//! Each cell carries `(p_o, s_w, x)` where `x` is either the gas saturation
//! or the dissolved gas ratio. Equations are ordered water, oil, gas and
//! written in surface volumes per second:
//!
//! `R_a,i = phi_ref V / dt (A_a - A0_a) + sum_j u_a,ij + q_a,i`.

use crate::autodiff::{Eval3, Scalar};
use crate::grid::{Connection, Grid, RockProps};
use crate::linalg::{Block, BlockCsr, BlockVector, LinalgError, Vec3};
use crate::pvt::{FluidSystem, Phase};
use crate::satfunc::{CapillaryCurve, RelPermCurve, SatTables};
use crate::units::GRAVITY;

/// Relative threshold past the phase boundary before `x` changes meaning.
pub const SWITCH_EPSILON: f64 = 1e-4;
/// Relative offset from the boundary used when `x` re-enters a regime.
pub const SWITCH_BACKOFF: f64 = 1e-3;

/// Meaning of the third primary variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum XMeaning {
    /// Free gas present; `x = s_g`, oil saturated.
    Sg,
    /// No free gas; `x = r_go`.
    Rgo,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrimaryVariables {
    pub po: f64,
    pub sw: f64,
    pub x: f64,
    pub meaning: XMeaning,
}

impl PrimaryVariables {
    pub fn new(po: f64, sw: f64, x: f64, meaning: XMeaning) -> Self {
        Self { po, sw, x, meaning }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.po, self.sw, self.x]
    }

    pub fn set(&mut self, index: usize, v: f64) {
        match index {
            0 => self.po = v,
            1 => self.sw = v,
            2 => self.x = v,
            _ => panic!("primary variable index {index} out of range"),
        }
    }

    /// Gas saturation implied by the variables.
    pub fn sg(&self) -> f64 {
        match self.meaning {
            XMeaning::Sg => self.x,
            XMeaning::Rgo => 0.0,
        }
    }

    pub fn seeded(&self) -> [Eval3; 3] {
        [
            Eval3::from_parts(self.po, [1.0, 0.0, 0.0]),
            Eval3::from_parts(self.sw, [0.0, 1.0, 0.0]),
            Eval3::from_parts(self.x, [0.0, 0.0, 1.0]),
        ]
    }
}

/// Primary variables with every secondary quantity derived from them.
/// Arrays are indexed by [`Phase::index`].
#[derive(Debug, Clone, Copy)]
pub struct CellState<S> {
    pub pv: PrimaryVariables,
    pub saturation: [S; 3],
    pub pressure: [S; 3],
    pub b: [S; 3],
    pub mu: [S; 3],
    pub rho: [S; 3],
    pub kr: [S; 3],
    pub mobility: [S; 3],
    pub rgo: S,
    pub rs: S,
    pub pv_mult: S,
    /// Surface volume of each component per unit reference pore volume.
    pub accumulation: [S; 3],
}

impl CellState<Eval3> {
    /// Copy with all derivatives dropped.
    pub fn detach(&self) -> Self {
        let d = |a: [Eval3; 3]| a.map(|v| v.detach());
        Self {
            pv: self.pv,
            saturation: d(self.saturation),
            pressure: d(self.pressure),
            b: d(self.b),
            mu: d(self.mu),
            rho: d(self.rho),
            kr: d(self.kr),
            mobility: d(self.mobility),
            rgo: self.rgo.detach(),
            rs: self.rs.detach(),
            pv_mult: self.pv_mult.detach(),
            accumulation: d(self.accumulation),
        }
    }

    pub fn values(&self) -> CellState<f64> {
        let v = |a: [Eval3; 3]| a.map(|v| v.value());
        CellState {
            pv: self.pv,
            saturation: v(self.saturation),
            pressure: v(self.pressure),
            b: v(self.b),
            mu: v(self.mu),
            rho: v(self.rho),
            kr: v(self.kr),
            mobility: v(self.mobility),
            rgo: self.rgo.value(),
            rs: self.rs.value(),
            pv_mult: self.pv_mult.value(),
            accumulation: v(self.accumulation),
        }
    }
}

/// Static reservoir description: grid, rock and fluid properties.
#[derive(Debug, Clone)]
pub struct Reservoir {
    pub grid: Grid,
    pub rock: RockProps,
    pub fluid: FluidSystem,
    pub sat: SatTables,
    pub gravity: f64,
    pore_volumes: Vec<f64>,
}

impl Reservoir {
    pub fn new(grid: Grid, rock: RockProps, fluid: FluidSystem, sat: SatTables) -> Self {
        let pore_volumes = rock.pore_volumes(&grid);
        Self {
            grid,
            rock,
            fluid,
            sat,
            gravity: GRAVITY,
            pore_volumes,
        }
    }

    pub fn num_cells(&self) -> usize {
        self.grid.num_cells()
    }

    /// `phi_ref V` per cell.
    pub fn pore_volumes(&self) -> &[f64] {
        &self.pore_volumes
    }

    pub fn has_dissolved_gas(&self) -> bool {
        self.fluid.oil.is_live()
    }

    /// Evaluates all secondary quantities. `vars` are `(p_o, s_w, x)`,
    /// seeded or constant.
    pub fn update_secondary<S: Scalar>(&self, pv: PrimaryVariables, vars: [S; 3]) -> CellState<S> {
        let [po, sw, x] = vars;
        let zero = S::from_f64(0.0);
        let rs = self.fluid.oil.saturated_rs(po);
        let (sg, rgo, saturated) = match pv.meaning {
            XMeaning::Sg => (x, rs, true),
            XMeaning::Rgo => (zero, x, false),
        };
        let so = -sw - sg + 1.0;
        let pcow = self.sat.capillary(CapillaryCurve::OilWater, sw);
        let pcog = self.sat.capillary(CapillaryCurve::OilGas, sg);
        let pw = po - pcow;
        let pg = po + pcog;

        let (bw, muw) = self.fluid.water.props(pw);
        let (bo, muo) = self.fluid.oil.props(po, rgo, saturated);
        let (bg, mug) = self.fluid.gas.props(pg);
        let b = [bw, bo, bg];
        let mu = [muw, muo, mug];
        let rho = [
            self.fluid.phase_density(Phase::Water, bw, zero),
            self.fluid.phase_density(Phase::Oil, bo, rgo),
            self.fluid.phase_density(Phase::Gas, bg, zero),
        ];
        let kr = [
            self.sat.relperm_two_phase(RelPermCurve::Water, sw),
            self.sat.kro_three_phase(sw, sg, so),
            self.sat.relperm_two_phase(RelPermCurve::Gas, sg),
        ];
        let mobility = [kr[0] / mu[0], kr[1] / mu[1], kr[2] / mu[2]];
        let pv_mult = self.rock.pore_volume_multiplier(po);
        let oil_surface = bo * so;
        let accumulation = [
            pv_mult * bw * sw,
            pv_mult * oil_surface,
            pv_mult * (bg * sg + rgo * oil_surface),
        ];
        CellState {
            pv,
            saturation: [sw, so, sg],
            pressure: [pw, po, pg],
            b,
            mu,
            rho,
            kr,
            mobility,
            rgo,
            rs,
            pv_mult,
            accumulation,
        }
    }

    pub fn cell_state(&self, pv: PrimaryVariables) -> CellState<Eval3> {
        self.update_secondary(pv, pv.seeded())
    }

    pub fn cell_values(&self, pv: PrimaryVariables) -> CellState<f64> {
        self.update_secondary(pv, pv.as_array())
    }

    /// Re-interprets `x` when a phase boundary has been crossed by more
    /// than the switching threshold. Dead-oil cells keep `x = s_g`.
    pub fn switch_variables(&self, pv: PrimaryVariables) -> PrimaryVariables {
        if !self.has_dissolved_gas() {
            return pv;
        }
        let rs: f64 = self.fluid.oil.saturated_rs(pv.po);
        // with no oil left r_go has no equation to follow, so the cell
        // keeps s_g as unknown
        let oil_free = 1.0 - pv.sw <= SWITCH_EPSILON;
        let mut out = pv;
        match pv.meaning {
            XMeaning::Sg if pv.x < -SWITCH_EPSILON && oil_free => {
                out.x = 0.0;
            }
            XMeaning::Sg if pv.x < -SWITCH_EPSILON => {
                out.meaning = XMeaning::Rgo;
                out.x = rs * (1.0 - SWITCH_BACKOFF);
            }
            XMeaning::Rgo if oil_free => {
                out.meaning = XMeaning::Sg;
                out.x = 0.0;
            }
            XMeaning::Rgo if pv.x > rs * (1.0 + SWITCH_EPSILON) => {
                out.meaning = XMeaning::Sg;
                out.x = SWITCH_BACKOFF;
            }
            _ => {}
        }
        out
    }

    /// Block sparsity of the cell Jacobian: grid adjacency plus diagonal.
    pub fn jacobian_pattern(&self) -> Result<BlockCsr, LinalgError> {
        let n = self.num_cells();
        let neighbors: Vec<Vec<usize>> = (0..n)
            .map(|c| {
                self.grid
                    .cell_connections(c)
                    .iter()
                    .map(|&k| self.grid.neighbor(c, k))
                    .collect()
            })
            .collect();
        BlockCsr::from_pattern(&neighbors)
    }

    /// Component accumulations of a set of states, as plain values.
    pub fn accumulations(&self, pvs: &[PrimaryVariables]) -> Vec<[f64; 3]> {
        pvs.iter().map(|&pv| self.cell_values(pv).accumulation).collect()
    }

    /// Surface volume of each component in place.
    pub fn in_place(&self, pvs: &[PrimaryVariables]) -> [f64; 3] {
        let mut total = [0.0; 3];
        for (acc, pv) in self.accumulations(pvs).iter().zip(&self.pore_volumes) {
            for a in 0..3 {
                total[a] += acc[a] * pv;
            }
        }
        total
    }

    /// Average formation volume factor `mean(1/b_a)` over cells.
    pub fn average_fvf(&self, states: &[CellState<f64>]) -> [f64; 3] {
        let n = states.len().max(1) as f64;
        let mut out = [0.0; 3];
        for s in states {
            for a in 0..3 {
                out[a] += 1.0 / s.b[a];
            }
        }
        out.map(|v| v / n)
    }

    /// Residual and Jacobian of the reservoir equations without well terms.
    pub fn assemble(
        &self,
        states: &[CellState<Eval3>],
        start_accumulation: &[[f64; 3]],
        dt: f64,
        system: &mut AssembledSystem,
    ) {
        let n = self.num_cells();
        assert_eq!(states.len(), n);
        assert_eq!(start_accumulation.len(), n);
        system.jacobian.set_zero();
        system.residual.fill_zero();

        for c in 0..n {
            let scale = self.pore_volumes[c] / dt;
            let mut block = Block::zeros();
            for a in 0..3 {
                let r = (states[c].accumulation[a] - start_accumulation[c][a]) * scale;
                system.residual[c][a] += r.value();
                for v in 0..3 {
                    block[(a, v)] = r.derivative(v);
                }
            }
            system.jacobian.add_block(c, c, &block);
        }

        let frozen: Vec<CellState<Eval3>> = states.iter().map(|s| s.detach()).collect();
        for conn in self.grid.connections() {
            let (i, j) = conn.cells;
            let wrt_i = connection_flux(conn, self.gravity, &states[i], &frozen[j]);
            let wrt_j = connection_flux(conn, self.gravity, &frozen[i], &states[j]);
            let mut di = Block::zeros();
            let mut dj = Block::zeros();
            for a in 0..3 {
                let u = wrt_i[a].value();
                system.residual[i][a] += u;
                system.residual[j][a] -= u;
                for v in 0..3 {
                    di[(a, v)] = wrt_i[a].derivative(v);
                    dj[(a, v)] = wrt_j[a].derivative(v);
                }
            }
            system.jacobian.add_block(i, i, &di);
            system.jacobian.add_block(i, j, &dj);
            system.jacobian.add_block(j, i, &(-di));
            system.jacobian.add_block(j, j, &(-dj));
        }
    }
}

/// Surface-volume fluxes `u_a,ij` (positive from `i` to `j`) across a
/// connection whose depth difference is `z_i - z_j`.
pub fn connection_flux<S: Scalar>(
    conn: &Connection,
    gravity: f64,
    si: &CellState<S>,
    sj: &CellState<S>,
) -> [S; 3] {
    connection_flux_raw(conn.trans, conn.dz, gravity, si, sj)
}

pub fn connection_flux_raw<S: Scalar>(
    trans: f64,
    dz: f64,
    gravity: f64,
    si: &CellState<S>,
    sj: &CellState<S>,
) -> [S; 3] {
    let mut v = [S::from_f64(0.0); 3];
    let mut up = [si; 3];
    for a in 0..3 {
        let rho_avg = (si.rho[a] + sj.rho[a]) * 0.5;
        let dphi = si.pressure[a] - sj.pressure[a] - rho_avg * (gravity * dz);
        let upwind = if dphi.value() >= 0.0 { si } else { sj };
        up[a] = upwind;
        v[a] = upwind.mobility[a] * dphi * trans;
    }
    let w = 0;
    let o = 1;
    let g = 2;
    let u_o_phase = up[o].b[o] * v[o];
    [
        up[w].b[w] * v[w],
        u_o_phase,
        up[g].b[g] * v[g] + up[o].rgo * u_o_phase,
    ]
}

/// Jacobian and residual for the cell equations.
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub jacobian: BlockCsr,
    pub residual: BlockVector,
}

impl AssembledSystem {
    pub fn new(reservoir: &Reservoir) -> Result<Self, LinalgError> {
        Ok(Self {
            jacobian: reservoir.jacobian_pattern()?,
            residual: BlockVector::zeros(reservoir.num_cells()),
        })
    }
}

/// Scaled residual norms per component.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ConvergenceMetrics {
    /// Field-average error `|sum_i R_a,i| B_a dt / sum_i phi V`.
    pub mb: [f64; 3],
    /// Largest local error `max_i |R_a,i| B_a dt / (phi_i V_i)`.
    pub cnv: [f64; 3],
}

impl ConvergenceMetrics {
    pub fn converged(&self, tol_mb: f64, tol_cnv: f64) -> bool {
        self.mb.iter().all(|&m| m < tol_mb) && self.cnv.iter().all(|&c| c < tol_cnv)
    }
}

/// MB and CNV of a residual; `fvf` converts surface volumes to reservoir
/// volumes so that both read as saturation errors.
pub fn convergence_metrics(
    residual: &BlockVector,
    pore_volumes: &[f64],
    dt: f64,
    fvf: [f64; 3],
) -> ConvergenceMetrics {
    let total_pv: f64 = pore_volumes.iter().sum();
    let mut sum = Vec3::zeros();
    let mut cnv = [0.0f64; 3];
    for (r, &pv) in residual.0.iter().zip(pore_volumes) {
        sum += r;
        for a in 0..3 {
            cnv[a] = cnv[a].max(r[a].abs() * fvf[a] * dt / pv);
        }
    }
    let mut mb = [0.0; 3];
    for a in 0..3 {
        mb[a] = sum[a].abs() * fvf[a] * dt / total_pv;
    }
    ConvergenceMetrics { mb, cnv }
}
