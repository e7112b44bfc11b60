//! Standard well model coupled to the reservoir through a Schur complement.
//!
//! Each open well has unknowns `(Q_t, F_w, F_g, p_bhp)`: the weighted total
//! surface rate `Q_t = sum_a g_a Q_a` (positive for production), the weighted
//! water and gas fractions `F_a = g_a Q_a / Q_t`, and the bottom-hole pressure
//! at the reference depth. The equations are three component balances with a
//! small wellbore storage term plus one control equation.

use nalgebra::{Matrix3x4, Matrix4, Matrix4x3, Vector4, LU, U4};
use thiserror::Error;

use crate::autodiff::{Eval3, Eval4, Scalar};
use crate::linalg::{Block, BlockCsr, BlockVector, LinearOperator, Vec3};
use crate::model::{AssembledSystem, CellState, Reservoir};
use crate::pvt::FluidSystem;

/// Component weights `g_w, g_o, g_g` of the total rate.
pub const WEIGHTS: [f64; 3] = [1.0, 1.0, 0.01];
/// Wellbore volume used for the storage term, m3.
pub const WELLBORE_VOLUME: f64 = 0.1;
/// Rate below which a well counts as not flowing, m3/s.
const MIN_RATE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum WellError {
    #[error("well '{well}': singular well equation block")]
    Singular { well: String },
    #[error("well '{well}': connection cell {cell} out of range")]
    BadConnection { well: String, cell: usize },
    #[error("well '{well}' has no connections")]
    NoConnections { well: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InjectedFluid {
    Water,
    Gas,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WellKind {
    Producer,
    Injector(InjectedFluid),
}

/// Surface rate controlled in rate mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateKind {
    Oil,
    Water,
    Gas,
    Liquid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlMode {
    Bhp,
    Rate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WellControl {
    pub mode: ControlMode,
    pub rate_kind: RateKind,
    /// Magnitude of the surface rate target or limit, m3/s; infinite if none.
    pub rate_target: f64,
    /// Bottom-hole pressure target or limit, Pa.
    pub bhp_limit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WellConnection {
    pub cell: usize,
    /// Connection transmissibility factor `T_w,j`, m3.
    pub trans: f64,
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WellSpec {
    pub name: String,
    pub kind: WellKind,
    pub ref_depth: f64,
    pub connections: Vec<WellConnection>,
    pub control: WellControl,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WellVars {
    pub q_t: f64,
    pub fw: f64,
    pub fg: f64,
    pub bhp: f64,
}

impl WellVars {
    pub fn as_array(&self) -> [f64; 4] {
        [self.q_t, self.fw, self.fg, self.bhp]
    }

    fn seeded(&self) -> [Eval4; 4] {
        let v = self.as_array();
        std::array::from_fn(|i| {
            let mut d = [0.0; 4];
            d[i] = 1.0;
            Eval4::from_parts(v[i], d)
        })
    }

    /// Surface rates `Q_a = Q_t F_a / g_a`, positive for production.
    pub fn surface_rates(&self) -> [f64; 3] {
        surface_rates([self.q_t, self.fw, self.fg])
    }
}

fn surface_rates<S: Scalar>([q_t, fw, fg]: [S; 3]) -> [S; 3] {
    let fo = -fw - fg + 1.0;
    [
        q_t * fw / WEIGHTS[0],
        q_t * fo / WEIGHTS[1],
        q_t * fg / WEIGHTS[2],
    ]
}

/// Surface-volume composition of the wellbore mixture from the fractions.
fn composition<S: Scalar>(fw: S, fg: S) -> [S; 3] {
    let fo = -fw - fg + 1.0;
    let w = [fw / WEIGHTS[0], fo / WEIGHTS[1], fg / WEIGHTS[2]];
    let total = w[0] + w[1] + w[2];
    [w[0] / total, w[1] / total, w[2] / total]
}

/// Cell quantities seen by a well connection.
#[derive(Debug, Clone, Copy)]
pub struct ConnCell<S> {
    pub pressure: S,
    pub mobility: [S; 3],
    pub b: [S; 3],
    pub rgo: S,
}

impl<S: Copy> ConnCell<S> {
    pub fn from_state(s: &CellState<S>) -> Self {
        Self {
            pressure: s.pressure[1],
            mobility: s.mobility,
            b: s.b,
            rgo: s.rgo,
        }
    }
}

fn lift<const N: usize>(c: &ConnCell<f64>) -> ConnCell<crate::autodiff::Evaluation<N>> {
    let l = crate::autodiff::Evaluation::<N>::constant;
    ConnCell {
        pressure: l(c.pressure),
        mobility: c.mobility.map(l),
        b: c.b.map(l),
        rgo: l(c.rgo),
    }
}

/// Surface rates flowing into the wellbore through one connection.
///
/// A producing connection (`p_cell > p_bhp + h`) carries each phase with the
/// cell mobility. An injecting connection carries the wellbore mixture
/// `phi` with the cell total mobility.
pub fn connection_inflow<S: Scalar>(
    trans: f64,
    h: f64,
    cell: &ConnCell<S>,
    bhp: S,
    phi: [S; 3],
) -> [S; 3] {
    let drawdown = cell.pressure - bhp - h;
    if drawdown.value() >= 0.0 {
        let q = |a: usize| cell.mobility[a] * cell.b[a] * drawdown * trans;
        let qo = q(1);
        [q(0), qo, q(2) + cell.rgo * qo]
    } else {
        let total_mob = cell.mobility[0] + cell.mobility[1] + cell.mobility[2];
        let reservoir_rate = total_mob * drawdown * trans;
        let volume_per_surface = phi[0] / cell.b[0] + phi[1] / cell.b[1] + phi[2] / cell.b[2];
        let surface = reservoir_rate / volume_per_surface;
        [phi[0] * surface, phi[1] * surface, phi[2] * surface]
    }
}

/// Density of a wellbore mixture with surface composition `phi` at `p`.
/// Gas dissolves into the oil up to the saturated ratio.
pub fn mixture_density(fluid: &FluidSystem, phi: [f64; 3], p: f64) -> f64 {
    let (bw, _) = fluid.water.props(p);
    let rs: f64 = fluid.oil.saturated_rs(p);
    let dissolved = phi[2].min(rs * phi[1]);
    let r_go = if phi[1] > 0.0 { dissolved / phi[1] } else { 0.0 };
    let (bo, _) = fluid.oil.props(p, r_go, r_go >= rs);
    let (bg, _) = fluid.gas.props(p);
    let volume = phi[0] / bw + phi[1] / bo + (phi[2] - dissolved) / bg;
    let d = &fluid.densities;
    let mass = phi[0] * d.water + phi[1] * d.oil + phi[2] * d.gas;
    mass / volume
}

/// Pressure differences `h_j` between each connection and the reference
/// depth, marching through the connections in depth order with a constant
/// mixture composition.
pub fn connection_pressure_drops(
    fluid: &FluidSystem,
    gravity: f64,
    ref_depth: f64,
    bhp: f64,
    phi: [f64; 3],
    depths: &[f64],
) -> Vec<f64> {
    let mut h = vec![0.0; depths.len()];
    let mut order: Vec<usize> = (0..depths.len()).collect();
    order.sort_by(|&a, &b| depths[a].total_cmp(&depths[b]));
    let below: Vec<usize> = order.iter().copied().filter(|&k| depths[k] >= ref_depth).collect();
    let above: Vec<usize> = order.iter().rev().copied().filter(|&k| depths[k] < ref_depth).collect();
    for side in [below, above] {
        let (mut z, mut dh) = (ref_depth, 0.0);
        for k in side {
            let rho = mixture_density(fluid, phi, bhp + dh);
            dh += rho * gravity * (depths[k] - z);
            z = depths[k];
            h[k] = dh;
        }
    }
    h
}

/// Local linear system of one well.
#[derive(Debug, Clone)]
pub struct WellBlocks {
    pub name: String,
    /// Connection cells; `b[k]` and `c[k]` belong to `cells[k]`.
    pub cells: Vec<usize>,
    /// Well equations with respect to connection-cell variables.
    pub b: Vec<Matrix4x3<f64>>,
    /// Cell equations with respect to well variables.
    pub c: Vec<Matrix3x4<f64>>,
    pub d: Matrix4<f64>,
    pub r: Vector4<f64>,
    lu: Option<LU<f64, U4, U4>>,
}

impl WellBlocks {
    pub fn new(
        name: impl Into<String>,
        cells: Vec<usize>,
        b: Vec<Matrix4x3<f64>>,
        c: Vec<Matrix3x4<f64>>,
        d: Matrix4<f64>,
        r: Vector4<f64>,
    ) -> Result<Self, WellError> {
        let name = name.into();
        let lu = LU::new(d);
        let usable = lu.is_invertible()
            && lu.u().diagonal().iter().all(|v| v.is_finite())
            && {
                let diag = lu.u().diagonal();
                let max = diag.amax();
                diag.iter().all(|v| v.abs() > 1e-14 * max)
            };
        if !usable {
            return Err(WellError::Singular { well: name });
        }
        Ok(Self {
            name,
            cells,
            b,
            c,
            d,
            r,
            lu: Some(lu),
        })
    }

    pub fn solve_d(&self, v: &Vector4<f64>) -> Vector4<f64> {
        self.lu.as_ref().expect("factored").solve(v).expect("factored D is invertible")
    }

    fn apply_b(&self, x: &BlockVector) -> Vector4<f64> {
        let mut out = Vector4::zeros();
        for (k, &cell) in self.cells.iter().enumerate() {
            out += self.b[k] * x[cell];
        }
        out
    }

    /// `x_w = D^{-1} (R_w - B x_r)`.
    pub fn recover(&self, x_r: &BlockVector) -> Vector4<f64> {
        self.solve_d(&(self.r - self.apply_b(x_r)))
    }
}

/// Reservoir operator with the wells eliminated:
/// `y = (A - sum_w C_w D_w^{-1} B_w) x`.
pub struct SchurOperator<'a> {
    pub a: &'a BlockCsr,
    pub wells: &'a [WellBlocks],
}

impl LinearOperator for SchurOperator<'_> {
    fn num_rows(&self) -> usize {
        self.a.num_rows()
    }

    fn apply(&self, x: &BlockVector, y: &mut BlockVector) {
        self.a.spmv_into(x, y).expect("operator dimension");
        for w in self.wells {
            let z = w.solve_d(&w.apply_b(x));
            for (k, &cell) in w.cells.iter().enumerate() {
                y[cell] -= w.c[k] * z;
            }
        }
    }
}

/// Right-hand side of the reduced system, `R_r - sum_w C_w D_w^{-1} R_w`.
pub fn schur_rhs(r_r: &BlockVector, wells: &[WellBlocks]) -> BlockVector {
    let mut rhs = r_r.clone();
    for w in wells {
        let z = w.solve_d(&w.r);
        for (k, &cell) in w.cells.iter().enumerate() {
            rhs[cell] -= w.c[k] * z;
        }
    }
    rhs
}

/// Copy of `a` with the parts of `C D^{-1} B` that fall inside its
/// sparsity pattern subtracted; used to build the preconditioner.
pub fn schur_preconditioner_matrix(a: &BlockCsr, wells: &[WellBlocks]) -> BlockCsr {
    let mut m = a.clone();
    for w in wells {
        let dinv_b: Vec<Matrix4x3<f64>> = w
            .b
            .iter()
            .map(|b| Matrix4x3::from_columns(&[0, 1, 2].map(|c| w.solve_d(&b.column(c).into_owned()))))
            .collect();
        for (i, &ci) in w.cells.iter().enumerate() {
            for (j, &cj) in w.cells.iter().enumerate() {
                if let Some(pos) = m.position(ci, cj) {
                    let update: Block = w.c[i] * dinv_b[j];
                    m.blocks_mut()[pos] -= update;
                }
            }
        }
    }
    m
}

/// Outcome of a control check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlSwitch {
    pub from: ControlMode,
    pub to: ControlMode,
}

/// A well during simulation: its definition, active control mode and
/// current unknowns.
#[derive(Debug, Clone)]
pub struct Well {
    pub spec: WellSpec,
    pub mode: ControlMode,
    pub vars: WellVars,
    h: Vec<f64>,
    storage0: [f64; 3],
}

impl Well {
    pub fn new(spec: WellSpec, reservoir: &Reservoir, cells: &[CellState<f64>]) -> Result<Self, WellError> {
        if spec.connections.is_empty() {
            return Err(WellError::NoConnections { well: spec.name.clone() });
        }
        if let Some(c) = spec.connections.iter().find(|c| c.cell >= reservoir.num_cells()) {
            return Err(WellError::BadConnection {
                well: spec.name.clone(),
                cell: c.cell,
            });
        }
        let mode = spec.control.mode;
        let mut well = Self {
            h: vec![0.0; spec.connections.len()],
            spec,
            mode,
            vars: WellVars {
                q_t: 0.0,
                fw: 0.0,
                fg: 0.0,
                bhp: 0.0,
            },
            storage0: [0.0; 3],
        };
        well.initialize(reservoir, cells);
        Ok(well)
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn is_injector(&self) -> bool {
        matches!(self.spec.kind, WellKind::Injector(_))
    }

    /// Replaces the control from a new schedule step, keeping the solution.
    pub fn set_control(&mut self, control: WellControl) {
        self.spec.control = control;
        self.mode = control.mode;
    }

    pub fn connection_drops(&self) -> &[f64] {
        &self.h
    }

    fn conn_cells(&self, cells: &[CellState<f64>]) -> Vec<ConnCell<f64>> {
        self.spec
            .connections
            .iter()
            .map(|c| ConnCell::from_state(&cells[c.cell]))
            .collect()
    }

    /// Composition of the fluid an injector pushes into the formation.
    fn injected_phi<S: Scalar>(&self) -> Option<[S; 3]> {
        let z = S::from_f64(0.0);
        let one = S::from_f64(1.0);
        match self.spec.kind {
            WellKind::Injector(InjectedFluid::Water) => Some([one, z, z]),
            WellKind::Injector(InjectedFluid::Gas) => Some([z, z, one]),
            WellKind::Producer => None,
        }
    }

    /// Surface composition of fluid entering from the cells, weighted by
    /// phase mobility.
    fn inflow_composition(&self, cells: &[CellState<f64>]) -> [f64; 3] {
        if let WellKind::Injector(f) = self.spec.kind {
            return match f {
                InjectedFluid::Water => [1.0, 0.0, 0.0],
                InjectedFluid::Gas => [0.0, 0.0, 1.0],
            };
        }
        let mut q = [0.0; 3];
        for (c, cc) in self.spec.connections.iter().zip(self.conn_cells(cells)) {
            let qo = c.trans * cc.mobility[1] * cc.b[1];
            q[0] += c.trans * cc.mobility[0] * cc.b[0];
            q[1] += qo;
            q[2] += c.trans * cc.mobility[2] * cc.b[2] + cc.rgo * qo;
        }
        let total: f64 = q.iter().sum();
        if total > 0.0 {
            q.map(|v| v / total)
        } else {
            [0.0, 1.0, 0.0]
        }
    }

    fn fractions_from_composition(phi: [f64; 3]) -> (f64, f64) {
        let w = [phi[0] * WEIGHTS[0], phi[1] * WEIGHTS[1], phi[2] * WEIGHTS[2]];
        let total: f64 = w.iter().sum();
        (w[0] / total, w[2] / total)
    }

    fn wellbore_composition(&self, cells: &[CellState<f64>]) -> [f64; 3] {
        if self.vars.q_t.abs() > MIN_RATE {
            let phi = composition(self.vars.fw, self.vars.fg);
            if phi.iter().all(|v| v.is_finite() && *v >= 0.0) {
                return phi;
            }
        }
        self.inflow_composition(cells)
    }

    /// Controlled surface rate as a positive number for the well's
    /// natural flow direction.
    fn controlled_rate<S: Scalar>(&self, q: [S; 3]) -> S {
        match self.spec.kind {
            WellKind::Injector(InjectedFluid::Water) => -q[0],
            WellKind::Injector(InjectedFluid::Gas) => -q[2],
            WellKind::Producer => match self.spec.control.rate_kind {
                RateKind::Oil => q[1],
                RateKind::Water => q[0],
                RateKind::Gas => q[2],
                RateKind::Liquid => q[0] + q[1],
            },
        }
    }

    pub fn controlled_surface_rate(&self) -> f64 {
        self.controlled_rate(self.vars.surface_rates())
    }

    /// First guess of the well unknowns from the connected cells.
    fn initialize(&mut self, reservoir: &Reservoir, cells: &[CellState<f64>]) {
        let phi = self.inflow_composition(cells);
        let (fw, fg) = Self::fractions_from_composition(phi);
        let conn = self.conn_cells(cells);
        let depths: Vec<f64> = self.spec.connections.iter().map(|c| c.depth).collect();
        let p_ref = conn[0].pressure;
        self.h = connection_pressure_drops(&reservoir.fluid, reservoir.gravity, self.spec.ref_depth, p_ref, phi, &depths);
        // productivity of the controlled rate per unit drawdown
        let mut pi = 0.0;
        let mut pi_p = 0.0;
        for ((c, cc), h) in self.spec.connections.iter().zip(&conn).zip(&self.h) {
            let lam: f64 = match self.spec.kind {
                WellKind::Injector(InjectedFluid::Water) => cc.mobility.iter().sum::<f64>() * cc.b[0],
                WellKind::Injector(InjectedFluid::Gas) => cc.mobility.iter().sum::<f64>() * cc.b[2],
                WellKind::Producer => {
                    let q = [cc.mobility[0] * cc.b[0], cc.mobility[1] * cc.b[1], cc.mobility[2] * cc.b[2] + cc.rgo * cc.mobility[1] * cc.b[1]];
                    self.controlled_rate(q)
                }
            };
            pi += c.trans * lam;
            pi_p += c.trans * lam * (cc.pressure - h);
        }
        let p_avg = if pi > 0.0 { pi_p / pi } else { p_ref - self.h[0] };
        let sign = if self.is_injector() { -1.0 } else { 1.0 };
        let ctrl = self.spec.control;
        let mut bhp = match self.mode {
            ControlMode::Bhp => ctrl.bhp_limit,
            ControlMode::Rate if pi > 0.0 && ctrl.rate_target.is_finite() => p_avg - sign * ctrl.rate_target / pi,
            ControlMode::Rate => p_avg - sign * 1e5,
        };
        if self.mode == ControlMode::Rate {
            bhp = if self.is_injector() { bhp.min(ctrl.bhp_limit) } else { bhp.max(ctrl.bhp_limit) };
        }
        let phi_now = composition(fw, fg);
        let mut q = [0.0; 3];
        for ((c, cc), h) in self.spec.connections.iter().zip(&conn).zip(&self.h) {
            let r = connection_inflow(c.trans, *h, cc, bhp, phi_now);
            for a in 0..3 {
                q[a] += r[a];
            }
        }
        let q_t: f64 = (0..3).map(|a| WEIGHTS[a] * q[a]).sum();
        self.vars = WellVars { q_t, fw, fg, bhp };
    }

    /// Freezes the connection pressure drops and the storage term at the
    /// start of a time step.
    pub fn begin_step(&mut self, reservoir: &Reservoir, cells: &[CellState<f64>]) {
        let phi = self.wellbore_composition(cells);
        let depths: Vec<f64> = self.spec.connections.iter().map(|c| c.depth).collect();
        self.h = connection_pressure_drops(&reservoir.fluid, reservoir.gravity, self.spec.ref_depth, self.vars.bhp, phi, &depths);
        let v = self.vars;
        self.storage0 = self.storage(&reservoir.fluid, [v.q_t, v.fw, v.fg, v.bhp]);
    }

    /// Surface volume of each component stored in the wellbore.
    fn storage<S: Scalar>(&self, fluid: &FluidSystem, [_, fw, fg, bhp]: [S; 4]) -> [S; 3] {
        let phi = composition(fw, fg);
        let (bw, _) = fluid.water.props(bhp);
        let rs = fluid.oil.saturated_rs(bhp);
        let (bo, _) = fluid.oil.props(bhp, rs, true);
        let (bg, _) = fluid.gas.props(bhp);
        [
            phi[0] * bw * WELLBORE_VOLUME,
            phi[1] * bo * WELLBORE_VOLUME,
            phi[2] * bg * WELLBORE_VOLUME,
        ]
    }

    /// Well residuals and connection rates for given unknowns and cells.
    fn equations<S: Scalar>(
        &self,
        fluid: &FluidSystem,
        vars: [S; 4],
        cells: &[ConnCell<S>],
        dt: f64,
    ) -> ([S; 4], Vec<[S; 3]>) {
        let [q_t, fw, fg, bhp] = vars;
        let phi = self.injected_phi().unwrap_or_else(|| composition(fw, fg));
        let rates: Vec<[S; 3]> = self
            .spec
            .connections
            .iter()
            .zip(cells)
            .zip(&self.h)
            .map(|((c, cell), &h)| connection_inflow(c.trans, h, cell, bhp, phi))
            .collect();
        let q = surface_rates([q_t, fw, fg]);
        let storage = self.storage(fluid, vars);
        let mut r = [S::from_f64(0.0); 4];
        for a in 0..3 {
            let inflow = rates.iter().fold(S::from_f64(0.0), |acc, x| acc + x[a]);
            r[a] = (storage[a] - self.storage0[a]) / dt + q[a] - inflow;
        }
        r[3] = match self.mode {
            ControlMode::Bhp => bhp - self.spec.control.bhp_limit,
            ControlMode::Rate => self.controlled_rate(q) - self.spec.control.rate_target,
        };
        (r, rates)
    }

    /// Adds the well source terms to the cell system and returns the
    /// well's local blocks.
    pub fn assemble(
        &self,
        reservoir: &Reservoir,
        states: &[CellState<Eval3>],
        dt: f64,
        system: &mut AssembledSystem,
    ) -> Result<WellBlocks, WellError> {
        let fluid = &reservoir.fluid;
        let values: Vec<ConnCell<f64>> = self
            .spec
            .connections
            .iter()
            .map(|c| ConnCell::from_state(&states[c.cell].values()))
            .collect();

        // derivatives with respect to the cell unknowns
        let seeded_cells: Vec<ConnCell<Eval3>> = self
            .spec
            .connections
            .iter()
            .map(|c| ConnCell::from_state(&states[c.cell]))
            .collect();
        let const_vars = self.vars.as_array().map(Eval3::constant);
        let (_, rates_c) = self.equations(fluid, const_vars, &seeded_cells, dt);

        // derivatives with respect to the well unknowns
        let lifted: Vec<ConnCell<Eval4>> = values.iter().map(lift::<4>).collect();
        let (res_w, rates_w) = self.equations(fluid, self.vars.seeded(), &lifted, dt);

        let mut b = Vec::with_capacity(rates_c.len());
        let mut c = Vec::with_capacity(rates_c.len());
        let mut cells = Vec::with_capacity(rates_c.len());
        for (k, conn) in self.spec.connections.iter().enumerate() {
            let mut a_block = Block::zeros();
            let mut b_block = Matrix4x3::zeros();
            let mut c_block = Matrix3x4::zeros();
            for a in 0..3 {
                system.residual[conn.cell][a] += rates_c[k][a].value();
                for v in 0..3 {
                    a_block[(a, v)] = rates_c[k][a].derivative(v);
                    b_block[(a, v)] = -rates_c[k][a].derivative(v);
                }
                for v in 0..4 {
                    c_block[(a, v)] = rates_w[k][a].derivative(v);
                }
            }
            system.jacobian.add_block(conn.cell, conn.cell, &a_block);
            cells.push(conn.cell);
            b.push(b_block);
            c.push(c_block);
        }
        let d = Matrix4::from_fn(|i, j| res_w[i].derivative(j));
        let r = Vector4::from_fn(|i, _| res_w[i].value());
        WellBlocks::new(self.spec.name.clone(), cells, b, c, d, r)
    }

    /// Scaled residual of the well equations: component balances relative
    /// to the well rate and the control equation relative to its target.
    pub fn residual_norms(&self, r: &Vector4<f64>) -> (f64, f64) {
        let scale = self.vars.q_t.abs().max(1e-5);
        let balance = (0..3).map(|a| (r[a] * WEIGHTS[a]).abs() / scale).fold(0.0, f64::max);
        let target = match self.mode {
            ControlMode::Bhp => self.spec.control.bhp_limit,
            ControlMode::Rate => self.spec.control.rate_target,
        };
        (balance, r[3].abs() / target.abs().max(1e-12))
    }

    /// Applies a Newton increment (`vars -= dx`) with limits on the
    /// pressure change and physical fractions.
    pub fn apply_update(&mut self, dx: &Vector4<f64>, dp_max_rel: f64) {
        let v = &mut self.vars;
        v.q_t -= dx[0];
        v.fw -= dx[1];
        v.fg -= dx[2];
        let dp_max = dp_max_rel * v.bhp.abs();
        v.bhp -= dx[3].clamp(-dp_max, dp_max);
        v.fw = v.fw.clamp(0.0, 1.0);
        v.fg = v.fg.clamp(0.0, 1.0);
        let sum = v.fw + v.fg;
        if sum > 1.0 {
            v.fw /= sum;
            v.fg /= sum;
        }
    }

    /// Checks the inactive constraint and switches control mode if it is
    /// violated.
    pub fn switch_control(&mut self) -> Option<ControlSwitch> {
        let ctrl = self.spec.control;
        let from = self.mode;
        let to = match (self.mode, self.is_injector()) {
            (ControlMode::Rate, false) if self.vars.bhp < ctrl.bhp_limit => ControlMode::Bhp,
            (ControlMode::Rate, true) if self.vars.bhp > ctrl.bhp_limit => ControlMode::Bhp,
            (ControlMode::Bhp, _) if self.controlled_surface_rate() > ctrl.rate_target => ControlMode::Rate,
            _ => return None,
        };
        self.mode = to;
        Some(ControlSwitch { from, to })
    }

    /// Connection rates at the current unknowns, surface volumes into the well.
    pub fn connection_rates(&self, cells: &[CellState<f64>]) -> Vec<[f64; 3]> {
        let phi = self.injected_phi().unwrap_or_else(|| composition(self.vars.fw, self.vars.fg));
        self.spec
            .connections
            .iter()
            .zip(self.conn_cells(cells))
            .zip(&self.h)
            .map(|((c, cc), &h)| connection_inflow(c.trans, h, &cc, self.vars.bhp, phi))
            .collect()
    }

    /// Residuals at the current unknowns without derivatives.
    pub fn residual_values(&self, reservoir: &Reservoir, cells: &[CellState<f64>], dt: f64) -> [f64; 4] {
        let conn = self.conn_cells(cells);
        self.equations(&reservoir.fluid, self.vars.as_array(), &conn, dt).0
    }
}

/// Applies `x_w` recovered from the reduced solve to every well.
pub fn recover_well_solution(x_r: &BlockVector, well: &WellBlocks) -> Vector4<f64> {
    well.recover(x_r)
}

/// Convenience for tests and examples: `Vec3` from an array.
pub fn vec3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}
