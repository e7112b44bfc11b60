//! The acceptance checks. Each returns a one-line summary on success and
//! a description of the first violation otherwise.

use std::panic::{catch_unwind, AssertUnwindSafe};

use nalgebra::{DMatrix, DVector, Matrix3x4, Matrix4, Matrix4x3, Vector4};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use blackoil::autodiff::{Elementary, Evaluation};
use blackoil::deck::{build_case, parse_file, parse_str, MemoryResolver, ParseOptions, Registry};
use blackoil::grid::{half_transmissibility, transmissibility, CartesianSpec, ConnectionKind, Grid};
use blackoil::linalg::{bicgstab, Block, BlockCsr, BlockVector, Ilu0, LinearOperator, SolverConfig, Vec3};
use blackoil::model::{AssembledSystem, CellState, PrimaryVariables, Reservoir, XMeaning};
use blackoil::nonlinear::{
    run_schedule, solve_timestep, NewtonConfig, ReportRecord, SimState, TimestepControl, Workspace,
};
use blackoil::units::{DAY, MILLIDARCY};
use blackoil::wells::{
    recover_well_solution, schur_preconditioner_matrix, schur_rhs, ControlMode, SchurOperator, Well, WellBlocks,
    WellKind,
};

use super::*;

type E2 = Evaluation<2>;

struct BinaryOp {
    name: &'static str,
    ad: fn(E2, E2) -> E2,
    val: fn(f64, f64) -> f64,
    /// Arguments drawn from this range.
    domain: (f64, f64),
}

fn binary_ops() -> Vec<BinaryOp> {
    let pos = (0.1, 10.0);
    let wide = (-10.0, 10.0);
    vec![
        BinaryOp { name: "add", ad: |a, b| a + b, val: |a, b| a + b, domain: wide },
        BinaryOp { name: "sub", ad: |a, b| a - b, val: |a, b| a - b, domain: wide },
        BinaryOp { name: "mul", ad: |a, b| a * b, val: |a, b| a * b, domain: wide },
        BinaryOp { name: "div", ad: |a, b| a / b, val: |a, b| a / b, domain: pos },
        BinaryOp { name: "neg", ad: |a, _| -a, val: |a, _| -a, domain: wide },
        BinaryOp { name: "add f64", ad: |a, _| a + 2.5, val: |a, _| a + 2.5, domain: wide },
        BinaryOp { name: "sub f64", ad: |a, _| a - 2.5, val: |a, _| a - 2.5, domain: wide },
        BinaryOp { name: "mul f64", ad: |a, _| a * -1.5, val: |a, _| a * -1.5, domain: wide },
        BinaryOp { name: "div f64", ad: |a, _| a / 3.0, val: |a, _| a / 3.0, domain: wide },
        BinaryOp { name: "f64 sub", ad: |a, _| 2.5 - a, val: |a, _| 2.5 - a, domain: wide },
        BinaryOp { name: "f64 mul", ad: |a, _| 2.5 * a, val: |a, _| 2.5 * a, domain: wide },
        BinaryOp { name: "f64 div", ad: |a, _| 2.5 / a, val: |a, _| 2.5 / a, domain: pos },
        BinaryOp { name: "exp", ad: |a, b| (a * b * 0.1).exp(), val: |a, b| (a * b * 0.1).exp(), domain: wide },
        BinaryOp { name: "ln", ad: |a, b| (a * b).ln(), val: |a, b| (a * b).ln(), domain: pos },
        BinaryOp { name: "sqrt", ad: |a, b| (a + b).sqrt(), val: |a, b| (a + b).sqrt(), domain: pos },
        BinaryOp { name: "abs", ad: |a, b| (a - b).abs(), val: |a, b| (a - b).abs(), domain: wide },
        BinaryOp { name: "recip", ad: |a, b| (a * b).recip(), val: |a, b| 1.0 / (a * b), domain: pos },
        BinaryOp { name: "powf", ad: |a, b| (a * b).powf(2.7), val: |a, b| (a * b).powf(2.7), domain: pos },
        BinaryOp { name: "pow", ad: |a, b| a.pow(b * 0.3), val: |a, b| a.powf(b * 0.3), domain: pos },
        BinaryOp { name: "min", ad: |a, b| a.min(b), val: |a, b| a.min(b), domain: wide },
        BinaryOp { name: "max", ad: |a, b| a.max(b), val: |a, b| a.max(b), domain: wide },
        BinaryOp {
            name: "try_div",
            ad: |a, b| a.try_div(b).unwrap(),
            val: |a, b| a / b,
            domain: pos,
        },
        BinaryOp {
            name: "checked exp",
            ad: |a, _| a.apply(Elementary::Exp).unwrap(),
            val: |a, _| a.exp(),
            domain: wide,
        },
        BinaryOp {
            name: "checked ln",
            ad: |a, _| a.apply(Elementary::Ln).unwrap(),
            val: |a, _| a.ln(),
            domain: pos,
        },
        BinaryOp {
            name: "checked sqrt",
            ad: |a, _| a.apply(Elementary::Sqrt).unwrap(),
            val: |a, _| a.sqrt(),
            domain: pos,
        },
        BinaryOp {
            name: "checked powf",
            ad: |a, _| a.apply(Elementary::Powf(-1.3)).unwrap(),
            val: |a, _| a.powf(-1.3),
            domain: pos,
        },
        BinaryOp {
            name: "composite",
            ad: |a, b| (a * a + b).sqrt() * (-b * 0.2).exp() / (a + 12.0),
            val: |a, b| (a * a + b).sqrt() * (-b * 0.2).exp() / (a + 12.0),
            domain: pos,
        },
    ]
}

/// Every field of a cell state that carries derivatives.
fn state_fields<S: Copy>(s: &CellState<S>) -> Vec<(&'static str, S)> {
    let mut out = Vec::with_capacity(23);
    let groups: [(&str, &[S; 3]); 8] = [
        ("saturation", &s.saturation),
        ("pressure", &s.pressure),
        ("b", &s.b),
        ("mu", &s.mu),
        ("rho", &s.rho),
        ("kr", &s.kr),
        ("mobility", &s.mobility),
        ("accumulation", &s.accumulation),
    ];
    for (name, arr) in groups {
        out.extend(arr.iter().map(|&v| (name, v)));
    }
    out.push(("rgo", s.rgo));
    out.push(("rs", s.rs));
    out.push(("pv_mult", s.pv_mult));
    out
}

pub fn ad_correctness() -> Result<String, String> {
    let mut rng = StdRng::seed_from_u64(1);
    let ops = binary_ops();
    let mut checks = 0usize;
    for k in 0..1000 {
        for op in &ops {
            let (lo, hi) = op.domain;
            let (a, b) = (rng.gen_range(lo..hi), rng.gen_range(lo..hi));
            // keep clear of the kinks of abs, min and max
            if (a - b).abs() < 1e-3 {
                continue;
            }
            let out = (op.ad)(E2::variable(a, 0).unwrap(), E2::variable(b, 1).unwrap());
            let f0 = (op.val)(a, b);
            if (out.value() - f0).abs() > 1e-14 * f0.abs().max(1.0) {
                return Err(format!("{}: value {} vs {f0} at ({a}, {b})", op.name, out.value()));
            }
            for v in 0..2 {
                let x = [a, b][v];
                let h = fd_step(x);
                let shifted = |d: f64| if v == 0 { (op.val)(a + d, b) } else { (op.val)(a, b + d) };
                let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                let ad = out.derivative(v);
                let tol = 1e-5 * ad.abs().max(1e-6 * f0.abs() / x.abs().max(1.0)).max(1e-12);
                if (fd - ad).abs() > tol {
                    return Err(format!("{} d/dx{v} at ({a}, {b}) sample {k}: ad {ad} fd {fd}", op.name));
                }
                checks += 1;
            }
        }
    }

    let res = reservoir([1, 1, 1]);
    let mut pipeline = 0usize;
    for k in 0..1000 {
        let pv = random_state(&mut rng, &res, k % 2 == 0);
        let state = res.cell_state(pv);
        let base: Vec<f64> = state_fields(&res.cell_values(pv)).into_iter().map(|(_, v)| v).collect();
        for v in 0..3 {
            let x = pv.as_array()[v];
            let h = fd_step(x);
            let mut plus = pv;
            plus.set(v, x + h);
            let mut minus = pv;
            minus.set(v, x - h);
            let fp: Vec<f64> = state_fields(&res.cell_values(plus)).into_iter().map(|(_, v)| v).collect();
            let fm: Vec<f64> = state_fields(&res.cell_values(minus)).into_iter().map(|(_, v)| v).collect();
            for (i, (name, e)) in state_fields(&state).into_iter().enumerate() {
                let ad = e.derivative(v);
                let tol = 1e-5 * ad.abs().max(1e-6 * base[i].abs() / x.abs().max(1.0)).max(1e-300);
                if !matches_fd(ad, base[i], fp[i], fm[i], h, tol) {
                    return Err(format!(
                        "{name}[{i}] d/dx{v} state {k} {pv:?}: ad {ad} fd {}",
                        (fp[i] - fm[i]) / (2.0 * h)
                    ));
                }
                pipeline += 1;
            }
        }
    }
    Ok(format!("{checks} elementary and {pipeline} pipeline derivatives match"))
}

pub fn jacobian_oracle() -> Result<String, String> {
    let mut rng = StdRng::seed_from_u64(2);
    let layouts: [([usize; 3], &str); 10] = [
        ([2, 1, 1], "mixed"),
        ([1, 1, 3], "mixed"),
        ([2, 2, 1], "saturated"),
        ([3, 2, 1], "undersaturated"),
        ([2, 2, 2], "mixed"),
        ([3, 3, 1], "mixed"),
        ([2, 2, 3], "saturated"),
        ([3, 3, 2], "mixed"),
        ([3, 3, 3], "mixed"),
        ([3, 3, 3], "undersaturated"),
    ];
    let mut entries = 0usize;
    for (dims, kind) in layouts {
        let res = reservoir(dims);
        let n = res.num_cells();
        let pvs: Vec<_> = (0..n)
            .map(|c| {
                let under = match kind {
                    "saturated" => false,
                    "undersaturated" => true,
                    _ => c % 2 == 0,
                };
                random_state(&mut rng, &res, under)
            })
            .collect();
        let earlier: Vec<_> = pvs
            .iter()
            .map(|p| {
                let mut q = *p;
                q.po *= rng.gen_range(0.95..1.05);
                q
            })
            .collect();
        let acc0 = res.accumulations(&earlier);
        let dt = rng.gen_range(0.5..20.0) * DAY;
        let states: Vec<_> = pvs.iter().map(|&p| res.cell_state(p)).collect();
        let mut sys = AssembledSystem::new(&res).map_err(|e| e.to_string())?;
        res.assemble(&states, &acc0, dt, &mut sys);
        let jac = sys.jacobian.to_dense();
        let r0 = residual(&res, &pvs, &acc0, dt);
        for c in 0..n {
            for v in 0..3 {
                let x = pvs[c].as_array()[v];
                let h = fd_step(x);
                let mut plus = pvs.clone();
                plus[c].set(v, x + h);
                let mut minus = pvs.clone();
                minus[c].set(v, x - h);
                let rp = residual(&res, &plus, &acc0, dt);
                let rm = residual(&res, &minus, &acc0, dt);
                let col = 3 * c + v;
                let scale = (0..3 * n).map(|r| jac[(r, col)].abs()).fold(0.0, f64::max);
                for row in 0..3 * n {
                    let ad = jac[(row, col)];
                    let tol = 1e-5 * ad.abs().max(1e-6 * scale);
                    if !matches_fd(ad, r0[row], rp[row], rm[row], h, tol) {
                        return Err(format!(
                            "{dims:?} {kind}: entry ({row}, {col}) ad {ad} fd {}",
                            (rp[row] - rm[row]) / (2.0 * h)
                        ));
                    }
                    entries += 1;
                }
            }
        }
    }
    Ok(format!("{entries} Jacobian entries on {} grids match", layouts.len()))
}

pub fn transmissibility_formula() -> Result<String, String> {
    let t = half_transmissibility(1.0, [0.5; 3], [1.0, 0.5, 0.5], [1.0, 0.0, 0.0], [1.0; 3]).map_err(|e| e.to_string())?;
    if t != 2.0 {
        return Err(format!("unit cube half-transmissibility {t}"));
    }
    let tt = transmissibility(t, t);
    if tt != 1.0 {
        return Err(format!("unit cube transmissibility {tt}"));
    }

    let mut rng = StdRng::seed_from_u64(3);
    for draw in 0..10 {
        let size = [rng.gen_range(1.0..500.0), rng.gen_range(1.0..500.0), rng.gen_range(0.5..100.0)];
        let k = [
            rng.gen_range(1.0..5000.0) * MILLIDARCY,
            rng.gen_range(1.0..5000.0) * MILLIDARCY,
            rng.gen_range(0.1..500.0) * MILLIDARCY,
        ];
        let spec = CartesianSpec::uniform([2, 2, 2], size, rng.gen_range(1000.0..3000.0));
        let grid = Grid::build_cartesian(&spec, &[k; 8]).map_err(|e| e.to_string())?;
        for conn in grid.connections() {
            let (axis, a, b) = match conn.kind {
                ConnectionKind::X => (0, 1, 2),
                ConnectionKind::Y => (1, 0, 2),
                ConnectionKind::Z => (2, 0, 1),
                ConnectionKind::NonNeighbor => return Err("unexpected non-neighbour connection".into()),
            };
            let expect = k[axis] * size[a] * size[b] / size[axis];
            if (conn.trans - expect).abs() > 1e-12 * expect {
                return Err(format!("draw {draw}: {:?} T = {} expected {expect}", conn.kind, conn.trans));
            }
        }
        if grid.connections().len() != 12 {
            return Err(format!("draw {draw}: {} connections", grid.connections().len()));
        }
    }
    Ok("unit cube t=2 T=1; K*A/h matched on 10 draws".into())
}

fn column_deck(days: usize) -> String {
    synthetic_deck(
        [1, 1, 20],
        [200.0, 200.0, 10.0],
        8000.0,
        100.0,
        "EQUIL\n  8100 4000 8150 0 8050 0 /\nRSVD\n  8000 1.2598\n  8200 1.2598 /\n",
        &format!("TSTEP\n  {}*10 /\n", days / 10),
    )
}

fn max_saturation_change(res: &Reservoir, a: &[PrimaryVariables], b: &[PrimaryVariables]) -> f64 {
    let mut ds = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let (sx, sy) = (res.cell_values(*x).saturation, res.cell_values(*y).saturation);
        for p in 0..3 {
            ds = ds.max((sx[p] - sy[p]).abs());
        }
    }
    ds
}

pub fn equilibrium_no_flow() -> Result<String, String> {
    let case = case_from_text(&column_deck(100))?;
    let res = case.reservoir();
    let initial = case.initial_state().map_err(|e| e.to_string())?;
    let phases = initial.iter().filter(|p| p.meaning == XMeaning::Sg && p.x > 0.0).count();
    if phases == 0 || initial.iter().all(|p| res.cell_values(*p).saturation[0] > 0.999) {
        return Err("column does not hold three phases".into());
    }
    // the default tolerances, then tolerances tight enough to force
    // iterations on the discretisation error of the initial state
    let tight = NewtonConfig {
        tol_mb: 1e-13,
        tol_cnv: 1e-10,
        ..NewtonConfig::default()
    };
    let mut summary = Vec::new();
    for (label, cfg) in [("default", NewtonConfig::default()), ("tight", tight)] {
        let results = run_schedule(res, initial.clone(), &case.schedule, &cfg, &TimestepControl::default(), &mut |_| {})
            .map_err(|e| format!("{label}: {e}"))?;
        if results.substeps.iter().any(|s| !s.step.converged) {
            return Err(format!("{label}: a step was cut"));
        }
        let max_newton = results.substeps.iter().map(|s| s.step.newton_iterations).max().unwrap_or(0);
        if label == "default" && max_newton > 1 {
            return Err(format!("{max_newton} Newton iterations in one step"));
        }
        let ds = max_saturation_change(res, &initial, &results.reports.last().ok_or("no reports")?.cells);
        if ds >= 1e-8 {
            return Err(format!("{label}: saturation changed by {ds:e}"));
        }
        summary.push(format!("{label} tolerances: {max_newton} Newton iterations max, dS {ds:.1e}"));
    }
    Ok(format!("{phases} gas-bearing cells; {}", summary.join("; ")))
}

fn closed_box_deck() -> String {
    synthetic_deck(
        [5, 5, 3],
        [300.0, 300.0, 30.0],
        8000.0,
        200.0,
        "EQUIL\n  8045 3500 8200 0 7900 0 /\nRSVD\n  7900 0.8\n  8200 0.8 /\n",
        "WELSPECS
  'INJ' 'G' 1 1 1* 'GAS' /
  'PROD' 'G' 5 5 1* 'OIL' /
/
COMPDAT
  'INJ' 2* 1 1 'OPEN' 1* 5.0 /
  'PROD' 2* 3 3 'OPEN' 1* 5.0 /
/
WCONINJE
  'INJ' 'GAS' 'OPEN' 'RATE' 5000 1* 6000 /
/
WCONPROD
  'PROD' 'OPEN' 'ORAT' 500 4* 1500 /
/
TSTEP
  10*10 /
",
    )
}

pub fn closed_system_conservation() -> Result<String, String> {
    let case = case_from_text(&closed_box_deck())?;
    let res = case.reservoir();
    let cfg = NewtonConfig::default();
    let results = run_schedule(
        res,
        case.initial_state().map_err(|e| e.to_string())?,
        &case.schedule,
        &cfg,
        &TimestepControl::default(),
        &mut |_| {},
    )
    .map_err(|e| e.to_string())?;
    let injected = -results.cumulative_outflow[2];
    if injected <= 0.0 {
        return Err("no gas was injected".into());
    }

    // shut in: no wells, fixed steps
    let mut state = SimState {
        cells: results.reports.last().ok_or("no reports")?.cells.clone(),
        wells: Vec::new(),
    };
    let mut ws = Workspace::new(res).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut steps = 0;
    let mut dt = DAY;
    let mut t = 0.0;
    while t < 200.0 * DAY {
        let before = res.in_place(&state.cells);
        let (next, report) = solve_timestep(res, &state, dt, &cfg, &mut ws);
        let next = match next {
            Some(s) => s,
            None => {
                dt *= 0.5;
                if dt < 1e-3 * DAY {
                    return Err(format!("shut-in step failed: {:?}", report.failure));
                }
                continue;
            }
        };
        let after = res.in_place(&next.cells);
        for a in 0..3 {
            let rel = (after[a] - before[a]).abs() / before[a].abs();
            worst = worst.max(rel);
            if rel >= 10.0 * cfg.tol_mb {
                return Err(format!("component {a} changed by {rel:e} in shut-in step {steps}"));
            }
        }
        t += dt;
        steps += 1;
        dt = (dt * 2.0).min(20.0 * DAY);
        state = next;
    }
    Ok(format!("{steps} shut-in steps, worst relative in-place change {worst:.2e}"))
}

/// Dense monolithic system `[A C; B D]` for the Schur oracle.
fn dense_coupled(a: &BlockCsr, wells: &[WellBlocks]) -> DMatrix<f64> {
    let n = 3 * a.num_rows();
    let m = n + 4 * wells.len();
    let mut k = DMatrix::zeros(m, m);
    k.view_mut((0, 0), (n, n)).copy_from(&a.to_dense());
    for (w, wb) in wells.iter().enumerate() {
        let off = n + 4 * w;
        for (j, &cell) in wb.cells.iter().enumerate() {
            k.view_mut((3 * cell, off), (3, 4)).copy_from(&wb.c[j]);
            k.view_mut((off, 3 * cell), (4, 3)).copy_from(&wb.b[j]);
        }
        k.view_mut((off, off), (4, 4)).copy_from(&wb.d);
    }
    k
}

fn schur_solve(a: &BlockCsr, wells: &[WellBlocks], r_r: &BlockVector) -> Result<(BlockVector, Vec<Vector4<f64>>), String> {
    let op = SchurOperator { a, wells };
    let n = a.num_rows();
    // reduced matrix column by column through the operator
    let mut s = DMatrix::zeros(3 * n, 3 * n);
    let mut e = BlockVector::zeros(n);
    let mut y = BlockVector::zeros(n);
    for col in 0..3 * n {
        e.fill_zero();
        e[col / 3][col % 3] = 1.0;
        op.apply(&e, &mut y);
        s.set_column(col, &DVector::from_vec(y.to_flat()));
    }
    let rhs = DVector::from_vec(schur_rhs(r_r, wells).to_flat());
    let x = s.lu().solve(&rhs).ok_or("reduced matrix is singular")?;
    let x_r = BlockVector::from_flat(x.as_slice());
    let x_w = wells.iter().map(|w| recover_well_solution(&x_r, w)).collect();
    Ok((x_r, x_w))
}

fn random_block(rng: &mut StdRng, diag: f64) -> Block {
    let mut b = Block::from_fn(|_, _| rng.gen_range(-1.0..1.0));
    for i in 0..3 {
        b[(i, i)] += diag;
    }
    b
}

pub fn schur_exactness() -> Result<String, String> {
    // hand fixture
    let a = BlockCsr::from_triplets(1, &[(0, 0, Block::identity() * 2.0)]).map_err(|e| e.to_string())?;
    let mut b = Matrix4x3::zeros();
    b[(0, 0)] = 1.0;
    let mut c = Matrix3x4::zeros();
    c[(0, 0)] = 1.0;
    let d = Matrix4::from_diagonal(&Vector4::new(4.0, 1.0, 1.0, 1.0));
    let w = WellBlocks::new("W", vec![0], vec![b], vec![c], d, Vector4::new(2.0, 0.0, 0.0, 0.0)).map_err(|e| e.to_string())?;
    let wells = [w];
    let r_r = BlockVector::from_flat(&[1.0, 0.0, 0.0]);
    let rhs = schur_rhs(&r_r, &wells);
    if (rhs[0][0] - 0.5).abs() > 1e-15 {
        return Err(format!("hand fixture reduced rhs {}", rhs[0][0]));
    }
    let (x_r, x_w) = schur_solve(&a, &wells, &r_r)?;
    if (x_r[0][0] - 2.0 / 7.0).abs() > 1e-14 || (x_w[0][0] - 3.0 / 7.0).abs() > 1e-14 {
        return Err(format!("hand fixture x_r {} x_w {}", x_r[0][0], x_w[0][0]));
    }

    let mut rng = StdRng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let n = rng.gen_range(1..=10);
        let mut triplets = Vec::new();
        for i in 0..n {
            triplets.push((i, i, random_block(&mut rng, 8.0)));
            for j in 0..n {
                if j != i && (j + 1 == i || i + 1 == j || rng.gen_bool(0.15)) {
                    triplets.push((i, j, random_block(&mut rng, 0.0)));
                }
            }
        }
        let a = BlockCsr::from_triplets(n, &triplets).map_err(|e| e.to_string())?;
        let nw = rng.gen_range(1..=3);
        let mut wells = Vec::new();
        for w in 0..nw {
            let mut cells: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.5)).collect();
            if cells.is_empty() {
                cells.push(rng.gen_range(0..n));
            }
            let b = cells.iter().map(|_| Matrix4x3::from_fn(|_, _| rng.gen_range(-1.0..1.0))).collect();
            let c = cells.iter().map(|_| Matrix3x4::from_fn(|_, _| rng.gen_range(-1.0..1.0))).collect();
            let d = Matrix4::from_fn(|i, j| rng.gen_range(-1.0..1.0) + if i == j { 6.0 } else { 0.0 });
            let r = Vector4::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            wells.push(WellBlocks::new(format!("W{w}"), cells, b, c, d, r).map_err(|e| e.to_string())?);
        }
        let r_r = BlockVector::from_flat(&(0..3 * n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());

        let k = dense_coupled(&a, &wells);
        let mut rhs = r_r.to_flat();
        for w in &wells {
            rhs.extend(w.r.iter());
        }
        let exact = k.lu().solve(&DVector::from_vec(rhs)).ok_or("coupled matrix is singular")?;
        let (x_r, x_w) = schur_solve(&a, &wells, &r_r)?;
        let mut got = x_r.to_flat();
        for x in &x_w {
            got.extend(x.iter());
        }
        let err = (DVector::from_vec(got) - &exact).amax() / exact.amax().max(1.0);
        worst = worst.max(err);
        if err > 1e-10 {
            return Err(format!("case {case} ({n} cells, {nw} wells): error {err:e}"));
        }

        // the iterative path with the approximate preconditioner agrees too
        let ilu = Ilu0::factor(&schur_preconditioner_matrix(&a, &wells)).map_err(|e| e.to_string())?;
        let op = SchurOperator { a: &a, wells: &wells };
        let mut x = BlockVector::zeros(n);
        let cfg = SolverConfig {
            tolerance: 1e-14,
            max_iterations: 500,
        };
        bicgstab(&op, &ilu, &schur_rhs(&r_r, &wells), &mut x, &cfg);
        let err = (DVector::from_vec(x.to_flat()) - exact.rows(0, 3 * n)).amax() / exact.amax().max(1.0);
        if err > 1e-10 {
            return Err(format!("case {case}: iterative reduced solve error {err:e}"));
        }
    }
    Ok(format!("hand fixture exact; 50 random cases within {worst:.1e}"))
}

/// Reservoir-volume scaled Jacobian of `cells` with the open wells of
/// report step 0, as the Newton loop sees it.
fn spe1_system(
    res: &Reservoir,
    specs: &[blackoil::wells::WellSpec],
    cells: &[PrimaryVariables],
    start: &[PrimaryVariables],
    dt: f64,
) -> Result<(BlockCsr, Vec<WellBlocks>, BlockVector), String> {
    let states: Vec<_> = cells.iter().map(|&p| res.cell_state(p)).collect();
    let values: Vec<_> = states.iter().map(CellState::values).collect();
    let mut sys = AssembledSystem::new(res).map_err(|e| e.to_string())?;
    res.assemble(&states, &res.accumulations(start), dt, &mut sys);
    let mut blocks = Vec::new();
    for spec in specs {
        let mut w = Well::new(spec.clone(), res, &values).map_err(|e| e.to_string())?;
        w.begin_step(res, &values);
        blocks.push(w.assemble(res, &states, dt, &mut sys).map_err(|e| e.to_string())?);
    }
    let fvf = res.average_fvf(&values);
    let scale = Vec3::new(fvf[0], fvf[1], fvf[2]);
    sys.jacobian.scale_rows(&scale);
    for r in &mut sys.residual.0 {
        r.component_mul_assign(&scale);
    }
    for b in &mut blocks {
        for c in &mut b.c {
            for (row, s) in scale.iter().enumerate() {
                c.row_mut(row).scale_mut(*s);
            }
        }
    }
    Ok((sys.jacobian, blocks, sys.residual))
}

pub fn linear_solver() -> Result<String, String> {
    let case = load_case("SPE1.DATA");
    let res = case.reservoir();
    let mut snapshots: Vec<ReportRecord> = Vec::new();
    let initial = case.initial_state().map_err(|e| e.to_string())?;
    let short = &case.schedule[..40];
    run_schedule(res, initial, short, &NewtonConfig::default(), &TimestepControl::default(), &mut |r| {
        if r.index % 8 == 0 || r.index == 1 {
            snapshots.push(r.clone());
        }
    })
    .map_err(|e| e.to_string())?;

    let specs: Vec<_> = case.schedule[0].wells.iter().filter(|w| w.open).map(|w| w.spec.clone()).collect();
    let cfg = SolverConfig {
        tolerance: 1e-8,
        max_iterations: 200,
    };
    let mut max_iter = 0;
    let mut solved = 0;
    for pair in snapshots.windows(2) {
        // the later state evaluated against the earlier one, and a
        // perturbed iterate to get away from converged residuals
        let mut rng = StdRng::seed_from_u64(pair[1].index as u64);
        let perturbed: Vec<_> = pair[1]
            .cells
            .iter()
            .map(|p| {
                let mut q = *p;
                q.po *= rng.gen_range(0.98..1.02);
                q.sw = (q.sw + rng.gen_range(-0.01..0.01)).max(0.12);
                q
            })
            .collect();
        for (cells, dt) in [(&pair[1].cells, pair[1].time - pair[0].time), (&perturbed, 5.0 * DAY)] {
            let (a, wells, r) = spe1_system(res, &specs, cells, &pair[0].cells, dt)?;
            let rhs = schur_rhs(&r, &wells);
            let ilu = Ilu0::factor(&schur_preconditioner_matrix(&a, &wells)).map_err(|e| e.to_string())?;
            let op = SchurOperator { a: &a, wells: &wells };
            let mut x = BlockVector::zeros(rhs.len());
            let stats = bicgstab(&op, &ilu, &rhs, &mut x, &cfg);
            // residual recomputed independently of the solver
            let mut ax = BlockVector::zeros(rhs.len());
            op.apply(&x, &mut ax);
            let rel = DVector::from_vec(ax.to_flat()).metric_distance(&DVector::from_vec(rhs.to_flat())) / rhs.norm();
            if !stats.converged || stats.iterations >= 200 || rel >= 1e-8 {
                return Err(format!(
                    "report {}: {} iterations, relative residual {rel:e}",
                    pair[1].index, stats.iterations
                ));
            }
            max_iter = max_iter.max(stats.iterations);
            solved += 1;
        }
    }
    if solved == 0 {
        return Err("no systems assembled".into());
    }

    let mut rng = StdRng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for n in [1, 2, 5, 50] {
        let mut triplets = Vec::new();
        for i in 0..n {
            triplets.push((i, i, random_block(&mut rng, 6.0)));
            if i > 0 {
                triplets.push((i, i - 1, random_block(&mut rng, 0.0)));
                triplets.push((i - 1, i, random_block(&mut rng, 0.0)));
            }
        }
        let a = BlockCsr::from_triplets(n, &triplets).map_err(|e| e.to_string())?;
        let b: Vec<f64> = (0..3 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let exact = a.to_dense().lu().solve(&DVector::from_vec(b.clone())).ok_or("singular")?;
        let ilu = Ilu0::factor(&a).map_err(|e| e.to_string())?;
        let mut z = BlockVector::zeros(n);
        ilu.solve(&BlockVector::from_flat(&b), &mut z);
        let err = (DVector::from_vec(z.to_flat()) - &exact).amax() / exact.amax();
        worst = worst.max(err);
        if err > 1e-12 {
            return Err(format!("ILU0 on block-tridiagonal n={n}: error {err:e}"));
        }
    }
    Ok(format!(
        "{solved} SPE1 systems, at most {max_iter} BiCGStab iterations; ILU0 block-tridiagonal error {worst:.1e}"
    ))
}

pub fn spe1_physics() -> Result<String, String> {
    let case = load_case("SPE1.DATA");
    let res = case.reservoir();
    let initial = case.initial_state().map_err(|e| e.to_string())?;
    if initial.iter().any(|p| p.meaning != XMeaning::Rgo) {
        return Err("SPE1 does not start undersaturated".into());
    }
    let p_bubble_initial = {
        // pressure at which the initial dissolved gas saturates the oil
        let rgo = initial[0].x;
        let (mut lo, mut hi) = (1e5, 1e8);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if res.fluid.oil.saturated_rs(mid) < rgo {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    };
    let mut reports = Vec::new();
    let results = run_schedule(
        res,
        initial,
        &case.schedule,
        &NewtonConfig::default(),
        &TimestepControl::default(),
        &mut |r| reports.push(r.clone()),
    )
    .map_err(|e| e.to_string())?;

    // (a) free gas appears and the phase state agrees with pressure
    if results.variable_switches.to_sg == 0 {
        return Err("no cell switched to free gas".into());
    }
    for rec in &reports {
        for pv in &rec.cells {
            if pv.meaning == XMeaning::Rgo {
                let rs: f64 = res.fluid.oil.saturated_rs(pv.po);
                if pv.x > rs * (1.0 + 1e-6) {
                    return Err(format!("report {}: oversaturated oil Rgo {} > Rs {rs}", rec.index, pv.x));
                }
            }
        }
    }
    let last = reports.last().ok_or("no reports")?;
    let below: Vec<_> = last.cells.iter().filter(|p| p.po < p_bubble_initial).collect();
    let below_with_gas = below.iter().filter(|p| p.meaning == XMeaning::Sg && p.x > 0.0).count();
    if !below.is_empty() && below_with_gas == 0 {
        return Err("cells below the bubble point carry no free gas".into());
    }
    let gas_cells = last.cells.iter().filter(|p| p.meaning == XMeaning::Sg).count();

    // (b) producer GOR after breakthrough
    let gor: Vec<f64> = reports[1..]
        .iter()
        .map(|r| r.wells.iter().find(|w| w.name == "PROD").map_or(0.0, |w| w.gas_oil_ratio()))
        .collect();
    let solution_gor = gor[0];
    let breakthrough = gor.iter().position(|&g| g > 1.05 * solution_gor).ok_or("no gas breakthrough")?;
    for k in breakthrough + 1..gor.len() {
        if gor[k] < gor[k - 1] * (1.0 - 1e-9) {
            return Err(format!("GOR fell from {} to {} at report {}", gor[k - 1], gor[k], k + 1));
        }
    }

    // (c) control switches logged and consistent with limits; rates are
    // converged to the well tolerance
    let tol_wells = NewtonConfig::default().tol_wells;
    for (k, rec) in reports.iter().enumerate().skip(1) {
        let step = &case.schedule[k - 1];
        for w in &rec.wells {
            let spec = &step.wells.iter().find(|s| s.spec.name == w.name).ok_or("unknown well")?.spec;
            let limit = spec.control.bhp_limit;
            let target = spec.control.rate_target;
            let producer = matches!(w.kind, WellKind::Producer);
            let rate = if producer { w.production()[1] } else { w.injection()[2] };
            match w.mode {
                ControlMode::Rate => {
                    let ok = if producer { w.bhp >= limit * (1.0 - 1e-6) } else { w.bhp <= limit * (1.0 + 1e-6) };
                    if !ok || (rate - target).abs() > tol_wells * target {
                        return Err(format!("report {k}: {} on rate with bhp {} rate {rate}", w.name, w.bhp));
                    }
                }
                ControlMode::Bhp => {
                    if (w.bhp - limit).abs() > 1e-6 * limit || rate > target * (1.0 + tol_wells) {
                        return Err(format!("report {k}: {} on bhp with bhp {} rate {rate}", w.name, w.bhp));
                    }
                }
            }
            let prev = reports[k - 1].wells.iter().find(|p| p.name == w.name);
            if let Some(prev) = prev {
                if prev.mode != w.mode {
                    let logged = results.control_events.iter().any(|(t, e)| {
                        e.well == w.name && *t > reports[k - 1].time && *t <= rec.time && e.switch.to == w.mode
                    });
                    if !logged {
                        return Err(format!("report {k}: {} changed control without a logged event", w.name));
                    }
                }
            }
        }
    }
    if results.control_events.is_empty() {
        return Err("no control switch happened".into());
    }
    Ok(format!(
        "{} cells switched to free gas ({gas_cells} gas-bearing at the end), breakthrough at day {:.0}, GOR {:.2} -> {:.2} Mscf/stb, {} control events",
        results.variable_switches.to_sg,
        reports[breakthrough + 1].time / DAY,
        gor[breakthrough] / 178.1076,
        gor[gor.len() - 1] / 178.1076,
        results.control_events.len()
    ))
}

const ONE_CELL: &str = "RUNSPEC
DIMENS
  1 1 1 /
OIL
WATER
GAS
FIELD
GRID
DX
  100 /
DY
  100 /
DZ
  10 /
TOPS
  5000 /
PORO
  0.2 /
PERMX
  100 /
PROPS
PVTW
  3000 1.01 3E-6 0.5 /
ROCK
  3000 4E-6 /
SWOF
  0.2 0 1 0
  1   1 0 0 /
SGOF
  0   0 1 0
  0.8 1 0 0 /
DENSITY
  50 64 0.06 /
PVDG
  1000 2.0 0.015
  5000 0.5 0.025 /
PVDO
  1000 1.2 1.5
  5000 1.1 2.0 /
SOLUTION
EQUIL
  5005 3000 5100 0 4900 0 /
SCHEDULE
WELSPECS
  'P' 'G' 1 1 1* 'OIL' /
/
COMPDAT
  'P' 2* 1 1 'OPEN' 1* 2.5 /
/
WCONPROD
  'P' 'OPEN' 'ORAT' 5000 4* 2900 /
/
TSTEP
  1 /
";

pub fn well_control_switch() -> Result<String, String> {
    let case = case_from_text(ONE_CELL)?;
    let res = case.reservoir();
    let results = run_schedule(
        res,
        case.initial_state().map_err(|e| e.to_string())?,
        &case.schedule,
        &NewtonConfig::default(),
        &TimestepControl::default(),
        &mut |_| {},
    )
    .map_err(|e| e.to_string())?;
    let control = case.schedule[0].wells[0].spec.control;
    let w = &results.reports.last().ok_or("no reports")?.wells[0];
    if w.mode != ControlMode::Bhp {
        return Err(format!("well stayed on {:?}", w.mode));
    }
    let switched = results
        .control_events
        .iter()
        .any(|(_, e)| e.switch.from == ControlMode::Rate && e.switch.to == ControlMode::Bhp);
    if !switched {
        return Err("switch not logged".into());
    }
    let dp = (w.bhp - control.bhp_limit).abs();
    if dp >= 1e-6 * control.bhp_limit {
        return Err(format!("bhp {} off the limit {} by {dp}", w.bhp, control.bhp_limit));
    }
    let rate = w.production()[1];
    if rate > control.rate_target {
        return Err(format!("oil rate {rate} above target {}", control.rate_target));
    }
    Ok(format!(
        "switched to BHP; |bhp - limit| = {dp:.1e} Pa, rate at {:.1}% of target",
        100.0 * rate / control.rate_target
    ))
}

fn mutate(rng: &mut StdRng, text: &str) -> String {
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let edits = rng.gen_range(1..=3);
    for _ in 0..edits {
        let l = rng.gen_range(0..lines.len());
        let line = lines[l].clone();
        let pos = if line.is_empty() { 0 } else { rng.gen_range(0..=line.len()) };
        let pos = (0..=pos).rev().find(|&p| line.is_char_boundary(p)).unwrap_or(0);
        const JUNK: &[&str] = &["/", "*", "'", "3*", "0*", "-*", "1e999", "x", "\"", "--", "999999999*1", "'a", "é", "\t", "INCLUDE", "END"];
        match rng.gen_range(0..8) {
            0 => {
                lines.remove(l);
                if lines.is_empty() {
                    lines.push(String::new());
                }
            }
            1 => lines.insert(l, line),
            2 => {
                let mut s = line;
                s.insert_str(pos, JUNK[rng.gen_range(0..JUNK.len())]);
                lines[l] = s;
            }
            3 => {
                let mut s = line;
                s.truncate(pos);
                lines[l] = s;
            }
            4 => {
                let other = rng.gen_range(0..lines.len());
                lines.swap(l, other);
            }
            5 => lines[l] = line.replace('/', ""),
            6 => {
                let mut s = line;
                let c = (rng.gen_range(0x20u8..0x7f)) as char;
                s.insert(pos, c);
                lines[l] = s;
            }
            _ => lines[l] = line.to_lowercase(),
        }
    }
    lines.join("\n")
}

pub fn parser_robustness() -> Result<String, String> {
    let reg = Registry::bundled();
    let path = deck_path("SPE1.DATA");
    let parsed = parse_file(&path, &reg, ParseOptions::default()).map_err(|e| e.to_string())?;
    let pretty = parsed.deck.pretty(&reg);
    let again = parse_str(&pretty, "SPE1.pretty", &reg, &MemoryResolver::default(), ParseOptions::default())
        .map_err(|e| format!("re-parse: {e}"))?;
    if again.deck != parsed.deck {
        return Err("round trip changed the deck".into());
    }
    if again.deck.pretty(&reg) != pretty {
        return Err("pretty printing is not stable".into());
    }

    let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
    let mut rng = StdRng::seed_from_u64(10);
    let (mut accepted, mut rejected) = (0, 0);
    for case in 0..1000 {
        let mutated = mutate(&mut rng, &text);
        let n_lines = mutated.lines().count().max(1);
        let outcome = catch_unwind(AssertUnwindSafe(|| {
            parse_str(&mutated, "FUZZ.DATA", &reg, &MemoryResolver::default(), ParseOptions::default())
                .map(|p| build_case(&p.deck, &reg).map(|_| ()).map_err(|e| (e.location.line, e.to_string())))
                .map_err(|e| (e.location.line, e.to_string()))
        }))
        .map_err(|_| format!("mutation {case} panicked:\n{mutated}"))?;
        let located = |line: usize, msg: &str| -> Result<(), String> {
            if line == 0 || line > n_lines + 1 || !msg.starts_with("FUZZ.DATA:") {
                return Err(format!("mutation {case}: unlocated diagnostic {msg:?}"));
            }
            Ok(())
        };
        match outcome {
            Ok(Ok(())) => accepted += 1,
            Ok(Err((line, msg))) | Err((line, msg)) => {
                located(line, &msg)?;
                rejected += 1;
            }
        }
    }

    let golden = std::fs::read_to_string(golden_path("defaults.DATA")).map_err(|e| e.to_string())?;
    let expected = std::fs::read_to_string(golden_path("defaults.expanded")).map_err(|e| e.to_string())?;
    let deck = parse_str(&golden, "defaults.DATA", &reg, &MemoryResolver::default(), ParseOptions::default())
        .map_err(|e| e.to_string())?;
    if deck.deck.pretty(&reg) != expected {
        return Err(format!("defaults/repeat expansion differs:\n{}", deck.deck.pretty(&reg)));
    }
    let dump = load_case("MINI.DATA").summary_dump();
    let expected = std::fs::read_to_string(golden_path("MINI.dump")).map_err(|e| e.to_string())?;
    if dump != expected {
        return Err(format!("resolved defaults differ:\n{dump}"));
    }
    Ok(format!(
        "round trip identical; 1000 mutations: {accepted} accepted, {rejected} rejected with located errors; goldens match"
    ))
}

pub fn determinism() -> Result<String, String> {
    let deck = deck_path("SPE1.DATA");
    let mut outputs = Vec::new();
    for sync in [true, true, false] {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut args = vec!["blackoil".into(), deck.clone().into_os_string(), "--output-dir".into(), dir.path().into()];
        if sync {
            args.push("--sync-output".into());
        }
        let code = blackoil::cli::main_with(args);
        if code != blackoil::cli::EXIT_OK {
            return Err(format!("run exited with {code}"));
        }
        outputs.push(std::fs::read(dir.path().join("SPE1.csv")).map_err(|e| e.to_string())?);
    }
    if outputs[0] != outputs[1] {
        return Err("two synchronous runs differ".into());
    }
    if outputs[0] != outputs[2] {
        return Err("background output differs from synchronous output".into());
    }
    Ok(format!("summary CSVs byte-identical ({} bytes)", outputs[0].len()))
}
