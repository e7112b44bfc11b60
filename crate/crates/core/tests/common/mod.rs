#![allow(dead_code)]

pub mod criteria;

use std::path::{Path, PathBuf};

use blackoil::deck::{build_case, parse_file, parse_str, MemoryResolver, ParseOptions, Registry, SimCase};
use blackoil::grid::{CartesianSpec, Grid, RockProps};
use blackoil::model::{AssembledSystem, PrimaryVariables, Reservoir, XMeaning};
use blackoil::pvt::{FluidSystem, LiveOilPvt, LiveOilRecord, OilPvt, SurfaceDensities, TabulatedPvt, WaterPvt};
use blackoil::satfunc::SatTables;
use blackoil::units::{BAR, CENTIPOISE, MILLIDARCY};
use rand::Rng;

pub fn deck_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("decks").join(name)
}

pub fn golden_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden").join(name)
}

pub fn load_case(name: &str) -> SimCase {
    let reg = Registry::bundled();
    let parsed = parse_file(&deck_path(name), &reg, ParseOptions::default()).expect("bundled deck parses");
    build_case(&parsed.deck, &reg).expect("bundled deck builds")
}

pub fn case_from_text(text: &str) -> Result<SimCase, String> {
    let reg = Registry::bundled();
    let parsed = parse_str(text, "CASE.DATA", &reg, &MemoryResolver::default(), ParseOptions::default())
        .map_err(|e| e.to_string())?;
    build_case(&parsed.deck, &reg).map_err(|e| e.to_string())
}

/// Live oil with four saturated records, each with one undersaturated row.
pub fn live_fluid() -> FluidSystem {
    let rec = |rs: f64, p: f64, b: f64, mu: f64| LiveOilRecord {
        rs,
        rows: vec![
            [p * BAR, b, mu * CENTIPOISE],
            [(p + 200.0) * BAR, b * 0.97, mu * 1.2 * CENTIPOISE],
        ],
    };
    FluidSystem {
        water: WaterPvt::new(200.0 * BAR, 1.02, 4e-5 / BAR, 0.5 * CENTIPOISE, 0.0).unwrap(),
        oil: OilPvt::Live(
            LiveOilPvt::new(&[
                rec(10.0, 20.0, 1.05, 2.0),
                rec(60.0, 100.0, 1.15, 1.4),
                rec(120.0, 200.0, 1.3, 1.0),
                rec(180.0, 300.0, 1.45, 0.8),
            ])
            .unwrap(),
        ),
        gas: TabulatedPvt::new(
            "PVDG",
            &[
                [20.0 * BAR, 0.06, 0.012 * CENTIPOISE],
                [150.0 * BAR, 0.008, 0.018 * CENTIPOISE],
                [400.0 * BAR, 0.0035, 0.03 * CENTIPOISE],
            ],
        )
        .unwrap(),
        densities: SurfaceDensities {
            water: 1020.0,
            oil: 850.0,
            gas: 0.9,
        },
    }
}

pub fn sat_tables() -> SatTables {
    SatTables::new(
        &[
            [0.2, 0.0, 1.0, 0.4 * BAR],
            [0.5, 0.2, 0.3, 0.1 * BAR],
            [0.8, 0.6, 0.0, 0.02 * BAR],
            [1.0, 1.0, 0.0, 0.0],
        ],
        &[
            [0.0, 0.0, 1.0, 0.0],
            [0.3, 0.2, 0.3, 0.05 * BAR],
            [0.8, 0.8, 0.0, 0.2 * BAR],
        ],
    )
    .unwrap()
}

/// Uniform 50 x 40 x 5 m cells, anisotropic permeability, compressible rock.
pub fn reservoir(dims: [usize; 3]) -> Reservoir {
    let spec = CartesianSpec::uniform(dims, [50.0, 40.0, 5.0], 2000.0);
    let n = dims.iter().product();
    let perm = vec![[200.0 * MILLIDARCY, 150.0 * MILLIDARCY, 20.0 * MILLIDARCY]; n];
    let grid = Grid::build_cartesian(&spec, &perm).unwrap();
    let rock = RockProps::new(perm, vec![0.25; n], 5e-5 / BAR, 200.0 * BAR).unwrap();
    Reservoir::new(grid, rock, live_fluid(), sat_tables())
}

pub fn random_state(rng: &mut impl Rng, res: &Reservoir, undersaturated: bool) -> PrimaryVariables {
    let po = rng.gen_range(120.0..280.0) * BAR;
    let sw = rng.gen_range(0.22..0.7);
    if undersaturated {
        let rs: f64 = res.fluid.oil.saturated_rs(po);
        PrimaryVariables::new(po, sw, rs * rng.gen_range(0.3..0.95), XMeaning::Rgo)
    } else {
        PrimaryVariables::new(po, sw, rng.gen_range(0.02..(0.95 - sw).min(0.6)), XMeaning::Sg)
    }
}

pub fn residual(res: &Reservoir, pvs: &[PrimaryVariables], acc0: &[[f64; 3]], dt: f64) -> Vec<f64> {
    let states: Vec<_> = pvs.iter().map(|&p| res.cell_state(p)).collect();
    let mut sys = AssembledSystem::new(res).unwrap();
    res.assemble(&states, acc0, dt, &mut sys);
    sys.residual.to_flat()
}

/// Finite-difference step for a variable of magnitude `x`.
pub fn fd_step(x: f64) -> f64 {
    1e-5 * x.abs().max(1.0)
}

/// True if `ad` agrees with one of the central, forward or backward
/// differences. One-sided quotients cover table nodes and other kinks.
/// Differences below the rounding noise of the quotient are not resolved,
/// so that noise is added to `tol`.
pub fn matches_fd(ad: f64, f0: f64, fp: f64, fm: f64, h: f64, tol: f64) -> bool {
    let noise = 8.0 * f64::EPSILON * f0.abs().max(fp.abs()).max(fm.abs()) / h;
    let central = (fp - fm) / (2.0 * h);
    let forward = (fp - f0) / h;
    let backward = (f0 - fm) / h;
    [central, forward, backward].iter().any(|fd| (fd - ad).abs() <= tol + noise)
}

const SYNTHETIC_PROPS: &str = "
PROPS
PVTW
  4017.55 1.038 3.22E-6 0.318 0.0 /
ROCK
  14.7 3E-6 /
SWOF
  0.12 0      1     4.0
  0.3  0.02   0.6   1.5
  0.5  0.1    0.2   0.5
  0.8  0.4    0.0   0.1
  1.0  1.0    0.0   0.0 /
SGOF
  0    0      1     0
  0.05 0.005  0.8   0.1
  0.3  0.2    0.2   0.3
  0.88 0.9    0     1.0 /
DENSITY
  53.66 64.49 0.0533 /
PVDG
  14.7   166.666 0.008
  1014.7 3.197   0.014
  2014.7 1.614   0.0189
  3014.7 1.080   0.0228
  4014.7 0.811   0.0268
  5014.7 0.649   0.0309
  9014.7 0.386   0.047 /
PVTO
  0.001 14.7   1.062 1.04 /
  0.371 1014.7 1.295 0.83 /
  0.636 2014.7 1.435 0.695 /
  0.93  3014.7 1.565 0.594 /
  1.270 4014.7 1.695 0.51
        9014.7 1.579 0.74 /
  1.618 5014.7 1.827 0.449
        9014.7 1.726 0.605 /
/
";

/// A three-phase live-oil deck in field units on a uniform box with
/// capillary pressure in both tables.
pub fn synthetic_deck(dims: [usize; 3], size_ft: [f64; 3], top_ft: f64, perm_md: f64, solution: &str, schedule: &str) -> String {
    let n: usize = dims.iter().product();
    let [nx, ny, nz] = dims;
    let [dx, dy, dz] = size_ft;
    format!(
        "RUNSPEC
DIMENS
  {nx} {ny} {nz} /
OIL
WATER
GAS
DISGAS
FIELD
GRID
DX
  {n}*{dx} /
DY
  {n}*{dy} /
DZ
  {n}*{dz} /
TOPS
  {nxy}*{top_ft} /
PORO
  {n}*0.2 /
PERMX
  {n}*{perm_md} /
PERMZ
  {n}*{kz} /
{SYNTHETIC_PROPS}
SOLUTION
{solution}
SCHEDULE
{schedule}
",
        nxy = nx * ny,
        kz = perm_md / 10.0,
    )
}
