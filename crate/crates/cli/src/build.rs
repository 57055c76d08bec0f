//! Turns a validated configuration into solver inputs.

use std::sync::Arc;

use anyhow::{bail, Context, Result};
use ospde_core::coefficients::{Lipschitz, SpaceTimeFn};
use ospde_core::expr::{Expr, Vars};
use ospde_core::grid::build_grid;
use ospde_core::linalg::PgsSettings;
use ospde_core::noise::kl_build;
use ospde_core::operator::{CoefficientKind, EllipticityBounds, TabulatedCoefficient};
use ospde_core::stepper::{Boundary, ItoProcessBoundary};
use ospde_core::{
    CoefficientField, CovarianceModel, GridField, Kernel, NonlinearTerm, ObstacleSpec, Role, Scheme, SpdeProblem,
    TimeGrid,
};

use crate::config::{
    BoundaryKind, ExperimentConfig, KernelKind, Method, ObstacleKind, OperatorKind, TermConfig, TermKind,
};

fn expr(src: &str) -> Result<Expr> {
    Expr::parse(src).with_context(|| format!("expression {src:?}"))
}

fn vars(t: f64, x: &[f64]) -> Vars {
    Vars { t, x: [x[0], x.get(1).copied().unwrap_or(0.0)], ..Vars::default() }
}

/// `(t, x) -> e(t, x)`.
pub fn space_time(e: Expr) -> SpaceTimeFn {
    Arc::new(move |t, x| e.eval(&vars(t, x)))
}

fn read_rows(path: &str) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read table {path}"))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        match parsed {
            Ok(r) => rows.push(r),
            // a header line
            Err(_) if rows.is_empty() && i == 0 => {}
            Err(e) => bail!("{path}, line {}: {e}", i + 1),
        }
    }
    Ok(rows)
}

fn tabulated_operator(path: &str, dim: usize) -> Result<CoefficientField> {
    let mut table = Vec::new();
    let (mut lower, mut upper, mut entry) = (f64::INFINITY, 0.0f64, 0.0f64);
    for (i, r) in read_rows(path)?.into_iter().enumerate() {
        if r.len() != 7 {
            bail!("{path}, row {}: expected t,x,y,a11,a12,a21,a22", i + 1);
        }
        let m = [[r[3], r[4]], [r[5], r[6]]];
        let (lo, hi) = if dim == 1 {
            (m[0][0], m[0][0])
        } else {
            let mean = 0.5 * (m[0][0] + m[1][1]);
            let off = 0.5 * (m[0][1] + m[1][0]);
            let rad = (0.25 * (m[0][0] - m[1][1]).powi(2) + off * off).sqrt();
            (mean - rad, mean + rad)
        };
        lower = lower.min(lo);
        upper = upper.max(hi);
        entry = entry.max(m.iter().flatten().take(if dim == 1 { 1 } else { 4 }).fold(0.0, |a, v| a.max(v.abs())));
        table.push((r[0], [r[1], r[2]], m));
    }
    let kind = CoefficientKind::Tabulated(TabulatedCoefficient::new(table)?);
    Ok(CoefficientField::new(kind, EllipticityBounds { lower, upper, entry })?)
}

fn tabulated_kernel(path: &str) -> Result<Kernel> {
    Ok(Kernel::Tabulated(read_rows(path)?.into_iter().flatten().collect()))
}

/// Builds problems of one configuration on varying grids.
pub struct ProblemBuilder {
    cfg: ExperimentConfig,
    a: CoefficientField,
    kernel: Option<Kernel>,
}

impl ProblemBuilder {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let dim = cfg.grid.dim;
        let a = match cfg.operator.kind {
            OperatorKind::Identity => CoefficientField::identity(),
            OperatorKind::ScalarSin => CoefficientField::scalar_sin(&cfg.grid.extents),
            OperatorKind::Anisotropic => CoefficientField::anisotropic(dim, cfg.operator.matrix)?,
            OperatorKind::Tabulated => tabulated_operator(&cfg.operator.table, dim)?,
        };
        let n = &cfg.noise;
        let kernel = match n.kernel {
            KernelKind::None => None,
            KernelKind::BrownianBridge => Some(Kernel::BrownianBridge),
            KernelKind::Exponential => Some(Kernel::Exponential { length: n.length }),
            KernelKind::RankOne => {
                let e = expr(&n.profile)?;
                Some(Kernel::RankOne(Arc::new(move |x: &[f64]| e.eval(&vars(0.0, x)))))
            }
            KernelKind::Tabulated => Some(tabulated_kernel(&n.table)?),
        };
        Ok(Self { cfg: cfg.clone(), a, kernel })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn scheme(&self) -> Scheme {
        match self.cfg.scheme.method {
            Method::Unconstrained => Scheme::Unconstrained,
            Method::Penalized => Scheme::Penalized { n: self.cfg.scheme.penalty },
            Method::Projected => Scheme::Projected,
        }
    }

    pub fn coefficient(&self) -> &CoefficientField {
        &self.a
    }

    /// The configured problem.
    pub fn base(&self) -> Result<SpdeProblem> {
        self.problem(&self.cfg.grid.nodes, self.cfg.grid.steps, self.cfg.noise.substeps)
    }

    /// Mesh width and time step halved.
    pub fn refined(&self) -> Result<SpdeProblem> {
        let nodes: Vec<usize> = self.cfg.grid.nodes.iter().map(|n| 2 * n - 1).collect();
        self.problem(&nodes, 2 * self.cfg.grid.steps, self.cfg.noise.substeps)
    }

    pub fn problem(&self, nodes: &[usize], steps: usize, substeps: u32) -> Result<SpdeProblem> {
        let c = &self.cfg;
        let grid = build_grid(c.grid.dim, &c.grid.extents, nodes)?;
        let time = TimeGrid::new(c.grid.horizon, steps)?;
        let noise = match &self.kernel {
            None => CovarianceModel::none(),
            Some(k) => kl_build(k, &grid, c.noise.modes).context("building the noise model")?,
        };
        let boundary = match c.boundary.kind {
            BoundaryKind::Zero => Boundary::Zero,
            BoundaryKind::Ito => Boundary::Ito(ItoProcessBoundary::constant(c.boundary.m, c.boundary.b, c.boundary.sigma.clone())),
        };
        let m = match boundary {
            Boundary::Zero => 0.0,
            Boundary::Ito(ref b) => b.m,
        };
        let xi0 = expr(&c.initial.expr)?;
        let xi = GridField::new(
            (0..grid.node_count())
                .map(|i| if grid.is_boundary(i) { m } else { xi0.eval(&vars(0.0, grid.point(i))) })
                .collect(),
        );
        let dim = c.grid.dim;
        let f = term(&c.terms.f, Role::F, dim, &noise, grid.node_count())?;
        let g = term(&c.terms.g, Role::G, dim, &noise, grid.node_count())?;
        let h = term(&c.terms.h, Role::H, dim, &noise, grid.node_count())?;
        let obstacle = match c.obstacle.kind {
            ObstacleKind::None => None,
            ObstacleKind::Direct => {
                let e = expr(&c.obstacle.expr)?;
                let name = e.source().to_string();
                Some(ObstacleSpec::direct(name, move |t, x| e.eval(&vars(t, x))))
            }
            ObstacleKind::Dominated => Some(ObstacleSpec::Dominated {
                s0: space_time(expr(&c.obstacle.s0)?),
                f: term(&c.obstacle.f, Role::F, dim, &noise, grid.node_count())?,
                g: term(&c.obstacle.g, Role::G, dim, &noise, grid.node_count())?,
                h: term(&c.obstacle.h, Role::H, dim, &noise, grid.node_count())?,
                gap: c.obstacle.gap,
            }),
        };
        let pgs = PgsSettings {
            tolerance: c.scheme.lcp_tolerance,
            max_sweeps: c.scheme.lcp_max_sweeps,
            relaxation: c.scheme.lcp_relaxation,
        };
        let mut p = SpdeProblem::new(grid, time, self.a.clone(), xi, c.seed())
            .with_noise(noise)
            .with_f(f)
            .with_g(g)
            .with_h(h)
            .with_boundary(boundary)
            .with_substeps(substeps)
            .with_pgs(pgs);
        if let Some(o) = obstacle {
            p = p.with_obstacle(o);
        }
        p.validate().context("problem data")?;
        Ok(p)
    }
}

fn term(t: &TermConfig, role: Role, dim: usize, noise: &CovarianceModel, nodes: usize) -> Result<NonlinearTerm> {
    let lip = Lipschitz { c: t.lipschitz_c, z: t.lipschitz_z };
    let width = match role {
        Role::F => 1,
        Role::G => dim,
        Role::H => noise.truncation(),
    };
    Ok(match t.kind {
        TermKind::Zero => NonlinearTerm::zero(role, width),
        TermKind::Linear => NonlinearTerm::linear(role, dim, t.cy, t.cz),
        TermKind::Constant => NonlinearTerm::constant(role, t.values.clone()),
        TermKind::SinReaction => NonlinearTerm::sin_reaction(t.amplitude),
        TermKind::Expr => NonlinearTerm::from_exprs(role, t.exprs.iter().map(|s| expr(s)).collect::<Result<_>>()?, lip),
        TermKind::Additive => NonlinearTerm::additive_noise(noise, t.scale),
        TermKind::Multiplicative => {
            let ht = NonlinearTerm::from_exprs(Role::H, vec![expr(&t.htilde)?], lip);
            NonlinearTerm::multiplicative_htilde(noise, ht, nodes)?
        }
    })
}

/// `xi + c` at interior nodes; the boundary value is unchanged.
pub fn shift_xi(p: &SpdeProblem, c: f64) -> SpdeProblem {
    let mut q = p.clone();
    for &i in p.grid.interior_nodes() {
        q.xi.values_mut()[i] += c;
    }
    q
}

/// `f + c`.
pub fn shift_f(p: &SpdeProblem, c: f64) -> SpdeProblem {
    if c == 0.0 {
        return p.clone();
    }
    let f = p.f.clone();
    let name = format!("{} + {c}", f.name());
    let shifted = NonlinearTerm::new(name, Role::F, 1, f.lipschitz(), f.is_state_independent(), move |pt, out| {
        f.eval(pt, out);
        out[0] += c;
    });
    p.clone().with_f(shifted)
}

/// `S + c`.
pub fn shift_obstacle(p: &SpdeProblem, c: f64) -> SpdeProblem {
    let mut q = p.clone();
    q.obstacle = match &p.obstacle {
        None => None,
        Some(ObstacleSpec::Direct { name, s }) => {
            let s = Arc::clone(s);
            Some(ObstacleSpec::Direct { name: format!("{name} + {c}"), s: Arc::new(move |t, x| s(t, x) + c) })
        }
        Some(ObstacleSpec::Dominated { s0, f, g, h, gap }) => Some(ObstacleSpec::Dominated {
            s0: Arc::clone(s0),
            f: f.clone(),
            g: g.clone(),
            h: h.clone(),
            gap: gap - c,
        }),
    };
    q
}

/// `(t, x) -> 1` when `region(x) >= 0`.
pub fn region_indicator(src: &str) -> Result<impl Fn(&[f64]) -> bool> {
    let e = expr(src)?;
    Ok(move |x: &[f64]| e.eval(&vars(0.0, x)) >= -1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config_str;

    fn builder(extra: &str) -> ProblemBuilder {
        let text = format!("[run]\nseed = 3\n[grid]\nnodes = [9]\nsteps = 10\n{extra}");
        ProblemBuilder::new(&parse_config_str(&text, None).unwrap()).unwrap()
    }

    #[test]
    fn initial_condition_takes_the_boundary_value() {
        let b = builder("[initial]\nexpr = \"1 + x\"\n[boundary]\nkind = \"ito\"\nm = 2.0\n");
        let p = b.base().unwrap();
        assert_eq!(p.xi.values()[0], 2.0);
        assert_eq!(p.xi.values()[8], 2.0);
        assert!((p.xi.values()[4] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn refined_problem_halves_both_steps() {
        let b = builder("");
        let (p, r) = (b.base().unwrap(), b.refined().unwrap());
        assert_eq!(r.grid.nodes_per_axis(), &[17]);
        assert_eq!(r.time.steps(), 20);
        assert_eq!(p.seed, r.seed);
    }

    #[test]
    fn terms_have_the_solver_widths() {
        let b = builder(
            "[noise]\nkernel = \"exponential\"\nmodes = 3\n[terms.h]\nkind = \"multiplicative\"\nhtilde = \"0.5*y\"\nlipschitz_c = 0.5\nlipschitz_z = 0.5\n[terms.g]\nkind = \"linear\"\ncz = 0.1\n",
        );
        let p = b.base().unwrap();
        assert_eq!((p.f.width(), p.g.width(), p.h.width()), (1, 1, 3));
    }

    #[test]
    fn shifts_move_the_data_up() {
        let b = builder("[initial]\nexpr = \"sin(pi*x)\"\n[obstacle]\nkind = \"direct\"\nexpr = \"0.1*sin(pi*x)\"\n");
        let p = b.base().unwrap();
        let q = shift_obstacle(&shift_f(&shift_xi(&p, 0.1), 2.0), 0.05);
        assert_eq!(q.xi.values()[0], 0.0);
        assert!((q.xi.values()[4] - p.xi.values()[4] - 0.1).abs() < 1e-15);
        let x = [0.5];
        assert!((q.obstacle.as_ref().unwrap().initial(&x) - 0.15).abs() < 1e-15);
        let f = q.f.eval_field(0.0, &q.grid, p.xi.values(), &[0.0; 9]);
        assert!(f.iter().all(|&v| v == 2.0));
        q.validate().unwrap();
    }

    #[test]
    fn region_is_closed() {
        let r = region_indicator("0.25 - abs(x - 0.5)").unwrap();
        assert!(r(&[0.25]) && r(&[0.75]) && r(&[0.5]) && !r(&[0.2]));
    }

    #[test]
    fn tabulated_tables_load() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        std::fs::write(&a, "t,x,y,a11,a12,a21,a22\n0,0.5,0,2,0,0,2\n").unwrap();
        let k = dir.path().join("k.csv");
        let rows: Vec<String> = (0..7).map(|i| (0..7).map(|j| if i == j { "1" } else { "0" }).collect::<Vec<_>>().join(",")).collect();
        std::fs::write(&k, rows.join("\n")).unwrap();
        let text = format!(
            "[run]\nseed = 1\n[grid]\nnodes = [9]\n[operator]\nkind = \"tabulated\"\ntable = {:?}\n[noise]\nkernel = \"tabulated\"\ntable = {:?}\nmodes = 2\n",
            a.display().to_string(),
            k.display().to_string()
        );
        let b = ProblemBuilder::new(&parse_config_str(&text, None).unwrap()).unwrap();
        let p = b.base().unwrap();
        assert_eq!(p.a.bounds().lower, 2.0);
        assert_eq!(p.noise.truncation(), 2);
    }
}
