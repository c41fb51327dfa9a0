//! Turning configuration tables into systems, grids and initial data.

use anyhow::{anyhow, bail, Context, Result};
use ndarray::Array2;
use threescale_core::grid::{GridSpec, SpectralState, Transforms};
use threescale_core::limit::{directional_symbols, directional_system};
use threescale_core::ode::{ode_system, transported_rotation_system};
use threescale_core::solver::SystemSpec;
use threescale_core::symbols::{build_wellprepared, load_symbol_file, OperatorSymbol, WellPrepOptions};

use crate::config::{ComponentConfig, InitialConfig, LoadedConfig, Scale, SystemConfig, Term};

pub fn grid(cfg: &LoadedConfig) -> Result<GridSpec> {
    let g = cfg.config.grid.ok_or_else(|| anyhow!("missing [grid]"))?;
    Ok(GridSpec::new(g.d, g.n)?)
}

fn matrix(rows: &[Vec<f64>], n: usize, what: &str) -> Result<Array2<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        bail!("{what} must be {n}x{n}");
    }
    Ok(Array2::from_shape_fn((n, n), |(i, j)| rows[i][j]))
}

/// The symbols `(𝓛, 𝓜)` of the configured system.
pub fn symbols(cfg: &LoadedConfig) -> Result<(OperatorSymbol, OperatorSymbol)> {
    let sc = cfg.config.system.as_ref().ok_or_else(|| anyhow!("missing [system]"))?;
    Ok(match sc {
        SystemConfig::Directional => directional_symbols(),
        SystemConfig::Rotation { .. } => {
            let sys = ode_system(1.0, 1.0);
            (sys.l, sys.m)
        }
        SystemConfig::Symbols { file, .. } => {
            let path = cfg.resolve(file);
            load_symbol_file(&path).with_context(|| format!("symbol file {}", path.display()))?
        }
    })
}

/// The configured system at given `(ε, δ)`.
pub fn system(cfg: &LoadedConfig, eps: f64, delta: f64) -> Result<SystemSpec> {
    let sc = cfg.config.system.as_ref().ok_or_else(|| anyhow!("missing [system]"))?;
    Ok(match sc {
        SystemConfig::Directional => directional_system(eps, delta),
        SystemConfig::Rotation { transport: false } => ode_system(eps, delta),
        SystemConfig::Rotation { transport: true } => transported_rotation_system(eps, delta),
        SystemConfig::Symbols { file, a0, a } => {
            let path = cfg.resolve(file);
            let (l, m) = load_symbol_file(&path).with_context(|| format!("symbol file {}", path.display()))?;
            let n = l.n;
            let a0 = match a0 {
                Some(rows) => matrix(rows, n, "a0")?,
                None => Array2::eye(n),
            };
            let a = match a {
                Some(list) => {
                    if list.len() != l.d {
                        bail!("need {} transport matrices, got {}", l.d, list.len());
                    }
                    list.iter().enumerate().map(|(j, rows)| matrix(rows, n, &format!("a[{j}]"))).collect::<Result<Vec<_>>>()?
                }
                None => vec![Array2::zeros((n, n)); l.d],
            };
            SystemSpec::linear(a0, a, l, m, eps, delta)
        }
    })
}

fn sample_terms(tr: &Transforms, terms: &[Term], constant: f64) -> Result<SpectralState> {
    let grid = tr.grid;
    for t in terms {
        if t.k.len() != grid.d {
            bail!("term wavevector {:?} does not match dimension {}", t.k, grid.d);
        }
    }
    let mut field = Array2::zeros((1, grid.num_points()));
    for p in 0..grid.num_points() {
        let x = grid.node(p);
        field[[0, p]] = constant + terms.iter().map(|t| t.eval(&x)).sum::<f64>();
    }
    Ok(tr.to_spectral(&field)?)
}

fn components(tr: &Transforms, comps: &[ComponentConfig], sys: &SystemSpec) -> Result<SpectralState> {
    if comps.len() != sys.n {
        bail!("{} components given, system has {}", comps.len(), sys.n);
    }
    let mut state = SpectralState::zeros(sys.n, &tr.grid);
    for (c, comp) in comps.iter().enumerate() {
        let s = sample_terms(tr, &comp.terms, comp.constant)?;
        let scale = match comp.scale {
            Scale::One => 1.0,
            Scale::Delta => sys.delta,
            Scale::Eps => sys.eps,
        };
        state.coeffs.row_mut(c).assign(&s.coeffs.row(0).mapv(|z| z * scale));
    }
    Ok(state)
}

/// Initial data at `(ε, δ)` and the `ε`-independent limit datum.
pub struct InitialData {
    pub u0: SpectralState,
    pub u00: SpectralState,
    /// Spectral coefficients of the scalar profile `f` for curl seeds.
    pub profile: Option<SpectralState>,
}

pub fn initial(cfg: &LoadedConfig, sys: &SystemSpec, grid: &GridSpec) -> Result<InitialData> {
    let ic = cfg.config.initial.as_ref().ok_or_else(|| anyhow!("missing [initial]"))?;
    let tr = Transforms::new(*grid);
    let opts = WellPrepOptions { tau_rank: cfg.config.tolerances.tau_rank, ..Default::default() };
    match ic {
        InitialConfig::Curl { terms, order, correction } => {
            if grid.d != 2 || sys.n != 2 {
                bail!("curl seeds need a two-component system in two dimensions");
            }
            let f = sample_terms(&tr, terms, 0.0)?;
            let fx = tr.derivative(&f, 0);
            let fy = tr.derivative(&f, 1);
            let mut seed = SpectralState::zeros(2, grid);
            seed.coeffs.row_mut(0).assign(&fy.coeffs.row(0).mapv(|z| -z));
            seed.coeffs.row_mut(1).assign(&fx.coeffs.row(0));
            let corr = if correction.is_empty() { None } else { Some(components(&tr, correction, sys)?) };
            let wp = build_wellprepared(&sys.l, &sys.m, grid, *order, &seed, sys.delta, sys.eps, corr.as_ref(), &opts)?;
            if !wp.truncated.is_empty() {
                log::info!("well-prepared chain truncated on {} modes", wp.truncated.len());
            }
            Ok(InitialData { u0: wp.u0, u00: wp.chain[0].clone(), profile: Some(f) })
        }
        InitialConfig::Components { components, wellprepared, order } => {
            if components.len() != sys.n {
                bail!("[initial] has {} components, system has {}", components.len(), sys.n);
            }
            let state = self::components(&tr, components, sys)?;
            if *wellprepared {
                let wp = build_wellprepared(&sys.l, &sys.m, grid, *order, &state, sys.delta, sys.eps, None, &opts)?;
                Ok(InitialData { u0: wp.u0, u00: wp.chain[0].clone(), profile: None })
            } else {
                Ok(InitialData { u00: state.clone(), u0: state, profile: None })
            }
        }
    }
}
