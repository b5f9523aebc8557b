use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use grushin_core::grushin::KernelOptions;
use grushin_core::multipliers::Multiplier;
use grushin_core::potentials::{suite, Potential, PotentialSpec};
use grushin_core::sturm::SolverOptions;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// JSON run configuration; every field has a default.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub potentials: Vec<PotentialSpec>,
    pub solver: SolverOptions,
    /// Eigen-system size for `eigensolve` and `matrices`.
    pub n_states: usize,
    /// Optional energy cutoff for `eigensolve`; overrides `n_states` when set.
    pub e_max: Option<f64>,
    pub multipliers: Vec<String>,
    pub thetas: Vec<f64>,
    pub r_grid: Vec<f64>,
    pub xprimes: Vec<f64>,
    pub kernel: KernelOptions,
    /// Run the dyadic Plancherel cross-validation at `r = 1`, `x' = 0`.
    pub plancherel_identity: bool,
    /// Also measure `l1_norm` at every `(r, x')`.
    pub l1: bool,
    pub geometry_samples: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            potentials: vec![PotentialSpec::Power { d: 2.0 }],
            solver: SolverOptions::default(),
            n_states: 64,
            e_max: None,
            multipliers: vec!["bump".into()],
            thetas: vec![0.0, 0.25, 0.4],
            r_grid: (-3..=3).map(|k| 2f64.powi(k)).collect(),
            xprimes: vec![0.0, 0.5, 2.0],
            kernel: KernelOptions::default(),
            plancherel_identity: true,
            l1: false,
            geometry_samples: 2000,
            seed: 7,
            out_dir: None,
        }
    }
}

/// Named potential lists selectable with `--suite`.
pub fn named_suite(name: &str) -> Result<Vec<PotentialSpec>> {
    Ok(match name {
        "standard" => suite().iter().map(|v| v.spec().clone()).collect(),
        "harmonic" => vec![PotentialSpec::Power { d: 2.0 }],
        "airy" => vec![PotentialSpec::Power { d: 1.0 }],
        "plancherel" => vec![PotentialSpec::Power { d: 2.0 }, PotentialSpec::Power { d: 4.0 }],
        "empty" => vec![],
        _ => bail!("unknown suite {name:?}; expected standard, harmonic, airy, plancherel or empty"),
    })
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.solver;
        if !(s.rtol > 0.0 && s.atol > 0.0 && s.tol_e > 0.0) {
            bail!("solver tolerances must be positive");
        }
        if self.n_states == 0 {
            bail!("n_states must be at least 1");
        }
        if let Some(e) = self.e_max {
            if !(e > 0.0) {
                bail!("e_max must be positive");
            }
        }
        if let Some(t) = self.thetas.iter().find(|t| !(0.0..0.5).contains(*t)) {
            bail!("theta {t} outside [0, 1/2)");
        }
        if self.r_grid.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            bail!("r_grid entries must be positive");
        }
        if !(self.kernel.tail_tol > 0.0 && self.kernel.xi_min_ratio > 0.0 && self.kernel.xi_min_ratio < 1.0) {
            bail!("kernel tolerances must be positive with xi_min_ratio < 1");
        }
        self.multiplier_list()?;
        self.potential_list()?;
        Ok(())
    }

    pub fn potential_list(&self) -> Result<Vec<Potential>> {
        self.potentials
            .iter()
            .map(|s| Potential::new(s.clone()).with_context(|| format!("potential {s:?}")))
            .collect()
    }

    pub fn multiplier_list(&self) -> Result<Vec<Multiplier>> {
        self.multipliers.iter().map(|id| Multiplier::from_id(id).with_context(|| format!("multiplier {id:?}"))).collect()
    }

    /// SHA-256 of the canonical JSON form, without the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}
