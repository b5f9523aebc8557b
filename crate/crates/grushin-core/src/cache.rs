//! Binary on-disk cache of eigen systems, enabled by `GRUSHIN_CACHE_DIR`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::potentials::Potential;
use crate::sturm::{eigen_system, Cutoff, EigenPair, EigenSystem, Grid, SolverOptions};

const MAGIC: &[u8; 8] = b"GRSHSYS1";

pub const CACHE_ENV: &str = "GRUSHIN_CACHE_DIR";

/// Key from the potential hash, `τ`, the cutoff and the solver tolerances.
pub fn cache_key(v: &Potential, tau: f64, cutoff: Cutoff, opts: &SolverOptions) -> String {
    let mut h = Sha256::new();
    h.update(v.hash_hex().as_bytes());
    h.update(tau.to_bits().to_le_bytes());
    match cutoff {
        Cutoff::Count(n) => h.update(format!("N{n}").as_bytes()),
        Cutoff::Energy(e) => h.update(format!("E{:x}", e.to_bits()).as_bytes()),
    }
    h.update(opts.fingerprint().as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn write_vec(w: &mut impl Write, v: &[f64]) -> std::io::Result<()> {
    w.write_u64::<LittleEndian>(v.len() as u64)?;
    for x in v {
        w.write_f64::<LittleEndian>(*x)?;
    }
    Ok(())
}

fn read_vec(r: &mut impl Read) -> std::io::Result<Vec<f64>> {
    let n = r.read_u64::<LittleEndian>()? as usize;
    (0..n).map(|_| r.read_f64::<LittleEndian>()).collect()
}

pub fn save(sys: &EigenSystem, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(MAGIC)?;
        let g = &sys.grid;
        write_vec(&mut w, &g.nodes)?;
        write_vec(&mut w, &g.weights)?;
        w.write_u64::<LittleEndian>(g.zero as u64)?;
        w.write_u64::<LittleEndian>(g.breaks.len() as u64)?;
        for b in &g.breaks {
            w.write_u64::<LittleEndian>(*b as u64)?;
        }
        w.write_f64::<LittleEndian>(g.x_max_left)?;
        w.write_f64::<LittleEndian>(g.x_max_right)?;
        w.write_f64::<LittleEndian>(sys.e_max)?;
        w.write_u64::<LittleEndian>(sys.pairs.len() as u64)?;
        for p in &sys.pairs {
            w.write_u64::<LittleEndian>(p.n as u64)?;
            w.write_f64::<LittleEndian>(p.e)?;
            w.write_f64::<LittleEndian>(p.mismatch)?;
            write_vec(&mut w, &p.psi)?;
            write_vec(&mut w, &p.psi_prime)?;
        }
        w.flush()?;
    }
    std::fs::rename(tmp, path)?;
    Ok(())
}

pub fn load(v: &Potential, tau: f64, path: &Path) -> Result<EigenSystem> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Config(format!("{} is not an eigen-system cache file", path.display())));
    }
    let nodes = read_vec(&mut r)?;
    let weights = read_vec(&mut r)?;
    let zero = r.read_u64::<LittleEndian>()? as usize;
    let nb = r.read_u64::<LittleEndian>()? as usize;
    let breaks = (0..nb).map(|_| r.read_u64::<LittleEndian>().map(|b| b as usize)).collect::<std::io::Result<_>>()?;
    let x_max_left = r.read_f64::<LittleEndian>()?;
    let x_max_right = r.read_f64::<LittleEndian>()?;
    let e_max = r.read_f64::<LittleEndian>()?;
    let np = r.read_u64::<LittleEndian>()? as usize;
    let mut pairs = Vec::with_capacity(np);
    for _ in 0..np {
        let n = r.read_u64::<LittleEndian>()? as usize;
        let e = r.read_f64::<LittleEndian>()?;
        let mismatch = r.read_f64::<LittleEndian>()?;
        let psi = read_vec(&mut r)?;
        let psi_prime = read_vec(&mut r)?;
        pairs.push(EigenPair { n, e, psi, psi_prime, mismatch });
    }
    let grid = Grid { nodes, weights, zero, breaks, x_max_left, x_max_right };
    Ok(EigenSystem { potential: v.clone(), tau, scaled: v.scale(tau)?, grid: Arc::new(grid), pairs, e_max })
}

/// Cache directory from the environment, if set.
pub fn cache_dir() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV).filter(|s| !s.is_empty()).map(PathBuf::from)
}

/// `eigen_system` backed by the cache in `dir` (or the environment default).
pub fn eigen_system_cached(
    v: &Potential,
    tau: f64,
    cutoff: Cutoff,
    opts: &SolverOptions,
    dir: Option<&Path>,
) -> Result<EigenSystem> {
    let dir = match dir.map(Path::to_path_buf).or_else(cache_dir) {
        Some(d) => d,
        None => return eigen_system(v, tau, cutoff, opts),
    };
    std::fs::create_dir_all(&dir)?;
    let path = dir.join(format!("{}.bin", cache_key(v, tau, cutoff, opts)));
    if path.exists() {
        if let Ok(sys) = load(v, tau, &path) {
            return Ok(sys);
        }
    }
    let sys = eigen_system(v, tau, cutoff, opts)?;
    save(&sys, &path)?;
    Ok(sys)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let v = Potential::two_power(1.0, 4.0);
        let o = SolverOptions::default();
        let a = eigen_system_cached(&v, 2.0, Cutoff::Count(6), &o, Some(dir.path())).unwrap();
        let b = eigen_system_cached(&v, 2.0, Cutoff::Count(6), &o, Some(dir.path())).unwrap();
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        assert_eq!(a.grid.nodes, b.grid.nodes);
        for (p, q) in a.pairs.iter().zip(&b.pairs) {
            assert_eq!(p.e.to_bits(), q.e.to_bits());
            assert_eq!(p.psi, q.psi);
            assert_eq!(p.psi_prime, q.psi_prime);
        }
        let other = cache_key(&v, 2.0, Cutoff::Count(7), &o);
        assert_ne!(other, cache_key(&v, 2.0, Cutoff::Count(6), &o));
    }
}
