use std::io::Write;

use super::{alpha_of, beta_limit, ConjugatePair, Lagrangian};
use crate::Result;

pub const TABLE_HEADER: &str = "rho,f,fp,fpp,alpha,g,gp,beta";

/// One row of the Lagrangian table; undefined entries are `NaN`.
#[derive(Debug, Clone, Copy)]
pub struct TableRow {
    pub rho: f64,
    pub f: f64,
    pub fp: f64,
    pub fpp: f64,
    pub alpha: f64,
    pub g: f64,
    pub gp: f64,
    pub beta: f64,
}

/// Samples `l` (and its conjugate, and `beta` of the unsmoothed `base`) at
/// `rho = 0, step, 2 step, ... <= rho_max`. `g`, `g'` and `beta` are evaluated
/// with the same abscissa.
pub fn table_rows(
    l: &dyn Lagrangian,
    conj: &ConjugatePair,
    base: &dyn Lagrangian,
    base_conj: &ConjugatePair,
    s: f64,
    rho_max: f64,
    step: f64,
) -> Result<Vec<TableRow>> {
    let count = (rho_max / step + 1e-9).floor() as usize;
    (0..=count)
        .map(|k| {
            let rho = k as f64 * step;
            Ok(TableRow {
                rho,
                f: l.f(rho),
                fp: l.fp(rho),
                fpp: l.fpp(rho).unwrap_or(f64::NAN),
                alpha: alpha_of(l, rho).unwrap_or(f64::NAN),
                g: conj.g(rho)?,
                gp: conj.gp(rho)?,
                beta: beta_limit(base, base_conj, s, rho)?,
            })
        })
        .collect()
}

pub fn write_table<W: Write>(mut out: W, rows: &[TableRow]) -> Result<()> {
    writeln!(out, "{TABLE_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.rho, r.f, r.fp, r.fpp, r.alpha, r.g, r.gp, r.beta
        )?;
    }
    Ok(())
}
