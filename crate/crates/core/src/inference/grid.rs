use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::multi_start_fit;
use crate::data::BinaryDataMatrix;
use crate::error::{arg_err, Result};
use crate::model::{count_params, FitControl, ModelSpec, SlopeMode};

/// One fitted cell of a model-selection grid. Criterion fields are `None`
/// when every start failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub spec: ModelSpec,
    pub loglik: Option<f64>,
    pub k: usize,
    pub k_star: usize,
    pub bic: Option<f64>,
    pub bic_star: Option<f64>,
    pub eta: Vec<f64>,
    pub converged: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub rows: Vec<GridRow>,
    pub best_by_bic: Option<ModelSpec>,
    pub best_by_bic_star: Option<ModelSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    Loglik,
    Bic,
    BicStar,
}

impl Criterion {
    fn of(self, row: &GridRow) -> Option<f64> {
        match self {
            Criterion::Loglik => row.loglik,
            Criterion::Bic => row.bic,
            Criterion::BicStar => row.bic_star,
        }
    }
}

/// Specs visited by [`grid_search`], in output order. Common slopes are
/// skipped where they coincide with free slopes (G = 1) or are undefined (D = 0).
pub fn grid_specs(groups: &[usize], dims: &[usize], modes: &[SlopeMode]) -> Vec<ModelSpec> {
    let mut specs = Vec::new();
    for &g in groups {
        for &d in dims {
            let mut cell_modes: Vec<SlopeMode> = modes.to_vec();
            cell_modes.dedup();
            if d == 0 || g == 1 {
                cell_modes = vec![SlopeMode::Free];
            }
            for mode in cell_modes {
                let spec = ModelSpec::new(g, d, mode);
                if !specs.contains(&spec) {
                    specs.push(spec);
                }
            }
        }
    }
    specs
}

/// Multi-start fit of every `(G, D, mode)` combination. Failed cells are
/// recorded, not fatal.
pub fn grid_search(
    data: &BinaryDataMatrix,
    groups: &[usize],
    dims: &[usize],
    modes: &[SlopeMode],
    ctrl: &FitControl,
) -> Result<GridResult> {
    if groups.is_empty() || dims.is_empty() || modes.is_empty() {
        return arg_err("grid lists must be non-empty");
    }
    ctrl.validate()?;
    let specs = grid_specs(groups, dims, modes);
    for s in &specs {
        s.validate()?;
    }
    let rows: Vec<GridRow> = specs
        .par_iter()
        .map(|spec| {
            let (k, k_star) = count_params(spec, data.n_vars());
            match multi_start_fit(data, spec, ctrl) {
                Ok(res) => {
                    let r = res.best.report;
                    GridRow {
                        spec: *spec,
                        loglik: Some(r.loglik_gh),
                        k,
                        k_star,
                        bic: Some(r.bic),
                        bic_star: Some(r.bic_star),
                        eta: r.eta,
                        converged: r.converged,
                        warnings: r.warnings,
                    }
                }
                Err(e) => GridRow {
                    spec: *spec,
                    loglik: None,
                    k,
                    k_star,
                    bic: None,
                    bic_star: None,
                    eta: Vec::new(),
                    converged: false,
                    warnings: vec![e.to_string()],
                },
            }
        })
        .collect();
    Ok(GridResult {
        best_by_bic: best(&rows, Criterion::Bic),
        best_by_bic_star: best(&rows, Criterion::BicStar),
        rows,
    })
}

fn best(rows: &[GridRow], criterion: Criterion) -> Option<ModelSpec> {
    rows.iter()
        .filter(|r| r.converged)
        .filter_map(|r| criterion.of(r).map(|v| (v, r.spec)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, s)| s)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.4}"))
}

impl GridResult {
    pub fn row(&self, spec: &ModelSpec) -> Option<&GridRow> {
        self.rows.iter().find(|r| r.spec == *spec)
    }

    /// Long format: `G,D,mode,loglik,k,k_star,bic,bic_star,converged`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "G",
            "D",
            "mode",
            "loglik",
            "k",
            "k_star",
            "bic",
            "bic_star",
            "converged",
        ])
        .map_err(std::io::Error::from)?;
        for r in &self.rows {
            w.write_record([
                r.spec.groups.to_string(),
                r.spec.dim.to_string(),
                r.spec.slope_mode.as_str().to_string(),
                cell(r.loglik),
                r.k.to_string(),
                r.k_star.to_string(),
                cell(r.bic),
                cell(r.bic_star),
                r.converged.to_string(),
            ])
            .map_err(std::io::Error::from)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Wide format with one row per G and one column per (D, mode), holding
    /// the chosen criterion.
    pub fn write_table_csv<W: Write>(&self, out: W, criterion: Criterion) -> Result<()> {
        let mut groups: Vec<usize> = self.rows.iter().map(|r| r.spec.groups).collect();
        groups.sort_unstable();
        groups.dedup();
        let mut columns: Vec<(usize, SlopeMode)> = Vec::new();
        for r in &self.rows {
            let c = (r.spec.dim, r.spec.slope_mode);
            if !columns.contains(&c) {
                columns.push(c);
            }
        }
        columns.sort_by_key(|&(d, m)| (d, m == SlopeMode::Common));
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["G".to_string()];
        header.extend(columns.iter().map(|(d, m)| format!("D{d}_{}", m.as_str())));
        w.write_record(&header).map_err(std::io::Error::from)?;
        for g in groups {
            let mut rec = vec![g.to_string()];
            for &(d, m) in &columns {
                let value = self.row(&ModelSpec::new(g, d, m)).and_then(|r| criterion.of(r));
                rec.push(cell(value));
            }
            w.write_record(&rec).map_err(std::io::Error::from)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn common_cells_are_skipped_where_redundant() {
        let specs = grid_specs(&[1, 2], &[0, 1], &[SlopeMode::Free, SlopeMode::Common]);
        assert_eq!(
            specs,
            vec![
                ModelSpec::free(1, 0),
                ModelSpec::free(1, 1),
                ModelSpec::free(2, 0),
                ModelSpec::free(2, 1),
                ModelSpec::common(2, 1),
            ]
        );
    }
}
