//! A single entry point over every reconciliation method.

use crate::covariance::ResidualPanel;
use crate::hierarchy::{Hierarchy, StructureMatrix};
use crate::mintit::{mintit, CovarianceMode, MinTitConfig, MinTitDiagnostics};
use crate::reconcilers::{make_reconciler, reconcile, ForecastPanel, Method};
use crate::scalar::Real;
use crate::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct Reconciled<T: Real> {
    pub forecasts: ForecastPanel<T>,
    pub mintit: Option<MinTitDiagnostics>,
}

/// Reconciles `f` with `method`. `cfg` is used only by the iterative
/// methods, whose covariance mode is fixed by the method itself.
pub fn reconcile_with<T: Real>(
    method: Method,
    h: &Hierarchy,
    s: &StructureMatrix<T>,
    f: &ForecastPanel<T>,
    residuals: Option<&ResidualPanel<T>>,
    cfg: &MinTitConfig<T>,
) -> Result<Reconciled<T>, Error> {
    if method.is_iterative() {
        let r = residuals.ok_or(crate::reconcilers::ReconcileError::MissingResiduals(method))?;
        let mode = if method == Method::MintitGlobal {
            CovarianceMode::Global
        } else {
            CovarianceMode::Local
        };
        let cfg = MinTitConfig { mode, ..cfg.clone() };
        let out = mintit(f, r, h, &cfg)?;
        let diagnostics = out.diagnostics();
        return Ok(Reconciled {
            forecasts: out.forecasts,
            mintit: Some(diagnostics),
        });
    }
    let g = make_reconciler(method, s, residuals)?;
    Ok(Reconciled {
        forecasts: reconcile(f, &g, s)?,
        mintit: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::build_structure_matrix;
    use crate::testutil::{lcg, two_level};
    use nalgebra::DMatrix;

    #[test]
    fn every_method_returns_coherent_forecasts() {
        let h = two_level();
        let s = build_structure_matrix::<f64>(&h);
        let f = ForecastPanel::new(DMatrix::from_vec(8, 2, lcg(5, 16))).unwrap();
        let r = ResidualPanel::complete(DMatrix::from_vec(30, 8, lcg(9, 240))).unwrap();
        for method in Method::ALL {
            let out = reconcile_with(method, &h, &s, &f, Some(&r), &MinTitConfig::default()).unwrap();
            assert_eq!(out.mintit.is_some(), method.is_iterative());
            let v = out.forecasts.values();
            for j in 0..2 {
                assert!((v[(0, j)] - v[(1, j)] - v[(2, j)]).abs() < 1e-10, "{method}");
            }
        }
    }

    #[test]
    fn residual_methods_need_residuals() {
        let h = two_level();
        let s = build_structure_matrix::<f64>(&h);
        let f = ForecastPanel::new(DMatrix::from_vec(8, 1, lcg(5, 8))).unwrap();
        let cfg = MinTitConfig::default();
        assert!(reconcile_with(Method::BottomUp, &h, &s, &f, None, &cfg).is_ok());
        assert!(reconcile_with(Method::WlsStructural, &h, &s, &f, None, &cfg).is_ok());
        for m in [Method::WlsVariance, Method::MintShrink, Method::MintitLocal] {
            assert!(reconcile_with(m, &h, &s, &f, None, &cfg).is_err(), "{m}");
        }
    }
}
