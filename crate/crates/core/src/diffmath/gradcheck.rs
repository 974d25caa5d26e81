use super::{ParamStore, Result, Tape, Var};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor so gradients near zero are compared absolutely.
    pub floor: f64,
    /// Check at most this many elements per parameter (evenly strided); 0 = all.
    pub max_elems: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            max_elems: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.params.iter().fold(0.0, |m, p| m.max(p.max_rel_error))
    }

    pub fn passed(&self) -> bool {
        self.max_error() < self.tolerance
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// Relative error with a floor on the denominator.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares reverse-mode gradients of `f` against central differences for
/// every trainable parameter. `f` records a scalar loss on the tape it is
/// given and must be deterministic.
pub fn grad_check<F>(store: &ParamStore, f: F, cfg: GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let grads = tape.backward(loss)?;
    drop(tape);

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let l = f(&mut t, s)?;
        Ok(t.value(l).item())
    };

    let mut work = store.clone();
    let mut params = Vec::new();
    for id in store.trainable_ids() {
        let analytic = grads.get_or_zero(store, id);
        let numel = analytic.numel();
        let stride = if cfg.max_elems == 0 || numel <= cfg.max_elems {
            1
        } else {
            numel.div_ceil(cfg.max_elems)
        };
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        for k in (0..numel).step_by(stride) {
            let orig = store.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = orig + cfg.step;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[k] = orig - cfg.step;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            worst = worst.max(relative_error(analytic.data()[k], numeric, cfg.floor));
            checked += 1;
        }
        params.push(ParamCheck {
            name: store.name(id).to_string(),
            checked,
            max_rel_error: worst,
        });
    }
    Ok(GradCheckReport {
        params,
        tolerance: cfg.tolerance,
    })
}
