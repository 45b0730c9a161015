use super::{Graph, NumError, Tensor};

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// `(param, component)` with the largest relative error.
    pub worst: Option<(String, usize)>,
    pub components: usize,
}

/// Smallest magnitude used as the denominator of the relative error, so
/// components whose true gradient is ~0 are compared absolutely.
pub const REL_ERR_FLOOR: f64 = 1e-3;

/// Maximum relative error between analytic and central-difference gradients
/// over every parameter component.
///
/// Relative error is `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`. Inputs are the
/// bindings of the last `evaluate` call.
pub fn check_gradients(graph: &mut Graph, h: f64) -> Result<f64, NumError> {
    check_gradients_report(graph, h).map(|r| r.max_rel_err)
}

pub fn check_gradients_report(graph: &mut Graph, h: f64) -> Result<GradCheckReport, NumError> {
    if !(h.is_finite() && h > 0.0) {
        return Err(NumError::Config(format!("step must be > 0, got {h}")));
    }
    let bindings = graph.last_bindings().clone();
    graph.evaluate(&bindings)?;
    let analytic = graph.gradients()?;
    let loss = graph.loss_node().ok_or(NumError::NoLoss)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst: None,
        components: 0,
    };
    let names: Vec<String> = graph.param_names().map(str::to_string).collect();
    for name in names {
        let original = graph.param_value(&name).expect("listed param").clone();
        for i in 0..original.len() {
            let mut eval_at = |delta: f64| -> Result<f64, NumError> {
                let mut data = original.data().to_vec();
                data[i] += delta;
                graph.set_param(&name, Tensor::new(original.shape().to_vec(), data)?)?;
                graph.evaluate(&bindings)?;
                Ok(graph.value(loss).expect("evaluated").item())
            };
            let plus = eval_at(h)?;
            let minus = eval_at(-h)?;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[&name].data()[i];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
            report.components += 1;
            report.max_abs_err = report.max_abs_err.max(abs);
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(rel);
                report.worst = Some((name.clone(), i));
            }
        }
        graph.set_param(&name, original)?;
    }
    graph.evaluate(&bindings)?;
    Ok(report)
}
