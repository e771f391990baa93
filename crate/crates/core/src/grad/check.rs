use super::{GradError, Graph, Result, Tensor, Var};

/// Analytic versus numeric gradient of one input, compared as whole vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputCheck {
    /// Euclidean norm of the analytic gradient.
    pub analytic_norm: f64,
    /// Euclidean norm of the finite-difference gradient.
    pub numeric_norm: f64,
    /// `|a - n| / max(|a|, |n|, 1e-12)`.
    pub rel: f64,
}

/// Largest relative error between analytic gradients of the scalar function
/// `f` at `x` and a fourth-order five-point central difference with step `h`.
/// A probe that changes which relu inputs are positive makes the difference
/// meaningless, so it fails with [`GradError::KinkCrossed`].
pub fn grad_check(f: impl Fn(&mut Graph, Var) -> Result<Var>, x: &Tensor, h: f64) -> Result<f64> {
    grad_check_with(|g, vars| f(g, vars[0]), std::slice::from_ref(x), h)
}

/// Multi-input variant of [`grad_check`]; the result is the worst error over
/// all inputs.
pub fn grad_check_with(
    f: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
    inputs: &[Tensor],
    h: f64,
) -> Result<f64> {
    Ok(grad_compare(f, inputs, h)?.iter().fold(0.0, |m, c| m.max(c.rel)))
}

/// Per-input comparison behind [`grad_check_with`].
pub fn grad_compare(
    f: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
    inputs: &[Tensor],
    h: f64,
) -> Result<Vec<InputCheck>> {
    let eval = |values: &[Tensor]| -> Result<(f64, Vec<bool>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok((g.value(out).item(), g.relu_pattern()))
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = f(&mut g, &vars)?;
    let pattern = g.relu_pattern();
    g.backward(loss)?;

    let mut checks = Vec::with_capacity(inputs.len());
    let mut probe = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let analytic = g
            .grad(vars[k])
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; input.numel()]);
        let mut diff = 0.0;
        let mut na = 0.0;
        let mut nn = 0.0;
        for i in 0..input.numel() {
            let orig = input.data()[i];
            let mut at = |delta: f64| -> Result<f64> {
                probe[k].data_mut()[i] = orig + delta;
                let (value, p) = eval(&probe)?;
                if p != pattern {
                    return Err(GradError::KinkCrossed { input: k, index: i });
                }
                Ok(value)
            };
            let numeric = (8.0 * (at(h)? - at(-h)?) - (at(2.0 * h)? - at(-2.0 * h)?)) / (12.0 * h);
            probe[k].data_mut()[i] = orig;
            diff += (analytic[i] - numeric).powi(2);
            na += analytic[i].powi(2);
            nn += numeric.powi(2);
        }
        let (na, nn) = (na.sqrt(), nn.sqrt());
        checks.push(InputCheck {
            analytic_norm: na,
            numeric_norm: nn,
            rel: diff.sqrt() / na.max(nn).max(1e-12),
        });
    }
    Ok(checks)
}
