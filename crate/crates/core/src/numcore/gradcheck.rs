use super::{Graph, NumError, ParamId, ParamStore, Var};

/// Largest relative disagreement between backprop gradients and central finite
/// differences over every coordinate of `params`:
/// `|analytic - fd| / max(1e-8, |analytic| + |fd|)`.
///
/// `build` must be deterministic in the parameter values and return a scalar loss.
pub fn grad_check<F>(store: &mut ParamStore, params: &[ParamId], step: f64, build: F) -> Result<f64, NumError>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var, NumError>,
{
    let mut graph = Graph::new();
    let loss = build(&mut graph, store)?;
    graph.backward(loss, store)?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|&id| store.get(id).grad().map(<[f64]>::to_vec).unwrap_or_default())
        .collect();

    let eval = |store: &ParamStore| -> Result<f64, NumError> {
        let mut g = Graph::new();
        let l = build(&mut g, store)?;
        g.scalar(l)
    };

    let mut worst = 0.0f64;
    for (&id, grad) in params.iter().zip(&analytic) {
        for i in 0..store.get(id).len() {
            let orig = store.get(id).values()[i];
            store.get_mut(id).values_mut()[i] = orig + step;
            let up = eval(store);
            store.get_mut(id).values_mut()[i] = orig - step;
            let down = eval(store);
            store.get_mut(id).values_mut()[i] = orig;
            let fd = (up? - down?) / (2.0 * step);
            let a = grad[i];
            let rel = (a - fd).abs() / (a.abs() + fd.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    store.clear_grads();
    Ok(worst)
}
