use crate::autodiff::{ParamStore, Tape, Var};

/// Compares backward-pass parameter gradients against central differences
/// (h = 1e-5) on up to `per_param` evenly spaced entries of every parameter.
/// Returns the worst relative error seen.
pub(crate) fn param_grad_error(
    store: &ParamStore,
    per_param: usize,
    loss: impl Fn(&mut Tape, &ParamStore) -> Var,
) -> f64 {
    let mut work = store.clone();
    work.zero_grad();
    let mut tape = Tape::new();
    let l = loss(&mut tape, &work);
    tape.backward(l, &mut work).unwrap();
    let analytic: Vec<Vec<f64>> = work
        .ids()
        .map(|id| work.grad(id).map(|g| g.data().to_vec()).unwrap_or_default())
        .collect();
    work.zero_grad();

    let eval = |s: &ParamStore| {
        let mut t = Tape::new();
        let l = loss(&mut t, s);
        t.value(l).item()
    };
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let ids: Vec<_> = work.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let n = work.value(id).data().len();
        let stride = (n / per_param).max(1);
        for j in (0..n).step_by(stride).take(per_param) {
            let orig = work.value(id).data()[j];
            work.value_mut(id).data_mut()[j] = orig + h;
            let fp = eval(&work);
            work.value_mut(id).data_mut()[j] = orig - h;
            let fm = eval(&work);
            work.value_mut(id).data_mut()[j] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[k].get(j).copied().unwrap_or(0.0);
            let err = (a - numeric).abs() / (a.abs().max(numeric.abs()) + 1e-6);
            worst = worst.max(err);
        }
    }
    worst
}
