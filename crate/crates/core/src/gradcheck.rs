//! Central finite-difference verification of reverse-mode gradients.

use crate::error::{CoreError, Result};
use crate::graph::{NodeId, Tape};
use crate::param::ParamStore;
use crate::rng;
use rand::seq::SliceRandom;

/// Default perturbation step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Resolution floor of a 64-bit central difference: rounding of the loss
/// itself injects roughly `eps * |f| / (2h)` of noise into the quotient,
/// so gradient entries smaller than this cannot be distinguished from
/// zero. Entries where analytic and numeric values both sit below the
/// floor are counted as agreeing.
pub const FD_RESOLUTION: f64 = 1e-6;

/// Compare analytic gradients against central differences on up to
/// `samples` randomly chosen parameter entries.
///
/// `build` must record the full forward pass on the tape and return the
/// scalar loss node; it is evaluated twice at the unperturbed point first,
/// and any disagreement is reported as a determinism error. Returns the
/// maximum relative error `|analytic - cd| / max(|analytic|, |cd|, 1e-8)`
/// over entries at or above [`FD_RESOLUTION`].
pub fn gradient_check<F>(
    store: &mut ParamStore,
    mut build: F,
    samples: usize,
    h: f64,
    seed: u64,
) -> Result<f64>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<NodeId>,
{
    if h <= 0.0 {
        return Err(CoreError::Contract(format!("step h must be positive, got {h}")));
    }

    let eval = |store: &ParamStore, build: &mut F| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = build(&mut tape, store)?;
        tape.value(loss).as_scalar()
    };

    let first = eval(store, &mut build)?;
    let second = eval(store, &mut build)?;
    if first.to_bits() != second.to_bits() {
        return Err(CoreError::NonDeterministic { first, second });
    }

    store.zero_grads();
    {
        let mut tape = Tape::new();
        let loss = build(&mut tape, store)?;
        tape.backward(loss, store)?;
    }
    let analytic: Vec<Vec<f64>> = store.ids().map(|id| store.grad(id).data().to_vec()).collect();

    let mut entries: Vec<(usize, usize)> = Vec::new();
    for (pi, id) in store.ids().enumerate() {
        for ei in 0..store.value(id).data().len() {
            entries.push((pi, ei));
        }
    }
    if entries.len() > samples {
        let mut rng = rng::stream(seed, "gradcheck");
        entries.shuffle(&mut rng);
        entries.truncate(samples);
    }

    let mut max_rel = 0.0f64;
    for (pi, ei) in entries {
        let id = store.ids().nth(pi).expect("entry index in range");
        let original = store.value(id).data()[ei];

        store.get_mut(id).value.data_mut()[ei] = original + h;
        let f_plus = eval(store, &mut build)?;
        store.get_mut(id).value.data_mut()[ei] = original - h;
        let f_minus = eval(store, &mut build)?;
        store.get_mut(id).value.data_mut()[ei] = original;

        let cd = (f_plus - f_minus) / (2.0 * h);
        let a = analytic[pi][ei];
        if a.abs() < FD_RESOLUTION && cd.abs() < FD_RESOLUTION {
            continue;
        }
        let rel = (a - cd).abs() / a.abs().max(cd.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}
