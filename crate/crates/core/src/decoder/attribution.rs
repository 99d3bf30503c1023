use serde::{Deserialize, Serialize};

use crate::model::{DelayModel, ItemId, WorkerSession};

/// Keypresses whose best candidate density falls below this are unattributed.
pub const MIN_LIKELIHOOD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionWeight {
    pub keypress: usize,
    pub slot: usize,
    pub item_id: ItemId,
    pub weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub weights: Vec<AttributionWeight>,
    pub unattributed: Vec<usize>,
    /// Sum of candidate densities per keypress, zero when unattributed.
    pub total_likelihood: Vec<f64>,
}

impl Attribution {
    /// Weights of one keypress.
    pub fn for_keypress(&self, keypress: usize) -> impl Iterator<Item = &AttributionWeight> {
        self.weights.iter().filter(move |w| w.keypress == keypress)
    }
}

/// Spreads each keypress over the items shown in the `lookback_ms` before it,
/// proportionally to the delay density.
pub fn attribute_keypresses(
    session: &WorkerSession,
    delay: &DelayModel,
    lookback_ms: f64,
) -> Attribution {
    let onsets = session.onsets();
    let mut out = Attribution {
        total_likelihood: vec![0.0; session.events.len()],
        ..Attribution::default()
    };
    let mut likelihoods: Vec<(usize, f64)> = Vec::new();

    for (k, event) in session.events.iter().enumerate() {
        likelihoods.clear();
        likelihoods.extend(onsets.iter().enumerate().filter_map(|(j, &t)| {
            let d = event.t_ms - t;
            (0.0..=lookback_ms).contains(&d).then(|| (j, delay.pdf(d)))
        }));

        let best = likelihoods.iter().map(|&(_, l)| l).fold(0.0, f64::max);
        if best < MIN_LIKELIHOOD {
            out.unattributed.push(k);
            continue;
        }
        let total: f64 = likelihoods.iter().map(|&(_, l)| l).sum();
        out.total_likelihood[k] = total;
        out.weights
            .extend(likelihoods.iter().map(|&(j, l)| AttributionWeight {
                keypress: k,
                slot: j,
                item_id: session.stream.slots[j].item_id.clone(),
                weight: l / total,
            }));
    }
    out
}
