//! Which activation pattern each selected tuple is assumed to come from.
//!
//! Layer `i` neuron `j` is recovered from a region where layer `i` has only
//! neuron `j` active and every upstream layer is fully active. Downstream
//! layers are fully active in the strict plan; the relaxed plan lets them take
//! any non-empty pattern. The output slot uses the all-active region.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Error;
use crate::model::{ActivationPattern, Architecture};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlanMode {
    #[default]
    Strict,
    Relaxed,
}

/// One of the `n + 1` positions a recovered tuple is assigned to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    /// 1-based layer; `k + 1` is the output layer.
    pub layer: usize,
    /// 0-based neuron within the layer.
    pub neuron: usize,
}

/// Slots in enumeration order: layer 1 neurons, ..., layer `k` neurons, output.
pub fn slots(arch: &Architecture) -> Vec<Slot> {
    let mut out = Vec::with_capacity(arch.neurons() + 1);
    for (i, &d) in arch.hidden().iter().enumerate() {
        out.extend((0..d).map(|j| Slot {
            layer: i + 1,
            neuron: j,
        }));
    }
    out.push(Slot {
        layer: arch.depth() + 1,
        neuron: 0,
    });
    out
}

/// Widest layer for which relaxed downstream patterns are enumerated.
pub const MAX_RELAXED_WIDTH: usize = 16;

/// Number of downstream pattern choices for a slot in `layer`.
pub fn downstream_options(
    arch: &Architecture,
    layer: usize,
    mode: PlanMode,
) -> Result<usize, Error> {
    if mode == PlanMode::Strict {
        return Ok(1);
    }
    let mut total = 1usize;
    for &d in arch.hidden().iter().skip(layer) {
        if d > MAX_RELAXED_WIDTH {
            return Err(Error::InvalidConfig("layer too wide for relaxed plans"));
        }
        total = total
            .checked_mul((1usize << d) - 1)
            .ok_or(Error::InvalidConfig("too many relaxed plan options"))?;
    }
    Ok(total)
}

/// Pattern assumed for `slot` under downstream choice `option`
/// (`0` is always the fully active choice).
pub fn slot_pattern(arch: &Architecture, slot: Slot, option: usize) -> ActivationPattern {
    let hidden = arch.hidden();
    let mut layers: Vec<Vec<bool>> = hidden.iter().map(|&d| vec![true; d]).collect();
    if slot.layer <= hidden.len() {
        let row = &mut layers[slot.layer - 1];
        row.iter_mut()
            .enumerate()
            .for_each(|(j, b)| *b = j == slot.neuron);
        let mut rest = option;
        for q in slot.layer..hidden.len() {
            let d = hidden[q];
            let radix = (1usize << d) - 1;
            let full = radix;
            let mask = full - rest % radix;
            rest /= radix;
            layers[q] = (0..d).map(|j| mask >> j & 1 == 1).collect();
        }
    }
    ActivationPattern { layers }
}
