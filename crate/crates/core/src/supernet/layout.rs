use std::ops::Range;

use super::SupernetConfig;

/// A named contiguous block of the flat weight vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Weight slots of one stacked cell. `ops[edge][op]` is `Some((weight, bias))`
/// for parametric ops.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSlots {
    pub ops: Vec<Vec<Option<(Slot, Slot)>>>,
    pub proj: Slot,
}

/// Offsets of every parameter tensor inside the flat `ω` vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub stem_w: Slot,
    pub stem_b: Slot,
    pub layers: Vec<LayerSlots>,
    pub head_w: Slot,
    pub head_b: Slot,
    slots: Vec<Slot>,
    total: usize,
}

impl ParamLayout {
    pub fn new(config: &SupernetConfig) -> Self {
        let width = config.cell.feature_width();
        let mut slots = Vec::new();
        let mut offset = 0;
        let mut alloc = |name: String, shape: Vec<usize>| {
            let slot = Slot { name, offset, shape };
            offset += slot.len();
            slots.push(slot.clone());
            slot
        };

        let stem_w = alloc("stem.w".into(), vec![config.input_dim, width]);
        let stem_b = alloc("stem.b".into(), vec![width]);
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let mut ops = Vec::with_capacity(config.cell.num_edges());
            for e in 0..config.cell.num_edges() {
                let per_edge = config
                    .cell
                    .ops()
                    .iter()
                    .map(|op| {
                        op.is_parametric().then(|| {
                            (
                                alloc(format!("layer{l}.e{e}.{op}.w"), vec![width, width]),
                                alloc(format!("layer{l}.e{e}.{op}.b"), vec![width]),
                            )
                        })
                    })
                    .collect();
                ops.push(per_edge);
            }
            let proj = alloc(format!("layer{l}.proj"), vec![width, width]);
            layers.push(LayerSlots { ops, proj });
        }
        let head_w = alloc("head.w".into(), vec![width, config.num_classes]);
        let head_b = alloc("head.b".into(), vec![config.num_classes]);
        Self {
            stem_w,
            stem_b,
            layers,
            head_w,
            head_b,
            slots,
            total: offset,
        }
    }

    /// All slots in storage order.
    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn total(&self) -> usize {
        self.total
    }
}
